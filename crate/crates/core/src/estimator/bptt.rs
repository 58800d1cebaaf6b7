//! Backpropagation through time for the single-layer LSTM.

use super::{gate_preactivations, head, sigmoid, LstmModel, LstmParams, INPUT_SIZE};
use crate::dataset::Frame;

/// Activations recorded by a forward pass, laid out `[t * H + j]`.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub frames: Vec<Frame>,
    gates: [Vec<f64>; 4],
    c: Vec<f64>,
    tanh_c: Vec<f64>,
    h: Vec<f64>,
    /// Head output.
    pub output: f64,
}

impl ForwardCache {
    /// Same arithmetic, in the same order, as [`LstmModel::run`].
    pub fn record(model: &LstmModel, frames: &[Frame]) -> Self {
        let n = model.hidden();
        let steps = frames.len();
        let p = &model.params;
        let mut gates: [Vec<f64>; 4] = std::array::from_fn(|_| Vec::with_capacity(steps * n));
        let mut c_all = Vec::with_capacity(steps * n);
        let mut tanh_all = Vec::with_capacity(steps * n);
        let mut h_all = Vec::with_capacity(steps * n);
        let mut h = vec![0.0; n];
        let mut c = vec![0.0; n];
        let mut z = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for x in frames {
            gate_preactivations(p, x, &h, &mut z);
            for j in 0..n {
                let i = sigmoid(z[0][j]);
                let f = sigmoid(z[1][j]);
                let g = z[2][j].tanh();
                let o = sigmoid(z[3][j]);
                c[j] = f * c[j] + i * g;
                let tc = c[j].tanh();
                h[j] = o * tc;
                gates[0].push(i);
                gates[1].push(f);
                gates[2].push(g);
                gates[3].push(o);
                tanh_all.push(tc);
            }
            c_all.extend_from_slice(&c);
            h_all.extend_from_slice(&h);
        }
        let output = head(p, &h);
        Self {
            frames: frames.to_vec(),
            gates,
            c: c_all,
            tanh_c: tanh_all,
            h: h_all,
            output,
        }
    }
}

/// Gradient of a loss with respect to every parameter, given `d_output`,
/// the derivative of the loss with respect to the head output.
pub fn backward(model: &LstmModel, cache: &ForwardCache, d_output: f64) -> LstmParams {
    let n = model.hidden();
    let p = &model.params;
    let steps = cache.frames.len();
    let mut grad = LstmParams::zeros(n);

    let y = cache.output;
    let dz_out = d_output * y * (1.0 - y);
    grad.b_out = dz_out;
    let mut dh = vec![0.0; n];
    if steps > 0 {
        let h_last = &cache.h[(steps - 1) * n..steps * n];
        for j in 0..n {
            grad.w_out[j] = dz_out * h_last[j];
            dh[j] = dz_out * p.w_out[j];
        }
    }

    let mut dc = vec![0.0; n];
    let mut dz: [Vec<f64>; 4] = std::array::from_fn(|_| vec![0.0; n]);
    let zeros = vec![0.0; n];
    for t in (0..steps).rev() {
        let [i, f, g, o] = cache.gates.each_ref().map(|v| &v[t * n..(t + 1) * n]);
        let tc = &cache.tanh_c[t * n..(t + 1) * n];
        let c_prev = if t > 0 { &cache.c[(t - 1) * n..t * n] } else { &zeros[..] };
        let h_prev = if t > 0 { &cache.h[(t - 1) * n..t * n] } else { &zeros[..] };

        for j in 0..n {
            let d_o = dh[j] * tc[j];
            dc[j] += dh[j] * o[j] * (1.0 - tc[j] * tc[j]);
            let d_i = dc[j] * g[j];
            let d_g = dc[j] * i[j];
            let d_f = dc[j] * c_prev[j];
            dz[0][j] = d_i * i[j] * (1.0 - i[j]);
            dz[1][j] = d_f * f[j] * (1.0 - f[j]);
            dz[2][j] = d_g * (1.0 - g[j] * g[j]);
            dz[3][j] = d_o * o[j] * (1.0 - o[j]);
            dc[j] *= f[j];
        }

        let x = &cache.frames[t];
        for gate in 0..4 {
            let dzg = &dz[gate];
            let gw = &mut grad.w[gate];
            let gu = &mut grad.u[gate];
            let gb = &mut grad.b[gate];
            for j in 0..n {
                let d = dzg[j];
                let row = &mut gw[j * INPUT_SIZE..(j + 1) * INPUT_SIZE];
                row[0] += d * x[0];
                row[1] += d * x[1];
                row[2] += d * x[2];
                let urow = &mut gu[j * n..(j + 1) * n];
                for k in 0..n {
                    urow[k] += d * h_prev[k];
                }
                gb[j] += d;
            }
        }

        // dh_{t-1} = sum_g U_g^T dz_g
        for v in dh.iter_mut() {
            *v = 0.0;
        }
        for gate in 0..4 {
            let u = &p.u[gate];
            for j in 0..n {
                let d = dz[gate][j];
                let urow = &u[j * n..(j + 1) * n];
                for k in 0..n {
                    dh[k] += urow[k] * d;
                }
            }
        }
    }
    grad
}

/// Squared error `(y - target)^2` of one window and its gradient.
pub fn loss_and_gradient(model: &LstmModel, frames: &[Frame], target: f64) -> (f64, LstmParams) {
    let cache = ForwardCache::record(model, frames);
    let err = cache.output - target;
    (err * err, backward(model, &cache, 2.0 * err))
}
