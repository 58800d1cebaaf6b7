//! JSON model file. Every float is stored as the 16-digit hex encoding of
//! its IEEE 754 bit pattern, so save/load is bit-exact.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Gate, LstmModel, LstmParams, ModelError, INPUT_SIZE};
use crate::dataset::{Channel, ChannelBounds, NormalizationBounds};

pub const MODEL_MAGIC: &str = "SOCLAB-LSTM";
pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct ModelFile {
    magic: String,
    version: u32,
    hidden_size: usize,
    window_length: usize,
    /// Records how the bounds were obtained.
    normalization: String,
    bounds: BTreeMap<String, [String; 2]>,
    weights: BTreeMap<String, Vec<String>>,
}

fn hex(v: f64) -> String {
    format!("{:016x}", v.to_bits())
}

fn unhex(s: &str) -> Result<f64, ModelError> {
    if s.len() != 16 {
        return Err(ModelError::BadFormat(format!("'{s}' is not a 64-bit hex word")));
    }
    u64::from_str_radix(s, 16)
        .map(f64::from_bits)
        .map_err(|_| ModelError::BadFormat(format!("'{s}' is not a 64-bit hex word")))
}

fn weight_arrays(p: &LstmParams) -> Vec<(String, &[f64])> {
    let mut out = Vec::new();
    for gate in Gate::ALL {
        let g = gate as usize;
        out.push((format!("W_{}", gate.suffix()), &p.w[g][..]));
        out.push((format!("U_{}", gate.suffix()), &p.u[g][..]));
        out.push((format!("b_{}", gate.suffix()), &p.b[g][..]));
    }
    out.push(("w_out".to_string(), &p.w_out[..]));
    out.push(("b_out".to_string(), std::slice::from_ref(&p.b_out)));
    out
}

pub fn write_model<W: Write>(model: &LstmModel, mut writer: W) -> Result<(), ModelError> {
    model.validate()?;
    let bounds = Channel::ALL
        .iter()
        .map(|&ch| {
            let b = model.bounds.get(ch);
            (ch.short().to_string(), [hex(b.min), hex(b.max)])
        })
        .collect();
    let weights = weight_arrays(&model.params)
        .into_iter()
        .map(|(name, values)| (name, values.iter().map(|&v| hex(v)).collect()))
        .collect();
    let file = ModelFile {
        magic: MODEL_MAGIC.to_string(),
        version: MODEL_FORMAT_VERSION,
        hidden_size: model.hidden(),
        window_length: model.window,
        normalization: "training-set min/max".to_string(),
        bounds,
        weights,
    };
    serde_json::to_writer_pretty(&mut writer, &file).map_err(|e| ModelError::Io(e.into()))?;
    writer.write_all(b"\n")?;
    Ok(())
}

pub fn read_model<R: Read>(reader: R) -> Result<LstmModel, ModelError> {
    let value: serde_json::Value =
        serde_json::from_reader(reader).map_err(|e| ModelError::BadFormat(format!("invalid JSON: {e}")))?;
    if value.get("magic").and_then(|m| m.as_str()) != Some(MODEL_MAGIC) {
        return Err(ModelError::BadFormat("missing or wrong magic".into()));
    }
    let file: ModelFile = serde_json::from_value(value).map_err(|e| ModelError::BadFormat(e.to_string()))?;
    if file.version != MODEL_FORMAT_VERSION {
        return Err(ModelError::UnsupportedVersion(file.version));
    }
    let h = file.hidden_size;
    if h == 0 || file.window_length == 0 {
        return Err(ModelError::ZeroSize);
    }

    let mut channels = [ChannelBounds { min: 0.0, max: 0.0 }; 3];
    for ch in Channel::ALL {
        let [lo, hi] = file
            .bounds
            .get(ch.short())
            .ok_or_else(|| ModelError::BadFormat(format!("missing bounds for {ch}")))?;
        channels[ch.index()] = ChannelBounds {
            min: unhex(lo)?,
            max: unhex(hi)?,
        };
    }
    let bounds = NormalizationBounds { channels };
    bounds.validate()?;

    let mut params = LstmParams::zeros(h);
    let expected: Vec<(String, usize)> = weight_arrays(&params)
        .into_iter()
        .map(|(name, v)| (name, v.len()))
        .collect();
    let mut flat = Vec::with_capacity(params.len());
    for (name, len) in &expected {
        let words = file
            .weights
            .get(name)
            .ok_or_else(|| ModelError::BadFormat(format!("missing weight array {name}")))?;
        if words.len() != *len {
            return Err(ModelError::ShapeMismatch(format!(
                "{name} has {} values, hidden size {h} needs {len}",
                words.len()
            )));
        }
        for w in words {
            flat.push(unhex(w)?);
        }
    }
    if let Some(extra) = file.weights.keys().find(|k| !expected.iter().any(|(n, _)| n == *k)) {
        return Err(ModelError::BadFormat(format!("unknown weight array {extra}")));
    }
    debug_assert_eq!(flat.len(), 4 * h * (INPUT_SIZE + h + 1) + h + 1);
    params.copy_from_slice(&flat);

    let model = LstmModel {
        window: file.window_length,
        params,
        bounds,
    };
    model.validate()?;
    Ok(model)
}

pub fn save_model(model: &LstmModel, path: impl AsRef<Path>) -> Result<(), ModelError> {
    let mut w = BufWriter::new(File::create(path)?);
    write_model(model, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<LstmModel, ModelError> {
    read_model(BufReader::new(File::open(path)?))
}
