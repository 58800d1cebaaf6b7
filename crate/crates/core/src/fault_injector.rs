//! Pre-runtime software-implemented fault injection into IEEE 754 binary64
//! sensor streams.
//!
//! Bits are numbered MSB first: bit 1 is the sign, bits 2..=12 the exponent
//! and bits 13..=64 the significand.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Channel, Frame};

pub const SIGN_BIT: u8 = 1;
pub const EXPONENT_BITS: RangeInclusive<u8> = 2..=12;
pub const SIGNIFICAND_BITS: RangeInclusive<u8> = 13..=64;
/// Bits swept by default; the sign and top exponent bit are left out because
/// they can turn normalized inputs into values that overflow downstream.
pub const DEFAULT_BITS: RangeInclusive<u8> = 3..=64;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FaultError {
    #[error("bit index {0} outside 1..=64")]
    BitOutOfRange(u32),
    #[error("empty fault sweep: {0}")]
    EmptySweep(&'static str),
    #[error("cannot parse fault spec '{0}'")]
    Parse(String),
}

/// A validated bit position in `1..=64`, MSB first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct BitIndex(u8);

impl BitIndex {
    pub fn new(bit: u32) -> Result<Self, FaultError> {
        if (1..=64).contains(&bit) {
            Ok(Self(bit as u8))
        } else {
            Err(FaultError::BitOutOfRange(bit))
        }
    }

    pub fn get(self) -> u8 {
        self.0
    }

    pub fn mask(self) -> u64 {
        1u64 << (64 - self.0 as u32)
    }

    pub fn region(self) -> BitRegion {
        match self.0 {
            SIGN_BIT => BitRegion::Sign,
            b if EXPONENT_BITS.contains(&b) => BitRegion::Exponent,
            _ => BitRegion::Significand,
        }
    }
}

impl TryFrom<u32> for BitIndex {
    type Error = FaultError;

    fn try_from(v: u32) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<BitIndex> for u32 {
    fn from(b: BitIndex) -> u32 {
        b.0 as u32
    }
}

impl fmt::Display for BitIndex {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BitRegion {
    Sign,
    Exponent,
    Significand,
}

impl BitRegion {
    pub fn as_str(self) -> &'static str {
        match self {
            BitRegion::Sign => "sign",
            BitRegion::Exponent => "exponent",
            BitRegion::Significand => "significand",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum FaultMode {
    StuckAt0,
    StuckAt1,
    BitFlip,
}

impl FaultMode {
    pub const STUCK_AT: [FaultMode; 2] = [FaultMode::StuckAt0, FaultMode::StuckAt1];

    pub fn short(self) -> &'static str {
        match self {
            FaultMode::StuckAt0 => "SA0",
            FaultMode::StuckAt1 => "SA1",
            FaultMode::BitFlip => "FLIP",
        }
    }
}

impl fmt::Display for FaultMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.short())
    }
}

impl FromStr for FaultMode {
    type Err = FaultError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SA0" => Ok(FaultMode::StuckAt0),
            "SA1" => Ok(FaultMode::StuckAt1),
            "FLIP" | "BF" => Ok(FaultMode::BitFlip),
            _ => Err(FaultError::Parse(s.to_string())),
        }
    }
}

/// When the fault is active. Only whole-cycle (permanent) faults exist today.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum FaultScope {
    #[default]
    WholeCycle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FaultSpec {
    pub channel: Channel,
    pub bit: BitIndex,
    pub mode: FaultMode,
    #[serde(default)]
    pub scope: FaultScope,
}

impl FaultSpec {
    pub fn new(channel: Channel, bit: u32, mode: FaultMode) -> Result<Self, FaultError> {
        Ok(Self {
            channel,
            bit: BitIndex::new(bit)?,
            mode,
            scope: FaultScope::WholeCycle,
        })
    }

    pub fn apply(&self, value: f64) -> f64 {
        inject(value, self.bit, self.mode)
    }
}

/// Compact `<channel>:<bit>:<mode>` form, e.g. `V:11:SA1`.
impl fmt::Display for FaultSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}:{}", self.channel, self.bit, self.mode)
    }
}

impl FromStr for FaultSpec {
    type Err = FaultError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parse_err = || FaultError::Parse(s.to_string());
        let mut parts = s.split(':');
        let (Some(ch), Some(bit), Some(mode), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
            return Err(parse_err());
        };
        let channel: Channel = ch.parse().map_err(|_| parse_err())?;
        let bit: u32 = bit.trim().parse().map_err(|_| parse_err())?;
        FaultSpec::new(channel, bit, mode.parse()?)
    }
}

pub fn read_bit(value: f64, bit: u32) -> Result<u8, FaultError> {
    let bit = BitIndex::new(bit)?;
    Ok((value.to_bits() & bit.mask() != 0) as u8)
}

pub fn inject_bit(value: f64, bit: u32, mode: FaultMode) -> Result<f64, FaultError> {
    Ok(inject(value, BitIndex::new(bit)?, mode))
}

/// Infallible form of [`inject_bit`]. The result may be any bit pattern,
/// including infinities and NaNs.
#[inline]
pub fn inject(value: f64, bit: BitIndex, mode: FaultMode) -> f64 {
    let raw = value.to_bits();
    let mask = bit.mask();
    f64::from_bits(match mode {
        FaultMode::StuckAt0 => raw & !mask,
        FaultMode::StuckAt1 => raw | mask,
        FaultMode::BitFlip => raw ^ mask,
    })
}

/// A normalized frame sequence with one channel permanently faulted.
#[derive(Debug, Clone)]
pub struct CorruptedSeries<'a> {
    pub original: &'a [Frame],
    pub fault: FaultSpec,
    pub frames: Vec<Frame>,
}

impl CorruptedSeries<'_> {
    /// Original and corrupted values of the faulted channel.
    pub fn channel_pairs(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        let c = self.fault.channel.index();
        self.original.iter().zip(&self.frames).map(move |(o, f)| (o[c], f[c]))
    }

    /// True when the fault left every value bit-identical.
    pub fn is_identity(&self) -> bool {
        self.channel_pairs().all(|(o, f)| o.to_bits() == f.to_bits())
    }
}

pub fn corrupt_series<'a>(frames: &'a [Frame], fault: FaultSpec) -> CorruptedSeries<'a> {
    let c = fault.channel.index();
    let corrupted = frames
        .iter()
        .map(|f| {
            let mut out = *f;
            out[c] = fault.apply(f[c]);
            out
        })
        .collect();
    CorruptedSeries {
        original: frames,
        fault,
        frames: corrupted,
    }
}

/// Cross product of the sweep, ordered channel-major, then bit, then mode.
pub fn enumerate_campaign(
    channels: &[Channel],
    bits: RangeInclusive<u32>,
    modes: &[FaultMode],
) -> Result<Vec<FaultSpec>, FaultError> {
    if bits.is_empty() {
        return Err(FaultError::EmptySweep("bit range"));
    }
    BitIndex::new(*bits.start())?;
    BitIndex::new(*bits.end())?;
    if channels.is_empty() {
        return Err(FaultError::EmptySweep("channels"));
    }
    if modes.is_empty() {
        return Err(FaultError::EmptySweep("modes"));
    }
    let mut specs = Vec::with_capacity(channels.len() * bits.clone().count() * modes.len());
    for &channel in channels {
        for bit in bits.clone() {
            for &mode in modes {
                specs.push(FaultSpec::new(channel, bit, mode)?);
            }
        }
    }
    Ok(specs)
}

/// Default sweep: all three channels, bits 3..=64, stuck-at-0 and stuck-at-1.
pub fn default_campaign() -> Vec<FaultSpec> {
    let bits = *DEFAULT_BITS.start() as u32..=*DEFAULT_BITS.end() as u32;
    enumerate_campaign(&Channel::ALL, bits, &FaultMode::STUCK_AT).expect("default sweep is valid")
}

/// Bits at which every value of `values` already reads `polarity`.
pub fn uniform_bits(values: &[f64], polarity: u8) -> Vec<u32> {
    (1..=64)
        .filter(|&b| {
            let mask = 1u64 << (64 - b);
            !values.is_empty() && values.iter().all(|v| (v.to_bits() & mask != 0) as u8 == polarity)
        })
        .collect()
}
