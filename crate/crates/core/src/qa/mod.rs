//! Lab instrument simulators and the math behind them: strip-reader
//! quantification, moisture analysis, and sample-preparation checks.

mod curve;
mod moisture;
mod prep;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use curve::{
    crc16, curve_response, decode_curve_barcode, FourPl, Quantification, RangeFlag, StripLot, StripReading,
    BARCODE_TAG,
};
pub use moisture::{moisture_read, DeviceProfile, MoistureAnalyzer, MoistureReading, MOISTURE_RANGE};
pub use prep::{validate_prep, Dilution, PrepViolation, SamplePrep};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum QaError {
    #[error("degenerate curve: a equals d")]
    DegenerateCurve,
    #[error("bad curve: {0}")]
    BadCurve(String),
    #[error("bad barcode format: {0}")]
    BadFormat(String),
    #[error("barcode checksum mismatch: stated {expected:04x}, computed {actual:04x}")]
    BadChecksum { expected: u16, actual: u16 },
    #[error("value {value} outside [{min}, {max}]")]
    OutOfRange { value: f64, min: f64, max: f64 },
}

/// Strip reader profile, analogous to [`DeviceProfile`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReaderProfile {
    pub device_id: String,
    pub noise_sd: f64,
    pub seed: u64,
}

/// Simulated strip reader: reports the curve response of the true
/// concentration plus seeded Gaussian noise.
#[derive(Debug, Clone)]
pub struct StripReader {
    profile: ReaderProfile,
    rng: ChaCha8Rng,
}

impl StripReader {
    pub fn new(profile: ReaderProfile) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(profile.seed);
        StripReader { profile, rng }
    }

    pub fn read(&mut self, lot: &StripLot, true_concentration: f64, read_at: u64) -> StripReading {
        let z: f64 = StandardNormal.sample(&mut self.rng);
        StripReading {
            strip_lot_id: lot.strip_lot_id.clone(),
            raw_response: lot.curve.response(true_concentration) + z * self.profile.noise_sd,
            read_at,
        }
    }
}
