use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rust_decimal::prelude::FromPrimitive;
use rust_decimal::Decimal;
use serde::{Deserialize, Serialize};

use super::QaError;

pub const MOISTURE_RANGE: (f64, f64) = (0.0, 40.0);

/// Device profile config: `{device_id, bias, noise_sd, seed}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviceProfile {
    pub device_id: String,
    pub bias: f64,
    pub noise_sd: f64,
    pub seed: u64,
}

/// A moisture reading, tagged so an auditor can regenerate it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MoistureReading {
    pub device_id: String,
    pub seed: u64,
    pub sequence: u64,
    /// Percent, at the instrument's 4-digit resolution.
    pub value: Decimal,
}

/// Simulated moisture analyzer. One per logical device.
#[derive(Debug, Clone)]
pub struct MoistureAnalyzer {
    profile: DeviceProfile,
    rng: ChaCha8Rng,
    sequence: u64,
}

impl MoistureAnalyzer {
    pub fn new(profile: DeviceProfile) -> Self {
        let rng = ChaCha8Rng::seed_from_u64(profile.seed);
        MoistureAnalyzer { profile, rng, sequence: 0 }
    }

    pub fn profile(&self) -> &DeviceProfile {
        &self.profile
    }

    pub fn read(&mut self, true_moisture: f64) -> Result<MoistureReading, QaError> {
        let (lo, hi) = MOISTURE_RANGE;
        if !(lo..=hi).contains(&true_moisture) {
            return Err(QaError::OutOfRange { value: true_moisture, min: lo, max: hi });
        }
        // Draw even when noise_sd is zero so the sequence does not depend on it.
        let z: f64 = StandardNormal.sample(&mut self.rng);
        let raw = true_moisture + self.profile.bias + z * self.profile.noise_sd;
        let value = Decimal::from_f64(raw)
            .ok_or(QaError::OutOfRange { value: raw, min: lo, max: hi })?
            .round_dp_with_strategy(4, rust_decimal::RoundingStrategy::MidpointNearestEven);
        let reading = MoistureReading {
            device_id: self.profile.device_id.clone(),
            seed: self.profile.seed,
            sequence: self.sequence,
            value,
        };
        self.sequence += 1;
        Ok(reading)
    }
}

pub fn moisture_read(device: &mut MoistureAnalyzer, true_moisture: f64) -> Result<MoistureReading, QaError> {
    device.read(true_moisture)
}
