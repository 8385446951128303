use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI};

use crate::channel::{ArrayDims, BlockageConfig, GridBounds, Room};
use crate::dbm_to_watts;
use crate::error::{Error, Result};
use crate::geometry::{Orientation, Pose};

pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Half-open sampling ranges `[lo, hi)` for the UT orientation; `lo == hi`
/// pins the angle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientationRanges {
    pub alpha: [f64; 2],
    pub beta: [f64; 2],
    pub gamma: [f64; 2],
}

impl OrientationRanges {
    pub fn fixed(o: Orientation) -> Self {
        Self { alpha: [o.alpha; 2], beta: [o.beta; 2], gamma: [o.gamma; 2] }
    }

    pub fn as_array(&self) -> [[f64; 2]; 3] {
        [self.alpha, self.beta, self.gamma]
    }
}

impl Default for OrientationRanges {
    fn default() -> Self {
        Self { alpha: [-PI, PI], beta: [-FRAC_PI_4, FRAC_PI_4], gamma: [-FRAC_PI_4, FRAC_PI_4] }
    }
}

/// Everything needed to synthesize a dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub room: Room,
    pub ap_array: ArrayDims,
    pub ut_array: ArrayDims,
    pub tx_power_dbm: f64,
    pub noise_power_dbm: f64,
    pub max_order: usize,
    pub blockage: BlockageConfig,
    pub orientation: OrientationRanges,
}

impl ScenarioConfig {
    /// 7 x 7 x 3 m living room at 60 GHz, AP mid-wall at `(7, 3.5, 1.5)`
    /// facing into the room, UT sector `[1.5, 5.5] x [0, 7] x {1.5}`,
    /// 8x8 AP and 4x4 UT arrays, 0 dBm transmit power, -84 dBm noise.
    pub fn living_room() -> Self {
        Self {
            room: Room {
                width: 7.0,
                length: 7.0,
                height: 3.0,
                ap_pose: Pose::new([7.0, 3.5, 1.5], Orientation::new(FRAC_PI_2, 0.0, 0.0)),
                user_grid: GridBounds { min: [1.5, 0.0, 1.5], max: [5.5, 7.0, 1.5] },
                carrier_wavelength: SPEED_OF_LIGHT / 60e9,
                reflection_coeff: 0.3,
            },
            ap_array: ArrayDims::new(8, 8),
            ut_array: ArrayDims::new(4, 4),
            tx_power_dbm: 0.0,
            noise_power_dbm: -84.0,
            max_order: 2,
            blockage: BlockageConfig::default(),
            orientation: OrientationRanges::default(),
        }
    }

    pub fn p_ap(&self) -> f64 {
        dbm_to_watts(self.tx_power_dbm)
    }

    pub fn sigma2(&self) -> f64 {
        dbm_to_watts(self.noise_power_dbm)
    }

    pub fn n_pairs(&self) -> usize {
        self.ap_array.len() * self.ut_array.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.room.validate()?;
        self.blockage.validate()?;
        for (name, dims) in [("AP", self.ap_array), ("UT", self.ut_array)] {
            if dims.is_empty() || !dims.is_power_of_two() {
                return Err(Error::config(format!("{name} array sizes must be powers of two")));
            }
        }
        if self.max_order > 2 {
            return Err(Error::config("max_order must be at most 2"));
        }
        if !(self.tx_power_dbm.is_finite() && self.noise_power_dbm.is_finite()) {
            return Err(Error::config("power levels must be finite"));
        }
        for [lo, hi] in self.orientation.as_array() {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return Err(Error::config("orientation ranges must satisfy lo <= hi"));
            }
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding, hex encoded.
    pub fn hash(&self) -> String {
        hash_json(self)
    }

    /// Hash of everything except the blockage model, used to check that two
    /// datasets describe the same positions and propagation geometry.
    pub fn geometry_hash(&self) -> String {
        let mut c = self.clone();
        c.blockage = BlockageConfig::none();
        hash_json(&c)
    }
}

fn hash_json<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("config serializes");
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn living_room_is_valid() {
        let s = ScenarioConfig::living_room();
        s.validate().unwrap();
        assert_eq!(s.n_pairs(), 1024);
        assert!((s.p_ap() - 1e-3).abs() < 1e-15);
        assert!((s.sigma2() / 10f64.powf(-11.4) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let mut s = ScenarioConfig::living_room();
        s.ap_array = ArrayDims::new(6, 8);
        assert!(s.validate().is_err());

        let mut s = ScenarioConfig::living_room();
        s.room.user_grid.max[1] = 7.5;
        assert!(s.validate().is_err());

        let mut s = ScenarioConfig::living_room();
        s.blockage.p_los = 1.2;
        assert!(s.validate().is_err());
    }

    #[test]
    fn geometry_hash_ignores_blockage() {
        let a = ScenarioConfig::living_room();
        let mut b = a.clone();
        b.blockage.p_los = 1.0;
        assert_ne!(a.hash(), b.hash());
        assert_eq!(a.geometry_hash(), b.geometry_hash());
    }
}
