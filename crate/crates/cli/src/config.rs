//! Experiment configuration: a TOML file merged over built-in defaults,
//! with `key=value` overrides on dotted paths.

use std::f64::consts::PI;
use std::path::Path;

use beamsim_core::eval::Method;
use beamsim_core::experiment::SweepConfig;
use beamsim_core::{ScenarioConfig, TrainConfig};
use serde::{Deserialize, Serialize};
use toml::Value;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSection {
    pub n_samples: usize,
    pub label_order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSection {
    pub folds: usize,
    pub inits: usize,
    pub n_b_list: Vec<usize>,
    pub methods: Vec<Method>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GifpSection {
    /// Spatial bin size, meters.
    pub delta_s: f64,
    /// Angular bin size, radians.
    pub delta_a: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiSection {
    /// `[sigma_p (m), sigma_psi (rad)]` pairs.
    pub settings: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub scenario: ScenarioConfig,
    pub dataset: DatasetSection,
    pub train: TrainConfig,
    pub sweep: SweepSection,
    pub gifp: GifpSection,
    pub ci: CiSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let sweep = SweepConfig::default();
        Self {
            seed: 0,
            scenario: ScenarioConfig::living_room(),
            dataset: DatasetSection { n_samples: 70_000, label_order: 1 },
            train: TrainConfig::default(),
            sweep: SweepSection { folds: sweep.folds, inits: sweep.inits, n_b_list: sweep.n_b_list, methods: sweep.methods },
            gifp: GifpSection { delta_s: 1.0, delta_a: PI / 8.0 },
            ci: CiSection { settings: vec![[0.0, 0.0], [0.1, 0.0], [0.5, 0.0], [0.0, 0.1], [0.0, 0.2], [0.1, 0.1]] },
        }
    }
}

impl ExperimentConfig {
    pub fn sweep_config(&self) -> SweepConfig {
        SweepConfig {
            folds: self.sweep.folds,
            inits: self.sweep.inits,
            n_b_list: self.sweep.n_b_list.clone(),
            methods: self.sweep.methods.clone(),
            gifp_delta_s: self.gifp.delta_s,
            gifp_delta_a: self.gifp.delta_a,
            train: self.train.clone(),
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.scenario.validate()?;
        if self.dataset.n_samples == 0 {
            return Err(CliError::Config("dataset.n_samples must be positive".into()));
        }
        let n_pairs = self.scenario.n_pairs();
        if self.dataset.label_order == 0 || self.dataset.label_order > n_pairs {
            return Err(CliError::Config(format!("dataset.label_order must lie in 1..={n_pairs}")));
        }
        if !(self.gifp.delta_s > 0.0 && self.gifp.delta_a > 0.0) {
            return Err(CliError::Config("gifp bin sizes must be positive".into()));
        }
        if self.ci.settings.iter().flatten().any(|s| !(*s >= 0.0)) {
            return Err(CliError::Config("ci sigmas must be non-negative".into()));
        }
        self.sweep_config().validate(n_pairs)?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Defaults, then `text` merged on top, then `overrides`.
    pub fn from_toml_with_overrides(text: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut tree = Value::try_from(Self::default()).expect("defaults serialize");
        let user: Value = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        merge(&mut tree, user, "")?;
        for ov in overrides {
            apply_override(&mut tree, ov)?;
        }
        tree.try_into().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))
    }

    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_with_overrides(&text, overrides)
    }
}

fn merge(base: &mut Value, user: Value, prefix: &str) -> Result<(), CliError> {
    match (base, user) {
        (Value::Table(b), Value::Table(u)) => {
            for (k, v) in u {
                let path = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &path)?,
                    // Optional fields are absent from the serialized defaults.
                    None => {
                        b.insert(k, v);
                    }
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

fn parse_value(raw: &str) -> Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Set `a.b.c=value`; the value is read as a TOML literal, falling back to
/// a bare string.
pub fn apply_override(tree: &mut Value, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("override '{spec}' is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    let (last, parents) = parts.split_last().expect("split yields one part");
    let mut node = tree;
    for p in parents {
        node = node
            .get_mut(*p)
            .filter(|v| v.is_table())
            .ok_or_else(|| CliError::Config(format!("unknown config section '{p}' in '{key}'")))?;
    }
    let table = node.as_table_mut().ok_or_else(|| CliError::Config(format!("'{key}' is not a table field")))?;
    let value = parse_value(raw.trim());
    match table.get(*last) {
        Some(old) => log::info!("override {key}: {old} -> {value}"),
        None => log::info!("override {key}: (unset) -> {value}"),
    }
    table.insert(last.to_string(), value);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let cfg = ExperimentConfig::default();
        let back = ExperimentConfig::from_toml_with_overrides(&cfg.to_toml(), &[]).unwrap();
        assert_eq!(back, cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn partial_file_and_overrides() {
        let text = "seed = 9\n[dataset]\nn_samples = 500\n";
        let ov = vec!["train.epochs=3".to_string(), "scenario.noise_power_dbm = -100".to_string(), "sweep.methods=[\"HBS\"]".into()];
        let cfg = ExperimentConfig::from_toml_with_overrides(text, &ov).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.dataset.n_samples, 500);
        assert_eq!(cfg.dataset.label_order, 1);
        assert_eq!(cfg.train.epochs, 3);
        assert_eq!(cfg.scenario.noise_power_dbm, -100.0);
        assert_eq!(cfg.sweep.methods, vec![Method::Hbs]);
    }

    #[test]
    fn optional_field_override() {
        let cfg = ExperimentConfig::from_toml_with_overrides("", &["train.doubling_every=2".into()]).unwrap();
        assert_eq!(cfg.train.doubling_every, Some(2));
    }

    #[test]
    fn bad_overrides_rejected() {
        assert!(ExperimentConfig::from_toml_with_overrides("", &["nonsense".into()]).is_err());
        assert!(ExperimentConfig::from_toml_with_overrides("", &["nosuch.field=1".into()]).is_err());
        assert!(ExperimentConfig::from_toml_with_overrides("", &["train.epochs=\"many\"".into()]).is_err());
    }

    #[test]
    fn validation_rejects_bad_values() {
        let check = |ov: &str| {
            let cfg = ExperimentConfig::from_toml_with_overrides("", &[ov.to_string()]).unwrap();
            assert!(matches!(cfg.validate(), Err(CliError::Config(_)) | Err(CliError::Core(_))), "{ov}");
        };
        check("dataset.n_samples=0");
        check("scenario.ap_array.n_h=6");
        check("scenario.blockage.p_los=1.5");
        check("scenario.room.user_grid.max=[9.0, 7.0, 1.5]");
        check("sweep.n_b_list=[0]");
    }
}
