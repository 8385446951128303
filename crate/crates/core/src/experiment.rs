//! k-fold experiment orchestration: training every head over several
//! initializations per fold, building fingerprint tables, and sweeping the
//! candidate-list length.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use std::io::Write;

use crate::dataset::{self, Dataset, Sample};
use crate::error::{Error, Result};
use crate::eval::{self, Method, SweepRow};
use crate::neuralnet::{self, FeatureScaler, HeadKind, MlpModel, TrainConfig, TrainReport};
use crate::rng::{self, salt};
use crate::scenario::ScenarioConfig;
use crate::selectors::{self, GifpTable};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub folds: usize,
    pub inits: usize,
    pub n_b_list: Vec<usize>,
    pub methods: Vec<Method>,
    pub gifp_delta_s: f64,
    pub gifp_delta_a: f64,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            folds: 5,
            inits: 3,
            n_b_list: vec![1, 2, 3, 5, 10, 20, 30, 50],
            methods: Method::ALL.to_vec(),
            gifp_delta_s: 1.0,
            gifp_delta_a: PI / 8.0,
            train: TrainConfig::default(),
            seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self, n_pairs: usize) -> Result<()> {
        if self.folds < 2 || self.inits == 0 {
            return Err(Error::config("need at least two folds and one initialization"));
        }
        if self.n_b_list.is_empty() || self.n_b_list.iter().any(|&n| n == 0 || n > n_pairs) {
            return Err(Error::config(format!("n_b values must lie in 1..={n_pairs}")));
        }
        if self.methods.is_empty() {
            return Err(Error::config("no methods selected"));
        }
        self.train.validate()
    }
}

/// Seed of initialization `init` in fold `fold`.
pub fn init_seed(seed: u64, fold: usize, init: usize) -> u64 {
    rng::derive_seed(seed, &[salt::INIT, fold as u64, init as u64])
}

/// Fresh Glorot-initialized model for `scenario`, trained on `samples`.
pub fn train_model(
    samples: &[Sample],
    scenario: &ScenarioConfig,
    head: HeadKind,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(MlpModel, TrainReport)> {
    let scaler = FeatureScaler::from_grid(&scenario.room.user_grid);
    let mut model = MlpModel::new(
        head,
        scenario.ap_array,
        scenario.ut_array,
        cfg.n_hidden,
        cfg.width,
        scaler,
        &mut rng::stream(seed, &[salt::INIT]),
    );
    let cfg = TrainConfig { seed, ..cfg.clone() };
    let report = neuralnet::train(&mut model, samples, &cfg)?;
    Ok((model, report))
}

/// Trained artifacts of one fold.
#[derive(Debug, Clone, Default)]
pub struct FoldArtifacts {
    pub models: Vec<(HeadKind, u64, MlpModel)>,
    pub gifp: Option<GifpTable>,
}

/// Evaluate the requested methods on a fold's test samples.
pub fn evaluate_fold(
    test: &[Sample],
    scenario: &ScenarioConfig,
    fold: usize,
    artifacts: &FoldArtifacts,
    methods: &[Method],
    n_b_list: &[usize],
) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::new();
    for &method in methods {
        match method {
            Method::DnnSt | Method::DnnMt | Method::DnnEmt => {
                let head = method.head().expect("learned method");
                let mut found = false;
                for (_, init, model) in artifacts.models.iter().filter(|(h, _, _)| *h == head) {
                    found = true;
                    for p in eval::evaluate_recommender(model, test, n_b_list)? {
                        rows.push(SweepRow::from_point(method, fold, *init, p));
                    }
                }
                if !found {
                    return Err(Error::arg(format!("no trained {method} model for fold {fold}")));
                }
            }
            Method::Gifp => {
                let table = artifacts.gifp.as_ref().ok_or_else(|| Error::arg(format!("no GIFP table for fold {fold}")))?;
                for p in eval::evaluate_recommender(table, test, n_b_list)? {
                    rows.push(SweepRow::from_point(method, fold, 0, p));
                }
            }
            Method::Hbs => {
                let (a, u) = (scenario.ap_array, scenario.ut_array);
                let cb_ap = crate::codebook::dft_codebook(a.n_h, a.n_v)?;
                let cb_ut = crate::codebook::dft_codebook(u.n_h, u.n_v)?;
                let p = eval::evaluate_hbs(test, &cb_ap, &cb_ut, scenario.p_ap())?;
                rows.push(SweepRow::from_point(method, fold, 0, p));
            }
            Method::Perfect => {
                rows.push(SweepRow::from_point(method, fold, 0, eval::evaluate_perfect(test)?));
            }
        }
    }
    Ok(rows)
}

/// Train and build everything the requested methods need for one fold.
pub fn build_fold(train: &[Sample], scenario: &ScenarioConfig, fold: usize, cfg: &SweepConfig) -> Result<FoldArtifacts> {
    let mut artifacts = FoldArtifacts::default();
    for head in cfg.methods.iter().filter_map(Method::head) {
        for init in 0..cfg.inits {
            let seed = init_seed(cfg.seed, fold, init);
            let (model, report) = train_model(train, scenario, head, &cfg.train, seed)?;
            log::info!(
                "fold {fold} {} init {init}: final loss {:.4}",
                head.label(),
                report.loss_history.last().copied().unwrap_or(f64::NAN)
            );
            artifacts.models.push((head, seed, model));
        }
    }
    if cfg.methods.contains(&Method::Gifp) {
        let geometry = selectors::GifpGeometry::new(scenario, cfg.gifp_delta_s, cfg.gifp_delta_a)?;
        artifacts.gifp = Some(selectors::gifp_build(train, geometry, crate::codebook::PairLayout {
            n_ap: scenario.ap_array.len(),
            n_ut: scenario.ut_array.len(),
        })?);
    }
    Ok(artifacts)
}

/// Full k-fold sweep over an in-memory dataset.
pub fn run_sweep(ds: &Dataset, cfg: &SweepConfig) -> Result<Vec<SweepRow>> {
    cfg.validate(ds.layout().len())?;
    let folds = dataset::kfold_split(ds.len(), cfg.folds, cfg.seed)?;
    let mut rows = Vec::new();
    for (f, fold) in folds.iter().enumerate() {
        let train = ds.subset(&fold.train);
        let test = ds.subset(&fold.test);
        let artifacts = build_fold(&train.samples, ds.scenario(), f, cfg)?;
        rows.extend(evaluate_fold(&test.samples, ds.scenario(), f, &artifacts, &cfg.methods, &cfg.n_b_list)?);
    }
    Ok(rows)
}

/// One cell of the context-information robustness sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CiRow {
    pub sigma_p: f64,
    pub sigma_psi: f64,
    pub method: Method,
    pub fold: usize,
    pub init_seed: u64,
    pub n_b: usize,
    pub misalignment_prob: f64,
    pub mean_ese: Option<f64>,
    pub n_samples: usize,
}

/// Repeat the sweep with reported poses perturbed in both training and
/// test data, for every `(sigma_p, sigma_psi)` setting.
pub fn ci_robustness(ds: &Dataset, cfg: &SweepConfig, settings: &[(f64, f64)]) -> Result<Vec<CiRow>> {
    let mut out = Vec::new();
    for &(sigma_p, sigma_psi) in settings {
        log::info!("context perturbation sigma_p = {sigma_p} m, sigma_psi = {sigma_psi} rad");
        let noisy = dataset::perturb_dataset(ds, sigma_p, sigma_psi, cfg.seed)?;
        for r in run_sweep(&noisy, cfg)? {
            out.push(CiRow {
                sigma_p,
                sigma_psi,
                method: r.method,
                fold: r.fold,
                init_seed: r.init_seed,
                n_b: r.n_b,
                misalignment_prob: r.misalignment_prob,
                mean_ese: r.mean_ese,
                n_samples: r.n_samples,
            });
        }
    }
    Ok(out)
}

pub fn write_ci_csv<W: Write>(rows: &[CiRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for row in rows {
        wtr.serialize(row).map_err(|e| Error::format(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}
