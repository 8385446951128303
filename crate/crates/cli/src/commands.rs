use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use beamsim_core::dataset::{self, Dataset};
use beamsim_core::eval::{self, Method, SweepRow};
use beamsim_core::experiment::{self, FoldArtifacts};
use beamsim_core::neuralnet;
use beamsim_core::selectors;
use beamsim_core::HeadKind;

use crate::config::ExperimentConfig;
use crate::{CliError, Command, Common};

type Result<T> = std::result::Result<T, CliError>;

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Config { common } => {
            let text = load_config(&common)?.to_toml();
            match &common.out {
                Some(path) => fs::write(path, text).map_err(|e| CliError::io(path, e)),
                None => {
                    print!("{text}");
                    Ok(())
                }
            }
        }
        Command::Gen { common } => {
            let cfg = load_config(&common)?;
            gen(&cfg, &out_or(&common, "dataset.bin"))
        }
        Command::Train { common, dataset, head } => {
            let cfg = load_config(&common)?;
            train(&cfg, &dataset, head, &out_or(&common, "artifacts"))
        }
        Command::GifpBuild { common, dataset } => {
            let cfg = load_config(&common)?;
            gifp_build(&cfg, &dataset, &out_or(&common, "artifacts"))
        }
        Command::Eval { common, dataset, artifacts, methods } => {
            let cfg = load_config(&common)?;
            let methods = methods.unwrap_or_else(|| cfg.sweep.methods.clone());
            evaluate(&cfg, &dataset, &artifacts, &methods, &out_or(&common, "sweep.csv"))
        }
        Command::Sweep { common, dataset, ci } => {
            let cfg = load_config(&common)?;
            sweep(&cfg, dataset.as_deref(), ci, &out_or(&common, "sweep"))
        }
    }
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut overrides = common.overrides.clone();
    if let Some(seed) = common.seed {
        overrides.push(format!("seed={seed}"));
    }
    let cfg = ExperimentConfig::load(common.config.as_deref(), &overrides)?;
    cfg.validate()?;
    Ok(cfg)
}

fn out_or(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn load_dataset(path: &Path) -> Result<Dataset> {
    if !path.exists() {
        return Err(CliError::io(path, std::io::ErrorKind::NotFound.into()));
    }
    let ds = dataset::load_dataset(path)?;
    log::info!("loaded {} samples from {}", ds.len(), path.display());
    Ok(ds)
}

pub fn model_file(head: HeadKind, fold: usize, init: usize) -> String {
    format!("model_{}_fold{fold}_init{init}.bin", head_tag(head))
}

pub fn table_file(fold: usize) -> String {
    format!("gifp_fold{fold}.bin")
}

fn head_tag(head: HeadKind) -> &'static str {
    match head {
        HeadKind::St => "st",
        HeadKind::Mt => "mt",
        HeadKind::Emt => "emt",
    }
}

fn generate(cfg: &ExperimentConfig) -> Result<Dataset> {
    let ds = dataset::generate_dataset(&cfg.scenario, cfg.dataset.n_samples, cfg.dataset.label_order, cfg.seed)?;
    log::info!(
        "generated {} samples (M = {}, seed {}, config {})",
        ds.len(),
        ds.header.m,
        ds.header.seed,
        &ds.header.config_hash[..12]
    );
    Ok(ds)
}

fn gen(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let ds = generate(cfg)?;
    dataset::write_dataset(&ds, create_file(out)?)?;
    log::info!("wrote {}", out.display());
    Ok(())
}

fn folds(cfg: &ExperimentConfig, ds: &Dataset) -> Result<Vec<dataset::Fold>> {
    Ok(dataset::kfold_split(ds.len(), cfg.sweep.folds, cfg.seed)?)
}

fn train(cfg: &ExperimentConfig, dataset_path: &Path, head: HeadKind, out: &Path) -> Result<()> {
    let ds = load_dataset(dataset_path)?;
    create_dir(out)?;
    let loss_path = out.join(format!("loss_{}.csv", head_tag(head)));
    let mut losses = LossLog::create(&loss_path)?;
    for (f, fold) in folds(cfg, &ds)?.iter().enumerate() {
        let train = ds.subset(&fold.train);
        for init in 0..cfg.sweep.inits {
            let seed = experiment::init_seed(cfg.seed, f, init);
            let (model, report) = experiment::train_model(&train.samples, ds.scenario(), head, &cfg.train, seed)?;
            let path = out.join(model_file(head, f, init));
            neuralnet::save_model(&model, &path)?;
            log::info!(
                "fold {f} init {init}: loss {:.4} -> {:.4}, saved {}",
                report.loss_history[0],
                report.loss_history.last().copied().unwrap_or(f64::NAN),
                path.display()
            );
            losses.append(f, init, seed, &report.loss_history)?;
        }
    }
    Ok(())
}

struct LossLog {
    path: PathBuf,
    wtr: csv::Writer<BufWriter<File>>,
}

impl LossLog {
    fn create(path: &Path) -> Result<Self> {
        let mut log = Self { path: path.to_path_buf(), wtr: csv::Writer::from_writer(create_file(path)?) };
        log.row(["fold", "init", "init_seed", "epoch", "loss"].map(String::from))?;
        Ok(log)
    }

    fn row(&mut self, fields: [String; 5]) -> Result<()> {
        self.wtr.write_record(&fields).map_err(|e| CliError::io(&self.path, e.into()))
    }

    fn append(&mut self, fold: usize, init: usize, seed: u64, history: &[f64]) -> Result<()> {
        for (epoch, loss) in history.iter().enumerate() {
            self.row([fold.to_string(), init.to_string(), seed.to_string(), epoch.to_string(), loss.to_string()])?;
        }
        self.wtr.flush().map_err(|e| CliError::io(&self.path, e))
    }
}

fn gifp_build(cfg: &ExperimentConfig, dataset_path: &Path, out: &Path) -> Result<()> {
    let ds = load_dataset(dataset_path)?;
    create_dir(out)?;
    let geometry = selectors::GifpGeometry::new(ds.scenario(), cfg.gifp.delta_s, cfg.gifp.delta_a)?;
    for (f, fold) in folds(cfg, &ds)?.iter().enumerate() {
        let train = ds.subset(&fold.train);
        let table = selectors::gifp_build(&train.samples, geometry.clone(), ds.layout())?;
        let path = out.join(table_file(f));
        selectors::save_table(&table, &path)?;
        log::info!("fold {f}: {} of {} bins occupied, saved {}", table.occupied_bins(), table.n_bins(), path.display());
    }
    Ok(())
}

fn load_artifacts(cfg: &ExperimentConfig, ds: &Dataset, dir: &Path, fold: usize, methods: &[Method]) -> Result<FoldArtifacts> {
    let mut art = FoldArtifacts::default();
    let (ap, ut) = (ds.header.ap_array, ds.header.ut_array);
    for head in methods.iter().filter_map(Method::head) {
        for init in 0..cfg.sweep.inits {
            let path = dir.join(model_file(head, fold, init));
            if !path.exists() {
                return Err(CliError::io(&path, std::io::ErrorKind::NotFound.into()));
            }
            let model = neuralnet::load_model(&path, ap, ut)?;
            if model.head != head {
                return Err(CliError::Config(format!("{} holds a {:?} head", path.display(), model.head)));
            }
            art.models.push((head, experiment::init_seed(cfg.seed, fold, init), model));
        }
    }
    if methods.contains(&Method::Gifp) {
        let path = dir.join(table_file(fold));
        if !path.exists() {
            return Err(CliError::io(&path, std::io::ErrorKind::NotFound.into()));
        }
        art.gifp = Some(selectors::load_table(&path)?);
    }
    Ok(art)
}

fn write_rows(rows: &[SweepRow], out: &Path) -> Result<()> {
    eval::write_sweep_csv(rows, create_file(out)?)?;
    log::info!("wrote {} rows to {}", rows.len(), out.display());
    Ok(())
}

fn evaluate(cfg: &ExperimentConfig, dataset_path: &Path, artifacts: &Path, methods: &[Method], out: &Path) -> Result<()> {
    if methods.is_empty() {
        return Err(CliError::Config("no methods to evaluate".into()));
    }
    let ds = load_dataset(dataset_path)?;
    let mut rows = Vec::new();
    for (f, fold) in folds(cfg, &ds)?.iter().enumerate() {
        let art = load_artifacts(cfg, &ds, artifacts, f, methods)?;
        let test = ds.subset(&fold.test);
        rows.extend(experiment::evaluate_fold(&test.samples, ds.scenario(), f, &art, methods, &cfg.sweep.n_b_list)?);
    }
    write_rows(&rows, out)
}

fn sweep(cfg: &ExperimentConfig, dataset_path: Option<&Path>, ci: bool, out: &Path) -> Result<()> {
    create_dir(out)?;
    let ds = match dataset_path {
        Some(p) => load_dataset(p)?,
        None => {
            let ds = generate(cfg)?;
            let path = out.join("dataset.bin");
            dataset::write_dataset(&ds, create_file(&path)?)?;
            ds
        }
    };
    let sweep_cfg = cfg.sweep_config();
    let rows = experiment::run_sweep(&ds, &sweep_cfg)?;
    write_rows(&rows, &out.join("sweep.csv"))?;
    for m in &sweep_cfg.methods {
        for p in eval::mean_curve(&rows, *m) {
            log::info!(
                "{m:8} n_b {:4}: misalignment {:.4}, ESE {}",
                p.n_b,
                p.misalignment_prob,
                p.mean_ese.map_or("n/a".to_string(), |e| format!("{e:.4}"))
            );
        }
    }
    if ci {
        let settings: Vec<(f64, f64)> = cfg.ci.settings.iter().map(|[p, a]| (*p, *a)).collect();
        let ci_rows = experiment::ci_robustness(&ds, &sweep_cfg, &settings)?;
        let path = out.join("ci.csv");
        experiment::write_ci_csv(&ci_rows, create_file(&path)?)?;
        log::info!("wrote {} rows to {}", ci_rows.len(), path.display());
    }
    Ok(())
}
