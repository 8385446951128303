//! Labeled beam-alignment datasets.
//!
//! Each sample keeps the UT pose, the noiseless gains and phases of every beam
//! pair (at `f32` precision), the seed of the noise realization its label was
//! measured with, and the M-hot label itself. Labels can always be recomputed
//! bit-exactly from the other stored fields.
//!
//! File layout (all integers little-endian):
//!
//! ```text
//! b"BSIM1"
//! u32                 header length in bytes
//! [u8; len]           JSON header (see DatasetHeader)
//! n_samples records:
//!   6 x f64           x, y, z, alpha, beta, gamma
//!   N x f32           SNR per beam pair, row-major (N = N_AP * N_UT)
//!   N x f32           phase per beam pair
//!   u64               noise seed
//!   M x u32           labeled pair indices, strongest first
//! ```

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::channel::{apply_blockage, trace_paths, ArrayDims};
use crate::codebook::{self, Codebook, GainMatrix, PairIndex, PairLayout, RssMatrix};
use crate::error::{Error, Result};
use crate::geometry::{Orientation, Pose};
use crate::rng::{self, salt};
use crate::scenario::ScenarioConfig;

pub const MAGIC: &[u8; 5] = b"BSIM1";
pub const FORMAT_VERSION: u32 = 1;

/// M-hot label: the `M` strongest beam pairs of one RSS measurement.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    layout: PairLayout,
    /// Marked pairs in descending RSS order.
    ranked: Vec<u32>,
}

impl LabelMatrix {
    pub fn from_ranked(layout: PairLayout, ranked: Vec<u32>) -> Result<Self> {
        if ranked.is_empty() || ranked.len() > layout.len() {
            return Err(Error::arg("label order out of range"));
        }
        let mut seen = vec![false; layout.len()];
        for &k in &ranked {
            let k = k as usize;
            if k >= layout.len() || std::mem::replace(&mut seen[k], true) {
                return Err(Error::format(format!("label index {k} invalid or repeated")));
            }
        }
        Ok(Self { layout, ranked })
    }

    pub fn layout(&self) -> PairLayout {
        self.layout
    }

    pub fn m(&self) -> usize {
        self.ranked.len()
    }

    pub fn ranked(&self) -> &[u32] {
        &self.ranked
    }

    /// The single strongest pair.
    pub fn best(&self) -> PairIndex {
        self.ranked[0] as usize
    }

    pub fn contains(&self, idx: PairIndex) -> bool {
        self.ranked.iter().any(|&k| k as usize == idx)
    }

    pub fn dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.layout.n_ap, self.layout.n_ut));
        for &k in &self.ranked {
            let (i, j) = self.layout.split(k as usize);
            out[(i, j)] = 1.0;
        }
        out
    }
}

/// Mark the `m` largest entries of `r`; ties go to the smaller flat index.
pub fn label_mhot(r: &RssMatrix, m: usize) -> Result<LabelMatrix> {
    let layout = PairLayout { n_ap: r.0.nrows(), n_ut: r.0.ncols() };
    if m == 0 || m > layout.len() {
        return Err(Error::arg(format!("label order {m} outside 1..={}", layout.len())));
    }
    let values = r.as_slice();
    let mut order: Vec<u32> = (0..layout.len() as u32).collect();
    let cmp = |a: &u32, b: &u32| values[*b as usize].total_cmp(&values[*a as usize]).then(a.cmp(b));
    if m < order.len() {
        order.select_nth_unstable_by(m - 1, cmp);
        order.truncate(m);
    }
    order.sort_unstable_by(cmp);
    LabelMatrix::from_ranked(layout, order)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Reported UT pose; the context features fed to the recommenders.
    pub pose: Pose,
    pub gains: GainMatrix,
    pub noise_seed: u64,
    pub label: LabelMatrix,
}

impl Sample {
    /// The RSS measurement the label was derived from.
    pub fn labeling_rss(&self) -> RssMatrix {
        codebook::measure_rss(&self.gains, self.gains.sigma2, &mut rng::stream(self.noise_seed, &[]))
    }

    pub fn recompute_label(&self, m: usize) -> Result<LabelMatrix> {
        label_mhot(&self.labeling_rss(), m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub version: u32,
    pub scenario: ScenarioConfig,
    pub config_hash: String,
    pub n_samples: usize,
    pub m: usize,
    pub seed: u64,
    pub ap_array: ArrayDims,
    pub ut_array: ArrayDims,
    pub sigma2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn scenario(&self) -> &ScenarioConfig {
        &self.header.scenario
    }

    pub fn layout(&self) -> PairLayout {
        PairLayout { n_ap: self.header.ap_array.len(), n_ut: self.header.ut_array.len() }
    }

    pub fn codebooks(&self) -> Result<(Codebook, Codebook)> {
        let (a, u) = (self.header.ap_array, self.header.ut_array);
        Ok((codebook::dft_codebook(a.n_h, a.n_v)?, codebook::dft_codebook(u.n_h, u.n_v)?))
    }

    /// New dataset holding the given samples in the given order.
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let samples: Vec<Sample> = indices.iter().map(|&i| self.samples[i].clone()).collect();
        let header = DatasetHeader { n_samples: samples.len(), ..self.header.clone() };
        Dataset { header, samples }
    }

    /// Replace every sample's label by its order-`m` relabeling.
    pub fn relabel(&self, m: usize) -> Result<Dataset> {
        let samples = self
            .samples
            .par_iter()
            .map(|s| Ok(Sample { label: s.recompute_label(m)?, ..s.clone() }))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { header: DatasetHeader { m, ..self.header.clone() }, samples })
    }
}

fn uniform_in<R: Rng + ?Sized>(rng: &mut R, [lo, hi]: [f64; 2]) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Draw a UT pose uniformly over the user grid and orientation ranges.
pub fn draw_pose<R: Rng + ?Sized>(scenario: &ScenarioConfig, rng: &mut R) -> Pose {
    let g = &scenario.room.user_grid;
    let mut position = [0.0; 3];
    for k in 0..3 {
        // The grid is closed; sampling the half-open box is indistinguishable.
        position[k] = uniform_in(rng, [g.min[k], g.max[k]]);
    }
    let o = &scenario.orientation;
    let alpha = uniform_in(rng, o.alpha);
    let beta = uniform_in(rng, o.beta);
    let gamma = uniform_in(rng, o.gamma);
    Pose::new(position, Orientation::new(alpha, beta, gamma))
}

fn generate_sample(
    scenario: &ScenarioConfig,
    cb_ap: &Codebook,
    cb_ut: &Codebook,
    m: usize,
    seed: u64,
    index: u64,
) -> Result<Sample> {
    let pose = draw_pose(scenario, &mut rng::stream(seed, &[salt::POSE, index]));
    let paths = trace_paths(&scenario.room, &pose, scenario.max_order)?;
    let paths = apply_blockage(&paths, &scenario.blockage, &mut rng::stream(seed, &[salt::BLOCKAGE, index]))?;
    let responses = codebook::beam_responses_from_paths(&paths, cb_ap, cb_ut);
    let gains = codebook::gains_from_responses(&responses, scenario.p_ap(), scenario.sigma2())?.quantized();
    let noise_seed = rng::derive_seed(seed, &[salt::NOISE_SEED, index]);
    let mut sample = Sample {
        pose,
        gains,
        noise_seed,
        label: LabelMatrix { layout: PairLayout { n_ap: 1, n_ut: 1 }, ranked: vec![0] },
    };
    sample.label = sample.recompute_label(m)?;
    Ok(sample)
}

/// Generate `n_samples` labeled samples. Sample `k` depends only on
/// `(scenario, seed, k)`, so two scenarios differing only in blockage share
/// poses sample-for-sample.
pub fn generate_dataset(scenario: &ScenarioConfig, n_samples: usize, m: usize, seed: u64) -> Result<Dataset> {
    scenario.validate()?;
    if n_samples == 0 {
        return Err(Error::arg("dataset needs at least one sample"));
    }
    if m == 0 || m > scenario.n_pairs() {
        return Err(Error::arg(format!("label order {m} outside 1..={}", scenario.n_pairs())));
    }
    let (a, u) = (scenario.ap_array, scenario.ut_array);
    let cb_ap = codebook::dft_codebook(a.n_h, a.n_v)?;
    let cb_ut = codebook::dft_codebook(u.n_h, u.n_v)?;
    let samples = (0..n_samples as u64)
        .into_par_iter()
        .map(|k| generate_sample(scenario, &cb_ap, &cb_ut, m, seed, k))
        .collect::<Result<Vec<_>>>()?;
    let header = DatasetHeader {
        version: FORMAT_VERSION,
        scenario: scenario.clone(),
        config_hash: scenario.hash(),
        n_samples,
        m,
        seed,
        ap_array: a,
        ut_array: u,
        sigma2: scenario.sigma2(),
    };
    Ok(Dataset { header, samples })
}

/// Slot-wise mixture of a LOS-blocked and an unblocked dataset: slot `k` takes
/// the blocked sample with probability `p`. Returns the mixture and, per slot,
/// whether it came from the blocked source.
pub fn mix_blockage(blocked: &Dataset, unblocked: &Dataset, p: f64, seed: u64) -> Result<(Dataset, Vec<bool>)> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::arg("mixing probability must lie in [0, 1]"));
    }
    if blocked.scenario().geometry_hash() != unblocked.scenario().geometry_hash()
        || blocked.len() != unblocked.len()
        || blocked.header.m != unblocked.header.m
    {
        return Err(Error::arg("datasets to mix must share scenario geometry, size and label order"));
    }
    let mut rng = rng::stream(seed, &[salt::MIX]);
    let take_blocked: Vec<bool> = (0..blocked.len()).map(|_| rng.random::<f64>() < p).collect();
    let samples = take_blocked
        .iter()
        .zip(blocked.samples.iter().zip(&unblocked.samples))
        .map(|(&b, (sb, su))| if b { sb.clone() } else { su.clone() })
        .collect();
    let mut scenario = unblocked.scenario().clone();
    scenario.blockage.p_los = p;
    let header = DatasetHeader { config_hash: scenario.hash(), scenario, ..unblocked.header.clone() };
    Ok((Dataset { header, samples }, take_blocked))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded k-fold partition of `0..n`. Fold sizes differ by at most one.
pub fn kfold_split(n: usize, k: usize, seed: u64) -> Result<Vec<Fold>> {
    if k < 2 || k > n {
        return Err(Error::arg(format!("k = {k} invalid for {n} samples")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut rng::stream(seed, &[salt::KFOLD]));
    let (base, extra) = (n / k, n % k);
    let mut bounds = Vec::with_capacity(k + 1);
    bounds.push(0);
    for f in 0..k {
        bounds.push(bounds[f] + base + usize::from(f < extra));
    }
    Ok((0..k)
        .map(|f| {
            let test = perm[bounds[f]..bounds[f + 1]].to_vec();
            let train = perm[..bounds[f]].iter().chain(&perm[bounds[f + 1]..]).copied().collect();
            Fold { train, test }
        })
        .collect())
}

/// Add zero-mean Gaussian errors to the reported position and orientation.
/// Gains and labels are left untouched.
pub fn perturb_ci<R: Rng + ?Sized>(sample: &Sample, sigma_p: f64, sigma_psi: f64, rng: &mut R) -> Result<Sample> {
    if !(sigma_p >= 0.0 && sigma_psi >= 0.0) {
        return Err(Error::arg("perturbation deviations must be non-negative"));
    }
    let mut out = sample.clone();
    let mut f = sample.pose.features();
    for (k, v) in f.iter_mut().enumerate() {
        let sigma = if k < 3 { sigma_p } else { sigma_psi };
        if sigma > 0.0 {
            *v += Normal::new(0.0, sigma).expect("finite sigma").sample(rng);
        }
    }
    out.pose = Pose::from_features(f);
    Ok(out)
}

/// Apply [`perturb_ci`] to every sample with per-sample streams.
pub fn perturb_dataset(ds: &Dataset, sigma_p: f64, sigma_psi: f64, seed: u64) -> Result<Dataset> {
    let samples = ds
        .samples
        .iter()
        .enumerate()
        .map(|(k, s)| perturb_ci(s, sigma_p, sigma_psi, &mut rng::stream(seed, &[salt::PERTURB, k as u64])))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { header: ds.header.clone(), samples })
}

pub fn write_dataset<W: Write>(ds: &Dataset, mut w: W) -> Result<()> {
    if ds.header.n_samples != ds.samples.len() {
        return Err(Error::format("header sample count disagrees with sample list"));
    }
    let header = serde_json::to_vec(&ds.header).map_err(|e| Error::format(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&(header.len() as u32).to_le_bytes())?;
    w.write_all(&header)?;
    let n_pairs = ds.layout().len();
    for s in &ds.samples {
        if s.gains.snr.len() != n_pairs || s.label.m() != ds.header.m {
            return Err(Error::format("sample shape disagrees with header"));
        }
        for v in s.pose.features() {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in s.gains.snr.iter() {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        for v in s.gains.phase.iter() {
            w.write_all(&(*v as f32).to_le_bytes())?;
        }
        w.write_all(&s.noise_seed.to_le_bytes())?;
        for &k in s.label.ranked() {
            w.write_all(&k.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

fn read_exact_or<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(format!("truncated file while reading {what}")),
        _ => Error::Io(e),
    })
}

pub fn read_dataset<R: Read>(mut r: R) -> Result<Dataset> {
    let mut magic = [0u8; 5];
    read_exact_or(&mut r, &mut magic, "magic")?;
    if &magic != MAGIC {
        return Err(Error::format("not a dataset file (bad magic)"));
    }
    let mut len = [0u8; 4];
    read_exact_or(&mut r, &mut len, "header length")?;
    let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
    read_exact_or(&mut r, &mut header, "header")?;
    let header: DatasetHeader = serde_json::from_slice(&header).map_err(|e| Error::format(e.to_string()))?;
    if header.version != FORMAT_VERSION {
        return Err(Error::format(format!("unsupported dataset version {}", header.version)));
    }
    let layout = PairLayout { n_ap: header.ap_array.len(), n_ut: header.ut_array.len() };
    let n_pairs = layout.len();
    let record = 6 * 8 + 2 * 4 * n_pairs + 8 + 4 * header.m;
    let mut buf = vec![0u8; record];
    let mut samples = Vec::with_capacity(header.n_samples);
    let f64_at = |b: &[u8], o: usize| f64::from_le_bytes(b[o..o + 8].try_into().unwrap());
    let f32_at = |b: &[u8], o: usize| f32::from_le_bytes(b[o..o + 4].try_into().unwrap()) as f64;
    for k in 0..header.n_samples {
        read_exact_or(&mut r, &mut buf, &format!("record {k} of {}", header.n_samples))?;
        let mut feats = [0.0; 6];
        for (i, f) in feats.iter_mut().enumerate() {
            *f = f64_at(&buf, 8 * i);
        }
        let base = 48;
        let snr = Array2::from_shape_fn((layout.n_ap, layout.n_ut), |(i, j)| f32_at(&buf, base + 4 * (i * layout.n_ut + j)));
        let base = base + 4 * n_pairs;
        let phase = Array2::from_shape_fn((layout.n_ap, layout.n_ut), |(i, j)| f32_at(&buf, base + 4 * (i * layout.n_ut + j)));
        let base = base + 4 * n_pairs;
        let noise_seed = u64::from_le_bytes(buf[base..base + 8].try_into().unwrap());
        let base = base + 8;
        let ranked = (0..header.m)
            .map(|i| u32::from_le_bytes(buf[base + 4 * i..base + 4 * i + 4].try_into().unwrap()))
            .collect();
        samples.push(Sample {
            pose: Pose::from_features(feats),
            gains: GainMatrix { snr, phase, sigma2: header.sigma2 },
            noise_seed,
            label: LabelMatrix::from_ranked(layout, ranked)?,
        });
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::format("trailing bytes after the last record"));
    }
    Ok(Dataset { header, samples })
}

pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    write_dataset(ds, BufWriter::new(File::create(path)?))
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    read_dataset(BufReader::new(File::open(path)?))
}
