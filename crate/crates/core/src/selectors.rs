//! Non-learned beam selectors: generalized inverse fingerprinting (GIFP)
//! and DEACT hierarchical beam search (HBS).

use ndarray::Array1;
use num_complex::Complex64;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::channel::{ArrayDims, ChannelMatrix};
use crate::codebook::{self, PairIndex, PairLayout};
use crate::dataset::{Dataset, Sample};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::neuralnet::CandidateList;
use crate::scenario::ScenarioConfig;

/// Regular bin grid over `(x, y, z, alpha, beta, gamma)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GifpGeometry {
    pub origin: [f64; 6],
    pub delta: [f64; 6],
    pub bins: [usize; 6],
}

impl GifpGeometry {
    /// Bins of side `delta_s` over the user grid and `delta_a` over the
    /// orientation ranges, anchored at the grid's lower corner.
    pub fn new(scenario: &ScenarioConfig, delta_s: f64, delta_a: f64) -> Result<Self> {
        if !(delta_s > 0.0 && delta_a > 0.0) {
            return Err(Error::arg("bin sizes must be positive"));
        }
        let grid = &scenario.room.user_grid;
        let angles = scenario.orientation.as_array();
        let mut origin = [0.0; 6];
        let mut delta = [0.0; 6];
        let mut bins = [1; 6];
        for k in 0..6 {
            let (lo, hi, d) = if k < 3 { (grid.min[k], grid.max[k], delta_s) } else { (angles[k - 3][0], angles[k - 3][1], delta_a) };
            origin[k] = lo;
            delta[k] = d;
            bins[k] = (((hi - lo) / d) - 1e-9).ceil().max(1.0) as usize;
        }
        Ok(Self { origin, delta, bins })
    }

    pub fn n_bins(&self) -> usize {
        self.bins.iter().product()
    }

    /// Half-open floor quantization, row-major over the six dimensions.
    /// Coordinates outside the grid are clamped to the edge bin.
    pub fn bin_index(&self, pose: &Pose) -> usize {
        let f = pose.features();
        let mut idx = 0;
        for k in 0..6 {
            let raw = ((f[k] - self.origin[k]) / self.delta[k]).floor();
            let max = (self.bins[k] - 1) as f64;
            if raw < 0.0 || raw > max {
                log::debug!("pose coordinate {k} = {} outside GIFP grid, clamped", f[k]);
            }
            idx = idx * self.bins[k] + raw.clamp(0.0, max) as usize;
        }
        idx
    }
}

pub fn gifp_bin_index(pose: &Pose, geometry: &GifpGeometry) -> usize {
    geometry.bin_index(pose)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GifpTable {
    pub geometry: GifpGeometry,
    pub layout: PairLayout,
    /// Per bin, beam pairs by descending best-pair count (ties toward the
    /// smaller index). Empty for bins without training samples.
    pub lists: Vec<Vec<u32>>,
    /// Every beam pair ranked by its global best-pair count.
    pub fallback: Vec<u32>,
}

fn ranked_by_count(counts: &[(u32, u32)]) -> Vec<u32> {
    let mut v = counts.to_vec();
    v.sort_unstable_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    v.into_iter().map(|(k, _)| k).collect()
}

/// Build a table from training samples. Only the top-1 label entry counts.
pub fn gifp_build(samples: &[Sample], geometry: GifpGeometry, layout: PairLayout) -> Result<GifpTable> {
    if samples.is_empty() {
        return Err(Error::arg("cannot build a fingerprint table from an empty dataset"));
    }
    let mut keyed: Vec<(usize, u32)> =
        samples.par_iter().map(|s| (geometry.bin_index(&s.pose), s.label.best() as u32)).collect();
    keyed.par_sort_unstable();

    let mut global = vec![0u32; layout.len()];
    let mut lists = vec![Vec::new(); geometry.n_bins()];
    for run in keyed.chunk_by(|a, b| a.0 == b.0) {
        let mut counts: Vec<(u32, u32)> = Vec::new();
        for group in run.chunk_by(|a, b| a.1 == b.1) {
            counts.push((group[0].1, group.len() as u32));
            global[group[0].1 as usize] += group.len() as u32;
        }
        lists[run[0].0] = ranked_by_count(&counts);
    }
    let all: Vec<(u32, u32)> = global.iter().enumerate().map(|(k, &c)| (k as u32, c)).collect();
    Ok(GifpTable { geometry, layout, lists, fallback: ranked_by_count(&all) })
}

pub fn gifp_train(dataset: &Dataset, delta_s: f64, delta_a: f64) -> Result<GifpTable> {
    let geometry = GifpGeometry::new(dataset.scenario(), delta_s, delta_a)?;
    gifp_build(&dataset.samples, geometry, dataset.layout())
}

impl GifpTable {
    pub fn n_bins(&self) -> usize {
        self.lists.len()
    }

    pub fn occupied_bins(&self) -> usize {
        self.lists.iter().filter(|l| !l.is_empty()).count()
    }

    /// The bin's list, padded from the fallback list up to `n_b` entries.
    pub fn recommend(&self, pose: &Pose, n_b: usize) -> Result<CandidateList> {
        if n_b == 0 || n_b > self.layout.len() {
            return Err(Error::arg(format!("n_b = {n_b} outside 1..={}", self.layout.len())));
        }
        let own = &self.lists[self.geometry.bin_index(pose)];
        let mut out: Vec<PairIndex> = own.iter().take(n_b).map(|&k| k as usize).collect();
        if out.len() < n_b {
            let mut seen = vec![false; self.layout.len()];
            for &k in &out {
                seen[k] = true;
            }
            out.extend(self.fallback.iter().map(|&k| k as usize).filter(|&k| !seen[k]).take(n_b - out.len()));
        }
        CandidateList::new(out)
    }
}

pub fn gifp_recommend(table: &GifpTable, pose: &Pose, n_b: usize) -> Result<CandidateList> {
    table.recommend(pose, n_b)
}

pub const TABLE_MAGIC: &[u8; 5] = b"BSGF1";
pub const TABLE_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TableHeader {
    version: u32,
    geometry: GifpGeometry,
    layout: PairLayout,
}

fn write_list<W: Write>(w: &mut W, list: &[u32]) -> Result<()> {
    w.write_all(&(list.len() as u32).to_le_bytes())?;
    for k in list {
        w.write_all(&k.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b).map_err(|_| Error::format("truncated fingerprint table"))?;
    Ok(u32::from_le_bytes(b))
}

fn read_list<R: Read>(r: &mut R, n_pairs: usize) -> Result<Vec<u32>> {
    let n = read_u32(r)? as usize;
    if n > n_pairs {
        return Err(Error::format("bin list longer than the number of beam pairs"));
    }
    let list = (0..n).map(|_| read_u32(r)).collect::<Result<Vec<_>>>()?;
    if list.iter().any(|&k| k as usize >= n_pairs) {
        return Err(Error::format("beam-pair index out of range"));
    }
    Ok(list)
}

pub fn write_table<W: Write>(table: &GifpTable, mut w: W) -> Result<()> {
    let header = TableHeader { version: TABLE_VERSION, geometry: table.geometry.clone(), layout: table.layout };
    let bytes = serde_json::to_vec(&header).map_err(|e| Error::format(e.to_string()))?;
    w.write_all(TABLE_MAGIC)?;
    w.write_all(&(bytes.len() as u32).to_le_bytes())?;
    w.write_all(&bytes)?;
    for list in &table.lists {
        write_list(&mut w, list)?;
    }
    write_list(&mut w, &table.fallback)?;
    w.flush()?;
    Ok(())
}

pub fn read_table<R: Read>(mut r: R) -> Result<GifpTable> {
    let mut magic = [0u8; 5];
    r.read_exact(&mut magic)?;
    if &magic != TABLE_MAGIC {
        return Err(Error::format("not a fingerprint table (bad magic)"));
    }
    let len = read_u32(&mut r)? as usize;
    let mut bytes = vec![0u8; len];
    r.read_exact(&mut bytes)?;
    let header: TableHeader = serde_json::from_slice(&bytes).map_err(|e| Error::format(e.to_string()))?;
    if header.version != TABLE_VERSION {
        return Err(Error::format(format!("unsupported table version {}", header.version)));
    }
    let n_pairs = header.layout.len();
    let lists = (0..header.geometry.n_bins()).map(|_| read_list(&mut r, n_pairs)).collect::<Result<Vec<_>>>()?;
    let fallback = read_list(&mut r, n_pairs)?;
    if fallback.len() != n_pairs {
        return Err(Error::format("fallback list must rank every beam pair"));
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::format("trailing bytes after fingerprint table"));
    }
    Ok(GifpTable { geometry: header.geometry, layout: header.layout, lists, fallback })
}

pub fn save_table(table: &GifpTable, path: &Path) -> Result<()> {
    write_table(table, BufWriter::new(File::create(path)?))
}

pub fn load_table(path: &Path) -> Result<GifpTable> {
    read_table(BufReader::new(File::open(path)?))
}

/// Source of RSS measurements for arbitrary precoder/combiner pairs.
pub trait RssOracle {
    fn measure(&mut self, precoder: &Array1<Complex64>, combiner: &Array1<Complex64>) -> f64;
}

/// `|sqrt(P) c^H H w + n|^2` with `n ~ CN(0, noise_var)`.
pub struct ChannelOracle<'a, R: Rng> {
    pub channel: &'a ChannelMatrix,
    pub p_ap: f64,
    pub noise_var: f64,
    pub rng: R,
}

impl<R: Rng> RssOracle for ChannelOracle<'_, R> {
    fn measure(&mut self, precoder: &Array1<Complex64>, combiner: &Array1<Complex64>) -> f64 {
        let hw = self.channel.matrix().dot(precoder);
        let y: Complex64 = combiner.iter().zip(hw.iter()).map(|(c, x)| c.conj() * x).sum();
        let noise = if self.noise_var > 0.0 { codebook::complex_noise(&mut self.rng, self.noise_var) } else { Complex64::new(0.0, 0.0) };
        (self.p_ap.sqrt() * y + noise).norm_sqr()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HbsResult {
    /// Zero-based `(p, q)` DFT beam grid indices at the AP.
    pub ap_beam: (usize, usize),
    pub ut_beam: (usize, usize),
    pub pair: PairIndex,
    pub sensed_pairs: usize,
    pub feedbacks: usize,
}

/// Descend one array's codeword tree: vertical levels first with a single
/// active column, then horizontal levels at full vertical aperture. Returns
/// the one-based full-resolution indices `(n_h, n_v)`.
fn descend(dims: ArrayDims, mut sense: impl FnMut(&Array1<Complex64>) -> f64) -> Result<(usize, usize, usize)> {
    let (l_h, l_v) = (dims.n_h.trailing_zeros(), dims.n_v.trailing_zeros());
    let (mut n_h, mut n_v) = (1usize, 1usize);
    let mut sensed = 0;
    for k_v in 1..=l_v {
        let a = sense(&codebook::deact_codeword(0, k_v, 1, 2 * n_v - 1, dims)?);
        let b = sense(&codebook::deact_codeword(0, k_v, 1, 2 * n_v, dims)?);
        n_v = if b > a { 2 * n_v } else { 2 * n_v - 1 };
        sensed += 2;
    }
    for k_h in 1..=l_h {
        let a = sense(&codebook::deact_codeword(k_h, l_v, 2 * n_h - 1, n_v, dims)?);
        let b = sense(&codebook::deact_codeword(k_h, l_v, 2 * n_h, n_v, dims)?);
        n_h = if b > a { 2 * n_h } else { 2 * n_h - 1 };
        sensed += 2;
    }
    Ok((n_h, n_v, sensed))
}

/// Hierarchical search: the UT tree is descended while the AP transmits
/// from a single element, then the AP tree with the UT fixed on its chosen
/// beam. Each level senses two codewords and keeps the stronger.
pub fn hbs_run<O: RssOracle>(oracle: &mut O, ap: ArrayDims, ut: ArrayDims) -> Result<HbsResult> {
    if !ap.is_power_of_two() || !ut.is_power_of_two() {
        return Err(Error::arg("hierarchical search needs power-of-two array dimensions"));
    }
    let omni = codebook::deact_codeword(0, 0, 1, 1, ap)?;
    let (uh, uv, ut_sensed) = descend(ut, |c| oracle.measure(&omni, c))?;
    let ut_final = codebook::deact_codeword(ut.n_h.trailing_zeros(), ut.n_v.trailing_zeros(), uh, uv, ut)?;
    let (ah, av, ap_sensed) = descend(ap, |w| oracle.measure(w, &ut_final))?;

    let ap_beam = (ah - 1, av - 1);
    let ut_beam = (uh - 1, uv - 1);
    let layout = PairLayout { n_ap: ap.len(), n_ut: ut.len() };
    Ok(HbsResult {
        ap_beam,
        ut_beam,
        pair: layout.flatten(ap_beam.1 * ap.n_h + ap_beam.0, ut_beam.1 * ut.n_h + ut_beam.0),
        sensed_pairs: ut_sensed + ap_sensed,
        feedbacks: ap.len().trailing_zeros() as usize,
    })
}
