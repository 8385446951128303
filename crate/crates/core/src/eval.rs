//! Candidate scanning, misalignment probability, effective spectral
//! efficiency and method sweeps.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::io::Write;
use std::str::FromStr;

use crate::codebook::{self, Codebook, PairIndex, RssMatrix};
use crate::dataset::Sample;
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::neuralnet::{CandidateList, HeadKind, MlpModel};
use crate::rng::{self, salt};
use crate::selectors::{self, ChannelOracle, GifpTable};

/// Frame length and per-pair sensing time used for the overhead charge.
pub const T_FRAME: f64 = 20e-3;
pub const T_SENSE: f64 = 0.1e-3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "DNN-ST")]
    DnnSt,
    #[serde(rename = "DNN-MT")]
    DnnMt,
    #[serde(rename = "DNN-EMT")]
    DnnEmt,
    #[serde(rename = "GIFP")]
    Gifp,
    #[serde(rename = "HBS")]
    Hbs,
    #[serde(rename = "PERFECT")]
    Perfect,
}

impl Method {
    pub const ALL: [Method; 6] = [Method::DnnSt, Method::DnnMt, Method::DnnEmt, Method::Gifp, Method::Hbs, Method::Perfect];

    pub fn name(&self) -> &'static str {
        match self {
            Method::DnnSt => "DNN-ST",
            Method::DnnMt => "DNN-MT",
            Method::DnnEmt => "DNN-EMT",
            Method::Gifp => "GIFP",
            Method::Hbs => "HBS",
            Method::Perfect => "PERFECT",
        }
    }

    pub fn head(&self) -> Option<HeadKind> {
        match self {
            Method::DnnSt => Some(HeadKind::St),
            Method::DnnMt => Some(HeadKind::Mt),
            Method::DnnEmt => Some(HeadKind::Emt),
            _ => None,
        }
    }
}

impl From<HeadKind> for Method {
    fn from(h: HeadKind) -> Self {
        match h {
            HeadKind::St => Method::DnnSt,
            HeadKind::Mt => Method::DnnMt,
            HeadKind::Emt => Method::DnnEmt,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "GIFP" => Ok(Method::Gifp),
            "HBS" => Ok(Method::Hbs),
            "PERFECT" => Ok(Method::Perfect),
            other => other.parse::<HeadKind>().map(Method::from).map_err(|_| Error::arg(format!("unknown method '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanOutcome {
    pub chosen: PairIndex,
    pub misaligned: bool,
    /// Noiseless linear SNR of the chosen pair.
    pub snr: f64,
    pub n_b: usize,
}

/// Highest-RSS member of `s`, ties toward the smaller index.
pub fn scan_candidates(r: &RssMatrix, s: &CandidateList) -> Result<PairIndex> {
    let vals = r.as_slice();
    if s.is_empty() {
        return Err(Error::arg("empty candidate list"));
    }
    let mut best: Option<(PairIndex, f64)> = None;
    for &k in s.as_slice() {
        let v = *vals.get(k).ok_or_else(|| Error::arg(format!("candidate {k} out of range")))?;
        match best {
            Some((bk, bv)) if v < bv || (v == bv && k > bk) => {}
            _ => best = Some((k, v)),
        }
    }
    Ok(best.expect("non-empty").0)
}

/// Scan `s` in `r` and score the choice against the sample's gains.
pub fn scan(r: &RssMatrix, s: &CandidateList, sample: &Sample) -> Result<ScanOutcome> {
    let chosen = scan_candidates(r, s)?;
    Ok(ScanOutcome { chosen, misaligned: r.at(chosen) < r.max(), snr: sample.gains.snr_at(chosen), n_b: s.len() })
}

pub fn misalignment_probability(outcomes: &[ScanOutcome]) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::arg("no outcomes"));
    }
    Ok(outcomes.iter().filter(|o| o.misaligned).count() as f64 / outcomes.len() as f64)
}

/// `(T_fr - n_b T_s) / T_fr`.
pub fn overhead_factor(n_b: usize, t_fr: f64, t_s: f64) -> Result<f64> {
    let used = n_b as f64 * t_s;
    if !(t_fr > 0.0 && t_s >= 0.0) || used > t_fr * (1.0 + 1e-12) {
        return Err(Error::arg(format!("{n_b} sensed pairs of {t_s} s exceed the {t_fr} s frame")));
    }
    Ok(((t_fr - used) / t_fr).max(0.0))
}

/// Effective spectral efficiency in bits/s/Hz.
pub fn ese(snr: f64, n_b: usize, t_fr: f64, t_s: f64) -> Result<f64> {
    if !(snr >= 0.0) {
        return Err(Error::arg("SNR must be non-negative"));
    }
    Ok(overhead_factor(n_b, t_fr, t_s)? * (1.0 + snr).log2())
}

/// Measurement used to score every method on a sample; independent of the
/// method so all of them face the same noise.
pub fn evaluation_rss(sample: &Sample) -> RssMatrix {
    let seed = rng::derive_seed(sample.noise_seed, &[salt::EVAL_SCAN]);
    codebook::measure_rss(&sample.gains, sample.gains.sigma2, &mut rng::stream(seed, &[]))
}

/// Anything that turns a reported pose into a ranked candidate list.
pub trait Recommender: Sync {
    fn recommend(&self, pose: &Pose, n_b: usize) -> Result<CandidateList>;

    fn recommend_batch(&self, poses: &[Pose], n_b: usize) -> Result<Vec<CandidateList>> {
        poses.par_iter().map(|p| self.recommend(p, n_b)).collect()
    }
}

impl Recommender for MlpModel {
    fn recommend(&self, pose: &Pose, n_b: usize) -> Result<CandidateList> {
        MlpModel::recommend(self, pose, n_b)
    }

    fn recommend_batch(&self, poses: &[Pose], n_b: usize) -> Result<Vec<CandidateList>> {
        let chunks: Vec<&[Pose]> = poses.chunks(512).collect();
        let lists = chunks
            .par_iter()
            .map(|chunk| {
                let o = self.predict_pairs(chunk)?;
                o.rows()
                    .into_iter()
                    .map(|row| crate::neuralnet::top_candidates(row.as_slice().expect("contiguous"), n_b))
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(lists.into_iter().flatten().collect())
    }
}

impl Recommender for GifpTable {
    fn recommend(&self, pose: &Pose, n_b: usize) -> Result<CandidateList> {
        GifpTable::recommend(self, pose, n_b)
    }
}

/// One point of a method's curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub n_b: usize,
    pub misalignment_prob: f64,
    /// `None` when scanning `n_b` pairs does not fit in a frame.
    pub mean_ese: Option<f64>,
    pub n_samples: usize,
}

fn summarize(outcomes: &[ScanOutcome], n_b: usize, t_fr: f64, t_s: f64) -> Result<CurvePoint> {
    let factor = overhead_factor(n_b, t_fr, t_s).ok();
    let mean_rate = outcomes.iter().map(|o| (1.0 + o.snr).log2()).sum::<f64>() / outcomes.len() as f64;
    Ok(CurvePoint {
        n_b,
        misalignment_prob: misalignment_probability(outcomes)?,
        mean_ese: factor.map(|f| f * mean_rate),
        n_samples: outcomes.len(),
    })
}

/// Evaluate a recommender at every `n_b`. Lists for smaller `n_b` are
/// prefixes of the longest list.
pub fn evaluate_recommender<R: Recommender + ?Sized>(rec: &R, samples: &[Sample], n_b_list: &[usize]) -> Result<Vec<CurvePoint>> {
    if samples.is_empty() || n_b_list.is_empty() {
        return Err(Error::arg("nothing to evaluate"));
    }
    let n_max = *n_b_list.iter().max().expect("non-empty");
    let poses: Vec<Pose> = samples.iter().map(|s| s.pose).collect();
    let lists = rec.recommend_batch(&poses, n_max)?;
    let rss: Vec<RssMatrix> = samples.par_iter().map(evaluation_rss).collect();
    n_b_list
        .iter()
        .map(|&n_b| {
            let outcomes = samples
                .par_iter()
                .zip(&lists)
                .zip(&rss)
                .map(|((s, l), r)| scan(r, &l.prefix(n_b), s))
                .collect::<Result<Vec<_>>>()?;
            summarize(&outcomes, n_b, T_FRAME, T_SENSE)
        })
        .collect()
}

/// Evaluate a single sample's hierarchical search on the channel rebuilt
/// from its stored gains.
pub fn hbs_outcome(sample: &Sample, cb_ap: &Codebook, cb_ut: &Codebook, p_ap: f64) -> Result<ScanOutcome> {
    let h = codebook::reconstruct_channel(&sample.gains, cb_ap, cb_ut, p_ap)?;
    let mut oracle = ChannelOracle {
        channel: &h,
        p_ap,
        noise_var: sample.gains.sigma2,
        rng: rng::stream(sample.noise_seed, &[salt::HBS]),
    };
    let res = selectors::hbs_run(&mut oracle, cb_ap.dims(), cb_ut.dims())?;
    let r = evaluation_rss(sample);
    Ok(ScanOutcome {
        chosen: res.pair,
        misaligned: r.at(res.pair) < r.max(),
        snr: sample.gains.snr_at(res.pair),
        n_b: res.sensed_pairs,
    })
}

pub fn evaluate_hbs(samples: &[Sample], cb_ap: &Codebook, cb_ut: &Codebook, p_ap: f64) -> Result<CurvePoint> {
    if samples.is_empty() {
        return Err(Error::arg("nothing to evaluate"));
    }
    let outcomes = samples.par_iter().map(|s| hbs_outcome(s, cb_ap, cb_ut, p_ap)).collect::<Result<Vec<_>>>()?;
    summarize(&outcomes, outcomes[0].n_b, T_FRAME, T_SENSE)
}

/// Genie-aided bound: the max-SNR pair at zero sensing cost.
pub fn evaluate_perfect(samples: &[Sample]) -> Result<CurvePoint> {
    if samples.is_empty() {
        return Err(Error::arg("nothing to evaluate"));
    }
    let outcomes: Vec<ScanOutcome> = samples
        .iter()
        .map(|s| {
            let chosen = s.gains.argmax();
            ScanOutcome { chosen, misaligned: false, snr: s.gains.snr_at(chosen), n_b: 0 }
        })
        .collect();
    summarize(&outcomes, 0, T_FRAME, T_SENSE)
}

/// One aggregate cell of a sweep, as written to CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub method: Method,
    pub fold: usize,
    pub init_seed: u64,
    pub n_b: usize,
    pub misalignment_prob: f64,
    pub mean_ese: Option<f64>,
    pub n_samples: usize,
}

impl SweepRow {
    pub fn from_point(method: Method, fold: usize, init_seed: u64, p: CurvePoint) -> Self {
        Self { method, fold, init_seed, n_b: p.n_b, misalignment_prob: p.misalignment_prob, mean_ese: p.mean_ese, n_samples: p.n_samples }
    }
}

pub fn write_sweep_csv<W: Write>(rows: &[SweepRow], w: W) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for row in rows {
        wtr.serialize(row).map_err(|e| Error::format(e.to_string()))?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_sweep_csv<R: std::io::Read>(r: R) -> Result<Vec<SweepRow>> {
    csv::Reader::from_reader(r).deserialize().map(|row| row.map_err(|e| Error::format(e.to_string()))).collect()
}

/// Mean curve of one method across folds and inits, sorted by `n_b`.
pub fn mean_curve(rows: &[SweepRow], method: Method) -> Vec<CurvePoint> {
    let mut n_bs: Vec<usize> = rows.iter().filter(|r| r.method == method).map(|r| r.n_b).collect();
    n_bs.sort_unstable();
    n_bs.dedup();
    n_bs.into_iter()
        .map(|n_b| {
            let cell: Vec<&SweepRow> = rows.iter().filter(|r| r.method == method && r.n_b == n_b).collect();
            let k = cell.len() as f64;
            CurvePoint {
                n_b,
                misalignment_prob: cell.iter().map(|r| r.misalignment_prob).sum::<f64>() / k,
                mean_ese: cell.iter().map(|r| r.mean_ese).sum::<Option<f64>>().map(|s| s / k),
                n_samples: cell.iter().map(|r| r.n_samples).sum(),
            }
        })
        .collect()
}
