//! DFT beam codebooks, beam-pair bookkeeping, gains and noisy RSS.
//!
//! A beam `(p, q)` of an `n_h x n_v` array points at horizontal direction
//! cosine `(2p + 1 - n_h) / n_h` and vertical direction cosine
//! `(2q + 1 - n_v) / n_v` (zero-based indices), which makes the codebook an
//! orthonormal 2-D DFT basis. Beams are flattened vertical-major,
//! `k = q * n_h + p`, matching the element ordering of
//! [`steering_vector`](crate::channel::steering_vector).
//!
//! A beam pair `(i, j)` (AP beam `i`, UT beam `j`) is flattened row-major as
//! `i * n_ut + j`.

use serde::{Deserialize, Serialize};
use ndarray::{Array1, Array2, ArrayView1};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::channel::{steering_vector, ArrayDims, ChannelMatrix, PropagationPath};
use crate::error::{Error, Result};

/// Flat beam-pair index, `ap * n_ut + ut`.
pub type PairIndex = usize;

/// Zero-based grid cosine `(2 index + 1 - n) / n`.
pub fn grid_cosine(index: usize, n: usize) -> f64 {
    (2.0 * index as f64 + 1.0 - n as f64) / n as f64
}

/// Steering angle of grid point `index`, `acos(grid_cosine(index, n))`.
pub fn grid_angle(index: usize, n: usize) -> f64 {
    grid_cosine(index, n).acos()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Codebook {
    dims: ArrayDims,
    /// Column `k` holds beam `k`.
    weights: Array2<Complex64>,
}

impl Codebook {
    pub fn dims(&self) -> ArrayDims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.weights.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn weights(&self) -> &Array2<Complex64> {
        &self.weights
    }

    pub fn beam(&self, k: usize) -> ArrayView1<'_, Complex64> {
        self.weights.column(k)
    }

    pub fn flat_index(&self, p: usize, q: usize) -> usize {
        q * self.dims.n_h + p
    }

    pub fn unflatten(&self, k: usize) -> (usize, usize) {
        (k % self.dims.n_h, k / self.dims.n_h)
    }

    /// Direction cosines `(u, w)` the beam is steered to.
    pub fn beam_cosines(&self, k: usize) -> (f64, f64) {
        let (p, q) = self.unflatten(k);
        (grid_cosine(p, self.dims.n_h), grid_cosine(q, self.dims.n_v))
    }
}

pub fn dft_codebook(n_h: usize, n_v: usize) -> Result<Codebook> {
    let dims = ArrayDims::new(n_h, n_v);
    if n_h == 0 || n_v == 0 || !dims.is_power_of_two() {
        return Err(Error::arg(format!("codebook sizes must be powers of two, got {n_h}x{n_v}")));
    }
    let mut weights = Array2::zeros((dims.len(), dims.len()));
    for q in 0..n_v {
        for p in 0..n_h {
            let beam = steering_vector(dims, grid_cosine(p, n_h), grid_cosine(q, n_v));
            weights.column_mut(q * n_h + p).assign(&beam);
        }
    }
    Ok(Codebook { dims, weights })
}

/// Row-major `(n_ap, n_ut)` layout of flattened beam pairs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairLayout {
    pub n_ap: usize,
    pub n_ut: usize,
}

impl PairLayout {
    pub fn len(&self) -> usize {
        self.n_ap * self.n_ut
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn flatten(&self, ap: usize, ut: usize) -> PairIndex {
        ap * self.n_ut + ut
    }

    pub fn split(&self, idx: PairIndex) -> (usize, usize) {
        (idx / self.n_ut, idx % self.n_ut)
    }
}

/// Noiseless per-pair SNR `P |v_j^H H u_i|^2 / sigma2` together with the
/// phase of `v_j^H H u_i` and the noise power the SNR refers to.
#[derive(Debug, Clone, PartialEq)]
pub struct GainMatrix {
    pub snr: Array2<f64>,
    pub phase: Array2<f64>,
    pub sigma2: f64,
}

impl GainMatrix {
    pub fn layout(&self) -> PairLayout {
        PairLayout { n_ap: self.snr.nrows(), n_ut: self.snr.ncols() }
    }

    /// Received signal amplitude `sqrt(P) v_j^H H u_i`.
    pub fn amplitude(&self, i: usize, j: usize) -> Complex64 {
        Complex64::from_polar((self.sigma2 * self.snr[(i, j)]).sqrt(), self.phase[(i, j)])
    }

    pub fn amplitudes(&self) -> Array2<Complex64> {
        Array2::from_shape_fn(self.snr.dim(), |(i, j)| self.amplitude(i, j))
    }

    pub fn snr_at(&self, idx: PairIndex) -> f64 {
        let (i, j) = self.layout().split(idx);
        self.snr[(i, j)]
    }

    pub fn argmax(&self) -> PairIndex {
        argmax_flat(self.snr.iter().copied())
    }

    pub fn max_snr(&self) -> f64 {
        self.snr.iter().copied().fold(0.0, f64::max)
    }

    /// Round SNR and phase to `f32`, the precision they are persisted at.
    pub fn quantized(&self) -> GainMatrix {
        let q = |a: &Array2<f64>| a.mapv(|x| x as f32 as f64);
        GainMatrix { snr: q(&self.snr), phase: q(&self.phase), sigma2: self.sigma2 }
    }
}

/// Index of the largest value; ties resolved toward the smaller index.
pub(crate) fn argmax_flat(values: impl Iterator<Item = f64>) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (k, v) in values.enumerate() {
        if v > best.1 {
            best = (k, v);
        }
    }
    best.0
}

fn check_channel(h: &ChannelMatrix, cb_ap: &Codebook, cb_ut: &Codebook) -> Result<()> {
    if h.n_ap() != cb_ap.dims().len() || h.n_ut() != cb_ut.dims().len() {
        return Err(Error::Dimension(format!(
            "channel is {}x{} but codebooks expect {}x{}",
            h.n_ut(),
            h.n_ap(),
            cb_ut.dims().len(),
            cb_ap.dims().len()
        )));
    }
    Ok(())
}

/// `(n_ap_beams, n_ut_beams)` matrix of `v_j^H H u_i`.
pub fn beam_responses(h: &ChannelMatrix, cb_ap: &Codebook, cb_ut: &Codebook) -> Result<Array2<Complex64>> {
    check_channel(h, cb_ap, cb_ut)?;
    let hu = h.matrix().dot(cb_ap.weights());
    let vh = cb_ut.weights().t().mapv(|x| x.conj());
    Ok(vh.dot(&hu).reversed_axes())
}

/// Same as assembling the channel from `paths` and calling
/// [`beam_responses`], but exploits the rank-one structure of each path.
pub fn beam_responses_from_paths(
    paths: &[PropagationPath],
    cb_ap: &Codebook,
    cb_ut: &Codebook,
) -> Array2<Complex64> {
    let mut out = Array2::zeros((cb_ap.len(), cb_ut.len()));
    for path in paths {
        let a_ap = crate::channel::array_response(cb_ap.dims(), path.aod);
        let a_ut = crate::channel::array_response(cb_ut.dims(), path.aoa);
        // a_AP^H u_i and v_j^H a_UT
        let proj_ap = cb_ap.weights().t().dot(&a_ap.mapv(|x| x.conj()));
        let proj_ut = cb_ut.weights().t().mapv(|x| x.conj()).dot(&a_ut);
        let g = path.complex_gain();
        for (i, &pa) in proj_ap.iter().enumerate() {
            let gp = g * pa;
            for (j, &pu) in proj_ut.iter().enumerate() {
                out[(i, j)] += gp * pu;
            }
        }
    }
    out
}

pub fn gains_from_responses(responses: &Array2<Complex64>, p_ap: f64, sigma2: f64) -> Result<GainMatrix> {
    if !(sigma2 > 0.0 && p_ap >= 0.0) {
        return Err(Error::arg("noise power must be positive and transmit power non-negative"));
    }
    Ok(GainMatrix {
        snr: responses.mapv(|c| p_ap * c.norm_sqr() / sigma2),
        phase: responses.mapv(|c| c.arg()),
        sigma2,
    })
}

pub fn gain_matrix(h: &ChannelMatrix, cb_ap: &Codebook, cb_ut: &Codebook, p_ap: f64, sigma2: f64) -> Result<GainMatrix> {
    gains_from_responses(&beam_responses(h, cb_ap, cb_ut)?, p_ap, sigma2)
}

/// Rebuild the channel from a gain matrix. Both codebooks are orthonormal
/// bases, so `H = V A^T U^H / sqrt(P)` with `A[i, j] = sqrt(P) v_j^H H u_i`.
pub fn reconstruct_channel(g: &GainMatrix, cb_ap: &Codebook, cb_ut: &Codebook, p_ap: f64) -> Result<ChannelMatrix> {
    let layout = g.layout();
    if layout.n_ap != cb_ap.len() || layout.n_ut != cb_ut.len() {
        return Err(Error::Dimension("gain matrix does not match codebooks".into()));
    }
    let a = g.amplitudes();
    let uh = cb_ap.weights().t().mapv(|x| x.conj());
    let h = cb_ut.weights().dot(&a.t()).dot(&uh) / Complex64::new(p_ap.sqrt(), 0.0);
    Ok(ChannelMatrix(h))
}

/// Received signal strengths `R[i, j] = |c_ij + w_ij|^2`, `(n_ap, n_ut)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RssMatrix(pub Array2<f64>);

impl RssMatrix {
    pub fn at(&self, idx: PairIndex) -> f64 {
        self.0.as_slice().expect("standard layout")[idx]
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("standard layout")
    }

    pub fn argmax(&self) -> PairIndex {
        argmax_flat(self.0.iter().copied())
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Circularly-symmetric complex Gaussian sample with variance `var`.
pub fn complex_noise<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (var / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// One noisy RSS measurement of every beam pair. The combined signal is
/// `sqrt(sigma2 * snr) e^{j phase}`; the noise after a unit-norm combiner is
/// complex Gaussian with variance `noise_var` (normally `g.sigma2`). Draws
/// are taken in row-major pair order.
pub fn measure_rss<R: Rng + ?Sized>(g: &GainMatrix, noise_var: f64, rng: &mut R) -> RssMatrix {
    let mut out = Array2::zeros(g.snr.dim());
    for ((i, j), r) in out.indexed_iter_mut() {
        let noise = if noise_var > 0.0 { complex_noise(rng, noise_var) } else { Complex64::new(0.0, 0.0) };
        *r = (g.amplitude(i, j) + noise).norm_sqr();
    }
    RssMatrix(out)
}

/// Hierarchical codeword: an active `2^k_v x 2^k_h` corner sub-array steered
/// to the level-grid cosines, remaining elements switched off, unit norm.
/// `n_h_idx` and `n_v_idx` are one-based, as in the level grids
/// `(2 n - 1 - N_k) / N_k`.
pub fn deact_codeword(k_h: u32, k_v: u32, n_h_idx: usize, n_v_idx: usize, dims: ArrayDims) -> Result<Array1<Complex64>> {
    if !dims.is_power_of_two() {
        return Err(Error::arg("hierarchical codewords need power-of-two arrays"));
    }
    let (levels_h, levels_v) = (dims.n_h.trailing_zeros(), dims.n_v.trailing_zeros());
    if k_h > levels_h || k_v > levels_v {
        return Err(Error::arg(format!("level ({k_h}, {k_v}) exceeds array depth ({levels_h}, {levels_v})")));
    }
    let (nk_h, nk_v) = (1usize << k_h, 1usize << k_v);
    if !(1..=nk_h).contains(&n_h_idx) || !(1..=nk_v).contains(&n_v_idx) {
        return Err(Error::arg(format!(
            "codeword index ({n_h_idx}, {n_v_idx}) out of range for level sizes ({nk_h}, {nk_v})"
        )));
    }
    let sub = steering_vector(ArrayDims::new(nk_h, nk_v), grid_cosine(n_h_idx - 1, nk_h), grid_cosine(n_v_idx - 1, nk_v));
    let mut w = Array1::zeros(dims.len());
    for v in 0..nk_v {
        for h in 0..nk_h {
            w[v * dims.n_h + h] = sub[v * nk_h + h];
        }
    }
    Ok(w)
}
