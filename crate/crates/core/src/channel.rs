//! Narrowband multipath channels for a shoebox room.
//!
//! Paths come from an image-method tracer (line of sight plus specular wall
//! reflections). Each path contributes a rank-one term
//! `sqrt(rho) e^{j vartheta} a_UT(aoa) a_AP(aod)^H` to the channel matrix.

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::geometry::{dir_to_array_angles, global_to_local, ArrayAngles, Pose, Vec3};

/// Maximum number of paths kept per UT position.
pub const MAX_PATHS: usize = 25;

/// Element counts of a uniform planar array with half-wavelength spacing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArrayDims {
    pub n_h: usize,
    pub n_v: usize,
}

impl ArrayDims {
    pub const fn new(n_h: usize, n_v: usize) -> Self {
        Self { n_h, n_v }
    }

    pub fn len(&self) -> usize {
        self.n_h * self.n_v
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_power_of_two(&self) -> bool {
        self.n_h.is_power_of_two() && self.n_v.is_power_of_two()
    }
}

/// Unit-norm steering vector for horizontal direction cosine `u` (along local
/// x) and vertical direction cosine `w` (along local z).
///
/// Element `(h, v)` sits at flat index `v * n_h + h` and carries phase
/// `pi * (h u + v w)`, i.e. the Kronecker ordering `a_E ⊗ a_A`.
pub fn steering_vector(dims: ArrayDims, u: f64, w: f64) -> Array1<Complex64> {
    let norm = 1.0 / (dims.len() as f64).sqrt();
    let mut out = Array1::zeros(dims.len());
    for v in 0..dims.n_v {
        for h in 0..dims.n_h {
            let phase = PI * (h as f64 * u + v as f64 * w);
            out[v * dims.n_h + h] = Complex64::from_polar(norm, phase);
        }
    }
    out
}

/// Array response toward `angles`, using `sin(theta) cos(phi)` along the
/// horizontal axis and `cos(theta)` along the vertical axis.
pub fn array_response(dims: ArrayDims, angles: ArrayAngles) -> Array1<Complex64> {
    let (u, w) = angles.direction_cosines();
    steering_vector(dims, u, w)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl GridBounds {
    pub fn contains(&self, p: &[f64; 3], tol: f64) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] - tol && p[k] <= self.max[k] + tol)
    }
}

/// Shoebox room `[0, width] x [0, length] x [0, height]` with a fixed AP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Room {
    pub width: f64,
    pub length: f64,
    pub height: f64,
    pub ap_pose: Pose,
    pub user_grid: GridBounds,
    pub carrier_wavelength: f64,
    /// Amplitude reflection coefficient applied per wall bounce.
    pub reflection_coeff: f64,
}

impl Room {
    pub fn extent(&self) -> [f64; 3] {
        [self.width, self.length, self.height]
    }

    pub fn contains(&self, p: &[f64; 3]) -> bool {
        let e = self.extent();
        (0..3).all(|k| p[k] >= -1e-9 && p[k] <= e[k] + 1e-9)
    }

    pub fn validate(&self) -> Result<()> {
        let e = self.extent();
        if e.iter().any(|&d| !(d.is_finite() && d > 0.0)) {
            return Err(Error::config("room dimensions must be positive"));
        }
        if !self.contains(&self.ap_pose.position) {
            return Err(Error::config("AP position lies outside the room"));
        }
        let g = &self.user_grid;
        if !(self.contains(&g.min) && self.contains(&g.max)) || (0..3).any(|k| g.min[k] > g.max[k]) {
            return Err(Error::config("user grid must be a non-empty box inside the room"));
        }
        if !(self.carrier_wavelength.is_finite() && self.carrier_wavelength > 0.0) {
            return Err(Error::config("carrier wavelength must be positive"));
        }
        if !(0.0..=1.0).contains(&self.reflection_coeff) {
            return Err(Error::config("reflection coefficient must lie in [0, 1]"));
        }
        Ok(())
    }

    fn walls(&self) -> [Wall; 6] {
        let e = self.extent();
        let mut walls = [Wall { axis: 0, coord: 0.0 }; 6];
        for axis in 0..3 {
            walls[2 * axis] = Wall { axis, coord: 0.0 };
            walls[2 * axis + 1] = Wall { axis, coord: e[axis] };
        }
        walls
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Wall {
    axis: usize,
    coord: f64,
}

impl Wall {
    fn mirror(&self, p: &Vec3) -> Vec3 {
        let mut q = *p;
        q[self.axis] = 2.0 * self.coord - p[self.axis];
        q
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationPath {
    /// Number of wall reflections; 0 is line of sight.
    pub order: usize,
    /// Linear power gain `rho`.
    pub power: f64,
    /// Phase `vartheta` in `[0, 2 pi)`.
    pub phase: f64,
    /// Departure angles in the AP frame.
    pub aod: ArrayAngles,
    /// Arrival angles in the UT frame (direction toward the last bounce).
    pub aoa: ArrayAngles,
    pub length: f64,
}

impl PropagationPath {
    pub fn is_los(&self) -> bool {
        self.order == 0
    }

    pub fn complex_gain(&self) -> Complex64 {
        Complex64::from_polar(self.power.sqrt(), self.phase)
    }
}

/// All wall sequences up to `max_order` bounces with no wall hit twice in a row.
fn wall_sequences(max_order: usize) -> Vec<Vec<usize>> {
    let mut out = vec![Vec::new()];
    let mut frontier = vec![Vec::new()];
    for _ in 0..max_order {
        let mut next = Vec::new();
        for seq in &frontier {
            for w in 0..6 {
                if seq.last() != Some(&w) {
                    let mut s: Vec<usize> = seq.clone();
                    s.push(w);
                    next.push(s);
                }
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

/// Bounce points of a specular path through `seq`, ordered from the AP side,
/// or `None` if the image is not geometrically realizable.
fn bounce_points(room: &Room, walls: &[Wall; 6], ap: &Vec3, ut: &Vec3, seq: &[usize]) -> Option<(Vec<Vec3>, f64)> {
    let mut images = Vec::with_capacity(seq.len() + 1);
    images.push(*ap);
    for &w in seq {
        let last = *images.last().unwrap();
        images.push(walls[w].mirror(&last));
    }
    let length = (ut - images[seq.len()]).norm();

    const EPS: f64 = 1e-9;
    let extent = room.extent();
    let mut points = Vec::with_capacity(seq.len());
    let mut p = *ut;
    for k in (0..seq.len()).rev() {
        let wall = walls[seq[k]];
        let target = images[k + 1];
        let denom = target[wall.axis] - p[wall.axis];
        if denom.abs() < EPS {
            return None;
        }
        let t = (wall.coord - p[wall.axis]) / denom;
        if !(t > EPS && t < 1.0 - EPS) {
            return None;
        }
        let hit = p + (target - p) * t;
        let inside = (0..3).all(|a| a == wall.axis || (hit[a] >= -EPS && hit[a] <= extent[a] + EPS));
        if !inside {
            return None;
        }
        points.push(hit);
        p = hit;
    }
    if (p - ap).norm() < EPS {
        return None;
    }
    points.reverse();
    Some((points, length))
}

/// Trace the line-of-sight path and all specular reflections up to
/// `max_order` bounces, strongest first, truncated to [`MAX_PATHS`].
pub fn trace_paths(room: &Room, ut_pose: &Pose, max_order: usize) -> Result<Vec<PropagationPath>> {
    if max_order > 2 {
        return Err(Error::arg(format!("max_order must be at most 2, got {max_order}")));
    }
    if !room.contains(&ut_pose.position) {
        return Err(Error::arg("UT position lies outside the room"));
    }
    let ap = room.ap_pose.position_vec();
    let ut = ut_pose.position_vec();
    if (ap - ut).norm() < 1e-9 {
        return Err(Error::arg("UT coincides with the AP"));
    }

    let walls = room.walls();
    let lambda = room.carrier_wavelength;
    let mut paths = Vec::new();
    for seq in wall_sequences(max_order) {
        let Some((points, length)) = bounce_points(room, &walls, &ap, &ut, &seq) else {
            continue;
        };
        let order = seq.len();
        let free_space = lambda / (4.0 * PI * length);
        let power = free_space * free_space * room.reflection_coeff.powi(2 * order as i32);
        if power <= 0.0 {
            continue;
        }
        let first = points.first().copied().unwrap_or(ut);
        let last = points.last().copied().unwrap_or(ap);
        let depart = (first - ap).normalize();
        let arrive = (last - ut).normalize();
        let aod = dir_to_array_angles(&global_to_local(&depart, &room.ap_pose)?)?;
        let aoa = dir_to_array_angles(&global_to_local(&arrive, ut_pose)?)?;
        paths.push(PropagationPath {
            order,
            power,
            phase: (-2.0 * PI * length / lambda).rem_euclid(2.0 * PI),
            aod,
            aoa,
            length,
        });
    }
    paths.sort_by(|a, b| b.power.total_cmp(&a.power).then(a.length.total_cmp(&b.length)));
    paths.truncate(MAX_PATHS);
    Ok(paths)
}

/// Stochastic path blockage: LOS removal probability plus per-order NLOS
/// removal probabilities (`p_order[k - 1]` for order `k`; orders past the end
/// of the list are never blocked).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockageConfig {
    pub p_los: f64,
    pub p_order: Vec<f64>,
}

impl Default for BlockageConfig {
    fn default() -> Self {
        Self { p_los: 0.0, p_order: vec![0.2, 0.4] }
    }
}

impl BlockageConfig {
    pub fn none() -> Self {
        Self { p_los: 0.0, p_order: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |p: f64| (0.0..=1.0).contains(&p);
        if !ok(self.p_los) || !self.p_order.iter().copied().all(ok) {
            return Err(Error::config("blockage probabilities must lie in [0, 1]"));
        }
        Ok(())
    }

    fn probability(&self, order: usize) -> f64 {
        match order {
            0 => self.p_los,
            k => self.p_order.get(k - 1).copied().unwrap_or(0.0),
        }
    }
}

/// Remove paths independently according to `cfg`. If every path is drawn
/// blocked, the strongest NLOS path survives (or the strongest path when
/// there is no NLOS path at all).
pub fn apply_blockage<R: Rng + ?Sized>(
    paths: &[PropagationPath],
    cfg: &BlockageConfig,
    rng: &mut R,
) -> Result<Vec<PropagationPath>> {
    if paths.is_empty() {
        return Err(Error::arg("cannot apply blockage to an empty path list"));
    }
    let kept: Vec<PropagationPath> = paths
        .iter()
        .filter(|p| rng.random::<f64>() >= cfg.probability(p.order))
        .copied()
        .collect();
    if !kept.is_empty() {
        return Ok(kept);
    }
    let strongest = |it: &mut dyn Iterator<Item = &PropagationPath>| {
        // First of equally strong paths wins.
        it.reduce(|best, p| if p.power > best.power { p } else { best }).copied()
    };
    let fallback = strongest(&mut paths.iter().filter(|p| !p.is_los()))
        .or_else(|| strongest(&mut paths.iter()))
        .expect("non-empty");
    Ok(vec![fallback])
}

/// Channel matrix with `N_UT` rows and `N_AP` columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelMatrix(pub Array2<Complex64>);

impl ChannelMatrix {
    pub fn matrix(&self) -> &Array2<Complex64> {
        &self.0
    }

    pub fn n_ut(&self) -> usize {
        self.0.nrows()
    }

    pub fn n_ap(&self) -> usize {
        self.0.ncols()
    }
}

pub fn assemble_channel(paths: &[PropagationPath], ap: ArrayDims, ut: ArrayDims) -> Result<ChannelMatrix> {
    if paths.is_empty() {
        return Err(Error::arg("channel needs at least one path"));
    }
    let mut h = Array2::<Complex64>::zeros((ut.len(), ap.len()));
    for path in paths {
        let g = path.complex_gain();
        let a_ut = array_response(ut, path.aoa);
        let a_ap = array_response(ap, path.aod);
        for (r, &x) in a_ut.iter().enumerate() {
            let gx = g * x;
            for (c, &y) in a_ap.iter().enumerate() {
                h[(r, c)] += gx * y.conj();
            }
        }
    }
    Ok(ChannelMatrix(h))
}
