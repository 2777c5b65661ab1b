//! Leafwise Brownian motion on G/K by geodesic random walk, Krylov-Bogolyubov
//! sampling, and rank-one boundary objects (Poisson kernel, modular function,
//! exit directions).
//!
//! Time convention: the semigroup is `exp(t Laplacian)`, so a geodesic step of
//! length eps in a uniform direction advances time by `eps^2 / (2 dim G/K)`.
//!
//! Points of G/K are stored by their NA representative `T` (upper triangular,
//! positive diagonal). A step `T exp(eps X) K` equals `T S K` where `S` is the
//! NA part of `exp(eps X)`, i.e. the upper-triangular factor with
//! `S S^T = exp(2 eps X)`. Products of NA elements stay in NA, so the walk
//! never needs a general refactorization.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::decomp::{cartan, radial_component};
use crate::error::{Error, Result};
use crate::group::GroupElement;
use crate::parallel::try_par_map;
use crate::rng::{stream, Domain};
use crate::rootdata::{GroupId, WALL_TOLERANCE};

pub const MAX_STEP_LENGTH: f64 = 0.05;
pub const DEFAULT_STEP_LENGTH: f64 = 0.02;

/// How often the walk checks its state for overflow.
const FINITE_CHECK_INTERVAL: u64 = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiffusionConfig {
    pub group: GroupId,
    pub step_length: f64,
    pub seed: u64,
    pub paths: usize,
    pub horizon: f64,
}

impl DiffusionConfig {
    pub fn new(
        group: GroupId,
        step_length: f64,
        seed: u64,
        paths: usize,
        horizon: f64,
    ) -> Result<Self> {
        let c = DiffusionConfig {
            group,
            step_length,
            seed,
            paths,
            horizon,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_length > 0.0 && self.step_length <= MAX_STEP_LENGTH) {
            return Err(Error::usage(format!(
                "step length must lie in (0, {MAX_STEP_LENGTH}], got {}",
                self.step_length
            )));
        }
        if self.paths == 0 {
            return Err(Error::usage("paths must be at least 1"));
        }
        if !(self.horizon >= 0.0) || !self.horizon.is_finite() {
            return Err(Error::usage("horizon must be finite and nonnegative"));
        }
        Ok(())
    }

    /// Time advanced by one geodesic step.
    pub fn time_step(&self) -> f64 {
        self.step_length * self.step_length / (2.0 * self.group.symmetric_space_dim() as f64)
    }

    /// Number of steps until the accumulated time reaches `horizon`.
    pub fn steps_for(&self, horizon: f64) -> u64 {
        let ratio = horizon / self.time_step();
        // Guard against ratio = k + tiny from rounding in the division.
        let r = ratio.round();
        if (ratio - r).abs() <= 1e-9 * r.max(1.0) {
            r as u64
        } else {
            ratio.ceil() as u64
        }
    }
}

/// Unit direction in the tangent space at the basepoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Direction {
    /// `(cos b, sin b)` for `X = [[cos b, sin b], [sin b, -cos b]] / sqrt 2`.
    Sl2(f64, f64),
    /// Coefficients in the orthonormal basis of symmetric traceless 3x3
    /// matrices: diag(1,-1,0)/sqrt2, diag(1,1,-2)/sqrt6, then the symmetric
    /// off-diagonal units for (0,1), (0,2), (1,2), each divided by sqrt 2.
    Sl3([f64; 5]),
}

fn draw_sl2(rng: &mut ChaCha8Rng) -> (f64, f64) {
    // Uniform point in the unit disk; its doubled angle is uniform on the circle.
    loop {
        let u: f64 = rng.random::<f64>() * 2.0 - 1.0;
        let v: f64 = rng.random::<f64>() * 2.0 - 1.0;
        let r2 = u * u + v * v;
        if r2 > 1e-12 && r2 <= 1.0 {
            return ((u * u - v * v) / r2, 2.0 * u * v / r2);
        }
    }
}

fn draw_sl3(rng: &mut ChaCha8Rng) -> [f64; 5] {
    loop {
        let mut c = [0.0; 5];
        for x in c.iter_mut() {
            *x = rng.sample(StandardNormal);
        }
        let n = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return c.map(|x| x / n);
        }
    }
}

pub fn draw_direction(group: GroupId, rng: &mut ChaCha8Rng) -> Direction {
    match group {
        GroupId::Sl2 => {
            let (c, s) = draw_sl2(rng);
            Direction::Sl2(c, s)
        }
        GroupId::Sl3 => Direction::Sl3(draw_sl3(rng)),
    }
}

impl Direction {
    /// The direction as a symmetric traceless matrix of unit trace norm.
    pub fn matrix(&self) -> DMatrix<f64> {
        match *self {
            Direction::Sl2(c, s) => DMatrix::from_row_slice(2, 2, &[c, s, s, -c]) / 2f64.sqrt(),
            Direction::Sl3(c) => {
                let m = sl3_symmetric(&c);
                DMatrix::from_row_slice(
                    3,
                    3,
                    &[m[0], m[1], m[2], m[1], m[3], m[4], m[2], m[4], m[5]],
                )
            }
        }
    }
}

/// Upper triangle `[x00, x01, x02, x11, x12, x22]` of the sl3 direction.
fn sl3_symmetric(c: &[f64; 5]) -> [f64; 6] {
    let r2 = std::f64::consts::FRAC_1_SQRT_2;
    let r6 = 1.0 / 6f64.sqrt();
    [
        c[0] * r2 + c[1] * r6,
        c[2] * r2,
        c[3] * r2,
        -c[0] * r2 + c[1] * r6,
        c[4] * r2,
        -2.0 * c[1] * r6,
    ]
}

type Sym3 = [f64; 6];

/// `a * a` for symmetric `a`.
fn sym_square(a: &Sym3) -> Sym3 {
    let [a00, a01, a02, a11, a12, a22] = *a;
    [
        a00 * a00 + a01 * a01 + a02 * a02,
        a00 * a01 + a01 * a11 + a02 * a12,
        a00 * a02 + a01 * a12 + a02 * a22,
        a01 * a01 + a11 * a11 + a12 * a12,
        a01 * a02 + a11 * a12 + a12 * a22,
        a02 * a02 + a12 * a12 + a22 * a22,
    ]
}

/// `exp(Y)` for small symmetric traceless Y.
///
/// Cayley-Hamilton gives `Y^3 = p Y + q I` with `p = tr(Y^2)/2`, `q = det Y`,
/// so every power is `a I + b Y + c Y^2`; the Taylor series is summed on
/// those three coefficients (10 terms, below round-off for |Y| <= 0.1).
fn sym_exp_small(y: &Sym3) -> Sym3 {
    let y2 = sym_square(y);
    let p = 0.5 * (y2[0] + y2[3] + y2[5]);
    let [y00, y01, y02, y11, y12, y22] = *y;
    let q = y00 * (y11 * y22 - y12 * y12) - y01 * (y01 * y22 - y12 * y02)
        + y02 * (y01 * y12 - y11 * y02);
    let (mut a, mut b, mut c) = (1.0, 0.0, 0.0);
    let (mut f0, mut f1, mut f2) = (1.0, 0.0, 0.0);
    const INV: [f64; 10] = [
        1.0,
        0.5,
        1.0 / 3.0,
        0.25,
        0.2,
        1.0 / 6.0,
        1.0 / 7.0,
        0.125,
        1.0 / 9.0,
        0.1,
    ];
    for inv in INV {
        let (na, nb, nc) = (c * q * inv, (a + c * p) * inv, b * inv);
        a = na;
        b = nb;
        c = nc;
        f0 += a;
        f1 += b;
        f2 += c;
    }
    [
        f0 + f1 * y00 + f2 * y2[0],
        f1 * y01 + f2 * y2[1],
        f1 * y02 + f2 * y2[2],
        f0 + f1 * y11 + f2 * y2[3],
        f1 * y12 + f2 * y2[4],
        f0 + f1 * y22 + f2 * y2[5],
    ]
}

/// Upper-triangular `S` with positive diagonal and `S S^T = P` for `det P = 1`,
/// as `[s00, s01, s02, s11, s12, s22]`. The last diagonal entry is taken from
/// `det S = 1`, which keeps the walk exactly unimodular up to round-off.
fn upper_cholesky(p: &Sym3) -> [f64; 6] {
    let s22 = p[5].sqrt();
    let r22 = 1.0 / s22;
    let s12 = p[4] * r22;
    let s02 = p[2] * r22;
    let s11 = (p[3] - s12 * s12).sqrt();
    let s01 = (p[1] - s02 * s12) / s11;
    let s00 = r22 / s11;
    [s00, s01, s02, s11, s12, s22]
}

/// NA representative of a point of SL(3)/SO(3), upper triangle stored.
#[derive(Debug, Clone, Copy)]
struct Sl3Point([f64; 6]);

impl Sl3Point {
    fn origin() -> Self {
        Sl3Point([1.0, 0.0, 0.0, 1.0, 0.0, 1.0])
    }

    fn step(&mut self, dir: &[f64; 5], eps: f64) {
        let x = sl3_symmetric(dir);
        let y = x.map(|v| 2.0 * eps * v);
        let s = upper_cholesky(&sym_exp_small(&y));
        let t = self.0;
        self.0 = [
            t[0] * s[0],
            t[0] * s[1] + t[1] * s[3],
            t[0] * s[2] + t[1] * s[4] + t[2] * s[5],
            t[3] * s[3],
            t[3] * s[4] + t[4] * s[5],
            t[5] * s[5],
        ];
    }

    fn is_finite(&self) -> bool {
        let t = &self.0;
        t.iter().all(|v| v.is_finite()) && t[0] > 0.0 && t[3] > 0.0 && t[5] > 0.0
    }

    fn element(&self) -> GroupElement {
        let t = self.0;
        let m = DMatrix::from_row_slice(3, 3, &[t[0], t[1], t[2], 0.0, t[3], t[4], 0.0, 0.0, t[5]]);
        GroupElement::from_matrix_unchecked(GroupId::Sl3, m)
    }
}

/// A point `x + i y` of the upper half plane; `T = [[sqrt y, x/sqrt y], [0, 1/sqrt y]]`.
#[derive(Debug, Clone, Copy)]
struct Sl2Point {
    x: f64,
    y: f64,
}

impl Sl2Point {
    fn origin() -> Self {
        Sl2Point { x: 0.0, y: 1.0 }
    }

    /// Moves to `T exp(eps X) i`, where `exp(eps X) = cosh(s) I + sinh(s) sqrt2 X`,
    /// `s = eps / sqrt 2`; the precomputed pair is `(cosh s, sinh s)`.
    fn step(&mut self, c: f64, s: f64, ch: f64, sh: f64) {
        let a = ch + sh * c;
        let b = sh * s;
        let d = ch - sh * c;
        // w = (a i + b) / (b i + d)
        let den = d * d + b * b;
        let wr = (b * d + a * b) / den;
        let wi = (a * d - b * b) / den;
        self.x += self.y * wr;
        self.y *= wi;
    }

    fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.y > 0.0
    }

    fn element(&self) -> GroupElement {
        let r = self.y.sqrt();
        let m = DMatrix::from_row_slice(2, 2, &[r, self.x / r, 0.0, 1.0 / r]);
        GroupElement::from_matrix_unchecked(GroupId::Sl2, m)
    }
}

fn overflow(step: u64) -> Error {
    Error::numerical(
        "diffusion",
        "simulate_path",
        format!("non-finite state at step {step}"),
    )
}

/// Runs `steps` geodesic steps of length `eps` from the basepoint.
fn walk(group: GroupId, eps: f64, steps: u64, rng: &mut ChaCha8Rng) -> Result<GroupElement> {
    match group {
        GroupId::Sl2 => walk_sl2(Sl2Point::origin(), eps, steps, rng),
        GroupId::Sl3 => {
            let mut p = Sl3Point::origin();
            for k in 0..steps {
                let d = draw_sl3(rng);
                p.step(&d, eps);
                if (k + 1) % FINITE_CHECK_INTERVAL == 0 && !p.is_finite() {
                    return Err(overflow(k + 1));
                }
            }
            if !p.is_finite() {
                return Err(overflow(steps));
            }
            Ok(p.element())
        }
    }
}

/// Continues a walk in the hyperbolic plane from the point `start i`; returns
/// the NA representative of the endpoint.
pub fn walk_from(
    start: &GroupElement,
    cfg: &DiffusionConfig,
    steps: u64,
    rng: &mut ChaCha8Rng,
) -> Result<GroupElement> {
    require_sl2(start, "walk_from")?;
    let (x, y) = upper_half_plane_point(start);
    walk_sl2(Sl2Point { x, y }, cfg.step_length, steps, rng)
}

fn walk_sl2(start: Sl2Point, eps: f64, steps: u64, rng: &mut ChaCha8Rng) -> Result<GroupElement> {
    let s = eps * std::f64::consts::FRAC_1_SQRT_2;
    let (ch, sh) = (s.cosh(), s.sinh());
    let mut p = start;
    for k in 0..steps {
        let (c, sn) = draw_sl2(rng);
        p.step(c, sn, ch, sh);
        if (k + 1) % FINITE_CHECK_INTERVAL == 0 && !p.is_finite() {
            return Err(overflow(k + 1));
        }
    }
    if !p.is_finite() {
        return Err(overflow(steps));
    }
    Ok(p.element())
}

/// Endpoint (NA representative) of path `path_index` at the configured horizon.
pub fn simulate_path(cfg: &DiffusionConfig, path_index: u64) -> Result<GroupElement> {
    cfg.validate()?;
    let mut rng = stream(cfg.seed, Domain::Path, path_index);
    walk(
        cfg.group,
        cfg.step_length,
        cfg.steps_for(cfg.horizon),
        &mut rng,
    )
}

/// Krylov-Bogolyubov sample: `T` uniform in `{0, .., n-1}`, then the endpoint
/// of path `path_index` at horizon `T`.
pub fn kb_sample(cfg: &DiffusionConfig, n: u64, path_index: u64) -> Result<GroupElement> {
    cfg.validate()?;
    let (_, g) = kb_sample_with_time(cfg, n, path_index)?;
    Ok(g)
}

pub fn kb_sample_with_time(
    cfg: &DiffusionConfig,
    n: u64,
    path_index: u64,
) -> Result<(u64, GroupElement)> {
    if n == 0 {
        return Err(Error::usage(
            "Krylov-Bogolyubov horizon n must be at least 1",
        ));
    }
    let time = stream(cfg.seed, Domain::KbTime, path_index).random_range(0..n);
    let mut rng = stream(cfg.seed, Domain::Path, path_index);
    let g = walk(
        cfg.group,
        cfg.step_length,
        cfg.steps_for(time as f64),
        &mut rng,
    )?;
    Ok((time, g))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffusionSampleSet {
    pub config: DiffusionConfig,
    pub endpoints: Vec<GroupElement>,
    pub elapsed: Vec<f64>,
    /// Path-stream index of each sample.
    pub substreams: Vec<u64>,
}

/// All `cfg.paths` endpoints, computed on `workers` threads.
pub fn simulate(cfg: &DiffusionConfig, workers: usize) -> Result<DiffusionSampleSet> {
    cfg.validate()?;
    let endpoints = try_par_map(cfg.paths, workers, |i| simulate_path(cfg, i as u64))?;
    let elapsed = cfg.steps_for(cfg.horizon) as f64 * cfg.time_step();
    Ok(DiffusionSampleSet {
        config: *cfg,
        elapsed: vec![elapsed; endpoints.len()],
        substreams: (0..endpoints.len() as u64).collect(),
        endpoints,
    })
}

impl DiffusionSampleSet {
    /// Radial components (Weyl-chamber coordinates) of all endpoints.
    pub fn radial_components(&self) -> Result<Vec<Vec<f64>>> {
        self.endpoints
            .iter()
            .map(|g| radial_component(g).map(|h| h.coords().to_vec()))
            .collect()
    }

    /// Componentwise mean of `radial_component / elapsed`.
    pub fn mean_radial_rate(&self) -> Result<Vec<f64>> {
        let radial = self.radial_components()?;
        let n = self.config.group.matrix_dim();
        let mut mean = vec![0.0; n];
        for (h, t) in radial.iter().zip(&self.elapsed) {
            for (m, x) in mean.iter_mut().zip(h) {
                *m += x / t;
            }
        }
        let count = radial.len() as f64;
        Ok(mean.into_iter().map(|m| m / count).collect())
    }
}

/// A point of the circle K/M, `theta = 2 phi` for the rotation angle `phi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPoint {
    angle: f64,
}

impl BoundaryPoint {
    pub fn new(angle: f64) -> Result<Self> {
        if !angle.is_finite() {
            return Err(Error::usage("boundary angle must be finite"));
        }
        let mut a = angle.rem_euclid(TAU);
        if a >= TAU {
            a = 0.0;
        }
        Ok(BoundaryPoint { angle: a })
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    /// Rotation angle of a representative in K (defined mod pi).
    pub fn k_angle(&self) -> f64 {
        self.angle / 2.0
    }

    /// The same point on the real line of the upper half plane (`cot(theta/2)`; infinite at 0).
    pub fn real_line(&self) -> f64 {
        let (s, c) = (self.angle / 2.0).sin_cos();
        c / s
    }

    /// Image under the projective action of `h` on lines in the plane.
    pub fn act(&self, h: &GroupElement) -> BoundaryPoint {
        let (s, c) = self.k_angle().sin_cos();
        let x = h.get(0, 0) * c + h.get(0, 1) * s;
        let y = h.get(1, 0) * c + h.get(1, 1) * s;
        let mut a = (2.0 * y.atan2(x)).rem_euclid(TAU);
        if a >= TAU {
            a = 0.0;
        }
        BoundaryPoint { angle: a }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExitDirection {
    Direction(BoundaryPoint),
    /// Radial part within the wall tolerance; excluded from histograms.
    Wall,
}

fn require_sl2(g: &GroupElement, op: &str) -> Result<()> {
    if g.group() != GroupId::Sl2 {
        return Err(Error::Unsupported(format!(
            "{op} is implemented for sl2 only"
        )));
    }
    Ok(())
}

/// Boundary point toward which the Cartan chamber of `endpoint` points.
pub fn exit_direction(endpoint: &GroupElement) -> Result<ExitDirection> {
    require_sl2(endpoint, "exit_direction")?;
    let c = cartan(endpoint)?;
    let h = c.singular_values()[0].ln();
    if 2.0 * h <= WALL_TOLERANCE {
        return Ok(ExitDirection::Wall);
    }
    let phi = c.k1.get(1, 0).atan2(c.k1.get(0, 0));
    Ok(ExitDirection::Direction(BoundaryPoint::new(2.0 * phi)?))
}

/// The point `g i` of the upper half plane as `(re, im)`.
pub fn upper_half_plane_point(g: &GroupElement) -> (f64, f64) {
    let (a, b, c, d) = (g.get(0, 0), g.get(0, 1), g.get(1, 0), g.get(1, 1));
    // (a i + b) / (c i + d); the imaginary part uses ad - bc = 1, which stays
    // accurate for frames far from the basepoint.
    let den = c * c + d * d;
    ((b * d + a * c) / den, 1.0 / den)
}

/// Poisson kernel of the hyperbolic plane, normalized to 1 at the basepoint:
/// `Im z / |z sin(theta/2) - cos(theta/2)|^2` with `z = x i`.
pub fn poisson_kernel(x: &GroupElement, xi: &BoundaryPoint) -> Result<f64> {
    require_sl2(x, "poisson_kernel")?;
    let (re, im) = upper_half_plane_point(x);
    Ok(poisson_kernel_at(re, im, xi))
}

pub(crate) fn poisson_kernel_at(re: f64, im: f64, xi: &BoundaryPoint) -> f64 {
    let (s, c) = xi.k_angle().sin_cos();
    let dr = re * s - c;
    let di = im * s;
    im / (dr * dr + di * di)
}

/// Modular function of NA: the Poisson kernel at `g i` for the boundary
/// point fixed by N, which is `a^2` for `g = [[a, b], [0, 1/a]]`.
pub fn modular_function(g: &GroupElement) -> Result<f64> {
    require_sl2(g, "modular_function")?;
    if g.get(1, 0).abs() > 1e-10 || g.get(0, 0) <= 0.0 || g.get(1, 1) <= 0.0 {
        return Err(Error::usage(
            "modular_function expects an upper-triangular element with positive diagonal",
        ));
    }
    poisson_kernel(g, &BoundaryPoint { angle: 0.0 })
}

/// Histogram of exit directions with its multinomial uniformity statistic.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExitHistogram {
    pub counts: Vec<u64>,
    pub walls: u64,
    /// `max_b |c_b - N/B| / sqrt(N (1/B)(1 - 1/B))`.
    pub max_deviation_sd: f64,
}

pub fn exit_histogram(samples: &DiffusionSampleSet, bins: usize) -> Result<ExitHistogram> {
    if bins == 0 {
        return Err(Error::usage("bins must be positive"));
    }
    let mut counts = vec![0u64; bins];
    let mut walls = 0;
    for g in &samples.endpoints {
        match exit_direction(g)? {
            ExitDirection::Wall => walls += 1,
            ExitDirection::Direction(b) => {
                let k = ((b.angle() / TAU) * bins as f64) as usize;
                counts[k.min(bins - 1)] += 1;
            }
        }
    }
    Ok(ExitHistogram {
        max_deviation_sd: uniformity_deviation(&counts),
        counts,
        walls,
    })
}

/// Largest bin deviation from uniform, in multinomial standard deviations.
pub fn uniformity_deviation(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return 0.0;
    }
    let p = 1.0 / counts.len() as f64;
    let sd = (n as f64 * p * (1.0 - p)).sqrt();
    counts
        .iter()
        .map(|&c| (c as f64 - n as f64 * p).abs() / sd)
        .fold(0.0, f64::max)
}

/// Points `x exp(r X_b) i` on the geodesic circle of trace-metric radius r
/// around `x i`, for `count` equally spaced directions.
pub fn geodesic_circle(x: &GroupElement, r: f64, count: usize) -> Result<Vec<GroupElement>> {
    require_sl2(x, "geodesic_circle")?;
    let s = r * std::f64::consts::FRAC_1_SQRT_2;
    let (ch, sh) = (s.cosh(), s.sinh());
    Ok((0..count)
        .map(|k| {
            let b = TAU * k as f64 / count as f64;
            let (sn, c) = b.sin_cos();
            let m = DMatrix::from_row_slice(2, 2, &[ch + sh * c, sh * sn, sh * sn, ch - sh * c]);
            x.mul(&GroupElement::from_matrix_unchecked(GroupId::Sl2, m))
        })
        .collect())
}

/// Rotation by `phi` as an element of SO(2).
pub fn rotation(phi: f64) -> GroupElement {
    GroupElement::rotation(GroupId::Sl2, 0, 1, phi)
}
