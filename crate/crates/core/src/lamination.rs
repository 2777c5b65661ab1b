//! Schottky suspension of the hyperbolic plane: fundamental-domain reduction
//! in Gamma\G, the radial chamber field, lifted Krylov-Bogolyubov samples and
//! statistical invariance tests under the right action of A, N and K.
//!
//! Points of G = SL(2,R) are frames of the hyperbolic plane (M = {+-I} acts
//! trivially). The suspension carries a transversal mark on the boundary
//! circle; reducing a frame by `gamma` moves its mark by `gamma` as well.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::decomp::cartan;
use crate::diffusion::{
    kb_sample_with_time, upper_half_plane_point, BoundaryPoint, DiffusionConfig,
};
use crate::error::{Error, Result};
use crate::group::GroupElement;
use crate::parallel::{par_map, try_par_map};
use crate::rng::{stream, Domain};
use crate::rootdata::{GroupId, WALL_TOLERANCE};

/// Relative margin around region boundaries; points within it count as reduced.
pub const REGION_MARGIN: f64 = 1e-12;
/// Reduction step cap.
pub const MAX_REDUCTION_STEPS: usize = 10_000;

/// A hyperbolic generator `c diag(e^{L/2}, e^{-L/2}) c^{-1}` with `c` a rotation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub label: char,
    pub matrix: GroupElement,
    pub inverse: GroupElement,
    /// Rotation angle of the conjugator `c`.
    pub axis_angle: f64,
    /// Translation length in the curvature -1 metric.
    pub length: f64,
}

/// Boundary arc `[center - half_width, center + half_width]` (angles mod 2 pi).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arc {
    pub center: f64,
    pub half_width: f64,
}

impl Arc {
    pub fn contains(&self, angle: f64) -> bool {
        angular_distance(angle, self.center) <= self.half_width
    }
}

fn angular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(TAU);
    d.min(TAU - d)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchottkyGroup {
    pub name: String,
    pub generators: Vec<Generator>,
    /// Attracting then repelling arc of each generator, in generator order.
    pub intervals: Vec<Arc>,
}

impl SchottkyGroup {
    /// Builds the group from `(axis_angle, length)` pairs and checks the
    /// ping-pong configuration: all arcs pairwise disjoint.
    pub fn new(name: &str, specs: &[(f64, f64)]) -> Result<Self> {
        if specs.is_empty() || specs.len() > 2 {
            return Err(Error::usage("a Schottky preset has one or two generators"));
        }
        let labels = ['A', 'B'];
        let mut generators = Vec::new();
        let mut intervals = Vec::new();
        for (k, &(axis, length)) in specs.iter().enumerate() {
            if !(length > 0.0) || !length.is_finite() || !axis.is_finite() {
                return Err(Error::usage(
                    "generator lengths must be positive and finite",
                ));
            }
            let c = GroupElement::rotation(GroupId::Sl2, 0, 1, axis);
            let half = length / 2.0;
            let d = GroupElement::from_rows(GroupId::Sl2, &[half.exp(), 0.0, 0.0, (-half).exp()])?;
            let matrix = c.mul(&d).mul(&c.transpose());
            let inverse = matrix.inverse();
            // |c^{-1} z| = e^{L/2} meets the real line at +-e^{L/2}, i.e. boundary
            // angle 2 arccot(e^{L/2}) from the attracting fixed point c.infinity.
            let half_width = 2.0 * (-half).exp().atan();
            let attracting = (2.0 * axis).rem_euclid(TAU);
            intervals.push(Arc {
                center: attracting,
                half_width,
            });
            intervals.push(Arc {
                center: (attracting + PI).rem_euclid(TAU),
                half_width,
            });
            generators.push(Generator {
                label: labels[k],
                matrix,
                inverse,
                axis_angle: axis,
                length,
            });
        }
        for i in 0..intervals.len() {
            for j in i + 1..intervals.len() {
                let (a, b) = (intervals[i], intervals[j]);
                if angular_distance(a.center, b.center) <= a.half_width + b.half_width {
                    return Err(Error::usage(format!("ping-pong arcs {i} and {j} overlap")));
                }
            }
        }
        Ok(SchottkyGroup {
            name: name.to_string(),
            generators,
            intervals,
        })
    }

    /// Named presets: `schottky-a` (two generators of length 3 with axes a
    /// quarter turn apart) and `cyclic` (the first generator alone).
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "schottky-a" => SchottkyGroup::new(name, &[(0.0, 3.0), (PI / 4.0, 3.0)]),
            "cyclic" => SchottkyGroup::new(name, &[(0.0, 3.0)]),
            other => Err(Error::usage(format!("unknown Schottky preset {other:?}"))),
        }
    }

    fn letter(&self, label: char) -> Option<(&GroupElement, bool)> {
        self.generators.iter().find_map(|g| {
            if g.label == label {
                Some((&g.matrix, false))
            } else if g.label.to_ascii_lowercase() == label {
                Some((&g.inverse, true))
            } else {
                None
            }
        })
    }

    /// Product of a word, leftmost letter applied last.
    pub fn word_element(&self, word: &str) -> Result<GroupElement> {
        let mut g = GroupElement::identity(GroupId::Sl2);
        for ch in word.chars() {
            let (m, _) = self
                .letter(ch)
                .ok_or_else(|| Error::usage(format!("unknown letter {ch:?}")))?;
            g = m.mul(&g);
        }
        Ok(g)
    }

    /// The generator move that brings `z` closer to the fundamental domain,
    /// if `z` lies in one of the attracting or repelling regions.
    fn reducing_move(&self, z: (f64, f64)) -> Option<(&GroupElement, char)> {
        for gen in &self.generators {
            let (re, im) = rotate_point(-gen.axis_angle, z);
            let r2 = re * re + im * im;
            let big = (gen.length).exp() * (1.0 + REGION_MARGIN).powi(2);
            let small = (-gen.length).exp() * (1.0 - REGION_MARGIN).powi(2);
            if r2 > big {
                return Some((&gen.inverse, gen.label.to_ascii_lowercase()));
            }
            if r2 < small {
                return Some((&gen.matrix, gen.label));
            }
        }
        None
    }

    /// Whether `z` lies in the (closed) fundamental domain.
    pub fn in_fundamental_domain(&self, z: (f64, f64)) -> bool {
        self.reducing_move(z).is_none()
    }
}

/// Möbius action of the rotation by `angle` on a point of the upper half plane.
fn rotate_point(angle: f64, z: (f64, f64)) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    // (c z - s) / (s z + c)
    let (nr, ni) = (c * z.0 - s, c * z.1);
    let (dr, di) = (s * z.0 + c, s * z.1);
    let den = dr * dr + di * di;
    ((nr * dr + ni * di) / den, (ni * dr - nr * di) / den)
}

/// A point of Gamma\G: reduced representative and the reduction word
/// (letters in the order applied; lowercase = inverse generator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QuotientPoint {
    pub representative: GroupElement,
    pub word: String,
}

/// Left-multiplies `g` by generators until `g i` lies in the fundamental domain.
pub fn schottky_reduce(g: &GroupElement, gamma: &SchottkyGroup) -> Result<QuotientPoint> {
    if g.group() != GroupId::Sl2 {
        return Err(Error::Unsupported(
            "Schottky reduction is implemented for sl2 only".into(),
        ));
    }
    let mut rep = g.clone();
    let mut word = String::new();
    for _ in 0..MAX_REDUCTION_STEPS {
        let z = upper_half_plane_point(&rep);
        if !(z.0.is_finite() && z.1.is_finite() && z.1 > 0.0) {
            return Err(Error::numerical(
                "lamination",
                "schottky_reduce",
                "representative left the upper half plane",
            ));
        }
        match gamma.reducing_move(z) {
            None => {
                return Ok(QuotientPoint {
                    representative: rep,
                    word,
                })
            }
            Some((m, label)) => {
                rep = m.mul(&rep);
                word.push(label);
            }
        }
    }
    Err(Error::numerical(
        "lamination",
        "schottky_reduce",
        format!("no fundamental-domain representative after {MAX_REDUCTION_STEPS} steps"),
    ))
}

/// Applies the letters of `word` (in order) to a boundary mark.
pub fn apply_word(gamma: &SchottkyGroup, word: &str, mark: BoundaryPoint) -> Result<BoundaryPoint> {
    let mut m = mark;
    for ch in word.chars() {
        let (g, _) = gamma
            .letter(ch)
            .ok_or_else(|| Error::usage(format!("unknown letter {ch:?}")))?;
        m = m.act(g);
    }
    Ok(m)
}

/// `schottky_reduce(representative * g)`.
pub fn right_action(
    q: &QuotientPoint,
    g: &GroupElement,
    gamma: &SchottkyGroup,
) -> Result<QuotientPoint> {
    schottky_reduce(&q.representative.mul(g), gamma)
}

/// The chamber `k1 a` of the Cartan factorization of `x` (the one with
/// `k' = e`). Within the wall tolerance of the basepoint the chamber is
/// undetermined and the identity rotation is used.
pub fn radial_chamber_field(x: &GroupElement) -> Result<GroupElement> {
    let c = cartan(x)?;
    let h = c.singular_values()[0].ln();
    if 2.0 * h < WALL_TOLERANCE {
        return Ok(c.a_part);
    }
    Ok(c.k1.mul(&c.a_part))
}

/// Parses a test element: `a:s` = exp(s rho) = diag(e^{s/2}, e^{-s/2}) (displacement s in
/// the curvature -1 metric), `n:s` = [[1, 0], [s, 1]], `k:theta` = rotation by theta.
pub fn parse_test_element(spec: &str) -> Result<GroupElement> {
    let (kind, value) = spec.split_once(':').ok_or_else(|| {
        Error::usage(format!(
            "test element {spec:?} must look like a:0.25, n:0.25 or k:0.785"
        ))
    })?;
    let s: f64 = value
        .trim()
        .parse()
        .map_err(|_| Error::usage(format!("bad parameter in test element {spec:?}")))?;
    if !s.is_finite() {
        return Err(Error::usage("test element parameter must be finite"));
    }
    match kind.trim() {
        "a" => {
            GroupElement::from_rows(GroupId::Sl2, &[(s / 2.0).exp(), 0.0, 0.0, (-s / 2.0).exp()])
        }
        "n" => GroupElement::from_rows(GroupId::Sl2, &[1.0, 0.0, s, 1.0]),
        "k" => Ok(GroupElement::rotation(GroupId::Sl2, 0, 1, s)),
        other => Err(Error::usage(format!("unknown test element kind {other:?}"))),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedSample {
    pub point: QuotientPoint,
    pub mark: BoundaryPoint,
    /// Krylov-Bogolyubov time of the sample (0 for synthetic controls).
    pub time: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftedSampleSet {
    pub preset: String,
    pub n: u64,
    pub seed: u64,
    pub step_length: f64,
    pub initial_mark: f64,
    pub samples: Vec<LiftedSample>,
}

/// Mark carried by the basepoint of the suspension.
pub const INITIAL_MARK: f64 = 1.0;

/// Lifted Krylov-Bogolyubov samples: kb_sample, radial chamber field,
/// reduction, and the reduction holonomy applied to the initial mark.
pub fn build_lift(
    cfg: &DiffusionConfig,
    gamma: &SchottkyGroup,
    n: u64,
    count: usize,
    workers: usize,
) -> Result<LiftedSampleSet> {
    build_lift_from_mark(cfg, gamma, n, count, INITIAL_MARK, workers)
}

/// `build_lift` with the basepoint carrying the mark `initial_mark`.
pub fn build_lift_from_mark(
    cfg: &DiffusionConfig,
    gamma: &SchottkyGroup,
    n: u64,
    count: usize,
    initial_mark: f64,
    workers: usize,
) -> Result<LiftedSampleSet> {
    cfg.validate()?;
    if cfg.group != GroupId::Sl2 {
        return Err(Error::Unsupported(
            "the Schottky lift is implemented for sl2 only".into(),
        ));
    }
    if n == 0 || count == 0 {
        return Err(Error::usage("n and count must be at least 1"));
    }
    let start = BoundaryPoint::new(initial_mark)?;
    let samples = try_par_map(count, workers, |i| {
        let (time, x) = kb_sample_with_time(cfg, n, i as u64)?;
        let frame = radial_chamber_field(&x)?;
        let point = schottky_reduce(&frame, gamma)?;
        let mark = apply_word(gamma, &point.word, start)?;
        Ok(LiftedSample { point, mark, time })
    })?;
    Ok(LiftedSampleSet {
        preset: gamma.name.clone(),
        n,
        seed: cfg.seed,
        step_length: cfg.step_length,
        initial_mark: start.angle(),
        samples,
    })
}

/// Frame distribution over the fundamental domain for the synthetic controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FiberChoice {
    /// Haar: uniform rotation of the frame at each point.
    Uniform,
    /// Every frame rotated by the same fixed angle from the radial one.
    Fixed(f64),
}

/// Radius (curvature -1) of the ball sampled by the Haar control.
pub const HAAR_RADIUS: f64 = 12.0;

/// Samples from Haar measure on `{g : g i in F, d(g i, i) <= HAAR_RADIUS}`
/// times the uniform law on marks (or a skewed fiber for a negative control).
pub fn haar_control(
    gamma: &SchottkyGroup,
    count: usize,
    seed: u64,
    fiber: FiberChoice,
    workers: usize,
) -> Result<LiftedSampleSet> {
    let samples = try_par_map(count, workers, |i| {
        let mut rng = stream(seed, Domain::Haar, i as u64);
        loop {
            // Polar coordinates about i: cosh d uniform up to cosh R gives area measure.
            let u: f64 = rng.random();
            let d = (1.0 + u * (HAAR_RADIUS.cosh() - 1.0)).acosh();
            let alpha: f64 = rng.random_range(0.0..PI);
            let phi: f64 = match fiber {
                FiberChoice::Uniform => rng.random_range(0.0..PI),
                FiberChoice::Fixed(angle) => angle,
            };
            let mark: f64 = rng.random_range(0.0..TAU);
            let k = GroupElement::rotation(GroupId::Sl2, 0, 1, alpha);
            let a = GroupElement::from_rows(
                GroupId::Sl2,
                &[(d / 2.0).exp(), 0.0, 0.0, (-d / 2.0).exp()],
            )?;
            let g = k
                .mul(&a)
                .mul(&GroupElement::rotation(GroupId::Sl2, 0, 1, phi));
            if gamma.in_fundamental_domain(upper_half_plane_point(&g)) {
                return Ok(LiftedSample {
                    point: QuotientPoint {
                        representative: g,
                        word: String::new(),
                    },
                    mark: BoundaryPoint::new(mark)?,
                    time: 0,
                });
            }
        }
    })?;
    Ok(LiftedSampleSet {
        preset: gamma.name.clone(),
        n: 0,
        seed,
        step_length: 0.0,
        initial_mark: f64::NAN,
        samples,
    })
}

/// Version tag of the test-function dictionary.
pub const TEST_FUNCTIONS_VERSION: &str = "tf-v1";
/// Support radius (curvature -1) of the bump factor shared by all test functions.
pub const BUMP_RADIUS: f64 = 10.0;
pub const TEST_FUNCTION_COUNT: usize = 8;

/// Coordinates of a frame in the disk chart `w = conj((z - i)/(z + i))`:
/// position `w`, frame direction angle `beta`, and hyperbolic distance to the origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiskFrame {
    pub w: (f64, f64),
    pub beta: f64,
    pub distance: f64,
}

pub fn disk_frame(g: &GroupElement) -> DiskFrame {
    let (x, y) = upper_half_plane_point(g);
    // C(z) = (z - i)/(z + i), D = conj(C).
    let (nr, ni) = (x, y - 1.0);
    let (dr, di) = (x, y + 1.0);
    let den = dr * dr + di * di;
    let (cr, ci) = ((nr * dr + ni * di) / den, (ni * dr - nr * di) / den);
    let w = (cr, -ci);
    // Tangent of t -> g diag(e^{t/2}, e^{-t/2}) i at t = 0 is i / (c i + d)^2 in
    // the half plane; push it through C'(z) = 2i/(z+i)^2 and conjugate.
    let (c, d) = (g.get(1, 0), g.get(1, 1));
    let arg_tangent = PI / 2.0 - 2.0 * c.atan2(d);
    let arg_dc = PI / 2.0 - 2.0 * di.atan2(dr);
    let beta = -(arg_tangent + arg_dc);
    let cosh_d = 1.0 + (x * x + (y - 1.0) * (y - 1.0)) / (2.0 * y);
    DiskFrame {
        w,
        beta: beta.rem_euclid(TAU),
        distance: cosh_d.acosh(),
    }
}

/// The eight dictionary functions at a (frame, mark) pair. Each is a smooth
/// bump in the distance to the origin times one of
/// `Re(e^{-i beta} w), Im(e^{-i beta} w), cos beta, sin beta, cos psi, sin psi, |w|^2, 1`.
pub fn test_functions(g: &GroupElement, mark: &BoundaryPoint) -> [f64; TEST_FUNCTION_COUNT] {
    let f = disk_frame(g);
    let r = f.distance / BUMP_RADIUS;
    let bump = if r < 1.0 { (1.0 - r * r).powi(2) } else { 0.0 };
    let (sb, cb) = f.beta.sin_cos();
    let (wr, wi) = f.w;
    let (sp, cp) = mark.angle().sin_cos();
    [
        bump * (cb * wr + sb * wi),
        bump * (cb * wi - sb * wr),
        bump * cb,
        bump * sb,
        bump * cp,
        bump * sp,
        bump * (wr * wr + wi * wi),
        bump,
    ]
}

/// Per-function deficits `|mean f(q) - mean f(q g)| / sqrt(var_1/N + var_2/N)`
/// and their maximum. Functions constant on both samples contribute 0.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InvarianceDeficit {
    pub per_function: Vec<f64>,
    pub max: f64,
}

pub fn invariance_deficit(
    set: &LiftedSampleSet,
    g: &GroupElement,
    gamma: &SchottkyGroup,
    functions: &[usize],
    workers: usize,
) -> Result<InvarianceDeficit> {
    if functions.is_empty() {
        return Err(Error::usage("the test-function set is empty"));
    }
    if let Some(bad) = functions.iter().find(|&&f| f >= TEST_FUNCTION_COUNT) {
        return Err(Error::usage(format!(
            "test function index {bad} out of range"
        )));
    }
    if set.samples.is_empty() {
        return Err(Error::usage("the sample set is empty"));
    }
    let pairs = try_par_map(set.samples.len(), workers, |i| {
        let s = &set.samples[i];
        let before = test_functions(&s.point.representative, &s.mark);
        let moved = right_action(&s.point, g, gamma)?;
        let mark = apply_word(gamma, &moved.word, s.mark)?;
        Ok::<_, Error>((before, test_functions(&moved.representative, &mark)))
    })?;
    let n = pairs.len() as f64;
    let per_function: Vec<f64> = functions
        .iter()
        .map(|&f| {
            let (ma, va) = mean_var(pairs.iter().map(|p| p.0[f]));
            let (mb, vb) = mean_var(pairs.iter().map(|p| p.1[f]));
            let diff = (ma - mb).abs();
            let se = ((va + vb) / n).sqrt();
            if diff == 0.0 {
                0.0
            } else if se == 0.0 {
                f64::INFINITY
            } else {
                diff / se
            }
        })
        .collect();
    let max = per_function.iter().copied().fold(0.0, f64::max);
    Ok(InvarianceDeficit { per_function, max })
}

pub fn all_test_functions() -> Vec<usize> {
    (0..TEST_FUNCTION_COUNT).collect()
}

fn mean_var(it: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = it.clone().count() as f64;
    let mean = it.clone().sum::<f64>() / n;
    let var = if n > 1.0 {
        it.map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var)
}

/// Leafwise time used to advance marks in the stationarity check.
pub const EXTENSION_TIME: f64 = 1.0;

/// Total-variation distance between the binned mark law and its image after
/// each sample's leaf point diffuses `EXTENSION_TIME` further (and is
/// re-reduced), in units of the multinomial noise floor.
pub fn transverse_stationarity_residual(
    set: &LiftedSampleSet,
    gamma: &SchottkyGroup,
    bins: usize,
    workers: usize,
) -> Result<f64> {
    if bins < 8 {
        return Err(Error::usage("at least 8 bins are required"));
    }
    if set.samples.is_empty() {
        return Err(Error::usage("the sample set is empty"));
    }
    let cfg = DiffusionConfig::new(
        GroupId::Sl2,
        set.step_length.max(1e-3),
        set.seed,
        1,
        EXTENSION_TIME,
    )?;
    let moved: Vec<BoundaryPoint> = try_par_map(set.samples.len(), workers, |i| {
        let s = &set.samples[i];
        let mut rng = stream(set.seed, Domain::Extension, i as u64);
        let end = crate::diffusion::walk_from(
            &s.point.representative,
            &cfg,
            cfg.steps_for(EXTENSION_TIME),
            &mut rng,
        )?;
        let q = schottky_reduce(&end, gamma)?;
        apply_word(gamma, &q.word, s.mark)
    })?;
    let before = histogram(set.samples.iter().map(|s| s.mark), bins);
    let after = histogram(moved.iter().copied(), bins);
    let n = set.samples.len() as f64;
    let tv = 0.5
        * before
            .iter()
            .zip(&after)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
        / n;
    if tv == 0.0 {
        return Ok(0.0);
    }
    // Expected TV between two independent multinomial samples of size n from the pooled law.
    let floor: f64 = before
        .iter()
        .zip(&after)
        .map(|(a, b)| {
            let p = (a + b) / (2.0 * n);
            (2.0 * p * (1.0 - p) / n).sqrt()
        })
        .sum::<f64>()
        * 0.5
        * (2.0 / PI).sqrt();
    Ok(tv / floor)
}

fn histogram(marks: impl Iterator<Item = BoundaryPoint>, bins: usize) -> Vec<f64> {
    let mut h = vec![0.0; bins];
    for m in marks {
        let k = ((m.angle() / TAU) * bins as f64) as usize;
        h[k.min(bins - 1)] += 1.0;
    }
    h
}

/// Evaluates the dictionary on every sample (for export and diagnostics).
pub fn evaluate_dictionary(
    set: &LiftedSampleSet,
    workers: usize,
) -> Vec<[f64; TEST_FUNCTION_COUNT]> {
    par_map(set.samples.len(), workers, |i| {
        let s = &set.samples[i];
        test_functions(&s.point.representative, &s.mark)
    })
}
