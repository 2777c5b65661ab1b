//! Radial heat-kernel envelope on G/K and quadrature of the flight density
//! `u_t = p_t * vol(K-orbit)` over the positive chamber.
//!
//! Grids live in simple-root pairing coordinates `y_j = <alpha_j, H>`, so
//! the closed chamber is the positive orthant and `rho` (with all pairings
//! equal to one) is a lattice vector whenever `1/step` is an integer.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::parallel::{default_workers, par_map};
use crate::rootdata::{ChamberVector, RootSystem};

/// Slack below zero tolerated for "closed chamber" preconditions.
pub const CHAMBER_SLACK: f64 = 1e-10;
/// Largest mass fraction allowed in the outermost layer of cells.
pub const BOUNDARY_MASS_LIMIT: f64 = 1e-6;
/// Minimum number of cells per axis for the default step.
pub const MIN_CELLS_PER_AXIS: usize = 400;

fn check_chamber(rs: &RootSystem, h: &ChamberVector, op: &str) -> Result<()> {
    if h.dim() != rs.dim() {
        return Err(Error::usage(format!(
            "{op}: vector dimension does not match {}",
            rs.group_id
        )));
    }
    if !h.coords().iter().all(|x| x.is_finite()) {
        return Err(Error::usage(format!("{op}: non-finite vector")));
    }
    if rs.chamber_distance(h) < -CHAMBER_SLACK {
        return Err(Error::usage(format!(
            "{op}: H lies outside the closed positive chamber"
        )));
    }
    Ok(())
}

/// `ln sinh x` for `x > 0`, stable for both small and large x.
fn ln_sinh(x: f64) -> f64 {
    x - std::f64::consts::LN_2 + (-(-2.0 * x).exp_m1()).ln()
}

/// Logarithm of the explicit two-sided heat-kernel bound (constant set to 1):
///
/// `t^{-l/2} prod_{simple} ((1+<a,H>)/t) (1+(1+<a,H>)/t)^{(m_a+m_2a)/2-1}
///  * exp(-|rho|^2 t - <rho,H> - |H|^2/4t)`.
pub fn log_envelope(rs: &RootSystem, h: &ChamberVector, t: f64) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::usage("log_envelope: t must be positive"));
    }
    check_chamber(rs, h, "log_envelope")?;
    Ok(log_envelope_unchecked(rs, h, t))
}

fn log_envelope_unchecked(rs: &RootSystem, h: &ChamberVector, t: f64) -> f64 {
    let mut v = -0.5 * rs.rank as f64 * t.ln();
    for root in rs.simple_roots() {
        let p = 1.0 + dot(&root.functional, h.coords());
        let exponent = f64::from(root.multiplicity + root.double_multiplicity) / 2.0 - 1.0;
        v += (p / t).ln() + exponent * (1.0 + p / t).ln();
    }
    let rho = &rs.weyl_vector;
    v - rs.rho_norm_sq() * t - rho.dot(h) - h.dot(h) / (4.0 * t)
}

/// `sum_{positive roots} m_a ln sinh <a,H>`, the log-volume of the K-orbit
/// through `exp(H)`. `None` when H lies on a wall, where the volume is zero.
pub fn log_orbit_volume(rs: &RootSystem, h: &ChamberVector) -> Result<Option<f64>> {
    check_chamber(rs, h, "log_orbit_volume")?;
    Ok(log_orbit_volume_unchecked(rs, h))
}

fn log_orbit_volume_unchecked(rs: &RootSystem, h: &ChamberVector) -> Option<f64> {
    let mut v = 0.0;
    for root in &rs.positive_roots {
        let x = dot(&root.functional, h.coords());
        if !(x > 0.0) {
            return None;
        }
        v += f64::from(root.multiplicity) * ln_sinh(x);
    }
    Some(v)
}

/// Normalized flight density on a box of cells in pairing coordinates.
#[derive(Debug, Clone, Serialize)]
pub struct RadialDensityGrid {
    pub root_system: RootSystem,
    pub t: f64,
    pub step: f64,
    pub cells_per_axis: Vec<usize>,
    /// Upper pairing bound per simple root (`cells * step`).
    pub box_max: Vec<f64>,
    /// Cell volume in the trace metric on the Cartan subalgebra.
    pub cell_measure: f64,
    /// Row-major over axes, last axis fastest.
    #[serde(skip)]
    pub values: Vec<f64>,
}

/// Pairing upper bound per simple root: `<alpha, 2 rho> t + 8 sqrt(t) |alpha|`.
pub fn default_box(rs: &RootSystem, t: f64) -> Vec<f64> {
    let two_rho = rs.weyl_vector.scale(2.0);
    rs.simple_roots()
        .map(|a| dot(&a.functional, two_rho.coords()) * t + 8.0 * t.sqrt() * a.norm())
        .collect()
}

/// Largest step of the form `1/k` giving at least [`MIN_CELLS_PER_AXIS`]
/// cells along every axis of `box_max`.
pub fn default_step(box_max: &[f64]) -> f64 {
    let smallest = box_max.iter().copied().fold(f64::INFINITY, f64::min);
    1.0 / (MIN_CELLS_PER_AXIS as f64 / smallest).ceil().max(1.0)
}

/// Builds the normalized grid using the default worker count.
pub fn flight_density_grid(
    t: f64,
    rs: &RootSystem,
    box_max: Option<&[f64]>,
    step: Option<f64>,
) -> Result<RadialDensityGrid> {
    flight_density_grid_with_workers(t, rs, box_max, step, default_workers())
}

pub fn flight_density_grid_with_workers(
    t: f64,
    rs: &RootSystem,
    box_max: Option<&[f64]>,
    step: Option<f64>,
    workers: usize,
) -> Result<RadialDensityGrid> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::usage("flight_density_grid: t must be positive"));
    }
    let requested = match box_max {
        Some(b) => b.to_vec(),
        None => default_box(rs, t),
    };
    if requested.len() != rs.rank || requested.iter().any(|b| !(*b > 0.0) || !b.is_finite()) {
        return Err(Error::usage(
            "flight_density_grid: box needs one positive bound per simple root",
        ));
    }
    let step = step.unwrap_or_else(|| default_step(&requested));
    if !(step > 0.0) || !step.is_finite() {
        return Err(Error::usage("flight_density_grid: step must be positive"));
    }
    let cells_per_axis: Vec<usize> = requested
        .iter()
        .map(|b| (b / step).ceil() as usize)
        .collect();
    let box_max: Vec<f64> = cells_per_axis.iter().map(|&c| c as f64 * step).collect();
    let l = rs.rank;
    let cell_measure = step.powi(l as i32) * rs.pairing_cell_volume();

    // Log-density, parallel over the slowest axis; each cell is independent.
    let inner: usize = cells_per_axis[1..].iter().product();
    let rows = par_map(cells_per_axis[0], workers, |i0| {
        let mut out = Vec::with_capacity(inner);
        let mut y = vec![0.0; l];
        for r in 0..inner {
            y[0] = (i0 as f64 + 0.5) * step;
            let mut rem = r;
            for ax in (1..l).rev() {
                y[ax] = ((rem % cells_per_axis[ax]) as f64 + 0.5) * step;
                rem /= cells_per_axis[ax];
            }
            let h = rs.from_pairing_coords(&y);
            let v = match log_orbit_volume_unchecked(rs, &h) {
                Some(lv) => log_envelope_unchecked(rs, &h, t) + lv,
                None => f64::NEG_INFINITY,
            };
            out.push(v);
        }
        out
    });
    let mut values: Vec<f64> = rows.into_iter().flatten().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(Error::numerical(
            "heatkernel",
            "flight_density_grid",
            "density vanishes on every cell",
        ));
    }
    for v in values.iter_mut() {
        *v = (*v - max).exp();
    }
    let total = neumaier_sum(values.iter().copied()) * cell_measure;
    let scale = 1.0 / total;
    for v in values.iter_mut() {
        *v *= scale;
    }
    let mut grid = RadialDensityGrid {
        root_system: rs.clone(),
        t,
        step,
        cells_per_axis,
        box_max,
        cell_measure,
        values,
    };
    let boundary = grid.boundary_mass();
    if boundary > BOUNDARY_MASS_LIMIT {
        return Err(Error::numerical(
            "heatkernel",
            "flight_density_grid",
            format!("mass {boundary:.3e} in the outer layer of cells exceeds {BOUNDARY_MASS_LIMIT:e}; enlarge the box"),
        ));
    }
    // One corrective pass absorbs the rounding of the scale factor.
    let residual = grid.total_mass();
    for v in grid.values.iter_mut() {
        *v /= residual;
    }
    Ok(grid)
}

/// Result of [`shift_l1_distance`], with the lattice vector actually used.
#[derive(Debug, Clone, Serialize)]
pub struct ShiftL1 {
    pub value: f64,
    pub applied_shift: ChamberVector,
    /// Max-abs difference in pairing coordinates between requested and applied shift.
    pub rounding: f64,
}

impl RadialDensityGrid {
    pub fn rank(&self) -> usize {
        self.root_system.rank
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn multi_index(&self, mut flat: usize) -> Vec<usize> {
        let l = self.rank();
        let mut idx = vec![0; l];
        for ax in (0..l).rev() {
            idx[ax] = flat % self.cells_per_axis[ax];
            flat /= self.cells_per_axis[ax];
        }
        idx
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        idx.iter()
            .zip(&self.cells_per_axis)
            .fold(0, |acc, (i, n)| acc * n + i)
    }

    /// Pairing coordinates of the center of cell `flat`.
    pub fn cell_center_pairing(&self, flat: usize) -> Vec<f64> {
        self.multi_index(flat)
            .iter()
            .map(|&i| (i as f64 + 0.5) * self.step)
            .collect()
    }

    pub fn cell_center(&self, flat: usize) -> ChamberVector {
        self.root_system
            .from_pairing_coords(&self.cell_center_pairing(flat))
    }

    pub fn total_mass(&self) -> f64 {
        neumaier_sum(self.values.iter().copied()) * self.cell_measure
    }

    /// Mass in cells touching the upper face of the box along some axis.
    pub fn boundary_mass(&self) -> f64 {
        let terms = self.values.iter().enumerate().filter_map(|(k, v)| {
            let idx = self.multi_index(k);
            idx.iter()
                .zip(&self.cells_per_axis)
                .any(|(i, n)| i + 1 == *n)
                .then_some(*v)
        });
        neumaier_sum(terms) * self.cell_measure
    }

    /// Pairing coordinates of the center of the cell with the largest density.
    pub fn argmax_pairing(&self) -> Vec<f64> {
        let mut best = 0;
        for (k, v) in self.values.iter().enumerate() {
            if *v > self.values[best] {
                best = k;
            }
        }
        self.cell_center_pairing(best)
    }

    /// Sum of `|u(H) - u(H + H0)| * cell_measure` over the cells of the box,
    /// with `H0` rounded to the grid lattice and reads past the box taken as 0.
    pub fn shift_l1_distance(&self, h0: &ChamberVector) -> Result<ShiftL1> {
        let rs = &self.root_system;
        check_chamber(rs, h0, "shift_l1_distance")?;
        let y0 = rs.pairing_coords(h0);
        let offsets: Vec<usize> = y0
            .iter()
            .map(|y| (y / self.step).round().max(0.0) as usize)
            .collect();
        let applied: Vec<f64> = offsets.iter().map(|&k| k as f64 * self.step).collect();
        let rounding = y0
            .iter()
            .zip(&applied)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let terms = (0..self.values.len()).map(|k| {
            let idx = self.multi_index(k);
            let shifted: Vec<usize> = idx.iter().zip(&offsets).map(|(i, o)| i + o).collect();
            let inside = shifted.iter().zip(&self.cells_per_axis).all(|(i, n)| i < n);
            let other = if inside {
                self.values[self.flat_index(&shifted)]
            } else {
                0.0
            };
            (self.values[k] - other).abs()
        });
        Ok(ShiftL1 {
            value: neumaier_sum(terms) * self.cell_measure,
            applied_shift: rs.from_pairing_coords(&applied),
            rounding,
        })
    }

    /// Mass of the slab `{s H0 + F : s in [0,1], F in the face alpha_j = 0}`
    /// by cell-center membership.
    pub fn slab_mass(&self, h0: &ChamberVector, face_index: usize) -> Result<f64> {
        let rs = &self.root_system;
        if face_index >= rs.rank {
            return Err(Error::usage(format!(
                "face index {face_index} out of range; {} has {} faces",
                rs.group_id, rs.rank
            )));
        }
        check_chamber(rs, h0, "slab_mass")?;
        let y0 = rs.pairing_coords(h0);
        Ok(self.mass_where(|y| in_slab(y, &y0, face_index)))
    }

    /// Mass of the union of the slabs over all faces.
    pub fn slab_union_mass(&self, h0: &ChamberVector) -> Result<f64> {
        let rs = &self.root_system;
        check_chamber(rs, h0, "slab_mass")?;
        let y0 = rs.pairing_coords(h0);
        Ok(self.mass_where(|y| (0..y0.len()).any(|j| in_slab(y, &y0, j))))
    }

    /// Fraction of mass within trace-metric distance `t^{(1+eps)/2}` of `2 rho t`.
    pub fn concentration_fraction(&self, eps: f64) -> f64 {
        let center = self.root_system.weyl_vector.scale(2.0 * self.t);
        let radius = self.t.powf((1.0 + eps) / 2.0);
        let m = self
            .mass_where(|y| self.root_system.from_pairing_coords(y).sub(&center).norm() <= radius);
        m.clamp(0.0, 1.0)
    }

    fn mass_where(&self, pred: impl Fn(&[f64]) -> bool) -> f64 {
        let terms = (0..self.values.len())
            .filter_map(|k| pred(&self.cell_center_pairing(k)).then_some(self.values[k]));
        (neumaier_sum(terms) * self.cell_measure).clamp(0.0, 1.0)
    }
}

fn in_slab(y: &[f64], y0: &[f64], face: usize) -> bool {
    if !(y0[face] > 0.0) {
        return false;
    }
    let s = y[face] / y0[face];
    (0.0..=1.0).contains(&s)
        && y.iter()
            .zip(y0)
            .enumerate()
            .all(|(i, (yi, y0i))| i == face || yi - s * y0i >= 0.0)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Compensated summation in iteration order.
fn neumaier_sum(it: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0_f64;
    let mut c = 0.0_f64;
    for x in it {
        let t = sum + x;
        if sum.abs() >= x.abs() {
            c += (sum - t) + x;
        } else {
            c += (x - t) + sum;
        }
        sum = t;
    }
    sum + c
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rootdata::{build_root_system, GroupId};

    fn sl2() -> RootSystem {
        build_root_system(GroupId::Sl2)
    }

    #[test]
    fn envelope_at_origin() {
        for g in [GroupId::Sl2, GroupId::Sl3] {
            let rs = build_root_system(g);
            let l = rs.rank as f64;
            for t in [0.5, 3.0, 40.0] {
                let expected = -(l / 2.0) * f64::ln(t)
                    + l * (f64::ln(1.0 / t) - 0.5 * f64::ln(1.0 + 1.0 / t))
                    - rs.rho_norm_sq() * t;
                let got = log_envelope(&rs, &ChamberVector::zero(rs.dim()), t).unwrap();
                assert!((got - expected).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn envelope_prefers_two_rho_t() {
        for g in [GroupId::Sl2, GroupId::Sl3] {
            let rs = build_root_system(g);
            let t = 10.0;
            let a = log_envelope(&rs, &rs.weyl_vector.scale(2.0 * t), t).unwrap();
            let b = log_envelope(&rs, &rs.weyl_vector.scale(4.0 * t), t).unwrap();
            assert!(a > b);
        }
    }

    #[test]
    fn gaussian_exponent_at_two_rho_t() {
        // -<rho,H> - |H|^2/4t = -3|rho|^2 t at H = 2 rho t; with -|rho|^2 t the total is -4|rho|^2 t.
        for g in [GroupId::Sl2, GroupId::Sl3] {
            let rs = build_root_system(g);
            let t = 7.5;
            let h = rs.weyl_vector.scale(2.0 * t);
            let e = -rs.weyl_vector.dot(&h) - h.dot(&h) / (4.0 * t);
            assert!((e + 3.0 * rs.rho_norm_sq() * t).abs() < 1e-12);
            assert!((e - rs.rho_norm_sq() * t + 4.0 * rs.rho_norm_sq() * t).abs() < 1e-12);
        }
    }

    #[test]
    fn envelope_rejects_bad_input() {
        let rs = sl2();
        assert!(matches!(
            log_envelope(&rs, &rs.weyl_vector, 0.0),
            Err(Error::Usage(_))
        ));
        assert!(matches!(
            log_envelope(&rs, &rs.weyl_vector.scale(-1.0), 1.0),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn orbit_volume_cases() {
        let rs = sl2();
        assert_eq!(
            log_orbit_volume(&rs, &ChamberVector::zero(2)).unwrap(),
            None
        );
        let h = ChamberVector::new(vec![0.5, -0.5]).unwrap();
        let v = log_orbit_volume(&rs, &h).unwrap().unwrap();
        assert!((v - 1.0_f64.sinh().ln()).abs() < 1e-15);
        // Small arguments keep full relative accuracy.
        let h = ChamberVector::new(vec![1e-9, -1e-9]).unwrap();
        let v = log_orbit_volume(&rs, &h).unwrap().unwrap();
        assert!((v - (2e-9_f64).ln()).abs() < 1e-12);
    }

    #[test]
    fn orbit_volume_approaches_exponential() {
        for g in [GroupId::Sl2, GroupId::Sl3] {
            let rs = build_root_system(g);
            let h = match g {
                GroupId::Sl2 => ChamberVector::new(vec![11.0, -11.0]).unwrap(),
                GroupId::Sl3 => ChamberVector::new(vec![45.0, 3.0, -48.0]).unwrap(),
            };
            assert!(rs.chamber_distance(&h) > 20.0);
            let f = |h: &ChamberVector| {
                log_orbit_volume(&rs, h).unwrap().unwrap() - 2.0 * rs.weyl_vector.dot(h)
            };
            let h2 = h.scale(2.0);
            assert!((f(&h) - f(&h2)).abs() < 1e-6);
            let n_pos = rs.positive_roots.len() as f64;
            assert!((f(&h) + n_pos * std::f64::consts::LN_2).abs() < 1e-6);
        }
    }

    #[test]
    fn default_step_puts_rho_on_lattice() {
        for t in [4.0, 8.0, 16.0, 32.0, 64.0] {
            let rs = build_root_system(GroupId::Sl3);
            let b = default_box(&rs, t);
            let s = default_step(&b);
            assert!((1.0 / s - (1.0 / s).round()).abs() < 1e-12);
            assert!(b.iter().all(|x| x / s >= MIN_CELLS_PER_AXIS as f64));
        }
    }

    #[test]
    fn grid_is_normalized_and_bit_identical_across_workers() {
        let rs = build_root_system(GroupId::Sl3);
        let a = flight_density_grid_with_workers(4.0, &rs, None, None, 1).unwrap();
        let b = flight_density_grid_with_workers(4.0, &rs, None, None, 3).unwrap();
        assert!((a.total_mass() - 1.0).abs() < 1e-12);
        assert!(a.values.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert_eq!(a.values, b.values);
    }

    #[test]
    fn small_box_is_rejected() {
        let rs = sl2();
        let err = flight_density_grid(16.0, &rs, Some(&[20.0]), None).unwrap_err();
        assert!(matches!(
            err,
            Error::Numerical {
                op: "flight_density_grid",
                ..
            }
        ));
    }

    #[test]
    fn trivial_statistics() {
        let rs = sl2();
        let g = flight_density_grid(8.0, &rs, None, None).unwrap();
        assert_eq!(
            g.shift_l1_distance(&ChamberVector::zero(2)).unwrap().value,
            0.0
        );
        assert_eq!(g.slab_mass(&ChamberVector::zero(2), 0).unwrap(), 0.0);
        assert!(matches!(
            g.slab_mass(&rs.weyl_vector, 1),
            Err(Error::Usage(_))
        ));
        assert!((g.concentration_fraction(5.0) - 1.0).abs() < 1e-12);
        let mut last = 0.0;
        for eps in [0.05, 0.1, 0.2, 0.4, 0.8] {
            let c = g.concentration_fraction(eps);
            assert!(c >= last);
            last = c;
        }
    }

    #[test]
    fn off_lattice_shift_is_rounded_and_reported() {
        let rs = sl2();
        let g = flight_density_grid(4.0, &rs, None, None).unwrap();
        let h0 = ChamberVector::new(vec![0.51, -0.51]).unwrap();
        let r = g.shift_l1_distance(&h0).unwrap();
        assert!(r.rounding > 0.0 && r.rounding <= g.step / 2.0 + 1e-12);
        let y = rs.pairing_coords(&r.applied_shift)[0];
        assert!((y / g.step - (y / g.step).round()).abs() < 1e-9);
    }

    #[test]
    fn neumaier_recovers_cancelled_terms() {
        let xs = [1e16, 1.0, -1e16, 1.0];
        assert_eq!(neumaier_sum(xs.iter().copied()), 2.0);
    }
}
