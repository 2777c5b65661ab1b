//! Restricted root data for the split groups SL(2,R) (type A1) and SL(3,R) (type A2).
//!
//! Vectors in the Cartan subspace are stored as the diagonal of a traceless
//! diagonal matrix, and the inner product is the trace form
//! `<X, Y> = tr(XY)`. Roots are stored as their metric duals, so the pairing
//! `<alpha, H>` is an ordinary dot product of diagonals.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Chamber distance below which a vector counts as singular (on a wall).
pub const WALL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupId {
    Sl2,
    Sl3,
}

impl GroupId {
    /// Size of the defining matrices.
    pub fn matrix_dim(self) -> usize {
        match self {
            GroupId::Sl2 => 2,
            GroupId::Sl3 => 3,
        }
    }

    pub fn rank(self) -> usize {
        self.matrix_dim() - 1
    }

    /// Dimension of the symmetric space G/K (= dim of the symmetric traceless matrices).
    pub fn symmetric_space_dim(self) -> usize {
        let n = self.matrix_dim();
        n * (n + 1) / 2 - 1
    }

    pub fn as_str(self) -> &'static str {
        match self {
            GroupId::Sl2 => "sl2",
            GroupId::Sl3 => "sl3",
        }
    }
}

impl fmt::Display for GroupId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GroupId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sl2" => Ok(GroupId::Sl2),
            "sl3" => Ok(GroupId::Sl3),
            other => Err(Error::usage(format!(
                "unsupported group '{other}' (expected sl2 or sl3)"
            ))),
        }
    }
}

/// An element H of the Cartan subspace, stored as the diagonal of a traceless matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChamberVector {
    coords: Vec<f64>,
}

impl ChamberVector {
    /// Builds a vector from diagonal entries, which must sum to zero.
    pub fn new(coords: Vec<f64>) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::usage(
                "a chamber vector needs at least two diagonal entries",
            ));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::usage("chamber vector has non-finite entries"));
        }
        let scale = coords.iter().fold(1.0_f64, |m, c| m.max(c.abs()));
        let trace: f64 = coords.iter().sum();
        if trace.abs() > 1e-9 * scale {
            return Err(Error::usage(format!(
                "chamber vector is not traceless (sum of coordinates = {trace:e})"
            )));
        }
        Ok(ChamberVector { coords })
    }

    pub(crate) fn from_raw(coords: Vec<f64>) -> Self {
        ChamberVector { coords }
    }

    pub fn zero(dim: usize) -> Self {
        ChamberVector {
            coords: vec![0.0; dim],
        }
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn dot(&self, other: &ChamberVector) -> f64 {
        self.coords
            .iter()
            .zip(&other.coords)
            .map(|(a, b)| a * b)
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn add(&self, other: &ChamberVector) -> ChamberVector {
        ChamberVector::from_raw(
            self.coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| a + b)
                .collect(),
        )
    }

    pub fn sub(&self, other: &ChamberVector) -> ChamberVector {
        ChamberVector::from_raw(
            self.coords
                .iter()
                .zip(&other.coords)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    pub fn scale(&self, s: f64) -> ChamberVector {
        ChamberVector::from_raw(self.coords.iter().map(|a| a * s).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Root {
    /// Metric dual of the root under the trace form.
    pub functional: Vec<f64>,
    pub multiplicity: u32,
    pub double_multiplicity: u32,
}

impl Root {
    /// The coroot `2 alpha / <alpha, alpha>`.
    pub fn coroot(&self) -> ChamberVector {
        let n2: f64 = self.functional.iter().map(|a| a * a).sum();
        ChamberVector::from_raw(self.functional.iter().map(|a| 2.0 * a / n2).collect())
    }

    pub fn norm(&self) -> f64 {
        self.functional.iter().map(|a| a * a).sum::<f64>().sqrt()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootSystem {
    pub group_id: GroupId,
    pub rank: usize,
    pub positive_roots: Vec<Root>,
    /// Indices into `positive_roots` of the simple (indecomposable) roots, in order.
    pub simple_roots: Vec<usize>,
    pub weyl_vector: ChamberVector,
    pub weyl_group_order: u64,
}

/// Tabulates the A1 or A2 restricted root data, with rho precomputed.
pub fn build_root_system(group_id: GroupId) -> RootSystem {
    let n = group_id.matrix_dim();
    let e = |i: usize, j: usize| {
        let mut v = vec![0.0; n];
        v[i] = 1.0;
        v[j] = -1.0;
        v
    };
    // Simple roots first: e_i - e_{i+1}, then the remaining positive roots.
    let mut pairs: Vec<(usize, usize)> = (0..n - 1).map(|i| (i, i + 1)).collect();
    for gap in 2..n {
        for i in 0..n - gap {
            pairs.push((i, i + gap));
        }
    }
    let positive_roots: Vec<Root> = pairs
        .iter()
        .map(|&(i, j)| Root {
            functional: e(i, j),
            multiplicity: 1,
            double_multiplicity: 0,
        })
        .collect();

    let mut rho = vec![0.0; n];
    for root in &positive_roots {
        for (r, a) in rho.iter_mut().zip(&root.functional) {
            *r += 0.5 * f64::from(root.multiplicity) * a;
        }
    }

    RootSystem {
        group_id,
        rank: n - 1,
        positive_roots,
        simple_roots: (0..n - 1).collect(),
        weyl_vector: ChamberVector::from_raw(rho),
        weyl_group_order: (1..=n as u64).product(),
    }
}

/// Parses a group name and builds its root system.
pub fn build_root_system_named(name: &str) -> Result<RootSystem> {
    Ok(build_root_system(name.parse()?))
}

/// The pairing `<alpha, H>`.
pub fn pair(root: &Root, h: &ChamberVector) -> Result<f64> {
    if root.functional.len() != h.dim() {
        return Err(Error::usage(format!(
            "dimension mismatch: root has {} coordinates, vector has {}",
            root.functional.len(),
            h.dim()
        )));
    }
    Ok(root
        .functional
        .iter()
        .zip(h.coords())
        .map(|(a, b)| a * b)
        .sum())
}

impl RootSystem {
    pub fn dim(&self) -> usize {
        self.group_id.matrix_dim()
    }

    pub fn simple(&self, index: usize) -> &Root {
        &self.positive_roots[self.simple_roots[index]]
    }

    pub fn simple_roots(&self) -> impl Iterator<Item = &Root> {
        self.simple_roots
            .iter()
            .map(move |&i| &self.positive_roots[i])
    }

    fn check_dim(&self, h: &ChamberVector) -> Result<()> {
        if h.dim() != self.dim() {
            return Err(Error::usage(format!(
                "vector has {} coordinates, {} expects {}",
                h.dim(),
                self.group_id,
                self.dim()
            )));
        }
        Ok(())
    }

    /// Minimum over positive roots of `<alpha, H>`.
    pub fn chamber_distance(&self, h: &ChamberVector) -> f64 {
        self.positive_roots
            .iter()
            .map(|r| dot(&r.functional, h.coords()))
            .fold(f64::INFINITY, f64::min)
    }

    /// Representative of the Weyl orbit of H in the closed positive chamber.
    ///
    /// For sl_n the Weyl group permutes diagonal entries, so this is a sort
    /// into nonincreasing order.
    pub fn weyl_reduce(&self, h: &ChamberVector) -> Result<ChamberVector> {
        self.check_dim(h)?;
        let mut c = h.coords().to_vec();
        c.sort_by(|a, b| b.total_cmp(a));
        Ok(ChamberVector::from_raw(c))
    }

    /// All images of H under the Weyl group (permutations of the diagonal).
    pub fn weyl_orbit(&self, h: &ChamberVector) -> Vec<ChamberVector> {
        let mut out = Vec::new();
        let mut idx: Vec<usize> = (0..h.dim()).collect();
        permutations(&mut idx, 0, &mut |p| {
            out.push(ChamberVector::from_raw(
                p.iter().map(|&i| h.coords()[i]).collect(),
            ));
        });
        out
    }

    /// Simple-root pairings `y_j = <alpha_j, H>`.
    pub fn pairing_coords(&self, h: &ChamberVector) -> Vec<f64> {
        self.simple_roots()
            .map(|r| dot(&r.functional, h.coords()))
            .collect()
    }

    /// Inverse of [`RootSystem::pairing_coords`] on the traceless diagonal.
    pub fn from_pairing_coords(&self, y: &[f64]) -> ChamberVector {
        let n = self.dim();
        debug_assert_eq!(y.len(), n - 1);
        // h_k = h_0 - sum_{j<k} y_j and sum_k h_k = 0.
        let h0 = y
            .iter()
            .enumerate()
            .map(|(j, yj)| (n - 1 - j) as f64 * yj)
            .sum::<f64>()
            / n as f64;
        let mut h = Vec::with_capacity(n);
        let mut acc = h0;
        h.push(acc);
        for yj in y {
            acc -= yj;
            h.push(acc);
        }
        ChamberVector::from_raw(h)
    }

    /// Lebesgue volume (trace metric) of the unit cube in pairing coordinates.
    pub fn pairing_cell_volume(&self) -> f64 {
        // Gram determinant of the simple roots; the pairing map has Jacobian sqrt(det G).
        let l = self.rank;
        let mut g = nalgebra::DMatrix::<f64>::zeros(l, l);
        for i in 0..l {
            for j in 0..l {
                g[(i, j)] = dot(&self.simple(i).functional, &self.simple(j).functional);
            }
        }
        1.0 / g.determinant().sqrt()
    }

    pub fn rho_norm_sq(&self) -> f64 {
        self.weyl_vector.dot(&self.weyl_vector)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn permutations(idx: &mut Vec<usize>, k: usize, f: &mut impl FnMut(&[usize])) {
    if k == idx.len() {
        f(idx);
        return;
    }
    for i in k..idx.len() {
        idx.swap(k, i);
        permutations(idx, k + 1, f);
        idx.swap(k, i);
    }
}
