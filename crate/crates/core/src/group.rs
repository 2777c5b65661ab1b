//! Unimodular matrices in SL(2,R) and SL(3,R).

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rootdata::{ChamberVector, GroupId};

/// Allowed deviation of the determinant from one, relative to the Hadamard
/// bound of the matrix (so huge but exactly unimodular matrices still pass).
pub const DET_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GroupElement {
    group: GroupId,
    entries: DMatrix<f64>,
}

impl GroupElement {
    pub fn new(group: GroupId, entries: DMatrix<f64>) -> Result<Self> {
        let n = group.matrix_dim();
        if entries.nrows() != n || entries.ncols() != n {
            return Err(Error::usage(format!(
                "{group} elements are {n}x{n}, got {}x{}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        if entries.iter().any(|x| !x.is_finite()) {
            return Err(Error::numerical(
                "decomp",
                "group_element",
                "non-finite matrix entry",
            ));
        }
        let det = determinant(&entries);
        let hadamard: f64 = entries.row_iter().map(|r| r.norm()).product();
        if (det - 1.0).abs() > DET_TOLERANCE * hadamard.max(1.0) {
            return Err(Error::numerical(
                "decomp",
                "group_element",
                format!("determinant {det} is not 1"),
            ));
        }
        Ok(GroupElement { group, entries })
    }

    /// Row-major constructor.
    pub fn from_rows(group: GroupId, rows: &[f64]) -> Result<Self> {
        let n = group.matrix_dim();
        if rows.len() != n * n {
            return Err(Error::usage(format!(
                "{group} needs {} entries, got {}",
                n * n,
                rows.len()
            )));
        }
        Self::new(group, DMatrix::from_row_slice(n, n, rows))
    }

    pub(crate) fn from_matrix_unchecked(group: GroupId, entries: DMatrix<f64>) -> Self {
        debug_assert_eq!(entries.nrows(), group.matrix_dim());
        GroupElement { group, entries }
    }

    pub fn identity(group: GroupId) -> Self {
        let n = group.matrix_dim();
        GroupElement {
            group,
            entries: DMatrix::identity(n, n),
        }
    }

    /// `exp(H)` for a chamber vector H.
    pub fn exp_diagonal(group: GroupId, h: &ChamberVector) -> Result<Self> {
        let n = group.matrix_dim();
        if h.dim() != n {
            return Err(Error::usage(
                "chamber vector dimension does not match group",
            ));
        }
        let mut m = DMatrix::zeros(n, n);
        for (i, x) in h.coords().iter().enumerate() {
            m[(i, i)] = x.exp();
        }
        Ok(GroupElement { group, entries: m })
    }

    /// Rotation by `angle` in the (i, j) coordinate plane.
    pub fn rotation(group: GroupId, i: usize, j: usize, angle: f64) -> Self {
        let n = group.matrix_dim();
        let mut m = DMatrix::identity(n, n);
        let (s, c) = angle.sin_cos();
        m[(i, i)] = c;
        m[(j, j)] = c;
        m[(i, j)] = -s;
        m[(j, i)] = s;
        GroupElement { group, entries: m }
    }

    pub fn group(&self) -> GroupId {
        self.group
    }

    pub fn dim(&self) -> usize {
        self.group.matrix_dim()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)]
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.entries
            .row_iter()
            .map(|r| r.iter().copied().collect())
            .collect()
    }

    pub fn row_major(&self) -> Vec<f64> {
        self.rows().into_iter().flatten().collect()
    }

    pub fn mul(&self, other: &GroupElement) -> GroupElement {
        debug_assert_eq!(self.group, other.group);
        GroupElement {
            group: self.group,
            entries: &self.entries * &other.entries,
        }
    }

    pub fn transpose(&self) -> GroupElement {
        GroupElement {
            group: self.group,
            entries: self.entries.transpose(),
        }
    }

    /// Inverse via the adjugate (the determinant is one).
    pub fn inverse(&self) -> GroupElement {
        GroupElement {
            group: self.group,
            entries: adjugate(&self.entries),
        }
    }

    pub fn determinant(&self) -> f64 {
        determinant(&self.entries)
    }

    pub fn max_abs_diff(&self, other: &GroupElement) -> f64 {
        (&self.entries - &other.entries).amax()
    }

    /// `max |k^T k - I|`.
    pub fn orthogonality_defect(&self) -> f64 {
        let n = self.dim();
        (self.entries.transpose() * &self.entries - DMatrix::<f64>::identity(n, n)).amax()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|x| x.is_finite())
    }
}

impl Serialize for GroupElement {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        #[derive(Serialize)]
        struct Repr<'a> {
            group: GroupId,
            rows: &'a [Vec<f64>],
        }
        Repr {
            group: self.group,
            rows: &self.rows(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for GroupElement {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Repr {
            group: GroupId,
            rows: Vec<Vec<f64>>,
        }
        let r = Repr::deserialize(d)?;
        let flat: Vec<f64> = r.rows.into_iter().flatten().collect();
        GroupElement::from_rows(r.group, &flat).map_err(serde::de::Error::custom)
    }
}

/// Random element with i.i.d. standard normal entries, renormalized to det 1.
pub fn random_gaussian_element<R: rand::Rng + ?Sized>(group: GroupId, rng: &mut R) -> GroupElement {
    use rand_distr::StandardNormal;
    let n = group.matrix_dim();
    loop {
        let mut m = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let det = determinant(&m);
        if det.abs() < 1e-6 {
            continue;
        }
        if det < 0.0 {
            m.row_mut(0).neg_mut();
        }
        let s = det.abs().powf(-1.0 / n as f64);
        m *= s;
        return GroupElement::from_matrix_unchecked(group, m);
    }
}

/// Haar-random element of SO(n).
pub fn random_rotation<R: rand::Rng + ?Sized>(group: GroupId, rng: &mut R) -> GroupElement {
    let g = random_gaussian_element(group, rng);
    crate::decomp::iwasawa(&g)
        .expect("gaussian sample is unimodular")
        .k_part
}

pub(crate) fn determinant(m: &DMatrix<f64>) -> f64 {
    match m.nrows() {
        2 => m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)],
        3 => {
            m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] - m[(1, 2)] * m[(2, 1)])
                - m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] - m[(1, 2)] * m[(2, 0)])
                + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] - m[(1, 1)] * m[(2, 0)])
        }
        _ => m.determinant(),
    }
}

pub(crate) fn adjugate(m: &DMatrix<f64>) -> DMatrix<f64> {
    match m.nrows() {
        2 => DMatrix::from_row_slice(2, 2, &[m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]]),
        3 => {
            let c = |i: usize, j: usize| {
                let r: Vec<usize> = (0..3).filter(|&x| x != i).collect();
                let k: Vec<usize> = (0..3).filter(|&x| x != j).collect();
                let minor = m[(r[0], k[0])] * m[(r[1], k[1])] - m[(r[0], k[1])] * m[(r[1], k[0])];
                if (i + j) % 2 == 0 {
                    minor
                } else {
                    -minor
                }
            };
            // adj = cofactor^T
            DMatrix::from_fn(3, 3, |i, j| c(j, i))
        }
        _ => {
            let det = m.determinant();
            m.clone().try_inverse().expect("singular matrix") * det
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_unimodular() {
        assert!(matches!(
            GroupElement::from_rows(GroupId::Sl2, &[2.0, 0.0, 0.0, 1.0]),
            Err(Error::Numerical { .. })
        ));
        assert!(matches!(
            GroupElement::from_rows(GroupId::Sl2, &[f64::NAN, 0.0, 0.0, 1.0]),
            Err(Error::Numerical { .. })
        ));
        assert!(matches!(
            GroupElement::from_rows(GroupId::Sl3, &[1.0, 0.0, 0.0, 1.0]),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn inverse_times_self_is_identity() {
        let g =
            GroupElement::from_rows(GroupId::Sl3, &[2.0, 1.0, 0.0, 0.0, 0.5, 3.0, 0.0, 0.0, 1.0])
                .unwrap();
        let id = g.mul(&g.inverse());
        assert!(id.max_abs_diff(&GroupElement::identity(GroupId::Sl3)) < 1e-15);
    }
}
