//! Iwasawa (NAK) and Cartan (KAK) factorizations, and the radial component.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::group::GroupElement;
use crate::rootdata::ChamberVector;

/// `g = n_part * a_part * k_part` with `n` unit upper triangular, `a` positive
/// diagonal and `k` special orthogonal.
#[derive(Debug, Clone, Serialize)]
pub struct IwasawaTriple {
    pub n_part: GroupElement,
    pub a_part: GroupElement,
    pub k_part: GroupElement,
}

/// `g = k1 * a_part * k2`, the diagonal of `a_part` nonincreasing.
#[derive(Debug, Clone, Serialize)]
pub struct CartanTriple {
    pub k1: GroupElement,
    pub a_part: GroupElement,
    pub k2: GroupElement,
}

impl IwasawaTriple {
    pub fn product(&self) -> GroupElement {
        self.n_part.mul(&self.a_part).mul(&self.k_part)
    }

    /// The NA representative `n * a` of the coset `g K`.
    pub fn na_part(&self) -> GroupElement {
        self.n_part.mul(&self.a_part)
    }
}

impl CartanTriple {
    pub fn product(&self) -> GroupElement {
        self.k1.mul(&self.a_part).mul(&self.k2)
    }

    pub fn singular_values(&self) -> Vec<f64> {
        (0..self.a_part.dim())
            .map(|i| self.a_part.get(i, i))
            .collect()
    }
}

fn check_input(g: &GroupElement, op: &'static str) -> Result<()> {
    if !g.is_finite() {
        return Err(Error::numerical("decomp", op, "non-finite matrix entry"));
    }
    Ok(())
}

/// RQ factorization by Gram-Schmidt on the rows, starting from the last one.
pub fn iwasawa(g: &GroupElement) -> Result<IwasawaTriple> {
    check_input(g, "iwasawa")?;
    let n = g.dim();
    let m = g.matrix();
    let mut r = DMatrix::<f64>::zeros(n, n);
    let mut q = DMatrix::<f64>::zeros(n, n);
    for i in (0..n).rev() {
        let mut v: Vec<f64> = (0..n).map(|c| m[(i, c)]).collect();
        // Two passes of modified Gram-Schmidt keep q orthogonal for graded rows.
        for _ in 0..2 {
            for j in i + 1..n {
                let proj: f64 = (0..n).map(|c| v[c] * q[(j, c)]).sum();
                r[(i, j)] += proj;
                for c in 0..n {
                    v[c] -= proj * q[(j, c)];
                }
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::numerical(
                "decomp",
                "iwasawa",
                format!("row {i} is linearly dependent on the rows below it"),
            ));
        }
        r[(i, i)] = norm;
        for c in 0..n {
            q[(i, c)] = v[c] / norm;
        }
    }
    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut nn = DMatrix::<f64>::identity(n, n);
    for j in 0..n {
        a[(j, j)] = r[(j, j)];
        for i in 0..j {
            nn[(i, j)] = r[(i, j)] / r[(j, j)];
        }
    }
    let group = g.group();
    Ok(IwasawaTriple {
        n_part: GroupElement::from_matrix_unchecked(group, nn),
        a_part: GroupElement::from_matrix_unchecked(group, a),
        k_part: GroupElement::from_matrix_unchecked(group, q),
    })
}

fn top_eigenvector(s: &DMatrix<f64>) -> DVector<f64> {
    let scale = s.amax();
    let scaled = if scale > 0.0 { s / scale } else { s.clone() };
    let eig = SymmetricEigen::new(scaled);
    let mut best = 0;
    for i in 1..eig.eigenvalues.len() {
        if eig.eigenvalues[i] > eig.eigenvalues[best] {
            best = i;
        }
    }
    eig.eigenvectors.column(best).into_owned()
}

/// Flips `v` so that its first entry of non-negligible size is positive.
fn fix_sign(v: &mut DVector<f64>) {
    let tol = 1e-12 * v.amax();
    if let Some(x) = v.iter().find(|x| x.abs() > tol) {
        if *x < 0.0 {
            v.neg_mut();
        }
    }
}

fn cross(a: &DVector<f64>, b: &DVector<f64>) -> DVector<f64> {
    DVector::from_vec(vec![
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ])
}

fn perp2(v: &DVector<f64>) -> DVector<f64> {
    DVector::from_vec(vec![-v[1], v[0]])
}

fn orthonormalize_against(v: &mut DVector<f64>, against: &DVector<f64>) {
    let p = v.dot(against);
    *v -= against * p;
    let mut n = v.norm();
    if n < 0.5 {
        // Fully degenerate spectrum: any unit vector orthogonal to `against` will do.
        let axis = (0..against.len())
            .min_by(|&i, &j| against[i].abs().total_cmp(&against[j].abs()))
            .unwrap_or(0);
        *v = DVector::from_fn(against.len(), |i, _| if i == axis { 1.0 } else { 0.0 });
        let p = v.dot(against);
        *v -= against * p;
        n = v.norm();
    }
    *v /= n;
}

/// KAK factorization from the eigenvectors of `g^T g`.
///
/// The largest singular value comes from the top eigenvector of `g^T g`
/// and the smallest from the top eigenvector of `(g^T g)^{-1}`, so both are
/// accurate even when `g` is badly conditioned. Singular vectors
/// `v_1..v_{n-1}` have their first non-negligible entry positive; the last
/// one is fixed by orientation.
pub fn cartan(g: &GroupElement) -> Result<CartanTriple> {
    check_input(g, "cartan")?;
    let n = g.dim();
    let m = g.matrix();
    let s = m.transpose() * m;
    let mut v1 = top_eigenvector(&s);
    fix_sign(&mut v1);

    let (u, sigma, v) = if n == 2 {
        let gv1 = m * &v1;
        let s1 = gv1.norm();
        let u1 = gv1 / s1;
        let v2 = perp2(&v1);
        let u2 = perp2(&u1);
        (
            DMatrix::from_columns(&[u1, u2]),
            vec![s1, 1.0 / s1],
            DMatrix::from_columns(&[v1, v2]),
        )
    } else {
        let inv = g.inverse();
        let mi = inv.matrix();
        let si = mi * mi.transpose();
        let mut v3 = top_eigenvector(&si);
        orthonormalize_against(&mut v3, &v1);
        let mut v2 = cross(&v3, &v1);
        fix_sign(&mut v2);
        let v3 = cross(&v1, &v2);

        let gv1 = m * &v1;
        let s1 = gv1.norm();
        let u1 = gv1 / s1;
        let w3 = mi.transpose() * &v3;
        let s3 = 1.0 / w3.norm();
        let mut u3 = w3 * s3;
        orthonormalize_against(&mut u3, &u1);
        let u2 = cross(&u3, &u1);
        (
            DMatrix::from_columns(&[u1, u2, u3]),
            vec![s1, 1.0 / (s1 * s3), s3],
            DMatrix::from_columns(&[v1, v2, v3]),
        )
    };
    if sigma.iter().any(|x| !x.is_finite() || *x <= 0.0) {
        return Err(Error::numerical(
            "decomp",
            "cartan",
            "degenerate singular values",
        ));
    }
    let group = g.group();
    let a = DMatrix::from_diagonal(&DVector::from_vec(sigma));
    Ok(CartanTriple {
        k1: GroupElement::from_matrix_unchecked(group, u),
        a_part: GroupElement::from_matrix_unchecked(group, a),
        k2: GroupElement::from_matrix_unchecked(group, v.transpose()),
    })
}

/// `log` of the Cartan middle factor; lies in the closed positive chamber.
pub fn radial_component(g: &GroupElement) -> Result<ChamberVector> {
    let c = cartan(g)?;
    let logs: Vec<f64> = c.singular_values().iter().map(|s| s.ln()).collect();
    // The diagonal is traceless up to round-off; recentre so the vector is exactly traceless.
    let mean = logs.iter().sum::<f64>() / logs.len() as f64;
    Ok(ChamberVector::from_raw(
        logs.iter().map(|x| x - mean).collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::group::{random_gaussian_element, random_rotation};
    use crate::rootdata::{build_root_system, GroupId};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// One-sided Jacobi SVD: rotate column pairs until orthogonal; the
    /// column norms are then the singular values.
    fn jacobi_singular_values(g: &GroupElement) -> Vec<f64> {
        let n = g.dim();
        let mut a: Vec<Vec<f64>> = (0..n)
            .map(|c| (0..n).map(|r| g.get(r, c)).collect())
            .collect();
        for _sweep in 0..60 {
            let mut off = 0.0_f64;
            for p in 0..n {
                for q in p + 1..n {
                    let alpha: f64 = a[p].iter().map(|x| x * x).sum();
                    let beta: f64 = a[q].iter().map(|x| x * x).sum();
                    let gamma: f64 = a[p].iter().zip(&a[q]).map(|(x, y)| x * y).sum();
                    if gamma == 0.0 {
                        continue;
                    }
                    off = off.max(gamma.abs() / (alpha * beta).sqrt());
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let t = if zeta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for r in 0..n {
                        let (x, y) = (a[p][r], a[q][r]);
                        a[p][r] = c * x - s * y;
                        a[q][r] = s * x + c * y;
                    }
                }
            }
            if off < 1e-15 {
                break;
            }
        }
        let mut sv: Vec<f64> = a
            .iter()
            .map(|c| c.iter().map(|x| x * x).sum::<f64>().sqrt())
            .collect();
        sv.sort_by(|x, y| y.total_cmp(x));
        sv
    }

    fn random_na<R: Rng>(group: GroupId, rng: &mut R) -> (GroupElement, GroupElement) {
        let n = group.matrix_dim();
        let mut nn = DMatrix::<f64>::identity(n, n);
        let mut logs: Vec<f64> = (0..n).map(|_| rng.random_range(-1.5..1.5)).collect();
        let mean = logs.iter().sum::<f64>() / n as f64;
        logs.iter_mut().for_each(|x| *x -= mean);
        let a = DMatrix::from_diagonal(&DVector::from_iterator(n, logs.iter().map(|x| x.exp())));
        for i in 0..n {
            for j in i + 1..n {
                nn[(i, j)] = rng.random_range(-2.0..2.0);
            }
        }
        (
            GroupElement::from_matrix_unchecked(group, nn),
            GroupElement::from_matrix_unchecked(group, a),
        )
    }

    #[test]
    fn identity_decomposes_trivially() {
        for group in [GroupId::Sl2, GroupId::Sl3] {
            let id = GroupElement::identity(group);
            let iw = iwasawa(&id).unwrap();
            assert_eq!(iw.n_part, id);
            assert_eq!(iw.a_part, id);
            assert_eq!(iw.k_part, id);
            let c = cartan(&id).unwrap();
            assert_eq!(c.a_part, id);
            assert!(c.product().max_abs_diff(&id) < 1e-15);
            assert!(radial_component(&id).unwrap().norm() == 0.0);
        }
    }

    #[test]
    fn triangular_input_has_trivial_k() {
        let g = GroupElement::from_rows(GroupId::Sl2, &[2.0, 3.0, 0.0, 0.5]).unwrap();
        let iw = iwasawa(&g).unwrap();
        assert!(
            iw.k_part
                .max_abs_diff(&GroupElement::identity(GroupId::Sl2))
                < 1e-15
        );
        assert!((iw.a_part.get(0, 0) - 2.0).abs() < 1e-15);
        assert!((iw.n_part.get(0, 1) - 6.0).abs() < 1e-15);
    }

    #[test]
    fn diagonal_cartan() {
        let g = GroupElement::from_rows(GroupId::Sl2, &[2.0, 0.0, 0.0, 0.5]).unwrap();
        let c = cartan(&g).unwrap();
        assert_eq!(c.singular_values(), vec![2.0, 0.5]);
        let id = GroupElement::identity(GroupId::Sl2);
        let minus = GroupElement::from_rows(GroupId::Sl2, &[-1.0, 0.0, 0.0, -1.0]).unwrap();
        assert!(c.k1.max_abs_diff(&id) < 1e-15 || c.k1.max_abs_diff(&minus) < 1e-15);
        assert!(c.k2.max_abs_diff(&id) < 1e-15 || c.k2.max_abs_diff(&minus) < 1e-15);
    }

    #[test]
    fn radial_component_of_diag_e() {
        let e = std::f64::consts::E;
        let g = GroupElement::from_rows(GroupId::Sl2, &[e, 0.0, 0.0, 1.0 / e]).unwrap();
        let h = radial_component(&g).unwrap();
        assert!((h.coords()[0] - 1.0).abs() < 1e-15);
        assert!((h.coords()[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn random_round_trips_and_factor_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for group in [GroupId::Sl2, GroupId::Sl3] {
            let rs = build_root_system(group);
            let n = group.matrix_dim();
            for _ in 0..1000 {
                let g = random_gaussian_element(group, &mut rng);
                let iw = iwasawa(&g).unwrap();
                assert!(iw.product().max_abs_diff(&g) < 1e-9);
                for i in 0..n {
                    assert!(iw.a_part.get(i, i) > 0.0);
                    assert_eq!(iw.n_part.get(i, i), 1.0);
                    for j in 0..i {
                        assert_eq!(iw.n_part.get(i, j), 0.0);
                    }
                }
                assert!(iw.k_part.orthogonality_defect() < 1e-10);
                assert!((iw.k_part.determinant() - 1.0).abs() < 1e-10);
                assert!((iw.a_part.determinant() - 1.0).abs() < 1e-10);

                let c = cartan(&g).unwrap();
                assert!(c.product().max_abs_diff(&g) < 1e-9);
                assert!(c.k1.orthogonality_defect() < 1e-10);
                assert!(c.k2.orthogonality_defect() < 1e-10);
                assert!((c.k1.determinant() - 1.0).abs() < 1e-10);
                assert!((c.k2.determinant() - 1.0).abs() < 1e-10);
                let sv = c.singular_values();
                assert!(sv.windows(2).all(|w| w[0] >= w[1]));
                let h = radial_component(&g).unwrap();
                assert!(rs.chamber_distance(&h) >= -1e-10);
            }
        }
    }

    #[test]
    fn singular_values_match_jacobi_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for group in [GroupId::Sl2, GroupId::Sl3] {
            for _ in 0..1000 {
                let g = random_gaussian_element(group, &mut rng);
                let ours = cartan(&g).unwrap().singular_values();
                let oracle = jacobi_singular_values(&g);
                for (a, b) in ours.iter().zip(&oracle) {
                    assert!((a - b).abs() < 1e-9, "{ours:?} vs {oracle:?}");
                }
            }
        }
    }

    #[test]
    fn iwasawa_recovers_planted_factors() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for group in [GroupId::Sl2, GroupId::Sl3] {
            for _ in 0..1000 {
                let (n0, a0) = random_na(group, &mut rng);
                let k0 = random_rotation(group, &mut rng);
                let g = n0.mul(&a0).mul(&k0);
                let iw = iwasawa(&g).unwrap();
                assert!(iw.n_part.max_abs_diff(&n0) < 1e-9);
                assert!(iw.a_part.max_abs_diff(&a0) < 1e-9);
                assert!(iw.k_part.max_abs_diff(&k0) < 1e-9);
            }
        }
    }

    #[test]
    fn radial_component_is_bi_k_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for group in [GroupId::Sl2, GroupId::Sl3] {
            for _ in 0..500 {
                let g = random_gaussian_element(group, &mut rng);
                let k = random_rotation(group, &mut rng);
                let kp = random_rotation(group, &mut rng);
                let h = radial_component(&g).unwrap();
                let h2 = radial_component(&k.mul(&g).mul(&kp)).unwrap();
                assert!(h.sub(&h2).coords().iter().all(|x| x.abs() < 1e-8));
            }
        }
    }

    #[test]
    fn graded_na_elements_keep_small_singular_values() {
        // exp(H) with |H| ~ 100 times a unipotent: singular values span e^{+-100}.
        let h = ChamberVector::new(vec![100.0, -3.0, -97.0]).unwrap();
        let a = GroupElement::exp_diagonal(GroupId::Sl3, &h).unwrap();
        let n = GroupElement::from_rows(
            GroupId::Sl3,
            &[1.0, 0.3, -0.2, 0.0, 1.0, 0.7, 0.0, 0.0, 1.0],
        )
        .unwrap();
        let k = GroupElement::rotation(GroupId::Sl3, 0, 2, 0.4);
        let r = radial_component(&k.mul(&a)).unwrap();
        for (x, y) in r.coords().iter().zip(h.coords()) {
            assert!((x - y).abs() < 1e-9, "{r:?}");
        }
        let r = radial_component(&n.mul(&a)).unwrap();
        assert!((r.coords().iter().sum::<f64>()).abs() < 1e-12);
        assert!(r.coords()[0] > 99.0 && r.coords()[2] < -96.0);
    }

    #[test]
    fn non_finite_is_numerical_failure() {
        let g = GroupElement::from_matrix_unchecked(
            GroupId::Sl2,
            DMatrix::from_row_slice(2, 2, &[f64::INFINITY, 0.0, 0.0, 1.0]),
        );
        assert!(matches!(iwasawa(&g), Err(Error::Numerical { .. })));
        assert!(matches!(cartan(&g), Err(Error::Numerical { .. })));
    }
}
