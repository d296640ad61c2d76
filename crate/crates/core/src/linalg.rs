//! Small dense linear-algebra helpers shared by the projection oracles.

use nalgebra::{DMatrix, DVector};

/// Orthonormal basis of the nullspace of `a`, built from the row space of a
/// thin singular value decomposition (no Gram-matrix squaring) followed by
/// pivoted Gram-Schmidt on the projected identity columns.
pub fn nullspace_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    let dim = a.ncols();
    let svd = a.clone().svd(false, true);
    let smax = svd.singular_values.max();
    let tol = smax * 1e-12 * dim.max(a.nrows()) as f64;
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();

    // Candidates: identity columns with the row space projected out.
    let mut candidates: Vec<DVector<f64>> = (0..dim)
        .map(|j| {
            let mut e = DVector::zeros(dim);
            e[j] = 1.0;
            for r in 0..rank {
                let row = v_t.row(r).transpose();
                let coeff = row.dot(&e);
                e -= row * coeff;
            }
            e
        })
        .collect();

    let target = dim - rank;
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(target);
    for _ in 0..target {
        // Pivot: take the largest remaining candidate.
        let (best, _) = candidates
            .iter()
            .enumerate()
            .map(|(i, c)| (i, c.norm()))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .expect("nonempty candidates");
        let mut v = candidates.swap_remove(best);
        // Re-orthogonalize against both the accepted basis and the row
        // space for a crisp split.
        for b in &basis {
            let coeff = b.dot(&v);
            v -= b * coeff;
        }
        for r in 0..rank {
            let row = v_t.row(r).transpose();
            let coeff = row.dot(&v);
            v -= row * coeff;
        }
        let norm = v.norm();
        v /= norm;
        for c in candidates.iter_mut() {
            let coeff = v.dot(c);
            *c -= &v * coeff;
        }
        basis.push(v);
    }
    DMatrix::from_columns(&basis.iter().map(|v| v.column(0)).collect::<Vec<_>>())
}

/// Least-squares solve through the pseudoinverse.
pub fn pinv_solve(m: &DMatrix<f64>, rhs: &DVector<f64>) -> DVector<f64> {
    let svd = m.clone().svd(true, true);
    let smax = svd.singular_values.max().max(1e-300);
    svd.solve(rhs, smax * 1e-12).expect("svd solve")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nullspace_is_orthonormal_and_annihilated() {
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 1.0, 1.0, 1.0, 1.0, -1.0, 0.5, 0.0]);
        let z = nullspace_basis(&a);
        assert_eq!(z.ncols(), 2);
        let az = &a * &z;
        assert!(az.amax() < 1e-13, "|A Z| = {}", az.amax());
        let ztz = z.transpose() * &z;
        for i in 0..2 {
            for j in 0..2 {
                let expected = if i == j { 1.0 } else { 0.0 };
                assert!((ztz[(i, j)] - expected).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn handles_redundant_rows() {
        // Second row is twice the first.
        let a = DMatrix::from_row_slice(2, 3, &[1.0, 1.0, 0.0, 2.0, 2.0, 0.0]);
        let z = nullspace_basis(&a);
        assert_eq!(z.ncols(), 2);
        assert!((&a * &z).amax() < 1e-13);
    }
}
