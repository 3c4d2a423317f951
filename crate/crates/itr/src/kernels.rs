//! Kernel evaluations, Gram matrices, and the median-heuristic bandwidth.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::types::KernelSpec;

#[cfg(feature = "parallel")]
use rayon::prelude::*;

/// Cross-kernel matrix with entry `(i, k) = k(rows_i, cols_k)`.
#[derive(Debug, Clone)]
pub struct GramMatrix {
    pub entries: DMatrix<f64>,
    pub row_id: String,
    pub col_id: String,
}

pub fn kernel_eval(spec: &KernelSpec, x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch(format!(
            "kernel inputs have lengths {} and {}",
            x.len(),
            y.len()
        )));
    }
    spec.validate()?;
    match spec {
        KernelSpec::Linear => Ok(x.iter().zip(y).map(|(a, b)| a * b).sum()),
        KernelSpec::Rbf { sigma } => {
            let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok((-sigma * sq).exp())
        }
    }
}

pub fn gram(spec: &KernelSpec, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<GramMatrix> {
    let entries = gram_entries(spec, x, y)?;
    Ok(GramMatrix { entries, row_id: String::new(), col_id: String::new() })
}

/// Gram entries without provenance bookkeeping; rows computed in parallel,
/// output identical to the sequential order.
pub fn gram_entries(spec: &KernelSpec, x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if x.ncols() != y.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "gram inputs have {} and {} columns",
            x.ncols(),
            y.ncols()
        )));
    }
    spec.validate()?;
    if matches!(spec, KernelSpec::Linear) {
        return Ok(x * y.transpose());
    }
    let n = x.nrows();
    let m = y.nrows();
    let row = |i: usize| -> Vec<f64> {
        let xi: Vec<f64> = x.row(i).iter().copied().collect();
        (0..m)
            .map(|k| {
                let yk: Vec<f64> = y.row(k).iter().copied().collect();
                kernel_eval(spec, &xi, &yk).expect("dimensions already checked")
            })
            .collect()
    };
    #[cfg(feature = "parallel")]
    let rows: Vec<Vec<f64>> = (0..n).into_par_iter().map(row).collect();
    #[cfg(not(feature = "parallel"))]
    let rows: Vec<Vec<f64>> = (0..n).map(row).collect();
    Ok(DMatrix::from_row_iterator(n, m, rows.into_iter().flatten()))
}

/// Median-heuristic RBF bandwidth: `sigma = 1 / median(pairwise distance)^2`.
pub fn median_bandwidth(x: &DMatrix<f64>) -> Result<f64> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::InvalidInput("median bandwidth needs at least two rows".into()));
    }
    let mut dists = Vec::with_capacity(n * (n - 1) / 2);
    for i in 0..n {
        for k in (i + 1)..n {
            let sq: f64 = x
                .row(i)
                .iter()
                .zip(x.row(k).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            dists.push(sq.sqrt());
        }
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let m = dists.len();
    let median = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if median <= 0.0 {
        return Err(Error::DegenerateInput(
            "median pairwise distance is zero (all points identical)".into(),
        ));
    }
    Ok(1.0 / (median * median))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rbf_same_point_is_one() {
        let s = KernelSpec::Rbf { sigma: 1.0 };
        assert_eq!(kernel_eval(&s, &[0.3, -0.7], &[0.3, -0.7]).unwrap(), 1.0);
    }

    #[test]
    fn linear_orthogonal_is_zero() {
        assert_eq!(kernel_eval(&KernelSpec::Linear, &[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
    }

    #[test]
    fn rbf_unit_distance() {
        let s = KernelSpec::Rbf { sigma: 1.0 };
        assert_relative_eq!(
            kernel_eval(&s, &[0.0, 0.0], &[1.0, 0.0]).unwrap(),
            (-1.0f64).exp(),
            max_relative = 1e-12
        );
    }

    #[test]
    fn bad_sigma_rejected() {
        assert!(kernel_eval(&KernelSpec::Rbf { sigma: 0.0 }, &[0.0], &[1.0]).is_err());
        assert!(kernel_eval(&KernelSpec::Linear, &[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn linear_gram_of_identity_rows() {
        let x = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let g = gram_entries(&KernelSpec::Linear, &x, &x).unwrap();
        assert_eq!(g, DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]));
    }

    #[test]
    fn rbf_gram_diagonal_and_cross_column() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 0.0]);
        let g = gram_entries(&KernelSpec::Rbf { sigma: 1.0 }, &x, &x).unwrap();
        assert_eq!(g[(0, 0)], 1.0);
        assert_eq!(g[(1, 1)], 1.0);
        let y = DMatrix::from_row_slice(1, 2, &[1.0, 0.0]);
        let c = gram_entries(&KernelSpec::Rbf { sigma: 1.0 }, &x, &y).unwrap();
        assert_relative_eq!(c[(0, 0)], (-1.0f64).exp(), max_relative = 1e-12);
        assert_relative_eq!(c[(1, 0)], 1.0, max_relative = 1e-12);
    }

    #[test]
    fn median_bandwidth_single_pair() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 2.0, 0.0]);
        assert_relative_eq!(median_bandwidth(&x).unwrap(), 0.25, max_relative = 1e-12);
    }

    #[test]
    fn median_bandwidth_order_statistics() {
        // Distances {1, 2, 3}, median 2.
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 0.0, 1.0, 0.0, 3.0, 0.0]);
        assert_relative_eq!(median_bandwidth(&x).unwrap(), 0.25, max_relative = 1e-12);
    }

    #[test]
    fn median_bandwidth_degenerate() {
        let x = DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.0, 0.0]);
        assert!(matches!(median_bandwidth(&x), Err(Error::DegenerateInput(_))));
    }

    #[test]
    fn gram_symmetric_psd_on_random_input() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for &sigma in &[0.3, 1.0, 3.0] {
            let n = 30;
            let x = DMatrix::from_fn(n, 4, |_, _| rng.random_range(-1.0..1.0));
            let g = gram_entries(&KernelSpec::Rbf { sigma }, &x, &x).unwrap();
            for i in 0..n {
                for k in 0..n {
                    assert!((g[(i, k)] - g[(k, i)]).abs() < 1e-12);
                    assert!(g[(i, k)] > 0.0 && g[(i, k)] <= 1.0);
                }
            }
            let eig = g.symmetric_eigenvalues();
            assert!(eig.iter().all(|&e| e >= -1e-8), "min eigenvalue {:?}", eig.min());
        }
    }

    #[test]
    fn median_bandwidth_permutation_invariant() {
        let x = DMatrix::from_row_slice(4, 2, &[0.1, 0.2, -0.5, 1.0, 2.0, 0.0, -1.0, -1.0]);
        let perm = DMatrix::from_row_slice(4, 2, &[2.0, 0.0, 0.1, 0.2, -1.0, -1.0, -0.5, 1.0]);
        assert_eq!(median_bandwidth(&x).unwrap(), median_bandwidth(&perm).unwrap());
    }
}
