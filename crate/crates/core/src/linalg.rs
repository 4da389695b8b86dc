//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Solve `a x = b` by LU; reports a singular system instead of returning NaNs.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let lu = a.clone().lu();
    let x = lu
        .solve(b)
        .ok_or_else(|| Error::Singular(format!("{what}: LU factorization is singular")))?;
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Singular(format!("{what}: non-finite solution")));
    }
    Ok(x)
}

/// Eigen-decomposition of a symmetric matrix with eigenvalues sorted in
/// descending order. Ties keep their original index order.
pub fn sym_eigen_desc(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (k, &i) in order.iter().enumerate() {
        vectors.set_column(k, &eig.eigenvectors.column(i));
    }
    (values, vectors)
}

/// Largest eigenvalue of a symmetric matrix.
pub fn top_eigenvalue(m: &DMatrix<f64>) -> f64 {
    sym_eigen_desc(m).0.get(0).copied().unwrap_or(0.0)
}

/// Smallest eigenvalue of a symmetric matrix.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let (v, _) = sym_eigen_desc(m);
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Spectral norm (largest singular value).
pub fn spectral_norm(m: &DMatrix<f64>) -> f64 {
    if m.is_empty() {
        return 0.0;
    }
    m.singular_values().iter().copied().fold(0.0, f64::max)
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Column index of the first feature column that lies in the span of the
/// preceding independent columns, together with the columns it depends on.
pub fn first_dependent_column(phi: &DMatrix<f64>, tol: f64) -> Option<(usize, Vec<usize>)> {
    let mut basis: Vec<usize> = Vec::new();
    for j in 0..phi.ncols() {
        let col = phi.column(j).into_owned();
        let scale = col.norm().max(1.0);
        if basis.is_empty() {
            if col.norm() <= tol * scale {
                return Some((j, Vec::new()));
            }
            basis.push(j);
            continue;
        }
        let b = DMatrix::from_columns(&basis.iter().map(|&i| phi.column(i)).collect::<Vec<_>>());
        let svd = b.clone().svd(true, true);
        let coeffs = match svd.solve(&col, 1e-14) {
            Ok(c) => c,
            Err(_) => {
                basis.push(j);
                continue;
            }
        };
        let residual = (&b * &coeffs - &col).norm();
        if residual <= tol * scale {
            let deps = basis
                .iter()
                .zip(coeffs.iter())
                .filter(|(_, c)| c.abs() > tol)
                .map(|(&i, _)| i)
                .collect();
            return Some((j, deps));
        }
        basis.push(j);
    }
    None
}

/// Least-squares slope of `ys` against `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Mean and standard error of a sample.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}
