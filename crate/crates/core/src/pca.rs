//! Principal component projection of embedding vectors.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, ArrayView2, Axis};

use crate::error::{validation, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Pca {
    /// `samples × dims`
    pub coordinates: Array2<f64>,
    /// `dims × features`, orthonormal rows.
    pub components: Array2<f64>,
    pub explained_variance: Vec<f64>,
    pub total_variance: f64,
    pub mean: Array1<f64>,
}

/// Projects mean-centred rows of `x` onto the top `dims` eigenvectors of
/// their covariance. Each component is signed so that its largest-magnitude
/// entry is positive.
pub fn pca_project(x: ArrayView2<'_, f64>, dims: usize) -> Result<Pca> {
    let (n, d) = x.dim();
    if dims == 0 || n < dims || d < dims {
        return Err(validation(format!(
            "cannot extract {dims} components from {n} samples of dimension {d}"
        )));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("PCA input".into()));
    }
    let mean = x.mean_axis(Axis(0)).expect("nonempty");
    let centered = &x - &mean;
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let cov = centered.t().dot(&centered) / denom;
    let eig = SymmetricEigen::new(DMatrix::from_fn(d, d, |i, j| cov[[i, j]]));
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = Array2::zeros((dims, d));
    let mut explained = Vec::with_capacity(dims);
    for (r, &c) in order.iter().take(dims).enumerate() {
        let v = eig.eigenvectors.column(c);
        let pivot = (0..d).fold(0, |best, i| if v[i].abs() > v[best].abs() { i } else { best });
        let sign = if v[pivot] < 0.0 { -1.0 } else { 1.0 };
        for i in 0..d {
            components[[r, i]] = sign * v[i];
        }
        explained.push(eig.eigenvalues[c].max(0.0));
    }
    Ok(Pca {
        coordinates: centered.dot(&components.t()),
        components,
        explained_variance: explained,
        total_variance: (0..d).map(|i| cov[[i, i]]).sum(),
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn identical_rows_project_to_origin() {
        let x = array![[1.0, 2.0, 3.0], [1.0, 2.0, 3.0], [1.0, 2.0, 3.0]];
        let p = pca_project(x.view(), 2).unwrap();
        assert!(p.coordinates.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn line_is_one_component() {
        let x = array![[0.0, 0.0], [1.0, 2.0], [2.0, 4.0], [-1.0, -2.0]];
        let p = pca_project(x.view(), 2).unwrap();
        assert!((p.explained_variance[0] - p.total_variance).abs() < 1e-12);
        assert!(p.explained_variance[1].abs() < 1e-12);
        let c = p.components.row(0);
        assert!((c[1] - 2.0 / 5f64.sqrt()).abs() < 1e-12);
        let g = p.components.dot(&p.components.t());
        assert!((&g - &Array2::<f64>::eye(2)).iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn too_few_samples() {
        assert!(pca_project(array![[1.0, 2.0]].view(), 2).is_err());
    }
}
