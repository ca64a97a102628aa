//! Image-quality metrics: global SSIM, PSNR, and a Fréchet distance over PCA
//! features ("FID-proxy"; no Inception network is involved).

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::image::{mse, ImageTensor};

/// Returned by [`psnr`] for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;

pub const DEFAULT_FEATURE_DIM: usize = 16;

/// Name used for the Fréchet metric in every emitted artifact.
pub const FID_PROXY: &str = "fid-proxy";

/// SSIM from whole-image statistics (no sliding window).
pub fn ssim(x: &ImageTensor, y: &ImageTensor, dynamic_range: f64) -> Result<f64> {
    x.check_same_shape(y)?;
    Ok(ssim_slices(x.values(), y.values(), dynamic_range))
}

pub fn ssim_slices(x: &[f64], y: &[f64], dynamic_range: f64) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut vx, mut vy, mut cov) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        vx += da * da;
        vy += db * db;
        cov += da * db;
    }
    vx /= n;
    vy /= n;
    cov /= n;
    let c1 = (0.01 * dynamic_range).powi(2);
    let c2 = (0.03 * dynamic_range).powi(2);
    (2.0 * mx * my + c1) / (mx * mx + my * my + c1) * (2.0 * cov + c2) / (vx + vy + c2)
}

pub fn psnr(x: &ImageTensor, y: &ImageTensor, max_value: f64) -> Result<f64> {
    x.check_same_shape(y)?;
    Ok(psnr_from_mse(mse(x.values(), y.values()), max_value))
}

pub fn psnr_from_mse(mse: f64, max_value: f64) -> f64 {
    if mse == 0.0 {
        return PSNR_CAP_DB;
    }
    (10.0 * (max_value * max_value / mse).log10()).min(PSNR_CAP_DB)
}

/// Squared Fréchet distance between two Gaussians.
pub fn frechet_gaussian(
    mu_a: &DVector<f64>,
    cov_a: &DMatrix<f64>,
    mu_b: &DVector<f64>,
    cov_b: &DMatrix<f64>,
) -> Result<f64> {
    let d = mu_a.len();
    if mu_b.len() != d || cov_a.shape() != (d, d) || cov_b.shape() != (d, d) {
        return Err(Error::Shape("Gaussian parameter dimensions disagree".into()));
    }
    let mean_term = (mu_a - mu_b).norm_squared();
    let cross = trace_sqrt_product(cov_a, cov_b)?;
    let d2 = mean_term + cov_a.trace() + cov_b.trace() - 2.0 * cross;
    Ok(d2.max(0.0))
}

/// `Tr (A B)^{1/2}` for symmetric PSD `A`, `B`, via `A^{1/2} B A^{1/2}`.
fn trace_sqrt_product(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    let sqrt_a = psd_sqrt(a)?;
    let m = &sqrt_a * b * &sqrt_a;
    let m = (&m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(m);
    let mut total = 0.0;
    for &l in eig.eigenvalues.iter() {
        check_eigenvalue(l)?;
        total += l.max(0.0).sqrt();
    }
    Ok(total)
}

fn check_eigenvalue(l: f64) -> Result<()> {
    if l < -1e-8 {
        return Err(Error::NonFinite(format!(
            "matrix square root of an indefinite matrix (eigenvalue {l:e})"
        )));
    }
    Ok(())
}

fn psd_sqrt(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let mut vals = eig.eigenvalues.clone();
    for v in vals.iter_mut() {
        check_eigenvalue(*v)?;
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose())
}

/// Mean and sample covariance of the rows of `x`.
fn gaussian_fit(x: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = x.nrows();
    let mu = x.row_mean().transpose();
    let mut centered = x.clone();
    for mut row in centered.row_iter_mut() {
        row -= mu.transpose();
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    (mu, cov)
}

fn stack(set: &[ImageTensor]) -> Result<DMatrix<f64>> {
    let len = set[0].len();
    if set.iter().any(|im| im.len() != len) {
        return Err(Error::Shape("images within a Fréchet set differ in size".into()));
    }
    Ok(DMatrix::from_row_iterator(set.len(), len, set.iter().flat_map(|im| im.values().iter().copied())))
}

/// Top `feature_dim` principal axes of the pooled rows, as columns.
fn principal_axes(pooled: &DMatrix<f64>, feature_dim: usize) -> DMatrix<f64> {
    let (_, cov) = gaussian_fit(pooled);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]).then(i.cmp(&j)));
    let cols: Vec<_> = order[..feature_dim].iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
    DMatrix::from_columns(&cols)
}

/// FID-proxy: squared Fréchet distance between Gaussian fits of PCA features.
///
/// The projection is fitted on `set_a ∪ set_b`, so the value is symmetric in
/// its arguments.
pub fn frechet_distance(set_a: &[ImageTensor], set_b: &[ImageTensor], feature_dim: usize) -> Result<f64> {
    if feature_dim == 0 {
        return Err(Error::InvalidArgument("feature_dim must be positive".into()));
    }
    for (name, set) in [("a", set_a), ("b", set_b)] {
        if set.len() < feature_dim + 1 {
            return Err(Error::InvalidArgument(format!(
                "set {name} has {} images; at least {} are needed for {feature_dim} features",
                set.len(),
                feature_dim + 1
            )));
        }
    }
    let a = stack(set_a)?;
    let b = stack(set_b)?;
    if a.ncols() != b.ncols() {
        return Err(Error::Shape("Fréchet sets differ in image size".into()));
    }
    if feature_dim > a.ncols() {
        return Err(Error::InvalidArgument(format!(
            "feature_dim {feature_dim} exceeds the pixel count {}",
            a.ncols()
        )));
    }
    let mut pooled = DMatrix::zeros(a.nrows() + b.nrows(), a.ncols());
    pooled.rows_mut(0, a.nrows()).copy_from(&a);
    pooled.rows_mut(a.nrows(), b.nrows()).copy_from(&b);
    let axes = principal_axes(&pooled, feature_dim);
    let (mu_a, cov_a) = gaussian_fit(&(&a * &axes));
    let (mu_b, cov_b) = gaussian_fit(&(&b * &axes));
    frechet_gaussian(&mu_a, &cov_a, &mu_b, &cov_b)
}
