//! Seeded sampling primitives: multivariate normal in covariance or precision
//! form, inverse-Wishart and inverse-gamma.
//!
//! Random streams are ChaCha8 generators keyed by a 64-bit seed and a stream
//! id. ChaCha addresses streams by a counter, so every `(seed, stream)` pair
//! yields an independent, reproducible sequence without jump-ahead
//! bookkeeping. Stream assignments used across the crate:
//!
//! * chain `k` of a run uses stream `k`;
//! * simulated dataset `d` uses stream `d`, and its `a`-th regeneration
//!   attempt uses stream `d + (a << 32)`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{ChiSquared, Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

/// A reproducible random stream identified by `(seed, stream)`.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream: u64,
    rng: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(stream);
        Self { seed, stream, rng }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream(&self) -> u64 {
        self.stream
    }
}

impl RngCore for RngStream {
    fn next_u32(&mut self) -> u32 {
        self.rng.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.rng.fill_bytes(dst)
    }
}

/// Mixes a master seed with a job key (splitmix64 finalizer), for deriving
/// per-job seeds that stay stable when the job list changes.
pub fn derive_seed(master: u64, key: u64) -> u64 {
    let mut z = master ^ key.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// How the second argument of [`sample_mvn`] is to be read.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GaussianForm {
    Covariance,
    Precision,
}

pub fn standard_normal_vector<R: Rng + ?Sized>(n: usize, rng: &mut R) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

/// Cholesky factor with a descriptive error on failure.
pub fn cholesky(m: &DMatrix<f64>, what: &str) -> Result<Cholesky<f64, Dyn>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!("{what} is {}x{}", m.nrows(), m.ncols())));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::NotPositiveDefinite(format!("{what} has non-finite entries")));
    }
    Cholesky::new(m.clone()).ok_or_else(|| Error::NotPositiveDefinite(what.to_string()))
}

/// Draws from `N(mean, Σ)` where `Σ` is `matrix` or its inverse.
///
/// The precision form solves against the Cholesky factor of the precision
/// instead of inverting it: with `Λ = L Lᵀ`, `mean + L⁻ᵀ z` has covariance `Λ⁻¹`.
pub fn sample_mvn<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    matrix: &DMatrix<f64>,
    form: GaussianForm,
    rng: &mut R,
) -> Result<DVector<f64>> {
    if matrix.nrows() != mean.len() {
        return Err(Error::Dimension(format!(
            "mean has length {} but matrix is {}x{}",
            mean.len(),
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    let chol = cholesky(matrix, "Gaussian covariance/precision")?;
    let z = standard_normal_vector(mean.len(), rng);
    let l = chol.l_dirty();
    let dev = match form {
        GaussianForm::Covariance => l.lower_triangle() * z,
        GaussianForm::Precision => l
            .tr_solve_lower_triangular(&z)
            .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?,
    };
    Ok(mean + dev)
}

/// Draws from `N(Λ⁻¹ h, Λ⁻¹)` given the precision `Λ` and the linear term `h`.
/// This is the canonical form of every Gaussian full conditional in the sampler.
pub fn sample_mvn_canonical<R: Rng + ?Sized>(
    precision: &DMatrix<f64>,
    linear: &DVector<f64>,
    rng: &mut R,
) -> Result<DVector<f64>> {
    let chol = cholesky(precision, "posterior precision")?;
    let mut mean = linear.clone();
    chol.solve_mut(&mut mean);
    let z = standard_normal_vector(linear.len(), rng);
    let dev = chol
        .l_dirty()
        .tr_solve_lower_triangular(&z)
        .ok_or_else(|| Error::Numerical("triangular solve failed".into()))?;
    Ok(mean + dev)
}

/// Draws from the inverse-gamma with density `b^a / Γ(a) x^{-a-1} exp(-b/x)`.
pub fn sample_inverse_gamma<R: Rng + ?Sized>(shape: f64, scale: f64, rng: &mut R) -> Result<f64> {
    if !(shape > 0.0 && scale > 0.0 && shape.is_finite() && scale.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "inverse-gamma needs positive parameters, got a = {shape}, b = {scale}"
        )));
    }
    let gamma = Gamma::new(shape, 1.0 / scale)
        .map_err(|e| Error::InvalidParameter(format!("gamma: {e}")))?;
    Ok(1.0 / gamma.sample(rng))
}

/// Draws from the inverse-Wishart with density proportional to
/// `|Ω|^{-(ν+n+1)/2} exp(-tr(S Ω⁻¹)/2)`, whose mean is `S / (ν - n - 1)`.
///
/// A Wishart(ν, S⁻¹) matrix is built with the Bartlett decomposition
/// `W = (L A)(L A)ᵀ`, `L = chol(S⁻¹)`, and `Ω = W⁻¹ = (L A)⁻ᵀ (L A)⁻¹`.
pub fn sample_inverse_wishart<R: Rng + ?Sized>(
    nu: f64,
    scale: &DMatrix<f64>,
    rng: &mut R,
) -> Result<DMatrix<f64>> {
    let n = scale.nrows();
    if n == 0 || !scale.is_square() {
        return Err(Error::Dimension("inverse-Wishart scale must be square and nonempty".into()));
    }
    if !(nu > n as f64 - 1.0) || !nu.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "inverse-Wishart degrees of freedom {nu} must exceed dimension - 1 = {}",
            n - 1
        )));
    }
    let scale_inv = cholesky(scale, "inverse-Wishart scale")?.inverse();
    let l = cholesky(&scale_inv, "inverse of inverse-Wishart scale")?.unpack();

    let mut a = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        let chi = ChiSquared::new(nu - i as f64)
            .map_err(|e| Error::InvalidParameter(format!("chi-squared: {e}")))?;
        a[(i, i)] = chi.sample(rng).sqrt();
        for j in 0..i {
            a[(i, j)] = rng.sample(StandardNormal);
        }
    }
    let la = l * a;
    let la_inv = la
        .solve_lower_triangular(&DMatrix::identity(n, n))
        .ok_or_else(|| Error::Numerical("singular Bartlett factor".into()))?;
    let omega = la_inv.transpose() * la_inv;
    Ok(symmetrize(omega))
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}
