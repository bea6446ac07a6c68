//! Dense third-order tensors and the CP (CANDECOMP/PARAFAC) machinery used to
//! parameterize VAR coefficients.
//!
//! Storage order is fixed: `i1` varies fastest, then `i2`, then `i3`, so the
//! flat offset of `(i1, i2, i3)` is `i1 + I1 * (i2 + I2 * i3)`. With this
//! layout the mode-1 matricization is the column-major `I1 x (I2 * I3)` view of
//! the same buffer, with column index `i2 + I2 * i3`. For a VAR coefficient
//! tensor of shape `N x N x P` that is exactly `(A_1, ..., A_P)` laid side by
//! side.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense third-order real tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn zeros(dims: [usize; 3]) -> Result<Self> {
        check_dims(dims)?;
        Ok(Self {
            dims,
            data: vec![0.0; dims[0] * dims[1] * dims[2]],
        })
    }

    /// Builds a tensor from a flat buffer in storage order.
    pub fn from_vec(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        check_dims(dims)?;
        let expected = dims[0] * dims[1] * dims[2];
        if data.len() != expected {
            return Err(Error::Dimension(format!(
                "tensor {:?} needs {} entries, got {}",
                dims,
                expected,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("tensor entries must be finite".into()));
        }
        Ok(Self { dims, data })
    }

    #[inline]
    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn offset(&self, i1: usize, i2: usize, i3: usize) -> usize {
        debug_assert!(i1 < self.dims[0] && i2 < self.dims[1] && i3 < self.dims[2]);
        i1 + self.dims[0] * (i2 + self.dims[1] * i3)
    }

    #[inline]
    pub fn get(&self, i1: usize, i2: usize, i3: usize) -> f64 {
        self.data[self.offset(i1, i2, i3)]
    }

    #[inline]
    pub fn set(&mut self, i1: usize, i2: usize, i3: usize, value: f64) {
        let k = self.offset(i1, i2, i3);
        self.data[k] = value;
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Tensor3) -> Result<()> {
        if self.dims != other.dims {
            return Err(Error::Dimension(format!(
                "axpy between {:?} and {:?}",
                self.dims, other.dims
            )));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += alpha * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: f64) {
        self.data.iter_mut().for_each(|v| *v *= alpha);
    }

    /// Frobenius norm of `self - other`.
    pub fn frobenius_distance(&self, other: &Tensor3) -> f64 {
        debug_assert_eq!(self.dims, other.dims);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute entry difference.
    pub fn max_abs_diff(&self, other: &Tensor3) -> f64 {
        debug_assert_eq!(self.dims, other.dims);
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

fn check_dims(dims: [usize; 3]) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::Dimension(format!(
            "tensor dimensions must be positive, got {dims:?}"
        )));
    }
    Ok(())
}

/// The three loading matrices of a rank-`R` CP decomposition.
#[derive(Clone, Debug, PartialEq)]
pub struct CpLoadings {
    pub b1: DMatrix<f64>,
    pub b2: DMatrix<f64>,
    pub b3: DMatrix<f64>,
}

impl CpLoadings {
    pub fn new(b1: DMatrix<f64>, b2: DMatrix<f64>, b3: DMatrix<f64>) -> Result<Self> {
        check_loadings(&b1, &b2, &b3)?;
        Ok(Self { b1, b2, b3 })
    }

    pub fn rank(&self) -> usize {
        self.b1.ncols()
    }

    pub fn dims(&self) -> [usize; 3] {
        [self.b1.nrows(), self.b2.nrows(), self.b3.nrows()]
    }

    pub fn compose(&self) -> Tensor3 {
        compose_unchecked(&self.b1, &self.b2, &self.b3)
    }
}

fn check_loadings(b1: &DMatrix<f64>, b2: &DMatrix<f64>, b3: &DMatrix<f64>) -> Result<()> {
    let r = b1.ncols();
    if r == 0 || b2.ncols() != r || b3.ncols() != r {
        return Err(Error::Dimension(format!(
            "loading ranks differ or are zero: {}, {}, {}",
            b1.ncols(),
            b2.ncols(),
            b3.ncols()
        )));
    }
    if b1.nrows() == 0 || b2.nrows() == 0 || b3.nrows() == 0 {
        return Err(Error::Dimension("loadings need at least one row".into()));
    }
    if [b1, b2, b3].iter().any(|m| m.iter().any(|v| !v.is_finite())) {
        return Err(Error::InvalidParameter("loadings must be finite".into()));
    }
    Ok(())
}

/// Three-way outer product `v1 ∘ v2 ∘ v3`.
pub fn outer3(v1: &[f64], v2: &[f64], v3: &[f64]) -> Result<Tensor3> {
    let dims = [v1.len(), v2.len(), v3.len()];
    check_dims(dims)?;
    let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
    for &c in v3 {
        for &b in v2 {
            let bc = b * c;
            data.extend(v1.iter().map(|&a| a * bc));
        }
    }
    Ok(Tensor3 { dims, data })
}

/// `[[B1, B2, B3]]`: the sum over columns `r` of `B1[:, r] ∘ B2[:, r] ∘ B3[:, r]`.
pub fn cp_compose(b1: &DMatrix<f64>, b2: &DMatrix<f64>, b3: &DMatrix<f64>) -> Result<Tensor3> {
    let r = b1.ncols();
    if b2.ncols() != r || b3.ncols() != r {
        return Err(Error::Dimension(format!(
            "loading ranks differ: {}, {}, {}",
            r,
            b2.ncols(),
            b3.ncols()
        )));
    }
    check_dims([b1.nrows(), b2.nrows(), b3.nrows()])?;
    Ok(compose_unchecked(b1, b2, b3))
}

pub(crate) fn compose_unchecked(b1: &DMatrix<f64>, b2: &DMatrix<f64>, b3: &DMatrix<f64>) -> Tensor3 {
    let dims = [b1.nrows(), b2.nrows(), b3.nrows()];
    let mut data = vec![0.0; dims[0] * dims[1] * dims[2]];
    for r in 0..b1.ncols() {
        let c1 = b1.column(r);
        let c1 = c1.as_slice();
        for i3 in 0..dims[2] {
            let w3 = b3[(i3, r)];
            if w3 == 0.0 {
                continue;
            }
            for i2 in 0..dims[1] {
                let w = w3 * b2[(i2, r)];
                let base = dims[0] * (i2 + dims[1] * i3);
                for (slot, &a) in data[base..base + dims[0]].iter_mut().zip(c1) {
                    *slot += a * w;
                }
            }
        }
    }
    Tensor3 { dims, data }
}

/// Mode-1 matricization, `I1 x (I2 * I3)` with column index `i2 + I2 * i3`.
pub fn mode1_matricize(t: &Tensor3) -> DMatrix<f64> {
    let [i1, i2, i3] = t.dims;
    DMatrix::from_column_slice(i1, i2 * i3, &t.data)
}

/// Inverse of [`mode1_matricize`] for a given `(I2, I3)` split of the columns.
pub fn mode1_fold(m: &DMatrix<f64>, i2: usize, i3: usize) -> Result<Tensor3> {
    if m.ncols() != i2 * i3 {
        return Err(Error::Dimension(format!(
            "cannot fold {} columns into {} x {}",
            m.ncols(),
            i2,
            i3
        )));
    }
    Tensor3::from_vec([m.nrows(), i2, i3], m.as_slice().to_vec())
}

/// `R x R x R` superdiagonal tensor with ones on the `(r, r, r)` entries.
pub fn superdiagonal_identity(r: usize) -> Result<Tensor3> {
    let mut t = Tensor3::zeros([r, r, r])?;
    for k in 0..r {
        t.set(k, k, k, 1.0);
    }
    Ok(t)
}

/// Column-wise Khatri–Rao product: column `r` is `kron(a[:, r], b[:, r])`,
/// so row `ia * rows(b) + ib` holds `a[ia, r] * b[ib, r]`.
pub fn khatri_rao(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.ncols() != b.ncols() {
        return Err(Error::Dimension(format!(
            "Khatri-Rao needs equal column counts, got {} and {}",
            a.ncols(),
            b.ncols()
        )));
    }
    let (ra, rb) = (a.nrows(), b.nrows());
    Ok(DMatrix::from_fn(ra * rb, a.ncols(), |row, col| {
        a[(row / rb, col)] * b[(row % rb, col)]
    }))
}

/// Parameter counts `(N^2 P, (2N + P) R)` for a full coefficient tensor and
/// its rank-`R` CP factorization.
pub fn param_count(n: usize, p: usize, r: usize) -> (usize, usize) {
    (n * n * p, (2 * n + p) * r)
}
