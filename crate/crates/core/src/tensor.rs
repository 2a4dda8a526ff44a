//! Symmetric positive-semidefinite conductivity tensors and tensor fields.

use crate::grid::GridShape;
use crate::{Error, Result};

/// A symmetric positive-semidefinite d×d conductivity tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct SpdTensor {
    dim: usize,
    /// Row-major d*d entries.
    m: Vec<f64>,
}

impl SpdTensor {
    pub fn new(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != dim * dim {
            return Err(Error::InvalidParameter(format!(
                "tensor needs {} entries, got {}",
                dim * dim,
                entries.len()
            )));
        }
        let t = Self { dim, m: entries };
        for p in 0..dim {
            for q in 0..p {
                if (t.get(p, q) - t.get(q, p)).abs() > 1e-12 * t.max_abs().max(1.0) {
                    return Err(Error::InvalidParameter(format!(
                        "tensor not symmetric at ({p},{q})"
                    )));
                }
            }
        }
        // Positive semi-definite suffices: effective tensors of phases
        // that do not percolate in some direction (e.g. a 2D channel)
        // have an exact zero eigenvalue in that direction.
        if t.lambda_min() < -1e-10 * t.lambda_max().max(1.0) {
            return Err(Error::InvalidParameter(format!(
                "tensor not positive semidefinite (lambda_min = {})",
                t.lambda_min()
            )));
        }
        Ok(t)
    }

    pub fn identity(dim: usize) -> Self {
        Self::scaled_identity(dim, 1.0)
    }

    pub fn scaled_identity(dim: usize, s: f64) -> Self {
        assert!(s > 0.0);
        let mut m = vec![0.0; dim * dim];
        for p in 0..dim {
            m[p * dim + p] = s;
        }
        Self { dim, m }
    }

    pub fn diagonal(diag: &[f64]) -> Self {
        let dim = diag.len();
        let mut m = vec![0.0; dim * dim];
        for p in 0..dim {
            assert!(diag[p] > 0.0);
            m[p * dim + p] = diag[p];
        }
        Self { dim, m }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, p: usize, q: usize) -> f64 {
        self.m[p * self.dim + q]
    }

    pub fn entries(&self) -> &[f64] {
        &self.m
    }

    pub fn scale(&self, s: f64) -> Self {
        Self { dim: self.dim, m: self.m.iter().map(|x| x * s).collect() }
    }

    fn max_abs(&self) -> f64 {
        self.m.iter().fold(0.0f64, |a, x| a.max(x.abs()))
    }

    /// y = M x
    pub fn apply(&self, x: &[f64], y: &mut [f64]) {
        for p in 0..self.dim {
            let mut s = 0.0;
            for q in 0..self.dim {
                s += self.get(p, q) * x[q];
            }
            y[p] = s;
        }
    }

    /// M e_q, the q-th column.
    pub fn column(&self, q: usize) -> Vec<f64> {
        (0..self.dim).map(|p| self.get(p, q)).collect()
    }

    /// Smallest eigenvalue (closed form for d <= 3).
    pub fn lambda_min(&self) -> f64 {
        *self
            .eigenvalues()
            .iter()
            .min_by(|a, b| a.partial_cmp(b).unwrap())
            .unwrap()
    }

    /// Largest eigenvalue (closed form for d <= 3).
    pub fn lambda_max(&self) -> f64 {
        *self
            .eigenvalues()
            .iter()
            .max_by(|a, b| a.partial_cmp(b).unwrap())
            .unwrap()
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        match self.dim {
            1 => vec![self.get(0, 0)],
            2 => {
                let a = self.get(0, 0);
                let b = self.get(0, 1);
                let c = self.get(1, 1);
                let tr = a + c;
                let disc = ((a - c) * (a - c) + 4.0 * b * b).sqrt();
                vec![0.5 * (tr - disc), 0.5 * (tr + disc)]
            }
            3 => eig_sym3(&self.m),
            _ => unreachable!(),
        }
    }

    /// Largest symmetry defect max |m_pq - m_qp|.
    pub fn symmetry_defect(&self) -> f64 {
        let mut d = 0.0f64;
        for p in 0..self.dim {
            for q in 0..p {
                d = d.max((self.get(p, q) - self.get(q, p)).abs());
            }
        }
        d
    }
}

/// Eigenvalues of a symmetric 3x3 matrix via the trigonometric method.
fn eig_sym3(m: &[f64]) -> Vec<f64> {
    let (a, b, c) = (m[0], m[4], m[8]);
    let (d, e, f) = (m[1], m[5], m[2]);
    let p1 = d * d + e * e + f * f;
    if p1 == 0.0 {
        return vec![a, b, c];
    }
    let q = (a + b + c) / 3.0;
    let p2 = (a - q).powi(2) + (b - q).powi(2) + (c - q).powi(2) + 2.0 * p1;
    let p = (p2 / 6.0).sqrt();
    // B = (M - q I) / p ; r = det(B)/2 clamped to [-1,1]
    let bm: Vec<f64> = (0..9)
        .map(|i| (m[i] - if i % 4 == 0 { q } else { 0.0 }) / p)
        .collect();
    let det = bm[0] * (bm[4] * bm[8] - bm[5] * bm[7]) - bm[1] * (bm[3] * bm[8] - bm[5] * bm[6])
        + bm[2] * (bm[3] * bm[7] - bm[4] * bm[6]);
    let r = (det / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let e1 = q + 2.0 * p * phi.cos();
    let e3 = q + 2.0 * p * (phi + 2.0 * std::f64::consts::PI / 3.0).cos();
    let e2 = 3.0 * q - e1 - e3;
    vec![e1, e2, e3]
}

/// One SpdTensor per voxel of a reference-cell grid.
#[derive(Debug, Clone)]
pub struct TensorField {
    shape: GridShape,
    dim: usize,
    tensors: Vec<SpdTensor>,
}

impl TensorField {
    /// Same tensor everywhere.
    pub fn uniform(shape: GridShape, tensor: SpdTensor) -> Self {
        assert_eq!(shape.dim(), tensor.dim());
        let n = shape.len();
        Self { dim: tensor.dim(), shape, tensors: vec![tensor; n] }
    }

    /// Two isotropic bands split at the midpoint of `axis`:
    /// m1 on the first half, m2 on the second half.
    pub fn laminate(shape: GridShape, axis: usize, m1: f64, m2: f64) -> Self {
        let dim = shape.dim();
        let half = shape.dims()[axis] / 2;
        let mut tensors = Vec::with_capacity(shape.len());
        shape.for_each(|_, coords| {
            let m = if coords[axis] < half { m1 } else { m2 };
            tensors.push(SpdTensor::scaled_identity(dim, m));
        });
        Self { shape, dim, tensors }
    }

    pub fn from_fn(shape: GridShape, mut f: impl FnMut(&[usize]) -> SpdTensor) -> Self {
        let dim = shape.dim();
        let mut tensors = Vec::with_capacity(shape.len());
        shape.for_each(|_, coords| {
            let t = f(coords);
            assert_eq!(t.dim(), dim);
            tensors.push(t);
        });
        Self { shape, dim, tensors }
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn at(&self, voxel: usize) -> &SpdTensor {
        &self.tensors[voxel]
    }
}
