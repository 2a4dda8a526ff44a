//! Structured grids and scalar fields sampled on them.
//!
//! All multi-dimensional data in the crate is stored row-major (the last
//! axis varies fastest) over a [`GridShape`]. Dimension is a runtime value
//! in {1, 2, 3}.

/// Extent of a structured grid, one count per axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridShape {
    dims: Vec<usize>,
}

impl GridShape {
    pub fn new(dims: &[usize]) -> Self {
        assert!(!dims.is_empty() && dims.len() <= 3, "dimension must be 1..=3");
        assert!(dims.iter().all(|&n| n > 0));
        Self { dims: dims.to_vec() }
    }

    pub fn dim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major linear index of a multi-index.
    pub fn linear(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.dims.len());
        let mut idx = 0;
        for (a, &c) in coords.iter().enumerate() {
            debug_assert!(c < self.dims[a]);
            idx = idx * self.dims[a] + c;
        }
        idx
    }

    /// Inverse of [`linear`](Self::linear); writes into `coords`.
    pub fn decode(&self, mut idx: usize, coords: &mut [usize]) {
        for a in (0..self.dims.len()).rev() {
            coords[a] = idx % self.dims[a];
            idx /= self.dims[a];
        }
    }

    /// Visit every multi-index in row-major order.
    pub fn for_each(&self, mut f: impl FnMut(usize, &[usize])) {
        let d = self.dim();
        let mut coords = [0usize; 3];
        for idx in 0..self.len() {
            self.decode(idx, &mut coords[..d]);
            f(idx, &coords[..d]);
        }
    }
}

/// A scalar field sampled on a structured grid.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    shape: GridShape,
    data: Vec<f64>,
}

impl GridField {
    pub fn zeros(shape: GridShape) -> Self {
        let n = shape.len();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn from_vec(shape: GridShape, data: Vec<f64>) -> Self {
        assert_eq!(shape.len(), data.len());
        Self { shape, data }
    }

    /// Sample `f` at points produced by `point_of` for each multi-index.
    pub fn from_fn(shape: GridShape, mut f: impl FnMut(&[usize]) -> f64) -> Self {
        let mut data = vec![0.0; shape.len()];
        shape.for_each(|idx, coords| data[idx] = f(coords));
        Self { shape, data }
    }

    pub fn shape(&self) -> &GridShape {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }
}

/// Dot product of two slices, fixed left-to-right summation order.
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut s = 0.0;
    for i in 0..a.len() {
        s += a[i] * b[i];
    }
    s
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_decode_roundtrip() {
        let s = GridShape::new(&[3, 4, 5]);
        let mut c = [0usize; 3];
        for idx in 0..s.len() {
            s.decode(idx, &mut c);
            assert_eq!(s.linear(&c), idx);
        }
    }

    #[test]
    fn row_major_order() {
        let s = GridShape::new(&[2, 3]);
        assert_eq!(s.linear(&[0, 0]), 0);
        assert_eq!(s.linear(&[0, 2]), 2);
        assert_eq!(s.linear(&[1, 0]), 3);
    }
}
