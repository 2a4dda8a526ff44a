//! Lowest-order conforming (d-linear) elements on voxel grids.
//!
//! Elements are the voxels themselves; nodes sit at voxel corners.
//! Periodic meshes identify opposite faces (n nodes per axis), Neumann
//! meshes keep the boundary nodes (n+1 per axis). Holes are handled by
//! deactivating voxels, which leaves the natural no-flux condition on
//! their boundary. All operators are applied matrix-free.

use crate::grid::GridShape;
use crate::tensor::SpdTensor;

/// Tensor-product 2-point Gauss rule, exact for products of d-linear
/// basis gradients with a per-voxel constant tensor.
const GP: [f64; 2] = [0.211_324_865_405_187_12, 0.788_675_134_594_812_9];

/// A voxel mesh with an active-element mask.
#[derive(Debug, Clone)]
pub struct VoxelMesh {
    elems: GridShape,
    nodes: GridShape,
    periodic: bool,
    spacing: Vec<f64>,
    active: Vec<bool>,
    active_node: Vec<bool>,
    /// Precomputed basis gradients: for each quadrature point and local
    /// node, the physical gradient (identical for every element).
    grads: Vec<Vec<[f64; 3]>>,
    /// Quadrature weights (element volume already folded in).
    weights: Vec<f64>,
    n_corners: usize,
}

impl VoxelMesh {
    pub fn new(elem_dims: &[usize], spacing: &[f64], periodic: bool, active: Vec<bool>) -> Self {
        let d = elem_dims.len();
        let elems = GridShape::new(elem_dims);
        assert_eq!(active.len(), elems.len());
        let node_dims: Vec<usize> =
            elem_dims.iter().map(|&n| if periodic { n } else { n + 1 }).collect();
        let nodes = GridShape::new(&node_dims);
        let n_corners = 1usize << d;
        let n_qp = 1usize << d;
        let vol: f64 = spacing.iter().product();
        let mut grads = Vec::with_capacity(n_qp);
        let mut weights = Vec::with_capacity(n_qp);
        for qp in 0..n_qp {
            let xi: Vec<f64> = (0..d).map(|a| GP[(qp >> a) & 1]).collect();
            let mut g = Vec::with_capacity(n_corners);
            for corner in 0..n_corners {
                let mut grad = [0.0f64; 3];
                for a in 0..d {
                    let mut v = if (corner >> a) & 1 == 1 { 1.0 } else { -1.0 };
                    for b in 0..d {
                        if b != a {
                            let o = (corner >> b) & 1;
                            v *= if o == 1 { xi[b] } else { 1.0 - xi[b] };
                        }
                    }
                    grad[a] = v / spacing[a];
                }
                g.push(grad);
            }
            grads.push(g);
            weights.push(vol / n_qp as f64);
        }
        let mut mesh = Self {
            elems,
            nodes,
            periodic,
            spacing: spacing.to_vec(),
            active,
            active_node: Vec::new(),
            grads,
            weights,
            n_corners,
        };
        mesh.active_node = mesh.compute_active_nodes();
        mesh
    }

    /// All elements active.
    pub fn full(elem_dims: &[usize], spacing: &[f64], periodic: bool) -> Self {
        let n = elem_dims.iter().product();
        Self::new(elem_dims, spacing, periodic, vec![true; n])
    }

    pub fn dim(&self) -> usize {
        self.elems.dim()
    }

    pub fn elems(&self) -> &GridShape {
        &self.elems
    }

    pub fn nodes(&self) -> &GridShape {
        &self.nodes
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn spacing(&self) -> &[f64] {
        &self.spacing
    }

    pub fn is_active(&self, elem: usize) -> bool {
        self.active[elem]
    }

    pub fn active_node_mask(&self) -> &[bool] {
        &self.active_node
    }

    /// Physical coordinates of a node.
    pub fn node_coords(&self, node: usize) -> Vec<f64> {
        let d = self.dim();
        let mut c = [0usize; 3];
        self.nodes.decode(node, &mut c[..d]);
        (0..d).map(|a| c[a] as f64 * self.spacing[a]).collect()
    }

    /// Linear node indices of the 2^d corners of an element.
    pub fn corner_nodes(&self, elem_coords: &[usize], out: &mut [usize]) {
        let d = self.dim();
        let nd = self.nodes.dims();
        for corner in 0..self.n_corners {
            let mut c = [0usize; 3];
            for a in 0..d {
                let mut v = elem_coords[a] + ((corner >> a) & 1);
                if self.periodic && v == nd[a] {
                    v = 0;
                }
                c[a] = v;
            }
            out[corner] = self.nodes.linear(&c[..d]);
        }
    }

    fn compute_active_nodes(&self) -> Vec<bool> {
        let mut mask = vec![false; self.nodes.len()];
        let mut corners = [0usize; 8];
        self.elems.for_each(|idx, coords| {
            if self.active[idx] {
                self.corner_nodes(coords, &mut corners[..self.n_corners]);
                for &c in &corners[..self.n_corners] {
                    mask[c] = true;
                }
            }
        });
        mask
    }

    /// Number of active elements.
    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|&&a| a).count()
    }

    /// Total measure of the active region.
    pub fn active_volume(&self) -> f64 {
        let vol: f64 = self.spacing.iter().product();
        self.n_active() as f64 * vol
    }

    /// out = A u where A is the stiffness of ∫ M ∇u·∇φ over active
    /// elements; `tensor_of` maps element index to its constant tensor.
    pub fn apply_stiffness<'a>(
        &self,
        tensor_of: &dyn Fn(usize) -> &'a SpdTensor,
        u: &[f64],
        out: &mut [f64],
    ) {
        debug_assert_eq!(u.len(), self.nodes.len());
        out.fill(0.0);
        let d = self.dim();
        let nc = self.n_corners;
        let mut corners = [0usize; 8];
        let mut local = [0.0f64; 8];
        self.elems.for_each(|idx, coords| {
            if !self.active[idx] {
                return;
            }
            self.corner_nodes(coords, &mut corners[..nc]);
            for i in 0..nc {
                local[i] = u[corners[i]];
            }
            let m = tensor_of(idx);
            for (qp, g) in self.grads.iter().enumerate() {
                let mut grad = [0.0f64; 3];
                for i in 0..nc {
                    for a in 0..d {
                        grad[a] += local[i] * g[i][a];
                    }
                }
                let mut flux = [0.0f64; 3];
                m.apply(&grad[..d], &mut flux[..d]);
                let w = self.weights[qp];
                for i in 0..nc {
                    let mut s = 0.0;
                    for a in 0..d {
                        s += flux[a] * g[i][a];
                    }
                    out[corners[i]] += w * s;
                }
            }
        });
    }

    /// b with b_φ = -∫ (M e_q)·∇φ over active elements, the right-hand
    /// side of the corrector problem in weak form.
    pub fn unit_gradient_rhs<'a>(
        &self,
        tensor_of: &dyn Fn(usize) -> &'a SpdTensor,
        q: usize,
    ) -> Vec<f64> {
        let d = self.dim();
        let nc = self.n_corners;
        let mut b = vec![0.0; self.nodes.len()];
        let mut corners = [0usize; 8];
        self.elems.for_each(|idx, coords| {
            if !self.active[idx] {
                return;
            }
            self.corner_nodes(coords, &mut corners[..nc]);
            let col = tensor_of(idx).column(q);
            for (qp, g) in self.grads.iter().enumerate() {
                let w = self.weights[qp];
                for i in 0..nc {
                    let mut s = 0.0;
                    for a in 0..d {
                        s += col[a] * g[i][a];
                    }
                    b[corners[i]] -= w * s;
                }
            }
        });
        b
    }

    /// Diagonal of the stiffness operator, for Jacobi preconditioning.
    /// Inactive nodes get 1.0 so the preconditioner stays invertible.
    pub fn stiffness_diagonal<'a>(&self, tensor_of: &dyn Fn(usize) -> &'a SpdTensor) -> Vec<f64> {
        let d = self.dim();
        let nc = self.n_corners;
        let mut diag = vec![0.0; self.nodes.len()];
        let mut corners = [0usize; 8];
        self.elems.for_each(|idx, coords| {
            if !self.active[idx] {
                return;
            }
            self.corner_nodes(coords, &mut corners[..nc]);
            let m = tensor_of(idx);
            for (qp, g) in self.grads.iter().enumerate() {
                let w = self.weights[qp];
                for i in 0..nc {
                    let mut flux = [0.0f64; 3];
                    m.apply(&g[i][..d], &mut flux[..d]);
                    let mut s = 0.0;
                    for a in 0..d {
                        s += flux[a] * g[i][a];
                    }
                    diag[corners[i]] += w * s;
                }
            }
        });
        for (i, v) in diag.iter_mut().enumerate() {
            if !self.active_node[i] || *v == 0.0 {
                *v = 1.0;
            }
        }
        diag
    }

    /// Lumped mass per node over active elements.
    pub fn lumped_mass(&self) -> Vec<f64> {
        let vol: f64 = self.spacing.iter().product();
        let share = vol / self.n_corners as f64;
        let mut mass = vec![0.0; self.nodes.len()];
        let mut corners = [0usize; 8];
        let nc = self.n_corners;
        self.elems.for_each(|idx, coords| {
            if !self.active[idx] {
                return;
            }
            self.corner_nodes(coords, &mut corners[..nc]);
            for &c in &corners[..nc] {
                mass[c] += share;
            }
        });
        mass
    }

    /// ∫ u over the active region (exact for d-linear u: corner mean
    /// times the voxel volume).
    pub fn integrate(&self, u: &[f64]) -> f64 {
        let vol: f64 = self.spacing.iter().product();
        let nc = self.n_corners;
        let mut corners = [0usize; 8];
        let mut total = 0.0;
        self.elems.for_each(|idx, coords| {
            if !self.active[idx] {
                return;
            }
            self.corner_nodes(coords, &mut corners[..nc]);
            let mut s = 0.0;
            for &c in &corners[..nc] {
                s += u[c];
            }
            total += vol * s / nc as f64;
        });
        total
    }

    /// Mean of u over the active region.
    pub fn mean(&self, u: &[f64]) -> f64 {
        self.integrate(u) / self.active_volume()
    }

    /// Subtract the active-region mean from u on active nodes.
    pub fn project_zero_mean(&self, u: &mut [f64]) {
        let m = self.mean(u);
        for (i, v) in u.iter_mut().enumerate() {
            if self.active_node[i] {
                *v -= m;
            }
        }
    }

    /// Energy inner product e(u,v) = ∫ M (∇u + a)·(∇v + b) over active
    /// elements, with constant shift vectors a, b (pass zeros for the
    /// plain bilinear form).
    pub fn energy_product<'a>(
        &self,
        tensor_of: &dyn Fn(usize) -> &'a SpdTensor,
        u: &[f64],
        shift_u: &[f64],
        v: &[f64],
        shift_v: &[f64],
    ) -> f64 {
        let d = self.dim();
        let nc = self.n_corners;
        let mut corners = [0usize; 8];
        let mut total = 0.0;
        self.elems.for_each(|idx, coords| {
            if !self.active[idx] {
                return;
            }
            self.corner_nodes(coords, &mut corners[..nc]);
            let m = tensor_of(idx);
            for (qp, g) in self.grads.iter().enumerate() {
                let mut gu = [0.0f64; 3];
                let mut gv = [0.0f64; 3];
                for i in 0..nc {
                    let (cu, cv) = (u[corners[i]], v[corners[i]]);
                    for a in 0..d {
                        gu[a] += cu * g[i][a];
                        gv[a] += cv * g[i][a];
                    }
                }
                for a in 0..d {
                    gu[a] += shift_u[a];
                    gv[a] += shift_v[a];
                }
                let mut flux = [0.0f64; 3];
                m.apply(&gu[..d], &mut flux[..d]);
                let mut s = 0.0;
                for a in 0..d {
                    s += flux[a] * gv[a];
                }
                total += self.weights[qp] * s;
            }
        });
        total
    }

    /// Element-mean gradient of a nodal field, one vector per active
    /// element (zeros elsewhere).
    pub fn element_gradients(&self, u: &[f64]) -> Vec<[f64; 3]> {
        let d = self.dim();
        let nc = self.n_corners;
        let mut corners = [0usize; 8];
        let mut out = vec![[0.0f64; 3]; self.elems.len()];
        let n_qp = self.grads.len() as f64;
        self.elems.for_each(|idx, coords| {
            if !self.active[idx] {
                return;
            }
            self.corner_nodes(coords, &mut corners[..nc]);
            let mut grad = [0.0f64; 3];
            for g in &self.grads {
                for i in 0..nc {
                    for a in 0..d {
                        grad[a] += u[corners[i]] * g[i][a];
                    }
                }
            }
            for a in 0..d {
                out[idx][a] = grad[a] / n_qp;
            }
        });
        out
    }
}
