//! Homogenized bidomain stepper on the macroscopic grid.
//!
//! Operator splitting per step: one explicit RK4 substep for the
//! pointwise reaction (membrane kinetics and applied current), then an
//! implicit-Euler solve of the coupled diffusion system in the unknowns
//! (v, u_e). Writing u_i = v + u_e, the implicit step reads
//!
//!   (μ_m/dt) M v + A_i (v + u_e) = (μ_m/dt) M v*
//!   A_i (v + u_e) + A_e u_e      = 0
//!
//! which is a symmetric positive semidefinite block system; its kernel
//! is (0, const) and is removed by the zero-mean gauge on u_e.

use crate::fem::VoxelMesh;
use crate::grid::{norm_inf, GridShape};
use crate::ionic::FhnParams;
use crate::pcg::{self, PcgOptions};
use crate::tensor::SpdTensor;
use crate::{Error, Result};

/// Macro-domain discretization: Q1 nodes on a box with natural
/// (no-flux) boundary conditions.
pub struct MacroGrid {
    mesh: VoxelMesh,
    lengths: Vec<f64>,
}

impl MacroGrid {
    pub fn new(elem_dims: &[usize], lengths: &[f64]) -> Result<Self> {
        if elem_dims.len() != lengths.len() {
            return Err(Error::InvalidParameter("dims / lengths mismatch".into()));
        }
        if elem_dims.iter().any(|&n| n < 2) {
            return Err(Error::InvalidParameter("need at least 2 elements per axis".into()));
        }
        let spacing: Vec<f64> =
            elem_dims.iter().zip(lengths).map(|(&n, &l)| l / n as f64).collect();
        Ok(Self { mesh: VoxelMesh::full(elem_dims, &spacing, false), lengths: lengths.to_vec() })
    }

    pub fn mesh(&self) -> &VoxelMesh {
        &self.mesh
    }

    pub fn nodes(&self) -> &GridShape {
        self.mesh.nodes()
    }

    pub fn n_nodes(&self) -> usize {
        self.mesh.n_nodes()
    }

    pub fn lengths(&self) -> &[f64] {
        &self.lengths
    }

    pub fn node_coords(&self, node: usize) -> Vec<f64> {
        self.mesh.node_coords(node)
    }
}

/// Nodal solution at one time level.
#[derive(Debug, Clone)]
pub struct BidomainState {
    pub t: f64,
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    pub u_e: Vec<f64>,
    pub u_i: Vec<f64>,
}

impl BidomainState {
    pub fn new(grid: &MacroGrid, v0: &[f64], w0: &[f64]) -> Result<Self> {
        let n = grid.n_nodes();
        if v0.len() != n || w0.len() != n {
            return Err(Error::ResolutionMismatch(format!(
                "initial data has {} / {} nodes, grid has {n}",
                v0.len(),
                w0.len()
            )));
        }
        Ok(Self { t: 0.0, v: v0.to_vec(), w: w0.to_vec(), u_e: vec![0.0; n], u_i: v0.to_vec() })
    }
}

/// Applied current shapes for driven runs.
#[derive(Debug, Clone)]
pub enum Stimulus {
    None,
    Uniform { amplitude: f64 },
    /// Ball of given radius around `center`, active on [t_on, t_off).
    /// A `center` with fewer entries than the spatial dimension gives a
    /// slab pulse: the distance only counts the leading coordinates.
    Pulse { center: Vec<f64>, radius: f64, amplitude: f64, t_on: f64, t_off: f64 },
}

impl Stimulus {
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            Stimulus::None => 0.0,
            Stimulus::Uniform { amplitude } => *amplitude,
            Stimulus::Pulse { center, radius, amplitude, t_on, t_off } => {
                if t < *t_on || t >= *t_off {
                    return 0.0;
                }
                let r2: f64 =
                    x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                if r2 <= radius * radius {
                    *amplitude
                } else {
                    0.0
                }
            }
        }
    }

    pub fn sample(&self, grid: &MacroGrid, t: f64) -> Vec<f64> {
        (0..grid.n_nodes()).map(|n| self.eval(t, &grid.node_coords(n))).collect()
    }
}

#[derive(Debug, Clone)]
pub struct StepOptions {
    /// ‖v‖_∞ ceiling after the reaction substep; exceeding it flags an
    /// unstable explicit step.
    pub v_ceiling: f64,
    pub rtol: f64,
    pub max_iter: usize,
}

impl Default for StepOptions {
    fn default() -> Self {
        Self { v_ceiling: 10.0, rtol: 1e-10, max_iter: 20_000 }
    }
}

#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub t: f64,
    pub norm_v: f64,
    pub norm_w: f64,
    pub mean_ue: f64,
    pub min_v: f64,
    pub max_v: f64,
    pub cg_iterations: usize,
    pub cg_residual: f64,
}

/// Everything fixed across steps of one run.
pub struct MacroSystem<'a> {
    grid: &'a MacroGrid,
    tensor_i: SpdTensor,
    tensor_e: SpdTensor,
    mu_m: f64,
    params: FhnParams,
    mass: Vec<f64>,
    diag_i: Vec<f64>,
    diag_e: Vec<f64>,
}

impl<'a> MacroSystem<'a> {
    pub fn new(
        grid: &'a MacroGrid,
        tensor_i: SpdTensor,
        tensor_e: SpdTensor,
        mu_m: f64,
        params: FhnParams,
    ) -> Result<Self> {
        if mu_m <= 0.0 {
            return Err(Error::InvalidParameter(format!("mu_m must be positive, got {mu_m}")));
        }
        if tensor_i.dim() != grid.mesh.dim() || tensor_e.dim() != grid.mesh.dim() {
            return Err(Error::ResolutionMismatch("tensor dimension != grid dimension".into()));
        }
        let mass = grid.mesh.lumped_mass();
        let diag_i = grid.mesh.stiffness_diagonal(&|_| &tensor_i);
        let diag_e = grid.mesh.stiffness_diagonal(&|_| &tensor_e);
        Ok(Self { grid, tensor_i, tensor_e, mu_m, params, mass, diag_i, diag_e })
    }

    pub fn mu_m(&self) -> f64 {
        self.mu_m
    }

    pub fn params(&self) -> &FhnParams {
        &self.params
    }

    fn reaction_rates(&self, v: f64, w: f64, i_app: f64) -> (f64, f64) {
        (-crate::ionic::i_ion(v, w, &self.params) + i_app, crate::ionic::h_gate(v, w, &self.params))
    }

    /// One explicit RK4 substep for (v, w) node-wise.
    fn reaction_step(&self, state: &mut BidomainState, dt: f64, i_app: &[f64]) {
        for n in 0..state.v.len() {
            let (v0, w0, f) = (state.v[n], state.w[n], i_app[n]);
            let (k1v, k1w) = self.reaction_rates(v0, w0, f);
            let (k2v, k2w) = self.reaction_rates(v0 + 0.5 * dt * k1v, w0 + 0.5 * dt * k1w, f);
            let (k3v, k3w) = self.reaction_rates(v0 + 0.5 * dt * k2v, w0 + 0.5 * dt * k2w, f);
            let (k4v, k4w) = self.reaction_rates(v0 + dt * k3v, w0 + dt * k3w, f);
            state.v[n] = v0 + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
            state.w[n] = w0 + dt / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w);
        }
    }

    fn apply_block(&self, dt: f64, x: &[f64], out: &mut [f64]) {
        let n = self.grid.n_nodes();
        let (xv, xe) = x.split_at(n);
        let sum: Vec<f64> = xv.iter().zip(xe).map(|(a, b)| a + b).collect();
        let mut ai = vec![0.0; n];
        self.grid.mesh.apply_stiffness(&|_| &self.tensor_i, &sum, &mut ai);
        let mut ae = vec![0.0; n];
        self.grid.mesh.apply_stiffness(&|_| &self.tensor_e, xe, &mut ae);
        let scale = self.mu_m / dt;
        for i in 0..n {
            out[i] = scale * self.mass[i] * xv[i] + ai[i];
            out[n + i] = ai[i] + ae[i];
        }
    }

    /// Project out the (0, const) kernel. The Euclidean-orthogonal
    /// projection subtracts the plain nodal mean from the u_e block.
    fn project_kernel(&self, x: &mut [f64]) {
        let n = self.grid.n_nodes();
        let mean: f64 = x[n..].iter().sum::<f64>() / n as f64;
        for u in &mut x[n..] {
            *u -= mean;
        }
    }

    /// One full step; advances `state` in place and returns diagnostics.
    pub fn step(
        &self,
        state: &mut BidomainState,
        dt: f64,
        i_app: &[f64],
        opts: &StepOptions,
    ) -> Result<StepDiagnostics> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        let n = self.grid.n_nodes();
        if i_app.len() != n {
            return Err(Error::ResolutionMismatch("i_app length != node count".into()));
        }
        self.reaction_step(state, dt, i_app);
        let vmax = norm_inf(&state.v);
        if vmax > opts.v_ceiling {
            return Err(Error::StabilityBreach { vmax, ceiling: opts.v_ceiling });
        }
        // implicit diffusion in (v, u_e)
        let scale = self.mu_m / dt;
        let mut rhs = vec![0.0; 2 * n];
        for i in 0..n {
            rhs[i] = scale * self.mass[i] * state.v[i];
        }
        let mut precond = vec![0.0; 2 * n];
        for i in 0..n {
            precond[i] = 1.0 / (scale * self.mass[i] + self.diag_i[i]);
            precond[n + i] = 1.0 / (self.diag_i[i] + self.diag_e[i]);
        }
        let mut x = vec![0.0; 2 * n];
        let stats = pcg::solve(
            &|x, out| self.apply_block(dt, x, out),
            &precond,
            &|x| self.project_kernel(x),
            &rhs,
            &mut x,
            PcgOptions { rtol: opts.rtol, max_iter: opts.max_iter },
        )
        .map_err(|e| Error::LinearSolveFailure(format!("diffusion step at t={}: {e}", state.t)))?;
        state.v.copy_from_slice(&x[..n]);
        state.u_e.copy_from_slice(&x[n..]);
        // gauge: plain-mean normalization of u_e (kernel projection used
        // the lumped-mass mean, identical up to roundoff on a uniform
        // grid interior but not at the boundary nodes)
        let mean = self.grid.mesh.mean(&state.u_e);
        for u in &mut state.u_e {
            *u -= mean;
        }
        for i in 0..n {
            state.u_i[i] = state.v[i] + state.u_e[i];
        }
        state.t += dt;
        Ok(StepDiagnostics {
            t: state.t,
            norm_v: self.l2_norm(&state.v),
            norm_w: self.l2_norm(&state.w),
            mean_ue: self.grid.mesh.mean(&state.u_e),
            min_v: state.v.iter().cloned().fold(f64::INFINITY, f64::min),
            max_v: state.v.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
            cg_iterations: stats.iterations,
            cg_residual: stats.relative_residual,
        })
    }

    fn l2_norm(&self, u: &[f64]) -> f64 {
        let sq: Vec<f64> = u.iter().map(|x| x * x).collect();
        self.grid.mesh.integrate(&sq).max(0.0).sqrt()
    }

    /// Relative L² error against a nodal reference.
    pub fn relative_l2_error(&self, u: &[f64], reference: &[f64]) -> f64 {
        let diff: Vec<f64> = u.iter().zip(reference).map(|(a, b)| a - b).collect();
        let denom = self.l2_norm(reference);
        if denom == 0.0 {
            self.l2_norm(&diff)
        } else {
            self.l2_norm(&diff) / denom
        }
    }
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub dt: f64,
    pub t_end: f64,
    pub step: StepOptions,
    /// Store a state snapshot every this many steps (0 = never).
    pub snapshot_every: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self { dt: 1e-3, t_end: 1.0, step: StepOptions::default(), snapshot_every: 0 }
    }
}

pub struct RunOutput {
    pub state: BidomainState,
    pub diagnostics: Vec<StepDiagnostics>,
    pub snapshots: Vec<BidomainState>,
}

/// Fixed-step loop with snapshot cadence.
pub fn run(
    system: &MacroSystem,
    mut state: BidomainState,
    stimulus: &Stimulus,
    opts: &RunOptions,
) -> Result<RunOutput> {
    let n_steps = (opts.t_end / opts.dt).round() as usize;
    let mut diagnostics = Vec::with_capacity(n_steps);
    let mut snapshots = Vec::new();
    for k in 0..n_steps {
        let i_app = stimulus.sample(system.grid, state.t);
        let diag = system.step(&mut state, opts.dt, &i_app, &opts.step)?;
        diagnostics.push(diag);
        if opts.snapshot_every > 0 && (k + 1) % opts.snapshot_every == 0 {
            snapshots.push(state.clone());
        }
    }
    Ok(RunOutput { state, diagnostics, snapshots })
}
