//! Resolved simulation of the microscopic bidomain system on the tiled
//! perforated domain — the reference solution against which the
//! homogenized model is checked.
//!
//! Bulk conduction is quasi-static in each subdomain; the dynamics live
//! on the membrane facets Γ_ε, where the transmembrane potential v and
//! the gating variable w are stored per facet. One step is a Godunov
//! split: explicit RK4 for the facet kinetics, then an implicit solve of
//! the facet-coupled conduction system in (u_i, u_e):
//!
//!   A_i u_i + Σ_f c_f Rᵀ(R u_i − R u_e) =  Σ_f c_f Rᵀ v*
//!   A_e u_e − Σ_f c_f Rᵀ(R u_i − R u_e) = −Σ_f c_f Rᵀ v*
//!
//! with c_f = ε·area_f/dt and R the facet trace (mean over the shared
//! face corner nodes). The system is symmetric positive semidefinite;
//! its kernel is the simultaneous constant shift of u_i and u_e, removed
//! by projection, with the zero-mean gauge on u_e restored afterwards.
//! Mitochondrial holes carry no unknowns: they are simply absent from
//! the intracellular stiffness, which realizes the no-flux condition on
//! Γ_δ naturally.

use crate::fem::VoxelMesh;
use crate::geometry::{InterfaceFacet, MacroTag, TiledGrid};
use crate::ionic::FhnParams;
use crate::pcg::{self, PcgOptions};
use crate::tensor::{SpdTensor, TensorField};
use crate::unfolding;
use crate::{Error, Result};

/// Applied current on the membrane, evaluated at facet centers.
#[derive(Debug, Clone)]
pub enum DnsStimulus {
    None,
    Uniform { amplitude: f64, t_on: f64, t_off: f64 },
    /// Ball of given radius around `center`, active on [t_on, t_off).
    /// A `center` with fewer entries than the spatial dimension gives a
    /// slab pulse: the distance only counts the leading coordinates.
    Pulse { center: Vec<f64>, radius: f64, amplitude: f64, t_on: f64, t_off: f64 },
}

impl DnsStimulus {
    pub fn eval(&self, t: f64, x: &[f64]) -> f64 {
        match self {
            DnsStimulus::None => 0.0,
            DnsStimulus::Uniform { amplitude, t_on, t_off } => {
                if t >= *t_on && t < *t_off {
                    *amplitude
                } else {
                    0.0
                }
            }
            DnsStimulus::Pulse { center, radius, amplitude, t_on, t_off } => {
                if t < *t_on || t >= *t_off {
                    return 0.0;
                }
                let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                if r2 <= radius * radius {
                    *amplitude
                } else {
                    0.0
                }
            }
        }
    }
}

/// Facet-coupled unknowns at one time level.
#[derive(Debug, Clone)]
pub struct DnsState {
    pub t: f64,
    /// per Γ_ε facet
    pub v: Vec<f64>,
    pub w: Vec<f64>,
    /// nodal, meaningful on intracellular-active nodes
    pub u_i: Vec<f64>,
    /// nodal, meaningful on extracellular-active nodes
    pub u_e: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DnsDiagnostics {
    pub t: f64,
    /// √ε ‖v‖_{L²(Γ_ε)}
    pub eps_norm_v: f64,
    /// √ε ‖w‖_{L²(Γ_ε)}
    pub eps_norm_w: f64,
    /// ε^{1/4} ‖v‖_{L⁴(Γ_ε)}
    pub eps_norm_v4: f64,
    /// ‖u_i‖_{L²} + |u_i|_{H¹} on Ω_i^{ε,δ}
    pub h1_ui: f64,
    pub h1_ue: f64,
    pub mean_ue: f64,
    pub min_v: f64,
    pub max_v: f64,
    pub cg_iterations: usize,
    pub cg_residual: f64,
}

struct FacetDof {
    nodes: Vec<usize>,
    area: f64,
    center: Vec<f64>,
}

/// Assembled operators and facet structures for one tiled geometry.
pub struct DnsSystem<'a> {
    grid: &'a TiledGrid,
    mesh_i: VoxelMesh,
    mesh_e: VoxelMesh,
    tensor_i: TensorField,
    tensor_e: TensorField,
    params: FhnParams,
    facets: Vec<FacetDof>,
    diag_i: Vec<f64>,
    diag_e: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct DnsStepOptions {
    pub v_ceiling: f64,
    pub rtol: f64,
    pub max_iter: usize,
}

impl Default for DnsStepOptions {
    fn default() -> Self {
        Self { v_ceiling: 10.0, rtol: 1e-10, max_iter: 20_000 }
    }
}

impl<'a> DnsSystem<'a> {
    pub fn new(
        grid: &'a TiledGrid,
        tensor_i: TensorField,
        tensor_e: TensorField,
        params: FhnParams,
    ) -> Result<Self> {
        let raw_facets = grid.gamma_eps_facets();
        if raw_facets.is_empty() {
            return Err(Error::NoInterface);
        }
        let n_vox = grid.shape().len();
        if tensor_i.shape().len() != n_vox || tensor_e.shape().len() != n_vox {
            return Err(Error::ResolutionMismatch(
                "tensor fields must be sampled per grid voxel".into(),
            ));
        }
        let dims = grid.shape().dims().to_vec();
        let active_i: Vec<bool> =
            grid.tags().iter().map(|&t| t == MacroTag::IntraCyto).collect();
        let active_e: Vec<bool> = grid.tags().iter().map(|&t| t == MacroTag::Extra).collect();
        let mesh_i = VoxelMesh::new(&dims, grid.spacing(), false, active_i);
        let mesh_e = VoxelMesh::new(&dims, grid.spacing(), false, active_e);
        let facets = raw_facets
            .iter()
            .map(|f| FacetDof {
                nodes: face_nodes(grid, &mesh_i, f),
                area: f.area,
                center: facet_center(grid, f),
            })
            .collect();
        let diag_i = mesh_i.stiffness_diagonal(&|e| tensor_i.at(e));
        let diag_e = mesh_e.stiffness_diagonal(&|e| tensor_e.at(e));
        Ok(Self { grid, mesh_i, mesh_e, tensor_i, tensor_e, params, facets, diag_i, diag_e })
    }

    pub fn n_facets(&self) -> usize {
        self.facets.len()
    }

    pub fn grid(&self) -> &TiledGrid {
        self.grid
    }

    pub fn facet_centers(&self) -> Vec<Vec<f64>> {
        self.facets.iter().map(|f| f.center.clone()).collect()
    }

    pub fn initial_state(&self, v0: &dyn Fn(&[f64]) -> f64, w0: &dyn Fn(&[f64]) -> f64) -> DnsState {
        let n = self.mesh_i.n_nodes();
        DnsState {
            t: 0.0,
            v: self.facets.iter().map(|f| v0(&f.center)).collect(),
            w: self.facets.iter().map(|f| w0(&f.center)).collect(),
            u_i: vec![0.0; n],
            u_e: vec![0.0; n],
        }
    }

    fn trace(&self, f: &FacetDof, u: &[f64]) -> f64 {
        f.nodes.iter().map(|&n| u[n]).sum::<f64>() / f.nodes.len() as f64
    }

    /// y = B x for the coupled block operator at time-step weight c_f.
    fn apply_block(&self, dt: f64, x: &[f64], out: &mut [f64]) {
        let n = self.mesh_i.n_nodes();
        let (xi, xe) = x.split_at(n);
        let (oi_buf, oe_buf) = out.split_at_mut(n);
        self.mesh_i.apply_stiffness(&|e| self.tensor_i.at(e), xi, oi_buf);
        self.mesh_e.apply_stiffness(&|e| self.tensor_e.at(e), xe, oe_buf);
        let eps = self.grid.epsilon();
        for f in &self.facets {
            let c = eps * f.area / dt;
            let jump = self.trace(f, xi) - self.trace(f, xe);
            let share = c * jump / f.nodes.len() as f64;
            for &node in &f.nodes {
                oi_buf[node] += share;
                oe_buf[node] -= share;
            }
        }
    }

    /// Remove the simultaneous-constant kernel (Euclidean projection
    /// over active nodes of both blocks).
    fn project_kernel(&self, x: &mut [f64]) {
        let n = self.mesh_i.n_nodes();
        let mut sum = 0.0;
        let mut count = 0usize;
        for i in 0..n {
            if self.mesh_i.active_node_mask()[i] {
                sum += x[i];
                count += 1;
            }
            if self.mesh_e.active_node_mask()[i] {
                sum += x[n + i];
                count += 1;
            }
        }
        let mean = sum / count as f64;
        for i in 0..n {
            if self.mesh_i.active_node_mask()[i] {
                x[i] -= mean;
            }
            if self.mesh_e.active_node_mask()[i] {
                x[n + i] -= mean;
            }
        }
    }

    fn reaction_step(&self, state: &mut DnsState, dt: f64, stim: &DnsStimulus) {
        let p = &self.params;
        for (fi, f) in self.facets.iter().enumerate() {
            let i_app = stim.eval(state.t, &f.center);
            let rate = |v: f64, w: f64| (-crate::ionic::i_ion(v, w, p) + i_app, crate::ionic::h_gate(v, w, p));
            let (v0, w0) = (state.v[fi], state.w[fi]);
            let (k1v, k1w) = rate(v0, w0);
            let (k2v, k2w) = rate(v0 + 0.5 * dt * k1v, w0 + 0.5 * dt * k1w);
            let (k3v, k3w) = rate(v0 + 0.5 * dt * k2v, w0 + 0.5 * dt * k2w);
            let (k4v, k4w) = rate(v0 + dt * k3v, w0 + dt * k3w);
            state.v[fi] = v0 + dt / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
            state.w[fi] = w0 + dt / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w);
        }
    }

    pub fn step(
        &self,
        state: &mut DnsState,
        dt: f64,
        stim: &DnsStimulus,
        opts: &DnsStepOptions,
    ) -> Result<DnsDiagnostics> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("dt must be positive, got {dt}")));
        }
        self.reaction_step(state, dt, stim);
        let vmax = state.v.iter().fold(0.0f64, |m, &v| m.max(v.abs()));
        if vmax > opts.v_ceiling {
            return Err(Error::StabilityBreach { vmax, ceiling: opts.v_ceiling });
        }
        let n = self.mesh_i.n_nodes();
        let eps = self.grid.epsilon();
        let mut rhs = vec![0.0; 2 * n];
        for (fi, f) in self.facets.iter().enumerate() {
            let s = eps * f.area / dt * state.v[fi] / f.nodes.len() as f64;
            for &node in &f.nodes {
                rhs[node] += s;
                rhs[n + node] -= s;
            }
        }
        let mut precond = vec![0.0; 2 * n];
        let mut coupling = vec![0.0; n];
        for f in &self.facets {
            let c = eps * f.area / dt;
            let per_node = c / (f.nodes.len() as f64 * f.nodes.len() as f64);
            for &node in &f.nodes {
                coupling[node] += per_node;
            }
        }
        for i in 0..n {
            precond[i] = 1.0 / (self.diag_i[i] + coupling[i]);
            precond[n + i] = 1.0 / (self.diag_e[i] + coupling[i]);
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
        .map_err(|e| Error::LinearSolveFailure(format!("membrane step at t={}: {e}", state.t)))?;
        state.u_i.copy_from_slice(&x[..n]);
        state.u_e.copy_from_slice(&x[n..]);
        // gauge: shift both potentials together so ∫ u_e over Ω_e is 0
        // (leaves v untouched)
        let shift = self.mesh_e.mean(&state.u_e);
        for i in 0..n {
            if self.mesh_i.active_node_mask()[i] {
                state.u_i[i] -= shift;
            }
            if self.mesh_e.active_node_mask()[i] {
                state.u_e[i] -= shift;
            }
        }
        for (fi, f) in self.facets.iter().enumerate() {
            state.v[fi] = self.trace(f, &state.u_i) - self.trace(f, &state.u_e);
        }
        state.t += dt;
        Ok(self.diagnostics(state, stats.iterations, stats.relative_residual))
    }

    pub fn diagnostics(&self, state: &DnsState, iters: usize, resid: f64) -> DnsDiagnostics {
        let eps = self.grid.epsilon();
        let mut v2 = 0.0;
        let mut w2 = 0.0;
        let mut v4 = 0.0;
        let mut min_v = f64::INFINITY;
        let mut max_v = f64::NEG_INFINITY;
        for (fi, f) in self.facets.iter().enumerate() {
            let (v, w) = (state.v[fi], state.w[fi]);
            v2 += v * v * f.area;
            w2 += w * w * f.area;
            v4 += v.powi(4) * f.area;
            min_v = min_v.min(v);
            max_v = max_v.max(v);
        }
        let id = SpdTensor::identity(self.grid.dim());
        let h1 = |mesh: &VoxelMesh, u: &[f64]| -> f64 {
            let zero = vec![0.0; self.grid.dim()];
            let semi = mesh.energy_product(&|_| &id, u, &zero, u, &zero);
            let sq: Vec<f64> = u.iter().map(|x| x * x).collect();
            (mesh.integrate(&sq).max(0.0) + semi.max(0.0)).sqrt()
        };
        DnsDiagnostics {
            t: state.t,
            eps_norm_v: (eps * v2).sqrt(),
            eps_norm_w: (eps * w2).sqrt(),
            eps_norm_v4: (eps * v4).sqrt().sqrt(),
            h1_ui: h1(&self.mesh_i, &state.u_i),
            h1_ue: h1(&self.mesh_e, &state.u_e),
            mean_ue: self.mesh_e.mean(&state.u_e),
            min_v,
            max_v,
            cg_iterations: iters,
            cg_residual: resid,
        }
    }

    /// Voxel-valued trace of a nodal field restricted to voxels of the
    /// given tag (corner mean per voxel; 0 elsewhere). This is the form
    /// the unfolding operators consume.
    pub fn voxel_field(&self, u: &[f64], tag: MacroTag) -> Vec<f64> {
        let mesh = match tag {
            MacroTag::IntraCyto => &self.mesh_i,
            MacroTag::Extra => &self.mesh_e,
            MacroTag::IntraMito => &self.mesh_i,
        };
        let d = self.grid.dim();
        let nc = 1usize << d;
        let mut corners = [0usize; 8];
        let mut out = vec![0.0; self.grid.shape().len()];
        self.grid.shape().for_each(|idx, coords| {
            if self.grid.tag(idx) != tag {
                return;
            }
            mesh.corner_nodes(coords, &mut corners[..nc]);
            out[idx] = corners[..nc].iter().map(|&c| u[c]).sum::<f64>() / nc as f64;
        });
        out
    }

    /// Symmetry defect of the coupled operator on a given vector pair:
    /// |xᵀ B y − yᵀ B x|. Zero by construction; exposed so the flux
    /// balance across Γ_ε can be asserted.
    pub fn operator_asymmetry(&self, dt: f64, x: &[f64], y: &[f64]) -> f64 {
        let mut bx = vec![0.0; x.len()];
        let mut by = vec![0.0; y.len()];
        self.apply_block(dt, x, &mut bx);
        self.apply_block(dt, y, &mut by);
        let xby: f64 = x.iter().zip(&by).map(|(a, b)| a * b).sum();
        let ybx: f64 = y.iter().zip(&bx).map(|(a, b)| a * b).sum();
        (xby - ybx).abs()
    }
}

fn facet_center(grid: &TiledGrid, f: &InterfaceFacet) -> Vec<f64> {
    let d = grid.dim();
    let mut coords = vec![0usize; d];
    grid.shape().decode(f.lo, &mut coords);
    let mut c = grid.voxel_center(&coords);
    c[f.axis] += grid.spacing()[f.axis] / 2.0;
    c
}

/// Corner nodes of the shared face between `f.lo` and its +axis
/// neighbor (the nodes with coordinate lo+1 along the facet axis).
fn face_nodes(grid: &TiledGrid, mesh: &VoxelMesh, f: &InterfaceFacet) -> Vec<usize> {
    let d = grid.dim();
    let mut elem = vec![0usize; d];
    grid.shape().decode(f.lo, &mut elem);
    let mut nodes = Vec::with_capacity(1 << (d - 1));
    let others: Vec<usize> = (0..d).filter(|&a| a != f.axis).collect();
    for combo in 0..(1usize << others.len()) {
        let mut node = vec![0usize; d];
        node[f.axis] = elem[f.axis] + 1;
        for (bit, &a) in others.iter().enumerate() {
            node[a] = elem[a] + ((combo >> bit) & 1);
        }
        nodes.push(mesh.nodes().linear(&node));
    }
    nodes
}

/// Fixed-step DNS loop; returns the final state, per-step diagnostics,
/// and optional sampled snapshots.
pub struct DnsRunOutput {
    pub state: DnsState,
    pub diagnostics: Vec<DnsDiagnostics>,
    pub snapshots: Vec<DnsState>,
}

pub fn run(
    system: &DnsSystem,
    mut state: DnsState,
    stim: &DnsStimulus,
    dt: f64,
    t_end: f64,
    snapshot_every: usize,
    opts: &DnsStepOptions,
) -> Result<DnsRunOutput> {
    let n_steps = (t_end / dt).round() as usize;
    let mut diagnostics = Vec::with_capacity(n_steps);
    let mut snapshots = Vec::new();
    for k in 0..n_steps {
        diagnostics.push(system.step(&mut state, dt, stim, opts)?);
        if snapshot_every > 0 && (k + 1) % snapshot_every == 0 {
            snapshots.push(state.clone());
        }
    }
    Ok(DnsRunOutput { state, diagnostics, snapshots })
}

/// One row of the homogenization convergence table, together with the
/// running maxima of the ε-scaled a priori norms.
#[derive(Debug, Clone)]
pub struct StudyRow {
    pub eps: f64,
    pub err_ue: f64,
    pub err_v: f64,
    /// Single relative error over both compared fields (numerators and
    /// denominators pooled); the headline convergence observable. The
    /// per-field errors above can be noisy when few cells per axis leave
    /// the gauge little freedom.
    pub err_combined: f64,
    pub max_eps_norm_v: f64,
    pub max_eps_norm_w: f64,
    pub max_eps_norm_v4: f64,
    pub max_h1_ui: f64,
    pub max_h1_ue: f64,
}

#[derive(Clone)]
pub struct StudyConfig {
    pub meso: crate::geometry::UnitCellGeometry,
    pub micro: crate::geometry::UnitCellGeometry,
    pub eps_list: Vec<f64>,
    pub dt: f64,
    pub t_end: f64,
    /// compare fields every this many steps
    pub sample_every: usize,
    pub params: FhnParams,
    pub stim_center: Vec<f64>,
    pub stim_radius: f64,
    pub stim_amplitude: f64,
    pub stim_window: (f64, f64),
    /// macro grid elements per axis; must be divisible by the ε-cell
    /// counts of every entry in `eps_list`
    pub macro_elems: usize,
    /// multiplier on the homogenized intracellular tensor (1.0 for the
    /// real study; e.g. 2.0 as a negative control)
    pub effective_scale: f64,
    /// ε/δ ratio for the resolved runs; must divide the meso resolution
    /// so that δ-cell boundaries land on voxel faces
    pub delta_ratio: usize,
}

/// Average a macro nodal field over each ε-cell block: corner-mean per
/// element, then plain mean over the block of elements.
fn block_average(
    grid: &crate::macro_solver::MacroGrid,
    u: &[f64],
    cells_per_axis: usize,
) -> Vec<f64> {
    let elems = grid.mesh().elems();
    let d = elems.dim();
    let per = elems.dims()[0] / cells_per_axis;
    let cells = crate::grid::GridShape::new(&vec![cells_per_axis; d]);
    let mut sums = vec![0.0; cells.len()];
    let mut counts = vec![0usize; cells.len()];
    let nc = 1usize << d;
    let mut corners = [0usize; 8];
    elems.for_each(|_, coords| {
        grid.mesh().corner_nodes(coords, &mut corners[..nc]);
        let mean = corners[..nc].iter().map(|&c| u[c]).sum::<f64>() / nc as f64;
        let cell: Vec<usize> = coords.iter().map(|&c| c / per).collect();
        let ci = cells.linear(&cell);
        sums[ci] += mean;
        counts[ci] += 1;
    });
    sums.iter().zip(&counts).map(|(s, &c)| s / c as f64).collect()
}

/// Run the homogenized model once and the resolved model per ε, compare
/// the ε-cell-averaged unfolded DNS fields against the block-averaged
/// homogenized fields, and report relative space-time ℓ² errors.
pub fn convergence_study(cfg: &StudyConfig) -> Result<Vec<StudyRow>> {
    use crate::cell::{
        effective_tensor, isotropic_field, solve_correctors, two_level_homogenize,
        CellSolveOptions, MicroTensor,
    };
    use crate::geometry::{tile_microdomain, Label, TiledDomainSpec};
    use crate::macro_solver::{
        BidomainState, MacroGrid, MacroSystem, RunOptions, StepOptions, Stimulus,
    };

    let d = cfg.meso.dim();
    let cell_opts = CellSolveOptions::default();

    // homogenized tensors from the same reference cells
    let micro_field = isotropic_field(&cfg.micro, 1.0);
    let two_level = two_level_homogenize(
        &cfg.micro,
        MicroTensor::Uniform(&micro_field),
        &cfg.meso,
        &cell_opts,
    )?;
    let meso_field = isotropic_field(&cfg.meso, 1.0);
    let cors_e = solve_correctors(&cfg.meso, &meso_field, Label::Extra, &cell_opts)?;
    let eff_e = effective_tensor(&cfg.meso, &meso_field, Label::Extra, &cors_e)?;
    let eff_i = two_level.level2.scale(cfg.effective_scale);
    let mu_m = cfg.meso.interface_per_volume();

    // one homogenized run on a fixed fine grid
    let macro_grid = MacroGrid::new(&vec![cfg.macro_elems; d], &vec![1.0; d])?;
    let system = MacroSystem::new(&macro_grid, eff_i, eff_e, mu_m, cfg.params.clone())?;
    let stimulus = Stimulus::Pulse {
        center: cfg.stim_center.clone(),
        radius: cfg.stim_radius,
        amplitude: cfg.stim_amplitude,
        t_on: cfg.stim_window.0,
        t_off: cfg.stim_window.1,
    };
    let n_nodes = macro_grid.n_nodes();
    let state = BidomainState::new(&macro_grid, &vec![0.0; n_nodes], &vec![0.0; n_nodes])?;
    let run_opts = RunOptions {
        dt: cfg.dt,
        t_end: cfg.t_end,
        step: StepOptions::default(),
        snapshot_every: cfg.sample_every,
    };
    let macro_out = crate::macro_solver::run(&system, state, &stimulus, &run_opts)?;

    let dns_stim = DnsStimulus::Pulse {
        center: cfg.stim_center.clone(),
        radius: cfg.stim_radius,
        amplitude: cfg.stim_amplitude,
        t_on: cfg.stim_window.0,
        t_off: cfg.stim_window.1,
    };

    let mut rows = Vec::new();
    for &eps in &cfg.eps_list {
        let spec = TiledDomainSpec::new(
            &vec![1.0; d],
            eps,
            eps / cfg.delta_ratio as f64,
            cfg.meso.clone(),
            cfg.micro.clone(),
        )?;
        let grid = tile_microdomain(&spec)?;
        let cpa = grid.cells().dims()[0];
        if cfg.macro_elems % cpa != 0 {
            return Err(Error::IncommensurateResolution(format!(
                "macro grid of {} elements does not tile {cpa} cells per axis",
                cfg.macro_elems
            )));
        }
        let dns = DnsSystem::new(
            &grid,
            TensorField::uniform(grid.shape().clone(), SpdTensor::identity(d)),
            TensorField::uniform(grid.shape().clone(), SpdTensor::identity(d)),
            cfg.params.clone(),
        )?;
        let mut state = dns.initial_state(&|_| 0.0, &|_| 0.0);
        let n_steps = (cfg.t_end / cfg.dt).round() as usize;
        let gamma = grid.gamma_eps_facets();
        let (mut num_ue, mut den_ue, mut num_v, mut den_v) = (0.0, 0.0, 0.0, 0.0);
        let mut maxima = [0.0f64; 5];
        let mut snap_idx = 0usize;
        for k in 0..n_steps {
            let diag = dns.step(&mut state, cfg.dt, &dns_stim, &DnsStepOptions::default())?;
            for (slot, value) in [
                diag.eps_norm_v,
                diag.eps_norm_w,
                diag.eps_norm_v4,
                diag.h1_ui,
                diag.h1_ue,
            ]
            .iter()
            .enumerate()
            {
                maxima[slot] = maxima[slot].max(*value);
            }
            if cfg.sample_every > 0 && (k + 1) % cfg.sample_every == 0 {
                let macro_state = &macro_out.snapshots[snap_idx];
                snap_idx += 1;
                // ε-cell comparands
                let ue_vox = dns.voxel_field(&state.u_e, MacroTag::Extra);
                let ue_uf = unfolding::unfold(&grid, &ue_vox)?;
                let ue_dns = unfolding::cell_average(&grid, &ue_uf, MacroTag::Extra);
                let ue_mac = block_average(&macro_grid, &macro_state.u_e, cpa);
                let v_uf = unfolding::unfold_boundary(&grid, &gamma, &state.v)?;
                let v_dns = unfolding::boundary_cell_average(&v_uf);
                let v_mac = block_average(&macro_grid, &macro_state.v, cpa);
                for c in 0..ue_dns.len() {
                    num_ue += (ue_dns[c] - ue_mac[c]).powi(2);
                    den_ue += ue_mac[c].powi(2);
                    num_v += (v_dns[c] - v_mac[c]).powi(2);
                    den_v += v_mac[c].powi(2);
                }
            }
        }
        rows.push(StudyRow {
            eps,
            err_ue: (num_ue / den_ue.max(1e-300)).sqrt(),
            err_v: (num_v / den_v.max(1e-300)).sqrt(),
            err_combined: ((num_ue + num_v) / (den_ue + den_v).max(1e-300)).sqrt(),
            max_eps_norm_v: maxima[0],
            max_eps_norm_w: maxima[1],
            max_eps_norm_v4: maxima[2],
            max_h1_ui: maxima[3],
            max_h1_ue: maxima[4],
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{
        build_standard_cell, tile_microdomain, CellKind, InclusionShape, TiledDomainSpec,
    };

    fn sample_grid(eps: f64, delta: f64, micro_shape: InclusionShape) -> TiledGrid {
        let meso = build_standard_cell(CellKind::Meso, 2, InclusionShape::Square, 0.5, 8).unwrap();
        let micro = build_standard_cell(CellKind::Micro, 2, micro_shape, 0.5, 4).unwrap();
        let spec = TiledDomainSpec::new(&[1.0, 1.0], eps, delta, meso, micro).unwrap();
        tile_microdomain(&spec).unwrap()
    }

    fn unit_system(grid: &TiledGrid) -> DnsSystem<'_> {
        DnsSystem::new(
            grid,
            TensorField::uniform(grid.shape().clone(), SpdTensor::identity(2)),
            TensorField::uniform(grid.shape().clone(), SpdTensor::identity(2)),
            FhnParams::standard(),
        )
        .unwrap()
    }

    #[test]
    fn zero_data_stays_zero() {
        let grid = sample_grid(0.5, 0.25, InclusionShape::None);
        let system = unit_system(&grid);
        let mut state = system.initial_state(&|_| 0.0, &|_| 0.0);
        for _ in 0..3 {
            let d = system
                .step(&mut state, 1e-2, &DnsStimulus::None, &DnsStepOptions::default())
                .unwrap();
            assert!(d.eps_norm_v <= 1e-14);
            assert!(d.h1_ui <= 1e-12);
            assert!(d.h1_ue <= 1e-12);
        }
    }

    #[test]
    fn missing_interface_is_rejected() {
        // meso cell with no inclusion → everything extracellular → Γ_ε = ∅
        let meso =
            build_standard_cell(CellKind::Meso, 2, InclusionShape::None, 0.0, 8).unwrap();
        let micro =
            build_standard_cell(CellKind::Micro, 2, InclusionShape::None, 0.0, 4).unwrap();
        let spec = TiledDomainSpec::new(&[1.0, 1.0], 0.5, 0.25, meso, micro).unwrap();
        let grid = tile_microdomain(&spec).unwrap();
        let r = DnsSystem::new(
            &grid,
            TensorField::uniform(grid.shape().clone(), SpdTensor::identity(2)),
            TensorField::uniform(grid.shape().clone(), SpdTensor::identity(2)),
            FhnParams::standard(),
        );
        assert!(matches!(r, Err(Error::NoInterface)));
    }

    #[test]
    fn uniform_membrane_matches_ode_oracle() {
        let grid = sample_grid(0.5, 0.5, InclusionShape::None);
        let system = unit_system(&grid);
        let mut state = system.initial_state(&|_| 0.4, &|_| 0.0);
        let dt = 1e-3;
        let steps = 500;
        for _ in 0..steps {
            system.step(&mut state, dt, &DnsStimulus::None, &DnsStepOptions::default()).unwrap();
        }
        // facet-averaged trajectory vs the 2-variable kinetics ODE
        let p = FhnParams::standard();
        let (mut v, mut w) = (0.4f64, 0.0f64);
        let h = dt / 10.0;
        for _ in 0..steps * 10 {
            let f = |v: f64, w: f64| (-crate::ionic::i_ion(v, w, &p), crate::ionic::h_gate(v, w, &p));
            let (k1v, k1w) = f(v, w);
            let (k2v, k2w) = f(v + 0.5 * h * k1v, w + 0.5 * h * k1w);
            let (k3v, k3w) = f(v + 0.5 * h * k2v, w + 0.5 * h * k2w);
            let (k4v, k4w) = f(v + h * k3v, w + h * k3w);
            v += h / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
            w += h / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w);
        }
        let avg_v: f64 = state.v.iter().sum::<f64>() / state.v.len() as f64;
        let avg_w: f64 = state.w.iter().sum::<f64>() / state.w.len() as f64;
        assert!((avg_v - v).abs() <= 1e-3, "|Δv| = {}", (avg_v - v).abs());
        assert!((avg_w - w).abs() <= 1e-3);
    }

    #[test]
    fn coupled_operator_is_symmetric() {
        let grid = sample_grid(0.5, 0.25, InclusionShape::Square);
        let system = unit_system(&grid);
        let n = system.mesh_i.n_nodes();
        let x: Vec<f64> = (0..2 * n).map(|i| ((i * 2654435761) % 1000) as f64 / 500.0 - 1.0).collect();
        let y: Vec<f64> = (0..2 * n).map(|i| ((i * 40503 + 7) % 1000) as f64 / 500.0 - 1.0).collect();
        let defect = system.operator_asymmetry(1e-3, &x, &y);
        let scale: f64 = x.iter().map(|a| a.abs()).sum::<f64>() / x.len() as f64;
        assert!(defect <= 1e-9 * scale.max(1.0) * n as f64);
    }

    #[test]
    fn empty_holes_make_delta_irrelevant() {
        // with Z_m = ∅ the tags and tensors cannot depend on δ, so the
        // trajectories must agree bit for bit
        let grid_a = sample_grid(0.5, 0.5, InclusionShape::None);
        let grid_b = sample_grid(0.5, 0.25, InclusionShape::None);
        assert_eq!(grid_a.tags(), grid_b.tags());
        let sys_a = unit_system(&grid_a);
        let sys_b = unit_system(&grid_b);
        let stim = DnsStimulus::Uniform { amplitude: 0.3, t_on: 0.0, t_off: 0.05 };
        let mut sa = sys_a.initial_state(&|_| 0.2, &|_| 0.0);
        let mut sb = sys_b.initial_state(&|_| 0.2, &|_| 0.0);
        for _ in 0..20 {
            sys_a.step(&mut sa, 1e-2, &stim, &DnsStepOptions::default()).unwrap();
            sys_b.step(&mut sb, 1e-2, &stim, &DnsStepOptions::default()).unwrap();
        }
        assert_eq!(sa.v, sb.v);
        assert_eq!(sa.u_e, sb.u_e);
    }

    #[test]
    fn gauge_and_trace_invariants_hold() {
        let grid = sample_grid(0.5, 0.25, InclusionShape::Square);
        let system = unit_system(&grid);
        let mut state = system.initial_state(&|x| 0.3 * (x[0] * 7.0).sin(), &|_| 0.0);
        for _ in 0..3 {
            system.step(&mut state, 1e-2, &DnsStimulus::None, &DnsStepOptions::default()).unwrap();
            assert!(system.mesh_e.mean(&state.u_e).abs() <= 1e-10);
            for (fi, f) in system.facets.iter().enumerate() {
                let jump = system.trace(f, &state.u_i) - system.trace(f, &state.u_e);
                assert!((state.v[fi] - jump).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn unfolded_extra_average_is_well_formed() {
        let grid = sample_grid(0.5, 0.25, InclusionShape::Square);
        let system = unit_system(&grid);
        let mut state = system.initial_state(&|_| 0.3, &|_| 0.0);
        let stim = DnsStimulus::Pulse {
            center: vec![0.25, 0.25],
            radius: 0.2,
            amplitude: 1.0,
            t_on: 0.0,
            t_off: 0.1,
        };
        for _ in 0..5 {
            system.step(&mut state, 1e-2, &stim, &DnsStepOptions::default()).unwrap();
        }
        let field = system.voxel_field(&state.u_e, MacroTag::Extra);
        let uf = unfolding::unfold(&grid, &field).unwrap();
        let avg = unfolding::cell_average(&grid, &uf, MacroTag::Extra);
        assert_eq!(avg.len(), grid.cells().len());
        assert!(avg.iter().all(|a| a.is_finite()));
    }
}
