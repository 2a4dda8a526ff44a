//! Periodic corrector problems and effective conductivity tensors.
//!
//! Level one solves the δ-cell problem on the cytosol Z_c and averages
//! the corrected flux over the full cell Z; level two feeds that tensor
//! into the ε-cell problem on Y_i (with the natural no-flux condition on
//! the membrane) and averages again over Y. The extracellular tensor is
//! a single-level solve on Y_e.
//!
//! The strong form's coefficient derivative is never formed: the weak
//! right-hand side uses ∫ M e_q · ∇φ directly, which stays valid for
//! discontinuous coefficients.

use crate::fem::VoxelMesh;
use crate::geometry::{Label, UnitCellGeometry};
use crate::grid::{norm2, GridField};
use crate::pcg::{self, PcgOptions};
use crate::tensor::{SpdTensor, TensorField};
use crate::{Error, Result};

/// Per-axis corrector fields solved against one (cell, tensor, tag)
/// triple, nodal on the periodic cell grid.
#[derive(Debug, Clone)]
pub struct CorrectorSet {
    pub components: Vec<GridField>,
    pub residuals: Vec<f64>,
    pub iterations: Vec<usize>,
    resolution: Vec<usize>,
    tag: Label,
}

impl CorrectorSet {
    pub fn tag(&self) -> Label {
        self.tag
    }

    pub fn resolution(&self) -> &[usize] {
        &self.resolution
    }
}

/// Solver knobs. The iteration cap defaults to 50 d N^(1/d).
#[derive(Debug, Clone, Copy)]
pub struct CellSolveOptions {
    pub rtol: f64,
    pub max_iter: Option<usize>,
}

impl Default for CellSolveOptions {
    fn default() -> Self {
        Self { rtol: 1e-10, max_iter: None }
    }
}

fn periodic_mesh(cell: &UnitCellGeometry, tag: Label) -> VoxelMesh {
    let active: Vec<bool> = cell.labels().iter().map(|&l| l == tag).collect();
    VoxelMesh::new(cell.resolution(), &cell.spacing(), true, active)
}

fn cap(cell: &UnitCellGeometry, opts: &CellSolveOptions) -> usize {
    let d = cell.dim();
    let n = cell.shape().len();
    opts.max_iter
        .unwrap_or_else(|| (50.0 * d as f64 * (n as f64).powf(1.0 / d as f64)) as usize)
        .max(100)
}

/// Solve the periodic corrector problem for axis `q` on the `tag`
/// subregion: find zero-mean periodic θ with
/// ∫ M (∇θ + e_q) · ∇φ = 0 for all periodic test functions φ.
pub fn solve_cell_problem(
    cell: &UnitCellGeometry,
    tensor: &TensorField,
    tag: Label,
    q: usize,
    opts: &CellSolveOptions,
) -> Result<GridField> {
    let (field, _, _) = solve_cell_problem_with_stats(cell, tensor, tag, q, opts)?;
    Ok(field)
}

fn solve_cell_problem_with_stats(
    cell: &UnitCellGeometry,
    tensor: &TensorField,
    tag: Label,
    q: usize,
    opts: &CellSolveOptions,
) -> Result<(GridField, f64, usize)> {
    if tensor.shape() != cell.shape() {
        return Err(Error::MismatchedCorrectors(
            "tensor field resolution differs from cell resolution".into(),
        ));
    }
    let mesh = periodic_mesh(cell, tag);
    if mesh.n_active() == 0 {
        return Err(Error::SingularSystem(format!("subregion {tag:?} is empty")));
    }
    let tensor_of = |e: usize| tensor.at(e);
    let b = mesh.unit_gradient_rhs(&tensor_of, q);
    // compatibility: the rhs must annihilate constants
    let bsum: f64 = b.iter().sum();
    if bsum.abs() > 1e-12 * norm2(&b).max(1.0) {
        return Err(Error::SingularSystem(format!(
            "incompatible right-hand side: <rhs,1> = {bsum:.3e}"
        )));
    }
    let diag = mesh.stiffness_diagonal(&tensor_of);
    let inv_diag: Vec<f64> = diag.iter().map(|d| 1.0 / d).collect();
    let mask = mesh.active_node_mask().to_vec();
    let n_active_nodes = mask.iter().filter(|&&m| m).count() as f64;
    let project = move |v: &mut [f64]| {
        let mut s = 0.0;
        for (i, &m) in mask.iter().enumerate() {
            if m {
                s += v[i];
            }
        }
        let mean = s / n_active_nodes;
        for (i, &m) in mask.iter().enumerate() {
            if m {
                v[i] -= mean;
            } else {
                v[i] = 0.0;
            }
        }
    };
    let apply = |u: &[f64], out: &mut [f64]| mesh.apply_stiffness(&tensor_of, u, out);
    let mut x = vec![0.0; mesh.n_nodes()];
    let stats = pcg::solve(
        &apply,
        &inv_diag,
        &project,
        &b,
        &mut x,
        PcgOptions { rtol: opts.rtol, max_iter: cap(cell, opts) },
    )?;
    // zero-mean normalization over the subregion (quadrature mean)
    let m = mesh.mean(&x);
    for (i, v) in x.iter_mut().enumerate() {
        if mesh.active_node_mask()[i] {
            *v -= m;
        }
    }
    Ok((
        GridField::from_vec(mesh.nodes().clone(), x),
        stats.relative_residual,
        stats.iterations,
    ))
}

/// Solve all d corrector components.
pub fn solve_correctors(
    cell: &UnitCellGeometry,
    tensor: &TensorField,
    tag: Label,
    opts: &CellSolveOptions,
) -> Result<CorrectorSet> {
    let d = cell.dim();
    let mut components = Vec::with_capacity(d);
    let mut residuals = Vec::with_capacity(d);
    let mut iterations = Vec::with_capacity(d);
    for q in 0..d {
        let (field, res, it) = solve_cell_problem_with_stats(cell, tensor, tag, q, opts)?;
        components.push(field);
        residuals.push(res);
        iterations.push(it);
    }
    Ok(CorrectorSet {
        components,
        residuals,
        iterations,
        resolution: cell.resolution().to_vec(),
        tag,
    })
}

/// Assemble the effective tensor from solved correctors:
/// m_eff^{pk} = (1/|cell|) ∫_{subregion} M (∇θ^k + e_k) · (∇θ^p + e_p).
///
/// The division is by the full cell measure, so the subregion volume
/// fraction is embedded in the result. At the discrete solution the
/// energy form agrees with the flux-average form by Galerkin
/// orthogonality and is symmetric by construction.
pub fn effective_tensor(
    cell: &UnitCellGeometry,
    tensor: &TensorField,
    tag: Label,
    correctors: &CorrectorSet,
) -> Result<SpdTensor> {
    let d = cell.dim();
    if correctors.tag != tag || correctors.resolution != cell.resolution() {
        return Err(Error::MismatchedCorrectors(
            "corrector set was solved on a different cell or subregion".into(),
        ));
    }
    if correctors.components.len() != d {
        return Err(Error::MismatchedCorrectors(format!(
            "expected {d} components, got {}",
            correctors.components.len()
        )));
    }
    let mesh = periodic_mesh(cell, tag);
    let tensor_of = |e: usize| tensor.at(e);
    let vol = cell.cell_volume();
    let mut entries = vec![0.0; d * d];
    for k in 0..d {
        let mut ek = [0.0f64; 3];
        ek[k] = 1.0;
        for p in 0..=k {
            let mut ep = [0.0f64; 3];
            ep[p] = 1.0;
            let e = mesh.energy_product(
                &tensor_of,
                correctors.components[k].data(),
                &ek,
                correctors.components[p].data(),
                &ep,
            ) / vol;
            entries[p * d + k] = e;
            entries[k * d + p] = e;
        }
    }
    SpdTensor::new(d, entries)
}

/// Flux-average evaluation of the same tensor:
/// m^{pk} = (1/|cell|) ∫ (m^{pk} + Σ_q m^{pq} ∂θ^k/∂z_q).
/// Used for the double-form consistency check of the second level.
pub fn effective_tensor_flux_form(
    cell: &UnitCellGeometry,
    tensor: &TensorField,
    tag: Label,
    correctors: &CorrectorSet,
) -> Result<Vec<f64>> {
    let d = cell.dim();
    let mesh = periodic_mesh(cell, tag);
    let vol = cell.cell_volume();
    let voxel = cell.voxel_volume();
    let mut entries = vec![0.0; d * d];
    for k in 0..d {
        let grads = mesh.element_gradients(correctors.components[k].data());
        cell.shape().for_each(|e, _| {
            if !mesh.is_active(e) {
                return;
            }
            let m = tensor.at(e);
            for p in 0..d {
                let mut s = m.get(p, k);
                for q in 0..d {
                    s += m.get(p, q) * grads[e][q];
                }
                entries[p * d + k] += voxel * s / vol;
            }
        });
    }
    Ok(entries)
}

/// Result of the full two-level pipeline.
#[derive(Debug, Clone)]
pub struct TwoLevelResult {
    /// First-level tensor M̃_i (constant in y for a y-independent
    /// microscopic coefficient; one entry per meso voxel otherwise).
    pub level1: TensorField,
    /// Second-level tensor assembled from the y-integral (first form).
    pub level2: SpdTensor,
    /// Second-level tensor evaluated by the literal double (z, y)
    /// quadrature (second form), kept for reporting.
    pub level2_double_form: Vec<f64>,
    pub micro_correctors: CorrectorSet,
    pub meso_correctors: CorrectorSet,
}

/// Microscopic intracellular coefficient M_i(y, z).
pub enum MicroTensor<'a> {
    /// Independent of the mesoscopic variable (solve once, broadcast).
    Uniform(&'a TensorField),
    /// One micro tensor field per meso voxel.
    PerMesoVoxel(&'a [TensorField]),
}

/// Two-level homogenization of the intracellular conductivity:
/// δ-cell solves on Z_c produce M̃_i(y); the ε-cell solves on Y_i with
/// coefficient M̃_i produce the constant second-level tensor.
///
/// Both printed forms of the second-level tensor are evaluated and must
/// agree; disagreement beyond `consistency_tol` (default 1e-8) is an
/// error.
pub fn two_level_homogenize(
    micro_cell: &UnitCellGeometry,
    micro_tensor: MicroTensor<'_>,
    meso_cell: &UnitCellGeometry,
    opts: &CellSolveOptions,
) -> Result<TwoLevelResult> {
    let d = micro_cell.dim();
    // Level 1: δ-cell problems on the cytosol. For each distinct
    // microscopic coefficient, both the energy-form tensor (fed to
    // level 2) and its flux-form evaluation (for the double integral)
    // are kept.
    struct Level1 {
        field: TensorField,
        flux_per_voxel: Vec<Vec<f64>>,
        uniform: bool,
        correctors: CorrectorSet,
    }
    let level1 = match micro_tensor {
        MicroTensor::Uniform(tf) => {
            let correctors = solve_correctors(micro_cell, tf, Label::Cyto, opts)?;
            let m1 = effective_tensor(micro_cell, tf, Label::Cyto, &correctors)?;
            let flux = effective_tensor_flux_form(micro_cell, tf, Label::Cyto, &correctors)?;
            Level1 {
                field: TensorField::uniform(meso_cell.shape().clone(), m1),
                flux_per_voxel: vec![flux],
                uniform: true,
                correctors,
            }
        }
        MicroTensor::PerMesoVoxel(fields) => {
            if fields.len() != meso_cell.shape().len() {
                return Err(Error::MismatchedCorrectors(
                    "need one micro tensor field per meso voxel".into(),
                ));
            }
            let mut tensors = Vec::with_capacity(fields.len());
            let mut flux_per_voxel = Vec::with_capacity(fields.len());
            let mut first_correctors = None;
            for tf in fields {
                let correctors = solve_correctors(micro_cell, tf, Label::Cyto, opts)?;
                tensors.push(effective_tensor(micro_cell, tf, Label::Cyto, &correctors)?);
                flux_per_voxel.push(effective_tensor_flux_form(
                    micro_cell,
                    tf,
                    Label::Cyto,
                    &correctors,
                )?);
                if first_correctors.is_none() {
                    first_correctors = Some(correctors);
                }
            }
            let mut it = tensors.into_iter();
            Level1 {
                field: TensorField::from_fn(meso_cell.shape().clone(), |_| it.next().unwrap()),
                flux_per_voxel,
                uniform: false,
                correctors: first_correctors.unwrap(),
            }
        }
    };
    // Level 2: ε-cell problems on Y_i with coefficient M̃_i(y).
    let meso_correctors = solve_correctors(meso_cell, &level1.field, Label::Intra, opts)?;
    let level2 = effective_tensor(meso_cell, &level1.field, Label::Intra, &meso_correctors)?;

    // Second form: the literal double (z, y) quadrature. The inner
    // z-integral of the corrected microscopic flux is contracted with
    // (∇_y χ + Id) per meso voxel.
    let meso_mesh = periodic_mesh(meso_cell, Label::Intra);
    let y_vol = meso_cell.cell_volume();
    let y_voxel = meso_cell.voxel_volume();
    let mut double_form = vec![0.0; d * d];
    for q in 0..d {
        let grads = meso_mesh.element_gradients(meso_correctors.components[q].data());
        meso_cell.shape().for_each(|e, _| {
            if !meso_mesh.is_active(e) {
                return;
            }
            let mt: &[f64] =
                if level1.uniform { &level1.flux_per_voxel[0] } else { &level1.flux_per_voxel[e] };
            for p in 0..d {
                let mut s = mt[p * d + q];
                for k in 0..d {
                    s += mt[p * d + k] * grads[e][k];
                }
                double_form[p * d + q] += y_voxel * s / y_vol;
            }
        });
    }
    let tol = 1e-8;
    for p in 0..d {
        for q in 0..d {
            let diff = (double_form[p * d + q] - level2.get(p, q)).abs();
            if diff > tol {
                return Err(Error::InconsistentDoubleIntegral { p, q, diff });
            }
        }
    }
    Ok(TwoLevelResult {
        level1: level1.field,
        level2,
        level2_double_form: double_form,
        micro_correctors: level1.correctors,
        meso_correctors,
    })
}

/// Energy of a periodic trial field ψ against unit gradient e_q:
/// (1/|cell|) ∫ M (∇ψ + e_q)·(∇ψ + e_q). Minimized by the corrector.
pub fn trial_energy(
    cell: &UnitCellGeometry,
    tensor: &TensorField,
    tag: Label,
    psi: &[f64],
    q: usize,
) -> f64 {
    let mesh = periodic_mesh(cell, tag);
    let mut eq = [0.0f64; 3];
    eq[q] = 1.0;
    mesh.energy_product(&|e| tensor.at(e), psi, &eq, psi, &eq) / cell.cell_volume()
}

/// Arithmetic cell average of M over the subregion, divided by the full
/// cell measure (the Voigt bound for the effective tensor).
pub fn voigt_average(cell: &UnitCellGeometry, tensor: &TensorField, tag: Label) -> Vec<f64> {
    let d = cell.dim();
    let voxel = cell.voxel_volume();
    let vol = cell.cell_volume();
    let mut avg = vec![0.0; d * d];
    cell.shape().for_each(|e, _| {
        if cell.label(e) == tag {
            for i in 0..d * d {
                avg[i] += tensor.at(e).entries()[i] * voxel / vol;
            }
        }
    });
    avg
}

/// Check |<rhs, 1>| numerically and the algebraic residual of a solved
/// corrector; used by diagnostics and tests.
pub fn corrector_residual(
    cell: &UnitCellGeometry,
    tensor: &TensorField,
    tag: Label,
    theta: &GridField,
    q: usize,
) -> f64 {
    let mesh = periodic_mesh(cell, tag);
    let tensor_of = |e: usize| tensor.at(e);
    let b = mesh.unit_gradient_rhs(&tensor_of, q);
    let mut ax = vec![0.0; mesh.n_nodes()];
    mesh.apply_stiffness(&tensor_of, theta.data(), &mut ax);
    let mut r = 0.0f64;
    for i in 0..b.len() {
        r += (ax[i] - b[i]) * (ax[i] - b[i]);
    }
    r.sqrt() / norm2(&b).max(1e-300)
}

/// Convenience: uniform isotropic tensor field on a cell grid.
pub fn isotropic_field(cell: &UnitCellGeometry, m: f64) -> TensorField {
    TensorField::uniform(cell.shape().clone(), SpdTensor::scaled_identity(cell.dim(), m))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_standard_cell, CellKind, InclusionShape};
    use crate::grid::norm_inf;

    fn opts() -> CellSolveOptions {
        CellSolveOptions::default()
    }

    #[test]
    fn constant_tensor_no_holes_corrector_is_zero() {
        let cell =
            build_standard_cell(CellKind::Micro, 2, InclusionShape::None, 0.0, 16).unwrap();
        let tf = isotropic_field(&cell, 2.5);
        let set = solve_correctors(&cell, &tf, Label::Cyto, &opts()).unwrap();
        for c in &set.components {
            assert!(norm_inf(c.data()) < 1e-10);
        }
        let eff = effective_tensor(&cell, &tf, Label::Cyto, &set).unwrap();
        for p in 0..2 {
            for q in 0..2 {
                let expect = if p == q { 2.5 } else { 0.0 };
                assert!((eff.get(p, q) - expect).abs() < 1e-12);
            }
        }
    }

    /// Closed form for the two-band laminate: flux continuity
    /// m1 (1 + s1) = m2 (1 + s2) with zero mean gives slopes
    /// s1 = 2 m2/(m1+m2) - 1 and s2 = 2 m1/(m1+m2) - 1.
    fn laminate_slopes(m1: f64, m2: f64) -> (f64, f64) {
        (2.0 * m2 / (m1 + m2) - 1.0, 2.0 * m1 / (m1 + m2) - 1.0)
    }

    #[test]
    fn laminate_transverse_corrector_vanishes() {
        let cell =
            build_standard_cell(CellKind::Micro, 2, InclusionShape::None, 0.0, 16).unwrap();
        let tf = TensorField::laminate(cell.shape().clone(), 0, 1.0, 4.0);
        // q = 1 is transverse to the banding axis 0
        let theta = solve_cell_problem(&cell, &tf, Label::Cyto, 1, &opts()).unwrap();
        assert!(norm_inf(theta.data()) < 1e-10);
    }

    #[test]
    fn laminate_corrector_matches_closed_form() {
        let (m1, m2) = (1.0, 4.0);
        let res = 16usize;
        let cell =
            build_standard_cell(CellKind::Micro, 2, InclusionShape::None, 0.0, res).unwrap();
        let tf = TensorField::laminate(cell.shape().clone(), 0, m1, m2);
        let theta = solve_cell_problem(&cell, &tf, Label::Cyto, 0, &opts()).unwrap();
        let (s1, s2) = laminate_slopes(m1, m2);
        // nodal closed form: θ(z1) piecewise linear with slopes s1, s2,
        // continuous, periodic, zero mean. On [0, 1/2): θ = s1 z + c;
        // on [1/2, 1): θ = s2 (z - 1/2) + s1/2 + c; mean fixes c.
        let h = 1.0 / res as f64;
        // mean of the two-piece sawtooth with c = 0:
        // ∫0^{1/2} s1 z dz + ∫0^{1/2} (s2 t + s1/2) dt
        let mean = s1 / 8.0 + s2 / 8.0 + s1 / 4.0;
        let closed = |z: f64| -> f64 {
            let raw = if z < 0.5 { s1 * z } else { s2 * (z - 0.5) + s1 * 0.5 };
            raw - mean
        };
        let shape = theta.shape().clone();
        let mut max_err = 0.0f64;
        shape.for_each(|idx, coords| {
            let z1 = coords[0] as f64 * h;
            max_err = max_err.max((theta.data()[idx] - closed(z1)).abs());
        });
        assert!(max_err < 1e-8, "nodal error {max_err}");
    }

    #[test]
    fn laminate_effective_tensor_exact() {
        let (m1, m2) = (1.0, 4.0);
        let cell =
            build_standard_cell(CellKind::Micro, 2, InclusionShape::None, 0.0, 64).unwrap();
        let tf = TensorField::laminate(cell.shape().clone(), 0, m1, m2);
        let set = solve_correctors(&cell, &tf, Label::Cyto, &opts()).unwrap();
        let eff = effective_tensor(&cell, &tf, Label::Cyto, &set).unwrap();
        let harmonic = 2.0 * m1 * m2 / (m1 + m2);
        let arithmetic = 0.5 * (m1 + m2);
        assert!((eff.get(0, 0) - harmonic).abs() < 1e-8, "{}", eff.get(0, 0));
        assert!((eff.get(1, 1) - arithmetic).abs() < 1e-8, "{}", eff.get(1, 1));
        assert!(eff.get(0, 1).abs() < 1e-8);
    }

    #[test]
    fn energy_and_flux_forms_agree() {
        let cell =
            build_standard_cell(CellKind::Micro, 2, InclusionShape::Square, 0.5, 32).unwrap();
        let tf = isotropic_field(&cell, 1.0);
        let set = solve_correctors(&cell, &tf, Label::Cyto, &opts()).unwrap();
        let energy = effective_tensor(&cell, &tf, Label::Cyto, &set).unwrap();
        let flux = effective_tensor_flux_form(&cell, &tf, Label::Cyto, &set).unwrap();
        for p in 0..2 {
            for q in 0..2 {
                assert!((energy.get(p, q) - flux[p * 2 + q]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn corrector_zero_mean_and_residual() {
        let cell =
            build_standard_cell(CellKind::Micro, 2, InclusionShape::Square, 0.5, 32).unwrap();
        let tf = isotropic_field(&cell, 1.0);
        let set = solve_correctors(&cell, &tf, Label::Cyto, &opts()).unwrap();
        let mesh = periodic_mesh(&cell, Label::Cyto);
        for (q, theta) in set.components.iter().enumerate() {
            let mean = mesh.integrate(theta.data());
            assert!(mean.abs() <= 1e-10 * mesh.active_volume());
            assert!(corrector_residual(&cell, &tf, Label::Cyto, theta, q) < 1e-8);
        }
    }

    #[test]
    fn mismatched_correctors_rejected() {
        let cell_a =
            build_standard_cell(CellKind::Micro, 2, InclusionShape::None, 0.0, 16).unwrap();
        let cell_b =
            build_standard_cell(CellKind::Micro, 2, InclusionShape::None, 0.0, 32).unwrap();
        let tf_a = isotropic_field(&cell_a, 1.0);
        let tf_b = isotropic_field(&cell_b, 1.0);
        let set = solve_correctors(&cell_a, &tf_a, Label::Cyto, &opts()).unwrap();
        assert!(matches!(
            effective_tensor(&cell_b, &tf_b, Label::Cyto, &set).unwrap_err(),
            Error::MismatchedCorrectors(_)
        ));
    }
}
