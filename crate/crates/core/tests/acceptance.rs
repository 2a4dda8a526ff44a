//! End-to-end acceptance suite: one pass/fail line per criterion.
//!
//! Run with `cargo test --test acceptance -- --nocapture` to see the
//! per-criterion report. All criteria run even if an early one fails;
//! the test panics at the end listing every failure.

use std::f64::consts::PI;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use triscale::cell::{
    corrector_residual, effective_tensor, isotropic_field, solve_cell_problem, solve_correctors,
    trial_energy, two_level_homogenize, voigt_average, CellSolveOptions, MicroTensor,
};
use triscale::dns::{
    convergence_study, DnsStimulus, DnsSystem, StudyConfig,
};
use triscale::error::Error;
use triscale::geometry::{
    build_standard_cell, tile_microdomain, CellKind, InclusionShape, Label, MacroTag,
    TiledDomainSpec,
};
use triscale::grid::{norm_inf, GridShape};
use triscale::ionic::{i_ion, validate_assumptions, FhnParams};
use triscale::macro_solver::{BidomainState, MacroGrid, MacroSystem, StepOptions, Stimulus};
use triscale::tensor::{SpdTensor, TensorField};
use triscale::unfolding;

struct Harness {
    failures: Vec<String>,
}

impl Harness {
    fn new() -> Self {
        Self { failures: Vec::new() }
    }

    fn report(&mut self, id: usize, name: &str, result: Result<(), String>) {
        match result {
            Ok(()) => println!("criterion {id:2} ({name}): PASS"),
            Err(detail) => {
                println!("criterion {id:2} ({name}): FAIL — {detail}");
                self.failures.push(format!("criterion {id} ({name}): {detail}"));
            }
        }
    }
}

fn ensure(cond: bool, msg: impl Fn() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn opts() -> CellSolveOptions {
    CellSolveOptions::default()
}

// ---------------------------------------------------------------- 1

/// Laminate oracle: diag(harmonic, arithmetic) effective tensor and the
/// piecewise-linear sawtooth corrector, both to 1e-8.
fn criterion_laminate() -> Result<(), String> {
    let t0 = Instant::now();
    let (m1, m2) = (1.0, 4.0);
    let cell = build_standard_cell(CellKind::Micro, 2, InclusionShape::None, 0.0, 64)
        .map_err(|e| e.to_string())?;
    let tf = TensorField::laminate(cell.shape().clone(), 0, m1, m2);
    let set = solve_correctors(&cell, &tf, Label::Cyto, &opts()).map_err(|e| e.to_string())?;
    let eff = effective_tensor(&cell, &tf, Label::Cyto, &set).map_err(|e| e.to_string())?;
    let harmonic = 2.0 * m1 * m2 / (m1 + m2);
    let arithmetic = 0.5 * (m1 + m2);
    ensure((eff.get(0, 0) - harmonic).abs() < 1e-8, || {
        format!("M00 = {} vs harmonic mean {harmonic}", eff.get(0, 0))
    })?;
    ensure((eff.get(1, 1) - arithmetic).abs() < 1e-8, || {
        format!("M11 = {} vs arithmetic mean {arithmetic}", eff.get(1, 1))
    })?;
    ensure(eff.get(0, 1).abs() < 1e-8, || format!("off-diagonal {}", eff.get(0, 1)))?;

    // nodal closed form: flux continuity m1(1+s1) = m2(1+s2), zero mean
    let (s1, s2) = (2.0 * m2 / (m1 + m2) - 1.0, 2.0 * m1 / (m1 + m2) - 1.0);
    let mean = s1 / 8.0 + s2 / 8.0 + s1 / 4.0;
    let closed = |z: f64| -> f64 {
        let raw = if z < 0.5 { s1 * z } else { s2 * (z - 0.5) + s1 * 0.5 };
        raw - mean
    };
    let theta = &set.components[0];
    let res = cell.resolution()[0] as f64;
    let mut max_err = 0.0f64;
    theta.shape().clone().for_each(|idx, coords| {
        let z = coords[0] as f64 / res;
        max_err = max_err.max((theta.data()[idx] - closed(z)).abs());
    });
    ensure(max_err < 1e-8, || format!("corrector nodal error {max_err:.3e}"))?;
    let dt = t0.elapsed();
    ensure(dt.as_secs_f64() < 5.0, || format!("runtime {dt:?} exceeds 5 s"))
}

// ---------------------------------------------------------------- 2

/// Trivial collapse: constant coefficient, no holes — correctors vanish,
/// the effective tensor equals the input, and the two-level pipeline
/// reduces to single-level homogenization of the meso cell.
fn criterion_trivial_collapse() -> Result<(), String> {
    let micro = build_standard_cell(CellKind::Micro, 2, InclusionShape::None, 0.0, 16)
        .map_err(|e| e.to_string())?;
    let tf = isotropic_field(&micro, 2.0);
    let set = solve_correctors(&micro, &tf, Label::Cyto, &opts()).map_err(|e| e.to_string())?;
    for (q, c) in set.components.iter().enumerate() {
        let n = norm_inf(c.data());
        ensure(n < 1e-10, || format!("micro corrector {q} has |θ|_∞ = {n:.3e}"))?;
    }
    let eff = effective_tensor(&micro, &tf, Label::Cyto, &set).map_err(|e| e.to_string())?;
    for p in 0..2 {
        for q in 0..2 {
            let expect = if p == q { 2.0 } else { 0.0 };
            ensure((eff.get(p, q) - expect).abs() < 1e-10, || {
                format!("effective ({p},{q}) = {} vs input {expect}", eff.get(p, q))
            })?;
        }
    }
    // two-level pipeline with a trivial first level collapses to the
    // single-level effective tensor of the meso geometry
    let meso = build_standard_cell(CellKind::Meso, 2, InclusionShape::Cross, 0.5, 16)
        .map_err(|e| e.to_string())?;
    let micro_id = isotropic_field(&micro, 1.0);
    let two =
        two_level_homogenize(&micro, MicroTensor::Uniform(&micro_id), &meso, &opts())
            .map_err(|e| e.to_string())?;
    let meso_id = isotropic_field(&meso, 1.0);
    let cors = solve_correctors(&meso, &meso_id, Label::Intra, &opts())
        .map_err(|e| e.to_string())?;
    let single =
        effective_tensor(&meso, &meso_id, Label::Intra, &cors).map_err(|e| e.to_string())?;
    for p in 0..2 {
        for q in 0..2 {
            let gap = (two.level2.get(p, q) - single.get(p, q)).abs();
            ensure(gap < 1e-10, || {
                format!("two-level vs single-level at ({p},{q}): gap {gap:.3e}")
            })?;
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- 3

/// The two printed forms of the second-level tensor agree on the
/// canonical channel + square-hole geometry.
fn criterion_double_form() -> Result<(), String> {
    let micro = build_standard_cell(CellKind::Micro, 2, InclusionShape::Square, 0.5, 16)
        .map_err(|e| e.to_string())?;
    let meso =
        build_standard_cell(CellKind::Meso, 2, InclusionShape::Channel { axis: 0 }, 0.5, 16)
            .map_err(|e| e.to_string())?;
    let micro_id = isotropic_field(&micro, 1.0);
    let two = two_level_homogenize(&micro, MicroTensor::Uniform(&micro_id), &meso, &opts())
        .map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for p in 0..2 {
        for q in 0..2 {
            worst = worst.max((two.level2.get(p, q) - two.level2_double_form[p * 2 + q]).abs());
        }
    }
    ensure(worst < 1e-8, || format!("double-form gap {worst:.3e}"))
}

// ---------------------------------------------------------------- 4

/// Structural properties of the effective tensor on the square-hole
/// cell: symmetry, positive semidefiniteness, the arithmetic-mean
/// (upper) bound, the minimum-energy characterization against random
/// periodic trial fields, Cauchy convergence in resolution, and the
/// frozen regression values.
fn criterion_structure() -> Result<(), String> {
    let mut effs = Vec::new();
    for &res in &[32usize, 64, 128] {
        let cell = build_standard_cell(CellKind::Micro, 2, InclusionShape::Square, 0.5, res)
            .map_err(|e| e.to_string())?;
        let tf = isotropic_field(&cell, 1.0);
        let set =
            solve_correctors(&cell, &tf, Label::Cyto, &opts()).map_err(|e| e.to_string())?;
        let eff = effective_tensor(&cell, &tf, Label::Cyto, &set).map_err(|e| e.to_string())?;
        ensure(eff.symmetry_defect() < 1e-12, || {
            format!("res {res}: symmetry defect {:.3e}", eff.symmetry_defect())
        })?;
        ensure(eff.lambda_min() > 0.0, || {
            format!("res {res}: lambda_min = {:.3e}", eff.lambda_min())
        })?;
        let voigt = SpdTensor::new(2, voigt_average(&cell, &tf, Label::Cyto))
            .map_err(|e| e.to_string())?;
        ensure(eff.lambda_max() <= voigt.lambda_max() + 1e-12, || {
            format!(
                "res {res}: lambda_max {} exceeds arithmetic-mean bound {}",
                eff.lambda_max(),
                voigt.lambda_max()
            )
        })?;
        // residuals of the solved correctors
        for (q, theta) in set.components.iter().enumerate() {
            let r = corrector_residual(&cell, &tf, Label::Cyto, theta, q);
            ensure(r < 1e-8, || format!("res {res}: corrector {q} residual {r:.3e}"))?;
        }
        if res == 32 {
            // minimum-energy characterization: the corrector energy
            // (= diagonal effective entry) is below every random
            // periodic zero-mean trial field's energy
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let n_nodes = GridShape::new(cell.resolution()).len();
            for q in 0..2 {
                let e_min = trial_energy(&cell, &tf, Label::Cyto, set.components[q].data(), q);
                for trial in 0..100 {
                    let psi: Vec<f64> =
                        (0..n_nodes).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let e = trial_energy(&cell, &tf, Label::Cyto, &psi, q);
                    ensure(e_min <= e + 1e-10, || {
                        format!("trial {trial} (axis {q}): energy {e} below corrector {e_min}")
                    })?;
                }
            }
        }
        effs.push(eff);
    }
    // isotropy and the frozen values
    let c: Vec<f64> = effs.iter().map(|e| e.get(0, 0)).collect();
    for (i, e) in effs.iter().enumerate() {
        ensure((e.get(0, 0) - e.get(1, 1)).abs() < 1e-10 && e.get(0, 1).abs() < 1e-10, || {
            format!("level {i}: tensor not isotropic: {:?}", e.entries())
        })?;
        ensure(c[i] > 0.5 && c[i] < 0.75, || format!("level {i}: c = {} outside (0.5, 0.75)", c[i]))?;
    }
    // Cauchy convergence in resolution, order >= 1
    let (d1, d2) = ((c[0] - c[1]).abs(), (c[1] - c[2]).abs());
    let order = (d1 / d2).log2();
    ensure(order >= 1.0, || format!("inter-resolution order {order:.3} < 1"))?;
    // frozen regression value at res 128 and the extrapolated constant
    let frozen = 0.577606124136491;
    ensure((c[2] - frozen).abs() < 1e-9, || {
        format!("res-128 value {} drifted from frozen {frozen}", c[2])
    })?;
    let rate = d1 / d2;
    let extrapolated = c[2] + (c[2] - c[1]) / (rate - 1.0);
    let limit = 0.577350261725530; // ~ 1/sqrt(3)
    ensure((extrapolated - limit).abs() < 3e-4, || {
        format!("extrapolated constant {extrapolated} vs {limit}")
    })
}

// ---------------------------------------------------------------- 5

/// Unfolding calculus: algebraic identities on random fields over a
/// multi-cell tiling, and the two-scale separation smoke test.
fn criterion_unfolding() -> Result<(), String> {
    let meso = build_standard_cell(CellKind::Meso, 2, InclusionShape::Square, 0.5, 8)
        .map_err(|e| e.to_string())?;
    let micro = build_standard_cell(CellKind::Micro, 2, InclusionShape::Square, 0.5, 4)
        .map_err(|e| e.to_string())?;
    let spec = TiledDomainSpec::new(&[1.0, 1.0], 0.5, 0.25, meso.clone(), micro.clone())
        .map_err(|e| e.to_string())?;
    let grid = tile_microdomain(&spec).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = grid.shape().len();
    let u: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let report =
        unfolding::check_identities(&grid, &u, &v, &[1.0, 1.0]).map_err(|e| e.to_string())?;
    for row in &report {
        ensure(row.residual <= 1e-12, || {
            format!("identity {} residual {:.3e}", row.identity, row.residual)
        })?;
    }

    // two-scale separation: for phi(x) = g(x) Phi(x/eps) with Phi
    // cell-periodic, the unfolded field approaches g(cell center) Phi(y)
    // at rate O(eps)
    let g = |x: &[f64]| (2.0 * PI * x[0]).sin() + 0.5 * (2.0 * PI * x[1]).cos();
    let phi = |y: &[f64]| (2.0 * PI * y[0]).cos() * (2.0 * PI * y[1]).sin();
    let mut errs = Vec::new();
    for &eps in &[0.5, 0.25, 0.125] {
        let spec = TiledDomainSpec::new(&[1.0, 1.0], eps, eps, meso.clone(), micro.clone())
            .map_err(|e| e.to_string())?;
        let grid = tile_microdomain(&spec).map_err(|e| e.to_string())?;
        let field: Vec<f64> = (0..grid.shape().len())
            .map(|i| {
                let mut coords = vec![0usize; 2];
                grid.shape().decode(i, &mut coords);
                let x = grid.voxel_center(&coords);
                let y: Vec<f64> = x.iter().map(|&c| (c / eps).fract()).collect();
                g(&x) * phi(&y)
            })
            .collect();
        let uf = unfolding::unfold(&grid, &field).map_err(|e| e.to_string())?;
        let nloc = grid.local().dims()[0] as f64;
        let mut max_err = 0.0f64;
        grid.cells().for_each(|ci, cc| {
            let xc: Vec<f64> = cc.iter().map(|&k| (k as f64 + 0.5) * eps).collect();
            grid.local().for_each(|li, lc| {
                let y: Vec<f64> = lc.iter().map(|&l| (l as f64 + 0.5) / nloc).collect();
                let expect = g(&xc) * phi(&y);
                max_err = max_err.max((uf.at(ci, li) - expect).abs());
            });
        });
        errs.push(max_err);
    }
    ensure(errs[1] < errs[0] && errs[2] < errs[1], || {
        format!("two-scale errors not decreasing: {errs:?}")
    })
}

// ---------------------------------------------------------------- 6

fn mms_error(n: usize, dt: f64, t_end: f64, check_gauge: bool) -> Result<f64, String> {
    let grid = MacroGrid::new(&[n, n], &[1.0, 1.0]).map_err(|e| e.to_string())?;
    let p = FhnParams::standard();
    let system = MacroSystem::new(&grid, SpdTensor::identity(2), SpdTensor::identity(2), 1.0, p)
        .map_err(|e| e.to_string())?;
    let nn = grid.n_nodes();
    let coords: Vec<Vec<f64>> = (0..nn).map(|i| grid.node_coords(i)).collect();
    let v0: Vec<f64> = coords.iter().map(|x| (PI * x[0]).cos()).collect();
    let w0: Vec<f64> = v0.iter().map(|v| -v).collect();
    let mut state = BidomainState::new(&grid, &v0, &w0).map_err(|e| e.to_string())?;
    let opts = StepOptions::default();
    let n_steps = (t_end / dt).round() as usize;
    let mut i_app = vec![0.0; nn];
    for k in 0..n_steps {
        let t = k as f64 * dt;
        let et = (-t).exp();
        for i in 0..nn {
            let v = (PI * coords[i][0]).cos() * et;
            i_app[i] = -v + i_ion(v, -v, &p) + 0.5 * PI * PI * v;
        }
        let diag = system.step(&mut state, dt, &i_app, &opts).map_err(|e| e.to_string())?;
        if check_gauge && diag.mean_ue.abs() > 1e-10 {
            return Err(format!("gauge drift |mean u_e| = {:.3e} at t = {}", diag.mean_ue, diag.t));
        }
    }
    let et = (-t_end).exp();
    let v_ex: Vec<f64> = coords.iter().map(|x| (PI * x[0]).cos() * et).collect();
    let ue_ex: Vec<f64> = v_ex.iter().map(|v| -0.5 * v).collect();
    Ok(system
        .relative_l2_error(&state.v, &v_ex)
        .max(system.relative_l2_error(&state.u_e, &ue_ex)))
}

/// Macro solver: exact zero equilibrium, the uniform-state ODE oracle,
/// manufactured-solution convergence in dt and in h, and gauge
/// preservation at every step.
fn criterion_macro_solver() -> Result<(), String> {
    let t0 = Instant::now();
    // zero data is an exact fixed point over many steps
    let grid = MacroGrid::new(&[8, 8], &[1.0, 1.0]).map_err(|e| e.to_string())?;
    let p = FhnParams::standard();
    let system = MacroSystem::new(&grid, SpdTensor::identity(2), SpdTensor::identity(2), 1.0, p)
        .map_err(|e| e.to_string())?;
    let nn = grid.n_nodes();
    let mut state =
        BidomainState::new(&grid, &vec![0.0; nn], &vec![0.0; nn]).map_err(|e| e.to_string())?;
    let zero_stim = Stimulus::None.sample(&grid, 0.0);
    for _ in 0..1000 {
        system
            .step(&mut state, 1e-3, &zero_stim, &StepOptions::default())
            .map_err(|e| e.to_string())?;
    }
    ensure(
        state.v.iter().chain(&state.w).chain(&state.u_e).all(|&x| x == 0.0),
        || "zero state not preserved exactly".to_string(),
    )?;

    // spatially uniform data follows the FHN ODE
    let v_init = 0.4;
    let w_init = 0.1;
    let mut state = BidomainState::new(&grid, &vec![v_init; nn], &vec![w_init; nn])
        .map_err(|e| e.to_string())?;
    let dt = 1e-3;
    for _ in 0..1000 {
        system
            .step(&mut state, dt, &zero_stim, &StepOptions::default())
            .map_err(|e| e.to_string())?;
    }
    // reference: RK4 on the 2-variable ODE with a 10x finer step
    let (mut v_ref, mut w_ref) = (v_init, w_init);
    let fine = dt / 10.0;
    for _ in 0..10_000 {
        let f = |v: f64, w: f64| {
            (-i_ion(v, w, &p), triscale::ionic::h_gate(v, w, &p))
        };
        let (k1v, k1w) = f(v_ref, w_ref);
        let (k2v, k2w) = f(v_ref + 0.5 * fine * k1v, w_ref + 0.5 * fine * k1w);
        let (k3v, k3w) = f(v_ref + 0.5 * fine * k2v, w_ref + 0.5 * fine * k2w);
        let (k4v, k4w) = f(v_ref + fine * k3v, w_ref + fine * k3w);
        v_ref += fine / 6.0 * (k1v + 2.0 * k2v + 2.0 * k3v + k4v);
        w_ref += fine / 6.0 * (k1w + 2.0 * k2w + 2.0 * k3w + k4w);
    }
    let dv = state.v.iter().map(|v| (v - v_ref).abs()).fold(0.0f64, f64::max);
    let dw = state.w.iter().map(|w| (w - w_ref).abs()).fold(0.0f64, f64::max);
    ensure(dv < 1e-6 && dw < 1e-6, || format!("ODE oracle gap dv {dv:.3e}, dw {dw:.3e}"))?;

    // manufactured solution: first order in dt at fixed fine h
    let e_dt: Vec<f64> = [0.02, 0.01, 0.005]
        .iter()
        .map(|&dt| mms_error(64, dt, 0.5, true))
        .collect::<Result<_, _>>()?;
    let p1 = (e_dt[0] / e_dt[1]).log2();
    let p2 = (e_dt[1] / e_dt[2]).log2();
    ensure(p1 >= 0.9 && p2 >= 0.9, || {
        format!("dt orders {p1:.3}, {p2:.3} below 0.9 (errors {e_dt:?})")
    })?;

    // second order in h with dt ~ h^2
    let e_h: Vec<f64> = [8usize, 16, 32]
        .iter()
        .map(|&n| {
            let h = 1.0 / n as f64;
            mms_error(n, 0.5 * h * h, 0.25, true)
        })
        .collect::<Result<_, _>>()?;
    let q1 = (e_h[0] / e_h[1]).log2();
    let q2 = (e_h[1] / e_h[2]).log2();
    ensure(q1 >= 1.9 && q2 >= 1.9, || {
        format!("h orders {q1:.3}, {q2:.3} below 1.9 (errors {e_h:?})")
    })?;
    let dt = t0.elapsed();
    ensure(dt.as_secs_f64() < 60.0, || format!("runtime {dt:?} exceeds 60 s"))
}

// ---------------------------------------------------------------- 7, 8

fn canonical_study() -> Result<StudyConfig, String> {
    Ok(StudyConfig {
        meso: build_standard_cell(CellKind::Meso, 2, InclusionShape::Channel { axis: 0 }, 0.5, 16)
            .map_err(|e| e.to_string())?,
        micro: build_standard_cell(CellKind::Micro, 2, InclusionShape::Square, 0.5, 4)
            .map_err(|e| e.to_string())?,
        eps_list: vec![0.5, 0.25, 0.125],
        dt: 2e-3,
        t_end: 0.3,
        sample_every: 25,
        params: FhnParams::standard(),
        // slab stimulus: constant transverse to the channel, so the
        // transversally non-percolating geometry stays well posed
        stim_center: vec![0.3],
        stim_radius: 0.2,
        stim_amplitude: 10.0,
        stim_window: (0.0, 0.05),
        macro_elems: 64,
        effective_scale: 1.0,
        delta_ratio: 4,
    })
}

/// Homogenization convergence: cell-averaged unfolded resolved fields
/// approach the homogenized solution monotonically in ε; doubling the
/// effective intracellular tensor (negative control) breaks the
/// decrease. Also returns the rows for the a-priori-bound criterion.
fn criterion_convergence(
    rows_out: &mut Vec<triscale::dns::StudyRow>,
) -> Result<(), String> {
    let t0 = Instant::now();
    let mut cfg = canonical_study()?;
    let rows = convergence_study(&cfg).map_err(|e| e.to_string())?;
    for r in &rows {
        println!(
            "  eps = {:7.4}: err = {:.5} (err_ue = {:.5}, err_v = {:.5})",
            r.eps, r.err_combined, r.err_ue, r.err_v
        );
    }
    ensure(
        rows[1].err_combined < rows[0].err_combined
            && rows[2].err_combined < rows[1].err_combined,
        || {
            format!(
                "error not decreasing: {:?}",
                rows.iter().map(|r| r.err_combined).collect::<Vec<_>>()
            )
        },
    )?;

    // negative control: a doubled intracellular tensor must not show the
    // same clean decrease
    cfg.effective_scale = 2.0;
    let control = convergence_study(&cfg).map_err(|e| e.to_string())?;
    for r in &control {
        println!(
            "  control eps = {:7.4}: err = {:.5} (err_ue = {:.5}, err_v = {:.5})",
            r.eps, r.err_combined, r.err_ue, r.err_v
        );
    }
    // the wrong tensor must not converge: either the decrease breaks
    // outright, or the error plateaus well above the true one
    let control_decreases = control[1].err_combined < control[0].err_combined
        && control[2].err_combined < control[1].err_combined;
    ensure(
        !control_decreases || control[2].err_combined > 3.0 * rows[2].err_combined,
        || {
            format!(
                "negative control converges as cleanly as the true tensor: {:?} vs {:?}",
                control.iter().map(|r| r.err_combined).collect::<Vec<_>>(),
                rows.iter().map(|r| r.err_combined).collect::<Vec<_>>()
            )
        },
    )?;
    *rows_out = rows;
    let dt = t0.elapsed();
    ensure(dt.as_secs_f64() < 900.0, || format!("runtime {dt:?} exceeds 15 min"))
}

/// A-priori boundedness: the scaled norms monitored during the resolved
/// runs stay uniformly bounded as ε decreases.
fn criterion_apriori(rows: &[triscale::dns::StudyRow]) -> Result<(), String> {
    ensure(!rows.is_empty(), || "no study rows (criterion 7 failed upstream)".to_string())?;
    let bound = |f: &dyn Fn(&triscale::dns::StudyRow) -> f64, name: &str| -> Result<(), String> {
        let first = f(&rows[0]);
        for r in rows {
            ensure(f(r) <= 2.0 * first + 1e-12, || {
                format!("{name} grows with eps: {} at eps = {} vs {first} at eps = {}", f(r), r.eps, rows[0].eps)
            })?;
        }
        Ok(())
    };
    bound(&|r| r.max_eps_norm_v, "sqrt(eps)-scaled L2 of v")?;
    bound(&|r| r.max_eps_norm_w, "sqrt(eps)-scaled L2 of w")?;
    bound(&|r| r.max_eps_norm_v4, "eps^(1/4)-scaled L4 of v")?;
    bound(&|r| r.max_h1_ui, "H1 seminorm of u_i")?;
    bound(&|r| r.max_h1_ue, "H1 seminorm of u_e")
}

// ---------------------------------------------------------------- 9

/// Ionic assumption checks: the FHN cubic satisfies the structural
/// assumptions with growth exponent r = 4 and fails with r = 3; the
/// parameter constructor rejects out-of-range values.
fn criterion_ionic() -> Result<(), String> {
    let p = FhnParams::standard();
    let report = validate_assumptions(&p, 4.0, 10.0, 400).map_err(|e| e.to_string())?;
    ensure(report.alpha1 > 0.0 && report.c_monotone >= 0.0, || {
        format!("degenerate report: alpha1 = {}, c = {}", report.alpha1, report.c_monotone)
    })?;
    ensure(report.alpha4.is_some() && report.alpha5.is_some(), || {
        "coercivity constants not found for the standard parameters".to_string()
    })?;
    match validate_assumptions(&p, 3.0, 10.0, 400) {
        Err(Error::AssumptionViolated { .. }) => {}
        Err(e) => return Err(format!("r = 3 failed with the wrong error: {e}")),
        Ok(_) => return Err("r = 3 accepted; the cubic growth check is broken".to_string()),
    }
    ensure(FhnParams::new(0.7, 0.3, 0.0, 0.25).is_err(), || {
        "lambda = 0 accepted".to_string()
    })?;
    ensure(FhnParams::new(0.7, 0.3, 1.0, 0.25).is_err(), || {
        "lambda > 0 accepted".to_string()
    })?;
    ensure(FhnParams::new(0.7, 0.3, -1.0, 0.0).is_err(), || "theta = 0 accepted".to_string())?;
    ensure(FhnParams::new(0.7, 0.3, -1.0, 1.0).is_err(), || "theta = 1 accepted".to_string())?;
    ensure(FhnParams::new(-0.1, 0.3, -1.0, 0.25).is_err(), || "a < 0 accepted".to_string())
}

// ---------------------------------------------------------------- 10

/// With no microscopic holes the resolved dynamics are independent of δ:
/// runs at δ = ε and δ = ε/2 produce bit-identical states.
fn criterion_delta_independence() -> Result<(), String> {
    let meso = build_standard_cell(CellKind::Meso, 2, InclusionShape::Square, 0.5, 8)
        .map_err(|e| e.to_string())?;
    let micro = build_standard_cell(CellKind::Micro, 2, InclusionShape::None, 0.0, 4)
        .map_err(|e| e.to_string())?;
    let stim = DnsStimulus::Pulse {
        center: vec![0.4, 0.6],
        radius: 0.3,
        amplitude: 5.0,
        t_on: 0.0,
        t_off: 0.02,
    };
    let mut states = Vec::new();
    for &ratio in &[1.0f64, 2.0] {
        let eps = 0.5;
        let spec = TiledDomainSpec::new(&[1.0, 1.0], eps, eps / ratio, meso.clone(), micro.clone())
            .map_err(|e| e.to_string())?;
        let grid = tile_microdomain(&spec).map_err(|e| e.to_string())?;
        let dns = DnsSystem::new(
            &grid,
            TensorField::uniform(grid.shape().clone(), SpdTensor::identity(2)),
            TensorField::uniform(grid.shape().clone(), SpdTensor::identity(2)),
            FhnParams::standard(),
        )
        .map_err(|e| e.to_string())?;
        let mut state = dns.initial_state(&|_| 0.0, &|_| 0.0);
        for _ in 0..20 {
            dns.step(&mut state, 1e-3, &stim, &Default::default())
                .map_err(|e| e.to_string())?;
        }
        states.push(state);
    }
    let (a, b) = (&states[0], &states[1]);
    ensure(a.v == b.v && a.w == b.w && a.u_i == b.u_i && a.u_e == b.u_e, || {
        "states differ between delta = eps and delta = eps/2".to_string()
    })
}

// ----------------------------------------------------------------

#[test]
fn acceptance() {
    let mut h = Harness::new();
    h.report(1, "laminate oracle", criterion_laminate());
    h.report(2, "trivial collapse", criterion_trivial_collapse());
    h.report(3, "double-form consistency", criterion_double_form());
    h.report(4, "structural properties", criterion_structure());
    h.report(5, "unfolding identities", criterion_unfolding());
    h.report(6, "macro solver verification", criterion_macro_solver());
    let mut rows = Vec::new();
    h.report(7, "homogenization convergence", criterion_convergence(&mut rows));
    h.report(8, "a-priori boundedness", criterion_apriori(&rows));
    h.report(9, "ionic assumptions", criterion_ionic());
    h.report(10, "delta independence without holes", criterion_delta_independence());
    assert!(h.failures.is_empty(), "failed criteria:\n{}", h.failures.join("\n"));
}
