//! One function per pipeline stage. Every stage appends a section to
//! `report.txt` and writes its machine-readable artifacts under the
//! output directory.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use triscale::cell::{
    effective_tensor, isotropic_field, solve_correctors, two_level_homogenize, CellSolveOptions,
    MicroTensor,
};
use triscale::dns::{
    convergence_study, DnsStepOptions, DnsSystem, StudyConfig,
};
use triscale::geometry::{tile_microdomain, CellKind, Label, MacroTag, TiledDomainSpec};
use triscale::macro_solver::{BidomainState, MacroGrid, MacroSystem, StepOptions};
use triscale::tensor::{SpdTensor, TensorField};
use triscale::unfolding;

use crate::config::{RunConfig, SimulateConfig};

/// 17 significant digits: enough to round-trip an f64.
fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

pub struct Report {
    path: PathBuf,
    text: String,
}

impl Report {
    pub fn new(out: &Path) -> Self {
        Self { path: out.join("report.txt"), text: String::new() }
    }

    pub fn section(&mut self, title: &str) {
        let _ = writeln!(self.text, "[{title}]");
    }

    pub fn line(&mut self, s: impl AsRef<str>) {
        let _ = writeln!(self.text, "{}", s.as_ref());
    }

    pub fn tensor(&mut self, name: &str, t: &SpdTensor) {
        let d = t.dim();
        for p in 0..d {
            let row: Vec<String> = (0..d).map(|q| fmt(t.get(p, q))).collect();
            self.line(format!("{name}[{p}] = {}", row.join(" ")));
        }
    }

    pub fn finish(self) -> anyhow::Result<()> {
        use std::io::Write;
        let mut f = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&self.path)
            .with_context(|| format!("writing {}", self.path.display()))?;
        f.write_all(self.text.as_bytes())?;
        Ok(())
    }
}

fn write_csv(path: &Path, header: &str, rows: &[Vec<String>]) -> anyhow::Result<()> {
    let mut text = String::from(header);
    text.push('\n');
    for row in rows {
        text.push_str(&row.join(","));
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

struct EffectiveTensors {
    level1: SpdTensor,
    intra: SpdTensor,
    extra: SpdTensor,
    mu_m: f64,
    micro_residual: f64,
    meso_residual: f64,
    extra_residual: f64,
}

fn run_homogenization(cfg: &RunConfig) -> anyhow::Result<EffectiveTensors> {
    let g = cfg.geometry()?;
    let micro = g.micro.build(CellKind::Micro, g.dim, "geometry.micro")?;
    let meso = g.meso.build(CellKind::Meso, g.dim, "geometry.meso")?;
    let opts = CellSolveOptions::default();
    let micro_field = isotropic_field(&micro, 1.0);
    let two = two_level_homogenize(&micro, MicroTensor::Uniform(&micro_field), &meso, &opts)?;
    let meso_field = isotropic_field(&meso, 1.0);
    let cors_e = solve_correctors(&meso, &meso_field, Label::Extra, &opts)?;
    let extra = effective_tensor(&meso, &meso_field, Label::Extra, &cors_e)?;
    let max_res = |r: &[f64]| r.iter().cloned().fold(0.0f64, f64::max);
    Ok(EffectiveTensors {
        level1: two.level1.at(0).clone(),
        intra: two.level2,
        extra,
        mu_m: meso.interface_per_volume(),
        micro_residual: max_res(&two.micro_correctors.residuals),
        meso_residual: max_res(&two.meso_correctors.residuals),
        extra_residual: max_res(&cors_e.residuals),
    })
}

pub fn homogenize(cfg: &RunConfig, out: &Path, report: &mut Report) -> anyhow::Result<()> {
    let g = cfg.geometry()?;
    let micro = g.micro.build(CellKind::Micro, g.dim, "geometry.micro")?;
    let meso = g.meso.build(CellKind::Meso, g.dim, "geometry.meso")?;
    let eff = run_homogenization(cfg)?;

    let dir = out.join("tensors");
    fs::create_dir_all(&dir)?;
    let mut rows = Vec::new();
    for (level, t) in [
        ("intra_level1", &eff.level1),
        ("intra_level2", &eff.intra),
        ("extra", &eff.extra),
    ] {
        for p in 0..t.dim() {
            for q in 0..t.dim() {
                rows.push(vec![
                    level.to_string(),
                    p.to_string(),
                    q.to_string(),
                    fmt(t.get(p, q)),
                ]);
            }
        }
    }
    write_csv(&dir.join("tensors.csv"), "level,p,q,value", &rows)?;

    report.section("homogenize");
    report.tensor("intra_level1", &eff.level1);
    report.tensor("intra_level2", &eff.intra);
    report.tensor("extra", &eff.extra);
    report.line(format!("micro_cytosol_fraction = {}", fmt(micro.region_fraction(Label::Cyto))));
    report.line(format!("meso_intra_fraction = {}", fmt(meso.region_fraction(Label::Intra))));
    report.line(format!("meso_extra_fraction = {}", fmt(meso.region_fraction(Label::Extra))));
    report.line(format!("mu_m = {}", fmt(eff.mu_m)));
    report.line(format!("micro_corrector_residual = {}", fmt(eff.micro_residual)));
    report.line(format!("meso_corrector_residual = {}", fmt(eff.meso_residual)));
    report.line(format!("extra_corrector_residual = {}", fmt(eff.extra_residual)));
    println!("tensors written to {}", dir.join("tensors.csv").display());
    Ok(())
}

fn inline_tensor(rows: &[Vec<f64>], key: &str) -> anyhow::Result<SpdTensor> {
    let d = rows.len();
    let mut entries = Vec::with_capacity(d * d);
    for (i, r) in rows.iter().enumerate() {
        if r.len() != d {
            anyhow::bail!("{key}: row {i} has {} entries, expected {d}", r.len());
        }
        entries.extend_from_slice(r);
    }
    SpdTensor::new(d, entries).map_err(|e| anyhow::anyhow!("{key}: {e}"))
}

fn simulate_tensors(
    cfg: &RunConfig,
    s: &SimulateConfig,
) -> anyhow::Result<(SpdTensor, SpdTensor, f64)> {
    if s.tensors == "inline" {
        let ti = inline_tensor(s.tensor_i.as_ref().unwrap(), "simulate.tensor_i")?;
        let te = inline_tensor(s.tensor_e.as_ref().unwrap(), "simulate.tensor_e")?;
        let mu = match (s.mu_m, &cfg.geometry) {
            (Some(mu), _) => mu,
            (None, Some(g)) => {
                g.meso.build(CellKind::Meso, g.dim, "geometry.meso")?.interface_per_volume()
            }
            (None, None) => anyhow::bail!(
                "simulate.mu_m: required with inline tensors and no [geometry] section"
            ),
        };
        Ok((ti, te, mu))
    } else {
        let eff = run_homogenization(cfg)?;
        Ok((eff.intra, eff.extra, s.mu_m.unwrap_or(eff.mu_m)))
    }
}

/// Corner-average a nodal macro field onto elements for VTK output.
fn elem_average(grid: &MacroGrid, u: &[f64]) -> Vec<f64> {
    let mesh = grid.mesh();
    let d = mesh.dim();
    let nc = 1usize << d;
    let mut corners = [0usize; 8];
    let mut out = vec![0.0; mesh.elems().len()];
    mesh.elems().for_each(|e, coords| {
        mesh.corner_nodes(coords, &mut corners[..nc]);
        out[e] = corners[..nc].iter().map(|&c| u[c]).sum::<f64>() / nc as f64;
    });
    out
}

pub fn simulate(cfg: &RunConfig, out: &Path, report: &mut Report) -> anyhow::Result<()> {
    let s = cfg
        .simulate
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("missing [simulate] section"))?;
    let dim = cfg.geometry.as_ref().map(|g| g.dim).unwrap_or(2);
    let lengths = s.lengths.clone().unwrap_or_else(|| vec![1.0; dim]);
    let grid = MacroGrid::new(&vec![s.elems; lengths.len()], &lengths)?;
    let (tensor_i, tensor_e, mu_m) = simulate_tensors(cfg, s)?;
    let params = cfg.ionic_params()?;
    let system = MacroSystem::new(&grid, tensor_i, tensor_e, mu_m, params)?;

    let nn = grid.n_nodes();
    let mut v0 = vec![s.v0; nn];
    if let Some(b) = &s.v0_bump {
        for i in 0..nn {
            let x = grid.node_coords(i);
            let r2: f64 = x.iter().zip(&b.center).map(|(a, c)| (a - c) * (a - c)).sum();
            if r2 <= b.radius * b.radius {
                v0[i] += b.amplitude;
            }
        }
    }
    let mut state = BidomainState::new(&grid, &v0, &vec![s.w0; nn])?;
    let stimulus = s.stimulus.to_macro();
    let mut step_opts = StepOptions::default();
    if let Some(c) = s.v_ceiling {
        step_opts.v_ceiling = c;
    }

    let dir = out.join("macro");
    fs::create_dir_all(&dir)?;
    let volume: f64 = lengths.iter().product();
    let spacing: Vec<f64> =
        lengths.iter().map(|l| l / s.elems as f64).collect();
    let n_steps = (s.t_end / s.dt).round() as usize;
    let mut rows = Vec::with_capacity(n_steps);
    let mut snap = 0usize;
    for k in 0..n_steps {
        let i_app = stimulus.sample(&grid, state.t);
        let diag = system.step(&mut state, s.dt, &i_app, &step_opts)?;
        rows.push(vec![
            fmt(diag.t),
            fmt(diag.norm_v),
            fmt(diag.norm_w),
            fmt(diag.mean_ue * volume),
            fmt(diag.min_v),
            fmt(diag.max_v),
            diag.cg_iterations.to_string(),
            fmt(diag.cg_residual),
        ]);
        if s.snapshot_every > 0 && (k + 1) % s.snapshot_every == 0 {
            snap += 1;
            for (name, field) in [("v", &state.v), ("u_e", &state.u_e), ("u_i", &state.u_i)] {
                triscale::vtk::write_scalar_field(
                    &dir.join(format!("{name}_{snap:04}.vtk")),
                    name,
                    grid.mesh().elems(),
                    &spacing,
                    &elem_average(&grid, field),
                )?;
            }
        }
    }
    write_csv(
        &dir.join("diagnostics.csv"),
        "t,norm_v,norm_w,int_ue,min_v,max_v,cg_iterations,cg_residual",
        &rows,
    )?;

    report.section("simulate");
    report.line(format!("steps = {n_steps}"));
    report.line(format!("snapshots = {snap}"));
    report.line(format!("final_norm_v = {}", fmt(rows.last().map(|r| r[1].parse().unwrap_or(0.0)).unwrap_or(0.0))));
    println!("diagnostics written to {}", dir.join("diagnostics.csv").display());
    Ok(())
}

fn tiled_grid(cfg: &RunConfig, lengths: &Option<Vec<f64>>) -> anyhow::Result<triscale::TiledGrid> {
    let g = cfg.geometry()?;
    let sc = cfg.scales()?;
    let meso = g.meso.build(CellKind::Meso, g.dim, "geometry.meso")?;
    let micro = g.micro.build(CellKind::Micro, g.dim, "geometry.micro")?;
    let lengths = lengths.clone().unwrap_or_else(|| vec![1.0; g.dim]);
    let spec = TiledDomainSpec::new(&lengths, sc.epsilon, sc.delta, meso, micro)?;
    Ok(tile_microdomain(&spec)?)
}

pub fn dns(cfg: &RunConfig, out: &Path, report: &mut Report) -> anyhow::Result<()> {
    let d = cfg.dns.as_ref().ok_or_else(|| anyhow::anyhow!("missing [dns] section"))?;
    let grid = tiled_grid(cfg, &d.lengths)?;
    let dim = grid.dim();
    let system = DnsSystem::new(
        &grid,
        TensorField::uniform(grid.shape().clone(), SpdTensor::identity(dim)),
        TensorField::uniform(grid.shape().clone(), SpdTensor::identity(dim)),
        cfg.ionic_params()?,
    )?;
    let mut state = system.initial_state(&|_| 0.0, &|_| 0.0);
    let stim = d.stimulus.to_dns();
    let dir = out.join("dns");
    fs::create_dir_all(&dir)?;
    let n_steps = (d.t_end / d.dt).round() as usize;
    let mut rows = Vec::with_capacity(n_steps);
    let mut snap = 0usize;
    for k in 0..n_steps {
        let diag = system.step(&mut state, d.dt, &stim, &DnsStepOptions::default())?;
        rows.push(vec![
            fmt(diag.t),
            fmt(diag.eps_norm_v),
            fmt(diag.eps_norm_w),
            fmt(diag.eps_norm_v4),
            fmt(diag.h1_ui),
            fmt(diag.h1_ue),
            fmt(diag.mean_ue),
            fmt(diag.min_v),
            fmt(diag.max_v),
            diag.cg_iterations.to_string(),
            fmt(diag.cg_residual),
        ]);
        if d.snapshot_every > 0 && (k + 1) % d.snapshot_every == 0 {
            snap += 1;
            for (name, tag, field) in [
                ("u_e", MacroTag::Extra, &state.u_e),
                ("u_i", MacroTag::IntraCyto, &state.u_i),
            ] {
                triscale::vtk::write_scalar_field(
                    &dir.join(format!("{name}_{snap:04}.vtk")),
                    name,
                    grid.shape(),
                    grid.spacing(),
                    &system.voxel_field(field, tag),
                )?;
            }
        }
    }
    write_csv(
        &dir.join("diagnostics.csv"),
        "t,eps_norm_v,eps_norm_w,eps_norm_v4,h1_ui,h1_ue,mean_ue,min_v,max_v,cg_iterations,cg_residual",
        &rows,
    )?;
    report.section("dns");
    report.line(format!("steps = {n_steps}"));
    report.line(format!("snapshots = {snap}"));
    report.line(format!("interface_facets = {}", grid.gamma_eps_facets().len()));
    println!("diagnostics written to {}", dir.join("diagnostics.csv").display());
    Ok(())
}

pub fn converge(cfg: &RunConfig, out: &Path, report: &mut Report) -> anyhow::Result<()> {
    let c = cfg
        .converge
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("missing [converge] section"))?;
    let g = cfg.geometry()?;
    let sc = cfg.scales()?;
    let meso = g.meso.build(CellKind::Meso, g.dim, "geometry.meso")?;
    let micro = g.micro.build(CellKind::Micro, g.dim, "geometry.micro")?;
    let stim = &c.stimulus;
    let study = StudyConfig {
        meso,
        micro,
        eps_list: c.eps_list.clone(),
        dt: c.dt,
        t_end: c.t_end,
        sample_every: c.sample_every,
        params: cfg.ionic_params()?,
        stim_center: stim.center.clone().unwrap_or_default(),
        stim_radius: stim.radius.unwrap_or(0.0),
        stim_amplitude: stim.amplitude.unwrap_or(0.0),
        stim_window: (stim.t_on.unwrap_or(0.0), stim.t_off.unwrap_or(0.0)),
        macro_elems: c.macro_elems,
        effective_scale: c.effective_scale,
        delta_ratio: (sc.epsilon / sc.delta).round() as usize,
    };
    let rows = convergence_study(&study)?;
    let dir = out.join("converge");
    fs::create_dir_all(&dir)?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![fmt(r.eps), fmt(r.err_ue), fmt(r.err_v), fmt(r.err_combined)])
        .collect();
    write_csv(&dir.join("errors.csv"), "eps,err_ue,err_v,err_combined", &csv_rows)?;
    report.section("converge");
    for r in &rows {
        report.line(format!(
            "eps = {} err = {} (err_ue = {}, err_v = {})",
            fmt(r.eps),
            fmt(r.err_combined),
            fmt(r.err_ue),
            fmt(r.err_v)
        ));
        println!(
            "eps = {:8.5}: err = {:.6} (err_ue = {:.6}, err_v = {:.6})",
            r.eps, r.err_combined, r.err_ue, r.err_v
        );
    }
    println!("error table written to {}", dir.join("errors.csv").display());
    Ok(())
}

pub fn verify_unfolding(cfg: &RunConfig, out: &Path, report: &mut Report) -> anyhow::Result<()> {
    let lengths = cfg.unfolding.as_ref().and_then(|u| u.lengths.clone());
    let grid = tiled_grid(cfg, &lengths)?;
    let lens = grid.macro_lengths().to_vec();
    // deterministic oscillatory test fields with no special symmetry
    let n = grid.shape().len();
    let field = |i: usize, phase: f64| -> f64 {
        let mut coords = vec![0usize; grid.dim()];
        grid.shape().decode(i, &mut coords);
        let x = grid.voxel_center(&coords);
        let mut v = phase;
        for (a, &c) in x.iter().enumerate() {
            v += ((a + 2) as f64 * 2.9 * c + phase).sin() * (1.7 * c).cos();
        }
        v
    };
    let u: Vec<f64> = (0..n).map(|i| field(i, 0.3)).collect();
    let v: Vec<f64> = (0..n).map(|i| field(i, 1.1)).collect();
    let residuals = unfolding::check_identities(&grid, &u, &v, &lens)?;
    println!("identity,residual");
    report.section("verify-unfolding");
    for r in &residuals {
        println!("{},{}", r.identity, fmt(r.residual));
        report.line(format!("{} = {}", r.identity, fmt(r.residual)));
    }
    let _ = out;
    Ok(())
}

pub fn validate_ionic(cfg: &RunConfig, out: &Path, report: &mut Report) -> anyhow::Result<()> {
    let params = cfg.ionic_params()?;
    let (r, box_half, samples) = match cfg.ionic.as_ref().and_then(|i| i.validate.as_ref()) {
        Some(v) => (v.r, v.box_half, v.samples),
        None => (4.0, 10.0, 400),
    };
    let rep = triscale::ionic::validate_assumptions(&params, r, box_half, samples)
        .map_err(|e| anyhow::anyhow!("ionic assumptions violated: {e}"))?;
    report.section("validate-ionic");
    let mut lines = vec![
        format!("r = {}", fmt(rep.r)),
        format!("alpha1 = {}", fmt(rep.alpha1)),
        format!("alpha2 = {}", fmt(rep.alpha2)),
        format!("alpha3 = {}", fmt(rep.alpha3)),
        format!("beta1 = {}", fmt(rep.beta1)),
        format!("beta2 = {}", fmt(rep.beta2)),
        format!("c_monotone = {}", fmt(rep.c_monotone)),
    ];
    match (rep.alpha4, rep.alpha5) {
        (Some(a4), Some(a5)) => {
            lines.push(format!("alpha4 = {}", fmt(a4)));
            lines.push(format!("alpha5 = {}", fmt(a5)));
        }
        _ => lines.push("coercivity pair (alpha4, alpha5): not found on the sample box".into()),
    }
    for l in &lines {
        println!("{l}");
        report.line(l);
    }
    let _ = out;
    Ok(())
}
