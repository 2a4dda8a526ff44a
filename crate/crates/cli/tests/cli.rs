use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn triscale(dir: &Path, config: &str, args: &[&str]) -> Output {
    let cfg_path = dir.join("run.toml");
    fs::write(&cfg_path, config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_triscale"))
        .arg("--config")
        .arg(&cfg_path)
        .arg("--out")
        .arg(dir.join("out"))
        .args(args)
        .output()
        .unwrap()
}

const GEOMETRY: &str = r#"
[geometry]
dim = 2
meso = { shape = "channel", axis = 0, fraction = 0.5, resolution = 8 }
micro = { shape = "square", fraction = 0.5, resolution = 4 }

[scales]
epsilon = 0.5
delta = 0.25
"#;

#[test]
fn homogenize_writes_tensor_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = triscale(dir.path(), GEOMETRY, &["homogenize"]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/tensors/tensors.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "level,p,q,value");
    // three tensors, 2x2 each
    assert_eq!(lines.len(), 1 + 3 * 4);
    for line in &lines[1..] {
        let value: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert!(value.is_finite());
    }
    let report = fs::read_to_string(dir.path().join("out/report.txt")).unwrap();
    assert!(report.contains("mu_m = "));
    assert!(report.contains("[homogenize]"));
}

#[test]
fn invalid_scales_are_rejected_with_key_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = GEOMETRY.replace("delta = 0.25", "delta = 0.75");
    let out = triscale(dir.path(), &cfg, &["homogenize"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("scales.delta"), "stderr: {err}");
}

#[test]
fn unknown_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{GEOMETRY}\n[simulate]\nelems = 8\ndt = 0.001\nt_end = 0.002\ntensors = \"homogenize\"\nbogus_key = 1\nstimulus = {{ kind = \"none\" }}\n");
    let out = triscale(dir.path(), &cfg, &["simulate"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("bogus_key"), "stderr: {err}");
}

#[test]
fn simulate_is_deterministic() {
    let cfg = format!(
        "{GEOMETRY}\n{}",
        r#"
[simulate]
elems = 8
dt = 0.001
t_end = 0.005
snapshot_every = 5
tensors = "inline"
tensor_i = [[1.0, 0.0], [0.0, 1.0]]
tensor_e = [[1.0, 0.0], [0.0, 1.0]]
v0 = 0.2
stimulus = { kind = "uniform", amplitude = 1.0 }
"#
    );
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let out_a = triscale(dir_a.path(), &cfg, &["simulate"]);
    assert!(out_a.status.success(), "stderr: {}", String::from_utf8_lossy(&out_a.stderr));
    let out_b = triscale(dir_b.path(), &cfg, &["simulate"]);
    assert!(out_b.status.success());
    let a = fs::read(dir_a.path().join("out/macro/diagnostics.csv")).unwrap();
    let b = fs::read(dir_b.path().join("out/macro/diagnostics.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
    // snapshots present in VTK format
    let vtk = fs::read_to_string(dir_a.path().join("out/macro/v_0001.vtk")).unwrap();
    assert!(vtk.starts_with("# vtk DataFile"));
}

#[test]
fn dns_writes_scaled_norms() {
    let cfg = format!(
        "{GEOMETRY}\n{}",
        r#"
[dns]
dt = 0.001
t_end = 0.003
stimulus = { kind = "uniform", amplitude = 1.0, t_on = 0.0, t_off = 0.01 }
"#
    );
    let dir = tempfile::tempdir().unwrap();
    let out = triscale(dir.path(), &cfg, &["dns"]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/dns/diagnostics.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert!(lines[0].starts_with("t,eps_norm_v,eps_norm_w"));
    assert_eq!(lines.len(), 1 + 3);
}

#[test]
fn verify_unfolding_reports_tiny_residuals() {
    let dir = tempfile::tempdir().unwrap();
    let out = triscale(dir.path(), GEOMETRY, &["verify-unfolding"]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8_lossy(&out.stdout);
    let mut n = 0;
    for line in text.lines().skip(1) {
        let (name, value) = line.split_once(',').unwrap();
        assert!(!name.is_empty());
        let r: f64 = value.parse().unwrap();
        assert!(r < 1e-12, "{name} residual {r}");
        n += 1;
    }
    assert!(n >= 5);
}

#[test]
fn validate_ionic_honours_growth_exponent() {
    let ionic_ok = r#"
[ionic]
a = 0.7
b = 0.3
lambda = -1.0
theta = 0.25
validate = { r = 4.0 }
"#;
    let dir = tempfile::tempdir().unwrap();
    let out = triscale(dir.path(), ionic_ok, &["validate-ionic"]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("alpha1 = "));

    let dir = tempfile::tempdir().unwrap();
    let out = triscale(dir.path(), &ionic_ok.replace("r = 4.0", "r = 3.0"), &["validate-ionic"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("assumption"));
}

#[test]
fn converge_writes_error_table() {
    let cfg = format!(
        "{GEOMETRY}\n{}",
        r#"
[converge]
eps_list = [0.5, 0.25]
dt = 0.002
t_end = 0.02
sample_every = 5
macro_elems = 16
stimulus = { kind = "pulse", center = [0.3], radius = 0.2, amplitude = 10.0, t_on = 0.0, t_off = 0.01 }
"#
    );
    let dir = tempfile::tempdir().unwrap();
    let out = triscale(dir.path(), &cfg, &["converge"]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(dir.path().join("out/converge/errors.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "eps,err_ue,err_v,err_combined");
    assert_eq!(lines.len(), 3);
}

#[test]
fn cell_file_round_trip() {
    use triscale::geometry::{build_standard_cell, CellKind, InclusionShape, UnitCellGeometry};
    let dir = tempfile::tempdir().unwrap();
    let cell =
        build_standard_cell(CellKind::Micro, 2, InclusionShape::Square, 0.5, 4).unwrap();
    let path = dir.path().join("cell.txt");
    cell.save(&path).unwrap();
    let loaded = UnitCellGeometry::load(&path).unwrap();
    assert_eq!(loaded.labels(), cell.labels());
    let cfg = GEOMETRY.replace(
        "micro = { shape = \"square\", fraction = 0.5, resolution = 4 }",
        &format!("micro = {{ file = \"{}\" }}", path.display()),
    );
    let out = triscale(dir.path(), &cfg, &["homogenize"]);
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}
