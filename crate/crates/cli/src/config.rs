//! TOML run configuration: parsing plus validation that reports the
//! offending key path in every error message.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use serde::Deserialize;
use triscale::geometry::{build_standard_cell, CellKind, InclusionShape, UnitCellGeometry};
use triscale::ionic::FhnParams;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: Option<GeometryConfig>,
    pub scales: Option<ScalesConfig>,
    pub ionic: Option<IonicConfig>,
    pub simulate: Option<SimulateConfig>,
    pub dns: Option<DnsConfig>,
    pub converge: Option<ConvergeConfig>,
    pub unfolding: Option<UnfoldingConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryConfig {
    pub dim: usize,
    pub meso: CellConfig,
    pub micro: CellConfig,
}

/// A reference cell: either a standard parametric shape or a cell file
/// (text format written by `UnitCellGeometry::save`).
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CellConfig {
    pub shape: Option<String>,
    pub axis: Option<usize>,
    pub fraction: Option<f64>,
    pub resolution: Option<usize>,
    pub file: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalesConfig {
    pub epsilon: f64,
    pub delta: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IonicConfig {
    pub a: f64,
    pub b: f64,
    pub lambda: f64,
    pub theta: f64,
    pub validate: Option<IonicValidateConfig>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IonicValidateConfig {
    /// Growth exponent r of the cubic bound.
    pub r: f64,
    /// Half-width of the sampling box [-box_half, box_half]^2.
    #[serde(default = "default_box_half")]
    pub box_half: f64,
    #[serde(default = "default_samples")]
    pub samples: usize,
}

fn default_box_half() -> f64 {
    10.0
}

fn default_samples() -> usize {
    400
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StimulusConfig {
    /// "none", "uniform" or "pulse".
    pub kind: String,
    pub amplitude: Option<f64>,
    /// Pulse center; fewer entries than the dimension give a slab.
    pub center: Option<Vec<f64>>,
    pub radius: Option<f64>,
    pub t_on: Option<f64>,
    pub t_off: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialBump {
    pub center: Vec<f64>,
    pub radius: f64,
    pub amplitude: f64,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    /// Elements per axis of the macroscopic grid.
    pub elems: usize,
    pub lengths: Option<Vec<f64>>,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub snapshot_every: usize,
    /// "homogenize" to use the effective tensors from the geometry
    /// sections, or "inline" with tensor_i / tensor_e matrices.
    pub tensors: String,
    pub tensor_i: Option<Vec<Vec<f64>>>,
    pub tensor_e: Option<Vec<Vec<f64>>>,
    /// Membrane area per unit volume; defaults to the meso cell's value.
    pub mu_m: Option<f64>,
    pub stimulus: StimulusConfig,
    #[serde(default)]
    pub v0: f64,
    #[serde(default)]
    pub w0: f64,
    pub v0_bump: Option<InitialBump>,
    pub v_ceiling: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DnsConfig {
    pub lengths: Option<Vec<f64>>,
    pub dt: f64,
    pub t_end: f64,
    #[serde(default)]
    pub snapshot_every: usize,
    pub stimulus: StimulusConfig,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergeConfig {
    pub eps_list: Vec<f64>,
    pub dt: f64,
    pub t_end: f64,
    pub sample_every: usize,
    pub macro_elems: usize,
    #[serde(default = "default_scale")]
    pub effective_scale: f64,
    pub stimulus: StimulusConfig,
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnfoldingConfig {
    pub lengths: Option<Vec<f64>>,
}

impl RunConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let cfg: RunConfig = toml::from_str(&text)
            .with_context(|| format!("parsing config {}", path.display()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> anyhow::Result<()> {
        if let Some(g) = &self.geometry {
            if g.dim < 1 || g.dim > 3 {
                bail!("geometry.dim: must be 1, 2 or 3, got {}", g.dim);
            }
            g.meso.validate("geometry.meso")?;
            g.micro.validate("geometry.micro")?;
        }
        if let Some(s) = &self.scales {
            if !(s.epsilon > 0.0 && s.epsilon <= 1.0) {
                bail!("scales.epsilon: must lie in (0, 1], got {}", s.epsilon);
            }
            if !(s.delta > 0.0) {
                bail!("scales.delta: must be positive, got {}", s.delta);
            }
            if s.delta > s.epsilon {
                bail!(
                    "scales.delta: delta = {} exceeds epsilon = {}",
                    s.delta,
                    s.epsilon
                );
            }
            let ratio = s.epsilon / s.delta;
            if (ratio - ratio.round()).abs() > 1e-9 {
                bail!("scales.delta: epsilon/delta = {ratio} is not an integer");
            }
        }
        if let Some(i) = &self.ionic {
            // surfaces the constructor message under the config key
            FhnParams::new(i.a, i.b, i.lambda, i.theta)
                .map_err(|e| anyhow::anyhow!("ionic: {e}"))?;
            if let Some(v) = &i.validate {
                if !(v.r > 1.0) {
                    bail!("ionic.validate.r: growth exponent must exceed 1, got {}", v.r);
                }
                if v.samples < 16 {
                    bail!("ionic.validate.samples: need at least 16, got {}", v.samples);
                }
            }
        }
        if let Some(s) = &self.simulate {
            if !(s.dt > 0.0) {
                bail!("simulate.dt: must be positive, got {}", s.dt);
            }
            if !(s.t_end > 0.0) {
                bail!("simulate.t_end: must be positive, got {}", s.t_end);
            }
            match s.tensors.as_str() {
                "homogenize" => {
                    if self.geometry.is_none() {
                        bail!("simulate.tensors: \"homogenize\" needs a [geometry] section");
                    }
                }
                "inline" => {
                    if s.tensor_i.is_none() || s.tensor_e.is_none() {
                        bail!(
                            "simulate.tensors: \"inline\" needs simulate.tensor_i and simulate.tensor_e"
                        );
                    }
                }
                other => bail!(
                    "simulate.tensors: expected \"homogenize\" or \"inline\", got \"{other}\""
                ),
            }
            s.stimulus.validate("simulate.stimulus")?;
        }
        if let Some(d) = &self.dns {
            if self.geometry.is_none() {
                bail!("dns: needs a [geometry] section");
            }
            if self.scales.is_none() {
                bail!("dns: needs a [scales] section");
            }
            if !(d.dt > 0.0) {
                bail!("dns.dt: must be positive, got {}", d.dt);
            }
            d.stimulus.validate("dns.stimulus")?;
        }
        if let Some(c) = &self.converge {
            if self.geometry.is_none() {
                bail!("converge: needs a [geometry] section");
            }
            if self.scales.is_none() {
                bail!("converge: needs a [scales] section (epsilon/delta fixes the ratio)");
            }
            if c.eps_list.is_empty() {
                bail!("converge.eps_list: must not be empty");
            }
            for (i, &e) in c.eps_list.iter().enumerate() {
                if !(e > 0.0 && e <= 1.0) {
                    bail!("converge.eps_list[{i}]: must lie in (0, 1], got {e}");
                }
            }
            if c.sample_every == 0 {
                bail!("converge.sample_every: must be >= 1");
            }
            c.stimulus.validate("converge.stimulus")?;
        }
        if self.unfolding.is_some() && (self.geometry.is_none() || self.scales.is_none()) {
            bail!("unfolding: needs [geometry] and [scales] sections");
        }
        Ok(())
    }

    pub fn ionic_params(&self) -> anyhow::Result<FhnParams> {
        match &self.ionic {
            Some(i) => FhnParams::new(i.a, i.b, i.lambda, i.theta)
                .map_err(|e| anyhow::anyhow!("ionic: {e}")),
            None => Ok(FhnParams::standard()),
        }
    }

    pub fn geometry(&self) -> anyhow::Result<&GeometryConfig> {
        self.geometry
            .as_ref()
            .ok_or_else(|| anyhow::anyhow!("missing [geometry] section"))
    }

    pub fn scales(&self) -> anyhow::Result<&ScalesConfig> {
        self.scales
            .as_ref()
            .ok_or_else(|| anyhow::anyhow!("missing [scales] section"))
    }
}

impl CellConfig {
    fn validate(&self, key: &str) -> anyhow::Result<()> {
        match (&self.file, &self.shape) {
            (Some(_), Some(_)) => bail!("{key}: give either `file` or `shape`, not both"),
            (None, None) => bail!("{key}: needs `file` or `shape`"),
            (Some(_), None) => Ok(()),
            (None, Some(shape)) => {
                parse_shape(shape, self.axis).map_err(|e| anyhow::anyhow!("{key}.shape: {e}"))?;
                if self.resolution.is_none() {
                    bail!("{key}.resolution: required with `shape`");
                }
                let frac = self.fraction.unwrap_or(0.0);
                if !(0.0..1.0).contains(&frac) {
                    bail!("{key}.fraction: must lie in [0, 1), got {frac}");
                }
                Ok(())
            }
        }
    }

    pub fn build(&self, kind: CellKind, dim: usize, key: &str) -> anyhow::Result<UnitCellGeometry> {
        if let Some(file) = &self.file {
            return UnitCellGeometry::load(file)
                .map_err(|e| anyhow::anyhow!("{key}.file: {e}"));
        }
        let shape = parse_shape(self.shape.as_deref().unwrap_or(""), self.axis)
            .map_err(|e| anyhow::anyhow!("{key}.shape: {e}"))?;
        build_standard_cell(
            kind,
            dim,
            shape,
            self.fraction.unwrap_or(0.0),
            self.resolution.unwrap_or(0),
        )
        .map_err(|e| anyhow::anyhow!("{key}: {e}"))
    }
}

fn parse_shape(name: &str, axis: Option<usize>) -> anyhow::Result<InclusionShape> {
    match name {
        "none" => Ok(InclusionShape::None),
        "square" => Ok(InclusionShape::Square),
        "disk" => Ok(InclusionShape::Disk),
        "channel" => Ok(InclusionShape::Channel { axis: axis.unwrap_or(0) }),
        "cross" => Ok(InclusionShape::Cross),
        other => bail!("unknown shape \"{other}\" (none, square, disk, channel, cross)"),
    }
}

impl StimulusConfig {
    fn validate(&self, key: &str) -> anyhow::Result<()> {
        match self.kind.as_str() {
            "none" => Ok(()),
            "uniform" => {
                if self.amplitude.is_none() {
                    bail!("{key}.amplitude: required for a uniform stimulus");
                }
                Ok(())
            }
            "pulse" => {
                for (name, missing) in [
                    ("center", self.center.is_none()),
                    ("radius", self.radius.is_none()),
                    ("amplitude", self.amplitude.is_none()),
                    ("t_on", self.t_on.is_none()),
                    ("t_off", self.t_off.is_none()),
                ] {
                    if missing {
                        bail!("{key}.{name}: required for a pulse stimulus");
                    }
                }
                Ok(())
            }
            other => bail!("{key}.kind: expected none/uniform/pulse, got \"{other}\""),
        }
    }

    pub fn to_macro(&self) -> triscale::macro_solver::Stimulus {
        use triscale::macro_solver::Stimulus;
        match self.kind.as_str() {
            "uniform" => Stimulus::Uniform { amplitude: self.amplitude.unwrap() },
            "pulse" => Stimulus::Pulse {
                center: self.center.clone().unwrap(),
                radius: self.radius.unwrap(),
                amplitude: self.amplitude.unwrap(),
                t_on: self.t_on.unwrap(),
                t_off: self.t_off.unwrap(),
            },
            _ => Stimulus::None,
        }
    }

    pub fn to_dns(&self) -> triscale::dns::DnsStimulus {
        use triscale::dns::DnsStimulus;
        match self.kind.as_str() {
            "uniform" => DnsStimulus::Uniform {
                amplitude: self.amplitude.unwrap(),
                t_on: self.t_on.unwrap_or(0.0),
                t_off: self.t_off.unwrap_or(f64::INFINITY),
            },
            "pulse" => DnsStimulus::Pulse {
                center: self.center.clone().unwrap(),
                radius: self.radius.unwrap(),
                amplitude: self.amplitude.unwrap(),
                t_on: self.t_on.unwrap(),
                t_off: self.t_off.unwrap(),
            },
            _ => DnsStimulus::None,
        }
    }
}
