//! Experiment configuration. One TOML file describes one experiment; every
//! field is required unless its type is `Option`, and unknown keys are errors.

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context};
use homlab_core::environment::{Bump, SiteLaw};
use homlab_core::kernels::Scheme;
use homlab_core::scales::build_hierarchy;
use homlab_core::{EnvironmentSpec, LocalObservable, ScaleHierarchy, ScaleParams, SolverParams};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Kind {
    Audit,
    Alpha,
    Controls,
    Pi,
    Cauchy,
    Compare,
    Homogenize,
    TimeAverage,
}

impl Kind {
    pub const ALL: [Kind; 8] = [
        Kind::Audit,
        Kind::Alpha,
        Kind::Controls,
        Kind::Pi,
        Kind::Cauchy,
        Kind::Compare,
        Kind::Homogenize,
        Kind::TimeAverage,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Kind::Audit => "audit",
            Kind::Alpha => "alpha",
            Kind::Controls => "controls",
            Kind::Pi => "pi",
            Kind::Cauchy => "cauchy",
            Kind::Compare => "compare",
            Kind::Homogenize => "homogenize",
            Kind::TimeAverage => "time-average",
        }
    }

    /// Name of the section holding the kind-specific parameters.
    pub fn section(self) -> &'static str {
        match self {
            Kind::TimeAverage => "time_average",
            k => k.name(),
        }
    }

    fn needs_solver(self) -> bool {
        matches!(
            self,
            Kind::Controls | Kind::Pi | Kind::Cauchy | Kind::Compare | Kind::Homogenize
        )
    }
}

impl fmt::Display for Kind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: Kind,
    pub seed: u64,
    pub output: PathBuf,
    /// Ceiling on the work estimate; `None` disables the gate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    pub scales: ScalesSection,
    pub environment: EnvironmentSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub audit: Option<AuditSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<AlphaSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub controls: Option<ControlsSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pi: Option<PiSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cauchy: Option<CauchySection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub homogenize: Option<HomogenizeSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time_average: Option<TimeAverageSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalesSection {
    pub dimension: usize,
    pub beta: f64,
    pub a: f64,
    pub l0: u64,
    pub c0: f64,
    pub max_level: usize,
    pub strict_mode: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentSection {
    pub eta0: f64,
    pub range: f64,
    pub nu: f64,
    pub bump_radius: f64,
    pub site_spacing: f64,
    pub drift_half_width: f64,
    pub diag_half_width: f64,
    pub offdiag_half_width: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSection {
    pub h: f64,
    /// Explicit time step; omit to use the stability limit of each field.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    pub margin_sigmas: f64,
    pub scheme: Scheme,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AuditSection {
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlphaSection {
    pub level: usize,
    pub n_env: usize,
    pub n_paths: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlsSection {
    pub level: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contraction: Option<ContractionSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tails: Option<TailsSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractionSection {
    pub n_env: usize,
    pub alpha: f64,
    pub cutoff_multiplier: f64,
    pub n_fields: usize,
    pub correlation_length: f64,
    pub fourier_modes: usize,
    pub tail_paths: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tail_dt: Option<f64>,
    pub refine: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TailsSection {
    pub n_env: usize,
    pub paths_per_env: usize,
    pub dt: f64,
    /// Thresholds in units of `D_n`.
    pub v_multiples: Vec<f64>,
    /// Horizon of the mean-displacement and symmetry checks.
    pub t: f64,
    pub symmetry_start: Vec<f64>,
    /// Each entry is `[permutation, signs]`, e.g. `[[1, 0, 2], [1, 1, 1]]`.
    pub symmetries: Vec<(Vec<usize>, Vec<i8>)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PiSection {
    pub level: usize,
    pub n_env: usize,
    pub observable: LocalObservable,
    pub ball_factor: f64,
    pub powers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CauchySection {
    pub level: usize,
    pub n_env: usize,
    pub observable: LocalObservable,
    pub ball_factor: f64,
    pub powers: usize,
    /// Grid spacing at level `n + 1`; level `n` uses `solver.h`.
    pub upper_h: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    pub level: usize,
    pub k: usize,
    pub n_env: usize,
    pub alpha: f64,
    pub ball_factor: f64,
    /// Correlation length of the test field in units of `L_n`.
    pub correlation_length: f64,
    pub fourier_modes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSection {
    pub x: Vec<f64>,
    pub t: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceSection {
    pub level: usize,
    pub n_env: usize,
    pub ball_factor: f64,
    pub powers: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HomogenizeSection {
    pub n_env: usize,
    pub observable: LocalObservable,
    pub eps: Vec<f64>,
    pub probes: Vec<ProbeSection>,
    pub bootstrap_reps: usize,
    /// `π̂_n(f)` on the same seeds as the comparison target.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceSection>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeAverageSection {
    pub n_env: usize,
    pub observable: LocalObservable,
    pub horizon: f64,
    pub dt: f64,
    pub n_out: usize,
}

/// A parsed config together with the exact text it came from.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub text: String,
    pub config: ExperimentConfig,
}

pub fn parse_config(text: &str) -> anyhow::Result<ExperimentConfig> {
    let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| anyhow!("config parse error: {e}"))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> anyhow::Result<LoadedConfig> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading config {}", path.display()))?;
    let config = parse_config(&text).with_context(|| format!("in {}", path.display()))?;
    Ok(LoadedConfig { text, config })
}

impl ExperimentConfig {
    pub fn validate(&self) -> anyhow::Result<()> {
        let present = [
            (Kind::Audit, self.audit.is_some()),
            (Kind::Alpha, self.alpha.is_some()),
            (Kind::Controls, self.controls.is_some()),
            (Kind::Pi, self.pi.is_some()),
            (Kind::Cauchy, self.cauchy.is_some()),
            (Kind::Compare, self.compare.is_some()),
            (Kind::Homogenize, self.homogenize.is_some()),
            (Kind::TimeAverage, self.time_average.is_some()),
        ];
        for (k, here) in present {
            if k == self.kind && !here {
                bail!("validation: kind `{}` requires section [{}]", k, k.section());
            }
            if k != self.kind && here {
                bail!("validation: section [{}] does not belong to kind `{}`", k.section(), self.kind);
            }
        }
        if self.kind.needs_solver() && self.solver.is_none() {
            bail!("validation: kind `{}` requires section [solver]", self.kind);
        }
        if let Some(b) = self.budget {
            if !(b > 0.0) {
                bail!("validation: budget must be positive");
            }
        }
        self.scale_params().validate().map_err(|e| anyhow!("validation: [scales]: {e}"))?;
        self.environment_spec().validate().map_err(|e| anyhow!("validation: [environment]: {e}"))?;
        if let Some(s) = &self.solver {
            if !(s.h > 0.0) {
                bail!("validation: solver.h must be positive");
            }
        }
        let d = self.scales.dimension;
        if let Some(c) = &self.controls {
            if c.contraction.is_none() && c.tails.is_none() {
                bail!("validation: [controls] needs a `contraction` or `tails` table");
            }
            if let Some(t) = &c.tails {
                if t.symmetry_start.len() != d {
                    bail!("validation: controls.tails.symmetry_start must have {d} entries");
                }
            }
        }
        if let Some(h) = &self.homogenize {
            if h.eps.is_empty() || h.eps.windows(2).any(|w| w[1] >= w[0]) || h.eps.iter().any(|&e| !(e > 0.0)) {
                bail!("validation: homogenize.eps must be positive and strictly decreasing");
            }
            if h.probes.iter().any(|p| p.x.len() != d) {
                bail!("validation: every homogenize probe needs {d} coordinates");
            }
        }
        Ok(())
    }

    pub fn scale_params(&self) -> ScaleParams {
        let s = &self.scales;
        ScaleParams {
            dimension: s.dimension,
            beta: s.beta,
            a: s.a,
            l0: s.l0,
            c0: s.c0,
            max_level: s.max_level,
            strict_mode: s.strict_mode,
        }
    }

    pub fn hierarchy(&self) -> anyhow::Result<ScaleHierarchy> {
        Ok(build_hierarchy(&self.scale_params())?)
    }

    pub fn environment_spec(&self) -> EnvironmentSpec {
        let e = &self.environment;
        EnvironmentSpec {
            dimension: self.scales.dimension,
            eta0: e.eta0,
            range: e.range,
            nu: e.nu,
            bump: Bump { radius: e.bump_radius },
            site_spacing: e.site_spacing,
            site_law: SiteLaw {
                drift_half_width: e.drift_half_width,
                diag_half_width: e.diag_half_width,
                offdiag_half_width: e.offdiag_half_width,
            },
            master_seed: self.seed,
        }
    }

    pub fn spec(&self) -> Arc<EnvironmentSpec> {
        Arc::new(self.environment_spec())
    }

    pub fn solver_params(&self) -> Option<SolverParams> {
        self.solver.as_ref().map(|s| SolverParams {
            h: s.h,
            dt: s.dt,
            margin_sigmas: s.margin_sigmas,
            scheme: s.scheme,
        })
    }
}
