//! Run configuration read from a TOML file. Every table rejects unknown keys.

use std::path::{Path, PathBuf};

use ergosde::converge::StudyBudget;
use ergosde::model::{gallery, Profile, SampleSpec};
use ergosde::stein_check::RepresentationSettings;
use ergosde::{AssumptionParams, Problem, SchemeKind, SchemeSpec, Sde, TestFunction};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub format: Format,
    pub problem: ProblemConfig,
    pub scheme: SchemeConfig,
    pub phi: Profile,
    pub check: SampleSpec,
    pub simulate: SimulateConfig,
    pub stein: RepresentationSettings,
    pub converge: ConvergeConfig,
    pub blowup: BlowupConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out_dir: None,
            format: Format::Json,
            problem: ProblemConfig {
                id: Some("ou".into()),
                ..ProblemConfig::default()
            },
            scheme: SchemeConfig::default(),
            phi: Profile::Square,
            check: SampleSpec::default(),
            simulate: SimulateConfig::default(),
            stein: RepresentationSettings::default(),
            converge: ConvergeConfig::default(),
            blowup: BlowupConfig::default(),
        }
    }
}

/// Either a gallery id or an inline problem; `params` overrides the
/// hypothesis constants of either.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub custom: Option<Problem>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub params: Option<AssumptionParams>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchemeConfig {
    pub kind: SchemeKind,
    pub tau: f64,
    pub tau_grid: Vec<f64>,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            kind: SchemeKind::Em,
            tau: 0.01,
            tau_grid: vec![0.04, 0.02, 0.01, 0.005, 0.0025],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateConfig {
    pub y0: Vec<f64>,
    pub n_steps: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<u64>,
    pub n_batches: usize,
    pub n_chains: usize,
    /// Stride of the CSV trace; defaults to about 10⁴ rows.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub trace_thin: Option<u64>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            y0: vec![0.0],
            n_steps: 1_000_000,
            burn_in: None,
            n_batches: 32,
            n_chains: 1,
            trace_thin: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ConvergeConfig {
    /// Accepted range of the fitted order.
    pub slope_range: [f64; 2],
    pub budget: StudyBudget,
}

impl Default for ConvergeConfig {
    fn default() -> Self {
        Self {
            slope_range: [0.8, 1.2],
            budget: StudyBudget::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BlowupConfig {
    pub x0: Vec<f64>,
    pub n_traj: usize,
    /// Horizon of the reference scheme, which is expected to blow up.
    pub reference_steps: u64,
    /// Horizon of the compared schemes.
    pub n_steps: u64,
    /// Moment exponent of the trace, `E|Y_k|^{2p}`.
    pub p: f64,
    pub reference: SchemeKind,
    pub compared: Vec<SchemeKind>,
    /// Fraction of diverging reference trajectories that counts as blow-up.
    pub min_fraction: f64,
}

impl Default for BlowupConfig {
    fn default() -> Self {
        Self {
            x0: vec![3.0],
            n_traj: 200,
            reference_steps: 1_000,
            n_steps: 100_000,
            p: 1.0,
            reference: SchemeKind::Em,
            compared: vec![SchemeKind::Tem, SchemeKind::Pem, SchemeKind::Bem],
            min_fraction: 0.5,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| CliError::Config {
            path: None,
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Self::parse(&text).map_err(|e| match e {
            CliError::Config { message, .. } => CliError::Config {
                path: Some(path.to_path_buf()),
                message,
            },
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config {
            path: None,
            message: format!("cannot write as TOML: {e}"),
        })
    }

    fn validate(&self) -> Result<()> {
        let p = &self.problem;
        match (&p.id, &p.custom) {
            (Some(_), Some(_)) => return Err(config("problem: give either `id` or `custom`, not both")),
            (None, None) => return Err(config("problem: one of `id` or `custom` is required")),
            _ => {}
        }
        self.resolve_problem()?;
        SchemeSpec::new(self.scheme.kind, self.scheme.tau)?;
        for &t in &self.scheme.tau_grid {
            SchemeSpec::new(self.scheme.kind, t)?;
        }
        let [lo, hi] = self.converge.slope_range;
        if !(lo <= hi) {
            return Err(config("converge.slope_range: lower bound exceeds upper bound"));
        }
        let s = &self.simulate;
        if s.n_steps == 0 || s.n_chains == 0 || s.trace_thin == Some(0) {
            return Err(config("simulate: n_steps, n_chains and trace_thin must be positive"));
        }
        let b = &self.blowup;
        if b.n_traj == 0 || b.n_steps == 0 || b.reference_steps == 0 || !(b.p > 0.0) {
            return Err(config("blowup: n_traj, n_steps, reference_steps and p must be positive"));
        }
        if !(0.0..=1.0).contains(&b.min_fraction) {
            return Err(config("blowup.min_fraction must lie in [0, 1]"));
        }
        if self.check.n_samples == 0 {
            return Err(config("check.n_samples must be positive"));
        }
        Ok(())
    }

    pub fn resolve_problem(&self) -> Result<Problem> {
        let mut problem = match (&self.problem.id, &self.problem.custom) {
            (Some(id), _) => gallery(id)?.problem,
            (None, Some(p)) => p.clone(),
            (None, None) => return Err(config("problem: one of `id` or `custom` is required")),
        };
        if let Some(params) = self.problem.params {
            match &mut problem {
                Problem::Scalar(p) => p.params = params,
                Problem::Radial(p) => p.params = params,
            }
        }
        problem.params().validate()?;
        Ok(problem)
    }

    pub fn phi(&self) -> TestFunction {
        TestFunction::new(self.phi)
    }

    pub fn scheme(&self) -> Result<SchemeSpec> {
        Ok(SchemeSpec::new(self.scheme.kind, self.scheme.tau)?)
    }

    /// Copy with the command-line overrides applied and the seed pushed into
    /// every nested setting that carries one.
    pub fn resolved(mut self, seed: Option<u64>, out_dir: Option<PathBuf>, format: Option<Format>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        if out_dir.is_some() {
            self.out_dir = out_dir;
        }
        if let Some(f) = format {
            self.format = f;
        }
        self.check.seed = self.seed;
        self.stein.seed = self.seed;
        self
    }
}

fn config(message: &str) -> CliError {
    CliError::Config {
        path: None,
        message: message.into(),
    }
}
