//! TOML run configuration.
//!
//! Every section is optional. A file may name a `preset`; its sections are
//! filled from the preset wherever the file leaves them out. Matrices are
//! nested arrays of rows.

use std::ops::Range;
use std::path::{Path, PathBuf};

use auxsysid::experiments::{QSweepConfig, SystemPair};
use auxsysid::{Matrix64, NoiseConfig, QPolicy, SchedulePoint, SystemModel};
use serde::Deserialize;
use toml::Spanned;

use crate::CliError;

pub const PRESETS: [&str; 7] = [
    "paper-va",
    "paper-vb-case1",
    "paper-vb-case2",
    "paper-vb-case3",
    "paper-vb-case4",
    "paper-vb-case5",
    "paper-vb-case6",
];

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    preset: Option<String>,
    seed: Option<u64>,
    true_system: Option<RawSystem>,
    aux_system: Option<RawSystem>,
    data: Option<DataSpec>,
    estimate: Option<EstimateSpec>,
    priors: Option<PriorSpec>,
    scenario: Option<RawScenario>,
    qsweep: Option<SweepSpec>,
    validate: Option<ValidateSpec>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSystem {
    a: Spanned<Vec<Vec<f64>>>,
    b: Spanned<Vec<Vec<f64>>>,
    #[serde(default = "one")]
    sigma_x: f64,
    #[serde(default = "one")]
    sigma_u: f64,
    #[serde(default = "one")]
    sigma_w: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub n_r: usize,
    pub t_r: usize,
    #[serde(default)]
    pub n_p: usize,
    #[serde(default)]
    pub t_p: usize,
    /// Rollout CSVs to estimate from instead of simulating.
    pub true_csv: Option<PathBuf>,
    pub aux_csv: Option<PathBuf>,
    /// Allow zero standard deviations.
    #[serde(default)]
    pub noiseless: bool,
    /// Pinned initial state; requires `noiseless`.
    pub x0: Option<Vec<f64>>,
}

impl DataSpec {
    pub fn point(&self) -> SchedulePoint {
        SchedulePoint::new(self.n_r, self.t_r, self.n_p, self.t_p)
    }

    fn from_point(p: SchedulePoint) -> Self {
        Self {
            n_r: p.n_r,
            t_r: p.t_r,
            n_p: p.n_p,
            t_p: p.t_p,
            true_csv: None,
            aux_csv: None,
            noiseless: false,
            x0: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EstimateSpec {
    #[serde(default = "one")]
    pub q: f64,
    #[serde(default)]
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PriorSpec {
    pub delta: f64,
    /// Defaults to the exact value when both systems are given.
    pub delta_theta_norm: Option<f64>,
    pub theta_norm: Option<f64>,
    pub sigma_w_true: Option<f64>,
    pub sigma_w_aux: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    schedule: Option<Vec<[usize; 4]>>,
    q: Option<Spanned<Vec<QEntry>>>,
    trials: Option<usize>,
    lambda: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum QEntry {
    Value(f64),
    Rule(String),
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScenarioSpec {
    pub schedule: Option<Vec<SchedulePoint>>,
    pub q: Option<Vec<QPolicy<f64>>>,
    pub trials: Option<usize>,
    pub lambda: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    #[serde(default)]
    pub q_min: f64,
    #[serde(default = "two")]
    pub q_max: f64,
    #[serde(default = "hundredth")]
    pub q_step: f64,
    #[serde(default = "unit_lambda")]
    pub lambdas: Vec<f64>,
    #[serde(default = "hundredth")]
    pub delta: f64,
    #[serde(default = "ten")]
    pub trials: usize,
}

fn two() -> f64 {
    2.0
}
fn hundredth() -> f64 {
    0.01
}
fn unit_lambda() -> Vec<f64> {
    vec![1.0]
}
fn ten() -> usize {
    10
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValidateSpec {
    pub q: Option<f64>,
    pub lambda: Option<f64>,
    pub delta: Option<f64>,
    pub trials: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub model: SystemModel<f64>,
    pub noise: NoiseConfig<f64>,
}

/// A validated configuration.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunConfig {
    pub preset: Option<String>,
    pub seed: Option<u64>,
    pub true_system: Option<SystemSpec>,
    pub aux_system: Option<SystemSpec>,
    pub data: Option<DataSpec>,
    pub estimate: Option<EstimateSpec>,
    pub priors: Option<PriorSpec>,
    pub scenario: Option<ScenarioSpec>,
    pub qsweep: Option<SweepSpec>,
    pub validate: Option<ValidateSpec>,
}

impl RunConfig {
    /// Read and validate a file, resolving relative CSV paths against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(data) = cfg.data.as_mut() {
            for p in [&mut data.true_csv, &mut data.aux_csv].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self, CliError> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| format!(":{}", line_of(text, &s))).unwrap_or_default();
            CliError::Config(format!("{origin}{line}: {}", e.message().trim_end()))
        })?;
        let diag = Diag { text, origin };
        let true_system = raw.true_system.map(|s| diag.system(s, "true_system")).transpose()?;
        let aux_system = raw.aux_system.map(|s| diag.system(s, "aux_system")).transpose()?;
        if let (Some(t), Some(a)) = (&true_system, &aux_system) {
            if (t.model.state_dim(), t.model.input_dim()) != (a.model.state_dim(), a.model.input_dim()) {
                return Err(CliError::Config(format!(
                    "{origin}: aux_system is {}x{} but true_system is {}x{}",
                    a.model.state_dim(),
                    a.model.input_dim(),
                    t.model.state_dim(),
                    t.model.input_dim()
                )));
            }
        }
        let scenario = raw.scenario.map(|s| diag.scenario(s)).transpose()?;
        let cfg = Self {
            preset: raw.preset,
            seed: raw.seed,
            true_system,
            aux_system,
            data: raw.data,
            estimate: raw.estimate,
            priors: raw.priors,
            scenario,
            qsweep: raw.qsweep,
            validate: raw.validate,
        };
        cfg.check(origin)?;
        match cfg.preset.clone() {
            Some(name) => Ok(cfg.over(Self::preset(&name)?)),
            None => Ok(cfg),
        }
    }

    fn check(&self, origin: &str) -> Result<(), CliError> {
        let bad = |key: &str, why: &str| Err(CliError::Config(format!("{origin}: {key} {why}")));
        if let (Some(d), Some(t)) = (&self.data, &self.true_system) {
            if let Some(x0) = &d.x0 {
                if x0.len() != t.model.state_dim() {
                    return bad(
                        "data.x0",
                        &format!("has {} entries, expected {}", x0.len(), t.model.state_dim()),
                    );
                }
            }
        }
        if let Some(d) = &self.data {
            if d.x0.is_some() && !d.noiseless {
                return bad("data.x0", "requires data.noiseless = true");
            }
        }
        if let Some(e) = &self.estimate {
            if !(e.q >= 0.0 && e.q.is_finite()) {
                return bad("estimate.q", "must be a finite number >= 0");
            }
            if !(e.lambda >= 0.0 && e.lambda.is_finite()) {
                return bad("estimate.lambda", "must be a finite number >= 0");
            }
        }
        if let Some(p) = &self.priors {
            if !(p.delta > 0.0 && p.delta < 1.0) {
                return bad("priors.delta", "must lie in (0, 1)");
            }
        }
        if let Some(s) = &self.qsweep {
            if s.lambdas.is_empty() {
                return bad("qsweep.lambdas", "must not be empty");
            }
        }
        Ok(())
    }

    /// Built-in configuration by name.
    pub fn preset(name: &str) -> Result<Self, CliError> {
        if name == "paper-va" {
            let pair = SystemPair::<f64>::reference();
            let (t, a) = split_pair(&pair);
            return Ok(Self {
                preset: Some(name.into()),
                seed: Some(42),
                true_system: Some(t),
                aux_system: Some(a),
                data: Some(DataSpec::from_point(SchedulePoint::new(1, 400, 1, 1200))),
                estimate: Some(EstimateSpec { q: 1.0, lambda: 0.0 }),
                ..Self::default()
            });
        }
        let case = name
            .strip_prefix("paper-vb-case")
            .and_then(|c| c.parse::<u8>().ok())
            .filter(|c| (1..=6).contains(c))
            .ok_or_else(|| CliError::Config(format!("unknown preset '{name}'; known: {}", PRESETS.join(", "))))?;
        let sweep = QSweepConfig::<f64>::builtin_case(case).map_err(CliError::Core)?;
        let (t, a) = split_pair(&sweep.systems);
        Ok(Self {
            preset: Some(name.into()),
            seed: Some(sweep.seed),
            true_system: Some(t),
            aux_system: Some(a),
            data: Some(DataSpec::from_point(sweep.point)),
            estimate: Some(EstimateSpec { q: 1.0, lambda: 1.0 }),
            priors: Some(PriorSpec {
                delta: sweep.delta,
                delta_theta_norm: None,
                theta_norm: None,
                sigma_w_true: None,
                sigma_w_aux: None,
            }),
            qsweep: Some(SweepSpec {
                q_min: 0.0,
                q_max: 2.0,
                q_step: 0.01,
                lambdas: vec![1.0],
                delta: sweep.delta,
                trials: sweep.num_trials,
            }),
            ..Self::default()
        })
    }

    /// Sections of `self` win; missing ones come from `base`.
    pub fn over(self, base: Self) -> Self {
        Self {
            preset: self.preset.or(base.preset),
            seed: self.seed.or(base.seed),
            true_system: self.true_system.or(base.true_system),
            aux_system: self.aux_system.or(base.aux_system),
            data: self.data.or(base.data),
            estimate: self.estimate.or(base.estimate),
            priors: self.priors.or(base.priors),
            scenario: self.scenario.or(base.scenario),
            qsweep: self.qsweep.or(base.qsweep),
            validate: self.validate.or(base.validate),
        }
    }

    /// The sweep case a `paper-vb-caseN` preset refers to.
    pub fn sweep_case(&self) -> Option<u8> {
        self.preset.as_deref()?.strip_prefix("paper-vb-case")?.parse().ok()
    }

    pub fn system_pair(&self) -> Option<SystemPair<f64>> {
        let t = self.true_system.as_ref()?;
        let a = self.aux_system.as_ref().unwrap_or(t);
        Some(SystemPair {
            true_model: t.model.clone(),
            true_noise: t.noise,
            aux_model: a.model.clone(),
            aux_noise: a.noise,
        })
    }
}

fn split_pair(pair: &SystemPair<f64>) -> (SystemSpec, SystemSpec) {
    (
        SystemSpec {
            model: pair.true_model.clone(),
            noise: pair.true_noise,
        },
        SystemSpec {
            model: pair.aux_model.clone(),
            noise: pair.aux_noise,
        },
    )
}

fn line_of(text: &str, span: &Range<usize>) -> usize {
    text[..span.start.min(text.len())].matches('\n').count() + 1
}

struct Diag<'a> {
    text: &'a str,
    origin: &'a str,
}

impl Diag<'_> {
    fn err(&self, span: &Range<usize>, key: &str, msg: String) -> CliError {
        CliError::Config(format!("{}:{}: {key}: {msg}", self.origin, line_of(self.text, span)))
    }

    fn matrix(&self, m: &Spanned<Vec<Vec<f64>>>, key: &str, rows: Option<usize>) -> Result<Matrix64, CliError> {
        let span = m.span();
        let v = m.get_ref();
        if v.is_empty() {
            return Err(self.err(&span, key, "matrix has no rows".into()));
        }
        if let Some(r) = rows {
            if v.len() != r {
                return Err(self.err(
                    &span,
                    key,
                    format!("has {} rows, expected {r} (the state dimension)", v.len()),
                ));
            }
        }
        let cols = v[0].len();
        if cols == 0 {
            return Err(self.err(&span, key, "matrix has no columns".into()));
        }
        if let Some((i, row)) = v.iter().enumerate().find(|(_, row)| row.len() != cols) {
            return Err(self.err(
                &span,
                key,
                format!("row {} has {} entries, expected {cols}", i + 1, row.len()),
            ));
        }
        if v.iter().flatten().any(|x| !x.is_finite()) {
            return Err(self.err(&span, key, "entries must be finite".into()));
        }
        Ok(Matrix64::from_row_iterator(v.len(), cols, v.iter().flatten().copied()))
    }

    fn system(&self, raw: RawSystem, key: &str) -> Result<SystemSpec, CliError> {
        let a = self.matrix(&raw.a, &format!("{key}.a"), None)?;
        if !a.is_square() {
            return Err(self.err(
                &raw.a.span(),
                &format!("{key}.a"),
                format!("is {}x{}, must be square", a.nrows(), a.ncols()),
            ));
        }
        let b = self.matrix(&raw.b, &format!("{key}.b"), Some(a.nrows()))?;
        let model = SystemModel::new(a, b).map_err(|e| CliError::Config(format!("{}: {key}: {e}", self.origin)))?;
        for (name, v) in [
            ("sigma_x", raw.sigma_x),
            ("sigma_u", raw.sigma_u),
            ("sigma_w", raw.sigma_w),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(CliError::Config(format!(
                    "{}: {key}.{name} must be a finite number >= 0",
                    self.origin
                )));
            }
        }
        Ok(SystemSpec {
            model,
            noise: NoiseConfig::new(raw.sigma_x, raw.sigma_u, raw.sigma_w),
        })
    }

    fn scenario(&self, raw: RawScenario) -> Result<ScenarioSpec, CliError> {
        let q = match raw.q {
            None => None,
            Some(entries) => {
                let span = entries.span();
                let parsed = entries
                    .into_inner()
                    .into_iter()
                    .map(|e| match e {
                        QEntry::Value(v) if v >= 0.0 && v.is_finite() => Ok(QPolicy::Fixed(v)),
                        QEntry::Value(v) => Err(self.err(&span, "scenario.q", format!("weight {v} must be >= 0"))),
                        QEntry::Rule(r) if r.replace(' ', "") == "1/sqrt(T_r)" => Ok(QPolicy::InverseSqrtTr),
                        QEntry::Rule(r) => Err(self.err(
                            &span,
                            "scenario.q",
                            format!("unknown rule '{r}'; use a number or \"1/sqrt(T_r)\""),
                        )),
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                Some(parsed)
            }
        };
        Ok(ScenarioSpec {
            schedule: raw.schedule.map(|s| {
                s.into_iter()
                    .map(|[a, b, c, d]| SchedulePoint::new(a, b, c, d))
                    .collect()
            }),
            q,
            trials: raw.trials,
            lambda: raw.lambda,
        })
    }
}
