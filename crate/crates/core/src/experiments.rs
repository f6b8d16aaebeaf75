//! Monte-Carlo harness: error-versus-sample-size scenarios, q sweeps
//! averaged over trials, and empirical coverage of the bounds.
//!
//! Each trial simulates its true and auxiliary datasets once, at the largest
//! size any schedule point asks for, and every schedule point and weight
//! reuses prefixes of that data. Comparisons across `q` are therefore paired,
//! and a schedule point sees the data a longer experiment would have
//! collected first.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};
use std::io::Write;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::bounds::{bound_data_dependent, prop1_threshold, sample_size_hypothesis, IndependentInputs, SystemData};
use crate::error::{Error, Result};
use crate::estimator::{assemble_batch, estimation_error, wls_from_pieces, BatchData, WlsConfig};
use crate::linalg::{min_eigenvalue_sym, spectral_norm};
use crate::scalar::Real;
use crate::sim::{derive_seed, simulate_rollouts, NoiseConfig, RolloutSet, SystemModel};
use crate::weight_select::{sweep_pieces, Priors, SweepGrid};

/// True system used throughout the reproduction runs.
pub fn reference_system<T: Real>() -> SystemModel<T> {
    let l = T::lit;
    SystemModel::new(
        DMatrix::from_row_slice(
            3,
            3,
            &[l(0.6), l(0.5), l(0.4), l(0.0), l(0.5), l(0.4), l(0.0), l(0.0), l(0.4)],
        ),
        DMatrix::from_row_slice(3, 2, &[l(1.0), l(0.5), l(0.5), l(1.0), l(0.5), l(0.5)]),
    )
    .expect("reference system is well formed")
}

/// Reference system with `A₁₁ = 0.7` and `B₁₁ = 1 + b_shift`.
pub fn perturbed_system<T: Real>(b_shift: T) -> SystemModel<T> {
    let base = reference_system::<T>();
    let mut a = base.a().clone();
    let mut b = base.b().clone();
    a[(0, 0)] = T::lit(0.7);
    b[(0, 0)] += b_shift;
    SystemModel::new(a, b).expect("perturbed system is well formed")
}

/// Sizes of one data budget: `N_r` rollouts of length `T_r` from the true
/// system and `N_p` of length `T_p` from the auxiliary one.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SchedulePoint {
    pub n_r: usize,
    pub t_r: usize,
    pub n_p: usize,
    pub t_p: usize,
}

impl SchedulePoint {
    pub fn new(n_r: usize, t_r: usize, n_p: usize, t_p: usize) -> Self {
        Self { n_r, t_r, n_p, t_p }
    }

    fn aux_samples(&self) -> usize {
        self.n_p * self.t_p
    }
}

/// How the auxiliary weight is chosen at a schedule point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QPolicy<T: Real> {
    Fixed(T),
    /// `q = 1/√T_r`.
    InverseSqrtTr,
}

impl<T: Real> QPolicy<T> {
    pub fn value(&self, t_r: usize) -> T {
        match self {
            QPolicy::Fixed(q) => *q,
            QPolicy::InverseSqrtTr => T::one() / T::from_count(t_r).sqrt(),
        }
    }

    /// Series label, e.g. `q=1`, `q=1e10`, `q=1/sqrt(T_r)`.
    pub fn label(&self) -> String {
        match self {
            QPolicy::Fixed(q) => {
                let v = q.as_f64();
                if v != 0.0 && (v.abs() >= 1e4 || v.abs() < 1e-3) {
                    format!("q={v:e}")
                } else {
                    format!("q={v}")
                }
            }
            QPolicy::InverseSqrtTr => "q=1/sqrt(T_r)".to_string(),
        }
    }
}

/// A pair of systems with their noise levels.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemPair<T: Real> {
    pub true_model: SystemModel<T>,
    pub true_noise: NoiseConfig<T>,
    pub aux_model: SystemModel<T>,
    pub aux_noise: NoiseConfig<T>,
}

impl<T: Real> SystemPair<T> {
    /// Reference pair with unit noise and `B₁₁` shifted by 0.1.
    pub fn reference() -> Self {
        Self {
            true_model: reference_system(),
            true_noise: NoiseConfig::uniform(T::one()),
            aux_model: perturbed_system(T::lit(0.1)),
            aux_noise: NoiseConfig::uniform(T::one()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.true_noise.validate(false)?;
        self.aux_noise.validate(false)?;
        self.true_model.delta_theta(&self.aux_model).map(|_| ())
    }

    pub fn delta_theta_norm(&self) -> Result<T> {
        spectral_norm(&self.true_model.delta_theta(&self.aux_model)?)
    }

    /// Simulate the largest datasets needed, seeded per trial.
    fn simulate(
        &self,
        n_r: usize,
        t_r: usize,
        n_p: usize,
        t_p: usize,
        seed: u64,
        trial: usize,
    ) -> Result<(RolloutSet<T>, RolloutSet<T>)> {
        let t = trial as u64;
        let truth = simulate_rollouts(&self.true_model, &self.true_noise, n_r, t_r, derive_seed(seed, &[t, 0]))?;
        let aux = if n_p == 0 || t_p == 0 {
            RolloutSet::empty(self.aux_model.state_dim(), self.aux_model.input_dim())
        } else {
            simulate_rollouts(&self.aux_model, &self.aux_noise, n_p, t_p, derive_seed(seed, &[t, 1]))?
        };
        Ok((truth, aux))
    }
}

fn check_trials(trials: usize) -> Result<()> {
    if trials == 0 {
        Err(Error::invalid("number of trials must be at least 1"))
    } else {
        Ok(())
    }
}

/// Hash of the exact bit patterns of a batch.
pub fn dataset_hash<T: Real>(data: &BatchData<T>) -> u64 {
    let mut h = DefaultHasher::new();
    data.column_split.hash(&mut h);
    for m in [&data.x, &data.z] {
        m.shape().hash(&mut h);
        for v in m.iter() {
            v.as_f64().to_bits().hash(&mut h);
        }
    }
    h.finish()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig<T: Real> {
    pub name: String,
    pub systems: SystemPair<T>,
    pub schedule: Vec<SchedulePoint>,
    pub q_policies: Vec<QPolicy<T>>,
    pub num_trials: usize,
    pub seed: u64,
    pub lambda: T,
}

impl<T: Real> ScenarioConfig<T> {
    /// Built-in scenarios 1 to 3 on the reference pair, single rollouts, λ = 0.
    ///
    /// 1. `T_p = 3T_r`, both growing.
    /// 2. `T_p = 2400` fixed, `T_r` growing.
    /// 3. `T_r = 50` fixed, `T_p` growing.
    pub fn builtin(id: u8) -> Result<Self> {
        let fixed = |v: f64| QPolicy::Fixed(T::lit(v));
        let (schedule, q_policies): (Vec<_>, Vec<_>) = match id {
            1 => (
                [25, 50, 100, 200, 400, 800]
                    .iter()
                    .map(|&t| SchedulePoint::new(1, t, 1, 3 * t))
                    .collect(),
                vec![fixed(0.0), fixed(1.0), fixed(1e10), QPolicy::InverseSqrtTr],
            ),
            2 => (
                [50, 100, 200, 400, 800, 1600]
                    .iter()
                    .map(|&t| SchedulePoint::new(1, t, 1, 2400))
                    .collect(),
                vec![fixed(0.0), fixed(1.0), fixed(1e10), QPolicy::InverseSqrtTr],
            ),
            3 => (
                [100, 200, 400, 800, 1600, 3200]
                    .iter()
                    .map(|&t| SchedulePoint::new(1, 50, 1, t))
                    .collect(),
                vec![fixed(0.0), fixed(0.3), fixed(0.6), fixed(1.0), fixed(1e10)],
            ),
            _ => return Err(Error::invalid(format!("unknown scenario {id}; expected 1, 2 or 3"))),
        };
        Ok(Self {
            name: format!("scenario{id}"),
            systems: SystemPair::reference(),
            schedule,
            q_policies,
            num_trials: 10,
            seed: 42,
            lambda: T::zero(),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.systems.validate()?;
        check_trials(self.num_trials)?;
        if self.schedule.is_empty() {
            return Err(Error::invalid("schedule is empty"));
        }
        if let Some(p) = self.schedule.iter().find(|p| p.n_r == 0 || p.t_r == 0) {
            return Err(Error::invalid(format!(
                "schedule point {p:?} has no true-system samples"
            )));
        }
        if self.q_policies.is_empty() {
            return Err(Error::invalid("no q policies given"));
        }
        for policy in &self.q_policies {
            if let QPolicy::Fixed(q) = policy {
                WlsConfig::new(*q, self.lambda)?;
            }
        }
        WlsConfig::new(T::zero(), self.lambda).map(|_| ())
    }
}

/// Estimation error of one `(schedule point, q policy, trial)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord<T: Real> {
    pub schedule_idx: usize,
    pub point: SchedulePoint,
    pub q_idx: usize,
    pub q_policy: String,
    pub q_value: T,
    pub trial: usize,
    pub error: T,
    pub dataset_hash: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MeanRecord<T: Real> {
    pub schedule_idx: usize,
    pub point: SchedulePoint,
    pub q_idx: usize,
    pub q_policy: String,
    pub q_value: T,
    pub mean_error: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentResult<T: Real> {
    pub scenario: String,
    pub lambda: T,
    pub seed: u64,
    pub num_trials: usize,
    /// Sorted by schedule index, then q index, then trial.
    pub records: Vec<TrialRecord<T>>,
    pub means: Vec<MeanRecord<T>>,
    pub elapsed: Duration,
}

impl<T: Real> ExperimentResult<T> {
    pub const CSV_HEADER: [&'static str; 11] = [
        "scenario",
        "schedule_idx",
        "N_r",
        "T_r",
        "N_p",
        "T_p",
        "q_policy",
        "q_value",
        "lambda",
        "trial",
        "error",
    ];

    pub fn mean(&self, schedule_idx: usize, q_idx: usize) -> Option<T> {
        self.means
            .iter()
            .find(|m| m.schedule_idx == schedule_idx && m.q_idx == q_idx)
            .map(|m| m.mean_error)
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for r in &self.records {
            w.write_record([
                self.scenario.clone(),
                r.schedule_idx.to_string(),
                r.point.n_r.to_string(),
                r.point.t_r.to_string(),
                r.point.n_p.to_string(),
                r.point.t_p.to_string(),
                r.q_policy.clone(),
                r.q_value.to_csv_string(),
                self.lambda.to_csv_string(),
                r.trial.to_string(),
                r.error.to_csv_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Per-cell means with the same leading columns as [`Self::write_csv`].
    pub fn write_means_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = Self::CSV_HEADER[..9].to_vec();
        header.push("mean_error");
        w.write_record(&header)?;
        for m in &self.means {
            w.write_record([
                self.scenario.clone(),
                m.schedule_idx.to_string(),
                m.point.n_r.to_string(),
                m.point.t_r.to_string(),
                m.point.n_p.to_string(),
                m.point.t_p.to_string(),
                m.q_policy.clone(),
                m.q_value.to_csv_string(),
                self.lambda.to_csv_string(),
                m.mean_error.to_csv_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn run_trial<T: Real>(cfg: &ScenarioConfig<T>, trial: usize) -> Result<Vec<TrialRecord<T>>> {
    let max = |f: fn(&SchedulePoint) -> usize| cfg.schedule.iter().map(f).max().unwrap_or(0);
    let (truth, aux) = cfg.systems.simulate(
        max(|p| p.n_r),
        max(|p| p.t_r),
        max(|p| p.n_p),
        max(|p| p.t_p),
        cfg.seed,
        trial,
    )?;
    let mut out = Vec::with_capacity(cfg.schedule.len() * cfg.q_policies.len());
    for (schedule_idx, point) in cfg.schedule.iter().enumerate() {
        let aux_part = if point.aux_samples() == 0 {
            RolloutSet::empty(aux.state_dim(), aux.input_dim())
        } else {
            aux.truncate(point.n_p, point.t_p)?
        };
        let batch = assemble_batch(&truth.truncate(point.n_r, point.t_r)?, &aux_part)?;
        let hash = dataset_hash(&batch);
        let pieces = batch.pieces();
        for (q_idx, policy) in cfg.q_policies.iter().enumerate() {
            let q_value = policy.value(point.t_r);
            let est = wls_from_pieces(&pieces, &WlsConfig::new(q_value, cfg.lambda)?)?;
            out.push(TrialRecord {
                schedule_idx,
                point: *point,
                q_idx,
                q_policy: policy.label(),
                q_value,
                trial,
                error: estimation_error(&est, &cfg.systems.true_model)?,
                dataset_hash: hash,
            });
        }
    }
    Ok(out)
}

/// Estimation error for every schedule point, q policy and trial.
pub fn run_scenario<T: Real>(cfg: &ScenarioConfig<T>) -> Result<ExperimentResult<T>> {
    cfg.validate()?;
    let start = Instant::now();
    let per_trial = (0..cfg.num_trials)
        .into_par_iter()
        .map(|trial| run_trial(cfg, trial))
        .collect::<Result<Vec<_>>>()?;
    let mut records: Vec<_> = per_trial.into_iter().flatten().collect();
    records.sort_by_key(|r| (r.schedule_idx, r.q_idx, r.trial));

    let means = records
        .chunks(cfg.num_trials)
        .map(|cell| {
            let sum = cell.iter().fold(T::zero(), |acc, r| acc + r.error);
            let first = &cell[0];
            MeanRecord {
                schedule_idx: first.schedule_idx,
                point: first.point,
                q_idx: first.q_idx,
                q_policy: first.q_policy.clone(),
                q_value: first.q_value,
                mean_error: sum / T::from_count(cell.len()),
            }
        })
        .collect();
    Ok(ExperimentResult {
        scenario: cfg.name.clone(),
        lambda: cfg.lambda,
        seed: cfg.seed,
        num_trials: cfg.num_trials,
        records,
        means,
        elapsed: start.elapsed(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct QSweepConfig<T: Real> {
    pub name: String,
    pub systems: SystemPair<T>,
    pub point: SchedulePoint,
    pub grid: SweepGrid<T>,
    pub delta: T,
    pub num_trials: usize,
    pub seed: u64,
}

impl<T: Real> QSweepConfig<T> {
    /// The six weight-sweep setups: `T_r = 10`, `T_p = 50`, `N_p = 20`,
    /// `λ = 1`, `δ = 0.01`, `q ∈ {0, 0.01, …, 2}`.
    ///
    /// | case | B₁₁ shift | σ_w true | σ_w aux | N_r  |
    /// |------|-----------|----------|---------|------|
    /// | 1    | 0.1       | 1        | 1       | 20   |
    /// | 2    | 0.11      | 1        | 1.1     | 19   |
    /// | 3    | 3         | 1        | 1       | 20   |
    /// | 4    | 0.1       | 1        | 5       | 20   |
    /// | 5    | 0.1       | 5        | 1       | 20   |
    /// | 6    | 0.1       | 1        | 1       | 1200 |
    pub fn builtin_case(case: u8) -> Result<Self> {
        let (shift, sw_true, sw_aux, n_r) = match case {
            1 => (0.1, 1.0, 1.0, 20),
            2 => (0.11, 1.0, 1.1, 19),
            3 => (3.0, 1.0, 1.0, 20),
            4 => (0.1, 1.0, 5.0, 20),
            5 => (0.1, 5.0, 1.0, 20),
            6 => (0.1, 1.0, 1.0, 1200),
            _ => return Err(Error::invalid(format!("unknown sweep case {case}; expected 1 to 6"))),
        };
        let noise = |sw: f64| NoiseConfig::new(T::one(), T::one(), T::lit(sw));
        Ok(Self {
            name: format!("case{case}"),
            systems: SystemPair {
                true_model: reference_system(),
                true_noise: noise(sw_true),
                aux_model: perturbed_system(T::lit(shift)),
                aux_noise: noise(sw_aux),
            },
            point: SchedulePoint::new(n_r, 10, 20, 50),
            grid: SweepGrid::range(T::zero(), T::lit(2.0), T::lit(0.01), vec![T::one()])?,
            delta: T::lit(0.01),
            num_trials: 10,
            seed: 42,
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.systems.validate()?;
        check_trials(self.num_trials)?;
        if self.point.n_r == 0 || self.point.t_r == 0 {
            return Err(Error::invalid("sweep needs true-system samples"));
        }
        Ok(())
    }

    /// Priors with the exact model difference and parameter norm.
    pub fn priors(&self) -> Result<Priors<T>> {
        Ok(Priors {
            delta: self.delta,
            sigma_w_true: self.systems.true_noise.sigma_w,
            sigma_w_aux: self.systems.aux_noise.sigma_w,
            delta_theta_norm: self.systems.delta_theta_norm()?,
            theta_norm: self.systems.true_model.theta_norm()?,
        })
    }
}

/// Trial-averaged bound terms and true error at one grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QSweepRow<T: Real> {
    pub q: T,
    pub lambda: T,
    pub bound: T,
    pub noise_term: T,
    pub model_difference_term: T,
    pub regularization_term: T,
    pub true_error: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QSweepSummary<T: Real> {
    pub name: String,
    pub seed: u64,
    pub num_trials: usize,
    pub rows: Vec<QSweepRow<T>>,
    /// Index of the smallest mean bound (ties: smaller q, then smaller λ).
    pub bound_argmin: usize,
    /// Index of the smallest mean true error, same tie rule.
    pub error_argmin: usize,
    /// `(q*, λ*)` chosen in each individual trial.
    pub per_trial_choice: Vec<(T, T)>,
    pub elapsed: Duration,
}

impl<T: Real> QSweepSummary<T> {
    pub const CSV_HEADER: [&'static str; 8] = [
        "q",
        "lambda",
        "bound",
        "noise_term",
        "model_difference_term",
        "regularization_term",
        "true_error",
        "chosen",
    ];

    pub fn bound_choice(&self) -> &QSweepRow<T> {
        &self.rows[self.bound_argmin]
    }

    pub fn error_choice(&self) -> &QSweepRow<T> {
        &self.rows[self.error_argmin]
    }

    /// One row per grid point; `chosen` is 1 on the bound minimizer.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for (i, r) in self.rows.iter().enumerate() {
            w.write_record([
                r.q.to_csv_string(),
                r.lambda.to_csv_string(),
                r.bound.to_csv_string(),
                r.noise_term.to_csv_string(),
                r.model_difference_term.to_csv_string(),
                r.regularization_term.to_csv_string(),
                r.true_error.to_csv_string(),
                u8::from(i == self.bound_argmin).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

fn argmin_by<T: Real>(rows: &[QSweepRow<T>], key: impl Fn(&QSweepRow<T>) -> T) -> usize {
    let cmp = |x: T, y: T| x.partial_cmp(&y).unwrap_or(std::cmp::Ordering::Equal);
    (0..rows.len())
        .min_by(|&i, &j| {
            cmp(key(&rows[i]), key(&rows[j]))
                .then(cmp(rows[i].q, rows[j].q))
                .then(cmp(rows[i].lambda, rows[j].lambda))
        })
        .expect("grid is never empty")
}

/// Sweep the data-dependent bound and the true error over the grid in each
/// trial and average point-wise.
pub fn run_qsweep_experiment<T: Real>(cfg: &QSweepConfig<T>) -> Result<QSweepSummary<T>> {
    cfg.validate()?;
    let start = Instant::now();
    let priors = cfg.priors()?;
    let p = cfg.point;
    let sweeps = (0..cfg.num_trials)
        .into_par_iter()
        .map(|trial| {
            let (truth, aux) = cfg.systems.simulate(p.n_r, p.t_r, p.n_p, p.t_p, cfg.seed, trial)?;
            let pieces = assemble_batch(&truth, &aux)?.pieces();
            sweep_pieces(&pieces, &cfg.grid, &priors, Some(&cfg.systems.true_model))
        })
        .collect::<Result<Vec<_>>>()?;

    let count = T::from_count(cfg.num_trials);
    let rows: Vec<_> = (0..cfg.grid.len())
        .map(|i| {
            let first = &sweeps[0].points[i];
            let mean = |f: &dyn Fn(usize) -> T| (0..sweeps.len()).fold(T::zero(), |acc, k| acc + f(k)) / count;
            let at = |k: usize| &sweeps[k].points[i];
            QSweepRow {
                q: first.q,
                lambda: first.lambda,
                bound: mean(&|k| at(k).report.total),
                noise_term: mean(&|k| at(k).report.noise_term),
                model_difference_term: mean(&|k| at(k).report.model_difference_term),
                regularization_term: mean(&|k| at(k).report.regularization_term),
                true_error: mean(&|k| at(k).true_error.unwrap_or_else(T::zero)),
            }
        })
        .collect();
    Ok(QSweepSummary {
        name: cfg.name.clone(),
        seed: cfg.seed,
        num_trials: cfg.num_trials,
        bound_argmin: argmin_by(&rows, |r| r.bound),
        error_argmin: argmin_by(&rows, |r| r.true_error),
        per_trial_choice: sweeps.iter().map(|s| (s.chosen().q, s.chosen().lambda)).collect(),
        rows,
        elapsed: start.elapsed(),
    })
}

/// Which high-probability statement a validity run checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ValidityKind {
    /// `λ_min(ZQZ') ≥ (N_rT_r σ̄²_min + q N_pT_p σ̂²_min)/41`, nominal level `1 − 2δ`.
    GramLowerBound,
    /// `‖Θ_WLS − Θ‖ ≤` data-dependent bound, nominal level `1 − δ`.
    DataDependentBound,
}

impl ValidityKind {
    pub fn name(&self) -> &'static str {
        match self {
            ValidityKind::GramLowerBound => "prop1",
            ValidityKind::DataDependentBound => "thm2",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidityConfig<T: Real> {
    pub kind: ValidityKind,
    pub systems: SystemPair<T>,
    pub point: SchedulePoint,
    pub q: T,
    pub lambda: T,
    pub delta: T,
    pub trials: usize,
    pub seed: u64,
}

impl<T: Real> ValidityConfig<T> {
    /// Scalar `x⁺ = 0.5x + u + w` with unit noise, 22 rollouts of length 100
    /// (2200 samples, above the `200(n+p)log(12/δ)` requirement), `q = 0`, `δ = 0.05`.
    pub fn gram_default() -> Self {
        let sys = SystemModel::from_rows(1, 1, &[T::lit(0.5)], &[T::one()]).expect("scalar system");
        let aux = SystemModel::from_rows(1, 1, &[T::lit(0.6)], &[T::one()]).expect("scalar system");
        Self {
            kind: ValidityKind::GramLowerBound,
            systems: SystemPair {
                true_model: sys,
                true_noise: NoiseConfig::uniform(T::one()),
                aux_model: aux,
                aux_noise: NoiseConfig::uniform(T::one()),
            },
            point: SchedulePoint::new(22, 100, 0, 0),
            q: T::zero(),
            lambda: T::zero(),
            delta: T::lit(0.05),
            trials: 200,
            seed: 42,
        }
    }

    /// First weight-sweep case at `q = 1`, `λ = 1`, `δ = 0.05`.
    pub fn bound_default() -> Self {
        Self {
            kind: ValidityKind::DataDependentBound,
            systems: SystemPair::reference(),
            point: SchedulePoint::new(20, 10, 20, 50),
            q: T::one(),
            lambda: T::one(),
            delta: T::lit(0.05),
            trials: 200,
            seed: 42,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.systems.validate()?;
        check_trials(self.trials)?;
        WlsConfig::new(self.q, self.lambda)?;
        if self.point.n_r == 0 || self.point.t_r == 0 {
            return Err(Error::invalid("validity run needs true-system samples"));
        }
        Ok(())
    }
}

/// Outcome of one trial: the event holds when `statistic <= threshold`
/// (bound check) or `statistic >= threshold` (Gram check).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValidityTrial<T: Real> {
    pub trial: usize,
    pub statistic: T,
    pub threshold: T,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidityReport<T: Real> {
    pub kind: ValidityKind,
    pub trials: Vec<ValidityTrial<T>>,
    pub frequency: f64,
    /// `√(f(1−f)/trials)`.
    pub std_error: f64,
    /// Nominal coverage of the statement being checked.
    pub nominal: f64,
    pub hypothesis_satisfied: bool,
}

impl<T: Real> ValidityReport<T> {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["kind", "trial", "statistic", "threshold", "holds"])?;
        for t in &self.trials {
            w.write_record([
                self.kind.name().to_string(),
                t.trial.to_string(),
                t.statistic.to_csv_string(),
                t.threshold.to_csv_string(),
                u8::from(t.holds).to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Empirical frequency of a high-probability event over seeded trials.
pub fn run_mc_validity<T: Real>(cfg: &ValidityConfig<T>) -> Result<ValidityReport<T>> {
    cfg.validate()?;
    let p = cfg.point;
    let sys = &cfg.systems;
    let independent = IndependentInputs {
        true_sys: SystemData {
            model: sys.true_model.clone(),
            noise: sys.true_noise,
            rollouts: p.n_r,
            length: p.t_r,
        },
        aux_sys: SystemData {
            model: sys.aux_model.clone(),
            noise: sys.aux_noise,
            rollouts: p.n_p,
            length: p.t_p,
        },
        q: cfg.q,
        delta: cfg.delta,
        c: T::one(),
        delta_theta_norm: sys.delta_theta_norm()?,
    };
    let (gram_threshold, hypothesis_satisfied, nominal) = match cfg.kind {
        ValidityKind::GramLowerBound => {
            let n = sys.true_model.state_dim();
            let hyp = sample_size_hypothesis(
                n,
                sys.true_model.input_dim(),
                p.n_r * p.t_r,
                p.aux_samples(),
                independent.effective_q(),
                cfg.delta,
            );
            (
                Some(prop1_threshold(&independent)?),
                hyp,
                1.0 - 2.0 * cfg.delta.as_f64(),
            )
        }
        ValidityKind::DataDependentBound => (None, true, 1.0 - cfg.delta.as_f64()),
    };
    let priors = Priors {
        delta: cfg.delta,
        sigma_w_true: sys.true_noise.sigma_w,
        sigma_w_aux: sys.aux_noise.sigma_w,
        delta_theta_norm: independent.delta_theta_norm,
        theta_norm: sys.true_model.theta_norm()?,
    };

    let trials = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let (truth, aux) = sys.simulate(p.n_r, p.t_r, p.n_p, p.t_p, cfg.seed, trial)?;
            let pieces = assemble_batch(&truth, &aux)?.pieces();
            let (statistic, threshold, holds) = match gram_threshold {
                Some(th) => {
                    let lo = min_eigenvalue_sym(&pieces.weighted_gram(cfg.q))?;
                    (lo, th, lo >= th)
                }
                None => {
                    let bound = bound_data_dependent(&pieces, &priors.at(cfg.q, cfg.lambda))?;
                    let est = wls_from_pieces(&pieces, &WlsConfig::new(cfg.q, cfg.lambda)?)?;
                    let err = estimation_error(&est, &sys.true_model)?;
                    (err, bound.total, err <= bound.total)
                }
            };
            Ok(ValidityTrial {
                trial,
                statistic,
                threshold,
                holds,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let hits = trials.iter().filter(|t| t.holds).count();
    let frequency = hits as f64 / trials.len() as f64;
    Ok(ValidityReport {
        kind: cfg.kind,
        std_error: (frequency * (1.0 - frequency) / trials.len() as f64).sqrt(),
        frequency,
        nominal,
        hypothesis_satisfied,
        trials,
    })
}
