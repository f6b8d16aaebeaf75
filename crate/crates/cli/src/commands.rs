use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use auxsysid::experiments::{QSweepConfig, ValidityConfig};
use auxsysid::sim::derive_seed;
use auxsysid::{
    assemble_batch, bound_data_dependent, estimation_error, run_mc_validity, run_qsweep_experiment, run_scenario,
    simulate_rollouts_with, wls_estimate, BatchData, BoundReport, DependentInputs, QPolicy, RolloutSet, ScenarioConfig,
    SimOptions, SweepGrid, SystemPair, WlsConfig,
};
use nalgebra::DVector;
use serde::Serialize;

use crate::config::{DataSpec, EstimateSpec, RunConfig};
use crate::{Cli, CliError, Command, ValidateKind};

const DEFAULT_SEED: u64 = 42;

pub fn run(cli: &Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Config(format!("cannot size the worker pool: {e}")))?;
    }
    if let Some(q) = cli.q {
        if !(q >= 0.0 && q.is_finite()) {
            return Err(CliError::Config(format!("--q must be a finite number >= 0, got {q}")));
        }
    }
    if let Some(l) = cli.lambda {
        if !(l >= 0.0 && l.is_finite()) {
            return Err(CliError::Config(format!(
                "--lambda must be a finite number >= 0, got {l}"
            )));
        }
    }
    if cli.trials == Some(0) {
        return Err(CliError::Config("--trials must be at least 1".into()));
    }

    let cfg = load(cli)?;
    let seed = cli.seed.or(cfg.seed).unwrap_or(DEFAULT_SEED);
    let mut ctx = Context::new(cli, &cfg, seed)?;
    match &cli.command {
        Command::Simulate => simulate(&mut ctx, &with_default_system(cfg)?),
        Command::Estimate => estimate(&mut ctx, &with_default_system(cfg)?),
        Command::Scenario { id } => scenario(&mut ctx, &cfg, *id),
        Command::Qsweep => qsweep(&mut ctx, &cfg),
        Command::Validate { kind } => validate(&mut ctx, &cfg, *kind),
    }?;
    ctx.finish()
}

fn load(cli: &Cli) -> Result<RunConfig, CliError> {
    let file = cli.config.as_deref().map(RunConfig::load).transpose()?;
    let preset = cli.preset.as_deref().map(RunConfig::preset).transpose()?;
    Ok(match (file, preset) {
        (Some(f), Some(p)) => f.over(p),
        (Some(f), None) => f,
        (None, Some(p)) => p,
        (None, None) => RunConfig::default(),
    })
}

fn with_default_system(cfg: RunConfig) -> Result<RunConfig, CliError> {
    if cfg.true_system.is_none() && cfg.data.is_none() {
        Ok(cfg.over(RunConfig::preset("paper-va")?))
    } else {
        Ok(cfg)
    }
}

#[derive(Serialize)]
struct Metadata {
    command: String,
    version: String,
    seed: u64,
    jobs: Option<usize>,
    config: Option<String>,
    preset: Option<String>,
    outputs: Vec<String>,
    parameters: BTreeMap<String, String>,
}

/// Command-line overrides shared by several commands.
struct Flags {
    q: Option<f64>,
    lambda: Option<f64>,
    trials: Option<usize>,
}

/// Output directory bookkeeping and the run's metadata sidecar.
struct Context {
    flags: Flags,
    dir: PathBuf,
    inputs: Vec<PathBuf>,
    seed: u64,
    meta: Metadata,
}

impl Context {
    fn new(cli: &Cli, cfg: &RunConfig, seed: u64) -> Result<Self, CliError> {
        std::fs::create_dir_all(&cli.out)
            .map_err(|e| CliError::Io(format!("cannot create {}: {e}", cli.out.display())))?;
        let mut inputs: Vec<PathBuf> = cli.config.iter().cloned().collect();
        if let Some(d) = &cfg.data {
            inputs.extend(d.true_csv.iter().chain(d.aux_csv.iter()).cloned());
        }
        let command = match &cli.command {
            Command::Simulate => "simulate".to_string(),
            Command::Estimate => "estimate".to_string(),
            Command::Scenario { id } => format!("scenario{id}"),
            Command::Qsweep => "qsweep".to_string(),
            Command::Validate { kind } => format!("validate_{}", kind_name(*kind)),
        };
        Ok(Self {
            flags: Flags {
                q: cli.q,
                lambda: cli.lambda,
                trials: cli.trials,
            },
            dir: cli.out.clone(),
            inputs: inputs.iter().filter_map(|p| p.canonicalize().ok()).collect(),
            seed,
            meta: Metadata {
                command,
                version: env!("CARGO_PKG_VERSION").to_string(),
                seed,
                jobs: cli.jobs,
                config: cli.config.as_ref().map(|p| p.display().to_string()),
                preset: cfg.preset.clone(),
                outputs: Vec::new(),
                parameters: BTreeMap::new(),
            },
        })
    }

    fn param(&mut self, key: &str, value: impl ToString) {
        self.meta.parameters.insert(key.to_string(), value.to_string());
    }

    /// Open an output file, refusing to clobber an input.
    fn create(&mut self, name: &str) -> Result<BufWriter<File>, CliError> {
        let path = self.dir.join(name);
        if let Ok(canon) = path.canonicalize() {
            if self.inputs.contains(&canon) {
                return Err(CliError::Config(format!(
                    "output {} would overwrite an input",
                    path.display()
                )));
            }
        }
        let file = File::create(&path).map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display())))?;
        self.meta.outputs.push(name.to_string());
        Ok(BufWriter::new(file))
    }

    fn write(
        &mut self,
        name: &str,
        f: impl FnOnce(&mut BufWriter<File>) -> auxsysid::Result<()>,
    ) -> Result<(), CliError> {
        let mut w = self.create(name)?;
        f(&mut w)?;
        w.flush().map_err(|e| CliError::Io(format!("cannot write {name}: {e}")))
    }

    fn finish(mut self) -> Result<(), CliError> {
        let name = format!("{}.meta.toml", self.meta.command);
        let text = toml::to_string(&self.meta).map_err(|e| CliError::Io(format!("cannot encode metadata: {e}")))?;
        let mut w = self.create(&name)?;
        w.write_all(text.as_bytes())
            .and_then(|_| w.flush())
            .map_err(|e| CliError::Io(format!("cannot write {name}: {e}")))
    }
}

fn kind_name(kind: ValidateKind) -> &'static str {
    match kind {
        ValidateKind::Prop1 => "prop1",
        ValidateKind::Thm2 => "thm2",
    }
}

fn need<'a, T>(v: &'a Option<T>, section: &str) -> Result<&'a T, CliError> {
    v.as_ref()
        .ok_or_else(|| CliError::Config(format!("missing [{section}] section")))
}

fn pair(cfg: &RunConfig) -> Result<SystemPair<f64>, CliError> {
    cfg.system_pair()
        .ok_or_else(|| CliError::Config("missing [true_system] section".into()))
}

fn simulate_data(cfg: &RunConfig, data: &DataSpec, seed: u64) -> Result<(RolloutSet<f64>, RolloutSet<f64>), CliError> {
    let pair = pair(cfg)?;
    let opts = SimOptions {
        noiseless_override: data.noiseless,
        initial_state: data.x0.as_ref().map(|x| DVector::from_column_slice(x)),
    };
    let truth = simulate_rollouts_with(
        &pair.true_model,
        &pair.true_noise,
        data.n_r,
        data.t_r,
        derive_seed(seed, &[0]),
        &opts,
    )?;
    let aux = if data.n_p == 0 || data.t_p == 0 {
        RolloutSet::empty(pair.aux_model.state_dim(), pair.aux_model.input_dim())
    } else {
        simulate_rollouts_with(
            &pair.aux_model,
            &pair.aux_noise,
            data.n_p,
            data.t_p,
            derive_seed(seed, &[1]),
            &opts,
        )?
    };
    Ok((truth, aux))
}

fn simulate(ctx: &mut Context, cfg: &RunConfig) -> Result<(), CliError> {
    let data = need(&cfg.data, "data")?;
    let (truth, aux) = simulate_data(cfg, data, ctx.seed)?;
    ctx.write("true_rollouts.csv", |w| truth.write_csv(w))?;
    ctx.write("aux_rollouts.csv", |w| aux.write_csv(w))?;
    let p = data.point();
    for (k, v) in [("n_r", p.n_r), ("t_r", p.t_r), ("n_p", p.n_p), ("t_p", p.t_p)] {
        ctx.param(k, v);
    }
    println!(
        "simulated {} true rollouts of length {} and {} auxiliary rollouts of length {} (seed {})",
        p.n_r, p.t_r, p.n_p, p.t_p, ctx.seed
    );
    Ok(())
}

fn read_rollouts(path: &Path) -> Result<RolloutSet<f64>, CliError> {
    let file = File::open(path).map_err(|e| CliError::Io(format!("cannot read {}: {e}", path.display())))?;
    RolloutSet::read_csv(file).map_err(|e| match e {
        e if e.is_io() => CliError::Io(format!("{}: {e}", path.display())),
        e => CliError::Config(format!("{}: {e}", path.display())),
    })
}

fn load_batch(ctx: &Context, cfg: &RunConfig) -> Result<(BatchData<f64>, bool), CliError> {
    let data = need(&cfg.data, "data")?;
    let (truth, aux, simulated) = match &data.true_csv {
        Some(path) => {
            let truth = read_rollouts(path)?;
            let aux = match &data.aux_csv {
                Some(p) => read_rollouts(p)?,
                None => RolloutSet::empty(truth.state_dim(), truth.input_dim()),
            };
            (truth, aux, false)
        }
        None => {
            let (t, a) = simulate_data(cfg, data, ctx.seed)?;
            (t, a, true)
        }
    };
    Ok((assemble_batch(&truth, &aux)?, simulated))
}

fn estimate(ctx: &mut Context, cfg: &RunConfig) -> Result<(), CliError> {
    let (batch, simulated) = load_batch(ctx, cfg)?;
    let spec = cfg.estimate.unwrap_or(EstimateSpec { q: 1.0, lambda: 0.0 });
    let q = ctx.flags.q.unwrap_or(spec.q);
    let lambda = ctx.flags.lambda.unwrap_or(spec.lambda);
    ctx.param("q", q);
    ctx.param("lambda", lambda);
    let wls = WlsConfig::new(q, lambda)?;
    let est = wls_estimate(&batch, &wls)?;
    let seed = simulated.then_some(ctx.seed);
    ctx.write("estimate.csv", |w| est.write_csv(w, seed))?;

    let mut line = format!(
        "estimate: n={} p={} q={q} lambda={lambda} columns={}+{}",
        est.state_dim(),
        est.input_dim(),
        batch.column_split,
        batch.num_aux_columns()
    );
    if let Some(t) = &cfg.true_system {
        let err = estimation_error(&est, &t.model)?;
        line.push_str(&format!(" error_vs_truth={err:.6e}"));
        ctx.param("error_vs_truth", format!("{err:e}"));
    }
    println!("{line}");

    if let Some(priors) = &cfg.priors {
        if lambda <= 0.0 {
            println!("bound: skipped, the data-dependent bound needs lambda > 0");
            return Ok(());
        }
        let pair = cfg.system_pair();
        let missing =
            |what: &str| CliError::Config(format!("priors.{what} is required when no system pair is configured"));
        let inputs = DependentInputs {
            q,
            lambda,
            delta: priors.delta,
            sigma_w_true: match (priors.sigma_w_true, &pair) {
                (Some(v), _) => v,
                (None, Some(p)) => p.true_noise.sigma_w,
                (None, None) => return Err(missing("sigma_w_true")),
            },
            sigma_w_aux: match (priors.sigma_w_aux, &pair) {
                (Some(v), _) => v,
                (None, Some(p)) => p.aux_noise.sigma_w,
                (None, None) => return Err(missing("sigma_w_aux")),
            },
            delta_theta_norm: match (priors.delta_theta_norm, &pair) {
                (Some(v), _) => v,
                (None, Some(p)) => p.delta_theta_norm()?,
                (None, None) => return Err(missing("delta_theta_norm")),
            },
            theta_norm: match (priors.theta_norm, &pair) {
                (Some(v), _) => v,
                (None, Some(p)) => p.true_model.theta_norm()?,
                (None, None) => return Err(missing("theta_norm")),
            },
        };
        let report = bound_data_dependent(&batch.pieces(), &inputs)?;
        ctx.write("bound.csv", |w| {
            BoundReport::write_csv(std::slice::from_ref(&report), w)
        })?;
        println!(
            "bound: total={:.6e} noise={:.6e} model_difference={:.6e} regularization={:.6e}",
            report.total, report.noise_term, report.model_difference_term, report.regularization_term
        );
    }
    Ok(())
}

fn scenario(ctx: &mut Context, cfg: &RunConfig, id: u8) -> Result<(), CliError> {
    let mut sc = ScenarioConfig::<f64>::builtin(id)?;
    sc.seed = ctx.seed;
    if let Some(pair) = cfg.system_pair() {
        sc.systems = pair;
    }
    if let Some(s) = &cfg.scenario {
        if let Some(v) = &s.schedule {
            sc.schedule = v.clone();
        }
        if let Some(v) = &s.q {
            sc.q_policies = v.clone();
        }
        if let Some(v) = s.trials {
            sc.num_trials = v;
        }
        if let Some(v) = s.lambda {
            sc.lambda = v;
        }
    }
    if let Some(q) = ctx.flags.q {
        sc.q_policies = vec![QPolicy::Fixed(q)];
    }
    sc.lambda = ctx.flags.lambda.unwrap_or(sc.lambda);
    sc.num_trials = ctx.flags.trials.unwrap_or(sc.num_trials);
    ctx.param("trials", sc.num_trials);
    ctx.param("lambda", sc.lambda);
    ctx.param(
        "q_policies",
        sc.q_policies.iter().map(|p| p.label()).collect::<Vec<_>>().join(" "),
    );

    let result = run_scenario(&sc)?;
    ctx.write(&format!("scenario{id}.csv"), |w| result.write_csv(w))?;
    ctx.write(&format!("scenario{id}_means.csv"), |w| result.write_means_csv(w))?;

    println!(
        "{}: mean error over {} trials (lambda = {})",
        sc.name, sc.num_trials, sc.lambda
    );
    let labels: Vec<String> = sc.q_policies.iter().map(|p| p.label()).collect();
    print!("{:>6} {:>6} {:>6} {:>6}", "N_r", "T_r", "N_p", "T_p");
    for l in &labels {
        print!(" {l:>14}");
    }
    println!();
    for (s, p) in sc.schedule.iter().enumerate() {
        print!("{:>6} {:>6} {:>6} {:>6}", p.n_r, p.t_r, p.n_p, p.t_p);
        for qi in 0..labels.len() {
            print!(" {:>14.6e}", result.mean(s, qi).unwrap_or(f64::NAN));
        }
        println!();
    }
    Ok(())
}

fn qsweep(ctx: &mut Context, cfg: &RunConfig) -> Result<(), CliError> {
    let mut qc = QSweepConfig::<f64>::builtin_case(cfg.sweep_case().unwrap_or(1))?;
    qc.seed = ctx.seed;
    if let Some(pair) = cfg.system_pair() {
        qc.systems = pair;
    }
    if let Some(d) = &cfg.data {
        qc.point = d.point();
    }
    let mut lambdas = qc.grid.lambda_values().to_vec();
    if let Some(s) = &cfg.qsweep {
        lambdas = s.lambdas.clone();
        qc.grid = SweepGrid::range(s.q_min, s.q_max, s.q_step, lambdas.clone())?;
        qc.delta = s.delta;
        qc.num_trials = s.trials;
    }
    if let Some(l) = ctx.flags.lambda {
        lambdas = vec![l];
        qc.grid = SweepGrid::explicit(qc.grid.q_values().to_vec(), lambdas.clone())?;
    }
    if let Some(q) = ctx.flags.q {
        qc.grid = SweepGrid::explicit(vec![q], lambdas)?;
    }
    qc.num_trials = ctx.flags.trials.unwrap_or(qc.num_trials);
    ctx.param("case", &qc.name);
    ctx.param("trials", qc.num_trials);
    ctx.param("delta", qc.delta);
    ctx.param("grid_points", qc.grid.len());

    let summary = run_qsweep_experiment(&qc)?;
    ctx.write("qsweep.csv", |w| summary.write_csv(w))?;
    let b = summary.bound_choice();
    let e = summary.error_choice();
    println!(
        "{}: {} grid points, {} trials",
        summary.name,
        summary.rows.len(),
        summary.num_trials
    );
    println!(
        "chosen q* = {} (lambda = {}), mean bound {:.6e}, mean true error {:.6e}",
        b.q, b.lambda, b.bound, b.true_error
    );
    println!(
        "error-minimizing q = {} (lambda = {}), mean true error {:.6e}",
        e.q, e.lambda, e.true_error
    );
    Ok(())
}

fn validate(ctx: &mut Context, cfg: &RunConfig, kind: ValidateKind) -> Result<(), CliError> {
    let mut vc = match kind {
        ValidateKind::Prop1 => ValidityConfig::<f64>::gram_default(),
        ValidateKind::Thm2 => ValidityConfig::<f64>::bound_default(),
    };
    vc.seed = ctx.seed;
    if let Some(pair) = cfg.system_pair() {
        vc.systems = pair;
    }
    if let Some(d) = &cfg.data {
        vc.point = d.point();
    }
    if let Some(v) = &cfg.validate {
        vc.q = v.q.unwrap_or(vc.q);
        vc.lambda = v.lambda.unwrap_or(vc.lambda);
        vc.delta = v.delta.unwrap_or(vc.delta);
        vc.trials = v.trials.unwrap_or(vc.trials);
    }
    vc.q = ctx.flags.q.unwrap_or(vc.q);
    vc.lambda = ctx.flags.lambda.unwrap_or(vc.lambda);
    vc.trials = ctx.flags.trials.unwrap_or(vc.trials);
    for (k, v) in [("q", vc.q), ("lambda", vc.lambda), ("delta", vc.delta)] {
        ctx.param(k, v);
    }
    ctx.param("trials", vc.trials);

    let report = run_mc_validity(&vc)?;
    ctx.write(&format!("validate_{}.csv", kind_name(kind)), |w| report.write_csv(w))?;
    println!(
        "{}: frequency {:.4} (standard error {:.4}) over {} trials; nominal {:.4}; sample-size hypothesis {}",
        report.kind.name(),
        report.frequency,
        report.std_error,
        report.trials.len(),
        report.nominal,
        if report.hypothesis_satisfied {
            "satisfied"
        } else {
            "not satisfied"
        }
    );
    Ok(())
}
