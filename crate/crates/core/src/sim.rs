//! Multi-rollout simulation of `x_{t+1} = A x_t + B u_t + w_t`.
//!
//! Every rollout draws from its own ChaCha substream keyed by
//! `(seed, rollout index)`, so rollouts can be generated in parallel, and
//! asking for more rollouts (or longer ones) leaves the earlier data intact.

use std::io::{Read, Write};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{ensure_finite, spectral_norm};
use crate::scalar::Real;

/// The pair (A, B) of one discrete-time LTI system.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemModel<T: Real> {
    a: DMatrix<T>,
    b: DMatrix<T>,
}

impl<T: Real> SystemModel<T> {
    pub fn new(a: DMatrix<T>, b: DMatrix<T>) -> Result<Self> {
        if a.nrows() == 0 || !a.is_square() {
            return Err(Error::dim(
                "system matrix A",
                "nonempty square matrix",
                format!("{}x{}", a.nrows(), a.ncols()),
            ));
        }
        if b.nrows() != a.nrows() || b.ncols() == 0 {
            return Err(Error::dim(
                "input matrix B",
                format!("{} rows and at least one column", a.nrows()),
                format!("{}x{}", b.nrows(), b.ncols()),
            ));
        }
        ensure_finite(&a, "system matrix A")?;
        ensure_finite(&b, "input matrix B")?;
        Ok(Self { a, b })
    }

    pub fn from_rows(n: usize, p: usize, a: &[T], b: &[T]) -> Result<Self> {
        if a.len() != n * n || b.len() != n * p {
            return Err(Error::dim(
                "row-major system data",
                format!("{} and {} entries", n * n, n * p),
                format!("{} and {}", a.len(), b.len()),
            ));
        }
        Self::new(DMatrix::from_row_slice(n, n, a), DMatrix::from_row_slice(n, p, b))
    }

    pub fn a(&self) -> &DMatrix<T> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<T> {
        &self.b
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Θ = [A B].
    pub fn theta(&self) -> DMatrix<T> {
        let (n, p) = (self.state_dim(), self.input_dim());
        let mut theta = DMatrix::zeros(n, n + p);
        theta.columns_mut(0, n).copy_from(&self.a);
        theta.columns_mut(n, p).copy_from(&self.b);
        theta
    }

    /// δ_Θ = Θ_other − Θ_self: the difference of `other` from this system.
    pub fn delta_theta(&self, other: &SystemModel<T>) -> Result<DMatrix<T>> {
        if self.state_dim() != other.state_dim() || self.input_dim() != other.input_dim() {
            return Err(Error::dim(
                "model difference",
                format!("n={}, p={}", self.state_dim(), self.input_dim()),
                format!("n={}, p={}", other.state_dim(), other.input_dim()),
            ));
        }
        Ok(other.theta() - self.theta())
    }

    pub fn theta_norm(&self) -> Result<T> {
        spectral_norm(&self.theta())
    }

    pub fn step(&self, x: &DVector<T>, u: &DVector<T>, w: &DVector<T>) -> DVector<T> {
        &self.a * x + &self.b * u + w
    }
}

/// Standard deviations of the initial state, the inputs and the process noise.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig<T: Real> {
    pub sigma_x: T,
    pub sigma_u: T,
    pub sigma_w: T,
}

impl<T: Real> NoiseConfig<T> {
    pub fn new(sigma_x: T, sigma_u: T, sigma_w: T) -> Self {
        Self {
            sigma_x,
            sigma_u,
            sigma_w,
        }
    }

    pub fn uniform(sigma: T) -> Self {
        Self::new(sigma, sigma, sigma)
    }

    /// All three deviations must be positive, or merely nonnegative when
    /// `allow_zero` is set.
    pub fn validate(&self, allow_zero: bool) -> Result<()> {
        for (name, v) in [
            ("sigma_x", self.sigma_x),
            ("sigma_u", self.sigma_u),
            ("sigma_w", self.sigma_w),
        ] {
            let ok = v.is_finite() && if allow_zero { v >= T::zero() } else { v > T::zero() };
            if !ok {
                let need = if allow_zero { ">= 0" } else { "> 0" };
                return Err(Error::invalid(format!("{name} must be {need}, got {v}")));
            }
        }
        Ok(())
    }

    pub fn sigma_min(&self) -> T {
        self.sigma_x.min(self.sigma_u).min(self.sigma_w)
    }

    pub fn sigma_max(&self) -> T {
        self.sigma_x.max(self.sigma_u).max(self.sigma_w)
    }
}

/// Escape hatches for exact-recovery and verification runs.
#[derive(Debug, Clone)]
pub struct SimOptions<T: Real> {
    /// Permit zero standard deviations.
    pub noiseless_override: bool,
    /// Pin every rollout's initial state (requires `noiseless_override`).
    pub initial_state: Option<DVector<T>>,
}

impl<T: Real> Default for SimOptions<T> {
    fn default() -> Self {
        Self {
            noiseless_override: false,
            initial_state: None,
        }
    }
}

impl<T: Real> SimOptions<T> {
    pub fn noiseless() -> Self {
        Self {
            noiseless_override: true,
            initial_state: None,
        }
    }
}

/// One trajectory: states x_0..x_T, inputs u_0..u_{T-1}, and optionally the
/// realized noise w_0..w_{T-1}, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout<T: Real> {
    pub states: DMatrix<T>,
    pub inputs: DMatrix<T>,
    pub noise: Option<DMatrix<T>>,
}

impl<T: Real> Rollout<T> {
    pub fn len(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn truncated(&self, len: usize) -> Self {
        Self {
            states: self.states.columns(0, len + 1).into_owned(),
            inputs: self.inputs.columns(0, len).into_owned(),
            noise: self.noise.as_ref().map(|w| w.columns(0, len).into_owned()),
        }
    }

    /// Largest violation of the recursion, scaled by `1 + ‖x_{t+1}‖`.
    pub fn recursion_residual(&self, model: &SystemModel<T>) -> Result<T> {
        let w = self
            .noise
            .as_ref()
            .ok_or_else(|| Error::Unavailable("recorded process noise".into()))?;
        let mut worst = T::zero();
        for t in 0..self.len() {
            let next = self.states.column(t + 1);
            let pred = model.a() * self.states.column(t) + model.b() * self.inputs.column(t) + w.column(t);
            worst = worst.max((next - pred).norm() / (T::one() + next.norm()));
        }
        Ok(worst)
    }
}

/// N equal-length rollouts from one system.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutSet<T: Real> {
    state_dim: usize,
    input_dim: usize,
    length: usize,
    rollouts: Vec<Rollout<T>>,
    seed: Option<u64>,
}

impl<T: Real> RolloutSet<T> {
    /// A set with no rollouts; assembling it as auxiliary data is the same as
    /// giving the auxiliary system zero weight.
    pub fn empty(state_dim: usize, input_dim: usize) -> Self {
        Self {
            state_dim,
            input_dim,
            length: 0,
            rollouts: Vec::new(),
            seed: None,
        }
    }

    pub fn from_rollouts(rollouts: Vec<Rollout<T>>, seed: Option<u64>) -> Result<Self> {
        let first = rollouts
            .first()
            .ok_or_else(|| Error::invalid("a rollout set needs at least one rollout"))?;
        let (n, p, len) = (first.states.nrows(), first.inputs.nrows(), first.len());
        if len == 0 {
            return Err(Error::invalid("rollouts must have length >= 1"));
        }
        for (i, r) in rollouts.iter().enumerate() {
            let shapes_ok = r.states.nrows() == n
                && r.inputs.nrows() == p
                && r.len() == len
                && r.states.ncols() == len + 1
                && r.noise.as_ref().is_none_or(|w| w.nrows() == n && w.ncols() == len);
            if !shapes_ok {
                return Err(Error::dim(
                    format!("rollout {i}"),
                    format!("n={n}, p={p}, T={len}"),
                    format!("n={}, p={}, T={}", r.states.nrows(), r.inputs.nrows(), r.len()),
                ));
            }
            if r.noise.is_some() != first.noise.is_some() {
                return Err(Error::invalid("either all rollouts record noise or none do"));
            }
        }
        Ok(Self {
            state_dim: n,
            input_dim: p,
            length: len,
            rollouts,
            seed,
        })
    }

    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_rollouts(&self) -> usize {
        self.rollouts.len()
    }

    /// Rollout length T (0 for an empty set).
    pub fn length(&self) -> usize {
        self.length
    }

    pub fn num_samples(&self) -> usize {
        self.num_rollouts() * self.length
    }

    pub fn is_empty(&self) -> bool {
        self.rollouts.is_empty()
    }

    pub fn rollouts(&self) -> &[Rollout<T>] {
        &self.rollouts
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn has_noise(&self) -> bool {
        self.rollouts.iter().all(|r| r.noise.is_some())
    }

    /// First `num_rollouts` rollouts, each cut to its first `length` steps.
    pub fn truncate(&self, num_rollouts: usize, length: usize) -> Result<Self> {
        if num_rollouts > self.num_rollouts() || length > self.length {
            return Err(Error::invalid(format!(
                "cannot take {num_rollouts}x{length} from a {}x{} rollout set",
                self.num_rollouts(),
                self.length
            )));
        }
        if num_rollouts == 0 || length == 0 {
            return Ok(Self::empty(self.state_dim, self.input_dim));
        }
        Ok(Self {
            state_dim: self.state_dim,
            input_dim: self.input_dim,
            length,
            rollouts: self.rollouts[..num_rollouts]
                .iter()
                .map(|r| r.truncated(length))
                .collect(),
            seed: self.seed,
        })
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(writer);
        let (n, p) = (self.state_dim, self.input_dim);
        let with_noise = self.has_noise() && !self.is_empty();
        let mut header = vec!["rollout".to_string(), "t".to_string()];
        header.extend((1..=n).map(|i| format!("x_{i}")));
        header.extend((1..=p).map(|i| format!("u_{i}")));
        if with_noise {
            header.extend((1..=n).map(|i| format!("w_{i}")));
        }
        out.write_record(&header)?;
        for (k, r) in self.rollouts.iter().enumerate() {
            for t in 0..=r.len() {
                let mut row = vec![k.to_string(), t.to_string()];
                row.extend(r.states.column(t).iter().map(|v| v.to_csv_string()));
                // The terminal state has no input or noise.
                let cell = |m: &DMatrix<T>, i: usize| {
                    if t < r.len() {
                        m[(i, t)].to_csv_string()
                    } else {
                        String::new()
                    }
                };
                row.extend((0..p).map(|i| cell(&r.inputs, i)));
                if let (true, Some(w)) = (with_noise, r.noise.as_ref()) {
                    row.extend((0..n).map(|i| cell(w, i)));
                }
                out.write_record(&row)?;
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Parse the CSV layout produced by [`RolloutSet::write_csv`].
    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.len() < 2 || cols[0] != "rollout" || cols[1] != "t" {
            return Err(Error::Parse("rollout CSV must start with columns rollout,t".into()));
        }
        let count = |prefix: &str| cols.iter().filter(|c| c.starts_with(prefix)).count();
        let (n, p, nw) = (count("x_"), count("u_"), count("w_"));
        if n == 0 || p == 0 || (nw != 0 && nw != n) || cols.len() != 2 + n + p + nw {
            return Err(Error::Parse(format!(
                "unrecognized rollout CSV header: {}",
                cols.join(",")
            )));
        }
        let parse = |s: &str, line: usize| -> Result<T> {
            s.trim()
                .parse::<T>()
                .map_err(|_| Error::Parse(format!("line {line}: invalid number '{s}'")))
        };

        // states, inputs, noise and row count per rollout
        type Columns<T> = (Vec<T>, Vec<T>, Vec<T>, usize);
        let mut raw: Vec<Columns<T>> = Vec::new();
        for (idx, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = idx + 2;
            let k: usize = rec[0]
                .parse()
                .map_err(|_| Error::Parse(format!("line {line}: bad rollout index")))?;
            let t: usize = rec[1]
                .parse()
                .map_err(|_| Error::Parse(format!("line {line}: bad time index")))?;
            if k == raw.len() {
                raw.push((Vec::new(), Vec::new(), Vec::new(), 0));
            }
            if k + 1 != raw.len() {
                return Err(Error::Parse(format!(
                    "line {line}: rollouts must be contiguous and ordered"
                )));
            }
            let entry = &mut raw[k];
            if t != entry.3 {
                return Err(Error::Parse(format!(
                    "line {line}: expected t={}, found t={t}",
                    entry.3
                )));
            }
            entry.3 += 1;
            for i in 0..n {
                entry.0.push(parse(&rec[2 + i], line)?);
            }
            let input_cells: Vec<&str> = (0..p).map(|i| &rec[2 + n + i]).collect();
            if input_cells.iter().all(|c| c.trim().is_empty()) {
                // terminal row
                continue;
            }
            for c in input_cells {
                entry.1.push(parse(c, line)?);
            }
            for i in 0..nw {
                entry.2.push(parse(&rec[2 + n + p + i], line)?);
            }
        }
        let rollouts = raw
            .into_iter()
            .enumerate()
            .map(|(k, (xs, us, ws, rows))| {
                let len = us.len() / p;
                if rows != len + 1 {
                    return Err(Error::Parse(format!(
                        "rollout {k}: expected exactly one terminal row after {len} steps"
                    )));
                }
                Ok(Rollout {
                    states: DMatrix::from_column_slice(n, len + 1, &xs),
                    inputs: DMatrix::from_column_slice(p, len, &us),
                    noise: (nw > 0).then(|| DMatrix::from_column_slice(n, len, &ws)),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rollouts(rollouts, None)
    }
}

/// ChaCha20 generator for substream `stream` under `seed`.
pub fn substream(seed: u64, stream: u64) -> ChaCha20Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mix a master seed with a path of tags into a child seed (splitmix64).
pub fn derive_seed(master: u64, tags: &[u64]) -> u64 {
    fn mix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
    tags.iter().fold(mix(master), |acc, &t| mix(acc ^ mix(t)))
}

fn gaussian_vector<T: Real>(rng: &mut ChaCha20Rng, dim: usize, sigma: T) -> DVector<T> {
    DVector::from_fn(dim, |_, _| {
        let z: f64 = rng.sample(StandardNormal);
        T::lit(z) * sigma
    })
}

fn simulate_one<T: Real>(
    model: &SystemModel<T>,
    noise: &NoiseConfig<T>,
    length: usize,
    rng: &mut ChaCha20Rng,
    initial_state: Option<&DVector<T>>,
) -> Rollout<T> {
    let (n, p) = (model.state_dim(), model.input_dim());
    let mut states = DMatrix::zeros(n, length + 1);
    let mut inputs = DMatrix::zeros(p, length);
    let mut w_rec = DMatrix::zeros(n, length);

    // Always consume the draw so pinning x_0 does not shift the stream.
    let drawn = gaussian_vector(rng, n, noise.sigma_x);
    let mut x = initial_state.cloned().unwrap_or(drawn);
    states.set_column(0, &x);
    for t in 0..length {
        let u = gaussian_vector(rng, p, noise.sigma_u);
        let w = gaussian_vector(rng, n, noise.sigma_w);
        x = model.step(&x, &u, &w);
        states.set_column(t + 1, &x);
        inputs.set_column(t, &u);
        w_rec.set_column(t, &w);
    }
    Rollout {
        states,
        inputs,
        noise: Some(w_rec),
    }
}

/// Simulate `num_rollouts` independent rollouts of length `length`.
pub fn simulate_rollouts<T: Real>(
    model: &SystemModel<T>,
    noise: &NoiseConfig<T>,
    num_rollouts: usize,
    length: usize,
    seed: u64,
) -> Result<RolloutSet<T>> {
    simulate_rollouts_with(model, noise, num_rollouts, length, seed, &SimOptions::default())
}

pub fn simulate_rollouts_with<T: Real>(
    model: &SystemModel<T>,
    noise: &NoiseConfig<T>,
    num_rollouts: usize,
    length: usize,
    seed: u64,
    opts: &SimOptions<T>,
) -> Result<RolloutSet<T>> {
    if num_rollouts == 0 || length == 0 {
        return Err(Error::invalid(format!(
            "number of rollouts and rollout length must be positive (got N={num_rollouts}, T={length})"
        )));
    }
    noise.validate(opts.noiseless_override)?;
    if let Some(x0) = &opts.initial_state {
        if !opts.noiseless_override {
            return Err(Error::invalid("a pinned initial state requires the noiseless override"));
        }
        if x0.len() != model.state_dim() {
            return Err(Error::dim("initial state", model.state_dim(), x0.len()));
        }
    }
    let rollouts = (0..num_rollouts)
        .into_par_iter()
        .map(|i| {
            let mut rng = substream(seed, i as u64);
            simulate_one(model, noise, length, &mut rng, opts.initial_state.as_ref())
        })
        .collect();
    RolloutSet::from_rollouts(rollouts, Some(seed))
}

/// Per-channel sample standard deviations of the generated signals.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentReport<T: Real> {
    pub initial_state_std: Vec<T>,
    pub input_std: Vec<T>,
    pub noise_std: Option<Vec<T>>,
}

fn channel_std<'a, T: Real>(dim: usize, columns: impl Iterator<Item = nalgebra::DVectorView<'a, T>>) -> Vec<T> {
    let mut sum = vec![T::zero(); dim];
    let mut sumsq = vec![T::zero(); dim];
    let mut count = 0usize;
    for c in columns {
        for i in 0..dim {
            sum[i] += c[i];
            sumsq[i] += c[i] * c[i];
        }
        count += 1;
    }
    if count < 2 {
        return vec![T::zero(); dim];
    }
    let m = T::from_count(count);
    (0..dim)
        .map(|i| {
            let mean = sum[i] / m;
            let var = (sumsq[i] - m * mean * mean) / (m - T::one());
            var.max(T::zero()).sqrt()
        })
        .collect()
}

/// Sample standard deviations of x_0, u_t and w_t, for comparison against the
/// configured [`NoiseConfig`].
pub fn empirical_moment_check<T: Real>(rs: &RolloutSet<T>) -> Result<MomentReport<T>> {
    if rs.is_empty() {
        return Err(Error::invalid("moment check needs a nonempty rollout set"));
    }
    let n = rs.state_dim();
    let x0 = channel_std(n, rs.rollouts().iter().map(|r| r.states.column(0)));
    let u = channel_std(
        rs.input_dim(),
        rs.rollouts().iter().flat_map(|r| r.inputs.column_iter()),
    );
    let w = rs.has_noise().then(|| {
        channel_std(
            n,
            rs.rollouts()
                .iter()
                .flat_map(|r| r.noise.as_ref().expect("noise recorded").column_iter()),
        )
    });
    Ok(MomentReport {
        initial_state_std: x0,
        input_std: u,
        noise_std: w,
    })
}
