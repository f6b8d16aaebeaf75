//! Finite-sample error bounds for the weighted least-squares estimate.
//!
//! Two families live here. The data-independent bound needs the system
//! matrices and noise levels and is driven by the controllability-style
//! traces `tr(G_t)`. The data-dependent bound needs only the Gram matrices of
//! a batch plus a few scalar priors, so it can be used to pick `q` and `λ`.

use std::io::Write;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::estimator::{GramPieces, WlsConfig};
use crate::linalg::{spectral_norm, spectral_radius, symmetric_eigenvalues, SpdFactor};
use crate::scalar::Real;
use crate::sim::{NoiseConfig, SystemModel};

/// Default number of powers scanned by [`gelfand_envelope`].
pub const DEFAULT_HORIZON: usize = 500;

/// Extra powers past the horizon that must respect the envelope.
const POST_CHECK: usize = 10;

/// Constant in the Gram lower bound `ZQZ' ⪰ D/41 · I`.
const GRAM_CONSTANT: f64 = 41.0;

fn check_delta<T: Real>(delta: T) -> Result<()> {
    let upper = T::lit(2.0 / std::f64::consts::E);
    if delta.is_finite() && delta > T::zero() && delta < upper {
        Ok(())
    } else {
        Err(Error::invalid(format!("delta must lie in (0, 2/e), got {delta}")))
    }
}

fn check_c<T: Real>(c: T) -> Result<()> {
    if c.is_finite() && c > T::zero() {
        Ok(())
    } else {
        Err(Error::invalid(format!("c must be positive, got {c}")))
    }
}

fn check_nonneg<T: Real>(v: T, name: &str) -> Result<()> {
    if v.is_finite() && v >= T::zero() {
        Ok(())
    } else {
        Err(Error::invalid(format!("{name} must be finite and >= 0, got {v}")))
    }
}

/// `log(2/δ)/c + 1`.
fn tail_factor<T: Real>(delta: T, c: T) -> T {
    (T::lit(2.0) / delta).ln() / c + T::one()
}

/// `log(9^n/δ)`.
fn net_log<T: Real>(n: usize, delta: T) -> T {
    T::from_count(n) * T::lit(9.0).ln() - delta.ln()
}

/// `tr(G_0), …, tr(G_{t_max})` where
/// `G_t = Σ_{i≤t} A^i A^i' + Σ_{i<t} A^i B B' A^i'`.
pub fn trace_g_sequence<T: Real>(model: &SystemModel<T>, t_max: usize) -> Vec<T> {
    let n = model.state_dim();
    let mut out = Vec::with_capacity(t_max + 1);
    let mut power = DMatrix::<T>::identity(n, n);
    let mut acc = T::from_count(n);
    out.push(acc);
    for _ in 0..t_max {
        acc += (&power * model.b()).norm_squared();
        power = model.a() * &power;
        acc += power.norm_squared();
        out.push(acc);
    }
    out
}

pub fn trace_g<T: Real>(model: &SystemModel<T>, t: usize) -> T {
    *trace_g_sequence(model, t).last().expect("sequence is never empty")
}

/// `N Σ_{t<T} 41 (tr(G_t) + p)(log(2/δ)/c + 1) σ_max²`. Zero when N or T is zero.
pub fn g_total<T: Real>(
    model: &SystemModel<T>,
    noise: &NoiseConfig<T>,
    rollouts: usize,
    length: usize,
    delta: T,
    c: T,
) -> Result<T> {
    check_delta(delta)?;
    check_c(c)?;
    if rollouts == 0 || length == 0 {
        return Ok(T::zero());
    }
    let p = T::from_count(model.input_dim());
    let traces = trace_g_sequence(model, length - 1);
    let sum = traces.iter().fold(T::zero(), |acc, &tr| acc + tr + p);
    let s = noise.sigma_max();
    Ok(T::from_count(rollouts) * T::lit(GRAM_CONSTANT) * sum * tail_factor(delta, c) * s * s)
}

/// One system together with the amount of data collected from it.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemData<T: Real> {
    pub model: SystemModel<T>,
    pub noise: NoiseConfig<T>,
    pub rollouts: usize,
    pub length: usize,
}

impl<T: Real> SystemData<T> {
    pub fn num_samples(&self) -> usize {
        self.rollouts * self.length
    }
}

/// Everything the data-independent bound depends on.
#[derive(Debug, Clone, PartialEq)]
pub struct IndependentInputs<T: Real> {
    pub true_sys: SystemData<T>,
    pub aux_sys: SystemData<T>,
    pub q: T,
    pub delta: T,
    /// The unnamed positive constant of the Hanson-Wright tail.
    pub c: T,
    /// `‖δ_Θ‖` or an upper bound on it.
    pub delta_theta_norm: T,
}

impl<T: Real> IndependentInputs<T> {
    pub fn validate(&self) -> Result<()> {
        check_delta(self.delta)?;
        check_c(self.c)?;
        check_nonneg(self.q, "q")?;
        check_nonneg(self.delta_theta_norm, "delta_theta_norm")?;
        self.true_sys.noise.validate(false)?;
        self.aux_sys.noise.validate(false)?;
        let (t, a) = (&self.true_sys.model, &self.aux_sys.model);
        if t.state_dim() != a.state_dim() || t.input_dim() != a.input_dim() {
            return Err(Error::dim(
                "auxiliary system",
                format!("n={}, p={}", t.state_dim(), t.input_dim()),
                format!("n={}, p={}", a.state_dim(), a.input_dim()),
            ));
        }
        if self.true_sys.num_samples() == 0 {
            return Err(Error::invalid("the true system needs at least one sample"));
        }
        Ok(())
    }

    /// `q`, or 0 when there are no auxiliary samples.
    pub fn effective_q(&self) -> T {
        if self.aux_sys.num_samples() == 0 {
            T::zero()
        } else {
            self.q
        }
    }

    /// `N_rT_r σ̄²_min + q N_pT_p σ̂²_min`.
    pub fn excitation(&self) -> T {
        let st = self.true_sys.noise.sigma_min();
        let sa = self.aux_sys.noise.sigma_min();
        T::from_count(self.true_sys.num_samples()) * st * st
            + self.effective_q() * T::from_count(self.aux_sys.num_samples()) * sa * sa
    }
}

struct Totals<T> {
    g_true: T,
    g_aux: T,
    excitation: T,
    q: T,
}

fn totals<T: Real>(inputs: &IndependentInputs<T>) -> Result<Totals<T>> {
    inputs.validate()?;
    let g = |s: &SystemData<T>| g_total(&s.model, &s.noise, s.rollouts, s.length, inputs.delta, inputs.c);
    let excitation = inputs.excitation();
    if excitation <= T::zero() {
        return Err(Error::invalid(
            "excitation N_r T_r sigma_min^2 + q N_p T_p sigma_min^2 is zero",
        ));
    }
    Ok(Totals {
        g_true: g(&inputs.true_sys)?,
        g_aux: g(&inputs.aux_sys)?,
        excitation,
        q: inputs.effective_q(),
    })
}

/// `(ḡ + q ĝ)/(N_rT_r σ̄²_min + q N_pT_p σ̂²_min) + 1`.
pub fn phi<T: Real>(inputs: &IndependentInputs<T>) -> Result<T> {
    let t = totals(inputs)?;
    Ok((t.g_true + t.q * t.g_aux) / t.excitation + T::one())
}

/// Whether both sample counts reach `max(41, 200(n+p) log(12/δ))`. Only the
/// true count matters when the auxiliary data carries no weight.
pub fn sample_size_hypothesis<T: Real>(
    n: usize,
    p: usize,
    true_samples: usize,
    aux_samples: usize,
    q: T,
    delta: T,
) -> bool {
    let need = T::lit(GRAM_CONSTANT).max(T::lit(200.0) * T::from_count(n + p) * (T::lit(12.0) / delta).ln());
    let enough = |s: usize| T::from_count(s) >= need;
    enough(true_samples) && (q <= T::zero() || aux_samples == 0 || enough(aux_samples))
}

/// Lower bound `D/41` on `λ_min(ZQZ')` that holds with high probability.
pub fn prop1_threshold<T: Real>(inputs: &IndependentInputs<T>) -> Result<T> {
    inputs.validate()?;
    Ok(inputs.excitation() / T::lit(GRAM_CONSTANT))
}

/// A bound split into its named terms. `total` is their exact sum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport<T: Real> {
    pub q: T,
    pub lambda: T,
    pub delta: T,
    pub total: T,
    pub noise_term: T,
    pub model_difference_term: T,
    pub regularization_term: T,
    pub hypothesis_satisfied: bool,
    /// φ for the data-independent bound, `log det V̄` for the data-dependent one.
    pub phi_or_logdet: T,
    /// Gram threshold `D/41` or the exact `λ_min(ZQZ' + λI)`.
    pub lambda_min: T,
    pub g_true: Option<T>,
    pub g_aux: Option<T>,
    pub gamma: Option<T>,
}

impl<T: Real> BoundReport<T> {
    pub const CSV_HEADER: [&'static str; 10] = [
        "q",
        "lambda",
        "delta",
        "total",
        "noise_term",
        "model_difference_term",
        "regularization_term",
        "hypothesis_satisfied",
        "phi_or_logdet",
        "lambda_min",
    ];

    pub fn csv_fields(&self) -> Vec<String> {
        vec![
            self.q.to_csv_string(),
            self.lambda.to_csv_string(),
            self.delta.to_csv_string(),
            self.total.to_csv_string(),
            self.noise_term.to_csv_string(),
            self.model_difference_term.to_csv_string(),
            self.regularization_term.to_csv_string(),
            self.hypothesis_satisfied.to_string(),
            self.phi_or_logdet.to_csv_string(),
            self.lambda_min.to_csv_string(),
        ]
    }

    pub fn write_csv<W: Write>(reports: &[Self], out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(Self::CSV_HEADER)?;
        for r in reports {
            w.write_record(r.csv_fields())?;
        }
        w.flush()?;
        Ok(())
    }
}

/// High-probability bound on `‖Θ_WLS − Θ‖` for `λ = 0` in terms of the
/// system parameters only.
pub fn bound_data_independent<T: Real>(inputs: &IndependentInputs<T>) -> Result<BoundReport<T>> {
    let t = totals(inputs)?;
    let n = inputs.true_sys.model.state_dim();
    let p = inputs.true_sys.model.input_dim();
    let phi = (t.g_true + t.q * t.g_aux) / t.excitation + T::one();
    let sigma = inputs
        .true_sys
        .noise
        .sigma_w
        .max(t.q.sqrt() * inputs.aux_sys.noise.sigma_w);
    let radicand = net_log(n, inputs.delta) + T::from_count(n + p) * phi.ln();
    let noise_term = T::lit(20.0) * sigma * radicand.sqrt() / t.excitation.sqrt();
    let model_difference_term = t.q * inputs.delta_theta_norm * t.g_aux / t.excitation;
    Ok(BoundReport {
        q: inputs.q,
        lambda: T::zero(),
        delta: inputs.delta,
        total: noise_term + model_difference_term,
        noise_term,
        model_difference_term,
        regularization_term: T::zero(),
        hypothesis_satisfied: sample_size_hypothesis(
            n,
            p,
            inputs.true_sys.num_samples(),
            inputs.aux_sys.num_samples(),
            t.q,
            inputs.delta,
        ),
        phi_or_logdet: phi,
        lambda_min: t.excitation / T::lit(GRAM_CONSTANT),
        g_true: Some(t.g_true),
        g_aux: Some(t.g_aux),
        gamma: None,
    })
}

/// Constants with `‖A^i‖ ≤ κ γ^i` for every `i ≥ 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Envelope<T: Real> {
    pub kappa: T,
    pub gamma: T,
    pub spectral_radius: T,
}

/// Build a geometric envelope with `γ = (ρ(A) + 1)/2` and `κ` the largest
/// ratio `‖A^i‖/γ^i` seen up to `horizon`.
pub fn gelfand_envelope<T: Real>(a: &DMatrix<T>, horizon: usize) -> Result<Envelope<T>> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    let rho = spectral_radius(a)?;
    if rho >= T::one() {
        return Err(Error::Unstable(rho.as_f64()));
    }
    let gamma = (rho + T::one()) / T::lit(2.0);
    // Powers of A/γ give the ratios directly and never underflow.
    let scaled = a / gamma;
    let n = a.nrows();
    let mut power = DMatrix::<T>::identity(n, n);
    let mut ratios = Vec::with_capacity(horizon + POST_CHECK + 1);
    ratios.push(spectral_norm(&power)?.max(T::one()));
    for _ in 0..horizon + POST_CHECK {
        power = &scaled * &power;
        ratios.push(spectral_norm(&power)?);
    }
    let kappa = ratios[..=horizon].iter().fold(T::one(), |k, &r| k.max(r));

    let tail = &ratios[horizon.saturating_sub(POST_CHECK - 1)..=horizon];
    let slack = T::one() + T::lit(1e-9);
    let monotone = tail.windows(2).all(|w| w[1] <= w[0] * slack);
    let negligible = tail.iter().all(|&r| r <= T::lit(1e-6) * kappa);
    let post_ok = ratios[horizon + 1..].iter().all(|&r| r <= kappa * slack);
    if !(monotone || negligible) || !post_ok {
        return Err(Error::HorizonTooSmall(horizon));
    }
    Ok(Envelope {
        kappa,
        gamma,
        spectral_radius: rho,
    })
}

/// `nκ²/(1−γ²) + nκ²‖B‖²/(1−γ²)`, a bound on `sup_t tr(G_t)`.
pub fn prop4_trace_bound<T: Real>(model: &SystemModel<T>, kappa: T, gamma: T) -> Result<T> {
    if !(gamma.is_finite() && gamma > T::zero() && gamma < T::one()) {
        return Err(Error::invalid(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    check_nonneg(kappa, "kappa")?;
    let n = T::from_count(model.state_dim());
    let b = spectral_norm(model.b())?;
    let base = n * kappa * kappa / (T::one() - gamma * gamma);
    Ok(base + base * b * b)
}

/// The constant `γ` dominating `41(tr(G_t)+p)(log(2/δ)/c+1)σ²_max` for both
/// systems and every `t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenefitGamma<T: Real> {
    pub value: T,
    pub true_term: T,
    pub aux_term: T,
}

pub fn corollary1_gamma<T: Real>(
    true_model: &SystemModel<T>,
    true_noise: &NoiseConfig<T>,
    aux_model: &SystemModel<T>,
    aux_noise: &NoiseConfig<T>,
    delta: T,
    c: T,
    horizon: usize,
) -> Result<BenefitGamma<T>> {
    check_delta(delta)?;
    check_c(c)?;
    let term = |model: &SystemModel<T>, noise: &NoiseConfig<T>| -> Result<T> {
        let env = gelfand_envelope(model.a(), horizon)?;
        let trace = prop4_trace_bound(model, env.kappa, env.gamma)?;
        let s = noise.sigma_max();
        Ok(T::lit(GRAM_CONSTANT) * (trace + T::from_count(model.input_dim())) * tail_factor(delta, c) * s * s)
    };
    let true_term = term(true_model, true_noise)?;
    let aux_term = term(aux_model, aux_noise)?;
    Ok(BenefitGamma {
        value: true_term.max(aux_term),
        true_term,
        aux_term,
    })
}

/// Both sides of the sufficient condition for auxiliary data to tighten
/// the data-independent bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenefitCheck<T: Real> {
    pub holds: bool,
    pub lhs: T,
    pub rhs: T,
}

pub fn check_aux_benefit<T: Real>(inputs: &IndependentInputs<T>, gamma: T) -> Result<BenefitCheck<T>> {
    inputs.validate()?;
    if inputs.q <= T::zero() {
        return Err(Error::invalid("the benefit condition needs q > 0"));
    }
    if inputs.aux_sys.num_samples() == 0 {
        return Err(Error::invalid("the benefit condition needs auxiliary samples"));
    }
    if !(gamma.is_finite() && gamma > T::zero()) {
        return Err(Error::invalid(format!("gamma must be positive, got {gamma}")));
    }
    let tr = &inputs.true_sys;
    let au = &inputs.aux_sys;
    let n = tr.model.state_dim();
    let np = T::from_count(n + tr.model.input_dim());
    let g_true = g_total(&tr.model, &tr.noise, tr.rollouts, tr.length, inputs.delta, inputs.c)?;
    let sbar = tr.noise.sigma_min();
    let shat = au.noise.sigma_min();
    let smin = sbar.min(shat);
    let d_true = T::from_count(tr.num_samples()) * sbar * sbar;
    let d_aux = T::from_count(au.num_samples()) * shat * shat;
    let base = net_log(n, inputs.delta);

    let lhs = tr.noise.sigma_w * (base + np * (g_true / d_true + T::one()).ln()).sqrt() / d_true.sqrt();
    let sigma = (tr.noise.sigma_w / inputs.q.sqrt()).max(au.noise.sigma_w);
    let rhs = sigma * (base + np * (gamma / (smin * smin) + T::one()).ln()).sqrt() / d_aux.sqrt()
        + inputs.delta_theta_norm * gamma / (T::lit(20.0) * shat * shat);
    Ok(BenefitCheck {
        holds: lhs > rhs,
        lhs,
        rhs,
    })
}

/// Scalar priors for the data-dependent bound at one `(q, λ)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DependentInputs<T: Real> {
    pub q: T,
    pub lambda: T,
    pub delta: T,
    pub sigma_w_true: T,
    pub sigma_w_aux: T,
    /// `‖δ_Θ‖` or an upper bound on it.
    pub delta_theta_norm: T,
    /// `‖Θ‖` or an upper bound on it.
    pub theta_norm: T,
}

impl<T: Real> DependentInputs<T> {
    pub fn validate(&self) -> Result<()> {
        WlsConfig::new(self.q, self.lambda)?;
        if self.lambda <= T::zero() {
            return Err(Error::invalid(format!(
                "the data-dependent bound needs lambda > 0, got {}",
                self.lambda
            )));
        }
        if !(self.delta.is_finite() && self.delta > T::zero() && self.delta < T::one()) {
            return Err(Error::invalid(format!("delta must lie in (0, 1), got {}", self.delta)));
        }
        check_nonneg(self.sigma_w_true, "sigma_w_true")?;
        check_nonneg(self.sigma_w_aux, "sigma_w_aux")?;
        check_nonneg(self.delta_theta_norm, "delta_theta_norm")?;
        check_nonneg(self.theta_norm, "theta_norm")
    }
}

/// Computable bound on `‖Θ_WLS − Θ‖` for `λ > 0`, from the batch Gram
/// matrices and the priors.
pub fn bound_data_dependent<T: Real>(pieces: &GramPieces<T>, inputs: &DependentInputs<T>) -> Result<BoundReport<T>> {
    inputs.validate()?;
    let q = pieces.effective_q(inputs.q);
    let lambda = inputs.lambda;
    let gram = pieces.weighted_gram(q);
    let n = pieces.state_dim();

    let mu = symmetric_eigenvalues(&gram)?;
    let logdet = mu
        .iter()
        .fold(T::zero(), |acc, &m| acc + (m.max(T::zero()) / lambda).ln_1p());
    let lambda_min = mu
        .iter()
        .fold(T::max_value().unwrap_or_else(|| T::lit(f64::MAX)), |a, &m| a.min(m))
        .max(T::zero())
        + lambda;

    let sigma = inputs.sigma_w_true.max(q.sqrt() * inputs.sigma_w_aux);
    let radicand = T::lit(32.0 / 9.0) * (net_log(n, inputs.delta) + T::lit(0.5) * logdet);
    let noise_term = sigma * radicand.sqrt() / lambda_min.sqrt();

    let model_difference_term = if q > T::zero() && inputs.delta_theta_norm > T::zero() {
        let cfg = WlsConfig { q, lambda };
        let factor = SpdFactor::new(&pieces.regularized_gram(&cfg), "ZQZ' + lambda*I")?;
        // ‖ẐẐ'M⁻¹‖ = ‖M⁻¹ẐẐ'‖ since both factors are symmetric.
        q * inputs.delta_theta_norm * spectral_norm(&factor.solve(&pieces.zz_aux)?)?
    } else {
        T::zero()
    };
    let regularization_term = inputs.theta_norm * lambda / lambda_min;

    Ok(BoundReport {
        q: inputs.q,
        lambda,
        delta: inputs.delta,
        total: noise_term + model_difference_term + regularization_term,
        noise_term,
        model_difference_term,
        regularization_term,
        hypothesis_satisfied: true,
        phi_or_logdet: logdet,
        lambda_min,
        g_true: None,
        g_aux: None,
        gamma: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(a: f64, b: f64) -> SystemModel<f64> {
        SystemModel::from_rows(1, 1, &[a], &[b]).unwrap()
    }

    fn inputs(q: f64) -> IndependentInputs<f64> {
        let sys = |a: f64, rollouts, length| SystemData {
            model: scalar(a, 1.0),
            noise: NoiseConfig::uniform(1.0),
            rollouts,
            length,
        };
        IndependentInputs {
            true_sys: sys(0.5, 2, 50),
            aux_sys: sys(0.6, 4, 100),
            q,
            delta: 0.1,
            c: 1.0,
            delta_theta_norm: 0.1,
        }
    }

    #[test]
    fn trace_at_zero_is_state_dim() {
        let m = SystemModel::from_rows(2, 1, &[0.3, 0.1, 0.0, 0.2], &[1.0, 2.0]).unwrap();
        assert_eq!(trace_g(&m, 0), 2.0);
    }

    #[test]
    fn trace_with_nilpotent_a() {
        let m = SystemModel::from_rows(2, 1, &[0.0; 4], &[1.0, 2.0]).unwrap();
        for t in 1..5 {
            assert_relative_eq!(trace_g(&m, t), 2.0 + 5.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn trace_scalar_example() {
        assert_relative_eq!(trace_g(&scalar(0.5, 1.0), 1), 2.25, epsilon = 1e-14);
    }

    #[test]
    fn g_total_single_step_and_linearity() {
        let m = SystemModel::from_rows(2, 1, &[0.3, 0.1, 0.0, 0.2], &[1.0, 2.0]).unwrap();
        let noise = NoiseConfig::new(1.0, 2.0, 0.5);
        let g1 = g_total(&m, &noise, 3, 1, 0.1, 2.0).unwrap();
        let expect = 3.0 * 41.0 * 3.0 * ((20.0f64).ln() / 2.0 + 1.0) * 4.0;
        assert_relative_eq!(g1, expect, max_relative = 1e-14);
        let a = g_total(&m, &noise, 5, 7, 0.1, 1.0).unwrap();
        let b = g_total(&m, &noise, 10, 7, 0.1, 1.0).unwrap();
        assert_eq!(b, 2.0 * a);
    }

    #[test]
    fn delta_range_enforced() {
        let m = scalar(0.5, 1.0);
        let noise = NoiseConfig::uniform(1.0);
        for d in [0.0, 0.8, -0.1, f64::NAN] {
            assert!(matches!(g_total(&m, &noise, 1, 1, d, 1.0), Err(Error::InvalidInput(_))));
        }
    }

    #[test]
    fn phi_q_zero_ignores_aux() {
        let i = inputs(0.0);
        let g = g_total(&i.true_sys.model, &i.true_sys.noise, 2, 50, 0.1, 1.0).unwrap();
        assert_relative_eq!(phi(&i).unwrap(), g / 100.0 + 1.0, max_relative = 1e-14);
    }

    #[test]
    fn independent_bound_special_cases() {
        let r = bound_data_independent(&inputs(0.0)).unwrap();
        assert_eq!(r.model_difference_term, 0.0);
        assert_eq!(r.regularization_term, 0.0);
        let mut i = inputs(1.0);
        i.delta_theta_norm = 0.0;
        let r = bound_data_independent(&i).unwrap();
        assert_eq!(r.model_difference_term, 0.0);
        assert_eq!(r.total, r.noise_term);
    }

    #[test]
    fn empty_aux_acts_like_q_zero() {
        let mut i = inputs(1.0);
        i.aux_sys.rollouts = 0;
        let a = bound_data_independent(&i).unwrap();
        let b = bound_data_independent(&inputs(0.0)).unwrap();
        assert_eq!(a.total, b.total);
    }

    #[test]
    fn threshold_arithmetic() {
        let mut i = inputs(0.0);
        i.true_sys.rollouts = 1;
        i.true_sys.length = 41;
        assert_relative_eq!(prop1_threshold(&i).unwrap(), 1.0, epsilon = 1e-15);
        let one = prop1_threshold(&inputs(1.0)).unwrap();
        let two = prop1_threshold(&inputs(2.0)).unwrap();
        let base = prop1_threshold(&inputs(0.0)).unwrap();
        assert_relative_eq!(two - base, 2.0 * (one - base), max_relative = 1e-14);
    }

    #[test]
    fn hypothesis_flag() {
        assert!(!sample_size_hypothesis(2, 1, 100, 100, 1.0, 0.1));
        let need = (600.0 * (120.0f64).ln()).ceil() as usize;
        assert!(sample_size_hypothesis(2, 1, need, need, 1.0, 0.1));
        assert!(sample_size_hypothesis(2, 1, need, 1, 0.0, 0.1));
        assert!(!sample_size_hypothesis(2, 1, need, 1, 1.0, 0.1));
    }

    #[test]
    fn envelope_of_zero_and_scaled_identity() {
        let e = gelfand_envelope(&DMatrix::<f64>::zeros(3, 3), DEFAULT_HORIZON).unwrap();
        assert_eq!((e.kappa, e.gamma), (1.0, 0.5));
        let e = gelfand_envelope(&(DMatrix::<f64>::identity(2, 2) * 0.5), DEFAULT_HORIZON).unwrap();
        assert_relative_eq!(e.gamma, 0.75, epsilon = 1e-12);
        assert_relative_eq!(e.kappa, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn envelope_rejects_unstable() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.2]);
        assert!(matches!(gelfand_envelope(&a, 100), Err(Error::Unstable(_))));
    }

    #[test]
    fn envelope_needs_long_enough_horizon() {
        let a = DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 0.0, 0.5]);
        assert!(matches!(gelfand_envelope(&a, 2), Err(Error::HorizonTooSmall(2))));
        assert!(gelfand_envelope(&a, 200).unwrap().kappa > 1.0);
    }

    #[test]
    fn trace_bound_arithmetic() {
        let zero = SystemModel::from_rows(3, 1, &[0.0; 9], &[0.0; 3]).unwrap();
        assert_relative_eq!(prop4_trace_bound(&zero, 1.0, 0.5).unwrap(), 4.0, epsilon = 1e-14);
        assert!(prop4_trace_bound(&zero, 1.0, 1.0).is_err());
        let m = SystemModel::from_rows(1, 1, &[0.2], &[1.5]).unwrap();
        let m2 = SystemModel::from_rows(1, 1, &[0.2], &[3.0]).unwrap();
        let base = 1.0 / (1.0 - 0.36);
        let first = prop4_trace_bound(&m, 1.0, 0.6).unwrap() - base;
        let second = prop4_trace_bound(&m2, 1.0, 0.6).unwrap() - base;
        assert_relative_eq!(second, 4.0 * first, max_relative = 1e-14);
    }

    #[test]
    fn gamma_symmetric_for_identical_systems() {
        let m = scalar(0.5, 1.0);
        let n = NoiseConfig::uniform(1.0);
        let g = corollary1_gamma(&m, &n, &m, &n, 0.1, 1.0, DEFAULT_HORIZON).unwrap();
        assert_eq!(g.true_term, g.aux_term);
        assert_eq!(g.value, g.true_term);
    }

    #[test]
    fn benefit_fails_for_huge_model_difference() {
        let mut i = inputs(1.0);
        i.delta_theta_norm = 1e6;
        let g = corollary1_gamma(
            &i.true_sys.model,
            &i.true_sys.noise,
            &i.aux_sys.model,
            &i.aux_sys.noise,
            0.1,
            1.0,
            DEFAULT_HORIZON,
        )
        .unwrap();
        let check = check_aux_benefit(&i, g.value).unwrap();
        assert!(!check.holds);
        assert!(check.rhs > check.lhs);
        assert!(check_aux_benefit(&inputs(0.0), g.value).is_err());
    }

    fn pieces() -> GramPieces<f64> {
        use crate::estimator::assemble_batch;
        use crate::sim::simulate_rollouts;
        let noise = NoiseConfig::uniform(1.0);
        let t = simulate_rollouts(&scalar(0.5, 1.0), &noise, 3, 10, 1).unwrap();
        let a = simulate_rollouts(&scalar(0.6, 1.0), &noise, 3, 20, 2).unwrap();
        assemble_batch(&t, &a).unwrap().pieces()
    }

    fn dep(q: f64) -> DependentInputs<f64> {
        DependentInputs {
            q,
            lambda: 1.0,
            delta: 0.05,
            sigma_w_true: 1.0,
            sigma_w_aux: 1.0,
            delta_theta_norm: 0.1,
            theta_norm: 0.6,
        }
    }

    #[test]
    fn dependent_bound_special_cases() {
        let p = pieces();
        let r = bound_data_dependent(&p, &dep(0.0)).unwrap();
        assert_eq!(r.model_difference_term, 0.0);
        let mut i = dep(1.0);
        i.theta_norm = 0.0;
        let r = bound_data_dependent(&p, &i).unwrap();
        assert_eq!(r.regularization_term, 0.0);
        assert!(r.model_difference_term > 0.0);
        assert_eq!(r.total, r.noise_term + r.model_difference_term + r.regularization_term);
    }

    #[test]
    fn dependent_bound_needs_positive_lambda() {
        let mut i = dep(1.0);
        i.lambda = 0.0;
        assert!(matches!(
            bound_data_dependent(&pieces(), &i),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn report_csv_header() {
        let r = bound_data_dependent(&pieces(), &dep(1.0)).unwrap();
        let mut buf = Vec::new();
        BoundReport::write_csv(&[r], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with(
            "q,lambda,delta,total,noise_term,model_difference_term,regularization_term,hypothesis_satisfied,phi_or_logdet,lambda_min\n"
        ));
        assert_eq!(text.lines().count(), 2);
    }
}
