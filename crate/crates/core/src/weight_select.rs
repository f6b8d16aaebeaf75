//! Pick the auxiliary weight `q` (and optionally `λ`) by minimizing the
//! data-dependent bound over a grid.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;

use crate::bounds::{bound_data_dependent, BoundReport, DependentInputs};
use crate::error::{Error, Result};
use crate::estimator::{estimation_error, wls_from_pieces, BatchData, GramPieces, WlsConfig};
use crate::scalar::Real;
use crate::sim::SystemModel;

/// Cartesian grid of `(q, λ)` candidates.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepGrid<T: Real> {
    q_values: Vec<T>,
    lambda_values: Vec<T>,
}

impl<T: Real> SweepGrid<T> {
    /// `q_min, q_min + q_step, …` up to `q_max` inclusive.
    pub fn range(q_min: T, q_max: T, q_step: T, lambda_values: Vec<T>) -> Result<Self> {
        if !(q_min.is_finite() && q_max.is_finite() && q_min >= T::zero() && q_min <= q_max) {
            return Err(Error::invalid(format!(
                "need 0 <= q_min <= q_max, got {q_min} and {q_max}"
            )));
        }
        if !(q_step.is_finite() && q_step > T::zero()) {
            return Err(Error::invalid(format!("q_step must be positive, got {q_step}")));
        }
        let steps = ((q_max - q_min) / q_step + T::lit(1e-9)).floor();
        let count = steps.to_usize().ok_or_else(|| Error::invalid("q grid is too large"))? + 1;
        let q_values = (0..count).map(|i| q_min + T::from_count(i) * q_step).collect();
        Self::explicit(q_values, lambda_values)
    }

    pub fn explicit(q_values: Vec<T>, lambda_values: Vec<T>) -> Result<Self> {
        if q_values.is_empty() {
            return Err(Error::invalid("q grid is empty"));
        }
        if lambda_values.is_empty() {
            return Err(Error::invalid("lambda list is empty"));
        }
        if let Some(q) = q_values.iter().find(|q| !(q.is_finite() && **q >= T::zero())) {
            return Err(Error::invalid(format!("grid q values must be >= 0, got {q}")));
        }
        if let Some(l) = lambda_values.iter().find(|l| !(l.is_finite() && **l > T::zero())) {
            return Err(Error::invalid(format!("grid lambda values must be > 0, got {l}")));
        }
        Ok(Self {
            q_values,
            lambda_values,
        })
    }

    pub fn q_values(&self) -> &[T] {
        &self.q_values
    }

    pub fn lambda_values(&self) -> &[T] {
        &self.lambda_values
    }

    /// All pairs, `λ` varying slowest.
    pub fn points(&self) -> Vec<(T, T)> {
        self.lambda_values
            .iter()
            .flat_map(|&l| self.q_values.iter().map(move |&q| (q, l)))
            .collect()
    }

    pub fn len(&self) -> usize {
        self.q_values.len() * self.lambda_values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Bound inputs shared by every grid point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Priors<T: Real> {
    pub delta: T,
    pub sigma_w_true: T,
    pub sigma_w_aux: T,
    pub delta_theta_norm: T,
    pub theta_norm: T,
}

impl<T: Real> Priors<T> {
    pub fn at(&self, q: T, lambda: T) -> DependentInputs<T> {
        DependentInputs {
            q,
            lambda,
            delta: self.delta,
            sigma_w_true: self.sigma_w_true,
            sigma_w_aux: self.sigma_w_aux,
            delta_theta_norm: self.delta_theta_norm,
            theta_norm: self.theta_norm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepPoint<T: Real> {
    pub q: T,
    pub lambda: T,
    pub report: BoundReport<T>,
    pub true_error: Option<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult<T: Real> {
    pub points: Vec<SweepPoint<T>>,
    chosen: usize,
}

fn rank<T: Real>(a: &SweepPoint<T>, b: &SweepPoint<T>) -> Ordering {
    let cmp = |x: T, y: T| x.partial_cmp(&y).unwrap_or(Ordering::Equal);
    cmp(a.report.total, b.report.total)
        .then(cmp(a.q, b.q))
        .then(cmp(a.lambda, b.lambda))
}

impl<T: Real> SweepResult<T> {
    fn new(points: Vec<SweepPoint<T>>) -> Self {
        let chosen = (0..points.len())
            .min_by(|&i, &j| rank(&points[i], &points[j]))
            .expect("grid is never empty");
        Self { points, chosen }
    }

    pub fn chosen(&self) -> &SweepPoint<T> {
        &self.points[self.chosen]
    }

    pub fn chosen_index(&self) -> usize {
        self.chosen
    }

    /// One row per grid point, then the chosen point repeated with `chosen=1`.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = BoundReport::<T>::CSV_HEADER.to_vec();
        header.extend(["true_error", "chosen"]);
        w.write_record(&header)?;
        let row = |p: &SweepPoint<T>, flag: &str| {
            let mut r = p.report.csv_fields();
            r.push(p.true_error.map(|e| e.to_csv_string()).unwrap_or_default());
            r.push(flag.to_string());
            r
        };
        for p in &self.points {
            w.write_record(row(p, "0"))?;
        }
        w.write_record(row(self.chosen(), "1"))?;
        w.flush()?;
        Ok(())
    }
}

fn evaluate<T: Real>(
    pieces: &GramPieces<T>,
    grid: &SweepGrid<T>,
    priors: &Priors<T>,
    truth: Option<&SystemModel<T>>,
) -> Result<SweepResult<T>> {
    let points = grid
        .points()
        .into_par_iter()
        .map(|(q, lambda)| {
            let report = bound_data_dependent(pieces, &priors.at(q, lambda))?;
            let true_error = match truth {
                Some(model) => {
                    let est = wls_from_pieces(pieces, &WlsConfig::new(q, lambda)?)?;
                    Some(estimation_error(&est, model)?)
                }
                None => None,
            };
            Ok(SweepPoint {
                q,
                lambda,
                report,
                true_error,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepResult::new(points))
}

/// Evaluate the data-dependent bound at every grid point and choose the
/// smallest, breaking ties by smaller `q`, then smaller `λ`.
pub fn sweep<T: Real>(data: &BatchData<T>, grid: &SweepGrid<T>, priors: &Priors<T>) -> Result<SweepResult<T>> {
    evaluate(&data.pieces(), grid, priors, None)
}

/// [`sweep`] that also records the true estimation error at each point.
pub fn sweep_with_truth<T: Real>(
    data: &BatchData<T>,
    grid: &SweepGrid<T>,
    priors: &Priors<T>,
    truth: &SystemModel<T>,
) -> Result<SweepResult<T>> {
    evaluate(&data.pieces(), grid, priors, Some(truth))
}

/// [`sweep_with_truth`] on precomputed Gram pieces.
pub fn sweep_pieces<T: Real>(
    pieces: &GramPieces<T>,
    grid: &SweepGrid<T>,
    priors: &Priors<T>,
    truth: Option<&SystemModel<T>>,
) -> Result<SweepResult<T>> {
    evaluate(pieces, grid, priors, truth)
}
