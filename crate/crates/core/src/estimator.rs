//! Batch matrices and the (regularized) weighted least-squares estimate
//!
//! ```text
//! Θ_WLS = X Q Z' (Z Q Z' + λ I)^{-1},   Q = diag(I, q I)
//! ```
//!
//! Q is never formed: true-system columns carry weight 1 and auxiliary
//! columns weight q, so every weighted product splits into a true part plus
//! q times an auxiliary part.

use std::io::{BufRead, Write};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{spectral_norm, SpdFactor};
use crate::scalar::Real;
use crate::sim::{RolloutSet, SystemModel};

/// Stacked data matrices: X (next states), Z (state-input regressors) and,
/// when the noise was recorded, W. Columns `0..column_split` come from the
/// true system, the rest from the auxiliary system.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchData<T: Real> {
    pub x: DMatrix<T>,
    pub z: DMatrix<T>,
    pub w: Option<DMatrix<T>>,
    pub column_split: usize,
    state_dim: usize,
    input_dim: usize,
}

fn stack_rollouts<T: Real>(
    rs: &RolloutSet<T>,
    x: &mut DMatrix<T>,
    z: &mut DMatrix<T>,
    w: &mut Option<DMatrix<T>>,
    offset: usize,
) {
    let n = rs.state_dim();
    let mut col = offset;
    for r in rs.rollouts() {
        let len = r.len();
        x.columns_mut(col, len).copy_from(&r.states.columns(1, len));
        z.view_mut((0, col), (n, len)).copy_from(&r.states.columns(0, len));
        z.view_mut((n, col), (rs.input_dim(), len)).copy_from(&r.inputs);
        if let (Some(wm), Some(rw)) = (w.as_mut(), r.noise.as_ref()) {
            wm.columns_mut(col, len).copy_from(rw);
        }
        col += len;
    }
}

/// Stack the true rollouts followed by the auxiliary rollouts. An empty
/// auxiliary set is allowed and yields a true-only batch.
pub fn assemble_batch<T: Real>(true_data: &RolloutSet<T>, aux_data: &RolloutSet<T>) -> Result<BatchData<T>> {
    if true_data.is_empty() {
        return Err(Error::invalid("true-system data must contain at least one rollout"));
    }
    let (n, p) = (true_data.state_dim(), true_data.input_dim());
    if aux_data.state_dim() != n || aux_data.input_dim() != p {
        return Err(Error::dim(
            "auxiliary rollouts",
            format!("n={n}, p={p}"),
            format!("n={}, p={}", aux_data.state_dim(), aux_data.input_dim()),
        ));
    }
    let split = true_data.num_samples();
    let total = split + aux_data.num_samples();
    let mut x = DMatrix::zeros(n, total);
    let mut z = DMatrix::zeros(n + p, total);
    let with_noise = true_data.has_noise() && aux_data.has_noise();
    let mut w = with_noise.then(|| DMatrix::zeros(n, total));
    stack_rollouts(true_data, &mut x, &mut z, &mut w, 0);
    stack_rollouts(aux_data, &mut x, &mut z, &mut w, split);
    Ok(BatchData {
        x,
        z,
        w,
        column_split: split,
        state_dim: n,
        input_dim: p,
    })
}

impl<T: Real> BatchData<T> {
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn num_columns(&self) -> usize {
        self.x.ncols()
    }

    pub fn num_aux_columns(&self) -> usize {
        self.num_columns() - self.column_split
    }

    pub fn true_z(&self) -> DMatrix<T> {
        self.z.columns(0, self.column_split).into_owned()
    }

    pub fn aux_z(&self) -> DMatrix<T> {
        self.z.columns(self.column_split, self.num_aux_columns()).into_owned()
    }

    /// Δ: zero on the true columns, δ_Θ ẑ_t on the auxiliary columns.
    pub fn delta_matrix(&self, delta_theta: &DMatrix<T>) -> Result<DMatrix<T>> {
        self.check_theta_shape(delta_theta, "delta_theta")?;
        let mut delta = DMatrix::zeros(self.state_dim, self.num_columns());
        if self.num_aux_columns() > 0 {
            delta
                .columns_mut(self.column_split, self.num_aux_columns())
                .copy_from(&(delta_theta * self.aux_z()));
        }
        Ok(delta)
    }

    /// Gram and cross products split by origin.
    pub fn pieces(&self) -> GramPieces<T> {
        let zt = self.z.columns(0, self.column_split);
        let za = self.z.columns(self.column_split, self.num_aux_columns());
        let xt = self.x.columns(0, self.column_split);
        let xa = self.x.columns(self.column_split, self.num_aux_columns());
        let sym = |g: DMatrix<T>| (&g + g.transpose()) * T::lit(0.5);
        GramPieces {
            zz_true: sym(zt * zt.transpose()),
            zz_aux: sym(za * za.transpose()),
            xz_true: xt * zt.transpose(),
            xz_aux: xa * za.transpose(),
            state_dim: self.state_dim,
            has_aux: self.num_aux_columns() > 0,
        }
    }

    fn check_theta_shape(&self, m: &DMatrix<T>, what: &str) -> Result<()> {
        let want = (self.state_dim, self.state_dim + self.input_dim);
        if m.shape() != want {
            return Err(Error::dim(
                what,
                format!("{}x{}", want.0, want.1),
                format!("{}x{}", m.nrows(), m.ncols()),
            ));
        }
        Ok(())
    }
}

/// Sufficient statistics of a batch: Z̄Z̄', ẐẐ', X̄Z̄', X̂Ẑ'.
#[derive(Debug, Clone, PartialEq)]
pub struct GramPieces<T: Real> {
    pub zz_true: DMatrix<T>,
    pub zz_aux: DMatrix<T>,
    pub xz_true: DMatrix<T>,
    pub xz_aux: DMatrix<T>,
    state_dim: usize,
    has_aux: bool,
}

impl<T: Real> GramPieces<T> {
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn has_aux(&self) -> bool {
        self.has_aux
    }

    /// The weight actually applied: q, or 0 when there is no auxiliary data.
    pub fn effective_q(&self, q: T) -> T {
        if self.has_aux {
            q
        } else {
            T::zero()
        }
    }

    /// ZQZ'.
    pub fn weighted_gram(&self, q: T) -> DMatrix<T> {
        &self.zz_true + &self.zz_aux * self.effective_q(q)
    }

    /// XQZ'.
    pub fn weighted_cross(&self, q: T) -> DMatrix<T> {
        &self.xz_true + &self.xz_aux * self.effective_q(q)
    }

    /// ZQZ' + λI.
    pub fn regularized_gram(&self, cfg: &WlsConfig<T>) -> DMatrix<T> {
        let mut g = self.weighted_gram(cfg.q);
        for i in 0..g.nrows() {
            g[(i, i)] += cfg.lambda;
        }
        g
    }
}

/// Auxiliary weight q and ridge parameter λ.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WlsConfig<T: Real> {
    pub q: T,
    pub lambda: T,
}

impl<T: Real> WlsConfig<T> {
    pub fn new(q: T, lambda: T) -> Result<Self> {
        let cfg = Self { q, lambda };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q.is_finite() && self.q >= T::zero()) {
            return Err(Error::invalid(format!("q must be finite and >= 0, got {}", self.q)));
        }
        if !(self.lambda.is_finite() && self.lambda >= T::zero()) {
            return Err(Error::invalid(format!(
                "lambda must be finite and >= 0, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WlsEstimate<T: Real> {
    pub theta: DMatrix<T>,
    pub config: WlsConfig<T>,
    /// Eigenvalue ratio of ZQZ' + λI.
    pub condition: T,
    state_dim: usize,
}

impl<T: Real> WlsEstimate<T> {
    pub fn state_dim(&self) -> usize {
        self.state_dim
    }

    pub fn input_dim(&self) -> usize {
        self.theta.ncols() - self.state_dim
    }

    /// First n columns of Θ_WLS.
    pub fn a_hat(&self) -> DMatrix<T> {
        self.theta.columns(0, self.state_dim).into_owned()
    }

    /// Remaining p columns of Θ_WLS.
    pub fn b_hat(&self) -> DMatrix<T> {
        self.theta.columns(self.state_dim, self.input_dim()).into_owned()
    }

    pub fn as_model(&self) -> Result<SystemModel<T>> {
        SystemModel::new(self.a_hat(), self.b_hat())
    }

    /// Row-major dump preceded by a single `n=..,p=..,q=..,lambda=..,seed=..` line.
    pub fn write_csv<W: Write>(&self, mut out: W, seed: Option<u64>) -> Result<()> {
        let seed = seed.map_or_else(|| "none".to_string(), |s| s.to_string());
        writeln!(
            out,
            "n={},p={},q={},lambda={},seed={}",
            self.state_dim,
            self.input_dim(),
            self.config.q.to_csv_string(),
            self.config.lambda.to_csv_string(),
            seed
        )?;
        for row in self.theta.row_iter() {
            let cells: Vec<String> = row.iter().map(|v| v.to_csv_string()).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }

    /// Parse [`WlsEstimate::write_csv`] output, returning the estimate and seed.
    pub fn read_csv<R: BufRead>(input: R) -> Result<(Self, Option<u64>)> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::Parse("empty estimate file".into()))??;
        let mut fields = std::collections::HashMap::new();
        for kv in header.split(',') {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Parse(format!("bad header field '{kv}'")))?;
            fields.insert(k.trim().to_string(), v.trim().to_string());
        }
        let get = |k: &str| {
            fields
                .get(k)
                .cloned()
                .ok_or_else(|| Error::Parse(format!("header is missing '{k}'")))
        };
        let parse_usize = |k: &str| -> Result<usize> {
            get(k)?
                .parse()
                .map_err(|_| Error::Parse(format!("bad value for '{k}'")))
        };
        let parse_real = |k: &str| -> Result<T> {
            get(k)?
                .parse()
                .map_err(|_| Error::Parse(format!("bad value for '{k}'")))
        };
        let (n, p) = (parse_usize("n")?, parse_usize("p")?);
        let config = WlsConfig::new(parse_real("q")?, parse_real("lambda")?)?;
        let seed = match get("seed")?.as_str() {
            "none" => None,
            s => Some(s.parse().map_err(|_| Error::Parse("bad seed".into()))?),
        };
        let mut entries = Vec::with_capacity(n * (n + p));
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            for cell in line.split(',') {
                entries.push(
                    cell.trim()
                        .parse::<T>()
                        .map_err(|_| Error::Parse(format!("invalid number '{cell}'")))?,
                );
            }
        }
        if entries.len() != n * (n + p) {
            return Err(Error::dim("estimate body", n * (n + p), entries.len()));
        }
        let theta = DMatrix::from_row_slice(n, n + p, &entries);
        Ok((
            Self {
                theta,
                config,
                condition: T::zero(),
                state_dim: n,
            },
            seed,
        ))
    }
}

fn factor_gram<T: Real>(pieces: &GramPieces<T>, cfg: &WlsConfig<T>) -> Result<SpdFactor<T>> {
    SpdFactor::new(&pieces.regularized_gram(cfg), "ZQZ' + lambda*I").map_err(|e| match e {
        Error::Singular { matrix, condition, .. } => Error::Singular {
            matrix,
            condition,
            hint: if cfg.lambda > T::zero() {
                "increase lambda or collect more exciting data".into()
            } else {
                "set lambda > 0 or collect more exciting data".into()
            },
        },
        other => other,
    })
}

/// Θ_WLS from precomputed sufficient statistics.
pub fn wls_from_pieces<T: Real>(pieces: &GramPieces<T>, cfg: &WlsConfig<T>) -> Result<WlsEstimate<T>> {
    cfg.validate()?;
    let factor = factor_gram(pieces, cfg)?;
    // (ZQZ' + λI) Y = ZQX', Θ = Y'
    let y = factor.solve(&pieces.weighted_cross(cfg.q).transpose())?;
    Ok(WlsEstimate {
        theta: y.transpose(),
        config: *cfg,
        condition: factor.condition(),
        state_dim: pieces.state_dim(),
    })
}

pub fn wls_estimate<T: Real>(data: &BatchData<T>, cfg: &WlsConfig<T>) -> Result<WlsEstimate<T>> {
    wls_from_pieces(&data.pieces(), cfg)
}

/// Normwise backward error of the normal equations,
/// `‖Θ M − R‖ / (‖Θ‖‖M‖ + ‖R‖)` with M = ZQZ' + λI and R = XQZ'.
pub fn normal_equation_residual<T: Real>(est: &WlsEstimate<T>, data: &BatchData<T>) -> T {
    let pieces = data.pieces();
    let m = pieces.regularized_gram(&est.config);
    let r = pieces.weighted_cross(est.config.q);
    let resid = (&est.theta * &m - &r).norm();
    let scale = est.theta.norm() * m.norm() + r.norm();
    if scale > T::zero() {
        resid / scale
    } else {
        resid
    }
}

/// ‖Θ_WLS − [A B]‖.
pub fn estimation_error<T: Real>(est: &WlsEstimate<T>, truth: &SystemModel<T>) -> Result<T> {
    let theta = truth.theta();
    if theta.shape() != est.theta.shape() {
        return Err(Error::dim(
            "estimation_error",
            format!("{}x{}", theta.nrows(), theta.ncols()),
            format!("{}x{}", est.theta.nrows(), est.theta.ncols()),
        ));
    }
    spectral_norm(&(&est.theta - theta))
}

/// The three addends of Θ_WLS − Θ.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorTerms<T: Real> {
    /// −λΘ(ZQZ' + λI)^{-1}
    pub regularization: DMatrix<T>,
    /// WQZ'(ZQZ' + λI)^{-1}
    pub noise: DMatrix<T>,
    /// ΔQZ'(ZQZ' + λI)^{-1}
    pub model_difference: DMatrix<T>,
}

impl<T: Real> ErrorTerms<T> {
    pub fn sum(&self) -> DMatrix<T> {
        &self.regularization + &self.noise + &self.model_difference
    }
}

/// Split Θ_WLS − Θ into regularization, noise and model-difference parts.
/// Needs recorded noise.
pub fn error_decomposition<T: Real>(
    data: &BatchData<T>,
    cfg: &WlsConfig<T>,
    truth: &SystemModel<T>,
    delta_theta: &DMatrix<T>,
) -> Result<ErrorTerms<T>> {
    cfg.validate()?;
    let w = data
        .w
        .as_ref()
        .ok_or_else(|| Error::Unavailable("error decomposition without recorded noise".into()))?;
    let theta = truth.theta();
    data.check_theta_shape(&theta, "true system")?;
    data.check_theta_shape(delta_theta, "delta_theta")?;

    let pieces = data.pieces();
    let factor = factor_gram(&pieces, cfg)?;
    let q = pieces.effective_q(cfg.q);
    let split = data.column_split;
    let naux = data.num_aux_columns();

    let zt = data.z.columns(0, split);
    let za = data.z.columns(split, naux);
    let wqz = w.columns(0, split) * zt.transpose() + w.columns(split, naux) * za.transpose() * q;
    let dqz = delta_theta * &pieces.zz_aux * q;
    let reg = &theta * (-cfg.lambda);

    // K M^{-1} = (M^{-1} K')' for symmetric M.
    let right_solve = |k: &DMatrix<T>| factor.solve(&k.transpose()).map(|s| s.transpose());
    Ok(ErrorTerms {
        regularization: right_solve(&reg)?,
        noise: right_solve(&wqz)?,
        model_difference: right_solve(&dqz)?,
    })
}
