//! Restricted maximum likelihood fitting via the profiled deviance.
//!
//! The free parameter is the log-Cholesky vector `theta` of the relative
//! covariance factor `Lambda = chol(D / sigma2)` (log of diagonal entries,
//! raw off-diagonals, row-major lower triangle). With
//! `V*_i = Z_i Lambda Lambda' Z_i' + I`, the GLS solution `beta(theta)`, and
//! `r = y - X beta(theta)`, the objective is
//!
//! ```text
//! sum_i log|V*_i| + log|sum_i X_i' V*_i^-1 X_i|
//!     + (n - p) log(sum_i r_i' V*_i^-1 r_i) + (n - p)(1 - log(n - p))
//! ```
//!
//! with `sigma2` profiled out as `sum r'V*^-1 r / (n - p)`. Minimization is
//! Nelder-Mead from three deterministic starts. Per-cluster solves use a
//! Cholesky of the n_i x n_i block for small clusters and the q x q Woodbury
//! form for large ones.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{GroupedData, Parameters};
use crate::optim::NelderMead;

/// Clusters up to this many rows use the dense n_i x n_i Cholesky; larger
/// ones go through the q x q Woodbury identity.
const DENSE_LIMIT: usize = 64;

/// Log-diagonal floor: relative standard deviations at or below exp(-11.5)
/// (about 1e-5) are treated as exact zeros in the reported covariance.
pub const LOG_DIAG_FLOOR: f64 = -11.5;

/// A fitted two-level model: REML estimates plus fit diagnostics.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedModel {
    pub data: GroupedData,
    pub params: Parameters,
    /// Log-Cholesky parameter at the optimum; `None` for models constructed
    /// from explicit parameters with singular covariance.
    pub theta_hat: Option<Vec<f64>>,
    /// -2 times the restricted log-likelihood at the optimum.
    pub reml_criterion: f64,
    pub converged: bool,
    /// True when any random-effect variance was driven to the boundary.
    pub boundary: bool,
    pub n_iterations: usize,
    /// Covariance of the fixed-effect estimates, `(X' V^-1 X)^-1`.
    pub fixed_cov: DMatrix<f64>,
}

/// The free variance-covariance entries of a fit: the lower triangle of `D`
/// (row-major) followed by `sigma2`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VarianceComponents {
    pub entries: Vec<(String, f64)>,
    pub nu: usize,
}

impl FittedModel {
    /// Wrap explicit parameters around a data set, computing the covariance
    /// of the GLS fixed effects and the REML criterion implied by them.
    pub fn with_parameters(data: GroupedData, params: Parameters) -> Result<FittedModel> {
        if params.p() != data.p || params.q() != data.q {
            return Err(Error::DimensionMismatch {
                context: format!(
                    "parameters are ({}, {}), data needs ({}, {})",
                    params.p(),
                    params.q(),
                    data.p,
                    data.q
                ),
            });
        }
        let w = linalg::psd_sqrt(&(&params.d / params.sigma2));
        let profile = gls_profile(&data, &w)?;
        let theta_hat = linalg::chol_lower(&(&params.d / params.sigma2)).map(|l| theta_from_lambda(&l));
        let boundary = (0..data.q).any(|j| params.d[(j, j)] == 0.0);
        let n_p = (data.n_total - data.p) as f64;
        Ok(FittedModel {
            fixed_cov: symmetrize(&(&profile.a_inv * params.sigma2)),
            reml_criterion: profile.objective + n_p * (2.0 * std::f64::consts::PI).ln(),
            data,
            params,
            theta_hat,
            converged: true,
            boundary,
            n_iterations: 0,
        })
    }

    pub fn fixed_names(&self) -> &[String] {
        &self.data.fixed_names
    }

    pub fn fixed_se(&self) -> Vec<f64> {
        (0..self.data.p).map(|j| self.fixed_cov[(j, j)].max(0.0).sqrt()).collect()
    }

    /// Labeled variance components: `var_<name>` / `cov_<a>_<b>` over the
    /// lower triangle of `D`, then `sigma2`.
    pub fn variance_components(&self) -> VarianceComponents {
        let q = self.data.q;
        let names = &self.data.random_names;
        let mut entries = Vec::with_capacity(q * (q + 1) / 2 + 1);
        for i in 0..q {
            for j in 0..=i {
                let label = if i == j {
                    format!("var_{}", names[i])
                } else {
                    format!("cov_{}_{}", names[j], names[i])
                };
                entries.push((label, self.params.d[(i, j)]));
            }
        }
        entries.push(("sigma2".to_string(), self.params.sigma2));
        let nu = entries.len();
        VarianceComponents { entries, nu }
    }

    pub fn describe(&self) -> String {
        format!(
            "reml fit: {} fixed effects, {} random effects, {} clusters, criterion {:.4}",
            self.data.p, self.data.q, self.data.g, self.reml_criterion
        )
    }
}

pub(crate) fn theta_len(q: usize) -> usize {
    q * (q + 1) / 2
}

fn diag_index(i: usize) -> usize {
    i * (i + 1) / 2 + i
}

/// Lower-triangular `Lambda` from the log-Cholesky vector.
pub(crate) fn lambda_from_theta(theta: &[f64], q: usize) -> DMatrix<f64> {
    let mut lambda = DMatrix::zeros(q, q);
    let mut k = 0;
    for i in 0..q {
        for j in 0..=i {
            lambda[(i, j)] = if i == j { theta[k].exp() } else { theta[k] };
            k += 1;
        }
    }
    lambda
}

fn theta_from_lambda(lambda: &DMatrix<f64>) -> Vec<f64> {
    let q = lambda.nrows();
    let mut theta = Vec::with_capacity(theta_len(q));
    for i in 0..q {
        for j in 0..=i {
            theta.push(if i == j { lambda[(i, j)].ln() } else { lambda[(i, j)] });
        }
    }
    theta
}

fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Per-cluster factorization of `V* = I + M M'` with `M = Z W`.
enum ClusterFactor {
    Dense(Cholesky<f64, Dyn>),
    Woodbury { m: DMatrix<f64>, chol_k: Cholesky<f64, Dyn> },
}

impl ClusterFactor {
    fn new(z: &DMatrix<f64>, w: &DMatrix<f64>) -> Option<(ClusterFactor, f64)> {
        let ni = z.nrows();
        let m = z * w;
        if m.iter().any(|v| !v.is_finite()) {
            return None;
        }
        if ni <= DENSE_LIMIT {
            let mut v = &m * m.transpose();
            for i in 0..ni {
                v[(i, i)] += 1.0;
            }
            let chol = Cholesky::new(v)?;
            let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            Some((ClusterFactor::Dense(chol), log_det))
        } else {
            let q = m.ncols();
            let mut k = m.tr_mul(&m);
            for i in 0..q {
                k[(i, i)] += 1.0;
            }
            let chol_k = Cholesky::new(k)?;
            let log_det = 2.0 * chol_k.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
            Some((ClusterFactor::Woodbury { m, chol_k }, log_det))
        }
    }

    /// `V*^-1 B`.
    fn solve(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        match self {
            ClusterFactor::Dense(chol) => chol.solve(b),
            ClusterFactor::Woodbury { m, chol_k } => {
                let mtb = m.tr_mul(b);
                b - m * chol_k.solve(&mtb)
            }
        }
    }
}

struct GlsProfile {
    beta: DVector<f64>,
    a_inv: DMatrix<f64>,
    quad: f64,
    objective: f64,
}

/// GLS pass at a fixed relative covariance factor `W` (any matrix with
/// `W W' = D / sigma2`).
fn gls_profile(data: &GroupedData, w: &DMatrix<f64>) -> Result<GlsProfile> {
    let p = data.p;
    let n = data.n_total;
    let mut log_det_v = 0.0;
    let mut a = DMatrix::zeros(p, p);
    let mut b = DVector::zeros(p);
    let mut solved = Vec::with_capacity(data.g);
    for block in &data.clusters {
        let (factor, log_det) =
            ClusterFactor::new(&block.z, w).ok_or(Error::NonFiniteObjective)?;
        log_det_v += log_det;
        let vix = factor.solve(&block.x);
        let viy_mat = factor.solve(&DMatrix::from_column_slice(block.n_rows(), 1, block.y.as_slice()));
        let viy = DVector::from_column_slice(viy_mat.column(0).as_slice());
        a += block.x.tr_mul(&vix);
        b += block.x.tr_mul(&viy);
        solved.push((vix, viy));
    }
    let chol_a = Cholesky::new(symmetrize(&a)).ok_or(Error::NonFiniteObjective)?;
    let log_det_a = 2.0 * chol_a.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let beta = chol_a.solve(&b);
    let a_inv = chol_a.inverse();

    let mut quad = 0.0;
    for (block, (vix, viy)) in data.clusters.iter().zip(&solved) {
        let r = &block.y - &block.x * &beta;
        let vir = viy - vix * &beta;
        quad += r.dot(&vir);
    }
    if !(quad > 0.0) || !quad.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    let n_p = (n - p) as f64;
    let objective = log_det_v + log_det_a + n_p * quad.ln() + n_p * (1.0 - n_p.ln());
    if !objective.is_finite() {
        return Err(Error::NonFiniteObjective);
    }
    Ok(GlsProfile { beta, a_inv, quad, objective })
}

/// -2 times the profiled restricted log-likelihood at `theta`.
pub fn profiled_deviance(data: &GroupedData, theta: &[f64]) -> Result<f64> {
    if theta.len() != theta_len(data.q) {
        return Err(Error::DimensionMismatch {
            context: format!("theta has length {}, expected {}", theta.len(), theta_len(data.q)),
        });
    }
    let lambda = lambda_from_theta(theta, data.q);
    Ok(gls_profile(data, &lambda)?.objective)
}

fn clamp_diag(theta: &[f64], q: usize) -> Vec<f64> {
    let mut out = theta.to_vec();
    for i in 0..q {
        let idx = diag_index(i);
        if out[idx] < LOG_DIAG_FLOOR {
            out[idx] = LOG_DIAG_FLOOR;
        }
    }
    out
}

/// Fit by REML. Non-convergence is reported through the `converged` flag on
/// the best fit found rather than as an error.
pub fn fit_reml(data: &GroupedData) -> Result<FittedModel> {
    if data.q == 0 {
        return Err(Error::Config { message: "model has no random-effect columns".into() });
    }
    if data.n_total <= data.p + 1 {
        return Err(Error::TooFewObservations { n: data.n_total, min: data.p + 1 });
    }
    let rank = linalg::rank(&data.stacked_x());
    if rank < data.p {
        return Err(Error::RankDeficientDesign { rank, p: data.p });
    }

    let q = data.q;
    let m = theta_len(q);
    let objective = |theta: &[f64]| -> f64 {
        let clamped = clamp_diag(theta, q);
        match profiled_deviance(data, &clamped) {
            Ok(v) => v,
            Err(_) => f64::INFINITY,
        }
    };

    let optimizer = NelderMead::default();
    let mut best: Option<crate::optim::OptimOutcome> = None;
    for diag_start in [0.0_f64, 0.1_f64.ln(), 10.0_f64.ln()] {
        let mut start = vec![0.0; m];
        for i in 0..q {
            start[diag_index(i)] = diag_start;
        }
        let outcome = optimizer.minimize(objective, &start);
        let better = match &best {
            None => true,
            Some(b) => outcome.fx < b.fx,
        };
        if better {
            best = Some(outcome);
        }
    }
    let best = best.expect("at least one start");

    let theta_hat = clamp_diag(&best.x, q);
    let floored: Vec<bool> = (0..q).map(|i| theta_hat[diag_index(i)] <= LOG_DIAG_FLOOR + 1e-9).collect();
    let mut lambda = lambda_from_theta(&theta_hat, q);
    for (i, &at_floor) in floored.iter().enumerate() {
        if at_floor {
            lambda.row_mut(i).fill(0.0);
        }
    }

    let profile = gls_profile(data, &lambda)?;
    let n_p = (data.n_total - data.p) as f64;
    let sigma2 = profile.quad / n_p;
    let mut d = symmetrize(&(&lambda * lambda.transpose() * sigma2));
    for (i, &at_floor) in floored.iter().enumerate() {
        if at_floor {
            d.row_mut(i).fill(0.0);
            d.column_mut(i).fill(0.0);
        }
    }
    let boundary = floored.iter().any(|&f| f);

    Ok(FittedModel {
        fixed_cov: symmetrize(&(&profile.a_inv * sigma2)),
        reml_criterion: profile.objective + n_p * (2.0 * std::f64::consts::PI).ln(),
        data: data.clone(),
        params: Parameters { beta: profile.beta, d, sigma2 },
        theta_hat: Some(theta_hat),
        converged: best.converged,
        boundary,
        n_iterations: best.iterations,
    })
}

/// Predicted random effects `b_i = D Z_i' V_i^-1 (y_i - X_i beta)`, one
/// vector per cluster in cluster order. A zero covariance gives exact zeros.
pub fn eblups(model: &FittedModel) -> Vec<DVector<f64>> {
    let data = &model.data;
    let w = linalg::psd_sqrt(&(&model.params.d / model.params.sigma2));
    let mut out = Vec::with_capacity(data.g);
    for block in &data.clusters {
        let r = &block.y - &block.x * &model.params.beta;
        let (factor, _) = ClusterFactor::new(&block.z, &w)
            .expect("V* = I + MM' is positive definite for finite parameters");
        let vir_mat = factor.solve(&DMatrix::from_column_slice(block.n_rows(), 1, r.as_slice()));
        let vir = DVector::from_column_slice(vir_mat.column(0).as_slice());
        let m = &block.z * &w;
        out.push(&w * m.tr_mul(&vir));
    }
    out
}
