//! MAP estimation with multi-restart Adam and block-wise Laplace covariances.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::diff::{self, BlockId};
use crate::math;
use crate::matching::GaussianBlock;
use crate::model::{
    check_inputs, log_posterior, HeterogeneousDataset, LatentState, ModelConfig, ObservationMask,
};
use crate::par;
use crate::{Error, Result};

/// First jitter tried when a negated Hessian block is not positive definite.
pub const JITTER_START: f64 = 1e-8;
/// Largest jitter tried before giving up.
pub const JITTER_CAP: f64 = 1e2;

/// Stopping rule on the change in objective between consecutive iterations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvergenceMode {
    /// `|f_t - f_{t-1}| < tolerance`
    Absolute,
    /// `|f_t - f_{t-1}| < tolerance * max(1, |f_{t-1}|)`
    Relative,
}

/// How restart initializations draw from the root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeedMode {
    /// Restart `r` uses substream `r`.
    PerRestart,
    /// Every restart uses substream 0, so all restarts coincide.
    Shared,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerSettings {
    pub learning_rate: f64,
    pub max_iterations: usize,
    pub tolerance: f64,
    pub n_restarts: usize,
    pub init_mean: f64,
    pub init_variance: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub rng_seed: u64,
    pub convergence: ConvergenceMode,
    pub seed_mode: SeedMode,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            learning_rate: 0.5,
            max_iterations: 2000,
            tolerance: 1e-8,
            n_restarts: 50,
            init_mean: 0.0,
            init_variance: 9.0,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            rng_seed: 0,
            convergence: ConvergenceMode::Absolute,
            seed_mode: SeedMode::PerRestart,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.tolerance > 0.0) {
            return bad(format!("tolerance must be > 0, got {}", self.tolerance));
        }
        if self.n_restarts == 0 {
            return bad("at least one restart is required".into());
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be >= 1".into());
        }
        if !self.init_mean.is_finite() || !(self.init_variance >= 0.0 && self.init_variance.is_finite()) {
            return bad(format!(
                "initialization N({}, {}) is invalid",
                self.init_mean, self.init_variance
            ));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad(format!("Adam betas must lie in [0, 1), got {} and {}", self.beta1, self.beta2));
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("Adam epsilon must be > 0, got {}", self.epsilon));
        }
        Ok(())
    }

    fn restart_stream(&self, restart: usize) -> u64 {
        match self.seed_mode {
            SeedMode::PerRestart => restart as u64,
            SeedMode::Shared => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamOutcome {
    /// Parameters at which the last objective value was evaluated.
    pub params: Vec<f64>,
    /// Objective value at every evaluated iterate.
    pub trace: Vec<f64>,
    pub converged: bool,
}

impl AdamOutcome {
    pub fn iterations(&self) -> usize {
        self.trace.len()
    }

    pub fn final_value(&self) -> f64 {
        *self.trace.last().expect("trace is never empty")
    }
}

/// Minimize `f` with bias-corrected Adam. `f(params, grad)` returns the
/// objective and writes its gradient.
pub fn adam_minimize<F>(mut f: F, init: &[f64], settings: &OptimizerSettings) -> Result<AdamOutcome>
where
    F: FnMut(&[f64], &mut [f64]) -> f64,
{
    settings.validate()?;
    math::ensure_finite(init, "initial parameters")?;
    let d = init.len();
    let mut params = init.to_vec();
    let mut grad = vec![0.0; d];
    let mut m = vec![0.0; d];
    let mut v = vec![0.0; d];
    let mut trace: Vec<f64> = Vec::with_capacity(settings.max_iterations.min(4096));
    let (b1, b2) = (settings.beta1, settings.beta2);
    let (mut b1t, mut b2t) = (1.0, 1.0);
    let mut converged = false;

    for t in 0..settings.max_iterations {
        let value = f(&params, &mut grad);
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite(format!(
                "objective or gradient became non-finite at iteration {t} (value {value})"
            )));
        }
        if let Some(&prev) = trace.last() {
            let delta: f64 = value - prev;
            let scale = match settings.convergence {
                ConvergenceMode::Absolute => 1.0,
                ConvergenceMode::Relative => f64::max(1.0, prev.abs()),
            };
            if delta.abs() < settings.tolerance * scale {
                trace.push(value);
                converged = true;
                break;
            }
        }
        trace.push(value);
        if t + 1 == settings.max_iterations {
            break;
        }
        b1t *= b1;
        b2t *= b2;
        let lr = settings.learning_rate;
        for c in 0..d {
            m[c] = b1 * m[c] + (1.0 - b1) * grad[c];
            v[c] = b2 * v[c] + (1.0 - b2) * grad[c] * grad[c];
            let m_hat = m[c] / (1.0 - b1t);
            let v_hat = v[c] / (1.0 - b2t);
            params[c] -= lr * m_hat / (math::sqrt(v_hat) + settings.epsilon);
        }
    }
    Ok(AdamOutcome { params, trace, converged })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RestartResult {
    pub index: usize,
    /// Log-posterior at the end of the run; `-inf` when the run failed.
    pub final_log_posterior: f64,
    pub iterations: usize,
    pub converged: bool,
    pub failure: Option<String>,
    /// Log-posterior at every evaluated iterate; empty when the run failed.
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapFit {
    pub state: LatentState,
    pub final_log_posterior: f64,
    pub best_restart: usize,
    pub restarts: Vec<RestartResult>,
}

/// Draw an initial state from `N(init_mean, init_variance)` on the given substream.
pub fn initial_state(
    layout: crate::model::Layout,
    settings: &OptimizerSettings,
    stream: u64,
) -> Result<LatentState> {
    let mut rng = ChaCha8Rng::seed_from_u64(settings.rng_seed);
    rng.set_stream(stream);
    let normal = Normal::new(settings.init_mean, math::sqrt(settings.init_variance))
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let values = (0..layout.len()).map(|_| normal.sample(&mut rng)).collect();
    LatentState::from_values(layout, values)
}

/// Multi-restart MAP estimation; the restart with the highest final
/// log-posterior wins, ties going to the lowest index.
pub fn fit_map(
    dataset: &HeterogeneousDataset,
    mask: &ObservationMask,
    config: &ModelConfig,
    settings: &OptimizerSettings,
) -> Result<MapFit> {
    settings.validate()?;
    let layout = config.layout(dataset);
    check_inputs(dataset, &LatentState::zeros(layout.clone()), mask, config)?;

    let runs = par::map_indexed(settings.n_restarts, |r| {
        let run = || -> Result<(LatentState, f64, AdamOutcome)> {
            let init = initial_state(layout.clone(), settings, settings.restart_stream(r))?;
            let mut probe = init.clone();
            let outcome = adam_minimize(
                |params, grad| {
                    probe.values_mut().copy_from_slice(params);
                    let (value, g) = diff::value_and_grad(dataset, &probe, mask, config)
                        .expect("inputs validated before optimization");
                    for (out, gi) in grad.iter_mut().zip(g.values()) {
                        *out = -gi;
                    }
                    -value
                },
                init.values(),
                settings,
            )?;
            let state = LatentState::from_values(layout.clone(), outcome.params.clone())?;
            let lp = log_posterior(dataset, &state, mask, config)?;
            Ok((state, lp, outcome))
        };
        run()
    });

    let mut best: Option<(usize, LatentState, f64)> = None;
    let mut restarts = Vec::with_capacity(runs.len());
    for (index, run) in runs.into_iter().enumerate() {
        match run {
            Ok((state, lp, outcome)) if lp.is_finite() => {
                restarts.push(RestartResult {
                    index,
                    final_log_posterior: lp,
                    iterations: outcome.iterations(),
                    converged: outcome.converged,
                    failure: None,
                    trace: outcome.trace.iter().map(|v| -v).collect(),
                });
                if best.as_ref().is_none_or(|b| lp > b.2) {
                    best = Some((index, state, lp));
                }
            }
            Ok((_, lp, outcome)) => restarts.push(RestartResult {
                index,
                final_log_posterior: f64::NEG_INFINITY,
                iterations: outcome.iterations(),
                converged: false,
                failure: Some(format!("final log-posterior {lp}")),
                trace: outcome.trace.iter().map(|v| -v).collect(),
            }),
            Err(e) => restarts.push(RestartResult {
                index,
                final_log_posterior: f64::NEG_INFINITY,
                iterations: 0,
                converged: false,
                failure: Some(e.to_string()),
                trace: Vec::new(),
            }),
        }
    }
    let (best_restart, state, final_log_posterior) =
        best.ok_or(Error::AllRestartsFailed(settings.n_restarts))?;
    Ok(MapFit { state, final_log_posterior, best_restart, restarts })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceBlock {
    pub id: BlockId,
    pub covariance: DMatrix<f64>,
    /// Diagonal shift added to the negated Hessian; 0 when none was needed.
    pub jitter: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaplaceCovariance {
    pub blocks: Vec<CovarianceBlock>,
    /// Infinity norm of the log-posterior gradient at the expansion point.
    pub gradient_inf_norm: f64,
}

impl LaplaceCovariance {
    pub fn get(&self, id: BlockId) -> Option<&CovarianceBlock> {
        self.blocks.iter().find(|b| b.id == id)
    }

    pub fn max_jitter(&self) -> f64 {
        self.blocks.iter().map(|b| b.jitter).fold(0.0, f64::max)
    }
}

/// Invert `B + jitter I` for the smallest jitter on the ladder
/// `0, 1e-8, 1e-7, ..., 1e2` that admits a Cholesky factorization.
pub fn invert_with_jitter(b: &DMatrix<f64>) -> Option<(DMatrix<f64>, f64)> {
    let sym = (b + b.transpose()) * 0.5;
    let mut jitter = 0.0;
    loop {
        let mut shifted = sym.clone();
        for d in 0..shifted.nrows() {
            shifted[(d, d)] += jitter;
        }
        if let Some(chol) = nalgebra::Cholesky::new(shifted) {
            let inv = chol.inverse();
            if inv.iter().all(|x| x.is_finite()) {
                return Some(((&inv + inv.transpose()) * 0.5, jitter));
            }
        }
        jitter = if jitter == 0.0 { JITTER_START } else { jitter * 10.0 };
        if jitter > JITTER_CAP * (1.0 + 1e-9) {
            return None;
        }
    }
}

/// Gaussian covariance per block: the inverse of the negated Hessian block,
/// jittered up the ladder of [`invert_with_jitter`] when needed.
pub fn laplace_covariance(
    dataset: &HeterogeneousDataset,
    map_state: &LatentState,
    mask: &ObservationMask,
    config: &ModelConfig,
) -> Result<LaplaceCovariance> {
    let grad = diff::grad_log_posterior(dataset, map_state, mask, config)?;
    let gradient_inf_norm = grad.values().iter().fold(0.0f64, |a, g| a.max(g.abs()));
    let ids = BlockId::all(map_state.layout());
    let hessian = diff::block_hessian(dataset, map_state, mask, config, &ids)?;
    let inverted = par::map_indexed(hessian.blocks.len(), |b| {
        let block = &hessian.blocks[b];
        invert_with_jitter(&(-&block.matrix)).ok_or_else(|| Error::NotPositiveDefinite {
            block: block.id.to_string(),
            max_jitter: JITTER_CAP,
        })
    });
    let mut blocks = Vec::with_capacity(ids.len());
    for (id, inv) in ids.into_iter().zip(inverted) {
        let (covariance, jitter) = inv?;
        blocks.push(CovarianceBlock { id, covariance, jitter });
    }
    Ok(LaplaceCovariance { blocks, gradient_inf_norm })
}

/// MAP estimate plus, optionally, block covariances around it.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorEstimate {
    pub map_state: LatentState,
    pub covariance: Option<LaplaceCovariance>,
    pub final_log_posterior: f64,
    pub best_restart: usize,
    pub restarts: Vec<RestartResult>,
}

impl PosteriorEstimate {
    /// Mean and covariance diagonal of one block.
    pub fn gaussian_block(&self, id: BlockId) -> Result<GaussianBlock> {
        let cov = self
            .covariance
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("posterior has no covariance".into()))?;
        let block = cov
            .get(id)
            .ok_or_else(|| Error::InvalidArgument(format!("no covariance for block {id}")))?;
        let (offset, len) = id.range(self.map_state.layout());
        GaussianBlock::from_covariance(&self.map_state.values()[offset..offset + len], &block.covariance)
    }
}

pub fn fit_posterior(
    dataset: &HeterogeneousDataset,
    mask: &ObservationMask,
    config: &ModelConfig,
    settings: &OptimizerSettings,
    with_covariance: bool,
) -> Result<PosteriorEstimate> {
    let fit = fit_map(dataset, mask, config, settings)?;
    let covariance = if with_covariance {
        Some(laplace_covariance(dataset, &fit.state, mask, config)?)
    } else {
        None
    };
    Ok(PosteriorEstimate {
        map_state: fit.state,
        covariance,
        final_log_posterior: fit.final_log_posterior,
        best_restart: fit.best_restart,
        restarts: fit.restarts,
    })
}
