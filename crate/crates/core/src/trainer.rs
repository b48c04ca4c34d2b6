//! Block-by-block training.
//!
//! Block 1 fits the target with a Metropolis chain per frequency. Each later
//! block `ℓ` fits the residual `Q − z_{ℓ−1}` with Metropolis-within-Gibbs,
//! using the previous block output as the second input of its `ω′` features.
//! All blocks reuse the same standardized training inputs.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::analysis::mse;
use crate::data::{standardize, Dataset};
use crate::error::{Error, Result};
use crate::network::{block_g, block_g_prime, BlockParams, Network};
use crate::rng::{rng_for, stream, Rng};
use crate::sampler::{
    gibbs_sweep_block_ell, metropolis_sweep_block1, BlockData, ChainState, ChainTrace, ProposalConfig, SignRule,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Sample both `ω` and `ω′`.
    Method1,
    /// Sample `ω` only; `ω′` keeps its initial standard-normal draw.
    Method2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub width: usize,
    pub max_blocks: usize,
    /// Sweeps per block: one entry for all blocks, or one per block.
    pub sweeps: Vec<usize>,
    pub gamma: f64,
    pub gamma_prime: f64,
    pub delta: f64,
    pub delta_prime: f64,
    /// Tikhonov parameter: one entry for all blocks, or one per block.
    pub lambdas: Vec<f64>,
    pub seed: u64,
    pub method: Method,
    pub burn_in: usize,
    /// Stop adding blocks once the training MSE falls to this value.
    pub stop_tolerance: Option<f64>,
    /// Defaults to [`SignRule::default_for_dim`].
    pub sign_rule: Option<SignRule>,
    /// Record the normal-equation residual of every ridge solve.
    pub check_normal_equations: bool,
}

impl TrainConfig {
    /// Block-by-block defaults for inputs of dimension `d`:
    /// `γ = γ′ = 10`, `δ = 2.4²/d`, `δ′ = 2.4²`, `λ = 1e-4`.
    pub fn with_defaults(d: usize) -> Self {
        TrainConfig {
            width: 6,
            max_blocks: 10,
            sweeps: vec![2000],
            gamma: 10.0,
            gamma_prime: 10.0,
            delta: 2.4 * 2.4 / d.max(1) as f64,
            delta_prime: 2.4 * 2.4,
            lambdas: vec![1e-4],
            seed: 0,
            method: Method::Method1,
            burn_in: 0,
            stop_tolerance: None,
            sign_rule: None,
            check_normal_equations: false,
        }
    }

    /// Sweep count of block `ell` (1-based).
    pub fn sweeps_for(&self, ell: usize) -> usize {
        per_block(&self.sweeps, ell)
    }

    pub fn lambda_for(&self, ell: usize) -> f64 {
        per_block(&self.lambdas, ell)
    }

    pub fn sign_rule_for(&self, d: usize) -> SignRule {
        self.sign_rule.unwrap_or(SignRule::default_for_dim(d))
    }

    pub fn proposal(&self, d: usize) -> ProposalConfig {
        ProposalConfig {
            delta: self.delta,
            delta_prime: self.delta_prime,
            gamma: self.gamma,
            gamma_prime: self.gamma_prime,
            sign_rule: self.sign_rule_for(d),
            freeze_prime: self.method == Method::Method2,
        }
    }

    pub fn validate(&self, d: usize) -> Result<()> {
        if self.width == 0 {
            return Err(Error::config("W", "must be >= 1"));
        }
        if self.max_blocks == 0 {
            return Err(Error::config("L", "must be >= 1"));
        }
        check_per_block("M", self.sweeps.len(), self.max_blocks)?;
        check_per_block("lambda", self.lambdas.len(), self.max_blocks)?;
        if let Some(m) = self.sweeps.iter().find(|&&m| m == 0) {
            return Err(Error::config("M", format!("sweep counts must be >= 1, got {m}")));
        }
        if let Some(l) = self.lambdas.iter().find(|l| !(**l >= 0.0) || !l.is_finite()) {
            return Err(Error::config("lambda", format!("must be finite and >= 0, got {l}")));
        }
        if let Some(m) = self.sweeps.iter().find(|&&m| self.burn_in >= m) {
            return Err(Error::config("burn_in", format!("must be < M ({m}), got {}", self.burn_in)));
        }
        if let Some(t) = self.stop_tolerance {
            if !(t >= 0.0) {
                return Err(Error::config("stop_tolerance", format!("must be >= 0, got {t}")));
            }
        }
        if self.sign_rule_for(d) == SignRule::RejectNegative1d && d != 1 {
            return Err(Error::config("sign_rule", "reject_negative_1d requires a one-dimensional input"));
        }
        self.proposal(d).validate()
    }
}

fn per_block<T: Copy>(v: &[T], ell: usize) -> T {
    if v.len() == 1 {
        v[0]
    } else {
        v[ell - 1]
    }
}

fn check_per_block(field: &str, len: usize, blocks: usize) -> Result<()> {
    if len == 1 || len == blocks {
        Ok(())
    } else {
        Err(Error::config(field, format!("needs 1 or L = {blocks} entries, got {len}")))
    }
}

/// Per-block training summary.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockReport {
    pub block: usize,
    /// MSE of `z_ℓ` against the training targets.
    pub train_mse: f64,
    /// MSE of `z_ℓ` on the held-out set, when one was given.
    pub test_mse: Option<f64>,
    pub seconds: f64,
    pub acceptance_rate: f64,
    pub acceptance_rate_prime: Option<f64>,
    /// Squared norm of all real amplitude coefficients of this block.
    pub amplitude_norm_squared: f64,
    pub lambda: f64,
    /// Largest normal-equation residual, when tracked.
    pub max_normal_residual: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct BlockOutcome {
    pub params: BlockParams,
    pub report: BlockReport,
    pub trace: ChainTrace,
}

/// Everything a run produces.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub network: Network,
    pub reports: Vec<BlockReport>,
    pub traces: Vec<ChainTrace>,
}

/// A failed run, carrying the blocks trained before the failure.
#[derive(Debug, thiserror::Error)]
#[error("training failed at block {block}: {source}")]
pub struct TrainError {
    pub block: usize,
    #[source]
    pub source: Error,
    pub partial: Box<Network>,
    pub reports: Vec<BlockReport>,
}

fn initial_freqs(w: usize, d: usize, rule: SignRule, rng: &mut Rng) -> DMatrix<f64> {
    let mut f = DMatrix::zeros(w, d);
    let mut row = vec![0.0; d];
    for j in 0..w {
        for r in row.iter_mut() {
            *r = rng.sample(StandardNormal);
        }
        rule.reflect(&mut row);
        for (k, v) in row.iter().enumerate() {
            f[(j, k)] = *v;
        }
    }
    f
}

fn run_chains(
    block: usize,
    data: &BlockData<'_>,
    cfg: &TrainConfig,
    mut rng: Rng,
) -> Result<BlockOutcome> {
    let started = Instant::now();
    let d = data.inputs.ncols();
    let w = cfg.width;
    let prop = cfg.proposal(d);
    let lambda = cfg.lambda_for(block);
    let freqs = initial_freqs(w, d, prop.sign_rule, &mut rng);
    let freqs_prime = (block > 1).then(|| {
        (0..w)
            .map(|_| prop.sign_rule.reflect_prime(rng.sample(StandardNormal)))
            .collect::<Vec<f64>>()
    });
    let mut state = ChainState::new(data, freqs, freqs_prime, rng, lambda)?;
    state.track_normal_residuals(cfg.check_normal_equations);
    let mut trace = ChainTrace::new(block, w, d, block > 1 && !prop.freeze_prime);
    for _ in 0..cfg.sweeps_for(block) {
        let row = if block == 1 {
            metropolis_sweep_block1(&mut state, data, &prop, lambda)?
        } else {
            gibbs_sweep_block_ell(&mut state, data, &prop, lambda)?
        };
        trace.push(row);
    }
    let fit = state.design().matrix() * state.amplitudes.coefficients();
    let params = BlockParams::from_solution(state.freqs.clone(), state.freqs_prime.clone(), &state.amplitudes);
    let report = BlockReport {
        block,
        train_mse: mse(&fit, data.residual)?,
        test_mse: None,
        seconds: started.elapsed().as_secs_f64(),
        acceptance_rate: trace.acceptance_rate(),
        acceptance_rate_prime: trace.acceptance_rate_prime(),
        amplitude_norm_squared: params.amplitude_norm_squared(),
        lambda,
        max_normal_residual: cfg.check_normal_equations.then(|| state.max_normal_residual()),
    };
    Ok(BlockOutcome { params, report, trace })
}

/// Trains block 1 on standardized data.
pub fn train_block1(data: &Dataset, cfg: &TrainConfig) -> Result<BlockOutcome> {
    let block = BlockData {
        inputs: &data.inputs,
        residual: &data.targets,
        z_prev: None,
    };
    run_chains(1, &block, cfg, rng_for(cfg.seed, stream::BLOCK_BASE + 1))
}

/// Trains block `ell ≥ 2` of `net` (of depth `ell − 1`) on standardized data.
pub fn train_block_ell(data: &Dataset, net: &Network, cfg: &TrainConfig, ell: usize) -> Result<BlockOutcome> {
    if ell < 2 || net.depth() != ell - 1 {
        return Err(Error::config(
            "block",
            format!("block {ell} needs a network of depth {}, got {}", ell.saturating_sub(1), net.depth()),
        ));
    }
    let z = net.forward_normalized(&data.inputs, ell - 1)?.pop().expect("depth >= 1");
    let residual = &data.targets - &z;
    train_block_ell_with(data, &z, &residual, cfg, ell)
}

fn train_block_ell_with(
    data: &Dataset,
    z_prev: &DVector<f64>,
    residual: &DVector<f64>,
    cfg: &TrainConfig,
    ell: usize,
) -> Result<BlockOutcome> {
    let block = BlockData {
        inputs: &data.inputs,
        residual,
        z_prev: Some(z_prev),
    };
    run_chains(ell, &block, cfg, rng_for(cfg.seed, stream::BLOCK_BASE + ell as u64))
}

/// Runs block-by-block training up to `cfg.max_blocks` blocks.
///
/// `test` is evaluated after each block when given; it never influences
/// training.
pub fn train(dataset: &Dataset, test: Option<&Dataset>, cfg: &TrainConfig) -> std::result::Result<TrainOutcome, TrainError> {
    let d = dataset.input_dim();
    let fail_early = |source: Error| TrainError {
        block: 0,
        source,
        partial: Box::new(Network::new(d.max(1), cfg.width.max(1), crate::network::NormStats::identity(d.max(1))).expect("valid")),
        reports: Vec::new(),
    };
    cfg.validate(d).map_err(fail_early)?;
    if let Some(t) = test {
        if t.input_dim() != d {
            return Err(fail_early(Error::DimensionMismatch {
                what: "test set input dimension",
                expected: d,
                found: t.input_dim(),
            }));
        }
    }
    let (train_std, stats) = standardize(dataset).map_err(fail_early)?;
    let test_std = match test {
        Some(t) => Some(stats.normalize(&t.inputs).map_err(fail_early)?),
        None => None,
    };
    let mut net = Network::new(d, cfg.width, stats).map_err(fail_early)?;
    let mut reports = Vec::new();
    let mut traces = Vec::new();
    let mut z_train: Option<DVector<f64>> = None;
    let mut z_test: Option<DVector<f64>> = None;

    for ell in 1..=cfg.max_blocks {
        let step = || -> Result<(BlockOutcome, DVector<f64>, Option<DVector<f64>>)> {
            let mut out = match &z_train {
                None => train_block1(&train_std, cfg)?,
                Some(z) => {
                    let r = &train_std.targets - z;
                    train_block_ell_with(&train_std, z, &r, cfg, ell)?
                }
            };
            let advance = |x: &DMatrix<f64>, prev: Option<&DVector<f64>>| -> Result<DVector<f64>> {
                let g = block_g(x, &out.params)?;
                Ok(match prev {
                    None => g,
                    Some(p) => p + g + block_g_prime(p, &out.params)?,
                })
            };
            let zt = advance(&train_std.inputs, z_train.as_ref())?;
            out.report.train_mse = mse(&zt, &train_std.targets)?;
            let ze = match (&test_std, test) {
                (Some(x), Some(t)) => {
                    let ze = advance(x, z_test.as_ref())?;
                    out.report.test_mse = Some(mse(&ze, &t.targets)?);
                    Some(ze)
                }
                _ => None,
            };
            Ok((out, zt, ze))
        };
        match step().and_then(|(out, zt, ze)| net.push_block(out.params.clone()).map(|()| (out, zt, ze))) {
            Ok((out, zt, ze)) => {
                let done = cfg.stop_tolerance.is_some_and(|t| out.report.train_mse <= t);
                reports.push(out.report);
                traces.push(out.trace);
                z_train = Some(zt);
                z_test = ze;
                if done {
                    break;
                }
            }
            Err(source) => {
                return Err(TrainError {
                    block: ell,
                    source,
                    partial: Box::new(net),
                    reports,
                })
            }
        }
    }
    Ok(TrainOutcome {
        network: net,
        reports,
        traces,
    })
}
