//! Frequency sampling.
//!
//! Block 1 runs a Metropolis chain per frequency `ω_j`; blocks `ℓ > 1` run
//! Metropolis-within-Gibbs, alternating an `ω` update and an `ω′` update.
//! All `W` chains propose jointly and share one ridge solve per proposal
//! batch; chain `j` then accepts with probability
//! `min{1, (|b̄_j| / |b_j|)^γ}`, where `b̄` are the amplitudes of the
//! proposed frequency set and `b` the stored ones. After each update pass the
//! amplitudes are re-solved for the accepted frequencies.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::fmt_f64;
use crate::linalg::{self, assemble_design_matrix, AmplitudeSolution, DesignMatrix, FeatureKind};
use crate::rng::Rng;

/// Frequencies that a proposal must satisfy to be admissible.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignRule {
    /// Scalar `ω` and all `ω′` must be non-negative. Requires d = 1.
    RejectNegative1d,
    /// The first component of `ω`, and every `ω′`, must be non-negative.
    HalfSpaceFirstComponent,
    None,
}

impl SignRule {
    pub fn default_for_dim(d: usize) -> Self {
        if d == 1 {
            SignRule::RejectNegative1d
        } else {
            SignRule::None
        }
    }

    pub fn admits(self, freq: &[f64]) -> bool {
        match self {
            SignRule::RejectNegative1d => freq.iter().all(|&w| w >= 0.0),
            SignRule::HalfSpaceFirstComponent => freq.first().is_none_or(|&w| w >= 0.0),
            SignRule::None => true,
        }
    }

    pub fn admits_prime(self, freq: f64) -> bool {
        match self {
            SignRule::None => true,
            _ => freq >= 0.0,
        }
    }

    /// Maps an initial draw into the admissible set. `ω` and `−ω` span the
    /// same real basis pair, so reflecting is a relabeling, not a bias.
    pub fn reflect(self, freq: &mut [f64]) {
        match self {
            SignRule::RejectNegative1d => freq.iter_mut().for_each(|w| *w = w.abs()),
            SignRule::HalfSpaceFirstComponent => {
                if freq.first().is_some_and(|&w| w < 0.0) {
                    freq.iter_mut().for_each(|w| *w = -*w);
                }
            }
            SignRule::None => {}
        }
    }

    pub fn reflect_prime(self, freq: f64) -> f64 {
        match self {
            SignRule::None => freq,
            _ => freq.abs(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalConfig {
    /// Variance of the Gaussian random-walk proposal for `ω`.
    pub delta: f64,
    /// Variance of the Gaussian random-walk proposal for `ω′`.
    pub delta_prime: f64,
    pub gamma: f64,
    pub gamma_prime: f64,
    pub sign_rule: SignRule,
    /// Keep `ω′` at its initial draw (Method 2).
    #[serde(default)]
    pub freeze_prime: bool,
}

impl ProposalConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("delta", self.delta),
            ("delta_prime", self.delta_prime),
            ("gamma", self.gamma),
            ("gamma_prime", self.gamma_prime),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::config(name, format!("must be finite and > 0, got {v}")));
            }
        }
        Ok(())
    }
}

/// Gaussian random-walk proposal `current + √variance · g`.
pub fn propose_gaussian(current: &[f64], variance: f64, rng: &mut Rng) -> Vec<f64> {
    let sd = variance.max(0.0).sqrt();
    current
        .iter()
        .map(|&c| {
            let g: f64 = rng.sample(StandardNormal);
            c + sd * g
        })
        .collect()
}

/// `min{1, (b_new/b_old)^γ}`, with probability 1 whenever `b_old = 0`.
pub fn acceptance_probability(b_new_magnitude: f64, b_old_magnitude: f64, gamma: f64) -> f64 {
    if b_new_magnitude >= b_old_magnitude || b_old_magnitude <= 0.0 {
        return 1.0;
    }
    (b_new_magnitude / b_old_magnitude).powf(gamma)
}

/// The training problem one block sees: standardized inputs, the residual
/// it fits, and (for `ℓ > 1`) the previous block output.
#[derive(Clone, Debug)]
pub struct BlockData<'a> {
    pub inputs: &'a DMatrix<f64>,
    pub residual: &'a DVector<f64>,
    pub z_prev: Option<&'a DVector<f64>>,
}

impl BlockData<'_> {
    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }
}

/// Current state of the `W` chains of one block.
#[derive(Clone, Debug)]
pub struct ChainState {
    pub freqs: DMatrix<f64>,
    pub freqs_prime: Option<Vec<f64>>,
    /// Ridge solution for `freqs`/`freqs_prime` against the block residual.
    pub amplitudes: AmplitudeSolution,
    pub rng: Rng,
    design: DesignMatrix,
    track_residuals: bool,
    max_normal_residual: f64,
    solves: usize,
}

impl ChainState {
    pub fn new(
        data: &BlockData<'_>,
        freqs: DMatrix<f64>,
        freqs_prime: Option<Vec<f64>>,
        rng: Rng,
        lambda: f64,
    ) -> Result<Self> {
        let fp = freqs_prime.as_ref().map(|v| DVector::from_column_slice(v));
        let design = assemble_design_matrix(data.inputs, data.z_prev, &freqs, fp.as_ref())?;
        let mut state = ChainState {
            freqs,
            freqs_prime,
            amplitudes: AmplitudeSolution::zeros(0, false, 0.0),
            rng,
            design,
            track_residuals: false,
            max_normal_residual: 0.0,
            solves: 0,
        };
        state.amplitudes = state.solve(&state.design.clone(), data, lambda)?;
        Ok(state)
    }

    /// Records the normal-equation residual of every subsequent solve.
    pub fn track_normal_residuals(&mut self, on: bool) {
        self.track_residuals = on;
    }

    /// Largest relative normal-equation residual seen while tracking.
    pub fn max_normal_residual(&self) -> f64 {
        self.max_normal_residual
    }

    pub fn solve_count(&self) -> usize {
        self.solves
    }

    pub fn width(&self) -> usize {
        self.freqs.nrows()
    }

    pub fn dim(&self) -> usize {
        self.freqs.ncols()
    }

    pub fn design(&self) -> &DesignMatrix {
        &self.design
    }

    fn solve(&mut self, design: &DesignMatrix, data: &BlockData<'_>, lambda: f64) -> Result<AmplitudeSolution> {
        let n = data.len();
        let sol = linalg::solve_ridge(design, data.residual, lambda, n)?;
        self.solves += 1;
        if self.track_residuals {
            let res = linalg::normal_equation_residual(design.matrix(), data.residual, lambda, n, &sol.coefficients());
            self.max_normal_residual = self.max_normal_residual.max(res);
        }
        Ok(sol)
    }

    fn freq_row(&self, j: usize) -> Vec<f64> {
        self.freqs.row(j).iter().copied().collect()
    }

    fn snapshot(&self, accepted: Vec<bool>, accepted_prime: Vec<bool>) -> SweepRecord {
        let w = self.width();
        SweepRecord {
            freqs: (0..w).flat_map(|j| self.freq_row(j)).collect(),
            freqs_prime: self.freqs_prime.clone(),
            accepted,
            accepted_prime,
            magnitude: (0..w).map(|j| self.amplitudes.magnitude(j)).collect(),
            magnitude_prime: self
                .freqs_prime
                .as_ref()
                .map(|_| (0..w).map(|j| self.amplitudes.magnitude_prime(j)).collect()),
        }
    }

    /// Proposes new `ω` for every chain and accepts chain-wise. Returns the
    /// acceptance flags.
    fn update_input_freqs(&mut self, data: &BlockData<'_>, cfg: &ProposalConfig, lambda: f64) -> Result<Vec<bool>> {
        let w = self.width();
        let mut proposal = self.design.clone();
        let mut proposed = Vec::with_capacity(w);
        for j in 0..w {
            let p = propose_gaussian(&self.freq_row(j), cfg.delta, &mut self.rng);
            proposal.set_input_chain(j, data.inputs, &p);
            proposed.push(p);
        }
        let bar = self.solve(&proposal, data, lambda)?;
        let mut accepted = vec![false; w];
        for j in 0..w {
            let u: f64 = self.rng.random();
            let prob = acceptance_probability(bar.magnitude(j), self.amplitudes.magnitude(j), cfg.gamma);
            if cfg.sign_rule.admits(&proposed[j]) && u < prob {
                accepted[j] = true;
                for (k, v) in proposed[j].iter().enumerate() {
                    self.freqs[(j, k)] = *v;
                }
                self.amplitudes.re_b[j] = bar.re_b[j];
                self.amplitudes.im_b[j] = bar.im_b[j];
                self.design.copy_chain_from(&proposal, j, FeatureKind::Input);
            }
        }
        Ok(accepted)
    }

    fn update_prime_freqs(&mut self, data: &BlockData<'_>, cfg: &ProposalConfig, lambda: f64) -> Result<Vec<bool>> {
        let w = self.width();
        let z = data.z_prev.ok_or(Error::MissingPrimed(0))?;
        let current = self.freqs_prime.clone().ok_or(Error::MissingPrimed(0))?;
        let mut proposal = self.design.clone();
        let proposed = propose_gaussian(&current, cfg.delta_prime, &mut self.rng);
        for (j, &p) in proposed.iter().enumerate() {
            proposal.set_previous_chain(j, z, p);
        }
        let bar = self.solve(&proposal, data, lambda)?;
        let mut accepted = vec![false; w];
        for j in 0..w {
            let u: f64 = self.rng.random();
            let prob = acceptance_probability(
                bar.magnitude_prime(j),
                self.amplitudes.magnitude_prime(j),
                cfg.gamma_prime,
            );
            if cfg.sign_rule.admits_prime(proposed[j]) && u < prob {
                accepted[j] = true;
                if let Some(fp) = self.freqs_prime.as_mut() {
                    fp[j] = proposed[j];
                }
                if let (Some(re), Some(im), Some(bre), Some(bim)) = (
                    self.amplitudes.re_b_prime.as_mut(),
                    self.amplitudes.im_b_prime.as_mut(),
                    bar.re_b_prime.as_ref(),
                    bar.im_b_prime.as_ref(),
                ) {
                    re[j] = bre[j];
                    im[j] = bim[j];
                }
                self.design.copy_chain_from(&proposal, j, FeatureKind::Previous);
            }
        }
        Ok(accepted)
    }

    /// Re-solves the amplitudes for the stored frequencies. Skipped when no
    /// frequency changed, in which case the stored amplitudes already are
    /// that solution.
    fn resolve(&mut self, data: &BlockData<'_>, lambda: f64, changed: bool) -> Result<()> {
        if changed {
            let design = self.design.clone();
            self.amplitudes = self.solve(&design, data, lambda)?;
        }
        Ok(())
    }
}

/// One Metropolis sweep over all block-1 chains.
pub fn metropolis_sweep_block1(
    state: &mut ChainState,
    data: &BlockData<'_>,
    cfg: &ProposalConfig,
    lambda: f64,
) -> Result<SweepRecord> {
    if state.freqs_prime.is_some() || data.z_prev.is_some() {
        return Err(Error::config("state", "block-1 sweep called on a block with primed parameters"));
    }
    let accepted = state.update_input_freqs(data, cfg, lambda)?;
    state.resolve(data, lambda, accepted.iter().any(|&a| a))?;
    Ok(state.snapshot(accepted, Vec::new()))
}

/// One Metropolis-within-Gibbs sweep over all chains of a block `ℓ > 1`:
/// an `ω` pass, an `ω′` pass (skipped when `cfg.freeze_prime`), and a final
/// amplitude re-solve.
pub fn gibbs_sweep_block_ell(
    state: &mut ChainState,
    data: &BlockData<'_>,
    cfg: &ProposalConfig,
    lambda: f64,
) -> Result<SweepRecord> {
    if state.freqs_prime.is_none() || data.z_prev.is_none() {
        return Err(Error::MissingPrimed(0));
    }
    let accepted = state.update_input_freqs(data, cfg, lambda)?;
    let accepted_prime = if cfg.freeze_prime {
        vec![false; state.width()]
    } else {
        state.update_prime_freqs(data, cfg, lambda)?
    };
    let changed = accepted.iter().chain(&accepted_prime).any(|&a| a);
    state.resolve(data, lambda, changed)?;
    Ok(state.snapshot(accepted, accepted_prime))
}

/// State of every chain after one sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRecord {
    /// Row-major W×d.
    pub freqs: Vec<f64>,
    pub freqs_prime: Option<Vec<f64>>,
    pub accepted: Vec<bool>,
    /// Empty for block 1.
    pub accepted_prime: Vec<bool>,
    pub magnitude: Vec<f64>,
    pub magnitude_prime: Option<Vec<f64>>,
}

/// Per-sweep history of one block's chains.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainTrace {
    pub block: usize,
    pub width: usize,
    pub dim: usize,
    pub rows: Vec<SweepRecord>,
    /// Whether `ω′` proposals were made (false for block 1 and Method 2).
    pub samples_prime: bool,
}

impl ChainTrace {
    pub fn new(block: usize, width: usize, dim: usize, samples_prime: bool) -> Self {
        ChainTrace {
            block,
            width,
            dim,
            rows: Vec::new(),
            samples_prime,
        }
    }

    pub fn iterations(&self) -> usize {
        self.rows.len()
    }

    pub fn push(&mut self, row: SweepRecord) {
        self.rows.push(row);
    }

    /// Fraction of accepted `ω` proposals over all chains and sweeps.
    pub fn acceptance_rate(&self) -> f64 {
        let total = self.rows.len() * self.width;
        if total == 0 {
            return 0.0;
        }
        let acc: usize = self.rows.iter().map(|r| r.accepted.iter().filter(|&&a| a).count()).sum();
        acc as f64 / total as f64
    }

    /// Fraction of accepted `ω′` proposals, if any were made.
    pub fn acceptance_rate_prime(&self) -> Option<f64> {
        if !self.samples_prime || self.rows.is_empty() {
            return None;
        }
        let total = self.rows.len() * self.width;
        let acc: usize = self
            .rows
            .iter()
            .map(|r| r.accepted_prime.iter().filter(|&&a| a).count())
            .sum();
        Some(acc as f64 / total as f64)
    }

    /// Writes rows `iteration,block,chain_index,freq_1..freq_d,freq_prime,
    /// accepted_flag,amplitude_magnitude,accepted_flag_prime,
    /// amplitude_magnitude_prime`. Iterations are 1-based; primed columns
    /// are empty for block 1.
    pub fn write_csv_rows<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for (it, row) in self.rows.iter().enumerate() {
            for j in 0..self.width {
                write!(out, "{},{},{}", it + 1, self.block, j + 1)?;
                for k in 0..self.dim {
                    write!(out, ",{}", fmt_f64(row.freqs[j * self.dim + k]))?;
                }
                match &row.freqs_prime {
                    Some(fp) => write!(out, ",{}", fmt_f64(fp[j]))?,
                    None => write!(out, ",")?,
                }
                write!(out, ",{},{}", u8::from(row.accepted[j]), fmt_f64(row.magnitude[j]))?;
                match (&row.magnitude_prime, row.accepted_prime.get(j)) {
                    (Some(mp), Some(a)) => writeln!(out, ",{},{}", u8::from(*a), fmt_f64(mp[j]))?,
                    _ => writeln!(out, ",,")?,
                }
            }
        }
        Ok(())
    }

    pub fn csv_header(dim: usize) -> String {
        let mut h = String::from("iteration,block,chain_index");
        for k in 1..=dim {
            h.push_str(&format!(",freq_{k}"));
        }
        h.push_str(",freq_prime,accepted_flag,amplitude_magnitude,accepted_flag_prime,amplitude_magnitude_prime");
        h
    }
}
