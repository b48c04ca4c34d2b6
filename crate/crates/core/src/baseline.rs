//! Global ADAM training of a Fourier network with the same architecture as
//! the block-by-block networks, used as a comparison baseline.
//!
//! All parameters of all blocks are optimized jointly against
//! `mean((z_L − y)²) + λ Σ amplitudes²`. Gradients are computed analytically
//! by reverse accumulation through the residual recursion.
//!
//! Flat parameter layout, block by block: `ω` (W×d, row-major), `Re b`,
//! `Im b`, then for blocks after the first `ω′`, `Re b′`, `Im b′`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::analysis::mse;
use crate::data::{standardize, Dataset};
use crate::error::{Error, Result};
use crate::network::{BlockParams, Network};
use crate::rng::{rng_for, stream};

const DIVERGENCE_LOSS: f64 = 1e12;
const INIT_AMPLITUDE_SD: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub lambda: f64,
    pub seed: u64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    /// Evaluate the test MSE every this many epochs (and at the last one).
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}
fn default_eval_every() -> usize {
    100
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            epochs: 15000,
            learning_rate: 1e-3,
            batch_size: 256,
            lambda: 1e-4,
            seed: 0,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
            eval_every: default_eval_every(),
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("adam.epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("adam.batch_size", "must be >= 1"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("adam.eval_every", "must be >= 1"));
        }
        if !(self.learning_rate >= 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::config("adam.learning_rate", "must be finite and >= 0"));
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::config("adam.lambda", "must be finite and >= 0"));
        }
        for (name, b) in [("adam.beta1", self.beta1), ("adam.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::config(name, "must lie in [0, 1)"));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::config("adam.eps", "must be > 0"));
        }
        Ok(())
    }
}

/// Number of scalar parameters of a `W`-wide, `L`-deep network on `d` inputs.
pub fn parameter_count(width: usize, input_dim: usize, depth: usize) -> usize {
    if depth == 0 {
        return 0;
    }
    let first = width * (input_dim + 2);
    first + (depth - 1) * (first + 3 * width)
}

/// All parameters in the flat layout.
pub fn flatten(net: &Network) -> Vec<f64> {
    let mut out = Vec::with_capacity(parameter_count(net.width(), net.input_dim(), net.depth()));
    for b in net.blocks() {
        for j in 0..b.width() {
            out.extend(b.freqs.row(j).iter());
        }
        out.extend(&b.re_b);
        out.extend(&b.im_b);
        if let (Some(fp), Some(r), Some(i)) = (&b.freqs_prime, &b.re_b_prime, &b.im_b_prime) {
            out.extend(fp);
            out.extend(r);
            out.extend(i);
        }
    }
    out
}

/// Overwrites every parameter of `net` from the flat layout.
pub fn unflatten(net: &mut Network, params: &[f64]) -> Result<()> {
    let want = parameter_count(net.width(), net.input_dim(), net.depth());
    if params.len() != want {
        return Err(Error::DimensionMismatch {
            what: "flat parameter length",
            expected: want,
            found: params.len(),
        });
    }
    let mut it = params.iter().copied();
    let mut take = |n: usize| -> Vec<f64> { (&mut it).take(n).collect() };
    for b in net.blocks_mut() {
        let (w, d) = (b.width(), b.input_dim());
        b.freqs = DMatrix::from_row_slice(w, d, &take(w * d));
        b.re_b = take(w);
        b.im_b = take(w);
        if b.has_prime() {
            b.freqs_prime = Some(take(w));
            b.re_b_prime = Some(take(w));
            b.im_b_prime = Some(take(w));
        }
    }
    Ok(())
}

/// Full forward pass for one standardized sample, returning every `z_ℓ`.
fn forward_sample(blocks: &[BlockParams], x: &[f64], zs: &mut Vec<f64>) {
    zs.clear();
    for (l, b) in blocks.iter().enumerate() {
        let mut g = 0.0;
        for j in 0..b.width() {
            let mut a = 0.0;
            for (k, xk) in x.iter().enumerate() {
                a += b.freqs[(j, k)] * xk;
            }
            let (s, c) = a.sin_cos();
            g += b.re_b[j] * c - b.im_b[j] * s;
        }
        let z = if l == 0 {
            g
        } else {
            let prev = zs[l - 1];
            let (fp, rp, ip) = primed(b);
            let mut gp = 0.0;
            for j in 0..b.width() {
                let (s, c) = (fp[j] * prev).sin_cos();
                gp += rp[j] * c - ip[j] * s;
            }
            prev + g + gp
        };
        zs.push(z);
    }
}

fn primed(b: &BlockParams) -> (&[f64], &[f64], &[f64]) {
    match (&b.freqs_prime, &b.re_b_prime, &b.im_b_prime) {
        (Some(f), Some(r), Some(i)) => (f, r, i),
        _ => unreachable!("blocks after the first carry primed parameters"),
    }
}

fn regularizer(net: &Network, lambda: f64) -> f64 {
    lambda * net.blocks().iter().map(BlockParams::amplitude_norm_squared).sum::<f64>()
}

/// Offsets of each block in the flat layout.
fn block_offsets(net: &Network) -> Vec<usize> {
    let (w, d) = (net.width(), net.input_dim());
    (0..net.depth()).map(|l| parameter_count(w, d, l)).collect()
}

/// Loss and gradient on standardized inputs `x` (rows are samples).
fn loss_grad_normalized(net: &Network, x: &DMatrix<f64>, rows: &[usize], y: &DVector<f64>, lambda: f64) -> Result<(f64, Vec<f64>)> {
    let blocks = net.blocks();
    let (w, d) = (net.width(), net.input_dim());
    let offsets = block_offsets(net);
    let mut grad = vec![0.0; parameter_count(w, d, net.depth())];
    let mut zs = Vec::with_capacity(blocks.len());
    let mut xs = vec![0.0; d];
    let mut loss = 0.0;
    let inv = 1.0 / rows.len() as f64;
    for &n in rows {
        for (k, v) in xs.iter_mut().enumerate() {
            *v = x[(n, k)];
        }
        forward_sample(blocks, &xs, &mut zs);
        let err = zs[blocks.len() - 1] - y[n];
        loss += err * err * inv;
        let mut adj = 2.0 * err * inv;
        for (l, b) in blocks.iter().enumerate().rev() {
            let o = offsets[l];
            let (o_re, o_im) = (o + w * d, o + w * d + w);
            for j in 0..w {
                let a: f64 = xs.iter().enumerate().map(|(k, x)| b.freqs[(j, k)] * x).sum();
                let (s, c) = a.sin_cos();
                grad[o_re + j] += adj * c;
                grad[o_im + j] -= adj * s;
                let da = adj * (-b.re_b[j] * s - b.im_b[j] * c);
                for k in 0..d {
                    grad[o + j * d + k] += da * xs[k];
                }
            }
            if l > 0 {
                let prev = zs[l - 1];
                let (fp, rp, ip) = primed(b);
                let (o_fp, o_rp, o_ip) = (o_im + w, o_im + 2 * w, o_im + 3 * w);
                let mut dz = 1.0;
                for j in 0..w {
                    let (s, c) = (fp[j] * prev).sin_cos();
                    grad[o_rp + j] += adj * c;
                    grad[o_ip + j] -= adj * s;
                    let slope = -rp[j] * s - ip[j] * c;
                    grad[o_fp + j] += adj * slope * prev;
                    dz += fp[j] * slope;
                }
                adj *= dz;
            }
        }
    }
    loss += regularizer(net, lambda);
    if lambda != 0.0 {
        for (l, b) in blocks.iter().enumerate() {
            let o = offsets[l] + w * d;
            let amps = b.re_b.iter().chain(&b.im_b);
            for (i, v) in amps.enumerate() {
                grad[o + i] += 2.0 * lambda * v;
            }
            if l > 0 {
                let (_, rp, ip) = primed(b);
                for (i, v) in rp.iter().chain(ip).enumerate() {
                    grad[o + 3 * w + i] += 2.0 * lambda * v;
                }
            }
        }
    }
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss {
            index: grad.iter().position(|g| !g.is_finite()),
        });
    }
    Ok((loss, grad))
}

/// Batch-mean squared error plus `λ·|amplitudes|²`, and its gradient in
/// the flat layout. `inputs` are raw; the network's normalization is
/// applied.
pub fn loss_and_gradient(net: &Network, inputs: &DMatrix<f64>, targets: &DVector<f64>, lambda: f64) -> Result<(f64, Vec<f64>)> {
    if net.depth() == 0 {
        return Err(Error::config("network", "depth must be >= 1"));
    }
    if inputs.nrows() != targets.len() || inputs.nrows() == 0 {
        return Err(Error::DimensionMismatch {
            what: "batch targets vs batch inputs",
            expected: inputs.nrows(),
            found: targets.len(),
        });
    }
    let x = net.norm_stats().normalize(inputs)?;
    let rows: Vec<usize> = (0..x.nrows()).collect();
    loss_grad_normalized(net, &x, &rows, targets, lambda)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    /// Full-batch regularized training loss after the epoch.
    pub train_loss: f64,
    pub test_mse: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct AdamOutcome {
    pub network: Network,
    pub losses: Vec<EpochLoss>,
}

/// Random initialization: standard-normal frequencies, `N(0, 0.1²)`
/// amplitudes.
pub fn initial_network(width: usize, depth: usize, stats: crate::network::NormStats, seed: u64) -> Result<Network> {
    let d = stats.dim();
    let mut rng = rng_for(seed, stream::ADAM);
    let amp = Normal::new(0.0, INIT_AMPLITUDE_SD).expect("valid sd");
    let mut net = Network::new(d, width, stats)?;
    for l in 1..=depth {
        let freqs = DMatrix::from_fn(width, d, |_, _| rng.sample(StandardNormal));
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| amp.sample(&mut rng)).collect() };
        let (re_b, im_b) = (draw(width), draw(width));
        let primed = (l > 1).then(|| {
            let fp: Vec<f64> = (0..width).map(|_| rng.sample(StandardNormal)).collect();
            let rp: Vec<f64> = (0..width).map(|_| amp.sample(&mut rng)).collect();
            let ip: Vec<f64> = (0..width).map(|_| amp.sample(&mut rng)).collect();
            (fp, rp, ip)
        });
        let (freqs_prime, re_b_prime, im_b_prime) = match primed {
            Some((f, r, i)) => (Some(f), Some(r), Some(i)),
            None => (None, None, None),
        };
        net.push_block(BlockParams {
            freqs,
            re_b,
            im_b,
            freqs_prime,
            re_b_prime,
            im_b_prime,
        })?;
    }
    Ok(net)
}

/// Trains a `width × depth` network with ADAM on shuffled mini-batches.
pub fn adam_train(dataset: &Dataset, test: Option<&Dataset>, width: usize, depth: usize, cfg: &AdamConfig) -> Result<AdamOutcome> {
    cfg.validate()?;
    if width == 0 || depth == 0 {
        return Err(Error::config("W/L", "width and depth must be >= 1"));
    }
    let (train_std, stats) = standardize(dataset)?;
    let test_std = test.map(|t| stats.normalize(&t.inputs)).transpose()?;
    let mut net = initial_network(width, depth, stats, cfg.seed)?;
    let mut params = flatten(&net);
    let mut m = vec![0.0; params.len()];
    let mut v = vec![0.0; params.len()];
    let mut rng = rng_for(cfg.seed, stream::ADAM);
    // Decorrelate batch order from the initialization draws.
    rng.set_word_pos(1 << 40);
    let n = train_std.len();
    let all: Vec<usize> = (0..n).collect();
    let mut order = all.clone();
    let mut step = 0i32;
    let mut losses = Vec::with_capacity(cfg.epochs);
    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (_, g) = loss_grad_normalized(&net, &train_std.inputs, batch, &train_std.targets, cfg.lambda)?;
            step += 1;
            let (c1, c2) = (1.0 - cfg.beta1.powi(step), 1.0 - cfg.beta2.powi(step));
            for i in 0..params.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                params[i] -= cfg.learning_rate * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
            }
            unflatten(&mut net, &params)?;
        }
        let train_loss = full_loss(&net, &train_std.inputs, &train_std.targets, cfg.lambda)?;
        if !(train_loss <= DIVERGENCE_LOSS) {
            return Err(Error::Diverged { epoch, loss: train_loss });
        }
        let test_mse = match (&test_std, test) {
            (Some(x), Some(t)) if epoch % cfg.eval_every == 0 || epoch == cfg.epochs => {
                let pred = net.forward_normalized(x, depth)?.pop().expect("depth >= 1");
                Some(mse(&pred, &t.targets)?)
            }
            _ => None,
        };
        losses.push(EpochLoss {
            epoch,
            train_loss,
            test_mse,
        });
    }
    Ok(AdamOutcome { network: net, losses })
}

fn full_loss(net: &Network, x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> Result<f64> {
    let pred = net.forward_normalized(x, net.depth())?.pop().expect("depth >= 1");
    Ok(mse(&pred, y)? + regularizer(net, lambda))
}
