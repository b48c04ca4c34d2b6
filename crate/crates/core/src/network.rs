//! Random Fourier neural network data model and forward evaluation.
//!
//! A network of depth `L` realizes `z_L`, where
//!
//! ```text
//! z_1 = g_1(θ̃)
//! z_ℓ = z_{ℓ−1} + g_ℓ(θ̃) + g′_ℓ(z_{ℓ−1}),   ℓ = 2..L
//! g_ℓ(θ̃)  = Σ_j Re(b_j) cos(ω_j·θ̃) − Im(b_j) sin(ω_j·θ̃)
//! g′_ℓ(z) = Σ_j Re(b′_j) cos(ω′_j z) − Im(b′_j) sin(ω′_j z)
//! ```
//!
//! and `θ̃ = (θ − μ)/σ` is the input standardized with the stored
//! [`NormStats`]. Frequencies therefore live in standardized units.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::AmplitudeSolution;

pub const NETWORK_FORMAT: &str = "rfnn-network";
pub const NETWORK_FORMAT_VERSION: u32 = 1;

/// Per-dimension standardization `θ̃ = (θ − mean)/std`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    pub fn identity(dim: usize) -> Self {
        NormStats {
            mean: vec![0.0; dim],
            std: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.std.len() {
            return Err(Error::DimensionMismatch {
                what: "norm_stats std length vs mean length",
                expected: self.mean.len(),
                found: self.std.len(),
            });
        }
        if self.std.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
            return Err(Error::config("norm_stats.std", "every component must be finite and > 0"));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::NonFinite("norm_stats.mean"));
        }
        Ok(())
    }

    pub fn normalize(&self, raw: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        if raw.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "input dimension vs norm_stats",
                expected: self.dim(),
                found: raw.ncols(),
            });
        }
        Ok(DMatrix::from_fn(raw.nrows(), raw.ncols(), |n, k| {
            (raw[(n, k)] - self.mean[k]) / self.std[k]
        }))
    }
}

/// Parameters of one block. Block 1 carries no primed fields.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    /// W×d matrix of input frequencies, one row per chain.
    pub freqs: DMatrix<f64>,
    pub re_b: Vec<f64>,
    pub im_b: Vec<f64>,
    pub freqs_prime: Option<Vec<f64>>,
    pub re_b_prime: Option<Vec<f64>>,
    pub im_b_prime: Option<Vec<f64>>,
}

impl BlockParams {
    pub fn from_solution(freqs: DMatrix<f64>, freqs_prime: Option<Vec<f64>>, amps: &AmplitudeSolution) -> Self {
        BlockParams {
            freqs,
            re_b: amps.re_b.clone(),
            im_b: amps.im_b.clone(),
            freqs_prime,
            re_b_prime: amps.re_b_prime.clone(),
            im_b_prime: amps.im_b_prime.clone(),
        }
    }

    pub fn width(&self) -> usize {
        self.freqs.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.freqs.ncols()
    }

    pub fn has_prime(&self) -> bool {
        self.freqs_prime.is_some()
    }

    fn validate(&self, index: usize) -> Result<()> {
        let w = self.width();
        for (what, v) in [("re_b length vs width", &self.re_b), ("im_b length vs width", &self.im_b)] {
            if v.len() != w {
                return Err(Error::DimensionMismatch {
                    what,
                    expected: w,
                    found: v.len(),
                });
            }
        }
        let primed = [&self.freqs_prime, &self.re_b_prime, &self.im_b_prime];
        let present = primed.iter().filter(|p| p.is_some()).count();
        if present != 0 && present != 3 {
            return Err(Error::MissingPrimed(index));
        }
        let want_prime = index > 1;
        if want_prime != (present == 3) {
            return Err(Error::config(
                format!("blocks[{index}]"),
                if want_prime {
                    "blocks after the first must carry freqs_prime, re_b_prime and im_b_prime"
                } else {
                    "the first block must not carry primed fields"
                },
            ));
        }
        for v in primed.into_iter().flatten() {
            if v.len() != w {
                return Err(Error::DimensionMismatch {
                    what: "primed field length vs width",
                    expected: w,
                    found: v.len(),
                });
            }
        }
        let finite = self.freqs.iter().all(|v| v.is_finite())
            && self.re_b.iter().chain(&self.im_b).all(|v| v.is_finite())
            && primed.iter().flat_map(|p| p.iter().flatten()).all(|v| v.is_finite());
        if !finite {
            return Err(Error::NonFinite("block parameters"));
        }
        Ok(())
    }

    /// `Σ_j |b_j| + |b′_j|`.
    pub fn amplitude_l1(&self) -> f64 {
        let mut s: f64 = self.re_b.iter().zip(&self.im_b).map(|(r, i)| r.hypot(*i)).sum();
        if let (Some(r), Some(i)) = (&self.re_b_prime, &self.im_b_prime) {
            s += r.iter().zip(i).map(|(r, i)| r.hypot(*i)).sum::<f64>();
        }
        s
    }

    /// Squared norm over all real amplitude coefficients.
    pub fn amplitude_norm_squared(&self) -> f64 {
        let mut s: f64 = self.re_b.iter().chain(&self.im_b).map(|v| v * v).sum();
        if let (Some(r), Some(i)) = (&self.re_b_prime, &self.im_b_prime) {
            s += r.iter().chain(i).map(|v| v * v).sum::<f64>();
        }
        s
    }
}

/// `g_ℓ` evaluated on standardized inputs (N×d).
pub fn block_g(theta_normalized: &DMatrix<f64>, block: &BlockParams) -> Result<DVector<f64>> {
    if theta_normalized.ncols() != block.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "input dimension vs block frequency dimension",
            expected: block.input_dim(),
            found: theta_normalized.ncols(),
        });
    }
    let n = theta_normalized.nrows();
    let d = block.input_dim();
    let mut out = DVector::zeros(n);
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..block.width() {
            let mut arg = 0.0;
            for k in 0..d {
                arg += block.freqs[(j, k)] * theta_normalized[(i, k)];
            }
            let (s, c) = arg.sin_cos();
            acc += block.re_b[j] * c - block.im_b[j] * s;
        }
        out[i] = acc;
    }
    Ok(out)
}

/// `g′_ℓ` evaluated on the previous block output.
pub fn block_g_prime(z_prev: &DVector<f64>, block: &BlockParams) -> Result<DVector<f64>> {
    let (Some(fp), Some(re), Some(im)) = (&block.freqs_prime, &block.re_b_prime, &block.im_b_prime) else {
        return Err(Error::MissingPrimed(0));
    };
    Ok(DVector::from_fn(z_prev.len(), |i, _| {
        let z = z_prev[i];
        fp.iter()
            .zip(re.iter().zip(im))
            .map(|(w, (r, m))| {
                let (s, c) = (w * z).sin_cos();
                r * c - m * s
            })
            .sum()
    }))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    input_dim: usize,
    width: usize,
    blocks: Vec<BlockParams>,
    norm_stats: NormStats,
}

impl Network {
    /// An empty (depth 0) network; blocks are appended as they are trained.
    pub fn new(input_dim: usize, width: usize, norm_stats: NormStats) -> Result<Self> {
        if input_dim == 0 || width == 0 {
            return Err(Error::config("W/d", "input dimension and width must be >= 1"));
        }
        if norm_stats.dim() != input_dim {
            return Err(Error::DimensionMismatch {
                what: "norm_stats dimension vs input dimension",
                expected: input_dim,
                found: norm_stats.dim(),
            });
        }
        norm_stats.validate()?;
        Ok(Network {
            input_dim,
            width,
            blocks: Vec::new(),
            norm_stats,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.blocks.len()
    }

    pub fn blocks(&self) -> &[BlockParams] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [BlockParams] {
        &mut self.blocks
    }

    pub fn norm_stats(&self) -> &NormStats {
        &self.norm_stats
    }

    /// Appends a trained block, checking that it fits the network.
    pub fn push_block(&mut self, block: BlockParams) -> Result<()> {
        if block.width() != self.width {
            return Err(Error::DimensionMismatch {
                what: "block width vs network width",
                expected: self.width,
                found: block.width(),
            });
        }
        if block.input_dim() != self.input_dim {
            return Err(Error::DimensionMismatch {
                what: "block frequency dimension vs input dimension",
                expected: self.input_dim,
                found: block.input_dim(),
            });
        }
        block.validate(self.blocks.len() + 1)?;
        self.blocks.push(block);
        Ok(())
    }

    /// Drops every block after the first `depth`.
    pub fn truncate(&mut self, depth: usize) {
        self.blocks.truncate(depth);
    }

    /// `z_ℓ` for `ℓ = upto_block` (default: full depth) on raw inputs.
    pub fn forward(&self, raw_inputs: &DMatrix<f64>, upto_block: Option<usize>) -> Result<DVector<f64>> {
        let upto = upto_block.unwrap_or(self.depth());
        if upto == 0 {
            return Err(Error::config("upto_block", "must be >= 1"));
        }
        if upto > self.depth() {
            return Err(Error::config(
                "upto_block",
                format!("{upto} exceeds network depth {}", self.depth()),
            ));
        }
        let x = self.norm_stats.normalize(raw_inputs)?;
        let mut outs = self.forward_normalized(&x, upto)?;
        Ok(outs.pop().expect("upto >= 1"))
    }

    /// All block outputs `z_1..z_upto` on standardized inputs.
    pub fn forward_normalized(&self, x: &DMatrix<f64>, upto: usize) -> Result<Vec<DVector<f64>>> {
        let mut outs: Vec<DVector<f64>> = Vec::with_capacity(upto);
        for block in &self.blocks[..upto.min(self.depth())] {
            let g = block_g(x, block)?;
            let z = match outs.last() {
                None => g,
                Some(prev) => prev + g + block_g_prime(prev, block)?,
            };
            outs.push(z);
        }
        Ok(outs)
    }

    /// Upper bound `Σ_ℓ Σ_j |b_j| + |b′_j|` on `|z_L|`.
    pub fn amplitude_bound(&self) -> f64 {
        self.blocks.iter().map(BlockParams::amplitude_l1).sum()
    }

    pub fn to_document(&self) -> NetworkDocument {
        NetworkDocument {
            format: NETWORK_FORMAT.to_string(),
            format_version: NETWORK_FORMAT_VERSION,
            input_dim: self.input_dim,
            width: self.width,
            norm_stats: self.norm_stats.clone(),
            blocks: self
                .blocks
                .iter()
                .enumerate()
                .map(|(i, b)| BlockDocument {
                    index: i + 1,
                    freqs: (0..b.width()).map(|j| b.freqs.row(j).iter().copied().collect()).collect(),
                    re_b: b.re_b.clone(),
                    im_b: b.im_b.clone(),
                    freqs_prime: b.freqs_prime.clone(),
                    re_b_prime: b.re_b_prime.clone(),
                    im_b_prime: b.im_b_prime.clone(),
                })
                .collect(),
        }
    }

    pub fn from_document(doc: NetworkDocument) -> Result<Self> {
        if doc.format != NETWORK_FORMAT {
            return Err(Error::Parse(format!("unexpected format `{}`", doc.format)));
        }
        if doc.format_version != NETWORK_FORMAT_VERSION {
            return Err(Error::Parse(format!(
                "unsupported network format_version {} (expected {NETWORK_FORMAT_VERSION})",
                doc.format_version
            )));
        }
        let mut net = Network::new(doc.input_dim, doc.width, doc.norm_stats)?;
        for (i, b) in doc.blocks.into_iter().enumerate() {
            if b.index != i + 1 {
                return Err(Error::Parse(format!("block index {} out of order (expected {})", b.index, i + 1)));
            }
            if b.freqs.len() != doc.width || b.freqs.iter().any(|r| r.len() != doc.input_dim) {
                return Err(Error::DimensionMismatch {
                    what: "stored freqs shape (W rows of d)",
                    expected: doc.width * doc.input_dim,
                    found: b.freqs.iter().map(Vec::len).sum(),
                });
            }
            let flat: Vec<f64> = b.freqs.concat();
            net.push_block(BlockParams {
                freqs: DMatrix::from_row_slice(doc.width, doc.input_dim, &flat),
                re_b: b.re_b,
                im_b: b.im_b,
                freqs_prime: b.freqs_prime,
                re_b_prime: b.re_b_prime,
                im_b_prime: b.im_b_prime,
            })?;
        }
        Ok(net)
    }

    /// Serializes to the TOML network document, optionally preceded by
    /// `#`-prefixed header lines.
    pub fn to_toml_string(&self, header: &str) -> Result<String> {
        let body = toml::to_string(&self.to_document()).map_err(|e| Error::Parse(e.to_string()))?;
        Ok(format!("{header}{body}"))
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        let doc: NetworkDocument = toml::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        Network::from_document(doc)
    }

    pub fn save(&self, path: &Path, header: &str) -> Result<()> {
        std::fs::write(path, self.to_toml_string(header)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Network::from_toml_str(&std::fs::read_to_string(path)?)
    }
}

/// On-disk network schema (TOML).
///
/// ```toml
/// format = "rfnn-network"
/// format_version = 1
/// input_dim = 1
/// width = 2
///
/// [norm_stats]
/// mean = [0.0]
/// std = [0.5773]
///
/// [[blocks]]          # block 1: no primed fields
/// index = 1
/// freqs = [[2.3], [40.4]]   # W rows of d standardized frequencies
/// re_b = [1.0, 0.3]
/// im_b = [0.0, 0.0]
///
/// [[blocks]]          # blocks 2..L
/// index = 2
/// freqs = [[86.6], [1.0]]
/// re_b = [0.05, 0.0]
/// im_b = [0.0, 0.0]
/// freqs_prime = [0.5, 1.2]
/// re_b_prime = [0.0, 0.0]
/// im_b_prime = [0.0, 0.0]
/// ```
///
/// Floats are written in shortest round-trip form, so save/load is lossless.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkDocument {
    pub format: String,
    pub format_version: u32,
    pub input_dim: usize,
    pub width: usize,
    pub norm_stats: NormStats,
    pub blocks: Vec<BlockDocument>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BlockDocument {
    pub index: usize,
    pub freqs: Vec<Vec<f64>>,
    pub re_b: Vec<f64>,
    pub im_b: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freqs_prime: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub re_b_prime: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub im_b_prime: Option<Vec<f64>>,
}
