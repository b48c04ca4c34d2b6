//! Target functions and seeded dataset generation.

use std::f64::consts::FRAC_PI_2;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::quadrature;
use crate::rng::{rng_for, stream};

type Evaluator = dyn Fn(&[f64]) -> f64 + Send + Sync;

/// A scalar function of `input_dim` variables with a box domain.
#[derive(Clone)]
pub struct TargetFunction {
    pub name: String,
    pub input_dim: usize,
    pub domain: Vec<(f64, f64)>,
    eval: Arc<Evaluator>,
}

impl fmt::Debug for TargetFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("TargetFunction")
            .field("name", &self.name)
            .field("input_dim", &self.input_dim)
            .field("domain", &self.domain)
            .finish()
    }
}

/// Name plus parameters of a registered target, as written in configs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub name: String,
    /// Frequency of the `cosine` target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frequency: Option<f64>,
    /// Amplitude of the `cosine` target.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub amplitude: Option<f64>,
}

impl TargetSpec {
    pub fn named(name: &str) -> Self {
        TargetSpec {
            name: name.to_string(),
            frequency: None,
            amplitude: None,
        }
    }
}

pub const TARGET_NAMES: [&str; 5] = ["multiscale", "stairstep", "sine_discontinuity_3d", "cosine", "zero"];

impl TargetFunction {
    /// A user-defined target.
    pub fn new<F>(name: &str, domain: Vec<(f64, f64)>, eval: F) -> Self
    where
        F: Fn(&[f64]) -> f64 + Send + Sync + 'static,
    {
        TargetFunction {
            name: name.to_string(),
            input_dim: domain.len(),
            domain,
            eval: Arc::new(eval),
        }
    }

    pub fn from_spec(spec: &TargetSpec) -> Result<Self> {
        let unit = vec![(-1.0, 1.0)];
        Ok(match spec.name.as_str() {
            "multiscale" => TargetFunction::new("multiscale", unit, |t| multiscale(t[0])),
            "stairstep" => TargetFunction::new("stairstep", unit, |t| stairstep(t[0])),
            "sine_discontinuity_3d" => TargetFunction::new("sine_discontinuity_3d", vec![(0.0, 1.0); 3], |t| {
                sine_discontinuity_3d([t[0], t[1], t[2]])
            }),
            "cosine" => {
                let w = spec.frequency.unwrap_or(5.0);
                let a = spec.amplitude.unwrap_or(1.0);
                if !w.is_finite() || !a.is_finite() {
                    return Err(Error::config("target.frequency", "must be finite"));
                }
                TargetFunction::new("cosine", unit, move |t| a * (w * t[0]).cos())
            }
            "zero" => TargetFunction::new("zero", unit, |_| 0.0),
            other => return Err(Error::UnknownTarget(other.to_string())),
        })
    }

    pub fn eval(&self, theta: &[f64]) -> f64 {
        (self.eval)(theta)
    }

    pub fn eval_rows(&self, inputs: &DMatrix<f64>) -> DVector<f64> {
        let mut row = vec![0.0; inputs.ncols()];
        DVector::from_fn(inputs.nrows(), |n, _| {
            for (k, r) in row.iter_mut().enumerate() {
                *r = inputs[(n, k)];
            }
            self.eval(&row)
        })
    }
}

/// `cos(4θ) + 0.3cos(70θ) + 0.05cos(150θ)`.
pub fn multiscale(theta: f64) -> f64 {
    (4.0 * theta).cos() + 0.3 * (70.0 * theta).cos() + 0.05 * (150.0 * theta).cos()
}

/// Four-level staircase on [−1, 1] with left-closed steps at −1/2, 0, 1/2.
pub fn stairstep(theta: f64) -> f64 {
    if theta < -0.5 {
        0.0
    } else if theta < 0.0 {
        1.0 / 3.0
    } else if theta < 0.5 {
        2.0 / 3.0
    } else {
        1.0
    }
}

const SI_SERIES_LIMIT: f64 = 4.0;
const SI_ASYMPTOTIC_LIMIT: f64 = 1.0e3;

/// Sine integral `Si(x) = ∫_0^x sin(t)/t dt`.
///
/// Power series for |x| ≤ 4, `Si(4)` plus adaptive Gauss–Kronrod up to
/// |x| = 1000, and the auxiliary-function asymptotic expansion beyond.
pub fn sine_integral(x: f64) -> f64 {
    if x < 0.0 {
        return -sine_integral(-x);
    }
    if x <= SI_SERIES_LIMIT {
        return si_series(x);
    }
    if x > SI_ASYMPTOTIC_LIMIT {
        return si_asymptotic(x);
    }
    let sinc = |t: f64| t.sin() / t;
    // Whole-period panels keep the bisection shallow.
    let mut acc = si_series(SI_SERIES_LIMIT);
    let mut a = SI_SERIES_LIMIT;
    while a < x {
        let b = (a + std::f64::consts::PI).min(x);
        acc += quadrature::integrate(sinc, a, b, 1e-15);
        a = b;
    }
    acc
}

fn si_series(x: f64) -> f64 {
    let x2 = x * x;
    let mut term = x; // x^{2k+1}/(2k+1)! with sign
    let mut sum = x;
    let mut k = 0u32;
    loop {
        k += 1;
        let m = f64::from(2 * k);
        term *= -x2 / (m * (m + 1.0));
        let add = term / (m + 1.0);
        sum += add;
        if add.abs() < 1e-18 * sum.abs().max(1e-300) {
            return sum;
        }
    }
}

fn si_asymptotic(x: f64) -> f64 {
    // f ~ (1/x) Σ (−1)^k (2k)!/x^{2k},  g ~ (1/x²) Σ (−1)^k (2k+1)!/x^{2k}
    let inv2 = 1.0 / (x * x);
    let (mut f, mut g) = (0.0, 0.0);
    let (mut tf, mut tg) = (1.0, 1.0);
    for k in 0..6u32 {
        f += tf;
        g += tg;
        let a = f64::from(2 * k + 1);
        let b = f64::from(2 * k + 2);
        tf *= -a * b * inv2;
        tg *= -b * (b + 1.0) * inv2;
    }
    FRAC_PI_2 - (f / x) * x.cos() - (g * inv2) * x.sin()
}

/// `exp(−|θ − c|²/2) · Si((θ₁ − 0.5)/0.1)` with `c = (0.5, 0.5, 0.5)`.
pub fn sine_discontinuity_3d(theta: [f64; 3]) -> f64 {
    let r2: f64 = theta.iter().map(|t| (t - 0.5).powi(2)).sum();
    (-r2 / 2.0).exp() * sine_integral((theta[0] - 0.5) / 0.1)
}

/// `n` i.i.d. uniform draws over the target's domain, evaluated.
pub fn generate_dataset(target: &TargetFunction, n: usize, seed: u64) -> Result<Dataset> {
    generate_dataset_on_stream(target, n, seed, stream::DATASET_TRAIN)
}

pub fn generate_dataset_on_stream(target: &TargetFunction, n: usize, seed: u64, stream_id: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::config("N", "dataset size must be >= 1"));
    }
    let mut rng = rng_for(seed, stream_id);
    let d = target.input_dim;
    let mut inputs = DMatrix::zeros(n, d);
    for i in 0..n {
        for (k, &(lo, hi)) in target.domain.iter().enumerate() {
            let u: f64 = rng.random();
            inputs[(i, k)] = lo + (hi - lo) * u;
        }
    }
    let targets = target.eval_rows(&inputs);
    Dataset::new(inputs, targets)
}
