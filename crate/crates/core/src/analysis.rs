//! Error metrics, reference rate curves, frequency histograms and CSV
//! emitters.
//!
//! Frequencies are sampled in standardized input coordinates. A physical
//! frequency is recovered as `ω_phys = ω / σ` per input dimension, where `σ`
//! is the training-input standard deviation. `ω′` acts on the block output,
//! which is never rescaled, so it is reported unchanged.

use std::io::Write;
use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::io::{fmt_f64, write_comment_block};
use crate::network::NormStats;
use crate::sampler::ChainTrace;
use crate::trainer::BlockReport;

/// Mean squared error `n⁻¹ Σ (pred − truth)²`.
pub fn mse(predictions: &DVector<f64>, truths: &DVector<f64>) -> Result<f64> {
    if predictions.len() != truths.len() {
        return Err(Error::DimensionMismatch {
            what: "prediction count vs truth count",
            expected: truths.len(),
            found: predictions.len(),
        });
    }
    if truths.is_empty() {
        return Err(Error::InvalidInput("mse of empty vectors".into()));
    }
    let s: f64 = predictions.iter().zip(truths.iter()).map(|(p, t)| (p - t).powi(2)).sum();
    Ok(s / truths.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceRow {
    pub block: usize,
    pub wl: usize,
    pub train_mse: f64,
    pub test_mse: Option<f64>,
    pub theory_ref: Option<f64>,
    pub acceptance_rate: f64,
    pub acceptance_rate_prime: Option<f64>,
    pub seconds: f64,
}

/// Per-block errors next to the reference curve `C/(W·ℓ)`, with `C` anchored
/// at block 1.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub width: usize,
    pub rows: Vec<ConvergenceRow>,
    pub c_fit: Option<f64>,
    /// Slope of log test MSE against log WL over blocks 2..=L, when defined.
    pub slope: Option<f64>,
}

impl ConvergenceReport {
    pub fn from_blocks(reports: &[BlockReport], width: usize) -> Self {
        let mut rows: Vec<ConvergenceRow> = reports
            .iter()
            .map(|r| ConvergenceRow {
                block: r.block,
                wl: width * r.block,
                train_mse: r.train_mse,
                test_mse: r.test_mse,
                theory_ref: None,
                acceptance_rate: r.acceptance_rate,
                acceptance_rate_prime: r.acceptance_rate_prime,
                seconds: r.seconds,
            })
            .collect();
        let curve = theory_curve(&rows, width).ok();
        if let Some(c) = &curve {
            for (row, v) in rows.iter_mut().zip(c) {
                row.theory_ref = Some(*v);
            }
        }
        let c_fit = rows.first().and_then(|r| r.test_mse).map(|m| m * width as f64);
        let last = rows.last().map_or(0, |r| r.block);
        let slope = (last >= 3).then(|| fit_rate(&rows, 2..=last).ok()).flatten();
        ConvergenceReport {
            width,
            rows,
            c_fit,
            slope,
        }
    }

    /// Columns `block,WL,train_mse,test_mse,theory_ref,acceptance_rate_omega,
    /// acceptance_rate_omega_prime,seconds`. Missing values are empty;
    /// `seconds` is left empty unless `with_timing`.
    pub fn write_csv<W: Write>(&self, out: &mut W, header: &str, with_timing: bool) -> Result<()> {
        write_comment_block(out, header)?;
        writeln!(
            out,
            "block,WL,train_mse,test_mse,theory_ref,acceptance_rate_omega,acceptance_rate_omega_prime,seconds"
        )?;
        for r in &self.rows {
            writeln!(
                out,
                "{},{},{},{},{},{},{},{}",
                r.block,
                r.wl,
                fmt_f64(r.train_mse),
                opt(r.test_mse),
                opt(r.theory_ref),
                fmt_f64(r.acceptance_rate),
                opt(r.acceptance_rate_prime),
                if with_timing { fmt_f64(r.seconds) } else { String::new() },
            )?;
        }
        Ok(())
    }
}

pub(crate) fn opt(v: Option<f64>) -> String {
    v.map(fmt_f64).unwrap_or_default()
}

/// `C/(W·ℓ)` for each row, with `C = test_mse(1)·W`.
pub fn theory_curve(rows: &[ConvergenceRow], width: usize) -> Result<Vec<f64>> {
    let first = rows
        .iter()
        .find(|r| r.block == 1)
        .and_then(|r| r.test_mse)
        .ok_or_else(|| Error::InvalidInput("theory curve needs a block-1 test MSE".into()))?;
    if !(first > 0.0) {
        return Err(Error::InvalidInput("block-1 test MSE must be positive".into()));
    }
    let c = first * width as f64;
    Ok(rows.iter().map(|r| c / (width * r.block) as f64).collect())
}

/// Least-squares slope of `ln test_mse` against `ln WL` over the blocks in
/// `block_range`.
pub fn fit_rate(rows: &[ConvergenceRow], block_range: RangeInclusive<usize>) -> Result<f64> {
    let mut pts = Vec::new();
    for r in rows.iter().filter(|r| block_range.contains(&r.block)) {
        let m = r
            .test_mse
            .ok_or_else(|| Error::InvalidInput(format!("block {} has no test MSE", r.block)))?;
        if !(m > 0.0) {
            return Err(Error::InvalidInput(format!("block {} has non-positive test MSE {m}", r.block)));
        }
        pts.push(((r.wl as f64).ln(), m.ln()));
    }
    log_log_slope(&pts)
}

fn log_log_slope(pts: &[(f64, f64)]) -> Result<f64> {
    if pts.len() < 2 {
        return Err(Error::InvalidInput("rate fit needs at least two blocks".into()));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    Ok(sxy / sxx)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrequencyKind {
    /// Component `k` (0-based) of the input frequency `ω`.
    Omega(usize),
    OmegaPrime,
}

impl FrequencyKind {
    fn labels(self) -> (&'static str, String) {
        match self {
            FrequencyKind::Omega(k) => ("omega", (k + 1).to_string()),
            FrequencyKind::OmegaPrime => ("omega_prime", String::new()),
        }
    }
}

/// Binning for [`frequency_histogram`]. `range` is in physical units; when
/// absent, the pooled sample range is used.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HistogramSpec {
    pub bins: usize,
    pub range: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyHistogram {
    pub kind: FrequencyKind,
    /// `bins + 1` physical edges.
    pub edges: Vec<f64>,
    /// The same edges in standardized units.
    pub edges_normalized: Vec<f64>,
    pub counts: Vec<u64>,
    /// Samples outside `range`.
    pub outside: u64,
}

impl FrequencyHistogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.outside
    }

    pub fn bin_center(&self, i: usize) -> f64 {
        0.5 * (self.edges[i] + self.edges[i + 1])
    }

    /// Counts convolved with a Gaussian of standard deviation `kernel_sd`
    /// (physical units). A zero width returns the raw counts.
    pub fn smoothed_counts(&self, kernel_sd: f64) -> Vec<f64> {
        let raw: Vec<f64> = self.counts.iter().map(|&c| c as f64).collect();
        let width = self.edges[1] - self.edges[0];
        if !(kernel_sd > 0.0) || !(width > 0.0) {
            return raw;
        }
        let s = kernel_sd / width;
        let reach = (4.0 * s).ceil() as usize;
        let kernel: Vec<f64> = (0..=reach).map(|i| (-0.5 * (i as f64 / s).powi(2)).exp()).collect();
        (0..raw.len())
            .map(|i| {
                let lo = i.saturating_sub(reach);
                let hi = (i + reach).min(raw.len() - 1);
                (lo..=hi).map(|m| raw[m] * kernel[m.abs_diff(i)]).sum()
            })
            .collect()
    }

    /// Bin centers of the `k` highest local maxima of the smoothed counts.
    /// Peaks
    /// are taken greedily by height; a candidate `c` is skipped when it lies
    /// within `min_rel_separation · max(|c|, |p|)` of an earlier pick `p`.
    pub fn top_modes(&self, k: usize, kernel_sd: f64, min_rel_separation: f64) -> Vec<f64> {
        let smooth = self.smoothed_counts(kernel_sd);
        let is_peak = |i: usize| {
            smooth[i] > 0.0
                && (i == 0 || smooth[i] >= smooth[i - 1])
                && (i + 1 == smooth.len() || smooth[i] >= smooth[i + 1])
        };
        let mut order: Vec<usize> = (0..smooth.len()).filter(|&i| is_peak(i)).collect();
        order.sort_by(|&a, &b| smooth[b].total_cmp(&smooth[a]).then(a.cmp(&b)));
        let mut picked: Vec<f64> = Vec::new();
        for i in order {
            let c = self.bin_center(i);
            if picked
                .iter()
                .all(|p| (p - c).abs() > min_rel_separation * p.abs().max(c.abs()))
            {
                picked.push(c);
                if picked.len() == k {
                    break;
                }
            }
        }
        picked
    }
}

/// Pools the post-burn-in frequencies of every chain in `traces` and bins
/// them per frequency component, de-normalizing `ω` with `norm_stats`.
/// Returns one histogram per `ω` component, followed by one for `ω′` when
/// any trace carries primed frequencies.
pub fn frequency_histogram(
    traces: &[&ChainTrace],
    burn_in: usize,
    norm_stats: &NormStats,
    spec: HistogramSpec,
) -> Result<Vec<FrequencyHistogram>> {
    if spec.bins == 0 {
        return Err(Error::config("bins", "must be >= 1"));
    }
    let Some(first) = traces.first() else {
        return Err(Error::InvalidInput("no traces to histogram".into()));
    };
    let d = first.dim;
    if norm_stats.dim() != d || traces.iter().any(|t| t.dim != d) {
        return Err(Error::DimensionMismatch {
            what: "trace frequency dimension vs norm_stats",
            expected: norm_stats.dim(),
            found: d,
        });
    }
    let mut samples: Vec<Vec<f64>> = vec![Vec::new(); d];
    let mut primes: Vec<f64> = Vec::new();
    for t in traces {
        if burn_in >= t.iterations() {
            return Err(Error::InvalidInput(format!(
                "burn-in {burn_in} leaves no iterations of block {} ({} sweeps)",
                t.block,
                t.iterations()
            )));
        }
        for row in &t.rows[burn_in..] {
            for j in 0..t.width {
                for (k, s) in samples.iter_mut().enumerate() {
                    s.push(row.freqs[j * d + k] / norm_stats.std[k]);
                }
            }
            if let Some(fp) = &row.freqs_prime {
                primes.extend_from_slice(fp);
            }
        }
    }
    let mut out = Vec::new();
    for (k, s) in samples.iter().enumerate() {
        out.push(bin(FrequencyKind::Omega(k), s, spec, norm_stats.std[k]));
    }
    if !primes.is_empty() {
        out.push(bin(FrequencyKind::OmegaPrime, &primes, spec, 1.0));
    }
    Ok(out)
}

fn bin(kind: FrequencyKind, xs: &[f64], spec: HistogramSpec, std: f64) -> FrequencyHistogram {
    let (lo, hi) = spec.range.unwrap_or_else(|| {
        let lo = xs.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if hi > lo {
            (lo, hi)
        } else {
            (lo - 0.5, lo + 0.5)
        }
    });
    let width = (hi - lo) / spec.bins as f64;
    let edges: Vec<f64> = (0..=spec.bins).map(|i| lo + width * i as f64).collect();
    let mut counts = vec![0u64; spec.bins];
    let mut outside = 0;
    for &x in xs {
        if !(x >= lo && x <= hi) {
            outside += 1;
            continue;
        }
        let i = (((x - lo) / width) as usize).min(spec.bins - 1);
        counts[i] += 1;
    }
    FrequencyHistogram {
        kind,
        edges_normalized: edges.iter().map(|e| e * std).collect(),
        edges,
        counts,
        outside,
    }
}

/// Columns `scope,type,component,bin_left,bin_right,count,
/// bin_left_normalized,bin_right_normalized`, where `scope` labels each
/// group of histograms (a block number, or `all` for pooled blocks).
pub fn write_histogram_csv<W: Write>(groups: &[(String, Vec<FrequencyHistogram>)], out: &mut W, header: &str) -> Result<()> {
    write_comment_block(out, header)?;
    writeln!(out, "scope,type,component,bin_left,bin_right,count,bin_left_normalized,bin_right_normalized")?;
    for (scope, h) in groups.iter().flat_map(|(s, hs)| hs.iter().map(move |h| (s, h))) {
        let (ty, comp) = h.kind.labels();
        for i in 0..h.counts.len() {
            writeln!(
                out,
                "{scope},{ty},{comp},{},{},{},{},{}",
                fmt_f64(h.edges[i]),
                fmt_f64(h.edges[i + 1]),
                h.counts[i],
                fmt_f64(h.edges_normalized[i]),
                fmt_f64(h.edges_normalized[i + 1]),
            )?;
        }
    }
    Ok(())
}

/// Columns `theta_1..theta_d,q_true,q_pred`.
pub fn write_predictions_csv<W: Write>(
    inputs: &DMatrix<f64>,
    q_true: &DVector<f64>,
    q_pred: &DVector<f64>,
    out: &mut W,
    header: &str,
) -> Result<()> {
    if q_true.len() != inputs.nrows() || q_pred.len() != inputs.nrows() {
        return Err(Error::DimensionMismatch {
            what: "prediction rows vs input rows",
            expected: inputs.nrows(),
            found: q_pred.len(),
        });
    }
    write_comment_block(out, header)?;
    let cols: Vec<String> = (1..=inputs.ncols()).map(|k| format!("theta_{k}")).collect();
    writeln!(out, "{},q_true,q_pred", cols.join(","))?;
    for n in 0..inputs.nrows() {
        for k in 0..inputs.ncols() {
            write!(out, "{},", fmt_f64(inputs[(n, k)]))?;
        }
        writeln!(out, "{},{}", fmt_f64(q_true[n]), fmt_f64(q_pred[n]))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::SweepRecord;
    use approx::assert_abs_diff_eq;

    fn rows_from(mses: &[f64], w: usize) -> Vec<ConvergenceRow> {
        mses.iter()
            .enumerate()
            .map(|(i, &m)| ConvergenceRow {
                block: i + 1,
                wl: w * (i + 1),
                train_mse: m,
                test_mse: Some(m),
                theory_ref: None,
                acceptance_rate: 0.3,
                acceptance_rate_prime: None,
                seconds: 0.0,
            })
            .collect()
    }

    #[test]
    fn mse_examples() {
        let a = DVector::from_vec(vec![1.0, -2.0, 3.5]);
        assert_eq!(mse(&a, &a).unwrap(), 0.0);
        assert_eq!(mse(&a.add_scalar(1.0), &a).unwrap(), 1.0);
        let z = DVector::zeros(2);
        assert_eq!(mse(&z, &DVector::from_vec(vec![3.0, 4.0])).unwrap(), 12.5);
        assert!(mse(&z, &a).is_err());
    }

    #[test]
    fn theory_curve_examples() {
        let rows = rows_from(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0], 6);
        let c = theory_curve(&rows, 6).unwrap();
        assert_abs_diff_eq!(c[1], 0.05, epsilon = 1e-15);
        assert_abs_diff_eq!(c[9], 0.01, epsilon = 1e-15);
        let on_curve = rows_from(&c, 6);
        assert_abs_diff_eq!(fit_rate(&on_curve, 1..=10).unwrap(), -1.0, epsilon = 1e-12);
        assert!(c.windows(2).all(|p| p[1] < p[0]));
    }

    #[test]
    fn fit_rate_examples() {
        let w = 4;
        let flat = rows_from(&[0.3; 6], w);
        assert_abs_diff_eq!(fit_rate(&flat, 1..=6).unwrap(), 0.0, epsilon = 1e-12);
        let sq: Vec<f64> = (1..=6).map(|l| 7.0 / ((w * l) as f64).powi(2)).collect();
        assert_abs_diff_eq!(fit_rate(&rows_from(&sq, w), 2..=6).unwrap(), -2.0, epsilon = 1e-12);
        let mut bad = rows_from(&[0.1, 0.0, 0.1], w);
        assert!(fit_rate(&bad, 1..=3).is_err());
        bad[1].test_mse = Some(0.05);
        assert!(fit_rate(&bad, 3..=3).is_err());
    }

    fn trace_at(freq: f64, iters: usize, w: usize) -> ChainTrace {
        let mut t = ChainTrace::new(1, w, 1, false);
        for _ in 0..iters {
            t.push(SweepRecord {
                freqs: vec![freq; w],
                freqs_prime: None,
                accepted: vec![false; w],
                accepted_prime: vec![],
                magnitude: vec![1.0; w],
                magnitude_prime: None,
            });
        }
        t
    }

    #[test]
    fn stuck_chain_fills_one_bin() {
        let t = trace_at(2.0, 30, 3);
        let stats = NormStats { mean: vec![0.0], std: vec![0.5] };
        let spec = HistogramSpec { bins: 40, range: Some((0.0, 10.0)) };
        let h = &frequency_histogram(&[&t], 10, &stats, spec).unwrap()[0];
        assert_eq!(h.total(), 20 * 3);
        assert_eq!(h.counts.iter().filter(|&&c| c > 0).count(), 1);
        assert_eq!(h.top_modes(3, 0.0, 0.1), vec![4.125]);
        assert_eq!(h.top_modes(3, 1.0, 0.1), vec![4.125]);
        assert_abs_diff_eq!(h.edges_normalized[40], 5.0, epsilon = 1e-12);
    }

    #[test]
    fn unit_std_is_identity() {
        let t = trace_at(3.3, 5, 2);
        let h = &frequency_histogram(&[&t], 0, &NormStats::identity(1), HistogramSpec { bins: 1, range: None }).unwrap()[0];
        assert_abs_diff_eq!(h.bin_center(0), 3.3, epsilon = 1e-12);
        assert_eq!(h.edges, h.edges_normalized);
    }

    #[test]
    fn empty_post_burn_in_is_an_error() {
        let t = trace_at(1.0, 5, 2);
        let spec = HistogramSpec { bins: 4, range: None };
        assert!(frequency_histogram(&[&t], 5, &NormStats::identity(1), spec).is_err());
    }

    #[test]
    fn modes_respect_separation() {
        let h = FrequencyHistogram {
            kind: FrequencyKind::Omega(0),
            edges: (0..=6).map(f64::from).collect(),
            edges_normalized: (0..=6).map(f64::from).collect(),
            counts: vec![1, 9, 0, 8, 0, 5],
            outside: 0,
        };
        assert_eq!(h.top_modes(3, 0.0, 0.6), vec![1.5, 5.5]);
        assert_eq!(h.top_modes(3, 0.0, 0.1), vec![1.5, 3.5, 5.5]);
        let sm = h.smoothed_counts(0.5);
        let total: f64 = sm.iter().sum();
        assert!(total > 23.0 && sm[1] > sm[0] && sm[1] > sm[2]);
    }

    #[test]
    fn convergence_csv_shape() {
        let reports: Vec<BlockReport> = (1..=3)
            .map(|b| BlockReport {
                block: b,
                train_mse: 0.1 / b as f64,
                test_mse: Some(0.2 / b as f64),
                seconds: 1.5,
                acceptance_rate: 0.3,
                acceptance_rate_prime: (b > 1).then_some(0.4),
                amplitude_norm_squared: 1.0,
                lambda: 0.0,
                max_normal_residual: None,
            })
            .collect();
        let rep = ConvergenceReport::from_blocks(&reports, 6);
        assert_abs_diff_eq!(rep.slope.unwrap(), -1.0, epsilon = 1e-12);
        let mut buf = Vec::new();
        rep.write_csv(&mut buf, "cfg", false).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "# cfg");
        assert_eq!(lines.len(), 5);
        assert!(lines[2].starts_with("1,6,"));
        assert!(lines[2].ends_with(','));
        assert_eq!(lines[2].split(',').count(), 8);
    }
}
