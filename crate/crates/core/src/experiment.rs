//! The `train`, `compare` and `oracle` commands.
//!
//! Each command takes a resolved [`ExperimentConfig`], writes its artifacts
//! into an output directory and prints one summary line per unit of work.
//! Every artifact starts with a `#` comment header carrying the code version
//! and the full resolved configuration. Nothing run-dependent other than the
//! optional `seconds` column enters an artifact, so reruns are
//! byte-identical.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::analysis::{
    frequency_histogram, mse, write_histogram_csv, write_predictions_csv, ConvergenceReport, FrequencyHistogram,
    HistogramSpec,
};
use crate::baseline::{adam_train, EpochLoss};
use crate::config::{CompareMethod, ExperimentConfig};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::io::{comment_block, fmt_f64, write_comment_block};
use crate::oracle::{
    bound_functional, mc_estimator_check, numeric_fourier_transform, optimal_density, perturbed_density,
};
use crate::rng::{derive_seed, rng_for, stream};
use crate::sampler::ChainTrace;
use crate::targets::{generate_dataset, generate_dataset_on_stream, TargetFunction};
use crate::trainer::{train, BlockReport, Method, TrainOutcome};

pub const CODE_VERSION: &str = concat!("rfnn ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Command {
    Train,
    Compare,
    Oracle,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Compare => "compare",
            Command::Oracle => "oracle",
        }
    }

    /// The artifact whose rows are concatenated across `--jobs` replicates.
    fn primary_artifact(self) -> &'static str {
        match self {
            Command::Train => "convergence.csv",
            Command::Compare => "compare.csv",
            Command::Oracle => "oracle_report.csv",
        }
    }
}

/// Header text shared by every artifact of a run.
pub fn artifact_header(cfg: &ExperimentConfig, command: Command) -> String {
    let mut shown = cfg.clone();
    // The output location does not affect results.
    shown.out_dir = None;
    format!(
        "{CODE_VERSION}\ncommand: {}\n\n[resolved configuration]\n{}",
        command.name(),
        shown.to_toml()
    )
}

/// Training and test sets for `cfg`, drawn from independent streams.
pub fn make_datasets(cfg: &ExperimentConfig) -> Result<(TargetFunction, Dataset, Dataset)> {
    let target = cfg.target_function()?;
    let train = generate_dataset(&target, cfg.n_train, cfg.seed)?;
    let test = generate_dataset_on_stream(&target, cfg.n_test, cfg.seed, stream::DATASET_TEST)?;
    Ok((target, train, test))
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

pub struct TrainSummary {
    pub outcome: TrainOutcome,
    pub report: ConvergenceReport,
}

fn block_line(r: &BlockReport, width: usize) -> String {
    let prime = r.acceptance_rate_prime.map_or("-".to_string(), |a| format!("{a:.3}"));
    let test = r.test_mse.map_or("-".to_string(), |m| format!("{m:.6e}"));
    format!(
        "block {} WL={} train_mse={:.6e} test_mse={test} acceptance={:.3} acceptance_prime={prime} seconds={:.1}",
        r.block,
        width * r.block,
        r.train_mse,
        r.acceptance_rate,
        r.seconds
    )
}

fn write_convergence(dir: &Path, header: &str, reports: &[BlockReport], cfg: &ExperimentConfig) -> Result<ConvergenceReport> {
    let report = ConvergenceReport::from_blocks(reports, cfg.train.width);
    let mut out = create(dir, "convergence.csv")?;
    report.write_csv(&mut out, header, cfg.record_timing)?;
    out.flush()?;
    Ok(report)
}

fn write_traces(dir: &Path, header: &str, traces: &[ChainTrace], dim: usize) -> Result<()> {
    let mut out = create(dir, "trace.csv")?;
    write_comment_block(&mut out, header)?;
    writeln!(out, "{}", ChainTrace::csv_header(dim))?;
    for t in traces {
        t.write_csv_rows(&mut out)?;
    }
    out.flush()?;
    Ok(())
}

/// Per-block histograms followed by the histogram pooled over all blocks.
pub fn block_histograms(
    traces: &[ChainTrace],
    cfg: &ExperimentConfig,
    norm_stats: &crate::network::NormStats,
) -> Result<Vec<(String, Vec<FrequencyHistogram>)>> {
    let spec = HistogramSpec {
        bins: cfg.histogram.bins,
        range: cfg.histogram.range,
    };
    let burn_in = cfg.train.burn_in;
    let mut groups = Vec::new();
    for t in traces {
        groups.push((t.block.to_string(), frequency_histogram(&[t], burn_in, norm_stats, spec)?));
    }
    let all: Vec<&ChainTrace> = traces.iter().collect();
    if !all.is_empty() {
        groups.push(("all".to_string(), frequency_histogram(&all, burn_in, norm_stats, spec)?));
    }
    Ok(groups)
}

/// Trains one network and writes `network.toml`, `convergence.csv`,
/// `trace.csv`, `histogram.csv` and `predictions.csv`.
///
/// When a block fails, the blocks trained so far are still written to
/// `network.toml` and `convergence.csv` before the error is returned.
pub fn cmd_train(cfg: &ExperimentConfig, dir: &Path, log: &mut dyn Write) -> Result<TrainSummary> {
    std::fs::create_dir_all(dir)?;
    let header = artifact_header(cfg, Command::Train);
    let comment = comment_block(&header);
    let (_, train_set, test_set) = make_datasets(cfg)?;
    let outcome = match train(&train_set, Some(&test_set), &cfg.train) {
        Ok(o) => o,
        Err(e) => {
            for r in &e.reports {
                writeln!(log, "{}", block_line(r, cfg.train.width))?;
            }
            if !e.reports.is_empty() {
                e.partial.save(&dir.join("network.toml"), &comment)?;
                write_convergence(dir, &header, &e.reports, cfg)?;
            }
            return Err(e.source);
        }
    };
    for r in &outcome.reports {
        writeln!(log, "{}", block_line(r, cfg.train.width))?;
    }
    outcome.network.save(&dir.join("network.toml"), &comment)?;
    let report = write_convergence(dir, &header, &outcome.reports, cfg)?;
    if let Some(s) = report.slope {
        writeln!(log, "slope over blocks 2..={} = {s:.4}", outcome.reports.len())?;
    }
    write_traces(dir, &header, &outcome.traces, train_set.input_dim())?;

    let groups = block_histograms(&outcome.traces, cfg, outcome.network.norm_stats())?;
    let mut out = create(dir, "histogram.csv")?;
    write_histogram_csv(&groups, &mut out, &header)?;
    out.flush()?;

    let pred = outcome.network.forward(&test_set.inputs, None)?;
    let mut out = create(dir, "predictions.csv")?;
    write_predictions_csv(&test_set.inputs, &test_set.targets, &pred, &mut out, &header)?;
    out.flush()?;
    Ok(TrainSummary { outcome, report })
}

/// One column group of a comparison.
#[derive(Clone, Debug)]
pub struct MethodResult {
    pub label: String,
    pub method: CompareMethod,
    /// `(block, train_mse, test_mse)`. ADAM has a single row at its depth.
    pub rows: Vec<(usize, f64, f64)>,
    pub losses: Option<Vec<EpochLoss>>,
}

impl MethodResult {
    pub fn test_mse_at(&self, block: usize) -> Option<f64> {
        self.rows.iter().find(|r| r.0 == block).map(|r| r.2)
    }
}

fn labels(methods: &[CompareMethod]) -> Vec<String> {
    methods
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let seen = methods[..i].iter().filter(|x| *x == m).count();
            if seen == 0 {
                m.name().to_string()
            } else {
                format!("{}_{}", m.name(), seen + 1)
            }
        })
        .collect()
}

/// Runs every configured method on one shared dataset and writes the
/// joined `compare.csv` plus `<label>_loss.csv` for each ADAM run.
///
/// Every method uses the experiment seed; block chains and ADAM draw from
/// distinct streams, so listing a method twice yields identical columns.
pub fn cmd_compare(cfg: &ExperimentConfig, dir: &Path, log: &mut dyn Write) -> Result<Vec<MethodResult>> {
    if cfg.compare.len() < 2 {
        return Err(Error::config("compare.methods", "needs at least two methods"));
    }
    std::fs::create_dir_all(dir)?;
    let header = artifact_header(cfg, Command::Compare);
    let (_, train_set, test_set) = make_datasets(cfg)?;
    let mut results = Vec::new();
    for (label, &m) in labels(&cfg.compare).into_iter().zip(&cfg.compare) {
        let result = match m {
            CompareMethod::Method1 | CompareMethod::Method2 => {
                let mut tc = cfg.train.clone();
                tc.method = if m == CompareMethod::Method1 { Method::Method1 } else { Method::Method2 };
                let outcome = train(&train_set, Some(&test_set), &tc).map_err(|e| e.source)?;
                for r in &outcome.reports {
                    writeln!(log, "{label} {}", block_line(r, tc.width))?;
                }
                MethodResult {
                    label,
                    method: m,
                    rows: outcome
                        .reports
                        .iter()
                        .map(|r| (r.block, r.train_mse, r.test_mse.expect("test set given")))
                        .collect(),
                    losses: None,
                }
            }
            CompareMethod::Adam => {
                let a = &cfg.adam;
                let outcome = adam_train(&train_set, Some(&test_set), a.width, a.depth, &a.cfg)?;
                let train_mse = mse(&outcome.network.forward(&train_set.inputs, None)?, &train_set.targets)?;
                let test_mse = mse(&outcome.network.forward(&test_set.inputs, None)?, &test_set.targets)?;
                writeln!(
                    log,
                    "{label} W={} L={} epochs={} train_mse={train_mse:.6e} test_mse={test_mse:.6e}",
                    a.width, a.depth, a.cfg.epochs
                )?;
                let mut out = create(dir, &format!("{label}_loss.csv"))?;
                write_comment_block(&mut out, &header)?;
                writeln!(out, "epoch,train_loss,test_mse")?;
                for l in &outcome.losses {
                    writeln!(
                        out,
                        "{},{},{}",
                        l.epoch,
                        fmt_f64(l.train_loss),
                        crate::analysis::opt(l.test_mse)
                    )?;
                }
                out.flush()?;
                MethodResult {
                    label,
                    method: m,
                    rows: vec![(a.depth, train_mse, test_mse)],
                    losses: Some(outcome.losses),
                }
            }
        };
        results.push(result);
    }

    let blocks = results.iter().flat_map(|r| r.rows.iter().map(|x| x.0)).max().unwrap_or(0);
    let mut out = create(dir, "compare.csv")?;
    write_comment_block(&mut out, &header)?;
    write!(out, "block")?;
    for r in &results {
        write!(out, ",{0}_WL,{0}_train_mse,{0}_test_mse", r.label)?;
    }
    writeln!(out)?;
    for b in 1..=blocks {
        write!(out, "{b}")?;
        for r in &results {
            let width = if r.method == CompareMethod::Adam { cfg.adam.width } else { cfg.train.width };
            match r.rows.iter().find(|x| x.0 == b) {
                Some(&(_, tr, te)) => write!(out, ",{},{},{}", width * b, fmt_f64(tr), fmt_f64(te))?,
                None => write!(out, ",,,")?,
            }
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(results)
}

/// One line of the oracle report. `passed` is `None` for statistics that
/// are reported without a pass/fail threshold.
#[derive(Clone, Debug, PartialEq)]
pub struct OracleCheck {
    pub name: String,
    pub statistic: f64,
    pub threshold: Option<f64>,
    pub passed: Option<bool>,
}

impl OracleCheck {
    fn info(name: impl Into<String>, statistic: f64) -> Self {
        OracleCheck {
            name: name.into(),
            statistic,
            threshold: None,
            passed: None,
        }
    }

    fn at_most(name: impl Into<String>, statistic: f64, threshold: f64) -> Self {
        OracleCheck {
            name: name.into(),
            statistic,
            threshold: Some(threshold),
            passed: Some(statistic <= threshold),
        }
    }
}

/// Runs the spectral oracle suite on a one-dimensional target and writes
/// `spectrum.csv`, `density.csv` and `oracle_report.csv`.
///
/// Checks: normalization of the optimal density, the closed-form value of
/// the bound at the optimum, minimality against random densities, and
/// unbiasedness of the random-feature estimator at each probe against the
/// grid inverse transform. Spectral peaks, the distance between the grid
/// inverse and the target, and the estimator standard error under the
/// optimal and uniform densities are reported without thresholds.
pub fn cmd_oracle(cfg: &ExperimentConfig, dir: &Path, log: &mut dyn Write) -> Result<Vec<OracleCheck>> {
    let target = cfg.target_function()?;
    if target.input_dim != 1 {
        return Err(Error::config(
            "target.name",
            format!("the oracle needs a one-dimensional target, `{}` has d = {}", target.name, target.input_dim),
        ));
    }
    std::fs::create_dir_all(dir)?;
    let header = artifact_header(cfg, Command::Oracle);
    let oc = &cfg.oracle;
    let grid = numeric_fourier_transform(|t| target.eval(&[t]), target.domain[0], oc.grid, oc.refinement)?;
    let mut out = create(dir, "spectrum.csv")?;
    grid.write_csv(&mut out, &header)?;
    out.flush()?;
    let p_star = optimal_density(&grid)?;
    let mut out = create(dir, "density.csv")?;
    write_comment_block(&mut out, &header)?;
    writeln!(out, "omega,p_star")?;
    for (w, p) in grid.omegas.iter().zip(&p_star) {
        writeln!(out, "{},{}", fmt_f64(*w), fmt_f64(*p))?;
    }
    out.flush()?;

    let mut checks = Vec::new();
    for (i, w) in grid.peaks(3).into_iter().enumerate() {
        checks.push(OracleCheck::info(format!("spectrum_peak_{}", i + 1), w));
    }
    let mass: f64 = p_star.iter().sum::<f64>() * grid.step;
    checks.push(OracleCheck::at_most("density_normalization_error", (mass - 1.0).abs(), 1e-12));

    let l1 = grid.l1_norm();
    let at_star = bound_functional(&p_star, &grid)?.value;
    checks.push(OracleCheck::at_most(
        "bound_closed_form_relative_error",
        (at_star - l1 * l1).abs() / (l1 * l1),
        1e-8,
    ));

    let mut rng = rng_for(cfg.seed, stream::ORACLE);
    let mut worst = f64::INFINITY;
    for _ in 0..oc.random_densities {
        let p = perturbed_density(&p_star, grid.step, 1.0, 0.05, &mut rng);
        let b = bound_functional(&p, &grid)?;
        let ratio = if b.infinite { f64::INFINITY } else { b.value / at_star };
        worst = worst.min(ratio);
    }
    if oc.random_densities > 0 {
        // Equality holds only at the optimum; allow rounding in the sums.
        checks.push(OracleCheck {
            name: "bound_minimality_min_ratio".into(),
            statistic: worst,
            threshold: Some(1.0 - 1e-12),
            passed: Some(worst >= 1.0 - 1e-12),
        });
    }

    let uniform = vec![1.0 / (grid.omegas.len() as f64 * grid.step); grid.omegas.len()];
    for (i, &theta) in oc.probes.iter().enumerate() {
        let f_grid = grid.inverse_at(theta);
        let (mean, se) = mc_estimator_check(&grid, &p_star, oc.width, oc.reps, theta, &mut rng)?;
        checks.push(OracleCheck::at_most(format!("unbiasedness_z_probe_{}", i + 1), (mean - f_grid).abs() / se, 3.0));
        checks.push(OracleCheck::info(
            format!("grid_inverse_error_probe_{}", i + 1),
            (f_grid - target.eval(&[theta])).abs(),
        ));
        let (_, se_uniform) = mc_estimator_check(&grid, &uniform, oc.width, oc.reps, theta, &mut rng)?;
        checks.push(OracleCheck::info(format!("se_optimal_probe_{}", i + 1), se));
        checks.push(OracleCheck::info(format!("se_uniform_probe_{}", i + 1), se_uniform));
    }

    let mut out = create(dir, "oracle_report.csv")?;
    write_comment_block(&mut out, &header)?;
    writeln!(out, "check,statistic,threshold,passed")?;
    for c in &checks {
        let passed = match c.passed {
            Some(true) => "pass",
            Some(false) => "fail",
            None => "",
        };
        writeln!(out, "{},{},{},{passed}", c.name, fmt_f64(c.statistic), crate::analysis::opt(c.threshold))?;
        let verdict = match c.passed {
            Some(true) => "PASS",
            Some(false) => "FAIL",
            None => "INFO",
        };
        writeln!(log, "{verdict} {} = {:.6e}", c.name, c.statistic)?;
    }
    out.flush()?;
    let failed: Vec<String> = checks
        .iter()
        .filter(|c| c.passed == Some(false))
        .map(|c| c.name.clone())
        .collect();
    if failed.is_empty() {
        Ok(checks)
    } else {
        Err(Error::ChecksFailed(failed))
    }
}

fn run_one(command: Command, cfg: &ExperimentConfig, dir: &Path, log: &mut dyn Write) -> Result<()> {
    match command {
        Command::Train => cmd_train(cfg, dir, log).map(|_| ()),
        Command::Compare => cmd_compare(cfg, dir, log).map(|_| ()),
        Command::Oracle => cmd_oracle(cfg, dir, log).map(|_| ()),
    }
}

/// Runs `command` once, or for `jobs > 1` once per derived seed in
/// `dir/job_<i>` on separate threads. Logs are printed in job order and the
/// primary artifacts are concatenated into `dir/merged_<artifact>` with
/// leading `job,seed` columns. The first failing job's error is returned
/// after all jobs finish.
pub fn run(command: Command, cfg: &ExperimentConfig, dir: &Path, jobs: usize, log: &mut dyn Write) -> Result<()> {
    if jobs == 0 {
        return Err(Error::config("--jobs", "must be >= 1"));
    }
    if jobs == 1 {
        return run_one(command, cfg, dir, log);
    }
    std::fs::create_dir_all(dir)?;
    let replicates: Vec<(ExperimentConfig, PathBuf)> = (0..jobs)
        .map(|i| (cfg.with_seed(derive_seed(cfg.seed, i as u64)), dir.join(format!("job_{i}"))))
        .collect();
    let results: Vec<(Vec<u8>, Result<()>)> = std::thread::scope(|s| {
        let handles: Vec<_> = replicates
            .iter()
            .map(|(c, d)| {
                s.spawn(move || {
                    let mut buf = Vec::new();
                    let r = run_one(command, c, d, &mut buf);
                    (buf, r)
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("job thread panicked")).collect()
    });
    let mut first_err = None;
    for (i, (buf, r)) in results.into_iter().enumerate() {
        for line in String::from_utf8_lossy(&buf).lines() {
            writeln!(log, "[job {i}] {line}")?;
        }
        if let Err(e) = r {
            writeln!(log, "[job {i}] error: {e}")?;
            first_err.get_or_insert(e);
        }
    }
    if let Some(e) = first_err {
        return Err(e);
    }
    merge_primary(command, cfg, &replicates, dir)
}

fn merge_primary(command: Command, cfg: &ExperimentConfig, replicates: &[(ExperimentConfig, PathBuf)], dir: &Path) -> Result<()> {
    let name = command.primary_artifact();
    let mut out = create(dir, &format!("merged_{name}"))?;
    let seeds: Vec<String> = replicates.iter().map(|(c, _)| c.seed.to_string()).collect();
    let header = format!(
        "{}\n\n[replicates]\njobs = {}\nseeds = [{}]",
        artifact_header(cfg, command),
        replicates.len(),
        seeds.join(", ")
    );
    write_comment_block(&mut out, &header)?;
    let mut wrote_header = false;
    for (i, (c, d)) in replicates.iter().enumerate() {
        let reader = BufReader::new(File::open(d.join(name))?);
        let mut seen_header = false;
        for line in reader.lines() {
            let line = line?;
            if line.starts_with('#') {
                continue;
            }
            if !seen_header {
                seen_header = true;
                if !wrote_header {
                    writeln!(out, "job,seed,{line}")?;
                    wrote_header = true;
                }
                continue;
            }
            writeln!(out, "{i},{},{line}", c.seed)?;
        }
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::load_config;

    fn small(extra: &str) -> ExperimentConfig {
        let text = format!(
            "[experiment]\nN = 200\nN_test = 300\nseed = 4\n[target]\nname = \"multiscale\"\n\
             [train]\nW = 3\nL = 3\nM = 40\nburn_in = 10\n[histogram]\nbins = 20\n{extra}"
        );
        load_config(&text, &[]).unwrap()
    }

    fn read(dir: &Path, name: &str) -> String {
        std::fs::read_to_string(dir.join(name)).unwrap()
    }

    #[test]
    fn train_writes_reproducible_artifacts() {
        let cfg = small("");
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let mut log = Vec::new();
        let s = cmd_train(&cfg, a.path(), &mut log).unwrap();
        cmd_train(&cfg, b.path(), &mut Vec::new()).unwrap();
        assert_eq!(s.report.rows.len(), 3);
        for name in ["network.toml", "convergence.csv", "trace.csv", "histogram.csv", "predictions.csv"] {
            let text = read(a.path(), name);
            assert!(text.starts_with(&format!("# {CODE_VERSION}\n")), "{name}");
            assert!(text.contains("# M = 40"), "{name}");
            assert_eq!(text, read(b.path(), name), "{name}");
        }
        assert_eq!(String::from_utf8(log).unwrap().lines().filter(|l| l.starts_with("block ")).count(), 3);
        let net = crate::network::Network::load(&a.path().join("network.toml")).unwrap();
        assert_eq!(net.blocks(), s.outcome.network.blocks());
        // One trace row per chain and sweep; histogram groups for 3 blocks
        // plus the pooled one, each with an omega and (blocks > 1) an omega'
        // histogram.
        let trace_rows = read(a.path(), "trace.csv").lines().filter(|l| !l.starts_with('#')).count();
        assert_eq!(trace_rows, 1 + 3 * 40 * 3);
        let hist = read(a.path(), "histogram.csv");
        assert!(hist.lines().any(|l| l.starts_with("all,omega_prime,")));
        assert!(!hist.lines().any(|l| l.starts_with("1,omega_prime,")));
    }

    #[test]
    fn failed_run_keeps_partial_artifacts() {
        // Eight points cannot pin down 12 columns without regularization.
        let mut cfg = small("");
        cfg.n_train = 8;
        cfg.train.lambdas = vec![0.0];
        let dir = tempfile::tempdir().unwrap();
        let err = cmd_train(&cfg, dir.path(), &mut Vec::new()).err().unwrap();
        assert!(matches!(err, Error::RankDeficient { .. }));
        let conv = read(dir.path(), "convergence.csv");
        assert_eq!(conv.lines().filter(|l| l.starts_with("1,")).count(), 1);
    }

    #[test]
    fn compare_joins_methods() {
        let cfg = small("[compare]\nmethods = [\"method1\", \"method1\", \"method2\"]\n");
        let dir = tempfile::tempdir().unwrap();
        let res = cmd_compare(&cfg, dir.path(), &mut Vec::new()).unwrap();
        assert_eq!(res[0].label, "method1");
        assert_eq!(res[1].label, "method1_2");
        assert_eq!(res[0].rows, res[1].rows);
        let text = read(dir.path(), "compare.csv");
        let header = text.lines().find(|l| !l.starts_with('#')).unwrap();
        assert!(header.starts_with("block,method1_WL,method1_train_mse,method1_test_mse,method1_2_WL"));
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
        assert_eq!(rows.len(), 3);
        let cols: Vec<&str> = rows[2].split(',').collect();
        assert_eq!(cols[1..4], cols[4..7]);
    }

    #[test]
    fn compare_with_adam_writes_loss_curve() {
        let cfg = small("[adam]\nW = 2\nL = 2\nepochs = 3\nbatch_size = 50\neval_every = 2\n[compare]\nmethods = [\"adam\", \"method2\"]\n");
        let dir = tempfile::tempdir().unwrap();
        let res = cmd_compare(&cfg, dir.path(), &mut Vec::new()).unwrap();
        assert_eq!(res[0].rows.len(), 1);
        assert_eq!(res[0].rows[0].0, 2);
        let loss = read(dir.path(), "adam_loss.csv");
        let lines: Vec<&str> = loss.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(lines[0], "epoch,train_loss,test_mse");
        assert_eq!(lines.len(), 4);
        // The ADAM columns are filled only at its depth.
        let text = read(dir.path(), "compare.csv");
        let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).skip(1).collect();
        assert!(rows[0].starts_with("1,,,,"));
        assert!(rows[1].starts_with("2,4,"));
        let single = small("[compare]\nmethods = [\"adam\"]\n");
        assert!(matches!(
            cmd_compare(&single, dir.path(), &mut Vec::new()),
            Err(Error::InvalidConfig { .. })
        ));
    }

    #[test]
    fn oracle_suite_passes_on_cosine_and_rejects_zero() {
        let mut cfg = small("[oracle]\nomega_min = -40.0\nomega_max = 40.0\ncount = 321\nreps = 2000\nrandom_densities = 20\n");
        cfg.target = crate::targets::TargetSpec::named("cosine");
        let dir = tempfile::tempdir().unwrap();
        let checks = cmd_oracle(&cfg, dir.path(), &mut Vec::new()).unwrap();
        let peak = checks.iter().find(|c| c.name == "spectrum_peak_1").unwrap();
        assert_eq!(peak.statistic, 5.0);
        assert!(read(dir.path(), "oracle_report.csv").contains("bound_closed_form_relative_error,"));
        cfg.target = crate::targets::TargetSpec::named("zero");
        assert!(matches!(cmd_oracle(&cfg, dir.path(), &mut Vec::new()), Err(Error::EmptySpectrum)));
        cfg.target = crate::targets::TargetSpec::named("sine_discontinuity_3d");
        assert!(cmd_oracle(&cfg, dir.path(), &mut Vec::new()).unwrap_err().is_config_error());
    }

    #[test]
    fn jobs_run_derived_seeds_and_merge_in_order() {
        let cfg = small("");
        let dir = tempfile::tempdir().unwrap();
        let mut log = Vec::new();
        run(Command::Train, &cfg, dir.path(), 2, &mut log).unwrap();
        let job0 = read(&dir.path().join("job_0"), "convergence.csv");
        let job1 = read(&dir.path().join("job_1"), "convergence.csv");
        assert!(job0.contains("# seed = 4\n"));
        assert!(job1.contains(&format!("# seed = {}\n", derive_seed(4, 1))));
        let merged = read(dir.path(), "merged_convergence.csv");
        let rows: Vec<&str> = merged.lines().filter(|l| !l.starts_with('#')).collect();
        assert!(rows[0].starts_with("job,seed,block,WL"));
        assert_eq!(rows.len(), 1 + 6);
        assert!(rows[1].starts_with("0,4,1,3,"));
        assert!(rows[4].starts_with(&format!("1,{},1,3,", derive_seed(4, 1))));
        let text = String::from_utf8(log).unwrap();
        assert!(text.find("[job 0]").unwrap() < text.find("[job 1]").unwrap());
        assert!(run(Command::Train, &cfg, dir.path(), 0, &mut Vec::new()).is_err());
    }
}
