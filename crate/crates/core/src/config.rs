//! Experiment configuration files.
//!
//! A configuration is a TOML document with the sections `[experiment]`,
//! `[target]`, `[train]`, and optionally `[adam]`, `[compare]`,
//! `[histogram]` and `[oracle]`. Hyperparameter keys use the names of the
//! training algorithm verbatim (`W`, `L`, `M`, `gamma`, `gamma_prime`,
//! `delta`, `delta_prime`, `lambda`). `M` and `lambda` accept a scalar or one
//! value per block. Unspecified proposal variances default to `2.4²/d` for
//! `ω` and `2.4²` for the scalar `ω′`.
//!
//! Overrides `key=value` are applied to the parsed document before
//! validation. `key` is either `section.key` or a bare key that occurs in
//! exactly one section. Bare keys of `[experiment]`, `[target]` and `[train]`
//! take precedence, so `lambda=1e-6` means `train.lambda`. `value` is parsed as a TOML value, falling back to a
//! string.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::baseline::AdamConfig;
use crate::error::{Error, Result};
use crate::oracle::{GridSpec, Refinement};
use crate::sampler::SignRule;
use crate::targets::{TargetFunction, TargetSpec};
use crate::trainer::{Method, TrainConfig};

/// Shipped presets, mirroring the hyperparameter tables of the reference
/// experiments.
pub const PRESETS: [(&str, &str); 4] = [
    ("multiscale", include_str!("../presets/multiscale.cfg")),
    ("stairstep", include_str!("../presets/stairstep.cfg")),
    ("sine3d", include_str!("../presets/sine3d.cfg")),
    ("adam", include_str!("../presets/adam.cfg")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, s)| *s)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T: Clone> OneOrMany<T> {
    fn into_vec(self) -> Vec<T> {
        match self {
            OneOrMany::One(v) => vec![v],
            OneOrMany::Many(v) => v,
        }
    }

    fn from_vec(v: Vec<T>) -> Self {
        if v.len() == 1 {
            OneOrMany::One(v[0].clone())
        } else {
            OneOrMany::Many(v)
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(rename = "N", skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(rename = "N_test", skip_serializing_if = "Option::is_none")]
    pub n_test: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<PathBuf>,
    /// Fill the `seconds` column of convergence reports. Off by default so
    /// repeated runs produce byte-identical artifacts.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub record_timing: Option<bool>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(rename = "W", skip_serializing_if = "Option::is_none")]
    pub w: Option<usize>,
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(rename = "M", skip_serializing_if = "Option::is_none")]
    pub m: Option<OneOrMany<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_prime: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta_prime: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<OneOrMany<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub method: Option<Method>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub burn_in: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sign_rule: Option<SignRule>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamSection {
    #[serde(rename = "W", skip_serializing_if = "Option::is_none")]
    pub w: Option<usize>,
    #[serde(rename = "L", skip_serializing_if = "Option::is_none")]
    pub l: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub learning_rate: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta2: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_every: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareMethod {
    Method1,
    Method2,
    Adam,
}

impl CompareMethod {
    pub fn name(self) -> &'static str {
        match self {
            CompareMethod::Method1 => "method1",
            CompareMethod::Method2 => "method2",
            CompareMethod::Adam => "adam",
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub methods: Option<Vec<CompareMethod>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bins: Option<usize>,
    /// Physical frequency range; defaults to the pooled sample range.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_max: Option<f64>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_min: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub initial_panels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub max_panels: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(rename = "W", skip_serializing_if = "Option::is_none")]
    pub w: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reps: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub probes: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub random_densities: Option<usize>,
}

/// The document as written, before defaults are applied.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    #[serde(default)]
    pub experiment: ExperimentSection,
    pub target: TargetSpec,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adam: Option<AdamSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub compare: Option<CompareSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub histogram: Option<HistogramSection>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleSection>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamRun {
    pub width: usize,
    pub depth: usize,
    pub cfg: AdamConfig,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HistogramConfig {
    pub bins: usize,
    pub range: Option<(f64, f64)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleConfig {
    pub grid: GridSpec,
    pub refinement: Refinement,
    pub width: usize,
    pub reps: usize,
    pub probes: Vec<f64>,
    pub random_densities: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            grid: GridSpec {
                omega_min: -200.0,
                omega_max: 200.0,
                count: 1601,
            },
            refinement: Refinement::default(),
            width: 6,
            reps: 10_000,
            probes: vec![-0.8, -0.35, 0.0, 0.45, 0.9],
            random_densities: 100,
        }
    }
}

/// A fully resolved experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub target: TargetSpec,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub out_dir: Option<PathBuf>,
    pub record_timing: bool,
    pub train: TrainConfig,
    pub adam: AdamRun,
    pub compare: Vec<CompareMethod>,
    pub histogram: HistogramConfig,
    pub oracle: OracleConfig,
}

const SECTIONS: [&str; 7] = ["experiment", "target", "train", "adam", "compare", "histogram", "oracle"];

/// Parses a configuration, applies overrides, and resolves defaults.
pub fn load_config(text: &str, overrides: &[(String, String)]) -> Result<ExperimentConfig> {
    let mut doc: toml::Table = toml::from_str(text).map_err(|e| Error::Parse(format!("config: {e}")))?;
    for (k, v) in overrides {
        apply_override(&mut doc, k, v)?;
    }
    let file: ConfigFile = ConfigFile::deserialize(toml::Value::Table(doc))
        .map_err(|e| Error::Parse(format!("config: {e}")))?;
    resolve(file)
}

/// Reads `path`, or the shipped preset when `path` is `preset:NAME`.
pub fn read_config_source(path: &str) -> Result<String> {
    if let Some(name) = path.strip_prefix("preset:") {
        return preset(name)
            .map(str::to_string)
            .ok_or_else(|| Error::config("config", format!("unknown preset `{name}`")));
    }
    Ok(std::fs::read_to_string(Path::new(path))?)
}

/// Splits `key=value`.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| Error::config("--override", format!("expected key=value, got `{s}`")))?;
    let k = k.trim();
    if k.is_empty() {
        return Err(Error::config("--override", "empty key"));
    }
    Ok((k.to_string(), v.trim().to_string()))
}

fn parse_value(v: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {v}")) {
        Ok(mut t) => t.remove("v").expect("key present"),
        Err(_) => toml::Value::String(v.to_string()),
    }
}

fn known_keys(section: &str) -> &'static [&'static str] {
    match section {
        "experiment" => &["N", "N_test", "seed", "out", "record_timing"],
        "target" => &["name", "frequency", "amplitude"],
        "train" => &[
            "W", "L", "M", "gamma", "gamma_prime", "delta", "delta_prime", "lambda", "method", "burn_in",
            "stop_tolerance", "sign_rule",
        ],
        "adam" => &[
            "W", "L", "epochs", "learning_rate", "batch_size", "lambda", "beta1", "beta2", "eps", "eval_every",
        ],
        "compare" => &["methods"],
        "histogram" => &["bins", "omega_min", "omega_max"],
        "oracle" => &[
            "omega_min", "omega_max", "count", "initial_panels", "max_panels", "tolerance", "W", "reps", "probes",
            "random_densities",
        ],
        _ => &[],
    }
}

fn apply_override(doc: &mut toml::Table, key: &str, value: &str) -> Result<()> {
    let (section, field) = match key.split_once('.') {
        Some((s, f)) => {
            if !SECTIONS.contains(&s) || !known_keys(s).contains(&f) {
                return Err(Error::config(key, "unknown configuration key"));
            }
            (s.to_string(), f.to_string())
        }
        None => {
            // Keys of the core sections win; others must be unique.
            let primary: Vec<&str> = ["experiment", "target", "train"]
                .into_iter()
                .filter(|s| known_keys(s).contains(&key))
                .collect();
            let candidates: Vec<&str> = if primary.is_empty() {
                SECTIONS.iter().copied().filter(|s| known_keys(s).contains(&key)).collect()
            } else {
                primary
            };
            match candidates.as_slice() {
                [one] => (one.to_string(), key.to_string()),
                [] => return Err(Error::config(key, "unknown configuration key")),
                many => {
                    return Err(Error::config(
                        key,
                        format!("ambiguous; qualify it as one of {}", many.iter().map(|s| format!("{s}.{key}")).collect::<Vec<_>>().join(", ")),
                    ))
                }
            }
        }
    };
    let table = doc
        .entry(section.clone())
        .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    let toml::Value::Table(t) = table else {
        return Err(Error::config(section, "must be a table"));
    };
    t.insert(field, parse_value(value));
    Ok(())
}

fn resolve(file: ConfigFile) -> Result<ExperimentConfig> {
    let target_fn = TargetFunction::from_spec(&file.target)?;
    let d = target_fn.input_dim;
    let ex = &file.experiment;
    let seed = ex.seed.unwrap_or(0);
    let tr = &file.train;
    let defaults = TrainConfig::with_defaults(d);
    let method = tr.method.unwrap_or(Method::Method1);
    let train = TrainConfig {
        width: tr.w.unwrap_or(defaults.width),
        max_blocks: tr.l.unwrap_or(defaults.max_blocks),
        sweeps: tr.m.clone().map_or(defaults.sweeps.clone(), OneOrMany::into_vec),
        gamma: tr.gamma.unwrap_or(defaults.gamma),
        gamma_prime: tr.gamma_prime.unwrap_or(defaults.gamma_prime),
        delta: tr.delta.unwrap_or(defaults.delta),
        delta_prime: tr.delta_prime.unwrap_or(defaults.delta_prime),
        lambdas: tr.lambda.clone().map_or(defaults.lambdas.clone(), OneOrMany::into_vec),
        seed,
        method,
        burn_in: tr.burn_in.unwrap_or(0),
        stop_tolerance: tr.stop_tolerance,
        sign_rule: Some(tr.sign_rule.unwrap_or(SignRule::default_for_dim(d))),
        check_normal_equations: false,
    };
    train.validate(d)?;

    let ad = file.adam.clone().unwrap_or_default();
    let base = AdamConfig::default();
    let adam = AdamRun {
        width: ad.w.unwrap_or(train.width),
        depth: ad.l.unwrap_or(train.max_blocks),
        cfg: AdamConfig {
            epochs: ad.epochs.unwrap_or(base.epochs),
            learning_rate: ad.learning_rate.unwrap_or(base.learning_rate),
            batch_size: ad.batch_size.unwrap_or(base.batch_size),
            lambda: ad.lambda.unwrap_or(base.lambda),
            seed,
            beta1: ad.beta1.unwrap_or(base.beta1),
            beta2: ad.beta2.unwrap_or(base.beta2),
            eps: ad.eps.unwrap_or(base.eps),
            eval_every: ad.eval_every.unwrap_or(base.eval_every),
        },
    };
    adam.cfg.validate()?;
    if adam.width == 0 || adam.depth == 0 {
        return Err(Error::config("adam.W/adam.L", "must be >= 1"));
    }

    let compare = file
        .compare
        .as_ref()
        .and_then(|c| c.methods.clone())
        .unwrap_or_else(|| vec![CompareMethod::Method1, CompareMethod::Method2]);

    let hs = file.histogram.clone().unwrap_or_default();
    let histogram = HistogramConfig {
        bins: hs.bins.unwrap_or(400),
        range: match (hs.omega_min, hs.omega_max) {
            (None, None) => None,
            (lo, Some(hi)) => Some((lo.unwrap_or(0.0), hi)),
            (Some(_), None) => return Err(Error::config("histogram.omega_max", "required when omega_min is set")),
        },
    };
    if histogram.bins == 0 {
        return Err(Error::config("histogram.bins", "must be >= 1"));
    }
    if let Some((lo, hi)) = histogram.range {
        if !(hi > lo) {
            return Err(Error::config("histogram.omega_max", "must exceed omega_min"));
        }
    }

    let os = file.oracle.clone().unwrap_or_default();
    let od = OracleConfig::default();
    let oracle = OracleConfig {
        grid: GridSpec {
            omega_min: os.omega_min.unwrap_or(od.grid.omega_min),
            omega_max: os.omega_max.unwrap_or(od.grid.omega_max),
            count: os.count.unwrap_or(od.grid.count),
        },
        refinement: Refinement {
            initial_panels: os.initial_panels.unwrap_or(od.refinement.initial_panels),
            max_panels: os.max_panels.unwrap_or(od.refinement.max_panels),
            tolerance: os.tolerance.unwrap_or(od.refinement.tolerance),
        },
        width: os.w.unwrap_or(od.width),
        reps: os.reps.unwrap_or(od.reps),
        probes: os.probes.clone().unwrap_or(od.probes),
        random_densities: os.random_densities.unwrap_or(od.random_densities),
    };
    oracle.grid.validate()?;
    if oracle.width == 0 || oracle.reps < 2 {
        return Err(Error::config("oracle.W/oracle.reps", "need W >= 1 and reps >= 2"));
    }

    let n_train = ex.n.unwrap_or(1000);
    let n_test = ex.n_test.unwrap_or(10_000);
    if n_train < 2 {
        return Err(Error::config("experiment.N", "must be >= 2"));
    }
    if n_test == 0 {
        return Err(Error::config("experiment.N_test", "must be >= 1"));
    }
    Ok(ExperimentConfig {
        target: file.target.clone(),
        n_train,
        n_test,
        seed,
        out_dir: ex.out.clone(),
        record_timing: ex.record_timing.unwrap_or(false),
        train,
        adam,
        compare,
        histogram,
        oracle,
    })
}

impl ExperimentConfig {
    pub fn target_function(&self) -> Result<TargetFunction> {
        TargetFunction::from_spec(&self.target)
    }

    /// The same experiment with another seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.train.seed = seed;
        c.adam.cfg.seed = seed;
        c
    }

    /// The resolved configuration as a complete TOML document.
    pub fn to_toml(&self) -> String {
        let t = &self.train;
        let a = &self.adam;
        let file = ConfigFile {
            experiment: ExperimentSection {
                n: Some(self.n_train),
                n_test: Some(self.n_test),
                seed: Some(self.seed),
                out: self.out_dir.clone(),
                record_timing: Some(self.record_timing),
            },
            target: self.target.clone(),
            train: TrainSection {
                w: Some(t.width),
                l: Some(t.max_blocks),
                m: Some(OneOrMany::from_vec(t.sweeps.clone())),
                gamma: Some(t.gamma),
                gamma_prime: Some(t.gamma_prime),
                delta: Some(t.delta),
                delta_prime: Some(t.delta_prime),
                lambda: Some(OneOrMany::from_vec(t.lambdas.clone())),
                method: Some(t.method),
                burn_in: Some(t.burn_in),
                stop_tolerance: t.stop_tolerance,
                sign_rule: t.sign_rule,
            },
            adam: Some(AdamSection {
                w: Some(a.width),
                l: Some(a.depth),
                epochs: Some(a.cfg.epochs),
                learning_rate: Some(a.cfg.learning_rate),
                batch_size: Some(a.cfg.batch_size),
                lambda: Some(a.cfg.lambda),
                beta1: Some(a.cfg.beta1),
                beta2: Some(a.cfg.beta2),
                eps: Some(a.cfg.eps),
                eval_every: Some(a.cfg.eval_every),
            }),
            compare: Some(CompareSection {
                methods: Some(self.compare.clone()),
            }),
            histogram: Some(HistogramSection {
                bins: Some(self.histogram.bins),
                omega_min: self.histogram.range.map(|r| r.0),
                omega_max: self.histogram.range.map(|r| r.1),
            }),
            oracle: Some(OracleSection {
                omega_min: Some(self.oracle.grid.omega_min),
                omega_max: Some(self.oracle.grid.omega_max),
                count: Some(self.oracle.grid.count),
                initial_panels: Some(self.oracle.refinement.initial_panels),
                max_panels: Some(self.oracle.refinement.max_panels),
                tolerance: Some(self.oracle.refinement.tolerance),
                w: Some(self.oracle.width),
                reps: Some(self.oracle.reps),
                probes: Some(self.oracle.probes.clone()),
                random_densities: Some(self.oracle.random_densities),
            }),
        };
        toml::to_string(&file).expect("configuration serializes")
    }
}
