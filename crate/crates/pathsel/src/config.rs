//! TOML experiment configuration.
//!
//! Every key is optional; missing keys take the library defaults and are
//! reported by [`ParsedConfig::defaulted`]. Unknown keys are rejected.
//!
//! ```toml
//! seed = 0
//! epochs = 200
//! batch_size = 64
//! mode = "full"                 # classifier_only | disentangle_only | full
//! # rollouts_per_epoch = 5      # defaults to the pool size
//! train_selected_only = false
//! baseline = false
//!
//! [dataset]
//! kind = "rotated_gaussians"    # rotated_gaussians | rotated_moons | csv
//! n_per_domain = 500
//! angles = [0.0, 18.0, 36.0]
//! noise_sd = 0.3
//! # path = "domains.csv"        # kind = "csv" only
//!
//! [network]
//! extractor = [16, 8]
//! invariant = [8, 4]
//! specific = [8, 4]
//! classifier_hidden = []
//! mine_hidden = [16]
//! policy_hidden = [16]
//!
//! [rates]
//! feature = 0.05
//! mine = 0.05
//! policy = 0.01
//!
//! [reward]
//! gamma = 0.9
//! penalty = -50.0
//!
//! [distance]
//! method = "sliced"             # exact | sliced
//! n_projections = 64
//! on = "cloud"                  # cloud | pooled
//! batch = 128
//! ```

use std::path::Path;

use pathsel_core::disentangle::NetworkDims;
use pathsel_core::orchestrator::{
    AblationMode, DatasetSpec, DistanceConfig, DistanceOn, ExperimentConfig, Rates,
};
use pathsel_core::policy::RewardConfig;
use pathsel_core::transport::DistanceKind;
use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct FileConfig {
    seed: u64,
    epochs: usize,
    batch_size: usize,
    mode: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    rollouts_per_epoch: Option<usize>,
    train_selected_only: bool,
    baseline: bool,
    dataset: DatasetSection,
    network: NetworkSection,
    rates: RatesSection,
    reward: RewardSection,
    distance: DistanceSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DatasetSection {
    kind: String,
    n_per_domain: usize,
    angles: Vec<f64>,
    noise_sd: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    path: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct NetworkSection {
    extractor: Vec<usize>,
    invariant: Vec<usize>,
    specific: Vec<usize>,
    classifier_hidden: Vec<usize>,
    mine_hidden: Vec<usize>,
    policy_hidden: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RatesSection {
    feature: f64,
    mine: f64,
    policy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct RewardSection {
    gamma: f64,
    penalty: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
struct DistanceSection {
    method: String,
    n_projections: usize,
    on: String,
    batch: usize,
}

impl Default for FileConfig {
    fn default() -> Self {
        from_experiment(&ExperimentConfig::default())
    }
}

impl Default for DatasetSection {
    fn default() -> Self {
        FileConfig::default().dataset
    }
}

impl Default for NetworkSection {
    fn default() -> Self {
        FileConfig::default().network
    }
}

impl Default for RatesSection {
    fn default() -> Self {
        FileConfig::default().rates
    }
}

impl Default for RewardSection {
    fn default() -> Self {
        FileConfig::default().reward
    }
}

impl Default for DistanceSection {
    fn default() -> Self {
        FileConfig::default().distance
    }
}

fn from_experiment(c: &ExperimentConfig) -> FileConfig {
    let dataset = match &c.dataset {
        DatasetSpec::RotatedGaussians {
            n_per_domain,
            angles,
            noise_sd,
        }
        | DatasetSpec::RotatedMoons {
            n_per_domain,
            angles,
            noise_sd,
        } => DatasetSection {
            kind: match c.dataset {
                DatasetSpec::RotatedMoons { .. } => "rotated_moons",
                _ => "rotated_gaussians",
            }
            .into(),
            n_per_domain: *n_per_domain,
            angles: angles.clone(),
            noise_sd: *noise_sd,
            path: None,
        },
        DatasetSpec::Csv { path } => DatasetSection {
            kind: "csv".into(),
            n_per_domain: 0,
            angles: Vec::new(),
            noise_sd: 0.0,
            path: Some(path.clone()),
        },
    };
    FileConfig {
        seed: c.seed,
        epochs: c.epochs,
        batch_size: c.batch_size,
        mode: c.mode.as_str().into(),
        rollouts_per_epoch: c.rollouts_per_epoch,
        train_selected_only: c.train_selected_only,
        baseline: c.baseline,
        dataset,
        network: NetworkSection {
            extractor: c.dims.extractor.clone(),
            invariant: c.dims.invariant.clone(),
            specific: c.dims.specific.clone(),
            classifier_hidden: c.dims.classifier_hidden.clone(),
            mine_hidden: c.dims.mine_hidden.clone(),
            policy_hidden: c.policy_hidden.clone(),
        },
        rates: RatesSection {
            feature: c.rates.feature,
            mine: c.rates.mine,
            policy: c.rates.policy,
        },
        reward: RewardSection {
            gamma: c.reward.gamma,
            penalty: c.reward.penalty,
        },
        distance: DistanceSection {
            method: match c.distance.method {
                DistanceKind::Exact => "exact",
                DistanceKind::Sliced => "sliced",
            }
            .into(),
            n_projections: c.distance.n_projections,
            on: match c.distance.on {
                DistanceOn::Cloud => "cloud",
                DistanceOn::Pooled => "pooled",
            }
            .into(),
            batch: c.distance.batch,
        },
    }
}

/// Line (1-based) of `key` inside `[section]`, or at top level when `section`
/// is empty.
fn locate(src: &str, key_path: &str) -> Option<usize> {
    let (section, key) = key_path.rsplit_once('.').unwrap_or(("", key_path));
    let mut current = "";
    for (i, raw) in src.lines().enumerate() {
        let line = raw.trim();
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            current = name.trim();
            continue;
        }
        if current == section {
            if let Some((k, _)) = line.split_once('=') {
                if k.trim() == key {
                    return Some(i + 1);
                }
            }
        }
    }
    None
}

struct Checker<'a> {
    src: &'a str,
}

impl Checker<'_> {
    fn fail(&self, key: &str, msg: impl Into<String>) -> Error {
        Error::Config {
            key: key.into(),
            line: locate(self.src, key),
            msg: msg.into(),
        }
    }

    fn ensure(&self, ok: bool, key: &str, msg: impl Into<String>) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(self.fail(key, msg))
        }
    }
}

fn to_experiment(f: &FileConfig, src: &str) -> Result<ExperimentConfig> {
    let ck = Checker { src };
    let mode = AblationMode::parse(&f.mode)
        .ok_or_else(|| ck.fail("mode", "expected classifier_only, disentangle_only or full"))?;
    ck.ensure(f.epochs >= 1, "epochs", "must be >= 1")?;
    ck.ensure(f.batch_size >= 2, "batch_size", "must be >= 2")?;
    ck.ensure(f.rollouts_per_epoch != Some(0), "rollouts_per_epoch", "must be >= 1")?;
    for (k, v) in [
        ("rates.feature", f.rates.feature),
        ("rates.mine", f.rates.mine),
        ("rates.policy", f.rates.policy),
    ] {
        ck.ensure(v > 0.0 && v.is_finite(), k, format!("must be > 0, got {v}"))?;
    }
    ck.ensure(
        (0.0..1.0).contains(&f.reward.gamma),
        "reward.gamma",
        format!("must lie in [0, 1), got {}", f.reward.gamma),
    )?;
    ck.ensure(
        f.reward.penalty < 0.0 && f.reward.penalty.is_finite(),
        "reward.penalty",
        format!("must be negative, got {}", f.reward.penalty),
    )?;
    let method = match f.distance.method.as_str() {
        "exact" => DistanceKind::Exact,
        "sliced" => DistanceKind::Sliced,
        _ => return Err(ck.fail("distance.method", "expected exact or sliced")),
    };
    let on = match f.distance.on.as_str() {
        "cloud" => DistanceOn::Cloud,
        "pooled" => DistanceOn::Pooled,
        _ => return Err(ck.fail("distance.on", "expected cloud or pooled")),
    };
    ck.ensure(f.distance.n_projections >= 1, "distance.n_projections", "must be >= 1")?;
    ck.ensure(f.distance.batch >= 1, "distance.batch", "must be >= 1")?;
    let n = &f.network;
    for (k, v) in [
        ("network.extractor", &n.extractor),
        ("network.invariant", &n.invariant),
        ("network.specific", &n.specific),
    ] {
        ck.ensure(!v.is_empty() && !v.contains(&0), k, "must be a non-empty list of positive widths")?;
    }
    for (k, v) in [
        ("network.classifier_hidden", &n.classifier_hidden),
        ("network.mine_hidden", &n.mine_hidden),
        ("network.policy_hidden", &n.policy_hidden),
    ] {
        ck.ensure(!v.contains(&0), k, "widths must be positive")?;
    }
    let d = &f.dataset;
    let dataset = match d.kind.as_str() {
        "csv" => DatasetSpec::Csv {
            path: d
                .path
                .clone()
                .ok_or_else(|| ck.fail("dataset.path", "required when kind = \"csv\""))?,
        },
        kind @ ("rotated_gaussians" | "rotated_moons") => {
            ck.ensure(d.path.is_none(), "dataset.path", "only valid when kind = \"csv\"")?;
            ck.ensure(d.angles.len() >= 3, "dataset.angles", "need at least 3 angles")?;
            ck.ensure(d.n_per_domain >= 1, "dataset.n_per_domain", "must be >= 1")?;
            ck.ensure(d.noise_sd > 0.0, "dataset.noise_sd", "must be > 0")?;
            let (n_per_domain, angles, noise_sd) = (d.n_per_domain, d.angles.clone(), d.noise_sd);
            if kind == "rotated_moons" {
                DatasetSpec::RotatedMoons {
                    n_per_domain,
                    angles,
                    noise_sd,
                }
            } else {
                DatasetSpec::RotatedGaussians {
                    n_per_domain,
                    angles,
                    noise_sd,
                }
            }
        }
        _ => return Err(ck.fail("dataset.kind", "expected rotated_gaussians, rotated_moons or csv")),
    };
    let cfg = ExperimentConfig {
        dataset,
        dims: NetworkDims {
            extractor: n.extractor.clone(),
            invariant: n.invariant.clone(),
            specific: n.specific.clone(),
            classifier_hidden: n.classifier_hidden.clone(),
            mine_hidden: n.mine_hidden.clone(),
        },
        policy_hidden: n.policy_hidden.clone(),
        rates: Rates {
            feature: f.rates.feature,
            mine: f.rates.mine,
            policy: f.rates.policy,
        },
        reward: RewardConfig {
            gamma: f.reward.gamma,
            penalty: f.reward.penalty,
        },
        batch_size: f.batch_size,
        epochs: f.epochs,
        rollouts_per_epoch: f.rollouts_per_epoch,
        distance: DistanceConfig {
            method,
            n_projections: f.distance.n_projections,
            on,
            batch: f.distance.batch,
        },
        mode,
        seed: f.seed,
        train_selected_only: f.train_selected_only,
        baseline: f.baseline,
    };
    cfg.validate()?;
    Ok(cfg)
}

const ALL_KEYS: &[&str] = &[
    "seed",
    "epochs",
    "batch_size",
    "mode",
    "rollouts_per_epoch",
    "train_selected_only",
    "baseline",
    "dataset.kind",
    "dataset.n_per_domain",
    "dataset.angles",
    "dataset.noise_sd",
    "network.extractor",
    "network.invariant",
    "network.specific",
    "network.classifier_hidden",
    "network.mine_hidden",
    "network.policy_hidden",
    "rates.feature",
    "rates.mine",
    "rates.policy",
    "reward.gamma",
    "reward.penalty",
    "distance.method",
    "distance.n_projections",
    "distance.on",
    "distance.batch",
];

#[derive(Debug, Clone, PartialEq)]
pub struct ParsedConfig {
    pub config: ExperimentConfig,
    /// Keys absent from the file that took their default value.
    pub defaulted: Vec<&'static str>,
}

pub fn parse_config_str(src: &str) -> Result<ParsedConfig> {
    let file: FileConfig = toml::from_str(src).map_err(|e| {
        let unknown = e
            .message()
            .strip_prefix("unknown field `")
            .and_then(|m| m.split('`').next())
            .map(str::to_string);
        let key_line = |k: &str| {
            src.lines()
                .position(|l| l.split_once('=').is_some_and(|(lk, _)| lk.trim() == k))
                .map(|i| i + 1)
        };
        let (key, line) = match unknown {
            Some(k) => (k.clone(), key_line(&k)),
            None => {
                let line = e.span().map(|s| src[..s.start].lines().count().max(1));
                let key = line
                    .and_then(|l| src.lines().nth(l - 1))
                    .and_then(|l| l.split_once('=').map(|(k, _)| k.trim().to_string()))
                    .unwrap_or_default();
                (key, line)
            }
        };
        Error::Config {
            key,
            line,
            msg: e.message().to_string(),
        }
    })?;
    let table: toml::Table = toml::from_str(src).expect("parsed above");
    let present = |path: &str| {
        let mut node = &table;
        let parts: Vec<&str> = path.split('.').collect();
        for (i, p) in parts.iter().enumerate() {
            match node.get(*p) {
                Some(toml::Value::Table(t)) if i + 1 < parts.len() => node = t,
                Some(_) if i + 1 == parts.len() => return true,
                _ => return false,
            }
        }
        false
    };
    let config = to_experiment(&file, src)?;
    let defaulted = ALL_KEYS.iter().copied().filter(|k| !present(k)).collect();
    Ok(ParsedConfig { config, defaulted })
}

pub fn parse_config(path: &Path) -> Result<ParsedConfig> {
    let src = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_config_str(&src)
}

/// TOML text that parses back to `cfg`.
pub fn render_config(cfg: &ExperimentConfig) -> String {
    toml::to_string(&from_experiment(cfg)).expect("config is always representable")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_all_defaults() {
        let p = parse_config_str("").unwrap();
        assert_eq!(p.config, ExperimentConfig::default());
        assert_eq!(p.defaulted.len(), ALL_KEYS.len());
    }

    #[test]
    fn gamma_out_of_range_names_key_and_line() {
        let err = parse_config_str("seed = 1\n\n[reward]\ngamma = 1.5\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("reward.gamma") && msg.contains("line 4") && msg.contains("[0, 1)"), "{msg}");
    }

    #[test]
    fn unknown_key_rejected() {
        let msg = parse_config_str("epochs = 3\nepoch = 4\n").unwrap_err().to_string();
        assert!(msg.contains("epoch") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn type_mismatch_names_key() {
        let msg = parse_config_str("[rates]\nfeature = \"fast\"\n").unwrap_err().to_string();
        assert!(msg.contains("`feature`") && msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn echo_round_trip() {
        let src = "seed = 9\nmode = \"disentangle_only\"\nrollouts_per_epoch = 3\n[dataset]\nkind = \"rotated_moons\"\nangles = [0.0, 45.0, 90.0]\n[distance]\non = \"pooled\"\n";
        let a = parse_config_str(src).unwrap().config;
        let b = parse_config_str(&render_config(&a)).unwrap();
        assert_eq!(a, b.config);
        assert!(b.defaulted.is_empty());
    }

    #[test]
    fn csv_requires_path() {
        let msg = parse_config_str("[dataset]\nkind = \"csv\"\n").unwrap_err().to_string();
        assert!(msg.contains("dataset.path"), "{msg}");
        let ok = parse_config_str("[dataset]\nkind = \"csv\"\npath = \"d.csv\"\n").unwrap();
        assert_eq!(ok.config.dataset, DatasetSpec::Csv { path: "d.csv".into() });
    }
}
