use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use pathsel_core::domains::{DomainId, Experiment};
use pathsel_core::orchestrator::{
    extract_path, run_ablation_suite, target_accuracy, train_joint, DatasetSpec, ExperimentConfig,
};

use crate::config::{parse_config, render_config};
use crate::dataset::{load_domains_csv, write_domains_csv, EvalLabels};
use crate::error::{io_err, Error, Result};
use crate::{checkpoint, history, plot};

#[derive(Debug, Parser)]
#[command(name = "pathsel", version, about = "Learned intermediate-domain paths for gradual adaptation")]
pub struct Cli {
    #[command(flatten)]
    pub common: Common,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    /// TOML experiment config; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the configured synthetic domains to `<out>/domains.csv`.
    Generate,
    /// Train and write `history.jsonl`, `model.ckpt` and `config.toml`.
    Train,
    /// Print target accuracy of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print the greedy transfer path of a checkpoint as meta values.
    Path {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Draw the selection heatmap of a history to `<out>/selection.svg`.
    PlotSelection {
        #[arg(long)]
        history: Option<PathBuf>,
    },
    /// Draw reward curves of one or more histories to `<out>/reward.svg`.
    PlotReward {
        #[arg(long = "history")]
        histories: Vec<PathBuf>,
    },
    /// Train all three ablation modes and print their target accuracy.
    Ablation,
}

fn load_config(common: &Common, out: &mut dyn Write) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => {
            let parsed = parse_config(p)?;
            for k in &parsed.defaulted {
                eprintln!("note: `{k}` not set, using default");
            }
            parsed.config
        }
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    writeln!(out, "# effective config").map_err(io_err("stdout"))?;
    write!(out, "{}", render_config(&cfg)).map_err(io_err("stdout"))?;
    Ok(cfg)
}

pub fn load_experiment(cfg: &ExperimentConfig) -> Result<Experiment> {
    let domains = match &cfg.dataset {
        DatasetSpec::Csv { path } => load_domains_csv(Path::new(path), EvalLabels::Keep)?,
        synthetic => synthetic.generate(cfg.data_seed())?.expect("synthetic dataset"),
    };
    Ok(Experiment::new(domains)?)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_err(dir))
}

fn meta_label(exp: &Experiment, id: DomainId) -> String {
    match exp.by_id(id).and_then(|d| d.meta) {
        Some(m) => m.to_string(),
        None => id.to_string(),
    }
}

fn accuracy_line(acc: Option<f64>) -> String {
    match acc {
        Some(a) => format!("target accuracy {a:.6}"),
        None => "target accuracy unavailable (no evaluation labels)".into(),
    }
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    let c = &cli.common;
    let say = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(io_err("stdout"));
    let ckpt_path = |p: &Option<PathBuf>| p.clone().unwrap_or_else(|| c.out.join("model.ckpt"));
    match &cli.command {
        Command::Generate => {
            let cfg = load_config(c, out)?;
            let domains = match &cfg.dataset {
                DatasetSpec::Csv { .. } => {
                    return Err(Error::Core(pathsel_core::Error::Config(
                        "generate needs a synthetic dataset kind".into(),
                    )))
                }
                synthetic => synthetic.generate(cfg.data_seed())?.expect("synthetic dataset"),
            };
            ensure_dir(&c.out)?;
            let path = c.out.join("domains.csv");
            write_domains_csv(&path, &domains)?;
            say(out, format!("wrote {} domains to {}", domains.len(), path.display()))
        }
        Command::Train => {
            let cfg = load_config(c, out)?;
            let exp = load_experiment(&cfg)?;
            let (trained, hist) = train_joint(&cfg, &exp)?;
            ensure_dir(&c.out)?;
            history::write_history(&c.out.join("history.jsonl"), &hist)?;
            checkpoint::save(&c.out.join("model.ckpt"), &trained)?;
            let cfg_path = c.out.join("config.toml");
            std::fs::write(&cfg_path, render_config(&cfg)).map_err(io_err(&cfg_path))?;
            let labels: Vec<String> = trained.path.ids().iter().map(|&id| meta_label(&exp, id)).collect();
            say(out, format!("path {}", labels.join(",")))?;
            say(out, accuracy_line(hist.last().and_then(|r| r.target_accuracy)))
        }
        Command::Eval { checkpoint: p } => {
            let cfg = load_config(c, out)?;
            let exp = load_experiment(&cfg)?;
            let trained = checkpoint::load(&ckpt_path(p))?;
            say(out, accuracy_line(target_accuracy(&trained.model, &exp)?))
        }
        Command::Path { checkpoint: p } => {
            let cfg = load_config(c, out)?;
            let exp = load_experiment(&cfg)?;
            let trained = checkpoint::load(&ckpt_path(p))?;
            let path = extract_path(&trained.model, &trained.policy, &exp)?;
            let labels: Vec<String> = path.ids().iter().map(|&id| meta_label(&exp, id)).collect();
            say(out, labels.join(","))
        }
        Command::PlotSelection { history: h } => {
            let hp = h.clone().unwrap_or_else(|| c.out.join("history.jsonl"));
            let hist = history::read_history(&hp)?;
            let labels = match &c.config {
                Some(_) => {
                    let exp = load_experiment(&load_config(c, &mut std::io::sink())?)?;
                    exp.intermediates().map(|d| meta_label(&exp, d.domain_id)).collect()
                }
                None => Vec::new(),
            };
            ensure_dir(&c.out)?;
            let path = c.out.join("selection.svg");
            plot::write_svg(&path, &plot::selection_heatmap(&hist, &labels)?)?;
            say(out, format!("wrote {}", path.display()))
        }
        Command::PlotReward { histories } => {
            let paths = if histories.is_empty() {
                vec![c.out.join("history.jsonl")]
            } else {
                histories.clone()
            };
            let loaded: Vec<_> = paths.iter().map(|p| history::read_history(p)).collect::<Result<_>>()?;
            let named: Vec<_> = paths
                .iter()
                .zip(&loaded)
                .map(|(p, h)| (p.display().to_string(), h))
                .collect();
            ensure_dir(&c.out)?;
            let path = c.out.join("reward.svg");
            plot::write_svg(&path, &plot::reward_curve(&named)?)?;
            say(out, format!("wrote {}", path.display()))
        }
        Command::Ablation => {
            let cfg = load_config(c, out)?;
            let exp = load_experiment(&cfg)?;
            let rows = run_ablation_suite(&cfg, &exp)?;
            let mut table = String::from("mode\taccuracy\n");
            for r in &rows {
                table.push_str(&format!("{}\t{:.6}\n", r.mode.as_str(), r.accuracy));
            }
            ensure_dir(&c.out)?;
            let path = c.out.join("ablation.tsv");
            std::fs::write(&path, &table).map_err(io_err(&path))?;
            write!(out, "{table}").map_err(io_err("stdout"))
        }
    }
}
