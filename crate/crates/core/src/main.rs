use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use jnf::harness::{
    cmd_ablation, cmd_enhance, cmd_evaluate, cmd_noise_pattern, cmd_simulate, cmd_sweep_angle, cmd_train,
    resolve_config, AblationEntry, HarnessConfig, Method, Overrides, Preset,
};
use jnf::net::Mode;

#[derive(Parser)]
#[command(name = "jnf", version, about = "Multichannel speech enhancement with joint non-linear spatial filters")]
struct Cli {
    /// JSON config merged over the preset; a run manifest re-runs that run.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    preset: Option<PresetArg>,
    /// Output directory (default `runs/<command>`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Desk,
    Paper,
}

#[derive(Subcommand)]
enum Command {
    /// Render train/val/test scenes from a dry-speech corpus.
    Simulate {
        /// Dry-speech WAV directory; a synthetic corpus is generated otherwise.
        #[arg(long)]
        corpus: Option<PathBuf>,
    },
    /// Train a mask network on a simulated dataset.
    Train {
        #[command(flatten)]
        data: DataArgs,
        /// T, F, FT or PF.
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        nsf: bool,
    },
    /// Write enhanced WAVs for a split.
    Enhance {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        method: MethodArgs,
    },
    /// Score a method with SI-SDR and ESTOI.
    Evaluate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        method: MethodArgs,
    },
    /// Compare several checkpoints on the same scenes.
    Ablation {
        #[command(flatten)]
        data: DataArgs,
        /// `label=path` pairs; repeatable.
        #[arg(long = "variant")]
        variants: Vec<String>,
    },
    /// Energy retention and SI-SDR of probes arriving from each angle.
    SweepAngle {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Grid step in degrees.
        #[arg(long)]
        step: Option<f64>,
    },
    /// Angle × frequency response to white noise.
    NoisePattern {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        step: Option<f64>,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    max_scenes: Option<usize>,
}

#[derive(Args)]
struct MethodArgs {
    /// checkpoint, oracle-mvdr, oracle-cirm, mvdr+pf, nsf+pf or noisy.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Post-filter for two-stage methods; trained when omitted.
    #[arg(long)]
    pf_checkpoint: Option<PathBuf>,
}

impl DataArgs {
    fn apply(&self, cfg: &mut HarnessConfig) {
        if let Some(d) = &self.dataset {
            cfg.dataset = Some(d.clone());
        }
        if let Some(s) = &self.split {
            cfg.split = s.clone();
        }
        if self.max_scenes.is_some() {
            cfg.max_scenes = self.max_scenes;
        }
    }
}

impl MethodArgs {
    fn apply(&self, cfg: &mut HarnessConfig) -> Result<()> {
        if let Some(m) = &self.method {
            cfg.method = m.parse::<Method>()?;
        }
        if let Some(c) = &self.checkpoint {
            cfg.checkpoint = Some(c.clone());
        }
        if let Some(c) = &self.pf_checkpoint {
            cfg.pf_checkpoint = Some(c.clone());
        }
        Ok(())
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let overrides = Overrides {
        preset: cli.preset.map(|p| match p {
            PresetArg::Desk => Preset::Desk,
            PresetArg::Paper => Preset::Paper,
        }),
        seed: cli.seed,
    };
    let mut cfg = resolve_config(cli.config.as_deref(), &overrides)
        .with_context(|| format!("loading config {:?}", cli.config))?;
    let name = match &cli.command {
        Command::Simulate { .. } => "simulate",
        Command::Train { .. } => "train",
        Command::Enhance { .. } => "enhance",
        Command::Evaluate { .. } => "evaluate",
        Command::Ablation { .. } => "ablation",
        Command::SweepAngle { .. } => "sweep-angle",
        Command::NoisePattern { .. } => "noise-pattern",
    };
    let out = cli.out.unwrap_or_else(|| PathBuf::from("runs").join(name));
    let manifest = match cli.command {
        Command::Simulate { corpus } => {
            if corpus.is_some() {
                cfg.corpus.path = corpus;
            }
            cmd_simulate(&cfg, &out)?
        }
        Command::Train { data, mode, nsf } => {
            data.apply(&mut cfg);
            if let Some(m) = mode {
                cfg.net.mode = m.parse::<Mode>()?;
            }
            cfg.net.nsf |= nsf;
            cmd_train(&cfg, &out)?
        }
        Command::Enhance { data, method } => {
            data.apply(&mut cfg);
            method.apply(&mut cfg)?;
            cmd_enhance(&cfg, &out)?
        }
        Command::Evaluate { data, method } => {
            data.apply(&mut cfg);
            method.apply(&mut cfg)?;
            cmd_evaluate(&cfg, &out)?
        }
        Command::Ablation { data, variants } => {
            data.apply(&mut cfg);
            for v in variants {
                let Some((label, path)) = v.split_once('=') else {
                    bail!("variant {v:?} is not of the form label=path");
                };
                cfg.ablation.push(AblationEntry {
                    label: label.to_string(),
                    checkpoint: PathBuf::from(path),
                });
            }
            cmd_ablation(&cfg, &out)?
        }
        Command::SweepAngle { checkpoint, step } => {
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint;
            }
            if let Some(s) = step {
                cfg.sweep.step_deg = s;
            }
            cmd_sweep_angle(&cfg, &out)?
        }
        Command::NoisePattern { checkpoint, step } => {
            if checkpoint.is_some() {
                cfg.checkpoint = checkpoint;
            }
            if let Some(s) = step {
                cfg.pattern.step_deg = s;
            }
            cmd_noise_pattern(&cfg, &out)?
        }
    };
    log::info!(
        "{name}: {} outputs in {} ({:.1} s)",
        manifest.outputs.len(),
        out.display(),
        manifest.wall_seconds
    );
    Ok(())
}
