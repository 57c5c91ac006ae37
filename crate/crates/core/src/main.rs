use std::collections::HashMap;
use std::fs;
use std::net::{SocketAddr, UdpSocket};
use std::path::PathBuf;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use patchcast::detection::{scene_generate, FidelityDetector};
use patchcast::frame_grid::{read_annotations, write_annotations, write_pgm, GridSpec};
use patchcast::harness::{run_episode_on, run_matrix, ExperimentConfig, ImportanceLearner, LearnerPolicy, Method, Sequence};
use patchcast::importance::{export_heatmap, QModel};
use patchcast::scheduler::{ScheduleConfig, SelectionMethod};
use patchcast::transport::socket::{run_receiver, run_sender, FeedbackPolicy, NoFeedback, ReceiverConfig, SenderConfig};

#[derive(Parser)]
#[command(name = "patchcast", version, about = "Selective patch streaming simulator and evaluation harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the method × rate × seed matrix described by a config file.
    Run {
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run one learning episode and export its final importance heatmap.
    Heatmap {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "dqn+interp")]
        method: String,
        #[arg(long, default_value_t = 0.25)]
        rate: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Also write the trained Q table here.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Write a synthetic scene as PGM frames plus annotations.csv.
    SceneGen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Stream frames to a receiver over UDP.
    Send {
        #[arg(long)]
        peer: SocketAddr,
        #[arg(long, default_value = "0.0.0.0:0")]
        bind: SocketAddr,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, default_value = "dqn")]
        method: String,
        #[arg(long, default_value_t = 0.5)]
        rate: f64,
        #[arg(long, default_value_t = 100)]
        feedback_timeout_ms: u64,
    },
    /// Receive, reconstruct and (with annotations) answer with feedback masks.
    Recv {
        #[arg(long)]
        bind: SocketAddr,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        frames: u32,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 33)]
        deadline_ms: u64,
        #[arg(long, default_value_t = 0.5)]
        rate: f64,
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        interpolate: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: Option<&PathBuf>) -> Result<ExperimentConfig> {
    Ok(match path {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    })
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, out } => {
            let mut cfg = ExperimentConfig::load(&config)?;
            if out.is_some() {
                cfg.output_dir = out;
            }
            let result = run_matrix(&cfg)?;
            print!("{}", result.summary);
            if let Some(dir) = &cfg.output_dir {
                log::info!("{} records written to {}", result.records.len(), dir.display());
            }
        }
        Command::Heatmap {
            config,
            method,
            rate,
            seed,
            out,
            checkpoint,
        } => {
            let cfg = load_config(config.as_ref())?;
            let method: Method = method.parse()?;
            if method.selection() != SelectionMethod::Dqn {
                bail!("heatmaps need a dqn method, got {method}");
            }
            let seq = Sequence::load(&cfg, seed)?;
            let episode = run_episode_on(&seq, &cfg, method, rate, seed, &FidelityDetector { theta: cfg.theta })?;
            let probs = episode.final_probabilities.context("episode produced no probability map")?;
            export_heatmap(&probs, &out)?;
            if let (Some(path), Some(model)) = (checkpoint, &episode.model) {
                model.save(path)?;
            }
            println!("f1 {:.3}  heatmap written to {}", episode.record.f1, out.display());
        }
        Command::SceneGen { config, seed, out } => {
            let cfg = load_config(config.as_ref())?;
            fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
            let (frames, boxes) = scene_generate(&cfg.scene_for_seed(seed))?;
            for f in &frames {
                write_pgm(f, out.join(format!("frame_{:05}.pgm", f.index)))?;
            }
            let indexed: Vec<_> = boxes.iter().enumerate().map(|(i, b)| (i as u32, *b)).collect();
            write_annotations(out.join("annotations.csv"), &indexed)?;
            println!("{} frames written to {}", frames.len(), out.display());
        }
        Command::Send {
            peer,
            bind,
            config,
            seed,
            method,
            rate,
            feedback_timeout_ms,
        } => {
            let cfg = load_config(config.as_ref())?;
            let selection = match method.as_str() {
                "dqn" => SelectionMethod::Dqn,
                "random" => SelectionMethod::Random,
                other => bail!("send supports `dqn` or `random`, got `{other}`"),
            };
            let seq = Sequence::load(&cfg, seed)?;
            let socket = UdpSocket::bind(bind).context("binding sender socket")?;
            let mut schedule = ScheduleConfig::new(rate, selection, seed);
            schedule.bootstrap_frames = cfg.bootstrap_frames;
            schedule.feedback_period = cfg.feedback_period;
            let report = run_sender(
                &socket,
                &seq.frames,
                &SenderConfig {
                    peer,
                    k: cfg.k,
                    schedule,
                    feedback_timeout: Duration::from_millis(feedback_timeout_ms),
                },
            )?;
            println!(
                "sent {} frames, {} datagrams, {} bytes, {} feedback messages",
                report.frames, report.datagrams, report.bytes, report.feedback_received
            );
        }
        Command::Recv {
            bind,
            config,
            frames,
            width,
            height,
            deadline_ms,
            rate,
            annotations,
            interpolate,
            out,
        } => {
            let cfg = load_config(config.as_ref())?;
            let socket = UdpSocket::bind(bind).context("binding receiver socket")?;
            let mut rcfg = ReceiverConfig::new(cfg.k, width, height, frames);
            rcfg.deadline = Duration::from_millis(deadline_ms);
            rcfg.interpolate = interpolate;
            let mut policy: Box<dyn FeedbackPolicy> = match annotations {
                Some(path) => {
                    let boxes: HashMap<_, _> = read_annotations(&path)?
                        .into_iter()
                        .filter_map(|a| a.to_box(width, height).ok().map(|b| (a.frame_index, b)))
                        .collect();
                    let grid = GridSpec::new(cfg.k, width, height)?;
                    Box::new(LearnerPolicy {
                        learner: ImportanceLearner::new(QModel::new(cfg.k, cfg.importance.clone())?, grid)?,
                        boxes,
                        rate,
                        bootstrap_frames: cfg.bootstrap_frames,
                    })
                }
                None => Box::new(NoFeedback),
            };
            let received = run_receiver(&socket, &rcfg, policy.as_mut())?;
            let cells: usize = received.iter().map(|r| r.received.popcount()).sum();
            println!("received {} frames, {} cells", received.len(), cells);
            if let Some(dir) = out {
                fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
                for r in &received {
                    write_pgm(&r.frame, dir.join(format!("recv_{:05}.pgm", r.frame.index)))?;
                }
            }
        }
    }
    Ok(())
}
