//! `fedalign`: OT-based channel alignment for federated image datasets.
//!
//! Exit codes: 0 success, 1 validation error, 2 numerical non-convergence,
//! 3 I/O error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fedalign_core::align::{
    align_network, discrepancy_matrix, partition_dataset, AgentState, ServerState,
};
use fedalign_core::config::RunConfig;
use fedalign_core::dataset::{holdout_split, load_dataset, save_dataset, AgentDataset, DatasetFormat};
use fedalign_core::error::{Error, Result};
use fedalign_core::image::{ChannelTriplet, CHANNEL_NAMES};
use fedalign_core::learner::{run_federated_training, write_history, AlignedEval};
use fedalign_core::projection::project_image;
use fedalign_core::seed::{self, stream};
use fedalign_core::{bench_scaling, pooled_channel_measures, RgbImage};

#[derive(Parser)]
#[command(
    name = "fedalign",
    about = "Channel-wise Wasserstein-barycenter alignment and FedAvg simulation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Options shared by the pipeline subcommands; CLI flags override the
/// config file, which overrides built-in defaults.
#[derive(Args, Clone)]
struct CommonOpts {
    /// Run configuration file (TOML).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Global seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of agents override.
    #[arg(long)]
    agents: Option<usize>,
    /// Sinkhorn regularization override.
    #[arg(long)]
    epsilon: Option<f64>,
    /// Barycenter regularization override.
    #[arg(long)]
    barycenter_epsilon: Option<f64>,
    /// Measure mode override: `subsample` or `histogram`.
    #[arg(long)]
    mode: Option<String>,
    /// Subsample pixel count override.
    #[arg(long)]
    subsample: Option<usize>,
}

impl CommonOpts {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path)?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(agents) = self.agents {
            cfg.train.n_agents = agents;
            cfg.train.participants_per_round = cfg.train.participants_per_round.min(agents);
        }
        if let Some(eps) = self.epsilon {
            cfg.sinkhorn.epsilon = eps;
        }
        if let Some(eps) = self.barycenter_epsilon {
            cfg.barycenter.epsilon = eps;
        }
        if let Some(mode) = &self.mode {
            cfg.measure.mode = mode.clone();
        }
        if let Some(count) = self.subsample {
            cfg.measure.subsample_count = count;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Shard a dataset into per-agent files.
    Partition {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "cifar10-binary")]
        format: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the alignment pipeline and write aligned shards plus a report.
    Align {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "cifar10-binary")]
        format: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train FedAvg on raw or aligned shards and write the round history.
    Train {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "cifar10-binary")]
        format: String,
        /// Align the shards (and the held-out test set) before training.
        #[arg(long, conflicts_with = "raw")]
        aligned: bool,
        /// Train on the raw shards (default).
        #[arg(long)]
        raw: bool,
        /// Held-out test dataset; when absent, a seeded fraction of the
        /// input is held out.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        history: PathBuf,
        /// Optional final-model checkpoint path.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Pairwise per-channel W1 discrepancy between two shard directories.
    Metrics {
        #[command(flatten)]
        common: CommonOpts,
        #[arg(long)]
        pre: PathBuf,
        #[arg(long)]
        post: PathBuf,
        #[arg(long, default_value = "cifar10-binary")]
        format: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Time the solver kernels across support sizes.
    Bench {
        /// Comma-separated ascending support sizes.
        #[arg(long, default_value = "64,128,256,512")]
        sizes: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Project one image onto a target triplet (debugging aid).
    ProjectOne {
        #[command(flatten)]
        common: CommonOpts,
        /// Input image (PNG/JPEG).
        #[arg(long)]
        input: PathBuf,
        /// Directory with red.txt/green.txt/blue.txt measure files.
        #[arg(long, conflicts_with = "target_image")]
        target_triplet: Option<PathBuf>,
        /// Build the target triplet from this image's pooled histograms.
        #[arg(long)]
        target_image: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Directory for the per-channel `level,mapped_level` CSV tables.
        #[arg(long)]
        lut_out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own exit convention uses 2; keep 0 for --help/--version
            // and 1 for bad usage per our validation category.
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Partition {
            common,
            input,
            format,
            out,
        } => {
            let cfg = common.resolve()?;
            let format = DatasetFormat::parse(&format)?;
            let data = load_dataset(&input, format)?;
            let shards = partition_dataset(&data, cfg.train.n_agents, cfg.seed)?;
            write_shards(&shards, &out, format)?;
            println!(
                "partitioned {} samples into {} shards under {}",
                data.len(),
                shards.len(),
                out.display()
            );
            Ok(())
        }
        Command::Align {
            common,
            input,
            format,
            out,
        } => {
            let cfg = common.resolve()?;
            let format = DatasetFormat::parse(&format)?;
            let shards = load_or_partition(&input, format, &cfg)?;
            let mut agents: Vec<AgentState> = shards
                .into_iter()
                .enumerate()
                .map(|(id, shard)| AgentState::new(id, shard))
                .collect();
            let mut server = ServerState::new();
            let report = align_network(&mut agents, &mut server, &cfg.align_config()?)?;

            let aligned: Vec<AgentDataset> = agents
                .iter()
                .map(|a| a.aligned.clone().expect("aligned after align_network"))
                .collect();
            write_shards(&aligned, &out, format)?;
            report.write_csv(&out.join("report.csv"))?;
            let triplet_dir = out.join("global_triplet");
            server
                .global_triplet
                .as_ref()
                .expect("global triplet after align_network")
                .write_dir(&triplet_dir)?;
            print!("{}", report.summary());
            println!("aligned shards, report.csv and global_triplet/ written to {}", out.display());
            Ok(())
        }
        Command::Train {
            common,
            input,
            format,
            aligned,
            raw: _,
            test,
            history,
            checkpoint,
        } => {
            let cfg = common.resolve()?;
            let format = DatasetFormat::parse(&format)?;
            let data = load_dataset(&input, format)?;
            let (train_data, test_data) = match test {
                Some(path) => (data, load_dataset(&path, format)?),
                None => {
                    let (train, test) = holdout_split(&data, cfg.train.test_fraction, cfg.seed)?;
                    (train, test)
                }
            };
            let shards = partition_dataset(&train_data, cfg.train.n_agents, cfg.seed)?;
            let mut agents: Vec<AgentState> = shards
                .into_iter()
                .enumerate()
                .map(|(id, shard)| AgentState::new(id, shard))
                .collect();

            let train_cfg = cfg.train_config();
            let outcome = if aligned {
                let mut server = ServerState::new();
                let align_cfg = cfg.align_config()?;
                let report = align_network(&mut agents, &mut server, &align_cfg)?;
                print!("{}", report.summary());
                let global = server.global_triplet.as_ref().expect("global triplet");
                run_federated_training(
                    &agents,
                    &test_data,
                    &train_cfg,
                    Some(AlignedEval {
                        global_triplet: global,
                        measure: align_cfg.measure,
                        sinkhorn: &align_cfg.sinkhorn,
                        seed: cfg.seed,
                    }),
                )?
            } else {
                run_federated_training(&agents, &test_data, &train_cfg, None)?
            };

            write_history(&outcome.history, &history)?;
            if let Some(path) = checkpoint {
                outcome.final_params.save_checkpoint(&path)?;
            }
            if let Some(last) = outcome.history.last() {
                println!(
                    "{} rounds; final test accuracy {:.4}; history written to {}",
                    last.round,
                    last.test_accuracy,
                    history.display()
                );
            }
            Ok(())
        }
        Command::Metrics {
            common: _,
            pre,
            post,
            format,
            out,
        } => {
            let format = DatasetFormat::parse(&format)?;
            let pre_agents = read_shards(&pre, format)?;
            let post_agents = read_shards(&post, format)?;
            if pre_agents.len() != post_agents.len() {
                return Err(Error::validation(format!(
                    "{} pre shards vs {} post shards",
                    pre_agents.len(),
                    post_agents.len()
                )));
            }
            let pre_states: Vec<AgentState> = pre_agents
                .into_iter()
                .enumerate()
                .map(|(id, d)| AgentState::new(id, d))
                .collect();
            let post_states: Vec<AgentState> = post_agents
                .into_iter()
                .enumerate()
                .map(|(id, d)| AgentState::new(id, d))
                .collect();
            let pre_m = discrepancy_matrix(&pre_states, false)?;
            let post_m = discrepancy_matrix(&post_states, false)?;
            let report = fedalign_core::align::AlignmentReport {
                pre: pre_m,
                post: post_m,
                timings: Default::default(),
            };
            report.write_csv(&out)?;
            print!("{}", report.summary());
            println!("report written to {}", out.display());
            Ok(())
        }
        Command::Bench { sizes, seed, out } => {
            let sizes: Vec<usize> = sizes
                .split(',')
                .map(|s| {
                    s.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::validation(format!("bad size {s:?}")))
                })
                .collect::<Result<_>>()?;
            let report = bench_scaling(&sizes, seed)?;
            report.write_csv(&out)?;
            print!("{}", report.summary());
            println!("timings written to {}", out.display());
            Ok(())
        }
        Command::ProjectOne {
            common,
            input,
            target_triplet,
            target_image,
            out,
            lut_out,
        } => {
            let cfg = common.resolve()?;
            let img = read_image(&input)?;
            let target = match (target_triplet, target_image) {
                (Some(dir), None) => ChannelTriplet::read_dir(&dir)?,
                (None, Some(path)) => {
                    let reference = read_image(&path)?;
                    let mode = cfg
                        .measure_spec()?
                        .with_seed(seed::derive(cfg.seed, &[stream::SUBSAMPLE, 1]));
                    pooled_channel_measures(std::slice::from_ref(&reference), &mode)?
                }
                _ => {
                    return Err(Error::validation(
                        "provide exactly one of --target-triplet or --target-image",
                    ))
                }
            };
            let mode = cfg
                .measure_spec()?
                .with_seed(seed::derive(cfg.seed, &[stream::SUBSAMPLE, 0]));
            let projected = project_image(&img, &target, &mode, &cfg.sinkhorn_config())?;
            write_image(&projected.image, &out)?;
            if let Some(dir) = lut_out {
                for (c, lut) in projected.luts.iter().enumerate() {
                    lut.write_csv(&dir.join(format!("lut_{}.csv", CHANNEL_NAMES[c])))?;
                }
            }
            println!("projected image written to {}", out.display());
            Ok(())
        }
    }
}

fn shard_path(dir: &Path, id: usize, format: DatasetFormat) -> PathBuf {
    match format {
        DatasetFormat::Cifar10Binary => dir.join(format!("agent_{id:02}.bin")),
        DatasetFormat::ImageDirectory => dir.join(format!("agent_{id:02}")),
    }
}

fn write_shards(shards: &[AgentDataset], dir: &Path, format: DatasetFormat) -> Result<()> {
    for (id, shard) in shards.iter().enumerate() {
        save_dataset(shard, &shard_path(dir, id, format), format)?;
    }
    Ok(())
}

fn read_shards(dir: &Path, format: DatasetFormat) -> Result<Vec<AgentDataset>> {
    let mut shards = Vec::new();
    for id in 0.. {
        let path = shard_path(dir, id, format);
        if !path.exists() {
            break;
        }
        shards.push(load_dataset(&path, format)?);
    }
    if shards.is_empty() {
        return Err(Error::validation(format!(
            "{}: no agent_XX shards found",
            dir.display()
        )));
    }
    Ok(shards)
}

/// Load either a pre-partitioned shard directory (`agent_XX` entries) or a
/// whole dataset, partitioning it per the config.
fn load_or_partition(
    input: &Path,
    format: DatasetFormat,
    cfg: &RunConfig,
) -> Result<Vec<AgentDataset>> {
    if input.is_dir() && shard_path(input, 0, format).exists() {
        return read_shards(input, format);
    }
    let data = load_dataset(input, format)?;
    partition_dataset(&data, cfg.train.n_agents, cfg.seed)
}

fn read_image(path: &Path) -> Result<RgbImage> {
    let decoded = image::open(path)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))?
        .to_rgb8();
    RgbImage::from_interleaved(decoded.width() as usize, decoded.height() as usize, decoded.as_raw())
}

fn write_image(img: &RgbImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    let buffer =
        image::RgbImage::from_raw(img.width() as u32, img.height() as u32, img.to_interleaved())
            .expect("interleaved buffer matches dimensions");
    buffer
        .save(path)
        .map_err(|e| Error::format(format!("{}: {e}", path.display())))
}
