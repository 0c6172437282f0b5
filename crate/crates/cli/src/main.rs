use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use occlugraph::graph::GraphConfig;
use occlugraph::labeling::LabelConfig;
use occlugraph::objectives::LossConfig;
use occlugraph::pipeline::{self, PredictOptions, Predictor, VerifyOptions, WORKERS_ENV};
use occlugraph::raycast::{CameraSpec, Projection};
use occlugraph::schema::{read_json, to_json_bytes, write_json};
use occlugraph::scene::GenerationConfig;
use occlugraph::scorer::{ScorerConfig, ScorerWeights};

#[derive(Parser)]
#[command(name = "occlugraph", version, about = "Synthetic plant scenes and direction-conditioned occlusion labels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProjectionArg {
    Ortho,
    Persp,
}

#[derive(Clone, Copy, ValueEnum)]
enum PredictorArg {
    Oracle,
    Scorer,
}

#[derive(Subcommand)]
enum Command {
    /// Generate scenes for seeds S..S+N-1 plus an 80/20 split list.
    Generate {
        /// Generation config (JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute z-buffer occlusion labels for every scene in a directory.
    Label {
        #[arg(long)]
        scenes: PathBuf,
        /// Label config (JSON); defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, env = WORKERS_ENV)]
        workers: Option<usize>,
        /// Output directory; defaults to the scene directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Cross-check stored labels against a ray-cast simulation.
    Verify {
        #[arg(long)]
        scenes: PathBuf,
        /// Label directory; defaults to the scene directory.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "ortho")]
        projection: ProjectionArg,
        #[arg(long, default_value_t = 0.0)]
        jitter_deg: f64,
        #[arg(long, default_value_t = 1.0)]
        standoff: f64,
        #[arg(long, default_value_t = 60.0)]
        fov_deg: f64,
        #[arg(long, default_value_t = 1)]
        rays_per_voxel: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.05)]
        max_union_mae: f64,
        #[arg(long, env = WORKERS_ENV)]
        workers: Option<usize>,
        /// Also write the report here (and a manifest next to it).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Ranking, union, edge and geometry metrics of a prediction bundle.
    Eval {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        preds: PathBuf,
        #[arg(long)]
        scenes: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        points_per_instance: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Loss values and finite-difference gradient checks of every objective.
    Losscheck {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        preds: PathBuf,
        /// Loss config (JSON); defaults when omitted.
        #[arg(long)]
        loss_config: Option<PathBuf>,
        #[arg(long)]
        scenes: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        points_per_instance: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a prediction bundle for every labelled scene.
    Predict {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        scenes: Option<PathBuf>,
        #[arg(long, value_enum, default_value = "oracle")]
        predictor: PredictorArg,
        /// Scorer weights file; random weights from --scorer-seed when omitted.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        scorer_seed: u64,
        /// Candidate-graph config (JSON).
        #[arg(long)]
        graph_config: Option<PathBuf>,
        #[arg(long, default_value_t = 128)]
        points_per_instance: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write candidate graphs and pair features for every scene.
    Graph {
        #[arg(long)]
        scenes: PathBuf,
        #[arg(long)]
        graph_config: Option<PathBuf>,
        /// Label config; its occluder radius selects candidate leaves.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_or_default<T: DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => read_json(p).with_context(|| format!("reading config {}", p.display())),
        None => Ok(T::default()),
    }
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    if let Some(path) = out {
        write_json(path, value)?;
    }
    let bytes = to_json_bytes(value)?;
    print!("{}", String::from_utf8_lossy(&bytes));
    Ok(())
}

fn workers(w: Option<usize>) -> usize {
    w.unwrap_or_else(pipeline::default_workers)
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Generate {
            config,
            count,
            seed,
            out,
        } => {
            let cfg: GenerationConfig = load_or_default(config.as_deref())?;
            let outcome = pipeline::cmd_generate(&cfg, count, seed, &out)?;
            for r in &outcome.rejected {
                eprintln!("seed {} rejected: {}", r.seed, r.reason);
            }
            eprintln!("generated {} of {} scenes", outcome.scenes.len(), count);
            emit(&outcome.manifest, None)?;
            Ok(true)
        }
        Command::Label {
            scenes,
            config,
            workers: w,
            out,
        } => {
            let cfg: LabelConfig = load_or_default(config.as_deref())?;
            let outcome = pipeline::cmd_label(&scenes, &cfg, workers(w), out.as_deref())?;
            eprintln!("labelled {} scenes", outcome.labels.len());
            emit(&outcome.manifest, None)?;
            Ok(true)
        }
        Command::Verify {
            scenes,
            labels,
            projection,
            jitter_deg,
            standoff,
            fov_deg,
            rays_per_voxel,
            seed,
            max_union_mae,
            workers: w,
            out,
        } => {
            let camera = CameraSpec {
                projection: match projection {
                    ProjectionArg::Ortho => Projection::Orthographic,
                    ProjectionArg::Persp => Projection::Perspective,
                },
                standoff,
                fov: fov_deg.to_radians(),
                jitter_deg,
                rays_per_fruit_voxel: rays_per_voxel,
            };
            let opts = VerifyOptions {
                camera,
                seed,
                workers: workers(w),
                max_union_mae,
                labels,
            };
            let (report, manifest) = pipeline::cmd_verify(&scenes, &opts)?;
            if let Some(path) = &out {
                let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
                write_json(&dir.join(pipeline::manifest_file_name("verify")), &manifest)?;
            }
            emit(&report, out.as_deref())?;
            if !report.passed {
                eprintln!("union MAE {} exceeds {}", report.union_mae, report.max_union_mae);
            }
            Ok(report.passed)
        }
        Command::Eval {
            labels,
            preds,
            scenes,
            points_per_instance,
            out,
        } => {
            let report = pipeline::cmd_eval(&labels, &preds, scenes.as_deref(), points_per_instance)?;
            emit(&report, out.as_deref())?;
            Ok(true)
        }
        Command::Losscheck {
            labels,
            preds,
            loss_config,
            scenes,
            points_per_instance,
            out,
        } => {
            let cfg: LossConfig = load_or_default(loss_config.as_deref())?;
            let report = pipeline::cmd_losscheck(&labels, &preds, scenes.as_deref(), &cfg, points_per_instance)?;
            emit(&report, out.as_deref())?;
            if !report.passed {
                eprintln!("gradient check failed: {}", report.failing.join(", "));
            }
            Ok(report.passed)
        }
        Command::Predict {
            labels,
            scenes,
            predictor,
            weights,
            scorer_seed,
            graph_config,
            points_per_instance,
            out,
        } => {
            let predictor = match predictor {
                PredictorArg::Oracle => Predictor::Oracle,
                PredictorArg::Scorer => Predictor::Scorer(Box::new(match &weights {
                    Some(p) => ScorerWeights::load(p)?,
                    None => ScorerWeights::random(ScorerConfig::default(), scorer_seed)?,
                })),
            };
            let opts = PredictOptions {
                predictor,
                graph: load_or_default(graph_config.as_deref())?,
                points_per_instance,
                scenes,
            };
            let (bundle, provenance) = pipeline::cmd_predict(&labels, &opts)?;
            pipeline::write_predictions(&out, &bundle, provenance)?;
            eprintln!("wrote predictions for {} scenes to {}", bundle.scenes.len(), out.display());
            Ok(true)
        }
        Command::Graph {
            scenes,
            graph_config,
            config,
            out,
        } => {
            let graph: GraphConfig = load_or_default(graph_config.as_deref())?;
            let labels: LabelConfig = load_or_default(config.as_deref())?;
            let written = pipeline::cmd_graph(&scenes, &graph, &labels, &out)?;
            eprintln!("wrote {} graph files", written.len());
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
