//! Command-line surface: generate synthetic worlds and logged datasets,
//! train response models, evaluate against ground truth, allocate budgets,
//! and dump predicted curves. Every artifact-producing command writes a
//! run manifest beside its outputs. Failures exit with a class-specific
//! code and a single machine-parseable stderr line.

mod manifest;

use clap::{Parser, Subcommand};
use coman::allocator::{self, AllocationProblem};
use coman::models::{FeatureMeta, Model, ModelKind};
use coman::simkit::dataset::{self, Policy, SimRecord, SplitTag};
use coman::simkit::uplift::{uplift_cohorts, write_cohorts};
use coman::simkit::world::{Direction, SyntheticWorld, WorldConfig};
use coman::simkit::{eval_grid, evaluate};
use coman::trainer::{train, write_trace, TrainConfig};
use manifest::ManifestBuilder;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;

#[derive(Parser)]
#[command(name = "coman", version, about)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic world plus biased-train and unbiased-eval logs.
    Gen {
        #[arg(long, default_value_t = coman::simkit::world::DEFAULT_WORLD_SEED)]
        seed: u64,
        #[arg(long, default_value_t = 20_000)]
        n_users: usize,
        /// Unbiased split size; defaults to a tenth of n_users.
        #[arg(long)]
        eval_users: Option<usize>,
        #[arg(long, default_value = "increasing")]
        direction: String,
        /// Comma-separated treatment grid.
        #[arg(long, default_value = "0,1,2,3,4,5")]
        treatments: String,
        /// Copy one ground-truth cell everywhere (ablation control).
        #[arg(long)]
        uniform_cells: bool,
        /// Two-tier sensitivity world for uplift analysis.
        #[arg(long)]
        two_tier: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model on a generated data directory.
    Train {
        #[arg(long)]
        model: String,
        /// Directory produced by `gen`.
        #[arg(long)]
        data: PathBuf,
        /// JSON training config (partial keys allowed).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on an eval split against the true world.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Eval split CSV.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        world: PathBuf,
        #[arg(long, default_value_t = 5)]
        uplift_groups: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Solve the budget allocation from a score file or a checkpoint.
    Allocate {
        /// Long-format CSV: user_id,treatment_value,response_score.
        #[arg(long, conflicts_with = "checkpoint")]
        scores: Option<PathBuf>,
        #[arg(long, requires = "data")]
        checkpoint: Option<PathBuf>,
        /// Context records CSV (one user per row) when scoring from a
        /// checkpoint.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        budget: f64,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Dump the predicted response curve for one context.
    Curves {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 1)]
        city: u32,
        /// Period index 0..=4.
        #[arg(long, default_value_t = 1)]
        period: u8,
        #[arg(long, default_value_t = 33)]
        points: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

struct CliError {
    class: &'static str,
    code: u8,
    message: String,
}

impl CliError {
    fn new(class: &'static str, code: u8, message: impl Into<String>) -> Self {
        CliError {
            class,
            code,
            message: message.into(),
        }
    }
}

impl From<coman::Error> for CliError {
    fn from(e: coman::Error) -> Self {
        use coman::Error::*;
        let (class, code) = match &e {
            Io { source, .. } if source.kind() == std::io::ErrorKind::NotFound => {
                ("missing_file", 2)
            }
            Io { .. } => ("io_error", 2),
            Schema { .. } | Parse(_) => ("schema_mismatch", 3),
            InfeasibleBudget { .. } => ("infeasible_budget", 4),
            InvalidParam(_) | WidthMismatch { .. } | MalformedGates(_) | NegativeLambda(_) => {
                ("invalid_config", 5)
            }
            _ => ("internal", 1),
        };
        CliError::new(class, code, e.to_string())
    }
}

fn require_file(path: &Path) -> Result<(), CliError> {
    if !path.exists() {
        return Err(CliError::new(
            "missing_file",
            2,
            format!("no such file: {}", path.display()),
        ));
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error_class={} message={:?}", e.class, e.message);
            ExitCode::from(e.code)
        }
    }
}

fn parse_direction(s: &str) -> Result<Direction, CliError> {
    match s {
        "increasing" => Ok(Direction::Increasing),
        "decreasing" => Ok(Direction::Decreasing),
        other => Err(CliError::new(
            "invalid_config",
            5,
            format!("direction must be increasing|decreasing, got {other:?}"),
        )),
    }
}

/// Grid and direction written by `gen` for training without access to the
/// ground-truth world.
#[derive(serde::Serialize, serde::Deserialize)]
struct DatasetMeta {
    treatments: Vec<f64>,
    direction: Direction,
}

fn run(cmd: Cmd) -> Result<(), CliError> {
    match cmd {
        Cmd::Gen {
            seed,
            n_users,
            eval_users,
            direction,
            treatments,
            uniform_cells,
            two_tier,
            out,
        } => {
            let direction = parse_direction(&direction)?;
            let grid: Vec<f64> = treatments
                .split(',')
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|_| {
                        CliError::new(
                            "invalid_config",
                            5,
                            format!("bad treatment value {s:?}"),
                        )
                    })
                })
                .collect::<Result<_, _>>()?;
            let mut manifest = ManifestBuilder::start("gen", seed);
            std::fs::create_dir_all(&out)
                .map_err(|e| coman::Error::io(out.display().to_string(), e))?;
            let config = WorldConfig {
                seed,
                treatments: grid.clone(),
                direction,
                uniform_cells,
                two_tier,
            };
            manifest.config(&serde_json::to_string(&config).unwrap());
            let world = SyntheticWorld::generate(config)?;
            let world_path = out.join("world.json");
            world.save(&world_path)?;
            let train_set = dataset::gen_dataset(&world, n_users, Policy::Biased, seed + 1)?;
            let eval_n = eval_users.unwrap_or_else(|| (n_users / 10).max(1));
            let eval_set = dataset::gen_dataset(&world, eval_n, Policy::Uniform, seed + 2)?;
            let train_path = out.join("train.csv");
            let eval_path = out.join("eval.csv");
            dataset::write_csv(&train_set, &train_path)?;
            dataset::write_csv(&eval_set, &eval_path)?;
            let meta_path = out.join("dataset_meta.json");
            std::fs::write(
                &meta_path,
                serde_json::to_string_pretty(&DatasetMeta {
                    treatments: grid,
                    direction,
                })
                .unwrap()
                    + "\n",
            )
            .map_err(|e| coman::Error::io(meta_path.display().to_string(), e))?;
            manifest.outputs([&world_path, &train_path, &eval_path, &meta_path]);
            manifest.write(&out.join("manifest_gen.json"))?;
            println!(
                "generated world seed={seed} train={} eval={} -> {}",
                train_set.len(),
                eval_set.len(),
                out.display()
            );
            Ok(())
        }
        Cmd::Train {
            model,
            data,
            config,
            seed,
            out,
        } => {
            let kind = ModelKind::from_str(&model)?;
            let train_path = data.join("train.csv");
            let eval_path = data.join("eval.csv");
            let meta_path = data.join("dataset_meta.json");
            require_file(&train_path)?;
            require_file(&meta_path)?;
            let mut cfg = match &config {
                Some(p) => {
                    require_file(p)?;
                    let text = std::fs::read_to_string(p)
                        .map_err(|e| coman::Error::io(p.display().to_string(), e))?;
                    serde_json::from_str::<TrainConfig>(&text).map_err(|e| {
                        CliError::new("invalid_config", 5, format!("bad config: {e}"))
                    })?
                }
                None => TrainConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.validate()?;
            let mut manifest = ManifestBuilder::start("train", cfg.seed);
            manifest.config(&serde_json::to_string(&cfg).unwrap());
            let dmeta: DatasetMeta = serde_json::from_str(
                &std::fs::read_to_string(&meta_path)
                    .map_err(|e| coman::Error::io(meta_path.display().to_string(), e))?,
            )
            .map_err(|e| coman::Error::Schema {
                path: meta_path.display().to_string(),
                detail: e.to_string(),
            })?;
            manifest.inputs([&train_path, &meta_path]);
            let train_set = dataset::read_csv(&train_path, SplitTag::BiasedTrain)?;
            let val_set = if eval_path.exists() {
                Some(dataset::read_csv(&eval_path, SplitTag::UnbiasedEval)?)
            } else {
                None
            };
            let mut meta = FeatureMeta::fit(&train_set.records, dmeta.direction)?;
            meta.treatments = dmeta.treatments;
            let mut model = Model::build(kind, meta, cfg.seed)?;
            let outcome = train(&mut model, &train_set, val_set.as_ref(), &cfg)?;
            std::fs::create_dir_all(&out)
                .map_err(|e| coman::Error::io(out.display().to_string(), e))?;
            let ck_path = out.join("checkpoint.json");
            model.save(&ck_path)?;
            let trace_path = out.join("loss_trace.csv");
            write_trace(&outcome, &trace_path)?;
            manifest.outputs([&ck_path, &trace_path]);
            manifest.write(&out.join("manifest_train.json"))?;
            let last = outcome.trace.last().map(|s| s.mean_loss).unwrap_or(f64::NAN);
            println!(
                "trained {kind} epochs={} final_loss={last} -> {}",
                outcome.trace.len(),
                out.display()
            );
            Ok(())
        }
        Cmd::Eval {
            checkpoint,
            data,
            world,
            uplift_groups,
            out,
        } => {
            require_file(&checkpoint)?;
            require_file(&data)?;
            require_file(&world)?;
            let model = Model::load(&checkpoint)?;
            let mut manifest = ManifestBuilder::start("eval", model.seed());
            manifest.inputs([&checkpoint, &data, &world]);
            let eval_set = dataset::read_csv(&data, SplitTag::UnbiasedEval)?;
            let world = SyntheticWorld::load(&world)?;
            let report = evaluate(&model, &eval_set, &world)?;
            coman::simkit::evalrep::write_report(&report, &out)?;
            let grid = eval_grid(&world);
            let cohorts = uplift_cohorts(&model, &eval_set, &grid, uplift_groups)?;
            let uplift_path = out.join("uplift_cohorts.csv");
            write_cohorts(&cohorts, &uplift_path)?;
            manifest.outputs([
                &out.join("eval_report.json"),
                &out.join("metrics.csv"),
                &out.join("curves.csv"),
                &uplift_path,
            ]);
            manifest.write(&out.join("manifest_eval.json"))?;
            println!(
                "evaluated {} n={} kl={} mae={} -> {}",
                report.model,
                report.overall.n,
                report.overall.kl,
                report.overall.mae,
                out.display()
            );
            Ok(())
        }
        Cmd::Allocate {
            scores,
            checkpoint,
            data,
            budget,
            tol,
            out,
        } => {
            let problem = match (&scores, &checkpoint) {
                (Some(path), None) => {
                    require_file(path)?;
                    allocator::problem_from_csv(path, budget)?
                }
                (None, Some(ck)) => {
                    require_file(ck)?;
                    let data = data.as_ref().expect("clap enforces --data");
                    require_file(data)?;
                    let model = Model::load(ck)?;
                    let records = dataset::read_csv(data, SplitTag::UnbiasedEval)?.records;
                    scores_from_model(&model, &records, budget)?
                }
                _ => {
                    return Err(CliError::new(
                        "invalid_config",
                        5,
                        "provide exactly one of --scores or --checkpoint",
                    ))
                }
            };
            let mut manifest = ManifestBuilder::start("allocate", 0);
            manifest.config(&format!("budget={budget} tol={tol}"));
            if let Some(p) = &scores {
                manifest.inputs([p]);
            }
            if let Some(p) = &checkpoint {
                manifest.inputs([p]);
            }
            if let Some(p) = &data {
                manifest.inputs([p]);
            }
            let plan = allocator::allocate_with(&problem, tol, 200)?;
            std::fs::create_dir_all(&out)
                .map_err(|e| coman::Error::io(out.display().to_string(), e))?;
            let plan_path = out.join("plan.csv");
            let summary_path = out.join("summary.json");
            allocator::write_plan(&problem, &plan, &plan_path, &summary_path)?;
            manifest.outputs([&plan_path, &summary_path]);
            manifest.write(&out.join("manifest_allocate.json"))?;
            println!(
                "allocated users={} objective={} ratio={} lambda={} -> {}",
                problem.n_users(),
                plan.objective,
                plan.budget_ratio,
                plan.lambda_star,
                out.display()
            );
            Ok(())
        }
        Cmd::Curves {
            checkpoint,
            city,
            period,
            points,
            out,
        } => {
            require_file(&checkpoint)?;
            if points < 2 {
                return Err(CliError::new("invalid_config", 5, "need at least 2 points"));
            }
            let model = Model::load(&checkpoint)?;
            let mut manifest = ManifestBuilder::start("curves", model.seed());
            manifest.inputs([&checkpoint]);
            let (lo, hi) = model.meta().span();
            let record = SimRecord {
                user_id: 0,
                city,
                period,
                weekday: 0,
                holiday: 0,
                district: 0,
                aoi: 0,
                aff0: city as f64,
                aff1: period as f64,
                behavior: [0, 1, 2],
                query: 0,
                treatment: lo,
                label: 0,
                value: 0.0,
            };
            use std::io::Write;
            if let Some(parent) = out.parent() {
                if !parent.as_os_str().is_empty() {
                    std::fs::create_dir_all(parent)
                        .map_err(|e| coman::Error::io(parent.display().to_string(), e))?;
                }
            }
            let mut f = std::fs::File::create(&out)
                .map_err(|e| coman::Error::io(out.display().to_string(), e))?;
            writeln!(f, "treatment,predicted")
                .map_err(|e| coman::Error::io(out.display().to_string(), e))?;
            for k in 0..points {
                let t = lo + (hi - lo) * k as f64 / (points - 1) as f64;
                let p = model.predict_at(std::slice::from_ref(&record), t)?[0];
                writeln!(f, "{t},{p}")
                    .map_err(|e| coman::Error::io(out.display().to_string(), e))?;
            }
            manifest.outputs([&out]);
            let manifest_path = out.with_extension("manifest.json");
            manifest.write(&manifest_path)?;
            println!("curve city={city} period={period} -> {}", out.display());
            Ok(())
        }
    }
}

/// Score every record at every grid treatment to build an allocation
/// problem from a trained model.
fn scores_from_model(
    model: &Model,
    records: &[SimRecord],
    budget: f64,
) -> Result<AllocationProblem, CliError> {
    let grid = model.meta().treatments.clone();
    let mut responses = vec![0.0f64; records.len() * grid.len()];
    for (j, &t) in grid.iter().enumerate() {
        let preds = model.predict_at(records, t)?;
        for (i, p) in preds.into_iter().enumerate() {
            responses[i * grid.len() + j] = p.clamp(0.0, 1.0);
        }
    }
    let ids = records.iter().map(|r| r.user_id.to_string()).collect();
    Ok(AllocationProblem::new(ids, grid, responses, budget)?)
}
