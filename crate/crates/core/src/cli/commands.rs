use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::checkpoint::Checkpoint;
use super::config::{FamilySetup, RunConfig};
use super::CliError;
use crate::adaptation::{adapt, AdaptationKind};
use crate::blackbox::{Evaluator, QueryLedger, TaskObjective};
use crate::meta::{train, MetaIterationReport, TrainOutcome, TrainState};
use crate::parallel::Executor;
use crate::policies::RunningNormalizer;
use crate::seed::{self, tag};
use crate::tasks::{write_trace_csv, FamilyName, RolloutOptions, TaskStream};

pub const CSV_HEADER: &str = "iteration,meta_score_mean,meta_score_std,unadapted_mean,adaptation_gap,rollouts_cumulative,wallclock_s";
pub const EVAL_CSV_HEADER: &str = "trial,task,task_id,adapted_reward,unadapted_reward,queries_used";

#[derive(Debug, Clone, Default)]
pub struct TrainArgs {
    pub config: PathBuf,
    pub set: Vec<String>,
    pub seed: Option<u64>,
    pub workers: Option<usize>,
    pub out: Option<PathBuf>,
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    pub family: String,
    pub k: usize,
    pub trials: usize,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

pub fn csv_row(r: &MetaIterationReport) -> String {
    format!(
        "{},{},{},{},{},{},{}",
        r.iteration, r.meta_score_mean, r.meta_score_std, r.unadapted_mean, r.adaptation_gap, r.rollouts_cumulative, r.wallclock_s
    )
}

/// Opens `train.csv` for appending. A fresh run starts from the header; a
/// resumed run keeps the rows up to the resume point.
fn open_train_csv(path: &Path, resume_from: Option<usize>) -> Result<BufWriter<File>, CliError> {
    let mut kept = vec![CSV_HEADER.to_string()];
    if let (Some(done), Ok(existing)) = (resume_from, fs::read_to_string(path)) {
        kept.extend(
            existing
                .lines()
                .skip(1)
                .filter(|l| l.split(',').next().and_then(|i| i.parse::<usize>().ok()).is_some_and(|i| i <= done))
                .map(str::to_string),
        );
    }
    fs::write(path, kept.join("\n") + "\n").map_err(io_err(path))?;
    let file = OpenOptions::new().append(true).open(path).map_err(io_err(path))?;
    Ok(BufWriter::new(file))
}

/// Runs meta-training. Every report row is flushed as soon as it exists.
pub fn cmd_train(args: &TrainArgs) -> Result<TrainOutcome, CliError> {
    let mut cfg = RunConfig::load(&args.config, &args.set)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    if let Some(w) = args.workers {
        cfg.workers = w;
    }
    if let Some(out) = &args.out {
        cfg.output_dir = out.clone();
    }
    let setup = cfg.build()?;
    let spec = setup.policy();
    let dist = setup.distribution();

    let state = match &args.resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            if ck.family != cfg.family || ck.policy != spec {
                return Err(CliError::Usage(format!(
                    "checkpoint {} was written for {} with a different policy than the configured {}",
                    path.display(),
                    ck.family,
                    cfg.family
                )));
            }
            if ck.iteration > cfg.meta.iterations {
                return Err(CliError::Usage(format!(
                    "checkpoint is at iteration {} but the run stops at {}",
                    ck.iteration, cfg.meta.iterations
                )));
            }
            ck.state()
        }
        None => TrainState::initial(spec.initial_params(cfg.seed), dist),
    };

    let out = cfg.output_dir.clone();
    fs::create_dir_all(&out).map_err(io_err(&out))?;
    let resolved = out.join("config.resolved");
    fs::write(&resolved, cfg.to_resolved_string()).map_err(io_err(&resolved))?;
    let csv_path = out.join("train.csv");
    let mut csv = open_train_csv(&csv_path, args.resume.as_ref().map(|_| state.iteration))?;
    csv.flush().map_err(io_err(&csv_path))?;
    let ckpt_dir = out.join("checkpoints");

    let exec = Executor::new(cfg.workers).map_err(|e| CliError::Usage(e.to_string()))?;
    let mut last_saved = None;
    let mut sink_error = None;
    let result = train(state, dist, &cfg.meta, &cfg.adapt, cfg.seed, &exec, |report, st| {
        let write = writeln!(csv, "{}", csv_row(report)).and_then(|_| csv.flush());
        if let Err(e) = write {
            sink_error = Some(io_err(&csv_path)(e));
            return Err(crate::Error::invalid("report sink failed"));
        }
        let every = cfg.checkpoint_every;
        if every == 0 || st.iteration % every == 0 {
            match Checkpoint::new(&cfg, spec, st).save(&ckpt_dir) {
                Ok(_) => last_saved = Some(st.iteration),
                Err(e) => {
                    sink_error = Some(e);
                    return Err(crate::Error::invalid("checkpoint write failed"));
                }
            }
        }
        Ok(())
    });
    let outcome = match (result, sink_error) {
        (_, Some(e)) => return Err(e),
        (Err(e), None) => return Err(CliError::Runtime(format!("training failed: {e}"))),
        (Ok(o), None) => o,
    };
    if last_saved != Some(outcome.state.iteration) {
        Checkpoint::new(&cfg, spec, &outcome.state).save(&ckpt_dir)?;
    }
    Ok(outcome)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub trial: usize,
    pub task: usize,
    pub task_id: String,
    pub adapted_reward: f64,
    pub unadapted_reward: f64,
    pub queries_used: usize,
}

fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '.' { c } else { '_' })
        .collect::<String>()
        .trim_matches('_')
        .to_string()
}

/// Adapts a checkpointed meta-policy to held-out tasks with budget `K`.
///
/// Each trial draws one task set; finite families use their whole universe.
/// Writes `eval.csv` and, for rollout families, one trace of the adapted
/// policy per task under `traces/`.
pub fn cmd_eval(args: &EvalArgs) -> Result<Vec<EvalRow>, CliError> {
    if args.k == 0 {
        return Err(CliError::Usage("K must be >= 1".into()));
    }
    if args.trials == 0 {
        return Err(CliError::Usage("trials must be >= 1".into()));
    }
    let family: FamilyName = args.family.parse().map_err(|e: crate::Error| CliError::Usage(e.to_string()))?;
    let ck = Checkpoint::load(&args.checkpoint)?;
    if ck.family != family {
        return Err(CliError::Usage(format!(
            "checkpoint {} holds a {} policy, not {}",
            args.checkpoint.display(),
            ck.family,
            family
        )));
    }
    let mut cfg = ck.config.clone();
    cfg.adapt.queries = args.k;
    if cfg.adapt.kind == AdaptationKind::ExactGradientStep {
        cfg.adapt.steps = cfg.adapt.steps.min(args.k);
    }
    let setup = cfg.build()?;
    if setup.policy() != ck.policy {
        return Err(CliError::Usage("checkpoint policy does not match its family configuration".into()));
    }
    let seed = args.seed.unwrap_or(ck.seed);
    let normalizer: Option<Arc<RunningNormalizer>> = ck.normalizer.clone().map(Arc::new);
    let theta = ck.params.clone();
    let exec = Executor::new(cfg.workers.max(1)).map_err(|e| CliError::Usage(e.to_string()))?;
    let ledger = QueryLedger::new();
    let inner = Evaluator::new(&ledger, Executor::sequential_ref());

    let out = &args.out;
    let traces = out.join("traces");
    fs::create_dir_all(&traces).map_err(io_err(&traces))?;
    let count = setup.distribution().universe_size().unwrap_or(cfg.meta.test_task_count);

    let mut rows = Vec::new();
    for trial in 0..args.trials {
        let trial_seed = seed::derive(seed, tag::EVAL, trial as u64);
        let adapt_seed = |j: usize| seed::derive(trial_seed, tag::ADAPT, j as u64);
        let trial_rows: Vec<EvalRow> = match &setup {
            FamilySetup::Env(fam) => {
                let instances = fam.sample_instances(TaskStream::Test, count, trial_seed);
                exec.map(&instances, |j, inst| {
                    let obj = fam.objective(inst.params, normalizer.clone());
                    let r = adapt(&obj, &theta, &cfg.adapt, adapt_seed(j), inner)?;
                    let ep = obj.run(&r.adapted, RolloutOptions { trace: true, collect_observations: false })?;
                    ledger.record(1, obj.query_cost());
                    let unadapted = inner.evaluate(&obj, &theta)?;
                    let name = format!("trial{trial:03}_task{j:02}_{}.csv", sanitize(&inst.params.label()));
                    let path = traces.join(name);
                    let file = File::create(&path).map_err(|e| crate::Error::invalid(format!("{}: {e}", path.display())))?;
                    write_trace_csv(BufWriter::new(file), ep.trace.as_deref().unwrap_or(&[]), fam.kind.has_velocity())
                        .map_err(|e| crate::Error::invalid(format!("{}: {e}", path.display())))?;
                    Ok(EvalRow {
                        trial,
                        task: j,
                        task_id: obj.task_id().to_string(),
                        adapted_reward: ep.total_reward,
                        unadapted_reward: unadapted,
                        queries_used: r.queries_used,
                    })
                })?
            }
            FamilySetup::Sine(fam) => {
                let tasks = fam.sample(TaskStream::Test, count, trial_seed);
                exec.map(&tasks, |j, task| {
                    let r = adapt(task, &theta, &cfg.adapt, adapt_seed(j), inner)?;
                    Ok(EvalRow {
                        trial,
                        task: j,
                        task_id: task.task_id().to_string(),
                        adapted_reward: inner.evaluate(task, &r.adapted)?,
                        unadapted_reward: inner.evaluate(task, &theta)?,
                        queries_used: r.queries_used,
                    })
                })?
            }
        };
        rows.extend(trial_rows);
    }

    let path = out.join("eval.csv");
    let mut w = BufWriter::new(File::create(&path).map_err(io_err(&path))?);
    let mut write = || -> std::io::Result<()> {
        writeln!(w, "{EVAL_CSV_HEADER}")?;
        for r in &rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.trial,
                r.task,
                r.task_id.replace(',', ";"),
                r.adapted_reward,
                r.unadapted_reward,
                r.queries_used
            )?;
        }
        w.flush()
    };
    write().map_err(io_err(&path))?;
    Ok(rows)
}
