//! Command-line pipeline: collect -> train-model -> (train-teacher) ->
//! run -> eval, plus a Pareto-front export. Every output directory carries
//! the exact config and seed that produced it.

use clap::{Parser, Subcommand};
use gprl::config::{ExperimentConfig, Mode};
use gprl::envs::{env_by_name, Env};
use gprl::error::{Error, Result};
use gprl::expr::{format_policy, parse_tree, Policy};
use gprl::genetics::{run_gprl, ParetoArchive, ProblemSpec, ScoredIndividual};
use gprl::rl::{
    evaluate_real, fitness, make_imitation_dataset, regression_fitness, sampled_starts,
    train_teacher, RolloutConfig, TeacherPolicy,
};
use gprl::worldmodel::{build_world_model, collect_transitions, TransitionDataset, WorldModel};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(name = "gprl", version, about = "Interpretable policies by genetic programming on learned world models")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Collect a transition dataset from the real dynamics.
    Collect {
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 10_000)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the world model (per-variable delta regressors + reward).
    TrainModel {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 500)]
        epochs: usize,
    },
    /// Train the neural teacher policy on a world model.
    TrainTeacher {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 200)]
        epochs: usize,
        #[arg(long, default_value_t = 30)]
        starts: usize,
    },
    /// Evolve policies against the world model (gprl) or against teacher
    /// actions (regress); writes archive CSV, policy files, and a manifest.
    Run {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, value_parser = ["gprl", "regress"])]
        mode: Option<String>,
        #[arg(long, value_parser = ["full", "desk"], default_value = "desk")]
        profile: String,
        /// JSON config overriding the profile entirely.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Teacher file for regress mode; trained on the fly when absent.
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate run archives on the real dynamics and write the squashed
    /// Pareto front (median/min/max penalty per complexity).
    Eval {
        #[arg(long)]
        env: String,
        #[arg(long, default_value_t = 1_000_000)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        starts: usize,
        #[arg(long)]
        out: PathBuf,
        /// Run directories produced by `gprl run`.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Export the non-dominated front of one run, evaluated on the real
    /// dynamics.
    ParetoExport {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = 1_000_000)]
        seed: u64,
        #[arg(long, default_value_t = 100)]
        starts: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    schema_version: u32,
    env: String,
    mode: Mode,
    seed: u64,
    config: ExperimentConfig,
    generations_run: usize,
    stopped_early: bool,
    wall_secs: f64,
}

fn state_names(env: &str) -> Vec<&'static str> {
    match env {
        "mc" => vec!["rho", "rho_dot"],
        "cpb" => vec!["theta", "theta_dot", "rho", "rho_dot"],
        _ => vec![],
    }
}

fn problem_for(env: &dyn Env) -> ProblemSpec {
    ProblemSpec {
        state_dim: env.state_dim(),
        action_dim: env.action_dim(),
        action_low: env.action_low(),
        action_high: env.action_high(),
    }
}

// Fixed offsets deriving independent sub-seeds from the run seed.
const SEED_STARTS: u64 = 0x0001;
const SEED_TEACHER: u64 = 0x0002;
const SEED_IMITATION: u64 = 0x0003;

fn cmd_collect(env_name: &str, count: usize, seed: u64, out: &Path) -> Result<()> {
    let env = env_by_name(env_name)?;
    let dataset = collect_transitions(env.as_ref(), count, seed)?;
    dataset.save(out)?;
    println!("wrote {} transitions to {}", count, out.display());
    Ok(())
}

fn cmd_train_model(dataset: &Path, seed: u64, out: &Path, epochs: usize) -> Result<()> {
    let data = TransitionDataset::load(dataset)?;
    let mut cfg = gprl::worldmodel::TrainConfig::default();
    cfg.seed = seed;
    cfg.epochs = epochs;
    let (model, report) = build_world_model(&data, &cfg)?;
    model.save(out)?;
    let report_path = out.with_extension("report.json");
    std::fs::write(
        &report_path,
        serde_json::to_string_pretty(&report).expect("report serializes"),
    )
    .map_err(|e| Error::io(&report_path, e))?;
    for (i, rep) in report.delta_models.iter().enumerate() {
        println!(
            "delta model {i}: generalization MSE {:.3e}, R^2 {:.4}",
            rep.generalization_mse, rep.generalization_r2
        );
    }
    println!(
        "reward model: generalization MSE {:.3e}",
        report.reward_model.generalization_mse
    );
    println!("wrote {}", out.display());
    Ok(())
}

fn rollout_for(
    env: &dyn Env,
    horizon: usize,
    q: f64,
    n_starts: usize,
    seed: u64,
) -> Result<RolloutConfig> {
    RolloutConfig::new(
        horizon,
        q,
        sampled_starts(env, n_starts, seed),
        env.action_low(),
        env.action_high(),
    )
}

fn load_model_for_env(path: &Path) -> Result<(WorldModel, Box<dyn Env>)> {
    let model = WorldModel::load(path)?;
    let env = env_by_name(&model.provenance.env)?;
    Ok((model, env))
}

fn cmd_train_teacher(
    model_path: &Path,
    seed: u64,
    out: &Path,
    epochs: usize,
    starts: usize,
) -> Result<()> {
    let (model, env) = load_model_for_env(model_path)?;
    let (horizon, q) = match env.name() {
        "mc" => (200, 0.05),
        _ => (100, 0.05),
    };
    let rollout = rollout_for(
        env.as_ref(),
        horizon,
        q,
        starts,
        seed.wrapping_add(SEED_TEACHER),
    )?;
    let mut cfg = gprl::rl::TeacherConfig::default();
    cfg.seed = seed;
    cfg.epochs = epochs;
    let (teacher, model_fitness) = train_teacher(&model, &rollout, &cfg)?;
    teacher.save(out)?;
    let real_penalty = -fitness(env.as_ref(), &teacher, &rollout);
    println!(
        "teacher model penalty {:.3}, real penalty {:.3}; wrote {}",
        -model_fitness,
        real_penalty,
        out.display()
    );
    Ok(())
}

fn write_archive_csv(path: &Path, archive: &ParetoArchive, action_dim: usize) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
    let mut header = vec!["complexity".to_string(), "fitness".to_string()];
    header.extend((0..action_dim).map(|i| format!("expr_{i}")));
    w.write_record(&header).map_err(|e| Error::Data(e.to_string()))?;
    for (&c, ind) in archive.slots() {
        let mut rec = vec![c.to_string(), format!("{:e}", ind.fitness)];
        rec.extend(ind.policy.trees.iter().map(gprl::expr::format_tree));
        w.write_record(&rec).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn read_archive_csv(path: &Path, env: &dyn Env) -> Result<ParetoArchive> {
    let mut r = csv::Reader::from_path(path)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let mut archive = ParetoArchive::new();
    for record in r.records() {
        let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let complexity: u32 = record[0]
            .parse()
            .map_err(|e| Error::Data(format!("{}: bad complexity: {e}", path.display())))?;
        let fitness: f64 = record[1]
            .parse()
            .map_err(|e| Error::Data(format!("{}: bad fitness: {e}", path.display())))?;
        let trees = record
            .iter()
            .skip(2)
            .map(parse_tree)
            .collect::<Result<Vec<_>>>()?;
        let policy = Policy::new(trees, env.action_low(), env.action_high());
        archive.insert(&ScoredIndividual {
            policy,
            fitness,
            complexity,
        });
    }
    Ok(archive)
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    model_path: &Path,
    mode: Option<&str>,
    profile: &str,
    config: Option<&Path>,
    teacher_path: Option<&Path>,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let (model, env) = load_model_for_env(model_path)?;
    let mode = mode.map(|m| match m {
        "regress" => Mode::Regress,
        _ => Mode::Gprl,
    });
    let mut cfg = match config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::profile(profile, env.name())?
            .with_mode(mode.unwrap_or(Mode::Gprl), profile),
    };
    // An explicit --mode overrides the config file's mode too.
    if let Some(m) = mode {
        cfg.mode = m;
    }
    cfg.seed = seed;
    cfg.ga.seed = seed;
    if cfg.env != env.name() {
        return Err(Error::Usage(format!(
            "config is for env {:?} but the model was trained on {:?}",
            cfg.env,
            env.name()
        )));
    }

    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let problem = problem_for(env.as_ref());
    let rollout = rollout_for(
        env.as_ref(),
        cfg.horizon,
        cfg.q,
        cfg.train_starts,
        seed.wrapping_add(SEED_STARTS),
    )?;

    let started = Instant::now();
    let (archive, stats) = match cfg.mode {
        Mode::Gprl => {
            let fit = |p: &Policy| fitness(&model, p, &rollout);
            run_gprl(&cfg.ga, &problem, &fit)
        }
        Mode::Regress => {
            let teacher = match teacher_path {
                Some(path) => TeacherPolicy::load(path)?,
                None => {
                    let mut tc = cfg.teacher.clone();
                    tc.seed = seed.wrapping_add(SEED_TEACHER);
                    let (t, f) = train_teacher(&model, &rollout, &tc)?;
                    println!("trained teacher, model penalty {:.3}", -f);
                    let path = out.join("teacher.json");
                    t.save(&path)?;
                    t
                }
            };
            let imitation_starts = sampled_starts(
                env.as_ref(),
                cfg.imitation_starts,
                seed.wrapping_add(SEED_IMITATION),
            );
            let data = make_imitation_dataset(&teacher, &model, &imitation_starts, cfg.horizon);
            let fit = |p: &Policy| regression_fitness(p, &data);
            run_gprl(&cfg.ga, &problem, &fit)
        }
    };
    let wall_secs = started.elapsed().as_secs_f64();

    write_archive_csv(&out.join("archive.csv"), &archive, problem.action_dim)?;
    let names = state_names(env.name());
    let policy_dir = out.join("policies");
    std::fs::create_dir_all(&policy_dir).map_err(|e| Error::io(&policy_dir, e))?;
    for (&c, ind) in archive.slots() {
        let path = policy_dir.join(format!("complexity_{c:03}.txt"));
        std::fs::write(&path, format_policy(&ind.policy, &names)).map_err(|e| Error::io(&path, e))?;
    }
    let manifest = Manifest {
        schema_version: 1,
        env: env.name().to_string(),
        mode: cfg.mode,
        seed,
        config: cfg.clone(),
        generations_run: stats.generations_run,
        stopped_early: stats.stopped_early,
        wall_secs,
    };
    let manifest_path = out.join("manifest.json");
    std::fs::write(
        &manifest_path,
        serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
    )
    .map_err(|e| Error::io(&manifest_path, e))?;
    println!(
        "{} generations in {:.1}s; archive has {} complexity levels; wrote {}",
        stats.generations_run,
        wall_secs,
        archive.len(),
        out.display()
    );
    Ok(())
}

fn load_run(dir: &Path, want_env: &str) -> Result<(ParetoArchive, Manifest, Box<dyn Env>)> {
    let manifest_path = dir.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: bad manifest: {e}", manifest_path.display())))?;
    if manifest.env != want_env {
        return Err(Error::Usage(format!(
            "{}: run is for env {:?}, not {:?}",
            dir.display(),
            manifest.env,
            want_env
        )));
    }
    let env = env_by_name(&manifest.env)?;
    let archive = read_archive_csv(&dir.join("archive.csv"), env.as_ref())?;
    Ok((archive, manifest, env))
}

fn cmd_eval(env_name: &str, seed: u64, starts: usize, out: &Path, runs: &[PathBuf]) -> Result<()> {
    let env = env_by_name(env_name)?;
    let mut archives = Vec::new();
    let mut horizon = 0;
    let mut q = 0.05;
    for dir in runs {
        let (archive, manifest, _) = load_run(dir, env_name)?;
        horizon = manifest.config.horizon;
        q = manifest.config.q;
        archives.push(archive);
    }
    let rollout = rollout_for(env.as_ref(), horizon, q, starts, seed)?;
    let rows = gprl::genetics::squash_fronts(&archives, |p| -fitness(env.as_ref(), p, &rollout));
    let mut w = csv::Writer::from_path(out).map_err(|e| Error::Data(e.to_string()))?;
    w.write_record(["complexity", "median", "min", "max", "runs"])
        .map_err(|e| Error::Data(e.to_string()))?;
    for row in &rows {
        w.write_record([
            row.complexity.to_string(),
            format!("{:e}", row.median),
            format!("{:e}", row.min),
            format!("{:e}", row.max),
            row.runs.to_string(),
        ])
        .map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    println!("squashed {} runs into {}", runs.len(), out.display());
    Ok(())
}

fn cmd_pareto_export(run: &Path, seed: u64, starts: usize, out: &Path) -> Result<()> {
    let manifest_path = run.join("manifest.json");
    let text = std::fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: bad manifest: {e}", manifest_path.display())))?;
    let env = env_by_name(&manifest.env)?;
    let archive = read_archive_csv(&run.join("archive.csv"), env.as_ref())?;
    let rollout = rollout_for(env.as_ref(), manifest.config.horizon, manifest.config.q, starts, seed)?;
    let rows = evaluate_real(&archive, env.as_ref(), &rollout);

    let mut w = csv::Writer::from_path(out).map_err(|e| Error::Data(e.to_string()))?;
    let mut header = vec![
        "complexity".to_string(),
        "model_penalty".to_string(),
        "real_penalty".to_string(),
    ];
    header.extend((0..env.action_dim()).map(|i| format!("expr_{i}")));
    w.write_record(&header).map_err(|e| Error::Data(e.to_string()))?;
    for row in &rows {
        let mut rec = vec![
            row.complexity.to_string(),
            format!("{:e}", row.model_penalty),
            format!("{:e}", row.real_penalty),
        ];
        rec.extend(row.expressions.iter().cloned());
        w.write_record(&rec).map_err(|e| Error::Data(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(out, e))?;
    println!("exported {} front members to {}", rows.len(), out.display());
    Ok(())
}

fn real_main(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Collect {
            env,
            count,
            seed,
            out,
        } => cmd_collect(&env, count, seed, &out),
        Cmd::TrainModel {
            dataset,
            seed,
            out,
            epochs,
        } => cmd_train_model(&dataset, seed, &out, epochs),
        Cmd::TrainTeacher {
            model,
            seed,
            out,
            epochs,
            starts,
        } => cmd_train_teacher(&model, seed, &out, epochs, starts),
        Cmd::Run {
            model,
            mode,
            profile,
            config,
            teacher,
            seed,
            out,
        } => cmd_run(
            &model,
            mode.as_deref(),
            &profile,
            config.as_deref(),
            teacher.as_deref(),
            seed,
            &out,
        ),
        Cmd::Eval {
            env,
            seed,
            starts,
            out,
            runs,
        } => cmd_eval(&env, seed, starts, &out, &runs),
        Cmd::ParetoExport {
            run,
            seed,
            starts,
            out,
        } => cmd_pareto_export(&run, seed, starts, &out),
    }
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = real_main(cli) {
        eprintln!("error: {e}");
        let code = match e {
            Error::Usage(_) => 2,
            _ => 3,
        };
        std::process::exit(code);
    }
}
