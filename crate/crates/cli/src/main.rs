use std::collections::VecDeque;
use std::fs::File;
use std::path::PathBuf;
use std::process::{Child, Command, ExitCode, Stdio};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use multiexplore::env::Task;
use multiexplore::experiment::{
    plot_data, summarize, ExperimentSpec, PlannedRun, PlotKind, RewardMode, EVAL_FILE,
};
use multiexplore::trainer::{evaluate, HeadChoice, LoadedRun, RunConfig, Trainer};

const OUT_ENV: &str = "MULTIEXPLORE_OUT";

#[derive(Parser)]
#[command(
    name = "multiexplore",
    version,
    about = "Coordinated multi-agent exploration experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one run and write its metrics, visit counts and checkpoint.
    Train(TrainArgs),
    /// Roll out a checkpoint with greedy actions.
    Eval(EvalArgs),
    /// Train every mode by seed cell of an experiment file, then summarize.
    Sweep(SweepArgs),
    /// Write plot-ready CSV files for a finished run.
    PlotData(PlotArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Ablation {
    UniformSelector,
    NoEntropy,
    AllIndependent,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML run configuration; unset keys take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from the short small-map configuration.
    #[arg(long, conflicts_with = "config")]
    smoke: bool,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory. Defaults to `$MULTIEXPLORE_OUT/<mode>-seed<k>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// independent, minimum, covering, burrowing, leader_follower, centralized or multi.
    #[arg(long, value_parser = parse_mode)]
    reward: Option<RewardMode>,
    #[arg(long, value_enum)]
    ablation: Option<Ablation>,
    /// Task number, 1 to 3.
    #[arg(long, value_parser = clap::value_parser!(u8).range(1..=3))]
    task: Option<u8>,
    #[arg(long)]
    agents: Option<usize>,
    /// Total environment steps.
    #[arg(long)]
    steps: Option<u64>,
    /// Greedy evaluation episodes after training, written to eval.json.
    #[arg(long, default_value_t = 0)]
    eval_episodes: usize,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 20)]
    episodes: usize,
    /// greedy, uniform or a head index.
    #[arg(long, default_value = "greedy", value_parser = parse_head)]
    head: HeadChoice,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Configuration the checkpoint must agree with.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the report here as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// Experiment TOML: name, modes, seeds, eval_episodes and a [base] run table.
    #[arg(long)]
    spec: PathBuf,
    /// Output root. Defaults to `$MULTIEXPLORE_OUT`, then `runs`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Concurrent child processes.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    /// Keep runs that already finished.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct PlotArgs {
    /// A run directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    /// curve, heatmap, selector or all.
    #[arg(long, default_value = "all")]
    kind: String,
}

fn parse_mode(s: &str) -> Result<RewardMode, String> {
    s.parse().map_err(|e: multiexplore::Error| e.to_string())
}

fn parse_head(s: &str) -> Result<HeadChoice, String> {
    s.parse().map_err(|e: multiexplore::Error| e.to_string())
}

fn out_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"))
}

fn build_config(args: &TrainArgs) -> Result<RunConfig> {
    let mut config = match (&args.config, args.smoke) {
        (Some(path), _) => RunConfig::load(path)
            .with_context(|| format!("loading run configuration {}", path.display()))?,
        (None, true) => RunConfig::smoke(),
        (None, false) => RunConfig::default(),
    };
    if let Some(mode) = args.reward {
        let ablation = config.ablation;
        mode.apply(&mut config);
        // A config file's ablations survive a plain `--reward multi`.
        if mode == RewardMode::Multi {
            config.ablation = ablation;
        }
    }
    if let Some(a) = args.ablation {
        if config.heads.len() < 2 {
            bail!("--ablation needs several heads; combine it with --reward multi");
        }
        match a {
            Ablation::UniformSelector => config.ablation.uniform_selector = true,
            Ablation::NoEntropy => config.ablation.no_entropy = true,
            Ablation::AllIndependent => config.ablation.all_independent_heads = true,
        }
    }
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(t) = args.task {
        config.env.task = [Task::Task1, Task::Task2, Task::Task3][t as usize - 1];
        config.env.wormhole_mu = None;
        config.env.wormhole_sigma = None;
    }
    if let Some(n) = args.agents {
        config.env.n_agents = n;
    }
    if let Some(steps) = args.steps {
        config.total_steps = steps;
    }
    let config = config.resolved();
    config.validate()?;
    Ok(config)
}

fn mode_label(config: &RunConfig) -> String {
    if config.heads.len() == 1 {
        return config.heads[0].name().to_string();
    }
    let a = &config.ablation;
    if a.uniform_selector {
        "uniform_selector".into()
    } else if a.no_entropy {
        "no_entropy".into()
    } else if a.all_independent_heads {
        "all_independent".into()
    } else {
        "multi".into()
    }
}

fn train(args: TrainArgs) -> Result<()> {
    let config = build_config(&args)?;
    let dir = args.out.clone().unwrap_or_else(|| {
        out_root(None).join(format!("{}-seed{}", mode_label(&config), config.seed))
    });
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    println!("# run directory: {}", dir.display());
    println!("# resolved configuration");
    print!("{}", config.to_toml_string()?);

    let summary = Trainer::new(&config, Some(&dir))?.run()?;
    println!(
        "# finished: {} steps, {} episodes, final mean treasures {}",
        summary.env_steps,
        summary.episodes,
        summary
            .running_mean_treasures
            .map_or_else(|| "n/a".into(), |v| format!("{v:.3}"))
    );
    if args.eval_episodes > 0 {
        let run = LoadedRun::from_checkpoint(dir.join("checkpoint.mxa"), None)?;
        let report = run.evaluate(HeadChoice::Greedy, args.eval_episodes, config.seed)?;
        let path = dir.join(EVAL_FILE);
        std::fs::write(&path, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", path.display()))?;
        println!(
            "# greedy eval: {:.3} ± {:.3} treasures, success {:.2}",
            report.mean_treasures, report.std_treasures, report.success_rate
        );
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let expected = match &args.config {
        Some(p) => Some(
            RunConfig::load(p)
                .with_context(|| format!("loading run configuration {}", p.display()))?,
        ),
        None => None,
    };
    let report = evaluate(
        &args.checkpoint,
        args.episodes,
        args.head,
        args.seed,
        expected.as_ref(),
    )
    .with_context(|| format!("evaluating {}", args.checkpoint.display()))?;
    let json = serde_json::to_string_pretty(&report)?;
    if let Some(path) = &args.out {
        std::fs::write(path, &json).with_context(|| format!("writing {}", path.display()))?;
    }
    println!("{json}");
    Ok(())
}

fn spawn_run(run: &PlannedRun, eval_episodes: usize) -> Result<Child> {
    std::fs::create_dir_all(&run.dir).with_context(|| format!("creating {}", run.dir.display()))?;
    let requested = run.dir.join("requested.toml");
    std::fs::write(&requested, run.config.to_toml_string()?)
        .with_context(|| format!("writing {}", requested.display()))?;
    let log = run.dir.join("log.txt");
    let stdout = File::create(&log).with_context(|| format!("creating {}", log.display()))?;
    let stderr = stdout.try_clone()?;
    let exe = std::env::current_exe().context("locating the multiexplore executable")?;
    Command::new(exe)
        .arg("train")
        .arg("--config")
        .arg(&requested)
        .arg("--out")
        .arg(&run.dir)
        .arg("--eval-episodes")
        .arg(eval_episodes.to_string())
        .stdout(Stdio::from(stdout))
        .stderr(Stdio::from(stderr))
        .spawn()
        .context("spawning a training process")
}

fn sweep(args: SweepArgs) -> Result<()> {
    let spec = ExperimentSpec::load(&args.spec)
        .with_context(|| format!("loading experiment {}", args.spec.display()))?;
    spec.validate()
        .with_context(|| format!("experiment {}", args.spec.display()))?;
    let root = out_root(args.out);
    let plan = spec.plan(&root);
    println!(
        "# sweep `{}`: {} runs under {}",
        spec.name,
        plan.len(),
        root.join(&spec.name).display()
    );

    let mut queue: VecDeque<&PlannedRun> = plan
        .iter()
        .filter(|r| !(args.resume && r.dir.join("summary.json").exists()))
        .collect();
    let mut running: Vec<(&PlannedRun, Child)> = Vec::new();
    let jobs = args.jobs.max(1);
    while !queue.is_empty() || !running.is_empty() {
        while running.len() < jobs {
            let Some(run) = queue.pop_front() else { break };
            match spawn_run(run, spec.eval_episodes) {
                Ok(child) => running.push((run, child)),
                Err(e) => eprintln!("{}/seed{}: {e:#}", run.mode, run.seed),
            }
        }
        let (run, mut child) = running.remove(0);
        let status = child.wait()?;
        if status.success() {
            println!("{}/seed{}: done", run.mode, run.seed);
        } else {
            eprintln!(
                "{}/seed{}: failed ({status}); see {}",
                run.mode,
                run.seed,
                run.dir.join("log.txt").display()
            );
        }
    }

    let summary = summarize(&spec, &root)?;
    let base = root.join(&spec.name);
    std::fs::create_dir_all(&base).with_context(|| format!("creating {}", base.display()))?;
    summary.write_csv(&base.join("summary.csv"))?;
    std::fs::write(
        base.join("summary.json"),
        serde_json::to_string_pretty(&summary)?,
    )?;
    print!("{}", summary.table());
    if !summary.failures.is_empty() {
        bail!(
            "{} run(s) failed: {}",
            summary.failures.len(),
            summary.failures.join(", ")
        );
    }
    Ok(())
}

fn plot(args: PlotArgs) -> Result<()> {
    if !args.run.is_dir() {
        bail!("run directory {} does not exist", args.run.display());
    }
    let kinds = if args.kind == "all" {
        vec![PlotKind::Curve, PlotKind::Heatmap, PlotKind::Selector]
    } else {
        vec![args.kind.parse::<PlotKind>()?]
    };
    for kind in kinds {
        for path in plot_data(&args.run, kind)? {
            println!("{}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Train(a) => train(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Sweep(a) => sweep(a),
        Cmd::PlotData(a) => plot(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
