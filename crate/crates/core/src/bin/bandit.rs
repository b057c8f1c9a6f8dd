use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use energy_bandit::harness::{
    describe, emit_plot, read_aggregate_csv, run_experiment_with, sensitivity_sweep_with, write_experiment,
    write_sweep_csv, AgentKind, EnvKind, Experiment, RunConfig, RunEvent, Settings,
};
use energy_bandit::Error;

#[derive(Parser)]
#[command(name = "bandit", version, about = "Energy-regularized recurrent bandit experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one seeded multi-run experiment.
    Run(RunArgs),
    /// Repeat an experiment for several values of alpha_ec.
    Sweep {
        /// Comma-separated alpha_ec values.
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Plot aggregate CSVs as one SVG.
    Plot {
        #[arg(long, value_delimiter = ',', required = true)]
        inputs: Vec<PathBuf>,
        /// Legend labels; defaults to the file stems.
        #[arg(long, value_delimiter = ',')]
        labels: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    /// TOML file of `key = value` settings; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<EnvKind>,
    #[arg(long)]
    agent: Option<AgentKind>,
    /// Horizon T.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    runs: Option<usize>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    alpha_ec: Option<f64>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    bptt_window: Option<usize>,
    /// Append bound-audit columns every 100 steps.
    #[arg(long)]
    audit_bound: bool,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    swa_window: Option<usize>,
    /// Stop parameter updates after this many steps.
    #[arg(long)]
    freeze_after: Option<usize>,
    #[arg(long)]
    arms: Option<usize>,
    #[arg(long)]
    period: Option<f64>,
    #[arg(long)]
    max_consecutive: Option<usize>,
    #[arg(long)]
    rotation_period: Option<f64>,
    /// Write each run's final policy parameters as a checkpoint.
    #[arg(long)]
    save_params: bool,
    /// Suppress per-run progress lines.
    #[arg(long)]
    quiet: bool,
}

impl RunArgs {
    fn settings(&self) -> energy_bandit::Result<Settings> {
        let file = match &self.config {
            Some(path) => Settings::from_file(path)?,
            None => Settings::default(),
        };
        let flags = Settings {
            env: self.env,
            agent: self.agent,
            steps: self.steps,
            runs: self.runs,
            seed: self.seed,
            alpha_ec: self.alpha_ec,
            dropout: self.dropout,
            hidden: self.hidden,
            layers: self.layers,
            lr: self.lr,
            bptt_window: self.bptt_window,
            audit_bound: self.audit_bound.then_some(true),
            out: self.out.clone(),
            workers: self.workers,
            epsilon: self.epsilon,
            temperature: self.temperature,
            swa_window: self.swa_window,
            freeze_after: self.freeze_after,
            arms: self.arms,
            period: self.period,
            max_consecutive: self.max_consecutive,
            rotation_period: self.rotation_period,
            save_params: self.save_params.then_some(true),
        };
        Ok(file.overlay(flags))
    }
}

fn progress(quiet: bool, prefix: String) -> impl Fn(&RunEvent) + Sync {
    move |e: &RunEvent| {
        if quiet {
            return;
        }
        match (&e.error, e.final_regret) {
            (Some(err), _) => eprintln!("{prefix}run {}/{} aborted: {err}", e.run + 1, e.runs),
            (None, Some(r)) => eprintln!("{prefix}run {}/{} final regret {r:.3}", e.run + 1, e.runs),
            (None, None) => {}
        }
    }
}

fn summarize(exp: &Experiment) -> energy_bandit::Result<()> {
    for (run, err) in &exp.aborted {
        eprintln!("run {run} aborted: {err}");
    }
    if !exp.runs.is_empty() {
        let s = exp.series()?;
        let last = s.horizon() - 1;
        println!(
            "{} on {} steps, {} runs: final mean cumulative regret {:.4} (stderr {:.4})",
            exp.config.agent,
            s.horizon(),
            s.runs,
            s.mean[last],
            s.stderr[last]
        );
        let clipped: usize = exp.runs.iter().map(|r| r.clipped_rewards).sum();
        if clipped > 0 {
            println!("note: {clipped} non-binary rewards were clipped into [0, 1] for Thompson sampling");
        }
    }
    Ok(())
}

fn resolve(args: &RunArgs) -> energy_bandit::Result<(RunConfig, PathBuf)> {
    let settings = args.settings()?;
    let out = settings.out.clone().unwrap_or_else(|| PathBuf::from("out"));
    let cfg = settings.resolve()?;
    eprint!("{}", describe(&cfg));
    eprintln!("out            {}", out.display());
    Ok((cfg, out))
}

fn run(args: &RunArgs) -> energy_bandit::Result<bool> {
    let (cfg, out) = resolve(args)?;
    let exp = run_experiment_with(&cfg, progress(args.quiet, String::new()))?;
    write_experiment(&out, &exp)?;
    summarize(&exp)?;
    Ok(exp.succeeded())
}

fn sweep(alphas: &[f64], args: &RunArgs) -> energy_bandit::Result<bool> {
    let (cfg, out) = resolve(args)?;
    let sweep = sensitivity_sweep_with(&cfg, alphas, |a: f64, e: &RunEvent| {
        progress(args.quiet, format!("alpha {a}: "))(e)
    })?;
    let mut combined = Vec::new();
    let mut ok = true;
    for (alpha, exp) in &sweep {
        write_experiment(&out.join(format!("alpha_{alpha}")), exp)?;
        print!("alpha {alpha}: ");
        summarize(exp)?;
        ok &= exp.succeeded();
        if !exp.runs.is_empty() {
            combined.push((*alpha, exp.series()?));
        }
    }
    write_sweep_csv(&out.join("sweep.csv"), &combined)?;
    Ok(ok)
}

fn plot(inputs: &[PathBuf], labels: &[String], out: &Path) -> energy_bandit::Result<()> {
    let series = inputs
        .iter()
        .map(|p| read_aggregate_csv(p))
        .collect::<energy_bandit::Result<Vec<_>>>()?;
    let labels: Vec<String> = if labels.is_empty() {
        inputs
            .iter()
            .map(|p| p.file_stem().map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into_owned()))
            .collect()
    } else {
        labels.to_vec()
    };
    emit_plot(&series, &labels, out)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result: Result<bool, Error> = match &cli.command {
        Command::Run(args) => run(args),
        Command::Sweep { alphas, run } => sweep(alphas, run),
        Command::Plot { inputs, labels, out } => plot(inputs, labels, out).map(|_| true),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
