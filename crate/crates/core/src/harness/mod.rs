//! Seeded multi-run experiments, regret aggregation, CSV and SVG output.

mod output;
mod plot;
mod settings;

pub use output::{
    read_aggregate_csv, read_runs_csv, write_aggregate_csv, write_experiment, write_runs_csv, write_sweep_csv,
    StepRow, AGGREGATE_HEADER, RUNS_HEADER, RUNS_HEADER_AUDIT,
};
pub use plot::{downsample_indices, emit_plot, render_svg, MAX_PLOT_POINTS};
pub use settings::{describe, Settings};

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::baselines::{SwaAgent, SwaState, ThompsonAgent};
use crate::envs::{
    BernoulliSpec, CorrelativeSpec, EnvHandle, EnvSpec, RegretConvention, RottingSpec, TimeDependentSpec, WheelSpec,
};
use crate::error::{Error, Result};
use crate::learner::{Agent, AgentConfig, Decision, Exploration, RnnAgent};
use crate::policy::PolicyParams;
use crate::theory::{audit_logits, BoundReport};

macro_rules! named_enum {
    ($(#[$meta:meta])* $name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        $(#[$meta])*
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
        pub enum $name {
            $(#[serde(rename = $text)] $variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn name(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.name())
            }
        }

        impl FromStr for $name {
            type Err = Error;

            fn from_str(s: &str) -> Result<Self> {
                $name::ALL.iter().copied().find(|k| k.name() == s).ok_or_else(|| {
                    let names: Vec<&str> = $name::ALL.iter().map(|k| k.name()).collect();
                    Error::config(stringify!($name), format!("unknown value `{s}`, expected one of {}", names.join(", ")))
                })
            }
        }
    };
}

named_enum! {
    /// Which agent a run uses. The three ablations share the recurrent policy
    /// and train with `α_EC = 0`.
    AgentKind {
        EnergyRnn => "energy-rnn",
        NoEc => "no-ec",
        EpsGreedy => "eps-greedy",
        SoftmaxTemp => "softmax-temp",
        Thompson => "thompson",
        Swa => "swa",
    }
}

named_enum! {
    /// Named task presets.
    EnvKind {
        Bernoulli => "bernoulli",
        Timedep => "timedep",
        Correlative => "correlative",
        TimedepCorrelative => "timedep-correlative",
        Wheel => "wheel",
        RotatingWheel => "rotating-wheel",
        Rotting => "rotting",
    }
}

impl AgentKind {
    pub fn is_recurrent(self) -> bool {
        !matches!(self, AgentKind::Thompson | AgentKind::Swa)
    }
}

/// Knobs of the named task presets.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvPreset {
    pub arms: usize,
    pub period: f64,
    pub max_consecutive: usize,
    pub rotation_period: f64,
}

impl Default for EnvPreset {
    fn default() -> Self {
        EnvPreset {
            arms: 10,
            period: 10_000.0,
            max_consecutive: 10,
            rotation_period: 2000.0,
        }
    }
}

impl EnvKind {
    pub fn spec(self, preset: &EnvPreset) -> EnvSpec {
        let bernoulli = || EnvSpec::Bernoulli(BernoulliSpec::uniform_prior(preset.arms));
        let timedep = || EnvSpec::TimeDependent(TimeDependentSpec::new(preset.arms, preset.period));
        let correlative = |inner: EnvSpec| {
            EnvSpec::Correlative(CorrelativeSpec {
                inner: Box::new(inner),
                max_consecutive: preset.max_consecutive,
            })
        };
        match self {
            EnvKind::Bernoulli => bernoulli(),
            EnvKind::Timedep => timedep(),
            EnvKind::Correlative => correlative(bernoulli()),
            EnvKind::TimedepCorrelative => correlative(timedep()),
            EnvKind::Wheel => EnvSpec::Wheel(WheelSpec::default()),
            EnvKind::RotatingWheel => EnvSpec::Wheel(WheelSpec::rotating(preset.rotation_period)),
            EnvKind::Rotting => EnvSpec::Rotting(RottingSpec::default()),
        }
    }

    /// Horizon used when none is given. Tasks whose horizon is not fixed by
    /// the experiment description run for 10000 steps.
    pub fn default_horizon(self) -> usize {
        match self {
            EnvKind::Timedep | EnvKind::TimedepCorrelative => 20_000,
            EnvKind::Rotting => 30_000,
            _ => 10_000,
        }
    }

    pub fn default_runs(self) -> usize {
        match self {
            EnvKind::Bernoulli => 100,
            _ => 10,
        }
    }

    /// Dropout is switched off for the rotting task.
    pub fn default_dropout(self) -> f64 {
        match self {
            EnvKind::Rotting => 0.0,
            _ => 0.1,
        }
    }
}

/// Everything needed to reproduce an experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub env: EnvSpec,
    pub agent: AgentKind,
    pub agent_config: AgentConfig,
    /// Exploration rate of the `eps-greedy` ablation.
    pub epsilon: f64,
    /// Temperature of the `softmax-temp` ablation.
    pub temperature: f64,
    /// SWA window; `None` uses `ceil(T^(2/3))`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub swa_window: Option<usize>,
    pub horizon: usize,
    pub runs: usize,
    pub seed: u64,
    pub audit_bound: bool,
    pub audit_every: usize,
    /// Concurrent runs. Results do not depend on it.
    pub workers: usize,
    /// Keep the final policy parameters of recurrent agents.
    pub keep_params: bool,
}

impl RunConfig {
    pub fn new(env: EnvKind, agent: AgentKind) -> Self {
        RunConfig {
            env: env.spec(&EnvPreset::default()),
            agent,
            agent_config: AgentConfig {
                p_dropout: env.default_dropout(),
                ..AgentConfig::default()
            },
            epsilon: 0.01,
            temperature: 2.0,
            swa_window: None,
            horizon: env.default_horizon(),
            runs: env.default_runs(),
            seed: 0,
            audit_bound: false,
            audit_every: 100,
            workers: 1,
            keep_params: false,
        }
    }

    pub fn with_horizon(mut self, horizon: usize) -> Self {
        self.horizon = horizon;
        self
    }

    pub fn with_runs(mut self, runs: usize) -> Self {
        self.runs = runs;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_agent(mut self, agent: AgentKind) -> Self {
        self.agent = agent;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        if self.horizon < 1 {
            return Err(Error::config("steps", "must be at least 1"));
        }
        if self.runs < 1 {
            return Err(Error::config("runs", "must be at least 1"));
        }
        if self.workers < 1 {
            return Err(Error::config("workers", "must be at least 1"));
        }
        if self.audit_every < 1 {
            return Err(Error::config("audit_every", "must be at least 1"));
        }
        if self.swa_window == Some(0) {
            return Err(Error::config("swa_window", "must be at least 1"));
        }
        self.effective_agent_config().validate()
    }

    /// Agent configuration after applying the ablation's overrides.
    pub fn effective_agent_config(&self) -> AgentConfig {
        let mut cfg = self.agent_config.clone();
        match self.agent {
            AgentKind::EnergyRnn | AgentKind::Thompson | AgentKind::Swa => {}
            AgentKind::NoEc => cfg.alpha_ec = 0.0,
            AgentKind::EpsGreedy => {
                cfg.alpha_ec = 0.0;
                cfg.exploration = Exploration::EpsilonGreedy(self.epsilon);
            }
            AgentKind::SoftmaxTemp => {
                cfg.alpha_ec = 0.0;
                cfg.exploration = Exploration::SoftmaxTemperature(self.temperature);
            }
        }
        cfg
    }

    pub fn convention(&self) -> RegretConvention {
        match self.env {
            EnvSpec::Rotting(_) => RegretConvention::PolicyExpected,
            _ => RegretConvention::RealizedMax,
        }
    }
}

/// SplitMix64 finalizer.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seeds of run `r`: the run seed is `splitmix64(master ^ splitmix64(r))`; the
/// agent and the environment draw from two streams split off it, so the same
/// run index sees the same environment whatever the agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSeeds {
    pub run: u64,
    pub agent: u64,
    pub env: u64,
}

impl RunSeeds {
    pub fn derive(master: u64, run_index: usize) -> Self {
        let run = splitmix64(master ^ splitmix64(run_index as u64));
        RunSeeds {
            run,
            agent: splitmix64(run ^ 0xA6E7_0000_0000_0001),
            env: splitmix64(run ^ 0xE4F0_0000_0000_0002),
        }
    }
}

/// Per-step record of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub run: usize,
    pub seeds: RunSeeds,
    pub arms: Vec<usize>,
    pub rewards: Vec<f64>,
    /// Regret under the environment's convention.
    pub regrets: Vec<f64>,
    pub expected_regrets: Vec<f64>,
    /// Arm with the highest expected reward at each step.
    pub best_arms: Vec<usize>,
    /// `(t, report)` every `audit_every` steps, 1-based `t`.
    pub audits: Vec<(usize, BoundReport)>,
    /// Rewards Thompson sampling had to clip into `[0, 1]`.
    pub clipped_rewards: usize,
    pub params: Option<PolicyParams>,
}

impl RunTrace {
    pub fn len(&self) -> usize {
        self.arms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arms.is_empty()
    }

    pub fn cumulative_regret(&self) -> Vec<f64> {
        cumulative(&self.regrets)
    }

    pub fn cumulative_expected_regret(&self) -> Vec<f64> {
        cumulative(&self.expected_regrets)
    }

    pub fn final_regret(&self) -> f64 {
        self.regrets.iter().sum()
    }
}

pub fn cumulative(v: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    v.iter()
        .map(|x| {
            acc += x;
            acc
        })
        .collect()
}

/// Cross-run mean and standard error of cumulative regret per step.
#[derive(Debug, Clone, PartialEq)]
pub struct RegretSeries {
    pub mean: Vec<f64>,
    pub stderr: Vec<f64>,
    pub runs: usize,
}

impl RegretSeries {
    /// Aggregates equal-length cumulative series. The standard error uses the
    /// `n - 1` sample variance and is 0 for a single run.
    pub fn from_cumulative(series: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = series.first() else {
            return Err(Error::Contract("no series to aggregate".into()));
        };
        let len = first.len();
        if let Some(bad) = series.iter().find(|s| s.len() != len) {
            return Err(Error::Contract(format!("series lengths differ: {len} vs {}", bad.len())));
        }
        let n = series.len() as f64;
        let mut mean = vec![0.0; len];
        let mut stderr = vec![0.0; len];
        for t in 0..len {
            let m = series.iter().map(|s| s[t]).sum::<f64>() / n;
            mean[t] = m;
            if series.len() > 1 {
                let var = series.iter().map(|s| (s[t] - m).powi(2)).sum::<f64>() / (n - 1.0);
                stderr[t] = (var / n).sqrt();
            }
        }
        Ok(RegretSeries {
            mean,
            stderr,
            runs: series.len(),
        })
    }

    pub fn horizon(&self) -> usize {
        self.mean.len()
    }

    pub fn final_mean(&self) -> f64 {
        self.mean.last().copied().unwrap_or(0.0)
    }
}

/// Outcome of [`run_experiment`].
#[derive(Debug)]
pub struct Experiment {
    pub config: RunConfig,
    /// Completed runs in run-index order.
    pub runs: Vec<RunTrace>,
    /// Runs that stopped with an error.
    pub aborted: Vec<(usize, Error)>,
}

impl Experiment {
    /// Mean cumulative regret under the environment's convention.
    pub fn series(&self) -> Result<RegretSeries> {
        let cum: Vec<Vec<f64>> = self.runs.iter().map(RunTrace::cumulative_regret).collect();
        RegretSeries::from_cumulative(&cum)
    }

    /// Mean cumulative pseudo-regret `Σ max_k E[r_k] - E[r_chosen]`.
    pub fn expected_series(&self) -> Result<RegretSeries> {
        let cum: Vec<Vec<f64>> = self.runs.iter().map(RunTrace::cumulative_expected_regret).collect();
        RegretSeries::from_cumulative(&cum)
    }

    pub fn succeeded(&self) -> bool {
        self.aborted.is_empty()
    }
}

/// Progress notification sent after each run.
#[derive(Debug, Clone)]
pub struct RunEvent {
    pub run: usize,
    pub runs: usize,
    pub final_regret: Option<f64>,
    pub error: Option<String>,
}

enum AnyAgent {
    Rnn(Box<RnnAgent>),
    Thompson(ThompsonAgent),
    Swa(SwaAgent),
}

impl AnyAgent {
    fn build(cfg: &RunConfig, seeds: RunSeeds) -> Result<Self> {
        let arms = cfg.env.arms();
        Ok(match cfg.agent {
            AgentKind::Thompson => AnyAgent::Thompson(ThompsonAgent::new(arms, seeds.agent)),
            AgentKind::Swa => {
                let window = cfg.swa_window.unwrap_or_else(|| SwaState::default_window(cfg.horizon));
                AnyAgent::Swa(SwaAgent::new(arms, window)?)
            }
            _ => AnyAgent::Rnn(Box::new(RnnAgent::new(
                cfg.effective_agent_config(),
                cfg.env.context_dim(),
                arms,
                seeds.agent,
            )?)),
        })
    }

    fn agent(&mut self) -> &mut dyn Agent {
        match self {
            AnyAgent::Rnn(a) => a.as_mut(),
            AnyAgent::Thompson(a) => a,
            AnyAgent::Swa(a) => a,
        }
    }
}

/// Executes run `index` of `cfg` to completion.
pub fn run_single(cfg: &RunConfig, index: usize) -> Result<RunTrace> {
    let seeds = RunSeeds::derive(cfg.seed, index);
    let mut env = cfg.env.build(cfg.horizon, seeds.env)?;
    let mut agent = AnyAgent::build(cfg, seeds)?;
    let t_len = cfg.horizon;
    let mut trace = RunTrace {
        run: index,
        seeds,
        arms: Vec::with_capacity(t_len),
        rewards: Vec::with_capacity(t_len),
        regrets: Vec::with_capacity(t_len),
        expected_regrets: Vec::with_capacity(t_len),
        best_arms: Vec::with_capacity(t_len),
        audits: Vec::new(),
        clipped_rewards: 0,
        params: None,
    };
    let mut handle = EnvHandle::new(env.as_mut());
    for t in 1..=t_len {
        let Decision { arm, reward, logits } = agent.agent().step(&mut handle)?;
        let result = handle
            .take_result()
            .ok_or_else(|| Error::Contract("agent returned without pulling an arm".into()))?;
        if result.arm != arm || result.reward != reward {
            return Err(Error::Contract(format!("agent reported arm {arm} but pulled {}", result.arm)));
        }
        if !result.regret.is_finite() {
            return Err(Error::Numeric(format!("non-finite regret at step {t}")));
        }
        trace.arms.push(arm);
        trace.rewards.push(reward);
        trace.regrets.push(result.regret);
        trace.expected_regrets.push(result.expected_regret);
        trace.best_arms.push(result.best_arm);
        if cfg.audit_bound && t % cfg.audit_every == 0 {
            if let Some(z) = logits {
                trace.audits.push((t, audit_logits(&z)?));
            }
        }
    }
    match agent {
        AnyAgent::Thompson(a) => trace.clipped_rewards = a.clipped_rewards(),
        AnyAgent::Rnn(a) if cfg.keep_params => trace.params = Some(a.params().clone()),
        _ => {}
    }
    Ok(trace)
}

/// Runs every index of `cfg` on up to `cfg.workers` threads. A failing run is
/// recorded in [`Experiment::aborted`] and does not stop the others.
pub fn run_experiment(cfg: &RunConfig) -> Result<Experiment> {
    run_experiment_with(cfg, |_| {})
}

pub fn run_experiment_with(cfg: &RunConfig, observer: impl Fn(&RunEvent) + Sync) -> Result<Experiment> {
    cfg.validate()?;
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<Result<RunTrace>>>> = Mutex::new((0..cfg.runs).map(|_| None).collect());
    let worker = || loop {
        let index = next.fetch_add(1, Ordering::Relaxed);
        if index >= cfg.runs {
            break;
        }
        let result = run_single(cfg, index);
        observer(&RunEvent {
            run: index,
            runs: cfg.runs,
            final_regret: result.as_ref().ok().map(RunTrace::final_regret),
            error: result.as_ref().err().map(ToString::to_string),
        });
        slots.lock().expect("no worker panicked holding the lock")[index] = Some(result);
    };
    let workers = cfg.workers.min(cfg.runs);
    if workers <= 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(worker);
            }
        });
    }
    let mut runs = Vec::with_capacity(cfg.runs);
    let mut aborted = Vec::new();
    for (index, slot) in slots.into_inner().expect("workers joined").into_iter().enumerate() {
        match slot.expect("every index is claimed") {
            Ok(trace) => runs.push(trace),
            Err(e) => aborted.push((index, e)),
        }
    }
    Ok(Experiment {
        config: cfg.clone(),
        runs,
        aborted,
    })
}

/// Re-runs `base` once per `α_EC`.
pub fn sensitivity_sweep(base: &RunConfig, alphas: &[f64]) -> Result<Vec<(f64, Experiment)>> {
    sensitivity_sweep_with(base, alphas, |_, _| {})
}

pub fn sensitivity_sweep_with(
    base: &RunConfig,
    alphas: &[f64],
    observer: impl Fn(f64, &RunEvent) + Sync,
) -> Result<Vec<(f64, Experiment)>> {
    if alphas.is_empty() {
        return Err(Error::config("alphas", "need at least one value"));
    }
    alphas
        .iter()
        .map(|&alpha| {
            let mut cfg = base.clone();
            cfg.agent_config.alpha_ec = alpha;
            run_experiment_with(&cfg, |e| observer(alpha, e)).map(|exp| (alpha, exp))
        })
        .collect()
}
