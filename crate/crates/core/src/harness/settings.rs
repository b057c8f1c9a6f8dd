use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Deserialize;

use super::{AgentKind, EnvKind, EnvPreset, RunConfig};
use crate::error::{Error, Result};

/// Flat experiment settings shared by the config file and the command line.
/// Unset fields fall back to the task's defaults.
///
/// The config file is TOML with one `key = value` per field, e.g.
///
/// ```toml
/// env = "rotating-wheel"
/// agent = "energy-rnn"
/// steps = 10000
/// alpha_ec = 0.05
/// ```
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub env: Option<EnvKind>,
    pub agent: Option<AgentKind>,
    pub steps: Option<usize>,
    pub runs: Option<usize>,
    pub seed: Option<u64>,
    pub alpha_ec: Option<f64>,
    pub dropout: Option<f64>,
    pub hidden: Option<usize>,
    pub layers: Option<usize>,
    pub lr: Option<f64>,
    pub bptt_window: Option<usize>,
    pub audit_bound: Option<bool>,
    pub out: Option<PathBuf>,
    pub workers: Option<usize>,
    pub epsilon: Option<f64>,
    pub temperature: Option<f64>,
    pub swa_window: Option<usize>,
    pub freeze_after: Option<usize>,
    pub arms: Option<usize>,
    pub period: Option<f64>,
    pub max_consecutive: Option<usize>,
    pub rotation_period: Option<f64>,
    pub save_params: Option<bool>,
}

macro_rules! overlay {
    ($base:ident, $top:ident; $($f:ident),+) => {
        $(if $top.$f.is_some() { $base.$f = $top.$f; })+
    };
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse("config file", e.message()))
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path.display().to_string(), message),
            other => other,
        })
    }

    /// Fields set in `top` win.
    pub fn overlay(mut self, top: Settings) -> Settings {
        overlay!(self, top; env, agent, steps, runs, seed, alpha_ec, dropout, hidden, layers, lr,
            bptt_window, audit_bound, out, workers, epsilon, temperature, swa_window, freeze_after,
            arms, period, max_consecutive, rotation_period, save_params);
        self
    }

    pub fn env_kind(&self) -> EnvKind {
        self.env.unwrap_or(EnvKind::Bernoulli)
    }

    pub fn agent_kind(&self) -> AgentKind {
        self.agent.unwrap_or(AgentKind::EnergyRnn)
    }

    pub fn resolve(&self) -> Result<RunConfig> {
        let env = self.env_kind();
        let mut cfg = RunConfig::new(env, self.agent_kind());
        let defaults = EnvPreset::default();
        let preset = EnvPreset {
            arms: self.arms.unwrap_or(defaults.arms),
            period: self.period.unwrap_or(defaults.period),
            max_consecutive: self.max_consecutive.unwrap_or(defaults.max_consecutive),
            rotation_period: self.rotation_period.unwrap_or(defaults.rotation_period),
        };
        cfg.env = env.spec(&preset);
        let a = &mut cfg.agent_config;
        set(&mut a.alpha_ec, self.alpha_ec);
        set(&mut a.p_dropout, self.dropout);
        set(&mut a.hidden, self.hidden);
        set(&mut a.layers, self.layers);
        set(&mut a.learning_rate, self.lr);
        set(&mut a.bptt_window, self.bptt_window);
        if self.freeze_after.is_some() {
            a.freeze_after = self.freeze_after;
        }
        set(&mut cfg.horizon, self.steps);
        set(&mut cfg.runs, self.runs);
        set(&mut cfg.seed, self.seed);
        set(&mut cfg.audit_bound, self.audit_bound);
        set(&mut cfg.workers, self.workers);
        set(&mut cfg.epsilon, self.epsilon);
        set(&mut cfg.temperature, self.temperature);
        set(&mut cfg.keep_params, self.save_params);
        cfg.swa_window = self.swa_window.or(cfg.swa_window);
        cfg.validate()?;
        Ok(cfg)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Human-readable listing of every effective setting.
pub fn describe(cfg: &RunConfig) -> String {
    let a = cfg.effective_agent_config();
    let mut s = String::new();
    let _ = writeln!(s, "agent          {}", cfg.agent);
    let _ = writeln!(s, "env            {}", toml::to_string(&cfg.env).unwrap_or_default().replace('\n', " ").trim());
    let _ = writeln!(s, "steps          {}", cfg.horizon);
    let _ = writeln!(s, "runs           {}", cfg.runs);
    let _ = writeln!(s, "seed           {}", cfg.seed);
    if cfg.agent.is_recurrent() {
        let _ = writeln!(s, "layers/hidden  {} x {}", a.layers, a.hidden);
        let _ = writeln!(s, "alpha_ec       {}", a.alpha_ec);
        let _ = writeln!(s, "lr             {} (rmsprop decay {}, eps {})", a.learning_rate, a.rmsprop_decay, a.rmsprop_eps);
        let _ = writeln!(s, "dropout        {}", a.p_dropout);
        let _ = writeln!(s, "exploration    {:?}", a.exploration);
        let _ = writeln!(s, "bptt_window    {}", a.bptt_window);
        if let Some(f) = a.freeze_after {
            let _ = writeln!(s, "freeze_after   {f}");
        }
    }
    if cfg.agent == AgentKind::Swa {
        let window = cfg.swa_window.unwrap_or_else(|| crate::baselines::SwaState::default_window(cfg.horizon));
        let _ = writeln!(s, "swa_window     {window}");
    }
    let _ = writeln!(s, "audit_bound    {}", cfg.audit_bound);
    let _ = writeln!(s, "workers        {}", cfg.workers);
    s
}
