use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{realized_pull, Clock, EnvOutcome, Environment, PullResult, RegretConvention};
use crate::error::{Error, Result};

/// How one step's draws for different arms relate. Arm `k` pays 1 with
/// probability `θ_k` either way, and an agent only ever sees the arm it pulls.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Coupling {
    /// One uniform `u_t` shared by all arms; arm `k` pays iff `u_t < θ_k`,
    /// so the realized max is the best arm's own reward.
    #[default]
    Common,
    /// A fresh uniform per arm.
    Independent,
}

/// Stationary Bernoulli arms. `priors: None` draws each `θ̄_k ~ U[0, 1]` once per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BernoulliSpec {
    pub arms: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors: Option<Vec<f64>>,
    #[serde(default)]
    pub coupling: Coupling,
}

impl BernoulliSpec {
    pub fn uniform_prior(arms: usize) -> Self {
        BernoulliSpec {
            arms,
            priors: None,
            coupling: Coupling::default(),
        }
    }

    pub fn with_priors(priors: Vec<f64>) -> Self {
        BernoulliSpec {
            arms: priors.len(),
            priors: Some(priors),
            coupling: Coupling::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        validate_priors(self.arms, self.priors.as_deref())
    }
}

fn validate_priors(arms: usize, priors: Option<&[f64]>) -> Result<()> {
    if arms < 2 {
        return Err(Error::config("arms", format!("need at least 2 arms, got {arms}")));
    }
    if let Some(p) = priors {
        if p.len() != arms {
            return Err(Error::config("priors", format!("expected {arms} priors, got {}", p.len())));
        }
        if let Some(bad) = p.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::config("priors", format!("prior {bad} outside [0, 1]")));
        }
    }
    Ok(())
}

fn draw_priors(arms: usize, priors: Option<&[f64]>, rng: &mut ChaCha8Rng) -> Vec<f64> {
    match priors {
        Some(p) => p.to_vec(),
        None => (0..arms).map(|_| rng.random::<f64>()).collect(),
    }
}

fn bernoulli_outcome(thetas: &[f64], coupling: Coupling, rng: &mut ChaCha8Rng) -> EnvOutcome {
    let pays = |u: f64, p: f64| if u < p { 1.0 } else { 0.0 };
    let rewards = match coupling {
        Coupling::Common => {
            let u = rng.random::<f64>();
            thetas.iter().map(|&p| pays(u, p)).collect()
        }
        Coupling::Independent => thetas.iter().map(|&p| pays(rng.random(), p)).collect(),
    };
    EnvOutcome::realized(Vec::new(), rewards, thetas.to_vec())
}

pub struct Bernoulli {
    priors: Vec<f64>,
    coupling: Coupling,
    clock: Clock,
    rng: ChaCha8Rng,
}

impl Bernoulli {
    pub fn new(spec: BernoulliSpec, horizon: usize, mut rng: ChaCha8Rng) -> Self {
        let priors = draw_priors(spec.arms, spec.priors.as_deref(), &mut rng);
        Bernoulli {
            priors,
            coupling: spec.coupling,
            clock: Clock::new(horizon),
            rng,
        }
    }

    pub fn priors(&self) -> &[f64] {
        &self.priors
    }
}

impl Environment for Bernoulli {
    fn arms(&self) -> usize {
        self.priors.len()
    }

    fn context_dim(&self) -> usize {
        0
    }

    fn convention(&self) -> RegretConvention {
        RegretConvention::RealizedMax
    }

    fn horizon(&self) -> usize {
        self.clock.horizon
    }

    fn time(&self) -> usize {
        self.clock.time
    }

    fn reveal(&mut self) -> Result<&EnvOutcome> {
        let (priors, coupling, rng) = (&self.priors, self.coupling, &mut self.rng);
        self.clock.reveal(|_| bernoulli_outcome(priors, coupling, rng))
    }

    fn pull(&mut self, arm: usize) -> Result<PullResult> {
        let outcome = self.clock.take()?;
        realized_pull(&outcome, arm)
    }
}

/// Mirrored-sine prior `θ̄_k |sin(ωt + φ_k)|` with `ω = 2π / period` and
/// `φ_k = 2πk / n` for the 1-based arm index `k`.
pub fn time_dependent_prior(base: f64, t: f64, period: f64, k: usize, n: usize) -> f64 {
    let omega = 2.0 * PI / period;
    let phase = 2.0 * PI * k as f64 / n as f64;
    base * (omega * t + phase).sin().abs()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeDependentSpec {
    pub arms: usize,
    pub period: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priors: Option<Vec<f64>>,
    #[serde(default)]
    pub coupling: Coupling,
}

impl TimeDependentSpec {
    pub fn new(arms: usize, period: f64) -> Self {
        TimeDependentSpec {
            arms,
            period,
            priors: None,
            coupling: Coupling::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.period > 0.0) {
            return Err(Error::config("period", format!("must be > 0, got {}", self.period)));
        }
        validate_priors(self.arms, self.priors.as_deref())
    }
}

/// Bernoulli arms whose success probabilities follow [`time_dependent_prior`].
pub struct TimeDependent {
    base: Vec<f64>,
    period: f64,
    coupling: Coupling,
    clock: Clock,
    rng: ChaCha8Rng,
}

impl TimeDependent {
    pub fn new(spec: TimeDependentSpec, horizon: usize, mut rng: ChaCha8Rng) -> Self {
        let base = draw_priors(spec.arms, spec.priors.as_deref(), &mut rng);
        TimeDependent {
            base,
            period: spec.period,
            coupling: spec.coupling,
            clock: Clock::new(horizon),
            rng,
        }
    }

    pub fn thetas(&self, t: usize) -> Vec<f64> {
        let n = self.base.len();
        self.base
            .iter()
            .enumerate()
            .map(|(i, &b)| time_dependent_prior(b, t as f64, self.period, i + 1, n))
            .collect()
    }
}

impl Environment for TimeDependent {
    fn arms(&self) -> usize {
        self.base.len()
    }

    fn context_dim(&self) -> usize {
        0
    }

    fn convention(&self) -> RegretConvention {
        RegretConvention::RealizedMax
    }

    fn horizon(&self) -> usize {
        self.clock.horizon
    }

    fn time(&self) -> usize {
        self.clock.time
    }

    fn reveal(&mut self) -> Result<&EnvOutcome> {
        let thetas = self.thetas(self.clock.time + 1);
        let (coupling, rng) = (self.coupling, &mut self.rng);
        self.clock.reveal(|_| bernoulli_outcome(&thetas, coupling, rng))
    }

    fn pull(&mut self, arm: usize) -> Result<PullResult> {
        let outcome = self.clock.take()?;
        realized_pull(&outcome, arm)
    }
}
