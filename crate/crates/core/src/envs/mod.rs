//! Bandit environments with full-information oracles.
//!
//! Every step draws the reward of *every* arm so regret can be computed, but an
//! agent only ever sees the context (via [`EnvOutcome::observation`]) and the
//! reward of the arm it pulled.

mod bernoulli;
mod correlative;
mod rotting;
mod wheel;

pub use bernoulli::{time_dependent_prior, Bernoulli, BernoulliSpec, Coupling, TimeDependent, TimeDependentSpec};
pub use correlative::{Correlative, CorrelativeSpec};
pub use rotting::{rotting_optimal_action, Rotting, RottingArm, RottingSpec};
pub use wheel::{rotate, sample_disk, wheel_arm_for_quadrant, Wheel, WheelSpec};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How an environment scores its per-step regret.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegretConvention {
    /// `max_k r_{k,t} - r_{i_t,t}` over the realized rewards of step `t`.
    RealizedMax,
    /// Expected reward of the optimal policy's trajectory minus the expected
    /// reward of the agent's action, both given their own pull histories.
    PolicyExpected,
}

/// Full-information outcome for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvOutcome {
    /// Context revealed to the agent; empty for context-free tasks.
    pub context: Vec<f64>,
    /// The reward each arm would pay if pulled now.
    pub rewards: Vec<f64>,
    /// Expected reward of each arm now.
    pub means: Vec<f64>,
    /// Benchmark value of the environment's regret convention.
    pub optimal_value: f64,
}

impl EnvOutcome {
    fn realized(context: Vec<f64>, rewards: Vec<f64>, means: Vec<f64>) -> Self {
        let optimal_value = max(&rewards);
        EnvOutcome {
            context,
            rewards,
            means,
            optimal_value,
        }
    }

    /// The part of the outcome an agent may observe before acting.
    pub fn observation(&self) -> &[f64] {
        &self.context
    }

    pub fn arms(&self) -> usize {
        self.rewards.len()
    }

    /// Arm with the highest expected reward (lowest index on ties).
    pub fn best_arm(&self) -> usize {
        argmax(&self.means)
    }
}

/// What happened when the pending step was resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PullResult {
    pub arm: usize,
    pub reward: f64,
    /// Per-step regret under the environment's declared convention.
    pub regret: f64,
    /// `max_k E[r_k] - E[r_arm]` at this step (pseudo-regret).
    pub expected_regret: f64,
    pub best_arm: usize,
}

pub trait Environment: Send {
    fn arms(&self) -> usize;

    /// Length of the context vector (0 for context-free tasks).
    fn context_dim(&self) -> usize;

    fn convention(&self) -> RegretConvention;

    fn horizon(&self) -> usize;

    /// Number of resolved steps so far.
    fn time(&self) -> usize;

    /// Draws the outcome of the next step. Calling it twice without a pull
    /// returns the same pending outcome.
    fn reveal(&mut self) -> Result<&EnvOutcome>;

    /// Resolves the pending step with `arm`.
    fn pull(&mut self, arm: usize) -> Result<PullResult>;
}

pub(crate) fn max(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Per-step regret for a realized-max outcome.
pub fn regret_of(outcome: &EnvOutcome, arm: usize) -> f64 {
    outcome.optimal_value - outcome.rewards[arm]
}

/// Cumulative policy regret from per-step expected rewards of the optimal
/// trajectory and of the agent.
pub fn policy_regret_of(optimal_means: &[f64], agent_means: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    optimal_means
        .iter()
        .zip(agent_means)
        .map(|(o, a)| {
            acc += o - a;
            acc
        })
        .collect()
}

pub(crate) fn check_arm(arm: usize, arms: usize) -> Result<()> {
    if arm >= arms {
        return Err(Error::Contract(format!("arm {arm} out of range for {arms} arms")));
    }
    Ok(())
}

/// Pending-outcome bookkeeping shared by the concrete environments.
#[derive(Debug, Clone)]
pub(crate) struct Clock {
    pub horizon: usize,
    pub time: usize,
    pub pending: Option<EnvOutcome>,
}

impl Clock {
    pub fn new(horizon: usize) -> Self {
        Clock {
            horizon,
            time: 0,
            pending: None,
        }
    }

    /// Returns the pending outcome, drawing it with `draw(t)` (1-based) if absent.
    pub fn reveal(&mut self, draw: impl FnOnce(usize) -> EnvOutcome) -> Result<&EnvOutcome> {
        if self.pending.is_none() {
            if self.time >= self.horizon {
                return Err(Error::Horizon {
                    horizon: self.horizon,
                });
            }
            self.pending = Some(draw(self.time + 1));
        }
        Ok(self.pending.as_ref().expect("drawn above"))
    }

    pub fn take(&mut self) -> Result<EnvOutcome> {
        let out = self
            .pending
            .take()
            .ok_or_else(|| Error::Contract("pull without a revealed outcome".into()))?;
        self.time += 1;
        Ok(out)
    }
}

pub(crate) fn realized_pull(outcome: &EnvOutcome, arm: usize) -> Result<PullResult> {
    check_arm(arm, outcome.arms())?;
    Ok(PullResult {
        arm,
        reward: outcome.rewards[arm],
        regret: regret_of(outcome, arm),
        expected_regret: max(&outcome.means) - outcome.means[arm],
        best_arm: outcome.best_arm(),
    })
}

/// Declarative description of an environment, with every constant explicit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvSpec {
    Bernoulli(BernoulliSpec),
    TimeDependent(TimeDependentSpec),
    Correlative(CorrelativeSpec),
    Wheel(WheelSpec),
    Rotting(RottingSpec),
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            EnvSpec::Bernoulli(s) => s.validate(),
            EnvSpec::TimeDependent(s) => s.validate(),
            EnvSpec::Correlative(s) => s.validate(),
            EnvSpec::Wheel(s) => s.validate(),
            EnvSpec::Rotting(s) => s.validate(),
        }
    }

    pub fn arms(&self) -> usize {
        match self {
            EnvSpec::Bernoulli(s) => s.arms,
            EnvSpec::TimeDependent(s) => s.arms,
            EnvSpec::Correlative(s) => s.inner.arms(),
            EnvSpec::Wheel(_) => 5,
            EnvSpec::Rotting(s) => s.arms.len(),
        }
    }

    pub fn context_dim(&self) -> usize {
        match self {
            EnvSpec::Wheel(_) => 2,
            EnvSpec::Correlative(s) => s.inner.context_dim(),
            _ => 0,
        }
    }

    /// Instantiates the environment for one run.
    pub fn build(&self, horizon: usize, seed: u64) -> Result<Box<dyn Environment>> {
        self.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(match self {
            EnvSpec::Bernoulli(s) => Box::new(Bernoulli::new(s.clone(), horizon, rng)),
            EnvSpec::TimeDependent(s) => Box::new(TimeDependent::new(s.clone(), horizon, rng)),
            EnvSpec::Correlative(s) => {
                let inner = s.inner.build(horizon, seed)?;
                Box::new(Correlative::new(inner, s.max_consecutive))
            }
            EnvSpec::Wheel(s) => Box::new(Wheel::new(s.clone(), horizon, rng)),
            EnvSpec::Rotting(s) => Box::new(Rotting::new(s.clone(), horizon, rng)),
        })
    }
}

/// The observer-side view of an environment: the context before acting and the
/// chosen arm's reward after. The full-information [`PullResult`] stays with the
/// caller that owns the handle.
pub struct EnvHandle<'e> {
    env: &'e mut dyn Environment,
    last: Option<PullResult>,
}

impl<'e> EnvHandle<'e> {
    pub fn new(env: &'e mut dyn Environment) -> Self {
        EnvHandle { env, last: None }
    }

    pub fn arms(&self) -> usize {
        self.env.arms()
    }

    pub fn context_dim(&self) -> usize {
        self.env.context_dim()
    }

    /// Current 1-based step index of the pending outcome.
    pub fn step_index(&self) -> usize {
        self.env.time() + 1
    }

    /// Context of the pending step.
    pub fn observe(&mut self) -> Result<Vec<f64>> {
        Ok(self.env.reveal()?.observation().to_vec())
    }

    /// Pulls `arm` and returns only its reward.
    pub fn pull(&mut self, arm: usize) -> Result<f64> {
        self.env.reveal()?;
        let result = self.env.pull(arm)?;
        self.last = Some(result);
        Ok(result.reward)
    }

    /// Full-information result of the most recent pull.
    pub fn take_result(&mut self) -> Option<PullResult> {
        self.last.take()
    }
}
