use serde::{Deserialize, Serialize};

use super::{check_arm, max, EnvOutcome, EnvSpec, Environment, PullResult, RegretConvention};
use crate::error::{Error, Result};

/// Wraps another environment so that an arm pulled more than `max_consecutive`
/// times in a row pays zero until some other arm is pulled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelativeSpec {
    pub inner: Box<EnvSpec>,
    pub max_consecutive: usize,
}

impl CorrelativeSpec {
    pub fn validate(&self) -> Result<()> {
        if self.max_consecutive < 1 {
            return Err(Error::config("max_consecutive", "must be at least 1"));
        }
        if matches!(*self.inner, EnvSpec::Rotting(_)) {
            return Err(Error::config("inner", "the streak limit wraps realized-regret environments only"));
        }
        self.inner.validate()
    }
}

pub struct Correlative {
    inner: Box<dyn Environment>,
    max_consecutive: usize,
    streak_arm: Option<usize>,
    streak_len: usize,
    pending: Option<EnvOutcome>,
}

impl Correlative {
    pub fn new(inner: Box<dyn Environment>, max_consecutive: usize) -> Self {
        Correlative {
            inner,
            max_consecutive,
            streak_arm: None,
            streak_len: 0,
            pending: None,
        }
    }

    /// The arm whose next pull would pay zero, if any.
    pub fn saturated_arm(&self) -> Option<usize> {
        self.streak_arm.filter(|_| self.streak_len >= self.max_consecutive)
    }

    pub fn streak(&self) -> (Option<usize>, usize) {
        (self.streak_arm, self.streak_len)
    }
}

impl Environment for Correlative {
    fn arms(&self) -> usize {
        self.inner.arms()
    }

    fn context_dim(&self) -> usize {
        self.inner.context_dim()
    }

    fn convention(&self) -> RegretConvention {
        RegretConvention::RealizedMax
    }

    fn horizon(&self) -> usize {
        self.inner.horizon()
    }

    fn time(&self) -> usize {
        self.inner.time()
    }

    fn reveal(&mut self) -> Result<&EnvOutcome> {
        if self.pending.is_none() {
            let mut outcome = self.inner.reveal()?.clone();
            if let Some(j) = self.saturated_arm() {
                outcome.rewards[j] = 0.0;
                outcome.means[j] = 0.0;
            }
            outcome.optimal_value = max(&outcome.rewards);
            self.pending = Some(outcome);
        }
        Ok(self.pending.as_ref().expect("set above"))
    }

    fn pull(&mut self, arm: usize) -> Result<PullResult> {
        check_arm(arm, self.arms())?;
        let outcome = self
            .pending
            .take()
            .ok_or_else(|| Error::Contract("pull without a revealed outcome".into()))?;
        self.inner.pull(arm)?;
        if self.streak_arm == Some(arm) {
            self.streak_len += 1;
        } else {
            self.streak_arm = Some(arm);
            self.streak_len = 1;
        }
        super::realized_pull(&outcome, arm)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::BernoulliSpec;

    fn build(priors: Vec<f64>, max_consecutive: usize, horizon: usize) -> Correlative {
        let inner = EnvSpec::Bernoulli(BernoulliSpec::with_priors(priors)).build(horizon, 0).unwrap();
        Correlative::new(inner, max_consecutive)
    }

    fn pull(env: &mut Correlative, arm: usize) -> f64 {
        env.reveal().unwrap();
        env.pull(arm).unwrap().reward
    }

    #[test]
    fn eleventh_consecutive_pull_pays_zero() {
        let mut env = build(vec![1.0, 1.0], 10, 100);
        for _ in 0..10 {
            assert_eq!(pull(&mut env, 0), 1.0);
        }
        assert_eq!(pull(&mut env, 0), 0.0);
        assert_eq!(pull(&mut env, 0), 0.0);
    }

    #[test]
    fn another_arm_resets_the_streak() {
        let mut env = build(vec![1.0, 1.0], 10, 100);
        for _ in 0..10 {
            pull(&mut env, 0);
        }
        assert_eq!(pull(&mut env, 1), 1.0);
        assert_eq!(pull(&mut env, 0), 1.0);
        assert_eq!(env.streak(), (Some(0), 1));
    }

    #[test]
    fn limit_one_hand_simulation() {
        let mut alternating = build(vec![1.0, 1.0], 1, 20);
        let earned: f64 = (0..20).map(|t| pull(&mut alternating, t % 2)).sum();
        assert_eq!(earned, 20.0);

        let mut constant = build(vec![1.0, 1.0], 1, 20);
        let rewards: Vec<f64> = (0..20).map(|_| pull(&mut constant, 0)).collect();
        assert_eq!(rewards[0], 1.0);
        assert!(rewards[1..].iter().all(|&r| r == 0.0));
    }

    #[test]
    fn regret_oracle_sees_the_zeroing() {
        let mut env = build(vec![1.0, 0.0], 2, 10);
        pull(&mut env, 0);
        pull(&mut env, 0);
        let o = env.reveal().unwrap();
        assert_eq!(o.rewards, vec![0.0, 0.0]);
        assert_eq!(o.optimal_value, 0.0);
        let r = env.pull(0).unwrap();
        assert_eq!((r.reward, r.regret), (0.0, 0.0));
    }

    #[test]
    fn saturated_arm_never_pays() {
        let mut env = build(vec![1.0, 1.0, 1.0], 3, 500);
        let mut state = 17u64;
        for _ in 0..500 {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            let arm = if state >> 62 == 0 { 1 } else { 0 };
            let saturated = env.saturated_arm();
            let reward = pull(&mut env, arm);
            if saturated == Some(arm) {
                assert_eq!(reward, 0.0);
            } else {
                assert_eq!(reward, 1.0);
            }
        }
    }
}
