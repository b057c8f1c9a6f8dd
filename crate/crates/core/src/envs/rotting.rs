use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{argmax, check_arm, Clock, EnvOutcome, Environment, PullResult, RegretConvention};
use crate::error::{Error, Result};

/// One arm of a rotting bandit: it pays `mean` until it has been pulled
/// `breakpoint` times, then `decayed_mean`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RottingArm {
    pub mean: f64,
    pub decayed_mean: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub breakpoint: Option<usize>,
}

impl RottingArm {
    pub fn stationary(mean: f64) -> Self {
        RottingArm {
            mean,
            decayed_mean: mean,
            breakpoint: None,
        }
    }

    /// Mean reward of the next pull after `pulls` previous pulls.
    pub fn mean_after(&self, pulls: usize) -> f64 {
        match self.breakpoint {
            Some(b) if pulls >= b => self.decayed_mean,
            _ => self.mean,
        }
    }
}

/// Rotting bandit. `variance` is the Gaussian reward *variance* (the standard
/// deviation is its square root).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RottingSpec {
    pub arms: Vec<RottingArm>,
    pub variance: f64,
}

impl Default for RottingSpec {
    fn default() -> Self {
        RottingSpec {
            arms: vec![
                RottingArm::stationary(0.5),
                RottingArm {
                    mean: 1.0,
                    decayed_mean: 0.4,
                    breakpoint: Some(7500),
                },
            ],
            variance: 0.2,
        }
    }
}

impl RottingSpec {
    pub fn validate(&self) -> Result<()> {
        if self.arms.len() < 2 {
            return Err(Error::config("arms", "need at least 2 arms"));
        }
        if !(self.variance > 0.0) {
            return Err(Error::config("variance", format!("must be > 0, got {}", self.variance)));
        }
        Ok(())
    }

    pub fn means(&self, pulls: &[usize]) -> Vec<f64> {
        self.arms.iter().zip(pulls).map(|(a, &n)| a.mean_after(n)).collect()
    }
}

/// The greedy policy `argmax_i r_i(N_i + 1)` on next-pull means; lowest index on ties.
pub fn rotting_optimal_action(spec: &RottingSpec, pulls: &[usize]) -> usize {
    argmax(&spec.means(pulls))
}

pub struct Rotting {
    spec: RottingSpec,
    noise: Normal<f64>,
    pulls: Vec<usize>,
    optimal_pulls: Vec<usize>,
    clock: Clock,
    rng: ChaCha8Rng,
}

impl Rotting {
    pub fn new(spec: RottingSpec, horizon: usize, rng: ChaCha8Rng) -> Self {
        let noise = Normal::new(0.0, spec.variance.sqrt()).expect("variance validated");
        let n = spec.arms.len();
        Rotting {
            spec,
            noise,
            pulls: vec![0; n],
            optimal_pulls: vec![0; n],
            clock: Clock::new(horizon),
            rng,
        }
    }

    /// The agent's pull count per arm.
    pub fn pulls(&self) -> &[usize] {
        &self.pulls
    }
}

impl Environment for Rotting {
    fn arms(&self) -> usize {
        self.spec.arms.len()
    }

    fn context_dim(&self) -> usize {
        0
    }

    fn convention(&self) -> RegretConvention {
        RegretConvention::PolicyExpected
    }

    fn horizon(&self) -> usize {
        self.clock.horizon
    }

    fn time(&self) -> usize {
        self.clock.time
    }

    fn reveal(&mut self) -> Result<&EnvOutcome> {
        let means = self.spec.means(&self.pulls);
        let best = rotting_optimal_action(&self.spec, &self.optimal_pulls);
        let optimal_value = self.spec.arms[best].mean_after(self.optimal_pulls[best]);
        let (noise, rng) = (&self.noise, &mut self.rng);
        self.clock.reveal(|_| {
            let rewards = means.iter().map(|m| m + noise.sample(rng)).collect();
            EnvOutcome {
                context: Vec::new(),
                rewards,
                means,
                optimal_value,
            }
        })
    }

    fn pull(&mut self, arm: usize) -> Result<PullResult> {
        check_arm(arm, self.arms())?;
        let outcome = self.clock.take()?;
        let best = rotting_optimal_action(&self.spec, &self.optimal_pulls);
        self.optimal_pulls[best] += 1;
        self.pulls[arm] += 1;
        let regret = outcome.optimal_value - outcome.means[arm];
        Ok(PullResult {
            arm,
            reward: outcome.rewards[arm],
            regret,
            expected_regret: regret,
            best_arm: outcome.best_arm(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn env(horizon: usize) -> Rotting {
        Rotting::new(RottingSpec::default(), horizon, ChaCha8Rng::seed_from_u64(0))
    }

    #[test]
    fn second_arm_decays_at_breakpoint() {
        let spec = RottingSpec::default();
        assert_eq!(spec.arms[1].mean_after(7499), 1.0);
        assert_eq!(spec.arms[1].mean_after(7500), 0.4);
    }

    #[test]
    fn first_arm_variance() {
        let mut e = env(100_000);
        let draws: Vec<f64> = (0..100_000)
            .map(|_| {
                let r = e.reveal().unwrap().rewards[0];
                e.pull(0).unwrap();
                r
            })
            .collect();
        let mean = draws.iter().sum::<f64>() / draws.len() as f64;
        let var = draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (draws.len() - 1) as f64;
        assert!((var - 0.2).abs() < 0.01, "{var}");
        assert!((mean - 0.5).abs() < 0.01);
    }

    #[test]
    fn optimal_action_examples() {
        let spec = RottingSpec::default();
        assert_eq!(rotting_optimal_action(&spec, &[0, 0]), 1);
        assert_eq!(rotting_optimal_action(&spec, &[0, 7500]), 0);
        // follow the greedy policy for the full horizon and sum its means
        let mut pulls = vec![0, 0];
        let mut total = 0.0;
        for _ in 0..30_000 {
            let a = rotting_optimal_action(&spec, &pulls);
            total += spec.arms[a].mean_after(pulls[a]);
            pulls[a] += 1;
        }
        assert!((total - 18_750.0).abs() < 1e-6);
    }

    #[test]
    fn always_first_arm_policy_regret() {
        let mut e = env(30_000);
        let mut cum = 0.0;
        for _ in 0..30_000 {
            e.reveal().unwrap();
            cum += e.pull(0).unwrap().regret;
        }
        assert!((cum - 3750.0).abs() < 1e-6, "{cum}");
    }

    #[test]
    fn optimal_sequence_has_zero_regret() {
        let mut e = env(30_000);
        let mut pulls = vec![0, 0];
        let spec = RottingSpec::default();
        for _ in 0..30_000 {
            e.reveal().unwrap();
            let a = rotting_optimal_action(&spec, &pulls);
            pulls[a] += 1;
            assert_eq!(e.pull(a).unwrap().regret, 0.0);
        }
    }
}
