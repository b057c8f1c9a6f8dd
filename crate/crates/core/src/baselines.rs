//! Non-recurrent reference agents: Beta-Bernoulli Thompson sampling and the
//! sliding-window average (SWA) rule.

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution};

use crate::envs::EnvHandle;
use crate::error::{Error, Result};
use crate::learner::{Agent, Decision};

/// Per-arm `Beta(α, β)` posterior starting from `Beta(1, 1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct BetaPosterior {
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl BetaPosterior {
    pub fn uniform(arms: usize) -> Self {
        BetaPosterior {
            alpha: vec![1.0; arms],
            beta: vec![1.0; arms],
        }
    }

    pub fn arms(&self) -> usize {
        self.alpha.len()
    }

    /// Total pseudo-observations `Σ (α + β - 2)`.
    pub fn observations(&self) -> f64 {
        self.alpha.iter().zip(&self.beta).map(|(a, b)| a + b - 2.0).sum()
    }
}

/// Samples `s_k ~ Beta(α_k, β_k)` for every arm and returns the argmax.
pub fn thompson_select<R: Rng + ?Sized>(posterior: &BetaPosterior, rng: &mut R) -> usize {
    let mut best = 0;
    let mut best_sample = f64::NEG_INFINITY;
    for (k, (&a, &b)) in posterior.alpha.iter().zip(&posterior.beta).enumerate() {
        let s = Beta::new(a, b).expect("posterior parameters stay >= 1").sample(rng);
        if s > best_sample {
            best = k;
            best_sample = s;
        }
    }
    best
}

/// `α += r`, `β += 1 - r` for a reward in `[0, 1]`.
pub fn thompson_update(posterior: &mut BetaPosterior, arm: usize, reward01: f64) {
    posterior.alpha[arm] += reward01;
    posterior.beta[arm] += 1.0 - reward01;
}

pub struct ThompsonAgent {
    posterior: BetaPosterior,
    rng: ChaCha8Rng,
    clipped: usize,
}

impl ThompsonAgent {
    pub fn new(arms: usize, seed: u64) -> Self {
        ThompsonAgent {
            posterior: BetaPosterior::uniform(arms),
            rng: ChaCha8Rng::seed_from_u64(seed),
            clipped: 0,
        }
    }

    pub fn posterior(&self) -> &BetaPosterior {
        &self.posterior
    }

    /// Number of rewards outside `{0, 1}` that had to be clipped into `[0, 1]`.
    /// Nonzero means the Beta-Bernoulli model is mis-specified for the task.
    pub fn clipped_rewards(&self) -> usize {
        self.clipped
    }
}

impl Agent for ThompsonAgent {
    fn step(&mut self, env: &mut EnvHandle<'_>) -> Result<Decision> {
        env.observe()?;
        let arm = thompson_select(&self.posterior, &mut self.rng);
        let reward = env.pull(arm)?;
        if reward != 0.0 && reward != 1.0 {
            self.clipped += 1;
        }
        thompson_update(&mut self.posterior, arm, reward.clamp(0.0, 1.0));
        Ok(Decision {
            arm,
            reward,
            logits: None,
        })
    }
}

/// Per-arm ring buffer of the last `window` observed rewards.
#[derive(Debug, Clone, PartialEq)]
pub struct SwaState {
    window: usize,
    buffers: Vec<VecDeque<f64>>,
}

impl SwaState {
    pub fn new(arms: usize, window: usize) -> Result<Self> {
        if window == 0 {
            return Err(Error::config("swa_window", "window must be > 0"));
        }
        Ok(SwaState {
            window,
            buffers: vec![VecDeque::with_capacity(window); arms],
        })
    }

    /// Default window `ceil(T^(2/3))`.
    pub fn default_window(horizon: usize) -> usize {
        ((horizon as f64).powf(2.0 / 3.0).ceil() as usize).max(1)
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn buffer(&self, arm: usize) -> &VecDeque<f64> {
        &self.buffers[arm]
    }

    pub fn window_mean(&self, arm: usize) -> Option<f64> {
        let b = &self.buffers[arm];
        (!b.is_empty()).then(|| b.iter().sum::<f64>() / b.len() as f64)
    }
}

/// Unpulled arms first in index order, then the highest window mean (lowest
/// index on ties).
pub fn swa_select(state: &SwaState) -> usize {
    if let Some(k) = state.buffers.iter().position(VecDeque::is_empty) {
        return k;
    }
    let mut best = 0;
    let mut best_mean = f64::NEG_INFINITY;
    for k in 0..state.buffers.len() {
        let m = state.window_mean(k).expect("every arm pulled");
        if m > best_mean {
            best = k;
            best_mean = m;
        }
    }
    best
}

pub fn swa_update(state: &mut SwaState, arm: usize, reward: f64) {
    let window = state.window;
    let b = &mut state.buffers[arm];
    if b.len() == window {
        b.pop_front();
    }
    b.push_back(reward);
}

pub struct SwaAgent {
    state: SwaState,
}

impl SwaAgent {
    pub fn new(arms: usize, window: usize) -> Result<Self> {
        Ok(SwaAgent {
            state: SwaState::new(arms, window)?,
        })
    }

    pub fn state(&self) -> &SwaState {
        &self.state
    }
}

impl Agent for SwaAgent {
    fn step(&mut self, env: &mut EnvHandle<'_>) -> Result<Decision> {
        env.observe()?;
        let arm = swa_select(&self.state);
        let reward = env.pull(arm)?;
        swa_update(&mut self.state, arm, reward);
        Ok(Decision {
            arm,
            reward,
            logits: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::{BernoulliSpec, EnvSpec, Environment, RottingSpec};
    use proptest::prelude::*;

    #[test]
    fn confident_posterior_dominates() {
        let post = BetaPosterior {
            alpha: vec![1000.0, 1.0],
            beta: vec![1.0, 1000.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let zeros = (0..10_000).filter(|_| thompson_select(&post, &mut rng) == 0).count();
        assert!(zeros as f64 / 1e4 > 0.99);
    }

    #[test]
    fn success_increments_alpha() {
        let mut post = BetaPosterior::uniform(2);
        thompson_update(&mut post, 0, 1.0);
        assert_eq!((post.alpha[0], post.beta[0]), (2.0, 1.0));
    }

    fn play(agent: &mut dyn Agent, env: &mut dyn Environment, steps: usize) -> Vec<(usize, f64)> {
        let mut h = EnvHandle::new(env);
        (0..steps)
            .map(|_| {
                let d = agent.step(&mut h).unwrap();
                (d.arm, h.take_result().unwrap().expected_regret)
            })
            .collect()
    }

    #[test]
    fn thompson_regret_flattens() {
        let mut env = EnvSpec::Bernoulli(BernoulliSpec::with_priors(vec![0.9, 0.1])).build(10_000, 3).unwrap();
        let mut agent = ThompsonAgent::new(2, 4);
        let trace = play(&mut agent, env.as_mut(), 10_000);
        let late: f64 = trace[9000..].iter().map(|t| t.1).sum();
        assert!(late / 1000.0 < 0.02, "{late}");
        assert!((agent.posterior().observations() - 10_000.0).abs() < 1e-9);
        assert_eq!(agent.clipped_rewards(), 0);
    }

    #[test]
    fn window_one_tracks_latest_reward() {
        let mut s = SwaState::new(2, 1).unwrap();
        swa_update(&mut s, 0, 0.2);
        swa_update(&mut s, 1, 0.5);
        assert_eq!(swa_select(&s), 1);
        swa_update(&mut s, 1, 0.1);
        assert_eq!(swa_select(&s), 0);
        assert_eq!(s.buffer(1).len(), 1);
    }

    #[test]
    fn unpulled_arms_come_first() {
        let mut s = SwaState::new(3, 5).unwrap();
        assert_eq!(swa_select(&s), 0);
        swa_update(&mut s, 0, 1.0);
        assert_eq!(swa_select(&s), 1);
        swa_update(&mut s, 1, 1.0);
        assert_eq!(swa_select(&s), 2);
        assert!(SwaState::new(3, 0).is_err());
        assert_eq!(SwaState::default_window(1000), 100);
    }

    #[test]
    fn swa_prefers_the_better_stationary_arm() {
        let mut env = EnvSpec::Bernoulli(BernoulliSpec::with_priors(vec![0.9, 0.1])).build(10_000, 5).unwrap();
        let mut agent = SwaAgent::new(2, 100).unwrap();
        let trace = play(&mut agent, env.as_mut(), 10_000);
        let best = trace[9000..].iter().filter(|t| t.0 == 0).count();
        assert!(best as f64 / 1000.0 >= 0.9, "{best}");
    }

    #[test]
    fn swa_abandons_the_rotten_arm_within_one_window() {
        let window = SwaState::default_window(30_000);
        let mut env = EnvSpec::Rotting(RottingSpec::default()).build(30_000, 6).unwrap();
        let mut agent = SwaAgent::new(2, window).unwrap();
        let mut h = EnvHandle::new(env.as_mut());
        let mut pulls2 = 0;
        let mut decayed_at = None;
        for t in 0..30_000 {
            let d = h_step(&mut agent, &mut h);
            if d == 1 {
                pulls2 += 1;
                if pulls2 == 7500 {
                    decayed_at = Some(t);
                }
            }
            if let Some(t0) = decayed_at {
                if t > t0 + window {
                    // arm 1's window may hold a single stale sample, so compare
                    // against its true mean
                    let m2 = agent.state().window_mean(1).unwrap();
                    assert!(m2 < 0.5, "arm 2 window mean {m2} at t={t}");
                    return;
                }
            }
        }
        panic!("arm 2 never decayed");
    }

    fn h_step(agent: &mut SwaAgent, h: &mut EnvHandle<'_>) -> usize {
        agent.step(h).unwrap().arm
    }

    proptest! {
        #[test]
        fn swa_is_deterministic(rewards in proptest::collection::vec(0.0..1.0f64, 1..200)) {
            let run = || {
                let mut s = SwaState::new(3, 7).unwrap();
                rewards.iter().map(|&r| {
                    let a = swa_select(&s);
                    swa_update(&mut s, a, r);
                    a
                }).collect::<Vec<_>>()
            };
            prop_assert_eq!(run(), run());
        }

        #[test]
        fn posterior_counts_are_conserved(updates in proptest::collection::vec((0usize..4, any::<bool>()), 0..300)) {
            let mut post = BetaPosterior::uniform(4);
            for &(arm, win) in &updates {
                thompson_update(&mut post, arm, if win { 1.0 } else { 0.0 });
            }
            prop_assert!((post.observations() - updates.len() as f64).abs() < 1e-9);
            prop_assert!(post.alpha.iter().chain(&post.beta).all(|&v| v >= 1.0));
        }
    }
}
