//! Online REINFORCE training of the recurrent policy with the energy regularizer.
//!
//! Each step: run the policy, pick an arm, observe only that arm's reward, build
//! `L = L_R + α_EC · L_EC` on the step's tape, backpropagate and apply one
//! RMSprop update. The hidden state carried into the next step is detached.

mod rmsprop;

pub use rmsprop::RmsProp;

use std::collections::VecDeque;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::diffcore::{softmax, GradRef, Gradients, Tape, Tensor, Var};
use crate::envs::EnvHandle;
use crate::error::{Error, Result};
use crate::policy::{
    draw_masks, forward, forward_with_masks, init_params, step_on_tape, HiddenState, ParamVars,
    PolicyParams,
};

/// How an arm is chosen from the policy's probabilities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Exploration {
    /// Sample `i` with probability `p_i`.
    Sample,
    /// Uniform arm with probability `ε`, otherwise `argmax p`.
    EpsilonGreedy(f64),
    /// Sample from `softmax(z / T)`.
    SoftmaxTemperature(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub alpha_ec: f64,
    pub learning_rate: f64,
    pub p_dropout: f64,
    pub exploration: Exploration,
    pub rmsprop_decay: f64,
    pub rmsprop_eps: f64,
    /// Steps through which gradients flow; 1 detaches the carried hidden state.
    pub bptt_window: usize,
    pub layers: usize,
    pub hidden: usize,
    /// Stop updating parameters after this many steps.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freeze_after: Option<usize>,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            alpha_ec: 0.1,
            learning_rate: 0.001,
            p_dropout: 0.1,
            exploration: Exploration::Sample,
            rmsprop_decay: 0.99,
            rmsprop_eps: 1e-8,
            bptt_window: 1,
            layers: 2,
            hidden: 128,
            freeze_after: None,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, field: &str, msg: String| if ok { Ok(()) } else { Err(Error::config(field, msg)) };
        check(
            self.alpha_ec >= 0.0 && self.alpha_ec.is_finite(),
            "alpha_ec",
            format!("must be >= 0, got {}", self.alpha_ec),
        )?;
        check(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning_rate",
            format!("must be > 0, got {}", self.learning_rate),
        )?;
        check(
            (0.0..1.0).contains(&self.p_dropout),
            "p_dropout",
            format!("must lie in [0, 1), got {}", self.p_dropout),
        )?;
        check(
            (0.0..1.0).contains(&self.rmsprop_decay),
            "rmsprop_decay",
            format!("must lie in [0, 1), got {}", self.rmsprop_decay),
        )?;
        check(self.rmsprop_eps > 0.0, "rmsprop_eps", format!("must be > 0, got {}", self.rmsprop_eps))?;
        check(self.bptt_window >= 1, "bptt_window", "must be at least 1".into())?;
        check(self.layers >= 1, "layers", "must be at least 1".into())?;
        check(self.hidden >= 1, "hidden", "must be at least 1".into())?;
        match self.exploration {
            Exploration::Sample => Ok(()),
            Exploration::EpsilonGreedy(e) => check((0.0..=1.0).contains(&e), "epsilon", format!("must lie in [0, 1], got {e}")),
            Exploration::SoftmaxTemperature(t) => check(t > 0.0 && t.is_finite(), "temperature", format!("must be > 0, got {t}")),
        }
    }
}

/// `L_R = -(r - r̄) ln p_chosen`.
pub fn loss_reinforce(reward: f64, mean_reward: f64, p_chosen: f64) -> Result<f64> {
    if !(p_chosen > 0.0) {
        return Err(Error::Numeric(format!("chosen probability must be > 0, got {p_chosen}")));
    }
    Ok(-(reward - mean_reward) * p_chosen.ln())
}

/// Mean Boltzmann energy magnitude `Σ p_i z_i` (the energy of neuron `i` is `-z_i`,
/// so this is `-⟨E⟩`; its square is the same).
pub fn mean_logit(logits: &[f64], probs: &[f64]) -> f64 {
    logits.iter().zip(probs).map(|(z, p)| z * p).sum()
}

/// `L_EC = ⟨E⟩² = (Σ p_i z_i)²`.
pub fn loss_energy(logits: &[f64], probs: &[f64]) -> f64 {
    mean_logit(logits, probs).powi(2)
}

fn check_simplex(p: &[f64]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    if p.is_empty() || (sum - 1.0).abs() > 1e-6 || p.iter().any(|&v| !(v >= 0.0)) {
        return Err(Error::Contract(format!(
            "probabilities are not on the simplex (sum {sum}, len {})",
            p.len()
        )));
    }
    Ok(())
}

fn sample_index<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &v) in p.iter().enumerate() {
        acc += v;
        if u < acc {
            return i;
        }
    }
    // rounding left a sliver past the last cumulative sum
    p.iter().rposition(|&v| v > 0.0).unwrap_or(p.len() - 1)
}

fn argmax(p: &[f64]) -> usize {
    crate::envs::argmax(p)
}

/// Chooses an arm from probabilities `p` under the given exploration mode.
pub fn select_action<R: Rng + ?Sized>(p: &[f64], mode: Exploration, rng: &mut R) -> Result<usize> {
    check_simplex(p)?;
    Ok(match mode {
        Exploration::Sample => sample_index(p, rng),
        Exploration::EpsilonGreedy(eps) => {
            if rng.random::<f64>() < eps {
                rng.random_range(0..p.len())
            } else {
                argmax(p)
            }
        }
        Exploration::SoftmaxTemperature(temp) => {
            // softmax(z / T) == softmax(ln p / T) by shift invariance
            let scaled: Vec<f64> = p.iter().map(|v| v.ln() / temp).collect();
            sample_index(&softmax(&scaled), rng)
        }
    })
}

/// What an agent did on one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub arm: usize,
    pub reward: f64,
    /// Policy logits behind the decision, for recurrent agents.
    pub logits: Option<Vec<f64>>,
}

/// Anything that can play a bandit one step at a time.
pub trait Agent: Send {
    fn step(&mut self, env: &mut EnvHandle<'_>) -> Result<Decision>;
}

/// Running mean of observed rewards.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RewardMean {
    pub count: usize,
    pub sum: f64,
}

impl RewardMean {
    /// Mean of rewards seen so far; 0 before the first observation.
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.sum / self.count as f64
        }
    }

    pub fn push(&mut self, r: f64) {
        self.count += 1;
        self.sum += r;
    }
}

struct History {
    context: Vec<f64>,
    masks: Vec<Vec<f64>>,
    hidden_before: HiddenState,
}

/// Energy-regularized recurrent agent (and its no-EC / ε-greedy / temperature
/// ablations, which differ only in [`AgentConfig`]).
pub struct RnnAgent {
    cfg: AgentConfig,
    params: PolicyParams,
    hidden: HiddenState,
    reward_mean: RewardMean,
    optimizer: RmsProp,
    rng: ChaCha8Rng,
    history: VecDeque<History>,
    steps: usize,
}

/// Loss pieces recorded on a step's tape.
pub struct LossVars {
    pub total: Var,
    pub reinforce: Var,
    pub energy: Var,
}

/// Records `L_R + α L_EC` for the given step outputs.
pub fn record_loss(
    tape: &mut Tape<'_>,
    logits: Var,
    probs: Var,
    arm: usize,
    reward: f64,
    mean_reward: f64,
    alpha_ec: f64,
) -> Result<LossVars> {
    let p_chosen = tape.value(probs)[arm];
    if !(p_chosen > 0.0) {
        return Err(Error::Numeric(format!("chosen probability underflowed to {p_chosen}")));
    }
    let chosen = tape.pick(probs, arm)?;
    let log_p = tape.ln(chosen);
    let reinforce = tape.scale(log_p, -(reward - mean_reward));
    let e = tape.dot(probs, logits)?;
    let energy = tape.square(e);
    let weighted = tape.scale(energy, alpha_ec);
    let total = tape.add(reinforce, weighted)?;
    Ok(LossVars {
        total,
        reinforce,
        energy,
    })
}

impl RnnAgent {
    pub fn new(cfg: AgentConfig, input: usize, arms: usize, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = init_params(cfg.layers, input, cfg.hidden, arms, &mut rng)?;
        Ok(Self::with_params(cfg, params, rng))
    }

    pub fn with_params(cfg: AgentConfig, params: PolicyParams, rng: ChaCha8Rng) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        let optimizer = RmsProp::new(cfg.learning_rate, cfg.rmsprop_decay, cfg.rmsprop_eps, &shapes);
        RnnAgent {
            hidden: HiddenState::zeros(&params),
            cfg,
            params,
            reward_mean: RewardMean::default(),
            optimizer,
            rng,
            history: VecDeque::new(),
            steps: 0,
        }
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn hidden(&self) -> &HiddenState {
        &self.hidden
    }

    pub fn reward_mean(&self) -> RewardMean {
        self.reward_mean
    }

    pub fn optimizer(&self) -> &RmsProp {
        &self.optimizer
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    fn learning(&self) -> bool {
        self.cfg.freeze_after.is_none_or(|f| self.steps < f)
    }

    /// One iteration of the online loop against `env`.
    pub fn train_step(&mut self, env: &mut EnvHandle<'_>) -> Result<Decision> {
        let context = env.observe()?;
        let mean_reward = self.reward_mean.mean();
        let learning = self.learning();
        let AgentConfig {
            alpha_ec,
            p_dropout,
            exploration,
            bptt_window,
            ..
        } = self.cfg;
        let masks = draw_masks(&self.params, p_dropout, &mut self.rng)?;

        let mut tape = Tape::factored();
        let (vars, logits, probs, new_hidden) = if bptt_window <= 1 || self.history.is_empty() {
            let f = forward_with_masks(&mut tape, &self.params, &context, &self.hidden, masks.clone())?;
            (f.params, f.step.logits, f.step.probs, f.output.hidden)
        } else {
            replay_window(&mut tape, &self.params, &self.history, &context, &masks)?
        };
        let probs_value = tape.value(probs).to_vec();
        let logits_value = tape.value(logits).to_vec();
        let arm = select_action(&probs_value, exploration, &mut self.rng)?;
        let reward = env.pull(arm)?;

        let grads = if learning {
            let loss = record_loss(&mut tape, logits, probs, arm, reward, mean_reward, alpha_ec)?;
            Some((tape.backward(loss.total)?, vars.all()))
        } else {
            None
        };
        drop(tape);

        if let Some((grads, vars)) = grads {
            self.apply(&grads, &vars)?;
        }
        if bptt_window > 1 {
            self.history.push_back(History {
                context,
                masks,
                hidden_before: self.hidden.clone(),
            });
            while self.history.len() > bptt_window - 1 {
                self.history.pop_front();
            }
        }
        self.hidden = new_hidden;
        self.reward_mean.push(reward);
        self.steps += 1;
        Ok(Decision {
            arm,
            reward,
            logits: Some(logits_value),
        })
    }

    fn apply(&mut self, grads: &Gradients, vars: &[Var]) -> Result<()> {
        let g: Vec<Option<GradRef<'_>>> = vars.iter().map(|&v| grads.grad(v)).collect();
        self.optimizer.step(self.params.tensors_mut(), &g)
    }
}

/// Re-runs the stored window with current parameters, then the current step.
fn replay_window<'a>(
    tape: &mut Tape<'a>,
    params: &'a PolicyParams,
    history: &VecDeque<History>,
    context: &[f64],
    masks: &[Vec<f64>],
) -> Result<(ParamVars, Var, Var, HiddenState)> {
    let vars = params.register(tape);
    let constant = |tape: &mut Tape<'a>, v: &[f64]| tape.constant(Tensor::vector(v.to_vec()));
    let mut h: Vec<Var> = history[0].hidden_before.0.iter().map(|v| constant(tape, v)).collect();
    for past in history {
        let cv = (!past.context.is_empty()).then(|| constant(tape, &past.context));
        h = step_on_tape(tape, &vars, cv, &h, &past.masks)?.hidden;
    }
    let cv = (!context.is_empty()).then(|| constant(tape, context));
    let step = step_on_tape(tape, &vars, cv, &h, masks)?;
    let hidden = HiddenState(step.hidden.iter().map(|&v| tape.value(v).to_vec()).collect());
    Ok((vars, step.logits, step.probs, hidden))
}

impl Agent for RnnAgent {
    fn step(&mut self, env: &mut EnvHandle<'_>) -> Result<Decision> {
        self.train_step(env)
    }
}

/// Result of [`minimize_energy`].
#[derive(Debug, Clone, PartialEq)]
pub struct EnergyDescent {
    pub steps: usize,
    pub logits: Vec<f64>,
    pub mean_logit: f64,
    pub converged: bool,
}

/// Plain gradient descent on `L_EC` alone for a network with a fixed input and
/// zero initial hidden state, stopping once `|Σ p_i z_i| < tol`.
pub fn minimize_energy(
    params: &mut PolicyParams,
    context: &[f64],
    learning_rate: f64,
    max_steps: usize,
    tol: f64,
) -> Result<EnergyDescent> {
    let hidden = HiddenState::zeros(params);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for step in 0..=max_steps {
        let (energy, logits, grads, vars) = {
            let mut tape = Tape::new();
            let f = forward(&mut tape, params, context, &hidden, 0.0, &mut rng)?;
            let e = mean_logit(&f.output.logits, &f.output.probs);
            if e.abs() < tol || step == max_steps {
                (e, f.output.logits, None, Vec::new())
            } else {
                let dot = tape.dot(f.step.probs, f.step.logits)?;
                let loss = tape.square(dot);
                (e, f.output.logits, Some(tape.backward(loss)?), f.params.all())
            }
        };
        let Some(grads) = grads else {
            return Ok(EnergyDescent {
                steps: step,
                logits,
                mean_logit: energy,
                converged: energy.abs() < tol,
            });
        };
        for (t, v) in params.tensors_mut().into_iter().zip(vars) {
            if let Some(g) = grads.get(v) {
                for (p, g) in t.values_mut().iter_mut().zip(g) {
                    *p -= learning_rate * g;
                }
            }
        }
    }
    unreachable!("loop returns on its last iteration")
}
