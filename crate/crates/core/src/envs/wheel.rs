use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{realized_pull, Clock, EnvOutcome, Environment, PullResult, RegretConvention};
use crate::error::{Error, Result};

/// Wheel bandit constants. `sigma` is the reward standard deviation.
/// `rotation_period: Some(P)` rotates the quadrant map by `ω t` with `ω = 2π / P`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WheelSpec {
    pub delta: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub mu3: f64,
    pub sigma: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation_period: Option<f64>,
}

impl Default for WheelSpec {
    fn default() -> Self {
        WheelSpec {
            delta: 0.5,
            mu1: 1.2,
            mu2: 1.0,
            mu3: 50.0,
            sigma: 0.01,
            rotation_period: None,
        }
    }
}

impl WheelSpec {
    pub fn rotating(period: f64) -> Self {
        WheelSpec {
            rotation_period: Some(period),
            ..WheelSpec::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config("delta", format!("must lie in (0, 1), got {}", self.delta)));
        }
        if !(self.sigma > 0.0) {
            return Err(Error::config("sigma", format!("must be > 0, got {}", self.sigma)));
        }
        if let Some(p) = self.rotation_period {
            if !(p > 0.0) {
                return Err(Error::config("rotation_period", format!("must be > 0, got {p}")));
            }
        }
        Ok(())
    }

    /// Per-arm means for a context `(x, y)` at time `t`.
    pub fn means(&self, context: [f64; 2], t: usize) -> Vec<f64> {
        let mut means = vec![self.mu1, self.mu2, self.mu2, self.mu2, self.mu2];
        let [x, y] = context;
        if (x * x + y * y).sqrt() > self.delta {
            let angle = self.rotation_period.map_or(0.0, |p| 2.0 * PI * t as f64 / p);
            let (xr, yr) = rotate(x, y, angle);
            means[wheel_arm_for_quadrant(xr, yr)] = self.mu3;
        }
        means
    }
}

/// `(x', y') = [[cos a, sin a], [-sin a, cos a]] (x, y)`.
pub fn rotate(x: f64, y: f64, angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (c * x + s * y, -s * x + c * y)
}

/// Zero-based arm paying `μ3` outside the inner disk:
/// `(+,+) -> 1`, `(-,+) -> 2`, `(-,-) -> 3`, `(+,-) -> 4`. Zero counts as positive.
pub fn wheel_arm_for_quadrant(x: f64, y: f64) -> usize {
    match (x >= 0.0, y >= 0.0) {
        (true, true) => 1,
        (false, true) => 2,
        (false, false) => 3,
        (true, false) => 4,
    }
}

/// Uniform point on the unit disk via the radial method `r = sqrt(u)`.
pub fn sample_disk<R: Rng + ?Sized>(rng: &mut R) -> [f64; 2] {
    let r = rng.random::<f64>().sqrt();
    let theta = 2.0 * PI * rng.random::<f64>();
    [r * theta.cos(), r * theta.sin()]
}

pub struct Wheel {
    spec: WheelSpec,
    clock: Clock,
    rng: ChaCha8Rng,
}

impl Wheel {
    pub fn new(spec: WheelSpec, horizon: usize, rng: ChaCha8Rng) -> Self {
        Wheel {
            spec,
            clock: Clock::new(horizon),
            rng,
        }
    }
}

impl Environment for Wheel {
    fn arms(&self) -> usize {
        5
    }

    fn context_dim(&self) -> usize {
        2
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
        let (spec, rng) = (&self.spec, &mut self.rng);
        self.clock.reveal(|t| {
            let ctx = sample_disk(rng);
            let means = spec.means(ctx, t);
            let noise = Normal::new(0.0, spec.sigma).expect("sigma validated");
            let rewards = means.iter().map(|m| m + noise.sample(rng)).collect();
            EnvOutcome::realized(ctx.to_vec(), rewards, means)
        })
    }

    fn pull(&mut self, arm: usize) -> Result<PullResult> {
        let outcome = self.clock.take()?;
        realized_pull(&outcome, arm)
    }
}
