use crate::diffcore::{GradRef, Tensor};
use crate::error::{Error, Result};

/// RMSprop: `acc <- ρ acc + (1 - ρ) g²`, `θ <- θ - lr g / (sqrt(acc) + eps)`.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub eps: f64,
    accumulators: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(learning_rate: f64, decay: f64, eps: f64, shapes: &[usize]) -> Self {
        RmsProp {
            learning_rate,
            decay,
            eps,
            accumulators: shapes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn accumulators(&self) -> &[Vec<f64>] {
        &self.accumulators
    }

    /// Applies one update; `grads[k]` of `None` is treated as a zero gradient.
    pub fn step(&mut self, params: Vec<&mut Tensor>, grads: &[Option<GradRef<'_>>]) -> Result<()> {
        if params.len() != self.accumulators.len() || grads.len() != params.len() {
            return Err(Error::dims(
                "rmsprop",
                format!("{} accumulators", self.accumulators.len()),
                format!("{} params, {} grads", params.len(), grads.len()),
            ));
        }
        let (rho, lr, eps) = (self.decay, self.learning_rate, self.eps);
        for ((param, acc), grad) in params.into_iter().zip(&mut self.accumulators).zip(grads) {
            let p = param.values_mut();
            let n = p.len();
            if acc.len() != n {
                return Err(Error::dims("rmsprop", n, acc.len()));
            }
            match grad {
                None => {
                    for a in acc.iter_mut() {
                        *a *= rho;
                    }
                }
                // a single outer product is never materialized
                Some(GradRef { dense: None, factors: [f] }) => {
                    let cols = f.right.len();
                    if f.left.len() * cols != n {
                        return Err(Error::dims("rmsprop", n, format!("{}x{}", f.left.len(), cols)));
                    }
                    for (i, &l) in f.left.iter().enumerate() {
                        let row = i * cols..(i + 1) * cols;
                        update(&mut p[row.clone()], &mut acc[row], f.right.iter().map(|&r| l * r), rho, lr, eps);
                    }
                }
                Some(GradRef { dense: Some(g), factors: [] }) => {
                    if g.len() != n {
                        return Err(Error::dims("rmsprop", n, g.len()));
                    }
                    update(p, acc, g.iter().copied(), rho, lr, eps);
                }
                Some(g) => {
                    let g = g.to_dense(n);
                    update(p, acc, g.into_iter(), rho, lr, eps);
                }
            }
        }
        Ok(())
    }
}

#[inline]
fn update(p: &mut [f64], acc: &mut [f64], g: impl Iterator<Item = f64>, rho: f64, lr: f64, eps: f64) {
    for ((p, a), g) in p.iter_mut().zip(acc.iter_mut()).zip(g) {
        *a = rho * *a + (1.0 - rho) * g * g;
        *p -= lr * g / (a.sqrt() + eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_learning_rate_times_normalized_sign() {
        let mut t = Tensor::vector(vec![1.0, 1.0, 1.0]);
        let mut opt = RmsProp::new(0.001, 0.99, 1e-8, &[3]);
        opt.step(vec![&mut t], &[Some(GradRef::dense(&[2.0, -0.5, 0.0]))]).unwrap();
        // acc = 0.01 g², so g / sqrt(acc) = sign(g) / 0.1
        let v = t.values();
        assert!((v[0] - (1.0 - 0.01)).abs() < 1e-8);
        assert!((v[1] - (1.0 + 0.01)).abs() < 1e-8);
        assert_eq!(v[2], 1.0);
        assert!((opt.accumulators()[0][0] - 0.04).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_decays_accumulator_only() {
        let mut t = Tensor::vector(vec![0.5]);
        let mut opt = RmsProp::new(0.1, 0.9, 1e-8, &[1]);
        opt.step(vec![&mut t], &[Some(GradRef::dense(&[1.0]))]).unwrap();
        let after = t.values()[0];
        opt.step(vec![&mut t], &[None]).unwrap();
        assert_eq!(t.values()[0], after);
        assert!((opt.accumulators()[0][0] - 0.09).abs() < 1e-15);
    }
}
