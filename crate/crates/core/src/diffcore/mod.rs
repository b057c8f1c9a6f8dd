//! Minimal reverse-mode differentiation over dense `f64` vectors and matrices.
//!
//! A [`Tape`] is built fresh for every forward pass; primitives record their
//! inputs and [`Tape::backward`] replays them in reverse, summing adjoints over
//! fan-out. Only what the recurrent policy and its two loss terms need is here.

mod tape;
mod tensor;

pub use tape::{sigmoid, softmax, GradRef, Gradients, Outer, Tape, Var};
pub use tensor::{Shape, Tensor};


use rand::Rng;

use crate::error::{Error, Result};

/// Inverted-dropout mask: each entry is `0` with probability `p_dropout`, otherwise
/// `1 / (1 - p_dropout)`, so the masked value is unbiased.
pub fn dropout_mask<R: Rng + ?Sized>(p_dropout: f64, len: usize, rng: &mut R) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&p_dropout) {
        return Err(Error::config(
            "p_dropout",
            format!("must lie in [0, 1), got {p_dropout}"),
        ));
    }
    if p_dropout == 0.0 {
        return Ok(vec![1.0; len]);
    }
    let keep = 1.0 / (1.0 - p_dropout);
    Ok((0..len)
        .map(|_| if rng.random::<f64>() < p_dropout { 0.0 } else { keep })
        .collect())
}
