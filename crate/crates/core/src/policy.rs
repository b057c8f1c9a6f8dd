//! Stacked GRU policy: `h_t = f(c_t, h_{t-1})`, logits `z = W_o h_top + b_o`,
//! probabilities `p = softmax(z)`.
//!
//! Gate convention: `h' = (1 - u) ⊙ h + u ⊙ ĥ`. Dropout is applied to each
//! layer's output as passed upward and into the head; the recurrent state carried
//! to the next step is the un-dropped value.

use std::io::{BufRead, Write};

use rand::Rng;

use crate::diffcore::{dropout_mask, Shape, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// One value per GRU gate: reset `r`, update `u`, candidate `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gates<T> {
    pub reset: T,
    pub update: T,
    pub candidate: T,
}

impl<T> Gates<T> {
    fn map<'s, U>(&'s self, mut f: impl FnMut(&'s T) -> U) -> Gates<U> {
        Gates {
            reset: f(&self.reset),
            update: f(&self.update),
            candidate: f(&self.candidate),
        }
    }

    fn iter(&self) -> impl Iterator<Item = &T> {
        [&self.reset, &self.update, &self.candidate].into_iter()
    }

    fn iter_mut(&mut self) -> impl Iterator<Item = &mut T> {
        [&mut self.reset, &mut self.update, &mut self.candidate].into_iter()
    }
}

const GATE_NAMES: [&str; 3] = ["r", "u", "c"];

#[derive(Debug, Clone, PartialEq)]
pub struct GruLayerParams {
    pub input_size: usize,
    pub hidden_size: usize,
    /// Input-to-hidden matrices (`d x m`); absent when the layer has no input.
    pub input: Option<Gates<Tensor>>,
    /// Hidden-to-hidden matrices (`d x d`).
    pub recurrent: Gates<Tensor>,
    pub bias: Gates<Tensor>,
}

impl GruLayerParams {
    fn zeros(input_size: usize, hidden_size: usize) -> Self {
        let mat = |cols| Tensor::zeros(Shape::Matrix { rows: hidden_size, cols });
        let gates = |f: &dyn Fn() -> Tensor| Gates {
            reset: f(),
            update: f(),
            candidate: f(),
        };
        GruLayerParams {
            input_size,
            hidden_size,
            input: (input_size > 0).then(|| gates(&|| mat(input_size))),
            recurrent: gates(&|| mat(hidden_size)),
            bias: gates(&|| Tensor::zeros(Shape::Vector(hidden_size))),
        }
    }

    fn tensors(&self) -> impl Iterator<Item = &Tensor> {
        self.input
            .iter()
            .flat_map(Gates::iter)
            .chain(self.recurrent.iter())
            .chain(self.bias.iter())
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.input
            .iter_mut()
            .flat_map(Gates::iter_mut)
            .chain(self.recurrent.iter_mut())
            .chain(self.bias.iter_mut())
    }
}

/// All learnable weights: the GRU stack plus the affine head.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyParams {
    pub layers: Vec<GruLayerParams>,
    pub head_weight: Tensor,
    pub head_bias: Tensor,
}

/// Builds a zero-valued parameter set with the given architecture.
pub fn zero_params(layers: usize, input: usize, hidden: usize, actions: usize) -> Result<PolicyParams> {
    validate_arch(layers, hidden, actions)?;
    Ok(PolicyParams {
        layers: (0..layers)
            .map(|k| GruLayerParams::zeros(if k == 0 { input } else { hidden }, hidden))
            .collect(),
        head_weight: Tensor::zeros(Shape::Matrix {
            rows: actions,
            cols: hidden,
        }),
        head_bias: Tensor::zeros(Shape::Vector(actions)),
    })
}

fn validate_arch(layers: usize, hidden: usize, actions: usize) -> Result<()> {
    if layers < 1 {
        return Err(Error::config("layers", "need at least one GRU layer"));
    }
    if hidden < 1 {
        return Err(Error::config("hidden", "hidden size must be at least 1"));
    }
    if actions < 2 {
        return Err(Error::config("actions", format!("need at least 2 actions, got {actions}")));
    }
    Ok(())
}

/// Weights uniform on `[-1/sqrt(d), 1/sqrt(d)]`, biases zero.
pub fn init_params<R: Rng + ?Sized>(
    layers: usize,
    input: usize,
    hidden: usize,
    actions: usize,
    rng: &mut R,
) -> Result<PolicyParams> {
    let mut params = zero_params(layers, input, hidden, actions)?;
    let bound = 1.0 / (hidden as f64).sqrt();
    for (name, t) in params.named_tensors_mut() {
        if !name.contains(".b_") && name != "head.b" {
            for v in t.values_mut() {
                *v = rng.random_range(-bound..=bound);
            }
        }
    }
    Ok(params)
}

impl PolicyParams {
    pub fn input_size(&self) -> usize {
        self.layers[0].input_size
    }

    pub fn hidden_size(&self) -> usize {
        self.layers[0].hidden_size
    }

    pub fn actions(&self) -> usize {
        self.head_bias.len()
    }

    pub fn layer_count(&self) -> usize {
        self.layers.len()
    }

    /// Every tensor in canonical order: layers bottom-up (`W_*`, `U_*`, `b_*`), then
    /// the head weight and bias.
    pub fn tensors(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(GruLayerParams::tensors)
            .chain([&self.head_weight, &self.head_bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out: Vec<&mut Tensor> = self
            .layers
            .iter_mut()
            .flat_map(GruLayerParams::tensors_mut)
            .collect();
        out.push(&mut self.head_weight);
        out.push(&mut self.head_bias);
        out
    }

    /// Names in the same order as [`PolicyParams::tensors`].
    pub fn names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.input.is_some() {
                names.extend(GATE_NAMES.iter().map(|g| format!("layer{k}.w_{g}")));
            }
            names.extend(GATE_NAMES.iter().map(|g| format!("layer{k}.u_{g}")));
            names.extend(GATE_NAMES.iter().map(|g| format!("layer{k}.b_{g}")));
        }
        names.push("head.w".into());
        names.push("head.b".into());
        names
    }

    pub fn named_tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let names = self.names();
        names.into_iter().zip(self.tensors_mut()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Registers every tensor on `tape` as a differentiable leaf.
    pub fn register<'a>(&'a self, tape: &mut Tape<'a>) -> ParamVars {
        let layers = self
            .layers
            .iter()
            .map(|layer| LayerVars {
                input: layer.input.as_ref().map(|g| g.map(|t| tape.param(t))),
                recurrent: layer.recurrent.map(|t| tape.param(t)),
                bias: layer.bias.map(|t| tape.param(t)),
            })
            .collect();
        ParamVars {
            layers,
            head_weight: tape.param(&self.head_weight),
            head_bias: tape.param(&self.head_bias),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerVars {
    input: Option<Gates<Var>>,
    recurrent: Gates<Var>,
    bias: Gates<Var>,
}

/// Tape handles for a registered [`PolicyParams`].
#[derive(Debug, Clone)]
pub struct ParamVars {
    layers: Vec<LayerVars>,
    head_weight: Var,
    head_bias: Var,
}

impl ParamVars {
    /// Handles in the canonical order of [`PolicyParams::tensors`].
    pub fn all(&self) -> Vec<Var> {
        let mut out = Vec::new();
        for layer in &self.layers {
            if let Some(g) = &layer.input {
                out.extend(g.iter().copied());
            }
            out.extend(layer.recurrent.iter().copied());
            out.extend(layer.bias.iter().copied());
        }
        out.push(self.head_weight);
        out.push(self.head_bias);
        out
    }
}

/// One hidden vector per layer.
#[derive(Debug, Clone, PartialEq)]
pub struct HiddenState(pub Vec<Vec<f64>>);

impl HiddenState {
    /// The all-zeros state `h_0`.
    pub fn zeros(params: &PolicyParams) -> Self {
        HiddenState(params.layers.iter().map(|l| vec![0.0; l.hidden_size]).collect())
    }

    pub fn layers(&self) -> &[Vec<f64>] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyOutput {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    pub hidden: HiddenState,
}

/// Tape slots produced by one recorded policy step.
#[derive(Debug, Clone)]
pub struct StepVars {
    pub hidden: Vec<Var>,
    pub logits: Var,
    pub probs: Var,
}

/// Records one GRU cell on the tape. `x` is `None` for an input-less layer.
pub fn gru_cell_on_tape(tape: &mut Tape<'_>, layer: &LayerVars, x: Option<Var>, h: Var) -> Result<Var> {
    let gate = |tape: &mut Tape<'_>, w: Option<Var>, u: Var, b: Var, h: Var| -> Result<Var> {
        let rec = tape.affine(u, h, Some(b))?;
        match (w, x) {
            (Some(w), Some(x)) => {
                let inp = tape.affine(w, x, None)?;
                tape.add(inp, rec)
            }
            (None, None) => Ok(rec),
            _ => Err(Error::dims(
                "gru_cell",
                if w.is_some() { "layer with inputs" } else { "input-less layer" },
                if x.is_some() { "an input vector" } else { "no input" },
            )),
        }
    };
    let w = |f: fn(&Gates<Var>) -> Var| layer.input.as_ref().map(f);

    let r_pre = gate(tape, w(|g| g.reset), layer.recurrent.reset, layer.bias.reset, h)?;
    let r = tape.sigmoid(r_pre);
    let u_pre = gate(tape, w(|g| g.update), layer.recurrent.update, layer.bias.update, h)?;
    let u = tape.sigmoid(u_pre);
    let rh = tape.mul(r, h)?;
    let c_pre = gate(tape, w(|g| g.candidate), layer.recurrent.candidate, layer.bias.candidate, rh)?;
    let candidate = tape.tanh(c_pre);

    let keep = tape.one_minus(u);
    let kept = tape.mul(keep, h)?;
    let fresh = tape.mul(u, candidate)?;
    tape.add(kept, fresh)
}

/// Records one full policy step: every GRU layer, dropout on each layer's output,
/// then the head and softmax. `masks` holds one dropout mask per layer.
pub fn step_on_tape(
    tape: &mut Tape<'_>,
    vars: &ParamVars,
    context: Option<Var>,
    hidden: &[Var],
    masks: &[Vec<f64>],
) -> Result<StepVars> {
    if hidden.len() != vars.layers.len() || masks.len() != vars.layers.len() {
        return Err(Error::dims(
            "policy step",
            format!("{} layers", vars.layers.len()),
            format!("{} hidden vectors, {} masks", hidden.len(), masks.len()),
        ));
    }
    let mut input = context;
    let mut new_hidden = Vec::with_capacity(hidden.len());
    for ((layer, &h), mask) in vars.layers.iter().zip(hidden).zip(masks) {
        let h_new = gru_cell_on_tape(tape, layer, input, h)?;
        new_hidden.push(h_new);
        let dropped = if mask.iter().all(|&m| m == 1.0) {
            h_new
        } else {
            tape.mask(h_new, mask.clone())?
        };
        input = Some(dropped);
    }
    let top = input.expect("at least one layer");
    let logits = tape.affine(vars.head_weight, top, Some(vars.head_bias))?;
    let probs = tape.softmax(logits)?;
    Ok(StepVars {
        hidden: new_hidden,
        logits,
        probs,
    })
}

/// Tape-recorded result of [`forward`].
pub struct Forward {
    pub params: ParamVars,
    pub step: StepVars,
    pub output: PolicyOutput,
    pub masks: Vec<Vec<f64>>,
}

pub fn draw_masks<R: Rng + ?Sized>(params: &PolicyParams, p_dropout: f64, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    params
        .layers
        .iter()
        .map(|l| dropout_mask(p_dropout, l.hidden_size, rng))
        .collect()
}

fn context_var(tape: &mut Tape<'_>, params: &PolicyParams, context: &[f64]) -> Result<Option<Var>> {
    if context.len() != params.input_size() {
        return Err(Error::dims(
            "policy forward",
            format!("input size {}", params.input_size()),
            format!("context of length {}", context.len()),
        ));
    }
    Ok((!context.is_empty()).then(|| tape.constant(Tensor::vector(context.to_vec()))))
}

/// Records one policy step with fresh dropout masks, treating `hidden` as a
/// constant (no gradient into earlier steps).
pub fn forward<'a, R: Rng + ?Sized>(
    tape: &mut Tape<'a>,
    params: &'a PolicyParams,
    context: &[f64],
    hidden: &HiddenState,
    p_dropout: f64,
    rng: &mut R,
) -> Result<Forward> {
    let masks = draw_masks(params, p_dropout, rng)?;
    forward_with_masks(tape, params, context, hidden, masks)
}

pub fn forward_with_masks<'a>(
    tape: &mut Tape<'a>,
    params: &'a PolicyParams,
    context: &[f64],
    hidden: &HiddenState,
    masks: Vec<Vec<f64>>,
) -> Result<Forward> {
    if hidden.0.len() != params.layer_count() {
        return Err(Error::dims(
            "policy forward",
            format!("{} layers", params.layer_count()),
            format!("{} hidden vectors", hidden.0.len()),
        ));
    }
    let vars = params.register(tape);
    let ctx = context_var(tape, params, context)?;
    let h: Vec<Var> = hidden
        .0
        .iter()
        .map(|v| tape.constant(Tensor::vector(v.clone())))
        .collect();
    let step = step_on_tape(tape, &vars, ctx, &h, &masks)?;
    let output = PolicyOutput {
        logits: tape.value(step.logits).to_vec(),
        probs: tape.value(step.probs).to_vec(),
        hidden: HiddenState(step.hidden.iter().map(|&v| tape.value(v).to_vec()).collect()),
    };
    Ok(Forward {
        params: vars,
        step,
        output,
        masks,
    })
}

/// Evaluates a single GRU cell outside of any training step.
pub fn gru_cell(layer: &GruLayerParams, x: &[f64], h: &[f64]) -> Result<Vec<f64>> {
    if x.len() != layer.input_size || h.len() != layer.hidden_size {
        return Err(Error::dims(
            "gru_cell",
            format!("input {} hidden {}", layer.input_size, layer.hidden_size),
            format!("x of {} h of {}", x.len(), h.len()),
        ));
    }
    let mut tape = Tape::new();
    let vars = LayerVars {
        input: layer.input.as_ref().map(|g| g.map(|t| tape.param(t))),
        recurrent: layer.recurrent.map(|t| tape.param(t)),
        bias: layer.bias.map(|t| tape.param(t)),
    };
    let xv = (!x.is_empty()).then(|| tape.constant(Tensor::vector(x.to_vec())));
    let hv = tape.constant(Tensor::vector(h.to_vec()));
    let out = gru_cell_on_tape(&mut tape, &vars, xv, hv)?;
    Ok(tape.value(out).to_vec())
}

const CHECKPOINT_MAGIC: &str = "energy-bandit-params";
const CHECKPOINT_VERSION: u32 = 1;

/// Writes a parameter snapshot.
///
/// Format (text, one item per line):
///
/// ```text
/// energy-bandit-params 1
/// arch <layers> <input> <hidden> <actions>
/// array <name> <rows> <cols>
/// <rows*cols whitespace-separated values, row-major>
/// ...
/// ```
///
/// A vector is written with `cols = 1`. Values use Rust's shortest round-trip
/// float formatting, so loading reproduces the parameters bit for bit.
pub fn write_checkpoint<W: Write>(params: &PolicyParams, mut out: W) -> std::io::Result<()> {
    writeln!(out, "{CHECKPOINT_MAGIC} {CHECKPOINT_VERSION}")?;
    writeln!(
        out,
        "arch {} {} {} {}",
        params.layer_count(),
        params.input_size(),
        params.hidden_size(),
        params.actions()
    )?;
    for (name, t) in params.names().iter().zip(params.tensors()) {
        writeln!(out, "array {name} {} {}", t.rows(), t.cols())?;
        let line: Vec<String> = t.values().iter().map(|v| v.to_string()).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    Ok(())
}

pub fn read_checkpoint<R: BufRead>(input: R) -> Result<PolicyParams> {
    let bad = |m: String| Error::parse("checkpoint", m);
    let mut lines = input.lines();
    let mut next = || -> Result<String> {
        match lines.next() {
            Some(Ok(l)) => Ok(l),
            Some(Err(e)) => Err(bad(e.to_string())),
            None => Err(bad("unexpected end of file".into())),
        }
    };
    let header = next()?;
    let mut it = header.split_whitespace();
    if it.next() != Some(CHECKPOINT_MAGIC) {
        return Err(bad(format!("bad magic line `{header}`")));
    }
    let version: u32 = it
        .next()
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad("missing version".into()))?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported version {version}")));
    }
    let arch = next()?;
    let dims: Vec<usize> = arch
        .strip_prefix("arch ")
        .ok_or_else(|| bad(format!("expected arch line, got `{arch}`")))?
        .split_whitespace()
        .map(|v| v.parse().map_err(|e| bad(format!("arch: {e}"))))
        .collect::<Result<_>>()?;
    let [layers, input, hidden, actions] = dims[..] else {
        return Err(bad(format!("arch needs 4 fields, got {}", dims.len())));
    };
    let mut params = zero_params(layers, input, hidden, actions)?;
    for (name, t) in params.named_tensors_mut() {
        let head = next()?;
        let fields: Vec<&str> = head.split_whitespace().collect();
        let expected = [t.rows().to_string(), t.cols().to_string()];
        if fields.len() != 4 || fields[0] != "array" || fields[1] != name || fields[2..] != expected {
            return Err(bad(format!(
                "expected `array {name} {} {}`, got `{head}`",
                expected[0], expected[1]
            )));
        }
        let values: Vec<f64> = next()?
            .split_whitespace()
            .map(|v| v.parse().map_err(|e| bad(format!("{name}: {e}"))))
            .collect::<Result<_>>()?;
        if values.len() != t.len() {
            return Err(bad(format!("{name}: expected {} values, got {}", t.len(), values.len())));
        }
        t.values_mut().copy_from_slice(&values);
    }
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::sigmoid;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn matvec(m: &Tensor, x: &[f64]) -> Vec<f64> {
        (0..m.rows())
            .map(|i| (0..m.cols()).map(|j| m.values()[i * m.cols() + j] * x[j]).sum())
            .collect()
    }

    // Independent evaluation of the four cell equations.
    fn hand_gru(layer: &GruLayerParams, x: &[f64], h: &[f64]) -> Vec<f64> {
        let d = layer.hidden_size;
        let wx = |g: fn(&Gates<Tensor>) -> &Tensor| match &layer.input {
            Some(w) => matvec(g(w), x),
            None => vec![0.0; d],
        };
        let ur = matvec(&layer.recurrent.reset, h);
        let uu = matvec(&layer.recurrent.update, h);
        let (wr, wu, wc) = (wx(|g| &g.reset), wx(|g| &g.update), wx(|g| &g.candidate));
        let r: Vec<f64> = (0..d).map(|i| sigmoid(wr[i] + ur[i] + layer.bias.reset.values()[i])).collect();
        let u: Vec<f64> = (0..d).map(|i| sigmoid(wu[i] + uu[i] + layer.bias.update.values()[i])).collect();
        let rh: Vec<f64> = (0..d).map(|i| r[i] * h[i]).collect();
        let uc = matvec(&layer.recurrent.candidate, &rh);
        (0..d)
            .map(|i| {
                let c = (wc[i] + uc[i] + layer.bias.candidate.values()[i]).tanh();
                (1.0 - u[i]) * h[i] + u[i] * c
            })
            .collect()
    }

    fn randomize(params: &mut PolicyParams, rng: &mut ChaCha8Rng) {
        for t in params.tensors_mut() {
            for v in t.values_mut() {
                *v = rng.random_range(-1.0..1.0);
            }
        }
    }

    #[test]
    fn zero_net_fixed_point() {
        let p = zero_params(1, 3, 4, 2).unwrap();
        let h = gru_cell(&p.layers[0], &[0.3, -1.0, 2.0], &[0.0; 4]).unwrap();
        assert_eq!(h, vec![0.0; 4]);
    }

    #[test]
    fn closed_update_gate_copies_state() {
        let mut p = init_params(1, 2, 3, 2, &mut rng(1)).unwrap();
        for v in p.layers[0].bias.update.values_mut() {
            *v = -1e4;
        }
        let h = [0.25, -0.5, 0.75];
        let out = gru_cell(&p.layers[0], &[1.0, -1.0], &h).unwrap();
        for (a, b) in out.iter().zip(h) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn cell_matches_hand_evaluation() {
        let mut r = rng(2);
        for (m, d) in [(0, 3), (2, 4), (5, 1)] {
            let mut p = zero_params(1, m, d, 2).unwrap();
            randomize(&mut p, &mut r);
            let x: Vec<f64> = (0..m).map(|_| r.random_range(-1.0..1.0)).collect();
            let h: Vec<f64> = (0..d).map(|_| r.random_range(-1.0..1.0)).collect();
            let got = gru_cell(&p.layers[0], &x, &h).unwrap();
            let want = hand_gru(&p.layers[0], &x, &h);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn cell_rejects_bad_shapes() {
        let p = zero_params(1, 2, 3, 2).unwrap();
        assert!(matches!(gru_cell(&p.layers[0], &[1.0], &[0.0; 3]), Err(Error::Dimension { .. })));
        assert!(gru_cell(&p.layers[0], &[1.0, 2.0], &[0.0; 2]).is_err());
    }

    #[test]
    fn zero_params_give_uniform_probs() {
        let p = zero_params(2, 3, 4, 5).unwrap();
        let mut tape = Tape::new();
        let f = forward(&mut tape, &p, &[1.0, 2.0, 3.0], &HiddenState::zeros(&p), 0.0, &mut rng(0)).unwrap();
        assert!(f.output.probs.iter().all(|&v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn forward_is_deterministic_without_dropout() {
        let p = init_params(2, 0, 6, 3, &mut rng(3)).unwrap();
        let mut h = HiddenState::zeros(&p);
        h.0[0] = vec![0.1, -0.2, 0.3, 0.0, 0.5, -0.5];
        let run = |seed| {
            let mut tape = Tape::new();
            forward(&mut tape, &p, &[], &h, 0.0, &mut rng(seed)).unwrap().output
        };
        assert_eq!(run(10), run(11));
    }

    #[test]
    fn forward_rejects_wrong_context_length() {
        let p = init_params(1, 2, 3, 2, &mut rng(0)).unwrap();
        let mut tape = Tape::new();
        let r = forward(&mut tape, &p, &[1.0], &HiddenState::zeros(&p), 0.0, &mut rng(0));
        assert!(matches!(r, Err(Error::Dimension { .. })));
    }

    #[test]
    fn single_layer_logits_match_hand_arithmetic() {
        // d = 2, n = 2, m = 1, every gate hand-set.
        let mut p = zero_params(1, 1, 2, 2).unwrap();
        let l = &mut p.layers[0];
        let w = l.input.as_mut().unwrap();
        w.reset = Tensor::matrix(2, 1, vec![1.0, -1.0]).unwrap();
        w.update = Tensor::matrix(2, 1, vec![0.5, 0.5]).unwrap();
        w.candidate = Tensor::matrix(2, 1, vec![2.0, -2.0]).unwrap();
        l.recurrent.candidate = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        l.bias.update = Tensor::vector(vec![0.0, 1.0]);
        p.head_weight = Tensor::matrix(2, 2, vec![1.0, 2.0, -1.0, 0.5]).unwrap();
        p.head_bias = Tensor::vector(vec![0.1, -0.1]);

        let x = 0.5;
        let h = [0.2, -0.4];
        let r = [sigmoid(0.5), sigmoid(-0.5)];
        let u = [sigmoid(0.25), sigmoid(1.25)];
        let c = [(1.0 + r[0] * h[0]).tanh(), (-1.0 + r[1] * h[1]).tanh()];
        let hn = [(1.0 - u[0]) * h[0] + u[0] * c[0], (1.0 - u[1]) * h[1] + u[1] * c[1]];
        let z = [hn[0] + 2.0 * hn[1] + 0.1, -hn[0] + 0.5 * hn[1] - 0.1];
        let _ = x;

        let mut tape = Tape::new();
        let hs = HiddenState(vec![h.to_vec()]);
        let f = forward(&mut tape, &p, &[0.5], &hs, 0.0, &mut rng(0)).unwrap();
        assert!((f.output.logits[0] - z[0]).abs() < 1e-12);
        assert!((f.output.logits[1] - z[1]).abs() < 1e-12);
        assert!((f.output.hidden.0[0][0] - hn[0]).abs() < 1e-12);
    }

    #[test]
    fn init_statistics() {
        let d = 128;
        let p = init_params(2, 3, d, 10, &mut rng(5)).unwrap();
        let bound = 1.0 / (d as f64).sqrt();
        let weights: Vec<f64> = p
            .names()
            .iter()
            .zip(p.tensors())
            .filter(|(n, _)| !n.contains(".b_") && n.as_str() != "head.b")
            .flat_map(|(_, t)| t.values().to_vec())
            .collect();
        assert!(weights.len() > 100_000);
        let mean = weights.iter().sum::<f64>() / weights.len() as f64;
        assert!(mean.abs() < 0.01, "{mean}");
        assert!(weights.iter().all(|w| w.abs() <= bound));
        assert!(p.layers.iter().all(|l| l.bias.iter().all(|b| b.values().iter().all(|&v| v == 0.0))));
        assert_eq!(p, init_params(2, 3, d, 10, &mut rng(5)).unwrap());
    }

    #[test]
    fn init_rejects_single_action() {
        assert!(matches!(init_params(1, 0, 4, 1, &mut rng(0)), Err(Error::Config { .. })));
        assert!(init_params(0, 0, 4, 2, &mut rng(0)).is_err());
    }

    #[test]
    fn paper_size_parameter_count() {
        let (l, m, d, n) = (2, 0, 128, 10);
        let p = init_params(l, m, d, n, &mut rng(0)).unwrap();
        // walk the shapes: each layer has 3 input matrices (d x in), 3 recurrent
        // (d x d), 3 biases (d); the head is n x d plus n.
        let mut expected = 0;
        let mut input = m;
        for _ in 0..l {
            expected += 3 * d * input + 3 * d * d + 3 * d;
            input = d;
        }
        expected += n * d + n;
        assert_eq!(p.parameter_count(), expected);
        let mut tape = Tape::new();
        let f = forward(&mut tape, &p, &[], &HiddenState::zeros(&p), 0.1, &mut rng(1)).unwrap();
        assert_eq!(f.output.probs.len(), n);
    }

    #[test]
    fn log_prob_gradient_matches_finite_differences() {
        let mut r = rng(9);
        let p = init_params(2, 2, 4, 3, &mut r).unwrap();
        let ctx = [0.3, -0.8];
        let hidden = HiddenState(vec![vec![0.1, -0.2, 0.3, 0.4], vec![-0.5, 0.2, 0.0, 0.1]]);
        let masks = vec![vec![1.0, 0.0, 1.2, 1.0], vec![1.0, 1.0, 0.8, 1.0]];
        let log_p = |params: &PolicyParams| -> f64 {
            let mut tape = Tape::new();
            let f = forward_with_masks(&mut tape, params, &ctx, &hidden, masks.clone()).unwrap();
            f.output.probs[1].ln()
        };
        let mut tape = Tape::new();
        let f = forward_with_masks(&mut tape, &p, &ctx, &hidden, masks.clone()).unwrap();
        let lp = tape.ln(f.step.probs);
        let loss = tape.pick(lp, 1).unwrap();
        let grads = tape.backward(loss).unwrap();
        let vars = f.params.all();
        let analytic: Vec<Vec<f64>> = vars
            .iter()
            .zip(p.tensors())
            .map(|(&v, t)| grads.get_or_zeros(v, t.len()))
            .collect();
        drop(tape);
        let h = 1e-5;
        for (k, g) in analytic.iter().enumerate() {
            for i in 0..g.len() {
                let mut plus = p.clone();
                plus.tensors_mut()[k].values_mut()[i] += h;
                let mut minus = p.clone();
                minus.tensors_mut()[k].values_mut()[i] -= h;
                let fd = (log_p(&plus) - log_p(&minus)) / (2.0 * h);
                let rel = (g[i] - fd).abs() / (g[i].abs() + 1e-8);
                assert!(rel < 1e-4 || (g[i] - fd).abs() < 1e-10, "tensor {k}[{i}]: {} vs {fd}", g[i]);
            }
        }
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let p = init_params(1, 0, 2, 2, &mut rng(0)).unwrap();
        let mut buf = Vec::new();
        write_checkpoint(&p, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(read_checkpoint(text.replace("params 1", "params 9").as_bytes()).is_err());
        let truncated: String = text.lines().take(4).collect::<Vec<_>>().join("\n");
        assert!(read_checkpoint(truncated.as_bytes()).is_err());
        assert!(read_checkpoint(text.replace("layer0.u_r", "layer0.u_x").as_bytes()).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn checkpoint_round_trips(seed in any::<u64>(), layers in 1usize..3, input in 0usize..3, hidden in 1usize..5, actions in 2usize..5) {
            let mut r = rng(seed);
            let mut p = init_params(layers, input, hidden, actions, &mut r).unwrap();
            randomize(&mut p, &mut r);
            let mut buf = Vec::new();
            write_checkpoint(&p, &mut buf).unwrap();
            let back = read_checkpoint(buf.as_slice()).unwrap();
            prop_assert_eq!(back, p);
        }

        #[test]
        fn probabilities_strictly_positive(seed in any::<u64>()) {
            let mut r = rng(seed);
            let p = init_params(2, 0, 5, 4, &mut r).unwrap();
            let mut tape = Tape::new();
            let f = forward(&mut tape, &p, &[], &HiddenState::zeros(&p), 0.3, &mut r).unwrap();
            prop_assert!(f.output.probs.iter().all(|&v| v > 0.0));
            prop_assert!((f.output.probs.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
