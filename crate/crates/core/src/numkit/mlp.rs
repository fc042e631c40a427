//! Dense feed-forward classifier with a softmax head.
//!
//! Parameters live in one flat `Vec<f64>` in canonical order: for each layer,
//! the weight matrix (row-major, one row per output unit) followed by the
//! bias vector. Every code path that reduces over a layer uses [`dot`], so
//! single-row and batched evaluation agree bit for bit.

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Tanh),
            _ => None,
        }
    }

    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_at_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }
}

/// Architecture plus initialization seed. Equal specs yield identical initial
/// parameters.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_layers: Vec<usize>,
    pub num_classes: usize,
    pub activation: Activation,
    #[serde(default)]
    pub rng_seed: u64,
}

impl MlpSpec {
    pub fn new(input_dim: usize, hidden_layers: Vec<usize>, num_classes: usize) -> Self {
        Self {
            input_dim,
            hidden_layers,
            num_classes,
            activation: Activation::Relu,
            rng_seed: 0,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::config("input_dim must be positive"));
        }
        if self.num_classes < 2 {
            return Err(Error::config("num_classes must be at least 2"));
        }
        if self.hidden_layers.iter().any(|&w| w == 0) {
            return Err(Error::config("hidden layer widths must be positive"));
        }
        Ok(())
    }

    /// `[input_dim, hidden..., num_classes]`
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden_layers.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_layers);
        dims.push(self.num_classes);
        dims
    }

    pub fn parameter_count(&self) -> usize {
        self.layer_dims()
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    /// Short stable digest of every field, used in ensemble index files.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"mlp-spec-v1");
        for d in self.layer_dims() {
            h.update((d as u64).to_le_bytes());
        }
        h.update([self.activation.code()]);
        h.update(self.rng_seed.to_le_bytes());
        h.finalize()[..8]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct LayerShape {
    fan_in: usize,
    fan_out: usize,
    w: usize,
    b: usize,
}

fn layer_shapes(spec: &MlpSpec) -> Vec<LayerShape> {
    let mut off = 0;
    spec.layer_dims()
        .windows(2)
        .map(|d| {
            let w = off;
            let b = w + d[0] * d[1];
            off = b + d[1];
            LayerShape {
                fan_in: d[0],
                fan_out: d[1],
                w,
                b,
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    spec: MlpSpec,
    params: Vec<f64>,
    epoch_counter: u64,
    layers: Vec<LayerShape>,
}

impl MlpModel {
    /// Glorot-uniform weights drawn from the spec's seed; zero biases.
    pub fn new(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let layers = layer_shapes(&spec);
        let mut params = vec![0.0; spec.parameter_count()];
        let mut draw = rng::rng(spec.rng_seed);
        for l in &layers {
            let bound = (6.0 / (l.fan_in + l.fan_out) as f64).sqrt();
            for p in &mut params[l.w..l.b] {
                *p = draw.random_range(-bound..bound);
            }
        }
        Ok(Self {
            spec,
            params,
            epoch_counter: 0,
            layers,
        })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        spec.validate()?;
        let n = spec.parameter_count();
        Self::from_parameters(spec, vec![0.0; n], 0)
    }

    pub fn from_parameters(spec: MlpSpec, params: Vec<f64>, epoch_counter: u64) -> Result<Self> {
        spec.validate()?;
        if params.len() != spec.parameter_count() {
            return Err(Error::input(format!(
                "expected {} parameters, got {}",
                spec.parameter_count(),
                params.len()
            )));
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::input("parameters must be finite"));
        }
        let layers = layer_shapes(&spec);
        Ok(Self {
            spec,
            params,
            epoch_counter,
            layers,
        })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn parameters(&self) -> &[f64] {
        &self.params
    }

    /// Direct parameter access for constructed models and optimizers.
    pub fn parameters_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn epoch_counter(&self) -> u64 {
        self.epoch_counter
    }

    pub(crate) fn advance_epochs(&mut self, n: u64) {
        self.epoch_counter += n;
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    fn check_row(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.spec.input_dim {
            return Err(Error::input(format!(
                "feature row has length {}, model expects {}",
                x.len(),
                self.spec.input_dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::input("feature row contains non-finite values"));
        }
        Ok(())
    }

    /// Runs the network, leaving each layer's input in `acts[l]` and the
    /// logits in `acts[last]`.
    fn forward_into(&self, x: &[f64], acts: &mut [Vec<f64>]) {
        acts[0].clear();
        acts[0].extend_from_slice(x);
        let last = self.layers.len() - 1;
        for (l, shape) in self.layers.iter().enumerate() {
            let (head, tail) = acts.split_at_mut(l + 1);
            let input = &head[l];
            let out = &mut tail[0];
            out.clear();
            let w = &self.params[shape.w..shape.b];
            let b = &self.params[shape.b..shape.b + shape.fan_out];
            for (o, row) in w.chunks_exact(shape.fan_in).enumerate() {
                let z = b[o] + dot(row, input);
                out.push(if l == last { z } else { self.spec.activation.apply(z) });
            }
        }
    }

    fn workspace(&self) -> Vec<Vec<f64>> {
        self.spec
            .layer_dims()
            .iter()
            .map(|&d| Vec::with_capacity(d))
            .collect()
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_row(x)?;
        let mut acts = self.workspace();
        self.forward_into(x, &mut acts);
        Ok(acts.pop().unwrap_or_default())
    }

    pub fn softmax_probs(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    /// Argmax of the softmax output, lowest index on ties.
    pub fn predict_label(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.softmax_probs(x)?))
    }

    /// Mean softmax cross-entropy over the batch and its exact gradient with
    /// respect to every parameter (canonical order).
    pub fn loss_and_grad(&self, rows: &[&[f64]], labels: &[usize]) -> Result<(f64, Vec<f64>)> {
        if rows.is_empty() {
            return Err(Error::input("empty batch"));
        }
        if rows.len() != labels.len() {
            return Err(Error::input("rows and labels differ in length"));
        }
        let n_classes = self.spec.num_classes;
        if let Some(&bad) = labels.iter().find(|&&y| y >= n_classes) {
            return Err(Error::input(format!("label {bad} out of range for {n_classes} classes")));
        }
        for x in rows {
            self.check_row(x)?;
        }

        let mut grad = vec![0.0; self.params.len()];
        let mut acts = self.workspace();
        let max_dim = self.spec.layer_dims().into_iter().max().unwrap_or(0);
        let mut delta = Vec::with_capacity(max_dim);
        let mut d_in = Vec::with_capacity(max_dim);
        let mut total = 0.0;

        for (x, &y) in rows.iter().zip(labels) {
            self.forward_into(x, &mut acts);
            let logits = acts.last().expect("at least one layer");
            let (loss, probs) = cross_entropy(logits, y);
            total += loss;
            delta.clear();
            delta.extend_from_slice(&probs);
            delta[y] -= 1.0;
            self.backprop(&acts, &mut delta, &mut d_in, Some(&mut grad), false);
        }

        let scale = 1.0 / rows.len() as f64;
        for g in &mut grad {
            *g *= scale;
        }
        Ok((total * scale, grad))
    }

    /// Cross-entropy at `(x, label)` and its gradient with respect to `x`.
    pub fn input_gradient(&self, x: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
        self.check_row(x)?;
        if label >= self.spec.num_classes {
            return Err(Error::input(format!("label {label} out of range")));
        }
        let mut acts = self.workspace();
        self.forward_into(x, &mut acts);
        let logits = acts.last().expect("at least one layer");
        let (loss, probs) = cross_entropy(logits, label);
        let mut delta = probs;
        delta[label] -= 1.0;
        let mut d_in = Vec::new();
        self.backprop(&acts, &mut delta, &mut d_in, None, true);
        Ok((loss, delta))
    }

    /// Propagates `delta` (gradient w.r.t. the logits) backwards. Accumulates
    /// parameter gradients into `grad` when given; when `through_input` is set,
    /// `delta` ends up holding the gradient w.r.t. the network input.
    fn backprop(
        &self,
        acts: &[Vec<f64>],
        delta: &mut Vec<f64>,
        d_in: &mut Vec<f64>,
        mut grad: Option<&mut Vec<f64>>,
        through_input: bool,
    ) {
        for (l, shape) in self.layers.iter().enumerate().rev() {
            let input = &acts[l];
            if let Some(g) = grad.as_deref_mut() {
                let (gw, gb) = g[shape.w..shape.b + shape.fan_out].split_at_mut(shape.b - shape.w);
                for (o, row) in gw.chunks_exact_mut(shape.fan_in).enumerate() {
                    let d = delta[o];
                    if d != 0.0 {
                        axpy(d, input, row);
                    }
                    gb[o] += d;
                }
            }
            if l == 0 && !through_input {
                break;
            }
            d_in.clear();
            d_in.resize(shape.fan_in, 0.0);
            let w = &self.params[shape.w..shape.b];
            for (o, row) in w.chunks_exact(shape.fan_in).enumerate() {
                let d = delta[o];
                if d != 0.0 {
                    axpy(d, row, d_in);
                }
            }
            if l > 0 {
                let act = self.spec.activation;
                for (di, &a) in d_in.iter_mut().zip(input) {
                    *di *= act.derivative_at_output(a);
                }
            }
            std::mem::swap(delta, d_in);
        }
    }
}

/// Free-function form of [`MlpModel::softmax_probs`].
pub fn softmax_probs(model: &MlpModel, x: &[f64]) -> Result<Vec<f64>> {
    model.softmax_probs(x)
}

/// Free-function form of [`MlpModel::predict_label`].
pub fn predict_label(model: &MlpModel, x: &[f64]) -> Result<usize> {
    model.predict_label(x)
}

/// Free-function form of [`MlpModel::loss_and_grad`].
pub fn loss_and_grad(model: &MlpModel, rows: &[&[f64]], labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    model.loss_and_grad(rows, labels)
}

/// Max-shifted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let s: f64 = out.iter().sum();
    for p in &mut out {
        *p /= s;
    }
    out
}

/// `(−ln softmax(logits)[label], softmax(logits))`, via log-sum-exp.
fn cross_entropy(logits: &[f64], label: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = logits.iter().map(|z| (z - m).exp()).sum();
    let lse = m + s.ln();
    let probs = logits.iter().map(|z| (z - lse).exp()).collect();
    (lse - logits[label], probs)
}

/// Index of the maximum, lowest index on ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Fixed-order dot product (eight interleaved partial sums).
#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    let mut acc = [0.0f64; 8];
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut s = ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += x * y;
    }
    s
}

#[inline]
fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear_two_class(w0: [f64; 2], w1: [f64; 2], b: [f64; 2]) -> MlpModel {
        let spec = MlpSpec::new(2, vec![], 2);
        MlpModel::from_parameters(spec, vec![w0[0], w0[1], w1[0], w1[1], b[0], b[1]], 0).unwrap()
    }

    #[test]
    fn zero_model_is_uniform() {
        let m = MlpModel::zeros(MlpSpec::new(3, vec![], 4)).unwrap();
        let p = m.softmax_probs(&[1.0, -2.0, 5.0]).unwrap();
        for v in p {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn constructed_logits_give_quarter_three_quarters() {
        // biases alone set logits (ln 1, ln 3)
        let m = linear_two_class([0.0; 2], [0.0; 2], [0.0, 3f64.ln()]);
        let p = m.softmax_probs(&[0.3, 0.7]).unwrap();
        assert!((p[0] - 0.25).abs() < 1e-12);
        assert!((p[1] - 0.75).abs() < 1e-12);
        assert_eq!(m.predict_label(&[0.0, 0.0]).unwrap(), 1);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let z = [0.3, -1.2, 4.0, 2.2];
        let shifted: Vec<f64> = z.iter().map(|v| v + 123.5).collect();
        let (a, b) = (softmax(&z), softmax(&shifted));
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax(&[0.25, 0.75]), 1);
        assert_eq!(argmax(&[0.5, 0.5]), 0);
        assert_eq!(argmax(&[0.1; 10]), 0);
    }

    #[test]
    fn rejects_bad_rows() {
        let m = MlpModel::new(MlpSpec::new(3, vec![4], 2)).unwrap();
        assert!(matches!(m.softmax_probs(&[1.0, 2.0]), Err(Error::RejectedInput(_))));
        assert!(matches!(
            m.softmax_probs(&[1.0, f64::NAN, 0.0]),
            Err(Error::RejectedInput(_))
        ));
        assert!(matches!(
            m.loss_and_grad(&[&[0.0, 0.0, 0.0]], &[2]),
            Err(Error::RejectedInput(_))
        ));
        assert!(matches!(m.loss_and_grad(&[], &[]), Err(Error::RejectedInput(_))));
    }

    #[test]
    fn parameter_count_matches_layout() {
        let spec = MlpSpec::new(8, vec![256, 128, 64], 4);
        assert_eq!(spec.parameter_count(), 9 * 256 + 257 * 128 + 129 * 64 + 65 * 4);
        let m = MlpModel::new(spec.clone()).unwrap();
        assert_eq!(m.parameters().len(), spec.parameter_count());
        assert_eq!(m, MlpModel::new(spec).unwrap());
    }

    #[test]
    fn saturated_truth_has_vanishing_gradient() {
        let m = linear_two_class([0.0; 2], [0.0; 2], [0.0, 60.0]);
        let (loss, g) = m.loss_and_grad(&[&[0.5, -0.5], &[1.0, 2.0]], &[1, 1]).unwrap();
        assert!(loss < 1e-20);
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-9, "{norm}");
    }

    #[test]
    fn duplicated_batch_leaves_loss_and_grad_unchanged() {
        let m = MlpModel::new(MlpSpec::new(3, vec![5, 4], 3).with_seed(9)).unwrap();
        let rows: [&[f64]; 3] = [&[0.1, 0.2, -0.3], &[1.0, -1.0, 0.5], &[0.0, 0.3, 0.9]];
        let labels = [0, 2, 1];
        let (l1, g1) = m.loss_and_grad(&rows, &labels).unwrap();
        let rows2: Vec<&[f64]> = rows.iter().chain(rows.iter()).copied().collect();
        let labels2: Vec<usize> = labels.iter().chain(labels.iter()).copied().collect();
        let (l2, g2) = m.loss_and_grad(&rows2, &labels2).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for (a, b) in g1.iter().zip(&g2) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let m = MlpModel::new(MlpSpec::new(4, vec![6], 3).with_activation(Activation::Tanh).with_seed(3))
            .unwrap();
        let x = [0.3, -0.7, 1.1, 0.05];
        let (_, g) = m.input_gradient(&x, 2).unwrap();
        let h = 1e-5;
        for j in 0..4 {
            let mut xp = x;
            let mut xm = x;
            xp[j] += h;
            xm[j] -= h;
            let lp = m.loss_and_grad(&[&xp], &[2]).unwrap().0;
            let lm = m.loss_and_grad(&[&xm], &[2]).unwrap().0;
            let fd = (lp - lm) / (2.0 * h);
            assert!((fd - g[j]).abs() < 1e-7 * (1.0 + fd.abs()), "{j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn dot_handles_remainders() {
        let a: Vec<f64> = (0..13).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..13).map(|i| 1.0 + i as f64).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        assert_eq!(dot(&a, &b), naive);
    }
}
