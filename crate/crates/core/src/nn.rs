//! Small dense networks with hand-written backpropagation.
//!
//! Everything is batched: inputs are `(batch, features)` matrices. Weights
//! are stored `(fan_in, fan_out)` so a layer is `x.dot(W) + b`.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("checkpoint parse error on line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Identity,
    Relu,
    Tanh,
}

impl Activation {
    pub fn as_str(self) -> &'static str {
        match self {
            Activation::Identity => "identity",
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "identity" => Some(Activation::Identity),
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }

    fn apply(self, z: &Array2<f64>) -> Array2<f64> {
        match self {
            Activation::Identity => z.clone(),
            Activation::Relu => z.mapv(|v| v.max(0.0)),
            Activation::Tanh => z.mapv(f64::tanh),
        }
    }

    /// Multiplies `grad` in place by the derivative at pre-activation `z`
    /// (with post-activation `a`).
    fn backprop(self, grad: &mut Array2<f64>, z: &Array2<f64>, a: &Array2<f64>) {
        match self {
            Activation::Identity => {}
            Activation::Relu => Zip::from(grad).and(z).for_each(|g, &z| {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }),
            Activation::Tanh => Zip::from(grad).and(a).for_each(|g, &a| *g *= 1.0 - a * a),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `(fan_in, fan_out)`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self { weight: Array2::zeros((fan_in, fan_out)), bias: Array1::zeros(fan_out) }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }
}

/// Feed-forward network: dense layers, one activation shared by all hidden
/// layers and a separate output activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Dense>,
    hidden: Activation,
    output: Activation,
}

/// Everything [`Mlp::backward`] needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Array2<f64>>,
    output: Array2<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }

    /// Hidden-layer pre-activations, for kink detection in finite
    /// difference checks.
    pub fn pre_activations(&self) -> &[Array2<f64>] {
        &self.pre
    }
}

impl Mlp {
    /// He-uniform weights (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`), zero biases.
    pub fn new<R: Rng + ?Sized>(widths: &[usize], hidden: Activation, output: Activation, rng: &mut R) -> Self {
        assert!(widths.len() >= 2, "an MLP needs input and output widths");
        let layers = widths
            .windows(2)
            .map(|w| {
                let limit = (6.0 / w[0] as f64).sqrt();
                let weight = Array2::from_shape_simple_fn((w[0], w[1]), || rng.gen_range(-limit..limit));
                Dense { weight, bias: Array1::zeros(w[1]) }
            })
            .collect();
        Self { layers, hidden, output }
    }

    pub fn from_layers(layers: Vec<Dense>, hidden: Activation, output: Activation) -> Result<Self, NnError> {
        if layers.is_empty() {
            return Err(NnError::Shape("an MLP needs at least one layer".into()));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].fan_out() != pair[1].fan_in() {
                return Err(NnError::Shape(format!(
                    "layer {i} emits {} features but layer {} takes {}",
                    pair[0].fan_out(),
                    i + 1,
                    pair[1].fan_in()
                )));
            }
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.fan_out() {
                return Err(NnError::Shape(format!("layer {i} bias has length {}", l.bias.len())));
            }
        }
        Ok(Self { layers, hidden, output })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim()];
        w.extend(self.layers.iter().map(Dense::fan_out));
        w
    }

    pub fn hidden_activation(&self) -> Activation {
        self.hidden
    }

    pub fn output_activation(&self) -> Activation {
        self.output
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].fan_out()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.output
        } else {
            self.hidden
        }
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<(), NnError> {
        if x.ncols() != self.input_dim() {
            return Err(NnError::Shape(format!(
                "input has {} features, network expects {}",
                x.ncols(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Forward pass keeping the activations needed by [`Mlp::backward`].
    pub fn forward(&self, x: ArrayView2<f64>) -> Result<(Array2<f64>, ForwardCache), NnError> {
        self.check_input(&x)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let z = h.dot(&layer.weight) + &layer.bias;
            let a = self.activation(i).apply(&z);
            inputs.push(h);
            pre.push(z);
            h = a;
        }
        Ok((h.clone(), ForwardCache { inputs, pre, output: h }))
    }

    /// Forward pass without a cache.
    pub fn predict(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, NnError> {
        self.check_input(&x)?;
        let mut h = x.to_owned();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            h = match self.activation(i) {
                Activation::Identity => z,
                act => act.apply(&z),
            };
        }
        Ok(h)
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>, NnError> {
        let x = ArrayView2::from_shape((1, x.len()), x).map_err(|e| NnError::Shape(e.to_string()))?;
        Ok(self.predict(x)?.into_raw_vec_and_offset().0)
    }

    /// Reverse-mode gradients of `sum(output * grad_output)` with respect to
    /// every parameter and to the input.
    pub fn backward(&self, cache: &ForwardCache, grad_output: ArrayView2<f64>) -> Result<(Gradients, Array2<f64>), NnError> {
        if cache.inputs.len() != self.layers.len() {
            return Err(NnError::Shape(format!(
                "cache holds {} layers, network has {}",
                cache.inputs.len(),
                self.layers.len()
            )));
        }
        if grad_output.dim() != cache.output.dim() {
            return Err(NnError::Shape(format!(
                "grad_output is {:?}, output was {:?}",
                grad_output.dim(),
                cache.output.dim()
            )));
        }
        for (i, (layer, input)) in self.layers.iter().zip(&cache.inputs).enumerate() {
            if input.ncols() != layer.fan_in() {
                return Err(NnError::Shape(format!("cache layer {i} does not match the network")));
            }
        }
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_output.to_owned();
        for i in (0..self.layers.len()).rev() {
            let post = if i + 1 == self.layers.len() { &cache.output } else { &cache.inputs[i + 1] };
            self.activation(i).backprop(&mut delta, &cache.pre[i], post);
            let dw = cache.inputs[i].t().dot(&delta);
            let db = delta.sum_axis(Axis(0));
            let next = delta.dot(&self.layers[i].weight.t());
            grads.push(Dense { weight: dw, bias: db });
            delta = next;
        }
        grads.reverse();
        Ok((Gradients { layers: grads }, delta))
    }

    /// Every parameter, layer by layer, weights (row-major) before biases.
    pub fn params(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    /// Parameter `i` in [`Mlp::params`] order.
    pub fn param_mut(&mut self, mut i: usize) -> Option<&mut f64> {
        for l in &mut self.layers {
            let (w, b) = (l.weight.len(), l.bias.len());
            if i < w {
                return l.weight.iter_mut().nth(i);
            }
            if i < w + b {
                return l.bias.get_mut(i - w);
            }
            i -= w + b;
        }
        None
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers.iter_mut().flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn all_finite(&self) -> bool {
        self.params().all(|p| p.is_finite())
    }

    fn same_shape(&self, other: &Mlp) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weight.dim() == b.weight.dim() && a.bias.dim() == b.bias.dim())
    }

    /// Writes the network as a text block; see `docs/checkpoint.md`.
    pub fn write_text<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        writeln!(
            out,
            "mlp {} {} {}",
            self.layers.len(),
            self.hidden.as_str(),
            self.output.as_str()
        )?;
        let mut line = String::new();
        for layer in &self.layers {
            writeln!(out, "layer {} {}", layer.fan_in(), layer.fan_out())?;
            for row in layer.weight.rows() {
                line.clear();
                for (j, v) in row.iter().enumerate() {
                    if j > 0 {
                        line.push(' ');
                    }
                    write!(line, "{v:?}").unwrap();
                }
                writeln!(out, "{line}")?;
            }
            line.clear();
            for (j, v) in layer.bias.iter().enumerate() {
                if j > 0 {
                    line.push(' ');
                }
                write!(line, "{v:?}").unwrap();
            }
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    /// Reads a block written by [`Mlp::write_text`]. `line_no` tracks the
    /// reader's position for error messages.
    pub fn read_text<R: BufRead>(input: &mut R, line_no: &mut usize) -> Result<Self, NnError> {
        let header = next_line(input, line_no)?;
        let parts: Vec<&str> = header.split_whitespace().collect();
        let bad = |line: usize, reason: String| NnError::Parse { line, reason };
        if parts.len() != 4 || parts[0] != "mlp" {
            return Err(bad(*line_no, format!("expected `mlp <layers> <hidden> <output>`, got `{header}`")));
        }
        let n_layers: usize = parts[1].parse().map_err(|_| bad(*line_no, "bad layer count".into()))?;
        let hidden = Activation::parse(parts[2]).ok_or_else(|| bad(*line_no, format!("unknown activation {}", parts[2])))?;
        let output = Activation::parse(parts[3]).ok_or_else(|| bad(*line_no, format!("unknown activation {}", parts[3])))?;
        let mut layers = Vec::with_capacity(n_layers);
        for _ in 0..n_layers {
            let header = next_line(input, line_no)?;
            let dims: Vec<&str> = header.split_whitespace().collect();
            if dims.len() != 3 || dims[0] != "layer" {
                return Err(bad(*line_no, format!("expected `layer <in> <out>`, got `{header}`")));
            }
            let fan_in: usize = dims[1].parse().map_err(|_| bad(*line_no, "bad fan-in".into()))?;
            let fan_out: usize = dims[2].parse().map_err(|_| bad(*line_no, "bad fan-out".into()))?;
            let mut layer = Dense::zeros(fan_in, fan_out);
            for mut row in layer.weight.rows_mut() {
                let values = parse_floats(&next_line(input, line_no)?, fan_out, *line_no)?;
                row.assign(&Array1::from(values));
            }
            layer.bias = Array1::from(parse_floats(&next_line(input, line_no)?, fan_out, *line_no)?);
            layers.push(layer);
        }
        Self::from_layers(layers, hidden, output)
    }
}

pub(crate) fn next_line<R: BufRead>(input: &mut R, line_no: &mut usize) -> Result<String, NnError> {
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        return Err(NnError::Parse { line: *line_no + 1, reason: "unexpected end of file".into() });
    }
    *line_no += 1;
    Ok(line.trim_end_matches(['\n', '\r']).to_string())
}

fn parse_floats(line: &str, expected: usize, line_no: usize) -> Result<Vec<f64>, NnError> {
    let values: Vec<f64> = line
        .split_whitespace()
        .map(|t| t.parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|e| NnError::Parse { line: line_no, reason: e.to_string() })?;
    if values.len() != expected {
        return Err(NnError::Parse {
            line: line_no,
            reason: format!("expected {expected} values, found {}", values.len()),
        });
    }
    Ok(values)
}

/// Parameter gradients laid out like the network they belong to.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    layers: Vec<Dense>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net.layers.iter().map(|l| Dense::zeros(l.fan_in(), l.fan_out())).collect(),
        }
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Same order as [`Mlp::params`].
    pub fn values(&self) -> impl Iterator<Item = &f64> {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()))
    }

    pub fn add_assign(&mut self, other: &Gradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight += &b.weight;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weight *= factor;
            l.bias *= factor;
        }
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|&v| v == 0.0)
    }

    pub fn all_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }
}

/// Bias-corrected adaptive-moment optimizer state for one network.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Gradients,
    v: Gradients,
}

impl Adam {
    pub fn new(net: &Mlp, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: Gradients::zeros_like(net),
            v: Gradients::zeros_like(net),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self) -> &Gradients {
        &self.m
    }

    pub fn second_moment(&self) -> &Gradients {
        &self.v
    }

    /// Applies one update. An all-zero gradient leaves parameters and
    /// moments untouched and only advances the step counter, so networks
    /// that received no signal this step do not drift on stale momentum.
    pub fn step(&mut self, net: &mut Mlp, grads: &Gradients) -> Result<(), NnError> {
        if grads.layers.len() != net.layers.len()
            || grads.layers.iter().zip(&net.layers).any(|(g, l)| g.weight.dim() != l.weight.dim())
        {
            return Err(NnError::Shape("gradients do not match the network".into()));
        }
        self.step += 1;
        if grads.is_zero() {
            return Ok(());
        }
        let (b1, b2) = (self.beta1, self.beta2);
        let t = self.step as i32;
        let lr_t = self.lr * (1.0 - b2.powi(t)).sqrt() / (1.0 - b1.powi(t));
        let eps_t = self.eps * (1.0 - b2.powi(t)).sqrt();
        for ((layer, g), (m, v)) in net
            .layers
            .iter_mut()
            .zip(&grads.layers)
            .zip(self.m.layers.iter_mut().zip(self.v.layers.iter_mut()))
        {
            let update = |p: &mut f64, g: &f64, m: &mut f64, v: &mut f64| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr_t * *m / (v.sqrt() + eps_t);
            };
            Zip::from(&mut layer.weight).and(&g.weight).and(&mut m.weight).and(&mut v.weight).for_each(update);
            Zip::from(&mut layer.bias).and(&g.bias).and(&mut m.bias).and(&mut v.bias).for_each(update);
        }
        Ok(())
    }
}

/// `target <- tau * online + (1 - tau) * target`, elementwise.
pub fn soft_update(target: &mut Mlp, online: &Mlp, tau: f64) -> Result<(), NnError> {
    if !target.same_shape(online) {
        return Err(NnError::Shape("soft update between different architectures".into()));
    }
    for (t, o) in target.layers.iter_mut().zip(&online.layers) {
        Zip::from(&mut t.weight).and(&o.weight).for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
        Zip::from(&mut t.bias).and(&o.bias).for_each(|t, &o| *t = tau * o + (1.0 - tau) * *t);
    }
    Ok(())
}
