//! Fully connected autoencoders with activation-mask capture.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::cpa::RegionCode;
use crate::error::{shape_err, Error, Result};
use crate::numerics::{Matrix, Rng, Tape, Var};

/// Pointwise nonlinearity of a layer.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Activation {
    Relu,
    LeakyRelu(f64),
    Absolute,
    Linear,
}

impl Activation {
    pub fn is_linear(self) -> bool {
        matches!(self, Activation::Linear)
    }

    /// Region state of one unit. A pre-activation of exactly zero counts as
    /// inactive for ReLU-type units and as positive for the absolute value.
    #[inline]
    pub fn state(self, pre: f64) -> bool {
        match self {
            Activation::Relu | Activation::LeakyRelu(_) => pre > 0.0,
            Activation::Absolute => pre >= 0.0,
            Activation::Linear => true,
        }
    }

    /// Diagonal mask entry for a unit state.
    #[inline]
    pub fn mask_value(self, state: bool) -> f64 {
        match (self, state) {
            (_, true) => 1.0,
            (Activation::Relu, false) => 0.0,
            (Activation::LeakyRelu(slope), false) => slope,
            (Activation::Absolute, false) => -1.0,
            (Activation::Linear, false) => 1.0,
        }
    }

    fn validate(self) -> Result<()> {
        if let Activation::LeakyRelu(s) = self {
            if !(s > 0.0 && s < 1.0) {
                return Err(Error::Config(format!("leaky_relu slope {s} outside (0,1)")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Relu => write!(f, "relu"),
            Activation::LeakyRelu(s) => write!(f, "leaky_relu:{s}"),
            Activation::Absolute => write!(f, "absolute"),
            Activation::Linear => write!(f, "linear"),
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let act = match s {
            "relu" => Activation::Relu,
            "absolute" | "abs" => Activation::Absolute,
            "linear" => Activation::Linear,
            other => {
                let slope = other
                    .strip_prefix("leaky_relu:")
                    .and_then(|v| v.parse::<f64>().ok())
                    .ok_or_else(|| Error::Config(format!("unknown activation {other:?}")))?;
                Activation::LeakyRelu(slope)
            }
        };
        act.validate()?;
        Ok(act)
    }
}

impl TryFrom<String> for Activation {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<Activation> for String {
    fn from(a: Activation) -> String {
        a.to_string()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerSpec {
    #[serde(rename = "in")]
    pub in_dim: usize,
    #[serde(rename = "out")]
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            activation,
        }
    }
}

/// Layer shapes of an autoencoder, split at the bottleneck.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
}

impl Architecture {
    /// Widths `d_0, …, d_{L+P}` with the bottleneck at `widths[bottleneck]`.
    /// Hidden layers use `hidden`, the bottleneck and output layers are
    /// linear.
    pub fn from_widths(widths: &[usize], bottleneck: usize, hidden: Activation) -> Result<Self> {
        if widths.len() < 3 || bottleneck == 0 || bottleneck + 1 >= widths.len() {
            return Err(Error::Config(format!(
                "bottleneck index {bottleneck} invalid for widths {widths:?}"
            )));
        }
        let layer = |i: usize| {
            let act = if i + 1 == bottleneck || i + 2 == widths.len() {
                Activation::Linear
            } else {
                hidden
            };
            LayerSpec::new(widths[i], widths[i + 1], act)
        };
        let arch = Self {
            encoder: (0..bottleneck).map(layer).collect(),
            decoder: (bottleneck..widths.len() - 1).map(layer).collect(),
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.first().map_or(0, |l| l.in_dim)
    }

    pub fn bottleneck(&self) -> usize {
        self.encoder.last().map_or(0, |l| l.out_dim)
    }

    pub fn validate(&self) -> Result<()> {
        if self.encoder.is_empty() || self.decoder.is_empty() {
            return Err(Error::Config("encoder and decoder need at least one layer".into()));
        }
        let all: Vec<&LayerSpec> = self.encoder.iter().chain(&self.decoder).collect();
        for (i, l) in all.iter().enumerate() {
            if l.in_dim == 0 || l.out_dim == 0 {
                return Err(Error::Config(format!("layer {i} has a zero dimension")));
            }
            l.activation.validate()?;
            if i > 0 && all[i - 1].out_dim != l.in_dim {
                return Err(Error::Config(format!(
                    "layer {} outputs {} but layer {i} expects {}",
                    i - 1,
                    all[i - 1].out_dim,
                    l.in_dim
                )));
            }
        }
        let d_out = self.decoder.last().map(|l| l.out_dim).unwrap_or(0);
        if d_out != self.input_dim() {
            return Err(Error::Config(format!(
                "decoder outputs {d_out} values for {}-dimensional inputs",
                self.input_dim()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    pub spec: LayerSpec,
    /// `out_dim × in_dim`.
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Layer {
    /// `W x (+ b)`.
    pub fn preactivation(&self, x: &[f64], bias_enabled: bool) -> Result<Vec<f64>> {
        let mut pre = self.weight.matvec(x)?;
        if bias_enabled {
            for (p, b) in pre.iter_mut().zip(&self.bias) {
                *p += b;
            }
        }
        Ok(pre)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AeModel {
    pub encoder: Vec<Layer>,
    pub decoder: Vec<Layer>,
}

/// Output of a full forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ForwardTrace {
    pub output: Vec<f64>,
    pub latent: Vec<f64>,
    pub code: RegionCode,
    /// Pre-activations of every layer, encoder then decoder.
    pub preactivations: Vec<Vec<f64>>,
}

fn run_layers(
    layers: &[Layer],
    x: &[f64],
    bias_enabled: bool,
    states: &mut Vec<Vec<bool>>,
    pres: &mut Vec<Vec<f64>>,
) -> Result<Vec<f64>> {
    let mut h = x.to_vec();
    for layer in layers {
        let mut pre = layer.preactivation(&h, bias_enabled)?;
        let act = layer.spec.activation;
        if !act.is_linear() {
            let st: Vec<bool> = pre.iter().map(|&p| act.state(p)).collect();
            h = pre.iter().zip(&st).map(|(&p, &s)| p * act.mask_value(s)).collect();
            states.push(st);
        } else {
            h = pre.clone();
        }
        pres.push(std::mem::take(&mut pre));
    }
    Ok(h)
}

impl AeModel {
    /// Glorot-uniform weights and zero biases, deterministic in `seed`.
    pub fn init(arch: &Architecture, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = Rng::new(seed);
        let mut build = |specs: &[LayerSpec]| -> Vec<Layer> {
            specs
                .iter()
                .map(|s| {
                    let bound = (6.0 / (s.in_dim + s.out_dim) as f64).sqrt();
                    let data = (0..s.in_dim * s.out_dim)
                        .map(|_| rng.uniform_range(-bound, bound))
                        .collect();
                    Layer {
                        spec: *s,
                        weight: Matrix::new(s.out_dim, s.in_dim, data).expect("sized"),
                        bias: vec![0.0; s.out_dim],
                    }
                })
                .collect()
        };
        let encoder = build(&arch.encoder);
        let decoder = build(&arch.decoder);
        Ok(Self { encoder, decoder })
    }

    /// Assembles a model from explicit layers, checking the dimension chain.
    pub fn from_layers(encoder: Vec<Layer>, decoder: Vec<Layer>) -> Result<Self> {
        for l in encoder.iter().chain(&decoder) {
            if l.weight.shape() != (l.spec.out_dim, l.spec.in_dim) || l.bias.len() != l.spec.out_dim {
                return Err(shape_err(format!("layer parameters do not match {:?}", l.spec)));
            }
        }
        let model = Self { encoder, decoder };
        model.architecture().validate()?;
        Ok(model)
    }

    pub fn architecture(&self) -> Architecture {
        Architecture {
            encoder: self.encoder.iter().map(|l| l.spec).collect(),
            decoder: self.decoder.iter().map(|l| l.spec).collect(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.encoder[0].spec.in_dim
    }

    pub fn bottleneck(&self) -> usize {
        self.encoder.last().expect("non-empty").spec.out_dim
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer> {
        self.encoder.iter().chain(&self.decoder)
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer> {
        self.encoder.iter_mut().chain(self.decoder.iter_mut())
    }

    /// Number of nonlinear encoder layers, i.e. the encoder prefix length of
    /// a full [`RegionCode`].
    pub fn encoder_code_len(&self) -> usize {
        self.encoder.iter().filter(|l| !l.spec.activation.is_linear()).count()
    }

    pub fn decoder_code_len(&self) -> usize {
        self.decoder.iter().filter(|l| !l.spec.activation.is_linear()).count()
    }

    /// Copy with every bias set to zero.
    pub fn zero_bias(&self) -> Self {
        let mut m = self.clone();
        for l in m.layers_mut() {
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        m
    }

    fn check_input(&self, x: &[f64], expected: usize, what: &str) -> Result<()> {
        if x.len() != expected {
            return Err(shape_err(format!(
                "{what} of length {} for dimension {expected}",
                x.len()
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64], bias_enabled: bool) -> Result<ForwardTrace> {
        self.check_input(x, self.input_dim(), "input")?;
        let mut states = Vec::new();
        let mut pres = Vec::new();
        let latent = run_layers(&self.encoder, x, bias_enabled, &mut states, &mut pres)?;
        let enc_len = states.len();
        let output = run_layers(&self.decoder, &latent, bias_enabled, &mut states, &mut pres)?;
        Ok(ForwardTrace {
            output,
            latent,
            code: RegionCode::new(states, enc_len),
            preactivations: pres,
        })
    }

    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.encode_with_code(x).map(|(z, _)| z)
    }

    /// Latent vector and the encoder-only region code.
    pub fn encode_with_code(&self, x: &[f64]) -> Result<(Vec<f64>, RegionCode)> {
        self.check_input(x, self.input_dim(), "input")?;
        let mut states = Vec::new();
        let z = run_layers(&self.encoder, x, true, &mut states, &mut Vec::new())?;
        let n = states.len();
        Ok((z, RegionCode::new(states, n)))
    }

    /// Decoder output and the decoder region code (a point of `Ω^D`).
    pub fn decode(&self, z: &[f64]) -> Result<(Vec<f64>, RegionCode)> {
        self.check_input(z, self.bottleneck(), "latent")?;
        let mut states = Vec::new();
        let out = run_layers(&self.decoder, z, true, &mut states, &mut Vec::new())?;
        Ok((out, RegionCode::new(states, 0)))
    }

    pub fn reconstruct(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x, true)?.output)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().map(|l| l.weight.data().len() + l.bias.len()).sum()
    }

    /// Puts every weight and bias on the tape as a differentiable leaf.
    pub fn register(&self, tape: &mut Tape) -> ModelVars {
        let mut reg = |layers: &[Layer]| {
            layers
                .iter()
                .map(|l| LayerVars {
                    weight: tape.leaf(l.weight.clone()),
                    bias: tape.leaf(Matrix::column(&l.bias)),
                })
                .collect()
        };
        let encoder = reg(&self.encoder);
        let decoder = reg(&self.decoder);
        ModelVars { encoder, decoder }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LayerVars {
    pub weight: Var,
    pub bias: Var,
}

/// Tape handles for all model parameters, in layer order.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub encoder: Vec<LayerVars>,
    pub decoder: Vec<LayerVars>,
}

impl ModelVars {
    pub fn all(&self) -> impl Iterator<Item = &LayerVars> {
        self.encoder.iter().chain(&self.decoder)
    }
}

/// Applies `layers` to the columns of `x` on the tape. Masks are recomputed
/// from the pre-activation values and enter as constants, which gives the
/// exact derivative away from region boundaries.
pub fn layers_on_tape(tape: &mut Tape, layers: &[Layer], vars: &[LayerVars], x: Var) -> Result<Var> {
    let mut h = x;
    for (layer, v) in layers.iter().zip(vars) {
        let wx = tape.matmul(v.weight, h)?;
        let pre = tape.add_column(wx, v.bias)?;
        let act = layer.spec.activation;
        h = if act.is_linear() {
            pre
        } else {
            let mask = tape.value(pre).map(|p| act.mask_value(act.state(p)));
            tape.mul_const(pre, mask)?
        };
    }
    Ok(h)
}

pub fn encode_on_tape(tape: &mut Tape, model: &AeModel, vars: &ModelVars, x: Var) -> Result<Var> {
    layers_on_tape(tape, &model.encoder, &vars.encoder, x)
}

pub fn decode_on_tape(tape: &mut Tape, model: &AeModel, vars: &ModelVars, z: Var) -> Result<Var> {
    layers_on_tape(tape, &model.decoder, &vars.decoder, z)
}
