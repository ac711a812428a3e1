//! Stacked GRU/LSTM networks followed by a purely linear stack.
//!
//! A network is `recurrent_layers` recurrent cells of `hidden_width` units,
//! then `linear_layers` hidden-width linear maps, then a linear output head of
//! `output_dim` units. There is no nonlinearity between layers or on the output.
//!
//! All parameters live in one flat buffer in canonical order; the order is the
//! weight-vector layout used by the analysis code:
//!
//! ```text
//! for each recurrent layer l:  weight_ih_l{l} [G*h, in_l]   (rows gate-major)
//!                              weight_hh_l{l} [G*h, h]
//!                              bias_ih_l{l}   [G*h]
//!                              bias_hh_l{l}   [G*h]
//! for each linear layer k:     linear{k}.weight [h, h], linear{k}.bias [h]
//! head.weight [out, h], head.bias [out]
//! ```
//!
//! Gate order is reset, update, new for GRU and input, forget, cell, output
//! for LSTM. Matrices are row-major.

mod cells;
mod kernels;
mod network;

use std::fmt;
use std::str::FromStr;

use num_traits::Float;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{stream, stream_rng};

pub use network::{accumulate_gradients, backward, forward, mse_loss, ForwardCache};

/// Floating point types the engine runs in. `f32` is the production type;
/// `f64` exists for gradient verification.
pub trait Scalar: Float + Default + Send + Sync + fmt::Debug + std::iter::Sum + 'static {
    fn of_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn of_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn of_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CellKind {
    Gru,
    Lstm,
}

impl CellKind {
    pub fn gates(self) -> usize {
        match self {
            CellKind::Gru => 3,
            CellKind::Lstm => 4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Architecture {
    pub recurrent_kind: CellKind,
    pub recurrent_layers: usize,
    pub hidden_width: usize,
    /// Hidden linear layers, not counting the output head.
    pub linear_layers: usize,
    pub input_dim: usize,
    pub output_dim: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ArchPreset {
    Ds1,
    Ds3,
}

impl FromStr for ArchPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ds1" | "ds2" => Ok(ArchPreset::Ds1),
            "ds3" => Ok(ArchPreset::Ds3),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }
}

impl fmt::Display for ArchPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArchPreset::Ds1 => "ds1",
            ArchPreset::Ds3 => "ds3",
        })
    }
}

impl ArchPreset {
    pub fn architecture(self) -> Architecture {
        match self {
            ArchPreset::Ds1 => Architecture::ds1(),
            ArchPreset::Ds3 => Architecture::ds3(),
        }
    }
}

/// One named parameter block inside the flat buffer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Block {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl Block {
    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

impl Architecture {
    /// Four 12-wide GRU layers, four 12-wide linear layers and an 8-wide head.
    pub fn ds1() -> Self {
        Architecture {
            recurrent_kind: CellKind::Gru,
            recurrent_layers: 4,
            hidden_width: 12,
            linear_layers: 4,
            input_dim: 8,
            output_dim: 8,
        }
    }

    /// Four 64-wide LSTM layers, two 64-wide linear layers and a 15-wide head.
    pub fn ds3() -> Self {
        Architecture {
            recurrent_kind: CellKind::Lstm,
            recurrent_layers: 4,
            hidden_width: 64,
            linear_layers: 2,
            input_dim: 4,
            output_dim: 15,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.recurrent_layers == 0
            || self.hidden_width == 0
            || self.input_dim == 0
            || self.output_dim == 0
        {
            return Err(Error::invalid(format!(
                "architecture counts must be at least 1: {self:?}"
            )));
        }
        Ok(())
    }

    pub(crate) fn layer_input(&self, layer: usize) -> usize {
        if layer == 0 {
            self.input_dim
        } else {
            self.hidden_width
        }
    }

    pub fn param_count(&self) -> usize {
        let g = self.recurrent_kind.gates();
        let h = self.hidden_width;
        let recurrent: usize = (0..self.recurrent_layers)
            .map(|l| g * h * (self.layer_input(l) + h) + 2 * g * h)
            .sum();
        recurrent + self.linear_layers * (h * h + h) + self.output_dim * h + self.output_dim
    }

    pub fn layout(&self) -> Vec<Block> {
        let mut blocks = Vec::new();
        let mut offset = 0;
        let mut push = |name: String, shape: Vec<usize>| {
            let block = Block {
                name,
                shape,
                offset,
            };
            offset += block.len();
            blocks.push(block);
        };
        let gh = self.recurrent_kind.gates() * self.hidden_width;
        for l in 0..self.recurrent_layers {
            push(format!("weight_ih_l{l}"), vec![gh, self.layer_input(l)]);
            push(format!("weight_hh_l{l}"), vec![gh, self.hidden_width]);
            push(format!("bias_ih_l{l}"), vec![gh]);
            push(format!("bias_hh_l{l}"), vec![gh]);
        }
        for k in 0..self.linear_layers {
            push(
                format!("linear{k}.weight"),
                vec![self.hidden_width, self.hidden_width],
            );
            push(format!("linear{k}.bias"), vec![self.hidden_width]);
        }
        push(
            "head.weight".to_string(),
            vec![self.output_dim, self.hidden_width],
        );
        push("head.bias".to_string(), vec![self.output_dim]);
        blocks
    }

    /// Stable 64-bit FNV-1a hash of the architecture; used to refuse mixing
    /// weight vectors from different shapes.
    pub fn fingerprint(&self) -> u64 {
        let key = format!(
            "{:?}/{}/{}/{}/{}/{}",
            self.recurrent_kind,
            self.recurrent_layers,
            self.hidden_width,
            self.linear_layers,
            self.input_dim,
            self.output_dim
        );
        key.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
        })
    }
}

/// All weights of one network, flat in canonical order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterSet<T = f32> {
    pub arch: Architecture,
    pub values: Vec<T>,
}

/// Gradient of a loss with respect to a [`ParameterSet`], same layout.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet<T = f32> {
    pub arch: Architecture,
    pub values: Vec<T>,
}

impl<T: Scalar> ParameterSet<T> {
    pub fn zeros(arch: Architecture) -> Self {
        ParameterSet {
            values: vec![T::zero(); arch.param_count()],
            arch,
        }
    }

    pub fn from_values(arch: Architecture, values: Vec<T>) -> Result<Self> {
        arch.validate()?;
        if values.len() != arch.param_count() {
            return Err(Error::DimensionMismatch {
                context: "parameter vector",
                expected: arch.param_count(),
                actual: values.len(),
            });
        }
        Ok(ParameterSet { arch, values })
    }

    pub fn cast<U: Scalar>(&self) -> ParameterSet<U> {
        ParameterSet {
            arch: self.arch,
            values: self.values.iter().map(|v| U::of_f64(v.as_f64())).collect(),
        }
    }

    pub fn block(&self, name: &str) -> Option<&[T]> {
        self.arch
            .layout()
            .into_iter()
            .find(|b| b.name == name)
            .map(|b| &self.values[b.range()])
    }
}

impl<T: Scalar> GradientSet<T> {
    pub fn zeros(arch: Architecture) -> Self {
        GradientSet {
            values: vec![T::zero(); arch.param_count()],
            arch,
        }
    }

    pub fn norm(&self) -> T {
        self.values.iter().map(|&g| g * g).sum::<T>().sqrt()
    }

    pub fn fill_zero(&mut self) {
        self.values.iter_mut().for_each(|g| *g = T::zero());
    }
}

/// Uniform init in `[-1/sqrt(hidden), 1/sqrt(hidden)]`, drawn in canonical order.
pub fn init_network(arch: Architecture, seed: u64) -> Result<ParameterSet<f32>> {
    arch.validate()?;
    let bound = 1.0 / (arch.hidden_width as f32).sqrt();
    let mut rng = stream_rng(seed, stream::INIT);
    let values = (0..arch.param_count())
        .map(|_| rng.gen_range(-bound..=bound))
        .collect();
    Ok(ParameterSet { arch, values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerJson {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<f32>,
}

/// The on-disk weight format: the architecture plus named row-major blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightsJson {
    pub arch: Architecture,
    pub layers: Vec<LayerJson>,
}

impl From<&ParameterSet<f32>> for WeightsJson {
    fn from(p: &ParameterSet<f32>) -> Self {
        WeightsJson {
            arch: p.arch,
            layers: p
                .arch
                .layout()
                .into_iter()
                .map(|b| LayerJson {
                    values: p.values[b.range()].to_vec(),
                    name: b.name,
                    shape: b.shape,
                })
                .collect(),
        }
    }
}

impl TryFrom<WeightsJson> for ParameterSet<f32> {
    type Error = Error;

    fn try_from(w: WeightsJson) -> Result<Self> {
        w.arch.validate()?;
        let layout = w.arch.layout();
        if layout.len() != w.layers.len() {
            return Err(Error::ArchitectureMismatch(format!(
                "expected {} layers, found {}",
                layout.len(),
                w.layers.len()
            )));
        }
        let mut values = Vec::with_capacity(w.arch.param_count());
        for (block, layer) in layout.iter().zip(w.layers) {
            if block.name != layer.name || block.shape != layer.shape || layer.values.len() != block.len() {
                return Err(Error::ArchitectureMismatch(format!(
                    "layer `{}` {:?} does not match expected `{}` {:?}",
                    layer.name, layer.shape, block.name, block.shape
                )));
            }
            values.extend(layer.values);
        }
        Ok(ParameterSet {
            arch: w.arch,
            values,
        })
    }
}

impl ParameterSet<f32> {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&WeightsJson::from(self))?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str::<WeightsJson>(s)?.try_into()
    }
}
