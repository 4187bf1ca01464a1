use rand::Rng;

use super::{Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Affine map `y = W x + b` with `W` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Linear {
    /// Weights and biases uniform in `±1/√fan_in`.
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
        Self {
            weight: Tensor::uniform(&[fan_out, fan_in], bound, rng),
            bias: Tensor::uniform(&[fan_out], bound, rng),
        }
    }

    pub fn in_width(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_width(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, x: Var) -> Result<Var> {
        let w = tape.param(&self.weight);
        let b = tape.param(&self.bias);
        tape.linear(x, w, Some(b))
    }

    pub(crate) fn tensors(&self) -> [&Tensor; 2] {
        [&self.weight, &self.bias]
    }

    pub(crate) fn tensors_mut(&mut self) -> [&mut Tensor; 2] {
        [&mut self.weight, &mut self.bias]
    }
}

/// Three affine layers, each followed by a ReLU.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: [Linear; 3],
}

impl Mlp {
    /// `in → out → out → out`.
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_out: usize, rng: &mut R) -> Self {
        Self {
            layers: [
                Linear::init(d_in, d_out, rng),
                Linear::init(d_out, d_out, rng),
                Linear::init(d_out, d_out, rng),
            ],
        }
    }

    pub fn from_layers(layers: [Linear; 3]) -> Result<Self> {
        for w in layers.windows(2) {
            if w[0].out_width() != w[1].in_width() {
                return Err(Error::invalid(format!(
                    "mlp layers do not chain: {} -> {}",
                    w[0].out_width(),
                    w[1].in_width()
                )));
            }
        }
        for l in &layers {
            if l.bias.len() != l.out_width() {
                return Err(Error::invalid("mlp bias length differs from layer width"));
            }
        }
        Ok(Self { layers })
    }

    pub fn in_width(&self) -> usize {
        self.layers[0].in_width()
    }

    pub fn out_width(&self) -> usize {
        self.layers[2].out_width()
    }

    /// Row-batched forward pass on the tape.
    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, x: Var) -> Result<Var> {
        let mut h = x;
        for l in &self.layers {
            let z = l.forward(tape, h)?;
            h = tape.relu(z);
        }
        Ok(h)
    }

    pub(crate) fn tensors_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.tensors_mut())
    }
}

/// Evaluates `ReLU(W₃·ReLU(W₂·ReLU(W₁x+b₁)+b₂)+b₃)` for a single input vector.
pub fn mlp_forward(x: &[f64], mlp: &Mlp) -> Result<Vec<f64>> {
    if x.len() != mlp.in_width() {
        return Err(Error::invalid(format!(
            "mlp expects width {}, got {}",
            mlp.in_width(),
            x.len()
        )));
    }
    let mut tape = Tape::new();
    let xv = tape.constant(Tensor::vector(x.to_vec()));
    let y = mlp.forward(&mut tape, xv)?;
    Ok(tape.value(y).data().to_vec())
}
