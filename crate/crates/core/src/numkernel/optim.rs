use super::Tensor;
use crate::error::{Error, Result};

/// RMSProp running state for gradient *ascent*.
///
/// Each step applies `v ← ρv + (1−ρ)g²` and `θ ← θ + γ·g/(√v + ε)`;
/// callers pass the gradient of the quantity to maximise.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub learning_rate: f64,
    pub decay: f64,
    pub epsilon: f64,
    mean_sq: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(learning_rate: f64, decay: f64, epsilon: f64) -> Result<Self> {
        if !(learning_rate > 0.0) {
            return Err(Error::invalid("learning rate must be positive"));
        }
        if !(decay > 0.0 && decay < 1.0) {
            return Err(Error::invalid("decay must lie in (0, 1)"));
        }
        if !(epsilon > 0.0) {
            return Err(Error::invalid("epsilon must be positive"));
        }
        Ok(Self {
            learning_rate,
            decay,
            epsilon,
            mean_sq: Vec::new(),
        })
    }

    pub fn mean_square(&self) -> &[Vec<f64>] {
        &self.mean_sq
    }

    /// Applies one ascent step; the state is lazily sized on first use.
    pub fn step(&mut self, params: &mut [&mut Tensor], grads: &[Tensor]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::invalid(format!(
                "{} parameters but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        if self.mean_sq.is_empty() {
            self.mean_sq = params.iter().map(|p| vec![0.0; p.len()]).collect();
        }
        if self.mean_sq.len() != params.len() {
            return Err(Error::invalid("optimizer state does not match parameters"));
        }
        for ((p, g), v) in params.iter().zip(grads).zip(&self.mean_sq) {
            if p.len() != g.len() || v.len() != p.len() {
                return Err(Error::invalid(format!(
                    "parameter of {} entries, gradient of {}",
                    p.len(),
                    g.len()
                )));
            }
        }
        let (rho, lr, eps) = (self.decay, self.learning_rate, self.epsilon);
        for ((p, g), v) in params.iter_mut().zip(grads).zip(self.mean_sq.iter_mut()) {
            for ((theta, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.iter_mut()) {
                *vi = rho * *vi + (1.0 - rho) * gi * gi;
                *theta += lr * gi / (vi.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Free-function form of [`RmsProp::step`].
pub fn rmsprop_step(params: &mut [&mut Tensor], grads: &[Tensor], state: &mut RmsProp) -> Result<()> {
    state.step(params, grads)
}
