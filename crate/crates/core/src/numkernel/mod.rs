//! Dense `f64` tensors, a reverse-mode tape, small MLPs and RMSProp.

mod gradcheck;
mod mlp;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{fd_check, GradCheckReport};
pub use mlp::{mlp_forward, Linear, Mlp};
pub use optim::{rmsprop_step, RmsProp};
pub use tape::{Gradients, LinkCoefficients, Segments, Tape, Var};
pub use tensor::Tensor;

/// Element-wise maximum over the present items; all-zero when none are present.
///
/// Ties resolve to the lowest item index.
pub fn masked_max_aggregate(items: &[Vec<f64>], present: &[bool], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; width];
    let mut seen = false;
    for (item, _) in items.iter().zip(present).filter(|(_, &p)| p) {
        if !seen {
            out.copy_from_slice(&item[..width]);
            seen = true;
        } else {
            for (o, &v) in out.iter_mut().zip(item) {
                if v > *o {
                    *o = v;
                }
            }
        }
    }
    out
}
