//! Minimal differentiable substrate: sequential layers with exact
//! reverse-mode gradients, Adam, a finite-difference checker, and
//! checkpoint serialization.

mod adam;
mod checkpoint;
mod gradcheck;
mod layer;
mod net;
mod params;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_VERSION};
pub use gradcheck::{finite_difference_error, grad_check, relative_error, RELATIVE_ERROR_FLOOR};
pub use layer::{LayerSpec, Network};
pub use net::{backward, forward, forward_untraced, infer, ForwardTrace, Mode};
pub use params::{init_params, init_params_into, ParamSet};
