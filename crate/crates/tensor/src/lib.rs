//! Minimal dense tensors with tape-based reverse-mode differentiation.
//!
//! Tensors are row-major `f64` arrays of rank at most 3. Computation is
//! recorded on a [`Tape`]; every operation appends a node whose value is
//! computed eagerly. [`Tape::backward`] walks the nodes in reverse order
//! once and returns the gradient of a scalar output with respect to every
//! node that contributed to it.
//!
//! ```
//! use pots_tensor::{Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.leaf(Tensor::vector(vec![3.0]));
//! let sq = tape.mul(x, x).unwrap();
//! let y = tape.reduce_sum(sq);
//! let grads = tape.backward(y).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
//! ```

mod error;
mod gradcheck;
mod kernels;
mod optim;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use gradcheck::{grad_check, grad_check_many};
pub use optim::{adam_step, sgd_step, AdamConfig, AdamState};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Tensor, MAX_RANK};
