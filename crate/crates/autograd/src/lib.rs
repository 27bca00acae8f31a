//! A compact CPU tensor engine with tape-free, reference-counted reverse-mode
//! autodiff.
//!
//! Every backward rule is written in terms of differentiable [`Var`]
//! operations, so a gradient can itself be differentiated. This is what makes
//! gradient penalties (which need `d/dθ ‖∇ₓ D(x)‖`) possible.
//!
//! ```
//! use patchwork_autograd::{grad, Array, Var};
//!
//! let x = Var::leaf(Array::from_vec(vec![3], vec![1.0f64, 2.0, 3.0]).unwrap());
//! let y = x.square().sum();
//! let g = grad(&y, &[&x], true).remove(0);
//! // d/dx sum(2x) = 2
//! let gg = grad(&g.sum(), &[&x], false).remove(0);
//! assert_eq!(g.value().data(), &[2.0, 4.0, 6.0]);
//! assert_eq!(gg.value().data(), &[2.0, 2.0, 2.0]);
//! ```

mod array;
mod conv;
mod elem;
mod ops;
mod optim;
mod spatial;
mod var;

pub use array::{Array, ShapeError};
pub use conv::ConvGeom;
pub use elem::Elem;
pub use optim::{Adam, AdamConfig, AdamState};
pub use var::{grad, is_grad_enabled, no_grad, NoGradGuard, Var};
