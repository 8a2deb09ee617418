//! Dense tensors with tape-based reverse-mode differentiation.
//!
//! A [`Graph`] records every operation as it runs; [`Graph::backward`] walks
//! the record in reverse and accumulates gradients into each node. Leaves
//! created with [`Graph::param`] are the ones callers read gradients from.
//!
//! Only scalar-with-tensor broadcasting exists. Row-wise operations
//! (`add_bias`, `softmax_rows`, `l2_normalize_rows`, `masked_row_sum`) take
//! explicit shapes instead. Any NaN or infinity produced by an operation is
//! reported as [`Error::NonFinite`](crate::Error::NonFinite).
//!
//! ```
//! use salad::ndgrad::{Graph, Tensor};
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.param(Tensor::vector(vec![3.0]).unwrap());
//! let y = g.square(x).unwrap();
//! let loss = g.sum(y).unwrap();
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap().data(), &[6.0]);
//! ```

mod check;
mod graph;
mod tensor;

pub use check::{grad_check, grad_check_many};
pub(crate) use graph::softmax_in_place;
pub use graph::{BinaryOp, Graph, UnaryOp, Var, NORMALIZE_EPS};
pub use tensor::Tensor;

#[cfg(test)]
mod tests;
