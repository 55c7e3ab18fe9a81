//! Dense-tensor tape with reverse-mode differentiation.
//!
//! The engine is deliberately narrow: rank-2 tensors in `f64`, a linear tape
//! of recorded ops, and exactly the layers a residually gated text encoder
//! and a query-attention video encoder need (linear maps, gating
//! nonlinearities, batch/layer normalisation, dropout, row-wise norms and a
//! fused multi-head query attention over ragged segment lists).
//!
//! ```
//! use regada_autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::row(vec![1.0, -2.0, 3.0]));
//! let sq = g.square(x);
//! let loss = g.sum(sq);
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap(), &[2.0, -4.0, 6.0]);
//! ```

mod adam;
mod attention;
mod error;
mod gradcheck;
mod graph;
mod norm;
mod suite;
mod tensor;

pub use adam::{Adam, AdamConfig, WeightDecay};
pub use attention::Segment;
pub use error::{Error, Result};
pub use gradcheck::{grad_check, GradCheckOptions, GradCheckReport};
pub use graph::{sample_dropout_mask, Binary, Graph, Mode, Reduce, Unary, Var};
pub use norm::{BatchNormStats, BN_EPS, BN_MOMENTUM, LN_EPS};
pub use suite::{check_case, op_cases, CaseResult, OpCase};
pub use tensor::Tensor;
