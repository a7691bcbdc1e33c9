//! Reverse-mode differentiation of scalar objectives with respect to a flat
//! parameter vector.
//!
//! The tape is batched: every node holds a dense matrix whose rows are batch
//! elements, so a Monte-Carlo objective over a few hundred latent draws
//! costs a handful of matrix products instead of millions of scalar nodes.
//! The graph is rebuilt for every evaluation.
//!
//! ```
//! use flowvat::diffgraph::evaluate_with_gradient;
//!
//! // f(p) = p0^2 at p = [3]
//! let (v, g) = evaluate_with_gradient(&[3.0], |g| {
//!     let p = g.param(0, 1, 1);
//!     Ok(g.square(p))
//! })
//! .unwrap();
//! assert_eq!(v, 9.0);
//! assert_eq!(g, vec![6.0]);
//! ```

mod graph;
mod params;

pub use graph::{sigmoid, softplus, Graph, Tensor, Unary, Var};
pub use params::{ParamLayout, ParamVector, Segment};

use crate::{Error, Result};

/// Builds the objective on a fresh tape and returns its value and gradient.
///
/// The objective must reduce to a `1 x 1` node.
pub fn evaluate_with_gradient<F>(params: &[f64], objective: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Graph) -> Result<Var>,
{
    let mut g = Graph::new(params);
    let out = objective(&mut g)?;
    let grad = g.backward(out)?;
    Ok((g.scalar_value(out), grad))
}

/// Mean of a per-sample objective over the rows of `batch`, with gradient.
///
/// `per_sample` maps the batch node (`n x d`) to an `n x 1` column.
pub fn batched_forward<F>(params: &[f64], batch: &Tensor, per_sample: F) -> Result<(f64, Vec<f64>)>
where
    F: FnOnce(&mut Graph, Var) -> Result<Var>,
{
    if batch.nrows() == 0 {
        return Err(Error::EmptyInput("batched_forward"));
    }
    evaluate_with_gradient(params, |g| {
        let x = g.input(batch.clone());
        let col = per_sample(g, x)?;
        let (r, c) = g.shape(col);
        if r != batch.nrows() || c != 1 {
            return Err(Error::Shape {
                op: "batched_forward",
                detail: format!("per-sample output must be {}x1, got {r}x{c}", batch.nrows()),
            });
        }
        Ok(g.mean(col))
    })
}
