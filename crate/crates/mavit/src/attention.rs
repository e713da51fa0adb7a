//! Multi-head attention with low-rank sequence projections.
//!
//! Keys and values are compressed along the token axis by learned `k x n`
//! matrices `E` and `F`, so each head computes
//! `softmax(Q (E K)^T / sqrt(d)) (F V)` with an `n x k` score matrix instead
//! of `n x n`.

use histocad_core::Scalar;
use rand_chacha::ChaCha8Rng;

use crate::error::MavitError;
use crate::graph::{Graph, Var};
use crate::layers::Linear;
use crate::params::{uniform, ParamId, ParamStore};
use crate::tensor::Tensor;

/// Operands of a single attention head.
#[derive(Debug, Clone)]
pub struct AttentionInputs<T> {
    pub q: Tensor<T>,
    pub k: Tensor<T>,
    pub v: Tensor<T>,
    pub d_k: usize,
    /// Key projection, `k x n`.
    pub e: Tensor<T>,
    /// Value projection, `k x n`.
    pub f: Tensor<T>,
}

/// Evaluates one attention head on concrete matrices.
pub fn linear_attention<T: Scalar>(a: &AttentionInputs<T>) -> Result<Tensor<T>, MavitError> {
    for (name, t) in [("Q", &a.q), ("K", &a.k), ("V", &a.v), ("E", &a.e), ("F", &a.f)] {
        if t.shape().len() != 2 {
            return Err(MavitError::Shape(format!("{name} must be a matrix, got {:?}", t.shape())));
        }
        if !t.is_finite() {
            return Err(MavitError::NonFinite(format!("attention input {name}")));
        }
    }
    let n = a.q.shape()[0];
    if a.k.shape()[0] != n || a.v.shape()[0] != n {
        return Err(MavitError::Shape("Q, K and V must have the same number of rows".into()));
    }
    if a.e.shape()[1] != n || a.f.shape()[1] != n || a.e.shape()[0] != a.f.shape()[0] {
        return Err(MavitError::Shape(format!(
            "projections {:?}/{:?} do not map {n} tokens to a common rank",
            a.e.shape(),
            a.f.shape()
        )));
    }
    if a.e.shape()[0] > n {
        return Err(MavitError::Shape(format!("projection rank {} exceeds {n} tokens", a.e.shape()[0])));
    }
    let mut g = Graph::new();
    let q = g.input(a.q.clone());
    let k = g.input(a.k.clone());
    let v = g.input(a.v.clone());
    let e = g.input(a.e.clone());
    let f = g.input(a.f.clone());
    let out = attend(&mut g, q, k, v, e, f, a.d_k)?;
    Ok(g.value(out).clone())
}

/// Builds `softmax(Q (E K)^T / sqrt(d_k)) (F V)` on the tape.
pub fn attend<T: Scalar>(
    g: &mut Graph<'_, T>,
    q: Var,
    k: Var,
    v: Var,
    e: Var,
    f: Var,
    d_k: usize,
) -> Result<Var, MavitError> {
    let ek = g.matmul(e, k)?;
    let scores = g.matmul_nt(q, ek)?;
    let scores = g.scale(scores, T::one() / T::from_count(d_k).sqrt());
    let weights = g.softmax_rows(scores)?;
    let fv = g.matmul(f, v)?;
    g.matmul(weights, fv)
}

#[derive(Debug, Clone)]
pub struct MultiHeadLinearAttention {
    wq: Linear,
    wk: Linear,
    wv: Linear,
    wo: Linear,
    proj_e: ParamId,
    proj_f: ParamId,
    heads: usize,
    dim: usize,
}

impl MultiHeadLinearAttention {
    pub fn new<T: Scalar>(
        store: &mut ParamStore<T>,
        rng: &mut ChaCha8Rng,
        name: &str,
        dim: usize,
        heads: usize,
        tokens: usize,
        rank: usize,
    ) -> Self {
        let wq = Linear::new(store, rng, &format!("{name}.wq"), dim, dim);
        let wk = Linear::new(store, rng, &format!("{name}.wk"), dim, dim);
        let wv = Linear::new(store, rng, &format!("{name}.wv"), dim, dim);
        let wo = Linear::new(store, rng, &format!("{name}.wo"), dim, dim);
        let bound = (3.0 / tokens as f64).sqrt();
        let proj_e = store.add(format!("{name}.proj_e"), uniform(rng, vec![rank, tokens], bound));
        let proj_f = store.add(format!("{name}.proj_f"), uniform(rng, vec![rank, tokens], bound));
        Self { wq, wk, wv, wo, proj_e, proj_f, heads, dim }
    }

    /// `x` is `[tokens, dim]`.
    pub fn apply<T: Scalar>(&self, g: &mut Graph<'_, T>, x: Var) -> Result<Var, MavitError> {
        if self.dim % self.heads != 0 {
            return Err(MavitError::Config(format!(
                "channels {} not divisible by {} heads",
                self.dim, self.heads
            )));
        }
        let q = self.wq.apply(g, x)?;
        let k = self.wk.apply(g, x)?;
        let v = self.wv.apply(g, x)?;
        let e = g.param(self.proj_e);
        let f = g.param(self.proj_f);
        let d = self.dim / self.heads;
        let mut outs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = g.slice_last(q, h * d, d)?;
            let kh = g.slice_last(k, h * d, d)?;
            let vh = g.slice_last(v, h * d, d)?;
            outs.push(attend(g, qh, kh, vh, e, f, d)?);
        }
        let merged = if outs.len() == 1 { outs[0] } else { g.concat(&outs)? };
        self.wo.apply(g, merged)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: usize, cols: usize, v: &[f64]) -> Tensor<f64> {
        Tensor::new(vec![rows, cols], v.to_vec()).unwrap()
    }

    #[test]
    fn single_token_returns_value_row() {
        let a = AttentionInputs {
            q: m(1, 2, &[0.3, -1.0]),
            k: m(1, 2, &[2.0, 0.5]),
            v: m(1, 2, &[4.0, -7.0]),
            d_k: 2,
            e: Tensor::identity(1),
            f: Tensor::identity(1),
        };
        assert_eq!(linear_attention(&a).unwrap().data(), &[4.0, -7.0]);
    }

    #[test]
    fn zero_queries_give_uniform_weights() {
        let z = m(2, 1, &[0.0, 0.0]);
        let a = AttentionInputs {
            q: z.clone(),
            k: z.clone(),
            v: z,
            d_k: 1,
            e: Tensor::identity(2),
            f: Tensor::identity(2),
        };
        assert_eq!(linear_attention(&a).unwrap().data(), &[0.0, 0.0]);

        let mut g: Graph<'_, f64> = Graph::new();
        let q = g.input(m(2, 1, &[0.0, 0.0]));
        let k = g.input(m(2, 1, &[0.0, 0.0]));
        let ek = g.matmul_nt(q, k).unwrap();
        let w = g.softmax_rows(ek).unwrap();
        assert_eq!(g.value(w).data(), &[0.5, 0.5, 0.5, 0.5]);
    }

    #[test]
    fn rejects_non_finite_and_bad_rank() {
        let mut a = AttentionInputs {
            q: m(2, 1, &[f64::NAN, 0.0]),
            k: m(2, 1, &[0.0, 0.0]),
            v: m(2, 1, &[0.0, 0.0]),
            d_k: 1,
            e: Tensor::identity(2),
            f: Tensor::identity(2),
        };
        assert!(matches!(linear_attention(&a), Err(MavitError::NonFinite(_))));
        a.q = m(2, 1, &[0.0, 0.0]);
        a.e = Tensor::zeros(vec![3, 2]);
        a.f = Tensor::zeros(vec![3, 2]);
        assert!(matches!(linear_attention(&a), Err(MavitError::Shape(_))));
    }
}
