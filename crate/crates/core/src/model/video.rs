//! Action-queried attention pooling over video segments, followed by a
//! projection MLP.
//!
//! Per head `j`, the word embedding of the action is the query:
//! `w = softmax(W_q^j θ_a · W_k^j x_t / √d_head)` over the segments `t`,
//! dropout is applied to `w` without renormalising, and the head output is
//! `Σ_t w_t W_v^j x_t`. Heads are concatenated and mapped by `W_attn` to
//! `d_dim`; `W_proj` then applies `n_proj` blocks of
//! linear → layer norm → ReLU → dropout.

use rand::RngCore;
use regada_autodiff::{sample_dropout_mask, Segment, Tensor, Var};

use super::params::{add_affine, Ctx, Linear, ParamId, ParamStore};
use crate::config::ModelConfig;
use crate::io::FeatureSequence;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct ProjBlock {
    pub linear: Linear,
    pub ln_gamma: ParamId,
    pub ln_beta: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VideoEncoder {
    pub w_q: Linear,
    pub w_k: Linear,
    pub w_v: Linear,
    pub w_attn: Linear,
    pub proj: Vec<ProjBlock>,
    pub heads: usize,
    pub head_dim: usize,
    pub drop_attn: f64,
    pub drop_proj: f64,
    pub d_x: usize,
}

impl VideoEncoder {
    pub fn new(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut dyn RngCore) -> Self {
        let v = &cfg.video;
        let inner = v.heads * v.head_dim;
        let d = cfg.d_dim;
        let w_q = Linear::new(store, "video.w_q", cfg.d_theta, inner, false, rng);
        let w_k = Linear::new(store, "video.w_k", cfg.d_x, inner, false, rng);
        let w_v = Linear::new(store, "video.w_v", cfg.d_x, inner, false, rng);
        let w_attn = Linear::new(store, "video.w_attn", inner, d, true, rng);
        let proj = (0..v.n_proj)
            .map(|i| {
                let name = format!("video.proj.{i}");
                let linear = Linear::new(store, &name, d, d, true, rng);
                let (ln_gamma, ln_beta) = add_affine(store, &format!("{name}.ln"), d);
                ProjBlock {
                    linear,
                    ln_gamma,
                    ln_beta,
                }
            })
            .collect();
        Self {
            w_q,
            w_k,
            w_v,
            w_attn,
            proj,
            heads: v.heads,
            head_dim: v.head_dim,
            drop_attn: v.drop_attn,
            drop_proj: v.drop_proj,
            d_x: cfg.d_x,
        }
    }

    /// Stack the segments of all videos into one matrix plus the row range
    /// of each video.
    pub fn stack(&self, features: &[&FeatureSequence]) -> Result<(Tensor, Vec<Segment>)> {
        let total: usize = features.iter().map(|f| f.segments()).sum();
        let mut data = Vec::with_capacity(total * self.d_x);
        let mut segments = Vec::with_capacity(features.len());
        for f in features {
            if f.width() != self.d_x {
                return Err(Error::Validation(format!(
                    "feature width {} does not match d_x = {}",
                    f.width(),
                    self.d_x
                )));
            }
            segments.push(Segment {
                start: data.len() / self.d_x,
                len: f.segments(),
            });
            data.extend_from_slice(f.matrix().data());
        }
        if features.is_empty() {
            return Err(Error::Validation("no videos to encode".into()));
        }
        Ok((Tensor::matrix(total, self.d_x, data), segments))
    }

    /// Pooled representation `o_attn` (`B × d_dim`) for stacked segments
    /// `x` and query word vectors `theta` (`B × d_θ`).
    pub fn attend(&self, ctx: &mut Ctx<'_>, x: Var, segments: &[Segment], theta: Var) -> Result<Var> {
        let q = self.w_q.forward(ctx, theta)?;
        let k = self.w_k.forward(ctx, x)?;
        let v = self.w_v.forward(ctx, x)?;
        let rows = ctx.g.shape(x)[0];
        let mask = sample_dropout_mask(rows * self.heads, self.drop_attn, ctx.mode, &mut *ctx.rng)?;
        let pooled = ctx.g.query_attention(q, k, v, segments, self.heads, mask)?;
        self.w_attn.forward(ctx, pooled)
    }

    /// `W_proj`: the projection blocks applied to `o_attn`.
    pub fn project(&self, ctx: &mut Ctx<'_>, mut h: Var) -> Result<Var> {
        for b in &self.proj {
            h = b.linear.forward(ctx, h)?;
            h = ctx.layer_norm(h, b.ln_gamma, b.ln_beta)?;
            h = ctx.g.relu(h);
            h = ctx.dropout(h, self.drop_proj)?;
        }
        Ok(h)
    }

    pub fn encode(&self, ctx: &mut Ctx<'_>, features: &[&FeatureSequence], theta: Var) -> Result<Var> {
        let (x, segments) = self.stack(features)?;
        let x = ctx.g.constant(x);
        let attn = self.attend(ctx, x, &segments, theta)?;
        self.project(ctx, attn)
    }
}
