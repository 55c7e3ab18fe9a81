//! Residually gated composition of word embeddings:
//!
//! ```text
//! x     = [φ_aux, φ_main]
//! o_txt = ω_g · σ(W_gate(x)) ⊙ φ_main + ω_r · W_res(x)
//! ```
//!
//! `φ_*` are bias-free projections of the word vectors to `d_dim`. `W_gate`
//! and `W_res` are MLPs: batch norm over the `2·d_dim` concatenation, then
//! hidden blocks of linear → dropout → leaky ReLU (slope 0.01) of width
//! `d_dim`, then a final linear layer to `d_dim`.

use rand::RngCore;
use regada_autodiff::{Tensor, Var};

use super::params::{add_affine, Ctx, Linear, ParamId, ParamStore};
use crate::config::{Modality, ModelConfig};
use crate::Result;

pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub bn_gamma: ParamId,
    pub bn_beta: ParamId,
    pub bn_stats: usize,
    pub hidden: Vec<Linear>,
    pub out: Linear,
    pub dropout: f64,
}

impl Mlp {
    fn new(
        store: &mut ParamStore,
        name: &str,
        d_dim: usize,
        blocks: usize,
        dropout: f64,
        rng: &mut dyn RngCore,
    ) -> Self {
        let width_in = 2 * d_dim;
        let (bn_gamma, bn_beta) = add_affine(store, &format!("{name}.bn"), width_in);
        let bn_stats = store.add_stats(format!("{name}.bn"), width_in);
        let hidden = (0..blocks)
            .map(|i| {
                let fan_in = if i == 0 { width_in } else { d_dim };
                Linear::new(store, &format!("{name}.hidden.{i}"), fan_in, d_dim, true, rng)
            })
            .collect();
        let out = Linear::new(store, &format!("{name}.out"), d_dim, d_dim, true, rng);
        Self {
            bn_gamma,
            bn_beta,
            bn_stats,
            hidden,
            out,
            dropout,
        }
    }

    pub fn forward(&self, ctx: &mut Ctx<'_>, x: Var) -> Result<Var> {
        let mut h = ctx.batch_norm(x, self.bn_gamma, self.bn_beta, self.bn_stats)?;
        for l in &self.hidden {
            h = l.forward(ctx, h)?;
            h = ctx.dropout(h, self.dropout)?;
            h = ctx.g.leaky_relu(h, LEAKY_SLOPE);
        }
        self.out.forward(ctx, h)
    }
}

#[derive(Clone, Debug, PartialEq)]
enum Branches {
    Separate {
        gate: Mlp,
        res: Option<Mlp>,
    },
    /// One MLP feeds both the gate and the residual term.
    Shared(Mlp),
}

#[derive(Clone, Debug, PartialEq)]
pub struct TextEncoder {
    pub w_adverb: Linear,
    pub w_action: Linear,
    /// Projection of pair embeddings, present when the main modality is
    /// `pair`.
    pub w_pair: Option<Linear>,
    branches: Branches,
    pub omega_g: ParamId,
    pub omega_r: Option<ParamId>,
    use_sigmoid: bool,
    main: Modality,
    aux: Modality,
}

impl TextEncoder {
    pub fn new(cfg: &ModelConfig, store: &mut ParamStore, rng: &mut dyn RngCore) -> Self {
        let t = &cfg.text;
        let d = cfg.d_dim;
        let w_adverb = Linear::new(store, "text.w_adverb", cfg.d_theta, d, false, rng);
        let w_action = Linear::new(store, "text.w_action", cfg.d_theta, d, false, rng);
        let w_pair = (t.main == Modality::Pair).then(|| Linear::new(store, "text.w_pair", cfg.d_theta, d, false, rng));
        let branches = if t.share_weights {
            Branches::Shared(Mlp::new(store, "text.shared", d, t.n_gate, t.drop_g, rng))
        } else {
            let gate = Mlp::new(store, "text.gate", d, t.n_gate, t.drop_g, rng);
            let res = t
                .use_residual
                .then(|| Mlp::new(store, "text.res", d, t.n_res, t.drop_g, rng));
            Branches::Separate { gate, res }
        };
        let omega_g = store.add("text.omega_g", Tensor::scalar(1.0));
        let omega_r = t.use_residual.then(|| store.add("text.omega_r", Tensor::scalar(1.0)));
        Self {
            w_adverb,
            w_action,
            w_pair,
            branches,
            omega_g,
            omega_r,
            use_sigmoid: t.use_sigmoid,
            main: t.main,
            aux: t.aux,
        }
    }

    fn projection(&self, m: Modality) -> Linear {
        match m {
            Modality::Adverb => self.w_adverb,
            Modality::Action => self.w_action,
            Modality::Pair => self.w_pair.expect("pair projection exists when main is pair"),
        }
    }

    /// `(φ_main, φ_aux)` from raw word-vector rows of the main and auxiliary
    /// modality.
    pub fn project_words(&self, ctx: &mut Ctx<'_>, theta_main: Var, theta_aux: Var) -> Result<(Var, Var)> {
        let main = self.projection(self.main).forward(ctx, theta_main)?;
        let aux = self.projection(self.aux).forward(ctx, theta_aux)?;
        Ok((main, aux))
    }

    pub fn gate_mlp(&self) -> &Mlp {
        match &self.branches {
            Branches::Separate { gate, .. } => gate,
            Branches::Shared(m) => m,
        }
    }

    pub fn res_mlp(&self) -> Option<&Mlp> {
        match &self.branches {
            Branches::Separate { res, .. } => res.as_ref(),
            Branches::Shared(m) => self.omega_r.map(|_| m),
        }
    }

    pub fn shares_weights(&self) -> bool {
        matches!(self.branches, Branches::Shared(_))
    }

    pub fn uses_sigmoid(&self) -> bool {
        self.use_sigmoid
    }

    /// The gated composition of projected embeddings, one row per item.
    pub fn compose(&self, ctx: &mut Ctx<'_>, phi_main: Var, phi_aux: Var) -> Result<Var> {
        let x = ctx.g.concat_cols(&[phi_aux, phi_main])?;
        let (gate_pre, res_pre) = match &self.branches {
            Branches::Shared(m) => {
                let h = m.forward(ctx, x)?;
                (h, self.omega_r.map(|_| h))
            }
            Branches::Separate { gate, res } => {
                let gp = gate.forward(ctx, x)?;
                let rp = match res {
                    Some(r) => Some(r.forward(ctx, x)?),
                    None => None,
                };
                (gp, rp)
            }
        };
        let gate = if self.use_sigmoid {
            ctx.g.sigmoid(gate_pre)
        } else {
            gate_pre
        };
        let gated = ctx.g.mul(gate, phi_main)?;
        let og = ctx.var(self.omega_g);
        let mut out = ctx.g.scale(gated, og)?;
        if let (Some(r), Some(omega_r)) = (res_pre, self.omega_r) {
            let or = ctx.var(omega_r);
            let scaled = ctx.g.scale(r, or)?;
            out = ctx.g.add(out, scaled)?;
        }
        Ok(out)
    }
}
