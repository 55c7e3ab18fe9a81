//! The retrieval model: a residually gated text encoder for adverb-action
//! compositions and an action-queried attention encoder for videos, both
//! mapping into one `d_dim`-wide joint space.

mod params;
pub mod text;
pub mod video;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regada_autodiff::{Mode, Tensor, Var};

pub use params::{Ctx, Linear, ParamId, ParamStore};
pub use text::TextEncoder;
pub use video::VideoEncoder;

use crate::config::{Modality, ModelConfig};
use crate::io::{EmbeddingTable, FeatureSequence};
use crate::{Error, Result};

/// Model parameters, batch-norm running statistics and the layouts that
/// interpret them.
#[derive(Clone, Debug)]
pub struct Regada {
    config: ModelConfig,
    params: ParamStore,
    text: TextEncoder,
    video: VideoEncoder,
}

impl Regada {
    /// Freshly initialised model; all draws come from `rng`.
    pub fn new(config: &ModelConfig, rng: &mut dyn RngCore) -> Self {
        let mut params = ParamStore::default();
        let text = TextEncoder::new(config, &mut params, rng);
        let video = VideoEncoder::new(config, &mut params, rng);
        Self {
            config: config.clone(),
            params,
            text,
            video,
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn text(&self) -> &TextEncoder {
        &self.text
    }

    pub fn video(&self) -> &VideoEncoder {
        &self.video
    }

    /// Start a forward pass. With `trainable`, every parameter is a graph
    /// leaf that receives gradients.
    pub fn ctx<'r>(&self, mode: Mode, trainable: bool, rng: &'r mut dyn RngCore) -> Ctx<'r> {
        Ctx::new(&self.params, mode, trainable, rng)
    }

    /// Keep the batch-norm statistics updated during a train-mode pass.
    pub fn absorb_stats(&mut self, ctx: &Ctx<'_>) {
        self.params.set_stats(ctx.stats().to_vec());
    }

    /// Text embeddings `o_txt` for the compositions `(adverb, action)`,
    /// one row each.
    pub fn embed_compositions(
        &self,
        ctx: &mut Ctx<'_>,
        table: &EmbeddingTable,
        comps: &[(usize, usize)],
    ) -> Result<Var> {
        let word = |m: Modality, (v, a): (usize, usize)| -> Result<&[f64]> {
            match m {
                Modality::Adverb => Ok(table.adverb(v)),
                Modality::Action => Ok(table.action(a)),
                Modality::Pair => table
                    .pair(v, a)
                    .ok_or_else(|| Error::Validation("pair embeddings required for main modality \"pair\"".into())),
            }
        };
        let tc = &self.config.text;
        let main_rows = comps.iter().map(|&c| word(tc.main, c)).collect::<Result<Vec<_>>>()?;
        let aux_rows = comps.iter().map(|&c| word(tc.aux, c)).collect::<Result<Vec<_>>>()?;
        let main = ctx.g.constant(Tensor::from_rows(&main_rows)?);
        let aux = ctx.g.constant(Tensor::from_rows(&aux_rows)?);
        let (phi_main, phi_aux) = self.text.project_words(ctx, main, aux)?;
        self.text.compose(ctx, phi_main, phi_aux)
    }

    /// Video embeddings `o_video`, one row per feature sequence, each
    /// queried by the word embedding of its action.
    pub fn embed_videos(
        &self,
        ctx: &mut Ctx<'_>,
        table: &EmbeddingTable,
        features: &[&FeatureSequence],
        actions: &[usize],
    ) -> Result<Var> {
        if features.len() != actions.len() {
            return Err(Error::Validation("one action per video required".into()));
        }
        let rows: Vec<&[f64]> = actions.iter().map(|&a| table.action(a)).collect();
        let theta = ctx.g.constant(Tensor::from_rows(&rows)?);
        self.video.encode(ctx, features, theta)
    }

    /// Eval-mode `o_txt` for every composition; row `v·A + a`.
    pub fn all_composition_embeddings(&self, table: &EmbeddingTable) -> Result<Tensor> {
        let (nv, na) = (table.num_adverbs(), table.num_actions());
        let comps: Vec<_> = (0..nv).flat_map(|v| (0..na).map(move |a| (v, a))).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = self.ctx(Mode::Eval, false, &mut rng);
        let out = self.embed_compositions(&mut ctx, table, &comps)?;
        Ok(ctx.g.value(out).clone())
    }

    /// Eval-mode `o_txt` for every adverb composed with action `a`; row `j`
    /// is adverb `j`.
    pub fn embed_all_adverbs(&self, table: &EmbeddingTable, action: usize) -> Result<Tensor> {
        let comps: Vec<_> = (0..table.num_adverbs()).map(|v| (v, action)).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut ctx = self.ctx(Mode::Eval, false, &mut rng);
        let out = self.embed_compositions(&mut ctx, table, &comps)?;
        Ok(ctx.g.value(out).clone())
    }

    /// Eval-mode `o_video` for many videos, encoded in chunks.
    pub fn video_embeddings(
        &self,
        table: &EmbeddingTable,
        features: &[&FeatureSequence],
        actions: &[usize],
    ) -> Result<Tensor> {
        const CHUNK: usize = 256;
        let mut data = Vec::with_capacity(features.len() * self.config.d_dim);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (f, a) in features.chunks(CHUNK).zip(actions.chunks(CHUNK)) {
            let mut ctx = self.ctx(Mode::Eval, false, &mut rng);
            let out = self.embed_videos(&mut ctx, table, f, a)?;
            data.extend_from_slice(ctx.g.value(out).data());
        }
        if features.is_empty() {
            return Err(Error::Validation("no videos to encode".into()));
        }
        Ok(Tensor::matrix(features.len(), self.config.d_dim, data))
    }

    /// Rebuild from named tensors (checkpoint contents). Every parameter
    /// and statistic of the layout must be present with the right shape.
    pub fn from_named(config: &ModelConfig, get: impl Fn(&str) -> Option<Tensor>) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut model = Self::new(config, &mut rng);
        model.params.load_named(get)?;
        Ok(model)
    }
}
