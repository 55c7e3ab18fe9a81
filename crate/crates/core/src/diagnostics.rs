//! Finite-difference checks of the op catalogue and of the full training
//! objective.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regada_autodiff::{check_case, grad_check, op_cases, CaseResult, GradCheckOptions, Graph, Mode, Tensor};

use crate::config::{AdverbNegatives, Modality, TrainConfig};
use crate::io::{EmbeddingTable, FeatureSequence, Vocabulary};
use crate::model::{Ctx, Regada};
use crate::objective::{batch_loss, sample_negatives};
use crate::{Error, Result};

/// Largest accepted relative error.
pub const TOLERANCE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossVariant {
    /// Default text encoder and antonym negatives.
    Default,
    /// Separate gate and residual MLPs, pair main embedding, identity gate,
    /// random adverb negatives.
    Unshared,
}

fn small_config(variant: LossVariant) -> TrainConfig {
    let mut c = TrainConfig::preset("tiny").expect("bundled preset");
    let m = &mut c.model;
    m.d_theta = 4;
    m.d_x = 5;
    m.d_dim = 4;
    m.video.heads = 2;
    m.video.head_dim = 2;
    m.video.n_proj = 1;
    m.text.n_gate = 2;
    m.text.n_res = 1;
    c.loss.margin = 0.5;
    if variant == LossVariant::Unshared {
        m.text.share_weights = false;
        m.text.use_sigmoid = false;
        m.text.main = Modality::Pair;
        m.text.aux = Modality::Adverb;
        c.loss.adverb_negatives = AdverbNegatives::RandomNonmatching;
    }
    c
}

fn gaussian(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Check the gradient of the full weighted loss with respect to every
/// model parameter at `points` random (parameter, batch) draws. Dropout is
/// active with masks reseeded on every evaluation, and batch norm runs in
/// training mode.
pub fn full_loss_check(variant: LossVariant, points: u64, seed_base: u64) -> Result<CaseResult> {
    let cfg = small_config(variant);
    let (nv, na, batch) = (4, 3, 5);
    let vocab = Vocabulary::new(
        (0..nv).map(|i| format!("v{i}")).collect(),
        (0..na).map(|i| format!("a{i}")).collect(),
        Some(&[(0, 1), (2, 3)]),
    )?;
    let mut out = CaseResult {
        name: format!("full loss ({variant:?})").to_lowercase(),
        points,
        max_rel_error: 0.0,
        worst_seed: seed_base,
    };
    for seed in seed_base..seed_base + points {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = Regada::new(&cfg.model, &mut rng);
        let dt = cfg.model.d_theta;
        let table = EmbeddingTable::new(
            gaussian(&mut rng, nv, dt),
            gaussian(&mut rng, na, dt),
            Some(gaussian(&mut rng, nv * na, dt)),
        )?;
        let feats: Vec<FeatureSequence> = (0..batch)
            .map(|_| {
                let t = rng.gen_range(1..4);
                FeatureSequence::new(gaussian(&mut rng, t, cfg.model.d_x))
            })
            .collect::<Result<_>>()?;
        let comps: Vec<(usize, usize)> = (0..batch)
            .map(|_| (rng.gen_range(0..nv), rng.gen_range(0..na)))
            .collect();
        let negatives = sample_negatives(&comps, &vocab, cfg.loss.adverb_negatives, &mut rng)?;
        let feat_refs: Vec<&FeatureSequence> = feats.iter().collect();
        let stats = model.params().stats().to_vec();
        let dropout_seed = rng.gen::<u64>();
        let failure = RefCell::new(None);

        let program = |g: &mut Graph, vars: &[regada_autodiff::Var]| -> regada_autodiff::Result<regada_autodiff::Var> {
            let mut drng = ChaCha8Rng::seed_from_u64(dropout_seed);
            let graph = std::mem::take(g);
            let mut ctx = Ctx::from_parts(graph, vars.to_vec(), stats.clone(), Mode::Train, &mut drng);
            let terms = batch_loss(&model, &mut ctx, &table, &cfg.loss, &feat_refs, &comps, &negatives);
            *g = std::mem::take(&mut ctx.g);
            match terms {
                Ok(t) => Ok(t.total),
                Err(Error::Tensor(e)) => Err(e),
                Err(other) => {
                    let msg = other.to_string();
                    failure.replace(Some(other));
                    Err(regada_autodiff::Error::NonFinite(msg))
                }
            }
        };
        let r = grad_check(program, model.params().values(), GradCheckOptions::default());
        if let Some(e) = failure.take() {
            return Err(e);
        }
        let r = r?;
        if r.max_rel_error > out.max_rel_error {
            out.max_rel_error = r.max_rel_error;
            out.worst_seed = seed;
        }
    }
    Ok(out)
}

/// Every op case and both loss variants at `points` points each, drawn
/// from seeds starting at `seed`.
pub fn gradcheck_suite(points: u64, seed: u64) -> Result<Vec<CaseResult>> {
    let mut out = Vec::new();
    for case in op_cases() {
        out.push(check_case(&case, points, seed, GradCheckOptions::default())?);
    }
    for v in [LossVariant::Default, LossVariant::Unshared] {
        out.push(full_loss_check(v, points, seed)?);
    }
    Ok(out)
}
