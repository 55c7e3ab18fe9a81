//! Training losses.
//!
//! * `trip(a, p, n) = max(0, ‖a − p‖₂ − ‖a − n‖₂ + μ)`
//! * action triplet: video anchor, positive `o_txt(a, v)`, negative
//!   `o_txt(ā, v)` with `ā ≠ a`
//! * adverb triplet: negative `o_txt(a, v̄)` with `v̄` the antonym of `v`
//!   (or a random other adverb)
//! * regression: squared Euclidean distance between `o_video` and
//!   `o_txt(a, v)`
//!
//! Each term is a mean over the batch; the total is
//! `λ_a·L_a + λ_v·L_v + λ_reg·L_reg`, and a term whose weight is zero is not
//! computed at all.

use rand::{Rng, RngCore};
use regada_autodiff::{Graph, Reduce, Tensor, Var};

use crate::config::{AdverbNegatives, LossConfig};
use crate::io::{EmbeddingTable, FeatureSequence, Vocabulary};
use crate::model::{Ctx, Regada};
use crate::{Error, Result};

/// `trip` on plain vectors.
pub fn trip(anchor: &[f64], positive: &[f64], negative: &[f64], margin: f64) -> f64 {
    let dist = |x: &[f64]| anchor.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
    (dist(positive) - dist(negative) + margin).max(0.0)
}

/// Per-row Euclidean distances `‖x_i − y_i‖₂` as a `B × 1` column.
fn row_distances(g: &mut Graph, x: Var, y: Var) -> Result<Var> {
    let d = g.sub(x, y)?;
    Ok(g.reduce_rows(Reduce::L2Norm, d))
}

/// Mean triplet loss over the rows of `anchor`, `positive`, `negative`.
pub fn triplet_loss(g: &mut Graph, anchor: Var, positive: Var, negative: Var, margin: f64) -> Result<Var> {
    let dp = row_distances(g, anchor, positive)?;
    let dn = row_distances(g, anchor, negative)?;
    let diff = g.sub(dp, dn)?;
    let mu = g.constant(Tensor::scalar(margin));
    let shifted = g.add_row(diff, mu)?;
    let hinge = g.max0(shifted);
    Ok(g.mean(hinge))
}

/// Mean over rows of the squared Euclidean distance.
pub fn regression_loss(g: &mut Graph, video: Var, text: Var) -> Result<Var> {
    let d = g.sub(video, text)?;
    let sq = g.square(d);
    let per_row = g.reduce_rows(Reduce::Sum, sq);
    Ok(g.mean(per_row))
}

/// The weighted terms of one batch. Skipped terms are `None`.
#[derive(Clone, Copy, Debug)]
pub struct LossTerms {
    pub action: Option<Var>,
    pub adverb: Option<Var>,
    pub regression: Option<Var>,
    pub total: Var,
}

/// Combine the loss terms. `neg_action` / `neg_adverb` must be given when
/// the corresponding weight is positive.
pub fn total_loss(
    g: &mut Graph,
    cfg: &LossConfig,
    video: Var,
    positive: Var,
    neg_action: Option<Var>,
    neg_adverb: Option<Var>,
) -> Result<LossTerms> {
    let missing = |what: &str| Error::Config(format!("{what} negatives required by a positive weight"));
    let action = if cfg.lambda_action > 0.0 {
        let n = neg_action.ok_or_else(|| missing("action"))?;
        Some(triplet_loss(g, video, positive, n, cfg.margin)?)
    } else {
        None
    };
    let adverb = if cfg.lambda_adverb > 0.0 {
        let n = neg_adverb.ok_or_else(|| missing("adverb"))?;
        Some(triplet_loss(g, video, positive, n, cfg.margin)?)
    } else {
        None
    };
    let regression = if cfg.lambda_reg > 0.0 {
        Some(regression_loss(g, video, positive)?)
    } else {
        None
    };
    let mut total: Option<Var> = None;
    for (term, w) in [
        (action, cfg.lambda_action),
        (adverb, cfg.lambda_adverb),
        (regression, cfg.lambda_reg),
    ] {
        if let Some(t) = term {
            let weighted = g.mul_const(t, w);
            total = Some(match total {
                Some(acc) => g.add(acc, weighted)?,
                None => weighted,
            });
        }
    }
    let total = total.ok_or_else(|| Error::Config("all loss weights are zero".into()))?;
    Ok(LossTerms {
        action,
        adverb,
        regression,
        total,
    })
}

/// Uniform draw from `0..n` excluding `skip`. Needs `n ≥ 2`.
pub fn draw_other(n: usize, skip: usize, rng: &mut dyn RngCore) -> usize {
    debug_assert!(n >= 2 && skip < n);
    let r = rng.gen_range(0..n - 1);
    if r >= skip {
        r + 1
    } else {
        r
    }
}

/// Negative labels for one batch of `(adverb, action)` compositions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Negatives {
    /// `(adverb, ā)` per sample.
    pub action: Vec<(usize, usize)>,
    /// `(v̄, action)` per sample.
    pub adverb: Vec<(usize, usize)>,
}

/// Draw negatives for every sample: first all negative actions, then all
/// negative adverbs (random mode only draws).
pub fn sample_negatives(
    comps: &[(usize, usize)],
    vocab: &Vocabulary,
    mode: AdverbNegatives,
    rng: &mut dyn RngCore,
) -> Result<Negatives> {
    let na = vocab.num_actions();
    let nv = vocab.num_adverbs();
    if na < 2 {
        return Err(Error::Config("action negatives need at least two actions".into()));
    }
    let action = comps.iter().map(|&(v, a)| (v, draw_other(na, a, rng))).collect();
    let adverb = match mode {
        AdverbNegatives::Antonym => comps
            .iter()
            .map(|&(v, a)| {
                vocab
                    .antonym(v)
                    .map(|w| (w, a))
                    .ok_or_else(|| Error::Config("antonym negatives need an antonym map".into()))
            })
            .collect::<Result<Vec<_>>>()?,
        AdverbNegatives::RandomNonmatching => {
            if nv < 2 {
                return Err(Error::Config(
                    "random adverb negatives need at least two adverbs".into(),
                ));
            }
            comps.iter().map(|&(v, a)| (draw_other(nv, v, rng), a)).collect()
        }
    };
    Ok(Negatives { action, adverb })
}

/// Full forward pass of one batch: videos, positive compositions, the
/// negatives needed by the weighted terms, and the combined loss. The
/// positive, negative-action and negative-adverb compositions are encoded
/// as three separate text batches.
pub fn batch_loss(
    model: &Regada,
    ctx: &mut Ctx<'_>,
    table: &EmbeddingTable,
    cfg: &LossConfig,
    features: &[&FeatureSequence],
    comps: &[(usize, usize)],
    negatives: &Negatives,
) -> Result<LossTerms> {
    let actions: Vec<usize> = comps.iter().map(|&(_, a)| a).collect();
    let video = model.embed_videos(ctx, table, features, &actions)?;
    let positive = model.embed_compositions(ctx, table, comps)?;
    let neg_action = if cfg.lambda_action > 0.0 {
        Some(model.embed_compositions(ctx, table, &negatives.action)?)
    } else {
        None
    };
    let neg_adverb = if cfg.lambda_adverb > 0.0 {
        Some(model.embed_compositions(ctx, table, &negatives.adverb)?)
    } else {
        None
    };
    total_loss(&mut ctx.g, cfg, video, positive, neg_action, neg_adverb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg(la: f64, lv: f64, lr: f64) -> LossConfig {
        LossConfig {
            lambda_action: la,
            lambda_adverb: lv,
            lambda_reg: lr,
            margin: 0.5,
            adverb_negatives: AdverbNegatives::Antonym,
        }
    }

    fn rows(g: &mut Graph, r: &[&[f64]]) -> Var {
        g.constant(Tensor::from_rows(r).unwrap())
    }

    #[test]
    fn trip_examples() {
        assert_eq!(trip(&[0.0, 0.0], &[0.0, 0.0], &[1.0, 0.0], 0.5), 0.0);
        assert_eq!(trip(&[0.3, 0.1], &[1.0, 2.0], &[1.0, 2.0], 0.5), 0.5);
        assert_eq!(trip(&[0.0, 0.0], &[0.0, 3.0], &[2.0, 0.0], 0.5), 1.5);
    }

    #[test]
    fn batched_triplet_matches_examples() {
        let mut g = Graph::new();
        let a = rows(&mut g, &[&[0.0, 0.0], &[0.0, 0.0], &[0.3, 0.1]]);
        let p = rows(&mut g, &[&[0.0, 0.0], &[0.0, 3.0], &[1.0, 2.0]]);
        let n = rows(&mut g, &[&[1.0, 0.0], &[2.0, 0.0], &[1.0, 2.0]]);
        let l = triplet_loss(&mut g, a, p, n, 0.5).unwrap();
        assert!((g.value(l).item() - (0.0 + 1.5 + 0.5) / 3.0).abs() < 1e-15);

        // one sample, and the same sample repeated
        let mut g = Graph::new();
        let a = rows(&mut g, &[&[0.0, 0.0], &[0.0, 0.0]]);
        let p = rows(&mut g, &[&[0.0, 3.0], &[0.0, 3.0]]);
        let n = rows(&mut g, &[&[2.0, 0.0], &[2.0, 0.0]]);
        let l = triplet_loss(&mut g, a, p, n, 0.5).unwrap();
        assert_eq!(g.value(l).item(), 1.5);
    }

    #[test]
    fn regression_examples() {
        let mut g = Graph::new();
        let x = rows(&mut g, &[&[1.0, 2.0]]);
        let l = regression_loss(&mut g, x, x).unwrap();
        assert_eq!(g.value(l).item(), 0.0);
        let y = rows(&mut g, &[&[1.0, 3.0]]);
        let l = regression_loss(&mut g, x, y).unwrap();
        assert_eq!(g.value(l).item(), 1.0);
    }

    #[test]
    fn weights_select_terms() {
        let mut g = Graph::new();
        let v = rows(&mut g, &[&[0.0, 0.0], &[1.0, 1.0]]);
        let p = rows(&mut g, &[&[0.0, 3.0], &[1.0, 0.0]]);
        let na = rows(&mut g, &[&[2.0, 0.0], &[1.0, 1.5]]);
        let nv = rows(&mut g, &[&[0.1, 0.0], &[0.0, 0.0]]);

        let only_a = total_loss(&mut g, &cfg(1.0, 0.0, 0.0), v, p, Some(na), Some(nv)).unwrap();
        assert!(only_a.adverb.is_none() && only_a.regression.is_none());
        let a = triplet_loss(&mut g, v, p, na, 0.5).unwrap();
        assert_eq!(g.value(only_a.total).item(), g.value(a).item());

        let only_r = total_loss(&mut g, &cfg(0.0, 0.0, 1.0), v, p, None, None).unwrap();
        let r = regression_loss(&mut g, v, p).unwrap();
        assert_eq!(g.value(only_r.total).item(), g.value(r).item());

        let all = total_loss(&mut g, &cfg(1.0, 2.0, 1.0), v, p, Some(na), Some(nv)).unwrap();
        let la = g.value(all.action.unwrap()).item();
        let lv = g.value(all.adverb.unwrap()).item();
        let lr = g.value(all.regression.unwrap()).item();
        assert!((g.value(all.total).item() - (la + 2.0 * lv + lr)).abs() < 1e-15);

        assert!(total_loss(&mut g, &cfg(1.0, 0.0, 0.0), v, p, None, None).is_err());
        assert!(total_loss(&mut g, &cfg(0.0, 0.0, 0.0), v, p, Some(na), Some(nv)).is_err());
    }

    #[test]
    fn negative_sampling_rules() {
        let vocab = Vocabulary::new(
            (0..6).map(|i| format!("v{i}")).collect(),
            (0..5).map(|i| format!("a{i}")).collect(),
            Some(&[(0, 1), (2, 3), (4, 5)]),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let comps: Vec<(usize, usize)> = (0..10_000).map(|i| (i % 6, i % 5)).collect();
        let ant = sample_negatives(&comps, &vocab, AdverbNegatives::Antonym, &mut rng).unwrap();
        let rnd = sample_negatives(&comps, &vocab, AdverbNegatives::RandomNonmatching, &mut rng).unwrap();
        let mut hits = [0usize; 6];
        for (i, &(v, a)) in comps.iter().enumerate() {
            assert_eq!(ant.adverb[i], (vocab.antonym(v).unwrap(), a));
            assert_eq!(ant.action[i].0, v);
            assert_ne!(ant.action[i].1, a);
            assert_ne!(rnd.adverb[i].0, v);
            assert_eq!(rnd.adverb[i].1, a);
            hits[rnd.adverb[i].0] += 1;
        }
        // every other adverb is reachable
        assert!(hits.iter().all(|&h| h > 1500), "{hits:?}");

        let one_action = Vocabulary::new(vec!["x".into(), "y".into()], vec!["a".into()], None).unwrap();
        assert!(sample_negatives(&[(0, 0)], &one_action, AdverbNegatives::RandomNonmatching, &mut rng).is_err());
        let two = Vocabulary::new(vec!["x".into(), "y".into()], vec!["a".into(), "b".into()], None).unwrap();
        assert!(sample_negatives(&[(0, 0)], &two, AdverbNegatives::Antonym, &mut rng).is_err());
    }
}
