//! Retrieval metrics.
//!
//! Everything is computed from a score table `S[i][v]`: the similarity of
//! test video `i` to the composition of adverb `v` with the video's own
//! action.
//!
//! * **Adverb → video (mAP).** Each distinct `(v, a)` in the test set is a
//!   query; it ranks the pool `Γ_a` of test videos with action `a` by
//!   `S[·][v]`, a video being relevant when its adverb is `v`. Query APs are
//!   averaged per adverb; `mAP_M` is the plain mean over adverbs and
//!   `mAP_W` weights adverb `v` by its share of the test samples.
//! * **Video → adverb (Acc-A).** A video counts as correct when
//!   `S[i][v] > S[i][antonym(v)]`; ties count as wrong.
//!
//! Ties in every ranking are broken by ascending index.

use std::collections::{BTreeMap, BTreeSet};

use regada_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::io::{Dataset, Vocabulary};
use crate::model::Regada;
use crate::{Error, Result};

/// Cosine similarity; `-1` when either vector has zero norm.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        -1.0
    } else {
        dot / (na * nb)
    }
}

/// Items in descending score order; equal scores keep input order.
#[derive(Clone, Debug, PartialEq)]
pub struct RankedList {
    pub items: Vec<usize>,
    pub scores: Vec<f64>,
}

impl RankedList {
    /// Rank `items` by the matching `scores`.
    pub fn new(items: &[usize], scores: &[f64]) -> Self {
        assert_eq!(items.len(), scores.len());
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.sort_by(|&x, &y| scores[y].total_cmp(&scores[x]).then(x.cmp(&y)));
        Self {
            items: order.iter().map(|&k| items[k]).collect(),
            scores: order.iter().map(|&k| scores[k]).collect(),
        }
    }

    pub fn position(&self, item: usize) -> Option<usize> {
        self.items.iter().position(|&i| i == item)
    }
}

/// Rank every row of `candidates` by cosine similarity to `query`.
pub fn rank_by_cosine(query: &[f64], candidates: &Tensor, ids: &[usize]) -> RankedList {
    let scores: Vec<f64> = ids.iter().map(|&i| cosine(query, candidates.row_slice(i))).collect();
    RankedList::new(ids, &scores)
}

/// Adverbs ranked for one video; `adverb_embeddings` row `j` is
/// `o_txt(a, j)` for the video's action.
pub fn video_to_adverb(video: &[f64], adverb_embeddings: &Tensor) -> RankedList {
    let ids: Vec<usize> = (0..adverb_embeddings.rows()).collect();
    rank_by_cosine(video, adverb_embeddings, &ids)
}

/// Videos of `pool` (rows of `videos`) ranked for a composition embedding.
pub fn adverb_to_video(query: &[f64], videos: &Tensor, pool: &[usize]) -> RankedList {
    rank_by_cosine(query, videos, pool)
}

/// Mean of precision@k over the relevant positions `k` (1-based). `None`
/// when nothing is relevant.
pub fn average_precision(relevance: &[bool]) -> Option<f64> {
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (k, &r) in relevance.iter().enumerate() {
        if r {
            hits += 1;
            sum += hits as f64 / (k + 1) as f64;
        }
    }
    (hits > 0).then(|| sum / hits as f64)
}

/// Similarities of each test video to all adverbs composed with its action.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    /// Row `i`, column `v`.
    pub scores: Vec<Vec<f64>>,
    pub actions: Vec<usize>,
    pub adverbs: Vec<usize>,
    pub num_adverbs: usize,
}

impl ScoreTable {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapResult {
    pub map_m: f64,
    pub map_w: f64,
    /// Mean AP of each adverb's queries; `None` for adverbs without a query.
    pub per_adverb: Vec<Option<f64>>,
    /// Test samples per adverb.
    pub support: Vec<usize>,
    pub queries: usize,
    /// Queries without a relevant video (never happens for queries drawn
    /// from the test set itself, kept for completeness).
    pub skipped: usize,
}

pub fn map_metrics(t: &ScoreTable) -> Result<MapResult> {
    if t.is_empty() {
        return Err(Error::Validation("empty test set".into()));
    }
    let n = t.len();
    let mut pools: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &a) in t.actions.iter().enumerate() {
        pools.entry(a).or_default().push(i);
    }
    let queries: BTreeSet<(usize, usize)> = t.adverbs.iter().copied().zip(t.actions.iter().copied()).collect();
    let mut ap_sum = vec![0.0; t.num_adverbs];
    let mut ap_count = vec![0usize; t.num_adverbs];
    let mut skipped = 0;
    for &(v, a) in &queries {
        let pool = &pools[&a];
        let scores: Vec<f64> = pool.iter().map(|&i| t.scores[i][v]).collect();
        let ranked = RankedList::new(pool, &scores);
        let rel: Vec<bool> = ranked.items.iter().map(|&i| t.adverbs[i] == v).collect();
        match average_precision(&rel) {
            Some(ap) => {
                ap_sum[v] += ap;
                ap_count[v] += 1;
            }
            None => skipped += 1,
        }
    }
    let mut support = vec![0usize; t.num_adverbs];
    for &v in &t.adverbs {
        support[v] += 1;
    }
    let per_adverb: Vec<Option<f64>> = ap_sum
        .iter()
        .zip(&ap_count)
        .map(|(&s, &c)| (c > 0).then(|| s / c as f64))
        .collect();
    let present: Vec<(usize, f64)> = per_adverb
        .iter()
        .enumerate()
        .filter_map(|(v, ap)| ap.map(|x| (v, x)))
        .collect();
    let map_m = present.iter().map(|&(_, ap)| ap).sum::<f64>() / present.len() as f64;
    let map_w = present
        .iter()
        .map(|&(v, ap)| ap * support[v] as f64 / n as f64)
        .sum::<f64>();
    Ok(MapResult {
        map_m,
        map_w,
        per_adverb,
        support,
        queries: queries.len(),
        skipped,
    })
}

/// Binary antonym accuracy; `None` without an antonym map.
pub fn antonym_accuracy(t: &ScoreTable, vocab: &Vocabulary) -> Option<f64> {
    if !vocab.has_antonyms() || t.is_empty() {
        return None;
    }
    let correct = t
        .scores
        .iter()
        .zip(&t.adverbs)
        .filter(|(row, &v)| row[v] > row[vocab.antonym(v).expect("total map")])
        .count();
    Some(correct as f64 / t.len() as f64)
}

/// Cosine score table of a trained model on the samples `test`.
pub fn model_scores(model: &Regada, data: &Dataset, test: &[usize]) -> Result<ScoreTable> {
    let table = &data.embeddings;
    let comps = model.all_composition_embeddings(table)?;
    let feats: Vec<_> = test.iter().map(|&i| &data.features[i]).collect();
    let actions: Vec<usize> = test.iter().map(|&i| data.samples[i].action).collect();
    let videos = model.video_embeddings(table, &feats, &actions)?;
    let (nv, na) = (table.num_adverbs(), table.num_actions());
    let scores = (0..test.len())
        .map(|i| {
            let a = actions[i];
            (0..nv)
                .map(|v| cosine(videos.row_slice(i), comps.row_slice(v * na + a)))
                .collect()
        })
        .collect();
    Ok(ScoreTable {
        scores,
        actions,
        adverbs: test.iter().map(|&i| data.samples[i].adverb).collect(),
        num_adverbs: nv,
    })
}

/// Training-free scores: Laplace-smoothed `P(v | a)` from the training
/// labels, falling back to the smoothed global adverb frequency for actions
/// never seen in training.
pub fn priors_scores(
    train: &[(usize, usize)],
    test: &[(usize, usize)],
    num_adverbs: usize,
    num_actions: usize,
) -> ScoreTable {
    let nv = num_adverbs;
    let mut pair = vec![0usize; nv * num_actions];
    let mut per_action = vec![0usize; num_actions];
    let mut per_adverb = vec![0usize; nv];
    for &(v, a) in train {
        pair[v * num_actions + a] += 1;
        per_action[a] += 1;
        per_adverb[v] += 1;
    }
    let n = train.len();
    let scores = test
        .iter()
        .map(|&(_, a)| {
            (0..nv)
                .map(|v| {
                    if per_action[a] > 0 {
                        (pair[v * num_actions + a] + 1) as f64 / (per_action[a] + nv) as f64
                    } else {
                        (per_adverb[v] + 1) as f64 / (n + nv) as f64
                    }
                })
                .collect()
        })
        .collect();
    ScoreTable {
        scores,
        actions: test.iter().map(|&(_, a)| a).collect(),
        adverbs: test.iter().map(|&(v, _)| v).collect(),
        num_adverbs: nv,
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdverbAp {
    pub adverb: String,
    pub support: usize,
    pub ap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub map_w: f64,
    pub map_m: f64,
    /// `None` when the vocabulary has no antonyms.
    pub acc_a: Option<f64>,
    pub test_samples: usize,
    pub queries: usize,
    pub skipped_queries: usize,
    pub per_adverb: Vec<AdverbAp>,
}

impl MetricReport {
    pub fn from_scores(t: &ScoreTable, vocab: &Vocabulary) -> Result<Self> {
        let m = map_metrics(t)?;
        Ok(Self {
            map_w: m.map_w,
            map_m: m.map_m,
            acc_a: antonym_accuracy(t, vocab),
            test_samples: t.len(),
            queries: m.queries,
            skipped_queries: m.skipped,
            per_adverb: vocab
                .adverbs()
                .iter()
                .enumerate()
                .map(|(v, name)| AdverbAp {
                    adverb: name.clone(),
                    support: m.support[v],
                    ap: m.per_adverb[v],
                })
                .collect(),
        })
    }
}

pub fn evaluate(model: &Regada, data: &Dataset, test: &[usize]) -> Result<MetricReport> {
    MetricReport::from_scores(&model_scores(model, data, test)?, &data.vocab)
}

pub fn priors_baseline(data: &Dataset, train: &[usize], test: &[usize]) -> Result<MetricReport> {
    let labels = |idx: &[usize]| -> Vec<(usize, usize)> {
        idx.iter()
            .map(|&i| (data.samples[i].adverb, data.samples[i].action))
            .collect()
    };
    let t = priors_scores(
        &labels(train),
        &labels(test),
        data.vocab.num_adverbs(),
        data.vocab.num_actions(),
    );
    MetricReport::from_scores(&t, &data.vocab)
}
