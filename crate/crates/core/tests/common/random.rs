//! Random models, score tables and corpora shared by the suites.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use regada::config::{Modality, ModelConfig, TrainConfig};
use regada::eval::ScoreTable;
use regada::io::{EmbeddingTable, Sample, Vocabulary};
use regada::model::Regada;
use regada_autodiff::{BatchNormStats, Tensor};

/// `adverbs` adverbs `v0, v1, ...` paired `2k ↔ 2k+1`, and actions `a0, ...`.
pub fn vocab(adverbs: usize, actions: usize) -> Vocabulary {
    let ant: Vec<(usize, usize)> = (0..adverbs / 2).map(|k| (2 * k, 2 * k + 1)).collect();
    Vocabulary::new(
        (0..adverbs).map(|i| format!("v{i}")).collect(),
        (0..actions).map(|i| format!("a{i}")).collect(),
        Some(&ant),
    )
    .unwrap()
}

pub fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, s: f64) -> Tensor {
    Tensor::matrix(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-s..s)).collect())
}

/// A small random architecture with every switch drawn at random.
pub fn random_config(rng: &mut ChaCha8Rng) -> ModelConfig {
    let mut m = TrainConfig::preset("tiny").unwrap().model;
    m.d_theta = rng.gen_range(2..7);
    m.d_x = rng.gen_range(2..7);
    m.d_dim = rng.gen_range(2..7);
    m.video.heads = rng.gen_range(1..4);
    m.video.head_dim = rng.gen_range(1..4);
    m.video.n_proj = rng.gen_range(1..3);
    let t = &mut m.text;
    t.n_gate = rng.gen_range(1..4);
    t.n_res = rng.gen_range(1..4);
    t.use_residual = rng.gen_bool(0.7);
    t.use_sigmoid = rng.gen_bool(0.7);
    t.share_weights = rng.gen_bool(0.5);
    let pairs = [
        (Modality::Adverb, Modality::Action),
        (Modality::Action, Modality::Adverb),
        (Modality::Pair, Modality::Adverb),
        (Modality::Pair, Modality::Action),
    ];
    (t.main, t.aux) = pairs[rng.gen_range(0..pairs.len())];
    m
}

/// Random weights everywhere, including the scalars and running statistics
/// that start at fixed values.
pub fn random_model(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Regada {
    let mut model = Regada::new(cfg, rng);
    for t in model.params_mut().values_mut() {
        let (r, c) = (t.rows(), t.cols());
        *t = uniform(rng, r, c, 1.0);
    }
    for s in model.params_mut().stats_mut() {
        let w = s.width();
        *s = BatchNormStats {
            running_mean: (0..w).map(|_| rng.gen_range(-0.5..0.5)).collect(),
            running_var: (0..w).map(|_| rng.gen_range(0.2..2.0)).collect(),
        };
    }
    model
}

pub fn random_embeddings(rng: &mut ChaCha8Rng, nv: usize, na: usize, d: usize) -> EmbeddingTable {
    EmbeddingTable::new(
        uniform(rng, nv, d, 1.0),
        uniform(rng, na, d, 1.0),
        Some(uniform(rng, nv * na, d, 1.0)),
    )
    .unwrap()
}

pub fn random_scores(rng: &mut ChaCha8Rng) -> (ScoreTable, usize) {
    let nv = 2 * rng.gen_range(1..4);
    let na = rng.gen_range(1..4);
    let n = rng.gen_range(1..31);
    let grid = rng.gen_range(2..8) as f64;
    let scores = (0..n)
        .map(|_| (0..nv).map(|_| (rng.gen_range(0..8) as f64 / grid) - 0.5).collect())
        .collect();
    let t = ScoreTable {
        scores,
        actions: (0..n).map(|_| rng.gen_range(0..na)).collect(),
        adverbs: (0..n).map(|_| rng.gen_range(0..nv)).collect(),
        num_adverbs: nv,
    };
    (t, na)
}

pub struct Corpus {
    pub vocab: Vocabulary,
    pub samples: Vec<Sample>,
}

pub fn samples(labels: &[(usize, usize)]) -> Vec<Sample> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &(v, a))| Sample {
            video_id: format!("s{i:04}"),
            action: a,
            adverb: v,
            feature: format!("f/{i}.rgdf").into(),
        })
        .collect()
}

/// Units (action × antonym pair) form a bipartite grid in which every
/// action and every pair sits in at least two units; such a grid always
/// admits a valid assignment.
#[allow(clippy::needless_range_loop)]
pub fn feasible_corpus(rng: &mut ChaCha8Rng) -> Corpus {
    let pairs = rng.gen_range(2..5);
    let actions = rng.gen_range(2..7);
    let mut grid = vec![vec![false; pairs]; actions];
    for row in grid.iter_mut() {
        for cell in row.iter_mut() {
            *cell = rng.gen_bool(0.6);
        }
    }
    loop {
        let mut changed = false;
        for a in 0..actions {
            while grid[a].iter().filter(|&&c| c).count() < 2 {
                let p = rng.gen_range(0..pairs);
                grid[a][p] = true;
                changed = true;
            }
        }
        for p in 0..pairs {
            while (0..actions).filter(|&a| grid[a][p]).count() < 2 {
                let a = rng.gen_range(0..actions);
                grid[a][p] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let mut labels = Vec::new();
    for (a, row) in grid.iter().enumerate() {
        for (p, &on) in row.iter().enumerate() {
            if on {
                for v in [2 * p, 2 * p + 1] {
                    for _ in 0..rng.gen_range(1..6) {
                        labels.push((v, a));
                    }
                }
            }
        }
    }
    // interleave so that sample order carries no structure
    for i in (1..labels.len()).rev() {
        let j = rng.gen_range(0..=i);
        labels.swap(i, j);
    }
    Corpus {
        vocab: vocab(2 * pairs, actions),
        samples: samples(&labels),
    }
}
