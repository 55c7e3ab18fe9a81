//! Slow, loop-based reference implementations used as oracles.
#![allow(dead_code, clippy::needless_range_loop)]

pub mod random;

use regada::config::Modality;
use regada::eval::ScoreTable;
use regada::io::{EmbeddingTable, FeatureSequence, Vocabulary};
use regada::model::Regada;
use regada_autodiff::{Tensor, BN_EPS, LN_EPS};

pub type Mat = Vec<Vec<f64>>;

pub fn param(model: &Regada, name: &str) -> Tensor {
    let p = model.params();
    p.get(p.id(name).unwrap_or_else(|| panic!("no parameter {name}")))
        .clone()
}

fn has(model: &Regada, name: &str) -> bool {
    model.params().id(name).is_some()
}

/// `x · W (+ b)` with `W` stored `in × out`.
pub fn linear(x: &[f64], w: &Tensor, b: Option<&Tensor>) -> Vec<f64> {
    let (fan_in, fan_out) = (w.rows(), w.cols());
    assert_eq!(x.len(), fan_in);
    (0..fan_out)
        .map(|j| {
            let mut s = 0.0;
            for i in 0..fan_in {
                s += x[i] * w.at(i, j);
            }
            s + b.map_or(0.0, |b| b.data()[j])
        })
        .collect()
}

fn lin_named(model: &Regada, name: &str, x: &[f64]) -> Vec<f64> {
    let w = param(model, &format!("{name}.weight"));
    let bname = format!("{name}.bias");
    let b = has(model, &bname).then(|| param(model, &bname));
    linear(x, &w, b.as_ref())
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

/// Eval-mode MLP `prefix`: batch norm with running statistics, hidden
/// linear + leaky ReLU blocks, output linear.
fn mlp(model: &Regada, prefix: &str, x: &[f64]) -> Vec<f64> {
    let named = model.params().named_tensors();
    let get = |n: &str| named.iter().find(|(k, _)| k == n).unwrap().1.clone();
    let mean = get(&format!("{prefix}.bn.running_mean"));
    let var = get(&format!("{prefix}.bn.running_var"));
    let gamma = param(model, &format!("{prefix}.bn.gamma"));
    let beta = param(model, &format!("{prefix}.bn.beta"));
    let mut h: Vec<f64> = (0..x.len())
        .map(|j| (x[j] - mean.data()[j]) / (var.data()[j] + BN_EPS).sqrt() * gamma.data()[j] + beta.data()[j])
        .collect();
    let mut i = 0;
    while has(model, &format!("{prefix}.hidden.{i}.weight")) {
        h = lin_named(model, &format!("{prefix}.hidden.{i}"), &h)
            .into_iter()
            .map(|z| if z > 0.0 { z } else { 0.01 * z })
            .collect();
        i += 1;
    }
    lin_named(model, &format!("{prefix}.out"), &h)
}

fn word(table: &EmbeddingTable, m: Modality, v: usize, a: usize) -> Vec<f64> {
    match m {
        Modality::Adverb => table.adverb(v).to_vec(),
        Modality::Action => table.action(a).to_vec(),
        Modality::Pair => table.pair(v, a).unwrap().to_vec(),
    }
}

fn proj_name(m: Modality) -> &'static str {
    match m {
        Modality::Adverb => "text.w_adverb",
        Modality::Action => "text.w_action",
        Modality::Pair => "text.w_pair",
    }
}

/// Eval-mode text embedding of one composition, written straight from the
/// gating formula.
pub fn text_oracle(model: &Regada, table: &EmbeddingTable, v: usize, a: usize) -> Vec<f64> {
    let t = &model.config().text;
    let phi_main = lin_named(model, proj_name(t.main), &word(table, t.main, v, a));
    let phi_aux = lin_named(model, proj_name(t.aux), &word(table, t.aux, v, a));
    let x: Vec<f64> = phi_aux.iter().chain(&phi_main).copied().collect();
    let (gate_pre, res_pre) = if t.share_weights {
        let h = mlp(model, "text.shared", &x);
        (h.clone(), t.use_residual.then_some(h))
    } else {
        (
            mlp(model, "text.gate", &x),
            t.use_residual.then(|| mlp(model, "text.res", &x)),
        )
    };
    let og = param(model, "text.omega_g").item();
    let or = if t.use_residual {
        param(model, "text.omega_r").item()
    } else {
        0.0
    };
    (0..phi_main.len())
        .map(|j| {
            let g = if t.use_sigmoid {
                sigmoid(gate_pre[j])
            } else {
                gate_pre[j]
            };
            let mut o = og * g * phi_main[j];
            if let Some(r) = &res_pre {
                o += or * r[j];
            }
            o
        })
        .collect()
}

/// Eval-mode attention pooling followed by `W_attn`, per head a softmax
/// over the segments of the video.
pub fn attention_oracle(model: &Regada, theta_a: &[f64], feat: &FeatureSequence) -> Vec<f64> {
    let vc = &model.config().video;
    let q = lin_named(model, "video.w_q", theta_a);
    let seg: Vec<&[f64]> = (0..feat.segments()).map(|t| feat.matrix().row_slice(t)).collect();
    let keys: Mat = seg.iter().map(|x| lin_named(model, "video.w_k", x)).collect();
    let vals: Mat = seg.iter().map(|x| lin_named(model, "video.w_v", x)).collect();
    let hd = vc.head_dim;
    let mut pooled = vec![0.0; vc.heads * hd];
    for h in 0..vc.heads {
        let r = h * hd..(h + 1) * hd;
        let logits: Vec<f64> = keys
            .iter()
            .map(|k| q[r.clone()].iter().zip(&k[r.clone()]).map(|(a, b)| a * b).sum::<f64>() / (hd as f64).sqrt())
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let z: f64 = e.iter().sum();
        for (t, v) in vals.iter().enumerate() {
            for (c, j) in r.clone().enumerate() {
                pooled[h * hd + c] += e[t] / z * v[j];
            }
        }
    }
    lin_named(model, "video.w_attn", &pooled)
}

/// Eval-mode projection blocks: linear, layer norm, ReLU.
pub fn projection_oracle(model: &Regada, x: &[f64]) -> Vec<f64> {
    let mut h = x.to_vec();
    for i in 0..model.config().video.n_proj {
        let z = lin_named(model, &format!("video.proj.{i}"), &h);
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let var = z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let g = param(model, &format!("video.proj.{i}.ln.gamma"));
        let b = param(model, &format!("video.proj.{i}.ln.beta"));
        h = (0..z.len())
            .map(|j| ((z[j] - mean) / (var + LN_EPS).sqrt() * g.data()[j] + b.data()[j]).max(0.0))
            .collect();
    }
    h
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Average precision of one ranking written without sorting: the rank of
/// item `r` is one plus the number of items scored higher, or equal with a
/// smaller index.
pub fn ap_oracle(scores: &[f64], relevant: &[bool]) -> Option<f64> {
    let n = scores.len();
    let rank = |r: usize| {
        1 + (0..n)
            .filter(|&j| scores[j] > scores[r] || (scores[j] == scores[r] && j < r))
            .count()
    };
    let rel: Vec<usize> = (0..n).filter(|&i| relevant[i]).collect();
    if rel.is_empty() {
        return None;
    }
    let total: f64 = rel
        .iter()
        .map(|&r| {
            let k = rank(r);
            let hits = rel.iter().filter(|&&q| rank(q) <= k).count();
            hits as f64 / k as f64
        })
        .sum();
    Some(total / rel.len() as f64)
}

/// `(mAP_M, mAP_W)` by enumerating every adverb and action.
pub fn map_oracle(t: &ScoreTable, num_actions: usize) -> (f64, f64) {
    let n = t.scores.len();
    let mut per_adverb = Vec::new();
    for v in 0..t.num_adverbs {
        let mut aps = Vec::new();
        for a in 0..num_actions {
            let has_query = (0..n).any(|i| t.adverbs[i] == v && t.actions[i] == a);
            if !has_query {
                continue;
            }
            let pool: Vec<usize> = (0..n).filter(|&i| t.actions[i] == a).collect();
            let scores: Vec<f64> = pool.iter().map(|&i| t.scores[i][v]).collect();
            let rel: Vec<bool> = pool.iter().map(|&i| t.adverbs[i] == v).collect();
            aps.push(ap_oracle(&scores, &rel).unwrap());
        }
        if !aps.is_empty() {
            let support = (0..n).filter(|&i| t.adverbs[i] == v).count();
            per_adverb.push((aps.iter().sum::<f64>() / aps.len() as f64, support));
        }
    }
    let m = per_adverb.iter().map(|p| p.0).sum::<f64>() / per_adverb.len() as f64;
    let w = per_adverb.iter().map(|&(ap, s)| ap * s as f64 / n as f64).sum::<f64>();
    (m, w)
}

pub fn acc_oracle(t: &ScoreTable, vocab: &Vocabulary) -> f64 {
    let mut correct = 0;
    for i in 0..t.scores.len() {
        let v = t.adverbs[i];
        let anti = (0..t.num_adverbs).find(|&u| vocab.antonym(v) == Some(u)).unwrap();
        if t.scores[i][v] > t.scores[i][anti] {
            correct += 1;
        }
    }
    correct as f64 / t.scores.len() as f64
}
