//! Synthetic datasets with a known composition structure.
//!
//! Adverb and action word vectors are random unit vectors; adverbs `2k` and
//! `2k+1` are antonyms. A hidden bilinear map
//! `G(θ_v, θ_a)_j = θ_vᵀ M_j θ_a` with standard-normal `M_j` turns a
//! composition into a `d_x` target whose coordinates are standard normal.
//! Every video holds one signal segment `G(θ_v, θ_a) + 𝒩(0, σ²)`, the
//! configured number of distractor segments built the same way from
//! compositions with a different action, and pure `𝒩(0, 1)` background
//! segments up to its length `T`; the segments are shuffled.
//!
//! The first samples of each side enumerate the compositions so that every
//! adverb and action (and, with at least `V·A` samples, every composition)
//! occurs on both sides. The remaining samples draw an action uniformly,
//! an antonym pair uniformly, and the even member of the pair with
//! probability `adverb_skew`.

use std::path::Path;

use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use regada_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use crate::eval::ScoreTable;
use crate::io::{
    write_feature_file, write_manifest, Dataset, EmbeddingTable, FeatureSequence, ManifestRecord, Sample, SplitFile,
    Vocabulary,
};
use crate::{Error, Result};

fn default_skew() -> f64 {
    0.5
}

fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Number of adverbs `V`; must be even.
    pub adverbs: usize,
    pub actions: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub d_theta: usize,
    pub d_x: usize,
    pub t_min: usize,
    pub t_max: usize,
    /// Standard deviation of the noise added to signal and distractor
    /// segments.
    pub noise: f64,
    pub distractors: usize,
    pub seed: u64,
    /// Probability of the even adverb within an antonym pair.
    #[serde(default = "default_skew")]
    pub adverb_skew: f64,
    /// Also emit pair embeddings `normalise(θ_v + θ_a)`.
    #[serde(default = "default_true")]
    pub pair_embeddings: bool,
}

impl SynthConfig {
    /// The dataset used for the learnability checks.
    pub fn reference() -> Self {
        Self {
            adverbs: 6,
            actions: 12,
            n_train: 2000,
            n_test: 500,
            d_theta: 32,
            d_x: 64,
            t_min: 2,
            t_max: 4,
            noise: 0.1,
            distractors: 1,
            seed: 0,
            adverb_skew: 0.5,
            pair_embeddings: true,
        }
    }

    /// A small dataset for smoke tests.
    pub fn tiny() -> Self {
        Self {
            adverbs: 4,
            actions: 6,
            n_train: 240,
            n_test: 48,
            d_theta: 16,
            d_x: 24,
            t_min: 2,
            t_max: 3,
            noise: 0.1,
            distractors: 1,
            seed: 0,
            adverb_skew: 0.5,
            pair_embeddings: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.adverbs < 2 || !self.adverbs.is_multiple_of(2) {
            return err(format!("adverbs = {} must be even and at least 2", self.adverbs));
        }
        if self.actions < 2 {
            return err("at least two actions are needed (distractors and negatives)".into());
        }
        let cover = self.adverbs.max(self.actions);
        if self.n_train < cover || self.n_test < cover {
            return err(format!(
                "n_train and n_test must each be at least max(adverbs, actions) = {cover}"
            ));
        }
        if self.d_theta == 0 || self.d_x == 0 {
            return err("d_theta and d_x must be positive".into());
        }
        if self.t_min < 1 + self.distractors || self.t_max < self.t_min {
            return err(format!(
                "need 1 + distractors <= t_min <= t_max, got {} / {} / {}",
                self.distractors, self.t_min, self.t_max
            ));
        }
        if !(self.noise.is_finite() && self.noise >= 0.0) {
            return err(format!("noise = {} must be non-negative", self.noise));
        }
        if !(0.0..=1.0).contains(&self.adverb_skew) {
            return err(format!("adverb_skew = {} outside [0, 1]", self.adverb_skew));
        }
        Ok(())
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// The `d`-th composition of an enumeration of all `V·A` compositions in
/// which the first `max(V, A)` entries already cover every label.
pub fn enumerate_composition(d: usize, num_adverbs: usize, num_actions: usize) -> (usize, usize) {
    let (v, a) = (num_adverbs, num_actions);
    let lcm = v / gcd(v, a) * a;
    let d = d % (v * a);
    (d % v, (d % lcm + d / lcm) % a)
}

/// Generated data held in memory. Features and word vectors are rounded to
/// `f32`, exactly as they are written to disk.
#[derive(Clone, Debug)]
pub struct Synthetic {
    pub config: SynthConfig,
    pub dataset: Dataset,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
    /// Whether each sample's label came from the enumeration prefix rather
    /// than a random draw.
    pub enumerated: Vec<bool>,
    hidden: Vec<f64>,
}

fn unit_rows(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let row: Vec<f64> = (0..cols).map(|_| rng.sample(StandardNormal)).collect();
        let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
        data.extend(row.iter().map(|x| x / norm));
    }
    Tensor::matrix(rows, cols, data)
}

fn round_f32(mut t: Tensor) -> Tensor {
    t.data_mut().iter_mut().for_each(|x| *x = *x as f32 as f64);
    t
}

fn normalise(mut v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    v
}

impl Synthetic {
    pub fn generate(cfg: &SynthConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let (nv, na, dt, dx) = (cfg.adverbs, cfg.actions, cfg.d_theta, cfg.d_x);

        let adverbs = unit_rows(&mut rng, nv, dt);
        let actions = unit_rows(&mut rng, na, dt);
        let pairs = cfg.pair_embeddings.then(|| {
            let mut data = Vec::with_capacity(nv * na * dt);
            for v in 0..nv {
                for a in 0..na {
                    let sum = adverbs
                        .row_slice(v)
                        .iter()
                        .zip(actions.row_slice(a))
                        .map(|(x, y)| x + y)
                        .collect();
                    data.extend(normalise(sum));
                }
            }
            Tensor::matrix(nv * na, dt, data)
        });
        let m: Vec<f64> = (0..dx * dt * dt).map(|_| rng.sample(StandardNormal)).collect();

        // hidden targets of all compositions, row v·A + a
        let mut hidden = Vec::with_capacity(nv * na * dx);
        for v in 0..nv {
            for a in 0..na {
                let (tv, ta) = (adverbs.row_slice(v), actions.row_slice(a));
                for j in 0..dx {
                    let mj = &m[j * dt * dt..(j + 1) * dt * dt];
                    let mut s = 0.0;
                    for p in 0..dt {
                        let row = &mj[p * dt..(p + 1) * dt];
                        s += tv[p] * row.iter().zip(ta).map(|(x, y)| x * y).sum::<f64>();
                    }
                    hidden.push(s);
                }
            }
        }

        let adverb_names: Vec<String> = (0..nv).map(|i| format!("adverb{i:02}")).collect();
        let action_names: Vec<String> = (0..na).map(|i| format!("action{i:02}")).collect();
        let antonym_pairs: Vec<(usize, usize)> = (0..nv / 2).map(|k| (2 * k, 2 * k + 1)).collect();
        let vocab = Vocabulary::new(adverb_names, action_names, Some(&antonym_pairs))?;
        let table = EmbeddingTable::new(round_f32(adverbs), round_f32(actions), pairs.map(round_f32))?;

        let mut samples = Vec::with_capacity(cfg.n_train + cfg.n_test);
        let mut enumerated = Vec::with_capacity(samples.capacity());
        for (side, n) in [("train", cfg.n_train), ("test", cfg.n_test)] {
            for i in 0..n {
                let (v, a) = if i < nv * na {
                    enumerated.push(true);
                    enumerate_composition(i, nv, na)
                } else {
                    enumerated.push(false);
                    let a = rng.gen_range(0..na);
                    let k = rng.gen_range(0..nv / 2);
                    let v = if rng.gen::<f64>() < cfg.adverb_skew {
                        2 * k
                    } else {
                        2 * k + 1
                    };
                    (v, a)
                };
                let id = format!("{side}_{i:05}");
                samples.push(Sample {
                    feature: format!("features/{id}.rgdf").into(),
                    video_id: id,
                    action: a,
                    adverb: v,
                });
            }
        }

        let target = |v: usize, a: usize| &hidden[(v * na + a) * dx..(v * na + a + 1) * dx];
        let mut features = Vec::with_capacity(samples.len());
        for s in &samples {
            let t = rng.gen_range(cfg.t_min..=cfg.t_max);
            let mut segs: Vec<Vec<f64>> = Vec::with_capacity(t);
            let noisy = |rng: &mut ChaCha8Rng, base: &[f64]| -> Vec<f64> {
                base.iter()
                    .map(|x| x + cfg.noise * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            };
            segs.push(noisy(&mut rng, target(s.adverb, s.action)));
            for _ in 0..cfg.distractors {
                let a2 = crate::objective::draw_other(na, s.action, &mut rng);
                let v2 = rng.gen_range(0..nv);
                segs.push(noisy(&mut rng, target(v2, a2)));
            }
            while segs.len() < t {
                segs.push((0..dx).map(|_| rng.sample(StandardNormal)).collect());
            }
            segs.shuffle(&mut rng);
            let data = segs.concat().iter().map(|&x| x as f32 as f64).collect();
            features.push(FeatureSequence::new(Tensor::matrix(t, dx, data))?);
        }

        let dataset = Dataset::new(vocab, table, samples, features)?;
        let train = (0..cfg.n_train).collect();
        let test = (cfg.n_train..cfg.n_train + cfg.n_test).collect();
        Ok(Self {
            config: cfg.clone(),
            dataset,
            train,
            test,
            enumerated,
            hidden,
        })
    }

    /// Noise-free target `G(θ_v, θ_a)`.
    pub fn hidden_target(&self, adverb: usize, action: usize) -> &[f64] {
        let (na, dx) = (self.config.actions, self.config.d_x);
        let k = adverb * na + action;
        &self.hidden[k * dx..(k + 1) * dx]
    }

    pub fn split(&self) -> SplitFile {
        let ids = |idx: &[usize]| idx.iter().map(|&i| self.dataset.samples[i].video_id.clone()).collect();
        SplitFile {
            train: ids(&self.train),
            test: ids(&self.test),
            unlabelled: Vec::new(),
        }
    }

    /// Write `vocab.json`, `embeddings.rgdf`, `manifest.jsonl` (all
    /// samples), `train.jsonl`, `test.jsonl`, `split.json`,
    /// `synth_config.json` and `features/*.rgdf` below `dir`.
    pub fn write_to(&self, dir: &Path) -> Result<()> {
        let io = |p: &Path, e| Error::io(p, e);
        std::fs::create_dir_all(dir.join("features")).map_err(|e| io(dir, e))?;
        let d = &self.dataset;
        d.vocab.write(&dir.join("vocab.json"))?;
        d.embeddings.write(&dir.join("embeddings.rgdf"))?;
        let record = |i: usize| {
            let s = &d.samples[i];
            ManifestRecord {
                video_id: s.video_id.clone(),
                feature: s.feature.to_string_lossy().into_owned(),
                action: d.vocab.actions()[s.action].clone(),
                adverb: d.vocab.adverbs()[s.adverb].clone(),
            }
        };
        let all: Vec<_> = (0..d.len()).map(record).collect();
        write_manifest(&dir.join("manifest.jsonl"), &all)?;
        write_manifest(
            &dir.join("train.jsonl"),
            &self.train.iter().map(|&i| record(i)).collect::<Vec<_>>(),
        )?;
        write_manifest(
            &dir.join("test.jsonl"),
            &self.test.iter().map(|&i| record(i)).collect::<Vec<_>>(),
        )?;
        self.split().write(&dir.join("split.json"))?;
        let cfg_path = dir.join("synth_config.json");
        let mut text = serde_json::to_string_pretty(&self.config).expect("config serialises");
        text.push('\n');
        std::fs::write(&cfg_path, text).map_err(|e| io(&cfg_path, e))?;
        for (s, f) in d.samples.iter().zip(&d.features) {
            write_feature_file(&dir.join(&s.feature), f)?;
        }
        Ok(())
    }

    /// Score table of the nearest-neighbour oracle: `S[i][v]` is minus the
    /// smallest distance between a segment of video `i` and the hidden
    /// target of `(v, a_i)`.
    pub fn oracle_scores(&self, idx: &[usize]) -> ScoreTable {
        let d = &self.dataset;
        let nv = self.config.adverbs;
        let scores = idx
            .iter()
            .map(|&i| {
                let a = d.samples[i].action;
                let x = d.features[i].matrix();
                (0..nv)
                    .map(|v| {
                        let t = self.hidden_target(v, a);
                        -(0..x.rows())
                            .map(|r| {
                                x.row_slice(r)
                                    .iter()
                                    .zip(t)
                                    .map(|(p, q)| (p - q) * (p - q))
                                    .sum::<f64>()
                                    .sqrt()
                            })
                            .fold(f64::INFINITY, f64::min)
                    })
                    .collect()
            })
            .collect();
        ScoreTable {
            scores,
            actions: idx.iter().map(|&i| d.samples[i].action).collect(),
            adverbs: idx.iter().map(|&i| d.samples[i].adverb).collect(),
            num_adverbs: nv,
        }
    }

    /// Expected antonym accuracy of the priors baseline given the training
    /// labels: for each test video the baseline answers with the antonym
    /// that is more frequent for the video's action in training (a tie is
    /// always wrong). Enumerated test labels contribute their actual
    /// outcome; drawn labels contribute the generator's probability of
    /// matching the answer.
    pub fn priors_expected_accuracy(&self) -> f64 {
        let d = &self.dataset;
        let na = self.config.actions;
        let mut counts = vec![0usize; self.config.adverbs * na];
        for &i in &self.train {
            counts[d.samples[i].adverb * na + d.samples[i].action] += 1;
        }
        let mut total = 0.0;
        for &i in &self.test {
            let s = &d.samples[i];
            let even = s.adverb & !1;
            let (ce, co) = (counts[even * na + s.action], counts[(even + 1) * na + s.action]);
            if ce == co {
                continue;
            }
            let answer = if ce > co { even } else { even + 1 };
            total += if self.enumerated[i] {
                f64::from(u8::from(answer == s.adverb))
            } else if answer == even {
                self.config.adverb_skew
            } else {
                1.0 - self.config.adverb_skew
            };
        }
        total / self.test.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn enumeration_is_a_bijection_with_early_label_cover() {
        for (v, a) in [(6, 12), (4, 6), (2, 3), (20, 114), (8, 8)] {
            let all: HashSet<_> = (0..v * a).map(|d| enumerate_composition(d, v, a)).collect();
            assert_eq!(all.len(), v * a);
            let head: Vec<_> = (0..v.max(a)).map(|d| enumerate_composition(d, v, a)).collect();
            assert_eq!(head.iter().map(|c| c.0).collect::<HashSet<_>>().len(), v);
            assert_eq!(head.iter().map(|c| c.1).collect::<HashSet<_>>().len(), a);
        }
    }

    #[test]
    fn noise_free_signal_is_shared_within_a_composition() {
        let mut cfg = SynthConfig::tiny();
        cfg.noise = 0.0;
        cfg.distractors = 0;
        cfg.t_min = 1;
        cfg.t_max = 1;
        let s = Synthetic::generate(&cfg).unwrap();
        let d = &s.dataset;
        let first = d.samples.iter().position(|x| (x.adverb, x.action) == (1, 2)).unwrap();
        for (i, x) in d.samples.iter().enumerate() {
            if (x.adverb, x.action) == (1, 2) {
                assert_eq!(d.features[i], d.features[first]);
            }
        }
    }

    #[test]
    fn hidden_targets_are_standard_normal_in_scale() {
        let s = Synthetic::generate(&SynthConfig::reference()).unwrap();
        let mut sq = 0.0;
        let mut n = 0;
        for v in 0..6 {
            for a in 0..12 {
                for x in s.hidden_target(v, a) {
                    sq += x * x;
                    n += 1;
                }
            }
        }
        let var = sq / n as f64;
        assert!((var - 1.0).abs() < 0.15, "{var}");
    }

    #[test]
    fn config_validation() {
        let mut c = SynthConfig::tiny();
        c.adverbs = 5;
        assert!(c.validate().is_err());
        let mut c = SynthConfig::tiny();
        c.t_min = 1;
        assert!(c.validate().is_err());
        let mut c = SynthConfig::tiny();
        c.n_test = 3;
        assert!(c.validate().is_err());
    }
}
