//! Training loop, checkpoints and reports.
//!
//! One seeded `ChaCha8` stream drives everything in order: parameter
//! initialisation, then per epoch the shuffle, and per batch the negative
//! labels followed by every dropout mask of the forward pass. A run is
//! therefore a pure function of its configuration and data.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regada_autodiff::{Adam, Mode, Tensor};
use serde::{Deserialize, Serialize};

use crate::config::{AdverbNegatives, DataPaths, Modality, TrainConfig};
use crate::eval::{evaluate, MetricReport};
use crate::io::{load_dataset, Dataset, RawCheckpoint, SplitFile};
use crate::model::Regada;
use crate::objective::{batch_loss, sample_negatives};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub batches: usize,
    /// Mean over batches of each (unweighted) term and of the weighted total.
    pub total: f64,
    pub action: Option<f64>,
    pub adverb: Option<f64>,
    pub regression: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    pub metrics: MetricReport,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestValue {
    pub value: f64,
    pub epoch: usize,
}

/// Per-metric maxima over the evaluation series; each metric keeps the
/// first epoch at which it peaked, so the maxima may come from different
/// epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Maxima {
    pub map_w: BestValue,
    pub map_m: BestValue,
    pub acc_a: Option<BestValue>,
}

impl Maxima {
    pub fn from_series(evals: &[EvalRecord]) -> Result<Self> {
        let best = |f: &dyn Fn(&MetricReport) -> Option<f64>| -> Option<BestValue> {
            let mut out: Option<BestValue> = None;
            for e in evals {
                if let Some(v) = f(&e.metrics) {
                    if out.is_none_or(|b| v > b.value) {
                        out = Some(BestValue {
                            value: v,
                            epoch: e.epoch,
                        });
                    }
                }
            }
            out
        };
        let empty = || Error::Validation("metric series is empty".into());
        Ok(Self {
            map_w: best(&|m| Some(m.map_w)).ok_or_else(empty)?,
            map_m: best(&|m| Some(m.map_m)).ok_or_else(empty)?,
            acc_a: best(&|m| m.acc_a),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config_hash: String,
    pub config: TrainConfig,
    pub train_samples: usize,
    pub test_samples: usize,
    pub parameters: usize,
    pub losses: Vec<EpochLoss>,
    pub evals: Vec<EvalRecord>,
    pub best: Option<Maxima>,
}

impl TrainReport {
    pub fn to_json(&self) -> Result<String> {
        if self.evals.is_empty() {
            return Err(Error::Validation("report has no evaluations".into()));
        }
        let best = Maxima::from_series(&self.evals)?;
        if self.best != Some(best) {
            return Err(Error::Validation("report maxima disagree with the series".into()));
        }
        let mut s = serde_json::to_string_pretty(self).map_err(|e| Error::json("report", e))?;
        s.push('\n');
        Ok(s)
    }
}

/// Write a training report as JSON. Reports without evaluations are
/// rejected.
pub fn save_metrics(report: &TrainReport, path: &Path) -> Result<()> {
    let text = report.to_json()?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    /// Hex-encoded 32-byte seed.
    pub seed: String,
    pub stream: u64,
    /// Position in the stream, in 32-bit words (decimal string).
    pub word_pos: String,
}

impl RngState {
    fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: hex::encode(rng.get_seed()),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    fn restore(&self) -> Result<ChaCha8Rng> {
        let bad = || Error::Validation("malformed RNG state in checkpoint".into());
        let seed: [u8; 32] = hex::decode(&self.seed)
            .map_err(|_| bad())?
            .try_into()
            .map_err(|_| bad())?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad())?);
        Ok(rng)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub epoch: usize,
    pub config_hash: String,
    pub config: TrainConfig,
    pub rng: RngState,
    pub adam_step: u64,
    pub report: TrainReport,
}

/// Everything needed to evaluate a model or resume its training.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub model: Regada,
    pub adam: Adam,
}

impl Checkpoint {
    pub fn to_raw(&self) -> RawCheckpoint {
        let mut tensors = self.model.params().named_tensors();
        let names = self.model.params().names();
        for (n, m) in names.iter().zip(self.adam.first_moments()) {
            tensors.push((format!("adam.m.{n}"), m.clone()));
        }
        for (n, v) in names.iter().zip(self.adam.second_moments()) {
            tensors.push((format!("adam.v.{n}"), v.clone()));
        }
        RawCheckpoint {
            meta: serde_json::to_string(&self.meta).expect("metadata serialises"),
            tensors,
        }
    }

    pub fn from_raw(raw: &RawCheckpoint) -> Result<Self> {
        let meta: CheckpointMeta =
            serde_json::from_str(&raw.meta).map_err(|e| Error::json("checkpoint metadata", e))?;
        meta.config.validate()?;
        if meta.config.hash() != meta.config_hash {
            return Err(Error::Validation(
                "checkpoint configuration does not match its recorded hash".into(),
            ));
        }
        let get = |n: &str| raw.get(n).cloned();
        let model = Regada::from_named(&meta.config.model, get)?;
        let fetch_all = |prefix: &str| -> Result<Vec<Tensor>> {
            model
                .params()
                .names()
                .iter()
                .map(|n| {
                    raw.get(&format!("{prefix}{n}"))
                        .cloned()
                        .ok_or_else(|| Error::Validation(format!("missing tensor {prefix}{n}")))
                })
                .collect()
        };
        let adam = Adam::from_state(
            meta.config.adam(),
            meta.adam_step,
            fetch_all("adam.m.")?,
            fetch_all("adam.v.")?,
        )?;
        let expected = model.params().named_tensors().len() + 2 * model.params().len();
        if raw.tensors.len() != expected {
            return Err(Error::Validation(format!(
                "checkpoint holds {} tensors, the model layout needs {expected}",
                raw.tensors.len()
            )));
        }
        Ok(Self { meta, model, adam })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_raw().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_raw(&RawCheckpoint::read(path)?)
    }
}

/// Reject configurations that cannot run on `data`.
pub fn check_compatible(cfg: &TrainConfig, data: &Dataset) -> Result<()> {
    let m = &cfg.model;
    if data.embeddings.width() != m.d_theta {
        return Err(Error::Config(format!(
            "model.d_theta = {} but word embeddings are {} wide",
            m.d_theta,
            data.embeddings.width()
        )));
    }
    if let Some(w) = data.feature_width() {
        if w != m.d_x {
            return Err(Error::Config(format!(
                "model.d_x = {} but features are {w} wide",
                m.d_x
            )));
        }
    }
    if m.text.main == Modality::Pair && !data.embeddings.has_pairs() {
        return Err(Error::Config("main modality \"pair\" needs pair embeddings".into()));
    }
    if cfg.loss.lambda_adverb > 0.0
        && cfg.loss.adverb_negatives == AdverbNegatives::Antonym
        && !data.vocab.has_antonyms()
    {
        return Err(Error::Config(
            "antonym negatives need an antonym map; use adverb_negatives = random_nonmatching".into(),
        ));
    }
    if cfg.loss.lambda_action > 0.0 && data.vocab.num_actions() < 2 {
        return Err(Error::Config("the action triplet needs at least two actions".into()));
    }
    Ok(())
}

/// Load the dataset named by `paths` and resolve its train/test split.
pub fn load_training_data(paths: &DataPaths) -> Result<(Dataset, Vec<usize>, Vec<usize>)> {
    let need = |p: &Option<PathBuf>, what: &str| -> Result<PathBuf> {
        p.clone()
            .ok_or_else(|| Error::Config(format!("data.{what} is not set")))
    };
    let (data, _) = load_dataset(
        &need(&paths.manifest, "manifest")?,
        &need(&paths.vocab, "vocab")?,
        &need(&paths.embeddings, "embeddings")?,
    )?;
    let split = SplitFile::read(&need(&paths.split, "split")?)?;
    let train = data.indices_of(&split.train)?;
    let test = data.indices_of(&split.test)?;
    Ok((data, train, test))
}

pub struct Trainer<'a> {
    cfg: TrainConfig,
    data: &'a Dataset,
    train: Vec<usize>,
    test: Vec<usize>,
    model: Regada,
    adam: Adam,
    rng: ChaCha8Rng,
    epoch: usize,
    report: TrainReport,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &TrainConfig, data: &'a Dataset, train: &[usize], test: &[usize]) -> Result<Self> {
        cfg.validate()?;
        check_compatible(cfg, data)?;
        if train.len() < 2 {
            return Err(Error::Validation("training needs at least two samples".into()));
        }
        if test.is_empty() {
            return Err(Error::Validation("evaluation needs at least one test sample".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let model = Regada::new(&cfg.model, &mut rng);
        let adam = Adam::new(cfg.adam(), model.params().values());
        let report = TrainReport {
            config_hash: cfg.hash(),
            config: cfg.clone(),
            train_samples: train.len(),
            test_samples: test.len(),
            parameters: model.params().total_elements(),
            losses: Vec::new(),
            evals: Vec::new(),
            best: None,
        };
        Ok(Self {
            cfg: cfg.clone(),
            data,
            train: train.to_vec(),
            test: test.to_vec(),
            model,
            adam,
            rng,
            epoch: 0,
            report,
        })
    }

    /// Continue from a checkpoint; its configuration must hash to the same
    /// value as `cfg`.
    pub fn resume(
        cfg: &TrainConfig,
        ckpt: Checkpoint,
        data: &'a Dataset,
        train: &[usize],
        test: &[usize],
    ) -> Result<Self> {
        if ckpt.meta.config_hash != cfg.hash() {
            return Err(Error::Config(
                "configuration differs from the one the checkpoint was trained with".into(),
            ));
        }
        let mut t = Self::new(cfg, data, train, test)?;
        t.model = ckpt.model;
        t.adam = ckpt.adam;
        t.rng = ckpt.meta.rng.restore()?;
        t.epoch = ckpt.meta.epoch;
        t.report = ckpt.meta.report;
        Ok(t)
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn model(&self) -> &Regada {
        &self.model
    }

    pub fn report(&self) -> &TrainReport {
        &self.report
    }

    /// One shuffled pass over the training samples. A trailing batch of a
    /// single sample is dropped.
    pub fn run_epoch(&mut self) -> Result<EpochLoss> {
        self.epoch += 1;
        let mut order = self.train.clone();
        order.shuffle(&mut self.rng);
        let data = self.data;
        let loss_cfg = &self.cfg.loss;
        let mut sums = [0.0f64; 4];
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(self.cfg.batch_size).enumerate() {
            if chunk.len() < 2 {
                continue;
            }
            let comps: Vec<(usize, usize)> = chunk
                .iter()
                .map(|&i| (data.samples[i].adverb, data.samples[i].action))
                .collect();
            let feats: Vec<_> = chunk.iter().map(|&i| &data.features[i]).collect();
            let negatives = sample_negatives(&comps, &data.vocab, loss_cfg.adverb_negatives, &mut self.rng)?;
            let mut ctx = self.model.ctx(Mode::Train, true, &mut self.rng);
            let terms = batch_loss(
                &self.model,
                &mut ctx,
                &data.embeddings,
                loss_cfg,
                &feats,
                &comps,
                &negatives,
            )?;
            let value = |v: Option<regada_autodiff::Var>| v.map(|v| ctx.g.value(v).item());
            let parts = [
                Some(ctx.g.value(terms.total).item()),
                value(terms.action),
                value(terms.adverb),
                value(terms.regression),
            ];
            if parts.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!(
                    "loss at epoch {} batch {b}: total {:?}, action {:?}, adverb {:?}, regression {:?}",
                    self.epoch, parts[0], parts[1], parts[2], parts[3]
                )));
            }
            for (s, p) in sums.iter_mut().zip(parts) {
                *s += p.unwrap_or(0.0);
            }
            ctx.g.backward(terms.total)?;
            let grads = ctx.param_grads();
            self.adam.step(self.model.params_mut().values_mut(), &grads)?;
            self.model.absorb_stats(&ctx);
            batches += 1;
        }
        if batches == 0 {
            return Err(Error::Validation("no batch of at least two samples".into()));
        }
        let n = batches as f64;
        let l = &self.cfg.loss;
        let term = |s: f64, w: f64| (w > 0.0).then_some(s / n);
        let rec = EpochLoss {
            epoch: self.epoch,
            batches,
            total: sums[0] / n,
            action: term(sums[1], l.lambda_action),
            adverb: term(sums[2], l.lambda_adverb),
            regression: term(sums[3], l.lambda_reg),
        };
        self.report.losses.push(rec.clone());
        Ok(rec)
    }

    pub fn evaluate(&self) -> Result<MetricReport> {
        evaluate(&self.model, self.data, &self.test)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            meta: CheckpointMeta {
                epoch: self.epoch,
                config_hash: self.cfg.hash(),
                config: self.cfg.clone(),
                rng: RngState::capture(&self.rng),
                adam_step: self.adam.step_count(),
                report: self.report.clone(),
            },
            model: self.model.clone(),
            adam: self.adam.clone(),
        }
    }

    /// Train to the configured number of epochs, evaluating every
    /// `eval_every` epochs and after the last one. At each evaluation the
    /// checkpoint is written to `checkpoint_path` when given.
    pub fn run(mut self, checkpoint_path: Option<&Path>) -> Result<(Checkpoint, TrainReport)> {
        self.run_until(self.cfg.epochs, checkpoint_path)?;
        let ckpt = self.checkpoint();
        Ok((ckpt, self.report))
    }

    /// Like [`Trainer::run`] but stop once `limit` epochs are done (never
    /// past the configured count); the trainer can be checkpointed and
    /// resumed from there.
    pub fn run_until(&mut self, limit: usize, checkpoint_path: Option<&Path>) -> Result<()> {
        let limit = limit.min(self.cfg.epochs);
        while self.epoch < limit {
            self.run_epoch()?;
            if self.epoch.is_multiple_of(self.cfg.eval_every) || self.epoch == self.cfg.epochs {
                let metrics = self.evaluate()?;
                self.report.evals.push(EvalRecord {
                    epoch: self.epoch,
                    metrics,
                });
                self.report.best = Some(Maxima::from_series(&self.report.evals)?);
                if let Some(p) = checkpoint_path {
                    self.checkpoint().save(p)?;
                }
            }
        }
        Ok(())
    }
}

/// Train from scratch; see [`Trainer::run`].
pub fn train(
    cfg: &TrainConfig,
    data: &Dataset,
    train: &[usize],
    test: &[usize],
    checkpoint_path: Option<&Path>,
) -> Result<(Checkpoint, TrainReport)> {
    Trainer::new(cfg, data, train, test)?.run(checkpoint_path)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationAxis {
    /// Main / auxiliary word embedding of the text encoder.
    TextInput,
    /// Which loss terms are switched on.
    Losses,
    /// Residual branch, sigmoid and weight sharing of the gate.
    GateComponents,
}

impl std::str::FromStr for AblationAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "text-input" => Ok(Self::TextInput),
            "losses" => Ok(Self::Losses),
            "gate-components" => Ok(Self::GateComponents),
            _ => Err(Error::Config(format!(
                "unknown ablation axis {s:?} (text-input, losses, gate-components)"
            ))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub label: String,
    /// The switches of this row, by name.
    pub flags: serde_json::Value,
    pub best: Maxima,
    pub report: TrainReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub axis: AblationAxis,
    pub rows: Vec<AblationRow>,
}

/// The configurations of one ablation axis, in table order.
pub fn ablation_grid(base: &TrainConfig, axis: AblationAxis) -> Vec<(String, serde_json::Value, TrainConfig)> {
    use serde_json::json;
    let mut out = Vec::new();
    match axis {
        AblationAxis::TextInput => {
            for (main, aux) in [
                (Modality::Action, Modality::Adverb),
                (Modality::Pair, Modality::Adverb),
                (Modality::Pair, Modality::Action),
                (Modality::Adverb, Modality::Action),
            ] {
                let mut c = base.clone();
                c.model.text.main = main;
                c.model.text.aux = aux;
                let name = |m: Modality| format!("{m:?}").to_lowercase();
                out.push((
                    format!("main={} aux={}", name(main), name(aux)),
                    json!({ "main": main, "aux": aux }),
                    c,
                ));
            }
        }
        AblationAxis::Losses => {
            for (a, v, r) in [
                (true, false, false),
                (false, true, false),
                (false, false, true),
                (true, true, false),
                (true, true, true),
            ] {
                let mut c = base.clone();
                let on = |flag: bool, w: f64| if flag { w } else { 0.0 };
                c.loss.lambda_action = on(a, base.loss.lambda_action);
                c.loss.lambda_adverb = on(v, base.loss.lambda_adverb);
                c.loss.lambda_reg = on(r, base.loss.lambda_reg);
                let mark = |b: bool| if b { "+" } else { "-" };
                out.push((
                    format!("{}action {}adverb {}regression", mark(a), mark(v), mark(r)),
                    json!({ "action_triplet": a, "adverb_triplet": v, "regression": r }),
                    c,
                ));
            }
        }
        AblationAxis::GateComponents => {
            for (r, s, sw) in [
                (true, true, true),
                (true, false, false),
                (false, true, false),
                (true, true, false),
            ] {
                let mut c = base.clone();
                c.model.text.use_residual = r;
                c.model.text.use_sigmoid = s;
                c.model.text.share_weights = sw;
                let mark = |b: bool| if b { "+" } else { "-" };
                out.push((
                    format!("{}residual {}sigmoid {}shared", mark(r), mark(s), mark(sw)),
                    json!({ "residual": r, "sigmoid": s, "shared_weights": sw }),
                    c,
                ));
            }
        }
    }
    out
}

/// Train every configuration of an ablation axis on the same data.
pub fn run_ablation(
    base: &TrainConfig,
    axis: AblationAxis,
    data: &Dataset,
    train_idx: &[usize],
    test_idx: &[usize],
) -> Result<AblationTable> {
    let mut rows = Vec::new();
    for (label, flags, cfg) in ablation_grid(base, axis) {
        let (_, report) = train(&cfg, data, train_idx, test_idx, None)?;
        let best = report
            .best
            .ok_or_else(|| Error::Validation("no evaluation recorded".into()))?;
        rows.push(AblationRow {
            label,
            flags,
            best,
            report,
        });
    }
    Ok(AblationTable { axis, rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::AdverbAp;

    fn metrics(w: f64, m: f64, a: Option<f64>) -> MetricReport {
        MetricReport {
            map_w: w,
            map_m: m,
            acc_a: a,
            test_samples: 1,
            queries: 1,
            skipped_queries: 0,
            per_adverb: vec![AdverbAp {
                adverb: "x".into(),
                support: 1,
                ap: Some(m),
            }],
        }
    }

    #[test]
    fn maxima_may_come_from_different_epochs() {
        let evals = vec![
            EvalRecord {
                epoch: 1,
                metrics: metrics(0.6, 0.3, Some(0.7)),
            },
            EvalRecord {
                epoch: 2,
                metrics: metrics(0.5, 0.3, Some(0.8)),
            },
        ];
        let m = Maxima::from_series(&evals).unwrap();
        assert_eq!(m.map_w, BestValue { value: 0.6, epoch: 1 });
        assert_eq!(m.acc_a, Some(BestValue { value: 0.8, epoch: 2 }));
        // ties keep the earliest epoch
        assert_eq!(m.map_m.epoch, 1);
        assert!(Maxima::from_series(&[]).is_err());
    }

    #[test]
    fn grids_follow_table_layouts() {
        let base = TrainConfig::preset("tiny").unwrap();
        let l = ablation_grid(&base, AblationAxis::Losses);
        assert_eq!(l.len(), 5);
        let flags: Vec<(f64, f64, f64)> = l
            .iter()
            .map(|(_, _, c)| (c.loss.lambda_action, c.loss.lambda_adverb, c.loss.lambda_reg))
            .collect();
        assert_eq!(
            flags,
            vec![
                (1.0, 0.0, 0.0),
                (0.0, 2.0, 0.0),
                (0.0, 0.0, 1.0),
                (1.0, 2.0, 0.0),
                (1.0, 2.0, 1.0)
            ]
        );
        let g = ablation_grid(&base, AblationAxis::GateComponents);
        let flags: Vec<_> = g
            .iter()
            .map(|(_, _, c)| {
                (
                    c.model.text.use_residual,
                    c.model.text.use_sigmoid,
                    c.model.text.share_weights,
                )
            })
            .collect();
        assert_eq!(
            flags,
            vec![
                (true, true, true),
                (true, false, false),
                (false, true, false),
                (true, true, false)
            ]
        );
        let t = ablation_grid(&base, AblationAxis::TextInput);
        assert_eq!(t.len(), 4);
        assert_eq!(
            (t[3].2.model.text.main, t[3].2.model.text.aux),
            (Modality::Adverb, Modality::Action)
        );
        for (_, _, c) in l.iter().chain(&g).chain(&t) {
            c.validate().unwrap();
        }
    }

    #[test]
    fn axis_names() {
        assert_eq!("losses".parse::<AblationAxis>().unwrap(), AblationAxis::Losses);
        assert!("lossy".parse::<AblationAxis>().is_err());
    }
}
