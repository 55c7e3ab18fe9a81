use std::collections::{BTreeSet, HashMap};
use std::path::{Path, PathBuf};

use regada_autodiff::Tensor;
use serde::{Deserialize, Serialize};

use super::tensor_file::{self, TensorData};
use super::vocab::Vocabulary;
use crate::{Error, Result};

/// One labelled video.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Sample {
    pub video_id: String,
    pub action: usize,
    pub adverb: usize,
    /// Feature file, resolved against the manifest's directory.
    pub feature: PathBuf,
}

/// One manifest line before label resolution.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub video_id: String,
    pub feature: String,
    pub action: String,
    pub adverb: String,
}

/// Parse JSON-lines manifest text. Blank lines are ignored; errors name the
/// 1-based line.
pub fn parse_manifest_records(text: &str) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord =
            serde_json::from_str(line).map_err(|e| Error::json(format!("manifest line {}", i + 1), e))?;
        if !seen.insert(rec.video_id.clone()) {
            return Err(Error::Validation(format!(
                "manifest line {}: duplicate video_id {:?}",
                i + 1,
                rec.video_id
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<()> {
    let mut text = String::new();
    for r in records {
        text.push_str(&serde_json::to_string(r).map_err(|e| Error::json("manifest", e))?);
        text.push('\n');
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Resolve manifest labels against a vocabulary. All unknown labels are
/// reported together.
pub fn resolve_samples(records: &[ManifestRecord], vocab: &Vocabulary, root: &Path) -> Result<Vec<Sample>> {
    let mut unknown_adverbs = BTreeSet::new();
    let mut unknown_actions = BTreeSet::new();
    let mut out = Vec::with_capacity(records.len());
    for r in records {
        let adverb = vocab.adverb_id(&r.adverb);
        let action = vocab.action_id(&r.action);
        if adverb.is_none() {
            unknown_adverbs.insert(r.adverb.clone());
        }
        if action.is_none() {
            unknown_actions.insert(r.action.clone());
        }
        if let (Some(adverb), Some(action)) = (adverb, action) {
            out.push(Sample {
                video_id: r.video_id.clone(),
                action,
                adverb,
                feature: root.join(&r.feature),
            });
        }
    }
    if !unknown_adverbs.is_empty() || !unknown_actions.is_empty() {
        let mut msg = Vec::new();
        if !unknown_adverbs.is_empty() {
            msg.push(format!("unknown adverbs {unknown_adverbs:?}"));
        }
        if !unknown_actions.is_empty() {
            msg.push(format!("unknown actions {unknown_actions:?}"));
        }
        return Err(Error::Validation(msg.join("; ")));
    }
    Ok(out)
}

/// Per-video `T × d_x` feature matrix, upcast to 64 bits.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    matrix: Tensor,
}

impl FeatureSequence {
    pub fn new(matrix: Tensor) -> Result<Self> {
        if matrix.rank() != 2 {
            return Err(Error::Validation(format!(
                "feature sequence must be T x d_x, got shape {:?}",
                matrix.shape()
            )));
        }
        if !matrix.is_finite() {
            return Err(Error::NonFinite("feature sequence".into()));
        }
        Ok(Self { matrix })
    }

    pub fn segments(&self) -> usize {
        self.matrix.rows()
    }

    pub fn width(&self) -> usize {
        self.matrix.cols()
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }
}

pub fn read_feature_file(path: &Path) -> Result<FeatureSequence> {
    let t = tensor_file::read(path)?;
    if t.shape().len() != 2 {
        return Err(Error::Validation(format!(
            "{}: feature file must be rank 2, got shape {:?}",
            path.display(),
            t.shape()
        )));
    }
    FeatureSequence::new(t.to_tensor())
}

/// Store as 32-bit floats; values are rounded to the nearest `f32`.
pub fn write_feature_file(path: &Path, seq: &FeatureSequence) -> Result<()> {
    let t = &seq.matrix;
    tensor_file::write(
        path,
        &TensorData::F32 {
            shape: t.shape().to_vec(),
            values: t.data().iter().map(|&v| v as f32).collect(),
        },
    )
}

/// Word vectors for every adverb and action, and optionally for every
/// adverb-action pair.
///
/// On disk this is one rank-2 container whose rows are the `V` adverbs, then
/// the `A` actions, then (optionally) the `V·A` pairs in row `v·A + a`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    adverbs: Tensor,
    actions: Tensor,
    pairs: Option<Tensor>,
}

impl EmbeddingTable {
    pub fn new(adverbs: Tensor, actions: Tensor, pairs: Option<Tensor>) -> Result<Self> {
        let d = adverbs.cols();
        if actions.cols() != d || pairs.as_ref().is_some_and(|p| p.cols() != d) {
            return Err(Error::Validation("embedding widths differ".into()));
        }
        if let Some(p) = &pairs {
            if p.rows() != adverbs.rows() * actions.rows() {
                return Err(Error::Validation(format!(
                    "expected {} pair embeddings, got {}",
                    adverbs.rows() * actions.rows(),
                    p.rows()
                )));
            }
        }
        Ok(Self {
            adverbs,
            actions,
            pairs,
        })
    }

    /// Split a stacked `rows × d_θ` matrix for a vocabulary with `V`
    /// adverbs and `A` actions.
    pub fn from_stacked(stacked: &Tensor, num_adverbs: usize, num_actions: usize) -> Result<Self> {
        if stacked.rank() != 2 {
            return Err(Error::Validation(format!(
                "embedding table must be rank 2, got shape {:?}",
                stacked.shape()
            )));
        }
        let (v, a) = (num_adverbs, num_actions);
        let rows = stacked.rows();
        let d = stacked.cols();
        let base = v + a;
        if rows != base && rows != base + v * a {
            let hint = if rows < base {
                format!("missing {} word embeddings", base - rows)
            } else {
                format!("expected {base} or {} rows", base + v * a)
            };
            return Err(Error::Validation(format!(
                "embedding table has {rows} rows for {v} adverbs and {a} actions: {hint}"
            )));
        }
        let block = |start: usize, n: usize| Tensor::matrix(n, d, stacked.data()[start * d..(start + n) * d].to_vec());
        let pairs = (rows > base).then(|| block(base, v * a));
        Self::new(block(0, v), block(v, a), pairs)
    }

    pub fn stacked(&self) -> Tensor {
        let mut data = self.adverbs.data().to_vec();
        data.extend_from_slice(self.actions.data());
        let mut rows = self.adverbs.rows() + self.actions.rows();
        if let Some(p) = &self.pairs {
            data.extend_from_slice(p.data());
            rows += p.rows();
        }
        Tensor::matrix(rows, self.width(), data)
    }

    pub fn width(&self) -> usize {
        self.adverbs.cols()
    }

    pub fn num_adverbs(&self) -> usize {
        self.adverbs.rows()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.rows()
    }

    pub fn adverb(&self, v: usize) -> &[f64] {
        self.adverbs.row_slice(v)
    }

    pub fn action(&self, a: usize) -> &[f64] {
        self.actions.row_slice(a)
    }

    pub fn has_pairs(&self) -> bool {
        self.pairs.is_some()
    }

    pub fn pair(&self, v: usize, a: usize) -> Option<&[f64]> {
        self.pairs.as_ref().map(|p| p.row_slice(v * self.num_actions() + a))
    }

    pub fn read(path: &Path, num_adverbs: usize, num_actions: usize) -> Result<Self> {
        let t = tensor_file::read(path)?;
        Self::from_stacked(&t.to_tensor(), num_adverbs, num_actions)
            .map_err(|e| Error::Validation(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let s = self.stacked();
        tensor_file::write(
            path,
            &TensorData::F32 {
                shape: s.shape().to_vec(),
                values: s.data().iter().map(|&v| v as f32).collect(),
            },
        )
    }
}

/// A fully validated dataset with features loaded into memory.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub vocab: Vocabulary,
    pub embeddings: EmbeddingTable,
    pub samples: Vec<Sample>,
    pub features: Vec<FeatureSequence>,
}

impl Dataset {
    pub fn new(
        vocab: Vocabulary,
        embeddings: EmbeddingTable,
        samples: Vec<Sample>,
        features: Vec<FeatureSequence>,
    ) -> Result<Self> {
        if embeddings.num_adverbs() != vocab.num_adverbs() || embeddings.num_actions() != vocab.num_actions() {
            return Err(Error::Validation(format!(
                "embedding table covers {} adverbs / {} actions, vocabulary has {} / {}",
                embeddings.num_adverbs(),
                embeddings.num_actions(),
                vocab.num_adverbs(),
                vocab.num_actions()
            )));
        }
        if samples.len() != features.len() {
            return Err(Error::Validation("one feature sequence per sample required".into()));
        }
        for s in &samples {
            if s.adverb >= vocab.num_adverbs() || s.action >= vocab.num_actions() {
                return Err(Error::Validation(format!("{}: label index out of range", s.video_id)));
            }
        }
        if let Some(first) = features.first() {
            let d = first.width();
            for (s, f) in samples.iter().zip(&features) {
                if f.width() != d {
                    return Err(Error::Validation(format!(
                        "{}: feature width {} differs from {d}",
                        s.video_id,
                        f.width()
                    )));
                }
            }
        }
        Ok(Self {
            vocab,
            embeddings,
            samples,
            features,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Feature width, `None` for an empty dataset.
    pub fn feature_width(&self) -> Option<usize> {
        self.features.first().map(FeatureSequence::width)
    }

    /// Positions of the given video ids, in the given order.
    pub fn indices_of(&self, ids: &[String]) -> Result<Vec<usize>> {
        let pos: HashMap<&str, usize> = self
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.video_id.as_str(), i))
            .collect();
        let mut missing = Vec::new();
        let out = ids
            .iter()
            .filter_map(|id| {
                let p = pos.get(id.as_str()).copied();
                if p.is_none() {
                    missing.push(id.clone());
                }
                p
            })
            .collect();
        if !missing.is_empty() {
            missing.truncate(10);
            return Err(Error::Validation(format!("unknown video ids {missing:?}")));
        }
        Ok(out)
    }
}

/// Counts reported after loading.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DatasetCounts {
    pub samples: usize,
    pub actions: usize,
    pub adverbs: usize,
}

/// Load manifest, vocabulary, embeddings and every referenced feature file.
pub fn load_dataset(manifest: &Path, vocab: &Path, embeddings: &Path) -> Result<(Dataset, DatasetCounts)> {
    let vocab = Vocabulary::read(vocab)?;
    let text = std::fs::read_to_string(manifest).map_err(|e| Error::io(manifest, e))?;
    let records = parse_manifest_records(&text)?;
    let root = manifest.parent().unwrap_or(Path::new("."));
    let samples = resolve_samples(&records, &vocab, root)?;
    let table = EmbeddingTable::read(embeddings, vocab.num_adverbs(), vocab.num_actions())?;
    let features = samples
        .iter()
        .map(|s| read_feature_file(&s.feature))
        .collect::<Result<Vec<_>>>()?;
    let counts = DatasetCounts {
        samples: samples.len(),
        actions: vocab.num_actions(),
        adverbs: vocab.num_adverbs(),
    };
    Ok((Dataset::new(vocab, table, samples, features)?, counts))
}
