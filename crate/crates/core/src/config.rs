//! Versioned JSON training configuration.
//!
//! A configuration is built from a named preset, optionally replaced or
//! patched by a JSON file, then adjusted by `key.path=value` overrides.
//! Unknown keys are rejected.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::{Error, Result};

pub const CONFIG_VERSION: u32 = 1;

/// Which word embedding plays which role in the text encoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Adverb,
    Action,
    /// A dedicated embedding of the adverb-action pair.
    Pair,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdverbNegatives {
    /// Negative adverb is the antonym of the ground truth.
    Antonym,
    /// Negative adverb is drawn uniformly from the other adverbs.
    RandomNonmatching,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayMode {
    /// L2 term added to the gradient before the moment updates.
    Coupled,
    /// Decay applied directly to the weights.
    Decoupled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TextConfig {
    /// Hidden blocks in the gate MLP (before its final linear layer).
    pub n_gate: usize,
    /// Hidden blocks in the residual MLP.
    pub n_res: usize,
    pub drop_g: f64,
    pub use_residual: bool,
    pub use_sigmoid: bool,
    /// Gate and residual branches share one MLP.
    pub share_weights: bool,
    pub main: Modality,
    pub aux: Modality,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VideoConfig {
    pub heads: usize,
    pub head_dim: usize,
    pub drop_attn: f64,
    pub n_proj: usize,
    pub drop_proj: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Word-embedding width.
    pub d_theta: usize,
    /// Video feature width.
    pub d_x: usize,
    /// Joint embedding width.
    pub d_dim: usize,
    pub text: TextConfig,
    pub video: VideoConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_action: f64,
    pub lambda_adverb: f64,
    pub lambda_reg: f64,
    pub margin: f64,
    pub adverb_negatives: AdverbNegatives,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub decay: DecayMode,
}

/// Dataset locations. Not part of the configuration hash.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub manifest: Option<PathBuf>,
    pub vocab: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub split: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub version: u32,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub optim: OptimConfig,
    pub batch_size: usize,
    pub epochs: usize,
    pub eval_every: usize,
    pub seed: u64,
    #[serde(default)]
    pub data: DataPaths,
}

const PRESETS: &[(&str, &str)] = &[
    ("default", include_str!("../presets/default.json")),
    ("howto100m", include_str!("../presets/howto100m.json")),
    ("adverbs-in-recipes", include_str!("../presets/adverbs-in-recipes.json")),
    (
        "synthetic-reference",
        include_str!("../presets/synthetic-reference.json"),
    ),
    ("tiny", include_str!("../presets/tiny.json")),
];

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

/// Recursively merge `patch` into `base`; objects merge key by key, any
/// other value replaces.
pub fn merge(base: &mut Value, patch: &Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k.clone(), v.clone());
                    }
                }
            }
        }
        (slot, v) => *slot = v.clone(),
    }
}

/// JSON value of a preset: the default with the preset's patch applied.
pub fn preset_value(name: &str) -> Result<Value> {
    let lookup = |n: &str| -> Result<Value> {
        let (_, text) = PRESETS.iter().find(|(p, _)| *p == n).ok_or_else(|| {
            let known: Vec<_> = preset_names().collect();
            Error::Config(format!("unknown preset {n:?} (known: {})", known.join(", ")))
        })?;
        serde_json::from_str(text).map_err(|e| Error::json(format!("preset {n}"), e))
    };
    let mut base = lookup("default")?;
    if name != "default" {
        merge(&mut base, &lookup(name)?);
    }
    Ok(base)
}

/// Apply `key.path=value`. The value is parsed as JSON, falling back to a
/// plain string. The key must already exist.
pub fn apply_override(root: &mut Value, assignment: &str) -> Result<()> {
    let (path, raw) = assignment
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override {assignment:?} is not key=value")))?;
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut slot = root;
    for key in path.split('.') {
        slot = slot
            .as_object_mut()
            .and_then(|o| o.get_mut(key))
            .ok_or_else(|| Error::Config(format!("override key {path:?} does not exist")))?;
    }
    *slot = value;
    Ok(())
}

impl TrainConfig {
    pub fn preset(name: &str) -> Result<Self> {
        Self::from_value(preset_value(name)?)
    }

    pub fn from_value(v: Value) -> Result<Self> {
        let c: Self = serde_json::from_value(v).map_err(|e| Error::json("configuration", e))?;
        c.validate()?;
        Ok(c)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::json("configuration", e))?;
        Self::from_value(v)
    }

    /// Start from `preset`, merge an optional JSON file on top, then apply
    /// overrides in order.
    pub fn resolve(preset: &str, file: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut v = preset_value(preset)?;
        if let Some(path) = file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let patch: Value = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
            merge(&mut v, &patch);
        }
        for o in overrides {
            apply_override(&mut v, o)?;
        }
        Self::from_value(v)
    }

    pub fn to_value(&self) -> Value {
        serde_json::to_value(self).expect("config serialises")
    }

    pub fn to_json_pretty(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("config serialises");
        s.push('\n');
        s
    }

    /// SHA-256 of the compact JSON form, data paths excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.data = DataPaths::default();
        let json = serde_json::to_string(&c).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.version != CONFIG_VERSION {
            return err(format!("unsupported config version {}", self.version));
        }
        let m = &self.model;
        for (name, v) in [
            ("model.d_theta", m.d_theta),
            ("model.d_x", m.d_x),
            ("model.d_dim", m.d_dim),
            ("model.text.n_gate", m.text.n_gate),
            ("model.text.n_res", m.text.n_res),
            ("model.video.heads", m.video.heads),
            ("model.video.head_dim", m.video.head_dim),
            ("model.video.n_proj", m.video.n_proj),
            ("epochs", self.epochs),
            ("eval_every", self.eval_every),
        ] {
            if v == 0 {
                return err(format!("{name} must be at least 1"));
            }
        }
        for (name, p) in [
            ("model.text.drop_g", m.text.drop_g),
            ("model.video.drop_attn", m.video.drop_attn),
            ("model.video.drop_proj", m.video.drop_proj),
        ] {
            if !(0.0..1.0).contains(&p) {
                return err(format!("{name} = {p} is outside [0, 1)"));
            }
        }
        match (m.text.main, m.text.aux) {
            (_, Modality::Pair) => return err("model.text.aux cannot be pair".into()),
            (a, b) if a == b => return err(format!("main and auxiliary modality are both {a:?}")),
            _ => {}
        }
        if self.batch_size < 2 {
            return err(format!("batch_size {} < 2 (batch normalisation)", self.batch_size));
        }
        let l = &self.loss;
        for (name, w) in [
            ("loss.lambda_action", l.lambda_action),
            ("loss.lambda_adverb", l.lambda_adverb),
            ("loss.lambda_reg", l.lambda_reg),
        ] {
            if !(w.is_finite() && w >= 0.0) {
                return err(format!("{name} = {w} must be finite and non-negative"));
            }
        }
        if l.lambda_action == 0.0 && l.lambda_adverb == 0.0 && l.lambda_reg == 0.0 {
            return err("all loss weights are zero".into());
        }
        if !(l.margin.is_finite() && l.margin > 0.0) {
            return err(format!("loss.margin = {} must be positive", l.margin));
        }
        let o = &self.optim;
        if !(o.lr.is_finite() && o.lr > 0.0) {
            return err(format!("optim.lr = {} must be positive", o.lr));
        }
        for (name, b) in [("optim.beta1", o.beta1), ("optim.beta2", o.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return err(format!("{name} = {b} is outside [0, 1)"));
            }
        }
        if !(o.eps > 0.0 && o.weight_decay >= 0.0 && o.weight_decay.is_finite()) {
            return err("optim.eps must be positive and optim.weight_decay non-negative".into());
        }
        Ok(())
    }

    pub fn adam(&self) -> regada_autodiff::AdamConfig {
        let o = &self.optim;
        regada_autodiff::AdamConfig {
            lr: o.lr,
            beta1: o.beta1,
            beta2: o.beta2,
            eps: o.eps,
            weight_decay: o.weight_decay,
            decay_mode: match o.decay {
                DecayMode::Coupled => regada_autodiff::WeightDecay::Coupled,
                DecayMode::Decoupled => regada_autodiff::WeightDecay::Decoupled,
            },
        }
    }
}
