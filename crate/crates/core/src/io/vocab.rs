use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Adverb and action label sets with an optional antonym pairing.
///
/// The antonym map, when present, is a total involution on adverbs with no
/// fixed point.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocabulary {
    adverbs: Vec<String>,
    actions: Vec<String>,
    antonyms: Option<Vec<usize>>,
    adverb_index: HashMap<String, usize>,
    action_index: HashMap<String, usize>,
}

/// On-disk form. Each antonym pair is listed once, in either direction.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VocabFile {
    pub adverbs: Vec<String>,
    pub actions: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub antonyms: BTreeMap<String, String>,
}

fn index_labels(kind: &str, labels: &[String]) -> Result<HashMap<String, usize>> {
    if labels.is_empty() {
        return Err(Error::Validation(format!("no {kind} labels")));
    }
    let mut index = HashMap::with_capacity(labels.len());
    for (i, l) in labels.iter().enumerate() {
        if index.insert(l.clone(), i).is_some() {
            return Err(Error::Validation(format!("duplicate {kind} label {l:?}")));
        }
    }
    Ok(index)
}

impl Vocabulary {
    /// Build a vocabulary; `antonyms` lists index pairs, one entry per pair.
    pub fn new(adverbs: Vec<String>, actions: Vec<String>, antonyms: Option<&[(usize, usize)]>) -> Result<Self> {
        let adverb_index = index_labels("adverb", &adverbs)?;
        let action_index = index_labels("action", &actions)?;
        let antonyms = match antonyms {
            None => None,
            Some(pairs) => Some(complete_involution(&adverbs, pairs)?),
        };
        Ok(Self {
            adverbs,
            actions,
            antonyms,
            adverb_index,
            action_index,
        })
    }

    pub fn from_file_repr(f: VocabFile) -> Result<Self> {
        let adverb_index = index_labels("adverb", &f.adverbs)?;
        let antonyms = if f.antonyms.is_empty() {
            None
        } else {
            let mut pairs = Vec::with_capacity(f.antonyms.len());
            for (a, b) in &f.antonyms {
                let lookup = |l: &String| {
                    adverb_index
                        .get(l)
                        .copied()
                        .ok_or_else(|| Error::Validation(format!("antonym map names unknown adverb {l:?}")))
                };
                pairs.push((lookup(a)?, lookup(b)?));
            }
            Some(pairs)
        };
        Self::new(f.adverbs, f.actions, antonyms.as_deref())
    }

    pub fn to_file_repr(&self) -> VocabFile {
        let mut antonyms = BTreeMap::new();
        if let Some(map) = &self.antonyms {
            for (v, &w) in map.iter().enumerate() {
                if v < w {
                    antonyms.insert(self.adverbs[v].clone(), self.adverbs[w].clone());
                }
            }
        }
        VocabFile {
            adverbs: self.adverbs.clone(),
            actions: self.actions.clone(),
            antonyms,
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        let f: VocabFile = serde_json::from_str(text).map_err(|e| Error::json("vocabulary", e))?;
        Self::from_file_repr(f)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let f: VocabFile = serde_json::from_str(&text).map_err(|e| Error::json(path.display().to_string(), e))?;
        Self::from_file_repr(f)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(&self.to_file_repr()).map_err(|e| Error::json("vocabulary", e))?;
        text.push('\n');
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn num_adverbs(&self) -> usize {
        self.adverbs.len()
    }

    pub fn num_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn adverbs(&self) -> &[String] {
        &self.adverbs
    }

    pub fn actions(&self) -> &[String] {
        &self.actions
    }

    pub fn adverb_id(&self, label: &str) -> Option<usize> {
        self.adverb_index.get(label).copied()
    }

    pub fn action_id(&self, label: &str) -> Option<usize> {
        self.action_index.get(label).copied()
    }

    pub fn has_antonyms(&self) -> bool {
        self.antonyms.is_some()
    }

    pub fn antonym(&self, adverb: usize) -> Option<usize> {
        self.antonyms.as_ref().map(|m| m[adverb])
    }
}

fn complete_involution(adverbs: &[String], pairs: &[(usize, usize)]) -> Result<Vec<usize>> {
    let n = adverbs.len();
    let mut map: Vec<Option<usize>> = vec![None; n];
    for &(a, b) in pairs {
        if a >= n || b >= n {
            return Err(Error::Validation(format!("antonym index out of range ({a}, {b})")));
        }
        if a == b {
            return Err(Error::Validation(format!("adverb {:?} is its own antonym", adverbs[a])));
        }
        for (x, y) in [(a, b), (b, a)] {
            match map[x] {
                Some(prev) if prev != y => {
                    return Err(Error::Validation(format!(
                        "adverb {:?} has two antonyms, {:?} and {:?}",
                        adverbs[x], adverbs[prev], adverbs[y]
                    )))
                }
                _ => map[x] = Some(y),
            }
        }
    }
    map.iter()
        .enumerate()
        .map(|(i, m)| m.ok_or_else(|| Error::Validation(format!("adverb {:?} has no antonym", adverbs[i]))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(s: &str) -> Result<Vocabulary> {
        Vocabulary::parse(s)
    }

    #[test]
    fn completes_involution() {
        let v = parse(
            r#"{"adverbs":["slowly","quickly","gently","firmly"],"actions":["cut"],
               "antonyms":{"slowly":"quickly","firmly":"gently"}}"#,
        )
        .unwrap();
        assert_eq!(v.antonym(0), Some(1));
        assert_eq!(v.antonym(1), Some(0));
        assert_eq!(v.antonym(2), Some(3));
        assert_eq!(v.antonym(3), Some(2));
        for a in 0..4 {
            let b = v.antonym(a).unwrap();
            assert_ne!(a, b);
            assert_eq!(v.antonym(b), Some(a));
        }
    }

    #[test]
    fn antonyms_are_optional() {
        let v = parse(r#"{"adverbs":["a","b","c"],"actions":["x"]}"#).unwrap();
        assert!(!v.has_antonyms());
        assert_eq!(v.antonym(0), None);
    }

    #[test]
    fn rejects_bad_maps() {
        let cases = [
            (
                r#"{"adverbs":["a","b"],"actions":["x"],"antonyms":{"a":"a"}}"#,
                "own antonym",
            ),
            (
                r#"{"adverbs":["a","b","c"],"actions":["x"],"antonyms":{"a":"b"}}"#,
                "\"c\" has no antonym",
            ),
            (
                r#"{"adverbs":["a","b","c"],"actions":["x"],"antonyms":{"a":"b","c":"a"}}"#,
                "two antonyms",
            ),
            (
                r#"{"adverbs":["a","b"],"actions":["x"],"antonyms":{"a":"zz"}}"#,
                "\"zz\"",
            ),
            (r#"{"adverbs":["a","a"],"actions":["x"]}"#, "duplicate adverb"),
            (r#"{"adverbs":[],"actions":["x"]}"#, "no adverb"),
        ];
        for (text, needle) in cases {
            let err = parse(text).unwrap_err().to_string();
            assert!(err.contains(needle), "{text}: {err}");
        }
        assert!(matches!(
            parse(r#"{"adverbs":["a"],"actions":["x"],"extra":1}"#),
            Err(Error::Json { .. })
        ));
    }

    #[test]
    fn file_repr_roundtrip() {
        let v = Vocabulary::new(
            vec!["p".into(), "q".into(), "r".into(), "s".into()],
            vec!["x".into(), "y".into()],
            Some(&[(0, 1), (3, 2)]),
        )
        .unwrap();
        let back = Vocabulary::from_file_repr(v.to_file_repr()).unwrap();
        assert_eq!(v, back);
    }
}
