use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Train / test / unlabelled video ids. The three lists are pairwise
/// disjoint.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFile {
    pub train: Vec<String>,
    pub test: Vec<String>,
    #[serde(default)]
    pub unlabelled: Vec<String>,
}

impl SplitFile {
    pub fn check_disjoint(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for (name, ids) in [
            ("train", &self.train),
            ("test", &self.test),
            ("unlabelled", &self.unlabelled),
        ] {
            for id in ids {
                if !seen.insert(id.as_str()) {
                    return Err(Error::Validation(format!(
                        "video id {id:?} appears twice (second time in {name})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text).map_err(|e| Error::json("split", e))?;
        s.check_disjoint()?;
        Ok(s)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Json { source, .. } => Error::json(path.display().to_string(), source),
            other => other,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("split serialises");
        s.push('\n');
        s
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }
}
