use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Free-form string labels mapped to contiguous ids in first-seen order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Labels {
    names: Vec<String>,
    ids: Vec<usize>,
}

impl Labels {
    pub fn from_strings<S: AsRef<str>>(raw: &[S]) -> Self {
        Self::with_vocabulary(raw, &[])
    }

    /// Uses `known` names first so ids stay stable across files; unseen names
    /// are appended.
    pub fn with_vocabulary<S: AsRef<str>>(raw: &[S], known: &[String]) -> Self {
        let mut names: Vec<String> = known.to_vec();
        let mut ids = Vec::with_capacity(raw.len());
        for s in raw {
            let s = s.as_ref();
            let id = match names.iter().position(|n| n == s) {
                Some(i) => i,
                None => {
                    names.push(s.to_owned());
                    names.len() - 1
                }
            };
            ids.push(id);
        }
        Self { names, ids }
    }

    pub fn from_ids(ids: Vec<usize>) -> Self {
        let n = ids.iter().map(|&i| i + 1).max().unwrap_or(0);
        Self {
            names: (0..n).map(|i| i.to_string()).collect(),
            ids,
        }
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn n_classes(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn subset(&self, rows: &[usize]) -> Self {
        Self {
            names: self.names.clone(),
            ids: rows.iter().map(|&r| self.ids[r]).collect(),
        }
    }
}

/// Reads a newline-delimited file, trimming trailing whitespace and dropping
/// a final empty line. For tab-separated files only the first column is kept.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out: Vec<String> = text
        .lines()
        .map(|l| l.split('\t').next().unwrap_or("").trim_end().to_owned())
        .collect();
    while out.last().is_some_and(|l| l.is_empty()) {
        out.pop();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_seen_order() {
        let l = Labels::from_strings(&["b", "a", "b", "c", "a"]);
        assert_eq!(l.ids(), &[0, 1, 0, 2, 1]);
        assert_eq!(l.names(), &["b", "a", "c"]);
        let m = Labels::with_vocabulary(&["c", "d"], l.names());
        assert_eq!(m.ids(), &[2, 3]);
    }
}
