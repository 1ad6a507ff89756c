use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Binary retain/remove vector over a training set; `false` marks a removed sample.
///
/// On disk a mask is a text file: a `gamma=<int> n=<int> seed=<int>` header
/// followed by one removed index per line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    bits: Vec<bool>,
    source: u64,
}

impl Mask {
    pub fn all_kept(n: usize, source: u64) -> Self {
        Self {
            bits: vec![true; n],
            source,
        }
    }

    pub fn from_removed(n: usize, removed: &[usize], source: u64) -> Result<Self> {
        let mut bits = vec![true; n];
        for &i in removed {
            if i >= n {
                return Err(Error::invalid(format!("removed index {i} outside {n} samples")));
            }
            if !bits[i] {
                return Err(Error::invalid(format!("removed index {i} listed twice")));
            }
            bits[i] = false;
        }
        Ok(Self { bits, source })
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn is_kept(&self, i: usize) -> bool {
        self.bits[i]
    }

    /// Identifier (seed) of the run that produced this mask.
    pub fn source(&self) -> u64 {
        self.source
    }

    /// `γ`, the number of removed samples.
    pub fn gamma(&self) -> usize {
        self.bits.iter().filter(|b| !**b).count()
    }

    /// `‖m‖₀ = N − γ`.
    pub fn kept(&self) -> usize {
        self.len() - self.gamma()
    }

    pub fn removed(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| !self.bits[i]).collect()
    }

    pub fn retained(&self) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.bits[i]).collect()
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("gamma={} n={} seed={}\n", self.gamma(), self.len(), self.source);
        for i in self.removed() {
            writeln!(s, "{i}").expect("write to string");
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::invalid("empty mask file"))?;
        let mut gamma = None;
        let mut n = None;
        let mut seed = None;
        for field in header.split_whitespace() {
            let (k, v) = field
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("bad mask header field {field:?}")))?;
            let parsed = v
                .parse::<u64>()
                .map_err(|_| Error::invalid(format!("bad mask header value {field:?}")))?;
            match k {
                "gamma" => gamma = Some(parsed as usize),
                "n" => n = Some(parsed as usize),
                "seed" => seed = Some(parsed),
                _ => return Err(Error::invalid(format!("unknown mask header key {k:?}"))),
            }
        }
        let (Some(gamma), Some(n), Some(seed)) = (gamma, n, seed) else {
            return Err(Error::invalid("mask header needs gamma, n and seed"));
        };
        let removed = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::invalid(format!("bad mask index {l:?}")))
            })
            .collect::<Result<Vec<_>>>()?;
        if removed.len() != gamma {
            return Err(Error::invalid(format!(
                "mask header says gamma={gamma} but lists {} indices",
                removed.len()
            )));
        }
        Self::from_removed(n, &removed, seed)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_follow_removed_set() {
        let m = Mask::from_removed(5, &[4, 1], 3).unwrap();
        assert_eq!(m.gamma(), 2);
        assert_eq!(m.kept(), 3);
        assert_eq!(m.removed(), vec![1, 4]);
        assert!(Mask::from_removed(5, &[1, 1], 3).is_err());
        assert!(Mask::from_removed(5, &[5], 3).is_err());
    }

    #[test]
    fn text_format() {
        let m = Mask::from_removed(6, &[5, 0], 42).unwrap();
        let t = m.to_text();
        assert_eq!(t, "gamma=2 n=6 seed=42\n0\n5\n");
        assert_eq!(Mask::from_text(&t).unwrap(), m);
        assert!(Mask::from_text("gamma=3 n=6 seed=1\n0\n").is_err());
        assert!(Mask::from_text("n=6 seed=1\n").is_err());
    }
}
