use std::fmt;

use super::ModelConfig;
use crate::error::{Error, Result};

/// Layer × head keep/mask flags. A masked head's attention matrix is the
/// zero matrix.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct HeadMask {
    n_layers: usize,
    n_heads: usize,
    keep: Vec<bool>,
}

impl HeadMask {
    pub fn all_keep(config: &ModelConfig) -> Self {
        Self {
            n_layers: config.n_layers,
            n_heads: config.n_heads,
            keep: vec![true; config.n_layers * config.n_heads],
        }
    }

    /// Masks exactly one head.
    pub fn single(config: &ModelConfig, layer: usize, head: usize) -> Result<Self> {
        Self::masking(config, &[(layer, head)])
    }

    pub fn masking(config: &ModelConfig, heads: &[(usize, usize)]) -> Result<Self> {
        let mut mask = Self::all_keep(config);
        for &(layer, head) in heads {
            if layer >= mask.n_layers || head >= mask.n_heads {
                return Err(Error::Usage(format!(
                    "head {layer}:{head} outside a {}x{} model",
                    mask.n_layers, mask.n_heads
                )));
            }
            mask.keep[layer * mask.n_heads + head] = false;
        }
        Ok(mask)
    }

    /// Parses `"layer:head,layer:head"`; the empty string keeps every head.
    pub fn parse(spec: &str, config: &ModelConfig) -> Result<Self> {
        let mut heads = Vec::new();
        for item in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            let parsed = item
                .split_once(':')
                .and_then(|(l, h)| Some((l.trim().parse().ok()?, h.trim().parse().ok()?)));
            match parsed {
                Some(pair) => heads.push(pair),
                None => {
                    return Err(Error::Usage(format!(
                        "mask entry {item:?} is not of the form layer:head"
                    )))
                }
            }
        }
        Self::masking(config, &heads)
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.n_layers, self.n_heads)
    }

    pub fn matches(&self, config: &ModelConfig) -> bool {
        self.shape() == (config.n_layers, config.n_heads)
    }

    #[inline]
    pub fn is_kept(&self, layer: usize, head: usize) -> bool {
        self.keep[layer * self.n_heads + head]
    }

    pub fn masked_heads(&self) -> Vec<(usize, usize)> {
        (0..self.n_layers)
            .flat_map(|l| (0..self.n_heads).map(move |h| (l, h)))
            .filter(|&(l, h)| !self.is_kept(l, h))
            .collect()
    }
}

impl fmt::Display for HeadMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let items: Vec<String> = self
            .masked_heads()
            .into_iter()
            .map(|(l, h)| format!("{l}:{h}"))
            .collect();
        f.write_str(&items.join(","))
    }
}
