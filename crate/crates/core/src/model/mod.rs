//! The denoising network and its output heads.

mod checkpoint;
mod network;
mod output;

use std::fmt;
use std::str::FromStr;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use network::{HeadVars, Network, Recorded};
pub use output::{GumbelPlacement, HeadOutput, ModelOutput, Temperatures};

use crate::error::{Error, Result};
use crate::quantiser::{RealGrid, SymbolGrid};

/// Output head family.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HeadKind {
    Categorical,
    LogisticMixture { components: usize },
}

impl HeadKind {
    pub fn name(&self) -> &'static str {
        match self {
            HeadKind::Categorical => "categorical",
            HeadKind::LogisticMixture { .. } => "mixture",
        }
    }
}

impl fmt::Display for HeadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "categorical" => Ok(HeadKind::Categorical),
            "mixture" | "logistic-mixture" => Ok(HeadKind::LogisticMixture { components: 5 }),
            other => Err(Error::Config(format!("unknown head kind `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NetworkConfig {
    /// Frequency bins per frame (`n_f`).
    pub bins: usize,
    /// Quantisation levels (`Q`).
    pub levels: usize,
    pub width: usize,
    pub layers: usize,
    pub head: HeadKind,
    /// Add sinusoidal position encodings. Without them the network is
    /// equivariant to permutations of the frame axis.
    pub positional: bool,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            bins: 1,
            levels: 2,
            width: 64,
            layers: 2,
            head: HeadKind::Categorical,
            positional: true,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.bins == 0 {
            return bad("bins must be >= 1".into());
        }
        if self.levels < 2 {
            return bad(format!("levels must be >= 2, got {}", self.levels));
        }
        if self.width == 0 || self.layers == 0 {
            return bad("width and layers must be >= 1".into());
        }
        if let HeadKind::LogisticMixture { components: 0 } = self.head {
            return bad("mixture needs at least one component".into());
        }
        Ok(())
    }

    pub(crate) fn input_width(&self) -> usize {
        self.bins * self.levels + 1 + self.bins
    }

    pub(crate) fn head_width(&self) -> usize {
        match self.head {
            HeadKind::Categorical => self.levels,
            HeadKind::LogisticMixture { components } => 3 * components,
        }
    }
}

/// Anything that maps a partially decoded grid to per-cell distributions.
///
/// `decoded[t]` marks frames whose symbols are visible; symbols stored at
/// undecoded frames must not influence the output.
pub trait Denoiser {
    fn bins(&self) -> usize;
    fn levels(&self) -> usize;
    fn head(&self) -> HeadKind;
    fn predict(
        &self,
        context: &SymbolGrid,
        mu: &RealGrid<f64>,
        decoded: &[bool],
    ) -> Result<ModelOutput>;
}

impl<D: Denoiser + ?Sized> Denoiser for &D {
    fn bins(&self) -> usize {
        (**self).bins()
    }

    fn levels(&self) -> usize {
        (**self).levels()
    }

    fn head(&self) -> HeadKind {
        (**self).head()
    }

    fn predict(
        &self,
        context: &SymbolGrid,
        mu: &RealGrid<f64>,
        decoded: &[bool],
    ) -> Result<ModelOutput> {
        (**self).predict(context, mu, decoded)
    }
}

#[cfg(test)]
mod tests;
