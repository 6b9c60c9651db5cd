//! Training and evaluation data: toy processes with exact oracles, synthetic
//! mel-like utterances, and externally produced mel grids.

mod melfile;
pub mod synth;
mod toy;

pub use melfile::{
    load_grid, parse_mel_csv, read_mel, read_mel_csv, write_mel, write_real_csv, write_symbol_csv,
    MelFile, MEL_MAGIC, MEL_VERSION,
};
pub use synth::{SynthConfig, Utterance};
pub use toy::{ExactToyDenoiser, ToyDistribution, ToyKind, MAX_OUTCOMES};

use crate::error::Result;
use crate::quantiser::{QuantiserSpec, RealGrid, SymbolGrid};
use crate::rng::Rng;
use crate::sampler::SegmentPlan;

/// One training or evaluation sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub symbols: SymbolGrid,
    /// Conditioning prior, same shape as `symbols`, in quantiser units.
    pub mu: RealGrid<f64>,
    /// Real-valued origin of `symbols`, when there is one.
    pub real: Option<RealGrid<f64>>,
    pub segments: Option<SegmentPlan>,
    /// Pitch track in Hz (0 = unvoiced).
    pub f0: Option<Vec<f64>>,
}

/// Toy symbols live on `[0, 1]`, so the prior is the mean level over `Q - 1`.
pub fn toy_quantiser(levels: usize) -> Result<QuantiserSpec<f64>> {
    QuantiserSpec::new(0.0, 1.0, levels)
}

pub fn sample_dataset(dist: &ToyDistribution, count: usize, rng: &mut Rng) -> Result<Vec<Example>> {
    let q = toy_quantiser(dist.levels())?;
    let mu = dist.prior();
    (0..count)
        .map(|_| {
            let symbols = dist.sample(rng);
            Ok(Example {
                real: Some(q.dequantise(&symbols)?),
                symbols,
                mu: mu.clone(),
                segments: None,
                f0: None,
            })
        })
        .collect()
}

/// Quantise utterances with `quantiser`, keeping the real grids and pitch.
pub fn utterance_examples(utts: &[Utterance], quantiser: &QuantiserSpec<f64>) -> Vec<Example> {
    utts.iter()
        .map(|u| Example {
            symbols: quantiser.quantise(&u.log_mel),
            mu: u.mu.clone(),
            real: Some(u.log_mel.clone()),
            segments: Some(u.segments.clone()),
            f0: Some(u.f0.clone()),
        })
        .collect()
}

pub fn synth_utterances(cfg: &SynthConfig, count: usize, rng: &mut Rng) -> Result<Vec<Utterance>> {
    (0..count).map(|_| synth::utterance(cfg, rng)).collect()
}

/// Examples from external grids. Without text, the prior is each bin's
/// utterance mean and no segments are known.
pub fn mel_examples(grids: &[RealGrid<f64>], quantiser: &QuantiserSpec<f64>) -> Vec<Example> {
    grids
        .iter()
        .map(|g| {
            let mut mu = RealGrid::filled(g.bins(), g.frames(), 0.0);
            for b in 0..g.bins() {
                let m = (0..g.frames()).map(|t| g.get(b, t)).sum::<f64>() / g.frames() as f64;
                for t in 0..g.frames() {
                    mu.set(b, t, m);
                }
            }
            Example {
                symbols: quantiser.quantise(g),
                mu,
                real: Some(g.clone()),
                segments: None,
                f0: None,
            }
        })
        .collect()
}
