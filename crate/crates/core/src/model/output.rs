//! Per-position, per-bin output distributions and how to score and sample them.

use crate::error::{invalid, Error, Result};
use crate::numerics::{discretized_logistic_log_mass, logsumexp};
use crate::quantiser::SymbolGrid;
use crate::rng::{self, Rng};

/// Where the Gumbel-Max temperature `t1` enters.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum GumbelPlacement {
    /// `argmax(logits / t1 + g)`
    #[default]
    BeforeNoise,
    /// `argmax((logits + g) / t1)`; `t1` then has no effect on the draw.
    AfterNoise,
}

/// Sampling temperatures: `t1` for the component (or level) choice, `t2`
/// for the logistic noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Temperatures {
    pub t1: f64,
    pub t2: f64,
    pub placement: GumbelPlacement,
}

impl Temperatures {
    pub fn new(t1: f64, t2: f64) -> Result<Self> {
        if !(t1 > 0.0) || !t1.is_finite() {
            return Err(invalid(format!("t1 must be positive, got {t1}")));
        }
        if !(t2 >= 0.0) || !t2.is_finite() {
            return Err(invalid(format!("t2 must be non-negative, got {t2}")));
        }
        Ok(Self {
            t1,
            t2,
            placement: GumbelPlacement::BeforeNoise,
        })
    }
}

impl Default for Temperatures {
    fn default() -> Self {
        Self {
            t1: 1.0,
            t2: 1.0,
            placement: GumbelPlacement::BeforeNoise,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum HeadOutput {
    /// Unnormalised logits, `(frames · bins) × levels`.
    Categorical { logits: Vec<f64> },
    /// Mixture logits, means (level units) and log-scales, each
    /// `(frames · bins) × components`.
    LogisticMixture {
        components: usize,
        logits: Vec<f64>,
        means: Vec<f64>,
        log_scales: Vec<f64>,
    },
}

/// Distribution parameters for every cell of a `bins × frames` grid. Rows are
/// frame-major: cell `(frame, bin)` is row `frame · bins + bin`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelOutput {
    frames: usize,
    bins: usize,
    levels: usize,
    head: HeadOutput,
}

impl ModelOutput {
    pub fn categorical(
        frames: usize,
        bins: usize,
        levels: usize,
        logits: Vec<f64>,
    ) -> Result<Self> {
        if logits.len() != frames * bins * levels {
            return Err(Error::Shape {
                op: "ModelOutput::categorical",
                left: vec![frames, bins, levels],
                right: vec![logits.len()],
            });
        }
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("ModelOutput::categorical"));
        }
        Ok(Self {
            frames,
            bins,
            levels,
            head: HeadOutput::Categorical { logits },
        })
    }

    pub fn mixture(
        frames: usize,
        bins: usize,
        levels: usize,
        components: usize,
        logits: Vec<f64>,
        means: Vec<f64>,
        log_scales: Vec<f64>,
    ) -> Result<Self> {
        let n = frames * bins * components;
        if logits.len() != n || means.len() != n || log_scales.len() != n {
            return Err(Error::Shape {
                op: "ModelOutput::mixture",
                left: vec![frames, bins, components],
                right: vec![logits.len(), means.len(), log_scales.len()],
            });
        }
        if logits
            .iter()
            .chain(&means)
            .chain(&log_scales)
            .any(|x| !x.is_finite())
        {
            return Err(Error::NonFinite("ModelOutput::mixture"));
        }
        Ok(Self {
            frames,
            bins,
            levels,
            head: HeadOutput::LogisticMixture {
                components,
                logits,
                means,
                log_scales,
            },
        })
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn head(&self) -> &HeadOutput {
        &self.head
    }

    fn row(&self, frame: usize, bin: usize) -> usize {
        frame * self.bins + bin
    }

    /// `ln p(level)` for every level of one cell.
    pub fn level_log_probs(&self, frame: usize, bin: usize) -> Vec<f64> {
        let r = self.row(frame, bin);
        match &self.head {
            HeadOutput::Categorical { logits } => {
                let row = &logits[r * self.levels..(r + 1) * self.levels];
                let lse = logsumexp(row);
                row.iter().map(|&x| x - lse).collect()
            }
            HeadOutput::LogisticMixture { components, .. } => {
                let log_w = self.mixture_log_weights(r, *components);
                (0..self.levels)
                    .map(|k| self.mixture_log_mass(r, *components, &log_w, k))
                    .collect()
            }
        }
    }

    fn mixture_log_weights(&self, r: usize, m: usize) -> Vec<f64> {
        let HeadOutput::LogisticMixture { logits, .. } = &self.head else {
            unreachable!()
        };
        let row = &logits[r * m..(r + 1) * m];
        let lse = logsumexp(row);
        row.iter().map(|&x| x - lse).collect()
    }

    fn mixture_log_mass(&self, r: usize, m: usize, log_w: &[f64], level: usize) -> f64 {
        let HeadOutput::LogisticMixture {
            means, log_scales, ..
        } = &self.head
        else {
            unreachable!()
        };
        let terms: Vec<f64> = (0..m)
            .map(|c| {
                let i = r * m + c;
                log_w[c]
                    + discretized_logistic_log_mass(means[i], log_scales[i], level, self.levels)
                        .value
            })
            .collect();
        logsumexp(&terms)
    }

    /// `ln p(level)` for a single cell.
    pub fn cell_log_prob(&self, frame: usize, bin: usize, level: u32) -> Result<f64> {
        let k = level as usize;
        if k >= self.levels {
            return Err(Error::SymbolOutOfRange {
                symbol: level,
                levels: self.levels,
            });
        }
        let r = self.row(frame, bin);
        Ok(match &self.head {
            HeadOutput::Categorical { logits } => {
                let row = &logits[r * self.levels..(r + 1) * self.levels];
                row[k] - logsumexp(row)
            }
            HeadOutput::LogisticMixture { components, .. } => {
                let log_w = self.mixture_log_weights(r, *components);
                self.mixture_log_mass(r, *components, &log_w, k)
            }
        })
    }

    fn check_target(&self, target: &SymbolGrid) -> Result<()> {
        if target.bins() != self.bins || target.frames() != self.frames {
            return Err(Error::Shape {
                op: "log_prob",
                left: vec![self.bins, self.frames],
                right: vec![target.bins(), target.frames()],
            });
        }
        target.check_levels(self.levels)
    }

    /// Per-cell log-probabilities of `target`, frame-major (`frame · bins + bin`).
    pub fn log_prob(&self, target: &SymbolGrid) -> Result<Vec<f64>> {
        self.check_target(target)?;
        let mut out = Vec::with_capacity(self.frames * self.bins);
        for t in 0..self.frames {
            for b in 0..self.bins {
                out.push(self.cell_log_prob(t, b, target.get(b, t))?);
            }
        }
        Ok(out)
    }

    /// Log-probability of one whole frame of `target` (bins are independent).
    pub fn frame_log_prob(&self, target: &SymbolGrid, frame: usize) -> Result<f64> {
        self.check_target(target)?;
        (0..self.bins)
            .map(|b| self.cell_log_prob(frame, b, target.get(b, frame)))
            .sum()
    }

    /// `Σ_bins max_level ln p`, the confidence of one frame.
    pub fn frame_confidence(&self, frame: usize) -> f64 {
        (0..self.bins)
            .map(|b| {
                self.level_log_probs(frame, b)
                    .into_iter()
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .sum()
    }

    /// Most probable level of a cell; ties go to the lowest level.
    pub fn argmax_level(&self, frame: usize, bin: usize) -> u32 {
        argmax(&self.level_log_probs(frame, bin)) as u32
    }

    /// Draw one cell.
    pub fn sample_cell(&self, frame: usize, bin: usize, temps: Temperatures, rng: &mut Rng) -> u32 {
        let r = self.row(frame, bin);
        let gumbel_argmax = |row: &[f64], rng: &mut Rng| {
            let noisy: Vec<f64> = row
                .iter()
                .map(|&x| match temps.placement {
                    GumbelPlacement::BeforeNoise => x / temps.t1 + rng::gumbel(rng),
                    GumbelPlacement::AfterNoise => (x + rng::gumbel(rng)) / temps.t1,
                })
                .collect();
            argmax(&noisy)
        };
        match &self.head {
            HeadOutput::Categorical { logits } => {
                gumbel_argmax(&logits[r * self.levels..(r + 1) * self.levels], rng) as u32
            }
            HeadOutput::LogisticMixture {
                components,
                logits,
                means,
                log_scales,
            } => {
                let m = *components;
                let c = gumbel_argmax(&logits[r * m..(r + 1) * m], rng);
                let i = r * m + c;
                let noise = if temps.t2 > 0.0 {
                    temps.t2 * log_scales[i].exp() * rng::logistic(rng)
                } else {
                    0.0
                };
                let top = (self.levels - 1) as f64;
                (means[i] + noise).round().clamp(0.0, top) as u32
            }
        }
    }

    /// Candidate update for every cell, sampled independently.
    pub fn sample_head(&self, temps: Temperatures, rng: &mut Rng) -> SymbolGrid {
        let mut out = SymbolGrid::zeros(self.bins, self.frames);
        for t in 0..self.frames {
            for b in 0..self.bins {
                out.set(b, t, self.sample_cell(t, b, temps, rng));
            }
        }
        out
    }
}

fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn uniform_binary_logits() {
        let out = ModelOutput::categorical(1, 1, 2, vec![0.0, 0.0]).unwrap();
        let g = SymbolGrid::new(1, 1, vec![1]).unwrap();
        assert!((out.log_prob(&g).unwrap()[0] - 0.5f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn narrow_component_at_bucket_centre() {
        let out = ModelOutput::mixture(1, 1, 5, 1, vec![0.0], vec![3.0], vec![-10.0]).unwrap();
        assert!(out.cell_log_prob(0, 0, 3).unwrap().abs() < 1e-9);
    }

    #[test]
    fn level_masses_normalise_for_both_heads() {
        let cat = ModelOutput::categorical(1, 2, 4, vec![0.3, -1.0, 2.0, 0.0, 5.0, 4.0, -3.0, 1.0])
            .unwrap();
        let mix = ModelOutput::mixture(
            1,
            2,
            6,
            2,
            vec![0.1, -0.4, 1.0, 2.0],
            vec![1.2, 4.4, -0.3, 6.1],
            vec![0.2, -1.5, 0.7, 0.0],
        )
        .unwrap();
        for out in [&cat, &mix] {
            for b in 0..2 {
                let total: f64 = out.level_log_probs(0, b).iter().map(|x| x.exp()).sum();
                assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn out_of_range_target_rejected() {
        let out = ModelOutput::categorical(1, 1, 2, vec![0.0, 0.0]).unwrap();
        let g = SymbolGrid::new(1, 1, vec![2]).unwrap();
        assert!(matches!(
            out.log_prob(&g),
            Err(Error::SymbolOutOfRange { .. })
        ));
    }

    #[test]
    fn zero_t2_single_component_rounds_the_mean() {
        let out = ModelOutput::mixture(1, 1, 10, 1, vec![0.0], vec![3.6], vec![1.0]).unwrap();
        let temps = Temperatures::new(1.0, 0.0).unwrap();
        let mut rng = seeded(4);
        for _ in 0..100 {
            assert_eq!(out.sample_cell(0, 0, temps, &mut rng), 4);
        }
    }

    #[test]
    fn small_t1_picks_argmax_level() {
        let out = ModelOutput::categorical(1, 1, 4, vec![0.1, 0.9, 0.5, 0.89]).unwrap();
        let temps = Temperatures::new(1e-9, 1.0).unwrap();
        let mut rng = seeded(8);
        for _ in 0..200 {
            assert_eq!(out.sample_cell(0, 0, temps, &mut rng), 1);
        }
        assert_eq!(out.argmax_level(0, 0), 1);
    }

    #[test]
    fn temperatures_validated() {
        assert!(Temperatures::new(0.0, 1.0).is_err());
        assert!(Temperatures::new(1.0, -0.1).is_err());
    }
}
