//! Mel-like synthetic utterances: phone segments with formant envelopes and
//! a pitch track carried in bin 0.

use rand::Rng as _;
use rand_distr::{Distribution, Normal};

use crate::error::{invalid, Result};
use crate::quantiser::RealGrid;
use crate::rng::Rng;
use crate::sampler::SegmentPlan;

/// Log-mel floor and ceiling of generated grids.
pub const FLOOR: f64 = -6.0;
pub const CEIL: f64 = 2.0;
const PITCH_LO_HZ: f64 = 70.0;
const PITCH_HI_HZ: f64 = 400.0;
/// Bin-0 values map voiced pitch onto `[VOICED_LO, CEIL]`; anything below
/// `VOICING_THRESHOLD` reads as unvoiced.
const VOICED_LO: f64 = -2.0;
const VOICING_THRESHOLD: f64 = -4.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub bins: usize,
    pub frames: usize,
    pub min_phone: usize,
    pub max_phone: usize,
    /// Standard deviation of additive noise in log-mel units.
    pub noise: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            bins: 16,
            frames: 32,
            min_phone: 2,
            max_phone: 6,
            noise: 0.15,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Utterance {
    pub log_mel: RealGrid<f64>,
    /// Per-segment mean of `log_mel`, standing in for a duration-upsampled
    /// text encoding.
    pub mu: RealGrid<f64>,
    /// Hz per frame, 0 where unvoiced.
    pub f0: Vec<f64>,
    pub segments: SegmentPlan,
}

pub fn encode_pitch(f0: f64) -> f64 {
    if f0 <= 0.0 {
        return FLOOR;
    }
    let x = (f0.clamp(PITCH_LO_HZ, PITCH_HI_HZ).ln() - PITCH_LO_HZ.ln())
        / (PITCH_HI_HZ.ln() - PITCH_LO_HZ.ln());
    VOICED_LO + x * (CEIL - VOICED_LO)
}

pub fn decode_pitch(value: f64) -> f64 {
    if value < VOICING_THRESHOLD {
        return 0.0;
    }
    let x = ((value - VOICED_LO) / (CEIL - VOICED_LO)).clamp(0.0, 1.0);
    (PITCH_LO_HZ.ln() + x * (PITCH_HI_HZ.ln() - PITCH_LO_HZ.ln())).exp()
}

/// Pitch track read back from bin 0 of a grid.
pub fn f0_track(grid: &RealGrid<f64>) -> Vec<f64> {
    (0..grid.frames())
        .map(|t| decode_pitch(grid.get(0, t)))
        .collect()
}

pub fn utterance(cfg: &SynthConfig, rng: &mut Rng) -> Result<Utterance> {
    if cfg.bins < 2 || cfg.frames == 0 {
        return Err(invalid(
            "synthetic utterances need >= 2 bins and >= 1 frame",
        ));
    }
    if cfg.min_phone == 0 || cfg.min_phone > cfg.max_phone {
        return Err(invalid("phone lengths need 1 <= min <= max"));
    }
    let noise = Normal::new(0.0, cfg.noise).map_err(|e| invalid(e.to_string()))?;

    let mut lengths = Vec::new();
    let mut left = cfg.frames;
    while left > 0 {
        let n = rng.random_range(cfg.min_phone..=cfg.max_phone).min(left);
        lengths.push(n);
        left -= n;
    }
    let segments = SegmentPlan::from_lengths(&lengths)?;

    let base_pitch = rng.random_range(100.0..180.0);
    let mut log_mel = RealGrid::filled(cfg.bins, cfg.frames, FLOOR);
    let mut f0 = vec![0.0; cfg.frames];
    let top = (cfg.bins - 1) as f64;
    for r in segments.ranges() {
        let voiced = rng.random_bool(0.75);
        let loud = rng.random_range(0.0..1.0);
        let formants: Vec<(f64, f64, f64)> = if voiced {
            vec![
                (rng.random_range(0.1..0.35), 0.08, 4.5 + loud),
                (rng.random_range(0.4..0.7), 0.1, 3.5 + loud),
            ]
        } else {
            vec![(rng.random_range(0.7..0.95), 0.25, 3.0 + loud)]
        };
        for (i, t) in r.clone().enumerate() {
            let phase = (i as f64 + 0.5) / r.len() as f64;
            if voiced {
                f0[t] = base_pitch * (1.0 + 0.1 * (std::f64::consts::PI * phase).sin());
            }
            for b in 1..cfg.bins {
                let x = b as f64 / top;
                let env: f64 = formants
                    .iter()
                    .map(|&(c, w, a)| a * (-(x - c).powi(2) / (2.0 * w * w)).exp())
                    .sum();
                let v = FLOOR + 1.0 + env - 1.5 * x + noise.sample(rng);
                log_mel.set(b, t, v.clamp(FLOOR, CEIL));
            }
            log_mel.set(0, t, encode_pitch(f0[t]));
        }
    }

    let mut mu = RealGrid::filled(cfg.bins, cfg.frames, 0.0);
    for r in segments.ranges() {
        for b in 0..cfg.bins {
            let m = r.clone().map(|t| log_mel.get(b, t)).sum::<f64>() / r.len() as f64;
            for t in r.clone() {
                mu.set(b, t, m);
            }
        }
    }
    Ok(Utterance {
        log_mel,
        mu,
        f0,
        segments,
    })
}
