//! Evaluation metrics: spectral distortion, pitch error, exact likelihoods and
//! distances to a known ground truth.

mod stats;

pub use stats::{paired_t_test, repeated_measures_anova, AnovaResult, TTestResult};

use rayon::prelude::*;

use crate::datagen::ToyDistribution;
use crate::error::{invalid, Error, Result};
use crate::model::{Denoiser, GumbelPlacement, HeadKind};
use crate::numerics::Real;
use crate::orders::{self, Direction, Order};
use crate::quantiser::{RealGrid, SymbolGrid};
use crate::rng::{self, Rng};
use crate::sampler::{self, GenerateOptions, Strategy, StrategyKind, ValueMode};

/// Highest cepstral index included in [`mcd`].
pub const MCD_COEFFICIENTS: usize = 13;

fn same_shape<T: Real>(op: &'static str, a: &RealGrid<T>, b: &RealGrid<T>) -> Result<()> {
    if a.bins() != b.bins() || a.frames() != b.frames() {
        return Err(Error::Shape {
            op,
            left: vec![a.bins(), a.frames()],
            right: vec![b.bins(), b.frames()],
        });
    }
    Ok(())
}

/// Orthonormal DCT-II.
pub fn dct2<T: Real>(x: &[T]) -> Vec<T> {
    let n = T::lit(x.len() as f64);
    let pi = T::lit(std::f64::consts::PI);
    (0..x.len())
        .map(|k| {
            let kf = T::lit(k as f64);
            let s = x.iter().enumerate().fold(T::zero(), |acc, (i, &v)| {
                acc + v * (pi * kf * (T::lit(i as f64) + T::lit(0.5)) / n).cos()
            });
            let norm = if k == 0 {
                (T::one() / n).sqrt()
            } else {
                (T::lit(2.0) / n).sqrt()
            };
            norm * s
        })
        .collect()
}

/// Mel-cepstral distortion in dB between two log-mel grids: cepstra by DCT
/// over bins, coefficients `1..=min(13, bins - 1)`, averaged over frames.
pub fn mcd<T: Real>(reference: &RealGrid<T>, candidate: &RealGrid<T>) -> Result<T> {
    same_shape("mcd", reference, candidate)?;
    if reference.frames() == 0 {
        return Err(invalid("mcd of an empty grid"));
    }
    let hi = MCD_COEFFICIENTS.min(reference.bins().saturating_sub(1));
    let k = T::lit(10.0 / std::f64::consts::LN_10);
    let total = (0..reference.frames()).fold(T::zero(), |acc, t| {
        let a = dct2(&reference.frame(t));
        let b = dct2(&candidate.frame(t));
        let d2 = (1..=hi).fold(T::zero(), |s, d| s + (a[d] - b[d]).powi(2));
        acc + k * (T::lit(2.0) * d2).sqrt()
    });
    Ok(total / T::lit(reference.frames() as f64))
}

/// RMSE of `ln f0` over frames voiced (`f0 > 0`) in both tracks.
pub fn logf0_rmse(reference: &[f64], candidate: &[f64]) -> Result<f64> {
    if reference.len() != candidate.len() {
        return Err(Error::Shape {
            op: "logf0_rmse",
            left: vec![reference.len()],
            right: vec![candidate.len()],
        });
    }
    let sq: Vec<f64> = reference
        .iter()
        .zip(candidate)
        .filter(|(&a, &b)| a > 0.0 && b > 0.0)
        .map(|(a, b)| (a.ln() - b.ln()).powi(2))
        .collect();
    if sq.is_empty() {
        return Err(invalid("no frames are voiced in both tracks"));
    }
    Ok((sq.iter().sum::<f64>() / sq.len() as f64).sqrt())
}

/// `Σ_t ln p(y_σ(t) | y_σ(<t))`, one forward pass per step.
pub fn chain_rule_loglik<D: Denoiser>(
    model: &D,
    y: &SymbolGrid,
    mu: &RealGrid<f64>,
    order: &Order,
) -> Result<f64> {
    if order.len() != y.frames() {
        return Err(Error::Shape {
            op: "chain_rule_loglik",
            left: vec![y.frames()],
            right: vec![order.len()],
        });
    }
    let mut total = 0.0;
    for (step, &p) in order.positions().iter().enumerate() {
        let visible = order.decoded_before(step);
        let out = model.predict(&y.masked(&visible), mu, &visible)?;
        total += out.frame_log_prob(y, p)?;
    }
    Ok(total)
}

/// Chain-rule log-likelihoods of several sequences under several orders.
#[derive(Clone, Debug, PartialEq)]
pub struct OrderSpread {
    /// `table[i][j]`: sequence `i` under order `j`.
    pub table: Vec<Vec<f64>>,
    pub means: Vec<f64>,
    /// Repeated-measures test across orders, sequences as subjects.
    pub anova: AnovaResult,
}

pub fn order_spread<D: Denoiser + Sync>(
    model: &D,
    sequences: &[(SymbolGrid, RealGrid<f64>)],
    orders: &[Order],
) -> Result<OrderSpread> {
    let table: Vec<Vec<f64>> = sequences
        .par_iter()
        .map(|(y, mu)| {
            orders
                .iter()
                .map(|o| chain_rule_loglik(model, y, mu, o))
                .collect()
        })
        .collect::<Result<_>>()?;
    let n = table.len().max(1) as f64;
    let means = (0..orders.len())
        .map(|j| table.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let anova = repeated_measures_anova(&table)?;
    Ok(OrderSpread {
        table,
        means,
        anova,
    })
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// `KL(p ‖ q)` in nats; infinite when `q` misses mass of `p`.
pub fn kl_divergence(p: &[f64], q: &[f64]) -> f64 {
    p.iter()
        .zip(q)
        .filter(|(&a, _)| a > 0.0)
        .map(|(&a, &b)| {
            if b > 0.0 {
                a * (a / b).ln()
            } else {
                f64::INFINITY
            }
        })
        .sum()
}

/// Exact law of generating along a fixed order with unit-temperature sampling:
/// the product of the model's conditionals, one forward per decoded prefix.
pub fn fixed_order_law<D: Denoiser + Sync>(
    model: &D,
    dist: &ToyDistribution,
    mu: &RealGrid<f64>,
    order: &Order,
) -> Result<Vec<f64>> {
    let n = dist.require_enumerable()?;
    if model.bins() != dist.bins()
        || model.levels() != dist.levels()
        || order.len() != dist.frames()
    {
        return Err(invalid(
            "model, order and toy process disagree on dimensions",
        ));
    }
    let mut law = vec![0.0; n];
    let mut grid = SymbolGrid::zeros(dist.bins(), dist.frames());
    let mut decoded = vec![false; dist.frames()];
    descend(
        model,
        dist,
        mu,
        order.positions(),
        &mut grid,
        &mut decoded,
        0.0,
        &mut law,
    )?;
    Ok(law)
}

#[allow(clippy::too_many_arguments)]
fn descend<D: Denoiser>(
    model: &D,
    dist: &ToyDistribution,
    mu: &RealGrid<f64>,
    rest: &[usize],
    grid: &mut SymbolGrid,
    decoded: &mut Vec<bool>,
    log_p: f64,
    law: &mut [f64],
) -> Result<()> {
    let Some((&p, rest)) = rest.split_first() else {
        law[dist.index_of(grid)] += log_p.exp();
        return Ok(());
    };
    let out = model.predict(grid, mu, decoded)?;
    let bins = dist.bins();
    let levels = dist.levels();
    let cells: Vec<Vec<f64>> = (0..bins).map(|b| out.level_log_probs(p, b)).collect();
    decoded[p] = true;
    for combo in 0..levels.pow(bins as u32) {
        let mut c = combo;
        let mut lp = log_p;
        for (b, cell) in cells.iter().enumerate() {
            let v = c % levels;
            c /= levels;
            grid.set(b, p, v as u32);
            lp += cell[v];
        }
        descend(model, dist, mu, rest, grid, decoded, lp, law)?;
    }
    decoded[p] = false;
    for b in 0..bins {
        grid.set(b, p, 0);
    }
    Ok(())
}

/// Empirical law of `samples` generations, streams split per sample.
pub fn monte_carlo_law<D: Denoiser + Sync>(
    model: &D,
    dist: &ToyDistribution,
    mu: &RealGrid<f64>,
    strategy: &Strategy,
    opts: &GenerateOptions,
    samples: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let n = dist.require_enumerable()?;
    let indices: Vec<usize> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng::stream(seed, &[i as u64]);
            sampler::generate(model, mu, strategy, opts, &mut rng).map(|g| dist.index_of(&g.grid))
        })
        .collect::<Result<_>>()?;
    let mut law = vec![0.0; n];
    for i in indices {
        law[i] += 1.0 / samples as f64;
    }
    Ok(law)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Divergence {
    pub tv: f64,
    /// `KL(truth ‖ model)`.
    pub kl: f64,
    pub exact: bool,
}

/// Compare the law a strategy generates with the true process. Fixed orders
/// with unit-temperature sampling are computed exactly; anything else is
/// estimated from `samples` generations.
pub fn model_vs_truth<D: Denoiser + Sync>(
    model: &D,
    dist: &ToyDistribution,
    mu: &RealGrid<f64>,
    strategy: &Strategy,
    samples: usize,
    rng: &mut Rng,
) -> Result<Divergence> {
    let truth = dist.probabilities()?;
    let frames = dist.frames();
    let unit = match strategy.values {
        ValueMode::Sample(t) => {
            t.t1 == 1.0
                && t.placement == GumbelPlacement::BeforeNoise
                && (t.t2 == 1.0 || model.head() == HeadKind::Categorical)
        }
        ValueMode::Argmax => false,
    };
    let order = match &strategy.kind {
        StrategyKind::LeftToRight => Some(orders::fixed_order(frames, Direction::LeftToRight)?),
        StrategyKind::RightToLeft => Some(orders::fixed_order(frames, Direction::RightToLeft)?),
        StrategyKind::Fixed(o) => Some(o.clone()),
        StrategyKind::Beta { beta, .. } if *beta == 0.0 => {
            Some(orders::fixed_order(frames, Direction::LeftToRight)?)
        }
        _ => None,
    };
    let (law, exact) = match order {
        Some(o) if unit => (fixed_order_law(model, dist, mu, &o)?, true),
        _ => {
            if samples == 0 {
                return Err(invalid("Monte Carlo comparison needs samples > 0"));
            }
            let seed = rand::Rng::random(rng);
            (
                monte_carlo_law(
                    model,
                    dist,
                    mu,
                    strategy,
                    &GenerateOptions::default(),
                    samples,
                    seed,
                )?,
                false,
            )
        }
    };
    Ok(Divergence {
        tv: total_variation(&truth, &law),
        kl: kl_divergence(&truth, &law),
        exact,
    })
}
