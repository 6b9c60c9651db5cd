//! The generation loop and its decoding strategies.
//!
//! Every run starts from an all-masked grid (symbol 0, flag 0). Each step runs
//! one forward pass and commits the cells of the frames the strategy picks.
//! Only committed cells draw from the RNG, so two strategies that realise the
//! same order under the same stream produce the same grid.

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::model::{Denoiser, HeadKind, ModelOutput, Temperatures};
use crate::orders::{self, Direction, Order, Provenance, SwapLog};
use crate::quantiser::{RealGrid, SymbolGrid};
use crate::rng::Rng;

/// How committed cells get their values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ValueMode {
    /// Per-bin most probable level.
    Argmax,
    Sample(Temperatures),
}

#[derive(Clone, Debug, PartialEq)]
pub enum StrategyKind {
    /// Uniformly random order drawn up front.
    Default,
    LeftToRight,
    RightToLeft,
    Beta {
        beta: f64,
        log: SwapLog,
    },
    /// Commit the `k` most confident frames per forward pass.
    TopK {
        k: usize,
    },
    /// Most confident segment first, frames inside it in random order.
    /// Segments come from [`GenerateOptions::segments`].
    DurationGuided,
    Fixed(Order),
}

#[derive(Clone, Debug, PartialEq)]
pub struct Strategy {
    pub kind: StrategyKind,
    pub values: ValueMode,
}

impl Strategy {
    pub fn new(kind: StrategyKind, values: ValueMode) -> Result<Self> {
        match &kind {
            StrategyKind::Beta { beta, .. } if !(0.0..=1.0).contains(beta) => {
                return Err(invalid(format!("beta must lie in [0, 1], got {beta}")))
            }
            StrategyKind::TopK { k: 0 } => return Err(invalid("K must be >= 1")),
            _ => {}
        }
        Ok(Self { kind, values })
    }

    pub fn sampled(kind: StrategyKind) -> Self {
        Self {
            kind,
            values: ValueMode::Sample(Temperatures::default()),
        }
    }

    pub fn with_temperatures(mut self, temps: Temperatures) -> Self {
        if let ValueMode::Sample(_) = self.values {
            self.values = ValueMode::Sample(temps);
        }
        self
    }

    /// True when the realised order never depends on model outputs.
    pub fn is_fixed(&self) -> bool {
        !matches!(
            self.kind,
            StrategyKind::TopK { .. } | StrategyKind::DurationGuided
        )
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let star = if matches!(self.values, ValueMode::Sample(_)) {
            "*"
        } else {
            ""
        };
        match &self.kind {
            StrategyKind::Default => f.write_str("default"),
            StrategyKind::LeftToRight => f.write_str("l2r"),
            StrategyKind::RightToLeft => f.write_str("r2l"),
            StrategyKind::Beta { beta, .. } => write!(f, "beta:{beta}"),
            StrategyKind::TopK { k: 1 } => write!(f, "top1{star}"),
            StrategyKind::TopK { k } => write!(f, "topk{star}:{k}"),
            StrategyKind::DurationGuided => f.write_str("duration"),
            StrategyKind::Fixed(_) => f.write_str("fixed"),
        }
    }
}

/// Accepts `default`, `l2r`, `r2l`, `beta:X`, `top1`, `top1*`, `topk:K`,
/// `topk*:K`, `duration`. Top-K without `*` uses argmax values; everything
/// else samples at unit temperatures.
impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s.trim(), None),
        };
        let number = |what: &str| -> Result<&str> {
            arg.ok_or_else(|| Error::Config(format!("strategy `{name}` needs `{name}:{what}`")))
        };
        let bad = |v: &str| Error::Config(format!("bad argument `{v}` in strategy `{s}`"));
        let sample = |kind| Strategy::new(kind, ValueMode::Sample(Temperatures::default()));
        match name {
            "default" => sample(StrategyKind::Default),
            "l2r" => sample(StrategyKind::LeftToRight),
            "r2l" => sample(StrategyKind::RightToLeft),
            "duration" => sample(StrategyKind::DurationGuided),
            "beta" => {
                let v = number("BETA")?;
                let beta = v.parse().map_err(|_| bad(v))?;
                sample(StrategyKind::Beta {
                    beta,
                    log: SwapLog::Natural,
                })
            }
            "top1" => Strategy::new(StrategyKind::TopK { k: 1 }, ValueMode::Argmax),
            "top1*" => sample(StrategyKind::TopK { k: 1 }),
            "topk" | "topk*" => {
                let v = number("K")?;
                let k = v.parse().map_err(|_| bad(v))?;
                if name == "topk" {
                    Strategy::new(StrategyKind::TopK { k }, ValueMode::Argmax)
                } else {
                    sample(StrategyKind::TopK { k })
                }
            }
            _ => Err(Error::Config(format!("unknown strategy `{s}`"))),
        }
        .map_err(|e| match e {
            Error::InvalidArgument(m) => Error::Config(m),
            other => other,
        })
    }
}

/// Contiguous, disjoint, exhaustive position ranges in increasing order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SegmentPlan {
    ranges: Vec<Range<usize>>,
}

impl SegmentPlan {
    pub fn new(ranges: Vec<Range<usize>>) -> Result<Self> {
        if ranges.is_empty() {
            return Err(invalid("segment plan is empty"));
        }
        let mut next = 0;
        for r in &ranges {
            if r.start != next || r.end <= r.start {
                return Err(invalid(format!(
                    "segments must be non-empty and contiguous from 0; got {r:?} after {next}"
                )));
            }
            next = r.end;
        }
        Ok(Self { ranges })
    }

    pub fn from_lengths(lengths: &[usize]) -> Result<Self> {
        let mut start = 0;
        let ranges = lengths
            .iter()
            .map(|&n| {
                let r = start..start + n;
                start += n;
                r
            })
            .collect();
        Self::new(ranges)
    }

    pub fn ranges(&self) -> &[Range<usize>] {
        &self.ranges
    }

    pub fn frames(&self) -> usize {
        self.ranges.last().map_or(0, |r| r.end)
    }

    pub fn lengths(&self) -> Vec<usize> {
        self.ranges.iter().map(|r| r.len()).collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct GenerateOptions {
    /// Keep a copy of the grid after every step.
    pub record_steps: bool,
    pub segments: Option<SegmentPlan>,
}

/// One step of a run: the frames committed and their confidence scores.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepRecord {
    pub step: usize,
    /// 0-based positions committed at this step.
    pub positions: Vec<usize>,
    pub scores: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct Generation {
    pub grid: SymbolGrid,
    pub order: Order,
    pub steps: Vec<StepRecord>,
    /// Grid after each step when [`GenerateOptions::record_steps`] is set.
    pub snapshots: Vec<SymbolGrid>,
    pub forward_calls: usize,
}

#[derive(Serialize)]
struct StepLine<'a> {
    step: usize,
    positions: Vec<usize>,
    scores: &'a [f64],
    decoded: Vec<usize>,
    strategy: String,
}

impl Generation {
    /// One JSON object per step, with 1-based positions and the cumulative
    /// decoded set.
    pub fn json_lines(&self, strategy: &Strategy) -> Vec<String> {
        let mut decoded = Vec::new();
        self.steps
            .iter()
            .map(|s| {
                decoded.extend(s.positions.iter().map(|p| p + 1));
                decoded.sort_unstable();
                let line = StepLine {
                    step: s.step,
                    positions: s.positions.iter().map(|p| p + 1).collect(),
                    scores: &s.scores,
                    decoded: decoded.clone(),
                    strategy: strategy.to_string(),
                };
                serde_json::to_string(&line).expect("step records serialise")
            })
            .collect()
    }
}

/// `s_k = Σ_bins max_level ln p` for each listed position.
pub fn confidence_scores(out: &ModelOutput, undecoded: &[usize]) -> Result<Vec<f64>> {
    if undecoded.is_empty() {
        return Err(invalid("no undecoded positions to score"));
    }
    Ok(undecoded.iter().map(|&k| out.frame_confidence(k)).collect())
}

/// The `k` highest-scoring positions; equal scores go to the lower position.
pub fn select_topk(positions: &[usize], scores: &[f64], k: usize) -> Result<Vec<usize>> {
    if k == 0 {
        return Err(invalid("K must be >= 1"));
    }
    if positions.len() != scores.len() {
        return Err(Error::Shape {
            op: "select_topk",
            left: vec![positions.len()],
            right: vec![scores.len()],
        });
    }
    if k > positions.len() {
        return Err(invalid(format!(
            "K = {k} exceeds {} undecoded positions",
            positions.len()
        )));
    }
    let mut idx: Vec<usize> = (0..positions.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .total_cmp(&scores[a])
            .then(positions[a].cmp(&positions[b]))
    });
    Ok(idx[..k].iter().map(|&i| positions[i]).collect())
}

/// Index of the segment with the highest mean score over its undecoded
/// positions. Fully decoded segments are skipped; ties go to the earlier one.
pub fn select_segment(
    plan: &SegmentPlan,
    decoded: &[bool],
    score: impl Fn(usize) -> f64,
) -> Result<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in plan.ranges().iter().enumerate() {
        let open: Vec<usize> = r.clone().filter(|&p| !decoded[p]).collect();
        if open.is_empty() {
            continue;
        }
        let mean = open.iter().map(|&p| score(p)).sum::<f64>() / open.len() as f64;
        if best.is_none_or(|(_, m)| mean > m) {
            best = Some((i, mean));
        }
    }
    best.map(|(i, _)| i)
        .ok_or_else(|| invalid("every segment is already decoded"))
}

struct Run<'a, D> {
    model: &'a D,
    mu: &'a RealGrid<f64>,
    values: ValueMode,
    grid: SymbolGrid,
    decoded: Vec<bool>,
    realised: Vec<usize>,
    steps: Vec<StepRecord>,
    snapshots: Option<Vec<SymbolGrid>>,
    forward_calls: usize,
}

impl<D: Denoiser> Run<'_, D> {
    fn forward(&mut self) -> Result<ModelOutput> {
        self.forward_calls += 1;
        self.model.predict(&self.grid, self.mu, &self.decoded)
    }

    fn undecoded(&self) -> Vec<usize> {
        (0..self.decoded.len())
            .filter(|&p| !self.decoded[p])
            .collect()
    }

    fn commit(&mut self, out: &ModelOutput, positions: &[usize], rng: &mut Rng) {
        let mut scores = Vec::with_capacity(positions.len());
        for &p in positions {
            scores.push(out.frame_confidence(p));
            for b in 0..self.grid.bins() {
                let v = match self.values {
                    ValueMode::Argmax => out.argmax_level(p, b),
                    ValueMode::Sample(t) => out.sample_cell(p, b, t, rng),
                };
                self.grid.set(b, p, v);
            }
            self.decoded[p] = true;
            self.realised.push(p);
        }
        self.steps.push(StepRecord {
            step: self.steps.len() + 1,
            positions: positions.to_vec(),
            scores,
        });
        if let Some(s) = &mut self.snapshots {
            s.push(self.grid.clone());
        }
    }
}

fn check_compatible<D: Denoiser>(
    model: &D,
    mu: &RealGrid<f64>,
    strategy: &Strategy,
    opts: &GenerateOptions,
) -> Result<()> {
    let incompatible = |reason: String| Error::Incompatible {
        strategy: strategy.to_string(),
        reason,
    };
    if mu.bins() != model.bins() {
        return Err(incompatible(format!(
            "prior has {} bins, model expects {}",
            mu.bins(),
            model.bins()
        )));
    }
    if mu.frames() == 0 {
        return Err(invalid("cannot generate an empty sequence"));
    }
    if let ValueMode::Sample(t) = strategy.values {
        if model.head() == HeadKind::Categorical && t.t2 != 1.0 {
            return Err(incompatible(
                "t2 only applies to the logistic-mixture head".into(),
            ));
        }
    }
    match &strategy.kind {
        StrategyKind::Fixed(o) if o.len() != mu.frames() => Err(incompatible(format!(
            "order has length {}, sequence has {} frames",
            o.len(),
            mu.frames()
        ))),
        StrategyKind::DurationGuided => match &opts.segments {
            None => Err(incompatible(
                "duration-guided decoding needs a segment plan".into(),
            )),
            Some(p) if p.frames() != mu.frames() => Err(incompatible(format!(
                "segments cover {} frames, sequence has {}",
                p.frames(),
                mu.frames()
            ))),
            Some(_) => Ok(()),
        },
        _ => Ok(()),
    }
}

/// Generate one grid conditioned on `mu`.
pub fn generate<D: Denoiser>(
    model: &D,
    mu: &RealGrid<f64>,
    strategy: &Strategy,
    opts: &GenerateOptions,
    rng: &mut Rng,
) -> Result<Generation> {
    check_compatible(model, mu, strategy, opts)?;
    let frames = mu.frames();
    let mut run = Run {
        model,
        mu,
        values: strategy.values,
        grid: SymbolGrid::zeros(model.bins(), frames),
        decoded: vec![false; frames],
        realised: Vec::with_capacity(frames),
        steps: Vec::with_capacity(frames),
        snapshots: opts.record_steps.then(Vec::new),
        forward_calls: 0,
    };

    let fixed = match &strategy.kind {
        StrategyKind::Default => Some(orders::uniform_order(frames, rng)?),
        StrategyKind::LeftToRight => Some(orders::fixed_order(frames, Direction::LeftToRight)?),
        StrategyKind::RightToLeft => Some(orders::fixed_order(frames, Direction::RightToLeft)?),
        StrategyKind::Beta { beta, log } => {
            Some(orders::beta_swapped_order(frames, *beta, *log, rng)?)
        }
        StrategyKind::Fixed(o) => Some(o.clone()),
        StrategyKind::TopK { .. } | StrategyKind::DurationGuided => None,
    };

    let provenance = match fixed {
        Some(order) => {
            for &p in order.positions() {
                let out = run.forward()?;
                run.commit(&out, &[p], rng);
            }
            order.provenance()
        }
        None => {
            match &strategy.kind {
                StrategyKind::TopK { k } => {
                    while run.realised.len() < frames {
                        let out = run.forward()?;
                        let open = run.undecoded();
                        let scores = confidence_scores(&out, &open)?;
                        let chosen = select_topk(&open, &scores, (*k).min(open.len()))?;
                        run.commit(&out, &chosen, rng);
                    }
                }
                StrategyKind::DurationGuided => {
                    let plan = opts.segments.as_ref().expect("checked above");
                    while run.realised.len() < frames {
                        let out = run.forward()?;
                        let seg = select_segment(plan, &run.decoded, |p| out.frame_confidence(p))?;
                        let mut open: Vec<usize> = plan.ranges()[seg]
                            .clone()
                            .filter(|&p| !run.decoded[p])
                            .collect();
                        open.shuffle(rng);
                        run.commit(&out, &open[..1], rng);
                        for &p in &open[1..] {
                            let out = run.forward()?;
                            run.commit(&out, &[p], rng);
                        }
                    }
                }
                _ => unreachable!(),
            }
            Provenance::Adaptive
        }
    };

    Ok(Generation {
        order: Order::new(run.realised, provenance)?,
        grid: run.grid,
        steps: run.steps,
        snapshots: run.snapshots.unwrap_or_default(),
        forward_calls: run.forward_calls,
    })
}
