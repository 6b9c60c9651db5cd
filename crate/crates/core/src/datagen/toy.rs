//! Small discrete processes with exact likelihoods and conditionals.

use rand::Rng as _;

use crate::error::{invalid, Error, Result};
use crate::model::{Denoiser, HeadKind, ModelOutput};
use crate::quantiser::{RealGrid, SymbolGrid};
use crate::rng::Rng;

/// Enumeration budget for brute-force oracles.
pub const MAX_OUTCOMES: usize = 1_000_000;

#[derive(Clone, Debug, PartialEq)]
pub enum ToyKind {
    /// Every cell drawn independently from `marginal`.
    Iid { marginal: Vec<f64> },
    /// One order-1 chain over symbols per bin, bins independent.
    Markov {
        initial: Vec<f64>,
        transition: Vec<Vec<f64>>,
    },
    /// A hidden chain shared by all bins; each bin emits independently.
    Hmm {
        initial: Vec<f64>,
        transition: Vec<Vec<f64>>,
        emission: Vec<Vec<f64>>,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ToyDistribution {
    kind: ToyKind,
    bins: usize,
    frames: usize,
    levels: usize,
}

fn check_row(row: &[f64], len: usize, what: &str) -> Result<()> {
    if row.len() != len {
        return Err(invalid(format!(
            "{what} has {} entries, expected {len}",
            row.len()
        )));
    }
    if row.iter().any(|&p| !(p >= 0.0) || !p.is_finite()) {
        return Err(invalid(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > 1e-12 {
        return Err(invalid(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

fn check_square(m: &[Vec<f64>], n: usize, cols: usize, what: &str) -> Result<()> {
    if m.len() != n {
        return Err(invalid(format!(
            "{what} has {} rows, expected {n}",
            m.len()
        )));
    }
    m.iter().try_for_each(|r| check_row(r, cols, what))
}

fn draw(p: &[f64], rng: &mut Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &x) in p.iter().enumerate() {
        acc += x;
        if u < acc {
            return i;
        }
    }
    // rounding residue: last level with positive mass
    p.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

fn step(dist: &[f64], transition: &[Vec<f64>]) -> Vec<f64> {
    let mut next = vec![0.0; transition[0].len()];
    for (i, &p) in dist.iter().enumerate() {
        for (j, &q) in transition[i].iter().enumerate() {
            next[j] += p * q;
        }
    }
    next
}

impl ToyDistribution {
    pub fn new(kind: ToyKind, bins: usize, frames: usize) -> Result<Self> {
        if bins == 0 || frames == 0 {
            return Err(invalid("toy process needs at least one bin and one frame"));
        }
        let levels = match &kind {
            ToyKind::Iid { marginal } => {
                check_row(marginal, marginal.len(), "marginal")?;
                marginal.len()
            }
            ToyKind::Markov {
                initial,
                transition,
            } => {
                let q = initial.len();
                check_row(initial, q, "initial distribution")?;
                check_square(transition, q, q, "transition")?;
                q
            }
            ToyKind::Hmm {
                initial,
                transition,
                emission,
            } => {
                let s = initial.len();
                check_row(initial, s, "initial distribution")?;
                check_square(transition, s, s, "transition")?;
                let q = emission.first().map_or(0, Vec::len);
                check_square(emission, s, q, "emission")?;
                q
            }
        };
        if levels < 2 {
            return Err(invalid("toy process needs at least two levels"));
        }
        Ok(Self {
            kind,
            bins,
            frames,
            levels,
        })
    }

    pub fn kind(&self) -> &ToyKind {
        &self.kind
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// `Q^(bins · frames)`, or `None` on overflow.
    pub fn outcome_count(&self) -> Option<usize> {
        (0..self.bins * self.frames).try_fold(1usize, |acc, _| acc.checked_mul(self.levels))
    }

    pub fn require_enumerable(&self) -> Result<usize> {
        match self.outcome_count() {
            Some(n) if n <= MAX_OUTCOMES => Ok(n),
            _ => Err(Error::Infeasible(format!(
                "{}^{} outcomes exceed the enumeration budget of {MAX_OUTCOMES}",
                self.levels,
                self.bins * self.frames
            ))),
        }
    }

    /// Grid number `index` in mixed radix `Q`, cell `(bin, frame)` at digit
    /// `bin · frames + frame`.
    pub fn grid_from_index(&self, mut index: usize) -> SymbolGrid {
        let n = self.bins * self.frames;
        let mut data = vec![0u32; n];
        for d in data.iter_mut() {
            *d = (index % self.levels) as u32;
            index /= self.levels;
        }
        SymbolGrid::new(self.bins, self.frames, data).expect("sized by construction")
    }

    pub fn index_of(&self, grid: &SymbolGrid) -> usize {
        grid.data()
            .iter()
            .rev()
            .fold(0, |acc, &s| acc * self.levels + s as usize)
    }

    pub fn sample(&self, rng: &mut Rng) -> SymbolGrid {
        let mut g = SymbolGrid::zeros(self.bins, self.frames);
        match &self.kind {
            ToyKind::Iid { marginal } => {
                for b in 0..self.bins {
                    for t in 0..self.frames {
                        g.set(b, t, draw(marginal, rng) as u32);
                    }
                }
            }
            ToyKind::Markov {
                initial,
                transition,
            } => {
                for b in 0..self.bins {
                    let mut s = draw(initial, rng);
                    g.set(b, 0, s as u32);
                    for t in 1..self.frames {
                        s = draw(&transition[s], rng);
                        g.set(b, t, s as u32);
                    }
                }
            }
            ToyKind::Hmm {
                initial,
                transition,
                emission,
            } => {
                let mut z = draw(initial, rng);
                for t in 0..self.frames {
                    if t > 0 {
                        z = draw(&transition[z], rng);
                    }
                    for b in 0..self.bins {
                        g.set(b, t, draw(&emission[z], rng) as u32);
                    }
                }
            }
        }
        g
    }

    /// Probability of a complete grid. HMM likelihoods use the forward recursion.
    pub fn prob(&self, grid: &SymbolGrid) -> Result<f64> {
        if grid.bins() != self.bins || grid.frames() != self.frames {
            return Err(Error::Shape {
                op: "ToyDistribution::prob",
                left: vec![self.bins, self.frames],
                right: vec![grid.bins(), grid.frames()],
            });
        }
        grid.check_levels(self.levels)?;
        let y = |b: usize, t: usize| grid.get(b, t) as usize;
        Ok(match &self.kind {
            ToyKind::Iid { marginal } => {
                grid.data().iter().map(|&s| marginal[s as usize]).product()
            }
            ToyKind::Markov {
                initial,
                transition,
            } => (0..self.bins)
                .map(|b| {
                    (1..self.frames).fold(initial[y(b, 0)], |p, t| {
                        p * transition[y(b, t - 1)][y(b, t)]
                    })
                })
                .product(),
            ToyKind::Hmm {
                initial,
                transition,
                emission,
            } => {
                let emit = |z: usize, t: usize| {
                    (0..self.bins)
                        .map(|b| emission[z][y(b, t)])
                        .product::<f64>()
                };
                let mut alpha: Vec<f64> = initial
                    .iter()
                    .enumerate()
                    .map(|(z, &p)| p * emit(z, 0))
                    .collect();
                for t in 1..self.frames {
                    alpha = step(&alpha, transition)
                        .into_iter()
                        .enumerate()
                        .map(|(z, a)| a * emit(z, t))
                        .collect();
                }
                alpha.iter().sum()
            }
        })
    }

    /// Expected level of every cell.
    pub fn mean_levels(&self) -> RealGrid<f64> {
        let mean = |p: &[f64]| {
            p.iter()
                .enumerate()
                .map(|(j, &x)| j as f64 * x)
                .sum::<f64>()
        };
        let mut out = RealGrid::filled(self.bins, self.frames, 0.0);
        match &self.kind {
            ToyKind::Iid { marginal } => {
                out = RealGrid::filled(self.bins, self.frames, mean(marginal));
            }
            ToyKind::Markov {
                initial,
                transition,
            } => {
                let mut d = initial.clone();
                for t in 0..self.frames {
                    if t > 0 {
                        d = step(&d, transition);
                    }
                    for b in 0..self.bins {
                        out.set(b, t, mean(&d));
                    }
                }
            }
            ToyKind::Hmm {
                initial,
                transition,
                emission,
            } => {
                let per_state: Vec<f64> = emission.iter().map(|e| mean(e)).collect();
                let mut d = initial.clone();
                for t in 0..self.frames {
                    if t > 0 {
                        d = step(&d, transition);
                    }
                    let m: f64 = d.iter().zip(&per_state).map(|(p, e)| p * e).sum();
                    for b in 0..self.bins {
                        out.set(b, t, m);
                    }
                }
            }
        }
        out
    }

    /// Prior grid: mean level divided by `Q - 1`, i.e. dequantised onto `[0, 1]`.
    pub fn prior(&self) -> RealGrid<f64> {
        let top = (self.levels - 1) as f64;
        self.mean_levels().map(|m| m / top)
    }

    /// Shannon entropy of the whole grid in nats, by enumeration.
    pub fn entropy(&self) -> Result<f64> {
        let n = self.require_enumerable()?;
        let mut h = 0.0;
        for i in 0..n {
            let p = self.prob(&self.grid_from_index(i))?;
            if p > 0.0 {
                h -= p * p.ln();
            }
        }
        Ok(h)
    }

    /// Every grid's probability, indexed as in [`Self::grid_from_index`].
    pub fn probabilities(&self) -> Result<Vec<f64>> {
        let n = self.require_enumerable()?;
        (0..n)
            .map(|i| self.prob(&self.grid_from_index(i)))
            .collect()
    }

    /// Marginal of every unobserved cell given the observed ones, by summing
    /// over all completions. `observed` is bin-major like [`SymbolGrid`].
    /// Rows for observed cells are point masses.
    pub fn exact_marginals(&self, observed: &[Option<u32>]) -> Result<Vec<Vec<f64>>> {
        let n = self.bins * self.frames;
        if observed.len() != n {
            return Err(Error::Shape {
                op: "exact_marginals",
                left: vec![n],
                right: vec![observed.len()],
            });
        }
        self.require_enumerable()?;
        let free: Vec<usize> = (0..n).filter(|&i| observed[i].is_none()).collect();
        let mut base = vec![0u32; n];
        for (i, o) in observed.iter().enumerate() {
            if let Some(s) = *o {
                if s as usize >= self.levels {
                    return Err(Error::SymbolOutOfRange {
                        symbol: s,
                        levels: self.levels,
                    });
                }
                base[i] = s;
            }
        }
        let mut acc = vec![vec![0.0; self.levels]; n];
        let mut total = 0.0;
        let combos = self.levels.pow(free.len() as u32);
        for mut c in 0..combos {
            let mut data = base.clone();
            for &i in &free {
                data[i] = (c % self.levels) as u32;
                c /= self.levels;
            }
            let g = SymbolGrid::new(self.bins, self.frames, data)?;
            let p = self.prob(&g)?;
            total += p;
            for (i, row) in acc.iter_mut().enumerate() {
                row[g.data()[i] as usize] += p;
            }
        }
        if total <= 0.0 {
            return Err(invalid("observed values have probability zero"));
        }
        for row in &mut acc {
            row.iter_mut().for_each(|x| *x /= total);
        }
        Ok(acc)
    }

    /// `p(y[bin, frame] = · | observed)`.
    pub fn exact_conditional(
        &self,
        observed: &[Option<u32>],
        bin: usize,
        frame: usize,
    ) -> Result<Vec<f64>> {
        if bin >= self.bins || frame >= self.frames {
            return Err(invalid(format!("cell ({bin}, {frame}) outside the grid")));
        }
        let mut m = self.exact_marginals(observed)?;
        Ok(m.swap_remove(bin * self.frames + frame))
    }
}

/// Categorical denoiser returning the true conditionals of a toy process:
/// per-cell marginals given the decoded frames.
#[derive(Clone, Debug)]
pub struct ExactToyDenoiser {
    dist: ToyDistribution,
}

impl ExactToyDenoiser {
    pub fn new(dist: ToyDistribution) -> Result<Self> {
        dist.require_enumerable()?;
        Ok(Self { dist })
    }
}

impl Denoiser for ExactToyDenoiser {
    fn bins(&self) -> usize {
        self.dist.bins
    }

    fn levels(&self) -> usize {
        self.dist.levels
    }

    fn head(&self) -> HeadKind {
        HeadKind::Categorical
    }

    fn predict(
        &self,
        context: &SymbolGrid,
        mu: &RealGrid<f64>,
        decoded: &[bool],
    ) -> Result<ModelOutput> {
        let d = &self.dist;
        if context.bins() != d.bins
            || context.frames() != d.frames
            || mu.frames() != d.frames
            || decoded.len() != d.frames
        {
            return Err(Error::Shape {
                op: "ExactToyDenoiser::predict",
                left: vec![d.bins, d.frames],
                right: vec![context.bins(), context.frames()],
            });
        }
        let observed: Vec<Option<u32>> = (0..d.bins * d.frames)
            .map(|i| decoded[i % d.frames].then(|| context.data()[i]))
            .collect();
        let marg = d.exact_marginals(&observed)?;
        let mut logits = Vec::with_capacity(d.frames * d.bins * d.levels);
        for t in 0..d.frames {
            for b in 0..d.bins {
                logits.extend(marg[b * d.frames + t].iter().map(|&p| p.max(1e-300).ln()));
            }
        }
        ModelOutput::categorical(d.frames, d.bins, d.levels, logits)
    }
}
