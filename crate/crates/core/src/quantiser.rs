//! Linear scalar quantisation shared across frequency bins.
//!
//! A value in `[a, b]` maps to the nearest of `Q` evenly spaced levels.
//! Grids are stored bin-major: `n_f` rows of `T` frames.

use crate::error::{invalid, Error, Result};
use crate::numerics::Real;

/// `n_f × T` grid of real values (bin-major, row `i` is frequency bin `i`).
#[derive(Clone, Debug, PartialEq)]
pub struct RealGrid<T> {
    bins: usize,
    frames: usize,
    data: Vec<T>,
}

impl<T: Real> RealGrid<T> {
    pub fn new(bins: usize, frames: usize, data: Vec<T>) -> Result<Self> {
        if bins * frames != data.len() {
            return Err(Error::Shape {
                op: "RealGrid::new",
                left: vec![bins, frames],
                right: vec![data.len()],
            });
        }
        Ok(Self { bins, frames, data })
    }

    pub fn filled(bins: usize, frames: usize, value: T) -> Self {
        Self {
            bins,
            frames,
            data: vec![value; bins * frames],
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn get(&self, bin: usize, frame: usize) -> T {
        self.data[bin * self.frames + frame]
    }

    pub fn set(&mut self, bin: usize, frame: usize, value: T) {
        self.data[bin * self.frames + frame] = value;
    }

    /// All bins of one frame.
    pub fn frame(&self, frame: usize) -> Vec<T> {
        (0..self.bins).map(|b| self.get(b, frame)).collect()
    }

    pub fn min_max(&self) -> Option<(T, T)> {
        let mut it = self.data.iter().copied();
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), x| (lo.min(x), hi.max(x))))
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            bins: self.bins,
            frames: self.frames,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }
}

/// `n_f × T` grid of level indices in `0..Q`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SymbolGrid {
    bins: usize,
    frames: usize,
    data: Vec<u32>,
}

impl SymbolGrid {
    pub fn new(bins: usize, frames: usize, data: Vec<u32>) -> Result<Self> {
        if bins * frames != data.len() {
            return Err(Error::Shape {
                op: "SymbolGrid::new",
                left: vec![bins, frames],
                right: vec![data.len()],
            });
        }
        Ok(Self { bins, frames, data })
    }

    pub fn zeros(bins: usize, frames: usize) -> Self {
        Self {
            bins,
            frames,
            data: vec![0; bins * frames],
        }
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn get(&self, bin: usize, frame: usize) -> u32 {
        self.data[bin * self.frames + frame]
    }

    pub fn set(&mut self, bin: usize, frame: usize, value: u32) {
        self.data[bin * self.frames + frame] = value;
    }

    pub fn frame(&self, frame: usize) -> Vec<u32> {
        (0..self.bins).map(|b| self.get(b, frame)).collect()
    }

    pub fn set_frame(&mut self, frame: usize, values: &[u32]) {
        for (b, &v) in values.iter().enumerate() {
            self.set(b, frame, v);
        }
    }

    /// Copy with every frame where `keep[t]` is false reset to 0.
    pub fn masked(&self, keep: &[bool]) -> Self {
        let mut out = self.clone();
        for b in 0..self.bins {
            for (t, &k) in keep.iter().enumerate() {
                if !k {
                    out.set(b, t, 0);
                }
            }
        }
        out
    }

    pub fn check_levels(&self, levels: usize) -> Result<()> {
        match self.data.iter().find(|&&s| s as usize >= levels) {
            Some(&symbol) => Err(Error::SymbolOutOfRange { symbol, levels }),
            None => Ok(()),
        }
    }
}

/// Bounds `[a, b]` and level count `Q` of a linear quantiser.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantiserSpec<T> {
    lower: T,
    upper: T,
    levels: usize,
}

impl<T: Real> QuantiserSpec<T> {
    pub fn new(lower: T, upper: T, levels: usize) -> Result<Self> {
        if !(lower < upper) || !lower.is_finite() || !upper.is_finite() {
            return Err(invalid(format!(
                "quantiser needs a < b, got [{lower}, {upper}]"
            )));
        }
        if levels < 2 || levels > u32::MAX as usize {
            return Err(invalid(format!("quantiser needs Q >= 2, got {levels}")));
        }
        Ok(Self {
            lower,
            upper,
            levels,
        })
    }

    /// Bounds taken from the extremes of a set of grids.
    pub fn fit<'a>(
        grids: impl IntoIterator<Item = &'a RealGrid<T>>,
        levels: usize,
    ) -> Result<Self> {
        let (lo, hi) = grids
            .into_iter()
            .filter_map(RealGrid::min_max)
            .reduce(|(a, b), (c, d)| (a.min(c), b.max(d)))
            .ok_or_else(|| invalid("cannot fit quantiser bounds on empty data"))?;
        if lo < hi {
            Self::new(lo, hi, levels)
        } else {
            Self::new(lo, lo + T::one(), levels)
        }
    }

    pub fn lower(&self) -> T {
        self.lower
    }

    pub fn upper(&self) -> T {
        self.upper
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    /// Largest possible `|dequantise(quantise(y)) - clamp(y)|`: half a level.
    pub fn max_round_trip_error(&self) -> T {
        (self.upper - self.lower) / (T::lit(2.0) * self.top())
    }

    fn top(&self) -> T {
        T::from_usize(self.levels - 1).unwrap()
    }

    /// Level of one value; inputs outside `[a, b]` are clamped first.
    /// `round` resolves ties away from zero.
    pub fn quantise_value(&self, y: T) -> u32 {
        let y = y.max(self.lower).min(self.upper);
        let scaled = (y - self.lower) / (self.upper - self.lower) * self.top();
        let k = scaled.round().to_u32().unwrap_or(0);
        k.min(self.levels as u32 - 1)
    }

    pub fn dequantise_value(&self, s: u32) -> Result<T> {
        if s as usize >= self.levels {
            return Err(Error::SymbolOutOfRange {
                symbol: s,
                levels: self.levels,
            });
        }
        let frac = T::from_u32(s).unwrap() / self.top();
        Ok(self.lower + frac * (self.upper - self.lower))
    }

    pub fn quantise(&self, y: &RealGrid<T>) -> SymbolGrid {
        SymbolGrid {
            bins: y.bins,
            frames: y.frames,
            data: y.data.iter().map(|&v| self.quantise_value(v)).collect(),
        }
    }

    pub fn dequantise(&self, s: &SymbolGrid) -> Result<RealGrid<T>> {
        let data = s
            .data
            .iter()
            .map(|&v| self.dequantise_value(v))
            .collect::<Result<_>>()?;
        Ok(RealGrid {
            bins: s.bins,
            frames: s.frames,
            data,
        })
    }

    /// Quantise then dequantise.
    pub fn round_trip(&self, y: &RealGrid<T>) -> RealGrid<T> {
        self.dequantise(&self.quantise(y))
            .expect("quantise output is always in range")
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn spec(a: f64, b: f64, q: usize) -> QuantiserSpec<f64> {
        QuantiserSpec::new(a, b, q).unwrap()
    }

    #[test]
    fn endpoints_map_to_extreme_levels() {
        let s = spec(-3.0, 5.0, 7);
        assert_eq!(s.quantise_value(-3.0), 0);
        assert_eq!(s.quantise_value(5.0), 6);
        assert_eq!(s.dequantise_value(0).unwrap(), -3.0);
        assert_eq!(s.dequantise_value(6).unwrap(), 5.0);
    }

    #[test]
    fn one_bit_examples() {
        let s = spec(-1.0, 1.0, 2);
        // round(0.65 · 1) = 1
        assert_eq!(s.quantise_value(0.3), 1);
        assert_eq!(s.dequantise_value(1).unwrap(), 1.0);
    }

    #[test]
    fn midpoint_tie_rounds_away_from_zero() {
        // round(0.5 · 99) = round(49.5) = 50
        assert_eq!(spec(0.0, 1.0, 100).quantise_value(0.5), 50);
    }

    #[test]
    fn out_of_range_values_are_clamped() {
        let s = spec(0.0, 1.0, 10);
        assert_eq!(s.quantise_value(-4.0), 0);
        assert_eq!(s.quantise_value(17.0), 9);
    }

    #[test]
    fn invalid_specs_and_symbols() {
        assert!(QuantiserSpec::new(1.0, 1.0, 4).is_err());
        assert!(QuantiserSpec::new(0.0, 1.0, 1).is_err());
        assert!(matches!(
            spec(0.0, 1.0, 4).dequantise_value(4),
            Err(Error::SymbolOutOfRange {
                symbol: 4,
                levels: 4
            })
        ));
    }

    #[test]
    fn round_trip_bound_holds_and_is_tight() {
        let mut rng = crate::rng::seeded(11);
        for &q in &[2usize, 10, 100] {
            let s = spec(-2.0, 3.0, q);
            let bound = s.max_round_trip_error();
            let mut worst: f64 = 0.0;
            for _ in 0..10_000 {
                let y: f64 = rng.random_range(-2.5..3.5);
                let err =
                    (s.dequantise_value(s.quantise_value(y)).unwrap() - y.clamp(-2.0, 3.0)).abs();
                assert!(err <= bound + 1e-12);
                worst = worst.max(err);
            }
            assert!(worst >= 0.99 * bound, "q={q}: {worst} vs {bound}");
        }
    }

    #[test]
    fn fit_uses_extremes() {
        let g = RealGrid::new(1, 3, vec![-0.5, 2.0, 1.0]).unwrap();
        let s = QuantiserSpec::fit([&g], 8).unwrap();
        assert_eq!((s.lower(), s.upper()), (-0.5, 2.0));
    }

    proptest! {
        #[test]
        fn quantise_is_monotone(a in -10.0f64..10.0, w in 0.1f64..10.0, q in 2usize..200,
                                y1 in -20.0f64..20.0, y2 in -20.0f64..20.0) {
            let s = spec(a, a + w, q);
            let (lo, hi) = if y1 <= y2 { (y1, y2) } else { (y2, y1) };
            prop_assert!(s.quantise_value(lo) <= s.quantise_value(hi));
        }

        #[test]
        fn quantise_inverts_dequantise(a in -10.0f64..10.0, w in 0.1f64..10.0, q in 2usize..300,
                                       frac in 0.0f64..1.0) {
            let s = spec(a, a + w, q);
            let k = ((q - 1) as f64 * frac).floor() as u32;
            prop_assert_eq!(s.quantise_value(s.dequantise_value(k).unwrap()), k);
        }
    }
}
