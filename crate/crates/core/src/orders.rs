//! Decoding orders: permutations of frame positions.
//!
//! Positions are 0-based inside the crate. Serialised orders (CSV, JSON)
//! are 1-based, matching the usual `σ(t)` notation in run logs.

use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::error::{invalid, Error, Result};
use crate::rng::Rng;

/// Where an order came from.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Provenance {
    Uniform,
    LeftToRight,
    RightToLeft,
    Beta(f64),
    Adaptive,
    Given,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::Uniform => write!(f, "uniform"),
            Provenance::LeftToRight => write!(f, "l2r"),
            Provenance::RightToLeft => write!(f, "r2l"),
            Provenance::Beta(b) => write!(f, "beta({b})"),
            Provenance::Adaptive => write!(f, "adaptive"),
            Provenance::Given => write!(f, "given"),
        }
    }
}

/// A permutation mapping decoding step `t` to the position decoded at it.
#[derive(Clone, Debug, PartialEq)]
pub struct Order {
    perm: Vec<usize>,
    provenance: Provenance,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    LeftToRight,
    RightToLeft,
}

/// Logarithm used in the `β · T · log T` swap count.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum SwapLog {
    #[default]
    Natural,
    Base2,
}

impl Order {
    /// Validate that `perm` is a bijection on `0..perm.len()`.
    pub fn new(perm: Vec<usize>, provenance: Provenance) -> Result<Self> {
        if !is_permutation(&perm) {
            return Err(invalid(format!("not a permutation: {perm:?}")));
        }
        Ok(Self { perm, provenance })
    }

    pub fn from_one_based(perm: &[usize], provenance: Provenance) -> Result<Self> {
        if perm.contains(&0) {
            return Err(invalid("1-based order contains 0"));
        }
        Self::new(perm.iter().map(|&p| p - 1).collect(), provenance)
    }

    pub fn len(&self) -> usize {
        self.perm.len()
    }

    pub fn is_empty(&self) -> bool {
        self.perm.is_empty()
    }

    pub fn positions(&self) -> &[usize] {
        &self.perm
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn one_based(&self) -> Vec<usize> {
        self.perm.iter().map(|p| p + 1).collect()
    }

    /// Step (0-based) at which each position is decoded.
    pub fn ranks(&self) -> Vec<usize> {
        let mut r = vec![0; self.perm.len()];
        for (t, &p) in self.perm.iter().enumerate() {
            r[p] = t;
        }
        r
    }

    /// Mask of positions decoded strictly before 0-based step `step`.
    pub fn decoded_before(&self, step: usize) -> Vec<bool> {
        let mut m = vec![false; self.perm.len()];
        for &p in &self.perm[..step.min(self.perm.len())] {
            m[p] = true;
        }
        m
    }

    pub fn to_csv_field(&self) -> String {
        self.one_based()
            .iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

pub fn is_permutation(perm: &[usize]) -> bool {
    let mut seen = vec![false; perm.len()];
    perm.iter()
        .all(|&p| p < perm.len() && !std::mem::replace(&mut seen[p], true))
}

fn require_len(len: usize) -> Result<()> {
    if len == 0 {
        Err(invalid("order length must be at least 1"))
    } else {
        Ok(())
    }
}

/// Uniform permutation via Fisher–Yates.
pub fn uniform_order(len: usize, rng: &mut Rng) -> Result<Order> {
    require_len(len)?;
    let mut perm: Vec<usize> = (0..len).collect();
    perm.shuffle(rng);
    Ok(Order {
        perm,
        provenance: Provenance::Uniform,
    })
}

pub fn fixed_order(len: usize, direction: Direction) -> Result<Order> {
    require_len(len)?;
    Ok(match direction {
        Direction::LeftToRight => Order {
            perm: (0..len).collect(),
            provenance: Provenance::LeftToRight,
        },
        Direction::RightToLeft => Order {
            perm: (0..len).rev().collect(),
            provenance: Provenance::RightToLeft,
        },
    })
}

/// `round(β · T · log T)`, ties away from zero.
pub fn swap_count(len: usize, beta: f64, log: SwapLog) -> usize {
    let t = len as f64;
    let l = match log {
        SwapLog::Natural => t.ln(),
        SwapLog::Base2 => t.log2(),
    };
    (beta * t * l).round() as usize
}

/// Identity order perturbed by random transpositions. Both endpoints of each
/// swap are drawn uniformly with replacement, so a swap may be a no-op.
pub fn beta_swapped_order(len: usize, beta: f64, log: SwapLog, rng: &mut Rng) -> Result<Order> {
    require_len(len)?;
    if !(0.0..=1.0).contains(&beta) {
        return Err(invalid(format!("beta must lie in [0, 1], got {beta}")));
    }
    let mut perm: Vec<usize> = (0..len).collect();
    for _ in 0..swap_count(len, beta, log) {
        let i = rng.random_range(0..len);
        let j = rng.random_range(0..len);
        perm.swap(i, j);
    }
    Ok(Order {
        perm,
        provenance: Provenance::Beta(beta),
    })
}

/// Number of position pairs decoded in opposite relative order.
pub fn kendall_tau_distance(a: &Order, b: &Order) -> Result<usize> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op: "kendall_tau_distance",
            left: vec![a.len()],
            right: vec![b.len()],
        });
    }
    // Relabel positions by their rank in `a`; inversions of `b` under that
    // relabelling are the discordant pairs.
    let rank_a = a.ranks();
    let mut seq: Vec<usize> = b.perm.iter().map(|&p| rank_a[p]).collect();
    let mut buf = vec![0; seq.len()];
    Ok(count_inversions(&mut seq, &mut buf))
}

fn count_inversions(xs: &mut [usize], buf: &mut [usize]) -> usize {
    let n = xs.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut count = {
        let (l, r) = xs.split_at_mut(mid);
        count_inversions(l, &mut buf[..mid]) + count_inversions(r, &mut buf[mid..])
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if xs[i] <= xs[j] {
            buf[k] = xs[i];
            i += 1;
        } else {
            buf[k] = xs[j];
            count += mid - i;
            j += 1;
        }
        k += 1;
    }
    buf[k..k + mid - i].copy_from_slice(&xs[i..mid]);
    k += mid - i;
    buf[k..k + n - j].copy_from_slice(&xs[j..n]);
    xs.copy_from_slice(&buf[..n]);
    count
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    fn brute_force_tau(a: &Order, b: &Order) -> usize {
        let (ra, rb) = (a.ranks(), b.ranks());
        let n = a.len();
        let mut c = 0;
        for i in 0..n {
            for j in i + 1..n {
                if (ra[i] < ra[j]) != (rb[i] < rb[j]) {
                    c += 1;
                }
            }
        }
        c
    }

    #[test]
    fn single_position() {
        let mut rng = seeded(0);
        assert_eq!(uniform_order(1, &mut rng).unwrap().one_based(), vec![1]);
        assert_eq!(
            beta_swapped_order(1, 1.0, SwapLog::Natural, &mut rng)
                .unwrap()
                .one_based(),
            vec![1]
        );
        assert!(uniform_order(0, &mut rng).is_err());
    }

    #[test]
    fn fixed_orders() {
        let l = fixed_order(4, Direction::LeftToRight).unwrap();
        let r = fixed_order(4, Direction::RightToLeft).unwrap();
        assert_eq!(l.one_based(), vec![1, 2, 3, 4]);
        assert_eq!(r.one_based(), vec![4, 3, 2, 1]);
        let rr: Vec<usize> = r.positions().iter().map(|&p| r.positions()[p]).collect();
        assert_eq!(rr, l.positions());
    }

    #[test]
    fn uniform_is_seed_reproducible() {
        let a = uniform_order(10, &mut seeded(5)).unwrap();
        let b = uniform_order(10, &mut seeded(5)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn uniform_law_on_three() {
        let mut rng = seeded(99);
        let mut counts = std::collections::HashMap::new();
        let n = 60_000;
        for _ in 0..n {
            *counts
                .entry(uniform_order(3, &mut rng).unwrap().perm)
                .or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 6);
        for c in counts.values() {
            assert!((*c as f64 / n as f64 - 1.0 / 6.0).abs() < 0.01);
        }
    }

    #[test]
    fn zero_beta_is_identity() {
        let mut rng = seeded(1);
        for t in [1, 2, 7, 64, 500] {
            let o = beta_swapped_order(t, 0.0, SwapLog::Natural, &mut rng).unwrap();
            assert_eq!(o.positions(), (0..t).collect::<Vec<_>>().as_slice());
        }
    }

    #[test]
    fn swap_count_examples() {
        // 5 · ln 5 = 8.047
        assert_eq!(swap_count(5, 1.0, SwapLog::Natural), 8);
        // 5 · log2 5 = 11.61
        assert_eq!(swap_count(5, 1.0, SwapLog::Base2), 12);
        assert_eq!(swap_count(64, 0.001, SwapLog::Natural), 0);
    }

    #[test]
    fn kendall_examples() {
        let l = fixed_order(3, Direction::LeftToRight).unwrap();
        let r = fixed_order(3, Direction::RightToLeft).unwrap();
        assert_eq!(kendall_tau_distance(&l, &l).unwrap(), 0);
        assert_eq!(kendall_tau_distance(&l, &r).unwrap(), 3);
        let short = fixed_order(2, Direction::LeftToRight).unwrap();
        assert!(kendall_tau_distance(&l, &short).is_err());
    }

    #[test]
    fn invalid_permutation_rejected() {
        assert!(Order::new(vec![0, 0, 1], Provenance::Given).is_err());
        assert!(Order::from_one_based(&[1, 3, 2], Provenance::Given).is_ok());
    }

    proptest! {
        #[test]
        fn kendall_matches_brute_force(seed in any::<u64>(), t in 1usize..40) {
            let mut rng = seeded(seed);
            let a = uniform_order(t, &mut rng).unwrap();
            let b = uniform_order(t, &mut rng).unwrap();
            prop_assert_eq!(kendall_tau_distance(&a, &b).unwrap(), brute_force_tau(&a, &b));
        }

        #[test]
        fn beta_orders_are_permutations(seed in any::<u64>(), t in 1usize..100, beta in 0.0f64..=1.0) {
            let o = beta_swapped_order(t, beta, SwapLog::Natural, &mut seeded(seed)).unwrap();
            prop_assert!(is_permutation(o.positions()));
        }
    }
}
