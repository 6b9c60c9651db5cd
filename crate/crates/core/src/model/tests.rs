use super::*;
use crate::numerics::Tape;
use crate::quantiser::QuantiserSpec;
use crate::rng::seeded;
use rand::Rng as _;

fn net(bins: usize, levels: usize, head: HeadKind, positional: bool, seed: u64) -> Network {
    let config = NetworkConfig {
        bins,
        levels,
        width: 8,
        layers: 2,
        head,
        positional,
    };
    let q = QuantiserSpec::new(0.0, 1.0, levels).unwrap();
    Network::init(config, q, &mut seeded(seed)).unwrap()
}

fn random_inputs(
    bins: usize,
    frames: usize,
    levels: usize,
    seed: u64,
) -> (SymbolGrid, RealGrid<f64>, Vec<bool>) {
    let mut rng = seeded(seed);
    let sym = (0..bins * frames)
        .map(|_| rng.random_range(0..levels as u32))
        .collect();
    let mu = (0..bins * frames).map(|_| rng.random::<f64>()).collect();
    let mask = (0..frames).map(|_| rng.random::<bool>()).collect();
    (
        SymbolGrid::new(bins, frames, sym).unwrap(),
        RealGrid::new(bins, frames, mu).unwrap(),
        mask,
    )
}

const MIX: HeadKind = HeadKind::LogisticMixture { components: 3 };

#[test]
fn forward_is_deterministic() {
    let n = net(2, 4, HeadKind::Categorical, true, 1);
    let ctx = SymbolGrid::zeros(2, 5);
    let mu = RealGrid::filled(2, 5, 0.3);
    let m = vec![false; 5];
    assert_eq!(
        n.forward(&ctx, &mu, &m).unwrap(),
        n.forward(&ctx, &mu, &m).unwrap()
    );
}

#[test]
fn masked_symbols_do_not_influence_output() {
    for head in [HeadKind::Categorical, MIX] {
        let n = net(2, 4, head, true, 2);
        let (ctx, mu, mask) = random_inputs(2, 6, 4, 3);
        let base = n.forward(&ctx, &mu, &mask).unwrap();
        let mut other = ctx.clone();
        for t in (0..6).filter(|&t| !mask[t]) {
            other.set(0, t, 3 - ctx.get(0, t));
            other.set(1, t, (ctx.get(1, t) + 1) % 4);
        }
        assert_eq!(base, n.forward(&other, &mu, &mask).unwrap());
    }
}

#[test]
fn permutation_equivariance_without_positions() {
    let n = net(2, 3, HeadKind::Categorical, false, 4);
    let (ctx, mu, mask) = random_inputs(2, 5, 3, 5);
    let perm = [3usize, 0, 4, 1, 2];
    let mut pctx = SymbolGrid::zeros(2, 5);
    let mut pmu = RealGrid::filled(2, 5, 0.0);
    let mut pmask = vec![false; 5];
    for (new, &old) in perm.iter().enumerate() {
        for b in 0..2 {
            pctx.set(b, new, ctx.get(b, old));
            pmu.set(b, new, mu.get(b, old));
        }
        pmask[new] = mask[old];
    }
    let out = n.forward(&ctx, &mu, &mask).unwrap();
    let pout = n.forward(&pctx, &pmu, &pmask).unwrap();
    for (new, &old) in perm.iter().enumerate() {
        for b in 0..2 {
            let a = out.level_log_probs(old, b);
            let p = pout.level_log_probs(new, b);
            for (x, y) in a.iter().zip(&p) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn untrained_categorical_is_near_uniform() {
    for levels in [2, 3, 10, 100] {
        let n = net(4, levels, HeadKind::Categorical, true, 6);
        let (ctx, mu, mask) = random_inputs(4, 8, levels, 7);
        let out = n.forward(&ctx, &mu, &mask).unwrap();
        for t in 0..8 {
            for b in 0..4 {
                let h: f64 = out
                    .level_log_probs(t, b)
                    .iter()
                    .map(|&l| -l.exp() * l)
                    .sum();
                let max = (levels as f64).ln();
                assert!(h > 0.9 * max, "entropy {h} vs {max}");
            }
        }
    }
}

#[test]
fn level_masses_normalise() {
    for head in [HeadKind::Categorical, MIX] {
        let n = net(2, 5, head, true, 8);
        let (ctx, mu, mask) = random_inputs(2, 4, 5, 9);
        let out = n.forward(&ctx, &mu, &mask).unwrap();
        for t in 0..4 {
            for b in 0..2 {
                let total: f64 = out.level_log_probs(t, b).iter().map(|l| l.exp()).sum();
                assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn tape_log_prob_agrees_with_output_log_prob() {
    for head in [HeadKind::Categorical, MIX] {
        let n = net(3, 4, head, true, 10);
        let (ctx, mu, mask) = random_inputs(3, 5, 4, 11);
        let (target, _, _) = random_inputs(3, 5, 4, 12);
        let mut tape = Tape::new();
        let rec = n.record(&mut tape, &ctx, &mu, &mask).unwrap();
        let lp = rec.frame_log_probs(&mut tape, &target).unwrap();
        let out = rec.output(&tape).unwrap();
        for t in 0..5 {
            let want = out.frame_log_prob(&target, t).unwrap();
            assert!((tape.value(lp).data()[t] - want).abs() < 1e-12);
        }
    }
}

/// Mean log-probability gradient against central differences.
#[test]
fn log_prob_gradient_matches_finite_differences() {
    for head in [HeadKind::Categorical, MIX] {
        let n = net(2, 4, head, true, 13);
        let (ctx, mu, mask) = random_inputs(2, 4, 4, 14);
        let (target, _, _) = random_inputs(2, 4, 4, 15);
        let objective = |n: &Network| -> f64 {
            let out = n.forward(&ctx, &mu, &mask).unwrap();
            out.log_prob(&target).unwrap().iter().sum::<f64>() / 8.0
        };
        let mut tape = Tape::new();
        let rec = n.record(&mut tape, &ctx, &mu, &mask).unwrap();
        let lp = rec.frame_log_probs(&mut tape, &target).unwrap();
        let total = tape.sum(lp);
        let loss = tape.scale(total, 1.0 / 8.0).unwrap();
        let grads = tape.backward(loss).unwrap();
        let mut rng = seeded(16);
        let h = 1e-5;
        for (pi, &var) in rec.params.iter().enumerate() {
            let g = grads.wrt(var);
            for _ in 0..3 {
                let j = rng.random_range(0..g.len());
                let mut plus = n.clone();
                let mut minus = n.clone();
                let (_, a) = plus.params_mut().by_index_mut(pi);
                a.data_mut()[j] += h;
                let (_, a) = minus.params_mut().by_index_mut(pi);
                a.data_mut()[j] -= h;
                let fd = (objective(&plus) - objective(&minus)) / (2.0 * h);
                let an = g.data()[j];
                let rel = (fd - an).abs() / fd.abs().max(an.abs()).max(1e-6);
                assert!(
                    rel < 1e-4,
                    "{head:?} param {pi}[{j}]: fd {fd} analytic {an}"
                );
            }
        }
    }
}

#[test]
fn gumbel_max_matches_softmax() {
    let logits = vec![0.5, -1.0, 1.5, 0.0];
    let out = ModelOutput::categorical(1, 1, 4, logits.clone()).unwrap();
    let temps = Temperatures::new(1.0, 1.0).unwrap();
    let mut rng = seeded(17);
    let n = 100_000;
    let mut counts = [0usize; 4];
    for _ in 0..n {
        counts[out.sample_cell(0, 0, temps, &mut rng) as usize] += 1;
    }
    let lse = crate::numerics::logsumexp(&logits);
    let tv: f64 = counts
        .iter()
        .zip(&logits)
        .map(|(&c, &l)| (c as f64 / n as f64 - (l - lse).exp()).abs())
        .sum::<f64>()
        / 2.0;
    assert!(tv < 0.01, "tv {tv}");
}

#[test]
fn bins_are_sampled_independently() {
    let out = ModelOutput::mixture(
        1,
        2,
        8,
        2,
        vec![0.0, 0.3, -0.2, 0.1],
        vec![2.0, 5.0, 1.0, 6.0],
        vec![0.0, 0.2, -0.3, 0.4],
    )
    .unwrap();
    let temps = Temperatures::new(1.0, 1.0).unwrap();
    let mut rng = seeded(18);
    let n = 40_000;
    let draws: Vec<(f64, f64)> = (0..n)
        .map(|_| {
            let g = out.sample_head(temps, &mut rng);
            (g.get(0, 0) as f64, g.get(1, 0) as f64)
        })
        .collect();
    let (ma, mb) = draws
        .iter()
        .fold((0.0, 0.0), |(a, b), &(x, y)| (a + x, b + y));
    let (ma, mb) = (ma / n as f64, mb / n as f64);
    let cov = draws.iter().map(|&(x, y)| (x - ma) * (y - mb)).sum::<f64>() / n as f64;
    let va = draws.iter().map(|&(x, _)| (x - ma).powi(2)).sum::<f64>() / n as f64;
    let vb = draws.iter().map(|&(_, y)| (y - mb).powi(2)).sum::<f64>() / n as f64;
    // correlation standard error ≈ 1/√n
    assert!((cov / (va * vb).sqrt()).abs() < 4.0 / (n as f64).sqrt());
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    for head in [HeadKind::Categorical, MIX] {
        let n = net(3, 7, head, false, 19);
        let ck = Checkpoint {
            network: n,
            seed: 42,
        };
        let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
        assert_eq!(back, ck);
        for (a, b) in ck
            .network
            .params()
            .arrays()
            .zip(back.network.params().arrays())
        {
            let bits =
                |x: &crate::Array64| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }
}

#[test]
fn checkpoint_errors_are_structured() {
    let ck = Checkpoint {
        network: net(1, 3, HeadKind::Categorical, true, 20),
        seed: 1,
    };
    let bytes = ck.to_bytes();
    for cut in [0, 5, 12, 40, bytes.len() - 1] {
        assert!(
            matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Format(_))),
            "cut {cut}"
        );
    }
    let mut wrong = bytes.clone();
    wrong[8] = 99;
    assert!(matches!(
        Checkpoint::from_bytes(&wrong),
        Err(Error::Version { found: 99, .. })
    ));
    let mut bad_magic = bytes;
    bad_magic[0] = b'X';
    assert!(matches!(
        Checkpoint::from_bytes(&bad_magic),
        Err(Error::Format(_))
    ));
}

#[test]
fn shape_mismatch_is_an_error() {
    let n = net(2, 3, HeadKind::Categorical, true, 21);
    let ctx = SymbolGrid::zeros(3, 4);
    let mu = RealGrid::filled(3, 4, 0.0);
    assert!(matches!(
        n.forward(&ctx, &mu, &[false; 4]),
        Err(Error::Shape { .. })
    ));
}
