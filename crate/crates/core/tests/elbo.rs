//! The order-agnostic loss, averaged exactly over steps and orders, equals
//! the negated mean chain-rule log-likelihood over orders; the subset route
//! gives the same number. Also checked against the exact toy denoiser, whose
//! chain rule recovers the true log-probability under every order.

use proptest::prelude::*;

use orderlab::datagen::{toy_quantiser, ExactToyDenoiser, ToyDistribution, ToyKind};
use orderlab::metrics::chain_rule_loglik;
use orderlab::model::{HeadKind, Network, NetworkConfig};
use orderlab::objective::{enumerate_training_losses, exact_elbo};
use orderlab::orders::{Order, Provenance};
use orderlab::quantiser::{RealGrid, SymbolGrid};
use orderlab::rng::seeded;

fn all_orders(n: usize) -> Vec<Order> {
    fn go(prefix: &mut Vec<usize>, n: usize, out: &mut Vec<Order>) {
        if prefix.len() == n {
            out.push(Order::new(prefix.clone(), Provenance::Given).unwrap());
            return;
        }
        for k in 0..n {
            if !prefix.contains(&k) {
                prefix.push(k);
                go(prefix, n, out);
                prefix.pop();
            }
        }
    }
    let mut out = Vec::new();
    go(&mut Vec::new(), n, &mut out);
    out
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn exact_average_matches_order_average(
        seed in any::<u64>(),
        frames in 1usize..=4,
        levels in 2usize..=3,
        bins in 1usize..=2,
        mixture in any::<bool>(),
        cells in proptest::collection::vec(0u32..3, 8),
        mu_values in proptest::collection::vec(-1.0f64..1.0, 8),
    ) {
        let head = if mixture { HeadKind::LogisticMixture { components: 2 } } else { HeadKind::Categorical };
        let cfg = NetworkConfig { bins, levels, width: 6, layers: 1, head, positional: true };
        let net = Network::init(cfg, toy_quantiser(levels).unwrap(), &mut seeded(seed)).unwrap();
        let data = cells[..bins * frames].iter().map(|&c| c % levels as u32).collect();
        let y = SymbolGrid::new(bins, frames, data).unwrap();
        let mu = RealGrid::new(bins, frames, mu_values[..bins * frames].to_vec()).unwrap();

        let orders = all_orders(frames);
        let mean_ll = orders
            .iter()
            .map(|o| chain_rule_loglik(&net, &y, &mu, o).unwrap())
            .sum::<f64>() / orders.len() as f64;
        let enumerated = enumerate_training_losses(&net, &y, &mu).unwrap();
        let elbo = exact_elbo(&net, &y, &mu).unwrap();
        prop_assert!((enumerated + mean_ll).abs() < 1e-9);
        prop_assert!((elbo - mean_ll).abs() < 1e-9);
    }
}

#[test]
fn exact_denoiser_elbo_is_the_log_probability() {
    let d = ToyDistribution::new(
        ToyKind::Markov {
            initial: vec![0.2, 0.5, 0.3],
            transition: vec![
                vec![0.6, 0.3, 0.1],
                vec![0.2, 0.2, 0.6],
                vec![0.3, 0.3, 0.4],
            ],
        },
        1,
        4,
    )
    .unwrap();
    let model = ExactToyDenoiser::new(d.clone()).unwrap();
    let mu = d.prior();
    for i in 0..d.outcome_count().unwrap() {
        let y = d.grid_from_index(i);
        let lp = d.prob(&y).unwrap().ln();
        for o in all_orders(4) {
            assert!((chain_rule_loglik(&model, &y, &mu, &o).unwrap() - lp).abs() < 1e-9);
        }
        assert!((exact_elbo(&model, &y, &mu).unwrap() - lp).abs() < 1e-9);
    }
}
