//! Order-agnostic training loss and its exact expectation.
//!
//! For a step `t` and order `σ`, the frames `σ(<t)` are visible and every
//! remaining frame is scored in parallel:
//!
//! `L = T / (T - t + 1) · Σ_{k ∈ σ(≥t)} -ln p(y_k | y_σ(<t))`
//!
//! Averaged over uniform `t` and `σ`, `-L` is the mean over orders of the
//! chain-rule log-likelihood, which lower-bounds `ln p(y)`.

use std::io::Write;

use rand::Rng as _;

use crate::datagen::Example;
use crate::error::{Error, Result};
use crate::model::{Denoiser, Network};
use crate::numerics::{AdamConfig, AdamState, Array, Tape};
use crate::orders::{self, Order, Provenance};
use crate::quantiser::{RealGrid, SymbolGrid};
use crate::rng::Rng;

/// Enumeration limit for [`exact_elbo`] and [`enumerate_training_losses`].
pub const MAX_EXACT_FRAMES: usize = 6;

/// One evaluation of the training loss.
#[derive(Clone, Debug)]
pub struct LossReport {
    pub loss: f64,
    /// 1-based step `t`.
    pub step: usize,
    pub order: Order,
    pub masked_count: usize,
    /// `ln p(y_k | visible)` for every frame `k`, including visible ones.
    pub frame_log_probs: Vec<f64>,
    /// Gradient per parameter, in the network's parameter order.
    pub gradients: Vec<Array<f64>>,
}

fn check_step(frames: usize, step: usize, order: &Order) -> Result<()> {
    if order.len() != frames {
        return Err(Error::Shape {
            op: "training loss",
            left: vec![frames],
            right: vec![order.len()],
        });
    }
    if step == 0 || step > frames {
        return Err(Error::InvalidArgument(format!(
            "step {step} outside 1..={frames}"
        )));
    }
    Ok(())
}

/// Loss and gradients for a fixed `(t, σ)`.
pub fn loss_at(
    net: &Network,
    y: &SymbolGrid,
    mu: &RealGrid<f64>,
    step: usize,
    order: &Order,
) -> Result<LossReport> {
    let frames = y.frames();
    check_step(frames, step, order)?;
    let visible = order.decoded_before(step - 1);
    let masked_count = frames - (step - 1);
    let weight = frames as f64 / masked_count as f64;

    let mut tape = Tape::new();
    let rec = net.record(&mut tape, &y.masked(&visible), mu, &visible)?;
    let lp = rec.frame_log_probs(&mut tape, y)?;
    let selector = visible
        .iter()
        .map(|&v| if v { 0.0 } else { -weight })
        .collect();
    let selector = tape.leaf(Array::vector(selector)?);
    let weighted = tape.mul(lp, selector)?;
    let loss = tape.sum(weighted);
    let grads = tape.backward(loss)?;

    Ok(LossReport {
        loss: tape.value(loss).data()[0],
        step,
        order: order.clone(),
        masked_count,
        frame_log_probs: tape.value(lp).data().to_vec(),
        gradients: rec.params.iter().map(|&p| grads.wrt(p)).collect(),
    })
}

/// Single-sample Monte Carlo loss: `t ~ U{1..T}`, `σ ~ U(S_T)`.
pub fn training_loss(
    net: &Network,
    y: &SymbolGrid,
    mu: &RealGrid<f64>,
    rng: &mut Rng,
) -> Result<LossReport> {
    let frames = y.frames();
    let step = rng.random_range(1..=frames.max(1));
    let order = orders::uniform_order(frames, rng)?;
    loss_at(net, y, mu, step, &order)
}

/// The loss for `(t, σ)` evaluated through any [`Denoiser`], without gradients.
pub fn estimand_at<D: Denoiser>(
    model: &D,
    y: &SymbolGrid,
    mu: &RealGrid<f64>,
    step: usize,
    order: &Order,
) -> Result<f64> {
    let frames = y.frames();
    check_step(frames, step, order)?;
    let visible = order.decoded_before(step - 1);
    let out = model.predict(&y.masked(&visible), mu, &visible)?;
    let mut total = 0.0;
    for k in (0..frames).filter(|&k| !visible[k]) {
        total -= out.frame_log_prob(y, k)?;
    }
    Ok(total * frames as f64 / (frames - step + 1) as f64)
}

fn for_each_permutation(n: usize, mut f: impl FnMut(&[usize]) -> Result<()>) -> Result<()> {
    // Heap's algorithm
    let mut perm: Vec<usize> = (0..n).collect();
    let mut c = vec![0; n];
    f(&perm)?;
    let mut i = 0;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            f(&perm)?;
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(())
}

fn require_small(frames: usize) -> Result<()> {
    if frames == 0 {
        return Err(Error::InvalidArgument("empty sequence".into()));
    }
    if frames > MAX_EXACT_FRAMES {
        return Err(Error::Infeasible(format!(
            "{frames} frames exceeds the enumeration limit of {MAX_EXACT_FRAMES}"
        )));
    }
    Ok(())
}

/// Mean of the training loss over every `(t, σ)` pair.
pub fn enumerate_training_losses<D: Denoiser>(
    model: &D,
    y: &SymbolGrid,
    mu: &RealGrid<f64>,
) -> Result<f64> {
    let frames = y.frames();
    require_small(frames)?;
    let mut total = 0.0;
    let mut count = 0usize;
    for_each_permutation(frames, |perm| {
        let order = Order::new(perm.to_vec(), Provenance::Given)?;
        for step in 1..=frames {
            total += estimand_at(model, y, mu, step, &order)?;
            count += 1;
        }
        Ok(())
    })?;
    Ok(total / count as f64)
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Exact ELBO (nats, `≤ 0` for a normalised model): the negated expectation of
/// the training loss. Enumerates visible subsets rather than orders, since the
/// loss depends on `σ` only through the set `σ(<t)`.
pub fn exact_elbo<D: Denoiser>(model: &D, y: &SymbolGrid, mu: &RealGrid<f64>) -> Result<f64> {
    let frames = y.frames();
    require_small(frames)?;
    let mut elbo = 0.0;
    for subset in 0u32..(1 << frames) {
        let visible: Vec<bool> = (0..frames).map(|k| subset >> k & 1 == 1).collect();
        let size = visible.iter().filter(|&&v| v).count();
        if size == frames {
            continue;
        }
        let out = model.predict(&y.masked(&visible), mu, &visible)?;
        let weight = 1.0 / ((frames - size) as f64 * binomial(frames, size));
        for k in (0..frames).filter(|&k| !visible[k]) {
            elbo += weight * out.frame_log_prob(y, k)?;
        }
    }
    Ok(elbo)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig<f64>,
    /// Learning rate decays linearly to this fraction of the initial value.
    pub final_lr_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 1000,
            batch_size: 8,
            adam: AdamConfig::default(),
            final_lr_fraction: 1.0,
        }
    }
}

/// One loss-trace row. `t` and `masked_count` belong to the first sequence
/// of the minibatch; `loss` is the minibatch mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub t: usize,
    pub masked_count: usize,
}

pub fn write_trace_csv(mut w: impl Write, rows: &[TraceRow]) -> std::io::Result<()> {
    writeln!(w, "step,loss,t,masked_count")?;
    for r in rows {
        writeln!(w, "{},{},{},{}", r.step, r.loss, r.t, r.masked_count)?;
    }
    Ok(())
}

/// Adam on single-sample losses over random minibatches. Each sequence gets
/// its own tape; gradients are summed in batch order.
pub fn train(
    mut net: Network,
    dataset: &[Example],
    config: &TrainConfig,
    rng: &mut Rng,
) -> Result<(Network, Vec<TraceRow>)> {
    if dataset.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be >= 1".into()));
    }
    let mut adam = AdamState::new(config.adam, net.params());
    let mut trace = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let mut grads: Option<Vec<Array<f64>>> = None;
        let mut loss_sum = 0.0;
        let mut first = None;
        for _ in 0..config.batch_size {
            let ex = &dataset[rng.random_range(0..dataset.len())];
            let rep = training_loss(&net, &ex.symbols, &ex.mu, rng)?;
            if !rep.loss.is_finite() {
                return Err(Error::Diverged {
                    step,
                    loss: rep.loss,
                });
            }
            loss_sum += rep.loss;
            first.get_or_insert((rep.step, rep.masked_count));
            match &mut grads {
                None => grads = Some(rep.gradients),
                Some(acc) => {
                    for (a, g) in acc.iter_mut().zip(&rep.gradients) {
                        a.add_assign(g)?;
                    }
                }
            }
        }
        let scale = 1.0 / config.batch_size as f64;
        let grads = grads
            .unwrap()
            .into_iter()
            .map(|g| g.scale(scale))
            .collect::<Result<Vec<_>>>()?;
        let progress = step as f64 / config.steps.max(1) as f64;
        let lr = config.adam.learning_rate * (1.0 - (1.0 - config.final_lr_fraction) * progress);
        adam.step_with_lr(net.params_mut(), &grads, lr)
            .map_err(|e| match e {
                Error::NonFiniteGradient(_) => Error::Diverged {
                    step,
                    loss: f64::NAN,
                },
                other => other,
            })?;
        let (t, masked_count) = first.unwrap();
        trace.push(TraceRow {
            step,
            loss: loss_sum * scale,
            t,
            masked_count,
        });
    }
    Ok((net, trace))
}
