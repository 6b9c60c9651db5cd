use rand_distr::{Distribution, Normal};

use super::{Denoiser, HeadKind, ModelOutput, NetworkConfig};
use crate::error::{Error, Result};
use crate::numerics::{Array, ParamSet, Tape, Var};
use crate::quantiser::{QuantiserSpec, RealGrid, SymbolGrid};
use crate::rng::Rng;

/// The bidirectional denoiser: per-frame embedding of (visible symbols, mask
/// flag, prior column), `layers` blocks of [residual tanh MLP + residual
/// full-sequence self-attention], and a per-bin output head.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    config: NetworkConfig,
    quantiser: QuantiserSpec<f64>,
    params: ParamSet<f64>,
}

/// Tape handles for one recorded forward pass.
#[derive(Clone, Debug)]
pub struct Recorded {
    /// One leaf per parameter, in [`ParamSet`] order.
    pub params: Vec<Var>,
    pub head: HeadVars,
    frames: usize,
    bins: usize,
    levels: usize,
}

#[derive(Clone, Debug)]
pub enum HeadVars {
    Categorical {
        logits: Var,
        log_probs: Var,
    },
    LogisticMixture {
        logits: Var,
        log_weights: Var,
        means: Var,
        log_scales: Var,
    },
}

fn sinusoid(frames: usize, width: usize) -> Array<f64> {
    let mut data = Vec::with_capacity(frames * width);
    for t in 0..frames {
        for j in 0..width {
            let rate = 10_000f64.powf((2 * (j / 2)) as f64 / width as f64);
            let x = t as f64 / rate;
            data.push(if j % 2 == 0 { x.sin() } else { x.cos() });
        }
    }
    Array::matrix(frames, width, data).expect("finite")
}

impl Network {
    /// Small random initialisation.
    pub fn init(
        config: NetworkConfig,
        quantiser: QuantiserSpec<f64>,
        rng: &mut Rng,
    ) -> Result<Self> {
        config.validate()?;
        if quantiser.levels() != config.levels {
            return Err(Error::Config(format!(
                "quantiser has {} levels but network expects {}",
                quantiser.levels(),
                config.levels
            )));
        }
        let w = config.width;
        let mut params = ParamSet::new();
        let gauss = |rows: usize, cols: usize, std: f64, rng: &mut Rng| {
            let normal = Normal::new(0.0, std).expect("valid std");
            let data = (0..rows * cols).map(|_| normal.sample(rng)).collect();
            Array::matrix(rows, cols, data).expect("finite")
        };
        let fan = |n: usize| 1.0 / (n as f64).sqrt();

        let d_in = config.input_width();
        params.push("embed.w", gauss(d_in, w, fan(2 * config.bins + 1), rng));
        params.push("embed.b", Array::zeros(&[w]));
        for l in 0..config.layers {
            params.push(format!("layer{l}.mlp.w1"), gauss(w, w, fan(w), rng));
            params.push(format!("layer{l}.mlp.b1"), Array::zeros(&[w]));
            params.push(format!("layer{l}.mlp.w2"), gauss(w, w, 0.5 * fan(w), rng));
            params.push(format!("layer{l}.mlp.b2"), Array::zeros(&[w]));
            for name in ["q", "k", "v"] {
                params.push(format!("layer{l}.attn.{name}"), gauss(w, w, fan(w), rng));
            }
            params.push(format!("layer{l}.attn.o"), gauss(w, w, 0.5 * fan(w), rng));
        }
        let per_bin = config.head_width();
        params.push("head.w", gauss(w, config.bins * per_bin, 0.1 * fan(w), rng));
        let mut bias = vec![0.0; config.bins * per_bin];
        if let HeadKind::LogisticMixture { components } = config.head {
            let spread = ((config.levels - 1) as f64 / 4.0).max(0.25).ln();
            for b in 0..config.bins {
                for c in 0..components {
                    // spread initial means over the level range
                    let frac = (c as f64 + 0.5) / components as f64;
                    bias[b * per_bin + components + c] = (frac / (1.0 - frac)).ln();
                    bias[b * per_bin + 2 * components + c] = spread;
                }
            }
        }
        params.push("head.b", Array::vector(bias)?);
        Ok(Self {
            config,
            quantiser,
            params,
        })
    }

    /// Rebuild from stored parameters, checking every shape against `config`.
    pub fn from_parts(
        config: NetworkConfig,
        quantiser: QuantiserSpec<f64>,
        params: ParamSet<f64>,
    ) -> Result<Self> {
        let template = Self::init(config, quantiser, &mut crate::rng::seeded(0))?;
        let names: Vec<&str> = template.params.names().collect();
        let got: Vec<&str> = params.names().collect();
        if names != got {
            return Err(Error::Format(format!(
                "parameter names {got:?} do not match config (expected {names:?})"
            )));
        }
        for ((name, a), b) in template.params.iter().zip(params.arrays()) {
            if a.shape() != b.shape() {
                return Err(Error::Format(format!(
                    "parameter `{name}` has shape {:?}, config needs {:?}",
                    b.shape(),
                    a.shape()
                )));
            }
        }
        Ok(Self {
            config,
            quantiser,
            params,
        })
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn quantiser(&self) -> &QuantiserSpec<f64> {
        &self.quantiser
    }

    pub fn params(&self) -> &ParamSet<f64> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet<f64> {
        &mut self.params
    }

    fn check_inputs(
        &self,
        context: &SymbolGrid,
        mu: &RealGrid<f64>,
        decoded: &[bool],
    ) -> Result<()> {
        let (bins, frames) = (context.bins(), context.frames());
        if bins != self.config.bins
            || mu.bins() != bins
            || mu.frames() != frames
            || decoded.len() != frames
        {
            return Err(Error::Shape {
                op: "network forward",
                left: vec![self.config.bins, frames],
                right: vec![context.bins(), mu.bins(), mu.frames(), decoded.len()],
            });
        }
        if frames == 0 {
            return Err(Error::InvalidArgument("empty sequence".into()));
        }
        context.check_levels(self.config.levels)
    }

    /// Per-frame input features. Undecoded frames contribute only their prior
    /// column, whatever symbol they hold.
    fn features(&self, context: &SymbolGrid, mu: &RealGrid<f64>, decoded: &[bool]) -> Array<f64> {
        let (bins, levels) = (self.config.bins, self.config.levels);
        let frames = context.frames();
        let d_in = self.config.input_width();
        let (a, b) = (self.quantiser.lower(), self.quantiser.upper());
        let mut x = vec![0.0; frames * d_in];
        for t in 0..frames {
            let row = &mut x[t * d_in..(t + 1) * d_in];
            if decoded[t] {
                for bin in 0..bins {
                    row[bin * levels + context.get(bin, t) as usize] = 1.0;
                }
                row[bins * levels] = 1.0;
            }
            for bin in 0..bins {
                row[bins * levels + 1 + bin] = 2.0 * (mu.get(bin, t) - a) / (b - a) - 1.0;
            }
        }
        Array::from_parts(vec![frames, d_in], x)
    }

    /// Record a forward pass on `tape`.
    pub fn record(
        &self,
        tape: &mut Tape<f64>,
        context: &SymbolGrid,
        mu: &RealGrid<f64>,
        decoded: &[bool],
    ) -> Result<Recorded> {
        self.check_inputs(context, mu, decoded)?;
        let frames = context.frames();
        let cfg = &self.config;
        let w = cfg.width;
        let params: Vec<Var> = self.params.arrays().map(|a| tape.leaf(a.clone())).collect();
        let mut p = params.iter().copied();
        let mut next = || p.next().expect("parameter layout");

        let x = tape.leaf(self.features(context, mu, decoded));
        let (ew, eb) = (next(), next());
        let xw = tape.matmul(x, ew)?;
        let mut h = tape.add_row(xw, eb)?;
        if cfg.positional {
            let pe = tape.leaf(sinusoid(frames, w));
            h = tape.add(h, pe)?;
        }
        let inv_sqrt = 1.0 / (w as f64).sqrt();
        for _ in 0..cfg.layers {
            let (w1, b1, w2, b2) = (next(), next(), next(), next());
            let (wq, wk, wv, wo) = (next(), next(), next(), next());

            let u = tape.matmul(h, w1)?;
            let u = tape.add_row(u, b1)?;
            let u = tape.tanh(u)?;
            let u = tape.matmul(u, w2)?;
            let u = tape.add_row(u, b2)?;
            h = tape.add(h, u)?;

            let q = tape.matmul(h, wq)?;
            let k = tape.matmul(h, wk)?;
            let v = tape.matmul(h, wv)?;
            let kt = tape.transpose(k)?;
            let s = tape.matmul(q, kt)?;
            let s = tape.scale(s, inv_sqrt)?;
            let a = tape.softmax_last(s)?;
            let av = tape.matmul(a, v)?;
            let o = tape.matmul(av, wo)?;
            h = tape.add(h, o)?;
        }
        let (hw, hb) = (next(), next());
        let out = tape.matmul(h, hw)?;
        let out = tape.add_row(out, hb)?;
        let rows = frames * cfg.bins;
        let out = tape.reshape(out, &[rows, cfg.head_width()])?;
        let head = match cfg.head {
            HeadKind::Categorical => {
                let log_probs = tape.log_softmax_last(out)?;
                HeadVars::Categorical {
                    logits: out,
                    log_probs,
                }
            }
            HeadKind::LogisticMixture { components: m } => {
                let logits = tape.slice_last(out, 0, m)?;
                let raw_means = tape.slice_last(out, m, m)?;
                let log_scales = tape.slice_last(out, 2 * m, m)?;
                let log_weights = tape.log_softmax_last(logits)?;
                let unit = tape.sigmoid(raw_means)?;
                let means = tape.scale(unit, (cfg.levels - 1) as f64)?;
                HeadVars::LogisticMixture {
                    logits,
                    log_weights,
                    means,
                    log_scales,
                }
            }
        };
        Ok(Recorded {
            params,
            head,
            frames,
            bins: cfg.bins,
            levels: cfg.levels,
        })
    }

    /// Evaluate without keeping the tape.
    pub fn forward(
        &self,
        context: &SymbolGrid,
        mu: &RealGrid<f64>,
        decoded: &[bool],
    ) -> Result<ModelOutput> {
        let mut tape = Tape::new();
        let rec = self.record(&mut tape, context, mu, decoded)?;
        rec.output(&tape)
    }
}

impl Recorded {
    pub fn output(&self, tape: &Tape<f64>) -> Result<ModelOutput> {
        let v = |x: Var| tape.value(x).data().to_vec();
        match &self.head {
            HeadVars::Categorical { logits, .. } => {
                ModelOutput::categorical(self.frames, self.bins, self.levels, v(*logits))
            }
            HeadVars::LogisticMixture {
                logits,
                means,
                log_scales,
                ..
            } => {
                let m = tape.value(*logits).shape()[1];
                ModelOutput::mixture(
                    self.frames,
                    self.bins,
                    self.levels,
                    m,
                    v(*logits),
                    v(*means),
                    v(*log_scales),
                )
            }
        }
    }

    /// Log-probability of each frame of `target` (length `frames`).
    pub fn frame_log_probs(&self, tape: &mut Tape<f64>, target: &SymbolGrid) -> Result<Var> {
        if target.bins() != self.bins || target.frames() != self.frames {
            return Err(Error::Shape {
                op: "frame_log_probs",
                left: vec![self.bins, self.frames],
                right: vec![target.bins(), target.frames()],
            });
        }
        target.check_levels(self.levels)?;
        let mut idx = Vec::with_capacity(self.frames * self.bins);
        for t in 0..self.frames {
            for b in 0..self.bins {
                idx.push(target.get(b, t) as usize);
            }
        }
        let cells = match &self.head {
            HeadVars::Categorical { log_probs, .. } => tape.gather_last(*log_probs, idx)?,
            HeadVars::LogisticMixture {
                log_weights,
                means,
                log_scales,
                ..
            } => {
                let lp = tape.discretized_logistic(*means, *log_scales, idx, self.levels)?;
                let joint = tape.add(*log_weights, lp)?;
                tape.logsumexp_last(joint)?
            }
        };
        let grid = tape.reshape(cells, &[self.frames, self.bins])?;
        tape.sum_last(grid)
    }
}

impl Denoiser for Network {
    fn bins(&self) -> usize {
        self.config.bins
    }

    fn levels(&self) -> usize {
        self.config.levels
    }

    fn head(&self) -> HeadKind {
        self.config.head
    }

    fn predict(
        &self,
        context: &SymbolGrid,
        mu: &RealGrid<f64>,
        decoded: &[bool],
    ) -> Result<ModelOutput> {
        self.forward(context, mu, decoded)
    }
}
