use super::{Array, ParamSet, Real};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Real> Default for AdamConfig<T> {
    fn default() -> Self {
        Self {
            learning_rate: T::lit(1e-3),
            beta1: T::lit(0.9),
            beta2: T::lit(0.999),
            epsilon: T::lit(1e-8),
        }
    }
}

/// Bias-corrected Adam moments for one [`ParamSet`].
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig<T>,
    step: u64,
    first: Vec<Array<T>>,
    second: Vec<Array<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig<T>, params: &ParamSet<T>) -> Self {
        let zeros = || params.arrays().map(|a| Array::zeros(a.shape())).collect();
        Self {
            config,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update with the configured learning rate.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Array<T>]) -> Result<()> {
        let lr = self.config.learning_rate;
        self.step_with_lr(params, grads, lr)
    }

    pub fn step_with_lr(
        &mut self,
        params: &mut ParamSet<T>,
        grads: &[Array<T>],
        lr: T,
    ) -> Result<()> {
        if grads.len() != params.len() || grads.len() != self.first.len() {
            return Err(Error::Shape {
                op: "adam_step",
                left: vec![params.len()],
                right: vec![grads.len()],
            });
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            if g.data().iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteGradient(name.to_string()));
            }
        }

        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
            ..
        } = self.config;
        let t = self.step as i32;
        let c1 = T::one() - beta1.powi(t);
        let c2 = T::one() - beta2.powi(t);
        for (i, g) in grads.iter().enumerate() {
            let (_, p) = params.by_index_mut(i);
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
            for j in 0..pd.len() {
                let gj = g.data()[j];
                md[j] = beta1 * md[j] + (T::one() - beta1) * gj;
                vd[j] = beta2 * vd[j] + (T::one() - beta2) * gj * gj;
                let m_hat = md[j] / c1;
                let v_hat = vd[j] / c2;
                pd[j] = pd[j] - lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(x: f64) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.push("w", Array::scalar(x));
        p
    }

    #[test]
    fn zero_gradient_leaves_params_and_counts_step() {
        let mut p = single(1.5);
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        adam.step(&mut p, &[Array::scalar(0.0)]).unwrap();
        assert_eq!(p.by_index(0).item(), Some(1.5));
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m̂ = g = 1, v̂ = g² = 1 → Δ = lr · 1 / (1 + ε)
        let mut p = single(0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        adam.step(&mut p, &[Array::scalar(1.0)]).unwrap();
        let expected = -1e-3 / (1.0 + 1e-8);
        assert!((p.by_index(0).item().unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_streams_give_identical_trajectories() {
        let mut a = single(0.3);
        let mut b = single(0.3);
        let mut sa = AdamState::new(AdamConfig::default(), &a);
        let mut sb = AdamState::new(AdamConfig::default(), &b);
        for k in 0..50 {
            let g = [Array::scalar((k as f64 * 0.7).sin())];
            sa.step(&mut a, &g).unwrap();
            sb.step(&mut b, &g).unwrap();
        }
        assert_eq!(a, b);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = single(0.0);
        let mut adam = AdamState::new(AdamConfig::default(), &p);
        let bad = Array::from_parts(vec![], vec![f64::NAN]);
        match adam.step(&mut p, &[bad]) {
            Err(Error::NonFiniteGradient(name)) => assert_eq!(name, "w"),
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(adam.step_count(), 0);
    }
}
