//! Adam with weight decay and a cosine learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// `true`: shrink parameters directly (AdamW). `false`: add `wd·θ` to the gradient.
    pub decoupled: bool,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
            decoupled: true,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::invalid("Adam betas must lie in [0, 1)"));
        }
        if !(self.eps > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(Error::invalid(
                "Adam eps must be positive and weight decay non-negative",
            ));
        }
        Ok(())
    }
}

/// First and second moments per parameter, plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore, config: AdamConfig) -> Self {
        let m: Vec<Vec<f64>> = store.iter().map(|p| vec![0.0; p.value.len()]).collect();
        AdamState {
            config,
            v: m.clone(),
            m,
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the gradients currently held in `store`.
    pub fn step(&mut self, store: &mut ParamStore, lr: f64) -> Result<()> {
        if self.m.len() != store.len() {
            return Err(Error::invalid("optimizer state does not match the parameter store"));
        }
        self.t += 1;
        let c = self.config;
        let bias1 = 1.0 - c.beta1.powi(self.t as i32);
        let bias2 = 1.0 - c.beta2.powi(self.t as i32);
        for (k, p) in store.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            let theta = p.value.as_mut_slice();
            for (i, &g0) in p.grad.as_slice().iter().enumerate() {
                let g = if c.decoupled {
                    g0
                } else {
                    g0 + c.weight_decay * theta[i]
                };
                m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
                v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
                let mhat = m[i] / bias1;
                let vhat = v[i] / bias2;
                let mut update = lr * mhat / (vhat.sqrt() + c.eps);
                if c.decoupled {
                    update += lr * c.weight_decay * theta[i];
                }
                theta[i] -= update;
            }
        }
        Ok(())
    }
}

/// `lr_min + ½(lr_max − lr_min)(1 + cos(π·step/total))` for `0 ≤ step ≤ total`.
/// Both endpoints are returned exactly.
pub fn cosine_lr(step: usize, total: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if step > total {
        return Err(Error::invalid(format!("schedule step {step} beyond total {total}")));
    }
    if step == 0 {
        return Ok(lr_max);
    }
    if step == total {
        return Ok(lr_min);
    }
    let phase = std::f64::consts::PI * step as f64 / total as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + phase.cos()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::Matrix;

    fn quadratic_store(theta: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("theta", Matrix::row_vector(&[theta])).unwrap();
        s
    }

    /// Scalar Adam written out longhand.
    fn reference(theta0: f64, steps: usize, lr: f64, wd: f64, decoupled: bool) -> f64 {
        let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
        let (mut th, mut m, mut v) = (theta0, 0.0, 0.0);
        for t in 1..=steps {
            let mut g = 2.0 * th;
            if !decoupled {
                g += wd * th;
            }
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t as i32));
            let vh = v / (1.0 - b2.powi(t as i32));
            th = th - lr * mh / (vh.sqrt() + eps) - if decoupled { lr * wd * th } else { 0.0 };
        }
        th
    }

    fn run(decoupled: bool, wd: f64) -> f64 {
        let mut store = quadratic_store(1.0);
        let cfg = AdamConfig {
            weight_decay: wd,
            decoupled,
            ..AdamConfig::default()
        };
        let mut st = AdamState::new(&store, cfg);
        for _ in 0..10 {
            let th = store.get(0).value.get(0, 0);
            store.get_mut(0).grad = Matrix::row_vector(&[2.0 * th]);
            st.step(&mut store, 0.1).unwrap();
        }
        assert_eq!(st.steps(), 10);
        store.get(0).value.get(0, 0)
    }

    #[test]
    fn matches_longhand_reference() {
        for &(dec, wd) in &[(true, 0.0), (true, 0.01), (false, 0.01)] {
            let got = run(dec, wd);
            let want = reference(1.0, 10, 0.1, wd, dec);
            assert!((got - want).abs() < 1e-12, "decoupled={dec} wd={wd}: {got} vs {want}");
        }
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut store = quadratic_store(3.0);
        store.get_mut(0).grad = Matrix::row_vector(&[6.0]);
        let mut st = AdamState::new(
            &store,
            AdamConfig {
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
        );
        st.step(&mut store, 0.01).unwrap();
        assert!((store.get(0).value.get(0, 0) - (3.0 - 0.01)).abs() < 1e-9);
    }

    #[test]
    fn zero_grad_without_decay_is_a_no_op() {
        let mut store = quadratic_store(0.7);
        let mut st = AdamState::new(
            &store,
            AdamConfig {
                weight_decay: 0.0,
                ..AdamConfig::default()
            },
        );
        for _ in 0..5 {
            st.step(&mut store, 0.1).unwrap();
        }
        assert_eq!(store.get(0).value.get(0, 0).to_bits(), 0.7f64.to_bits());
    }

    #[test]
    fn zero_lr_is_bit_identical() {
        let mut store = quadratic_store(0.3);
        store.get_mut(0).grad = Matrix::row_vector(&[5.0]);
        let mut st = AdamState::new(&store, AdamConfig::default());
        st.step(&mut store, 0.0).unwrap();
        assert_eq!(store.get(0).value.get(0, 0).to_bits(), 0.3f64.to_bits());
    }

    #[test]
    fn decoupled_decay_with_zero_grad_shrinks_geometrically() {
        let mut store = quadratic_store(2.0);
        let mut st = AdamState::new(
            &store,
            AdamConfig {
                weight_decay: 0.5,
                ..AdamConfig::default()
            },
        );
        st.step(&mut store, 0.1).unwrap();
        assert!((store.get(0).value.get(0, 0) - 2.0 * 0.95).abs() < 1e-15);
    }

    #[test]
    fn cosine_endpoints_and_midpoint() {
        assert_eq!(cosine_lr(0, 200, 1e-4, 1e-6).unwrap(), 1e-4);
        assert_eq!(cosine_lr(200, 200, 1e-4, 1e-6).unwrap(), 1e-6);
        assert!(cosine_lr(201, 200, 1e-4, 1e-6).is_err());
        assert!((cosine_lr(100, 200, 1.0, 0.0).unwrap() - 0.5).abs() < 1e-15);
        let mut prev = f64::INFINITY;
        for s in 0..=50 {
            let lr = cosine_lr(s, 50, 2.0, 0.5).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn rejects_bad_config() {
        assert!(AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        }
        .validate()
        .is_err());
        assert!(AdamConfig {
            eps: 0.0,
            ..AdamConfig::default()
        }
        .validate()
        .is_err());
        assert!(AdamConfig::default().validate().is_ok());
    }
}
