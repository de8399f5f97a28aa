use ndarray::{Array2, Zip};

use super::params::Module;
use super::tape::Matrix;
use crate::error::{Error, Result};

/// Bias-corrected Adam.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(module: &dyn Module, lr: f64) -> Self {
        Self::with_betas(module, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas(module: &dyn Module, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let mut m = Vec::new();
        module.visit("", &mut |_, p| m.push(Array2::zeros(p.dim())));
        let v = m.clone();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m,
            v,
        }
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    pub fn first_moments(&self) -> &[Matrix] {
        &self.m
    }

    pub fn second_moments(&self) -> &[Matrix] {
        &self.v
    }

    /// Applies one update. `grads` is aligned with the module's visit order.
    pub fn step(&mut self, module: &mut dyn Module, grads: &[Matrix]) -> Result<()> {
        if grads.len() != self.m.len() {
            return Err(Error::dim(format!(
                "{} gradients for {} parameters",
                grads.len(),
                self.m.len()
            )));
        }
        let mut bad = None;
        let mut idx = 0;
        module.visit("", &mut |name, p| {
            let g = &grads[idx];
            if bad.is_none() && (g.dim() != p.dim() || g.iter().any(|x| !x.is_finite())) {
                bad = Some(name);
            }
            idx += 1;
        });
        if let Some(name) = bad {
            return Err(Error::NonFiniteGradient(name));
        }

        self.step += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let (lr, eps) = (self.lr, self.eps);
        let mut idx = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        module.visit_mut("", &mut |_, p| {
            let g = &grads[idx];
            Zip::from(p)
                .and(&mut ms[idx])
                .and(&mut vs[idx])
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let mh = *m / c1;
                    let vh = *v / c2;
                    *p -= lr * mh / (vh.sqrt() + eps);
                });
            idx += 1;
        });
        Ok(())
    }
}
