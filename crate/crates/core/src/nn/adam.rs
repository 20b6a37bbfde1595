use super::params::Parameters;
use crate::error::{Error, Result};

/// Adam moments and hyperparameters for one parameter collection.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new<P: Parameters + ?Sized>(params: &P, lr: f64) -> Self {
        Self::with_betas(params, lr, 0.9, 0.999, 1e-8)
    }

    pub fn with_betas<P: Parameters + ?Sized>(
        params: &P,
        lr: f64,
        beta1: f64,
        beta2: f64,
        eps: f64,
    ) -> Self {
        let shapes: Vec<usize> = params.tensors().iter().map(|t| t.len()).collect();
        Self {
            m: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            v: shapes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
            lr,
            beta1,
            beta2,
            eps,
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update. Rejects non-finite gradients
    /// before touching anything.
    pub fn step<P, G>(&mut self, params: &mut P, grads: &G) -> Result<()>
    where
        P: Parameters + ?Sized,
        G: Parameters + ?Sized,
    {
        let g = grads.tensors();
        if g.len() != self.m.len() || g.iter().zip(&self.m).any(|(a, b)| a.len() != b.len()) {
            return Err(Error::Shape(
                "gradient shapes do not match optimizer state".into(),
            ));
        }
        if !g.iter().all(|t| t.iter().all(|v| v.is_finite())) {
            return Err(Error::Numeric("non-finite gradient entry".into()));
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let bc1 = 1.0 - b1.powi(self.t as i32);
        let bc2 = 1.0 - b2.powi(self.t as i32);
        let step = self.lr / bc1;
        let bc2_sqrt = bc2.sqrt();
        let mut p = params.tensors_mut();
        if p.len() != g.len() {
            return Err(Error::Shape(
                "parameter/gradient tensor count mismatch".into(),
            ));
        }
        for (((p, g), m), v) in p
            .iter_mut()
            .zip(g.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for i in 0..g.len() {
                let gi = g[i];
                m[i] = b1 * m[i] + (1.0 - b1) * gi;
                v[i] = b2 * v[i] + (1.0 - b2) * gi * gi;
                p[i] -= step * m[i] / (v[i].sqrt() / bc2_sqrt + self.eps);
            }
        }
        Ok(())
    }
}

/// Scalar Adam used for per-task temperatures: each slot keeps its own
/// step count so an untouched slot never moves.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarAdam {
    m: f64,
    v: f64,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl ScalarAdam {
    pub fn new(lr: f64) -> Self {
        Self {
            m: 0.0,
            v: 0.0,
            t: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn t(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, param: &mut f64, grad: f64) -> Result<()> {
        if !grad.is_finite() {
            return Err(Error::Numeric("non-finite temperature gradient".into()));
        }
        self.t += 1;
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad;
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad;
        let mhat = self.m / (1.0 - self.beta1.powi(self.t as i32));
        let vhat = self.v / (1.0 - self.beta2.powi(self.t as i32));
        *param -= self.lr * mhat / (vhat.sqrt() + self.eps);
        Ok(())
    }
}
