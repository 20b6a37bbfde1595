//! Uniform view over a model's trainable tensors.
//!
//! Every network exposes its parameters as an ordered list of flat slices.
//! Optimizers, target averaging, norms and serialization all work through
//! this list, so the order returned by `tensors` and `tensors_mut` must agree.

pub trait Parameters {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;

    fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    fn flat(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    /// Overwrites all parameters from a flat vector in `tensors` order.
    ///
    /// Panics if the length does not match `param_count`.
    fn load_flat(&mut self, flat: &[f64]) {
        let mut off = 0;
        for t in self.tensors_mut() {
            t.copy_from_slice(&flat[off..off + t.len()]);
            off += t.len();
        }
        assert_eq!(off, flat.len(), "flat vector length mismatch");
    }

    fn l2_norm(&self) -> f64 {
        self.tensors()
            .iter()
            .flat_map(|t| t.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Gradient storage congruent with some `Parameters` implementor.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads(pub Vec<Vec<f64>>);

impl Grads {
    pub fn zeros_like<P: Parameters + ?Sized>(p: &P) -> Self {
        Grads(p.tensors().iter().map(|t| vec![0.0; t.len()]).collect())
    }

    pub fn scale(&mut self, s: f64) {
        for t in &mut self.0 {
            t.iter_mut().for_each(|v| *v *= s);
        }
    }
}

impl Parameters for Grads {
    fn tensors(&self) -> Vec<&[f64]> {
        self.0.iter().map(|t| t.as_slice()).collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.0.iter_mut().map(|t| t.as_mut_slice()).collect()
    }
}
