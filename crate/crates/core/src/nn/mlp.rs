//! Dense feed-forward network with an explicit reverse pass.

use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::matrix::{accumulate_dyt_x, matmul_dy_w, matmul_xwt, Matrix};
use super::params::Parameters;
use crate::error::{config_err, shape_err, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Activation {
    Identity,
    ReLU,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::ReLU => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }

    /// Derivative expressed through the pre- and post-activation values.
    #[inline]
    pub fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::ReLU => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - post * post,
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::ReLU => 1,
            Activation::Tanh => 2,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::ReLU),
            2 => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Multi-layer perceptron. `weights[i]` is `layer_dims[i+1] × layer_dims[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layer_dims: Vec<usize>,
    weights: Vec<Matrix>,
    biases: Vec<Vec<f64>>,
    activation: Activation,
    output_activation: Activation,
}

/// Everything the reverse pass needs from one forward batch.
#[derive(Debug, Clone)]
pub struct ActivationCache {
    input: Matrix,
    pre: Vec<Matrix>,
    post: Vec<Matrix>,
}

impl ActivationCache {
    pub fn input(&self) -> &Matrix {
        &self.input
    }

    pub fn pre(&self) -> &[Matrix] {
        &self.pre
    }

    /// Post-activations for every layer, the output layer last.
    pub fn post(&self) -> &[Matrix] {
        &self.post
    }

    /// Post-activations of the hidden layers only.
    pub fn hidden(&self) -> &[Matrix] {
        &self.post[..self.post.len() - 1]
    }

    pub fn output(&self) -> &Matrix {
        self.post.last().expect("cache has at least one layer")
    }
}

/// Gradients shaped like the owning network.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 {
        return config_err(format!(
            "an MLP needs at least input and output dims, got {layer_dims:?}"
        ));
    }
    if layer_dims.contains(&0) {
        return config_err(format!("zero-sized layer in {layer_dims:?}"));
    }
    Ok(())
}

/// Closed-form parameter count for a dense stack.
pub fn dense_param_count(layer_dims: &[usize]) -> usize {
    layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    /// Fan-in uniform initialization, zero biases.
    pub fn init<R: Rng + ?Sized>(
        layer_dims: &[usize],
        activation: Activation,
        output_activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        check_dims(layer_dims)?;
        let mut weights = Vec::with_capacity(layer_dims.len() - 1);
        let mut biases = Vec::with_capacity(layer_dims.len() - 1);
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let bound = (1.0 / fan_in as f64).sqrt();
            let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
            let data = (0..fan_in * fan_out).map(|_| dist.sample(rng)).collect();
            weights.push(Matrix::from_vec(fan_out, fan_in, data)?);
            biases.push(vec![0.0; fan_out]);
        }
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights,
            biases,
            activation,
            output_activation,
        })
    }

    /// All-zero network of the given shape.
    pub fn zeros(
        layer_dims: &[usize],
        activation: Activation,
        output_activation: Activation,
    ) -> Result<Self> {
        check_dims(layer_dims)?;
        Ok(Self {
            layer_dims: layer_dims.to_vec(),
            weights: layer_dims
                .windows(2)
                .map(|w| Matrix::zeros(w[1], w[0]))
                .collect(),
            biases: layer_dims.windows(2).map(|w| vec![0.0; w[1]]).collect(),
            activation,
            output_activation,
        })
    }

    /// Rebuilds a network from the flat `w0, b0, w1, b1, …` layout.
    pub fn from_flat(
        layer_dims: &[usize],
        activation: Activation,
        output_activation: Activation,
        flat: &[f64],
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_dims, activation, output_activation)?;
        if flat.len() != net.param_count() {
            return shape_err(format!(
                "flat vector has {} entries, network needs {}",
                flat.len(),
                net.param_count()
            ));
        }
        net.load_flat(flat);
        Ok(net)
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("validated dims")
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn output_activation(&self) -> Activation {
        self.output_activation
    }

    pub fn weights(&self) -> &[Matrix] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [Matrix] {
        &mut self.weights
    }

    pub fn biases(&self) -> &[Vec<f64>] {
        &self.biases
    }

    pub fn biases_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.biases
    }

    fn layer_activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.weights.len() {
            self.output_activation
        } else {
            self.activation
        }
    }

    pub fn forward(&self, input: &Matrix) -> Result<(Matrix, ActivationCache)> {
        if input.cols() != self.input_dim() {
            return shape_err(format!(
                "input has {} columns, network expects {}",
                input.cols(),
                self.input_dim()
            ));
        }
        let n = self.weights.len();
        let mut pre = Vec::with_capacity(n);
        let mut post: Vec<Matrix> = Vec::with_capacity(n);
        for l in 0..n {
            let x = if l == 0 { input } else { &post[l - 1] };
            let mut z = matmul_xwt(x, &self.weights[l])?;
            let b = &self.biases[l];
            for r in 0..z.rows() {
                for (v, bb) in z.row_mut(r).iter_mut().zip(b) {
                    *v += bb;
                }
            }
            let act = self.layer_activation(l);
            let mut h = z.clone();
            if act != Activation::Identity {
                h.data_mut().iter_mut().for_each(|v| *v = act.apply(*v));
            }
            pre.push(z);
            post.push(h);
        }
        let out = post[n - 1].clone();
        Ok((
            out,
            ActivationCache {
                input: input.clone(),
                pre,
                post,
            },
        ))
    }

    fn check_cache(&self, cache: &ActivationCache, output_grad: &Matrix) -> Result<()> {
        if cache.pre.len() != self.weights.len()
            || cache.input.cols() != self.input_dim()
            || cache
                .post
                .iter()
                .zip(&self.layer_dims[1..])
                .any(|(p, &d)| p.cols() != d)
        {
            return shape_err("activation cache does not belong to this network");
        }
        let out = cache.output();
        if output_grad.rows() != out.rows() || output_grad.cols() != out.cols() {
            return shape_err(format!(
                "output gradient is {}x{}, output is {}x{}",
                output_grad.rows(),
                output_grad.cols(),
                out.rows(),
                out.cols()
            ));
        }
        Ok(())
    }

    /// Reverse pass for `sum(output ⊙ output_grad)`.
    pub fn backward(
        &self,
        cache: &ActivationCache,
        output_grad: &Matrix,
    ) -> Result<(ParamGrads, Matrix)> {
        self.check_cache(cache, output_grad)?;
        let mut grads = self.zero_grads();
        let dx = self.backward_impl(cache, output_grad, Some(&mut grads));
        Ok((grads, dx))
    }

    /// Reverse pass that only produces the input gradient.
    pub fn backward_input(&self, cache: &ActivationCache, output_grad: &Matrix) -> Result<Matrix> {
        self.check_cache(cache, output_grad)?;
        Ok(self.backward_impl(cache, output_grad, None))
    }

    /// Reverse pass accumulating into existing gradients.
    pub fn backward_accumulate(
        &self,
        cache: &ActivationCache,
        output_grad: &Matrix,
        grads: &mut ParamGrads,
    ) -> Result<Matrix> {
        self.check_cache(cache, output_grad)?;
        Ok(self.backward_impl(cache, output_grad, Some(grads)))
    }

    fn backward_impl(
        &self,
        cache: &ActivationCache,
        output_grad: &Matrix,
        mut grads: Option<&mut ParamGrads>,
    ) -> Matrix {
        let n = self.weights.len();
        let mut delta = output_grad.clone();
        for l in (0..n).rev() {
            let act = self.layer_activation(l);
            if act != Activation::Identity {
                let pre = cache.pre[l].data();
                let post = cache.post[l].data();
                for (i, d) in delta.data_mut().iter_mut().enumerate() {
                    *d *= act.derivative(pre[i], post[i]);
                }
            }
            let x = if l == 0 {
                &cache.input
            } else {
                &cache.post[l - 1]
            };
            if let Some(g) = grads.as_deref_mut() {
                accumulate_dyt_x(&mut g.weights[l], &delta, x);
                let gb = &mut g.biases[l];
                for r in 0..delta.rows() {
                    for (acc, d) in gb.iter_mut().zip(delta.row(r)) {
                        *acc += d;
                    }
                }
            }
            delta = matmul_dy_w(&delta, &self.weights[l]);
        }
        delta
    }

    pub fn zero_grads(&self) -> ParamGrads {
        ParamGrads {
            weights: self
                .weights
                .iter()
                .map(|w| Matrix::zeros(w.rows(), w.cols()))
                .collect(),
            biases: self.biases.iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }
}

impl Parameters for Mlp {
    fn tensors(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.data(), b.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.data_mut(), b.as_mut_slice()])
            .collect()
    }
}

impl Parameters for ParamGrads {
    fn tensors(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.data(), b.as_slice()])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w.data_mut(), b.as_mut_slice()])
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let dims = [4, 3, 3, 3, 2];
        let a = Mlp::init(&dims, Activation::ReLU, Activation::Identity, &mut rng(11)).unwrap();
        let b = Mlp::init(&dims, Activation::ReLU, Activation::Identity, &mut rng(11)).unwrap();
        assert_eq!(a, b);
        for (w, fan_in) in a.weights().iter().zip(dims.iter()) {
            let bound = (1.0 / *fan_in as f64).sqrt();
            assert!(w.data().iter().all(|v| v.abs() <= bound));
        }
        assert!(a.biases().iter().flatten().all(|&b| b == 0.0));
    }

    #[test]
    fn degenerate_dims_are_config_errors() {
        let mut r = rng(0);
        assert!(Mlp::init(&[2], Activation::ReLU, Activation::Identity, &mut r).is_err());
        assert!(Mlp::init(&[], Activation::ReLU, Activation::Identity, &mut r).is_err());
        assert!(Mlp::init(&[3, 0, 2], Activation::ReLU, Activation::Identity, &mut r).is_err());
    }

    #[test]
    fn param_counts() {
        assert_eq!(dense_param_count(&[4, 3, 3, 3, 2]), 47);
        assert_eq!(dense_param_count(&[1, 1]), 2);
        let net = Mlp::zeros(&[4, 3, 3, 3, 2], Activation::ReLU, Activation::Identity).unwrap();
        assert_eq!(net.param_count(), 47);

        // Brute-force over declared shapes.
        let dims = [39usize, 1024, 1024, 1024, 8];
        let mut brute = 0usize;
        for l in 0..dims.len() - 1 {
            for _row in 0..dims[l + 1] {
                for _col in 0..dims[l] {
                    brute += 1;
                }
                brute += 1;
            }
        }
        assert_eq!(dense_param_count(&dims), brute);
    }

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&[3, 5, 2], Activation::ReLU, Activation::Identity).unwrap();
        let x = Matrix::from_rows(&[[1.0, -2.0, 3.0], [0.5, 0.5, 0.5]]).unwrap();
        let (y, _) = net.forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn affine_by_hand() {
        let net =
            Mlp::from_flat(&[1, 1], Activation::ReLU, Activation::Identity, &[2.0, 1.0]).unwrap();
        let (y, _) = net.forward(&Matrix::from_rows(&[[3.0]]).unwrap()).unwrap();
        assert_eq!(y.data(), &[7.0]);
    }

    #[test]
    fn forward_matches_loop_oracle() {
        let net = Mlp::init(
            &[3, 6, 4, 2],
            Activation::ReLU,
            Activation::Identity,
            &mut rng(3),
        )
        .unwrap();
        // Non-zero biases so the oracle exercises them.
        let mut net = net;
        for b in net.biases_mut() {
            for (i, v) in b.iter_mut().enumerate() {
                *v = 0.1 * i as f64 - 0.15;
            }
        }
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|r| (0..3).map(|c| ((r * 3 + c) as f64 * 0.7).cos()).collect())
            .collect();
        let x = Matrix::from_rows(&rows).unwrap();
        let (y, _) = net.forward(&x).unwrap();
        assert_eq!(y.rows(), 5);
        for (r, row) in rows.iter().enumerate() {
            let mut h = row.clone();
            for l in 0..net.weights().len() {
                let w = &net.weights()[l];
                let mut next = vec![0.0; w.rows()];
                for o in 0..w.rows() {
                    let mut s = net.biases()[l][o];
                    for i in 0..w.cols() {
                        s += w.get(o, i) * h[i];
                    }
                    next[o] = if l + 1 < net.weights().len() {
                        s.max(0.0)
                    } else {
                        s
                    };
                }
                h = next;
            }
            for (o, v) in h.iter().enumerate() {
                assert!((y.get(r, o) - v).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_output_grad_gives_zero_param_grads() {
        let net = Mlp::init(
            &[3, 4, 2],
            Activation::ReLU,
            Activation::Identity,
            &mut rng(1),
        )
        .unwrap();
        let x = Matrix::from_rows(&[[0.1, 0.2, 0.3]]).unwrap();
        let (_, cache) = net.forward(&x).unwrap();
        let (g, dx) = net.backward(&cache, &Matrix::zeros(1, 2)).unwrap();
        assert!(g.tensors().iter().all(|t| t.iter().all(|&v| v == 0.0)));
        assert!(dx.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn scalar_weight_gradient_is_the_input() {
        let net =
            Mlp::from_flat(&[1, 1], Activation::ReLU, Activation::Identity, &[0.7, 0.0]).unwrap();
        let x = Matrix::from_rows(&[[2.5]]).unwrap();
        let (_, cache) = net.forward(&x).unwrap();
        let (g, dx) = net
            .backward(&cache, &Matrix::from_rows(&[[1.0]]).unwrap())
            .unwrap();
        assert_eq!(g.weights[0].data(), &[2.5]);
        assert_eq!(g.biases[0], vec![1.0]);
        assert_eq!(dx.data(), &[0.7]);
    }

    #[test]
    fn gradients_match_central_differences() {
        let mut r = rng(9);
        let net = Mlp::init(
            &[4, 5, 5, 3],
            Activation::Tanh,
            Activation::Identity,
            &mut r,
        )
        .unwrap();
        let x = Matrix::from_vec(3, 4, (0..12).map(|i| (i as f64 * 0.9).sin()).collect()).unwrap();
        let g_out =
            Matrix::from_vec(3, 3, (0..9).map(|i| (i as f64 * 1.7).cos()).collect()).unwrap();
        let loss = |n: &Mlp| -> f64 {
            let (y, _) = n.forward(&x).unwrap();
            y.data().iter().zip(g_out.data()).map(|(a, b)| a * b).sum()
        };
        let (_, cache) = net.forward(&x).unwrap();
        let (grads, _) = net.backward(&cache, &g_out).unwrap();
        let analytic: Vec<f64> = grads.tensors().concat();
        let base = net.flat();
        let h = 1e-5;
        for i in 0..base.len() {
            let mut p = base.clone();
            p[i] += h;
            let mut plus = net.clone();
            plus.load_flat(&p);
            p[i] -= 2.0 * h;
            let mut minus = net.clone();
            minus.load_flat(&p);
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let a = analytic[i];
            if a.abs() > 1e-6 {
                assert!(
                    ((a - fd) / a.abs().max(fd.abs())).abs() < 1e-4,
                    "param {i}: {a} vs {fd}"
                );
            }
        }
    }

    #[test]
    fn shape_errors() {
        let net = Mlp::init(
            &[3, 4, 2],
            Activation::ReLU,
            Activation::Identity,
            &mut rng(1),
        )
        .unwrap();
        assert!(net.forward(&Matrix::zeros(2, 4)).is_err());
        let (_, cache) = net.forward(&Matrix::zeros(2, 3)).unwrap();
        assert!(net.backward(&cache, &Matrix::zeros(3, 2)).is_err());
        let other = Mlp::init(
            &[3, 7, 2],
            Activation::ReLU,
            Activation::Identity,
            &mut rng(1),
        )
        .unwrap();
        assert!(other.backward(&cache, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn forward_is_bit_deterministic() {
        let net = Mlp::init(
            &[5, 32, 32, 3],
            Activation::ReLU,
            Activation::Identity,
            &mut rng(2),
        )
        .unwrap();
        let x = Matrix::from_vec(7, 5, (0..35).map(|i| (i as f64).sqrt()).collect()).unwrap();
        let (a, _) = net.forward(&x).unwrap();
        let (b, _) = net.forward(&x).unwrap();
        assert_eq!(a, b);
    }
}
