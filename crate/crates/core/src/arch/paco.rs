//! Parameter-compositional network.
//!
//! The flattened parameters of a plain MLP for task `τ` are `θ_τ = Φ·w_τ`,
//! with a shared basis `Φ` (`P × K`) and a per-task mixing vector `w_τ`.
//! `Φ` receives gradient from every task; `w_τ` only from rows of task `τ`.

use rand::Rng;

use super::{group_by_task, ArchConfig};
use crate::error::{config_err, shape_err, Result};
use crate::nn::{dense_param_count, Activation, ActivationCache, Grads, Matrix, Mlp, Parameters};

#[derive(Debug, Clone, PartialEq)]
pub struct PacoNet {
    dims: Vec<usize>,
    /// `P × K`, row-major.
    basis: Matrix,
    /// `N × K`, row `τ` is `w_τ`.
    task_weights: Matrix,
}

#[derive(Debug, Clone)]
pub struct Cache {
    rows: usize,
    /// Per present task: its rows, materialized network and forward cache.
    groups: Vec<(usize, Vec<usize>, Mlp, ActivationCache)>,
}

impl Cache {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn hidden(&self) -> Vec<Matrix> {
        let Some((_, _, net, _)) = self.groups.first() else {
            return Vec::new();
        };
        let dims = net.layer_dims();
        (1..dims.len() - 1)
            .map(|l| {
                let mut m = Matrix::zeros(self.rows, dims[l]);
                for (_, rows, _, c) in &self.groups {
                    m.scatter_rows(rows, &c.post()[l - 1]);
                }
                m
            })
            .collect()
    }
}

impl PacoNet {
    pub fn init<R: Rng + ?Sized>(
        feat_dim: usize,
        config: &ArchConfig,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let k = config.n_param_sets;
        if k == 0 {
            return config_err("PaCo needs K ≥ 1");
        }
        let mut dims = vec![feat_dim];
        dims.extend(std::iter::repeat_n(config.width, config.depth));
        dims.push(out_dim);
        let p = dense_param_count(&dims);
        let mut basis = Matrix::zeros(p, k);
        for col in 0..k {
            let net = Mlp::init(&dims, Activation::ReLU, Activation::Identity, rng)?;
            for (row, v) in net.flat().into_iter().enumerate() {
                basis.set(row, col, v);
            }
        }
        let mut task_weights = Matrix::zeros(config.n_tasks, k);
        task_weights.fill(1.0 / (k as f64).sqrt());
        Ok(Self {
            dims,
            basis,
            task_weights,
        })
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn basis(&self) -> &Matrix {
        &self.basis
    }

    pub fn basis_mut(&mut self) -> &mut Matrix {
        &mut self.basis
    }

    pub fn task_weights(&self) -> &Matrix {
        &self.task_weights
    }

    pub fn task_weights_mut(&mut self) -> &mut Matrix {
        &mut self.task_weights
    }

    /// `θ_τ = Φ·w_τ`.
    pub fn task_params(&self, task: usize) -> Vec<f64> {
        let w = self.task_weights.row(task);
        (0..self.basis.rows())
            .map(|p| self.basis.row(p).iter().zip(w).map(|(a, b)| a * b).sum())
            .collect()
    }

    pub fn task_net(&self, task: usize) -> Result<Mlp> {
        Mlp::from_flat(
            &self.dims,
            Activation::ReLU,
            Activation::Identity,
            &self.task_params(task),
        )
    }

    pub fn forward(&self, feat: &Matrix, tasks: &[usize]) -> Result<(Matrix, Cache)> {
        if feat.cols() != self.dims[0] {
            return shape_err(format!(
                "features have {} columns, network expects {}",
                feat.cols(),
                self.dims[0]
            ));
        }
        let out_dim = *self.dims.last().expect("dims");
        let mut out = Matrix::zeros(feat.rows(), out_dim);
        let mut groups = Vec::new();
        for (t, rows) in group_by_task(tasks, self.task_weights.rows()) {
            let net = self.task_net(t)?;
            let (y, c) = net.forward(&feat.select_rows(&rows))?;
            out.scatter_rows(&rows, &y);
            groups.push((t, rows, net, c));
        }
        Ok((
            out,
            Cache {
                rows: feat.rows(),
                groups,
            },
        ))
    }

    pub fn backward(&self, c: &Cache, d_out: &Matrix, grads: Option<&mut Grads>) -> Result<Matrix> {
        let mut d_feat = Matrix::zeros(c.rows, self.dims[0]);
        match grads {
            Some(g) => {
                let k = self.basis.cols();
                let (d_basis, rest) = g.0.split_at_mut(1);
                let d_basis = &mut d_basis[0];
                let d_w = &mut rest[0];
                for (t, rows, net, cache) in &c.groups {
                    let (pg, dx) = net.backward(cache, &d_out.select_rows(rows))?;
                    d_feat.scatter_rows(rows, &dx);
                    let d_theta = pg.flat();
                    let w = self.task_weights.row(*t);
                    let dw = &mut d_w[t * k..(t + 1) * k];
                    for (p, &dt) in d_theta.iter().enumerate() {
                        if dt == 0.0 {
                            continue;
                        }
                        let brow = self.basis.row(p);
                        let grow = &mut d_basis[p * k..(p + 1) * k];
                        for j in 0..k {
                            grow[j] += dt * w[j];
                            dw[j] += dt * brow[j];
                        }
                    }
                }
            }
            None => {
                for (_, rows, net, cache) in &c.groups {
                    let dx = net.backward_input(cache, &d_out.select_rows(rows))?;
                    d_feat.scatter_rows(rows, &dx);
                }
            }
        }
        Ok(d_feat)
    }
}

impl Parameters for PacoNet {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.basis.data(), self.task_weights.data()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.basis.data_mut(), self.task_weights.data_mut()]
    }
}
