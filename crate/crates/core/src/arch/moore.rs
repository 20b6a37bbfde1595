//! Mixture of orthogonal experts.
//!
//! `k` expert MLPs map the features to width-sized representations. Per
//! sample the representations are orthonormalized by classical Gram-Schmidt
//! in fixed expert order, then combined with the task's weight vector
//! `ω_τ` into `h = Σ_j ω_τj · q_j`, which feeds a linear output head.

use rand::Rng;

use super::{mlp_stack, ArchConfig};
use crate::error::{config_err, shape_err, Result};
use crate::nn::{Activation, ActivationCache, Grads, Matrix, Mlp, ParamGrads, Parameters};

/// Residual norms below this produce a zero basis vector.
pub const GS_DEGENERATE_NORM: f64 = 1e-8;

/// Result of orthonormalizing one sample's expert outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct GramSchmidt {
    pub q: Vec<Vec<f64>>,
    /// Residual norm per vector; `0.0` marks a degenerate (zeroed) vector.
    pub norms: Vec<f64>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Classical Gram-Schmidt: projection coefficients use the original
/// vector, `u_j = e_j − Σ_{i<j} (q_i·e_j) q_i`.
pub fn gram_schmidt(e: &[Vec<f64>]) -> GramSchmidt {
    let mut q: Vec<Vec<f64>> = Vec::with_capacity(e.len());
    let mut norms = Vec::with_capacity(e.len());
    for ej in e {
        let mut u = ej.clone();
        for qi in &q {
            let c = dot(qi, ej);
            for (a, b) in u.iter_mut().zip(qi) {
                *a -= c * b;
            }
        }
        let n = dot(&u, &u).sqrt();
        if n < GS_DEGENERATE_NORM {
            q.push(vec![0.0; u.len()]);
            norms.push(0.0);
        } else {
            u.iter_mut().for_each(|v| *v /= n);
            q.push(u);
            norms.push(n);
        }
    }
    GramSchmidt { q, norms }
}

impl GramSchmidt {
    /// Pulls `dq` back to the inputs `e` through the projection chain.
    pub fn backward(&self, e: &[Vec<f64>], dq: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let k = e.len();
        let w = e.first().map(|v| v.len()).unwrap_or(0);
        let mut dq: Vec<Vec<f64>> = dq.to_vec();
        let mut de = vec![vec![0.0; w]; k];
        for j in (0..k).rev() {
            if self.norms[j] == 0.0 {
                continue;
            }
            let qj = &self.q[j];
            let proj = dot(qj, &dq[j]);
            let du: Vec<f64> = dq[j]
                .iter()
                .zip(qj)
                .map(|(d, q)| (d - q * proj) / self.norms[j])
                .collect();
            de[j].iter_mut().zip(&du).for_each(|(a, b)| *a += b);
            for i in 0..j {
                let qi = &self.q[i];
                let qi_du = dot(qi, &du);
                let c = dot(qi, &e[j]);
                for t in 0..w {
                    de[j][t] -= qi[t] * qi_du;
                    dq[i][t] -= c * du[t] + qi_du * e[j][t];
                }
            }
        }
        de
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MooreNet {
    experts: Vec<Mlp>,
    /// `N × k`, row `τ` is `ω_τ`.
    task_weights: Matrix,
    head: Mlp,
}

#[derive(Debug, Clone)]
pub struct Cache {
    rows: usize,
    tasks: Vec<usize>,
    experts: Vec<ActivationCache>,
    gs: Vec<GramSchmidt>,
    head: ActivationCache,
}

impl Cache {
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Concatenated expert hidden layers.
    pub fn hidden(&self) -> Vec<Matrix> {
        let depth = self.experts[0].post().len();
        (0..depth)
            .map(|l| {
                let parts: Vec<&Matrix> = self.experts.iter().map(|c| &c.post()[l]).collect();
                Matrix::hcat(&parts).expect("experts share row count")
            })
            .collect()
    }

    pub fn orthonormal(&self) -> &[GramSchmidt] {
        &self.gs
    }
}

impl MooreNet {
    pub fn init<R: Rng + ?Sized>(
        feat_dim: usize,
        config: &ArchConfig,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let k = config.n_experts;
        if k == 0 || k > config.width {
            return config_err(format!(
                "MOORE needs 1 ≤ k ≤ width, got k={k}, width={}",
                config.width
            ));
        }
        let experts = (0..k)
            .map(|_| {
                Mlp::init(
                    &mlp_stack(feat_dim, config.width, config.depth),
                    Activation::ReLU,
                    Activation::ReLU,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        let mut task_weights = Matrix::zeros(config.n_tasks, k);
        task_weights.fill(1.0 / (k as f64).sqrt());
        let head = Mlp::init(
            &[config.width, out_dim],
            Activation::ReLU,
            Activation::Identity,
            rng,
        )?;
        Ok(Self {
            experts,
            task_weights,
            head,
        })
    }

    pub fn experts(&self) -> &[Mlp] {
        &self.experts
    }

    pub fn experts_mut(&mut self) -> &mut [Mlp] {
        &mut self.experts
    }

    pub fn task_weights(&self) -> &Matrix {
        &self.task_weights
    }

    pub fn task_weights_mut(&mut self) -> &mut Matrix {
        &mut self.task_weights
    }

    pub fn head(&self) -> &Mlp {
        &self.head
    }

    pub fn forward(&self, feat: &Matrix, tasks: &[usize]) -> Result<(Matrix, Cache)> {
        if feat.rows() != tasks.len() {
            return shape_err("task id count does not match batch rows");
        }
        let rows = feat.rows();
        let experts = self
            .experts
            .iter()
            .map(|e| e.forward(feat).map(|(_, c)| c))
            .collect::<Result<Vec<_>>>()?;
        let width = experts[0].output().cols();
        let mut h = Matrix::zeros(rows, width);
        let mut gs = Vec::with_capacity(rows);
        for b in 0..rows {
            let e: Vec<Vec<f64>> = experts.iter().map(|c| c.output().row(b).to_vec()).collect();
            let g = gram_schmidt(&e);
            let omega = self.task_weights.row(tasks[b]);
            let dst = h.row_mut(b);
            for (qj, &wj) in g.q.iter().zip(omega) {
                for (d, q) in dst.iter_mut().zip(qj) {
                    *d += wj * q;
                }
            }
            gs.push(g);
        }
        let (out, head) = self.head.forward(&h)?;
        Ok((
            out,
            Cache {
                rows,
                tasks: tasks.to_vec(),
                experts,
                gs,
                head,
            },
        ))
    }

    pub fn backward(&self, c: &Cache, d_out: &Matrix, grads: Option<&mut Grads>) -> Result<Matrix> {
        let k = self.experts.len();
        let want = grads.is_some();
        let mut head_g = want.then(|| self.head.zero_grads());
        let dh = match head_g.as_mut() {
            Some(g) => self.head.backward_accumulate(&c.head, d_out, g)?,
            None => self.head.backward_input(&c.head, d_out)?,
        };
        let width = dh.cols();
        let mut d_omega = Matrix::zeros(self.task_weights.rows(), k);
        let mut d_experts = vec![Matrix::zeros(c.rows, width); k];
        for b in 0..c.rows {
            let g = &c.gs[b];
            let t = c.tasks[b];
            let omega = self.task_weights.row(t);
            let dhb = dh.row(b);
            let dq: Vec<Vec<f64>> = (0..k)
                .map(|j| dhb.iter().map(|v| v * omega[j]).collect())
                .collect();
            for j in 0..k {
                let v = d_omega.get(t, j) + dot(&g.q[j], dhb);
                d_omega.set(t, j, v);
            }
            let e: Vec<Vec<f64>> = c
                .experts
                .iter()
                .map(|ec| ec.output().row(b).to_vec())
                .collect();
            let de = g.backward(&e, &dq);
            for j in 0..k {
                d_experts[j].row_mut(b).copy_from_slice(&de[j]);
            }
        }
        let feat_dim = self.experts[0].input_dim();
        let mut d_feat = Matrix::zeros(c.rows, feat_dim);
        let mut expert_g: Vec<ParamGrads> = Vec::new();
        for j in 0..k {
            if want {
                let (pg, dx) = self.experts[j].backward(&c.experts[j], &d_experts[j])?;
                expert_g.push(pg);
                d_feat.add_assign(&dx);
            } else {
                d_feat.add_assign(&self.experts[j].backward_input(&c.experts[j], &d_experts[j])?);
            }
        }
        if let Some(g) = grads {
            let mut all: Vec<&[f64]> = Vec::new();
            for eg in &expert_g {
                all.extend(eg.tensors());
            }
            all.push(d_omega.data());
            all.extend(head_g.as_ref().expect("want").tensors());
            for (dst, src) in g.0.iter_mut().zip(all) {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        Ok(d_feat)
    }
}

impl Parameters for MooreNet {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for e in &self.experts {
            v.extend(e.tensors());
        }
        v.push(self.task_weights.data());
        v.extend(self.head.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for e in &mut self.experts {
            v.extend(e.tensors_mut());
        }
        v.push(self.task_weights.data_mut());
        v.extend(self.head.tensors_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_vector_is_normalized() {
        let g = gram_schmidt(&[vec![3.0, 4.0]]);
        assert_eq!(g.q[0], vec![0.6, 0.8]);
        assert_eq!(g.norms[0], 5.0);
    }

    #[test]
    fn dependent_vector_becomes_zero() {
        let g = gram_schmidt(&[
            vec![1.0, 2.0, 0.0],
            vec![2.0, 4.0, 0.0],
            vec![0.0, 0.0, 0.0],
        ]);
        assert_eq!(g.q[1], vec![0.0; 3]);
        assert_eq!(g.q[2], vec![0.0; 3]);
        assert_eq!(g.norms[1], 0.0);
    }

    #[test]
    fn gs_backward_matches_finite_differences() {
        let e: Vec<Vec<f64>> = (0..3)
            .map(|j| {
                (0..5)
                    .map(|t| ((j * 5 + t) as f64 * 0.77).sin() + 0.1)
                    .collect()
            })
            .collect();
        let r: Vec<Vec<f64>> = (0..3)
            .map(|j| (0..5).map(|t| ((j * 5 + t) as f64 * 1.31).cos()).collect())
            .collect();
        let loss = |e: &[Vec<f64>]| -> f64 {
            let g = gram_schmidt(e);
            g.q.iter().zip(&r).map(|(q, rr)| dot(q, rr)).sum()
        };
        let g = gram_schmidt(&e);
        let de = g.backward(&e, &r);
        let h = 1e-6;
        for j in 0..3 {
            for t in 0..5 {
                let mut p = e.clone();
                p[j][t] += h;
                let mut m = e.clone();
                m[j][t] -= h;
                let fd = (loss(&p) - loss(&m)) / (2.0 * h);
                assert!(
                    (fd - de[j][t]).abs() < 1e-6 * (1.0 + fd.abs()),
                    "{j},{t}: {fd} vs {}",
                    de[j][t]
                );
            }
        }
    }
}
