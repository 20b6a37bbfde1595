//! Shared trunk with one output head per task.

use rand::Rng;

use super::{group_by_task, mlp_stack, ArchConfig};
use crate::error::Result;
use crate::nn::{Activation, ActivationCache, Grads, Matrix, Mlp, Parameters};

#[derive(Debug, Clone, PartialEq)]
pub struct MultiHeadNet {
    trunk: Mlp,
    heads: Vec<Mlp>,
}

#[derive(Debug, Clone)]
pub struct Cache {
    trunk: ActivationCache,
    heads: Vec<(usize, Vec<usize>, ActivationCache)>,
    rows: usize,
}

impl Cache {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn hidden(&self) -> Vec<Matrix> {
        self.trunk.post().to_vec()
    }
}

impl MultiHeadNet {
    pub fn init<R: Rng + ?Sized>(
        in_dim: usize,
        config: &ArchConfig,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let trunk = Mlp::init(
            &mlp_stack(in_dim, config.width, config.depth),
            Activation::ReLU,
            Activation::ReLU,
            rng,
        )?;
        let heads = (0..config.n_tasks)
            .map(|_| {
                Mlp::init(
                    &[config.width, out_dim],
                    Activation::ReLU,
                    Activation::Identity,
                    rng,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { trunk, heads })
    }

    pub fn trunk(&self) -> &Mlp {
        &self.trunk
    }

    pub fn heads(&self) -> &[Mlp] {
        &self.heads
    }

    pub fn forward(&self, x: &Matrix, tasks: &[usize]) -> Result<(Matrix, Cache)> {
        let (h, trunk) = self.trunk.forward(x)?;
        let out_dim = self.heads[0].output_dim();
        let mut out = Matrix::zeros(x.rows(), out_dim);
        let mut heads = Vec::new();
        for (t, rows) in group_by_task(tasks, self.heads.len()) {
            let (y, c) = self.heads[t].forward(&h.select_rows(&rows))?;
            out.scatter_rows(&rows, &y);
            heads.push((t, rows, c));
        }
        Ok((
            out,
            Cache {
                trunk,
                heads,
                rows: x.rows(),
            },
        ))
    }

    pub fn backward(&self, c: &Cache, d_out: &Matrix, grads: Option<&mut Grads>) -> Result<Matrix> {
        let width = self.trunk.output_dim();
        let mut dh = Matrix::zeros(c.rows, width);
        match grads {
            Some(g) => {
                let n_trunk = self.trunk.tensors().len();
                let mut head_grads: Vec<_> = self.heads.iter().map(|h| h.zero_grads()).collect();
                for (t, rows, hc) in &c.heads {
                    let d = self.heads[*t].backward_accumulate(
                        hc,
                        &d_out.select_rows(rows),
                        &mut head_grads[*t],
                    )?;
                    dh.scatter_rows(rows, &d);
                }
                let (tg, dx) = self.trunk.backward(&c.trunk, &dh)?;
                let all = tg
                    .tensors()
                    .into_iter()
                    .chain(head_grads.iter().flat_map(|h| h.tensors()));
                for (dst, src) in g.0.iter_mut().zip(all) {
                    dst.copy_from_slice(src);
                }
                debug_assert_eq!(g.0.len(), n_trunk + 2 * self.heads.len());
                Ok(dx)
            }
            None => {
                for (t, rows, hc) in &c.heads {
                    let d = self.heads[*t].backward_input(hc, &d_out.select_rows(rows))?;
                    dh.scatter_rows(rows, &d);
                }
                self.trunk.backward_input(&c.trunk, &dh)
            }
        }
    }
}

impl Parameters for MultiHeadNet {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v = self.trunk.tensors();
        for h in &self.heads {
            v.extend(h.tensors());
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.trunk.tensors_mut();
        for h in &mut self.heads {
            v.extend(h.tensors_mut());
        }
        v
    }
}
