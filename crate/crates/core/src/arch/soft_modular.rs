//! Soft-modular network: layers of parallel modules mixed by per-sample
//! routing weights.
//!
//! A routing network embeds the features (`f`) and the task one-hot (`g`),
//! takes `u = f ⊙ g` through a shared hidden layer, and emits one `n × n`
//! logit block per adjacent module-layer pair. Row `j` of a block is
//! softmax-normalized over source modules `i`, so module `j` of layer
//! `l + 1` receives `Σ_i p[j][i] · out_i(l)`. The first module layer reads
//! the features directly and the last layer's module outputs are averaged
//! into the output head. With one module per layer every weight is exactly
//! 1 and the base path is a plain MLP.

use rand::Rng;

use super::ArchConfig;
use crate::error::{config_err, Result};
use crate::nn::{Activation, ActivationCache, Grads, Matrix, Mlp, ParamGrads, Parameters};

#[derive(Debug, Clone, PartialEq)]
pub struct SoftModularNet {
    n_modules: usize,
    /// `modules[layer][module]`, each a single ReLU layer.
    modules: Vec<Vec<Mlp>>,
    head: Mlp,
    state_emb: Mlp,
    task_emb: Mlp,
    route_hidden: Mlp,
    route_heads: Vec<Mlp>,
}

#[derive(Debug, Clone)]
pub struct Cache {
    rows: usize,
    modules: Vec<Vec<ActivationCache>>,
    probs: Vec<Matrix>,
    f: Matrix,
    g: Matrix,
    state: ActivationCache,
    task: ActivationCache,
    route_hidden: ActivationCache,
    route_heads: Vec<ActivationCache>,
    head: ActivationCache,
}

impl Cache {
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Concatenated module outputs per module layer.
    pub fn hidden(&self) -> Vec<Matrix> {
        self.modules
            .iter()
            .map(|layer| {
                let outs: Vec<&Matrix> = layer.iter().map(|c| c.output()).collect();
                Matrix::hcat(&outs).expect("module outputs share row count")
            })
            .collect()
    }

    /// Routing weights for pair `l` as `rows × (n·n)`, row-major `[j][i]`.
    pub fn routing_probs(&self) -> &[Matrix] {
        &self.probs
    }
}

/// Row-wise softmax over consecutive groups of `group` columns.
pub fn softmax_rows(logits: &Matrix, group: usize) -> Matrix {
    let mut p = logits.clone();
    for r in 0..p.rows() {
        for chunk in p.row_mut(r).chunks_mut(group) {
            let max = chunk.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for v in chunk.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in chunk.iter_mut() {
                *v /= sum;
            }
        }
    }
    p
}

fn bw(
    net: &Mlp,
    cache: &ActivationCache,
    d: &Matrix,
    slot: Option<&mut ParamGrads>,
) -> Result<Matrix> {
    match slot {
        Some(g) => net.backward_accumulate(cache, d, g),
        None => net.backward_input(cache, d),
    }
}

impl SoftModularNet {
    pub fn init<R: Rng + ?Sized>(
        feat_dim: usize,
        config: &ArchConfig,
        out_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let (n, w, r) = (config.n_modules, config.width, config.routing_dim);
        if n == 0 {
            return config_err("n_modules must be ≥ 1");
        }
        let mut modules = Vec::with_capacity(config.depth);
        for l in 0..config.depth {
            let in_dim = if l == 0 { feat_dim } else { w };
            modules.push(
                (0..n)
                    .map(|_| Mlp::init(&[in_dim, w], Activation::ReLU, Activation::ReLU, rng))
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        let head = Mlp::init(&[w, out_dim], Activation::ReLU, Activation::Identity, rng)?;
        let state_emb = Mlp::init(&[feat_dim, r], Activation::ReLU, Activation::ReLU, rng)?;
        let task_emb = Mlp::init(
            &[config.n_tasks, r],
            Activation::ReLU,
            Activation::Identity,
            rng,
        )?;
        let route_hidden = Mlp::init(&[r, r], Activation::ReLU, Activation::ReLU, rng)?;
        let route_heads = (1..config.depth)
            .map(|_| Mlp::init(&[r, n * n], Activation::ReLU, Activation::Identity, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            n_modules: n,
            modules,
            head,
            state_emb,
            task_emb,
            route_hidden,
            route_heads,
        })
    }

    pub fn n_modules(&self) -> usize {
        self.n_modules
    }

    pub fn modules(&self) -> &[Vec<Mlp>] {
        &self.modules
    }

    pub fn head(&self) -> &Mlp {
        &self.head
    }

    pub fn state_embedding(&self) -> &Mlp {
        &self.state_emb
    }

    pub fn task_embedding(&self) -> &Mlp {
        &self.task_emb
    }

    pub fn routing_hidden(&self) -> &Mlp {
        &self.route_hidden
    }

    pub fn routing_heads(&self) -> &[Mlp] {
        &self.route_heads
    }

    pub fn modules_mut(&mut self) -> &mut [Vec<Mlp>] {
        &mut self.modules
    }

    pub fn head_mut(&mut self) -> &mut Mlp {
        &mut self.head
    }

    pub fn forward(&self, feat: &Matrix, one_hot: &Matrix) -> Result<(Matrix, Cache)> {
        let n = self.n_modules;
        let rows = feat.rows();

        let (f, state) = self.state_emb.forward(feat)?;
        let (g, task) = self.task_emb.forward(one_hot)?;
        let mut u = f.clone();
        for (a, b) in u.data_mut().iter_mut().zip(g.data()) {
            *a *= b;
        }
        let (hr, route_hidden) = self.route_hidden.forward(&u)?;
        let mut probs = Vec::with_capacity(self.route_heads.len());
        let mut route_heads = Vec::with_capacity(self.route_heads.len());
        for head in &self.route_heads {
            let (logits, c) = head.forward(&hr)?;
            probs.push(softmax_rows(&logits, n));
            route_heads.push(c);
        }

        let mut layers: Vec<Vec<ActivationCache>> = Vec::with_capacity(self.modules.len());
        let first = self.modules[0]
            .iter()
            .map(|m| m.forward(feat).map(|(_, c)| c))
            .collect::<Result<Vec<_>>>()?;
        layers.push(first);
        for l in 1..self.modules.len() {
            let p = &probs[l - 1];
            let prev = &layers[l - 1];
            let width = prev[0].output().cols();
            let mut caches = Vec::with_capacity(n);
            for (j, module) in self.modules[l].iter().enumerate() {
                let mut mixed = Matrix::zeros(rows, width);
                for b in 0..rows {
                    let pr = &p.row(b)[j * n..(j + 1) * n];
                    let dst = mixed.row_mut(b);
                    for (i, &w_ji) in pr.iter().enumerate() {
                        for (d, s) in dst.iter_mut().zip(prev[i].output().row(b)) {
                            *d += w_ji * s;
                        }
                    }
                }
                caches.push(module.forward(&mixed)?.1);
            }
            layers.push(caches);
        }

        let last = layers.last().expect("depth ≥ 1");
        let mut h = last[0].output().clone();
        for c in &last[1..] {
            h.add_assign(c.output());
        }
        h.scale(1.0 / n as f64);
        let (out, head) = self.head.forward(&h)?;

        Ok((
            out,
            Cache {
                rows,
                modules: layers,
                probs,
                f,
                g,
                state,
                task,
                route_hidden,
                route_heads,
                head,
            },
        ))
    }

    /// Returns the feature gradient; accumulates parameter gradients into
    /// `grads` (in `tensors` order) when given.
    pub fn backward(&self, c: &Cache, d_out: &Matrix, grads: Option<&mut Grads>) -> Result<Matrix> {
        let n = self.n_modules;
        let rows = c.rows;
        let want = grads.is_some();
        let mut mg: Vec<Vec<ParamGrads>> = if want {
            self.modules
                .iter()
                .map(|l| l.iter().map(|m| m.zero_grads()).collect())
                .collect()
        } else {
            Vec::new()
        };
        let mut hg = want.then(|| self.head.zero_grads());
        let mut sg = want.then(|| self.state_emb.zero_grads());
        let mut tg = want.then(|| self.task_emb.zero_grads());
        let mut rhg = want.then(|| self.route_hidden.zero_grads());
        let mut rg: Vec<ParamGrads> = if want {
            self.route_heads.iter().map(|h| h.zero_grads()).collect()
        } else {
            Vec::new()
        };

        let mut dh = bw(&self.head, &c.head, d_out, hg.as_mut())?;
        dh.scale(1.0 / n as f64);
        let mut d_outs: Vec<Matrix> = vec![dh; n];
        let mut d_hr = Matrix::zeros(rows, self.route_hidden.output_dim());

        for l in (1..self.modules.len()).rev() {
            let mut d_in = Vec::with_capacity(n);
            for j in 0..n {
                let slot = if want { Some(&mut mg[l][j]) } else { None };
                d_in.push(bw(&self.modules[l][j], &c.modules[l][j], &d_outs[j], slot)?);
            }
            let p = &c.probs[l - 1];
            let prev = &c.modules[l - 1];
            let width = prev[0].output().cols();
            let mut d_prev = vec![Matrix::zeros(rows, width); n];
            let mut d_logits = Matrix::zeros(rows, n * n);
            for b in 0..rows {
                let pr = p.row(b);
                let dl = d_logits.row_mut(b);
                for j in 0..n {
                    let dj = d_in[j].row(b);
                    let mut dp = vec![0.0; n];
                    for i in 0..n {
                        let oi = prev[i].output().row(b);
                        dp[i] = dj.iter().zip(oi).map(|(a, b)| a * b).sum();
                        let w_ji = pr[j * n + i];
                        for (d, s) in d_prev[i].row_mut(b).iter_mut().zip(dj) {
                            *d += w_ji * s;
                        }
                    }
                    let pj = &pr[j * n..(j + 1) * n];
                    let dot: f64 = pj.iter().zip(&dp).map(|(a, b)| a * b).sum();
                    for i in 0..n {
                        dl[j * n + i] = pj[i] * (dp[i] - dot);
                    }
                }
            }
            let slot = if want { Some(&mut rg[l - 1]) } else { None };
            let d = bw(
                &self.route_heads[l - 1],
                &c.route_heads[l - 1],
                &d_logits,
                slot,
            )?;
            d_hr.add_assign(&d);
            d_outs = d_prev;
        }

        let feat_dim = self.state_emb.input_dim();
        let mut d_feat = Matrix::zeros(rows, feat_dim);
        for j in 0..n {
            let slot = if want { Some(&mut mg[0][j]) } else { None };
            d_feat.add_assign(&bw(
                &self.modules[0][j],
                &c.modules[0][j],
                &d_outs[j],
                slot,
            )?);
        }

        let du = bw(&self.route_hidden, &c.route_hidden, &d_hr, rhg.as_mut())?;
        let mut df = du.clone();
        for (a, b) in df.data_mut().iter_mut().zip(c.g.data()) {
            *a *= b;
        }
        let mut dg = du;
        for (a, b) in dg.data_mut().iter_mut().zip(c.f.data()) {
            *a *= b;
        }
        d_feat.add_assign(&bw(&self.state_emb, &c.state, &df, sg.as_mut())?);
        if let Some(t) = tg.as_mut() {
            self.task_emb.backward_accumulate(&c.task, &dg, t)?;
        }

        if let Some(g) = grads {
            let mut all: Vec<&[f64]> = Vec::new();
            for layer in &mg {
                for m in layer {
                    all.extend(m.tensors());
                }
            }
            all.extend(hg.as_ref().expect("want").tensors());
            all.extend(sg.as_ref().expect("want").tensors());
            all.extend(tg.as_ref().expect("want").tensors());
            all.extend(rhg.as_ref().expect("want").tensors());
            for r in &rg {
                all.extend(r.tensors());
            }
            for (dst, src) in g.0.iter_mut().zip(all) {
                for (d, s) in dst.iter_mut().zip(src) {
                    *d += s;
                }
            }
        }
        Ok(d_feat)
    }
}

impl Parameters for SoftModularNet {
    fn tensors(&self) -> Vec<&[f64]> {
        let mut v: Vec<&[f64]> = Vec::new();
        for layer in &self.modules {
            for m in layer {
                v.extend(m.tensors());
            }
        }
        v.extend(self.head.tensors());
        v.extend(self.state_emb.tensors());
        v.extend(self.task_emb.tensors());
        v.extend(self.route_hidden.tensors());
        for h in &self.route_heads {
            v.extend(h.tensors());
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v: Vec<&mut [f64]> = Vec::new();
        for layer in &mut self.modules {
            for m in layer {
                v.extend(m.tensors_mut());
            }
        }
        v.extend(self.head.tensors_mut());
        v.extend(self.state_emb.tensors_mut());
        v.extend(self.task_emb.tensors_mut());
        v.extend(self.route_hidden.tensors_mut());
        for h in &mut self.route_heads {
            v.extend(h.tensors_mut());
        }
        v
    }
}
