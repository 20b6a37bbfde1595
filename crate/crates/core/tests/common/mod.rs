#![allow(dead_code)]

use mtrl_core::arch::{self, ArchConfig, ArchKind, NetBody, Role, TaskConditionedNet};
use mtrl_core::nn::{Activation, Matrix, Mlp, Parameters};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const CORE: usize = 8;
pub const ACT: usize = 2;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn small_config(kind: ArchKind, n_tasks: usize) -> ArchConfig {
    ArchConfig {
        kind,
        width: 6,
        depth: 2,
        n_modules: 2,
        routing_dim: 4,
        n_param_sets: 2,
        n_experts: 3,
        n_tasks,
    }
}

pub fn build_small(kind: ArchKind, n_tasks: usize, role: Role, seed: u64) -> TaskConditionedNet {
    arch::build(
        &small_config(kind, n_tasks),
        CORE + n_tasks,
        ACT,
        role,
        &mut rng(seed),
    )
    .unwrap()
}

/// Random input rows `[core | one_hot | extra]` with the given task ids.
pub fn random_rows<R: Rng>(net: &TaskConditionedNet, tasks: &[usize], rng: &mut R) -> Matrix {
    let l = net.layout();
    let mut x = Matrix::zeros(tasks.len(), l.total());
    for (r, &t) in tasks.iter().enumerate() {
        let row = x.row_mut(r);
        for c in 0..l.core_dim {
            row[c] = rng.random_range(-1.0..1.0);
        }
        row[l.core_dim + t] = 1.0;
        for c in 0..l.extra_dim {
            row[l.core_dim + l.n_tasks + c] = rng.random_range(-1.0..1.0);
        }
    }
    x
}

/// Adds uniform noise to every parameter so no bias sits exactly at zero,
/// which would put dead rows on a ReLU kink.
pub fn jitter<R: Rng>(net: &mut TaskConditionedNet, scale: f64, rng: &mut R) {
    for t in net.tensors_mut() {
        t.iter_mut()
            .for_each(|v| *v += rng.random_range(-scale..scale));
    }
}

fn weighted_sum(net: &TaskConditionedNet, x: &Matrix, r: &Matrix) -> f64 {
    let y = net.predict(x).unwrap();
    y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Largest relative error between analytic and central-difference
/// parameter gradients of `sum(out ⊙ r)`, over entries with |grad| > 1e-6.
pub fn max_param_grad_error(
    net: &TaskConditionedNet,
    x: &Matrix,
    r: &Matrix,
    h: f64,
) -> (f64, usize) {
    let (_, cache) = net.forward(x).unwrap();
    let (g, _) = net.backward(&cache, r).unwrap();
    let analytic: Vec<f64> = g.0.concat();
    let base = net.flat();
    let mut probe = net.clone();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for i in 0..base.len() {
        let mut p = base.clone();
        p[i] += h;
        probe.load_flat(&p);
        let plus = weighted_sum(&probe, x, r);
        p[i] -= 2.0 * h;
        probe.load_flat(&p);
        let minus = weighted_sum(&probe, x, r);
        let fd = (plus - minus) / (2.0 * h);
        let a = analytic[i];
        if a.abs() > 1e-6 || fd.abs() > 1e-6 {
            checked += 1;
            let rel = (a - fd).abs() / a.abs().max(fd.abs());
            worst = worst.max(rel);
        }
    }
    (worst, checked)
}

pub fn max_input_grad_error(net: &TaskConditionedNet, x: &Matrix, r: &Matrix, h: f64) -> f64 {
    let (_, cache) = net.forward(x).unwrap();
    let dx = net.backward_input(&cache, r).unwrap();
    let l = net.layout();
    let mut worst = 0.0f64;
    for row in 0..x.rows() {
        for c in (0..l.core_dim).chain(l.core_dim + l.n_tasks..l.total()) {
            let mut xp = x.clone();
            xp.set(row, c, x.get(row, c) + h);
            let mut xm = x.clone();
            xm.set(row, c, x.get(row, c) - h);
            let fd = (weighted_sum(net, &xp, r) - weighted_sum(net, &xm, r)) / (2.0 * h);
            let a = dx.get(row, c);
            if a.abs() > 1e-6 || fd.abs() > 1e-6 {
                worst = worst.max((a - fd).abs() / a.abs().max(fd.abs()));
            }
        }
    }
    worst
}

pub fn naive_layer(w: &Matrix, b: &[f64], x: &[f64], act: Activation) -> Vec<f64> {
    let mut out = Vec::with_capacity(w.rows());
    for o in 0..w.rows() {
        let mut s = b[o];
        for i in 0..w.cols() {
            s += w.get(o, i) * x[i];
        }
        out.push(act.apply(s));
    }
    out
}

pub fn naive_mlp(m: &Mlp, x: &[f64]) -> Vec<f64> {
    let n = m.weights().len();
    let mut h = x.to_vec();
    for l in 0..n {
        let act = if l + 1 == n {
            m.output_activation()
        } else {
            m.activation()
        };
        h = naive_layer(&m.weights()[l], &m.biases()[l], &h, act);
    }
    h
}

fn naive_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.iter().map(|v| v / s).collect()
}

/// Textbook Gram-Schmidt written independently of the library.
pub fn textbook_gs(vs: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for v in vs {
        let mut u = v.clone();
        for q in &basis {
            let c: f64 = q.iter().zip(v).map(|(a, b)| a * b).sum();
            for t in 0..u.len() {
                u[t] -= c * q[t];
            }
        }
        let n = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n < 1e-8 {
            basis.push(vec![0.0; u.len()]);
        } else {
            basis.push(u.iter().map(|a| a / n).collect());
        }
    }
    basis
}

/// Row-by-row loop implementation of every kind's forward pass.
pub fn naive_forward(net: &TaskConditionedNet, x: &Matrix) -> Matrix {
    let l = net.layout();
    let mut out = Vec::new();
    for r in 0..x.rows() {
        let row = x.row(r);
        let task = (0..l.n_tasks)
            .find(|&t| row[l.core_dim + t] == 1.0)
            .unwrap();
        let mut feat: Vec<f64> = row[..l.core_dim].to_vec();
        feat.extend_from_slice(&row[l.core_dim + l.n_tasks..]);
        let y = match net.body() {
            NetBody::Plain(m) => naive_mlp(m, row),
            NetBody::MultiHead(n) => {
                let h = naive_mlp(n.trunk(), row);
                naive_mlp(&n.heads()[task], &h)
            }
            NetBody::SoftModular(n) => {
                let k = n.n_modules();
                let f = naive_mlp(n.state_embedding(), &feat);
                let hot: Vec<f64> = (0..l.n_tasks)
                    .map(|t| if t == task { 1.0 } else { 0.0 })
                    .collect();
                let g = naive_mlp(n.task_embedding(), &hot);
                let u: Vec<f64> = f.iter().zip(&g).map(|(a, b)| a * b).collect();
                let hr = naive_mlp(n.routing_hidden(), &u);
                let mut outs: Vec<Vec<f64>> =
                    n.modules()[0].iter().map(|m| naive_mlp(m, &feat)).collect();
                for layer in 1..n.modules().len() {
                    let logits = naive_mlp(&n.routing_heads()[layer - 1], &hr);
                    let mut next = Vec::new();
                    for j in 0..k {
                        let p = naive_softmax(&logits[j * k..(j + 1) * k]);
                        let mut mixed = vec![0.0; outs[0].len()];
                        for i in 0..k {
                            for t in 0..mixed.len() {
                                mixed[t] += p[i] * outs[i][t];
                            }
                        }
                        next.push(naive_mlp(&n.modules()[layer][j], &mixed));
                    }
                    outs = next;
                }
                let mut h = vec![0.0; outs[0].len()];
                for o in &outs {
                    for t in 0..h.len() {
                        h[t] += o[t] / k as f64;
                    }
                }
                naive_mlp(n.head(), &h)
            }
            NetBody::PaCo(n) => {
                let basis = n.basis();
                let w = n.task_weights().row(task);
                let mut theta = vec![0.0; basis.rows()];
                for p in 0..basis.rows() {
                    for j in 0..basis.cols() {
                        theta[p] += basis.get(p, j) * w[j];
                    }
                }
                let dims = n.dims();
                let mut off = 0;
                let mut h = feat.clone();
                for li in 0..dims.len() - 1 {
                    let (fi, fo) = (dims[li], dims[li + 1]);
                    let wm = Matrix::from_vec(fo, fi, theta[off..off + fi * fo].to_vec()).unwrap();
                    off += fi * fo;
                    let b = theta[off..off + fo].to_vec();
                    off += fo;
                    let act = if li + 2 == dims.len() {
                        Activation::Identity
                    } else {
                        Activation::ReLU
                    };
                    h = naive_layer(&wm, &b, &h, act);
                }
                h
            }
            NetBody::Moore(n) => {
                let es: Vec<Vec<f64>> = n.experts().iter().map(|e| naive_mlp(e, &feat)).collect();
                let q = textbook_gs(&es);
                let omega = n.task_weights().row(task);
                let mut h = vec![0.0; q[0].len()];
                for (j, qj) in q.iter().enumerate() {
                    for t in 0..h.len() {
                        h[t] += omega[j] * qj[t];
                    }
                }
                naive_mlp(n.head(), &h)
            }
        };
        out.push(y);
    }
    Matrix::from_rows(&out).unwrap()
}

pub fn max_abs_diff(a: &Matrix, b: &Matrix) -> f64 {
    assert_eq!((a.rows(), a.cols()), (b.rows(), b.cols()));
    a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn random_matrix<R: Rng>(rows: usize, cols: usize, rng: &mut R) -> Matrix {
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    Matrix::from_vec(rows, cols, data).unwrap()
}

pub fn all_roles() -> [Role; 2] {
    [Role::Actor, Role::Critic]
}
