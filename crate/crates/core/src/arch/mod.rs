//! Task-conditioned actor and critic architectures.
//!
//! Every network consumes rows laid out as `[core | one_hot(task) | extra]`
//! where `extra` is the action for critics and empty for actors. The plain
//! and multi-head kinds feed the whole row (one-hot included) to their
//! trunk. The soft-modular, parameter-compositional and orthogonal-expert
//! kinds strip the one-hot, use it to select task-specific machinery, and
//! consume `[core | extra]` as features.
//!
//! Input gradients are reported for the full row. Columns of the one-hot
//! are zero for the kinds that treat the task id as a selector.

mod budget;
mod moore;
mod multi_head;
mod paco;
mod soft_modular;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

pub use budget::{match_param_budget, simple_ff_param_count};
pub use moore::{gram_schmidt, GramSchmidt, MooreNet, GS_DEGENERATE_NORM};
pub use multi_head::MultiHeadNet;
pub use paco::PacoNet;
pub use soft_modular::{softmax_rows, SoftModularNet};

use crate::error::{config_err, shape_err, Error, Result};
use crate::nn::{Activation, ActivationCache, Grads, Matrix, Mlp, Parameters};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArchKind {
    SimpleFF,
    MTMHSAC,
    SoftModular,
    PaCo,
    MOORE,
}

impl ArchKind {
    pub const ALL: [ArchKind; 5] = [
        ArchKind::SimpleFF,
        ArchKind::MTMHSAC,
        ArchKind::SoftModular,
        ArchKind::PaCo,
        ArchKind::MOORE,
    ];
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ArchKind::SimpleFF => "SimpleFF",
            ArchKind::MTMHSAC => "MTMHSAC",
            ArchKind::SoftModular => "SoftModular",
            ArchKind::PaCo => "PaCo",
            ArchKind::MOORE => "MOORE",
        };
        f.write_str(s)
    }
}

impl FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ArchKind::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown architecture kind `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Actor,
    Critic,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ArchConfig {
    pub kind: ArchKind,
    pub width: usize,
    /// Hidden layer count.
    pub depth: usize,
    /// Soft-modular modules per layer.
    pub n_modules: usize,
    pub routing_dim: usize,
    /// Parameter-compositional basis size K.
    pub n_param_sets: usize,
    /// Orthogonal-expert count k.
    pub n_experts: usize,
    pub n_tasks: usize,
}

impl ArchConfig {
    /// Defaults per kind. The baseline kinds are sized so their
    /// ten-task actor lands near a width-400 plain network.
    pub fn default_for(kind: ArchKind, n_tasks: usize) -> Self {
        let width = match kind {
            ArchKind::SimpleFF | ArchKind::MTMHSAC => 400,
            ArchKind::SoftModular | ArchKind::MOORE => 200,
            ArchKind::PaCo => 176,
        };
        Self {
            kind,
            width,
            depth: 3,
            n_modules: 4,
            routing_dim: 64,
            n_param_sets: 5,
            n_experts: 4,
            n_tasks,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return config_err("width must be ≥ 1");
        }
        if self.depth == 0 {
            return config_err("depth must be ≥ 1");
        }
        if self.n_tasks == 0 {
            return config_err("n_tasks must be ≥ 1");
        }
        match self.kind {
            ArchKind::SoftModular if self.n_modules == 0 || self.routing_dim == 0 => {
                config_err("soft-modular nets need n_modules ≥ 1 and routing_dim ≥ 1")
            }
            ArchKind::PaCo if self.n_param_sets == 0 => config_err("PaCo needs K ≥ 1"),
            ArchKind::MOORE if self.n_experts == 0 => config_err("MOORE needs k ≥ 1"),
            ArchKind::MOORE if self.n_experts > self.width => config_err(format!(
                "{} experts cannot be orthonormal in width {}",
                self.n_experts, self.width
            )),
            _ => Ok(()),
        }
    }

    /// Short human-readable descriptor, stable across runs.
    pub fn descriptor(&self) -> String {
        let (w, d) = (self.width, self.depth);
        match self.kind {
            ArchKind::SimpleFF => format!("SimpleFF(w={w},d={d})"),
            ArchKind::MTMHSAC => format!("MTMHSAC(w={w},d={d},heads={})", self.n_tasks),
            ArchKind::SoftModular => format!(
                "SoftModular(w={w},d={d},m={},r={})",
                self.n_modules, self.routing_dim
            ),
            ArchKind::PaCo => format!("PaCo(w={w},d={d},K={})", self.n_param_sets),
            ArchKind::MOORE => format!("MOORE(w={w},d={d},k={})", self.n_experts),
        }
    }
}

/// Column layout of a network's input rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InputLayout {
    pub core_dim: usize,
    pub n_tasks: usize,
    pub extra_dim: usize,
}

impl InputLayout {
    pub fn total(&self) -> usize {
        self.core_dim + self.n_tasks + self.extra_dim
    }

    pub fn feature_dim(&self) -> usize {
        self.core_dim + self.extra_dim
    }

    /// Task ids from the one-hot block; rejects rows that are not one-hot.
    pub fn task_ids(&self, x: &Matrix) -> Result<Vec<usize>> {
        if x.cols() != self.total() {
            return shape_err(format!(
                "input has {} columns, layout expects {}",
                x.cols(),
                self.total()
            ));
        }
        (0..x.rows())
            .map(|r| {
                let hot = &x.row(r)[self.core_dim..self.core_dim + self.n_tasks];
                let mut id = None;
                for (i, &v) in hot.iter().enumerate() {
                    if v == 1.0 && id.is_none() {
                        id = Some(i);
                    } else if v != 0.0 {
                        id = None;
                        break;
                    }
                }
                id.ok_or_else(|| Error::Shape(format!("row {r} has no valid one-hot task id")))
            })
            .collect()
    }

    /// `[core | extra]` columns.
    pub fn features(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows(), self.feature_dim());
        for r in 0..x.rows() {
            let src = x.row(r);
            let dst = out.row_mut(r);
            dst[..self.core_dim].copy_from_slice(&src[..self.core_dim]);
            dst[self.core_dim..].copy_from_slice(&src[self.core_dim + self.n_tasks..]);
        }
        out
    }

    /// Full-row gradient from a feature gradient, zeros on the one-hot.
    pub fn expand_feature_grad(&self, d_feat: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(d_feat.rows(), self.total());
        for r in 0..d_feat.rows() {
            let src = d_feat.row(r);
            let dst = out.row_mut(r);
            dst[..self.core_dim].copy_from_slice(&src[..self.core_dim]);
            dst[self.core_dim + self.n_tasks..].copy_from_slice(&src[self.core_dim..]);
        }
        out
    }

    pub fn one_hot(&self, task_ids: &[usize]) -> Matrix {
        let mut m = Matrix::zeros(task_ids.len(), self.n_tasks);
        for (r, &t) in task_ids.iter().enumerate() {
            m.set(r, t, 1.0);
        }
        m
    }
}

/// Row indices grouped by task, in ascending task order.
pub(crate) fn group_by_task(task_ids: &[usize], n_tasks: usize) -> Vec<(usize, Vec<usize>)> {
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); n_tasks];
    for (r, &t) in task_ids.iter().enumerate() {
        groups[t].push(r);
    }
    groups
        .into_iter()
        .enumerate()
        .filter(|(_, rows)| !rows.is_empty())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub enum NetBody {
    Plain(Mlp),
    MultiHead(MultiHeadNet),
    SoftModular(SoftModularNet),
    PaCo(PacoNet),
    Moore(MooreNet),
}

/// Per-kind forward record.
#[derive(Debug, Clone)]
pub enum NetCache {
    Plain(ActivationCache),
    MultiHead(multi_head::Cache),
    SoftModular(soft_modular::Cache),
    PaCo(paco::Cache),
    Moore(moore::Cache),
}

/// A built actor or critic network of any kind.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskConditionedNet {
    config: ArchConfig,
    layout: InputLayout,
    role: Role,
    out_dim: usize,
    body: NetBody,
}

/// Builds an actor (`2·action_dim` outputs: mean then raw log-std) or a
/// critic (one output; input is observation concatenated with action).
pub fn build<R: Rng + ?Sized>(
    config: &ArchConfig,
    obs_dim: usize,
    action_dim: usize,
    role: Role,
    rng: &mut R,
) -> Result<TaskConditionedNet> {
    config.validate()?;
    if obs_dim <= config.n_tasks {
        return config_err(format!(
            "obs_dim {obs_dim} leaves no room beside a {}-task one-hot",
            config.n_tasks
        ));
    }
    let layout = InputLayout {
        core_dim: obs_dim - config.n_tasks,
        n_tasks: config.n_tasks,
        extra_dim: match role {
            Role::Actor => 0,
            Role::Critic => action_dim,
        },
    };
    let out_dim = match role {
        Role::Actor => 2 * action_dim,
        Role::Critic => 1,
    };
    let hidden = vec![config.width; config.depth];
    let body = match config.kind {
        ArchKind::SimpleFF => {
            let mut dims = vec![layout.total()];
            dims.extend(&hidden);
            dims.push(out_dim);
            NetBody::Plain(Mlp::init(
                &dims,
                Activation::ReLU,
                Activation::Identity,
                rng,
            )?)
        }
        ArchKind::MTMHSAC => {
            NetBody::MultiHead(MultiHeadNet::init(layout.total(), config, out_dim, rng)?)
        }
        ArchKind::SoftModular => NetBody::SoftModular(SoftModularNet::init(
            layout.feature_dim(),
            config,
            out_dim,
            rng,
        )?),
        ArchKind::PaCo => NetBody::PaCo(PacoNet::init(layout.feature_dim(), config, out_dim, rng)?),
        ArchKind::MOORE => {
            NetBody::Moore(MooreNet::init(layout.feature_dim(), config, out_dim, rng)?)
        }
    };
    Ok(TaskConditionedNet {
        config: config.clone(),
        layout,
        role,
        out_dim,
        body,
    })
}

impl TaskConditionedNet {
    pub fn config(&self) -> &ArchConfig {
        &self.config
    }

    pub fn kind(&self) -> ArchKind {
        self.config.kind
    }

    pub fn layout(&self) -> InputLayout {
        self.layout
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn body(&self) -> &NetBody {
        &self.body
    }

    pub fn body_mut(&mut self) -> &mut NetBody {
        &mut self.body
    }

    pub fn descriptor(&self) -> String {
        self.config.descriptor()
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, NetCache)> {
        let tasks = self.layout.task_ids(x)?;
        match &self.body {
            NetBody::Plain(m) => {
                let (y, c) = m.forward(x)?;
                Ok((y, NetCache::Plain(c)))
            }
            NetBody::MultiHead(n) => {
                let (y, c) = n.forward(x, &tasks)?;
                Ok((y, NetCache::MultiHead(c)))
            }
            NetBody::SoftModular(n) => {
                let feat = self.layout.features(x);
                let hot = self.layout.one_hot(&tasks);
                let (y, c) = n.forward(&feat, &hot)?;
                Ok((y, NetCache::SoftModular(c)))
            }
            NetBody::PaCo(n) => {
                let feat = self.layout.features(x);
                let (y, c) = n.forward(&feat, &tasks)?;
                Ok((y, NetCache::PaCo(c)))
            }
            NetBody::Moore(n) => {
                let feat = self.layout.features(x);
                let (y, c) = n.forward(&feat, &tasks)?;
                Ok((y, NetCache::Moore(c)))
            }
        }
    }

    /// Output only, discarding the cache.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        Ok(self.forward(x)?.0)
    }

    fn check_out_grad(&self, cache: &NetCache, d_out: &Matrix) -> Result<()> {
        let rows = cache.rows();
        if d_out.rows() != rows || d_out.cols() != self.out_dim {
            return shape_err(format!(
                "output gradient is {}x{}, expected {rows}x{}",
                d_out.rows(),
                d_out.cols(),
                self.out_dim
            ));
        }
        Ok(())
    }

    fn backward_impl(
        &self,
        cache: &NetCache,
        d_out: &Matrix,
        grads: Option<&mut Grads>,
    ) -> Result<Matrix> {
        self.check_out_grad(cache, d_out)?;
        match (&self.body, cache) {
            (NetBody::Plain(m), NetCache::Plain(c)) => match grads {
                Some(g) => {
                    let (pg, dx) = m.backward(c, d_out)?;
                    for (dst, src) in g.0.iter_mut().zip(pg.tensors()) {
                        dst.copy_from_slice(src);
                    }
                    Ok(dx)
                }
                None => m.backward_input(c, d_out),
            },
            (NetBody::MultiHead(n), NetCache::MultiHead(c)) => n.backward(c, d_out, grads),
            (NetBody::SoftModular(n), NetCache::SoftModular(c)) => {
                let d_feat = n.backward(c, d_out, grads)?;
                Ok(self.layout.expand_feature_grad(&d_feat))
            }
            (NetBody::PaCo(n), NetCache::PaCo(c)) => {
                let d_feat = n.backward(c, d_out, grads)?;
                Ok(self.layout.expand_feature_grad(&d_feat))
            }
            (NetBody::Moore(n), NetCache::Moore(c)) => {
                let d_feat = n.backward(c, d_out, grads)?;
                Ok(self.layout.expand_feature_grad(&d_feat))
            }
            _ => shape_err("cache was produced by a different architecture"),
        }
    }

    /// Reverse pass for `sum(output ⊙ d_out)`: parameter and input gradients.
    pub fn backward(&self, cache: &NetCache, d_out: &Matrix) -> Result<(Grads, Matrix)> {
        let mut g = Grads::zeros_like(self);
        let dx = self.backward_impl(cache, d_out, Some(&mut g))?;
        Ok((g, dx))
    }

    /// Input gradient only; parameter gradients are skipped.
    pub fn backward_input(&self, cache: &NetCache, d_out: &Matrix) -> Result<Matrix> {
        self.backward_impl(cache, d_out, None)
    }

    /// Post-activation hidden units per hidden layer (output heads excluded).
    pub fn hidden_activations(&self, cache: &NetCache) -> Vec<Matrix> {
        match cache {
            NetCache::Plain(c) => c.hidden().to_vec(),
            NetCache::MultiHead(c) => c.hidden(),
            NetCache::SoftModular(c) => c.hidden(),
            NetCache::PaCo(c) => c.hidden(),
            NetCache::Moore(c) => c.hidden(),
        }
    }

    /// Tensor indices of the output-side parameters: the last layer of a
    /// plain net, all task heads, the output head of soft-modular and
    /// orthogonal-expert nets, and the task weight table of PaCo.
    pub fn head_tensors(&self) -> std::ops::Range<usize> {
        let n = self.tensors().len();
        match &self.body {
            NetBody::Plain(_) | NetBody::Moore(_) => n - 2..n,
            NetBody::MultiHead(m) => m.trunk().tensors().len()..n,
            NetBody::SoftModular(m) => {
                let start = 2 * m.modules().iter().map(|l| l.len()).sum::<usize>();
                start..start + 2
            }
            NetBody::PaCo(_) => 1..2,
        }
    }

    /// Hidden layer count as probed by [`TaskConditionedNet::hidden_activations`].
    pub fn hidden_layer_count(&self) -> usize {
        self.config.depth
    }
}

impl NetCache {
    pub fn rows(&self) -> usize {
        match self {
            NetCache::Plain(c) => c.input().rows(),
            NetCache::MultiHead(c) => c.rows(),
            NetCache::SoftModular(c) => c.rows(),
            NetCache::PaCo(c) => c.rows(),
            NetCache::Moore(c) => c.rows(),
        }
    }
}

impl Parameters for TaskConditionedNet {
    fn tensors(&self) -> Vec<&[f64]> {
        match &self.body {
            NetBody::Plain(m) => m.tensors(),
            NetBody::MultiHead(n) => n.tensors(),
            NetBody::SoftModular(n) => n.tensors(),
            NetBody::PaCo(n) => n.tensors(),
            NetBody::Moore(n) => n.tensors(),
        }
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        match &mut self.body {
            NetBody::Plain(m) => m.tensors_mut(),
            NetBody::MultiHead(n) => n.tensors_mut(),
            NetBody::SoftModular(n) => n.tensors_mut(),
            NetBody::PaCo(n) => n.tensors_mut(),
            NetBody::Moore(n) => n.tensors_mut(),
        }
    }
}

/// Parameter count of a kind without keeping the network around.
pub fn param_count_of<R: Rng + ?Sized>(
    config: &ArchConfig,
    obs_dim: usize,
    action_dim: usize,
    role: Role,
    rng: &mut R,
) -> Result<usize> {
    if config.kind == ArchKind::SimpleFF {
        let (in_dim, out) = match role {
            Role::Actor => (obs_dim, 2 * action_dim),
            Role::Critic => (obs_dim + action_dim, 1),
        };
        config.validate()?;
        return Ok(simple_ff_param_count(
            in_dim,
            config.depth,
            config.width,
            out,
        ));
    }
    Ok(build(config, obs_dim, action_dim, role, rng)?.param_count())
}

pub(crate) fn mlp_stack(in_dim: usize, width: usize, depth: usize) -> Vec<usize> {
    let mut dims = vec![in_dim];
    dims.extend(std::iter::repeat_n(width, depth));
    dims
}
