//! Dormant-neuron fractions and parameter norms.
//!
//! A hidden unit's score is its mean absolute activation over a probe
//! batch divided by the mean of that statistic across its layer. Units
//! scoring at or below `tau` are dormant; a layer whose mean is zero is
//! dormant in full.

use std::fmt;

use crate::arch::TaskConditionedNet;
use crate::error::Result;
use crate::nn::{Matrix, Parameters};
use crate::sac::SacState;

pub const DEFAULT_TAU: f64 = 0.025;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    Actor,
    Critic,
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Component::Actor => "actor",
            Component::Critic => "critic",
        })
    }
}

/// Mean |post-activation| per hidden unit, one vector per hidden layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NeuronStats {
    pub layers: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DormantReport {
    pub tau: f64,
    pub component: Component,
    pub layer_dormant: Vec<usize>,
    pub layer_sizes: Vec<usize>,
    pub fraction: f64,
}

impl DormantReport {
    pub fn dormant(&self) -> usize {
        self.layer_dormant.iter().sum()
    }

    pub fn total(&self) -> usize {
        self.layer_sizes.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NormReport {
    pub actor: f64,
    pub actor_trunk: f64,
    pub actor_heads: f64,
    pub critic1: f64,
    pub critic2: f64,
    /// Norm of both critics' parameters taken together.
    pub critic: f64,
}

pub fn collect_activations(net: &TaskConditionedNet, probe: &Matrix) -> Result<NeuronStats> {
    let (_, cache) = net.forward(probe)?;
    let rows = probe.rows().max(1) as f64;
    let layers = net
        .hidden_activations(&cache)
        .iter()
        .map(|h| {
            let mut acc = vec![0.0; h.cols()];
            for r in 0..h.rows() {
                for (a, v) in acc.iter_mut().zip(h.row(r)) {
                    *a += v.abs();
                }
            }
            acc.iter().map(|a| a / rows).collect()
        })
        .collect();
    Ok(NeuronStats { layers })
}

pub fn dormant_fraction(stats: &NeuronStats, tau: f64, component: Component) -> DormantReport {
    let mut layer_dormant = Vec::with_capacity(stats.layers.len());
    let mut layer_sizes = Vec::with_capacity(stats.layers.len());
    for layer in &stats.layers {
        let mean = layer.iter().sum::<f64>() / layer.len().max(1) as f64;
        let dormant = if mean == 0.0 {
            layer.len()
        } else {
            layer.iter().filter(|s| *s / mean <= tau).count()
        };
        layer_dormant.push(dormant);
        layer_sizes.push(layer.len());
    }
    let total: usize = layer_sizes.iter().sum();
    let dormant: usize = layer_dormant.iter().sum();
    DormantReport {
        tau,
        component,
        fraction: if total == 0 {
            0.0
        } else {
            dormant as f64 / total as f64
        },
        layer_dormant,
        layer_sizes,
    }
}

/// Convenience: probe a network and score it.
pub fn dormant_report(
    net: &TaskConditionedNet,
    probe: &Matrix,
    tau: f64,
    component: Component,
) -> Result<DormantReport> {
    Ok(dormant_fraction(
        &collect_activations(net, probe)?,
        tau,
        component,
    ))
}

fn sq(ts: &[&[f64]]) -> f64 {
    ts.iter().flat_map(|t| t.iter()).map(|v| v * v).sum()
}

pub fn param_norms(sac: &SacState) -> NormReport {
    let actor = sac.actor.tensors();
    let heads = sac.actor.head_tensors();
    let head_sq = sq(&actor[heads.clone()]);
    let total_sq = sq(&actor);
    let c1 = sq(&sac.critic1.tensors());
    let c2 = sq(&sac.critic2.tensors());
    NormReport {
        actor: total_sq.sqrt(),
        actor_trunk: (total_sq - head_sq).max(0.0).sqrt(),
        actor_heads: head_sq.sqrt(),
        critic1: c1.sqrt(),
        critic2: c2.sqrt(),
        critic: (c1 + c2).sqrt(),
    }
}
