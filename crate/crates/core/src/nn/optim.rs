//! Stochastic gradient descent with classical momentum.

use super::Parameterized;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Gradients are rescaled when their global L2 norm exceeds this.
    pub grad_clip: f64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        OptimConfig {
            learning_rate: 0.02,
            momentum: 0.9,
            weight_decay: 1e-5,
            grad_clip: 5.0,
        }
    }
}

/// Velocity state is keyed by parameter name, so it survives architectural
/// no-ops (model rebuilt from a checkpoint) and resets cleanly when a name
/// disappears.
#[derive(Debug, Clone)]
pub struct SgdMomentum {
    pub config: OptimConfig,
    velocity: BTreeMap<String, Vec<f64>>,
    /// Parameters whose name starts with any of these prefixes are frozen:
    /// their gradients are ignored and their values never move.
    frozen_prefixes: Vec<String>,
}

impl SgdMomentum {
    pub fn new(config: OptimConfig) -> SgdMomentum {
        SgdMomentum {
            config,
            velocity: BTreeMap::new(),
            frozen_prefixes: Vec::new(),
        }
    }

    pub fn freeze_prefix(&mut self, prefix: impl Into<String>) {
        self.frozen_prefixes.push(prefix.into());
    }

    pub fn is_frozen(&self, name: &str) -> bool {
        self.frozen_prefixes.iter().any(|p| name.starts_with(p.as_str()))
    }

    /// Global L2 norm of all non-frozen gradients.
    pub fn grad_norm<M: Parameterized>(&self, model: &mut M) -> f64 {
        let mut sq = 0.0;
        model.visit_params("m", &mut |name, _, g| {
            if !self.is_frozen(name) {
                sq += g.iter().map(|v| v * v).sum::<f64>();
            }
        });
        sq.sqrt()
    }

    /// One update: `v = momentum * v + g + weight_decay * p; p -= lr * v`,
    /// with a global-norm clip applied to the raw gradients first.
    pub fn step<M: Parameterized>(&mut self, model: &mut M) {
        let norm = self.grad_norm(model);
        let clip = if norm > self.config.grad_clip && norm > 0.0 {
            self.config.grad_clip / norm
        } else {
            1.0
        };
        let cfg = self.config;
        let velocity = &mut self.velocity;
        let frozen = &self.frozen_prefixes;
        model.visit_params("m", &mut |name, p, g| {
            if frozen.iter().any(|pre| name.starts_with(pre.as_str())) {
                return;
            }
            let v = velocity
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; p.len()]);
            for i in 0..p.len() {
                v[i] = cfg.momentum * v[i] + clip * g[i] + cfg.weight_decay * p[i];
                p[i] -= cfg.learning_rate * v[i];
            }
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ParamVisitor, Parameterized};

    struct Quad {
        p: Vec<f64>,
        g: Vec<f64>,
        frozen_p: Vec<f64>,
        frozen_g: Vec<f64>,
    }

    impl Parameterized for Quad {
        fn visit_params(&mut self, prefix: &str, f: ParamVisitor<'_>) {
            f(&format!("{prefix}.free"), &mut self.p, &mut self.g);
            f(&format!("{prefix}.base.w"), &mut self.frozen_p, &mut self.frozen_g);
        }
    }

    #[test]
    fn descends_quadratic_and_respects_freeze() {
        let mut q = Quad {
            p: vec![4.0, -3.0],
            g: vec![0.0; 2],
            frozen_p: vec![1.5],
            frozen_g: vec![0.0],
        };
        let mut opt = SgdMomentum::new(OptimConfig {
            learning_rate: 0.1,
            momentum: 0.9,
            weight_decay: 0.0,
            grad_clip: 1e9,
        });
        opt.freeze_prefix("m.base");
        for _ in 0..200 {
            q.zero_grads();
            // loss = 0.5 * |p|^2, grad = p; frozen group also gets a grad
            for i in 0..2 {
                q.g[i] = q.p[i];
            }
            q.frozen_g[0] = 7.0;
            opt.step(&mut q);
        }
        assert!(q.p.iter().all(|v| v.abs() < 1e-3));
        assert_eq!(q.frozen_p[0], 1.5);
    }

    #[test]
    fn grad_clip_bounds_update_norm() {
        let mut q = Quad {
            p: vec![0.0, 0.0],
            g: vec![300.0, 400.0],
            frozen_p: vec![],
            frozen_g: vec![],
        };
        let mut opt = SgdMomentum::new(OptimConfig {
            learning_rate: 1.0,
            momentum: 0.0,
            weight_decay: 0.0,
            grad_clip: 5.0,
        });
        opt.step(&mut q);
        // raw norm 500 clipped to 5: step = (3, 4)
        assert!((q.p[0] + 3.0).abs() < 1e-12);
        assert!((q.p[1] + 4.0).abs() < 1e-12);
    }

    #[test]
    fn param_roundtrip_and_hash() {
        let mut q = Quad {
            p: vec![1.0, 2.0],
            g: vec![0.0; 2],
            frozen_p: vec![3.0],
            frozen_g: vec![0.0],
        };
        let snap = q.params_map();
        let h0 = q.param_hash();
        q.p[0] = 9.0;
        assert_ne!(q.param_hash(), h0);
        q.load_params(&snap).unwrap();
        assert_eq!(q.param_hash(), h0);
        // extra keys are rejected
        let mut bad = snap.clone();
        bad.insert("m.ghost".into(), vec![0.0]);
        assert!(q.load_params(&bad).is_err());
    }
}
