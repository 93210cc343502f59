//! Minimal neural-network substrate: CHW tensors, convolution and linear
//! layers with hand-written backward passes, SGD with momentum, and a
//! finite-difference gradient checker.
//!
//! Everything is `f64` and single threaded. Models expose their weights
//! through a named visitor (`Parameterized`), which is the one mechanism
//! behind optimizer updates, checkpoints, freezing, and parameter hashing,
//! so the set of trainable values can never drift between those consumers.

pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod tensor;

pub use layers::{
    silu, silu_backward, silu_deriv, silu_tensor, Conv2d, ConvStack, Linear, StackTrace,
};
pub use optim::SgdMomentum;
pub use tensor::Tensor;

use crate::error::{Error, Result};
use std::collections::BTreeMap;

/// Callback over `(name, values, grads)` of one parameter group.
pub type ParamVisitor<'a> = &'a mut dyn FnMut(&str, &mut Vec<f64>, &mut Vec<f64>);

/// A model whose parameters are reachable through a named visitor. Names are
/// dot-separated paths ("denoiser.enc0.c1.w") and must be unique within one
/// model.
pub trait Parameterized {
    fn visit_params(&mut self, prefix: &str, f: ParamVisitor<'_>);

    fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params("m", &mut |_, v, _| n += v.len());
        n
    }

    fn zero_grads(&mut self) {
        self.visit_params("m", &mut |_, _, g| g.fill(0.0));
    }

    /// Snapshot all parameters by name.
    fn params_map(&mut self) -> BTreeMap<String, Vec<f64>> {
        let mut map = BTreeMap::new();
        self.visit_params("m", &mut |name, v, _| {
            map.insert(name.to_string(), v.clone());
        });
        map
    }

    /// Restore parameters from a snapshot. Every visited name must be
    /// present with the right length, and the snapshot must contain nothing
    /// else, so a checkpoint from a different architecture is rejected.
    fn load_params(&mut self, map: &BTreeMap<String, Vec<f64>>) -> Result<()> {
        let mut seen = 0usize;
        let mut err: Option<Error> = None;
        self.visit_params("m", &mut |name, v, _| {
            if err.is_some() {
                return;
            }
            match map.get(name) {
                Some(stored) if stored.len() == v.len() => {
                    v.copy_from_slice(stored);
                    seen += 1;
                }
                Some(stored) => {
                    err = Some(Error::shape(
                        format!("{name}: {} values", v.len()),
                        format!("{}", stored.len()),
                    ));
                }
                None => err = Some(Error::BadFormat(format!("checkpoint missing {name}"))),
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        if seen != map.len() {
            return Err(Error::BadFormat(format!(
                "checkpoint has {} parameter groups, model visits {seen}",
                map.len()
            )));
        }
        Ok(())
    }

    /// Order-independent content hash of all parameters (FNV-1a over names
    /// and value bit patterns). Two models with identical weights hash
    /// identically.
    fn param_hash(&mut self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mix = |bytes: &[u8], h: &mut u64| {
            for &b in bytes {
                *h ^= u64::from(b);
                *h = h.wrapping_mul(0x1000_0000_01b3);
            }
        };
        self.visit_params("m", &mut |name, v, _| {
            mix(name.as_bytes(), &mut h);
            for x in v.iter() {
                mix(&x.to_bits().to_le_bytes(), &mut h);
            }
        });
        h
    }
}

/// Run a closure against one named parameter group. Returns `None` when the
/// model visits no parameter with that name.
pub fn with_param<M: Parameterized, R>(
    model: &mut M,
    name: &str,
    f: impl FnOnce(&mut Vec<f64>, &mut Vec<f64>) -> R,
) -> Option<R> {
    let mut f = Some(f);
    let mut out = None;
    model.visit_params("m", &mut |n, v, g| {
        if n == name {
            if let Some(f) = f.take() {
                out = Some(f(v, g));
            }
        }
    });
    out
}

/// All parameter names in visitation order.
pub fn param_names<M: Parameterized>(model: &mut M) -> Vec<String> {
    let mut names = Vec::new();
    model.visit_params("m", &mut |n, _, _| names.push(n.to_string()));
    names
}
