//! Named parameter storage and the Adam optimizer.
//!
//! Networks own a [`ParamVec`]; before each objective they bind every
//! parameter onto a [`Tape`](super::Tape), and after `backward` they absorb
//! the leaf gradients back. [`AdamState`] keeps first/second moment buffers
//! aligned with the parameter list by index.

use crate::error::{Error, Result};
use crate::neuro::tape::{NodeId, Tape};
use crate::neuro::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub grad: Tensor,
}

/// Ordered, named parameter collection. Index = parameter id.
#[derive(Debug, Clone, Default)]
pub struct ParamVec {
    params: Vec<Param>,
}

impl ParamVec {
    pub fn new() -> Self {
        ParamVec { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> usize {
        let (r, c) = value.shape();
        self.params.push(Param { name: name.into(), value, grad: Tensor::zeros(r, c) });
        self.params.len() - 1
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: usize) -> &Param {
        &self.params[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Param {
        &mut self.params[id]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
    }

    /// Bind every parameter as a differentiable leaf, in order.
    pub fn bind(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.params.iter().map(|p| tape.leaf_grad(p.value.clone())).collect()
    }

    /// Bind every parameter as a constant leaf (no gradients), e.g. when the
    /// critic is evaluated inside the policy objective.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Vec<NodeId> {
        self.params.iter().map(|p| tape.leaf(p.value.clone())).collect()
    }

    /// Accumulate tape gradients (from a prior `backward`) into `grad`.
    pub fn absorb_grads(&mut self, tape: &Tape, ids: &[NodeId]) {
        for (p, &id) in self.params.iter_mut().zip(ids) {
            if let Some(g) = tape.grad(id) {
                for (pg, &gg) in p.grad.data_mut().iter_mut().zip(g.data()) {
                    *pg += gg;
                }
            }
        }
    }

    /// Polyak blend toward `source`: `self <- iota * source + (1 - iota) * self`.
    pub fn blend_from(&mut self, source: &ParamVec, iota: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&iota) {
            return Err(Error::Config(format!("blend factor must lie in [0, 1], got {iota}")));
        }
        if self.params.len() != source.params.len() {
            return Err(Error::Shape(format!(
                "blend: {} parameters vs {}",
                self.params.len(),
                source.params.len()
            )));
        }
        for (dst, src) in self.params.iter_mut().zip(&source.params) {
            if dst.value.shape() != src.value.shape() {
                return Err(Error::Shape(format!(
                    "blend: parameter {} has mismatched shape",
                    dst.name
                )));
            }
            for (d, &s) in dst.value.data_mut().iter_mut().zip(src.value.data()) {
                if iota == 1.0 {
                    *d = s;
                    continue;
                }
                // the incremental form is an exact no-op when the tensors
                // already agree, so a frozen optimizer leaves targets
                // bit-identical
                let delta = s - *d;
                if delta != 0.0 {
                    *d += iota * delta;
                }
            }
        }
        Ok(())
    }
}

/// Adam with bias correction. Moment buffers are created lazily on the first
/// step and must thereafter match the parameter list.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        AdamState { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one Adam update from the accumulated gradients, then clear them.
    ///
    /// The update is atomic: if any gradient entry is non-finite the whole
    /// step is rejected (parameters, moments and step count untouched) and
    /// the offending parameter is named in the error.
    pub fn step(&mut self, params: &mut ParamVec) -> Result<()> {
        for p in params.iter() {
            if !p.grad.all_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient of parameter '{}' is not finite; update rejected",
                    p.name
                )));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.value.rows(), p.value.cols())).collect();
            self.v = self.m.clone();
        } else if self.m.len() != params.len() {
            return Err(Error::State(format!(
                "optimizer tracks {} parameters but was given {}",
                self.m.len(),
                params.len()
            )));
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (i, p) in params.params.iter_mut().enumerate() {
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let val = p.value.data_mut();
            for (((mv, vv), x), &g) in m.iter_mut().zip(v.iter_mut()).zip(val).zip(p.grad.data()) {
                *mv = self.beta1 * *mv + (1.0 - self.beta1) * g;
                *vv = self.beta2 * *vv + (1.0 - self.beta2) * g * g;
                let mhat = *mv / bc1;
                let vhat = *vv / bc2;
                *x -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
            p.grad.data_mut().fill(0.0);
        }
        Ok(())
    }
}
