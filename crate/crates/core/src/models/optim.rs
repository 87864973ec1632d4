use serde::Serialize;

use crate::error::{shape_err, Error, Result};
use crate::layers::{LayerKind, LayerSpec, ParamValue};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam,
    RmsProp,
    Sgd,
}

/// Hyperparameters plus per-parameter moment buffers. Buffers are created on
/// the first step, shaped like the parameters they track.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub rho: f64,
    pub eps: f64,
    /// Completed steps.
    pub t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl OptimizerState {
    fn blank(kind: OptimizerKind, lr: f64) -> Self {
        Self { kind, lr, beta1: 0.0, beta2: 0.0, rho: 0.0, eps: 0.0, t: 0, m: Vec::new(), v: Vec::new() }
    }

    pub fn adam(lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { beta1, beta2, eps, ..Self::blank(OptimizerKind::Adam, lr) }
    }

    pub fn rmsprop(lr: f64, rho: f64, eps: f64) -> Self {
        Self { rho, eps, ..Self::blank(OptimizerKind::RmsProp, lr) }
    }

    pub fn sgd(lr: f64) -> Self {
        Self::blank(OptimizerKind::Sgd, lr)
    }

    /// Builds from an optimization palette entry; unset fields take the
    /// palette defaults.
    pub fn from_spec(spec: &LayerSpec) -> Result<Self> {
        Ok(match spec.kind {
            LayerKind::Adam => Self::adam(spec.float("lr")?, spec.float("beta1")?, spec.float("beta2")?, spec.float("eps")?),
            LayerKind::RmsProp => Self::rmsprop(spec.float("lr")?, spec.float("rho")?, spec.float("eps")?),
            LayerKind::Sgd => Self::sgd(spec.float("lr")?),
            other => {
                return Err(Error::Param { key: "optimizer".into(), message: format!("{other} is not an optimizer") })
            }
        })
    }

    /// Fully explicit palette form of the hyperparameters.
    pub fn to_spec(&self) -> LayerSpec {
        let f = ParamValue::Float;
        match self.kind {
            OptimizerKind::Adam => LayerSpec::with(
                LayerKind::Adam,
                &[("lr", f(self.lr)), ("beta1", f(self.beta1)), ("beta2", f(self.beta2)), ("eps", f(self.eps))],
            ),
            OptimizerKind::RmsProp => {
                LayerSpec::with(LayerKind::RmsProp, &[("lr", f(self.lr)), ("rho", f(self.rho)), ("eps", f(self.eps))])
            }
            OptimizerKind::Sgd => LayerSpec::with(LayerKind::Sgd, &[("lr", f(self.lr))]),
        }
    }

    /// Applies one update to `params` in place. Parameters must arrive in the
    /// same order on every call.
    pub fn step<'a>(&mut self, params: impl IntoIterator<Item = &'a mut Tensor>, grads: &[Tensor]) -> Result<()> {
        let params: Vec<&mut Tensor> = params.into_iter().collect();
        if params.len() != grads.len() {
            return shape_err(format!("{} parameters but {} gradients", params.len(), grads.len()));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.shape() != g.shape() {
                return shape_err(format!("parameter {i} has shape {:?} but its gradient {:?}", p.shape(), g.shape()));
            }
        }
        let needs_m = self.kind == OptimizerKind::Adam;
        let needs_v = self.kind != OptimizerKind::Sgd;
        if self.t == 0 {
            let zeros = || grads.iter().map(Tensor::zeros_like).collect::<Vec<_>>();
            self.m = if needs_m { zeros() } else { Vec::new() };
            self.v = if needs_v { zeros() } else { Vec::new() };
        } else if (needs_v && self.v.len() != grads.len()) || self.v.iter().zip(grads).any(|(v, g)| v.shape() != g.shape()) {
            return Err(Error::Contract("optimizer reused with a different parameter set".into()));
        }
        self.t += 1;
        let (lr, eps) = (self.lr, self.eps);
        match self.kind {
            OptimizerKind::Sgd => {
                for (p, g) in params.into_iter().zip(grads) {
                    for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                        *w -= lr * d;
                    }
                }
            }
            OptimizerKind::RmsProp => {
                let rho = self.rho;
                for ((p, g), v) in params.into_iter().zip(grads).zip(&mut self.v) {
                    for ((w, d), s) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
                        *s = rho * *s + (1.0 - rho) * d * d;
                        *w -= lr * d / (s.sqrt() + eps);
                    }
                }
            }
            OptimizerKind::Adam => {
                let (b1, b2) = (self.beta1, self.beta2);
                let c1 = 1.0 - b1.powi(self.t as i32);
                let c2 = 1.0 - b2.powi(self.t as i32);
                for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
                    let it = p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut());
                    for (((w, d), m), s) in it {
                        *m = b1 * *m + (1.0 - b1) * d;
                        *s = b2 * *s + (1.0 - b2) * d * d;
                        *w -= lr * (*m / c1) / ((*s / c2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Free-function form of [`OptimizerState::step`].
pub fn optimizer_step<'a>(
    state: &mut OptimizerState,
    params: impl IntoIterator<Item = &'a mut Tensor>,
    grads: &[Tensor],
) -> Result<()> {
    state.step(params, grads)
}
