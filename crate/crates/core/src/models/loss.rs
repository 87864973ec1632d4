use std::fmt;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{shape_err, Error, Result};
use crate::graph::{Graph, NodeId};
use crate::layers::{Bound, ForwardCtx, LayerKind, Mode, Network};
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Probabilities fed to cross-entropy are clamped this far from 0 and 1.
pub const PROB_CLAMP: f64 = 1e-7;

/// Slack allowed on probabilities before clamping counts as a contract breach.
const PROB_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Bce,
    Mse,
    L1,
    Wasserstein,
    Hinge,
}

impl LossKind {
    pub const ALL: [LossKind; 5] = [LossKind::Bce, LossKind::Mse, LossKind::L1, LossKind::Wasserstein, LossKind::Hinge];

    pub fn as_str(self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::Mse => "mse",
            LossKind::L1 => "l1",
            LossKind::Wasserstein => "wasserstein",
            LossKind::Hinge => "hinge",
        }
    }

    pub fn from_layer_kind(kind: LayerKind) -> Option<Self> {
        Some(match kind {
            LayerKind::Bce => LossKind::Bce,
            LayerKind::Mse => LossKind::Mse,
            LayerKind::L1 => LossKind::L1,
            LayerKind::Wasserstein => LossKind::Wasserstein,
            LayerKind::HingeLoss => LossKind::Hinge,
            _ => return None,
        })
    }

    /// Whether the discriminator must emit probabilities.
    pub fn needs_probabilities(self) -> bool {
        self == LossKind::Bce
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.eq_ignore_ascii_case("hinge") {
            return Ok(LossKind::Hinge);
        }
        s.parse::<LayerKind>().ok().and_then(LossKind::from_layer_kind).ok_or_else(|| Error::Param {
            key: "loss".into(),
            message: format!("unknown loss `{s}`; valid: bce, mse, l1, wasserstein, hinge"),
        })
    }
}

fn full_like(g: &mut Graph, like: NodeId, v: f64) -> Result<NodeId> {
    let t = Tensor::full(g.shape(like), v)?;
    Ok(g.constant(t))
}

fn same_shape(g: &Graph, a: NodeId, b: NodeId, what: &str) -> Result<()> {
    if g.shape(a) != g.shape(b) {
        return shape_err(format!("{what}: shapes {:?} and {:?} differ", g.shape(a), g.shape(b)));
    }
    Ok(())
}

/// `-mean[y ln p + (1 - y) ln(1 - p)]` with `p` clamped to
/// `[PROB_CLAMP, 1 - PROB_CLAMP]`.
pub fn bce(g: &mut Graph, p: NodeId, y: NodeId) -> Result<NodeId> {
    same_shape(g, p, y, "bce")?;
    if !g.value(p).all_finite() {
        return Err(Error::Numeric { epoch: 0, step: 0, what: "discriminator output".into() });
    }
    if let Some(bad) = g.value(p).data().iter().find(|v| !(-PROB_SLACK..=1.0 + PROB_SLACK).contains(*v)) {
        return Err(Error::Contract(format!(
            "bce expects probabilities in [0, 1], got {bad}; end the discriminator with Sigmoid"
        )));
    }
    let pc = g.clamp(p, PROB_CLAMP, 1.0 - PROB_CLAMP);
    let lp = g.ln(pc);
    let q = g.neg(pc);
    let q = g.offset(q, 1.0);
    let lq = g.ln(q);
    let ny = g.neg(y);
    let ny = g.offset(ny, 1.0);
    let a = g.mul(y, lp)?;
    let b = g.mul(ny, lq)?;
    let s = g.add(a, b)?;
    let m = g.mean(s)?;
    Ok(g.neg(m))
}

/// Cross-entropy against a constant label for every element.
pub fn bce_target(g: &mut Graph, p: NodeId, target: f64) -> Result<NodeId> {
    let y = full_like(g, p, target)?;
    bce(g, p, y)
}

pub fn mse(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    same_shape(g, a, b, "mse")?;
    let d = g.sub(a, b)?;
    let sq = g.mul(d, d)?;
    g.mean(sq)
}

pub fn l1(g: &mut Graph, a: NodeId, b: NodeId) -> Result<NodeId> {
    same_shape(g, a, b, "l1")?;
    let d = g.sub(a, b)?;
    let ad = g.abs(d);
    g.mean(ad)
}

/// Critic objective `mean(fake) - mean(real)`.
pub fn wasserstein_d(g: &mut Graph, real: NodeId, fake: NodeId) -> Result<NodeId> {
    let mr = g.mean(real)?;
    let mf = g.mean(fake)?;
    g.sub(mf, mr)
}

/// Generator objective `-mean(fake)`.
pub fn wasserstein_g(g: &mut Graph, fake: NodeId) -> Result<NodeId> {
    let mf = g.mean(fake)?;
    Ok(g.neg(mf))
}

/// `mean(relu(1 - real)) + mean(relu(1 + fake))`.
pub fn hinge_d(g: &mut Graph, real: NodeId, fake: NodeId) -> Result<NodeId> {
    let r = g.neg(real);
    let r = g.offset(r, 1.0);
    let r = g.relu(r);
    let f = g.offset(fake, 1.0);
    let f = g.relu(f);
    let mr = g.mean(r)?;
    let mf = g.mean(f)?;
    g.add(mr, mf)
}

fn against(g: &mut Graph, kind: LossKind, scores: NodeId, target: f64) -> Result<NodeId> {
    let y = full_like(g, scores, target)?;
    match kind {
        LossKind::Bce => bce(g, scores, y),
        LossKind::Mse => mse(g, scores, y),
        LossKind::L1 => l1(g, scores, y),
        LossKind::Wasserstein | LossKind::Hinge => unreachable!("score-based losses have no targets"),
    }
}

/// Discriminator-side objective over real and fake scores. Target-based
/// losses average the real (label 1) and fake (label 0) terms.
pub fn discriminator_loss(g: &mut Graph, kind: LossKind, real: NodeId, fake: NodeId) -> Result<NodeId> {
    match kind {
        LossKind::Wasserstein => wasserstein_d(g, real, fake),
        LossKind::Hinge => hinge_d(g, real, fake),
        _ => {
            let lr = against(g, kind, real, 1.0)?;
            let lf = against(g, kind, fake, 0.0)?;
            let s = g.add(lr, lf)?;
            Ok(g.scale(s, 0.5))
        }
    }
}

/// Generator-side objective. Target-based losses use the non-saturating form
/// (fake scored against label 1).
pub fn generator_loss(g: &mut Graph, kind: LossKind, fake: NodeId) -> Result<NodeId> {
    match kind {
        LossKind::Wasserstein | LossKind::Hinge => wasserstein_g(g, fake),
        _ => against(g, kind, fake, 1.0),
    }
}

/// `lambda * mean[(|grad D(x_hat)|_2 - 1)^2]` at per-sample interpolates
/// `x_hat = eps * real + (1 - eps) * fake`, `eps ~ U(0, 1)`.
///
/// The input gradient is itself a graph, so the returned penalty can be
/// differentiated with respect to the critic parameters in `bound`.
pub fn gradient_penalty(
    g: &mut Graph,
    critic: &mut Network,
    bound: &Bound,
    real: &Tensor,
    fake: &Tensor,
    lambda: f64,
    rng: &mut RngStream,
) -> Result<NodeId> {
    if real.shape() != fake.shape() {
        return shape_err(format!("gradient penalty: real {:?} vs fake {:?}", real.shape(), fake.shape()));
    }
    let n = real.shape()[0];
    let per = real.len() / n;
    let eps: Vec<f64> = (0..n).map(|_| rng.uniform()).collect();
    let mixed: Vec<f64> = real
        .data()
        .iter()
        .zip(fake.data())
        .enumerate()
        .map(|(i, (r, f))| {
            let e = eps[i / per];
            e * r + (1.0 - e) * f
        })
        .collect();
    let x_hat = g.leaf(Tensor::new(real.shape(), mixed)?, true);
    let mut ctx = ForwardCtx::new(Mode::Train);
    let scores = critic.forward(g, bound, x_hat, &mut ctx)?;
    let total = g.sum(scores)?;
    let grad = g.grad(total, &[x_hat])?[0];
    let flat = g.reshape(grad, &[n, per])?;
    let sq = g.mul(flat, flat)?;
    let ss = g.sum_axes(sq, &[1])?;
    let norm = g.sqrt(ss);
    let dev = g.offset(norm, -1.0);
    let dev2 = g.mul(dev, dev)?;
    let m = g.mean(dev2)?;
    Ok(g.scale(m, lambda))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn eval(f: impl FnOnce(&mut Graph) -> Result<NodeId>) -> f64 {
        let mut g = Graph::new();
        let id = f(&mut g).unwrap();
        g.value(id).item()
    }

    fn t(v: &[f64]) -> Tensor {
        Tensor::from_vec(v.to_vec()).unwrap()
    }

    #[test]
    fn bce_half() {
        let v = eval(|g| {
            let p = g.constant(t(&[0.5]));
            bce_target(g, p, 1.0)
        });
        assert!((v - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn bce_rejects_non_probabilities() {
        let mut g = Graph::new();
        let p = g.constant(t(&[1.5]));
        assert!(matches!(bce_target(&mut g, p, 1.0), Err(Error::Contract(_))));
    }

    #[test]
    fn wasserstein_values() {
        let v = eval(|g| {
            let r = g.constant(t(&[1.0, 3.0]));
            let f = g.constant(t(&[0.0, 2.0]));
            wasserstein_d(g, r, f)
        });
        assert_eq!(v, -1.0);
    }

    #[test]
    fn mse_and_l1() {
        let v = eval(|g| {
            let a = g.constant(t(&[0.0, 0.0]));
            let b = g.constant(t(&[1.0, 1.0]));
            mse(g, a, b)
        });
        assert_eq!(v, 1.0);
        let v = eval(|g| {
            let a = g.constant(t(&[0.0, 0.0]));
            let b = g.constant(t(&[1.0, -3.0]));
            l1(g, a, b)
        });
        assert_eq!(v, 2.0);
    }

    #[test]
    fn perfect_discriminator_boundary() {
        let d = eval(|g| {
            let r = g.constant(t(&[1.0; 4]));
            let f = g.constant(t(&[0.0; 4]));
            discriminator_loss(g, LossKind::Bce, r, f)
        });
        assert!((d - -(1.0 - PROB_CLAMP).ln()).abs() < 1e-15, "{d}");
        let gl = eval(|g| {
            let f = g.constant(t(&[0.0; 4]));
            generator_loss(g, LossKind::Bce, f)
        });
        assert!((gl - -(PROB_CLAMP.ln())).abs() < 1e-9, "{gl}");
    }

    #[test]
    fn parse_names() {
        assert_eq!("BCE".parse::<LossKind>().unwrap(), LossKind::Bce);
        assert_eq!("hinge".parse::<LossKind>().unwrap(), LossKind::Hinge);
        assert_eq!("HingeLoss".parse::<LossKind>().unwrap(), LossKind::Hinge);
        assert!("adam".parse::<LossKind>().is_err());
    }
}
