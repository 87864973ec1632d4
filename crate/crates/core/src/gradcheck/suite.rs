//! A catalogue of gradient checks covering every differentiable graph op,
//! every non-recurrent network layer kind (input and parameter gradients),
//! every loss in both its discriminator and generator form, and the gradient
//! penalty with respect to critic parameters.

use crate::error::Result;
use crate::graph::{Graph, NodeId};
use crate::layers::{build_layer, dsl, Bound, ForwardCtx, LayerInstance, LayerKind, LayerSpec, Mode, Network, ParamValue};
use crate::models::loss::{self, LossKind};
use crate::models::one_hot;
use crate::rng::RngStream;
use crate::tensor::Tensor;

use super::grad_check;

/// Distance kept from non-smooth points (ReLU at 0, |x| at 0, hinges, ties).
pub const KINK_MARGIN: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct CaseResult {
    /// `subject/wrt`, e.g. `Conv2D/weight` or `loss:hinge:d/real`.
    pub name: String,
    /// Max relative error reported by [`grad_check`].
    pub error: f64,
}

/// Runs every case; errors abort the whole suite because a case that cannot
/// be evaluated is a bug, not a tolerance miss.
pub fn check_suite(eps: f64) -> Result<Vec<CaseResult>> {
    let mut s = Suite { eps, rng: RngStream::new(0x5eed), out: Vec::new() };
    s.ops()?;
    s.layers()?;
    s.losses()?;
    s.penalty()?;
    Ok(s.out)
}

/// Every network layer kind the suite covers; recurrent kinds are not
/// executable and are excluded.
pub fn covered_layer_kinds() -> Vec<LayerKind> {
    LayerKind::ALL.iter().copied().filter(|k| k.is_network_layer() && !k.is_recurrent()).collect()
}

struct Suite {
    eps: f64,
    rng: RngStream,
    out: Vec<CaseResult>,
}

/// Standard normal values pushed at least `KINK_MARGIN` away from zero.
fn away_from_zero(rng: &mut RngStream, shape: &[usize]) -> Result<Tensor> {
    let t = rng.normal(shape, 0.0, 1.0)?;
    Ok(t.map(|v| v.signum() * (v.abs() + KINK_MARGIN)))
}

/// Pairwise distinct values spaced `KINK_MARGIN` apart, shuffled, so max
/// selections cannot flip under a small perturbation.
fn distinct(rng: &mut RngStream, shape: &[usize]) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let perm = rng.permutation(n);
    let data = perm.iter().map(|&i| (i as f64 - n as f64 / 2.0) * KINK_MARGIN).collect();
    Tensor::new(shape, data)
}

fn weighted_sum(g: &mut Graph, y: NodeId, weights: &Tensor) -> Result<NodeId> {
    let w = g.constant(weights.clone());
    let p = g.mul(y, w)?;
    g.sum(p)
}

fn int(v: usize) -> ParamValue {
    ParamValue::Int(v as i64)
}

impl Suite {
    fn record(&mut self, name: impl Into<String>, error: f64) {
        self.out.push(CaseResult { name: name.into(), error });
    }

    fn check<F>(&mut self, name: impl Into<String>, x: &Tensor, f: F) -> Result<()>
    where
        F: FnMut(&mut Graph, NodeId) -> Result<NodeId>,
    {
        let e = grad_check(f, x, self.eps)?;
        self.record(name, e);
        Ok(())
    }

    fn randn(&mut self, shape: &[usize]) -> Result<Tensor> {
        self.rng.normal(shape, 0.0, 1.0)
    }

    fn ops(&mut self) -> Result<()> {
        let a = self.randn(&[3, 4])?;
        let b = self.randn(&[3, 4])?;
        let pos = self.rng.uniform_tensor(&[3, 4], 0.5, 2.0)?;
        let r34 = self.randn(&[3, 4])?;

        type Unary = fn(&mut Graph, NodeId) -> Result<NodeId>;
        let unary: [(&str, Unary, bool); 11] = [
            ("neg", |g, x| Ok(g.neg(x)), false),
            ("scale", |g, x| Ok(g.scale(x, -1.7)), false),
            ("offset", |g, x| Ok(g.offset(x, 0.3)), false),
            ("exp", |g, x| Ok(g.exp(x)), false),
            ("ln", |g, x| Ok(g.ln(x)), true),
            ("tanh", |g, x| Ok(g.tanh(x)), false),
            ("sigmoid", |g, x| Ok(g.sigmoid(x)), false),
            ("powf", |g, x| Ok(g.powf(x, -1.5)), true),
            ("sqrt", |g, x| Ok(g.sqrt(x)), true),
            ("abs", |g, x| Ok(g.abs(x)), false),
            ("clamp", |g, x| Ok(g.clamp(x, -1.0, 1.0)), false),
        ];
        for (name, op, positive) in unary {
            let x = if positive {
                pos.clone()
            } else if name == "clamp" {
                // Both sides of each bound, none within the margin of it.
                Tensor::new(&[3, 4], vec![-2.3, -1.6, -0.7, -0.2, 0.3, 0.8, 1.4, 2.1, -0.85, 0.55, 1.2, -1.3])?
            } else {
                away_from_zero(&mut self.rng, &[3, 4])?
            };
            let w = r34.clone();
            self.check(format!("op:{name}/x"), &x, |g, x| {
                let y = op(g, x)?;
                weighted_sum(g, y, &w)
            })?;
        }

        type Binary = fn(&mut Graph, NodeId, NodeId) -> Result<NodeId>;
        let binary: [(&str, Binary); 4] =
            [("add", |g, x, y| g.add(x, y)), ("sub", |g, x, y| g.sub(x, y)), ("mul", |g, x, y| g.mul(x, y)), ("div", |g, x, y| g.div(x, y))];
        for (name, op) in binary {
            let (other, w) = (pos.clone(), r34.clone());
            self.check(format!("op:{name}/lhs"), &a, |g, x| {
                let o = g.constant(other.clone());
                let y = op(g, x, o)?;
                weighted_sum(g, y, &w)
            })?;
            let (lhs, w) = (a.clone(), r34.clone());
            self.check(format!("op:{name}/rhs"), &pos, |g, x| {
                let l = g.constant(lhs.clone());
                let y = op(g, l, x)?;
                weighted_sum(g, y, &w)
            })?;
            // Row broadcast: a [1, 4] operand against [3, 4].
            let row = self.randn(&[1, 4])?.map(|v| v.abs() + 0.5);
            let (full, w) = (a.clone(), r34.clone());
            self.check(format!("op:{name}/broadcast_rhs"), &row, |g, x| {
                let l = g.constant(full.clone());
                let y = op(g, l, x)?;
                weighted_sum(g, y, &w)
            })?;
        }

        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let lhs = self.randn(if ta { &[4, 3] } else { &[3, 4] })?;
            let rhs = self.randn(if tb { &[2, 4] } else { &[4, 2] })?;
            let w = self.randn(&[3, 2])?;
            let (r, w1) = (rhs.clone(), w.clone());
            self.check(format!("op:matmul[{ta},{tb}]/lhs"), &lhs, |g, x| {
                let rn = g.constant(r.clone());
                let y = g.matmul_t(x, rn, ta, tb)?;
                weighted_sum(g, y, &w1)
            })?;
            self.check(format!("op:matmul[{ta},{tb}]/rhs"), &rhs, |g, x| {
                let ln = g.constant(lhs.clone());
                let y = g.matmul_t(ln, x, ta, tb)?;
                weighted_sum(g, y, &w)
            })?;
        }

        let w43 = self.randn(&[4, 3])?;
        self.check("op:transpose/x", &a, |g, x| {
            let y = g.transpose(x)?;
            weighted_sum(g, y, &w43)
        })?;
        let w26 = self.randn(&[2, 6])?;
        self.check("op:reshape/x", &a, |g, x| {
            let y = g.reshape(x, &[2, 6])?;
            weighted_sum(g, y, &w26)
        })?;
        let w4 = self.randn(&[4])?;
        self.check("op:sum_axes/x", &a, |g, x| {
            let y = g.sum_axes(x, &[0])?;
            let y = g.reshape(y, &[4])?;
            weighted_sum(g, y, &w4)
        })?;
        let w31 = self.randn(&[3, 1])?;
        self.check("op:mean_axes/x", &a, |g, x| {
            let y = g.mean_axes(x, &[1])?;
            weighted_sum(g, y, &w31)
        })?;
        let w14 = self.randn(&[1, 4])?;
        self.check("op:sum_to/x", &a, |g, x| {
            let y = g.sum_to(x, &[1, 4])?;
            weighted_sum(g, y, &w14)
        })?;
        let row = self.randn(&[1, 4])?;
        let wa = r34.clone();
        self.check("op:broadcast_to/x", &row, |g, x| {
            let y = g.broadcast_to(x, &[3, 4])?;
            weighted_sum(g, y, &wa)
        })?;
        self.check("op:mean/x", &a, |g, x| g.mean(x))?;
        let other = self.randn(&[3, 2])?;
        let w36 = self.randn(&[3, 6])?;
        self.check("op:concat_cols/x", &a, |g, x| {
            let o = g.constant(other.clone());
            let y = g.concat_cols(x, o)?;
            weighted_sum(g, y, &w36)
        })?;

        // Second order: d/dx of sum(d/dx sum(tanh(x) * x)).
        self.check("op:second_order/x", &b, |g, x| {
            // The zero offset gives the inner gradient a requires-grad path
            // even when the outer check evaluates `x` as a constant.
            let z = g.param(Tensor::zeros(&[3, 4])?);
            let xs = g.add(x, z)?;
            let t = g.tanh(xs);
            let p = g.mul(t, xs)?;
            let s = g.sum(p)?;
            let d = g.grad(s, &[xs])?[0];
            let d2 = g.mul(d, d)?;
            g.sum(d2)
        })?;

        let img = self.randn(&[2, 2, 5, 5])?;
        let k = self.randn(&[3, 2, 3, 3])?;
        let wy = self.randn(&[2, 3, 3, 3])?;
        let (kc, wc) = (k.clone(), wy.clone());
        self.check("op:conv2d/x", &img, |g, x| {
            let kn = g.constant(kc.clone());
            let y = g.conv2d(x, kn, 2, 1)?;
            weighted_sum(g, y, &wc)
        })?;
        self.check("op:conv2d/kernel", &k, |g, kn| {
            let xn = g.constant(img.clone());
            let y = g.conv2d(xn, kn, 2, 1)?;
            weighted_sum(g, y, &wy)
        })?;
        let small = self.randn(&[2, 3, 3, 3])?;
        let kt = self.randn(&[3, 2, 4, 4])?;
        let wt = self.randn(&[2, 2, 6, 6])?;
        let (kc, wc) = (kt.clone(), wt.clone());
        self.check("op:conv_transpose2d/x", &small, |g, x| {
            let kn = g.constant(kc.clone());
            let y = g.conv_transpose2d(x, kn, 2, 1)?;
            weighted_sum(g, y, &wc)
        })?;
        self.check("op:conv_transpose2d/kernel", &kt, |g, kn| {
            let xn = g.constant(small.clone());
            let y = g.conv_transpose2d(xn, kn, 2, 1)?;
            weighted_sum(g, y, &wt)
        })?;
        Ok(())
    }

    fn layers(&mut self) -> Result<()> {
        use LayerKind::*;
        let batch = 3;
        for kind in covered_layer_kinds() {
            let variants: Vec<(String, LayerSpec, Vec<usize>, Mode)> = match kind {
                Conv2D | ConvTranspose2D => vec![(
                    kind.to_string(),
                    dsl::conv(kind, 2, 3, 2, 1),
                    vec![2, 4, 4],
                    Mode::Train,
                )],
                MaxPool2D | AvgPool2D => vec![
                    (kind.to_string(), dsl::bare(kind), vec![2, 4, 4], Mode::Train),
                    (
                        format!("{kind}[k3,s1,p1]"),
                        LayerSpec::with(kind, &[("kernel", int(3)), ("stride", int(1)), ("padding", int(1))]),
                        vec![1, 3, 3],
                        Mode::Train,
                    ),
                ],
                UpSample2D => vec![(kind.to_string(), dsl::bare(kind), vec![2, 3, 3], Mode::Train)],
                Dense => vec![
                    (kind.to_string(), dsl::dense(3), vec![5], Mode::Train),
                    ("Dense[no bias]".into(), LayerSpec::with(Dense, &[("units", int(3)), ("bias", ParamValue::Bool(false))]), vec![5], Mode::Train),
                ],
                Flatten => vec![(kind.to_string(), dsl::bare(kind), vec![2, 3, 2], Mode::Train)],
                Reshape => vec![(kind.to_string(), dsl::reshape(&[3, 4]), vec![2, 3, 2], Mode::Train)],
                Dropout => vec![
                    (
                        "Dropout[train]".into(),
                        LayerSpec::with(kind, &[("rate", ParamValue::Float(0.3))]),
                        vec![6],
                        Mode::Train,
                    ),
                    ("Dropout[eval]".into(), dsl::bare(kind), vec![6], Mode::Eval),
                ],
                Concatenate => vec![(kind.to_string(), dsl::concat(3), vec![4], Mode::Train)],
                Embedding => vec![(
                    kind.to_string(),
                    LayerSpec::with(kind, &[("num_embeddings", int(5)), ("dim", int(3))]),
                    vec![4],
                    Mode::Train,
                )],
                BatchNorm => vec![
                    ("BatchNorm[flat,train]".into(), dsl::bare(kind), vec![4], Mode::Train),
                    ("BatchNorm[spatial,train]".into(), dsl::bare(kind), vec![2, 3, 3], Mode::Train),
                    ("BatchNorm[spatial,eval]".into(), dsl::bare(kind), vec![2, 3, 3], Mode::Eval),
                ],
                LeakyReLU => vec![(kind.to_string(), dsl::leaky_relu(0.2), vec![5], Mode::Train)],
                LayerNorm => vec![(kind.to_string(), dsl::bare(kind), vec![2, 3, 3], Mode::Train)],
                _ => vec![(kind.to_string(), dsl::bare(kind), vec![5], Mode::Train)],
            };
            for (name, spec, shape, mode) in variants {
                self.layer_case(&name, &spec, &shape, batch, mode)?;
            }
        }
        Ok(())
    }

    fn layer_case(&mut self, name: &str, spec: &LayerSpec, shape: &[usize], batch: usize, mode: Mode) -> Result<()> {
        let (mut inst, out_shape) = build_layer(spec, shape, &mut self.rng)?;
        // Perturb initial values so zero biases and unit scales do not hide
        // broadcasting mistakes.
        for p in inst.params_mut() {
            let noise = self.rng.normal(p.shape(), 0.0, 0.3)?;
            *p = p.zip_with(&noise, |a, b| a + b)?;
        }
        let mut in_shape = vec![batch];
        in_shape.extend_from_slice(shape);
        let x = match spec.kind {
            LayerKind::MaxPool2D => distinct(&mut self.rng, &in_shape)?,
            LayerKind::Embedding => {
                let data = (0..batch * shape[0]).map(|i| ((i * 3 + 1) % 5) as f64).collect();
                Tensor::new(&in_shape, data)?
            }
            _ => away_from_zero(&mut self.rng, &in_shape)?,
        };
        let condition = match spec.kind {
            LayerKind::Concatenate => Some(one_hot(&(0..batch).map(|i| i % 3).collect::<Vec<_>>(), 3)?),
            _ => None,
        };
        let mut out = vec![batch];
        out.extend_from_slice(&out_shape);
        let weights = self.randn(&out)?;

        let params: Vec<Tensor> = inst.params.iter().map(|p| p.value.clone()).collect();
        let names: Vec<&'static str> = inst.params.iter().map(|p| p.name).collect();
        // Embedding inputs are indices and carry no gradient.
        let input_target = spec.kind != LayerKind::Embedding;
        let targets = (if input_target { 0 } else { 1 })..=params.len();
        for target in targets {
            let wrt = if target == 0 { "input" } else { names[target - 1] };
            let probe = if target == 0 { x.clone() } else { params[target - 1].clone() };
            let e = grad_check(
                |g, node| forward_layer(g, &mut inst, &params, &x, condition.as_ref(), &weights, mode, target, node),
                &probe,
                self.eps,
            )?;
            self.record(format!("{name}/{wrt}"), e);
        }
        Ok(())
    }

    fn losses(&mut self) -> Result<()> {
        let shape = [6, 1];
        for kind in LossKind::ALL {
            let (real, fake) = match kind {
                LossKind::Bce => (
                    self.rng.uniform_tensor(&shape, 0.1, 0.9)?,
                    self.rng.uniform_tensor(&shape, 0.1, 0.9)?,
                ),
                // Hinge kinks sit at real = 1 and fake = -1.
                LossKind::Hinge => (
                    away_from_zero(&mut self.rng, &shape)?.map(|v| v + 1.0),
                    away_from_zero(&mut self.rng, &shape)?.map(|v| v - 1.0),
                ),
                // L1 kinks sit at score = target (1 for real, 0 for fake).
                LossKind::L1 => (
                    away_from_zero(&mut self.rng, &shape)?.map(|v| v + 1.0),
                    away_from_zero(&mut self.rng, &shape)?,
                ),
                _ => (self.randn(&shape)?, self.randn(&shape)?),
            };
            let f = fake.clone();
            self.check(format!("loss:{kind}:d/real"), &real, |g, r| {
                let fk = g.constant(f.clone());
                loss::discriminator_loss(g, kind, r, fk)
            })?;
            let r = real.clone();
            self.check(format!("loss:{kind}:d/fake"), &fake, |g, fk| {
                let rn = g.constant(r.clone());
                loss::discriminator_loss(g, kind, rn, fk)
            })?;
            // The generator form scores fakes against label 1; keep L1 away
            // from that kink too.
            let gen_in = if kind == LossKind::L1 { real.clone() } else { fake.clone() };
            self.check(format!("loss:{kind}:g/fake"), &gen_in, |g, fk| loss::generator_loss(g, kind, fk))?;
        }
        // BCE against soft targets, both arguments.
        let p = self.rng.uniform_tensor(&[5], 0.1, 0.9)?;
        let y = self.rng.uniform_tensor(&[5], 0.0, 1.0)?;
        let yc = y.clone();
        self.check("loss:bce_soft/p", &p, |g, pn| {
            let yn = g.constant(yc.clone());
            loss::bce(g, pn, yn)
        })?;
        let b = self.randn(&[5])?;
        self.check("loss:mse/target", &y, |g, yn| {
            let pn = g.constant(b.clone());
            loss::mse(g, pn, yn)
        })?;
        Ok(())
    }

    fn penalty(&mut self) -> Result<()> {
        let specs = [dsl::dense(4), dsl::bare(LayerKind::Tanh), dsl::dense(1)];
        let critic = Network::build(&specs, &[3], &mut self.rng).map_err(|(_, e)| e)?;
        let real = self.randn(&[4, 3])?;
        let fake = self.randn(&[4, 3])?;
        let params: Vec<Tensor> = critic.params().cloned().collect();
        let layout: Vec<usize> = critic.layers.iter().map(|l| l.params.len()).collect();
        for target in 0..params.len() {
            let mut net = critic.clone();
            let e = grad_check(
                |g, node| {
                    let mut flat = params.iter().enumerate().map(|(i, p)| if i == target { node } else { g.constant(p.clone()) });
                    let ids = layout.iter().map(|&n| flat.by_ref().take(n).collect()).collect();
                    let bound = Bound { ids };
                    // Fresh stream per evaluation: identical interpolation weights.
                    let mut rng = RngStream::new(11);
                    loss::gradient_penalty(g, &mut net, &bound, &real, &fake, 10.0, &mut rng)
                },
                &params[target],
                self.eps,
            )?;
            self.record(format!("gradient_penalty/param{target}"), e);
        }
        Ok(())
    }
}

#[allow(clippy::too_many_arguments)]
fn forward_layer(
    g: &mut Graph,
    inst: &mut LayerInstance,
    params: &[Tensor],
    x: &Tensor,
    condition: Option<&Tensor>,
    weights: &Tensor,
    mode: Mode,
    target: usize,
    node: NodeId,
) -> Result<NodeId> {
    let ids: Vec<NodeId> =
        params.iter().enumerate().map(|(i, p)| if i + 1 == target { node } else { g.constant(p.clone()) }).collect();
    let xn = if target == 0 { node } else { g.constant(x.clone()) };
    let cond = condition.map(|c| g.constant(c.clone()));
    // Same dropout mask on every evaluation.
    let mut rng = RngStream::new(3);
    let mut ctx = ForwardCtx::new(mode).with_rng(&mut rng).with_condition(cond);
    let y = inst.forward(g, &ids, xn, &mut ctx)?;
    weighted_sum(g, y, weights)
}
