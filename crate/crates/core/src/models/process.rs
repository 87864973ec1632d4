use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use serde_json::json;

use crate::error::{shape_err, Error, Result};
use crate::graph::{Graph, NodeId};
use crate::layers::{Bound, ForwardCtx, Mode, Network};
use crate::rng::RngStream;
use crate::spec::ResolvedModel;
use crate::tensor::Tensor;

use super::loss::{discriminator_loss, generator_loss, gradient_penalty};
use super::presets::DEFAULT_LABEL_COUNT;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessKind {
    Standard,
    WganClip,
    WganGp,
    Conditional,
}

impl ProcessKind {
    pub const ALL: [ProcessKind; 4] = [ProcessKind::Standard, ProcessKind::WganClip, ProcessKind::WganGp, ProcessKind::Conditional];

    pub fn as_str(self) -> &'static str {
        match self {
            ProcessKind::Standard => "standard",
            ProcessKind::WganClip => "wgan_clip",
            ProcessKind::WganGp => "wgan_gp",
            ProcessKind::Conditional => "conditional",
        }
    }

    pub fn uses_critic_loop(self) -> bool {
        matches!(self, ProcessKind::WganClip | ProcessKind::WganGp)
    }
}

impl fmt::Display for ProcessKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ProcessKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL.iter().copied().find(|k| k.as_str() == norm).ok_or_else(|| Error::Param {
            key: "choice".into(),
            message: format!("unknown training process `{s}`; valid: standard, wgan_clip, wgan_gp, conditional"),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingProcess {
    pub kind: ProcessKind,
    /// Critic updates per generator update (critic-loop processes).
    pub n_critic: usize,
    /// Critic weights are clamped to `[-clip_value, clip_value]` (`wgan_clip`).
    pub clip_value: f64,
    /// Penalty weight (`wgan_gp`).
    pub gp_lambda: f64,
    /// Width of the one-hot condition vector.
    pub label_count: usize,
}

impl TrainingProcess {
    pub fn new(kind: ProcessKind) -> Self {
        Self { kind, n_critic: 5, clip_value: 0.01, gp_lambda: 10.0, label_count: DEFAULT_LABEL_COUNT }
    }

    /// Only the parameters that affect this kind are listed.
    pub fn to_json(&self) -> serde_json::Value {
        let params = match self.kind {
            ProcessKind::Standard => json!({}),
            ProcessKind::WganClip => json!({"n_critic": self.n_critic, "clip_value": self.clip_value}),
            ProcessKind::WganGp => json!({"n_critic": self.n_critic, "gp_lambda": self.gp_lambda}),
            ProcessKind::Conditional => json!({"label_count": self.label_count}),
        };
        json!({"choice": self.kind.as_str(), "params": params})
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StepMetrics {
    pub gen_loss: f64,
    /// Loss of the last discriminator update in the step, penalty included.
    pub disc_loss: f64,
    pub critic_steps: usize,
    pub gen_steps: usize,
    /// Gradient penalty of the last critic update (`wgan_gp`).
    pub penalty: Option<f64>,
}

/// `[N, count]` one-hot rows for `labels`.
pub fn one_hot(labels: &[usize], count: usize) -> Result<Tensor> {
    let mut t = Tensor::zeros(&[labels.len().max(1), count])?;
    if labels.is_empty() {
        return shape_err("one_hot needs at least one label");
    }
    for (i, &l) in labels.iter().enumerate() {
        if l >= count {
            return Err(Error::Contract(format!("label {l} outside [0, {count})")));
        }
        t.data_mut()[i * count + l] = 1.0;
    }
    Ok(t)
}

fn grads_for(g: &mut Graph, loss: NodeId, bound: &Bound) -> Result<Vec<Tensor>> {
    let mut grads = g.backward(loss)?;
    Ok(bound.all().map(|id| grads.take(id).expect("bound parameters are requires-grad leaves")).collect())
}

fn forward(
    net: &mut Network,
    g: &mut Graph,
    bound: &Bound,
    x: NodeId,
    cond: Option<NodeId>,
    rng: &mut RngStream,
) -> Result<NodeId> {
    let mut ctx = ForwardCtx { mode: Mode::Train, rng: Some(rng), condition: cond };
    net.forward(g, bound, x, &mut ctx)
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric { epoch: 0, step: 0, what: what.into() })
    }
}

/// One optimization step of `process` on a real batch.
///
/// `standard`/`conditional`: one discriminator update on real and fake, then
/// one generator update scored by the updated discriminator on the same fake
/// batch. `wgan_clip`/`wgan_gp`: `n_critic` critic updates on the same real
/// batch, each with fresh noise, then one generator update on fresh noise.
/// Numeric failures report epoch and step 0; callers fill in the position.
pub fn train_step(
    process: &TrainingProcess,
    model: &mut ResolvedModel,
    real: &Tensor,
    labels: Option<&[usize]>,
    rng: &mut RngStream,
) -> Result<StepMetrics> {
    let rs = real.shape();
    if rs.len() < 2 || rs[1..] != model.data_shape[..] {
        return shape_err(format!("batch {:?} does not match data shape [N, {:?}]", rs, model.data_shape));
    }
    let n = rs[0];
    let needs_labels = process.kind == ProcessKind::Conditional || model.conditioning.is_some();
    let cond = if needs_labels {
        let labels = labels.ok_or_else(|| Error::Contract("this model is conditional: the batch needs labels".into()))?;
        if labels.len() != n {
            return shape_err(format!("{} labels for a batch of {n}", labels.len()));
        }
        let width = model.conditioning.map_or(process.label_count, |c| c.label_count);
        Some(one_hot(labels, width)?)
    } else {
        None
    };
    if process.kind.uses_critic_loop() {
        critic_loop(process, model, real, cond.as_ref(), rng)
    } else {
        adversarial_step(model, real, cond.as_ref(), rng)
    }
}

fn adversarial_step(model: &mut ResolvedModel, real: &Tensor, cond: Option<&Tensor>, rng: &mut RngStream) -> Result<StepMetrics> {
    let n = real.shape()[0];
    let z = rng.normal(&[n, model.latent_dim], 0.0, 1.0)?;
    let mut g = Graph::with_exec(model.exec);
    let cn = cond.map(|c| g.constant(c.clone()));

    let gb = model.generator.bind(&mut g, true);
    let zn = g.constant(z);
    let fake = forward(&mut model.generator, &mut g, &gb, zn, cn, rng)?;
    let detached = g.constant(g.value(fake).clone());

    let db = model.discriminator.bind(&mut g, true);
    let real_n = g.constant(real.clone());
    let real_s = forward(&mut model.discriminator, &mut g, &db, real_n, cn, rng)?;
    let fake_s = forward(&mut model.discriminator, &mut g, &db, detached, cn, rng)?;
    let d_loss = discriminator_loss(&mut g, model.disc_loss, real_s, fake_s)?;
    let disc_loss = finite(g.value(d_loss).item(), "discriminator loss")?;
    let grads = grads_for(&mut g, d_loss, &db)?;
    model.disc_optimizer.step(model.discriminator.params_mut(), &grads)?;

    let frozen = model.discriminator.bind(&mut g, false);
    let scores = forward(&mut model.discriminator, &mut g, &frozen, fake, cn, rng)?;
    let g_loss = generator_loss(&mut g, model.gen_loss, scores)?;
    let gen_loss = finite(g.value(g_loss).item(), "generator loss")?;
    let grads = grads_for(&mut g, g_loss, &gb)?;
    model.gen_optimizer.step(model.generator.params_mut(), &grads)?;

    Ok(StepMetrics { gen_loss, disc_loss, critic_steps: 1, gen_steps: 1, penalty: None })
}

fn critic_loop(
    process: &TrainingProcess,
    model: &mut ResolvedModel,
    real: &Tensor,
    cond: Option<&Tensor>,
    rng: &mut RngStream,
) -> Result<StepMetrics> {
    let n = real.shape()[0];
    let mut disc_loss = f64::NAN;
    let mut penalty = None;
    for _ in 0..process.n_critic {
        let z = rng.normal(&[n, model.latent_dim], 0.0, 1.0)?;
        let mut g = Graph::with_exec(model.exec);
        let cn = cond.map(|c| g.constant(c.clone()));
        let gb = model.generator.bind(&mut g, false);
        let zn = g.constant(z);
        let fake = forward(&mut model.generator, &mut g, &gb, zn, cn, rng)?;
        let fake_val = g.value(fake).clone();

        let db = model.discriminator.bind(&mut g, true);
        let real_n = g.constant(real.clone());
        let real_s = forward(&mut model.discriminator, &mut g, &db, real_n, cn, rng)?;
        let fake_s = forward(&mut model.discriminator, &mut g, &db, fake, cn, rng)?;
        let mut loss = discriminator_loss(&mut g, model.disc_loss, real_s, fake_s)?;
        if process.kind == ProcessKind::WganGp {
            if cond.is_some() {
                return Err(Error::Contract("gradient penalty does not support conditional critics".into()));
            }
            let gp = gradient_penalty(&mut g, &mut model.discriminator, &db, real, &fake_val, process.gp_lambda, rng)?;
            penalty = Some(g.value(gp).item());
            loss = g.add(loss, gp)?;
        }
        disc_loss = finite(g.value(loss).item(), "critic loss")?;
        let grads = grads_for(&mut g, loss, &db)?;
        model.disc_optimizer.step(model.discriminator.params_mut(), &grads)?;
        if process.kind == ProcessKind::WganClip {
            let c = process.clip_value;
            for p in model.discriminator.params_mut() {
                for w in p.data_mut() {
                    *w = w.clamp(-c, c);
                }
            }
        }
    }

    let z = rng.normal(&[n, model.latent_dim], 0.0, 1.0)?;
    let mut g = Graph::with_exec(model.exec);
    let cn = cond.map(|c| g.constant(c.clone()));
    let gb = model.generator.bind(&mut g, true);
    let zn = g.constant(z);
    let fake = forward(&mut model.generator, &mut g, &gb, zn, cn, rng)?;
    let frozen = model.discriminator.bind(&mut g, false);
    let scores = forward(&mut model.discriminator, &mut g, &frozen, fake, cn, rng)?;
    let g_loss = generator_loss(&mut g, model.gen_loss, scores)?;
    let gen_loss = finite(g.value(g_loss).item(), "generator loss")?;
    let grads = grads_for(&mut g, g_loss, &gb)?;
    model.gen_optimizer.step(model.generator.params_mut(), &grads)?;

    Ok(StepMetrics { gen_loss, disc_loss, critic_steps: process.n_critic, gen_steps: 1, penalty })
}
