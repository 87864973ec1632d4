use std::sync::Arc;

use crate::error::{shape_err, Error, Result};
use crate::graph::{Graph, NodeId};
use crate::kernels::ConvGeom;
use crate::rng::RngStream;
use crate::sparse::SparseMap;
use crate::tensor::{numel, Tensor};

use super::{LayerKind, LayerSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// What a trainable tensor is for; selects its initializer.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    Scale,
    Shift,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedParam {
    pub name: &'static str,
    pub value: Tensor,
}

#[derive(Clone, Debug, PartialEq)]
struct RunningStats {
    mean: Vec<f64>,
    var: Vec<f64>,
}

/// A layer with its trainable state. Shapes exclude the batch axis.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerInstance {
    pub spec: LayerSpec,
    pub params: Vec<NamedParam>,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
    running: Option<RunningStats>,
}

fn require_rank(kind: LayerKind, input: &[usize], rank: usize, what: &str) -> Result<()> {
    if input.len() != rank {
        return shape_err(format!("{kind} expects {what} (rank {rank}) input, got {input:?}"));
    }
    Ok(())
}

/// Per-sample output shape of `spec` applied to `input`, or a shape error.
pub fn infer_shape(spec: &LayerSpec, input: &[usize]) -> Result<Vec<usize>> {
    use LayerKind::*;
    let kind = spec.kind;
    if input.is_empty() || input.contains(&0) {
        return shape_err(format!("{kind} got an invalid input shape {input:?}"));
    }
    match kind {
        Conv2D | MaxPool2D | AvgPool2D => {
            require_rank(kind, input, 3, "[C, H, W]")?;
            let (k, s, p) = (spec.int("kernel")?, spec.int("stride")?, spec.int("padding")?);
            let (Some(h), Some(w)) = (ConvGeom::out_extent(input[1], k, s, p), ConvGeom::out_extent(input[2], k, s, p)) else {
                return shape_err(format!(
                    "{kind} with kernel {k}, stride {s}, padding {p} leaves no output for input {input:?}"
                ));
            };
            let c = if kind == Conv2D { spec.int("filters")? } else { input[0] };
            Ok(vec![c, h, w])
        }
        ConvTranspose2D => {
            require_rank(kind, input, 3, "[C, H, W]")?;
            let (k, s, p) = (spec.int("kernel")?, spec.int("stride")?, spec.int("padding")?);
            let (Some(h), Some(w)) =
                (ConvGeom::transposed_extent(input[1], k, s, p), ConvGeom::transposed_extent(input[2], k, s, p))
            else {
                return shape_err(format!("{kind} leaves no output for input {input:?}"));
            };
            if ConvGeom::out_extent(h, k, s, p) != Some(input[1]) || ConvGeom::out_extent(w, k, s, p) != Some(input[2]) {
                return shape_err(format!("{kind} geometry (kernel {k}, stride {s}, padding {p}) is not invertible"));
            }
            Ok(vec![spec.int("filters")?, h, w])
        }
        UpSample2D => {
            require_rank(kind, input, 3, "[C, H, W]")?;
            let s = spec.int("scale")?;
            Ok(vec![input[0], input[1] * s, input[2] * s])
        }
        SimpleRnn | Lstm | Gru => {
            require_rank(kind, input, 2, "[T, F]")?;
            let units = spec.int("units")?;
            Ok(if spec.flag("return_sequences")? { vec![input[0], units] } else { vec![units] })
        }
        Dense => {
            require_rank(kind, input, 1, "flat [D]")?;
            Ok(vec![spec.int("units")?])
        }
        Flatten => Ok(vec![numel(input)]),
        Reshape => {
            let target = spec.shape("shape")?.unwrap_or_default();
            if numel(&target) != numel(input) {
                return shape_err(format!("Reshape cannot map {input:?} ({} elements) to {target:?}", numel(input)));
            }
            Ok(target)
        }
        Concatenate => {
            require_rank(kind, input, 1, "flat [D]")?;
            Ok(vec![input[0] + spec.int("width")?])
        }
        Embedding => {
            require_rank(kind, input, 1, "index [L]")?;
            Ok(vec![input[0], spec.int("dim")?])
        }
        Input => {
            if let Some(s) = spec.shape("shape")? {
                if s != input {
                    return shape_err(format!("Input declares {s:?} but receives {input:?}"));
                }
            }
            Ok(input.to_vec())
        }
        BatchNorm => {
            if input.len() != 1 && input.len() != 3 {
                return shape_err(format!("BatchNorm expects [C] or [C, H, W] input, got {input:?}"));
            }
            Ok(input.to_vec())
        }
        Output | Dropout | ReLU | LeakyReLU | Sigmoid | Tanh | Softmax | LayerNorm => Ok(input.to_vec()),
        Bce | Mse | L1 | Wasserstein | HingeLoss | Adam | RmsProp | Sgd => Err(Error::Param {
            key: "kind".into(),
            message: format!("{kind} is a {} configuration node, not a network layer", kind.category().as_str()),
        }),
    }
}

/// Initial value of one trainable tensor.
///
/// Dense weights are Glorot-normal, `N(0, 2 / (fan_in + fan_out))`.
/// Convolution kernels are `N(0, 0.02²)`. Normalization scales are
/// `N(1, 0.02²)`; biases and shifts are zero. Embedding tables are `N(0, 1)`.
pub fn init_params(kind: LayerKind, role: ParamRole, shape: &[usize], rng: &mut RngStream) -> Result<Tensor> {
    match role {
        ParamRole::Bias | ParamRole::Shift => Tensor::zeros(shape),
        ParamRole::Scale => rng.normal(shape, 1.0, 0.02),
        ParamRole::Weight => match kind {
            LayerKind::Dense => {
                let (fan_in, fan_out) = match shape {
                    [i, o] => (*i, *o),
                    _ => return shape_err(format!("Dense weight must be a matrix, got {shape:?}")),
                };
                rng.normal(shape, 0.0, (2.0 / (fan_in + fan_out) as f64).sqrt())
            }
            LayerKind::Embedding => rng.normal(shape, 0.0, 1.0),
            _ => rng.normal(shape, 0.0, 0.02),
        },
    }
}

/// Instantiates a layer: checks its schema, infers the output shape and
/// initializes its parameters.
pub fn build_layer(spec: &LayerSpec, input_shape: &[usize], rng: &mut RngStream) -> Result<(LayerInstance, Vec<usize>)> {
    use LayerKind::*;
    if let Some((key, message)) = spec.schema_errors().into_iter().next() {
        return Err(Error::Param { key, message });
    }
    let output_shape = infer_shape(spec, input_shape)?;
    if spec.kind.is_recurrent() {
        return Err(Error::UnsupportedKind(spec.kind.to_string()));
    }
    let kind = spec.kind;
    let mut params = Vec::new();
    let mut add = |name, role, shape: &[usize], rng: &mut RngStream| -> Result<()> {
        params.push(NamedParam { name, value: init_params(kind, role, shape, rng)? });
        Ok(())
    };
    let mut running = None;
    match kind {
        Conv2D => {
            let k = spec.int("kernel")?;
            add("weight", ParamRole::Weight, &[output_shape[0], input_shape[0], k, k], rng)?;
            if spec.flag("bias")? {
                add("bias", ParamRole::Bias, &[output_shape[0]], rng)?;
            }
        }
        ConvTranspose2D => {
            let k = spec.int("kernel")?;
            add("weight", ParamRole::Weight, &[input_shape[0], output_shape[0], k, k], rng)?;
            if spec.flag("bias")? {
                add("bias", ParamRole::Bias, &[output_shape[0]], rng)?;
            }
        }
        Dense => {
            add("weight", ParamRole::Weight, &[input_shape[0], output_shape[0]], rng)?;
            if spec.flag("bias")? {
                add("bias", ParamRole::Bias, &[output_shape[0]], rng)?;
            }
        }
        Embedding => {
            add("weight", ParamRole::Weight, &[spec.int("num_embeddings")?, spec.int("dim")?], rng)?;
        }
        BatchNorm => {
            let c = input_shape[0];
            add("scale", ParamRole::Scale, &[c], rng)?;
            add("shift", ParamRole::Shift, &[c], rng)?;
            running = Some(RunningStats { mean: vec![0.0; c], var: vec![1.0; c] });
        }
        LayerNorm => {
            add("scale", ParamRole::Scale, input_shape, rng)?;
            add("shift", ParamRole::Shift, input_shape, rng)?;
        }
        _ => {}
    }
    let inst = LayerInstance {
        spec: spec.clone(),
        params,
        input_shape: input_shape.to_vec(),
        output_shape: output_shape.clone(),
        running,
    };
    Ok((inst, output_shape))
}

/// Per-call forward state.
pub struct ForwardCtx<'a> {
    pub mode: Mode,
    /// Required by Dropout in train mode.
    pub rng: Option<&'a mut RngStream>,
    /// `[N, width]` one-hot condition consumed by Concatenate layers.
    pub condition: Option<NodeId>,
}

impl<'a> ForwardCtx<'a> {
    pub fn new(mode: Mode) -> Self {
        Self { mode, rng: None, condition: None }
    }

    pub fn with_rng(mut self, rng: &'a mut RngStream) -> Self {
        self.rng = Some(rng);
        self
    }

    pub fn with_condition(mut self, condition: Option<NodeId>) -> Self {
        self.condition = condition;
        self
    }
}

fn batched(n: usize, shape: &[usize]) -> Vec<usize> {
    let mut s = Vec::with_capacity(shape.len() + 1);
    s.push(n);
    s.extend_from_slice(shape);
    s
}

impl LayerInstance {
    pub fn kind(&self) -> LayerKind {
        self.spec.kind
    }

    /// Applies the layer to `x` (`[N, ..input_shape]`); `params` are this
    /// layer's parameters bound into `g`, in declaration order.
    pub fn forward(&mut self, g: &mut Graph, params: &[NodeId], x: NodeId, ctx: &mut ForwardCtx) -> Result<NodeId> {
        use LayerKind::*;
        let xs = g.shape(x).to_vec();
        if xs.len() < 2 || xs[1..] != self.input_shape[..] {
            return shape_err(format!(
                "{} expects [N, {:?}], got {xs:?}",
                self.kind(),
                self.input_shape
            ));
        }
        let n = xs[0];
        let spec = &self.spec;
        let bias_nchw = |g: &mut Graph, y: NodeId, b: NodeId| -> Result<NodeId> {
            let c = g.shape(b)[0];
            let b4 = g.reshape(b, &[1, c, 1, 1])?;
            g.add(y, b4)
        };
        let y = match self.kind() {
            Conv2D => {
                let y = g.conv2d(x, params[0], spec.int("stride")?, spec.int("padding")?)?;
                if params.len() > 1 { bias_nchw(g, y, params[1])? } else { y }
            }
            ConvTranspose2D => {
                let y = g.conv_transpose2d(x, params[0], spec.int("stride")?, spec.int("padding")?)?;
                if params.len() > 1 { bias_nchw(g, y, params[1])? } else { y }
            }
            MaxPool2D => {
                let map = pool_map(g.value(x), spec, true)?;
                g.sparse(x, Arc::new(map))?
            }
            AvgPool2D => {
                let map = pool_map(g.value(x), spec, false)?;
                g.sparse(x, Arc::new(map))?
            }
            UpSample2D => {
                let s = spec.int("scale")?;
                let out = batched(n, &self.output_shape);
                let (h, w) = (xs[2], xs[3]);
                let (oh, ow) = (out[2], out[3]);
                let map = SparseMap::from_rows(
                    &xs,
                    &out,
                    (0..numel(&out)).map(|o| {
                        let (plane, rem) = (o / (oh * ow), o % (oh * ow));
                        let (oy, ox) = (rem / ow, rem % ow);
                        [(plane * h * w + (oy / s) * w + ox / s, 1.0)]
                    }),
                );
                g.sparse(x, Arc::new(map))?
            }
            SimpleRnn | Lstm | Gru => return Err(Error::UnsupportedKind(self.kind().to_string())),
            Dense => {
                let y = g.matmul(x, params[0])?;
                if params.len() > 1 { g.add(y, params[1])? } else { y }
            }
            Flatten | Reshape => g.reshape(x, &batched(n, &self.output_shape))?,
            Dropout => match ctx.mode {
                Mode::Eval => x,
                Mode::Train => {
                    let rate = spec.float("rate")?;
                    let rng = ctx
                        .rng
                        .as_deref_mut()
                        .ok_or_else(|| Error::Contract("Dropout in train mode needs an rng".into()))?;
                    let keep = 1.0 - rate;
                    let mut mask = g.value(x).zeros_like();
                    for m in mask.data_mut() {
                        *m = if rng.uniform() < keep { 1.0 / keep } else { 0.0 };
                    }
                    let m = g.constant(mask);
                    g.mul(x, m)?
                }
            },
            Concatenate => {
                let width = spec.int("width")?;
                let c = ctx
                    .condition
                    .ok_or_else(|| Error::Contract("Concatenate needs a condition vector (labels)".into()))?;
                if g.shape(c) != [n, width] {
                    return shape_err(format!("condition must be [{n}, {width}], got {:?}", g.shape(c)));
                }
                g.concat_cols(x, c)?
            }
            Embedding => {
                let w = params[0];
                let (vocab, dim) = (g.shape(w)[0], g.shape(w)[1]);
                let idx: Vec<usize> = g
                    .value(x)
                    .data()
                    .iter()
                    .map(|&v| {
                        let i = v.round();
                        if i < 0.0 || i as usize >= vocab {
                            Err(Error::Contract(format!("embedding index {v} outside [0, {vocab})")))
                        } else {
                            Ok(i as usize)
                        }
                    })
                    .collect::<Result<_>>()?;
                let out = batched(n, &self.output_shape);
                let map = SparseMap::from_rows(
                    &[vocab, dim],
                    &out,
                    (0..numel(&out)).map(|o| [(idx[o / dim] * dim + o % dim, 1.0)]),
                );
                g.sparse(w, Arc::new(map))?
            }
            Input | Output => x,
            ReLU => g.relu(x),
            LeakyReLU => g.leaky_relu(x, spec.float("slope")?),
            Sigmoid => g.sigmoid(x),
            Tanh => g.tanh(x),
            Softmax => softmax_last(g, x)?,
            BatchNorm => self.batch_norm(g, params, x, ctx.mode)?,
            LayerNorm => {
                let axes: Vec<usize> = (1..xs.len()).collect();
                let eps = spec.float("eps")?;
                let normed = normalize(g, x, &axes, eps)?;
                let y = g.mul(normed, params[0])?;
                g.add(y, params[1])?
            }
            Bce | Mse | L1 | Wasserstein | HingeLoss | Adam | RmsProp | Sgd => {
                return Err(Error::Contract(format!("{} is not a network layer", self.kind())))
            }
        };
        debug_assert_eq!(g.shape(y)[1..], self.output_shape[..]);
        Ok(y)
    }

    fn batch_norm(&mut self, g: &mut Graph, params: &[NodeId], x: NodeId, mode: Mode) -> Result<NodeId> {
        let xs = g.shape(x).to_vec();
        let c = xs[1];
        let axes: Vec<usize> = if xs.len() == 4 { vec![0, 2, 3] } else { vec![0] };
        let stat_shape: Vec<usize> = if xs.len() == 4 { vec![1, c, 1, 1] } else { vec![1, c] };
        let eps = self.spec.float("eps")?;
        let normed = match mode {
            Mode::Train => {
                let count: usize = axes.iter().map(|&a| xs[a]).product();
                let normed = normalize(g, x, &axes, eps)?;
                let momentum = self.spec.float("momentum")?;
                let stats = channel_stats(g.value(x), &axes)?;
                let running = self.running.as_mut().expect("BatchNorm keeps running statistics");
                let unbias = if count > 1 { count as f64 / (count - 1) as f64 } else { 1.0 };
                for ch in 0..c {
                    running.mean[ch] = (1.0 - momentum) * running.mean[ch] + momentum * stats.0[ch];
                    running.var[ch] = (1.0 - momentum) * running.var[ch] + momentum * stats.1[ch] * unbias;
                }
                normed
            }
            Mode::Eval => {
                let running = self.running.as_ref().expect("BatchNorm keeps running statistics");
                let mean = g.constant(Tensor::new(&stat_shape, running.mean.clone())?);
                let inv: Vec<f64> = running.var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                let inv = g.constant(Tensor::new(&stat_shape, inv)?);
                let centered = g.sub(x, mean)?;
                g.mul(centered, inv)?
            }
        };
        let scale = g.reshape(params[0], &stat_shape)?;
        let shift = g.reshape(params[1], &stat_shape)?;
        let y = g.mul(normed, scale)?;
        g.add(y, shift)
    }

    /// Mutable access to every trainable tensor, in declaration order.
    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.params.iter_mut().map(|p| &mut p.value)
    }
}

/// `(x - mean) / sqrt(var + eps)` over `axes`, with biased variance.
fn normalize(g: &mut Graph, x: NodeId, axes: &[usize], eps: f64) -> Result<NodeId> {
    let mean = g.mean_axes(x, axes)?;
    let centered = g.sub(x, mean)?;
    let sq = g.mul(centered, centered)?;
    let var = g.mean_axes(sq, axes)?;
    let shifted = g.offset(var, eps);
    let inv = g.powf(shifted, -0.5);
    g.mul(centered, inv)
}

fn channel_stats(x: &Tensor, axes: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    let count: usize = axes.iter().map(|&a| x.shape()[a]).product();
    let mean = x.sum_axes(axes)?.map(|v| v / count as f64);
    let centered = x.zip_with(&mean, |a, b| a - b)?;
    let var = centered.map(|v| v * v).sum_axes(axes)?.map(|v| v / count as f64);
    Ok((mean.into_data(), var.into_data()))
}

fn softmax_last(g: &mut Graph, x: NodeId) -> Result<NodeId> {
    let shape = g.shape(x).to_vec();
    let last = shape.len() - 1;
    // Row max is a constant shift: softmax is invariant to it.
    let mut maxes = g.value(x).sum_axes(&[last])?;
    let width = shape[last];
    for (r, m) in maxes.data_mut().iter_mut().enumerate() {
        let row = &g.value(x).data()[r * width..][..width];
        *m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    }
    let shift = g.constant(maxes);
    let z = g.sub(x, shift)?;
    let e = g.exp(z);
    let s = g.sum_axes(e, &[last])?;
    g.div(e, s)
}

fn pool_map(x: &Tensor, spec: &LayerSpec, max: bool) -> Result<SparseMap> {
    let xs = x.shape();
    let (n, c, h, w) = (xs[0], xs[1], xs[2], xs[3]);
    let (k, s, p) = (spec.int("kernel")?, spec.int("stride")?, spec.int("padding")?);
    let (Some(oh), Some(ow)) = (ConvGeom::out_extent(h, k, s, p), ConvGeom::out_extent(w, k, s, p)) else {
        return shape_err("pooling window leaves no output");
    };
    let out = [n, c, oh, ow];
    let data = x.data();
    let rows = (0..n * c * oh * ow).map(|o| {
        let plane = o / (oh * ow);
        let (oy, ox) = ((o % (oh * ow)) / ow, o % ow);
        let mut taps = Vec::with_capacity(k * k);
        for i in 0..k {
            for j in 0..k {
                let iy = (oy * s + i) as isize - p as isize;
                let ix = (ox * s + j) as isize - p as isize;
                if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w {
                    taps.push(plane * h * w + iy as usize * w + ix as usize);
                }
            }
        }
        if max {
            // Ties resolve to the first tap in row-major window order.
            let best = taps.iter().copied().fold(None, |b: Option<usize>, t| match b {
                Some(bi) if data[bi] >= data[t] => Some(bi),
                _ => Some(t),
            });
            best.map(|t| (t, 1.0)).into_iter().collect::<Vec<_>>()
        } else {
            let wgt = 1.0 / (k * k) as f64;
            taps.into_iter().map(|t| (t, wgt)).collect()
        }
    });
    Ok(SparseMap::from_rows(xs, &out, rows))
}

/// Graph parameters of a [`Network`] bound into one [`Graph`].
#[derive(Clone, Debug)]
pub struct Bound {
    pub ids: Vec<Vec<NodeId>>,
}

impl Bound {
    pub fn all(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.ids.iter().flatten().copied()
    }
}

/// An ordered stack of layer instances with inferred shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct Network {
    pub layers: Vec<LayerInstance>,
    pub input_shape: Vec<usize>,
    pub output_shape: Vec<usize>,
}

impl Network {
    /// Builds every layer in sequence; errors carry the failing layer index.
    pub fn build(specs: &[LayerSpec], input_shape: &[usize], rng: &mut RngStream) -> Result<Self, (usize, Error)> {
        let mut shape = input_shape.to_vec();
        let mut layers = Vec::with_capacity(specs.len());
        for (i, spec) in specs.iter().enumerate() {
            let (inst, out) = build_layer(spec, &shape, rng).map_err(|e| (i, e))?;
            layers.push(inst);
            shape = out;
        }
        Ok(Self { layers, input_shape: input_shape.to_vec(), output_shape: shape })
    }

    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let ids = self
            .layers
            .iter()
            .map(|l| l.params.iter().map(|p| g.leaf(p.value.clone(), trainable)).collect())
            .collect();
        Bound { ids }
    }

    pub fn forward(&mut self, g: &mut Graph, bound: &Bound, x: NodeId, ctx: &mut ForwardCtx) -> Result<NodeId> {
        let mut h = x;
        for (layer, ids) in self.layers.iter_mut().zip(&bound.ids) {
            h = layer.forward(g, ids, h, ctx)?;
        }
        Ok(h)
    }

    /// Forward pass on plain tensors, without gradient tracking.
    pub fn predict(&mut self, x: &Tensor, condition: Option<&Tensor>, mode: Mode, rng: Option<&mut RngStream>) -> Result<Tensor> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let xn = g.constant(x.clone());
        let cond = condition.map(|c| g.constant(c.clone()));
        let mut ctx = ForwardCtx { mode, rng, condition: cond };
        let y = self.forward(&mut g, &bound, xn, &mut ctx)?;
        Ok(g.value(y).clone())
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.layers.iter().flat_map(|l| l.params.iter().map(|p| &p.value))
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.layers.iter_mut().flat_map(|l| l.params_mut())
    }

    pub fn param_count(&self) -> usize {
        self.params().map(Tensor::len).sum()
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec.clone()).collect()
    }
}

/// Single-layer forward on a tensor with a leading batch axis.
pub fn layer_forward(instance: &mut LayerInstance, x: &Tensor, mode: Mode, rng: Option<&mut RngStream>) -> Result<Tensor> {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = instance.params.iter().map(|p| g.constant(p.value.clone())).collect();
    let xn = g.constant(x.clone());
    let mut ctx = ForwardCtx { mode, rng, condition: None };
    let y = instance.forward(&mut g, &ids, xn, &mut ctx)?;
    Ok(g.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::dsl;
    use crate::layers::ParamValue;

    fn rng() -> RngStream {
        RngStream::new(7)
    }

    #[test]
    fn dense_shapes() {
        let (inst, out) = build_layer(&dsl::dense(128), &[784], &mut rng()).unwrap();
        assert_eq!(out, vec![128]);
        assert_eq!(inst.params[0].value.shape(), &[784, 128]);
        assert_eq!(inst.params[1].value.shape(), &[128]);
    }

    #[test]
    fn conv_shapes() {
        let spec = dsl::conv(LayerKind::Conv2D, 64, 4, 2, 1);
        let (inst, out) = build_layer(&spec, &[1, 28, 28], &mut rng()).unwrap();
        assert_eq!(out, vec![64, 14, 14]);
        assert_eq!(inst.params[0].value.shape(), &[64, 1, 4, 4]);
        let spec = dsl::conv(LayerKind::ConvTranspose2D, 1, 4, 2, 1);
        let (_, out) = build_layer(&spec, &[64, 14, 14], &mut rng()).unwrap();
        assert_eq!(out, vec![1, 28, 28]);
    }

    #[test]
    fn dense_rejects_images() {
        let err = build_layer(&dsl::dense(8), &[1, 28, 28], &mut rng()).unwrap_err();
        assert!(matches!(err, Error::Shape(_)), "{err}");
    }

    #[test]
    fn missing_required_param_is_named() {
        let spec = LayerSpec { kind: LayerKind::Dense, params: Default::default() };
        match build_layer(&spec, &[4], &mut rng()).unwrap_err() {
            Error::Param { key, .. } => assert_eq!(key, "units"),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn recurrent_shapes_infer_but_do_not_build() {
        let spec = LayerSpec::with(LayerKind::Lstm, &[("units", ParamValue::Int(16))]);
        assert_eq!(infer_shape(&spec, &[10, 4]).unwrap(), vec![16]);
        assert!(matches!(build_layer(&spec, &[10, 4], &mut rng()), Err(Error::UnsupportedKind(_))));
    }

    #[test]
    fn identity_dense_is_identity() {
        let (mut inst, _) = build_layer(&dsl::dense(3), &[3], &mut rng()).unwrap();
        inst.params[0].value = Tensor::identity(3).unwrap();
        inst.params[1].value = Tensor::zeros(&[3]).unwrap();
        let x = Tensor::new(&[2, 3], vec![1., -2., 3., 0.5, 0., -7.]).unwrap();
        assert_eq!(layer_forward(&mut inst, &x, Mode::Eval, None).unwrap(), x);
    }

    #[test]
    fn leaky_relu_definition() {
        let (mut inst, _) = build_layer(&dsl::leaky_relu(0.2), &[2], &mut rng()).unwrap();
        let x = Tensor::new(&[1, 2], vec![-1.0, 2.0]).unwrap();
        let y = layer_forward(&mut inst, &x, Mode::Eval, None).unwrap();
        assert!((y.data()[0] + 0.2).abs() < 1e-15);
        assert_eq!(y.data()[1], 2.0);
    }

    #[test]
    fn batch_norm_train_normalizes_per_feature() {
        let (mut inst, _) = build_layer(&dsl::bare(LayerKind::BatchNorm), &[3], &mut rng()).unwrap();
        let (gamma, beta) = ([1.5, 0.5, 2.0], [0.1, -0.3, 0.0]);
        inst.params[0].value = Tensor::from_vec(gamma.to_vec()).unwrap();
        inst.params[1].value = Tensor::from_vec(beta.to_vec()).unwrap();
        let mut r = RngStream::new(3);
        let x = r.normal(&[64, 3], 2.0, 3.0).unwrap();
        let y = layer_forward(&mut inst, &x, Mode::Train, None).unwrap();
        for f in 0..3 {
            let col: Vec<f64> = (0..64).map(|i| y.data()[i * 3 + f]).collect();
            let mean = col.iter().sum::<f64>() / 64.0;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 64.0;
            // eps = 1e-5 slightly shrinks the variance: var = γ² σ² / (σ² + eps).
            let xcol: Vec<f64> = (0..64).map(|i| x.data()[i * 3 + f]).collect();
            let xm = xcol.iter().sum::<f64>() / 64.0;
            let xv = xcol.iter().map(|v| (v - xm).powi(2)).sum::<f64>() / 64.0;
            assert!((mean - beta[f]).abs() < 1e-6);
            assert!((var - gamma[f] * gamma[f] * xv / (xv + 1e-5)).abs() < 1e-6);
            assert!((var - gamma[f] * gamma[f]).abs() < 1e-5);
        }
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let specs = [dsl::dense(8), dsl::bare(LayerKind::BatchNorm), LayerSpec::with(LayerKind::Dropout, &[("rate", ParamValue::Float(0.5))])];
        let mut net = Network::build(&specs, &[4], &mut rng()).unwrap();
        let x = RngStream::new(1).normal(&[5, 4], 0.0, 1.0).unwrap();
        let a = net.predict(&x, None, Mode::Eval, None).unwrap();
        let b = net.predict(&x, None, Mode::Eval, None).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dropout_inverted_scaling() {
        let spec = LayerSpec::with(LayerKind::Dropout, &[("rate", ParamValue::Float(0.25))]);
        let (mut inst, _) = build_layer(&spec, &[1000], &mut rng()).unwrap();
        let x = Tensor::ones(&[1, 1000]).unwrap();
        let mut r = RngStream::new(2);
        let y = layer_forward(&mut inst, &x, Mode::Train, Some(&mut r)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0 || (v - 1.0 / 0.75).abs() < 1e-12));
        assert!((y.mean() - 1.0).abs() < 0.1);
        assert!(layer_forward(&mut inst, &x, Mode::Train, None).is_err());
    }

    #[test]
    fn pooling_and_upsampling() {
        let x = Tensor::new(&[1, 1, 2, 2], vec![1., 4., 3., 2.]).unwrap();
        let (mut mp, _) = build_layer(&dsl::bare(LayerKind::MaxPool2D), &[1, 2, 2], &mut rng()).unwrap();
        assert_eq!(layer_forward(&mut mp, &x, Mode::Eval, None).unwrap().data(), &[4.0]);
        let (mut ap, _) = build_layer(&dsl::bare(LayerKind::AvgPool2D), &[1, 2, 2], &mut rng()).unwrap();
        assert_eq!(layer_forward(&mut ap, &x, Mode::Eval, None).unwrap().data(), &[2.5]);
        let (mut up, out) = build_layer(&dsl::bare(LayerKind::UpSample2D), &[1, 2, 2], &mut rng()).unwrap();
        assert_eq!(out, vec![1, 4, 4]);
        let y = layer_forward(&mut up, &x, Mode::Eval, None).unwrap();
        assert_eq!(&y.data()[..4], &[1., 1., 4., 4.]);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let (mut sm, _) = build_layer(&dsl::bare(LayerKind::Softmax), &[4], &mut rng()).unwrap();
        let x = Tensor::new(&[2, 4], vec![1., 2., 3., 4., 100., 100., 100., 100.]).unwrap();
        let y = layer_forward(&mut sm, &x, Mode::Eval, None).unwrap();
        assert!((y.data()[..4].iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((y.data()[4] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn init_schemes() {
        let b = init_params(LayerKind::Dense, ParamRole::Bias, &[10], &mut rng()).unwrap();
        assert!(b.data().iter().all(|&v| v == 0.0));
        let w = init_params(LayerKind::Dense, ParamRole::Weight, &[100, 200], &mut rng()).unwrap();
        let std = (w.data().iter().map(|v| v * v).sum::<f64>() / w.len() as f64).sqrt();
        let want = (2.0f64 / 300.0).sqrt();
        assert!((std - want).abs() < 0.2 * want, "{std} vs {want}");
        let w2 = init_params(LayerKind::Dense, ParamRole::Weight, &[100, 200], &mut rng()).unwrap();
        assert_eq!(w, w2);
        let k = init_params(LayerKind::Conv2D, ParamRole::Weight, &[64, 1, 4, 4], &mut rng()).unwrap();
        let kstd = (k.data().iter().map(|v| v * v).sum::<f64>() / k.len() as f64).sqrt();
        assert!((kstd - 0.02).abs() < 0.004);
    }
}
