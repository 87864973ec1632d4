use serde::Serialize;

use crate::error::{Error, Result};
use crate::kernels::Exec;
use crate::layers::{LayerKind, LayerSpec, Network};
use crate::models::{
    family_defaults, preset_discriminator_with_labels, preset_generator_with_labels, LossKind, OptimizerKind, OptimizerState,
    Preset, ProcessKind, TrainingProcess,
};
use crate::rng::RngStream;

use super::{validate, Diagnostic, GanSpec, NetSource, NetSpec, SPEC_VERSION};

/// RNG stream that initializes parameters; training uses other streams of
/// the same seed.
pub const INIT_STREAM: u64 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct Conditioning {
    pub label_count: usize,
}

/// Outcome of the pairing rule: which family governed and what it bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Pairing {
    /// Preset name, or `custom` for a layer list.
    pub generator: String,
    pub discriminator: String,
    pub governing_family: Preset,
    pub generator_loss: LossKind,
    pub discriminator_loss: LossKind,
    pub generator_optimizer: OptimizerKind,
    pub discriminator_optimizer: OptimizerKind,
    pub process: ProcessKind,
}

/// Networks with initialized parameters plus everything training needs.
#[derive(Clone, Debug, PartialEq)]
pub struct ResolvedModel {
    pub generator: Network,
    pub discriminator: Network,
    pub gen_loss: LossKind,
    pub disc_loss: LossKind,
    pub gen_optimizer: OptimizerState,
    pub disc_optimizer: OptimizerState,
    pub process: TrainingProcess,
    pub latent_dim: usize,
    pub data_shape: Vec<usize>,
    pub conditioning: Option<Conditioning>,
    pub pairing: Pairing,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub exec: Exec,
}

pub(super) struct Bindings {
    pub family: Preset,
    pub gen_loss: LossKind,
    pub disc_loss: LossKind,
    pub gen_optimizer: OptimizerState,
    pub disc_optimizer: OptimizerState,
    pub process: TrainingProcess,
}

fn net_label(net: &NetSpec) -> String {
    match &net.source {
        NetSource::Preset(p) => p.parse::<Preset>().map_or_else(|_| p.clone(), |p| p.as_str().to_string()),
        NetSource::Layers(_) => "custom".into(),
    }
}

/// The discriminator's preset family governs; a custom discriminator defers
/// to the generator's family, and two custom networks use `gan`.
pub(super) fn governing_family(spec: &GanSpec) -> Preset {
    let preset = |n: &NetSpec| n.preset_name().and_then(|p| p.parse::<Preset>().ok());
    preset(&spec.discriminator).or_else(|| preset(&spec.generator)).unwrap_or(Preset::Gan)
}

fn optimizer(explicit: Option<&LayerSpec>, default: OptimizerState, lr: Option<f64>, path: &str) -> Result<OptimizerState, Diagnostic> {
    let Some(spec) = explicit else {
        let mut state = default;
        if let Some(lr) = lr {
            state.lr = lr;
        }
        return Ok(state);
    };
    if let Some((key, msg)) = spec.schema_errors().into_iter().next() {
        return Err(Diagnostic::error(format!("{path}/params/{key}"), msg));
    }
    let mut state = OptimizerState::from_spec(spec).map_err(|e| Diagnostic::error(path, e.to_string()))?;
    if let (Some(lr), false) = (lr, spec.params.contains_key("lr")) {
        state.lr = lr;
    }
    Ok(state)
}

/// Losses, optimizers and process under the pairing rule, with explicit
/// fields overriding the governing family's defaults.
pub(super) fn bind(spec: &GanSpec) -> Result<Bindings, Vec<Diagnostic>> {
    let family = governing_family(spec);
    let defaults = family_defaults(family);
    let mut diags = Vec::new();
    let lr = spec.gan_model.learning_rate;
    let gen_optimizer = optimizer(spec.generator.optimizer.as_ref(), defaults.gen_optimizer, lr, "/generator/optimizer")
        .map_err(|d| diags.push(d))
        .ok();
    let disc_optimizer =
        optimizer(spec.discriminator.optimizer.as_ref(), defaults.disc_optimizer, lr, "/discriminator/optimizer")
            .map_err(|d| diags.push(d))
            .ok();
    let mut process = defaults.process;
    if let Some(p) = &spec.train_process {
        if let Some(choice) = &p.choice {
            match choice.parse::<ProcessKind>() {
                Ok(kind) => process = TrainingProcess::new(kind),
                Err(e) => diags.push(Diagnostic::error("/train_process/choice", e.to_string())),
            }
        }
        let path = |k: &str| format!("/train_process/params/{k}");
        let q = &p.params;
        if let Some(n) = q.n_critic {
            if n < 1 {
                diags.push(Diagnostic::error(path("n_critic"), format!("n_critic must be ≥ 1, got {n}")));
            } else {
                process.n_critic = n as usize;
            }
        }
        if let Some(c) = q.clip_value {
            if !(c > 0.0 && c.is_finite()) {
                diags.push(Diagnostic::error(path("clip_value"), format!("clip_value must be > 0, got {c}")));
            } else {
                process.clip_value = c;
            }
        }
        if let Some(l) = q.gp_lambda {
            if !(l >= 0.0 && l.is_finite()) {
                diags.push(Diagnostic::error(path("gp_lambda"), format!("gp_lambda must be ≥ 0, got {l}")));
            } else {
                process.gp_lambda = l;
            }
        }
        if let Some(n) = q.label_count {
            if n < 1 {
                diags.push(Diagnostic::error(path("label_count"), format!("label_count must be ≥ 1, got {n}")));
            } else {
                process.label_count = n as usize;
            }
        }
    }
    if !diags.is_empty() {
        return Err(diags);
    }
    Ok(Bindings {
        family,
        gen_loss: spec.generator.loss.unwrap_or(defaults.gen_loss),
        disc_loss: spec.discriminator.loss.unwrap_or(defaults.disc_loss),
        gen_optimizer: gen_optimizer.expect("no diagnostics"),
        disc_optimizer: disc_optimizer.expect("no diagnostics"),
        process,
    })
}

/// The pairing-rule outcome for `spec`, without building any network.
pub fn pairing(spec: &GanSpec) -> Result<Pairing> {
    let b = bind(spec).map_err(Error::Diagnostics)?;
    Ok(pairing_of(spec, &b))
}

fn pairing_of(spec: &GanSpec, b: &Bindings) -> Pairing {
    Pairing {
        generator: net_label(&spec.generator),
        discriminator: net_label(&spec.discriminator),
        governing_family: b.family,
        generator_loss: b.gen_loss,
        discriminator_loss: b.disc_loss,
        generator_optimizer: b.gen_optimizer.kind,
        discriminator_optimizer: b.disc_optimizer.kind,
        process: b.process.kind,
    }
}

/// Layer lists for both networks. Preset expansion needs the data shape.
pub(super) fn layer_lists(
    spec: &GanSpec,
    data_shape: &[usize],
    label_count: usize,
) -> (Result<Vec<LayerSpec>, Diagnostic>, Result<Vec<LayerSpec>, Diagnostic>) {
    let latent = spec.gan_model.latent_dim();
    let expand = |net: &NetSpec, path: &str, gen: bool| match &net.source {
        NetSource::Layers(l) => Ok(l.clone()),
        NetSource::Preset(name) => {
            let built = name.parse::<Preset>().and_then(|p| {
                if gen {
                    preset_generator_with_labels(p, latent, data_shape, label_count)
                } else {
                    preset_discriminator_with_labels(p, data_shape, label_count)
                }
            });
            built.map_err(|e| Diagnostic::error(format!("{path}/choice"), e.to_string()))
        }
    };
    (expand(&spec.generator, "/generator", true), expand(&spec.discriminator, "/discriminator", false))
}

fn contains_concat(layers: &[LayerSpec]) -> bool {
    layers.iter().any(|l| l.kind == LayerKind::Concatenate)
}

fn build(specs: &[LayerSpec], input: &[usize], rng: &mut RngStream, net: &NetSpec, path: &str) -> Result<Network> {
    Network::build(specs, input, rng).map_err(|(i, e)| match e {
        Error::UnsupportedKind(_) => e,
        e => {
            let at = match net.source {
                NetSource::Layers(_) => format!("{path}/layers/{i}"),
                NetSource::Preset(_) => format!("{path}/choice"),
            };
            Error::Diagnostics(vec![Diagnostic::error(at, format!("layer {i} ({}): {e}", specs[i].kind))])
        }
    })
}

/// Expands presets, binds losses/optimizers/process under the pairing rule,
/// builds both networks with parameters drawn from the spec's seed, and
/// checks the generator output against `data_shape`.
pub fn resolve(spec: &GanSpec, data_shape: &[usize]) -> Result<ResolvedModel> {
    if let Some(hint) = &spec.gan_model.data_shape {
        if hint != data_shape {
            return Err(Error::Diagnostics(vec![Diagnostic::error(
                "/GAN_model/data_shape",
                format!("declared data shape {hint:?} but the data has {data_shape:?}"),
            )]));
        }
    }
    if data_shape.is_empty() || data_shape.contains(&0) {
        return Err(Error::Shape(format!("invalid data shape {data_shape:?}")));
    }
    let mut hinted = spec.clone();
    hinted.gan_model.data_shape = Some(data_shape.to_vec());
    let errors: Vec<_> = validate(&hinted).into_iter().filter(Diagnostic::is_error).collect();
    if !errors.is_empty() {
        return Err(Error::Diagnostics(errors));
    }
    debug_assert!(spec.spec_version.as_deref().is_none_or(|v| v == SPEC_VERSION));
    let b = bind(spec).map_err(Error::Diagnostics)?;
    let (gen_specs, disc_specs) = layer_lists(spec, data_shape, b.process.label_count);
    let gen_specs = gen_specs.map_err(|d| Error::Diagnostics(vec![d]))?;
    let disc_specs = disc_specs.map_err(|d| Error::Diagnostics(vec![d]))?;

    let latent_dim = spec.gan_model.latent_dim();
    let mut rng = RngStream::new(spec.gan_model.seed()).substream(INIT_STREAM);
    let generator = build(&gen_specs, &[latent_dim], &mut rng, &spec.generator, "/generator")?;
    let discriminator = build(&disc_specs, data_shape, &mut rng, &spec.discriminator, "/discriminator")?;
    if generator.output_shape != data_shape {
        return Err(Error::Diagnostics(vec![Diagnostic::error(
            "/generator",
            format!("generator produces {:?} but the data is {data_shape:?}", generator.output_shape),
        )]));
    }
    if discriminator.output_shape != [1] {
        return Err(Error::Diagnostics(vec![Diagnostic::error(
            "/discriminator",
            format!("discriminator must score each sample with one value, got {:?}", discriminator.output_shape),
        )]));
    }
    let conditional =
        b.process.kind == ProcessKind::Conditional || contains_concat(&gen_specs) || contains_concat(&disc_specs);
    let conditioning = conditional.then_some(Conditioning { label_count: b.process.label_count });
    let pairing = pairing_of(spec, &b);
    Ok(ResolvedModel {
        generator,
        discriminator,
        gen_loss: b.gen_loss,
        disc_loss: b.disc_loss,
        gen_optimizer: b.gen_optimizer,
        disc_optimizer: b.disc_optimizer,
        process: b.process,
        latent_dim,
        data_shape: data_shape.to_vec(),
        conditioning,
        pairing,
        epochs: spec.gan_model.epochs(),
        batch_size: spec.gan_model.batch_size(),
        seed: spec.gan_model.seed(),
        exec: Exec::default(),
    })
}
