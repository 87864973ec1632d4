//! The five named architectures and the training defaults of their family.

use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use serde_json::json;

use crate::error::{shape_err, Error, Result};
use crate::layers::dsl::{bare, concat, conv, dense, leaky_relu, reshape};
use crate::layers::{LayerKind, LayerSpec};
use crate::tensor::numel;

use super::loss::LossKind;
use super::optim::OptimizerState;
use super::process::{ProcessKind, TrainingProcess};

pub const DEFAULT_LATENT_DIM: usize = 100;
pub const DEFAULT_LABEL_COUNT: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Gan,
    Cgan,
    Dcgan,
    Wgan,
    WganGp,
}

impl Preset {
    pub const ALL: [Preset; 5] = [Preset::Gan, Preset::Cgan, Preset::Dcgan, Preset::Wgan, Preset::WganGp];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Gan => "gan",
            Preset::Cgan => "cgan",
            Preset::Dcgan => "dcgan",
            Preset::Wgan => "wgan",
            Preset::WganGp => "wgan_gp",
        }
    }

    pub fn display_name(self) -> &'static str {
        match self {
            Preset::Gan => "Vanilla GAN",
            Preset::Cgan => "Conditional GAN",
            Preset::Dcgan => "Deep Convolutional GAN",
            Preset::Wgan => "Wasserstein GAN",
            Preset::WganGp => "Wasserstein GAN with Gradient Penalty",
        }
    }

    pub fn names() -> Vec<String> {
        Self::ALL.iter().map(|p| p.as_str().to_string()).collect()
    }
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Preset {
    type Err = Error;

    /// Case-insensitive; `-` is accepted for `_`.
    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Self::ALL
            .iter()
            .copied()
            .find(|p| p.as_str() == norm)
            .ok_or_else(|| Error::Registry { name: s.to_string(), valid: Self::names() })
    }
}

/// Loss pair, optimizers and process a family brings when it governs a pairing.
#[derive(Clone, Debug, PartialEq)]
pub struct FamilyDefaults {
    pub gen_loss: LossKind,
    pub disc_loss: LossKind,
    pub gen_optimizer: OptimizerState,
    pub disc_optimizer: OptimizerState,
    pub process: TrainingProcess,
}

pub fn family_defaults(preset: Preset) -> FamilyDefaults {
    let adam = || OptimizerState::adam(2e-4, 0.5, 0.999, 1e-8);
    let bce = |process| FamilyDefaults {
        gen_loss: LossKind::Bce,
        disc_loss: LossKind::Bce,
        gen_optimizer: adam(),
        disc_optimizer: adam(),
        process: TrainingProcess::new(process),
    };
    match preset {
        Preset::Gan | Preset::Dcgan => bce(ProcessKind::Standard),
        Preset::Cgan => bce(ProcessKind::Conditional),
        Preset::Wgan => FamilyDefaults {
            gen_loss: LossKind::Wasserstein,
            disc_loss: LossKind::Wasserstein,
            gen_optimizer: OptimizerState::rmsprop(5e-5, 0.9, 1e-8),
            disc_optimizer: OptimizerState::rmsprop(5e-5, 0.9, 1e-8),
            process: TrainingProcess::new(ProcessKind::WganClip),
        },
        Preset::WganGp => FamilyDefaults {
            gen_loss: LossKind::Wasserstein,
            disc_loss: LossKind::Wasserstein,
            gen_optimizer: OptimizerState::adam(1e-4, 0.0, 0.9, 1e-8),
            disc_optimizer: OptimizerState::adam(1e-4, 0.0, 0.9, 1e-8),
            process: TrainingProcess::new(ProcessKind::WganGp),
        },
    }
}

fn mlp_generator(data_shape: &[usize], condition: Option<usize>) -> Vec<LayerSpec> {
    let mut layers = Vec::new();
    if let Some(width) = condition {
        layers.push(concat(width));
    }
    for units in [256, 512, 1024] {
        layers.push(dense(units));
        layers.push(leaky_relu(0.2));
    }
    layers.push(dense(numel(data_shape)));
    layers.push(bare(LayerKind::Tanh));
    layers.push(reshape(data_shape));
    layers
}

fn mlp_discriminator(condition: Option<usize>, probabilities: bool) -> Vec<LayerSpec> {
    let mut layers = vec![bare(LayerKind::Flatten)];
    if let Some(width) = condition {
        layers.push(concat(width));
    }
    for units in [512, 256] {
        layers.push(dense(units));
        layers.push(leaky_relu(0.2));
    }
    layers.push(dense(1));
    if probabilities {
        layers.push(bare(LayerKind::Sigmoid));
    }
    layers
}

fn image_dims(preset: Preset, data_shape: &[usize]) -> Result<(usize, usize, usize)> {
    match data_shape {
        [c, h, w] if h % 4 == 0 && w % 4 == 0 && *h >= 4 && *w >= 4 => Ok((*c, *h, *w)),
        _ => shape_err(format!(
            "{preset} needs image data [C, H, W] with H and W divisible by 4, got {data_shape:?}"
        )),
    }
}

/// Generator layer list for `name`, consuming `[latent_dim]` and producing
/// `data_shape` through a final Tanh.
pub fn preset_generator(name: &str, latent_dim: usize, data_shape: &[usize]) -> Result<Vec<LayerSpec>> {
    preset_generator_with_labels(name.parse()?, latent_dim, data_shape, DEFAULT_LABEL_COUNT)
}

pub fn preset_generator_with_labels(
    preset: Preset,
    latent_dim: usize,
    data_shape: &[usize],
    label_count: usize,
) -> Result<Vec<LayerSpec>> {
    // The latent width only fixes the first layer's input, which is inferred.
    let _ = latent_dim;
    Ok(match preset {
        Preset::Gan | Preset::Wgan | Preset::WganGp => mlp_generator(data_shape, None),
        Preset::Cgan => mlp_generator(data_shape, Some(label_count)),
        Preset::Dcgan => {
            let (c, h, w) = image_dims(preset, data_shape)?;
            let (h4, w4) = (h / 4, w / 4);
            vec![
                dense(128 * h4 * w4),
                reshape(&[128, h4, w4]),
                bare(LayerKind::BatchNorm),
                bare(LayerKind::ReLU),
                conv(LayerKind::ConvTranspose2D, 64, 4, 2, 1),
                bare(LayerKind::BatchNorm),
                bare(LayerKind::ReLU),
                conv(LayerKind::ConvTranspose2D, c, 4, 2, 1),
                bare(LayerKind::Tanh),
            ]
        }
    })
}

/// Discriminator (or critic) layer list for `name`, consuming `data_shape`
/// and producing one score per sample.
pub fn preset_discriminator(name: &str, data_shape: &[usize]) -> Result<Vec<LayerSpec>> {
    preset_discriminator_with_labels(name.parse()?, data_shape, DEFAULT_LABEL_COUNT)
}

pub fn preset_discriminator_with_labels(preset: Preset, data_shape: &[usize], label_count: usize) -> Result<Vec<LayerSpec>> {
    Ok(match preset {
        Preset::Gan => mlp_discriminator(None, true),
        Preset::Cgan => mlp_discriminator(Some(label_count), true),
        Preset::Wgan | Preset::WganGp => mlp_discriminator(None, false),
        Preset::Dcgan => {
            image_dims(preset, data_shape)?;
            vec![
                conv(LayerKind::Conv2D, 64, 4, 2, 1),
                leaky_relu(0.2),
                conv(LayerKind::Conv2D, 128, 4, 2, 1),
                bare(LayerKind::BatchNorm),
                leaky_relu(0.2),
                bare(LayerKind::Flatten),
                dense(1),
                bare(LayerKind::Sigmoid),
            ]
        }
    })
}

/// The registry document: every preset's layer lists for `[1, 28, 28]` data
/// and latent size 100, plus the defaults it brings as governing family.
pub fn registry_json() -> serde_json::Value {
    let shape = [1, 28, 28];
    let presets: Vec<_> = Preset::ALL
        .iter()
        .map(|&p| {
            let d = family_defaults(p);
            let layers = |l: Vec<LayerSpec>| l.iter().map(LayerSpec::to_json).collect::<Vec<_>>();
            json!({
                "name": p.as_str(),
                "display_name": p.display_name(),
                "generator": layers(preset_generator_with_labels(p, DEFAULT_LATENT_DIM, &shape, DEFAULT_LABEL_COUNT).expect("presets build for MNIST")),
                "discriminator": layers(preset_discriminator_with_labels(p, &shape, DEFAULT_LABEL_COUNT).expect("presets build for MNIST")),
                "defaults": {
                    "generator_loss": d.gen_loss,
                    "discriminator_loss": d.disc_loss,
                    "generator_optimizer": d.gen_optimizer.to_spec().to_json(),
                    "discriminator_optimizer": d.disc_optimizer.to_spec().to_json(),
                    "train_process": d.process.to_json(),
                },
            })
        })
        .collect();
    json!({
        "reference_data_shape": shape,
        "reference_latent_dim": DEFAULT_LATENT_DIM,
        "presets": presets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::Network;
    use crate::rng::RngStream;

    #[test]
    fn every_preset_builds_for_mnist() {
        let shape = [1, 28, 28];
        for p in Preset::ALL {
            let mut rng = RngStream::new(0);
            let g = preset_generator_with_labels(p, 100, &shape, 10).unwrap();
            let gen = Network::build(&g, &[100], &mut rng).map_err(|(i, e)| format!("{p} layer {i}: {e}")).unwrap();
            assert_eq!(gen.output_shape, shape, "{p}");
            let d = preset_discriminator_with_labels(p, &shape, 10).unwrap();
            let disc = Network::build(&d, &shape, &mut rng).map_err(|(i, e)| format!("{p} layer {i}: {e}")).unwrap();
            assert_eq!(disc.output_shape, [1], "{p}");
        }
    }

    #[test]
    fn gan_generator_layout() {
        let g = preset_generator("gan", 100, &[1, 28, 28]).unwrap();
        let units: Vec<usize> = g.iter().filter(|l| l.kind == LayerKind::Dense).map(|l| l.int("units").unwrap()).collect();
        assert_eq!(units, [256, 512, 1024, 784]);
        assert_eq!(g[g.len() - 2].kind, LayerKind::Tanh);
        assert_eq!(g.last().unwrap().shape("shape").unwrap().unwrap(), [1, 28, 28]);
    }

    #[test]
    fn critic_heads() {
        let shape = [1, 28, 28];
        assert_eq!(preset_discriminator("gan", &shape).unwrap().last().unwrap().kind, LayerKind::Sigmoid);
        assert_eq!(preset_discriminator("dcgan", &shape).unwrap().last().unwrap().kind, LayerKind::Sigmoid);
        for name in ["wgan", "wgan_gp"] {
            let d = preset_discriminator(name, &shape).unwrap();
            assert_eq!(d.last().unwrap().kind, LayerKind::Dense);
            assert!(d.iter().all(|l| !matches!(l.kind, LayerKind::BatchNorm | LayerKind::LayerNorm)));
        }
    }

    #[test]
    fn unknown_name_lists_valid() {
        match preset_generator("biggan", 100, &[1, 28, 28]).unwrap_err() {
            Error::Registry { name, valid } => {
                assert_eq!(name, "biggan");
                assert_eq!(valid, ["gan", "cgan", "dcgan", "wgan", "wgan_gp"]);
            }
            e => panic!("{e}"),
        }
    }

    #[test]
    fn name_normalization() {
        assert_eq!("WGAN-GP".parse::<Preset>().unwrap(), Preset::WganGp);
        assert_eq!("DCGAN".parse::<Preset>().unwrap(), Preset::Dcgan);
    }

    #[test]
    fn registry_lists_five() {
        let r = registry_json();
        assert_eq!(r["presets"].as_array().unwrap().len(), 5);
        assert_eq!(r["presets"][3]["defaults"]["train_process"]["choice"], "wgan_clip");
    }
}
