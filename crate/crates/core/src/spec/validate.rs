use std::path::Path;

use crate::layers::{infer_shape, LayerKind, LayerSpec};
use crate::models::{LossKind, Preset};

use super::resolve::{bind, layer_lists};
use super::{Diagnostic, GanSpec, NetSource, NetSpec, SPEC_VERSION};

/// Data file names the loaders understand (see `data::load_dataset`).
pub(crate) fn supported_data_path(path: &str) -> bool {
    let p = Path::new(path);
    let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("").to_ascii_lowercase();
    let ext = p.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    name.ends_with("-ubyte") || matches!(ext.as_str(), "idx" | "gfd" | "gfd1" | "pkl")
}

fn check_net(net: &NetSpec, path: &str, d: &mut Vec<Diagnostic>) {
    match &net.source {
        NetSource::Preset(name) => {
            if let Err(e) = name.parse::<Preset>() {
                d.push(Diagnostic::error(format!("{path}/choice"), e.to_string()));
            }
        }
        NetSource::Layers(layers) => {
            if layers.is_empty() {
                d.push(Diagnostic::error(format!("{path}/layers"), "a layer list needs at least one layer"));
            }
            for (i, l) in layers.iter().enumerate() {
                let lp = format!("{path}/layers/{i}");
                if !l.kind.is_network_layer() {
                    d.push(Diagnostic::error(
                        format!("{lp}/kind"),
                        format!("{} is a {} entry; set it through `loss` or `optimizer`", l.kind, l.kind.category().as_str()),
                    ));
                    continue;
                }
                for (key, msg) in l.schema_errors() {
                    d.push(Diagnostic::error(format!("{lp}/params/{key}"), msg));
                }
                if l.kind.is_recurrent() {
                    d.push(Diagnostic::warning(
                        &lp,
                        format!("{} passes shape inference but cannot be executed; resolution will fail", l.kind),
                    ));
                }
            }
        }
    }
}

/// Walks `layers` from `input`; returns the output shape or records the first
/// inconsistent layer.
fn walk(layers: &[LayerSpec], input: &[usize], at: &dyn Fn(usize) -> String, label_count: usize, d: &mut Vec<Diagnostic>) -> Option<Vec<usize>> {
    let mut shape = input.to_vec();
    for (i, l) in layers.iter().enumerate() {
        if l.kind == LayerKind::Concatenate {
            if let Ok(w) = l.int("width") {
                if w != label_count {
                    d.push(Diagnostic::error(
                        at(i),
                        format!("Concatenate width {w} must equal the label count {label_count}"),
                    ));
                    return None;
                }
            }
        }
        match infer_shape(l, &shape) {
            Ok(s) => shape = s,
            Err(e) => {
                d.push(Diagnostic::error(at(i), format!("layer {i} ({}) on input {shape:?}: {e}", l.kind)));
                return None;
            }
        }
    }
    Some(shape)
}

fn at_fn(net: &NetSpec, path: &str) -> Box<dyn Fn(usize) -> String> {
    let path = path.to_string();
    match net.source {
        NetSource::Layers(_) => Box::new(move |i| format!("{path}/layers/{i}")),
        NetSource::Preset(_) => Box::new(move |_| format!("{path}/choice")),
    }
}

/// Every finding about `spec`. The result is empty iff the spec resolves;
/// warnings flag constructs that parse and shape-check but cannot run.
/// Shapes are inferred end to end when `GAN_model.data_shape` is given;
/// otherwise custom generators are still checked from the latent input.
pub fn validate(spec: &GanSpec) -> Vec<Diagnostic> {
    let mut d = Vec::new();
    if let Some(v) = &spec.spec_version {
        if v != SPEC_VERSION {
            d.push(Diagnostic::error("/spec_version", format!("unsupported spec_version `{v}`; this build reads \"1\"")));
        }
    }
    let m = &spec.gan_model;
    for (key, v) in [("epochs", m.epochs), ("batch_size", m.batch_size), ("latent_dim", m.latent_dim)] {
        if v == Some(0) {
            d.push(Diagnostic::error(format!("/GAN_model/{key}"), format!("{key} must be ≥ 1")));
        }
    }
    if let Some(lr) = m.learning_rate {
        if !(lr > 0.0 && lr.is_finite()) {
            d.push(Diagnostic::error("/GAN_model/learning_rate", format!("learning_rate must be > 0, got {lr}")));
        }
    }
    if let Some(s) = &m.data_shape {
        if s.is_empty() || s.contains(&0) {
            d.push(Diagnostic::error("/GAN_model/data_shape", format!("extents must be positive and non-empty, got {s:?}")));
        }
    }
    check_net(&spec.generator, "/generator", &mut d);
    check_net(&spec.discriminator, "/discriminator", &mut d);
    if spec.data_path.trim().is_empty() {
        d.push(Diagnostic::error("/data_path", "data_path is empty"));
    } else if !supported_data_path(&spec.data_path) {
        d.push(Diagnostic::error(
            "/data_path",
            format!("unsupported data format `{}`; use IDX (.idx, *-ubyte), GFD1 (.gfd) or a .pkl name with a converted sibling", spec.data_path),
        ));
    }
    let bindings = match bind(spec) {
        Ok(b) => b,
        Err(mut more) => {
            d.append(&mut more);
            return d;
        }
    };
    if d.iter().any(Diagnostic::is_error) {
        return d;
    }

    let labels = bindings.process.label_count;
    let hint = m.data_shape.clone();
    // Presets expand only once the data shape is known.
    let (gen_layers, disc_layers) = match &hint {
        Some(shape) => {
            let (g, dl) = layer_lists(spec, shape, labels);
            (g.map(Some), dl.map(Some))
        }
        None => {
            let custom = |n: &NetSpec| match &n.source {
                NetSource::Layers(l) => Ok(Some(l.clone())),
                NetSource::Preset(_) => Ok(None),
            };
            (custom(&spec.generator), custom(&spec.discriminator))
        }
    };
    let mut gen_out = None;
    match gen_layers {
        Ok(Some(layers)) => {
            let at = at_fn(&spec.generator, "/generator");
            gen_out = walk(&layers, &[m.latent_dim()], &*at, labels, &mut d);
            if let (Some(out), Some(shape)) = (&gen_out, &hint) {
                if out != shape {
                    d.push(Diagnostic::error(
                        at(layers.len() - 1),
                        format!("generator output {out:?} does not match the data shape {shape:?}"),
                    ));
                }
            }
        }
        Ok(None) => {}
        Err(diag) => d.push(diag),
    }
    let disc_input = hint.clone().or(gen_out);
    match (disc_layers, disc_input) {
        (Ok(Some(layers)), Some(input)) => {
            let at = at_fn(&spec.discriminator, "/discriminator");
            if let Some(out) = walk(&layers, &input, &*at, labels, &mut d) {
                if out != [1] {
                    d.push(Diagnostic::error(
                        at(layers.len() - 1),
                        format!("discriminator must output one score per sample, got {out:?}"),
                    ));
                }
            }
        }
        (Err(diag), _) => d.push(diag),
        _ => {}
    }
    if let NetSource::Layers(layers) = &spec.discriminator.source {
        let uses_bce = bindings.disc_loss == LossKind::Bce || bindings.gen_loss == LossKind::Bce;
        if uses_bce && layers.last().is_some_and(|l| l.kind != LayerKind::Sigmoid) {
            d.push(Diagnostic::error(
                "/discriminator",
                "bce needs probabilities: end the discriminator with Sigmoid or choose a score-based loss",
            ));
        }
    }
    d
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::dsl;
    use crate::spec::{parse_spec, ProcessParams, ProcessSpec};

    fn base() -> GanSpec {
        GanSpec::from_presets("dcgan", "dcgan", "dataset/mnistData.pkl")
    }

    #[test]
    fn presets_are_clean() {
        assert!(validate(&base()).is_empty());
    }

    #[test]
    fn unknown_preset_lists_valid_names() {
        let mut s = base();
        s.generator = NetSpec::preset("notagan");
        let d = validate(&s);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].path, "/generator/choice");
        assert!(d[0].message.contains("gan, cgan, dcgan, wgan, wgan_gp"), "{}", d[0].message);
    }

    #[test]
    fn n_critic_range() {
        let mut s = GanSpec::from_presets("wgan", "wgan", "d.idx");
        s.train_process = Some(ProcessSpec {
            choice: Some("wgan_clip".into()),
            params: ProcessParams { n_critic: Some(0), ..Default::default() },
        });
        let d = validate(&s);
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].path, "/train_process/params/n_critic");
    }

    #[test]
    fn unsupported_data_format() {
        let mut s = base();
        s.data_path = "digits.csv".into();
        assert_eq!(validate(&s)[0].path, "/data_path");
    }

    #[test]
    fn custom_shapes_checked_against_hint() {
        let mut s = base();
        s.gan_model.data_shape = Some(vec![1, 28, 28]);
        s.generator = NetSpec::layers(vec![dsl::dense(64), dsl::conv(LayerKind::Conv2D, 4, 3, 1, 0)]);
        let d = validate(&s);
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].path, "/generator/layers/1");
    }

    #[test]
    fn bce_needs_sigmoid() {
        let mut s = GanSpec::from_presets("gan", "gan", "d.idx");
        s.discriminator = NetSpec::layers(vec![dsl::bare(LayerKind::Flatten), dsl::dense(1)]);
        let d = validate(&s);
        assert_eq!(d.len(), 1, "{d:?}");
        assert_eq!(d[0].path, "/discriminator");
    }

    #[test]
    fn loss_layers_cannot_sit_in_networks() {
        let text = r#"{"generator":{"layers":[{"kind":"BCE"}]},"discriminator":{"choice":"gan"},"data_path":"a.idx"}"#;
        let d = validate(&parse_spec(text).unwrap());
        assert_eq!(d[0].path, "/generator/layers/0/kind");
    }
}
