use serde_json::{Map, Value};

use crate::layers::{LayerKind, LayerSpec};
use crate::models::LossKind;

use super::{Diagnostic, GanModel, GanSpec, NetSource, NetSpec, ProcessSpec};

const TOP_KEYS: &[&str] = &["spec_version", "GAN_model", "generator", "discriminator", "train_process", "data_path", "labels_path"];
const MODEL_KEYS: &[&str] = &["epochs", "batch_size", "seed", "latent_dim", "learning_rate", "data_shape"];
const NET_KEYS: &[&str] = &["choice", "layers", "optimizer", "loss"];
const PROCESS_KEYS: &[&str] = &["choice", "params"];
const PROCESS_PARAMS: &[&str] = &["n_critic", "clip_value", "gp_lambda", "label_count"];

struct Parser {
    diags: Vec<Diagnostic>,
}

fn describe(v: &Value) -> String {
    let s = v.to_string();
    if s.len() > 40 {
        format!("{}...", &s[..37])
    } else {
        s
    }
}

impl Parser {
    fn err(&mut self, path: impl Into<String>, msg: impl Into<String>) {
        self.diags.push(Diagnostic::error(path, msg));
    }

    fn object<'v>(&mut self, v: &'v Value, path: &str, allowed: &[&str]) -> Option<&'v Map<String, Value>> {
        let Some(obj) = v.as_object() else {
            self.err(path, format!("expected an object, got {}", describe(v)));
            return None;
        };
        for key in obj.keys() {
            if !allowed.contains(&key.as_str()) {
                self.err(format!("{path}/{key}"), format!("unknown key `{key}`; allowed: {}", allowed.join(", ")));
            }
        }
        Some(obj)
    }

    /// Non-negative integer, as a JSON number or a numeric string.
    fn uint(&mut self, v: &Value, path: &str) -> Option<u64> {
        let parsed = match v {
            Value::Number(n) => n.as_u64().or_else(|| n.as_f64().filter(|x| *x >= 0.0 && x.fract() == 0.0).map(|x| x as u64)),
            Value::String(s) => s.trim().parse::<u64>().ok(),
            _ => None,
        };
        if parsed.is_none() {
            self.err(path, format!("expected a non-negative integer, got {}", describe(v)));
        }
        parsed
    }

    fn int(&mut self, v: &Value, path: &str) -> Option<i64> {
        let parsed = match v {
            Value::Number(n) => n.as_i64().or_else(|| n.as_f64().filter(|x| x.fract() == 0.0).map(|x| x as i64)),
            Value::String(s) => s.trim().parse::<i64>().ok(),
            _ => None,
        };
        if parsed.is_none() {
            self.err(path, format!("expected an integer, got {}", describe(v)));
        }
        parsed
    }

    fn float(&mut self, v: &Value, path: &str) -> Option<f64> {
        let parsed = match v {
            Value::Number(n) => n.as_f64(),
            Value::String(s) => s.trim().parse::<f64>().ok(),
            _ => None,
        };
        if parsed.is_none() {
            self.err(path, format!("expected a number, got {}", describe(v)));
        }
        parsed
    }

    fn string(&mut self, v: &Value, path: &str) -> Option<String> {
        match v {
            Value::String(s) => Some(s.clone()),
            _ => {
                self.err(path, format!("expected a string, got {}", describe(v)));
                None
            }
        }
    }

    fn gan_model(&mut self, v: &Value, path: &str) -> GanModel {
        let mut m = GanModel::default();
        let Some(obj) = self.object(v, path, MODEL_KEYS) else { return m };
        for (k, v) in obj {
            let p = format!("{path}/{k}");
            match k.as_str() {
                "epochs" => m.epochs = self.uint(v, &p),
                "batch_size" => m.batch_size = self.uint(v, &p),
                "seed" => m.seed = self.uint(v, &p),
                "latent_dim" => m.latent_dim = self.uint(v, &p),
                "learning_rate" => m.learning_rate = self.float(v, &p),
                "data_shape" => {
                    let dims = v.as_array().map(|a| {
                        a.iter().enumerate().map(|(i, e)| self.uint(e, &format!("{p}/{i}")).map(|d| d as usize)).collect::<Option<Vec<_>>>()
                    });
                    match dims {
                        Some(d) => m.data_shape = d,
                        None => self.err(&p, format!("expected a list of extents, got {}", describe(v))),
                    }
                }
                _ => {}
            }
        }
        m
    }

    fn layer(&mut self, v: &Value, path: &str) -> Option<LayerSpec> {
        match LayerSpec::from_json(v) {
            Ok(l) => Some(l),
            Err((sub, msg)) => {
                self.err(format!("{path}{sub}"), msg);
                None
            }
        }
    }

    fn optimizer(&mut self, v: &Value, path: &str) -> Option<LayerSpec> {
        let spec = match v {
            Value::String(s) => match s.parse::<LayerKind>() {
                Ok(kind) => LayerSpec { kind, params: Default::default() },
                Err(e) => {
                    self.err(path, e.to_string());
                    return None;
                }
            },
            _ => self.layer(v, path)?,
        };
        if !matches!(spec.kind, LayerKind::Adam | LayerKind::RmsProp | LayerKind::Sgd) {
            self.err(path, format!("{} is not an optimizer; choose Adam, RMSProp or SGD", spec.kind));
            return None;
        }
        Some(spec)
    }

    fn loss(&mut self, v: &Value, path: &str) -> Option<LossKind> {
        let name = match v {
            Value::String(s) => s.clone(),
            Value::Object(o) if o.len() == 1 && o.get("kind").is_some_and(Value::is_string) => o["kind"].as_str()?.to_string(),
            _ => {
                self.err(path, format!("expected a loss name, got {}", describe(v)));
                return None;
            }
        };
        match name.parse::<LossKind>() {
            Ok(l) => Some(l),
            Err(e) => {
                self.err(path, e.to_string());
                None
            }
        }
    }

    fn net(&mut self, v: &Value, path: &str) -> Option<NetSpec> {
        let obj = self.object(v, path, NET_KEYS)?;
        let source = match (obj.get("choice"), obj.get("layers")) {
            (Some(_), Some(_)) => {
                self.err(path, "specify exactly one of `choice` and `layers`, not both");
                None
            }
            (None, None) => {
                self.err(path, "specify a preset `choice` or a `layers` list");
                None
            }
            (Some(c), None) => self.string(c, &format!("{path}/choice")).map(NetSource::Preset),
            (None, Some(Value::Array(items))) => {
                let n = self.diags.len();
                let layers: Vec<_> =
                    items.iter().enumerate().filter_map(|(i, l)| self.layer(l, &format!("{path}/layers/{i}"))).collect();
                (self.diags.len() == n).then_some(NetSource::Layers(layers))
            }
            (None, Some(other)) => {
                self.err(format!("{path}/layers"), format!("expected a list of layers, got {}", describe(other)));
                None
            }
        };
        let optimizer = obj.get("optimizer").and_then(|o| self.optimizer(o, &format!("{path}/optimizer")));
        let loss = obj.get("loss").and_then(|l| self.loss(l, &format!("{path}/loss")));
        Some(NetSpec { source: source?, optimizer, loss })
    }

    fn process(&mut self, v: &Value, path: &str) -> ProcessSpec {
        let mut spec = ProcessSpec::default();
        let Some(obj) = self.object(v, path, PROCESS_KEYS) else { return spec };
        if let Some(c) = obj.get("choice") {
            spec.choice = self.string(c, &format!("{path}/choice"));
        }
        if let Some(params) = obj.get("params") {
            let ppath = format!("{path}/params");
            if let Some(p) = self.object(params, &ppath, PROCESS_PARAMS) {
                let q = &mut spec.params;
                for (k, v) in p {
                    let kp = format!("{ppath}/{k}");
                    match k.as_str() {
                        "n_critic" => q.n_critic = self.int(v, &kp),
                        "clip_value" => q.clip_value = self.float(v, &kp),
                        "gp_lambda" => q.gp_lambda = self.float(v, &kp),
                        "label_count" => q.label_count = self.int(v, &kp),
                        _ => {}
                    }
                }
            }
        }
        spec
    }
}

/// Parses a spec document. Unknown keys, missing required sections and
/// ill-typed values are all reported; malformed JSON yields a single
/// diagnostic carrying line and column. `gan_model` is accepted as an
/// alias of `GAN_model`.
pub fn parse_spec(text: &str) -> Result<GanSpec, Vec<Diagnostic>> {
    let root: Value = serde_json::from_str(text).map_err(|e| {
        vec![Diagnostic::error("", format!("invalid JSON at line {}, column {}: {e}", e.line(), e.column()))]
    })?;
    let mut p = Parser { diags: Vec::new() };
    let mut obj = match root {
        Value::Object(o) => o,
        other => return Err(vec![Diagnostic::error("", format!("a spec must be a JSON object, got {}", describe(&other)))]),
    };
    if let Some(v) = obj.remove("gan_model") {
        if obj.contains_key("GAN_model") {
            p.err("/gan_model", "`gan_model` duplicates `GAN_model`");
        } else {
            obj.insert("GAN_model".into(), v);
        }
    }
    for key in obj.keys() {
        if !TOP_KEYS.contains(&key.as_str()) {
            p.err(format!("/{key}"), format!("unknown key `{key}`; allowed: {}", TOP_KEYS.join(", ")));
        }
    }
    let spec_version = obj.get("spec_version").and_then(|v| p.string(v, "/spec_version"));
    let gan_model = obj.get("GAN_model").map(|v| p.gan_model(v, "/GAN_model")).unwrap_or_default();
    let required = |p: &mut Parser, key: &str| {
        let v = obj.get(key);
        if v.is_none() {
            p.err(format!("/{key}"), format!("missing required `{key}`"));
        }
        v
    };
    let generator = required(&mut p, "generator").and_then(|v| p.net(v, "/generator"));
    let discriminator = required(&mut p, "discriminator").and_then(|v| p.net(v, "/discriminator"));
    let data_path = required(&mut p, "data_path").and_then(|v| p.string(v, "/data_path"));
    let labels_path = obj.get("labels_path").and_then(|v| p.string(v, "/labels_path"));
    let train_process = obj.get("train_process").map(|v| p.process(v, "/train_process"));
    if !p.diags.is_empty() {
        return Err(p.diags);
    }
    Ok(GanSpec {
        spec_version,
        gan_model,
        generator: generator.expect("checked above"),
        discriminator: discriminator.expect("checked above"),
        train_process,
        data_path: data_path.expect("checked above"),
        labels_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::ParamValue;

    pub(crate) const REFERENCE_CONFIG: &str = r#"{
    "GAN_model":{
        "epochs":"50"
    },
    "generator":{
        "choice":"dcgan"
    },
    "discriminator":{
        "choice":"dcgan"
    },
    "data_path":"dataset/mnistData.pkl"
}"#;

    #[test]
    fn reads_the_reference_config() {
        let s = parse_spec(REFERENCE_CONFIG).unwrap();
        assert_eq!(s.gan_model.epochs, Some(50));
        assert_eq!(s.gan_model.epochs(), 50);
        assert_eq!(s.gan_model.batch_size(), 64);
        assert_eq!(s.gan_model.seed(), 0);
        assert_eq!(s.generator.preset_name(), Some("dcgan"));
        assert_eq!(s.discriminator.preset_name(), Some("dcgan"));
        assert_eq!(s.data_path, "dataset/mnistData.pkl");
    }

    #[test]
    fn empty_object_has_three_errors() {
        let d = parse_spec("{}").unwrap_err();
        let paths: Vec<_> = d.iter().map(|d| d.path.as_str()).collect();
        assert_eq!(paths, ["/generator", "/discriminator", "/data_path"]);
    }

    #[test]
    fn choice_and_layers_are_exclusive() {
        let d = parse_spec(r#"{"generator":{"choice":"gan","layers":[]},"discriminator":{"choice":"gan"},"data_path":"x.idx"}"#)
            .unwrap_err();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].path, "/generator");
    }

    #[test]
    fn malformed_json_reports_position() {
        let d = parse_spec("{\n  \"generator\": ,\n}").unwrap_err();
        assert_eq!(d.len(), 1);
        assert!(d[0].message.contains("line 2"), "{}", d[0].message);
    }

    #[test]
    fn unknown_keys_are_errors() {
        let d = parse_spec(r#"{"generator":{"choice":"gan"},"discriminator":{"choice":"gan"},"data_path":"x.idx","colour":1}"#)
            .unwrap_err();
        assert_eq!(d[0].path, "/colour");
    }

    #[test]
    fn layers_coerce_numeric_strings() {
        let s = parse_spec(
            r#"{"generator":{"layers":[{"kind":"dense","params":{"units":"64"}},{"kind":"Tanh"}],
                "optimizer":{"kind":"SGD","params":{"lr":"0.5"}},"loss":"mse"},
                "discriminator":{"choice":"gan"},"data_path":"x.idx"}"#,
        )
        .unwrap();
        let NetSource::Layers(l) = &s.generator.source else { panic!() };
        assert_eq!(l[0].params["units"], ParamValue::Int(64));
        assert_eq!(s.generator.optimizer.as_ref().unwrap().params["lr"], ParamValue::Float(0.5));
        assert_eq!(s.generator.loss, Some(LossKind::Mse));
    }

    #[test]
    fn round_trip() {
        let text = r#"{"spec_version":"1","GAN_model":{"epochs":"3","seed":7,"learning_rate":"0.001","data_shape":[2]},
            "generator":{"layers":[{"kind":"Dense","params":{"units":2}}],"optimizer":"adam"},
            "discriminator":{"choice":"wgan","loss":"wasserstein"},
            "train_process":{"choice":"wgan_clip","params":{"n_critic":2,"clip_value":0.05}},
            "data_path":"d.gfd","labels_path":"l.idx"}"#;
        let a = parse_spec(text).unwrap();
        let b = parse_spec(&a.to_json_string()).unwrap();
        assert_eq!(a, b);
    }
}
