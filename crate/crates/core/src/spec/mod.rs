//! The declarative GAN description: parsing, validation, and resolution into
//! trainable networks.

mod parse;
mod resolve;
mod schema;
mod validate;

use std::fmt;

use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::layers::LayerSpec;
use crate::models::LossKind;

pub use parse::parse_spec;
pub use resolve::{pairing, resolve, Conditioning, Pairing, ResolvedModel};
pub use schema::schema;
pub use validate::validate;

pub const SPEC_VERSION: &str = "1";
pub const DEFAULT_EPOCHS: usize = 10;
pub const DEFAULT_BATCH_SIZE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

/// One finding about a spec, located by a JSON-pointer-style path.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Diagnostic {
    pub severity: Severity,
    pub path: String,
    pub message: String,
}

impl Diagnostic {
    pub fn error(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { severity: Severity::Error, path: path.into(), message: message.into() }
    }

    pub fn warning(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self { severity: Severity::Warning, path: path.into(), message: message.into() }
    }

    pub fn is_error(&self) -> bool {
        self.severity == Severity::Error
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        let path = if self.path.is_empty() { "/" } else { &self.path };
        write!(f, "{sev} at {path}: {}", self.message)
    }
}

/// Run-level settings. Unset fields take the documented defaults.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct GanModel {
    pub epochs: Option<u64>,
    pub batch_size: Option<u64>,
    pub seed: Option<u64>,
    pub latent_dim: Option<u64>,
    /// Learning rate for both optimizers unless an optimizer sets its own.
    pub learning_rate: Option<f64>,
    /// Per-sample data extents, when known before the data is loaded.
    pub data_shape: Option<Vec<usize>>,
}

impl GanModel {
    pub fn epochs(&self) -> usize {
        self.epochs.map_or(DEFAULT_EPOCHS, |e| e as usize)
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size.map_or(DEFAULT_BATCH_SIZE, |b| b as usize)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn latent_dim(&self) -> usize {
        self.latent_dim.map_or(crate::models::DEFAULT_LATENT_DIM, |d| d as usize)
    }

    fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum NetSource {
    /// A registry preset name, kept verbatim so validation can report it.
    Preset(String),
    Layers(Vec<LayerSpec>),
}

/// Generator or discriminator section.
#[derive(Clone, Debug, PartialEq)]
pub struct NetSpec {
    pub source: NetSource,
    /// An optimization palette entry (Adam, RMSProp, SGD).
    pub optimizer: Option<LayerSpec>,
    pub loss: Option<LossKind>,
}

impl NetSpec {
    pub fn preset(name: &str) -> Self {
        Self { source: NetSource::Preset(name.to_string()), optimizer: None, loss: None }
    }

    pub fn layers(layers: Vec<LayerSpec>) -> Self {
        Self { source: NetSource::Layers(layers), optimizer: None, loss: None }
    }

    pub fn preset_name(&self) -> Option<&str> {
        match &self.source {
            NetSource::Preset(p) => Some(p),
            NetSource::Layers(_) => None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProcessParams {
    pub n_critic: Option<i64>,
    pub clip_value: Option<f64>,
    pub gp_lambda: Option<f64>,
    pub label_count: Option<i64>,
}

impl ProcessParams {
    fn is_empty(&self) -> bool {
        *self == Self::default()
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct ProcessSpec {
    /// Process name, kept verbatim for validation; `None` keeps the pairing default.
    pub choice: Option<String>,
    pub params: ProcessParams,
}

/// A parsed GAN description.
#[derive(Clone, Debug, PartialEq)]
pub struct GanSpec {
    pub spec_version: Option<String>,
    pub gan_model: GanModel,
    pub generator: NetSpec,
    pub discriminator: NetSpec,
    pub train_process: Option<ProcessSpec>,
    /// Relative paths resolve against the spec file's directory.
    pub data_path: String,
    pub labels_path: Option<String>,
}

impl GanSpec {
    /// Both networks from presets, everything else defaulted.
    pub fn from_presets(generator: &str, discriminator: &str, data_path: &str) -> Self {
        Self {
            spec_version: None,
            gan_model: GanModel::default(),
            generator: NetSpec::preset(generator),
            discriminator: NetSpec::preset(discriminator),
            train_process: None,
            data_path: data_path.to_string(),
            labels_path: None,
        }
    }

    /// Canonical JSON form: unset optional fields are omitted, numbers are
    /// written as numbers.
    pub fn to_json(&self) -> Value {
        let mut top = Map::new();
        if let Some(v) = &self.spec_version {
            top.insert("spec_version".into(), v.clone().into());
        }
        if !self.gan_model.is_empty() {
            let m = &self.gan_model;
            let mut o = Map::new();
            let mut put = |k: &str, v: Option<Value>| {
                if let Some(v) = v {
                    o.insert(k.into(), v);
                }
            };
            put("epochs", m.epochs.map(Value::from));
            put("batch_size", m.batch_size.map(Value::from));
            put("seed", m.seed.map(Value::from));
            put("latent_dim", m.latent_dim.map(Value::from));
            put("learning_rate", m.learning_rate.map(Value::from));
            put("data_shape", m.data_shape.as_ref().map(|s| json!(s)));
            top.insert("GAN_model".into(), Value::Object(o));
        }
        top.insert("generator".into(), net_json(&self.generator));
        top.insert("discriminator".into(), net_json(&self.discriminator));
        if let Some(p) = &self.train_process {
            let mut o = Map::new();
            if let Some(c) = &p.choice {
                o.insert("choice".into(), c.clone().into());
            }
            if !p.params.is_empty() {
                let mut params = Map::new();
                let q = &p.params;
                if let Some(v) = q.n_critic {
                    params.insert("n_critic".into(), v.into());
                }
                if let Some(v) = q.clip_value {
                    params.insert("clip_value".into(), v.into());
                }
                if let Some(v) = q.gp_lambda {
                    params.insert("gp_lambda".into(), v.into());
                }
                if let Some(v) = q.label_count {
                    params.insert("label_count".into(), v.into());
                }
                o.insert("params".into(), Value::Object(params));
            }
            top.insert("train_process".into(), Value::Object(o));
        }
        top.insert("data_path".into(), self.data_path.clone().into());
        if let Some(l) = &self.labels_path {
            top.insert("labels_path".into(), l.clone().into());
        }
        Value::Object(top)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(&self.to_json()).expect("spec JSON is serializable")
    }
}

fn net_json(net: &NetSpec) -> Value {
    let mut o = Map::new();
    match &net.source {
        NetSource::Preset(p) => {
            o.insert("choice".into(), p.clone().into());
        }
        NetSource::Layers(layers) => {
            o.insert("layers".into(), Value::Array(layers.iter().map(LayerSpec::to_json).collect()));
        }
    }
    if let Some(opt) = &net.optimizer {
        o.insert("optimizer".into(), opt.to_json());
    }
    if let Some(loss) = net.loss {
        o.insert("loss".into(), loss.as_str().into());
    }
    Value::Object(o)
}
