//! The authorable layer kinds: palette, parameter schemas, shape inference and
//! execution.

mod instance;
mod palette;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use instance::{
    build_layer, infer_shape, init_params, layer_forward, Bound, ForwardCtx, LayerInstance, Mode, NamedParam, Network, ParamRole,
};
pub use palette::{palette, Category, ParamDefault, ParamSchema, ParamType, PaletteEntry};

use crate::error::{Error, Result};

macro_rules! layer_kinds {
    ($($variant:ident => $name:literal),* $(,)?) => {
        #[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
        pub enum LayerKind {
            $($variant),*
        }

        impl LayerKind {
            pub const ALL: &'static [LayerKind] = &[$(LayerKind::$variant),*];

            pub fn as_str(self) -> &'static str {
                match self {
                    $(LayerKind::$variant => $name),*
                }
            }
        }
    };
}

layer_kinds! {
    Conv2D => "Conv2D",
    ConvTranspose2D => "ConvTranspose2D",
    MaxPool2D => "MaxPool2D",
    AvgPool2D => "AvgPool2D",
    UpSample2D => "UpSample2D",
    SimpleRnn => "SimpleRNN",
    Lstm => "LSTM",
    Gru => "GRU",
    Dense => "Dense",
    Flatten => "Flatten",
    Reshape => "Reshape",
    Dropout => "Dropout",
    Concatenate => "Concatenate",
    Embedding => "Embedding",
    Input => "Input",
    Output => "Output",
    ReLU => "ReLU",
    LeakyReLU => "LeakyReLU",
    Sigmoid => "Sigmoid",
    Tanh => "Tanh",
    Softmax => "Softmax",
    Bce => "BCE",
    Mse => "MSE",
    L1 => "L1",
    Wasserstein => "Wasserstein",
    HingeLoss => "HingeLoss",
    Adam => "Adam",
    RmsProp => "RMSProp",
    Sgd => "SGD",
    BatchNorm => "BatchNorm",
    LayerNorm => "LayerNorm",
}

impl LayerKind {
    pub fn category(self) -> Category {
        use LayerKind::*;
        match self {
            Conv2D | ConvTranspose2D | MaxPool2D | AvgPool2D | UpSample2D => Category::Convolutional,
            SimpleRnn | Lstm | Gru => Category::Recurrent,
            Dense | Flatten | Reshape | Dropout | Concatenate | Embedding | Input | Output => Category::Core,
            ReLU | LeakyReLU | Sigmoid | Tanh | Softmax => Category::Activation,
            Bce | Mse | L1 | Wasserstein | HingeLoss => Category::Loss,
            Adam | RmsProp | Sgd => Category::Optimization,
            BatchNorm | LayerNorm => Category::Normalization,
        }
    }

    /// Loss and optimizer entries configure training; they are not graph layers.
    pub fn is_network_layer(self) -> bool {
        !matches!(self.category(), Category::Loss | Category::Optimization)
    }

    pub fn is_recurrent(self) -> bool {
        self.category() == Category::Recurrent
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for LayerKind {
    type Err = Error;

    /// Case-insensitive; underscores and dashes are ignored.
    fn from_str(s: &str) -> Result<Self> {
        let norm = |x: &str| x.chars().filter(|c| *c != '_' && *c != '-').collect::<String>().to_ascii_lowercase();
        let want = norm(s);
        LayerKind::ALL.iter().copied().find(|k| norm(k.as_str()) == want).ok_or_else(|| Error::Param {
            key: "kind".into(),
            message: format!("unknown layer kind `{s}`"),
        })
    }
}

impl Serialize for LayerKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for LayerKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Bool(bool),
    Int(i64),
    Float(f64),
    Shape(Vec<usize>),
    Str(String),
}

impl ParamValue {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("param values are plain JSON")
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Bool(b) => write!(f, "{b}"),
            ParamValue::Int(i) => write!(f, "{i}"),
            ParamValue::Float(x) => write!(f, "{x}"),
            ParamValue::Shape(s) => write!(f, "{s:?}"),
            ParamValue::Str(s) => write!(f, "{s:?}"),
        }
    }
}

/// A layer kind plus its parameters. Construct through [`LayerSpec::new`] to
/// get schema checking; missing optional parameters resolve to defaults.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub params: BTreeMap<String, ParamValue>,
}

impl LayerSpec {
    pub fn new(kind: LayerKind, params: BTreeMap<String, ParamValue>) -> Result<Self> {
        let spec = Self { kind, params };
        if let Some((key, message)) = spec.schema_errors().into_iter().next() {
            return Err(Error::Param { key, message });
        }
        Ok(spec)
    }

    /// Convenience constructor for code-built layer lists.
    pub fn with(kind: LayerKind, params: &[(&str, ParamValue)]) -> Self {
        let params = params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect();
        Self::new(kind, params).unwrap_or_else(|e| panic!("invalid built-in {kind} layer: {e}"))
    }

    pub fn bare(kind: LayerKind) -> Self {
        Self::with(kind, &[])
    }

    /// Every `(key, message)` violation of this kind's parameter schema.
    pub fn schema_errors(&self) -> Vec<(String, String)> {
        palette::check_params(self.kind, &self.params)
    }

    fn lookup(&self, name: &str) -> Option<ParamValue> {
        self.params.get(name).cloned().or_else(|| palette::default_of(self.kind, name))
    }

    pub fn int(&self, name: &str) -> Result<usize> {
        match self.lookup(name) {
            Some(ParamValue::Int(i)) if i >= 0 => Ok(i as usize),
            other => Err(self.bad(name, "a non-negative integer", other)),
        }
    }

    pub fn float(&self, name: &str) -> Result<f64> {
        match self.lookup(name) {
            Some(ParamValue::Float(x)) => Ok(x),
            Some(ParamValue::Int(i)) => Ok(i as f64),
            other => Err(self.bad(name, "a number", other)),
        }
    }

    pub fn flag(&self, name: &str) -> Result<bool> {
        match self.lookup(name) {
            Some(ParamValue::Bool(b)) => Ok(b),
            other => Err(self.bad(name, "a boolean", other)),
        }
    }

    pub fn shape(&self, name: &str) -> Result<Option<Vec<usize>>> {
        match self.lookup(name) {
            Some(ParamValue::Shape(s)) => Ok(Some(s)),
            None => Ok(None),
            other => Err(self.bad(name, "a list of extents", other)),
        }
    }

    fn bad(&self, name: &str, want: &str, got: Option<ParamValue>) -> Error {
        Error::Param {
            key: name.to_string(),
            message: match got {
                Some(v) => format!("{} expects {want}, got {v}", self.kind),
                None => format!("{} requires `{name}`", self.kind),
            },
        }
    }

    /// Reads `{"kind": ..., "params": {...}}`; the error carries the JSON
    /// sub-path of the offending field.
    pub fn from_json(v: &serde_json::Value) -> std::result::Result<Self, (String, String)> {
        let obj = v.as_object().ok_or_else(|| (String::new(), "a layer must be an object with `kind`".to_string()))?;
        for key in obj.keys() {
            if key != "kind" && key != "params" {
                return Err((format!("/{key}"), format!("unknown layer field `{key}`; expected `kind` and `params`")));
            }
        }
        let kind: LayerKind = match obj.get("kind") {
            Some(serde_json::Value::String(s)) => s.parse().map_err(|e: Error| ("/kind".to_string(), e.to_string()))?,
            Some(other) => return Err(("/kind".into(), format!("layer kind must be a string, got {other}"))),
            None => return Err((String::new(), "layer is missing `kind`".into())),
        };
        let mut params = BTreeMap::new();
        match obj.get("params") {
            None | Some(serde_json::Value::Null) => {}
            Some(serde_json::Value::Object(map)) => {
                for (k, v) in map {
                    let value = palette::coerce_param(kind, k, v).map_err(|m| (format!("/params/{k}"), m))?;
                    params.insert(k.clone(), value);
                }
            }
            Some(other) => return Err(("/params".into(), format!("params must be an object, got {other}"))),
        }
        Ok(Self { kind, params })
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut obj = serde_json::Map::new();
        obj.insert("kind".into(), self.kind.as_str().into());
        if !self.params.is_empty() {
            let params = self.params.iter().map(|(k, v)| (k.clone(), v.to_json())).collect();
            obj.insert("params".into(), serde_json::Value::Object(params));
        }
        serde_json::Value::Object(obj)
    }
}

/// Shorthands for building layer lists in code.
pub mod dsl {
    use super::{LayerKind, LayerSpec, ParamValue};

    pub fn dense(units: usize) -> LayerSpec {
        LayerSpec::with(LayerKind::Dense, &[("units", ParamValue::Int(units as i64))])
    }

    pub fn leaky_relu(slope: f64) -> LayerSpec {
        LayerSpec::with(LayerKind::LeakyReLU, &[("slope", ParamValue::Float(slope))])
    }

    pub fn reshape(shape: &[usize]) -> LayerSpec {
        LayerSpec::with(LayerKind::Reshape, &[("shape", ParamValue::Shape(shape.to_vec()))])
    }

    pub fn concat(width: usize) -> LayerSpec {
        LayerSpec::with(LayerKind::Concatenate, &[("width", ParamValue::Int(width as i64))])
    }

    pub fn conv(kind: LayerKind, filters: usize, kernel: usize, stride: usize, padding: usize) -> LayerSpec {
        LayerSpec::with(
            kind,
            &[
                ("filters", ParamValue::Int(filters as i64)),
                ("kernel", ParamValue::Int(kernel as i64)),
                ("stride", ParamValue::Int(stride as i64)),
                ("padding", ParamValue::Int(padding as i64)),
            ],
        )
    }

    pub fn bare(kind: LayerKind) -> LayerSpec {
        LayerSpec::bare(kind)
    }
}
