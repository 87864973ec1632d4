use std::collections::BTreeMap;

use serde::Serialize;

use super::{LayerKind, ParamValue};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Convolutional,
    Recurrent,
    Core,
    Activation,
    Loss,
    Optimization,
    Normalization,
}

impl Category {
    pub const ALL: [Category; 7] = [
        Category::Convolutional,
        Category::Recurrent,
        Category::Core,
        Category::Activation,
        Category::Loss,
        Category::Optimization,
        Category::Normalization,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Convolutional => "convolutional",
            Category::Recurrent => "recurrent",
            Category::Core => "core",
            Category::Activation => "activation",
            Category::Loss => "loss",
            Category::Optimization => "optimization",
            Category::Normalization => "normalization",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum ParamType {
    Int {
        min: i64,
    },
    Float {
        min: f64,
        max: f64,
        /// Whether `max` itself is excluded.
        max_exclusive: bool,
    },
    Bool,
    Shape,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ParamDefault {
    Required,
    Optional,
    Value(ParamValue),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ParamSchema {
    pub name: &'static str,
    #[serde(flatten)]
    pub ty: ParamType,
    pub default: ParamDefault,
    pub description: &'static str,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PaletteEntry {
    pub kind: LayerKind,
    pub category: Category,
    pub display_name: &'static str,
    pub param_schema: Vec<ParamSchema>,
}

fn int(name: &'static str, min: i64, default: ParamDefault, description: &'static str) -> ParamSchema {
    ParamSchema { name, ty: ParamType::Int { min }, default, description }
}

fn float(name: &'static str, min: f64, max: f64, max_exclusive: bool, default: f64, description: &'static str) -> ParamSchema {
    ParamSchema {
        name,
        ty: ParamType::Float { min, max, max_exclusive },
        default: ParamDefault::Value(ParamValue::Float(default)),
        description,
    }
}

fn flag(name: &'static str, default: bool, description: &'static str) -> ParamSchema {
    ParamSchema { name, ty: ParamType::Bool, default: ParamDefault::Value(ParamValue::Bool(default)), description }
}

fn val(i: i64) -> ParamDefault {
    ParamDefault::Value(ParamValue::Int(i))
}

const REQ: ParamDefault = ParamDefault::Required;

fn schema(kind: LayerKind) -> Vec<ParamSchema> {
    use LayerKind::*;
    let conv = || {
        vec![
            int("filters", 1, REQ, "output channels"),
            int("kernel", 1, REQ, "square kernel size"),
            int("stride", 1, val(1), "stride"),
            int("padding", 0, val(0), "zero padding on each side"),
            flag("bias", true, "learn a per-channel bias"),
        ]
    };
    let pool = || {
        vec![
            int("kernel", 1, val(2), "square window size"),
            int("stride", 1, val(2), "stride"),
            int("padding", 0, val(0), "zero padding on each side"),
        ]
    };
    let recurrent = || {
        vec![
            int("units", 1, REQ, "hidden size"),
            flag("return_sequences", false, "emit every timestep instead of the last"),
        ]
    };
    let inf = f64::INFINITY;
    match kind {
        Conv2D | ConvTranspose2D => conv(),
        MaxPool2D | AvgPool2D => pool(),
        UpSample2D => vec![int("scale", 1, val(2), "nearest-neighbour scale factor")],
        SimpleRnn | Lstm | Gru => recurrent(),
        Dense => vec![int("units", 1, REQ, "output features"), flag("bias", true, "learn a bias vector")],
        Flatten | Output | ReLU | Sigmoid | Tanh | Softmax => vec![],
        Reshape => vec![ParamSchema {
            name: "shape",
            ty: ParamType::Shape,
            default: REQ,
            description: "per-sample target extents",
        }],
        Dropout => vec![float("rate", 0.0, 1.0, true, 0.5, "drop probability")],
        Concatenate => vec![int("width", 1, REQ, "width of the appended one-hot condition vector")],
        Embedding => vec![
            int("num_embeddings", 1, REQ, "vocabulary size"),
            int("dim", 1, REQ, "embedding width"),
        ],
        Input => vec![ParamSchema {
            name: "shape",
            ty: ParamType::Shape,
            default: ParamDefault::Optional,
            description: "expected per-sample extents",
        }],
        LeakyReLU => vec![float("slope", 0.0, inf, false, 0.2, "negative-side slope")],
        Bce | Mse | L1 | Wasserstein | HingeLoss => vec![],
        Adam => vec![
            float("lr", 0.0, inf, false, 2e-4, "learning rate"),
            float("beta1", 0.0, 1.0, true, 0.5, "first-moment decay"),
            float("beta2", 0.0, 1.0, true, 0.999, "second-moment decay"),
            float("eps", 0.0, inf, false, 1e-8, "denominator epsilon"),
        ],
        RmsProp => vec![
            float("lr", 0.0, inf, false, 5e-5, "learning rate"),
            float("rho", 0.0, 1.0, true, 0.9, "squared-gradient decay"),
            float("eps", 0.0, inf, false, 1e-8, "denominator epsilon"),
        ],
        Sgd => vec![float("lr", 0.0, inf, false, 1e-2, "learning rate")],
        BatchNorm => vec![
            float("momentum", 0.0, 1.0, false, 0.1, "running-statistics update rate"),
            float("eps", 0.0, inf, false, 1e-5, "variance epsilon"),
        ],
        LayerNorm => vec![float("eps", 0.0, inf, false, 1e-5, "variance epsilon")],
    }
}

fn display_name(kind: LayerKind) -> &'static str {
    use LayerKind::*;
    match kind {
        Conv2D => "Conv 2D",
        ConvTranspose2D => "Transposed Conv 2D",
        MaxPool2D => "Max Pool 2D",
        AvgPool2D => "Average Pool 2D",
        UpSample2D => "Upsample 2D",
        SimpleRnn => "Simple RNN",
        Lstm => "LSTM",
        Gru => "GRU",
        Dense => "Dense",
        Flatten => "Flatten",
        Reshape => "Reshape",
        Dropout => "Dropout",
        Concatenate => "Concatenate Condition",
        Embedding => "Embedding",
        Input => "Input",
        Output => "Output",
        ReLU => "ReLU",
        LeakyReLU => "Leaky ReLU",
        Sigmoid => "Sigmoid",
        Tanh => "Tanh",
        Softmax => "Softmax",
        Bce => "Binary Cross-Entropy",
        Mse => "Mean Squared Error",
        L1 => "Mean Absolute Error",
        Wasserstein => "Wasserstein",
        HingeLoss => "Hinge",
        Adam => "Adam",
        RmsProp => "RMSProp",
        Sgd => "SGD",
        BatchNorm => "Batch Norm",
        LayerNorm => "Layer Norm",
    }
}

/// Every authorable kind, ordered by category and then by declaration order.
pub fn palette() -> Vec<PaletteEntry> {
    let mut entries: Vec<PaletteEntry> = LayerKind::ALL
        .iter()
        .map(|&kind| PaletteEntry {
            kind,
            category: kind.category(),
            display_name: display_name(kind),
            param_schema: schema(kind),
        })
        .collect();
    entries.sort_by_key(|e| (e.category, e.kind));
    entries
}

pub(super) fn default_of(kind: LayerKind, name: &str) -> Option<ParamValue> {
    schema(kind).into_iter().find(|p| p.name == name).and_then(|p| match p.default {
        ParamDefault::Value(v) => Some(v),
        _ => None,
    })
}

pub(super) fn check_params(kind: LayerKind, params: &BTreeMap<String, ParamValue>) -> Vec<(String, String)> {
    let schema = schema(kind);
    let mut errors = Vec::new();
    for key in params.keys() {
        if !schema.iter().any(|p| p.name == key) {
            let known: Vec<_> = schema.iter().map(|p| p.name).collect();
            let hint = if known.is_empty() { "it takes no parameters".to_string() } else { format!("known: {}", known.join(", ")) };
            errors.push((key.clone(), format!("unknown parameter `{key}` for {kind}; {hint}")));
        }
    }
    for p in &schema {
        let Some(v) = params.get(p.name) else {
            if p.default == ParamDefault::Required {
                errors.push((p.name.to_string(), format!("{kind} requires `{}`", p.name)));
            }
            continue;
        };
        if let Some(msg) = type_error(&p.ty, v) {
            errors.push((p.name.to_string(), format!("{kind}.{}: {msg}", p.name)));
        }
    }
    errors
}

/// Converts a JSON value to the kind's declared parameter type. Numbers
/// written as strings are accepted. Keys the schema does not know are kept
/// verbatim so that schema checking can report them.
pub(super) fn coerce_param(kind: LayerKind, name: &str, v: &serde_json::Value) -> std::result::Result<ParamValue, String> {
    use serde_json::Value;
    let Some(p) = schema(kind).into_iter().find(|p| p.name == name) else {
        return Ok(ParamValue::Str(v.to_string()));
    };
    let number = |v: &Value| match v {
        Value::Number(n) => n.as_f64(),
        Value::String(s) => s.trim().parse::<f64>().ok(),
        _ => None,
    };
    let integer = |v: &Value| match v {
        Value::Number(n) => n.as_i64().or_else(|| n.as_f64().filter(|x| x.fract() == 0.0).map(|x| x as i64)),
        Value::String(s) => s.trim().parse::<i64>().ok(),
        _ => None,
    };
    let out = match p.ty {
        ParamType::Int { .. } => integer(v).map(ParamValue::Int),
        ParamType::Float { .. } => number(v).map(ParamValue::Float),
        ParamType::Bool => match v {
            Value::Bool(b) => Some(ParamValue::Bool(*b)),
            Value::String(s) if s == "true" || s == "false" => Some(ParamValue::Bool(s == "true")),
            _ => None,
        },
        ParamType::Shape => v
            .as_array()
            .and_then(|a| a.iter().map(|e| integer(e).filter(|i| *i >= 0).map(|i| i as usize)).collect::<Option<Vec<_>>>())
            .map(ParamValue::Shape),
    };
    out.ok_or_else(|| {
        let want = match p.ty {
            ParamType::Int { .. } => "an integer",
            ParamType::Float { .. } => "a number",
            ParamType::Bool => "a boolean",
            ParamType::Shape => "a list of non-negative integers",
        };
        format!("{kind}.{name} expects {want}, got {v}")
    })
}

fn type_error(ty: &ParamType, v: &ParamValue) -> Option<String> {
    match (ty, v) {
        (ParamType::Int { min }, ParamValue::Int(i)) => (*i < *min).then(|| format!("must be ≥ {min}, got {i}")),
        (ParamType::Float { min, max, max_exclusive }, ParamValue::Float(_) | ParamValue::Int(_)) => {
            let x = match v {
                ParamValue::Float(x) => *x,
                ParamValue::Int(i) => *i as f64,
                _ => unreachable!(),
            };
            let above = if *max_exclusive { x >= *max } else { x > *max };
            if !x.is_finite() || x < *min || above {
                let close = if *max_exclusive { ")" } else { "]" };
                Some(format!("must lie in [{min}, {max}{close}, got {x}"))
            } else {
                None
            }
        }
        (ParamType::Bool, ParamValue::Bool(_)) => None,
        (ParamType::Shape, ParamValue::Shape(s)) => {
            (s.is_empty() || s.contains(&0)).then(|| format!("extents must be positive and non-empty, got {s:?}"))
        }
        (ty, v) => {
            let want = match ty {
                ParamType::Int { .. } => "an integer",
                ParamType::Float { .. } => "a number",
                ParamType::Bool => "a boolean",
                ParamType::Shape => "a list of positive integers",
            };
            Some(format!("expected {want}, got {v}"))
        }
    }
}
