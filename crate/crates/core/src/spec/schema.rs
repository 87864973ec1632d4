use serde_json::{json, Value};

use crate::layers::{LayerKind, Category};
use crate::models::{LossKind, Preset, ProcessKind};

use super::SPEC_VERSION;

/// JSON Schema (draft 2020-12) for spec documents. Numbers may also be given
/// as numeric strings, which the schema expresses with `anyOf`.
pub fn schema() -> Value {
    let kinds = |pred: fn(LayerKind) -> bool| -> Vec<&'static str> {
        LayerKind::ALL.iter().copied().filter(|k| pred(*k)).map(LayerKind::as_str).collect()
    };
    let network_kinds = kinds(LayerKind::is_network_layer);
    let optimizer_kinds = kinds(|k| k.category() == Category::Optimization);
    let presets: Vec<_> = Preset::ALL.iter().map(|p| p.as_str()).collect();
    let processes: Vec<_> = ProcessKind::ALL.iter().map(|p| p.as_str()).collect();
    let losses: Vec<_> = LossKind::ALL.iter().map(|l| l.as_str()).collect();
    let count = json!({"anyOf": [{"type": "integer", "minimum": 1}, {"type": "string", "pattern": "^[0-9]+$"}]});
    let uint = json!({"anyOf": [{"type": "integer", "minimum": 0}, {"type": "string", "pattern": "^[0-9]+$"}]});
    let number = json!({"anyOf": [{"type": "number"}, {"type": "string"}]});
    let layer = |kinds: &[&str]| {
        json!({
            "type": "object",
            "required": ["kind"],
            "additionalProperties": false,
            "properties": {
                "kind": {"enum": kinds},
                "params": {"type": "object", "description": "per-kind parameters; see the palette's param_schema"}
            }
        })
    };
    let network = json!({
        "type": "object",
        "additionalProperties": false,
        "oneOf": [{"required": ["choice"]}, {"required": ["layers"]}],
        "properties": {
            "choice": {"enum": presets},
            "layers": {"type": "array", "minItems": 1, "items": layer(&network_kinds)},
            "optimizer": {"anyOf": [{"enum": optimizer_kinds}, layer(&optimizer_kinds)]},
            "loss": {"enum": losses}
        }
    });
    json!({
        "$schema": "https://json-schema.org/draft/2020-12/schema",
        "title": "GAN specification",
        "type": "object",
        "required": ["generator", "discriminator", "data_path"],
        "additionalProperties": false,
        "properties": {
            "spec_version": {"const": SPEC_VERSION},
            "GAN_model": {
                "type": "object",
                "additionalProperties": false,
                "properties": {
                    "epochs": count,
                    "batch_size": count,
                    "seed": uint,
                    "latent_dim": count,
                    "learning_rate": number,
                    "data_shape": {"type": "array", "minItems": 1, "items": {"type": "integer", "minimum": 1}}
                }
            },
            "generator": network,
            "discriminator": network,
            "train_process": {
                "type": "object",
                "additionalProperties": false,
                "properties": {
                    "choice": {"enum": processes},
                    "params": {
                        "type": "object",
                        "additionalProperties": false,
                        "properties": {
                            "n_critic": count,
                            "clip_value": number,
                            "gp_lambda": number,
                            "label_count": count
                        }
                    }
                }
            },
            "data_path": {"type": "string", "minLength": 1},
            "labels_path": {"type": "string"}
        }
    })
}
