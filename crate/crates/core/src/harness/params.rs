use std::fs;
use std::path::Path;

use serde_json::{json, Value};

use crate::data::write_atomic;
use crate::error::{Error, Result};
use crate::layers::Network;
use crate::tensor::Tensor;

/// Saves a network's layer specs and trained tensors as JSON.
pub fn save_params(network: &Network, path: &Path) -> Result<()> {
    let layers: Vec<Value> = network
        .layers
        .iter()
        .map(|l| {
            let tensors: Vec<Value> = l
                .params
                .iter()
                .map(|p| json!({"name": p.name, "shape": p.value.shape(), "data": p.value.data()}))
                .collect();
            json!({"layer": l.spec.to_json(), "tensors": tensors})
        })
        .collect();
    let doc = json!({"input_shape": network.input_shape, "layers": layers});
    write_atomic(path, serde_json::to_string(&doc)?.as_bytes())
}

/// Loads tensors written by [`save_params`] into a network with the same
/// layer kinds and parameter shapes.
pub fn load_params(network: &mut Network, path: &Path) -> Result<()> {
    let bad = |m: String| Error::Format { path: path.to_path_buf(), message: m };
    let doc: Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    let layers = doc["layers"].as_array().ok_or_else(|| bad("missing `layers`".into()))?;
    if layers.len() != network.layers.len() {
        return Err(bad(format!("{} layers saved, network has {}", layers.len(), network.layers.len())));
    }
    for (i, (saved, inst)) in layers.iter().zip(network.layers.iter_mut()).enumerate() {
        let tensors = saved["tensors"].as_array().ok_or_else(|| bad(format!("layer {i} has no tensors")))?;
        if tensors.len() != inst.params.len() {
            return Err(bad(format!("layer {i}: {} tensors saved, expected {}", tensors.len(), inst.params.len())));
        }
        for (t, p) in tensors.iter().zip(inst.params.iter_mut()) {
            let shape: Vec<usize> = serde_json::from_value(t["shape"].clone())?;
            let data: Vec<f64> = serde_json::from_value(t["data"].clone())?;
            if shape != p.value.shape() {
                return Err(bad(format!("layer {i} `{}`: saved shape {shape:?}, expected {:?}", p.name, p.value.shape())));
            }
            p.value = Tensor::new(&shape, data)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::spec::{resolve, GanSpec};

    #[test]
    fn round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.json");
        let a = resolve(&GanSpec::from_presets("gan", "gan", "x.idx"), &[2]).unwrap();
        let mut spec = GanSpec::from_presets("gan", "gan", "x.idx");
        spec.gan_model.seed = Some(99);
        let mut b = resolve(&spec, &[2]).unwrap();
        assert_ne!(a.generator, b.generator);
        save_params(&a.generator, &p).unwrap();
        load_params(&mut b.generator, &p).unwrap();
        assert_eq!(a.generator, b.generator);
        assert!(load_params(&mut b.discriminator, &p).is_err());
    }
}
