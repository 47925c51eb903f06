use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Tensor};

/// A named group of parameter tensors, e.g. one linear map with its bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub name: String,
    /// `(full name, tensor)`; full names are `<layer>.<tensor>`.
    pub tensors: Vec<(String, Tensor)>,
}

impl Layer {
    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(|(_, t)| t.len()).sum()
    }
}

/// Ordered layer registry. Every parameter of a model lives in exactly one
/// layer, so the registry is the model's whole parameter vector.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "Vec<Layer>", into = "Vec<Layer>")]
pub struct ParameterSet {
    layers: Vec<Layer>,
    index: BTreeMap<String, (usize, usize)>,
}

impl From<Vec<Layer>> for ParameterSet {
    fn from(layers: Vec<Layer>) -> Self {
        let mut set = ParameterSet::default();
        for l in layers {
            set.push_layer(l).expect("unique names in serialized registry");
        }
        set
    }
}

impl From<ParameterSet> for Vec<Layer> {
    fn from(p: ParameterSet) -> Self {
        p.layers
    }
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_layer(&mut self, layer: Layer) -> Result<()> {
        if self.layers.iter().any(|l| l.name == layer.name) {
            return Err(Error::invalid(alloc::format!("duplicate layer `{}`", layer.name)));
        }
        let li = self.layers.len();
        for (ti, (name, _)) in layer.tensors.iter().enumerate() {
            if self.index.insert(name.clone(), (li, ti)).is_some() {
                return Err(Error::invalid(alloc::format!("duplicate parameter `{name}`")));
            }
        }
        self.layers.push(layer);
        Ok(())
    }

    pub fn add(&mut self, layer: &str, tensors: Vec<(&str, Tensor)>) -> Result<()> {
        let tensors = tensors.into_iter().map(|(n, t)| (alloc::format!("{layer}.{n}"), t)).collect();
        self.push_layer(Layer { name: layer.to_string(), tensors })
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&(l, t)| &self.layers[l].tensors[t].1)
    }

    /// The registry's own copy of `name`, paired with its tensor.
    pub fn entry(&self, name: &str) -> Option<(&str, &Tensor)> {
        self.index.get_key_value(name).map(|(k, &(l, t))| (k.as_str(), &self.layers[l].tensors[t].1))
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.get(name).ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let &(l, t) = self.index.get(name)?;
        Some(&mut self.layers[l].tensors[t].1)
    }

    pub fn layer(&self, name: &str) -> Result<&Layer> {
        self.layers.iter().find(|l| l.name == name).ok_or_else(|| Error::UnknownLayer(name.to_string()))
    }

    pub fn has_layer(&self, name: &str) -> bool {
        self.layers.iter().any(|l| l.name == name)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layer_names(&self) -> impl Iterator<Item = &str> {
        self.layers.iter().map(|l| l.name.as_str())
    }

    /// Layer that owns the tensor with full name `param`.
    pub fn layer_of(&self, param: &str) -> Option<&str> {
        self.index.get(param).map(|&(l, _)| self.layers[l].name.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.layers.iter().flat_map(|l| l.tensors.iter().map(|(n, t)| (n.as_str(), t)))
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn layer_tensors(&self, layer: &str) -> Result<Vec<&Tensor>> {
        Ok(self.layer(layer)?.tensors.iter().map(|(_, t)| t).collect())
    }

    /// Snapshot of the tensors of `layers`, for distance computations.
    pub fn snapshot(&self, layers: &[String]) -> Result<Vec<Tensor>> {
        let mut out = Vec::new();
        for l in layers {
            out.extend(self.layer(l)?.tensors.iter().map(|(_, t)| t.clone()));
        }
        Ok(out)
    }

    /// FNV-1a over the bit patterns of every value, in registry order.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for (_, t) in self.iter() {
            for v in t.data() {
                for b in v.to_bits().to_le_bytes() {
                    h ^= u64::from(b);
                    h = h.wrapping_mul(0x0000_0100_0000_01b3);
                }
            }
        }
        h
    }
}

impl ParamStore for ParameterSet {
    fn param_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.get_mut(name)
    }
}
