use alloc::vec;

use super::net::{LoraAdapter, Seq2Seq};
use crate::error::{Error, Result};
use crate::numerics::{kaiming_init, Tensor};
use crate::rng::Stream;

impl Seq2Seq {
    /// Returns a copy of the model with a rank-`rank` adapter on `layer`.
    ///
    /// `A` is Kaiming-initialized and `B` starts at zero, so the adapted
    /// model computes exactly what the base model computes until `B` moves.
    pub fn attach_lora(&self, layer: &str, rank: usize, stream: &mut Stream) -> Result<Seq2Seq> {
        if rank == 0 {
            return Err(Error::invalid("LoRA rank must be >= 1"));
        }
        self.params.layer(layer)?;
        let weight = self
            .params
            .get(&alloc::format!("{layer}.weight"))
            .filter(|w| w.shape().len() == 2)
            .ok_or_else(|| Error::invalid(alloc::format!("layer `{layer}` has no single weight matrix")))?;
        if self.adapters.iter().any(|a| a.target == layer) {
            return Err(Error::invalid(alloc::format!("layer `{layer}` already has an adapter")));
        }
        let (d_in, d_out) = (weight.shape()[0], weight.shape()[1]);
        let adapter = LoraAdapter { target: layer.into(), rank, scaling: 1.0 };
        let mut out = self.clone();
        out.params.add(
            &adapter.layer_name(),
            vec![("a", kaiming_init(d_in, &[d_in, rank], stream)?), ("b", Tensor::zeros(&[rank, d_out]))],
        )?;
        out.adapters.push(adapter);
        Ok(out)
    }
}
