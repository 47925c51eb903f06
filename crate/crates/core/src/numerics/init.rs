use alloc::vec::Vec;

use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::rng::Stream;

/// He/Kaiming normal initialization: i.i.d. `N(0, 2 / fan_in)`.
pub fn kaiming_init(fan_in: usize, shape: &[usize], stream: &mut Stream) -> Result<Tensor> {
    if fan_in == 0 {
        return Err(Error::invalid("kaiming_init needs fan_in >= 1"));
    }
    normal_init(libm::sqrt(2.0 / fan_in as f64), shape, stream)
}

pub fn normal_init(std: f64, shape: &[usize], stream: &mut Stream) -> Result<Tensor> {
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| std * stream.normal()).collect();
    Tensor::new(shape.to_vec(), data)
}
