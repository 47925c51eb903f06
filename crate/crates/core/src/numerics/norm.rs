use alloc::vec::Vec;

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Euclidean norm over all entries of all tensors, as if concatenated.
pub fn l2_norm<'t>(tensors: impl IntoIterator<Item = &'t Tensor>) -> f64 {
    libm::sqrt(tensors.into_iter().map(Tensor::sum_squares).sum())
}

/// Rescales the joint vector to norm `max_norm` if it is longer. Returns the
/// norm before clipping.
pub fn clip_by_norm<'t>(tensors: impl IntoIterator<Item = &'t mut Tensor>, max_norm: f64) -> Result<f64> {
    if !(max_norm > 0.0) {
        return Err(Error::invalid(alloc::format!("clip norm must be positive, got {max_norm}")));
    }
    let mut ts: Vec<&mut Tensor> = tensors.into_iter().collect();
    let norm = libm::sqrt(ts.iter().map(|t| t.sum_squares()).sum());
    if norm > max_norm {
        let s = max_norm / norm;
        for t in ts.iter_mut() {
            t.scale_in_place(s);
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::iter::once;
    use proptest::prelude::*;

    #[test]
    fn basic_norms() {
        assert_eq!(l2_norm(once(&Tensor::zeros(&[3]))), 0.0);
        assert_eq!(l2_norm(once(&Tensor::vector(alloc::vec![3.0, 4.0]))), 5.0);
    }

    #[test]
    fn clip_long_vector() {
        let mut t = Tensor::vector(alloc::vec![6.0, 8.0]);
        let before = clip_by_norm(once(&mut t), 1.0).unwrap();
        assert_eq!(before, 10.0);
        assert!((l2_norm(once(&t)) - 1.0).abs() < 1e-12);
        assert!((t.data()[0] - 0.6).abs() < 1e-12 && (t.data()[1] - 0.8).abs() < 1e-12);
    }

    #[test]
    fn short_vector_unchanged() {
        let mut t = Tensor::vector(alloc::vec![0.3, 0.4]);
        clip_by_norm(once(&mut t), 1.0).unwrap();
        assert_eq!(t.data(), &[0.3, 0.4]);
    }

    #[test]
    fn non_positive_clip_rejected() {
        let mut t = Tensor::vector(alloc::vec![1.0]);
        assert!(clip_by_norm(once(&mut t), 0.0).is_err());
        assert!(clip_by_norm(once(&mut t), -1.0).is_err());
    }

    proptest! {
        #[test]
        fn concatenation_adds_squares(a in prop::collection::vec(-10.0f64..10.0, 1..20),
                                      b in prop::collection::vec(-10.0f64..10.0, 1..20)) {
            let ta = Tensor::vector(a.clone());
            let tb = Tensor::vector(b.clone());
            let joint = Tensor::vector(a.iter().chain(&b).copied().collect());
            let lhs = l2_norm([&ta, &tb]).powi(2);
            let rhs = l2_norm(once(&ta)).powi(2) + l2_norm(once(&tb)).powi(2);
            prop_assert!((lhs - rhs).abs() < 1e-9 * (1.0 + rhs));
            prop_assert!((l2_norm(once(&joint)) - l2_norm([&tb, &ta])).abs() < 1e-12 * (1.0 + lhs));
        }

        #[test]
        fn clipped_norm_is_min_of_input_and_bound(a in prop::collection::vec(-10.0f64..10.0, 1..30)) {
            let mut t = Tensor::vector(a);
            let before = l2_norm(once(&t));
            clip_by_norm(once(&mut t), 2.0).unwrap();
            let after = l2_norm(once(&t));
            prop_assert!((after - before.min(2.0)).abs() < 1e-12);
        }
    }
}
