//! Deterministic stand-in for a text encoder.
//!
//! Each lowercase alphanumeric token is hashed with FNV-1a (64-bit) and the
//! hash seeds a SplitMix64 generator (increment 0x9e3779b97f4a7c15, finalizer
//! multipliers 0xbf58476d1ce4e5b9 and 0x94d049bb133111eb). Component i of the
//! token vector is `(x_i >> 11) / 2^53 * 2 - 1` for the generator's i-th
//! output. Token vectors are summed and the sum is L2-normalised.

use colma_storage::hash::{fnv1a64, SplitMix64};

use crate::error::{CoreError, Result};
use crate::knowledge::record::tokenize;

pub const DEFAULT_DIM: usize = 64;

pub fn test_embed(text: &str, dim: usize) -> Result<Vec<f32>> {
    let tokens = tokenize(text);
    if tokens.is_empty() || dim == 0 {
        return Err(CoreError::InvalidRecord("test_embed needs non-empty text".into()));
    }
    let mut acc = vec![0f64; dim];
    for t in &tokens {
        let mut rng = SplitMix64::new(fnv1a64(t.as_bytes()));
        for a in acc.iter_mut() {
            *a += rng.next_f64() * 2.0 - 1.0;
        }
    }
    let norm = acc.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        return Err(CoreError::UndefinedDirection);
    }
    Ok(acc.into_iter().map(|x| (x / norm) as f32).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::cosine_similarity;

    #[test]
    fn deterministic_unit_vectors() {
        let a = test_embed("red cap mushroom", 64).unwrap();
        assert_eq!(a, test_embed("red cap mushroom", 64).unwrap());
        let n: f64 = a.iter().map(|&x| f64::from(x) * f64::from(x)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
        assert!(test_embed("  ", 64).is_err());
    }

    #[test]
    fn shared_tokens_are_closer() {
        let a = test_embed("red cap mushroom", 64).unwrap();
        let b = test_embed("red cap fungus", 64).unwrap();
        let c = test_embed("stock market report", 64).unwrap();
        assert!(cosine_similarity(&a, &b).unwrap() > cosine_similarity(&a, &c).unwrap());
    }
}
