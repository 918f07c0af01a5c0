//! Embeddings and distance kernels.
//!
//! Every search in this crate minimizes a distance. Where a caller thinks in
//! terms of similarity, similarity is the negated distance.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A fixed-dimension vector of finite 32-bit floats.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct Embedding(Vec<f32>);

impl Embedding {
    pub fn new(values: Vec<f32>) -> Result<Self> {
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(pos));
        }
        Ok(Self(values))
    }

    /// Narrows a vector of doubles. Fails on values that overflow `f32`.
    pub fn from_f64(values: &[f64]) -> Result<Self> {
        Self::new(values.iter().map(|&v| v as f32).collect())
    }

    pub fn zeros(dim: usize) -> Self {
        Self(vec![0.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.0.iter().map(|&v| f64::from(v)).collect()
    }

    pub fn into_inner(self) -> Vec<f32> {
        self.0
    }

    pub(crate) fn check_dim(&self, expected: usize) -> Result<()> {
        if self.dim() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected,
                actual: self.dim(),
            })
        }
    }
}

impl fmt::Debug for Embedding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl TryFrom<Vec<f32>> for Embedding {
    type Error = Error;

    fn try_from(values: Vec<f32>) -> Result<Self> {
        Self::new(values)
    }
}

impl From<Embedding> for Vec<f32> {
    fn from(e: Embedding) -> Self {
        e.0
    }
}

impl AsRef<[f32]> for Embedding {
    fn as_ref(&self) -> &[f32] {
        &self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Metric {
    #[default]
    Euclidean,
    CosineDistance,
    NegativeInnerProduct,
}

impl Metric {
    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Euclidean => "euclidean",
            Metric::CosineDistance => "cosine-distance",
            Metric::NegativeInnerProduct => "negative-inner-product",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" | "l2" => Ok(Metric::Euclidean),
            "cosine-distance" | "cosine" => Ok(Metric::CosineDistance),
            "negative-inner-product" | "ip" => Ok(Metric::NegativeInnerProduct),
            other => Err(Error::InvalidParameter(format!("unknown metric {other:?}"))),
        }
    }
}

/// Distance between two embeddings; lower is more similar.
pub fn distance(a: &Embedding, b: &Embedding, metric: Metric) -> Result<f64> {
    b.check_dim(a.dim())?;
    Ok(raw_distance(a.as_slice(), b.as_slice(), metric))
}

/// Distance kernel without the dimension check. Accumulates in `f64`.
pub(crate) fn raw_distance(a: &[f32], b: &[f32], metric: Metric) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    match metric {
        Metric::Euclidean => a
            .iter()
            .zip(b)
            .map(|(&x, &y)| {
                let d = f64::from(x) - f64::from(y);
                d * d
            })
            .sum::<f64>()
            .sqrt(),
        Metric::CosineDistance => {
            let (mut dot, mut na, mut nb) = (0.0f64, 0.0f64, 0.0f64);
            for (&x, &y) in a.iter().zip(b) {
                let (x, y) = (f64::from(x), f64::from(y));
                dot += x * y;
                na += x * x;
                nb += y * y;
            }
            if na == 0.0 || nb == 0.0 {
                // zero vectors have no direction; treat as orthogonal
                return 1.0;
            }
            let cos = (dot / (na.sqrt() * nb.sqrt())).clamp(-1.0, 1.0);
            1.0 - cos
        }
        Metric::NegativeInnerProduct => -a
            .iter()
            .zip(b)
            .map(|(&x, &y)| f64::from(x) * f64::from(y))
            .sum::<f64>(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn emb(v: &[f32]) -> Embedding {
        Embedding::new(v.to_vec()).unwrap()
    }

    #[test]
    fn pythagorean_triple() {
        let d = distance(&emb(&[0.0, 0.0]), &emb(&[3.0, 4.0]), Metric::Euclidean).unwrap();
        assert_eq!(d, 5.0);
    }

    #[test]
    fn self_distance_is_zero() {
        let a = emb(&[0.3, -1.7, 9.25]);
        assert_eq!(distance(&a, &a, Metric::Euclidean).unwrap(), 0.0);
    }

    #[test]
    fn orthogonal_cosine() {
        let d = distance(&emb(&[1.0, 0.0]), &emb(&[0.0, 1.0]), Metric::CosineDistance).unwrap();
        assert_eq!(d, 1.0);
    }

    #[test]
    fn negative_inner_product() {
        let d = distance(
            &emb(&[1.0, 2.0]),
            &emb(&[3.0, 4.0]),
            Metric::NegativeInnerProduct,
        )
        .unwrap();
        assert_eq!(d, -11.0);
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let err = distance(&emb(&[1.0]), &emb(&[1.0, 2.0]), Metric::Euclidean).unwrap_err();
        assert!(matches!(
            err,
            Error::DimensionMismatch {
                expected: 1,
                actual: 2
            }
        ));
    }

    #[test]
    fn non_finite_values_are_rejected() {
        assert!(matches!(
            Embedding::new(vec![1.0, f32::NAN]),
            Err(Error::NonFinite(1))
        ));
        assert!(Embedding::new(vec![f32::INFINITY]).is_err());
        assert!(serde_json::from_str::<Embedding>("[1.0, 2.0]").is_ok());
    }

    #[test]
    fn metric_names_round_trip() {
        for m in [
            Metric::Euclidean,
            Metric::CosineDistance,
            Metric::NegativeInnerProduct,
        ] {
            assert_eq!(m.as_str().parse::<Metric>().unwrap(), m);
            let json = serde_json::to_string(&m).unwrap();
            assert_eq!(json, format!("\"{}\"", m.as_str()));
        }
    }

    fn vec3() -> impl Strategy<Value = Vec<f32>> {
        proptest::collection::vec(-100.0f32..100.0, 3)
    }

    proptest! {
        #[test]
        fn euclidean_is_a_metric(a in vec3(), b in vec3(), c in vec3()) {
            let (a, b, c) = (emb(&a), emb(&b), emb(&c));
            let ab = distance(&a, &b, Metric::Euclidean).unwrap();
            let ba = distance(&b, &a, Metric::Euclidean).unwrap();
            let bc = distance(&b, &c, Metric::Euclidean).unwrap();
            let ac = distance(&a, &c, Metric::Euclidean).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert!(ac <= ab + bc + 1e-9);
        }

        #[test]
        fn cosine_is_symmetric_and_bounded(a in vec3(), b in vec3()) {
            let (a, b) = (emb(&a), emb(&b));
            let ab = distance(&a, &b, Metric::CosineDistance).unwrap();
            let ba = distance(&b, &a, Metric::CosineDistance).unwrap();
            prop_assert!((0.0..=2.0).contains(&ab));
            prop_assert_eq!(ab, ba);
        }
    }
}
