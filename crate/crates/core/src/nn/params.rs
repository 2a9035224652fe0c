use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Shape of one dense layer: a row-major `outputs x inputs` weight block
/// followed by `outputs` biases.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerShape {
    pub inputs: usize,
    pub outputs: usize,
}

impl LayerShape {
    pub fn weight_count(&self) -> usize {
        self.inputs * self.outputs
    }

    pub fn len(&self) -> usize {
        self.weight_count() + self.outputs
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Flat, ordered model weights. The unit exchanged between clients and
/// the server.
///
/// Binary operations require identical layouts. Plain vectors without a
/// network behind them use [`ParamVector::flat`], which describes the data
/// as a single bias-only block.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamVector {
    values: Vec<f64>,
    layout: Vec<LayerShape>,
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Vec<LayerShape>) -> Result<Self> {
        let expected: usize = layout.iter().map(LayerShape::len).sum();
        if expected != values.len() {
            return Err(Error::DimensionMismatch { context: "ParamVector::new", expected, actual: values.len() });
        }
        Ok(Self { values, layout })
    }

    pub fn flat(values: Vec<f64>) -> Self {
        let layout = vec![LayerShape { inputs: 0, outputs: values.len() }];
        Self { values, layout }
    }

    pub fn zeros(layout: &[LayerShape]) -> Self {
        let n = layout.iter().map(LayerShape::len).sum();
        Self { values: vec![0.0; n], layout: layout.to_vec() }
    }

    pub fn zeros_like(&self) -> Self {
        Self { values: vec![0.0; self.values.len()], layout: self.layout.clone() }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn layout(&self) -> &[LayerShape] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn layer_count(&self) -> usize {
        self.layout.len()
    }

    /// Index range of layer `layer` (weights and biases) in the flat array.
    pub fn layer_range(&self, layer: usize) -> std::ops::Range<usize> {
        let start: usize = self.layout[..layer].iter().map(LayerShape::len).sum();
        start..start + self.layout[layer].len()
    }

    pub fn is_compatible(&self, other: &ParamVector) -> bool {
        self.layout == other.layout
    }

    fn check(&self, other: &ParamVector, context: &'static str) -> Result<()> {
        if self.is_compatible(other) {
            Ok(())
        } else {
            Err(Error::LayoutMismatch(context))
        }
    }

    pub fn add(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check(other, "add")?;
        Ok(self.zip_map(other, |a, b| a + b))
    }

    pub fn sub(&self, other: &ParamVector) -> Result<ParamVector> {
        self.check(other, "sub")?;
        Ok(self.zip_map(other, |a, b| a - b))
    }

    pub fn scale(&self, factor: f64) -> ParamVector {
        ParamVector { values: self.values.iter().map(|v| v * factor).collect(), layout: self.layout.clone() }
    }

    /// `self += factor * other`
    pub fn add_scaled(&mut self, factor: f64, other: &ParamVector) -> Result<()> {
        self.check(other, "add_scaled")?;
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += factor * b;
        }
        Ok(())
    }

    fn zip_map(&self, other: &ParamVector, f: impl Fn(f64, f64) -> f64) -> ParamVector {
        ParamVector {
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
            layout: self.layout.clone(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dot(&self, other: &ParamVector) -> Result<f64> {
        self.check(other, "dot")?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum())
    }

    pub fn l2_distance(&self, other: &ParamVector) -> Result<f64> {
        self.check(other, "l2_distance")?;
        Ok(self.values.iter().zip(&other.values).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
    }

    /// Cosine similarity; a zero vector is orthogonal to everything.
    pub fn cosine_similarity(&self, other: &ParamVector) -> Result<f64> {
        let dot = self.dot(other)?;
        let denom = self.norm() * other.norm();
        if denom == 0.0 {
            return Ok(0.0);
        }
        Ok((dot / denom).clamp(-1.0, 1.0))
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Normalized weighted mean of compatible vectors (FedAvg aggregation).
pub fn weighted_mean(items: &[(&ParamVector, f64)]) -> Result<ParamVector> {
    let (first, _) = items.first().ok_or(Error::Empty("weighted_mean input"))?;
    if items.iter().any(|(_, w)| !(*w >= 0.0) || !w.is_finite()) {
        return Err(Error::ZeroWeights);
    }
    let total: f64 = items.iter().map(|(_, w)| w).sum();
    if total <= 0.0 {
        return Err(Error::ZeroWeights);
    }
    if items.len() == 1 {
        return Ok((*first).clone());
    }
    let mut acc = first.zeros_like();
    for (v, w) in items {
        acc.add_scaled(w / total, v)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn flat(v: &[f64]) -> ParamVector {
        ParamVector::flat(v.to_vec())
    }

    #[test]
    fn weighted_mean_examples() {
        let (a, b) = (flat(&[1.0, 3.0]), flat(&[3.0, 1.0]));
        let m = weighted_mean(&[(&a, 1.0), (&b, 1.0)]).unwrap();
        assert_eq!(m.values(), &[2.0, 2.0]);

        let (a, b) = (flat(&[0.0, 0.0]), flat(&[4.0, 4.0]));
        let m = weighted_mean(&[(&a, 1.0), (&b, 3.0)]).unwrap();
        assert_eq!(m.values(), &[3.0, 3.0]);
    }

    #[test]
    fn weighted_mean_errors() {
        let a = flat(&[1.0]);
        assert!(matches!(weighted_mean(&[(&a, 0.0), (&a, 0.0)]), Err(Error::ZeroWeights)));
        assert!(matches!(weighted_mean(&[(&a, -1.0)]), Err(Error::ZeroWeights)));
        assert!(weighted_mean(&[]).is_err());
        let b = flat(&[1.0, 2.0]);
        assert!(matches!(weighted_mean(&[(&a, 1.0), (&b, 1.0)]), Err(Error::LayoutMismatch(_))));
    }

    #[test]
    fn single_element_mean_is_exact() {
        let a = flat(&[0.1, -7.3, 1e-300]);
        assert_eq!(weighted_mean(&[(&a, 0.3)]).unwrap(), a);
    }

    #[test]
    fn distances() {
        let v = flat(&[1.0, -2.0, 0.5]);
        assert_eq!(v.l2_distance(&v).unwrap(), 0.0);
        let neg = v.scale(-1.0);
        assert!((v.cosine_similarity(&neg).unwrap() + 1.0).abs() < 1e-15);
        let z = v.zeros_like();
        assert_eq!(v.cosine_similarity(&z).unwrap(), 0.0);
    }

    #[test]
    fn layout_length_is_checked() {
        let layout = vec![LayerShape { inputs: 2, outputs: 1 }];
        assert!(ParamVector::new(vec![0.0; 3], layout.clone()).is_ok());
        assert!(ParamVector::new(vec![0.0; 2], layout).is_err());
    }
}
