//! Gram-matrix style distance and feature-space content distance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Activations of one network layer: `channels` rows of `spatial` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    layer_id: String,
    channels: usize,
    spatial: usize,
    values: Vec<f64>,
}

impl FeatureMap {
    pub fn new(layer_id: impl Into<String>, channels: usize, spatial: usize, values: Vec<f64>) -> Result<Self> {
        let layer_id = layer_id.into();
        if channels == 0 || spatial == 0 {
            return Err(Error::scoring(None, format!("layer `{layer_id}` has an empty shape")));
        }
        if values.len() != channels * spatial {
            return Err(Error::scoring(
                None,
                format!(
                    "layer `{layer_id}` has {} values for shape {channels}x{spatial}",
                    values.len()
                ),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::scoring(None, format!("layer `{layer_id}` has non-finite values")));
        }
        Ok(Self {
            layer_id,
            channels,
            spatial,
            values,
        })
    }

    pub fn layer_id(&self) -> &str {
        &self.layer_id
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn spatial(&self) -> usize {
        self.spatial
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    fn row(&self, c: usize) -> &[f64] {
        &self.values[c * self.spatial..(c + 1) * self.spatial]
    }
}

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Gram {
    pub n: usize,
    pub data: Vec<f64>,
}

impl Gram {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }
}

/// `V Vᵀ / (C·M)` for the C×M activation matrix V.
pub fn gram_matrix(f: &FeatureMap) -> Gram {
    let n = f.channels;
    let norm = (f.channels * f.spatial) as f64;
    let mut data = vec![0.0; n * n];
    for i in 0..n {
        let ri = f.row(i);
        for j in i..n {
            let dot: f64 = ri.iter().zip(f.row(j)).map(|(a, b)| a * b).sum();
            let g = dot / norm;
            data[i * n + j] = g;
            data[j * n + i] = g;
        }
    }
    Gram { n, data }
}

fn mean_squared_difference(a: &[f64], b: &[f64]) -> f64 {
    let sum: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    sum / a.len() as f64
}

/// Mean squared difference between the two layers' Gram matrices.
pub fn style_distance(a: &FeatureMap, b: &FeatureMap) -> Result<f64> {
    if a.channels != b.channels {
        return Err(Error::scoring(
            None,
            format!(
                "layer `{}` channel mismatch: {} vs {}",
                a.layer_id, a.channels, b.channels
            ),
        ));
    }
    Ok(mean_squared_difference(&gram_matrix(a).data, &gram_matrix(b).data))
}

/// Mean squared difference between raw activations.
pub fn content_distance(a: &FeatureMap, b: &FeatureMap) -> Result<f64> {
    if a.channels != b.channels || a.spatial != b.spatial {
        return Err(Error::scoring(
            None,
            format!(
                "layer `{}` shape mismatch: {}x{} vs {}x{}",
                a.layer_id, a.channels, a.spatial, b.channels, b.spatial
            ),
        ));
    }
    Ok(mean_squared_difference(&a.values, &b.values))
}
