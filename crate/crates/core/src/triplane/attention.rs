use super::{FeatureGrid, Linear, OccupancyFeature};
use crate::error::{Error, Result};

/// Single-head scaled dot-product attention in which image tokens query the
/// concatenation of image tokens and occupancy tokens.
#[derive(Debug, Clone, PartialEq)]
pub struct CrossAttention {
    pub query: Linear,
    pub key_image: Linear,
    pub key_occupancy: Linear,
    pub value_image: Linear,
    pub value_occupancy: Linear,
}

impl CrossAttention {
    /// Seeded projections for image tokens of width `channels`, occupancy
    /// tokens of width `occupancy_width` and attention width `dim`. Values
    /// keep the image channel count.
    pub fn new(channels: usize, occupancy_width: usize, dim: usize, seed: u64) -> Self {
        Self {
            query: Linear::seeded(channels, dim, seed, 0),
            key_image: Linear::seeded(channels, dim, seed, 1),
            key_occupancy: Linear::seeded(occupancy_width, dim, seed, 2),
            value_image: Linear::seeded(channels, channels, seed, 3),
            value_occupancy: Linear::seeded(occupancy_width, channels, seed, 4),
        }
    }

    fn check(&self, f: &FeatureGrid, o: &OccupancyFeature) -> Result<()> {
        if f.channels != self.query.inputs {
            return Err(Error::Shape {
                expected: format!("{} image channels", self.query.inputs),
                actual: f.channels.to_string(),
            });
        }
        if o.tokens() > 0 && o.width != self.key_occupancy.inputs {
            return Err(Error::Shape {
                expected: format!("occupancy width {}", self.key_occupancy.inputs),
                actual: o.width.to_string(),
            });
        }
        if f.data.iter().chain(&o.data).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("attention inputs"));
        }
        Ok(())
    }

    fn keys_values(&self, f: &FeatureGrid, o: &OccupancyFeature) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let mut keys = Vec::with_capacity(f.tokens() + o.tokens());
        let mut values = Vec::with_capacity(keys.capacity());
        for t in 0..f.tokens() {
            keys.push(self.key_image.apply(f.token(t)));
            values.push(self.value_image.apply(f.token(t)));
        }
        for t in 0..o.tokens() {
            keys.push(self.key_occupancy.apply(o.token(t)));
            values.push(self.value_occupancy.apply(o.token(t)));
        }
        (keys, values)
    }

    fn softmax_rows(&self, f: &FeatureGrid, keys: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let scale = 1.0 / (self.query.outputs.max(1) as f64).sqrt();
        (0..f.tokens())
            .map(|t| {
                let q = self.query.apply(f.token(t));
                let scores: Vec<f64> = keys
                    .iter()
                    .map(|k| scale * q.iter().zip(k).map(|(a, b)| a * b).sum::<f64>())
                    .collect();
                let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
                let total: f64 = exps.iter().sum();
                exps.into_iter().map(|e| e / total).collect()
            })
            .collect()
    }

    /// Attention weights: one row per image token, columns ordered image
    /// tokens first, then occupancy tokens.
    pub fn weights(&self, f: &FeatureGrid, o: &OccupancyFeature) -> Result<Vec<Vec<f64>>> {
        self.check(f, o)?;
        let (keys, _) = self.keys_values(f, o);
        Ok(self.softmax_rows(f, &keys))
    }

    /// Attended image features with the token layout of `f`.
    pub fn apply(&self, f: &FeatureGrid, o: &OccupancyFeature) -> Result<FeatureGrid> {
        self.check(f, o)?;
        let (keys, values) = self.keys_values(f, o);
        let rows = self.softmax_rows(f, &keys);
        let c = f.channels;
        let mut out = FeatureGrid::zeros(f.resolution, c);
        for (t, row) in rows.iter().enumerate() {
            let dst = &mut out.data[t * c..(t + 1) * c];
            for (w, v) in row.iter().zip(&values) {
                for (d, x) in dst.iter_mut().zip(v) {
                    *d += w * x;
                }
            }
        }
        Ok(out)
    }
}

/// Cross-attention with attention width equal to the image channel count.
pub fn cross_attend(f: &FeatureGrid, o: &OccupancyFeature, seed: u64) -> Result<FeatureGrid> {
    CrossAttention::new(f.channels, o.width, f.channels, seed).apply(f, o)
}
