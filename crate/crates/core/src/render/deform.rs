//! Time-conditioned deformation of Gaussian means, rotations and scales.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{Gaussian, PARAMS_PER_GAUSSIAN};

/// `[v, sin(2^0 pi v), cos(2^0 pi v), ..., sin(2^(L-1) pi v), cos(2^(L-1) pi v)]`, where each
/// block spans every component of `v`. Output length is `v.len() * (2L + 1)`.
pub fn positional_encoding(v: &[f64], frequencies: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(v.len() * (2 * frequencies + 1));
    out.extend_from_slice(v);
    for k in 0..frequencies {
        let f = (1u64 << k) as f64 * PI;
        out.extend(v.iter().map(|x| (f * x).sin()));
        out.extend(v.iter().map(|x| (f * x).cos()));
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeformConfig {
    pub position_frequencies: usize,
    pub time_frequencies: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
}

impl Default for DeformConfig {
    fn default() -> Self {
        DeformConfig {
            position_frequencies: 10,
            time_frequencies: 6,
            hidden_width: 128,
            hidden_layers: 6,
        }
    }
}

impl DeformConfig {
    pub fn input_dim(&self) -> usize {
        3 * (2 * self.position_frequencies + 1) + (2 * self.time_frequencies + 1)
    }

    /// `(inputs, outputs)` of each linear layer.
    pub fn layers(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::with_capacity(self.hidden_layers + 1);
        let mut prev = self.input_dim();
        for _ in 0..self.hidden_layers {
            out.push((prev, self.hidden_width));
            prev = self.hidden_width;
        }
        out.push((prev, DEFORM_OUTPUTS));
        out
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(|(i, o)| i * o + o).sum()
    }
}

/// Offsets produced per Gaussian: position (3), quaternion increment (4), log-scale (3).
pub const DEFORM_OUTPUTS: usize = 10;

/// ReLU MLP mapping encoded position and time to per-Gaussian offsets.
///
/// Parameters are one flat vector; each layer stores its row-major weight matrix
/// followed by its bias.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeformationField {
    pub config: DeformConfig,
    pub params: Vec<f64>,
}

/// Activations kept from [`DeformationField::apply`] for the backward pass.
pub struct DeformCache {
    /// Per Gaussian: the encoded input followed by every hidden activation.
    activations: Vec<Vec<f64>>,
}

impl DeformationField {
    /// Uniform `±1/sqrt(fan_in)` initialization with the output layer zeroed, so a new
    /// field leaves every Gaussian untouched.
    pub fn new(config: DeformConfig, rng: &mut impl Rng) -> Self {
        let layers = config.layers();
        let mut params = Vec::with_capacity(config.param_count());
        for (l, &(i, o)) in layers.iter().enumerate() {
            if l + 1 == layers.len() {
                params.extend(std::iter::repeat_n(0.0, i * o + o));
            } else {
                let bound = 1.0 / (i as f64).sqrt();
                params.extend((0..i * o + o).map(|_| rng.random_range(-bound..bound)));
            }
        }
        DeformationField { config, params }
    }

    fn encode(&self, mean: &[f64; 3], time: f64) -> Vec<f64> {
        let mut input = positional_encoding(mean, self.config.position_frequencies);
        input.extend(positional_encoding(&[time], self.config.time_frequencies));
        input
    }

    /// Offsets for one position and time, with every hidden activation appended to `trace`.
    fn forward(&self, input: Vec<f64>, trace: &mut Vec<f64>) -> [f64; DEFORM_OUTPUTS] {
        trace.clear();
        trace.extend_from_slice(&input);
        let layers = self.config.layers();
        let mut offset = 0;
        let mut start = 0;
        let mut out = [0.0; DEFORM_OUTPUTS];
        for (l, &(ni, no)) in layers.iter().enumerate() {
            let w = &self.params[offset..offset + ni * no];
            let b = &self.params[offset + ni * no..offset + ni * no + no];
            offset += ni * no + no;
            let last = l + 1 == layers.len();
            let len = trace.len();
            for r in 0..no {
                let a = &trace[start..start + ni];
                let row = &w[r * ni..(r + 1) * ni];
                let z = b[r] + row.iter().zip(a).map(|(p, q)| p * q).sum::<f64>();
                if last {
                    out[r] = z;
                } else {
                    trace.push(z.max(0.0));
                }
            }
            start = len;
        }
        out
    }

    pub fn offsets(&self, mean: &[f64; 3], time: f64) -> [f64; DEFORM_OUTPUTS] {
        let mut trace = Vec::new();
        self.forward(self.encode(mean, time), &mut trace)
    }

    /// Deformed copies of `gaussians` at `time`.
    pub fn apply(&self, gaussians: &[Gaussian], time: f64) -> (Vec<Gaussian>, DeformCache) {
        let mut out = Vec::with_capacity(gaussians.len());
        let mut activations = Vec::with_capacity(gaussians.len());
        for g in gaussians {
            let mut trace = Vec::new();
            let mean = [g.mean.x, g.mean.y, g.mean.z];
            let d = self.forward(self.encode(&mean, time), &mut trace);
            let mut moved = g.clone();
            for k in 0..3 {
                moved.mean[k] += d[k];
                moved.log_scale[k] += d[7 + k];
            }
            for k in 0..4 {
                moved.rotation[k] += d[3 + k];
            }
            out.push(moved);
            activations.push(trace);
        }
        (out, DeformCache { activations })
    }

    /// Chain gradients with respect to deformed Gaussians back to the originals (added into
    /// `d_gaussians`) and, unless `d_params` is `None`, to the field parameters.
    pub fn backward(
        &self,
        gaussians: &[Gaussian],
        cache: &DeformCache,
        d_deformed: &[[f64; PARAMS_PER_GAUSSIAN]],
        d_gaussians: &mut [[f64; PARAMS_PER_GAUSSIAN]],
        mut d_params: Option<&mut [f64]>,
    ) {
        let layers = self.config.layers();
        let mut offsets = Vec::with_capacity(layers.len());
        let mut starts = Vec::with_capacity(layers.len());
        let (mut offset, mut start) = (0, 0);
        for &(ni, no) in &layers {
            offsets.push(offset);
            starts.push(start);
            offset += ni * no + no;
            start += ni;
        }
        for (gi, dg) in d_deformed.iter().enumerate() {
            // deformed = original + offset, so the direct path is the identity
            for k in 0..PARAMS_PER_GAUSSIAN {
                d_gaussians[gi][k] += dg[k];
            }
            // offsets share the parameter layout of mean, rotation and log-scale
            let d_out = dg[0..DEFORM_OUTPUTS].to_vec();
            if d_out.iter().all(|v| *v == 0.0) {
                continue;
            }
            let trace = &cache.activations[gi];
            let mut delta = d_out;
            for l in (0..layers.len()).rev() {
                let (ni, no) = layers[l];
                let a = &trace[starts[l]..starts[l] + ni];
                let w = &self.params[offsets[l]..offsets[l] + ni * no];
                if let Some(dp) = d_params.as_deref_mut() {
                    let (dw, db) = dp[offsets[l]..offsets[l] + ni * no + no].split_at_mut(ni * no);
                    for r in 0..no {
                        if delta[r] == 0.0 {
                            continue;
                        }
                        db[r] += delta[r];
                        for (c, av) in a.iter().enumerate() {
                            dw[r * ni + c] += delta[r] * av;
                        }
                    }
                }
                let mut d_in = vec![0.0; ni];
                for r in 0..no {
                    if delta[r] == 0.0 {
                        continue;
                    }
                    for c in 0..ni {
                        d_in[c] += w[r * ni + c] * delta[r];
                    }
                }
                if l > 0 {
                    for c in 0..ni {
                        if a[c] <= 0.0 {
                            d_in[c] = 0.0;
                        }
                    }
                }
                delta = d_in;
            }
            // delta is now the gradient with respect to the encoded input
            let x = gaussians[gi].mean;
            let lx = self.config.position_frequencies;
            for d in 0..3 {
                let mut s = delta[d];
                for k in 0..lx {
                    let f = (1u64 << k) as f64 * PI;
                    let base = 3 + 6 * k;
                    s += delta[base + d] * f * (f * x[d]).cos();
                    s -= delta[base + 3 + d] * f * (f * x[d]).sin();
                }
                d_gaussians[gi][d] += s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn encoding_of_zero() {
        assert_eq!(positional_encoding(&[0.0], 2), vec![0.0, 0.0, 1.0, 0.0, 1.0]);
        assert_eq!(positional_encoding(&[0.3, -1.0], 0), vec![0.3, -1.0]);
    }

    #[test]
    fn encoding_matches_scalar_formula() {
        let v = [0.3, -0.71, 1.9];
        let enc = positional_encoding(&v, 4);
        assert_eq!(enc.len(), 27);
        for k in 0..4 {
            for d in 0..3 {
                let f = 2f64.powi(k as i32) * PI;
                assert_eq!(enc[3 + 6 * k + d], (f * v[d]).sin());
                assert_eq!(enc[3 + 6 * k + 3 + d], (f * v[d]).cos());
            }
        }
    }

    #[test]
    fn fresh_field_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let field = DeformationField::new(DeformConfig::default(), &mut rng);
        assert_eq!(field.params.len(), field.config.param_count());
        assert_eq!(field.offsets(&[0.2, -0.4, 1.0], 0.7), [0.0; DEFORM_OUTPUTS]);
    }
}
