//! Dense building blocks evaluated in f64.
//!
//! Every reduction over a token set runs in an order fixed by the token values
//! themselves, so permuting the set permutes outputs bit-for-bit.

/// Smooth ramp `x · sigmoid(x)`.
pub fn silu(x: f64) -> f64 {
    x / (1.0 + (-x).exp())
}

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Row-major `out × in` weight and `out` bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub input: usize,
    pub output: usize,
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self {
            input,
            output,
            weight: vec![0.0; input * output],
            bias: vec![0.0; output],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        debug_assert_eq!(x.len(), self.input);
        (0..self.output)
            .map(|o| {
                let row = &self.weight[o * self.input..(o + 1) * self.input];
                row.iter().zip(x).fold(self.bias[o], |acc, (w, v)| acc + w * v)
            })
            .collect()
    }
}

/// `Linear → SiLU → Linear`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp2 {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp2 {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            first: Linear::zeros(input, hidden),
            second: Linear::zeros(hidden, output),
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = self.first.forward(x).into_iter().map(silu).collect();
        self.second.forward(&h)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNorm {
    pub fn identity(width: usize) -> Self {
        Self {
            gain: vec![1.0; width],
            bias: vec![0.0; width],
        }
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        let inv = 1.0 / (var + 1e-5).sqrt();
        x.iter()
            .zip(self.gain.iter().zip(&self.bias))
            .map(|(v, (g, b))| (v - mean) * inv * g + b)
            .collect()
    }
}

/// Indices sorting `rows` lexicographically by value (total order on f64).
pub fn canonical_order(rows: &[Vec<f64>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..rows.len()).collect();
    idx.sort_by(|&a, &b| {
        rows[a]
            .iter()
            .zip(&rows[b])
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    idx
}

/// Softmax of `logits / temperature`, with the normaliser summed in `order`.
pub fn softmax_in_order(logits: &[f64], temperature: f64, order: &[usize]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|z| ((z - max) / temperature).exp()).collect();
    let sum = order.iter().fold(0.0, |acc, &j| acc + e[j]);
    e.into_iter().map(|x| x / sum).collect()
}

/// `Σ_j w_j v_j` accumulated in `order`.
pub fn weighted_sum(weights: &[f64], values: &[Vec<f64>], order: &[usize], width: usize) -> Vec<f64> {
    let mut out = vec![0.0; width];
    for &j in order {
        for (o, v) in out.iter_mut().zip(&values[j]) {
            *o += weights[j] * v;
        }
    }
    out
}

/// Multi-head self-attention with a shared output projection.
#[derive(Debug, Clone, PartialEq)]
pub struct SelfAttention {
    pub heads: usize,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub out: Linear,
}

impl SelfAttention {
    pub fn zeros(width: usize, heads: usize) -> Self {
        Self {
            heads,
            query: Linear::zeros(width, width),
            key: Linear::zeros(width, width),
            value: Linear::zeros(width, width),
            out: Linear::zeros(width, width),
        }
    }

    pub fn forward(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let width = self.query.output;
        let dh = width / self.heads;
        let q: Vec<Vec<f64>> = x.iter().map(|t| self.query.forward(t)).collect();
        let k: Vec<Vec<f64>> = x.iter().map(|t| self.key.forward(t)).collect();
        let v: Vec<Vec<f64>> = x.iter().map(|t| self.value.forward(t)).collect();
        let order = canonical_order(x);
        let scale = 1.0 / (dh as f64).sqrt();
        q.iter()
            .map(|qi| {
                let mut mixed = vec![0.0; width];
                for h in 0..self.heads {
                    let span = h * dh..(h + 1) * dh;
                    let logits: Vec<f64> = k
                        .iter()
                        .map(|kj| {
                            qi[span.clone()]
                                .iter()
                                .zip(&kj[span.clone()])
                                .fold(0.0, |a, (p, r)| a + p * r)
                                * scale
                        })
                        .collect();
                    let w = softmax_in_order(&logits, 1.0, &order);
                    let heads: Vec<Vec<f64>> = v.iter().map(|vj| vj[span.clone()].to_vec()).collect();
                    let part = weighted_sum(&w, &heads, &order, dh);
                    mixed[span].copy_from_slice(&part);
                }
                self.out.forward(&mixed)
            })
            .collect()
    }
}

/// Post-norm encoder block: `x ← LN(x + Attn(x))`, `x ← LN(x + FFN(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderLayer {
    pub attention: SelfAttention,
    pub norm1: LayerNorm,
    pub ffn: Mlp2,
    pub norm2: LayerNorm,
}

impl EncoderLayer {
    pub fn zeros(width: usize, heads: usize, hidden: usize) -> Self {
        Self {
            attention: SelfAttention::zeros(width, heads),
            norm1: LayerNorm::identity(width),
            ffn: Mlp2::zeros(width, hidden, width),
            norm2: LayerNorm::identity(width),
        }
    }

    pub fn forward(&self, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let a = self.attention.forward(x);
        x.iter()
            .zip(a)
            .map(|(xi, ai)| {
                let r: Vec<f64> = xi.iter().zip(&ai).map(|(p, q)| p + q).collect();
                let h = self.norm1.forward(&r);
                let f = self.ffn.forward(&h);
                let r2: Vec<f64> = h.iter().zip(&f).map(|(p, q)| p + q).collect();
                self.norm2.forward(&r2)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn silu_and_sigmoid() {
        assert_eq!(silu(0.0), 0.0);
        assert!((sigmoid(0.0) - 0.5).abs() < 1e-15);
        assert!((silu(2.0) - 2.0 * sigmoid(2.0)).abs() < 1e-15);
    }

    #[test]
    fn linear_forward() {
        let l = Linear {
            input: 2,
            output: 1,
            weight: vec![2.0, -1.0],
            bias: vec![0.5],
        };
        assert_eq!(l.forward(&[1.0, 3.0]), vec![-0.5]);
    }

    #[test]
    fn layer_norm_centres_and_scales() {
        let y = LayerNorm::identity(4).forward(&[1.0, 2.0, 3.0, 4.0]);
        assert!(y.iter().sum::<f64>().abs() < 1e-12);
        let var = y.iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!((var - 1.0).abs() < 1e-4);
    }

    #[test]
    fn canonical_order_is_value_based() {
        let rows = vec![vec![1.0, 0.0], vec![0.0, 5.0], vec![1.0, -1.0]];
        assert_eq!(canonical_order(&rows), vec![1, 2, 0]);
    }
}
