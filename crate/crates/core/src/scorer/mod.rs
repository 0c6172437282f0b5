//! Fixed-weight forward pass of the direction-conditioned attention scorer.
//!
//! Per fruit the candidate leaves are encoded once by a self-attention stack;
//! each direction then forms a query from the fruit embedding and a learned
//! direction embedding, scores every leaf by scaled dot product, pools values
//! with a temperature softmax of those scores and predicts union occlusion
//! from `[q ‖ c]`.

pub mod layers;

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{stream_rng, Vec3};
use crate::graph::PAIR_GEOMETRY_DIM;
use crate::labeling::DIRECTION_COUNT;
use crate::scene::{OrganInstance, OrganKind};
use layers::{canonical_order, sigmoid, softmax_in_order, weighted_sum, EncoderLayer, Linear, Mlp2};

pub const DIRECTION_FEATURE_DIM: usize = 2;
pub const WEIGHTS_SCHEMA: &str = "occlugraph.scorer_weights.v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScorerConfig {
    pub leaf_dim: usize,
    pub fruit_dim: usize,
    pub direction_dim: usize,
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub ffn_hidden: usize,
    /// Query/key projection size `D_A`.
    pub attention_dim: usize,
    pub temperature: f64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        Self {
            leaf_dim: DESCRIPTOR_DIM,
            fruit_dim: DESCRIPTOR_DIM,
            direction_dim: 16,
            width: 128,
            heads: 4,
            layers: 2,
            ffn_hidden: 256,
            attention_dim: 64,
            temperature: 1.0,
        }
    }
}

impl ScorerConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if [self.leaf_dim, self.fruit_dim, self.direction_dim, self.width, self.heads, self.ffn_hidden, self.attention_dim]
            .contains(&0)
        {
            return bad("scorer dimensions must be positive");
        }
        if self.width % self.heads != 0 {
            return bad("width must be divisible by heads");
        }
        if !(self.temperature > 0.0) {
            return bad("temperature must be positive");
        }
        Ok(())
    }

    pub fn token_dim(&self) -> usize {
        self.leaf_dim + PAIR_GEOMETRY_DIM
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScorerWeights {
    pub config: ScorerConfig,
    /// `18 × direction_dim`, row-major.
    pub direction_embeddings: Vec<f64>,
    pub input: Linear,
    pub encoder: Vec<EncoderLayer>,
    pub mlp_q: Mlp2,
    pub mlp_k: Mlp2,
    pub mlp_v: Mlp2,
    pub head_union: Mlp2,
    pub head_rank: Mlp2,
    /// Union head used when a fruit has no candidate leaves.
    pub head_query: Mlp2,
}

#[derive(Clone, Copy)]
enum Init {
    Uniform(usize),
    One,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WeightsHeader {
    schema: String,
    config: ScorerConfig,
    nonlinearity: String,
    heads: String,
    tensors: Vec<TensorSpec>,
}

impl ScorerWeights {
    fn zeros(config: ScorerConfig) -> Result<Self> {
        config.validate()?;
        let c = &config;
        let key_in = c.width + PAIR_GEOMETRY_DIM + DIRECTION_FEATURE_DIM;
        Ok(Self {
            direction_embeddings: vec![0.0; DIRECTION_COUNT * c.direction_dim],
            input: Linear::zeros(c.token_dim(), c.width),
            encoder: (0..c.layers).map(|_| EncoderLayer::zeros(c.width, c.heads, c.ffn_hidden)).collect(),
            mlp_q: Mlp2::zeros(c.fruit_dim + c.direction_dim, c.width, c.attention_dim),
            mlp_k: Mlp2::zeros(key_in, c.width, c.attention_dim),
            mlp_v: Mlp2::zeros(key_in, c.width, c.attention_dim),
            head_union: Mlp2::zeros(2 * c.attention_dim, c.width, 1),
            head_rank: Mlp2::zeros(2 * c.attention_dim, c.width, 1),
            head_query: Mlp2::zeros(c.attention_dim, c.width, 1),
            config,
        })
    }

    /// Visits every tensor in file order.
    fn visit(&mut self, f: &mut dyn FnMut(String, Vec<usize>, &mut Vec<f64>, Init)) {
        fn linear(prefix: &str, l: &mut Linear, f: &mut dyn FnMut(String, Vec<usize>, &mut Vec<f64>, Init)) {
            let fan = l.input;
            f(format!("{prefix}.weight"), vec![l.output, l.input], &mut l.weight, Init::Uniform(fan));
            f(format!("{prefix}.bias"), vec![l.output], &mut l.bias, Init::Uniform(fan));
        }
        fn mlp(prefix: &str, m: &mut Mlp2, f: &mut dyn FnMut(String, Vec<usize>, &mut Vec<f64>, Init)) {
            linear(&format!("{prefix}.0"), &mut m.first, f);
            linear(&format!("{prefix}.1"), &mut m.second, f);
        }
        let d = self.config.direction_dim;
        f("direction_embeddings".into(), vec![DIRECTION_COUNT, d], &mut self.direction_embeddings, Init::Uniform(1));
        linear("input", &mut self.input, f);
        for (i, layer) in self.encoder.iter_mut().enumerate() {
            let p = format!("encoder.{i}");
            linear(&format!("{p}.attn.query"), &mut layer.attention.query, f);
            linear(&format!("{p}.attn.key"), &mut layer.attention.key, f);
            linear(&format!("{p}.attn.value"), &mut layer.attention.value, f);
            linear(&format!("{p}.attn.out"), &mut layer.attention.out, f);
            let w = layer.norm1.gain.len();
            f(format!("{p}.norm1.gain"), vec![w], &mut layer.norm1.gain, Init::One);
            f(format!("{p}.norm1.bias"), vec![w], &mut layer.norm1.bias, Init::Zero);
            mlp(&format!("{p}.ffn"), &mut layer.ffn, f);
            f(format!("{p}.norm2.gain"), vec![w], &mut layer.norm2.gain, Init::One);
            f(format!("{p}.norm2.bias"), vec![w], &mut layer.norm2.bias, Init::Zero);
        }
        mlp("mlp_q", &mut self.mlp_q, f);
        mlp("mlp_k", &mut self.mlp_k, f);
        mlp("mlp_v", &mut self.mlp_v, f);
        mlp("head_union", &mut self.head_union, f);
        mlp("head_rank", &mut self.head_rank, f);
        mlp("head_query", &mut self.head_query, f);
    }

    pub fn tensor_specs(&self) -> Vec<TensorSpec> {
        let mut out = Vec::new();
        self.clone().visit(&mut |name, shape, _, _| out.push(TensorSpec { name, shape }));
        out
    }

    /// Weights uniform in `±1/√fan_in` (direction embeddings in ±1), layer-norm
    /// gains 1 and biases 0. Values are rounded to f32 so a save/load round trip
    /// is exact.
    pub fn random(config: ScorerConfig, seed: u64) -> Result<Self> {
        let mut w = Self::zeros(config)?;
        let mut rng = stream_rng(seed, 0);
        w.visit(&mut |_, _, data, init| {
            for v in data.iter_mut() {
                *v = match init {
                    Init::Uniform(fan) => {
                        let a = 1.0 / (fan as f64).sqrt();
                        rng.gen_range(-a..=a) as f32 as f64
                    }
                    Init::One => 1.0,
                    Init::Zero => 0.0,
                };
            }
        });
        Ok(w)
    }

    fn header(&self) -> WeightsHeader {
        WeightsHeader {
            schema: WEIGHTS_SCHEMA.into(),
            config: self.config.clone(),
            nonlinearity: "silu".into(),
            heads: "union: mlp2([q, c]); rank: mlp2([v_j, c]); empty set: mlp2(q)".into(),
            tensors: self.tensor_specs(),
        }
    }

    /// `u32` little-endian header length, the JSON header, then every tensor as
    /// little-endian f32 in header order.
    pub fn write_to(&self, out: &mut impl Write) -> std::io::Result<()> {
        let header = serde_json::to_vec(&self.header()).expect("header serialises");
        out.write_all(&(header.len() as u32).to_le_bytes())?;
        out.write_all(&header)?;
        let mut copy = self.clone();
        let mut buf = Vec::new();
        copy.visit(&mut |_, _, data, _| {
            for v in data.iter() {
                buf.extend_from_slice(&(*v as f32).to_le_bytes());
            }
        });
        out.write_all(&buf)
    }

    pub fn read_from(input: &mut impl Read) -> Result<Self> {
        let bad = |m: String| Error::Weights(m);
        let mut len = [0u8; 4];
        input.read_exact(&mut len).map_err(|e| bad(format!("reading header length: {e}")))?;
        let mut header = vec![0u8; u32::from_le_bytes(len) as usize];
        input.read_exact(&mut header).map_err(|e| bad(format!("reading header: {e}")))?;
        let header: WeightsHeader = serde_json::from_slice(&header).map_err(|e| bad(format!("header: {e}")))?;
        if header.schema != WEIGHTS_SCHEMA {
            return Err(bad(format!("unsupported schema {}", header.schema)));
        }
        let mut w = Self::zeros(header.config)?;
        if w.tensor_specs() != header.tensors {
            return Err(bad("tensor list does not match the configuration".into()));
        }
        let mut body = Vec::new();
        input.read_to_end(&mut body).map_err(|e| bad(format!("reading tensors: {e}")))?;
        let total: usize = header.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        if body.len() != total * 4 {
            return Err(bad(format!("expected {} tensor bytes, found {}", total * 4, body.len())));
        }
        let mut floats = body.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64);
        w.visit(&mut |_, _, data, _| {
            for v in data.iter_mut() {
                *v = floats.next().expect("length checked");
            }
        });
        Ok(w)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(&mut f).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(&mut f)
    }

    pub fn direction_embedding(&self, k: usize) -> &[f64] {
        let d = self.config.direction_dim;
        &self.direction_embeddings[k * d..(k + 1) * d]
    }

    /// Contextualised candidate tokens; each token is `[h_j ‖ g_ij]`.
    pub fn encode_leaf_set(&self, tokens: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        for t in tokens {
            dim(self.config.token_dim(), t.len(), "leaf token")?;
        }
        let mut x: Vec<Vec<f64>> = tokens.iter().map(|t| self.input.forward(t)).collect();
        for layer in &self.encoder {
            x = layer.forward(&x);
        }
        Ok(x)
    }

    pub fn query(&self, fruit: &[f64], k: usize) -> Result<Vec<f64>> {
        dim(self.config.fruit_dim, fruit.len(), "fruit embedding")?;
        if k >= DIRECTION_COUNT {
            return Err(Error::Dimension {
                expected: DIRECTION_COUNT,
                got: k,
                context: "direction index".into(),
            });
        }
        let input: Vec<f64> = fruit.iter().chain(self.direction_embedding(k)).copied().collect();
        Ok(self.mlp_q.forward(&input))
    }

    /// Scores every candidate for direction `k`. `ctx`, `geometry` and
    /// `direction_features` are aligned per candidate.
    pub fn score_direction(
        &self,
        fruit: &[f64],
        ctx: &[Vec<f64>],
        geometry: &[[f64; PAIR_GEOMETRY_DIM]],
        direction_features: &[[f64; DIRECTION_FEATURE_DIM]],
        k: usize,
    ) -> Result<DirectionScore> {
        let q = self.query(fruit, k)?;
        dim(ctx.len(), geometry.len(), "pair geometry rows")?;
        dim(ctx.len(), direction_features.len(), "direction feature rows")?;
        if ctx.is_empty() {
            let union = sigmoid(self.head_query.forward(&q)[0]);
            return Ok(DirectionScore::empty(q, union));
        }
        let inputs: Vec<Vec<f64>> = ctx
            .iter()
            .zip(geometry.iter().zip(direction_features))
            .map(|(h, (g, r))| {
                dim(self.config.width, h.len(), "context token")?;
                Ok(h.iter().chain(g).chain(r).copied().collect())
            })
            .collect::<Result<_>>()?;
        let order = canonical_order(&inputs);
        let keys: Vec<Vec<f64>> = inputs.iter().map(|x| self.mlp_k.forward(x)).collect();
        let values: Vec<Vec<f64>> = inputs.iter().map(|x| self.mlp_v.forward(x)).collect();
        let scale = 1.0 / (self.config.attention_dim as f64).sqrt();
        let scores: Vec<f64> = keys
            .iter()
            .map(|kj| q.iter().zip(kj).fold(0.0, |a, (x, y)| a + x * y) * scale)
            .collect();
        let alpha = softmax_in_order(&scores, self.config.temperature, &order);
        let context = weighted_sum(&alpha, &values, &order, self.config.attention_dim);
        let qc: Vec<f64> = q.iter().chain(&context).copied().collect();
        let union = sigmoid(self.head_union.forward(&qc)[0]);
        let rank_logits: Vec<f64> = values
            .iter()
            .map(|v| {
                let vc: Vec<f64> = v.iter().chain(&context).copied().collect();
                self.head_rank.forward(&vc)[0]
            })
            .collect();
        let rank = softmax_in_order(&rank_logits, 1.0, &order);
        Ok(DirectionScore {
            potentials: scores.iter().map(|s| sigmoid(*s)).collect(),
            scores,
            alpha,
            context,
            union,
            rank_logits,
            rank,
            query: q,
        })
    }
}

fn dim(expected: usize, got: usize, context: &str) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension {
            expected,
            got,
            context: context.to_string(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionScore {
    /// Scaled dot products `⟨q, k_j⟩ / √D_A`.
    pub scores: Vec<f64>,
    /// Pooling weights `softmax(scores / T)`.
    pub alpha: Vec<f64>,
    /// `sigmoid(scores)`.
    pub potentials: Vec<f64>,
    pub context: Vec<f64>,
    pub union: f64,
    pub rank_logits: Vec<f64>,
    pub rank: Vec<f64>,
    pub query: Vec<f64>,
}

impl DirectionScore {
    fn empty(query: Vec<f64>, union: f64) -> Self {
        Self {
            scores: vec![],
            alpha: vec![],
            potentials: vec![],
            context: vec![0.0; query.len()],
            union,
            rank_logits: vec![],
            rank: vec![],
            query,
        }
    }
}

pub const DESCRIPTOR_DIM: usize = 16;

/// Fixed geometric embedding of an instance: extents (3), extents over scene
/// scale (3), centroid over scene scale (3), kind one-hot (4), log point count
/// over 10 (1), and the two ratios of sorted extents to the largest (2).
pub fn descriptor_embedding(inst: &OrganInstance, scene_scale: f64) -> Vec<f64> {
    let s = inst.extents;
    let scale = if scene_scale > 0.0 { scene_scale } else { 1.0 };
    let mut sorted = [s.x, s.y, s.z];
    sorted.sort_by(f64::total_cmp);
    let largest = if sorted[2] > 0.0 { sorted[2] } else { 1.0 };
    let c: Vec3 = inst.centroid / scale;
    let mut out = vec![s.x, s.y, s.z, s.x / scale, s.y / scale, s.z / scale, c.x, c.y, c.z];
    out.extend(OrganKind::ALL.iter().map(|k| if *k == inst.kind { 1.0 } else { 0.0 }));
    out.push((inst.surface_points.len() as f64).ln() / 10.0);
    out.push(sorted[0] / largest);
    out.push(sorted[1] / largest);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn small() -> ScorerConfig {
        ScorerConfig {
            leaf_dim: 4,
            fruit_dim: 3,
            direction_dim: 5,
            width: 8,
            heads: 2,
            layers: 2,
            ffn_hidden: 12,
            attention_dim: 6,
            temperature: 1.0,
        }
    }

    fn rand_rows(n: usize, d: usize, seed: u64) -> Vec<Vec<f64>> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn weights_round_trip() {
        let w = ScorerWeights::random(small(), 5).unwrap();
        let mut buf = Vec::new();
        w.write_to(&mut buf).unwrap();
        let back = ScorerWeights::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(w, back);
        buf.pop();
        assert!(ScorerWeights::read_from(&mut buf.as_slice()).is_err());
    }

    #[test]
    fn init_bounds() {
        let w = ScorerWeights::random(small(), 1).unwrap();
        let a = 1.0 / (small().token_dim() as f64).sqrt();
        assert!(w.input.weight.iter().all(|v| v.abs() <= a));
        assert!(w.encoder[0].norm1.gain.iter().all(|g| *g == 1.0));
    }

    #[test]
    fn encoder_is_permutation_equivariant() {
        let w = ScorerWeights::random(small(), 2).unwrap();
        let tokens = rand_rows(5, small().token_dim(), 3);
        let out = w.encode_leaf_set(&tokens).unwrap();
        let perm = [3, 0, 4, 1, 2];
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| tokens[i].clone()).collect();
        let out_p = w.encode_leaf_set(&permuted).unwrap();
        for (a, &i) in out_p.iter().zip(&perm) {
            assert_eq!(a, &out[i]);
        }
        let single = w.encode_leaf_set(&tokens[..1]).unwrap();
        assert_eq!(single, w.encode_leaf_set(&tokens[..1]).unwrap());
        let dup = w.encode_leaf_set(&[tokens[0].clone(), tokens[1].clone(), tokens[0].clone()]).unwrap();
        assert_eq!(dup[0], dup[2]);
        assert!(w.encode_leaf_set(&[vec![0.0; 2]]).is_err());
    }

    fn scored(w: &ScorerWeights, n: usize, seed: u64) -> (Vec<f64>, Vec<Vec<f64>>, Vec<[f64; 11]>, Vec<[f64; 2]>) {
        let tokens = rand_rows(n, w.config.token_dim(), seed);
        let ctx = w.encode_leaf_set(&tokens).unwrap();
        let g: Vec<[f64; 11]> = tokens.iter().map(|t| std::array::from_fn(|i| t[i % t.len()] * 0.5)).collect();
        let r: Vec<[f64; 2]> = tokens.iter().map(|t| [t[0], t[1].abs()]).collect();
        (rand_rows(1, w.config.fruit_dim, seed + 1).remove(0), ctx, g, r)
    }

    #[test]
    fn attention_weights_and_permutation() {
        let w = ScorerWeights::random(small(), 4).unwrap();
        let (h, ctx, g, r) = scored(&w, 6, 9);
        let s = w.score_direction(&h, &ctx, &g, &r, 7).unwrap();
        assert!((s.alpha.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!((s.rank.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let perm = [5, 2, 0, 1, 4, 3];
        fn p<T: Copy>(perm: &[usize], v: &[T]) -> Vec<T> {
            perm.iter().map(|&i| v[i]).collect()
        }
        let ctx_p: Vec<Vec<f64>> = perm.iter().map(|&i| ctx[i].clone()).collect();
        let sp = w.score_direction(&h, &ctx_p, &p(&perm, &g), &p(&perm, &r), 7).unwrap();
        assert_eq!(sp.union.to_bits(), s.union.to_bits());
        assert_eq!(sp.scores, p(&perm, &s.scores));
        assert_eq!(sp.rank, p(&perm, &s.rank));
    }

    #[test]
    fn singleton_and_temperature_limit() {
        let w = ScorerWeights::random(small(), 4).unwrap();
        let (h, ctx, g, r) = scored(&w, 1, 11);
        let s = w.score_direction(&h, &ctx, &g, &r, 0).unwrap();
        assert_eq!(s.alpha, vec![1.0]);
        let input: Vec<f64> = ctx[0].iter().chain(&g[0]).chain(&r[0]).copied().collect();
        assert_eq!(s.context, w.mlp_v.forward(&input));

        let mut hot = w.clone();
        hot.config.temperature = 1e6;
        let (h, ctx, g, r) = scored(&hot, 5, 12);
        let s = hot.score_direction(&h, &ctx, &g, &r, 3).unwrap();
        assert!(s.alpha.iter().all(|a| (a - 0.2).abs() < 1e-3));
    }

    #[test]
    fn empty_candidate_set_uses_query_head() {
        let w = ScorerWeights::random(small(), 4).unwrap();
        let s = w.score_direction(&[0.1, 0.2, 0.3], &[], &[], &[], 2).unwrap();
        assert!(s.alpha.is_empty() && s.union > 0.0 && s.union < 1.0);
    }

    #[test]
    fn directions_change_the_query() {
        let w = ScorerWeights::random(small(), 4).unwrap();
        let h = [0.3, -0.2, 0.5];
        assert_ne!(w.query(&h, 0).unwrap(), w.query(&h, 1).unwrap());
    }
}
