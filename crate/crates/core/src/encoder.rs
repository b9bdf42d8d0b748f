//! Factorized space-time transformer encoder.
//!
//! A video becomes a grid of `T × P²` patch tokens. Spatial blocks attend
//! among the `P²` tokens of each frame; temporal blocks then attend across the
//! `T` frames at each patch position. Per-frame descriptors are the mean of a
//! frame's tokens, giving a `T × D` feature matrix.
//!
//! Token rows are laid out frame-major: row `t·P² + n` holds patch `n` of
//! frame `t`.

use std::rc::Rc;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::numerics::{Bindings, NumericsError, ParamStore, RowGroups, Tape, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EncoderError {
    #[error(
        "frame size {height}x{width} is not divisible by patch size {patch}; pad to {padded_h}x{padded_w}"
    )]
    Indivisible {
        height: usize,
        width: usize,
        patch: usize,
        padded_h: usize,
        padded_w: usize,
    },
    #[error("video has no frames")]
    NoFrames,
    #[error("video buffer holds {got} values, expected {expected}")]
    BufferSize { expected: usize, got: usize },
    #[error("video values must be finite")]
    NonFinite,
    #[error("token grid has {got} {what}, encoder expects {expected}")]
    GridMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("video has {frames} frames, temporal embeddings cover {max}")]
    TooManyFrames { frames: usize, max: usize },
    #[error("invalid encoder config: {0}")]
    Config(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

/// Patch tokens of a video, `frames × patches × dim`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct TokenGrid {
    pub frames: usize,
    pub patches: usize,
    pub dim: usize,
    pub data: Vec<f32>,
}

impl TokenGrid {
    pub fn new(
        frames: usize,
        patches: usize,
        dim: usize,
        data: Vec<f32>,
    ) -> Result<Self, EncoderError> {
        if frames == 0 {
            return Err(EncoderError::NoFrames);
        }
        let expected = frames * patches * dim;
        if data.len() != expected {
            return Err(EncoderError::BufferSize {
                expected,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::NonFinite);
        }
        Ok(Self {
            frames,
            patches,
            dim,
            data,
        })
    }

    /// Tokens of frame `t`, `patches × dim`.
    pub fn frame(&self, t: usize) -> &[f32] {
        let n = self.patches * self.dim;
        &self.data[t * n..(t + 1) * n]
    }

    /// Grid restricted to the given frames, in the given order.
    pub fn select_frames(&self, frames: &[usize]) -> TokenGrid {
        let data = frames
            .iter()
            .flat_map(|&t| self.frame(t).iter().copied())
            .collect();
        TokenGrid {
            frames: frames.len(),
            patches: self.patches,
            dim: self.dim,
            data,
        }
    }

    pub fn to_tensor<S: Scalar>(&self) -> Tensor<S> {
        let data = self.data.iter().map(|&v| S::of(f64::from(v))).collect();
        Tensor::new(vec![self.frames * self.patches, self.dim], data)
            .expect("validated at construction")
    }
}

/// Raw frames (`T × H × W × C`, values in `[0, 1]`) or a pre-extracted token
/// grid that bypasses patch extraction.
#[derive(Clone, Debug, PartialEq)]
pub enum VideoTensor {
    Pixels {
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
    },
    Tokens(TokenGrid),
}

impl VideoTensor {
    pub fn pixels(
        frames: usize,
        height: usize,
        width: usize,
        channels: usize,
        data: Vec<f32>,
    ) -> Result<Self, EncoderError> {
        if frames == 0 {
            return Err(EncoderError::NoFrames);
        }
        let expected = frames * height * width * channels;
        if data.len() != expected {
            return Err(EncoderError::BufferSize {
                expected,
                got: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(EncoderError::NonFinite);
        }
        Ok(Self::Pixels {
            frames,
            height,
            width,
            channels,
            data,
        })
    }

    pub fn frames(&self) -> usize {
        match self {
            Self::Pixels { frames, .. } => *frames,
            Self::Tokens(g) => g.frames,
        }
    }
}

/// Splits each frame into non-overlapping `patch × patch` squares and
/// flattens each square (row, column, channel order) into one token. A token
/// grid passes through unchanged.
pub fn patchify(video: &VideoTensor, patch: usize) -> Result<TokenGrid, EncoderError> {
    let (frames, height, width, channels, data) = match video {
        VideoTensor::Tokens(g) => return Ok(g.clone()),
        VideoTensor::Pixels {
            frames,
            height,
            width,
            channels,
            data,
        } => (*frames, *height, *width, *channels, data),
    };
    if patch == 0 || height % patch != 0 || width % patch != 0 {
        let p = patch.max(1);
        return Err(EncoderError::Indivisible {
            height,
            width,
            patch,
            padded_h: height.div_ceil(p) * p,
            padded_w: width.div_ceil(p) * p,
        });
    }
    let (gh, gw) = (height / patch, width / patch);
    let dim = patch * patch * channels;
    let mut out = Vec::with_capacity(frames * gh * gw * dim);
    for t in 0..frames {
        let frame = &data[t * height * width * channels..(t + 1) * height * width * channels];
        for py in 0..gh {
            for px in 0..gw {
                for y in 0..patch {
                    let row = (py * patch + y) * width;
                    let start = (row + px * patch) * channels;
                    out.extend_from_slice(&frame[start..start + patch * channels]);
                }
            }
        }
    }
    TokenGrid::new(frames, gh * gw, dim, out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    /// Model width `D`.
    pub dim: usize,
    pub spatial_blocks: usize,
    pub temporal_blocks: usize,
    pub heads: usize,
    /// Pixel patch side used when ingesting raw frames.
    pub patch_size: usize,
    /// Width of each input token (`patch²·C` for pixels).
    pub input_dim: usize,
    /// Tokens per frame, `P²`.
    pub patches: usize,
    /// Longest video the learned temporal embeddings cover.
    pub max_frames: usize,
    pub temporal_pos_emb: bool,
    pub trainable: bool,
    /// Feed-forward hidden width as a multiple of `dim`.
    pub mlp_ratio: usize,
    pub gelu_exact: bool,
    pub layer_norm_eps: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            spatial_blocks: 2,
            temporal_blocks: 2,
            heads: 4,
            patch_size: 16,
            input_dim: 32,
            patches: 4,
            max_frames: 64,
            temporal_pos_emb: true,
            trainable: true,
            mlp_ratio: 2,
            gelu_exact: true,
            layer_norm_eps: 1e-5,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<(), EncoderError> {
        let bad = |m: &str| Err(EncoderError::Config(m.to_string()));
        if self.dim == 0 || self.heads == 0 || !self.dim.is_multiple_of(self.heads) {
            return bad("dim must be a positive multiple of heads");
        }
        if self.spatial_blocks == 0 || self.temporal_blocks == 0 {
            return bad("block counts must be at least 1");
        }
        if self.input_dim == 0 || self.patches == 0 || self.max_frames == 0 || self.mlp_ratio == 0 {
            return bad("input_dim, patches, max_frames and mlp_ratio must be positive");
        }
        Ok(())
    }
}

pub const PARAM_PREFIX: &str = "enc.";

/// Which axis a transformer block attends over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    /// Among the patches of each frame.
    Spatial,
    /// Across frames at each patch position.
    Temporal,
}

/// Row groups for attention along `axis` on a `frames × patches` grid.
pub fn row_groups(axis: Axis, frames: usize, patches: usize) -> RowGroups {
    let groups = match axis {
        Axis::Spatial => (0..frames)
            .map(|t| (0..patches).map(|n| t * patches + n).collect())
            .collect(),
        Axis::Temporal => (0..patches)
            .map(|n| (0..frames).map(|t| t * patches + n).collect())
            .collect(),
    };
    Rc::new(groups)
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub config: EncoderConfig,
}

impl Encoder {
    pub fn new(config: EncoderConfig) -> Result<Self, EncoderError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn block_name(axis: Axis, i: usize) -> String {
        match axis {
            Axis::Spatial => format!("{PARAM_PREFIX}spatial.{i}"),
            Axis::Temporal => format!("{PARAM_PREFIX}temporal.{i}"),
        }
    }

    /// Freshly initialized parameters: Gaussian weights scaled by
    /// `1/√fan_in`, zero biases, unit layer-norm gains, small positional
    /// embeddings.
    pub fn init_params<S: Scalar>(&self, rng: &mut impl Rng) -> ParamStore<S> {
        let c = &self.config;
        let mut p = ParamStore::new();
        let mut put = |name: String, t: Tensor<S>| p.insert(name, t).expect("unique encoder names");
        put(
            format!("{PARAM_PREFIX}patch.w"),
            gaussian(rng, &[c.input_dim, c.dim], c.input_dim),
        );
        put(format!("{PARAM_PREFIX}patch.b"), Tensor::zeros(&[c.dim]));
        put(
            format!("{PARAM_PREFIX}pos.spatial"),
            scaled_normal(rng, &[c.patches, c.dim], 0.02),
        );
        if c.temporal_pos_emb {
            put(
                format!("{PARAM_PREFIX}pos.temporal"),
                scaled_normal(rng, &[c.max_frames, c.dim], 0.02),
            );
        }
        let hidden = c.dim * c.mlp_ratio;
        let blocks = (0..c.spatial_blocks)
            .map(|i| Self::block_name(Axis::Spatial, i))
            .chain((0..c.temporal_blocks).map(|i| Self::block_name(Axis::Temporal, i)));
        for b in blocks {
            put(format!("{b}.ln1.g"), Tensor::full(&[c.dim], S::one()));
            put(format!("{b}.ln1.b"), Tensor::zeros(&[c.dim]));
            for w in ["wq", "wk", "wv", "wo"] {
                put(
                    format!("{b}.attn.{w}"),
                    gaussian(rng, &[c.dim, c.dim], c.dim),
                );
            }
            put(format!("{b}.attn.bo"), Tensor::zeros(&[c.dim]));
            put(format!("{b}.ln2.g"), Tensor::full(&[c.dim], S::one()));
            put(format!("{b}.ln2.b"), Tensor::zeros(&[c.dim]));
            put(
                format!("{b}.ffn.w1"),
                gaussian(rng, &[c.dim, hidden], c.dim),
            );
            put(format!("{b}.ffn.b1"), Tensor::zeros(&[hidden]));
            put(
                format!("{b}.ffn.w2"),
                gaussian(rng, &[hidden, c.dim], hidden),
            );
            put(format!("{b}.ffn.b2"), Tensor::zeros(&[c.dim]));
        }
        p
    }

    fn check_grid(&self, grid: &TokenGrid) -> Result<(), EncoderError> {
        let c = &self.config;
        if grid.dim != c.input_dim {
            return Err(EncoderError::GridMismatch {
                what: "token features",
                expected: c.input_dim,
                got: grid.dim,
            });
        }
        if grid.patches != c.patches {
            return Err(EncoderError::GridMismatch {
                what: "patches per frame",
                expected: c.patches,
                got: grid.patches,
            });
        }
        if c.temporal_pos_emb && grid.frames > c.max_frames {
            return Err(EncoderError::TooManyFrames {
                frames: grid.frames,
                max: c.max_frames,
            });
        }
        Ok(())
    }

    /// Projects raw tokens to model width and adds the spatial positional
    /// embedding of each patch slot (shared across frames).
    pub fn embed<'t, S: Scalar>(
        &self,
        tape: &'t Tape<S>,
        params: &Bindings<'t, S>,
        grid: &TokenGrid,
    ) -> Result<Var<'t, S>, EncoderError> {
        self.check_grid(grid)?;
        let x = tape.constant(grid.to_tensor());
        let index = Rc::new(
            (0..grid.frames * grid.patches)
                .map(|r| r % grid.patches)
                .collect(),
        );
        let h = x
            .matmul(params.get(&format!("{PARAM_PREFIX}patch.w"))?)?
            .add_bias(params.get(&format!("{PARAM_PREFIX}patch.b"))?)?
            .add_rows(params.get(&format!("{PARAM_PREFIX}pos.spatial"))?, index)?;
        Ok(h)
    }

    /// One pre-norm transformer block attending within each row group.
    pub fn block<'t, S: Scalar>(
        &self,
        tape: &'t Tape<S>,
        params: &Bindings<'t, S>,
        name: &str,
        x: Var<'t, S>,
        groups: RowGroups,
    ) -> Result<Var<'t, S>, EncoderError> {
        let c = &self.config;
        let eps = S::of(c.layer_norm_eps);
        let g = |suffix: &str| params.get(&format!("{name}.{suffix}"));
        let h = tape.layer_norm(x, g("ln1.g")?, g("ln1.b")?, eps)?;
        let q = h.matmul(g("attn.wq")?)?;
        let k = h.matmul(g("attn.wk")?)?;
        let v = h.matmul(g("attn.wv")?)?;
        let a = tape.attention(q, k, v, groups, c.heads)?;
        let x = x.add(a.matmul(g("attn.wo")?)?.add_bias(g("attn.bo")?)?)?;
        let h = tape.layer_norm(x, g("ln2.g")?, g("ln2.b")?, eps)?;
        let f = h
            .matmul(g("ffn.w1")?)?
            .add_bias(g("ffn.b1")?)?
            .gelu(c.gelu_exact)
            .matmul(g("ffn.w2")?)?
            .add_bias(g("ffn.b2")?)?;
        Ok(x.add(f)?)
    }

    /// Full encoder: embed, spatial blocks, temporal embeddings, temporal
    /// blocks, then mean over each frame's patches. Returns `T × D`.
    pub fn forward<'t, S: Scalar>(
        &self,
        tape: &'t Tape<S>,
        params: &Bindings<'t, S>,
        grid: &TokenGrid,
    ) -> Result<Var<'t, S>, EncoderError> {
        let c = &self.config;
        let (frames, patches) = (grid.frames, grid.patches);
        let mut x = self.embed(tape, params, grid)?;
        let spatial = row_groups(Axis::Spatial, frames, patches);
        for i in 0..c.spatial_blocks {
            x = self.block(
                tape,
                params,
                &Self::block_name(Axis::Spatial, i),
                x,
                spatial.clone(),
            )?;
        }
        if c.temporal_pos_emb {
            let index = Rc::new((0..frames * patches).map(|r| r / patches).collect());
            x = x.add_rows(params.get(&format!("{PARAM_PREFIX}pos.temporal"))?, index)?;
        }
        let temporal = row_groups(Axis::Temporal, frames, patches);
        for i in 0..c.temporal_blocks {
            x = self.block(
                tape,
                params,
                &Self::block_name(Axis::Temporal, i),
                x,
                temporal.clone(),
            )?;
        }
        Ok(tape.group_mean(x, spatial)?)
    }

    /// Value-only encoding of a video into per-frame features.
    pub fn encode<S: Scalar>(
        &self,
        video: &VideoTensor,
        params: &ParamStore<S>,
    ) -> Result<FrameFeatures<S>, EncoderError> {
        let grid = patchify(video, self.config.patch_size)?;
        let tape = Tape::new();
        let bindings = params.bind(&tape, |_| false);
        let f = self.forward(&tape, &bindings, &grid)?;
        let value = f.value().clone();
        FrameFeatures::new(value)
    }
}

/// Per-frame descriptors, `T × D`.
#[derive(Clone, Debug, PartialEq)]
pub struct FrameFeatures<S> {
    matrix: Tensor<S>,
}

impl<S: Scalar> FrameFeatures<S> {
    pub fn new(matrix: Tensor<S>) -> Result<Self, EncoderError> {
        if matrix.shape().len() != 2 || matrix.rows() == 0 {
            return Err(EncoderError::NoFrames);
        }
        if !matrix.is_finite() {
            return Err(EncoderError::NonFinite);
        }
        Ok(Self { matrix })
    }

    pub fn frames(&self) -> usize {
        self.matrix.rows()
    }

    pub fn dim(&self) -> usize {
        self.matrix.cols()
    }

    pub fn row(&self, t: usize) -> &[S] {
        self.matrix.row(t)
    }

    pub fn matrix(&self) -> &Tensor<S> {
        &self.matrix
    }
}

fn gaussian<S: Scalar>(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor<S> {
    scaled_normal(rng, shape, 1.0 / (fan_in as f64).sqrt())
}

fn scaled_normal<S: Scalar>(rng: &mut impl Rng, shape: &[usize], std: f64) -> Tensor<S> {
    let normal = Normal::new(0.0, std).expect("positive std");
    let n = shape.iter().product();
    let data = (0..n).map(|_| S::of(normal.sample(rng))).collect();
    Tensor::new(shape.to_vec(), data).expect("sized from shape")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> EncoderConfig {
        EncoderConfig {
            dim: 8,
            spatial_blocks: 1,
            temporal_blocks: 1,
            heads: 2,
            patch_size: 2,
            input_dim: 4,
            patches: 4,
            max_frames: 8,
            ..EncoderConfig::default()
        }
    }

    fn random_grid(rng: &mut impl Rng, frames: usize, patches: usize, dim: usize) -> TokenGrid {
        let data = (0..frames * patches * dim)
            .map(|_| rng.random_range(-1.0f32..1.0))
            .collect();
        TokenGrid::new(frames, patches, dim, data).unwrap()
    }

    fn zero_sublayers(p: &mut ParamStore<f64>) {
        let names: Vec<String> = p.names().map(str::to_string).collect();
        for n in names {
            if n.contains(".attn.") || n.contains(".ffn.") {
                p.get_mut(&n).unwrap().data_mut().fill(0.0);
            }
        }
    }

    fn run_block(enc: &Encoder, p: &ParamStore<f64>, grid: &TokenGrid, axis: Axis) -> Tensor<f64> {
        let tape = Tape::new();
        let b = p.bind(&tape, |_| false);
        let x = enc.embed(&tape, &b, grid).unwrap();
        let groups = row_groups(axis, grid.frames, grid.patches);
        let y = enc
            .block(&tape, &b, &Encoder::block_name(axis, 0), x, groups)
            .unwrap();
        let v = y.value().clone();
        v
    }

    fn permute_rows(t: &Tensor<f64>, perm: &[usize], patches: usize) -> Tensor<f64> {
        let d = t.cols();
        let mut out = Vec::new();
        for &f in perm {
            for n in 0..patches {
                out.extend_from_slice(t.row(f * patches + n));
            }
        }
        Tensor::new(vec![t.rows(), d], out).unwrap()
    }

    #[test]
    fn patchify_shapes_and_locality() {
        // 2 frames of 4×4×1 pixels, patch 2 → 2 × 4 × 4
        let data: Vec<f32> = (0..32).map(|v| v as f32 / 32.0).collect();
        let v = VideoTensor::pixels(2, 4, 4, 1, data.clone()).unwrap();
        let g = patchify(&v, 2).unwrap();
        assert_eq!((g.frames, g.patches, g.dim), (2, 4, 4));
        // top-left patch of frame 0 is pixels (0,0),(0,1),(1,0),(1,1)
        assert_eq!(&g.frame(0)[..4], &[0.0, 1.0 / 32.0, 4.0 / 32.0, 5.0 / 32.0]);

        let swapped: Vec<f32> = data[16..].iter().chain(&data[..16]).copied().collect();
        let gs = patchify(&VideoTensor::pixels(2, 4, 4, 1, swapped).unwrap(), 2).unwrap();
        assert_eq!(gs.frame(0), g.frame(1));
        assert_eq!(gs.frame(1), g.frame(0));

        let flat = patchify(&VideoTensor::pixels(1, 4, 4, 3, vec![0.5; 48]).unwrap(), 2).unwrap();
        assert!(flat.data.iter().all(|&x| x == 0.5));
    }

    #[test]
    fn patchify_rejects_indivisible_frames() {
        let v = VideoTensor::pixels(1, 5, 4, 1, vec![0.0; 20]).unwrap();
        let err = patchify(&v, 2).unwrap_err();
        assert!(err.to_string().contains("pad to 6x4"), "{err}");
    }

    #[test]
    fn spatial_block_is_frame_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let enc = Encoder::new(tiny_config()).unwrap();
        let p: ParamStore<f64> = enc.init_params(&mut rng);
        let grid = random_grid(&mut rng, 5, 4, 4);
        let perm = [3, 0, 4, 1, 2];
        let permuted = grid.select_frames(&perm);
        let a = permute_rows(&run_block(&enc, &p, &grid, Axis::Spatial), &perm, 4);
        let b = run_block(&enc, &p, &permuted, Axis::Spatial);
        assert_eq!(a, b);
    }

    #[test]
    fn temporal_block_without_positions_is_permutation_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let enc = Encoder::new(EncoderConfig {
            temporal_pos_emb: false,
            ..tiny_config()
        })
        .unwrap();
        let p: ParamStore<f64> = enc.init_params(&mut rng);
        let grid = random_grid(&mut rng, 4, 4, 4);
        let perm = [2, 0, 3, 1];
        let a = permute_rows(&run_block(&enc, &p, &grid, Axis::Temporal), &perm, 4);
        let b = run_block(&enc, &p, &grid.select_frames(&perm), Axis::Temporal);
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn single_frame_spatial_block_is_plain_block() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let enc = Encoder::new(tiny_config()).unwrap();
        let p: ParamStore<f64> = enc.init_params(&mut rng);
        let grid = random_grid(&mut rng, 1, 4, 4);
        let tape = Tape::new();
        let b = p.bind(&tape, |_| false);
        let x = enc.embed(&tape, &b, &grid).unwrap();
        let all = Rc::new(vec![(0..4).collect()]);
        let plain = enc
            .block(&tape, &b, &Encoder::block_name(Axis::Spatial, 0), x, all)
            .unwrap();
        let plain = plain.value().clone();
        assert_eq!(plain, run_block(&enc, &p, &grid, Axis::Spatial));
    }

    #[test]
    fn zeroed_sublayers_reduce_to_embed_and_pool() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let enc = Encoder::new(EncoderConfig {
            temporal_pos_emb: false,
            ..tiny_config()
        })
        .unwrap();
        let mut p: ParamStore<f64> = enc.init_params(&mut rng);
        zero_sublayers(&mut p);
        let grid = random_grid(&mut rng, 3, 4, 4);
        for axis in [Axis::Spatial, Axis::Temporal] {
            let tape = Tape::new();
            let b = p.bind(&tape, |_| false);
            let x = enc.embed(&tape, &b, &grid).unwrap();
            assert_eq!(*x.value(), run_block(&enc, &p, &grid, axis));
        }
        let f = enc.encode(&VideoTensor::Tokens(grid.clone()), &p).unwrap();
        let tape = Tape::new();
        let b = p.bind(&tape, |_| false);
        let x = enc.embed(&tape, &b, &grid).unwrap();
        let x = x.value();
        for t in 0..3 {
            for c in 0..8 {
                let mean = (0..4).map(|n| x.row(t * 4 + n)[c]).sum::<f64>() / 4.0;
                assert!((f.row(t)[c] - mean).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn identical_frames_give_identical_features() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let enc = Encoder::new(EncoderConfig {
            temporal_pos_emb: false,
            ..tiny_config()
        })
        .unwrap();
        let p: ParamStore<f64> = enc.init_params(&mut rng);
        let one = random_grid(&mut rng, 1, 4, 4);
        let grid = one.select_frames(&[0, 0, 0, 0]);
        let f = enc.encode(&VideoTensor::Tokens(grid), &p).unwrap();
        for t in 1..4 {
            for (a, b) in f.row(0).iter().zip(f.row(t)) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn desk_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let enc = Encoder::new(EncoderConfig::default()).unwrap();
        let p: ParamStore<f64> = enc.init_params(&mut rng);
        let grid = random_grid(&mut rng, 32, 4, 32);
        let f = enc.encode(&VideoTensor::Tokens(grid), &p).unwrap();
        assert_eq!((f.frames(), f.dim()), (32, 32));
    }

    #[test]
    fn encoder_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let enc = Encoder::new(tiny_config()).unwrap();
        let p: ParamStore<f64> = enc.init_params(&mut rng);
        let grid = random_grid(&mut rng, 3, 4, 4);
        let weights = Tensor::new(
            vec![3, 8],
            (0..24).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();
        let report = finite_diff_check(
            |tape, b| -> Result<_, EncoderError> {
                let f = enc.forward(tape, b, &grid)?;
                let w = tape.constant(weights.clone());
                Ok(f.gelu(true).mul(w)?.sum())
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error <= 1e-4, "{report:?}");
    }

    #[test]
    fn config_validation() {
        assert!(Encoder::new(EncoderConfig {
            heads: 3,
            ..EncoderConfig::default()
        })
        .is_err());
        assert!(Encoder::new(EncoderConfig {
            spatial_blocks: 0,
            ..EncoderConfig::default()
        })
        .is_err());
    }

    #[test]
    fn f32_forward_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let enc = Encoder::new(tiny_config()).unwrap();
        let p: ParamStore<f32> = enc.init_params(&mut rng);
        let grid = random_grid(&mut rng, 2, 4, 4);
        let f = enc.encode(&VideoTensor::Tokens(grid), &p).unwrap();
        assert_eq!(f.frames(), 2);
    }
}
