//! Mixture-of-embedding-experts dual encoder.
//!
//! Each video modality `k` is projected to a unit vector `v_k = norm(W_k x_k + b_k)`,
//! the caption to one unit vector per modality `q_k = norm(A_k t + c_k)`, and the
//! caption also picks mixture weights `w = softmax(U t + u0)`. The score of a
//! (video, caption) pair is `sum_k w_k <v_k, q_k>`.
//!
//! Parameters live in one flat vector in declaration order
//! (`W_1, b_1, .., W_K, b_K, A_1, c_1, .., A_K, c_K, U, u0`). Values are kept
//! exactly representable as `f32`; the math runs in `f64`.

use std::collections::HashSet;
use std::fmt;
use std::ops::Range;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::numerics::{softmax, DenseMatrix, SimilarityMatrix, DEFAULT_NORM_EPS};

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ModalitySpec {
    pub id: String,
    pub dim: usize,
}

impl ModalitySpec {
    pub fn new(id: impl Into<String>, dim: usize) -> Self {
        Self { id: id.into(), dim }
    }
}

/// Architecture of one dual encoder.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderSpec {
    pub modalities: Vec<ModalitySpec>,
    pub text_dim: usize,
    pub shared_dim: usize,
    pub text_encoder_id: String,
}

impl EncoderSpec {
    pub fn validate(&self) -> Result<()> {
        if self.modalities.is_empty() {
            return Err(Error::Config("encoder needs at least one modality".into()));
        }
        let mut seen = HashSet::new();
        for m in &self.modalities {
            if m.dim == 0 {
                return Err(Error::Config(format!("modality `{}` has zero dim", m.id)));
            }
            if !seen.insert(m.id.as_str()) {
                return Err(Error::Config(format!("duplicate modality `{}`", m.id)));
            }
        }
        if self.text_dim == 0 || self.shared_dim == 0 {
            return Err(Error::Config("text_dim and shared_dim must be >= 1".into()));
        }
        Ok(())
    }

    pub fn modality_count(&self) -> usize {
        self.modalities.len()
    }

    pub fn modality_ids(&self) -> Vec<&str> {
        self.modalities.iter().map(|m| m.id.as_str()).collect()
    }

    /// Width of the concatenated joint space.
    pub fn joint_dim(&self) -> usize {
        self.shared_dim * self.modalities.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    VideoProj(usize),
    VideoBias(usize),
    TextProj(usize),
    TextBias(usize),
    MixProj,
    MixBias,
}

impl Block {
    pub fn is_weight(self) -> bool {
        matches!(self, Block::VideoProj(_) | Block::TextProj(_) | Block::MixProj)
    }
}

impl fmt::Display for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Block::VideoProj(k) => write!(f, "W[{k}]"),
            Block::VideoBias(k) => write!(f, "b[{k}]"),
            Block::TextProj(k) => write!(f, "A[{k}]"),
            Block::TextBias(k) => write!(f, "c[{k}]"),
            Block::MixProj => write!(f, "U"),
            Block::MixBias => write!(f, "u0"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockInfo {
    pub block: Block,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

impl BlockInfo {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.rows * self.cols
    }
}

fn layout_for(spec: &EncoderSpec) -> Vec<BlockInfo> {
    let d = spec.shared_dim;
    let k_count = spec.modality_count();
    let mut shapes = Vec::new();
    for (k, m) in spec.modalities.iter().enumerate() {
        shapes.push((Block::VideoProj(k), d, m.dim));
        shapes.push((Block::VideoBias(k), 1, d));
    }
    for k in 0..k_count {
        shapes.push((Block::TextProj(k), d, spec.text_dim));
        shapes.push((Block::TextBias(k), 1, d));
    }
    shapes.push((Block::MixProj, k_count, spec.text_dim));
    shapes.push((Block::MixBias, 1, k_count));
    let mut offset = 0;
    shapes
        .into_iter()
        .map(|(block, rows, cols)| {
            let info = BlockInfo {
                block,
                rows,
                cols,
                offset,
            };
            offset += rows * cols;
            info
        })
        .collect()
}

/// Per-modality video features for a set of videos (one matrix per modality, rows aligned).
#[derive(Debug, Clone, PartialEq)]
pub struct VideoBatch {
    modalities: Vec<(String, DenseMatrix)>,
    len: usize,
}

impl VideoBatch {
    pub fn new(modalities: Vec<(String, DenseMatrix)>) -> Result<Self> {
        let len = modalities.first().map_or(0, |(_, m)| m.rows());
        if modalities.iter().any(|(_, m)| m.rows() != len) {
            return Err(Error::dims("VideoBatch::new", "modalities disagree on row count"));
        }
        Ok(Self { modalities, len })
    }

    /// Single-video batch from one feature vector per modality.
    pub fn single(features: &[(&str, &[f32])]) -> Result<Self> {
        let modalities = features
            .iter()
            .map(|(id, x)| Ok((id.to_string(), DenseMatrix::from_vec(1, x.len(), x.to_vec())?)))
            .collect::<Result<Vec<_>>>()?;
        Self::new(modalities)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn get(&self, id: &str) -> Option<&DenseMatrix> {
        self.modalities.iter().find(|(m, _)| m == id).map(|(_, x)| x)
    }

    pub fn modality_ids(&self) -> impl Iterator<Item = &str> {
        self.modalities.iter().map(|(m, _)| m.as_str())
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            modalities: self
                .modalities
                .iter()
                .map(|(id, m)| (id.clone(), m.select_rows(idx)))
                .collect(),
            len: idx.len(),
        }
    }
}

/// Text-side encoding: one unit query matrix per modality plus mixture weights (`n x K`).
#[derive(Debug, Clone, PartialEq)]
pub struct TextEncoding {
    pub queries: Vec<DenseMatrix<f64>>,
    pub weights: DenseMatrix<f64>,
}

/// Paired joint-space embeddings; block `k` of each row is scaled by `sqrt(w_k)` of the paired caption.
#[derive(Debug, Clone, PartialEq)]
pub struct JointEmbeddings {
    pub video: DenseMatrix<f64>,
    pub text: DenseMatrix<f64>,
}

/// Upstream gradients fed to [`DualEncoderParams::backward`].
#[derive(Debug, Default, Clone, Copy)]
pub struct Upstream<'a> {
    pub similarity: Option<&'a SimilarityMatrix>,
    pub video_embedding: Option<&'a DenseMatrix<f64>>,
    pub text_embedding: Option<&'a DenseMatrix<f64>>,
}

struct Projected {
    // per modality: n x d unit vectors, row-major
    unit: Vec<Vec<f64>>,
    // per modality: n values of max(||z||, eps)
    norm: Vec<Vec<f64>>,
    // per modality: n flags, true when the eps clamp was active
    clamped: Vec<Vec<bool>>,
}

struct TextCache {
    proj: Projected,
    // n x K
    weights: Vec<f64>,
}

/// Learnable parameters of one retrieval model.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEncoderParams {
    spec: EncoderSpec,
    layout: Vec<BlockInfo>,
    theta: Vec<f64>,
}

impl DualEncoderParams {
    /// Xavier-uniform weights, zero biases, deterministic per seed.
    pub fn init(spec: EncoderSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let layout = layout_for(&spec);
        let total = layout.last().map_or(0, |b| b.offset + b.rows * b.cols);
        let mut theta = vec![0.0; total];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for info in &layout {
            if !info.block.is_weight() {
                continue;
            }
            let bound = (6.0 / (info.rows + info.cols) as f64).sqrt() as f32;
            for v in &mut theta[info.range()] {
                *v = f64::from(rng.gen_range(-bound..=bound));
            }
        }
        Ok(Self { spec, layout, theta })
    }

    /// Assembles parameters from blocks given in declaration order.
    pub fn from_blocks(spec: EncoderSpec, blocks: &[DenseMatrix]) -> Result<Self> {
        spec.validate()?;
        let layout = layout_for(&spec);
        if blocks.len() != layout.len() {
            return Err(Error::dims(
                "DualEncoderParams::from_blocks",
                format!("{} blocks, expected {}", blocks.len(), layout.len()),
            ));
        }
        let mut theta = Vec::new();
        for (info, m) in layout.iter().zip(blocks) {
            if m.shape() != (info.rows, info.cols) {
                return Err(Error::dims(
                    "DualEncoderParams::from_blocks",
                    format!(
                        "{} is {:?}, expected {}x{}",
                        info.block,
                        m.shape(),
                        info.rows,
                        info.cols
                    ),
                ));
            }
            theta.extend(m.to_f64());
        }
        Ok(Self { spec, layout, theta })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn text_encoder_id(&self) -> &str {
        &self.spec.text_encoder_id
    }

    pub fn layout(&self) -> &[BlockInfo] {
        &self.layout
    }

    pub fn block_info(&self, block: Block) -> Option<&BlockInfo> {
        self.layout.iter().find(|b| b.block == block)
    }

    pub fn block(&self, block: Block) -> Option<DenseMatrix> {
        let info = self.block_info(block)?;
        DenseMatrix::from_f64(info.rows, info.cols, &self.theta[info.range()]).ok()
    }

    pub fn blocks(&self) -> Vec<DenseMatrix> {
        self.layout
            .iter()
            .map(|info| {
                DenseMatrix::from_f64(info.rows, info.cols, &self.theta[info.range()]).expect("parameters are finite")
            })
            .collect()
    }

    pub fn num_params(&self) -> usize {
        self.theta.len()
    }

    pub fn theta(&self) -> &[f64] {
        &self.theta
    }

    /// Replaces all parameters, rounding to `f32` storage precision.
    pub fn set_theta(&mut self, theta: &[f64]) -> Result<()> {
        if theta.len() != self.theta.len() {
            return Err(Error::dims("set_theta", format!("{} values", theta.len())));
        }
        if theta.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("set_theta"));
        }
        for (dst, &src) in self.theta.iter_mut().zip(theta) {
            *dst = f64::from(src as f32);
        }
        Ok(())
    }

    /// Copy with unrounded parameters, for finite-difference probes.
    pub fn with_theta_exact(&self, theta: &[f64]) -> Result<Self> {
        if theta.len() != self.theta.len() {
            return Err(Error::dims("with_theta_exact", format!("{} values", theta.len())));
        }
        Ok(Self {
            spec: self.spec.clone(),
            layout: self.layout.clone(),
            theta: theta.to_vec(),
        })
    }

    /// SHA-256 over the spec and the `f32` little-endian parameter bytes.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.spec.text_encoder_id.as_bytes());
        for m in &self.spec.modalities {
            h.update(m.id.as_bytes());
            h.update((m.dim as u64).to_le_bytes());
        }
        h.update((self.spec.text_dim as u64).to_le_bytes());
        h.update((self.spec.shared_dim as u64).to_le_bytes());
        for &v in &self.theta {
            h.update((v as f32).to_le_bytes());
        }
        format!("{:x}", h.finalize())
    }

    fn slice(&self, block: Block) -> &[f64] {
        let info = self.block_info(block).expect("block in layout");
        &self.theta[info.range()]
    }

    fn check_videos<'a>(&self, videos: &'a VideoBatch) -> Result<Vec<&'a DenseMatrix>> {
        self.spec
            .modalities
            .iter()
            .map(|m| {
                let x = videos.get(&m.id).ok_or_else(|| Error::MissingModality(m.id.clone()))?;
                if x.cols() != m.dim {
                    return Err(Error::dims(
                        "encode_video",
                        format!("modality `{}` has dim {}, expected {}", m.id, x.cols(), m.dim),
                    ));
                }
                Ok(x)
            })
            .collect()
    }

    fn check_texts(&self, texts: &DenseMatrix) -> Result<()> {
        if texts.cols() != self.spec.text_dim {
            return Err(Error::dims(
                "encode_text",
                format!("text dim {}, expected {}", texts.cols(), self.spec.text_dim),
            ));
        }
        Ok(())
    }

    fn project(&self, x: &DenseMatrix, weight: &[f64], bias: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<bool>) {
        let d = self.spec.shared_dim;
        let n = x.rows();
        let dim = x.cols();
        let mut unit = vec![0.0; n * d];
        let mut norms = Vec::with_capacity(n);
        let mut clamped = Vec::with_capacity(n);
        for i in 0..n {
            let xi = x.row(i);
            let z = &mut unit[i * d..(i + 1) * d];
            for (r, zr) in z.iter_mut().enumerate() {
                let wrow = &weight[r * dim..(r + 1) * dim];
                let mut acc = bias[r];
                for (wv, &xv) in wrow.iter().zip(xi) {
                    acc += wv * f64::from(xv);
                }
                *zr = acc;
            }
            let raw = z.iter().map(|v| v * v).sum::<f64>().sqrt();
            let norm = raw.max(DEFAULT_NORM_EPS);
            for v in z.iter_mut() {
                *v /= norm;
            }
            norms.push(norm);
            clamped.push(raw <= DEFAULT_NORM_EPS);
        }
        (unit, norms, clamped)
    }

    fn video_forward(&self, videos: &VideoBatch) -> Result<Projected> {
        let feats = self.check_videos(videos)?;
        let mut out = Projected {
            unit: Vec::new(),
            norm: Vec::new(),
            clamped: Vec::new(),
        };
        for (k, x) in feats.into_iter().enumerate() {
            let (u, n, c) = self.project(x, self.slice(Block::VideoProj(k)), self.slice(Block::VideoBias(k)));
            out.unit.push(u);
            out.norm.push(n);
            out.clamped.push(c);
        }
        Ok(out)
    }

    fn text_forward(&self, texts: &DenseMatrix) -> Result<TextCache> {
        self.check_texts(texts)?;
        let k_count = self.spec.modality_count();
        let mut proj = Projected {
            unit: Vec::new(),
            norm: Vec::new(),
            clamped: Vec::new(),
        };
        for k in 0..k_count {
            let (u, n, c) = self.project(texts, self.slice(Block::TextProj(k)), self.slice(Block::TextBias(k)));
            proj.unit.push(u);
            proj.norm.push(n);
            proj.clamped.push(c);
        }
        let mix = self.slice(Block::MixProj);
        let mix_bias = self.slice(Block::MixBias);
        let dim = self.spec.text_dim;
        let mut weights = Vec::with_capacity(texts.rows() * k_count);
        for j in 0..texts.rows() {
            let t = texts.row(j);
            let logits: Vec<f64> = (0..k_count)
                .map(|k| {
                    mix[k * dim..(k + 1) * dim]
                        .iter()
                        .zip(t)
                        .fold(mix_bias[k], |acc, (u, &tv)| acc + u * f64::from(tv))
                })
                .collect();
            weights.extend(softmax(&logits)?);
        }
        Ok(TextCache { proj, weights })
    }

    fn scores(&self, video: &Projected, text: &TextCache, n_v: usize, n_t: usize) -> Result<SimilarityMatrix> {
        let d = self.spec.shared_dim;
        let k_count = self.spec.modality_count();
        let mut s = vec![0.0; n_v * n_t];
        for i in 0..n_v {
            for j in 0..n_t {
                let mut acc = 0.0;
                for k in 0..k_count {
                    let v = &video.unit[k][i * d..(i + 1) * d];
                    let q = &text.proj.unit[k][j * d..(j + 1) * d];
                    let cos: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
                    acc += text.weights[j * k_count + k] * cos;
                }
                s[i * n_t + j] = acc;
            }
        }
        DenseMatrix::from_vec(n_v, n_t, s).map_err(|_| Error::NonFinite("similarity"))
    }

    /// Unit video vectors per modality (`n x d` each).
    pub fn encode_video(&self, videos: &VideoBatch) -> Result<Vec<DenseMatrix<f64>>> {
        let p = self.video_forward(videos)?;
        let d = self.spec.shared_dim;
        p.unit
            .into_iter()
            .map(|u| DenseMatrix::from_vec(videos.len(), d, u))
            .collect()
    }

    pub fn encode_text(&self, texts: &DenseMatrix) -> Result<TextEncoding> {
        let c = self.text_forward(texts)?;
        let d = self.spec.shared_dim;
        let queries = c
            .proj
            .unit
            .into_iter()
            .map(|u| DenseMatrix::from_vec(texts.rows(), d, u))
            .collect::<Result<Vec<_>>>()?;
        let weights = DenseMatrix::from_vec(texts.rows(), self.spec.modality_count(), c.weights)?;
        Ok(TextEncoding { queries, weights })
    }

    /// Score of one video (single-row batch) against one caption embedding.
    pub fn similarity(&self, video: &VideoBatch, text: &[f32]) -> Result<f64> {
        if video.len() != 1 {
            return Err(Error::dims("similarity", format!("{} videos, expected 1", video.len())));
        }
        let t = DenseMatrix::from_vec(1, text.len(), text.to_vec())?;
        Ok(self.similarity_matrix(video, &t)?.get(0, 0))
    }

    /// Rectangular score grid: rows are videos, columns are captions.
    pub fn similarity_matrix(&self, videos: &VideoBatch, texts: &DenseMatrix) -> Result<SimilarityMatrix> {
        let v = self.video_forward(videos)?;
        let t = self.text_forward(texts)?;
        self.scores(&v, &t, videos.len(), texts.rows())
    }

    /// Square `B x B` grid of a batch of paired samples; positives on the diagonal.
    pub fn batch_similarity_matrix(&self, videos: &VideoBatch, texts: &DenseMatrix) -> Result<SimilarityMatrix> {
        if videos.is_empty() || texts.rows() == 0 {
            return Err(Error::Empty("batch_similarity_matrix"));
        }
        if videos.len() != texts.rows() {
            return Err(Error::dims(
                "batch_similarity_matrix",
                format!("{} videos vs {} captions", videos.len(), texts.rows()),
            ));
        }
        self.similarity_matrix(videos, texts)
    }

    /// Joint-space embeddings of paired samples (row `i` of videos with row `i` of texts).
    pub fn joint_embeddings(&self, videos: &VideoBatch, texts: &DenseMatrix) -> Result<JointEmbeddings> {
        if videos.len() != texts.rows() {
            return Err(Error::dims("joint_embeddings", "videos and captions must be paired"));
        }
        let v = self.video_forward(videos)?;
        let t = self.text_forward(texts)?;
        let n = videos.len();
        let d = self.spec.shared_dim;
        let k_count = self.spec.modality_count();
        let width = d * k_count;
        let mut ev = vec![0.0; n * width];
        let mut et = vec![0.0; n * width];
        for i in 0..n {
            for k in 0..k_count {
                let scale = t.weights[i * k_count + k].sqrt();
                for r in 0..d {
                    ev[i * width + k * d + r] = scale * v.unit[k][i * d + r];
                    et[i * width + k * d + r] = scale * t.proj.unit[k][i * d + r];
                }
            }
        }
        Ok(JointEmbeddings {
            video: DenseMatrix::from_vec(n, width, ev)?,
            text: DenseMatrix::from_vec(n, width, et)?,
        })
    }

    /// Smallest pre-normalization norm over every projected vector. Finite-difference
    /// probes are only meaningful when this stays well away from zero.
    pub fn min_projection_norm(&self, videos: &VideoBatch, texts: &DenseMatrix) -> Result<f64> {
        let v = self.video_forward(videos)?;
        let t = self.text_forward(texts)?;
        Ok(v.norm
            .iter()
            .chain(&t.proj.norm)
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min))
    }

    /// Flat parameter gradient of a loss whose gradient w.r.t. the score grid is `upstream`.
    pub fn grad_wrt_params(
        &self,
        videos: &VideoBatch,
        texts: &DenseMatrix,
        upstream: &SimilarityMatrix,
    ) -> Result<Vec<f64>> {
        self.backward(
            videos,
            texts,
            Upstream {
                similarity: Some(upstream),
                ..Upstream::default()
            },
        )
    }

    /// Chain rule through normalization and softmax for any mix of score-grid and
    /// joint-embedding upstream gradients.
    pub fn backward(&self, videos: &VideoBatch, texts: &DenseMatrix, upstream: Upstream<'_>) -> Result<Vec<f64>> {
        let feats = self.check_videos(videos)?;
        self.check_texts(texts)?;
        let v = self.video_forward(videos)?;
        let t = self.text_forward(texts)?;
        let n_v = videos.len();
        let n_t = texts.rows();
        let d = self.spec.shared_dim;
        let k_count = self.spec.modality_count();

        let mut dv: Vec<Vec<f64>> = vec![vec![0.0; n_v * d]; k_count];
        let mut dq: Vec<Vec<f64>> = vec![vec![0.0; n_t * d]; k_count];
        let mut dw = vec![0.0; n_t * k_count];

        if let Some(g) = upstream.similarity {
            if g.shape() != (n_v, n_t) {
                return Err(Error::dims(
                    "backward",
                    format!("upstream {:?}, scores {n_v}x{n_t}", g.shape()),
                ));
            }
            for i in 0..n_v {
                for j in 0..n_t {
                    let gij = g.get(i, j);
                    if gij == 0.0 {
                        continue;
                    }
                    for k in 0..k_count {
                        let wk = t.weights[j * k_count + k];
                        let vi = &v.unit[k][i * d..(i + 1) * d];
                        let qj = &t.proj.unit[k][j * d..(j + 1) * d];
                        let cos: f64 = vi.iter().zip(qj).map(|(a, b)| a * b).sum();
                        dw[j * k_count + k] += gij * cos;
                        let coef = gij * wk;
                        for r in 0..d {
                            dv[k][i * d + r] += coef * qj[r];
                            dq[k][j * d + r] += coef * vi[r];
                        }
                    }
                }
            }
        }

        let paired = |m: &DenseMatrix<f64>| -> Result<()> {
            if n_v != n_t || m.shape() != (n_v, d * k_count) {
                return Err(Error::dims("backward", "embedding upstream must be paired B x (K*d)"));
            }
            Ok(())
        };
        if let Some(ge) = upstream.video_embedding {
            paired(ge)?;
            for i in 0..n_v {
                for k in 0..k_count {
                    let wk = t.weights[i * k_count + k];
                    let scale = wk.sqrt();
                    let g = &ge.row(i)[k * d..(k + 1) * d];
                    let vi = &v.unit[k][i * d..(i + 1) * d];
                    let mut inner = 0.0;
                    for r in 0..d {
                        dv[k][i * d + r] += scale * g[r];
                        inner += g[r] * vi[r];
                    }
                    dw[i * k_count + k] += inner / (2.0 * scale);
                }
            }
        }
        if let Some(ge) = upstream.text_embedding {
            paired(ge)?;
            for i in 0..n_t {
                for k in 0..k_count {
                    let wk = t.weights[i * k_count + k];
                    let scale = wk.sqrt();
                    let g = &ge.row(i)[k * d..(k + 1) * d];
                    let qi = &t.proj.unit[k][i * d..(i + 1) * d];
                    let mut inner = 0.0;
                    for r in 0..d {
                        dq[k][i * d + r] += scale * g[r];
                        inner += g[r] * qi[r];
                    }
                    dw[i * k_count + k] += inner / (2.0 * scale);
                }
            }
        }

        let mut grad = vec![0.0; self.theta.len()];
        for (k, x) in feats.iter().enumerate() {
            let dz = normalize_backward(&v.unit[k], &v.norm[k], &v.clamped[k], &dv[k], d);
            self.accumulate_affine(&mut grad, Block::VideoProj(k), Block::VideoBias(k), &dz, x, d);
        }
        for k in 0..k_count {
            let dy = normalize_backward(&t.proj.unit[k], &t.proj.norm[k], &t.proj.clamped[k], &dq[k], d);
            self.accumulate_affine(&mut grad, Block::TextProj(k), Block::TextBias(k), &dy, texts, d);
        }
        // softmax Jacobian: dl = w * (dw - <w, dw>)
        let mut dlogits = vec![0.0; n_t * k_count];
        for j in 0..n_t {
            let w = &t.weights[j * k_count..(j + 1) * k_count];
            let g = &dw[j * k_count..(j + 1) * k_count];
            let mean: f64 = w.iter().zip(g).map(|(a, b)| a * b).sum();
            for k in 0..k_count {
                dlogits[j * k_count + k] = w[k] * (g[k] - mean);
            }
        }
        self.accumulate_affine(&mut grad, Block::MixProj, Block::MixBias, &dlogits, texts, k_count);

        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite("grad_wrt_params"));
        }
        Ok(grad)
    }

    fn accumulate_affine(
        &self,
        grad: &mut [f64],
        weight: Block,
        bias: Block,
        dout: &[f64],
        x: &DenseMatrix,
        width: usize,
    ) {
        let w_range = self.block_info(weight).expect("block").range();
        let b_range = self.block_info(bias).expect("block").range();
        let dim = x.cols();
        for i in 0..x.rows() {
            let xi = x.row(i);
            for r in 0..width {
                let g = dout[i * width + r];
                if g == 0.0 {
                    continue;
                }
                grad[b_range.start + r] += g;
                let wrow = &mut grad[w_range.start + r * dim..w_range.start + (r + 1) * dim];
                for (gw, &xv) in wrow.iter_mut().zip(xi) {
                    *gw += g * f64::from(xv);
                }
            }
        }
        debug_assert!(w_range.end <= grad.len() && b_range.end <= grad.len());
    }
}

/// Backward of `u = z / max(||z||, eps)`: `(I - u u^T) g / ||z||`, or `g / eps` under the clamp.
fn normalize_backward(unit: &[f64], norm: &[f64], clamped: &[bool], g: &[f64], d: usize) -> Vec<f64> {
    let mut out = vec![0.0; g.len()];
    for i in 0..norm.len() {
        let u = &unit[i * d..(i + 1) * d];
        let gi = &g[i * d..(i + 1) * d];
        let o = &mut out[i * d..(i + 1) * d];
        if clamped[i] {
            for r in 0..d {
                o[r] = gi[r] / norm[i];
            }
            continue;
        }
        let proj: f64 = u.iter().zip(gi).map(|(a, b)| a * b).sum();
        for r in 0..d {
            o[r] = (gi[r] - u[r] * proj) / norm[i];
        }
    }
    out
}
