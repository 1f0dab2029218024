//! Feature stores, splits, batching, and the synthetic corpus generator.
//!
//! A store directory holds `manifest.json` plus one TTFS matrix per video
//! modality (rows = videos in manifest order) and one per text encoder
//! (rows = captions in manifest order).

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::encoder::{ModalitySpec, VideoBatch};
use crate::error::{Error, Result};
use crate::io;
use crate::numerics::DenseMatrix;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const LEDGER_FILE: &str = "ambiguity.jsonl";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::UnknownSplit(other.to_string())),
        }
    }
}

/// A declared matrix file: a video modality or a text encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixEntry {
    pub id: String,
    pub dim: usize,
    pub file: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoEntry {
    pub id: String,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionEntry {
    pub id: String,
    pub video_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub name: String,
    pub modalities: Vec<MatrixEntry>,
    pub text_encoders: Vec<MatrixEntry>,
    pub videos: Vec<VideoEntry>,
    pub captions: Vec<CaptionEntry>,
}

/// Validated, immutable in-memory corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    manifest: Manifest,
    video_features: Vec<DenseMatrix>,
    text_features: Vec<DenseMatrix>,
    caption_video: Vec<usize>,
}

impl FeatureStore {
    /// Validates a manifest against its matrices.
    pub fn new(manifest: Manifest, video_features: Vec<DenseMatrix>, text_features: Vec<DenseMatrix>) -> Result<Self> {
        let mut video_index = HashMap::new();
        for (i, v) in manifest.videos.iter().enumerate() {
            if video_index.insert(v.id.as_str(), i).is_some() {
                return Err(Error::Manifest(format!("duplicate video id `{}`", v.id)));
            }
        }
        let mut seen = HashSet::new();
        let mut caption_video = Vec::with_capacity(manifest.captions.len());
        for c in &manifest.captions {
            if !seen.insert(c.id.as_str()) {
                return Err(Error::Manifest(format!("duplicate caption id `{}`", c.id)));
            }
            let v = video_index
                .get(c.video_id.as_str())
                .ok_or_else(|| Error::DanglingCaption {
                    caption: c.id.clone(),
                    video: c.video_id.clone(),
                })?;
            caption_video.push(*v);
        }
        for entries in [&manifest.modalities, &manifest.text_encoders] {
            let mut ids = HashSet::new();
            for e in entries.iter() {
                if !ids.insert(e.id.as_str()) {
                    return Err(Error::Manifest(format!("duplicate matrix id `{}`", e.id)));
                }
            }
        }
        if video_features.len() != manifest.modalities.len() || text_features.len() != manifest.text_encoders.len() {
            return Err(Error::Manifest("matrix count differs from manifest".into()));
        }
        let check = |e: &MatrixEntry, m: &DenseMatrix, rows: usize| -> Result<()> {
            if m.shape() != (rows, e.dim) {
                return Err(Error::ShapeMismatch {
                    file: e.file.clone(),
                    expected_rows: rows,
                    expected_cols: e.dim,
                    rows: m.rows(),
                    cols: m.cols(),
                });
            }
            if !m.is_finite() {
                return Err(Error::NonFiniteData(e.file.clone()));
            }
            Ok(())
        };
        for (e, m) in manifest.modalities.iter().zip(&video_features) {
            check(e, m, manifest.videos.len())?;
        }
        for (e, m) in manifest.text_encoders.iter().zip(&text_features) {
            check(e, m, manifest.captions.len())?;
        }
        Ok(Self {
            manifest,
            video_features,
            text_features,
            caption_video,
        })
    }

    /// Loads `manifest.json` and every matrix it declares.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.exists() {
            return Err(Error::MissingFile(manifest_path));
        }
        let manifest: Manifest =
            serde_json::from_slice(&fs::read(&manifest_path)?).map_err(|e| Error::Manifest(e.to_string()))?;
        let read = |entries: &[MatrixEntry]| -> Result<Vec<DenseMatrix>> {
            entries.iter().map(|e| io::read_features(&dir.join(&e.file))).collect()
        };
        let video_features = read(&manifest.modalities)?;
        let text_features = read(&manifest.text_encoders)?;
        Self::new(manifest, video_features, text_features)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        io::write_json(&dir.join(MANIFEST_FILE), &self.manifest)?;
        for (e, m) in self.manifest.modalities.iter().zip(&self.video_features) {
            io::write_features(&dir.join(&e.file), m)?;
        }
        for (e, m) in self.manifest.text_encoders.iter().zip(&self.text_features) {
            io::write_features(&dir.join(&e.file), m)?;
        }
        Ok(())
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn num_videos(&self) -> usize {
        self.manifest.videos.len()
    }

    pub fn num_captions(&self) -> usize {
        self.manifest.captions.len()
    }

    pub fn modality_specs(&self) -> Vec<ModalitySpec> {
        self.manifest
            .modalities
            .iter()
            .map(|e| ModalitySpec::new(e.id.clone(), e.dim))
            .collect()
    }

    pub fn text_encoder_ids(&self) -> Vec<&str> {
        self.manifest.text_encoders.iter().map(|e| e.id.as_str()).collect()
    }

    /// Caption embedding matrix for one text encoder.
    pub fn text_embeddings(&self, id: &str) -> Result<&DenseMatrix> {
        self.manifest
            .text_encoders
            .iter()
            .position(|e| e.id == id)
            .map(|i| &self.text_features[i])
            .ok_or_else(|| Error::UnknownTextEncoder(id.to_string()))
    }

    pub fn text_dim(&self, id: &str) -> Result<usize> {
        Ok(self.text_embeddings(id)?.cols())
    }

    pub fn video_id(&self, video: usize) -> &str {
        &self.manifest.videos[video].id
    }

    pub fn caption_id(&self, caption: usize) -> &str {
        &self.manifest.captions[caption].id
    }

    /// Index of the video a caption describes.
    pub fn caption_video(&self, caption: usize) -> usize {
        self.caption_video[caption]
    }

    pub fn split_videos(&self, split: Split) -> Vec<usize> {
        (0..self.num_videos())
            .filter(|&v| self.manifest.videos[v].split == split)
            .collect()
    }

    /// Captions whose video belongs to `split`, in manifest order.
    pub fn split_captions(&self, split: Split) -> Vec<usize> {
        (0..self.num_captions())
            .filter(|&c| self.manifest.videos[self.caption_video[c]].split == split)
            .collect()
    }

    /// All modalities for the given videos.
    pub fn video_batch(&self, videos: &[usize]) -> Result<VideoBatch> {
        VideoBatch::new(
            self.manifest
                .modalities
                .iter()
                .zip(&self.video_features)
                .map(|(e, m)| (e.id.clone(), m.select_rows(videos)))
                .collect(),
        )
    }

    pub fn caption_batch(&self, text_encoder: &str, captions: &[usize]) -> Result<DenseMatrix> {
        Ok(self.text_embeddings(text_encoder)?.select_rows(captions))
    }

    /// New store holding only the listed captions (kept in manifest order). Videos are untouched.
    pub fn retain_captions(&self, keep: &HashSet<usize>) -> Result<Self> {
        let idx: Vec<usize> = (0..self.num_captions()).filter(|c| keep.contains(c)).collect();
        let mut manifest = self.manifest.clone();
        manifest.captions = idx.iter().map(|&c| self.manifest.captions[c].clone()).collect();
        let text = self.text_features.iter().map(|m| m.select_rows(&idx)).collect();
        Self::new(manifest, self.video_features.clone(), text)
    }

    /// Caption indices for a list of caption ids; unknown ids are a data error.
    pub fn caption_indices(&self, ids: &[String]) -> Result<Vec<usize>> {
        let index: HashMap<&str, usize> = self
            .manifest
            .captions
            .iter()
            .enumerate()
            .map(|(i, c)| (c.id.as_str(), i))
            .collect();
        ids.iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::Manifest(format!("unknown caption id `{id}`")))
            })
            .collect()
    }
}

/// One training minibatch: caption `i` is paired with video `i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub captions: Vec<usize>,
    pub videos: Vec<usize>,
}

/// Per-epoch RNG: the seed selects the key, the epoch selects the stream.
pub fn epoch_rng(seed: u64, epoch: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch);
    rng
}

/// Shuffled minibatches over a split, at most one caption per video per batch.
///
/// Captions are shuffled per `(seed, epoch)` and packed greedily; a caption whose
/// video is already in the current batch is deferred to a later batch. The
/// batch size is capped at the number of distinct videos in the split, and the
/// trailing incomplete batch is dropped.
pub fn split_iter(store: &FeatureStore, split: Split, batch_size: usize, seed: u64, epoch: u64) -> Result<Vec<Batch>> {
    let mut captions = store.split_captions(split);
    if captions.is_empty() {
        return Err(Error::Empty("split_iter"));
    }
    let distinct = store.split_videos(split).len();
    let size = batch_size.min(distinct);
    if size < 2 {
        return Ok(Vec::new());
    }
    captions.shuffle(&mut epoch_rng(seed, epoch));
    let mut pending: VecDeque<usize> = captions.into();
    let mut batches = Vec::new();
    loop {
        let mut batch = Batch {
            captions: Vec::with_capacity(size),
            videos: Vec::with_capacity(size),
        };
        let mut used = HashSet::with_capacity(size);
        let mut deferred = Vec::new();
        while batch.captions.len() < size {
            let Some(c) = pending.pop_front() else { break };
            let v = store.caption_video(c);
            if used.insert(v) {
                batch.captions.push(c);
                batch.videos.push(v);
            } else {
                deferred.push(c);
            }
        }
        for c in deferred.into_iter().rev() {
            pending.push_front(c);
        }
        if batch.captions.len() < size {
            break;
        }
        batches.push(batch);
    }
    Ok(batches)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub caption_id: String,
    pub is_ambiguous: bool,
}

/// Hidden ground truth for synthetic corpora: which captions describe nothing specific.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct AmbiguityLedger {
    pub entries: Vec<LedgerEntry>,
}

impl AmbiguityLedger {
    pub fn ambiguous_ids(&self) -> HashSet<&str> {
        self.entries
            .iter()
            .filter(|e| e.is_ambiguous)
            .map(|e| e.caption_id.as_str())
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self {
            entries: io::read_jsonl(path)?,
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_jsonl(path, &self.entries)
    }
}

/// Parameters of the synthetic corpus generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_videos: usize,
    pub captions_per_video: usize,
    pub n_modalities: usize,
    pub n_text_encoders: usize,
    /// Per-text-encoder noise standard deviation; cycled when shorter than `n_text_encoders`.
    pub noise_profile: Vec<f64>,
    pub ambiguous_fraction: f64,
    pub latent_dim: usize,
    pub modality_dim: usize,
    pub text_dim: usize,
    /// Standard deviation of additive video feature noise.
    pub video_noise: f64,
    /// Standard deviation of the per-caption deviation from its video's latent.
    pub caption_jitter: f64,
    pub val_fraction: f64,
    pub test_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_videos: 200,
            captions_per_video: 5,
            n_modalities: 3,
            n_text_encoders: 3,
            noise_profile: vec![1.0, 0.7, 0.5],
            ambiguous_fraction: 0.0,
            latent_dim: 16,
            modality_dim: 8,
            text_dim: 16,
            video_noise: 0.3,
            caption_jitter: 0.5,
            val_fraction: 0.15,
            test_fraction: 0.15,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let counts = [
            ("n_videos", self.n_videos),
            ("captions_per_video", self.captions_per_video),
            ("n_modalities", self.n_modalities),
            ("n_text_encoders", self.n_text_encoders),
            ("latent_dim", self.latent_dim),
            ("modality_dim", self.modality_dim),
            ("text_dim", self.text_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidArgument(format!("{name} must be >= 1")));
        }
        let fractions = [
            ("ambiguous_fraction", self.ambiguous_fraction),
            ("val_fraction", self.val_fraction),
            ("test_fraction", self.test_fraction),
        ];
        if let Some((name, v)) = fractions.iter().find(|(_, v)| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidArgument(format!("{name} = {v} outside [0, 1]")));
        }
        if self.val_fraction + self.test_fraction >= 1.0 {
            return Err(Error::InvalidArgument(
                "val_fraction + test_fraction must be < 1".into(),
            ));
        }
        let scales = [
            ("video_noise", self.video_noise),
            ("caption_jitter", self.caption_jitter),
        ];
        if let Some((name, v)) = scales.iter().find(|(_, v)| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidArgument(format!("{name} = {v} must be >= 0")));
        }
        if self.noise_profile.is_empty() || self.noise_profile.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::InvalidArgument("noise_profile needs finite values >= 0".into()));
        }
        Ok(())
    }

    pub fn text_noise(&self, encoder: usize) -> f64 {
        self.noise_profile[encoder % self.noise_profile.len()]
    }
}

/// A generated store and its ambiguity ledger.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub store: FeatureStore,
    pub ledger: AmbiguityLedger,
}

impl SynthCorpus {
    pub fn write(&self, dir: &Path) -> Result<()> {
        self.store.write(dir)?;
        self.ledger.write(&dir.join(LEDGER_FILE))
    }
}

fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Vec<f64> {
    (0..rows * cols)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

fn apply(map: &[f64], rows: usize, z: &[f64]) -> Vec<f64> {
    let cols = z.len();
    (0..rows)
        .map(|r| map[r * cols..(r + 1) * cols].iter().zip(z).map(|(a, b)| a * b).sum())
        .collect()
}

/// Generates a corpus in which every video modality and every caption embedding
/// is a fixed random linear map of a shared latent plus Gaussian noise.
///
/// Each video draws a latent `z`; each caption uses `z` plus jitter. Ambiguous
/// captions replace their latent with the corpus-mean latent, so they carry no
/// information about their video beyond noise.
pub fn synth_corpus(cfg: &SynthConfig) -> Result<SynthCorpus> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let latent = cfg.latent_dim;
    let inv_sqrt = 1.0 / (latent as f64).sqrt();

    let video_maps: Vec<Vec<f64>> = (0..cfg.n_modalities)
        .map(|_| gaussian_matrix(&mut rng, cfg.modality_dim, latent, inv_sqrt))
        .collect();
    let text_maps: Vec<Vec<f64>> = (0..cfg.n_text_encoders)
        .map(|_| gaussian_matrix(&mut rng, cfg.text_dim, latent, inv_sqrt))
        .collect();

    let latents: Vec<Vec<f64>> = (0..cfg.n_videos)
        .map(|_| gaussian_matrix(&mut rng, 1, latent, 1.0))
        .collect();
    let mut mean_latent = vec![0.0; latent];
    for z in &latents {
        for (m, v) in mean_latent.iter_mut().zip(z) {
            *m += v / cfg.n_videos as f64;
        }
    }

    let n_val = (cfg.val_fraction * cfg.n_videos as f64).round() as usize;
    let n_test = (cfg.test_fraction * cfg.n_videos as f64).round() as usize;
    let mut order: Vec<usize> = (0..cfg.n_videos).collect();
    order.shuffle(&mut rng);
    let mut splits = vec![Split::Train; cfg.n_videos];
    for (pos, &v) in order.iter().enumerate() {
        if pos < n_test {
            splits[v] = Split::Test;
        } else if pos < n_test + n_val {
            splits[v] = Split::Val;
        }
    }

    let width = (cfg.n_videos.max(1) - 1).to_string().len().max(4);
    let videos: Vec<VideoEntry> = (0..cfg.n_videos)
        .map(|i| VideoEntry {
            id: format!("video{i:0width$}"),
            split: splits[i],
        })
        .collect();

    let mut video_data: Vec<Vec<f32>> = vec![Vec::with_capacity(cfg.n_videos * cfg.modality_dim); cfg.n_modalities];
    for z in &latents {
        for (m, map) in video_maps.iter().enumerate() {
            for x in apply(map, cfg.modality_dim, z) {
                let noise: f64 = rng.sample(StandardNormal);
                video_data[m].push((x + cfg.video_noise * noise) as f32);
            }
        }
    }

    let n_captions = cfg.n_videos * cfg.captions_per_video;
    let n_ambiguous = (cfg.ambiguous_fraction * n_captions as f64).round() as usize;
    let mut caption_order: Vec<usize> = (0..n_captions).collect();
    caption_order.shuffle(&mut rng);
    let mut ambiguous = vec![false; n_captions];
    for &c in caption_order.iter().take(n_ambiguous) {
        ambiguous[c] = true;
    }

    let mut captions = Vec::with_capacity(n_captions);
    let mut ledger = Vec::with_capacity(n_captions);
    let mut text_data: Vec<Vec<f32>> = vec![Vec::with_capacity(n_captions * cfg.text_dim); cfg.n_text_encoders];
    for (c, &is_ambiguous) in ambiguous.iter().enumerate() {
        let v = c / cfg.captions_per_video;
        let id = format!("{}-{}", videos[v].id, c % cfg.captions_per_video);
        let jitter = gaussian_matrix(&mut rng, 1, latent, cfg.caption_jitter);
        let z: Vec<f64> = if is_ambiguous {
            mean_latent.clone()
        } else {
            latents[v].iter().zip(&jitter).map(|(a, b)| a + b).collect()
        };
        for (k, map) in text_maps.iter().enumerate() {
            let sigma = cfg.text_noise(k);
            for y in apply(map, cfg.text_dim, &z) {
                let noise: f64 = rng.sample(StandardNormal);
                text_data[k].push((y + sigma * noise) as f32);
            }
        }
        ledger.push(LedgerEntry {
            caption_id: id.clone(),
            is_ambiguous,
        });
        captions.push(CaptionEntry {
            id,
            video_id: videos[v].id.clone(),
        });
    }

    let manifest = Manifest {
        name: format!("synth-{}", cfg.seed),
        modalities: (0..cfg.n_modalities)
            .map(|m| MatrixEntry {
                id: format!("mod{m}"),
                dim: cfg.modality_dim,
                file: format!("video_mod{m}.ttfs"),
            })
            .collect(),
        text_encoders: (0..cfg.n_text_encoders)
            .map(|k| MatrixEntry {
                id: format!("te{k}"),
                dim: cfg.text_dim,
                file: format!("text_te{k}.ttfs"),
            })
            .collect(),
        videos,
        captions,
    };
    let video_features = video_data
        .into_iter()
        .map(|d| DenseMatrix::from_vec(cfg.n_videos, cfg.modality_dim, d))
        .collect::<Result<Vec<_>>>()?;
    let text_features = text_data
        .into_iter()
        .map(|d| DenseMatrix::from_vec(n_captions, cfg.text_dim, d))
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthCorpus {
        store: FeatureStore::new(manifest, video_features, text_features)?,
        ledger: AmbiguityLedger { entries: ledger },
    })
}
