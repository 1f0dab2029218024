//! Caption filtering by teacher rank: captions whose own video the teacher
//! ensemble ranks poorly are treated as ambiguous and dropped from training.

use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{AmbiguityLedger, FeatureStore, Split};
use crate::error::{Error, Result};
use crate::io;
use crate::metrics::rank_of_truth;
use crate::trainer::{aggregate, Aggregation, TeacherPool};

pub const FILTERED_CAPTIONS_FILE: &str = "captions.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRank {
    pub caption_id: String,
    pub video_id: String,
    pub rank: usize,
}

/// Per-caption ranks of the ground-truth video, ordered by caption id.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RankTable {
    pub split: Option<Split>,
    pub rows: Vec<CaptionRank>,
}

/// Ranks each caption of `split` against every video of the same split using
/// the mean of the teachers' score grids.
pub fn score_caption_ranks(teachers: &TeacherPool, store: &FeatureStore, split: Split) -> Result<RankTable> {
    if teachers.is_empty() {
        return Err(Error::Config("denoising needs at least one teacher".into()));
    }
    let videos = store.split_videos(split);
    let captions = store.split_captions(split);
    if videos.is_empty() || captions.is_empty() {
        return Err(Error::Empty("score_caption_ranks"));
    }
    let mats = teachers.similarity_matrices(store, &store.video_batch(&videos)?, &captions)?;
    let scores = aggregate(&mats, Aggregation::Mean)?;
    let row_of: HashMap<usize, usize> = videos.iter().enumerate().map(|(r, &v)| (v, r)).collect();
    let mut column = vec![0.0; videos.len()];
    let mut rows = Vec::with_capacity(captions.len());
    for (j, &c) in captions.iter().enumerate() {
        for (i, slot) in column.iter_mut().enumerate() {
            *slot = scores.get(i, j);
        }
        let video = store.caption_video(c);
        rows.push(CaptionRank {
            caption_id: store.caption_id(c).to_string(),
            video_id: store.video_id(video).to_string(),
            rank: rank_of_truth(&column, row_of[&video])?,
        });
    }
    rows.sort_by(|a, b| a.caption_id.cmp(&b.caption_id));
    Ok(RankTable {
        split: Some(split),
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilteredCaption {
    pub video_id: String,
    pub caption_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterSummary {
    pub threshold: usize,
    pub kept: usize,
    pub dropped: usize,
    pub drop_fraction: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub detection: Option<DetectionScore>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterResult {
    pub kept: Vec<FilteredCaption>,
    pub dropped: Vec<FilteredCaption>,
    pub summary: FilterSummary,
}

impl FilterResult {
    pub fn kept_ids(&self) -> Vec<String> {
        self.kept.iter().map(|c| c.caption_id.clone()).collect()
    }

    pub fn dropped_ids(&self) -> HashSet<&str> {
        self.dropped.iter().map(|c| c.caption_id.as_str()).collect()
    }

    /// Writes the kept captions as JSON lines and the summary as JSON into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        io::write_jsonl(&dir.join(FILTERED_CAPTIONS_FILE), &self.kept)?;
        io::write_json(&dir.join(SUMMARY_FILE), &self.summary)
    }
}

/// Keeps captions ranked at or above `threshold`. A video whose captions would
/// all be dropped keeps its best-ranked one (lowest caption id on ties).
pub fn filter_captions(table: &RankTable, threshold: usize) -> Result<FilterResult> {
    if threshold == 0 {
        return Err(Error::Config("rank threshold must be >= 1".into()));
    }
    let mut best: HashMap<&str, &CaptionRank> = HashMap::new();
    for row in &table.rows {
        let entry = best.entry(row.video_id.as_str()).or_insert(row);
        if row.rank < entry.rank {
            *entry = row;
        }
    }
    let videos_with_keep: HashSet<&str> = table
        .rows
        .iter()
        .filter(|r| r.rank <= threshold)
        .map(|r| r.video_id.as_str())
        .collect();
    let (mut kept, mut dropped) = (Vec::new(), Vec::new());
    for row in &table.rows {
        let rescued =
            !videos_with_keep.contains(row.video_id.as_str()) && std::ptr::eq(best[row.video_id.as_str()], row);
        let out = FilteredCaption {
            video_id: row.video_id.clone(),
            caption_id: row.caption_id.clone(),
        };
        if row.rank <= threshold || rescued {
            kept.push(out);
        } else {
            dropped.push(out);
        }
    }
    let total = table.rows.len();
    let summary = FilterSummary {
        threshold,
        kept: kept.len(),
        dropped: dropped.len(),
        drop_fraction: if total == 0 {
            0.0
        } else {
            dropped.len() as f64 / total as f64
        },
        detection: None,
    };
    Ok(FilterResult { kept, dropped, summary })
}

/// How well the dropped set matches the ledgered ambiguous captions of the ranked split.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionScore {
    pub precision: f64,
    pub recall: f64,
    pub true_positives: usize,
    pub flagged: usize,
    pub ambiguous: usize,
}

/// Precision is 1 when nothing is dropped; recall is 1 when nothing is ambiguous.
pub fn detection_score(table: &RankTable, result: &FilterResult, ledger: &AmbiguityLedger) -> DetectionScore {
    let in_table: HashSet<&str> = table.rows.iter().map(|r| r.caption_id.as_str()).collect();
    let ambiguous: HashSet<&str> = ledger
        .ambiguous_ids()
        .into_iter()
        .filter(|id| in_table.contains(id))
        .collect();
    let dropped = result.dropped_ids();
    let tp = dropped.intersection(&ambiguous).count();
    DetectionScore {
        precision: if dropped.is_empty() {
            1.0
        } else {
            tp as f64 / dropped.len() as f64
        },
        recall: if ambiguous.is_empty() {
            1.0
        } else {
            tp as f64 / ambiguous.len() as f64
        },
        true_positives: tp,
        flagged: dropped.len(),
        ambiguous: ambiguous.len(),
    }
}

/// Store with the dropped captions removed; captions outside the ranked split are untouched.
pub fn apply_filter(store: &FeatureStore, result: &FilterResult) -> Result<FeatureStore> {
    let dropped = result.dropped_ids();
    let keep: HashSet<usize> = (0..store.num_captions())
        .filter(|&c| !dropped.contains(store.caption_id(c)))
        .collect();
    store.retain_captions(&keep)
}

/// Store restricted to a kept-caption list (as written by [`FilterResult::write`])
/// for `split`; captions of other splits are untouched.
pub fn apply_caption_list(store: &FeatureStore, kept: &[FilteredCaption], split: Split) -> Result<FeatureStore> {
    let listed: HashSet<usize> = store
        .caption_indices(&kept.iter().map(|c| c.caption_id.clone()).collect::<Vec<_>>())?
        .into_iter()
        .collect();
    let in_split: HashSet<usize> = store.split_captions(split).into_iter().collect();
    let keep: HashSet<usize> = (0..store.num_captions())
        .filter(|c| !in_split.contains(c) || listed.contains(c))
        .collect();
    store.retain_captions(&keep)
}

/// Picks the threshold whose retrained model scores best on validation.
/// Ties go to the larger threshold (fewer drops).
pub fn tune_threshold<F>(table: &RankTable, candidates: &[usize], mut val_score: F) -> Result<(usize, f64)>
where
    F: FnMut(&FilterResult) -> Result<f64>,
{
    let mut sorted = candidates.to_vec();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    sorted.dedup();
    let mut best: Option<(usize, f64)> = None;
    for r in sorted {
        let score = val_score(&filter_captions(table, r)?)?;
        if best.is_none_or(|(_, b)| score > b) {
            best = Some((r, score));
        }
    }
    best.ok_or(Error::Empty("tune_threshold"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_corpus, SynthConfig};
    use crate::encoder::{DualEncoderParams, EncoderSpec, ModalitySpec};
    use crate::metrics::{ranks_from_scores, Task};
    use crate::numerics::DenseMatrix;
    use crate::trainer::{train_teacher, TrainConfig};
    use proptest::prelude::*;

    fn row(caption: &str, video: &str, rank: usize) -> CaptionRank {
        CaptionRank {
            caption_id: caption.into(),
            video_id: video.into(),
            rank,
        }
    }

    fn table(rows: Vec<CaptionRank>) -> RankTable {
        RankTable { split: None, rows }
    }

    #[test]
    fn filter_examples() {
        let t = table(vec![row("a", "v0", 1), row("b", "v1", 50), row("c", "v2", 41)]);
        let f = filter_captions(&t, 40).unwrap();
        // v1 and v2 each keep their only caption through the guard
        assert_eq!(f.summary.kept, 3);

        let t = table(vec![row("a", "v0", 1), row("b", "v0", 50), row("c", "v0", 41)]);
        let f = filter_captions(&t, 40).unwrap();
        assert_eq!(f.kept_ids(), vec!["a"]);
        assert_eq!((f.summary.dropped, f.summary.drop_fraction), (2, 2.0 / 3.0));

        let none = filter_captions(&t, 1000).unwrap();
        assert_eq!(none.summary.dropped, 0);
        assert!(matches!(filter_captions(&t, 0), Err(Error::Config(_))));
    }

    #[test]
    fn guard_keeps_best_caption() {
        let t = table(vec![
            row("a", "v0", 9),
            row("b", "v0", 7),
            row("c", "v0", 7),
            row("d", "v1", 1),
        ]);
        let f = filter_captions(&t, 2).unwrap();
        assert_eq!(f.kept_ids(), vec!["b", "d"]);
    }

    #[test]
    fn detection_against_ledger() {
        let t = table(vec![
            row("a", "v0", 1),
            row("b", "v0", 50),
            row("c", "v0", 41),
            row("d", "v0", 2),
        ]);
        let f = filter_captions(&t, 40).unwrap();
        let ledger = AmbiguityLedger {
            entries: vec![
                crate::data::LedgerEntry {
                    caption_id: "b".into(),
                    is_ambiguous: true,
                },
                crate::data::LedgerEntry {
                    caption_id: "d".into(),
                    is_ambiguous: true,
                },
                crate::data::LedgerEntry {
                    caption_id: "z".into(),
                    is_ambiguous: true,
                },
            ],
        };
        let d = detection_score(&t, &f, &ledger);
        assert_eq!((d.true_positives, d.flagged, d.ambiguous), (1, 2, 2));
        assert_eq!((d.precision, d.recall), (0.5, 0.5));
    }

    fn fixed_teacher(te: &str) -> DualEncoderParams {
        // identity maps: video features and caption embeddings are compared directly
        let spec = EncoderSpec {
            modalities: vec![ModalitySpec::new("mod0", 2)],
            text_dim: 2,
            shared_dim: 2,
            text_encoder_id: te.into(),
        };
        let eye = DenseMatrix::<f32>::identity(2);
        let zero = DenseMatrix::zeros(1, 2);
        DualEncoderParams::from_blocks(
            spec,
            &[
                eye.clone(),
                zero.clone(),
                eye,
                zero,
                DenseMatrix::zeros(1, 2),
                DenseMatrix::zeros(1, 1),
            ],
        )
        .unwrap()
    }

    fn tiny_store(text: [[f32; 2]; 3], other: [[f32; 2]; 3]) -> FeatureStore {
        use crate::data::{CaptionEntry, Manifest, MatrixEntry, VideoEntry};
        let manifest = Manifest {
            name: "tiny".into(),
            modalities: vec![MatrixEntry {
                id: "mod0".into(),
                dim: 2,
                file: "v.ttfs".into(),
            }],
            text_encoders: vec![
                MatrixEntry {
                    id: "te0".into(),
                    dim: 2,
                    file: "t0.ttfs".into(),
                },
                MatrixEntry {
                    id: "te1".into(),
                    dim: 2,
                    file: "t1.ttfs".into(),
                },
            ],
            videos: (0..3)
                .map(|i| VideoEntry {
                    id: format!("v{i}"),
                    split: Split::Train,
                })
                .collect(),
            captions: (0..3)
                .map(|i| CaptionEntry {
                    id: format!("c{i}"),
                    video_id: format!("v{i}"),
                })
                .collect(),
        };
        let video = DenseMatrix::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]]).unwrap();
        let t0 = DenseMatrix::from_rows(&text.map(|r| r.to_vec())).unwrap();
        let t1 = DenseMatrix::from_rows(&other.map(|r| r.to_vec())).unwrap();
        FeatureStore::new(manifest, vec![video], vec![t0, t1]).unwrap()
    }

    #[test]
    fn strict_maximum_ranks_first_and_mean_drives_ranks() {
        let good = [[1.0, 0.0], [0.0, 1.0], [-1.0, 0.0]];
        let flipped = [[-1.0, 0.0], [0.0, -1.0], [1.0, 0.0]];
        let store = tiny_store(good, flipped);
        let t0 = fixed_teacher("te0");
        let t1 = fixed_teacher("te1");

        let single = score_caption_ranks(&TeacherPool::new(vec![t0.clone()]).unwrap(), &store, Split::Train).unwrap();
        assert!(single.rows.iter().all(|r| r.rank == 1));
        let scores = t0
            .similarity_matrix(
                &store.video_batch(&[0, 1, 2]).unwrap(),
                &store.caption_batch("te0", &[0, 1, 2]).unwrap(),
            )
            .unwrap();
        let brute: Vec<usize> = ranks_from_scores(&scores, &[0, 1, 2], Task::T2v).unwrap();
        assert_eq!(single.rows.iter().map(|r| r.rank).collect::<Vec<_>>(), brute);

        // t1 alone ranks every truth last; the mean grid is all zero, so ties break by index
        let alone = score_caption_ranks(&TeacherPool::new(vec![t1.clone()]).unwrap(), &store, Split::Train).unwrap();
        assert_eq!(alone.rows.iter().map(|r| r.rank).collect::<Vec<_>>(), vec![3, 3, 3]);
        let both = score_caption_ranks(&TeacherPool::new(vec![t0, t1]).unwrap(), &store, Split::Train).unwrap();
        assert_eq!(both.rows.iter().map(|r| r.rank).collect::<Vec<_>>(), vec![1, 2, 3]);
    }

    #[test]
    fn ambiguous_captions_rank_worse() {
        let corpus = synth_corpus(&SynthConfig {
            seed: 3,
            n_videos: 80,
            captions_per_video: 3,
            ambiguous_fraction: 0.2,
            latent_dim: 8,
            modality_dim: 6,
            text_dim: 8,
            ..SynthConfig::default()
        })
        .unwrap();
        let cfg = TrainConfig {
            batch_size: 16,
            epochs: 8,
            shared_dim: 8,
            learning_rate: 0.01,
            ..TrainConfig::default()
        };
        let teacher = train_teacher(&corpus.store, &cfg, "te2").unwrap().model;
        let t = score_caption_ranks(&TeacherPool::new(vec![teacher]).unwrap(), &corpus.store, Split::Train).unwrap();
        let amb = corpus.ledger.ambiguous_ids();
        let mean = |flag: bool| {
            let r: Vec<f64> = t
                .rows
                .iter()
                .filter(|r| amb.contains(r.caption_id.as_str()) == flag)
                .map(|r| r.rank as f64)
                .collect();
            r.iter().sum::<f64>() / r.len() as f64
        };
        assert!(mean(true) > 2.0 * mean(false), "{} vs {}", mean(true), mean(false));

        let f = filter_captions(&t, 5).unwrap();
        let filtered = apply_filter(&corpus.store, &f).unwrap();
        assert_eq!(filtered.num_captions(), corpus.store.num_captions() - f.summary.dropped);
        assert_eq!(
            filtered.split_videos(Split::Train),
            corpus.store.split_videos(Split::Train)
        );
        let via_list = apply_caption_list(&corpus.store, &f.kept, Split::Train).unwrap();
        assert_eq!(via_list.num_captions(), filtered.num_captions());
        assert!(matches!(
            score_caption_ranks(&TeacherPool::new(vec![]).unwrap(), &corpus.store, Split::Train),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn tune_prefers_larger_threshold_on_ties() {
        let t = table(vec![row("a", "v0", 1), row("b", "v0", 5)]);
        let (r, _) = tune_threshold(&t, &[2, 10, 3], |_| Ok(1.0)).unwrap();
        assert_eq!(r, 10);
        let (r, s) = tune_threshold(&t, &[2, 10], |f| Ok(f.summary.dropped as f64)).unwrap();
        assert_eq!((r, s), (2, 1.0));
        assert!(tune_threshold(&t, &[], |_| Ok(0.0)).is_err());
    }

    #[test]
    fn write_outputs() {
        let dir = tempfile::tempdir().unwrap();
        let t = table(vec![row("a", "v0", 1), row("b", "v0", 50)]);
        let f = filter_captions(&t, 40).unwrap();
        f.write(dir.path()).unwrap();
        let back: Vec<FilteredCaption> = io::read_jsonl(&dir.path().join(FILTERED_CAPTIONS_FILE)).unwrap();
        assert_eq!(back, f.kept);
        let summary: serde_json::Value = io::read_json(&dir.path().join(SUMMARY_FILE)).unwrap();
        for key in ["threshold", "kept", "dropped", "drop_fraction"] {
            assert!(summary.get(key).is_some(), "{key}");
        }
    }

    proptest! {
        #[test]
        fn filtering_is_monotone_and_keeps_every_video(
            ranks in prop::collection::vec((0usize..6, 1usize..60), 1..40),
            lo in 1usize..60,
            step in 0usize..30,
        ) {
            let t = table(ranks.iter().enumerate().map(|(i, &(v, r))| row(&format!("c{i:03}"), &format!("v{v}"), r)).collect());
            let a = filter_captions(&t, lo).unwrap();
            let b = filter_captions(&t, lo + step).unwrap();
            let kept_b: HashSet<String> = b.kept_ids().into_iter().collect();
            for id in a.kept_ids() {
                prop_assert!(kept_b.contains(&id));
            }
            let videos: HashSet<&str> = t.rows.iter().map(|r| r.video_id.as_str()).collect();
            let kept_videos: HashSet<&str> = a.kept.iter().map(|c| c.video_id.as_str()).collect();
            prop_assert_eq!(videos, kept_videos);
            prop_assert_eq!(a.summary.kept + a.summary.dropped, t.rows.len());
        }
    }
}
