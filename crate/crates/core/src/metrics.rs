//! Retrieval metrics: recall at K, median rank and the R@1/R@5/R@10 geometric mean.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{FeatureStore, Split};
use crate::encoder::DualEncoderParams;
use crate::error::{Error, Result};
use crate::numerics::SimilarityMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Each caption queries the video pool.
    T2v,
    /// Each video queries the caption pool.
    V2t,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::T2v => "t2v",
            Task::V2t => "v2t",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "t2v" => Ok(Task::T2v),
            "v2t" => Ok(Task::V2t),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

/// Recall values are percentages in `[0, 100]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: Task,
    pub r1: f64,
    pub r5: f64,
    pub r10: f64,
    pub r50: f64,
    pub mdr: usize,
    pub geomean: f64,
}

/// 1-based rank of `truth` when candidates are sorted by descending score,
/// ties broken by ascending candidate index.
pub fn rank_of_truth(scores: &[f64], truth: usize) -> Result<usize> {
    let &target = scores
        .get(truth)
        .ok_or_else(|| Error::InvalidArgument(format!("truth index {truth} out of {}", scores.len())))?;
    let ahead = scores
        .iter()
        .enumerate()
        .filter(|&(j, &s)| s > target || (s == target && j < truth))
        .count();
    Ok(ahead + 1)
}

pub fn geometric_mean(r1: f64, r5: f64, r10: f64) -> Result<f64> {
    if [r1, r5, r10].iter().any(|v| !(*v >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "negative recall in ({r1}, {r5}, {r10})"
        )));
    }
    Ok((r1 * r5 * r10).cbrt())
}

/// Summarizes per-query ranks. The median of an even count is the lower middle value.
pub fn report_from_ranks(task: Task, ranks: &[usize]) -> Result<MetricsReport> {
    if ranks.is_empty() {
        return Err(Error::Empty("report_from_ranks"));
    }
    let recall = |k: usize| 100.0 * ranks.iter().filter(|&&r| r <= k).count() as f64 / ranks.len() as f64;
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    let (r1, r5, r10) = (recall(1), recall(5), recall(10));
    Ok(MetricsReport {
        task,
        r1,
        r5,
        r10,
        r50: recall(50),
        mdr: sorted[(sorted.len() - 1) / 2],
        geomean: geometric_mean(r1, r5, r10)?,
    })
}

/// Ranks from a `videos x captions` score grid.
///
/// `caption_video[j]` is the row of caption `j`'s ground-truth video. For v2t a
/// video's rank is the best rank among its own captions.
pub fn ranks_from_scores(scores: &SimilarityMatrix, caption_video: &[usize], task: Task) -> Result<Vec<usize>> {
    let (n_v, n_c) = scores.shape();
    if n_v == 0 || n_c == 0 {
        return Err(Error::Empty("ranks_from_scores"));
    }
    if caption_video.len() != n_c || caption_video.iter().any(|&v| v >= n_v) {
        return Err(Error::dims(
            "ranks_from_scores",
            "caption-to-video map does not fit the score grid",
        ));
    }
    match task {
        Task::T2v => {
            let mut column = vec![0.0; n_v];
            (0..n_c)
                .map(|j| {
                    for (i, c) in column.iter_mut().enumerate() {
                        *c = scores.get(i, j);
                    }
                    rank_of_truth(&column, caption_video[j])
                })
                .collect()
        }
        Task::V2t => {
            let mut best = vec![usize::MAX; n_v];
            for i in 0..n_v {
                let row = scores.row(i);
                for (j, &v) in caption_video.iter().enumerate() {
                    if v == i {
                        best[i] = best[i].min(rank_of_truth(row, j)?);
                    }
                }
            }
            if best.contains(&usize::MAX) {
                return Err(Error::InvalidArgument(
                    "v2t needs at least one caption per video".into(),
                ));
            }
            Ok(best)
        }
    }
}

/// Full-split evaluation: every query against the entire candidate pool of the split.
pub fn evaluate(model: &DualEncoderParams, store: &FeatureStore, split: Split, task: Task) -> Result<MetricsReport> {
    let videos = store.split_videos(split);
    let captions = store.split_captions(split);
    if videos.is_empty() || captions.is_empty() {
        return Err(Error::Empty("evaluate"));
    }
    let position: std::collections::HashMap<usize, usize> =
        videos.iter().enumerate().map(|(row, &v)| (v, row)).collect();
    let caption_video: Vec<usize> = captions.iter().map(|&c| position[&store.caption_video(c)]).collect();
    let scores = model.similarity_matrix(
        &store.video_batch(&videos)?,
        &store.caption_batch(model.text_encoder_id(), &captions)?,
    )?;
    report_from_ranks(task, &ranks_from_scores(&scores, &caption_video, task)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("MeanStd::of"));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Ok(Self { mean, std: var.sqrt() })
    }
}

impl fmt::Display for MeanStd {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.1}±{:.1}", self.mean, self.std)
    }
}

/// Per-metric mean and standard deviation over seeded runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub task: Task,
    pub seeds: Vec<u64>,
    pub r1: MeanStd,
    pub r5: MeanStd,
    pub r10: MeanStd,
    pub r50: MeanStd,
    pub mdr: MeanStd,
    pub geomean: MeanStd,
}

impl SeedSummary {
    pub fn from_reports(seeds: &[u64], reports: &[MetricsReport]) -> Result<Self> {
        let first = reports.first().ok_or(Error::Empty("SeedSummary::from_reports"))?;
        if reports.iter().any(|r| r.task != first.task) || seeds.len() != reports.len() {
            return Err(Error::InvalidArgument(
                "reports must share one task, one per seed".into(),
            ));
        }
        let col = |f: fn(&MetricsReport) -> f64| MeanStd::of(&reports.iter().map(f).collect::<Vec<_>>());
        Ok(Self {
            task: first.task,
            seeds: seeds.to_vec(),
            r1: col(|r| r.r1)?,
            r5: col(|r| r.r5)?,
            r10: col(|r| r.r10)?,
            r50: col(|r| r.r50)?,
            mdr: col(|r| r.mdr as f64)?,
            geomean: col(|r| r.geomean)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::DenseMatrix;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn sort_rank(scores: &[f64], truth: usize) -> usize {
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
        order.iter().position(|&j| j == truth).unwrap() + 1
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank_of_truth(&[0.9, 0.1], 0).unwrap(), 1);
        assert_eq!(rank_of_truth(&[0.3; 5], 2).unwrap(), 3);
        assert!(rank_of_truth(&[0.3; 5], 5).is_err());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let scores: Vec<f64> = (0..10).map(|_| (rng.gen_range(0..4) as f64) / 4.0).collect();
        for t in 0..10 {
            assert_eq!(rank_of_truth(&scores, t).unwrap(), sort_rank(&scores, t));
        }
    }

    #[test]
    fn geomean_examples() {
        assert!((geometric_mean(100.0, 100.0, 100.0).unwrap() - 100.0).abs() < 1e-12);
        assert_eq!(geometric_mean(0.0, 50.0, 80.0).unwrap(), 0.0);
        assert!((geometric_mean(11.1, 30.7, 42.9).unwrap() - 24.4).abs() < 0.1);
        assert!(geometric_mean(-1.0, 1.0, 1.0).is_err());
    }

    #[test]
    fn identity_scores_are_perfect() {
        let s = DenseMatrix::<f64>::identity(4);
        for task in [Task::T2v, Task::V2t] {
            let r = report_from_ranks(task, &ranks_from_scores(&s, &[0, 1, 2, 3], task).unwrap()).unwrap();
            assert_eq!((r.r1, r.mdr, r.geomean), (100.0, 1, 100.0));
        }
    }

    #[test]
    fn even_median_takes_lower_middle() {
        let r = report_from_ranks(Task::T2v, &[1, 9, 3, 20]).unwrap();
        assert_eq!(r.mdr, 3);
        assert_eq!(r.r5, 50.0);
        assert!(report_from_ranks(Task::T2v, &[]).is_err());
    }

    #[test]
    fn v2t_uses_best_caption() {
        // 2 videos, 3 captions; video 1 owns captions 1 and 2
        let s = DenseMatrix::from_rows(&[vec![0.9, 0.8, 0.1], vec![0.5, 0.2, 0.7]]).unwrap();
        let ranks = ranks_from_scores(&s, &[0, 1, 1], Task::V2t).unwrap();
        assert_eq!(ranks, vec![1, 1]);
        let t2v = ranks_from_scores(&s, &[0, 1, 1], Task::T2v).unwrap();
        assert_eq!(t2v, vec![1, 2, 1]);
    }

    #[test]
    fn seed_summary_examples() {
        let rep = |g: f64| MetricsReport {
            task: Task::T2v,
            r1: g,
            r5: g,
            r10: g,
            r50: g,
            mdr: 2,
            geomean: g,
        };
        let s = SeedSummary::from_reports(&[1, 2], &[rep(1.0), rep(3.0)]).unwrap();
        assert_eq!(s.geomean, MeanStd { mean: 2.0, std: 1.0 });
        assert_eq!(s.mdr.std, 0.0);
        assert!(SeedSummary::from_reports(&[], &[]).is_err());
    }

    #[test]
    fn report_json_keys() {
        let r = report_from_ranks(Task::V2t, &[1, 2]).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        let mut keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        keys.sort();
        assert_eq!(keys, ["geomean", "mdr", "r1", "r10", "r5", "r50", "task"]);
        assert_eq!(v["task"], "v2t");
    }

    proptest! {
        #[test]
        fn recall_is_monotone_and_geomean_bounded(ranks in proptest::collection::vec(1usize..80, 1..40)) {
            let r = report_from_ranks(Task::T2v, &ranks).unwrap();
            prop_assert!(r.r1 <= r.r5 && r.r5 <= r.r10 && r.r10 <= r.r50);
            let lo = r.r1.min(r.r5).min(r.r10);
            let hi = r.r1.max(r.r5).max(r.r10);
            prop_assert!(r.geomean >= lo - 1e-9 && r.geomean <= hi + 1e-9);
            if r.r1 == 100.0 {
                prop_assert_eq!(r.mdr, 1);
            }
        }

        #[test]
        fn metrics_ignore_monotone_transforms(seed in any::<u64>(), n_v in 1usize..8, per in 1usize..4) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n_c = n_v * per;
            let data: Vec<f64> = (0..n_v * n_c).map(|_| (rng.gen_range(0..6) as f64) / 3.0 - 1.0).collect();
            let s = DenseMatrix::from_vec(n_v, n_c, data).unwrap();
            let t = s.map(|v| (3.0 * v).exp() + 2.0).unwrap();
            let cv: Vec<usize> = (0..n_c).map(|j| j / per).collect();
            for task in [Task::T2v, Task::V2t] {
                prop_assert_eq!(
                    report_from_ranks(task, &ranks_from_scores(&s, &cv, task).unwrap()).unwrap(),
                    report_from_ranks(task, &ranks_from_scores(&t, &cv, task).unwrap()).unwrap()
                );
            }
        }
    }
}
