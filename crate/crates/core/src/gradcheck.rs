//! Analytic-versus-finite-difference gradient suite over every loss, every
//! encoder parameter block, and the full training objective.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{synth_corpus, FeatureStore, SynthConfig};
use crate::encoder::{DualEncoderParams, EncoderSpec, JointEmbeddings, ModalitySpec, Upstream, VideoBatch};
use crate::error::{Error, Result};
use crate::losses::{
    composite_loss, cross_modal_distances, distance_grad_to_scores, distill_loss, embed_regress_loss, pdist_loss,
    rank_k_distill_loss, ranking_loss, relational_intra_loss, top_k_mask, PointLoss, DEFAULT_MARGIN,
};
use crate::numerics::{finite_diff_grad, relative_error_norm, DenseMatrix, SimilarityMatrix, GRAD_CHECK_FLOOR};
use crate::trainer::{aggregate, batch_loss, Aggregation, DistillVariant, TeacherPool, TrainConfig};

pub const GRAD_CHECK_TOLERANCE: f64 = 1e-4;
pub const DEFAULT_TRIALS: usize = 20;
/// Central-difference step. Smaller than the library default so that truncation
/// error stays well below tolerance even for blocks with tiny gradients.
pub const GRAD_CHECK_STEP: f64 = 1e-4;
/// Instances whose piecewise arguments sit within this distance of a breakpoint
/// are resampled. A stencil of half-width `GRAD_CHECK_STEP` cannot cross a
/// breakpoint farther away than that along a unit-slope argument.
pub const KINK_RADIUS: f64 = 1e-4;
/// Same, for arguments that move by more than one step per coordinate
/// (normalized distances, or scores driven through the encoder).
pub const DERIVED_KINK_RADIUS: f64 = 1e-3;
const MIN_PROJECTION_NORM: f64 = 0.3;
const MIN_PAIR_DISTANCE: f64 = 0.3;
const MAX_RESAMPLES: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheckConfig {
    pub seed: u64,
    pub trials: usize,
    /// Multiplies every analytic gradient; 1.0 leaves them untouched.
    pub fault_scale: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: DEFAULT_TRIALS,
            fault_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub name: String,
    pub instances: usize,
    pub resampled: usize,
    pub max_rel_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub seed: u64,
    pub trials: usize,
    pub tolerance: f64,
    pub max_rel_error: f64,
    pub passed: bool,
    pub cases: Vec<CaseResult>,
}

struct Cases {
    results: BTreeMap<String, CaseResult>,
    fault: f64,
}

impl Cases {
    fn record(&mut self, name: &str, analytic: &[f64], numeric: &[f64]) {
        let scaled: Vec<f64> = analytic.iter().map(|g| g * self.fault).collect();
        let err = relative_error_norm(&scaled, numeric, GRAD_CHECK_FLOOR);
        let entry = self.results.entry(name.to_string()).or_insert_with(|| CaseResult {
            name: name.to_string(),
            instances: 0,
            resampled: 0,
            max_rel_error: 0.0,
        });
        entry.instances += 1;
        entry.max_rel_error = entry.max_rel_error.max(err);
    }

    fn resampled(&mut self, name: &str, n: usize) {
        if let Some(e) = self.results.get_mut(name) {
            e.resampled += n;
        }
    }
}

fn uniform(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> DenseMatrix<f64> {
    DenseMatrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(lo..hi)).collect())
        .expect("finite samples")
}

/// Distance of the ranking hinges from their breakpoints.
pub fn hinge_margin(s: &SimilarityMatrix, margin: f64) -> f64 {
    let b = s.rows();
    let mut out = f64::INFINITY;
    for i in 0..b {
        for j in 0..b {
            if i != j {
                out = out.min((s.get(i, j) - s.get(i, i) + margin).abs());
                out = out.min((s.get(j, i) - s.get(i, i) + margin).abs());
            }
        }
    }
    out
}

/// Distance of a point loss from its non-smooth set (`|x - y| = 1` for Huber, `x = y` for L1).
pub fn point_margin(s: &SimilarityMatrix, phi: &SimilarityMatrix, loss: PointLoss, mask: Option<&[bool]>) -> f64 {
    s.data()
        .iter()
        .zip(phi.data())
        .enumerate()
        .filter(|(i, _)| mask.is_none_or(|m| m[*i]))
        .map(|(_, (a, b))| match loss {
            PointLoss::Huber => ((a - b).abs() - 1.0).abs(),
            PointLoss::L1 => (a - b).abs(),
            PointLoss::L2 => f64::INFINITY,
        })
        .fold(f64::INFINITY, f64::min)
}

fn normalized_margin(student: &[f64], teacher: &[f64], keep: &dyn Fn(usize) -> bool) -> f64 {
    let idx: Vec<usize> = (0..student.len()).filter(|&i| keep(i)).collect();
    let n = idx.len() as f64;
    let ms = idx.iter().map(|&i| student[i]).sum::<f64>() / n;
    let mt = idx.iter().map(|&i| teacher[i]).sum::<f64>() / n;
    if !(ms > 0.0 && mt > 0.0) {
        return 0.0;
    }
    idx.iter()
        .map(|&i| ((student[i] / ms - teacher[i] / mt).abs() - 1.0).abs())
        .fold(f64::INFINITY, f64::min)
}

fn pairwise(e: &DenseMatrix<f64>) -> Vec<f64> {
    let n = e.rows();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            d[i * n + j] = e
                .row(i)
                .iter()
                .zip(e.row(j))
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
        }
    }
    d
}

fn off_diagonal(n: usize) -> impl Fn(usize) -> bool {
    move |i| i / n != i % n
}

/// Distance of the relational loss's Huber arguments from their breakpoints.
pub fn relational_margin(student: &JointEmbeddings, teacher: &JointEmbeddings) -> f64 {
    [(&student.video, &teacher.video), (&student.text, &teacher.text)]
        .iter()
        .map(|(s, t)| normalized_margin(&pairwise(s), &pairwise(t), &off_diagonal(s.rows())))
        .fold(f64::INFINITY, f64::min)
}

/// Smallest distance between two rows of the same embedding set. Distances are
/// not differentiable at zero and strongly curved near it.
pub fn min_pairwise_distance(e: &JointEmbeddings) -> f64 {
    [&e.video, &e.text]
        .iter()
        .map(|m| {
            let n = m.rows();
            let d = pairwise(m);
            (0..n * n)
                .filter(|&i| off_diagonal(n)(i))
                .map(|i| d[i])
                .fold(f64::INFINITY, f64::min)
        })
        .fold(f64::INFINITY, f64::min)
}

pub fn pdist_margin(student: &SimilarityMatrix, teacher_d: &SimilarityMatrix) -> f64 {
    normalized_margin(cross_modal_distances(student).data(), teacher_d.data(), &|_| true)
}

fn resample<T>(name: &str, mut draw: impl FnMut() -> (T, bool)) -> Result<(T, usize)> {
    for attempt in 0..MAX_RESAMPLES {
        let (v, ok) = draw();
        if ok {
            return Ok((v, attempt));
        }
    }
    Err(Error::InvalidArgument(format!(
        "gradcheck could not draw a `{name}` instance away from kinks"
    )))
}

fn score_losses(rng: &mut ChaCha8Rng, cases: &mut Cases) -> Result<()> {
    let h = GRAD_CHECK_STEP;
    let b = rng.gen_range(2..=5);
    let k = rng.gen_range(1..=b);
    let phi_owned = uniform(rng, b, b, -1.0, 1.0);
    let phi = &phi_owned;
    let mask = top_k_mask(phi, k);
    type ScoreLoss<'a> = Box<dyn Fn(&SimilarityMatrix) -> Result<(f64, SimilarityMatrix)> + 'a>;
    let point =
        move |p: PointLoss| -> ScoreLoss<'_> { Box::new(move |s| distill_loss(s, phi, p).map(|l| (l.value, l.grad))) };
    let teacher_d = cross_modal_distances(&uniform(rng, b, b, -0.9, 0.9));
    let entries: Vec<(&str, ScoreLoss<'_>, Box<dyn Fn(&SimilarityMatrix) -> f64 + '_>, f64)> = vec![
        (
            "loss.ranking",
            Box::new(|s| ranking_loss(s, DEFAULT_MARGIN).map(|l| (l.value, l.grad))),
            Box::new(|s| hinge_margin(s, DEFAULT_MARGIN)),
            KINK_RADIUS,
        ),
        (
            "loss.distill_huber",
            point(PointLoss::Huber),
            Box::new(|s| point_margin(s, phi, PointLoss::Huber, None)),
            KINK_RADIUS,
        ),
        (
            "loss.distill_l1",
            point(PointLoss::L1),
            Box::new(|s| point_margin(s, phi, PointLoss::L1, None)),
            KINK_RADIUS,
        ),
        (
            "loss.distill_l2",
            point(PointLoss::L2),
            Box::new(|_| f64::INFINITY),
            KINK_RADIUS,
        ),
        (
            "loss.rank_k",
            Box::new(|s| rank_k_distill_loss(s, phi, k).map(|l| (l.value, l.grad))),
            Box::new(|s| point_margin(s, phi, PointLoss::Huber, Some(&mask))),
            KINK_RADIUS,
        ),
        (
            "loss.pdist",
            Box::new(|s| {
                let l = pdist_loss(&cross_modal_distances(s), &teacher_d)?;
                Ok((l.value, distance_grad_to_scores(s, &l.grad)?))
            }),
            Box::new(|s| pdist_margin(s, &teacher_d)),
            DERIVED_KINK_RADIUS,
        ),
        (
            "loss.composite",
            Box::new(|s| composite_loss(s, phi, DEFAULT_MARGIN, 0.7).map(|l| (l.value, l.grad))),
            Box::new(|s| hinge_margin(s, DEFAULT_MARGIN).min(point_margin(s, phi, PointLoss::Huber, None))),
            KINK_RADIUS,
        ),
    ];
    for (name, loss, margin, radius) in entries {
        let (s, tries) = resample(name, || {
            let s = uniform(rng, b, b, -0.9, 0.9);
            let ok = margin(&s) > radius;
            (s, ok)
        })?;
        let (_, grad) = loss(&s)?;
        let f = |p: &[f64]| {
            loss(&DenseMatrix::from_vec(b, b, p.to_vec()).expect("finite"))
                .expect("loss")
                .0
        };
        let numeric = finite_diff_grad(f, s.data(), h)?;
        cases.record(name, grad.data(), &numeric);
        cases.resampled(name, tries);
    }
    Ok(())
}

fn embedding_losses(rng: &mut ChaCha8Rng, cases: &mut Cases) -> Result<()> {
    for (name, relational) in [("loss.relational", true), ("loss.embed_regress", false)] {
        let eval = |e: &JointEmbeddings, t: &JointEmbeddings| {
            if relational {
                relational_intra_loss(e, t)
            } else {
                embed_regress_loss(e, t)
            }
        };
        let ((student, teacher), tries) = resample(name, || {
            let b = rng.gen_range(2..=5);
            let w = rng.gen_range(1..=8);
            let mut draw = || JointEmbeddings {
                video: uniform(rng, b, w, -1.0, 1.0),
                text: uniform(rng, b, w, -1.0, 1.0),
            };
            let (student, teacher) = (draw(), draw());
            let ok = !relational
                || (relational_margin(&student, &teacher) > DERIVED_KINK_RADIUS
                    && min_pairwise_distance(&student) > MIN_PAIR_DISTANCE);
            ((student, teacher), ok)
        })?;
        let (b, w) = student.video.shape();
        let split = |p: &[f64]| JointEmbeddings {
            video: DenseMatrix::from_vec(b, w, p[..b * w].to_vec()).expect("finite"),
            text: DenseMatrix::from_vec(b, w, p[b * w..].to_vec()).expect("finite"),
        };
        let l = eval(&student, &teacher)?;
        let analytic: Vec<f64> = l.grad_video.data().iter().chain(l.grad_text.data()).copied().collect();
        let point: Vec<f64> = student
            .video
            .data()
            .iter()
            .chain(student.text.data())
            .copied()
            .collect();
        let numeric = finite_diff_grad(
            |p| eval(&split(p), &teacher).expect("loss").value,
            &point,
            GRAD_CHECK_STEP,
        )?;
        cases.record(name, &analytic, &numeric);
        cases.resampled(name, tries);
    }
    Ok(())
}

fn random_spec(rng: &mut ChaCha8Rng) -> EncoderSpec {
    let k = rng.gen_range(1..=3);
    EncoderSpec {
        modalities: (0..k)
            .map(|m| ModalitySpec::new(format!("m{m}"), rng.gen_range(1..=8)))
            .collect(),
        text_dim: rng.gen_range(1..=8),
        shared_dim: rng.gen_range(1..=8),
        text_encoder_id: "te".into(),
    }
}

fn random_inputs(rng: &mut ChaCha8Rng, spec: &EncoderSpec, b: usize) -> (VideoBatch, DenseMatrix) {
    let mods = spec
        .modalities
        .iter()
        .map(|m| (m.id.clone(), uniform(rng, b, m.dim, -1.0, 1.0).convert::<f32>()))
        .collect();
    (
        VideoBatch::new(mods).expect("consistent rows"),
        uniform(rng, b, spec.text_dim, -1.0, 1.0).convert::<f32>(),
    )
}

fn encoder_blocks(rng: &mut ChaCha8Rng, seed: u64, cases: &mut Cases) -> Result<()> {
    let mut attempt = 0u64;
    let ((model, videos, texts), tries) = resample("encoder", || {
        attempt += 1;
        let spec = random_spec(rng);
        let model =
            DualEncoderParams::init(spec.clone(), seed.wrapping_mul(7919).wrapping_add(attempt)).expect("valid spec");
        let b = rng.gen_range(2..=5);
        let (videos, texts) = random_inputs(rng, &spec, b);
        let ok = model
            .min_projection_norm(&videos, &texts)
            .map(|n| n > MIN_PROJECTION_NORM)
            .unwrap_or(false);
        ((model, videos, texts), ok)
    })?;
    let spec = model.spec().clone();
    let b = texts.rows();
    let width = spec.joint_dim();
    let up_s = uniform(rng, b, b, -1.0, 1.0);
    let up_v = uniform(rng, b, width, -1.0, 1.0);
    let up_t = uniform(rng, b, width, -1.0, 1.0);
    let functional = |theta: &[f64], use_s: bool| -> f64 {
        let q = model.with_theta_exact(theta).expect("length");
        if use_s {
            let s = q.batch_similarity_matrix(&videos, &texts).expect("forward");
            s.data().iter().zip(up_s.data()).map(|(a, b)| a * b).sum()
        } else {
            let e = q.joint_embeddings(&videos, &texts).expect("forward");
            let a: f64 = e.video.data().iter().zip(up_v.data()).map(|(x, y)| x * y).sum();
            let c: f64 = e.text.data().iter().zip(up_t.data()).map(|(x, y)| x * y).sum();
            a + c
        }
    };
    for use_s in [true, false] {
        let upstream = if use_s {
            Upstream {
                similarity: Some(&up_s),
                ..Upstream::default()
            }
        } else {
            Upstream {
                video_embedding: Some(&up_v),
                text_embedding: Some(&up_t),
                ..Upstream::default()
            }
        };
        let analytic = model.backward(&videos, &texts, upstream)?;
        let numeric = finite_diff_grad(|t| functional(t, use_s), model.theta(), GRAD_CHECK_STEP)?;
        for info in model.layout() {
            let label = info.block.to_string();
            let kind = block_kind(&label);
            let name = format!("encoder.{}.{kind}", if use_s { "scores" } else { "embeddings" });
            let r = info.range();
            cases.record(&name, &analytic[r.clone()], &numeric[r]);
            cases.resampled(&name, tries);
        }
    }
    Ok(())
}

fn block_kind(label: &str) -> &str {
    label.split('[').next().unwrap_or(label)
}

struct EndToEnd {
    store: FeatureStore,
    teachers: TeacherPool,
    student: DualEncoderParams,
    videos: Vec<usize>,
    captions: Vec<usize>,
}

fn end_to_end_instance(rng: &mut ChaCha8Rng, seed: u64) -> Result<EndToEnd> {
    let b = rng.gen_range(2..=5);
    let synth = SynthConfig {
        seed,
        n_videos: b,
        captions_per_video: 1,
        n_modalities: rng.gen_range(1..=3),
        n_text_encoders: 3,
        noise_profile: vec![0.5, 0.5, 0.5],
        latent_dim: 4,
        modality_dim: rng.gen_range(1..=8),
        text_dim: rng.gen_range(1..=8),
        val_fraction: 0.0,
        test_fraction: 0.0,
        ..SynthConfig::default()
    };
    let store = synth_corpus(&synth)?.store;
    let shared_dim = rng.gen_range(1..=8);
    let make = |te: &str, s: u64| -> Result<DualEncoderParams> {
        DualEncoderParams::init(
            EncoderSpec {
                modalities: store.modality_specs(),
                text_dim: store.text_dim(te)?,
                shared_dim,
                text_encoder_id: te.into(),
            },
            s,
        )
    };
    let teachers = TeacherPool::new(vec![make("te1", seed + 1)?, make("te2", seed + 2)?])?;
    let student = make("te0", seed)?;
    let mut captions: Vec<usize> = (0..b).collect();
    captions.shuffle(rng);
    let videos = captions.iter().map(|&c| store.caption_video(c)).collect();
    Ok(EndToEnd {
        store,
        teachers,
        student,
        videos,
        captions,
    })
}

fn end_to_end_margin(e: &EndToEnd, cfg: &TrainConfig) -> Result<f64> {
    let videos = e.store.video_batch(&e.videos)?;
    let texts = e.store.caption_batch("te0", &e.captions)?;
    if e.student.min_projection_norm(&videos, &texts)? <= MIN_PROJECTION_NORM {
        return Ok(0.0);
    }
    for t in e.teachers.teachers() {
        if t.min_projection_norm(&videos, &e.store.caption_batch(t.text_encoder_id(), &e.captions)?)?
            <= MIN_PROJECTION_NORM
        {
            return Ok(0.0);
        }
    }
    let s = e.student.batch_similarity_matrix(&videos, &texts)?;
    let mats = e.teachers.similarity_matrices(&e.store, &videos, &e.captions)?;
    let margin = hinge_margin(&s, cfg.margin);
    let extra = match cfg.distill_variant {
        DistillVariant::Huber | DistillVariant::L1 | DistillVariant::L2 => {
            let phi = aggregate(&mats, cfg.aggregation)?;
            point_margin(&s, &phi, cfg.distill_variant.point_loss().expect("point variant"), None)
        }
        DistillVariant::RankK => {
            let phi = aggregate(&mats, cfg.aggregation)?;
            let mask = top_k_mask(&phi, cfg.rank_k.min(s.rows()));
            point_margin(&s, &phi, PointLoss::Huber, Some(&mask))
        }
        DistillVariant::Pdist => {
            let td: Vec<_> = mats.iter().map(cross_modal_distances).collect();
            if cross_modal_distances(&s).data().iter().any(|&d| d <= MIN_PAIR_DISTANCE) {
                return Ok(0.0);
            }
            pdist_margin(&s, &aggregate(&td, cfg.aggregation)?)
        }
        DistillVariant::Relational => {
            let student = e.student.joint_embeddings(&videos, &texts)?;
            let mut m = f64::INFINITY;
            for t in e.teachers.teachers() {
                let te = t.joint_embeddings(&videos, &e.store.caption_batch(t.text_encoder_id(), &e.captions)?)?;
                m = m.min(relational_margin(&student, &te));
            }
            if min_pairwise_distance(&student) <= MIN_PAIR_DISTANCE {
                return Ok(0.0);
            }
            m
        }
        DistillVariant::EmbedRegress | DistillVariant::None => f64::INFINITY,
    };
    Ok(margin.min(extra))
}

const END_TO_END_VARIANTS: [DistillVariant; 8] = [
    DistillVariant::None,
    DistillVariant::Huber,
    DistillVariant::L1,
    DistillVariant::L2,
    DistillVariant::RankK,
    DistillVariant::Pdist,
    DistillVariant::Relational,
    DistillVariant::EmbedRegress,
];

fn end_to_end(rng: &mut ChaCha8Rng, seed: u64, cases: &mut Cases) -> Result<()> {
    let aggregation = *[Aggregation::Mean, Aggregation::Min, Aggregation::Max]
        .choose(rng)
        .expect("non-empty");
    for variant in END_TO_END_VARIANTS {
        let cfg = TrainConfig {
            distill_variant: variant,
            aggregation,
            distill_weight: 0.7,
            rank_k: 2,
            ..TrainConfig::default()
        };
        let name = format!("objective.{variant}");
        let mut attempt = 0u64;
        let (e, tries) = resample(&name, || {
            attempt += 1;
            let e = end_to_end_instance(rng, seed.wrapping_mul(7919).wrapping_add(attempt)).expect("instance");
            let ok = end_to_end_margin(&e, &cfg)
                .map(|m| m > DERIVED_KINK_RADIUS)
                .unwrap_or(false);
            (e, ok)
        })?;
        let teachers = (variant != DistillVariant::None).then_some(&e.teachers);
        let out = batch_loss(&e.student, &e.store, &cfg, teachers, &e.videos, &e.captions)?;
        let f = |theta: &[f64]| {
            let q = e.student.with_theta_exact(theta).expect("length");
            let o = batch_loss(&q, &e.store, &cfg, teachers, &e.videos, &e.captions).expect("objective");
            o.ranking_loss + cfg.distill_weight * o.distill_loss
        };
        let numeric = finite_diff_grad(f, e.student.theta(), GRAD_CHECK_STEP)?;
        cases.record(&name, &out.grad, &numeric);
        cases.resampled(&name, tries);
    }
    Ok(())
}

/// Runs every case `trials` times. Passes iff the largest relative error is below [`GRAD_CHECK_TOLERANCE`].
pub fn run_gradcheck(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if cfg.trials == 0 {
        return Err(Error::Config("trials must be >= 1".into()));
    }
    if !cfg.fault_scale.is_finite() {
        return Err(Error::Config("fault scale must be finite".into()));
    }
    let mut cases = Cases {
        results: BTreeMap::new(),
        fault: cfg.fault_scale,
    };
    type Stage = fn(&mut ChaCha8Rng, u64, &mut Cases) -> Result<()>;
    let stages: [Stage; 4] = [
        |r, _, c| score_losses(r, c),
        |r, _, c| embedding_losses(r, c),
        encoder_blocks,
        end_to_end,
    ];
    for (stream, stage) in stages.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(stream as u64);
        for trial in 0..cfg.trials {
            stage(
                &mut rng,
                cfg.seed.wrapping_mul(1000).wrapping_add(trial as u64),
                &mut cases,
            )?;
        }
    }
    let results: Vec<CaseResult> = cases.results.into_values().collect();
    let max = results.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        seed: cfg.seed,
        trials: cfg.trials,
        tolerance: GRAD_CHECK_TOLERANCE,
        max_rel_error: max,
        passed: max < GRAD_CHECK_TOLERANCE,
        cases: results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn smoke_run_passes_and_covers_everything() {
        let report = run_gradcheck(&GradCheckConfig {
            seed: 1,
            trials: 2,
            ..GradCheckConfig::default()
        })
        .unwrap();
        assert!(report.passed, "{report:#?}");
        let names: Vec<&str> = report.cases.iter().map(|c| c.name.as_str()).collect();
        for expected in [
            "loss.ranking",
            "loss.distill_huber",
            "loss.distill_l1",
            "loss.distill_l2",
            "loss.rank_k",
            "loss.pdist",
            "loss.relational",
            "loss.embed_regress",
            "loss.composite",
            "objective.pdist",
            "objective.none",
            "encoder.scores.W",
            "encoder.scores.A",
            "encoder.embeddings.U",
        ] {
            assert!(names.contains(&expected), "{expected} missing from {names:?}");
        }
    }

    #[test]
    fn injected_fault_fails() {
        let report = run_gradcheck(&GradCheckConfig {
            seed: 1,
            trials: 1,
            fault_scale: 1.01,
        })
        .unwrap();
        assert!(!report.passed);
        assert!(report.max_rel_error > 5e-3);
    }

    #[test]
    fn deterministic_and_validated() {
        let cfg = GradCheckConfig {
            seed: 4,
            trials: 1,
            ..GradCheckConfig::default()
        };
        assert_eq!(run_gradcheck(&cfg).unwrap(), run_gradcheck(&cfg).unwrap());
        assert!(run_gradcheck(&GradCheckConfig { trials: 0, ..cfg }).is_err());
    }

    #[test]
    fn margins() {
        let s = DenseMatrix::from_vec(2, 2, vec![0.5, 0.3, 0.1, 0.5]).unwrap();
        assert!((hinge_margin(&s, 0.2) - 0.0).abs() < 1e-12);
        let phi = DenseMatrix::from_vec(2, 2, vec![0.5, -0.7, 0.1, 0.5]).unwrap();
        assert!((point_margin(&s, &phi, PointLoss::Huber, None) - 0.0).abs() < 1e-12);
        assert_eq!(point_margin(&s, &phi, PointLoss::L1, None), 0.0);
        assert_eq!(point_margin(&s, &phi, PointLoss::L2, None), f64::INFINITY);
    }
}
