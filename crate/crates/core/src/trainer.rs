//! Two-phase training: teachers on their own caption embeddings, then a
//! student on ranking loss plus distillation towards the aggregated teacher
//! similarity matrices.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{split_iter, FeatureStore, Split};
use crate::encoder::{DualEncoderParams, EncoderSpec, JointEmbeddings, ModalitySpec, Upstream, VideoBatch};
use crate::error::{Error, Result};
use crate::losses::{
    cross_modal_distances, distance_grad_to_scores, distill_loss, embed_regress_loss, pdist_loss, rank_k_distill_loss,
    ranking_loss, relational_intra_loss, EmbeddingLossValueAndGrad, PointLoss,
};
use crate::metrics::{evaluate, MetricsReport, SeedSummary, Task};
use crate::numerics::{DenseMatrix, SimilarityMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Min,
    Max,
}

impl FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" | "average" => Ok(Aggregation::Mean),
            "min" => Ok(Aggregation::Min),
            "max" => Ok(Aggregation::Max),
            other => Err(Error::Config(format!("unknown aggregation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistillVariant {
    #[default]
    Huber,
    L1,
    L2,
    #[serde(alias = "rank-k")]
    RankK,
    Pdist,
    Relational,
    #[serde(alias = "embed-regress")]
    EmbedRegress,
    None,
}

impl DistillVariant {
    /// The elementwise penalty for the plain similarity-matrix variants.
    pub fn point_loss(self) -> Option<PointLoss> {
        match self {
            DistillVariant::Huber => Some(PointLoss::Huber),
            DistillVariant::L1 => Some(PointLoss::L1),
            DistillVariant::L2 => Some(PointLoss::L2),
            _ => None,
        }
    }
}

impl fmt::Display for DistillVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DistillVariant::Huber => "huber",
            DistillVariant::L1 => "l1",
            DistillVariant::L2 => "l2",
            DistillVariant::RankK => "rank_k",
            DistillVariant::Pdist => "pdist",
            DistillVariant::Relational => "relational",
            DistillVariant::EmbedRegress => "embed_regress",
            DistillVariant::None => "none",
        })
    }
}

impl FromStr for DistillVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "huber" => Ok(DistillVariant::Huber),
            "l1" => Ok(DistillVariant::L1),
            "l2" => Ok(DistillVariant::L2),
            "rank_k" | "rank-k" => Ok(DistillVariant::RankK),
            "pdist" => Ok(DistillVariant::Pdist),
            "relational" => Ok(DistillVariant::Relational),
            "embed_regress" | "embed-regress" => Ok(DistillVariant::EmbedRegress),
            "none" => Ok(DistillVariant::None),
            other => Err(Error::Config(format!("unknown distill variant `{other}`"))),
        }
    }
}

/// Training hyper-parameters. Empty modality lists mean "every modality in the store".
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub margin: f64,
    pub distill_weight: f64,
    pub aggregation: Aggregation,
    pub distill_variant: DistillVariant,
    pub rank_k: usize,
    pub seed: u64,
    pub shared_dim: usize,
    pub student_text_encoder_id: String,
    pub teacher_text_encoder_ids: Vec<String>,
    pub student_modalities: Vec<String>,
    pub teacher_modalities: Vec<String>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            epochs: 20,
            learning_rate: 0.001,
            weight_decay: 1e-5,
            margin: crate::losses::DEFAULT_MARGIN,
            distill_weight: 1.0,
            aggregation: Aggregation::Mean,
            distill_variant: DistillVariant::Huber,
            rank_k: 10,
            seed: 0,
            shared_dim: 32,
            student_text_encoder_id: String::new(),
            teacher_text_encoder_ids: Vec::new(),
            student_modalities: Vec::new(),
            teacher_modalities: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config("batch_size must be >= 2 for contrastive losses".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {}", self.learning_rate)));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::Config(format!("weight_decay {}", self.weight_decay)));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin {}", self.margin)));
        }
        if !(self.distill_weight >= 0.0 && self.distill_weight.is_finite()) {
            return Err(Error::Config(format!("distill_weight {}", self.distill_weight)));
        }
        if self.shared_dim == 0 {
            return Err(Error::Config("shared_dim must be >= 1".into()));
        }
        if self.distill_variant == DistillVariant::RankK && self.rank_k == 0 {
            return Err(Error::Config("rank_k must be >= 1".into()));
        }
        Ok(())
    }
}

/// Frozen teachers; each carries its own text encoder binding.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherPool {
    teachers: Vec<DualEncoderParams>,
}

impl TeacherPool {
    pub fn new(teachers: Vec<DualEncoderParams>) -> Result<Self> {
        if let Some(first) = teachers.first() {
            let mods = &first.spec().modalities;
            if teachers.iter().any(|t| &t.spec().modalities != mods) {
                return Err(Error::Config("teachers must share one modality set".into()));
            }
        }
        Ok(Self { teachers })
    }

    pub fn is_empty(&self) -> bool {
        self.teachers.is_empty()
    }

    pub fn len(&self) -> usize {
        self.teachers.len()
    }

    pub fn teachers(&self) -> &[DualEncoderParams] {
        &self.teachers
    }

    pub fn checksums(&self) -> Vec<String> {
        self.teachers.iter().map(DualEncoderParams::checksum).collect()
    }

    /// Each teacher's score grid for the same videos, using its own caption embeddings.
    pub fn similarity_matrices(
        &self,
        store: &FeatureStore,
        videos: &VideoBatch,
        captions: &[usize],
    ) -> Result<Vec<SimilarityMatrix>> {
        self.teachers
            .iter()
            .map(|t| t.similarity_matrix(videos, &store.caption_batch(t.text_encoder_id(), captions)?))
            .collect()
    }
}

/// Elementwise combination of teacher matrices.
pub fn aggregate(mats: &[SimilarityMatrix], mode: Aggregation) -> Result<SimilarityMatrix> {
    let first = mats.first().ok_or(Error::Empty("aggregate"))?;
    if mats.iter().any(|m| m.shape() != first.shape()) {
        return Err(Error::dims("aggregate", "teacher matrices differ in shape"));
    }
    let n = mats.len() as f64;
    let data = (0..first.data().len())
        .map(|i| {
            let vals = mats.iter().map(|m| m.data()[i]);
            match mode {
                Aggregation::Mean => vals.sum::<f64>() / n,
                Aggregation::Min => vals.fold(f64::INFINITY, f64::min),
                Aggregation::Max => vals.fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect();
    DenseMatrix::from_vec(first.rows(), first.cols(), data)
}

/// Adam moments with bias correction and coupled L2 weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            first_moment: vec![0.0; len],
            second_moment: vec![0.0; len],
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update in place. Weight decay is added to the gradient before the moment updates.
pub fn adam_step(state: &mut AdamState, params: &mut [f64], grads: &[f64], lr: f64, weight_decay: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first_moment.len() {
        return Err(Error::dims(
            "adam_step",
            format!(
                "{} params, {} grads, {} moments",
                params.len(),
                grads.len(),
                state.first_moment.len()
            ),
        ));
    }
    state.step += 1;
    let t = state.step as i32;
    let correct1 = 1.0 - state.beta1.powi(t);
    let correct2 = 1.0 - state.beta2.powi(t);
    let mut updated = params.to_vec();
    for i in 0..params.len() {
        let g = grads[i] + weight_decay * params[i];
        let m = state.beta1 * state.first_moment[i] + (1.0 - state.beta1) * g;
        let v = state.beta2 * state.second_moment[i] + (1.0 - state.beta2) * g * g;
        state.first_moment[i] = m;
        state.second_moment[i] = v;
        updated[i] -= lr * (m / correct1) / ((v / correct2).sqrt() + state.eps);
    }
    if updated.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("adam_step"));
    }
    params.copy_from_slice(&updated);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub ranking_loss: f64,
    pub distill_loss: f64,
    pub val_geomean: Option<f64>,
}

/// Per-run training record, written as JSON next to the model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainLog {
    pub text_encoder_id: String,
    pub distill_variant: Option<DistillVariant>,
    pub teachers: Vec<String>,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_geomean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutput {
    pub model: DualEncoderParams,
    pub log: TrainLog,
}

/// Distillation setup for one student run.
struct Distill<'a> {
    teachers: &'a TeacherPool,
    variant: DistillVariant,
}

fn resolve_modalities(store: &FeatureStore, wanted: &[String]) -> Result<Vec<ModalitySpec>> {
    let all = store.modality_specs();
    if wanted.is_empty() {
        return Ok(all);
    }
    wanted
        .iter()
        .map(|id| {
            all.iter()
                .find(|m| &m.id == id)
                .cloned()
                .ok_or_else(|| Error::MissingModality(id.clone()))
        })
        .collect()
}

fn encoder_spec(
    store: &FeatureStore,
    cfg: &TrainConfig,
    text_encoder_id: &str,
    modalities: &[String],
) -> Result<EncoderSpec> {
    Ok(EncoderSpec {
        modalities: resolve_modalities(store, modalities)?,
        text_dim: store.text_dim(text_encoder_id)?,
        shared_dim: cfg.shared_dim,
        text_encoder_id: text_encoder_id.to_string(),
    })
}

fn average_embedding_losses(losses: Vec<EmbeddingLossValueAndGrad>) -> Result<EmbeddingLossValueAndGrad> {
    let n = losses.len() as f64;
    let mut iter = losses.into_iter();
    let first = iter.next().ok_or(Error::Empty("average_embedding_losses"))?;
    let mut value = first.value;
    let mut gv = first.grad_video.to_f64();
    let mut gt = first.grad_text.to_f64();
    let (vr, vc) = first.grad_video.shape();
    let (tr, tc) = first.grad_text.shape();
    for l in iter {
        value += l.value;
        for (a, b) in gv.iter_mut().zip(l.grad_video.data()) {
            *a += b;
        }
        for (a, b) in gt.iter_mut().zip(l.grad_text.data()) {
            *a += b;
        }
    }
    let scale = |v: Vec<f64>| v.into_iter().map(|x| x / n).collect::<Vec<_>>();
    Ok(EmbeddingLossValueAndGrad {
        value: value / n,
        grad_video: DenseMatrix::from_vec(vr, vc, scale(gv))?,
        grad_text: DenseMatrix::from_vec(tr, tc, scale(gt))?,
    })
}

/// Loss value pieces and the parameter gradient for one minibatch.
pub struct StepOutcome {
    pub ranking_loss: f64,
    pub distill_loss: f64,
    pub grad: Vec<f64>,
}

/// Composite loss `L_r + w * L_d` on one batch and its gradient w.r.t. the student parameters.
fn batch_objective(
    model: &DualEncoderParams,
    store: &FeatureStore,
    cfg: &TrainConfig,
    distill: Option<&Distill<'_>>,
    videos: &VideoBatch,
    captions: &[usize],
) -> Result<StepOutcome> {
    let texts = store.caption_batch(model.text_encoder_id(), captions)?;
    let scores = model.batch_similarity_matrix(videos, &texts)?;
    let ranking = ranking_loss(&scores, cfg.margin)?;
    let mut grad_scores = ranking.grad;
    let mut distill_value = 0.0;
    let mut embedding_grads: Option<(DenseMatrix<f64>, DenseMatrix<f64>)> = None;
    let w = cfg.distill_weight;

    if let Some(d) = distill {
        let add = |acc: &mut SimilarityMatrix, g: &SimilarityMatrix| -> Result<()> {
            let data = acc.data().iter().zip(g.data()).map(|(a, b)| a + w * b).collect();
            *acc = DenseMatrix::from_vec(acc.rows(), acc.cols(), data)?;
            Ok(())
        };
        match d.variant {
            DistillVariant::None => {}
            DistillVariant::Huber | DistillVariant::L1 | DistillVariant::L2 | DistillVariant::RankK => {
                let mats = d.teachers.similarity_matrices(store, videos, captions)?;
                let phi = aggregate(&mats, cfg.aggregation)?;
                let loss = match d.variant.point_loss() {
                    Some(p) => distill_loss(&scores, &phi, p)?,
                    None => rank_k_distill_loss(&scores, &phi, cfg.rank_k.min(scores.rows()))?,
                };
                distill_value = loss.value;
                add(&mut grad_scores, &loss.grad)?;
            }
            DistillVariant::Pdist => {
                let mats = d.teachers.similarity_matrices(store, videos, captions)?;
                let teacher_d: Vec<SimilarityMatrix> = mats.iter().map(cross_modal_distances).collect();
                let phi = aggregate(&teacher_d, cfg.aggregation)?;
                let loss = pdist_loss(&cross_modal_distances(&scores), &phi)?;
                distill_value = loss.value;
                add(&mut grad_scores, &distance_grad_to_scores(&scores, &loss.grad)?)?;
            }
            DistillVariant::Relational | DistillVariant::EmbedRegress => {
                let student = model.joint_embeddings(videos, &texts)?;
                let per_teacher = d
                    .teachers
                    .teachers()
                    .iter()
                    .map(|t| {
                        let teacher: JointEmbeddings =
                            t.joint_embeddings(videos, &store.caption_batch(t.text_encoder_id(), captions)?)?;
                        if d.variant == DistillVariant::Relational {
                            relational_intra_loss(&student, &teacher)
                        } else {
                            embed_regress_loss(&student, &teacher)
                        }
                    })
                    .collect::<Result<Vec<_>>>()?;
                let loss = average_embedding_losses(per_teacher)?;
                distill_value = loss.value;
                let scale = |m: &DenseMatrix<f64>| m.map(|v| w * v);
                embedding_grads = Some((scale(&loss.grad_video)?, scale(&loss.grad_text)?));
            }
        }
    }

    let grad = model.backward(
        videos,
        &texts,
        Upstream {
            similarity: Some(&grad_scores),
            video_embedding: embedding_grads.as_ref().map(|(v, _)| v),
            text_embedding: embedding_grads.as_ref().map(|(_, t)| t),
        },
    )?;
    Ok(StepOutcome {
        ranking_loss: ranking.value,
        distill_loss: distill_value,
        grad,
    })
}

/// Value of the composite objective on one batch, without gradients' side effects.
pub fn batch_loss(
    model: &DualEncoderParams,
    store: &FeatureStore,
    cfg: &TrainConfig,
    teachers: Option<&TeacherPool>,
    videos: &[usize],
    captions: &[usize],
) -> Result<StepOutcome> {
    let distill = teachers.map(|t| Distill {
        teachers: t,
        variant: cfg.distill_variant,
    });
    batch_objective(
        model,
        store,
        cfg,
        distill.as_ref(),
        &store.video_batch(videos)?,
        captions,
    )
}

fn validation_geomean(model: &DualEncoderParams, store: &FeatureStore) -> Result<Option<f64>> {
    if store.split_videos(Split::Val).is_empty() || store.split_captions(Split::Val).is_empty() {
        return Ok(None);
    }
    Ok(Some(evaluate(model, store, Split::Val, Task::T2v)?.geomean))
}

fn run_training(
    store: &FeatureStore,
    cfg: &TrainConfig,
    spec: EncoderSpec,
    distill: Option<&Distill<'_>>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if store.split_captions(Split::Train).is_empty() {
        return Err(Error::Empty("training split"));
    }
    let mut model = DualEncoderParams::init(spec, cfg.seed)?;
    let mut adam = AdamState::new(model.num_params());
    let mut theta = model.theta().to_vec();
    let mut log = TrainLog {
        text_encoder_id: model.text_encoder_id().to_string(),
        distill_variant: distill.map(|d| d.variant),
        teachers: distill
            .map(|d| {
                d.teachers
                    .teachers()
                    .iter()
                    .map(|t| t.text_encoder_id().to_string())
                    .collect()
            })
            .unwrap_or_default(),
        ..TrainLog::default()
    };
    let mut best: Option<(f64, DualEncoderParams)> = None;

    for epoch in 0..cfg.epochs {
        let batches = split_iter(store, Split::Train, cfg.batch_size, cfg.seed, epoch as u64)?;
        let (mut sum_r, mut sum_d) = (0.0, 0.0);
        for batch in &batches {
            let videos = store.video_batch(&batch.videos)?;
            let out = batch_objective(&model, store, cfg, distill, &videos, &batch.captions)?;
            sum_r += out.ranking_loss;
            sum_d += out.distill_loss;
            adam_step(&mut adam, &mut theta, &out.grad, cfg.learning_rate, cfg.weight_decay)?;
            model.set_theta(&theta)?;
            theta.copy_from_slice(model.theta());
        }
        let n = batches.len().max(1) as f64;
        let val = validation_geomean(&model, store)?;
        log.epochs.push(EpochLog {
            epoch: epoch + 1,
            ranking_loss: sum_r / n,
            distill_loss: sum_d / n,
            val_geomean: val,
        });
        let score = val.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(b, _)| score > *b) || val.is_none() {
            log.best_epoch = epoch + 1;
            log.best_val_geomean = val;
            best = Some((score, model.clone()));
        }
    }
    let (_, model) = best.expect("at least one epoch");
    Ok(TrainOutput { model, log })
}

/// Ranking-loss-only training on one text encoder's caption embeddings.
pub fn train_teacher(store: &FeatureStore, cfg: &TrainConfig, text_encoder_id: &str) -> Result<TrainOutput> {
    let spec = encoder_spec(store, cfg, text_encoder_id, &cfg.teacher_modalities)?;
    run_training(store, cfg, spec, None)
}

fn check_teachers_against_store(store: &FeatureStore, teachers: &TeacherPool) -> Result<()> {
    let store_mods = store.modality_specs();
    for t in teachers.teachers() {
        let text_dim = store.text_dim(t.text_encoder_id())?;
        if text_dim != t.spec().text_dim {
            return Err(Error::Config(format!(
                "teacher on `{}` expects text dim {}, store has {text_dim}",
                t.text_encoder_id(),
                t.spec().text_dim
            )));
        }
        for m in &t.spec().modalities {
            if !store_mods.contains(m) {
                return Err(Error::Config(format!(
                    "teacher modality `{}` ({}) not in store",
                    m.id, m.dim
                )));
            }
        }
    }
    Ok(())
}

fn check_embedding_compat(spec: &EncoderSpec, teachers: &TeacherPool, variant: DistillVariant) -> Result<()> {
    if variant == DistillVariant::EmbedRegress
        && teachers
            .teachers()
            .iter()
            .any(|t| t.spec().joint_dim() != spec.joint_dim())
    {
        return Err(Error::Config(
            "embed_regress needs teacher and student joint spaces of equal width".into(),
        ));
    }
    Ok(())
}

/// Student training with the student's text encoder and the frozen teacher pool.
///
/// With `distill_variant = none` the teachers are ignored and the run is the
/// same as [`train_teacher`] on the student's text encoder.
pub fn train_student(store: &FeatureStore, cfg: &TrainConfig, teachers: &TeacherPool) -> Result<TrainOutput> {
    let spec = encoder_spec(store, cfg, &cfg.student_text_encoder_id, &cfg.student_modalities)?;
    if cfg.distill_variant == DistillVariant::None {
        return run_training(store, cfg, spec, None);
    }
    if teachers.is_empty() {
        return Err(Error::Config("distillation needs at least one teacher".into()));
    }
    check_teachers_against_store(store, teachers)?;
    let teacher_mods: HashSet<&str> = teachers.teachers()[0].spec().modality_ids().into_iter().collect();
    let student_mods: HashSet<&str> = spec.modality_ids().into_iter().collect();
    if teacher_mods != student_mods {
        return Err(Error::Config(
            "student and teachers must share modalities (use TeachVideo for a subset)".into(),
        ));
    }
    check_embedding_compat(&spec, teachers, cfg.distill_variant)?;
    run_training(
        store,
        cfg,
        spec,
        Some(&Distill {
            teachers,
            variant: cfg.distill_variant,
        }),
    )
}

/// Distills a teacher that sees more video modalities into a student restricted
/// to a strict subset. Both read the same caption embeddings.
pub fn train_student_teachvideo(
    store: &FeatureStore,
    cfg: &TrainConfig,
    teacher: &DualEncoderParams,
) -> Result<TrainOutput> {
    let spec = encoder_spec(store, cfg, &cfg.student_text_encoder_id, &cfg.student_modalities)?;
    let teacher_mods: HashSet<&str> = teacher.spec().modality_ids().into_iter().collect();
    let student_mods: HashSet<&str> = spec.modality_ids().into_iter().collect();
    if !(student_mods.is_subset(&teacher_mods) && student_mods.len() < teacher_mods.len()) {
        return Err(Error::Config(
            "TeachVideo student modalities must be a strict subset of the teacher's".into(),
        ));
    }
    if teacher.text_encoder_id() != spec.text_encoder_id {
        return Err(Error::Config(
            "TeachVideo teacher and student must use the same text encoder".into(),
        ));
    }
    if cfg.distill_variant == DistillVariant::None {
        return Err(Error::Config("TeachVideo needs a distillation variant".into()));
    }
    let pool = TeacherPool::new(vec![teacher.clone()])?;
    check_teachers_against_store(store, &pool)?;
    check_embedding_compat(&spec, &pool, cfg.distill_variant)?;
    run_training(
        store,
        cfg,
        spec,
        Some(&Distill {
            teachers: &pool,
            variant: cfg.distill_variant,
        }),
    )
}

/// Runs `run` once per seed and summarizes each metric as mean and population std.
pub fn multi_seed_report<F>(seeds: &[u64], mut run: F) -> Result<SeedSummary>
where
    F: FnMut(u64) -> Result<MetricsReport>,
{
    if seeds.is_empty() {
        return Err(Error::Empty("multi_seed_report"));
    }
    if seeds.len() < 2 {
        return Err(Error::InvalidArgument(
            "multi_seed_report needs at least two seeds".into(),
        ));
    }
    let reports = seeds.iter().map(|&s| run(s)).collect::<Result<Vec<_>>>()?;
    SeedSummary::from_reports(seeds, &reports)
}
