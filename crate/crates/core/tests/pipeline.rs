use teachtext::data::{synth_corpus, AmbiguityLedger, FeatureStore, Split, SynthConfig, LEDGER_FILE};
use teachtext::denoise::{
    apply_caption_list, apply_filter, filter_captions, score_caption_ranks, FilteredCaption, FILTERED_CAPTIONS_FILE,
};
use teachtext::io::{encode_model, load_model, read_jsonl, save_model};
use teachtext::metrics::{evaluate, Task};
use teachtext::trainer::{train_student, train_teacher, DistillVariant, TeacherPool, TrainConfig};
use tempfile::TempDir;

fn small_config(seed: u64) -> TrainConfig {
    TrainConfig {
        seed,
        epochs: 3,
        batch_size: 16,
        student_text_encoder_id: "te0".into(),
        ..TrainConfig::default()
    }
}

#[test]
fn store_and_model_survive_disk_round_trip() {
    let tmp = TempDir::new().unwrap();
    let corpus = synth_corpus(&SynthConfig {
        seed: 4,
        n_videos: 60,
        ambiguous_fraction: 0.1,
        ..SynthConfig::default()
    })
    .unwrap();
    corpus.write(tmp.path()).unwrap();
    let store = FeatureStore::load(tmp.path()).unwrap();
    assert_eq!(store, corpus.store);
    assert_eq!(
        AmbiguityLedger::load(&tmp.path().join(LEDGER_FILE)).unwrap(),
        corpus.ledger
    );

    let cfg = small_config(4);
    let teacher = train_teacher(&store, &cfg, "te1").unwrap().model;
    let path = tmp.path().join("teacher.ttmd");
    save_model(&path, &teacher).unwrap();
    let loaded = load_model(&path).unwrap();
    assert_eq!(encode_model(&loaded).unwrap(), encode_model(&teacher).unwrap());
    for task in [Task::T2v, Task::V2t] {
        assert_eq!(
            evaluate(&loaded, &store, Split::Test, task).unwrap(),
            evaluate(&teacher, &corpus.store, Split::Test, task).unwrap()
        );
    }
}

#[test]
fn written_caption_list_reproduces_filtered_store() {
    let tmp = TempDir::new().unwrap();
    let corpus = synth_corpus(&SynthConfig {
        seed: 5,
        n_videos: 60,
        ambiguous_fraction: 0.2,
        ..SynthConfig::default()
    })
    .unwrap();
    let cfg = small_config(5);
    let pool = TeacherPool::new(vec![
        train_teacher(&corpus.store, &cfg, "te1").unwrap().model,
        train_teacher(&corpus.store, &cfg, "te2").unwrap().model,
    ])
    .unwrap();
    let table = score_caption_ranks(&pool, &corpus.store, Split::Train).unwrap();
    let result = filter_captions(&table, 5).unwrap();
    result.write(tmp.path()).unwrap();
    let kept: Vec<FilteredCaption> = read_jsonl(&tmp.path().join(FILTERED_CAPTIONS_FILE)).unwrap();

    let from_list = apply_caption_list(&corpus.store, &kept, Split::Train).unwrap();
    let direct = apply_filter(&corpus.store, &result).unwrap();
    assert_eq!(from_list, direct);
    assert_eq!(
        from_list.num_captions(),
        corpus.store.num_captions() - result.summary.dropped
    );
    let test_ids = |s: &FeatureStore| -> Vec<String> {
        s.split_captions(Split::Test)
            .iter()
            .map(|&c| s.caption_id(c).to_string())
            .collect()
    };
    assert_eq!(test_ids(&from_list), test_ids(&corpus.store));

    let a = train_student(&from_list, &cfg, &pool).unwrap();
    let b = train_student(&direct, &cfg, &pool).unwrap();
    assert_eq!(encode_model(&a.model).unwrap(), encode_model(&b.model).unwrap());
}

#[test]
fn every_distill_variant_trains_end_to_end() {
    let store = synth_corpus(&SynthConfig {
        seed: 6,
        n_videos: 50,
        ..SynthConfig::default()
    })
    .unwrap()
    .store;
    let base = small_config(6);
    let pool = TeacherPool::new(vec![train_teacher(&store, &base, "te2").unwrap().model]).unwrap();
    for variant in [
        DistillVariant::Huber,
        DistillVariant::L1,
        DistillVariant::L2,
        DistillVariant::RankK,
        DistillVariant::Pdist,
        DistillVariant::Relational,
        DistillVariant::EmbedRegress,
    ] {
        let cfg = TrainConfig {
            distill_variant: variant,
            ..base.clone()
        };
        let out = train_student(&store, &cfg, &pool).unwrap();
        assert_eq!(out.log.epochs.len(), cfg.epochs, "{variant}");
        assert!(
            out.log
                .epochs
                .iter()
                .all(|e| e.distill_loss.is_finite() && e.distill_loss >= 0.0),
            "{variant}"
        );
        assert!(evaluate(&out.model, &store, Split::Test, Task::T2v)
            .unwrap()
            .geomean
            .is_finite());
    }
}
