use std::collections::HashMap;

use spoofcm::experiment::{
    extract_features, load_features, run_experiment, score_entries, select, train_model,
    ClassifierKind, ExperimentConfig, ExperimentError, EVAL_DOMAINS,
};
use spoofcm::features::{FeatureKind, FeatureMatrix};
use spoofcm::metrics::evaluate;
use spoofcm::protocol::{Domain, ManifestEntry, Split};
use spoofcm::synthgen::{build_corpus, CorpusSpec};

#[test]
fn config_json_round_trip_is_exact() {
    let mut cfg = ExperimentConfig::default();
    cfg.cost_params.c_miss = 1.0222222222222221;
    cfg.gbdt.learning_rate = 0.1 + 0.2;
    let back = ExperimentConfig::from_json(&cfg.to_json()).unwrap();
    assert_eq!(back, cfg);
    assert_eq!(
        back.feature_config(FeatureKind::Cqcc).config_hash(),
        cfg.feature_config(FeatureKind::Cqcc).config_hash()
    );
}

#[test]
fn config_rejects_unknown_and_empty() {
    assert!(matches!(
        ExperimentConfig::from_json(r#"{"feture": "mfcc"}"#),
        Err(ExperimentError::InvalidConfig(_))
    ));
    let cfg = ExperimentConfig::from_json(r#"{"train_domains": []}"#).unwrap();
    assert!(cfg.validate().is_err());
    let cfg = ExperimentConfig::from_json(r#"{"classifier": "gbdt_symmetric", "seed": 3}"#).unwrap();
    assert_eq!(cfg.classifier, ClassifierKind::GbdtSymmetric);
    assert_eq!(cfg.train_domains, vec![Domain::Native]);
}

#[test]
fn cqt_overrides_only_touch_cqcc() {
    let cfg = ExperimentConfig::default();
    let cq = cfg.feature_config(FeatureKind::Cqcc);
    assert_eq!((cq.cqt_bins_per_octave, cq.cqt_octaves), (24, 7));
    let mf = cfg.feature_config(FeatureKind::Mfcc);
    assert_eq!((mf.cqt_bins_per_octave, mf.cqt_octaves), (96, 9));
    assert_eq!(mf.dim(), 60);
}

fn small_corpus(dir: &std::path::Path) -> Vec<ManifestEntry> {
    let spec = CorpusSpec {
        speakers_per_domain: 4,
        utts_per_speaker: 3,
        min_duration_s: 0.6,
        max_duration_s: 0.7,
        ..Default::default()
    };
    build_corpus(&spec, dir).unwrap()
}

#[test]
fn grid_shape_errors_and_composition() {
    let root = tempfile::tempdir().unwrap();
    let corpus = root.path().join("corpus");
    let entries = small_corpus(&corpus);
    let mut cfg = ExperimentConfig::default();
    cfg.gbdt.num_trees = 20;
    // too many components for the available frames: every GMM cell fails
    cfg.gmm.components = 100_000;
    let grid = run_experiment(&corpus, &entries, &root.path().join("work"), &cfg).unwrap();

    assert_eq!(grid.rows.len(), 18);
    assert!(grid.rows.iter().all(|r| r.cells.len() == 2));
    let csv = grid.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 19);
    assert_eq!(
        lines[0],
        "experiment,cm,feature,classifier,native_min_dcf,native_eer_pct,nonnative_min_dcf,nonnative_eer_pct"
    );
    for r in &grid.rows {
        assert_eq!(r.cells.iter().all(Result::is_err), r.classifier == ClassifierKind::Gmm);
    }
    assert_eq!(csv.matches(",ERR,ERR").count(), 2 * 6);
    let table = grid.to_table();
    assert_eq!(table.lines().count(), 20);
    assert!(table.contains("ERR"));

    // the native-CM LFCC cell equals the pipeline run step by step
    let fcfg = cfg.feature_config(FeatureKind::Lfcc);
    let cache = root.path().join("work/cache/lfcc");
    let report = extract_features(&corpus, &entries, &fcfg, &cache).unwrap();
    assert_eq!((report.computed, report.cached), (0, entries.len()));
    let feats = load_features(&entries, &fcfg, &cache).unwrap();
    let by_id: HashMap<&str, &FeatureMatrix> =
        entries.iter().map(|e| e.utt_id.as_str()).zip(feats.iter()).collect();
    let train: Vec<_> = select(&entries, Split::Train, &[Domain::Native])
        .into_iter()
        .map(|e| (e.label, by_id[e.utt_id.as_str()]))
        .collect();
    let model = train_model(&train, ClassifierKind::GbdtDepthwise, &cfg, fcfg.config_hash()).unwrap();
    let row = grid.find(1, FeatureKind::Lfcc, ClassifierKind::GbdtDepthwise).unwrap();
    for (i, d) in EVAL_DOMAINS.iter().enumerate() {
        let sel = select(&entries, Split::Eval, &[*d]);
        let ev = evaluate(&score_entries(&model, &sel, &by_id).unwrap(), &cfg.cost_params).unwrap();
        assert_eq!(row.cells[i].as_ref().unwrap(), &ev);
    }
}

#[test]
fn scoring_refuses_foreign_features() {
    let root = tempfile::tempdir().unwrap();
    let corpus = root.path().join("corpus");
    let entries = small_corpus(&corpus);
    let cfg = ExperimentConfig::default();
    let load = |kind| {
        let fcfg = cfg.feature_config(kind);
        let cache = root.path().join(kind.name());
        extract_features(&corpus, &entries, &fcfg, &cache).unwrap();
        load_features(&entries, &fcfg, &cache).unwrap()
    };
    let lfcc = load(FeatureKind::Lfcc);
    let mfcc = load(FeatureKind::Mfcc);
    let train: Vec<_> = entries
        .iter()
        .zip(&lfcc)
        .filter(|(e, _)| e.split == Split::Train)
        .map(|(e, f)| (e.label, f))
        .collect();
    let hash = cfg.feature_config(FeatureKind::Lfcc).config_hash();
    let model = train_model(&train, ClassifierKind::GbdtSymmetric, &cfg, hash).unwrap();
    let by_id: HashMap<&str, &FeatureMatrix> =
        entries.iter().map(|e| e.utt_id.as_str()).zip(mfcc.iter()).collect();
    let sel = select(&entries, Split::Eval, &[Domain::Native]);
    assert!(matches!(
        score_entries(&model, &sel, &by_id),
        Err(ExperimentError::HashMismatch { .. })
    ));
}
