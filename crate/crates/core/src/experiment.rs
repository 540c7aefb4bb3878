//! End-to-end pipeline: cached feature extraction, CM training, scoring and
//! the native-versus-combined training grid.

use std::collections::HashMap;
use std::fmt;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::audio::{load_clip, AudioError};
use crate::classifiers::{
    gbdt_fit, gbdt_score, gmm_fit_em, gmm_score_utterance, pool_features, ClassifierError,
    CmModel, FrameSet, GbdtParams, GmmPairCm, GmmParams, GrowPreset,
};
use crate::features::{
    extract, read_record, write_record, CacheError, Dynamics, FeatureConfig, FeatureError,
    FeatureKind, FeatureMatrix,
};
use crate::metrics::{evaluate, CostParams, Evaluation, Label, MetricsError, ScoreSet};
use crate::protocol::{Domain, ManifestEntry, ProtocolError, Split};

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("{utt_id}: {source}")]
    Audio { utt_id: String, source: AudioError },
    #[error("{utt_id}: {source}")]
    Feature { utt_id: String, source: FeatureError },
    #[error("{utt_id}: {source}")]
    Cache { utt_id: String, source: CacheError },
    #[error("feature extraction failed for {} utterance(s): {}", .0.len(), .0.iter().map(|(u, e)| format!("{u} ({e})")).collect::<Vec<_>>().join("; "))]
    ExtractionFailed(Vec<(String, String)>),
    #[error("model was trained on features with hash {model:016x}, cache uses {cache:016x}")]
    HashMismatch { model: u64, cache: u64 },
    #[error("no {0} utterances selected")]
    NoData(String),
    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Classifier(#[from] ClassifierError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    Gmm,
    GbdtDepthwise,
    GbdtSymmetric,
}

impl ClassifierKind {
    pub const ALL: [ClassifierKind; 3] = [
        ClassifierKind::Gmm,
        ClassifierKind::GbdtDepthwise,
        ClassifierKind::GbdtSymmetric,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ClassifierKind::Gmm => "gmm",
            ClassifierKind::GbdtDepthwise => "gbdt_depthwise",
            ClassifierKind::GbdtSymmetric => "gbdt_symmetric",
        }
    }
}

impl fmt::Display for ClassifierKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.pad(self.as_str())
    }
}

impl FromStr for ClassifierKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| format!("unknown classifier '{s}' (gmm, gbdt_depthwise, gbdt_symmetric)"))
    }
}

/// Optional replacements for the front-end defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureOverrides {
    pub num_ceps: Option<usize>,
    pub include_c0: Option<bool>,
    pub dynamics: Option<Dynamics>,
    pub num_filters: Option<usize>,
    pub cqt_bins_per_octave: Option<usize>,
    pub cqt_octaves: Option<usize>,
    pub resample_period: Option<usize>,
}

impl FeatureOverrides {
    pub fn apply(&self, kind: FeatureKind) -> FeatureConfig {
        let mut c = FeatureConfig::new(kind);
        if let Some(v) = self.num_ceps {
            c.num_ceps = v;
        }
        if let Some(v) = self.include_c0 {
            c.include_c0 = v;
        }
        if let Some(v) = self.dynamics {
            c.dynamics = v;
        }
        if let Some(v) = self.num_filters {
            c.num_filters = v;
        }
        if kind == FeatureKind::Cqcc {
            if let Some(v) = self.cqt_bins_per_octave {
                c.cqt_bins_per_octave = v;
            }
            if let Some(v) = self.cqt_octaves {
                c.cqt_octaves = v;
            }
            if let Some(v) = self.resample_period {
                c.resample_period = v;
            }
        }
        c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmmSettings {
    pub components: usize,
    pub max_iter: usize,
    /// Training frames kept per class, evenly strided.
    pub max_frames_per_class: usize,
}

impl Default for GmmSettings {
    fn default() -> Self {
        Self {
            components: 2,
            max_iter: 100,
            max_frames_per_class: 8000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbdtSettings {
    pub num_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
}

impl Default for GbdtSettings {
    fn default() -> Self {
        Self {
            num_trees: 100,
            max_depth: 6,
            learning_rate: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub feature: FeatureKind,
    pub classifier: ClassifierKind,
    pub train_domains: Vec<Domain>,
    pub eval_domains: Vec<Domain>,
    pub seed: u64,
    pub cost_params: CostParams,
    pub feature_overrides: FeatureOverrides,
    pub gmm: GmmSettings,
    pub gbdt: GbdtSettings,
    /// Grid axes for the full experiment.
    pub features: Vec<FeatureKind>,
    pub classifiers: Vec<ClassifierKind>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            feature: FeatureKind::Lfcc,
            classifier: ClassifierKind::Gmm,
            train_domains: vec![Domain::Native],
            eval_domains: vec![Domain::Native, Domain::Nonnative],
            seed: 42,
            cost_params: CostParams::default(),
            feature_overrides: FeatureOverrides {
                cqt_bins_per_octave: Some(24),
                cqt_octaves: Some(7),
                ..Default::default()
            },
            gmm: GmmSettings::default(),
            gbdt: GbdtSettings::default(),
            features: FeatureKind::ALL.to_vec(),
            classifiers: ClassifierKind::ALL.to_vec(),
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::InvalidConfig(m.to_string()));
        if self.train_domains.is_empty() || self.eval_domains.is_empty() {
            return bad("train_domains and eval_domains must be non-empty");
        }
        if self.features.is_empty() || self.classifiers.is_empty() {
            return bad("features and classifiers must be non-empty");
        }
        self.cost_params.validate()?;
        for &k in &self.features {
            self.feature_config(k)
                .validate()
                .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
        }
        Ok(())
    }

    pub fn feature_config(&self, kind: FeatureKind) -> FeatureConfig {
        self.feature_overrides.apply(kind)
    }

    pub fn from_json(text: &str) -> Result<Self, ExperimentError> {
        serde_json::from_str(text).map_err(|e| ExperimentError::InvalidConfig(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

fn cache_path(cache_dir: &Path, utt_id: &str) -> PathBuf {
    cache_dir.join(format!("{utt_id}.feat"))
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ExtractReport {
    pub computed: usize,
    pub cached: usize,
    pub failures: Vec<(String, String)>,
}

/// Writes one feature record per entry into `cache_dir`, skipping records
/// already produced under the same config. Failures are collected rather
/// than aborting the run.
pub fn extract_features(
    manifest_dir: &Path,
    entries: &[ManifestEntry],
    cfg: &FeatureConfig,
    cache_dir: &Path,
) -> Result<ExtractReport, ExperimentError> {
    cfg.validate()
        .map_err(|e| ExperimentError::InvalidConfig(e.to_string()))?;
    std::fs::create_dir_all(cache_dir)?;
    let outcomes: Vec<Result<bool, (String, String)>> = entries
        .par_iter()
        .map(|e| {
            let path = cache_path(cache_dir, &e.utt_id);
            if path.exists() && read_record(&path, cfg, &e.utt_id).is_ok() {
                return Ok(false);
            }
            let fail = |m: String| (e.utt_id.clone(), m);
            let clip = load_clip(e.resolve(manifest_dir), &e.utt_id).map_err(|x| fail(x.to_string()))?;
            let feats = extract(&clip, cfg).map_err(|x| fail(x.to_string()))?;
            write_record(&path, &feats).map_err(|x| fail(x.to_string()))?;
            Ok(true)
        })
        .collect();
    let mut report = ExtractReport::default();
    for o in outcomes {
        match o {
            Ok(true) => report.computed += 1,
            Ok(false) => report.cached += 1,
            Err(f) => report.failures.push(f),
        }
    }
    Ok(report)
}

/// Loads cached features for `entries`, in order.
pub fn load_features(
    entries: &[ManifestEntry],
    cfg: &FeatureConfig,
    cache_dir: &Path,
) -> Result<Vec<FeatureMatrix>, ExperimentError> {
    entries
        .par_iter()
        .map(|e| {
            read_record(cache_path(cache_dir, &e.utt_id), cfg, &e.utt_id).map_err(|source| {
                ExperimentError::Cache {
                    utt_id: e.utt_id.clone(),
                    source,
                }
            })
        })
        .collect()
}

/// Entries of `split` whose domain is listed.
pub fn select<'a>(
    entries: &'a [ManifestEntry],
    split: Split,
    domains: &[Domain],
) -> Vec<&'a ManifestEntry> {
    entries
        .iter()
        .filter(|e| e.split == split && domains.contains(&e.domain))
        .collect()
}

fn label_value(l: Label) -> f64 {
    match l {
        Label::Bonafide => 1.0,
        Label::Spoof => 0.0,
    }
}

/// Trains one countermeasure on `(label, features)` pairs.
pub fn train_model(
    data: &[(Label, &FeatureMatrix)],
    classifier: ClassifierKind,
    cfg: &ExperimentConfig,
    feature_hash: u64,
) -> Result<CmModel, ExperimentError> {
    let Some((_, first)) = data.first() else {
        return Err(ExperimentError::NoData("training".into()));
    };
    let dim = first.dim;
    match classifier {
        ClassifierKind::Gmm => {
            let mut bona = FrameSet::new(dim);
            let mut spoof = FrameSet::new(dim);
            for (label, f) in data {
                let set = if *label == Label::Bonafide { &mut bona } else { &mut spoof };
                for row in f.rows() {
                    set.push(row);
                }
            }
            if bona.is_empty() || spoof.is_empty() {
                return Err(ClassifierError::SingleClass.into());
            }
            let params = GmmParams {
                components: cfg.gmm.components,
                max_iter: cfg.gmm.max_iter,
                seed: cfg.seed,
                ..Default::default()
            };
            let cap = cfg.gmm.max_frames_per_class;
            let b = gmm_fit_em(&bona.subsample(cap), &params)?;
            let s = gmm_fit_em(&spoof.subsample(cap), &params)?;
            Ok(CmModel::Gmm(GmmPairCm::new(b, s, feature_hash)?))
        }
        ClassifierKind::GbdtDepthwise | ClassifierKind::GbdtSymmetric => {
            let mut x = FrameSet::new(2 * dim);
            let mut y = Vec::with_capacity(data.len());
            for (label, f) in data {
                x.push(&pool_features(f)?.values);
                y.push(label_value(*label));
            }
            let params = GbdtParams {
                num_trees: cfg.gbdt.num_trees,
                max_depth: cfg.gbdt.max_depth,
                learning_rate: cfg.gbdt.learning_rate,
                preset: if classifier == ClassifierKind::GbdtDepthwise {
                    GrowPreset::Depthwise
                } else {
                    GrowPreset::Symmetric
                },
                seed: cfg.seed,
                ..Default::default()
            };
            let mut m = gbdt_fit(&x, &y, &params)?;
            m.feature_config_hash = feature_hash;
            Ok(CmModel::Gbdt(m))
        }
    }
}

pub fn score_utterance(model: &CmModel, features: &FeatureMatrix) -> Result<f64, ExperimentError> {
    let hash = features.config.config_hash();
    if model.feature_config_hash() != hash {
        return Err(ExperimentError::HashMismatch {
            model: model.feature_config_hash(),
            cache: hash,
        });
    }
    Ok(match model {
        CmModel::Gmm(m) => gmm_score_utterance(m, features)?,
        CmModel::Gbdt(m) => gbdt_score(m, &pool_features(features)?.values)?,
    })
}

pub fn score_entries(
    model: &CmModel,
    entries: &[&ManifestEntry],
    features: &HashMap<&str, &FeatureMatrix>,
) -> Result<ScoreSet, ExperimentError> {
    let mut set = ScoreSet::new();
    for e in entries {
        let f = features
            .get(e.utt_id.as_str())
            .ok_or_else(|| ExperimentError::NoData(format!("features for {}", e.utt_id)))?;
        set.push(e.utt_id.clone(), score_utterance(model, f)?, e.label);
    }
    Ok(set)
}

/// One training arm of the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arm {
    pub number: u32,
    pub name: &'static str,
    pub train_domains: &'static [Domain],
}

pub const ARMS: [Arm; 2] = [
    Arm {
        number: 1,
        name: "Native CM",
        train_domains: &[Domain::Native],
    },
    Arm {
        number: 2,
        name: "Combined CM",
        train_domains: &[Domain::Native, Domain::Nonnative],
    },
];

#[derive(Debug, Clone, PartialEq)]
pub struct GridRow {
    pub arm: Arm,
    pub feature: FeatureKind,
    pub classifier: ClassifierKind,
    /// Per evaluation domain, in `EVAL_DOMAINS` order.
    pub cells: Vec<Result<Evaluation, String>>,
}

pub const EVAL_DOMAINS: [Domain; 2] = [Domain::Native, Domain::Nonnative];

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GridResults {
    pub rows: Vec<GridRow>,
}

impl GridResults {
    pub fn find(&self, arm: u32, feature: FeatureKind, classifier: ClassifierKind) -> Option<&GridRow> {
        self.rows
            .iter()
            .find(|r| r.arm.number == arm && r.feature == feature && r.classifier == classifier)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("experiment,cm,feature,classifier");
        for d in EVAL_DOMAINS {
            let _ = write!(out, ",{d}_min_dcf,{d}_eer_pct");
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "{},{},{},{}", r.arm.number, r.arm.name, r.feature, r.classifier);
            for c in &r.cells {
                match c {
                    Ok(ev) => {
                        let _ = write!(out, ",{},{}", ev.min_dcf, 100.0 * ev.eer);
                    }
                    Err(_) => out.push_str(",ERR,ERR"),
                }
            }
            out.push('\n');
        }
        out
    }

    /// Aligned text grid with minDCF to three decimals and EER in percent.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{:<5} {:<12} {:<6} {:<15}", "Exp.", "CM", "Feat.", "Classifier");
        for d in EVAL_DOMAINS {
            let _ = write!(out, " | {:>10} {:>8}", format!("{d} DCF"), "EER(%)");
        }
        out.push('\n');
        out.push_str(&"-".repeat(out.trim_end().len()));
        out.push('\n');
        for r in &self.rows {
            let _ = write!(
                out,
                "{:<5} {:<12} {:<6} {:<15}",
                r.arm.number,
                r.arm.name,
                r.feature.name().to_uppercase(),
                r.classifier
            );
            for c in &r.cells {
                match c {
                    Ok(ev) => {
                        let _ = write!(out, " | {:>10.3} {:>8.2}", ev.min_dcf, 100.0 * ev.eer);
                    }
                    Err(_) => {
                        let _ = write!(out, " | {:>10} {:>8}", "ERR", "ERR");
                    }
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Runs both training arms over the feature × classifier grid. Features
/// are extracted once per kind into `work_dir/cache/<kind>`; cells that
/// fail are recorded as errors and the grid continues.
pub fn run_experiment(
    manifest_dir: &Path,
    entries: &[ManifestEntry],
    work_dir: &Path,
    cfg: &ExperimentConfig,
) -> Result<GridResults, ExperimentError> {
    cfg.validate()?;
    let mut results = GridResults::default();
    for &kind in &cfg.features {
        let fcfg = cfg.feature_config(kind);
        let hash = fcfg.config_hash();
        let cache = work_dir.join("cache").join(kind.name());
        let report = extract_features(manifest_dir, entries, &fcfg, &cache)?;
        log::info!(
            "{kind}: {} computed, {} cached, {} failed",
            report.computed,
            report.cached,
            report.failures.len()
        );
        let ok: Vec<&ManifestEntry> = {
            let failed: std::collections::HashSet<&str> =
                report.failures.iter().map(|(u, _)| u.as_str()).collect();
            entries.iter().filter(|e| !failed.contains(e.utt_id.as_str())).collect()
        };
        let owned: Vec<ManifestEntry> = ok.iter().map(|e| (*e).clone()).collect();
        let feats = load_features(&owned, &fcfg, &cache)?;
        let by_id: HashMap<&str, &FeatureMatrix> =
            owned.iter().map(|e| e.utt_id.as_str()).zip(feats.iter()).collect();

        for &classifier in &cfg.classifiers {
            for arm in ARMS {
                let cells = run_cell(&owned, &by_id, arm, classifier, cfg, hash);
                results.rows.push(GridRow {
                    arm,
                    feature: kind,
                    classifier,
                    cells,
                });
            }
        }
    }
    results.rows.sort_by_key(|r| {
        (
            r.arm.number,
            cfg.features.iter().position(|&f| f == r.feature),
            cfg.classifiers.iter().position(|&c| c == r.classifier),
        )
    });
    Ok(results)
}

fn run_cell(
    entries: &[ManifestEntry],
    feats: &HashMap<&str, &FeatureMatrix>,
    arm: Arm,
    classifier: ClassifierKind,
    cfg: &ExperimentConfig,
    hash: u64,
) -> Vec<Result<Evaluation, String>> {
    let train: Vec<(Label, &FeatureMatrix)> = select(entries, Split::Train, arm.train_domains)
        .into_iter()
        .map(|e| (e.label, feats[e.utt_id.as_str()]))
        .collect();
    let model = match train_model(&train, classifier, cfg, hash) {
        Ok(m) => m,
        Err(e) => {
            log::warn!("{} {classifier}: training failed: {e}", arm.name);
            return EVAL_DOMAINS.iter().map(|_| Err(e.to_string())).collect();
        }
    };
    let eval_on = |split: Split, d: Domain| -> Result<Evaluation, String> {
        let sel = select(entries, split, &[d]);
        let scores = score_entries(&model, &sel, feats).map_err(|e| e.to_string())?;
        evaluate(&scores, &cfg.cost_params).map_err(|e| e.to_string())
    };
    if let Ok(dev) = eval_on(Split::Dev, Domain::Native) {
        log::info!(
            "{} {classifier} dev(native): minDCF {:.3} EER {:.2}%",
            arm.name,
            dev.min_dcf,
            100.0 * dev.eer
        );
    }
    EVAL_DOMAINS.iter().map(|&d| eval_on(Split::Eval, d)).collect()
}
