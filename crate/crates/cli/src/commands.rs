use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use spoofcm::classifiers::{load_model, save_model};
use spoofcm::experiment::{
    extract_features, load_features, run_experiment, score_entries, select, train_model,
    ExperimentConfig,
};
use spoofcm::features::FeatureMatrix;
use spoofcm::metrics::{evaluate, per_attack, read_scores, write_scores, Evaluation};
use spoofcm::protocol::{load_manifest, validate_protocol, ManifestEntry, Split};
use spoofcm::synthgen::{build_corpus, CorpusSpec};

use crate::{
    Command, ConfigArgs, CorpusArgs, EvaluateArgs, ExperimentArgs, ExtractArgs, ManifestCommand,
    ScoreArgs, SynthArgs, TrainArgs,
};

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth(a) => synth(a),
        Command::Extract(a) => extract(a),
        Command::Train(a) => train(a),
        Command::Score(a) => score(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Experiment(a) => experiment(a),
        Command::Manifest(ManifestCommand::Validate { manifest }) => validate(&manifest),
    }
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .with_context(|| format!("reading config {}", p.display()))?;
                ExperimentConfig::from_json(&text)
                    .with_context(|| format!("parsing config {}", p.display()))?
            }
            None => ExperimentConfig::default(),
        };
        macro_rules! set {
            ($($flag:ident => $($field:ident).+),* $(,)?) => {
                $(if let Some(v) = &self.$flag {
                    c.$($field).+ = v.clone().into();
                })*
            };
        }
        set!(
            feature => feature,
            classifier => classifier,
            train_domains => train_domains,
            eval_domains => eval_domains,
            seed => seed,
            c_miss => cost_params.c_miss,
            c_fa => cost_params.c_fa,
            pi_spf => cost_params.pi_spf,
            gmm_components => gmm.components,
            gmm_max_iter => gmm.max_iter,
            gmm_max_frames_per_class => gmm.max_frames_per_class,
            gbdt_num_trees => gbdt.num_trees,
            gbdt_max_depth => gbdt.max_depth,
            gbdt_learning_rate => gbdt.learning_rate,
            features => features,
            classifiers => classifiers,
        );
        let o = &mut c.feature_overrides;
        if self.num_ceps.is_some() {
            o.num_ceps = self.num_ceps;
        }
        if self.include_c0.is_some() {
            o.include_c0 = self.include_c0;
        }
        if self.dynamics.is_some() {
            o.dynamics = self.dynamics;
        }
        if self.num_filters.is_some() {
            o.num_filters = self.num_filters;
        }
        if self.cqt_bins_per_octave.is_some() {
            o.cqt_bins_per_octave = self.cqt_bins_per_octave;
        }
        if self.cqt_octaves.is_some() {
            o.cqt_octaves = self.cqt_octaves;
        }
        if self.resample_period.is_some() {
            o.resample_period = self.resample_period;
        }
        c.validate()?;
        Ok(c)
    }
}

impl CorpusArgs {
    fn resolve(&self, seed: Option<u64>) -> Result<CorpusSpec> {
        let mut spec = match &self.corpus_config {
            Some(p) => serde_json::from_str(
                &std::fs::read_to_string(p)
                    .with_context(|| format!("reading corpus config {}", p.display()))?,
            )
            .with_context(|| format!("parsing corpus config {}", p.display()))?,
            None => CorpusSpec::default(),
        };
        if let Some(v) = self.speakers_per_domain {
            spec.speakers_per_domain = v;
        }
        if let Some(v) = self.utts_per_speaker {
            spec.utts_per_speaker = v;
        }
        if !self.recipes.is_empty() {
            spec.recipes = self.recipes.clone();
        }
        if let Some(v) = self.min_duration_s {
            spec.min_duration_s = v;
        }
        if let Some(v) = self.max_duration_s {
            spec.max_duration_s = v;
        }
        if let Some(s) = seed {
            spec.seed = s;
        }
        spec.validate()?;
        Ok(spec)
    }
}

fn manifest_dir(manifest: &Path) -> PathBuf {
    manifest
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."))
}

fn load(manifest: &Path) -> Result<Vec<ManifestEntry>> {
    let entries = load_manifest(manifest)
        .with_context(|| format!("loading manifest {}", manifest.display()))?;
    for w in validate_protocol(&entries)?.warnings {
        log::warn!("{w}");
    }
    Ok(entries)
}

fn synth(a: SynthArgs) -> Result<()> {
    let spec = a.corpus.resolve(a.seed)?;
    let entries = build_corpus(&spec, &a.out)?;
    let path = a.out.join("manifest.tsv");
    eprintln!("{} utterances", entries.len());
    println!("{}", path.display());
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let entries = load(&a.manifest)?;
    let fcfg = cfg.feature_config(cfg.feature);
    let report = extract_features(&manifest_dir(&a.manifest), &entries, &fcfg, &a.cache_dir)?;
    println!(
        "{}: {} computed, {} cached, {} failed (dim {})",
        cfg.feature,
        report.computed,
        report.cached,
        report.failures.len(),
        fcfg.dim()
    );
    if !report.failures.is_empty() {
        for (utt, err) in &report.failures {
            eprintln!("  {utt}: {err}");
        }
        bail!("feature extraction failed for {} utterance(s)", report.failures.len());
    }
    Ok(())
}

fn features_for(
    entries: &[&ManifestEntry],
    cfg: &ExperimentConfig,
    cache_dir: &Path,
) -> Result<Vec<FeatureMatrix>> {
    let owned: Vec<ManifestEntry> = entries.iter().map(|e| (*e).clone()).collect();
    Ok(load_features(&owned, &cfg.feature_config(cfg.feature), cache_dir)?)
}

fn train(a: TrainArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let entries = load(&a.manifest)?;
    let train = select(&entries, Split::Train, &cfg.train_domains);
    if train.is_empty() {
        bail!("no training utterances in domains {:?}", cfg.train_domains);
    }
    let feats = features_for(&train, &cfg, &a.cache_dir)?;
    let data: Vec<_> = train.iter().map(|e| e.label).zip(feats.iter()).collect();
    let hash = cfg.feature_config(cfg.feature).config_hash();
    let model = train_model(&data, cfg.classifier, &cfg, hash)?;
    save_model(&model, &a.model_out)?;
    println!(
        "{} model trained on {} utterances -> {}",
        model.kind_name(),
        train.len(),
        a.model_out.display()
    );
    Ok(())
}

fn score(a: ScoreArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let model = load_model(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let fcfg = cfg.feature_config(cfg.feature);
    if fcfg.config_hash() != model.feature_config_hash() {
        bail!(
            "model feature hash {:016x} does not match {} config hash {:016x}",
            model.feature_config_hash(),
            cfg.feature,
            fcfg.config_hash()
        );
    }
    let entries = load(&a.manifest)?;
    let sel = select(&entries, a.split, &[a.eval_domain]);
    if sel.is_empty() {
        bail!("no {} utterances in domain {}", a.split, a.eval_domain);
    }
    let feats = features_for(&sel, &cfg, &a.cache_dir)?;
    let by_id: HashMap<&str, &FeatureMatrix> =
        sel.iter().map(|e| e.utt_id.as_str()).zip(feats.iter()).collect();
    let scores = score_entries(&model, &sel, &by_id)?;
    write_scores(&a.scores_out, &scores)?;
    println!("{} scores -> {}", scores.entries.len(), a.scores_out.display());
    Ok(())
}

fn print_eval(name: &str, ev: &Evaluation) {
    println!(
        "{name:<10} minDCF {:.3}  EER {:.2}%  (bonafide {}, spoof {})",
        ev.min_dcf,
        100.0 * ev.eer,
        ev.n_bonafide,
        ev.n_spoof
    );
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let scores = read_scores(&a.scores).with_context(|| format!("reading {}", a.scores.display()))?;
    let ev = evaluate(&scores, &cfg.cost_params)?;
    print_eval("pooled", &ev);
    if let Some(m) = &a.manifest {
        let entries = load(m)?;
        let attack: HashMap<&str, &str> = entries
            .iter()
            .map(|e| (e.utt_id.as_str(), e.attack_id.as_str()))
            .collect();
        let lookup = |id: &str| attack.get(id).map(|s| s.to_string());
        for (name, set) in per_attack(&scores, &lookup) {
            print_eval(&name, &evaluate(&set, &cfg.cost_params)?);
        }
    }
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let cfg = a.config.resolve()?;
    let manifest = match (&a.synth, &a.manifest) {
        (Some(dir), _) => {
            let spec = a.corpus.resolve(Some(cfg.seed))?;
            build_corpus(&spec, dir)?;
            dir.join("manifest.tsv")
        }
        (None, Some(m)) => m.clone(),
        (None, None) => bail!("either --manifest or --synth is required"),
    };
    let entries = load(&manifest)?;
    let mdir = manifest_dir(&manifest);
    let work = a.work_dir.clone().unwrap_or_else(|| mdir.join("experiment"));
    let grid = run_experiment(&mdir, &entries, &work, &cfg)?;
    let out = a.out_dir.clone().unwrap_or_else(|| work.clone());
    std::fs::create_dir_all(&out)?;
    let table = grid.to_table();
    std::fs::write(out.join("results.csv"), grid.to_csv())?;
    std::fs::write(out.join("results.txt"), &table)?;
    let config: serde_json::Value = serde_json::from_str(&cfg.to_json())?;
    let meta = serde_json::json!({
        "config": config,
        "dynamics": serde_json::to_value(cfg.feature_config(cfg.feature).dynamics)?,
        "gbdt_pooling": "mean+std",
        "gmm_score": "mean frame llr",
        "eval_split": "eval",
        "dev_metrics": "logged only",
    });
    std::fs::write(out.join("metadata.json"), serde_json::to_string_pretty(&meta)? + "\n")?;
    print!("{table}");
    eprintln!("results -> {}", out.join("results.csv").display());
    Ok(())
}

fn validate(manifest: &Path) -> Result<()> {
    let entries = load_manifest(manifest)?;
    let stats = validate_protocol(&entries)?;
    println!(
        "{:<10} {:<6} {:>9} {:>7} {:>6} {:>8} {:>8}",
        "domain", "split", "bonafide", "spoof", "ratio", "speakers", "attacks"
    );
    for ((domain, split), g) in &stats.groups {
        println!(
            "{:<10} {:<6} {:>9} {:>7} {:>6} {:>8} {:>8}",
            domain.as_str(),
            split.as_str(),
            g.bonafide,
            g.spoof,
            g.ratio().map(|r| format!("{r:.2}")).unwrap_or_else(|| "-".into()),
            g.num_speakers(),
            g.attacks.len()
        );
    }
    for w in &stats.warnings {
        println!("warning: {w}");
    }
    Ok(())
}
