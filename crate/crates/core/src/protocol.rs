//! Dataset manifests, protocol statistics and speaker-disjoint splits.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use crate::metrics::Label;

pub const MANIFEST_HEADER: &str = "utt_id\tpath\tspeaker_id\tsex\tdomain\tlabel\tattack_id\tsplit";
/// Expected spoof:bonafide ratio and the relative deviation tolerated
/// before a warning is raised.
pub const SPOOF_RATIO: f64 = 6.0;
pub const RATIO_TOLERANCE: f64 = 0.10;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("manifest line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("manifest line {line}: duplicate utterance id '{utt_id}'")]
    DuplicateUtterance { line: usize, utt_id: String },
    #[error("speakers appear in more than one split: {}", .0.join("; "))]
    SpeakerOverlap(Vec<String>),
    #[error("domain {domain} has {found} speakers; at least 3 are needed to split")]
    InsufficientSpeakers { domain: Domain, found: usize },
    #[error("manifest is empty")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

macro_rules! text_enum {
    ($name:ident { $($variant:ident => $text:literal),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
        #[serde(rename_all = "lowercase")]
        pub enum $name {
            $($variant),+
        }

        impl $name {
            pub const ALL: &'static [$name] = &[$($name::$variant),+];

            pub fn as_str(self) -> &'static str {
                match self {
                    $($name::$variant => $text),+
                }
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl FromStr for $name {
            type Err = String;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($text => Ok($name::$variant),)+
                    other => Err(format!(
                        concat!("unknown ", stringify!($name), " '{}'"),
                        other
                    )),
                }
            }
        }
    };
}

text_enum!(Sex { Male => "male", Female => "female", Unknown => "unknown" });
text_enum!(Domain { Native => "native", Nonnative => "nonnative" });
text_enum!(Split { Train => "train", Dev => "dev", Eval => "eval" });

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub utt_id: String,
    pub path: String,
    pub speaker_id: String,
    pub sex: Sex,
    pub domain: Domain,
    pub label: Label,
    /// `"-"` for bonafide trials.
    pub attack_id: String,
    pub split: Split,
}

impl ManifestEntry {
    /// Audio path relative to the directory holding the manifest.
    pub fn resolve(&self, manifest_dir: &Path) -> PathBuf {
        manifest_dir.join(&self.path)
    }
}

fn parse_line(line: usize, text: &str) -> Result<ManifestEntry, ProtocolError> {
    let err = |msg: String| ProtocolError::Parse { line, msg };
    let cols: Vec<&str> = text.split('\t').collect();
    if cols.len() != 8 {
        return Err(err(format!("expected 8 columns, found {}", cols.len())));
    }
    for (name, v) in ["utt_id", "path", "speaker_id", "attack_id"]
        .iter()
        .zip([cols[0], cols[1], cols[2], cols[6]])
    {
        if v.is_empty() {
            return Err(err(format!("empty {name}")));
        }
    }
    let entry = ManifestEntry {
        utt_id: cols[0].to_string(),
        path: cols[1].to_string(),
        speaker_id: cols[2].to_string(),
        sex: cols[3].parse().map_err(err)?,
        domain: cols[4].parse().map_err(err)?,
        label: cols[5].parse().map_err(err)?,
        attack_id: cols[6].to_string(),
        split: cols[7].parse().map_err(err)?,
    };
    let bonafide = entry.label == Label::Bonafide;
    if bonafide != (entry.attack_id == "-") {
        return Err(err(format!(
            "label {} is inconsistent with attack_id '{}'",
            entry.label, entry.attack_id
        )));
    }
    Ok(entry)
}

pub fn parse_manifest(text: &str) -> Result<Vec<ManifestEntry>, ProtocolError> {
    let mut lines = text.split('\n').enumerate();
    match lines.next() {
        Some((_, h)) if h.strip_suffix('\r').unwrap_or(h) == MANIFEST_HEADER => {}
        _ => {
            return Err(ProtocolError::Parse {
                line: 1,
                msg: "missing or malformed header".into(),
            })
        }
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, raw) in lines {
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.is_empty() {
            continue;
        }
        let e = parse_line(i + 1, raw)?;
        if !seen.insert(e.utt_id.clone()) {
            return Err(ProtocolError::DuplicateUtterance {
                line: i + 1,
                utt_id: e.utt_id,
            });
        }
        out.push(e);
    }
    Ok(out)
}

pub fn format_manifest(entries: &[ManifestEntry]) -> String {
    let mut out = String::with_capacity(64 * (entries.len() + 1));
    out.push_str(MANIFEST_HEADER);
    out.push('\n');
    for e in entries {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\n",
            e.utt_id, e.path, e.speaker_id, e.sex, e.domain, e.label, e.attack_id, e.split
        ));
    }
    out
}

pub fn load_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, ProtocolError> {
    parse_manifest(&std::fs::read_to_string(path)?)
}

pub fn save_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<(), ProtocolError> {
    std::fs::write(path, format_manifest(entries))?;
    Ok(())
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroupStats {
    pub bonafide: usize,
    pub spoof: usize,
    /// Unique speakers per sex.
    pub speakers: BTreeMap<Sex, usize>,
    pub attacks: BTreeSet<String>,
}

impl GroupStats {
    pub fn ratio(&self) -> Option<f64> {
        (self.bonafide > 0).then(|| self.spoof as f64 / self.bonafide as f64)
    }

    pub fn num_speakers(&self) -> usize {
        self.speakers.values().sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioWarning {
    pub domain: Domain,
    pub split: Split,
    pub bonafide: usize,
    pub spoof: usize,
}

impl fmt::Display for RatioWarning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}/{}: spoof:bonafide = {}:{} deviates from {}:1 by more than {}%",
            self.domain,
            self.split,
            self.spoof,
            self.bonafide,
            SPOOF_RATIO,
            RATIO_TOLERANCE * 100.0
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ProtocolStats {
    pub groups: BTreeMap<(Domain, Split), GroupStats>,
    pub warnings: Vec<RatioWarning>,
}

impl ProtocolStats {
    pub fn group(&self, domain: Domain, split: Split) -> Option<&GroupStats> {
        self.groups.get(&(domain, split))
    }
}

pub fn validate_protocol(entries: &[ManifestEntry]) -> Result<ProtocolStats, ProtocolError> {
    if entries.is_empty() {
        return Err(ProtocolError::Empty);
    }
    let mut home: BTreeMap<(Domain, &str), BTreeSet<Split>> = BTreeMap::new();
    let mut speakers: BTreeMap<(Domain, Split), BTreeSet<(&str, Sex)>> = BTreeMap::new();
    let mut stats = ProtocolStats::default();
    for e in entries {
        home.entry((e.domain, &e.speaker_id)).or_default().insert(e.split);
        speakers
            .entry((e.domain, e.split))
            .or_default()
            .insert((&e.speaker_id, e.sex));
        let g = stats.groups.entry((e.domain, e.split)).or_default();
        match e.label {
            Label::Bonafide => g.bonafide += 1,
            Label::Spoof => {
                g.spoof += 1;
                g.attacks.insert(e.attack_id.clone());
            }
        }
    }
    let overlaps: Vec<String> = home
        .iter()
        .filter(|(_, splits)| splits.len() > 1)
        .map(|((d, spk), splits)| {
            let names: Vec<&str> = splits.iter().map(|s| s.as_str()).collect();
            format!("{spk} ({d}: {})", names.join(", "))
        })
        .collect();
    if !overlaps.is_empty() {
        return Err(ProtocolError::SpeakerOverlap(overlaps));
    }
    for (key, spk) in speakers {
        let g = stats.groups.get_mut(&key).expect("group exists");
        for (_, sex) in spk {
            *g.speakers.entry(sex).or_default() += 1;
        }
    }
    for (&(domain, split), g) in &stats.groups {
        let off = match g.ratio() {
            Some(r) => (r / SPOOF_RATIO - 1.0).abs() > RATIO_TOLERANCE,
            None => g.spoof > 0,
        };
        if off {
            stats.warnings.push(RatioWarning {
                domain,
                split,
                bonafide: g.bonafide,
                spoof: g.spoof,
            });
        }
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios {
    pub train: f64,
    pub dev: f64,
    pub eval: f64,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 0.7,
            dev: 0.1,
            eval: 0.2,
        }
    }
}

/// Assigns every speaker (with all of its utterances) to a split, per
/// domain. Speakers are visited in a seeded shuffle and each goes to the
/// split with the largest utterance deficit against its target; ties go
/// to the earlier split in train, dev, eval order.
pub fn make_splits(
    entries: &mut [ManifestEntry],
    ratios: SplitRatios,
    seed: u64,
) -> Result<(), ProtocolError> {
    let targets = [ratios.train, ratios.dev, ratios.eval];
    let splits = [Split::Train, Split::Dev, Split::Eval];
    let mut assignment: HashMap<(Domain, String), Split> = HashMap::new();
    for &domain in Domain::ALL {
        // speakers in first-appearance order, with utterance counts
        let mut order: Vec<&str> = Vec::new();
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for e in entries.iter().filter(|e| e.domain == domain) {
            let c = counts.entry(&e.speaker_id).or_insert_with(|| {
                order.push(&e.speaker_id);
                0
            });
            *c += 1;
        }
        if order.is_empty() {
            continue;
        }
        if order.len() < 3 {
            return Err(ProtocolError::InsufficientSpeakers {
                domain,
                found: order.len(),
            });
        }
        let total: usize = counts.values().sum();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (domain as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        order.shuffle(&mut rng);
        let mut assigned = [0usize; 3];
        for spk in order {
            let deficit = |j: usize| targets[j] * total as f64 - assigned[j] as f64;
            let mut best = 0;
            for j in 1..3 {
                if deficit(j) > deficit(best) {
                    best = j;
                }
            }
            assigned[best] += counts[spk];
            assignment.insert((domain, spk.to_string()), splits[best]);
        }
    }
    for e in entries.iter_mut() {
        e.split = assignment[&(e.domain, e.speaker_id.clone())];
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn entry(utt: &str, spk: &str, label: Label, split: Split) -> ManifestEntry {
        ManifestEntry {
            utt_id: utt.into(),
            path: format!("wav/{utt}.wav"),
            speaker_id: spk.into(),
            sex: Sex::Female,
            domain: Domain::Native,
            label,
            attack_id: if label == Label::Bonafide { "-".into() } else { "A01".into() },
            split,
        }
    }

    #[test]
    fn header_only_is_empty() {
        assert!(parse_manifest(&format!("{MANIFEST_HEADER}\n")).unwrap().is_empty());
        assert!(matches!(parse_manifest(""), Err(ProtocolError::Parse { line: 1, .. })));
    }

    #[test]
    fn label_attack_invariant() {
        let text = format!("{MANIFEST_HEADER}\nu1\ta.wav\ts1\tmale\tnative\tbonafide\t-\ttrain\nu2\tb.wav\ts1\tmale\tnative\tbonafide\tA01\ttrain\n");
        assert!(matches!(parse_manifest(&text), Err(ProtocolError::Parse { line: 3, .. })));
    }

    #[test]
    fn duplicate_rejected() {
        let e = vec![
            entry("u1", "s1", Label::Bonafide, Split::Train),
            entry("u1", "s1", Label::Bonafide, Split::Train),
        ];
        assert!(matches!(
            parse_manifest(&format_manifest(&e)),
            Err(ProtocolError::DuplicateUtterance { line: 3, .. })
        ));
    }

    #[test]
    fn overlap_detected() {
        let e = vec![
            entry("u1", "s1", Label::Bonafide, Split::Train),
            entry("u2", "s1", Label::Bonafide, Split::Eval),
        ];
        match validate_protocol(&e) {
            Err(ProtocolError::SpeakerOverlap(v)) => assert!(v[0].contains("train, eval")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn ratio_warning() {
        let mut e = vec![entry("b", "s1", Label::Bonafide, Split::Train)];
        for i in 0..5 {
            e.push(entry(&format!("s{i}"), "s1", Label::Spoof, Split::Train));
        }
        let st = validate_protocol(&e).unwrap();
        assert_eq!(st.warnings.len(), 1);
        e.push(entry("s5", "s1", Label::Spoof, Split::Train));
        assert!(validate_protocol(&e).unwrap().warnings.is_empty());
    }

    fn grid(speakers: usize, utts: usize) -> Vec<ManifestEntry> {
        (0..speakers)
            .flat_map(|s| {
                (0..utts).map(move |u| entry(&format!("s{s}_u{u}"), &format!("s{s}"), Label::Bonafide, Split::Train))
            })
            .collect()
    }

    #[test]
    fn ten_by_ten_exact() {
        for seed in 0..20 {
            let mut e = grid(10, 10);
            make_splits(&mut e, SplitRatios::default(), seed).unwrap();
            let count = |s| e.iter().filter(|x| x.split == s).count();
            assert_eq!((count(Split::Train), count(Split::Dev), count(Split::Eval)), (70, 10, 20));
        }
    }

    #[test]
    fn too_few_speakers() {
        let mut e = grid(2, 5);
        assert!(matches!(
            make_splits(&mut e, SplitRatios::default(), 1),
            Err(ProtocolError::InsufficientSpeakers { found: 2, .. })
        ));
    }

    proptest! {
        #[test]
        fn splits_are_disjoint_and_balanced(
            sizes in prop::collection::vec(1usize..15, 3..25),
            seed in 0u64..1000,
        ) {
            let mut e: Vec<ManifestEntry> = sizes.iter().enumerate().flat_map(|(s, &n)| {
                (0..n).map(move |u| entry(&format!("s{s}_u{u}"), &format!("s{s}"), Label::Bonafide, Split::Train))
            }).collect();
            make_splits(&mut e, SplitRatios::default(), seed).unwrap();
            prop_assert!(validate_protocol(&e).is_ok());
            let total = e.len() as f64;
            let max_spk = *sizes.iter().max().unwrap() as f64;
            for (s, r) in [(Split::Train, 0.7), (Split::Dev, 0.1), (Split::Eval, 0.2)] {
                let c = e.iter().filter(|x| x.split == s).count() as f64;
                prop_assert!((c - r * total).abs() <= max_spk);
            }
            let text = format_manifest(&e);
            let back = parse_manifest(&text).unwrap();
            prop_assert_eq!(format_manifest(&back), text);
            prop_assert_eq!(validate_protocol(&back).unwrap(), validate_protocol(&e).unwrap());
        }
    }
}
