//! Detection metrics: normalized DCF, its minimum over thresholds, and EER.
//!
//! Scores follow the "higher means bonafide" convention and a trial is
//! accepted as bonafide iff `score >= τ`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("score set needs at least one bonafide and one spoof entry")]
    MissingClass,
    #[error("non-finite score for {0}")]
    NonFiniteScore(String),
    #[error("invalid cost parameters: {0}")]
    InvalidCost(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Bonafide,
    Spoof,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Bonafide => "bonafide",
            Label::Spoof => "spoof",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "bonafide" => Ok(Label::Bonafide),
            "spoof" => Ok(Label::Spoof),
            other => Err(format!("unknown label '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CostParams {
    pub c_miss: f64,
    pub c_fa: f64,
    /// Prior probability of a spoof trial.
    pub pi_spf: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            c_miss: 1.0,
            c_fa: 10.0,
            pi_spf: 0.05,
        }
    }
}

impl CostParams {
    pub fn validate(&self) -> Result<(), MetricsError> {
        if !(self.c_miss > 0.0 && self.c_fa > 0.0 && self.pi_spf > 0.0 && self.pi_spf < 1.0) {
            return Err(MetricsError::InvalidCost(format!(
                "need c_miss > 0, c_fa > 0, 0 < pi_spf < 1 (got {}, {}, {})",
                self.c_miss, self.c_fa, self.pi_spf
            )));
        }
        Ok(())
    }
}

/// Weight of the miss rate in the normalized DCF.
pub fn beta(params: &CostParams) -> f64 {
    (params.c_miss * (1.0 - params.pi_spf)) / (params.c_fa * params.pi_spf)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreEntry {
    pub utt_id: String,
    pub score: f64,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreSet {
    pub entries: Vec<ScoreEntry>,
}

impl ScoreSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, utt_id: impl Into<String>, score: f64, label: Label) {
        self.entries.push(ScoreEntry {
            utt_id: utt_id.into(),
            score,
            label,
        });
    }

    /// Builds a set from separate bonafide and spoof score lists.
    pub fn from_scores(bonafide: &[f64], spoof: &[f64]) -> Self {
        let mut s = Self::new();
        for (i, &v) in bonafide.iter().enumerate() {
            s.push(format!("b{i}"), v, Label::Bonafide);
        }
        for (i, &v) in spoof.iter().enumerate() {
            s.push(format!("s{i}"), v, Label::Spoof);
        }
        s
    }

    pub fn count(&self, label: Label) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }

    fn check(&self) -> Result<(usize, usize), MetricsError> {
        if let Some(e) = self.entries.iter().find(|e| !e.score.is_finite()) {
            return Err(MetricsError::NonFiniteScore(e.utt_id.clone()));
        }
        let nb = self.count(Label::Bonafide);
        let ns = self.entries.len() - nb;
        if nb == 0 || ns == 0 {
            return Err(MetricsError::MissingClass);
        }
        Ok((nb, ns))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetPoint {
    pub threshold: f64,
    pub p_miss: f64,
    pub p_fa: f64,
}

/// Operating points ordered by increasing threshold, from accept-all
/// (`τ = −∞`) to reject-all (`τ = +∞`).
#[derive(Debug, Clone, PartialEq)]
pub struct DetCurve {
    pub points: Vec<DetPoint>,
}

pub fn det_curve(scores: &ScoreSet) -> Result<DetCurve, MetricsError> {
    let (nb, ns) = scores.check()?;
    let mut sorted: Vec<(f64, Label)> = scores.entries.iter().map(|e| (e.score, e.label)).collect();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut points = Vec::with_capacity(sorted.len() + 2);
    points.push(DetPoint {
        threshold: f64::NEG_INFINITY,
        p_miss: 0.0,
        p_fa: 1.0,
    });
    // counts of entries strictly below the current threshold
    let (mut bona_below, mut spoof_below) = (0usize, 0usize);
    let mut i = 0;
    while i < sorted.len() {
        let tau = sorted[i].0;
        points.push(DetPoint {
            threshold: tau,
            p_miss: bona_below as f64 / nb as f64,
            p_fa: (ns - spoof_below) as f64 / ns as f64,
        });
        while i < sorted.len() && sorted[i].0 == tau {
            match sorted[i].1 {
                Label::Bonafide => bona_below += 1,
                Label::Spoof => spoof_below += 1,
            }
            i += 1;
        }
    }
    points.push(DetPoint {
        threshold: f64::INFINITY,
        p_miss: 1.0,
        p_fa: 0.0,
    });
    Ok(DetCurve { points })
}

fn min_dcf_on(curve: &DetCurve, b: f64) -> f64 {
    curve
        .points
        .iter()
        .map(|p| b * p.p_miss + p.p_fa)
        .fold(f64::INFINITY, f64::min)
}

/// Linear interpolation between the last point with `p_miss < p_fa` and
/// the first with `p_miss >= p_fa`.
fn eer_on(curve: &DetCurve) -> f64 {
    let pts = &curve.points;
    let idx = pts
        .iter()
        .position(|p| p.p_miss >= p.p_fa)
        .expect("reject-all endpoint always satisfies p_miss >= p_fa");
    if idx == 0 {
        return pts[0].p_miss;
    }
    let (a, b) = (&pts[idx - 1], &pts[idx]);
    let denom = (b.p_miss - a.p_miss) - (b.p_fa - a.p_fa);
    let t = (a.p_fa - a.p_miss) / denom;
    a.p_miss + t * (b.p_miss - a.p_miss)
}

pub fn min_dcf(scores: &ScoreSet, params: &CostParams) -> Result<f64, MetricsError> {
    params.validate()?;
    Ok(min_dcf_on(&det_curve(scores)?, beta(params)))
}

pub fn eer(scores: &ScoreSet) -> Result<f64, MetricsError> {
    Ok(eer_on(&det_curve(scores)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Evaluation {
    pub min_dcf: f64,
    pub eer: f64,
    pub n_bonafide: usize,
    pub n_spoof: usize,
}

pub fn evaluate(scores: &ScoreSet, params: &CostParams) -> Result<Evaluation, MetricsError> {
    params.validate()?;
    let curve = det_curve(scores)?;
    Ok(Evaluation {
        min_dcf: min_dcf_on(&curve, beta(params)),
        eer: eer_on(&curve),
        n_bonafide: scores.count(Label::Bonafide),
        n_spoof: scores.count(Label::Spoof),
    })
}

/// Splits a score set into one set per attack: all bonafide trials plus the
/// spoof trials of that attack. `attack_of` maps spoof utterance ids to
/// attack ids; unmapped spoofs are grouped under `"?"`.
pub fn per_attack(
    scores: &ScoreSet,
    attack_of: &dyn Fn(&str) -> Option<String>,
) -> BTreeMap<String, ScoreSet> {
    let bona: Vec<&ScoreEntry> = scores
        .entries
        .iter()
        .filter(|e| e.label == Label::Bonafide)
        .collect();
    let mut groups: BTreeMap<String, ScoreSet> = BTreeMap::new();
    for e in scores.entries.iter().filter(|e| e.label == Label::Spoof) {
        let key = attack_of(&e.utt_id).unwrap_or_else(|| "?".to_string());
        groups
            .entry(key)
            .or_insert_with(|| ScoreSet {
                entries: bona.iter().map(|b| (*b).clone()).collect(),
            })
            .entries
            .push(e.clone());
    }
    groups
}

pub fn format_scores(scores: &ScoreSet) -> String {
    let mut out = String::new();
    for e in &scores.entries {
        out.push_str(&format!("{}\t{}\t{}\n", e.utt_id, e.score, e.label));
    }
    out
}

pub fn parse_scores(text: &str) -> Result<ScoreSet, MetricsError> {
    let mut set = ScoreSet::new();
    for (i, raw) in text.split('\n').enumerate() {
        let line = i + 1;
        let raw = raw.strip_suffix('\r').unwrap_or(raw);
        if raw.is_empty() || raw.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = raw.split('\t').collect();
        if cols.len() != 3 {
            return Err(MetricsError::Parse {
                line,
                msg: format!("expected 3 tab-separated columns, found {}", cols.len()),
            });
        }
        if cols[0].is_empty() {
            return Err(MetricsError::Parse {
                line,
                msg: "empty utterance id".into(),
            });
        }
        let score: f64 = cols[1].parse().map_err(|_| MetricsError::Parse {
            line,
            msg: format!("bad score '{}'", cols[1]),
        })?;
        if !score.is_finite() {
            return Err(MetricsError::Parse {
                line,
                msg: "score must be finite".into(),
            });
        }
        let label: Label = cols[2]
            .parse()
            .map_err(|msg| MetricsError::Parse { line, msg })?;
        set.push(cols[0], score, label);
    }
    Ok(set)
}

pub fn write_scores(path: impl AsRef<Path>, scores: &ScoreSet) -> Result<(), MetricsError> {
    std::fs::write(path, format_scores(scores))?;
    Ok(())
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<ScoreSet, MetricsError> {
    parse_scores(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn hand_set() -> ScoreSet {
        ScoreSet::from_scores(&[0.9, 0.4], &[0.8, 0.1])
    }

    /// Quadratic sweep over every score as a threshold plus both sentinels.
    fn brute(scores: &ScoreSet, b: f64) -> (f64, f64) {
        let nb = scores.count(Label::Bonafide) as f64;
        let ns = scores.count(Label::Spoof) as f64;
        let mut taus: Vec<f64> = scores.entries.iter().map(|e| e.score).collect();
        taus.push(f64::NEG_INFINITY);
        taus.push(f64::INFINITY);
        taus.sort_by(f64::total_cmp);
        taus.dedup();
        let pts: Vec<(f64, f64)> = taus
            .iter()
            .map(|&t| {
                let miss = scores
                    .entries
                    .iter()
                    .filter(|e| e.label == Label::Bonafide && e.score < t)
                    .count() as f64;
                let fa = scores
                    .entries
                    .iter()
                    .filter(|e| e.label == Label::Spoof && e.score >= t)
                    .count() as f64;
                (miss / nb, fa / ns)
            })
            .collect();
        let dcf = pts.iter().map(|(m, f)| b * m + f).fold(f64::INFINITY, f64::min);
        let k = pts.iter().position(|(m, f)| m >= f).unwrap();
        let (m0, f0) = pts[k - 1];
        let (m1, f1) = pts[k];
        let t = (f0 - m0) / ((m1 - m0) - (f1 - f0));
        (dcf, m0 + t * (m1 - m0))
    }

    #[test]
    fn beta_values() {
        assert_eq!(beta(&CostParams::default()), 1.9);
        assert_eq!(beta(&CostParams { c_miss: 1.0, c_fa: 1.0, pi_spf: 0.5 }), 1.0);
        assert!((beta(&CostParams { c_miss: 2.0, c_fa: 4.0, pi_spf: 0.2 }) - 2.0).abs() < 1e-15);
    }

    #[test]
    fn hand_enumeration() {
        let s = hand_set();
        let curve = det_curve(&s).unwrap();
        let pairs: Vec<(f64, f64)> = curve.points.iter().map(|p| (p.p_miss, p.p_fa)).collect();
        assert_eq!(
            pairs,
            vec![(0.0, 1.0), (0.0, 1.0), (0.0, 0.5), (0.5, 0.5), (0.5, 0.0), (1.0, 0.0)]
        );
        assert_eq!(eer(&s).unwrap(), 0.5);
        // accept-all 1.0, τ=0.4 gives 0.5, τ=0.9 gives 0.95, reject-all 1.9
        assert_eq!(min_dcf(&s, &CostParams::default()).unwrap(), 0.5);
        let ev = evaluate(&s, &CostParams::default()).unwrap();
        assert_eq!((ev.n_bonafide, ev.n_spoof), (2, 2));
    }

    #[test]
    fn edge_rows() {
        let sep = ScoreSet::from_scores(&[0.9], &[0.1]);
        assert_eq!(eer(&sep).unwrap(), 0.0);
        assert_eq!(min_dcf(&sep, &CostParams::default()).unwrap(), 0.0);
        let inv = ScoreSet::from_scores(&[0.1, 0.2], &[0.8, 0.9, 1.0]);
        assert_eq!(eer(&inv).unwrap(), 1.0);
        assert_eq!(min_dcf(&inv, &CostParams::default()).unwrap(), 1.0);
        let flat = ScoreSet::from_scores(&[0.3, 0.3], &[0.3]);
        assert_eq!(min_dcf(&flat, &CostParams::default()).unwrap(), 1.0);
    }

    #[test]
    fn missing_class() {
        let s = ScoreSet::from_scores(&[], &[0.1, 0.2]);
        assert!(matches!(eer(&s), Err(MetricsError::MissingClass)));
        assert!(matches!(
            parse_scores("a\t0.5\tspoof\n").and_then(|s| eer(&s)),
            Err(MetricsError::MissingClass)
        ));
    }

    #[test]
    fn score_file_round_trip() {
        let mut s = hand_set();
        s.push("odd", 0.1 + 0.2, Label::Bonafide);
        s.push("tiny", -1.5e-300, Label::Spoof);
        let text = format_scores(&s);
        assert!(text.contains("odd\t0.30000000000000004\tbonafide\n"));
        assert_eq!(parse_scores(&text).unwrap(), s);
        let with_comment = format!("# header\n{text}");
        assert_eq!(parse_scores(&with_comment).unwrap(), s);
        assert!(matches!(
            parse_scores("a\tx\tspoof\n"),
            Err(MetricsError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            parse_scores("# c\na\t1\tother\n"),
            Err(MetricsError::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn attack_groups_keep_all_bonafide() {
        let s = ScoreSet::from_scores(&[1.0, 2.0], &[0.0, 0.5, 3.0]);
        let g = per_attack(&s, &|id| Some(if id == "s2" { "A02" } else { "A01" }.to_string()));
        assert_eq!(g["A01"].count(Label::Bonafide), 2);
        assert_eq!(g["A01"].count(Label::Spoof), 2);
        assert_eq!(g["A02"].count(Label::Spoof), 1);
        assert_eq!(eer(&g["A01"]).unwrap(), 0.0);
    }

    fn arb_set() -> impl Strategy<Value = ScoreSet> {
        (
            prop::collection::vec(-20i32..20, 1..60),
            prop::collection::vec(-20i32..20, 1..60),
        )
            .prop_map(|(b, s)| {
                let f = |v: &Vec<i32>| v.iter().map(|&x| x as f64 / 4.0).collect::<Vec<_>>();
                ScoreSet::from_scores(&f(&b), &f(&s))
            })
    }

    proptest! {
        #[test]
        fn matches_bruteforce(s in arb_set()) {
            let p = CostParams::default();
            let (d, e) = brute(&s, beta(&p));
            prop_assert!((min_dcf(&s, &p).unwrap() - d).abs() <= 1e-12);
            prop_assert!((eer(&s).unwrap() - e).abs() <= 1e-12);
        }

        #[test]
        fn bounds_and_curve_monotone(s in arb_set()) {
            let c = det_curve(&s).unwrap();
            for w in c.points.windows(2) {
                prop_assert!(w[0].p_miss <= w[1].p_miss && w[0].p_fa >= w[1].p_fa);
            }
            let e = eer(&s).unwrap();
            let d = min_dcf(&s, &CostParams::default()).unwrap();
            prop_assert!((0.0..=1.0).contains(&e) && (0.0..=1.0).contains(&d));
        }

        #[test]
        fn monotone_transform_invariance(s in arb_set()) {
            let mut t = s.clone();
            for e in &mut t.entries {
                e.score = (e.score * 0.7).exp() + 3.0;
            }
            let p = CostParams::default();
            prop_assert_eq!(eer(&s).unwrap(), eer(&t).unwrap());
            prop_assert_eq!(min_dcf(&s, &p).unwrap(), min_dcf(&t, &p).unwrap());
            let shape = |c: DetCurve| c.points.iter().map(|p| (p.p_miss, p.p_fa)).collect::<Vec<_>>();
            prop_assert_eq!(shape(det_curve(&s).unwrap()), shape(det_curve(&t).unwrap()));
        }

        #[test]
        fn label_swap_duality(s in arb_set()) {
            let mut t = s.clone();
            for e in &mut t.entries {
                e.score = -e.score;
                e.label = match e.label { Label::Bonafide => Label::Spoof, Label::Spoof => Label::Bonafide };
            }
            prop_assert!((eer(&s).unwrap() - eer(&t).unwrap()).abs() < 1e-12);
        }

        #[test]
        fn order_invariant(s in arb_set(), rot in 0usize..100) {
            let mut t = s.clone();
            let k = rot % t.entries.len();
            t.entries.rotate_left(k);
            t.entries.reverse();
            let p = CostParams::default();
            prop_assert_eq!(evaluate(&s, &p).unwrap(), evaluate(&t, &p).unwrap());
        }
    }
}
