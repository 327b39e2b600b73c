//! From metric scores to preferences.
//!
//! Each metric's scores for a pair become a sign; the pair survives only
//! if all metrics agree on a non-zero sign. Signs are invariant under any
//! strictly increasing rescaling of a metric, so metrics on unrelated
//! scales combine without calibration.

use std::collections::{BTreeSet, HashMap};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::scorers::rouge_l;
use crate::scorers::ScoreError;
use crate::types::{PreferenceRecord, ScoredPair, Sign, SummaryPair};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum AnnotationError {
    #[error("score is NaN")]
    NanScore,
    #[error("no metric labels to aggregate")]
    NoLabels,
    #[error("pair for `{doc_id}` carries metrics {found:?}, expected {expected:?}")]
    MetricMismatch {
        doc_id: String,
        expected: Vec<String>,
        found: Vec<String>,
    },
    #[error("no source text for document `{0}`")]
    MissingSource(String),
    #[error("heuristic labelling needs exactly one top beam member, pair for `{0}` has {1}")]
    NoUniqueBeam(String, usize),
    #[error("text must be non-empty")]
    EmptyText,
}

/// `sign(score_a - score_b)` with exact comparison.
pub fn pref_label(score_a: f64, score_b: f64) -> Result<Sign, AnnotationError> {
    if score_a.is_nan() || score_b.is_nan() {
        return Err(AnnotationError::NanScore);
    }
    Ok(if score_a > score_b {
        Sign::Pos
    } else if score_a < score_b {
        Sign::Neg
    } else {
        Sign::Zero
    })
}

/// How zero labels (exact score ties) are treated by [`consensus`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TiePolicy {
    /// A zero label blocks agreement.
    #[default]
    Drop,
    /// Zero labels abstain; the non-zero labels must agree.
    IgnoreTies,
}

impl FromStr for TiePolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.replace('-', "_").as_str() {
            "drop" => Ok(TiePolicy::Drop),
            "ignore_ties" => Ok(TiePolicy::IgnoreTies),
            other => Err(format!("unknown tie policy `{other}` (expected drop or ignore-ties)")),
        }
    }
}

impl fmt::Display for TiePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TiePolicy::Drop => "drop",
            TiePolicy::IgnoreTies => "ignore-ties",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Consensus {
    /// All metrics agree; `Sign::Pos` keeps `a` as chosen, `Sign::Neg` `b`.
    Keep(Sign),
    /// Both signs occur.
    Conflict,
    /// No conflict, but ties block agreement under the policy.
    Tie,
}

/// Aggregates per-metric signs.
pub fn consensus<'a, I>(labels: I, policy: TiePolicy) -> Result<Consensus, AnnotationError>
where
    I: IntoIterator<Item = &'a Sign>,
{
    let (mut pos, mut neg, mut zero) = (0usize, 0usize, 0usize);
    for label in labels {
        match label {
            Sign::Pos => pos += 1,
            Sign::Neg => neg += 1,
            Sign::Zero => zero += 1,
        }
    }
    if pos + neg + zero == 0 {
        return Err(AnnotationError::NoLabels);
    }
    if pos > 0 && neg > 0 {
        return Ok(Consensus::Conflict);
    }
    if pos + neg == 0 || (zero > 0 && policy == TiePolicy::Drop) {
        return Ok(Consensus::Tie);
    }
    Ok(Consensus::Keep(if pos > 0 { Sign::Pos } else { Sign::Neg }))
}

/// Counts from one pass of the agreement filter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterReport {
    pub total_pairs: usize,
    pub retained: usize,
    pub dropped_conflict: usize,
    pub dropped_tie: usize,
}

impl FilterReport {
    pub fn record(&mut self, outcome: Consensus) {
        self.total_pairs += 1;
        match outcome {
            Consensus::Keep(_) => self.retained += 1,
            Consensus::Conflict => self.dropped_conflict += 1,
            Consensus::Tie => self.dropped_tie += 1,
        }
    }

    /// Combines two reports; associative and commutative.
    pub fn merge(self, other: FilterReport) -> FilterReport {
        FilterReport {
            total_pairs: self.total_pairs + other.total_pairs,
            retained: self.retained + other.retained,
            dropped_conflict: self.dropped_conflict + other.dropped_conflict,
            dropped_tie: self.dropped_tie + other.dropped_tie,
        }
    }

    /// Fraction of pairs dropped by the filter; 0 for an empty input.
    pub fn trigger_rate(&self) -> f64 {
        if self.total_pairs == 0 {
            0.0
        } else {
            (self.dropped_conflict + self.dropped_tie) as f64 / self.total_pairs as f64
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.retained + self.dropped_conflict + self.dropped_tie == self.total_pairs
    }
}

/// One row of the disagreement table.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub model: String,
    pub dataset: String,
    pub report: FilterReport,
}

/// Fixed-width table of filter statistics, one row per (model, dataset),
/// with the trigger percentage to one decimal place.
pub fn format_filter_table(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<12} {:<12} {:>8} {:>9} {:>9} {:>6} {:>10}",
        "Model", "Dataset", "Pairs", "Retained", "Conflict", "Tie", "Trigger(%)"
    );
    let _ = writeln!(out, "{}", "-".repeat(72));
    for row in rows {
        let r = &row.report;
        let _ = writeln!(
            out,
            "{:<12} {:<12} {:>8} {:>9} {:>9} {:>6} {:>10.1}",
            row.model,
            row.dataset,
            r.total_pairs,
            r.retained,
            r.dropped_conflict,
            r.dropped_tie,
            100.0 * r.trigger_rate()
        );
    }
    out
}

/// Applies the agreement filter to scored pairs.
///
/// Kept pairs become records with `chosen = a` for `+1` and `chosen = b`
/// for `-1`; `agreeing_metrics` lists the metrics carrying the kept sign.
/// `sources` maps document ids to source text.
pub fn filter_dataset(
    scored: &[ScoredPair],
    policy: TiePolicy,
    sources: &HashMap<String, String>,
) -> Result<(Vec<PreferenceRecord>, FilterReport), AnnotationError> {
    let mut report = FilterReport::default();
    let mut records = Vec::new();
    let mut expected: Option<BTreeSet<&String>> = None;
    for pair in scored {
        let metrics: BTreeSet<&String> = pair.labels.keys().collect();
        match &expected {
            None => expected = Some(metrics),
            Some(e) if *e != metrics => {
                return Err(AnnotationError::MetricMismatch {
                    doc_id: pair.pair.doc_id.clone(),
                    expected: e.iter().map(|s| s.to_string()).collect(),
                    found: metrics.iter().map(|s| s.to_string()).collect(),
                })
            }
            Some(_) => {}
        }
        let outcome = consensus(pair.labels.values(), policy)?;
        report.record(outcome);
        if let Consensus::Keep(sign) = outcome {
            let source = sources
                .get(&pair.pair.doc_id)
                .ok_or_else(|| AnnotationError::MissingSource(pair.pair.doc_id.clone()))?;
            let (chosen, rejected) = if sign == Sign::Pos {
                (pair.pair.a.clone(), pair.pair.b.clone())
            } else {
                (pair.pair.b.clone(), pair.pair.a.clone())
            };
            records.push(PreferenceRecord {
                doc_id: pair.pair.doc_id.clone(),
                source: source.clone(),
                chosen,
                rejected,
                agreeing_metrics: pair
                    .labels
                    .iter()
                    .filter(|(_, &s)| s == sign)
                    .map(|(m, _)| m.clone())
                    .collect(),
            });
        }
    }
    Ok((records, report))
}

/// Symmetric LCS F-measure: harmonic mean of `rouge_l(a, b)` and
/// `rouge_l(b, a)`.
pub fn pair_similarity(text_a: &str, text_b: &str) -> Result<f64, AnnotationError> {
    let forward = rouge_l(text_a, text_b).map_err(empty_text)?;
    let backward = rouge_l(text_b, text_a).map_err(empty_text)?;
    // ordered so the result is bitwise symmetric
    let (lo, hi) = (forward.min(backward), forward.max(backward));
    if hi == 0.0 {
        return Ok(0.0);
    }
    Ok(2.0 * lo * hi / (lo + hi))
}

fn empty_text(_: ScoreError) -> AnnotationError {
    AnnotationError::EmptyText
}

/// Baseline labeller: the top beam output always wins, whatever the scores.
pub fn mpo_label(pair: &SummaryPair, source: &str) -> Result<PreferenceRecord, AnnotationError> {
    let (chosen, rejected) = match (pair.a.is_top_beam(), pair.b.is_top_beam()) {
        (true, false) => (&pair.a, &pair.b),
        (false, true) => (&pair.b, &pair.a),
        (both, _) => {
            return Err(AnnotationError::NoUniqueBeam(
                pair.doc_id.clone(),
                if both { 2 } else { 0 },
            ))
        }
    };
    Ok(PreferenceRecord {
        doc_id: pair.doc_id.clone(),
        source: source.to_string(),
        chosen: chosen.clone(),
        rejected: rejected.clone(),
        agreeing_metrics: vec!["mpo-heuristic".to_string()],
    })
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeMap;

    use super::*;
    use crate::types::{Strategy, SummaryCandidate};
    use proptest::prelude::*;

    fn cand(strategy: Strategy, rank: u32, text: &str) -> SummaryCandidate {
        let sampled = strategy == Strategy::Sample;
        SummaryCandidate {
            doc_id: "d".into(),
            strategy,
            rank,
            temperature: sampled.then_some(1.0),
            seed: sampled.then_some(1),
            tokens: vec![1, 0],
            text: text.into(),
            logprob: -1.0,
        }
    }

    fn pair(a: SummaryCandidate, b: SummaryCandidate) -> SummaryPair {
        SummaryPair {
            doc_id: "d".into(),
            a,
            b,
            similarity: 0.5,
        }
    }

    fn labels(v: &[(&str, Sign)]) -> BTreeMap<String, Sign> {
        v.iter().map(|(k, s)| (k.to_string(), *s)).collect()
    }

    #[test]
    fn sign_labels() {
        assert_eq!(pref_label(0.8, 0.3).unwrap(), Sign::Pos);
        assert_eq!(pref_label(0.5, 0.5).unwrap(), Sign::Zero);
        assert_eq!(pref_label(0.3, 0.8).unwrap(), Sign::Neg);
        assert_eq!(pref_label(f64::NAN, 0.1).unwrap_err(), AnnotationError::NanScore);
    }

    #[test]
    fn consensus_cases() {
        let agree = labels(&[("sbert", Sign::Pos), ("summac", Sign::Pos)]);
        assert_eq!(consensus(agree.values(), TiePolicy::Drop).unwrap(), Consensus::Keep(Sign::Pos));
        let conflict = labels(&[("sbert", Sign::Pos), ("summac", Sign::Neg)]);
        assert_eq!(consensus(conflict.values(), TiePolicy::Drop).unwrap(), Consensus::Conflict);
        let tie = labels(&[("sbert", Sign::Pos), ("summac", Sign::Zero)]);
        assert_eq!(consensus(tie.values(), TiePolicy::Drop).unwrap(), Consensus::Tie);
        assert_eq!(
            consensus(tie.values(), TiePolicy::IgnoreTies).unwrap(),
            Consensus::Keep(Sign::Pos)
        );
        let all_zero = labels(&[("sbert", Sign::Zero)]);
        assert_eq!(consensus(all_zero.values(), TiePolicy::IgnoreTies).unwrap(), Consensus::Tie);
        assert_eq!(
            consensus(BTreeMap::<String, Sign>::new().values(), TiePolicy::Drop).unwrap_err(),
            AnnotationError::NoLabels
        );
    }

    fn scored(a_scores: &[(&str, f64, f64)]) -> ScoredPair {
        ScoredPair::from_scores(
            pair(cand(Strategy::Beam, 0, "one"), cand(Strategy::Greedy, 0, "two")),
            a_scores
                .iter()
                .map(|(m, x, y)| (m.to_string(), (*x, *y)))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn filter_orients_records() {
        let sources = HashMap::from([("d".to_string(), "Src.".to_string())]);
        let data = vec![
            scored(&[("m1", 0.9, 0.1), ("m2", 2.0, 1.0)]),
            scored(&[("m1", 0.1, 0.9), ("m2", 1.0, 2.0)]),
            scored(&[("m1", 0.9, 0.1), ("m2", 1.0, 2.0)]),
            scored(&[("m1", 0.5, 0.5), ("m2", 1.0, 0.0)]),
        ];
        let (records, report) = filter_dataset(&data, TiePolicy::Drop, &sources).unwrap();
        assert_eq!(
            report,
            FilterReport {
                total_pairs: 4,
                retained: 2,
                dropped_conflict: 1,
                dropped_tie: 1
            }
        );
        assert_eq!(records[0].chosen.text, "one");
        assert_eq!(records[1].chosen.text, "two");
        assert_eq!(records[0].agreeing_metrics, vec!["m1", "m2"]);

        let (records, report) = filter_dataset(&data, TiePolicy::IgnoreTies, &sources).unwrap();
        assert_eq!(report.retained, 3);
        assert_eq!(records[2].agreeing_metrics, vec!["m2"]);
    }

    #[test]
    fn filter_rejects_inconsistent_metric_sets() {
        let sources = HashMap::from([("d".to_string(), "Src.".to_string())]);
        let data = vec![scored(&[("m1", 0.9, 0.1)]), scored(&[("m2", 0.9, 0.1)])];
        assert!(matches!(
            filter_dataset(&data, TiePolicy::Drop, &sources),
            Err(AnnotationError::MetricMismatch { .. })
        ));
    }

    #[test]
    fn empty_input_report() {
        let (records, report) = filter_dataset(&[], TiePolicy::Drop, &HashMap::new()).unwrap();
        assert!(records.is_empty());
        assert_eq!(report.total_pairs, 0);
        assert_eq!(report.trigger_rate(), 0.0);
    }

    #[test]
    fn table_mirrors_trigger_percentage() {
        let report = FilterReport {
            total_pairs: 1000,
            retained: 714,
            dropped_conflict: 250,
            dropped_tie: 36,
        };
        assert!((report.trigger_rate() - 0.286).abs() < 1e-12);
        let table = format_filter_table(&[ReportRow {
            model: "BART".into(),
            dataset: "XSUM".into(),
            report,
        }]);
        let row = table.lines().nth(2).unwrap();
        assert!(row.starts_with("BART"), "{table}");
        assert!(row.trim_end().ends_with("28.6"), "{table}");
    }

    #[test]
    fn similarity_examples() {
        assert_eq!(pair_similarity("The cat sat.", "the cat sat").unwrap(), 1.0);
        assert_eq!(pair_similarity("alpha", "beta").unwrap(), 0.0);
        let s = pair_similarity("x y z w", "x y w").unwrap();
        assert!((s - 2.0 * 0.75 / 1.75).abs() < 1e-12);
        assert!((s - 0.857).abs() < 1e-3);
        assert_eq!(pair_similarity("", "x").unwrap_err(), AnnotationError::EmptyText);
    }

    #[test]
    fn mpo_prefers_top_beam() {
        let bs1 = cand(Strategy::Beam, 0, "beam");
        let greedy = cand(Strategy::Greedy, 0, "greedy");
        let rec = mpo_label(&pair(greedy.clone(), bs1.clone()), "Src.").unwrap();
        assert_eq!(rec.chosen, bs1);
        assert_eq!(rec.agreeing_metrics, vec!["mpo-heuristic"]);

        let bs2 = cand(Strategy::Beam, 1, "beam two");
        assert_eq!(mpo_label(&pair(bs2, bs1.clone()), "Src.").unwrap().chosen, bs1);

        let rs1 = cand(Strategy::Sample, 0, "sample");
        assert!(matches!(
            mpo_label(&pair(greedy, rs1), "Src."),
            Err(AnnotationError::NoUniqueBeam(_, 0))
        ));
    }

    proptest! {
        #[test]
        fn labels_are_antisymmetric(a in -1e3f64..1e3, b in -1e3f64..1e3) {
            prop_assert_eq!(pref_label(a, b).unwrap(), -pref_label(b, a).unwrap());
        }

        #[test]
        fn similarity_is_symmetric(a in "[a-d ]{1,20}", b in "[a-d ]{1,20}") {
            prop_assume!(!crate::scorers::words(&a).is_empty() && !crate::scorers::words(&b).is_empty());
            prop_assert_eq!(pair_similarity(&a, &b).unwrap(), pair_similarity(&b, &a).unwrap());
            let one = pair_similarity(&a, &b).unwrap() == 1.0;
            prop_assert_eq!(one, crate::scorers::words(&a) == crate::scorers::words(&b));
        }

        #[test]
        fn report_merge_is_associative(xs in prop::collection::vec(0usize..3, 0..30), split in 0usize..30) {
            let outcome = |x: usize| match x { 0 => Consensus::Keep(Sign::Pos), 1 => Consensus::Conflict, _ => Consensus::Tie };
            let split = split.min(xs.len());
            let mut whole = FilterReport::default();
            xs.iter().for_each(|&x| whole.record(outcome(x)));
            let mut left = FilterReport::default();
            let mut right = FilterReport::default();
            xs[..split].iter().for_each(|&x| left.record(outcome(x)));
            xs[split..].iter().for_each(|&x| right.record(outcome(x)));
            prop_assert_eq!(left.merge(right), whole);
            prop_assert_eq!(right.merge(left), whole);
            prop_assert!(whole.is_consistent());
        }
    }
}
