//! Records shared by every pipeline stage.
//!
//! Every type here is immutable once validated and implements [`Validate`],
//! which the JSONL reader runs on each parsed line. Field order in the
//! structs is the serialisation order.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::lm::{TokenId, EOS_TOKEN};

/// A record-level invariant violation, naming the offending field.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid `{field}`: {message}")]
pub struct InvariantError {
    pub field: String,
    pub message: String,
}

impl InvariantError {
    pub fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }

    fn nested(self, parent: &str) -> Self {
        Self {
            field: format!("{parent}.{}", self.field),
            message: self.message,
        }
    }
}

/// Structural checks run after deserialisation.
pub trait Validate {
    fn validate(&self) -> Result<(), InvariantError>;

    /// Key that must be unique across one file, if the type has one.
    fn unique_key(&self) -> Option<&str> {
        None
    }
}

fn ensure(cond: bool, field: &str, message: impl Into<String>) -> Result<(), InvariantError> {
    if cond {
        Ok(())
    } else {
        Err(InvariantError::new(field, message))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Document {
    pub id: String,
    pub source: String,
    #[serde(default)]
    pub meta: BTreeMap<String, String>,
}

impl Document {
    pub fn new(id: impl Into<String>, source: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            source: source.into(),
            meta: BTreeMap::new(),
        }
    }
}

impl Validate for Document {
    fn validate(&self) -> Result<(), InvariantError> {
        ensure(!self.id.is_empty(), "id", "must be non-empty")?;
        ensure(
            !self.source.trim().is_empty(),
            "source",
            "must be non-empty after trimming",
        )
    }

    fn unique_key(&self) -> Option<&str> {
        Some(&self.id)
    }
}

/// How a summary was decoded.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Beam,
    Greedy,
    Sample,
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Beam => "beam",
            Strategy::Greedy => "greedy",
            Strategy::Sample => "sample",
        })
    }
}

/// One decoded summary.
///
/// `temperature` and `seed` are present exactly when `strategy` is
/// [`Strategy::Sample`]. `logprob` is the raw (not length-normalised) sum of
/// token log-probabilities in nats, and `tokens` always ends with
/// [`EOS_TOKEN`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryCandidate {
    pub doc_id: String,
    pub strategy: Strategy,
    pub rank: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub tokens: Vec<TokenId>,
    pub text: String,
    pub logprob: f64,
}

impl SummaryCandidate {
    /// True for the first beam-search output (BS#1).
    pub fn is_top_beam(&self) -> bool {
        self.strategy == Strategy::Beam && self.rank == 0
    }
}

impl Validate for SummaryCandidate {
    fn validate(&self) -> Result<(), InvariantError> {
        ensure(!self.doc_id.is_empty(), "doc_id", "must be non-empty")?;
        ensure(!self.tokens.is_empty(), "tokens", "must be non-empty")?;
        ensure(
            self.tokens.last() == Some(&EOS_TOKEN),
            "tokens",
            format!("must end with the end-of-sequence token {EOS_TOKEN}"),
        )?;
        ensure(
            self.tokens[..self.tokens.len() - 1]
                .iter()
                .all(|&t| t != EOS_TOKEN),
            "tokens",
            "end-of-sequence token may only appear last",
        )?;
        ensure(
            self.logprob.is_finite() && self.logprob <= 0.0,
            "logprob",
            format!("must be finite and <= 0, got {}", self.logprob),
        )?;
        match self.strategy {
            Strategy::Sample => {
                match self.temperature {
                    Some(t) if t.is_finite() && t > 0.0 => {}
                    Some(t) => {
                        return Err(InvariantError::new(
                            "temperature",
                            format!("must be positive, got {t}"),
                        ))
                    }
                    None => {
                        return Err(InvariantError::new(
                            "temperature",
                            "required for sampled candidates",
                        ))
                    }
                }
                ensure(self.seed.is_some(), "seed", "required for sampled candidates")?;
            }
            Strategy::Beam | Strategy::Greedy => {
                ensure(
                    self.temperature.is_none(),
                    "temperature",
                    "only allowed for sampled candidates",
                )?;
                ensure(
                    self.seed.is_none(),
                    "seed",
                    "only allowed for sampled candidates",
                )?;
            }
        }
        if self.strategy != Strategy::Beam {
            ensure(
                self.rank == 0,
                "rank",
                format!("must be 0 for {} candidates", self.strategy),
            )?;
        }
        Ok(())
    }
}

/// Two candidates decoded from the same source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SummaryPair {
    pub doc_id: String,
    pub a: SummaryCandidate,
    pub b: SummaryCandidate,
    pub similarity: f64,
}

impl Validate for SummaryPair {
    fn validate(&self) -> Result<(), InvariantError> {
        ensure(!self.doc_id.is_empty(), "doc_id", "must be non-empty")?;
        self.a.validate().map_err(|e| e.nested("a"))?;
        self.b.validate().map_err(|e| e.nested("b"))?;
        ensure(
            self.a.doc_id == self.doc_id,
            "a.doc_id",
            "must match the pair doc_id",
        )?;
        ensure(
            self.b.doc_id == self.doc_id,
            "b.doc_id",
            "must match the pair doc_id",
        )?;
        ensure(self.a.text != self.b.text, "b.text", "pair members must differ")?;
        ensure(
            (0.0..=1.0).contains(&self.similarity),
            "similarity",
            format!("must lie in [0, 1], got {}", self.similarity),
        )
    }
}

/// Preference sign under one metric: `+1` prefers `a`, `-1` prefers `b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Sign {
    Neg,
    Zero,
    Pos,
}

impl Sign {
    pub const ALL: [Sign; 3] = [Sign::Neg, Sign::Zero, Sign::Pos];

    pub fn as_i8(self) -> i8 {
        match self {
            Sign::Neg => -1,
            Sign::Zero => 0,
            Sign::Pos => 1,
        }
    }

    pub fn from_i8(v: i8) -> Option<Self> {
        match v {
            -1 => Some(Sign::Neg),
            0 => Some(Sign::Zero),
            1 => Some(Sign::Pos),
            _ => None,
        }
    }

    pub fn flip(self) -> Self {
        match self {
            Sign::Neg => Sign::Pos,
            Sign::Zero => Sign::Zero,
            Sign::Pos => Sign::Neg,
        }
    }
}

impl std::ops::Neg for Sign {
    type Output = Sign;

    fn neg(self) -> Sign {
        self.flip()
    }
}

impl Serialize for Sign {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_i8(self.as_i8())
    }
}

impl<'de> Deserialize<'de> for Sign {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = i8::deserialize(d)?;
        Sign::from_i8(v).ok_or_else(|| {
            serde::de::Error::custom(format!("label must be -1, 0 or 1, got {v}"))
        })
    }
}

/// A pair annotated with per-metric scores and sign labels.
///
/// Serialised flat: the pair's fields followed by `scores` and `labels`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "ScoredPairRepr", into = "ScoredPairRepr")]
pub struct ScoredPair {
    pub pair: SummaryPair,
    pub scores: BTreeMap<String, (f64, f64)>,
    pub labels: BTreeMap<String, Sign>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoredPairRepr {
    doc_id: String,
    a: SummaryCandidate,
    b: SummaryCandidate,
    similarity: f64,
    scores: BTreeMap<String, (f64, f64)>,
    labels: BTreeMap<String, Sign>,
}

impl From<ScoredPairRepr> for ScoredPair {
    fn from(r: ScoredPairRepr) -> Self {
        ScoredPair {
            pair: SummaryPair {
                doc_id: r.doc_id,
                a: r.a,
                b: r.b,
                similarity: r.similarity,
            },
            scores: r.scores,
            labels: r.labels,
        }
    }
}

impl From<ScoredPair> for ScoredPairRepr {
    fn from(s: ScoredPair) -> Self {
        ScoredPairRepr {
            doc_id: s.pair.doc_id,
            a: s.pair.a,
            b: s.pair.b,
            similarity: s.pair.similarity,
            scores: s.scores,
            labels: s.labels,
        }
    }
}

impl ScoredPair {
    /// Builds a scored pair, deriving every label from its score pair.
    pub fn from_scores(
        pair: SummaryPair,
        scores: BTreeMap<String, (f64, f64)>,
    ) -> Result<Self, crate::annotation::AnnotationError> {
        let labels = scores
            .iter()
            .map(|(m, &(sa, sb))| Ok((m.clone(), crate::annotation::pref_label(sa, sb)?)))
            .collect::<Result<_, crate::annotation::AnnotationError>>()?;
        Ok(Self {
            pair,
            scores,
            labels,
        })
    }
}

impl Validate for ScoredPair {
    fn validate(&self) -> Result<(), InvariantError> {
        self.pair.validate()?;
        ensure(
            self.scores.keys().eq(self.labels.keys()),
            "labels",
            "metric keys must match the keys of `scores`",
        )?;
        for (metric, &(sa, sb)) in &self.scores {
            ensure(
                sa.is_finite() && sb.is_finite(),
                &format!("scores.{metric}"),
                "scores must be finite",
            )?;
            let expected = crate::annotation::pref_label(sa, sb)
                .map_err(|e| InvariantError::new(format!("scores.{metric}"), e.to_string()))?;
            ensure(
                self.labels[metric] == expected,
                &format!("labels.{metric}"),
                format!(
                    "label {} disagrees with sign of score difference ({})",
                    self.labels[metric].as_i8(),
                    expected.as_i8()
                ),
            )?;
        }
        Ok(())
    }
}

/// A preference that survived the agreement filter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferenceRecord {
    pub doc_id: String,
    pub source: String,
    pub chosen: SummaryCandidate,
    pub rejected: SummaryCandidate,
    pub agreeing_metrics: Vec<String>,
}

impl Validate for PreferenceRecord {
    fn validate(&self) -> Result<(), InvariantError> {
        ensure(!self.doc_id.is_empty(), "doc_id", "must be non-empty")?;
        ensure(
            !self.source.trim().is_empty(),
            "source",
            "must be non-empty after trimming",
        )?;
        self.chosen.validate().map_err(|e| e.nested("chosen"))?;
        self.rejected.validate().map_err(|e| e.nested("rejected"))?;
        ensure(
            self.chosen.doc_id == self.doc_id,
            "chosen.doc_id",
            "must match the record doc_id",
        )?;
        ensure(
            self.rejected.doc_id == self.doc_id,
            "rejected.doc_id",
            "must match the record doc_id",
        )?;
        ensure(
            !self.agreeing_metrics.is_empty(),
            "agreeing_metrics",
            "must be non-empty",
        )
    }
}
