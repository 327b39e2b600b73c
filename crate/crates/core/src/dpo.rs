//! Direct Preference Optimization on the toy language model.
//!
//! For a record `(x, y_w, y_l)` with `f(x, y)` the summed token
//! log-probability, the per-record loss is `-log sigmoid(beta * m)` where
//! the margin `m` is
//!
//! - [`DpoMode::Literal`]: `f_theta(x, y_w) - f_theta(x, y_l)`, the
//!   reference-free form;
//! - [`DpoMode::ReferenceAnchored`]: `[f_theta(y_w) - f_ref(y_w)] -
//!   [f_theta(y_l) - f_ref(y_l)]`, the standard DPO log-ratio form with a
//!   frozen reference model.
//!
//! The batch loss is the mean over records. Gradients are exact: the
//! margin's gradient comes from back-propagating through the toy model's
//! sequence log-probability.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::lm::{sequence_logprob, LanguageModel, LmError, TokenId, ToyLm, Vocab, VocabError};
use crate::types::{InvariantError, PreferenceRecord, Validate};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum DpoMode {
    #[default]
    #[serde(rename = "literal")]
    Literal,
    #[serde(rename = "anchored")]
    ReferenceAnchored,
}

impl std::str::FromStr for DpoMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "literal" => Ok(DpoMode::Literal),
            "anchored" => Ok(DpoMode::ReferenceAnchored),
            other => Err(format!("unknown DPO mode `{other}` (expected literal or anchored)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DpoConfig {
    pub beta: f64,
    pub mode: DpoMode,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Optimiser steps between trace points.
    pub eval_every: usize,
    /// Heavy-ball momentum; 0 gives plain gradient descent.
    pub momentum: f64,
}

impl Default for DpoConfig {
    fn default() -> Self {
        Self {
            beta: 0.1,
            mode: DpoMode::Literal,
            learning_rate: 1.0,
            epochs: 20,
            batch_size: 16,
            seed: 0,
            eval_every: 10,
            momentum: 0.0,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<(), DpoError> {
        let bad = |m: String| Err(DpoError::Config(m));
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return bad(format!("beta must be positive, got {}", self.beta));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad(format!("learning_rate must be non-negative, got {}", self.learning_rate));
        }
        if self.epochs == 0 || self.batch_size == 0 || self.eval_every == 0 {
            return bad("epochs, batch_size and eval_every must be positive".into());
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad(format!("momentum must lie in [0, 1), got {}", self.momentum));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum DpoError {
    #[error("preference batch is empty")]
    EmptyBatch,
    #[error("invalid DPO configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Lm(#[from] LmError),
    #[error(transparent)]
    Vocab(#[from] VocabError),
    #[error("training diverged at step {step}: loss {loss}")]
    Diverged {
        step: u64,
        loss: f64,
        /// Parameters before the failing update.
        snapshot: Box<ToyLm>,
    },
}

/// A preference record as token ids.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedPreference {
    pub source: Vec<TokenId>,
    pub chosen: Vec<TokenId>,
    pub rejected: Vec<TokenId>,
}

impl EncodedPreference {
    /// Same record with chosen and rejected exchanged.
    pub fn mirrored(&self) -> Self {
        Self {
            source: self.source.clone(),
            chosen: self.rejected.clone(),
            rejected: self.chosen.clone(),
        }
    }
}

/// Encodes sources with `vocab`; summaries use their stored token ids.
pub fn encode_preferences(
    records: &[PreferenceRecord],
    vocab: &Vocab,
) -> Result<Vec<EncodedPreference>, DpoError> {
    records
        .iter()
        .map(|r| {
            Ok(EncodedPreference {
                source: vocab.encode(&r.source)?,
                chosen: r.chosen.tokens.clone(),
                rejected: r.rejected.tokens.clone(),
            })
        })
        .collect()
}

/// `-log sigmoid(x)` computed without overflow.
pub fn neg_log_sigmoid(x: f64) -> f64 {
    (-x).max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Reference log-probabilities `(f_ref(y_w), f_ref(y_l))` per record.
pub fn reference_logprobs(
    reference: &dyn LanguageModel,
    data: &[EncodedPreference],
) -> Result<Vec<(f64, f64)>, DpoError> {
    data.iter()
        .map(|r| {
            Ok((
                sequence_logprob(reference, &r.source, &r.chosen)?,
                sequence_logprob(reference, &r.source, &r.rejected)?,
            ))
        })
        .collect()
}

fn margin(mode: DpoMode, f_w: f64, f_l: f64, reference: Option<(f64, f64)>) -> f64 {
    match (mode, reference) {
        (DpoMode::ReferenceAnchored, Some((r_w, r_l))) => (f_w - r_w) - (f_l - r_l),
        _ => f_w - f_l,
    }
}

/// Resolved reference scores for the anchored mode, `None` otherwise.
fn resolve_reference(
    mode: DpoMode,
    reference: Option<&dyn LanguageModel>,
    data: &[EncodedPreference],
) -> Result<Option<Vec<(f64, f64)>>, DpoError> {
    match mode {
        DpoMode::Literal => Ok(None),
        DpoMode::ReferenceAnchored => {
            let reference = reference.ok_or_else(|| {
                DpoError::Config("reference_anchored mode needs a reference model".into())
            })?;
            reference_logprobs(reference, data).map(Some)
        }
    }
}

/// Mean loss and, when `grad` is given, its gradient accumulated into it.
fn loss_with_ref(
    policy: &ToyLm,
    batch: &[&EncodedPreference],
    ref_lps: Option<&[(f64, f64)]>,
    config: &DpoConfig,
    mut grad: Option<&mut [f64]>,
) -> Result<f64, DpoError> {
    if batch.is_empty() {
        return Err(DpoError::EmptyBatch);
    }
    let n = batch.len() as f64;
    let mut total = 0.0;
    let mut scratch_w = vec![0.0; policy.flat().len()];
    let mut scratch_l = vec![0.0; policy.flat().len()];
    for (i, rec) in batch.iter().enumerate() {
        let reference = ref_lps.map(|r| r[i]);
        match grad.as_deref_mut() {
            None => {
                let f_w = sequence_logprob(policy, &rec.source, &rec.chosen)?;
                let f_l = sequence_logprob(policy, &rec.source, &rec.rejected)?;
                total += neg_log_sigmoid(config.beta * margin(config.mode, f_w, f_l, reference));
            }
            Some(g) => {
                scratch_w.iter_mut().for_each(|v| *v = 0.0);
                scratch_l.iter_mut().for_each(|v| *v = 0.0);
                let f_w = policy.accumulate_logprob_grad(&rec.source, &rec.chosen, 1.0, &mut scratch_w)?;
                let f_l = policy.accumulate_logprob_grad(&rec.source, &rec.rejected, 1.0, &mut scratch_l)?;
                let m = margin(config.mode, f_w, f_l, reference);
                total += neg_log_sigmoid(config.beta * m);
                // d/dm of -log sigmoid(beta m) = -beta sigmoid(-beta m)
                let coeff = -config.beta * sigmoid(-config.beta * m) / n;
                for ((gi, w), l) in g.iter_mut().zip(&scratch_w).zip(&scratch_l) {
                    *gi += coeff * (w - l);
                }
            }
        }
    }
    Ok(total / n)
}

fn check_terminated(batch: &[EncodedPreference]) -> Result<(), DpoError> {
    for r in batch {
        for seq in [&r.chosen, &r.rejected] {
            if seq.last() != Some(&crate::lm::EOS_TOKEN) {
                return Err(LmError::NotTerminated.into());
            }
        }
    }
    Ok(())
}

/// Mean DPO loss over `batch`.
pub fn dpo_loss(
    policy: &ToyLm,
    reference: Option<&dyn LanguageModel>,
    batch: &[EncodedPreference],
    config: &DpoConfig,
) -> Result<f64, DpoError> {
    if batch.is_empty() {
        return Err(DpoError::EmptyBatch);
    }
    check_terminated(batch)?;
    let ref_lps = resolve_reference(config.mode, reference, batch)?;
    let refs: Vec<&EncodedPreference> = batch.iter().collect();
    loss_with_ref(policy, &refs, ref_lps.as_deref(), config, None)
}

/// Mean DPO loss and its exact gradient with respect to the flat
/// parameter vector of `policy`.
pub fn dpo_loss_and_grad(
    policy: &ToyLm,
    reference: Option<&dyn LanguageModel>,
    batch: &[EncodedPreference],
    config: &DpoConfig,
) -> Result<(f64, Vec<f64>), DpoError> {
    if batch.is_empty() {
        return Err(DpoError::EmptyBatch);
    }
    check_terminated(batch)?;
    let ref_lps = resolve_reference(config.mode, reference, batch)?;
    let refs: Vec<&EncodedPreference> = batch.iter().collect();
    let mut grad = vec![0.0; policy.flat().len()];
    let loss = loss_with_ref(policy, &refs, ref_lps.as_deref(), config, Some(&mut grad))?;
    Ok((loss, grad))
}

pub fn dpo_grad(
    policy: &ToyLm,
    reference: Option<&dyn LanguageModel>,
    batch: &[EncodedPreference],
    config: &DpoConfig,
) -> Result<Vec<f64>, DpoError> {
    dpo_loss_and_grad(policy, reference, batch, config).map(|(_, g)| g)
}

/// Fraction of records whose margin is strictly positive.
pub fn preference_accuracy(
    policy: &dyn LanguageModel,
    data: &[EncodedPreference],
    mode: DpoMode,
    reference: Option<&dyn LanguageModel>,
) -> Result<f64, DpoError> {
    if data.is_empty() {
        return Err(DpoError::EmptyBatch);
    }
    let ref_lps = resolve_reference(mode, reference, data)?;
    accuracy_with_ref(policy, data, mode, ref_lps.as_deref())
}

fn accuracy_with_ref(
    policy: &dyn LanguageModel,
    data: &[EncodedPreference],
    mode: DpoMode,
    ref_lps: Option<&[(f64, f64)]>,
) -> Result<f64, DpoError> {
    let mut correct = 0usize;
    for (i, r) in data.iter().enumerate() {
        let f_w = sequence_logprob(policy, &r.source, &r.chosen)?;
        let f_l = sequence_logprob(policy, &r.source, &r.rejected)?;
        if margin(mode, f_w, f_l, ref_lps.map(|x| x[i])) > 0.0 {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// One point of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TracePoint {
    pub step: u64,
    pub loss: f64,
    pub accuracy: f64,
}

impl Validate for TracePoint {
    fn validate(&self) -> Result<(), InvariantError> {
        if !self.loss.is_finite() || self.loss < 0.0 {
            return Err(InvariantError::new("loss", "must be finite and non-negative"));
        }
        if !(0.0..=1.0).contains(&self.accuracy) {
            return Err(InvariantError::new("accuracy", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub points: Vec<TracePoint>,
    /// SHA-256 of the final parameters (little-endian f64 bytes).
    pub snapshot_id: String,
}

/// Content hash of a parameter vector.
pub fn snapshot_id(params: &ToyLm) -> String {
    let mut hasher = Sha256::new();
    for p in params.flat() {
        hasher.update(p.to_le_bytes());
    }
    let mut out = String::with_capacity(64);
    for b in hasher.finalize().iter() {
        let _ = write!(out, "{b:02x}");
    }
    out
}

/// Mini-batch gradient descent on the DPO loss.
///
/// Each epoch shuffles record order with a ChaCha8 generator seeded by
/// `config.seed`. A trace point (full-dataset loss and preference accuracy)
/// is recorded before the first step, every `eval_every` steps, and after
/// the last step. In anchored mode the reference defaults to a frozen copy
/// of `initial`.
pub fn train(
    initial: &ToyLm,
    data: &[EncodedPreference],
    config: &DpoConfig,
    reference: Option<&dyn LanguageModel>,
) -> Result<(ToyLm, TrainTrace), DpoError> {
    config.validate()?;
    if data.is_empty() {
        return Err(DpoError::EmptyBatch);
    }
    check_terminated(data)?;
    let frozen = initial.clone();
    let reference: &dyn LanguageModel = reference.unwrap_or(&frozen);
    let ref_lps = resolve_reference(config.mode, Some(reference), data)?;

    let mut params = initial.clone();
    let mut velocity = vec![0.0; params.flat().len()];
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let all: Vec<&EncodedPreference> = data.iter().collect();
    let mut points = Vec::new();
    let mut step: u64 = 0;

    let evaluate = |params: &ToyLm, step: u64| -> Result<TracePoint, DpoError> {
        let loss = loss_with_ref(params, &all, ref_lps.as_deref(), config, None)?;
        if !loss.is_finite() {
            return Err(DpoError::Diverged {
                step,
                loss,
                snapshot: Box::new(params.clone()),
            });
        }
        let accuracy = accuracy_with_ref(params, data, config.mode, ref_lps.as_deref())?;
        Ok(TracePoint {
            step,
            loss,
            accuracy,
        })
    };

    points.push(evaluate(&params, 0)?);
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&EncodedPreference> = chunk.iter().map(|&i| &data[i]).collect();
            let batch_ref: Option<Vec<(f64, f64)>> = ref_lps
                .as_ref()
                .map(|r| chunk.iter().map(|&i| r[i]).collect());
            let mut grad = vec![0.0; params.flat().len()];
            let loss = loss_with_ref(&params, &batch, batch_ref.as_deref(), config, Some(&mut grad))?;
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(DpoError::Diverged {
                    step,
                    loss,
                    snapshot: Box::new(params),
                });
            }
            for ((p, v), g) in params.flat_mut().iter_mut().zip(&mut velocity).zip(&grad) {
                *v = config.momentum * *v + g;
                *p -= config.learning_rate * *v;
            }
            step += 1;
            if !params.is_finite() {
                return Err(DpoError::Diverged {
                    step,
                    loss: f64::NAN,
                    snapshot: Box::new(params),
                });
            }
            if step.is_multiple_of(config.eval_every as u64) {
                points.push(evaluate(&params, step)?);
            }
        }
    }
    if points.last().map(|p| p.step) != Some(step) {
        points.push(evaluate(&params, step)?);
    }
    let snapshot_id = snapshot_id(&params);
    Ok((
        params,
        TrainTrace {
            points,
            snapshot_id,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lm::ToyLmShape;

    fn model(seed: u64) -> ToyLm {
        ToyLm::init(ToyLmShape::new(5, 3, 4), seed, 0.7)
    }

    fn batch() -> Vec<EncodedPreference> {
        vec![
            EncodedPreference {
                source: vec![1, 2, 3],
                chosen: vec![2, 4, 0],
                rejected: vec![2, 3, 0],
            },
            EncodedPreference {
                source: vec![4, 4],
                chosen: vec![1, 0],
                rejected: vec![3, 3, 1, 0],
            },
        ]
    }

    #[test]
    fn equal_logprobs_give_ln2() {
        let m = model(1);
        let same = vec![EncodedPreference {
            source: vec![1],
            chosen: vec![2, 0],
            rejected: vec![2, 0],
        }];
        let loss = dpo_loss(&m, None, &same, &DpoConfig::default()).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        let g = dpo_grad(&m, None, &same, &DpoConfig::default()).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn margin_of_two_closed_form() {
        // start row favours token 1 over token 2 by exactly 2 nats
        let mut m = ToyLm::zeros(ToyLmShape::new(4, 2, 2));
        let start = m.start_row();
        m.bigram_mut()[start * 4 + 1] = 2.0;
        let rec = vec![EncodedPreference {
            source: vec![3],
            chosen: vec![1, 0],
            rejected: vec![2, 0],
        }];
        let cfg = DpoConfig {
            beta: 1.0,
            ..DpoConfig::default()
        };
        let loss = dpo_loss(&m, None, &rec, &cfg).unwrap();
        // ln(1 + e^-2)
        assert!((loss - 0.126_928_011_042_972_6).abs() < 1e-12, "{loss}");
    }

    #[test]
    fn anchored_at_reference_gives_ln2() {
        let m = model(2);
        let cfg = DpoConfig {
            mode: DpoMode::ReferenceAnchored,
            ..DpoConfig::default()
        };
        let loss = dpo_loss(&m, Some(&m), &batch(), &cfg).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(
            preference_accuracy(&m, &batch(), DpoMode::ReferenceAnchored, Some(&m)).unwrap(),
            0.0
        );
        assert!(matches!(dpo_loss(&m, None, &batch(), &cfg), Err(DpoError::Config(_))));
    }

    #[test]
    fn empty_batch_is_an_error() {
        let m = model(3);
        assert_eq!(dpo_loss(&m, None, &[], &DpoConfig::default()).unwrap_err(), DpoError::EmptyBatch);
        assert_eq!(
            preference_accuracy(&m, &[], DpoMode::Literal, None).unwrap_err(),
            DpoError::EmptyBatch
        );
    }

    #[test]
    fn batch_gradient_is_mean_of_record_gradients() {
        let m = model(4);
        let cfg = DpoConfig::default();
        let data = batch();
        let whole = dpo_grad(&m, None, &data, &cfg).unwrap();
        let parts: Vec<Vec<f64>> = data
            .iter()
            .map(|r| dpo_grad(&m, None, std::slice::from_ref(r), &cfg).unwrap())
            .collect();
        for i in 0..whole.len() {
            let mean = (parts[0][i] + parts[1][i]) / 2.0;
            assert!((whole[i] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_is_convex_symmetric_in_margin() {
        for m in [-5.0, -0.3, 0.0, 0.2, 4.0, 40.0] {
            let sum = neg_log_sigmoid(m) + neg_log_sigmoid(-m);
            assert!(sum >= 2.0 * std::f64::consts::LN_2 - 1e-15);
            if m != 0.0 {
                assert!(sum > 2.0 * std::f64::consts::LN_2);
            }
            assert!(neg_log_sigmoid(m) > 0.0);
            assert!(neg_log_sigmoid(m + 0.1) < neg_log_sigmoid(m));
        }
        assert!((neg_log_sigmoid(-800.0) - 800.0).abs() < 1e-9);
        assert!(neg_log_sigmoid(800.0) >= 0.0);
    }

    #[test]
    fn mirrored_batch_flips_margins() {
        let m = model(5);
        let cfg = DpoConfig::default();
        let data = batch();
        let mirrored: Vec<_> = data.iter().map(EncodedPreference::mirrored).collect();
        let loss = dpo_loss(&m, None, &mirrored, &cfg).unwrap();
        let expected: f64 = data
            .iter()
            .map(|r| {
                let mm = sequence_logprob(&m, &r.source, &r.chosen).unwrap()
                    - sequence_logprob(&m, &r.source, &r.rejected).unwrap();
                neg_log_sigmoid(-cfg.beta * mm)
            })
            .sum::<f64>()
            / 2.0;
        assert!((loss - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let m = model(6);
        let cfg = DpoConfig {
            learning_rate: 0.0,
            epochs: 3,
            batch_size: 1,
            eval_every: 1,
            ..DpoConfig::default()
        };
        let (out, trace) = train(&m, &batch(), &cfg, None).unwrap();
        assert_eq!(out, m);
        assert!(trace.points.windows(2).all(|w| w[0].loss == w[1].loss && w[0].step < w[1].step));
        assert_eq!(trace.points.len(), 7);
        assert_eq!(trace.snapshot_id, snapshot_id(&m));
    }

    #[test]
    fn small_step_does_not_increase_loss() {
        let m = model(7);
        let cfg = DpoConfig::default();
        let data = batch();
        let (loss, grad) = dpo_loss_and_grad(&m, None, &data, &cfg).unwrap();
        let mut lr = 1.0;
        loop {
            let mut next = m.clone();
            for (p, g) in next.flat_mut().iter_mut().zip(&grad) {
                *p -= lr * g;
            }
            if dpo_loss(&next, None, &data, &cfg).unwrap() <= loss {
                break;
            }
            lr /= 2.0;
            assert!(lr > 1e-12, "no descent step found");
        }
    }

    #[test]
    fn divergence_is_reported() {
        let m = model(8);
        let cfg = DpoConfig {
            learning_rate: 1e308,
            beta: 1.0,
            ..DpoConfig::default()
        };
        assert!(matches!(train(&m, &batch(), &cfg, None), Err(DpoError::Diverged { .. })));
    }

    #[test]
    fn config_validation() {
        assert!(DpoConfig::default().validate().is_ok());
        for cfg in [
            DpoConfig { beta: 0.0, ..DpoConfig::default() },
            DpoConfig { learning_rate: -1.0, ..DpoConfig::default() },
            DpoConfig { batch_size: 0, ..DpoConfig::default() },
            DpoConfig { momentum: 1.0, ..DpoConfig::default() },
        ] {
            assert!(cfg.validate().is_err());
        }
    }
}
