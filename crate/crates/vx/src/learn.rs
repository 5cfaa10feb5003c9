//! Desk-scale training objectives over a tabular toy policy: sequence
//! negative log-likelihood for supervised imitation and trajectory-level
//! preference optimization, both with hand-derived analytic gradients and a
//! finite-difference checker.
//!
//! Only policy-generated symbols are scored; tool/environment output is
//! conditioned on but never predicted, so the policy cannot pad its
//! likelihood by modeling the environment.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datagen::PreferencePair;
use crate::trajectory::{Block, Trajectory};

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("unknown symbol {0:?}")]
    UnknownSymbol(String),
    #[error("dataset must be non-empty")]
    EmptyDataset,
    #[error("non-finite value encountered{}", .step.map(|s| format!(" at step {s}")).unwrap_or_default())]
    NonFinite { step: Option<usize> },
    #[error("pair {0:?} is not separable: chosen and rejected score identical symbols")]
    NotSeparable(String),
    #[error("invalid config: {0}")]
    BadConfig(String),
}

/// Who produced a symbol: the policy (scored) or the environment (context only).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SymbolRole {
    Policy,
    Env,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggedSymbol {
    pub symbol: String,
    pub role: SymbolRole,
}

pub type TaggedSeq = Vec<TaggedSymbol>;

/// Build a tagged sequence from `(symbol, is_policy)` pairs.
pub fn seq(items: &[(&str, bool)]) -> TaggedSeq {
    items
        .iter()
        .map(|&(s, policy)| TaggedSymbol {
            symbol: s.to_string(),
            role: if policy { SymbolRole::Policy } else { SymbolRole::Env },
        })
        .collect()
}

/// A preference pair lowered to symbol sequences.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeqPair {
    pub id: String,
    pub chosen: TaggedSeq,
    pub rejected: TaggedSeq,
}

/// Tabular softmax policy over symbol-history contexts.
///
/// Logits live in a dense `(vocab+1)^history x vocab` table (one extra id for
/// the begin-of-sequence pad). Zero parameters give the uniform policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ToyPolicy {
    vocab: Vec<String>,
    index: BTreeMap<String, usize>,
    history: usize,
    params: Vec<f64>,
}

impl ToyPolicy {
    pub fn new(mut vocab: Vec<String>, history: usize) -> Self {
        vocab.sort();
        vocab.dedup();
        let index = vocab.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let n_contexts = (vocab.len() + 1).pow(history as u32);
        let params = vec![0.0; n_contexts * vocab.len()];
        Self { vocab, index, history, params }
    }

    /// Vocabulary inferred from every symbol appearing in the pairs.
    pub fn from_pairs(pairs: &[SeqPair], history: usize) -> Self {
        let mut vocab: Vec<String> = pairs
            .iter()
            .flat_map(|p| p.chosen.iter().chain(&p.rejected))
            .map(|t| t.symbol.clone())
            .collect();
        vocab.sort();
        vocab.dedup();
        Self::new(vocab, history)
    }

    pub fn vocab(&self) -> &[String] {
        &self.vocab
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn param(&self, coord: usize) -> f64 {
        self.params[coord]
    }

    pub fn nudge(&mut self, coord: usize, delta: f64) {
        self.params[coord] += delta;
    }

    pub fn set_logit(&mut self, context: &[&str], symbol: &str, value: f64) -> Result<(), LearnError> {
        let row = self.context_row_of(context)?;
        let sym = self.symbol_id(symbol)?;
        self.params[row * self.vocab.len() + sym] = value;
        Ok(())
    }

    fn symbol_id(&self, symbol: &str) -> Result<usize, LearnError> {
        self.index.get(symbol).copied().ok_or_else(|| LearnError::UnknownSymbol(symbol.to_string()))
    }

    fn bos(&self) -> usize {
        self.vocab.len()
    }

    /// Row index for an explicit context of up to `history` symbols
    /// (most recent last); shorter contexts are BOS-padded on the left.
    fn context_row_of(&self, context: &[&str]) -> Result<usize, LearnError> {
        let mut ids = vec![self.bos(); self.history];
        for (slot, symbol) in context.iter().rev().take(self.history).rev().enumerate() {
            let offset = self.history - context.len().min(self.history);
            ids[offset + slot] = self.symbol_id(symbol)?;
        }
        Ok(self.row_from_ids(&ids))
    }

    fn row_from_ids(&self, ids: &[usize]) -> usize {
        let base = self.vocab.len() + 1;
        ids.iter().fold(0, |acc, &id| acc * base + id)
    }

    fn log_softmax_row(&self, row: usize) -> Vec<f64> {
        let v = self.vocab.len();
        let logits = &self.params[row * v..(row + 1) * v];
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_z = logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln() + max;
        logits.iter().map(|l| l - log_z).collect()
    }

    fn softmax_row(&self, row: usize) -> Vec<f64> {
        self.log_softmax_row(row).iter().map(|lp| lp.exp()).collect()
    }
}

/// Sum of log-probabilities of the policy-generated symbols in a sequence,
/// conditioning on everything that came before (including environment
/// symbols, which are never scored).
pub fn trajectory_logprob(policy: &ToyPolicy, traj: &TaggedSeq) -> Result<f64, LearnError> {
    let mut context = vec![policy.bos(); policy.history];
    let mut logprob = 0.0;
    for tagged in traj {
        let id = policy.symbol_id(&tagged.symbol)?;
        if tagged.role == SymbolRole::Policy {
            let row = policy.row_from_ids(&context);
            logprob += policy.log_softmax_row(row)[id];
        }
        context.rotate_left(1);
        *context.last_mut().expect("history >= 1") = id;
    }
    if !logprob.is_finite() {
        return Err(LearnError::NonFinite { step: None });
    }
    Ok(logprob)
}

/// Gradient of [`trajectory_logprob`] with respect to the logit table.
fn grad_trajectory_logprob(
    policy: &ToyPolicy,
    traj: &TaggedSeq,
    grad: &mut [f64],
    scale: f64,
) -> Result<f64, LearnError> {
    let v = policy.vocab.len();
    let mut context = vec![policy.bos(); policy.history];
    let mut logprob = 0.0;
    for tagged in traj {
        let id = policy.symbol_id(&tagged.symbol)?;
        if tagged.role == SymbolRole::Policy {
            let row = policy.row_from_ids(&context);
            let probs = policy.softmax_row(row);
            logprob += probs[id].ln();
            let base = row * v;
            for (j, p) in probs.iter().enumerate() {
                grad[base + j] -= scale * p;
            }
            grad[base + id] += scale;
        }
        context.rotate_left(1);
        *context.last_mut().expect("history >= 1") = id;
    }
    Ok(logprob)
}

/// Mean negative log-likelihood of a dataset of tagged sequences.
pub fn sft_nll(policy: &ToyPolicy, dataset: &[TaggedSeq]) -> Result<f64, LearnError> {
    if dataset.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let mut total = 0.0;
    for traj in dataset {
        total -= trajectory_logprob(policy, traj)?;
    }
    Ok(total / dataset.len() as f64)
}

/// Analytic gradient of [`sft_nll`].
pub fn sft_nll_grad(policy: &ToyPolicy, dataset: &[TaggedSeq]) -> Result<Vec<f64>, LearnError> {
    if dataset.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let mut grad = vec![0.0; policy.n_params()];
    let scale = -1.0 / dataset.len() as f64;
    for traj in dataset {
        grad_trajectory_logprob(policy, traj, &mut grad, scale)?;
    }
    Ok(grad)
}

/// Numerically stable `ln(1 + exp(x))`.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// The preference loss on raw log-probabilities:
/// `-log sigmoid(beta * ((lp_w - lp_w_ref) - (lp_l - lp_l_ref)))`.
pub fn tdpo_loss_from_logps(
    lp_chosen: f64,
    lp_chosen_ref: f64,
    lp_rejected: f64,
    lp_rejected_ref: f64,
    beta: f64,
) -> f64 {
    let inner = beta * ((lp_chosen - lp_chosen_ref) - (lp_rejected - lp_rejected_ref));
    softplus(-inner)
}

/// Preference loss for one sequence pair under a policy and frozen reference.
pub fn tdpo_loss(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    pair: &SeqPair,
    beta: f64,
) -> Result<f64, LearnError> {
    let lp_w = trajectory_logprob(policy, &pair.chosen)?;
    let lp_l = trajectory_logprob(policy, &pair.rejected)?;
    let lp_w_ref = trajectory_logprob(reference, &pair.chosen)?;
    let lp_l_ref = trajectory_logprob(reference, &pair.rejected)?;
    let loss = tdpo_loss_from_logps(lp_w, lp_w_ref, lp_l, lp_l_ref, beta);
    if !loss.is_finite() {
        return Err(LearnError::NonFinite { step: None });
    }
    Ok(loss)
}

/// Mean preference loss over a batch; pairs are reduced in id order so the
/// result does not depend on input ordering.
pub fn tdpo_batch_loss(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    pairs: &[SeqPair],
    beta: f64,
) -> Result<f64, LearnError> {
    if pairs.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[a].id.cmp(&pairs[b].id));
    let mut total = 0.0;
    for i in order {
        total += tdpo_loss(policy, reference, &pairs[i], beta)?;
    }
    Ok(total / pairs.len() as f64)
}

/// Analytic gradient of [`tdpo_batch_loss`] with respect to the policy logits
/// (the reference is a constant).
pub fn tdpo_batch_grad(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    pairs: &[SeqPair],
    beta: f64,
) -> Result<Vec<f64>, LearnError> {
    if pairs.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    order.sort_by(|&a, &b| pairs[a].id.cmp(&pairs[b].id));
    let mut grad = vec![0.0; policy.n_params()];
    for i in order {
        let pair = &pairs[i];
        let lp_w = trajectory_logprob(policy, &pair.chosen)?;
        let lp_l = trajectory_logprob(policy, &pair.rejected)?;
        let lp_w_ref = trajectory_logprob(reference, &pair.chosen)?;
        let lp_l_ref = trajectory_logprob(reference, &pair.rejected)?;
        let inner = beta * ((lp_w - lp_w_ref) - (lp_l - lp_l_ref));
        // d softplus(-inner) / d inner = sigmoid(inner) - 1
        let dinner = sigmoid(inner) - 1.0;
        let scale = dinner * beta / pairs.len() as f64;
        grad_trajectory_logprob(policy, &pair.chosen, &mut grad, scale)?;
        grad_trajectory_logprob(policy, &pair.rejected, &mut grad, -scale)?;
    }
    Ok(grad)
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Compare an analytic gradient against central finite differences on
/// `probe_count` random coordinates; returns the max relative error.
pub fn grad_check<F>(
    policy: &ToyPolicy,
    loss_fn: F,
    analytic: &[f64],
    probe_count: usize,
    seed: u64,
) -> Result<f64, LearnError>
where
    F: Fn(&ToyPolicy) -> Result<f64, LearnError>,
{
    const STEP: f64 = 1e-5;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_rel = 0.0f64;
    for _ in 0..probe_count.max(1) {
        let coord = rng.gen_range(0..policy.n_params());
        let mut plus = policy.clone();
        plus.nudge(coord, STEP);
        let mut minus = policy.clone();
        minus.nudge(coord, -STEP);
        let fd = (loss_fn(&plus)? - loss_fn(&minus)?) / (2.0 * STEP);
        let a = analytic[coord];
        // The floor keeps finite-difference noise at exactly-zero coordinates
        // (cancelling chosen/rejected contributions) from reading as error.
        let denom = a.abs().max(fd.abs()).max(1e-6);
        max_rel = max_rel.max((a - fd).abs() / denom);
    }
    Ok(max_rel)
}

/// Preference-training hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TdpoConfig {
    pub beta: f64,
    pub learning_rate: f64,
    pub steps: usize,
}

impl Default for TdpoConfig {
    fn default() -> Self {
        Self { beta: 0.1, learning_rate: 0.1, steps: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRow {
    pub step: usize,
    pub loss: f64,
    pub mean_margin: f64,
    pub mean_ref_drift: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub policy: ToyPolicy,
    pub rows: Vec<TrainRow>,
}

impl TrainReport {
    /// CSV columns: step, loss, mean_margin, mean_ref_drift.
    pub fn write_csv(&self, path: &Path) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "step,loss,mean_margin,mean_ref_drift")?;
        for row in &self.rows {
            writeln!(out, "{},{},{},{}", row.step, row.loss, row.mean_margin, row.mean_ref_drift)?;
        }
        out.flush()
    }
}

fn batch_metrics(
    policy: &ToyPolicy,
    reference: &ToyPolicy,
    pairs: &[SeqPair],
    beta: f64,
) -> Result<(f64, f64, f64), LearnError> {
    let loss = tdpo_batch_loss(policy, reference, pairs, beta)?;
    let mut margin = 0.0;
    let mut drift = 0.0;
    for pair in pairs {
        let lp_w = trajectory_logprob(policy, &pair.chosen)?;
        let lp_l = trajectory_logprob(policy, &pair.rejected)?;
        let lp_w_ref = trajectory_logprob(reference, &pair.chosen)?;
        let lp_l_ref = trajectory_logprob(reference, &pair.rejected)?;
        margin += beta * ((lp_w - lp_w_ref) - (lp_l - lp_l_ref));
        drift += lp_w - lp_w_ref;
    }
    Ok((loss, margin / pairs.len() as f64, drift / pairs.len() as f64))
}

/// Gradient descent on the mean preference loss with the reference frozen at
/// initialization. Returns the trained policy and one metrics row per step.
pub fn toy_train(pairs: &[SeqPair], cfg: &TdpoConfig) -> Result<TrainReport, LearnError> {
    if pairs.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    if !cfg.beta.is_finite() || cfg.beta <= 0.0 {
        return Err(LearnError::BadConfig("beta must be > 0".into()));
    }
    for pair in pairs {
        let chosen: Vec<&str> = pair
            .chosen
            .iter()
            .filter(|t| t.role == SymbolRole::Policy)
            .map(|t| t.symbol.as_str())
            .collect();
        let rejected: Vec<&str> = pair
            .rejected
            .iter()
            .filter(|t| t.role == SymbolRole::Policy)
            .map(|t| t.symbol.as_str())
            .collect();
        if chosen == rejected {
            return Err(LearnError::NotSeparable(pair.id.clone()));
        }
    }

    let mut policy = ToyPolicy::from_pairs(pairs, 2);
    let reference = policy.clone();
    let mut rows = Vec::with_capacity(cfg.steps);
    for step in 1..=cfg.steps {
        let grad = tdpo_batch_grad(&policy, &reference, pairs, cfg.beta)?;
        for (p, g) in policy.params.iter_mut().zip(&grad) {
            *p -= cfg.learning_rate * g;
        }
        let (loss, mean_margin, mean_ref_drift) =
            batch_metrics(&policy, &reference, pairs, cfg.beta)?;
        if !loss.is_finite() {
            return Err(LearnError::NonFinite { step: Some(step) });
        }
        rows.push(TrainRow { step, loss, mean_margin, mean_ref_drift });
    }
    Ok(TrainReport { policy, rows })
}

/// Lower a trajectory to the behavioral symbol alphabet: one policy symbol
/// per emitted block plus one environment symbol per tool result.
pub fn trajectory_symbols(traj: &Trajectory) -> TaggedSeq {
    let mut out = Vec::new();
    let mut push = |symbol: String, role: SymbolRole| out.push(TaggedSymbol { symbol, role });
    for block in &traj.blocks {
        match block {
            Block::Thinking { .. } => push("think".into(), SymbolRole::Policy),
            Block::Grounding { result } => {
                push("search".into(), SymbolRole::Policy);
                let env = if result.spans.is_empty() { "nospan" } else { "spans" };
                push(env.into(), SymbolRole::Env);
            }
            Block::Perception { result, .. } => {
                push("perceive".into(), SymbolRole::Policy);
                let env = if result.answer == "not visible" || result.answer.starts_with("[perception failed") {
                    "novis"
                } else {
                    "seen"
                };
                push(env.into(), SymbolRole::Env);
            }
            Block::Answer { text, .. } => {
                let tag = text
                    .chars()
                    .find(|c| c.is_ascii_alphanumeric())
                    .map(|c| c.to_ascii_lowercase())
                    .map(|c| format!("ans_{c}"))
                    .unwrap_or_else(|| "ans_other".to_string());
                push(tag, SymbolRole::Policy);
            }
        }
    }
    out
}

/// Lower preference pairs to sequence pairs, keeping ids unique and stable.
pub fn pairs_to_sequences(pairs: &[PreferencePair]) -> Vec<SeqPair> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, p)| SeqPair {
            id: format!("{}#{i:04}", p.task_id),
            chosen: trajectory_symbols(&p.chosen),
            rejected: trajectory_symbols(&p.rejected),
        })
        .collect()
}
