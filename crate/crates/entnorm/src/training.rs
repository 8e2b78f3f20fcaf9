//! Optimization of the encoder parameters and the sparse weight `lambda`.
//!
//! Each epoch refreshes every synonym's dense vector, composes fresh top-k
//! candidate lists for every training mention component, and then runs
//! mini-batch Adam with decoupled weight decay over shuffled components.
//! Candidate lists stay fixed within an epoch while candidate scores are
//! recomputed live at every step, so gradients are exact with respect to the
//! current parameters.
//!
//! The default objective is the negative marginal log-likelihood of the
//! positive synonyms inside each candidate set; hard-EM (only the
//! highest-probability positive) and pairwise binary cross-entropy are
//! available as baselines. Components whose candidate set contains no
//! positive synonym are skipped from the marginal losses and reported.
//!
//! Per-batch gradients fan out across workers; the reduction happens in
//! fixed component order, so training is bit-deterministic in both parallel
//! and sequential mode.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{ConceptId, Dictionary, MentionRecord};
use crate::dense::{
    backward, dot, encode_with_state, EncoderConfig, EncoderParams, GradBuffer,
};
use crate::retrieval::{compose_candidates, CandidateSet, DenseMatrix};
use crate::scorer::score_parts;
use crate::sparse::{encode_sparse, SparseVector, TfIdfModel};
use crate::{exec, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mml,
    HardEm,
    Pairwise,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            LossKind::Mml => "mml",
            LossKind::HardEm => "hard_em",
            LossKind::Pairwise => "pairwise",
        };
        f.write_str(name)
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mml" => Ok(LossKind::Mml),
            "hard_em" => Ok(LossKind::HardEm),
            "pairwise" => Ok(LossKind::Pairwise),
            other => Err(Error::InvalidConfig(format!(
                "unknown loss {other:?} (expected mml, hard_em, or pairwise)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    pub k: usize,
    pub alpha: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub loss: LossKind,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            k: 20,
            alpha: 0.5,
            epochs: 10,
            batch_size: 16,
            learning_rate: 1e-5,
            weight_decay: 1e-2,
            loss: LossKind::Mml,
            seed: 42,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidConfig("k must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig("alpha must be in [0, 1]".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be positive".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidConfig(
                "weight_decay must be non-negative".into(),
            ));
        }
        Ok(())
    }
}

/// Softmax over candidate scores with max-subtraction.
pub fn candidate_probabilities(scores: &[f64]) -> Vec<f64> {
    debug_assert!(!scores.is_empty());
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Total probability mass of the positive candidates.
pub fn marginal_probability(probs: &[f64], positives: &[bool]) -> f64 {
    debug_assert_eq!(probs.len(), positives.len());
    probs
        .iter()
        .zip(positives)
        .filter(|(_, &pos)| pos)
        .map(|(p, _)| p)
        .sum()
}

fn log_sum_exp(scores: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = scores.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return f64::NEG_INFINITY;
    }
    max + scores.map(|s| (s - max).exp()).sum::<f64>().ln()
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// A training mention component with its per-epoch candidate list: candidate
/// synonym ids, their static sparse scores, and positivity flags.
#[derive(Debug, Clone)]
pub struct PreparedComponent {
    pub text: String,
    pub candidate_ids: Vec<usize>,
    pub candidate_sparse: Vec<f64>,
    pub positives: Vec<bool>,
}

impl PreparedComponent {
    pub fn from_candidate_set(
        text: &str,
        gold: &BTreeSet<ConceptId>,
        set: &CandidateSet,
        dict: &Dictionary,
    ) -> Self {
        let candidate_ids: Vec<usize> = set.candidates.iter().map(|c| c.synonym_id).collect();
        let candidate_sparse: Vec<f64> = set.candidates.iter().map(|c| c.sparse_score).collect();
        let positives: Vec<bool> = candidate_ids
            .iter()
            .map(|&id| gold.contains(&dict.entry(id).cui))
            .collect();
        PreparedComponent {
            text: text.to_string(),
            candidate_ids,
            candidate_sparse,
            positives,
        }
    }

    pub fn has_positive(&self) -> bool {
        self.positives.iter().any(|&p| p)
    }
}

/// Per-batch bookkeeping: how many components contributed to the loss, how
/// many were skipped for lack of a positive candidate, and (pairwise only)
/// how many mention-candidate pairs were scored.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BatchStats {
    pub contributing: usize,
    pub skipped: usize,
    pub pairs: usize,
}

enum ComponentOutcome {
    Skipped,
    Contrib {
        loss: f64,
        pairs: usize,
        grads: Option<GradBuffer>,
    },
}

/// Forward (and optionally backward) pass for one component against its
/// fixed candidate list, with live scores from the current parameters.
fn component_pass(
    pc: &PreparedComponent,
    dict: &Dictionary,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    lambda: f64,
    kind: LossKind,
    want_grads: bool,
) -> ComponentOutcome {
    let k = pc.candidate_ids.len();
    debug_assert!(k > 0);
    if kind != LossKind::Pairwise && !pc.has_positive() {
        return ComponentOutcome::Skipped;
    }

    let mention_state = encode_with_state(&pc.text, params, cfg);
    let cand_states: Vec<_> = pc
        .candidate_ids
        .iter()
        .map(|&id| encode_with_state(&dict.entry(id).name, params, cfg))
        .collect();
    let scores: Vec<f64> = cand_states
        .iter()
        .zip(&pc.candidate_sparse)
        .map(|(state, &sp)| score_parts(sp, dot(&mention_state.output, &state.output), lambda))
        .collect();

    // d(loss)/d(score_i), unscaled by the batch denominator
    let mut g_scores = vec![0.0; k];
    let (loss, pairs) = match kind {
        LossKind::Mml => {
            let lse_all = log_sum_exp(scores.iter().cloned());
            let lse_pos = log_sum_exp(
                scores
                    .iter()
                    .zip(&pc.positives)
                    .filter(|(_, &p)| p)
                    .map(|(s, _)| *s),
            );
            for i in 0..k {
                let q = (scores[i] - lse_all).exp();
                g_scores[i] = q;
                if pc.positives[i] {
                    g_scores[i] -= (scores[i] - lse_pos).exp();
                }
            }
            (lse_all - lse_pos, 1)
        }
        LossKind::HardEm => {
            let lse_all = log_sum_exp(scores.iter().cloned());
            let mut target = None;
            for i in 0..k {
                if pc.positives[i] && target.is_none_or(|t: usize| scores[i] > scores[t]) {
                    target = Some(i);
                }
            }
            let target = target.expect("positive exists");
            for i in 0..k {
                g_scores[i] = (scores[i] - lse_all).exp();
            }
            g_scores[target] -= 1.0;
            (lse_all - scores[target], 1)
        }
        LossKind::Pairwise => {
            let mut total = 0.0;
            for i in 0..k {
                let y = if pc.positives[i] { 1.0 } else { 0.0 };
                total += softplus(scores[i]) - y * scores[i];
                g_scores[i] = sigmoid(scores[i]) - y;
            }
            (total, k)
        }
    };

    let grads = if want_grads {
        let h = params.h;
        let mut buf = GradBuffer::new(h);
        for (g, &sp) in g_scores.iter().zip(&pc.candidate_sparse) {
            buf.lambda += g * sp;
        }
        let mut mention_up = vec![0.0; h];
        for (g, state) in g_scores.iter().zip(&cand_states) {
            for (u, v) in mention_up.iter_mut().zip(&state.output) {
                *u += g * v;
            }
        }
        backward(&mention_state, &mention_up, params, &mut buf).expect("fresh state");
        let mut cand_up = vec![0.0; h];
        for (g, state) in g_scores.iter().zip(&cand_states) {
            for (u, v) in cand_up.iter_mut().zip(&mention_state.output) {
                *u = g * v;
            }
            backward(state, &cand_up, params, &mut buf).expect("fresh state");
        }
        Some(buf)
    } else {
        None
    };

    ComponentOutcome::Contrib { loss, pairs, grads }
}

fn batch_pass(
    batch: &[&PreparedComponent],
    dict: &Dictionary,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    lambda: f64,
    kind: LossKind,
    want_grads: bool,
) -> (f64, BatchStats, Option<GradBuffer>) {
    debug_assert!(!batch.is_empty());
    let outcomes = exec::map(batch, |pc| {
        component_pass(pc, dict, params, cfg, lambda, kind, want_grads)
    });

    let mut stats = BatchStats::default();
    let mut loss_sum = 0.0;
    let mut grads = want_grads.then(|| GradBuffer::new(params.h));
    for outcome in &outcomes {
        match outcome {
            ComponentOutcome::Skipped => stats.skipped += 1,
            ComponentOutcome::Contrib {
                loss,
                pairs,
                grads: contrib,
            } => {
                stats.contributing += 1;
                stats.pairs += pairs;
                loss_sum += loss;
                if let (Some(total), Some(part)) = (grads.as_mut(), contrib.as_ref()) {
                    total.merge(part);
                }
            }
        }
    }
    let denom = match kind {
        LossKind::Pairwise => stats.pairs,
        _ => stats.contributing,
    };
    if denom == 0 {
        return (0.0, stats, None);
    }
    let scale = 1.0 / denom as f64;
    if let Some(g) = grads.as_mut() {
        g.scale(scale);
    }
    (loss_sum * scale, stats, grads)
}

/// Negative marginal log-likelihood of the positive candidates, averaged
/// over the batch components that have at least one positive.
pub fn mml_loss(
    batch: &[&PreparedComponent],
    dict: &Dictionary,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    lambda: f64,
) -> (f64, BatchStats, Option<GradBuffer>) {
    batch_pass(batch, dict, params, cfg, lambda, LossKind::Mml, true)
}

/// Hard-EM variant: the loss of the highest-probability positive candidate.
pub fn hard_em_loss(
    batch: &[&PreparedComponent],
    dict: &Dictionary,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    lambda: f64,
) -> (f64, BatchStats, Option<GradBuffer>) {
    batch_pass(batch, dict, params, cfg, lambda, LossKind::HardEm, true)
}

/// Binary cross-entropy over every (component, candidate) pair.
pub fn pairwise_loss(
    batch: &[&PreparedComponent],
    dict: &Dictionary,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    lambda: f64,
) -> (f64, BatchStats, Option<GradBuffer>) {
    batch_pass(batch, dict, params, cfg, lambda, LossKind::Pairwise, true)
}

/// Forward-only batch loss, used by the finite-difference audits.
pub fn batch_loss(
    batch: &[&PreparedComponent],
    dict: &Dictionary,
    params: &EncoderParams,
    cfg: &EncoderConfig,
    lambda: f64,
    kind: LossKind,
) -> (f64, BatchStats) {
    let (loss, stats, _) = batch_pass(batch, dict, params, cfg, lambda, kind, false);
    (loss, stats)
}

/// Adam with decoupled weight decay. Embedding rows are updated sparsely:
/// only rows touched by the step move, including their moments and decay.
/// Bias correction uses the global step count. `b` and `lambda` are never
/// decayed.
#[derive(Debug, Clone)]
pub struct AdamState {
    m_e: Vec<f64>,
    v_e: Vec<f64>,
    m_w: Vec<f64>,
    v_w: Vec<f64>,
    m_b: Vec<f64>,
    v_b: Vec<f64>,
    m_l: f64,
    v_l: f64,
    t: u64,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl AdamState {
    pub fn new(params: &EncoderParams) -> Self {
        AdamState {
            m_e: vec![0.0; params.e.len()],
            v_e: vec![0.0; params.e.len()],
            m_w: vec![0.0; params.w.len()],
            v_w: vec![0.0; params.w.len()],
            m_b: vec![0.0; params.b.len()],
            v_b: vec![0.0; params.b.len()],
            m_l: 0.0,
            v_l: 0.0,
            t: 0,
        }
    }

    pub fn step(
        &mut self,
        params: &mut EncoderParams,
        lambda: &mut f64,
        grads: &GradBuffer,
        lr: f64,
        wd: f64,
    ) {
        self.t += 1;
        let bc1 = 1.0 - BETA1.powi(self.t as i32);
        let bc2 = 1.0 - BETA2.powi(self.t as i32);
        let update = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64, decay: f64| {
            *m = BETA1 * *m + (1.0 - BETA1) * g;
            *v = BETA2 * *v + (1.0 - BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *p -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + decay * *p);
        };
        let h = params.h;
        for (&row, grad) in &grads.e_rows {
            let base = row as usize * h;
            for j in 0..h {
                update(
                    &mut params.e[base + j],
                    &mut self.m_e[base + j],
                    &mut self.v_e[base + j],
                    grad[j],
                    wd,
                );
            }
        }
        for i in 0..params.w.len() {
            update(
                &mut params.w[i],
                &mut self.m_w[i],
                &mut self.v_w[i],
                grads.w[i],
                wd,
            );
        }
        for i in 0..params.b.len() {
            update(
                &mut params.b[i],
                &mut self.m_b[i],
                &mut self.v_b[i],
                grads.b[i],
                0.0,
            );
        }
        update(lambda, &mut self.m_l, &mut self.v_l, grads.lambda, 0.0);
        params.bump_version();
    }

    pub fn steps_taken(&self) -> u64 {
        self.t
    }
}

/// One metrics-log line. `recall_at_k` is measured on the candidate lists
/// composed at the start of the epoch; the trailing record (epoch == total
/// epochs) carries the post-training recall and no loss.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub recall_at_k: f64,
    pub loss: Option<f64>,
    pub skipped_fraction: Option<f64>,
    pub zero_grad_batches: Option<usize>,
    pub lambda: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub lambda: f64,
    pub metrics: Vec<EpochMetrics>,
}

struct FlatComponent {
    text: String,
    gold: BTreeSet<ConceptId>,
    sparse: SparseVector,
}

/// Train encoder parameters and `lambda` on preprocessed mentions against a
/// dictionary that already has the training set merged in.
///
/// `on_checkpoint(epoch, params, lambda)` fires once with the initial
/// parameters (epoch 0) and once after every completed epoch.
pub fn train(
    dict: &Dictionary,
    tfidf: &TfIdfModel,
    encoder_cfg: &EncoderConfig,
    mentions: &[MentionRecord],
    config: &TrainConfig,
    mut on_checkpoint: impl FnMut(usize, &EncoderParams, f64) -> Result<()>,
) -> Result<TrainOutcome> {
    config.validate()?;
    encoder_cfg.validate()?;
    if dict.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    let components: Vec<FlatComponent> = mentions
        .iter()
        .flat_map(|rec| {
            rec.components.iter().map(|c| FlatComponent {
                text: c.text.clone(),
                gold: c.gold.clone(),
                sparse: encode_sparse(&c.text, tfidf),
            })
        })
        .collect();
    if components.is_empty() {
        return Err(Error::EmptyMentionSet);
    }

    let sparse_rows = crate::retrieval::encode_dictionary_sparse(dict, tfidf);
    let mut params = EncoderParams::init(encoder_cfg);
    let mut lambda = crate::scorer::HybridWeight::default().lambda;
    let mut adam = AdamState::new(&params);
    let mut rng = ChaCha20Rng::seed_from_u64(config.seed);
    let mut metrics = Vec::with_capacity(config.epochs + 1);

    on_checkpoint(0, &params, lambda)?;

    let compose_all = |params: &EncoderParams| -> Vec<PreparedComponent> {
        let dense_rows = DenseMatrix::refresh(dict, params, encoder_cfg);
        exec::map(&components, |comp| {
            let m_dense = crate::dense::encode_dense(&comp.text, params, encoder_cfg);
            let set = compose_candidates(
                &comp.text,
                &comp.sparse,
                &m_dense,
                &sparse_rows,
                &dense_rows,
                config.k,
                config.alpha,
            );
            PreparedComponent::from_candidate_set(&comp.text, &comp.gold, &set, dict)
        })
    };

    for epoch in 0..config.epochs {
        let prepared = compose_all(&params);
        let with_positive = prepared.iter().filter(|p| p.has_positive()).count();
        let recall = with_positive as f64 / prepared.len() as f64;

        let mut order: Vec<usize> = (0..prepared.len()).collect();
        order.shuffle(&mut rng);

        let mut loss_weighted = 0.0;
        let mut loss_denom = 0usize;
        let mut skipped = 0usize;
        let mut zero_grad_batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&PreparedComponent> = chunk.iter().map(|&i| &prepared[i]).collect();
            let (loss, stats, grads) = batch_pass(
                &batch,
                dict,
                &params,
                encoder_cfg,
                lambda,
                config.loss,
                true,
            );
            skipped += stats.skipped;
            match grads {
                Some(grads) => {
                    let weight = match config.loss {
                        LossKind::Pairwise => stats.pairs,
                        _ => stats.contributing,
                    };
                    loss_weighted += loss * weight as f64;
                    loss_denom += weight;
                    adam.step(
                        &mut params,
                        &mut lambda,
                        &grads,
                        config.learning_rate,
                        config.weight_decay,
                    );
                }
                None => zero_grad_batches += 1,
            }
        }

        let epoch_loss = if loss_denom == 0 {
            0.0
        } else {
            loss_weighted / loss_denom as f64
        };
        metrics.push(EpochMetrics {
            epoch,
            recall_at_k: recall,
            loss: Some(epoch_loss),
            skipped_fraction: Some(skipped as f64 / prepared.len() as f64),
            zero_grad_batches: Some(zero_grad_batches),
            lambda,
        });
        on_checkpoint(epoch + 1, &params, lambda)?;
    }

    // Post-training candidate recall with the final parameters.
    let prepared = compose_all(&params);
    let with_positive = prepared.iter().filter(|p| p.has_positive()).count();
    metrics.push(EpochMetrics {
        epoch: config.epochs,
        recall_at_k: with_positive as f64 / prepared.len() as f64,
        loss: None,
        skipped_fraction: None,
        zero_grad_batches: None,
        lambda,
    });

    Ok(TrainOutcome {
        params,
        lambda,
        metrics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_mention_record, SubstitutionMap};
    use crate::sparse::{fit_tfidf, TfIdfConfig};

    fn cid(s: &str) -> ConceptId {
        ConceptId::new(s).unwrap()
    }

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            h: 5,
            buckets: 128,
            ngram_order: 3,
            seed: 9,
            max_chars: 60,
        }
    }

    /// 5-CUI toy fixture: dictionary, tfidf model, and prepared components
    /// with mixed positive counts.
    fn toy_problem() -> (Dictionary, crate::sparse::TfIdfModel, Vec<PreparedComponent>) {
        let dict = Dictionary::from_entries(
            [
                ("prostate cancer", "D1"),
                ("prostate cancers", "D1"),
                ("breast cancer", "D2"),
                ("breast carcinoma", "D2"),
                ("brain disorder", "D3"),
                ("brain disease", "D3"),
                ("liver failure", "D4"),
                ("kidney stone", "D5"),
            ]
            .map(|(n, c)| (n.to_string(), cid(c))),
        )
        .unwrap();
        let tfidf = fit_tfidf(&dict, &TfIdfConfig::default()).unwrap();
        let cfg = tiny_cfg();
        let params = EncoderParams::init(&cfg);
        let sparse_rows = crate::retrieval::encode_dictionary_sparse(&dict, &tfidf);
        let dense_rows = DenseMatrix::refresh(&dict, &params, &cfg);
        let mk = |text: &str, gold: &[&str]| {
            let m_sparse = encode_sparse(text, &tfidf);
            let m_dense = crate::dense::encode_dense(text, &params, &cfg);
            let set = compose_candidates(text, &m_sparse, &m_dense, &sparse_rows, &dense_rows, 5, 0.4);
            let gold: BTreeSet<ConceptId> = gold.iter().map(|c| cid(c)).collect();
            PreparedComponent::from_candidate_set(text, &gold, &set, &dict)
        };
        let comps = vec![
            mk("prostate carcinoma", &["D1"]),
            mk("breast cancers", &["D2"]),
            mk("brain problems", &["D3"]),
            mk("liver failures", &["D4"]),
            mk("gallstone", &["ABSENT"]), // no positive anywhere
        ];
        (dict, tfidf, comps)
    }

    #[test]
    fn softmax_uniform_for_equal_scores() {
        let probs = candidate_probabilities(&[1.3, 1.3, 1.3, 1.3]);
        for p in &probs {
            assert!((p - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn softmax_hand_checked_values() {
        let probs = candidate_probabilities(&[2.0f64.ln(), 0.0]);
        assert!((probs[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((probs[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_is_shift_invariant() {
        let scores = [0.2, -1.4, 3.3, 0.0, 2.2];
        let base = candidate_probabilities(&scores);
        for c in [-100.0, -1.0, 0.5, 42.0] {
            let shifted: Vec<f64> = scores.iter().map(|s| s + c).collect();
            let probs = candidate_probabilities(&shifted);
            for (a, b) in base.iter().zip(&probs) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn marginal_probability_examples() {
        let probs = vec![0.25; 4];
        assert!((marginal_probability(&probs, &[true; 4]) - 1.0).abs() < 1e-12);
        assert_eq!(marginal_probability(&probs, &[false; 4]), 0.0);
        let probs = vec![0.3, 0.25, 0.2, 0.15, 0.1];
        let mask = [true, true, false, false, false];
        assert!((marginal_probability(&probs, &mask) - 0.55).abs() < 1e-15);
    }

    #[test]
    fn mml_all_positive_is_exactly_zero() {
        let (dict, _tfidf, _) = toy_problem();
        let cfg = tiny_cfg();
        let params = EncoderParams::init(&cfg);
        let pc = PreparedComponent {
            text: "prostate cancer".into(),
            candidate_ids: vec![0, 1],
            candidate_sparse: vec![0.9, 0.7],
            positives: vec![true, true],
        };
        let (loss, stats, grads) = mml_loss(&[&pc], &dict, &params, &cfg, 1.0);
        assert_eq!(loss, 0.0);
        assert_eq!(stats.contributing, 1);
        let grads = grads.unwrap();
        assert!(grads.w.iter().all(|g| *g == 0.0));
        assert!(grads.b.iter().all(|g| *g == 0.0));
        assert_eq!(grads.lambda, 0.0);
    }

    #[test]
    fn mml_loss_positive_with_negatives_present() {
        let (dict, _tfidf, comps) = toy_problem();
        let cfg = tiny_cfg();
        let params = EncoderParams::init(&cfg);
        let batch: Vec<&PreparedComponent> = comps[..4].iter().collect();
        let (loss, stats, _) = mml_loss(&batch, &dict, &params, &cfg, 1.0);
        assert!(loss > 0.0 && loss.is_finite());
        assert_eq!(stats.contributing, 4);
        assert_eq!(stats.skipped, 0);
    }

    #[test]
    fn zero_positive_component_is_skipped_and_counted() {
        let (dict, _tfidf, comps) = toy_problem();
        let cfg = tiny_cfg();
        let params = EncoderParams::init(&cfg);
        let batch: Vec<&PreparedComponent> = comps.iter().collect();
        let (_, stats, _) = mml_loss(&batch, &dict, &params, &cfg, 1.0);
        assert_eq!(stats.skipped, 1);
        assert_eq!(stats.contributing, 4);

        // a batch of only zero-positive components yields no gradient
        let lone: Vec<&PreparedComponent> = vec![&comps[4]];
        let (loss, stats, grads) = mml_loss(&lone, &dict, &params, &cfg, 1.0);
        assert_eq!(loss, 0.0);
        assert_eq!(stats.contributing, 0);
        assert!(grads.is_none());
    }

    #[test]
    fn hard_em_equals_mml_with_single_positive() {
        let (dict, _tfidf, comps) = toy_problem();
        let cfg = tiny_cfg();
        let params = EncoderParams::init(&cfg);
        for pc in &comps[..4] {
            if pc.positives.iter().filter(|&&p| p).count() != 1 {
                continue;
            }
            let batch = vec![pc];
            let (l_mml, _, _) = mml_loss(&batch, &dict, &params, &cfg, 1.0);
            let (l_hard, _, _) = hard_em_loss(&batch, &dict, &params, &cfg, 1.0);
            assert_eq!(l_mml.to_bits(), l_hard.to_bits());
        }
    }

    #[test]
    fn hard_em_upper_bounds_mml_with_multiple_positives() {
        let (dict, _tfidf, _) = toy_problem();
        let cfg = tiny_cfg();
        let params = EncoderParams::init(&cfg);
        let pc = PreparedComponent {
            text: "prostate tumor".into(),
            candidate_ids: vec![0, 1, 2, 4],
            candidate_sparse: vec![0.8, 0.75, 0.3, 0.1],
            positives: vec![true, true, false, false],
        };
        let batch = vec![&pc];
        let (l_mml, _, _) = mml_loss(&batch, &dict, &params, &cfg, 1.0);
        let (l_hard, _, _) = hard_em_loss(&batch, &dict, &params, &cfg, 1.0);
        assert!(l_hard >= l_mml);
        assert!(l_hard > l_mml - 1e-15);
    }

    #[test]
    fn pairwise_loss_at_zero_scores_is_ln2() {
        let (dict, _tfidf, _) = toy_problem();
        let cfg = tiny_cfg();
        let mut params = EncoderParams::init(&cfg);
        params.w.iter_mut().for_each(|w| *w = 0.0);
        params.b.iter_mut().for_each(|b| *b = 0.0);
        // zero dense output and lambda 0 force every score to 0
        let pc = PreparedComponent {
            text: "anything".into(),
            candidate_ids: vec![0, 1, 2],
            candidate_sparse: vec![0.5, 0.4, 0.3],
            positives: vec![true, false, false],
        };
        let (loss, stats, _) = pairwise_loss(&[&pc], &dict, &params, &cfg, 0.0);
        assert_eq!(stats.pairs, 3);
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn pairwise_loss_vanishes_for_perfect_separation() {
        let pos = softplus(30.0) - 30.0;
        let neg = softplus(-30.0);
        assert!(pos < 1e-12);
        assert!(neg < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences_for_all_losses() {
        let (dict, _tfidf, comps) = toy_problem();
        let cfg = tiny_cfg();
        let params = EncoderParams::init(&cfg);
        let batch: Vec<&PreparedComponent> = comps.iter().collect();
        let eps = 1e-5;

        for kind in [LossKind::Mml, LossKind::HardEm, LossKind::Pairwise] {
            let (_, _, grads) = batch_pass(&batch, &dict, &params, &cfg, 1.0, kind, true);
            let grads = grads.unwrap();

            let loss_at = |params: &EncoderParams, lambda: f64| -> f64 {
                batch_loss(&batch, &dict, params, &cfg, lambda, kind).0
            };

            let mut check = |name: String, analytic: f64, perturb: &dyn Fn(&mut EncoderParams, f64) -> f64| {
                let mut plus = params.clone();
                let lp = perturb(&mut plus, eps);
                let mut minus = params.clone();
                let lm = perturb(&mut minus, -eps);
                let numeric = (loss_at(&plus, lp) - loss_at(&minus, lm)) / (2.0 * eps);
                // relative error where the gradient is representable; below
                // 1e-5 the central difference sits at its truncation noise
                // floor, so compare absolutely there
                let denom = analytic.abs().max(numeric.abs());
                if denom > 1e-5 {
                    let rel = (analytic - numeric).abs() / denom;
                    assert!(rel < 1e-4, "{kind} {name}: {analytic} vs {numeric}");
                } else {
                    assert!((analytic - numeric).abs() < 1e-8, "{kind} {name}");
                }
            };

            check("lambda".into(), grads.lambda, &|_, d| 1.0 + d);
            for i in 0..cfg.h {
                check(format!("b[{i}]"), grads.b[i], &move |p, d| {
                    p.b[i] += d;
                    1.0
                });
            }
            for idx in [0usize, 3, 7, cfg.h * cfg.h - 1] {
                check(format!("w[{idx}]"), grads.w[idx], &move |p, d| {
                    p.w[idx] += d;
                    1.0
                });
            }
            for (&row, grad) in grads.e_rows.iter().take(4) {
                for j in 0..cfg.h {
                    let flat = row as usize * cfg.h + j;
                    check(format!("e[{row},{j}]"), grad[j], &move |p, d| {
                        p.e[flat] += d;
                        1.0
                    });
                }
            }
        }
    }

    fn train_fixture() -> (Dictionary, crate::sparse::TfIdfModel, Vec<MentionRecord>) {
        let empty = SubstitutionMap::default();
        let dict = Dictionary::from_entries(
            [
                ("velkor zanoma", "C1"),
                ("velkor zanitis", "C1"),
                ("pelmid zanoma", "C2"),
                ("pelmid zanitis", "C2"),
                ("dorvin zanoma", "C3"),
                ("dorvin zanitis", "C3"),
            ]
            .map(|(n, c)| (n.to_string(), cid(c))),
        )
        .unwrap();
        let mentions: Vec<MentionRecord> = [
            ("velkar zanoma", "C1"),
            ("velkor zanitis", "C1"),
            ("pelmad zanoma", "C2"),
            ("pelmid zanitas", "C2"),
            ("dorvan zanoma", "C3"),
            ("dorvin zanitis", "C3"),
        ]
        .iter()
        .map(|(m, c)| build_mention_record(m, vec![cid(c)], &empty, &empty).unwrap())
        .collect();
        let merged = crate::corpus::merge_train_to_dictionary(&dict, &mentions);
        let tfidf = fit_tfidf(&merged, &TfIdfConfig::default()).unwrap();
        (merged, tfidf, mentions)
    }

    #[test]
    fn zero_epochs_returns_initial_state() {
        let (dict, tfidf, mentions) = train_fixture();
        let cfg = tiny_cfg();
        let config = TrainConfig {
            epochs: 0,
            k: 4,
            ..TrainConfig::default()
        };
        let mut checkpoints = 0;
        let outcome = train(&dict, &tfidf, &cfg, &mentions, &config, |_, _, _| {
            checkpoints += 1;
            Ok(())
        })
        .unwrap();
        assert_eq!(checkpoints, 1);
        assert_eq!(outcome.params.e, EncoderParams::init(&cfg).e);
        assert_eq!(outcome.lambda, 1.0);
        assert_eq!(outcome.metrics.len(), 1);
        assert!(outcome.metrics[0].loss.is_none());
    }

    #[test]
    fn invalid_config_rejected_before_any_work() {
        let (dict, tfidf, mentions) = train_fixture();
        let cfg = tiny_cfg();
        let config = TrainConfig {
            alpha: 1.5,
            ..TrainConfig::default()
        };
        let mut called = false;
        let res = train(&dict, &tfidf, &cfg, &mentions, &config, |_, _, _| {
            called = true;
            Ok(())
        });
        assert!(res.is_err());
        assert!(!called);
    }

    #[test]
    fn training_reduces_loss_on_separable_data() {
        let (dict, tfidf, mentions) = train_fixture();
        let cfg = tiny_cfg();
        // alpha = 0 keeps the candidate lists fixed across epochs, so the
        // loss trajectory reflects pure optimization progress
        let config = TrainConfig {
            k: 4,
            alpha: 0.0,
            epochs: 20,
            batch_size: 3,
            learning_rate: 5e-3,
            weight_decay: 1e-2,
            loss: LossKind::Mml,
            seed: 1,
        };
        let outcome = train(&dict, &tfidf, &cfg, &mentions, &config, |_, _, _| Ok(())).unwrap();
        let first = outcome.metrics.first().unwrap().loss.unwrap();
        let last = outcome.metrics[config.epochs - 1].loss.unwrap();
        assert!(
            last < first,
            "loss did not decrease: first {first}, last {last}"
        );
        assert_eq!(outcome.metrics.len(), config.epochs + 1);
    }

    #[test]
    fn training_is_bit_deterministic() {
        let (dict, tfidf, mentions) = train_fixture();
        let cfg = tiny_cfg();
        let config = TrainConfig {
            k: 4,
            epochs: 3,
            batch_size: 2,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let run = || train(&dict, &tfidf, &cfg, &mentions, &config, |_, _, _| Ok(())).unwrap();
        let a = run();
        let b = run();
        assert_eq!(a.lambda.to_bits(), b.lambda.to_bits());
        assert!(a
            .params
            .e
            .iter()
            .zip(&b.params.e)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a
            .params
            .w
            .iter()
            .zip(&b.params.w)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        let ja = serde_json::to_string(&a.metrics).unwrap();
        let jb = serde_json::to_string(&b.metrics).unwrap();
        assert_eq!(ja, jb);
    }

    #[test]
    fn parallel_and_sequential_training_agree() {
        let (dict, tfidf, mentions) = train_fixture();
        let cfg = tiny_cfg();
        let config = TrainConfig {
            k: 4,
            epochs: 2,
            batch_size: 2,
            learning_rate: 1e-3,
            ..TrainConfig::default()
        };
        let a = train(&dict, &tfidf, &cfg, &mentions, &config, |_, _, _| Ok(())).unwrap();
        crate::exec::set_sequential(true);
        let b = train(&dict, &tfidf, &cfg, &mentions, &config, |_, _, _| Ok(())).unwrap();
        crate::exec::set_sequential(false);
        assert!(a
            .params
            .e
            .iter()
            .zip(&b.params.e)
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(a.lambda.to_bits(), b.lambda.to_bits());
    }

    #[test]
    fn loss_kind_parses_cli_names() {
        assert_eq!("mml".parse::<LossKind>().unwrap(), LossKind::Mml);
        assert_eq!("hard_em".parse::<LossKind>().unwrap(), LossKind::HardEm);
        assert_eq!("pairwise".parse::<LossKind>().unwrap(), LossKind::Pairwise);
        assert!("softmax".parse::<LossKind>().is_err());
    }
}
