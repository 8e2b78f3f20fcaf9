//! Acc@k evaluation with the strict composite-mention rule.
//!
//! A mention counts as correct at k only when every one of its components
//! has a gold CUI inside its top-k predictions. The top-k CUI list of a
//! component collapses the synonym ranking to distinct CUIs in rank order,
//! so a concept with many high-ranking synonyms occupies a single slot.

use std::collections::BTreeMap;
use std::collections::HashMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::corpus::{ConceptId, Dictionary, MentionRecord};
use crate::dense::{dot, EncoderConfig, EncoderParams};
use crate::retrieval::SynonymIndex;
use crate::sparse::{sparse_score, TfIdfModel};
use crate::{exec, Error, Result};

/// Which channels inference ranks by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreMode {
    Hybrid,
    SparseOnly,
    DenseOnly,
}

impl std::str::FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hybrid" => Ok(ScoreMode::Hybrid),
            "sparse" => Ok(ScoreMode::SparseOnly),
            "dense" => Ok(ScoreMode::DenseOnly),
            other => Err(Error::InvalidConfig(format!(
                "unknown score mode {other:?} (expected hybrid, sparse, or dense)"
            ))),
        }
    }
}

/// One slot of a distinct-CUI ranking: the CUI, its best synonym, and that
/// synonym's score.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RankedCui {
    pub cui: ConceptId,
    pub synonym_id: usize,
    pub synonym: String,
    pub score: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComponentReport {
    pub text: String,
    pub gold: Vec<ConceptId>,
    pub ranked: Vec<RankedCui>,
    /// Rank (1-based) of the first gold CUI in `ranked`, if present.
    pub gold_rank: Option<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MentionReport {
    pub raw: String,
    pub is_composite: bool,
    pub unsplit_fallback: bool,
    pub components: Vec<ComponentReport>,
    pub correct_at: BTreeMap<usize, bool>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct EvalCounts {
    pub total: usize,
    pub composite: usize,
    pub unsplit_fallback: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub score_mode: ScoreMode,
    pub ks: Vec<usize>,
    pub acc_at: BTreeMap<usize, f64>,
    pub counts: EvalCounts,
    pub mentions: Vec<MentionReport>,
}

/// Exact distinct-CUI top-k for one component: every synonym is scored, each
/// CUI keeps its best synonym (ties to the lower synonym id), and CUIs are
/// ranked by that score with ties to the lower synonym id.
fn rank_cuis(
    index: &SynonymIndex<'_>,
    text: &str,
    k: usize,
    mode: ScoreMode,
) -> Vec<RankedCui> {
    let (m_sparse, m_dense) = index.encode_mention(text);
    let mut best: HashMap<&ConceptId, (f64, usize)> = HashMap::new();
    for id in 0..index.dict.len() {
        let score = match mode {
            ScoreMode::Hybrid => {
                index.lambda * sparse_score(&m_sparse, &index.sparse_rows[id])
                    + dot(&m_dense, index.dense_rows.row(id))
            }
            ScoreMode::SparseOnly => sparse_score(&m_sparse, &index.sparse_rows[id]),
            ScoreMode::DenseOnly => dot(&m_dense, index.dense_rows.row(id)),
        };
        let cui = &index.dict.entry(id).cui;
        match best.get_mut(cui) {
            None => {
                best.insert(cui, (score, id));
            }
            Some(slot) => {
                if score > slot.0 {
                    *slot = (score, id);
                }
            }
        }
    }
    let mut ranked: Vec<(&ConceptId, f64, usize)> =
        best.into_iter().map(|(cui, (s, id))| (cui, s, id)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)));
    ranked.truncate(k);
    ranked
        .into_iter()
        .map(|(cui, score, id)| RankedCui {
            cui: cui.clone(),
            synonym_id: id,
            synonym: index.dict.entry(id).name.clone(),
            score,
        })
        .collect()
}

/// Rank one component against the whole dictionary and mark where its gold
/// CUIs land. An empty gold set leaves `gold_rank` as `None`.
pub fn rank_component(
    index: &SynonymIndex<'_>,
    text: &str,
    gold: &std::collections::BTreeSet<ConceptId>,
    k: usize,
    mode: ScoreMode,
) -> ComponentReport {
    let ranked = rank_cuis(index, text, k, mode);
    let gold_rank = ranked
        .iter()
        .position(|r| gold.contains(&r.cui))
        .map(|p| p + 1);
    ComponentReport {
        text: text.to_string(),
        gold: gold.iter().cloned().collect(),
        ranked,
        gold_rank,
    }
}

/// Acc@k over mention reports: a mention scores 1 iff every component's gold
/// set intersects its top-k distinct-CUI list.
pub fn acc_at_k(mentions: &[MentionReport], k: usize) -> f64 {
    if mentions.is_empty() {
        return 0.0;
    }
    let correct = mentions
        .iter()
        .filter(|m| {
            m.components
                .iter()
                .all(|c| matches!(c.gold_rank, Some(r) if r <= k))
        })
        .count();
    correct as f64 / mentions.len() as f64
}

/// Run inference on every mention and assemble the evaluation report.
pub fn evaluate(
    dict: &Dictionary,
    tfidf: &TfIdfModel,
    cfg: &EncoderConfig,
    params: &EncoderParams,
    lambda: f64,
    mentions: &[MentionRecord],
    ks: &[usize],
    mode: ScoreMode,
) -> Result<EvalReport> {
    if mentions.is_empty() {
        return Err(Error::EmptyMentionSet);
    }
    if ks.is_empty() || ks.iter().any(|&k| k == 0) {
        return Err(Error::InvalidConfig("ks must be positive".into()));
    }
    let index = SynonymIndex::build(dict, tfidf, cfg, params, lambda)?;
    let max_k = ks.iter().copied().max().expect("nonempty");

    let reports: Vec<MentionReport> = exec::map(mentions, |rec| {
        let components: Vec<ComponentReport> = rec
            .components
            .iter()
            .map(|c| rank_component(&index, &c.text, &c.gold, max_k, mode))
            .collect();
        let correct_at: BTreeMap<usize, bool> = ks
            .iter()
            .map(|&k| {
                let ok = components
                    .iter()
                    .all(|c| matches!(c.gold_rank, Some(r) if r <= k));
                (k, ok)
            })
            .collect();
        MentionReport {
            raw: rec.raw.clone(),
            is_composite: rec.is_composite,
            unsplit_fallback: rec.unsplit_fallback,
            components,
            correct_at,
        }
    });

    let counts = EvalCounts {
        total: reports.len(),
        composite: reports.iter().filter(|m| m.is_composite).count(),
        unsplit_fallback: reports.iter().filter(|m| m.unsplit_fallback).count(),
    };
    let acc_at: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, acc_at_k(&reports, k))).collect();
    Ok(EvalReport {
        score_mode: mode,
        ks: ks.to_vec(),
        acc_at,
        counts,
        mentions: reports,
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// TSV of mentions that missed at the largest k: one row per component.
    pub fn failures_tsv(&self) -> String {
        let max_k = self.ks.iter().copied().max().unwrap_or(1);
        let mut out = String::from("mention\tcomponent\tgold\tpredicted_cui\tpredicted_synonym\tgold_rank\n");
        for mention in &self.mentions {
            if self.ks.iter().all(|k| mention.correct_at[k]) {
                continue;
            }
            for comp in &mention.components {
                let hit = matches!(comp.gold_rank, Some(r) if r <= max_k);
                if hit {
                    continue;
                }
                let golds = comp
                    .gold
                    .iter()
                    .map(ConceptId::as_str)
                    .collect::<Vec<_>>()
                    .join("|");
                let (pred_cui, pred_syn) = comp
                    .ranked
                    .first()
                    .map(|r| (r.cui.as_str(), r.synonym.as_str()))
                    .unwrap_or(("-", "-"));
                let rank = comp
                    .gold_rank
                    .map(|r| r.to_string())
                    .unwrap_or_else(|| "-".to_string());
                writeln!(
                    out,
                    "{}\t{}\t{}\t{}\t{}\t{}",
                    mention.raw, comp.text, golds, pred_cui, pred_syn, rank
                )
                .expect("write to string");
            }
        }
        out
    }
}
