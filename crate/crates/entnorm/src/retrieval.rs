//! Exact top-k retrieval over the dictionary.
//!
//! Training-time candidate sets are a sparse block of `k - floor(alpha*k)`
//! tf-idf neighbours followed by a dense block filled from the dense ranking
//! (skipping duplicates) up to exactly `min(k, |N|)` candidates. Inference is
//! an exact blocked full scan over precomputed synonym representations; ties
//! break by ascending synonym id everywhere, so every operation is
//! reproducible and equal to a naive sort-everything oracle.

use std::collections::BTreeSet;
use std::collections::HashSet;

use crate::corpus::{ConceptId, Dictionary, MentionRecord};
use crate::dense::{dot, encode_dense, EncoderConfig, EncoderParams};
use crate::scorer::score_parts;
use crate::sparse::{encode_sparse, sparse_score, SparseVector, TfIdfModel};
use crate::{exec, Error, Result};

/// Which ranking put a candidate into the set.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateSource {
    Sparse,
    Dense,
}

impl CandidateSource {
    pub fn as_str(&self) -> &'static str {
        match self {
            CandidateSource::Sparse => "sparse",
            CandidateSource::Dense => "dense",
        }
    }
}

#[derive(Debug, Clone)]
pub struct Candidate {
    pub synonym_id: usize,
    pub source: CandidateSource,
    pub sparse_score: f64,
    pub dense_score: f64,
}

/// Per-mention top-k candidate list.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub mention: String,
    pub k: usize,
    pub alpha: f64,
    pub candidates: Vec<Candidate>,
}

/// Dense representations of every synonym, one row per entry.
#[derive(Debug, Clone)]
pub struct DenseMatrix {
    h: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Encode every dictionary entry with the current parameters.
    pub fn refresh(dict: &Dictionary, params: &EncoderParams, cfg: &EncoderConfig) -> Self {
        let h = params.h;
        let mut data = vec![0.0; dict.len() * h];
        exec::fill_rows(&mut data, h, |i, row| {
            row.copy_from_slice(&encode_dense(&dict.entry(i).name, params, cfg));
        });
        DenseMatrix { h, data }
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let h = rows.first().map(Vec::len).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * h);
        for row in rows {
            assert_eq!(row.len(), h);
            data.extend_from_slice(&row);
        }
        DenseMatrix { h, data }
    }

    pub fn len(&self) -> usize {
        if self.h == 0 {
            0
        } else {
            self.data.len() / self.h
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.h..(i + 1) * self.h]
    }
}

/// Sparse representations of every synonym.
pub fn encode_dictionary_sparse(dict: &Dictionary, model: &TfIdfModel) -> Vec<SparseVector> {
    exec::map(dict.entries(), |e| encode_sparse(&e.name, model))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoredSynonym {
    pub synonym_id: usize,
    pub score: f64,
}

/// Exact top-`j` by (score desc, synonym id asc) via a bounded heap.
fn top_j(n: usize, j: usize, score: impl Fn(usize) -> f64) -> Vec<ScoredSynonym> {
    use std::cmp::Ordering;
    use std::collections::BinaryHeap;

    #[derive(PartialEq)]
    struct Entry {
        score: f64,
        id: usize,
    }
    impl Eq for Entry {}
    // Max-heap keyed by "badness": the worst kept candidate sits on top.
    impl Ord for Entry {
        fn cmp(&self, other: &Self) -> Ordering {
            other
                .score
                .total_cmp(&self.score)
                .then_with(|| self.id.cmp(&other.id))
        }
    }
    impl PartialOrd for Entry {
        fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
            Some(self.cmp(other))
        }
    }

    if j == 0 || n == 0 {
        return Vec::new();
    }
    let mut heap: BinaryHeap<Entry> = BinaryHeap::with_capacity(j + 1);
    for id in 0..n {
        let entry = Entry {
            score: score(id),
            id,
        };
        if heap.len() < j {
            heap.push(entry);
        } else if entry < *heap.peek().expect("nonempty") {
            heap.pop();
            heap.push(entry);
        }
    }
    heap.into_sorted_vec()
        .into_iter()
        .map(|e| ScoredSynonym {
            synonym_id: e.id,
            score: e.score,
        })
        .collect()
}

/// Top `j` synonyms by sparse score, descending; ties by ascending id.
pub fn topk_sparse(
    mention: &SparseVector,
    sparse_rows: &[SparseVector],
    j: usize,
) -> Vec<ScoredSynonym> {
    top_j(sparse_rows.len(), j, |i| {
        sparse_score(mention, &sparse_rows[i])
    })
}

/// Top `j` synonyms by dense score, descending; ties by ascending id.
pub fn topk_dense(mention: &[f64], dense_rows: &DenseMatrix, j: usize) -> Vec<ScoredSynonym> {
    top_j(dense_rows.len(), j, |i| dot(mention, dense_rows.row(i)))
}

/// Compose the training candidate set for one mention component.
///
/// The sparse block holds the `k - floor(alpha*k)` best tf-idf candidates,
/// then the dense ranking refills (skipping duplicates) until the set has
/// exactly `min(k, |N|)` members; should the dense ranking run out, the
/// remaining sparse ranking refills instead.
pub fn compose_candidates(
    mention: &str,
    m_sparse: &SparseVector,
    m_dense: &[f64],
    sparse_rows: &[SparseVector],
    dense_rows: &DenseMatrix,
    k: usize,
    alpha: f64,
) -> CandidateSet {
    debug_assert!(k >= 1);
    debug_assert!((0.0..=1.0).contains(&alpha));
    let n = sparse_rows.len();
    let target = k.min(n);
    let j_dense = ((alpha * k as f64).floor() as usize).min(k);
    let j_sparse = k - j_dense;

    let sparse_ranking = topk_sparse(m_sparse, sparse_rows, target);
    let dense_ranking = topk_dense(m_dense, dense_rows, target);

    let mut chosen: HashSet<usize> = HashSet::with_capacity(target);
    let mut candidates: Vec<Candidate> = Vec::with_capacity(target);

    for entry in sparse_ranking.iter().take(j_sparse) {
        chosen.insert(entry.synonym_id);
        candidates.push(Candidate {
            synonym_id: entry.synonym_id,
            source: CandidateSource::Sparse,
            sparse_score: entry.score,
            dense_score: dot(m_dense, dense_rows.row(entry.synonym_id)),
        });
    }
    for entry in &dense_ranking {
        if candidates.len() >= target {
            break;
        }
        if chosen.insert(entry.synonym_id) {
            candidates.push(Candidate {
                synonym_id: entry.synonym_id,
                source: CandidateSource::Dense,
                sparse_score: sparse_score(m_sparse, &sparse_rows[entry.synonym_id]),
                dense_score: entry.score,
            });
        }
    }
    // Tiny dictionaries: dense ranking exhausted, fall back to the next
    // sparse candidates.
    for entry in sparse_ranking.iter().skip(j_sparse) {
        if candidates.len() >= target {
            break;
        }
        if chosen.insert(entry.synonym_id) {
            candidates.push(Candidate {
                synonym_id: entry.synonym_id,
                source: CandidateSource::Sparse,
                sparse_score: entry.score,
                dense_score: dot(m_dense, dense_rows.row(entry.synonym_id)),
            });
        }
    }
    debug_assert_eq!(candidates.len(), target);
    CandidateSet {
        mention: mention.to_string(),
        k,
        alpha,
        candidates,
    }
}

/// One synonym of a hybrid top-k ranking with its score decomposition.
#[derive(Debug, Clone)]
pub struct Ranked {
    pub synonym_id: usize,
    pub score: f64,
    pub sparse: f64,
    pub dense: f64,
}

/// Frozen snapshot of everything inference needs: the dictionary plus
/// precomputed sparse and dense representations of every synonym. Read-only
/// and safely shareable across parallel readers.
pub struct SynonymIndex<'a> {
    pub dict: &'a Dictionary,
    pub tfidf: &'a TfIdfModel,
    pub cfg: &'a EncoderConfig,
    pub params: &'a EncoderParams,
    pub lambda: f64,
    pub sparse_rows: Vec<SparseVector>,
    pub dense_rows: DenseMatrix,
}

impl<'a> SynonymIndex<'a> {
    pub fn build(
        dict: &'a Dictionary,
        tfidf: &'a TfIdfModel,
        cfg: &'a EncoderConfig,
        params: &'a EncoderParams,
        lambda: f64,
    ) -> Result<Self> {
        if dict.is_empty() {
            return Err(Error::EmptyDictionary);
        }
        Ok(SynonymIndex {
            dict,
            tfidf,
            cfg,
            params,
            lambda,
            sparse_rows: encode_dictionary_sparse(dict, tfidf),
            dense_rows: DenseMatrix::refresh(dict, params, cfg),
        })
    }

    pub fn encode_mention(&self, text: &str) -> (SparseVector, Vec<f64>) {
        (
            encode_sparse(text, self.tfidf),
            encode_dense(text, self.params, self.cfg),
        )
    }

    pub fn compose(&self, text: &str, k: usize, alpha: f64) -> CandidateSet {
        let (m_sparse, m_dense) = self.encode_mention(text);
        compose_candidates(
            text,
            &m_sparse,
            &m_dense,
            &self.sparse_rows,
            &self.dense_rows,
            k,
            alpha,
        )
    }

    /// Exact hybrid top-k over the whole dictionary (full scan).
    pub fn top_k(&self, text: &str, k: usize) -> Vec<Ranked> {
        let (m_sparse, m_dense) = self.encode_mention(text);
        let lambda = self.lambda;
        let ranking = top_j(self.dict.len(), k, |i| {
            score_parts(
                sparse_score(&m_sparse, &self.sparse_rows[i]),
                dot(&m_dense, self.dense_rows.row(i)),
                lambda,
            )
        });
        ranking
            .into_iter()
            .map(|entry| {
                let sparse = sparse_score(&m_sparse, &self.sparse_rows[entry.synonym_id]);
                let dense = dot(&m_dense, self.dense_rows.row(entry.synonym_id));
                Ranked {
                    synonym_id: entry.synonym_id,
                    score: entry.score,
                    sparse,
                    dense,
                }
            })
            .collect()
    }
}

/// Prediction for one mention component: the CUI of the nearest synonym plus
/// the full top-k ranking for Acc@k.
#[derive(Debug, Clone)]
pub struct ComponentPrediction {
    pub text: String,
    pub predicted: ConceptId,
    pub topk: Vec<Ranked>,
}

/// Exact argmax of the hybrid score over all synonyms for every component of
/// a mention.
pub fn mips_infer(
    index: &SynonymIndex<'_>,
    record: &MentionRecord,
    k: usize,
) -> Vec<ComponentPrediction> {
    record
        .components
        .iter()
        .map(|comp| {
            let topk = index.top_k(&comp.text, k.max(1));
            let best = topk.first().expect("dictionary is non-empty");
            ComponentPrediction {
                text: comp.text.clone(),
                predicted: index.dict.entry(best.synonym_id).cui.clone(),
                topk,
            }
        })
        .collect()
}

/// Fraction of (candidate set, gold) pairs where some candidate's CUI is in
/// the gold set.
pub fn recall_at_k<'a, I>(items: I, dict: &Dictionary) -> f64
where
    I: IntoIterator<Item = (&'a CandidateSet, &'a BTreeSet<ConceptId>)>,
{
    let mut hits = 0usize;
    let mut total = 0usize;
    for (set, gold) in items {
        total += 1;
        if set
            .candidates
            .iter()
            .any(|c| gold.contains(&dict.entry(c.synonym_id).cui))
        {
            hits += 1;
        }
    }
    if total == 0 {
        0.0
    } else {
        hits as f64 / total as f64
    }
}
