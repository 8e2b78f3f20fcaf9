//! Character n-gram tf-idf model and sparse vectors.
//!
//! The model is fit once over all dictionary synonyms and never trained.
//! N-grams are extracted from the raw normalized string including spaces,
//! with no boundary padding. The idf is the smooth variant
//! `ln((1 + N) / (1 + df)) + 1`, strictly positive for every feature, and
//! vectors are L2-normalized by default so an exact string match is always
//! an argmax of the inner-product score.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::corpus::Dictionary;
use crate::{exec, Error, Result};

/// Tf-idf settings. `orders` are the character n-gram sizes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TfIdfConfig {
    pub orders: Vec<usize>,
    pub l2_normalize: bool,
}

impl Default for TfIdfConfig {
    fn default() -> Self {
        TfIdfConfig {
            orders: vec![1, 2],
            l2_normalize: true,
        }
    }
}

/// Frozen tf-idf vocabulary and idf weights.
#[derive(Debug, Clone)]
pub struct TfIdfModel {
    vocab: HashMap<String, u32>,
    ngrams: Vec<String>,
    idf: Vec<f64>,
    orders: Vec<usize>,
    l2_normalize: bool,
    n_entries: usize,
}

/// Sparse vector with strictly increasing feature indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseVector {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVector {
    pub fn empty() -> Self {
        SparseVector {
            indices: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Character n-grams of `text` for every order in `orders`, spaces included.
pub fn char_ngrams(text: &str, orders: &[usize]) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    for &n in orders {
        if n == 0 || chars.len() < n {
            continue;
        }
        for window in chars.windows(n) {
            out.push(window.iter().collect());
        }
    }
    out
}

/// Fit the tf-idf model over all dictionary synonyms.
///
/// `df_j` counts dictionary entries (not distinct names) containing n-gram
/// `j`; features are indexed in lexicographic n-gram order.
pub fn fit_tfidf(dict: &Dictionary, config: &TfIdfConfig) -> Result<TfIdfModel> {
    if dict.is_empty() {
        return Err(Error::EmptyDictionary);
    }
    let per_entry: Vec<Vec<String>> = exec::map(dict.entries(), |e| {
        let mut grams = char_ngrams(&e.name, &config.orders);
        grams.sort_unstable();
        grams.dedup();
        grams
    });
    let mut df: HashMap<String, u32> = HashMap::new();
    for grams in per_entry {
        for g in grams {
            *df.entry(g).or_insert(0) += 1;
        }
    }
    let mut ngrams: Vec<String> = df.keys().cloned().collect();
    ngrams.sort_unstable();
    let n = dict.len() as f64;
    let mut vocab = HashMap::with_capacity(ngrams.len());
    let mut idf = Vec::with_capacity(ngrams.len());
    for (i, g) in ngrams.iter().enumerate() {
        vocab.insert(g.clone(), i as u32);
        let d = df[g] as f64;
        idf.push(((1.0 + n) / (1.0 + d)).ln() + 1.0);
    }
    Ok(TfIdfModel {
        vocab,
        ngrams,
        idf,
        orders: config.orders.clone(),
        l2_normalize: config.l2_normalize,
        n_entries: dict.len(),
    })
}

impl TfIdfModel {
    pub fn n_features(&self) -> usize {
        self.ngrams.len()
    }

    pub fn n_entries(&self) -> usize {
        self.n_entries
    }

    pub fn orders(&self) -> &[usize] {
        &self.orders
    }

    pub fn l2_normalize(&self) -> bool {
        self.l2_normalize
    }

    pub fn feature_index(&self, ngram: &str) -> Option<u32> {
        self.vocab.get(ngram).copied()
    }

    pub fn idf(&self, feature: u32) -> f64 {
        self.idf[feature as usize]
    }

    /// Serialize as a two-section text file: a header followed by one
    /// `ngram \t index \t idf` line per feature. Round-trips bit-exactly.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = String::new();
        out.push_str("tfidf-model v1\n");
        out.push_str(&format!("entries\t{}\n", self.n_entries));
        out.push_str(&format!(
            "orders\t{}\n",
            self.orders
                .iter()
                .map(|o| o.to_string())
                .collect::<Vec<_>>()
                .join(",")
        ));
        out.push_str(&format!("l2_normalize\t{}\n", self.l2_normalize));
        out.push_str(&format!("features\t{}\n", self.ngrams.len()));
        out.push_str("end-header\n");
        for (i, g) in self.ngrams.iter().enumerate() {
            out.push_str(&format!("{g}\t{i}\t{}\n", self.idf[i]));
        }
        fs::write(path, out).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<TfIdfModel> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut lines = text.lines();
        if lines.next() != Some("tfidf-model v1") {
            return Err(Error::model(path, "missing `tfidf-model v1` magic"));
        }
        let mut entries = None;
        let mut orders = None;
        let mut l2 = None;
        let mut features = None;
        for line in lines.by_ref() {
            if line == "end-header" {
                break;
            }
            let (key, value) = line
                .split_once('\t')
                .ok_or_else(|| Error::model(path, format!("bad header line {line:?}")))?;
            match key {
                "entries" => entries = value.parse::<usize>().ok(),
                "orders" => {
                    orders = value
                        .split(',')
                        .map(|s| s.parse::<usize>().ok())
                        .collect::<Option<Vec<_>>>()
                }
                "l2_normalize" => l2 = value.parse::<bool>().ok(),
                "features" => features = value.parse::<usize>().ok(),
                other => return Err(Error::model(path, format!("unknown header key {other:?}"))),
            }
        }
        let n_entries = entries.ok_or_else(|| Error::model(path, "missing `entries`"))?;
        let orders = orders.ok_or_else(|| Error::model(path, "missing `orders`"))?;
        let l2_normalize = l2.ok_or_else(|| Error::model(path, "missing `l2_normalize`"))?;
        let n_features = features.ok_or_else(|| Error::model(path, "missing `features`"))?;

        let mut ngrams = vec![String::new(); n_features];
        let mut idf = vec![0.0; n_features];
        let mut vocab = HashMap::with_capacity(n_features);
        let mut seen = 0usize;
        for line in lines {
            let mut cols = line.rsplitn(3, '\t');
            let idf_s = cols
                .next()
                .ok_or_else(|| Error::model(path, format!("bad vocab line {line:?}")))?;
            let idx_s = cols
                .next()
                .ok_or_else(|| Error::model(path, format!("bad vocab line {line:?}")))?;
            let gram = cols
                .next()
                .ok_or_else(|| Error::model(path, format!("bad vocab line {line:?}")))?;
            let idx: usize = idx_s
                .parse()
                .map_err(|_| Error::model(path, format!("bad index {idx_s:?}")))?;
            let w: f64 = idf_s
                .parse()
                .map_err(|_| Error::model(path, format!("bad idf {idf_s:?}")))?;
            if idx >= n_features {
                return Err(Error::model(path, format!("index {idx} out of range")));
            }
            ngrams[idx] = gram.to_string();
            idf[idx] = w;
            vocab.insert(gram.to_string(), idx as u32);
            seen += 1;
        }
        if seen != n_features {
            return Err(Error::model(
                path,
                format!("expected {n_features} vocab lines, found {seen}"),
            ));
        }
        Ok(TfIdfModel {
            vocab,
            ngrams,
            idf,
            orders,
            l2_normalize,
            n_entries,
        })
    }
}

/// Encode a normalized string as a tf-idf vector: raw n-gram counts times
/// idf, unseen n-grams ignored, L2-normalized when the model says so. A
/// string with no in-vocabulary n-gram encodes to the empty vector.
pub fn encode_sparse(text: &str, model: &TfIdfModel) -> SparseVector {
    let mut counts: HashMap<u32, f64> = HashMap::new();
    for gram in char_ngrams(text, &model.orders) {
        if let Some(idx) = model.vocab.get(&gram) {
            *counts.entry(*idx).or_insert(0.0) += 1.0;
        }
    }
    if counts.is_empty() {
        return SparseVector::empty();
    }
    let mut pairs: Vec<(u32, f64)> = counts
        .into_iter()
        .map(|(idx, tf)| (idx, tf * model.idf[idx as usize]))
        .collect();
    pairs.sort_unstable_by_key(|(idx, _)| *idx);
    let mut indices = Vec::with_capacity(pairs.len());
    let mut values = Vec::with_capacity(pairs.len());
    for (idx, v) in pairs {
        indices.push(idx);
        values.push(v);
    }
    let mut vec = SparseVector { indices, values };
    if model.l2_normalize {
        let norm = vec.l2_norm();
        if norm > 0.0 {
            for v in &mut vec.values {
                *v /= norm;
            }
        }
    }
    vec
}

/// Inner product of two sparse vectors via a sorted-index merge.
pub fn sparse_score(a: &SparseVector, b: &SparseVector) -> f64 {
    let mut i = 0;
    let mut j = 0;
    let mut acc = 0.0;
    while i < a.indices.len() && j < b.indices.len() {
        match a.indices[i].cmp(&b.indices[j]) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a.values[i] * b.values[j];
                i += 1;
                j += 1;
            }
        }
    }
    acc
}
