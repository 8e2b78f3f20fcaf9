//! Seeded synthetic benchmark generator.
//!
//! Concepts come in groups that share a head-word stem (e.g. `zant` with
//! suffix variants `zantoma`, `zantosis`, ...) while each concept owns a
//! unique modifier word, mimicking the structure of real disease
//! vocabularies where many concepts share a head noun and differ in their
//! modifiers. Dictionary synonyms per concept cover a subset of the suffix
//! pool plus reordered/typo variants; train and test mentions are held-out
//! surface variants built from the requested variation ops. A fraction of
//! the test mentions combines a typo'd modifier with a suffix the concept's
//! own dictionary entries never use, which the static sparse channel tends
//! to mis-rank toward same-suffix entries of sibling concepts.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum VariationOp {
    Identity,
    Typo,
    Suffix,
    Reorder,
    Abbrev,
}

impl fmt::Display for VariationOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            VariationOp::Identity => "identity",
            VariationOp::Typo => "typo",
            VariationOp::Suffix => "suffix",
            VariationOp::Reorder => "reorder",
            VariationOp::Abbrev => "abbrev",
        };
        f.write_str(name)
    }
}

impl FromStr for VariationOp {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(VariationOp::Identity),
            "typo" => Ok(VariationOp::Typo),
            "suffix" => Ok(VariationOp::Suffix),
            "reorder" => Ok(VariationOp::Reorder),
            "abbrev" => Ok(VariationOp::Abbrev),
            other => Err(Error::InvalidConfig(format!(
                "unknown variation op {other:?} (expected identity, typo, suffix, reorder, abbrev)"
            ))),
        }
    }
}

/// Parse a comma-separated variation spec, e.g. `typo,suffix,reorder`.
pub fn parse_variation(spec: &str) -> Result<BTreeSet<VariationOp>> {
    let mut ops = BTreeSet::new();
    for part in spec.split(',') {
        let part = part.trim();
        if part.is_empty() {
            continue;
        }
        ops.insert(part.parse::<VariationOp>()?);
    }
    if ops.is_empty() {
        return Err(Error::InvalidConfig("empty variation spec".into()));
    }
    Ok(ops)
}

#[derive(Debug, Clone)]
pub struct SynthSpec {
    pub seed: u64,
    pub n_cuis: usize,
    pub syns_per_cui: usize,
    pub n_train: usize,
    pub n_test: usize,
    pub variation: BTreeSet<VariationOp>,
    /// Concepts per shared-head group.
    pub group_size: usize,
    /// Fraction of test mentions drawn from the hard (typo + unseen-suffix)
    /// distribution when typo and suffix variation are both active.
    pub hard_test_fraction: f64,
}

impl SynthSpec {
    pub fn new(seed: u64, n_cuis: usize, syns_per_cui: usize) -> Self {
        SynthSpec {
            seed,
            n_cuis,
            syns_per_cui,
            n_train: 500,
            n_test: 200,
            variation: BTreeSet::from([VariationOp::Typo, VariationOp::Suffix, VariationOp::Reorder]),
            group_size: 8,
            hard_test_fraction: 0.35,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cuis < 2 {
            return Err(Error::InvalidConfig("n_cuis must be >= 2".into()));
        }
        if self.syns_per_cui < 1 {
            return Err(Error::InvalidConfig("syns_per_cui must be >= 1".into()));
        }
        if self.group_size < 1 {
            return Err(Error::InvalidConfig("group_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.hard_test_fraction) {
            return Err(Error::InvalidConfig(
                "hard_test_fraction must be in [0, 1]".into(),
            ));
        }
        if self.variation.is_empty() {
            return Err(Error::InvalidConfig("variation spec is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedMention {
    pub text: String,
    pub cui: String,
}

#[derive(Debug, Clone)]
pub struct SynthData {
    pub dictionary: Vec<(String, String)>,
    pub train: Vec<GeneratedMention>,
    pub test: Vec<GeneratedMention>,
}

impl SynthData {
    pub fn dictionary_file(&self) -> String {
        let mut out = String::new();
        for (cui, name) in &self.dictionary {
            out.push_str(cui);
            out.push_str("||");
            out.push_str(name);
            out.push('\n');
        }
        out
    }

    pub fn mention_file(mentions: &[GeneratedMention]) -> String {
        let mut out = String::new();
        for m in mentions {
            out.push_str(&m.text);
            out.push_str("||");
            out.push_str(&m.cui);
            out.push('\n');
        }
        out
    }

    /// Write `dict.txt`, `train.txt`, `test.txt` into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |name: &str, content: String| -> Result<()> {
            let path = dir.join(name);
            fs::write(&path, content).map_err(|e| Error::io(&path, e))
        };
        write("dict.txt", self.dictionary_file())?;
        write("train.txt", Self::mention_file(&self.train))?;
        write("test.txt", Self::mention_file(&self.test))
    }
}

const SUFFIX_POOL: [&str; 6] = ["oma", "osis", "itis", "opathy", "emia", "asis"];
const ONSETS: [&str; 14] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const CODAS: [&str; 6] = ["", "n", "r", "s", "l", "m"];

struct WordGen {
    used: HashSet<String>,
}

impl WordGen {
    fn new() -> Self {
        WordGen {
            used: HashSet::new(),
        }
    }

    fn fresh(&mut self, rng: &mut ChaCha20Rng, syllables: usize) -> String {
        loop {
            let mut word = String::new();
            for i in 0..syllables {
                word.push_str(ONSETS[rng.random_range(0..ONSETS.len())]);
                word.push_str(VOWELS[rng.random_range(0..VOWELS.len())]);
                if i + 1 == syllables {
                    word.push_str(CODAS[rng.random_range(0..CODAS.len())]);
                }
            }
            if self.used.insert(word.clone()) {
                return word;
            }
        }
    }
}

/// One random single-character edit that keeps the first character in place.
fn typo(rng: &mut ChaCha20Rng, word: &str) -> String {
    let chars: Vec<char> = word.chars().collect();
    if chars.len() < 2 {
        return format!("{word}{}", VOWELS[rng.random_range(0..VOWELS.len())]);
    }
    let letters = "abcdefghijklmnopqrstuvwxyz".as_bytes();
    let mut out = chars.clone();
    match rng.random_range(0..4u8) {
        0 => {
            // substitute
            let pos = rng.random_range(1..out.len());
            let mut c = letters[rng.random_range(0..letters.len())] as char;
            if c == out[pos] {
                c = if c == 'z' { 'a' } else { (c as u8 + 1) as char };
            }
            out[pos] = c;
        }
        1 => {
            // delete
            let pos = rng.random_range(1..out.len());
            out.remove(pos);
        }
        2 => {
            // transpose adjacent
            if out.len() >= 3 {
                let pos = rng.random_range(1..out.len() - 1);
                out.swap(pos, pos + 1);
            } else {
                out.push(letters[rng.random_range(0..letters.len())] as char);
            }
        }
        _ => {
            // insert
            let pos = rng.random_range(1..=out.len());
            out.insert(pos, letters[rng.random_range(0..letters.len())] as char);
        }
    }
    out.into_iter().collect()
}

fn reorder_tokens(rng: &mut ChaCha20Rng, text: &str) -> String {
    let mut tokens: Vec<&str> = text.split_whitespace().collect();
    if tokens.len() < 2 {
        return text.to_string();
    }
    if tokens.len() == 2 {
        tokens.swap(0, 1);
    } else {
        let orig = tokens.clone();
        for _ in 0..4 {
            tokens.shuffle(rng);
            if tokens != orig {
                break;
            }
        }
    }
    tokens.join(" ")
}

fn abbrev_token(rng: &mut ChaCha20Rng, word: &str) -> String {
    let chars: Vec<char> = word.chars().collect();
    let keep = rng.random_range(2..=3usize).min(chars.len());
    chars[..keep].iter().collect()
}

struct Concept {
    cui: String,
    modifier: String,
    stem: String,
    /// Indices into `SUFFIX_POOL` visible in this concept's dictionary entries.
    suffixes: Vec<usize>,
}

impl Concept {
    fn head(&self, suffix_idx: usize) -> String {
        format!("{}{}", self.stem, SUFFIX_POOL[suffix_idx])
    }

    fn name(&self, suffix_idx: usize) -> String {
        format!("{} {}", self.modifier, self.head(suffix_idx))
    }

    fn unseen_suffixes(&self) -> Vec<usize> {
        (0..SUFFIX_POOL.len())
            .filter(|i| !self.suffixes.contains(i))
            .collect()
    }
}

/// Generate a deterministic synthetic benchmark.
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    spec.validate()?;
    let mut rng = ChaCha20Rng::seed_from_u64(spec.seed);
    let mut words = WordGen::new();
    let identity_only = spec.variation == BTreeSet::from([VariationOp::Identity]);
    let has = |op: VariationOp| spec.variation.contains(&op);

    // concepts in shared-stem groups
    let mut concepts: Vec<Concept> = Vec::with_capacity(spec.n_cuis);
    let n_groups = spec.n_cuis.div_ceil(spec.group_size);
    let mut next_id = 0usize;
    for _ in 0..n_groups {
        let stem = words.fresh(&mut rng, 2);
        for member in 0..spec.group_size {
            if next_id >= spec.n_cuis {
                break;
            }
            let subset_size = 3.min(SUFFIX_POOL.len());
            let suffixes: Vec<usize> = (0..subset_size)
                .map(|j| (member + j) % SUFFIX_POOL.len())
                .collect();
            concepts.push(Concept {
                cui: format!("CID:{next_id:06}"),
                modifier: words.fresh(&mut rng, if next_id % 3 == 0 { 3 } else { 2 }),
                stem: stem.clone(),
                suffixes,
            });
            next_id += 1;
        }
    }

    // dictionary synonyms
    let mut dictionary: Vec<(String, String)> = Vec::new();
    let mut name_owner: HashMap<String, usize> = HashMap::new();
    let mut per_concept_names: Vec<Vec<String>> = Vec::with_capacity(concepts.len());
    for (ci, concept) in concepts.iter().enumerate() {
        let mut names: Vec<String> = Vec::with_capacity(spec.syns_per_cui);
        let push = |name: String,
                        names: &mut Vec<String>,
                        name_owner: &mut HashMap<String, usize>| {
            if names.len() >= spec.syns_per_cui || name_owner.contains_key(&name) {
                return;
            }
            name_owner.insert(name.clone(), ci);
            names.push(name);
        };
        if identity_only {
            // distinct surface forms without derived variation
            push(concept.name(concept.suffixes[0]), &mut names, &mut name_owner);
            while names.len() < spec.syns_per_cui {
                let alias = words.fresh(&mut rng, 2);
                push(
                    format!("{alias} {}", concept.head(concept.suffixes[0])),
                    &mut names,
                    &mut name_owner,
                );
            }
        } else {
            push(concept.name(concept.suffixes[0]), &mut names, &mut name_owner);
            if has(VariationOp::Suffix) && concept.suffixes.len() > 1 {
                push(concept.name(concept.suffixes[1]), &mut names, &mut name_owner);
            }
            if has(VariationOp::Reorder) {
                push(
                    format!("{} {}", concept.head(concept.suffixes[0]), concept.modifier),
                    &mut names,
                    &mut name_owner,
                );
            }
            if has(VariationOp::Typo) {
                let t = typo(&mut rng, &concept.modifier);
                push(
                    format!("{t} {}", concept.head(concept.suffixes[0])),
                    &mut names,
                    &mut name_owner,
                );
            }
            if has(VariationOp::Suffix) && concept.suffixes.len() > 2 {
                push(concept.name(concept.suffixes[2]), &mut names, &mut name_owner);
            }
            if has(VariationOp::Abbrev) {
                let a = abbrev_token(&mut rng, &concept.modifier);
                push(
                    format!("{a} {}", concept.head(concept.suffixes[0])),
                    &mut names,
                    &mut name_owner,
                );
            }
            // fill the remainder with fresh typo/suffix combinations
            let mut guard = 0;
            while names.len() < spec.syns_per_cui && guard < 200 {
                guard += 1;
                let suffix = concept.suffixes[rng.random_range(0..concept.suffixes.len())];
                let base = if has(VariationOp::Typo) {
                    typo(&mut rng, &concept.modifier)
                } else {
                    words.fresh(&mut rng, 2)
                };
                push(
                    format!("{base} {}", concept.head(suffix)),
                    &mut names,
                    &mut name_owner,
                );
            }
        }
        for name in &names {
            dictionary.push((concept.cui.clone(), name.clone()));
        }
        per_concept_names.push(names);
    }

    // mention sampling
    let mut taken: HashMap<String, usize> = name_owner.clone();
    let easy_mention = |rng: &mut ChaCha20Rng,
                            ci: usize,
                            concepts: &[Concept],
                            per_concept_names: &[Vec<String>]|
     -> String {
        let concept = &concepts[ci];
        let base = &per_concept_names[ci][rng.random_range(0..per_concept_names[ci].len())];
        if identity_only {
            return base.clone();
        }
        let mut active: Vec<VariationOp> = spec
            .variation
            .iter()
            .copied()
            .filter(|op| *op != VariationOp::Identity)
            .collect();
        if active.is_empty() {
            active.push(VariationOp::Identity);
        }
        match active[rng.random_range(0..active.len())] {
            VariationOp::Typo => {
                let mut tokens: Vec<String> =
                    base.split_whitespace().map(str::to_string).collect();
                let pos = rng.random_range(0..tokens.len());
                tokens[pos] = typo(rng, &tokens[pos]);
                tokens.join(" ")
            }
            VariationOp::Suffix => {
                let suffix = concept.suffixes[rng.random_range(0..concept.suffixes.len())];
                concept.name(suffix)
            }
            VariationOp::Reorder => reorder_tokens(rng, base),
            VariationOp::Abbrev => {
                let mut tokens: Vec<String> =
                    base.split_whitespace().map(str::to_string).collect();
                let pos = rng.random_range(0..tokens.len());
                tokens[pos] = abbrev_token(rng, &tokens[pos]);
                tokens.join(" ")
            }
            VariationOp::Identity => base.clone(),
        }
    };

    let mut order: Vec<usize> = (0..concepts.len()).collect();
    order.shuffle(&mut rng);
    let mut train: Vec<GeneratedMention> = Vec::with_capacity(spec.n_train);
    for i in 0..spec.n_train {
        let ci = order[i % order.len()];
        let mut text = easy_mention(&mut rng, ci, &concepts, &per_concept_names);
        for _ in 0..30 {
            match taken.get(&text) {
                Some(owner) if *owner != ci => {
                    text = easy_mention(&mut rng, ci, &concepts, &per_concept_names);
                }
                _ => break,
            }
        }
        taken.entry(text.clone()).or_insert(ci);
        train.push(GeneratedMention {
            text,
            cui: concepts[ci].cui.clone(),
        });
    }

    let hard_possible =
        has(VariationOp::Typo) && has(VariationOp::Suffix) && !identity_only;
    let mut order2: Vec<usize> = (0..concepts.len()).collect();
    order2.shuffle(&mut rng);
    let mut test: Vec<GeneratedMention> = Vec::with_capacity(spec.n_test);
    for i in 0..spec.n_test {
        let ci = order2[i % order2.len()];
        let concept = &concepts[ci];
        let hard = hard_possible && rng.random_range(0.0..1.0) < spec.hard_test_fraction;
        let make = |rng: &mut ChaCha20Rng| -> String {
            if hard {
                // typo'd modifier + a head suffix this concept never uses in
                // the dictionary; sibling concepts do use it
                let unseen = concept.unseen_suffixes();
                let suffix = unseen[rng.random_range(0..unseen.len())];
                let mut modifier = typo(rng, &concept.modifier);
                if rng.random_range(0.0..1.0) < 0.5 {
                    modifier = typo(rng, &modifier);
                }
                let name = format!("{modifier} {}", concept.head(suffix));
                if has(VariationOp::Reorder) && rng.random_range(0.0..1.0) < 0.3 {
                    reorder_tokens(rng, &name)
                } else {
                    name
                }
            } else {
                easy_mention(rng, ci, &concepts, &per_concept_names)
            }
        };
        let mut text = make(&mut rng);
        if !identity_only {
            // held out: never a dictionary name or a previously used mention
            for _ in 0..30 {
                if name_owner.contains_key(&text) || taken.contains_key(&text) {
                    text = make(&mut rng);
                } else {
                    break;
                }
            }
        }
        taken.entry(text.clone()).or_insert(ci);
        test.push(GeneratedMention {
            text,
            cui: concepts[ci].cui.clone(),
        });
    }

    Ok(SynthData {
        dictionary,
        train,
        test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{load_dictionary, load_mentions, SubstitutionMap};
    use crate::dense::{EncoderConfig, EncoderParams};
    use crate::eval::{evaluate, ScoreMode};
    use crate::sparse::{fit_tfidf, TfIdfConfig};
    use std::collections::HashSet;

    fn spec(seed: u64) -> SynthSpec {
        let mut s = SynthSpec::new(seed, 24, 4);
        s.n_train = 40;
        s.n_test = 20;
        s
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let a = generate(&spec(7)).unwrap();
        let b = generate(&spec(7)).unwrap();
        assert_eq!(a.dictionary_file(), b.dictionary_file());
        assert_eq!(
            SynthData::mention_file(&a.train),
            SynthData::mention_file(&b.train)
        );
        assert_eq!(
            SynthData::mention_file(&a.test),
            SynthData::mention_file(&b.test)
        );
    }

    #[test]
    fn different_seeds_differ() {
        let a = generate(&spec(1)).unwrap();
        let b = generate(&spec(2)).unwrap();
        assert_ne!(a.dictionary_file(), b.dictionary_file());
    }

    #[test]
    fn every_mention_cui_is_in_dictionary() {
        let data = generate(&spec(3)).unwrap();
        let cuis: HashSet<&str> = data.dictionary.iter().map(|(c, _)| c.as_str()).collect();
        for m in data.train.iter().chain(&data.test) {
            assert!(cuis.contains(m.cui.as_str()), "missing {}", m.cui);
        }
    }

    #[test]
    fn dictionary_names_are_unique_across_cuis() {
        let data = generate(&spec(4)).unwrap();
        let mut seen: HashMap<&str, &str> = HashMap::new();
        for (cui, name) in &data.dictionary {
            if let Some(prev) = seen.insert(name.as_str(), cui.as_str()) {
                assert_eq!(prev, cui, "name {name:?} owned by two CUIs");
            }
        }
    }

    #[test]
    fn expected_sizes() {
        let data = generate(&spec(5)).unwrap();
        assert_eq!(data.dictionary.len(), 24 * 4);
        assert_eq!(data.train.len(), 40);
        assert_eq!(data.test.len(), 20);
    }

    #[test]
    fn rejects_degenerate_specs() {
        let mut s = spec(0);
        s.n_cuis = 1;
        assert!(generate(&s).is_err());
        let mut s = spec(0);
        s.variation.clear();
        assert!(generate(&s).is_err());
    }

    #[test]
    fn identity_variation_gives_sparse_only_acc1_of_one() {
        let mut s = spec(11);
        s.variation = BTreeSet::from([VariationOp::Identity]);
        let data = generate(&s).unwrap();
        let dir = tempfile::tempdir().unwrap();
        data.write_dir(dir.path()).unwrap();

        let dict = load_dictionary(&dir.path().join("dict.txt")).unwrap();
        let empty = SubstitutionMap::default();
        let test = load_mentions(&dir.path().join("test.txt"), &empty, &empty).unwrap();
        let tfidf = fit_tfidf(&dict, &TfIdfConfig::default()).unwrap();
        let cfg = EncoderConfig {
            h: 8,
            buckets: 256,
            ngram_order: 3,
            seed: 0,
            max_chars: 100,
        };
        let params = EncoderParams::init(&cfg);
        let report = evaluate(
            &dict,
            &tfidf,
            &cfg,
            &params,
            1.0,
            &test.records,
            &[1],
            ScoreMode::SparseOnly,
        )
        .unwrap();
        assert_eq!(report.acc_at[&1], 1.0);
    }

    #[test]
    fn hard_test_mentions_are_held_out_of_dictionary() {
        let data = generate(&spec(13)).unwrap();
        let names: HashSet<&str> = data.dictionary.iter().map(|(_, n)| n.as_str()).collect();
        let train_texts: HashSet<&str> = data.train.iter().map(|m| m.text.as_str()).collect();
        let mut held_out = 0;
        for m in &data.test {
            if !names.contains(m.text.as_str()) && !train_texts.contains(m.text.as_str()) {
                held_out += 1;
            }
        }
        // the vast majority of test mentions must be genuinely unseen
        assert!(held_out * 10 >= data.test.len() * 9);
    }
}
