//! Trainable dense encoder: hashed character-trigram embedding bag, one
//! affine layer, tanh.
//!
//! For a normalized string, the pooled input is the mean of embedding rows
//! `E[fnv1a64(g) mod B]` over its character trigrams `g`; strings shorter
//! than the n-gram order fall back to the reserved row 0. The output is
//! `v = tanh(W p + b)`, all in 64-bit floats. Backward accumulates exact
//! analytic gradients for the touched embedding rows, `W`, and `b`; forward
//! states are stamped with the parameter version so gradients can never be
//! applied against a moved parameter set.
//!
//! Any encoder exposing this encode/backward surface can replace the
//! reference implementation; nothing else in the engine inspects its
//! internals.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Embedding row used when a string yields no character n-gram.
pub const RESERVED_ROW: usize = 0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Hidden dimension of the dense vectors.
    pub h: usize,
    /// Hash bucket count of the embedding table.
    pub buckets: usize,
    /// Character n-gram order fed to the embedding bag.
    pub ngram_order: usize,
    /// Seed for parameter initialization.
    pub seed: u64,
    /// Strings are truncated to this many characters before encoding.
    pub max_chars: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            h: 64,
            buckets: 65536,
            ngram_order: 3,
            seed: 42,
            max_chars: 100,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.h < 1 {
            return Err(Error::InvalidConfig("h must be >= 1".into()));
        }
        if self.buckets < 1 {
            return Err(Error::InvalidConfig("buckets must be >= 1".into()));
        }
        if self.ngram_order < 1 {
            return Err(Error::InvalidConfig("ngram_order must be >= 1".into()));
        }
        if self.max_chars < 1 {
            return Err(Error::InvalidConfig("max_chars must be >= 1".into()));
        }
        Ok(())
    }
}

/// Trainable encoder parameters: embedding table `E` (buckets x h), affine
/// weight `W` (h x h, row-major) and bias `b` (h).
#[derive(Debug, Clone)]
pub struct EncoderParams {
    pub h: usize,
    pub buckets: usize,
    pub e: Vec<f64>,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    version: u64,
}

impl EncoderParams {
    /// Seeded initialization: `E` and `W` uniform in (-0.05, 0.05), `b` zero.
    /// The small scale keeps initial dense scores near zero so sparse
    /// candidates dominate early retrieval.
    pub fn init(cfg: &EncoderConfig) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
        let mut e = vec![0.0; cfg.buckets * cfg.h];
        for v in &mut e {
            *v = rng.random_range(-0.05..0.05);
        }
        let mut w = vec![0.0; cfg.h * cfg.h];
        for v in &mut w {
            *v = rng.random_range(-0.05..0.05);
        }
        EncoderParams {
            h: cfg.h,
            buckets: cfg.buckets,
            e,
            w,
            b: vec![0.0; cfg.h],
            version: 0,
        }
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Mark the parameters as moved; outstanding forward states become stale.
    pub fn bump_version(&mut self) {
        self.version += 1;
    }

    fn e_row(&self, row: usize) -> &[f64] {
        &self.e[row * self.h..(row + 1) * self.h]
    }
}

/// 64-bit FNV-1a over UTF-8 bytes. Fixed, seedless, documented so other
/// implementations can reproduce the bucket assignment.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    const OFFSET: u64 = 0xcbf29ce484222325;
    const PRIME: u64 = 0x100000001b3;
    let mut hash = OFFSET;
    for &byte in bytes {
        hash ^= byte as u64;
        hash = hash.wrapping_mul(PRIME);
    }
    hash
}

/// Embedding rows for the character n-grams of `text`, after truncation to
/// `max_chars`. Empty when the string is shorter than the n-gram order.
pub fn embedding_rows(text: &str, cfg: &EncoderConfig) -> Vec<u32> {
    let chars: Vec<char> = text.chars().take(cfg.max_chars).collect();
    if chars.len() < cfg.ngram_order {
        return Vec::new();
    }
    chars
        .windows(cfg.ngram_order)
        .map(|window| {
            let gram: String = window.iter().collect();
            (fnv1a64(gram.as_bytes()) % cfg.buckets as u64) as u32
        })
        .collect()
}

/// Cached forward pass of one string, pinned to a parameter version.
#[derive(Debug, Clone)]
pub struct ForwardState {
    rows: Vec<u32>,
    pooled: Vec<f64>,
    pub output: Vec<f64>,
    version: u64,
}

impl ForwardState {
    pub fn output(&self) -> &[f64] {
        &self.output
    }
}

/// Encode a normalized string, keeping the forward state for backprop.
pub fn encode_with_state(text: &str, params: &EncoderParams, cfg: &EncoderConfig) -> ForwardState {
    let h = params.h;
    let rows = embedding_rows(text, cfg);
    let mut pooled = vec![0.0; h];
    if rows.is_empty() {
        pooled.copy_from_slice(params.e_row(RESERVED_ROW));
    } else {
        for &row in &rows {
            let src = params.e_row(row as usize);
            for (p, s) in pooled.iter_mut().zip(src) {
                *p += s;
            }
        }
        let inv = 1.0 / rows.len() as f64;
        for p in &mut pooled {
            *p *= inv;
        }
    }
    let mut output = vec![0.0; h];
    for i in 0..h {
        let mut z = params.b[i];
        let w_row = &params.w[i * h..(i + 1) * h];
        for (wij, pj) in w_row.iter().zip(&pooled) {
            z += wij * pj;
        }
        output[i] = z.tanh();
    }
    ForwardState {
        rows,
        pooled,
        output,
        version: params.version,
    }
}

/// Encode without keeping backprop state.
pub fn encode_dense(text: &str, params: &EncoderParams, cfg: &EncoderConfig) -> Vec<f64> {
    encode_with_state(text, params, cfg).output
}

/// Inner product of two dense vectors.
pub fn dense_score(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch {
            left: a.len(),
            right: b.len(),
        });
    }
    Ok(dot(a, b))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Accumulated gradients for one or more backward passes. Embedding-row
/// gradients are kept sparse; iteration order is deterministic.
#[derive(Debug, Clone)]
pub struct GradBuffer {
    pub e_rows: BTreeMap<u32, Vec<f64>>,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
    pub lambda: f64,
    h: usize,
}

impl GradBuffer {
    pub fn new(h: usize) -> Self {
        GradBuffer {
            e_rows: BTreeMap::new(),
            w: vec![0.0; h * h],
            b: vec![0.0; h],
            lambda: 0.0,
            h,
        }
    }

    pub fn h(&self) -> usize {
        self.h
    }

    /// Sum another buffer into this one.
    pub fn merge(&mut self, other: &GradBuffer) {
        debug_assert_eq!(self.h, other.h);
        for (row, grad) in &other.e_rows {
            let acc = self
                .e_rows
                .entry(*row)
                .or_insert_with(|| vec![0.0; self.h]);
            for (a, g) in acc.iter_mut().zip(grad) {
                *a += g;
            }
        }
        for (a, g) in self.w.iter_mut().zip(&other.w) {
            *a += g;
        }
        for (a, g) in self.b.iter_mut().zip(&other.b) {
            *a += g;
        }
        self.lambda += other.lambda;
    }

    pub fn scale(&mut self, factor: f64) {
        for grad in self.e_rows.values_mut() {
            for g in grad.iter_mut() {
                *g *= factor;
            }
        }
        for g in &mut self.w {
            *g *= factor;
        }
        for g in &mut self.b {
            *g *= factor;
        }
        self.lambda *= factor;
    }
}

/// Backpropagate `d(loss)/d(output)` through one cached forward pass,
/// accumulating into `grads`. Errors if the parameters moved since the
/// forward pass.
pub fn backward(
    state: &ForwardState,
    upstream: &[f64],
    params: &EncoderParams,
    grads: &mut GradBuffer,
) -> Result<()> {
    if state.version != params.version {
        return Err(Error::StaleForwardState {
            params: params.version,
            state: state.version,
        });
    }
    let h = params.h;
    if upstream.len() != h {
        return Err(Error::DimensionMismatch {
            left: upstream.len(),
            right: h,
        });
    }
    // dL/dz through tanh
    let mut gz = vec![0.0; h];
    for i in 0..h {
        let v = state.output[i];
        gz[i] = upstream[i] * (1.0 - v * v);
    }
    // bias and weight gradients
    let mut gp = vec![0.0; h];
    for i in 0..h {
        grads.b[i] += gz[i];
        let w_row = &params.w[i * h..(i + 1) * h];
        let gw_row = &mut grads.w[i * h..(i + 1) * h];
        for j in 0..h {
            gw_row[j] += gz[i] * state.pooled[j];
            gp[j] += w_row[j] * gz[i];
        }
    }
    // pooled gradient flows into the touched embedding rows
    if state.rows.is_empty() {
        let acc = grads
            .e_rows
            .entry(RESERVED_ROW as u32)
            .or_insert_with(|| vec![0.0; h]);
        for (a, g) in acc.iter_mut().zip(&gp) {
            *a += g;
        }
    } else {
        let inv = 1.0 / state.rows.len() as f64;
        let mut counts: BTreeMap<u32, usize> = BTreeMap::new();
        for &row in &state.rows {
            *counts.entry(row).or_insert(0) += 1;
        }
        for (row, count) in counts {
            let weight = count as f64 * inv;
            let acc = grads.e_rows.entry(row).or_insert_with(|| vec![0.0; h]);
            for (a, g) in acc.iter_mut().zip(&gp) {
                *a += weight * g;
            }
        }
    }
    Ok(())
}

/// Write a checkpoint: text header (config, lambda) followed by `E`, `W`,
/// and `b` as raw little-endian 64-bit floats. Round-trips bit-exactly.
pub fn save_checkpoint(
    path: &Path,
    cfg: &EncoderConfig,
    params: &EncoderParams,
    lambda: f64,
) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = BufWriter::new(file);
    let header = format!(
        "encoder-checkpoint v1\nh\t{}\nbuckets\t{}\nngram_order\t{}\nmax_chars\t{}\nseed\t{}\nlambda\t{}\nend-header\n",
        cfg.h, cfg.buckets, cfg.ngram_order, cfg.max_chars, cfg.seed, lambda
    );
    let write = |res: std::io::Result<()>| res.map_err(|e| Error::io(path, e));
    write(out.write_all(header.as_bytes()))?;
    for value in params.e.iter().chain(&params.w).chain(&params.b) {
        write(out.write_all(&value.to_le_bytes()))?;
    }
    write(out.flush())?;
    Ok(())
}

/// Load a checkpoint written by [`save_checkpoint`].
pub fn load_checkpoint(path: &Path) -> Result<(EncoderConfig, EncoderParams, f64)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header_end = find_header_end(&bytes)
        .ok_or_else(|| Error::model(path, "missing `end-header` line"))?;
    let header = std::str::from_utf8(&bytes[..header_end])
        .map_err(|_| Error::model(path, "header is not UTF-8"))?;
    let mut lines = header.lines();
    if lines.next() != Some("encoder-checkpoint v1") {
        return Err(Error::model(path, "missing `encoder-checkpoint v1` magic"));
    }
    let mut fields: BTreeMap<&str, &str> = BTreeMap::new();
    for line in lines {
        if line == "end-header" {
            break;
        }
        let (key, value) = line
            .split_once('\t')
            .ok_or_else(|| Error::model(path, format!("bad header line {line:?}")))?;
        fields.insert(key, value);
    }
    fn field<T: std::str::FromStr>(
        fields: &BTreeMap<&str, &str>,
        key: &str,
        path: &Path,
    ) -> Result<T> {
        fields
            .get(key)
            .and_then(|v| v.parse::<T>().ok())
            .ok_or_else(|| Error::model(path, format!("missing or bad header field {key:?}")))
    }
    let cfg = EncoderConfig {
        h: field(&fields, "h", path)?,
        buckets: field(&fields, "buckets", path)?,
        ngram_order: field(&fields, "ngram_order", path)?,
        max_chars: field(&fields, "max_chars", path)?,
        seed: field(&fields, "seed", path)?,
    };
    cfg.validate()?;
    let lambda: f64 = field(&fields, "lambda", path)?;

    let payload = &bytes[header_end..];
    let expected = (cfg.buckets * cfg.h + cfg.h * cfg.h + cfg.h) * 8;
    if payload.len() != expected {
        return Err(Error::model(
            path,
            format!("expected {expected} payload bytes, found {}", payload.len()),
        ));
    }
    let mut values = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
    let e: Vec<f64> = values.by_ref().take(cfg.buckets * cfg.h).collect();
    let w: Vec<f64> = values.by_ref().take(cfg.h * cfg.h).collect();
    let b: Vec<f64> = values.collect();
    Ok((
        cfg.clone(),
        EncoderParams {
            h: cfg.h,
            buckets: cfg.buckets,
            e,
            w,
            b,
            version: 0,
        },
        lambda,
    ))
}

fn find_header_end(bytes: &[u8]) -> Option<usize> {
    const MARKER: &[u8] = b"end-header\n";
    bytes
        .windows(MARKER.len())
        .position(|w| w == MARKER)
        .map(|pos| pos + MARKER.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> EncoderConfig {
        EncoderConfig {
            h: 6,
            buckets: 64,
            ngram_order: 3,
            seed: 7,
            max_chars: 100,
        }
    }

    #[test]
    fn output_has_configured_length_and_is_bounded() {
        let cfg = small_cfg();
        let params = EncoderParams::init(&cfg);
        for text in ["", "a", "ab", "prostate cancer", "breast and ovarian cancer"] {
            let v = encode_dense(text, &params, &cfg);
            assert_eq!(v.len(), cfg.h);
            assert!(v.iter().all(|x| x.is_finite() && x.abs() < 1.0));
        }
    }

    #[test]
    fn short_string_uses_reserved_row() {
        let cfg = small_cfg();
        let params = EncoderParams::init(&cfg);
        let v = encode_dense("ab", &params, &cfg);
        // manual: tanh(W * E[0] + b)
        let p = params.e_row(RESERVED_ROW);
        for i in 0..cfg.h {
            let mut z = params.b[i];
            for j in 0..cfg.h {
                z += params.w[i * cfg.h + j] * p[j];
            }
            assert_eq!(v[i], z.tanh());
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let cfg = small_cfg();
        let params = EncoderParams::init(&cfg);
        assert_eq!(
            encode_dense("migraine", &params, &cfg),
            encode_dense("migraine", &params, &cfg)
        );
        let params2 = EncoderParams::init(&cfg);
        assert_eq!(
            encode_dense("migraine", &params, &cfg),
            encode_dense("migraine", &params2, &cfg)
        );
    }

    #[test]
    fn truncation_applies_before_hashing() {
        let cfg = EncoderConfig {
            max_chars: 5,
            ..small_cfg()
        };
        let params = EncoderParams::init(&cfg);
        assert_eq!(
            encode_dense("abcdefgh", &params, &cfg),
            encode_dense("abcde", &params, &cfg)
        );
    }

    #[test]
    fn dense_score_basics() {
        let zero = vec![0.0; 4];
        let v = vec![1.0, -2.0, 0.5, 3.0];
        let u = vec![0.25, 1.0, -1.0, 2.0];
        assert_eq!(dense_score(&v, &zero).unwrap(), 0.0);
        assert_eq!(
            dense_score(&v, &u).unwrap(),
            dense_score(&u, &v).unwrap()
        );
        let want: f64 = v.iter().zip(&u).map(|(a, b)| a * b).sum();
        assert!((dense_score(&v, &u).unwrap() - want).abs() < 1e-12);
        assert!(dense_score(&v, &[1.0]).is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let cfg = small_cfg();
        let params = EncoderParams::init(&cfg);
        let state = encode_with_state("zanti velkor", &params, &cfg);
        let mut grads = GradBuffer::new(cfg.h);
        backward(&state, &vec![0.0; cfg.h], &params, &mut grads).unwrap();
        assert!(grads.w.iter().all(|g| *g == 0.0));
        assert!(grads.b.iter().all(|g| *g == 0.0));
        assert!(grads
            .e_rows
            .values()
            .all(|row| row.iter().all(|g| *g == 0.0)));
    }

    #[test]
    fn stale_forward_state_is_rejected() {
        let cfg = small_cfg();
        let mut params = EncoderParams::init(&cfg);
        let state = encode_with_state("abcd", &params, &cfg);
        params.bump_version();
        let mut grads = GradBuffer::new(cfg.h);
        let err = backward(&state, &vec![1.0; cfg.h], &params, &mut grads).unwrap_err();
        assert!(matches!(err, Error::StaleForwardState { .. }));
    }

    /// Scalar objective sum_s u_s . v_s for gradient checking.
    fn objective(texts: &[&str], ups: &[Vec<f64>], params: &EncoderParams, cfg: &EncoderConfig) -> f64 {
        texts
            .iter()
            .zip(ups)
            .map(|(t, u)| dot(&encode_dense(t, params, cfg), u))
            .sum()
    }

    #[test]
    fn analytic_gradients_match_central_differences() {
        let cfg = small_cfg();
        let params = EncoderParams::init(&cfg);
        let texts = ["abc def", "xyzzy", "ab"]; // includes a reserved-row case
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let ups: Vec<Vec<f64>> = texts
            .iter()
            .map(|_| (0..cfg.h).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();

        let mut grads = GradBuffer::new(cfg.h);
        for (t, u) in texts.iter().zip(&ups) {
            let state = encode_with_state(t, &params, &cfg);
            backward(&state, u, &params, &mut grads).unwrap();
        }

        let eps = 1e-5;
        let mut check = |loc: &str, analytic: f64, perturb: &dyn Fn(&mut EncoderParams, f64)| {
            let mut plus = params.clone();
            perturb(&mut plus, eps);
            let mut minus = params.clone();
            perturb(&mut minus, -eps);
            let numeric =
                (objective(&texts, &ups, &plus, &cfg) - objective(&texts, &ups, &minus, &cfg))
                    / (2.0 * eps);
            let denom = analytic.abs().max(numeric.abs());
            if denom > 1e-5 {
                let rel = (analytic - numeric).abs() / denom;
                assert!(rel < 1e-4, "{loc}: analytic {analytic} vs numeric {numeric}");
            } else {
                assert!((analytic - numeric).abs() < 1e-8, "{loc}");
            }
        };

        for i in 0..cfg.h {
            let gb = grads.b[i];
            check(&format!("b[{i}]"), gb, &move |p, d| p.b[i] += d);
            for j in 0..cfg.h {
                let gw = grads.w[i * cfg.h + j];
                check(&format!("w[{i},{j}]"), gw, &move |p, d| {
                    p.w[i * cfg.h + j] += d
                });
            }
        }
        for (&row, grad) in &grads.e_rows {
            for j in 0..cfg.h {
                let ge = grad[j];
                let idx = row as usize * cfg.h + j;
                check(&format!("e[{row},{j}]"), ge, &move |p, d| p.e[idx] += d);
            }
        }
    }

    #[test]
    fn shared_string_doubles_embedding_gradient() {
        let cfg = small_cfg();
        let params = EncoderParams::init(&cfg);
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let up: Vec<f64> = (0..cfg.h).map(|_| rng.random_range(-1.0..1.0)).collect();

        let mut single = GradBuffer::new(cfg.h);
        let state = encode_with_state("velkor zanti", &params, &cfg);
        backward(&state, &up, &params, &mut single).unwrap();

        let mut double = GradBuffer::new(cfg.h);
        let s1 = encode_with_state("velkor zanti", &params, &cfg);
        let s2 = encode_with_state("velkor zanti", &params, &cfg);
        backward(&s1, &up, &params, &mut double).unwrap();
        backward(&s2, &up, &params, &mut double).unwrap();

        for (row, grad) in &single.e_rows {
            let doubled = &double.e_rows[row];
            for (g1, g2) in grad.iter().zip(doubled) {
                assert!((2.0 * g1 - g2).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let cfg = small_cfg();
        let mut params = EncoderParams::init(&cfg);
        params.e[5] = 0.1234567890123456789;
        params.w[3] = -1.0 / 3.0;
        let lambda = 2.718281828459045_f64 / 3.0;
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &cfg, &params, lambda).unwrap();
        let (cfg2, params2, lambda2) = load_checkpoint(&path).unwrap();
        assert_eq!(cfg2, cfg);
        assert_eq!(lambda2.to_bits(), lambda.to_bits());
        assert_eq!(params2.e, params.e);
        assert_eq!(params2.w, params.w);
        assert_eq!(params2.b, params.b);
        // write again: byte-identical
        let path2 = dir.path().join("model2.ckpt");
        save_checkpoint(&path2, &cfg2, &params2, lambda2).unwrap();
        assert_eq!(fs::read(&path).unwrap(), fs::read(&path2).unwrap());
    }

    #[test]
    fn checkpoint_rejects_truncated_payload() {
        let cfg = small_cfg();
        let params = EncoderParams::init(&cfg);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        save_checkpoint(&path, &cfg, &params, 1.0).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 8);
        fs::write(&path, &bytes).unwrap();
        assert!(load_checkpoint(&path).is_err());
    }
}
