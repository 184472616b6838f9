//! Dense ±1 vectors stored one bit per coordinate (`+1` ↔ bit set).
//!
//! Coordinate `i` lives in word `i / 64`, bit `i % 64`. Padding bits past
//! `dim` are always zero, so XOR-popcount over whole words counts exactly
//! the disagreeing coordinates.

use std::collections::HashMap;
use std::fmt;
use std::ops::Neg;
use std::str::FromStr;
use std::sync::{Arc, OnceLock};

use rand::Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{usage, Error, Result};

const WORD_BITS: usize = 64;

/// A single coordinate value.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sign {
    #[serde(rename = "-1")]
    Minus,
    #[serde(rename = "+1")]
    Plus,
}

impl Sign {
    pub fn value(self) -> i64 {
        match self {
            Sign::Minus => -1,
            Sign::Plus => 1,
        }
    }

    pub fn from_value(v: i64) -> Result<Sign> {
        match v {
            1 => Ok(Sign::Plus),
            -1 => Ok(Sign::Minus),
            other => Err(usage(format!("{other} is not a sign (expected -1 or +1)"))),
        }
    }

    fn from_bit(bit: bool) -> Sign {
        if bit {
            Sign::Plus
        } else {
            Sign::Minus
        }
    }

    fn bit(self) -> bool {
        self == Sign::Plus
    }
}

impl Neg for Sign {
    type Output = Sign;

    fn neg(self) -> Sign {
        match self {
            Sign::Minus => Sign::Plus,
            Sign::Plus => Sign::Minus,
        }
    }
}

impl fmt::Display for Sign {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Sign::Minus => "-1",
            Sign::Plus => "+1",
        })
    }
}

impl FromStr for Sign {
    type Err = Error;

    fn from_str(s: &str) -> Result<Sign> {
        match s.trim() {
            "+1" | "1" | "+" => Ok(Sign::Plus),
            "-1" | "-" => Ok(Sign::Minus),
            other => Err(usage(format!("cannot parse sign from {other:?}"))),
        }
    }
}

/// Immutable ±1 vector of dimension `dim >= 1`.
///
/// Storage is shared behind an `Arc`, so clones are cheap and the same
/// vector can sit in a transcript, an adversary view and a reconstruction
/// buffer without copying megabytes.
#[derive(Clone)]
pub struct SignVector {
    dim: usize,
    words: Arc<[u64]>,
}

fn word_count(dim: usize) -> usize {
    dim.div_ceil(WORD_BITS)
}

fn tail_mask(dim: usize) -> u64 {
    match dim % WORD_BITS {
        0 => u64::MAX,
        r => (1u64 << r) - 1,
    }
}

impl SignVector {
    /// Wraps packed words. Fails if `dim == 0`, the word count is wrong or
    /// any padding bit is set.
    pub fn from_words(dim: usize, words: Vec<u64>) -> Result<SignVector> {
        if dim == 0 {
            return Err(usage("sign vectors need dim >= 1"));
        }
        if words.len() != word_count(dim) {
            return Err(usage(format!(
                "dim {dim} needs {} words, got {}",
                word_count(dim),
                words.len()
            )));
        }
        if words[words.len() - 1] & !tail_mask(dim) != 0 {
            return Err(usage("padding bits past dim must be zero"));
        }
        Ok(SignVector {
            dim,
            words: words.into(),
        })
    }

    /// Builds from words whose padding may be dirty; the tail is masked off.
    pub(crate) fn from_words_masked(dim: usize, mut words: Vec<u64>) -> SignVector {
        debug_assert!(dim >= 1 && words.len() == word_count(dim));
        if let Some(last) = words.last_mut() {
            *last &= tail_mask(dim);
        }
        SignVector {
            dim,
            words: words.into(),
        }
    }

    pub fn from_signs(signs: &[Sign]) -> Result<SignVector> {
        if signs.is_empty() {
            return Err(usage("sign vectors need dim >= 1"));
        }
        let mut words = vec![0u64; word_count(signs.len())];
        for (i, s) in signs.iter().enumerate() {
            if s.bit() {
                words[i / WORD_BITS] |= 1 << (i % WORD_BITS);
            }
        }
        Ok(SignVector::from_words_masked(signs.len(), words))
    }

    /// All-`+1` vector.
    pub fn ones(dim: usize) -> Result<SignVector> {
        if dim == 0 {
            return Err(usage("sign vectors need dim >= 1"));
        }
        Ok(SignVector::from_words_masked(
            dim,
            vec![u64::MAX; word_count(dim)],
        ))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn words(&self) -> &[u64] {
        &self.words
    }

    pub fn get(&self, i: usize) -> Sign {
        assert!(
            i < self.dim,
            "coordinate {i} out of range for dim {}",
            self.dim
        );
        Sign::from_bit(self.words[i / WORD_BITS] >> (i % WORD_BITS) & 1 == 1)
    }

    /// Copy of `self` with coordinate `i` replaced.
    pub fn with_entry(&self, i: usize, value: Sign) -> Result<SignVector> {
        if i >= self.dim {
            return Err(usage(format!(
                "coordinate {i} out of range for dim {}",
                self.dim
            )));
        }
        let mut words = self.words.to_vec();
        let mask = 1u64 << (i % WORD_BITS);
        if value.bit() {
            words[i / WORD_BITS] |= mask;
        } else {
            words[i / WORD_BITS] &= !mask;
        }
        Ok(SignVector {
            dim: self.dim,
            words: words.into(),
        })
    }

    pub fn iter(&self) -> impl Iterator<Item = Sign> + '_ {
        (0..self.dim).map(move |i| self.get(i))
    }

    pub fn to_signs(&self) -> Vec<Sign> {
        self.iter().collect()
    }

    /// Number of `+1` coordinates.
    pub fn count_plus(&self) -> u64 {
        self.words.iter().map(|w| u64::from(w.count_ones())).sum()
    }

    /// True when both handles point at the same storage.
    pub fn shares_storage(&self, other: &SignVector) -> bool {
        Arc::ptr_eq(&self.words, &other.words)
    }

    fn storage_key(&self) -> usize {
        self.words.as_ptr() as usize
    }

    /// Lowercase hex of the packed bytes, coordinate `i` at bit `i % 8` of
    /// byte `i / 8`.
    pub fn to_hex(&self) -> String {
        let nbytes = self.dim.div_ceil(8);
        let bytes: Vec<u8> = self
            .words
            .iter()
            .flat_map(|w| w.to_le_bytes())
            .take(nbytes)
            .collect();
        hex::encode(bytes)
    }

    pub fn from_hex(dim: usize, text: &str) -> Result<SignVector> {
        if dim == 0 {
            return Err(usage("sign vectors need dim >= 1"));
        }
        let bytes = hex::decode(text.trim()).map_err(|e| usage(format!("bad hex: {e}")))?;
        if bytes.len() != dim.div_ceil(8) {
            return Err(usage(format!(
                "dim {dim} needs {} hex bytes, got {}",
                dim.div_ceil(8),
                bytes.len()
            )));
        }
        let words = bytes
            .chunks(8)
            .map(|chunk| {
                let mut buf = [0u8; 8];
                buf[..chunk.len()].copy_from_slice(chunk);
                u64::from_le_bytes(buf)
            })
            .collect();
        SignVector::from_words(dim, words)
    }
}

impl PartialEq for SignVector {
    fn eq(&self, other: &SignVector) -> bool {
        self.dim == other.dim && (self.shares_storage(other) || self.words == other.words)
    }
}

impl Eq for SignVector {}

impl Neg for &SignVector {
    type Output = SignVector;

    fn neg(self) -> SignVector {
        SignVector::from_words_masked(self.dim, self.words.iter().map(|w| !w).collect())
    }
}

impl fmt::Debug for SignVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.dim <= 64 {
            write!(f, "SignVector({self})")
        } else {
            write!(
                f,
                "SignVector(dim={}, plus={})",
                self.dim,
                self.count_plus()
            )
        }
    }
}

/// Renders as a `+`/`-` string, e.g. `+-+`.
impl fmt::Display for SignVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for s in self.iter() {
            f.write_str(if s == Sign::Plus { "+" } else { "-" })?;
        }
        Ok(())
    }
}

impl FromStr for SignVector {
    type Err = Error;

    fn from_str(s: &str) -> Result<SignVector> {
        let signs = s
            .chars()
            .filter(|c| !c.is_whitespace() && *c != ',')
            .map(|c| match c {
                '+' => Ok(Sign::Plus),
                '-' => Ok(Sign::Minus),
                other => Err(usage(format!(
                    "unexpected character {other:?} in sign string"
                ))),
            })
            .collect::<Result<Vec<_>>>()?;
        SignVector::from_signs(&signs)
    }
}

#[derive(Serialize, Deserialize)]
struct WireForm {
    dim: usize,
    bits: String,
}

impl Serialize for SignVector {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        WireForm {
            dim: self.dim,
            bits: self.to_hex(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for SignVector {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let form = WireForm::deserialize(deserializer)?;
        SignVector::from_hex(form.dim, &form.bits).map_err(serde::de::Error::custom)
    }
}

fn check_dims(u: &SignVector, v: &SignVector) -> Result<()> {
    if u.dim != v.dim {
        return Err(usage(format!("dimension mismatch: {} vs {}", u.dim, v.dim)));
    }
    Ok(())
}

/// Σ_i u_i·v_i.
pub fn inner(u: &SignVector, v: &SignVector) -> Result<i64> {
    check_dims(u, v)?;
    if u.shares_storage(v) {
        return Ok(u.dim as i64);
    }
    let disagree = xor_popcount(&u.words, &v.words);
    Ok(u.dim as i64 - 2 * disagree as i64)
}

/// Coordinate-wise majority; an exact tie resolves to `+1`.
pub fn sign_majority(vectors: &[SignVector]) -> Result<SignVector> {
    let first = vectors
        .first()
        .ok_or_else(|| usage("sign_majority needs at least one vector"))?;
    for v in &vectors[1..] {
        check_dims(first, v)?;
    }
    let k = vectors.len();
    if k == 1 {
        return Ok(first.clone());
    }
    // Sum is 2·ones − k, so the result is +1 iff ones ≥ ⌈k/2⌉.
    let threshold = k.div_ceil(2) as u64;
    let planes = (usize::BITS - k.leading_zeros()) as usize;
    let nwords = first.words.len();
    let mut out = vec![0u64; nwords];

    const BLOCK: usize = 512;
    let mut counters = vec![0u64; planes * BLOCK];
    for start in (0..nwords).step_by(BLOCK) {
        let len = BLOCK.min(nwords - start);
        counters.iter_mut().for_each(|c| *c = 0);
        for v in vectors {
            let src = &v.words[start..start + len];
            for (w, &x) in src.iter().enumerate() {
                let mut carry = x;
                for p in 0..planes {
                    let slot = &mut counters[p * BLOCK + w];
                    let next = *slot & carry;
                    *slot ^= carry;
                    carry = next;
                }
            }
        }
        for (w, dst) in out[start..start + len].iter_mut().enumerate() {
            let mut greater = 0u64;
            let mut equal = u64::MAX;
            for p in (0..planes).rev() {
                let plane = counters[p * BLOCK + w];
                if threshold >> p & 1 == 1 {
                    equal &= plane;
                } else {
                    greater |= equal & plane;
                    equal &= !plane;
                }
            }
            *dst = greater | equal;
        }
    }
    Ok(SignVector::from_words_masked(first.dim, out))
}

/// Uniform vector on {±1}^dim.
pub fn random_sign_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Result<SignVector> {
    if dim == 0 {
        return Err(usage("sign vectors need dim >= 1"));
    }
    let words = (0..word_count(dim)).map(|_| rng.next_u64()).collect();
    Ok(SignVector::from_words_masked(dim, words))
}

/// Memoized inner products keyed on vector storage.
///
/// Vectors are registered by handle; handles sharing storage share one
/// slot. The cache keeps every registered vector alive so storage
/// addresses cannot be recycled while it exists.
#[derive(Default)]
pub struct InnerCache {
    slots: HashMap<usize, usize>,
    vectors: Vec<SignVector>,
    values: HashMap<(usize, usize), i64>,
}

impl InnerCache {
    pub fn new() -> InnerCache {
        InnerCache::default()
    }

    fn slot(&mut self, v: &SignVector) -> Result<usize> {
        if let Some(first) = self.vectors.first() {
            check_dims(first, v)?;
        }
        let next = self.vectors.len();
        let slot = *self.slots.entry(v.storage_key()).or_insert(next);
        if slot == next {
            self.vectors.push(v.clone());
        }
        Ok(slot)
    }

    pub fn inner(&mut self, u: &SignVector, v: &SignVector) -> Result<i64> {
        let a = self.slot(u)?;
        let b = self.slot(v)?;
        if a == b {
            return Ok(u.dim as i64);
        }
        let key = (a.min(b), a.max(b));
        if let Some(&value) = self.values.get(&key) {
            return Ok(value);
        }
        let value = inner(u, v)?;
        self.values.insert(key, value);
        Ok(value)
    }

    /// Computes every pairwise inner product among `vectors`.
    ///
    /// Work is tiled by word chunk and by blocks of vectors so that the
    /// chunks of two blocks stay in L2 while all their pairs are counted.
    pub fn fill_all_pairs(&mut self, vectors: &[SignVector]) -> Result<()> {
        const CHUNK: usize = 512;
        const BLOCK: usize = 16;

        let mut slots = Vec::with_capacity(vectors.len());
        for v in vectors {
            let s = self.slot(v)?;
            if !slots.contains(&s) {
                slots.push(s);
            }
        }
        slots.sort_unstable();
        let n = slots.len();
        let missing = (0..n)
            .flat_map(|x| (x + 1..n).map(move |y| (x, y)))
            .any(|(x, y)| !self.values.contains_key(&(slots[x], slots[y])));
        if !missing {
            return Ok(());
        }

        let words: Vec<&[u64]> = slots.iter().map(|&s| &self.vectors[s].words[..]).collect();
        let dim = self.vectors[slots[0]].dim;
        let nwords = word_count(dim);
        let mut disagree = vec![0u64; n * n];
        for start in (0..nwords).step_by(CHUNK) {
            let end = (start + CHUNK).min(nwords);
            for bi in (0..n).step_by(BLOCK) {
                for bj in (bi..n).step_by(BLOCK) {
                    for x in bi..(bi + BLOCK).min(n) {
                        let wx = &words[x][start..end];
                        let from = if bi == bj { x + 1 } else { bj };
                        for y in from..(bj + BLOCK).min(n) {
                            disagree[x * n + y] += xor_popcount(wx, &words[y][start..end]);
                        }
                    }
                }
            }
        }
        for x in 0..n {
            for y in x + 1..n {
                let value = dim as i64 - 2 * disagree[x * n + y] as i64;
                self.values.entry((slots[x], slots[y])).or_insert(value);
            }
        }
        Ok(())
    }
}

type XorPopcount = fn(&[u64], &[u64]) -> u64;

/// Number of bit positions where `a` and `b` differ.
pub(crate) fn xor_popcount(a: &[u64], b: &[u64]) -> u64 {
    static KERNEL: OnceLock<XorPopcount> = OnceLock::new();
    let kernel = KERNEL.get_or_init(select_kernel);
    kernel(a, b)
}

// Inlined so the AVX2 wrapper compiles a copy using the popcnt instruction.
#[inline(always)]
fn xor_popcount_portable(a: &[u64], b: &[u64]) -> u64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| u64::from((x ^ y).count_ones()))
        .sum()
}

#[cfg(target_arch = "x86_64")]
mod x86 {
    #[target_feature(enable = "avx512f,avx512vpopcntdq")]
    fn xor_popcount_avx512(a: &[u64], b: &[u64]) -> u64 {
        use std::arch::x86_64::*;
        let n = a.len().min(b.len());
        let (mut acc0, mut acc1) = (_mm512_setzero_si512(), _mm512_setzero_si512());
        let mut i = 0;
        while i + 16 <= n {
            // SAFETY: i + 16 <= n bounds all four unaligned 8-word loads.
            unsafe {
                let x0 = _mm512_loadu_si512(a.as_ptr().add(i).cast());
                let y0 = _mm512_loadu_si512(b.as_ptr().add(i).cast());
                let x1 = _mm512_loadu_si512(a.as_ptr().add(i + 8).cast());
                let y1 = _mm512_loadu_si512(b.as_ptr().add(i + 8).cast());
                acc0 = _mm512_add_epi64(acc0, _mm512_popcnt_epi64(_mm512_xor_si512(x0, y0)));
                acc1 = _mm512_add_epi64(acc1, _mm512_popcnt_epi64(_mm512_xor_si512(x1, y1)));
            }
            i += 16;
        }
        let head = _mm512_reduce_add_epi64(_mm512_add_epi64(acc0, acc1)) as u64;
        head + super::xor_popcount_portable(&a[i..n], &b[i..n])
    }

    #[target_feature(enable = "avx2,popcnt")]
    unsafe fn xor_popcount_avx2(a: &[u64], b: &[u64]) -> u64 {
        super::xor_popcount_portable(a, b)
    }

    pub(super) fn avx512(a: &[u64], b: &[u64]) -> u64 {
        // SAFETY: only selected after runtime detection of both features.
        unsafe { xor_popcount_avx512(a, b) }
    }

    pub(super) fn avx2(a: &[u64], b: &[u64]) -> u64 {
        // SAFETY: only selected after runtime detection of both features.
        unsafe { xor_popcount_avx2(a, b) }
    }
}

fn select_kernel() -> XorPopcount {
    #[cfg(target_arch = "x86_64")]
    {
        if is_x86_feature_detected!("avx512f") && is_x86_feature_detected!("avx512vpopcntdq") {
            return x86::avx512;
        }
        if is_x86_feature_detected!("avx2") && is_x86_feature_detected!("popcnt") {
            return x86::avx2;
        }
    }
    xor_popcount_portable
}
