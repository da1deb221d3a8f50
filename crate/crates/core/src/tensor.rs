//! Truncated tensor algebra over the alphabet `{0, .., dim-1}`.
//!
//! Coefficients are stored densely, level by level. Inside a level a word
//! `(l1, .., lk)` sits at the mixed-radix index `l1*dim^(k-1) + .. + lk`, so
//! the flat layout is the canonical ordering: by length first, then
//! lexicographic. Letter 0 is reserved for the time coordinate by the signature
//! code; nothing in this module depends on that.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::de::{self, Deserializer};
use serde::ser::{SerializeMap, SerializeStruct, Serializer};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A word in the tensor alphabet.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Word(Vec<usize>);

impl Word {
    pub fn new(letters: Vec<usize>) -> Self {
        Word(letters)
    }

    pub fn empty() -> Self {
        Word(Vec::new())
    }

    pub fn letters(&self) -> &[usize] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    fn push(&self, letter: usize) -> Word {
        let mut letters = self.0.clone();
        letters.push(letter);
        Word(letters)
    }
}

impl From<&[usize]> for Word {
    fn from(letters: &[usize]) -> Self {
        Word(letters.to_vec())
    }
}

impl<const K: usize> From<[usize; K]> for Word {
    fn from(letters: [usize; K]) -> Self {
        Word(letters.to_vec())
    }
}

impl fmt::Display for Word {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, l) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(",")?;
            }
            write!(f, "{l}")?;
        }
        Ok(())
    }
}

impl FromStr for Word {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() {
            return Ok(Word::empty());
        }
        s.split(',')
            .map(|p| {
                p.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::InvalidWord(s.to_string()))
            })
            .collect::<Result<Vec<_>>>()
            .map(Word)
    }
}

/// Number of words of length at most `depth` over `dim` letters.
pub fn series_len(dim: usize, depth: usize) -> usize {
    level_offset(dim, depth + 1)
}

fn level_offset(dim: usize, level: usize) -> usize {
    // sum_{k<level} dim^k
    let mut total = 0;
    let mut p = 1;
    for _ in 0..level {
        total += p;
        p *= dim;
    }
    total
}

/// Element of the truncated tensor algebra `T^{<=depth}(R^dim)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorSeries {
    depth: usize,
    dim: usize,
    coeffs: Vec<f64>,
}

impl TensorSeries {
    /// The zero series.
    pub fn zero(depth: usize, dim: usize) -> Self {
        assert!(depth >= 1, "truncation depth must be at least 1");
        assert!(dim >= 1, "alphabet must be nonempty");
        TensorSeries {
            depth,
            dim,
            coeffs: vec![0.0; series_len(dim, depth)],
        }
    }

    /// Multiplicative identity: coefficient 1 on the empty word.
    pub fn unit(depth: usize, dim: usize) -> Self {
        let mut t = Self::zero(depth, dim);
        t.coeffs[0] = 1.0;
        t
    }

    /// Pure level-1 element `sum_i v_i e_i`.
    pub fn letter_vector(v: &[f64], depth: usize) -> Self {
        let mut t = Self::zero(depth, v.len());
        t.coeffs[1..1 + v.len()].copy_from_slice(v);
        t
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.coeffs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coeffs.is_empty()
    }

    /// Flat coefficient vector in canonical word order.
    pub fn as_slice(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.coeffs.clone()
    }

    pub fn unflatten(coeffs: Vec<f64>, depth: usize, dim: usize) -> Result<Self> {
        let expected = series_len(dim, depth);
        if coeffs.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "flat vector has length {}, expected {expected}",
                coeffs.len()
            )));
        }
        Ok(TensorSeries { depth, dim, coeffs })
    }

    /// Coefficients of level `k` (words of length exactly `k`).
    pub fn level(&self, k: usize) -> &[f64] {
        let start = level_offset(self.dim, k);
        &self.coeffs[start..start + self.dim.pow(k as u32)]
    }

    fn level_mut(&mut self, k: usize) -> &mut [f64] {
        let start = level_offset(self.dim, k);
        let len = self.dim.pow(k as u32);
        &mut self.coeffs[start..start + len]
    }

    /// Flat index of a word, validating letters and length.
    pub fn index_of(&self, word: &Word) -> Result<usize> {
        if word.len() > self.depth {
            return Err(Error::DepthExceeded {
                len: word.len(),
                depth: self.depth,
            });
        }
        let mut idx = 0;
        for &l in word.letters() {
            if l >= self.dim {
                return Err(Error::InvalidWord(format!(
                    "letter {l} outside alphabet of size {}",
                    self.dim
                )));
            }
            idx = idx * self.dim + l;
        }
        Ok(level_offset(self.dim, word.len()) + idx)
    }

    /// Word stored at a flat index.
    pub fn word_at(&self, index: usize) -> Word {
        let mut level = 0;
        while level_offset(self.dim, level + 1) <= index {
            level += 1;
        }
        let mut rem = index - level_offset(self.dim, level);
        let mut letters = vec![0; level];
        for slot in letters.iter_mut().rev() {
            *slot = rem % self.dim;
            rem /= self.dim;
        }
        Word(letters)
    }

    /// Coefficient of `word`; words beyond the truncation read as 0.
    pub fn coeff(&self, word: &Word) -> f64 {
        self.index_of(word).map(|i| self.coeffs[i]).unwrap_or(0.0)
    }

    /// Coefficient addressed by a comma-joined word string such as `"0,1"`.
    pub fn coeff_str(&self, word: &str) -> f64 {
        word.parse::<Word>().map(|w| self.coeff(&w)).unwrap_or(0.0)
    }

    pub fn set_coeff(&mut self, word: &Word, value: f64) -> Result<()> {
        let i = self.index_of(word)?;
        self.coeffs[i] = value;
        Ok(())
    }

    fn check_compatible(&self, other: &TensorSeries) -> Result<()> {
        if self.depth != other.depth || self.dim != other.dim {
            return Err(Error::DimensionMismatch(format!(
                "(depth {}, dim {}) vs (depth {}, dim {})",
                self.depth, self.dim, other.depth, other.dim
            )));
        }
        Ok(())
    }

    pub fn add(&self, other: &TensorSeries) -> Result<TensorSeries> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        out.coeffs
            .iter_mut()
            .zip(&other.coeffs)
            .for_each(|(a, b)| *a += b);
        Ok(out)
    }

    pub fn sub(&self, other: &TensorSeries) -> Result<TensorSeries> {
        self.check_compatible(other)?;
        let mut out = self.clone();
        out.coeffs
            .iter_mut()
            .zip(&other.coeffs)
            .for_each(|(a, b)| *a -= b);
        Ok(out)
    }

    pub fn scale(&self, c: f64) -> TensorSeries {
        let mut out = self.clone();
        out.coeffs.iter_mut().for_each(|a| *a *= c);
        out
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &TensorSeries) -> Result<()> {
        self.check_compatible(other)?;
        self.coeffs
            .iter_mut()
            .zip(&other.coeffs)
            .for_each(|(a, b)| *a += c * b);
        Ok(())
    }

    /// Euclidean inner product over the shared word set.
    pub fn inner(&self, other: &TensorSeries) -> Result<f64> {
        self.check_compatible(other)?;
        Ok(self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a * b).sum())
    }

    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|a| a * a).sum::<f64>().sqrt()
    }

    pub fn max_abs_diff(&self, other: &TensorSeries) -> f64 {
        self.coeffs
            .iter()
            .zip(&other.coeffs)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Concatenation (Chen) product, truncated at the common depth.
    pub fn concat(&self, other: &TensorSeries) -> Result<TensorSeries> {
        self.check_compatible(other)?;
        let mut out = TensorSeries::zero(self.depth, self.dim);
        for n in 0..=self.depth {
            let target_start = level_offset(self.dim, n);
            for k in 0..=n {
                let a = self.level(k);
                let b = other.level(n - k);
                let stride = b.len();
                for (i, &ai) in a.iter().enumerate() {
                    if ai == 0.0 {
                        continue;
                    }
                    let base = target_start + i * stride;
                    for (j, &bj) in b.iter().enumerate() {
                        out.coeffs[base + j] += ai * bj;
                    }
                }
            }
        }
        Ok(out)
    }

    /// `exp(v) = sum_k v^{⊗k} / k!` for a level-1 vector `v` of length `dim`.
    pub fn exp_level1(v: &[f64], depth: usize) -> TensorSeries {
        let dim = v.len();
        let mut out = TensorSeries::unit(depth, dim);
        for k in 1..=depth {
            let (lower, upper) = out.coeffs.split_at_mut(level_offset(dim, k));
            let prev = &lower[level_offset(dim, k - 1)..];
            let cur = &mut upper[..dim.pow(k as u32)];
            let inv_k = 1.0 / k as f64;
            for (i, &p) in prev.iter().enumerate() {
                for (j, &vj) in v.iter().enumerate() {
                    cur[i * dim + j] = p * vj * inv_k;
                }
            }
        }
        out
    }

    /// `self ⊗ exp(v)` without materialising the exponential.
    ///
    /// Horner form per level: `((S0 ⊗ v/n + S1) ⊗ v/(n-1) + ..) ⊗ v + Sn`.
    pub fn mul_exp(&self, v: &[f64]) -> Result<TensorSeries> {
        if v.len() != self.dim {
            return Err(Error::DimensionMismatch(format!(
                "increment has {} components, alphabet has {}",
                v.len(),
                self.dim
            )));
        }
        let dim = self.dim;
        let mut out = self.clone();
        let mut acc: Vec<f64> = Vec::new();
        let mut next: Vec<f64> = Vec::new();
        for n in 1..=self.depth {
            acc.clear();
            acc.push(self.coeffs[0]);
            for j in 1..=n {
                let c = 1.0 / (n - j + 1) as f64;
                next.clear();
                next.resize(acc.len() * dim, 0.0);
                for (i, &a) in acc.iter().enumerate() {
                    let ac = a * c;
                    for (l, &vl) in v.iter().enumerate() {
                        next[i * dim + l] = ac * vl;
                    }
                }
                for (x, &s) in next.iter_mut().zip(self.level(j)) {
                    *x += s;
                }
                std::mem::swap(&mut acc, &mut next);
            }
            out.level_mut(n).copy_from_slice(&acc);
        }
        Ok(out)
    }

    /// Right multiplication by a single letter: `self ⊗ e_letter`.
    pub fn mul_letter(&self, letter: usize) -> Result<TensorSeries> {
        if letter >= self.dim {
            return Err(Error::InvalidWord(format!(
                "letter {letter} outside alphabet of size {}",
                self.dim
            )));
        }
        let dim = self.dim;
        let mut out = TensorSeries::zero(self.depth, dim);
        for n in 1..=self.depth {
            let start = level_offset(dim, n);
            for (i, &c) in self.level(n - 1).iter().enumerate() {
                out.coeffs[start + i * dim + letter] = c;
            }
        }
        Ok(out)
    }

    /// Iterate over `(word, coefficient)` in canonical order.
    pub fn iter_words(&self) -> impl Iterator<Item = (Word, f64)> + '_ {
        (0..self.coeffs.len()).map(move |i| (self.word_at(i), self.coeffs[i]))
    }
}

/// All riffle interleavings of `w1` and `w2` with multiplicities.
pub fn shuffle_product(w1: &Word, w2: &Word, depth: usize) -> Result<Vec<(Word, u64)>> {
    let len = w1.len() + w2.len();
    if len > depth {
        return Err(Error::DepthExceeded { len, depth });
    }
    let mut acc = BTreeMap::new();
    shuffle_into(w1.letters(), w2.letters(), &Word::empty(), &mut acc);
    Ok(acc.into_iter().collect())
}

fn shuffle_into(a: &[usize], b: &[usize], prefix: &Word, acc: &mut BTreeMap<Word, u64>) {
    match (a.split_first(), b.split_first()) {
        (None, None) => *acc.entry(prefix.clone()).or_insert(0) += 1,
        (Some((&x, rest)), None) => shuffle_into(rest, b, &prefix.push(x), acc),
        (None, Some((&y, rest))) => shuffle_into(a, rest, &prefix.push(y), acc),
        (Some((&x, ra)), Some((&y, rb))) => {
            shuffle_into(ra, b, &prefix.push(x), acc);
            shuffle_into(a, rb, &prefix.push(y), acc);
        }
    }
}

/// `<w1 ⧢ w2, s>` evaluated through the shuffle expansion.
pub fn shuffle_functional(s: &TensorSeries, w1: &Word, w2: &Word) -> Result<f64> {
    Ok(shuffle_product(w1, w2, s.depth())?
        .into_iter()
        .map(|(w, m)| m as f64 * s.coeff(&w))
        .sum())
}

/// Largest violation of `<w1,s><w2,s> = <w1⧢w2,s>` over all word pairs with
/// `|w1| + |w2| <= depth`. Zero for group-like elements.
pub fn shuffle_defect(s: &TensorSeries) -> f64 {
    let words: Vec<Word> = (0..s.len()).map(|i| s.word_at(i)).collect();
    let mut worst: f64 = 0.0;
    for w1 in &words {
        for w2 in &words {
            if w1.len() + w2.len() > s.depth() {
                continue;
            }
            let lhs = s.coeff(w1) * s.coeff(w2);
            let rhs = shuffle_functional(s, w1, w2).expect("length checked");
            worst = worst.max((lhs - rhs).abs());
        }
    }
    worst
}

impl Serialize for TensorSeries {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        struct Coeffs<'a>(&'a TensorSeries);
        impl Serialize for Coeffs<'_> {
            fn serialize<S: Serializer>(
                &self,
                serializer: S,
            ) -> std::result::Result<S::Ok, S::Error> {
                let mut map = serializer.serialize_map(Some(self.0.len()))?;
                for (w, c) in self.0.iter_words() {
                    map.serialize_entry(&w.to_string(), &c)?;
                }
                map.end()
            }
        }
        let mut st = serializer.serialize_struct("TensorSeries", 3)?;
        st.serialize_field("depth", &self.depth)?;
        st.serialize_field("dim", &self.dim)?;
        st.serialize_field("coeffs", &Coeffs(self))?;
        st.end()
    }
}

impl<'de> Deserialize<'de> for TensorSeries {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            depth: usize,
            dim: usize,
            #[serde(default)]
            coeffs: BTreeMap<String, f64>,
        }
        let raw = Raw::deserialize(deserializer)?;
        if raw.depth < 1 || raw.dim < 1 {
            return Err(de::Error::custom("depth and dim must be positive"));
        }
        let mut t = TensorSeries::zero(raw.depth, raw.dim);
        for (key, value) in raw.coeffs {
            let word: Word = key.parse().map_err(de::Error::custom)?;
            t.set_coeff(&word, value).map_err(de::Error::custom)?;
        }
        Ok(t)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn w(s: &str) -> Word {
        s.parse().unwrap()
    }

    fn random_series(depth: usize, dim: usize, seed: &[f64]) -> TensorSeries {
        let n = series_len(dim, depth);
        let coeffs = (0..n).map(|i| seed[i % seed.len()] * ((i as f64) * 0.37).sin()).collect();
        TensorSeries::unflatten(coeffs, depth, dim).unwrap()
    }

    #[test]
    fn unit_has_single_coefficient() {
        let u = TensorSeries::unit(2, 2);
        assert_eq!(u.coeff(&Word::empty()), 1.0);
        assert_eq!(u.as_slice().iter().filter(|c| **c != 0.0).count(), 1);
        assert_eq!(u.inner(&u).unwrap(), 1.0);
    }

    #[test]
    fn unit_is_concat_identity() {
        let a = random_series(3, 3, &[0.3, -1.2, 2.0, 0.7]);
        let u = TensorSeries::unit(3, 3);
        assert_eq!(u.concat(&a).unwrap(), a);
        assert_eq!(a.concat(&u).unwrap(), a);
    }

    #[test]
    fn add_and_scale() {
        let a = random_series(2, 3, &[1.0, 2.0]);
        let z = a.add(&a.scale(-1.0)).unwrap();
        assert!(z.as_slice().iter().all(|c| *c == 0.0));
        assert_eq!(TensorSeries::unit(2, 2).scale(2.0).coeff(&Word::empty()), 2.0);
        let zero = TensorSeries::zero(2, 3);
        assert_eq!(zero.add(&a).unwrap(), a);
        assert!(matches!(
            a.add(&TensorSeries::zero(3, 3)),
            Err(Error::DimensionMismatch(_))
        ));
    }

    #[test]
    fn level_two_convolution() {
        let (x, y) = (0.7, -1.3);
        let mut a = TensorSeries::unit(2, 2);
        a.set_coeff(&w("1"), x).unwrap();
        let mut b = TensorSeries::unit(2, 2);
        b.set_coeff(&w("1"), y).unwrap();
        let c = a.concat(&b).unwrap();
        assert_eq!(c.coeff(&Word::empty()), 1.0);
        assert!((c.coeff(&w("1")) - (x + y)).abs() < 1e-15);
        assert!((c.coeff(&w("1,1")) - x * y).abs() < 1e-15);
        assert_eq!(c.coeff(&w("0,1")), 0.0);
    }

    #[test]
    fn exp_inverse_pair() {
        let v = [0.4, -0.9, 1.3];
        let neg: Vec<f64> = v.iter().map(|x| -x).collect();
        let p = TensorSeries::exp_level1(&v, 4)
            .concat(&TensorSeries::exp_level1(&neg, 4))
            .unwrap();
        assert!(p.max_abs_diff(&TensorSeries::unit(4, 3)) < 1e-12);
    }

    #[test]
    fn exp_scalar_series() {
        let e = TensorSeries::exp_level1(&[0.0, 1.0], 3);
        assert_eq!(e.coeff(&w("")), 1.0);
        assert_eq!(e.coeff(&w("1")), 1.0);
        assert!((e.coeff(&w("1,1")) - 0.5).abs() < 1e-15);
        assert!((e.coeff(&w("1,1,1")) - 1.0 / 6.0).abs() < 1e-15);
        assert_eq!(e.coeff(&w("0,1")), 0.0);
        assert_eq!(
            TensorSeries::exp_level1(&[0.0, 0.0], 3),
            TensorSeries::unit(3, 2)
        );
    }

    #[test]
    fn shuffle_small_cases() {
        let s = shuffle_product(&w("1"), &w("2"), 3).unwrap();
        assert_eq!(s, vec![(w("1,2"), 1), (w("2,1"), 1)]);
        let s = shuffle_product(&w("1"), &w("1"), 3).unwrap();
        assert_eq!(s, vec![(w("1,1"), 2)]);
        // (1,2) ⧢ (3): 312, 132, 123
        let s = shuffle_product(&w("1,2"), &w("3"), 3).unwrap();
        assert_eq!(s.len(), 3);
        assert_eq!(s.iter().map(|(_, m)| m).sum::<u64>(), 3);
        assert!(matches!(
            shuffle_product(&w("1,2"), &w("3"), 2),
            Err(Error::DepthExceeded { len: 3, depth: 2 })
        ));
        // the empty word is the shuffle identity
        assert_eq!(
            shuffle_product(&Word::empty(), &w("2,0"), 3).unwrap(),
            vec![(w("2,0"), 1)]
        );
    }

    #[test]
    fn word_indexing_roundtrip() {
        let s = TensorSeries::zero(3, 3);
        for i in 0..s.len() {
            assert_eq!(s.index_of(&s.word_at(i)).unwrap(), i);
        }
        assert_eq!(s.word_at(0), Word::empty());
        assert_eq!(s.word_at(1), w("0"));
        assert_eq!(s.word_at(4), w("0,0"));
        assert_eq!(s.word_at(5), w("0,1"));
        assert_eq!(series_len(2, 3), (2usize.pow(4) - 1) / 1);
        assert_eq!(series_len(4, 4), (4usize.pow(5) - 1) / 3);
    }

    #[test]
    fn mul_letter_shifts_levels() {
        let g = TensorSeries::unit(2, 3).mul_letter(1).unwrap();
        assert_eq!(g.coeff(&w("1")), 1.0);
        assert_eq!(g.as_slice().iter().filter(|c| **c != 0.0).count(), 1);
        let a = random_series(3, 3, &[0.5, 1.5, -0.25]);
        let direct = a.concat(&TensorSeries::letter_vector(&[0.0, 0.0, 1.0], 3)).unwrap();
        assert!(a.mul_letter(2).unwrap().max_abs_diff(&direct) < 1e-15);
    }

    #[test]
    fn json_format() {
        let mut t = TensorSeries::unit(2, 2);
        t.set_coeff(&w("0,1"), 0.5).unwrap();
        let js = serde_json::to_value(&t).unwrap();
        assert_eq!(js["depth"], 2);
        assert_eq!(js["dim"], 2);
        assert_eq!(js["coeffs"][""], 1.0);
        assert_eq!(js["coeffs"]["0,1"], 0.5);
        let back: TensorSeries =
            serde_json::from_str(r#"{"depth":2,"dim":2,"coeffs":{"":1.0,"1,0":2.5}}"#).unwrap();
        assert_eq!(back.coeff(&w("1,0")), 2.5);
        assert_eq!(back.coeff(&w("0")), 0.0);
        let bad = serde_json::from_str::<TensorSeries>(r#"{"depth":1,"dim":2,"coeffs":{"0,0":1}}"#);
        assert!(bad.is_err());
        let bad = serde_json::from_str::<TensorSeries>(r#"{"depth":2,"dim":2,"coeffs":{"2":1}}"#);
        assert!(bad.is_err());
    }

    fn series_strategy(depth: usize, dim: usize) -> impl Strategy<Value = TensorSeries> {
        prop::collection::vec(-2.0f64..2.0, series_len(dim, depth))
            .prop_map(move |c| TensorSeries::unflatten(c, depth, dim).unwrap())
    }

    proptest! {
        #[test]
        fn concat_is_associative(
            (a, b, c) in (1usize..=5, 2usize..=4).prop_flat_map(|(n, d)| {
                (series_strategy(n, d), series_strategy(n, d), series_strategy(n, d))
            })
        ) {
            let left = a.concat(&b).unwrap().concat(&c).unwrap();
            let right = a.concat(&b.concat(&c).unwrap()).unwrap();
            let scale = 1.0 + left.norm();
            prop_assert!(left.max_abs_diff(&right) <= 1e-12 * scale);
        }

        #[test]
        fn exp_is_group_like(v in prop::collection::vec(-1.5f64..1.5, 2..=4), depth in 1usize..=4) {
            let e = TensorSeries::exp_level1(&v, depth);
            prop_assert!(shuffle_defect(&e) <= 1e-10);
        }

        #[test]
        fn mul_exp_matches_concat(
            (a, v) in (1usize..=4, 2usize..=4).prop_flat_map(|(n, d)| {
                (series_strategy(n, d), prop::collection::vec(-1.0f64..1.0, d))
            })
        ) {
            let direct = a.concat(&TensorSeries::exp_level1(&v, a.depth())).unwrap();
            prop_assert!(a.mul_exp(&v).unwrap().max_abs_diff(&direct) <= 1e-12 * (1.0 + direct.norm()));
        }

        #[test]
        fn flatten_roundtrip(a in (1usize..=4, 2usize..=4).prop_flat_map(|(n, d)| series_strategy(n, d))) {
            let flat = a.flatten();
            prop_assert_eq!(flat.len(), series_len(a.dim(), a.depth()));
            let back = TensorSeries::unflatten(flat.clone(), a.depth(), a.dim()).unwrap();
            prop_assert_eq!(&back, &a);
            let dot: f64 = flat.iter().map(|x| x * x).sum();
            prop_assert_eq!(a.inner(&a).unwrap(), dot);
            let js = serde_json::to_string(&a).unwrap();
            let parsed: TensorSeries = serde_json::from_str(&js).unwrap();
            prop_assert_eq!(parsed, a);
        }

        #[test]
        fn shuffle_multiplicity_is_binomial(
            a in prop::collection::vec(0usize..3, 0..4),
            b in prop::collection::vec(0usize..3, 0..4),
        ) {
            let (p, q) = (a.len() as u64, b.len() as u64);
            let total: u64 = shuffle_product(&Word::new(a), &Word::new(b), 8)
                .unwrap()
                .iter()
                .map(|(_, m)| m)
                .sum();
            let binom = (1..=q).fold(1u64, |acc, i| acc * (p + i) / i);
            prop_assert_eq!(total, binom);
        }
    }
}
