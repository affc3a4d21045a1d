//! Seeded index selection.
//!
//! All randomness in the crate flows through [`Rng`], a thin wrapper around
//! ChaCha8 seeded with `seed_from_u64`. The stream is fully determined by the
//! seed, does not depend on platform endianness or word size, and can be split
//! into independent streams with [`Rng::fork`]. Uniform doubles use the top 53
//! bits of a 64-bit draw and bounded integers use Lemire's widening multiply, so
//! neither depends on `rand`'s distribution internals.
//!
//! [`DiscreteSampler`] draws an index with probability proportional to a weight
//! vector. It is backed by a Fenwick tree, so both a draw and a weight update
//! cost `O(log n)`.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

/// Serializable snapshot of an [`Rng`] position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    pub word_pos: u128,
}

impl RngState {
    pub const ENCODED_LEN: usize = 32 + 8 + 16;

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(Self::ENCODED_LEN);
        out.extend_from_slice(&self.seed);
        out.extend_from_slice(&self.stream.to_le_bytes());
        out.extend_from_slice(&self.word_pos.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() != Self::ENCODED_LEN {
            return Err(Error::Blob(format!(
                "rng state must be {} bytes, got {}",
                Self::ENCODED_LEN,
                bytes.len()
            )));
        }
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&bytes[..32]);
        let stream = u64::from_le_bytes(bytes[32..40].try_into().unwrap());
        let word_pos = u128::from_le_bytes(bytes[40..56].try_into().unwrap());
        Ok(Self { seed, stream, word_pos })
    }
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { inner: ChaCha8Rng::seed_from_u64(seed) }
    }

    /// Independent generator sharing this one's key but on another stream.
    pub fn fork(&self, stream: u64) -> Self {
        let mut inner = ChaCha8Rng::from_seed(self.inner.get_seed());
        inner.set_stream(stream);
        Self { inner }
    }

    pub fn state(&self) -> RngState {
        RngState {
            seed: self.inner.get_seed(),
            stream: self.inner.get_stream(),
            word_pos: self.inner.get_word_pos(),
        }
    }

    pub fn from_state(state: &RngState) -> Self {
        let mut inner = ChaCha8Rng::from_seed(state.seed);
        inner.set_stream(state.stream);
        inner.set_word_pos(state.word_pos);
        Self { inner }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform double in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        (self.inner.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in `[0, n)`. `n` must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "Rng::below called with n = 0");
        let n = n as u64;
        let mut m = (self.inner.next_u64() as u128) * (n as u128);
        if (m as u64) < n {
            let threshold = n.wrapping_neg() % n;
            while (m as u64) < threshold {
                m = (self.inner.next_u64() as u128) * (n as u128);
            }
        }
        (m >> 64) as usize
    }

    /// Fisher-Yates permutation of `0..n`.
    pub fn permutation(&mut self, n: usize) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            let j = self.below(i + 1);
            perm.swap(i, j);
        }
        perm
    }
}

impl RngCore for Rng {
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Fenwick tree over nonnegative weights. Unlike [`DiscreteSampler`] it may
/// hold an all-zero weight vector; callers check [`FenwickTree::total`].
#[derive(Clone, Debug)]
pub(crate) struct FenwickTree {
    weights: Vec<f64>,
    tree: Vec<f64>,
    updates: usize,
}

impl FenwickTree {
    pub(crate) fn new(weights: &[f64]) -> Self {
        let mut t = Self { weights: weights.to_vec(), tree: Vec::new(), updates: 0 };
        t.rebuild();
        t
    }

    pub(crate) fn zeros(n: usize) -> Self {
        Self { weights: vec![0.0; n], tree: vec![0.0; n + 1], updates: 0 }
    }

    fn rebuild(&mut self) {
        let n = self.weights.len();
        let mut tree = vec![0.0; n + 1];
        tree[1..].copy_from_slice(&self.weights);
        for i in 1..=n {
            let parent = i + (i & i.wrapping_neg());
            if parent <= n {
                tree[parent] += tree[i];
            }
        }
        self.tree = tree;
        self.updates = 0;
    }

    pub(crate) fn len(&self) -> usize {
        self.weights.len()
    }

    pub(crate) fn weight(&self, i: usize) -> f64 {
        self.weights[i]
    }

    pub(crate) fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub(crate) fn total(&self) -> f64 {
        let mut i = self.weights.len();
        let mut s = 0.0;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }

    pub(crate) fn set(&mut self, i: usize, w: f64) {
        let delta = w - self.weights[i];
        self.weights[i] = w;
        if delta == 0.0 {
            return;
        }
        self.updates += 1;
        // Periodic rebuild bounds accumulated rounding in the internal sums.
        if self.updates >= self.weights.len().max(64) {
            self.rebuild();
            return;
        }
        let n = self.weights.len();
        let mut k = i + 1;
        while k <= n {
            self.tree[k] += delta;
            k += k & k.wrapping_neg();
        }
    }

    /// Smallest index whose inclusive prefix sum exceeds `target`, skipping
    /// zero-weight entries that rounding in the tree might otherwise expose.
    pub(crate) fn find(&self, target: f64) -> usize {
        let n = self.weights.len();
        let mut pos = 0usize;
        let mut rem = target;
        let mut step = if n == 0 { 0 } else { 1usize << (usize::BITS - 1 - n.leading_zeros()) };
        while step > 0 {
            let next = pos + step;
            if next <= n && self.tree[next] <= rem {
                pos = next;
                rem -= self.tree[next];
            }
            step >>= 1;
        }
        let idx = pos.min(n - 1);
        if self.weights[idx] > 0.0 {
            return idx;
        }
        if let Some(j) = (idx + 1..n).find(|&j| self.weights[j] > 0.0) {
            return j;
        }
        (0..idx).rev().find(|&j| self.weights[j] > 0.0).unwrap_or(idx)
    }

    pub(crate) fn sample(&self, rng: &mut Rng) -> usize {
        let total = self.total();
        self.find(rng.uniform() * total)
    }
}

/// Draws indices with probability proportional to nonnegative weights.
#[derive(Clone, Debug)]
pub struct DiscreteSampler {
    tree: FenwickTree,
}

fn check_weight(w: f64) -> Result<()> {
    if !(w >= 0.0) || !w.is_finite() {
        return invalid(format!("weights must be finite and nonnegative, got {w}"));
    }
    Ok(())
}

impl DiscreteSampler {
    pub fn new(weights: &[f64]) -> Result<Self> {
        for &w in weights {
            check_weight(w)?;
        }
        if !weights.iter().any(|&w| w > 0.0) {
            return invalid("at least one weight must be positive");
        }
        Ok(Self { tree: FenwickTree::new(weights) })
    }

    pub fn len(&self) -> usize {
        self.tree.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tree.len() == 0
    }

    pub fn weights(&self) -> &[f64] {
        self.tree.weights()
    }

    /// Inclusive prefix sums of the weights.
    pub fn cumulative(&self) -> Vec<f64> {
        self.tree
            .weights()
            .iter()
            .scan(0.0, |acc, &w| {
                *acc += w;
                Some(*acc)
            })
            .collect()
    }

    pub fn total(&self) -> f64 {
        self.tree.total()
    }

    pub fn probability(&self, i: usize) -> f64 {
        self.tree.weight(i) / self.total()
    }

    pub fn sample(&self, rng: &mut Rng) -> usize {
        self.tree.sample(rng)
    }

    /// Changes one weight in `O(log n)`. Rejects updates that would leave
    /// every weight at zero.
    pub fn update_weight(&mut self, i: usize, w: f64) -> Result<()> {
        check_weight(w)?;
        if i >= self.len() {
            return Err(Error::IndexOutOfRange { index: i, len: self.len() });
        }
        if w == 0.0 && self.tree.weights().iter().enumerate().all(|(j, &v)| j == i || v == 0.0) {
            return invalid("update would zero every weight");
        }
        self.tree.set(i, w);
        Ok(())
    }
}
