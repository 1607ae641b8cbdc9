//! PosGen: synthetic next-token tasks whose per-token difficulty does not
//! grow with position.
//!
//! Every token after the first `j + k` is the sum, modulo `modulus`, of
//! exactly `j + k` earlier tokens:
//!
//! - recursive: the `j + k` tokens immediately before it;
//! - cot: the first `j` tokens of the sequence and the `k` before it;
//! - semi-recursive: `j` tokens starting at a front index `a(l)` that drifts
//!   away from `l` as the sequence grows, and the `k` before it.
//!
//! Positions are zero-based throughout.

use alloc::collections::BTreeSet;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_arg, Result};
use crate::rng::{self, Purpose};

pub type Token = u32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Subtask {
    Recursive,
    Cot,
    SemiRecursive,
}

impl Subtask {
    pub const ALL: [Subtask; 3] = [Subtask::Recursive, Subtask::Cot, Subtask::SemiRecursive];

    pub fn name(self) -> &'static str {
        match self {
            Subtask::Recursive => "recursive",
            Subtask::Cot => "cot",
            Subtask::SemiRecursive => "semi_recursive",
        }
    }
}

/// Front-window index rule of the semi-recursive task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemiVariant {
    /// `a(l) = max(floor((l - (j+k)) / 2) - j, 0)`: the dependency distance
    /// `l - a(l)` grows with `l`.
    #[default]
    Halved,
    /// `a(l) = max(floor(l - (j+k)/2) - j, 0)`, kept for comparison; its
    /// dependency distance is constant when `j + k` is even.
    Literal,
}

fn default_semi_variant() -> SemiVariant {
    SemiVariant::Halved
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PosGenSpec {
    pub subtask: Subtask,
    pub j: usize,
    pub k: usize,
    pub modulus: u32,
    pub vocab_size: u32,
    pub train_length: usize,
    pub eval_length: usize,
    #[serde(default = "default_semi_variant")]
    pub semi_variant: SemiVariant,
}

impl PosGenSpec {
    /// The configuration used for the synthetic experiments: `j = 1`,
    /// `k = 3`, addition mod 17, train on 64 tokens, evaluate on 256.
    pub fn standard(subtask: Subtask) -> Self {
        Self {
            subtask,
            j: 1,
            k: 3,
            modulus: 17,
            vocab_size: 17,
            train_length: 64,
            eval_length: 256,
            semi_variant: SemiVariant::Halved,
        }
    }

    pub fn seed_len(&self) -> usize {
        self.j + self.k
    }

    pub fn validate(&self) -> Result<()> {
        if self.j == 0 || self.k == 0 {
            return Err(invalid_arg!("j and k must be positive"));
        }
        if self.modulus < 2 {
            return Err(invalid_arg!("modulus must be >= 2"));
        }
        if self.vocab_size != self.modulus {
            return Err(invalid_arg!(
                "vocab_size ({}) must equal modulus ({})",
                self.vocab_size,
                self.modulus
            ));
        }
        if self.seed_len() > self.train_length || self.train_length >= self.eval_length {
            return Err(invalid_arg!(
                "need j + k <= train_length < eval_length, got {} / {} / {}",
                self.seed_len(),
                self.train_length,
                self.eval_length
            ));
        }
        Ok(())
    }

    /// Start of the front window used for position `l` (semi-recursive).
    pub fn front_start(&self, l: usize) -> usize {
        let jk = self.seed_len();
        let raw = match self.semi_variant {
            SemiVariant::Halved => (l - jk) / 2,
            SemiVariant::Literal => (2 * l - jk) / 2,
        };
        raw.saturating_sub(self.j)
    }

    /// Indices of the `j + k` tokens that determine position `l`.
    pub fn dependencies(&self, l: usize) -> impl Iterator<Item = usize> + '_ {
        let (j, k) = (self.j, self.k);
        let front = match self.subtask {
            Subtask::Recursive => l - (j + k),
            Subtask::Cot => 0,
            Subtask::SemiRecursive => self.front_start(l),
        };
        (front..front + j).chain(l - k..l)
    }

    /// Number of distinct seed tuples, `vocab_size^(j+k)`, if it fits.
    pub fn seed_space(&self) -> Option<u64> {
        u64::from(self.vocab_size).checked_pow(u32::try_from(self.seed_len()).ok()?)
    }
}

/// A generated sequence together with its seed prefix.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceSample {
    pub seed: Vec<Token>,
    pub tokens: Vec<Token>,
}

impl AsRef<[Token]> for SequenceSample {
    fn as_ref(&self) -> &[Token] {
        &self.tokens
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<SequenceSample>,
    pub val: Vec<SequenceSample>,
    pub test: Vec<SequenceSample>,
    pub master_seed: u64,
}

/// Token at position `l` given (at least) the first `l` tokens.
pub fn step_rule(spec: &PosGenSpec, prefix: &[Token], l: usize) -> Result<Token> {
    if l < spec.seed_len() {
        return Err(invalid_arg!("position {l} is inside the {}-token seed", spec.seed_len()));
    }
    if prefix.len() < l {
        return Err(invalid_arg!("prefix has {} tokens, need {l}", prefix.len()));
    }
    Ok(apply_rule(spec, prefix, l))
}

fn apply_rule(spec: &PosGenSpec, prefix: &[Token], l: usize) -> Token {
    let m = u64::from(spec.modulus);
    let sum = spec
        .dependencies(l)
        .fold(0u64, |acc, i| (acc + u64::from(prefix[i])) % m);
    sum as Token
}

/// Extends `seed` to `length` tokens with the subtask rule.
pub fn generate_sequence(spec: &PosGenSpec, seed: &[Token], length: usize) -> Result<SequenceSample> {
    if seed.len() != spec.seed_len() {
        return Err(invalid_arg!("seed has {} tokens, expected {}", seed.len(), spec.seed_len()));
    }
    if length < seed.len() {
        return Err(invalid_arg!("length {length} is shorter than the seed"));
    }
    if let Some(bad) = seed.iter().find(|&&t| t >= spec.vocab_size) {
        return Err(invalid_arg!("seed token {bad} outside vocabulary"));
    }
    let mut tokens = Vec::with_capacity(length);
    tokens.extend_from_slice(seed);
    for l in seed.len()..length {
        let next = apply_rule(spec, &tokens, l);
        tokens.push(next);
    }
    Ok(SequenceSample { seed: seed.to_vec(), tokens })
}

/// True iff every token is in range and every position past the seed
/// follows the rule.
pub fn oracle_verify(sample: &SequenceSample, spec: &PosGenSpec) -> bool {
    let jk = spec.seed_len();
    sample.tokens.len() >= jk
        && sample.seed.as_slice() == &sample.tokens[..jk]
        && sample.tokens.iter().all(|&t| t < spec.vocab_size)
        && (jk..sample.tokens.len()).all(|l| apply_rule(spec, &sample.tokens, l) == sample.tokens[l])
}

fn decode_seed(mut index: u64, base: u64, len: usize) -> Vec<Token> {
    let mut digits = alloc::vec![0; len];
    for d in digits.iter_mut().rev() {
        *d = (index % base) as Token;
        index /= base;
    }
    digits
}

/// Draws `n_train + n_val + n_test` distinct seed tuples and generates the
/// three splits. Train sequences have `train_length` tokens, validation and
/// test sequences `eval_length`.
pub fn make_splits(
    spec: &PosGenSpec,
    n_train: usize,
    n_val: usize,
    n_test: usize,
    master_seed: u64,
) -> Result<DatasetSplit> {
    spec.validate()?;
    let total = n_train
        .checked_add(n_val)
        .and_then(|t| t.checked_add(n_test))
        .ok_or_else(|| invalid_arg!("sample counts overflow"))?;
    let space = spec.seed_space();
    if let Some(space) = space {
        if total as u64 > space {
            return Err(invalid_arg!(
                "requested {total} sequences but only {space} distinct seeds exist"
            ));
        }
    }
    let mut rng = rng::stream(master_seed, Purpose::DatasetSeeds, 0);
    let base = u64::from(spec.vocab_size);
    let seeds: Vec<Vec<Token>> = match space.and_then(|s| usize::try_from(s).ok()) {
        Some(space) => index::sample(&mut rng, space, total)
            .into_iter()
            .map(|i| decode_seed(i as u64, base, spec.seed_len()))
            .collect(),
        None => {
            // Huge seed space: rejection sampling, collisions are rare.
            let mut seen = BTreeSet::new();
            let mut out = Vec::with_capacity(total);
            while out.len() < total {
                let seed: Vec<Token> =
                    (0..spec.seed_len()).map(|_| rng.random_range(0..spec.vocab_size)).collect();
                if seen.insert(seed.clone()) {
                    out.push(seed);
                }
            }
            out
        }
    };
    let build = |range: core::ops::Range<usize>, length: usize| -> Result<Vec<SequenceSample>> {
        seeds[range].iter().map(|s| generate_sequence(spec, s, length)).collect()
    };
    Ok(DatasetSplit {
        train: build(0..n_train, spec.train_length)?,
        val: build(n_train..n_train + n_val, spec.eval_length)?,
        test: build(n_train + n_val..total, spec.eval_length)?,
        master_seed,
    })
}

/// Fraction of positions `>= threshold` where `predicted` matches `gold`,
/// pooled over all sequences.
pub fn ood_accuracy<P: AsRef<[Token]>, G: AsRef<[Token]>>(
    predicted: &[P],
    gold: &[G],
    threshold: usize,
) -> Result<f64> {
    if predicted.len() != gold.len() {
        return Err(invalid_arg!(
            "{} predicted sequences vs {} gold",
            predicted.len(),
            gold.len()
        ));
    }
    let (mut hits, mut total) = (0u64, 0u64);
    for (p, g) in predicted.iter().zip(gold) {
        let (p, g) = (p.as_ref(), g.as_ref());
        if p.len() != g.len() {
            return Err(invalid_arg!("sequence lengths differ: {} vs {}", p.len(), g.len()));
        }
        if g.len() <= threshold {
            return Err(invalid_arg!(
                "gold length {} has no positions past {threshold}",
                g.len()
            ));
        }
        for (a, b) in p[threshold..].iter().zip(&g[threshold..]) {
            hits += u64::from(a == b);
            total += 1;
        }
    }
    if total == 0 {
        return Err(invalid_arg!("no sequences to score"));
    }
    Ok(hits as f64 / total as f64)
}
