//! Synthetic bilingual languages with a deterministic translation oracle.
//!
//! Two languages share one vocabulary but occupy disjoint token ranges, so
//! the language of any output token is exactly decidable. Translation is a
//! fixed offset between the ranges: a length-preserving bijection that
//! leaves special tokens untouched. This replaces an external translation
//! model with something noise-free and invertible.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataprep::CrossLingualExample;
use crate::error::{Error, Result};
use crate::util::derive_seed_indexed;

/// Special token ids, fixed at the bottom of every vocabulary.
pub mod tokens {
    pub const BOS: u32 = 0;
    pub const EOS: u32 = 1;
    /// Reserved; no operation in this crate pads sequences.
    pub const PAD: u32 = 2;
    pub const SEP: u32 = 3;
    pub const NUM_SPECIALS: u32 = 4;

    pub fn is_special(t: u32) -> bool {
        t < NUM_SPECIALS
    }
}

/// One of the two synthetic languages. `LangA` plays the role of the
/// high-resource source language, `LangB` the transfer target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LanguageTag {
    LangA,
    LangB,
}

impl LanguageTag {
    pub fn other(self) -> Self {
        match self {
            LanguageTag::LangA => LanguageTag::LangB,
            LanguageTag::LangB => LanguageTag::LangA,
        }
    }
}

impl std::fmt::Display for LanguageTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LanguageTag::LangA => write!(f, "lang_a"),
            LanguageTag::LangB => write!(f, "lang_b"),
        }
    }
}

/// Token-id layout: four specials, then two equal-sized half-open language
/// ranges. `translate` adds or subtracts `offset` to map one range onto the
/// other.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub total_size: u32,
    pub lang_a_start: u32,
    pub lang_a_end: u32,
    pub lang_b_start: u32,
    pub lang_b_end: u32,
    pub offset: u32,
}

impl Vocabulary {
    /// Half-open id range of a language.
    pub fn range(&self, lang: LanguageTag) -> std::ops::Range<u32> {
        match lang {
            LanguageTag::LangA => self.lang_a_start..self.lang_a_end,
            LanguageTag::LangB => self.lang_b_start..self.lang_b_end,
        }
    }

    pub fn range_len(&self) -> u32 {
        self.lang_a_end - self.lang_a_start
    }

    /// Language of a token id, if it lies in either range.
    pub fn lang_of(&self, t: u32) -> Option<LanguageTag> {
        if self.range(LanguageTag::LangA).contains(&t) {
            Some(LanguageTag::LangA)
        } else if self.range(LanguageTag::LangB).contains(&t) {
            Some(LanguageTag::LangB)
        } else {
            None
        }
    }

    /// The fixed marker token of a language (used by `MarkedCopy`); first id
    /// of the range, so markers translate onto each other.
    pub fn marker(&self, lang: LanguageTag) -> u32 {
        self.range(lang).start
    }
}

/// Lays out a vocabulary of `total_size` ids. After the four specials, each
/// language receives `floor((total_size - 4) * lang_fraction)` ids.
pub fn build_vocabulary(total_size: u32, lang_fraction: f64) -> Result<Vocabulary> {
    if total_size < 8 {
        return Err(Error::Config(format!(
            "total_size must be >= 8, got {total_size}"
        )));
    }
    if !(lang_fraction > 0.0 && lang_fraction < 1.0) {
        return Err(Error::Config(format!(
            "lang_fraction must lie in (0, 1), got {lang_fraction}"
        )));
    }
    let usable = total_size - tokens::NUM_SPECIALS;
    let per_range = (f64::from(usable) * lang_fraction).floor() as u32;
    if per_range < 2 {
        return Err(Error::Config(format!(
            "each language range must hold >= 2 tokens, got {per_range} \
             (total_size {total_size}, lang_fraction {lang_fraction})"
        )));
    }
    if 2 * per_range > usable {
        return Err(Error::Config(format!(
            "language ranges would overlap: 2 * {per_range} > {usable} usable ids"
        )));
    }
    let a_start = tokens::NUM_SPECIALS;
    Ok(Vocabulary {
        total_size,
        lang_a_start: a_start,
        lang_a_end: a_start + per_range,
        lang_b_start: a_start + per_range,
        lang_b_end: a_start + 2 * per_range,
        offset: per_range,
    })
}

/// Deterministic task families over token sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskKind {
    /// Response repeats the prompt.
    Echo,
    /// Response is the prompt in reverse order.
    Reverse,
    /// Response is the prompt prefixed by the language's marker token.
    MarkedCopy,
}

/// A prompt/response pair in a single language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstance {
    pub prompt: Vec<u32>,
    pub response: Vec<u32>,
    pub lang: LanguageTag,
    pub task_kind: TaskKind,
}

fn response_for(kind: TaskKind, prompt: &[u32], lang: LanguageTag, vocab: &Vocabulary) -> Vec<u32> {
    match kind {
        TaskKind::Echo => prompt.to_vec(),
        TaskKind::Reverse => prompt.iter().rev().copied().collect(),
        TaskKind::MarkedCopy => {
            let mut r = Vec::with_capacity(prompt.len() + 1);
            r.push(vocab.marker(lang));
            r.extend_from_slice(prompt);
            r
        }
    }
}

pub(crate) fn sample_task_with_rng(
    rng: &mut ChaCha8Rng,
    lang: LanguageTag,
    task_kind: TaskKind,
    len_range: (usize, usize),
    vocab: &Vocabulary,
) -> TaskInstance {
    let (lo, hi) = len_range;
    let len = rng.random_range(lo..=hi);
    let range = vocab.range(lang);
    let prompt: Vec<u32> = (0..len).map(|_| rng.random_range(range.clone())).collect();
    let response = response_for(task_kind, &prompt, lang, vocab);
    TaskInstance {
        prompt,
        response,
        lang,
        task_kind,
    }
}

/// Draws a task instance with prompt tokens uniform over the language's
/// range and prompt length uniform over the inclusive `len_range`.
pub fn sample_task(
    seed: u64,
    lang: LanguageTag,
    task_kind: TaskKind,
    len_range: (usize, usize),
    vocab: &Vocabulary,
) -> Result<TaskInstance> {
    let (lo, hi) = len_range;
    if lo < 1 || hi < lo {
        return Err(Error::Config(format!(
            "len_range must satisfy 1 <= lo <= hi, got ({lo}, {hi})"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(sample_task_with_rng(&mut rng, lang, task_kind, len_range, vocab))
}

/// Translates `seq` from `source` into the other language by shifting every
/// non-special token by the vocabulary offset. Specials pass through.
pub fn translate(seq: &[u32], source: LanguageTag, vocab: &Vocabulary) -> Result<Vec<u32>> {
    let range = vocab.range(source);
    let mut out = Vec::with_capacity(seq.len());
    for (position, &t) in seq.iter().enumerate() {
        if tokens::is_special(t) {
            out.push(t);
        } else if range.contains(&t) {
            match source {
                LanguageTag::LangA => out.push(t + vocab.offset),
                LanguageTag::LangB => out.push(t - vocab.offset),
            }
        } else {
            return Err(Error::MixedLanguage { token: t, position });
        }
    }
    Ok(out)
}

/// Majority-range language of a sequence plus the fraction of non-special
/// tokens that fall in that range. Ties go to `LangA`.
pub fn detect_language(seq: &[u32], vocab: &Vocabulary) -> Result<(LanguageTag, f64)> {
    let mut count_a = 0usize;
    let mut count_b = 0usize;
    let mut non_special = 0usize;
    for &t in seq {
        if tokens::is_special(t) {
            continue;
        }
        non_special += 1;
        match vocab.lang_of(t) {
            Some(LanguageTag::LangA) => count_a += 1,
            Some(LanguageTag::LangB) => count_b += 1,
            None => {}
        }
    }
    if non_special == 0 {
        return Err(Error::IndeterminateLanguage);
    }
    let (tag, count) = if count_a >= count_b {
        (LanguageTag::LangA, count_a)
    } else {
        (LanguageTag::LangB, count_b)
    };
    Ok((tag, count as f64 / non_special as f64))
}

/// Relative weights over task kinds used when generating a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMix {
    pub echo: f64,
    pub reverse: f64,
    pub marked_copy: f64,
}

impl Default for TaskMix {
    fn default() -> Self {
        TaskMix {
            echo: 1.0,
            reverse: 0.0,
            marked_copy: 0.0,
        }
    }
}

impl TaskMix {
    fn validate(&self) -> Result<()> {
        let weights = [self.echo, self.reverse, self.marked_copy];
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::Config("task mix weights must be finite and >= 0".into()));
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("task mix weights must not all be zero".into()));
        }
        Ok(())
    }

    fn draw(&self, rng: &mut ChaCha8Rng) -> TaskKind {
        let total = self.echo + self.reverse + self.marked_copy;
        let x = rng.random_range(0.0..total);
        if x < self.echo {
            TaskKind::Echo
        } else if x < self.echo + self.reverse {
            TaskKind::Reverse
        } else {
            TaskKind::MarkedCopy
        }
    }
}

/// Draws a task whose kind is itself drawn from the mix.
pub fn sample_task_from_mix(
    seed: u64,
    lang: LanguageTag,
    task_mix: &TaskMix,
    len_range: (usize, usize),
    vocab: &Vocabulary,
) -> Result<TaskInstance> {
    let (lo, hi) = len_range;
    if lo < 1 || hi < lo {
        return Err(Error::Config(format!(
            "len_range must satisfy 1 <= lo <= hi, got ({lo}, {hi})"
        )));
    }
    task_mix.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let kind = task_mix.draw(&mut rng);
    Ok(sample_task_with_rng(&mut rng, lang, kind, len_range, vocab))
}

/// Generates `n` cross-lingual quadruples. The `LangA` side is sampled, the
/// `LangB` side is its exact translation. Responses carry a terminal EOS so
/// models trained on them learn where to stop.
///
/// Generation is per-example seeded: the first `k` examples of a corpus are
/// identical for every `n >= k`, which keeps data-size sweeps nested.
pub fn gen_corpus(
    n: usize,
    seed: u64,
    task_mix: &TaskMix,
    len_range: (usize, usize),
    vocab: &Vocabulary,
) -> Result<Vec<CrossLingualExample>> {
    if n < 1 {
        return Err(Error::Config(format!("corpus size must be >= 1, got {n}")));
    }
    let (lo, hi) = len_range;
    if lo < 1 || hi < lo {
        return Err(Error::Config(format!(
            "len_range must satisfy 1 <= lo <= hi, got ({lo}, {hi})"
        )));
    }
    task_mix.validate()?;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let task_seed = derive_seed_indexed(seed, "corpus", i as u64);
        let task =
            sample_task_from_mix(task_seed, LanguageTag::LangA, task_mix, len_range, vocab)?;
        let x_en = task.prompt;
        let mut y_en = task.response;
        y_en.push(tokens::EOS);
        let x_tgt = translate(&x_en, LanguageTag::LangA, vocab)?;
        let y_tgt = translate(&y_en, LanguageTag::LangA, vocab)?;
        out.push(CrossLingualExample {
            id: i as u64,
            x_en,
            y_en,
            x_tgt,
            y_tgt,
        });
    }
    Ok(out)
}
