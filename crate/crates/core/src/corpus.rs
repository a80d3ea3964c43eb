//! Parallel corpora: the synthetic domain generator, plain-text I/O and
//! development-set carving.
//!
//! Corpora are stored as two line-aligned UTF-8 files, `<prefix>.src` and
//! `<prefix>.tgt`, one whitespace-tokenized sentence per line. An optional
//! `<prefix>.meta` sidecar records the split role, the vocabulary the text is
//! encoded with, and distillation provenance.

use std::fmt;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::hash::ContentHasher;

/// One aligned source/target sentence.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SentencePair {
    source: Vec<String>,
    target: Vec<String>,
}

fn check_side(side: &str, tokens: &[String]) -> Result<()> {
    if tokens.is_empty() {
        return Err(Error::validation(side, "sentence is empty"));
    }
    if let Some(t) = tokens
        .iter()
        .find(|t| t.is_empty() || t.chars().any(char::is_whitespace))
    {
        return Err(Error::validation(
            side,
            format!("token {t:?} is empty or contains whitespace"),
        ));
    }
    Ok(())
}

impl SentencePair {
    pub fn new(source: Vec<String>, target: Vec<String>) -> Result<Self> {
        check_side("source", &source)?;
        check_side("target", &target)?;
        Ok(SentencePair { source, target })
    }

    /// Splits both lines on whitespace.
    pub fn from_text(source: &str, target: &str) -> Result<Self> {
        SentencePair::new(split_tokens(source), split_tokens(target))
    }

    pub fn source(&self) -> &[String] {
        &self.source
    }

    pub fn target(&self) -> &[String] {
        &self.target
    }
}

fn split_tokens(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_owned).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Role {
    Train,
    Dev,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::Dev => "dev",
        })
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Role::Train),
            "dev" => Ok(Role::Dev),
            other => Err(Error::validation("role", format!("unknown role {other:?}"))),
        }
    }
}

/// Where the target side of a corpus came from.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum CorpusOrigin {
    /// Human (or generator) references.
    Original,
    /// Targets replaced by a teacher's beam decodes.
    Distilled {
        teacher_id: String,
        beam_size: usize,
        original_id: String,
    },
}

impl CorpusOrigin {
    pub fn is_distilled(&self) -> bool {
        matches!(self, CorpusOrigin::Distilled { .. })
    }
}

/// Ordered sentence pairs plus the metadata every job checks before it
/// consumes them.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParallelCorpus {
    name: String,
    role: Role,
    pairs: Vec<SentencePair>,
    origin: CorpusOrigin,
    vocab_id: Option<String>,
}

impl ParallelCorpus {
    pub fn new(name: impl Into<String>, role: Role, pairs: Vec<SentencePair>) -> Self {
        ParallelCorpus {
            name: name.into(),
            role,
            pairs,
            origin: CorpusOrigin::Original,
            vocab_id: None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn pairs(&self) -> &[SentencePair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn origin(&self) -> &CorpusOrigin {
        &self.origin
    }

    /// Id of the subword vocabulary the text is encoded with, `None` for
    /// word-level text.
    pub fn vocab_id(&self) -> Option<&str> {
        self.vocab_id.as_deref()
    }

    pub(crate) fn with_origin(mut self, origin: CorpusOrigin) -> Self {
        self.origin = origin;
        self
    }

    pub(crate) fn with_vocab(mut self, vocab_id: Option<String>) -> Self {
        self.vocab_id = vocab_id;
        self
    }

    /// Same metadata, new pairs.
    pub(crate) fn derive(&self, name: String, pairs: Vec<SentencePair>) -> Self {
        ParallelCorpus {
            name,
            role: self.role,
            pairs,
            origin: self.origin.clone(),
            vocab_id: self.vocab_id.clone(),
        }
    }

    /// Content hash over role, origin, vocabulary and every token. The
    /// display name does not participate.
    pub fn id(&self) -> String {
        let mut h = ContentHasher::new("corpus");
        h.str(&self.role.to_string());
        match &self.origin {
            CorpusOrigin::Original => {
                h.str("original");
            }
            CorpusOrigin::Distilled {
                teacher_id,
                beam_size,
                original_id,
            } => {
                h.str("distilled")
                    .str(teacher_id)
                    .u64(*beam_size as u64)
                    .str(original_id);
            }
        }
        h.str(self.vocab_id.as_deref().unwrap_or("-"));
        h.u64(self.pairs.len() as u64);
        for p in &self.pairs {
            h.u64(p.source.len() as u64);
            for t in &p.source {
                h.str(t);
            }
            h.u64(p.target.len() as u64);
            for t in &p.target {
                h.str(t);
            }
        }
        h.finish()
    }

    /// Hash of the source side only; distilled corpora share it with their
    /// original.
    pub fn source_id(&self) -> String {
        let mut h = ContentHasher::new("corpus-source");
        h.str(self.vocab_id.as_deref().unwrap_or("-"));
        for p in &self.pairs {
            h.u64(p.source.len() as u64);
            for t in &p.source {
                h.str(t);
            }
        }
        h.finish()
    }

    pub fn num_source_tokens(&self) -> usize {
        self.pairs.iter().map(|p| p.source.len()).sum()
    }

    pub fn num_target_tokens(&self) -> usize {
        self.pairs.iter().map(|p| p.target.len()).sum()
    }
}

/// Word-order transformation applied after lexical translation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ReorderRule {
    None,
    /// `a b c d e` becomes `b a d c e`.
    SwapAdjacent,
    /// Reverses consecutive windows of [`REVERSE_WINDOW`] tokens.
    ReverseWindow,
}

pub const REVERSE_WINDOW: usize = 3;

impl ReorderRule {
    pub fn apply<T>(self, tokens: &mut [T]) {
        match self {
            ReorderRule::None => {}
            ReorderRule::SwapAdjacent => {
                for chunk in tokens.chunks_mut(2) {
                    chunk.reverse();
                }
            }
            ReorderRule::ReverseWindow => {
                for chunk in tokens.chunks_mut(REVERSE_WINDOW) {
                    chunk.reverse();
                }
            }
        }
    }
}

impl fmt::Display for ReorderRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReorderRule::None => "none",
            ReorderRule::SwapAdjacent => "swap-adjacent",
            ReorderRule::ReverseWindow => "reverse-window",
        })
    }
}

impl FromStr for ReorderRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(ReorderRule::None),
            "swap-adjacent" => Ok(ReorderRule::SwapAdjacent),
            "reverse-window" => Ok(ReorderRule::ReverseWindow),
            other => Err(Error::validation(
                "reorder_rule",
                format!("expected none, swap-adjacent or reverse-window, got {other:?}"),
            )),
        }
    }
}

/// Parameters of one synthetic translation domain.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainSpec {
    pub seed: u64,
    /// Number of source word types (and of base-lexicon target words).
    pub vocab_size: usize,
    /// Share of source words whose translation is replaced by a
    /// domain-specific target word.
    pub domain_lexicon_fraction: f64,
    pub reorder_rule: ReorderRule,
    pub length_range: (usize, usize),
    pub size: usize,
}

/// Largest supported `vocab_size`.
pub const MAX_SYNTHETIC_VOCAB: usize = 10_000;

impl DomainSpec {
    /// Desk-scale general-domain defaults: base lexicon only, 50k pairs.
    pub fn general(seed: u64) -> Self {
        DomainSpec {
            seed,
            vocab_size: 100,
            domain_lexicon_fraction: 0.0,
            reorder_rule: ReorderRule::SwapAdjacent,
            length_range: (3, 8),
            size: 50_000,
        }
    }

    /// Desk-scale in-domain defaults: 30% lexicon shift, 2k pairs (25x
    /// smaller than the general domain).
    pub fn in_domain(seed: u64) -> Self {
        DomainSpec {
            domain_lexicon_fraction: 0.3,
            size: 2_000,
            ..DomainSpec::general(seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.vocab_size == 0 || self.vocab_size > MAX_SYNTHETIC_VOCAB {
            return Err(Error::validation(
                "vocab_size",
                format!("must be in 1..={MAX_SYNTHETIC_VOCAB}, got {}", self.vocab_size),
            ));
        }
        let f = self.domain_lexicon_fraction;
        if !(0.0..=1.0).contains(&f) {
            return Err(Error::validation(
                "domain_lexicon_fraction",
                format!("must be within [0, 1], got {f}"),
            ));
        }
        let (min, max) = self.length_range;
        if min < 1 {
            return Err(Error::validation("length_range", "minimum length must be >= 1"));
        }
        if max < min {
            return Err(Error::validation(
                "length_range",
                format!("maximum {max} is below minimum {min}"),
            ));
        }
        if self.size < 1 {
            return Err(Error::validation("size", "corpus must contain at least one pair"));
        }
        Ok(())
    }
}

// Fixed seed for the lexicon shared by every domain of a given vocab size.
const BASE_LEXICON_SEED: u64 = 0x5EED_1E71_C0DE;
const STREAM_REMAP: u64 = 1;
const STREAM_SENTENCES: u64 = 2;

const SOURCE_CONSONANTS: &[char] = &['b', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v'];
const TARGET_CONSONANTS: &[char] = &['c', 'h', 'j', 'q', 'w', 'x', 'y', 'z'];
const VOWELS: &[char] = &['a', 'e', 'i', 'o', 'u'];

fn draw_word(rng: &mut ChaCha8Rng, consonants: &[char]) -> String {
    let syllables = rng.gen_range(1..=3);
    let mut w = String::with_capacity(syllables * 2);
    for _ in 0..syllables {
        w.push(consonants[rng.gen_range(0..consonants.len())]);
        w.push(VOWELS[rng.gen_range(0..VOWELS.len())]);
    }
    w
}

fn draw_distinct(
    rng: &mut ChaCha8Rng,
    consonants: &[char],
    n: usize,
    taken: &mut std::collections::HashSet<String>,
) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w = draw_word(rng, consonants);
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

/// A fully materialized synthetic domain: word lists plus the
/// source-index to target-word mapping.
#[derive(Clone, Debug)]
pub struct Domain {
    spec: DomainSpec,
    source_words: Vec<String>,
    translation: Vec<String>,
}

impl Domain {
    pub fn new(spec: &DomainSpec) -> Result<Self> {
        spec.validate()?;
        let v = spec.vocab_size;

        let mut rng = ChaCha8Rng::seed_from_u64(BASE_LEXICON_SEED);
        let mut taken = std::collections::HashSet::new();
        let source_words = draw_distinct(&mut rng, SOURCE_CONSONANTS, v, &mut taken);
        let base_targets = draw_distinct(&mut rng, TARGET_CONSONANTS, v, &mut taken);
        let pool = draw_distinct(&mut rng, TARGET_CONSONANTS, v, &mut taken);

        let mut translation = base_targets;
        let remapped = (spec.domain_lexicon_fraction * v as f64).round() as usize;
        if remapped > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(STREAM_REMAP);
            let mut words: Vec<usize> = (0..v).collect();
            words.shuffle(&mut rng);
            let mut slots: Vec<usize> = (0..v).collect();
            slots.shuffle(&mut rng);
            for (&w, &s) in words.iter().zip(&slots).take(remapped) {
                translation[w] = pool[s].clone();
            }
        }

        Ok(Domain {
            spec: spec.clone(),
            source_words,
            translation,
        })
    }

    pub fn spec(&self) -> &DomainSpec {
        &self.spec
    }

    pub fn source_words(&self) -> &[String] {
        &self.source_words
    }

    /// Target word for source word index `i`.
    pub fn translation_of(&self, i: usize) -> &str {
        &self.translation[i]
    }

    /// Lexical translation followed by the domain's reorder rule.
    pub fn translate(&self, source: &[usize]) -> Vec<String> {
        let mut out: Vec<String> = source.iter().map(|&i| self.translation[i].clone()).collect();
        self.spec.reorder_rule.apply(&mut out);
        out
    }

    /// Source sentences as word indices; depends only on seed, vocab size,
    /// length range and size.
    pub fn sample_sources(&self) -> Vec<Vec<usize>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.spec.seed);
        rng.set_stream(STREAM_SENTENCES);
        let (min, max) = self.spec.length_range;
        (0..self.spec.size)
            .map(|_| {
                let len = rng.gen_range(min..=max);
                (0..len).map(|_| rng.gen_range(0..self.spec.vocab_size)).collect()
            })
            .collect()
    }

    pub fn generate(&self) -> ParallelCorpus {
        let pairs = self
            .sample_sources()
            .into_iter()
            .map(|src| {
                let target = self.translate(&src);
                let source = src.iter().map(|&i| self.source_words[i].clone()).collect();
                SentencePair { source, target }
            })
            .collect();
        let s = &self.spec;
        let name = format!(
            "synth-s{}-v{}-f{}-{}",
            s.seed, s.vocab_size, s.domain_lexicon_fraction, s.reorder_rule
        );
        ParallelCorpus::new(name, Role::Train, pairs)
    }
}

/// Generates the corpus described by `spec`. Same spec, same corpus.
pub fn generate_domain(spec: &DomainSpec) -> Result<ParallelCorpus> {
    Ok(Domain::new(spec)?.generate())
}

/// Reads a line-aligned pair of files as a training corpus.
pub fn load_corpus(source_path: impl AsRef<Path>, target_path: impl AsRef<Path>) -> Result<ParallelCorpus> {
    load_corpus_as(source_path, target_path, Role::Train)
}

pub fn load_corpus_as(
    source_path: impl AsRef<Path>,
    target_path: impl AsRef<Path>,
    role: Role,
) -> Result<ParallelCorpus> {
    let (sp, tp) = (source_path.as_ref(), target_path.as_ref());
    let src = fs::read_to_string(sp).map_err(|e| Error::io(sp, e))?;
    let tgt = fs::read_to_string(tp).map_err(|e| Error::io(tp, e))?;
    let src_lines: Vec<&str> = src.lines().collect();
    let tgt_lines: Vec<&str> = tgt.lines().collect();
    if src_lines.len() != tgt_lines.len() {
        return Err(Error::Alignment {
            what: format!("line counts of {} and {}", sp.display(), tp.display()),
            left: src_lines.len(),
            right: tgt_lines.len(),
        });
    }
    let mut pairs = Vec::with_capacity(src_lines.len());
    for (i, (s, t)) in src_lines.iter().zip(&tgt_lines).enumerate() {
        let source = split_tokens(s);
        let target = split_tokens(t);
        if source.is_empty() {
            return Err(Error::format(sp, i + 1, "empty line"));
        }
        if target.is_empty() {
            return Err(Error::format(tp, i + 1, "empty line"));
        }
        pairs.push(SentencePair { source, target });
    }
    let name = sp
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "corpus".to_owned());
    Ok(ParallelCorpus::new(name, role, pairs))
}

/// Writes one sentence per line, tokens joined by a single space.
pub fn save_corpus(
    corpus: &ParallelCorpus,
    source_path: impl AsRef<Path>,
    target_path: impl AsRef<Path>,
) -> Result<()> {
    if corpus.is_empty() {
        return Err(Error::validation("corpus", "refusing to save an empty corpus"));
    }
    write_side(source_path.as_ref(), corpus.pairs.iter().map(|p| &p.source))?;
    write_side(target_path.as_ref(), corpus.pairs.iter().map(|p| &p.target))
}

fn write_side<'a>(path: &Path, lines: impl Iterator<Item = &'a Vec<String>>) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for tokens in lines {
        writeln!(w, "{}", tokens.join(" ")).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Carves the last `n_dev` pairs off as a development set.
pub fn split_dev(corpus: &ParallelCorpus, n_dev: usize) -> Result<(ParallelCorpus, ParallelCorpus)> {
    if n_dev == 0 || n_dev >= corpus.len() {
        return Err(Error::validation(
            "n_dev",
            format!("must be in 1..{}, got {n_dev}", corpus.len()),
        ));
    }
    let cut = corpus.len() - n_dev;
    let train = ParallelCorpus {
        role: Role::Train,
        ..corpus.derive(format!("{}.train", corpus.name), corpus.pairs[..cut].to_vec())
    };
    let dev = ParallelCorpus {
        role: Role::Dev,
        ..corpus.derive(format!("{}.dev", corpus.name), corpus.pairs[cut..].to_vec())
    };
    Ok((train, dev))
}

pub const META_HEADER: &str = "# seqkd corpus meta v1";

pub fn prefix_path(prefix: &Path, ext: &str) -> PathBuf {
    let mut s = prefix.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Saves `<prefix>.src`, `<prefix>.tgt` and the `<prefix>.meta` sidecar.
pub fn save_prefix(corpus: &ParallelCorpus, prefix: impl AsRef<Path>) -> Result<()> {
    let prefix = prefix.as_ref();
    save_corpus(corpus, prefix_path(prefix, "src"), prefix_path(prefix, "tgt"))?;
    let meta_path = prefix_path(prefix, "meta");
    let mut meta = format!(
        "{META_HEADER}\nname {}\nrole {}\nvocab {}\n",
        corpus.name,
        corpus.role,
        corpus.vocab_id.as_deref().unwrap_or("none")
    );
    match &corpus.origin {
        CorpusOrigin::Original => meta.push_str("origin original\n"),
        CorpusOrigin::Distilled {
            teacher_id,
            beam_size,
            original_id,
        } => meta.push_str(&format!(
            "origin distilled\nteacher {teacher_id}\nbeam {beam_size}\noriginal {original_id}\n"
        )),
    }
    meta.push_str(&format!("source_hash {}\n", corpus.source_id()));
    fs::write(&meta_path, meta).map_err(|e| Error::io(&meta_path, e))
}

/// Loads `<prefix>.src`/`<prefix>.tgt`, applying the `.meta` sidecar when
/// present. Without one the corpus is an original, word-level train split.
pub fn load_prefix(prefix: impl AsRef<Path>) -> Result<ParallelCorpus> {
    let prefix = prefix.as_ref();
    let mut corpus = load_corpus(prefix_path(prefix, "src"), prefix_path(prefix, "tgt"))?;
    let meta_path = prefix_path(prefix, "meta");
    if !meta_path.exists() {
        corpus.name = prefix
            .file_name()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or(corpus.name);
        return Ok(corpus);
    }
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == META_HEADER => {}
        _ => return Err(Error::format(&meta_path, 1, "missing version header")),
    }
    let (mut teacher, mut beam, mut original, mut distilled) = (None, None, None, false);
    for (i, line) in lines {
        let (key, value) = line
            .split_once(' ')
            .ok_or_else(|| Error::format(&meta_path, i + 1, "expected `key value`"))?;
        match key {
            "name" => corpus.name = value.to_owned(),
            "role" => corpus.role = value.parse()?,
            "vocab" => corpus.vocab_id = (value != "none").then(|| value.to_owned()),
            "origin" => distilled = value == "distilled",
            "teacher" => teacher = Some(value.to_owned()),
            "beam" => {
                beam = Some(
                    value
                        .parse()
                        .map_err(|_| Error::format(&meta_path, i + 1, "bad beam size"))?,
                )
            }
            "original" => original = Some(value.to_owned()),
            _ => {}
        }
    }
    if distilled {
        match (teacher, beam, original) {
            (Some(teacher_id), Some(beam_size), Some(original_id)) => {
                corpus.origin = CorpusOrigin::Distilled {
                    teacher_id,
                    beam_size,
                    original_id,
                }
            }
            _ => {
                return Err(Error::format(
                    &meta_path,
                    0,
                    "distilled corpus needs teacher, beam and original entries",
                ))
            }
        }
    }
    Ok(corpus)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        split_tokens(s)
    }

    fn tiny_spec() -> DomainSpec {
        DomainSpec {
            seed: 7,
            vocab_size: 20,
            domain_lexicon_fraction: 0.0,
            reorder_rule: ReorderRule::None,
            length_range: (3, 3),
            size: 1,
        }
    }

    #[test]
    fn single_pair_is_base_lexicon_image() {
        let spec = tiny_spec();
        let domain = Domain::new(&spec).unwrap();
        let corpus = domain.generate();
        assert_eq!(corpus.len(), 1);
        let pair = &corpus.pairs()[0];
        assert_eq!(pair.source().len(), 3);
        assert_eq!(pair.target().len(), 3);
        for (s, t) in pair.source().iter().zip(pair.target()) {
            let idx = domain.source_words().iter().position(|w| w == s).unwrap();
            assert_eq!(t, domain.translation_of(idx));
        }
    }

    #[test]
    fn swap_adjacent_rule() {
        let mut v = words("a b c d");
        ReorderRule::SwapAdjacent.apply(&mut v);
        assert_eq!(v, words("b a d c"));
        let mut v = words("a b c d e");
        ReorderRule::SwapAdjacent.apply(&mut v);
        assert_eq!(v, words("b a d c e"));
        let mut v = words("a b c d e");
        ReorderRule::ReverseWindow.apply(&mut v);
        assert_eq!(v, words("c b a e d"));
    }

    #[test]
    fn swap_adjacent_generation_permutes_lexicon_images() {
        let spec = DomainSpec {
            reorder_rule: ReorderRule::SwapAdjacent,
            length_range: (4, 4),
            size: 5,
            ..tiny_spec()
        };
        let domain = Domain::new(&spec).unwrap();
        for (src, pair) in domain.sample_sources().iter().zip(domain.generate().pairs()) {
            let img: Vec<&str> = src.iter().map(|&i| domain.translation_of(i)).collect();
            let expect = [img[1], img[0], img[3], img[2]];
            assert_eq!(pair.target(), expect);
        }
    }

    #[test]
    fn invalid_specs_name_the_field() {
        let cases: Vec<(DomainSpec, &str)> = vec![
            (DomainSpec { domain_lexicon_fraction: 1.5, ..tiny_spec() }, "domain_lexicon_fraction"),
            (DomainSpec { length_range: (0, 3), ..tiny_spec() }, "length_range"),
            (DomainSpec { length_range: (4, 3), ..tiny_spec() }, "length_range"),
            (DomainSpec { size: 0, ..tiny_spec() }, "size"),
            (DomainSpec { vocab_size: 0, ..tiny_spec() }, "vocab_size"),
        ];
        for (spec, field) in cases {
            match generate_domain(&spec) {
                Err(Error::Validation { field: f, .. }) => assert_eq!(f, field),
                other => panic!("expected validation error for {field}, got {other:?}"),
            }
        }
    }

    #[test]
    fn lexicon_shift_agreement_is_about_seventy_percent() {
        let base = DomainSpec {
            seed: 11,
            vocab_size: 100,
            domain_lexicon_fraction: 0.0,
            reorder_rule: ReorderRule::SwapAdjacent,
            length_range: (3, 8),
            size: 3000,
        };
        let shifted = DomainSpec { domain_lexicon_fraction: 0.3, ..base.clone() };
        let a = generate_domain(&base).unwrap();
        let b = generate_domain(&shifted).unwrap();
        let (mut same, mut total) = (0usize, 0usize);
        for (pa, pb) in a.pairs().iter().zip(b.pairs()) {
            assert_eq!(pa.source(), pb.source());
            for (x, y) in pa.target().iter().zip(pb.target()) {
                total += 1;
                same += (x == y) as usize;
            }
        }
        let agreement = same as f64 / total as f64;
        assert!((agreement - 0.7).abs() < 0.03, "agreement {agreement}");
    }

    #[test]
    fn generation_is_deterministic() {
        let spec = DomainSpec::in_domain(3);
        let spec = DomainSpec { size: 200, ..spec };
        assert_eq!(generate_domain(&spec).unwrap(), generate_domain(&spec).unwrap());
        let other = DomainSpec { seed: 4, ..spec.clone() };
        assert_ne!(generate_domain(&spec).unwrap(), generate_domain(&other).unwrap());
    }

    #[test]
    fn generated_corpus_is_frozen() {
        // Frozen from a reference run; guards RNG or dependency drift.
        let spec = DomainSpec { size: 50, ..DomainSpec::in_domain(42) };
        let corpus = generate_domain(&spec).unwrap();
        assert_eq!(corpus.pairs()[0].source(), ["ruva", "tepeta", "ke", "boneku"]);
        assert_eq!(corpus.pairs()[0].target(), ["xeqe", "ca", "xowa", "xu"]);
        assert_eq!(corpus.id(), "7c4d396e66263d35");
    }

    #[test]
    fn split_dev_takes_the_tail() {
        let pairs: Vec<SentencePair> = (1..=100)
            .map(|i| SentencePair::from_text(&format!("s{i}"), &format!("t{i}")).unwrap())
            .collect();
        let corpus = ParallelCorpus::new("c", Role::Train, pairs.clone());
        let (train, dev) = split_dev(&corpus, 10).unwrap();
        assert_eq!(train.pairs(), &pairs[..90]);
        assert_eq!(dev.pairs(), &pairs[90..]);
        assert_eq!(dev.role(), Role::Dev);
        assert_eq!(train.role(), Role::Train);

        let (_, dev) = split_dev(&corpus, 1).unwrap();
        assert_eq!(dev.pairs(), &pairs[99..]);

        assert!(matches!(split_dev(&corpus, 100), Err(Error::Validation { .. })));
        assert!(matches!(split_dev(&corpus, 0), Err(Error::Validation { .. })));
    }

    #[test]
    fn save_writes_single_space_lines() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = ParallelCorpus::new(
            "c",
            Role::Train,
            vec![SentencePair::from_text("a  b", "x\ty").unwrap()],
        );
        let (s, t) = (dir.path().join("c.src"), dir.path().join("c.tgt"));
        save_corpus(&corpus, &s, &t).unwrap();
        assert_eq!(fs::read_to_string(&s).unwrap(), "a b\n");
        assert_eq!(fs::read_to_string(&t).unwrap(), "x y\n");
    }

    #[test]
    fn load_rejects_misaligned_and_empty_lines() {
        let dir = tempfile::tempdir().unwrap();
        let (s, t) = (dir.path().join("c.src"), dir.path().join("c.tgt"));
        fs::write(&s, "a\nb\nc\n").unwrap();
        fs::write(&t, "x\ny\nz\nw\n").unwrap();
        match load_corpus(&s, &t) {
            Err(Error::Alignment { left, right, .. }) => assert_eq!((left, right), (3, 4)),
            other => panic!("{other:?}"),
        }
        fs::write(&t, "x\n\nz\n").unwrap();
        match load_corpus(&s, &t) {
            Err(Error::Format { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
        fs::write(&t, "x\ny\nz\n").unwrap();
        let c = load_corpus(&s, &t).unwrap();
        assert_eq!(c.len(), 3);
        assert_eq!(c.pairs()[2].source(), ["c"]);
    }

    #[test]
    fn ten_thousand_pairs_make_ten_thousand_lines() {
        let dir = tempfile::tempdir().unwrap();
        let spec = DomainSpec { size: 10_000, ..DomainSpec::general(1) };
        let corpus = generate_domain(&spec).unwrap();
        let prefix = dir.path().join("gd");
        save_prefix(&corpus, &prefix).unwrap();
        for ext in ["src", "tgt"] {
            let text = fs::read_to_string(prefix_path(&prefix, ext)).unwrap();
            assert_eq!(text.lines().count(), 10_000);
        }
    }

    #[test]
    fn meta_sidecar_round_trips_provenance() {
        let dir = tempfile::tempdir().unwrap();
        let corpus = ParallelCorpus::new(
            "d",
            Role::Dev,
            vec![SentencePair::from_text("a b", "c").unwrap()],
        )
        .with_vocab(Some("v1".into()))
        .with_origin(CorpusOrigin::Distilled {
            teacher_id: "t".into(),
            beam_size: 10,
            original_id: "o".into(),
        });
        let prefix = dir.path().join("d");
        save_prefix(&corpus, &prefix).unwrap();
        assert_eq!(load_prefix(&prefix).unwrap(), corpus);
    }
}
