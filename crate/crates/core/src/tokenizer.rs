//! Byte-pair-encoding subword model shared by every corpus in an experiment.
//!
//! Words are split into characters and the last character carries the
//! [`END_OF_WORD`] marker, so `ab` starts out as `a b</w>`. Merges are
//! learned greedily by pair frequency; ties go to the lexicographically
//! smallest pair.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs;
use std::path::Path;

use crate::corpus::{ParallelCorpus, Role, SentencePair};
use crate::error::{Error, Result};
use crate::hash::ContentHasher;

pub const END_OF_WORD: &str = "</w>";

/// Reserved ids present at the start of every vocabulary.
pub struct SpecialTokens;

impl SpecialTokens {
    pub const BOS: u32 = 0;
    pub const EOS: u32 = 1;
    pub const PAD: u32 = 2;
    pub const UNK: u32 = 3;
    pub const COUNT: usize = 4;
    pub const SURFACES: [&'static str; 4] = ["<s>", "</s>", "<pad>", "<unk>"];
    pub const UNK_SURFACE: &'static str = "<unk>";
}

pub const MERGE_FILE_HEADER: &str = "#seqkd-bpe v1";

/// Default number of merges for the synthetic corpora.
pub const DESK_NUM_MERGES: usize = 200;
/// Default at real-data scale.
pub const FULL_SCALE_NUM_MERGES: usize = 30_000;

/// Token strings indexed by id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    fn from_tokens(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary { tokens, index }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    /// Maps a subword to its id; any unknown piece (including the word-final
    /// unk form) becomes [`SpecialTokens::UNK`].
    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(SpecialTokens::UNK)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_owned()).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    alphabet: Vec<char>,
    vocab: Vocabulary,
    ranks: HashMap<(String, String), usize>,
    id: String,
}

fn initial_symbols(word: &str) -> Vec<String> {
    let n = word.chars().count();
    word.chars()
        .enumerate()
        .map(|(i, c)| {
            if i + 1 == n {
                format!("{c}{END_OF_WORD}")
            } else {
                c.to_string()
            }
        })
        .collect()
}

impl BpeModel {
    fn from_parts(alphabet: Vec<char>, merges: Vec<(String, String)>) -> Self {
        let mut tokens: Vec<String> = SpecialTokens::SURFACES.iter().map(|s| s.to_string()).collect();
        for c in &alphabet {
            tokens.push(c.to_string());
            tokens.push(format!("{c}{END_OF_WORD}"));
        }
        let mut seen: HashSet<String> = tokens.iter().cloned().collect();
        for (l, r) in &merges {
            let joined = format!("{l}{r}");
            if seen.insert(joined.clone()) {
                tokens.push(joined);
            }
        }
        let ranks = merges
            .iter()
            .enumerate()
            .map(|(i, m)| (m.clone(), i))
            .collect();
        let mut h = ContentHasher::new("bpe");
        for c in &alphabet {
            h.str(&c.to_string());
        }
        for (l, r) in &merges {
            h.str(l).str(r);
        }
        BpeModel {
            merges,
            alphabet,
            vocab: Vocabulary::from_tokens(tokens),
            ranks,
            id: h.finish(),
        }
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn alphabet(&self) -> &[char] {
        &self.alphabet
    }

    /// Full vocabulary including the four special tokens.
    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    /// Number of subword entries, excluding special tokens.
    pub fn num_subwords(&self) -> usize {
        self.vocab.len() - SpecialTokens::COUNT
    }

    /// Segments one word. Pieces made of characters never seen at learn time
    /// become `<unk>` (or `<unk></w>` at the end of the word).
    pub fn encode_word(&self, word: &str) -> Vec<String> {
        let mut symbols = initial_symbols(word);
        loop {
            let best = symbols
                .windows(2)
                .enumerate()
                .filter_map(|(i, w)| {
                    self.ranks
                        .get(&(w[0].clone(), w[1].clone()))
                        .map(|&r| (r, i))
                })
                .min();
            let Some((rank, _)) = best else { break };
            let (l, r) = &self.merges[rank];
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && &symbols[i] == l && &symbols[i + 1] == r {
                    merged.push(format!("{l}{r}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            symbols = merged;
        }
        for s in symbols.iter_mut() {
            if !self.vocab.contains(s) {
                *s = if s.ends_with(END_OF_WORD) {
                    format!("{}{END_OF_WORD}", SpecialTokens::UNK_SURFACE)
                } else {
                    SpecialTokens::UNK_SURFACE.to_owned()
                };
            }
        }
        symbols
    }

    pub fn encode_sentence(&self, words: &[String], cache: &mut HashMap<String, Vec<String>>) -> Vec<String> {
        let mut out = Vec::with_capacity(words.len() * 2);
        for w in words {
            if let Some(seg) = cache.get(w) {
                out.extend(seg.iter().cloned());
            } else {
                let seg = self.encode_word(w);
                out.extend(seg.iter().cloned());
                cache.insert(w.clone(), seg);
            }
        }
        out
    }

    /// Serializes in merge-file format: a header line carrying the alphabet,
    /// then one `left right` merge per line in learned order.
    pub fn to_merge_file(&self) -> String {
        let mut s = String::new();
        s.push_str(MERGE_FILE_HEADER);
        s.push_str(" alphabet=");
        s.extend(self.alphabet.iter());
        s.push('\n');
        for (l, r) in &self.merges {
            s.push_str(l);
            s.push(' ');
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    pub fn from_merge_file(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines
            .next()
            .ok_or_else(|| Error::format(path, 1, "empty merge file"))?;
        let alphabet_str = header
            .strip_prefix(MERGE_FILE_HEADER)
            .and_then(|rest| rest.strip_prefix(" alphabet="))
            .ok_or_else(|| Error::format(path, 1, format!("expected `{MERGE_FILE_HEADER} alphabet=...`")))?;
        let alphabet: Vec<char> = alphabet_str.chars().collect();
        let mut merges = Vec::new();
        for (i, line) in lines.enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(l), Some(r), None) if !l.is_empty() && !r.is_empty() => {
                    merges.push((l.to_owned(), r.to_owned()))
                }
                _ => return Err(Error::format(path, i + 2, "expected `left right`")),
            }
        }
        Ok(BpeModel::from_parts(alphabet, merges))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_merge_file()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        BpeModel::from_merge_file(&text, path)
    }

    /// Fails unless `corpus` was encoded with this model.
    pub fn check_encoded(&self, corpus: &ParallelCorpus, what: &str) -> Result<()> {
        match corpus.vocab_id() {
            Some(id) if id == self.id => Ok(()),
            Some(id) => Err(Error::protocol(format!(
                "{what} is encoded with vocabulary {id}, expected {}",
                self.id
            ))),
            None => Err(Error::protocol(format!(
                "{what} is not BPE-encoded (expected vocabulary {})",
                self.id
            ))),
        }
    }
}

/// Learns `num_merges` merges from both sides of a general-domain training
/// corpus.
pub fn learn_bpe(corpus: &ParallelCorpus, num_merges: usize) -> Result<BpeModel> {
    if corpus.role() != Role::Train {
        return Err(Error::protocol(
            "BPE must be learned from general-domain training data, not a dev split",
        ));
    }
    if corpus.vocab_id().is_some() {
        return Err(Error::protocol("BPE must be learned from word-level text"));
    }
    let mut word_freq: BTreeMap<&str, u64> = BTreeMap::new();
    for p in corpus.pairs() {
        for w in p.source().iter().chain(p.target()) {
            *word_freq.entry(w.as_str()).or_default() += 1;
        }
    }
    let mut alphabet: Vec<char> = word_freq
        .keys()
        .flat_map(|w| w.chars())
        .collect::<HashSet<_>>()
        .into_iter()
        .collect();
    alphabet.sort_unstable();

    let mut words: Vec<(Vec<String>, u64)> = word_freq
        .iter()
        .map(|(w, &f)| (initial_symbols(w), f))
        .collect();
    let mut merges = Vec::with_capacity(num_merges);
    for _ in 0..num_merges {
        let mut counts: HashMap<(&str, &str), u64> = HashMap::new();
        for (syms, f) in &words {
            for w in syms.windows(2) {
                *counts.entry((w[0].as_str(), w[1].as_str())).or_default() += f;
            }
        }
        let Some(((l, r), _)) = counts
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| ca.cmp(cb).then_with(|| pb.cmp(pa)))
        else {
            break;
        };
        let (l, r) = (l.to_owned(), r.to_owned());
        for (syms, _) in words.iter_mut() {
            let mut i = 0;
            while i + 1 < syms.len() {
                if syms[i] == l && syms[i + 1] == r {
                    syms[i] = format!("{l}{r}");
                    syms.remove(i + 1);
                }
                i += 1;
            }
        }
        merges.push((l, r));
    }
    Ok(BpeModel::from_parts(alphabet, merges))
}

/// Segments every token on both sides of `corpus`.
pub fn apply_bpe(model: &BpeModel, corpus: &ParallelCorpus) -> Result<ParallelCorpus> {
    if corpus.vocab_id().is_some() {
        return Err(Error::protocol(format!(
            "corpus {} is already BPE-encoded",
            corpus.name()
        )));
    }
    let mut cache = HashMap::new();
    let pairs = corpus
        .pairs()
        .iter()
        .map(|p| {
            let s = model.encode_sentence(p.source(), &mut cache);
            let t = model.encode_sentence(p.target(), &mut cache);
            SentencePair::new(s, t)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(corpus
        .derive(corpus.name().to_owned(), pairs)
        .with_vocab(Some(model.id().to_owned())))
}

/// Joins subwords back into words: a piece ending in [`END_OF_WORD`] closes
/// the current word. A trailing piece without the marker still forms a word.
pub fn detokenize_tokens(tokens: &[String]) -> Vec<String> {
    let mut words = Vec::new();
    let mut current = String::new();
    for t in tokens {
        if let Some(stem) = t.strip_suffix(END_OF_WORD) {
            current.push_str(stem);
            words.push(std::mem::take(&mut current));
        } else {
            current.push_str(t);
        }
    }
    if !current.is_empty() {
        words.push(current);
    }
    words.retain(|w| !w.is_empty());
    words
}

/// Inverse of [`apply_bpe`] on text made of known characters.
pub fn detokenize(corpus: &ParallelCorpus) -> Result<ParallelCorpus> {
    let pairs = corpus
        .pairs()
        .iter()
        .map(|p| SentencePair::new(detokenize_tokens(p.source()), detokenize_tokens(p.target())))
        .collect::<Result<Vec<_>>>()?;
    Ok(corpus.derive(corpus.name().to_owned(), pairs).with_vocab(None))
}
