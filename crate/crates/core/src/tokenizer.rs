//! Subword vocabulary: greedy pair-merge training and longest-match encoding.
//!
//! Word-initial pieces carry the `▁` boundary marker, so decoding is a plain
//! concatenation followed by replacing markers with spaces.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Word-boundary marker prefixed to every word.
pub const WORD_MARKER: char = '▁';
/// Glyph emitted when decoding the unknown-token id.
pub const UNK_GLYPH: char = '\u{FFFD}';

const SPECIAL_NAMES: [&str; 5] = ["<blank>", "<pad>", "<s>", "</s>", "<unk>"];

/// Reserved token ids. They occupy the first five slots of every vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Specials {
    pub blank: u32,
    pub pad: u32,
    pub sos: u32,
    pub eos: u32,
    pub unk: u32,
}

impl Default for Specials {
    fn default() -> Self {
        Self {
            blank: 0,
            pad: 1,
            sos: 2,
            eos: 3,
            unk: 4,
        }
    }
}

const NUM_SPECIALS: usize = 5;

/// Token ids of one utterance, without sos/eos framing.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TokenSequence(pub Vec<u32>);

impl TokenSequence {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }
}

/// Immutable subword vocabulary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pieces: Vec<String>,
    specials: Specials,
    #[serde(skip)]
    index: HashMap<String, u32>,
    #[serde(skip)]
    max_piece_chars: usize,
}

impl Vocab {
    /// Builds a vocabulary from learned pieces; specials are prepended.
    pub fn from_pieces(learned: Vec<String>) -> Result<Self> {
        let mut pieces: Vec<String> = SPECIAL_NAMES.iter().map(|s| s.to_string()).collect();
        pieces.extend(learned);
        Self::assemble(pieces, Specials::default())
    }

    fn assemble(pieces: Vec<String>, specials: Specials) -> Result<Self> {
        let ids = [specials.blank, specials.pad, specials.sos, specials.eos, specials.unk];
        let distinct: BTreeSet<_> = ids.iter().collect();
        if distinct.len() != ids.len() || ids.iter().any(|&i| i as usize >= NUM_SPECIALS) {
            return Err(Error::Tokenizer("special ids must be distinct and below 5".into()));
        }
        let mut index = HashMap::with_capacity(pieces.len());
        for (i, p) in pieces.iter().enumerate().skip(NUM_SPECIALS) {
            if p.is_empty() || index.insert(p.clone(), i as u32).is_some() {
                return Err(Error::Tokenizer(format!("duplicate or empty piece {p:?}")));
            }
        }
        let max_piece_chars = pieces.iter().skip(NUM_SPECIALS).map(|p| p.chars().count()).max().unwrap_or(1);
        Ok(Self {
            pieces,
            specials,
            index,
            max_piece_chars,
        })
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn specials(&self) -> Specials {
        self.specials
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn id_of(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    /// Learned pieces (everything but the specials), in id order.
    pub fn learned(&self) -> &[String] {
        &self.pieces[NUM_SPECIALS..]
    }

    /// Greedy longest-match segmentation of each whitespace-separated word.
    pub fn encode(&self, text: &str) -> TokenSequence {
        let mut ids = Vec::new();
        for word in text.split_whitespace() {
            let chars: Vec<char> = std::iter::once(WORD_MARKER).chain(word.chars()).collect();
            let mut i = 0;
            while i < chars.len() {
                let longest = (1..=self.max_piece_chars.min(chars.len() - i)).rev().find_map(|n| {
                    let cand: String = chars[i..i + n].iter().collect();
                    self.index.get(&cand).map(|&id| (id, n))
                });
                match longest {
                    Some((id, n)) => {
                        ids.push(id);
                        i += n;
                    }
                    None => {
                        ids.push(self.specials.unk);
                        i += 1;
                    }
                }
            }
        }
        TokenSequence(ids)
    }

    /// Inverse of [`Vocab::encode`] for in-vocabulary text; unknown tokens
    /// become [`UNK_GLYPH`] and other specials are dropped.
    pub fn decode(&self, tokens: &TokenSequence) -> Result<String> {
        let mut s = String::new();
        for &id in tokens.ids() {
            if id as usize >= self.pieces.len() {
                return Err(Error::Tokenizer(format!(
                    "token id {id} out of range for vocabulary of {}",
                    self.pieces.len()
                )));
            }
            if id == self.specials.unk {
                s.push(UNK_GLYPH);
            } else if (id as usize) >= NUM_SPECIALS {
                s.push_str(&self.pieces[id as usize]);
            }
        }
        let spaced = s.replace(WORD_MARKER, " ");
        Ok(spaced.strip_prefix(' ').unwrap_or(&spaced).to_string())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        #[derive(Serialize)]
        struct Out<'a> {
            pieces: &'a [String],
            specials: BTreeMap<&'static str, u32>,
        }
        let s = self.specials;
        let specials = BTreeMap::from([
            ("blank", s.blank),
            ("pad", s.pad),
            ("sos", s.sos),
            ("eos", s.eos),
            ("unk", s.unk),
        ]);
        let json = serde_json::to_string_pretty(&Out {
            pieces: &self.pieces,
            specials,
        })?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        #[derive(Deserialize)]
        struct In {
            pieces: Vec<String>,
            specials: BTreeMap<String, u32>,
        }
        let raw: In = serde_json::from_str(&text)?;
        let get = |k: &str| {
            raw.specials
                .get(k)
                .copied()
                .ok_or_else(|| Error::Tokenizer(format!("vocabulary file lacks special {k:?}")))
        };
        let specials = Specials {
            blank: get("blank")?,
            pad: get("pad")?,
            sos: get("sos")?,
            eos: get("eos")?,
            unk: get("unk")?,
        };
        Self::assemble(raw.pieces, specials)
    }
}

/// Learns a pair-merge vocabulary of exactly `size` entries (specials included).
///
/// At each step the most frequent adjacent symbol pair (weighted by word
/// frequency) is merged; ties go to the lexicographically smallest pair.
pub fn train_vocab<S: AsRef<str>>(corpus: &[S], size: usize) -> Result<Vocab> {
    let mut word_freq: BTreeMap<String, u64> = BTreeMap::new();
    for line in corpus {
        for w in line.as_ref().split_whitespace() {
            *word_freq.entry(w.to_string()).or_default() += 1;
        }
    }
    if word_freq.is_empty() {
        return Err(Error::Tokenizer("training corpus is empty".into()));
    }
    let mut words: Vec<(Vec<String>, u64)> = word_freq
        .into_iter()
        .map(|(w, f)| {
            let syms = std::iter::once(WORD_MARKER).chain(w.chars()).map(String::from).collect();
            (syms, f)
        })
        .collect();
    let alphabet: BTreeSet<String> = words.iter().flat_map(|(s, _)| s.iter().cloned()).collect();
    let floor = alphabet.len() + NUM_SPECIALS;
    if size < floor {
        return Err(Error::Tokenizer(format!(
            "vocabulary size {size} is below the character floor {floor} ({} characters + {NUM_SPECIALS} specials)",
            alphabet.len()
        )));
    }
    let mut learned: Vec<String> = alphabet.into_iter().collect();
    let mut known: BTreeSet<String> = learned.iter().cloned().collect();
    while learned.len() + NUM_SPECIALS < size {
        let mut counts: BTreeMap<(&str, &str), u64> = BTreeMap::new();
        for (syms, f) in &words {
            for pair in syms.windows(2) {
                *counts.entry((pair[0].as_str(), pair[1].as_str())).or_default() += f;
            }
        }
        // BTreeMap iterates pairs in lexicographic order, so the first maximum wins ties.
        let best = counts
            .iter()
            .fold(None::<(&(&str, &str), u64)>, |acc, (pair, &c)| match acc {
                Some((_, bc)) if bc >= c => acc,
                _ => Some((pair, c)),
            })
            .map(|(p, _)| (p.0.to_string(), p.1.to_string()));
        let Some((a, b)) = best else {
            return Err(Error::Tokenizer(format!(
                "corpus supports at most {} pieces; requested {size}",
                learned.len() + NUM_SPECIALS
            )));
        };
        let merged = format!("{a}{b}");
        for (syms, _) in words.iter_mut() {
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == a && syms[i + 1] == b {
                    out.push(merged.clone());
                    i += 2;
                } else {
                    out.push(std::mem::take(&mut syms[i]));
                    i += 1;
                }
            }
            *syms = out;
        }
        if known.insert(merged.clone()) {
            learned.push(merged);
        }
    }
    Vocab::from_pieces(learned)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const SENTENCES: &[&str] = &[
        "the quick brown fox jumps over the lazy dog",
        "she sells sea shells by the sea shore",
        "a stitch in time saves nine",
        "the rain in spain stays mainly in the plain",
        "peter piper picked a peck of pickled peppers",
    ];

    #[test]
    fn learns_only_possible_merge() {
        // alphabet {▁, a} + 5 specials + 1 merge
        let v = train_vocab(&["aaaa"], 8).unwrap();
        assert_eq!(v.len(), 8);
        assert_eq!(v.learned().last().unwrap(), "aa");
    }

    #[test]
    fn empty_corpus_fails() {
        let empty: [&str; 0] = [];
        assert!(train_vocab(&empty, 10).is_err());
        assert!(train_vocab(&["   "], 10).is_err());
    }

    #[test]
    fn size_below_floor_names_floor() {
        let err = train_vocab(&["abc"], 6).unwrap_err();
        // ▁ a b c + 5 specials
        assert!(err.to_string().contains("character floor 9"), "{err}");
    }

    /// Independent first-merge oracle: count adjacent pairs over the raw
    /// token stream of every whitespace word.
    fn most_frequent_pair(lines: &[String]) -> String {
        let mut counts: HashMap<(char, char), u64> = HashMap::new();
        for line in lines {
            for w in line.split(' ').filter(|w| !w.is_empty()) {
                let cs: Vec<char> = format!("{WORD_MARKER}{w}").chars().collect();
                for p in cs.windows(2) {
                    *counts.entry((p[0], p[1])).or_insert(0) += 1;
                }
            }
        }
        let max = *counts.values().max().unwrap();
        let mut best: Vec<(char, char)> = counts.into_iter().filter(|(_, c)| *c == max).map(|(p, _)| p).collect();
        best.sort_by(|x, y| x.0.to_string().cmp(&y.0.to_string()).then(x.1.to_string().cmp(&y.1.to_string())));
        format!("{}{}", best[0].0, best[0].1)
    }

    #[test]
    fn first_merge_matches_frequency_count() {
        let lines: Vec<String> = (0..100).map(|i| SENTENCES[i % SENTENCES.len()].to_string()).collect();
        let alphabet: BTreeSet<char> = lines.iter().flat_map(|l| l.chars()).filter(|c| *c != ' ').collect();
        let floor = alphabet.len() + 1 + NUM_SPECIALS;
        assert!(floor < 64);
        let v = train_vocab(&lines, 64).unwrap();
        assert_eq!(v.len(), 64);
        let first_merge = &v.learned()[floor - NUM_SPECIALS];
        assert_eq!(first_merge, &most_frequent_pair(&lines));
    }

    #[test]
    fn empty_text_round_trip() {
        let v = train_vocab(SENTENCES, 40).unwrap();
        let t = v.encode("");
        assert!(t.is_empty());
        assert_eq!(v.decode(&t).unwrap(), "");
    }

    #[test]
    fn unknown_characters_become_unk() {
        let v = train_vocab(SENTENCES, 40).unwrap();
        let t = v.encode("the fox Z");
        assert!(t.ids().contains(&v.specials().unk));
        assert_eq!(v.decode(&t).unwrap(), format!("the fox {UNK_GLYPH}"));
    }

    #[test]
    fn decode_rejects_out_of_range() {
        let v = train_vocab(SENTENCES, 40).unwrap();
        assert!(v.decode(&TokenSequence(vec![40])).is_err());
    }

    #[test]
    fn json_round_trip() {
        let v = train_vocab(SENTENCES, 50).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.json");
        v.save(&p).unwrap();
        let back = Vocab::load(&p).unwrap();
        assert_eq!(back.learned(), v.learned());
        assert_eq!(back.encode(SENTENCES[0]), v.encode(SENTENCES[0]));
    }

    fn corpus_words() -> Vec<&'static str> {
        SENTENCES.iter().flat_map(|s| s.split(' ')).collect()
    }

    proptest! {
        #[test]
        fn in_vocabulary_text_round_trips(idx in proptest::collection::vec(0usize..40, 0..12), size in 35usize..90) {
            let words = corpus_words();
            let v = train_vocab(SENTENCES, size.min(80)).unwrap();
            let text = idx.iter().map(|&i| words[i % words.len()]).collect::<Vec<_>>().join(" ");
            let t = v.encode(&text);
            prop_assert!(t.ids().iter().all(|&i| (i as usize) < v.len()));
            prop_assert_eq!(v.decode(&t).unwrap(), text);
        }

        #[test]
        fn segmentation_is_longest_match(idx in proptest::collection::vec(0usize..40, 1..6)) {
            let words = corpus_words();
            let v = train_vocab(SENTENCES, 70).unwrap();
            let text = idx.iter().map(|&i| words[i % words.len()]).collect::<Vec<_>>().join(" ");
            let ids = v.encode(&text);
            // rebuild the marked character stream and check no longer piece matched at any step
            let stream: Vec<char> = text.split(' ').flat_map(|w| std::iter::once(WORD_MARKER).chain(w.chars())).collect();
            let mut pos = 0;
            for &id in ids.ids() {
                let piece: Vec<char> = v.piece(id).unwrap().chars().collect();
                prop_assert_eq!(&stream[pos..pos + piece.len()], &piece[..]);
                let word_end = stream[pos + 1..].iter().position(|&c| c == WORD_MARKER).map_or(stream.len(), |p| pos + 1 + p);
                for n in piece.len() + 1..=word_end - pos {
                    let longer: String = stream[pos..pos + n].iter().collect();
                    prop_assert!(v.id_of(&longer).is_none(), "{longer} also matches");
                }
                pos += piece.len();
            }
            prop_assert_eq!(pos, stream.len());
        }
    }
}
