//! Corpus ingestion: character-level vocabulary, contiguous 90/10
//! train/validation split, binary token cache and batch sampling.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::Path;

use rand::Rng;
use thiserror::Error;

pub const TRAIN_FRACTION: f64 = 0.9;

pub const VOCAB_FILE: &str = "vocab.txt";
pub const TRAIN_FILE: &str = "train.bin";
pub const VAL_FILE: &str = "val.bin";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io: {0}")]
    Io(#[from] io::Error),
    #[error("corpus text is empty")]
    EmptyText,
    #[error("vocabulary of {0} characters exceeds the u16 cache format")]
    VocabTooLarge(usize),
    #[error("character {0:?} is not in the vocabulary")]
    UnknownChar(char),
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    IdOutOfRange { id: u16, vocab: usize },
    #[error("{split} split of {len} tokens is too short for block size {block}")]
    SplitTooShort {
        split: Split,
        len: usize,
        block: usize,
    },
    #[error("token cache at {0} is missing; run `prepare` first")]
    CacheMissing(String),
    #[error("token cache file {0} has an odd byte length")]
    CacheCorrupt(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

/// Sorted-unique-character tokenizer; ids are dense in `[0, vocab)`.
#[derive(Clone, Debug)]
pub struct CharTokenizer {
    chars: Vec<char>,
    index: HashMap<char, u16>,
}

impl CharTokenizer {
    /// Vocabulary = sorted unique characters of the full corpus.
    pub fn build_vocab(text: &str) -> Result<Self, DataError> {
        if text.is_empty() {
            return Err(DataError::EmptyText);
        }
        let mut chars: Vec<char> = text.chars().collect();
        chars.sort_unstable();
        chars.dedup();
        if chars.len() > u16::MAX as usize + 1 {
            return Err(DataError::VocabTooLarge(chars.len()));
        }
        Ok(Self::from_chars(chars))
    }

    fn from_chars(chars: Vec<char>) -> Self {
        let index = chars
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i as u16))
            .collect();
        CharTokenizer { chars, index }
    }

    pub fn vocab_size(&self) -> usize {
        self.chars.len()
    }

    pub fn chars(&self) -> &[char] {
        &self.chars
    }

    pub fn id_of(&self, c: char) -> Option<u16> {
        self.index.get(&c).copied()
    }

    pub fn newline_id(&self) -> Option<u16> {
        self.id_of('\n')
    }

    pub fn encode(&self, text: &str) -> Result<Vec<u16>, DataError> {
        text.chars()
            .map(|c| self.index.get(&c).copied().ok_or(DataError::UnknownChar(c)))
            .collect()
    }

    pub fn decode(&self, ids: &[u16]) -> Result<String, DataError> {
        ids.iter()
            .map(|&id| {
                self.chars
                    .get(id as usize)
                    .copied()
                    .ok_or(DataError::IdOutOfRange {
                        id,
                        vocab: self.chars.len(),
                    })
            })
            .collect()
    }

    /// The sidecar file is the vocabulary characters concatenated in id
    /// order (it may itself contain a newline character).
    pub fn save(&self, dir: &Path) -> Result<(), DataError> {
        let text: String = self.chars.iter().collect();
        fs::write(dir.join(VOCAB_FILE), text)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, DataError> {
        let path = dir.join(VOCAB_FILE);
        let text = fs::read_to_string(&path)
            .map_err(|_| DataError::CacheMissing(path.display().to_string()))?;
        if text.is_empty() {
            return Err(DataError::EmptyText);
        }
        Ok(Self::from_chars(text.chars().collect()))
    }
}

/// Encoded corpus, split 90/10 without shuffling so the boundary is
/// stable across runs.
#[derive(Clone, Debug)]
pub struct TokenStore {
    train: Vec<u16>,
    val: Vec<u16>,
}

impl TokenStore {
    pub fn from_ids(ids: Vec<u16>) -> Self {
        let cut = (ids.len() as f64 * TRAIN_FRACTION) as usize;
        let (train, val) = ids.split_at(cut);
        TokenStore {
            train: train.to_vec(),
            val: val.to_vec(),
        }
    }

    pub fn split(&self, split: Split) -> &[u16] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
        }
    }

    /// `batch` random windows: x = ids[o..o+block], y shifted one ahead.
    pub fn sample_batch<R: Rng>(
        &self,
        split: Split,
        block: usize,
        batch: usize,
        rng: &mut R,
    ) -> Result<(Vec<u32>, Vec<u32>), DataError> {
        let ids = self.split(split);
        if ids.len() <= block {
            return Err(DataError::SplitTooShort {
                split,
                len: ids.len(),
                block,
            });
        }
        let mut x = Vec::with_capacity(batch * block);
        let mut y = Vec::with_capacity(batch * block);
        for _ in 0..batch {
            let o = rng.random_range(0..=ids.len() - block - 1);
            x.extend(ids[o..o + block].iter().map(|&t| t as u32));
            y.extend(ids[o + 1..o + block + 1].iter().map(|&t| t as u32));
        }
        Ok((x, y))
    }

    pub fn save(&self, dir: &Path) -> Result<(), DataError> {
        write_u16_le(&dir.join(TRAIN_FILE), &self.train)?;
        write_u16_le(&dir.join(VAL_FILE), &self.val)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, DataError> {
        Ok(TokenStore {
            train: read_u16_le(&dir.join(TRAIN_FILE))?,
            val: read_u16_le(&dir.join(VAL_FILE))?,
        })
    }
}

fn write_u16_le(path: &Path, ids: &[u16]) -> Result<(), DataError> {
    let mut bytes = Vec::with_capacity(ids.len() * 2);
    for &id in ids {
        bytes.extend_from_slice(&id.to_le_bytes());
    }
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

fn read_u16_le(path: &Path) -> Result<Vec<u16>, DataError> {
    let bytes =
        fs::read(path).map_err(|_| DataError::CacheMissing(path.display().to_string()))?;
    if bytes.len() % 2 != 0 {
        return Err(DataError::CacheCorrupt(path.display().to_string()));
    }
    Ok(bytes
        .chunks_exact(2)
        .map(|c| u16::from_le_bytes([c[0], c[1]]))
        .collect())
}

/// Tokenize a corpus and write the vocabulary sidecar plus the u16
/// little-endian token caches into `out_dir`.
pub fn prepare(text: &str, out_dir: &Path) -> Result<(CharTokenizer, TokenStore), DataError> {
    let tokenizer = CharTokenizer::build_vocab(text)?;
    let ids = tokenizer.encode(text)?;
    let store = TokenStore::from_ids(ids);
    fs::create_dir_all(out_dir)?;
    tokenizer.save(out_dir)?;
    store.save(out_dir)?;
    Ok((tokenizer, store))
}

/// Read back what [`prepare`] wrote.
pub fn load_prepared(dir: &Path) -> Result<(CharTokenizer, TokenStore), DataError> {
    Ok((CharTokenizer::load(dir)?, TokenStore::load(dir)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn vocab_is_sorted_unique() {
        let tok = CharTokenizer::build_vocab("abcba").unwrap();
        assert_eq!(tok.vocab_size(), 3);
        assert_eq!(tok.chars(), &['a', 'b', 'c']);
        assert!(CharTokenizer::build_vocab("").is_err());
    }

    #[test]
    fn encode_decode_round_trip() {
        let tok = CharTokenizer::build_vocab("hello world\n").unwrap();
        let ids = tok.encode("hello").unwrap();
        assert_eq!(tok.decode(&ids).unwrap(), "hello");
        assert!(matches!(
            tok.encode("hello!"),
            Err(DataError::UnknownChar('!'))
        ));
        assert!(tok.decode(&[200]).is_err());
    }

    #[test]
    fn split_concat_reproduces_corpus() {
        let text: String = ('a'..='z').cycle().take(1000).collect();
        let tok = CharTokenizer::build_vocab(&text).unwrap();
        let ids = tok.encode(&text).unwrap();
        let store = TokenStore::from_ids(ids.clone());
        assert_eq!(store.split(Split::Train).len(), 900);
        let mut joined = store.split(Split::Train).to_vec();
        joined.extend_from_slice(store.split(Split::Val));
        assert_eq!(joined, ids);
    }

    #[test]
    fn batches_are_next_token_shifted_and_deterministic() {
        let text: String = ('a'..='z').cycle().take(500).collect();
        let tok = CharTokenizer::build_vocab(&text).unwrap();
        let store = TokenStore::from_ids(tok.encode(&text).unwrap());

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (x, y) = store.sample_batch(Split::Train, 8, 4, &mut rng).unwrap();
        let train = store.split(Split::Train);
        for row in 0..4 {
            for j in 0..7 {
                assert_eq!(x[row * 8 + j + 1], y[row * 8 + j]);
            }
            // the trailing target continues the corpus window
            let x0 = x[row * 8] as u16;
            let offset = train
                .windows(8)
                .position(|w| {
                    w.iter()
                        .zip(&x[row * 8..row * 8 + 8])
                        .all(|(&a, &b)| a as u32 == b)
                        && w[0] == x0
                })
                .unwrap();
            assert_eq!(y[row * 8 + 7] as u16, train[offset + 8]);
        }

        let mut rng2 = ChaCha8Rng::seed_from_u64(5);
        let again = store.sample_batch(Split::Train, 8, 4, &mut rng2).unwrap();
        assert_eq!((x, y), again);
    }

    #[test]
    fn short_split_is_rejected() {
        let store = TokenStore::from_ids(vec![0, 1, 2, 3, 4, 5, 6, 7, 8, 9]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(
            store.sample_batch(Split::Val, 8, 1, &mut rng),
            Err(DataError::SplitTooShort { .. })
        ));
    }

    #[test]
    fn offsets_are_uniform_within_three_sigma() {
        // chi-square style sanity: 10k offsets over a 1000-token split,
        // 10 buckets, expected 1000 each, sigma = sqrt(n p (1-p)) = 30
        let ids: Vec<u16> = (0..1112u16).collect();
        let store = TokenStore::from_ids(ids); // train = 1000 tokens
        assert_eq!(store.split(Split::Train).len(), 1000);
        let block = 8;
        let hi = 1000 - block - 1; // max offset, inclusive
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let mut buckets = [0u32; 10];
        for _ in 0..10_000 {
            let (x, _) = store.sample_batch(Split::Train, block, 1, &mut rng).unwrap();
            let train = store.split(Split::Train);
            // recover the offset from the first token's position window
            let first = x[0] as u16;
            let mut offset = first as usize;
            // ids are 0..1112 in order, so offset == first token value
            assert_eq!(train[offset], first);
            offset = offset.min(hi);
            buckets[offset * 10 / (hi + 1)] += 1;
        }
        for (i, &count) in buckets.iter().enumerate() {
            assert!(
                (count as i64 - 1000).abs() <= 90,
                "bucket {i} has {count} hits"
            );
        }
    }

    #[test]
    fn cache_round_trip_and_corruption() {
        let dir = tempfile::tempdir().unwrap();
        let text = "the quick brown fox jumps over the lazy dog. ".repeat(20);
        let (tok, store) = prepare(&text, dir.path()).unwrap();
        let (tok2, store2) = load_prepared(dir.path()).unwrap();
        assert_eq!(tok.chars(), tok2.chars());
        assert_eq!(store.split(Split::Train), store2.split(Split::Train));
        assert_eq!(store.split(Split::Val), store2.split(Split::Val));

        // decoding any sampled batch yields substrings of the corpus
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let (x, _) = store2.sample_batch(Split::Train, 16, 4, &mut rng).unwrap();
        for row in x.chunks(16) {
            let ids: Vec<u16> = row.iter().map(|&t| t as u16).collect();
            let s = tok2.decode(&ids).unwrap();
            assert!(text.contains(&s), "batch row {s:?} not in corpus");
        }

        // odd-length cache file is corrupt
        let path = dir.path().join(TRAIN_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes.pop();
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            TokenStore::load(dir.path()),
            Err(DataError::CacheCorrupt(_))
        ));
    }
}
