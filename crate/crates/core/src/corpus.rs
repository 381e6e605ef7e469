//! Parallel corpus ingestion, vocabularies and shuffled mini-batches.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const UNK: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const PAD: u32 = 3;
/// Number of reserved ids at the start of every vocabulary.
pub const NUM_RESERVED: u32 = 4;

pub const RESERVED_TOKENS: [&str; 4] = ["<unk>", "<s>", "</s>", "<pad>"];

/// An unordered set of vocabulary ids with deterministic iteration order.
pub type IdSet = BTreeSet<u32>;

pub fn is_reserved(id: u32) -> bool {
    id < NUM_RESERVED
}

/// Token to id map. Ids 0..4 are reserved; the rest are ordered by
/// descending corpus frequency, ties broken by first occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    frequency: Vec<u64>,
}

impl Vocabulary {
    fn reserved_only() -> Self {
        let tokens: Vec<String> = RESERVED_TOKENS.iter().map(|s| s.to_string()).collect();
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Vocabulary {
            tokens,
            index,
            frequency: vec![0; NUM_RESERVED as usize],
        }
    }

    /// Builds a vocabulary holding at most `max_size` entries, reserved
    /// symbols included.
    pub fn build<S, T>(sentences: S, max_size: usize) -> Result<Self>
    where
        S: IntoIterator<Item = T>,
        T: AsRef<[String]>,
    {
        if max_size < NUM_RESERVED as usize + 1 {
            return Err(Error::InvalidArgument(format!(
                "vocabulary max_size must be >= 5, got {max_size}"
            )));
        }
        // (count, first occurrence)
        let mut counts: HashMap<&str, (u64, usize)> = HashMap::new();
        let mut order = 0usize;
        let sentences: Vec<T> = sentences.into_iter().collect();
        for sentence in &sentences {
            for token in sentence.as_ref() {
                if RESERVED_TOKENS.contains(&token.as_str()) {
                    continue;
                }
                let entry = counts.entry(token.as_str()).or_insert_with(|| {
                    order += 1;
                    (0, order)
                });
                entry.0 += 1;
            }
        }
        let mut ranked: Vec<(&str, u64, usize)> =
            counts.into_iter().map(|(t, (c, o))| (t, c, o)).collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
        ranked.truncate(max_size - NUM_RESERVED as usize);

        let mut vocab = Vocabulary::reserved_only();
        for (token, count, _) in ranked {
            vocab.push(token.to_string(), count);
        }
        Ok(vocab)
    }

    fn push(&mut self, token: String, count: u64) {
        let id = self.tokens.len() as u32;
        self.index.insert(token.clone(), id);
        self.tokens.push(token);
        self.frequency.push(count);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: u32) -> &str {
        self.tokens
            .get(id as usize)
            .map(String::as_str)
            .unwrap_or(RESERVED_TOKENS[UNK as usize])
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn frequency(&self, id: u32) -> u64 {
        self.frequency.get(id as usize).copied().unwrap_or(0)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<T: AsRef<str>>(&self, tokens: &[T]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter().map(|&id| self.token(id).to_string()).collect()
    }

    /// V_x^T = T(n): the `n` most frequent real words plus the reserved ids.
    pub fn top_common_words(&self, n: usize) -> IdSet {
        let end = (NUM_RESERVED as usize + n).min(self.len()) as u32;
        (0..end).collect()
    }

    /// One token per line; line number is the id.
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for token in &self.tokens {
            writeln!(out, "{token}")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = std::io::BufWriter::new(file);
        self.write_to(&mut out)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))
    }

    /// Reads a vocabulary file. Frequencies are not stored in the file and
    /// come back as zero.
    pub fn read_from<R: BufRead>(reader: R) -> Result<Self> {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
            frequency: Vec::new(),
        };
        for (n, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Parse {
                line: n + 1,
                message: e.to_string(),
            })?;
            let token = line.trim_end_matches('\r');
            if n < NUM_RESERVED as usize {
                if token != RESERVED_TOKENS[n] {
                    return Err(Error::Parse {
                        line: n + 1,
                        message: format!(
                            "expected reserved token {:?}, found {token:?}",
                            RESERVED_TOKENS[n]
                        ),
                    });
                }
            } else if token.is_empty() || token.contains(char::is_whitespace) {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("invalid token {token:?}"),
                });
            } else if vocab.index.contains_key(token) {
                return Err(Error::Parse {
                    line: n + 1,
                    message: format!("duplicate token {token:?}"),
                });
            }
            vocab.push(token.to_string(), 0);
        }
        if vocab.len() < NUM_RESERVED as usize {
            return Err(Error::Parse {
                line: vocab.len() + 1,
                message: "vocabulary is missing reserved symbols".into(),
            });
        }
        Ok(vocab)
    }

    /// Vocabulary with exactly these tokens in id order; the first four
    /// must be the reserved symbols.
    pub fn from_tokens<S: AsRef<str>>(tokens: &[S]) -> Result<Self> {
        let text: String = tokens.iter().map(|t| format!("{}\n", t.as_ref())).collect();
        Self::read_from(text.as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub pair_id: usize,
    pub source: Vec<u32>,
    pub target: Vec<u32>,
}

/// Tokenized parallel text before indexing. `line_ids[k]` is the 0-based
/// input line of `source[k]`/`target[k]`.
#[derive(Debug, Clone, Default)]
pub struct ParallelText {
    pub source: Vec<Vec<String>>,
    pub target: Vec<Vec<String>>,
    pub line_ids: Vec<usize>,
    pub dropped: usize,
}

impl ParallelText {
    pub fn len(&self) -> usize {
        self.source.len()
    }

    pub fn is_empty(&self) -> bool {
        self.source.is_empty()
    }

    /// Maps both sides to ids; `pair_id` is the original line number.
    pub fn index(&self, src_vocab: &Vocabulary, tgt_vocab: &Vocabulary) -> Vec<SentencePair> {
        self.source
            .iter()
            .zip(&self.target)
            .zip(&self.line_ids)
            .map(|((s, t), &pair_id)| SentencePair {
                pair_id,
                source: src_vocab.encode(s),
                target: tgt_vocab.encode(t),
            })
            .collect()
    }
}

fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_string).collect()
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))
}

/// Reads a whitespace-tokenized, one-sentence-per-line text file.
pub fn load_monolingual(path: &Path) -> Result<Vec<Vec<String>>> {
    Ok(read_lines(path)?.iter().map(|l| tokenize(l)).collect())
}

/// Pairs up two line lists, dropping pairs with an empty side or a side
/// longer than `max_len`.
pub fn pair_lines<S: AsRef<str>, T: AsRef<str>>(
    source: &[S],
    target: &[T],
    max_len: usize,
) -> Result<ParallelText> {
    if source.len() != target.len() {
        return Err(Error::LineCountMismatch {
            source_lines: source.len(),
            target_lines: target.len(),
        });
    }
    let mut text = ParallelText::default();
    for (n, (s, t)) in source.iter().zip(target).enumerate() {
        let s = tokenize(s.as_ref());
        let t = tokenize(t.as_ref());
        if s.is_empty() || t.is_empty() || s.len() > max_len || t.len() > max_len {
            text.dropped += 1;
            continue;
        }
        text.source.push(s);
        text.target.push(t);
        text.line_ids.push(n);
    }
    Ok(text)
}

pub fn load_parallel(src_path: &Path, tgt_path: &Path, max_len: usize) -> Result<ParallelText> {
    let source = read_lines(src_path)?;
    let target = read_lines(tgt_path)?;
    pair_lines(&source, &target, max_len)
}

/// A shuffled epoch order split into batches of `batch_size` indices into
/// the pair list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub epoch_seed: u64,
    pub batch_size: usize,
    pub order: Vec<usize>,
}

impl BatchPlan {
    pub fn new(num_pairs: usize, batch_size: usize, epoch_seed: u64) -> Result<Self> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be >= 1".into()));
        }
        let mut order: Vec<usize> = (0..num_pairs).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed);
        order.shuffle(&mut rng);
        Ok(BatchPlan {
            epoch_seed,
            batch_size,
            order,
        })
    }

    pub fn batches(&self) -> impl Iterator<Item = &[usize]> {
        self.order.chunks(self.batch_size)
    }
}

/// Shuffles the pairs with `epoch_seed` and splits them into batches; the
/// last batch may be short.
pub fn make_batches<'a>(
    pairs: &'a [SentencePair],
    batch_size: usize,
    epoch_seed: u64,
) -> Result<Vec<Vec<&'a SentencePair>>> {
    let plan = BatchPlan::new(pairs.len(), batch_size, epoch_seed)?;
    Ok(plan
        .batches()
        .map(|batch| batch.iter().map(|&i| &pairs[i]).collect())
        .collect())
}
