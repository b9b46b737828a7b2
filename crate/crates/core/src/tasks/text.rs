use std::collections::HashMap;
use std::fs;
use std::path::Path;

use super::{Batch, TaskError, Vocab};

/// A character stream mapped to dense ids.
#[derive(Debug, Clone, PartialEq)]
pub struct TextCorpus {
    pub ids: Vec<usize>,
    pub vocab: Vocab,
}

impl TextCorpus {
    /// Builds the vocabulary from `text`, assigning ids by first occurrence.
    pub fn parse(text: &str) -> Result<Self, TaskError> {
        if text.is_empty() {
            return Err(TaskError::Format { offset: 0, reason: "empty corpus".into() });
        }
        let mut index: HashMap<char, usize> = HashMap::new();
        let mut symbols = Vec::new();
        let ids = text
            .chars()
            .map(|c| {
                *index.entry(c).or_insert_with(|| {
                    symbols.push(c.to_string());
                    symbols.len() - 1
                })
            })
            .collect();
        Ok(Self { ids, vocab: Vocab::new(symbols) })
    }

    /// Encodes `text` with this corpus's vocabulary. Unseen characters are
    /// a format error carrying their byte offset.
    pub fn encode(&self, text: &str) -> Result<Vec<usize>, TaskError> {
        if text.is_empty() {
            return Err(TaskError::Format { offset: 0, reason: "empty corpus".into() });
        }
        let index: HashMap<&str, usize> = self.vocab.symbols().iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
        let mut buf = [0u8; 4];
        text.char_indices()
            .map(|(offset, c)| {
                index.get(&*c.encode_utf8(&mut buf)).copied().ok_or_else(|| TaskError::Format {
                    offset,
                    reason: format!("character {c:?} is not in the training vocabulary"),
                })
            })
            .collect()
    }
}

fn read_text(path: &Path) -> Result<String, TaskError> {
    let bytes = fs::read(path).map_err(|e| TaskError::io(path, e))?;
    String::from_utf8(bytes).map_err(|e| TaskError::Format {
        offset: e.utf8_error().valid_up_to(),
        reason: "corpus is not valid UTF-8".into(),
    })
}

pub fn load_text_corpus(path: &Path) -> Result<TextCorpus, TaskError> {
    TextCorpus::parse(&read_text(path)?)
}

impl TextCorpus {
    /// Reads and encodes a held-out file with this vocabulary.
    pub fn load_split(&self, path: &Path) -> Result<Vec<usize>, TaskError> {
        self.encode(&read_text(path)?)
    }
}

/// Successive truncated-BPTT windows over `B` parallel streams.
///
/// The corpus is cut into `B` contiguous streams of `L = len / B` symbols;
/// window `w` feeds positions `[w·window, (w+1)·window)` of every stream
/// and targets the following symbol. Consecutive windows continue each
/// stream, so recurrent state can be carried across them.
#[derive(Debug, Clone)]
pub struct TbpttWindows<'a> {
    ids: &'a [usize],
    classes: usize,
    streams: usize,
    stream_len: usize,
    window: usize,
    next: usize,
}

pub fn iter_tbptt(ids: &[usize], classes: usize, batch: usize, window: usize) -> Result<TbpttWindows<'_>, TaskError> {
    if batch == 0 || window == 0 {
        return Err(TaskError::Config("batch and window must be at least 1".into()));
    }
    let stream_len = ids.len() / batch;
    if stream_len < window + 1 {
        return Err(TaskError::Config(format!(
            "corpus of {} symbols is too short for {batch} streams of window {window}",
            ids.len()
        )));
    }
    Ok(TbpttWindows { ids, classes, streams: batch, stream_len, window, next: 0 })
}

impl TbpttWindows<'_> {
    /// Windows per pass: `floor((len/B − 1) / window)`.
    pub fn num_windows(&self) -> usize {
        (self.stream_len - 1) / self.window
    }

    pub fn position(&self) -> usize {
        self.next
    }

    /// Skips ahead so that the next window returned is `w`.
    pub fn seek(&mut self, w: usize) {
        self.next = w;
    }

    pub fn window_batch(&self, w: usize) -> Result<Batch, TaskError> {
        let (b, win) = (self.streams, self.window);
        let mut inputs = Vec::with_capacity(win * b);
        let mut targets = Vec::with_capacity(win * b);
        for t in 0..win {
            for s in 0..b {
                let pos = s * self.stream_len + w * win + t;
                inputs.push(self.ids[pos]);
                targets.push(self.ids[pos + 1]);
            }
        }
        Batch::one_hot(win, b, self.classes, &inputs, targets, vec![true; win * b])
    }
}

impl Iterator for TbpttWindows<'_> {
    type Item = Result<Batch, TaskError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.num_windows() {
            return None;
        }
        let w = self.next;
        self.next += 1;
        Some(self.window_batch(w))
    }
}
