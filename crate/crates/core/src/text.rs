//! Captions as sequences of transmittable words, and the sender/receiver
//! bookkeeping built on top of them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PromptOrdering;

/// Largest number of words a sentence may hold. Word indices travel in a
/// single byte with `0xFF` reserved.
pub const MAX_WORDS: usize = 255;

/// Largest UTF-8 byte length of a single word (length prefix is one byte).
pub const MAX_WORD_BYTES: usize = 255;

const STRIP_CHARS: &[char] = &['.', ',', '!', '?', ';', ':', '"'];

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TextError {
    #[error("caption contains no transmittable words")]
    EmptyCaption,
    #[error("caption has {0} words, at most {MAX_WORDS} are supported")]
    TooManyWords(usize),
    #[error("word {word:?} is {len} bytes, at most {MAX_WORD_BYTES} are supported")]
    WordTooLong { word: String, len: usize },
    #[error("no words have been sent yet")]
    EmptyState,
    #[error("word index {index} out of range for a sentence of {len} words")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("word index {0} was already sent")]
    AlreadySent(usize),
}

/// One word of a caption together with its position in the source sentence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WordToken {
    pub text: String,
    pub index: usize,
}

/// A tokenized caption. Indices are always `0..len()` in order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    words: Vec<WordToken>,
    source_text: String,
}

impl Sentence {
    /// Builds a sentence from already-split words. Each word must be
    /// non-empty and whitespace-free.
    pub fn from_words<I, S>(words: I) -> Result<Self, TextError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let words: Vec<String> = words.into_iter().map(Into::into).collect();
        if words
            .iter()
            .any(|w| w.is_empty() || w.chars().any(char::is_whitespace))
        {
            return Err(TextError::EmptyCaption);
        }
        let source = words.join(" ");
        Self::from_parts(words, source)
    }

    fn from_parts(words: Vec<String>, source_text: String) -> Result<Self, TextError> {
        if words.is_empty() {
            return Err(TextError::EmptyCaption);
        }
        if words.len() > MAX_WORDS {
            return Err(TextError::TooManyWords(words.len()));
        }
        if let Some(w) = words.iter().find(|w| w.len() > MAX_WORD_BYTES) {
            return Err(TextError::WordTooLong {
                word: w.clone(),
                len: w.len(),
            });
        }
        let words = words
            .into_iter()
            .enumerate()
            .map(|(index, text)| WordToken { text, index })
            .collect();
        Ok(Self { words, source_text })
    }

    pub fn words(&self) -> &[WordToken] {
        &self.words
    }

    pub fn word(&self, index: usize) -> Option<&str> {
        self.words.get(index).map(|w| w.text.as_str())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    /// Always false for a constructed sentence; present for API symmetry.
    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn source_text(&self) -> &str {
        &self.source_text
    }

    /// Words joined by single spaces, in sentence order.
    pub fn joined(&self) -> String {
        self.words
            .iter()
            .map(|w| w.text.as_str())
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Splits a caption into words.
///
/// Whitespace runs separate words, leading and trailing `.,!?;:"` are
/// stripped from each word, words that become empty are dropped, and casing
/// is kept as-is.
pub fn tokenize(caption: &str) -> Result<Sentence, TextError> {
    let words: Vec<String> = caption
        .split_whitespace()
        .map(|w| w.trim_matches(STRIP_CHARS))
        .filter(|w| !w.is_empty())
        .map(str::to_owned)
        .collect();
    Sentence::from_parts(words, caption.to_owned())
}

/// Which words of a sentence have been transmitted, in transmission order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransmissionState {
    sentence: Sentence,
    sent: Vec<usize>,
}

impl TransmissionState {
    pub fn new(sentence: Sentence) -> Self {
        Self {
            sentence,
            sent: Vec::new(),
        }
    }

    /// Rebuilds a state from a transmission order, validating it.
    pub fn with_sent(sentence: Sentence, sent: Vec<usize>) -> Result<Self, TextError> {
        let mut state = Self::new(sentence);
        for index in sent {
            state.push(index)?;
        }
        Ok(state)
    }

    pub fn sentence(&self) -> &Sentence {
        &self.sentence
    }

    pub fn sent(&self) -> &[usize] {
        &self.sent
    }

    pub fn step(&self) -> usize {
        self.sent.len()
    }

    pub fn last_sent(&self) -> Option<usize> {
        self.sent.last().copied()
    }

    pub fn is_sent(&self, index: usize) -> bool {
        self.sent.contains(&index)
    }

    pub fn push(&mut self, index: usize) -> Result<(), TextError> {
        if index >= self.sentence.len() {
            return Err(TextError::IndexOutOfRange {
                index,
                len: self.sentence.len(),
            });
        }
        if self.is_sent(index) {
            return Err(TextError::AlreadySent(index));
        }
        self.sent.push(index);
        Ok(())
    }

    /// Returns a copy of this state with one more word sent.
    pub fn extended(&self, index: usize) -> Result<Self, TextError> {
        let mut next = self.clone();
        next.push(index)?;
        Ok(next)
    }

    /// Unsent indices in ascending order.
    pub fn remaining(&self) -> Vec<usize> {
        let mut mask = vec![false; self.sentence.len()];
        for &i in &self.sent {
            mask[i] = true;
        }
        mask.iter()
            .enumerate()
            .filter(|(_, &sent)| !sent)
            .map(|(i, _)| i)
            .collect()
    }

    /// The prompt the receiver assembles from the words received so far.
    pub fn compose_prompt(&self, ordering: PromptOrdering) -> Result<String, TextError> {
        if self.sent.is_empty() {
            return Err(TextError::EmptyState);
        }
        let mut order = self.sent.clone();
        if ordering == PromptOrdering::SentencePosition {
            order.sort_unstable();
        }
        let words: Vec<&str> = order
            .iter()
            .map(|&i| self.sentence.words[i].text.as_str())
            .collect();
        Ok(words.join(" "))
    }
}
