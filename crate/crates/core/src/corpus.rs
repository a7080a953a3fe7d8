//! Tokenization, dictionary encoding and file-boundary separators.
//!
//! Every distinct word gets a dense code in first-appearance order. After the
//! word codes come the separator codes, one per file, so a symbol stream for
//! `F` files over a vocabulary of `V` words uses the codes `[0, V + F)`.

use std::borrow::Cow;
use std::io::{self, Write};

use rayon::prelude::*;
use rustc_hash::FxHashMap;
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::Symbol;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("corpus has no input files")]
    NoFiles,
    #[error("corpus contains no tokens")]
    EmptyCorpus,
    #[error("malformed symbol stream: code {code} is not below {n_terminals}")]
    MalformedStream { code: Symbol, n_terminals: u32 },
    #[error("duplicate word {0:?} in dictionary")]
    DuplicateWord(String),
    #[error("vocabulary exceeds the 32-bit code space")]
    CodeSpaceExhausted,
}

/// How raw text is turned into tokens.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Tokenizer {
    /// Apply NFC normalization and lowercasing before splitting.
    pub lowercase: bool,
}

impl Tokenizer {
    pub fn new(lowercase: bool) -> Self {
        Self { lowercase }
    }

    /// Normalizes a whole document once so tokens can borrow from it.
    pub fn prepare<'a>(&self, text: &'a str) -> Cow<'a, str> {
        if self.lowercase {
            Cow::Owned(text.nfc().collect::<String>().to_lowercase())
        } else {
            Cow::Borrowed(text)
        }
    }

    /// Tokens are maximal runs of non-whitespace characters.
    pub fn tokens<'a>(&self, prepared: &'a str) -> std::str::SplitWhitespace<'a> {
        prepared.split_whitespace()
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let prepared = self.prepare(text);
        self.tokens(&prepared).map(str::to_owned).collect()
    }
}

/// Split of the terminal code range into words and separators.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SymbolSpace {
    pub words: u32,
    pub separators: u32,
}

impl SymbolSpace {
    pub fn new(words: u32, separators: u32) -> Self {
        Self { words, separators }
    }

    /// `N`: every terminal code is below this; rule ids start here.
    pub fn n_terminals(&self) -> u32 {
        self.words + self.separators
    }

    pub fn is_word(&self, code: Symbol) -> bool {
        code < self.words
    }

    pub fn is_separator(&self, code: Symbol) -> bool {
        code >= self.words && code < self.n_terminals()
    }

    pub fn is_terminal(&self, code: Symbol) -> bool {
        code < self.n_terminals()
    }

    pub fn separator(&self, unit: u32) -> Symbol {
        debug_assert!(unit < self.separators);
        self.words + unit
    }
}

/// Bijective word/code table plus a count of reserved separator codes.
#[derive(Debug, Clone, Default)]
pub struct Dictionary {
    words: Vec<String>,
    index: FxHashMap<String, Symbol>,
    separator_count: u32,
}

impl PartialEq for Dictionary {
    fn eq(&self, other: &Self) -> bool {
        self.words == other.words && self.separator_count == other.separator_count
    }
}

impl Eq for Dictionary {}

impl Dictionary {
    /// Builds a dictionary from words already in code order.
    pub fn from_words(words: Vec<String>, separator_count: u32) -> Result<Self, CorpusError> {
        if u32::try_from(words.len()).ok().and_then(|w| w.checked_add(separator_count)).is_none() {
            return Err(CorpusError::CodeSpaceExhausted);
        }
        let mut index = FxHashMap::default();
        index.reserve(words.len());
        for (code, word) in words.iter().enumerate() {
            if index.insert(word.clone(), code as Symbol).is_some() {
                return Err(CorpusError::DuplicateWord(word.clone()));
            }
        }
        Ok(Self { words, index, separator_count })
    }

    /// Same words with a different number of separator codes.
    pub fn with_separators(&self, separator_count: u32) -> Self {
        Self { words: self.words.clone(), index: self.index.clone(), separator_count }
    }

    pub fn word_count(&self) -> u32 {
        self.words.len() as u32
    }

    pub fn separator_count(&self) -> u32 {
        self.separator_count
    }

    pub fn n_terminals(&self) -> u32 {
        self.word_count() + self.separator_count
    }

    pub fn space(&self) -> SymbolSpace {
        SymbolSpace::new(self.word_count(), self.separator_count)
    }

    pub fn code(&self, word: &str) -> Option<Symbol> {
        self.index.get(word).copied()
    }

    pub fn word(&self, code: Symbol) -> Option<&str> {
        self.words.get(code as usize).map(String::as_str)
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn is_separator(&self, code: Symbol) -> bool {
        self.space().is_separator(code)
    }

    /// Writes `code<TAB>word` lines in code order.
    pub fn write_dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        for (code, word) in self.words.iter().enumerate() {
            writeln!(out, "{code}\t{word}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileEntry {
    pub name: String,
    pub token_count: u64,
    pub separator: Symbol,
}

/// The coded corpus: file contents, each followed by its separator.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncodedCorpus {
    pub symbols: Vec<Symbol>,
    pub files: Vec<FileEntry>,
}

impl EncodedCorpus {
    pub fn total_tokens(&self) -> u64 {
        self.files.iter().map(|f| f.token_count).sum()
    }

    /// Token codes of each file, separators excluded.
    pub fn file_tokens(&self) -> Vec<&[Symbol]> {
        let mut out = Vec::with_capacity(self.files.len());
        let mut start = 0usize;
        for f in &self.files {
            let end = start + f.token_count as usize;
            out.push(&self.symbols[start..end]);
            start = end + 1;
        }
        out
    }
}

/// Tokenizes and codes an ordered list of `(name, text)` files.
pub fn encode_corpus<N, T>(files: &[(N, T)], tokenizer: Tokenizer) -> Result<(Dictionary, EncodedCorpus), CorpusError>
where
    N: AsRef<str> + Sync,
    T: AsRef<str> + Sync,
{
    if files.is_empty() {
        return Err(CorpusError::NoFiles);
    }
    let prepared: Vec<Cow<'_, str>> = files.par_iter().map(|(_, text)| tokenizer.prepare(text.as_ref())).collect();

    let mut words: Vec<String> = Vec::new();
    let mut index: FxHashMap<&str, Symbol> = FxHashMap::default();
    let mut coded: Vec<Vec<Symbol>> = Vec::with_capacity(files.len());
    for text in &prepared {
        let mut codes = Vec::new();
        for token in tokenizer.tokens(text) {
            let next = index.len() as Symbol;
            let code = *index.entry(token).or_insert_with(|| {
                words.push(token.to_owned());
                next
            });
            codes.push(code);
        }
        coded.push(codes);
    }
    if coded.iter().all(Vec::is_empty) {
        return Err(CorpusError::EmptyCorpus);
    }
    drop(index);

    let file_count = u32::try_from(files.len()).map_err(|_| CorpusError::CodeSpaceExhausted)?;
    let dict = Dictionary::from_words(words, file_count)?;
    let space = dict.space();
    let total: usize = coded.iter().map(Vec::len).sum::<usize>() + files.len();
    let mut symbols = Vec::with_capacity(total);
    let mut table = Vec::with_capacity(files.len());
    for (i, ((name, _), codes)) in files.iter().zip(&coded).enumerate() {
        symbols.extend_from_slice(codes);
        let separator = space.separator(i as u32);
        symbols.push(separator);
        table.push(FileEntry { name: name.as_ref().to_owned(), token_count: codes.len() as u64, separator });
    }
    Ok((dict, EncodedCorpus { symbols, files: table }))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedFile<'a> {
    pub index: usize,
    pub tokens: Vec<&'a str>,
}

/// Splits a symbol stream at separators and decodes word codes.
///
/// The file index is taken from the separator code. Tokens after the last
/// separator form one more file numbered after the previous one.
pub fn decode<'d>(symbols: &[Symbol], dict: &'d Dictionary) -> Result<Vec<DecodedFile<'d>>, CorpusError> {
    let space = dict.space();
    let mut out = Vec::new();
    let mut current = Vec::new();
    let mut next_index = 0usize;
    for &code in symbols {
        if space.is_word(code) {
            current.push(dict.words[code as usize].as_str());
        } else if space.is_separator(code) {
            let index = (code - space.words) as usize;
            out.push(DecodedFile { index, tokens: std::mem::take(&mut current) });
            next_index = index + 1;
        } else {
            return Err(CorpusError::MalformedStream { code, n_terminals: space.n_terminals() });
        }
    }
    if !current.is_empty() {
        out.push(DecodedFile { index: next_index, tokens: current });
    }
    Ok(out)
}
