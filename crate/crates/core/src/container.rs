//! The `.tdoc` container: dictionary, file table and partition grammars.
//!
//! ```text
//! preamble (16 bytes, never compressed)
//!   0..4   magic "TDOC"
//!   4..6   format version, u16 LE
//!   6..8   flags, u16 LE (bit 0: payload is a raw DEFLATE stream)
//!   8..16  stored payload length in bytes, u64 LE
//! payload
//!   header      N, V, file table, feature block (F, W, V, rule count)
//!   dictionary  V, length-prefixed UTF-8 words, separator count
//!   grammars    partition count, then per partition its unit table and rules
//! ```
//!
//! All variable-width integers are unsigned LEB128. The full layout is in
//! `docs/format.md`.

use std::io::{self, Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;
use flate2::Compression;
use thiserror::Error;

use crate::corpus::{Dictionary, FileEntry, SymbolSpace};
use crate::sequitur::{Grammar, GrammarError};
use crate::Symbol;

pub const MAGIC: [u8; 4] = *b"TDOC";
pub const VERSION: u16 = 1;
pub const PREAMBLE_LEN: usize = 16;
const FLAG_DEFLATE: u16 = 1;

#[derive(Debug, Error)]
pub enum ContainerError {
    #[error("not a tdoc container (bad magic)")]
    BadMagic,
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("unknown container flags {0:#06x}")]
    UnknownFlags(u16),
    #[error("container is truncated")]
    Truncated,
    #[error("DEFLATE layer is corrupt: {0}")]
    Deflate(String),
    #[error("feature block mismatch for {field}: stored {stored}, payload has {actual}")]
    FeatureMismatch { field: &'static str, stored: u64, actual: u64 },
    #[error("malformed container: {0}")]
    Malformed(String),
    #[error("header inconsistent with payload: {0}")]
    InconsistentHeader(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl From<GrammarError> for ContainerError {
    fn from(e: GrammarError) -> Self {
        ContainerError::Malformed(e.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OuterLayer {
    None,
    #[default]
    Deflate,
}

/// Corpus features stored up front so they can be read without a DAG.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct FeatureBlock {
    pub file_count: u64,
    pub total_tokens: u64,
    pub vocabulary: u64,
    pub rule_count: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContainerHeader {
    pub version: u16,
    pub outer: OuterLayer,
    pub n_terminals: u32,
    pub word_count: u32,
    pub files: Vec<FileEntry>,
    pub features: FeatureBlock,
}

/// A file or a section of a split file, compressed in one partition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Unit {
    pub file: u32,
    /// Sequence number of the section within its file; 0 for whole files.
    pub section: u32,
    pub token_count: u64,
}

/// One independently inferred grammar and the units its root covers.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionGrammar {
    pub units: Vec<Unit>,
    pub grammar: Grammar,
}

/// Everything one `.tdoc` file holds.
///
/// Separator codes are global: the `j`-th unit over all partitions (in
/// partition order) ends with separator `V + j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Container {
    pub header: ContainerHeader,
    pub dictionary: Dictionary,
    pub partitions: Vec<PartitionGrammar>,
}

impl Container {
    /// Builds a container and derives its header from the payload.
    pub fn new(
        dictionary: Dictionary,
        files: Vec<FileEntry>,
        partitions: Vec<PartitionGrammar>,
    ) -> Result<Self, ContainerError> {
        let features = FeatureBlock {
            file_count: files.len() as u64,
            total_tokens: files.iter().map(|f| f.token_count).sum(),
            vocabulary: dictionary.word_count() as u64,
            rule_count: partitions.iter().map(|p| p.grammar.rules().len() as u64).sum(),
        };
        let header = ContainerHeader {
            version: VERSION,
            outer: OuterLayer::default(),
            n_terminals: dictionary.n_terminals(),
            word_count: dictionary.word_count(),
            files,
            features,
        };
        let c = Self { header, dictionary, partitions };
        c.verify().map_err(|e| match e {
            ContainerError::FeatureMismatch { .. } | ContainerError::Malformed(_) => {
                ContainerError::InconsistentHeader(e.to_string())
            }
            e => e,
        })?;
        Ok(c)
    }

    /// Single-partition container over whole files.
    pub fn single(dictionary: Dictionary, files: Vec<FileEntry>, grammar: Grammar) -> Result<Self, ContainerError> {
        let units = files
            .iter()
            .enumerate()
            .map(|(i, f)| Unit { file: i as u32, section: 0, token_count: f.token_count })
            .collect();
        Self::new(dictionary, files, vec![PartitionGrammar { units, grammar }])
    }

    pub fn space(&self) -> SymbolSpace {
        self.dictionary.space()
    }

    pub fn unit_count(&self) -> usize {
        self.partitions.iter().map(|p| p.units.len()).sum()
    }

    /// Global index of the first unit of every partition.
    pub fn unit_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.partitions
            .iter()
            .map(|p| {
                let o = acc;
                acc += p.units.len();
                o
            })
            .collect()
    }

    /// Checks header, dictionary and grammars against each other.
    pub fn verify(&self) -> Result<(), ContainerError> {
        let h = &self.header;
        let space = self.dictionary.space();
        let malformed = |m: String| Err(ContainerError::Malformed(m));
        if h.word_count != space.words || h.n_terminals != space.n_terminals() {
            return malformed(format!(
                "header declares N={} V={}, dictionary has N={} V={}",
                h.n_terminals,
                h.word_count,
                space.n_terminals(),
                space.words
            ));
        }
        if self.unit_count() != space.separators as usize {
            return malformed(format!("{} units but {} separator codes", self.unit_count(), space.separators));
        }

        let mut file_tokens = vec![0u64; h.files.len()];
        let mut sections: Vec<Vec<u32>> = vec![Vec::new(); h.files.len()];
        let mut expanded_tokens = 0u64;
        let mut rule_count = 0u64;
        let mut unit_base = 0u32;
        for (p, part) in self.partitions.iter().enumerate() {
            let g = &part.grammar;
            if g.space() != space {
                return malformed(format!("partition {p} uses a different symbol space"));
            }
            rule_count += g.rules().len() as u64;
            let lengths = g.expanded_lengths();
            let mut seg_len = 0u64;
            let mut unit = 0usize;
            for &s in g.root() {
                if space.is_separator(s) {
                    let expected = space.separator(unit_base + unit as u32);
                    if unit >= part.units.len() || s != expected {
                        return malformed(format!("partition {p}: unexpected separator {s}"));
                    }
                    if seg_len != part.units[unit].token_count {
                        return malformed(format!(
                            "partition {p} unit {unit}: {} tokens declared, {seg_len} stored",
                            part.units[unit].token_count
                        ));
                    }
                    seg_len = 0;
                    unit += 1;
                } else {
                    seg_len += g.rule_index(s).map_or(1, |c| lengths[c]);
                }
            }
            if unit != part.units.len() || seg_len != 0 {
                return malformed(format!("partition {p}: root does not end each unit with its separator"));
            }
            for (i, body) in g.rules().iter().enumerate().skip(1) {
                if body.iter().any(|&s| space.is_separator(s)) {
                    return malformed(format!("partition {p}: separator inside rule {i}"));
                }
            }
            for u in &part.units {
                let f = u.file as usize;
                if f >= h.files.len() {
                    return malformed(format!("partition {p}: bad unit {u:?}"));
                }
                sections[f].push(u.section);
                file_tokens[f] += u.token_count;
                expanded_tokens += u.token_count;
            }
            unit_base += part.units.len() as u32;
        }
        for (i, f) in h.files.iter().enumerate() {
            let s = &mut sections[i];
            s.sort_unstable();
            if s.is_empty() || s.iter().enumerate().any(|(k, &x)| x != k as u32) {
                return malformed(format!("file {i}: sections {s:?} are not 0..k"));
            }
            if file_tokens[i] != f.token_count {
                return malformed(format!("file {i} declares {} tokens, units hold {}", f.token_count, file_tokens[i]));
            }
        }

        let fb = &h.features;
        let checks = [
            ("file count", fb.file_count, h.files.len() as u64),
            ("total tokens", fb.total_tokens, expanded_tokens),
            ("vocabulary", fb.vocabulary, space.words as u64),
            ("rule count", fb.rule_count, rule_count),
        ];
        for (field, stored, actual) in checks {
            if stored != actual {
                return Err(ContainerError::FeatureMismatch { field, stored, actual });
            }
        }
        Ok(())
    }
}

fn put_varint(out: &mut Vec<u8>, mut v: u64) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

fn put_bytes(out: &mut Vec<u8>, b: &[u8]) {
    put_varint(out, b.len() as u64);
    out.extend_from_slice(b);
}

fn encode_payload(c: &Container) -> Vec<u8> {
    let mut out = Vec::new();
    let h = &c.header;
    put_varint(&mut out, h.n_terminals as u64);
    put_varint(&mut out, h.word_count as u64);
    put_varint(&mut out, h.files.len() as u64);
    for f in &h.files {
        put_bytes(&mut out, f.name.as_bytes());
        put_varint(&mut out, f.token_count);
        put_varint(&mut out, f.separator as u64);
    }
    let fb = &h.features;
    for v in [fb.file_count, fb.total_tokens, fb.vocabulary, fb.rule_count] {
        put_varint(&mut out, v);
    }

    put_varint(&mut out, c.dictionary.word_count() as u64);
    for w in c.dictionary.words() {
        put_bytes(&mut out, w.as_bytes());
    }
    put_varint(&mut out, c.dictionary.separator_count() as u64);

    put_varint(&mut out, c.partitions.len() as u64);
    for p in &c.partitions {
        put_varint(&mut out, p.units.len() as u64);
        for u in &p.units {
            put_varint(&mut out, u.file as u64);
            put_varint(&mut out, u.section as u64);
            put_varint(&mut out, u.token_count);
        }
        let rules = p.grammar.rules();
        put_varint(&mut out, rules.len() as u64);
        for body in rules {
            put_varint(&mut out, body.len() as u64);
            for &s in body {
                put_varint(&mut out, s as u64);
            }
        }
    }
    out
}

/// Serializes a container. Output is deterministic for equal inputs.
pub fn write_container(c: &Container, outer: OuterLayer) -> Result<Vec<u8>, ContainerError> {
    c.verify().map_err(|e| ContainerError::InconsistentHeader(e.to_string()))?;
    let payload = encode_payload(c);
    let stored = match outer {
        OuterLayer::None => payload,
        OuterLayer::Deflate => {
            let mut enc = DeflateEncoder::new(Vec::with_capacity(payload.len() / 4), Compression::best());
            enc.write_all(&payload)?;
            enc.finish()?
        }
    };
    let flags = match outer {
        OuterLayer::None => 0,
        OuterLayer::Deflate => FLAG_DEFLATE,
    };
    let mut out = Vec::with_capacity(PREAMBLE_LEN + stored.len());
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&flags.to_le_bytes());
    out.extend_from_slice(&(stored.len() as u64).to_le_bytes());
    out.extend_from_slice(&stored);
    Ok(out)
}

pub fn write_container_to<W: Write>(c: &Container, outer: OuterLayer, mut w: W) -> Result<(), ContainerError> {
    let bytes = write_container(c, outer)?;
    w.write_all(&bytes)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn varint(&mut self) -> Result<u64, ContainerError> {
        let mut v = 0u64;
        let mut shift = 0;
        loop {
            let &byte = self.buf.get(self.pos).ok_or(ContainerError::Truncated)?;
            self.pos += 1;
            if shift == 63 && byte > 1 {
                return Err(ContainerError::Malformed("varint overflows 64 bits".into()));
            }
            v |= ((byte & 0x7f) as u64) << shift;
            if byte & 0x80 == 0 {
                return Ok(v);
            }
            shift += 7;
            if shift > 63 {
                return Err(ContainerError::Malformed("varint too long".into()));
            }
        }
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        let v = self.varint()?;
        u32::try_from(v).map_err(|_| ContainerError::Malformed(format!("value {v} exceeds 32 bits")))
    }

    /// `len` varint symbols; single-byte values take a fast path.
    fn symbols(&mut self, len: usize) -> Result<Vec<Symbol>, ContainerError> {
        let mut out = Vec::with_capacity(len);
        for _ in 0..len {
            match self.buf.get(self.pos) {
                Some(&b) if b < 0x80 => {
                    self.pos += 1;
                    out.push(b as Symbol);
                }
                _ => out.push(self.u32()?),
            }
        }
        Ok(out)
    }

    /// A count of items each at least one byte long.
    fn count(&mut self) -> Result<usize, ContainerError> {
        let v = self.varint()?;
        if v > (self.buf.len() - self.pos) as u64 {
            return Err(ContainerError::Truncated);
        }
        Ok(v as usize)
    }

    fn bytes(&mut self) -> Result<&'a [u8], ContainerError> {
        let len = self.count()?;
        let s = &self.buf[self.pos..self.pos + len];
        self.pos += len;
        Ok(s)
    }

    fn string(&mut self) -> Result<String, ContainerError> {
        let b = self.bytes()?;
        String::from_utf8(b.to_vec()).map_err(|_| ContainerError::Malformed("invalid UTF-8".into()))
    }
}

/// Reads just the preamble: `(version, outer layer, stored payload length)`.
pub fn read_preamble(bytes: &[u8]) -> Result<(u16, OuterLayer, u64), ContainerError> {
    if bytes.len() < 4 {
        return Err(if MAGIC.starts_with(bytes) { ContainerError::Truncated } else { ContainerError::BadMagic });
    }
    if bytes[..4] != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    if bytes.len() < PREAMBLE_LEN {
        return Err(ContainerError::Truncated);
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != VERSION {
        return Err(ContainerError::UnsupportedVersion(version));
    }
    let flags = u16::from_le_bytes([bytes[6], bytes[7]]);
    if flags & !FLAG_DEFLATE != 0 {
        return Err(ContainerError::UnknownFlags(flags));
    }
    let outer = if flags & FLAG_DEFLATE != 0 { OuterLayer::Deflate } else { OuterLayer::None };
    let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
    Ok((version, outer, len))
}

/// Undoes the outer layer; returns the inner payload.
pub fn inner_payload(bytes: &[u8]) -> Result<(OuterLayer, Vec<u8>), ContainerError> {
    let (_, outer, len) = read_preamble(bytes)?;
    let body = &bytes[PREAMBLE_LEN..];
    if (body.len() as u64) < len {
        return Err(ContainerError::Truncated);
    }
    if body.len() as u64 > len {
        return Err(ContainerError::Malformed("trailing bytes after payload".into()));
    }
    let payload = match outer {
        OuterLayer::None => body.to_vec(),
        OuterLayer::Deflate => {
            let mut out = Vec::with_capacity(body.len() * 4);
            DeflateDecoder::new(body).read_to_end(&mut out).map_err(|e| {
                if e.kind() == io::ErrorKind::UnexpectedEof {
                    ContainerError::Truncated
                } else {
                    ContainerError::Deflate(e.to_string())
                }
            })?;
            out
        }
    };
    Ok((outer, payload))
}

/// Parses and verifies a container.
pub fn read_container(bytes: &[u8]) -> Result<Container, ContainerError> {
    let (outer, payload) = inner_payload(bytes)?;
    let mut cur = Cursor { buf: &payload, pos: 0 };

    let n_terminals = cur.u32()?;
    let word_count = cur.u32()?;
    let file_count = cur.count()?;
    let mut files = Vec::with_capacity(file_count);
    for _ in 0..file_count {
        let name = cur.string()?;
        let token_count = cur.varint()?;
        let separator = cur.u32()?;
        files.push(FileEntry { name, token_count, separator });
    }
    let features = FeatureBlock {
        file_count: cur.varint()?,
        total_tokens: cur.varint()?,
        vocabulary: cur.varint()?,
        rule_count: cur.varint()?,
    };

    let dict_words = cur.count()?;
    let mut words = Vec::with_capacity(dict_words);
    for _ in 0..dict_words {
        words.push(cur.string()?);
    }
    let separators = cur.u32()?;
    let dictionary = Dictionary::from_words(words, separators).map_err(|e| ContainerError::Malformed(e.to_string()))?;
    let space = dictionary.space();

    let partition_count = cur.count()?;
    let mut partitions = Vec::with_capacity(partition_count);
    for _ in 0..partition_count {
        let unit_count = cur.count()?;
        let mut units = Vec::with_capacity(unit_count);
        for _ in 0..unit_count {
            units.push(Unit { file: cur.u32()?, section: cur.u32()?, token_count: cur.varint()? });
        }
        let rule_count = cur.count()?;
        let mut rules = Vec::with_capacity(rule_count);
        for _ in 0..rule_count {
            let len = cur.count()?;
            rules.push(cur.symbols(len)?);
        }
        partitions.push(PartitionGrammar { units, grammar: Grammar::new(space, rules)? });
    }
    if cur.pos != payload.len() {
        return Err(ContainerError::Malformed("trailing bytes in payload".into()));
    }

    let c = Container {
        header: ContainerHeader { version: VERSION, outer, n_terminals, word_count, files, features },
        dictionary,
        partitions,
    };
    c.verify()?;
    Ok(c)
}

/// Sizes and `original / compressed` ratios for one corpus.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct CompressionReport {
    pub raw_bytes: u64,
    pub container_bytes: u64,
    pub deflate_bytes: u64,
    pub container_ratio: f64,
    pub deflate_ratio: f64,
}

pub fn ratio(original: u64, compressed: u64) -> f64 {
    if compressed == 0 {
        return f64::INFINITY;
    }
    original as f64 / compressed as f64
}

pub fn compression_report(raw_size: u64, container_size: u64, deflate_of_raw_size: u64) -> CompressionReport {
    CompressionReport {
        raw_bytes: raw_size,
        container_bytes: container_size,
        deflate_bytes: deflate_of_raw_size,
        container_ratio: ratio(raw_size, container_size),
        deflate_ratio: ratio(raw_size, deflate_of_raw_size),
    }
}

/// The dictionary-encoded corpus without a grammar: dictionary block, then
/// the symbol count and every symbol as a varint. This is what the grammar
/// competes against when both get the same outer DEFLATE layer.
pub fn encoded_stream_bytes(dict: &Dictionary, symbols: &[Symbol]) -> Vec<u8> {
    let mut out = Vec::new();
    put_varint(&mut out, dict.word_count() as u64);
    for w in dict.words() {
        put_bytes(&mut out, w.as_bytes());
    }
    put_varint(&mut out, dict.separator_count() as u64);
    put_varint(&mut out, symbols.len() as u64);
    for &s in symbols {
        put_varint(&mut out, s as u64);
    }
    out
}

/// Raw DEFLATE size of `data` at the level the container uses.
pub fn deflate_size(data: &[u8]) -> u64 {
    let mut enc = DeflateEncoder::new(Vec::new(), Compression::best());
    enc.write_all(data).expect("in-memory write");
    enc.finish().expect("in-memory write").len() as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{encode_corpus, Tokenizer};
    use crate::sequitur::infer_grammar;

    fn example() -> Container {
        let files = [("f0", "a b c a b d a b c a b d a b a")];
        let (dict, enc) = encode_corpus(&files, Tokenizer::default()).unwrap();
        let g = infer_grammar(&enc.symbols, dict.space()).unwrap();
        Container::single(dict, enc.files, g).unwrap()
    }

    #[test]
    fn round_trip_both_layers() {
        let c = example();
        for outer in [OuterLayer::None, OuterLayer::Deflate] {
            let bytes = write_container(&c, outer).unwrap();
            let back = read_container(&bytes).unwrap();
            assert_eq!(back.header.outer, outer);
            assert_eq!(back.dictionary, c.dictionary);
            assert_eq!(back.partitions, c.partitions);
            assert_eq!(back.header.features, c.header.features);
            assert_eq!(write_container(&back, outer).unwrap(), bytes);
        }
    }

    #[test]
    fn flag_only_changes_flag_and_body() {
        let c = example();
        let plain = write_container(&c, OuterLayer::None).unwrap();
        let packed = write_container(&c, OuterLayer::Deflate).unwrap();
        assert_eq!(plain[..6], packed[..6]);
        assert_eq!(plain[6] ^ packed[6], 1);
        let (_, inner) = inner_payload(&packed).unwrap();
        assert_eq!(inner, plain[PREAMBLE_LEN..]);
    }

    #[test]
    fn example_feature_block() {
        let fb = example().header.features;
        assert_eq!(fb, FeatureBlock { file_count: 1, total_tokens: 15, vocabulary: 4, rule_count: 3 });
    }

    #[test]
    fn corruption_is_detected() {
        let c = example();
        for outer in [OuterLayer::None, OuterLayer::Deflate] {
            let bytes = write_container(&c, outer).unwrap();
            let mut bad = bytes.clone();
            bad[0] ^= 0xff;
            assert!(matches!(read_container(&bad), Err(ContainerError::BadMagic)));
            assert!(matches!(read_container(&bytes[..bytes.len() / 2]), Err(ContainerError::Truncated)));
            assert!(matches!(read_container(&bytes[..10]), Err(ContainerError::Truncated)));
            let mut v = bytes.clone();
            v[4] = 9;
            assert!(matches!(read_container(&v), Err(ContainerError::UnsupportedVersion(9))));
        }
        let bytes = write_container(&c, OuterLayer::Deflate).unwrap();
        let mut junk = bytes[..PREAMBLE_LEN].to_vec();
        junk.extend(std::iter::repeat_n(0xffu8, bytes.len() - PREAMBLE_LEN));
        assert!(matches!(read_container(&junk), Err(ContainerError::Deflate(_))));
    }

    #[test]
    fn feature_mismatch_is_loud() {
        let mut c = example();
        c.header.features.total_tokens = 16;
        assert!(matches!(write_container(&c, OuterLayer::None), Err(ContainerError::InconsistentHeader(_))));
        // Patch the stored feature block directly: it is the last four
        // header varints before the dictionary block.
        let good = write_container(&example(), OuterLayer::None).unwrap();
        let mut bytes = good.clone();
        let name_at = bytes.windows(2).position(|w| w == b"f0").unwrap();
        let fb_at = name_at + 2 + 2; // token count and separator varints
        assert_eq!(bytes[fb_at + 1], 15);
        bytes[fb_at + 1] = 14;
        assert!(matches!(
            read_container(&bytes),
            Err(ContainerError::FeatureMismatch { field: "total tokens", stored: 14, actual: 15 })
        ));
    }

    #[test]
    fn ratios() {
        let r = compression_report(100, 10, 20);
        assert_eq!(r.container_ratio, 10.0);
        assert_eq!(r.deflate_ratio, 5.0);
    }
}
