//! Case files, sentence segmentation, entailment pairs and the on-disk
//! corpus index.
//!
//! The index is newline-delimited JSON:
//!
//! ```text
//! {"kind":"header","version":1,"k":2}
//! {"kind":"case","case_id":"a","title":"..."}
//! {"kind":"sentence","case_id":"a","index":0,"text":"..."}
//! ...
//! ```
//!
//! Each case record is immediately followed by its sentence records in order.

use std::collections::HashSet;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textnum::tokenize;

pub const INDEX_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("case {case_id}: no sentences survive segmentation")]
    EmptyCase { case_id: String },
    #[error("case {case_id}: needs at least 2 sentences, has {sentences}")]
    TooShort { case_id: String, sentences: usize },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("no usable case files in {}", dir.display())]
    NoUsableFiles { dir: PathBuf },
    #[error("duplicate case id {0}")]
    DuplicateCase(String),
    #[error("index line {line}: unsupported version {found} (expected {INDEX_VERSION})")]
    VersionMismatch { line: usize, found: u32 },
    #[error("index line {line}: {message}")]
    Parse { line: usize, message: String },
}

pub type Result<T> = std::result::Result<T, CorpusError>;

/// One case file as read from disk.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaseFile {
    pub case_id: String,
    pub title: String,
    pub body: String,
}

impl CaseFile {
    /// Title defaults to the first non-empty line of the body.
    pub fn from_text(case_id: impl Into<String>, body: impl Into<String>) -> Self {
        let body = body.into();
        let title = body
            .lines()
            .map(str::trim)
            .find(|l| !l.is_empty())
            .unwrap_or_default()
            .chars()
            .take(120)
            .collect();
        Self {
            case_id: case_id.into(),
            title,
            body,
        }
    }
}

/// All case files, ordered by case id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    cases: Vec<CaseFile>,
}

impl Corpus {
    pub fn new(mut cases: Vec<CaseFile>) -> Result<Self> {
        if cases.is_empty() {
            return Err(CorpusError::NoUsableFiles { dir: PathBuf::new() });
        }
        cases.sort_by(|a, b| a.case_id.cmp(&b.case_id));
        if let Some(w) = cases.windows(2).find(|w| w[0].case_id == w[1].case_id) {
            return Err(CorpusError::DuplicateCase(w[0].case_id.clone()));
        }
        Ok(Self { cases })
    }

    pub fn k(&self) -> usize {
        self.cases.len()
    }

    pub fn cases(&self) -> &[CaseFile] {
        &self.cases
    }
}

/// Ordered sentences `S_0..=S_M` of one case.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceSet {
    pub case_id: String,
    pub sentences: Vec<String>,
}

impl SentenceSet {
    /// Index of the last sentence.
    pub fn m(&self) -> usize {
        self.sentences.len().saturating_sub(1)
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Keeps only `S_0..=S_m`.
    pub fn truncated(&self, m: usize) -> SentenceSet {
        SentenceSet {
            case_id: self.case_id.clone(),
            sentences: self.sentences.iter().take(m + 1).cloned().collect(),
        }
    }

    pub fn joined(&self) -> String {
        self.sentences.join(" ")
    }
}

/// `S_j → S_{j+1}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntailmentPair {
    pub premise_index: usize,
    pub hypothesis_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegmenterConfig {
    /// Lowercase words (without the trailing period) that never end a sentence.
    pub abbreviations: Vec<String>,
    /// Sentences with fewer tokens are dropped.
    pub min_tokens: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        let abbreviations = [
            "mr", "mrs", "ms", "dr", "prof", "st", "jr", "sr", "vs", "v", "no", "nos", "art", "arts", "sec", "secs",
            "cl", "para", "paras", "ch", "co", "ltd", "inc", "hon", "cf", "e.g", "i.e", "viz", "pp", "p", "u.s",
            "govt", "dept", "sh", "smt",
        ];
        Self {
            abbreviations: abbreviations.iter().map(|s| s.to_string()).collect(),
            min_tokens: 3,
        }
    }
}

const CLOSERS: &[char] = &['"', '\'', ')', ']', '\u{201d}', '\u{2019}'];

/// Rule-based segmentation.
///
/// A sentence ends at `.`, `!` or `?` (plus any closing quotes or brackets)
/// when followed by whitespace and then an uppercase letter or digit, unless
/// the word before a `.` is a listed abbreviation. A blank line always ends a
/// sentence. Internal whitespace is collapsed to single spaces.
pub fn split_sentences(case_id: &str, body: &str, cfg: &SegmenterConfig) -> Result<SentenceSet> {
    let chars: Vec<char> = body.chars().collect();
    let n = chars.len();
    let mut pieces: Vec<String> = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < n {
        let c = chars[i];
        if c == '\n' {
            let mut j = i + 1;
            while j < n && chars[j] != '\n' && chars[j].is_whitespace() {
                j += 1;
            }
            if j < n && chars[j] == '\n' {
                pieces.push(chars[start..i].iter().collect());
                start = j + 1;
                i = j + 1;
                continue;
            }
        } else if matches!(c, '.' | '!' | '?') {
            let mut end = i + 1;
            while end < n && CLOSERS.contains(&chars[end]) {
                end += 1;
            }
            if end < n && chars[end].is_whitespace() {
                let mut j = end;
                while j < n && chars[j].is_whitespace() {
                    j += 1;
                }
                let starts_new = j < n && (chars[j].is_uppercase() || chars[j].is_ascii_digit());
                if starts_new && !(c == '.' && is_abbreviation(&chars[..i], cfg)) {
                    pieces.push(chars[start..end].iter().collect());
                    start = end;
                    i = end;
                    continue;
                }
            }
        }
        i += 1;
    }
    if start < n {
        pieces.push(chars[start..].iter().collect());
    }

    let sentences: Vec<String> = pieces
        .iter()
        .map(|p| p.split_whitespace().collect::<Vec<_>>().join(" "))
        .filter(|s| !s.is_empty() && tokenize(s).len() >= cfg.min_tokens)
        .collect();
    if sentences.is_empty() {
        return Err(CorpusError::EmptyCase {
            case_id: case_id.to_string(),
        });
    }
    Ok(SentenceSet {
        case_id: case_id.to_string(),
        sentences,
    })
}

fn is_abbreviation(before: &[char], cfg: &SegmenterConfig) -> bool {
    let word: String = before
        .iter()
        .rev()
        .take_while(|c| c.is_alphanumeric() || **c == '.')
        .collect::<Vec<_>>()
        .into_iter()
        .rev()
        .collect();
    let word = word.trim_matches('.').to_lowercase();
    !word.is_empty() && cfg.abbreviations.contains(&word)
}

/// Exactly `M` pairs `(j, j+1)` for a case with `M + 1` sentences.
pub fn build_entailment_pairs(s: &SentenceSet) -> Result<Vec<EntailmentPair>> {
    if s.len() < 2 {
        return Err(CorpusError::TooShort {
            case_id: s.case_id.clone(),
            sentences: s.len(),
        });
    }
    Ok((0..s.m())
        .map(|j| EntailmentPair {
            premise_index: j,
            hypothesis_index: j + 1,
        })
        .collect())
}

/// Result of reading a directory of case files.
#[derive(Debug)]
pub struct Ingested {
    pub corpus: Corpus,
    /// Files that were skipped and why.
    pub warnings: Vec<String>,
}

/// Reads every `*.txt` file in `dir` as one case; the file stem becomes the
/// case id. Unreadable or empty files are skipped with a warning.
pub fn ingest(dir: &Path) -> Result<Ingested> {
    let entries = fs::read_dir(dir).map_err(|source| CorpusError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut paths: Vec<PathBuf> = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|e| e == "txt"))
        .collect();
    paths.sort();

    let mut cases = Vec::new();
    let mut warnings = Vec::new();
    for path in paths {
        let Some(stem) = path.file_stem().and_then(|s| s.to_str()) else {
            warnings.push(format!("{}: file name is not valid UTF-8", path.display()));
            continue;
        };
        match fs::read_to_string(&path) {
            Ok(body) if body.trim().is_empty() => {
                warnings.push(format!("{}: empty file", path.display()));
            }
            Ok(body) => cases.push(CaseFile::from_text(stem, body)),
            Err(e) => warnings.push(format!("{}: {e}", path.display())),
        }
    }
    if cases.is_empty() {
        return Err(CorpusError::NoUsableFiles { dir: dir.to_path_buf() });
    }
    Ok(Ingested {
        corpus: Corpus::new(cases)?,
        warnings,
    })
}

/// Case metadata kept in the index.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaseEntry {
    pub case_id: String,
    pub title: String,
}

/// Segmented corpus: what the engine runs on and what `save_index` writes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusIndex {
    cases: Vec<CaseEntry>,
    sentences: Vec<SentenceSet>,
}

impl CorpusIndex {
    pub fn new(cases: Vec<CaseEntry>, sentences: Vec<SentenceSet>) -> Result<Self> {
        if cases.is_empty() {
            return Err(CorpusError::NoUsableFiles { dir: PathBuf::new() });
        }
        let mut seen = HashSet::new();
        for (c, s) in cases.iter().zip(&sentences) {
            if !seen.insert(c.case_id.as_str()) {
                return Err(CorpusError::DuplicateCase(c.case_id.clone()));
            }
            if c.case_id != s.case_id || s.is_empty() {
                return Err(CorpusError::EmptyCase {
                    case_id: c.case_id.clone(),
                });
            }
        }
        if cases.len() != sentences.len() {
            return Err(CorpusError::Parse {
                line: 0,
                message: "case and sentence-set counts differ".into(),
            });
        }
        Ok(Self { cases, sentences })
    }

    /// Segments every case. Cases that yield no sentences are dropped with a
    /// warning; cases with a single sentence are kept but warned about.
    pub fn build(corpus: &Corpus, cfg: &SegmenterConfig) -> Result<(Self, Vec<String>)> {
        let mut cases = Vec::new();
        let mut sentences = Vec::new();
        let mut warnings = Vec::new();
        for case in corpus.cases() {
            match split_sentences(&case.case_id, &case.body, cfg) {
                Ok(s) => {
                    if s.len() < 2 {
                        warnings.push(format!(
                            "case {}: only one sentence; sessions routed here will fail",
                            case.case_id
                        ));
                    }
                    cases.push(CaseEntry {
                        case_id: case.case_id.clone(),
                        title: case.title.clone(),
                    });
                    sentences.push(s);
                }
                Err(e) => warnings.push(e.to_string()),
            }
        }
        if cases.is_empty() {
            return Err(CorpusError::NoUsableFiles { dir: PathBuf::new() });
        }
        Ok((Self::new(cases, sentences)?, warnings))
    }

    pub fn k(&self) -> usize {
        self.cases.len()
    }

    pub fn cases(&self) -> &[CaseEntry] {
        &self.cases
    }

    pub fn sentence_sets(&self) -> &[SentenceSet] {
        &self.sentences
    }

    pub fn case_ids(&self) -> Vec<&str> {
        self.cases.iter().map(|c| c.case_id.as_str()).collect()
    }

    pub fn position(&self, case_id: &str) -> Option<usize> {
        self.cases.iter().position(|c| c.case_id == case_id)
    }

    pub fn sentences_of(&self, case_id: &str) -> Option<&SentenceSet> {
        self.position(case_id).map(|i| &self.sentences[i])
    }

    /// Entailment pairs for every case with at least two sentences.
    pub fn entailment_dataset(&self) -> Vec<(String, Vec<EntailmentPair>)> {
        self.sentences
            .iter()
            .filter_map(|s| build_entailment_pairs(s).ok().map(|p| (s.case_id.clone(), p)))
            .collect()
    }

    pub fn write_to<W: Write>(&self, mut out: W) -> io::Result<()> {
        let line = |out: &mut W, r: &Record| -> io::Result<()> {
            serde_json::to_writer(&mut *out, r)?;
            out.write_all(b"\n")
        };
        line(
            &mut out,
            &Record::Header {
                version: INDEX_VERSION,
                k: self.k(),
            },
        )?;
        for (case, set) in self.cases.iter().zip(&self.sentences) {
            line(
                &mut out,
                &Record::Case {
                    case_id: case.case_id.clone(),
                    title: case.title.clone(),
                },
            )?;
            for (index, text) in set.sentences.iter().enumerate() {
                line(
                    &mut out,
                    &Record::Sentence {
                        case_id: case.case_id.clone(),
                        index,
                        text: text.clone(),
                    },
                )?;
            }
        }
        out.flush()
    }

    pub fn read_from<R: BufRead>(input: R) -> Result<Self> {
        let mut k = None;
        let mut cases: Vec<CaseEntry> = Vec::new();
        let mut sentences: Vec<SentenceSet> = Vec::new();
        let mut seen = HashSet::new();
        let mut last_line = 0;

        for (n, raw) in input.lines().enumerate() {
            let line = n + 1;
            last_line = line;
            let raw = raw.map_err(|e| CorpusError::Parse {
                line,
                message: e.to_string(),
            })?;
            if raw.trim().is_empty() {
                continue;
            }
            let record: Record = serde_json::from_str(&raw).map_err(|e| CorpusError::Parse {
                line,
                message: e.to_string(),
            })?;
            let parse_err = |message: String| CorpusError::Parse { line, message };
            match (record, k) {
                (Record::Header { version, k: count }, None) => {
                    if version != INDEX_VERSION {
                        return Err(CorpusError::VersionMismatch { line, found: version });
                    }
                    k = Some(count);
                }
                (Record::Header { .. }, Some(_)) => {
                    return Err(parse_err("duplicate header".into()));
                }
                (_, None) => return Err(parse_err("expected header record first".into())),
                (Record::Case { case_id, title }, Some(_)) => {
                    if let Some(prev) = sentences.last() {
                        if prev.is_empty() {
                            return Err(parse_err(format!("case {} has no sentences", prev.case_id)));
                        }
                    }
                    if !seen.insert(case_id.clone()) {
                        return Err(parse_err(format!("duplicate case id {case_id}")));
                    }
                    sentences.push(SentenceSet {
                        case_id: case_id.clone(),
                        sentences: Vec::new(),
                    });
                    cases.push(CaseEntry { case_id, title });
                }
                (Record::Sentence { case_id, index, text }, Some(_)) => {
                    let Some(current) = sentences.last_mut() else {
                        return Err(parse_err("sentence before any case record".into()));
                    };
                    if current.case_id != case_id {
                        return Err(parse_err(format!(
                            "sentence for {case_id} inside case {}",
                            current.case_id
                        )));
                    }
                    if index != current.sentences.len() {
                        return Err(parse_err(format!(
                            "expected sentence index {}, found {index}",
                            current.sentences.len()
                        )));
                    }
                    current.sentences.push(text);
                }
            }
        }

        let eof = last_line + 1;
        let Some(k) = k else {
            return Err(CorpusError::Parse {
                line: eof,
                message: "missing header".into(),
            });
        };
        if cases.len() != k {
            return Err(CorpusError::Parse {
                line: eof,
                message: format!(
                    "unexpected end of index: header promises {k} cases, found {}",
                    cases.len()
                ),
            });
        }
        if let Some(s) = sentences.iter().find(|s| s.is_empty()) {
            return Err(CorpusError::Parse {
                line: eof,
                message: format!("unexpected end of index: case {} has no sentences", s.case_id),
            });
        }
        Self::new(cases, sentences)
    }
}

pub fn save_index(index: &CorpusIndex, path: &Path) -> Result<()> {
    let io_err = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = fs::File::create(path).map_err(io_err)?;
    index.write_to(BufWriter::new(file)).map_err(io_err)
}

pub fn load_index(path: &Path) -> Result<CorpusIndex> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    CorpusIndex::read_from(BufReader::new(file))
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum Record {
    Header {
        version: u32,
        k: usize,
    },
    Case {
        case_id: String,
        title: String,
    },
    Sentence {
        case_id: String,
        index: usize,
        text: String,
    },
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(body: &str) -> Result<SentenceSet> {
        split_sentences("t", body, &SegmenterConfig::default())
    }

    #[test]
    fn splits_on_terminal_punctuation() {
        assert_eq!(split("A b c. D e f.").unwrap().sentences, ["A b c.", "D e f."]);
    }

    #[test]
    fn abbreviation_guard() {
        let s = split("He saw Dr. Smith. Then left now.").unwrap();
        assert_eq!(s.sentences, ["He saw Dr. Smith.", "Then left now."]);
    }

    #[test]
    fn lowercase_continuation_is_not_a_boundary() {
        let s = split("The value was 3.5 units. it stayed the same all day.").unwrap();
        assert_eq!(s.len(), 1);
    }

    #[test]
    fn closing_quotes_stay_with_their_sentence() {
        let s = split("He said \"go home now.\" Then he left the room.").unwrap();
        assert_eq!(s.sentences, ["He said \"go home now.\"", "Then he left the room."]);
    }

    #[test]
    fn blank_line_breaks_and_whitespace_collapses() {
        let s = split("State of Kerala versus Rao\n\nThe appellant   was\nconvicted below.").unwrap();
        assert_eq!(
            s.sentences,
            ["State of Kerala versus Rao", "The appellant was convicted below."]
        );
    }

    #[test]
    fn short_body_is_an_empty_case() {
        assert!(matches!(split("one two"), Err(CorpusError::EmptyCase { .. })));
    }

    #[test]
    fn min_tokens_is_configurable() {
        let cfg = SegmenterConfig {
            min_tokens: 1,
            ..Default::default()
        };
        assert_eq!(split_sentences("t", "one two", &cfg).unwrap().len(), 1);
    }

    #[test]
    fn entailment_pairs() {
        let set = |n: usize| SentenceSet {
            case_id: "c".into(),
            sentences: (0..n).map(|i| format!("s{i}")).collect(),
        };
        assert_eq!(
            build_entailment_pairs(&set(2)).unwrap(),
            [EntailmentPair {
                premise_index: 0,
                hypothesis_index: 1
            }]
        );
        let five = build_entailment_pairs(&set(5)).unwrap();
        assert_eq!(five.len(), 4);
        assert_eq!(
            five[3],
            EntailmentPair {
                premise_index: 3,
                hypothesis_index: 4
            }
        );
        assert!(matches!(
            build_entailment_pairs(&set(1)),
            Err(CorpusError::TooShort { sentences: 1, .. })
        ));
    }

    fn two_case_index() -> CorpusIndex {
        let corpus = Corpus::new(vec![
            CaseFile::from_text("b", "Second case here. It has words."),
            CaseFile::from_text("a", "First case here. More text follows. And a third one."),
        ])
        .unwrap();
        CorpusIndex::build(&corpus, &SegmenterConfig::default()).unwrap().0
    }

    #[test]
    fn index_file_layout() {
        let index = two_case_index();
        let mut buf = Vec::new();
        index.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], r#"{"kind":"header","version":1,"k":2}"#);
        assert_eq!(
            lines[1],
            r#"{"kind":"case","case_id":"a","title":"First case here. More text follows. And a third one."}"#
        );
        assert_eq!(
            lines[2],
            r#"{"kind":"sentence","case_id":"a","index":0,"text":"First case here."}"#
        );
        assert_eq!(lines.iter().filter(|l| l.contains(r#""kind":"case""#)).count(), 2);
        assert_eq!(lines.iter().filter(|l| l.contains(r#""kind":"sentence""#)).count(), 5);
    }

    #[test]
    fn index_round_trip() {
        let index = two_case_index();
        let mut buf = Vec::new();
        index.write_to(&mut buf).unwrap();
        assert_eq!(CorpusIndex::read_from(&buf[..]).unwrap(), index);
    }

    #[test]
    fn truncated_index_names_the_line() {
        let index = two_case_index();
        let mut buf = Vec::new();
        index.write_to(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();

        let cut: String = text.lines().take(4).map(|l| format!("{l}\n")).collect();
        match CorpusIndex::read_from(cut.as_bytes()) {
            Err(CorpusError::Parse { line: 5, message }) => assert!(message.contains("end of index")),
            other => panic!("unexpected {other:?}"),
        }

        let mid = &text[..text.len() - 10];
        match CorpusIndex::read_from(mid.as_bytes()) {
            Err(CorpusError::Parse { line, .. }) => assert_eq!(line, text.lines().count()),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn version_mismatch_is_reported() {
        let bad = "{\"kind\":\"header\",\"version\":2,\"k\":1}\n";
        assert!(matches!(
            CorpusIndex::read_from(bad.as_bytes()),
            Err(CorpusError::VersionMismatch { line: 1, found: 2 })
        ));
    }

    #[test]
    fn out_of_order_sentence_is_rejected() {
        let bad = concat!(
            "{\"kind\":\"header\",\"version\":1,\"k\":1}\n",
            "{\"kind\":\"case\",\"case_id\":\"a\",\"title\":\"t\"}\n",
            "{\"kind\":\"sentence\",\"case_id\":\"a\",\"index\":1,\"text\":\"x\"}\n",
        );
        assert!(matches!(
            CorpusIndex::read_from(bad.as_bytes()),
            Err(CorpusError::Parse { line: 3, .. })
        ));
    }
}
