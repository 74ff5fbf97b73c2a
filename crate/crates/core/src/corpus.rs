//! Line-addressed Verilog corpus: module detection, comment stripping,
//! label ingestion and train/test splitting.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const LABEL_HEADER: [&str; 6] = [
    "design_id",
    "module_id",
    "line_no",
    "congestion",
    "timing",
    "wns_ns",
];

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("invalid UTF-8 at byte offset {offset}")]
    Utf8 { offset: usize },
    #[error("unterminated block comment starting on line {line}")]
    UnterminatedComment { line: usize },
    #[error("`endmodule` without matching `module` on line {line}")]
    StrayEndmodule { line: usize },
    #[error("end of file inside module starting on line {line}")]
    UnterminatedModule { line: usize },
    #[error("`module` keyword without a name on line {line}")]
    MissingModuleName { line: usize },
    #[error("line {line} holds the end of one module and the start of another")]
    SharedLine { line: usize },
    #[error("duplicate module `{module_id}` in design `{design_id}`")]
    DuplicateModule { design_id: String, module_id: String },
    #[error("label file row {row}: {reason}")]
    MalformedRow { row: usize, reason: String },
    #[error("duplicate label key {0}")]
    DuplicateLabel(LineKey),
    #[error("label references nonexistent line {0}")]
    UnknownLine(LineKey),
    #[error("train fraction {0} outside (0, 1]")]
    BadFraction(f64),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, CorpusError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Identity of one source line inside a module.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct LineKey {
    pub design_id: String,
    pub module_id: String,
    pub line_no: usize,
}

impl fmt::Display for LineKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}:{}", self.design_id, self.module_id, self.line_no)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineRecord {
    pub design_id: String,
    pub module_id: String,
    /// 1-based, relative to the module text.
    pub line_no: usize,
    pub text: String,
}

impl LineRecord {
    pub fn key(&self) -> LineKey {
        LineKey {
            design_id: self.design_id.clone(),
            module_id: self.module_id.clone(),
            line_no: self.line_no,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleSpan {
    pub module_id: String,
    pub design_id: String,
    /// 1-based line numbers in the originating file, inclusive.
    pub start_line: usize,
    pub end_line: usize,
    pub text: String,
}

impl ModuleSpan {
    /// Line number in the originating file for a module-relative line.
    pub fn file_line(&self, line_no: usize) -> usize {
        self.start_line + line_no - 1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub design_id: String,
    pub module_id: String,
    /// 0 marks a module-level row.
    pub line_no: usize,
    pub congestion: bool,
    pub timing: bool,
    pub wns_ns: Option<f64>,
}

impl LabelRecord {
    pub fn key(&self) -> LineKey {
        LineKey {
            design_id: self.design_id.clone(),
            module_id: self.module_id.clone(),
            line_no: self.line_no,
        }
    }
}

/// Decode source bytes, reporting the first invalid byte offset.
pub fn decode_source(bytes: &[u8]) -> Result<String> {
    std::str::from_utf8(bytes)
        .map(str::to_owned)
        .map_err(|e| CorpusError::Utf8 {
            offset: e.valid_up_to(),
        })
}

pub fn split_lines(module: &ModuleSpan) -> Vec<LineRecord> {
    module
        .text
        .split('\n')
        .enumerate()
        .map(|(i, text)| LineRecord {
            design_id: module.design_id.clone(),
            module_id: module.module_id.clone(),
            line_no: i + 1,
            text: text.to_owned(),
        })
        .collect()
}

/// Blank out `//` and `/* */` comments with spaces. Newlines (and carriage
/// returns) inside comments are kept so line numbers stay aligned.
pub fn strip_comments(source: &str) -> Result<String> {
    #[derive(Clone, Copy)]
    enum State {
        Code,
        Str,
        StrEscape,
        Line,
        Block { start: usize },
    }

    let mut out = String::with_capacity(source.len());
    let mut state = State::Code;
    let mut line = 1;
    let mut chars = source.chars().peekable();
    while let Some(c) = chars.next() {
        match state {
            State::Code => match c {
                '"' => {
                    state = State::Str;
                    out.push(c);
                }
                '/' if chars.peek() == Some(&'/') => {
                    chars.next();
                    out.push_str("  ");
                    state = State::Line;
                }
                '/' if chars.peek() == Some(&'*') => {
                    chars.next();
                    out.push_str("  ");
                    state = State::Block { start: line };
                }
                _ => out.push(c),
            },
            State::Str => {
                match c {
                    '\\' => state = State::StrEscape,
                    '"' | '\n' => state = State::Code,
                    _ => {}
                }
                out.push(c);
            }
            State::StrEscape => {
                state = State::Str;
                out.push(c);
            }
            State::Line => {
                if c == '\n' {
                    state = State::Code;
                    out.push(c);
                } else if c == '\r' {
                    out.push(c);
                } else {
                    out.push(' ');
                }
            }
            State::Block { .. } => {
                if c == '*' && chars.peek() == Some(&'/') {
                    chars.next();
                    out.push_str("  ");
                    state = State::Code;
                } else if c == '\n' || c == '\r' {
                    out.push(c);
                } else {
                    out.push(' ');
                }
            }
        }
        if c == '\n' {
            line += 1;
        }
    }
    if let State::Block { start } = state {
        return Err(CorpusError::UnterminatedComment { line: start });
    }
    Ok(out)
}

struct Word<'a> {
    text: &'a str,
    line: usize,
}

/// Identifier-like words outside string literals, with their line numbers.
fn words(source: &str) -> Vec<Word<'_>> {
    let bytes = source.as_bytes();
    let mut out = Vec::new();
    let mut line = 1;
    let mut i = 0;
    let mut in_str = false;
    while i < bytes.len() {
        let b = bytes[i];
        if b == b'\n' {
            line += 1;
            in_str = false;
            i += 1;
            continue;
        }
        if in_str {
            if b == b'\\' {
                i += 2;
                continue;
            }
            if b == b'"' {
                in_str = false;
            }
            i += 1;
            continue;
        }
        if b == b'"' {
            in_str = true;
            i += 1;
        } else if b == b'\\' {
            // escaped identifier runs to whitespace
            let start = i;
            while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
                i += 1;
            }
            out.push(Word {
                text: &source[start..i],
                line,
            });
        } else if b.is_ascii_alphabetic() || b == b'_' || b == b'$' || b == b'`' {
            let start = i;
            while i < bytes.len()
                && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_' || bytes[i] == b'$')
            {
                i += 1;
            }
            if i == start {
                i += 1;
            }
            out.push(Word {
                text: &source[start..i],
                line,
            });
        } else if b.is_ascii_digit() {
            // numbers and sized literals such as 8'hFF are not identifiers
            while i < bytes.len() && (bytes[i].is_ascii_alphanumeric() || bytes[i] == b'_') {
                i += 1;
            }
        } else {
            i += 1;
        }
    }
    out
}

/// Find depth-0 `module … endmodule` spans. Comments are stripped internally
/// for detection; span text is taken from the original source.
pub fn detect_modules(design_id: &str, source: &str) -> Result<Vec<ModuleSpan>> {
    let stripped = strip_comments(source)?;
    let src_lines: Vec<&str> = source.split('\n').collect();
    let mut spans = Vec::new();
    let mut depth = 0usize;
    let mut open: Option<(usize, String)> = None;
    let mut last_end = 0usize;
    let ws = words(&stripped);
    let mut iter = ws.iter().peekable();
    while let Some(w) = iter.next() {
        match w.text {
            "module" | "macromodule" => {
                if depth == 0 {
                    if w.line == last_end {
                        return Err(CorpusError::SharedLine { line: w.line });
                    }
                    let name = match iter.peek() {
                        Some(n) if n.text != "endmodule" && n.text != "module" => {
                            iter.next().map(|n| n.text.to_owned())
                        }
                        _ => None,
                    };
                    let name = name.ok_or(CorpusError::MissingModuleName { line: w.line })?;
                    open = Some((w.line, name));
                }
                depth += 1;
            }
            "endmodule" => {
                if depth == 0 {
                    return Err(CorpusError::StrayEndmodule { line: w.line });
                }
                depth -= 1;
                if depth == 0 {
                    let (start, module_id) = open.take().expect("open module at depth 1");
                    let text = src_lines[start - 1..w.line].join("\n");
                    spans.push(ModuleSpan {
                        module_id,
                        design_id: design_id.to_owned(),
                        start_line: start,
                        end_line: w.line,
                        text,
                    });
                    last_end = w.line;
                }
            }
            _ => {}
        }
    }
    if let Some((line, _)) = open {
        return Err(CorpusError::UnterminatedModule { line });
    }
    Ok(spans)
}

/// A source file with its detected modules.
#[derive(Debug, Clone)]
pub struct SourceFile {
    pub path: PathBuf,
    pub design_id: String,
    pub text: String,
    pub modules: Vec<ModuleSpan>,
}

/// Read `<corpus_dir>/<design_id>/*.v`, in sorted path order.
pub fn load_corpus(corpus_dir: &Path) -> Result<Vec<SourceFile>> {
    let mut designs: Vec<PathBuf> = fs::read_dir(corpus_dir)
        .map_err(io_err(corpus_dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    designs.sort();
    let mut files = Vec::new();
    for dir in designs {
        let design_id = dir
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or_default()
            .to_owned();
        let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
            .map_err(io_err(&dir))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "v"))
            .collect();
        paths.sort();
        for path in paths {
            let bytes = fs::read(&path).map_err(io_err(&path))?;
            let text = decode_source(&bytes)?;
            let modules = detect_modules(&design_id, &text)?;
            files.push(SourceFile {
                path,
                design_id: design_id.clone(),
                text,
                modules,
            });
        }
    }
    Ok(files)
}

fn parse_bool(field: &str, name: &str, row: usize) -> Result<bool> {
    match field.trim() {
        "0" => Ok(false),
        "1" => Ok(true),
        other => Err(CorpusError::MalformedRow {
            row,
            reason: format!("{name} must be 0 or 1, got `{other}`"),
        }),
    }
}

pub fn parse_labels<R: std::io::Read>(reader: R, path: &Path) -> Result<Vec<LabelRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let csv_err = |source| CorpusError::Csv {
        path: path.to_path_buf(),
        source,
    };
    let header = rdr.headers().map_err(csv_err)?.clone();
    let got: Vec<&str> = header.iter().map(str::trim).collect();
    if got != LABEL_HEADER {
        return Err(CorpusError::MalformedRow {
            row: 1,
            reason: format!("expected header `{}`", LABEL_HEADER.join(",")),
        });
    }
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        // row numbers are 1-based and count the header
        let row = i + 2;
        let rec = rec.map_err(|e| CorpusError::MalformedRow {
            row,
            reason: e.to_string(),
        })?;
        if rec.len() != LABEL_HEADER.len() {
            return Err(CorpusError::MalformedRow {
                row,
                reason: format!("expected 6 fields, found {}", rec.len()),
            });
        }
        let line_no = rec[2].trim().parse::<usize>().map_err(|_| CorpusError::MalformedRow {
            row,
            reason: format!("line_no `{}` is not a non-negative integer", &rec[2]),
        })?;
        let wns_ns = match rec[5].trim() {
            "" => None,
            s => {
                let v = s.parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
                    CorpusError::MalformedRow {
                        row,
                        reason: format!("wns_ns `{s}` is not a finite decimal"),
                    }
                })?;
                Some(v)
            }
        };
        let label = LabelRecord {
            design_id: rec[0].trim().to_owned(),
            module_id: rec[1].trim().to_owned(),
            line_no,
            congestion: parse_bool(&rec[3], "congestion", row)?,
            timing: parse_bool(&rec[4], "timing", row)?,
            wns_ns,
        };
        if label.design_id.is_empty() || label.module_id.is_empty() {
            return Err(CorpusError::MalformedRow {
                row,
                reason: "empty design_id or module_id".into(),
            });
        }
        if !seen.insert(label.key()) {
            return Err(CorpusError::DuplicateLabel(label.key()));
        }
        out.push(label);
    }
    Ok(out)
}

pub fn load_labels(path: &Path) -> Result<Vec<LabelRecord>> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    parse_labels(file, path)
}

pub fn write_labels<W: std::io::Write>(writer: W, labels: &[LabelRecord]) -> std::io::Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(LABEL_HEADER)?;
    for l in labels {
        let wns = l.wns_ns.map(|v| format!("{v}")).unwrap_or_default();
        w.write_record([
            l.design_id.as_str(),
            l.module_id.as_str(),
            &l.line_no.to_string(),
            if l.congestion { "1" } else { "0" },
            if l.timing { "1" } else { "0" },
            &wns,
        ])?;
    }
    w.flush()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone)]
pub struct Example {
    pub line: LineRecord,
    pub congestion: bool,
    pub timing: bool,
    pub wns_ns: Option<f64>,
    pub split: Split,
}

#[derive(Debug, Clone)]
pub struct Dataset {
    /// Sorted by (design_id, module_id, line_no).
    pub examples: Vec<Example>,
    /// Every module, keyed by (design_id, module_id).
    pub modules: BTreeMap<(String, String), ModuleSpan>,
    /// Module-level WNS from `line_no = 0` rows.
    pub module_wns: BTreeMap<(String, String), f64>,
    pub split_seed: u64,
    pub train_fraction: f64,
}

impl Dataset {
    pub fn from_modules(
        modules: Vec<ModuleSpan>,
        labels: &[LabelRecord],
        split_seed: u64,
        train_fraction: f64,
    ) -> Result<Self> {
        if !(train_fraction > 0.0 && train_fraction <= 1.0) {
            return Err(CorpusError::BadFraction(train_fraction));
        }
        let mut by_module = BTreeMap::new();
        for m in modules {
            let key = (m.design_id.clone(), m.module_id.clone());
            if by_module.contains_key(&key) {
                return Err(CorpusError::DuplicateModule {
                    design_id: key.0,
                    module_id: key.1,
                });
            }
            by_module.insert(key, m);
        }

        let mut line_labels: HashMap<LineKey, &LabelRecord> = HashMap::new();
        let mut module_wns = BTreeMap::new();
        for l in labels {
            let mkey = (l.design_id.clone(), l.module_id.clone());
            let Some(module) = by_module.get(&mkey) else {
                return Err(CorpusError::UnknownLine(l.key()));
            };
            if l.line_no == 0 {
                if let Some(w) = l.wns_ns {
                    module_wns.insert(mkey, w);
                }
                continue;
            }
            if l.line_no > module.end_line - module.start_line + 1 {
                return Err(CorpusError::UnknownLine(l.key()));
            }
            line_labels.insert(l.key(), l);
        }

        let mut examples = Vec::new();
        for module in by_module.values() {
            for line in split_lines(module) {
                let label = line_labels.get(&line.key());
                examples.push(Example {
                    congestion: label.is_some_and(|l| l.congestion),
                    timing: label.is_some_and(|l| l.timing),
                    wns_ns: label.and_then(|l| l.wns_ns),
                    split: Split::Test,
                    line,
                });
            }
        }

        let n_train = (examples.len() as f64 * train_fraction).round() as usize;
        let mut order: Vec<usize> = (0..examples.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(split_seed));
        for &i in &order[..n_train] {
            examples[i].split = Split::Train;
        }

        Ok(Dataset {
            examples,
            modules: by_module,
            module_wns,
            split_seed,
            train_fraction,
        })
    }

    pub fn count(&self, split: Split) -> usize {
        self.examples.iter().filter(|e| e.split == split).count()
    }
}

pub fn build_dataset(
    corpus_dir: &Path,
    label_path: &Path,
    split_seed: u64,
    train_fraction: f64,
) -> Result<Dataset> {
    let labels = load_labels(label_path)?;
    let modules = load_corpus(corpus_dir)?
        .into_iter()
        .flat_map(|f| f.modules)
        .collect();
    Dataset::from_modules(modules, &labels, split_seed, train_fraction)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn span(text: &str) -> ModuleSpan {
        ModuleSpan {
            module_id: "m".into(),
            design_id: "d".into(),
            start_line: 1,
            end_line: text.split('\n').count(),
            text: text.into(),
        }
    }

    #[test]
    fn split_two_lines() {
        let lines = split_lines(&span("a\nb"));
        assert_eq!(lines.len(), 2);
        assert_eq!((lines[0].line_no, lines[0].text.as_str()), (1, "a"));
        assert_eq!((lines[1].line_no, lines[1].text.as_str()), (2, "b"));
    }

    #[test]
    fn split_empty_is_one_empty_line() {
        let lines = split_lines(&span(""));
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].line_no, 1);
        assert_eq!(lines[0].text, "");
    }

    #[test]
    fn decode_reports_offset() {
        let err = decode_source(b"ab\xffc").unwrap_err();
        assert!(matches!(err, CorpusError::Utf8 { offset: 2 }));
    }

    #[test]
    fn strip_line_comment_pads() {
        let out = strip_comments("a = b; // note").unwrap();
        assert_eq!(out, "a = b;        ");
    }

    #[test]
    fn strip_keeps_string_literals() {
        let src = "x = \"//not a comment\";";
        assert_eq!(strip_comments(src).unwrap(), src);
        let src = "x = \"/* nope */\"; // yes";
        assert_eq!(strip_comments(src).unwrap(), "x = \"/* nope */\";       ");
    }

    #[test]
    fn strip_block_comment_across_lines() {
        let out = strip_comments("/* c1\nc2 */ y;").unwrap();
        // hand-tokenized: `/* c1` -> 5 spaces, `c2 */` -> 5 spaces
        assert_eq!(out, "     \n      y;");
        assert_eq!(out.matches('\n').count(), 1);
    }

    #[test]
    fn strip_unterminated_block() {
        let err = strip_comments("a;\nb; /* open\nmore").unwrap_err();
        assert!(matches!(err, CorpusError::UnterminatedComment { line: 2 }));
    }

    #[test]
    fn strip_escaped_quote_in_string() {
        let src = r#"s = "a\"//b"; // c"#;
        assert_eq!(strip_comments(src).unwrap(), r#"s = "a\"//b";     "#);
    }

    #[test]
    fn detect_single_line_module() {
        let spans = detect_modules("d", "module m; endmodule").unwrap();
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].module_id, "m");
        assert_eq!((spans[0].start_line, spans[0].end_line), (1, 1));
    }

    #[test]
    fn detect_two_modules() {
        let src = "module a(input x);\nendmodule\n\nmodule b;\n  wire w;\nendmodule\n";
        let spans = detect_modules("d", src).unwrap();
        assert_eq!(spans.len(), 2);
        assert_eq!((spans[0].start_line, spans[0].end_line), (1, 2));
        assert_eq!((spans[1].start_line, spans[1].end_line), (4, 6));
        assert_eq!(spans[1].text, "module b;\n  wire w;\nendmodule");
    }

    #[test]
    fn detect_ignores_commented_keywords() {
        let src = "// module fake;\nmodule real; /* endmodule */\nendmodule";
        let spans = detect_modules("d", src).unwrap();
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].module_id, "real");
        assert_eq!(spans[0].start_line, 2);
        // span text keeps the original comments
        assert!(spans[0].text.contains("/* endmodule */"));
    }

    #[test]
    fn detect_ignores_identifier_substrings() {
        let src = "module top;\n  wire module_en;\n  submodule u0();\nendmodule";
        let spans = detect_modules("d", src).unwrap();
        assert_eq!(spans.len(), 1);
        assert_eq!(spans[0].end_line, 4);
    }

    #[test]
    fn detect_structural_errors() {
        assert!(matches!(
            detect_modules("d", "wire x;\nendmodule"),
            Err(CorpusError::StrayEndmodule { line: 2 })
        ));
        assert!(matches!(
            detect_modules("d", "\nmodule m;\nwire x;"),
            Err(CorpusError::UnterminatedModule { line: 2 })
        ));
    }

    #[test]
    fn parse_label_rows() {
        let csv = "design_id,module_id,line_no,congestion,timing,wns_ns\n\
                   aes,aes_rcon,17,1,0,\n\
                   aes,aes_rcon,18,0,1,-0.12\n";
        let labels = parse_labels(csv.as_bytes(), Path::new("x.csv")).unwrap();
        assert_eq!(labels.len(), 2);
        assert!(labels[0].congestion && !labels[0].timing);
        assert_eq!(labels[0].wns_ns, None);
        assert!(!labels[1].congestion && labels[1].timing);
        assert_eq!(labels[1].wns_ns, Some(-0.12));
    }

    #[test]
    fn duplicate_labels_rejected() {
        let csv = "design_id,module_id,line_no,congestion,timing,wns_ns\n\
                   aes,aes_rcon,17,1,0,\n\
                   aes,aes_rcon,17,0,1,-0.12\n";
        let err = parse_labels(csv.as_bytes(), Path::new("x.csv")).unwrap_err();
        assert!(err.to_string().contains("aes/aes_rcon:17"), "{err}");
    }

    #[test]
    fn malformed_row_reports_row_number() {
        let csv = "design_id,module_id,line_no,congestion,timing,wns_ns\n\
                   aes,aes_rcon,17,1,0,\n\
                   aes,aes_rcon,x,1,0,\n";
        match parse_labels(csv.as_bytes(), Path::new("x.csv")) {
            Err(CorpusError::MalformedRow { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        let csv = "design_id,module_id,line_no,congestion,timing,wns_ns\naes,m,1,2,0,\n";
        assert!(matches!(
            parse_labels(csv.as_bytes(), Path::new("x.csv")),
            Err(CorpusError::MalformedRow { row: 2, .. })
        ));
    }

    fn module_with_lines(id: &str, n: usize) -> ModuleSpan {
        let mut lines = vec![format!("module {id};")];
        lines.extend((2..n).map(|i| format!("  wire w{i};")));
        lines.push("endmodule".into());
        ModuleSpan {
            module_id: id.into(),
            design_id: "d".into(),
            start_line: 1,
            end_line: n,
            text: lines.join("\n"),
        }
    }

    #[test]
    fn dataset_split_sizes_and_determinism() {
        let modules = vec![module_with_lines("a", 60), module_with_lines("b", 40)];
        let ds = Dataset::from_modules(modules.clone(), &[], 7, 0.8).unwrap();
        assert_eq!(ds.examples.len(), 100);
        assert_eq!(ds.count(Split::Train), 80);
        assert_eq!(ds.count(Split::Test), 20);
        let again = Dataset::from_modules(modules, &[], 7, 0.8).unwrap();
        let tags = |d: &Dataset| d.examples.iter().map(|e| e.split).collect::<Vec<_>>();
        assert_eq!(tags(&ds), tags(&again));
    }

    #[test]
    fn dataset_different_seeds_differ() {
        let modules = vec![module_with_lines("a", 1000)];
        let a = Dataset::from_modules(modules.clone(), &[], 1, 0.8).unwrap();
        let b = Dataset::from_modules(modules, &[], 2, 0.8).unwrap();
        let differing = a
            .examples
            .iter()
            .zip(&b.examples)
            .filter(|(x, y)| x.split != y.split)
            .count();
        // two independent 80/20 splits disagree on ~32% of 1000 lines
        assert!(differing > 100, "{differing}");
    }

    #[test]
    fn dataset_rejects_unknown_line() {
        let label = LabelRecord {
            design_id: "d".into(),
            module_id: "a".into(),
            line_no: 11,
            congestion: true,
            timing: false,
            wns_ns: None,
        };
        let err = Dataset::from_modules(vec![module_with_lines("a", 10)], &[label], 0, 0.8)
            .unwrap_err();
        assert!(err.to_string().contains("d/a:11"), "{err}");
    }

    #[test]
    fn dataset_defaults_unlabeled_to_negative() {
        let label = LabelRecord {
            design_id: "d".into(),
            module_id: "a".into(),
            line_no: 3,
            congestion: true,
            timing: true,
            wns_ns: Some(-0.2),
        };
        let module_row = LabelRecord {
            line_no: 0,
            wns_ns: Some(-0.5),
            ..label.clone()
        };
        let ds = Dataset::from_modules(
            vec![module_with_lines("a", 5)],
            &[label, module_row],
            0,
            0.8,
        )
        .unwrap();
        let flagged: Vec<_> = ds.examples.iter().filter(|e| e.congestion).collect();
        assert_eq!(flagged.len(), 1);
        assert_eq!(flagged[0].line.line_no, 3);
        assert_eq!(ds.examples.iter().filter(|e| e.wns_ns.is_some()).count(), 1);
        assert_eq!(ds.module_wns[&("d".into(), "a".into())], -0.5);
    }
}
