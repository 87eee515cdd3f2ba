use std::fmt::Write as _;
use std::path::Path;

use super::{ClickLevel, LabeledPair};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairFormat {
    Tsv,
    JsonLines,
}

impl PairFormat {
    /// `.jsonl` and `.json` select JSON lines, anything else TSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl" | "json") => Self::JsonLines,
            _ => Self::Tsv,
        }
    }
}

fn read_utf8(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path)?;
    String::from_utf8(bytes).map_err(|e| Error::Utf8 {
        offset: e.utf8_error().valid_up_to(),
    })
}

pub fn load_pairs(path: impl AsRef<Path>, format: PairFormat) -> Result<Vec<LabeledPair>> {
    let path = path.as_ref();
    parse_pairs(&read_utf8(path)?, format, &path.display().to_string())
}

pub(crate) fn parse_pairs(contents: &str, format: PairFormat, path: &str) -> Result<Vec<LabeledPair>> {
    let mut pairs = Vec::new();
    for (i, line) in contents.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: path.to_string(),
            line: i + 1,
            message,
        };
        let pair = match format {
            PairFormat::Tsv => parse_tsv_line(line).map_err(err)?,
            PairFormat::JsonLines => serde_json::from_str::<LabeledPair>(line).map_err(|e| err(e.to_string()))?,
        };
        pair.validate().map_err(|e| err(e.to_string()))?;
        pairs.push(pair);
    }
    Ok(pairs)
}

fn parse_tsv_line(line: &str) -> std::result::Result<LabeledPair, String> {
    let cols: Vec<&str> = line.split('\t').collect();
    if !(2..=4).contains(&cols.len()) {
        return Err(format!("expected 2 to 4 tab-separated columns, found {}", cols.len()));
    }
    let label = match cols.get(2).map(|s| s.trim()) {
        None | Some("") => None,
        Some(s) => Some(s.parse::<u8>().map_err(|_| format!("label {s:?} is not an integer"))?),
    };
    let click_level = match cols.get(3).map(|s| s.trim()) {
        None | Some("") => None,
        Some(s) => Some(s.parse::<ClickLevel>().map_err(|e| e.to_string())?),
    };
    Ok(LabeledPair {
        query: cols[0].to_string(),
        title: cols[1].to_string(),
        label,
        click_level,
    })
}

pub fn save_pairs(pairs: &[LabeledPair], path: impl AsRef<Path>, format: PairFormat) -> Result<()> {
    std::fs::write(path, format_pairs(pairs, format)?)?;
    Ok(())
}

pub(crate) fn format_pairs(pairs: &[LabeledPair], format: PairFormat) -> Result<String> {
    let mut out = String::new();
    for p in pairs {
        match format {
            PairFormat::Tsv => {
                if [&p.query, &p.title].iter().any(|s| s.contains(['\t', '\n', '\r'])) {
                    return Err(Error::Input(format!("pair {:?} contains a tab or newline", p.query)));
                }
                out.push_str(&p.query);
                out.push('\t');
                out.push_str(&p.title);
                if p.label.is_some() || p.click_level.is_some() {
                    out.push('\t');
                    if let Some(l) = p.label {
                        let _ = write!(out, "{l}");
                    }
                }
                if let Some(c) = p.click_level {
                    out.push('\t');
                    out.push_str(c.as_str());
                }
            }
            PairFormat::JsonLines => out.push_str(&serde_json::to_string(p)?),
        }
        out.push('\n');
    }
    Ok(out)
}

/// Reads `query<TAB>count` lines.
pub fn load_frequencies(path: impl AsRef<Path>) -> Result<Vec<(String, u64)>> {
    let path = path.as_ref();
    let name = path.display().to_string();
    let contents = read_utf8(path)?;
    let mut out = Vec::new();
    for (i, line) in contents.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let err = |message: String| Error::Parse {
            path: name.clone(),
            line: i + 1,
            message,
        };
        let (q, c) = line.rsplit_once('\t').ok_or_else(|| err("expected query<TAB>count".into()))?;
        let c = c.trim().parse().map_err(|_| err(format!("count {c:?} is not an integer")))?;
        out.push((q.to_string(), c));
    }
    Ok(out)
}

pub fn save_frequencies(freq: &[(String, u64)], path: impl AsRef<Path>) -> Result<()> {
    let body: String = freq.iter().map(|(q, c)| format!("{q}\t{c}\n")).collect();
    std::fs::write(path, body)?;
    Ok(())
}
