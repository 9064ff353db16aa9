use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Non-empty lines of a UTF-8 file, one document each.
pub fn read_documents(path: impl AsRef<Path>) -> Result<Vec<String>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Input(format!("cannot read corpus {}: {e}", path.display())))?;
    let docs: Vec<String> = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect();
    if docs.is_empty() {
        return Err(Error::input(format!("corpus {} has no documents", path.display())));
    }
    Ok(docs)
}

/// One `text<TAB>label` line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClassificationExample {
    pub text: String,
    pub label: String,
}

/// One CoNLL block of `token tag` lines.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaggingExample {
    pub tokens: Vec<String>,
    pub tags: Vec<String>,
}

pub fn parse_classification(text: &str) -> Result<Vec<ClassificationExample>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let (t, l) = line
            .rsplit_once('\t')
            .ok_or_else(|| Error::input(format!("line {}: expected text<TAB>label", i + 1)))?;
        let label = l.trim();
        if label.is_empty() {
            return Err(Error::input(format!("line {}: empty label", i + 1)));
        }
        out.push(ClassificationExample { text: t.to_string(), label: label.to_string() });
    }
    Ok(out)
}

pub fn parse_tagging(text: &str) -> Result<Vec<TaggingExample>> {
    let mut out = Vec::new();
    let mut cur = TaggingExample { tokens: Vec::new(), tags: Vec::new() };
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            if !cur.tokens.is_empty() {
                out.push(std::mem::replace(&mut cur, TaggingExample { tokens: Vec::new(), tags: Vec::new() }));
            }
            continue;
        }
        let mut parts = line.split_whitespace();
        match (parts.next(), parts.next(), parts.next()) {
            (Some(tok), Some(tag), None) => {
                cur.tokens.push(tok.to_string());
                cur.tags.push(tag.to_string());
            }
            _ => return Err(Error::input(format!("line {}: expected `token tag`", i + 1))),
        }
    }
    if !cur.tokens.is_empty() {
        out.push(cur);
    }
    Ok(out)
}

pub fn load_classification(path: impl AsRef<Path>) -> Result<Vec<ClassificationExample>> {
    parse_classification(&std::fs::read_to_string(path)?)
}

pub fn load_tagging(path: impl AsRef<Path>) -> Result<Vec<TaggingExample>> {
    parse_tagging(&std::fs::read_to_string(path)?)
}

pub fn format_classification(examples: &[ClassificationExample]) -> String {
    let mut s = String::new();
    for e in examples {
        let _ = writeln!(s, "{}\t{}", e.text, e.label);
    }
    s
}

pub fn format_tagging(examples: &[TaggingExample]) -> String {
    let mut s = String::new();
    for e in examples {
        for (t, g) in e.tokens.iter().zip(&e.tags) {
            let _ = writeln!(s, "{t} {g}");
        }
        s.push('\n');
    }
    s
}
