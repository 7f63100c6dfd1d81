use std::path::Path;

use serde::{Deserialize, Serialize};

use super::KbError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Section {
    pub heading: String,
    #[serde(default)]
    pub body: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub children: Vec<Section>,
}

impl Section {
    pub fn new(heading: impl Into<String>, body: impl Into<String>) -> Self {
        Self {
            heading: heading.into(),
            body: body.into(),
            children: Vec::new(),
        }
    }

    pub fn with_children(mut self, children: Vec<Section>) -> Self {
        self.children = children;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceDocument {
    pub software: String,
    pub language: String,
    #[serde(default)]
    pub sections: Vec<Section>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DocChunk {
    pub chunk_id: u64,
    pub software: String,
    pub section_path: Vec<String>,
    pub content: String,
    /// Language of the source document.
    pub language: String,
}

impl DocChunk {
    /// `<software> — <h1 > h2 > ...>`
    pub fn title(&self) -> String {
        format!("{} — {}", self.software, self.section_path.join(" > "))
    }

    /// Text of the original variant: title line, then the content.
    pub fn original_text(&self) -> String {
        format!("{}\n{}", self.title(), self.content)
    }
}

/// Splits a document at its headings. Every section with a non-empty body
/// becomes one chunk whose path is the heading ancestry; chunks keep
/// document order and take consecutive ids from `first_id`.
pub fn chunk_document(doc: &SourceDocument, first_id: u64) -> Vec<DocChunk> {
    fn walk(
        doc: &SourceDocument,
        sections: &[Section],
        path: &mut Vec<String>,
        next: &mut u64,
        out: &mut Vec<DocChunk>,
    ) {
        for s in sections {
            path.push(s.heading.trim().to_owned());
            let body = s.body.trim();
            if !body.is_empty() {
                out.push(DocChunk {
                    chunk_id: *next,
                    software: doc.software.clone(),
                    section_path: path.clone(),
                    content: body.to_owned(),
                    language: doc.language.clone(),
                });
                *next += 1;
            }
            walk(doc, &s.children, path, next, out);
            path.pop();
        }
    }
    let mut out = Vec::new();
    let mut next = first_id;
    walk(doc, &doc.sections, &mut Vec::new(), &mut next, &mut out);
    out
}

/// Parses the markdown document format: leading `software:` and
/// `language:` header lines, then `#`-style headings with bodies.
pub fn parse_markdown(text: &str) -> Result<SourceDocument, KbError> {
    let mut software = None;
    let mut language = None;
    let mut lines = text.lines().peekable();
    while let Some(line) = lines.peek() {
        let l = line.trim();
        if l.starts_with('#') {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            match k.trim().to_ascii_lowercase().as_str() {
                "software" => software = Some(v.trim().to_owned()),
                "language" => language = Some(v.trim().to_owned()),
                _ => {}
            }
        }
        lines.next();
    }
    let software = software
        .filter(|s| !s.is_empty())
        .ok_or_else(|| KbError::InvalidDocument("missing `software:` header".into()))?;

    // (level, section) pairs in document order, folded into a tree below
    let mut flat: Vec<(usize, Section)> = Vec::new();
    for line in lines {
        let t = line.trim_start();
        let level = t.chars().take_while(|&c| c == '#').count();
        if (1..=6).contains(&level) && t[level..].starts_with(' ') {
            flat.push((level, Section::new(t[level..].trim(), "")));
        } else if let Some((_, s)) = flat.last_mut() {
            if !s.body.is_empty() || !line.trim().is_empty() {
                s.body.push_str(line.trim_end());
                s.body.push('\n');
            }
        }
    }
    for (_, s) in &mut flat {
        s.body = s.body.trim().to_owned();
    }

    fn build(flat: &mut std::iter::Peekable<std::vec::IntoIter<(usize, Section)>>, min_level: usize) -> Vec<Section> {
        let mut out = Vec::new();
        while let Some((level, _)) = flat.peek() {
            if *level < min_level {
                break;
            }
            let (level, mut s) = flat.next().expect("peeked");
            s.children = build(flat, level + 1);
            out.push(s);
        }
        out
    }
    let mut it = flat.into_iter().peekable();
    let mut sections = Vec::new();
    while it.peek().is_some() {
        // a shallower heading after deeper ones starts a new top-level run
        let level = it.peek().map(|(l, _)| *l).unwrap_or(1);
        sections.extend(build(&mut it, level));
    }
    Ok(SourceDocument {
        software,
        language: language.unwrap_or_else(|| "en".to_owned()),
        sections,
    })
}

/// Loads every `.md` and `.json` document in `dir`, sorted by file name.
pub fn load_documents(dir: &Path) -> Result<Vec<SourceDocument>, KbError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| KbError::Io(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| matches!(p.extension().and_then(|e| e.to_str()), Some("md" | "json")))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| KbError::Io(format!("{}: {e}", p.display())))?;
            let doc = if p.extension().and_then(|e| e.to_str()) == Some("json") {
                serde_json::from_str::<SourceDocument>(&text)
                    .map_err(|e| KbError::InvalidDocument(format!("{}: {e}", p.display())))?
            } else {
                parse_markdown(&text).map_err(|e| KbError::InvalidDocument(format!("{}: {e}", p.display())))?
            };
            if doc.software.trim().is_empty() {
                return Err(KbError::InvalidDocument(format!("{}: empty software", p.display())));
            }
            Ok(doc)
        })
        .collect()
}
