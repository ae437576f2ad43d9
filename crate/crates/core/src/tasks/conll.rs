//! CoNLL-2012 coreference reader.
//!
//! Parses the column format used by the OntoNotes distribution: documents
//! delimited by `#begin document (<id>); part <n>` / `#end document`, one
//! token per line with the coreference column last (`(12`, `12)`, `(12)`,
//! or `-`), sentences separated by blank lines. Yields one
//! [`CorefDocument`] per document part, with mention offsets in tokens.

use std::collections::BTreeMap;
use std::path::Path;

use super::coref::{CorefDocument, Mention};
use super::TaskError;

pub fn read_conll_file(path: impl AsRef<Path>) -> Result<Vec<CorefDocument>, TaskError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)
        .map_err(|source| TaskError::Io { path: path.display().to_string(), source })?;
    parse_conll(&text, &path.display().to_string())
}

pub fn parse_conll(text: &str, path: &str) -> Result<Vec<CorefDocument>, TaskError> {
    let schema = |line: usize, message: String| TaskError::Schema {
        path: path.to_string(),
        line,
        message,
    };

    let mut documents = Vec::new();
    let mut current: Option<DocBuilder> = None;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end();
        if let Some(rest) = line.strip_prefix("#begin document") {
            if current.is_some() {
                return Err(schema(line_no, "nested #begin document".into()));
            }
            let doc_id = parse_begin_header(rest)
                .ok_or_else(|| schema(line_no, format!("malformed begin header: {rest:?}")))?;
            current = Some(DocBuilder::new(doc_id));
            continue;
        }
        if line.starts_with("#end document") {
            let builder = current
                .take()
                .ok_or_else(|| schema(line_no, "#end document without #begin".into()))?;
            documents.push(builder.finish(line_no, path)?);
            continue;
        }
        if line.starts_with('#') {
            continue;
        }
        let Some(builder) = current.as_mut() else {
            if line.trim().is_empty() {
                continue;
            }
            return Err(schema(line_no, "token line outside a document".into()));
        };
        if line.trim().is_empty() {
            builder.end_sentence();
            continue;
        }
        let columns: Vec<&str> = line.split_whitespace().collect();
        if columns.len() < 4 {
            return Err(schema(line_no, format!("expected >= 4 columns, got {}", columns.len())));
        }
        let word = columns[3];
        let coref = *columns.last().expect("non-empty columns");
        builder.push_token(word, coref, line_no, path)?;
    }
    if current.is_some() {
        return Err(TaskError::Schema {
            path: path.to_string(),
            line: text.lines().count(),
            message: "missing #end document".into(),
        });
    }
    Ok(documents)
}

fn parse_begin_header(rest: &str) -> Option<String> {
    // "(bn/abc/00/abc_0010); part 000"
    let rest = rest.trim();
    let open = rest.find('(')?;
    let close = rest.find(')')?;
    let id = &rest[open + 1..close];
    let part = rest[close + 1..]
        .trim_start_matches(';')
        .trim()
        .strip_prefix("part")
        .map(str::trim)
        .unwrap_or("0");
    Some(format!("{id}#{part}"))
}

struct DocBuilder {
    doc_id: String,
    sentences: Vec<Vec<String>>,
    current: Vec<String>,
    /// Open spans: cluster id -> stack of (sentence, start token).
    open: BTreeMap<u32, Vec<(usize, usize)>>,
    /// Closed mentions: (sentence, start, end inclusive, cluster id).
    mentions: Vec<(usize, usize, usize, u32)>,
}

impl DocBuilder {
    fn new(doc_id: String) -> Self {
        Self {
            doc_id,
            sentences: Vec::new(),
            current: Vec::new(),
            open: BTreeMap::new(),
            mentions: Vec::new(),
        }
    }

    fn end_sentence(&mut self) {
        if !self.current.is_empty() {
            self.sentences.push(std::mem::take(&mut self.current));
        }
    }

    fn push_token(
        &mut self,
        word: &str,
        coref: &str,
        line: usize,
        path: &str,
    ) -> Result<(), TaskError> {
        let sentence = self.sentences.len();
        let token = self.current.len();
        self.current.push(word.to_string());
        if coref == "-" || coref == "_" {
            return Ok(());
        }
        for part in coref.split('|') {
            let opens = part.starts_with('(');
            let closes = part.ends_with(')');
            let id: u32 = part
                .trim_start_matches('(')
                .trim_end_matches(')')
                .parse()
                .map_err(|_| TaskError::Schema {
                    path: path.to_string(),
                    line,
                    message: format!("malformed coref field {part:?}"),
                })?;
            if opens {
                self.open.entry(id).or_default().push((sentence, token));
            }
            if closes {
                let (start_sentence, start) = self
                    .open
                    .get_mut(&id)
                    .and_then(Vec::pop)
                    .ok_or_else(|| TaskError::Schema {
                        path: path.to_string(),
                        line,
                        message: format!("span close without open for cluster {id}"),
                    })?;
                if start_sentence != sentence {
                    return Err(TaskError::Schema {
                        path: path.to_string(),
                        line,
                        message: format!("cluster {id} span crosses a sentence boundary"),
                    });
                }
                self.mentions.push((sentence, start, token, id));
            }
        }
        Ok(())
    }

    fn finish(mut self, line: usize, path: &str) -> Result<CorefDocument, TaskError> {
        self.end_sentence();
        if let Some((&id, _)) = self.open.iter().find(|(_, stack)| !stack.is_empty()) {
            return Err(TaskError::Schema {
                path: path.to_string(),
                line,
                message: format!("unclosed coreference span for cluster {id}"),
            });
        }
        self.mentions.sort_unstable();
        let sentences: Vec<String> =
            self.sentences.iter().map(|tokens| tokens.join(" ")).collect();
        let mut clusters: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        let mentions: Vec<Mention> = self
            .mentions
            .iter()
            .enumerate()
            .map(|(index, &(sentence, start, end, id))| {
                clusters.entry(id).or_default().push(index);
                Mention {
                    surface: self.sentences[sentence][start..=end].join(" "),
                    sentence,
                    start,
                    end: end + 1,
                }
            })
            .collect();
        let doc = CorefDocument {
            doc_id: self.doc_id,
            sentences,
            mentions,
            clusters: clusters.into_values().collect(),
            pairs: None,
        };
        doc.validate()?;
        Ok(doc)
    }
}
