//! Prompt and output templates.
//!
//! A template file is plain text split into sections by `@@ <name>` header
//! lines. Every body line ends with a newline, except that a trailing `\` on
//! the last line of a body suppresses it. Recognised sections and their
//! placeholders:
//!
//! | section         | placeholders                                   |
//! |-----------------|------------------------------------------------|
//! | `prompt`        | `{instruction}` `{attributes}` `{documents}`   |
//! | `attribute`     | `{name}`                                       |
//! | `document`      | `{id}` `{text}`                                |
//! | `output_open`   |                                                |
//! | `doc_open`      | `{id}`                                         |
//! | `row`           | `{name}` `{value}`                             |
//! | `doc_close`     |                                                |
//! | `output_close`  |                                                |
//!
//! The row must contain `{value}` after at least one byte of text (the slot
//! anchor) and a newline somewhere after it: the newline is the value
//! delimiter. Missing sections keep their defaults. Any other brace text is
//! literal.

use std::fmt::Write as _;

use crate::error::{HpdError, Result};

pub const DEFAULT_TEMPLATE: &str = r#"@@ prompt
{instruction}
Attributes:
{attributes}
Products:
{documents}
Output:
@@ attribute
- {name}
@@ document
<product id="{id}">{text}</product>
@@ output_open
{
@@ doc_open
"{id}": {
@@ row
"{name}": "{value}"
@@ doc_close
}
@@ output_close
}
"#;

pub const DEFAULT_INSTRUCTION: &str =
    "Extract every listed attribute for each product below. Write null when a product does not state the value.";

/// Splits a row around its `{value}` field.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowParts {
    /// Text before `{value}`, still containing `{name}`.
    pub head: String,
    /// Text between `{value}` and the delimiting newline (e.g. a closing quote).
    pub tail: String,
    /// Text after the delimiting newline, usually empty.
    pub rest: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Template {
    prompt: String,
    attribute: String,
    document: String,
    output_open: String,
    doc_open: String,
    row: String,
    doc_close: String,
    output_close: String,
}

impl Default for Template {
    fn default() -> Self {
        Self::parse(DEFAULT_TEMPLATE).expect("embedded template is valid")
    }
}

impl Template {
    pub fn parse(text: &str) -> Result<Self> {
        let mut t = Self {
            prompt: String::new(),
            attribute: String::new(),
            document: String::new(),
            output_open: String::new(),
            doc_open: String::new(),
            row: String::new(),
            doc_close: String::new(),
            output_close: String::new(),
        };
        let defaults = if text == DEFAULT_TEMPLATE {
            None
        } else {
            Some(Self::default())
        };
        let mut seen = Vec::new();
        let mut current: Option<(String, Vec<&str>)> = None;
        let mut flush = |t: &mut Self, section: Option<(String, Vec<&str>)>| -> Result<()> {
            if let Some((name, lines)) = section {
                let body = join_body(&lines);
                *t.section_mut(&name)? = body;
                seen.push(name);
            }
            Ok(())
        };
        for line in text.lines() {
            if let Some(name) = line.strip_prefix("@@") {
                flush(&mut t, current.take())?;
                current = Some((name.trim().to_owned(), Vec::new()));
            } else if let Some((_, lines)) = current.as_mut() {
                lines.push(line);
            } else if !line.trim().is_empty() {
                return Err(HpdError::Config(format!(
                    "template text before the first section header: {line:?}"
                )));
            }
        }
        flush(&mut t, current.take())?;
        if let Some(defaults) = defaults {
            for name in SECTIONS {
                if !seen.iter().any(|s| s == name) {
                    *t.section_mut(name)? = defaults.section(name).to_owned();
                }
            }
        }
        t.validate()?;
        Ok(t)
    }

    fn section(&self, name: &str) -> &str {
        match name {
            "prompt" => &self.prompt,
            "attribute" => &self.attribute,
            "document" => &self.document,
            "output_open" => &self.output_open,
            "doc_open" => &self.doc_open,
            "row" => &self.row,
            "doc_close" => &self.doc_close,
            "output_close" => &self.output_close,
            _ => unreachable!("unknown section {name}"),
        }
    }

    fn section_mut(&mut self, name: &str) -> Result<&mut String> {
        Ok(match name {
            "prompt" => &mut self.prompt,
            "attribute" => &mut self.attribute,
            "document" => &mut self.document,
            "output_open" => &mut self.output_open,
            "doc_open" => &mut self.doc_open,
            "row" => &mut self.row,
            "doc_close" => &mut self.doc_close,
            "output_close" => &mut self.output_close,
            other => return Err(HpdError::Config(format!("unknown template section {other:?}"))),
        })
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HpdError::Config(m.to_owned()));
        if self.row.matches("{value}").count() != 1 {
            return bad("row section needs exactly one {value}");
        }
        if !self.row.contains("{name}") {
            return bad("row section needs {name}");
        }
        let parts = self.row_parts();
        if parts.head.is_empty() {
            return bad("row section needs text before {value} to anchor the slot");
        }
        if !self.row[self.row.find("{value}").unwrap()..].contains('\n') {
            return bad("row section needs a newline after {value}");
        }
        if parts.head.contains("{value}") || parts.tail.contains("{name}") || parts.rest.contains("{name}") {
            return bad("{name} must precede {value} in the row");
        }
        if self.end_marker().is_empty() {
            return bad("doc_close and output_close cannot both be empty");
        }
        Ok(())
    }

    pub fn row_parts(&self) -> RowParts {
        let at = self.row.find("{value}").unwrap_or(self.row.len());
        let head = self.row[..at].to_owned();
        let after = &self.row[(at + "{value}".len()).min(self.row.len())..];
        let nl = after.find('\n').unwrap_or(after.len());
        RowParts {
            head,
            tail: after[..nl].to_owned(),
            rest: after.get(nl + 1..).unwrap_or("").to_owned(),
        }
    }

    /// Text that marks the end of a complete autoregressive output.
    pub fn end_marker(&self) -> String {
        format!("{}{}", self.doc_close, self.output_close)
    }

    pub fn output_open(&self) -> &str {
        &self.output_open
    }

    pub fn doc_open(&self, id: &str) -> String {
        self.doc_open.replace("{id}", id)
    }

    pub fn doc_close(&self) -> &str {
        &self.doc_close
    }

    pub fn output_close(&self) -> &str {
        &self.output_close
    }

    pub fn render_prompt<'a>(
        &self,
        instruction: &str,
        attributes: &[String],
        docs: impl IntoIterator<Item = (&'a str, &'a [u8])>,
    ) -> Vec<u8> {
        let mut attrs = String::new();
        for a in attributes {
            attrs.push_str(&self.attribute.replace("{name}", a));
        }
        let mut documents = Vec::new();
        for (id, text) in docs {
            let (before, after) = self
                .document
                .replace("{id}", id)
                .split_once("{text}")
                .map(|(a, b)| (a.to_owned(), b.to_owned()))
                .unwrap_or_else(|| (self.document.replace("{id}", id), String::new()));
            documents.extend_from_slice(before.as_bytes());
            documents.extend_from_slice(text);
            documents.extend_from_slice(after.as_bytes());
        }
        // Section bodies end in newlines; the prompt line already supplies one.
        let attrs = attrs.strip_suffix('\n').unwrap_or(&attrs);
        let documents = documents.strip_suffix(b"\n").unwrap_or(&documents);

        let mut out = Vec::new();
        let mut rest = self.prompt.as_str();
        while let Some(start) = rest.find('{') {
            out.extend_from_slice(rest[..start].as_bytes());
            let tail = &rest[start..];
            if let Some(t) = tail.strip_prefix("{instruction}") {
                out.extend_from_slice(instruction.as_bytes());
                rest = t;
            } else if let Some(t) = tail.strip_prefix("{attributes}") {
                out.extend_from_slice(attrs.as_bytes());
                rest = t;
            } else if let Some(t) = tail.strip_prefix("{documents}") {
                out.extend_from_slice(documents);
                rest = t;
            } else {
                out.push(b'{');
                rest = &tail[1..];
            }
        }
        out.extend_from_slice(rest.as_bytes());
        out
    }

    /// Full structured output with every value filled in. `value` returns
    /// `None` for keys that have no value; those render as an empty field.
    pub fn render_output(
        &self,
        doc_ids: &[String],
        attributes: &[String],
        mut value: impl FnMut(&str, &str) -> Option<String>,
    ) -> String {
        let parts = self.row_parts();
        let mut out = self.output_open.clone();
        for id in doc_ids {
            out.push_str(&self.doc_open(id));
            for a in attributes {
                let v = value(id, a).unwrap_or_default();
                let _ = write!(
                    out,
                    "{}{}{}\n{}",
                    parts.head.replace("{name}", a),
                    v,
                    parts.tail,
                    parts.rest
                );
            }
            out.push_str(&self.doc_close);
        }
        out.push_str(&self.output_close);
        out
    }
}

const SECTIONS: [&str; 8] = [
    "prompt",
    "attribute",
    "document",
    "output_open",
    "doc_open",
    "row",
    "doc_close",
    "output_close",
];

fn join_body(lines: &[&str]) -> String {
    let mut body = String::new();
    for (i, line) in lines.iter().enumerate() {
        if i + 1 == lines.len() {
            if let Some(stripped) = line.strip_suffix('\\') {
                body.push_str(stripped);
                return body;
            }
        }
        body.push_str(line);
        body.push('\n');
    }
    body
}
