//! nbformat-4 documents: parsing, the read-only transform, and the embed page.
//!
//! Validation is deliberately shallow. A document must be a JSON object with
//! `nbformat == 4` and a `cells` array whose entries have a known
//! `cell_type`; everything else (notebook metadata, cell metadata, code cell
//! outputs, unknown keys) is carried through untouched.

use std::fmt::Write as _;

use percent_encoding::{utf8_percent_encode, NON_ALPHANUMERIC};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::config::GatewayConfig;

pub type Metadata = Map<String, Value>;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum NotebookError {
    #[error("not well-formed JSON (line {line}, column {column}): {message}")]
    NotJson {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema violation at `{path}`: {reason}")]
    SchemaViolation { path: String, reason: String },
}

impl NotebookError {
    fn schema(path: impl Into<String>, reason: impl Into<String>) -> Self {
        NotebookError::SchemaViolation {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Path of the offending element, or `""` for JSON syntax errors.
    pub fn path(&self) -> &str {
        match self {
            NotebookError::NotJson { .. } => "",
            NotebookError::SchemaViolation { path, .. } => path,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CellType {
    Code,
    Markdown,
    Raw,
}

impl CellType {
    pub fn as_str(self) -> &'static str {
        match self {
            CellType::Code => "code",
            CellType::Markdown => "markdown",
            CellType::Raw => "raw",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "code" => Some(CellType::Code),
            "markdown" => Some(CellType::Markdown),
            "raw" => Some(CellType::Raw),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub cell_type: CellType,
    pub source: String,
    pub metadata: Metadata,
    /// Output records, kept as opaque JSON. Always empty for non-code cells.
    pub outputs: Vec<Value>,
    pub execution_count: Option<i64>,
    /// Keys this model does not interpret (`id`, `attachments`, ...).
    pub extra: Metadata,
}

impl Cell {
    pub fn new(cell_type: CellType, source: impl Into<String>) -> Self {
        Cell {
            cell_type,
            source: source.into(),
            metadata: Metadata::new(),
            outputs: Vec::new(),
            execution_count: None,
            extra: Metadata::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NotebookDocument {
    pub nbformat: u64,
    pub nbformat_minor: u64,
    pub metadata: Metadata,
    pub cells: Vec<Cell>,
    pub extra: Metadata,
}

impl NotebookDocument {
    pub fn empty() -> Self {
        NotebookDocument {
            nbformat: 4,
            nbformat_minor: 5,
            metadata: Metadata::new(),
            cells: Vec::new(),
            extra: Metadata::new(),
        }
    }

    /// `metadata.title`, when it is a non-blank string.
    pub fn title(&self) -> Option<&str> {
        self.metadata
            .get("title")
            .and_then(Value::as_str)
            .map(str::trim)
            .filter(|t| !t.is_empty())
    }

    pub fn to_value(&self) -> Value {
        let mut obj = Map::new();
        obj.insert("nbformat".into(), Value::from(self.nbformat));
        obj.insert("nbformat_minor".into(), Value::from(self.nbformat_minor));
        obj.insert("metadata".into(), Value::Object(self.metadata.clone()));
        obj.insert(
            "cells".into(),
            Value::Array(self.cells.iter().map(cell_to_value).collect()),
        );
        for (k, v) in &self.extra {
            obj.insert(k.clone(), v.clone());
        }
        Value::Object(obj)
    }

    /// Canonical serialization: one-space indented JSON, sources as strings.
    pub fn to_json(&self) -> String {
        let mut out = Vec::new();
        let fmt = serde_json::ser::PrettyFormatter::with_indent(b" ");
        let mut ser = serde_json::Serializer::with_formatter(&mut out, fmt);
        serde::Serialize::serialize(&self.to_value(), &mut ser)
            .expect("serializing a JSON value cannot fail");
        out.push(b'\n');
        String::from_utf8(out).expect("serde_json emits UTF-8")
    }
}

fn cell_to_value(cell: &Cell) -> Value {
    let mut obj = Map::new();
    obj.insert("cell_type".into(), Value::from(cell.cell_type.as_str()));
    for (k, v) in &cell.extra {
        obj.insert(k.clone(), v.clone());
    }
    obj.insert("metadata".into(), Value::Object(cell.metadata.clone()));
    obj.insert("source".into(), Value::from(cell.source.as_str()));
    if cell.cell_type == CellType::Code {
        obj.insert(
            "execution_count".into(),
            cell.execution_count.map_or(Value::Null, Value::from),
        );
        obj.insert("outputs".into(), Value::Array(cell.outputs.clone()));
    }
    Value::Object(obj)
}

pub fn parse_notebook(raw: &[u8]) -> Result<NotebookDocument, NotebookError> {
    let value: Value = serde_json::from_slice(raw).map_err(|e| NotebookError::NotJson {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    notebook_from_value(value)
}

pub fn notebook_from_value(value: Value) -> Result<NotebookDocument, NotebookError> {
    let Value::Object(mut obj) = value else {
        return Err(NotebookError::schema("", "top level must be an object"));
    };

    let nbformat = match obj.remove("nbformat") {
        Some(v) => v
            .as_u64()
            .ok_or_else(|| NotebookError::schema("nbformat", "must be an integer"))?,
        None => return Err(NotebookError::schema("nbformat", "missing")),
    };
    if nbformat != 4 {
        return Err(NotebookError::schema(
            "nbformat",
            format!("unsupported major version {nbformat}, only 4 is accepted"),
        ));
    }
    let nbformat_minor = match obj.remove("nbformat_minor") {
        Some(v) => v
            .as_u64()
            .ok_or_else(|| NotebookError::schema("nbformat_minor", "must be an integer"))?,
        None => 0,
    };
    let metadata = match obj.remove("metadata") {
        Some(Value::Object(m)) => m,
        None => Metadata::new(),
        Some(_) => return Err(NotebookError::schema("metadata", "must be an object")),
    };
    let cells = match obj.remove("cells") {
        Some(Value::Array(cells)) => cells
            .into_iter()
            .enumerate()
            .map(|(i, c)| cell_from_value(i, c))
            .collect::<Result<Vec<_>, _>>()?,
        Some(_) => return Err(NotebookError::schema("cells", "must be an array")),
        None => return Err(NotebookError::schema("cells", "missing")),
    };

    Ok(NotebookDocument {
        nbformat,
        nbformat_minor,
        metadata,
        cells,
        extra: obj,
    })
}

fn cell_from_value(index: usize, value: Value) -> Result<Cell, NotebookError> {
    let at = |field: &str| {
        if field.is_empty() {
            format!("cells[{index}]")
        } else {
            format!("cells[{index}].{field}")
        }
    };
    let Value::Object(mut obj) = value else {
        return Err(NotebookError::schema(at(""), "cell must be an object"));
    };

    let cell_type = match obj.remove("cell_type") {
        Some(Value::String(s)) => CellType::parse(&s).ok_or_else(|| {
            NotebookError::schema(at("cell_type"), format!("unknown cell type `{s}`"))
        })?,
        Some(_) => return Err(NotebookError::schema(at("cell_type"), "must be a string")),
        None => return Err(NotebookError::schema(at("cell_type"), "missing")),
    };
    let source = match obj.remove("source") {
        Some(Value::String(s)) => s,
        Some(Value::Array(lines)) => {
            let mut s = String::new();
            for (j, line) in lines.iter().enumerate() {
                let line = line.as_str().ok_or_else(|| {
                    NotebookError::schema(at(&format!("source[{j}]")), "must be a string")
                })?;
                s.push_str(line);
            }
            s
        }
        None => String::new(),
        Some(_) => {
            return Err(NotebookError::schema(
                at("source"),
                "must be a string or list of strings",
            ))
        }
    };
    let metadata = match obj.remove("metadata") {
        Some(Value::Object(m)) => m,
        None | Some(Value::Null) => Metadata::new(),
        Some(_) => return Err(NotebookError::schema(at("metadata"), "must be an object")),
    };

    let outputs = obj.remove("outputs");
    let execution_count = obj.remove("execution_count");
    let (outputs, execution_count) = if cell_type == CellType::Code {
        let outputs = match outputs {
            Some(Value::Array(o)) => o,
            None => Vec::new(),
            Some(_) => return Err(NotebookError::schema(at("outputs"), "must be an array")),
        };
        let count = match execution_count {
            None | Some(Value::Null) => None,
            Some(v) => Some(v.as_i64().ok_or_else(|| {
                NotebookError::schema(at("execution_count"), "must be an integer or null")
            })?),
        };
        (outputs, count)
    } else {
        if outputs.is_some() {
            return Err(NotebookError::schema(
                at("outputs"),
                format!("{} cells carry no outputs", cell_type.as_str()),
            ));
        }
        if execution_count.is_some() {
            return Err(NotebookError::schema(
                at("execution_count"),
                format!("{} cells carry no execution count", cell_type.as_str()),
            ));
        }
        (Vec::new(), None)
    };

    Ok(Cell {
        cell_type,
        source,
        metadata,
        outputs,
        execution_count,
        extra: obj,
    })
}

/// Marks every cell non-editable and non-deletable. Nothing else changes.
pub fn apply_read_only(mut doc: NotebookDocument) -> NotebookDocument {
    for cell in &mut doc.cells {
        cell.metadata.insert("editable".into(), Value::Bool(false));
        cell.metadata.insert("deletable".into(), Value::Bool(false));
    }
    doc
}

/// Renders the page served at `/`: a title, a frame onto the proxied
/// notebook UI at the advertised authority, and a static listing of cells.
///
/// The output carries no inline scripts or event-handler attributes so it
/// works under the default Content-Security-Policy.
pub fn render_embed_page(doc: &NotebookDocument, cfg: &GatewayConfig) -> String {
    let title = doc.title().unwrap_or(&cfg.default_title);
    let title = escape_html(title);
    let frame_src = escape_html(&embed_url(cfg));

    let mut html = String::with_capacity(1024);
    html.push_str("<!DOCTYPE html>\n<html lang=\"en\">\n<head>\n");
    html.push_str("<meta charset=\"utf-8\">\n");
    html.push_str("<meta name=\"viewport\" content=\"width=device-width, initial-scale=1\">\n");
    let _ = writeln!(html, "<title>{title}</title>");
    html.push_str("</head>\n<body>\n");
    let _ = writeln!(html, "<header><h1>{title}</h1></header>");
    html.push_str("<main>\n");
    let _ = writeln!(
        html,
        "<iframe class=\"notebook-frame\" src=\"{frame_src}\" title=\"{title}\" width=\"100%\" height=\"800\"></iframe>"
    );
    html.push_str("<section class=\"notebook-body\">\n");
    for (i, cell) in doc.cells.iter().enumerate() {
        let kind = cell.cell_type.as_str();
        let _ = writeln!(
            html,
            "<article class=\"cell cell-{kind}\" data-index=\"{i}\"><pre>{}</pre></article>",
            escape_html(&cell.source)
        );
    }
    html.push_str("</section>\n</main>\n</body>\n</html>\n");
    html
}

/// URL of the notebook inside the upstream UI, as a client will see it.
pub fn embed_url(cfg: &GatewayConfig) -> String {
    let name = cfg
        .notebook_path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    format!(
        "{}://{}/notebooks/{}",
        cfg.public_scheme(),
        cfg.advertised_authority,
        utf8_percent_encode(&name, NON_ALPHANUMERIC)
    )
}

pub(crate) fn escape_html(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&#39;"),
            c => out.push(c),
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    const ONE_CELL: &str = r#"{
 "cells": [
  {
   "cell_type": "code",
   "execution_count": 1,
   "id": "a1b2",
   "metadata": {"collapsed": false, "custom": {"k": [1, 2]}},
   "outputs": [{"output_type": "execute_result", "data": {"text/plain": "2"}, "metadata": {}, "execution_count": 1}],
   "source": "1+1"
  }
 ],
 "metadata": {"kernelspec": {"name": "python3"}, "unknown_key": 7},
 "nbformat": 4,
 "nbformat_minor": 5
}"#;

    fn three_cells() -> NotebookDocument {
        let mut doc = NotebookDocument::empty();
        doc.cells.push(Cell::new(CellType::Markdown, "# Title"));
        let mut code = Cell::new(CellType::Code, "1+1");
        code.metadata.insert("editable".into(), Value::Bool(true));
        code.metadata.insert("tags".into(), json!(["x"]));
        doc.cells.push(code);
        doc.cells.push(Cell::new(CellType::Raw, "raw text"));
        doc
    }

    #[test]
    fn minimal_document() {
        let doc = parse_notebook(br#"{"nbformat":4,"nbformat_minor":5,"metadata":{},"cells":[]}"#)
            .unwrap();
        assert_eq!(doc.cells.len(), 0);
        assert_eq!(doc.nbformat_minor, 5);
    }

    #[test]
    fn one_code_cell_round_trips() {
        let doc = parse_notebook(ONE_CELL.as_bytes()).unwrap();
        assert_eq!(doc.cells.len(), 1);
        assert_eq!(doc.cells[0].cell_type, CellType::Code);
        assert_eq!(doc.cells[0].source, "1+1");
        assert_eq!(doc.cells[0].execution_count, Some(1));
        assert_eq!(doc.metadata["unknown_key"], json!(7));
        assert_eq!(doc.cells[0].extra["id"], json!("a1b2"));

        let canonical = doc.to_json();
        let again = parse_notebook(canonical.as_bytes()).unwrap();
        assert_eq!(again, doc);
        assert_eq!(again.to_json(), canonical);
    }

    #[test]
    fn version_gate() {
        let err = parse_notebook(br#"{"nbformat":3,"nbformat_minor":0,"cells":[]}"#).unwrap_err();
        assert!(matches!(err, NotebookError::SchemaViolation { .. }));
        assert_eq!(err.path(), "nbformat");
    }

    #[test]
    fn error_paths() {
        assert!(matches!(
            parse_notebook(b"{nope").unwrap_err(),
            NotebookError::NotJson { line: 1, .. }
        ));
        assert_eq!(
            parse_notebook(br#"{"nbformat":4}"#).unwrap_err().path(),
            "cells"
        );
        let bad_type = br#"{"nbformat":4,"cells":[{"cell_type":"markdown","source":""},{"cell_type":"widget"}]}"#;
        assert_eq!(
            parse_notebook(bad_type).unwrap_err().path(),
            "cells[1].cell_type"
        );
        let md_outputs =
            br#"{"nbformat":4,"cells":[{"cell_type":"markdown","source":"","outputs":[]}]}"#;
        assert_eq!(
            parse_notebook(md_outputs).unwrap_err().path(),
            "cells[0].outputs"
        );
    }

    #[test]
    fn list_source_and_missing_metadata() {
        let raw = br#"{"nbformat":4,"cells":[{"cell_type":"code","source":["a = 1\n","a"]}]}"#;
        let doc = parse_notebook(raw).unwrap();
        assert_eq!(doc.cells[0].source, "a = 1\na");
        assert!(doc.cells[0].metadata.is_empty());
        assert!(doc.cells[0].outputs.is_empty());
    }

    #[test]
    fn read_only_on_empty_document_is_identity() {
        let doc = NotebookDocument::empty();
        assert_eq!(apply_read_only(doc.clone()), doc);
    }

    #[test]
    fn read_only_forces_both_flags() {
        let mut doc = NotebookDocument::empty();
        let mut cell = Cell::new(CellType::Code, "x");
        cell.metadata.insert("editable".into(), Value::Bool(true));
        doc.cells.push(cell);
        let out = apply_read_only(doc);
        assert_eq!(
            Value::Object(out.cells[0].metadata.clone()),
            json!({"editable": false, "deletable": false})
        );
    }

    #[test]
    fn read_only_is_idempotent_and_local() {
        let doc = three_cells();
        let once = apply_read_only(doc.clone());
        assert_eq!(apply_read_only(once.clone()), once);
        for (before, after) in doc.cells.iter().zip(&once.cells) {
            assert_eq!(before.source, after.source);
            assert_eq!(before.cell_type, after.cell_type);
            let mut stripped = after.metadata.clone();
            stripped.remove("editable");
            stripped.remove("deletable");
            let mut orig = before.metadata.clone();
            orig.remove("editable");
            orig.remove("deletable");
            assert_eq!(stripped, orig);
        }
    }

    #[test]
    fn escape_covers_markup() {
        assert_eq!(
            escape_html(r#"<a href="x">&'"#),
            "&lt;a href=&quot;x&quot;&gt;&amp;&#39;"
        );
    }

    fn cfg() -> GatewayConfig {
        let mut cfg = GatewayConfig::new(
            "127.0.0.1:9000".parse().unwrap(),
            "http://127.0.0.1:8888".parse().unwrap(),
            "/srv/notebooks/demo notebook.ipynb",
        );
        cfg.advertised_authority = "example.org:443".into();
        cfg
    }

    fn titled(title: &str) -> NotebookDocument {
        let mut doc = three_cells();
        doc.metadata.insert("title".into(), json!(title));
        doc
    }

    #[test]
    fn embed_page_uses_title_and_advertised_authority() {
        let page = render_embed_page(&titled("Demo"), &cfg());
        assert!(page.contains("<title>Demo</title>"));
        assert!(page.contains("src=\"http://example.org:443/notebooks/demo%20notebook%2Eipynb\""));
    }

    #[test]
    fn embed_page_never_leaks_listen_port() {
        let page = render_embed_page(&titled("Demo"), &cfg());
        assert!(!page.contains(":9000"));
        assert!(!page.contains("127.0.0.1"));
    }

    #[test]
    fn embed_page_for_empty_notebook() {
        let page = render_embed_page(&NotebookDocument::empty(), &cfg());
        assert!(page.starts_with("<!DOCTYPE html>"));
        assert!(page.trim_end().ends_with("</html>"));
        assert!(page.contains("<title>Notebook</title>"));
        assert!(page.contains("<section class=\"notebook-body\">\n</section>"));
    }

    #[test]
    fn embed_page_has_no_inline_handlers_or_scripts() {
        let mut doc = titled("<script>alert(1)</script>");
        doc.cells
            .push(Cell::new(CellType::Code, "<img src=x onerror=alert(1)>"));
        let page = render_embed_page(&doc, &cfg());
        assert!(!page.contains("<script"));
        assert!(!page.contains("<img"));
        for tag in page.split('<').skip(1) {
            let tag = tag.split('>').next().unwrap_or("");
            for attr in tag.split_whitespace().skip(1) {
                assert!(
                    !attr.to_ascii_lowercase().starts_with("on"),
                    "handler in <{tag}>"
                );
            }
        }
    }
}
