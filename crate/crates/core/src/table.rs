//! Tab-separated tables with `#` comment lines.
//!
//! Every artifact the toolkit emits (token tables, score tables, regression
//! reports) goes through this type so that headers and comment handling are
//! uniform.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(columns: &[S]) -> Self {
        Table {
            columns: columns.iter().map(|c| c.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Like [`Table::column`] but fails with a message naming the column.
    pub fn require(&self, name: &str) -> Result<usize> {
        self.column(name)
            .ok_or_else(|| Error::validation(format!("table has no column {name:?}")))
    }

    pub fn render(&self, comments: &[String]) -> String {
        let mut s = String::new();
        for c in comments {
            let _ = writeln!(s, "# {c}");
        }
        s.push_str(&self.columns.join("\t"));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.join("\t"));
            s.push('\n');
        }
        s
    }

    pub fn write(&self, path: &Path, comments: &[String]) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.render(comments)).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'));
        let Some((_, header)) = lines.next() else {
            return Ok(Table::default());
        };
        let columns: Vec<String> = header.split('\t').map(str::to_string).collect();
        let mut rows = Vec::new();
        for (i, l) in lines {
            let row: Vec<String> = l.split('\t').map(str::to_string).collect();
            if row.len() != columns.len() {
                return Err(Error::Parse {
                    path: origin.to_string(),
                    line: i + 1,
                    tier: None,
                    message: format!("expected {} columns, found {}", columns.len(), row.len()),
                });
            }
            rows.push(row);
        }
        Ok(Table { columns, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Table::parse(&text, &path.display().to_string())
    }
}

/// Fixed-precision float formatting used in reports, so reruns are byte-identical.
pub fn fmt_f(x: f64, digits: usize) -> String {
    if x.is_nan() {
        return "NA".to_string();
    }
    let s = format!("{x:.digits$}");
    // avoid "-0.000"
    if s.starts_with('-') && s[1..].chars().all(|c| c == '0' || c == '.') {
        s[1..].to_string()
    } else {
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_and_parse() {
        let mut t = Table::new(&["a", "b"]);
        t.push(vec!["1".into(), "x".into()]);
        let text = t.render(&["config_hash=abc".to_string()]);
        assert!(text.starts_with("# config_hash=abc\na\tb\n"));
        assert_eq!(Table::parse(&text, "t").unwrap(), t);
        assert!(Table::parse("a\tb\n1\n", "t").is_err());
    }

    #[test]
    fn negative_zero() {
        assert_eq!(fmt_f(-0.0000001, 3), "0.000");
        assert_eq!(fmt_f(-1.25, 1), "-1.2");
    }
}
