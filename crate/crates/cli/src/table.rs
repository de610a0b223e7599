//! Comma-separated result tables with `# key: value` metadata lines.

use std::fmt::Write as _;

use anyhow::{anyhow, bail, Context, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub meta: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Self {
            meta: Vec::new(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn meta(&mut self, key: &str, value: impl ToString) {
        self.meta.push((key.to_string(), value.to_string()));
    }

    pub fn push(&mut self, row: Vec<String>) {
        assert_eq!(row.len(), self.header.len(), "row width must match the header");
        self.rows.push(row);
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| anyhow!("table has no column {name:?}"))
    }

    /// Cells of one column, in row order.
    pub fn values(&self, name: &str) -> Result<Vec<&str>> {
        let c = self.column(name)?;
        Ok(self.rows.iter().map(|r| r[c].as_str()).collect())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.meta {
            writeln!(out, "# {k}: {v}").expect("writing to a string");
        }
        let mut w = csv::WriterBuilder::new().from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        out.push_str(&String::from_utf8(w.into_inner().expect("in-memory flush")).expect("cells are UTF-8"));
        out
    }

    /// Inverse of [`Table::render`]. Comment lines without a `key: value`
    /// form are kept as free text under the key `note`.
    pub fn parse(text: &str) -> Result<Self> {
        let mut meta = Vec::new();
        for line in text.lines().filter(|l| l.starts_with('#')) {
            let body = line.trim_start_matches('#').trim();
            match body.split_once(": ") {
                Some((k, v)) if !k.contains(' ') => meta.push((k.to_string(), v.to_string())),
                _ => meta.push(("note".to_string(), body.to_string())),
            }
        }
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let header: Vec<String> = reader
            .headers()
            .context("reading table header")?
            .iter()
            .map(str::to_string)
            .collect();
        if header.iter().all(|h| h.is_empty()) {
            bail!("table has no header");
        }
        let mut rows = Vec::new();
        for (i, rec) in reader.records().enumerate() {
            let rec = rec.with_context(|| format!("reading table row {}", i + 1))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        Ok(Self { meta, header, rows })
    }
}

/// Number cell; `-` stands for a missing value.
pub fn num(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| x.to_string())
}

pub fn parse_num(cell: &str) -> Result<Option<f64>> {
    if cell == "-" || cell == "no-ref" {
        return Ok(None);
    }
    cell.parse::<f64>()
        .map(Some)
        .map_err(|_| anyhow!("invalid number {cell:?}"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn render_then_parse_is_identity() {
        let mut t = Table::new(&["name", "objective"]);
        t.meta("mode", "greedy");
        t.meta("reference", "held-karp");
        t.push(vec!["a,b".into(), "1.5".into()]);
        t.push(vec!["mean".into(), "-".into()]);
        let back = Table::parse(&t.render()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.values("objective").unwrap(), vec!["1.5", "-"]);
    }

    #[test]
    fn free_comments_become_notes() {
        let t = Table::parse("# optima of things\nname,optimum\nx,3\n").unwrap();
        assert_eq!(t.meta, vec![("note".to_string(), "optima of things".to_string())]);
        assert_eq!(t.rows, vec![vec!["x".to_string(), "3".to_string()]]);
    }

    #[test]
    fn numbers_round_trip() {
        for v in [None, Some(0.1 + 0.2), Some(-3.0), Some(1e-300)] {
            assert_eq!(parse_num(&num(v)).unwrap(), v);
        }
        assert!(parse_num("abc").is_err());
    }
}
