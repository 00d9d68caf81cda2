//! Minimal reader for the comma-separated files this tool writes (no
//! quoting, header row first).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header: Vec<String> =
            lines.next().ok_or_else(|| Error::Format("empty CSV".into()))?.split(',').map(str::to_string).collect();
        let rows = lines
            .enumerate()
            .map(|(i, l)| {
                let r: Vec<String> = l.split(',').map(str::to_string).collect();
                if r.len() != header.len() {
                    return Err(Error::Format(format!("row {} has {} fields, header has {}", i + 1, r.len(), header.len())));
                }
                Ok(r)
            })
            .collect::<Result<_>>()?;
        Ok(Self { header, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text =
            fs::read_to_string(path).map_err(|e| Error::invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    pub fn column(&self, name: &str) -> Result<usize> {
        self.header.iter().position(|h| h == name).ok_or_else(|| Error::Format(format!("no column `{name}`")))
    }
}

pub fn number(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Format(format!("`{s}` is not a number")))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_checks_widths() {
        let t = Table::parse("a,b\n1,2\n\n3,4\n").unwrap();
        assert_eq!(t.rows.len(), 2);
        assert_eq!(t.column("b").unwrap(), 1);
        assert!(t.column("c").is_err());
        assert!(Table::parse("a,b\n1\n").is_err());
        assert!(Table::parse("").is_err());
    }
}
