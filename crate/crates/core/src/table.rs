//! String tables written as CSV, optionally stamped with a config hash column.

use std::io::Write;

use crate::error::{Error, Result};

pub const CONFIG_HASH_COLUMN: &str = "config_hash";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) -> Result<()> {
        Error::check_dim("table row", self.header.len(), row.len())?;
        self.rows.push(row);
        Ok(())
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<String>] {
        &self.rows
    }

    pub fn write_csv<W: Write>(&self, out: W, config_hash: Option<&str>) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let stamp = |row: &[String], lead: &str| -> Vec<String> {
            let mut r = Vec::with_capacity(row.len() + 1);
            if config_hash.is_some() {
                r.push(lead.to_string());
            }
            r.extend(row.iter().cloned());
            r
        };
        w.write_record(stamp(&self.header, CONFIG_HASH_COLUMN))?;
        let hash = config_hash.unwrap_or_default();
        for row in &self.rows {
            w.write_record(stamp(row, hash))?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self, config_hash: Option<&str>) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, config_hash)?;
        Ok(buf)
    }
}

/// Cell text for an optional number; missing values are empty.
pub fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}
