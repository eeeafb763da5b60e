use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{format_number, Cell, Column, ColumnKind, DataError, Dataset, Value};

/// Column declarations for ingestion, in any order; the dataset keeps header order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub columns: IndexMap<String, ColumnKind>,
    #[serde(default)]
    pub weight: Option<String>,
}

impl Schema {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn column(mut self, name: &str, kind: ColumnKind) -> Self {
        self.columns.insert(name.to_string(), kind);
        self
    }

    pub fn weight(mut self, name: &str) -> Self {
        self.columns.insert(name.to_string(), ColumnKind::Continuous);
        self.weight = Some(name.to_string());
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestOptions {
    /// Cell texts (after trimming) read as missing.
    pub missing_tokens: Vec<String>,
    /// Cell texts read as non-response.
    pub nonresponse_tokens: Vec<String>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            missing_tokens: vec![String::new(), "NA".into()],
            nonresponse_tokens: vec!["NR".into()],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WriteOptions {
    pub missing_token: String,
    pub nonresponse_token: String,
}

impl Default for WriteOptions {
    fn default() -> Self {
        WriteOptions {
            missing_token: String::new(),
            nonresponse_token: "NR".into(),
        }
    }
}

pub fn ingest_csv(path: &Path, schema: &Schema, opts: &IngestOptions) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::Unreadable {
        path: path.display().to_string(),
        reason: e.to_string(),
    })?;
    read_csv(file, schema, opts)
}

pub fn read_csv<R: Read>(reader: R, schema: &Schema, opts: &IngestOptions) -> Result<Dataset, DataError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| DataError::Csv(e.to_string()))?
        .iter()
        .map(|h| h.trim().trim_start_matches('\u{feff}').to_string())
        .collect();
    for name in schema.columns.keys() {
        if !header.contains(name) {
            return Err(DataError::MissingHeaderColumn(name.clone()));
        }
    }
    for (name, kind) in &schema.columns {
        kind.validate(name)?;
    }
    // (position in record, name, kind) for declared columns, in header order
    let used: Vec<(usize, &String, &ColumnKind)> = header
        .iter()
        .enumerate()
        .filter_map(|(i, h)| schema.columns.get_key_value(h).map(|(k, v)| (i, k, v)))
        .collect();
    let missing: HashSet<&str> = opts.missing_tokens.iter().map(|s| s.trim()).collect();
    let nonresponse: HashSet<&str> = opts.nonresponse_tokens.iter().map(|s| s.trim()).collect();

    let mut cells: Vec<Vec<Cell>> = vec![Vec::new(); used.len()];
    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| DataError::Csv(e.to_string()))?;
        for (slot, &(pos, name, kind)) in used.iter().enumerate() {
            let raw = record.get(pos).unwrap_or("").trim();
            let cell = if missing.contains(raw) {
                Cell::Missing
            } else if nonresponse.contains(raw) {
                Cell::Nonresponse
            } else {
                parse_cell(raw, kind).ok_or_else(|| DataError::Parse {
                    row: r + 1,
                    column: name.clone(),
                    value: raw.to_string(),
                    expected: match kind {
                        ColumnKind::Continuous => "a finite number".to_string(),
                        _ => format!("one of {:?}", kind.levels().unwrap_or_default()),
                    },
                })?
            };
            cells[slot].push(cell);
        }
    }
    let columns = used
        .iter()
        .zip(cells)
        .map(|(&(_, name, kind), cells)| Column::new(name.clone(), kind.clone(), cells))
        .collect::<Result<Vec<_>, _>>()?;
    Dataset::new(columns, schema.weight.clone())
}

fn parse_cell(raw: &str, kind: &ColumnKind) -> Option<Cell> {
    match kind {
        ColumnKind::Continuous => raw
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .map(|v| Cell::Observed(Value::Num(v))),
        _ => kind.level_index(raw).map(|i| Cell::Observed(Value::Level(i))),
    }
}

/// Writes the dataset as RFC-4180 CSV with one header row. Numbers use the
/// shortest representation that reads back to the same `f64`.
pub fn write_csv<W: Write>(ds: &Dataset, writer: W, opts: &WriteOptions) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| DataError::Csv(e.to_string());
    w.write_record(ds.column_names()).map_err(err)?;
    let cols: Vec<&Column> = ds.columns().collect();
    for r in 0..ds.n_rows() {
        let rec: Vec<String> = cols
            .iter()
            .map(|c| match c.cells[r] {
                Cell::Observed(Value::Num(v)) => format_number(v),
                Cell::Observed(Value::Level(i)) => c.kind.levels().map(|l| l[i].clone()).unwrap_or_default(),
                Cell::Missing => opts.missing_token.clone(),
                Cell::Nonresponse => opts.nonresponse_token.clone(),
            })
            .collect();
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().map_err(|e| DataError::Csv(e.to_string()))?;
    Ok(())
}
