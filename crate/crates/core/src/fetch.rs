//! Download and conversion of the 24-hour race lap counts.

use std::io::Cursor;

use calamine::{Data, Reader, Xlsx};
use ndarray::Array2;

use crate::data::CountMatrix;
use crate::error::{Error, Result};

pub const RACE_URL: &str = "http://mathsci.ucd.ie/~brendan/data/24H.xlsx";
pub const RACE_ROWS: usize = 260;
pub const RACE_COLS: usize = 24;

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Empty,
    Number(f64),
    Text(String),
}

impl Cell {
    fn number(&self) -> Option<f64> {
        match self {
            Cell::Number(v) => Some(*v),
            Cell::Text(s) => s.trim().parse().ok(),
            Cell::Empty => None,
        }
    }

    fn text(&self) -> String {
        match self {
            Cell::Empty => String::new(),
            Cell::Number(v) if v.fract() == 0.0 => format!("{}", *v as i64),
            Cell::Number(v) => v.to_string(),
            Cell::Text(s) => s.trim().to_string(),
        }
    }
}

pub fn download(url: &str) -> Result<Vec<u8>> {
    let mut response = ureq::get(url).call().map_err(|e| Error::Fetch(format!("{url}: {e}")))?;
    response
        .body_mut()
        .with_config()
        .limit(64 * 1024 * 1024)
        .read_to_vec()
        .map_err(|e| Error::Fetch(format!("{url}: {e}")))
}

/// Cells of the first worksheet of an xlsx workbook.
pub fn xlsx_cells(bytes: Vec<u8>) -> Result<Vec<Vec<Cell>>> {
    let mut book: Xlsx<_> = Xlsx::new(Cursor::new(bytes)).map_err(|e| Error::Fetch(format!("xlsx: {e}")))?;
    let range = book
        .worksheet_range_at(0)
        .ok_or_else(|| Error::Fetch("workbook has no sheets".into()))?
        .map_err(|e| Error::Fetch(format!("xlsx: {e}")))?;
    Ok(range
        .rows()
        .map(|row| {
            row.iter()
                .map(|c| match c {
                    Data::Empty => Cell::Empty,
                    Data::Int(i) => Cell::Number(*i as f64),
                    Data::Float(f) => Cell::Number(*f),
                    other => Cell::Text(other.to_string()),
                })
                .collect()
        })
        .collect())
}

/// Builds the count table from a sheet: the observation rows are those whose
/// last `n_cols` cells are all non-negative integers, the id is the first
/// cell, and the header is the nearest earlier row. With `cumulative`, the
/// columns hold running totals and are differenced.
pub fn table_from_cells(cells: &[Vec<Cell>], n_cols: usize, cumulative: bool) -> Result<CountMatrix> {
    let is_count = |c: &Cell| c.number().is_some_and(|v| v >= 0.0 && v.fract() == 0.0);
    let mut first_data = None;
    let mut ids = Vec::new();
    let mut flat = Vec::new();
    for (i, row) in cells.iter().enumerate() {
        let trimmed: Vec<&Cell> = {
            let end = row.iter().rposition(|c| *c != Cell::Empty).map_or(0, |p| p + 1);
            row[..end].iter().collect()
        };
        if trimmed.len() < n_cols + 1 {
            continue;
        }
        let counts = &trimmed[trimmed.len() - n_cols..];
        if !counts.iter().all(|c| is_count(c)) {
            continue;
        }
        first_data.get_or_insert(i);
        ids.push(trimmed[0].text());
        let mut prev = 0.0;
        for c in counts {
            let v = c.number().expect("checked");
            let value = if cumulative { v - prev } else { v };
            if value < 0.0 {
                return Err(Error::Fetch(format!("row {} decreases, not a running total", i + 1)));
            }
            prev = v;
            flat.push(value as u64);
        }
    }
    let first = first_data.ok_or_else(|| Error::Fetch(format!("no rows with {n_cols} count columns")))?;
    let header = first.checked_sub(1).map(|h| &cells[h]);
    let col_labels: Vec<String> = match header {
        Some(h) if h.len() >= n_cols + 1 => {
            let end = h.iter().rposition(|c| *c != Cell::Empty).map_or(0, |p| p + 1).max(n_cols + 1);
            h[end - n_cols..end].iter().map(Cell::text).collect()
        }
        _ => (1..=n_cols).map(|m| format!("h{m}")).collect(),
    };
    let col_labels = col_labels
        .into_iter()
        .enumerate()
        .map(|(m, l)| if l.is_empty() { format!("h{}", m + 1) } else { l })
        .collect();
    let id_label = header.and_then(|h| h.first()).map(Cell::text).filter(|s| !s.is_empty());
    let values = Array2::from_shape_vec((ids.len(), n_cols), flat).expect("rectangular");
    CountMatrix::with_id_label(values, ids, col_labels, id_label.unwrap_or_else(|| "id".into()))
}

/// Checks the race table shape.
pub fn verify_race_shape(data: &CountMatrix) -> Result<()> {
    if (data.n_rows(), data.n_cols()) != (RACE_ROWS, RACE_COLS) {
        return Err(Error::Fetch(format!(
            "expected {RACE_ROWS} runners x {RACE_COLS} hours, found {} x {}",
            data.n_rows(),
            data.n_cols()
        )));
    }
    Ok(())
}
