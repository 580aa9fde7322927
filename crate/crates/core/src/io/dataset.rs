use std::fs;
use std::path::Path;

use ndarray::Array2;

use crate::data::CountMatrix;
use crate::error::{Error, Result};

/// Reads a comma-delimited count table: a header row, then one row per
/// observation holding its id followed by non-negative integer counts.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<CountMatrix> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_dataset(&bytes, &path.display().to_string())
}

/// Parses dataset bytes; `source` names the input in error messages.
pub fn parse_dataset(bytes: &[u8], source: &str) -> Result<CountMatrix> {
    let err = |line: u64, column: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        column,
        message,
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(bytes);
    let mut records = reader.records();

    let header = match records.next() {
        Some(r) => r.map_err(|e| csv_error(source, e))?,
        None => return Err(err(1, 1, "empty file, a header row is required".into())),
    };
    if header.len() < 2 {
        return Err(err(1, header.len().max(1), "header needs an id column and at least one count column".into()));
    }
    let id_label = header[0].to_string();
    let col_labels: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
    let width = header.len();

    let mut ids = Vec::new();
    let mut flat = Vec::new();
    for record in records {
        let record = record.map_err(|e| csv_error(source, e))?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].trim().is_empty() {
            continue;
        }
        if record.len() != width {
            return Err(err(
                line,
                record.len().min(width) + 1,
                format!("expected {width} fields, found {}", record.len()),
            ));
        }
        ids.push(record[0].to_string());
        for (j, cell) in record.iter().enumerate().skip(1) {
            flat.push(parse_count(cell).map_err(|m| err(line, j + 1, format!("column '{}': {m}", header[j].trim())))?);
        }
    }
    if ids.is_empty() {
        return Err(err(2, 1, "no observation rows".into()));
    }
    let values = Array2::from_shape_vec((ids.len(), width - 1), flat).expect("rectangular by construction");
    CountMatrix::with_id_label(values, ids, col_labels, id_label)
}

fn parse_count(cell: &str) -> std::result::Result<u64, String> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Err("missing value".into());
    }
    if let Ok(v) = cell.parse::<u64>() {
        return Ok(v);
    }
    match cell.parse::<f64>() {
        Ok(v) if v < 0.0 => Err(format!("negative count '{cell}'")),
        Ok(_) => Err(format!("non-integer count '{cell}'")),
        Err(_) if cell.starts_with('-') && cell[1..].parse::<u64>().is_ok() => Err(format!("negative count '{cell}'")),
        Err(_) => Err(format!("'{cell}' is not a count")),
    }
}

fn csv_error(source: &str, e: csv::Error) -> Error {
    let (line, message) = match e.position() {
        Some(p) => (p.line(), e.to_string()),
        None => (0, e.to_string()),
    };
    Error::Parse {
        path: source.to_string(),
        line,
        column: 0,
        message,
    }
}

/// Serializes in the format read by [`parse_dataset`], with LF line endings.
pub fn dataset_to_bytes(data: &CountMatrix) -> Result<Vec<u8>> {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut header = vec![data.id_label().to_string()];
    header.extend(data.col_labels().iter().cloned());
    writer.write_record(&header)?;
    for (id, row) in data.row_ids().iter().zip(data.values().rows()) {
        let mut record = vec![id.clone()];
        record.extend(row.iter().map(u64::to_string));
        writer.write_record(&record)?;
    }
    writer.into_inner().map_err(|e| Error::io("<buffer>", e.into_error()))
}

pub fn write_dataset(path: impl AsRef<Path>, data: &CountMatrix) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, dataset_to_bytes(data)?).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<CountMatrix> {
        parse_dataset(text.as_bytes(), "test.csv")
    }

    fn parse_err(text: &str) -> (u64, usize, String) {
        match parse(text) {
            Err(Error::Parse { line, column, message, .. }) => (line, column, message),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn parses_small_file() {
        let x = parse("id,h1,h2\na,0,3\nb,5,2").unwrap();
        assert_eq!((x.n_rows(), x.n_cols()), (2, 2));
        assert_eq!(x.values(), &ndarray::array![[0, 3], [5, 2]]);
        assert_eq!(x.row_ids(), ["a", "b"]);
        assert_eq!(x.col_labels(), ["h1", "h2"]);
        assert_eq!(x.id_label(), "id");
    }

    #[test]
    fn accepts_crlf() {
        let x = parse("id,h1\r\na,4\r\nb,1\r\n").unwrap();
        assert_eq!(x.values(), &ndarray::array![[4], [1]]);
        assert_eq!(x.row_ids(), ["a", "b"]);
    }

    #[test]
    fn negative_cell_is_located() {
        let (line, column, message) = parse_err("id,h1,h2\na,0,3\nb,-1,2\n");
        assert_eq!((line, column), (3, 2));
        assert!(message.contains("negative") && message.contains("h1"), "{message}");
    }

    #[test]
    fn rejects_bad_cells() {
        assert!(parse_err("id,h1\na,1.5\n").2.contains("non-integer"));
        assert!(parse_err("id,h1\na,\n").2.contains("missing"));
        assert!(parse_err("id,h1\na,NA\n").2.contains("not a count"));
        assert!(parse_err("id,h1,h2\na,1\n").2.contains("expected 3 fields"));
        assert!(parse_err("id,h1\na,1,2\n").2.contains("expected 2 fields"));
        assert!(parse_err("").2.contains("header"));
        assert!(parse_err("id\na\n").2.contains("header"));
        assert!(parse_err("id,h1\n").2.contains("no observation"));
    }

    #[test]
    fn writes_lf_with_trailing_newline() {
        let x = parse("id,h1,h2\r\na,0,3\r\nb,5,2").unwrap();
        let text = String::from_utf8(dataset_to_bytes(&x).unwrap()).unwrap();
        assert_eq!(text, "id,h1,h2\na,0,3\nb,5,2\n");
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn table() -> impl Strategy<Value = (Vec<String>, Vec<Vec<u64>>, bool)> {
            (1usize..6, 1usize..6).prop_flat_map(|(n, m)| {
                (
                    proptest::collection::vec("[a-z][a-z0-9_]{0,6}", m + 1),
                    proptest::collection::vec(proptest::collection::vec(0u64..100_000, m + 1), n),
                    any::<bool>(),
                )
            })
        }

        proptest! {
            #[test]
            fn save_load_round_trip((header, rows, crlf) in table()) {
                let eol = if crlf { "\r\n" } else { "\n" };
                let mut text = header.join(",") + eol;
                for (i, row) in rows.iter().enumerate() {
                    let cells: Vec<String> = std::iter::once(format!("obs{i}"))
                        .chain(row.iter().skip(1).map(u64::to_string))
                        .collect();
                    text += &(cells.join(",") + eol);
                }
                let x = parse(&text).unwrap();
                let out = String::from_utf8(dataset_to_bytes(&x).unwrap()).unwrap();
                prop_assert_eq!(out, text.replace("\r\n", "\n"));
                prop_assert_eq!(parse(&text.replace("\r\n", "\n")).unwrap(), x);
            }
        }
    }
}
