//! Flat comma-delimited plot-data files. Each starts with `#` metadata lines
//! naming the seed and config hash, followed by a header row.

use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::document::{orientation, HistogramDoc, SweepDoc};
use crate::data::CountMatrix;
use crate::error::{Error, Result};
use crate::evaluate::{format_profile_set, CrossTab};

#[derive(Debug, Clone, PartialEq)]
pub struct PlotTable {
    pub notes: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl PlotTable {
    fn new(header: &[&str]) -> Self {
        Self {
            notes: Vec::new(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    fn note(mut self, note: impl Into<String>) -> Self {
        self.notes.push(note.into());
        self
    }

    pub fn to_bytes(&self, seed: u64, config_hash: &str) -> Result<Vec<u8>> {
        let mut out = format!("# seed: {seed}\n# config_hash: {config_hash}\n");
        for n in &self.notes {
            out.push_str(&format!("# {n}\n"));
        }
        let mut writer = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(out.into_bytes());
        writer.write_record(&self.header)?;
        for r in &self.rows {
            writer.write_record(r)?;
        }
        writer.into_inner().map_err(|e| Error::io("<buffer>", e.into_error()))
    }

    pub fn write(&self, path: impl AsRef<Path>, seed: u64, config_hash: &str) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes(seed, config_hash)?).map_err(|e| Error::io(path, e))
    }
}

/// Parses a plot file back into its metadata lines and table.
pub fn read_plot(text: &str) -> Result<(Vec<String>, PlotTable)> {
    let meta: Vec<String> = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| l.trim_start_matches('#').trim().to_string())
        .collect();
    let body: String = text.lines().skip(meta.len()).map(|l| format!("{l}\n")).collect();
    let mut reader = csv::ReaderBuilder::new().from_reader(body.as_bytes());
    let header = reader.headers()?.iter().map(str::to_string).collect();
    let rows = reader
        .records()
        .map(|r| r.map(|r| r.iter().map(str::to_string).collect()))
        .collect::<std::result::Result<Vec<Vec<String>>, _>>()?;
    Ok((
        meta,
        PlotTable {
            notes: Vec::new(),
            header,
            rows,
        },
    ))
}

/// Long-format rates: one row per (component, attribute).
pub fn theta_curves(rates: &Array2<f64>, data: &CountMatrix, label: &str) -> PlotTable {
    let mut t = PlotTable::new(&[label, "attribute_index", "attribute", "rate"])
        .note("expected count per attribute for each component");
    for (g, row) in rates.rows().into_iter().enumerate() {
        for (m, v) in row.iter().enumerate() {
            t.rows.push(vec![
                (g + 1).to_string(),
                (m + 1).to_string(),
                data.col_labels()[m].clone(),
                v.to_string(),
            ]);
        }
    }
    t
}

pub fn histogram(h: &HistogramDoc, what: &str) -> PlotTable {
    let mut t = PlotTable::new(&["lower", "upper", "count"]).note(format!("histogram of {what}"));
    for i in 0..h.count.len() {
        t.rows.push(vec![h.lower[i].to_string(), h.upper[i].to_string(), h.count[i].to_string()]);
    }
    t
}

/// `coords[f][n]` for face `faces[f]`.
pub fn ternary(faces: &[[usize; 3]], coords: &[Vec<(f64, f64)>], ids: &[String]) -> PlotTable {
    let mut t = PlotTable::new(&["face", "id", "x", "y"])
        .note("faces name three 1-based profiles; vertex order is (first, second, third)");
    for (face, points) in faces.iter().zip(coords) {
        let name = format!("{}-{}-{}", face[0] + 1, face[1] + 1, face[2] + 1);
        for (id, (x, y)) in ids.iter().zip(points) {
            t.rows.push(vec![name.clone(), id.clone(), x.to_string(), y.to_string()]);
        }
    }
    t
}

pub fn crosstab(tab: &CrossTab) -> PlotTable {
    let mut header = vec!["group".to_string()];
    header.extend(tab.sets.iter().map(|s| format_profile_set(s)));
    let mut t = PlotTable {
        notes: vec!["rows are mixture groups, columns are mapped profile sets".into()],
        header,
        rows: Vec::new(),
    };
    for (g, counts) in tab.groups.iter().zip(&tab.counts) {
        let mut row = vec![(g + 1).to_string()];
        row.extend(counts.iter().map(usize::to_string));
        t.rows.push(row);
    }
    t
}

pub fn sweep(doc: &SweepDoc) -> PlotTable {
    let mut t = PlotTable::new(&["n_components", "criterion", "value", "orientation", "error"])
        .note(format!("holdout_loglik: {}", orientation(true)))
        .note(format!("mixture_bic: {}", orientation(false)));
    for r in &doc.rows {
        t.rows.push(vec![
            r.n_components.to_string(),
            r.criterion.clone(),
            r.value.map(|v| v.to_string()).unwrap_or_default(),
            r.orientation.clone(),
            r.error.clone().unwrap_or_default(),
        ]);
    }
    t
}

/// One row per observation: id then the values of each named column.
pub fn per_observation(ids: &[String], columns: &[&str], values: &Array2<f64>) -> PlotTable {
    let mut header = vec!["id"];
    header.extend_from_slice(columns);
    let mut t = PlotTable::new(&header);
    for (id, row) in ids.iter().zip(values.rows()) {
        let mut r = vec![id.clone()];
        r.extend(row.iter().map(f64::to_string));
        t.rows.push(r);
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metadata_header_then_table() {
        let mut t = PlotTable::new(&["a", "b"]).note("orientation: lower is better");
        t.rows.push(vec!["1".into(), "x,y".into()]);
        let text = String::from_utf8(t.to_bytes(7, "abc").unwrap()).unwrap();
        assert_eq!(
            text,
            "# seed: 7\n# config_hash: abc\n# orientation: lower is better\na,b\n1,\"x,y\"\n"
        );
        let (meta, back) = read_plot(&text).unwrap();
        assert_eq!(meta, vec!["seed: 7", "config_hash: abc", "orientation: lower is better"]);
        assert_eq!(back.header, t.header);
        assert_eq!(back.rows, t.rows);
    }

    #[test]
    fn crosstab_labels_sets() {
        let tab = crate::evaluate::cross_tab(&[0, 1], &[vec![0], vec![1, 2]], 2).unwrap();
        let t = crosstab(&tab);
        assert_eq!(t.header, vec!["group", "{1}", "{2,3}"]);
        assert_eq!(t.rows, vec![vec!["1", "1", "0"], vec!["2", "0", "1"]]);
    }
}
