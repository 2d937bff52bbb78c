//! CSV tables (RFC 4180 via the `csv` crate, `.` decimal separator, UTF-8).
//!
//! Every table may carry provenance lines of the form `# key=value` before
//! the header row.

use std::io::Write;

use nalgebra::DMatrix;

use crate::segments::SegmentView;

/// One row of a Monte Carlo or identity check table.
#[derive(Clone, Debug, PartialEq)]
pub struct McCheck {
    pub check_name: String,
    pub estimate: f64,
    pub std_error: f64,
    pub pass: bool,
}

impl McCheck {
    pub fn new(name: impl Into<String>, estimate: f64, std_error: f64, pass: bool) -> Self {
        Self {
            check_name: name.into(),
            estimate,
            std_error,
            pass,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Provenance {
    pub entries: Vec<(String, String)>,
}

impl Provenance {
    pub fn with(mut self, key: &str, value: impl ToString) -> Self {
        self.entries.push((key.to_string(), value.to_string()));
        self
    }
}

/// Generic table: header plus rows of already-formatted fields.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        Self {
            header: header.iter().map(|s| s.as_ref().to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push_row(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write<W: Write>(&self, provenance: &Provenance, mut w: W) -> std::io::Result<()> {
        for (k, v) in &provenance.entries {
            writeln!(w, "# {k}={v}")?;
        }
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.header)?;
        for r in &self.rows {
            out.write_record(r)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self, provenance: &Provenance) -> String {
        let mut buf = Vec::new();
        self.write(provenance, &mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is utf-8")
    }
}

pub fn fmt(x: f64) -> String {
    format!("{x}")
}

pub fn checks_table(checks: &[McCheck]) -> Table {
    let mut t = Table::new(&["check_name", "estimate", "std_error", "pass"]);
    for c in checks {
        t.push_row(vec![
            c.check_name.clone(),
            fmt(c.estimate),
            fmt(c.std_error),
            c.pass.to_string(),
        ]);
    }
    t
}

/// `(s, component_1..component_d)`, one row per cell midpoint.
pub fn segment_table(seg: SegmentView<'_>) -> Table {
    let d = seg.dim();
    let mut header = vec!["s".to_string()];
    header.extend((1..=d).map(|i| format!("component_{i}")));
    let mut t = Table::new(&header);
    let h = seg.cell_width();
    for j in 0..seg.n_cells() {
        let mut row = vec![fmt(-1.0 + (j as f64 + 0.5) * h)];
        row.extend(seg.cell(j).iter().map(|&v| fmt(v)));
        t.push_row(row);
    }
    t
}

/// Row-major dense matrix dump.
pub fn matrix_table(m: &DMatrix<f64>) -> Table {
    let header: Vec<String> = (0..m.ncols()).map(|j| format!("col_{j}")).collect();
    let mut t = Table::new(&header);
    for i in 0..m.nrows() {
        t.push_row((0..m.ncols()).map(|j| fmt(m[(i, j)])).collect());
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::segments::Segment;

    #[test]
    fn segment_csv_has_midpoints() {
        let seg = Segment::from_cells(2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let csv = segment_table(seg.view()).to_csv_string(&Provenance::default());
        assert_eq!(csv, "s,component_1,component_2\n-0.75,1,2\n-0.25,3,4\n");
    }

    #[test]
    fn provenance_precedes_header_and_names_are_quoted() {
        let t = checks_table(&[McCheck::new("a,b", 1.5, 0.25, true)]);
        let p = Provenance::default().with("seed", 7);
        let csv = t.to_csv_string(&p);
        assert_eq!(
            csv,
            "# seed=7\ncheck_name,estimate,std_error,pass\n\"a,b\",1.5,0.25,true\n"
        );
    }
}
