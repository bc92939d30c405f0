//! RFC 4180 tables (quoting by the `csv` crate) with a header row, LF line endings and numbers printed
//! with 12 significant digits, written by write-then-rename.

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{LabError, Result};

/// One cell; numbers are formatted on output.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Num(f64),
    Int(i64),
    Text(String),
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Num(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Text(if v { "true" } else { "false" }.into())
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.into())
    }
}

impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}

/// `%.12g`: fixed notation for decimal exponents in `[−4, 12)`, otherwise
/// scientific; trailing zeros dropped. Non-finite values print as `NaN`,
/// `inf`, `-inf`.
pub fn format_g12(v: f64) -> String {
    if v.is_nan() {
        return "NaN".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    if v == 0.0 {
        return "0".into();
    }
    let sci = format!("{v:.11e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent in scientific format");
    let exp: i32 = exp.parse().expect("integer exponent");
    if (-4..12).contains(&exp) {
        let decimals = (11 - exp).max(0) as usize;
        let fixed = format!("{v:.decimals$}");
        trim_zeros(&fixed).to_string()
    } else {
        format!("{}e{}{:02}", trim_zeros(mantissa), if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

impl Cell {
    fn render(&self) -> String {
        match self {
            Cell::Num(v) => format_g12(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
        }
    }
}

/// A header and rows of equal width.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    header: Vec<String>,
    rows: Vec<Vec<Cell>>,
}

impl CsvTable {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self { header: header.into_iter().map(Into::into).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) -> Result<()> {
        if row.len() != self.header.len() {
            return Err(LabError::ShapeMismatch(format!(
                "row of {} cells for a header of {}",
                row.len(),
                self.header.len()
            )));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn header(&self) -> &[String] {
        &self.header
    }

    pub fn rows(&self) -> &[Vec<Cell>] {
        &self.rows
    }

    pub fn render(&self) -> String {
        let mut w = ::csv::WriterBuilder::new().terminator(::csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        // Writing into a Vec cannot fail and every cell is valid UTF-8.
        w.write_record(&self.header).expect("in-memory csv write");
        for row in &self.rows {
            w.write_record(row.iter().map(Cell::render)).expect("in-memory csv write");
        }
        String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("utf-8 cells")
    }
}

/// Write `bytes` to a sibling temporary file, then rename it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let name = path.file_name().ok_or_else(|| LabError::InvalidParameter(format!("no file name in {}", path.display())))?;
    let tmp = dir.join(format!(".{}.tmp-{}", name.to_string_lossy(), std::process::id()));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

pub fn emit_csv(table: &CsvTable, path: &Path) -> Result<()> {
    write_atomic(path, table.render().as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn g12_formatting() {
        assert_eq!(format_g12(0.0), "0");
        assert_eq!(format_g12(1.0), "1");
        assert_eq!(format_g12(-2.5), "-2.5");
        assert_eq!(format_g12(1.0 / 3.0), "0.333333333333");
        assert_eq!(format_g12(123456.789), "123456.789");
        assert_eq!(format_g12(1e-8), "1e-08");
        assert_eq!(format_g12(2.0f64.sqrt() * 1e20), "1.41421356237e+20");
        assert_eq!(format_g12(0.0001), "0.0001");
        assert_eq!(format_g12(2.5e-5), "2.5e-05");
        assert_eq!(format_g12(f64::NAN), "NaN");
        assert_eq!(format_g12(f64::NEG_INFINITY), "-inf");
    }

    #[test]
    fn header_only_and_quoting() {
        let mut t = CsvTable::new(["a", "b,c"]);
        assert_eq!(t.render(), "a,\"b,c\"\n");
        t.push(vec!["x\"y".into(), 2usize.into()]).unwrap();
        assert_eq!(t.render(), "a,\"b,c\"\n\"x\"\"y\",2\n");
        assert!(t.push(vec![1.0.into()]).is_err());
    }

    #[test]
    fn atomic_write_replaces() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("sub").join("t.csv");
        let mut t = CsvTable::new(["v"]);
        t.push(vec![0.1.into()]).unwrap();
        emit_csv(&t, &p).unwrap();
        let first = fs::read(&p).unwrap();
        emit_csv(&t, &p).unwrap();
        assert_eq!(first, fs::read(&p).unwrap());
        assert_eq!(fs::read_dir(p.parent().unwrap()).unwrap().count(), 1);
    }

    proptest! {
        #[test]
        fn twelve_digits_round_trip(v in prop::num::f64::NORMAL) {
            let s = format_g12(v);
            let back: f64 = s.parse().unwrap();
            prop_assert!((back - v).abs() <= 5e-12 * v.abs());
            prop_assert!(!s.contains('\n'));
        }
    }
}
