//! Dataset ingestion and result emission.
//!
//! Every CSV written here starts with `#` comment lines carrying the config
//! hash and root seed, followed by a mandatory header row. Floats use
//! `{:.17e}` so values round-trip exactly.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::models::ObservationSeries;

/// Full-precision scientific notation; `NaN` for undefined values.
pub fn fmt_f64(x: f64) -> String {
    if x.is_nan() {
        "NaN".to_string()
    } else {
        format!("{x:.17e}")
    }
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NaN".to_string(), fmt_f64)
}

/// Provenance written at the top of every output file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

/// Row-by-row CSV writer with a provenance preamble.
pub struct CsvOut {
    inner: csv::Writer<BufWriter<File>>,
}

impl CsvOut {
    pub fn create(path: &Path, prov: &Provenance, header: &[&str]) -> Result<Self> {
        let mut f = BufWriter::new(File::create(path)?);
        writeln!(f, "# config_hash: {}", prov.config_hash)?;
        writeln!(f, "# seed: {}", prov.seed)?;
        let mut inner = csv::Writer::from_writer(f);
        inner.write_record(header)?;
        Ok(CsvOut { inner })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<()>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.inner.write_record(fields)?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.inner.flush()?;
        Ok(())
    }
}

fn reader(path: &Path) -> Result<csv::Reader<File>> {
    Ok(csv::ReaderBuilder::new().comment(Some(b'#')).trim(csv::Trim::All).from_path(path)?)
}

fn column(headers: &csv::StringRecord, names: &[&str]) -> Option<usize> {
    headers.iter().position(|h| names.iter().any(|n| h.eq_ignore_ascii_case(n)))
}

fn parse_cell(op: &'static str, rec: &csv::StringRecord, idx: usize, row: usize) -> Result<f64> {
    let cell = rec.get(idx).ok_or_else(|| Error::Data { op, row, msg: "missing field".into() })?;
    cell.parse::<f64>().map_err(|_| Error::Data { op, row, msg: format!("not a number: '{cell}'") })
}

/// Log returns from a price CSV (`price` column, optional `date`) or a CSV
/// with a `return`/`returns` column. Rows are numbered from 1 after the header.
pub fn load_returns(path: &Path) -> Result<Vec<f64>> {
    const OP: &str = "load_price_series";
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    if let Some(idx) = column(&headers, &["price", "close"]) {
        let mut prices = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let row = i + 1;
            let p = parse_cell(OP, &rec?, idx, row)?;
            if !(p > 0.0 && p.is_finite()) {
                return Err(Error::Data { op: OP, row, msg: format!("price must be positive, got {p}") });
            }
            prices.push(p);
        }
        if prices.len() < 2 {
            return Err(Error::Data { op: OP, row: prices.len(), msg: "need at least two prices".into() });
        }
        return Ok(prices.windows(2).map(|p| p[1].ln() - p[0].ln()).collect());
    }
    if let Some(idx) = column(&headers, &["return", "returns", "log_return"]) {
        let mut out = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let r = parse_cell(OP, &rec?, idx, i + 1)?;
            if !r.is_finite() {
                return Err(Error::Data { op: OP, row: i + 1, msg: "return must be finite".into() });
            }
            out.push(r);
        }
        if out.is_empty() {
            return Err(Error::Data { op: OP, row: 0, msg: "no returns".into() });
        }
        return Ok(out);
    }
    Err(Error::Schema {
        op: OP,
        msg: format!("expected a 'price' or 'returns' column, found {:?}", headers.iter().collect::<Vec<_>>()),
    })
}

/// Observations for the stochastic volatility model: cumulative log returns
/// starting at `y_0 = 0`.
pub fn load_price_series(path: &Path) -> Result<ObservationSeries> {
    ObservationSeries::from_returns(&load_returns(path)?)
}

/// Observations from a CSV with a `y` column (`y_0 = 0`).
pub fn load_observations(path: &Path) -> Result<ObservationSeries> {
    const OP: &str = "load_observations";
    let mut rdr = reader(path)?;
    let headers = rdr.headers()?.clone();
    let idx = column(&headers, &["y"]).ok_or_else(|| Error::Schema { op: OP, msg: "expected a 'y' column".into() })?;
    let y = rdr.records().enumerate().map(|(i, rec)| parse_cell(OP, &rec?, idx, i + 1)).collect::<Result<Vec<_>>>()?;
    ObservationSeries::new(0.0, y)
}

/// Pretty JSON with a trailing newline.
pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut f = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut f, value)?;
    writeln!(f)?;
    f.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
        let p = dir.path().join(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    #[test]
    fn price_files() {
        let d = tempfile::tempdir().unwrap();
        let e = std::f64::consts::E;
        let p =
            write(&d, "a.csv", &format!("# comment\ndate,price\n2020-01-01,1\n2020-01-02,{e}\n2020-01-03,{}\n", e * e));
        let r = load_returns(&p).unwrap();
        assert_eq!(r.len(), 2);
        assert!((r[0] - 1.0).abs() < 1e-15 && (r[1] - 1.0).abs() < 1e-15);
        let y = load_price_series(&p).unwrap();
        assert!((y.y[1] - 2.0).abs() < 1e-15);

        let rows: String = (0..250).map(|i| format!("{}\n", 100.0 + i as f64)).collect();
        let p = write(&d, "b.csv", &format!("price\n{rows}"));
        assert_eq!(load_returns(&p).unwrap().len(), 249);

        let p = write(&d, "c.csv", "price\n5\n");
        assert!(load_returns(&p).is_err());
        let p = write(&d, "d.csv", "date,price\nx,1\ny,2\nz,-3\n");
        match load_returns(&p) {
            Err(Error::Data { row, .. }) => assert_eq!(row, 3),
            other => panic!("{other:?}"),
        }
        let p = write(&d, "e.csv", "date,value\nx,1\n");
        assert!(matches!(load_returns(&p), Err(Error::Schema { .. })));
        let p = write(&d, "f.csv", "returns\n0.1\n-0.2\n");
        assert_eq!(load_returns(&p).unwrap(), vec![0.1, -0.2]);
    }

    #[test]
    fn csv_preamble_and_precision() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("o.csv");
        let prov = Provenance { config_hash: "abc".into(), seed: 7 };
        let mut w = CsvOut::create(&p, &prov, &["t", "y"]).unwrap();
        w.row(["1".to_string(), fmt_f64(0.1)]).unwrap();
        w.finish().unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("# config_hash: abc\n# seed: 7\nt,y\n"));
        assert_eq!(load_observations(&p).unwrap().y, vec![0.1]);
        assert_eq!(fmt_f64(f64::NAN), "NaN");
        assert_eq!(fmt_f64(0.1).parse::<f64>().unwrap(), 0.1);
    }
}
