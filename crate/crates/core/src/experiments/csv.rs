use std::fmt::Write as _;
use std::path::Path;

use super::{ResultRow, ResultTable};
use crate::error::{Error, Result};

const HEADER: &str = "sweep_param,sweep_value,method,ue_class,metric,mean,stderr,n";

pub fn table_to_csv(table: &ResultTable) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in &table.rows {
        writeln!(
            out,
            "{},{:.6},{},{},{},{:.12},{:.12},{}",
            r.sweep_param, r.sweep_value, r.method, r.ue_class, r.metric, r.mean, r.stderr, r.n
        )
        .expect("writing to a String");
    }
    out
}

pub fn write_csv(table: &ResultTable, path: &Path) -> Result<()> {
    std::fs::write(path, table_to_csv(table)).map_err(|e| Error::from(e).context(path.display().to_string()))
}

pub fn read_csv(path: &Path) -> Result<ResultTable> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).context(path.display().to_string()))?;
    let mut lines = text.lines();
    if lines.next() != Some(HEADER) {
        return Err(Error::Parse(format!("{}: unexpected header", path.display())));
    }
    let num = |s: &str, line: usize| -> Result<f64> {
        s.parse().map_err(|_| Error::Parse(format!("line {line}: bad number '{s}'")))
    };
    let rows = lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return Err(Error::Parse(format!("line {}: expected 8 fields", i + 2)));
            }
            Ok(ResultRow {
                sweep_param: f[0].to_string(),
                sweep_value: num(f[1], i + 2)?,
                method: f[2].to_string(),
                ue_class: f[3].to_string(),
                metric: f[4].to_string(),
                mean: num(f[5], i + 2)?,
                stderr: num(f[6], i + 2)?,
                n: f[7].parse().map_err(|_| Error::Parse(format!("line {}: bad count", i + 2)))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ResultTable { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: f64, mean: f64) -> ResultRow {
        ResultRow {
            sweep_param: "p_train_dbm".into(),
            sweep_value: v,
            method: "DA".into(),
            ue_class: "all".into(),
            metric: "nmse_db".into(),
            mean,
            stderr: 0.012_345_678_9,
            n: 40,
        }
    }

    #[test]
    fn empty_table_is_header_only() {
        assert_eq!(table_to_csv(&ResultTable::default()), format!("{HEADER}\n"));
    }

    #[test]
    fn round_trip_at_emitted_precision() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        let table = ResultTable {
            rows: vec![row(-7.0, -12.345_678_901_234_7), row(0.5, f64::NAN)],
        };
        write_csv(&table, &path).unwrap();
        let back = read_csv(&path).unwrap();
        assert_eq!(back.rows.len(), 2);
        assert_eq!(back.rows[0].mean, -12.345_678_901_235);
        assert!(back.rows[1].mean.is_nan());
        assert_eq!(table_to_csv(&back), table_to_csv(&table));
        write_csv(&table, &path).unwrap();
        let again = std::fs::read(&path).unwrap();
        assert_eq!(again, table_to_csv(&table).into_bytes());
    }

    #[test]
    fn unwritable_path_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("no/such/dir/t.csv");
        assert!(write_csv(&ResultTable::default(), &path).is_err());
    }
}
