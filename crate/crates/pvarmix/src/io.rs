//! Panel CSV ingestion and export.
//!
//! The interchange format is long form with header `date,country,variable,
//! value`; dates are ISO-8601 month strings. Countries and variables become
//! ordered label sets in order of first appearance and the observation
//! matrix is assembled country-major. Malformed rows abort with their line
//! number.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::panel::PanelData;

pub fn read_panel_csv(path: &Path) -> Result<PanelData> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::CsvParse {
            line: 0,
            msg: e.to_string(),
        })?;
    {
        let headers = reader.headers().map_err(|e| Error::CsvParse {
            line: 1,
            msg: e.to_string(),
        })?;
        let want = ["date", "country", "variable", "value"];
        if headers.len() != 4 || headers.iter().zip(want).any(|(h, w)| h != w) {
            return Err(Error::CsvParse {
                line: 1,
                msg: format!("header must be date,country,variable,value; got {headers:?}"),
            });
        }
    }

    let mut dates: Vec<String> = Vec::new();
    let mut countries: Vec<String> = Vec::new();
    let mut variables: Vec<String> = Vec::new();
    let mut date_idx: HashMap<String, usize> = HashMap::new();
    let mut country_idx: HashMap<String, usize> = HashMap::new();
    let mut variable_idx: HashMap<String, usize> = HashMap::new();
    let mut cells: Vec<(usize, usize, usize, f64)> = Vec::new();

    for record in reader.records() {
        let record = record.map_err(|e| Error::CsvParse {
            line: e
                .position()
                .map(|p| p.line())
                .unwrap_or(0),
            msg: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        if record.len() != 4 {
            return Err(Error::CsvParse {
                line,
                msg: format!("expected 4 fields, got {}", record.len()),
            });
        }
        let date = record[0].trim().to_string();
        if !valid_month(&date) {
            return Err(Error::CsvParse {
                line,
                msg: format!("date `{date}` is not an ISO-8601 month (YYYY-MM)"),
            });
        }
        let country = record[1].trim().to_string();
        let variable = record[2].trim().to_string();
        if country.is_empty() || variable.is_empty() {
            return Err(Error::CsvParse {
                line,
                msg: "empty country or variable label".into(),
            });
        }
        let value: f64 = record[3].trim().parse().map_err(|_| Error::CsvParse {
            line,
            msg: format!("value `{}` is not a number", &record[3]),
        })?;
        if !value.is_finite() {
            return Err(Error::CsvParse {
                line,
                msg: "non-finite value".into(),
            });
        }
        let di = *date_idx.entry(date.clone()).or_insert_with(|| {
            dates.push(date);
            dates.len() - 1
        });
        let ci = *country_idx.entry(country.clone()).or_insert_with(|| {
            countries.push(country);
            countries.len() - 1
        });
        let vi = *variable_idx.entry(variable.clone()).or_insert_with(|| {
            variables.push(variable);
            variables.len() - 1
        });
        cells.push((di, ci, vi, value));
    }
    if cells.is_empty() {
        return Err(Error::CsvParse {
            line: 0,
            msg: "no data rows".into(),
        });
    }

    let t = dates.len();
    let m = variables.len();
    let k = countries.len() * m;
    let mut seen = vec![false; t * k];
    let mut y = DMatrix::from_element(t, k, f64::NAN);
    for (di, ci, vi, value) in cells {
        let col = ci * m + vi;
        if seen[di * k + col] {
            return Err(Error::CsvParse {
                line: 0,
                msg: format!(
                    "duplicate cell: {} {} {}",
                    dates[di], countries[ci], variables[vi]
                ),
            });
        }
        seen[di * k + col] = true;
        y[(di, col)] = value;
    }
    if let Some(pos) = seen.iter().position(|&s| !s) {
        let di = pos / k;
        let col = pos % k;
        return Err(Error::CsvParse {
            line: 0,
            msg: format!(
                "missing cell: {} {} {}",
                dates[di],
                countries[col / m],
                variables[col % m]
            ),
        });
    }
    PanelData::new(y, countries, variables, dates)
}

fn valid_month(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 7
        && b[..4].iter().all(u8::is_ascii_digit)
        && b[4] == b'-'
        && b[5..].iter().all(u8::is_ascii_digit)
        && matches!(&s[5..7], "01" | "02" | "03" | "04" | "05" | "06" | "07" | "08" | "09" | "10" | "11" | "12")
}

pub fn write_panel_csv(panel: &PanelData, path: &Path) -> Result<()> {
    let err = |e: csv::Error| Error::CsvParse {
        line: 0,
        msg: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(err)?;
    w.write_record(["date", "country", "variable", "value"])
        .map_err(err)?;
    let y = panel.observations();
    for t in 0..panel.len() {
        for (i, country) in panel.countries().iter().enumerate() {
            for (v, variable) in panel.variables().iter().enumerate() {
                w.write_record([
                    panel.dates()[t].clone(),
                    country.clone(),
                    variable.clone(),
                    format!("{}", y[(t, panel.column(i, v))]),
                ])
                .map_err(err)?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_tmp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn roundtrip_is_identity() {
        let y = DMatrix::from_row_slice(3, 4, &[
            1.0, 2.0, 3.0, 4.0, //
            5.0, 6.5, 7.0, 8.0, //
            -1.0, 0.25, 0.5, 1e-9,
        ]);
        let panel = PanelData::new(
            y,
            vec!["AT".into(), "DE".into()],
            vec!["UN".into(), "DP".into()],
            vec!["2001-01".into(), "2001-02".into(), "2001-03".into()],
        )
        .unwrap();
        let f = tempfile::NamedTempFile::new().unwrap();
        write_panel_csv(&panel, f.path()).unwrap();
        let back = read_panel_csv(f.path()).unwrap();
        assert_eq!(back.observations(), panel.observations());
        assert_eq!(back.countries(), panel.countries());
        assert_eq!(back.variables(), panel.variables());
        assert_eq!(back.dates(), panel.dates());
    }

    #[test]
    fn malformed_rows_abort_with_line_numbers() {
        let f = write_tmp(
            "date,country,variable,value\n2001-01,AT,UN,1.0\n2001-01,AT,DP,notanumber\n",
        );
        match read_panel_csv(f.path()) {
            Err(Error::CsvParse { line, msg }) => {
                assert_eq!(line, 3, "{msg}");
                assert!(msg.contains("notanumber"));
            }
            other => panic!("expected parse error, got {other:?}"),
        }

        let f2 = write_tmp("date,country,variable,value\n2001-13,AT,UN,1.0\n");
        match read_panel_csv(f2.path()) {
            Err(Error::CsvParse { line, .. }) => assert_eq!(line, 2),
            other => panic!("expected parse error, got {other:?}"),
        }

        let f3 = write_tmp("date,nation,variable,value\n2001-01,AT,UN,1.0\n");
        assert!(matches!(
            read_panel_csv(f3.path()),
            Err(Error::CsvParse { line: 1, .. })
        ));
    }

    #[test]
    fn unbalanced_panels_rejected() {
        let f = write_tmp(
            "date,country,variable,value\n2001-01,AT,UN,1.0\n2001-01,DE,UN,2.0\n2001-02,AT,UN,3.0\n",
        );
        assert!(read_panel_csv(f.path()).is_err());
    }

    #[test]
    fn label_order_is_first_appearance() {
        let f = write_tmp(
            "date,country,variable,value\n\
             2001-01,DE,DP,1.0\n2001-01,DE,UN,2.0\n2001-01,AT,DP,3.0\n2001-01,AT,UN,4.0\n",
        );
        let p = read_panel_csv(f.path()).unwrap();
        assert_eq!(p.countries(), &["DE".to_string(), "AT".to_string()]);
        assert_eq!(p.variables(), &["DP".to_string(), "UN".to_string()]);
        // country-major assembly
        assert_eq!(p.observations()[(0, 0)], 1.0);
        assert_eq!(p.observations()[(0, 3)], 4.0);
    }
}
