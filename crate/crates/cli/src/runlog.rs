//! Training-log persistence: newline-delimited records with the fields
//! `stage,iter,lr,l_sup,l_dis_f,l_dis_p,l_unsup,total`. Floats are written
//! with shortest-roundtrip formatting, so a reread reproduces them exactly.

use std::fs;
use std::path::Path;

use sslkd_core::train::{IterRecord, TrainLog};

use crate::error::{AppError, AppResult};

pub const HEADER: &str = "stage,iter,lr,l_sup,l_dis_f,l_dis_p,l_unsup,total";

pub fn write_log(path: &Path, log: &TrainLog) -> AppResult<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(AppError::io(parent))?;
    }
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in &log.records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            log.stage, r.iter, r.lr, r.l_sup, r.l_dis_f, r.l_dis_p, r.l_unsup, r.total
        ));
    }
    fs::write(path, out).map_err(AppError::io(path))
}

pub fn read_records(path: &Path) -> AppResult<Vec<(String, IterRecord)>> {
    let text = fs::read_to_string(path).map_err(AppError::io(path))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if line != HEADER {
                return Err(AppError::Runtime(format!(
                    "{path:?}: unexpected header {line:?}"
                )));
            }
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(AppError::Runtime(format!(
                "{path:?}:{}: expected 8 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let parse = |s: &str| -> AppResult<f64> {
            s.parse()
                .map_err(|_| AppError::Runtime(format!("{path:?}:{}: bad float {s:?}", lineno + 1)))
        };
        out.push((
            fields[0].to_string(),
            IterRecord {
                iter: fields[1]
                    .parse()
                    .map_err(|_| AppError::Runtime(format!("{path:?}:{}: bad iter", lineno + 1)))?,
                lr: parse(fields[2])?,
                l_sup: parse(fields[3])?,
                l_dis_f: parse(fields[4])?,
                l_dis_p: parse(fields[5])?,
                l_unsup: parse(fields[6])?,
                total: parse(fields[7])?,
            },
        ));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut log = TrainLog::new("sslkd");
        log.records.push(IterRecord {
            iter: 0,
            lr: 0.05,
            l_sup: std::f64::consts::LN_2,
            l_dis_f: 0.1 / 3.0,
            l_dis_p: 0.0,
            l_unsup: 1e-12,
            total: 0.7264805138932786,
        });
        let path = dir.path().join("logs/sslkd.csv");
        write_log(&path, &log).unwrap();
        let back = read_records(&path).unwrap();
        assert_eq!(back.len(), 1);
        assert_eq!(back[0].0, "sslkd");
        assert_eq!(back[0].1, log.records[0]);
    }
}
