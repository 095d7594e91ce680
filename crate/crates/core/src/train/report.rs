//! CSV artifacts: histories, accuracy-vs-SNR, confusion matrices, sweeps.

use std::collections::BTreeSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use super::fit::TrainHistory;
use super::metrics::MetricsReport;
use super::sweep::SweepRow;
use super::TrainError;

fn csv_err(e: csv::Error) -> TrainError {
    TrainError::Csv(e.to_string())
}

/// `epoch, train_loss, val_loss, val_acc`; epochs count from 1.
pub fn write_history<W: Write>(w: W, h: &TrainHistory) -> Result<(), TrainError> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["epoch", "train_loss", "val_loss", "val_acc"]).map_err(csv_err)?;
    for e in 0..h.epochs() {
        out.write_record([
            (e + 1).to_string(),
            h.train_loss[e].to_string(),
            h.val_loss[e].to_string(),
            h.val_acc[e].to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// `snr_db` then one accuracy column per model; blank where a model has no
/// samples at that SNR.
pub fn write_acc_vs_snr<W: Write>(w: W, models: &[(&str, &MetricsReport)]) -> Result<(), TrainError> {
    let columns: Vec<(&str, Vec<(i32, f64)>)> = models
        .iter()
        .map(|(n, r)| (*n, r.per_snr.iter().map(|s| (s.snr_db, s.accuracy)).collect()))
        .collect();
    write_acc_columns(w, &columns)
}

/// Same layout as [`write_acc_vs_snr`] from bare `(snr, accuracy)` curves.
pub fn write_acc_columns<W: Write>(w: W, models: &[(&str, Vec<(i32, f64)>)]) -> Result<(), TrainError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["snr_db".to_string()];
    header.extend(models.iter().map(|(n, _)| n.to_string()));
    out.write_record(&header).map_err(csv_err)?;
    let snrs: BTreeSet<i32> = models.iter().flat_map(|(_, c)| c.iter().map(|p| p.0)).collect();
    for snr in snrs {
        let mut rec = vec![snr.to_string()];
        for (_, curve) in models {
            rec.push(
                curve
                    .iter()
                    .find(|p| p.0 == snr)
                    .map(|p| p.1.to_string())
                    .unwrap_or_default(),
            );
        }
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// K×K row-normalized matrix with a leading truth-label column.
pub fn write_confusion<W: Write>(w: W, r: &MetricsReport) -> Result<(), TrainError> {
    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["truth".to_string()];
    header.extend(r.class_names.iter().cloned());
    out.write_record(&header).map_err(csv_err)?;
    for (name, row) in r.class_names.iter().zip(&r.confusion) {
        let mut rec = vec![name.clone()];
        rec.extend(row.iter().map(|v| v.to_string()));
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

const SWEEP_FIXED: [&str; 7] = ["label", "accuracy", "ci95", "n_test", "epochs", "best_epoch", "seconds"];

pub fn write_sweep<W: Write>(w: W, rows: &[SweepRow]) -> Result<(), TrainError> {
    let mut out = csv::Writer::from_writer(w);
    let snrs: BTreeSet<i32> = rows.iter().flat_map(|r| r.per_snr.iter().map(|s| s.0)).collect();
    let mut header: Vec<String> = SWEEP_FIXED.iter().map(|s| s.to_string()).collect();
    header.extend(snrs.iter().map(|s| format!("acc_snr_{s}")));
    out.write_record(&header).map_err(csv_err)?;
    for r in rows {
        let mut rec = vec![
            r.label.clone(),
            r.accuracy.to_string(),
            r.ci95.to_string(),
            r.n_test.to_string(),
            r.epochs.to_string(),
            r.best_epoch.to_string(),
            r.seconds.to_string(),
        ];
        for s in &snrs {
            rec.push(
                r.per_snr
                    .iter()
                    .find(|p| p.0 == *s)
                    .map(|p| p.1.to_string())
                    .unwrap_or_default(),
            );
        }
        out.write_record(&rec).map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

fn parse<T: std::str::FromStr>(field: &str, what: &str) -> Result<T, TrainError> {
    field
        .parse()
        .map_err(|_| TrainError::Csv(format!("bad {what} value `{field}`")))
}

pub fn read_sweep<R: Read>(r: R) -> Result<Vec<SweepRow>, TrainError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers().map_err(csv_err)?.clone();
    if header.len() < SWEEP_FIXED.len() || header.iter().zip(SWEEP_FIXED).any(|(a, b)| a != b) {
        return Err(TrainError::Csv("not a sweep table".into()));
    }
    let snrs = header
        .iter()
        .skip(SWEEP_FIXED.len())
        .map(|h| {
            h.strip_prefix("acc_snr_")
                .ok_or_else(|| TrainError::Csv(format!("unexpected column `{h}`")))
                .and_then(|s| parse::<i32>(s, "snr column"))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        let mut per_snr = Vec::new();
        for (k, s) in snrs.iter().enumerate() {
            let f = &rec[SWEEP_FIXED.len() + k];
            if !f.is_empty() {
                per_snr.push((*s, parse(f, "accuracy")?));
            }
        }
        rows.push(SweepRow {
            label: rec[0].to_string(),
            accuracy: parse(&rec[1], "accuracy")?,
            ci95: parse(&rec[2], "ci95")?,
            n_test: parse(&rec[3], "n_test")?,
            epochs: parse(&rec[4], "epochs")?,
            best_epoch: parse(&rec[5], "best_epoch")?,
            seconds: parse(&rec[6], "seconds")?,
            per_snr,
        });
    }
    Ok(rows)
}

/// A parsed CSV file: header plus string records.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn column(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    /// Every cell parsed as `f64`.
    pub fn numeric(&self) -> Result<Vec<Vec<f64>>, TrainError> {
        self.rows
            .iter()
            .map(|r| r.iter().map(|c| parse(c, "numeric")).collect())
            .collect()
    }
}

pub fn read_table<R: Read>(r: R) -> Result<Table, TrainError> {
    let mut rdr = csv::Reader::from_reader(r);
    let header = rdr.headers().map_err(csv_err)?.iter().map(String::from).collect();
    let rows = rdr
        .records()
        .map(|r| r.map(|rec| rec.iter().map(String::from).collect()).map_err(csv_err))
        .collect::<Result<_, _>>()?;
    Ok(Table { header, rows })
}

pub fn read_table_file(path: &Path) -> Result<Table, TrainError> {
    read_table(File::open(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::train::metrics::metrics_from_predictions;

    fn report() -> MetricsReport {
        let names: Vec<String> = ["A", "B"].iter().map(|s| s.to_string()).collect();
        metrics_from_predictions(&[0, 1, 1, 1], &[0, 1, 0, 1], &[-2, -2, 4, 4], &names).unwrap()
    }

    #[test]
    fn history_csv() {
        let h = TrainHistory {
            train_loss: vec![1.5, 0.75],
            val_loss: vec![1.25, 1.0],
            val_acc: vec![0.5, 0.625],
            epoch_seconds: vec![3.0, 4.0],
            best_epoch: 1,
        };
        let mut buf = Vec::new();
        write_history(&mut buf, &h).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "epoch,train_loss,val_loss,val_acc\n1,1.5,1.25,0.5\n2,0.75,1,0.625\n"
        );
    }

    #[test]
    fn acc_and_confusion_tables() {
        let r = report();
        let mut buf = Vec::new();
        write_acc_vs_snr(&mut buf, &[("m1", &r), ("m2", &r)]).unwrap();
        let t = read_table(&buf[..]).unwrap();
        assert_eq!(t.header, vec!["snr_db", "m1", "m2"]);
        assert_eq!(t.numeric().unwrap(), vec![vec![-2.0, 1.0, 1.0], vec![4.0, 0.5, 0.5]]);

        let mut buf = Vec::new();
        write_confusion(&mut buf, &r).unwrap();
        let t = read_table(&buf[..]).unwrap();
        assert_eq!(t.header, vec!["truth", "A", "B"]);
        assert_eq!(t.rows[0], vec!["A", "0.5", "0.5"]);
        assert_eq!(t.rows[1], vec!["B", "0", "1"]);
    }

    #[test]
    fn sweep_round_trip() {
        let rows = vec![
            SweepRow {
                label: "3".into(),
                accuracy: 0.25,
                ci95: 0.01,
                n_test: 400,
                epochs: 7,
                best_epoch: 2,
                seconds: 1.5,
                per_snr: vec![(-10, 0.125), (10, 0.5)],
            },
            SweepRow {
                label: "cldnn".into(),
                accuracy: 0.75,
                ci95: 0.02,
                n_test: 400,
                epochs: 3,
                best_epoch: 0,
                seconds: 2.0,
                per_snr: vec![(10, 0.875)],
            },
        ];
        let mut buf = Vec::new();
        write_sweep(&mut buf, &rows).unwrap();
        assert_eq!(read_sweep(&buf[..]).unwrap(), rows);
        assert!(read_sweep(&b"x,y\n1,2\n"[..]).is_err());
    }
}
