use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::metrics::Metrics;
use crate::error::{Error, Result};
use crate::losses::LossBundle;

/// State of one active-learning cycle after training and evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleReport {
    pub cycle: usize,
    /// Sub-clouds in the pool used for this cycle's training.
    pub sub_clouds: usize,
    pub clicks: usize,
    pub label_fraction: f64,
    pub steps: usize,
    /// Mean of each loss over this cycle's training steps.
    pub losses: LossBundle<f64>,
    pub metrics: Metrics,
    /// Mean TOD over the training cloud (`tod` query mode only).
    pub tod_mean: Option<f64>,
    /// Centers of the next query that came from the fallback rule.
    pub fallback_centers: usize,
    pub seconds: f64,
}

const FIXED_COLUMNS: [&str; 20] = [
    "cycle",
    "sub_clouds",
    "clicks",
    "label_fraction",
    "steps",
    "loss_seg",
    "loss_sl",
    "loss_gmp",
    "loss_pl",
    "loss_total",
    "oa",
    "avg_precision",
    "avg_recall",
    "avg_f1",
    "avg_iou",
    "tod_mean",
    "fallback_centers",
    "seconds",
    "classes",
    "present_classes",
];

const PER_CLASS: [&str; 4] = ["precision", "recall", "f1", "iou"];

fn header(classes: usize) -> Vec<String> {
    let mut h: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    for c in 0..classes {
        for m in PER_CLASS {
            h.push(format!("{m}_{c}"));
        }
    }
    h
}

/// One CSV row per report; per-class columns are `precision_<c>` etc.
pub fn write_csv<W: Write>(w: W, reports: &[CycleReport]) -> Result<()> {
    let classes = reports.first().map_or(0, |r| r.metrics.classes.len());
    let mut out = csv::Writer::from_writer(w);
    out.write_record(header(classes))?;
    for r in reports {
        let l = &r.losses;
        let m = &r.metrics;
        let mut row: Vec<String> = vec![
            r.cycle.to_string(),
            r.sub_clouds.to_string(),
            r.clicks.to_string(),
            r.label_fraction.to_string(),
            r.steps.to_string(),
            l.seg.to_string(),
            l.sl.to_string(),
            l.gmp.to_string(),
            l.pl.to_string(),
            l.total.to_string(),
            m.oa.to_string(),
            m.avg_precision.to_string(),
            m.avg_recall.to_string(),
            m.avg_f1.to_string(),
            m.avg_iou.to_string(),
            r.tod_mean.map(|v| v.to_string()).unwrap_or_default(),
            r.fallback_centers.to_string(),
            r.seconds.to_string(),
            m.classes.len().to_string(),
            m.classes
                .iter()
                .enumerate()
                .filter(|(_, c)| c.present)
                .map(|(i, _)| i.to_string())
                .collect::<Vec<_>>()
                .join(" "),
        ];
        for c in &m.classes {
            row.extend([c.precision, c.recall, c.f1, c.iou].iter().map(|v| v.to_string()));
        }
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

/// Parses a file written by [`write_csv`].
pub fn read_csv<R: Read>(r: R) -> Result<Vec<CycleReport>> {
    let mut rdr = csv::Reader::from_reader(r);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column `{name}`")))
    };
    let idx: Vec<usize> = FIXED_COLUMNS.iter().map(|n| col(n)).collect::<Result<_>>()?;
    let mut out = Vec::new();
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(idx[i]).unwrap_or("");
        let num = |i: usize| -> Result<f64> {
            field(i).parse().map_err(|_| Error::Parse {
                line: line + 2,
                msg: format!("bad number in `{}`", FIXED_COLUMNS[i]),
            })
        };
        let int = |i: usize| -> Result<usize> {
            field(i).parse().map_err(|_| Error::Parse {
                line: line + 2,
                msg: format!("bad integer in `{}`", FIXED_COLUMNS[i]),
            })
        };
        let classes = int(18)?;
        let present: Vec<usize> = field(19)
            .split_whitespace()
            .map(|s| s.parse().unwrap_or(usize::MAX))
            .collect();
        let mut per_class = Vec::with_capacity(classes);
        for c in 0..classes {
            let mut v = [0.0; 4];
            for (k, m) in PER_CLASS.iter().enumerate() {
                let name = format!("{m}_{c}");
                v[k] = rec.get(col(&name)?).unwrap_or("").parse().map_err(|_| Error::Parse {
                    line: line + 2,
                    msg: format!("bad number in `{name}`"),
                })?;
            }
            per_class.push(super::metrics::ClassMetrics {
                precision: v[0],
                recall: v[1],
                f1: v[2],
                iou: v[3],
                present: present.contains(&c),
            });
        }
        out.push(CycleReport {
            cycle: int(0)?,
            sub_clouds: int(1)?,
            clicks: int(2)?,
            label_fraction: num(3)?,
            steps: int(4)?,
            losses: LossBundle {
                seg: num(5)?,
                sl: num(6)?,
                gmp: num(7)?,
                pl: num(8)?,
                total: num(9)?,
            },
            metrics: Metrics {
                oa: num(10)?,
                avg_precision: num(11)?,
                avg_recall: num(12)?,
                avg_f1: num(13)?,
                avg_iou: num(14)?,
                classes: per_class,
            },
            tod_mean: if field(15).is_empty() { None } else { Some(num(15)?) },
            fallback_centers: int(16)?,
            seconds: num(17)?,
        });
    }
    Ok(out)
}

/// Structured end-of-run record.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub seed: u64,
    pub mode: String,
    pub query: String,
    pub supervision: String,
    pub cycles: usize,
    pub final_oa: f64,
    pub final_avg_f1: f64,
    pub final_avg_iou: f64,
    pub final_label_fraction: f64,
    pub avg_f1_per_cycle: Vec<f64>,
    pub seconds: f64,
}

#[cfg(test)]
mod tests {
    use super::super::metrics::{metrics, Confusion};
    use super::*;

    fn report(cycle: usize) -> CycleReport {
        let m = metrics(&Confusion::from_labels(&[0, 1, 1, 2], &[0, 1, 2, 2], 4).unwrap()).unwrap();
        CycleReport {
            cycle,
            sub_clouds: 30 * cycle,
            clicks: 70 * cycle,
            label_fraction: crate::weaklabel::label_fraction(70 * cycle, 160_000),
            steps: 12,
            losses: LossBundle {
                seg: 1.0 / 3.0,
                sl: 0.1,
                gmp: 0.2,
                pl: 0.0,
                total: 1.0 / 3.0 + 0.3,
            },
            metrics: m,
            tod_mean: if cycle == 1 { None } else { Some(0.0123456789) },
            fallback_centers: 0,
            seconds: 1.5,
        }
    }

    #[test]
    fn single_cycle_csv() {
        let mut buf = Vec::new();
        write_csv(&mut buf, &[report(1)]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(text.lines().next().unwrap().split(',').any(|h| h == "label_fraction"));
    }

    #[test]
    fn csv_round_trip() {
        let reports = vec![report(1), report(2), report(3)];
        let mut buf = Vec::new();
        write_csv(&mut buf, &reports).unwrap();
        assert_eq!(read_csv(buf.as_slice()).unwrap(), reports);
    }
}
