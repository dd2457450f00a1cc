use std::io::Write;

use serde::{Deserialize, Serialize};

/// One logged training step. Terms that do not apply to a mode are `None`
/// and written as empty CSV fields.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub step: u64,
    pub nell: Option<f64>,
    pub nelp: Option<f64>,
    pub dre_latent: Option<f64>,
    pub dre_observed: Option<f64>,
    pub dm_latent: Option<f64>,
    pub dm_observed: Option<f64>,
    pub total: Option<f64>,
}

pub const METRIC_COLUMNS: [&str; 8] = [
    "step",
    "nell",
    "nelp",
    "dre_latent",
    "dre_observed",
    "dm_latent",
    "dm_observed",
    "total",
];

impl MetricRow {
    fn fields(&self) -> [Option<f64>; 7] {
        [
            self.nell,
            self.nelp,
            self.dre_latent,
            self.dre_observed,
            self.dm_latent,
            self.dm_observed,
            self.total,
        ]
    }
}

/// Writes the metric log with a header row.
pub fn write_metrics<W: Write>(rows: &[MetricRow], writer: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(METRIC_COLUMNS)?;
    for r in rows {
        let mut rec = vec![r.step.to_string()];
        rec.extend(r.fields().iter().map(|v| v.map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Parses a metric log written by [`write_metrics`].
pub fn read_metrics<R: std::io::Read>(reader: R) -> Result<Vec<MetricRow>, csv::Error> {
    let mut rdr = csv::Reader::from_reader(reader);
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let num = |i: usize| -> Option<f64> { rec.get(i).filter(|s| !s.is_empty()).and_then(|s| s.parse().ok()) };
        rows.push(MetricRow {
            step: rec.get(0).and_then(|s| s.parse().ok()).unwrap_or(0),
            nell: num(1),
            nelp: num(2),
            dre_latent: num(3),
            dre_observed: num(4),
            dm_latent: num(5),
            dm_observed: num(6),
            total: num(7),
        });
    }
    Ok(rows)
}
