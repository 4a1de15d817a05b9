use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub const REPORT_SCHEMA: u32 = 1;

/// One benchmark row. Column order is fixed:
/// `workload,stage,backend,shape,params,repeats,warmup,median_s,speedup_vs_reference`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingRow {
    pub workload: String,
    pub stage: String,
    pub backend: String,
    /// Extents joined by `x`, e.g. `60x256x256`.
    pub shape: String,
    /// Every parameter needed to rerun the row, as `key=value` pairs joined by `;`.
    pub params: String,
    pub repeats: usize,
    pub warmup: usize,
    pub median_s: f64,
    /// Reference median over this row's median; empty when no reference row
    /// exists for the same workload, stage and params.
    pub speedup_vs_reference: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub rows: Vec<TimingRow>,
}

#[derive(Serialize)]
struct JsonReport<'a> {
    schema: u32,
    rows: &'a [TimingRow],
}

pub fn shape_string(shape: &[usize]) -> String {
    shape.iter().map(|n| n.to_string()).collect::<Vec<_>>().join("x")
}

pub fn params_string(params: &BTreeMap<String, String>) -> String {
    params.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
}

impl TimingReport {
    pub fn push(&mut self, row: TimingRow) {
        self.rows.push(row);
    }

    /// Fills `speedup_vs_reference` from the matching reference rows.
    pub fn compute_speedups(&mut self) {
        let reference: BTreeMap<(String, String, String, String), f64> = self
            .rows
            .iter()
            .filter(|r| r.backend == "reference")
            .map(|r| ((r.workload.clone(), r.stage.clone(), r.shape.clone(), r.params.clone()), r.median_s))
            .collect();
        for r in &mut self.rows {
            let key = (r.workload.clone(), r.stage.clone(), r.shape.clone(), r.params.clone());
            r.speedup_vs_reference = reference.get(&key).map(|&t| t / r.median_s);
        }
    }

    pub fn to_csv(&self) -> Result<String, csv::Error> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r)?;
        }
        if self.rows.is_empty() {
            w.write_record(["workload", "stage", "backend", "shape", "params", "repeats", "warmup", "median_s", "speedup_vs_reference"])?;
        }
        let bytes = w.into_inner().map_err(|e| e.into_error())?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&JsonReport { schema: REPORT_SCHEMA, rows: &self.rows }).expect("rows serialize")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(backend: &str, t: f64) -> TimingRow {
        TimingRow {
            workload: "rescale".into(),
            stage: "round_trip".into(),
            backend: backend.into(),
            shape: shape_string(&[4, 5, 6]),
            params: "order=1".into(),
            repeats: 3,
            warmup: 1,
            median_s: t,
            speedup_vs_reference: None,
        }
    }

    #[test]
    fn speedups_and_csv_layout() {
        let mut rep = TimingReport::default();
        rep.push(row("reference", 2.0));
        rep.push(row("accelerated", 0.5));
        rep.compute_speedups();
        assert_eq!(rep.rows[0].speedup_vs_reference, Some(1.0));
        assert_eq!(rep.rows[1].speedup_vs_reference, Some(4.0));
        let csv = rep.to_csv().unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("workload,stage,backend,shape,params,repeats,warmup,median_s,speedup_vs_reference"));
        assert_eq!(lines.next(), Some("rescale,round_trip,reference,4x5x6,order=1,3,1,2.0,1.0"));
        assert_eq!(lines.count(), 1);
    }

    #[test]
    fn missing_reference_leaves_speedup_empty() {
        let mut rep = TimingReport::default();
        rep.push(row("accelerated", 0.5));
        rep.compute_speedups();
        assert!(rep.to_csv().unwrap().lines().nth(1).unwrap().ends_with("0.5,"));
        let json: serde_json::Value = serde_json::from_str(&rep.to_json()).unwrap();
        assert_eq!(json["schema"], 1);
        assert!(json["rows"][0]["speedup_vs_reference"].is_null());
    }

    #[test]
    fn params_are_sorted_pairs() {
        let p: BTreeMap<String, String> = [("b".to_string(), "2".to_string()), ("a".to_string(), "x".to_string())].into();
        assert_eq!(params_string(&p), "a=x;b=2");
    }
}
