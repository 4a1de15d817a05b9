use std::collections::BTreeMap;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// One metric value with the parameters it was computed under, serialized
/// as `{"schema": 1, "metric": .., "value": .., "params": {..}}`.
///
/// Non-finite values are written as the strings `"inf"`, `"-inf"` and
/// `"nan"` since JSON has no numeric spelling for them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub schema: u32,
    pub metric: String,
    #[serde(serialize_with = "write_value", deserialize_with = "read_value")]
    pub value: f64,
    pub params: BTreeMap<String, String>,
}

pub const METRIC_SCHEMA: u32 = 1;

impl MetricReport {
    pub fn new(metric: &str, value: f64) -> Self {
        MetricReport { schema: METRIC_SCHEMA, metric: metric.to_string(), value, params: BTreeMap::new() }
    }

    pub fn param(mut self, key: &str, value: impl ToString) -> Self {
        self.params.insert(key.to_string(), value.to_string());
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("metric report serializes")
    }
}

fn write_value<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
    if v.is_finite() {
        s.serialize_f64(*v)
    } else if v.is_nan() {
        s.serialize_str("nan")
    } else if *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_str("-inf")
    }
}

fn read_value<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Num(f64),
        Text(String),
    }
    match Raw::deserialize(d)? {
        Raw::Num(v) => Ok(v),
        Raw::Text(t) => match t.as_str() {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            other => Err(serde::de::Error::custom(format!("not a metric value: {other}"))),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let r = MetricReport::new("psnr", f64::INFINITY).param("data_range", 1.0);
        let text = r.to_json();
        assert_eq!(text, r#"{"schema":1,"metric":"psnr","value":"inf","params":{"data_range":"1"}}"#);
        assert_eq!(serde_json::from_str::<MetricReport>(&text).unwrap(), r);
        let finite = MetricReport::new("ssim", 0.25);
        assert_eq!(serde_json::from_str::<MetricReport>(&finite.to_json()).unwrap(), finite);
    }
}
