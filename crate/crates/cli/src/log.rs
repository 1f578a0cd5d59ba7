//! Per-generation run log in CSV or JSON-lines form.
//!
//! Each restart leg starts with a header carrying the strategy parameters.
//! In CSV it is a `#` comment line of `key=value` pairs; in JSONL it is an
//! object with a `params` field.

use std::io::{self, Write};

use purecma::StrategyParams;
use serde::{Deserialize, Serialize};

use crate::config::LogFormat;

/// `f64` fields that may hold NaN or ±∞. Finite values stay numbers;
/// others are written as the strings `NaN`, `inf` and `-inf`.
pub mod float {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};
    use std::fmt;

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if v.is_nan() {
            s.serialize_str("NaN")
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct FloatVisitor;

    impl Visitor<'_> for FloatVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
            f.write_str("a number or one of NaN, inf, -inf")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            v.parse()
                .map_err(|_| E::invalid_value(de::Unexpected::Str(v), &self))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(FloatVisitor)
    }
}

/// One generation. `sigma`, `cond` and the axis lengths describe the
/// distribution the generation was sampled from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub generation: u64,
    pub evals: u64,
    #[serde(with = "float")]
    pub best_f: f64,
    #[serde(with = "float")]
    pub median_f: f64,
    #[serde(with = "float")]
    pub sigma: f64,
    #[serde(with = "float")]
    pub cond: f64,
    #[serde(with = "float")]
    pub min_axis: f64,
    #[serde(with = "float")]
    pub max_axis: f64,
    /// Comma-separated names of the stop conditions that fired.
    pub stop_flags: String,
}

#[derive(Serialize)]
struct JsonHeader<'a> {
    leg: u32,
    seed: u64,
    params: &'a StrategyParams,
}

pub struct LogWriter {
    format: LogFormat,
    out: Box<dyn Write + Send>,
    column_names_written: bool,
}

fn to_io<E: std::error::Error + Send + Sync + 'static>(e: E) -> io::Error {
    io::Error::other(e)
}

/// `key=value` pairs of the parameter header, in a fixed order.
pub fn header_pairs(params: &StrategyParams) -> Vec<(&'static str, String)> {
    let weights: Vec<String> = params.weights.iter().map(f64::to_string).collect();
    vec![
        ("n", params.n.to_string()),
        ("lambda", params.lambda.to_string()),
        ("mu", params.mu.to_string()),
        ("mu_eff", params.mu_eff.to_string()),
        ("c_sigma", params.c_sigma.to_string()),
        ("d_sigma", params.d_sigma.to_string()),
        ("c_c", params.c_c.to_string()),
        ("c_1", params.c_1.to_string()),
        ("c_mu", params.c_mu.to_string()),
        ("c_m", params.c_m.to_string()),
        ("weights", format!("[{}]", weights.join(","))),
    ]
}

impl LogWriter {
    pub fn new(format: LogFormat, out: Box<dyn Write + Send>) -> Self {
        Self {
            format,
            out,
            column_names_written: false,
        }
    }

    pub fn header(&mut self, leg: u32, seed: u64, params: &StrategyParams) -> io::Result<()> {
        match self.format {
            LogFormat::Csv => {
                let mut line = format!("# leg={leg} seed={seed}");
                for (k, v) in header_pairs(params) {
                    line.push_str(&format!(" {k}={v}"));
                }
                writeln!(self.out, "{line}")
            }
            LogFormat::Jsonl => {
                serde_json::to_writer(&mut self.out, &JsonHeader { leg, seed, params })?;
                writeln!(self.out)
            }
        }
    }

    pub fn record(&mut self, rec: &LogRecord) -> io::Result<()> {
        match self.format {
            LogFormat::Csv => {
                let mut row = csv::WriterBuilder::new()
                    .has_headers(!self.column_names_written)
                    .from_writer(Vec::new());
                row.serialize(rec).map_err(to_io)?;
                let bytes = row.into_inner().map_err(|e| to_io(e.into_error()))?;
                self.column_names_written = true;
                self.out.write_all(&bytes)
            }
            LogFormat::Jsonl => {
                serde_json::to_writer(&mut self.out, rec)?;
                writeln!(self.out)
            }
        }
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }
}

/// Parses the records of a CSV log, skipping header comments.
pub fn read_csv(text: &str) -> Result<Vec<LogRecord>, csv::Error> {
    csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_reader(text.as_bytes())
        .deserialize()
        .collect()
}

/// Parses the records of a JSONL log, skipping parameter headers.
pub fn read_jsonl(text: &str) -> Result<Vec<LogRecord>, serde_json::Error> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .filter_map(|l| match serde_json::from_str::<serde_json::Value>(l) {
            Ok(v) if v.get("params").is_some() => None,
            Ok(v) => Some(serde_json::from_value(v)),
            Err(e) => Some(Err(e)),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::{Arc, Mutex};

    #[derive(Clone, Default)]
    struct Shared(Arc<Mutex<Vec<u8>>>);

    impl Write for Shared {
        fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
            self.0.lock().unwrap().extend_from_slice(buf);
            Ok(buf.len())
        }
        fn flush(&mut self) -> io::Result<()> {
            Ok(())
        }
    }

    fn sample(generation: u64) -> LogRecord {
        LogRecord {
            generation,
            evals: 10 * (generation + 1),
            best_f: 0.1 / 3.0 * generation as f64,
            median_f: std::f64::consts::PI.powi(generation as i32),
            sigma: 1.0 / 7.0,
            cond: 1.0,
            min_axis: 1e-300,
            max_axis: 123_456.789_012_345_67,
            stop_flags: String::new(),
        }
    }

    fn write_all(format: LogFormat, recs: &[LogRecord]) -> String {
        let buf = Shared::default();
        let mut w = LogWriter::new(format, Box::new(buf.clone()));
        w.header(0, 1, &StrategyParams::new(3).unwrap()).unwrap();
        for r in recs {
            w.record(r).unwrap();
        }
        w.flush().unwrap();
        drop(w);
        let bytes = buf.0.lock().unwrap().clone();
        String::from_utf8(bytes).unwrap()
    }

    #[test]
    fn csv_round_trip() {
        let mut recs: Vec<LogRecord> = (0..5).map(sample).collect();
        recs[4].stop_flags = "TolFun,TolX".into();
        recs[3].best_f = f64::INFINITY;
        let text = write_all(LogFormat::Csv, &recs);
        assert!(text.starts_with("# leg=0 seed=1 n=3 lambda=7"));
        assert!(text.contains("weights=["));
        assert!(text.lines().nth(1).unwrap().starts_with(
            "generation,evals,best_f,median_f,sigma,cond,min_axis,max_axis,stop_flags"
        ));
        assert_eq!(read_csv(&text).unwrap(), recs);
    }

    #[test]
    fn jsonl_round_trip_with_non_finite_values() {
        let mut recs: Vec<LogRecord> = (0..3).map(sample).collect();
        recs[1].best_f = f64::NEG_INFINITY;
        recs[2].stop_flags = "ConditionCov".into();
        let text = write_all(LogFormat::Jsonl, &recs);
        assert!(text.lines().next().unwrap().contains("\"params\""));
        assert_eq!(read_jsonl(&text).unwrap(), recs);

        let mut nan = sample(0);
        nan.median_f = f64::NAN;
        let back = read_jsonl(&write_all(LogFormat::Jsonl, &[nan])).unwrap();
        assert!(back[0].median_f.is_nan());
    }
}
