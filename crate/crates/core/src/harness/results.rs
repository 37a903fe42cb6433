//! Per-run result rows, their CSV form, and per-cell aggregates.
//!
//! Row CSV columns, in order:
//!
//! | column | meaning |
//! |---|---|
//! | `run_index` | position in the run list (cell-major) |
//! | `seed` | `base_seed + repetition` |
//! | `m`, `k` | replay schedule parameters (`k` is `NA` without replay) |
//! | `schedule` | schedule tag |
//! | `online_steps_to_score`, `total_steps_to_score` | step counters at the first episode meeting the score threshold |
//! | `score_censored` | `1` if no episode met the threshold within the horizon |
//! | `total_steps_to_qconv` | first logged iteration meeting the Q threshold |
//! | `qconv_censored` | `1` if the Q threshold was never met |
//! | `reached_goal` | `1`/`0` from greedy evaluation |
//! | `bridge_count` | bridge crossings (rare-experience runs) |
//! | `final_distance` | sup-norm distance to Q* at the end of the run |
//! | `c_hat` | measured covering constant |
//! | `online_steps`, `total_steps` | iterations executed |
//!
//! `NA` marks a value that was not measured or is censored.

use std::io::{Read, Write};

use serde::Serialize;

use super::HarnessError;

pub const NA: &str = "NA";

/// A measurement that may be censored at the horizon or not taken at all.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure<T> {
    Value(T),
    Censored,
    NotMeasured,
}

impl<T: Copy> Measure<T> {
    pub fn value(&self) -> Option<T> {
        match self {
            Measure::Value(v) => Some(*v),
            _ => None,
        }
    }

    pub fn from_detection(measured: bool, hit: Option<T>) -> Self {
        match (measured, hit) {
            (false, _) => Measure::NotMeasured,
            (true, Some(v)) => Measure::Value(v),
            (true, None) => Measure::Censored,
        }
    }

    fn censored_flag(&self) -> String {
        match self {
            Measure::Value(_) => "0".into(),
            Measure::Censored => "1".into(),
            Measure::NotMeasured => NA.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResultRow {
    pub run_index: usize,
    pub seed: u64,
    pub m: usize,
    pub k: Option<usize>,
    pub schedule: String,
    pub online_steps_to_score: Measure<u64>,
    pub total_steps_to_score: Measure<u64>,
    pub total_steps_to_qconv: Measure<u64>,
    pub reached_goal: Option<bool>,
    pub bridge_count: Option<u64>,
    pub final_distance: Option<f64>,
    pub c_hat: Option<f64>,
    pub online_steps: u64,
    pub total_steps: u64,
}

pub const ROW_HEADER: [&str; 16] = [
    "run_index",
    "seed",
    "m",
    "k",
    "schedule",
    "online_steps_to_score",
    "total_steps_to_score",
    "score_censored",
    "total_steps_to_qconv",
    "qconv_censored",
    "reached_goal",
    "bridge_count",
    "final_distance",
    "c_hat",
    "online_steps",
    "total_steps",
];

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| NA.to_string(), |v| v.to_string())
}

impl ResultRow {
    fn to_record(&self) -> Vec<String> {
        vec![
            self.run_index.to_string(),
            self.seed.to_string(),
            self.m.to_string(),
            opt(self.k),
            self.schedule.clone(),
            opt(self.online_steps_to_score.value()),
            opt(self.total_steps_to_score.value()),
            self.total_steps_to_score.censored_flag(),
            opt(self.total_steps_to_qconv.value()),
            self.total_steps_to_qconv.censored_flag(),
            opt(self.reached_goal.map(u8::from)),
            opt(self.bridge_count),
            opt(self.final_distance),
            opt(self.c_hat),
            self.online_steps.to_string(),
            self.total_steps.to_string(),
        ]
    }

    fn from_record(rec: &csv::StringRecord) -> Result<Self, HarnessError> {
        if rec.len() != ROW_HEADER.len() {
            return Err(HarnessError::Parse(format!(
                "expected {} columns, found {}",
                ROW_HEADER.len(),
                rec.len()
            )));
        }
        let field = |i: usize| &rec[i];
        Ok(Self {
            run_index: parse(field(0))?,
            seed: parse(field(1))?,
            m: parse(field(2))?,
            k: parse_opt(field(3))?,
            schedule: field(4).to_string(),
            online_steps_to_score: parse_measure(field(5), field(7))?,
            total_steps_to_score: parse_measure(field(6), field(7))?,
            total_steps_to_qconv: parse_measure(field(8), field(9))?,
            reached_goal: parse_opt::<u8>(field(10))?.map(|v| v == 1),
            bridge_count: parse_opt(field(11))?,
            final_distance: parse_opt(field(12))?,
            c_hat: parse_opt(field(13))?,
            online_steps: parse(field(14))?,
            total_steps: parse(field(15))?,
        })
    }
}

fn parse<T: std::str::FromStr>(s: &str) -> Result<T, HarnessError> {
    s.parse()
        .map_err(|_| HarnessError::Parse(format!("bad field {s:?}")))
}

fn parse_opt<T: std::str::FromStr>(s: &str) -> Result<Option<T>, HarnessError> {
    if s == NA {
        Ok(None)
    } else {
        parse(s).map(Some)
    }
}

fn parse_measure<T: std::str::FromStr + Copy>(
    value: &str,
    censored: &str,
) -> Result<Measure<T>, HarnessError> {
    match censored {
        NA => Ok(Measure::NotMeasured),
        "1" => Ok(Measure::Censored),
        "0" => parse(value).map(Measure::Value),
        other => Err(HarnessError::Parse(format!("bad censoring flag {other:?}"))),
    }
}

fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

pub fn write_rows_csv<W: Write>(rows: &[ResultRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv_writer(out);
    w.write_record(ROW_HEADER)?;
    for row in rows {
        w.write_record(row.to_record())?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn read_rows_csv<R: Read>(input: R) -> Result<Vec<ResultRow>, HarnessError> {
    let mut r = csv::Reader::from_reader(input);
    if r.headers()?.iter().ne(ROW_HEADER) {
        return Err(HarnessError::Parse("unexpected result-row header".into()));
    }
    r.records().map(|rec| ResultRow::from_record(&rec?)).collect()
}

/// Summary of one metric over the runs of one sweep cell. `mean` and `sem`
/// cover the observed (uncensored) runs only.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub schedule: String,
    pub m: usize,
    pub k: Option<usize>,
    pub metric: &'static str,
    pub runs: usize,
    pub observed: usize,
    pub censored: usize,
    pub censored_fraction: f64,
    pub mean: Option<f64>,
    /// Standard error of the mean (sample standard deviation over √n).
    pub sem: Option<f64>,
}

pub const AGGREGATE_HEADER: [&str; 10] = [
    "schedule",
    "m",
    "k",
    "metric",
    "runs",
    "observed",
    "censored",
    "censored_fraction",
    "mean",
    "sem",
];

/// Mean and standard error; the SEM needs at least two values.
pub fn mean_sem(values: &[f64]) -> (Option<f64>, Option<f64>) {
    let n = values.len();
    if n == 0 {
        return (None, None);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n < 2 {
        return (Some(mean), None);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    (Some(mean), Some((var / n as f64).sqrt()))
}

type MetricFn = fn(&ResultRow) -> Measure<f64>;

fn plain<T: Into<f64>>(v: Option<T>) -> Measure<f64> {
    v.map_or(Measure::NotMeasured, |x| Measure::Value(x.into()))
}

fn widen(m: Measure<u64>) -> Measure<f64> {
    match m {
        Measure::Value(v) => Measure::Value(v as f64),
        Measure::Censored => Measure::Censored,
        Measure::NotMeasured => Measure::NotMeasured,
    }
}

const METRICS: [(&str, MetricFn); 7] = [
    ("online_steps_to_score", |r| widen(r.online_steps_to_score)),
    ("total_steps_to_score", |r| widen(r.total_steps_to_score)),
    ("total_steps_to_qconv", |r| widen(r.total_steps_to_qconv)),
    ("reached_goal", |r| plain(r.reached_goal.map(|b| b as u8))),
    ("bridge_count", |r| plain(r.bridge_count.map(|n| n as f64))),
    ("final_distance", |r| plain(r.final_distance)),
    ("c_hat", |r| plain(r.c_hat)),
];

/// Groups rows by schedule tag in order of first appearance and summarises
/// every metric measured in at least one run of the cell.
pub fn aggregate(rows: &[ResultRow]) -> Vec<AggregateRow> {
    let mut cells: Vec<&str> = Vec::new();
    for row in rows {
        if !cells.contains(&row.schedule.as_str()) {
            cells.push(&row.schedule);
        }
    }
    let mut out = Vec::new();
    for cell in cells {
        let members: Vec<&ResultRow> = rows.iter().filter(|r| r.schedule == cell).collect();
        for (metric, get) in METRICS {
            let measures: Vec<Measure<f64>> = members.iter().map(|r| get(r)).collect();
            let runs = measures
                .iter()
                .filter(|m| !matches!(m, Measure::NotMeasured))
                .count();
            if runs == 0 {
                continue;
            }
            let values: Vec<f64> = measures.iter().filter_map(Measure::value).collect();
            let censored = runs - values.len();
            let (mean, sem) = mean_sem(&values);
            out.push(AggregateRow {
                schedule: cell.to_string(),
                m: members[0].m,
                k: members[0].k,
                metric,
                runs,
                observed: values.len(),
                censored,
                censored_fraction: censored as f64 / runs as f64,
                mean,
                sem,
            });
        }
    }
    out
}

pub fn write_aggregate_csv<W: Write>(rows: &[AggregateRow], out: W) -> Result<(), HarnessError> {
    let mut w = csv_writer(out);
    w.write_record(AGGREGATE_HEADER)?;
    for a in rows {
        w.write_record([
            a.schedule.clone(),
            a.m.to_string(),
            opt(a.k),
            a.metric.to_string(),
            a.runs.to_string(),
            a.observed.to_string(),
            a.censored.to_string(),
            a.censored_fraction.to_string(),
            opt(a.mean),
            opt(a.sem),
        ])?;
    }
    w.flush().map_err(csv::Error::from)?;
    Ok(())
}

pub fn rows_to_csv_string(rows: &[ResultRow]) -> Result<String, HarnessError> {
    let mut buf = Vec::new();
    write_rows_csv(rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

pub fn aggregate_to_csv_string(rows: &[AggregateRow]) -> Result<String, HarnessError> {
    let mut buf = Vec::new();
    write_aggregate_csv(rows, &mut buf)?;
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}
