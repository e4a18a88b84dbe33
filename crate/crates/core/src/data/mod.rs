//! Time-series datasets: schema, CSV ingestion, min-max scaling, calendar
//! batching and a synthetic load-cycling generator.
//!
//! A [`Dataset`] stores one row per sampling instant with the input columns
//! first and the target column last. Timestamps are UTC and strictly
//! increasing.

mod scaler;
mod synthetic;

pub use scaler::{apply_scaler, fit_scaler, Scaler};
pub use synthetic::{generate_synthetic, plant_schema, DriftInjection, PLANT_INPUTS, PLANT_TARGET};

use std::collections::HashSet;
use std::io::{Read, Write};
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, TimeZone, Utc};
use ndarray::{s, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("schema error: {0}")]
    Schema(String),
    #[error("ingestion error at row {row}: {message}")]
    Ingestion { row: usize, message: String },
    #[error("ordering error: timestamp at row {row} does not increase")]
    Ordering { row: usize },
    #[error("empty dataset")]
    Empty,
    #[error("column `{0}` was not fitted by the scaler")]
    UnseenColumn(String),
    #[error("invalid argument: {0}")]
    Invalid(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

/// Column names of a dataset: ordered inputs, one target, one timestamp.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSchema {
    pub input_names: Vec<String>,
    pub target_name: String,
    pub timestamp_name: String,
}

impl FeatureSchema {
    pub fn new<S: Into<String>>(
        inputs: impl IntoIterator<Item = S>,
        target: impl Into<String>,
        timestamp: impl Into<String>,
    ) -> Result<Self, DataError> {
        let schema = Self {
            input_names: inputs.into_iter().map(Into::into).collect(),
            target_name: target.into(),
            timestamp_name: timestamp.into(),
        };
        schema.validate()?;
        Ok(schema)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        if self.input_names.is_empty() {
            return Err(DataError::Schema("at least one input is required".into()));
        }
        let mut seen = HashSet::new();
        for name in &self.input_names {
            if !seen.insert(name.as_str()) {
                return Err(DataError::Schema(format!("duplicate input `{name}`")));
            }
        }
        if seen.contains(self.target_name.as_str()) {
            return Err(DataError::Schema(format!(
                "target `{}` is also listed as an input",
                self.target_name
            )));
        }
        if seen.contains(self.timestamp_name.as_str()) || self.timestamp_name == self.target_name {
            return Err(DataError::Schema(format!(
                "timestamp column `{}` collides with a value column",
                self.timestamp_name
            )));
        }
        Ok(())
    }

    pub fn n_inputs(&self) -> usize {
        self.input_names.len()
    }

    /// Value column names: inputs in order, then the target.
    pub fn value_columns(&self) -> Vec<&str> {
        self.input_names
            .iter()
            .map(String::as_str)
            .chain(std::iter::once(self.target_name.as_str()))
            .collect()
    }
}

/// A multivariate time series. `rows` has `n_inputs + 1` columns, target last.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub schema: FeatureSchema,
    pub timestamps: Vec<DateTime<Utc>>,
    pub rows: Array2<f64>,
    pub sampling_interval_secs: f64,
}

impl Dataset {
    pub fn new(
        schema: FeatureSchema,
        timestamps: Vec<DateTime<Utc>>,
        rows: Array2<f64>,
        sampling_interval_secs: f64,
    ) -> Result<Self, DataError> {
        schema.validate()?;
        if timestamps.len() != rows.nrows() {
            return Err(DataError::Invalid(format!(
                "{} timestamps for {} rows",
                timestamps.len(),
                rows.nrows()
            )));
        }
        if rows.ncols() != schema.n_inputs() + 1 {
            return Err(DataError::Invalid(format!(
                "expected {} value columns, got {}",
                schema.n_inputs() + 1,
                rows.ncols()
            )));
        }
        if let Some(i) = (1..timestamps.len()).find(|&i| timestamps[i] <= timestamps[i - 1]) {
            return Err(DataError::Ordering { row: i + 1 });
        }
        if let Some((i, _)) = rows.indexed_iter().find(|(_, v)| !v.is_finite()) {
            return Err(DataError::Ingestion {
                row: i.0 + 1,
                message: "non-finite value".into(),
            });
        }
        Ok(Self {
            schema,
            timestamps,
            rows,
            sampling_interval_secs,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.nrows() == 0
    }

    pub fn inputs(&self) -> ArrayView2<'_, f64> {
        self.rows.slice(s![.., ..self.schema.n_inputs()])
    }

    pub fn targets(&self) -> ArrayView1<'_, f64> {
        self.rows.column(self.schema.n_inputs())
    }

    pub fn column(&self, name: &str) -> Option<ArrayView1<'_, f64>> {
        self.schema
            .value_columns()
            .iter()
            .position(|c| *c == name)
            .map(|j| self.rows.column(j))
    }

    /// Rows `start..end` as a new dataset sharing schema and interval.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            timestamps: self.timestamps[start..end].to_vec(),
            rows: self.rows.slice(s![start..end, ..]).to_owned(),
            sampling_interval_secs: self.sampling_interval_secs,
        }
    }

    /// Rows at the given indices, in the given order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        Dataset {
            schema: self.schema.clone(),
            timestamps: indices.iter().map(|&i| self.timestamps[i]).collect(),
            rows: self.rows.select(Axis(0), indices),
            sampling_interval_secs: self.sampling_interval_secs,
        }
    }

    pub fn date_of(&self, row: usize) -> NaiveDate {
        self.timestamps[row].date_naive()
    }
}

fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let raw = raw.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Some(t.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S%.f", "%Y-%m-%d %H:%M:%S%.f", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(Utc.from_utc_datetime(&t));
        }
    }
    None
}

/// Median of consecutive timestamp gaps, in seconds.
pub fn median_interval_secs(timestamps: &[DateTime<Utc>]) -> Option<f64> {
    if timestamps.len() < 2 {
        return None;
    }
    let mut gaps: Vec<f64> = timestamps
        .windows(2)
        .map(|w| (w[1] - w[0]).num_milliseconds() as f64 / 1000.0)
        .collect();
    gaps.sort_by(f64::total_cmp);
    let mid = gaps.len() / 2;
    Some(if gaps.len() % 2 == 1 {
        gaps[mid]
    } else {
        0.5 * (gaps[mid - 1] + gaps[mid])
    })
}

pub fn load_csv(path: impl AsRef<Path>, schema: &FeatureSchema) -> Result<Dataset, DataError> {
    let file = std::fs::File::open(path)?;
    read_csv(file, schema)
}

pub fn read_csv<R: Read>(reader: R, schema: &FeatureSchema) -> Result<Dataset, DataError> {
    schema.validate()?;
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let locate = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::Schema(format!("missing column `{name}`")))
    };
    let ts_col = locate(&schema.timestamp_name)?;
    let value_cols = schema
        .value_columns()
        .into_iter()
        .map(locate)
        .collect::<Result<Vec<_>, _>>()?;

    let mut timestamps = Vec::new();
    let mut values = Vec::new();
    for (i, record) in rdr.records().enumerate() {
        let row = i + 1;
        let record = record?;
        let raw_ts = record.get(ts_col).unwrap_or("");
        let ts = parse_timestamp(raw_ts).ok_or_else(|| DataError::Ingestion {
            row,
            message: format!("unparsable timestamp `{raw_ts}`"),
        })?;
        if let Some(prev) = timestamps.last() {
            if ts <= *prev {
                return Err(DataError::Ordering { row });
            }
        }
        timestamps.push(ts);
        for (&col, name) in value_cols.iter().zip(schema.value_columns()) {
            let raw = record.get(col).unwrap_or("");
            let v: f64 = raw.parse().map_err(|_| DataError::Ingestion {
                row,
                message: format!("unparsable value `{raw}` in column `{name}`"),
            })?;
            if !v.is_finite() {
                return Err(DataError::Ingestion {
                    row,
                    message: format!("non-finite value in column `{name}`"),
                });
            }
            values.push(v);
        }
    }
    let interval = median_interval_secs(&timestamps).ok_or_else(|| {
        DataError::Invalid("at least two rows are needed to infer the sampling interval".into())
    })?;
    let rows = Array2::from_shape_vec((timestamps.len(), value_cols.len()), values)
        .map_err(|e| DataError::Invalid(e.to_string()))?;
    Dataset::new(schema.clone(), timestamps, rows, interval)
}

pub fn write_csv<W: Write>(data: &Dataset, writer: W) -> Result<(), DataError> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![data.schema.timestamp_name.as_str()];
    header.extend(data.schema.value_columns());
    w.write_record(&header)?;
    for (ts, row) in data.timestamps.iter().zip(data.rows.rows()) {
        let mut record = vec![ts.to_rfc3339_opts(chrono::SecondsFormat::Secs, true)];
        record.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&record)?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_csv(data: &Dataset, path: impl AsRef<Path>) -> Result<(), DataError> {
    let file = std::fs::File::create(path)?;
    write_csv(data, std::io::BufWriter::new(file))
}

/// A contiguous run of rows covering one calendar-aligned batch window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Batch {
    pub index: usize,
    /// First row (inclusive).
    pub start: usize,
    /// One past the last row.
    pub end: usize,
    pub window_start: DateTime<Utc>,
    pub batch_days: f64,
    /// Set when the rows cover less than the configured duration.
    pub partial: bool,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.end == self.start
    }

    pub fn contains_row(&self, row: usize) -> bool {
        (self.start..self.end).contains(&row)
    }
}

/// Slice the dataset into windows of `batch_days`, aligned to UTC midnight
/// of the first timestamp. Windows without rows are skipped.
pub fn make_batches(data: &Dataset, batch_days: f64) -> Result<Vec<Batch>, DataError> {
    if !(batch_days > 0.0 && batch_days.is_finite()) {
        return Err(DataError::Invalid(format!("batch_days must be > 0, got {batch_days}")));
    }
    if data.is_empty() {
        return Err(DataError::Empty);
    }
    let origin = data.timestamps[0]
        .date_naive()
        .and_hms_opt(0, 0, 0)
        .expect("midnight exists")
        .and_utc();
    let width = batch_days * SECONDS_PER_DAY;
    let window_of = |t: &DateTime<Utc>| {
        let secs = (*t - origin).num_milliseconds() as f64 / 1000.0;
        (secs / width).floor() as i64
    };

    let mut batches: Vec<Batch> = Vec::new();
    let mut start = 0;
    let mut window = window_of(&data.timestamps[0]);
    for row in 1..=data.len() {
        let next = data.timestamps.get(row).map(window_of);
        if next != Some(window) {
            let span = (data.timestamps[row - 1] - data.timestamps[start]).num_milliseconds() as f64
                / 1000.0
                + data.sampling_interval_secs;
            batches.push(Batch {
                index: batches.len(),
                start,
                end: row,
                window_start: origin
                    + chrono::Duration::milliseconds((window as f64 * width * 1000.0).round() as i64),
                batch_days,
                partial: span < width - data.sampling_interval_secs,
            });
            start = row;
            if let Some(w) = next {
                window = w;
            }
        }
    }
    Ok(batches)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schema() -> FeatureSchema {
        FeatureSchema::new(["a", "b"], "Flue Gas DP", "Timestamp").unwrap()
    }

    fn regular(days: usize, interval: i64) -> Dataset {
        let n = days * 86_400 / interval as usize;
        let t0 = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
        let ts = (0..n)
            .map(|i| t0 + chrono::Duration::seconds(i as i64 * interval))
            .collect();
        let rows = Array2::from_shape_fn((n, 3), |(i, j)| (i * 3 + j) as f64);
        Dataset::new(schema(), ts, rows, interval as f64).unwrap()
    }

    #[test]
    fn schema_rejects_target_among_inputs() {
        assert!(FeatureSchema::new(["a", "y"], "y", "t").is_err());
        assert!(FeatureSchema::new(["a", "a"], "y", "t").is_err());
        assert!(FeatureSchema::new(Vec::<String>::new(), "y", "t").is_err());
    }

    #[test]
    fn reads_three_rows_at_ten_minutes() {
        let csv = "Timestamp,a,b,Flue Gas DP\n\
                   2024-01-01T00:00:00Z,1,2,3\n\
                   2024-01-01T00:10:00Z,4,5,6\n\
                   2024-01-01T00:20:00Z,7,8,9\n";
        let d = read_csv(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.sampling_interval_secs, 600.0);
        assert_eq!(d.targets().to_vec(), vec![3.0, 6.0, 9.0]);
    }

    #[test]
    fn infers_eight_minute_interval() {
        let csv = "Timestamp,Flue Gas DP,b,a\n\
                   2024-04-01T00:00:00Z,3,2,1\n\
                   2024-04-01T00:08:00Z,3,2,1\n\
                   2024-04-01T00:16:00Z,3,2,1\n";
        let d = read_csv(csv.as_bytes(), &schema()).unwrap();
        assert_eq!(d.sampling_interval_secs, 480.0);
        // columns are reordered to schema order
        assert_eq!(d.rows.row(0).to_vec(), vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn missing_target_column_is_schema_error() {
        let csv = "Timestamp,a,b\n2024-01-01T00:00:00Z,1,2\n2024-01-01T00:10:00Z,1,2\n";
        assert!(matches!(read_csv(csv.as_bytes(), &schema()), Err(DataError::Schema(_))));
    }

    #[test]
    fn bad_values_name_the_row() {
        let csv = "Timestamp,a,b,Flue Gas DP\n\
                   2024-01-01T00:00:00Z,1,2,3\n\
                   2024-01-01T00:10:00Z,x,5,6\n";
        match read_csv(csv.as_bytes(), &schema()) {
            Err(DataError::Ingestion { row, .. }) => assert_eq!(row, 2),
            other => panic!("unexpected {other:?}"),
        }
        let csv = "Timestamp,a,b,Flue Gas DP\n2024-01-01T00:00:00Z,1,NaN,3\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &schema()),
            Err(DataError::Ingestion { row: 1, .. })
        ));
        let csv = "Timestamp,a,b,Flue Gas DP\n2024-01-01T00:00:00Z,1,,3\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &schema()),
            Err(DataError::Ingestion { row: 1, .. })
        ));
    }

    #[test]
    fn non_monotonic_timestamps_are_rejected() {
        let csv = "Timestamp,a,b,Flue Gas DP\n\
                   2024-01-01T00:10:00Z,1,2,3\n\
                   2024-01-01T00:00:00Z,1,2,3\n";
        assert!(matches!(
            read_csv(csv.as_bytes(), &schema()),
            Err(DataError::Ordering { row: 2 })
        ));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut d = regular(1, 3600);
        d.rows.mapv_inplace(|v| v / 7.0 + 0.1);
        let mut buf = Vec::new();
        write_csv(&d, &mut buf).unwrap();
        let back = read_csv(buf.as_slice(), &d.schema).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn ten_days_in_five_day_batches() {
        let d = regular(10, 600);
        let b = make_batches(&d, 5.0).unwrap();
        assert_eq!(b.len(), 2);
        assert!(b.iter().all(|b| b.len() == 720 && !b.partial));
    }

    #[test]
    fn eight_days_in_one_batch() {
        let d = regular(8, 600);
        let b = make_batches(&d, 8.0).unwrap();
        assert_eq!(b.len(), 1);
        assert_eq!(b[0].len(), 8 * 144);
    }

    #[test]
    fn trailing_partial_batch_is_kept_and_flagged() {
        let d = regular(7, 600);
        let b = make_batches(&d, 5.0).unwrap();
        assert_eq!(b.len(), 2);
        assert_eq!(b[0].len(), 720);
        assert!(!b[0].partial);
        assert_eq!(b[1].len(), 288);
        assert!(b[1].partial);
    }

    #[test]
    fn batching_rejects_bad_arguments() {
        let d = regular(1, 600);
        assert!(make_batches(&d, 0.0).is_err());
        assert!(matches!(make_batches(&d.slice(0, 0), 1.0), Err(DataError::Empty)));
    }

    proptest::proptest! {
        #[test]
        fn batches_partition_the_rows(days in 1usize..12, interval in 300i64..4000, width in 0.3f64..6.0) {
            let d = regular(days, interval);
            let b = make_batches(&d, width).unwrap();
            let mut next = 0;
            for batch in &b {
                proptest::prop_assert_eq!(batch.start, next);
                proptest::prop_assert!(batch.end > batch.start);
                next = batch.end;
            }
            proptest::prop_assert_eq!(next, d.len());
        }
    }
}
