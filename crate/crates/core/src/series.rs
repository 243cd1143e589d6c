//! Data model, ingestion, normalization, and descriptive statistics for the
//! annual/seasonal maximum temperature series.
//!
//! All types are immutable after construction and every operation is a pure
//! function, so values can be shared freely across threads.

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::stats;

/// Selector for one of the five temperature series in a [`SeasonalTable`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SeriesColumn {
    Annual,
    Winter,
    PreMonsoon,
    Monsoon,
    PostMonsoon,
}

impl SeriesColumn {
    pub const ALL: [SeriesColumn; 5] = [
        SeriesColumn::Annual,
        SeriesColumn::Winter,
        SeriesColumn::PreMonsoon,
        SeriesColumn::Monsoon,
        SeriesColumn::PostMonsoon,
    ];

    pub fn label(self) -> &'static str {
        match self {
            SeriesColumn::Annual => "annual",
            SeriesColumn::Winter => "winter",
            SeriesColumn::PreMonsoon => "pre_monsoon",
            SeriesColumn::Monsoon => "monsoon",
            SeriesColumn::PostMonsoon => "post_monsoon",
        }
    }
}

/// Maps the logical columns onto CSV header names.
///
/// Defaults follow the public All-India dataset layout.
#[derive(Clone, Debug)]
pub struct ColumnMap {
    pub year: String,
    pub annual: String,
    pub winter: String,
    pub pre_monsoon: String,
    pub monsoon: String,
    pub post_monsoon: String,
}

impl Default for ColumnMap {
    fn default() -> Self {
        Self {
            year: "YEAR".into(),
            annual: "ANNUAL".into(),
            winter: "JAN-FEB".into(),
            pre_monsoon: "MAR-MAY".into(),
            monsoon: "JUN-SEP".into(),
            post_monsoon: "OCT-DEC".into(),
        }
    }
}

/// Options for [`load_csv`].
#[derive(Clone, Debug, Default)]
pub struct LoadOptions {
    pub column_map: ColumnMap,
    /// Permit seasonal maxima that exceed the annual maximum for the same
    /// year. Some source files round the columns independently, producing
    /// small violations; the default is to reject.
    pub allow_seasonal_exceedance: bool,
}

/// Per-year records of the annual maximum and optional seasonal maxima (degC).
///
/// Invariants enforced at construction: years strictly increasing with step
/// one, at least 3 rows, all temperatures finite, no missing annual values,
/// and (unless overridden) every seasonal value no larger than the annual
/// value of its year.
#[derive(Clone, Debug)]
pub struct SeasonalTable {
    years: Vec<i32>,
    annual: Vec<f64>,
    winter: Vec<Option<f64>>,
    pre_monsoon: Vec<Option<f64>>,
    monsoon: Vec<Option<f64>>,
    post_monsoon: Vec<Option<f64>>,
}

impl SeasonalTable {
    /// Builds a table holding only the annual series.
    pub fn annual_only(years: Vec<i32>, annual: Vec<f64>) -> Result<Self> {
        let n = years.len();
        Self::new(
            years,
            annual,
            vec![None; n],
            vec![None; n],
            vec![None; n],
            vec![None; n],
            false,
        )
    }

    pub fn new(
        years: Vec<i32>,
        annual: Vec<f64>,
        winter: Vec<Option<f64>>,
        pre_monsoon: Vec<Option<f64>>,
        monsoon: Vec<Option<f64>>,
        post_monsoon: Vec<Option<f64>>,
        allow_seasonal_exceedance: bool,
    ) -> Result<Self> {
        let n = years.len();
        if n < 3 {
            return Err(Error::Validation(format!(
                "need at least 3 rows, got {n}"
            )));
        }
        for v in [&annual] {
            if v.len() != n {
                return Err(Error::Shape(format!(
                    "annual column has {} values for {} years",
                    v.len(),
                    n
                )));
            }
        }
        for (label, col) in [
            ("winter", &winter),
            ("pre_monsoon", &pre_monsoon),
            ("monsoon", &monsoon),
            ("post_monsoon", &post_monsoon),
        ] {
            if col.len() != n {
                return Err(Error::Shape(format!(
                    "{label} column has {} values for {n} years",
                    col.len()
                )));
            }
        }
        for w in years.windows(2) {
            if w[1] == w[0] {
                return Err(Error::Ingest(format!("duplicate year {}", w[0])));
            }
            if w[1] != w[0] + 1 {
                return Err(Error::Ingest(format!(
                    "years must be consecutive; gap between {} and {}",
                    w[0], w[1]
                )));
            }
        }
        for (i, &t) in annual.iter().enumerate() {
            if !t.is_finite() {
                return Err(Error::Validation(format!(
                    "non-finite annual value in year {}",
                    years[i]
                )));
            }
        }
        let mut violations = Vec::new();
        for (label, col) in [
            ("winter", &winter),
            ("pre_monsoon", &pre_monsoon),
            ("monsoon", &monsoon),
            ("post_monsoon", &post_monsoon),
        ] {
            for (i, v) in col.iter().enumerate() {
                if let Some(t) = v {
                    if !t.is_finite() {
                        return Err(Error::Validation(format!(
                            "non-finite {label} value in year {}",
                            years[i]
                        )));
                    }
                    if *t > annual[i] {
                        violations.push((years[i], label));
                    }
                }
            }
        }
        if !violations.is_empty() && !allow_seasonal_exceedance {
            let listed: Vec<String> = violations
                .iter()
                .map(|(y, c)| format!("{y} ({c})"))
                .collect();
            return Err(Error::Validation(format!(
                "seasonal maximum exceeds annual maximum in: {}; \
                 pass the exceedance override to accept the rows as-is",
                listed.join(", ")
            )));
        }
        Ok(Self {
            years,
            annual,
            winter,
            pre_monsoon,
            monsoon,
            post_monsoon,
        })
    }

    pub fn len(&self) -> usize {
        self.years.len()
    }

    pub fn is_empty(&self) -> bool {
        self.years.is_empty()
    }

    pub fn years(&self) -> &[i32] {
        &self.years
    }

    pub fn annual(&self) -> &[f64] {
        &self.annual
    }

    fn seasonal(&self, column: SeriesColumn) -> &[Option<f64>] {
        match column {
            SeriesColumn::Annual => unreachable!("annual is not a seasonal column"),
            SeriesColumn::Winter => &self.winter,
            SeriesColumn::PreMonsoon => &self.pre_monsoon,
            SeriesColumn::Monsoon => &self.monsoon,
            SeriesColumn::PostMonsoon => &self.post_monsoon,
        }
    }

    /// The selected series as a dense vector; errors if any cell is missing.
    pub fn column(&self, column: SeriesColumn) -> Result<Vec<f64>> {
        if column == SeriesColumn::Annual {
            return Ok(self.annual.clone());
        }
        let col = self.seasonal(column);
        col.iter()
            .enumerate()
            .map(|(i, v)| {
                v.ok_or_else(|| {
                    Error::Validation(format!(
                        "column {} has a missing value in year {}",
                        column.label(),
                        self.years[i]
                    ))
                })
            })
            .collect()
    }

    /// True when every cell of the column is present.
    pub fn column_complete(&self, column: SeriesColumn) -> bool {
        column == SeriesColumn::Annual || self.seasonal(column).iter().all(Option::is_some)
    }

    /// Serializes back to the default CSV layout (header + one row per year).
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let map = ColumnMap::default();
        writeln!(
            w,
            "{},{},{},{},{},{}",
            map.year, map.annual, map.winter, map.pre_monsoon, map.monsoon, map.post_monsoon
        )?;
        let cell = |v: &Option<f64>| v.map(|t| t.to_string()).unwrap_or_default();
        for i in 0..self.len() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                self.years[i],
                self.annual[i],
                cell(&self.winter[i]),
                cell(&self.pre_monsoon[i]),
                cell(&self.monsoon[i]),
                cell(&self.post_monsoon[i]),
            )?;
        }
        Ok(())
    }
}

/// Loads and validates a seasonal table from a CSV file.
///
/// The file must have a header row; the year column must parse as integers.
/// Rows are sorted by year before validation. Seasonal columns may be absent
/// from the header or have empty cells; the annual column must be complete.
pub fn load_csv(path: &Path, options: &LoadOptions) -> Result<SeasonalTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_path(path)?;

    let headers = reader.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let map = &options.column_map;
    let year_idx = find(&map.year).ok_or_else(|| {
        Error::Ingest(format!("missing year column '{}' in header", map.year))
    })?;
    let annual_idx = find(&map.annual).ok_or_else(|| {
        Error::Ingest(format!("missing annual column '{}' in header", map.annual))
    })?;
    let seasonal_idx = [
        find(&map.winter),
        find(&map.pre_monsoon),
        find(&map.monsoon),
        find(&map.post_monsoon),
    ];

    struct Row {
        year: i32,
        annual: f64,
        seasonal: [Option<f64>; 4],
    }

    let mut rows: Vec<Row> = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row_no = i + 2; // 1-based, after the header
        let raw_year = record.get(year_idx).unwrap_or("");
        let year: i32 = raw_year.parse().map_err(|_| Error::Parse {
            row: row_no,
            column: map.year.clone(),
            message: format!("'{raw_year}' is not an integer year"),
        })?;
        let parse_temp = |idx: usize, column: &str| -> Result<Option<f64>> {
            let raw = record.get(idx).unwrap_or("");
            if raw.is_empty() || raw == "NA" {
                return Ok(None);
            }
            raw.parse::<f64>().map(Some).map_err(|_| Error::Parse {
                row: row_no,
                column: column.to_string(),
                message: format!("'{raw}' is not a number"),
            })
        };
        let annual = parse_temp(annual_idx, &map.annual)?.ok_or_else(|| Error::Ingest(
            format!("missing annual value in row {row_no} (year {year})"),
        ))?;
        let mut seasonal = [None; 4];
        let labels = [&map.winter, &map.pre_monsoon, &map.monsoon, &map.post_monsoon];
        for (s, idx) in seasonal_idx.iter().enumerate() {
            if let Some(idx) = idx {
                seasonal[s] = parse_temp(*idx, labels[s])?;
            }
        }
        rows.push(Row { year, annual, seasonal });
    }

    rows.sort_by_key(|r| r.year);

    SeasonalTable::new(
        rows.iter().map(|r| r.year).collect(),
        rows.iter().map(|r| r.annual).collect(),
        rows.iter().map(|r| r.seasonal[0]).collect(),
        rows.iter().map(|r| r.seasonal[1]).collect(),
        rows.iter().map(|r| r.seasonal[2]).collect(),
        rows.iter().map(|r| r.seasonal[3]).collect(),
        options.allow_seasonal_exceedance,
    )
}

/// One series rescaled for model fitting: index time on [0,1], the
/// standardized year covariate, and the raw observations.
#[derive(Clone, Debug)]
pub struct NormalizedSeries {
    /// Equally spaced index time, t_1 = 0 and t_N = 1.
    pub t: Vec<f64>,
    /// Year, centered and scaled to unit sample (n-1) standard deviation.
    pub x_std: Vec<f64>,
    /// Observations in degC.
    pub y: Vec<f64>,
    pub origin_year: i32,
}

impl NormalizedSeries {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn year(&self, i: usize) -> i32 {
        self.origin_year + i as i32
    }

    /// Builds directly from raw year/observation vectors.
    pub fn from_values(origin_year: i32, y: Vec<f64>) -> Result<Self> {
        let n = y.len();
        if n < 3 {
            return Err(Error::Validation(format!("need at least 3 observations, got {n}")));
        }
        let t: Vec<f64> = (0..n).map(|i| i as f64 / (n - 1) as f64).collect();
        let years: Vec<f64> = (0..n).map(|i| (origin_year + i as i32) as f64).collect();
        let m = stats::mean(&years);
        let sd = stats::sample_sd(&years);
        let x_std = years.iter().map(|x| (x - m) / sd).collect();
        Ok(Self { t, x_std, y, origin_year })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "year,t,x_std,y")?;
        for i in 0..self.len() {
            writeln!(w, "{},{},{},{}", self.year(i), self.t[i], self.x_std[i], self.y[i])?;
        }
        Ok(())
    }
}

/// Extracts and normalizes one column of the table.
pub fn normalize(table: &SeasonalTable, column: SeriesColumn) -> Result<NormalizedSeries> {
    let y = table.column(column)?;
    NormalizedSeries::from_values(table.years()[0], y)
}

/// Year-over-year differences of a series, length N-1.
#[derive(Clone, Debug)]
pub struct IncrementSeries {
    pub deltas: Vec<f64>,
}

impl IncrementSeries {
    pub fn len(&self) -> usize {
        self.deltas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.deltas.is_empty()
    }
}

pub fn increments(series: &NormalizedSeries) -> Result<IncrementSeries> {
    if series.len() < 2 {
        return Err(Error::Validation("need at least 2 observations for increments".into()));
    }
    Ok(IncrementSeries {
        deltas: series.y.windows(2).map(|w| w[1] - w[0]).collect(),
    })
}

/// Pearson product-moment correlation of two equal-length series.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "series lengths differ: {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.len() < 3 {
        return Err(Error::Validation("need at least 3 points for a correlation".into()));
    }
    let (ma, mb) = (stats::mean(a), stats::mean(b));
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::Degenerate("zero variance in correlation input".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Symmetric correlation matrix over the five series, with labels.
#[derive(Clone, Debug)]
pub struct CorrelationMatrix {
    pub labels: Vec<String>,
    /// Row-major, labels.len() squared.
    pub values: Vec<f64>,
}

impl CorrelationMatrix {
    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.dim() + j]
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "series,{}", self.labels.join(","))?;
        for i in 0..self.dim() {
            let row: Vec<String> = (0..self.dim()).map(|j| self.get(i, j).to_string()).collect();
            writeln!(w, "{},{}", self.labels[i], row.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let headers = reader.headers()?.clone();
        let labels: Vec<String> = headers.iter().skip(1).map(String::from).collect();
        let mut values = Vec::new();
        for record in reader.records() {
            let record = record?;
            for cell in record.iter().skip(1) {
                values.push(cell.parse::<f64>().map_err(|_| {
                    Error::Ingest(format!("non-numeric matrix cell '{cell}'"))
                })?);
            }
        }
        if values.len() != labels.len() * labels.len() {
            return Err(Error::Shape(format!(
                "matrix body has {} cells for {} labels",
                values.len(),
                labels.len()
            )));
        }
        Ok(Self { labels, values })
    }
}

/// Correlation matrix between the annual and all four seasonal series.
/// Requires every column to be fully populated.
pub fn correlation_matrix(table: &SeasonalTable) -> Result<CorrelationMatrix> {
    let mut columns = Vec::with_capacity(5);
    for c in SeriesColumn::ALL {
        columns.push(table.column(c)?);
    }
    let labels: Vec<String> = SeriesColumn::ALL.iter().map(|c| c.label().to_string()).collect();
    let mut values = vec![0.0; 25];
    for i in 0..5 {
        values[i * 5 + i] = 1.0;
        for j in (i + 1)..5 {
            let r = pearson(&columns[i], &columns[j])?;
            values[i * 5 + j] = r;
            values[j * 5 + i] = r;
        }
    }
    Ok(CorrelationMatrix { labels, values })
}

/// Output of a model fit aligned to the observation years: posterior mean
/// and 95% band per year.
#[derive(Clone, Debug)]
pub struct FittedSeries {
    pub years: Vec<i32>,
    pub observed: Vec<f64>,
    pub fit_mean: Vec<f64>,
    pub lo95: Vec<f64>,
    pub hi95: Vec<f64>,
}

impl FittedSeries {
    pub fn len(&self) -> usize {
        self.years.len()
    }

    pub fn is_empty(&self) -> bool {
        self.years.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "year,observed,fit_mean,lo95,hi95")?;
        for i in 0..self.len() {
            writeln!(
                w,
                "{},{},{},{},{}",
                self.years[i], self.observed[i], self.fit_mean[i], self.lo95[i], self.hi95[i]
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let mut out = FittedSeries {
            years: Vec::new(),
            observed: Vec::new(),
            fit_mean: Vec::new(),
            lo95: Vec::new(),
            hi95: Vec::new(),
        };
        for record in reader.records() {
            let record = record?;
            let cell = |i: usize| -> Result<f64> {
                record
                    .get(i)
                    .unwrap_or("")
                    .parse()
                    .map_err(|_| Error::Ingest("non-numeric cell in fitted series".into()))
            };
            out.years.push(
                record
                    .get(0)
                    .unwrap_or("")
                    .parse()
                    .map_err(|_| Error::Ingest("non-integer year in fitted series".into()))?,
            );
            out.observed.push(cell(1)?);
            out.fit_mean.push(cell(2)?);
            out.lo95.push(cell(3)?);
            out.hi95.push(cell(4)?);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn table_from_csv(text: &str) -> Result<SeasonalTable> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, text).unwrap();
        load_csv(&path, &LoadOptions::default())
    }

    #[test]
    fn load_small_file_round_trips_values() {
        let t = table_from_csv(
            "YEAR,ANNUAL\n1901,34.1\n1902,34.3\n1903,34.0\n",
        )
        .unwrap();
        assert_eq!(t.len(), 3);
        assert_eq!(t.years(), &[1901, 1902, 1903]);
        assert_eq!(t.annual(), &[34.1, 34.3, 34.0]);
    }

    #[test]
    fn duplicate_year_is_ingest_error() {
        let err = table_from_csv("YEAR,ANNUAL\n1901,34.1\n1901,34.3\n1903,34.0\n").unwrap_err();
        assert!(matches!(err, Error::Ingest(_)), "got {err:?}");
    }

    #[test]
    fn year_gap_is_ingest_error() {
        let err = table_from_csv("YEAR,ANNUAL\n1901,34.1\n1903,34.3\n1904,34.0\n").unwrap_err();
        assert!(matches!(err, Error::Ingest(_)));
    }

    #[test]
    fn non_numeric_temperature_reports_row_and_column() {
        let err = table_from_csv("YEAR,ANNUAL\n1901,34.1\n1902,oops\n1903,34.0\n").unwrap_err();
        match err {
            Error::Parse { row, column, .. } => {
                assert_eq!(row, 3);
                assert_eq!(column, "ANNUAL");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn seasonal_above_annual_rejected_unless_overridden() {
        let text = "YEAR,ANNUAL,JAN-FEB\n1901,34.1,20.0\n1902,34.3,35.0\n1903,34.0,21.0\n";
        let err = table_from_csv(text).unwrap_err();
        match &err {
            Error::Validation(msg) => assert!(msg.contains("1902"), "message: {msg}"),
            other => panic!("expected validation error, got {other:?}"),
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, text).unwrap();
        let opts = LoadOptions { allow_seasonal_exceedance: true, ..Default::default() };
        assert!(load_csv(&path, &opts).is_ok());
    }

    #[test]
    fn rows_sorted_by_year() {
        let t = table_from_csv("YEAR,ANNUAL\n1903,34.0\n1901,34.1\n1902,34.3\n").unwrap();
        assert_eq!(t.years(), &[1901, 1902, 1903]);
        assert_eq!(t.annual(), &[34.1, 34.3, 34.0]);
    }

    #[test]
    fn column_map_override() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        std::fs::write(&path, "yr,tmax\n2000,30.0\n2001,30.5\n2002,31.0\n").unwrap();
        let opts = LoadOptions {
            column_map: ColumnMap {
                year: "yr".into(),
                annual: "tmax".into(),
                ..Default::default()
            },
            ..Default::default()
        };
        let t = load_csv(&path, &opts).unwrap();
        assert_eq!(t.len(), 3);
    }

    #[test]
    fn ingest_serialize_ingest_is_identity() {
        let t = table_from_csv(
            "YEAR,ANNUAL,JAN-FEB,MAR-MAY,JUN-SEP,OCT-DEC\n\
             1901,34.1,25.0,33.0,32.1,28.4\n\
             1902,34.3,24.8,33.2,32.0,28.9\n\
             1903,34.0,,33.1,31.8,28.1\n",
        )
        .unwrap();
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("echo.csv");
        std::fs::write(&path, &buf).unwrap();
        let t2 = load_csv(&path, &LoadOptions::default()).unwrap();
        assert_eq!(t.years(), t2.years());
        assert_eq!(t.annual(), t2.annual());
        assert_eq!(t.winter, t2.winter);
        assert_eq!(t.pre_monsoon, t2.pre_monsoon);
    }

    #[test]
    fn normalize_t_grid_and_midpoint() {
        let t = SeasonalTable::annual_only(vec![2000, 2001, 2002, 2003, 2004], vec![1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        let s = normalize(&t, SeriesColumn::Annual).unwrap();
        let expect = [0.0, 0.25, 0.5, 0.75, 1.0];
        for (a, b) in s.t.iter().zip(expect) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-15);
        }

        // 1901..2017: t for 1959 (index 58) is 58/116 = 0.5
        let years: Vec<i32> = (1901..=2017).collect();
        let vals: Vec<f64> = (0..117).map(|i| 30.0 + 0.01 * i as f64).collect();
        let t = SeasonalTable::annual_only(years, vals).unwrap();
        let s = normalize(&t, SeriesColumn::Annual).unwrap();
        assert_eq!(s.len(), 117);
        assert_abs_diff_eq!(s.t[58], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn x_std_uses_sample_sd() {
        // Years 2000..2002 have sample (n-1) sd exactly 1, so x_std is (-1, 0, 1).
        let t = SeasonalTable::annual_only(vec![2000, 2001, 2002], vec![1.0, 2.0, 3.0]).unwrap();
        let s = normalize(&t, SeriesColumn::Annual).unwrap();
        for (a, b) in s.x_std.iter().zip([-1.0, 0.0, 1.0]) {
            assert_abs_diff_eq!(*a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn x_std_centered_unit_sd() {
        let years: Vec<i32> = (1901..=2017).collect();
        let vals = vec![30.0; 117];
        let t = SeasonalTable::annual_only(years, vals).unwrap();
        let s = normalize(&t, SeriesColumn::Annual).unwrap();
        assert_abs_diff_eq!(stats::mean(&s.x_std), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(stats::sample_sd(&s.x_std), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn increments_basics() {
        let s = NormalizedSeries::from_values(2000, vec![1.0, 1.0, 1.0]).unwrap();
        assert_eq!(increments(&s).unwrap().deltas, vec![0.0, 0.0]);
        let s = NormalizedSeries::from_values(2000, vec![0.0, 2.0, 1.0]).unwrap();
        assert_eq!(increments(&s).unwrap().deltas, vec![2.0, -1.0]);
    }

    #[test]
    fn pearson_trivial_cases() {
        let a = vec![1.0, 2.0, 4.0, 3.0];
        assert_abs_diff_eq!(pearson(&a, &a).unwrap(), 1.0, epsilon = 1e-12);
        let neg: Vec<f64> = a.iter().map(|x| -x).collect();
        assert_abs_diff_eq!(pearson(&a, &neg).unwrap(), -1.0, epsilon = 1e-12);
        let c = vec![5.0, 5.0, 5.0, 5.0];
        assert!(matches!(pearson(&a, &c), Err(Error::Degenerate(_))));
    }

    #[test]
    fn correlation_matrix_identical_columns() {
        let n = 5;
        let years: Vec<i32> = (2000..2000 + n).collect();
        let vals: Vec<f64> = (0..n).map(|i| 30.0 + i as f64).collect();
        let some: Vec<Option<f64>> = vals.iter().map(|v| Some(*v)).collect();
        let t = SeasonalTable::new(
            years,
            vals.clone(),
            some.clone(),
            some.clone(),
            some.clone(),
            some,
            false,
        )
        .unwrap();
        let m = correlation_matrix(&t).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                assert_abs_diff_eq!(m.get(i, j), 1.0, epsilon = 1e-12);
            }
        }
    }

    /// Independent two-pass covariance implementation used as an oracle.
    fn pearson_two_pass(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum::<f64>() / (n - 1.0);
        let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / (n - 1.0);
        let vb = b.iter().map(|y| (y - mb).powi(2)).sum::<f64>() / (n - 1.0);
        cov / (va * vb).sqrt()
    }

    #[test]
    fn correlation_matrix_matches_two_pass_oracle() {
        use rand::Rng;
        let mut rng = crate::rng::substream_rng(11, 0);
        let n = 60;
        let years: Vec<i32> = (1900..1900 + n as i32).collect();
        let mut cols: Vec<Vec<f64>> = Vec::new();
        let base: Vec<f64> = (0..n).map(|_| rng.random::<f64>() * 4.0 + 30.0).collect();
        for _ in 0..5 {
            cols.push(
                base.iter()
                    .map(|b| b + rng.random::<f64>() - 0.5)
                    .collect(),
            );
        }
        // annual must dominate the seasonal columns
        let annual: Vec<f64> = (0..n)
            .map(|i| {
                cols.iter()
                    .map(|c| c[i])
                    .fold(f64::NEG_INFINITY, f64::max)
                    + 0.1
            })
            .collect();
        let wrap = |v: &Vec<f64>| v.iter().map(|x| Some(*x)).collect::<Vec<_>>();
        let t = SeasonalTable::new(
            years,
            annual.clone(),
            wrap(&cols[0]),
            wrap(&cols[1]),
            wrap(&cols[2]),
            wrap(&cols[3]),
            false,
        )
        .unwrap();
        let m = correlation_matrix(&t).unwrap();
        let all = [annual, cols[0].clone(), cols[1].clone(), cols[2].clone(), cols[3].clone()];
        for i in 0..5 {
            for j in 0..5 {
                let expect = if i == j { 1.0 } else { pearson_two_pass(&all[i], &all[j]) };
                assert_abs_diff_eq!(m.get(i, j), expect, epsilon = 1e-10);
            }
        }
    }

    /// Jacobi eigenvalue sweep for small symmetric matrices (test oracle).
    fn smallest_eigenvalue(m: &CorrelationMatrix) -> f64 {
        let d = m.dim();
        let mut a: Vec<f64> = m.values.clone();
        for _ in 0..100 {
            let mut off = 0.0;
            for i in 0..d {
                for j in (i + 1)..d {
                    off += a[i * d + j].abs();
                }
            }
            if off < 1e-14 {
                break;
            }
            for p in 0..d {
                for q in (p + 1)..d {
                    let apq = a[p * d + q];
                    if apq.abs() < 1e-18 {
                        continue;
                    }
                    let theta = 0.5 * (a[q * d + q] - a[p * d + p]) / apq;
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..d {
                        let akp = a[k * d + p];
                        let akq = a[k * d + q];
                        a[k * d + p] = c * akp - s * akq;
                        a[k * d + q] = s * akp + c * akq;
                    }
                    for k in 0..d {
                        let apk = a[p * d + k];
                        let aqk = a[q * d + k];
                        a[p * d + k] = c * apk - s * aqk;
                        a[q * d + k] = s * apk + c * aqk;
                    }
                }
            }
        }
        (0..d).map(|i| a[i * d + i]).fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn correlation_matrix_positive_semidefinite() {
        use rand::Rng;
        for seed in 0..5u64 {
            let mut rng = crate::rng::substream_rng(seed, 7);
            let n = 40;
            let years: Vec<i32> = (1900..1940).collect();
            let cols: Vec<Vec<f64>> = (0..4)
                .map(|_| (0..n).map(|_| rng.random::<f64>()).collect())
                .collect();
            let annual: Vec<f64> = (0..n).map(|i| {
                cols.iter().map(|c| c[i]).fold(0.0, f64::max) + rng.random::<f64>() + 0.01
            }).collect();
            let wrap = |v: &Vec<f64>| v.iter().map(|x| Some(*x)).collect::<Vec<_>>();
            let t = SeasonalTable::new(
                years, annual,
                wrap(&cols[0]), wrap(&cols[1]), wrap(&cols[2]), wrap(&cols[3]),
                false,
            )
            .unwrap();
            let m = correlation_matrix(&t).unwrap();
            assert!(smallest_eigenvalue(&m) > -1e-8);
        }
    }

    #[test]
    fn correlation_csv_round_trip_symmetric() {
        let m = CorrelationMatrix {
            labels: vec!["a".into(), "b".into()],
            values: vec![1.0, 0.25, 0.25, 1.0],
        };
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let m2 = CorrelationMatrix::read_csv(&buf[..]).unwrap();
        assert_eq!(m2.labels, m.labels);
        for i in 0..2 {
            for j in 0..2 {
                assert_eq!(m2.get(i, j), m.get(i, j));
                assert_eq!(m2.get(i, j), m2.get(j, i));
            }
        }
    }

    proptest! {
        #[test]
        fn cumulative_sum_recovers_series(values in proptest::collection::vec(-50.0..50.0f64, 3..100)) {
            let s = NormalizedSeries::from_values(1900, values.clone()).unwrap();
            let inc = increments(&s).unwrap();
            let mut level = values[0];
            for (i, d) in inc.deltas.iter().enumerate() {
                level += d;
                prop_assert!((level - values[i + 1]).abs() < 1e-12);
            }
        }

        #[test]
        fn pearson_symmetric_and_affine_invariant(
            xs in proptest::collection::vec(-10.0..10.0f64, 5..40),
            scale in 0.01..100.0f64,
            shift in -100.0..100.0f64,
        ) {
            let ys: Vec<f64> = xs.iter().rev().map(|x| x * 0.7 + (x * x) * 0.01).collect();
            if let (Ok(r1), Ok(r2)) = (pearson(&xs, &ys), pearson(&ys, &xs)) {
                prop_assert!((r1 - r2).abs() < 1e-12);
                let zs: Vec<f64> = ys.iter().map(|y| scale * y + shift).collect();
                if let Ok(r3) = pearson(&xs, &zs) {
                    prop_assert!((r1 - r3).abs() < 1e-10);
                }
            }
        }
    }
}
