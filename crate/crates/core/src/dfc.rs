//! Cohort ingestion and sliding-window dynamic functional connectivity.
//!
//! A subject's series is a `T x R` matrix (time points by regions). Window `k`
//! covers rows `[k·S, k·S + W)` and yields the `R x R` Pearson correlation of
//! the regional signals inside it.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::DenseMatrix;

/// Diagnosis label of a subject (or a pseudo-label of a window).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Label {
    Control,
    Disease,
}

impl Label {
    pub fn index(self) -> usize {
        match self {
            Label::Control => 0,
            Label::Disease => 1,
        }
    }

    pub fn from_index(i: usize) -> Option<Self> {
        match i {
            0 => Some(Label::Control),
            1 => Some(Label::Disease),
            _ => None,
        }
    }
}

impl TryFrom<u8> for Label {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        Label::from_index(v as usize).ok_or_else(|| "label must be 0 or 1".to_string())
    }
}

impl From<Label> for u8 {
    fn from(l: Label) -> u8 {
        l.index() as u8
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SubjectTimeSeries {
    pub subject_id: String,
    pub label: Label,
    /// `T x R`: one row per time point, one column per region.
    pub series: DenseMatrix,
}

impl SubjectTimeSeries {
    pub fn time_points(&self) -> usize {
        self.series.rows()
    }

    pub fn regions(&self) -> usize {
        self.series.cols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DfcSet {
    pub subject_id: String,
    pub label: Label,
    pub matrices: Vec<DenseMatrix>,
    /// One entry per window containing a zero-variance region.
    pub warnings: Vec<String>,
}

impl DfcSet {
    pub fn regions(&self) -> usize {
        self.matrices.first().map_or(0, DenseMatrix::rows)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowConfig {
    /// Window length `W` in time points.
    pub window_size: usize,
    /// Step `S` between consecutive window starts.
    pub step: usize,
}

impl Default for WindowConfig {
    fn default() -> Self {
        Self {
            window_size: 30,
            step: 2,
        }
    }
}

impl WindowConfig {
    pub fn new(window_size: usize, step: usize) -> Result<Self> {
        let cfg = Self { window_size, step };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_size < 2 {
            return Err(Error::invalid(format!(
                "window size must be >= 2, got {}",
                self.window_size
            )));
        }
        if self.step < 1 {
            return Err(Error::invalid("window step must be >= 1"));
        }
        Ok(())
    }
}

/// Number of windows for a series of length `len`: `⌊(len − W)/S⌋ + 1`.
pub fn window_count(len: usize, cfg: &WindowConfig) -> Result<usize> {
    cfg.validate()?;
    if len < cfg.window_size {
        return Err(Error::invalid(format!(
            "series length {len} is shorter than window size {}",
            cfg.window_size
        )));
    }
    Ok((len - cfg.window_size) / cfg.step + 1)
}

/// Pearson correlation between the columns of a `W x R` window.
///
/// Only the upper triangle is computed and then mirrored, so the result is
/// exactly symmetric with an exact unit diagonal. Entries involving a
/// zero-variance column are 0; the indices of such columns are returned.
pub fn pearson_matrix(window: &DenseMatrix) -> Result<(DenseMatrix, Vec<usize>)> {
    let (n, r) = window.shape();
    if n < 2 {
        return Err(Error::invalid(format!("pearson_matrix needs at least 2 rows, got {n}")));
    }

    let mut means = vec![0.0; r];
    for t in 0..n {
        for (m, x) in means.iter_mut().zip(window.row(t)) {
            *m += x;
        }
    }
    means.iter_mut().for_each(|m| *m /= n as f64);

    // Centered columns stored region-major so each pair is a contiguous dot product.
    let mut centered = DenseMatrix::zeros(r, n);
    for t in 0..n {
        for (j, x) in window.row(t).iter().enumerate() {
            centered[(j, t)] = x - means[j];
        }
    }

    let mut degenerate = Vec::new();
    let mut inv_norm = vec![0.0; r];
    for j in 0..r {
        let col = centered.row(j);
        let spread = col.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if spread <= 1e-12 * means[j].abs().max(1.0) {
            degenerate.push(j);
        } else {
            let ss: f64 = col.iter().map(|v| v * v).sum();
            inv_norm[j] = 1.0 / ss.sqrt();
        }
    }

    let mut out = DenseMatrix::identity(r);
    for i in 0..r {
        if inv_norm[i] == 0.0 {
            continue;
        }
        for j in i + 1..r {
            if inv_norm[j] == 0.0 {
                continue;
            }
            let cov = crate::nn::dot(centered.row(i), centered.row(j));
            let v = (cov * inv_norm[i] * inv_norm[j]).clamp(-1.0, 1.0);
            out[(i, j)] = v;
            out[(j, i)] = v;
        }
    }
    Ok((out, degenerate))
}

/// Slides a window over the subject's series and correlates each one.
pub fn build_dfc_set(ts: &SubjectTimeSeries, cfg: &WindowConfig) -> Result<DfcSet> {
    let count = window_count(ts.time_points(), cfg)?;
    let r = ts.regions();
    let mut matrices = Vec::with_capacity(count);
    let mut warnings = Vec::new();
    let mut window = DenseMatrix::zeros(cfg.window_size, r);
    for k in 0..count {
        let start = k * cfg.step;
        let rows = &ts.series.as_slice()[start * r..(start + cfg.window_size) * r];
        window.as_mut_slice().copy_from_slice(rows);
        let (fc, degenerate) = pearson_matrix(&window)?;
        if !degenerate.is_empty() {
            warnings.push(format!(
                "subject {}: window {k} has zero-variance regions {degenerate:?}",
                ts.subject_id
            ));
        }
        matrices.push(fc);
    }
    Ok(DfcSet {
        subject_id: ts.subject_id.clone(),
        label: ts.label,
        matrices,
        warnings,
    })
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    subject_id: String,
    label: String,
    path: String,
}

/// Reads a `subject_id,label,path` manifest and every series file it names.
/// Paths are resolved relative to the manifest's directory.
pub fn load_cohort(manifest_path: &Path) -> Result<Vec<SubjectTimeSeries>> {
    let text = fs::read_to_string(manifest_path)
        .map_err(|e| Error::ingestion(manifest_path, None, format!("cannot read manifest: {e}")))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));

    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| Error::ingestion(manifest_path, Some(1), e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["subject_id", "label", "path"] {
        return Err(Error::ingestion(
            manifest_path,
            Some(1),
            "header must be `subject_id,label,path`",
        ));
    }

    let mut subjects: Vec<SubjectTimeSeries> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize);
            Error::ingestion(manifest_path, line, e.to_string())
        })?;
        let line = record.position().map(|p| p.line() as usize);
        let row: ManifestRow = record
            .deserialize(Some(&headers))
            .map_err(|e| Error::ingestion(manifest_path, line, e.to_string()))?;
        let label = match row.label.as_str() {
            "0" => Label::Control,
            "1" => Label::Disease,
            _ => return Err(Error::ingestion(manifest_path, line, "label must be 0 or 1")),
        };
        let series_path: PathBuf = base.join(&row.path);
        let series = read_series(&series_path)?;
        if let Some(first) = subjects.first() {
            if series.cols() != first.regions() {
                return Err(Error::ingestion(
                    manifest_path,
                    line,
                    format!(
                        "subject {} has {} regions but {} has {}",
                        row.subject_id,
                        series.cols(),
                        first.subject_id,
                        first.regions()
                    ),
                ));
            }
        }
        subjects.push(SubjectTimeSeries {
            subject_id: row.subject_id,
            label,
            series,
        });
    }
    Ok(subjects)
}

/// Reads a headerless CSV of decimals, one row per time point.
pub fn read_series(path: &Path) -> Result<DenseMatrix> {
    let text =
        fs::read_to_string(path).map_err(|e| Error::ingestion(path, None, format!("cannot read series: {e}")))?;
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let mut n = 0;
        for cell in line.split(',') {
            let cell = cell.trim();
            let v: f64 = cell
                .parse()
                .map_err(|_| Error::ingestion(path, Some(line_no), format!("non-numeric cell `{cell}`")))?;
            if !v.is_finite() {
                return Err(Error::ingestion(
                    path,
                    Some(line_no),
                    format!("non-finite cell `{cell}`"),
                ));
            }
            data.push(v);
            n += 1;
        }
        match cols {
            None => cols = Some(n),
            Some(c) if c != n => {
                return Err(Error::ingestion(
                    path,
                    Some(line_no),
                    format!("ragged row: {n} columns, expected {c}"),
                ))
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::ingestion(path, None, "empty series file"))?;
    DenseMatrix::from_vec(rows, cols, data)
}

pub fn write_series(path: &Path, series: &DenseMatrix) -> Result<()> {
    let mut out = String::with_capacity(series.len() * 20);
    for t in 0..series.rows() {
        let row: Vec<String> = series.row(t).iter().map(|v| v.to_string()).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes `manifest.csv` plus one series file per subject into `dir`.
pub fn write_cohort(dir: &Path, subjects: &[SubjectTimeSeries]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let mut manifest = String::from("subject_id,label,path\n");
    for s in subjects {
        let file = format!("{}.csv", s.subject_id);
        write_series(&dir.join(&file), &s.series)?;
        manifest.push_str(&format!("{},{},{}\n", s.subject_id, s.label.index(), file));
    }
    let path = dir.join("manifest.csv");
    fs::write(&path, manifest)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Rng;

    fn col_matrix(cols: &[&[f64]]) -> DenseMatrix {
        let n = cols[0].len();
        let mut m = DenseMatrix::zeros(n, cols.len());
        for (j, c) in cols.iter().enumerate() {
            for (t, v) in c.iter().enumerate() {
                m[(t, j)] = *v;
            }
        }
        m
    }

    #[test]
    fn window_count_examples() {
        assert_eq!(window_count(176, &WindowConfig::new(30, 2).unwrap()).unwrap(), 74);
        assert_eq!(window_count(100, &WindowConfig::new(30, 7).unwrap()).unwrap(), 11);
        for s in 1..10 {
            assert_eq!(window_count(30, &WindowConfig::new(30, s).unwrap()).unwrap(), 1);
        }
        assert!(window_count(29, &WindowConfig::default()).is_err());
    }

    #[test]
    fn window_config_validation() {
        assert!(WindowConfig::new(1, 1).is_err());
        assert!(WindowConfig::new(2, 0).is_err());
    }

    #[test]
    fn pearson_identities() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let neg: Vec<f64> = a.iter().map(|v| -v).collect();
        let (m, _) = pearson_matrix(&col_matrix(&[&a, &a, &neg])).unwrap();
        assert_eq!(m[(0, 1)], 1.0);
        assert_eq!(m[(0, 2)], -1.0);
        assert_eq!(m[(1, 1)], 1.0);
    }

    #[test]
    fn pearson_worked_example() {
        // Independent scalar evaluation of the textbook formula.
        let x = [1.0, 2.0, 3.0, 4.0];
        let y = [1.0, 3.0, 2.0, 5.0];
        let mx = x.iter().sum::<f64>() / 4.0;
        let my = y.iter().sum::<f64>() / 4.0;
        let num: f64 = x.iter().zip(&y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let den =
            (x.iter().map(|a| (a - mx).powi(2)).sum::<f64>() * y.iter().map(|b| (b - my).powi(2)).sum::<f64>()).sqrt();
        // Centered cross-product 5.5, sums of squares 5 and 8.75.
        assert!((num / den - 5.5 / 43.75_f64.sqrt()).abs() < 1e-15);
        let (m, _) = pearson_matrix(&col_matrix(&[&x, &y])).unwrap();
        assert!((m[(0, 1)] - num / den).abs() < 1e-15);
        assert!((m[(0, 1)] - 0.831_521_840_620_3).abs() < 1e-12);
    }

    #[test]
    fn zero_variance_column_is_zeroed_and_reported() {
        let a = [1.0, 2.0, 3.0, 5.0];
        let c = [0.1, 0.1, 0.1, 0.1];
        let (m, bad) = pearson_matrix(&col_matrix(&[&a, &c])).unwrap();
        assert_eq!(bad, vec![1]);
        assert_eq!(m[(0, 1)], 0.0);
        assert_eq!(m[(1, 1)], 1.0);
    }

    #[test]
    fn single_row_window_rejected() {
        assert!(pearson_matrix(&DenseMatrix::zeros(1, 3)).is_err());
    }

    #[test]
    fn dfc_set_boundary_and_count() {
        let mut rng = Rng::new(4);
        let series = DenseMatrix::from_vec(30, 5, (0..150).map(|_| rng.normal()).collect()).unwrap();
        let ts = SubjectTimeSeries {
            subject_id: "s".into(),
            label: Label::Control,
            series: series.clone(),
        };
        let set = build_dfc_set(&ts, &WindowConfig::default()).unwrap();
        assert_eq!(set.matrices.len(), 1);
        assert_eq!(set.matrices[0], pearson_matrix(&series).unwrap().0);

        let long = SubjectTimeSeries {
            series: DenseMatrix::from_vec(176, 5, (0..880).map(|_| rng.normal()).collect()).unwrap(),
            ..ts
        };
        let set = build_dfc_set(&long, &WindowConfig::default()).unwrap();
        assert_eq!(set.matrices.len(), 74);
        for m in &set.matrices {
            assert!(m.is_symmetric(0.0));
            assert!((0..5).all(|i| m[(i, i)] == 1.0));
        }
    }

    #[test]
    fn label_serde_is_numeric() {
        assert_eq!(serde_json::to_string(&Label::Disease).unwrap(), "1");
        let err = serde_json::from_str::<Label>("2").unwrap_err();
        assert!(err.to_string().contains("label must be 0 or 1"));
    }
}
