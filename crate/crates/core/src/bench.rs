//! Accuracy benchmark against the brute-force distance oracle.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use rayon::prelude::*;

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::field::DistanceField;
use crate::mesher::GridSpec;
use crate::oracle::brute_force_edf;

pub const CSV_HEADER: &str = "qx,qy,qz,d_field,d_oracle,abs_err";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub query: Vec<f64>,
    pub d_field: f64,
    pub d_oracle: f64,
    pub abs_err: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchSummary {
    pub rmse: f64,
    pub mae: f64,
    pub max_error: f64,
    pub count: usize,
    pub wall_time: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub summary: BenchSummary,
}

/// Error statistics over `rows` (wall time left at zero).
pub fn summarize(rows: &[BenchRow]) -> BenchSummary {
    let n = rows.len() as f64;
    let sq: f64 = rows.iter().map(|r| r.abs_err * r.abs_err).sum();
    let abs: f64 = rows.iter().map(|r| r.abs_err).sum();
    BenchSummary {
        rmse: (sq / n).sqrt(),
        mae: abs / n,
        max_error: rows.iter().map(|r| r.abs_err).fold(0.0, f64::max),
        count: rows.len(),
        wall_time: Duration::ZERO,
    }
}

/// Compares the field with the oracle at every grid node whose oracle
/// distance lies in `[band[0], band[1]]`. Rows follow grid raster order.
pub fn run_benchmark<F: DistanceField + ?Sized>(
    field: &F,
    cloud: &PointCloud,
    grid: &GridSpec,
    band: [f64; 2],
) -> Result<BenchReport> {
    let start = Instant::now();
    let mut g = grid.clone();
    // the iso level plays no part here
    g.iso = g.cell;
    g.validate()?;
    if g.dim() != field.dim() || cloud.dim() != field.dim() {
        return Err(Error::DimensionMismatch {
            expected: field.dim(),
            got: if g.dim() != field.dim() { g.dim() } else { cloud.dim() },
        });
    }
    if !(band[0].is_finite() && band[1].is_finite() && band[0] <= band[1]) {
        return Err(Error::InvalidParameter(
            "band must be finite with lower <= upper".into(),
        ));
    }
    if cloud.is_empty() {
        return Err(Error::Empty("point cloud"));
    }

    let rows: Vec<Option<BenchRow>> = g
        .nodes()
        .into_par_iter()
        .map(|q| {
            let d_oracle = brute_force_edf(cloud, &q)?;
            if d_oracle < band[0] || d_oracle > band[1] {
                return Ok(None);
            }
            let d_field = field.distance(&q)?;
            Ok(Some(BenchRow {
                query: q,
                d_field,
                d_oracle,
                abs_err: (d_field - d_oracle).abs(),
            }))
        })
        .collect::<Result<_>>()?;
    let rows: Vec<BenchRow> = rows.into_iter().flatten().collect();
    if rows.is_empty() {
        return Err(Error::EmptyBand);
    }
    let mut summary = summarize(&rows);
    summary.wall_time = start.elapsed();
    Ok(BenchReport { rows, summary })
}

/// CSV with header `qx,qy,qz,d_field,d_oracle,abs_err`; `qz` is 0 in 2D.
pub fn write_report_csv<W: Write>(mut w: W, report: &BenchReport) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in &report.rows {
        let qz = r.query.get(2).copied().unwrap_or(0.0);
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.query[0], r.query[1], qz, r.d_field, r.d_oracle, r.abs_err
        )?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_report_csv(path: &Path, report: &BenchReport) -> Result<()> {
    write_report_csv(std::io::BufWriter::new(std::fs::File::create(path)?), report)
}

/// Parses rows written by [`write_report_csv`].
pub fn read_report_csv(text: &str, dim: usize) -> Result<Vec<BenchRow>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CSV_HEADER => {}
        _ => {
            return Err(Error::Parse {
                line: 1,
                message: "missing CSV header".into(),
            })
        }
    }
    lines
        .map(|(i, line)| {
            let v = line
                .split(',')
                .map(|t| t.parse::<f64>())
                .collect::<std::result::Result<Vec<f64>, _>>()
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            if v.len() != 6 {
                return Err(Error::Parse {
                    line: i + 1,
                    message: "expected 6 columns".into(),
                });
            }
            Ok(BenchRow {
                query: v[..dim].to_vec(),
                d_field: v[3],
                d_oracle: v[4],
                abs_err: v[5],
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{Field, FieldConfig, FieldVariant};
    use crate::kernels::{KernelFamily, KernelSpec};
    use crate::scenes;

    fn circle_grid() -> GridSpec {
        GridSpec::new(vec![-1.6, -1.6], vec![1.6, 1.6], 0.02)
    }

    #[test]
    fn band_excluding_everything_is_an_error() {
        let cloud = scenes::circle(64, 1.0, [0.0, 0.0]);
        let field = Field::build_default(&cloud, FieldVariant::Reverting).unwrap();
        let grid = GridSpec::new(vec![-1.0, -1.0], vec![1.0, 1.0], 0.1);
        assert!(matches!(
            run_benchmark(&field, &cloud, &grid, [10.0, 20.0]),
            Err(Error::EmptyBand)
        ));
    }

    #[test]
    fn single_point_field_matches_oracle() {
        let cloud = PointCloud::from_points(2, &[[0.1, -0.2]]).unwrap();
        let cfg = FieldConfig::reverting(KernelSpec::new(KernelFamily::SquaredExponential, 0.5, 1.0).unwrap())
            .with_noise(0.0);
        let field = Field::build(&cloud, cfg).unwrap();
        let grid = GridSpec::new(vec![-1.0, -1.0], vec![1.0, 1.0], 0.05);
        let report = run_benchmark(&field, &cloud, &grid, [0.0, 1.0]).unwrap();
        assert!(report.summary.rmse < 1e-6, "rmse {}", report.summary.rmse);
    }

    #[test]
    fn circle_scene_rmse_and_summary_consistency() {
        let cloud = scenes::circle(256, 1.0, [0.0, 0.0]);
        let field = Field::build_default(&cloud, FieldVariant::Reverting).unwrap();
        let report = run_benchmark(&field, &cloud, &circle_grid(), [0.05, 0.5]).unwrap();
        let s = report.summary;
        assert!(s.rmse <= 0.02, "rmse {}", s.rmse);
        let mean_sq = report.rows.iter().map(|r| r.abs_err * r.abs_err).sum::<f64>() / s.count as f64;
        assert!((s.rmse * s.rmse - mean_sq).abs() < 1e-12);
        assert!(s.max_error >= s.mae);

        let mut buf = Vec::new();
        write_report_csv(&mut buf, &report).unwrap();
        let rows = read_report_csv(std::str::from_utf8(&buf).unwrap(), 2).unwrap();
        assert_eq!(rows, report.rows);
        let again = summarize(&rows);
        assert!((again.rmse - s.rmse).abs() < 1e-12);
        assert!((again.mae - s.mae).abs() < 1e-12);
        assert_eq!(again.max_error, s.max_error);
    }

    #[test]
    fn rows_follow_raster_order() {
        let cloud = scenes::circle(64, 1.0, [0.0, 0.0]);
        let field = Field::build_default(&cloud, FieldVariant::Reverting).unwrap();
        let grid = GridSpec::new(vec![-1.5, -1.5], vec![1.5, 1.5], 0.1);
        let report = run_benchmark(&field, &cloud, &grid, [0.1, 0.4]).unwrap();
        let key = |r: &BenchRow| ((r.query[1] * 1e6).round() as i64, (r.query[0] * 1e6).round() as i64);
        assert!(report.rows.windows(2).all(|w| key(&w[0]) < key(&w[1])));
    }
}
