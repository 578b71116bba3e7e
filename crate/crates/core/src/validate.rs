//! Statistical comparison of synthetic and historical regional series.
//!
//! * Pearson correlation matrices between regions, per window.
//! * A two-component PCA fitted on the pooled historical and synthetic
//!   profiles (covariance form, MW units), projecting both clouds.
//! * An overlap score in `[0, 1]` telling whether the two projected clouds
//!   occupy the same region of the plane.
//!
//! The overlap score is symmetric. Each cloud gets a coverage set, the union
//! of balls around its points whose radius is the distance to the point's
//! k-th nearest neighbour in its own cloud. The score is the mean of the
//! fraction of synthetic points inside the historical set and the fraction
//! of historical points inside the synthetic set. A one-sided score would
//! reward a synthetic cloud that collapses into a small part of the history.

use std::io::Write;
use std::ops::Range;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::grid_model::{RegionId, RegionalSeries};

/// Pearson coefficient, `None` when either side has zero variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (da, db) = (a - mx, b - my);
        sxy += da * db;
        sxx += da * da;
        syy += db * db;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return None;
    }
    Some((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Region × region correlations. Entries involving a constant region are NaN
/// and the region is listed in `undefined`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PearsonMatrix {
    pub regions: Vec<RegionId>,
    #[serde(serialize_with = "serialize_rows")]
    pub values: DMatrix<f64>,
    pub undefined: Vec<RegionId>,
}

fn serialize_rows<S: serde::Serializer>(m: &DMatrix<f64>, s: S) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = s.serialize_seq(Some(m.nrows()))?;
    for r in 0..m.nrows() {
        let row: Vec<Option<f64>> = m.row(r).iter().map(|v| v.is_finite().then_some(*v)).collect();
        seq.serialize_element(&row)?;
    }
    seq.end()
}

pub fn pearson_matrix(series: &RegionalSeries, window: Range<usize>) -> Result<PearsonMatrix> {
    if window.end > series.periods() || window.len() < 3 {
        return Err(Error::Invalid(format!(
            "window {window:?} must hold at least 3 of the {} periods",
            series.periods()
        )));
    }
    let rows: Vec<Vec<f64>> = (0..series.regions.len())
        .map(|r| series.values.row(r).columns_range(window.clone()).iter().copied().collect())
        .collect();
    let n = rows.len();
    let constant: Vec<bool> = rows.iter().map(|x| pearson(x, x).is_none()).collect();
    let mut values = DMatrix::from_element(n, n, f64::NAN);
    for i in 0..n {
        for j in 0..=i {
            let v = if i == j {
                if constant[i] { f64::NAN } else { 1.0 }
            } else {
                pearson(&rows[i], &rows[j]).unwrap_or(f64::NAN)
            };
            values[(i, j)] = v;
            values[(j, i)] = v;
        }
    }
    Ok(PearsonMatrix {
        regions: series.regions.clone(),
        values,
        undefined: series.regions.iter().zip(&constant).filter(|(_, &c)| c).map(|(&r, _)| r).collect(),
    })
}

/// Entrywise mean of the matrices of consecutive full windows of
/// `window` periods, skipping undefined entries.
pub fn mean_pearson(series: &RegionalSeries, window: usize) -> Result<PearsonMatrix> {
    let count = series.periods() / window.max(1);
    if count == 0 {
        return Err(Error::Invalid(format!(
            "series of {} periods holds no window of {window}",
            series.periods()
        )));
    }
    let n = series.regions.len();
    let mut sum = DMatrix::<f64>::zeros(n, n);
    let mut hits = DMatrix::<f64>::zeros(n, n);
    for w in 0..count {
        let m = pearson_matrix(series, w * window..(w + 1) * window)?;
        for (idx, v) in m.values.iter().enumerate() {
            if v.is_finite() {
                sum[idx] += v;
                hits[idx] += 1.0;
            }
        }
    }
    let values = sum.zip_map(&hits, |s, h| if h > 0.0 { s / h } else { f64::NAN });
    let undefined = (0..n).filter(|&i| !values[(i, i)].is_finite()).map(|i| series.regions[i]).collect();
    Ok(PearsonMatrix {
        regions: series.regions.clone(),
        values,
        undefined,
    })
}

/// Mean correlation within groups and across groups (off-diagonal, defined
/// entries only). `groups[i]` labels row `i`.
pub fn group_correlation(m: &PearsonMatrix, groups: &[usize]) -> (f64, f64) {
    let (mut intra, mut ni, mut inter, mut nx) = (0.0, 0, 0.0, 0);
    for i in 0..m.regions.len() {
        for j in 0..i {
            let v = m.values[(i, j)];
            if !v.is_finite() {
                continue;
            }
            if groups[i] == groups[j] {
                intra += v;
                ni += 1;
            } else {
                inter += v;
                nx += 1;
            }
        }
    }
    (intra / ni as f64, inter / nx as f64)
}

pub fn write_pearson_csv(m: &PearsonMatrix, mut out: impl Write) -> Result<()> {
    let io = |e| Error::io("pearson csv", e);
    let header: Vec<String> = m.regions.iter().map(|r| r.to_string()).collect();
    writeln!(out, "region,{}", header.join(",")).map_err(io)?;
    for (i, r) in m.regions.iter().enumerate() {
        let row: Vec<String> = m
            .values
            .row(i)
            .iter()
            .map(|v| if v.is_finite() { v.to_string() } else { String::new() })
            .collect();
        writeln!(out, "{r},{}", row.join(",")).map_err(io)?;
    }
    Ok(())
}

/// Fraction of `probe` points covered by the k-NN balls of `reference`.
pub fn directional_coverage(reference: &[[f64; 2]], probe: &[[f64; 2]], k: usize) -> f64 {
    if probe.is_empty() {
        return 0.0;
    }
    let d2 = |a: &[f64; 2], b: &[f64; 2]| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    let radii: Vec<f64> = reference
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let mut d: Vec<f64> = reference.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, q)| d2(p, q)).collect();
            if d.is_empty() {
                return 0.0;
            }
            let kth = k.clamp(1, d.len()) - 1;
            *d.select_nth_unstable_by(kth, f64::total_cmp).1
        })
        .collect();
    let covered = probe
        .iter()
        .filter(|q| reference.iter().zip(&radii).any(|(p, &r)| d2(p, q) <= r))
        .count();
    covered as f64 / probe.len() as f64
}

/// Symmetric overlap: mean of the coverage in both directions.
pub fn overlap_score(historical: &[[f64; 2]], synthetic: &[[f64; 2]], k: usize) -> f64 {
    if historical.is_empty() || synthetic.is_empty() {
        return 0.0;
    }
    0.5 * (directional_coverage(historical, synthetic, k) + directional_coverage(synthetic, historical, k))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProjectionReport {
    /// Two rows of `R` loadings, orthonormal.
    pub loadings: Vec<Vec<f64>>,
    /// Explained-variance fraction of every component, non-increasing.
    pub explained_variance: Vec<f64>,
    #[serde(skip)]
    pub historical: Vec<[f64; 2]>,
    #[serde(skip)]
    pub synthetic: Vec<[f64; 2]>,
    pub overlap: f64,
    pub k: usize,
    /// Fit on pooled historical and synthetic rows, covariance form.
    pub fit: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Projects the rows of two M×R matrices on the first two principal
/// components of their pooled, column-centered union.
pub fn pca_project(historical: &DMatrix<f64>, synthetic: &DMatrix<f64>, k: usize) -> Result<ProjectionReport> {
    let r = historical.ncols();
    if r < 2 || historical.nrows() < r || synthetic.ncols() != r {
        return Err(Error::Invalid(format!(
            "projection needs M >= R >= 2 and matching columns, got {}x{} and {}x{}",
            historical.nrows(),
            r,
            synthetic.nrows(),
            synthetic.ncols()
        )));
    }
    let (mh, ms) = (historical.nrows(), synthetic.nrows());
    let mut pooled = DMatrix::zeros(mh + ms, r);
    pooled.rows_mut(0, mh).copy_from(historical);
    pooled.rows_mut(mh, ms).copy_from(synthetic);
    let mean = pooled.row_mean();
    for mut row in pooled.row_iter_mut() {
        row -= &mean;
    }
    let cov = pooled.transpose() * &pooled / ((mh + ms).max(2) - 1) as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i].max(0.0)).collect();
    let total: f64 = values.iter().sum();
    let explained: Vec<f64> = values.iter().map(|v| if total > 0.0 { v / total } else { 0.0 }).collect();

    let loadings: Vec<Vec<f64>> = order[..2]
        .iter()
        .map(|&i| {
            let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
            let big = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() { x } else { m });
            if big < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            v
        })
        .collect();
    let project = |rows: std::ops::Range<usize>| -> Vec<[f64; 2]> {
        rows.map(|i| {
            let row = pooled.row(i);
            let dot = |l: &Vec<f64>| row.iter().zip(l).map(|(a, b)| a * b).sum::<f64>();
            [dot(&loadings[0]), dot(&loadings[1])]
        })
        .collect()
    };
    let hist = project(0..mh);
    let syn = project(mh..mh + ms);
    let note = (explained[1] < 1e-12).then(|| {
        log::info!("pooled data has rank below 2");
        "pooled data has rank below 2".to_string()
    });
    Ok(ProjectionReport {
        overlap: overlap_score(&hist, &syn, k),
        loadings,
        explained_variance: explained,
        historical: hist,
        synthetic: syn,
        k,
        fit: "pooled covariance",
        note,
    })
}

/// Periods × regions view, rows ordered like `regions`.
pub fn profile_matrix(series: &RegionalSeries, regions: &[RegionId]) -> Result<DMatrix<f64>> {
    let idx: Vec<usize> = regions
        .iter()
        .map(|r| series.region_index(*r).ok_or_else(|| Error::Invalid(format!("series lacks region {r}"))))
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(series.periods(), regions.len(), |t, c| series.values[(idx[c], t)]))
}

/// PCA projection and overlap of two regional series over their common regions.
pub fn compare_regional(historical: &RegionalSeries, synthetic: &RegionalSeries, k: usize) -> Result<ProjectionReport> {
    pca_project(
        &profile_matrix(historical, &historical.regions)?,
        &profile_matrix(synthetic, &historical.regions)?,
        k,
    )
}

pub fn write_projection_csv(report: &ProjectionReport, mut out: impl Write) -> Result<()> {
    let io = |e| Error::io("projection csv", e);
    writeln!(out, "source,pc1,pc2").map_err(io)?;
    for (label, pts) in [("historical", &report.historical), ("synthetic", &report.synthetic)] {
        for p in pts {
            writeln!(out, "{label},{},{}", p[0], p[1]).map_err(io)?;
        }
    }
    Ok(())
}
