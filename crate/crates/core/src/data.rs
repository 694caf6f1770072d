//! Datasets, grids, neighborhoods, bins and total-variation distances.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Closed interval a feature is allowed to take values in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub lo: f64,
    pub hi: f64,
}

impl Domain {
    pub fn contains(&self, v: f64) -> bool {
        v >= self.lo && v <= self.hi
    }

    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// Immutable `n x p` design matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    values: Vec<f64>,
    n: usize,
    p: usize,
    feature_names: Vec<String>,
    domains: Vec<Domain>,
    labels: Option<Vec<f64>>,
    label_name: Option<String>,
}

impl Dataset {
    /// Build from row-major values. Domains default to per-column (min, max).
    pub fn from_flat(
        values: Vec<f64>,
        n: usize,
        p: usize,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if n == 0 || p == 0 {
            return Err(Error::InvalidDataset(format!(
                "need n >= 1 and p >= 1, got {n}x{p}"
            )));
        }
        if values.len() != n * p {
            return Err(Error::DimensionMismatch {
                expected: n * p,
                got: values.len(),
            });
        }
        if feature_names.len() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: feature_names.len(),
            });
        }
        let mut seen = HashSet::new();
        for name in &feature_names {
            if !seen.insert(name.as_str()) {
                return Err(Error::DuplicateColumn(name.clone()));
            }
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset(format!(
                "non-finite value at row {}, column {}",
                pos / p,
                pos % p
            )));
        }
        let mut domains = vec![
            Domain {
                lo: f64::INFINITY,
                hi: f64::NEG_INFINITY
            };
            p
        ];
        for row in values.chunks_exact(p) {
            for (d, &v) in domains.iter_mut().zip(row) {
                d.lo = d.lo.min(v);
                d.hi = d.hi.max(v);
            }
        }
        Ok(Dataset {
            values,
            n,
            p,
            feature_names,
            domains,
            labels: None,
            label_name: None,
        })
    }

    /// Build from rows with generated names `x0, x1, ...`.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        let names = (0..p).map(|j| format!("x{j}")).collect();
        Self::from_rows_named(rows, names)
    }

    pub fn from_rows_named(rows: &[Vec<f64>], names: Vec<String>) -> Result<Self> {
        let p = names.len();
        let mut values = Vec::with_capacity(rows.len() * p);
        for row in rows {
            if row.len() != p {
                return Err(Error::DimensionMismatch {
                    expected: p,
                    got: row.len(),
                });
            }
            values.extend_from_slice(row);
        }
        Self::from_flat(values, rows.len(), p, names)
    }

    pub fn with_labels(mut self, labels: Vec<f64>) -> Result<Self> {
        if labels.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: labels.len(),
            });
        }
        if labels.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDataset("non-finite label".into()));
        }
        self.labels = Some(labels);
        Ok(self)
    }

    pub fn with_label_name(mut self, name: impl Into<String>) -> Self {
        self.label_name = Some(name.into());
        self
    }

    /// Override domains; each must contain its whole column.
    pub fn with_domains(mut self, domains: Vec<Domain>) -> Result<Self> {
        if domains.len() != self.p {
            return Err(Error::DimensionMismatch {
                expected: self.p,
                got: domains.len(),
            });
        }
        for (j, (new, data)) in domains.iter().zip(&self.domains).enumerate() {
            if !(new.lo <= data.lo && data.hi <= new.hi) {
                return Err(Error::InvalidDataset(format!(
                    "domain [{}, {}] of column {j} does not contain data range [{}, {}]",
                    new.lo, new.hi, data.lo, data.hi
                )));
            }
        }
        self.domains = domains;
        Ok(self)
    }

    /// Copy with column `j` replaced. Values must stay finite and inside the domain.
    pub fn with_column(&self, j: usize, column: &[f64]) -> Result<Self> {
        self.check_feature(j)?;
        if column.len() != self.n {
            return Err(Error::DimensionMismatch {
                expected: self.n,
                got: column.len(),
            });
        }
        let dom = self.domains[j];
        if let Some(i) = column
            .iter()
            .position(|&v| !v.is_finite() || !dom.contains(v))
        {
            return Err(Error::InvalidDataset(format!(
                "value {} at row {i} escapes domain [{}, {}] of column {j}",
                column[i], dom.lo, dom.hi
            )));
        }
        let mut out = self.clone();
        for (i, &v) in column.iter().enumerate() {
            out.values[i * self.p + j] = v;
        }
        Ok(out)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.p..(i + 1) * self.p]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.values.chunks_exact(self.p)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.p + j]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn domains(&self) -> &[Domain] {
        &self.domains
    }

    pub fn labels(&self) -> Option<&[f64]> {
        self.labels.as_deref()
    }

    pub fn label_name(&self) -> Option<&str> {
        self.label_name.as_deref()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    pub(crate) fn check_feature(&self, j: usize) -> Result<()> {
        if j < self.p {
            Ok(())
        } else {
            Err(Error::FeatureOutOfRange {
                index: j,
                p: self.p,
            })
        }
    }

    /// Population standard deviation of column `j`.
    pub fn std_dev(&self, j: usize) -> f64 {
        let col = self.column(j);
        let mean = col.iter().sum::<f64>() / self.n as f64;
        (col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / self.n as f64).sqrt()
    }

    pub fn unique_count(&self, j: usize) -> usize {
        let mut col = self.column(j);
        col.sort_by(f64::total_cmp);
        col.dedup();
        col.len()
    }

    /// Largest Euclidean distance between per-column extremes; any
    /// neighborhood radius at least this large covers every row.
    pub fn diameter(&self) -> f64 {
        self.domains
            .iter()
            .map(|d| d.width().powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Write as CSV with a header row; the label column, if any, comes last.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io_err = |e: csv::Error| Error::Csv {
            path: path.to_path_buf(),
            message: e.to_string(),
        };
        let mut w = csv::Writer::from_path(path).map_err(io_err)?;
        let mut header: Vec<String> = self.feature_names.clone();
        if self.labels.is_some() {
            header.push(self.label_name.clone().unwrap_or_else(|| "label".into()));
        }
        w.write_record(&header).map_err(io_err)?;
        for i in 0..self.n {
            let mut rec: Vec<String> = self.row(i).iter().map(|v| format!("{v:?}")).collect();
            if let Some(labels) = &self.labels {
                rec.push(format!("{:?}", labels[i]));
            }
            w.write_record(&rec).map_err(io_err)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        Ok(())
    }
}

/// Read a CSV file with a header row. When `label_column` is given, that
/// column becomes the label vector and is excluded from the features.
pub fn load_csv(path: impl AsRef<Path>, label_column: Option<&str>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let csv_err = |e: csv::Error| Error::Csv {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(file);
    let header: Vec<String> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let mut seen = HashSet::new();
    for h in &header {
        if !seen.insert(h.as_str()) {
            return Err(Error::DuplicateColumn(h.clone()));
        }
    }
    let label_idx = match label_column {
        Some(name) => Some(
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| Error::UnknownColumn(name.to_string()))?,
        ),
        None => None,
    };
    let names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|(k, _)| Some(*k) != label_idx)
        .map(|(_, h)| h.clone())
        .collect();

    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut n = 0;
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(csv_err)?;
        for (k, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            let v: f64 = cell
                .parse()
                .ok()
                .filter(|v: &f64| v.is_finite())
                .ok_or_else(|| Error::NonNumericCell {
                    row: r + 1,
                    column: header[k].clone(),
                    value: cell.to_string(),
                })?;
            if Some(k) == label_idx {
                labels.push(v);
            } else {
                values.push(v);
            }
        }
        n += 1;
    }
    let p = names.len();
    let ds = Dataset::from_flat(values, n, p, names)?;
    match label_column {
        Some(name) => Ok(ds.with_labels(labels)?.with_label_name(name)),
        None => Ok(ds),
    }
}

/// Nonempty ordered set of distinct column indices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSet {
    indices: Vec<usize>,
}

impl FeatureSet {
    pub fn new(indices: Vec<usize>, p: usize) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::param("s", "feature set must be nonempty"));
        }
        let mut seen = HashSet::new();
        for &j in &indices {
            if j >= p {
                return Err(Error::FeatureOutOfRange { index: j, p });
            }
            if !seen.insert(j) {
                return Err(Error::param("s", format!("duplicate index {j}")));
            }
        }
        Ok(FeatureSet { indices })
    }

    pub fn single(j: usize) -> Self {
        FeatureSet { indices: vec![j] }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, j: usize) -> bool {
        self.indices.contains(&j)
    }

    /// All columns of a `p`-feature dataset not in this set.
    pub fn complement(&self, p: usize) -> Vec<usize> {
        (0..p).filter(|j| !self.contains(*j)).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Quantile,
    Equidistant,
}

/// Strictly increasing grid spanning one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    points: Vec<f64>,
    kind: GridKind,
}

impl Grid {
    pub fn new(points: Vec<f64>, kind: GridKind) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::param("grid", "need at least 2 points"));
        }
        if points.iter().any(|v| !v.is_finite()) || points.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::param(
                "grid",
                "points must be finite and strictly increasing",
            ));
        }
        Ok(Grid { points, kind })
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn first(&self) -> f64 {
        self.points[0]
    }
}

/// Empirical quantile with linear interpolation between order statistics.
/// `sorted` must be ascending and nonempty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Empirical quantiles of column `j` at the given levels.
pub fn column_quantiles(ds: &Dataset, j: usize, levels: &[f64]) -> Result<Vec<f64>> {
    ds.check_feature(j)?;
    let mut col = ds.column(j);
    col.sort_by(f64::total_cmp);
    Ok(levels.iter().map(|&q| quantile_sorted(&col, q)).collect())
}

pub fn make_grid(ds: &Dataset, feature: usize, m: usize, kind: GridKind) -> Result<Grid> {
    ds.check_feature(feature)?;
    if m < 2 {
        return Err(Error::param(
            "m",
            format!("grid size must be >= 2, got {m}"),
        ));
    }
    let dom = ds.domains()[feature];
    let mut col = ds.column(feature);
    col.sort_by(f64::total_cmp);
    if col[0] == col[col.len() - 1] {
        return Err(Error::ConstantFeature(feature));
    }
    let points = match kind {
        GridKind::Equidistant => {
            let step = dom.width() / (m - 1) as f64;
            let mut pts: Vec<f64> = (0..m).map(|k| dom.lo + step * k as f64).collect();
            pts[m - 1] = dom.hi;
            pts
        }
        GridKind::Quantile => {
            let mut pts: Vec<f64> = (0..m)
                .map(|k| quantile_sorted(&col, k as f64 / (m - 1) as f64))
                .collect();
            pts.dedup();
            if pts.len() < 2 {
                return Err(Error::ConstantFeature(feature));
            }
            pts
        }
    };
    Grid::new(points, kind)
}

/// Default neighborhood radius: 5% of the feature's standard deviation.
pub fn default_epsilon(ds: &Dataset, feature: usize) -> f64 {
    0.05 * ds.std_dev(feature)
}

/// Rows whose `s` coordinates lie within Euclidean distance `epsilon` of `x_s`.
pub fn neighborhood(ds: &Dataset, s: &FeatureSet, x_s: &[f64], epsilon: f64) -> Result<Vec<usize>> {
    if x_s.len() != s.len() {
        return Err(Error::DimensionMismatch {
            expected: s.len(),
            got: x_s.len(),
        });
    }
    if !(epsilon >= 0.0) {
        return Err(Error::param("epsilon", "must be nonnegative"));
    }
    for &j in s.indices() {
        ds.check_feature(j)?;
    }
    let eps2 = epsilon * epsilon;
    Ok((0..ds.n())
        .filter(|&i| {
            let row = ds.row(i);
            let d2: f64 = s
                .indices()
                .iter()
                .zip(x_s)
                .map(|(&j, &v)| (row[j] - v).powi(2))
                .sum();
            d2 <= eps2
        })
        .collect())
}

/// Index of the bin `(z[k-1], z[k]]` holding `v`; values at or below `z[0]`
/// fold into the first bin and values above `z[m-1]` into the last.
pub(crate) fn bin_of(points: &[f64], v: f64) -> usize {
    let last = points.len() - 2;
    let k = points.partition_point(|&z| z < v);
    k.saturating_sub(1).min(last)
}

/// Partition rows into the `m - 1` bins of `grid` along `feature`.
pub fn bin_indices(ds: &Dataset, feature: usize, grid: &Grid) -> Result<Vec<Vec<usize>>> {
    ds.check_feature(feature)?;
    let mut bins = vec![Vec::new(); grid.len() - 1];
    for (i, row) in ds.rows().enumerate() {
        bins[bin_of(grid.points(), row[feature])].push(i);
    }
    Ok(bins)
}

/// Default histogram resolution: `ceil(sqrt(n))`, capped at 32.
pub fn default_bin_count(n: usize) -> usize {
    ((n as f64).sqrt().ceil() as usize).clamp(1, 32)
}

/// Sparse multi-dimensional histogram with equal-mass contributions.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram {
    edges: Vec<Vec<f64>>,
    #[serde(serialize_with = "serialize_cells")]
    masses: BTreeMap<Vec<usize>, f64>,
}

fn serialize_cells<S: serde::Serializer>(
    cells: &BTreeMap<Vec<usize>, f64>,
    ser: S,
) -> std::result::Result<S::Ok, S::Error> {
    use serde::ser::SerializeSeq;
    let mut seq = ser.serialize_seq(Some(cells.len()))?;
    for (cell, mass) in cells {
        seq.serialize_element(&(cell, mass))?;
    }
    seq.end()
}

fn check_edges(edges: &[Vec<f64>]) -> Result<()> {
    if edges.is_empty() {
        return Err(Error::param("edges", "need at least one dimension"));
    }
    for e in edges {
        if e.len() < 2 || e.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::param(
                "edges",
                "each dimension needs >= 2 increasing edges",
            ));
        }
    }
    Ok(())
}

impl Histogram {
    /// One-dimensional histogram from explicit bin masses.
    pub fn from_masses_1d(edges: Vec<f64>, masses: &[f64]) -> Result<Self> {
        let edges = vec![edges];
        check_edges(&edges)?;
        if masses.len() + 1 != edges[0].len() {
            return Err(Error::DimensionMismatch {
                expected: edges[0].len() - 1,
                got: masses.len(),
            });
        }
        if masses.iter().any(|&m| !(m >= 0.0)) {
            return Err(Error::param("masses", "must be nonnegative"));
        }
        let total: f64 = masses.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::param(
                "masses",
                format!("sum to {total}, expected 1"),
            ));
        }
        let masses = masses
            .iter()
            .enumerate()
            .filter(|(_, &m)| m > 0.0)
            .map(|(k, &m)| (vec![k], m))
            .collect();
        Ok(Histogram { edges, masses })
    }

    /// Histogram of the given rows of `ds` over `columns`, each row weighted
    /// `1 / rows.len()`. Values outside the edges fold into the end bins.
    pub fn of_rows(
        ds: &Dataset,
        rows: &[usize],
        columns: &[usize],
        edges: &[Vec<f64>],
    ) -> Result<Self> {
        check_edges(edges)?;
        if columns.len() != edges.len() {
            return Err(Error::DimensionMismatch {
                expected: edges.len(),
                got: columns.len(),
            });
        }
        if rows.is_empty() {
            return Err(Error::param("rows", "histogram needs at least one row"));
        }
        let mut counts: BTreeMap<Vec<usize>, usize> = BTreeMap::new();
        for &i in rows {
            let row = ds.row(i);
            let cell = columns
                .iter()
                .zip(edges)
                .map(|(&j, e)| bin_of_edges(e, row[j]))
                .collect();
            *counts.entry(cell).or_default() += 1;
        }
        let w = rows.len() as f64;
        Ok(Histogram {
            edges: edges.to_vec(),
            masses: counts.into_iter().map(|(c, k)| (c, k as f64 / w)).collect(),
        })
    }

    pub fn edges(&self) -> &[Vec<f64>] {
        &self.edges
    }

    /// Nonzero cells with their masses, in cell order.
    pub fn cells(&self) -> impl Iterator<Item = (&[usize], f64)> {
        self.masses.iter().map(|(c, &m)| (c.as_slice(), m))
    }

    pub fn total_mass(&self) -> f64 {
        self.masses.values().sum()
    }

    /// Merge bins `bin` and `bin + 1` along dimension `dim`.
    pub fn merge_adjacent(&self, dim: usize, bin: usize) -> Result<Self> {
        let e = self
            .edges
            .get(dim)
            .ok_or_else(|| Error::param("dim", "out of range"))?;
        if bin + 2 >= e.len() {
            return Err(Error::param("bin", "no adjacent bin to merge"));
        }
        let mut edges = self.edges.clone();
        edges[dim].remove(bin + 1);
        let mut masses: BTreeMap<Vec<usize>, f64> = BTreeMap::new();
        for (cell, &m) in &self.masses {
            let mut c = cell.clone();
            if c[dim] > bin {
                c[dim] -= 1;
            }
            *masses.entry(c).or_default() += m;
        }
        Ok(Histogram { edges, masses })
    }
}

fn bin_of_edges(edges: &[f64], v: f64) -> usize {
    let b = edges.len() - 1;
    edges
        .partition_point(|&e| e <= v)
        .saturating_sub(1)
        .min(b - 1)
}

/// Equal-width edges per column spanning both datasets' domains.
pub fn histogram_edges(
    ds: &Dataset,
    ds2: &Dataset,
    columns: &[usize],
    bins: usize,
) -> Result<Vec<Vec<f64>>> {
    if bins == 0 {
        return Err(Error::param("bins", "must be positive"));
    }
    columns
        .iter()
        .map(|&j| {
            ds.check_feature(j)?;
            ds2.check_feature(j)?;
            let (d1, d2) = (ds.domains()[j], ds2.domains()[j]);
            let mut lo = d1.lo.min(d2.lo);
            let mut hi = d1.hi.max(d2.hi);
            if lo == hi {
                lo -= 0.5;
                hi += 0.5;
            }
            let step = (hi - lo) / bins as f64;
            let mut e: Vec<f64> = (0..=bins).map(|k| lo + step * k as f64).collect();
            e[bins] = hi;
            Ok(e)
        })
        .collect()
}

/// Half the L1 distance between two histograms with identical edges.
pub fn tv_distance(h: &Histogram, h2: &Histogram) -> Result<f64> {
    if h.edges != h2.edges {
        return Err(Error::HistogramMismatch);
    }
    let mut total = 0.0;
    for (cell, &m) in &h.masses {
        total += (m - h2.masses.get(cell).copied().unwrap_or(0.0)).abs();
    }
    for (cell, &m) in &h2.masses {
        if !h.masses.contains_key(cell) {
            total += m;
        }
    }
    Ok((0.5 * total).clamp(0.0, 1.0))
}

fn canonical_bits(v: f64) -> u64 {
    // -0.0 and 0.0 are the same point
    (v + 0.0).to_bits()
}

/// Exact TV distance between the empirical (point-mass) measures of two row
/// subsets restricted to `columns`.
pub fn empirical_tv_rows(
    ds: &Dataset,
    rows: &[usize],
    ds2: &Dataset,
    rows2: &[usize],
    columns: &[usize],
) -> Result<f64> {
    if columns.is_empty() {
        return Err(Error::param("columns", "column set must be nonempty"));
    }
    for &j in columns {
        ds.check_feature(j)?;
        ds2.check_feature(j)?;
    }
    if rows.is_empty() || rows2.is_empty() {
        return Err(Error::param("rows", "both measures need at least one row"));
    }
    let mut counts: BTreeMap<Vec<u64>, (usize, usize)> = BTreeMap::new();
    let key = |row: &[f64]| {
        columns
            .iter()
            .map(|&j| canonical_bits(row[j]))
            .collect::<Vec<_>>()
    };
    for &i in rows {
        counts.entry(key(ds.row(i))).or_default().0 += 1;
    }
    for &i in rows2 {
        counts.entry(key(ds2.row(i))).or_default().1 += 1;
    }
    let (n1, n2) = (rows.len() as f64, rows2.len() as f64);
    let total: f64 = counts
        .values()
        .map(|&(a, b)| (a as f64 / n1 - b as f64 / n2).abs())
        .sum();
    Ok((0.5 * total).clamp(0.0, 1.0))
}

/// Exact TV distance between the empirical measures of two datasets on `columns`.
pub fn empirical_tv_distance(ds: &Dataset, ds2: &Dataset, columns: &[usize]) -> Result<f64> {
    let r1: Vec<usize> = (0..ds.n()).collect();
    let r2: Vec<usize> = (0..ds2.n()).collect();
    empirical_tv_rows(ds, &r1, ds2, &r2, columns)
}

/// Histogram TV distance between two datasets on `columns`.
pub fn histogram_tv_distance(
    ds: &Dataset,
    ds2: &Dataset,
    columns: &[usize],
    edges: &[Vec<f64>],
) -> Result<f64> {
    let r1: Vec<usize> = (0..ds.n()).collect();
    let r2: Vec<usize> = (0..ds2.n()).collect();
    tv_distance(
        &Histogram::of_rows(ds, &r1, columns, edges)?,
        &Histogram::of_rows(ds2, &r2, columns, edges)?,
    )
}

fn conditional_rows(
    ds: &Dataset,
    ds2: &Dataset,
    s: &FeatureSet,
    x_s: &[f64],
    epsilon: f64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let a = neighborhood(ds, s, x_s, epsilon)?;
    let b = neighborhood(ds2, s, x_s, epsilon)?;
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyNeighborhood {
            x_s: x_s.to_vec(),
            epsilon,
        });
    }
    Ok((a, b))
}

/// Histogram TV between the conditionals of the complement of `s` given the
/// epsilon-neighborhood of `x_s` in each dataset.
pub fn conditional_tv_distance(
    ds: &Dataset,
    ds2: &Dataset,
    s: &FeatureSet,
    x_s: &[f64],
    epsilon: f64,
    edges: &[Vec<f64>],
) -> Result<f64> {
    let (a, b) = conditional_rows(ds, ds2, s, x_s, epsilon)?;
    let cols = s.complement(ds.p());
    tv_distance(
        &Histogram::of_rows(ds, &a, &cols, edges)?,
        &Histogram::of_rows(ds2, &b, &cols, edges)?,
    )
}

/// Exact point-mass counterpart of [`conditional_tv_distance`].
pub fn empirical_conditional_tv(
    ds: &Dataset,
    ds2: &Dataset,
    s: &FeatureSet,
    x_s: &[f64],
    epsilon: f64,
) -> Result<f64> {
    let (a, b) = conditional_rows(ds, ds2, s, x_s, epsilon)?;
    empirical_tv_rows(ds, &a, ds2, &b, &s.complement(ds.p()))
}

/// Grid point maximizing the conditional histogram TV, skipping points with
/// an empty neighborhood. Ties go to the smallest point.
pub fn max_conditional_tv(
    ds: &Dataset,
    ds2: &Dataset,
    feature: usize,
    grid: &[f64],
    epsilon: f64,
    edges: &[Vec<f64>],
) -> Result<(f64, f64)> {
    if grid.is_empty() {
        return Err(Error::param("grid", "must be nonempty"));
    }
    let s = FeatureSet::single(feature);
    let mut best: Option<(f64, f64)> = None;
    for &z in grid {
        match conditional_tv_distance(ds, ds2, &s, &[z], epsilon, edges) {
            Ok(v) => {
                if best.is_none_or(|(_, b)| v > b) {
                    best = Some((z, v));
                }
            }
            Err(Error::EmptyNeighborhood { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    best.ok_or_else(|| Error::Inestimable("every grid point has an empty neighborhood".into()))
}

/// Both TV estimates between two datasets on a column set.
#[derive(Debug, Clone, Serialize)]
pub struct TvReport {
    pub columns: Vec<usize>,
    pub bins: usize,
    pub empirical: f64,
    pub histogram: f64,
}

pub fn tv_report(ds: &Dataset, ds2: &Dataset, columns: &[usize], bins: usize) -> Result<TvReport> {
    let edges = histogram_edges(ds, ds2, columns, bins)?;
    Ok(TvReport {
        columns: columns.to_vec(),
        bins,
        empirical: empirical_tv_distance(ds, ds2, columns)?,
        histogram: histogram_tv_distance(ds, ds2, columns, &edges)?,
    })
}
