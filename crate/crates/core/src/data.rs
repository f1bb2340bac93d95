//! Dataset ingestion, k-means partitioning across clients and synthetic
//! heterogeneous instances.

use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::problem::{ClientDataset, Label, LabeledPoint};
use crate::rng::{substream, Stream};

/// Feature matrix with ±1 labels; missing cells already imputed.
#[derive(Debug, Clone, PartialEq)]
pub struct RawDataset {
    feature_names: Vec<String>,
    rows: Vec<Vec<f64>>,
    labels: Vec<Label>,
    imputed: usize,
}

impl RawDataset {
    pub fn new(
        feature_names: Vec<String>,
        rows: Vec<Vec<f64>>,
        labels: Vec<Label>,
    ) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::invalid(format!(
                "{} rows but {} labels",
                rows.len(),
                labels.len()
            )));
        }
        let d = feature_names.len();
        for (i, r) in rows.iter().enumerate() {
            if r.len() != d {
                return Err(Error::invalid(format!(
                    "row {} has {} features, expected {d}",
                    i + 1,
                    r.len()
                )));
            }
            if !linalg::is_finite(r) {
                return Err(Error::NonFinite(format!("features of row {}", i + 1)));
            }
        }
        Ok(Self {
            feature_names,
            rows,
            labels,
            imputed: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Number of features per row.
    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    /// Number of cells that were filled by mean imputation.
    pub fn imputed_cells(&self) -> usize {
        self.imputed
    }

    /// Copy with every feature column shifted to mean 0 and scaled to unit
    /// (population) standard deviation. Constant columns are only centered.
    pub fn standardized(&self) -> Self {
        let m = self.len() as f64;
        let mut out = self.clone();
        for j in 0..self.dim() {
            let mean = self.rows.iter().map(|r| r[j]).sum::<f64>() / m;
            let var = self.rows.iter().map(|r| (r[j] - mean).powi(2)).sum::<f64>() / m;
            let sd = if var > 0.0 { var.sqrt() } else { 1.0 };
            for r in &mut out.rows {
                r[j] = (r[j] - mean) / sd;
            }
        }
        out
    }

    pub fn point(&self, row: usize) -> Result<LabeledPoint> {
        LabeledPoint::new(self.rows[row].clone(), self.labels[row])
    }

    /// Splits the rows into one dataset per client, in client-id order.
    pub fn client_datasets(&self, partition: &Partition) -> Result<Vec<ClientDataset>> {
        if partition.len() != self.len() {
            return Err(Error::invalid(format!(
                "partition covers {} rows, dataset has {}",
                partition.len(),
                self.len()
            )));
        }
        let mut buckets: Vec<Vec<LabeledPoint>> = vec![Vec::new(); partition.clients()];
        for (row, &client) in partition.assignment().iter().enumerate() {
            buckets[client - 1].push(self.point(row)?);
        }
        buckets
            .into_iter()
            .enumerate()
            .map(|(i, pts)| ClientDataset::new(i + 1, pts))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvOptions {
    pub label_column: String,
    /// Label cell value mapped to +1; every other value maps to -1.
    pub positive_label: String,
    pub missing_marker: String,
    pub drop_columns: Vec<String>,
}

impl CsvOptions {
    pub fn new(label_column: impl Into<String>, positive_label: impl Into<String>) -> Self {
        Self {
            label_column: label_column.into(),
            positive_label: positive_label.into(),
            missing_marker: "?".into(),
            drop_columns: Vec::new(),
        }
    }

    /// Breast Cancer Wisconsin (original): label `class`, malignant code 4
    /// is +1, the sample id is not a feature.
    pub fn wisconsin() -> Self {
        Self {
            drop_columns: vec!["sample_code_number".into()],
            ..Self::new("class", "4")
        }
    }
}

fn same_label(cell: &str, positive: &str) -> bool {
    if cell == positive {
        return true;
    }
    match (cell.parse::<f64>(), positive.parse::<f64>()) {
        (Ok(a), Ok(b)) => a == b,
        _ => false,
    }
}

pub fn load_csv(path: impl AsRef<Path>, options: &CsvOptions) -> Result<RawDataset> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    load_csv_from(file, options)
}

/// Parses a headed CSV. Rows in error messages are 1-based and exclude the
/// header.
pub fn load_csv_from<R: Read>(input: R, options: &CsvOptions) -> Result<RawDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(input);
    let header = rdr.headers()?.clone();
    let label_idx = header
        .iter()
        .position(|h| h == options.label_column)
        .ok_or_else(|| Error::Parse {
            row: 0,
            column: options.label_column.clone(),
            message: "label column not found in header".into(),
        })?;
    for drop in &options.drop_columns {
        if !header.iter().any(|h| h == drop) {
            return Err(Error::Parse {
                row: 0,
                column: drop.clone(),
                message: "column to drop not found in header".into(),
            });
        }
    }
    let feature_cols: Vec<usize> = (0..header.len())
        .filter(|&i| i != label_idx && !options.drop_columns.iter().any(|d| d == &header[i]))
        .collect();
    let names: Vec<String> = feature_cols
        .iter()
        .map(|&i| header[i].to_string())
        .collect();

    let mut cells: Vec<Vec<Option<f64>>> = Vec::new();
    let mut labels = Vec::new();
    for (r, record) in rdr.records().enumerate() {
        let row = r + 1;
        let record = record?;
        let label = record.get(label_idx).unwrap_or("");
        if label.is_empty() || label == options.missing_marker {
            return Err(Error::Parse {
                row,
                column: options.label_column.clone(),
                message: "missing label".into(),
            });
        }
        labels.push(if same_label(label, &options.positive_label) {
            Label::Positive
        } else {
            Label::Negative
        });
        let mut parsed = Vec::with_capacity(feature_cols.len());
        for (&c, name) in feature_cols.iter().zip(&names) {
            let cell = record.get(c).unwrap_or("");
            if cell == options.missing_marker {
                parsed.push(None);
                continue;
            }
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                row,
                column: name.clone(),
                message: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    row,
                    column: name.clone(),
                    message: format!("`{cell}` is not finite"),
                });
            }
            parsed.push(Some(v));
        }
        cells.push(parsed);
    }

    let mut means = Vec::with_capacity(names.len());
    for (j, name) in names.iter().enumerate() {
        let present: Vec<f64> = cells.iter().filter_map(|r| r[j]).collect();
        if present.is_empty() {
            return Err(Error::Parse {
                row: cells.len(),
                column: name.clone(),
                message: "every cell in the column is missing".into(),
            });
        }
        means.push(present.iter().sum::<f64>() / present.len() as f64);
    }
    let mut imputed = 0;
    let rows = cells
        .into_iter()
        .map(|r| {
            r.into_iter()
                .zip(&means)
                .map(|(c, &mean)| {
                    c.unwrap_or_else(|| {
                        imputed += 1;
                        mean
                    })
                })
                .collect()
        })
        .collect();
    let mut ds = RawDataset::new(names, rows, labels)?;
    ds.imputed = imputed;
    Ok(ds)
}

pub fn load_wisconsin(path: impl AsRef<Path>) -> Result<RawDataset> {
    load_csv(path, &CsvOptions::wisconsin())
}

/// Row-to-client assignment with one-based client ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    assignment: Vec<usize>,
    clients: usize,
}

impl Partition {
    /// Every client must own at least one row.
    pub fn new(assignment: Vec<usize>, clients: usize) -> Result<Self> {
        if clients == 0 {
            return Err(Error::invalid("a partition needs at least one client"));
        }
        if let Some((row, &c)) = assignment
            .iter()
            .enumerate()
            .find(|(_, &c)| c == 0 || c > clients)
        {
            return Err(Error::invalid(format!(
                "row {row} assigned to client {c}, outside 1..={clients}"
            )));
        }
        let p = Self {
            assignment,
            clients,
        };
        if let Some(empty) = p.sizes().iter().position(|&s| s == 0) {
            return Err(Error::invalid(format!("client {} has no rows", empty + 1)));
        }
        Ok(p)
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn clients(&self) -> usize {
        self.clients
    }

    /// Number of rows covered.
    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![0; self.clients];
        for &c in &self.assignment {
            s[c - 1] += 1;
        }
        s
    }

    /// Rows owned by `client` (one-based), ascending.
    pub fn members(&self, client: usize) -> Vec<usize> {
        (0..self.len())
            .filter(|&r| self.assignment[r] == client)
            .collect()
    }

    /// `row_index,client_id` with zero-based rows.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["row_index", "client_id"])?;
        for (row, c) in self.assignment.iter().enumerate() {
            w.write_record([row.to_string(), c.to_string()])?;
        }
        w.flush().map_err(|e| Error::Io {
            path: "<partition>".into(),
            source: e,
        })
    }

    pub fn read_csv<R: Read>(input: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(input);
        let mut pairs: Vec<(usize, usize)> = Vec::new();
        for rec in rdr.deserialize() {
            pairs.push(rec?);
        }
        pairs.sort_unstable();
        if pairs.iter().enumerate().any(|(i, &(r, _))| r != i) {
            return Err(Error::invalid(
                "partition rows must be 0..m, each exactly once",
            ));
        }
        let clients = pairs.iter().map(|p| p.1).max().unwrap_or(0);
        Self::new(pairs.into_iter().map(|p| p.1).collect(), clients)
    }
}

/// Lloyd iterations from a k-means++ start.
#[derive(Debug, Clone)]
pub struct KMeans {
    /// Zero-based cluster per point.
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    /// Within-cluster sum of squares after each centroid update.
    pub wcss: Vec<f64>,
    pub converged: bool,
}

fn nearest(point: &[f64], centroids: &[Vec<f64>]) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (c, centroid) in centroids.iter().enumerate() {
        let d = linalg::dist_sq(point, centroid);
        if d < best_d {
            best = c;
            best_d = d;
        }
    }
    best
}

fn wcss(points: &[Vec<f64>], labels: &[usize], centroids: &[Vec<f64>]) -> f64 {
    points
        .iter()
        .zip(labels)
        .map(|(p, &l)| linalg::dist_sq(p, &centroids[l]))
        .sum()
}

fn kmeans_plus_plus(points: &[Vec<f64>], k: usize, rng: &mut Stream) -> Vec<Vec<f64>> {
    let m = points.len();
    let mut centroids = vec![points[rng.random_range(0..m)].clone()];
    let mut d2: Vec<f64> = points
        .iter()
        .map(|p| linalg::dist_sq(p, &centroids[0]))
        .collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = None;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if w > 0.0 && acc > target {
                    chosen = Some(i);
                    break;
                }
            }
            // rounding can leave `target` just above the final sum
            chosen.unwrap_or_else(|| d2.iter().rposition(|&w| w > 0.0).unwrap_or(0))
        } else {
            rng.random_range(0..m)
        };
        let c = points[pick].clone();
        for (i, p) in points.iter().enumerate() {
            d2[i] = d2[i].min(linalg::dist_sq(p, &c));
        }
        centroids.push(c);
    }
    centroids
}

/// Moves the farthest point of the largest cluster into each empty one.
fn repair_empty(points: &[Vec<f64>], labels: &mut [usize], centroids: &mut [Vec<f64>]) {
    let k = centroids.len();
    loop {
        let mut sizes = vec![0usize; k];
        for &l in labels.iter() {
            sizes[l] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else {
            return;
        };
        let largest = (0..k).fold(0, |b, c| if sizes[c] > sizes[b] { c } else { b });
        let mut far = None;
        let mut far_d = -1.0;
        for (i, p) in points.iter().enumerate() {
            if labels[i] == largest {
                let d = linalg::dist_sq(p, &centroids[largest]);
                if d > far_d {
                    far = Some(i);
                    far_d = d;
                }
            }
        }
        let i = far.expect("largest cluster is non-empty");
        labels[i] = empty;
        centroids[empty] = points[i].clone();
    }
}

fn update_centroids(points: &[Vec<f64>], labels: &[usize], centroids: &mut [Vec<f64>]) {
    let d = points[0].len();
    let k = centroids.len();
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        linalg::axpy(1.0, p, &mut sums[l]);
        counts[l] += 1;
    }
    for c in 0..k {
        if counts[c] > 0 {
            linalg::scale(1.0 / counts[c] as f64, &mut sums[c]);
            centroids[c] = std::mem::take(&mut sums[c]);
        }
    }
}

pub fn kmeans(points: &[Vec<f64>], k: usize, max_iters: usize, rng: &mut Stream) -> Result<KMeans> {
    if k == 0 {
        return Err(Error::invalid("k must be at least 1"));
    }
    if k > points.len() {
        return Err(Error::invalid(format!(
            "cannot form {k} clusters from {} points",
            points.len()
        )));
    }
    let mut centroids = kmeans_plus_plus(points, k, rng);
    let mut labels: Vec<usize> = Vec::new();
    let mut trace = Vec::new();
    let mut converged = false;
    for _ in 0..max_iters.max(1) {
        let mut next: Vec<usize> = points.iter().map(|p| nearest(p, &centroids)).collect();
        repair_empty(points, &mut next, &mut centroids);
        if next == labels {
            converged = true;
            break;
        }
        labels = next;
        update_centroids(points, &labels, &mut centroids);
        let w = wcss(points, &labels, &centroids);
        if let Some(&prev) = trace.last() {
            debug_assert!(
                w <= prev * (1.0 + 1e-12) + 1e-12,
                "WCSS increased: {prev} -> {w}"
            );
        }
        trace.push(w);
    }
    Ok(KMeans {
        labels,
        centroids,
        wcss: trace,
        converged,
    })
}

/// Clusters the rows into `n` groups and uses cluster `c` as client `c + 1`.
pub fn kmeans_partition(
    dataset: &RawDataset,
    n: usize,
    seed: u64,
    max_iters: usize,
) -> Result<Partition> {
    if n > dataset.len() {
        return Err(Error::invalid(format!(
            "{n} clients requested for {} rows",
            dataset.len()
        )));
    }
    let mut rng = substream(seed, 0);
    let km = kmeans(dataset.rows(), n, max_iters, &mut rng)?;
    Partition::new(km.labels.iter().map(|l| l + 1).collect(), n)
}

/// Two Gaussian blobs (unit variance) at `±separation/2` along the first
/// axis, `+1` labels at the positive end.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoCluster {
    pub dataset: RawDataset,
    pub centers: [Vec<f64>; 2],
    /// Blob (0 = positive, 1 = negative) of every row.
    pub blob: Vec<usize>,
}

impl TwoCluster {
    /// Maximally heterogeneous split: the first `ceil(n/2)` clients share the
    /// positive blob round-robin, the rest share the negative blob.
    pub fn blob_partition(&self, n: usize) -> Result<Partition> {
        if n < 2 {
            return Err(Error::invalid(
                "a blob partition needs at least two clients",
            ));
        }
        let groups = [n.div_ceil(2), n / 2];
        let offset = [0, groups[0]];
        let mut seen = [0usize; 2];
        let assignment = self
            .blob
            .iter()
            .map(|&b| {
                let c = offset[b] + seen[b] % groups[b] + 1;
                seen[b] += 1;
                c
            })
            .collect();
        Partition::new(assignment, n)
    }
}

pub fn synthetic_two_cluster(
    d: usize,
    per_cluster_m: usize,
    separation: f64,
    seed: u64,
) -> Result<TwoCluster> {
    if d == 0 || per_cluster_m == 0 {
        return Err(Error::invalid(
            "dimension and cluster size must be positive",
        ));
    }
    if !(separation >= 0.0 && separation.is_finite()) {
        return Err(Error::invalid("separation must be finite and non-negative"));
    }
    let mut rng = substream(seed, 0);
    let mut centers = [vec![0.0; d], vec![0.0; d]];
    centers[0][0] = separation / 2.0;
    centers[1][0] = -separation / 2.0;
    let mut rows = Vec::with_capacity(2 * per_cluster_m);
    let mut labels = Vec::with_capacity(2 * per_cluster_m);
    let mut blob = Vec::with_capacity(2 * per_cluster_m);
    for (b, label) in [(0, Label::Positive), (1, Label::Negative)] {
        for _ in 0..per_cluster_m {
            let row: Vec<f64> = centers[b]
                .iter()
                .map(|c| c + rng.sample::<f64, _>(StandardNormal))
                .collect();
            rows.push(row);
            labels.push(label);
            blob.push(b);
        }
    }
    let names = (1..=d).map(|j| format!("x{j}")).collect();
    Ok(TwoCluster {
        dataset: RawDataset::new(names, rows, labels)?,
        centers,
        blob,
    })
}
