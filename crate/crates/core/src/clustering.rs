//! Equal-size k-means over constellation points and the label equalization
//! operator built from the resulting clusters.

use std::io::Write;

use ndarray::{Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, WiretapError};

const MAX_ITERATIONS: usize = 100;
const RESTARTS: usize = 10;

/// A balanced partition of the message set.
///
/// Labels are canonical: cluster 0 has the lexicographically smallest center
/// (first coordinate, then second, ...).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterAssignment {
    labels: Vec<usize>,
    centers: Array2<f64>,
    cluster_size: usize,
}

impl ClusterAssignment {
    /// Builds an assignment from explicit labels, computing centers as member
    /// means. Labels are used as given (no canonical reordering).
    pub fn from_labels(points: ArrayView2<f64>, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != points.nrows() {
            return Err(WiretapError::shape(
                "cluster labels",
                points.nrows(),
                labels.len(),
            ));
        }
        let clusters = labels.iter().max().map_or(0, |m| m + 1);
        let mut counts = vec![0usize; clusters];
        for &l in &labels {
            counts[l] += 1;
        }
        let cluster_size = counts.first().copied().unwrap_or(0);
        if clusters == 0 || counts.iter().any(|&c| c != cluster_size) {
            return Err(WiretapError::Input(format!(
                "cluster sizes must all be equal and non-zero, got {counts:?}"
            )));
        }
        let centers = member_means(points, &labels, clusters);
        Ok(ClusterAssignment {
            labels,
            centers,
            cluster_size,
        })
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn centers(&self) -> &Array2<f64> {
        &self.centers
    }

    pub fn cluster_count(&self) -> usize {
        self.centers.nrows()
    }

    /// Number of members in every cluster.
    pub fn cluster_size(&self) -> usize {
        self.cluster_size
    }

    pub fn message_count(&self) -> usize {
        self.labels.len()
    }

    /// Member indices of each cluster, in ascending order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::with_capacity(self.cluster_size); self.cluster_count()];
        for (i, &l) in self.labels.iter().enumerate() {
            out[l].push(i);
        }
        out
    }

    /// Sum of squared distances from each point to its cluster center.
    pub fn cost(&self, points: ArrayView2<f64>) -> f64 {
        assignment_cost(points, &self.labels, self.centers.view())
    }

    /// Writes `message_index,cluster_label` rows.
    pub fn write_labels_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "message_index,cluster_label")?;
        for (i, l) in self.labels.iter().enumerate() {
            writeln!(out, "{i},{l}")?;
        }
        Ok(())
    }

    /// Writes `cluster_label,c_1,...,c_n` rows.
    pub fn write_centers_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let header: Vec<String> = (1..=self.centers.ncols()).map(|i| format!("c_{i}")).collect();
        writeln!(out, "cluster_label,{}", header.join(","))?;
        for (l, row) in self.centers.rows().into_iter().enumerate() {
            let values: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{l},{}", values.join(","))?;
        }
        Ok(())
    }
}

fn squared_distance(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).powi(2)).sum()
}

fn member_means(points: ArrayView2<f64>, labels: &[usize], clusters: usize) -> Array2<f64> {
    let mut centers = Array2::zeros((clusters, points.ncols()));
    let mut counts = vec![0usize; clusters];
    for (p, &l) in points.rows().into_iter().zip(labels) {
        let mut c = centers.row_mut(l);
        c += &p;
        counts[l] += 1;
    }
    for (mut c, &n) in centers.rows_mut().into_iter().zip(&counts) {
        if n > 0 {
            c /= n as f64;
        }
    }
    centers
}

fn assignment_cost(points: ArrayView2<f64>, labels: &[usize], centers: ArrayView2<f64>) -> f64 {
    points
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(p, &l)| squared_distance(p, centers.row(l)))
        .sum()
}

fn kmeans_plus_plus<R: Rng + ?Sized>(
    points: ArrayView2<f64>,
    clusters: usize,
    rng: &mut R,
) -> Array2<f64> {
    let m = points.nrows();
    let mut chosen = vec![rng.random_range(0..m)];
    let mut nearest: Vec<f64> = points
        .rows()
        .into_iter()
        .map(|p| squared_distance(p, points.row(chosen[0])))
        .collect();
    while chosen.len() < clusters {
        let total: f64 = nearest.iter().sum();
        let next = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut pick = m - 1;
            for (i, &d) in nearest.iter().enumerate() {
                if d > 0.0 && target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        } else {
            // All remaining points coincide with chosen centers.
            (0..m).find(|i| !chosen.contains(i)).unwrap_or(0)
        };
        chosen.push(next);
        for (i, p) in points.rows().into_iter().enumerate() {
            nearest[i] = nearest[i].min(squared_distance(p, points.row(next)));
        }
    }
    points.select(Axis(0), &chosen)
}

/// Greedy balanced assignment: points with the largest gap between their
/// nearest and second-nearest center choose first, each taking its nearest
/// cluster that still has room.
fn balanced_assign(points: ArrayView2<f64>, centers: ArrayView2<f64>, capacity: usize) -> Vec<usize> {
    let m = points.nrows();
    let l = centers.nrows();
    let distances: Vec<Vec<f64>> = points
        .rows()
        .into_iter()
        .map(|p| centers.rows().into_iter().map(|c| squared_distance(p, c)).collect())
        .collect();
    let priority = |d: &[f64]| {
        let mut sorted = d.to_vec();
        sorted.sort_by(f64::total_cmp);
        if sorted.len() > 1 {
            sorted[0] - sorted[1]
        } else {
            0.0
        }
    };
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| priority(&distances[a]).total_cmp(&priority(&distances[b])));

    let mut fill = vec![0usize; l];
    let mut labels = vec![0usize; m];
    for i in order {
        let best = (0..l)
            .filter(|&c| fill[c] < capacity)
            .min_by(|&a, &b| distances[i][a].total_cmp(&distances[i][b]))
            .expect("capacity covers every point");
        fill[best] += 1;
        labels[i] = best;
    }
    labels
}

/// Pairwise exchanges between clusters while any exchange lowers the cost
/// against the current centers.
fn refine_by_swaps(points: ArrayView2<f64>, centers: ArrayView2<f64>, labels: &mut [usize]) {
    let m = points.nrows();
    let d = |i: usize, c: usize| squared_distance(points.row(i), centers.row(c));
    for _ in 0..m * m {
        let mut improved = false;
        for i in 0..m {
            for j in (i + 1)..m {
                let (li, lj) = (labels[i], labels[j]);
                if li == lj {
                    continue;
                }
                let delta = d(i, lj) + d(j, li) - d(i, li) - d(j, lj);
                if delta < -1e-12 {
                    labels.swap(i, j);
                    improved = true;
                }
            }
        }
        if !improved {
            break;
        }
    }
}

fn single_run<R: Rng + ?Sized>(
    points: ArrayView2<f64>,
    clusters: usize,
    rng: &mut R,
) -> (Vec<usize>, Array2<f64>) {
    let capacity = points.nrows() / clusters;
    let mut centers = kmeans_plus_plus(points, clusters, rng);
    let mut labels = balanced_assign(points, centers.view(), capacity);
    for _ in 0..MAX_ITERATIONS {
        refine_by_swaps(points, centers.view(), &mut labels);
        centers = member_means(points, &labels, clusters);
        let mut next = balanced_assign(points, centers.view(), capacity);
        refine_by_swaps(points, centers.view(), &mut next);
        let next_cost = assignment_cost(points, &next, centers.view());
        let cost = assignment_cost(points, &labels, centers.view());
        if next == labels || next_cost >= cost - 1e-12 {
            break;
        }
        labels = next;
    }
    centers = member_means(points, &labels, clusters);
    (labels, centers)
}

/// Equal-size k-means: partitions `points` (one per row) into `clusters`
/// groups of exactly `points.nrows() / clusters` members.
pub fn balanced_kmeans<R: Rng + ?Sized>(
    points: ArrayView2<f64>,
    clusters: usize,
    rng: &mut R,
) -> Result<ClusterAssignment> {
    let m = points.nrows();
    if clusters == 0 || clusters > m || !m.is_multiple_of(clusters) {
        return Err(WiretapError::Parameter(format!(
            "cluster count {clusters} must divide the number of points {m}"
        )));
    }
    if points.iter().any(|v| !v.is_finite()) {
        return Err(WiretapError::Numeric("non-finite constellation point".into()));
    }

    let mut best: Option<(f64, Vec<usize>, Array2<f64>)> = None;
    for _ in 0..RESTARTS {
        let (labels, centers) = single_run(points, clusters, rng);
        let cost = assignment_cost(points, &labels, centers.view());
        if best.as_ref().is_none_or(|(c, _, _)| cost < *c - 1e-12) {
            best = Some((cost, labels, centers));
        }
    }
    let (_, labels, centers) = best.expect("at least one restart");
    Ok(canonical(labels, centers, m / clusters))
}

fn canonical(labels: Vec<usize>, centers: Array2<f64>, cluster_size: usize) -> ClusterAssignment {
    let mut order: Vec<usize> = (0..centers.nrows()).collect();
    order.sort_by(|&a, &b| {
        centers
            .row(a)
            .iter()
            .zip(centers.row(b).iter())
            .map(|(x, y)| x.total_cmp(y))
            .find(|o| o.is_ne())
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let mut rename = vec![0usize; order.len()];
    for (new, &old) in order.iter().enumerate() {
        rename[old] = new;
    }
    ClusterAssignment {
        labels: labels.into_iter().map(|l| rename[l]).collect(),
        centers: centers.select(Axis(0), &order),
        cluster_size,
    }
}

/// Operator mapping one-hot labels to the uniform distribution over the
/// label's cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EqualizationMatrix {
    matrix: Array2<f64>,
}

impl EqualizationMatrix {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.matrix
    }

    pub fn size(&self) -> usize {
        self.matrix.nrows()
    }
}

/// `E[i][k] = 1 / n_c` when messages `i` and `k` share a cluster, else 0.
pub fn build_equalization(assignment: &ClusterAssignment) -> EqualizationMatrix {
    let m = assignment.message_count();
    let labels = assignment.labels();
    let weight = 1.0 / assignment.cluster_size() as f64;
    let mut matrix = Array2::zeros((m, m));
    for j in 0..assignment.cluster_count() {
        for i in 0..m {
            if labels[i] == j {
                for k in 0..m {
                    if labels[k] == j {
                        matrix[[i, k]] = weight;
                    }
                }
            }
        }
    }
    EqualizationMatrix { matrix }
}

/// `S E`: replaces each label row by its cluster-uniform distribution.
pub fn equalize(labels: ArrayView2<f64>, equalization: &EqualizationMatrix) -> Result<Array2<f64>> {
    if labels.ncols() != equalization.size() {
        return Err(WiretapError::shape(
            "equalize",
            format!("{} columns", equalization.size()),
            format!("{} columns", labels.ncols()),
        ));
    }
    Ok(labels.dot(&equalization.matrix))
}

/// Mean Euclidean distance over all pairs of points that share a cluster.
pub fn mean_within_cluster_distance(points: ArrayView2<f64>, assignment: &ClusterAssignment) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for members in assignment.members() {
        for (a, &i) in members.iter().enumerate() {
            for &j in &members[a + 1..] {
                total += squared_distance(points.row(i), points.row(j)).sqrt();
                pairs += 1;
            }
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

/// Mean distance between the member means of distinct clusters.
pub fn mean_between_center_distance(points: ArrayView2<f64>, assignment: &ClusterAssignment) -> f64 {
    let centers = member_means(points, assignment.labels(), assignment.cluster_count());
    let l = centers.nrows();
    let mut total = 0.0;
    let mut pairs = 0usize;
    for a in 0..l {
        for b in (a + 1)..l {
            total += squared_distance(centers.row(a), centers.row(b)).sqrt();
            pairs += 1;
        }
    }
    if pairs == 0 {
        0.0
    } else {
        total / pairs as f64
    }
}

/// Within-cluster distance relative to between-cluster distance; smaller
/// means tighter, better separated clusters.
pub fn dispersion_ratio(points: ArrayView2<f64>, assignment: &ClusterAssignment) -> f64 {
    mean_within_cluster_distance(points, assignment) / mean_between_center_distance(points, assignment)
}
