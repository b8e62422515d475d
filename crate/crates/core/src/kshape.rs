//! K-shape clustering: SBD assignment alternating with eigenvector-based
//! shape extraction, plus the squared-SBD distance summaries.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eigen::{principal_eigenvector_from, SquareMatrix};
use crate::error::{invalid, Error, Result};
use crate::series::{sbd, shift_values, znormalize_values, NormalizedSeries};

pub const DEFAULT_MAX_ITERATIONS: usize = 100;

/// Objective increase tolerated before an iteration is rolled back.
pub const OBJECTIVE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Uniform random membership draw, zero centroids.
    RandomPartition,
    /// Start from caller-supplied centroids.
    WarmStart,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KShapeConfig {
    pub cluster_count: usize,
    pub max_iterations: usize,
    pub rng_seed: u64,
    pub init_mode: InitMode,
}

impl KShapeConfig {
    pub fn new(cluster_count: usize) -> Self {
        Self {
            cluster_count,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            rng_seed: 0,
            init_mode: InitMode::RandomPartition,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.rng_seed = seed;
        self
    }

    pub fn with_max_iterations(mut self, max_iterations: usize) -> Self {
        self.max_iterations = max_iterations;
        self
    }

    pub fn with_init(mut self, init_mode: InitMode) -> Self {
        self.init_mode = init_mode;
        self
    }
}

/// Result of one clustering run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub centroids: Vec<NormalizedSeries>,
    pub memberships: Vec<usize>,
    /// Mean squared SBD of each cluster's members to its centroid.
    pub per_cluster_distance: Vec<f64>,
    /// Mean over all series of the squared SBD to the closest centroid.
    pub total_distance: f64,
    pub iterations_used: usize,
    /// Memberships stopped changing. False when the iteration cap was hit or
    /// an iteration was rolled back for raising the objective.
    pub converged: bool,
    /// `total_distance` after every (update, assign) pair.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub objective_trace: Vec<f64>,
}

impl ClusterModel {
    pub fn cluster_count(&self) -> usize {
        self.centroids.len()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.centroids.len()];
        for &j in &self.memberships {
            sizes[j] += 1;
        }
        sizes
    }
}

fn check_lengths(series: &[NormalizedSeries], centroids: &[NormalizedSeries]) -> Result<usize> {
    let m = series.first().or(centroids.first()).map(|s| s.len()).unwrap_or(0);
    if series.iter().chain(centroids).any(|s| s.len() != m) {
        return Err(invalid("all series and centroids must have the same length"));
    }
    Ok(m)
}

/// Assigns every series to its closest centroid under SBD. Returns the
/// memberships and each series' SBD to its assigned centroid. Ties go to the
/// lowest cluster index.
pub fn assign(
    series: &[NormalizedSeries],
    centroids: &[NormalizedSeries],
) -> Result<(Vec<usize>, Vec<f64>)> {
    if centroids.is_empty() {
        return Err(invalid("no centroids to assign to"));
    }
    check_lengths(series, centroids)?;
    let mut memberships = Vec::with_capacity(series.len());
    let mut distances = Vec::with_capacity(series.len());
    for s in series {
        let mut best = (0, f64::INFINITY);
        for (j, c) in centroids.iter().enumerate() {
            let d = sbd(c, s)?.distance;
            if d < best.1 {
                best = (j, d);
            }
        }
        memberships.push(best.0);
        distances.push(best.1);
    }
    Ok((memberships, distances))
}

/// New centroid for a cluster: members are aligned to `current_centroid` at
/// their best SBD lag, and the centroid is the dominant eigenvector of the
/// centered scatter matrix of the aligned members.
pub fn extract_shape(
    members: &[NormalizedSeries],
    current_centroid: &NormalizedSeries,
) -> Result<NormalizedSeries> {
    let refs: Vec<&NormalizedSeries> = members.iter().collect();
    extract_shape_refs(&refs, current_centroid)
}

pub(crate) fn extract_shape_refs(
    members: &[&NormalizedSeries],
    current: &NormalizedSeries,
) -> Result<NormalizedSeries> {
    if members.is_empty() {
        return Err(Error::EmptyCluster);
    }
    let m = current.len();
    if members.iter().any(|s| s.len() != m) {
        return Err(invalid("members and centroid must have the same length"));
    }
    let reference_is_zero = current.is_zero();

    let aligned: Vec<Vec<f64>> = members
        .iter()
        .map(|s| {
            if reference_is_zero {
                Ok(s.values().to_vec())
            } else {
                shift_values(s.values(), sbd(current, s)?.best_lag)
            }
        })
        .collect::<Result<_>>()?;

    // S = sum a a^T, then M = Q S Q with Q = I - 11^T / m.
    let mut scatter = SquareMatrix::zeros(m);
    for a in &aligned {
        for i in 0..m {
            if a[i] == 0.0 {
                continue;
            }
            for j in 0..m {
                scatter.add(i, j, a[i] * a[j]);
            }
        }
    }
    let row_mean: Vec<f64> =
        (0..m).map(|i| (0..m).map(|j| scatter.get(i, j)).sum::<f64>() / m as f64).collect();
    let grand_mean = row_mean.iter().sum::<f64>() / m as f64;
    let mut centered = SquareMatrix::zeros(m);
    for i in 0..m {
        for j in 0..m {
            centered.set(i, j, scatter.get(i, j) - row_mean[i] - row_mean[j] + grand_mean);
        }
    }
    if centered.frobenius_norm() <= 1e-12 {
        return Ok(NormalizedSeries::zeros(m, current.channel_id));
    }

    let pair = principal_eigenvector_from(&centered, current.values())?;
    let plus = znormalize_values(&pair.vector);
    let minus: Vec<f64> = plus.iter().map(|v| -v).collect();

    let pick_plus = {
        let tie_break = || {
            let score: f64 = aligned.iter().map(|a| a.iter().zip(&plus).map(|(x, y)| x * y).sum::<f64>()).sum();
            score >= 0.0
        };
        if reference_is_zero {
            tie_break()
        } else {
            let cur = current.values();
            let dp = crate::series::sbd_values(cur, &plus)?.distance;
            let dm = crate::series::sbd_values(cur, &minus)?.distance;
            if (dp - dm).abs() <= 1e-12 {
                tie_break()
            } else {
                dp < dm
            }
        }
    };
    let values = if pick_plus { plus } else { minus };
    Ok(NormalizedSeries::from_normalized(values, current.channel_id))
}

/// Mean over series of the squared SBD to the closest centroid.
pub fn total_distance(series: &[NormalizedSeries], centroids: &[NormalizedSeries]) -> Result<f64> {
    if series.is_empty() {
        return Err(invalid("no series"));
    }
    let (_, d) = assign(series, centroids)?;
    Ok(d.iter().map(|x| x * x).sum::<f64>() / series.len() as f64)
}

/// Mean squared SBD of each cluster's members to that cluster's centroid.
/// Empty clusters report 0.
pub fn per_cluster_distance(
    series: &[NormalizedSeries],
    memberships: &[usize],
    centroids: &[NormalizedSeries],
) -> Result<Vec<f64>> {
    if series.len() != memberships.len() {
        return Err(invalid("memberships must have one entry per series"));
    }
    check_lengths(series, centroids)?;
    let c = centroids.len();
    let mut sums = vec![0.0; c];
    let mut counts = vec![0usize; c];
    for (s, &j) in series.iter().zip(memberships) {
        if j >= c {
            return Err(invalid(format!("membership {j} out of range for {c} clusters")));
        }
        let d = sbd(&centroids[j], s)?.distance;
        sums[j] += d * d;
        counts[j] += 1;
    }
    Ok(sums.iter().zip(&counts).map(|(s, &n)| if n == 0 { 0.0 } else { s / n as f64 }).collect())
}

/// Runs K-shape. `warm_centroids` is required for [`InitMode::WarmStart`]
/// and ignored otherwise.
pub fn fit(
    series: &[NormalizedSeries],
    config: &KShapeConfig,
    warm_centroids: Option<&[NormalizedSeries]>,
) -> Result<ClusterModel> {
    let n = series.len();
    let c = config.cluster_count;
    if c == 0 {
        return Err(invalid("cluster_count must be positive"));
    }
    if n < c {
        return Err(invalid(format!("{n} series cannot form {c} clusters")));
    }
    if config.max_iterations == 0 {
        return Err(invalid("max_iterations must be positive"));
    }
    let m = check_lengths(series, &[])?;
    if m < 2 {
        return Err(invalid("series need at least 2 samples"));
    }

    let (mut memberships, mut point_dist, mut centroids) = match config.init_mode {
        InitMode::RandomPartition => {
            let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
            let mut mem: Vec<usize> = (0..n).map(|_| rng.random_range(0..c)).collect();
            fill_empty_clusters(&mut mem, c, &mut rng);
            (mem, vec![f64::INFINITY; n], vec![NormalizedSeries::zeros(m, 0); c])
        }
        InitMode::WarmStart => {
            let warm = warm_centroids.ok_or_else(|| invalid("warm start requires centroids"))?;
            if warm.len() != c {
                return Err(invalid(format!("expected {c} warm centroids, got {}", warm.len())));
            }
            check_lengths(series, warm)?;
            let (mem, d) = assign(series, warm)?;
            (mem, d, warm.to_vec())
        }
    };
    for (j, cen) in centroids.iter_mut().enumerate() {
        cen.channel_id = j;
    }

    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut iterations_used = 0;
    // A random partition is not an assignment, so it cannot confirm
    // convergence.
    let mut assigned = config.init_mode == InitMode::WarmStart;
    for _ in 0..config.max_iterations {
        iterations_used += 1;
        let previous = (memberships.clone(), point_dist.clone(), centroids.clone());

        reseed_empty_clusters(series, &mut memberships, &point_dist, &mut centroids);
        for (j, centroid) in centroids.iter_mut().enumerate() {
            let members: Vec<&NormalizedSeries> =
                series.iter().zip(&memberships).filter(|(_, &k)| k == j).map(|(s, _)| s).collect();
            if members.is_empty() {
                continue;
            }
            let mut next = extract_shape_refs(&members, centroid)?;
            next.channel_id = j;
            *centroid = next;
        }

        let (mem, d) = assign(series, &centroids)?;
        let objective = d.iter().map(|x| x * x).sum::<f64>() / n as f64;
        // The centroid step maximizes squared correlation rather than
        // minimizing squared SBD, so it can occasionally make things worse.
        // Keep the previous state and stop when it does.
        if trace.last().is_some_and(|&last| objective > last + OBJECTIVE_SLACK) {
            (memberships, point_dist, centroids) = previous;
            break;
        }
        let unchanged = assigned && mem == previous.0;
        memberships = mem;
        point_dist = d;
        assigned = true;
        trace.push(objective);
        if unchanged {
            converged = true;
            break;
        }
    }

    let per_cluster = per_cluster_distance(series, &memberships, &centroids)?;
    let total = point_dist.iter().map(|x| x * x).sum::<f64>() / n as f64;
    Ok(ClusterModel {
        centroids,
        memberships,
        per_cluster_distance: per_cluster,
        total_distance: total,
        iterations_used,
        converged,
        objective_trace: trace,
    })
}

fn fill_empty_clusters(mem: &mut [usize], c: usize, rng: &mut ChaCha8Rng) {
    loop {
        let mut sizes = vec![0usize; c];
        for &j in mem.iter() {
            sizes[j] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else { return };
        let donors: Vec<usize> = (0..mem.len()).filter(|&i| sizes[mem[i]] > 1).collect();
        let pick = donors[rng.random_range(0..donors.len())];
        mem[pick] = empty;
    }
}

/// Moves the worst-fit series (largest distance to its centroid, taken from a
/// cluster that keeps at least one member) into each empty cluster.
fn reseed_empty_clusters(
    series: &[NormalizedSeries],
    memberships: &mut [usize],
    point_dist: &[f64],
    centroids: &mut [NormalizedSeries],
) {
    let c = centroids.len();
    loop {
        let mut sizes = vec![0usize; c];
        for &j in memberships.iter() {
            sizes[j] += 1;
        }
        let Some(empty) = sizes.iter().position(|&s| s == 0) else { return };
        let worst = (0..series.len())
            .filter(|&i| sizes[memberships[i]] > 1)
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if point_dist[b] >= point_dist[i] => Some(b),
                _ => Some(i),
            })
            .expect("n >= c guarantees a donor cluster");
        memberships[worst] = empty;
        centroids[empty] = NormalizedSeries::from_normalized(series[worst].values().to_vec(), empty);
    }
}

/// Pairwise SBD matrix.
pub fn sbd_matrix(series: &[NormalizedSeries]) -> Result<Vec<Vec<f64>>> {
    let n = series.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in (i + 1)..n {
            let v = sbd(&series[i], &series[j])?.distance;
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    Ok(d)
}

/// Mean silhouette of a partition under a precomputed distance matrix.
/// Members of singleton clusters score 0.
pub fn mean_silhouette(distances: &[Vec<f64>], memberships: &[usize], c: usize) -> f64 {
    let n = memberships.len();
    if n == 0 {
        return 0.0;
    }
    let mut sizes = vec![0usize; c];
    for &j in memberships {
        sizes[j] += 1;
    }
    let mut total = 0.0;
    for i in 0..n {
        let own = memberships[i];
        if sizes[own] <= 1 {
            continue;
        }
        let mut sums = vec![0.0; c];
        for k in 0..n {
            if k != i {
                sums[memberships[k]] += distances[i][k];
            }
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..c)
            .filter(|&j| j != own && sizes[j] > 0)
            .map(|j| sums[j] / sizes[j] as f64)
            .fold(f64::INFINITY, f64::min);
        if !b.is_finite() {
            continue;
        }
        let denom = a.max(b);
        if denom > 0.0 {
            total += (b - a) / denom;
        }
    }
    total / n as f64
}

/// Fits every cluster count in `2..=min(max_clusters, n - 1)` (just 2 when
/// that range is empty) and keeps the one with the best mean silhouette.
/// Ties go to the smaller count.
pub fn select_cluster_count(
    series: &[NormalizedSeries],
    max_clusters: usize,
    seed: u64,
) -> Result<(usize, ClusterModel)> {
    let n = series.len();
    if n < 2 {
        return Err(invalid("at least 2 series are needed to choose a cluster count"));
    }
    let upper = max_clusters.min(n - 1).max(2);
    let distances = sbd_matrix(series)?;
    let mut best: Option<(f64, usize, ClusterModel)> = None;
    for c in 2..=upper {
        let model = fit(series, &KShapeConfig::new(c).with_seed(seed), None)?;
        let score = mean_silhouette(&distances, &model.memberships, c);
        if best.as_ref().map_or(true, |(s, _, _)| score > *s + 1e-12) {
            best = Some((score, c, model));
        }
    }
    let (_, c, model) = best.expect("at least one candidate");
    Ok((c, model))
}
