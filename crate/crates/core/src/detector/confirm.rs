//! Anomaly confirmation and cross-segment label alignment.

use super::{DetectorConfig, DetectorState};
use crate::error::{Error, Result};
use crate::kshape::ClusterModel;
use crate::series::{sbd, NormalizedSeries};

/// Largest cluster count solved by exhaustive permutation search.
const EXACT_MATCH_LIMIT: usize = 7;

/// Clamp to `[0, cap]`.
pub fn sat(ratio: f64, cap: f64) -> f64 {
    if ratio.is_nan() {
        return cap;
    }
    ratio.clamp(0.0, cap)
}

/// Ratio with a guarded denominator: a denominator at or below `epsilon`
/// gives the cap when the numerator is above `epsilon`, and 1 when both are
/// negligible.
fn guarded_ratio(num: f64, den: f64, cfg: &DetectorConfig) -> f64 {
    if den > cfg.epsilon {
        num / den
    } else if num > cfg.epsilon {
        cfg.sat_cap
    } else {
        1.0
    }
}

/// Per-cluster evidence terms that `anomaly_check` sums into `p`.
pub fn evidence_terms(dist_k: &[f64], prev: &[f64], reference: &[f64], cfg: &DetectorConfig) -> Vec<f64> {
    dist_k
        .iter()
        .enumerate()
        .map(|(i, &d)| {
            let to_ref = sat(guarded_ratio(d, reference[i], cfg), cfg.sat_cap);
            if prev[i] > cfg.epsilon {
                (1.0 - cfg.alpha) * sat(d / prev[i], cfg.sat_cap) + cfg.alpha * to_ref
            } else {
                to_ref
            }
        })
        .collect()
}

/// Membership-change test followed by distance-ratio accumulation.
///
/// `mem_k[ch]` is the channel's cluster in this segment, `None` when the
/// channel was excluded; excluded channels in either segment are not
/// compared. Returns `(a, p)`; `p` is 0 whenever `a` is true.
pub fn anomaly_check(
    mem_k: &[Option<usize>],
    dist_k: &[f64],
    state: &DetectorState,
    cfg: &DetectorConfig,
) -> Result<(bool, f64)> {
    let prev = &state.previous;
    let reference = &state.reference;
    if reference.dist0.is_empty() {
        return Err(Error::InvalidState("no reference clustering".into()));
    }
    let c = reference.dist0.len();
    if dist_k.len() != c || prev.dist.len() != c {
        return Err(Error::InvalidState(format!(
            "distance vectors disagree on cluster count: current {}, previous {}, reference {c}",
            dist_k.len(),
            prev.dist.len()
        )));
    }
    let changed = mem_k
        .iter()
        .zip(&prev.memberships)
        .any(|(now, before)| matches!((now, before), (Some(a), Some(b)) if a != b));
    if changed {
        return Ok((true, 0.0));
    }
    let p = evidence_terms(dist_k, &prev.dist, &reference.dist0, cfg).iter().sum();
    Ok((false, p))
}

/// Relabels `new_model` so its clusters line up with `prev_centroids`,
/// minimizing the summed SBD between matched centroids. Memberships and
/// per-cluster distances are permuted with the centroids.
pub fn align_labels(new_model: ClusterModel, prev_centroids: &[NormalizedSeries]) -> Result<ClusterModel> {
    let c = new_model.centroids.len();
    if prev_centroids.len() != c {
        return Err(Error::InvalidInput(format!(
            "cannot align {c} clusters to {} previous centroids",
            prev_centroids.len()
        )));
    }
    let cost = (0..c)
        .map(|j| prev_centroids.iter().map(|p| Ok(sbd(&new_model.centroids[j], p)?.distance)).collect::<Result<Vec<f64>>>())
        .collect::<Result<Vec<_>>>()?;
    let perm = if c <= EXACT_MATCH_LIMIT { best_permutation(&cost) } else { greedy_matching(&cost) };
    Ok(relabel(new_model, &perm))
}

/// `perm[j]` is the label given to new cluster `j`.
pub(crate) fn relabel(model: ClusterModel, perm: &[usize]) -> ClusterModel {
    let c = perm.len();
    let mut centroids = model.centroids.clone();
    let mut per_cluster = vec![0.0; c];
    for (j, &to) in perm.iter().enumerate() {
        centroids[to] = model.centroids[j].clone();
        centroids[to].channel_id = to;
        per_cluster[to] = model.per_cluster_distance[j];
    }
    ClusterModel {
        centroids,
        memberships: model.memberships.iter().map(|&j| perm[j]).collect(),
        per_cluster_distance: per_cluster,
        ..model
    }
}

pub(crate) fn matching_cost(cost: &[Vec<f64>], perm: &[usize]) -> f64 {
    perm.iter().enumerate().map(|(j, &i)| cost[j][i]).sum()
}

/// Exhaustive search in lexicographic order; the identity wins ties.
fn best_permutation(cost: &[Vec<f64>]) -> Vec<usize> {
    let c = cost.len();
    let mut perm: Vec<usize> = (0..c).collect();
    let mut best = perm.clone();
    let mut best_cost = matching_cost(cost, &perm);
    while next_permutation(&mut perm) {
        let v = matching_cost(cost, &perm);
        if v < best_cost - 1e-12 {
            best_cost = v;
            best = perm.clone();
        }
    }
    best
}

fn next_permutation(p: &mut [usize]) -> bool {
    let n = p.len();
    if n < 2 {
        return false;
    }
    let Some(i) = (0..n - 1).rev().find(|&i| p[i] < p[i + 1]) else { return false };
    let j = (i + 1..n).rev().find(|&j| p[j] > p[i]).expect("exists");
    p.swap(i, j);
    p[i + 1..].reverse();
    true
}

/// Repeatedly takes the cheapest remaining (new, previous) pair.
fn greedy_matching(cost: &[Vec<f64>]) -> Vec<usize> {
    let c = cost.len();
    let mut perm = vec![usize::MAX; c];
    let mut used = vec![false; c];
    for _ in 0..c {
        let mut best = (usize::MAX, usize::MAX, f64::INFINITY);
        for (j, row) in cost.iter().enumerate() {
            if perm[j] != usize::MAX {
                continue;
            }
            for (i, &v) in row.iter().enumerate() {
                if !used[i] && v < best.2 {
                    best = (j, i, v);
                }
            }
        }
        perm[best.0] = best.1;
        used[best.1] = true;
    }
    perm
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::{PreviousModel, ReferenceModel};
    use proptest::prelude::*;

    fn model(centroids: Vec<NormalizedSeries>, memberships: Vec<usize>, dist: Vec<f64>) -> ClusterModel {
        ClusterModel {
            centroids,
            memberships,
            total_distance: 0.0,
            per_cluster_distance: dist,
            iterations_used: 1,
            converged: true,
            objective_trace: vec![0.0],
        }
    }

    fn state(mem: &[usize], dist0: &[f64], prev: &[f64]) -> DetectorState {
        let c = dist0.len();
        let centroids: Vec<_> = (0..c).map(|i| NormalizedSeries::zeros(4, i)).collect();
        let memberships: Vec<Option<usize>> = mem.iter().map(|&m| Some(m)).collect();
        let mut st = DetectorState::from_reference(ReferenceModel {
            channel_count: mem.len(),
            model: model(centroids.clone(), mem.to_vec(), dist0.to_vec()),
            memberships: memberships.clone(),
            dist0: dist0.to_vec(),
        });
        st.previous = PreviousModel { centroids, dist: prev.to_vec(), memberships };
        st
    }

    fn some(v: &[usize]) -> Vec<Option<usize>> {
        v.iter().map(|&m| Some(m)).collect()
    }

    #[test]
    fn membership_change_returns_early() {
        let st = state(&[0, 0, 1], &[0.1, 0.1], &[0.1, 0.1]);
        let got = anomaly_check(&some(&[0, 1, 1]), &[5.0, 5.0], &st, &DetectorConfig::default()).unwrap();
        assert_eq!(got, (true, 0.0));
    }

    #[test]
    fn unit_ratios_give_one_per_cluster() {
        let st = state(&[0, 0], &[0.1], &[0.1]);
        let got = anomaly_check(&some(&[0, 0]), &[0.1], &st, &DetectorConfig::default()).unwrap();
        assert_eq!(got, (false, 1.0));
    }

    #[test]
    fn hand_evaluated_two_cluster_case() {
        let st = state(&[0, 1], &[0.1, 0.1], &[0.1, 0.1]);
        let (a, p) = anomaly_check(&some(&[0, 1]), &[0.4, 0.1], &st, &DetectorConfig::default()).unwrap();
        assert!(!a);
        assert!((p - 5.0).abs() < 1e-12, "p = {p}");
    }

    #[test]
    fn zero_previous_distance_uses_reference_only() {
        let st = state(&[0, 0], &[0.2], &[0.0]);
        let (_, p) = anomaly_check(&some(&[0, 0]), &[0.6], &st, &DetectorConfig::default()).unwrap();
        assert!((p - 3.0).abs() < 1e-12, "p = {p}");
    }

    #[test]
    fn tiny_reference_distance_is_maximal_evidence() {
        let cfg = DetectorConfig::default();
        let st = state(&[0, 0], &[0.0], &[0.0]);
        assert_eq!(anomaly_check(&some(&[0, 0]), &[0.3], &st, &cfg).unwrap(), (false, cfg.sat_cap));
        // Nothing anywhere: no evidence beyond the unit baseline.
        assert_eq!(anomaly_check(&some(&[0, 0]), &[0.0], &st, &cfg).unwrap(), (false, 1.0));
    }

    #[test]
    fn excluded_channels_are_not_compared() {
        let mut st = state(&[0, 1, 1], &[0.1, 0.1], &[0.1, 0.1]);
        st.previous.memberships[2] = None;
        let cfg = DetectorConfig::default();
        let (a, _) = anomaly_check(&[Some(0), Some(1), Some(0)], &[0.1, 0.1], &st, &cfg).unwrap();
        assert!(!a);
        let (a, _) = anomaly_check(&[None, Some(1), Some(1)], &[0.1, 0.1], &st, &cfg).unwrap();
        assert!(!a);
    }

    #[test]
    fn cluster_count_mismatch_is_an_error() {
        let st = state(&[0, 1], &[0.1, 0.1], &[0.1, 0.1]);
        assert!(anomaly_check(&some(&[0, 1]), &[0.1], &st, &DetectorConfig::default()).is_err());
    }

    proptest! {
        #[test]
        fn confidence_is_bounded(
            d in prop::collection::vec((0.0..1.0f64, 0.0..1.0f64, 0.0..1.0f64), 1..6),
            alpha in 0.0..=1.0f64,
        ) {
            let cfg = DetectorConfig { alpha, ..DetectorConfig::default() };
            let dist0: Vec<f64> = d.iter().map(|x| x.0).collect();
            let prev: Vec<f64> = d.iter().map(|x| x.1).collect();
            let now: Vec<f64> = d.iter().map(|x| x.2).collect();
            let st = state(&[0], &dist0, &prev);
            let (a, p) = anomaly_check(&some(&[0]), &now, &st, &cfg).unwrap();
            prop_assert!(!a);
            prop_assert!(p >= 0.0 && p <= d.len() as f64 * cfg.sat_cap + 1e-12);
        }

        #[test]
        fn change_implies_zero_confidence(d in 0.0..1.0f64, flip in 1usize..3) {
            let st = state(&[0, 1, 2], &[d; 3], &[d; 3]);
            let mut mem = some(&[0, 1, 2]);
            mem[flip] = Some(0);
            prop_assert_eq!(anomaly_check(&mem, &[d; 3], &st, &DetectorConfig::default()).unwrap(), (true, 0.0));
        }
    }

    fn wave(shift: f64, freq: f64, id: usize) -> NormalizedSeries {
        let v: Vec<f64> = (0..16).map(|t| (freq * t as f64 + shift).sin() + 0.1 * (t as f64 * 0.3).cos()).collect();
        NormalizedSeries::from_normalized(crate::series::znormalize_values(&v), id)
    }

    #[test]
    fn swapped_centroids_get_their_labels_back() {
        let a = wave(0.0, 0.4, 0);
        let b = wave(1.0, 1.3, 1);
        let prev = vec![a.clone(), b.clone()];
        let swapped = model(vec![b, a], vec![0, 1, 1, 0], vec![0.2, 0.7]);
        let out = align_labels(swapped, &prev).unwrap();
        assert_eq!(out.memberships, vec![1, 0, 0, 1]);
        assert_eq!(out.per_cluster_distance, vec![0.7, 0.2]);
        assert_eq!(out.centroids[0].values(), prev[0].values());
    }

    #[test]
    fn identical_models_keep_identity() {
        let cs = vec![wave(0.0, 0.4, 0), wave(1.0, 1.3, 1), wave(2.0, 0.9, 2)];
        let m = model(cs.clone(), vec![0, 1, 2, 2], vec![0.1, 0.2, 0.3]);
        let out = align_labels(m.clone(), &cs).unwrap();
        assert_eq!(out.memberships, m.memberships);
        assert_eq!(out.per_cluster_distance, m.per_cluster_distance);
    }

    /// All permutations of `0..c` by recursion.
    fn all_perms(c: usize) -> Vec<Vec<usize>> {
        if c == 0 {
            return vec![Vec::new()];
        }
        let mut out = Vec::new();
        for p in all_perms(c - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, c - 1);
                out.push(q);
            }
        }
        out
    }

    proptest! {
        #[test]
        fn alignment_matches_exhaustive_oracle(
            c in 1usize..=4,
            params in prop::collection::vec((0.0..6.0f64, 0.2..2.0f64), 8),
        ) {
            let prev: Vec<_> = (0..c).map(|i| wave(params[i].0, params[i].1, i)).collect();
            let new: Vec<_> = (0..c).map(|i| wave(params[4 + i].0, params[4 + i].1, i)).collect();
            let cost: Vec<Vec<f64>> =
                new.iter().map(|n| prev.iter().map(|p| sbd(n, p).unwrap().distance).collect()).collect();
            let optimum = all_perms(c).iter().map(|p| matching_cost(&cost, p)).fold(f64::INFINITY, f64::min);

            let m = model(new.clone(), (0..c).collect(), (0..c).map(|i| i as f64).collect());
            let out = align_labels(m, &prev).unwrap();
            // `out.memberships[j]` is the label new cluster j received.
            let achieved = matching_cost(&cost, &out.memberships);
            prop_assert!(achieved <= optimum + 1e-12, "achieved {achieved}, optimum {optimum}");
            let mut labels = out.memberships.clone();
            labels.sort();
            prop_assert_eq!(labels, (0..c).collect::<Vec<_>>());
            for j in 0..c {
                prop_assert_eq!(out.per_cluster_distance[out.memberships[j]], j as f64);
            }
        }
    }

    #[test]
    fn permutation_enumeration_visits_all() {
        let mut p = vec![0, 1, 2, 3];
        let mut n = 1;
        while next_permutation(&mut p) {
            n += 1;
        }
        assert_eq!(n, 24);
    }

    #[test]
    fn greedy_is_a_permutation() {
        let cost = vec![vec![0.5, 0.1, 0.9], vec![0.2, 0.3, 0.4], vec![0.6, 0.7, 0.0]];
        let mut p = greedy_matching(&cost);
        assert_eq!(p, vec![1, 0, 2]);
        p.sort();
        assert_eq!(p, vec![0, 1, 2]);
    }

    #[test]
    fn sat_clamps() {
        assert_eq!(sat(-1.0, 5.0), 0.0);
        assert_eq!(sat(7.0, 5.0), 5.0);
        assert_eq!(sat(1.0, 5.0), 1.0);
    }
}
