//! Summary statistics of fitted models.
//!
//! Profile and group indices are 0-based here; reports print them 1-based.

use std::collections::{BTreeMap, BTreeSet};

use itertools::Itertools;
use ndarray::{Array2, Array3, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::Responsibilities;

const SIMPLEX_TOL: f64 = 1e-9;

fn check_simplex(p: &[f64]) -> Result<()> {
    let total: f64 = p.iter().sum();
    if p.is_empty() || p.iter().any(|v| !(*v >= -SIMPLEX_TOL)) || (total - 1.0).abs() > SIMPLEX_TOL {
        return Err(Error::Domain(format!("not a probability vector: {p:?}")));
    }
    Ok(())
}

/// Extent of membership `exp(−Σ_g τ_g log τ_g)`, with `0 log 0 = 0`.
pub fn eom(tau: &[f64]) -> Result<f64> {
    check_simplex(tau)?;
    let entropy: f64 = tau.iter().filter(|t| **t > 0.0).map(|t| -t * t.ln()).sum();
    Ok(entropy.exp().clamp(1.0, tau.len() as f64))
}

/// Most probable profile; ties go to the lowest index.
pub fn map_assign(phi: &[f64]) -> usize {
    let mut best = 0;
    for (g, v) in phi.iter().enumerate().skip(1) {
        if *v > phi[best] {
            best = g;
        }
    }
    best
}

/// `1 − max_g φ_g`.
pub fn uncertainty(phi: &[f64]) -> f64 {
    1.0 - phi.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Sorted distinct profiles of a row of MAP assignments.
pub fn profile_set(row: &[usize]) -> Vec<usize> {
    row.iter().copied().collect::<BTreeSet<_>>().into_iter().collect()
}

/// `{a, b}` written with 1-based labels.
pub fn format_profile_set(set: &[usize]) -> String {
    format!("{{{}}}", set.iter().map(|g| (g + 1).to_string()).join(","))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfileAssignment {
    /// N × M MAP profile per cell.
    pub map_z: Array2<usize>,
    pub profile_sets: Vec<Vec<usize>>,
    /// N × M values of `1 − max_g φ_nmg`.
    pub uncertainty: Array2<f64>,
}

impl ProfileAssignment {
    pub fn from_phi(phi: &Array3<f64>) -> Self {
        let (n_obs, n_attr, _) = phi.dim();
        let mut map_z = Array2::zeros((n_obs, n_attr));
        let mut unc = Array2::zeros((n_obs, n_attr));
        for n in 0..n_obs {
            for m in 0..n_attr {
                let row = phi.slice(ndarray::s![n, m, ..]).to_vec();
                map_z[[n, m]] = map_assign(&row);
                unc[[n, m]] = uncertainty(&row);
            }
        }
        let profile_sets = map_z.rows().into_iter().map(|r| profile_set(&r.to_vec())).collect();
        Self {
            map_z,
            profile_sets,
            uncertainty: unc,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lower: f64,
    pub upper: f64,
    pub counts: Vec<usize>,
}

impl Histogram {
    /// Equal-width bins over `[lower, upper]`; the last bin is closed and
    /// values outside the range are clamped into the end bins.
    pub fn new(values: &[f64], lower: f64, upper: f64, bins: usize) -> Result<Self> {
        if bins == 0 || !(upper > lower) {
            return Err(Error::Config(format!("bad histogram range [{lower}, {upper}] with {bins} bins")));
        }
        let mut counts = vec![0; bins];
        let width = (upper - lower) / bins as f64;
        for v in values {
            let idx = (((v - lower) / width).floor().max(0.0) as usize).min(bins - 1);
            counts[idx] += 1;
        }
        Ok(Self { lower, upper, counts })
    }

    pub fn edges(&self) -> Vec<(f64, f64)> {
        let width = (self.upper - self.lower) / self.counts.len() as f64;
        (0..self.counts.len())
            .map(|i| (self.lower + i as f64 * width, self.lower + (i + 1) as f64 * width))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EomSummary {
    pub values: Vec<f64>,
    pub histogram: Histogram,
}

impl EomSummary {
    pub fn from_tau(tau_hat: &Array2<f64>, bins: usize) -> Result<Self> {
        let values = tau_hat.rows().into_iter().map(|r| eom(&r.to_vec())).collect::<Result<Vec<_>>>()?;
        let upper = (tau_hat.ncols() as f64).max(1.0 + 1e-9);
        let histogram = Histogram::new(&values, 1.0, upper, bins)?;
        Ok(Self { values, histogram })
    }
}

/// Per-observation argmax group and `1 − max` of mixture responsibilities.
pub fn mixture_map_and_uncertainty(resp: &Responsibilities) -> (Vec<usize>, Vec<f64>) {
    resp.matrix()
        .rows()
        .into_iter()
        .map(|r: ArrayView1<f64>| {
            let row = r.to_vec();
            (map_assign(&row), uncertainty(&row))
        })
        .unzip()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossTab {
    /// Group label per row, 0-based.
    pub groups: Vec<usize>,
    /// Profile set per column.
    pub sets: Vec<Vec<usize>>,
    /// `counts[row][col]`.
    pub counts: Vec<Vec<usize>>,
}

impl CrossTab {
    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn row_totals(&self) -> Vec<usize> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn column_totals(&self) -> Vec<usize> {
        (0..self.sets.len()).map(|c| self.counts.iter().map(|r| r[c]).sum()).collect()
    }
}

/// Contingency table of mixture groups against mapped profile sets.
///
/// Rows cover groups `0..=max(group)` (or `n_groups` if larger); columns are
/// the observed sets ordered by descending count, then lexicographically.
pub fn cross_tab(groups: &[usize], sets: &[Vec<usize>], n_groups: usize) -> Result<CrossTab> {
    if groups.len() != sets.len() {
        return Err(Error::Shape(format!(
            "{} group labels for {} profile sets",
            groups.len(),
            sets.len()
        )));
    }
    let mut set_counts: BTreeMap<&Vec<usize>, usize> = BTreeMap::new();
    for s in sets {
        *set_counts.entry(s).or_default() += 1;
    }
    let columns: Vec<Vec<usize>> = set_counts
        .into_iter()
        .sorted_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)))
        .map(|(s, _)| s.clone())
        .collect();
    let n_rows = groups.iter().map(|g| g + 1).max().unwrap_or(0).max(n_groups);
    let mut counts = vec![vec![0; columns.len()]; n_rows];
    for (g, s) in groups.iter().zip(sets) {
        let col = columns.iter().position(|c| c == s).expect("set was counted");
        counts[*g][col] += 1;
    }
    Ok(CrossTab {
        groups: (0..n_rows).collect(),
        sets: columns,
        counts,
    })
}

/// Permutation `perm` minimizing `Σ_k Σ_m |est[perm[k], m] − truth[k, m]|`:
/// estimated row `perm[k]` is matched to true row `k`. Exhaustive, G ≤ 8.
pub fn align_labels(estimate: &Array2<f64>, truth: &Array2<f64>) -> Result<Vec<usize>> {
    if estimate.dim() != truth.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", estimate.dim(), truth.dim())));
    }
    let g = truth.nrows();
    if g > 8 {
        return Err(Error::Config(format!("label alignment searches at most 8 profiles, got {g}")));
    }
    // cost[i][k]: estimated row i against true row k
    let cost: Vec<Vec<f64>> = (0..g)
        .map(|i| {
            (0..g)
                .map(|k| {
                    estimate
                        .row(i)
                        .iter()
                        .zip(truth.row(k))
                        .map(|(a, b)| (a - b).abs())
                        .sum()
                })
                .collect()
        })
        .collect();
    let mut best = (f64::INFINITY, (0..g).collect::<Vec<_>>());
    for perm in (0..g).permutations(g) {
        let total: f64 = perm.iter().enumerate().map(|(k, &i)| cost[i][k]).sum();
        if total < best.0 {
            best = (total, perm);
        }
    }
    Ok(best.1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recovery {
    /// Estimated profile matched to each true profile.
    pub permutation: Vec<usize>,
    /// Mean over cells of `|θ̂ − θ| / θ`.
    pub mean_relative_rate_error: f64,
    /// Mean over observations and profiles of `|τ̂ − τ|`.
    pub mean_abs_tau_error: f64,
}

/// Compares estimated rates and memberships with the simulation truth after
/// label alignment.
pub fn recovery(
    rates: &Array2<f64>,
    tau_hat: &Array2<f64>,
    true_rates: &Array2<f64>,
    true_tau: &Array2<f64>,
) -> Result<Recovery> {
    if tau_hat.dim() != true_tau.dim() {
        return Err(Error::Shape(format!("{:?} vs {:?}", tau_hat.dim(), true_tau.dim())));
    }
    if true_rates.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::Domain("relative error needs positive true rates".into()));
    }
    let perm = align_labels(rates, true_rates)?;
    let (g, m) = true_rates.dim();
    let mut rate_err = 0.0;
    for k in 0..g {
        for j in 0..m {
            rate_err += (rates[[perm[k], j]] - true_rates[[k, j]]).abs() / true_rates[[k, j]];
        }
    }
    let mut tau_err = 0.0;
    for n in 0..true_tau.nrows() {
        for k in 0..g {
            tau_err += (tau_hat[[n, perm[k]]] - true_tau[[n, k]]).abs();
        }
    }
    Ok(Recovery {
        permutation: perm,
        mean_relative_rate_error: rate_err / (g * m) as f64,
        mean_abs_tau_error: tau_err / true_tau.len() as f64,
    })
}

/// Triples of profile indices, in lexicographic order.
pub fn ternary_faces(n_prof: usize) -> Vec<[usize; 3]> {
    (0..n_prof).combinations(3).map(|c| [c[0], c[1], c[2]]).collect()
}

/// Point of a 3-part composition in the standard 2-simplex layout:
/// `(v2 + v3/2, v3 √3/2)` after renormalizing the three masses.
pub fn ternary_point(a: f64, b: f64, c: f64) -> Result<(f64, f64)> {
    let total = a + b + c;
    if !(total > 0.0) || a < 0.0 || b < 0.0 || c < 0.0 {
        return Err(Error::Domain(format!("cannot place ({a}, {b}, {c}) on a simplex")));
    }
    let (v2, v3) = (b / total, c / total);
    Ok((v2 + v3 / 2.0, v3 * 3f64.sqrt() / 2.0))
}

/// Ternary coordinates of every row of `tau_hat` for each face.
/// Result `[f][n]` is observation n on face f.
pub fn ternary_coords(tau_hat: &Array2<f64>, faces: &[[usize; 3]]) -> Result<Vec<Vec<(f64, f64)>>> {
    faces
        .iter()
        .map(|face| {
            if face.iter().any(|&g| g >= tau_hat.ncols()) {
                return Err(Error::Shape(format!("face {face:?} outside {} profiles", tau_hat.ncols())));
            }
            tau_hat
                .rows()
                .into_iter()
                .map(|r| ternary_point(r[face[0]], r[face[1]], r[face[2]]))
                .collect()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn eom_examples() {
        assert_eq!(eom(&[1.0, 0.0, 0.0, 0.0]).unwrap(), 1.0);
        assert!((eom(&[0.25; 4]).unwrap() - 4.0).abs() < 1e-12);
        assert!((eom(&[0.5, 0.5, 0.0, 0.0]).unwrap() - 2.0).abs() < 1e-12);
        assert!(eom(&[0.5, 0.6]).is_err());
        assert!(eom(&[]).is_err());
    }

    #[test]
    fn map_assign_examples() {
        assert_eq!(map_assign(&[0.2, 0.7, 0.1]), 1);
        assert_eq!(map_assign(&[0.5, 0.5]), 0);
        assert_eq!(map_assign(&[1.0]), 0);
    }

    #[test]
    fn uncertainty_examples() {
        assert_eq!(uncertainty(&[1.0, 0.0]), 0.0);
        assert_eq!(uncertainty(&[0.25; 4]), 0.75);
        assert!((uncertainty(&[0.6, 0.4]) - 0.4).abs() < 1e-15);
    }

    #[test]
    fn profile_set_examples() {
        assert_eq!(profile_set(&[0, 0, 0]), vec![0]);
        assert_eq!(profile_set(&[2, 3, 2, 3]), vec![2, 3]);
        assert_eq!(profile_set(&[0, 1, 2]), vec![0, 1, 2]);
        assert_eq!(format_profile_set(&[2, 3]), "{3,4}");
    }

    #[test]
    fn mixture_side_statistics() {
        let r = Responsibilities(array![[1.0], [1.0]]);
        assert_eq!(mixture_map_and_uncertainty(&r), (vec![0, 0], vec![0.0, 0.0]));
        let r = Responsibilities(array![[0.2, 0.8], [0.5, 0.5]]);
        let (z, u) = mixture_map_and_uncertainty(&r);
        assert_eq!(z, vec![1, 0]);
        assert!((u[0] - 0.2).abs() < 1e-15);
        assert_eq!(u[1], 0.5);
    }

    #[test]
    fn cross_tab_examples() {
        let ct = cross_tab(&[0; 5], &vec![vec![0]; 5], 1).unwrap();
        assert_eq!(ct.counts, vec![vec![5]]);

        let groups = [0, 0, 1, 1];
        let sets = vec![vec![0], vec![0], vec![1, 2], vec![1, 2]];
        let ct = cross_tab(&groups, &sets, 2).unwrap();
        assert_eq!(ct.sets, vec![vec![0], vec![1, 2]]);
        assert_eq!(ct.counts, vec![vec![2, 0], vec![0, 2]]);
        assert_eq!(ct.total(), 4);
    }

    #[test]
    fn cross_tab_column_order() {
        let groups = [0, 1, 1, 0, 2, 2];
        let sets = vec![vec![1], vec![0, 1], vec![1], vec![0], vec![0, 1], vec![1]];
        let ct = cross_tab(&groups, &sets, 3).unwrap();
        // {1}: 3, {0,1}: 2, {0}: 1
        assert_eq!(ct.sets, vec![vec![1], vec![0, 1], vec![0]]);
        assert_eq!(ct.column_totals(), vec![3, 2, 1]);
        assert_eq!(ct.row_totals(), vec![2, 2, 2]);
        assert!(cross_tab(&[0], &[], 1).is_err());
    }

    #[test]
    fn align_labels_examples() {
        let truth = array![[1.0, 2.0], [10.0, 20.0], [5.0, 5.0]];
        assert_eq!(align_labels(&truth, &truth).unwrap(), vec![0, 1, 2]);
        let swapped = array![[10.0, 20.0], [1.0, 2.0], [5.0, 5.0]];
        let perm = align_labels(&swapped, &truth).unwrap();
        assert_eq!(perm, vec![1, 0, 2]);
        assert!(align_labels(&Array2::zeros((9, 1)), &Array2::zeros((9, 1))).is_err());
    }

    #[test]
    fn recovery_undoes_label_switching() {
        let truth = array![[2.0, 2.0], [18.0, 18.0]];
        let tau = array![[0.9, 0.1], [0.3, 0.7]];
        let est = array![[19.8, 18.0], [2.0, 2.2]];
        let tau_hat = array![[0.1, 0.9], [0.7, 0.3]];
        let r = recovery(&est, &tau_hat, &truth, &tau).unwrap();
        assert_eq!(r.permutation, vec![1, 0]);
        assert!((r.mean_relative_rate_error - 0.05).abs() < 1e-12);
        assert!(r.mean_abs_tau_error.abs() < 1e-12);
    }

    #[test]
    fn ternary_examples() {
        assert_eq!(ternary_point(1.0, 0.0, 0.0).unwrap(), (0.0, 0.0));
        let (x, y) = ternary_point(0.0, 0.0, 1.0).unwrap();
        assert_eq!(x, 0.5);
        assert!((y - 0.866025).abs() < 1e-6);
        let (x, y) = ternary_point(1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0).unwrap();
        assert!((x - 0.5).abs() < 1e-15);
        assert!((y - 3f64.sqrt() / 6.0).abs() < 1e-15);
        assert!((y - 0.288675).abs() < 1e-6);
        assert!(ternary_point(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn ternary_renormalizes_faces() {
        let tau = array![[0.1, 0.1, 0.0, 0.8]];
        assert_eq!(ternary_faces(4).len(), 4);
        let coords = ternary_coords(&tau, &[[0, 1, 2]]).unwrap();
        assert!((coords[0][0].0 - 0.5).abs() < 1e-15);
        assert_eq!(coords[0][0].1, 0.0);
        assert!(ternary_coords(&tau, &[[0, 1, 4]]).is_err());
    }

    #[test]
    fn histogram_bins() {
        let h = Histogram::new(&[1.0, 1.05, 1.5, 2.0, 2.5], 1.0, 2.0, 2).unwrap();
        assert_eq!(h.counts, vec![2, 3]);
        assert_eq!(h.edges(), vec![(1.0, 1.5), (1.5, 2.0)]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn simplex(g: usize) -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(0.0f64..1.0, g).prop_filter_map("positive mass", |v| {
                let s: f64 = v.iter().sum();
                (s > 1e-6).then(|| v.iter().map(|x| x / s).collect())
            })
        }

        proptest! {
            #[test]
            fn eom_is_bounded(tau in (1usize..7).prop_flat_map(simplex)) {
                let e = eom(&tau).unwrap();
                prop_assert!(e >= 1.0 && e <= tau.len() as f64 + 1e-12);
            }

            #[test]
            fn uncertainty_is_bounded(phi in (1usize..7).prop_flat_map(simplex)) {
                let u = uncertainty(&phi);
                let g = phi.len() as f64;
                prop_assert!(u >= -1e-15 && u <= 1.0 - 1.0 / g + 1e-12);
                prop_assert_eq!(u == 0.0, phi.iter().any(|p| *p == 1.0));
            }

            #[test]
            fn map_assign_ignores_monotone_transforms(phi in (1usize..7).prop_flat_map(simplex)) {
                let transformed: Vec<f64> = phi.iter().map(|p| (p * 3.0 + 1.0).ln()).collect();
                prop_assert_eq!(map_assign(&phi), map_assign(&transformed));
            }

            #[test]
            fn profile_set_size_counts_distinct(row in proptest::collection::vec(0usize..5, 1..12)) {
                let set = profile_set(&row);
                let distinct: BTreeSet<_> = row.iter().collect();
                prop_assert_eq!(set.len(), distinct.len());
                prop_assert!(set.windows(2).all(|w| w[0] < w[1]));
            }

            #[test]
            fn align_labels_recovers_permutations(
                perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
                seed in 0u64..1000,
            ) {
                let truth = Array2::from_shape_fn((5, 3), |(g, m)| ((g + 1) * 10 + m) as f64 + (seed % 7) as f64);
                let est = truth.select(ndarray::Axis(0), &perm);
                let found = align_labels(&est, &truth).unwrap();
                // estimated row found[k] is true row k
                for k in 0..5 {
                    prop_assert_eq!(perm[found[k]], k);
                }
            }

            #[test]
            fn cross_tab_marginals(
                pairs in proptest::collection::vec((0usize..4, proptest::collection::vec(0usize..3, 1..4)), 1..40)
            ) {
                let groups: Vec<usize> = pairs.iter().map(|p| p.0).collect();
                let sets: Vec<Vec<usize>> = pairs.iter().map(|p| profile_set(&p.1)).collect();
                let ct = cross_tab(&groups, &sets, 4).unwrap();
                prop_assert_eq!(ct.total(), groups.len());
                for (g, total) in ct.row_totals().iter().enumerate() {
                    prop_assert_eq!(*total, groups.iter().filter(|x| **x == g).count());
                }
                for (c, total) in ct.column_totals().iter().enumerate() {
                    prop_assert_eq!(*total, sets.iter().filter(|s| **s == ct.sets[c]).count());
                }
            }
        }
    }
}
