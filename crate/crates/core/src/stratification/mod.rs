//! Partitioning the test set into strata from the stratification variable z.
//!
//! Seven methods are available: two cumulative-root density rules (SQRT,
//! CBRT), cumulative-z equalization (WTMN), k-means and Gaussian-mixture
//! clustering (KM, GMM), and two score-rank rules (EQSZ, EQWD).
//!
//! Strata are indexed in ascending z order. A stratum that ends up empty is
//! dropped (merged into its nearest nonempty neighbor), K shrinks and
//! [`StrataPartition::merged_empty`] is set.

mod cluster;

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use thiserror::Error;

use crate::dataset::StratVariable;
use crate::density::{root_cumulative_boundaries, DensityError, DensityModel};

pub use cluster::{gmm_1d, kmeans_1d, GmmFit, KMeansFit};

#[derive(Debug, Error, PartialEq)]
pub enum StratifyError {
    #[error("K must be at least 1")]
    ZeroStrata,
    #[error("need at least K = {k} instances, have {n}")]
    TooFewInstances { n: usize, k: usize },
    #[error("z has zero range; cannot form equal-width strata")]
    ZeroRange,
    #[error("z sums to zero; cannot equalize cumulative z")]
    ZeroSum,
    #[error("z must be nonnegative for weighted-mean stratification")]
    NegativeZ,
    #[error("only {distinct} distinct z values for K = {k} clusters")]
    TooFewDistinct { distinct: usize, k: usize },
    #[error("boundaries must be strictly increasing")]
    UnsortedBoundaries,
    #[error("method {0} needs a density model")]
    MissingDensity(Method),
    #[error(transparent)]
    Density(#[from] DensityError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Sqrt,
    Cbrt,
    Wtmn,
    Km,
    Gmm,
    Eqsz,
    Eqwd,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Sqrt,
        Method::Cbrt,
        Method::Wtmn,
        Method::Km,
        Method::Gmm,
        Method::Eqsz,
        Method::Eqwd,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Method::Sqrt => "sqrt",
            Method::Cbrt => "cbrt",
            Method::Wtmn => "wtmn",
            Method::Km => "km",
            Method::Gmm => "gmm",
            Method::Eqsz => "eqsz",
            Method::Eqwd => "eqwd",
        }
    }

    pub fn needs_density(self) -> bool {
        matches!(self, Method::Sqrt | Method::Cbrt)
    }

    /// Boundary-based methods always yield strata that are z-intervals.
    pub fn is_boundary_based(self) -> bool {
        matches!(self, Method::Sqrt | Method::Cbrt | Method::Eqwd)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        Method::ALL
            .into_iter()
            .find(|m| m.token() == lower)
            .ok_or_else(|| format!("unknown stratification method `{s}` (expected one of sqrt, cbrt, wtmn, km, gmm, eqsz, eqwd)"))
    }
}

/// A disjoint, covering assignment of instances to strata.
#[derive(Debug, Clone, PartialEq)]
pub struct StrataPartition {
    assignment: Vec<usize>,
    members: Vec<Vec<usize>>,
    weights: Vec<f64>,
    method: Method,
    boundaries: Option<Vec<f64>>,
    merged_empty: bool,
}

impl StrataPartition {
    /// Builds a partition from raw labels in `0..k_raw`, dropping empty
    /// strata. For boundary methods, `boundaries` holds the k_raw - 1 cut
    /// points; the cut kept between two surviving strata is the lower edge of
    /// the upper one.
    fn build(labels: Vec<usize>, k_raw: usize, method: Method, boundaries: Option<Vec<f64>>) -> Self {
        let mut counts = vec![0usize; k_raw];
        for &l in &labels {
            counts[l] += 1;
        }
        let mut remap = vec![usize::MAX; k_raw];
        let mut kept = Vec::new();
        for (j, &c) in counts.iter().enumerate() {
            if c > 0 {
                remap[j] = kept.len();
                kept.push(j);
            }
        }
        let merged_empty = kept.len() < k_raw;
        let boundaries = boundaries.map(|b| kept.iter().skip(1).map(|&j| b[j - 1]).collect());

        let assignment: Vec<usize> = labels.into_iter().map(|l| remap[l]).collect();
        let mut members = vec![Vec::new(); kept.len()];
        for (i, &s) in assignment.iter().enumerate() {
            members[s].push(i);
        }
        let n = assignment.len() as f64;
        let weights = members.iter().map(|m| m.len() as f64 / n).collect();
        Self {
            assignment,
            members,
            weights,
            method,
            boundaries,
            merged_empty,
        }
    }

    /// Number of (nonempty) strata.
    pub fn k(&self) -> usize {
        self.members.len()
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    /// Instance indices of stratum `k`, ascending.
    pub fn members(&self, k: usize) -> &[usize] {
        &self.members[k]
    }

    pub fn sizes(&self) -> Vec<usize> {
        self.members.iter().map(Vec::len).collect()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn method(&self) -> Method {
        self.method
    }

    pub fn boundaries(&self) -> Option<&[f64]> {
        self.boundaries.as_deref()
    }

    /// True when at least one requested stratum was empty and merged away.
    pub fn merged_empty(&self) -> bool {
        self.merged_empty
    }

    /// Writes `id,stratum` rows in instance order.
    pub fn write_csv<W: Write>(&self, mut out: W, ids: impl IntoIterator<Item = u64>) -> std::io::Result<()> {
        writeln!(out, "id,stratum")?;
        for (id, s) in ids.into_iter().zip(&self.assignment) {
            writeln!(out, "{id},{s}")?;
        }
        out.flush()
    }
}

fn sorted_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    // sort_by is stable, so ties keep their original index order.
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    order
}

/// Half-open interval assignment: instance i lands in stratum k when
/// b[k-1] <= z_i < b[k]; the last stratum is closed on the right.
pub fn assign_by_boundaries(z: &StratVariable, boundaries: &[f64]) -> Result<StrataPartition, StratifyError> {
    assign_with_method(z, boundaries, Method::Eqwd)
}

fn assign_with_method(z: &StratVariable, boundaries: &[f64], method: Method) -> Result<StrataPartition, StratifyError> {
    if boundaries.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(StratifyError::UnsortedBoundaries);
    }
    let labels = z
        .values()
        .iter()
        .map(|&v| boundaries.partition_point(|&b| b <= v))
        .collect();
    Ok(StrataPartition::build(
        labels,
        boundaries.len() + 1,
        method,
        Some(boundaries.to_vec()),
    ))
}

/// Equal-width strata over [min z, max z].
pub fn stratify_eqwd(z: &StratVariable, k: usize) -> Result<StrataPartition, StratifyError> {
    if k == 0 {
        return Err(StratifyError::ZeroStrata);
    }
    let (lo, hi) = (z.min(), z.max());
    let range = hi - lo;
    if !(range > 0.0) {
        return Err(StratifyError::ZeroRange);
    }
    let boundaries: Vec<f64> = (1..k).map(|j| lo + range * j as f64 / k as f64).collect();
    assign_with_method(z, &boundaries, Method::Eqwd)
}

/// Equal-size strata over the z ranking; the N mod K leftover instances go
/// one each to the lowest strata.
pub fn stratify_eqsz(z: &StratVariable, k: usize) -> Result<StrataPartition, StratifyError> {
    if k == 0 {
        return Err(StratifyError::ZeroStrata);
    }
    let n = z.len();
    if n < k {
        return Err(StratifyError::TooFewInstances { n, k });
    }
    let (base, extra) = (n / k, n % k);
    let mut labels = vec![0; n];
    let mut pos = 0;
    let order = sorted_order(z.values());
    for s in 0..k {
        let size = base + usize::from(s < extra);
        for &i in &order[pos..pos + size] {
            labels[i] = s;
        }
        pos += size;
    }
    Ok(StrataPartition::build(labels, k, Method::Eqsz, None))
}

/// Cumulative-z equalization: walking the z ranking, an instance joins
/// stratum j once the z mass strictly before it reaches j/K of the total.
/// Each stratum then carries about the same W_k * mean(z_k).
pub fn stratify_wtmn(z: &StratVariable, k: usize) -> Result<StrataPartition, StratifyError> {
    if k == 0 {
        return Err(StratifyError::ZeroStrata);
    }
    let values = z.values();
    if values.iter().any(|&v| v < 0.0) {
        return Err(StratifyError::NegativeZ);
    }
    let total: f64 = values.iter().sum();
    if !(total > 0.0) {
        return Err(StratifyError::ZeroSum);
    }
    let kf = k as f64;
    let mut labels = vec![0; values.len()];
    let mut before = 0.0;
    let mut s = 0;
    for i in sorted_order(values) {
        while s + 1 < k && before * kf >= (s + 1) as f64 * total {
            s += 1;
        }
        labels[i] = s;
        before += values[i];
    }
    Ok(StrataPartition::build(labels, k, Method::Wtmn, None))
}

pub fn stratify_kmeans(z: &StratVariable, k: usize, seed: u64) -> Result<StrataPartition, StratifyError> {
    let fit = kmeans_1d(z.values(), k, seed)?;
    Ok(StrataPartition::build(fit.labels, k, Method::Km, None))
}

pub fn stratify_gmm(z: &StratVariable, k: usize, seed: u64) -> Result<StrataPartition, StratifyError> {
    let fit = gmm_1d(z.values(), k, seed)?;
    Ok(StrataPartition::build(fit.labels, k, Method::Gmm, None))
}

pub fn stratify_root_cumulative(
    z: &StratVariable,
    k: usize,
    model: &DensityModel,
    method: Method,
) -> Result<StrataPartition, StratifyError> {
    let exponent = match method {
        Method::Sqrt => 0.5,
        Method::Cbrt => 1.0 / 3.0,
        other => return Err(StratifyError::MissingDensity(other)),
    };
    let boundaries = root_cumulative_boundaries(model, k, exponent)?;
    assign_with_method(z, &boundaries, method)
}

/// Dispatches to the method-specific stratifier. SQRT and CBRT need a
/// density model; `seed` only matters for KM and GMM.
pub fn stratify(
    z: &StratVariable,
    method: Method,
    k: usize,
    seed: u64,
    density: Option<&DensityModel>,
) -> Result<StrataPartition, StratifyError> {
    match method {
        Method::Sqrt | Method::Cbrt => {
            let model = density.ok_or(StratifyError::MissingDensity(method))?;
            stratify_root_cumulative(z, k, model, method)
        }
        Method::Wtmn => stratify_wtmn(z, k),
        Method::Km => stratify_kmeans(z, k, seed),
        Method::Gmm => stratify_gmm(z, k, seed),
        Method::Eqsz => stratify_eqsz(z, k),
        Method::Eqwd => stratify_eqwd(z, k),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::fit_kde;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn zv(v: &[f64]) -> StratVariable {
        StratVariable::new(v.to_vec()).unwrap()
    }

    #[test]
    fn boundary_assignment() {
        let p = assign_by_boundaries(&zv(&[0.1, 0.4, 0.6, 0.9]), &[0.5]).unwrap();
        assert_eq!(p.sizes(), vec![2, 2]);
        assert!(!p.merged_empty());
    }

    #[test]
    fn ties_go_to_upper_stratum() {
        let p = assign_by_boundaries(&zv(&[0.2, 0.5, 0.7]), &[0.5]).unwrap();
        assert_eq!(p.assignment(), &[0, 1, 1]);
    }

    #[test]
    fn empty_strata_are_merged() {
        let p = assign_by_boundaries(&zv(&[0.1, 0.2]), &[0.5, 0.9]).unwrap();
        assert_eq!(p.k(), 1);
        assert!(p.merged_empty());
        assert_eq!(p.boundaries(), Some(&[][..]));

        // Empty middle stratum: the surviving cut is the lower edge of the
        // upper stratum, and the assignment is unchanged.
        let z = zv(&[0.1, 0.2, 0.8, 0.9]);
        let p = assign_by_boundaries(&z, &[0.3, 0.5, 0.7]).unwrap();
        assert_eq!(p.sizes(), vec![2, 2]);
        assert_eq!(p.boundaries(), Some(&[0.7][..]));
        assert_eq!(assign_by_boundaries(&z, p.boundaries().unwrap()).unwrap().assignment(), p.assignment());
    }

    #[test]
    fn unsorted_boundaries_rejected() {
        assert_eq!(
            assign_by_boundaries(&zv(&[0.1]), &[0.5, 0.5]).unwrap_err(),
            StratifyError::UnsortedBoundaries
        );
    }

    #[test]
    fn eqwd_boundaries() {
        let p = stratify_eqwd(&zv(&[0.0, 0.3, 0.6, 1.0]), 4).unwrap();
        assert_eq!(p.boundaries(), Some(&[0.25, 0.5, 0.75][..]));
        let p = stratify_eqwd(&zv(&[2.0, 3.0, 6.0]), 2).unwrap();
        assert_eq!(p.boundaries(), Some(&[4.0][..]));
        assert_eq!(stratify_eqwd(&zv(&[0.4; 5]), 2).unwrap_err(), StratifyError::ZeroRange);
    }

    #[test]
    fn eqsz_sizes() {
        let z: Vec<f64> = (0..100).map(|i| ((i * 37) % 100) as f64).collect();
        assert_eq!(stratify_eqsz(&zv(&z), 4).unwrap().sizes(), vec![25; 4]);
        // 10 = 3 * 3 + 1: the single leftover goes to stratum 0.
        assert_eq!(stratify_eqsz(&zv(&z[..10]), 3).unwrap().sizes(), vec![4, 3, 3]);
        let p = stratify_eqsz(&zv(&z[..5]), 5).unwrap();
        assert_eq!(p.sizes(), vec![1; 5]);
        assert_eq!(
            stratify_eqsz(&zv(&z[..2]), 3).unwrap_err(),
            StratifyError::TooFewInstances { n: 2, k: 3 }
        );
    }

    #[test]
    fn eqsz_ties_break_by_index() {
        let p = stratify_eqsz(&zv(&[0.5, 0.5, 0.5, 0.5]), 2).unwrap();
        assert_eq!(p.assignment(), &[0, 0, 1, 1]);
    }

    #[test]
    fn wtmn_cut_positions() {
        let z = [1.0, 1.0, 1.0, 1.0, 2.0, 2.0];
        let p = stratify_wtmn(&zv(&z), 2).unwrap();
        assert_eq!(p.assignment(), &[0, 0, 0, 0, 1, 1]);

        // Exhaustive oracle over all 5 cut positions of the sorted sequence:
        // the chosen cut is the unique one with equal stratum sums.
        let sums: Vec<(f64, f64)> = (1..6)
            .map(|c| (z[..c].iter().sum(), z[c..].iter().sum()))
            .collect();
        let balanced: Vec<usize> = (0..5).filter(|&c| sums[c].0 == sums[c].1).map(|c| c + 1).collect();
        assert_eq!(balanced, vec![4]);
    }

    #[test]
    fn wtmn_degenerate_cases() {
        let p = stratify_wtmn(&zv(&[0.3; 7]), 2).unwrap();
        let s = p.sizes();
        assert!(s[0].abs_diff(s[1]) <= 1);
        let p = stratify_wtmn(&zv(&[0.3, 0.1, 0.9]), 1).unwrap();
        assert_eq!(p.k(), 1);
        assert_eq!(p.sizes(), vec![3]);
        assert_eq!(stratify_wtmn(&zv(&[0.0, 0.0]), 2).unwrap_err(), StratifyError::ZeroSum);
    }

    #[test]
    fn clustering_methods() {
        let z = zv(&[0.1, 0.11, 0.9, 0.92]);
        let km = stratify_kmeans(&z, 2, 7).unwrap();
        assert_eq!(km.assignment(), &[0, 0, 1, 1]);
        assert_eq!(km, stratify_kmeans(&z, 2, 7).unwrap());
        let gmm = stratify_gmm(&z, 2, 7).unwrap();
        assert_eq!(gmm.assignment(), km.assignment());
        assert_eq!(gmm, stratify_gmm(&z, 2, 7).unwrap());
    }

    #[test]
    fn dispatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let z = zv(&(0..500).map(|_| rng.random::<f64>()).collect::<Vec<_>>());
        assert_eq!(stratify(&z, Method::Eqwd, 4, 0, None).unwrap(), stratify_eqwd(&z, 4).unwrap());
        assert_eq!(
            stratify(&z, Method::Sqrt, 5, 0, None).unwrap_err(),
            StratifyError::MissingDensity(Method::Sqrt)
        );
        let model = fit_kde(&z, None, 512).unwrap();
        let b = root_cumulative_boundaries(&model, 5, 0.5).unwrap();
        let direct = assign_by_boundaries(&z, &b).unwrap();
        let via = stratify(&z, Method::Sqrt, 5, 0, Some(&model)).unwrap();
        assert_eq!(via.assignment(), direct.assignment());
        assert_eq!(via.method(), Method::Sqrt);
        assert!("median".parse::<Method>().is_err());
        assert_eq!("EQSZ".parse::<Method>().unwrap(), Method::Eqsz);
    }

    #[test]
    fn partition_csv() {
        let p = stratify_eqsz(&zv(&[0.9, 0.1, 0.5]), 3).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf, [10u64, 11, 12]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "id,stratum\n10,2\n11,0\n12,1\n");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn partition_invariants(seed in any::<u64>(), n in 20usize..400, k in 2usize..9) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let raw: Vec<f64> = (0..n).map(|_| (rng.random::<f64>() * 50.0).round() / 50.0).collect();
            let z = zv(&raw);
            let model = fit_kde(&z, None, 256).ok();
            for method in Method::ALL {
                let p = match stratify(&z, method, k, seed, model.as_ref()) {
                    Ok(p) => p,
                    Err(StratifyError::TooFewDistinct { .. }) | Err(StratifyError::ZeroRange) => continue,
                    Err(e) => return Err(TestCaseError::fail(format!("{method}: {e}"))),
                };
                prop_assert_eq!(p.len(), n);
                prop_assert_eq!(p.sizes().iter().sum::<usize>(), n);
                prop_assert!(p.sizes().iter().all(|&s| s >= 1));
                prop_assert!((p.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
                let mut seen = vec![false; n];
                for s in 0..p.k() {
                    for &i in p.members(s) {
                        prop_assert!(!seen[i]);
                        prop_assert_eq!(p.assignment()[i], s);
                        seen[i] = true;
                    }
                }
                if method.is_boundary_based() {
                    // Contiguity: max z of a stratum is below min z of the next.
                    for s in 1..p.k() {
                        let below = p.members(s - 1).iter().map(|&i| raw[i]).fold(f64::MIN, f64::max);
                        let above = p.members(s).iter().map(|&i| raw[i]).fold(f64::MAX, f64::min);
                        prop_assert!(below < above);
                    }
                }
            }
        }
    }
}
