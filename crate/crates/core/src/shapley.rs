//! Fact-level Shapley attribution.
//!
//! The cooperative game has the atomic facts of a case as players and the
//! answer scorer `v(S) = log P(A* | Q, S)` as characteristic function. Exact
//! values come from subset enumeration and serve as the verification oracle;
//! production runs use the permutation-sampling estimator with online
//! averaging and the two early-stopping rules (an inner break once the prefix
//! value reaches `v(F)`, an outer stop once the estimates stop moving).

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FactId, PatientCase};
use crate::oracle::{map_honoring, AnswerScorer};

/// Default cap on `|F|` for exact enumeration (2^12 scorer calls).
pub const DEFAULT_SUBSET_LIMIT: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ShapleyMethod {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyVector {
    pub values: Vec<f64>,
    pub method: ShapleyMethod,
    pub iterations_used: usize,
    pub converged: bool,
    pub v_empty: f64,
    pub v_full: f64,
}

impl ShapleyVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// `Σφ − (v(F) − v(∅))`; zero for exact values.
    pub fn efficiency_gap(&self) -> f64 {
        self.values.iter().sum::<f64>() - (self.v_full - self.v_empty)
    }
}

/// Softmax-normalized Shapley values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct WeightVector {
    pub weights: Vec<f64>,
}

impl WeightVector {
    pub fn uniform(n: usize) -> Self {
        WeightVector {
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Default for [`McShapleyConfig::patience`].
pub const PATIENCE: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct McShapleyConfig {
    pub max_iterations: usize,
    pub tolerance: f64,
    pub seed: u64,
    /// Stop walking a permutation once the prefix value is within
    /// `tolerance` of `v(F)`.
    pub early_break: bool,
    /// Consecutive iterations the outer stop test must pass. With 1, a
    /// single permutation whose marginals equal the running mean ends the
    /// run, which on discrete games happens as early as the second draw.
    pub patience: usize,
}

impl Default for McShapleyConfig {
    fn default() -> Self {
        McShapleyConfig {
            max_iterations: 1000,
            tolerance: 1e-4,
            seed: 0,
            early_break: true,
            patience: PATIENCE,
        }
    }
}

impl McShapleyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iterations < 1 {
            return Err(Error::Config("max_iterations must be at least 1".into()));
        }
        if self.patience < 1 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        Ok(())
    }
}

/// When Shapley weights are recomputed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RecomputePolicy {
    /// Once per case.
    #[default]
    PerCase,
    /// Again after every policy update (fresh cache epoch).
    PerUpdateStep,
}

/// How callers obtain Shapley values for reward weighting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShapleySettings {
    pub method: ShapleyMethod,
    pub subset_limit: usize,
    pub monte_carlo: McShapleyConfig,
    pub recompute: RecomputePolicy,
}

impl Default for ShapleySettings {
    fn default() -> Self {
        ShapleySettings {
            method: ShapleyMethod::MonteCarlo,
            subset_limit: DEFAULT_SUBSET_LIMIT,
            monte_carlo: McShapleyConfig::default(),
            recompute: RecomputePolicy::PerCase,
        }
    }
}

/// Shapley values by the configured method.
pub fn estimate(
    scorer: &dyn AnswerScorer,
    case: &PatientCase,
    settings: &ShapleySettings,
) -> Result<ShapleyVector> {
    match settings.method {
        ShapleyMethod::Exact => exact_shapley(scorer, case, settings.subset_limit),
        ShapleyMethod::MonteCarlo => mc_shapley(scorer, case, &settings.monte_carlo),
    }
}

/// Shapley values, then softmax weights.
pub fn estimate_weights(
    scorer: &dyn AnswerScorer,
    case: &PatientCase,
    settings: &ShapleySettings,
) -> Result<(ShapleyVector, WeightVector)> {
    let phi = estimate(scorer, case, settings)?;
    let w = softmax_weights(&phi)?;
    Ok((phi, w))
}

fn subset_of(mask: usize, n: usize) -> Vec<FactId> {
    (0..n).filter(|i| mask & (1 << i) != 0).collect()
}

/// Exact Shapley values by enumerating all `2^|F|` subsets.
pub fn exact_shapley(
    scorer: &dyn AnswerScorer,
    case: &PatientCase,
    subset_limit: usize,
) -> Result<ShapleyVector> {
    let n = case.num_facts();
    if n == 0 {
        return Err(Error::InvalidCase(format!("{}: no facts", case.case_id)));
    }
    if n > subset_limit || n >= usize::BITS as usize {
        return Err(Error::TooLarge {
            facts: n,
            limit: subset_limit,
        });
    }
    let masks: Vec<usize> = (0..1usize << n).collect();
    let values: Vec<f64> = map_honoring(scorer.capabilities(), &masks, |&m| {
        scorer.answer_logprob(case, &subset_of(m, n))
    })
    .into_iter()
    .collect::<Result<_>>()?;

    // |S|!(n-|S|-1)!/n! for |S| = 0..n-1
    let fact: Vec<f64> = (0..=n)
        .scan(1.0, |acc, i| {
            if i > 0 {
                *acc *= i as f64;
            }
            Some(*acc)
        })
        .collect();
    let coef: Vec<f64> = (0..n)
        .map(|s| fact[s] * fact[n - s - 1] / fact[n])
        .collect();

    let mut phi = vec![0.0; n];
    for (i, phi_i) in phi.iter_mut().enumerate() {
        let bit = 1usize << i;
        let mut acc = 0.0;
        for mask in 0..(1usize << n) {
            if mask & bit == 0 {
                let s = mask.count_ones() as usize;
                acc += coef[s] * (values[mask | bit] - values[mask]);
            }
        }
        *phi_i = acc;
    }
    Ok(ShapleyVector {
        values: phi,
        method: ShapleyMethod::Exact,
        iterations_used: 0,
        converged: true,
        v_empty: values[0],
        v_full: values[(1usize << n) - 1],
    })
}

/// Diagnostics for one Monte Carlo iteration.
#[derive(Debug, Clone)]
pub struct McIteration {
    pub k: usize,
    pub permutation: Vec<FactId>,
    /// `(fact, v_j − v_prev)` for every fact visited before any inner break.
    pub marginals: Vec<(FactId, f64)>,
    pub broke_early: bool,
    /// Mean over facts of `|φ^{(k)} − φ^{(k−1)}|`.
    pub mean_abs_change: f64,
}

/// Permutation-sampling Shapley estimate with online averaging.
pub fn mc_shapley(
    scorer: &dyn AnswerScorer,
    case: &PatientCase,
    config: &McShapleyConfig,
) -> Result<ShapleyVector> {
    mc_shapley_observed(scorer, case, config, &mut |_| {})
}

/// [`mc_shapley`] with a per-iteration observer.
pub fn mc_shapley_observed(
    scorer: &dyn AnswerScorer,
    case: &PatientCase,
    config: &McShapleyConfig,
    observer: &mut dyn FnMut(&McIteration),
) -> Result<ShapleyVector> {
    config.validate()?;
    let n = case.num_facts();
    if n == 0 {
        return Err(Error::InvalidCase(format!("{}: no facts", case.case_id)));
    }
    let all: Vec<FactId> = (0..n).collect();
    let v_empty = scorer.answer_logprob(case, &[])?;
    let v_full = scorer.answer_logprob(case, &all)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut phi = vec![0.0; n];
    let mut perm = all.clone();
    let mut converged = false;
    let mut iterations = 0;
    let mut stable = 0;

    for k in 1..=config.max_iterations {
        iterations = k;
        let snapshot = phi.clone();
        perm.shuffle(&mut rng);

        let kf = k as f64;
        let mut subset: Vec<FactId> = Vec::with_capacity(n);
        let mut v_prev = v_empty;
        let mut marginals = Vec::with_capacity(n);
        let mut broke_early = false;
        for (j, &i) in perm.iter().enumerate() {
            let pos = subset.binary_search(&i).unwrap_or_else(|p| p);
            subset.insert(pos, i);
            let v_j = scorer
                .answer_logprob(case, &subset)
                .map_err(|e| e.context(format!("Monte Carlo iteration {k}")))?;
            let marginal = v_j - v_prev;
            phi[i] = (kf - 1.0) / kf * phi[i] + marginal / kf;
            marginals.push((i, marginal));
            v_prev = v_j;
            if config.early_break && (v_j - v_full).abs() < config.tolerance && j + 1 < n {
                broke_early = true;
                break;
            }
        }

        let mean_abs_change = phi
            .iter()
            .zip(&snapshot)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / n as f64;
        observer(&McIteration {
            k,
            permutation: perm.clone(),
            marginals,
            broke_early,
            mean_abs_change,
        });
        stable = if mean_abs_change < config.tolerance {
            stable + 1
        } else {
            0
        };
        if stable >= config.patience {
            converged = true;
            break;
        }
    }

    Ok(ShapleyVector {
        values: phi,
        method: ShapleyMethod::MonteCarlo,
        iterations_used: iterations,
        converged,
        v_empty,
        v_full,
    })
}

/// Numerically stable softmax.
pub fn softmax(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::InvalidInput("softmax of an empty vector".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite Shapley value".into()));
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

pub fn softmax_weights(shapley: &ShapleyVector) -> Result<WeightVector> {
    Ok(WeightVector {
        weights: softmax(&shapley.values)?,
    })
}

/// Leave-one-out baseline: `v({f_i}) − v(∅)`.
pub fn loo_importance(scorer: &dyn AnswerScorer, case: &PatientCase) -> Result<Vec<f64>> {
    let v_empty = scorer.answer_logprob(case, &[])?;
    (0..case.num_facts())
        .map(|i| Ok(scorer.answer_logprob(case, &[i])? - v_empty))
        .collect()
}

/// Fact ids sorted by importance, descending; ties by ascending id.
pub fn rank_by_importance(importances: &[f64]) -> Vec<FactId> {
    let mut order: Vec<FactId> = (0..importances.len()).collect();
    order.sort_by(|&a, &b| importances[b].total_cmp(&importances[a]).then(a.cmp(&b)));
    order
}

/// `|relevant ∩ top-k| / min(k, #relevant)`.
pub fn recall_at_k(importances: &[f64], relevant_mask: &[bool], k: usize) -> Result<f64> {
    let n = importances.len();
    if relevant_mask.len() != n {
        return Err(Error::InvalidInput(format!(
            "{n} importances but {} relevance flags",
            relevant_mask.len()
        )));
    }
    if k == 0 || k > n {
        return Err(Error::InvalidInput(format!("k = {k} outside 1..={n}")));
    }
    let relevant = relevant_mask.iter().filter(|&&r| r).count();
    if relevant == 0 {
        return Err(Error::UndefinedMetric("no relevant facts".into()));
    }
    let hits = rank_by_importance(importances)
        .into_iter()
        .take(k)
        .filter(|&i| relevant_mask[i])
        .count();
    Ok(hits as f64 / k.min(relevant) as f64)
}

/// JSON report of one case's attribution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ShapleyReport {
    pub values: Vec<f64>,
    pub weights: Vec<f64>,
    pub method: ShapleyMethod,
    pub iterations_used: usize,
    pub converged: bool,
    pub v_empty: f64,
    pub v_full: f64,
}

impl ShapleyReport {
    pub fn new(phi: &ShapleyVector, weights: &WeightVector) -> Self {
        ShapleyReport {
            values: phi.values.clone(),
            weights: weights.weights.clone(),
            method: phi.method,
            iterations_used: phi.iterations_used,
            converged: phi.converged,
            v_empty: phi.v_empty,
            v_full: phi.v_full,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tests::case_with;
    use crate::oracle::synthetic::{SyntheticScorer, SyntheticValueSpec};
    use proptest::prelude::*;

    /// Independent oracle: average marginal over all n! orderings.
    fn permutation_oracle(spec: &SyntheticValueSpec, n: usize) -> Vec<f64> {
        fn permute(items: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
            if k == items.len() {
                out.push(items.clone());
                return;
            }
            for i in k..items.len() {
                items.swap(k, i);
                permute(items, k + 1, out);
                items.swap(k, i);
            }
        }
        let mut perms = Vec::new();
        permute(&mut (0..n).collect(), 0, &mut perms);
        let mut phi = vec![0.0; n];
        for p in &perms {
            let mut s: Vec<usize> = Vec::new();
            let mut prev = spec.value(&s);
            for &i in p {
                s.push(i);
                s.sort_unstable();
                let v = spec.value(&s);
                phi[i] += v - prev;
                prev = v;
            }
        }
        phi.iter().map(|x| x / perms.len() as f64).collect()
    }

    fn case_for(spec: &SyntheticValueSpec) -> PatientCase {
        let mut c = case_with(spec.weights.len());
        c.synthetic = Some(spec.clone());
        c
    }

    #[test]
    fn exact_symmetric_additive() {
        let spec = SyntheticValueSpec::additive(vec![0.7, 0.7], 0.0);
        let phi = exact_shapley(&SyntheticScorer::new(spec.clone()), &case_for(&spec), 12).unwrap();
        assert!((phi.values[0] - 0.7).abs() < 1e-12 && (phi.values[1] - 0.7).abs() < 1e-12);
    }

    #[test]
    fn exact_additive_recovers_weights() {
        let spec = SyntheticValueSpec::additive(vec![0.1, 0.2, 0.3], 0.0);
        let phi = exact_shapley(&SyntheticScorer::new(spec.clone()), &case_for(&spec), 12).unwrap();
        for (p, w) in phi.values.iter().zip([0.1, 0.2, 0.3]) {
            assert!((p - w).abs() < 1e-12);
        }
    }

    #[test]
    fn exact_conjunctive_splits_bonus() {
        let b = 3.0;
        let spec = SyntheticValueSpec::conjunctive(vec![0.0, 0.0], vec![0, 1], b, -1.0);
        let phi = exact_shapley(&SyntheticScorer::new(spec.clone()), &case_for(&spec), 12).unwrap();
        assert!((phi.values[0] - b / 2.0).abs() < 1e-12);
        assert!((phi.values[1] - b / 2.0).abs() < 1e-12);
        assert_eq!(phi.v_empty, -1.0);
        assert_eq!(phi.v_full, 2.0);
    }

    #[test]
    fn exact_refuses_large_cases() {
        let spec = SyntheticValueSpec::additive(vec![0.1; 15], 0.0);
        let err =
            exact_shapley(&SyntheticScorer::new(spec.clone()), &case_for(&spec), 12).unwrap_err();
        assert!(matches!(
            err,
            Error::TooLarge {
                facts: 15,
                limit: 12
            }
        ));
    }

    #[test]
    fn mc_additive_is_exact_for_any_k() {
        let spec = SyntheticValueSpec::additive(vec![0.1, 0.5, -0.2, 0.3], 1.0);
        let scorer = SyntheticScorer::new(spec.clone());
        for k in [1, 3, 50] {
            let cfg = McShapleyConfig {
                max_iterations: k,
                tolerance: 1e-9,
                seed: 9,
                early_break: false,
                ..Default::default()
            };
            let phi = mc_shapley(&scorer, &case_for(&spec), &cfg).unwrap();
            for (p, w) in phi.values.iter().zip(&spec.weights) {
                assert!((p - w).abs() < 1e-12, "k={k}: {p} vs {w}");
            }
        }
    }

    #[test]
    fn mc_single_permutation_telescopes() {
        let spec = SyntheticValueSpec::conjunctive(vec![0.1, 0.0, 0.4, 0.2], vec![1, 2], 2.0, -5.0);
        let scorer = SyntheticScorer::new(spec.clone());
        let cfg = McShapleyConfig {
            max_iterations: 1,
            tolerance: 1e-9,
            seed: 1,
            early_break: false,
            ..Default::default()
        };
        let phi = mc_shapley(&scorer, &case_for(&spec), &cfg).unwrap();
        assert_eq!(phi.iterations_used, 1);
        assert!(phi.efficiency_gap().abs() < 1e-12);
    }

    #[test]
    fn mc_conjunctive_five_facts_matches_exact() {
        let spec = SyntheticValueSpec::conjunctive(
            vec![0.05, 0.0, 0.1, 0.0, 0.2],
            vec![0, 2, 3],
            1.0,
            -2.0,
        );
        let scorer = SyntheticScorer::new(spec.clone());
        let case = case_for(&spec);
        let exact = exact_shapley(&scorer, &case, 12).unwrap();
        let cfg = McShapleyConfig {
            max_iterations: 2000,
            tolerance: 1e-4,
            seed: 5,
            early_break: true,
            ..Default::default()
        };
        let mc = mc_shapley(&scorer, &case, &cfg).unwrap();
        let err = mc
            .values
            .iter()
            .zip(&exact.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err <= 0.05, "max error {err}");
    }

    #[test]
    fn mc_is_bitwise_reproducible() {
        let spec = SyntheticValueSpec::noisy_additive(vec![0.3, 0.1, 0.2, 0.05], 0.0, 4, 0.1);
        let scorer = SyntheticScorer::new(spec.clone());
        let cfg = McShapleyConfig {
            max_iterations: 300,
            tolerance: 1e-6,
            seed: 77,
            early_break: true,
            ..Default::default()
        };
        let a = mc_shapley(&scorer, &case_for(&spec), &cfg).unwrap();
        let b = mc_shapley(&scorer, &case_for(&spec), &cfg).unwrap();
        let bits = |v: &ShapleyVector| v.values.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
        assert_eq!(a.iterations_used, b.iterations_used);
    }

    #[test]
    fn mc_stops_on_convergence() {
        let spec = SyntheticValueSpec::additive(vec![0.3, 0.1], 0.0);
        let cfg = McShapleyConfig {
            max_iterations: 100,
            tolerance: 1e-6,
            seed: 0,
            early_break: false,
            ..Default::default()
        };
        let phi = mc_shapley(&SyntheticScorer::new(spec.clone()), &case_for(&spec), &cfg).unwrap();
        assert!(phi.converged);
        // every permutation is exact, so only the first iteration moves the mean
        assert_eq!(phi.iterations_used, 1 + PATIENCE);
    }

    #[test]
    fn softmax_examples() {
        let w = softmax(&[0.0, 0.0, 0.0]).unwrap();
        assert!(w.iter().all(|x| (x - 1.0 / 3.0).abs() < 1e-15));
        let w = softmax(&[2f64.ln(), 0.0]).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-15 && (w[1] - 1.0 / 3.0).abs() < 1e-15);
        let a = softmax(&[0.3, -1.0, 2.0]).unwrap();
        let b = softmax(&[100.3, 99.0, 102.0]).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-12);
        }
        assert!(softmax(&[1.0, f64::NAN]).is_err());
        // Large magnitudes do not overflow.
        let w = softmax(&[1000.0, 0.0]).unwrap();
        assert!((w[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn loo_examples() {
        let spec = SyntheticValueSpec::additive(vec![0.1, 0.2, 0.3], 4.0);
        let loo = loo_importance(&SyntheticScorer::new(spec.clone()), &case_for(&spec)).unwrap();
        for (l, w) in loo.iter().zip([0.1, 0.2, 0.3]) {
            assert!((l - w).abs() < 1e-12);
        }
        let spec = SyntheticValueSpec::conjunctive(vec![0.0, 0.0], vec![0, 1], 5.0, 0.0);
        let loo = loo_importance(&SyntheticScorer::new(spec.clone()), &case_for(&spec)).unwrap();
        assert_eq!(loo, vec![0.0, 0.0]);
    }

    #[test]
    fn recall_examples() {
        assert_eq!(
            recall_at_k(&[3.0, 2.0, 1.0], &[true, false, false], 1).unwrap(),
            1.0
        );
        assert_eq!(
            recall_at_k(&[1.0, 2.0, 3.0], &[true, false, false], 1).unwrap(),
            0.0
        );
        assert!(matches!(
            recall_at_k(&[1.0, 2.0], &[false, false], 1),
            Err(Error::UndefinedMetric(_))
        ));
        assert!(recall_at_k(&[1.0, 2.0], &[true, false], 3).is_err());
        assert!(recall_at_k(&[1.0, 2.0], &[true, false], 0).is_err());
        // ties broken by ascending id
        assert_eq!(
            recall_at_k(&[0.0, 0.0, 0.0], &[false, true, false], 1).unwrap(),
            0.0
        );
        assert_eq!(
            recall_at_k(&[0.0, 0.0, 0.0], &[true, false, false], 1).unwrap(),
            1.0
        );
    }

    fn spec_strategy() -> impl Strategy<Value = SyntheticValueSpec> {
        (2usize..=6).prop_flat_map(|n| {
            (
                prop::collection::vec(-1.0f64..1.0, n),
                prop::collection::btree_set(0..n, 1..=n),
                0.1f64..4.0,
                -5.0f64..0.0,
                0u8..3,
                any::<u64>(),
            )
                .prop_map(|(w, req, bonus, base, fam, seed)| match fam {
                    0 => SyntheticValueSpec::additive(w, bonus),
                    1 => SyntheticValueSpec::conjunctive(w, req.into_iter().collect(), bonus, base),
                    _ => SyntheticValueSpec::noisy_additive(w, bonus, seed, 0.3),
                })
        })
    }

    proptest! {
        #[test]
        fn exact_matches_permutation_oracle(spec in spec_strategy()) {
            let n = spec.weights.len();
            let phi = exact_shapley(&SyntheticScorer::new(spec.clone()), &case_for(&spec), 12).unwrap();
            let oracle = permutation_oracle(&spec, n);
            for (a, b) in phi.values.iter().zip(&oracle) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            prop_assert!(phi.efficiency_gap().abs() < 1e-9);
        }

        #[test]
        fn mc_iterations_telescope_without_early_break(spec in spec_strategy(), seed in any::<u64>()) {
            let case = case_for(&spec);
            let scorer = SyntheticScorer::new(spec.clone());
            let cfg = McShapleyConfig { max_iterations: 20, tolerance: 1e-12, seed, early_break: false, ..Default::default() };
            let target = spec.value(&(0..spec.weights.len()).collect::<Vec<_>>()) - spec.value(&[]);
            let mut worst: f64 = 0.0;
            mc_shapley_observed(&scorer, &case, &cfg, &mut |it| {
                let s: f64 = it.marginals.iter().map(|(_, m)| m).sum();
                worst = worst.max((s - target).abs());
            }).unwrap();
            prop_assert!(worst < 1e-9);
        }

        #[test]
        fn softmax_sums_to_one_and_is_shift_invariant(v in prop::collection::vec(-50.0f64..50.0, 1..10), c in -100.0f64..100.0) {
            let a = softmax(&v).unwrap();
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let b = softmax(&shifted).unwrap();
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            prop_assert!(a.iter().all(|&w| w > 0.0));
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() < 1e-9);
            }
        }
    }
}
