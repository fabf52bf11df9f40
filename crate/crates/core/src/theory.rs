//! Sample-complexity bounds for bundle behavior cloning.
//!
//! All functions are pure. Total variation distances work on finite action
//! distributions; the bundle bound and its standard-cloning comparator are
//! evaluated in closed form.

use crate::bundle::ClonedPolicySequence;
use crate::gridworld::one_hot;
use crate::{Error, Result};

const DIST_TOL: f64 = 1e-9;

/// Total variation distance between two distributions on the same finite support.
pub fn tv_distance(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::usage(format!(
            "distributions have different supports ({} vs {})",
            p.len(),
            q.len()
        )));
    }
    check_distribution(p)?;
    check_distribution(q)?;
    Ok(0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>())
}

fn check_distribution(p: &[f64]) -> Result<()> {
    if p.is_empty() {
        return Err(Error::usage("empty distribution"));
    }
    if p.iter().any(|v| !v.is_finite() || *v < -DIST_TOL) {
        return Err(Error::usage("distribution has a negative or non-finite entry"));
    }
    let total: f64 = p.iter().sum();
    if (total - 1.0).abs() > DIST_TOL {
        return Err(Error::usage(format!("distribution sums to {total}, not 1")));
    }
    Ok(())
}

/// TV distances between one pair of consecutive cloned policies.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairDistance {
    /// Index of the earlier policy (0-based).
    pub index: usize,
    pub max: f64,
    pub mean: f64,
}

/// Per-pair max and mean (over states) TV distance between consecutive policies.
pub fn consecutive_distances(
    policies: &ClonedPolicySequence,
    num_states: usize,
) -> Result<Vec<PairDistance>> {
    if policies.len() < 2 {
        return Err(Error::usage(format!(
            "need at least two cloned policies to compare, got {}",
            policies.len()
        )));
    }
    if num_states == 0 {
        return Err(Error::usage("no states to compare on"));
    }
    let inputs: Vec<Vec<f64>> = (0..num_states).map(|s| one_hot(s, num_states)).collect();
    let mut prev = distributions(&policies.policies[0], &inputs)?;
    let mut out = Vec::with_capacity(policies.len() - 1);
    for (k, next_net) in policies.policies.iter().enumerate().skip(1) {
        let next = distributions(next_net, &inputs)?;
        let mut max = 0.0f64;
        let mut sum = 0.0;
        for (p, q) in prev.iter().zip(&next) {
            let d = tv_distance(p, q)?;
            max = max.max(d);
            sum += d;
        }
        out.push(PairDistance { index: k - 1, max, mean: sum / num_states as f64 });
        prev = next;
    }
    Ok(out)
}

fn distributions(net: &crate::tinynn::Mlp, inputs: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    inputs.iter().map(|x| net.policy_forward(x)).collect()
}

/// Tightest ε consistent with the sequence: the largest TV distance between
/// consecutive policies at any state.
pub fn estimate_epsilon(policies: &ClonedPolicySequence, num_states: usize) -> Result<f64> {
    let pairs = consecutive_distances(policies, num_states)?;
    Ok(pairs.iter().map(|p| p.max).fold(0.0, f64::max))
}

/// Inputs to the bundle-cloning bound.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundInputs {
    pub bundle_size: usize,
    /// Samples per trajectory.
    pub horizon: usize,
    pub epsilon: f64,
    pub gamma: f64,
    pub delta: f64,
    /// Size of the (assumed discrete) policy class.
    pub policy_class_size: f64,
}

impl BoundInputs {
    pub fn validate(&self) -> Result<()> {
        if self.bundle_size < 1 {
            return Err(Error::usage("bundle size must be at least 1"));
        }
        if self.horizon < 1 {
            return Err(Error::usage("horizon must be at least 1"));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return Err(Error::usage(format!("epsilon must be finite and >= 0, got {}", self.epsilon)));
        }
        if self.gamma >= 1.0 {
            return Err(Error::usage("gamma must be < 1; the bound is undefined at gamma = 1"));
        }
        if self.gamma.is_nan() || self.gamma <= 0.0 {
            return Err(Error::usage(format!("gamma must be in (0, 1), got {}", self.gamma)));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::usage(format!("delta must be in (0, 1), got {}", self.delta)));
        }
        if !(self.policy_class_size > 1.0 && self.policy_class_size.is_finite()) {
            return Err(Error::usage(format!(
                "policy class size must be finite and > 1, got {}",
                self.policy_class_size
            )));
        }
        Ok(())
    }

    pub fn with_bundle_size(mut self, bundle_size: usize) -> Self {
        self.bundle_size = bundle_size;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundReport {
    pub bundle_size: usize,
    /// Drift term, `4 γ (B-1) ε / (1-γ)`.
    pub drift_term: f64,
    /// Sample term, `4 ln(|Π|/δ) / (B T)`.
    pub sample_term: f64,
    /// Within-bundle term, `2 ε² (B-1)²`.
    pub spread_term: f64,
    pub bundle_bound: f64,
    /// Single-trajectory cloning bound at the same confidence.
    pub standard_bound: f64,
    /// Confidence of the bundle bound, `(1-δ)²`.
    pub bundle_confidence: f64,
    /// Confidence of the comparator, `1 - (2δ - δ²)`.
    pub standard_confidence: f64,
}

impl BoundReport {
    pub fn terms(&self) -> [f64; 3] {
        [self.drift_term, self.sample_term, self.spread_term]
    }
}

pub fn bundle_bound(inputs: &BoundInputs) -> Result<BoundReport> {
    inputs.validate()?;
    let b = inputs.bundle_size as f64;
    let t = inputs.horizon as f64;
    let eps = inputs.epsilon;
    let g = inputs.gamma;
    let d = inputs.delta;
    let drift_term = 4.0 * g * (b - 1.0) * eps / (1.0 - g);
    let sample_term = 4.0 * (inputs.policy_class_size / d).ln() / (b * t);
    let spread_term = 2.0 * eps * eps * (b - 1.0) * (b - 1.0);
    let standard_delta = 2.0 * d - d * d;
    Ok(BoundReport {
        bundle_size: inputs.bundle_size,
        drift_term,
        sample_term,
        spread_term,
        bundle_bound: drift_term + sample_term + spread_term,
        standard_bound: 2.0 * (inputs.policy_class_size / standard_delta).ln() / t,
        bundle_confidence: (1.0 - d) * (1.0 - d),
        standard_confidence: 1.0 - standard_delta,
    })
}

/// Bounds on how far policies inside one bundle drift apart: the TV distance
/// between any two of them, and the L1 distance of their state visitations.
pub fn lemma3_bounds(bundle_size: usize, epsilon: f64, gamma: f64) -> Result<(f64, f64)> {
    if bundle_size < 1 {
        return Err(Error::usage("bundle size must be at least 1"));
    }
    if gamma >= 1.0 {
        return Err(Error::usage("gamma must be < 1; the visitation bound is undefined at gamma = 1"));
    }
    let spread = (bundle_size - 1) as f64 * epsilon;
    Ok((spread, 2.0 * gamma * spread / (1.0 - gamma)))
}

/// Average policy-distance form `(B-1)²/B · ε`, never larger than `(B-1) ε`.
pub fn corollary_policy_bound(bundle_size: usize, epsilon: f64) -> f64 {
    let b = bundle_size as f64;
    (b - 1.0) * (b - 1.0) / b * epsilon
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimalBundle {
    pub bundle_size: usize,
    pub bound: f64,
    /// True when bundling beats single-trajectory cloning.
    pub advantage: bool,
    pub standard_bound: f64,
}

/// Evaluates the bound for every `B` in `1..=b_max`; `inputs.bundle_size` is ignored.
pub fn bound_sweep(inputs: &BoundInputs, b_max: usize) -> Result<Vec<BoundReport>> {
    if b_max < 1 {
        return Err(Error::usage("b_max must be at least 1"));
    }
    (1..=b_max).map(|b| bundle_bound(&inputs.with_bundle_size(b))).collect()
}

/// Brute-force minimizer of the bound over `1..=b_max`; ties go to the smaller `B`.
pub fn optimal_bundle_size(inputs: &BoundInputs, b_max: usize) -> Result<OptimalBundle> {
    let sweep = bound_sweep(inputs, b_max)?;
    let mut best = &sweep[0];
    for r in &sweep[1..] {
        if r.bundle_bound < best.bundle_bound {
            best = r;
        }
    }
    Ok(OptimalBundle {
        bundle_size: best.bundle_size,
        bound: best.bundle_bound,
        advantage: best.bundle_bound < best.standard_bound,
        standard_bound: best.standard_bound,
    })
}

pub const SWEEP_HEADER: &str = "B,term1,term2,term3,total,standard_comparator";

pub fn sweep_csv(reports: &[BoundReport]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&format!(
            "{},{:?},{:?},{:?},{:?},{:?}\n",
            r.bundle_size, r.drift_term, r.sample_term, r.spread_term, r.bundle_bound, r.standard_bound
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::BundleMode;
    use crate::tinynn::{Head, LastLayerView, Mlp, NetSpec};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    // Sup over all 2^n events of |P(A) - Q(A)|.
    fn tv_by_events(p: &[f64], q: &[f64]) -> f64 {
        let n = p.len();
        let mut best = 0.0f64;
        for mask in 0u32..(1 << n) {
            let (mut pa, mut qa) = (0.0, 0.0);
            for i in 0..n {
                if mask & (1 << i) != 0 {
                    pa += p[i];
                    qa += q[i];
                }
            }
            best = best.max((pa - qa).abs());
        }
        best
    }

    fn random_dist(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 1e-3).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    }

    fn base_inputs() -> BoundInputs {
        BoundInputs {
            bundle_size: 15,
            horizon: 15,
            epsilon: 0.01,
            gamma: 0.9,
            delta: 0.05,
            policy_class_size: 1e6,
        }
    }

    #[test]
    fn tv_examples() {
        assert_eq!(tv_distance(&[0.2, 0.8], &[0.2, 0.8]).unwrap(), 0.0);
        assert_eq!(tv_distance(&[1.0, 0.0, 0.0], &[0.0, 1.0, 0.0]).unwrap(), 1.0);
        let d = tv_distance(&[0.5, 0.5], &[0.75, 0.25]).unwrap();
        assert!((d - 0.25).abs() < 1e-15);
        assert!((tv_by_events(&[0.5, 0.5], &[0.75, 0.25]) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn tv_matches_sup_over_events() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [2, 3] {
            for _ in 0..100 {
                let p = random_dist(&mut rng, n);
                let q = random_dist(&mut rng, n);
                let d = tv_distance(&p, &q).unwrap();
                assert!((d - tv_by_events(&p, &q)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn tv_rejects_bad_input() {
        assert!(tv_distance(&[0.5, 0.5], &[1.0, 0.0, 0.0]).is_err());
        assert!(tv_distance(&[0.5, 0.6], &[0.5, 0.5]).is_err());
        assert!(tv_distance(&[1.5, -0.5], &[0.5, 0.5]).is_err());
        assert!(tv_distance(&[], &[]).is_err());
    }

    fn single_layer_policy(logits_at: &[(usize, [f64; 3])], states: usize) -> Mlp {
        let mut net = Mlp::zeros(&[states, 3], Head::Softmax).unwrap();
        let last = net.last_layer();
        let mut values = last.values.clone();
        for (s, logits) in logits_at {
            for (a, l) in logits.iter().enumerate() {
                values[a * states + s] = *l;
            }
        }
        net.set_last_layer(&LastLayerView { shape: last.shape, values }).unwrap();
        net
    }

    fn sequence(policies: Vec<Mlp>) -> ClonedPolicySequence {
        ClonedPolicySequence {
            spec: NetSpec::new(vec![4, 3], Head::Softmax, 0),
            bundle_size: 1,
            mode: BundleMode::Disjoint,
            final_losses: vec![0.0; policies.len()],
            policies,
        }
    }

    #[test]
    fn epsilon_of_identical_policies_is_zero() {
        let net = Mlp::new(&NetSpec::new(vec![4, 5, 3], Head::Softmax, 3)).unwrap();
        let seq = sequence(vec![net.clone(), net.clone(), net]);
        assert_eq!(estimate_epsilon(&seq, 4).unwrap(), 0.0);
    }

    #[test]
    fn epsilon_picks_up_a_single_state_change() {
        let p = [0.5f64, 0.3, 0.2].map(f64::ln);
        let q = [0.2f64, 0.3, 0.5].map(f64::ln);
        let a = single_layer_policy(&[(2, p)], 4);
        let b = single_layer_policy(&[(2, q)], 4);
        let seq = sequence(vec![a, b]);
        let eps = estimate_epsilon(&seq, 4).unwrap();
        assert!((eps - 0.3).abs() < 1e-12, "{eps}");
        let pairs = consecutive_distances(&seq, 4).unwrap();
        assert!((pairs[0].mean - 0.3 / 4.0).abs() < 1e-12);
    }

    #[test]
    fn epsilon_never_shrinks_when_pairs_are_appended() {
        let nets: Vec<Mlp> =
            (0..6).map(|s| Mlp::new(&NetSpec::new(vec![4, 5, 3], Head::Softmax, s)).unwrap()).collect();
        let mut last = 0.0;
        for m in 2..=nets.len() {
            let eps = estimate_epsilon(&sequence(nets[..m].to_vec()), 4).unwrap();
            assert!(eps >= last);
            last = eps;
        }
    }

    #[test]
    fn epsilon_needs_two_policies() {
        let net = Mlp::zeros(&[4, 3], Head::Softmax).unwrap();
        let err = estimate_epsilon(&sequence(vec![net]), 4).unwrap_err();
        assert_eq!(err.category(), "usage");
    }

    #[test]
    fn mean_distance_never_exceeds_epsilon() {
        let nets: Vec<Mlp> =
            (0..5).map(|s| Mlp::new(&NetSpec::new(vec![4, 5, 3], Head::Softmax, s)).unwrap()).collect();
        let seq = sequence(nets);
        let eps = estimate_epsilon(&seq, 4).unwrap();
        for pair in consecutive_distances(&seq, 4).unwrap() {
            assert!(pair.mean <= eps);
        }
    }

    #[test]
    fn single_bundle_reduces_to_sample_term() {
        let inputs = base_inputs().with_bundle_size(1);
        let r = bundle_bound(&inputs).unwrap();
        assert_eq!(r.drift_term, 0.0);
        assert_eq!(r.spread_term, 0.0);
        assert_eq!(r.bundle_bound, 4.0 * (1e6f64 / 0.05).ln() / 15.0);
    }

    #[test]
    fn zero_epsilon_is_strictly_decreasing() {
        let inputs = BoundInputs { epsilon: 0.0, ..base_inputs() };
        let sweep = bound_sweep(&inputs, 100).unwrap();
        for w in sweep.windows(2) {
            assert!(w[1].bundle_bound < w[0].bundle_bound);
        }
        let best = optimal_bundle_size(&inputs, 100).unwrap();
        assert_eq!(best.bundle_size, 100);
    }

    #[test]
    fn bound_matches_reference_value() {
        // Reference computed independently in double precision.
        let r = bundle_bound(&base_inputs()).unwrap();
        assert!((r.bundle_bound - 5.378066539226992).abs() < 1e-12);
        let sum: f64 = r.terms().iter().sum();
        assert!((sum - r.bundle_bound).abs() < 1e-12);
        assert!((r.bundle_confidence - r.standard_confidence).abs() < 1e-15);
    }

    #[test]
    fn bound_rejects_gamma_one() {
        let inputs = BoundInputs { gamma: 1.0, ..base_inputs() };
        assert_eq!(bundle_bound(&inputs).unwrap_err().category(), "usage");
        assert!(lemma3_bounds(3, 0.1, 1.0).is_err());
        assert!(bundle_bound(&BoundInputs { delta: 0.0, ..base_inputs() }).is_err());
        assert!(bundle_bound(&BoundInputs { policy_class_size: 1.0, ..base_inputs() }).is_err());
        assert!(bundle_bound(&BoundInputs { bundle_size: 0, ..base_inputs() }).is_err());
    }

    #[test]
    fn lemma3_examples() {
        assert_eq!(lemma3_bounds(1, 0.3, 0.9).unwrap(), (0.0, 0.0));
        let (tv, l1) = lemma3_bounds(3, 0.1, 0.5).unwrap();
        assert!((tv - 0.2).abs() < 1e-15);
        assert!((l1 - 0.4).abs() < 1e-15);
    }

    #[test]
    fn corollary_form_is_sharper() {
        for b in 1..=100 {
            let (tv, _) = lemma3_bounds(b, 0.07, 0.9).unwrap();
            assert!(corollary_policy_bound(b, 0.07) <= tv);
        }
    }

    #[test]
    fn large_epsilon_prefers_single_trajectory() {
        let inputs = BoundInputs { epsilon: 1.0, ..base_inputs() };
        let best = optimal_bundle_size(&inputs, 50).unwrap();
        assert_eq!(best.bundle_size, 1);
        assert!(!best.advantage);
    }

    #[test]
    fn optimal_bundle_regression() {
        let inputs = BoundInputs {
            bundle_size: 1,
            horizon: 15,
            epsilon: 1e-5,
            gamma: 0.999,
            delta: 0.05,
            policy_class_size: 1e8,
        };
        let best = optimal_bundle_size(&inputs, 400).unwrap();
        assert_eq!(best.bundle_size, 12);
        assert!((best.bound - 0.9154803134779188).abs() < 1e-12);
        assert!((best.standard_bound - 2.7664778193240935).abs() < 1e-12);
        assert!(best.advantage);
    }

    #[test]
    fn sweep_csv_layout() {
        let csv = sweep_csv(&bound_sweep(&base_inputs(), 3).unwrap());
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], SWEEP_HEADER);
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("3,"));
    }

    fn dist(n: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.001f64..1.0, n).prop_map(|raw| {
            let s: f64 = raw.iter().sum();
            raw.iter().map(|v| v / s).collect()
        })
    }

    proptest! {
        #[test]
        fn tv_is_a_metric((p, q, r) in (2usize..6).prop_flat_map(|n| (dist(n), dist(n), dist(n)))) {
            let pq = tv_distance(&p, &q).unwrap();
            let qp = tv_distance(&q, &p).unwrap();
            prop_assert!((pq - qp).abs() < 1e-15);
            prop_assert!(tv_distance(&p, &p).unwrap() == 0.0);
            prop_assert!(pq >= 0.0 && pq <= 1.0 + 1e-12);
            let pr = tv_distance(&p, &r).unwrap();
            let rq = tv_distance(&r, &q).unwrap();
            prop_assert!(pq <= pr + rq + 1e-12);
        }

        #[test]
        fn decomposition_sums_to_total(b in 1usize..200, eps in 0.0f64..0.5, g in 0.01f64..0.999) {
            let r = bundle_bound(&BoundInputs { bundle_size: b, epsilon: eps, gamma: g, ..base_inputs() }).unwrap();
            let sum: f64 = r.terms().iter().sum();
            prop_assert!((sum - r.bundle_bound).abs() <= 1e-12 * r.bundle_bound.max(1.0));
        }
    }
}
