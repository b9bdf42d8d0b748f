//! Frame-wise selection policy.
//!
//! An MLP maps each frame descriptor to a keep-probability. The probabilities
//! define a product-of-Bernoulli distribution over binary frame masks, from
//! which training draws candidate groups and inference takes top-k masks.

use std::cmp::Ordering;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::numerics::{Bindings, NumericsError, ParamStore, Tape, Tensor, Var};
use crate::scalar::Scalar;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PolicyError {
    #[error("invalid policy config: {0}")]
    Config(String),
    #[error("feature dim {got} does not match policy input dim {expected}")]
    Dim { expected: usize, got: usize },
    #[error("candidate group size must be at least 2, got {0}")]
    GroupSize(usize),
    #[error("budget {k} outside 1..={frames}")]
    Budget { k: usize, frames: usize },
    #[error("mask covers {mask} frames, probabilities cover {probs}")]
    Length { mask: usize, probs: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub const PARAM_PREFIX: &str = "policy.";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub input_dim: usize,
    /// Hidden layer widths; a width-1 output head follows the last one.
    pub hidden: Vec<usize>,
    /// Probabilities are clamped to `[prob_clamp, 1 − prob_clamp]`.
    pub prob_clamp: f64,
    /// Masks with fewer selected frames are topped up by probability rank.
    pub min_frames: usize,
    pub gelu_exact: bool,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            input_dim: 32,
            hidden: vec![32, 64, 16],
            prob_clamp: 1e-6,
            min_frames: 1,
            gelu_exact: true,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<(), PolicyError> {
        if self.hidden.is_empty() || self.hidden.contains(&0) || self.input_dim == 0 {
            return Err(PolicyError::Config(
                "hidden widths must be non-empty and positive".into(),
            ));
        }
        if !(self.prob_clamp > 0.0 && self.prob_clamp < 0.5) {
            return Err(PolicyError::Config(format!(
                "prob_clamp must lie in (0, 0.5), got {}",
                self.prob_clamp
            )));
        }
        if self.min_frames == 0 {
            return Err(PolicyError::Config("min_frames must be at least 1".into()));
        }
        Ok(())
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = vec![self.input_dim];
        w.extend(&self.hidden);
        w.push(1);
        w
    }
}

/// Per-frame keep probabilities, each strictly inside `(0, 1)`, with an
/// optional ranking score per frame.
///
/// Probabilities are clamped, so distinct frames can share the value
/// `1 − ε_p`. When the policy supplies its pre-clamp logits, ranking uses
/// them instead and saturated frames keep their order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SelectionProbs {
    p: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    scores: Option<Vec<f64>>,
}

impl SelectionProbs {
    /// Panics if any value is outside the open unit interval.
    pub fn new(p: Vec<f64>) -> Self {
        assert!(
            p.iter().all(|&x| x > 0.0 && x < 1.0),
            "probabilities must lie in (0, 1)"
        );
        Self { p, scores: None }
    }

    /// Probabilities ranked by `scores`, which must order frames the same
    /// way as the unclamped probabilities.
    pub fn with_scores(p: Vec<f64>, scores: Vec<f64>) -> Self {
        assert_eq!(p.len(), scores.len(), "one score per frame");
        Self {
            scores: Some(scores),
            ..Self::new(p)
        }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }

    /// Frame indices by descending score (probability when no scores are
    /// attached), ties to the lower index.
    pub fn ranking(&self) -> Vec<usize> {
        let key = self.scores.as_deref().unwrap_or(&self.p);
        let mut idx: Vec<usize> = (0..key.len()).collect();
        idx.sort_by(|&a, &b| {
            key[b]
                .partial_cmp(&key[a])
                .unwrap_or(Ordering::Equal)
                .then(a.cmp(&b))
        });
        idx
    }
}

/// Binary keep/drop decision per frame.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize)]
#[serde(transparent)]
pub struct SelectionMask(Vec<bool>);

impl SelectionMask {
    pub fn new(bits: Vec<bool>) -> Self {
        Self(bits)
    }

    pub fn from_indices(frames: usize, indices: &[usize]) -> Self {
        let mut bits = vec![false; frames];
        for &i in indices {
            bits[i] = true;
        }
        Self(bits)
    }

    pub fn bits(&self) -> &[bool] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self) -> usize {
        self.0.iter().filter(|&&b| b).count()
    }

    /// Selected frame indices, strictly increasing.
    pub fn selected(&self) -> Vec<usize> {
        self.0
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn is_superset_of(&self, other: &SelectionMask) -> bool {
        self.0.iter().zip(&other.0).all(|(&a, &b)| a || !b)
    }
}

/// Keeps the `k` highest-probability frames.
fn top_k_mask(ranking: &[usize], frames: usize, k: usize) -> SelectionMask {
    SelectionMask::from_indices(frames, &ranking[..k])
}

#[derive(Clone, Debug)]
pub struct Policy {
    pub config: PolicyConfig,
}

impl Policy {
    pub fn new(config: PolicyConfig) -> Result<Self, PolicyError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn init_params<S: Scalar>(&self, rng: &mut impl Rng) -> ParamStore<S> {
        let mut p = ParamStore::new();
        let widths = self.config.widths();
        for (i, pair) in widths.windows(2).enumerate() {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let normal = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive std");
            let w = (0..fan_in * fan_out)
                .map(|_| S::of(normal.sample(rng)))
                .collect();
            p.insert(
                format!("{PARAM_PREFIX}l{i}.w"),
                Tensor::new(vec![fan_in, fan_out], w).expect("sized"),
            )
            .expect("unique policy names");
            p.insert(format!("{PARAM_PREFIX}l{i}.b"), Tensor::zeros(&[fan_out]))
                .expect("unique policy names");
        }
        p
    }

    /// Pre-sigmoid output of the MLP for every row of `features` (`T × D`),
    /// shape `T × 1`.
    pub fn logits<'t, S: Scalar>(
        &self,
        params: &Bindings<'t, S>,
        features: Var<'t, S>,
    ) -> Result<Var<'t, S>, PolicyError> {
        let got = features.value().cols();
        if got != self.config.input_dim {
            return Err(PolicyError::Dim {
                expected: self.config.input_dim,
                got,
            });
        }
        let layers = self.config.widths().len() - 1;
        let mut h = features;
        for i in 0..layers {
            h = h
                .matmul(params.get(&format!("{PARAM_PREFIX}l{i}.w"))?)?
                .add_bias(params.get(&format!("{PARAM_PREFIX}l{i}.b"))?)?;
            if i + 1 < layers {
                h = h.gelu(self.config.gelu_exact);
            }
        }
        Ok(h)
    }

    /// Clamped keep-probabilities from logits.
    pub fn squash<'t, S: Scalar>(&self, logits: Var<'t, S>) -> Var<'t, S> {
        let eps = S::of(self.config.prob_clamp);
        logits.sigmoid().clamp(eps, S::one() - eps)
    }

    /// Applies the MLP to every row of `features` (`T × D`), returning
    /// clamped probabilities of shape `T × 1`.
    pub fn forward<'t, S: Scalar>(
        &self,
        params: &Bindings<'t, S>,
        features: Var<'t, S>,
    ) -> Result<Var<'t, S>, PolicyError> {
        Ok(self.squash(self.logits(params, features)?))
    }

    /// Value-only probabilities for a `T × D` feature matrix.
    pub fn probs<S: Scalar>(
        &self,
        features: &Tensor<S>,
        params: &ParamStore<S>,
    ) -> Result<SelectionProbs, PolicyError> {
        let tape = Tape::new();
        let b = params.bind(&tape, |_| false);
        let logits = self.logits(&b, tape.constant(features.clone()))?;
        let p = self.squash(logits);
        Ok(selection_probs(p, logits))
    }

    /// Adds top-ranked frames until the mask holds at least `min_frames`.
    pub fn repair(&self, mask: SelectionMask, probs: &SelectionProbs) -> SelectionMask {
        let need = self.config.min_frames.min(mask.len());
        if mask.count() >= need {
            return mask;
        }
        let mut bits = mask.0;
        let mut have = bits.iter().filter(|&&b| b).count();
        for i in probs.ranking() {
            if have >= need {
                break;
            }
            if !bits[i] {
                bits[i] = true;
                have += 1;
            }
        }
        SelectionMask(bits)
    }

    /// Independent Bernoulli draw per frame, repaired to `min_frames`.
    pub fn sample_mask(&self, probs: &SelectionProbs, rng: &mut impl Rng) -> SelectionMask {
        let bits = probs
            .as_slice()
            .iter()
            .map(|&p| rng.random::<f64>() < p)
            .collect();
        self.repair(SelectionMask(bits), probs)
    }

    /// `K − 1` deterministic top-k masks over a shrinking budget schedule,
    /// followed by one stochastic sample.
    ///
    /// Budgets are `max(1, T − i·s)` for `i = 0..K−1` with
    /// `s = max(1, ⌊T/K⌋)`; ranking ties go to the lower frame index.
    pub fn candidate_sweep(
        &self,
        probs: &SelectionProbs,
        group_size: usize,
        rng: &mut impl Rng,
    ) -> Result<Vec<SelectionMask>, PolicyError> {
        if group_size < 2 {
            return Err(PolicyError::GroupSize(group_size));
        }
        let frames = probs.len();
        if frames == 0 {
            return Err(PolicyError::Budget { k: 1, frames });
        }
        let ranking = probs.ranking();
        let mut out: Vec<SelectionMask> = sweep_budgets(frames, group_size)
            .into_iter()
            .map(|k| self.repair(top_k_mask(&ranking, frames, k), probs))
            .collect();
        out.push(self.sample_mask(probs, rng));
        Ok(out)
    }
}

/// Reads clamped probabilities ranked by their logits off the tape.
pub fn selection_probs<S: Scalar>(p: Var<'_, S>, logits: Var<'_, S>) -> SelectionProbs {
    let f = |v: Var<'_, S>| {
        v.value()
            .data()
            .iter()
            .map(|x| x.as_f64())
            .collect::<Vec<_>>()
    };
    SelectionProbs::with_scores(f(p), f(logits))
}

/// Deterministic budgets of a candidate sweep, largest first.
pub fn sweep_budgets(frames: usize, group_size: usize) -> Vec<usize> {
    let step = (frames / group_size).max(1);
    (0..group_size.saturating_sub(1))
        .map(|i| frames.saturating_sub(i * step).max(1))
        .collect()
}

/// Exactly `k` frames: the `k` most probable, ties to the lower index.
pub fn select_top_k(probs: &SelectionProbs, k: usize) -> Result<SelectionMask, PolicyError> {
    if k == 0 || k > probs.len() {
        return Err(PolicyError::Budget {
            k,
            frames: probs.len(),
        });
    }
    Ok(top_k_mask(&probs.ranking(), probs.len(), k))
}

/// `Σ_t b_t ln p_t + (1 − b_t) ln(1 − p_t)`.
pub fn mask_log_prob(mask: &SelectionMask, probs: &SelectionProbs) -> Result<f64, PolicyError> {
    if mask.len() != probs.len() {
        return Err(PolicyError::Length {
            mask: mask.len(),
            probs: probs.len(),
        });
    }
    let mut acc = 0.0;
    for (&b, &p) in mask.bits().iter().zip(probs.as_slice()) {
        acc += if b { p.ln() } else { (1.0 - p).ln() };
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::finite_diff_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn policy(dim: usize) -> Policy {
        Policy::new(PolicyConfig {
            input_dim: dim,
            hidden: vec![6, 5],
            ..PolicyConfig::default()
        })
        .unwrap()
    }

    fn random_features(rng: &mut impl Rng, t: usize, d: usize) -> Tensor<f64> {
        Tensor::new(
            vec![t, d],
            (0..t * d).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn zero_weights_give_one_half() {
        let pol = policy(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut p: ParamStore<f64> = pol.init_params(&mut rng);
        let names: Vec<String> = p.names().map(str::to_string).collect();
        for n in names {
            p.get_mut(&n).unwrap().data_mut().fill(0.0);
        }
        let probs = pol.probs(&random_features(&mut rng, 5, 4), &p).unwrap();
        assert!(probs.as_slice().iter().all(|&x| x == 0.5));
    }

    #[test]
    fn frame_wise_and_permutation_equivariant() {
        let pol = policy(4);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p: ParamStore<f64> = pol.init_params(&mut rng);
        let f = random_features(&mut rng, 6, 4);
        let base = pol.probs(&f, &p).unwrap();
        let perm = [5, 2, 0, 4, 1, 3];
        let rows: Vec<Vec<f64>> = perm.iter().map(|&i| f.row(i).to_vec()).collect();
        let permuted = pol.probs(&Tensor::from_rows(&rows), &p).unwrap();
        for (j, &i) in perm.iter().enumerate() {
            assert_eq!(permuted.as_slice()[j], base.as_slice()[i]);
        }
        let dup = Tensor::from_rows(&[f.row(0).to_vec(), f.row(0).to_vec()]);
        let d = pol.probs(&dup, &p).unwrap();
        assert_eq!(d.as_slice()[0], d.as_slice()[1]);
    }

    #[test]
    fn wrong_feature_dim_is_rejected() {
        let pol = policy(4);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p: ParamStore<f64> = pol.init_params(&mut rng);
        let err = pol.probs(&random_features(&mut rng, 3, 5), &p).unwrap_err();
        assert_eq!(
            err,
            PolicyError::Dim {
                expected: 4,
                got: 5
            }
        );
    }

    #[test]
    fn mlp_gradients_match_finite_differences() {
        let pol = policy(4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p: ParamStore<f64> = pol.init_params(&mut rng);
        let f = random_features(&mut rng, 5, 4);
        let mask = std::rc::Rc::new(vec![true, false, true, true, false]);
        let r = finite_diff_check(
            |tape, b| -> Result<_, PolicyError> {
                let probs = pol.forward(b, tape.constant(f.clone()))?;
                Ok(tape.bernoulli_log_prob(probs, mask.clone())?)
            },
            &p,
            1e-5,
        )
        .unwrap();
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn uniform_log_prob() {
        let probs = SelectionProbs::new(vec![0.5; 32]);
        let mask = SelectionMask::from_indices(32, &[1, 7, 30]);
        let lp = mask_log_prob(&mask, &probs).unwrap();
        assert!((lp - 32.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((lp + 22.18071).abs() < 1e-5);
    }

    #[test]
    fn hand_computed_log_prob() {
        let probs = SelectionProbs::new(vec![0.9, 0.1]);
        let lp = mask_log_prob(&SelectionMask::new(vec![true, false]), &probs).unwrap();
        assert!((lp - 2.0 * 0.9f64.ln()).abs() < 1e-15);
        assert!((lp + 0.21072).abs() < 1e-5);
    }

    #[test]
    fn sweep_budget_schedules() {
        assert_eq!(sweep_budgets(8, 4), vec![8, 6, 4]);
        assert_eq!(sweep_budgets(32, 8), vec![32, 28, 24, 20, 16, 12, 8]);
        // duplicates are allowed once the schedule bottoms out
        assert_eq!(sweep_budgets(3, 8), vec![3, 2, 1, 1, 1, 1, 1]);
    }

    #[test]
    fn sweep_produces_nested_masks_plus_sample() {
        let pol = policy(4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let probs = SelectionProbs::new((0..8).map(|_| rng.random_range(0.05..0.95)).collect());
        let masks = pol.candidate_sweep(&probs, 4, &mut rng).unwrap();
        assert_eq!(masks.len(), 4);
        let counts: Vec<usize> = masks[..3].iter().map(SelectionMask::count).collect();
        assert_eq!(counts, vec![8, 6, 4]);
        for w in masks[..3].windows(2) {
            assert!(w[0].is_superset_of(&w[1]));
        }
        assert!(pol.candidate_sweep(&probs, 1, &mut rng).is_err());
    }

    #[test]
    fn equal_probabilities_sweep_picks_lowest_indices() {
        let pol = policy(4);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let probs = SelectionProbs::new(vec![0.3; 8]);
        let masks = pol.candidate_sweep(&probs, 4, &mut rng).unwrap();
        assert_eq!(masks[2].selected(), vec![0, 1, 2, 3]);
        assert_eq!(masks[1].selected(), vec![0, 1, 2, 3, 4, 5]);
    }

    #[test]
    fn top_k_examples() {
        let p = SelectionProbs::new(vec![0.1, 0.9, 0.5]);
        assert_eq!(select_top_k(&p, 2).unwrap().selected(), vec![1, 2]);
        assert_eq!(select_top_k(&p, 3).unwrap().count(), 3);
        assert!(select_top_k(&p, 0).is_err());
        assert!(select_top_k(&p, 4).is_err());
        let flat = SelectionProbs::new(vec![0.2; 32]);
        assert_eq!(select_top_k(&flat, 4).unwrap().selected(), vec![0, 1, 2, 3]);
    }

    #[test]
    fn sampling_is_seeded_and_never_empty() {
        let pol = policy(4);
        let eps = pol.config.prob_clamp;
        let low = SelectionProbs::new(vec![eps; 16]);
        for seed in 0..50 {
            let m = pol.sample_mask(&low, &mut ChaCha8Rng::seed_from_u64(seed));
            assert!(m.count() >= 1);
        }
        let p = SelectionProbs::new((0..16).map(|i| 0.05 + 0.05 * i as f64).collect());
        let a = pol.sample_mask(&p, &mut ChaCha8Rng::seed_from_u64(9));
        let b = pol.sample_mask(&p, &mut ChaCha8Rng::seed_from_u64(9));
        assert_eq!(a, b);
    }

    #[test]
    fn high_probability_sampling_rate_within_binomial_interval() {
        let pol = policy(4);
        let p = 1.0 - pol.config.prob_clamp;
        let probs = SelectionProbs::new(vec![p; 4]);
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let draws = 100_000;
        let mut kept = 0usize;
        for _ in 0..draws {
            kept += pol.sample_mask(&probs, &mut rng).count();
        }
        let n = (draws * 4) as f64;
        let rate = kept as f64 / n;
        let sigma = (p * (1.0 - p) / n).sqrt();
        // a repaired empty mask can only add frames, so allow one extra frame of slack
        assert!((rate - p).abs() <= 3.0 * sigma + 1.0 / n, "rate {rate}");
    }
}
