//! Posterior over a finite committee of structures.
//!
//! Weights live in log space and are renormalised with log-sum-exp after every
//! update. Updates return a new posterior; the committee itself is shared.

use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::structures::{decompose, Answer, Atom, PredictionScale, Query, SpaceKind, Structure};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    ZeroOne,
    Squared,
    Logistic,
}

/// A loss on predictions in `[-bound, bound]` against answers in `{-1, +1}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossSpec {
    pub kind: LossKind,
    pub bound: f64,
}

impl LossSpec {
    pub fn zero_one() -> LossSpec {
        LossSpec { kind: LossKind::ZeroOne, bound: 1.0 }
    }

    pub fn new(kind: LossKind, bound: f64) -> Result<LossSpec> {
        if !(bound > 0.0) || !bound.is_finite() {
            return Err(Error::Config(format!("prediction bound must be positive, got {bound}")));
        }
        Ok(LossSpec { kind, bound })
    }

    /// Upper bound on the loss over the prediction range.
    pub fn loss_bound(&self) -> f64 {
        match self.kind {
            LossKind::ZeroOne => 1.0,
            LossKind::Squared => (1.0 + self.bound).powi(2),
            LossKind::Logistic => self.bound.exp().ln_1p(),
        }
    }

    /// Lipschitz constant in the prediction argument.
    pub fn lipschitz(&self) -> f64 {
        match self.kind {
            LossKind::ZeroOne | LossKind::Logistic => 1.0,
            LossKind::Squared => 2.0 * (1.0 + self.bound),
        }
    }

    /// Largest update strength covered by the drift guarantees for Massart
    /// margin `lambda`.
    pub fn default_beta(&self, lambda: f64) -> f64 {
        match self.kind {
            LossKind::ZeroOne => lambda / 2.0,
            _ => {
                let c = self.lipschitz();
                (lambda / (2.0 * c * c)).min(1.0 / self.loss_bound())
            }
        }
    }

    pub fn loss(&self, prediction: &Answer, answer: &Answer) -> Result<f64> {
        match self.kind {
            LossKind::ZeroOne => Ok(if prediction == answer { 0.0 } else { 1.0 }),
            LossKind::Squared => {
                let z = prediction.as_real()?.clamp(-self.bound, self.bound);
                let y = answer.as_real()?;
                Ok((y - z) * (y - z))
            }
            LossKind::Logistic => {
                let z = prediction.as_real()?.clamp(-self.bound, self.bound);
                let y = answer.as_real()?;
                Ok((-y * z).exp().ln_1p())
            }
        }
    }
}

/// A structure drawn from the committee together with its answers on every
/// atom of a query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    /// Index of the committee member that produced the answers.
    pub member: usize,
    pub answers: Vec<(Atom, Answer)>,
}

impl Snapshot {
    pub fn answer(&self, atom: &Atom) -> Option<Answer> {
        self.answers.iter().find(|(a, _)| a == atom).map(|(_, y)| *y)
    }
}

/// One round of feedback: the query, the proposed snapshot, and the atom the
/// expert answered.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub step: usize,
    pub query: Query,
    pub snapshot: Vec<(Atom, Answer)>,
    pub atom: Atom,
    pub answer: Answer,
    /// True when the answer confirms the snapshot rather than correcting it.
    pub accepted: bool,
}

impl FeedbackEvent {
    pub fn new(step: usize, query: Query, snapshot: Vec<(Atom, Answer)>, atom: Atom, answer: Answer) -> Result<Self> {
        let proposed = snapshot
            .iter()
            .find(|(a, _)| *a == atom)
            .map(|(_, y)| *y)
            .ok_or_else(|| Error::InvalidQuery(format!("atom {atom} is not part of the query")))?;
        Ok(FeedbackEvent { step, query, snapshot, atom, answer, accepted: proposed == answer })
    }
}

/// JSON view of a posterior: committee indices and their weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PosteriorSnapshot {
    pub ids: Vec<usize>,
    pub weights: Vec<f64>,
}

/// Normalised distribution over an explicit committee.
#[derive(Clone, Debug)]
pub struct FinitePosterior<S> {
    structures: Arc<Vec<S>>,
    log_weights: Vec<f64>,
}

impl<S: Structure> FinitePosterior<S> {
    pub fn uniform(structures: Vec<S>) -> Result<Self> {
        let n = structures.len();
        FinitePosterior::from_log_weights(structures, vec![0.0; n])
    }

    pub fn from_log_weights(structures: Vec<S>, log_weights: Vec<f64>) -> Result<Self> {
        if structures.is_empty() {
            return Err(Error::Config("a committee needs at least one structure".into()));
        }
        if structures.len() != log_weights.len() {
            return Err(Error::Config("one log-weight per structure required".into()));
        }
        if log_weights.iter().any(|w| w.is_nan() || *w == f64::INFINITY) {
            return Err(Error::Numeric("log-weights must be finite or -inf".into()));
        }
        let mut log_weights = log_weights;
        normalize(&mut log_weights)?;
        Ok(FinitePosterior { structures: Arc::new(structures), log_weights })
    }

    pub fn len(&self) -> usize {
        self.structures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.structures.is_empty()
    }

    pub fn structures(&self) -> &[S] {
        &self.structures
    }

    pub fn structure(&self, i: usize) -> &S {
        &self.structures[i]
    }

    pub fn log_weights(&self) -> &[f64] {
        &self.log_weights
    }

    pub fn weights(&self) -> Vec<f64> {
        self.log_weights.iter().map(|w| w.exp()).collect()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.log_weights[i].exp()
    }

    fn with_log_weights(&self, mut log_weights: Vec<f64>) -> Result<Self> {
        normalize(&mut log_weights)?;
        Ok(FinitePosterior { structures: Arc::clone(&self.structures), log_weights })
    }

    /// Multiplies each weight by `exp(-beta * 1[g(atom) != answer])`.
    /// `beta = f64::INFINITY` removes every disagreeing structure.
    pub fn update_zero_one(&self, atom: &Atom, answer: &Answer, beta: f64) -> Result<Self> {
        if beta.is_nan() || beta < 0.0 {
            return Err(Error::Config(format!("beta must be >= 0, got {beta}")));
        }
        let mut lw = self.log_weights.clone();
        for (w, g) in lw.iter_mut().zip(self.structures.iter()) {
            if g.eval(atom)? != *answer {
                // Avoids inf * 0 when beta is infinite.
                *w = if beta.is_infinite() { f64::NEG_INFINITY } else { *w - beta };
            }
        }
        self.with_log_weights(lw)
    }

    /// Multiplies each weight by `exp(-beta * loss(g(atom), answer))`.
    pub fn update_general(&self, atom: &Atom, answer: &Answer, beta: f64, loss: &LossSpec) -> Result<Self> {
        if !beta.is_finite() || beta < 0.0 {
            return Err(Error::Config(format!("general-loss updates need finite beta >= 0, got {beta}")));
        }
        if loss.kind == LossKind::ZeroOne {
            return self.update_zero_one(atom, answer, beta);
        }
        if beta > 1.0 / loss.loss_bound() {
            log::warn!(
                "beta = {beta} exceeds 1/B = {:.4}; drift guarantees do not cover this setting",
                1.0 / loss.loss_bound()
            );
        }
        let mut lw = self.log_weights.clone();
        for (w, g) in lw.iter_mut().zip(self.structures.iter()) {
            let l = loss.loss(&g.eval(atom)?, answer)?;
            if !l.is_finite() {
                return Err(Error::Numeric(format!("loss evaluated to {l}")));
            }
            *w -= beta * l;
        }
        self.with_log_weights(lw)
    }

    /// Posterior mass of each distinct answer to `atom`.
    pub fn answer_masses(&self, atom: &Atom) -> Result<Vec<(Answer, f64)>> {
        let mut masses: Vec<(Answer, f64)> = Vec::new();
        for (g, lw) in self.structures.iter().zip(&self.log_weights) {
            if *lw == f64::NEG_INFINITY {
                continue;
            }
            let y = g.eval(atom)?;
            let w = lw.exp();
            match masses.iter_mut().find(|(a, _)| *a == y) {
                Some((_, m)) => *m += w,
                None => masses.push((y, w)),
            }
        }
        Ok(masses)
    }

    fn discrete_masses(&self, atom: &Atom) -> Result<Vec<(Answer, f64)>> {
        let masses = self.answer_masses(atom)?;
        if masses.iter().any(|(y, _)| !y.is_discrete()) {
            return Err(Error::AnswerMismatch(
                "uncertainty needs a discrete answer space; use variance for real predictions".into(),
            ));
        }
        Ok(masses)
    }

    /// Probability that two independent draws disagree on `atom`:
    /// `1 - sum_y p_y^2`.
    pub fn uncertainty_atom(&self, atom: &Atom) -> Result<f64> {
        let masses = self.discrete_masses(atom)?;
        Ok((1.0 - masses.iter().map(|(_, p)| p * p).sum::<f64>()).max(0.0))
    }

    pub fn uncertainty_query(&self, query: &Query, space: SpaceKind) -> Result<f64> {
        let atoms = decompose(query, space)?;
        mean_over(&atoms, |a| self.uncertainty_atom(a))
    }

    /// Posterior variance of clipped real predictions on `atom`.
    pub fn variance_atom(&self, atom: &Atom, scale: &PredictionScale) -> Result<f64> {
        let mut preds = Vec::with_capacity(self.len());
        for (g, lw) in self.structures.iter().zip(&self.log_weights) {
            if *lw == f64::NEG_INFINITY {
                continue;
            }
            preds.push((lw.exp(), scale.clip(g.eval(atom)?.as_real()?)));
        }
        let mean: f64 = preds.iter().map(|(w, z)| w * z).sum();
        Ok(preds.iter().map(|(w, z)| w * (z - mean) * (z - mean)).sum())
    }

    pub fn variance_query(&self, query: &Query, space: SpaceKind, scale: &PredictionScale) -> Result<f64> {
        let atoms = decompose(query, space)?;
        mean_over(&atoms, |a| self.variance_atom(a, scale))
    }

    /// `1 - max_y pi(g(atom) = y)`.
    pub fn shrinkage_atom(&self, atom: &Atom) -> Result<f64> {
        let masses = self.discrete_masses(atom)?;
        let top = masses.iter().map(|(_, p)| *p).fold(0.0, f64::max);
        Ok((1.0 - top).max(0.0))
    }

    pub fn shrinkage_query(&self, query: &Query, space: SpaceKind) -> Result<f64> {
        let atoms = decompose(query, space)?;
        mean_over(&atoms, |a| self.shrinkage_atom(a))
    }

    /// Categorical sampler over committee indices.
    pub fn sampler(&self) -> CommitteeSampler {
        let weights = self.weights();
        CommitteeSampler { index: WeightedIndex::new(&weights).expect("normalised weights") }
    }

    pub fn sample_index<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.sampler().draw(rng)
    }

    /// `n` i.i.d. draws from the posterior.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<&S> {
        let sampler = self.sampler();
        (0..n).map(|_| &self.structures[sampler.draw(rng)]).collect()
    }

    pub fn snapshot(&self) -> PosteriorSnapshot {
        PosteriorSnapshot { ids: (0..self.len()).collect(), weights: self.weights() }
    }

    /// Index of the highest-weight structure (lowest index on ties).
    pub fn mode_index(&self) -> usize {
        let mut best = 0;
        for (i, w) in self.log_weights.iter().enumerate() {
            if *w > self.log_weights[best] {
                best = i;
            }
        }
        best
    }
}

impl<S: Structure + PartialEq> FinitePosterior<S> {
    /// Posterior mass on `target`; zero when it is not in the committee.
    pub fn target_mass(&self, target: &S) -> f64 {
        self.structures
            .iter()
            .zip(&self.log_weights)
            .filter(|(g, _)| *g == target)
            .map(|(_, w)| w.exp())
            .sum()
    }
}

/// Reusable categorical sampler for one posterior.
#[derive(Clone, Debug)]
pub struct CommitteeSampler {
    index: WeightedIndex<f64>,
}

impl CommitteeSampler {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        self.index.sample(rng)
    }
}

fn mean_over(atoms: &[Atom], mut f: impl FnMut(&Atom) -> Result<f64>) -> Result<f64> {
    let mut total = 0.0;
    for a in atoms {
        total += f(a)?;
    }
    Ok(total / atoms.len() as f64)
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

fn normalize(log_weights: &mut [f64]) -> Result<()> {
    let lse = log_sum_exp(log_weights);
    if lse == f64::NEG_INFINITY {
        return Err(Error::EmptyVersionSpace);
    }
    if !lse.is_finite() {
        return Err(Error::Numeric(format!("log normaliser is {lse}")));
    }
    for w in log_weights.iter_mut() {
        *w -= lse;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structures::{FeaturePool, FlatClustering, Labeling, LinearOutput, LinearSeparator};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn labelings(rows: &[&[i64]]) -> Vec<Labeling> {
        rows.iter().map(|r| Labeling::new(r.to_vec())).collect()
    }

    fn reals(values: &[f64]) -> Vec<LinearSeparator> {
        let pool = Arc::new(FeaturePool::new(vec![vec![1.0]]).unwrap());
        values
            .iter()
            .map(|&v| LinearSeparator::new(vec![v], pool.clone(), LinearOutput::Real).unwrap())
            .collect()
    }

    fn lse_is_zero<S: Structure>(p: &FinitePosterior<S>) -> bool {
        log_sum_exp(p.log_weights()).abs() < 1e-9
    }

    #[test]
    fn zero_beta_is_identity() {
        let p = FinitePosterior::uniform(labelings(&[&[0], &[1], &[1]])).unwrap();
        let q = p.update_zero_one(&Atom::point(0), &Answer::Class(0), 0.0).unwrap();
        assert_eq!(p.log_weights(), q.log_weights());
    }

    #[test]
    fn ln2_update_gives_two_thirds() {
        let p = FinitePosterior::uniform(labelings(&[&[0], &[1]])).unwrap();
        let q = p.update_zero_one(&Atom::point(0), &Answer::Class(0), 2f64.ln()).unwrap();
        let w = q.weights();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-12);
        assert!((w[1] - 1.0 / 3.0).abs() < 1e-12);
        assert!(lse_is_zero(&q));
    }

    #[test]
    fn infinite_beta_filters() {
        let p = FinitePosterior::uniform(labelings(&[&[0], &[1], &[2]])).unwrap();
        let q = p.update_zero_one(&Atom::point(0), &Answer::Class(1), f64::INFINITY).unwrap();
        assert_eq!(q.weights(), vec![0.0, 1.0, 0.0]);
        assert_eq!(q.target_mass(&Labeling::new(vec![1])), 1.0);
        let err = q.update_zero_one(&Atom::point(0), &Answer::Class(2), f64::INFINITY);
        assert!(matches!(err, Err(Error::EmptyVersionSpace)));
    }

    #[test]
    fn infinite_beta_equals_filter_then_renormalise() {
        let p = FinitePosterior::from_log_weights(labelings(&[&[0], &[1], &[1], &[0]]), vec![0.1, -0.3, 0.7, 1.2]).unwrap();
        let q = p.update_zero_one(&Atom::point(0), &Answer::Class(1), f64::INFINITY).unwrap();
        let raw = [(-0.3f64).exp(), 0.7f64.exp()];
        let z = raw[0] + raw[1];
        let w = q.weights();
        assert_eq!(w[0], 0.0);
        assert_eq!(w[3], 0.0);
        assert!((w[1] - raw[0] / z).abs() < 1e-12);
        assert!((w[2] - raw[1] / z).abs() < 1e-12);
    }

    #[test]
    fn squared_loss_update() {
        let p = FinitePosterior::uniform(reals(&[1.0, -1.0])).unwrap();
        let loss = LossSpec::new(LossKind::Squared, 5.0).unwrap();
        let q = p.update_general(&Atom::point(0), &Answer::Class(1), 1.0, &loss).unwrap();
        let w = q.weights();
        // losses 0 and 4
        let e4 = (-4.0f64).exp();
        assert!((w[0] - 1.0 / (1.0 + e4)).abs() < 1e-12);
        assert!((w[0] - 0.98201).abs() < 1e-5);
        assert!((w[1] - 0.01799).abs() < 1e-5);

        let exact = FinitePosterior::uniform(reals(&[1.0, 1.0])).unwrap();
        let same = exact.update_general(&Atom::point(0), &Answer::Class(1), 1.0, &loss).unwrap();
        assert_eq!(same.weights(), exact.weights());
    }

    #[test]
    fn zero_one_kind_matches_zero_one_update() {
        let p = FinitePosterior::from_log_weights(labelings(&[&[0], &[1], &[2]]), vec![0.0, 0.5, -1.0]).unwrap();
        let a = p.update_zero_one(&Atom::point(0), &Answer::Class(2), 0.7).unwrap();
        let b = p.update_general(&Atom::point(0), &Answer::Class(2), 0.7, &LossSpec::zero_one()).unwrap();
        assert_eq!(a.log_weights(), b.log_weights());
    }

    #[test]
    fn loss_constants() {
        let sq = LossSpec::new(LossKind::Squared, 5.0).unwrap();
        assert_eq!(sq.loss_bound(), 36.0);
        assert_eq!(sq.lipschitz(), 12.0);
        let lg = LossSpec::new(LossKind::Logistic, 2.0).unwrap();
        assert!((lg.loss_bound() - (1.0 + 2f64.exp()).ln()).abs() < 1e-12);
        assert_eq!(lg.lipschitz(), 1.0);
        assert_eq!(LossSpec::zero_one().loss_bound(), 1.0);
        assert_eq!(LossSpec::zero_one().default_beta(0.2), 0.1);
        assert!((sq.default_beta(1.0) - (1.0f64 / 288.0).min(1.0 / 36.0)).abs() < 1e-15);
    }

    #[test]
    fn uncertainty_examples() {
        let point = FinitePosterior::uniform(labelings(&[&[3]])).unwrap();
        assert_eq!(point.uncertainty_atom(&Atom::point(0)).unwrap(), 0.0);
        let two = FinitePosterior::uniform(labelings(&[&[0], &[1]])).unwrap();
        assert!((two.uncertainty_atom(&Atom::point(0)).unwrap() - 0.5).abs() < 1e-15);
        let p = FinitePosterior::from_log_weights(
            labelings(&[&[0], &[1], &[2]]),
            vec![0.5f64.ln(), 0.3f64.ln(), 0.2f64.ln()],
        )
        .unwrap();
        assert!((p.uncertainty_atom(&Atom::point(0)).unwrap() - 0.62).abs() < 1e-12);
        assert!(reals_posterior().uncertainty_atom(&Atom::point(0)).is_err());
    }

    fn reals_posterior() -> FinitePosterior<LinearSeparator> {
        FinitePosterior::uniform(reals(&[1.0, -1.0])).unwrap()
    }

    #[test]
    fn query_uncertainty_is_atom_mean() {
        let point = FinitePosterior::uniform(labelings(&[&[1, 0]])).unwrap();
        let q = Query::new(vec![0, 1]).unwrap();
        assert_eq!(point.uncertainty_query(&q, SpaceKind::Classification).unwrap(), 0.0);
        let p = FinitePosterior::uniform(labelings(&[&[0, 5], &[1, 5]])).unwrap();
        let single = Query::new(vec![0]).unwrap();
        assert_eq!(
            p.uncertainty_query(&single, SpaceKind::Classification).unwrap(),
            p.uncertainty_atom(&Atom::point(0)).unwrap()
        );
        assert!((p.uncertainty_query(&q, SpaceKind::Classification).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn variance_examples() {
        let scale = PredictionScale::new(5.0).unwrap();
        let point = FinitePosterior::uniform(reals(&[0.7])).unwrap();
        assert_eq!(point.variance_atom(&Atom::point(0), &scale).unwrap(), 0.0);
        assert!((reals_posterior().variance_atom(&Atom::point(0), &scale).unwrap() - 1.0).abs() < 1e-15);
        let three = FinitePosterior::uniform(reals(&[0.0, 0.0, 3.0])).unwrap();
        assert!((three.variance_atom(&Atom::point(0), &scale).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn shrinkage_examples() {
        let point = FinitePosterior::uniform(labelings(&[&[0]])).unwrap();
        assert_eq!(point.shrinkage_atom(&Atom::point(0)).unwrap(), 0.0);
        let p = FinitePosterior::from_log_weights(labelings(&[&[0], &[1]]), vec![0.7f64.ln(), 0.3f64.ln()]).unwrap();
        assert!((p.shrinkage_atom(&Atom::point(0)).unwrap() - 0.3).abs() < 1e-12);
        let u = FinitePosterior::uniform(labelings(&[&[0], &[1]])).unwrap();
        assert!((u.shrinkage_atom(&Atom::point(0)).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sampling_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let point = FinitePosterior::uniform(labelings(&[&[4]])).unwrap();
        assert!(point.sample(100, &mut rng).iter().all(|g| g.labels() == [4]));

        let n = 100_000;
        let u = FinitePosterior::uniform(labelings(&[&[0], &[1]])).unwrap();
        let ones = u.sample(n, &mut rng).iter().filter(|g| g.labels()[0] == 1).count();
        // 99% binomial band: 2.576 * sqrt(0.25 / n) ~ 0.0041
        assert!((ones as f64 / n as f64 - 0.5).abs() < 0.01);

        let upd = u.update_zero_one(&Atom::point(0), &Answer::Class(0), 2f64.ln()).unwrap();
        let zeros = upd.sample(n, &mut rng).iter().filter(|g| g.labels()[0] == 0).count();
        assert!((zeros as f64 / n as f64 - 2.0 / 3.0).abs() < 0.01);
    }

    #[test]
    fn target_mass_tracks_updates() {
        let committee = labelings(&[&[0, 0], &[0, 1], &[1, 0], &[1, 1]]);
        let target = committee[1].clone();
        let mut p = FinitePosterior::uniform(committee).unwrap();
        assert!((p.target_mass(&target) - 0.25).abs() < 1e-15);
        assert_eq!(p.target_mass(&Labeling::new(vec![9, 9])), 0.0);
        let beta = 0.5;
        let script = [(0, 0), (1, 1), (1, 0), (0, 0)];
        // Hand-tracked unnormalised weights: exp(-beta * mistakes).
        let mut mistakes = [0.0f64; 4];
        let rows = [[0, 0], [0, 1], [1, 0], [1, 1]];
        for (i, y) in script {
            p = p.update_zero_one(&Atom::point(i), &Answer::Class(y), beta).unwrap();
            for (m, r) in mistakes.iter_mut().zip(rows.iter()) {
                if r[i] != y {
                    *m += 1.0;
                }
            }
        }
        let raw: Vec<f64> = mistakes.iter().map(|m| (-beta * m).exp()).collect();
        let expect = raw[1] / raw.iter().sum::<f64>();
        assert!((p.target_mass(&target) - expect).abs() < 1e-12);
        let filtered = p.update_zero_one(&Atom::point(0), &Answer::Class(0), f64::INFINITY).unwrap();
        let filtered = filtered.update_zero_one(&Atom::point(1), &Answer::Class(1), f64::INFINITY).unwrap();
        assert_eq!(filtered.target_mass(&target), 1.0);
    }

    #[test]
    fn clustering_committee_uncertainty() {
        let committee = vec![
            FlatClustering::new(vec![0, 0, 1], 2).unwrap(),
            FlatClustering::new(vec![0, 1, 1], 2).unwrap(),
        ];
        let p = FinitePosterior::uniform(committee).unwrap();
        let q = Query::new(vec![0, 1, 2]).unwrap();
        // pairs (0,1) and (1,2) split 50/50, (0,2) always different
        let u = p.uncertainty_query(&q, SpaceKind::Clustering).unwrap();
        assert!((u - 1.0 / 3.0).abs() < 1e-12);
    }

    // Pairwise form: sum over ordered pairs of pi(g) pi(g') 1[g(a) != g'(a)].
    fn pairwise_uncertainty(answers: &[i64], weights: &[f64]) -> f64 {
        let mut u = 0.0;
        for (a, wa) in answers.iter().zip(weights) {
            for (b, wb) in answers.iter().zip(weights) {
                if a != b {
                    u += wa * wb;
                }
            }
        }
        u
    }

    fn pairwise_variance(preds: &[f64], weights: &[f64]) -> f64 {
        let mut v = 0.0;
        for (a, wa) in preds.iter().zip(weights) {
            for (b, wb) in preds.iter().zip(weights) {
                v += 0.5 * wa * wb * (a - b) * (a - b);
            }
        }
        v
    }

    proptest! {
        #[test]
        fn uncertainty_two_ways(
            answers in prop::collection::vec(0i64..4, 1..12),
            raw in prop::collection::vec(-3.0f64..3.0, 12),
        ) {
            let lw = raw[..answers.len()].to_vec();
            let committee: Vec<Labeling> = answers.iter().map(|&a| Labeling::new(vec![a])).collect();
            let p = FinitePosterior::from_log_weights(committee, lw).unwrap();
            let u = p.uncertainty_atom(&Atom::point(0)).unwrap();
            let v = pairwise_uncertainty(&answers, &p.weights());
            prop_assert!((u - v).abs() < 1e-12);
            prop_assert!((0.0..=1.0).contains(&u));
            prop_assert!(lse_is_zero(&p));
        }

        #[test]
        fn variance_two_ways(
            preds in prop::collection::vec(-8.0f64..8.0, 1..10),
            raw in prop::collection::vec(-3.0f64..3.0, 10),
        ) {
            let scale = PredictionScale::new(5.0).unwrap();
            let lw = raw[..preds.len()].to_vec();
            let p = FinitePosterior::from_log_weights(reals(&preds), lw).unwrap();
            let v = p.variance_atom(&Atom::point(0), &scale).unwrap();
            let clipped: Vec<f64> = preds.iter().map(|&z| scale.clip(z)).collect();
            let w = pairwise_variance(&clipped, &p.weights());
            prop_assert!((v - w).abs() < 1e-9);
        }

        #[test]
        fn disagreement_at_most_half_uncertainty(
            answers in prop::collection::vec(0i64..5, 1..15),
            raw in prop::collection::vec(-4.0f64..4.0, 15),
            y in 0i64..6,
        ) {
            let lw = raw[..answers.len()].to_vec();
            let committee: Vec<Labeling> = answers.iter().map(|&a| Labeling::new(vec![a])).collect();
            let p = FinitePosterior::from_log_weights(committee, lw).unwrap();
            let u = p.uncertainty_atom(&Atom::point(0)).unwrap();
            let wrong: f64 = answers.iter().zip(p.weights()).filter(|(a, _)| **a != y).map(|(_, w)| w).sum();
            prop_assert!(wrong >= 0.5 * u - 1e-12);
        }

        #[test]
        fn updates_commute(
            rows in prop::collection::vec(prop::collection::vec(0i64..3, 2), 1..8),
            y1 in 0i64..3, y2 in 0i64..3, beta in 0.0f64..3.0,
        ) {
            let committee: Vec<Labeling> = rows.into_iter().map(Labeling::new).collect();
            let p = FinitePosterior::uniform(committee).unwrap();
            let (a1, a2) = (Atom::point(0), Atom::point(1));
            let ab = p.update_zero_one(&a1, &Answer::Class(y1), beta).unwrap()
                .update_zero_one(&a2, &Answer::Class(y2), beta).unwrap();
            let ba = p.update_zero_one(&a2, &Answer::Class(y2), beta).unwrap()
                .update_zero_one(&a1, &Answer::Class(y1), beta).unwrap();
            for (x, z) in ab.weights().iter().zip(ba.weights()) {
                prop_assert!((x - z).abs() < 1e-12);
            }
            prop_assert!(lse_is_zero(&ab));
        }
    }
}
