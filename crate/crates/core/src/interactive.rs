//! Interactive clustering: a Gibbs chain supplies the committee, pair
//! corrections become constraints on the chain.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cluster_models::{committee_from_states, log_joint, ClusterModel, ConstraintSet, GibbsState};
use crate::error::{Error, Result};
use crate::posterior::{FeedbackEvent, FinitePosterior, Snapshot};
use crate::query_engine::{
    select_argmax_empirical, snapshot_of, Expert, QuerySampler, Response, SelectionMode, SessionTrace, StepDiagnostics,
    TraceRecord,
};
use crate::structures::{Answer, Atom, FlatClustering, Query, SpaceKind};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusteringConfig {
    /// Items per query.
    pub query_size: usize,
    /// Random candidate queries scored per round.
    pub candidates: usize,
    /// Committee pairs drawn to score the candidates.
    pub n_pairs: usize,
    /// Gibbs sweeps between two queries.
    pub sweeps_per_round: usize,
    /// The committee is the last this-many chain states.
    pub committee_size: usize,
    /// Weight of a constraint added by a correction; `None` means hard.
    pub constraint_weight: Option<f64>,
    /// Report convergence when every committee member is the same partition.
    pub stop_when_unanimous: bool,
    pub seed: u64,
}

impl Default for ClusteringConfig {
    fn default() -> Self {
        ClusteringConfig {
            query_size: 10,
            candidates: 20,
            n_pairs: 100,
            sweeps_per_round: 50,
            committee_size: 50,
            constraint_weight: None,
            stop_when_unanimous: false,
            seed: 0,
        }
    }
}

impl ClusteringConfig {
    pub fn weight(&self) -> f64 {
        self.constraint_weight.unwrap_or(f64::INFINITY)
    }
}

/// A query on display, with the committee that produced it.
#[derive(Clone, Debug)]
pub struct ClusterPending {
    pub step: usize,
    pub query: Query,
    pub snapshot: Snapshot,
    /// Empirical disagreement that won the candidate comparison.
    pub estimate: f64,
    pub query_score: f64,
    pub query_shrinkage: f64,
    pub committee: FinitePosterior<FlatClustering>,
    started: Instant,
}

/// Posterior summary for display.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClusteringState {
    /// Most frequent partition in the committee, canonically labelled.
    pub mode: Vec<usize>,
    pub mode_weight: f64,
    /// Current chain state.
    pub chain: Vec<usize>,
    pub distinct_members: usize,
    pub constraints: usize,
    pub confirmations: usize,
    pub sweeps: usize,
    pub log_joint: f64,
    pub fallbacks: usize,
}

pub struct ClusteringSession<M: ClusterModel> {
    model: M,
    config: ClusteringConfig,
    constraints: ConstraintSet,
    chain: GibbsState<M>,
    recent: Vec<FlatClustering>,
    sweeps: usize,
    rng: ChaCha8Rng,
    pending: Option<ClusterPending>,
    trace: SessionTrace,
    converged: bool,
}

impl<M: ClusterModel> ClusteringSession<M> {
    /// The chain starts from a uniform assignment seeded by `config.seed`;
    /// query selection uses a separate stream.
    pub fn new(model: M, config: ClusteringConfig) -> Result<Self> {
        let n = model.len();
        if n < 2 {
            return Err(Error::Config("clustering needs at least two items".into()));
        }
        if model.k() > n {
            return Err(Error::Config(format!("k = {} exceeds the number of items {n}", model.k())));
        }
        if config.query_size < 2 || config.query_size > n {
            return Err(Error::Config(format!("query size must lie in [2, {n}], got {}", config.query_size)));
        }
        if config.candidates == 0 || config.n_pairs == 0 || config.committee_size == 0 || config.sweeps_per_round == 0 {
            return Err(Error::Config("candidates, pairs, committee size and sweeps per round must be positive".into()));
        }
        if config.constraint_weight.is_some_and(|w| w.is_nan() || w <= 0.0) {
            return Err(Error::Config("constraint weight must be positive".into()));
        }
        let chain = GibbsState::new(&model, config.seed);
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x51ec_7000);
        Ok(ClusteringSession {
            model,
            config,
            constraints: ConstraintSet::new(),
            chain,
            recent: Vec::new(),
            sweeps: 0,
            rng,
            pending: None,
            trace: SessionTrace::new(),
            converged: false,
        })
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn config(&self) -> &ClusteringConfig {
        &self.config
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn trace(&self) -> &SessionTrace {
        &self.trace
    }

    pub fn pending(&self) -> Option<&ClusterPending> {
        self.pending.as_ref()
    }

    pub fn is_converged(&self) -> bool {
        self.converged
    }

    pub fn step_index(&self) -> usize {
        self.trace.len()
    }

    pub fn sweeps(&self) -> usize {
        self.sweeps
    }

    pub fn assignment(&self) -> &[usize] {
        self.chain.assignment()
    }

    /// One Gibbs sweep under the current constraints.
    pub fn sweep(&mut self) -> &[usize] {
        self.chain.sweep(&self.model, &self.constraints);
        self.sweeps += 1;
        self.recent.push(self.chain.clustering(&self.model));
        if self.recent.len() > self.config.committee_size {
            self.recent.remove(0);
        }
        self.chain.assignment()
    }

    /// Runs one round of sweeps, calling `observe(sweep, model, z, constraints)`
    /// after each.
    pub fn advance_with<F>(&mut self, mut observe: F)
    where
        F: FnMut(usize, &M, &[usize], &ConstraintSet),
    {
        for _ in 0..self.config.sweeps_per_round {
            self.sweep();
            observe(self.sweeps, &self.model, self.chain.assignment(), &self.constraints);
        }
    }

    pub fn advance(&mut self) {
        self.advance_with(|_, _, _, _| {});
    }

    /// Weighted committee of the recent chain states.
    pub fn committee(&self) -> Result<FinitePosterior<FlatClustering>> {
        if self.recent.is_empty() {
            return Err(Error::Config("no chain states yet; advance the chain first".into()));
        }
        committee_from_states(&self.recent)
    }

    /// Selects the next query from the current committee. Pending queries are
    /// returned unchanged.
    pub fn next_query(&mut self) -> Result<Option<&ClusterPending>> {
        if self.pending.is_some() {
            return Ok(self.pending.as_ref());
        }
        let started = Instant::now();
        let committee = self.committee()?;
        if self.config.stop_when_unanimous && committee.len() == 1 {
            self.converged = true;
            return Ok(None);
        }
        self.converged = false;
        let member = committee.sample_index(&mut self.rng);
        let sampler = QuerySampler::uniform_subsets(self.model.len(), self.config.query_size)?;
        let candidates: Vec<Query> = (0..self.config.candidates).map(|_| sampler.draw(&mut self.rng)).collect();
        let (choice, _) = select_argmax_empirical(
            &committee,
            &candidates,
            SpaceKind::Clustering,
            SelectionMode::ZeroOne,
            self.config.n_pairs,
            &mut self.rng,
        )?;
        let query = candidates[choice.index].clone();
        let snapshot = snapshot_of(&committee, member, &query, SpaceKind::Clustering)?;
        let query_score = committee.uncertainty_query(&query, SpaceKind::Clustering)?;
        let query_shrinkage = committee.shrinkage_query(&query, SpaceKind::Clustering)?;
        self.pending = Some(ClusterPending {
            step: self.trace.len(),
            query,
            snapshot,
            estimate: choice.estimate,
            query_score,
            query_shrinkage,
            committee,
            started,
        });
        Ok(self.pending.as_ref())
    }

    /// A round of sweeps followed by query selection.
    pub fn prepare(&mut self) -> Result<Option<&ClusterPending>> {
        if self.pending.is_none() {
            self.advance();
        }
        self.next_query()
    }

    /// Applies feedback on the pending query. A correction adds a constraint;
    /// a confirmation is only recorded in the trace.
    pub fn submit(&mut self, response: Response) -> Result<FeedbackEvent> {
        let pending = self.pending.as_ref().ok_or_else(|| Error::Config("no query is awaiting feedback".into()))?;
        let (atom, answer) = match response {
            Response::Accept => {
                let answers = &pending.snapshot.answers;
                answers[self.rng.random_range(0..answers.len())]
            }
            Response::Answer { atom, answer } => {
                if !matches!(atom, Atom::Pair(..)) || !pending.query.contains_atom(&atom) {
                    return Err(Error::InvalidQuery(format!("atom {atom} is not part of the pending query")));
                }
                if !matches!(answer, Answer::Same(_)) {
                    return Err(Error::AnswerMismatch(format!("pair atoms take same/different answers, got {answer:?}")));
                }
                (atom, answer)
            }
        };
        let pending = self.pending.take().expect("checked above");
        let event = FeedbackEvent::new(pending.step, pending.query, pending.snapshot.answers, atom, answer)?;
        if !event.accepted {
            let Answer::Same(same) = answer else { unreachable!("validated above") };
            self.constraints.add(atom, same, self.config.weight())?;
        }
        let diagnostics = StepDiagnostics {
            target_mass: None,
            query_score: pending.query_score,
            query_shrinkage: Some(pending.query_shrinkage),
            elapsed_micros: pending.started.elapsed().as_micros() as u64,
        };
        self.trace.push(TraceRecord { event: event.clone(), diagnostics })?;
        Ok(event)
    }

    /// Adds a constraint outside the query loop (random-pair feedback).
    pub fn add_constraint(&mut self, atom: Atom, same: bool) -> Result<()> {
        self.constraints.add(atom, same, self.config.weight())
    }

    /// `prepare`, ask the expert, submit. Returns `None` on convergence or
    /// when the expert has no answer.
    pub fn step<E: Expert<FlatClustering>>(&mut self, expert: &mut E) -> Result<Option<FeedbackEvent>> {
        let Some(p) = self.prepare()? else {
            return Ok(None);
        };
        let (query, snapshot, committee) = (p.query.clone(), p.snapshot.clone(), p.committee.clone());
        match expert.respond(&query, &snapshot, &committee)? {
            Some(r) => self.submit(r).map(Some),
            None => Ok(None),
        }
    }

    pub fn run<E: Expert<FlatClustering>>(&mut self, expert: &mut E, rounds: usize) -> Result<&SessionTrace> {
        for _ in 0..rounds {
            if self.step(expert)?.is_none() {
                break;
            }
        }
        Ok(&self.trace)
    }

    pub fn state(&self) -> Result<ClusteringState> {
        let (mode, mode_weight, distinct) = match self.committee() {
            Ok(c) => {
                let i = c.mode_index();
                (c.structure(i).assignment().to_vec(), c.weight(i), c.len())
            }
            Err(_) => (self.chain.clustering(&self.model).canonical().assignment().to_vec(), 0.0, 0),
        };
        let confirmations = self.trace.records().iter().filter(|r| r.event.accepted).count();
        Ok(ClusteringState {
            mode,
            mode_weight,
            chain: self.chain.assignment().to_vec(),
            distinct_members: distinct,
            constraints: self.constraints.len(),
            confirmations,
            sweeps: self.sweeps,
            log_joint: log_joint(&self.model, self.chain.assignment(), &self.constraints),
            fallbacks: self.chain.fallbacks(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cluster_models::{MixtureOfGaussians, MogHyper};
    use crate::oracle::{CorrectionPolicy, FeedbackPolicy, NoiseModel, SimulatedExpert};
    use std::sync::Arc;

    fn blobs() -> (MixtureOfGaussians, FlatClustering) {
        let mut data = Vec::new();
        let mut truth = Vec::new();
        for c in 0..3 {
            for i in 0..6 {
                data.push(vec![c as f64 * 6.0 + (i as f64) * 0.1, (i % 2) as f64 * 0.2]);
                truth.push(c);
            }
        }
        let m = MixtureOfGaussians::new(Arc::new(data), &MogHyper::new(3, 1.0, 6.0, 1.0)).unwrap();
        (m, FlatClustering::new(truth, 3).unwrap())
    }

    fn config() -> ClusteringConfig {
        ClusteringConfig { query_size: 4, sweeps_per_round: 5, committee_size: 5, seed: 3, ..ClusteringConfig::default() }
    }

    #[test]
    fn validation() {
        let (m, _) = blobs();
        assert!(ClusteringSession::new(m.clone(), ClusteringConfig { query_size: 40, ..config() }).is_err());
        assert!(ClusteringSession::new(m, ClusteringConfig { committee_size: 0, ..config() }).is_err());
    }

    #[test]
    fn corrections_add_constraints_confirmations_do_not() {
        let (m, truth) = blobs();
        let mut s = ClusteringSession::new(m, config()).unwrap();
        let p = s.prepare().unwrap().unwrap().clone();
        assert_eq!(p.snapshot.answers.len(), 6);
        let (atom, y) = p.snapshot.answers[0];
        s.submit(Response::Answer { atom, answer: y }).unwrap();
        assert_eq!(s.constraints().len(), 0);
        assert_eq!(s.state().unwrap().confirmations, 1);
        let p = s.prepare().unwrap().unwrap().clone();
        let (atom, y) = p.snapshot.answers[1];
        let Answer::Same(b) = y else { panic!() };
        let ev = s.submit(Response::Answer { atom, answer: Answer::Same(!b) }).unwrap();
        assert!(!ev.accepted);
        assert_eq!(s.constraints().len(), 1);
        let _ = truth;
    }

    #[test]
    fn rejects_foreign_atoms_and_wrong_answers() {
        let (m, _) = blobs();
        let mut s = ClusteringSession::new(m, config()).unwrap();
        let q = s.prepare().unwrap().unwrap().query.clone();
        let outside = (0..18).find(|i| !q.items().contains(i)).unwrap();
        let atom = Atom::pair(q.items()[0], outside).unwrap();
        assert!(matches!(s.submit(Response::Answer { atom, answer: Answer::Same(true) }), Err(Error::InvalidQuery(_))));
        let inside = Atom::pair(q.items()[0], q.items()[1]).unwrap();
        assert!(s.submit(Response::Answer { atom: inside, answer: Answer::Class(1) }).is_err());
        assert!(s.pending().is_some());
    }

    #[test]
    fn noiseless_constraints_agree_with_truth_and_runs_repeat() {
        let (m, truth) = blobs();
        let run = |seed| {
            let mut s = ClusteringSession::new(m.clone(), config()).unwrap();
            let policy = FeedbackPolicy::Correction(CorrectionPolicy::default());
            let mut e = SimulatedExpert::new(truth.clone(), policy, NoiseModel::Noiseless, seed);
            s.run(&mut e, 15).unwrap();
            assert!(s.constraints().satisfied_by(truth.assignment()));
            s.trace().events().into_iter().cloned().collect::<Vec<_>>()
        };
        assert_eq!(run(1), run(1));
    }

    #[test]
    fn unanimous_committee_converges_when_asked() {
        let (m, _) = blobs();
        let cfg = ClusteringConfig { stop_when_unanimous: true, committee_size: 1, ..config() };
        let mut s = ClusteringSession::new(m, cfg).unwrap();
        assert!(s.prepare().unwrap().is_none());
        assert!(s.is_converged());
    }
}
