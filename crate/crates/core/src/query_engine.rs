//! Query selection and the interactive feedback loop over a finite committee.
//!
//! Three selectors are provided: the rejection sampler that accepts a drawn
//! query with probability equal to the disagreement of two committee draws,
//! the robust halving selector over a fixed candidate list, and the plain
//! empirical argmax over a candidate list.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::time::Instant;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::{CommitteeSampler, FeedbackEvent, FinitePosterior, LossKind, LossSpec, Snapshot};
use crate::structures::{
    decompose, disagreement_on, sq_distance_on, Answer, Atom, PredictionScale, Query, SpaceKind, Structure,
};

/// Distribution over queries.
#[derive(Clone, Debug)]
pub enum QuerySampler {
    /// Uniformly random subsets of `size` items from a pool of `pool_size`.
    UniformSubsets { pool_size: usize, size: usize },
    /// An explicit list of queries with probabilities.
    Explicit { queries: Vec<Query>, probs: Vec<f64>, index: WeightedIndex<f64> },
}

impl QuerySampler {
    pub fn uniform_subsets(pool_size: usize, size: usize) -> Result<QuerySampler> {
        if size == 0 || size > pool_size {
            return Err(Error::Config(format!("query size {size} must be in 1..={pool_size}")));
        }
        Ok(QuerySampler::UniformSubsets { pool_size, size })
    }

    pub fn explicit(queries: Vec<Query>, probs: Vec<f64>) -> Result<QuerySampler> {
        if queries.is_empty() || queries.len() != probs.len() {
            return Err(Error::Config("one probability per query required".into()));
        }
        let total: f64 = probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 || probs.iter().any(|p| !(*p >= 0.0)) {
            return Err(Error::Config(format!("query probabilities must sum to 1, got {total}")));
        }
        let index = WeightedIndex::new(&probs).map_err(|e| Error::Config(e.to_string()))?;
        Ok(QuerySampler::Explicit { queries, probs, index })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Query {
        match self {
            QuerySampler::UniformSubsets { pool_size, size } => {
                let mut items = sample_indices(rng, *pool_size, *size).into_vec();
                items.sort_unstable();
                Query::new(items).expect("distinct indices")
            }
            QuerySampler::Explicit { queries, index, .. } => queries[index.sample(rng)].clone(),
        }
    }
}

/// How two committee members are compared on a query.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Fraction of atoms with different answers.
    ZeroOne,
    /// Normalised squared distance of clipped predictions.
    General(PredictionScale),
}

impl SelectionMode {
    fn distance<S: Structure>(&self, g: &S, h: &S, atoms: &[Atom]) -> Result<f64> {
        match self {
            SelectionMode::ZeroOne => disagreement_on(g, h, atoms),
            SelectionMode::General(scale) => sq_distance_on(g, h, atoms, scale),
        }
    }

    /// Exact committee-level score of a query: uncertainty or variance.
    pub fn score<S: Structure>(&self, posterior: &FinitePosterior<S>, query: &Query, space: SpaceKind) -> Result<f64> {
        match self {
            SelectionMode::ZeroOne => posterior.uncertainty_query(query, space),
            SelectionMode::General(scale) => posterior.variance_query(query, space, scale),
        }
    }
}

/// Result of a selection attempt. `NoInformativeQuery` is the convergence
/// signal, not an error.
#[derive(Clone, Debug, PartialEq)]
pub enum Selection<T> {
    Chosen(T),
    NoInformativeQuery,
}

impl<T> Selection<T> {
    pub fn chosen(self) -> Option<T> {
        match self {
            Selection::Chosen(t) => Some(t),
            Selection::NoInformativeQuery => None,
        }
    }
}

pub const DEFAULT_MAX_ITERS: usize = 10_000;

/// Rejection sampler: draw `q ~ nu` and `g, g' ~ pi`, accept with probability
/// `d(g, g'; q)` (or the squared distance in general mode). Accepted queries
/// are distributed proportionally to `nu(q) * u(q; pi)`.
pub fn select_rejection<S: Structure, R: Rng + ?Sized>(
    posterior: &FinitePosterior<S>,
    sampler: &QuerySampler,
    space: SpaceKind,
    mode: SelectionMode,
    rng: &mut R,
    max_iters: usize,
) -> Result<Selection<Query>> {
    let committee = posterior.sampler();
    select_rejection_with(posterior, &committee, sampler, space, mode, rng, max_iters)
}

pub(crate) fn select_rejection_with<S: Structure, R: Rng + ?Sized>(
    posterior: &FinitePosterior<S>,
    committee: &CommitteeSampler,
    sampler: &QuerySampler,
    space: SpaceKind,
    mode: SelectionMode,
    rng: &mut R,
    max_iters: usize,
) -> Result<Selection<Query>> {
    for _ in 0..max_iters {
        let q = sampler.draw(rng);
        let i = committee.draw(rng);
        let k = committee.draw(rng);
        if i == k {
            continue;
        }
        let atoms = decompose(&q, space)?;
        let d = mode.distance(posterior.structure(i), posterior.structure(k), &atoms)?;
        if d > 0.0 && rng.random::<f64>() < d {
            return Ok(Selection::Chosen(q));
        }
    }
    Ok(Selection::NoInformativeQuery)
}

/// Settings for the robust halving selector.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RobustConfig {
    /// Failure probability of the constant-factor guarantee.
    pub delta: f64,
    /// Stop once the threshold estimate falls below this value.
    pub floor: f64,
    /// Upper limit on committee pairs drawn at any stage.
    pub max_pairs: usize,
}

impl Default for RobustConfig {
    fn default() -> Self {
        RobustConfig { delta: 0.05, floor: 2f64.powi(-20), max_pairs: 1 << 16 }
    }
}

impl RobustConfig {
    /// Pairs drawn at stage `t` (threshold `u_hat`) for `m` candidates: a
    /// Hoeffding bound with failure budget `delta / ((t + 1)(t + 2))` split
    /// over the candidates.
    pub fn pairs_at_stage(&self, stage: usize, u_hat: f64, m: usize) -> usize {
        let t = stage as f64;
        let n = (8.0 / (u_hat * u_hat)) * (2.0 * m as f64 * (t + 1.0) * (t + 2.0) / self.delta).ln();
        (n.ceil() as usize).clamp(1, self.max_pairs)
    }
}

/// Outcome of a robust or argmax selection over a candidate list.
#[derive(Clone, Debug, PartialEq)]
pub struct CandidateChoice {
    pub index: usize,
    /// Empirical disagreement of the chosen candidate.
    pub estimate: f64,
    /// Threshold in force when the candidate was returned (robust selector).
    pub threshold: f64,
    pub stage: usize,
}

struct PairCache<'a, S> {
    posterior: &'a FinitePosterior<S>,
    atoms: Vec<Vec<Atom>>,
    mode: SelectionMode,
    memo: HashMap<(usize, usize, usize), f64>,
}

impl<'a, S: Structure> PairCache<'a, S> {
    fn new(posterior: &'a FinitePosterior<S>, candidates: &[Query], space: SpaceKind, mode: SelectionMode) -> Result<Self> {
        let atoms = candidates.iter().map(|q| decompose(q, space)).collect::<Result<Vec<_>>>()?;
        Ok(PairCache { posterior, atoms, mode, memo: HashMap::new() })
    }

    fn distance(&mut self, j: usize, i: usize, k: usize) -> Result<f64> {
        if i == k {
            return Ok(0.0);
        }
        let key = (j, i.min(k), i.max(k));
        if let Some(d) = self.memo.get(&key) {
            return Ok(*d);
        }
        let d = self.mode.distance(self.posterior.structure(i), self.posterior.structure(k), &self.atoms[j])?;
        self.memo.insert(key, d);
        Ok(d)
    }

    fn means(&mut self, pairs: &[(usize, usize)]) -> Result<Vec<f64>> {
        let m = self.atoms.len();
        let mut out = vec![0.0; m];
        for (j, slot) in out.iter_mut().enumerate() {
            let mut total = 0.0;
            for &(i, k) in pairs {
                total += self.distance(j, i, k)?;
            }
            *slot = total / pairs.len() as f64;
        }
        Ok(out)
    }
}

/// Robust halving selector. Starting from a threshold of 1/2, each stage draws
/// fresh committee pairs and returns the first candidate whose empirical mean
/// disagreement reaches the threshold; otherwise the threshold is halved.
pub fn select_robust<S: Structure, R: Rng + ?Sized>(
    posterior: &FinitePosterior<S>,
    candidates: &[Query],
    space: SpaceKind,
    config: &RobustConfig,
    rng: &mut R,
) -> Result<Selection<CandidateChoice>> {
    if candidates.is_empty() {
        return Err(Error::Config("robust selection needs at least one candidate".into()));
    }
    if !(config.delta > 0.0 && config.delta < 1.0) {
        return Err(Error::Config(format!("delta must lie in (0, 1), got {}", config.delta)));
    }
    let committee = posterior.sampler();
    let mut cache = PairCache::new(posterior, candidates, space, SelectionMode::ZeroOne)?;
    let mut u_hat = 0.5;
    let mut stage = 0;
    while u_hat >= config.floor {
        let n = config.pairs_at_stage(stage, u_hat, candidates.len());
        let pairs: Vec<(usize, usize)> = (0..n).map(|_| (committee.draw(rng), committee.draw(rng))).collect();
        let means = cache.means(&pairs)?;
        if let Some(j) = means.iter().position(|&m| m >= u_hat) {
            return Ok(Selection::Chosen(CandidateChoice { index: j, estimate: means[j], threshold: u_hat, stage }));
        }
        u_hat /= 2.0;
        stage += 1;
    }
    Ok(Selection::NoInformativeQuery)
}

/// Draws `n_pairs` committee pairs once and returns the candidate with the
/// highest empirical disagreement; ties go to the lowest index.
pub fn select_argmax_empirical<S: Structure, R: Rng + ?Sized>(
    posterior: &FinitePosterior<S>,
    candidates: &[Query],
    space: SpaceKind,
    mode: SelectionMode,
    n_pairs: usize,
    rng: &mut R,
) -> Result<(CandidateChoice, Vec<f64>)> {
    if candidates.is_empty() || n_pairs == 0 {
        return Err(Error::Config("argmax selection needs candidates and at least one pair".into()));
    }
    let committee = posterior.sampler();
    let pairs: Vec<(usize, usize)> = (0..n_pairs).map(|_| (committee.draw(rng), committee.draw(rng))).collect();
    let mut cache = PairCache::new(posterior, candidates, space, mode)?;
    let means = cache.means(&pairs)?;
    let mut best = 0;
    for (j, m) in means.iter().enumerate() {
        if *m > means[best] {
            best = j;
        }
    }
    let choice = CandidateChoice { index: best, estimate: means[best], threshold: 0.0, stage: 0 };
    Ok((choice, means))
}

/// One committee draw evaluated on every atom of the query.
pub fn propose<S: Structure, R: Rng + ?Sized>(
    posterior: &FinitePosterior<S>,
    query: &Query,
    space: SpaceKind,
    rng: &mut R,
) -> Result<Snapshot> {
    let member = posterior.sample_index(rng);
    snapshot_of(posterior, member, query, space)
}

pub(crate) fn snapshot_of<S: Structure>(
    posterior: &FinitePosterior<S>,
    member: usize,
    query: &Query,
    space: SpaceKind,
) -> Result<Snapshot> {
    let g = posterior.structure(member);
    let answers = decompose(query, space)?
        .into_iter()
        .map(|a| g.eval(&a).map(|y| (a, y)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Snapshot { member, answers })
}

/// Expert response to a snapshot.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    /// The snapshot is accepted; the engine confirms one random atom.
    Accept,
    /// An answer (correction or confirmation) for one atom of the query.
    Answer { atom: Atom, answer: Answer },
}

/// Source of feedback for a session: a simulated oracle or a person.
pub trait Expert<S> {
    /// `None` means no answer is available yet.
    fn respond(&mut self, query: &Query, snapshot: &Snapshot, posterior: &FinitePosterior<S>) -> Result<Option<Response>>;
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selector {
    Rejection { max_iters: usize },
    Robust { candidates: usize, config: RobustConfig },
    Argmax { candidates: usize, n_pairs: usize },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub space: SpaceKind,
    pub beta: f64,
    pub loss: LossSpec,
    pub mode: SelectionMode,
    pub selector: Selector,
    pub seed: u64,
}

impl SessionConfig {
    pub fn zero_one(space: SpaceKind, beta: f64, seed: u64) -> SessionConfig {
        SessionConfig {
            space,
            beta,
            loss: LossSpec::zero_one(),
            mode: SelectionMode::ZeroOne,
            selector: Selector::Rejection { max_iters: DEFAULT_MAX_ITERS },
            seed,
        }
    }
}

/// Per-round diagnostics stored next to each feedback event.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    /// Posterior mass of the target after the update, when the target is known.
    pub target_mass: Option<f64>,
    /// Exact uncertainty (or variance) of the selected query before the update.
    pub query_score: f64,
    /// Shrinkage of the selected query before the update (discrete answers).
    pub query_shrinkage: Option<f64>,
    /// Wall-clock time of the round in microseconds.
    pub elapsed_micros: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    #[serde(flatten)]
    pub event: FeedbackEvent,
    pub diagnostics: StepDiagnostics,
}

/// Append-only record of a session, persisted as JSON Lines.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SessionTrace {
    records: Vec<TraceRecord>,
}

impl SessionTrace {
    pub fn new() -> SessionTrace {
        SessionTrace::default()
    }

    pub fn push(&mut self, record: TraceRecord) -> Result<()> {
        if record.event.step != self.records.len() {
            return Err(Error::Config(format!(
                "trace step {} out of order; expected {}",
                record.event.step,
                self.records.len()
            )));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn records(&self) -> &[TraceRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Events only, without timing; equal for reproducible runs.
    pub fn events(&self) -> Vec<&FeedbackEvent> {
        self.records.iter().map(|r| &r.event).collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn to_jsonl(&self) -> String {
        let mut buf = Vec::new();
        self.write_jsonl(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("json is utf-8")
    }

    pub fn read_jsonl<R: BufRead>(input: R) -> Result<SessionTrace> {
        let mut trace = SessionTrace::new();
        for (n, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let record: TraceRecord =
                serde_json::from_str(&line).map_err(|e| Error::Parse { line: n + 1, message: e.to_string() })?;
            trace.push(record)?;
        }
        Ok(trace)
    }
}

/// A query on display together with the proposed snapshot.
#[derive(Clone, Debug, PartialEq)]
pub struct Pending {
    pub step: usize,
    pub query: Query,
    pub snapshot: Snapshot,
    pub query_score: f64,
    pub query_shrinkage: Option<f64>,
    started: Instant,
}

#[derive(Clone, Debug, PartialEq)]
pub enum StepOutcome {
    Feedback(FeedbackEvent),
    AwaitingFeedback,
    Converged,
}

/// Structural QBC over a finite committee, one round at a time.
pub struct Session<S> {
    posterior: FinitePosterior<S>,
    sampler: QuerySampler,
    config: SessionConfig,
    target: Option<S>,
    rng: ChaCha8Rng,
    pending: Option<Pending>,
    converged: bool,
    trace: SessionTrace,
}

impl<S: Structure + PartialEq> Session<S> {
    pub fn new(posterior: FinitePosterior<S>, sampler: QuerySampler, config: SessionConfig) -> Result<Self> {
        if config.beta.is_nan() || config.beta < 0.0 {
            return Err(Error::Config(format!("beta must be >= 0, got {}", config.beta)));
        }
        let rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(Session { posterior, sampler, config, target: None, rng, pending: None, converged: false, trace: SessionTrace::new() })
    }

    /// Records posterior mass on `target` in the diagnostics.
    pub fn with_target(mut self, target: S) -> Self {
        self.target = Some(target);
        self
    }

    pub fn posterior(&self) -> &FinitePosterior<S> {
        &self.posterior
    }

    pub fn trace(&self) -> &SessionTrace {
        &self.trace
    }

    pub fn pending(&self) -> Option<&Pending> {
        self.pending.as_ref()
    }

    pub fn is_converged(&self) -> bool {
        self.converged
    }

    pub fn step_index(&self) -> usize {
        self.trace.len()
    }

    fn select(&mut self, space: SpaceKind) -> Result<Option<Query>> {
        match self.config.selector {
            Selector::Rejection { max_iters } => {
                let committee = self.posterior.sampler();
                Ok(select_rejection_with(
                    &self.posterior,
                    &committee,
                    &self.sampler,
                    space,
                    self.config.mode,
                    &mut self.rng,
                    max_iters,
                )?
                .chosen())
            }
            Selector::Robust { candidates, config } => {
                let qs: Vec<Query> = (0..candidates).map(|_| self.sampler.draw(&mut self.rng)).collect();
                let choice = select_robust(&self.posterior, &qs, space, &config, &mut self.rng)?;
                Ok(choice.chosen().map(|c| qs[c.index].clone()))
            }
            Selector::Argmax { candidates, n_pairs } => {
                let qs: Vec<Query> = (0..candidates).map(|_| self.sampler.draw(&mut self.rng)).collect();
                let (choice, _) =
                    select_argmax_empirical(&self.posterior, &qs, space, self.config.mode, n_pairs, &mut self.rng)?;
                if choice.estimate == 0.0 {
                    return Ok(None);
                }
                Ok(Some(qs[choice.index].clone()))
            }
        }
    }

    /// Draws the snapshot structure, selects the next query, and parks the
    /// session awaiting feedback. Returns `None` once no informative query
    /// can be found.
    pub fn next_query(&mut self) -> Result<Option<&Pending>> {
        if self.pending.is_some() {
            return Ok(self.pending.as_ref());
        }
        if self.converged {
            return Ok(None);
        }
        let started = Instant::now();
        let space = self.config.space;
        let member = self.posterior.sample_index(&mut self.rng);
        let Some(query) = self.select(space)? else {
            self.converged = true;
            return Ok(None);
        };
        let snapshot = snapshot_of(&self.posterior, member, &query, space)?;
        let query_score = self.config.mode.score(&self.posterior, &query, space)?;
        let query_shrinkage = match self.config.mode {
            SelectionMode::ZeroOne => Some(self.posterior.shrinkage_query(&query, space)?),
            SelectionMode::General(_) => None,
        };
        self.pending = Some(Pending { step: self.trace.len(), query, snapshot, query_score, query_shrinkage, started });
        Ok(self.pending.as_ref())
    }

    /// Applies feedback on the pending query.
    pub fn submit(&mut self, response: Response) -> Result<FeedbackEvent> {
        let pending = self.pending.as_ref().ok_or_else(|| Error::Config("no query is awaiting feedback".into()))?;
        let (atom, answer) = match response {
            Response::Accept => {
                let answers = &pending.snapshot.answers;
                answers[self.rng.random_range(0..answers.len())]
            }
            Response::Answer { atom, answer } => {
                if !pending.query.contains_atom(&atom) || atom.arity() != self.config.space.arity() {
                    return Err(Error::InvalidQuery(format!("atom {atom} is not part of the pending query")));
                }
                (atom, answer)
            }
        };
        let pending = self.pending.take().expect("checked above");
        let event = FeedbackEvent::new(pending.step, pending.query, pending.snapshot.answers, atom, answer)?;
        self.posterior = if self.config.loss.kind == LossKind::ZeroOne {
            self.posterior.update_zero_one(&atom, &answer, self.config.beta)?
        } else {
            self.posterior.update_general(&atom, &answer, self.config.beta, &self.config.loss)?
        };
        let diagnostics = StepDiagnostics {
            target_mass: self.target.as_ref().map(|t| self.posterior.target_mass(t)),
            query_score: pending.query_score,
            query_shrinkage: pending.query_shrinkage,
            elapsed_micros: pending.started.elapsed().as_micros() as u64,
        };
        self.trace.push(TraceRecord { event: event.clone(), diagnostics })?;
        Ok(event)
    }

    /// One full round: select, propose, obtain feedback, update.
    pub fn step<E: Expert<S>>(&mut self, expert: &mut E) -> Result<StepOutcome> {
        let Some(pending) = self.next_query()? else {
            return Ok(StepOutcome::Converged);
        };
        let (query, snapshot) = (pending.query.clone(), pending.snapshot.clone());
        match expert.respond(&query, &snapshot, &self.posterior)? {
            Some(response) => Ok(StepOutcome::Feedback(self.submit(response)?)),
            None => Ok(StepOutcome::AwaitingFeedback),
        }
    }

    /// Runs up to `rounds` rounds, stopping early on convergence or when the
    /// expert has no answer.
    pub fn run<E: Expert<S>>(&mut self, expert: &mut E, rounds: usize) -> Result<&SessionTrace> {
        for _ in 0..rounds {
            match self.step(expert)? {
                StepOutcome::Feedback(_) => {}
                StepOutcome::AwaitingFeedback | StepOutcome::Converged => break,
            }
        }
        Ok(&self.trace)
    }
}

/// High-probability bound on the number of rounds before the target's
/// posterior mass exceeds the threshold, given a per-round expected query
/// shrinkage of at least `s_o`.
pub fn convergence_bound(prior_mass: f64, beta: f64, lambda: f64, s_o: f64, delta: f64) -> Result<f64> {
    if !(prior_mass > 0.0 && prior_mass <= 1.0) {
        return Err(Error::Domain(format!("prior mass must lie in (0, 1], got {prior_mass}")));
    }
    if !(s_o > 0.0 && s_o < 1.0) {
        return Err(Error::Domain(format!("s_o must lie in (0, 1), got {s_o}")));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return Err(Error::Domain(format!("delta must lie in (0, 1), got {delta}")));
    }
    if !(lambda > 0.0 && lambda <= 1.0) {
        return Err(Error::Domain(format!("lambda must lie in (0, 1], got {lambda}")));
    }
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("beta must be positive, got {beta}")));
    }
    let log_prior = (1.0 / prior_mass).ln();
    let log_delta = (1.0 / delta).ln();
    if lambda == 1.0 {
        let rate = s_o * (1.0 - (-beta).exp());
        return Ok((2.0 / rate) * log_prior.max((4.0 / rate) * log_delta));
    }
    if beta > lambda / 2.0 {
        return Err(Error::Domain(format!("noisy bound needs beta <= lambda / 2, got beta = {beta}, lambda = {lambda}")));
    }
    let rate = beta * lambda * s_o;
    Ok((4.0 / rate) * log_prior.max((8.0 * beta.exp() / rate) * log_delta))
}
