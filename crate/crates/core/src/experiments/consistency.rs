//! Finite-committee convergence runs under Massart noise: target mass over
//! time, the per-round drift of 1/π(g*), and stopping times against the rate
//! bound.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

use super::{ExperimentConfig, ExperimentOutput, ResultRow};
use crate::error::{Error, Result};
use crate::oracle::{AtomChoice, CorrectionPolicy, FeedbackPolicy, MassartTable, NoiseModel, SimulatedExpert};
use crate::posterior::FinitePosterior;
use crate::query_engine::{convergence_bound, QuerySampler, Session, SessionConfig, SessionTrace, StepOutcome};
use crate::structures::{Answer, Atom, Labeling, SpaceKind, Structure};

const NAME: &str = "consistency";

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencySettings {
    pub n_items: usize,
    pub n_structures: usize,
    pub query_size: usize,
    pub lambda: f64,
    /// `f64::INFINITY` for hard version-space filtering.
    pub beta: f64,
    pub p_o: f64,
    pub rounds: usize,
    pub target: f64,
    pub tau: f64,
    pub delta: f64,
    pub checkpoint_every: usize,
    pub record_every: usize,
}

impl Default for ConsistencySettings {
    fn default() -> Self {
        ConsistencySettings {
            n_items: 30,
            n_structures: 50,
            query_size: 3,
            lambda: 0.2,
            beta: 0.1,
            p_o: 1.0,
            rounds: 2000,
            target: 0.99,
            tau: 0.5,
            delta: 0.05,
            checkpoint_every: 100,
            record_every: 10,
        }
    }
}

pub const KEYS: [&str; 12] = [
    "n_items",
    "n_structures",
    "s",
    "lambda",
    "beta",
    "p_o",
    "rounds",
    "target",
    "tau",
    "delta",
    "checkpoint_every",
    "record_every",
];

impl ConsistencySettings {
    pub fn from_config(c: &ExperimentConfig) -> Result<ConsistencySettings> {
        c.check_keys(&KEYS)?;
        let d = ConsistencySettings::default();
        let s = ConsistencySettings {
            n_items: c.get("n_items", d.n_items)?,
            n_structures: c.get("n_structures", d.n_structures)?,
            query_size: c.get("s", d.query_size)?,
            lambda: c.get("lambda", d.lambda)?,
            beta: c.get("beta", d.beta)?,
            p_o: c.get("p_o", d.p_o)?,
            rounds: c.get("rounds", d.rounds)?,
            target: c.get("target", d.target)?,
            tau: c.get("tau", d.tau)?,
            delta: c.get("delta", d.delta)?,
            checkpoint_every: c.get("checkpoint_every", d.checkpoint_every)?,
            record_every: c.get("record_every", d.record_every)?,
        };
        if s.n_structures < 2 || s.query_size == 0 || s.query_size > s.n_items {
            return Err(Error::Config("need >= 2 structures and 1 <= s <= n_items".into()));
        }
        if !(s.lambda > 0.0 && s.lambda <= 1.0) {
            return Err(Error::Config(format!("lambda must lie in (0, 1], got {}", s.lambda)));
        }
        if s.checkpoint_every == 0 || s.record_every == 0 {
            return Err(Error::Config("checkpoint_every and record_every must be positive".into()));
        }
        Ok(s)
    }
}

/// Random binary target plus `n_structures - 1` random competitors, in a
/// seeded random order.
pub fn instance(settings: &ConsistencySettings, seed: u64) -> (Labeling, Vec<Labeling>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_0001);
    let random_labeling = |rng: &mut ChaCha8Rng| Labeling::new((0..settings.n_items).map(|_| rng.random_range(0..2)).collect());
    let g_star = random_labeling(&mut rng);
    let mut committee: Vec<Labeling> = (1..settings.n_structures).map(|_| random_labeling(&mut rng)).collect();
    let at = rng.random_range(0..settings.n_structures);
    committee.insert(at, g_star.clone());
    (g_star, committee)
}

/// Drift of 1/π(g*) on one round and the bound it must exceed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DriftStat {
    /// 1 − π_{t−1}(g*) E_y[1/π_t(g*)] with y drawn from the noise model.
    pub delta: f64,
    /// Prior mass agreeing with g* on the answered atom.
    pub gamma: f64,
}

#[derive(Clone, Debug)]
pub struct ConsistencyRun {
    pub seed: u64,
    /// π_t(g*) for t = 0..=rounds (held constant after convergence).
    pub mass: Vec<f64>,
    pub drift: Vec<DriftStat>,
    /// Shrinkage of each selected query before its update.
    pub shrinkage: Vec<f64>,
    pub trace: SessionTrace,
}

impl ConsistencyRun {
    /// First t with π_t(g*) > level.
    pub fn rounds_to(&self, level: f64) -> Option<usize> {
        self.mass.iter().position(|&m| m > level)
    }

    pub fn reached(&self, level: f64) -> Option<usize> {
        self.mass.iter().position(|&m| m >= level)
    }

    /// Smallest selected-query shrinkage over the rounds before π exceeds τ.
    pub fn shrinkage_floor(&self, tau: f64) -> Option<f64> {
        let t = self.rounds_to(tau)?;
        self.shrinkage[..t.min(self.shrinkage.len())].iter().copied().reduce(f64::min)
    }
}

fn noise_for(settings: &ConsistencySettings, g_star: &Labeling) -> Result<NoiseModel> {
    if settings.lambda >= 1.0 {
        return Ok(NoiseModel::Noiseless);
    }
    let atoms: Vec<Atom> = (0..settings.n_items).map(Atom::point).collect();
    let table = MassartTable::symmetric(g_star, &atoms, &[Answer::Class(0), Answer::Class(1)], settings.lambda)?;
    Ok(NoiseModel::Massart(table))
}

fn drift(
    prior: &FinitePosterior<Labeling>,
    g_star: &Labeling,
    atom: &Atom,
    noise: &NoiseModel,
    beta: f64,
) -> Result<DriftStat> {
    let truth = g_star.eval(atom)?;
    let before = prior.target_mass(g_star);
    let gamma = prior.answer_masses(atom)?.iter().filter(|(y, _)| *y == truth).map(|(_, m)| m).sum();
    let dist: Vec<(Answer, f64)> = match noise {
        NoiseModel::Massart(t) => t.distribution(atom).map(<[_]>::to_vec).unwrap_or_default(),
        _ => vec![(truth, 1.0)],
    };
    let mut expected_inv = 0.0;
    for (y, p) in dist {
        let after = prior.update_zero_one(atom, &y, beta)?.target_mass(g_star);
        expected_inv += p / after;
    }
    Ok(DriftStat { delta: 1.0 - before * expected_inv, gamma })
}

/// One seeded run: the target is drawn from the seed, the session and the
/// simulated expert get independent streams.
pub fn run_one(settings: &ConsistencySettings, seed: u64) -> Result<ConsistencyRun> {
    let (g_star, committee) = instance(settings, seed);
    let noise = noise_for(settings, &g_star)?;
    let posterior = FinitePosterior::uniform(committee)?;
    let sampler = QuerySampler::uniform_subsets(settings.n_items, settings.query_size)?;
    let config = SessionConfig::zero_one(SpaceKind::Classification, settings.beta, seed);
    let mut session = Session::new(posterior, sampler, config)?.with_target(g_star.clone());
    let policy = FeedbackPolicy::Correction(CorrectionPolicy::new(settings.p_o, AtomChoice::UniformIncorrect)?);
    let mut expert = SimulatedExpert::new(g_star.clone(), policy, noise.clone(), seed.wrapping_add(0x9e37_79b9));
    let mut mass = vec![session.posterior().target_mass(&g_star)];
    let mut drifts = Vec::new();
    let mut shrinkage = Vec::new();
    for _ in 0..settings.rounds {
        let prior = session.posterior().clone();
        match session.step(&mut expert)? {
            StepOutcome::Feedback(event) => {
                let rec = session.trace().records().last().expect("just pushed");
                shrinkage.push(rec.diagnostics.query_shrinkage.unwrap_or(0.0));
                if settings.beta.is_finite() {
                    drifts.push(drift(&prior, &g_star, &event.atom, &noise, settings.beta)?);
                }
                mass.push(session.posterior().target_mass(&g_star));
            }
            StepOutcome::Converged | StepOutcome::AwaitingFeedback => break,
        }
    }
    let last = *mass.last().expect("non-empty");
    mass.resize(settings.rounds + 1, last);
    Ok(ConsistencyRun { seed, mass, drift: drifts, shrinkage, trace: session.trace().clone() })
}

/// One-sided paired t-test for an increase from `a` to `b`; returns the
/// p-value of H0: E[b − a] <= 0.
pub fn increase_p_value(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let d: Vec<f64> = b.iter().zip(a).map(|(x, y)| x - y).collect();
    let mean = d.iter().sum::<f64>() / n as f64;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    if n < 2 || var <= 0.0 {
        return if mean > 0.0 { 0.0 } else { 1.0 };
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("valid dof");
    1.0 - dist.cdf(t)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub step: usize,
    pub mean_inverse_mass: f64,
    /// p-value for an increase since the previous checkpoint.
    pub p_increase: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencySummary {
    pub runs: usize,
    pub reached_target: usize,
    pub drift_rounds: usize,
    pub drift_violations: usize,
    pub mean_drift: f64,
    pub mean_drift_bound: f64,
    pub checkpoints: Vec<Checkpoint>,
    /// Family-wise level split evenly over checkpoint pairs.
    pub per_test_level: f64,
    pub increases_detected: usize,
    pub within_bound: usize,
    pub rate_checked: usize,
}

pub fn summarize(settings: &ConsistencySettings, runs: &[ConsistencyRun], level: f64) -> Result<ConsistencySummary> {
    let n = runs.len();
    let reached_target = runs.iter().filter(|r| r.reached(settings.target).is_some()).count();
    let slack = settings.beta * settings.lambda / 2.0;
    let mut drift_rounds = 0;
    let mut drift_violations = 0;
    let (mut sum_d, mut sum_b) = (0.0, 0.0);
    for d in runs.iter().flat_map(|r| &r.drift) {
        let bound = slack * (1.0 - d.gamma);
        drift_rounds += 1;
        sum_d += d.delta;
        sum_b += bound;
        if d.delta < bound - 1e-12 {
            drift_violations += 1;
        }
    }
    let steps: Vec<usize> = (0..=settings.rounds).step_by(settings.checkpoint_every).collect();
    let pairs = steps.len().saturating_sub(1).max(1);
    let per_test_level = level / pairs as f64;
    let mut checkpoints = Vec::new();
    let mut increases_detected = 0;
    for (i, &t) in steps.iter().enumerate() {
        let inv: Vec<f64> = runs.iter().map(|r| 1.0 / r.mass[t]).collect();
        let p_increase = (i > 0).then(|| {
            let prev: Vec<f64> = runs.iter().map(|r| 1.0 / r.mass[steps[i - 1]]).collect();
            increase_p_value(&prev, &inv)
        });
        if p_increase.is_some_and(|p| p < per_test_level) {
            increases_detected += 1;
        }
        checkpoints.push(Checkpoint { step: t, mean_inverse_mass: inv.iter().sum::<f64>() / n as f64, p_increase });
    }
    let mut within_bound = 0;
    let mut rate_checked = 0;
    if settings.beta.is_finite() {
        let prior_mass = 1.0 / settings.n_structures as f64;
        for r in runs {
            rate_checked += 1;
            let (Some(t), Some(s_o)) = (r.rounds_to(settings.tau), r.shrinkage_floor(settings.tau)) else {
                continue;
            };
            let bound = convergence_bound(prior_mass, settings.beta, settings.lambda, s_o, settings.delta)?;
            if (t as f64) <= bound {
                within_bound += 1;
            }
        }
    }
    Ok(ConsistencySummary {
        runs: n,
        reached_target,
        drift_rounds,
        drift_violations,
        mean_drift: sum_d / drift_rounds.max(1) as f64,
        mean_drift_bound: sum_b / drift_rounds.max(1) as f64,
        checkpoints,
        per_test_level,
        increases_detected,
        within_bound,
        rate_checked,
    })
}

pub fn rows_for(settings: &ConsistencySettings, run: &ConsistencyRun) -> Result<Vec<ResultRow>> {
    let seed = run.seed;
    let mut rows = Vec::new();
    for (t, m) in run.mass.iter().enumerate().step_by(settings.record_every) {
        rows.push(ResultRow::new(NAME, seed, t, "target_mass", *m));
    }
    for (t, d) in run.drift.iter().enumerate().skip(settings.record_every - 1).step_by(settings.record_every) {
        rows.push(ResultRow::new(NAME, seed, t + 1, "drift", d.delta));
        rows.push(ResultRow::new(NAME, seed, t + 1, "drift_bound", settings.beta * settings.lambda / 2.0 * (1.0 - d.gamma)));
    }
    let never = (settings.rounds + 1) as f64;
    rows.push(ResultRow::new(NAME, seed, 0, "rounds_to_target", run.reached(settings.target).map_or(never, |t| t as f64)));
    rows.push(ResultRow::new(NAME, seed, 0, "rounds_to_tau", run.rounds_to(settings.tau).map_or(never, |t| t as f64)));
    if let Some(s_o) = run.shrinkage_floor(settings.tau) {
        rows.push(ResultRow::new(NAME, seed, 0, "shrinkage_floor", s_o));
        if settings.beta.is_finite() {
            let b = convergence_bound(1.0 / settings.n_structures as f64, settings.beta, settings.lambda, s_o, settings.delta)?;
            rows.push(ResultRow::new(NAME, seed, 0, "rate_bound", b));
        }
    }
    Ok(rows)
}

pub fn run(config: &ExperimentConfig, seeds: &[u64]) -> Result<ExperimentOutput> {
    let settings = ConsistencySettings::from_config(config)?;
    let mut out = ExperimentOutput::default();
    let mut runs = Vec::new();
    for &seed in seeds {
        let r = run_one(&settings, seed)?;
        out.rows.extend(rows_for(&settings, &r)?);
        out.traces.push((format!("consistency-seed{seed}"), r.trace.clone()));
        runs.push(r);
    }
    let summary = summarize(&settings, &runs, 0.05)?;
    for c in &summary.checkpoints {
        out.rows.push(ResultRow::new(NAME, 0, c.step, "mean_inverse_mass", c.mean_inverse_mass));
    }
    let m = &mut out.metadata;
    m.insert("beta".into(), settings.beta.to_string().into());
    m.insert("lambda".into(), settings.lambda.into());
    m.insert("query_size".into(), settings.query_size.into());
    m.insert("n_structures".into(), settings.n_structures.into());
    m.insert("n_items".into(), settings.n_items.into());
    m.insert("reached_target".into(), summary.reached_target.into());
    m.insert("drift_violations".into(), summary.drift_violations.into());
    m.insert("increases_detected".into(), summary.increases_detected.into());
    m.insert("within_bound".into(), summary.within_bound.into());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ConsistencySettings {
        ConsistencySettings { rounds: 300, n_items: 12, n_structures: 10, ..ConsistencySettings::default() }
    }

    #[test]
    fn instance_contains_target_once_at_random_spot() {
        let s = ConsistencySettings::default();
        let (g, c) = instance(&s, 1);
        assert_eq!(c.len(), 50);
        assert!(c.contains(&g));
        let (g2, _) = instance(&s, 1);
        assert_eq!(g, g2);
    }

    #[test]
    fn noiseless_run_collapses_to_one() {
        let s = ConsistencySettings { lambda: 1.0, beta: f64::INFINITY, ..small() };
        let r = run_one(&s, 3).unwrap();
        assert_eq!(*r.mass.last().unwrap(), 1.0);
        assert!(r.drift.is_empty());
    }

    #[test]
    fn drift_matches_brute_force() {
        // two structures disagreeing on one binary atom, λ = 0.2
        let g = Labeling::new(vec![0]);
        let h = Labeling::new(vec![1]);
        let prior = FinitePosterior::uniform(vec![g.clone(), h]).unwrap();
        let noise = NoiseModel::Massart(
            MassartTable::symmetric(&g, &[Atom::point(0)], &[Answer::Class(0), Answer::Class(1)], 0.2).unwrap(),
        );
        let beta: f64 = 0.1;
        let d = drift(&prior, &g, &Atom::point(0), &noise, beta).unwrap();
        // y correct (0.6): π(g) = 1/(1+e^-β); y wrong (0.4): π(g) = e^-β/(1+e^-β)
        let e = (-beta).exp();
        let want = 1.0 - 0.5 * (0.6 * (1.0 + e) + 0.4 * (1.0 + e) / e);
        assert!((d.delta - want).abs() < 1e-12);
        assert!((d.gamma - 0.5).abs() < 1e-12);
        assert!(d.delta >= beta * 0.2 * 0.5 / 2.0);
    }

    #[test]
    fn t_test_detects_shift() {
        let a: Vec<f64> = (0..50).map(|i| (i % 7) as f64).collect();
        let up: Vec<f64> = a.iter().enumerate().map(|(i, x)| x + 1.0 + 0.1 * (i % 3) as f64).collect();
        assert!(increase_p_value(&a, &up) < 1e-6);
        assert!(increase_p_value(&up, &a) > 0.99);
        assert_eq!(increase_p_value(&a, &a), 1.0);
    }

    #[test]
    fn runs_are_reproducible_and_drift_is_bounded() {
        let s = small();
        let a = run_one(&s, 9).unwrap();
        let b = run_one(&s, 9).unwrap();
        assert_eq!(a.mass, b.mass);
        assert_eq!(a.trace.events(), b.trace.events());
        let sum = summarize(&s, &[a], 0.05).unwrap();
        assert_eq!(sum.drift_violations, 0);
        assert!(sum.drift_rounds > 0);
    }
}
