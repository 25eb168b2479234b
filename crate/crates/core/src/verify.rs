//! Acceptance checks shared by `sqbc verify` and the `acceptance` test
//! target. Every check is seeded; tolerances and budgets are pinned here.

use std::collections::BTreeMap;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::cluster_models::{
    log_joint, ClusterModel, ConstraintSet, GibbsState, MixtureOfBernoullis, MixtureOfGaussians, MobHyper, MogHyper,
};
use crate::error::{Error, Result};
use crate::experiments::clustering::{run_seed, ClusterDataset, ClusteringSettings};
use crate::experiments::consistency::{run_one, summarize, ConsistencyRun, ConsistencySettings};
use crate::experiments::hypercube::{closed_form, run_hypercube_shrinkage};
use crate::experiments::kernel_mnist::{error_at, load_split, run_arm, KernelArm, KernelSettings, MNIST_ENV};
use crate::experiments::linear::{median_labels, run_cell, LinearSettings};
use crate::experiments::{median, run_experiment, ExperimentConfig};
use crate::kernel_linear::{log_unnormalized, GaussianPosterior, KernelPosterior, KernelSpec};
use crate::posterior::FinitePosterior;
use crate::query_engine::{select_rejection, QuerySampler, Selection, SelectionMode};
use crate::structures::{Answer, Atom, FlatClustering, Labeling, Query, SpaceKind, Structure};

pub const HYPERCUBE_SAMPLES: usize = 100_000;
pub const HYPERCUBE_TOL: f64 = 0.01;
pub const DISAGREEMENT_TRIALS: usize = 1000;
pub const EQUIVALENCE_INSTANCES: usize = 100;
pub const EQUIVALENCE_REL_TOL: f64 = 1e-8;
pub const DENSITY_PAIRS: usize = 100;
pub const DENSITY_TOL: f64 = 1e-8;
pub const GIBBS_INSTANCES: usize = 20;
pub const GIBBS_SWEEPS: usize = 100_000;
pub const GIBBS_TV: f64 = 0.02;
pub const CONSISTENCY_RUNS: usize = 100;
pub const CONSISTENCY_MIN_REACHED: usize = 95;
pub const MONOTONE_LEVEL: f64 = 0.05;
pub const RATE_MIN_FRACTION: f64 = 0.95;
pub const REJECTION_SELECTIONS: usize = 100_000;
pub const REJECTION_TV: f64 = 0.02;
pub const LINEAR_SEEDS: u64 = 20;
pub const KERNEL_SEEDS: u64 = 5;
pub const CLUSTERING_SEEDS: u64 = 20;
pub const CLUSTERING_MIN_REACHED: usize = 16;
pub const CLUSTERING_MAX_CONSTRAINTS: usize = 10;
pub const FINAL_DISTANCE_SLACK: f64 = 1e-12;

/// Outcome of one acceptance criterion.
#[derive(Clone, Debug, PartialEq)]
pub struct CriterionResult {
    pub id: &'static str,
    pub passed: bool,
    pub detail: String,
    pub elapsed: Duration,
    pub budget: Duration,
}

impl CriterionResult {
    pub fn line(&self) -> String {
        format!(
            "{} {:<28} {:>8.1}s / {:>4}s  {}",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.elapsed.as_secs_f64(),
            self.budget.as_secs(),
            self.detail
        )
    }
}

pub type Check = fn() -> Result<(bool, String)>;

/// (id, runtime budget, check). Budgets are part of the pass condition.
pub fn criteria() -> Vec<(&'static str, Duration, Check)> {
    let s = Duration::from_secs;
    vec![
        ("hypercube_closed_form", s(5), hypercube as Check),
        ("disagreement_half_uncertainty", s(60), disagreement_bound),
        ("kernel_explicit_equivalence", s(10), kernel_equivalence),
        ("gaussian_density_ratio", s(60), density_ratio),
        ("gibbs_enumeration", s(120), gibbs_enumeration),
        ("consistency", s(600), consistency),
        ("rate_bound", s(600), rate_bound),
        ("rejection_sampler_law", s(60), rejection_law),
        ("noisy_linear_dominance", s(300), linear_dominance),
        ("kernel_mnist", s(900), kernel_mnist),
        ("clustering", s(600), clustering),
    ]
}

/// Runs one criterion by id, timing it against its budget.
pub fn run_criterion(id: &str) -> Result<CriterionResult> {
    let (id, budget, check) = criteria()
        .into_iter()
        .find(|(name, _, _)| *name == id)
        .ok_or_else(|| Error::Config(format!("unknown criterion {id}")))?;
    let start = Instant::now();
    let (ok, detail) = match check() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    let elapsed = start.elapsed();
    let in_time = elapsed <= budget;
    let detail = if in_time { detail } else { format!("{detail}; over the runtime budget") };
    Ok(CriterionResult { id, passed: ok && in_time, detail, elapsed, budget })
}

pub fn run_all() -> Vec<CriterionResult> {
    criteria().iter().map(|(id, _, _)| run_criterion(id).expect("listed id")).collect()
}

fn hypercube() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let e5 = run_hypercube_shrinkage(5, HYPERCUBE_SAMPLES, &mut rng)?;
    let e1 = run_hypercube_shrinkage(1, HYPERCUBE_SAMPLES, &mut rng)?;
    let ok = (e5 - 0.42222).abs() <= HYPERCUBE_TOL && (e1 - 1.0 / 3.0).abs() <= HYPERCUBE_TOL;
    Ok((ok, format!("p=5: {e5:.5} (closed form {:.5}); p=1: {e1:.5}", closed_form(5))))
}

fn disagreement_bound() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut violations = 0;
    let mut tightest = f64::INFINITY;
    for _ in 0..DISAGREEMENT_TRIALS {
        let m = rng.random_range(1..12);
        let n_atoms = rng.random_range(1..6);
        let classes = rng.random_range(2..5);
        let members: Vec<Labeling> =
            (0..m).map(|_| Labeling::new((0..n_atoms).map(|_| rng.random_range(0..classes)).collect())).collect();
        let logw: Vec<f64> = (0..m).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); 3.0 * z }).collect();
        let post = FinitePosterior::from_log_weights(members, logw)?;
        let atom = Atom::point(rng.random_range(0..n_atoms));
        let y = Answer::Class(rng.random_range(0..classes));
        let w = post.weights();
        let wrong: f64 =
            (0..post.len()).filter(|&i| post.structure(i).eval(&atom).map(|a| a != y).unwrap_or(false)).map(|i| w[i]).sum();
        let half_u = 0.5 * post.uncertainty_atom(&atom)?;
        tightest = tightest.min(wrong - half_u);
        if wrong < half_u - 1e-12 {
            violations += 1;
        }
    }
    Ok((violations == 0, format!("{violations} violations in {DISAGREEMENT_TRIALS} trials; min slack {tightest:.3e}")))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-300)
}

fn kernel_equivalence() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut worst: f64 = 0.0;
    for _ in 0..EQUIVALENCE_INSTANCES {
        let d = rng.random_range(1..=8);
        let t = rng.random_range(0..=30);
        let beta = rng.random_range(0.1..5.0);
        let s2 = rng.random_range(0.2..3.0);
        let xs: Vec<Vec<f64>> = (0..t).map(|_| (0..d).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
        let ys: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut kp = KernelPosterior::new(KernelSpec::Linear, beta, s2)?;
        for (x, y) in xs.iter().zip(&ys) {
            kp.update(x, *y)?;
        }
        let phi = DMatrix::from_fn(t, d, |i, j| xs[i][j]);
        let gp = GaussianPosterior::explicit(&phi, &ys, beta, s2)?;
        for _ in 0..5 {
            let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let (mk, vk) = kp.predictive_scalar(&x)?;
            let (me, ve) = gp.predictive(&x);
            worst = worst.max(rel_err(mk, me)).max(rel_err(vk, ve));
        }
    }
    Ok((worst <= EQUIVALENCE_REL_TOL, format!("max relative error {worst:.2e} over {EQUIVALENCE_INSTANCES} instances")))
}

fn density_ratio() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut worst: f64 = 0.0;
    for _ in 0..DENSITY_PAIRS {
        let d = rng.random_range(1..=6);
        let t = rng.random_range(1..=20);
        let beta = rng.random_range(0.1..3.0);
        let s2 = rng.random_range(0.3..2.0);
        let phi = DMatrix::from_fn(t, d, |_, _| StandardNormal.sample(&mut rng));
        let y: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
        let gp = GaussianPosterior::explicit(&phi, &y, beta, s2)?;
        let w: Vec<f64> = gp.sample_weights(&mut rng)?.iter().copied().collect();
        let w2: Vec<f64> = gp.sample_weights(&mut rng)?.iter().copied().collect();
        let lhs = log_unnormalized(&phi, &y, beta, s2, &w) - log_unnormalized(&phi, &y, beta, s2, &w2);
        let rhs = gp.log_density(&w)? - gp.log_density(&w2)?;
        worst = worst.max(((lhs - rhs).exp() - 1.0).abs());
    }
    Ok((worst <= DENSITY_TOL, format!("max |ratio - 1| = {worst:.2e} over {DENSITY_PAIRS} pairs")))
}

fn canonical_key(z: &[usize], k: usize) -> Vec<usize> {
    FlatClustering::new(z.to_vec(), k).expect("ids below k").canonical().assignment().to_vec()
}

/// Exact partition law by enumerating all k^n assignments.
pub fn exact_partitions<M: ClusterModel>(model: &M, cons: &ConstraintSet) -> BTreeMap<Vec<usize>, f64> {
    let (n, k) = (model.len(), model.k());
    let mut rows = Vec::new();
    for code in 0..k.pow(n as u32) {
        let z: Vec<usize> = (0..n).map(|i| code / k.pow(i as u32) % k).collect();
        rows.push((canonical_key(&z, k), log_joint(model, &z, cons)));
    }
    let m = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let norm: f64 = rows.iter().map(|r| (r.1 - m).exp()).sum();
    let mut out = BTreeMap::new();
    for (key, l) in rows {
        *out.entry(key).or_insert(0.0) += (l - m).exp() / norm;
    }
    out
}

pub fn sampled_partitions<M: ClusterModel>(model: &M, cons: &ConstraintSet, sweeps: usize, seed: u64) -> BTreeMap<Vec<usize>, f64> {
    let mut state = GibbsState::new(model, seed);
    for _ in 0..200 {
        state.sweep(model, cons);
    }
    let mut out = BTreeMap::new();
    for _ in 0..sweeps {
        state.sweep(model, cons);
        *out.entry(canonical_key(state.assignment(), model.k())).or_insert(0.0) += 1.0 / sweeps as f64;
    }
    out
}

pub fn total_variation(a: &BTreeMap<Vec<usize>, f64>, b: &BTreeMap<Vec<usize>, f64>) -> f64 {
    let mut keys: Vec<&Vec<usize>> = a.keys().chain(b.keys()).collect();
    keys.sort();
    keys.dedup();
    0.5 * keys.iter().map(|k| (a.get(*k).unwrap_or(&0.0) - b.get(*k).unwrap_or(&0.0)).abs()).sum::<f64>()
}

fn random_constraints(n: usize, rng: &mut ChaCha8Rng) -> Result<ConstraintSet> {
    let mut cons = ConstraintSet::new();
    for c in 0..rng.random_range(0..4) {
        let i = rng.random_range(0..n);
        let j = (i + rng.random_range(1..n)) % n;
        // at most one hard constraint so the feasible set stays connected
        let w = if c == 0 && rng.random_bool(0.3) { f64::INFINITY } else { rng.random_range(0.3..3.0) };
        cons.add(Atom::pair(i, j)?, rng.random_bool(0.5), w)?;
    }
    Ok(cons)
}

fn gibbs_enumeration() -> Result<(bool, String)> {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let mut worst: f64 = 0.0;
    for inst in 0..GIBBS_INSTANCES {
        let n = 5;
        let k = rng.random_range(2..=3);
        let cons = random_constraints(n, &mut rng)?;
        let tv = if inst % 2 == 0 {
            let data: Vec<Vec<f64>> = (0..n).map(|_| vec![rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).collect();
            let m = MixtureOfGaussians::new(Arc::new(data), &MogHyper::new(k, rng.random_range(0.5..2.0), 1.5, 0.8))?;
            total_variation(&exact_partitions(&m, &cons), &sampled_partitions(&m, &cons, GIBBS_SWEEPS, inst as u64))
        } else {
            let data: Vec<Vec<bool>> = (0..n).map(|_| (0..4).map(|_| rng.random_bool(0.5)).collect()).collect();
            let m = MixtureOfBernoullis::new(Arc::new(data), MobHyper { k, alpha: 1.0, beta_a: 1.0, gamma_a: 1.0 })?;
            total_variation(&exact_partitions(&m, &cons), &sampled_partitions(&m, &cons, GIBBS_SWEEPS, inst as u64))
        };
        worst = worst.max(tv);
    }
    Ok((worst <= GIBBS_TV, format!("max TV {worst:.4} over {GIBBS_INSTANCES} instances, {GIBBS_SWEEPS} sweeps")))
}

fn consistency_runs() -> &'static std::result::Result<Vec<ConsistencyRun>, String> {
    static RUNS: OnceLock<std::result::Result<Vec<ConsistencyRun>, String>> = OnceLock::new();
    RUNS.get_or_init(|| {
        let s = ConsistencySettings::default();
        (0..CONSISTENCY_RUNS as u64).map(|seed| run_one(&s, seed)).collect::<Result<Vec<_>>>().map_err(|e| e.to_string())
    })
}

fn consistency() -> Result<(bool, String)> {
    let s = ConsistencySettings::default();
    let runs = consistency_runs().as_ref().map_err(|e| Error::Numeric(e.clone()))?;
    let sum = summarize(&s, runs, MONOTONE_LEVEL)?;
    let ok = sum.reached_target >= CONSISTENCY_MIN_REACHED && sum.increases_detected == 0 && sum.drift_violations == 0;
    let first = sum.checkpoints.first().map_or(f64::NAN, |c| c.mean_inverse_mass);
    let last = sum.checkpoints.last().map_or(f64::NAN, |c| c.mean_inverse_mass);
    let min_p = sum.checkpoints.iter().filter_map(|c| c.p_increase).fold(1.0, f64::min);
    Ok((
        ok,
        format!(
            "{}/{} runs reach {}; mean 1/π {first:.2} -> {last:.4}, {} increases detected (min p {min_p:.3}, per-test level {:.4}); \
             drift bound violated {}/{} rounds",
            sum.reached_target, sum.runs, s.target, sum.increases_detected, sum.per_test_level, sum.drift_violations, sum.drift_rounds
        ),
    ))
}

fn rate_bound() -> Result<(bool, String)> {
    let s = ConsistencySettings::default();
    let runs = consistency_runs().as_ref().map_err(|e| Error::Numeric(e.clone()))?;
    let sum = summarize(&s, runs, MONOTONE_LEVEL)?;
    let frac = sum.within_bound as f64 / sum.rate_checked.max(1) as f64;
    let times: Vec<f64> = runs.iter().filter_map(|r| r.rounds_to(s.tau)).map(|t| t as f64).collect();
    Ok((
        frac >= RATE_MIN_FRACTION,
        format!("{}/{} runs within the bound at δ={}; median rounds to τ={} is {}", sum.within_bound, sum.rate_checked, s.delta, s.tau, median(&times)),
    ))
}

fn rejection_law() -> Result<(bool, String)> {
    let members = vec![
        Labeling::new(vec![0, 0, 0, 0]),
        Labeling::new(vec![0, 1, 1, 0]),
        Labeling::new(vec![1, 1, 0, 0]),
        Labeling::new(vec![0, 1, 0, 1]),
    ];
    let post = FinitePosterior::from_log_weights(members, vec![0.4f64.ln(), 0.3f64.ln(), 0.2f64.ln(), 0.1f64.ln()])?;
    let queries = vec![Query::new(vec![0, 1])?, Query::new(vec![2])?, Query::new(vec![1, 2, 3])?];
    let nu = vec![0.5, 0.3, 0.2];
    let sampler = QuerySampler::explicit(queries.clone(), nu.clone())?;
    // brute force: nu(q) * sum_{g,g'} pi(g) pi(g') d(g,g';q)
    let w = post.weights();
    let mut target = Vec::new();
    for (q, p) in queries.iter().zip(&nu) {
        let atoms = crate::structures::decompose(q, SpaceKind::Classification)?;
        let mut u = 0.0;
        for i in 0..post.len() {
            for j in 0..post.len() {
                let d = crate::structures::disagreement_on(post.structure(i), post.structure(j), &atoms)?;
                u += w[i] * w[j] * d;
            }
        }
        target.push(p * u);
    }
    let z: f64 = target.iter().sum();
    target.iter_mut().for_each(|t| *t /= z);
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let mut counts = vec![0usize; queries.len()];
    for _ in 0..REJECTION_SELECTIONS {
        match select_rejection(&post, &sampler, SpaceKind::Classification, SelectionMode::ZeroOne, &mut rng, 10_000)? {
            Selection::Chosen(q) => counts[queries.iter().position(|x| *x == q).expect("pool query")] += 1,
            Selection::NoInformativeQuery => return Ok((false, "sampler reported no informative query".into())),
        }
    }
    let emp: Vec<f64> = counts.iter().map(|&c| c as f64 / REJECTION_SELECTIONS as f64).collect();
    let tv = 0.5 * emp.iter().zip(&target).map(|(a, b)| (a - b).abs()).sum::<f64>();
    Ok((tv <= REJECTION_TV, format!("TV {tv:.4}; empirical {emp:.4?} vs {target:.4?}")))
}

fn linear_dominance() -> Result<(bool, String)> {
    let settings = LinearSettings::default();
    let mut ok = true;
    let mut parts = Vec::new();
    for &p in &settings.noise {
        let cells = (0..LINEAR_SEEDS).map(|seed| run_cell(&settings, p, seed)).collect::<Result<Vec<_>>>()?;
        let random = median_labels(&settings, &cells, 0);
        let qbc = median_labels(&settings, &cells, 1);
        ok &= qbc <= random;
        parts.push(format!("p={p}: qbc {qbc} vs random {random}"));
    }
    Ok((ok, format!("median labels to p+{}: {}", settings.margin, parts.join(", "))))
}

fn kernel_mnist() -> Result<(bool, String)> {
    let settings = KernelSettings::default();
    let Ok(dir) = settings.resolve_dir() else {
        return Ok((false, format!("MNIST IDX files unavailable (set {MNIST_ENV})")));
    };
    let (mut active, mut random) = (Vec::new(), Vec::new());
    for seed in 0..KERNEL_SEEDS {
        let split = load_split(&dir, settings.n_train, settings.n_test, seed)?;
        let a = run_arm(&settings, &split, KernelArm::Active, seed)?;
        let r = run_arm(&settings, &split, KernelArm::Random, seed)?;
        active.push(error_at(&a, 600).ok_or_else(|| Error::Config("no checkpoint at 600".into()))?);
        random.push(error_at(&r, 1200).ok_or_else(|| Error::Config("no checkpoint at 1200".into()))?);
    }
    let (a, r) = (median(&active), median(&random));
    Ok((a <= r, format!("median active error @600 {a:.4} vs random @1200 {r:.4}")))
}

/// Whether the kernel-MNIST data is present in this environment.
pub fn mnist_available() -> bool {
    KernelSettings::default().resolve_dir().map(|d| d.is_dir()).unwrap_or(false)
}

fn clustering() -> Result<(bool, String)> {
    let settings = ClusteringSettings::defaults(ClusterDataset::Blobs);
    let mut reached = 0;
    let mut worse = Vec::new();
    for seed in 0..CLUSTERING_SEEDS {
        let r = run_seed(&settings, seed)?;
        if r.sqbc.constraints_to_reach(settings.target_distance).is_some_and(|c| c <= CLUSTERING_MAX_CONSTRAINTS) {
            reached += 1;
        }
        let (s, v) = (r.sqbc.final_distance(settings.final_window), r.vanilla.final_distance(settings.final_window));
        if s > v + FINAL_DISTANCE_SLACK {
            worse.push(format!("seed {seed}: {s:.4} > {v:.4}"));
        }
    }
    let iris = run_experiment("clustering-iris", &ExperimentConfig::new(), &[0])?;
    let arms_present = ["sqbc", "random", "vanilla"]
        .iter()
        .all(|a| iris.rows.iter().any(|r| r.metric == format!("{a}/clustering_distance")));
    let ok = reached >= CLUSTERING_MIN_REACHED && worse.is_empty() && arms_present;
    Ok((
        ok,
        format!(
            "blobs: {reached}/{CLUSTERING_SEEDS} seeds reach {} within {CLUSTERING_MAX_CONSTRAINTS} constraints; SQBC final above vanilla: [{}]; iris curves for all arms: {arms_present}",
            settings.target_distance,
            worse.join("; ")
        ),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_criterion_has_a_unique_id() {
        let mut ids: Vec<&str> = criteria().iter().map(|c| c.0).collect();
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), criteria().len());
        assert!(run_criterion("nope").is_err());
    }

    #[test]
    fn tv_of_identical_laws_is_zero() {
        let mut a = BTreeMap::new();
        a.insert(vec![0, 1], 0.25);
        a.insert(vec![0, 0], 0.75);
        assert_eq!(total_variation(&a, &a), 0.0);
        let mut b = BTreeMap::new();
        b.insert(vec![0, 0], 1.0);
        assert!((total_variation(&a, &b) - 0.25).abs() < 1e-15);
    }
}
