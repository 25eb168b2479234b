//! Collapsed Gibbs sampling for finite mixtures conditioned on pairwise
//! feedback.
//!
//! Mixture weights (symmetric Dirichlet) and component parameters are
//! integrated out. Must-link and cannot-link feedback enters each conditional
//! as `exp(-weight)` per violated constraint; infinite weights are hard.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::posterior::FinitePosterior;
use crate::structures::{Atom, FlatClustering};

/// Penalty used for one draw when hard constraints leave no feasible cluster.
pub const FALLBACK_WEIGHT: f64 = 50.0;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// A finite mixture whose component parameters can be integrated out.
pub trait ClusterModel {
    type Stats: Clone + std::fmt::Debug;

    fn k(&self) -> usize;
    fn alpha(&self) -> f64;
    fn len(&self) -> usize;
    fn is_empty(&self) -> bool {
        self.len() == 0
    }
    fn empty_stats(&self) -> Self::Stats;
    fn add(&self, stats: &mut Self::Stats, i: usize);
    fn remove(&self, stats: &mut Self::Stats, i: usize);
    fn count(&self, stats: &Self::Stats) -> usize;
    /// Log predictive density of point `i` given the points in `stats`.
    fn log_predictive(&self, stats: &Self::Stats, i: usize) -> f64;
    /// Log marginal likelihood of the points in `stats`.
    fn log_marginal(&self, stats: &Self::Stats) -> f64;
    /// True when the two statistics describe the same point set.
    fn stats_match(&self, a: &Self::Stats, b: &Self::Stats) -> bool;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MogHyper {
    pub k: usize,
    pub alpha: f64,
    /// Prior mean of component means; the data mean when absent.
    pub mu0: Option<Vec<f64>>,
    pub sigma0: f64,
    pub sigma: f64,
}

impl MogHyper {
    pub fn new(k: usize, alpha: f64, sigma0: f64, sigma: f64) -> MogHyper {
        MogHyper { k, alpha, mu0: None, sigma0, sigma }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MobHyper {
    pub k: usize,
    pub alpha: f64,
    pub beta_a: f64,
    pub gamma_a: f64,
}

fn check_k_alpha(k: usize, alpha: f64) -> Result<()> {
    if k < 2 {
        return Err(Error::Config(format!("k must be at least 2, got {k}")));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::Config(format!("alpha must be positive, got {alpha}")));
    }
    Ok(())
}

/// Spherical Gaussian mixture with known observation scale.
#[derive(Clone, Debug)]
pub struct MixtureOfGaussians {
    data: Arc<Vec<Vec<f64>>>,
    k: usize,
    alpha: f64,
    mu0: Vec<f64>,
    var0: f64,
    var: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GaussStats {
    pub n: usize,
    pub sum: Vec<f64>,
    pub sumsq: Vec<f64>,
}

impl MixtureOfGaussians {
    pub fn new(data: Arc<Vec<Vec<f64>>>, hyper: &MogHyper) -> Result<MixtureOfGaussians> {
        check_k_alpha(hyper.k, hyper.alpha)?;
        if !(hyper.sigma0 > 0.0 && hyper.sigma > 0.0) {
            return Err(Error::Config("sigma and sigma0 must be positive".into()));
        }
        let dim = data.first().map_or(0, Vec::len);
        if data.iter().any(|x| x.len() != dim) {
            return Err(Error::Config("all points need the same dimension".into()));
        }
        if data.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature value".into()));
        }
        let mu0 = match &hyper.mu0 {
            Some(m) if m.len() != dim => {
                return Err(Error::Config(format!("mu0 has dimension {} but data has {dim}", m.len())))
            }
            Some(m) => m.clone(),
            None => {
                let n = data.len().max(1) as f64;
                (0..dim).map(|d| data.iter().map(|x| x[d]).sum::<f64>() / n).collect()
            }
        };
        Ok(MixtureOfGaussians {
            data,
            k: hyper.k,
            alpha: hyper.alpha,
            mu0,
            var0: hyper.sigma0 * hyper.sigma0,
            var: hyper.sigma * hyper.sigma,
        })
    }

    pub fn data(&self) -> &[Vec<f64>] {
        &self.data
    }

    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }
}

impl ClusterModel for MixtureOfGaussians {
    type Stats = GaussStats;

    fn k(&self) -> usize {
        self.k
    }

    fn alpha(&self) -> f64 {
        self.alpha
    }

    fn len(&self) -> usize {
        self.data.len()
    }

    fn empty_stats(&self) -> GaussStats {
        let d = self.mu0.len();
        GaussStats { n: 0, sum: vec![0.0; d], sumsq: vec![0.0; d] }
    }

    fn add(&self, s: &mut GaussStats, i: usize) {
        s.n += 1;
        for ((a, b), x) in s.sum.iter_mut().zip(s.sumsq.iter_mut()).zip(&self.data[i]) {
            *a += x;
            *b += x * x;
        }
    }

    fn remove(&self, s: &mut GaussStats, i: usize) {
        s.n -= 1;
        for ((a, b), x) in s.sum.iter_mut().zip(s.sumsq.iter_mut()).zip(&self.data[i]) {
            *a -= x;
            *b -= x * x;
        }
    }

    fn count(&self, s: &GaussStats) -> usize {
        s.n
    }

    fn log_predictive(&self, s: &GaussStats, i: usize) -> f64 {
        let prec = 1.0 / self.var0 + s.n as f64 / self.var;
        let pred_var = self.var + 1.0 / prec;
        let mut total = 0.0;
        for ((x, sum), m0) in self.data[i].iter().zip(&s.sum).zip(&self.mu0) {
            let mean = (m0 / self.var0 + sum / self.var) / prec;
            total += -0.5 * (LN_2PI + pred_var.ln() + (x - mean).powi(2) / pred_var);
        }
        total
    }

    fn log_marginal(&self, s: &GaussStats) -> f64 {
        if s.n == 0 {
            return 0.0;
        }
        let n = s.n as f64;
        let denom = self.var + n * self.var0;
        let mut total = 0.0;
        for ((sum, sumsq), m0) in s.sum.iter().zip(&s.sumsq).zip(&self.mu0) {
            let dev = sum - n * m0;
            let sq = sumsq - 2.0 * m0 * sum + n * m0 * m0;
            total += -0.5 * n * (LN_2PI + self.var.ln()) + 0.5 * (self.var / denom).ln() - sq / (2.0 * self.var)
                + self.var0 * dev * dev / (2.0 * self.var * denom);
        }
        total
    }

    fn stats_match(&self, a: &GaussStats, b: &GaussStats) -> bool {
        let close = |x: &[f64], y: &[f64]| x.iter().zip(y).all(|(p, q)| (p - q).abs() <= 1e-9 * (1.0 + p.abs().max(q.abs())));
        a.n == b.n && close(&a.sum, &b.sum) && close(&a.sumsq, &b.sumsq)
    }
}

/// Product-Bernoulli mixture with Beta priors on every bias.
#[derive(Clone, Debug)]
pub struct MixtureOfBernoullis {
    data: Arc<Vec<Vec<bool>>>,
    hyper: MobHyper,
    dim: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BernoulliStats {
    pub n: usize,
    pub ones: Vec<usize>,
}

impl MixtureOfBernoullis {
    pub fn new(data: Arc<Vec<Vec<bool>>>, hyper: MobHyper) -> Result<MixtureOfBernoullis> {
        check_k_alpha(hyper.k, hyper.alpha)?;
        if !(hyper.beta_a > 0.0 && hyper.gamma_a > 0.0) {
            return Err(Error::Config("Beta prior parameters must be positive".into()));
        }
        let dim = data.first().map_or(0, Vec::len);
        if data.iter().any(|x| x.len() != dim) {
            return Err(Error::Config("all points need the same dimension".into()));
        }
        Ok(MixtureOfBernoullis { data, hyper, dim })
    }

    pub fn data(&self) -> &[Vec<bool>] {
        &self.data
    }
}

impl ClusterModel for MixtureOfBernoullis {
    type Stats = BernoulliStats;

    fn k(&self) -> usize {
        self.hyper.k
    }

    fn alpha(&self) -> f64 {
        self.hyper.alpha
    }

    fn len(&self) -> usize {
        self.data.len()
    }

    fn empty_stats(&self) -> BernoulliStats {
        BernoulliStats { n: 0, ones: vec![0; self.dim] }
    }

    fn add(&self, s: &mut BernoulliStats, i: usize) {
        s.n += 1;
        for (o, &b) in s.ones.iter_mut().zip(&self.data[i]) {
            *o += usize::from(b);
        }
    }

    fn remove(&self, s: &mut BernoulliStats, i: usize) {
        s.n -= 1;
        for (o, &b) in s.ones.iter_mut().zip(&self.data[i]) {
            *o -= usize::from(b);
        }
    }

    fn count(&self, s: &BernoulliStats) -> usize {
        s.n
    }

    fn log_predictive(&self, s: &BernoulliStats, i: usize) -> f64 {
        let (a, g) = (self.hyper.beta_a, self.hyper.gamma_a);
        let denom = (s.n as f64 + a + g).ln();
        let mut total = 0.0;
        for (&o, &b) in s.ones.iter().zip(&self.data[i]) {
            let num = if b { o as f64 + a } else { (s.n - o) as f64 + g };
            total += num.ln() - denom;
        }
        total
    }

    fn log_marginal(&self, s: &BernoulliStats) -> f64 {
        let (a, g) = (self.hyper.beta_a, self.hyper.gamma_a);
        let ln_beta = |p: f64, q: f64| ln_gamma(p) + ln_gamma(q) - ln_gamma(p + q);
        let base = ln_beta(a, g);
        s.ones.iter().map(|&o| ln_beta(o as f64 + a, (s.n - o) as f64 + g) - base).sum()
    }

    fn stats_match(&self, a: &BernoulliStats, b: &BernoulliStats) -> bool {
        a == b
    }
}

/// Accumulated must-link (`same = true`) and cannot-link weights per pair.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    pairs: BTreeMap<(usize, usize), PairWeights>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PairWeights {
    pub must: f64,
    pub cannot: f64,
}

impl ConstraintSet {
    pub fn new() -> ConstraintSet {
        ConstraintSet::default()
    }

    /// Adds a constraint; repeated pairs accumulate weight.
    pub fn add(&mut self, atom: Atom, same: bool, weight: f64) -> Result<()> {
        let Atom::Pair(i, j) = atom else {
            return Err(Error::AtomMismatch { atom: atom.to_string(), space: crate::structures::SpaceKind::Clustering });
        };
        if weight.is_nan() || weight < 0.0 {
            return Err(Error::Config(format!("constraint weight must be >= 0, got {weight}")));
        }
        let w = self.pairs.entry((i, j)).or_default();
        if same {
            w.must += weight;
        } else {
            w.cannot += weight;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = ((usize, usize), PairWeights)> + '_ {
        self.pairs.iter().map(|(k, v)| (*k, *v))
    }

    /// Total penalty of an assignment; infinite if a hard constraint fails.
    pub fn penalty(&self, z: &[usize]) -> f64 {
        self.iter()
            .map(|((i, j), w)| {
                let mut p = 0.0;
                if z[i] == z[j] && w.cannot > 0.0 {
                    p += w.cannot;
                }
                if z[i] != z[j] && w.must > 0.0 {
                    p += w.must;
                }
                p
            })
            .sum()
    }

    /// True if `z` satisfies every constraint with positive weight.
    pub fn satisfied_by(&self, z: &[usize]) -> bool {
        self.penalty(z) == 0.0
    }

    fn adjacency(&self, n: usize) -> Vec<Vec<(usize, PairWeights)>> {
        let mut adj = vec![Vec::new(); n];
        for ((i, j), w) in self.iter() {
            adj[i].push((j, w));
            adj[j].push((i, w));
        }
        adj
    }
}

/// One Gibbs chain: assignment, per-cluster statistics and its own stream.
#[derive(Clone, Debug)]
pub struct GibbsState<M: ClusterModel> {
    z: Vec<usize>,
    stats: Vec<M::Stats>,
    rng: ChaCha8Rng,
    fallbacks: usize,
}

fn sample_log<R: Rng + ?Sized>(logp: &[f64], rng: &mut R) -> usize {
    let m = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logp.iter().map(|l| (l - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    for (c, wc) in w.iter().enumerate() {
        if u < *wc {
            return c;
        }
        u -= wc;
    }
    // round-off: last cluster with positive weight
    w.iter().rposition(|&x| x > 0.0).unwrap_or(0)
}

impl<M: ClusterModel> GibbsState<M> {
    /// Uniformly random initial assignment.
    pub fn new(model: &M, seed: u64) -> GibbsState<M> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z: Vec<usize> = (0..model.len()).map(|_| rng.random_range(0..model.k())).collect();
        GibbsState::from_parts(model, z, rng)
    }

    pub fn from_assignment(model: &M, z: Vec<usize>, seed: u64) -> Result<GibbsState<M>> {
        if z.len() != model.len() || z.iter().any(|&c| c >= model.k()) {
            return Err(Error::InvalidStructure("assignment does not match the model".into()));
        }
        Ok(GibbsState::from_parts(model, z, ChaCha8Rng::seed_from_u64(seed)))
    }

    fn from_parts(model: &M, z: Vec<usize>, rng: ChaCha8Rng) -> GibbsState<M> {
        let stats = recompute(model, &z);
        GibbsState { z, stats, rng, fallbacks: 0 }
    }

    pub fn assignment(&self) -> &[usize] {
        &self.z
    }

    pub fn stats(&self) -> &[M::Stats] {
        &self.stats
    }

    pub fn clustering(&self, model: &M) -> FlatClustering {
        FlatClustering::new(self.z.clone(), model.k()).expect("ids below k")
    }

    /// Draws that needed the soft fallback penalty so far.
    pub fn fallbacks(&self) -> usize {
        self.fallbacks
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    /// One full pass in item order.
    pub fn sweep(&mut self, model: &M, constraints: &ConstraintSet) {
        let n = model.len();
        let k = model.k();
        let prior = model.alpha() / k as f64;
        let adj = constraints.adjacency(n);
        let mut logp = vec![0.0; k];
        for i in 0..n {
            let old = self.z[i];
            model.remove(&mut self.stats[old], i);
            for (c, lp) in logp.iter_mut().enumerate() {
                *lp = (model.count(&self.stats[c]) as f64 + prior).ln() + model.log_predictive(&self.stats[c], i)
                    - penalty_at(&adj[i], &self.z, c, None);
            }
            if logp.iter().all(|l| *l == f64::NEG_INFINITY) {
                self.fallbacks += 1;
                log::debug!("hard constraints leave item {i} no feasible cluster; using weight {FALLBACK_WEIGHT}");
                for (c, lp) in logp.iter_mut().enumerate() {
                    *lp = (model.count(&self.stats[c]) as f64 + prior).ln() + model.log_predictive(&self.stats[c], i)
                        - penalty_at(&adj[i], &self.z, c, Some(FALLBACK_WEIGHT));
                }
            }
            let c = sample_log(&logp, &mut self.rng);
            self.z[i] = c;
            model.add(&mut self.stats[c], i);
        }
        debug_assert!(self.stats_consistent(model), "sufficient statistics drifted");
    }

    /// Compares incremental statistics with a recomputation from `z`.
    pub fn stats_consistent(&self, model: &M) -> bool {
        let fresh = recompute(model, &self.z);
        fresh.iter().zip(&self.stats).all(|(a, b)| model.stats_match(a, b))
    }

    pub fn log_joint(&self, model: &M, constraints: &ConstraintSet) -> f64 {
        log_joint(model, &self.z, constraints)
    }
}

fn penalty_at(adj: &[(usize, PairWeights)], z: &[usize], c: usize, cap: Option<f64>) -> f64 {
    let cap_w = |w: f64| match cap {
        Some(v) if w.is_infinite() => v,
        _ => w,
    };
    let mut p = 0.0;
    for &(j, w) in adj {
        if z[j] == c {
            if w.cannot > 0.0 {
                p += cap_w(w.cannot);
            }
        } else if w.must > 0.0 {
            p += cap_w(w.must);
        }
    }
    p
}

fn recompute<M: ClusterModel>(model: &M, z: &[usize]) -> Vec<M::Stats> {
    let mut stats = vec![model.empty_stats(); model.k()];
    for (i, &c) in z.iter().enumerate() {
        model.add(&mut stats[c], i);
    }
    stats
}

/// Unnormalised log posterior of an assignment: Dirichlet-multinomial prior,
/// collapsed likelihood and the constraint penalty.
pub fn log_joint<M: ClusterModel>(model: &M, z: &[usize], constraints: &ConstraintSet) -> f64 {
    let k = model.k() as f64;
    let a = model.alpha();
    let stats = recompute(model, z);
    let mut total = ln_gamma(a) - ln_gamma(z.len() as f64 + a);
    for s in &stats {
        total += ln_gamma(model.count(s) as f64 + a / k) - ln_gamma(a / k) + model.log_marginal(s);
    }
    total - constraints.penalty(z)
}

/// Fraction of item pairs on which co-membership differs.
pub fn clustering_distance(z: &[usize], z_star: &[usize]) -> Result<f64> {
    if z.len() != z_star.len() {
        return Err(Error::InvalidStructure(format!("{} vs {} items", z.len(), z_star.len())));
    }
    let n = z.len();
    if n < 2 {
        return Ok(0.0);
    }
    let mut differ = 0usize;
    for i in 0..n {
        for j in i + 1..n {
            if (z[i] == z[j]) != (z_star[i] == z_star[j]) {
                differ += 1;
            }
        }
    }
    Ok(differ as f64 / (n * (n - 1) / 2) as f64)
}

/// Sweep schedule for building a committee from one chain.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CommitteeSpec {
    pub sweeps: usize,
    pub burn_in: usize,
    pub thinning: usize,
    pub n_samples: usize,
}

impl CommitteeSpec {
    fn validate(&self) -> Result<()> {
        if self.burn_in >= self.sweeps {
            return Err(Error::Config(format!("burn-in {} must be below total sweeps {}", self.burn_in, self.sweeps)));
        }
        if self.thinning == 0 || self.n_samples == 0 {
            return Err(Error::Config("thinning and sample count must be positive".into()));
        }
        Ok(())
    }
}

/// Merges relabelings and duplicates into a weighted committee.
pub fn committee_from_states(states: &[FlatClustering]) -> Result<FinitePosterior<FlatClustering>> {
    let mut counts: BTreeMap<Vec<usize>, (FlatClustering, usize)> = BTreeMap::new();
    for s in states {
        let c = s.canonical();
        counts.entry(c.assignment().to_vec()).or_insert((c, 0)).1 += 1;
    }
    let (members, logw): (Vec<_>, Vec<_>) = counts.into_values().map(|(c, n)| (c, (n as f64).ln())).unzip();
    FinitePosterior::from_log_weights(members, logw)
}

/// Runs a fresh chain and returns the thinned states as a committee.
pub fn posterior_committee<M: ClusterModel>(
    model: &M,
    constraints: &ConstraintSet,
    spec: &CommitteeSpec,
    seed: u64,
) -> Result<FinitePosterior<FlatClustering>> {
    spec.validate()?;
    let mut state = GibbsState::new(model, seed);
    let mut kept = Vec::new();
    for s in 1..=spec.sweeps {
        state.sweep(model, constraints);
        if s > spec.burn_in && (s - spec.burn_in).is_multiple_of(spec.thinning) {
            kept.push(state.clustering(model));
        }
    }
    if kept.is_empty() {
        return Err(Error::Config("schedule keeps no samples".into()));
    }
    let start = kept.len().saturating_sub(spec.n_samples);
    committee_from_states(&kept[start..])
}

/// One chain diagnostic row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostic {
    pub sweep: usize,
    pub log_joint: f64,
    pub distance: Option<f64>,
}

pub fn write_diagnostics<W: Write>(rows: &[ChainDiagnostic], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::structures::{Answer, Structure};
    use nalgebra::{DMatrix, DVector};
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest};

    fn mog(data: Vec<Vec<f64>>, k: usize) -> MixtureOfGaussians {
        MixtureOfGaussians::new(Arc::new(data), &MogHyper::new(k, 1.0, 1.5, 0.7)).unwrap()
    }

    // Independent oracle: the points of one component are jointly Gaussian
    // with covariance var I + var0 11^T in every dimension.
    fn mvn_marginal(points: &[&Vec<f64>], mu0: &[f64], var: f64, var0: f64) -> f64 {
        let n = points.len();
        if n == 0 {
            return 0.0;
        }
        let cov = DMatrix::identity(n, n) * var + DMatrix::from_element(n, n, var0);
        let chol = cov.cholesky().unwrap();
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let mut total = 0.0;
        for d in 0..mu0.len() {
            let x = DVector::from_fn(n, |i, _| points[i][d] - mu0[d]);
            let q = x.dot(&chol.solve(&x));
            total += -0.5 * (q + log_det + n as f64 * LN_2PI);
        }
        total
    }

    fn exact_partition_distribution<M: ClusterModel>(model: &M, cons: &ConstraintSet) -> BTreeMap<Vec<usize>, f64> {
        let n = model.len();
        let k = model.k();
        let total = k.pow(n as u32);
        let mut lj = Vec::with_capacity(total);
        let mut zs = Vec::with_capacity(total);
        for code in 0..total {
            let mut z = Vec::with_capacity(n);
            let mut c = code;
            for _ in 0..n {
                z.push(c % k);
                c /= k;
            }
            lj.push(log_joint(model, &z, cons));
            zs.push(z);
        }
        let m = lj.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let norm: f64 = lj.iter().map(|l| (l - m).exp()).sum();
        let mut out = BTreeMap::new();
        for (z, l) in zs.into_iter().zip(lj) {
            let key = FlatClustering::new(z, k).unwrap().canonical().assignment().to_vec();
            *out.entry(key).or_insert(0.0) += (l - m).exp() / norm;
        }
        out
    }

    fn gibbs_partition_frequencies<M: ClusterModel>(model: &M, cons: &ConstraintSet, sweeps: usize, seed: u64) -> BTreeMap<Vec<usize>, f64> {
        let mut s = GibbsState::new(model, seed);
        for _ in 0..100 {
            s.sweep(model, cons);
        }
        let mut out = BTreeMap::new();
        for _ in 0..sweeps {
            s.sweep(model, cons);
            *out.entry(s.clustering(model).canonical().assignment().to_vec()).or_insert(0.0) += 1.0 / sweeps as f64;
        }
        out
    }

    fn tv(a: &BTreeMap<Vec<usize>, f64>, b: &BTreeMap<Vec<usize>, f64>) -> f64 {
        let mut keys: Vec<_> = a.keys().chain(b.keys()).collect();
        keys.sort();
        keys.dedup();
        0.5 * keys.iter().map(|k| (a.get(*k).unwrap_or(&0.0) - b.get(*k).unwrap_or(&0.0)).abs()).sum::<f64>()
    }

    #[test]
    fn gaussian_marginal_matches_mvn_oracle() {
        let data = vec![vec![0.3, -1.0], vec![1.2, 0.4], vec![-0.7, 2.0], vec![0.0, 0.0]];
        let m = mog(data.clone(), 2);
        let mut s = m.empty_stats();
        for i in 0..4 {
            m.add(&mut s, i);
            let pts: Vec<&Vec<f64>> = data[..=i].iter().collect();
            let oracle = mvn_marginal(&pts, m.mu0(), 0.49, 2.25);
            assert!((m.log_marginal(&s) - oracle).abs() < 1e-10);
        }
        // chain rule: marginal(n+1) - marginal(n) = predictive
        let mut s3 = m.empty_stats();
        for i in 0..3 {
            m.add(&mut s3, i);
        }
        let diff = m.log_marginal(&s) - m.log_marginal(&s3);
        assert!((diff - m.log_predictive(&s3, 3)).abs() < 1e-10);
    }

    #[test]
    fn bernoulli_predictive_and_marginal() {
        let data = vec![vec![true, false], vec![true, true], vec![false, false]];
        let m = MixtureOfBernoullis::new(Arc::new(data), MobHyper { k: 2, alpha: 1.0, beta_a: 1.0, gamma_a: 2.0 }).unwrap();
        let mut s = m.empty_stats();
        m.add(&mut s, 0);
        // point 2 is all zeros: bit0 (0 + 2) / (1 + 3), bit1 (1 + 2) / (1 + 3)
        let expect = (2.0f64 / 4.0).ln() + (3.0f64 / 4.0).ln();
        assert!((m.log_predictive(&s, 2) - expect).abs() < 1e-12);
        let before = m.log_marginal(&s);
        m.add(&mut s, 2);
        assert!((m.log_marginal(&s) - before - expect).abs() < 1e-12);
    }

    #[test]
    fn log_joint_penalty_bookkeeping() {
        let m = mog(vec![vec![0.0], vec![0.1], vec![3.0]], 2);
        let z = vec![0, 0, 1];
        let base = log_joint(&m, &z, &ConstraintSet::new());
        let mut sat = ConstraintSet::new();
        sat.add(Atom::pair(0, 1).unwrap(), true, 2.0).unwrap();
        assert_eq!(log_joint(&m, &z, &sat), base);
        let mut vio = ConstraintSet::new();
        vio.add(Atom::pair(1, 2).unwrap(), true, 0.8).unwrap();
        assert!((log_joint(&m, &z, &vio) - (base - 0.8)).abs() < 1e-12);
        let swapped = vec![1, 1, 0];
        assert!((log_joint(&m, &swapped, &vio) - log_joint(&m, &z, &vio)).abs() < 1e-12);
        vio.add(Atom::pair(1, 2).unwrap(), true, 0.2).unwrap();
        assert_eq!(vio.len(), 1);
        assert!((log_joint(&m, &z, &vio) - (base - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn single_point_is_symmetric() {
        let m = mog(vec![vec![1.0]], 3);
        let mut counts = [0usize; 3];
        let mut s = GibbsState::new(&m, 1);
        for _ in 0..30_000 {
            s.sweep(&m, &ConstraintSet::new());
            counts[s.assignment()[0]] += 1;
        }
        for c in counts {
            assert!((c as f64 / 30_000.0 - 1.0 / 3.0).abs() < 0.015);
        }
    }

    #[test]
    fn hard_constraints_always_hold() {
        let data: Vec<Vec<f64>> = (0..8).map(|i| vec![i as f64 * 0.5]).collect();
        let m = mog(data, 2);
        let mut cons = ConstraintSet::new();
        cons.add(Atom::pair(0, 7).unwrap(), true, f64::INFINITY).unwrap();
        cons.add(Atom::pair(3, 4).unwrap(), false, f64::INFINITY).unwrap();
        let mut s = GibbsState::from_assignment(&m, vec![0, 0, 0, 0, 1, 1, 1, 0], 2).unwrap();
        for _ in 0..2000 {
            s.sweep(&m, &cons);
            let z = s.assignment();
            assert_eq!(z[0], z[7]);
            assert_ne!(z[3], z[4]);
        }
        assert_eq!(s.fallbacks(), 0);
    }

    #[test]
    fn infeasible_hard_constraints_fall_back() {
        let m = mog(vec![vec![0.0], vec![1.0], vec![2.0]], 2);
        let mut cons = ConstraintSet::new();
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            cons.add(Atom::pair(i, j).unwrap(), false, f64::INFINITY).unwrap();
        }
        let mut s = GibbsState::new(&m, 3);
        for _ in 0..20 {
            s.sweep(&m, &cons);
        }
        assert!(s.fallbacks() > 0);
    }

    #[test]
    fn zero_weight_constraints_change_nothing() {
        let data: Vec<Vec<f64>> = (0..12).map(|i| vec![(i as f64).sin() * 3.0, (i as f64).cos()]).collect();
        let m = mog(data, 3);
        let mut zero = ConstraintSet::new();
        zero.add(Atom::pair(0, 5).unwrap(), true, 0.0).unwrap();
        zero.add(Atom::pair(2, 9).unwrap(), false, 0.0).unwrap();
        let mut a = GibbsState::new(&m, 77);
        let mut b = GibbsState::new(&m, 77);
        for _ in 0..500 {
            a.sweep(&m, &ConstraintSet::new());
            b.sweep(&m, &zero);
            assert_eq!(a.assignment(), b.assignment());
        }
    }

    #[test]
    fn mog_matches_enumeration() {
        let data = vec![vec![-1.1], vec![-0.9], vec![0.2], vec![1.0], vec![1.3]];
        let m = MixtureOfGaussians::new(Arc::new(data), &MogHyper::new(2, 1.0, 1.0, 0.6)).unwrap();
        let mut cons = ConstraintSet::new();
        cons.add(Atom::pair(1, 2).unwrap(), true, 1.5).unwrap();
        let exact = exact_partition_distribution(&m, &cons);
        let emp = gibbs_partition_frequencies(&m, &cons, 100_000, 4);
        assert!(tv(&exact, &emp) <= 0.02, "tv {}", tv(&exact, &emp));
    }

    #[test]
    fn mob_matches_enumeration() {
        let data = vec![vec![true, true], vec![true, false], vec![false, false], vec![false, true], vec![true, true]];
        let m = MixtureOfBernoullis::new(Arc::new(data), MobHyper { k: 2, alpha: 1.0, beta_a: 1.0, gamma_a: 1.0 }).unwrap();
        let mut cons = ConstraintSet::new();
        cons.add(Atom::pair(0, 2).unwrap(), false, f64::INFINITY).unwrap();
        let exact = exact_partition_distribution(&m, &cons);
        let emp = gibbs_partition_frequencies(&m, &cons, 100_000, 5);
        assert!(tv(&exact, &emp) <= 0.02, "tv {}", tv(&exact, &emp));
    }

    #[test]
    fn committee_tracks_exact_uncertainty() {
        let data = vec![vec![-1.0], vec![-0.6], vec![0.1], vec![0.7], vec![1.1]];
        let m = MixtureOfGaussians::new(Arc::new(data), &MogHyper::new(2, 1.0, 1.0, 0.6)).unwrap();
        let cons = ConstraintSet::new();
        let exact = exact_partition_distribution(&m, &cons);
        let spec = CommitteeSpec { sweeps: 20_100, burn_in: 100, thinning: 1, n_samples: 20_000 };
        let committee = posterior_committee(&m, &cons, &spec, 6).unwrap();
        for (i, j) in [(0, 1), (1, 2), (2, 3), (0, 4)] {
            let atom = Atom::pair(i, j).unwrap();
            let p_same: f64 = exact.iter().filter(|(z, _)| z[i] == z[j]).map(|(_, p)| p).sum();
            let u_exact = 1.0 - p_same * p_same - (1.0 - p_same) * (1.0 - p_same);
            let u = committee.uncertainty_atom(&atom).unwrap();
            assert!((u - u_exact).abs() < 0.05, "{u} vs {u_exact}");
        }
        assert!(committee.len() <= 20_000);
        let one = posterior_committee(&m, &cons, &CommitteeSpec { sweeps: 5, burn_in: 4, thinning: 1, n_samples: 1 }, 7).unwrap();
        assert_eq!(one.len(), 1);
        assert!(posterior_committee(&m, &cons, &CommitteeSpec { sweeps: 5, burn_in: 5, thinning: 1, n_samples: 1 }, 7).is_err());
    }

    #[test]
    fn committee_merges_relabelings() {
        let a = FlatClustering::new(vec![0, 0, 1], 2).unwrap();
        let b = FlatClustering::new(vec![1, 1, 0], 2).unwrap();
        let c = FlatClustering::new(vec![0, 1, 1], 2).unwrap();
        let p = committee_from_states(&[a.clone(), b, c]).unwrap();
        assert_eq!(p.len(), 2);
        assert!((p.target_mass(&a.canonical()) - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(p.structure(0).eval(&Atom::pair(0, 1).unwrap()).unwrap(), Answer::Same(true));
    }

    #[test]
    fn distance_examples() {
        assert_eq!(clustering_distance(&[0, 0, 1], &[0, 0, 1]).unwrap(), 0.0);
        assert_eq!(clustering_distance(&[0, 0, 1], &[1, 1, 0]).unwrap(), 0.0);
        assert!((clustering_distance(&[0, 0, 1], &[0, 1, 1]).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn diagnostics_csv() {
        let rows = vec![ChainDiagnostic { sweep: 1, log_joint: -3.5, distance: Some(0.25) }];
        let mut buf = Vec::new();
        write_diagnostics(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "sweep,log_joint,distance\n1,-3.5,0.25\n");
    }

    proptest! {
        #[test]
        fn distance_is_pseudometric(a in proptest::collection::vec(0usize..3, 7), b in proptest::collection::vec(0usize..3, 7), c in proptest::collection::vec(0usize..3, 7)) {
            let ab = clustering_distance(&a, &b).unwrap();
            prop_assert_eq!(ab, clustering_distance(&b, &a).unwrap());
            prop_assert!(ab <= clustering_distance(&a, &c).unwrap() + clustering_distance(&c, &b).unwrap() + 1e-12);
            let relabel: Vec<usize> = a.iter().map(|x| (x + 1) % 3).collect();
            prop_assert_eq!(clustering_distance(&a, &relabel).unwrap(), 0.0);
        }

        #[test]
        fn stats_stay_consistent(seed in 0u64..1000) {
            let data: Vec<Vec<f64>> = (0..15).map(|i| vec![((i * 7) % 5) as f64, (i as f64) * 0.3]).collect();
            let m = mog(data, 3);
            let mut cons = ConstraintSet::new();
            cons.add(Atom::pair(0, 1).unwrap(), false, 2.0).unwrap();
            let mut s = GibbsState::new(&m, seed);
            for _ in 0..20 {
                s.sweep(&m, &cons);
            }
            prop_assert!(s.stats_consistent(&m));
        }
    }
}
