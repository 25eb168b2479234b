//! Gaussian posteriors over linear functions under squared loss.
//!
//! [`GaussianPosterior`] works in an explicit feature space. [`KernelPosterior`]
//! works in the dual: it keeps the history, the Gram matrix and a Cholesky
//! factor of `cI + K` with `c = 1 / (2 sigma0^2 beta)`, extended one row per
//! update. One factor can carry several output heads that share the history,
//! which is how [`OneVsAll`] stores its per-class posteriors.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::query_engine::Selection;
use crate::structures::dot;

/// Variances at or below this value are treated as zero.
pub const VARIANCE_FLOOR: f64 = 1e-12;
/// Updates between full refactorisations of the dual factor.
pub const REFACTOR_EVERY: usize = 256;
const MAX_CONDITION: f64 = 1e14;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelSpec {
    Linear,
    Rbf { gamma: f64 },
}

impl KernelSpec {
    pub fn rbf(gamma: f64) -> Result<KernelSpec> {
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::Config(format!("rbf gamma must be positive, got {gamma}")));
        }
        Ok(KernelSpec::Rbf { gamma })
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        match self {
            KernelSpec::Linear => dot(x, y),
            KernelSpec::Rbf { gamma } => {
                let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

fn check_hyper(beta: f64, sigma0_sq: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Config(format!("beta must be positive and finite, got {beta}")));
    }
    if !(sigma0_sq > 0.0 && sigma0_sq.is_finite()) {
        return Err(Error::Config(format!("sigma0^2 must be positive, got {sigma0_sq}")));
    }
    Ok(())
}

/// Explicit posterior `N(mean, cov)` over weight vectors.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub sigma0_sq: f64,
    pub beta: f64,
    // 2 beta Phi^T y, kept for rank-one updates
    moment: DVector<f64>,
}

impl GaussianPosterior {
    pub fn prior(dim: usize, beta: f64, sigma0_sq: f64) -> Result<GaussianPosterior> {
        check_hyper(beta, sigma0_sq)?;
        Ok(GaussianPosterior {
            mean: DVector::zeros(dim),
            cov: DMatrix::identity(dim, dim) * sigma0_sq,
            sigma0_sq,
            beta,
            moment: DVector::zeros(dim),
        })
    }

    /// Closed-form posterior after observing rows of `phi` with targets `y`.
    pub fn explicit(phi: &DMatrix<f64>, y: &[f64], beta: f64, sigma0_sq: f64) -> Result<GaussianPosterior> {
        check_hyper(beta, sigma0_sq)?;
        if phi.nrows() != y.len() {
            return Err(Error::Config(format!("{} feature rows but {} targets", phi.nrows(), y.len())));
        }
        let d = phi.ncols();
        if phi.nrows() == 0 {
            return GaussianPosterior::prior(d, beta, sigma0_sq);
        }
        let precision = phi.transpose() * phi * (2.0 * beta) + DMatrix::identity(d, d) / sigma0_sq;
        let chol = precision.clone().cholesky().ok_or(Error::IllConditioned { condition: f64::INFINITY })?;
        let diag = chol.l().diagonal();
        let (lo, hi) = diag.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), v| (lo.min(*v), hi.max(*v)));
        let condition = (hi / lo).powi(2);
        if condition > MAX_CONDITION {
            return Err(Error::IllConditioned { condition });
        }
        let cov = chol.inverse();
        let cov = (&cov + cov.transpose()) * 0.5;
        let moment = phi.transpose() * DVector::from_column_slice(y) * (2.0 * beta);
        let mean = &cov * &moment;
        Ok(GaussianPosterior { mean, cov, sigma0_sq, beta, moment })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Sherman-Morrison update with one observation.
    pub fn update(&mut self, x: &[f64], y: f64) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::Config(format!("feature dimension {} != {}", x.len(), self.dim())));
        }
        let x = DVector::from_column_slice(x);
        let sx = &self.cov * &x;
        let denom = 1.0 + 2.0 * self.beta * x.dot(&sx);
        self.cov -= (&sx * sx.transpose()) * (2.0 * self.beta / denom);
        self.cov = (&self.cov + self.cov.transpose()) * 0.5;
        self.moment += x * (2.0 * self.beta * y);
        self.mean = &self.cov * &self.moment;
        Ok(())
    }

    /// Mean and variance of `<w, x>`.
    pub fn predictive(&self, x: &[f64]) -> (f64, f64) {
        let x = DVector::from_column_slice(x);
        let mu = self.mean.dot(&x);
        let var = x.dot(&(&self.cov * &x)).max(0.0);
        (mu, var)
    }

    pub fn log_density(&self, w: &[f64]) -> Result<f64> {
        let d = self.dim();
        let chol = self.cov.clone().cholesky().ok_or_else(|| Error::Numeric("covariance is not positive definite".into()))?;
        let diff = DVector::from_column_slice(w) - &self.mean;
        let z = chol.l().solve_lower_triangular(&diff).ok_or_else(|| Error::Numeric("singular factor".into()))?;
        let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
        Ok(-0.5 * (z.dot(&z) + log_det + d as f64 * (2.0 * std::f64::consts::PI).ln()))
    }

    pub fn sample_weights<R: Rng + ?Sized>(&self, rng: &mut R) -> Result<DVector<f64>> {
        let chol = self.cov.clone().cholesky().ok_or_else(|| Error::Numeric("covariance is not positive definite".into()))?;
        let z = DVector::from_fn(self.dim(), |_, _| rng.sample::<f64, _>(StandardNormal));
        Ok(&self.mean + chol.l() * z)
    }
}

/// Log of prior times likelihood factors at `w`, up to a constant.
pub fn log_unnormalized(phi: &DMatrix<f64>, y: &[f64], beta: f64, sigma0_sq: f64, w: &[f64]) -> f64 {
    let w = DVector::from_column_slice(w);
    let resid = phi * &w - DVector::from_column_slice(y);
    -w.dot(&w) / (2.0 * sigma0_sq) - beta * resid.dot(&resid)
}

/// Predictive mean per head and the shared variance at one point.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictive {
    pub mu: Vec<f64>,
    pub sigma_sq: f64,
}

/// Dual-form posterior with one or more output heads over a shared history.
#[derive(Clone, Debug)]
pub struct KernelPosterior {
    kernel: KernelSpec,
    beta: f64,
    sigma0_sq: f64,
    heads: usize,
    dim: Option<usize>,
    xs: Vec<Vec<f64>>,
    // ys[i * heads + h]
    ys: Vec<f64>,
    // packed lower-triangular rows of the factor of cI + K
    chol: Vec<f64>,
    // Sigma_o y per head, each of length t
    alpha: Vec<Vec<f64>>,
    since_refactor: usize,
}

fn row_start(i: usize) -> usize {
    i * (i + 1) / 2
}

impl KernelPosterior {
    pub fn new(kernel: KernelSpec, beta: f64, sigma0_sq: f64) -> Result<KernelPosterior> {
        KernelPosterior::with_heads(kernel, beta, sigma0_sq, 1)
    }

    pub fn with_heads(kernel: KernelSpec, beta: f64, sigma0_sq: f64, heads: usize) -> Result<KernelPosterior> {
        check_hyper(beta, sigma0_sq)?;
        if heads == 0 {
            return Err(Error::Config("at least one output head required".into()));
        }
        if let KernelSpec::Rbf { gamma } = kernel {
            KernelSpec::rbf(gamma)?;
        }
        Ok(KernelPosterior {
            kernel,
            beta,
            sigma0_sq,
            heads,
            dim: None,
            xs: Vec::new(),
            ys: Vec::new(),
            chol: Vec::new(),
            alpha: vec![Vec::new(); heads],
            since_refactor: 0,
        })
    }

    pub fn kernel(&self) -> KernelSpec {
        self.kernel
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn sigma0_sq(&self) -> f64 {
        self.sigma0_sq
    }

    pub fn heads(&self) -> usize {
        self.heads
    }

    /// Number of observations.
    pub fn len(&self) -> usize {
        self.xs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.xs.is_empty()
    }

    /// Ridge term `c = 1 / (2 sigma0^2 beta)`.
    pub fn ridge(&self) -> f64 {
        1.0 / (2.0 * self.sigma0_sq * self.beta)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        match self.dim {
            Some(d) if d != x.len() => Err(Error::Config(format!("feature dimension {} != {d}", x.len()))),
            _ => Ok(()),
        }
    }

    fn kappa(&self, x: &[f64]) -> Vec<f64> {
        self.xs.iter().map(|xi| self.kernel.eval(xi, x)).collect()
    }

    // Solves L v = b in place.
    fn forward(&self, b: &mut [f64]) {
        for i in 0..b.len() {
            let row = &self.chol[row_start(i)..row_start(i) + i + 1];
            let s = b[i] - dot(&row[..i], &b[..i]);
            b[i] = s / row[i];
        }
    }

    // Solves L^T v = b in place.
    fn backward(&self, b: &mut [f64]) {
        for j in (0..b.len()).rev() {
            let row = &self.chol[row_start(j)..row_start(j) + j + 1];
            b[j] /= row[j];
            let bj = b[j];
            for (bi, lji) in b[..j].iter_mut().zip(&row[..j]) {
                *bi -= lji * bj;
            }
        }
    }

    fn solve(&self, b: &mut [f64]) {
        self.forward(b);
        self.backward(b);
    }

    fn recompute_alpha(&mut self) {
        let t = self.len();
        for h in 0..self.heads {
            let mut a: Vec<f64> = (0..t).map(|i| self.ys[i * self.heads + h]).collect();
            self.solve(&mut a);
            self.alpha[h] = a;
        }
    }

    fn refactor(&mut self) -> Result<()> {
        let t = self.len();
        let c = self.ridge();
        let mut chol = vec![0.0; row_start(t)];
        for i in 0..t {
            for j in 0..=i {
                let mut s = self.kernel.eval(&self.xs[i], &self.xs[j]);
                if i == j {
                    s += c;
                }
                let (ri, rj) = (row_start(i), row_start(j));
                s -= dot(&chol[ri..ri + j], &chol[rj..rj + j]);
                if i == j {
                    if !(s > 0.0) {
                        return Err(Error::Numeric(format!("factor pivot {s} at row {i}")));
                    }
                    chol[ri + i] = s.sqrt();
                } else {
                    chol[ri + j] = s / chol[rj + j];
                }
            }
        }
        self.chol = chol;
        self.since_refactor = 0;
        self.recompute_alpha();
        Ok(())
    }

    /// Appends `(x, y)` for a single-head posterior.
    pub fn update(&mut self, x: &[f64], y: f64) -> Result<()> {
        self.update_heads(x, &[y])
    }

    /// Appends one observation with a target per head.
    pub fn update_heads(&mut self, x: &[f64], y: &[f64]) -> Result<()> {
        if y.len() != self.heads {
            return Err(Error::Config(format!("{} targets for {} heads", y.len(), self.heads)));
        }
        self.check_dim(x)?;
        if x.iter().chain(y).any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite feature or target".into()));
        }
        let mut l = self.kappa(x);
        self.forward(&mut l);
        let pivot = self.ridge() + self.kernel.eval(x, x) - dot(&l, &l);
        if !(pivot > 0.0) {
            return Err(Error::Numeric(format!("factor pivot {pivot} after {} updates", self.len())));
        }
        l.push(pivot.sqrt());
        self.chol.extend_from_slice(&l);
        self.dim = Some(x.len());
        self.xs.push(x.to_vec());
        self.ys.extend_from_slice(y);
        self.since_refactor += 1;
        if self.since_refactor >= REFACTOR_EVERY {
            self.refactor()?;
        } else {
            self.recompute_alpha();
        }
        Ok(())
    }

    /// Predictive means `kappa^T Sigma_o y` per head and the variance
    /// `sigma0^2 (k(x, x) - kappa^T Sigma_o kappa)`.
    pub fn predictive(&self, x: &[f64]) -> Result<Predictive> {
        self.check_dim(x)?;
        let kappa = self.kappa(x);
        let mu = self.alpha.iter().map(|a| dot(&kappa, a)).collect();
        let mut v = kappa;
        self.forward(&mut v);
        let kxx = self.kernel.eval(x, x);
        let mut sigma_sq = self.sigma0_sq * (kxx - dot(&v, &v));
        if sigma_sq <= VARIANCE_FLOOR {
            if kxx > VARIANCE_FLOOR && self.sigma0_sq * kxx > 1e3 * VARIANCE_FLOOR {
                log::warn!("predictive variance {sigma_sq:e} clamped to {VARIANCE_FLOOR:e}");
            }
            sigma_sq = VARIANCE_FLOOR;
        }
        Ok(Predictive { mu, sigma_sq })
    }

    /// Mean and variance for head 0.
    pub fn predictive_scalar(&self, x: &[f64]) -> Result<(f64, f64)> {
        let p = self.predictive(x)?;
        Ok((p.mu[0], p.sigma_sq))
    }

    /// Predictive means only, skipping the triangular solve.
    pub fn mean(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let kappa = self.kappa(x);
        Ok(self.alpha.iter().map(|a| dot(&kappa, a)).collect())
    }

    /// `Sigma_o = (cI + K)^{-1}` as a dense matrix.
    pub fn sigma_o(&self) -> DMatrix<f64> {
        let t = self.len();
        let mut linv = DMatrix::zeros(t, t);
        for j in 0..t {
            let mut e = vec![0.0; t];
            e[j] = 1.0;
            self.forward(&mut e);
            linv.set_column(j, &DVector::from_vec(e));
        }
        linv.transpose() * linv
    }

    /// Dense `cI + K` rebuilt from the stored factor.
    pub fn factor_product(&self) -> DMatrix<f64> {
        let t = self.len();
        let l = DMatrix::from_fn(t, t, |i, j| if j <= i { self.chol[row_start(i) + j] } else { 0.0 });
        &l * l.transpose()
    }

    pub fn gram(&self) -> DMatrix<f64> {
        let t = self.len();
        DMatrix::from_fn(t, t, |i, j| self.kernel.eval(&self.xs[i], &self.xs[j]))
    }

    /// One draw of the prediction at `x` for head 0.
    pub fn sample_prediction<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<f64> {
        let (mu, var) = self.predictive_scalar(x)?;
        Ok(draw_normal(mu, var, rng))
    }

    /// Writes a JSON header line followed by little-endian f64 arrays:
    /// features, targets, then the packed factor.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        let header = CheckpointHeader {
            format: CHECKPOINT_FORMAT.into(),
            kernel: self.kernel,
            beta: self.beta,
            sigma0_sq: self.sigma0_sq,
            heads: self.heads,
            t: self.len(),
            dim: self.dim.unwrap_or(0),
            since_refactor: self.since_refactor,
        };
        serde_json::to_writer(&mut out, &header)?;
        out.write_all(b"\n")?;
        for v in self.xs.iter().flatten().chain(&self.ys).chain(&self.chol) {
            out.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_checkpoint<R: Read>(input: R) -> Result<KernelPosterior> {
        let mut input = BufReader::new(input);
        let mut line = String::new();
        input.read_line(&mut line)?;
        let h: CheckpointHeader = serde_json::from_str(line.trim_end())?;
        if h.format != CHECKPOINT_FORMAT {
            return Err(Error::Format(format!("unknown checkpoint format {:?}", h.format)));
        }
        let mut post = KernelPosterior::with_heads(h.kernel, h.beta, h.sigma0_sq, h.heads)?;
        let mut read = |n: usize| -> Result<Vec<f64>> {
            let mut buf = vec![0u8; n * 8];
            input.read_exact(&mut buf).map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
            Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
        };
        let flat = read(h.t * h.dim)?;
        post.ys = read(h.t * h.heads)?;
        post.chol = read(row_start(h.t))?;
        post.xs = if h.dim == 0 { vec![Vec::new(); h.t] } else { flat.chunks(h.dim).map(<[f64]>::to_vec).collect() };
        post.dim = (h.t > 0).then_some(h.dim);
        post.since_refactor = h.since_refactor;
        post.recompute_alpha();
        Ok(post)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_checkpoint(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<KernelPosterior> {
        KernelPosterior::read_checkpoint(std::fs::File::open(path)?)
    }
}

const CHECKPOINT_FORMAT: &str = "sqbc-kernel-v1";

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    format: String,
    kernel: KernelSpec,
    beta: f64,
    sigma0_sq: f64,
    heads: usize,
    t: usize,
    dim: usize,
    since_refactor: usize,
}

fn draw_normal<R: Rng + ?Sized>(mu: f64, var: f64, rng: &mut R) -> f64 {
    if var <= VARIANCE_FLOOR {
        return mu;
    }
    Normal::new(mu, var.sqrt()).expect("finite parameters").sample(rng)
}

/// How two predictive draws at a point are compared.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PointRule {
    /// Accept with probability `(clip(z) - clip(z'))^2 / (4 B^2)`.
    Squared { bound: f64 },
    /// Accept when the two draws have different signs.
    Sign,
}

/// QBC over a pool of points for a single-head posterior.
pub fn qbc_select_point<R: Rng + ?Sized>(
    pool: &[Vec<f64>],
    posterior: &KernelPosterior,
    rule: PointRule,
    rng: &mut R,
    max_iters: usize,
) -> Result<Selection<usize>> {
    if pool.is_empty() {
        return Err(Error::Config("empty pool".into()));
    }
    if let PointRule::Squared { bound } = rule {
        if !(bound > 0.0) {
            return Err(Error::Config(format!("prediction bound must be positive, got {bound}")));
        }
    }
    for _ in 0..max_iters {
        let i = rng.random_range(0..pool.len());
        let (mu, var) = posterior.predictive_scalar(&pool[i])?;
        let (z, z2) = (draw_normal(mu, var, rng), draw_normal(mu, var, rng));
        let accept = match rule {
            PointRule::Squared { bound } => {
                let d = z.clamp(-bound, bound) - z2.clamp(-bound, bound);
                rng.random::<f64>() < d * d / (4.0 * bound * bound)
            }
            PointRule::Sign => (z >= 0.0) != (z2 >= 0.0),
        };
        if accept {
            return Ok(Selection::Chosen(i));
        }
    }
    Ok(Selection::NoInformativeQuery)
}

/// Same as [`qbc_select_point`] for an explicit Gaussian posterior.
pub fn qbc_select_point_explicit<R: Rng + ?Sized>(
    pool: &[Vec<f64>],
    posterior: &GaussianPosterior,
    rule: PointRule,
    rng: &mut R,
    max_iters: usize,
) -> Result<Selection<usize>> {
    if pool.is_empty() {
        return Err(Error::Config("empty pool".into()));
    }
    for _ in 0..max_iters {
        let i = rng.random_range(0..pool.len());
        let (mu, var) = posterior.predictive(&pool[i]);
        let (z, z2) = (draw_normal(mu, var, rng), draw_normal(mu, var, rng));
        let accept = match rule {
            PointRule::Squared { bound } => {
                let d = z.clamp(-bound, bound) - z2.clamp(-bound, bound);
                rng.random::<f64>() < d * d / (4.0 * bound * bound)
            }
            PointRule::Sign => (z >= 0.0) != (z2 >= 0.0),
        };
        if accept {
            return Ok(Selection::Chosen(i));
        }
    }
    Ok(Selection::NoInformativeQuery)
}

/// Multiclass classifier made of one {-1, +1} regression head per class.
#[derive(Clone, Debug)]
pub struct OneVsAll {
    classes: Vec<i64>,
    posterior: KernelPosterior,
}

impl OneVsAll {
    pub fn new(classes: Vec<i64>, kernel: KernelSpec, beta: f64, sigma0_sq: f64) -> Result<OneVsAll> {
        if classes.is_empty() {
            return Err(Error::Config("one-vs-all needs at least one class".into()));
        }
        let posterior = KernelPosterior::with_heads(kernel, beta, sigma0_sq, classes.len())?;
        Ok(OneVsAll { classes, posterior })
    }

    pub fn classes(&self) -> &[i64] {
        &self.classes
    }

    pub fn posterior(&self) -> &KernelPosterior {
        &self.posterior
    }

    pub fn len(&self) -> usize {
        self.posterior.len()
    }

    pub fn is_empty(&self) -> bool {
        self.posterior.is_empty()
    }

    pub fn update(&mut self, x: &[f64], label: i64) -> Result<()> {
        if !self.classes.contains(&label) {
            return Err(Error::Config(format!("label {label} is not one of the classes")));
        }
        let y: Vec<f64> = self.classes.iter().map(|&c| if c == label { 1.0 } else { -1.0 }).collect();
        self.posterior.update_heads(x, &y)
    }

    fn argmax(&self, scores: &[f64]) -> i64 {
        let mut best = 0;
        for (i, s) in scores.iter().enumerate() {
            let (c, b) = (self.classes[i], self.classes[best]);
            if *s > scores[best] || (*s == scores[best] && c < b) {
                best = i;
            }
        }
        self.classes[best]
    }

    /// Class with the largest predictive mean; ties go to the lowest class id.
    pub fn predict(&self, x: &[f64]) -> Result<i64> {
        Ok(self.argmax(&self.posterior.mean(x)?))
    }

    /// Class predicted by one posterior draw of every head.
    pub fn sample_class<R: Rng + ?Sized>(&self, x: &[f64], rng: &mut R) -> Result<i64> {
        let p = self.posterior.predictive(x)?;
        let z: Vec<f64> = p.mu.iter().map(|m| draw_normal(*m, p.sigma_sq, rng)).collect();
        Ok(self.argmax(&z))
    }

    /// QBC over pool points: accept when two posterior draws predict
    /// different classes.
    pub fn qbc_select<R: Rng + ?Sized>(&self, pool: &[Vec<f64>], rng: &mut R, max_iters: usize) -> Result<Selection<usize>> {
        if pool.is_empty() {
            return Err(Error::Config("empty pool".into()));
        }
        for _ in 0..max_iters {
            let i = rng.random_range(0..pool.len());
            let p = self.posterior.predictive(&pool[i])?;
            let a: Vec<f64> = p.mu.iter().map(|m| draw_normal(*m, p.sigma_sq, rng)).collect();
            let b: Vec<f64> = p.mu.iter().map(|m| draw_normal(*m, p.sigma_sq, rng)).collect();
            if self.argmax(&a) != self.argmax(&b) {
                return Ok(Selection::Chosen(i));
            }
        }
        Ok(Selection::NoInformativeQuery)
    }

    /// Fraction of misclassified points.
    pub fn error_rate(&self, xs: &[Vec<f64>], labels: &[i64]) -> Result<f64> {
        if xs.is_empty() {
            return Ok(0.0);
        }
        let mut wrong = 0usize;
        for (x, y) in xs.iter().zip(labels) {
            if self.predict(x)? != *y {
                wrong += 1;
            }
        }
        Ok(wrong as f64 / xs.len() as f64)
    }
}
