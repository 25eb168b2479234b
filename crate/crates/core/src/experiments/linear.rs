//! Noisy linear separators: QBC over an explicit Gaussian posterior against
//! random sampling, both fed the same label-flip stream.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{median, ExperimentConfig, ExperimentOutput, ResultRow};
use crate::error::{Error, Result};
use crate::kernel_linear::{qbc_select_point_explicit, GaussianPosterior, PointRule};
use crate::query_engine::{Selection, DEFAULT_MAX_ITERS};

const NAME: &str = "linear-noise";

#[derive(Clone, Debug, PartialEq)]
pub struct LinearSettings {
    pub dim: usize,
    pub pool: usize,
    pub budget: usize,
    pub noise: Vec<f64>,
    /// QBC arms; empty means a single arm at β = λ/2 with λ = 1 − 2p.
    pub betas: Vec<f64>,
    pub sigma0_sq: f64,
    pub margin: f64,
    pub max_iters: usize,
    pub record_every: usize,
}

impl Default for LinearSettings {
    fn default() -> Self {
        LinearSettings {
            dim: 10,
            pool: 2000,
            budget: 1000,
            noise: vec![0.0, 0.1, 0.25],
            betas: Vec::new(),
            sigma0_sq: 1.0,
            margin: 0.05,
            max_iters: DEFAULT_MAX_ITERS,
            record_every: 10,
        }
    }
}

impl LinearSettings {
    pub fn from_config(c: &ExperimentConfig) -> Result<LinearSettings> {
        c.check_keys(&["dim", "pool", "budget", "p", "betas", "sigma0_sq", "margin", "max_iters", "record_every"])?;
        let d = LinearSettings::default();
        let s = LinearSettings {
            dim: c.get("dim", d.dim)?,
            pool: c.get("pool", d.pool)?,
            budget: c.get("budget", d.budget)?,
            noise: c.get_list("p", &d.noise)?,
            betas: c.get_list("betas", &d.betas)?,
            sigma0_sq: c.get("sigma0_sq", d.sigma0_sq)?,
            margin: c.get("margin", d.margin)?,
            max_iters: c.get("max_iters", d.max_iters)?,
            record_every: c.get("record_every", d.record_every)?,
        };
        if s.dim == 0 || s.budget > s.pool || s.record_every == 0 {
            return Err(Error::Config("need dim >= 1, budget <= pool and record_every >= 1".into()));
        }
        if s.noise.iter().any(|p| !(0.0..0.5).contains(p)) {
            return Err(Error::Config("noise levels must lie in [0, 0.5)".into()));
        }
        Ok(s)
    }

    pub fn betas_for(&self, p: f64) -> Vec<f64> {
        if self.betas.is_empty() {
            vec![(1.0 - 2.0 * p) / 2.0]
        } else {
            self.betas.clone()
        }
    }
}

/// Test error of sign(<w, x>) for Gaussian x under label-flip noise p:
/// p + (1 − 2p)·θ/π with θ the angle between w and h*.
pub fn exact_error(w: &[f64], h: &[f64], p: f64) -> f64 {
    let nw = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nh = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    if nw == 0.0 || nh == 0.0 {
        return 0.5;
    }
    let cos = (w.iter().zip(h).map(|(a, b)| a * b).sum::<f64>() / (nw * nh)).clamp(-1.0, 1.0);
    p + (1.0 - 2.0 * p) * cos.acos() / std::f64::consts::PI
}

/// Shared ground truth and noise for every arm of one (seed, p) cell.
pub struct LinearInstance {
    pub h_star: Vec<f64>,
    pub pool: Vec<Vec<f64>>,
    /// Uniform draws; the k-th label requested by any arm is flipped when
    /// `flips[k] < p`.
    pub flips: Vec<f64>,
}

impl LinearInstance {
    pub fn new(settings: &LinearSettings, seed: u64) -> LinearInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut h: Vec<f64> = (0..settings.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        h.iter_mut().for_each(|v| *v /= norm);
        let pool = (0..settings.pool).map(|_| (0..settings.dim).map(|_| StandardNormal.sample(&mut rng)).collect()).collect();
        let mut noise_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0f11_75ee);
        let flips = (0..settings.budget).map(|_| noise_rng.random()).collect();
        LinearInstance { h_star: h, pool, flips }
    }

    pub fn label(&self, i: usize, k: usize, p: f64) -> f64 {
        let clean = if self.pool[i].iter().zip(&self.h_star).map(|(a, b)| a * b).sum::<f64>() >= 0.0 { 1.0 } else { -1.0 };
        if self.flips[k] < p {
            -clean
        } else {
            clean
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Arm {
    Random,
    Qbc(f64),
}

impl Arm {
    pub fn name(&self) -> String {
        match self {
            Arm::Random => "random".into(),
            Arm::Qbc(b) => format!("qbc_beta{b}"),
        }
    }
}

/// Error curve at 0..=budget labels for one arm.
pub fn run_arm(settings: &LinearSettings, inst: &LinearInstance, p: f64, arm: Arm, seed: u64) -> Result<Vec<f64>> {
    let beta = match arm {
        Arm::Random => settings.betas_for(p)[0],
        Arm::Qbc(b) => b,
    };
    let mut post = GaussianPosterior::prior(settings.dim, beta, settings.sigma0_sq)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
    let mut unlabeled: Vec<usize> = (0..inst.pool.len()).collect();
    // kept parallel to `unlabeled`
    let mut points: Vec<Vec<f64>> = inst.pool.clone();
    let mut errors = vec![exact_error(post.mean.as_slice(), &inst.h_star, p)];
    for k in 0..settings.budget {
        let pos = match arm {
            Arm::Random => rng.random_range(0..unlabeled.len()),
            Arm::Qbc(_) => {
                match qbc_select_point_explicit(&points, &post, PointRule::Sign, &mut rng, settings.max_iters)? {
                    Selection::Chosen(j) => j,
                    Selection::NoInformativeQuery => rng.random_range(0..unlabeled.len()),
                }
            }
        };
        let i = unlabeled.swap_remove(pos);
        points.swap_remove(pos);
        post.update(&inst.pool[i], inst.label(i, k, p))?;
        errors.push(exact_error(post.mean.as_slice(), &inst.h_star, p));
    }
    Ok(errors)
}

/// First label count with error at most `level`; `None` if never.
pub fn labels_to(errors: &[f64], level: f64) -> Option<usize> {
    errors.iter().position(|&e| e <= level)
}

pub struct LinearCell {
    pub p: f64,
    pub seed: u64,
    pub curves: Vec<(Arm, Vec<f64>)>,
}

pub fn run_cell(settings: &LinearSettings, p: f64, seed: u64) -> Result<LinearCell> {
    let inst = LinearInstance::new(settings, seed);
    let mut curves = vec![(Arm::Random, run_arm(settings, &inst, p, Arm::Random, seed)?)];
    for b in settings.betas_for(p) {
        curves.push((Arm::Qbc(b), run_arm(settings, &inst, p, Arm::Qbc(b), seed)?));
    }
    Ok(LinearCell { p, seed, curves })
}

/// Median labels-to-(p + margin) per arm over seeds; unreached counts as
/// budget + 1.
pub fn median_labels(settings: &LinearSettings, cells: &[LinearCell], arm: usize) -> f64 {
    let v: Vec<f64> = cells
        .iter()
        .map(|c| labels_to(&c.curves[arm].1, c.p + settings.margin).map_or(settings.budget as f64 + 1.0, |n| n as f64))
        .collect();
    median(&v)
}

pub fn run(config: &ExperimentConfig, seeds: &[u64]) -> Result<ExperimentOutput> {
    let settings = LinearSettings::from_config(config)?;
    let mut out = ExperimentOutput::default();
    for &p in &settings.noise {
        let mut cells = Vec::new();
        for &seed in seeds {
            let cell = run_cell(&settings, p, seed)?;
            for (arm, errs) in &cell.curves {
                let metric = format!("p{p}/{}/test_error", arm.name());
                for (n, e) in errs.iter().enumerate().step_by(settings.record_every) {
                    out.rows.push(ResultRow::new(NAME, seed, n, metric.clone(), *e));
                }
                let reach = labels_to(errs, p + settings.margin).map_or(settings.budget as f64 + 1.0, |n| n as f64);
                out.rows.push(ResultRow::new(NAME, seed, 0, format!("p{p}/{}/labels_to_target", arm.name()), reach));
            }
            out.rows.push(ResultRow::new(NAME, seed, 0, format!("p{p}/noise_floor"), p));
            cells.push(cell);
        }
        let arms: Vec<String> = cells[0].curves.iter().map(|(a, _)| a.name()).collect();
        for (j, name) in arms.iter().enumerate() {
            out.metadata.insert(format!("p{p}/{name}/median_labels_to_target"), median_labels(&settings, &cells, j).into());
        }
    }
    out.metadata.insert("dim".into(), settings.dim.into());
    out.metadata.insert("pool".into(), settings.pool.into());
    out.metadata.insert("budget".into(), settings.budget.into());
    out.metadata.insert("sigma0_sq".into(), settings.sigma0_sq.into());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_error_examples() {
        assert_eq!(exact_error(&[1.0, 0.0], &[2.0, 0.0], 0.1), 0.1);
        assert!((exact_error(&[0.0, 1.0], &[1.0, 0.0], 0.0) - 0.5).abs() < 1e-15);
        assert!((exact_error(&[-1.0, 0.0], &[1.0, 0.0], 0.2) - 0.8).abs() < 1e-15);
        assert_eq!(exact_error(&[0.0, 0.0], &[1.0, 0.0], 0.0), 0.5);
    }

    #[test]
    fn exact_error_matches_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let w = [0.3, 1.0, -0.2];
        let h = [1.0, 0.4, 0.0];
        let p = 0.1;
        let n = 200_000;
        let mut wrong = 0;
        for _ in 0..n {
            let x: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            let sw = x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>() >= 0.0;
            let mut sh = x.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>() >= 0.0;
            if rng.random::<f64>() < p {
                sh = !sh;
            }
            wrong += (sw != sh) as usize;
        }
        assert!((wrong as f64 / n as f64 - exact_error(&w, &h, p)).abs() < 0.005);
    }

    #[test]
    fn arms_share_noise_stream() {
        let s = LinearSettings { pool: 50, budget: 20, ..LinearSettings::default() };
        let a = LinearInstance::new(&s, 4);
        let b = LinearInstance::new(&s, 4);
        assert_eq!(a.flips, b.flips);
        assert_eq!(a.pool, b.pool);
        let flipped = (0..20).filter(|&k| a.label(0, k, 0.25) != a.label(0, k, 0.0)).count();
        assert_eq!(flipped, a.flips.iter().filter(|&&u| u < 0.25).count());
    }

    #[test]
    fn noiseless_qbc_learns_quickly() {
        let s = LinearSettings { budget: 100, pool: 1000, ..LinearSettings::default() };
        let mut hits = 0;
        for seed in 0..5 {
            let cell = run_cell(&s, 0.0, seed).unwrap();
            if labels_to(&cell.curves[1].1, 0.05).is_some() {
                hits += 1;
            }
        }
        assert!(hits >= 4, "{hits}/5");
    }

    #[test]
    fn budget_zero_is_chance() {
        let s = LinearSettings { budget: 0, pool: 10, ..LinearSettings::default() };
        let cell = run_cell(&s, 0.1, 1).unwrap();
        assert_eq!(cell.curves[0].1, vec![0.5]);
    }
}
