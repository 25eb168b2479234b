//! Expected pair uncertainty under axis-parallel cuts of the unit cube.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{ExperimentConfig, ExperimentOutput, ResultRow};
use crate::error::{Error, Result};

/// Closed form of E[u({X, Y})] for X, Y uniform on `[0,1]^p`.
pub fn closed_form(p: usize) -> f64 {
    4.0 / 9.0 - 1.0 / (9.0 * p as f64)
}

/// Uncertainty of the pair {x, y}: a cut along a random axis at a uniform
/// threshold separates the pair with probability ‖x − y‖₁ / p.
pub fn pair_uncertainty(x: &[f64], y: &[f64]) -> f64 {
    let p = x.len() as f64;
    let sep = x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / p;
    2.0 * sep * (1.0 - sep)
}

pub fn run_hypercube_shrinkage<R: Rng + ?Sized>(p: usize, n_samples: usize, rng: &mut R) -> Result<f64> {
    if p == 0 || n_samples == 0 {
        return Err(Error::Config("dimension and sample count must be positive".into()));
    }
    let mut x = vec![0.0; p];
    let mut y = vec![0.0; p];
    let mut total = 0.0;
    for _ in 0..n_samples {
        x.iter_mut().for_each(|v| *v = rng.random());
        y.iter_mut().for_each(|v| *v = rng.random());
        total += pair_uncertainty(&x, &y);
    }
    Ok(total / n_samples as f64)
}

pub fn run(config: &ExperimentConfig, seeds: &[u64]) -> Result<ExperimentOutput> {
    config.check_keys(&["dims", "samples"])?;
    let dims: Vec<usize> = config.get_list("dims", &[1, 2, 5, 10, 20])?;
    let n: usize = config.get("samples", 100_000)?;
    let mut out = ExperimentOutput::default();
    for &seed in seeds {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for &p in &dims {
            let est = run_hypercube_shrinkage(p, n, &mut rng)?;
            out.rows.push(ResultRow::new("hypercube", seed, p, "estimate", est));
            out.rows.push(ResultRow::new("hypercube", seed, p, "closed_form", closed_form(p)));
        }
    }
    out.metadata.insert("samples".into(), n.into());
    out.metadata.insert("dims".into(), dims.into());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_values() {
        assert!((closed_form(1) - 1.0 / 3.0).abs() < 1e-15);
        assert!((closed_form(5) - 19.0 / 45.0).abs() < 1e-15);
    }

    #[test]
    fn one_dimension_by_quadrature() {
        // E[2D(1-D)] with D = |X-Y| has density 2(1-d): ∫ 2d(1-d)·2(1-d) dd
        let m = 20_000;
        let h = 1.0 / m as f64;
        let q: f64 = (0..m).map(|i| (i as f64 + 0.5) * h).map(|d| 4.0 * d * (1.0 - d).powi(2) * h).sum();
        assert!((q - closed_form(1)).abs() < 1e-8);
    }

    #[test]
    fn estimate_is_close() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for p in [1, 5] {
            let e = run_hypercube_shrinkage(p, 100_000, &mut rng).unwrap();
            assert!((e - closed_form(p)).abs() < 0.01, "p={p} {e}");
        }
    }

    #[test]
    fn rows_are_reproducible() {
        let c = ExperimentConfig::new().with("samples", 1000).with("dims", "1,3");
        let a = run(&c, &[4]).unwrap();
        let b = run(&c, &[4]).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.rows.len(), 4);
    }
}
