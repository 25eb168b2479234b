//! One-vs-all RBF kernel QBC against random sampling on an IDX digit set.

use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::{idx_paths, read_idx_pair};
use super::{ExperimentConfig, ExperimentOutput, ResultRow};
use crate::error::{Error, Result};
use crate::kernel_linear::{KernelSpec, OneVsAll};
use crate::query_engine::{Selection, DEFAULT_MAX_ITERS};

const NAME: &str = "kernel-mnist";

/// Environment variable naming the directory with the MNIST IDX files.
pub const MNIST_ENV: &str = "SQBC_MNIST_DIR";

#[derive(Clone, Debug, PartialEq)]
pub struct KernelSettings {
    pub data_dir: Option<PathBuf>,
    pub n_train: usize,
    pub n_test: usize,
    pub gamma: f64,
    pub beta: f64,
    pub sigma0_sq: f64,
    pub budget: usize,
    pub checkpoint_every: usize,
    pub max_iters: usize,
}

impl Default for KernelSettings {
    fn default() -> Self {
        KernelSettings {
            data_dir: None,
            n_train: 5000,
            n_test: 1000,
            gamma: 0.001,
            beta: 10.0,
            sigma0_sq: 1.0,
            budget: 1200,
            checkpoint_every: 100,
            max_iters: DEFAULT_MAX_ITERS,
        }
    }
}

impl KernelSettings {
    pub fn from_config(c: &ExperimentConfig) -> Result<KernelSettings> {
        c.check_keys(&["data_dir", "n_train", "n_test", "gamma", "beta", "sigma0_sq", "budget", "checkpoint_every", "max_iters"])?;
        let d = KernelSettings::default();
        let s = KernelSettings {
            data_dir: c.get_str("data_dir").map(PathBuf::from),
            n_train: c.get("n_train", d.n_train)?,
            n_test: c.get("n_test", d.n_test)?,
            gamma: c.get("gamma", d.gamma)?,
            beta: c.get("beta", d.beta)?,
            sigma0_sq: c.get("sigma0_sq", d.sigma0_sq)?,
            budget: c.get("budget", d.budget)?,
            checkpoint_every: c.get("checkpoint_every", d.checkpoint_every)?,
            max_iters: c.get("max_iters", d.max_iters)?,
        };
        if s.budget > s.n_train || s.checkpoint_every == 0 || s.n_test == 0 {
            return Err(Error::Config("need budget <= n_train, n_test >= 1 and checkpoint_every >= 1".into()));
        }
        Ok(s)
    }

    /// `data_dir` from the config, else the environment variable.
    pub fn resolve_dir(&self) -> Result<PathBuf> {
        self.data_dir
            .clone()
            .or_else(|| std::env::var_os(MNIST_ENV).map(PathBuf::from))
            .ok_or_else(|| Error::Config(format!("no MNIST directory: set data_dir or {MNIST_ENV}")))
    }
}

/// Train and test rows (pixels / 255) with integer labels.
#[derive(Clone, Debug)]
pub struct Split {
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<i64>,
    pub test_x: Vec<Vec<f64>>,
    pub test_y: Vec<i64>,
}

fn scaled(p: &[u8]) -> Vec<f64> {
    p.iter().map(|&v| v as f64 / 255.0).collect()
}

/// Subsamples `n_train` training and `n_test` test images. With only one
/// image file in `dir` the two sets are disjoint draws from it.
pub fn load_split(dir: &Path, n_train: usize, n_test: usize, seed: u64) -> Result<Split> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (ti, tl) = idx_paths(dir, "train").ok_or_else(|| Error::Config(format!("no IDX training files in {}", dir.display())))?;
    let (train_im, train_lb) = read_idx_pair(&ti, &tl)?;
    let test_files = idx_paths(dir, "t10k").filter(|(i, _)| *i != ti);
    let pick = |n: usize, of: usize, rng: &mut ChaCha8Rng| -> Result<Vec<usize>> {
        if n > of {
            return Err(Error::Config(format!("requested {n} images from a file with {of}")));
        }
        Ok(sample(rng, of, n).into_vec())
    };
    let mut split = Split { train_x: Vec::new(), train_y: Vec::new(), test_x: Vec::new(), test_y: Vec::new() };
    match test_files {
        Some((i, l)) => {
            let (test_im, test_lb) = read_idx_pair(&i, &l)?;
            for j in pick(n_train, train_lb.len(), &mut rng)? {
                split.train_x.push(scaled(&train_im.pixels[j]));
                split.train_y.push(train_lb[j] as i64);
            }
            for j in pick(n_test, test_lb.len(), &mut rng)? {
                split.test_x.push(scaled(&test_im.pixels[j]));
                split.test_y.push(test_lb[j] as i64);
            }
        }
        None => {
            let idx = pick(n_train + n_test, train_lb.len(), &mut rng)?;
            for (k, j) in idx.into_iter().enumerate() {
                let (xs, ys) = if k < n_train { (&mut split.train_x, &mut split.train_y) } else { (&mut split.test_x, &mut split.test_y) };
                xs.push(scaled(&train_im.pixels[j]));
                ys.push(train_lb[j] as i64);
            }
        }
    }
    Ok(split)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelArm {
    Active,
    Random,
}

impl KernelArm {
    pub fn name(self) -> &'static str {
        match self {
            KernelArm::Active => "active",
            KernelArm::Random => "random",
        }
    }
}

/// Test error at every checkpoint (0, c, 2c, ..., budget).
pub fn run_arm(settings: &KernelSettings, split: &Split, arm: KernelArm, seed: u64) -> Result<Vec<(usize, f64)>> {
    let classes: Vec<i64> = (0..10).collect();
    let mut model = OneVsAll::new(classes, KernelSpec::rbf(settings.gamma)?, settings.beta, settings.sigma0_sq)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xa11c_e5ed);
    let mut pool = split.train_x.clone();
    let mut labels = split.train_y.clone();
    let mut curve = vec![(0, model.error_rate(&split.test_x, &split.test_y)?)];
    let mut fallbacks = 0usize;
    for n in 1..=settings.budget {
        let pos = match arm {
            KernelArm::Random => rng.random_range(0..pool.len()),
            KernelArm::Active => match model.qbc_select(&pool, &mut rng, settings.max_iters)? {
                Selection::Chosen(i) => i,
                Selection::NoInformativeQuery => {
                    fallbacks += 1;
                    rng.random_range(0..pool.len())
                }
            },
        };
        let x = pool.swap_remove(pos);
        let y = labels.swap_remove(pos);
        model.update(&x, y)?;
        if n % settings.checkpoint_every == 0 || n == settings.budget {
            let err = model.error_rate(&split.test_x, &split.test_y)?;
            log::info!("{} seed {seed}: {n} labels, test error {err:.4}", arm.name());
            curve.push((n, err));
        }
    }
    if fallbacks > 0 {
        log::debug!("{fallbacks} random fallbacks after uninformative QBC rounds");
    }
    Ok(curve)
}

pub fn error_at(curve: &[(usize, f64)], labels: usize) -> Option<f64> {
    curve.iter().find(|(n, _)| *n == labels).map(|(_, e)| *e)
}

pub fn run(config: &ExperimentConfig, seeds: &[u64]) -> Result<ExperimentOutput> {
    let settings = KernelSettings::from_config(config)?;
    let dir = settings.resolve_dir()?;
    let mut out = ExperimentOutput::default();
    for &seed in seeds {
        let split = load_split(&dir, settings.n_train, settings.n_test, seed)?;
        for arm in [KernelArm::Active, KernelArm::Random] {
            for (n, e) in run_arm(&settings, &split, arm, seed)? {
                out.rows.push(ResultRow::new(NAME, seed, n, format!("{}/test_error", arm.name()), e));
            }
        }
    }
    let m = &mut out.metadata;
    m.insert("data_dir".into(), dir.display().to_string().into());
    m.insert("gamma".into(), settings.gamma.into());
    m.insert("beta".into(), settings.beta.into());
    m.insert("sigma0_sq".into(), settings.sigma0_sq.into());
    m.insert("n_train".into(), settings.n_train.into());
    m.insert("n_test".into(), settings.n_test.into());
    m.insert("pixel_scale".into(), "pixels / 255".into());
    Ok(out)
}
