//! Interactive clustering with three arms sharing data, truth and chain
//! initialisation: SQBC queries, random-pair constraints, and no feedback.

use std::path::PathBuf;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::{blobs, bundled_data_dir, idx_paths, load_mnist_binarized, load_uci, Dataset, UciDataset};
use super::{ExperimentConfig, ExperimentOutput, ResultRow};
use crate::cluster_models::{clustering_distance, log_joint, ClusterModel, MixtureOfBernoullis, MixtureOfGaussians, MobHyper, MogHyper};
use crate::error::{Error, Result};
use crate::interactive::{ClusteringConfig, ClusteringSession};
use crate::oracle::{CorrectionPolicy, FeedbackPolicy, NoiseModel, SimulatedExpert};
use crate::structures::{Atom, FlatClustering};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ClusterDataset {
    Blobs,
    Iris,
    Wine,
    Mnist,
}

impl ClusterDataset {
    pub fn parse(s: &str) -> Result<ClusterDataset> {
        match s {
            "blobs" => Ok(ClusterDataset::Blobs),
            "iris" => Ok(ClusterDataset::Iris),
            "wine" => Ok(ClusterDataset::Wine),
            "mnist" => Ok(ClusterDataset::Mnist),
            other => Err(Error::Config(format!("unknown clustering dataset {other}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClusterDataset::Blobs => "blobs",
            ClusterDataset::Iris => "iris",
            ClusterDataset::Wine => "wine",
            ClusterDataset::Mnist => "mnist",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusteringSettings {
    pub dataset: ClusterDataset,
    pub data_path: Option<PathBuf>,
    pub n: usize,
    pub radius: f64,
    pub k: usize,
    pub alpha: f64,
    pub sigma: f64,
    pub sigma0: f64,
    pub beta_a: f64,
    pub gamma_a: f64,
    pub per_class: usize,
    pub threshold: u8,
    pub sweeps: usize,
    pub every: usize,
    pub session: ClusteringConfig,
    pub target_distance: f64,
    pub final_window: usize,
}

impl ClusteringSettings {
    /// Defaults per dataset; mixture hyperparameters for iris and wine follow
    /// the published settings.
    pub fn defaults(dataset: ClusterDataset) -> ClusteringSettings {
        let (sigma, sigma0) = match dataset {
            ClusterDataset::Blobs => (1.0, 8.0),
            ClusterDataset::Iris => (1.0, 2.0),
            ClusterDataset::Wine => (2.0, 4.0),
            ClusterDataset::Mnist => (1.0, 1.0),
        };
        ClusteringSettings {
            dataset,
            data_path: None,
            n: 60,
            radius: 8.0,
            k: 3,
            alpha: 1.0,
            sigma,
            sigma0,
            beta_a: 1.0,
            gamma_a: 1.0,
            per_class: 50,
            threshold: 128,
            sweeps: 1000,
            every: 50,
            session: ClusteringConfig::default(),
            target_distance: 0.05,
            final_window: 50,
        }
    }

    pub fn from_config(dataset: ClusterDataset, c: &ExperimentConfig) -> Result<ClusteringSettings> {
        c.check_keys(&[
            "data_path", "n", "radius", "k", "alpha", "sigma", "sigma0", "beta_a", "gamma_a", "per_class", "threshold", "sweeps",
            "every", "s", "candidates", "n_pairs", "committee", "target_distance", "final_window",
        ])?;
        let d = ClusteringSettings::defaults(dataset);
        let session = ClusteringConfig {
            query_size: c.get("s", d.session.query_size)?,
            candidates: c.get("candidates", d.session.candidates)?,
            n_pairs: c.get("n_pairs", d.session.n_pairs)?,
            sweeps_per_round: c.get("every", d.every)?,
            committee_size: c.get("committee", d.session.committee_size)?,
            ..d.session
        };
        let s = ClusteringSettings {
            dataset,
            data_path: c.get_str("data_path").map(PathBuf::from),
            n: c.get("n", d.n)?,
            radius: c.get("radius", d.radius)?,
            k: c.get("k", d.k)?,
            alpha: c.get("alpha", d.alpha)?,
            sigma: c.get("sigma", d.sigma)?,
            sigma0: c.get("sigma0", d.sigma0)?,
            beta_a: c.get("beta_a", d.beta_a)?,
            gamma_a: c.get("gamma_a", d.gamma_a)?,
            per_class: c.get("per_class", d.per_class)?,
            threshold: c.get("threshold", d.threshold)?,
            sweeps: c.get("sweeps", d.sweeps)?,
            every: session.sweeps_per_round,
            session,
            target_distance: c.get("target_distance", d.target_distance)?,
            final_window: c.get("final_window", d.final_window)?,
        };
        if s.every == 0 || s.sweeps < s.every || s.final_window == 0 {
            return Err(Error::Config("need every >= 1, sweeps >= every and final_window >= 1".into()));
        }
        Ok(s)
    }
}

/// Per-sweep curves of one arm.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ArmCurve {
    pub distance: Vec<f64>,
    pub log_joint: Vec<f64>,
    /// Constraints in force during each sweep.
    pub constraints: Vec<usize>,
    pub oracle_calls: usize,
}

impl ArmCurve {
    /// Constraints in force at the first sweep whose distance is at most
    /// `level`.
    pub fn constraints_to_reach(&self, level: f64) -> Option<usize> {
        self.distance.iter().position(|&d| d <= level).map(|i| self.constraints[i])
    }

    pub fn final_distance(&self, window: usize) -> f64 {
        let w = window.min(self.distance.len()).max(1);
        self.distance[self.distance.len() - w..].iter().sum::<f64>() / w as f64
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClusteringRun {
    pub seed: u64,
    pub sqbc: ArmCurve,
    pub random: ArmCurve,
    pub vanilla: ArmCurve,
    /// True when every SQBC constraint agrees with the ground truth.
    pub sqbc_consistent: bool,
}

impl ClusteringRun {
    pub fn arms(&self) -> [(&'static str, &ArmCurve); 3] {
        [("sqbc", &self.sqbc), ("random", &self.random), ("vanilla", &self.vanilla)]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Feedback {
    Sqbc,
    Random,
    None,
}

fn run_arm<M: ClusterModel + Clone>(
    model: &M,
    truth: &FlatClustering,
    settings: &ClusteringSettings,
    seed: u64,
    feedback: Feedback,
) -> Result<(ArmCurve, bool)> {
    let config = ClusteringConfig { seed, sweeps_per_round: settings.every, ..settings.session };
    let mut session = ClusteringSession::new(model.clone(), config)?;
    let policy = FeedbackPolicy::Correction(CorrectionPolicy::default());
    let mut expert = SimulatedExpert::new(truth.clone(), policy, NoiseModel::Noiseless, seed ^ 0x0e4c_0de5);
    let mut pair_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9a12_5eed);
    let mut curve = ArmCurve::default();
    let z_star = truth.assignment();
    let n = z_star.len();
    let rounds = settings.sweeps / settings.every;
    for _ in 0..rounds {
        let mut err = None;
        session.advance_with(|_, m, z, cons| {
            match clustering_distance(z, z_star) {
                Ok(d) => curve.distance.push(d),
                Err(e) => err = Some(e),
            }
            curve.log_joint.push(log_joint(m, z, cons));
            curve.constraints.push(cons.len());
        });
        if let Some(e) = err {
            return Err(e);
        }
        match feedback {
            Feedback::Sqbc => {
                if session.next_query()?.is_some() {
                    let p = session.pending().expect("just selected");
                    let (q, snap, committee) = (p.query.clone(), p.snapshot.clone(), p.committee.clone());
                    let r = crate::query_engine::Expert::respond(&mut expert, &q, &snap, &committee)?
                        .ok_or_else(|| Error::Config("simulated expert gave no answer".into()))?;
                    session.submit(r)?;
                    curve.oracle_calls += 1;
                }
            }
            Feedback::Random => {
                let i = pair_rng.random_range(0..n);
                let mut j = pair_rng.random_range(0..n - 1);
                if j >= i {
                    j += 1;
                }
                session.add_constraint(Atom::pair(i, j)?, z_star[i] == z_star[j])?;
                curve.oracle_calls += 1;
            }
            Feedback::None => {}
        }
    }
    let consistent = session.constraints().satisfied_by(z_star);
    Ok((curve, consistent))
}

pub fn run_three_arms<M: ClusterModel + Clone>(
    model: &M,
    truth: &FlatClustering,
    settings: &ClusteringSettings,
    seed: u64,
) -> Result<ClusteringRun> {
    let (sqbc, sqbc_consistent) = run_arm(model, truth, settings, seed, Feedback::Sqbc)?;
    let (random, _) = run_arm(model, truth, settings, seed, Feedback::Random)?;
    let (vanilla, _) = run_arm(model, truth, settings, seed, Feedback::None)?;
    Ok(ClusteringRun { seed, sqbc, random, vanilla, sqbc_consistent })
}

fn uci(settings: &ClusteringSettings, which: UciDataset, file: &str) -> Result<Dataset> {
    let path = settings.data_path.clone().unwrap_or_else(|| bundled_data_dir().join(file));
    load_uci(&path, which)
}

fn gaussian(settings: &ClusteringSettings, data: Dataset) -> Result<(MixtureOfGaussians, FlatClustering)> {
    let hyper = MogHyper::new(settings.k, settings.alpha, settings.sigma0, settings.sigma);
    let k_true = data.n_classes().max(1);
    let truth = FlatClustering::new(data.labels, k_true)?;
    Ok((MixtureOfGaussians::new(Arc::new(data.features), &hyper)?, truth))
}

/// Runs the three arms for one seed on the configured dataset.
pub fn run_seed(settings: &ClusteringSettings, seed: u64) -> Result<ClusteringRun> {
    match settings.dataset {
        ClusterDataset::Blobs => {
            let data = blobs(settings.n, settings.k, 2, settings.radius, &mut ChaCha8Rng::seed_from_u64(seed))?;
            let (m, t) = gaussian(settings, data)?;
            run_three_arms(&m, &t, settings, seed)
        }
        ClusterDataset::Iris => {
            let (m, t) = gaussian(settings, uci(settings, UciDataset::Iris, "iris.data")?)?;
            run_three_arms(&m, &t, settings, seed)
        }
        ClusterDataset::Wine => {
            let (m, t) = gaussian(settings, uci(settings, UciDataset::Wine, "wine.data")?)?;
            run_three_arms(&m, &t, settings, seed)
        }
        ClusterDataset::Mnist => {
            let dir = settings.data_path.clone().unwrap_or_else(|| bundled_data_dir().join("digits"));
            let (im, lb) = idx_paths(&dir, "train").ok_or_else(|| Error::Config(format!("no IDX files in {}", dir.display())))?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (bits, labels) = load_mnist_binarized(&im, &lb, &[0, 1, 2], settings.per_class, settings.threshold, &mut rng)?;
            let truth = FlatClustering::new(labels, 3)?;
            let hyper = MobHyper { k: settings.k, alpha: settings.alpha, beta_a: settings.beta_a, gamma_a: settings.gamma_a };
            let m = MixtureOfBernoullis::new(Arc::new(bits), hyper)?;
            run_three_arms(&m, &truth, settings, seed)
        }
    }
}

pub fn run(dataset: &str, config: &ExperimentConfig, seeds: &[u64]) -> Result<ExperimentOutput> {
    let ds = ClusterDataset::parse(dataset)?;
    let settings = ClusteringSettings::from_config(ds, config)?;
    let name = format!("clustering-{}", ds.name());
    let mut out = ExperimentOutput::default();
    for &seed in seeds {
        let r = run_seed(&settings, seed)?;
        for (arm, c) in r.arms() {
            for (i, d) in c.distance.iter().enumerate() {
                out.rows.push(ResultRow::new(&name, seed, i + 1, format!("{arm}/clustering_distance"), *d));
                out.rows.push(ResultRow::new(&name, seed, i + 1, format!("{arm}/log_joint"), c.log_joint[i]));
            }
            for (i, n) in c.constraints.iter().enumerate().step_by(settings.every) {
                out.rows.push(ResultRow::new(&name, seed, i + 1, format!("{arm}/constraints"), *n as f64));
            }
            out.rows.push(ResultRow::new(&name, seed, 0, format!("{arm}/oracle_calls"), c.oracle_calls as f64));
            out.rows.push(ResultRow::new(&name, seed, 0, format!("{arm}/final_distance"), c.final_distance(settings.final_window)));
        }
    }
    let m = &mut out.metadata;
    m.insert("dataset".into(), ds.name().into());
    m.insert("k".into(), settings.k.into());
    m.insert("alpha".into(), settings.alpha.into());
    if ds == ClusterDataset::Mnist {
        m.insert("beta_a".into(), settings.beta_a.into());
        m.insert("gamma_a".into(), settings.gamma_a.into());
        m.insert("binarization_threshold".into(), settings.threshold.into());
        m.insert("per_class".into(), settings.per_class.into());
    } else {
        m.insert("sigma".into(), settings.sigma.into());
        m.insert("sigma0".into(), settings.sigma0.into());
    }
    m.insert("gibbs_sweeps".into(), settings.sweeps.into());
    m.insert("sweeps_between_queries".into(), settings.every.into());
    m.insert("committee_size".into(), settings.session.committee_size.into());
    m.insert("query_size".into(), settings.session.query_size.into());
    m.insert("candidates".into(), settings.session.candidates.into());
    m.insert("committee_pairs".into(), settings.session.n_pairs.into());
    m.insert("constraint_weight".into(), "inf (hard)".into());
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick(ds: ClusterDataset) -> ClusteringSettings {
        ClusteringSettings { sweeps: 200, every: 20, ..ClusteringSettings::defaults(ds) }
    }

    #[test]
    fn vanilla_never_calls_the_oracle_and_sqbc_stays_consistent() {
        let r = run_seed(&quick(ClusterDataset::Blobs), 2).unwrap();
        assert_eq!(r.vanilla.oracle_calls, 0);
        assert_eq!(r.vanilla.constraints.iter().max(), Some(&0));
        assert!(r.sqbc.oracle_calls > 0);
        assert!(r.sqbc_consistent);
        assert_eq!(r.sqbc.distance.len(), 200);
    }

    #[test]
    fn arms_share_the_chain_until_feedback() {
        let r = run_seed(&quick(ClusterDataset::Blobs), 5).unwrap();
        assert_eq!(r.sqbc.distance[..20], r.vanilla.distance[..20]);
        assert_eq!(r.random.distance[..20], r.vanilla.distance[..20]);
    }

    #[test]
    fn runs_are_reproducible() {
        let s = quick(ClusterDataset::Blobs);
        assert_eq!(run_seed(&s, 8).unwrap(), run_seed(&s, 8).unwrap());
    }

    #[test]
    fn mnist_bits_run_end_to_end() {
        let s = ClusteringSettings { sweeps: 40, every: 20, per_class: 20, ..ClusteringSettings::defaults(ClusterDataset::Mnist) };
        let r = run_seed(&s, 1).unwrap();
        assert_eq!(r.sqbc.distance.len(), 40);
    }

    #[test]
    fn unknown_dataset() {
        assert!(ClusterDataset::parse("mushrooms").is_err());
    }
}
