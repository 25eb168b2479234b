//! Simulated experts.
//!
//! Atomic answers come from a noise model around a ground-truth structure;
//! feedback policies decide which atom of a snapshot the expert responds to.

use std::collections::HashMap;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::posterior::{FeedbackEvent, FinitePosterior, Snapshot};
use crate::query_engine::{Expert, Response};
use crate::structures::{Answer, Atom, Query, Structure};

/// Answer distribution for one atom.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MassartEntry {
    pub atom: Atom,
    pub answers: Vec<(Answer, f64)>,
}

/// Per-atom answer distributions whose modal answer beats every other
/// answer by at least `lambda`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MassartFile", into = "MassartFile")]
pub struct MassartTable {
    lambda: f64,
    entries: HashMap<Atom, (Vec<(Answer, f64)>, WeightedIndex<f64>)>,
}

#[derive(Serialize, Deserialize)]
struct MassartFile {
    lambda: f64,
    atoms: Vec<MassartEntry>,
}

impl TryFrom<MassartFile> for MassartTable {
    type Error = Error;

    fn try_from(f: MassartFile) -> Result<Self> {
        MassartTable::new(f.lambda, f.atoms)
    }
}

impl From<MassartTable> for MassartFile {
    fn from(t: MassartTable) -> Self {
        let mut atoms: Vec<MassartEntry> =
            t.entries.into_iter().map(|(atom, (answers, _))| MassartEntry { atom, answers }).collect();
        atoms.sort_by_key(|e| e.atom);
        MassartFile { lambda: t.lambda, atoms }
    }
}

impl MassartTable {
    pub fn new(lambda: f64, entries: Vec<MassartEntry>) -> Result<MassartTable> {
        if !(lambda > 0.0 && lambda <= 1.0) {
            return Err(Error::Config(format!("lambda must lie in (0, 1], got {lambda}")));
        }
        let mut table = HashMap::with_capacity(entries.len());
        for MassartEntry { atom, answers } in entries {
            if answers.is_empty() {
                return Err(Error::Config(format!("atom {atom} has no answers")));
            }
            let total: f64 = answers.iter().map(|(_, p)| p).sum();
            if (total - 1.0).abs() > 1e-9 || answers.iter().any(|(_, p)| !(*p >= 0.0)) {
                return Err(Error::Config(format!("answer probabilities for {atom} sum to {total}")));
            }
            for (i, (a, _)) in answers.iter().enumerate() {
                if answers[..i].iter().any(|(b, _)| b == a) {
                    return Err(Error::Config(format!("duplicate answer {a:?} for {atom}")));
                }
            }
            let (top, p_top) = modal(&answers);
            for (y, p) in &answers {
                // tolerance absorbs decimal round-off in hand-written tables
                if *y != top && p_top - p < lambda - 1e-12 {
                    return Err(Error::Config(format!(
                        "atom {atom}: margin {:.6} between {top:?} and {y:?} is below lambda = {lambda}",
                        p_top - p
                    )));
                }
            }
            let index = WeightedIndex::new(answers.iter().map(|(_, p)| *p)).map_err(|e| Error::Config(e.to_string()))?;
            if table.insert(atom, (answers, index)).is_some() {
                return Err(Error::Config(format!("atom {atom} listed twice")));
            }
        }
        Ok(MassartTable { lambda, entries: table })
    }

    /// Correct answer with probability `(1 + (m - 1) lambda) / m`, each of the
    /// other `m - 1` answers with probability `(1 - lambda) / m`.
    pub fn symmetric<S: Structure>(g_star: &S, atoms: &[Atom], alphabet: &[Answer], lambda: f64) -> Result<MassartTable> {
        let m = alphabet.len() as f64;
        if alphabet.len() < 2 {
            return Err(Error::Config("answer alphabet needs at least two values".into()));
        }
        let p_right = (1.0 + (m - 1.0) * lambda) / m;
        let p_wrong = (1.0 - lambda) / m;
        let mut entries = Vec::with_capacity(atoms.len());
        for atom in atoms {
            let truth = g_star.eval(atom)?;
            if !alphabet.contains(&truth) {
                return Err(Error::Config(format!("true answer {truth:?} for {atom} is not in the alphabet")));
            }
            let answers = alphabet.iter().map(|y| (*y, if *y == truth { p_right } else { p_wrong })).collect();
            entries.push(MassartEntry { atom: *atom, answers });
        }
        MassartTable::new(lambda, entries)
    }

    pub fn from_json(json: &str) -> Result<MassartTable> {
        Ok(serde_json::from_str(json)?)
    }

    pub fn load(path: &Path) -> Result<MassartTable> {
        MassartTable::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn distribution(&self, atom: &Atom) -> Option<&[(Answer, f64)]> {
        self.entries.get(atom).map(|(a, _)| a.as_slice())
    }

    fn draw<R: Rng + ?Sized>(&self, atom: &Atom, rng: &mut R) -> Result<Answer> {
        let (answers, index) =
            self.entries.get(atom).ok_or_else(|| Error::Config(format!("no noise entry for atom {atom}")))?;
        Ok(answers[index.sample(rng)].0)
    }
}

fn modal(answers: &[(Answer, f64)]) -> (Answer, f64) {
    let mut best = answers[0];
    for &(y, p) in &answers[1..] {
        if p > best.1 {
            best = (y, p);
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseModel {
    Noiseless,
    Massart(MassartTable),
    /// Flip the true answer with probability `p`.
    LabelFlip(f64),
}

impl NoiseModel {
    pub fn label_flip(p: f64) -> Result<NoiseModel> {
        if !(0.0..0.5).contains(&p) {
            return Err(Error::Config(format!("flip probability must lie in [0, 0.5), got {p}")));
        }
        Ok(NoiseModel::LabelFlip(p))
    }

    /// Margin of the correct answer over any other.
    pub fn lambda(&self) -> f64 {
        match self {
            NoiseModel::Noiseless => 1.0,
            NoiseModel::Massart(t) => t.lambda(),
            NoiseModel::LabelFlip(p) => 1.0 - 2.0 * p,
        }
    }
}

fn flip(y: Answer) -> Result<Answer> {
    match y {
        Answer::Class(c) => Ok(Answer::Class(-c)),
        Answer::Same(b) => Ok(Answer::Same(!b)),
        Answer::Real(z) => Ok(Answer::Real(-z)),
        Answer::Topology(_) => Err(Error::Config("label flips are undefined for triplet topologies".into())),
    }
}

/// One noisy answer to `atom` around the truth `g_star`.
pub fn answer_atom<S: Structure, R: Rng + ?Sized>(atom: &Atom, g_star: &S, noise: &NoiseModel, rng: &mut R) -> Result<Answer> {
    let truth = g_star.eval(atom)?;
    match noise {
        NoiseModel::Noiseless => Ok(truth),
        NoiseModel::Massart(table) => {
            let favourite = modal(table.distribution(atom).ok_or_else(|| {
                Error::Config(format!("no noise entry for atom {atom}"))
            })?)
            .0;
            if favourite != truth {
                return Err(Error::Config(format!("noise table favours {favourite:?} on {atom}, truth is {truth:?}")));
            }
            table.draw(atom, rng)
        }
        NoiseModel::LabelFlip(p) => {
            if rng.random::<f64>() < *p {
                flip(truth)
            } else {
                Ok(truth)
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AtomChoice {
    UniformIncorrect,
    /// Among incorrect atoms, the one with the largest posterior shrinkage.
    MaxShrinkage,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionPolicy {
    /// Probability of responding to an incorrect atom when one exists.
    pub p_o: f64,
    pub atom_choice: AtomChoice,
}

impl CorrectionPolicy {
    pub fn new(p_o: f64, atom_choice: AtomChoice) -> Result<CorrectionPolicy> {
        if !(p_o > 0.0 && p_o <= 1.0) {
            return Err(Error::Config(format!("p_o must lie in (0, 1], got {p_o}")));
        }
        Ok(CorrectionPolicy { p_o, atom_choice })
    }
}

impl Default for CorrectionPolicy {
    fn default() -> Self {
        CorrectionPolicy { p_o: 1.0, atom_choice: AtomChoice::UniformIncorrect }
    }
}

/// Picks the atom to respond to. `shrinkage` (one value per snapshot atom) is
/// required for [`AtomChoice::MaxShrinkage`].
pub fn choose_correction<S: Structure, R: Rng + ?Sized>(
    snapshot: &Snapshot,
    g_star: &S,
    policy: &CorrectionPolicy,
    shrinkage: Option<&[f64]>,
    rng: &mut R,
) -> Result<Atom> {
    let answers = &snapshot.answers;
    if answers.is_empty() {
        return Err(Error::InvalidQuery("snapshot has no atoms".into()));
    }
    let mut wrong = Vec::new();
    for (i, (a, y)) in answers.iter().enumerate() {
        if g_star.eval(a)? != *y {
            wrong.push(i);
        }
    }
    if wrong.is_empty() || rng.random::<f64>() >= policy.p_o {
        return Ok(answers[rng.random_range(0..answers.len())].0);
    }
    let i = match policy.atom_choice {
        AtomChoice::UniformIncorrect => wrong[rng.random_range(0..wrong.len())],
        AtomChoice::MaxShrinkage => {
            let s = shrinkage
                .filter(|s| s.len() == answers.len())
                .ok_or_else(|| Error::Config("max_shrinkage needs one shrinkage value per atom".into()))?;
            let mut best = wrong[0];
            for &i in &wrong[1..] {
                if s[i] > s[best] {
                    best = i;
                }
            }
            best
        }
    };
    Ok(answers[i].0)
}

/// Simulated response to a snapshot: choose an atom per the policy and answer
/// it through the noise model.
#[allow(clippy::too_many_arguments)]
pub fn give_feedback<S: Structure, R: Rng + ?Sized>(
    step: usize,
    query: &Query,
    snapshot: &Snapshot,
    g_star: &S,
    policy: &CorrectionPolicy,
    noise: &NoiseModel,
    shrinkage: Option<&[f64]>,
    rng: &mut R,
) -> Result<FeedbackEvent> {
    let atom = choose_correction(snapshot, g_star, policy, shrinkage, rng)?;
    let answer = answer_atom(&atom, g_star, noise, rng)?;
    FeedbackEvent::new(step, query.clone(), snapshot.answers.clone(), atom, answer)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShrinkageRule {
    /// Uniform over atoms whose shrinkage reaches the query mean.
    Qualifying,
    /// The atom with the largest shrinkage, lowest index on ties.
    Argmax,
}

/// Picks an atom whose shrinkage is at least the query's mean shrinkage.
pub fn choose_by_shrinkage<R: Rng + ?Sized>(shrinkage: &[f64], rule: ShrinkageRule, rng: &mut R) -> Result<usize> {
    if shrinkage.is_empty() {
        return Err(Error::InvalidQuery("no atoms to choose from".into()));
    }
    match rule {
        ShrinkageRule::Argmax => {
            let mut best = 0;
            for (i, s) in shrinkage.iter().enumerate() {
                if *s > shrinkage[best] {
                    best = i;
                }
            }
            Ok(best)
        }
        ShrinkageRule::Qualifying => {
            let mean = shrinkage.iter().sum::<f64>() / shrinkage.len() as f64;
            let ok: Vec<usize> = (0..shrinkage.len()).filter(|&i| shrinkage[i] >= mean - 1e-12).collect();
            Ok(ok[rng.random_range(0..ok.len())])
        }
    }
}

#[allow(clippy::too_many_arguments)]
pub fn shrinkage_feedback<S: Structure, R: Rng + ?Sized>(
    step: usize,
    query: &Query,
    snapshot: &Snapshot,
    g_star: &S,
    shrinkage: &[f64],
    rule: ShrinkageRule,
    noise: &NoiseModel,
    rng: &mut R,
) -> Result<FeedbackEvent> {
    if shrinkage.len() != snapshot.answers.len() {
        return Err(Error::Config("one shrinkage value per snapshot atom required".into()));
    }
    let atom = snapshot.answers[choose_by_shrinkage(shrinkage, rule, rng)?].0;
    let answer = answer_atom(&atom, g_star, noise, rng)?;
    FeedbackEvent::new(step, query.clone(), snapshot.answers.clone(), atom, answer)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackPolicy {
    Correction(CorrectionPolicy),
    Shrinkage(ShrinkageRule),
}

/// An [`Expert`] backed by a ground truth and a noise model. Holds its own
/// random stream so that the engine's draws do not depend on it.
pub struct SimulatedExpert<S> {
    pub g_star: S,
    pub policy: FeedbackPolicy,
    pub noise: NoiseModel,
    rng: ChaCha8Rng,
}

impl<S: Structure> SimulatedExpert<S> {
    pub fn new(g_star: S, policy: FeedbackPolicy, noise: NoiseModel, seed: u64) -> Self {
        SimulatedExpert { g_star, policy, noise, rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}

fn atom_shrinkage<S: Structure>(posterior: &FinitePosterior<S>, snapshot: &Snapshot) -> Result<Vec<f64>> {
    snapshot.answers.iter().map(|(a, _)| posterior.shrinkage_atom(a)).collect()
}

impl<S: Structure> Expert<S> for SimulatedExpert<S> {
    fn respond(&mut self, _query: &Query, snapshot: &Snapshot, posterior: &FinitePosterior<S>) -> Result<Option<Response>> {
        let atom = match self.policy {
            FeedbackPolicy::Correction(policy) => {
                let shrinkage = match policy.atom_choice {
                    AtomChoice::MaxShrinkage => Some(atom_shrinkage(posterior, snapshot)?),
                    AtomChoice::UniformIncorrect => None,
                };
                choose_correction(snapshot, &self.g_star, &policy, shrinkage.as_deref(), &mut self.rng)?
            }
            FeedbackPolicy::Shrinkage(rule) => {
                let shrinkage = atom_shrinkage(posterior, snapshot)?;
                snapshot.answers[choose_by_shrinkage(&shrinkage, rule, &mut self.rng)?].0
            }
        };
        let answer = answer_atom(&atom, &self.g_star, &self.noise, &mut self.rng)?;
        Ok(Some(Response::Answer { atom, answer }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::query_engine::{QuerySampler, Session, SessionConfig};
    use crate::structures::{decompose, FlatClustering, Labeling, SpaceKind};

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn snapshot_of(g: &Labeling, atoms: &[usize]) -> Snapshot {
        Snapshot { member: 0, answers: atoms.iter().map(|&i| (Atom::point(i), g.eval(&Atom::point(i)).unwrap())).collect() }
    }

    #[test]
    fn noiseless_returns_truth() {
        let g = Labeling::new(vec![3, 4]);
        let mut r = rng(1);
        for _ in 0..100 {
            assert_eq!(answer_atom(&Atom::point(1), &g, &NoiseModel::Noiseless, &mut r).unwrap(), Answer::Class(4));
        }
    }

    #[test]
    fn eleven_answer_table_has_margin_one_hundredth() {
        let mut answers = vec![(Answer::Class(0), 0.10)];
        answers.extend((1..=10).map(|c| (Answer::Class(c), 0.09)));
        let t = MassartTable::new(0.01, vec![MassartEntry { atom: Atom::point(0), answers }]).unwrap();
        assert_eq!(t.lambda(), 0.01);
        let g = Labeling::new(vec![0]);
        let sym = MassartTable::symmetric(&g, &[Atom::point(0)], &(0..11).map(Answer::Class).collect::<Vec<_>>(), 0.01).unwrap();
        let d = sym.distribution(&Atom::point(0)).unwrap();
        assert!((d[0].1 - 0.10).abs() < 1e-12);
        assert!(d[1..].iter().all(|(_, p)| (p - 0.09).abs() < 1e-12));
    }

    #[test]
    fn table_rejects_small_margin() {
        let answers = vec![(Answer::Same(true), 0.55), (Answer::Same(false), 0.45)];
        let e = MassartTable::new(0.2, vec![MassartEntry { atom: Atom::pair(0, 1).unwrap(), answers }]);
        assert!(matches!(e, Err(Error::Config(_))));
        let bad_sum = vec![(Answer::Same(true), 0.7), (Answer::Same(false), 0.2)];
        assert!(MassartTable::new(0.2, vec![MassartEntry { atom: Atom::pair(0, 1).unwrap(), answers: bad_sum }]).is_err());
    }

    #[test]
    fn table_json_roundtrip_and_missing_atom() {
        let g = FlatClustering::new(vec![0, 0, 1], 2).unwrap();
        let atoms = decompose(&Query::new(vec![0, 1, 2]).unwrap(), SpaceKind::Clustering).unwrap();
        let t = MassartTable::symmetric(&g, &atoms[..2], &[Answer::Same(true), Answer::Same(false)], 0.2).unwrap();
        let back = MassartTable::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back, t);
        let noise = NoiseModel::Massart(t);
        assert!(answer_atom(&atoms[2], &g, &noise, &mut rng(0)).is_err());
    }

    #[test]
    fn label_flip_frequency() {
        let g = Labeling::new(vec![1]);
        let noise = NoiseModel::label_flip(0.2).unwrap();
        let mut r = rng(2);
        let n = 100_000;
        let right = (0..n).filter(|_| answer_atom(&Atom::point(0), &g, &noise, &mut r).unwrap() == Answer::Class(1)).count();
        assert!((right as f64 / n as f64 - 0.8).abs() < 0.005);
        assert!(NoiseModel::label_flip(0.5).is_err());
    }

    #[test]
    fn correct_snapshot_is_accepted() {
        let g = Labeling::new(vec![0, 1, 0]);
        let snap = snapshot_of(&g, &[0, 1, 2]);
        let q = Query::new(vec![0, 1, 2]).unwrap();
        let ev = give_feedback(0, &q, &snap, &g, &CorrectionPolicy::default(), &NoiseModel::Noiseless, None, &mut rng(3)).unwrap();
        assert!(ev.accepted);
    }

    #[test]
    fn single_incorrect_atom_always_chosen() {
        let g = Labeling::new(vec![0, 1, 0]);
        let mut snap = snapshot_of(&g, &[0, 1, 2]);
        snap.answers[1].1 = Answer::Class(0);
        let q = Query::new(vec![0, 1, 2]).unwrap();
        let mut r = rng(4);
        for _ in 0..1000 {
            let ev = give_feedback(0, &q, &snap, &g, &CorrectionPolicy::default(), &NoiseModel::Noiseless, None, &mut r).unwrap();
            assert_eq!(ev.atom, Atom::point(1));
            assert_eq!(ev.answer, Answer::Class(1));
            assert!(!ev.accepted);
        }
    }

    #[test]
    fn partial_correction_rate() {
        let g = Labeling::new(vec![0, 0, 0, 0]);
        let mut snap = snapshot_of(&g, &[0, 1, 2, 3]);
        snap.answers[0].1 = Answer::Class(1);
        snap.answers[2].1 = Answer::Class(1);
        let policy = CorrectionPolicy::new(0.5, AtomChoice::UniformIncorrect).unwrap();
        let mut r = rng(5);
        let n = 10_000;
        let hits = (0..n)
            .filter(|_| {
                let a = choose_correction(&snap, &g, &policy, None, &mut r).unwrap();
                a == Atom::point(0) || a == Atom::point(2)
            })
            .count();
        // 0.5 direct + 0.5 * 2/4 by chance
        let rate = hits as f64 / n as f64;
        assert!(rate >= 0.48);
        assert!((rate - 0.75).abs() < 0.02, "{rate}");
    }

    #[test]
    fn max_shrinkage_picks_largest_incorrect() {
        let g = Labeling::new(vec![0, 0, 0]);
        let snap = Snapshot { member: 0, answers: (0..3).map(|i| (Atom::point(i), Answer::Class(1))).collect() };
        let policy = CorrectionPolicy::new(1.0, AtomChoice::MaxShrinkage).unwrap();
        let a = choose_correction(&snap, &g, &policy, Some(&[0.1, 0.4, 0.2]), &mut rng(6)).unwrap();
        assert_eq!(a, Atom::point(1));
        assert!(choose_correction(&snap, &g, &policy, None, &mut rng(6)).is_err());
    }

    #[test]
    fn shrinkage_rule_choices() {
        let mut r = rng(7);
        for _ in 0..1000 {
            assert_eq!(choose_by_shrinkage(&[0.5, 0.1, 0.0], ShrinkageRule::Qualifying, &mut r).unwrap(), 0);
        }
        let mut seen = [0usize; 3];
        for _ in 0..3000 {
            seen[choose_by_shrinkage(&[0.2, 0.2, 0.2], ShrinkageRule::Qualifying, &mut r).unwrap()] += 1;
        }
        assert!(seen.iter().all(|&c| c > 850));
        assert_eq!(choose_by_shrinkage(&[0.1, 0.3, 0.3], ShrinkageRule::Argmax, &mut r).unwrap(), 1);
    }

    #[test]
    fn shrinkage_feedback_meets_query_mean() {
        let g = Labeling::new(vec![0, 1, 0, 1]);
        let q = Query::new(vec![0, 1, 2, 3]).unwrap();
        let snap = snapshot_of(&g, &[0, 1, 2, 3]);
        let s = [0.3, 0.05, 0.25, 0.0];
        let mean = s.iter().sum::<f64>() / 4.0;
        let mut r = rng(8);
        let mut total = 0.0;
        let n = 10_000;
        for _ in 0..n {
            let ev = shrinkage_feedback(0, &q, &snap, &g, &s, ShrinkageRule::Qualifying, &NoiseModel::Noiseless, &mut r).unwrap();
            let idx = ev.atom.items()[0];
            assert!(s[idx] >= mean);
            total += s[idx];
        }
        assert!(total / n as f64 >= mean);
    }

    #[test]
    fn hard_noiseless_sessions_keep_target() {
        // 16 labelings of 4 binary points; target kept in the version space
        let committee: Vec<Labeling> =
            (0..16).map(|m| Labeling::new((0..4).map(|b| (m >> b) & 1).collect())).collect();
        for seed in 0..20 {
            let target = committee[(seed * 7 % 16) as usize].clone();
            let p = FinitePosterior::uniform(committee.clone()).unwrap();
            let sampler = QuerySampler::uniform_subsets(4, 2).unwrap();
            let cfg = SessionConfig::zero_one(SpaceKind::Classification, f64::INFINITY, seed);
            let mut s = Session::new(p, sampler, cfg).unwrap().with_target(target.clone());
            let mut expert = SimulatedExpert::new(
                target.clone(),
                FeedbackPolicy::Correction(CorrectionPolicy::default()),
                NoiseModel::Noiseless,
                seed + 100,
            );
            for _ in 0..40 {
                s.step(&mut expert).unwrap();
                assert!(s.posterior().target_mass(&target) > 0.0);
            }
            assert_eq!(s.posterior().target_mass(&target), 1.0);
        }
    }
}
