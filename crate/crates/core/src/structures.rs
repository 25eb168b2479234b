//! Structure spaces and their atomic questions.
//!
//! A structure is a global hypothesis over a finite pool of items: a flat
//! clustering, a rooted hierarchy, a labeling, or a linear separator. Every
//! structure is viewed as a function from atoms (a point, a pair, a triplet)
//! to answers. A query is a small bundle of items; its atoms are all the
//! arity-sized subsets of those items.

use std::collections::HashSet;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Kind of structure space, which fixes the atom arity.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceKind {
    /// Point atoms answered by a class label or a real prediction.
    Classification,
    /// Pair atoms answered by same-cluster / different-cluster.
    Clustering,
    /// Triplet atoms answered by one of four rooted topologies.
    Hierarchy,
}

impl SpaceKind {
    pub fn arity(self) -> usize {
        match self {
            SpaceKind::Classification => 1,
            SpaceKind::Clustering => 2,
            SpaceKind::Hierarchy => 3,
        }
    }
}

/// An atomic question. Items are stored in ascending order so each atom has a
/// single representation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub enum Atom {
    Point(usize),
    Pair(usize, usize),
    Triplet(usize, usize, usize),
}

impl Atom {
    pub fn point(i: usize) -> Atom {
        Atom::Point(i)
    }

    pub fn pair(i: usize, j: usize) -> Result<Atom> {
        if i == j {
            return Err(Error::InvalidQuery(format!("pair atom needs distinct items, got ({i}, {j})")));
        }
        Ok(Atom::Pair(i.min(j), i.max(j)))
    }

    pub fn triplet(i: usize, j: usize, k: usize) -> Result<Atom> {
        let mut v = [i, j, k];
        v.sort_unstable();
        if v[0] == v[1] || v[1] == v[2] {
            return Err(Error::InvalidQuery(format!(
                "triplet atom needs distinct items, got ({i}, {j}, {k})"
            )));
        }
        Ok(Atom::Triplet(v[0], v[1], v[2]))
    }

    pub fn arity(&self) -> usize {
        match self {
            Atom::Point(_) => 1,
            Atom::Pair(..) => 2,
            Atom::Triplet(..) => 3,
        }
    }

    pub fn items(&self) -> Vec<usize> {
        match *self {
            Atom::Point(i) => vec![i],
            Atom::Pair(i, j) => vec![i, j],
            Atom::Triplet(i, j, k) => vec![i, j, k],
        }
    }

    pub fn max_item(&self) -> usize {
        match *self {
            Atom::Point(i) => i,
            Atom::Pair(_, j) => j,
            Atom::Triplet(_, _, k) => k,
        }
    }
}

impl TryFrom<Vec<usize>> for Atom {
    type Error = Error;

    fn try_from(items: Vec<usize>) -> Result<Atom> {
        match items.as_slice() {
            [i] => Ok(Atom::point(*i)),
            [i, j] => Atom::pair(*i, *j),
            [i, j, k] => Atom::triplet(*i, *j, *k),
            _ => Err(Error::InvalidQuery(format!("atoms have 1 to 3 items, got {}", items.len()))),
        }
    }
}

impl From<Atom> for Vec<usize> {
    fn from(atom: Atom) -> Vec<usize> {
        atom.items()
    }
}

impl fmt::Display for Atom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Atom::Point(i) => write!(f, "({i})"),
            Atom::Pair(i, j) => write!(f, "({i}, {j})"),
            Atom::Triplet(i, j, k) => write!(f, "({i}, {j}, {k})"),
        }
    }
}

/// The four rooted topologies on three leaves `i < j < k`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    CherryIJ,
    CherryIK,
    CherryJK,
    Star,
}

/// Answer to an atomic question, or a real-valued prediction for it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Answer {
    Class(i64),
    Same(bool),
    Topology(Topology),
    Real(f64),
}

impl Answer {
    pub fn is_discrete(&self) -> bool {
        !matches!(self, Answer::Real(_))
    }

    pub fn as_real(&self) -> Result<f64> {
        match *self {
            Answer::Real(z) => Ok(z),
            Answer::Class(c) => Ok(c as f64),
            other => Err(Error::AnswerMismatch(format!("{other:?} has no real value"))),
        }
    }
}

/// A query: an ordered list of distinct pool items shown together.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct Query {
    items: Vec<usize>,
}

impl Query {
    pub fn new(items: Vec<usize>) -> Result<Query> {
        if items.is_empty() {
            return Err(Error::InvalidQuery("empty query".into()));
        }
        let mut seen = HashSet::with_capacity(items.len());
        for &i in &items {
            if !seen.insert(i) {
                return Err(Error::InvalidQuery(format!("item {i} repeated")));
            }
        }
        Ok(Query { items })
    }

    pub fn items(&self) -> &[usize] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Whether `atom` is one of this query's atomic questions.
    pub fn contains_atom(&self, atom: &Atom) -> bool {
        atom.items().iter().all(|i| self.items.contains(i))
    }
}

impl TryFrom<Vec<usize>> for Query {
    type Error = Error;

    fn try_from(items: Vec<usize>) -> Result<Query> {
        Query::new(items)
    }
}

impl From<Query> for Vec<usize> {
    fn from(q: Query) -> Vec<usize> {
        q.items
    }
}

/// All arity-sized subsets of the query's items, in lexicographic order of the
/// sorted items.
pub fn decompose(query: &Query, space: SpaceKind) -> Result<Vec<Atom>> {
    let arity = space.arity();
    if query.len() < arity {
        return Err(Error::InvalidQuery(format!(
            "query of {} items is smaller than atom arity {arity}",
            query.len()
        )));
    }
    let mut items = query.items().to_vec();
    items.sort_unstable();
    let s = items.len();
    let mut atoms = Vec::with_capacity(binomial(s, arity));
    match space {
        SpaceKind::Classification => atoms.extend(items.iter().map(|&i| Atom::Point(i))),
        SpaceKind::Clustering => {
            for a in 0..s {
                for b in a + 1..s {
                    atoms.push(Atom::Pair(items[a], items[b]));
                }
            }
        }
        SpaceKind::Hierarchy => {
            for a in 0..s {
                for b in a + 1..s {
                    for c in b + 1..s {
                        atoms.push(Atom::Triplet(items[a], items[b], items[c]));
                    }
                }
            }
        }
    }
    Ok(atoms)
}

pub fn binomial(n: usize, k: usize) -> usize {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1usize, |acc, i| acc * (n - i) / (i + 1))
}

/// A hypothesis that answers atomic questions.
pub trait Structure {
    fn space(&self) -> SpaceKind;

    fn eval(&self, atom: &Atom) -> Result<Answer>;
}

impl<S: Structure + ?Sized> Structure for &S {
    fn space(&self) -> SpaceKind {
        (**self).space()
    }

    fn eval(&self, atom: &Atom) -> Result<Answer> {
        (**self).eval(atom)
    }
}

fn check_arity(atom: &Atom, space: SpaceKind) -> Result<()> {
    if atom.arity() != space.arity() {
        return Err(Error::AtomMismatch { atom: atom.to_string(), space });
    }
    Ok(())
}

fn check_bounds(atom: &Atom, n: usize) -> Result<()> {
    if atom.max_item() >= n {
        return Err(Error::InvalidQuery(format!("atom {atom} outside pool of {n} items")));
    }
    Ok(())
}

/// Fraction of the query's atoms on which `g` and `h` give different answers.
pub fn disagreement<G: Structure, H: Structure>(g: &G, h: &H, query: &Query, space: SpaceKind) -> Result<f64> {
    let atoms = decompose(query, space)?;
    disagreement_on(g, h, &atoms)
}

/// [`disagreement`] over an already decomposed atom list.
pub fn disagreement_on<G: Structure, H: Structure>(g: &G, h: &H, atoms: &[Atom]) -> Result<f64> {
    if atoms.is_empty() {
        return Ok(0.0);
    }
    let mut differ = 0usize;
    for atom in atoms {
        if g.eval(atom)? != h.eval(atom)? {
            differ += 1;
        }
    }
    Ok(differ as f64 / atoms.len() as f64)
}

/// Clipping bound and normaliser for squared prediction distances.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionScale {
    /// Predictions are clipped to `[-bound, bound]`.
    pub bound: f64,
    /// Normaliser `D`; `4 * bound^2` makes the distance a probability.
    pub scale: f64,
}

impl PredictionScale {
    pub fn new(bound: f64) -> Result<PredictionScale> {
        PredictionScale::with_scale(bound, 4.0 * bound * bound)
    }

    pub fn with_scale(bound: f64, scale: f64) -> Result<PredictionScale> {
        if !(bound > 0.0) || !bound.is_finite() {
            return Err(Error::Config(format!("prediction bound must be positive, got {bound}")));
        }
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(Error::Config(format!("distance normaliser must be positive, got {scale}")));
        }
        Ok(PredictionScale { bound, scale })
    }

    pub fn clip(&self, z: f64) -> f64 {
        z.clamp(-self.bound, self.bound)
    }
}

impl Default for PredictionScale {
    fn default() -> Self {
        PredictionScale { bound: 5.0, scale: 100.0 }
    }
}

/// Normalised average squared distance between clipped predictions on the
/// query's atoms.
pub fn sq_distance<G: Structure, H: Structure>(
    g: &G,
    h: &H,
    query: &Query,
    space: SpaceKind,
    scale: &PredictionScale,
) -> Result<f64> {
    let atoms = decompose(query, space)?;
    sq_distance_on(g, h, &atoms, scale)
}

pub fn sq_distance_on<G: Structure, H: Structure>(
    g: &G,
    h: &H,
    atoms: &[Atom],
    scale: &PredictionScale,
) -> Result<f64> {
    if atoms.is_empty() {
        return Ok(0.0);
    }
    let mut total = 0.0;
    for atom in atoms {
        let a = scale.clip(g.eval(atom)?.as_real()?);
        let b = scale.clip(h.eval(atom)?.as_real()?);
        total += (a - b) * (a - b) / scale.scale;
    }
    Ok(total / atoms.len() as f64)
}

/// Flat clustering of a pool: `assignment[i]` is item `i`'s cluster in `0..k`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<usize>", into = "Vec<usize>")]
pub struct FlatClustering {
    assignment: Vec<usize>,
    k: usize,
}

impl FlatClustering {
    pub fn new(assignment: Vec<usize>, k: usize) -> Result<FlatClustering> {
        if let Some(&bad) = assignment.iter().find(|&&c| c >= k) {
            return Err(Error::InvalidStructure(format!("cluster id {bad} not below k = {k}")));
        }
        Ok(FlatClustering { assignment, k })
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.assignment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.assignment.is_empty()
    }

    /// Relabels clusters in order of first appearance, so that relabelings of
    /// the same partition compare equal.
    pub fn canonical(&self) -> FlatClustering {
        let mut map = vec![usize::MAX; self.k];
        let mut next = 0;
        let assignment = self
            .assignment
            .iter()
            .map(|&c| {
                if map[c] == usize::MAX {
                    map[c] = next;
                    next += 1;
                }
                map[c]
            })
            .collect();
        FlatClustering { assignment, k: self.k }
    }
}

impl TryFrom<Vec<usize>> for FlatClustering {
    type Error = Error;

    fn try_from(assignment: Vec<usize>) -> Result<FlatClustering> {
        let k = assignment.iter().max().map_or(1, |m| m + 1);
        FlatClustering::new(assignment, k)
    }
}

impl From<FlatClustering> for Vec<usize> {
    fn from(c: FlatClustering) -> Vec<usize> {
        c.assignment
    }
}

impl Structure for FlatClustering {
    fn space(&self) -> SpaceKind {
        SpaceKind::Clustering
    }

    fn eval(&self, atom: &Atom) -> Result<Answer> {
        check_arity(atom, SpaceKind::Clustering)?;
        check_bounds(atom, self.assignment.len())?;
        match *atom {
            Atom::Pair(i, j) => Ok(Answer::Same(self.assignment[i] == self.assignment[j])),
            _ => unreachable!(),
        }
    }
}

/// Explicit class labels for every pool item; answers point atoms.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Labeling {
    labels: Vec<i64>,
}

impl Labeling {
    pub fn new(labels: Vec<i64>) -> Labeling {
        Labeling { labels }
    }

    pub fn labels(&self) -> &[i64] {
        &self.labels
    }
}

impl Structure for Labeling {
    fn space(&self) -> SpaceKind {
        SpaceKind::Classification
    }

    fn eval(&self, atom: &Atom) -> Result<Answer> {
        check_arity(atom, SpaceKind::Classification)?;
        check_bounds(atom, self.labels.len())?;
        match *atom {
            Atom::Point(i) => Ok(Answer::Class(self.labels[i])),
            _ => unreachable!(),
        }
    }
}

/// Nested-list form of a rooted tree over item indices, e.g. `[[0, 1], 2]`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Leaf(usize),
    Internal(Vec<TreeNode>),
}

/// Rooted hierarchy whose leaves are exactly the items `0..n`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "TreeNode", into = "TreeNode")]
pub struct Hierarchy {
    root: TreeNode,
    n_leaves: usize,
    // Node ids: leaves are 0..n, internal nodes follow.
    parent: Vec<usize>,
    depth: Vec<usize>,
}

impl Hierarchy {
    pub fn new(root: TreeNode) -> Result<Hierarchy> {
        let mut leaves = Vec::new();
        collect_leaves(&root, &mut leaves)?;
        let n = leaves.len();
        let mut seen = vec![false; n];
        for &leaf in &leaves {
            if leaf >= n || seen[leaf] {
                return Err(Error::InvalidStructure(format!(
                    "leaves must be exactly 0..{n}; found {leaf} out of place"
                )));
            }
            seen[leaf] = true;
        }
        let mut parent = vec![usize::MAX; n];
        let mut depth = vec![0; n];
        assign_nodes(&root, usize::MAX, 0, &mut parent, &mut depth);
        Ok(Hierarchy { root, n_leaves: n, parent, depth })
    }

    pub fn root(&self) -> &TreeNode {
        &self.root
    }

    pub fn n_leaves(&self) -> usize {
        self.n_leaves
    }

    fn lca(&self, mut a: usize, mut b: usize) -> usize {
        while self.depth[a] > self.depth[b] {
            a = self.parent[a];
        }
        while self.depth[b] > self.depth[a] {
            b = self.parent[b];
        }
        while a != b {
            a = self.parent[a];
            b = self.parent[b];
        }
        a
    }

    /// Topology induced on three distinct leaves `i < j < k`.
    pub fn triplet_topology(&self, i: usize, j: usize, k: usize) -> Topology {
        let dij = self.depth[self.lca(i, j)];
        let dik = self.depth[self.lca(i, k)];
        let djk = self.depth[self.lca(j, k)];
        if dij > dik {
            Topology::CherryIJ
        } else if dik > dij {
            Topology::CherryIK
        } else if djk > dij {
            Topology::CherryJK
        } else {
            Topology::Star
        }
    }
}

fn collect_leaves(node: &TreeNode, out: &mut Vec<usize>) -> Result<()> {
    match node {
        TreeNode::Leaf(i) => out.push(*i),
        TreeNode::Internal(children) => {
            if children.len() < 2 {
                return Err(Error::InvalidStructure(format!(
                    "internal node with {} child(ren); at least 2 required",
                    children.len()
                )));
            }
            for c in children {
                collect_leaves(c, out)?;
            }
        }
    }
    Ok(())
}

fn assign_nodes(node: &TreeNode, parent_id: usize, d: usize, parent: &mut Vec<usize>, depth: &mut Vec<usize>) {
    match node {
        TreeNode::Leaf(i) => {
            parent[*i] = parent_id;
            depth[*i] = d;
        }
        TreeNode::Internal(children) => {
            let id = parent.len();
            parent.push(parent_id);
            depth.push(d);
            for c in children {
                assign_nodes(c, id, d + 1, parent, depth);
            }
        }
    }
}

impl TryFrom<TreeNode> for Hierarchy {
    type Error = Error;

    fn try_from(root: TreeNode) -> Result<Hierarchy> {
        Hierarchy::new(root)
    }
}

impl From<Hierarchy> for TreeNode {
    fn from(h: Hierarchy) -> TreeNode {
        h.root
    }
}

impl Structure for Hierarchy {
    fn space(&self) -> SpaceKind {
        SpaceKind::Hierarchy
    }

    fn eval(&self, atom: &Atom) -> Result<Answer> {
        check_arity(atom, SpaceKind::Hierarchy)?;
        check_bounds(atom, self.n_leaves)?;
        match *atom {
            Atom::Triplet(i, j, k) => Ok(Answer::Topology(self.triplet_topology(i, j, k))),
            _ => unreachable!(),
        }
    }
}

/// Feature vectors of a pool; all rows share one dimension.
#[derive(Clone, Debug, PartialEq)]
pub struct FeaturePool {
    rows: Vec<Vec<f64>>,
    dim: usize,
}

impl FeaturePool {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<FeaturePool> {
        let dim = rows.first().map_or(0, |r| r.len());
        if let Some((i, r)) = rows.iter().enumerate().find(|(_, r)| r.len() != dim) {
            return Err(Error::InvalidStructure(format!(
                "item {i} has {} features, expected {dim}",
                r.len()
            )));
        }
        Ok(FeaturePool { rows, dim })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.rows[i]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }
}

/// How a linear separator answers a point atom.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearOutput {
    /// `Real(<w, x>)`.
    Real,
    /// `Class(+1)` when `<w, x> >= 0`, else `Class(-1)`.
    Sign,
}

/// `g_w(x) = <w, x>` over a shared feature pool.
#[derive(Clone, Debug)]
pub struct LinearSeparator {
    w: Vec<f64>,
    pool: Arc<FeaturePool>,
    output: LinearOutput,
}

impl LinearSeparator {
    pub fn new(w: Vec<f64>, pool: Arc<FeaturePool>, output: LinearOutput) -> Result<LinearSeparator> {
        if w.len() != pool.dim() {
            return Err(Error::InvalidStructure(format!(
                "weight dimension {} does not match pool dimension {}",
                w.len(),
                pool.dim()
            )));
        }
        Ok(LinearSeparator { w, pool, output })
    }

    pub fn weights(&self) -> &[f64] {
        &self.w
    }

    pub fn score(&self, i: usize) -> f64 {
        dot(&self.w, self.pool.row(i))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.w)?)
    }

    pub fn from_json(json: &str, pool: Arc<FeaturePool>, output: LinearOutput) -> Result<LinearSeparator> {
        let w: Vec<f64> = serde_json::from_str(json)?;
        LinearSeparator::new(w, pool, output)
    }
}

impl PartialEq for LinearSeparator {
    fn eq(&self, other: &Self) -> bool {
        self.w == other.w && self.output == other.output && Arc::ptr_eq(&self.pool, &other.pool)
    }
}

impl Structure for LinearSeparator {
    fn space(&self) -> SpaceKind {
        SpaceKind::Classification
    }

    fn eval(&self, atom: &Atom) -> Result<Answer> {
        check_arity(atom, SpaceKind::Classification)?;
        check_bounds(atom, self.pool.len())?;
        let Atom::Point(i) = *atom else { unreachable!() };
        let z = self.score(i);
        Ok(match self.output {
            LinearOutput::Real => Answer::Real(z),
            LinearOutput::Sign => Answer::Class(if z >= 0.0 { 1 } else { -1 }),
        })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
