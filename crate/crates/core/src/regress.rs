//! Least-squares regression backends used to fit Bellman residuals and
//! Bellman backups.
//!
//! Two estimators share the [`fit`] entry point:
//!
//! - [`RegressorKind::TabularMean`] averages the targets observed at each
//!   tabular state. States never observed evaluate to 0.
//! - [`RegressorKind::BoostedTrees`] runs least-squares gradient boosting
//!   with depth-limited CART trees. Stage 0 is the target mean. Each later
//!   stage grows a tree on the current residuals with greedy axis-aligned
//!   splits and adds `learning_rate * tree`.
//!
//! Split thresholds are midpoints between consecutive distinct feature
//! values. Ties in gain keep the lowest feature index, then the smallest
//! threshold. With `subsample < 1` the tree shape is chosen on a random
//! subset. Leaf values are always the residual means over every training
//! point routed to the leaf, so training MSE never increases between stages.

use rand::seq::index::sample as sample_indices;

use crate::blob::{Reader, Writer};
use crate::envs::{Dataset, StateColumn};
use crate::error::{KbbError, Result};
use crate::rng::rng_from_seed;
use crate::value::{StateKind, StatePoint, StateRef, StateValueFn};

const MIN_RELATIVE_GAIN: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum RegressorKind {
    TabularMean,
    BoostedTrees,
}

impl RegressorKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            RegressorKind::TabularMean => "tabular_mean",
            RegressorKind::BoostedTrees => "boosted_trees",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tabular_mean" => Some(RegressorKind::TabularMean),
            "boosted_trees" => Some(RegressorKind::BoostedTrees),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegressorConfig {
    pub kind: RegressorKind,
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_leaf: usize,
    pub subsample: f64,
}

impl Default for RegressorConfig {
    fn default() -> Self {
        Self {
            kind: RegressorKind::BoostedTrees,
            n_trees: 200,
            max_depth: 3,
            learning_rate: 0.1,
            min_leaf: 5,
            subsample: 1.0,
        }
    }
}

impl RegressorConfig {
    pub fn tabular_mean() -> Self {
        Self {
            kind: RegressorKind::TabularMean,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(KbbError::InvalidArgument(what.to_string()));
        if self.n_trees == 0 {
            return bad("n_trees must be positive");
        }
        if self.max_depth == 0 {
            return bad("max_depth must be positive");
        }
        if self.min_leaf == 0 {
            return bad("min_leaf must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return bad("subsample must lie in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegressionPair {
    pub x: StatePoint,
    pub y: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: u32,
        threshold: f64,
        left: u32,
        right: u32,
    },
}

/// A binary regression tree; `x[feature] <= threshold` goes left.
#[derive(Clone, Debug, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn leaf_index(&self, feature: impl Fn(usize) -> f64) -> usize {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf(_) => return at,
                Node::Split {
                    feature: f,
                    threshold,
                    left,
                    right,
                } => {
                    at = if feature(f as usize) <= threshold {
                        left as usize
                    } else {
                        right as usize
                    };
                }
            }
        }
    }

    fn predict(&self, feature: impl Fn(usize) -> f64) -> f64 {
        match self.nodes[self.leaf_index(feature)] {
            Node::Leaf(v) => v,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf(_))).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf(_) => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left as usize).max(walk(nodes, right as usize)),
            }
        }
        walk(&self.nodes, 0)
    }
}

/// A fitted regression function, total on every state kind.
#[derive(Clone, Debug, PartialEq)]
pub enum FittedFunction {
    /// Per-state values; states past the end (and vector states) give 0.
    Lookup { values: Vec<f64> },
    /// `base + sum_k weight_k * tree_k(x)`.
    Ensemble { base: f64, stages: Vec<(f64, Tree)> },
}

impl FittedFunction {
    pub fn eval(&self, s: StateRef<'_>) -> f64 {
        match self {
            FittedFunction::Lookup { values } => match s {
                StateRef::Index(i) => values.get(i).copied().unwrap_or(0.0),
                StateRef::Vector(_) => 0.0,
            },
            FittedFunction::Ensemble { base, stages } => {
                let feature = |f: usize| match s {
                    StateRef::Index(i) => {
                        if f == 0 {
                            i as f64
                        } else {
                            0.0
                        }
                    }
                    StateRef::Vector(v) => v.get(f).copied().unwrap_or(0.0),
                };
                stages
                    .iter()
                    .fold(*base, |acc, (w, tree)| acc + w * tree.predict(feature))
            }
        }
    }

    pub fn n_stages(&self) -> usize {
        match self {
            FittedFunction::Lookup { .. } => 0,
            FittedFunction::Ensemble { stages, .. } => stages.len(),
        }
    }

    pub(crate) fn encode(&self, w: &mut Writer) {
        match self {
            FittedFunction::Lookup { values } => {
                w.u8(0);
                w.f64s(values);
            }
            FittedFunction::Ensemble { base, stages } => {
                w.u8(1);
                w.f64(*base);
                w.u64(stages.len() as u64);
                for (weight, tree) in stages {
                    w.f64(*weight);
                    w.u64(tree.nodes.len() as u64);
                    for node in &tree.nodes {
                        match *node {
                            Node::Leaf(v) => {
                                w.u8(0);
                                w.f64(v);
                            }
                            Node::Split {
                                feature,
                                threshold,
                                left,
                                right,
                            } => {
                                w.u8(1);
                                w.u32(feature);
                                w.f64(threshold);
                                w.u32(left);
                                w.u32(right);
                            }
                        }
                    }
                }
            }
        }
    }

    pub(crate) fn decode(r: &mut Reader<'_>) -> Result<Self> {
        match r.u8()? {
            0 => Ok(FittedFunction::Lookup { values: r.f64s()? }),
            1 => {
                let base = r.f64()?;
                let n = r.len()?;
                let mut stages = Vec::with_capacity(n.min(1 << 16));
                for _ in 0..n {
                    let weight = r.f64()?;
                    let n_nodes = r.len()?;
                    let mut nodes = Vec::with_capacity(n_nodes.min(1 << 16));
                    for _ in 0..n_nodes {
                        nodes.push(match r.u8()? {
                            0 => Node::Leaf(r.f64()?),
                            1 => Node::Split {
                                feature: r.u32()?,
                                threshold: r.f64()?,
                                left: r.u32()?,
                                right: r.u32()?,
                            },
                            t => return Err(KbbError::Format(format!("unknown tree node tag {t}"))),
                        });
                    }
                    let in_range = |c: u32| (c as usize) < n_nodes;
                    let valid = !nodes.is_empty()
                        && nodes.iter().enumerate().all(|(at, node)| match *node {
                            Node::Leaf(_) => true,
                            Node::Split { left, right, .. } => {
                                in_range(left) && in_range(right) && left as usize > at && right as usize > at
                            }
                        });
                    if !valid {
                        return Err(KbbError::Format("malformed regression tree".into()));
                    }
                    stages.push((weight, Tree { nodes }));
                }
                Ok(FittedFunction::Ensemble { base, stages })
            }
            t => Err(KbbError::Format(format!("unknown fitted function tag {t}"))),
        }
    }
}

/// Fits `config.kind` to `pairs`. Deterministic given `seed`.
pub fn fit(pairs: &[RegressionPair], config: &RegressorConfig, seed: u64) -> Result<FittedFunction> {
    fit_with_trace(pairs, config, seed).map(|(f, _)| f)
}

/// Like [`fit`], also returning the training MSE after every stage
/// (one entry for `TabularMean`, `n_trees + 1` for boosting).
pub fn fit_with_trace(
    pairs: &[RegressionPair],
    config: &RegressorConfig,
    seed: u64,
) -> Result<(FittedFunction, Vec<f64>)> {
    let first = pairs.first().ok_or(KbbError::EmptyInput)?;
    let kind = first.x.kind();
    if pairs.iter().any(|p| p.x.kind() != kind) {
        return Err(KbbError::MixedStateKinds);
    }
    let inputs = match kind {
        StateKind::Index => StateColumn::Indices(
            pairs
                .iter()
                .map(|p| match p.x {
                    StatePoint::Index(i) => i,
                    StatePoint::Vector(_) => unreachable!(),
                })
                .collect(),
        ),
        StateKind::Vector(dim) => StateColumn::Points {
            dim,
            data: pairs
                .iter()
                .flat_map(|p| match &p.x {
                    StatePoint::Vector(v) => v.iter().copied(),
                    StatePoint::Index(_) => unreachable!(),
                })
                .collect(),
        },
    };
    let targets: Vec<f64> = pairs.iter().map(|p| p.y).collect();
    fit_column(&inputs, &targets, config, seed)
}

/// Fits `-(Bellman residual)` targets `v(x) - (r + gamma v(x'))`.
pub fn fit_residual(
    v: &StateValueFn,
    data: &Dataset,
    gamma: f64,
    config: &RegressorConfig,
    seed: u64,
) -> Result<FittedFunction> {
    let (v_x, v_xp) = values_on(v, data);
    let targets = residual_targets(&v_x, &v_xp, data.rewards(), gamma);
    fit_column(data.states_column(), &targets, config, seed).map(|(f, _)| f)
}

/// Fits Bellman backup targets `r + gamma v(x')`.
pub fn fit_backup(
    v: &StateValueFn,
    data: &Dataset,
    gamma: f64,
    config: &RegressorConfig,
    seed: u64,
) -> Result<FittedFunction> {
    let (_, v_xp) = values_on(v, data);
    let targets = backup_targets(&v_xp, data.rewards(), gamma);
    fit_column(data.states_column(), &targets, config, seed).map(|(f, _)| f)
}

pub fn residual_targets(v_x: &[f64], v_xp: &[f64], rewards: &[f64], gamma: f64) -> Vec<f64> {
    v_x.iter()
        .zip(v_xp)
        .zip(rewards)
        .map(|((a, b), r)| a - (r + gamma * b))
        .collect()
}

pub fn backup_targets(v_xp: &[f64], rewards: &[f64], gamma: f64) -> Vec<f64> {
    v_xp.iter().zip(rewards).map(|(b, r)| r + gamma * b).collect()
}

fn values_on(v: &StateValueFn, data: &Dataset) -> (Vec<f64>, Vec<f64>) {
    let n = data.len();
    let v_x = (0..n).map(|i| v.eval(data.state(i))).collect();
    let v_xp = (0..n).map(|i| v.eval(data.next_state(i))).collect();
    (v_x, v_xp)
}

pub(crate) fn fit_column(
    inputs: &StateColumn,
    targets: &[f64],
    config: &RegressorConfig,
    seed: u64,
) -> Result<(FittedFunction, Vec<f64>)> {
    config.validate()?;
    if targets.is_empty() {
        return Err(KbbError::EmptyInput);
    }
    if inputs.len() != targets.len() {
        return Err(KbbError::DimensionMismatch {
            expected: inputs.len(),
            found: targets.len(),
        });
    }
    if targets.iter().any(|y| !y.is_finite()) {
        return Err(KbbError::InvalidArgument("regression targets must be finite".into()));
    }
    match config.kind {
        RegressorKind::TabularMean => match inputs {
            StateColumn::Indices(ix) => Ok(fit_tabular_mean(ix, targets)),
            StateColumn::Points { .. } => Err(KbbError::InvalidArgument(
                "tabular_mean regression needs index states".into(),
            )),
        },
        RegressorKind::BoostedTrees => Ok(fit_boosted(inputs, targets, config, seed)),
    }
}

fn fit_tabular_mean(ix: &[usize], targets: &[f64]) -> (FittedFunction, Vec<f64>) {
    let n_states = ix.iter().max().map_or(0, |m| m + 1);
    let mut sums = vec![0.0; n_states];
    let mut counts = vec![0usize; n_states];
    for (&i, &y) in ix.iter().zip(targets) {
        sums[i] += y;
        counts[i] += 1;
    }
    let values: Vec<f64> = sums
        .iter()
        .zip(&counts)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let mse = ix
        .iter()
        .zip(targets)
        .map(|(&i, &y)| (y - values[i]).powi(2))
        .sum::<f64>()
        / targets.len() as f64;
    (FittedFunction::Lookup { values }, vec![mse])
}

/// Column-major feature matrix.
struct Features {
    n: usize,
    cols: Vec<Vec<f64>>,
}

impl Features {
    fn from_column(inputs: &StateColumn) -> Self {
        let n = inputs.len();
        let cols = (0..inputs.width())
            .map(|c| (0..n).map(|i| inputs.coord(i, c)).collect())
            .collect();
        Self { n, cols }
    }

    fn at(&self, i: usize, f: usize) -> f64 {
        self.cols[f][i]
    }
}

struct Grower<'a> {
    features: &'a Features,
    residual: &'a [f64],
    max_depth: usize,
    min_leaf: usize,
    nodes: Vec<Node>,
}

struct BestSplit {
    gain: f64,
    feature: usize,
    threshold: f64,
}

impl Grower<'_> {
    /// `sorted[f]` lists the node's members ordered by feature `f`.
    fn grow(&mut self, sorted: Vec<Vec<u32>>, depth: usize) -> u32 {
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf(0.0));
        let members = &sorted[0];
        let count = members.len();
        if depth >= self.max_depth || count < 2 * self.min_leaf {
            return at as u32;
        }
        let (sum, sum_sq) = members.iter().fold((0.0, 0.0), |(s, q), &i| {
            let r = self.residual[i as usize];
            (s + r, q + r * r)
        });
        let ss = sum_sq - sum * sum / count as f64;
        if ss <= 0.0 {
            return at as u32;
        }
        let Some(best) = self.best_split(&sorted, sum) else {
            return at as u32;
        };
        if best.gain <= MIN_RELATIVE_GAIN * ss {
            return at as u32;
        }
        let goes_left = |i: u32| self.features.at(i as usize, best.feature) <= best.threshold;
        let (left, right): (Vec<Vec<u32>>, Vec<Vec<u32>>) = sorted
            .iter()
            .map(|list| list.iter().partition(|&&i| goes_left(i)))
            .unzip();
        let l = self.grow(left, depth + 1);
        let r = self.grow(right, depth + 1);
        self.nodes[at] = Node::Split {
            feature: best.feature as u32,
            threshold: best.threshold,
            left: l,
            right: r,
        };
        at as u32
    }

    fn best_split(&self, sorted: &[Vec<u32>], sum: f64) -> Option<BestSplit> {
        let count = sorted[0].len();
        let n = count as f64;
        let base = sum * sum / n;
        let mut best: Option<BestSplit> = None;
        for (f, order) in sorted.iter().enumerate() {
            let mut left_sum = 0.0;
            for k in 0..count - 1 {
                let i = order[k] as usize;
                left_sum += self.residual[i];
                let n_left = k + 1;
                if n_left < self.min_leaf {
                    continue;
                }
                if count - n_left < self.min_leaf {
                    break;
                }
                let here = self.features.at(i, f);
                let next = self.features.at(order[k + 1] as usize, f);
                if here >= next {
                    continue;
                }
                let right_sum = sum - left_sum;
                let gain = left_sum * left_sum / n_left as f64 + right_sum * right_sum / (count - n_left) as f64 - base;
                if best.as_ref().is_none_or(|b| gain > b.gain) {
                    let mid = 0.5 * (here + next);
                    let threshold = if mid < next { mid } else { here };
                    best = Some(BestSplit {
                        gain,
                        feature: f,
                        threshold,
                    });
                }
            }
        }
        best
    }
}

fn fit_boosted(
    inputs: &StateColumn,
    targets: &[f64],
    config: &RegressorConfig,
    seed: u64,
) -> (FittedFunction, Vec<f64>) {
    let features = Features::from_column(inputs);
    let n = features.n;
    let base = targets.iter().sum::<f64>() / n as f64;
    let mut residual: Vec<f64> = targets.iter().map(|y| y - base).collect();
    let mse = |r: &[f64]| r.iter().map(|e| e * e).sum::<f64>() / n as f64;
    let mut trace = Vec::with_capacity(config.n_trees + 1);
    trace.push(mse(&residual));

    let presorted: Vec<Vec<u32>> = features
        .cols
        .iter()
        .map(|col| {
            let mut order: Vec<u32> = (0..n as u32).collect();
            order.sort_by(|&a, &b| col[a as usize].total_cmp(&col[b as usize]).then(a.cmp(&b)));
            order
        })
        .collect();
    let n_sub = ((config.subsample * n as f64).round() as usize).clamp(1, n);
    let mut rng = rng_from_seed(seed);
    let mut in_subset = vec![true; n];

    let mut stages = Vec::with_capacity(config.n_trees);
    for _ in 0..config.n_trees {
        let sorted = if n_sub < n {
            in_subset.fill(false);
            for i in sample_indices(&mut rng, n, n_sub) {
                in_subset[i] = true;
            }
            presorted
                .iter()
                .map(|o| o.iter().copied().filter(|&i| in_subset[i as usize]).collect())
                .collect()
        } else {
            presorted.clone()
        };
        let mut grower = Grower {
            features: &features,
            residual: &residual,
            max_depth: config.max_depth,
            min_leaf: config.min_leaf,
            nodes: Vec::new(),
        };
        grower.grow(sorted, 0);
        let mut tree = Tree { nodes: grower.nodes };

        let leaf_of: Vec<usize> = (0..n).map(|i| tree.leaf_index(|f| features.at(i, f))).collect();
        let mut sums = vec![0.0; tree.nodes.len()];
        let mut counts = vec![0usize; tree.nodes.len()];
        for (i, &leaf) in leaf_of.iter().enumerate() {
            sums[leaf] += residual[i];
            counts[leaf] += 1;
        }
        for (at, node) in tree.nodes.iter_mut().enumerate() {
            if let Node::Leaf(v) = node {
                *v = if counts[at] > 0 {
                    sums[at] / counts[at] as f64
                } else {
                    0.0
                };
            }
        }
        for (i, &leaf) in leaf_of.iter().enumerate() {
            if let Node::Leaf(v) = tree.nodes[leaf] {
                residual[i] -= config.learning_rate * v;
            }
        }
        trace.push(mse(&residual));
        stages.push((config.learning_rate, tree));
    }
    (FittedFunction::Ensemble { base, stages }, trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vec_pairs(xs: &[f64], ys: &[f64]) -> Vec<RegressionPair> {
        xs.iter()
            .zip(ys)
            .map(|(&x, &y)| RegressionPair {
                x: StatePoint::Vector(vec![x]),
                y,
            })
            .collect()
    }

    #[test]
    fn tabular_mean_averages_per_state() {
        let pairs = vec![
            RegressionPair {
                x: StatePoint::Index(0),
                y: 1.0,
            },
            RegressionPair {
                x: StatePoint::Index(0),
                y: 3.0,
            },
            RegressionPair {
                x: StatePoint::Index(2),
                y: -1.0,
            },
        ];
        let f = fit(&pairs, &RegressorConfig::tabular_mean(), 0).unwrap();
        assert_eq!(f.eval(StateRef::Index(0)), 2.0);
        assert_eq!(f.eval(StateRef::Index(1)), 0.0);
        assert_eq!(f.eval(StateRef::Index(2)), -1.0);
        assert_eq!(f.eval(StateRef::Index(50)), 0.0);
    }

    #[test]
    fn rejects_empty_and_mixed_input() {
        let cfg = RegressorConfig::default();
        assert!(matches!(fit(&[], &cfg, 0), Err(KbbError::EmptyInput)));
        let mixed = vec![
            RegressionPair {
                x: StatePoint::Index(0),
                y: 1.0,
            },
            RegressionPair {
                x: StatePoint::Vector(vec![0.5]),
                y: 1.0,
            },
        ];
        assert!(matches!(fit(&mixed, &cfg, 0), Err(KbbError::MixedStateKinds)));
    }

    #[test]
    fn constant_targets_are_reproduced() {
        let xs: Vec<f64> = (0..40).map(|i| (i as f64 * 0.37).sin()).collect();
        let pairs = vec_pairs(&xs, &vec![2.5; 40]);
        let f = fit(&pairs, &RegressorConfig::default(), 1).unwrap();
        for x in &xs {
            assert!((f.eval(StateRef::Vector(&[*x])) - 2.5).abs() < 1e-9);
        }
    }

    /// Exhaustive oracle: best single split by brute force over every
    /// candidate threshold, then the resulting SSE.
    fn best_stump_sse(xs: &[f64], r: &[f64], min_leaf: usize) -> f64 {
        let total: f64 = r.iter().map(|v| v * v).sum::<f64>() - r.iter().sum::<f64>().powi(2) / r.len() as f64;
        let mut best = total;
        let mut cands: Vec<f64> = xs.to_vec();
        cands.sort_by(f64::total_cmp);
        cands.dedup();
        for w in cands.windows(2) {
            let t = 0.5 * (w[0] + w[1]);
            let (mut l, mut rr) = (Vec::new(), Vec::new());
            for (x, v) in xs.iter().zip(r) {
                if *x <= t {
                    l.push(*v)
                } else {
                    rr.push(*v)
                }
            }
            if l.len() < min_leaf || rr.len() < min_leaf {
                continue;
            }
            let sse = |s: &[f64]| {
                let m = s.iter().sum::<f64>() / s.len() as f64;
                s.iter().map(|v| (v - m).powi(2)).sum::<f64>()
            };
            best = best.min(sse(&l) + sse(&rr));
        }
        best
    }

    #[test]
    fn step_function_stumps() {
        let xs: Vec<f64> = (0..500).map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / 500.0).collect();
        let ys: Vec<f64> = xs.iter().map(|&x| if x > 0.0 { 1.0 } else { 0.0 }).collect();
        let cfg = RegressorConfig {
            n_trees: 50,
            max_depth: 1,
            ..RegressorConfig::default()
        };
        let (f, trace) = fit_with_trace(&vec_pairs(&xs, &ys), &cfg, 3).unwrap();
        assert!(*trace.last().unwrap() <= 1e-3);

        // Stage 1 must match the exhaustive single-split optimum.
        let mean = ys.iter().sum::<f64>() / 500.0;
        let r0: Vec<f64> = ys.iter().map(|y| y - mean).collect();
        let oracle_sse = best_stump_sse(&xs, &r0, cfg.min_leaf);
        let FittedFunction::Ensemble { stages, .. } = &f else {
            panic!("expected an ensemble")
        };
        let tree = &stages[0].1;
        let sse: f64 = xs
            .iter()
            .zip(&r0)
            .map(|(x, r)| (r - tree.predict(|_| *x)).powi(2))
            .sum();
        assert!((sse - oracle_sse).abs() < 1e-9);
        assert!(tree.depth() <= 1);
    }

    #[test]
    fn ties_pick_lowest_feature() {
        // Two identical features: the split must use feature 0.
        let pairs: Vec<RegressionPair> = (0..20)
            .map(|i| RegressionPair {
                x: StatePoint::Vector(vec![i as f64, i as f64]),
                y: if i < 10 { 0.0 } else { 1.0 },
            })
            .collect();
        let cfg = RegressorConfig {
            n_trees: 1,
            max_depth: 1,
            min_leaf: 1,
            ..RegressorConfig::default()
        };
        let f = fit(&pairs, &cfg, 0).unwrap();
        let FittedFunction::Ensemble { stages, .. } = &f else {
            panic!()
        };
        assert!(matches!(
            stages[0].1.nodes[0],
            Node::Split { feature: 0, threshold, .. } if threshold == 9.5
        ));
    }

    #[test]
    fn blob_round_trip() {
        let xs: Vec<f64> = (0..60).map(|i| (i as f64 * 0.7).cos()).collect();
        let ys: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let f = fit(&vec_pairs(&xs, &ys), &RegressorConfig::default(), 2).unwrap();
        let mut w = Writer::default();
        f.encode(&mut w);
        let mut r = Reader::new(&w.buf);
        assert_eq!(FittedFunction::decode(&mut r).unwrap(), f);
        r.finish().unwrap();
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn boosting_mse_is_monotone_and_deterministic(
            pts in prop::collection::vec((-3.0f64..3.0, -3.0f64..3.0, -5.0f64..5.0), 10..80),
            depth in 1usize..4,
            subsample in prop_oneof![Just(1.0), 0.3f64..1.0],
            seed in any::<u64>(),
        ) {
            let pairs: Vec<RegressionPair> = pts
                .iter()
                .map(|&(a, b, y)| RegressionPair { x: StatePoint::Vector(vec![a, b]), y })
                .collect();
            let cfg = RegressorConfig {
                n_trees: 20,
                max_depth: depth,
                min_leaf: 2,
                subsample,
                ..RegressorConfig::default()
            };
            let (f, trace) = fit_with_trace(&pairs, &cfg, seed).unwrap();
            for w in trace.windows(2) {
                prop_assert!(w[1] <= w[0] * (1.0 + 1e-12) + 1e-15);
            }
            let (g, _) = fit_with_trace(&pairs, &cfg, seed).unwrap();
            prop_assert_eq!(f, g);
        }

        #[test]
        fn tabular_mean_is_least_squares_optimal(
            pts in prop::collection::vec((0usize..6, -5.0f64..5.0), 1..60),
            bump in -1.0f64..1.0,
            which in 0usize..6,
        ) {
            let pairs: Vec<RegressionPair> = pts
                .iter()
                .map(|&(i, y)| RegressionPair { x: StatePoint::Index(i), y })
                .collect();
            let f = fit(&pairs, &RegressorConfig::tabular_mean(), 0).unwrap();
            let sse = |g: &dyn Fn(usize) -> f64| {
                pts.iter().map(|&(i, y)| (y - g(i)).powi(2)).sum::<f64>()
            };
            let fitted = sse(&|i| f.eval(StateRef::Index(i)));
            let perturbed = sse(&|i| f.eval(StateRef::Index(i)) + if i == which { bump } else { 0.0 });
            prop_assert!(fitted <= perturbed + 1e-9);
        }
    }
}
