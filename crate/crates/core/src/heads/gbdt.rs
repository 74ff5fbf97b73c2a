//! Gradient-boosted regression trees with exact greedy split search.
//!
//! Rows are presorted once per feature. Each tree node owns a contiguous
//! segment of every per-feature ordering; splitting stably partitions those
//! segments, so every node scans its rows in sorted order without resorting.

use ndarray::ArrayView2;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{auto_pos_weight, sigmoid, HeadError, Result};

/// Hessians below this are clamped in Newton leaf steps.
const HESSIAN_FLOOR: f64 = 1e-12;
/// Splits must improve the node objective by more than this fraction of its
/// magnitude; smaller gains are rounding noise.
const MIN_RELATIVE_GAIN: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GbdtTask {
    Binary,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Growth {
    DepthLimited { max_depth: usize },
    /// Best-first expansion up to `num_leaves` leaves.
    LeafLimited { num_leaves: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Auto {
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PosWeight {
    Auto(Auto),
    Fixed(f64),
}

impl PosWeight {
    pub const AUTO: PosWeight = PosWeight::Auto(Auto::Auto);
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtConfig {
    pub task: GbdtTask,
    pub n_estimators: usize,
    pub learning_rate: f64,
    pub growth: Growth,
    pub feature_fraction: f64,
    pub pos_weight: PosWeight,
    pub min_samples_leaf: usize,
    pub seed: u64,
}

impl GbdtConfig {
    /// Depth-limited growth, max depth 30.
    pub fn depth_limited(task: GbdtTask) -> Self {
        Self {
            task,
            n_estimators: 500,
            learning_rate: 0.05,
            growth: Growth::DepthLimited { max_depth: 30 },
            feature_fraction: 1.0,
            pos_weight: PosWeight::AUTO,
            min_samples_leaf: 1,
            seed: 0,
        }
    }

    /// Best-first growth with 100 leaves and 0.8 of the features per tree.
    pub fn leaf_limited(task: GbdtTask) -> Self {
        Self {
            growth: Growth::LeafLimited { num_leaves: 100 },
            feature_fraction: 0.8,
            ..Self::depth_limited(task)
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HeadError::Config(m.to_owned()));
        if self.n_estimators == 0 {
            return bad("n_estimators must be at least 1");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return bad("learning_rate must lie in (0, 1]");
        }
        if !(self.feature_fraction > 0.0 && self.feature_fraction <= 1.0) {
            return bad("feature_fraction must lie in (0, 1]");
        }
        if self.min_samples_leaf == 0 {
            return bad("min_samples_leaf must be at least 1");
        }
        match self.growth {
            Growth::DepthLimited { max_depth: 0 } => return bad("max_depth must be at least 1"),
            Growth::LeafLimited { num_leaves } if num_leaves < 2 => {
                return bad("num_leaves must be at least 2")
            }
            _ => {}
        }
        if let PosWeight::Fixed(w) = self.pos_weight {
            if !(w >= 1.0 && w.is_finite()) {
                return bad("pos_weight must be a finite value >= 1");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        leaf_value: f64,
    },
}

/// Nodes of one tree; the root is node 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    /// Leaf value reached by `f`; `f[feature] <= threshold` goes left.
    pub fn leaf_value(&self, f: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match self.nodes[at] {
                Node::Leaf { leaf_value } => return leaf_value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if f[feature] <= threshold { left } else { right },
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], at: usize) -> usize {
            match nodes[at] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbdtModel {
    pub base_score: f64,
    pub trees: Vec<Tree>,
    pub config: GbdtConfig,
    pub feature_width: usize,
    /// Positive-class weight used in training (1 for regression).
    pub pos_weight: f64,
}

impl GbdtModel {
    /// `base_score + Σ lr·leaf`, before any link function.
    pub fn raw_score(&self, f: &[f64]) -> Result<f64> {
        if f.len() != self.feature_width {
            return Err(HeadError::Width {
                expected: self.feature_width,
                got: f.len(),
            });
        }
        let lr = self.config.learning_rate;
        Ok(self
            .trees
            .iter()
            .fold(self.base_score, |acc, t| acc + lr * t.leaf_value(f)))
    }

    /// The same model keeping only its first `n` trees.
    pub fn truncated(&self, n: usize) -> GbdtModel {
        GbdtModel {
            trees: self.trees[..n.min(self.trees.len())].to_vec(),
            ..self.clone()
        }
    }
}

/// Probability for binary models, the regression value otherwise.
pub fn predict_gbdt(model: &GbdtModel, f: &[f64]) -> Result<f64> {
    let raw = model.raw_score(f)?;
    Ok(match model.config.task {
        GbdtTask::Binary => sigmoid(raw),
        GbdtTask::Regression => raw,
    })
}

struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
    /// Rows going left within the node segment.
    n_left: usize,
}

struct Pending {
    node: usize,
    start: usize,
    end: usize,
    depth: usize,
    split: Option<Candidate>,
}

struct TreeBuilder<'x, 'g> {
    /// Column-major copy of the features, one contiguous run per feature.
    cols: &'x [f64],
    n_rows: usize,
    grad_hess: &'g [[f64; 2]],
    features: Vec<usize>,
    /// `order[j]` holds row ids sorted by `features[j]`, segmented by node.
    order: Vec<Vec<u32>>,
    goes_left: Vec<bool>,
    scratch: Vec<u32>,
    min_leaf: usize,
}

fn leaf_value(g: f64, h: f64) -> f64 {
    -g / h.max(HESSIAN_FLOOR)
}

fn score(g: f64, h: f64) -> f64 {
    g * g / h.max(HESSIAN_FLOOR)
}

impl TreeBuilder<'_, '_> {
    fn sums(&self, start: usize, end: usize) -> (f64, f64) {
        self.order[0][start..end].iter().fold((0.0, 0.0), |(g, h), &r| {
            let [gr, hr] = self.grad_hess[r as usize];
            (g + gr, h + hr)
        })
    }

    fn best_split(&self, start: usize, end: usize) -> Option<Candidate> {
        let n = end - start;
        if n < 2 * self.min_leaf {
            return None;
        }
        let (g_total, h_total) = self.sums(start, end);
        let parent = score(g_total, h_total);
        let mut best: Option<Candidate> = None;
        let mut best_sum = f64::NEG_INFINITY;
        // candidate i puts rows[..=i] on the left
        let first = self.min_leaf - 1;
        let last = n - self.min_leaf;
        for (j, &feature) in self.features.iter().enumerate() {
            let rows = &self.order[j][start..end];
            let col = &self.cols[feature * self.n_rows..(feature + 1) * self.n_rows];
            let (mut gl, mut hl) = (0.0, 0.0);
            for &r in &rows[..first] {
                let [g, h] = self.grad_hess[r as usize];
                gl += g;
                hl += h;
            }
            let mut next = col[rows[first] as usize];
            for i in first..last {
                let [g, h] = self.grad_hess[rows[i] as usize];
                gl += g;
                hl += h;
                let a = next;
                next = col[rows[i + 1] as usize];
                if a == next {
                    continue;
                }
                let sum = score(gl, hl) + score(g_total - gl, h_total - hl);
                if sum > best_sum {
                    best_sum = sum;
                    let mid = a / 2.0 + next / 2.0;
                    best = Some(Candidate {
                        gain: 0.0,
                        feature,
                        threshold: if mid < next { mid } else { a },
                        n_left: i + 1,
                    });
                }
            }
        }
        if let Some(c) = &mut best {
            c.gain = best_sum - parent;
        }
        best.filter(|c| c.gain > MIN_RELATIVE_GAIN * parent.max(f64::MIN_POSITIVE))
    }

    /// Stable partition of every ordering segment into left then right rows.
    fn partition(&mut self, start: usize, end: usize, split: &Candidate) {
        let j = self.features.iter().position(|&f| f == split.feature).unwrap();
        for (i, &r) in self.order[j][start..end].iter().enumerate() {
            self.goes_left[r as usize] = i < split.n_left;
        }
        // branch-free: every row is written to both sides and only the
        // matching cursor advances
        let scratch = &mut self.scratch[..end - start];
        for ord in &mut self.order {
            let mut w = start;
            let mut k = 0;
            for i in start..end {
                let r = ord[i];
                let left = self.goes_left[r as usize] as usize;
                ord[w] = r;
                scratch[k] = r;
                w += left;
                k += 1 - left;
            }
            ord[w..end].copy_from_slice(&scratch[..k]);
        }
    }

    fn build(mut self, growth: Growth) -> Tree {
        let n = self.order[0].len();
        let mut nodes = vec![Node::Leaf { leaf_value: 0.0 }];
        let mut open = vec![Pending {
            node: 0,
            start: 0,
            end: n,
            depth: 0,
            split: None,
        }];
        let (max_depth, max_leaves) = match growth {
            Growth::DepthLimited { max_depth } => (max_depth, usize::MAX),
            Growth::LeafLimited { num_leaves } => (usize::MAX, num_leaves),
        };
        let mut leaves = 1;
        for p in &mut open {
            p.split = self.best_split(p.start, p.end);
        }
        loop {
            if leaves >= max_leaves {
                break;
            }
            // best gain first; ties go to the earliest-created node
            let pick = open
                .iter()
                .enumerate()
                .filter(|(_, p)| p.split.is_some() && p.depth < max_depth)
                .fold(None::<(usize, f64)>, |acc, (i, p)| {
                    let g = p.split.as_ref().unwrap().gain;
                    match acc {
                        Some((_, bg)) if bg >= g => acc,
                        _ => Some((i, g)),
                    }
                });
            let Some((i, _)) = pick else { break };
            let p = open.swap_remove(i);
            let split = p.split.as_ref().unwrap();
            self.partition(p.start, p.end, split);
            let mid = p.start + split.n_left;
            let (left, right) = (nodes.len(), nodes.len() + 1);
            nodes.push(Node::Leaf { leaf_value: 0.0 });
            nodes.push(Node::Leaf { leaf_value: 0.0 });
            nodes[p.node] = Node::Split {
                feature: split.feature,
                threshold: split.threshold,
                left,
                right,
            };
            leaves += 1;
            for (node, start, end) in [(left, p.start, mid), (right, mid, p.end)] {
                let depth = p.depth + 1;
                let split = (depth < max_depth).then(|| self.best_split(start, end)).flatten();
                open.push(Pending {
                    node,
                    start,
                    end,
                    depth,
                    split,
                });
            }
            // keep creation order so tie-breaking by position is stable
            open.sort_by_key(|p| p.node);
        }
        for p in open {
            let (g, h) = self.sums(p.start, p.end);
            nodes[p.node] = Node::Leaf {
                leaf_value: leaf_value(g, h),
            };
        }
        Tree { nodes }
    }
}

fn presort(col: &[f64]) -> Vec<u32> {
    let mut pairs: Vec<(f64, u32)> = col.iter().copied().zip(0u32..).collect();
    pairs.sort_unstable_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    pairs.into_iter().map(|(_, i)| i).collect()
}

/// Weighted training loss at raw scores `f`: mean squared error for
/// regression, weighted log loss for binary.
pub fn training_loss(task: GbdtTask, f: &[f64], y: &[f64], weights: &[f64]) -> f64 {
    let n = f.len() as f64;
    match task {
        GbdtTask::Regression => f.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / n,
        GbdtTask::Binary => {
            f.iter()
                .zip(y)
                .zip(weights)
                .map(|((&s, &t), &w)| {
                    // log(1 + e^s) - t·s, stable for large |s|
                    let softplus = s.max(0.0) + (-s.abs()).exp().ln_1p();
                    w * (softplus - t * s)
                })
                .sum::<f64>()
                / n
        }
    }
}

/// Fit a boosted ensemble. Binary targets must be 0 or 1.
pub fn train_gbdt(x: ArrayView2<f64>, y: &[f64], cfg: &GbdtConfig) -> Result<GbdtModel> {
    cfg.validate()?;
    let (n, w) = x.dim();
    if n < 2 || w == 0 {
        return Err(HeadError::TooFewRows(n));
    }
    if y.len() != n {
        return Err(HeadError::Width {
            expected: n,
            got: y.len(),
        });
    }
    if let Some((row, _)) = x
        .outer_iter()
        .enumerate()
        .find(|(_, r)| r.iter().any(|v| !v.is_finite()))
    {
        return Err(HeadError::NonFinite(row));
    }
    if let Some(row) = y.iter().position(|v| !v.is_finite()) {
        return Err(HeadError::NonFinite(row));
    }

    let (pos_weight, weights, base_score) = match cfg.task {
        GbdtTask::Regression => (1.0, vec![1.0; n], y.iter().sum::<f64>() / n as f64),
        GbdtTask::Binary => {
            if let Some(row) = y.iter().position(|&v| v != 0.0 && v != 1.0) {
                return Err(HeadError::NonBinary(row));
            }
            let labels: Vec<bool> = y.iter().map(|&v| v == 1.0).collect();
            let pw = match cfg.pos_weight {
                PosWeight::Auto(_) => auto_pos_weight(&labels)?,
                PosWeight::Fixed(v) => {
                    auto_pos_weight(&labels)?;
                    v
                }
            };
            let weights: Vec<f64> = labels.iter().map(|&p| if p { pw } else { 1.0 }).collect();
            let n_pos = labels.iter().filter(|&&p| p).count() as f64;
            let n_neg = n as f64 - n_pos;
            (pw, weights, (pw * n_pos / n_neg).ln())
        }
    };

    let mut model = GbdtModel {
        base_score,
        trees: Vec::new(),
        config: cfg.clone(),
        feature_width: w,
        pos_weight,
    };
    if cfg.task == GbdtTask::Regression && y.iter().all(|&v| v == y[0]) {
        return Ok(model);
    }

    let cols: Vec<f64> = x.t().iter().copied().collect();
    let all_sorted: Vec<Vec<u32>> = cols.chunks_exact(n).map(presort).collect();
    let rows = x.as_standard_layout();
    let n_features = ((cfg.feature_fraction * w as f64).round() as usize).clamp(1, w);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut scores = vec![base_score; n];
    let mut grad_hess = vec![[0.0; 2]; n];

    for _ in 0..cfg.n_estimators {
        for i in 0..n {
            match cfg.task {
                GbdtTask::Regression => grad_hess[i] = [scores[i] - y[i], 1.0],
                GbdtTask::Binary => {
                    let p = sigmoid(scores[i]);
                    grad_hess[i] = [weights[i] * (p - y[i]), weights[i] * p * (1.0 - p)];
                }
            }
        }
        let features: Vec<usize> = if n_features == w {
            (0..w).collect()
        } else {
            let mut f = sample(&mut rng, w, n_features).into_vec();
            f.sort_unstable();
            f
        };
        let builder = TreeBuilder {
            cols: &cols,
            n_rows: n,
            grad_hess: &grad_hess,
            order: features.iter().map(|&f| all_sorted[f].clone()).collect(),
            features,
            goes_left: vec![false; n],
            scratch: vec![0; n],
            min_leaf: cfg.min_samples_leaf,
        };
        let tree = builder.build(cfg.growth);
        if tree.nodes.len() == 1 {
            // no split improves the objective; further trees would only
            // add rounding noise
            break;
        }
        for (score, row) in scores.iter_mut().zip(rows.outer_iter()) {
            *score += cfg.learning_rate * tree.leaf_value(row.as_slice().unwrap());
        }
        model.trees.push(tree);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::Rng;

    fn regression(n_estimators: usize, lr: f64) -> GbdtConfig {
        GbdtConfig {
            n_estimators,
            learning_rate: lr,
            ..GbdtConfig::depth_limited(GbdtTask::Regression)
        }
    }

    /// Independent traversal that walks the JSON form of the tree.
    fn oracle(model: &GbdtModel, f: &[f64]) -> f64 {
        let json = serde_json::to_value(model).unwrap();
        let mut total = json["base_score"].as_f64().unwrap();
        let lr = json["config"]["learning_rate"].as_f64().unwrap();
        for tree in json["trees"].as_array().unwrap() {
            let nodes = tree["nodes"].as_array().unwrap();
            let mut node = &nodes[0];
            while node.get("leaf_value").is_none() {
                let feat = node["feature"].as_u64().unwrap() as usize;
                let next = if f[feat] <= node["threshold"].as_f64().unwrap() {
                    node["left"].as_u64()
                } else {
                    node["right"].as_u64()
                };
                node = &nodes[next.unwrap() as usize];
            }
            total += lr * node["leaf_value"].as_f64().unwrap();
        }
        total
    }

    #[test]
    fn memorizes_distinct_points_with_one_tree() {
        let x = Array2::from_shape_fn((64, 1), |(i, _)| ((i * 37) % 64) as f64 * 0.1);
        let y: Vec<f64> = (0..64).map(|i| ((i * 13) % 7) as f64 - 3.0).collect();
        let m = train_gbdt(x.view(), &y, &regression(1, 1.0)).unwrap();
        assert_eq!(m.trees.len(), 1);
        for (row, t) in x.outer_iter().zip(&y) {
            assert_eq!(predict_gbdt(&m, row.as_slice().unwrap()).unwrap(), *t);
        }
    }

    #[test]
    fn stump_threshold_is_midpoint() {
        let x = Array2::from_shape_vec((4, 1), vec![0.0, 1.0, 3.0, 4.0]).unwrap();
        let y = [0.0, 0.0, 2.0, 2.0];
        let m = train_gbdt(x.view(), &y, &regression(1, 1.0)).unwrap();
        assert_eq!(
            m.trees[0].nodes[0],
            Node::Split {
                feature: 0,
                threshold: 2.0,
                left: 1,
                right: 2
            }
        );
        // routed left: base + lr·leaf_left
        assert_eq!(predict_gbdt(&m, &[0.5]).unwrap(), 1.0 + (-1.0));
    }

    #[test]
    fn adjacent_floats_use_lower_value() {
        let a = 1.0f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let x = Array2::from_shape_vec((2, 1), vec![a, b]).unwrap();
        let m = train_gbdt(x.view(), &[0.0, 1.0], &regression(1, 1.0)).unwrap();
        match m.trees[0].nodes[0] {
            Node::Split { threshold, .. } => assert_eq!(threshold, a),
            _ => panic!("expected a split"),
        }
        assert_eq!(predict_gbdt(&m, &[b]).unwrap(), 1.0);
    }

    #[test]
    fn ties_prefer_lowest_feature() {
        // features 0 and 2 separate the targets equally well
        let x = Array2::from_shape_vec(
            (4, 3),
            vec![0., 5., 0., 0., 1., 0., 1., 5., 1., 1., 1., 1.],
        )
        .unwrap();
        let m = train_gbdt(x.view(), &[0., 0., 1., 1.], &regression(1, 1.0)).unwrap();
        assert!(matches!(m.trees[0].nodes[0], Node::Split { feature: 0, .. }));
    }

    #[test]
    fn constant_target_gives_base_only() {
        let x = Array2::from_shape_fn((10, 2), |(i, j)| (i + j) as f64);
        let m = train_gbdt(x.view(), &[2.5; 10], &regression(10, 0.1)).unwrap();
        assert!(m.trees.is_empty());
        assert_eq!(predict_gbdt(&m, &[0.0, 0.0]).unwrap(), 2.5);
    }

    #[test]
    fn empty_binary_model_is_sigmoid_of_base() {
        let m = GbdtModel {
            base_score: 0.3,
            trees: vec![],
            config: GbdtConfig::depth_limited(GbdtTask::Binary),
            feature_width: 1,
            pos_weight: 1.0,
        };
        assert_eq!(predict_gbdt(&m, &[0.0]).unwrap(), sigmoid(0.3));
    }

    #[test]
    fn step_function_reaches_tiny_mse() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Array2::from_shape_fn((200, 2), |_| rng.gen_range(0.0..1.0));
        let y: Vec<f64> = x.column(0).iter().map(|&v| (v > 0.5) as u8 as f64).collect();
        let m = train_gbdt(x.view(), &y, &GbdtConfig::depth_limited(GbdtTask::Regression)).unwrap();
        let mse: f64 = x
            .outer_iter()
            .zip(&y)
            .map(|(r, t)| (predict_gbdt(&m, r.as_slice().unwrap()).unwrap() - t).powi(2))
            .sum::<f64>()
            / 200.0;
        assert!(mse < 1e-3, "{mse}");
    }

    #[test]
    fn regression_mse_is_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Array2::<f64>::from_shape_fn((150, 4), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<f64> = x
            .outer_iter()
            .map(|r| r[0].sin() + r[1] * r[2] + 0.1 * rng.gen_range(-1.0..1.0))
            .collect();
        let cfg = GbdtConfig {
            n_estimators: 60,
            ..GbdtConfig::leaf_limited(GbdtTask::Regression)
        };
        let m = train_gbdt(x.view(), &y, &cfg).unwrap();
        let mut last = f64::INFINITY;
        for t in 0..=m.trees.len() {
            let sub = m.truncated(t);
            let f: Vec<f64> = x
                .outer_iter()
                .map(|r| sub.raw_score(r.as_slice().unwrap()).unwrap())
                .collect();
            let mse = training_loss(GbdtTask::Regression, &f, &y, &[]);
            assert!(mse <= last, "tree {t}: {mse} > {last}");
            last = mse;
        }
    }

    #[test]
    fn min_samples_leaf_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = Array2::from_shape_fn((120, 3), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<f64> = x.column(1).iter().map(|v| v * 3.0).collect();
        let cfg = GbdtConfig {
            n_estimators: 5,
            min_samples_leaf: 7,
            ..GbdtConfig::depth_limited(GbdtTask::Regression)
        };
        let m = train_gbdt(x.view(), &y, &cfg).unwrap();
        for tree in &m.trees {
            let mut counts = vec![0usize; tree.nodes.len()];
            for row in x.outer_iter() {
                let f = row.as_slice().unwrap();
                let mut at = 0;
                loop {
                    counts[at] += 1;
                    match tree.nodes[at] {
                        Node::Leaf { .. } => break,
                        Node::Split {
                            feature,
                            threshold,
                            left,
                            right,
                        } => at = if f[feature] <= threshold { left } else { right },
                    }
                }
            }
            for (i, node) in tree.nodes.iter().enumerate() {
                if let Node::Split { left, right, .. } = node {
                    assert!(counts[*left] >= 7 && counts[*right] >= 7, "node {i}");
                }
            }
        }
    }

    #[test]
    fn leaf_limit_bounds_leaves() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let x = Array2::from_shape_fn((300, 3), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<f64> = x.outer_iter().map(|r| r[0] * r[1] + r[2]).collect();
        let cfg = GbdtConfig {
            n_estimators: 3,
            growth: Growth::LeafLimited { num_leaves: 9 },
            ..GbdtConfig::leaf_limited(GbdtTask::Regression)
        };
        let m = train_gbdt(x.view(), &y, &cfg).unwrap();
        assert!(m.trees.iter().all(|t| t.n_leaves() == 9));
        let deep = GbdtConfig {
            growth: Growth::DepthLimited { max_depth: 2 },
            ..cfg
        };
        let m = train_gbdt(x.view(), &y, &deep).unwrap();
        assert!(m.trees.iter().all(|t| t.depth() <= 2));
    }

    #[test]
    fn binary_imbalanced_recall_and_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut x = Array2::from_shape_fn((100, 5), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<f64> = (0..100).map(|i| (i % 20 == 0) as u8 as f64).collect();
        for (i, t) in y.iter().enumerate() {
            x[[i, 3]] = if *t == 1.0 { rng.gen_range(2.0..3.0) } else { rng.gen_range(-1.0..1.0) };
        }
        let cfg = GbdtConfig {
            n_estimators: 50,
            ..GbdtConfig::depth_limited(GbdtTask::Binary)
        };
        let m = train_gbdt(x.view(), &y, &cfg).unwrap();
        assert_eq!(m.pos_weight, 19.0);
        assert_eq!(m.base_score, 0.0);
        let weights: Vec<f64> = y.iter().map(|&t| if t == 1.0 { 19.0 } else { 1.0 }).collect();
        let score = |model: &GbdtModel| -> Vec<f64> {
            x.outer_iter()
                .map(|r| model.raw_score(r.as_slice().unwrap()).unwrap())
                .collect()
        };
        let before = training_loss(GbdtTask::Binary, &score(&m.truncated(0)), &y, &weights);
        let after = training_loss(GbdtTask::Binary, &score(&m), &y, &weights);
        assert!(after <= before);
        for (r, t) in x.outer_iter().zip(&y) {
            if *t == 1.0 {
                assert!(predict_gbdt(&m, r.as_slice().unwrap()).unwrap() >= 0.5);
            }
        }
    }

    #[test]
    fn binary_rejects_single_class_and_bad_labels() {
        let x = Array2::zeros((4, 1));
        let cfg = GbdtConfig::depth_limited(GbdtTask::Binary);
        assert!(matches!(train_gbdt(x.view(), &[0.0; 4], &cfg), Err(HeadError::SingleClass)));
        assert!(matches!(
            train_gbdt(x.view(), &[0.0, 1.0, 2.0, 0.0], &cfg),
            Err(HeadError::NonBinary(2))
        ));
    }

    #[test]
    fn non_finite_features_rejected() {
        let mut x = Array2::zeros((4, 2));
        x[[2, 1]] = f64::NAN;
        assert!(matches!(
            train_gbdt(x.view(), &[0., 1., 0., 1.], &regression(2, 0.5)),
            Err(HeadError::NonFinite(2))
        ));
    }

    #[test]
    fn width_mismatch_rejected() {
        let x = Array2::from_shape_fn((4, 2), |(i, j)| (i * j) as f64);
        let m = train_gbdt(x.view(), &[0., 1., 0., 1.], &regression(2, 0.5)).unwrap();
        assert!(matches!(
            predict_gbdt(&m, &[1.0]),
            Err(HeadError::Width { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn json_roundtrip_and_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = Array2::from_shape_fn((200, 6), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<f64> = x.outer_iter().map(|r| (r[0] + r[4] > 0.1) as u8 as f64).collect();
        let cfg = GbdtConfig {
            n_estimators: 40,
            seed: 2,
            ..GbdtConfig::leaf_limited(GbdtTask::Binary)
        };
        let m = train_gbdt(x.view(), &y, &cfg).unwrap();
        let text = serde_json::to_string(&m).unwrap();
        assert!(text.contains("\"leaf_value\""));
        let back: GbdtModel = serde_json::from_str(&text).unwrap();
        assert_eq!(back, m);
        for r in x.outer_iter() {
            let f = r.as_slice().unwrap();
            let raw = m.raw_score(f).unwrap();
            assert_eq!(raw.to_bits(), back.raw_score(f).unwrap().to_bits());
            assert!((raw - oracle(&m, f)).abs() <= 1e-9);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = Array2::from_shape_fn((80, 10), |_| rng.gen_range(-1.0..1.0));
        let y: Vec<f64> = x.outer_iter().map(|r| r[3] - r[7]).collect();
        let cfg = GbdtConfig {
            n_estimators: 10,
            ..GbdtConfig::leaf_limited(GbdtTask::Regression)
        };
        let a = train_gbdt(x.view(), &y, &cfg).unwrap();
        assert_eq!(a, train_gbdt(x.view(), &y, &cfg).unwrap());
        let b = train_gbdt(x.view(), &y, &GbdtConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(a.trees, b.trees);
    }

    #[test]
    fn pos_weight_serializes_as_auto_or_number() {
        assert_eq!(serde_json::to_string(&PosWeight::AUTO).unwrap(), "\"auto\"");
        assert_eq!(serde_json::to_string(&PosWeight::Fixed(3.0)).unwrap(), "3.0");
        let back: PosWeight = serde_json::from_str("\"auto\"").unwrap();
        assert_eq!(back, PosWeight::AUTO);
    }

    #[test]
    fn config_validation() {
        let ok = GbdtConfig::depth_limited(GbdtTask::Regression);
        assert!(ok.validate().is_ok());
        for bad in [
            GbdtConfig { n_estimators: 0, ..ok.clone() },
            GbdtConfig { learning_rate: 0.0, ..ok.clone() },
            GbdtConfig { learning_rate: 1.5, ..ok.clone() },
            GbdtConfig { feature_fraction: 0.0, ..ok.clone() },
            GbdtConfig { pos_weight: PosWeight::Fixed(0.5), ..ok.clone() },
            GbdtConfig { min_samples_leaf: 0, ..ok.clone() },
        ] {
            assert!(bad.validate().is_err(), "{bad:?}");
        }
    }
}
