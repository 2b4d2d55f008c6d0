//! A single regression tree with greedy axis-aligned splits scored by
//! polynomial residual sums of squares on a fixed projection.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::polyfit::PowerSums;
use super::ForestParams;

/// Maximum number of candidate thresholds per coordinate per node; when the
/// node has more unique values, thresholds are taken at evenly spaced ranks.
const MAX_THRESHOLDS: usize = 256;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub(crate) enum Node {
    Internal {
        feature: usize,
        threshold: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        /// Distinct training-sample indices in this leaf (in-bag only), sorted.
        indices: Vec<u32>,
        /// Mean fit target over the in-bag multiset (bootstrap multiplicity).
        value: f64,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub(crate) struct Tree {
    pub(crate) nodes: Vec<Node>,
    /// Whether training sample i appeared in this tree's bootstrap bag.
    pub(crate) in_bag: Vec<bool>,
}

/// Everything a tree needs to grow; shared across all trees of a forest.
pub(crate) struct GrowContext<'a> {
    /// Row-major n x d covariates.
    pub xs: &'a [f64],
    pub n: usize,
    pub d: usize,
    /// Fit targets (pilot predictions or raw responses).
    pub y: &'a [f64],
    /// Projection v^T x per sample; ignored when `degree == 0`.
    pub t: &'a [f64],
    /// Polynomial degree of the child fits used as split impurity.
    pub degree: usize,
    pub params: &'a ForestParams,
}

impl Tree {
    pub(crate) fn grow(ctx: &GrowContext<'_>, rng: &mut ChaCha8Rng) -> Tree {
        let n = ctx.n;
        let bag: Vec<u32> = if ctx.params.bootstrap {
            (0..n).map(|_| rng.gen_range(0..n) as u32).collect()
        } else {
            (0..n as u32).collect()
        };
        let mut in_bag = vec![false; n];
        for &i in &bag {
            in_bag[i as usize] = true;
        }

        let mut nodes = Vec::new();
        nodes.push(Node::Leaf {
            indices: Vec::new(),
            value: 0.0,
        });
        // Work items: (node slot, member multiset, depth).
        let mut stack: Vec<(usize, Vec<u32>, usize)> = vec![(0, bag, 0)];
        while let Some((slot, members, depth)) = stack.pop() {
            match try_split(ctx, &members, depth, rng) {
                Some((feature, threshold)) => {
                    let (left_members, right_members): (Vec<u32>, Vec<u32>) =
                        members.iter().partition(|&&i| {
                            ctx.xs[i as usize * ctx.d + feature] <= threshold
                        });
                    let left = nodes.len() as u32;
                    let right = left + 1;
                    nodes.push(Node::Leaf {
                        indices: Vec::new(),
                        value: 0.0,
                    });
                    nodes.push(Node::Leaf {
                        indices: Vec::new(),
                        value: 0.0,
                    });
                    nodes[slot] = Node::Internal {
                        feature,
                        threshold,
                        left,
                        right,
                    };
                    // Push right first so the left subtree is grown first;
                    // keeps RNG consumption in a fixed depth-first order.
                    stack.push((right as usize, right_members, depth + 1));
                    stack.push((left as usize, left_members, depth + 1));
                }
                None => {
                    let value = members
                        .iter()
                        .map(|&i| ctx.y[i as usize])
                        .sum::<f64>()
                        / members.len() as f64;
                    let mut indices = members.clone();
                    indices.sort_unstable();
                    indices.dedup();
                    nodes[slot] = Node::Leaf { indices, value };
                }
            }
        }
        Tree { nodes, in_bag }
    }

    /// Index of the leaf node the point falls into.
    pub(crate) fn leaf_id(&self, point: &[f64]) -> usize {
        let mut node = 0usize;
        loop {
            match &self.nodes[node] {
                Node::Internal {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    node = if point[*feature] <= *threshold {
                        *left as usize
                    } else {
                        *right as usize
                    };
                }
                Node::Leaf { .. } => return node,
            }
        }
    }

    pub(crate) fn leaf(&self, id: usize) -> (&[u32], f64) {
        match &self.nodes[id] {
            Node::Leaf { indices, value } => (indices, *value),
            Node::Internal { .. } => unreachable!("leaf_id always lands on a leaf"),
        }
    }
}

/// Searches for the best split of `members`; returns None when the node
/// stays a leaf (too small, too deep, no impurity decrease above tolerance).
fn try_split(
    ctx: &GrowContext<'_>,
    members: &[u32],
    depth: usize,
    rng: &mut ChaCha8Rng,
) -> Option<(usize, f64)> {
    let msl = ctx.params.min_samples_leaf;
    if members.len() < 2 * msl {
        return None;
    }
    if let Some(max_depth) = ctx.params.max_depth {
        if depth >= max_depth {
            return None;
        }
    }

    // Center and scale the projection over this node for conditioning.
    let (shift, scale) = if ctx.degree > 0 {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &i in members {
            let t = ctx.t[i as usize];
            lo = lo.min(t);
            hi = hi.max(t);
        }
        let half = 0.5 * (hi - lo);
        (0.5 * (hi + lo), if half > 0.0 { half } else { 1.0 })
    } else {
        (0.0, 1.0)
    };
    let proj = |i: u32| -> f64 {
        if ctx.degree == 0 {
            0.0
        } else {
            (ctx.t[i as usize] - shift) / scale
        }
    };

    let mut total = PowerSums::new(ctx.degree);
    for &i in members {
        total.add(proj(i), ctx.y[i as usize]);
    }
    let parent_rss = total.rss();

    let mtry = ctx.params.mtry.unwrap_or(ctx.d).min(ctx.d).max(1);
    let features = sample_features(ctx.d, mtry, rng);

    let mut best: Option<(f64, usize, f64)> = None; // (impurity, feature, threshold)
    let mut sorted: Vec<u32> = Vec::with_capacity(members.len());
    for feature in features {
        sorted.clear();
        sorted.extend_from_slice(members);
        sorted.sort_unstable_by(|&a, &b| {
            let va = ctx.xs[a as usize * ctx.d + feature];
            let vb = ctx.xs[b as usize * ctx.d + feature];
            va.partial_cmp(&vb).unwrap().then(a.cmp(&b))
        });
        let value_at = |pos: usize| ctx.xs[sorted[pos] as usize * ctx.d + feature];

        // Boundaries between distinct values, as "left part has pos+1 items".
        let mut boundaries: Vec<usize> = Vec::new();
        for pos in 0..sorted.len() - 1 {
            if value_at(pos) < value_at(pos + 1) {
                boundaries.push(pos);
            }
        }
        if boundaries.is_empty() {
            continue;
        }
        let selected: Vec<usize> = if boundaries.len() <= MAX_THRESHOLDS {
            boundaries
        } else {
            let u = boundaries.len();
            (1..=MAX_THRESHOLDS)
                .map(|r| boundaries[r * (u - 1) / (MAX_THRESHOLDS + 1)])
                .collect()
        };

        let mut left = PowerSums::new(ctx.degree);
        let mut right = PowerSums::new(ctx.degree);
        let mut next_sel = 0usize;
        for pos in 0..sorted.len() - 1 {
            left.add(proj(sorted[pos]), ctx.y[sorted[pos] as usize]);
            if next_sel < selected.len() && selected[next_sel] == pos {
                next_sel += 1;
                let n_left = left.count();
                let n_right = sorted.len() - n_left;
                if n_left < msl || n_right < msl {
                    continue;
                }
                total.complement_into(&left, &mut right);
                let impurity = left.rss() + right.rss();
                if best.is_none_or(|(b, _, _)| impurity < b) {
                    let threshold = 0.5 * (value_at(pos) + value_at(pos + 1));
                    best = Some((impurity, feature, threshold));
                }
            }
        }
    }

    match best {
        Some((impurity, feature, threshold))
            if parent_rss - impurity > ctx.params.impurity_tol =>
        {
            Some((feature, threshold))
        }
        _ => None,
    }
}

/// Draws `mtry` distinct feature indices (partial Fisher-Yates).
fn sample_features(d: usize, mtry: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    if mtry >= d {
        return (0..d).collect();
    }
    let mut pool: Vec<usize> = (0..d).collect();
    for k in 0..mtry {
        let j = rng.gen_range(k..d);
        pool.swap(k, j);
    }
    pool.truncate(mtry);
    pool
}
