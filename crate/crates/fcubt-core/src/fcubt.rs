//! Clustering by unsupervised binary trees.
//!
//! `grow` recursively splits the sample: each node gets its own MFPCA, a
//! BIC sweep over K = 1..K_max decides whether the node's scores look like a
//! mixture, and the 2-component model's posteriors route curves to the two
//! children. `join` re-merges terminal leaves whose union is judged
//! single-component, greedily by BIC. `predict` classifies new curves by
//! multiplying the 2-component posteriors along the tree and summing leaf
//! probabilities per merged cluster.
//!
//! All randomness flows from the seed in `FcubtConfig::em`; node and pair
//! fits derive their own streams from the node indices / leaf keys, so
//! results do not depend on traversal order.

use std::collections::{BTreeMap, VecDeque};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdata::{MultiFunData, SamplingGrid};
use crate::gmm::{self, EmConfig, GaussianMixture};
use crate::mfpca::{fit_mfpca, MfpcaModel, Truncation};
use crate::seed;

const NODE_TAG: u64 = 0x6e6f_6465;
const PAIR_TAG: u64 = 0x7061_6972;

/// Hyperparameters of the tree construction and joining steps.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FcubtConfig {
    /// Component policy of every node-local MFPCA (growing and joining).
    pub ncomp: Truncation,
    /// Largest mixture size tried in the BIC sweep.
    pub k_max: usize,
    /// Nodes with fewer members are never split.
    pub minsize: usize,
    pub em: EmConfig,
}

impl FcubtConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            ncomp: Truncation::Ratio(0.95),
            k_max: 5,
            minsize: 10,
            em: EmConfig::new(seed),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.minsize <= 2 {
            return Err(Error::InvalidInput(format!(
                "minsize must be larger than 2, got {}",
                self.minsize
            )));
        }
        if self.k_max < 2 {
            return Err(Error::InvalidInput(format!(
                "K_max must be at least 2, got {}",
                self.k_max
            )));
        }
        self.ncomp.validate()?;
        self.em.validate()
    }
}

/// One node of the (full binary) tree. Nodes are stored in an arena; a node
/// is terminal exactly when it has no children.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TreeNode {
    pub depth: u32,
    /// Position within the depth level, `0 <= pos < 2^depth`.
    pub pos: u64,
    /// Indices into the training sample, ascending.
    pub member_ids: Vec<usize>,
    /// Node-local eigenstructure (fitted only on nodes large enough to be
    /// considered for splitting).
    pub model: Option<MfpcaModel>,
    /// BIC-selected component count of the node's scores.
    pub k_hat: Option<usize>,
    /// The 2-component model that routed the split.
    pub splitter: Option<GaussianMixture>,
    /// Arena indices of the two children.
    pub children: Option<(usize, usize)>,
}

impl TreeNode {
    pub fn is_terminal(&self) -> bool {
        self.children.is_none()
    }

    /// Heap-style numbering, unique per (depth, pos).
    fn heap_id(&self) -> u64 {
        (1u64 << self.depth) + self.pos
    }
}

/// Irregularities met while growing (degenerate splits, failed node fits).
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TreeEvent {
    pub node: usize,
    pub description: String,
}

/// The maximal binary tree produced by [`grow`].
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Tree {
    /// Arena in breadth-first order; `nodes[0]` is the root.
    pub nodes: Vec<TreeNode>,
    pub events: Vec<TreeEvent>,
}

impl Tree {
    /// Arena indices of the terminal nodes, ordered by (depth, pos).
    pub fn leaves(&self) -> Vec<usize> {
        let mut out: Vec<usize> = (0..self.nodes.len())
            .filter(|&i| self.nodes[i].is_terminal())
            .collect();
        out.sort_by_key(|&i| (self.nodes[i].depth, self.nodes[i].pos));
        out
    }

    pub fn depth(&self) -> u32 {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }
}

/// Final clustering: which leaves were merged, and the per-curve labels.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Partition {
    /// Each cluster is the sorted list of leaf arena indices merged into it.
    pub clusters: Vec<Vec<usize>>,
    /// Cluster index of every training curve.
    pub labels: Vec<usize>,
}

impl Partition {
    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }
}

/// Classification of new curves.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub labels: Vec<usize>,
    /// N x n_clusters; each row sums to one.
    pub probabilities: DMatrix<f64>,
}

fn node_em_config(base: &EmConfig, heap_id: u64) -> EmConfig {
    EmConfig {
        seed: seed::derive2(base.seed, NODE_TAG, heap_id),
        ..*base
    }
}

/// Grow the maximal tree by recursive MFPCA + BIC splitting.
pub fn grow(data: &MultiFunData, config: &FcubtConfig) -> Result<Tree> {
    config.validate()?;
    let n = data.n_curves();
    let mut nodes = vec![TreeNode {
        depth: 0,
        pos: 0,
        member_ids: (0..n).collect(),
        model: None,
        k_hat: None,
        splitter: None,
        children: None,
    }];
    let mut events = Vec::new();
    let mut queue = VecDeque::from([0usize]);

    while let Some(idx) = queue.pop_front() {
        if nodes[idx].member_ids.len() < config.minsize {
            continue; // terminal by size
        }
        if nodes[idx].depth >= 60 {
            events.push(TreeEvent {
                node: idx,
                description: "depth cap reached".into(),
            });
            continue;
        }
        let ids = nodes[idx].member_ids.clone();
        let subset = data.subset(&ids);
        let em = node_em_config(&config.em, nodes[idx].heap_id());
        let outcome = fit_mfpca(&subset, config.ncomp)
            .and_then(|fit| gmm::select_k(&fit.scores, config.k_max, &em).map(|sel| (fit, sel)));
        let (fit, selection) = match outcome {
            Ok(v) => v,
            Err(e) => {
                events.push(TreeEvent {
                    node: idx,
                    description: format!("node fit failed, node kept terminal: {e}"),
                });
                continue;
            }
        };
        nodes[idx].model = Some(fit.model);
        nodes[idx].k_hat = Some(selection.k_hat);
        if selection.k_hat == 1 {
            continue; // terminal by the mixture test
        }
        let Some(two) = selection.fit_for(2) else {
            events.push(TreeEvent {
                node: idx,
                description: "2-component model unavailable, node kept terminal".into(),
            });
            continue;
        };
        // left child: posterior of the first component at least 1/2
        let mut left = Vec::new();
        let mut right = Vec::new();
        for (row, &id) in ids.iter().enumerate() {
            if two.responsibilities[(row, 0)] >= 0.5 {
                left.push(id);
            } else {
                right.push(id);
            }
        }
        if left.is_empty() || right.is_empty() {
            events.push(TreeEvent {
                node: idx,
                description: "degenerate split left a child empty, node kept terminal".into(),
            });
            continue;
        }
        nodes[idx].splitter = Some(two.mixture.clone());
        let (depth, pos) = (nodes[idx].depth, nodes[idx].pos);
        for (offset, members) in [(0u64, left), (1u64, right)] {
            let child = TreeNode {
                depth: depth + 1,
                pos: 2 * pos + offset,
                member_ids: members,
                model: None,
                k_hat: None,
                splitter: None,
                children: None,
            };
            nodes.push(child);
            queue.push_back(nodes.len() - 1);
        }
        let right_idx = nodes.len() - 1;
        nodes[idx].children = Some((right_idx - 1, right_idx));
    }
    Ok(Tree { nodes, events })
}

/// A joinable vertex during the agglomerative step.
struct Group {
    /// Leaf arena indices merged into this vertex, ascending.
    leaves: Vec<usize>,
    /// Sorted heap ids of those leaves; canonical identity for seeding and
    /// for deterministic ordering.
    key: Vec<u64>,
    /// Training-curve members, ascending.
    members: Vec<usize>,
}

fn pair_seed(base: u64, a: &Group, b: &Group) -> u64 {
    let (first, second) = if a.key <= b.key { (a, b) } else { (b, a) };
    let salt = seed::fold_ids(
        std::iter::once(PAIR_TAG)
            .chain(first.key.iter().copied())
            .chain(std::iter::once(0))
            .chain(second.key.iter().copied()),
    );
    seed::derive(base, salt)
}

/// BIC of the single-component model on the union, when the union is judged
/// single-component; `None` otherwise (including fit failures).
fn evaluate_pair(
    data: &MultiFunData,
    a: &Group,
    b: &Group,
    config: &FcubtConfig,
) -> Option<f64> {
    let mut members: Vec<usize> = a.members.iter().chain(b.members.iter()).copied().collect();
    members.sort_unstable();
    let subset = data.subset(&members);
    let em = EmConfig {
        seed: pair_seed(config.em.seed, a, b),
        ..config.em
    };
    let outcome = fit_mfpca(&subset, config.ncomp)
        .and_then(|fit| gmm::select_k(&fit.scores, config.k_max, &em));
    match outcome {
        Ok(sel) if sel.k_hat == 1 => sel
            .bic
            .first()
            .and_then(|b| *b),
        _ => None,
    }
}

/// Merge terminal leaves whose unions look single-component, most confident
/// (largest BIC) first, until no pair qualifies.
pub fn join(tree: &Tree, data: &MultiFunData, config: &FcubtConfig) -> Result<Partition> {
    config.validate()?;
    let leaf_sets: Vec<(usize, u64, Vec<usize>)> = tree
        .leaves()
        .into_iter()
        .map(|i| (i, tree.nodes[i].heap_id(), tree.nodes[i].member_ids.clone()))
        .collect();
    join_leaf_sets(data, leaf_sets, config)
}

/// Core of the joining step, driven by (leaf id, key, member set) triples.
fn join_leaf_sets(
    data: &MultiFunData,
    leaf_sets: Vec<(usize, u64, Vec<usize>)>,
    config: &FcubtConfig,
) -> Result<Partition> {
    let mut groups: Vec<Option<Group>> = leaf_sets
        .into_iter()
        .map(|(leaf, key, mut members)| {
            members.sort_unstable();
            Some(Group {
                leaves: vec![leaf],
                key: vec![key],
                members,
            })
        })
        .collect();

    // joinable edges only, keyed by group arena ids (creation order)
    let mut edges: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let (a, b) = (groups[i].as_ref().unwrap(), groups[j].as_ref().unwrap());
            if let Some(bic) = evaluate_pair(data, a, b, config) {
                edges.insert((i, j), bic);
            }
        }
    }

    let mut n_live = groups.iter().filter(|g| g.is_some()).count();
    while n_live > 1 {
        // the best edge; BTreeMap order makes ties deterministic
        let Some((&(i, j), _)) = edges
            .iter()
            .max_by(|(ka, va), (kb, vb)| va.partial_cmp(vb).unwrap().then(kb.cmp(ka)))
        else {
            break;
        };
        let a = groups[i].take().unwrap();
        let b = groups[j].take().unwrap();
        edges.retain(|&(x, y), _| x != i && y != i && x != j && y != j);

        let mut leaves = a.leaves;
        leaves.extend(b.leaves);
        leaves.sort_unstable();
        let mut key = a.key;
        key.extend(b.key);
        key.sort_unstable();
        let mut members = a.members;
        members.extend(b.members);
        members.sort_unstable();
        let merged = Group {
            leaves,
            key,
            members,
        };

        let new_id = groups.len();
        for (other_id, other) in groups.iter().enumerate() {
            if let Some(other) = other {
                if let Some(bic) = evaluate_pair(data, &merged, other, config) {
                    edges.insert((other_id.min(new_id), other_id.max(new_id)), bic);
                }
            }
        }
        groups.push(Some(merged));
        n_live -= 1;
    }

    // stable cluster ordering: by canonical leaf key
    let mut finals: Vec<Group> = groups.into_iter().flatten().collect();
    finals.sort_by(|a, b| a.key.cmp(&b.key));

    let n = data.n_curves();
    let mut labels = vec![usize::MAX; n];
    let mut clusters = Vec::with_capacity(finals.len());
    for (c, g) in finals.iter().enumerate() {
        for &m in &g.members {
            labels[m] = c;
        }
        clusters.push(g.leaves.clone());
    }
    if labels.contains(&usize::MAX) {
        return Err(Error::InvalidInput(
            "leaf member sets do not cover the training sample".into(),
        ));
    }
    Ok(Partition { clusters, labels })
}

/// Classify new curves by probabilistic descent of the tree.
///
/// Every curve receives one probability per cluster (leaf probabilities are
/// products of the 2-component posteriors along the path; cluster
/// probabilities sum the merged leaves) and the argmax label, ties going to
/// the lowest cluster id.
pub fn predict(
    tree: &Tree,
    partition: &Partition,
    new_data: &MultiFunData,
) -> Result<Prediction> {
    let n = new_data.n_curves();
    let n_clusters = partition.n_clusters();
    let mut probabilities = DMatrix::zeros(n, n_clusters);
    let mut labels = Vec::with_capacity(n);

    // leaf -> cluster map
    let mut cluster_of = BTreeMap::new();
    for (c, leaves) in partition.clusters.iter().enumerate() {
        for &l in leaves {
            cluster_of.insert(l, c);
        }
    }

    for row in 0..n {
        let curve = new_data.curve(row);
        let mut node_prob = vec![0.0; tree.nodes.len()];
        node_prob[0] = 1.0;
        // the arena is in breadth-first order: parents come before children
        for idx in 0..tree.nodes.len() {
            let Some((left, right)) = tree.nodes[idx].children else {
                continue;
            };
            let model = tree.nodes[idx].model.as_ref().ok_or_else(|| {
                Error::InvalidInput(format!("split node {idx} carries no model"))
            })?;
            let splitter = tree.nodes[idx].splitter.as_ref().ok_or_else(|| {
                Error::InvalidInput(format!("split node {idx} carries no splitter"))
            })?;
            let scores = model.project_curve(&curve)?;
            let post = splitter.posterior(&scores)?;
            node_prob[left] = node_prob[idx] * post[0];
            node_prob[right] = node_prob[idx] * post[1];
        }
        for (&leaf, &c) in &cluster_of {
            probabilities[(row, c)] += node_prob[leaf];
        }
        let mut best = 0;
        for c in 1..n_clusters {
            if probabilities[(row, c)] > probabilities[(row, best)] {
                best = c;
            }
        }
        labels.push(best);
    }

    Ok(Prediction {
        labels,
        probabilities,
    })
}

/// A grown tree with its joined partition and the training grids.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct FcubtFit {
    pub tree: Tree,
    pub partition: Partition,
    pub grids: Vec<SamplingGrid>,
}

impl FcubtFit {
    pub fn n_clusters(&self) -> usize {
        self.partition.n_clusters()
    }

    /// Classify new curves sampled on the training grids.
    pub fn predict(&self, new_data: &MultiFunData) -> Result<Prediction> {
        let grids = new_data.grids();
        if grids != self.grids {
            return Err(Error::GridMismatch(
                "prediction input is not sampled on the training grids".into(),
            ));
        }
        predict(&self.tree, &self.partition, new_data)
    }
}

/// Grow and join in one call.
pub fn fit(data: &MultiFunData, config: &FcubtConfig) -> Result<FcubtFit> {
    let tree = grow(data, config)?;
    let partition = join(&tree, data, config)?;
    Ok(FcubtFit {
        grids: data.grids(),
        tree,
        partition,
    })
}
