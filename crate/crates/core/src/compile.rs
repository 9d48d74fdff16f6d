//! Flattened tree ensembles with iterative inference.
//!
//! All trees live in one `Vec<NodeRecord>`, each tree laid out depth-first:
//! a split's left child is the next record and its right child is at
//! `next`, so child offsets always increase toward the leaves.
//!
//! A leaf sets [`LEAF_FLAG`] in `feature`, points `next` at itself and
//! stores a NaN threshold whose low 32 payload bits are the offset of its
//! values in the shared `leaf_values` array. Since every comparison with NaN
//! is false, one more step from a leaf stays on that leaf, which lets
//! [`LANES`] trees advance together without branches for as many steps as
//! the deepest of them needs. Identical leaf value vectors are stored once.
//!
//! Serialized `CMPL` section body:
//!
//! ```text
//! f64          learning_rate
//! u32 + f64s   base_score
//! u32 + u32s   tree_roots
//! u32          node count, then per node: f64 threshold, u32 feature, u32 next
//! u32 + f64s   leaf_values
//! ```

use std::collections::HashMap;

use thiserror::Error;

use crate::dataset::NormalizationParams;
use crate::models::persist::{self, Preamble, Reader, Writer};
use crate::models::{
    softmax_in_place, EnsembleKind, InferenceModel, ModelError, Prediction, TreeEnsembleModel, TreeNode,
};

pub const LEAF_FLAG: u32 = 1 << 31;
const FEATURE_MASK: u32 = !LEAF_FLAG;
/// High bits of a leaf threshold: a quiet NaN with a zero payload.
const LEAF_NAN: u64 = 0x7FF8_0000_0000_0000;

/// Trees traversed side by side.
pub const LANES: usize = 8;

/// Largest leaf distribution deviation from a total of 1 accepted for forests.
const DISTRIBUTION_TOLERANCE: f64 = 1e-9;

/// Feature vectors up to this width are normalized on the stack.
const STACK_FEATURES: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum CompileError {
    #[error("malformed tree {tree}: {reason}")]
    MalformedTree { tree: usize, reason: String },
    #[error("ensemble has no trees")]
    Empty,
    #[error("ensemble has {0} nodes, more than the 2^31 the node format can address")]
    TooLarge(usize),
}

/// Normalized feature lookup by a record's feature field.
trait Row {
    fn value(&self, feature: u32) -> f64;
}

impl Row for [f64] {
    #[inline(always)]
    fn value(&self, feature: u32) -> f64 {
        self[(feature & FEATURE_MASK) as usize]
    }
}

/// Narrow rows padded to a power of two, indexed without a bounds check.
impl Row for [f64; STACK_FEATURES] {
    #[inline(always)]
    fn value(&self, feature: u32) -> f64 {
        self[feature as usize % STACK_FEATURES]
    }
}

/// Fixed-width node record, 16 bytes. Equality compares threshold bits.
#[derive(Debug, Clone, Copy)]
#[repr(C)]
pub struct NodeRecord {
    pub threshold: f64,
    /// Split feature index, or [`LEAF_FLAG`] for leaves.
    pub feature: u32,
    /// Right child offset for splits, own offset for leaves.
    pub next: u32,
}

impl PartialEq for NodeRecord {
    fn eq(&self, other: &Self) -> bool {
        self.threshold.to_bits() == other.threshold.to_bits()
            && self.feature == other.feature
            && self.next == other.next
    }
}

impl NodeRecord {
    fn leaf(at: usize, values_offset: u32) -> Self {
        Self {
            threshold: f64::from_bits(LEAF_NAN | values_offset as u64),
            feature: LEAF_FLAG,
            next: at as u32,
        }
    }

    #[inline]
    pub fn is_leaf(&self) -> bool {
        self.feature & LEAF_FLAG != 0
    }

    /// Offset of a leaf's values in `leaf_values`.
    #[inline]
    pub fn leaf_offset(&self) -> usize {
        (self.threshold.to_bits() & 0xFFFF_FFFF) as usize
    }

    /// Next record for normalized input `z`; a leaf maps to itself.
    #[inline(always)]
    fn step<R: Row + ?Sized>(&self, at: usize, z: &R) -> usize {
        let left = z.value(self.feature) <= self.threshold;
        std::hint::select_unpredictable(left, at + 1, self.next as usize)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompiledEnsemble {
    kind: EnsembleKind,
    n_classes: usize,
    n_features: usize,
    learning_rate: f64,
    base_score: Vec<f64>,
    nodes: Vec<NodeRecord>,
    leaf_values: Vec<f64>,
    tree_roots: Vec<u32>,
    tree_depths: Vec<u32>,
    /// Deepest tree in each full group of [`LANES`] trees.
    group_depths: Vec<u32>,
    normalization: NormalizationParams,
    feature_names: Vec<String>,
}

fn group_depths(tree_depths: &[u32]) -> Vec<u32> {
    tree_depths
        .chunks_exact(LANES)
        .map(|g| g.iter().copied().max().unwrap_or(0))
        .collect()
}

pub fn compile_ensemble(model: &TreeEnsembleModel) -> Result<CompiledEnsemble, CompileError> {
    if model.trees.is_empty() && !model.kind.is_boosted() {
        return Err(CompileError::Empty);
    }
    let total = model.node_count();
    if total >= LEAF_FLAG as usize {
        return Err(CompileError::TooLarge(total));
    }
    let width = leaf_width(model.kind, model.n_classes);
    let mut builder = Builder {
        kind: model.kind,
        width,
        n_features: model.n_features,
        nodes: Vec::with_capacity(total),
        leaf_values: Vec::new(),
        leaf_index: HashMap::new(),
    };
    let mut tree_roots = Vec::with_capacity(model.trees.len());
    let mut tree_depths = Vec::with_capacity(model.trees.len());
    for (t, tree) in model.trees.iter().enumerate() {
        tree_roots.push(builder.nodes.len() as u32);
        builder
            .emit(tree)
            .map_err(|reason| CompileError::MalformedTree { tree: t, reason })?;
        tree_depths.push(tree.depth() as u32);
    }
    Ok(CompiledEnsemble {
        kind: model.kind,
        n_classes: model.n_classes,
        n_features: model.n_features,
        learning_rate: model.learning_rate,
        base_score: model.base_score.clone(),
        nodes: builder.nodes,
        leaf_values: builder.leaf_values,
        tree_roots,
        group_depths: group_depths(&tree_depths),
        tree_depths,
        normalization: model.normalization.clone(),
        feature_names: model.feature_names.clone(),
    })
}

fn leaf_width(kind: EnsembleKind, n_classes: usize) -> usize {
    if kind.is_boosted() {
        1
    } else {
        n_classes
    }
}

struct Builder {
    kind: EnsembleKind,
    width: usize,
    n_features: usize,
    nodes: Vec<NodeRecord>,
    leaf_values: Vec<f64>,
    leaf_index: HashMap<Vec<u64>, u32>,
}

impl Builder {
    fn emit(&mut self, node: &TreeNode) -> Result<(), String> {
        match node {
            TreeNode::Leaf { values } => {
                if values.len() != self.width {
                    return Err(format!("leaf has {} values, expected {}", values.len(), self.width));
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err("leaf value is not finite".into());
                }
                if !self.kind.is_boosted() {
                    let sum: f64 = values.iter().sum();
                    if (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE || values.iter().any(|&v| v < 0.0) {
                        return Err(format!("leaf distribution sums to {sum}"));
                    }
                }
                let key: Vec<u64> = values.iter().map(|v| v.to_bits()).collect();
                let base = match self.leaf_index.get(&key) {
                    Some(&base) => base,
                    None => {
                        let base = self.leaf_values.len() as u32;
                        self.leaf_values.extend_from_slice(values);
                        self.leaf_index.insert(key, base);
                        base
                    }
                };
                let at = self.nodes.len();
                self.nodes.push(NodeRecord::leaf(at, base));
            }
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                if *feature >= self.n_features {
                    return Err(format!("split on feature {feature} of {}", self.n_features));
                }
                if threshold.is_nan() {
                    return Err("split threshold is NaN".into());
                }
                let at = self.nodes.len();
                self.nodes.push(NodeRecord {
                    threshold: *threshold,
                    feature: *feature as u32,
                    next: 0,
                });
                self.emit(left)?;
                self.nodes[at].next = self.nodes.len() as u32;
                self.emit(right)?;
            }
        }
        Ok(())
    }
}

impl CompiledEnsemble {
    pub fn kind(&self) -> EnsembleKind {
        self.kind
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn normalization(&self) -> &NormalizationParams {
        &self.normalization
    }

    pub fn nodes(&self) -> &[NodeRecord] {
        &self.nodes
    }

    pub fn leaf_values(&self) -> &[f64] {
        &self.leaf_values
    }

    pub fn tree_roots(&self) -> &[u32] {
        &self.tree_roots
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_trees(&self) -> usize {
        self.tree_roots.len()
    }

    /// Deepest tree, counted in splits.
    pub fn max_depth(&self) -> usize {
        self.tree_depths.iter().copied().max().unwrap_or(0) as usize
    }

    pub fn tree_depths(&self) -> &[u32] {
        &self.tree_depths
    }

    /// Offset of the leaf values reached from `root`, and the number of
    /// splits visited on the way.
    #[inline]
    fn walk<R: Row + ?Sized>(&self, root: u32, z: &R) -> (usize, usize) {
        let mut i = root as usize;
        let mut steps = 0;
        loop {
            let node = &self.nodes[i];
            if node.is_leaf() {
                return (node.leaf_offset(), steps);
            }
            steps += 1;
            i = node.step(i, z);
        }
    }

    /// Calls `f(tree, leaf_offset)` for every tree in order. Full groups of
    /// [`LANES`] trees step together for the group's depth; the remaining
    /// trees are walked one at a time.
    #[inline]
    fn for_each_leaf<R: Row + ?Sized>(&self, z: &R, mut f: impl FnMut(usize, usize)) {
        let nodes = &self.nodes[..];
        let groups = self.tree_roots.chunks_exact(LANES);
        let rest = groups.remainder();
        for (g, (roots, &depth)) in groups.zip(&self.group_depths).enumerate() {
            let mut at: [usize; LANES] = std::array::from_fn(|l| roots[l] as usize);
            for _ in 0..depth {
                let mut all_leaves = LEAF_FLAG;
                for a in at.iter_mut() {
                    let node = &nodes[*a];
                    all_leaves &= node.feature;
                    *a = node.step(*a, z);
                }
                if all_leaves != 0 {
                    break;
                }
            }
            for (l, &a) in at.iter().enumerate() {
                f(g * LANES + l, nodes[a].leaf_offset());
            }
        }
        let done = self.tree_roots.len() - rest.len();
        for (t, &root) in rest.iter().enumerate() {
            f(done + t, self.walk(root, z).0);
        }
    }

    /// Splits visited per tree for a raw feature vector.
    pub fn traversal_steps(&self, features: &[f64]) -> Result<Vec<usize>, ModelError> {
        self.check_dim(features)?;
        let z = self.normalization.apply(features)?;
        Ok(self.tree_roots.iter().map(|&r| self.walk(r, &z[..]).1).collect())
    }

    /// Class probabilities for an already-normalized vector.
    pub fn probabilities_normalized(&self, z: &[f64]) -> Vec<f64> {
        self.probabilities(z)
    }

    fn probabilities<R: Row + ?Sized>(&self, z: &R) -> Vec<f64> {
        let k = self.n_classes;
        let mut acc = vec![0.0; k];
        if self.kind.is_boosted() {
            self.for_each_leaf(z, |t, leaf| acc[t % k] += self.leaf_values[leaf]);
            for (a, base) in acc.iter_mut().zip(&self.base_score) {
                *a = base + self.learning_rate * *a;
            }
            softmax_in_place(&mut acc);
        } else {
            self.for_each_leaf(z, |_, leaf| {
                for (a, v) in acc.iter_mut().zip(&self.leaf_values[leaf..leaf + k]) {
                    *a += v;
                }
            });
            let n = self.tree_roots.len() as f64;
            for a in acc.iter_mut() {
                *a /= n;
            }
        }
        acc
    }

    pub(crate) fn decode_body(r: &mut Reader<'_>, kind: EnsembleKind, pre: Preamble) -> Result<Self, ModelError> {
        let corrupt = |m: String| ModelError::CorruptFile(m);
        let learning_rate = r.f64()?;
        let base_score = r.f64s()?;
        let tree_roots = r.u32s()?;
        let n_nodes = r.u32()? as usize;
        let mut nodes = Vec::with_capacity(n_nodes.min(1 << 20));
        for _ in 0..n_nodes {
            nodes.push(NodeRecord {
                threshold: r.f64()?,
                feature: r.u32()?,
                next: r.u32()?,
            });
        }
        let leaf_values = r.f64s()?;
        if base_score.len() != pre.n_classes {
            return Err(corrupt("base score length does not match class count".into()));
        }
        if tree_roots.is_empty() && !kind.is_boosted() {
            return Err(corrupt("forest without trees".into()));
        }
        let width = leaf_width(kind, pre.n_classes);
        let mut tree_depths = Vec::with_capacity(tree_roots.len());
        for (t, &root) in tree_roots.iter().enumerate() {
            let start = root as usize;
            let end = tree_roots.get(t + 1).map_or(nodes.len(), |&r| r as usize);
            if (t == 0 && start != 0) || start >= end || end > nodes.len() {
                return Err(corrupt(format!("tree {t} has invalid root offset {root}")));
            }
            let depth = validate_tree(&nodes, start, end, pre.n_features, width, leaf_values.len())
                .map_err(|m| corrupt(format!("tree {t}: {m}")))?;
            tree_depths.push(depth);
        }
        if tree_roots.is_empty() && !nodes.is_empty() {
            return Err(corrupt("nodes without trees".into()));
        }
        Ok(Self {
            kind,
            n_classes: pre.n_classes,
            n_features: pre.n_features,
            learning_rate,
            base_score,
            nodes,
            leaf_values,
            tree_roots,
            group_depths: group_depths(&tree_depths),
            tree_depths,
            normalization: pre.normalization,
            feature_names: pre.feature_names,
        })
    }

    fn encode_body(&self, w: &mut Writer) {
        w.section(persist::TAG_COMPILED, |s| {
            s.f64(self.learning_rate);
            s.f64s(&self.base_score);
            s.u32s(&self.tree_roots);
            s.u32(self.nodes.len() as u32);
            for n in &self.nodes {
                s.f64(n.threshold);
                s.u32(n.feature);
                s.u32(n.next);
            }
            s.f64s(&self.leaf_values);
        });
    }
}

/// Checks that `nodes[start..end]` is exactly one depth-first tree with
/// in-bounds offsets and returns its depth.
fn validate_tree(
    nodes: &[NodeRecord],
    start: usize,
    end: usize,
    n_features: usize,
    width: usize,
    n_leaf_values: usize,
) -> Result<u32, String> {
    let mut stack = vec![(start, end, 0u32)];
    let mut depth = 0;
    while let Some((i, limit, d)) = stack.pop() {
        let node = &nodes[i];
        depth = depth.max(d);
        if node.is_leaf() {
            if node.feature != LEAF_FLAG || node.next as usize != i || node.threshold.to_bits() >> 32 != LEAF_NAN >> 32 {
                return Err(format!("leaf {i} is not a self-referencing NaN record"));
            }
            if limit != i + 1 {
                return Err(format!("leaf {i} does not close its subtree"));
            }
            if node.leaf_offset() + width > n_leaf_values {
                return Err(format!("leaf {i} values out of bounds"));
            }
        } else {
            let right = node.next as usize;
            if node.feature as usize >= n_features || node.threshold.is_nan() {
                return Err(format!("node {i} has an invalid split"));
            }
            if !(right > i + 1 && right < limit) {
                return Err(format!("node {i} has right offset {right} outside ({}, {limit})", i + 1));
            }
            stack.push((i + 1, right, d + 1));
            stack.push((right, limit, d + 1));
        }
    }
    Ok(depth)
}

impl InferenceModel for CompiledEnsemble {
    fn n_features(&self) -> usize {
        self.n_features
    }

    fn predict(&self, features: &[f64]) -> Result<Prediction, ModelError> {
        self.check_dim(features)?;
        let probabilities = if features.len() <= STACK_FEATURES {
            let mut z = [0.0; STACK_FEATURES];
            self.normalization.apply_into(features, &mut z[..features.len()]);
            self.probabilities(&z)
        } else {
            let mut z = vec![0.0; features.len()];
            self.normalization.apply_into(features, &mut z);
            self.probabilities_normalized(&z)
        };
        Ok(Prediction::from_probabilities(probabilities))
    }

    fn to_bytes(&self) -> Vec<u8> {
        let mut w = persist::write_preamble(
            self.kind.model_kind(),
            true,
            self.n_classes,
            self.n_features,
            &self.feature_names,
            &self.normalization,
        );
        self.encode_body(&mut w);
        w.into_bytes()
    }
}

/// Free-function form of [`CompiledEnsemble`] inference.
pub fn predict_compiled(compiled: &CompiledEnsemble, features: &[f64]) -> Result<Prediction, ModelError> {
    compiled.predict(features)
}
