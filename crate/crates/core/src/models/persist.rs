//! `PAFM` binary model container.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic    4 bytes  "PAFM"
//! version  u16      FORMAT_VERSION
//! kind     u8       ModelKind code (0 logistic, 1 linear SVM, 2 random forest,
//!                   3 extra trees, 4 gradient boosted)
//! form     u8       0 = source model, 1 = compiled ensemble
//! sections repeated until end of file:
//!     tag  4 bytes
//!     len  u64      payload length in bytes
//!     payload
//! ```
//!
//! Sections, in order:
//!
//! * `META`: `u32 n_classes, u32 n_features, u32 n_names`, then per name
//!   `u32 byte_len` + UTF-8 bytes.
//! * `NORM`: `u32 d`, `d × f64` means, `u32 d`, `d × f64` standard deviations.
//! * one body section:
//!   * `LINR` (linear): `u32 n_classes, u32 n_features`, `u32 len` + weights,
//!     `u32 len` + biases.
//!   * `TREE` (source ensemble): `f64 learning_rate`, `u32 len` + base scores,
//!     `u32 n_trees`, then each tree in pre-order. A node starts with a tag
//!     byte: `0` = leaf followed by `u32 len` + `f64` values; `1` = split
//!     followed by `u32 feature, f64 threshold`, then the left and right
//!     subtrees.
//!   * `CMPL` (compiled ensemble): see [`crate::compile`].
//!
//! Every `f64` array is written as `u32 len` followed by the values.

use crate::compile::CompiledEnsemble;
use crate::dataset::NormalizationParams;

use super::linear::{LinearKind, LinearModel};
use super::tree::{EnsembleKind, TreeEnsembleModel, TreeNode};
use super::{AnyModel, ModelError, ModelKind};

pub const MAGIC: &[u8; 4] = b"PAFM";
pub const FORMAT_VERSION: u16 = 1;

pub(crate) const TAG_META: &[u8; 4] = b"META";
pub(crate) const TAG_NORM: &[u8; 4] = b"NORM";
pub(crate) const TAG_LINEAR: &[u8; 4] = b"LINR";
pub(crate) const TAG_TREES: &[u8; 4] = b"TREE";
pub(crate) const TAG_COMPILED: &[u8; 4] = b"CMPL";

const FORM_SOURCE: u8 = 0;
const FORM_COMPILED: u8 = 1;

/// Upper bound on nesting when decoding trees from untrusted bytes.
const MAX_DECODE_DEPTH: usize = 4096;

#[derive(Default)]
pub(crate) struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    pub fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }

    pub fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn f64s(&mut self, v: &[f64]) {
        self.u32(v.len() as u32);
        for x in v {
            self.f64(*x);
        }
    }

    pub fn u32s(&mut self, v: &[u32]) {
        self.u32(v.len() as u32);
        for x in v {
            self.u32(*x);
        }
    }

    pub fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }

    pub fn section(&mut self, tag: &[u8; 4], body: impl FnOnce(&mut Writer)) {
        let mut inner = Writer::default();
        body(&mut inner);
        self.buf.extend_from_slice(tag);
        self.buf.extend_from_slice(&(inner.buf.len() as u64).to_le_bytes());
        self.buf.extend_from_slice(&inner.buf);
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf
    }
}

pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

fn corrupt(msg: impl Into<String>) -> ModelError {
    ModelError::CorruptFile(msg.into())
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.buf.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    pub fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, ModelError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len_prefix(&mut self, elem_size: usize) -> Result<usize, ModelError> {
        let n = self.u32()? as usize;
        if n.saturating_mul(elem_size) > self.buf.len() - self.pos {
            return Err(corrupt(format!("array of {n} elements overruns the section")));
        }
        Ok(n)
    }

    pub fn f64s(&mut self) -> Result<Vec<f64>, ModelError> {
        let n = self.len_prefix(8)?;
        (0..n).map(|_| self.f64()).collect()
    }

    pub fn u32s(&mut self) -> Result<Vec<u32>, ModelError> {
        let n = self.len_prefix(4)?;
        (0..n).map(|_| self.u32()).collect()
    }

    pub fn str(&mut self) -> Result<String, ModelError> {
        let n = self.len_prefix(1)?;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| corrupt("invalid UTF-8 in name"))
    }

    pub fn section(&mut self, tag: &[u8; 4]) -> Result<Reader<'a>, ModelError> {
        let found = self.take(4)?;
        if found != tag {
            return Err(corrupt(format!(
                "expected section {:?}, found {:?}",
                String::from_utf8_lossy(tag),
                String::from_utf8_lossy(found)
            )));
        }
        let len = usize::try_from(self.u64()?).map_err(|_| corrupt("section too large"))?;
        Ok(Reader::new(self.take(len)?))
    }

    pub fn finish(&self, what: &str) -> Result<(), ModelError> {
        if self.is_empty() {
            Ok(())
        } else {
            Err(corrupt(format!("{} trailing bytes after {what}", self.buf.len() - self.pos)))
        }
    }
}

/// Shared header plus `META` and `NORM` sections.
pub(crate) fn write_preamble(
    kind: ModelKind,
    compiled: bool,
    n_classes: usize,
    n_features: usize,
    feature_names: &[String],
    norm: &NormalizationParams,
) -> Writer {
    let mut w = Writer::default();
    w.buf.extend_from_slice(MAGIC);
    w.buf.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    w.u8(kind.code());
    w.u8(if compiled { FORM_COMPILED } else { FORM_SOURCE });
    w.section(TAG_META, |s| {
        s.u32(n_classes as u32);
        s.u32(n_features as u32);
        s.u32(feature_names.len() as u32);
        for name in feature_names {
            s.str(name);
        }
    });
    w.section(TAG_NORM, |s| {
        s.f64s(&norm.mean);
        s.f64s(&norm.std);
    });
    w
}

pub(crate) struct Preamble {
    pub kind: ModelKind,
    pub compiled: bool,
    pub n_classes: usize,
    pub n_features: usize,
    pub feature_names: Vec<String>,
    pub normalization: NormalizationParams,
}

fn read_preamble(r: &mut Reader<'_>) -> Result<Preamble, ModelError> {
    if r.take(4).map_err(|_| corrupt("missing magic"))? != MAGIC {
        return Err(corrupt("bad magic bytes"));
    }
    let version = r.u16()?;
    if version > FORMAT_VERSION {
        return Err(ModelError::VersionMismatch {
            found: version,
            supported: FORMAT_VERSION,
        });
    }
    if version == 0 {
        return Err(corrupt("format version 0"));
    }
    let code = r.u8()?;
    let kind = ModelKind::from_code(code).ok_or_else(|| corrupt(format!("unknown model kind {code}")))?;
    let compiled = match r.u8()? {
        FORM_SOURCE => false,
        FORM_COMPILED => true,
        other => return Err(corrupt(format!("unknown form {other}"))),
    };

    let mut meta = r.section(TAG_META)?;
    let n_classes = meta.u32()? as usize;
    let n_features = meta.u32()? as usize;
    let n_names = meta.len_prefix(4)?;
    let feature_names = (0..n_names).map(|_| meta.str()).collect::<Result<Vec<_>, _>>()?;
    meta.finish("META")?;
    if n_classes == 0 || feature_names.len() != n_features {
        return Err(corrupt("inconsistent metadata"));
    }

    let mut norm = r.section(TAG_NORM)?;
    let normalization = NormalizationParams {
        mean: norm.f64s()?,
        std: norm.f64s()?,
    };
    norm.finish("NORM")?;
    if normalization.mean.len() != n_features || normalization.std.len() != n_features {
        return Err(corrupt("normalization length does not match feature count"));
    }
    Ok(Preamble {
        kind,
        compiled,
        n_classes,
        n_features,
        feature_names,
        normalization,
    })
}

pub(crate) fn encode_linear(m: &LinearModel) -> Vec<u8> {
    let mut w = write_preamble(
        m.model_kind(),
        false,
        m.n_classes(),
        m.n_features,
        &m.feature_names,
        &m.normalization,
    );
    m.encode_body(&mut w);
    w.into_bytes()
}

pub(crate) fn encode_ensemble(m: &TreeEnsembleModel) -> Vec<u8> {
    let mut w = write_preamble(
        m.kind.model_kind(),
        false,
        m.n_classes,
        m.n_features,
        &m.feature_names,
        &m.normalization,
    );
    m.encode_body(&mut w);
    w.into_bytes()
}

pub(crate) fn encode_tree(w: &mut Writer, node: &TreeNode) {
    match node {
        TreeNode::Leaf { values } => {
            w.u8(0);
            w.f64s(values);
        }
        TreeNode::Split {
            feature,
            threshold,
            left,
            right,
        } => {
            w.u8(1);
            w.u32(*feature as u32);
            w.f64(*threshold);
            encode_tree(w, left);
            encode_tree(w, right);
        }
    }
}

fn decode_tree(r: &mut Reader<'_>, n_features: usize, depth: usize) -> Result<TreeNode, ModelError> {
    if depth > MAX_DECODE_DEPTH {
        return Err(corrupt("tree nesting too deep"));
    }
    match r.u8()? {
        0 => Ok(TreeNode::Leaf { values: r.f64s()? }),
        1 => {
            let feature = r.u32()? as usize;
            if feature >= n_features {
                return Err(corrupt(format!("split on feature {feature} of {n_features}")));
            }
            let threshold = r.f64()?;
            let left = decode_tree(r, n_features, depth + 1)?;
            let right = decode_tree(r, n_features, depth + 1)?;
            Ok(TreeNode::Split {
                feature,
                threshold,
                left: Box::new(left),
                right: Box::new(right),
            })
        }
        tag => Err(corrupt(format!("unknown node tag {tag}"))),
    }
}

pub(crate) fn decode(bytes: &[u8]) -> Result<AnyModel, ModelError> {
    let mut r = Reader::new(bytes);
    let pre = read_preamble(&mut r)?;
    let model = if pre.compiled {
        let ensemble_kind = EnsembleKind::from_model_kind(pre.kind)
            .ok_or_else(|| corrupt("compiled form of a linear model"))?;
        let mut body = r.section(TAG_COMPILED)?;
        let m = CompiledEnsemble::decode_body(&mut body, ensemble_kind, pre)?;
        body.finish("CMPL")?;
        AnyModel::Compiled(m)
    } else if let Some(kind) = EnsembleKind::from_model_kind(pre.kind) {
        let mut body = r.section(TAG_TREES)?;
        let learning_rate = body.f64()?;
        let base_score = body.f64s()?;
        let n_trees = body.u32()? as usize;
        let mut trees = Vec::with_capacity(n_trees.min(1 << 16));
        for _ in 0..n_trees {
            trees.push(decode_tree(&mut body, pre.n_features, 0)?);
        }
        body.finish("TREE")?;
        let width = if kind.is_boosted() { 1 } else { pre.n_classes };
        if trees.iter().any(|t| !leaf_widths_are(t, width)) {
            return Err(corrupt("leaf width does not match model kind"));
        }
        if base_score.len() != pre.n_classes {
            return Err(corrupt("base score length does not match class count"));
        }
        if trees.is_empty() && !kind.is_boosted() {
            return Err(corrupt("forest without trees"));
        }
        AnyModel::Ensemble(TreeEnsembleModel {
            kind,
            trees,
            n_classes: pre.n_classes,
            n_features: pre.n_features,
            learning_rate,
            base_score,
            normalization: pre.normalization,
            feature_names: pre.feature_names,
        })
    } else {
        let mut body = r.section(TAG_LINEAR)?;
        let n_classes = body.u32()? as usize;
        let n_features = body.u32()? as usize;
        let weights = body.f64s()?;
        let bias = body.f64s()?;
        body.finish("LINR")?;
        if n_classes != pre.n_classes
            || n_features != pre.n_features
            || weights.len() != n_classes * n_features
            || bias.len() != n_classes
        {
            return Err(corrupt("linear model dimensions are inconsistent"));
        }
        AnyModel::Linear(LinearModel {
            kind: if pre.kind == ModelKind::Logistic {
                LinearKind::LogisticSoftmax
            } else {
                LinearKind::SvmOvr
            },
            weights,
            bias,
            n_features,
            normalization: pre.normalization,
            feature_names: pre.feature_names,
        })
    };
    r.finish("model body")?;
    Ok(model)
}

fn leaf_widths_are(node: &TreeNode, width: usize) -> bool {
    match node {
        TreeNode::Leaf { values } => values.len() == width,
        TreeNode::Split { left, right, .. } => leaf_widths_are(left, width) && leaf_widths_are(right, width),
    }
}
