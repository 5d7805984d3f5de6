//! Item and constraint encoders over a slice-partitioned vector space.
//!
//! The disentangled encoder gives every slot its own contiguous coordinate
//! range (one coordinate per vocabulary value), so cross-slot inner products
//! vanish exactly. The universal encoder mixes all slots through a seeded
//! random rotation after per-slot scaling, reproducing an entangled space in
//! which color and category dominate fine details.

use std::collections::{BTreeMap, BTreeSet};
use std::hash::{Hash, Hasher};
use std::io::{BufReader, BufWriter};
use std::ops::Range;
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::binio;
use crate::catalog::Item;
use crate::constraints::{ConstraintSet, DirectiveKind};
use crate::error::{Error, Result};
use crate::schema::{AttributeSchema, SlotKind};

/// Slot name used by layouts whose coordinates carry no slot structure.
pub const UNIVERSAL_SLOT: &str = "universal";

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SliceEntry {
    pub slot: String,
    pub offset: usize,
    pub width: usize,
}

impl SliceEntry {
    pub fn range(&self) -> Range<usize> {
        self.offset..self.offset + self.width
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SliceLayout {
    entries: Vec<SliceEntry>,
    total_dim: usize,
    id: u64,
}

impl SliceLayout {
    pub fn from_entries(entries: Vec<SliceEntry>) -> Result<Self> {
        let mut next = 0;
        let mut names = BTreeSet::new();
        for e in &entries {
            if e.offset != next {
                return Err(Error::schema(
                    &e.slot,
                    format!("slice offset {} is not contiguous (expected {next})", e.offset),
                ));
            }
            if e.width == 0 {
                return Err(Error::schema(&e.slot, "zero-width slice"));
            }
            if !names.insert(e.slot.as_str()) {
                return Err(Error::schema(&e.slot, "duplicate slice"));
            }
            next += e.width;
        }
        if next == 0 {
            return Err(Error::schema("<none>", "layout has no coordinates"));
        }
        let mut h = std::collections::hash_map::DefaultHasher::new();
        entries.hash(&mut h);
        Ok(Self {
            entries,
            total_dim: next,
            id: h.finish(),
        })
    }

    pub fn from_schema(schema: &AttributeSchema) -> Self {
        let mut offset = 0;
        let entries = schema
            .slots
            .iter()
            .map(|s| {
                let e = SliceEntry {
                    slot: s.name.clone(),
                    offset,
                    width: s.slice_width(),
                };
                offset += e.width;
                e
            })
            .collect();
        Self::from_entries(entries).expect("validated schema yields a valid layout")
    }

    /// A single unstructured slice spanning `dim` coordinates.
    pub fn universal(dim: usize) -> Self {
        Self::from_entries(vec![SliceEntry {
            slot: UNIVERSAL_SLOT.to_string(),
            offset: 0,
            width: dim,
        }])
        .expect("dim > 0")
    }

    pub fn entries(&self) -> &[SliceEntry] {
        &self.entries
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn entry(&self, slot: &str) -> Option<&SliceEntry> {
        self.entries.iter().find(|e| e.slot == slot)
    }

    pub fn position(&self, slot: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.slot == slot)
    }

    pub fn range(&self, slot: &str) -> Option<Range<usize>> {
        self.entry(slot).map(SliceEntry::range)
    }

    /// Slot index for every coordinate.
    pub fn coordinate_slots(&self) -> Vec<usize> {
        let mut out = vec![0; self.total_dim];
        for (i, e) in self.entries.iter().enumerate() {
            out[e.range()].fill(i);
        }
        out
    }

    pub fn check_schema(&self, schema: &AttributeSchema) -> Result<()> {
        if self.entries.len() != schema.slots.len() {
            return Err(Error::schema(
                "<layout>",
                format!(
                    "layout has {} slices, schema has {} slots",
                    self.entries.len(),
                    schema.slots.len()
                ),
            ));
        }
        for (e, s) in self.entries.iter().zip(&schema.slots) {
            if e.slot != s.name || e.width != s.slice_width() {
                return Err(Error::schema(&s.name, "layout does not match schema"));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub layout_id: u64,
}

impl EmbeddingVector {
    pub fn zeros(layout: &SliceLayout) -> Self {
        Self {
            values: vec![0.0; layout.total_dim()],
            layout_id: layout.id(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaVector {
    pub values: Vec<f64>,
    pub touched_slots: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskVector {
    pub values: Vec<f64>,
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let d = norm(a) * norm(b);
    if d == 0.0 {
        0.0
    } else {
        dot(a, b) / d
    }
}

/// Scales to unit norm; zero vectors are returned unchanged.
pub fn normalize_in_place(a: &mut [f64]) {
    let n = norm(a);
    if n > 0.0 {
        a.iter_mut().for_each(|x| *x /= n);
    }
}

pub fn encode_item_disentangled(
    item: &Item,
    schema: &AttributeSchema,
    layout: &SliceLayout,
) -> Result<EmbeddingVector> {
    layout.check_schema(schema)?;
    let mut out = EmbeddingVector::zeros(layout);
    for (slot, entry) in schema.slots.iter().zip(layout.entries()) {
        let slice = &mut out.values[entry.range()];
        match slot.kind {
            SlotKind::Categorical => {
                if let Some(v) = item.attr(&slot.name) {
                    let i = slot
                        .value_index(v)
                        .ok_or_else(|| Error::schema(&slot.name, format!("unknown value `{v}`")))?;
                    slice[i] = 1.0;
                }
            }
            SlotKind::BinaryDetail => {
                for (i, v) in slot.vocab.iter().enumerate() {
                    if item.has_detail(v) {
                        slice[i] = 1.0;
                    }
                }
                normalize_in_place(slice);
            }
        }
    }
    Ok(out)
}

/// Default per-slot scales of the universal encoder.
pub fn default_slot_scales() -> BTreeMap<String, f64> {
    [
        ("color", 1.0),
        ("silhouette", 1.0),
        ("material", 0.5),
        ("detail", 0.1),
        ("style", 0.3),
    ]
    .into_iter()
    .map(|(k, v)| (k.to_string(), v))
    .collect()
}

/// Entangled baseline encoder: `normalize(R · diag(scales) · v)`.
#[derive(Debug, Clone)]
pub struct UniversalEncoder {
    schema_layout: SliceLayout,
    output_layout: SliceLayout,
    /// `None` is the identity rotation (seed 0).
    rotation: Option<DMatrix<f64>>,
    coordinate_scales: Vec<f64>,
    seed: u64,
}

impl UniversalEncoder {
    pub fn new(
        schema: &AttributeSchema,
        seed: u64,
        slot_scales: &BTreeMap<String, f64>,
    ) -> Result<Self> {
        let layout = SliceLayout::from_schema(schema);
        let mut coordinate_scales = vec![1.0; layout.total_dim()];
        for (slot, &scale) in slot_scales {
            let range = layout
                .range(slot)
                .ok_or_else(|| Error::schema(slot, "unknown slot in slot_scales"))?;
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(Error::schema(slot, format!("slot scale {scale} must be positive")));
            }
            coordinate_scales[range].fill(scale);
        }
        let rotation = (seed != 0).then(|| random_rotation(layout.total_dim(), seed));
        Ok(Self {
            output_layout: SliceLayout::universal(layout.total_dim()),
            schema_layout: layout,
            rotation,
            coordinate_scales,
            seed,
        })
    }

    pub fn with_defaults(schema: &AttributeSchema, seed: u64) -> Result<Self> {
        Self::new(schema, seed, &default_slot_scales())
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn output_layout(&self) -> &SliceLayout {
        &self.output_layout
    }

    /// `R · diag(scales) · x` without normalization.
    fn project(&self, x: &[f64]) -> Vec<f64> {
        let scaled: Vec<f64> = x
            .iter()
            .zip(&self.coordinate_scales)
            .map(|(a, s)| a * s)
            .collect();
        match &self.rotation {
            None => scaled,
            Some(r) => (r * DVector::from_vec(scaled)).iter().copied().collect(),
        }
    }

    pub fn encode_disentangled(&self, v: &EmbeddingVector) -> Result<EmbeddingVector> {
        if v.len() != self.schema_layout.total_dim() {
            return Err(Error::dim(self.schema_layout.total_dim(), v.len()));
        }
        let mut values = self.project(&v.values);
        normalize_in_place(&mut values);
        Ok(EmbeddingVector {
            values,
            layout_id: self.output_layout.id(),
        })
    }

    pub fn encode(&self, item: &Item, schema: &AttributeSchema) -> Result<EmbeddingVector> {
        let v = encode_item_disentangled(item, schema, &self.schema_layout)?;
        self.encode_disentangled(&v)
    }

    /// Renders a disentangled delta into the universal space with the same
    /// scaling, rotation and normalization factor the anchor received.
    pub fn render_delta(
        &self,
        delta: &DeltaVector,
        anchor: &EmbeddingVector,
    ) -> Result<EmbeddingVector> {
        let d = self.schema_layout.total_dim();
        if delta.values.len() != d {
            return Err(Error::dim(d, delta.values.len()));
        }
        if anchor.len() != d {
            return Err(Error::dim(d, anchor.len()));
        }
        let anchor_norm = norm(&self.project(&anchor.values));
        let mut values = self.project(&delta.values);
        if anchor_norm > 0.0 {
            values.iter_mut().for_each(|x| *x /= anchor_norm);
        }
        Ok(EmbeddingVector {
            values,
            layout_id: self.output_layout.id(),
        })
    }
}

/// Haar-distributed orthogonal matrix from the QR factorization of a seeded
/// Gaussian matrix.
fn random_rotation(dim: usize, seed: u64) -> DMatrix<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

pub fn encode_item_universal(
    item: &Item,
    schema: &AttributeSchema,
    seed: u64,
    slot_scales: &BTreeMap<String, f64>,
) -> Result<EmbeddingVector> {
    UniversalEncoder::new(schema, seed, slot_scales)?.encode(item, schema)
}

/// Builds the slice-local delta and the touched-slot mask for a resolved
/// constraint set against an anchor embedding.
///
/// Per touched slot the target slice starts as the anchor's slice and each
/// directive is applied in order: a categorical set replaces the slice by a
/// one-hot, a detail set raises its coordinate to 1, remove/negate drive the
/// coordinate to 0. The delta is `target - anchor` on touched slices.
pub fn encode_constraints(
    constraints: &ConstraintSet,
    schema: &AttributeSchema,
    layout: &SliceLayout,
    anchor: &EmbeddingVector,
) -> Result<(DeltaVector, MaskVector)> {
    layout.check_schema(schema)?;
    if anchor.len() != layout.total_dim() {
        return Err(Error::dim(layout.total_dim(), anchor.len()));
    }
    constraints.validate(schema)?;
    if let Some(d) = constraints.directives.iter().find(|d| d.is_relative()) {
        return Err(Error::schema(&d.slot, format!("unresolved relative value `{}`", d.value)));
    }

    let dim = layout.total_dim();
    let mut delta = vec![0.0; dim];
    let mut mask = vec![0.0; dim];
    let touched = constraints.touched_slots();
    for slot_name in &touched {
        let slot = schema.slot(slot_name).expect("validated");
        let range = layout.range(slot_name).expect("layout matches schema");
        let anchor_slice = &anchor.values[range.clone()];
        let mut target = anchor_slice.to_vec();
        for d in constraints.directives.iter().filter(|d| &d.slot == slot_name) {
            let i = slot.value_index(&d.value).expect("validated");
            match (d.kind, slot.kind) {
                (DirectiveKind::Set | DirectiveKind::AddSoft, SlotKind::Categorical) => {
                    target.fill(0.0);
                    target[i] = 1.0;
                }
                (DirectiveKind::Set | DirectiveKind::AddSoft, SlotKind::BinaryDetail) => {
                    target[i] = 1.0;
                }
                (DirectiveKind::Remove | DirectiveKind::Negate, _) => target[i] = 0.0,
            }
        }
        for ((out, t), a) in delta[range.clone()].iter_mut().zip(&target).zip(anchor_slice) {
            *out = t - a;
        }
        mask[range].fill(1.0);
    }
    Ok((
        DeltaVector {
            values: delta,
            touched_slots: touched,
        },
        MaskVector { values: mask },
    ))
}

/// Coordinates the query should actively avoid: 1.0 at every value named by
/// a remove or negate directive, 0 elsewhere.
pub fn exclusion_vector(
    constraints: &ConstraintSet,
    schema: &AttributeSchema,
    layout: &SliceLayout,
) -> Result<Vec<f64>> {
    layout.check_schema(schema)?;
    let mut out = vec![0.0; layout.total_dim()];
    for d in constraints.directives.iter().filter(|d| d.kind.is_exclusion()) {
        let slot = schema.check_value(&d.slot, &d.value)?;
        let offset = layout.entry(&d.slot).expect("layout matches schema").offset;
        out[offset + slot.value_index(&d.value).expect("checked")] = 1.0;
    }
    Ok(out)
}

const EMBEDDING_MAGIC: &[u8; 7] = b"AMMREMB";
const EMBEDDING_VERSION: u16 = 1;

/// Writes externally computed (or encoder-produced) vectors keyed by item
/// ordinal: header, layout table, u32 rows, u32 dim, f32 row-major data.
pub fn write_embeddings(
    path: impl AsRef<Path>,
    layout: &SliceLayout,
    rows: &[EmbeddingVector],
) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    binio::write_header(&mut w, EMBEDDING_MAGIC, EMBEDDING_VERSION)?;
    binio::write_layout(&mut w, layout)?;
    w.write_u32::<LittleEndian>(rows.len() as u32)
        .map_err(binio::io_err)?;
    w.write_u32::<LittleEndian>(layout.total_dim() as u32)
        .map_err(binio::io_err)?;
    for row in rows {
        if row.len() != layout.total_dim() {
            return Err(Error::dim(layout.total_dim(), row.len()));
        }
        binio::write_f32s(&mut w, &row.values)?;
    }
    std::io::Write::flush(&mut w).map_err(|e| Error::io(path, e))
}

pub fn read_embeddings(path: impl AsRef<Path>) -> Result<(SliceLayout, Vec<EmbeddingVector>)> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = BufReader::new(file);
    binio::read_header(&mut r, EMBEDDING_MAGIC, EMBEDDING_VERSION)?;
    let layout = binio::read_layout(&mut r)?;
    let n = r.read_u32::<LittleEndian>().map_err(binio::io_err)? as usize;
    let dim = r.read_u32::<LittleEndian>().map_err(binio::io_err)? as usize;
    if dim != layout.total_dim() {
        return Err(Error::dim(layout.total_dim(), dim));
    }
    let mut rows = Vec::with_capacity(n);
    for _ in 0..n {
        rows.push(EmbeddingVector {
            values: binio::read_f32s(&mut r, dim)?,
            layout_id: layout.id(),
        });
    }
    binio::expect_eof(&mut r)?;
    Ok((layout, rows))
}
