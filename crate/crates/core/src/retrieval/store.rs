//! Pathology-partitioned knowledge store: offline build and the binary file format.
//!
//! File layout, all integers little-endian:
//!
//! ```text
//! magic   8 bytes  "EVIKB\0\0\0"
//! version u32      (currently 1)
//! dim     u32
//! n       u32      number of bases
//! fingerprint      u32 length + UTF-8 bytes
//! n times:
//!   label          u32 length + UTF-8 bytes
//!   count u32
//!   count times:
//!     entry_id     u32 length + UTF-8 bytes
//!     vector       dim x f64
//!     report       u32 length + UTF-8 bytes
//! ```

use std::path::Path;

use thiserror::Error;

use super::embed::{EmbedError, Embedder, EmbeddingVector};
use super::labels::LabelSet;

pub const STORE_MAGIC: &[u8; 8] = b"EVIKB\0\0\0";
pub const STORE_VERSION: u32 = 1;
pub const DEFAULT_ENTRIES_PER_BASE: usize = 50;

#[derive(Debug, Error, PartialEq)]
pub enum BuildError {
    #[error("triplet {index}: unknown label {label:?}")]
    UnknownLabel { index: usize, label: String },
    #[error("entry {0}: embedding has zero norm")]
    DegenerateVector(String),
    #[error("entry {entry_id} appears twice in base {label:?}")]
    DuplicateEntry { label: String, entry_id: String },
    #[error("entry {0}: report text is empty")]
    EmptyReport(String),
    #[error("entries per base must be positive")]
    ZeroCapacity,
    #[error("entry {entry_id}: {source}")]
    Embed { entry_id: String, source: EmbedError },
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unsupported store version {found}; this build reads version {STORE_VERSION}")]
    StoreVersion { found: u32 },
    #[error("corrupt store: {0}")]
    StoreCorrupt(String),
    #[error("store i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// One reference case for the knowledge base.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Triplet {
    pub entry_id: String,
    pub image_ref: String,
    pub report: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeEntry {
    pub entry_id: String,
    pub vector: EmbeddingVector,
    pub report_text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeBase {
    pub pathology: String,
    pub entries: Vec<KnowledgeEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KnowledgeStore {
    labels: LabelSet,
    bases: Vec<KnowledgeBase>,
    dimension: usize,
    fingerprint: String,
}

impl KnowledgeStore {
    /// Assemble a store from prebuilt bases, one per label in label order.
    pub fn from_parts(
        labels: LabelSet,
        bases: Vec<KnowledgeBase>,
        dimension: usize,
        fingerprint: String,
    ) -> Result<Self, StoreError> {
        let corrupt = |m: String| Err(StoreError::StoreCorrupt(m));
        if dimension == 0 {
            return corrupt("dimension is zero".into());
        }
        if bases.len() != labels.len() {
            return corrupt(format!("{} bases for {} labels", bases.len(), labels.len()));
        }
        for (base, label) in bases.iter().zip(labels.iter()) {
            if base.pathology != label {
                return corrupt(format!("base {:?} out of label order at {label:?}", base.pathology));
            }
            for (i, entry) in base.entries.iter().enumerate() {
                if entry.vector.dimension() != dimension {
                    return corrupt(format!("entry {} has dimension {}", entry.entry_id, entry.vector.dimension()));
                }
                if base.entries[..i].iter().any(|e| e.entry_id == entry.entry_id) {
                    return corrupt(format!("duplicate entry {} in {label:?}", entry.entry_id));
                }
            }
        }
        Ok(Self {
            labels,
            bases,
            dimension,
            fingerprint,
        })
    }

    pub fn labels(&self) -> &LabelSet {
        &self.labels
    }

    pub fn bases(&self) -> &[KnowledgeBase] {
        &self.bases
    }

    pub fn base(&self, pathology: &str) -> Option<&KnowledgeBase> {
        self.labels.index_of(pathology).map(|i| &self.bases[i])
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn total_entries(&self) -> usize {
        self.bases.iter().map(|b| b.entries.len()).sum()
    }

    /// Same store with every stored vector multiplied by `factor(label_index, entry_index)`.
    pub fn map_vectors(&self, mut factor: impl FnMut(usize, usize) -> f64) -> Result<Self, EmbedError> {
        let mut out = self.clone();
        for (b, base) in out.bases.iter_mut().enumerate() {
            for (e, entry) in base.entries.iter_mut().enumerate() {
                entry.vector = entry.vector.scaled(factor(b, e))?;
            }
        }
        Ok(out)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(STORE_MAGIC);
        out.extend_from_slice(&STORE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.dimension as u32).to_le_bytes());
        out.extend_from_slice(&(self.bases.len() as u32).to_le_bytes());
        put_str(&mut out, &self.fingerprint);
        for base in &self.bases {
            put_str(&mut out, &base.pathology);
            out.extend_from_slice(&(base.entries.len() as u32).to_le_bytes());
            for entry in &base.entries {
                put_str(&mut out, &entry.entry_id);
                for v in entry.vector.values() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
                put_str(&mut out, &entry.report_text);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != STORE_MAGIC {
            return Err(StoreError::StoreCorrupt("bad magic".into()));
        }
        let version = r.u32()?;
        if version != STORE_VERSION {
            return Err(StoreError::StoreVersion { found: version });
        }
        let dimension = r.u32()? as usize;
        let n = r.u32()? as usize;
        let fingerprint = r.string()?;
        let mut labels = Vec::with_capacity(n.min(1024));
        let mut bases = Vec::with_capacity(n.min(1024));
        for _ in 0..n {
            let pathology = r.string()?;
            let count = r.u32()? as usize;
            let mut entries = Vec::with_capacity(count.min(4096));
            for _ in 0..count {
                let entry_id = r.string()?;
                let mut values = Vec::with_capacity(dimension);
                for _ in 0..dimension {
                    values.push(f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes")));
                }
                let vector = EmbeddingVector::new(values)
                    .map_err(|e| StoreError::StoreCorrupt(format!("entry {entry_id}: {e}")))?;
                let report_text = r.string()?;
                entries.push(KnowledgeEntry {
                    entry_id,
                    vector,
                    report_text,
                });
            }
            labels.push(pathology.clone());
            bases.push(KnowledgeBase { pathology, entries });
        }
        if r.pos != bytes.len() {
            return Err(StoreError::StoreCorrupt(format!(
                "{} trailing bytes",
                bytes.len() - r.pos
            )));
        }
        let labels = LabelSet::new(labels).map_err(|e| StoreError::StoreCorrupt(e.to_string()))?;
        Self::from_parts(labels, bases, dimension, fingerprint)
    }

    pub fn persist(&self, path: &Path) -> Result<(), StoreError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, StoreError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], StoreError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| StoreError::StoreCorrupt(format!("truncated at byte {}", self.pos)))?;
        let slice = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(slice)
    }

    fn u32(&mut self) -> Result<u32, StoreError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String, StoreError> {
        let len = self.u32()? as usize;
        let raw = self.take(len)?;
        String::from_utf8(raw.to_vec()).map_err(|e| StoreError::StoreCorrupt(e.to_string()))
    }
}

/// Build one base per label from `triplets`, keeping the first `per_base`
/// triplets of each label in input order. Each vector embeds
/// `(image_ref, label)`.
pub fn build_store(
    triplets: &[Triplet],
    labels: &LabelSet,
    embedder: &dyn Embedder,
    per_base: usize,
) -> Result<KnowledgeStore, BuildError> {
    if per_base == 0 {
        return Err(BuildError::ZeroCapacity);
    }
    let mut buckets: Vec<Vec<&Triplet>> = vec![Vec::new(); labels.len()];
    for (index, triplet) in triplets.iter().enumerate() {
        let slot = labels.index_of(&triplet.label).ok_or_else(|| BuildError::UnknownLabel {
            index,
            label: triplet.label.clone(),
        })?;
        if buckets[slot].len() < per_base {
            buckets[slot].push(triplet);
        }
    }

    let dimension = embedder.dimension();
    let mut bases = Vec::with_capacity(labels.len());
    for (label, bucket) in labels.iter().zip(buckets) {
        let mut entries: Vec<KnowledgeEntry> = Vec::with_capacity(bucket.len());
        for triplet in bucket {
            if entries.iter().any(|e| e.entry_id == triplet.entry_id) {
                return Err(BuildError::DuplicateEntry {
                    label: label.to_owned(),
                    entry_id: triplet.entry_id.clone(),
                });
            }
            if triplet.report.trim().is_empty() {
                return Err(BuildError::EmptyReport(triplet.entry_id.clone()));
            }
            let embed_err = |source| BuildError::Embed {
                entry_id: triplet.entry_id.clone(),
                source,
            };
            let vector = embedder.embed(&triplet.image_ref, label).map_err(embed_err)?;
            if vector.dimension() != dimension {
                return Err(embed_err(EmbedError::Dimension {
                    expected: dimension,
                    found: vector.dimension(),
                }));
            }
            if vector.norm() == 0.0 {
                return Err(BuildError::DegenerateVector(triplet.entry_id.clone()));
            }
            entries.push(KnowledgeEntry {
                entry_id: triplet.entry_id.clone(),
                vector,
                report_text: triplet.report.clone(),
            });
        }
        bases.push(KnowledgeBase {
            pathology: label.to_owned(),
            entries,
        });
    }
    Ok(KnowledgeStore {
        labels: labels.clone(),
        bases,
        dimension,
        fingerprint: embedder.fingerprint(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::retrieval::embed::TestEmbedder;

    fn triplet(id: &str, label: &str) -> Triplet {
        Triplet {
            entry_id: id.into(),
            image_ref: format!("img/{id}.png"),
            report: format!("report for {id}"),
            label: label.into(),
        }
    }

    fn counts(store: &KnowledgeStore) -> Vec<(String, usize)> {
        store
            .bases()
            .iter()
            .filter(|b| !b.entries.is_empty())
            .map(|b| (b.pathology.clone(), b.entries.len()))
            .collect()
    }

    #[test]
    fn counts_per_label() {
        let t = [triplet("a", "Edema"), triplet("b", "Edema"), triplet("c", "Pneumonia")];
        let store = build_store(&t, &LabelSet::chexpert(), &TestEmbedder::default(), 50).unwrap();
        assert_eq!(store.bases().len(), 14);
        assert_eq!(
            counts(&store),
            [("Edema".to_string(), 2), ("Pneumonia".to_string(), 1)]
        );
        assert_eq!(store.fingerprint(), TestEmbedder::default().fingerprint());
    }

    #[test]
    fn truncates_to_first_m() {
        let t = [triplet("a", "Edema"), triplet("b", "Edema")];
        let store = build_store(&t, &LabelSet::chexpert(), &TestEmbedder::default(), 1).unwrap();
        let edema = store.base("Edema").unwrap();
        assert_eq!(edema.entries.len(), 1);
        assert_eq!(edema.entries[0].entry_id, "a");
    }

    #[test]
    fn vector_embeds_image_and_label() {
        let e = TestEmbedder::default();
        let store = build_store(&[triplet("a", "Edema")], &LabelSet::chexpert(), &e, 50).unwrap();
        assert_eq!(
            store.base("Edema").unwrap().entries[0].vector,
            e.embed("img/a.png", "Edema").unwrap()
        );
    }

    #[test]
    fn build_errors() {
        let labels = LabelSet::chexpert();
        let e = TestEmbedder::default();
        assert_eq!(
            build_store(&[triplet("a", "Tuberculosis")], &labels, &e, 50),
            Err(BuildError::UnknownLabel { index: 0, label: "Tuberculosis".into() })
        );
        assert!(matches!(
            build_store(&[triplet("a", "Edema"), triplet("a", "Edema")], &labels, &e, 50),
            Err(BuildError::DuplicateEntry { .. })
        ));
        assert_eq!(build_store(&[], &labels, &e, 0), Err(BuildError::ZeroCapacity));

        struct Zero;
        impl Embedder for Zero {
            fn dimension(&self) -> usize {
                2
            }
            fn embed(&self, _: &str, _: &str) -> Result<EmbeddingVector, EmbedError> {
                EmbeddingVector::new(vec![0.0, 0.0])
            }
            fn fingerprint(&self) -> String {
                "zero".into()
            }
        }
        assert_eq!(
            build_store(&[triplet("z", "Edema")], &labels, &Zero, 50),
            Err(BuildError::DegenerateVector("z".into()))
        );
    }

    #[test]
    fn same_label_entries_stable_under_cross_label_permutation() {
        let labels = LabelSet::chexpert();
        let e = TestEmbedder::default();
        let a = [triplet("a", "Edema"), triplet("p", "Pneumonia"), triplet("b", "Edema")];
        let b = [triplet("p", "Pneumonia"), triplet("a", "Edema"), triplet("b", "Edema")];
        assert_eq!(build_store(&a, &labels, &e, 50).unwrap(), build_store(&b, &labels, &e, 50).unwrap());
    }

    #[test]
    fn persistence_round_trip_and_determinism() {
        let t = [triplet("a", "Edema"), triplet("c", "Pneumonia")];
        let store = build_store(&t, &LabelSet::chexpert(), &TestEmbedder::default(), 50).unwrap();
        let bytes = store.to_bytes();
        assert_eq!(bytes, store.to_bytes());
        assert_eq!(KnowledgeStore::from_bytes(&bytes).unwrap(), store);

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("kb.bin");
        store.persist(&path).unwrap();
        assert_eq!(KnowledgeStore::load(&path).unwrap(), store);
    }

    #[test]
    fn corrupt_and_versioned_files() {
        let store = build_store(&[triplet("a", "Edema")], &LabelSet::chexpert(), &TestEmbedder::default(), 50).unwrap();
        let bytes = store.to_bytes();
        for cut in [0, 7, 12, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(
                KnowledgeStore::from_bytes(&bytes[..cut]),
                Err(StoreError::StoreCorrupt(_))
            ));
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(KnowledgeStore::from_bytes(&longer), Err(StoreError::StoreCorrupt(_))));

        let mut future = bytes.clone();
        future[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            KnowledgeStore::from_bytes(&future),
            Err(StoreError::StoreVersion { found: 2 })
        ));
    }
}
