//! The clip-embedding store and top-k retrieval over it.
//!
//! Offline, a video is segmented into fixed-length clips and each clip is
//! embedded into a unit vector. Online, grounding queries are embedded (text
//! only, or a text/image mean for multimodal queries) and scored against
//! every entry by cosine similarity. Index sizes stay small enough that an
//! exhaustive scan is exact and cheap; there is deliberately no ANN structure.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::{Frame, ModelBackend};
use crate::interval::TimeInterval;
use crate::task::VideoRef;

/// Magic bytes of the binary index file format.
pub const INDEX_MAGIC: [u8; 4] = *b"VXIX";
/// Current index file format version.
pub const INDEX_VERSION: u32 = 1;
/// Default clip length in seconds.
pub const DEFAULT_CLIP_LEN_S: f64 = 4.0;
/// Default retrieval depth.
pub const DEFAULT_TOP_K: usize = 10;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("empty video: duration must be > 0")]
    EmptyVideo,
    #[error("clip length must be > 0, got {0}")]
    BadClipLen(f64),
    #[error("embedding is zero or non-finite and cannot be normalized")]
    DegenerateEmbedding,
    #[error("degenerate multimodal query: text and image embeddings cancel out")]
    DegenerateMultimodalQuery,
    #[error("embedding dimension {got} does not match index dimension {want}")]
    DimMismatch { got: usize, want: usize },
    #[error("embedding clip {ordinal} of {video_id:?}: {source}")]
    ClipEmbedding {
        video_id: String,
        ordinal: u32,
        source: crate::backends::BackendError,
    },
    #[error("query embedding failed: {0}")]
    QueryEmbedding(crate::backends::BackendError),
    #[error("grounding query text must be non-empty")]
    EmptyQueryText,
    #[error("index file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A unit-L2-norm embedding vector.
///
/// Construction normalizes and rejects zero or non-finite input, so every
/// `Embedding` in the system carries the invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f32>", into = "Vec<f32>")]
pub struct Embedding {
    values: Vec<f32>,
}

impl Embedding {
    pub fn unit(values: Vec<f32>) -> Result<Self, IndexError> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(IndexError::DegenerateEmbedding);
        }
        let norm = values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(IndexError::DegenerateEmbedding);
        }
        let values = values.iter().map(|&v| ((v as f64) / norm) as f32).collect();
        Ok(Self { values })
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Cosine similarity; for unit vectors this is the dot product.
    /// Accumulated in f64 so scores are stable and order-reproducible.
    pub fn cosine(&self, other: &Embedding) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(&a, &b)| (a as f64) * (b as f64))
            .sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().map(|&v| (v as f64) * (v as f64)).sum::<f64>().sqrt()
    }
}

impl TryFrom<Vec<f32>> for Embedding {
    type Error = IndexError;
    fn try_from(values: Vec<f32>) -> Result<Self, IndexError> {
        Embedding::unit(values)
    }
}

impl From<Embedding> for Vec<f32> {
    fn from(e: Embedding) -> Vec<f32> {
        e.values
    }
}

/// Identity of one clip inside its video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMeta {
    pub video_id: String,
    pub interval: TimeInterval,
    pub ordinal: u32,
}

/// A reference to the image half of a multimodal query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ImageRef {
    /// A moment in an indexed video; resolved to a single frame at embed time.
    VideoFrame { video_id: String, timestamp_s: f64 },
    /// A raw frame handle supplied directly.
    Raw(Frame),
}

/// A grounding query: text, optionally fused with an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundingQuery {
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<ImageRef>,
}

impl GroundingQuery {
    pub fn text_only(text: impl Into<String>) -> Self {
        Self { text: text.into(), image_ref: None }
    }
}

/// The offline clip store: every clip of every indexed video with its
/// unit-norm embedding, sorted by `(video_id, ordinal)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipIndex {
    dim: usize,
    clip_len_s: f64,
    entries: Vec<(ClipMeta, Embedding)>,
}

impl ClipIndex {
    pub fn new(dim: usize, clip_len_s: f64) -> Self {
        Self { dim, clip_len_s, entries: Vec::new() }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn clip_len_s(&self) -> f64 {
        self.clip_len_s
    }

    pub fn entries(&self) -> &[(ClipMeta, Embedding)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn push(&mut self, meta: ClipMeta, embedding: Embedding) -> Result<(), IndexError> {
        if embedding.dim() != self.dim {
            return Err(IndexError::DimMismatch { got: embedding.dim(), want: self.dim });
        }
        self.entries.push((meta, embedding));
        self.sort_entries();
        Ok(())
    }

    fn sort_entries(&mut self) {
        self.entries
            .sort_by(|(a, _), (b, _)| a.video_id.cmp(&b.video_id).then(a.ordinal.cmp(&b.ordinal)));
    }
}

/// Cut `[0, duration_s)` into contiguous half-open clips of `clip_len_s`
/// seconds; the last clip absorbs the remainder.
pub fn segment_video(video: &VideoRef, clip_len_s: f64) -> Result<Vec<ClipMeta>, IndexError> {
    if !clip_len_s.is_finite() || clip_len_s <= 0.0 {
        return Err(IndexError::BadClipLen(clip_len_s));
    }
    if video.duration_s <= 0.0 {
        return Err(IndexError::EmptyVideo);
    }
    let n = (video.duration_s / clip_len_s).ceil() as u64;
    let mut clips = Vec::with_capacity(n as usize);
    for i in 0..n {
        let start = i as f64 * clip_len_s;
        let end = ((i + 1) as f64 * clip_len_s).min(video.duration_s);
        if start >= end {
            break; // float edge: duration an exact multiple of clip_len_s
        }
        clips.push(ClipMeta {
            video_id: video.id.clone(),
            interval: TimeInterval::new(start, end).expect("segment bounds are ordered"),
            ordinal: i as u32,
        });
    }
    Ok(clips)
}

/// Build the clip index for one video: segment, embed the frame at each clip
/// midpoint, renormalize, and store in ordinal order.
pub fn build_index(
    video: &VideoRef,
    clip_len_s: f64,
    backend: &dyn ModelBackend,
) -> Result<ClipIndex, IndexError> {
    let clips = segment_video(video, clip_len_s)?;
    let mut entries = Vec::with_capacity(clips.len());
    let mut dim = None;
    for clip in clips {
        let frame = Frame {
            video_id: clip.video_id.clone(),
            timestamp_s: clip.interval.midpoint_s(),
            source: crate::backends::FrameSource::Synthetic {
                descriptor: format!("clip {} of {}", clip.ordinal, clip.video_id),
            },
        };
        let embedding = backend.embed_image(&frame).map_err(|source| IndexError::ClipEmbedding {
            video_id: clip.video_id.clone(),
            ordinal: clip.ordinal,
            source,
        })?;
        if let Some(d) = dim {
            if embedding.dim() != d {
                return Err(IndexError::DimMismatch { got: embedding.dim(), want: d });
            }
        } else {
            dim = Some(embedding.dim());
        }
        entries.push((clip, embedding));
    }
    let mut index = ClipIndex::new(dim.unwrap_or(0), clip_len_s);
    index.entries = entries;
    index.sort_entries();
    Ok(index)
}

/// Embed a grounding query. Text-only queries return the text embedding;
/// multimodal queries take the elementwise mean of the text and image
/// embeddings and renormalize.
///
/// `VideoFrame` image refs are resolved through `resolve_frame` (the single
/// frame at the referenced timestamp).
pub fn embed_query(
    query: &GroundingQuery,
    backend: &dyn ModelBackend,
    resolve_frame: &dyn Fn(&str, f64) -> Result<Frame, crate::backends::BackendError>,
) -> Result<Embedding, IndexError> {
    if query.text.trim().is_empty() {
        return Err(IndexError::EmptyQueryText);
    }
    let text_emb = backend.embed_text(&query.text).map_err(IndexError::QueryEmbedding)?;
    let Some(image_ref) = &query.image_ref else {
        return Ok(text_emb);
    };
    let frame = match image_ref {
        ImageRef::Raw(frame) => frame.clone(),
        ImageRef::VideoFrame { video_id, timestamp_s } => {
            resolve_frame(video_id, *timestamp_s).map_err(IndexError::QueryEmbedding)?
        }
    };
    let image_emb = backend.embed_image(&frame).map_err(IndexError::QueryEmbedding)?;
    if image_emb.dim() != text_emb.dim() {
        return Err(IndexError::DimMismatch { got: image_emb.dim(), want: text_emb.dim() });
    }
    let mean: Vec<f32> = text_emb
        .values()
        .iter()
        .zip(image_emb.values())
        .map(|(&t, &i)| ((t as f64 + i as f64) * 0.5) as f32)
        .collect();
    Embedding::unit(mean).map_err(|_| IndexError::DegenerateMultimodalQuery)
}

/// Top-k retrieval by cosine similarity: exhaustive scan, scores descending,
/// ties broken by earlier clip start then lexicographic video id.
pub fn retrieve(
    index: &ClipIndex,
    query: &Embedding,
    k: usize,
) -> Result<Vec<(ClipMeta, f64)>, IndexError> {
    if query.dim() != index.dim && !index.is_empty() {
        return Err(IndexError::DimMismatch { got: query.dim(), want: index.dim });
    }
    let mut scored: Vec<(ClipMeta, f64)> = index
        .entries
        .iter()
        .map(|(meta, emb)| (meta.clone(), query.cosine(emb)))
        .collect();
    scored.sort_by(|(ma, sa), (mb, sb)| {
        sb.total_cmp(sa)
            .then_with(|| ma.interval.start_s().total_cmp(&mb.interval.start_s()))
            .then_with(|| ma.video_id.cmp(&mb.video_id))
    });
    scored.truncate(k);
    Ok(scored)
}

/// Write the index in the binary `VXIX` format (little-endian).
pub fn write_index(index: &ClipIndex, path: &Path) -> Result<(), IndexError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&INDEX_MAGIC)?;
    w.write_all(&INDEX_VERSION.to_le_bytes())?;
    w.write_all(&(index.dim as u32).to_le_bytes())?;
    w.write_all(&index.clip_len_s.to_le_bytes())?;
    w.write_all(&(index.entries.len() as u64).to_le_bytes())?;
    for (meta, emb) in &index.entries {
        let id_bytes = meta.video_id.as_bytes();
        if id_bytes.len() > u16::MAX as usize {
            return Err(IndexError::Format(format!("video id {:?} too long", meta.video_id)));
        }
        w.write_all(&(id_bytes.len() as u16).to_le_bytes())?;
        w.write_all(id_bytes)?;
        w.write_all(&meta.interval.start_s().to_le_bytes())?;
        w.write_all(&meta.interval.end_s().to_le_bytes())?;
        w.write_all(&meta.ordinal.to_le_bytes())?;
        for &v in emb.values() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Read an index previously written by [`write_index`]. Entries round-trip
/// bit-exactly; stored embeddings are trusted to already be unit-norm.
pub fn read_index(path: &Path) -> Result<ClipIndex, IndexError> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != INDEX_MAGIC {
        return Err(IndexError::Format(format!("bad magic {magic:?}")));
    }
    let version = read_u32(&mut r)?;
    if version != INDEX_VERSION {
        return Err(IndexError::Format(format!("unsupported version {version}")));
    }
    let dim = read_u32(&mut r)? as usize;
    let clip_len_s = read_f64(&mut r)?;
    let count = read_u64(&mut r)?;
    let mut entries = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let id_len = read_u16(&mut r)? as usize;
        let mut id_bytes = vec![0u8; id_len];
        r.read_exact(&mut id_bytes)?;
        let video_id = String::from_utf8(id_bytes)
            .map_err(|_| IndexError::Format("video id is not UTF-8".into()))?;
        let start_s = read_f64(&mut r)?;
        let end_s = read_f64(&mut r)?;
        let ordinal = read_u32(&mut r)?;
        let interval = TimeInterval::new(start_s, end_s)
            .map_err(|e| IndexError::Format(format!("entry interval: {e}")))?;
        let mut values = Vec::with_capacity(dim);
        for _ in 0..dim {
            values.push(read_f32(&mut r)?);
        }
        entries.push((ClipMeta { video_id, interval, ordinal }, Embedding { values }));
    }
    let mut index = ClipIndex::new(dim, clip_len_s);
    index.entries = entries;
    Ok(index)
}

fn read_u16(r: &mut impl Read) -> std::io::Result<u16> {
    let mut b = [0u8; 2];
    r.read_exact(&mut b)?;
    Ok(u16::from_le_bytes(b))
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f32(r: &mut impl Read) -> std::io::Result<f32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(f32::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> std::io::Result<f64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(f64::from_le_bytes(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::VideoRef;
    use proptest::prelude::*;

    const UNIT_NORM_TOL: f64 = 1e-6;

    fn basis(dim: usize, axis: usize) -> Embedding {
        let mut v = vec![0.0f32; dim];
        v[axis] = 1.0;
        Embedding::unit(v).unwrap()
    }

    fn toy_index() -> ClipIndex {
        // Three 4s clips with embeddings e1, e2, (e1+e2)/sqrt(2).
        let mut index = ClipIndex::new(4, 4.0);
        let e1 = basis(4, 0);
        let e2 = basis(4, 1);
        let mix = Embedding::unit(vec![1.0, 1.0, 0.0, 0.0]).unwrap();
        for (i, emb) in [e1, e2, mix].into_iter().enumerate() {
            index
                .push(
                    ClipMeta {
                        video_id: "v".into(),
                        interval: TimeInterval::new(i as f64 * 4.0, (i + 1) as f64 * 4.0).unwrap(),
                        ordinal: i as u32,
                    },
                    emb,
                )
                .unwrap();
        }
        index
    }

    #[test]
    fn segment_covers_duration() {
        let video = VideoRef::new("v", 10.0, 1.0).unwrap();
        let clips = segment_video(&video, 4.0).unwrap();
        let spans: Vec<(f64, f64)> =
            clips.iter().map(|c| (c.interval.start_s(), c.interval.end_s())).collect();
        assert_eq!(spans, vec![(0.0, 4.0), (4.0, 8.0), (8.0, 10.0)]);
    }

    #[test]
    fn segment_single_clip() {
        let video = VideoRef::new("v", 4.0, 1.0).unwrap();
        let clips = segment_video(&video, 4.0).unwrap();
        assert_eq!(clips.len(), 1);
        assert_eq!(clips[0].interval.end_s(), 4.0);
    }

    #[test]
    fn segment_rejects_empty_video() {
        let video = VideoRef::new("v", 0.0, 1.0).unwrap();
        assert!(matches!(segment_video(&video, 4.0), Err(IndexError::EmptyVideo)));
    }

    #[test]
    fn embedding_rejects_zero_and_normalizes() {
        assert!(Embedding::unit(vec![0.0, 0.0]).is_err());
        assert!(Embedding::unit(vec![f32::NAN, 1.0]).is_err());
        let e = Embedding::unit(vec![3.0, 4.0]).unwrap();
        assert!((e.l2_norm() - 1.0).abs() < UNIT_NORM_TOL);
        assert!((e.values()[0] - 0.6).abs() < 1e-6);
    }

    #[test]
    fn multimodal_mean_of_orthonormal_vectors() {
        let q = GroundingQuery {
            text: "anything".into(),
            image_ref: Some(ImageRef::Raw(Frame {
                video_id: "v".into(),
                timestamp_s: 0.0,
                source: crate::backends::FrameSource::Synthetic { descriptor: "f".into() },
            })),
        };
        struct TwoAxis;
        impl ModelBackend for TwoAxis {
            fn backend_id(&self) -> &str {
                "two-axis"
            }
            fn complete(&self, _p: &str) -> Result<String, crate::backends::BackendError> {
                unimplemented!()
            }
            fn vision_answer(
                &self,
                _f: &[Frame],
                _q: &str,
            ) -> Result<String, crate::backends::BackendError> {
                unimplemented!()
            }
            fn embed_text(&self, _t: &str) -> Result<Embedding, crate::backends::BackendError> {
                Ok(Embedding::unit(vec![1.0, 0.0]).unwrap())
            }
            fn embed_image(&self, _f: &Frame) -> Result<Embedding, crate::backends::BackendError> {
                Ok(Embedding::unit(vec![0.0, 1.0]).unwrap())
            }
        }
        let emb = embed_query(&q, &TwoAxis, &|_, _| unreachable!()).unwrap();
        let inv_sqrt2 = 1.0 / 2f32.sqrt();
        assert!((emb.values()[0] - inv_sqrt2).abs() < 1e-6);
        assert!((emb.values()[1] - inv_sqrt2).abs() < 1e-6);
    }

    #[test]
    fn antipodal_multimodal_query_is_degenerate() {
        struct Antipodal;
        impl ModelBackend for Antipodal {
            fn backend_id(&self) -> &str {
                "antipodal"
            }
            fn complete(&self, _p: &str) -> Result<String, crate::backends::BackendError> {
                unimplemented!()
            }
            fn vision_answer(
                &self,
                _f: &[Frame],
                _q: &str,
            ) -> Result<String, crate::backends::BackendError> {
                unimplemented!()
            }
            fn embed_text(&self, _t: &str) -> Result<Embedding, crate::backends::BackendError> {
                Ok(Embedding::unit(vec![1.0, 0.0]).unwrap())
            }
            fn embed_image(&self, _f: &Frame) -> Result<Embedding, crate::backends::BackendError> {
                Ok(Embedding::unit(vec![-1.0, 0.0]).unwrap())
            }
        }
        let q = GroundingQuery {
            text: "anything".into(),
            image_ref: Some(ImageRef::Raw(Frame {
                video_id: "v".into(),
                timestamp_s: 0.0,
                source: crate::backends::FrameSource::Synthetic { descriptor: "f".into() },
            })),
        };
        assert!(matches!(
            embed_query(&q, &Antipodal, &|_, _| unreachable!()),
            Err(IndexError::DegenerateMultimodalQuery)
        ));
    }

    #[test]
    fn retrieve_orders_by_cosine_with_tie_breaks() {
        let index = toy_index();
        let results = retrieve(&index, &basis(4, 0), 10).unwrap();
        assert_eq!(results.len(), 3);
        assert_eq!(results[0].0.ordinal, 0);
        assert!((results[0].1 - 1.0).abs() < 1e-6);
        assert_eq!(results[1].0.ordinal, 2);
        assert!((results[1].1 - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-4);
        assert_eq!(results[2].0.ordinal, 1);
        assert!(results[2].1.abs() < 1e-6);
    }

    #[test]
    fn retrieve_truncates_to_index_size() {
        let index = toy_index();
        assert_eq!(retrieve(&index, &basis(4, 0), 100).unwrap().len(), 3);
        let empty = ClipIndex::new(4, 4.0);
        assert!(retrieve(&empty, &basis(4, 0), 10).unwrap().is_empty());
    }

    #[test]
    fn index_file_round_trips_exactly() {
        let index = toy_index();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.vxix");
        write_index(&index, &path).unwrap();
        let back = read_index(&path).unwrap();
        assert_eq!(back, index);
    }

    proptest! {
        #[test]
        fn ranking_is_scale_invariant(scale in 0.001f32..1000.0) {
            let index = toy_index();
            let raw = vec![0.3f32, 0.2, 0.9, 0.1];
            let q1 = Embedding::unit(raw.clone()).unwrap();
            let q2 = Embedding::unit(raw.iter().map(|v| v * scale).collect()).unwrap();
            let r1: Vec<u32> =
                retrieve(&index, &q1, 3).unwrap().iter().map(|(m, _)| m.ordinal).collect();
            let r2: Vec<u32> =
                retrieve(&index, &q2, 3).unwrap().iter().map(|(m, _)| m.ordinal).collect();
            prop_assert_eq!(r1, r2);
        }
    }
}
