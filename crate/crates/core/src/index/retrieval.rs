//! Query embedding, threshold calibration, evidence clustering and
//! threshold-based retrieval on both index levels.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::embed::{distance, normalize, Embedder};
use super::vector::VectorIndex;
use super::{IndexError, TwoLevelIndex};
use crate::catalog::{AttributeSpec, Segment};

pub const INITIAL_TAU: f64 = 1.2;
pub const DEFAULT_GAMMA: f64 = 0.5;
pub const THRESHOLD_MARGIN: f64 = 0.1;
pub const DEFAULT_K: usize = 3;
pub const KMEANS_MAX_ITER: usize = 50;
pub const SYNTHESIZED_EXEMPLARS: usize = 20;

/// Normalized mean of the `"name: description"` embeddings.
pub fn query_embedding(attrs: &[AttributeSpec], embedder: &dyn Embedder) -> Result<Vec<f32>, IndexError> {
    assert!(!attrs.is_empty(), "query embedding needs at least one attribute");
    let mut acc = vec![0f64; embedder.dim()];
    for a in attrs {
        let v = embedder.embed(&a.embedding_text())?;
        acc.iter_mut().zip(&v).for_each(|(s, &x)| *s += x as f64);
    }
    let n = attrs.len() as f64;
    Ok(normalize(acc.into_iter().map(|x| (x / n) as f32).collect()))
}

/// Documents strictly closer than `tau` to the query, in index order.
pub fn retrieve_documents(index: &VectorIndex, query: &[f32], tau: f64) -> Vec<String> {
    index.within(query, tau).into_iter().map(|(id, _)| id.to_string()).collect()
}

/// Largest relevant-document distance plus the margin.
pub fn tau_from_distances(relevant: &[f64]) -> Result<f64, IndexError> {
    relevant
        .iter()
        .copied()
        .reduce(f64::max)
        .map(|m| m + THRESHOLD_MARGIN)
        .ok_or_else(|| IndexError::CalibrationFailed("no sampled document carried a query attribute".into()))
}

/// Calibrates τ from sampled documents flagged relevant (some attribute found).
pub fn calibrate_tau(index: &VectorIndex, query: &[f32], outcomes: &[(String, bool)]) -> Result<f64, IndexError> {
    let dists: Vec<f64> = outcomes
        .iter()
        .filter(|(_, relevant)| *relevant)
        .filter_map(|(id, _)| index.get(id).map(|v| distance(v, query)))
        .collect();
    tau_from_distances(&dists)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaState {
    pub gamma: f64,
    /// Set when fewer than two distinct evidence embeddings were available.
    pub fallback: bool,
}

/// Largest pairwise distance plus the margin; `default` when fewer than two
/// distinct embeddings are available, since identical evidence says nothing
/// about how far relevant segments spread.
pub fn calibrate_gamma(embeddings: &[Vec<f32>], default: f64) -> GammaState {
    let mut max = 0f64;
    for i in 0..embeddings.len() {
        for j in i + 1..embeddings.len() {
            max = max.max(distance(&embeddings[i], &embeddings[j]));
        }
    }
    if max == 0.0 {
        return GammaState {
            gamma: default,
            fallback: true,
        };
    }
    GammaState {
        gamma: max + THRESHOLD_MARGIN,
        fallback: false,
    }
}

/// k-means over unit vectors with farthest-point seeding. Centers are
/// renormalized after every update. Returns `min(k, n)` centers.
pub fn kmeans(points: &[Vec<f32>], k: usize, seed: u64) -> Vec<Vec<f32>> {
    let n = points.len();
    let k = k.min(n);
    if k == 0 {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f32>> = vec![points[rng.gen_range(0..n)].clone()];
    while centers.len() < k {
        let far = (0..n)
            .map(|i| {
                let d = centers
                    .iter()
                    .map(|c| distance(&points[i], c))
                    .fold(f64::INFINITY, f64::min);
                (i, d)
            })
            .fold((0, -1.0), |best, cur| if cur.1 > best.1 { cur } else { best });
        centers.push(points[far.0].clone());
    }
    let mut assign = vec![usize::MAX; n];
    for _ in 0..KMEANS_MAX_ITER {
        let next: Vec<usize> = points
            .iter()
            .map(|p| {
                (0..k)
                    .map(|c| (c, distance(p, &centers[c])))
                    .fold((0, f64::INFINITY), |b, cur| if cur.1 < b.1 { cur } else { b })
                    .0
            })
            .collect();
        if next == assign {
            break;
        }
        assign = next;
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f32>> = points.iter().zip(&assign).filter(|(_, &a)| a == c).map(|(p, _)| p).collect();
            if members.is_empty() {
                continue;
            }
            let mut mean = vec![0f64; center.len()];
            for m in &members {
                mean.iter_mut().zip(m.iter()).for_each(|(s, &x)| *s += x as f64);
            }
            *center = normalize(mean.into_iter().map(|x| (x / members.len() as f64) as f32).collect());
        }
    }
    centers
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvidenceSource {
    Sampled,
    Synthesized,
    /// The attribute's own description; used when planning without sampling.
    Description,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSet {
    /// Qualified attribute name.
    pub attribute: String,
    pub centers: Vec<Vec<f32>>,
    pub source: EvidenceSource,
}

/// Clusters the embeddings of segments where the attribute was found. With
/// no such segments, `synthesize` is asked for exemplar passages instead.
pub fn collect_evidence<F>(
    attribute: &str,
    provenance: &[Vec<f32>],
    k: usize,
    seed: u64,
    embedder: &dyn Embedder,
    synthesize: F,
) -> Result<EvidenceSet, IndexError>
where
    F: FnOnce() -> Result<Vec<String>, String>,
{
    if !provenance.is_empty() {
        return Ok(EvidenceSet {
            attribute: attribute.to_string(),
            centers: kmeans(provenance, k, seed),
            source: EvidenceSource::Sampled,
        });
    }
    let texts = synthesize().map_err(|e| IndexError::EvidenceUnavailable(format!("{attribute}: {e}")))?;
    if texts.is_empty() {
        return Err(IndexError::EvidenceUnavailable(format!("{attribute}: provider returned no exemplars")));
    }
    let embs = texts
        .iter()
        .map(|t| embedder.embed(t))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(EvidenceSet {
        attribute: attribute.to_string(),
        centers: kmeans(&embs, k, seed),
        source: EvidenceSource::Synthesized,
    })
}

/// Segments of one document selected for one attribute.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentSelection<'a> {
    pub segments: Vec<&'a Segment>,
    pub tokens: usize,
}

impl SegmentSelection<'_> {
    pub fn seg_ids(&self) -> Vec<String> {
        self.segments.iter().map(|s| s.seg_id.clone()).collect()
    }
}

/// Union over evidence centers of the document's segments within γ of a
/// center, deduplicated and in document order.
pub fn retrieve_segments<'a>(
    index: &'a TwoLevelIndex,
    doc_id: &str,
    evidence: &EvidenceSet,
    gamma: f64,
) -> SegmentSelection<'a> {
    let segments: Vec<&Segment> = index
        .segments_of(doc_id)
        .iter()
        .filter(|s| evidence.centers.iter().any(|c| distance(&s.embedding, c) < gamma))
        .collect();
    let tokens = segments.iter().map(|s| s.token_count).sum();
    SegmentSelection { segments, tokens }
}

/// Calibrated distance thresholds for one query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdState {
    pub tau: f64,
    /// False while τ still holds its initial value.
    pub calibrated: bool,
    pub gamma: BTreeMap<String, GammaState>,
}

impl Default for ThresholdState {
    fn default() -> Self {
        Self {
            tau: INITIAL_TAU,
            calibrated: false,
            gamma: BTreeMap::new(),
        }
    }
}

impl ThresholdState {
    pub fn gamma_for(&self, attribute: &str) -> f64 {
        self.gamma.get(attribute).map(|g| g.gamma).unwrap_or(DEFAULT_GAMMA)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
enum StateRecord {
    Tau { tau: f64, calibrated: bool },
    Attribute {
        attribute: String,
        gamma: GammaState,
        evidence: Option<EvidenceSet>,
    },
}

/// Writes τ and one record per attribute (γ plus evidence centers).
pub fn save_state(path: &Path, state: &ThresholdState, evidence: &[EvidenceSet]) -> Result<(), IndexError> {
    let mut out = Vec::new();
    let mut push = |r: &StateRecord| {
        out.extend(serde_json::to_vec(r).expect("state serializes"));
        out.push(b'\n');
    };
    push(&StateRecord::Tau {
        tau: state.tau,
        calibrated: state.calibrated,
    });
    for (attr, g) in &state.gamma {
        push(&StateRecord::Attribute {
            attribute: attr.clone(),
            gamma: *g,
            evidence: evidence.iter().find(|e| &e.attribute == attr).cloned(),
        });
    }
    let mut f = fs::File::create(path).map_err(|e| IndexError::io(path, e))?;
    f.write_all(&out).map_err(|e| IndexError::io(path, e))
}

pub fn load_state(path: &Path) -> Result<(ThresholdState, Vec<EvidenceSet>), IndexError> {
    let text = fs::read_to_string(path).map_err(|e| IndexError::io(path, e))?;
    let mut state = ThresholdState::default();
    let mut evidence = Vec::new();
    for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let rec: StateRecord = serde_json::from_str(line).map_err(|e| IndexError::Format {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?;
        match rec {
            StateRecord::Tau { tau, calibrated } => {
                state.tau = tau;
                state.calibrated = calibrated;
            }
            StateRecord::Attribute {
                attribute,
                gamma,
                evidence: ev,
            } => {
                state.gamma.insert(attribute, gamma);
                evidence.extend(ev);
            }
        }
    }
    Ok((state, evidence))
}
