//! Label-free pretraining corpus and the positive-pair / triplet samplers.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sigproc::{Segment, SEGMENT_LEN, TARGET_HZ};

/// Time-ordered segments of one recording. Carries no label.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainRecording {
    pub patient_id: String,
    pub recording_id: String,
    pub starts: Vec<usize>,
    pub segments: Vec<Vec<f64>>,
}

impl PretrainRecording {
    pub fn start_time_s(&self, k: usize) -> f64 {
        self.starts[k] as f64 / TARGET_HZ
    }
}

/// Pretraining input. Built from segments by discarding every label.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PretrainCorpus {
    pub recordings: Vec<PretrainRecording>,
}

/// Index of one segment inside a [`PretrainCorpus`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SegmentRef {
    pub recording: usize,
    pub index: usize,
}

pub type Pair = (SegmentRef, SegmentRef);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Triplet {
    pub anchor: SegmentRef,
    pub near: SegmentRef,
    pub far: SegmentRef,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairProvenance {
    Augmented,
    Consecutive,
    CrossRecording,
    Mixup,
}

/// Where the two strips of a mix-up pair come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum MixupSource {
    #[default]
    SameRecording,
    DifferentRecordings,
}

impl PretrainCorpus {
    /// Group segments by recording (first-seen order), sorted by start.
    pub fn from_segments(segments: &[Segment]) -> Self {
        let mut order: Vec<String> = Vec::new();
        let mut by_rec: BTreeMap<String, PretrainRecording> = BTreeMap::new();
        for s in segments {
            let rec = by_rec.entry(s.recording_id.clone()).or_insert_with(|| {
                order.push(s.recording_id.clone());
                PretrainRecording {
                    patient_id: s.patient_id.clone(),
                    recording_id: s.recording_id.clone(),
                    starts: Vec::new(),
                    segments: Vec::new(),
                }
            });
            rec.starts.push(s.start_index);
            rec.segments.push(s.values.clone());
        }
        let recordings = order
            .into_iter()
            .map(|id| {
                let mut r = by_rec.remove(&id).expect("recorded id");
                let mut idx: Vec<usize> = (0..r.starts.len()).collect();
                idx.sort_by_key(|&i| r.starts[i]);
                r.starts = idx.iter().map(|&i| r.starts[i]).collect();
                r.segments = idx.iter().map(|&i| std::mem::take(&mut r.segments[i])).collect();
                r
            })
            .collect();
        Self { recordings }
    }

    pub fn n_segments(&self) -> usize {
        self.recordings.iter().map(|r| r.segments.len()).sum()
    }

    pub fn get(&self, r: SegmentRef) -> &[f64] {
        &self.recordings[r.recording].segments[r.index]
    }

    pub fn all_refs(&self) -> Vec<SegmentRef> {
        self.recordings
            .iter()
            .enumerate()
            .flat_map(|(ri, r)| (0..r.segments.len()).map(move |index| SegmentRef { recording: ri, index }))
            .collect()
    }

    /// Recording indices per patient, patients in first-seen order.
    pub fn patients(&self) -> Vec<(String, Vec<usize>)> {
        let mut out: Vec<(String, Vec<usize>)> = Vec::new();
        for (i, r) in self.recordings.iter().enumerate() {
            if r.segments.is_empty() {
                continue;
            }
            match out.iter_mut().find(|(p, _)| *p == r.patient_id) {
                Some((_, v)) => v.push(i),
                None => out.push((r.patient_id.clone(), vec![i])),
            }
        }
        out
    }
}

/// `n` segments drawn uniformly with replacement.
pub fn sample_segments(corpus: &PretrainCorpus, n: usize, rng: &mut impl Rng) -> Result<Vec<SegmentRef>> {
    let all = corpus.all_refs();
    if all.is_empty() {
        return Err(Error::config("pretraining corpus has no segments"));
    }
    Ok((0..n).map(|_| all[rng.gen_range(0..all.len())]).collect())
}

/// Disjoint adjacent pairs `(k, k+1), (k+2, k+3), ...` within every
/// recording, shuffled. Only strips that abut in time are paired.
pub fn sample_clocs_pairs(corpus: &PretrainCorpus, rng: &mut impl Rng) -> Result<Vec<Pair>> {
    let mut pairs = Vec::new();
    for (ri, r) in corpus.recordings.iter().enumerate() {
        if r.segments.len() < 2 {
            log::warn!("recording {} has fewer than 2 segments; no consecutive pairs", r.recording_id);
            continue;
        }
        let mut k = 0;
        while k + 1 < r.segments.len() {
            if r.starts[k + 1] == r.starts[k] + SEGMENT_LEN {
                pairs.push((SegmentRef { recording: ri, index: k }, SegmentRef { recording: ri, index: k + 1 }));
                k += 2;
            } else {
                k += 1;
            }
        }
    }
    if pairs.is_empty() {
        return Err(Error::config(
            "consecutive-strip pairs need a recording with two abutting segments (segment stride must equal the segment length)",
        ));
    }
    pairs.shuffle(rng);
    Ok(pairs)
}

/// `n_batches` batches of `n` pairs, each pair drawn from two distinct
/// recordings of one patient.
pub fn sample_pclr_pairs(corpus: &PretrainCorpus, n_batches: usize, n: usize, rng: &mut impl Rng) -> Result<Vec<Vec<Pair>>> {
    let patients = corpus.patients();
    let eligible: Vec<&Vec<usize>> = patients.iter().filter(|(_, r)| r.len() >= 2).map(|(_, r)| r).collect();
    if eligible.is_empty() {
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for (_, r) in &patients {
            *counts.entry(r.len()).or_default() += 1;
        }
        let listing: Vec<String> = counts.iter().map(|(k, v)| format!("{v} with {k}")).collect();
        return Err(Error::config(format!(
            "cross-recording pairs need a patient with at least 2 recordings; patients by recording count: {}",
            if listing.is_empty() { "none".to_string() } else { listing.join(", ") }
        )));
    }
    let mut order: Vec<usize> = (0..eligible.len()).collect();
    let mut cursor = order.len();
    let mut batches = Vec::with_capacity(n_batches);
    for _ in 0..n_batches {
        let mut batch = Vec::with_capacity(n);
        for _ in 0..n {
            if cursor == order.len() {
                order.shuffle(rng);
                cursor = 0;
            }
            let recs = eligible[order[cursor]];
            cursor += 1;
            let picked: Vec<&usize> = recs.choose_multiple(rng, 2).collect();
            let pick = |ri: usize, rng: &mut dyn rand::RngCore| SegmentRef {
                recording: ri,
                index: rng.gen_range(0..corpus.recordings[ri].segments.len()),
            };
            let a = pick(*picked[0], rng);
            let b = pick(*picked[1], rng);
            batch.push((a, b));
        }
        batches.push(batch);
    }
    Ok(batches)
}

/// `n` pairs of distinct strips for mix-up.
pub fn sample_mixup_pairs(corpus: &PretrainCorpus, n: usize, source: MixupSource, rng: &mut impl Rng) -> Result<Vec<Pair>> {
    match source {
        MixupSource::SameRecording => {
            let eligible: Vec<usize> = (0..corpus.recordings.len())
                .filter(|&i| corpus.recordings[i].segments.len() >= 2)
                .collect();
            if eligible.is_empty() {
                return Err(Error::config("mix-up within a recording needs a recording with at least 2 segments"));
            }
            Ok((0..n)
                .map(|_| {
                    let ri = eligible[rng.gen_range(0..eligible.len())];
                    let idx: Vec<usize> = (0..corpus.recordings[ri].segments.len()).collect();
                    let two: Vec<&usize> = idx.choose_multiple(rng, 2).collect();
                    (SegmentRef { recording: ri, index: *two[0] }, SegmentRef { recording: ri, index: *two[1] })
                })
                .collect())
        }
        MixupSource::DifferentRecordings => {
            let eligible: Vec<usize> = (0..corpus.recordings.len())
                .filter(|&i| !corpus.recordings[i].segments.is_empty())
                .collect();
            if eligible.len() < 2 {
                return Err(Error::config("mix-up across recordings needs at least 2 non-empty recordings"));
            }
            Ok((0..n)
                .map(|_| {
                    let two: Vec<&usize> = eligible.choose_multiple(rng, 2).collect();
                    let pick = |ri: usize, rng: &mut dyn rand::RngCore| SegmentRef {
                        recording: ri,
                        index: rng.gen_range(0..corpus.recordings[ri].segments.len()),
                    };
                    let a = pick(*two[0], rng);
                    let b = pick(*two[1], rng);
                    (a, b)
                })
                .collect())
        }
    }
}

/// Anchor indices of recording `r` that have both a near and a far partner,
/// with their candidate lists.
fn triplet_candidates(r: &PretrainRecording, gap_near_s: f64, gap_far_s: f64) -> Vec<(usize, Vec<usize>, Vec<usize>)> {
    let n = r.segments.len();
    (0..n)
        .filter_map(|a| {
            let ta = r.start_time_s(a);
            let near: Vec<usize> = (0..n)
                .filter(|&j| j != a && (r.start_time_s(j) - ta).abs() <= gap_near_s)
                .collect();
            let far: Vec<usize> = (0..n).filter(|&j| (r.start_time_s(j) - ta).abs() >= gap_far_s).collect();
            (!near.is_empty() && !far.is_empty()).then_some((a, near, far))
        })
        .collect()
}

/// `n_batches` batches of `b` triplets; all three strips of a triplet come
/// from one recording.
pub fn sample_triplets(
    corpus: &PretrainCorpus,
    n_batches: usize,
    b: usize,
    gap_near_s: f64,
    gap_far_s: f64,
    rng: &mut impl Rng,
) -> Result<Vec<Vec<Triplet>>> {
    if !(gap_near_s > 0.0 && gap_near_s < gap_far_s) {
        return Err(Error::config(format!(
            "triplet gaps must satisfy 0 < near < far, got near {gap_near_s} s, far {gap_far_s} s"
        )));
    }
    let cands: Vec<(usize, Vec<(usize, Vec<usize>, Vec<usize>)>)> = corpus
        .recordings
        .iter()
        .enumerate()
        .map(|(i, r)| (i, triplet_candidates(r, gap_near_s, gap_far_s)))
        .filter(|(_, c)| !c.is_empty())
        .collect();
    if cands.is_empty() {
        return Err(Error::config(format!(
            "triplet sampling needs a recording longer than {gap_far_s} s plus one segment"
        )));
    }
    Ok((0..n_batches)
        .map(|_| {
            (0..b)
                .map(|_| {
                    let (ri, anchors) = &cands[rng.gen_range(0..cands.len())];
                    let (a, near, far) = &anchors[rng.gen_range(0..anchors.len())];
                    let at = |index: usize| SegmentRef { recording: *ri, index };
                    Triplet {
                        anchor: at(*a),
                        near: at(near[rng.gen_range(0..near.len())]),
                        far: at(far[rng.gen_range(0..far.len())]),
                    }
                })
                .collect()
        })
        .collect())
}
