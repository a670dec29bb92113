use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::sigproc::Segment;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSplit {
    pub fold: usize,
    pub train_patients: Vec<String>,
    pub test_patients: Vec<String>,
}

/// One label per patient, sorted by id. Errors on unlabeled segments or a
/// patient carrying both labels.
pub fn patient_labels(segments: &[Segment]) -> Result<Vec<(String, u8)>> {
    let mut out: BTreeMap<&str, u8> = BTreeMap::new();
    for s in segments {
        let label = s
            .label
            .ok_or_else(|| Error::data(format!("segment of recording {} has no label", s.recording_id)))?;
        match out.insert(&s.patient_id, label) {
            Some(prev) if prev != label => {
                return Err(Error::data(format!("patient {} has conflicting labels", s.patient_id)));
            }
            _ => {}
        }
    }
    Ok(out.into_iter().map(|(p, l)| (p.to_string(), l)).collect())
}

/// Shuffle each class with the seed and deal patients round-robin into `k`
/// folds; class 1 starts where class 0 stopped so fold sizes stay even.
pub fn make_stratified_patient_folds(patients: &[(String, u8)], k: usize, seed: u64) -> Result<Vec<FoldSplit>> {
    if k < 2 {
        return Err(Error::config(format!("need at least 2 folds, got {k}")));
    }
    let unique: BTreeSet<&str> = patients.iter().map(|(p, _)| p.as_str()).collect();
    if unique.len() != patients.len() {
        return Err(Error::data("patient list contains duplicates"));
    }
    let mut by_class: [Vec<&str>; 2] = [Vec::new(), Vec::new()];
    for (p, l) in patients {
        match l {
            0 | 1 => by_class[usize::from(*l)].push(p),
            _ => return Err(Error::data(format!("patient {p} has label {l}"))),
        }
    }
    if by_class.iter().any(|c| c.len() < k) {
        return Err(Error::config(format!(
            "{k}-fold split needs at least {k} patients per class; have {} control and {} positive",
            by_class[0].len(),
            by_class[1].len()
        )));
    }
    let mut test: Vec<Vec<String>> = vec![Vec::new(); k];
    let mut offset = 0;
    for (class, ids) in by_class.iter_mut().enumerate() {
        ids.sort_unstable();
        ids.shuffle(&mut rng::stream(seed, &[class as u64]));
        for (j, p) in ids.iter().enumerate() {
            test[(j + offset) % k].push(p.to_string());
        }
        offset = (offset + ids.len()) % k;
    }
    Ok(test
        .into_iter()
        .enumerate()
        .map(|(fold, mut test_patients)| {
            test_patients.sort();
            let held: BTreeSet<&str> = test_patients.iter().map(String::as_str).collect();
            let train_patients = unique.iter().filter(|p| !held.contains(*p)).map(|p| p.to_string()).collect();
            FoldSplit {
                fold,
                train_patients,
                test_patients,
            }
        })
        .collect())
}

/// Stratified subset of `n` patients (half per class, rounding toward
/// class 1), deterministic in `seed`.
pub fn stratified_subset(patients: &[(String, u8)], n: usize, seed: u64) -> Result<Vec<(String, u8)>> {
    let mut by_class: [Vec<&(String, u8)>; 2] = [Vec::new(), Vec::new()];
    for p in patients {
        by_class[usize::from(p.1 == 1)].push(p);
    }
    let want = [n / 2, n - n / 2];
    let mut out = Vec::with_capacity(n);
    for c in 0..2 {
        if by_class[c].len() < want[c] || want[c] == 0 {
            return Err(Error::config(format!(
                "label budget of {n} needs {} class-{c} patients, have {}",
                want[c].max(1),
                by_class[c].len()
            )));
        }
        by_class[c].sort();
        by_class[c].shuffle(&mut rng::stream(seed, &[c as u64]));
        out.extend(by_class[c][..want[c]].iter().map(|p| (*p).clone()));
    }
    out.sort();
    Ok(out)
}

/// Split patients into (train, validation) with `fraction` of each class,
/// at least one per class, held out.
pub fn inner_validation_split(
    patients: &[(String, u8)],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<(String, u8)>, Vec<(String, u8)>)> {
    let mut train = Vec::new();
    let mut val = Vec::new();
    for c in 0..2u8 {
        let mut ids: Vec<&(String, u8)> = patients.iter().filter(|p| p.1 == c).collect();
        if ids.len() < 2 {
            return Err(Error::config(format!(
                "inner validation split needs at least 2 class-{c} patients, have {}",
                ids.len()
            )));
        }
        ids.sort();
        ids.shuffle(&mut rng::stream(seed, &[u64::from(c)]));
        let n_val = ((ids.len() as f64 * fraction).round() as usize).clamp(1, ids.len() - 1);
        val.extend(ids[..n_val].iter().map(|p| (*p).clone()));
        train.extend(ids[n_val..].iter().map(|p| (*p).clone()));
    }
    train.sort();
    val.sort();
    Ok((train, val))
}
