//! Long-term windowed inference: the most confident strip in a window
//! decides the window's label.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::metrics::compute_metrics;
use crate::error::{Error, Result};

pub const STRIP_S: f64 = 10.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StripPrediction {
    pub recording_id: String,
    pub start_s: f64,
    pub label: u8,
    /// `max(p, 1 - p)`.
    pub confidence: f64,
}

impl StripPrediction {
    pub fn from_proba(recording_id: impl Into<String>, start_s: f64, p: f64) -> Self {
        Self {
            recording_id: recording_id.into(),
            start_s,
            label: u8::from(p >= 0.5),
            confidence: p.max(1.0 - p),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowPrediction {
    pub recording_id: String,
    pub start_s: f64,
    pub label: u8,
}

fn check_window(w_s: f64) -> Result<()> {
    let k = w_s / STRIP_S;
    if !(w_s > 0.0) || (k - k.round()).abs() > 1e-9 {
        return Err(Error::config(format!("window must be a positive multiple of {STRIP_S} s, got {w_s}")));
    }
    Ok(())
}

/// Strips grouped by recording (sorted by id), each group sorted by time.
fn by_recording(strips: &[StripPrediction]) -> BTreeMap<&str, Vec<&StripPrediction>> {
    let mut groups: BTreeMap<&str, Vec<&StripPrediction>> = BTreeMap::new();
    for s in strips {
        groups.entry(&s.recording_id).or_default().push(s);
    }
    for g in groups.values_mut() {
        g.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
    }
    groups
}

/// Consecutive windows of `w_s` seconds measured from each recording's first
/// strip. Ties in confidence go to the earliest strip.
pub fn windowed_inference(strips: &[StripPrediction], w_s: f64) -> Result<Vec<WindowPrediction>> {
    check_window(w_s)?;
    let mut out = Vec::new();
    for (rec, group) in by_recording(strips) {
        let t0 = group[0].start_s;
        let mut current: Option<(usize, &StripPrediction)> = None;
        for s in group {
            let w = ((s.start_s - t0) / w_s + 1e-9).floor() as usize;
            match current {
                Some((cw, best)) if cw == w => {
                    if s.confidence > best.confidence {
                        current = Some((w, s));
                    }
                }
                Some((cw, best)) => {
                    out.push(WindowPrediction {
                        recording_id: rec.to_string(),
                        start_s: t0 + cw as f64 * w_s,
                        label: best.label,
                    });
                    current = Some((w, s));
                }
                None => current = Some((w, s)),
            }
        }
        if let Some((cw, best)) = current {
            out.push(WindowPrediction {
                recording_id: rec.to_string(),
                start_s: t0 + cw as f64 * w_s,
                label: best.label,
            });
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRow {
    pub window_s: f64,
    pub accuracy: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowSweepResult {
    pub rows: Vec<WindowRow>,
    pub best_window_s: f64,
}

impl WindowSweepResult {
    pub fn best(&self) -> &WindowRow {
        self.rows
            .iter()
            .find(|r| r.window_s == self.best_window_s)
            .expect("best window is one of the rows")
    }

    pub fn to_csv(&self, config_hash: &str) -> String {
        let mut s = format!("# config_hash={config_hash}\nwindow_s,accuracy,f1\n");
        for r in &self.rows {
            s.push_str(&format!("{},{},{}\n", r.window_s, r.accuracy, r.f1));
        }
        s
    }
}

/// `10, 20, ...` up to the longest recording's strip span.
pub fn default_window_grid(strips: &[StripPrediction]) -> Vec<f64> {
    let longest = by_recording(strips)
        .values()
        .map(|g| g.last().unwrap().start_s - g[0].start_s + STRIP_S)
        .fold(STRIP_S, f64::max);
    let n = (longest / STRIP_S + 1e-9).floor() as usize;
    (1..=n).map(|k| k as f64 * STRIP_S).collect()
}

/// Window-level accuracy and F1 per window size, with recording-level
/// ground truth. `W*` maximises F1, the smallest `W` winning ties.
pub fn sweep_window(
    strips: &[StripPrediction],
    truth: &BTreeMap<String, u8>,
    grid: &[f64],
) -> Result<WindowSweepResult> {
    if grid.is_empty() {
        return Err(Error::config("window grid is empty"));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &w in grid {
        let windows = windowed_inference(strips, w)?;
        let mut y_true = Vec::with_capacity(windows.len());
        let mut y_pred = Vec::with_capacity(windows.len());
        for win in &windows {
            let t = truth
                .get(&win.recording_id)
                .ok_or_else(|| Error::data(format!("no ground truth for recording {}", win.recording_id)))?;
            y_true.push(*t);
            y_pred.push(win.label);
        }
        let scores: Vec<f64> = y_pred.iter().map(|&p| f64::from(p)).collect();
        let m = compute_metrics(&y_true, &y_pred, &scores)?;
        rows.push(WindowRow {
            window_s: w,
            accuracy: m.accuracy,
            f1: m.f1,
        });
    }
    let mut sorted: Vec<&WindowRow> = rows.iter().collect();
    sorted.sort_by(|a, b| a.window_s.total_cmp(&b.window_s));
    let best = sorted
        .iter()
        .fold(sorted[0], |best, r| if r.f1 > best.f1 { r } else { best });
    Ok(WindowSweepResult {
        best_window_s: best.window_s,
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strip(rec: &str, t: f64, label: u8, conf: f64) -> StripPrediction {
        StripPrediction {
            recording_id: rec.into(),
            start_s: t,
            label,
            confidence: conf,
        }
    }

    #[test]
    fn ten_second_window_is_identity() {
        let s = vec![strip("a", 0.0, 1, 0.6), strip("a", 10.0, 0, 0.7), strip("b", 0.0, 0, 0.9)];
        let w = windowed_inference(&s, 10.0).unwrap();
        assert_eq!(w.iter().map(|x| x.label).collect::<Vec<_>>(), vec![1, 0, 0]);
    }

    #[test]
    fn most_confident_strip_wins() {
        let s = vec![strip("a", 0.0, 1, 0.9), strip("a", 10.0, 0, 0.95), strip("a", 20.0, 1, 0.6)];
        let w = windowed_inference(&s, 30.0).unwrap();
        assert_eq!(w.len(), 1);
        assert_eq!(w[0].label, 0);
    }

    #[test]
    fn tie_goes_to_earliest() {
        let s = vec![strip("a", 10.0, 0, 0.8), strip("a", 0.0, 1, 0.8)];
        assert_eq!(windowed_inference(&s, 20.0).unwrap()[0].label, 1);
    }

    #[test]
    fn oversize_window_is_one_window() {
        let s = vec![strip("a", 0.0, 1, 0.6), strip("a", 10.0, 1, 0.7)];
        assert_eq!(windowed_inference(&s, 1000.0).unwrap().len(), 1);
        assert!(windowed_inference(&s, 15.0).is_err());
    }

    #[test]
    fn sweep_single_window_and_csv() {
        let s = vec![strip("a", 0.0, 1, 0.6), strip("b", 0.0, 0, 0.7)];
        let truth: BTreeMap<String, u8> = [("a".to_string(), 1), ("b".to_string(), 0)].into();
        let r = sweep_window(&s, &truth, &[10.0]).unwrap();
        assert_eq!(r.best_window_s, 10.0);
        let csv = r.to_csv("abc");
        assert_eq!(csv.lines().filter(|l| !l.starts_with('#')).count(), 2);
    }

    #[test]
    fn sweep_ties_pick_smallest() {
        let s = vec![strip("a", 0.0, 1, 0.6), strip("a", 10.0, 1, 0.7)];
        let truth: BTreeMap<String, u8> = [("a".to_string(), 1)].into();
        let r = sweep_window(&s, &truth, &[20.0, 10.0]).unwrap();
        assert_eq!(r.best_window_s, 10.0);
        assert_eq!(default_window_grid(&s), vec![10.0, 20.0]);
    }
}
