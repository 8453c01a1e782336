//! Energy-detector identification of effective delay taps.
//!
//! With the zero-padded pattern, sample `l N_c + d` only sees tap `d`, so
//! averaging `|y|^2` over subframes yields one energy statistic per tap.

use alloc::vec;
use alloc::vec::Vec;
use core::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::probing::RxTrace;
use crate::prelude::*;

/// Per-tap test statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapStats {
    /// `Y_d`, the mean received energy on tap `d`.
    pub ts: Vec<f64>,
    /// `(Y_d - s2) / max_m (Y_m - s2)`, all zeros when no tap exceeds the
    /// noise floor.
    pub nts: Vec<f64>,
    /// Number of subframes averaged.
    pub l_used: usize,
    /// Noise variance the statistics were normalized with.
    pub noise_var: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    /// Threshold on the normalized statistic.
    pub mu: f64,
    /// Maximum number of selected taps.
    pub cap: usize,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        Self { mu: 0.03, cap: 8 }
    }
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu < 1.0) || self.cap == 0 {
            return Err(Error::InvalidConfig(
                "detector needs 0 < mu < 1 and cap >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Averages `|y(l N_c + d)|^2` over every subframe of every trace.
///
/// `noise_var` is the variance used for normalization; callers pass the
/// true value or an estimate of it.
pub fn tap_statistics(traces: &[RxTrace], n_taps: usize, noise_var: f64) -> Result<TapStats> {
    if traces.is_empty() {
        return Err(Error::EmptyTraces);
    }
    if n_taps == 0 {
        return Err(Error::InvalidConfig("n_taps must be >= 1".into()));
    }
    let mut ts = vec![0.0; n_taps];
    let mut l_used = 0;
    for tr in traces {
        if tr.samples.len() % n_taps != 0 {
            return Err(Error::NonIntegerSubframes {
                frame_len: tr.samples.len(),
                n_taps,
            });
        }
        for sub in tr.samples.chunks_exact(n_taps) {
            for (acc, y) in ts.iter_mut().zip(sub) {
                *acc += y.norm_sqr();
            }
            l_used += 1;
        }
    }
    if l_used == 0 {
        return Err(Error::EmptyTraces);
    }
    for v in &mut ts {
        *v /= l_used as f64;
    }
    let denom = ts.iter().map(|y| y - noise_var).fold(0.0, f64::max);
    let nts = if denom > 0.0 {
        ts.iter().map(|y| (y - noise_var) / denom).collect()
    } else {
        vec![0.0; n_taps]
    };
    Ok(TapStats {
        ts,
        nts,
        l_used,
        noise_var,
    })
}

/// Indices of the `k` largest values, ties going to the smaller index.
fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    idx
}

/// Taps passing both the normalized threshold and the noise floor.
pub fn candidate_taps(stats: &TapStats, mu: f64) -> Vec<usize> {
    (0..stats.ts.len())
        .filter(|&d| stats.nts[d] >= mu && stats.ts[d] > stats.noise_var)
        .collect()
}

/// Selected tap set, sorted ascending.
///
/// Candidates are kept as-is when there are at most `cap` of them; too many
/// are cut to the `cap` largest normalized statistics, and none at all falls
/// back to the `cap` largest raw statistics. The result is never empty.
pub fn select_taps(stats: &TapStats, det: &DetectorConfig) -> Vec<usize> {
    let cand = candidate_taps(stats, det.mu);
    let cap = det.cap.max(1);
    let mut out = if cand.is_empty() {
        top_k(&stats.ts, cap)
    } else if cand.len() <= cap {
        cand
    } else {
        let vals: Vec<f64> = cand.iter().map(|&d| stats.nts[d]).collect();
        top_k(&vals, cap).into_iter().map(|i| cand[i]).collect()
    };
    out.sort_unstable();
    out
}
