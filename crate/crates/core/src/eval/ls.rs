//! Ridge-regularized least squares over all tap matrices, ignoring sparsity.
//!
//! Sample `n` of a frame is `sum_d p_r(n)^H H_d p_t(n - d) s(n - d)`, a
//! linear functional of `vec(H_d)` for every `(Rx probe, Tx probe, tap)`
//! key that occurs. Each frame is compressed with a thin QR of its
//! sample-to-key map, which keeps the noise white. Taps that never share a
//! row form independent problems; each is solved in whichever of the primal
//! (`unknowns x unknowns`) or dual (`rows x rows`) ridge forms is smaller.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use nalgebra::DMatrix;

use super::{EstimatedChannel, TapEstimate};
use crate::linalg::{self, inner};
use crate::model::SystemConfig;
use crate::probing::{ProbeSchedule, RxTrace, TrainingFrame};
use crate::prelude::*;

/// A received frame together with what was sent.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'a> {
    pub trace: &'a RxTrace,
    pub frame: &'a TrainingFrame,
    pub schedule: &'a ProbeSchedule,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    rx: usize,
    tx: usize,
    tap: usize,
}

struct Row {
    z: C64,
    /// `(key, R[r, key])`
    entries: Vec<(usize, C64)>,
}

fn find(parent: &mut [usize], mut i: usize) -> usize {
    while parent[i] != i {
        parent[i] = parent[parent[i]];
        i = parent[i];
    }
    i
}

/// Ridge LS estimate of every tap; `ridge` is the Tikhonov weight on
/// `sum_d ||H_d||_F^2`. A non-positive `ridge` gives the minimum-norm
/// least-squares fit (with a tiny jitter when the system is underdetermined).
pub fn ls_baseline(obs: &[Observation<'_>], cfg: &SystemConfig, ridge: f64) -> Result<EstimatedChannel> {
    if obs.is_empty() {
        return Err(Error::EmptyTraces);
    }
    let (nt, nr, nc) = (cfg.n_tx, cfg.n_rx, cfg.n_taps);
    let mut probes_tx: Vec<&[C64]> = Vec::new();
    let mut probes_rx: Vec<&[C64]> = Vec::new();
    let mut keys: Vec<Key> = Vec::new();
    let mut key_ids: BTreeMap<Key, usize> = BTreeMap::new();
    let mut rows: Vec<Row> = Vec::new();
    let mut end = i64::MIN;

    for o in obs {
        let nf = o.frame.len();
        if o.trace.samples.len() != nf {
            return Err(Error::LengthMismatch {
                expected: nf,
                got: o.trace.samples.len(),
            });
        }
        if o.schedule.covered() < nf {
            return Err(Error::ScheduleTooShort {
                covered: o.schedule.covered(),
                needed: nf,
            });
        }
        end = end.max(o.trace.t0 + nf as i64);
        let base = probes_tx.len();
        for p in &o.schedule.probes {
            if p.tx.len() != nt || p.rx.len() != nr {
                return Err(Error::LengthMismatch { expected: nt, got: p.tx.len() });
            }
            probes_tx.push(&p.tx);
            probes_rx.push(&p.rx);
        }
        // frame-local sample-to-key map
        let mut local: Vec<usize> = Vec::new();
        let mut entries: Vec<(usize, usize, C64)> = Vec::new();
        for n in 0..nf {
            for d in 0..nc.min(n + 1) {
                let s = o.frame.symbols[n - d];
                if s == C64::new(0.0, 0.0) {
                    continue;
                }
                let key = Key {
                    rx: base + o.schedule.index_at(n),
                    tx: base + o.schedule.index_at(n - d),
                    tap: d,
                };
                let id = *key_ids.entry(key).or_insert_with(|| {
                    keys.push(key);
                    keys.len() - 1
                });
                let col = match local.iter().position(|&k| k == id) {
                    Some(c) => c,
                    None => {
                        local.push(id);
                        local.len() - 1
                    }
                };
                entries.push((n, col, s));
            }
        }
        if local.is_empty() {
            continue;
        }
        let mut b = DMatrix::<C64>::zeros(nf, local.len());
        for (n, c, s) in entries {
            b[(n, c)] += s;
        }
        let qr = b.qr();
        let q = qr.q();
        let r = qr.r();
        let z = q.adjoint() * nalgebra::DVector::from_column_slice(&o.trace.samples);
        let scale = r.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for i in 0..r.nrows() {
            let e: Vec<(usize, C64)> = (0..r.ncols())
                .filter(|&c| r[(i, c)].norm() > 1e-13 * scale)
                .map(|c| (local[c], r[(i, c)]))
                .collect();
            if !e.is_empty() {
                rows.push(Row { z: z[i], entries: e });
            }
        }
    }

    // taps coupled through shared rows
    let mut parent: Vec<usize> = (0..nc).collect();
    for row in &rows {
        let t0 = keys[row.entries[0].0].tap;
        for &(k, _) in &row.entries[1..] {
            let (a, b) = (find(&mut parent, t0), find(&mut parent, keys[k].tap));
            parent[a] = b;
        }
    }
    let mut comps: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, row) in rows.iter().enumerate() {
        let root = find(&mut parent, keys[row.entries[0].0].tap);
        comps.entry(root).or_default().push(i);
    }

    let mut taps = vec![DMatrix::<C64>::zeros(nr, nt); nc];
    for comp_rows in comps.values() {
        let mut comp_taps: Vec<usize> = comp_rows
            .iter()
            .flat_map(|&i| rows[i].entries.iter().map(|&(k, _)| keys[k].tap))
            .collect();
        comp_taps.sort_unstable();
        comp_taps.dedup();
        let unknowns = nr * nt * comp_taps.len();
        let sub: Vec<&Row> = comp_rows.iter().map(|&i| &rows[i]).collect();
        if unknowns <= sub.len() {
            solve_primal(&sub, &keys, &probes_tx, &probes_rx, &comp_taps, nr, nt, ridge, &mut taps);
        } else {
            solve_dual(&sub, &keys, &probes_tx, &probes_rx, ridge, &mut taps);
        }
    }
    Ok(EstimatedChannel {
        n_tx: nt,
        n_rx: nr,
        taps: taps.into_iter().map(TapEstimate::Dense).collect(),
        training_end: end,
    })
}

#[allow(clippy::too_many_arguments)]
fn solve_primal(
    rows: &[&Row],
    keys: &[Key],
    ptx: &[&[C64]],
    prx: &[&[C64]],
    comp_taps: &[usize],
    nr: usize,
    nt: usize,
    ridge: f64,
    taps: &mut [CMatrix],
) {
    let block = nr * nt;
    let mut phi = DMatrix::<C64>::zeros(rows.len(), block * comp_taps.len());
    for (i, row) in rows.iter().enumerate() {
        for &(k, rv) in &row.entries {
            let key = keys[k];
            let off = block * comp_taps.iter().position(|&t| t == key.tap).expect("tap in component");
            // row of p_r^H H p_t against column-major vec(H)
            for c in 0..nt {
                for r in 0..nr {
                    phi[(i, off + c * nr + r)] += rv * prx[key.rx][r].conj() * ptx[key.tx][c];
                }
            }
        }
    }
    let z: Vec<C64> = rows.iter().map(|r| r.z).collect();
    let h = if ridge > 0.0 {
        linalg::ridge_solve(&phi, &z, ridge)
    } else {
        linalg::lstsq(&phi, &z).0
    };
    for (j, &t) in comp_taps.iter().enumerate() {
        for c in 0..nt {
            for r in 0..nr {
                taps[t][(r, c)] += h[block * j + c * nr + r];
            }
        }
    }
}

fn solve_dual(rows: &[&Row], keys: &[Key], ptx: &[&[C64]], prx: &[&[C64]], ridge: f64, taps: &mut [CMatrix]) {
    let m = rows.len();
    let mut ip_cache: BTreeMap<(usize, usize, usize, usize), C64> = BTreeMap::new();
    let mut ip = |a: Key, b: Key| -> C64 {
        // a_a^H a_b with a_k = vec(p_r p_t^H)
        *ip_cache
            .entry((a.rx, a.tx, b.rx, b.tx))
            .or_insert_with(|| inner(prx[a.rx], prx[b.rx]) * inner(ptx[b.tx], ptx[a.tx]))
    };
    let mut k = vec![C64::new(0.0, 0.0); m * m];
    for i in 0..m {
        for j in i..m {
            let mut acc = C64::new(0.0, 0.0);
            for &(ka, va) in &rows[i].entries {
                for &(kb, vb) in &rows[j].entries {
                    if keys[ka].tap == keys[kb].tap {
                        acc += va * vb.conj() * ip(keys[ka], keys[kb]);
                    }
                }
            }
            // column-major: K[i, j] at j * m + i
            k[j * m + i] = acc;
            k[i * m + j] = acc.conj();
        }
    }
    let trace: f64 = (0..m).map(|i| k[i * m + i].re).sum::<f64>() / m as f64;
    let mut lambda = if ridge > 0.0 { ridge } else { 1e-12 * trace.max(f64::MIN_POSITIVE) };
    let alpha = loop {
        let mut a = k.clone();
        for i in 0..m {
            a[i * m + i] += C64::new(lambda, 0.0);
        }
        if linalg::cholesky_in_place(&mut a, m) {
            let mut rhs: Vec<C64> = rows.iter().map(|r| r.z).collect();
            linalg::cholesky_solve(&a, m, &mut rhs);
            break rhs;
        }
        lambda = (lambda * 10.0).max(1e-12 * trace.max(f64::MIN_POSITIVE));
    };
    let mut coef: BTreeMap<usize, C64> = BTreeMap::new();
    for (row, a) in rows.iter().zip(&alpha) {
        for &(key, v) in &row.entries {
            *coef.entry(key).or_insert(C64::new(0.0, 0.0)) += v.conj() * a;
        }
    }
    for (key, c) in coef {
        let kk = keys[key];
        let (pr, pt) = (prx[kk.rx], ptx[kk.tx]);
        let h = &mut taps[kk.tap];
        for col in 0..pt.len() {
            let w = c * pt[col].conj();
            for r in 0..pr.len() {
                h[(r, col)] += pr[r] * w;
            }
        }
    }
}
