//! Beamspace support recovery: OMP, block OMP and adaptive block OMP with
//! grid refinement.
//!
//! Column `n * G_r + m` of the sensing matrix pairs Tx atom `n` with Rx atom
//! `m`; row `l` is `psi(l)[n G_r + m] = (D_t^H p_t(l))[n] conj((D_r^H p_r(l))[m])`,
//! so that `y(l) = psi(l)^T vec(Hb)` for a beamspace tap `Hb`.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::FRAC_PI_2;
use core::ops::Range;

use serde::{Deserialize, Serialize};

use crate::linalg::{self, inner};
use crate::model::{build_dictionary, steering_vector, wrap_unit, SystemConfig};
use crate::probing::{ProbePair, ProbeSchedule, RxTrace};
use crate::prelude::*;

/// Residual norm, relative to the measurement, treated as an exact fit.
pub const TINY_RESIDUAL: f64 = 1e-12;

/// Read access to a sensing matrix.
pub trait SensingOperator {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn entry(&self, row: usize, col: usize) -> C64;

    /// `out[j] += sum_{l in rows} conj(A[l, j]) r[l]`.
    fn correlate_rows(&self, r: &[C64], rows: Range<usize>, out: &mut [C64]) {
        for l in rows {
            for (j, o) in out.iter_mut().enumerate() {
                *o += self.entry(l, j).conj() * r[l];
            }
        }
    }

    fn column(&self, col: usize) -> Vec<C64> {
        (0..self.rows()).map(|l| self.entry(l, col)).collect()
    }

    fn column_norm_sqr(&self, col: usize) -> f64 {
        (0..self.rows()).map(|l| self.entry(l, col).norm_sqr()).sum()
    }
}

/// Row-major dense sensing matrix with cached column norms.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseOperator {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
    norms: Vec<f64>,
}

impl DenseOperator {
    pub fn from_row_major(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::LengthMismatch {
                expected: rows * cols,
                got: data.len(),
            });
        }
        let mut norms = vec![0.0; cols];
        for row in data.chunks_exact(cols.max(1)) {
            for (n, v) in norms.iter_mut().zip(row) {
                *n += v.norm_sqr();
            }
        }
        Ok(Self {
            rows,
            cols,
            data,
            norms,
        })
    }

    pub fn row(&self, l: usize) -> &[C64] {
        &self.data[l * self.cols..(l + 1) * self.cols]
    }
}

impl SensingOperator for DenseOperator {
    fn rows(&self) -> usize {
        self.rows
    }

    fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    fn entry(&self, row: usize, col: usize) -> C64 {
        self.data[row * self.cols + col]
    }

    fn correlate_rows(&self, r: &[C64], rows: Range<usize>, out: &mut [C64]) {
        for l in rows {
            let rl = r[l];
            for (o, a) in out.iter_mut().zip(self.row(l)) {
                *o += a.conj() * rl;
            }
        }
    }

    fn column_norm_sqr(&self, col: usize) -> f64 {
        self.norms[col]
    }
}

/// The beamspace sensing matrix of a sequence of random-probe subframes.
#[derive(Debug, Clone)]
pub struct SensingMatrix {
    pub g_tx: usize,
    pub g_rx: usize,
    pub n_tx: usize,
    pub n_rx: usize,
    /// One probe pair per row.
    pub probes: Vec<ProbePair>,
    dense: DenseOperator,
}

impl SensingMatrix {
    pub fn from_probes(cfg: &SystemConfig, probes: Vec<ProbePair>) -> Result<Self> {
        let dt = build_dictionary(cfg.n_tx, cfg.g_tx)?;
        let dr = build_dictionary(cfg.n_rx, cfg.g_rx)?;
        let cols = cfg.g_tx * cfg.g_rx;
        let mut data = Vec::with_capacity(probes.len() * cols);
        for pp in &probes {
            if pp.tx.len() != cfg.n_tx || pp.rx.len() != cfg.n_rx {
                return Err(Error::LengthMismatch {
                    expected: cfg.n_tx,
                    got: pp.tx.len(),
                });
            }
            let t = dt.project(&pp.tx);
            let r: Vec<C64> = dr.project(&pp.rx).iter().map(|v| v.conj()).collect();
            for tn in &t {
                data.extend(r.iter().map(|rm| tn * rm));
            }
        }
        Ok(Self {
            g_tx: cfg.g_tx,
            g_rx: cfg.g_rx,
            n_tx: cfg.n_tx,
            n_rx: cfg.n_rx,
            dense: DenseOperator::from_row_major(probes.len(), cols, data)?,
            probes,
        })
    }

    /// Rows in subframe order over all schedules.
    pub fn from_schedules(cfg: &SystemConfig, scheds: &[ProbeSchedule]) -> Result<Self> {
        let probes = scheds.iter().flat_map(|s| s.probes.iter().cloned()).collect();
        Self::from_probes(cfg, probes)
    }

    /// Column index of the (Rx atom, Tx atom) pair.
    #[inline]
    pub fn col_of(&self, m_rx: usize, n_tx: usize) -> usize {
        n_tx * self.g_rx + m_rx
    }

    /// (Rx atom, Tx atom) of a column.
    #[inline]
    pub fn pair_of(&self, col: usize) -> (usize, usize) {
        (col % self.g_rx, col / self.g_rx)
    }

    pub fn dense(&self) -> &DenseOperator {
        &self.dense
    }

    /// Sensing column of an arbitrary (AoA, AoD) frequency pair.
    pub fn column_at(&self, aoa: f64, aod: f64) -> Vec<C64> {
        let at = steering_vector(self.n_tx, aod);
        let ar = steering_vector(self.n_rx, aoa);
        self.probes
            .iter()
            .map(|pp| inner(&at, &pp.tx) * inner(&ar, &pp.rx).conj())
            .collect()
    }
}

impl SensingOperator for SensingMatrix {
    fn rows(&self) -> usize {
        self.dense.rows
    }
    fn cols(&self) -> usize {
        self.dense.cols
    }
    #[inline]
    fn entry(&self, row: usize, col: usize) -> C64 {
        self.dense.entry(row, col)
    }
    fn correlate_rows(&self, r: &[C64], rows: Range<usize>, out: &mut [C64]) {
        self.dense.correlate_rows(r, rows, out)
    }
    fn column_norm_sqr(&self, col: usize) -> f64 {
        self.dense.column_norm_sqr(col)
    }
}

/// Samples of one tap, one per subframe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TapMeasurement {
    pub tap: usize,
    pub y: Vec<C64>,
}

/// Collects `y(l N_c + d)` over every subframe of the zero-padded traces.
pub fn stack_tap_samples(traces: &[RxTrace], n_taps: usize, tap: usize) -> Result<TapMeasurement> {
    if tap >= n_taps {
        return Err(Error::TapOutOfRange { tap, n_taps });
    }
    if traces.is_empty() {
        return Err(Error::EmptyTraces);
    }
    let mut y = Vec::new();
    for tr in traces {
        if tr.samples.len() % n_taps != 0 {
            return Err(Error::NonIntegerSubframes {
                frame_len: tr.samples.len(),
                n_taps,
            });
        }
        y.extend(tr.samples.iter().skip(tap).step_by(n_taps).copied());
    }
    Ok(TapMeasurement { tap, y })
}

/// Contiguous row groups of size `s`; the last one may be short.
pub fn group_ranges(rows: usize, s: usize) -> Vec<Range<usize>> {
    let s = s.max(1);
    (0..rows).step_by(s).map(|a| a..(a + s).min(rows)).collect()
}

/// The block-sparse rearrangement of a time-varying beamspace vector.
///
/// A stacked vector holds `hb(n_l)` for every row `l` (row-major, `L x n`);
/// its block form holds, for every column `i`, the `L` values
/// `hb_i(n_0..n_{L-1})` contiguously. Rows are further split into groups of
/// `group_size` whose entries share one coefficient in block pursuit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockSparseView {
    pub rows: usize,
    pub cols: usize,
    pub group_size: usize,
}

impl BlockSparseView {
    pub fn new(rows: usize, cols: usize, group_size: usize) -> Result<Self> {
        if rows == 0 || cols == 0 || group_size == 0 {
            return Err(Error::InvalidConfig("block view needs non-zero dimensions".into()));
        }
        Ok(Self {
            rows,
            cols,
            group_size: group_size.min(rows),
        })
    }

    pub fn group_count(&self) -> usize {
        self.rows.div_ceil(self.group_size)
    }

    pub fn groups(&self) -> Vec<Range<usize>> {
        group_ranges(self.rows, self.group_size)
    }

    /// Position of `hb_col(n_row)` in the block layout.
    #[inline]
    pub fn block_index(&self, row: usize, col: usize) -> usize {
        col * self.rows + row
    }

    /// Inverse of [`Self::block_index`]: `(row, col)`.
    #[inline]
    pub fn from_block_index(&self, k: usize) -> (usize, usize) {
        (k % self.rows, k / self.rows)
    }

    pub fn permute(&self, stacked: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); stacked.len()];
        for (k, o) in out.iter_mut().enumerate() {
            let (l, i) = self.from_block_index(k);
            *o = stacked[l * self.cols + i];
        }
        out
    }

    pub fn unpermute(&self, blocks: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); blocks.len()];
        for l in 0..self.rows {
            for i in 0..self.cols {
                out[l * self.cols + i] = blocks[self.block_index(l, i)];
            }
        }
        out
    }

    /// `y(l) = psi(l)^T hb(n_l)` from the stacked layout.
    pub fn apply_stacked<O: SensingOperator + ?Sized>(&self, op: &O, stacked: &[C64]) -> Vec<C64> {
        (0..self.rows)
            .map(|l| {
                (0..self.cols)
                    .map(|i| op.entry(l, i) * stacked[l * self.cols + i])
                    .sum()
            })
            .collect()
    }

    /// `sum_i diag(psi_i) h_i` from the block layout.
    pub fn apply_blocks<O: SensingOperator + ?Sized>(&self, op: &O, blocks: &[C64]) -> Vec<C64> {
        let mut y = vec![C64::new(0.0, 0.0); self.rows];
        for i in 0..self.cols {
            let h = &blocks[i * self.rows..(i + 1) * self.rows];
            for (l, yl) in y.iter_mut().enumerate() {
                *yl += op.entry(l, i) * h[l];
            }
        }
        y
    }
}

/// Output of [`omp`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmpResult {
    pub support: Vec<usize>,
    pub coefficients: Vec<C64>,
    /// `||r||` before the first and after every iteration.
    pub residual_norms: Vec<f64>,
    /// A rank-deficient refit fell back to a regularized solve.
    pub flagged: bool,
}

/// Output of [`bomp`]: `coefficients[b][g]` is block `b`'s coefficient on
/// row group `g`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockResult {
    pub blocks: Vec<usize>,
    pub coefficients: Vec<Vec<C64>>,
    pub residual_norms: Vec<f64>,
    pub flagged: bool,
}

/// Largest score, ties going to the smaller index; `None` if every entry is
/// excluded.
fn argmax_by(scores: &[f64], mut allowed: impl FnMut(usize) -> bool) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (j, &s) in scores.iter().enumerate() {
        if !allowed(j) {
            continue;
        }
        match best {
            Some((_, b)) if !(s > b) => {}
            _ => best = Some((j, s)),
        }
    }
    best.map(|(j, _)| j)
}

fn done(res: f64, ynorm: f64, eps: f64) -> bool {
    res <= TINY_RESIDUAL * ynorm || res < eps * ynorm
}

/// Orthogonal matching pursuit with normalized correlations.
///
/// Stops after `k` atoms or once `||r|| < eps ||y||`.
pub fn omp<O: SensingOperator + ?Sized>(y: &[C64], op: &O, k: usize, eps: f64) -> Result<OmpResult> {
    if y.len() != op.rows() {
        return Err(Error::LengthMismatch {
            expected: op.rows(),
            got: y.len(),
        });
    }
    let ynorm = linalg::norm(y);
    let mut r = y.to_vec();
    let mut support = Vec::new();
    let mut cols: Vec<Vec<C64>> = Vec::new();
    let mut coefficients = Vec::new();
    let mut residual_norms = vec![ynorm];
    let mut flagged = false;
    let norms: Vec<f64> = (0..op.cols()).map(|j| op.column_norm_sqr(j).sqrt()).collect();
    let mut corr = vec![C64::new(0.0, 0.0); op.cols()];
    while support.len() < k && !done(*residual_norms.last().unwrap(), ynorm, eps) {
        corr.iter_mut().for_each(|c| *c = C64::new(0.0, 0.0));
        op.correlate_rows(&r, 0..op.rows(), &mut corr);
        let scores: Vec<f64> = corr
            .iter()
            .zip(&norms)
            .map(|(c, n)| if *n > 0.0 { c.norm() / n } else { 0.0 })
            .collect();
        let Some(j) = argmax_by(&scores, |j| !support.contains(&j)) else {
            break;
        };
        support.push(j);
        cols.push(op.column(j));
        let a = linalg::from_columns(y.len(), &cols);
        let (x, f) = linalg::lstsq(&a, y);
        flagged |= f;
        let fit = &a * nalgebra::DVector::from_column_slice(&x);
        for (l, rl) in r.iter_mut().enumerate() {
            *rl = y[l] - fit[l];
        }
        coefficients = x;
        residual_norms.push(linalg::norm(&r));
    }
    Ok(OmpResult {
        support,
        coefficients,
        residual_norms,
        flagged,
    })
}

/// Sum over row groups of `|sum_{l in g} conj(A[l, j]) r[l]|`, divided by
/// the column norm.
fn grouped_scores<O: SensingOperator + ?Sized>(op: &O, r: &[C64], groups: &[Range<usize>], norms: &[f64]) -> Vec<f64> {
    let mut scores = vec![0.0; op.cols()];
    let mut corr = vec![C64::new(0.0, 0.0); op.cols()];
    for g in groups {
        corr.iter_mut().for_each(|c| *c = C64::new(0.0, 0.0));
        op.correlate_rows(r, g.clone(), &mut corr);
        for (s, c) in scores.iter_mut().zip(&corr) {
            *s += c.norm();
        }
    }
    for (s, n) in scores.iter_mut().zip(norms) {
        *s = if *n > 0.0 { *s / n } else { 0.0 };
    }
    scores
}

/// Block OMP over the rearranged problem of `view`.
///
/// Block `j` consists of column `j` restricted to each row group, so a
/// selected block contributes one coefficient per group. Blocks are ranked by
/// the summed magnitude of their per-group correlations over the block norm
/// and refitted jointly.
pub fn bomp<O: SensingOperator + ?Sized>(
    y: &[C64],
    op: &O,
    view: &BlockSparseView,
    k: usize,
    eps: f64,
) -> Result<BlockResult> {
    if y.len() != op.rows() || view.rows != op.rows() || view.cols != op.cols() {
        return Err(Error::LengthMismatch {
            expected: op.rows(),
            got: y.len(),
        });
    }
    let groups = view.groups();
    let ynorm = linalg::norm(y);
    let norms: Vec<f64> = (0..op.cols()).map(|j| op.column_norm_sqr(j).sqrt()).collect();
    let mut r = y.to_vec();
    let mut blocks: Vec<usize> = Vec::new();
    let mut sub_cols: Vec<Vec<C64>> = Vec::new();
    let mut coefficients = Vec::new();
    let mut residual_norms = vec![ynorm];
    let mut flagged = false;
    while blocks.len() < k && !done(*residual_norms.last().unwrap(), ynorm, eps) {
        let scores = grouped_scores(op, &r, &groups, &norms);
        let Some(j) = argmax_by(&scores, |j| !blocks.contains(&j)) else {
            break;
        };
        blocks.push(j);
        let col = op.column(j);
        for g in &groups {
            let mut c = vec![C64::new(0.0, 0.0); y.len()];
            c[g.clone()].copy_from_slice(&col[g.clone()]);
            sub_cols.push(c);
        }
        let a = linalg::from_columns(y.len(), &sub_cols);
        let (x, f) = linalg::lstsq(&a, y);
        flagged |= f;
        let fit = &a * nalgebra::DVector::from_column_slice(&x);
        for (l, rl) in r.iter_mut().enumerate() {
            *rl = y[l] - fit[l];
        }
        coefficients = x.chunks(groups.len()).map(|c| c.to_vec()).collect();
        residual_norms.push(linalg::norm(&r));
    }
    Ok(BlockResult {
        blocks,
        coefficients,
        residual_norms,
        flagged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AbompOptions {
    /// Maximum number of outer iterations.
    pub kmax: usize,
    /// Rows per group; the number of groups is `ceil(L / group_size)`.
    pub group_size: usize,
    /// Stop once the relative change of the accumulated coefficient norm
    /// drops to this value.
    pub eps: f64,
    /// Re-select each pick on a grid `G` times finer around its coarse cell.
    pub refine: bool,
    /// Reject a coarse pair whose Rx and Tx atoms are both within one cell of
    /// an earlier pick.
    pub overlap_guard: bool,
}

impl Default for AbompOptions {
    fn default() -> Self {
        Self {
            kmax: 3,
            group_size: usize::MAX,
            eps: 0.01,
            refine: true,
            overlap_guard: true,
        }
    }
}

/// Angle support of one tap.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupportEstimate {
    pub tap: usize,
    pub g_rx: usize,
    pub g_tx: usize,
    /// `(Rx atom, Tx atom)` on the coarse grids.
    pub coarse_pairs: Vec<(usize, usize)>,
    /// `(Rx, Tx)` indices on the `G^2` fine grids.
    pub refined_idx: Vec<(usize, usize)>,
    /// `(AoA, AoD)` normalized spatial frequencies.
    pub refined_freqs: Vec<(f64, f64)>,
    pub iterations_used: usize,
    pub final_beta: f64,
    pub beta_trace: Vec<f64>,
    pub flagged: bool,
}

impl SupportEstimate {
    pub fn empty(tap: usize, g_rx: usize, g_tx: usize) -> Self {
        Self {
            tap,
            g_rx,
            g_tx,
            coarse_pairs: Vec::new(),
            refined_idx: Vec::new(),
            refined_freqs: Vec::new(),
            iterations_used: 0,
            final_beta: f64::INFINITY,
            beta_trace: Vec::new(),
            flagged: false,
        }
    }

    pub fn len(&self) -> usize {
        self.coarse_pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coarse_pairs.is_empty()
    }
}

/// Frequency `c / G + off / G^2`, wrapped to `[0, 1)`.
#[inline]
pub fn fine_freq(coarse: usize, off: i64, g: usize) -> f64 {
    wrap_unit(coarse as f64 / g as f64 + off as f64 / (g * g) as f64)
}

/// Fine-grid index of `c G + off`, wrapped to `[0, G^2)`.
#[inline]
pub fn fine_index(coarse: usize, off: i64, g: usize) -> usize {
    let gg = (g * g) as i64;
    ((coarse as i64 * g as i64 + off).rem_euclid(gg)) as usize
}

/// Offsets `-G/2 ..= G/2 - 1` of the refinement grid.
pub fn fine_offsets(g: usize) -> Range<i64> {
    let h = (g / 2) as i64;
    -h..(g as i64 - h)
}

fn cyclic_close(a: usize, b: usize, g: usize) -> bool {
    let d = a.abs_diff(b) % g;
    d.min(g - d) <= 1
}

/// Whether `(m, n)` lies within one cell, in both Rx and Tx, of any pair.
pub fn overlaps(pair: (usize, usize), taken: &[(usize, usize)], g_rx: usize, g_tx: usize) -> bool {
    taken
        .iter()
        .any(|&(m, n)| cyclic_close(pair.0, m, g_rx) && cyclic_close(pair.1, n, g_tx))
}

/// Adaptive block OMP with grouped residual updates and grid refinement.
///
/// `already` holds coarse pairs chosen elsewhere that the overlap guard must
/// also respect.
pub fn abomp(
    meas: &TapMeasurement,
    sensing: &SensingMatrix,
    opts: &AbompOptions,
    already: &[(usize, usize)],
) -> Result<SupportEstimate> {
    let y = &meas.y;
    let rows = sensing.rows();
    if y.len() != rows {
        return Err(Error::LengthMismatch {
            expected: rows,
            got: y.len(),
        });
    }
    let (g_rx, g_tx) = (sensing.g_rx, sensing.g_tx);
    let mut est = SupportEstimate::empty(meas.tap, g_rx, g_tx);
    let ynorm = linalg::norm(y);
    if ynorm == 0.0 || opts.kmax == 0 {
        return Ok(est);
    }
    let groups = group_ranges(rows, opts.group_size);
    let norms: Vec<f64> = (0..sensing.cols())
        .map(|j| sensing.column_norm_sqr(j).sqrt())
        .collect();
    let mut r = y.clone();
    let mut phi: Vec<Vec<C64>> = Vec::new();
    let mut beta = f64::INFINITY;
    let mut x0 = 0.0;
    while est.iterations_used < opts.kmax && beta > opts.eps {
        let scores = grouped_scores(sensing, &r, &groups, &norms);
        let pick = argmax_by(&scores, |j| {
            let pair = sensing.pair_of(j);
            if est.coarse_pairs.contains(&pair) {
                return false;
            }
            !(opts.overlap_guard
                && (overlaps(pair, &est.coarse_pairs, g_rx, g_tx) || overlaps(pair, already, g_rx, g_tx)))
        });
        let Some(j) = pick else {
            break;
        };
        let (m, n) = sensing.pair_of(j);
        let (off_r, off_t, col) = if opts.refine {
            refine(sensing, &r, &groups, m, n)
        } else {
            (0, 0, sensing.column(j))
        };
        est.iterations_used += 1;
        est.coarse_pairs.push((m, n));
        est.refined_idx
            .push((fine_index(m, off_r, g_rx), fine_index(n, off_t, g_tx)));
        est.refined_freqs
            .push((fine_freq(m, off_r, g_rx), fine_freq(n, off_t, g_tx)));
        phi.push(col);

        let mut x = 0.0;
        for g in &groups {
            let sub: Vec<Vec<C64>> = phi.iter().map(|c| c[g.clone()].to_vec()).collect();
            let a = linalg::from_columns(g.len(), &sub);
            let (c, f) = linalg::lstsq(&a, &y[g.clone()]);
            est.flagged |= f;
            x += linalg::norm(&c);
            let fit = &a * nalgebra::DVector::from_column_slice(&c);
            for (i, l) in g.clone().enumerate() {
                r[l] = y[l] - fit[i];
            }
        }
        beta = if x > 0.0 { (x - x0).abs() / x } else { 0.0 };
        est.beta_trace.push(beta);
        x0 = x;
        if linalg::norm(&r) <= TINY_RESIDUAL * ynorm {
            break;
        }
    }
    est.final_beta = beta;
    Ok(est)
}

/// Re-selects around coarse pair `(m, n)` on the fine grids. Returns the Rx
/// and Tx offsets and the winning sensing column.
fn refine(sensing: &SensingMatrix, r: &[C64], groups: &[Range<usize>], m: usize, n: usize) -> (i64, i64, Vec<C64>) {
    let (g_rx, g_tx) = (sensing.g_rx, sensing.g_tx);
    // per offset and row: a_t^H p_t and a_r^H p_r
    let tx: Vec<(i64, Vec<C64>)> = fine_offsets(g_tx)
        .map(|o| {
            let a = steering_vector(sensing.n_tx, fine_freq(n, o, g_tx));
            (o, sensing.probes.iter().map(|pp| inner(&a, &pp.tx)).collect())
        })
        .collect();
    let rx: Vec<(i64, Vec<C64>)> = fine_offsets(g_rx)
        .map(|o| {
            let a = steering_vector(sensing.n_rx, fine_freq(m, o, g_rx));
            (o, sensing.probes.iter().map(|pp| inner(&a, &pp.rx)).collect())
        })
        .collect();
    let mut best = (0i64, 0i64);
    let mut best_score = f64::NEG_INFINITY;
    for (ot, t) in &tx {
        for (or, q) in &rx {
            let mut score = 0.0;
            let mut nrm = 0.0;
            for g in groups {
                let mut c = C64::new(0.0, 0.0);
                for l in g.clone() {
                    let psi = t[l] * q[l].conj();
                    c += psi.conj() * r[l];
                    nrm += psi.norm_sqr();
                }
                score += c.norm();
            }
            let score = if nrm > 0.0 { score / nrm.sqrt() } else { 0.0 };
            if score > best_score {
                best_score = score;
                best = (*or, *ot);
            }
        }
    }
    let t = &tx.iter().find(|(o, _)| *o == best.1).expect("offset in range").1;
    let q = &rx.iter().find(|(o, _)| *o == best.0).expect("offset in range").1;
    let col = t.iter().zip(q).map(|(a, b)| a * b.conj()).collect();
    (best.0, best.1, col)
}

fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// Probability that `k` of `d` beams fall on the same one of `n_taps` taps:
/// `C(d, k) (1/N_c)^k ((N_c - 1)/N_c)^(d - k)`.
pub fn beams_per_tap_probability(d: usize, k: usize, n_taps: usize) -> f64 {
    if k > d || n_taps == 0 {
        return 0.0;
    }
    let p = 1.0 / n_taps as f64;
    binomial(d, k) * p.powi(k as i32) * (1.0 - p).powi((d - k) as i32)
}

/// `k - 1` for the smallest `k` from which on `P(d, j) < p_threshold` for
/// every `j >= k`, at least 1.
///
/// When `P(d, 1)` is already above the threshold this is the first `k`
/// with `P(d, k) < p_threshold`. Scanning the tail instead keeps the bound
/// monotone when `d` is large compared with the tap count and the mass of
/// the binomial sits at large `k`.
pub fn iteration_bound(d_count: usize, n_taps: usize, p_threshold: f64) -> usize {
    let d = d_count.max(1);
    let last = (1..=d)
        .rev()
        .find(|&j| beams_per_tap_probability(d, j, n_taps) >= p_threshold)
        .unwrap_or(0);
    last.max(1)
}

/// Largest group size `S` with `cos(w N_c S) >= tau` and `w N_c S <= pi/2`,
/// clamped to `[1, rows]`.
pub fn group_size(omega_max: f64, n_taps: usize, tau: f64, rows: usize) -> usize {
    let rows = rows.max(1);
    let step = omega_max.abs() * n_taps as f64;
    if step == 0.0 {
        return rows;
    }
    let ok = |s: usize| {
        let a = step * s as f64;
        a.cos() >= tau && a <= FRAC_PI_2
    };
    let bound = tau.clamp(-1.0, 1.0).acos().min(FRAC_PI_2) / step;
    if !bound.is_finite() || bound >= rows as f64 {
        return if ok(rows) { rows } else { largest_ok(rows, ok) };
    }
    let mut s = (bound.floor() as usize).clamp(1, rows);
    while s < rows && ok(s + 1) {
        s += 1;
    }
    while s > 1 && !ok(s) {
        s -= 1;
    }
    s
}

fn largest_ok(rows: usize, ok: impl Fn(usize) -> bool) -> usize {
    (1..=rows).rev().find(|&s| ok(s)).unwrap_or(1)
}
