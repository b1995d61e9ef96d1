//! Stride-level strategies: the two-level odd/even split and the full
//! nested odd/even recursion, plus the leveled solve.
//!
//! Level `l` eliminates the columns `s, 3s, 5s, ...` for `s = 2^(l-1)`; the
//! even multiples survive into the next level as a half-length virtual
//! chain whose couplings are the fill blocks produced here. Within a level
//! every column is independent.
//!
//! Two schedules produce the same factor:
//!
//! * `Deferred`: a column pushes its downdate to the later neighbor
//!   immediately, but the downdate to the earlier neighbor is postponed one
//!   level and consumed left-looking there, so each block has exactly one
//!   writer per level and the result is bitwise reproducible.
//! * `RightLookingAtomic`: both downdates are pushed immediately through a
//!   per-block linearizable accumulate (at most two contenders per block),
//!   which shortens each column's kernel chain from four to three at the
//!   price of an unspecified accumulation order.

use std::sync::{Condvar, Mutex, OnceLock};

use crate::block::DenseBlock;
use crate::error::{Error, FailSite, Result};
use crate::kernels;
use crate::matrix::{
    columns_at_level, level_count, level_of_column, stride_of_level, BlockTridiag, RhsBlocks,
};
use crate::meter::{fold_waves, FlopMeter, Workers};
use crate::scalar::Scalar;
use crate::schedule::{run_level, LevelCtx, SharedBlocks, WriteLog, WriteRecord};

/// Which multi-stage schedule to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FactorMode {
    Deferred,
    RightLookingAtomic,
}

impl std::fmt::Display for FactorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FactorMode::Deferred => "deferred",
            FactorMode::RightLookingAtomic => "atomic",
        })
    }
}

/// Execution options shared by the parallel factorizations.
#[derive(Debug, Clone, Copy)]
pub struct RunOptions {
    /// Requested parallelism. The meter accounts at this width even when
    /// fewer OS threads are available.
    pub workers: Workers,
    /// Record every block write with (level, task) for conflict analysis.
    pub record_writes: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            workers: Workers::one(),
            record_writes: false,
        }
    }
}

impl RunOptions {
    pub fn with_workers(workers: Workers) -> Self {
        Self {
            workers,
            ..Self::default()
        }
    }
}

// ---------------------------------------------------------------------------
// leveled layout
// ---------------------------------------------------------------------------

/// Index bookkeeping of the leveled storage: diagonal blocks level-major
/// (each level's columns contiguous, ascending), then the coupling blocks of
/// every level, also contiguous. Fill storage for all levels exists up
/// front; the structure depends only on N.
#[derive(Debug, Clone)]
pub struct LeveledLayout {
    nblocks: usize,
    nlevels: usize,
    d_base: Vec<usize>,
    e_base: Vec<usize>,
    e_len: Vec<usize>,
    total: usize,
}

impl LeveledLayout {
    pub fn new(nblocks: usize) -> Self {
        let nlevels = level_count(nblocks);
        let mut d_base = Vec::with_capacity(nlevels);
        let mut acc = 0usize;
        for l in 1..=nlevels {
            d_base.push(acc);
            acc += columns_at_level(nblocks, stride_of_level(l)).count();
        }
        debug_assert_eq!(acc, nblocks);
        let mut e_base = Vec::with_capacity(nlevels);
        let mut e_len = Vec::with_capacity(nlevels);
        for l in 1..=nlevels {
            e_base.push(acc);
            let len = (nblocks / stride_of_level(l)).saturating_sub(1);
            e_len.push(len);
            acc += len;
        }
        Self {
            nblocks,
            nlevels,
            d_base,
            e_base,
            e_len,
            total: acc,
        }
    }

    pub fn nblocks(&self) -> usize {
        self.nblocks
    }

    pub fn nlevels(&self) -> usize {
        self.nlevels
    }

    /// Total block count of the leveled structure.
    pub fn total_blocks(&self) -> usize {
        self.total
    }

    /// Flat index of the diagonal block of 1-based column `col`.
    pub fn d_index(&self, col: usize) -> usize {
        let level = level_of_column(col);
        let s = stride_of_level(level);
        self.d_base[level - 1] + (col / s - 1) / 2
    }

    /// Flat index of coupling `k` (1-based) of the level-`l` virtual chain.
    pub fn e_index(&self, level: usize, k: usize) -> usize {
        debug_assert!(
            k >= 1 && k <= self.e_len[level - 1],
            "coupling out of range"
        );
        self.e_base[level - 1] + (k - 1)
    }

    /// Couplings of the level-`l` virtual chain.
    pub fn e_len(&self, level: usize) -> usize {
        self.e_len[level - 1]
    }
}

// ---------------------------------------------------------------------------
// multi-stage factor type
// ---------------------------------------------------------------------------

/// Factor of the fully permuted ordering, stored per stride level.
///
/// `dhat_level(l)` holds the lower-triangular diagonal factors of the
/// columns eliminated at level `l`, contiguous in ascending column order.
/// `ehat(l, k)` is coupling `k` of the level-`l` virtual chain after
/// factorization: odd `k` right-solved (stored exactly as it sits below the
/// diagonal of the permuted factor), even `k` left-solved (the factor holds
/// its transpose).
#[derive(Debug, Clone)]
pub struct LeveledFactor<S> {
    n: usize,
    nblocks: usize,
    dhat: Vec<Vec<DenseBlock<S>>>,
    ehat: Vec<Vec<DenseBlock<S>>>,
}

impl<S: Scalar> LeveledFactor<S> {
    pub fn block_size(&self) -> usize {
        self.n
    }

    pub fn nblocks(&self) -> usize {
        self.nblocks
    }

    pub fn nlevels(&self) -> usize {
        self.dhat.len()
    }

    pub fn dhat_level(&self, level: usize) -> &[DenseBlock<S>] {
        &self.dhat[level - 1]
    }

    pub fn ehat_level(&self, level: usize) -> &[DenseBlock<S>] {
        &self.ehat[level - 1]
    }

    /// Diagonal factor of 1-based column `col`.
    pub fn dhat_col(&self, col: usize) -> &DenseBlock<S> {
        let level = level_of_column(col);
        let s = stride_of_level(level);
        &self.dhat[level - 1][(col / s - 1) / 2]
    }

    /// Coupling `k` of level `l` (1-based both).
    pub fn ehat(&self, level: usize, k: usize) -> &DenseBlock<S> {
        &self.ehat[level - 1][k - 1]
    }

    /// Largest relative per-block difference against another factor.
    pub fn max_rel_block_diff(&self, other: &Self) -> f64 {
        assert_eq!(self.nblocks, other.nblocks);
        let mut worst: f64 = 0.0;
        for l in 1..=self.nlevels() {
            for (a, b) in self.dhat[l - 1].iter().zip(&other.dhat[l - 1]) {
                let scale = b.frob_norm().max(1.0);
                worst = worst.max(a.diff_frob_sq(b).sqrt() / scale);
            }
            for (a, b) in self.ehat[l - 1].iter().zip(&other.ehat[l - 1]) {
                let scale = b.frob_norm().max(1.0);
                worst = worst.max(a.diff_frob_sq(b).sqrt() / scale);
            }
        }
        worst
    }

    /// Bitwise equality of every block.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.dhat == other.dhat && self.ehat == other.ehat
    }
}

/// Result of a multi-stage factorization run.
#[derive(Debug)]
pub struct MultiStageRun<S> {
    pub factor: LeveledFactor<S>,
    /// Wave-folded units per level at the requested worker count.
    pub level_units: Vec<u64>,
    /// Sum of every executed kernel's units (total work; worker-independent).
    pub total_units: u64,
    /// Sum of the level walls; the shared meter advanced by this.
    pub wall_units: u64,
    pub write_log: Option<Vec<WriteRecord>>,
}

// ---------------------------------------------------------------------------
// multi-stage factorization
// ---------------------------------------------------------------------------

struct MsState<'a, S> {
    layout: &'a LeveledLayout,
    arena: &'a SharedBlocks<'a, S>,
    log: Option<&'a WriteLog>,
}

impl<S: Scalar> MsState<'_, S> {
    fn record(&self, block: usize, level: usize, task: usize, accumulate: bool) {
        if let Some(log) = self.log {
            log.record(block, level, task, accumulate);
        }
    }
}

fn leveled_site(level: usize, column: usize, err: Error) -> Error {
    match err {
        Error::NotPositiveDefinite { pivot, .. } => Error::NotPositiveDefinite {
            site: FailSite::Leveled { level, column },
            pivot,
        },
        other => other,
    }
}

/// One column of the deferred schedule, guards exactly as printed.
fn ms_column_deferred<S: Scalar>(
    st: &MsState<'_, S>,
    nblocks: usize,
    level: usize,
    stride: usize,
    col: usize,
    task: usize,
    meter: &FlopMeter,
) -> Result<()> {
    let (lay, s, i) = (st.layout, stride, col);
    let di = lay.d_index(i);
    // consume the downdate deferred for this diagonal at the previous level
    if s > 1 && i <= nblocks.saturating_sub(s / 2) {
        let src = unsafe { st.arena.get(lay.e_index(level - 1, 2 * i / s)) };
        let d = unsafe { st.arena.get_mut(di, task) };
        *d = kernels::syrk_down(d, src, true, meter);
        st.record(di, level, task, false);
    }
    {
        let d = unsafe { st.arena.get_mut(di, task) };
        *d = kernels::potrf(d, meter).map_err(|e| leveled_site(level, i, e))?;
        st.record(di, level, task, false);
    }
    // consume the downdate deferred for the later even neighbor
    if s > 1 && i + s <= nblocks.saturating_sub(s / 2) {
        let target = lay.d_index(i + s);
        let src = unsafe { st.arena.get(lay.e_index(level - 1, 2 * i / s + 2)) };
        let d = unsafe { st.arena.get_mut(target, task) };
        *d = kernels::syrk_down(d, src, true, meter);
        st.record(target, level, task, false);
    }
    if i + s <= nblocks {
        let ei = lay.e_index(level, i / s);
        {
            let dhat = unsafe { st.arena.get(di) };
            let e = unsafe { st.arena.get_mut(ei, task) };
            *e = kernels::trsm_right(e, dhat, meter)?;
            st.record(ei, level, task, false);
        }
        let target = lay.d_index(i + s);
        let e = unsafe { st.arena.get(ei) };
        let d = unsafe { st.arena.get_mut(target, task) };
        *d = kernels::syrk_down(d, e, false, meter);
        st.record(target, level, task, false);
    }
    if i > s {
        let ei = lay.e_index(level, i / s - 1);
        let dhat = unsafe { st.arena.get(di) };
        let e = unsafe { st.arena.get_mut(ei, task) };
        *e = kernels::trsm_left(e, dhat, meter)?;
        st.record(ei, level, task, false);
    }
    if i > s && i + s <= nblocks {
        let fill = lay.e_index(level + 1, (i - s) / (2 * s));
        let right = unsafe { st.arena.get(lay.e_index(level, i / s)) };
        let left = unsafe { st.arena.get(lay.e_index(level, i / s - 1)) };
        let f = unsafe { st.arena.get_mut(fill, task) };
        *f = kernels::gemm_neg(right, left, None, meter);
        st.record(fill, level, task, false);
    }
    Ok(())
}

/// One column of the right-looking schedule with accumulation safety.
fn ms_column_atomic<S: Scalar>(
    st: &MsState<'_, S>,
    nblocks: usize,
    level: usize,
    stride: usize,
    col: usize,
    task: usize,
    meter: &FlopMeter,
) -> Result<()> {
    let (lay, s, i) = (st.layout, stride, col);
    let di = lay.d_index(i);
    {
        let d = unsafe { st.arena.get_mut(di, task) };
        *d = kernels::potrf(d, meter).map_err(|e| leveled_site(level, i, e))?;
        st.record(di, level, task, false);
    }
    if i > s {
        let ei = lay.e_index(level, i / s - 1);
        let dhat = unsafe { st.arena.get(di) };
        let e = unsafe { st.arena.get_mut(ei, task) };
        *e = kernels::trsm_left(e, dhat, meter)?;
        st.record(ei, level, task, false);
    }
    if i + s <= nblocks {
        let ei = lay.e_index(level, i / s);
        let dhat = unsafe { st.arena.get(di) };
        let e = unsafe { st.arena.get_mut(ei, task) };
        *e = kernels::trsm_right(e, dhat, meter)?;
        st.record(ei, level, task, false);
    }
    if i > s {
        let e = unsafe { st.arena.get(lay.e_index(level, i / s - 1)) };
        let delta = kernels::syrk_product(e, true, meter);
        let target = lay.d_index(i - s);
        st.arena.accumulate_sub(target, &delta, task);
        st.record(target, level, task, true);
    }
    if i + s <= nblocks {
        let e = unsafe { st.arena.get(lay.e_index(level, i / s)) };
        let delta = kernels::syrk_product(e, false, meter);
        let target = lay.d_index(i + s);
        st.arena.accumulate_sub(target, &delta, task);
        st.record(target, level, task, true);
    }
    if i > s && i + s <= nblocks {
        let fill = lay.e_index(level + 1, (i - s) / (2 * s));
        let right = unsafe { st.arena.get(lay.e_index(level, i / s)) };
        let left = unsafe { st.arena.get(lay.e_index(level, i / s - 1)) };
        let f = unsafe { st.arena.get_mut(fill, task) };
        *f = kernels::gemm_neg(right, left, None, meter);
        st.record(fill, level, task, false);
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// level completion events (interlacing)
// ---------------------------------------------------------------------------

/// Per-level completion events: the factorization publishes levels, a
/// concurrent forward substitution consumes them.
pub struct LevelEvents {
    states: Vec<(Mutex<LevelState>, Condvar)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum LevelState {
    Pending,
    Ready,
    Failed,
}

impl LevelEvents {
    pub fn new(nlevels: usize) -> Self {
        Self {
            states: (0..nlevels)
                .map(|_| (Mutex::new(LevelState::Pending), Condvar::new()))
                .collect(),
        }
    }

    pub fn mark_ready(&self, level: usize) {
        let (m, cv) = &self.states[level - 1];
        *m.lock().unwrap() = LevelState::Ready;
        cv.notify_all();
    }

    /// Fail every level that has not been published yet.
    pub fn mark_pending_failed(&self) {
        for (m, cv) in &self.states {
            let mut st = m.lock().unwrap();
            if *st == LevelState::Pending {
                *st = LevelState::Failed;
            }
            cv.notify_all();
        }
    }

    /// Block until the level is published; `IncompleteFactor` if it never
    /// will be.
    pub fn wait_ready(&self, level: usize) -> Result<()> {
        let (m, cv) = &self.states[level - 1];
        let mut st = m.lock().unwrap();
        while *st == LevelState::Pending {
            st = cv.wait(st).unwrap();
        }
        match *st {
            LevelState::Ready => Ok(()),
            _ => Err(Error::IncompleteFactor { level }),
        }
    }
}

/// Marks unpublished levels failed even if the producer unwinds.
struct PublishGuard<'a>(&'a LevelEvents);

impl Drop for PublishGuard<'_> {
    fn drop(&mut self) {
        self.0.mark_pending_failed();
    }
}

// ---------------------------------------------------------------------------
// driver
// ---------------------------------------------------------------------------

fn ms_alloc_blocks<S: Scalar>(m: &BlockTridiag<S>, layout: &LeveledLayout) -> Vec<DenseBlock<S>> {
    let nblocks = m.nblocks();
    let n = m.block_size();
    let mut blocks = Vec::with_capacity(layout.total_blocks());
    for l in 1..=layout.nlevels() {
        for c in columns_at_level(nblocks, stride_of_level(l)) {
            blocks.push(m.diag(c - 1).clone());
        }
    }
    for l in 1..=layout.nlevels() {
        for k in 1..=layout.e_len(l) {
            if l == 1 {
                blocks.push(m.offdiag(k - 1).clone());
            } else {
                blocks.push(DenseBlock::zeros(n, n));
            }
        }
    }
    blocks
}

/// Run all level waves on an already allocated arena. Returns per-level
/// wall units and the total.
fn ms_run_levels<S: Scalar>(
    st: &MsState<'_, S>,
    nblocks: usize,
    mode: FactorMode,
    opts: &RunOptions,
    events: Option<&LevelEvents>,
) -> Result<(Vec<u64>, u64)> {
    let _guard = events.map(PublishGuard);
    let mut level_units = Vec::with_capacity(st.layout.nlevels());
    let mut total_units = 0u64;
    for level in 1..=st.layout.nlevels() {
        let stride = stride_of_level(level);
        let cols: Vec<usize> = columns_at_level(nblocks, stride).collect();
        let ctx = LevelCtx::new(cols.len());
        st.arena.begin_level();
        let threads = opts.workers.threads_for(cols.len());
        run_level(threads, cols.len(), |t| {
            if ctx.failed() {
                return;
            }
            let local = FlopMeter::new();
            let out = match mode {
                FactorMode::Deferred => {
                    ms_column_deferred(st, nblocks, level, stride, cols[t], t, &local)
                }
                FactorMode::RightLookingAtomic => {
                    ms_column_atomic(st, nblocks, level, stride, cols[t], t, &local)
                }
            };
            match out {
                Ok(()) => ctx.record_units(t, local.thirds()),
                Err(e) => ctx.record_error(e),
            }
        });
        let units = ctx.finish()?;
        total_units += units.iter().sum::<u64>();
        level_units.push(fold_waves(&units, opts.workers));
        if let Some(ev) = events {
            ev.mark_ready(level);
        }
    }
    Ok((level_units, total_units))
}

fn ms_repack<S: Scalar>(
    layout: &LeveledLayout,
    n: usize,
    blocks: Vec<DenseBlock<S>>,
) -> LeveledFactor<S> {
    let nblocks = layout.nblocks();
    let mut iter = blocks.into_iter();
    let mut dhat = Vec::with_capacity(layout.nlevels());
    for l in 1..=layout.nlevels() {
        let count = columns_at_level(nblocks, stride_of_level(l)).count();
        dhat.push(iter.by_ref().take(count).collect());
    }
    let mut ehat = Vec::with_capacity(layout.nlevels());
    for l in 1..=layout.nlevels() {
        ehat.push(iter.by_ref().take(layout.e_len(l)).collect());
    }
    LeveledFactor {
        n,
        nblocks,
        dhat,
        ehat,
    }
}

/// Factor the fully permuted ordering in `floor(log2 N) + 1` level waves.
pub fn factor_multi_stage<S: Scalar>(
    m: &BlockTridiag<S>,
    mode: FactorMode,
    opts: &RunOptions,
    meter: &FlopMeter,
) -> Result<MultiStageRun<S>> {
    let layout = LeveledLayout::new(m.nblocks());
    let mut blocks = ms_alloc_blocks(m, &layout);
    let log = opts.record_writes.then(WriteLog::new);
    let outcome = {
        let arena = SharedBlocks::new(&mut blocks);
        let st = MsState {
            layout: &layout,
            arena: &arena,
            log: log.as_ref(),
        };
        ms_run_levels(&st, m.nblocks(), mode, opts, None)
    };
    let (level_units, total_units) = outcome?;
    let wall_units: u64 = level_units.iter().sum();
    meter.add(wall_units);
    Ok(MultiStageRun {
        factor: ms_repack(&layout, m.block_size(), blocks),
        level_units,
        total_units,
        wall_units,
        write_log: log.map(WriteLog::into_records),
    })
}

// ---------------------------------------------------------------------------
// multi-stage solve
// ---------------------------------------------------------------------------

/// Read-only view of the leveled blocks a solve needs; either the finished
/// factor or the live arena of an in-flight factorization (sound for levels
/// already published).
trait LeveledView<S>: Sync {
    fn dhat_col(&self, col: usize) -> &DenseBlock<S>;
    fn ehat(&self, level: usize, k: usize) -> &DenseBlock<S>;
}

impl<S: Scalar> LeveledView<S> for LeveledFactor<S> {
    fn dhat_col(&self, col: usize) -> &DenseBlock<S> {
        LeveledFactor::dhat_col(self, col)
    }
    fn ehat(&self, level: usize, k: usize) -> &DenseBlock<S> {
        LeveledFactor::ehat(self, level, k)
    }
}

struct ArenaView<'a, S> {
    layout: &'a LeveledLayout,
    arena: &'a SharedBlocks<'a, S>,
}

impl<S: Scalar> LeveledView<S> for ArenaView<'_, S> {
    fn dhat_col(&self, col: usize) -> &DenseBlock<S> {
        unsafe { self.arena.get(self.layout.d_index(col)) }
    }
    fn ehat(&self, level: usize, k: usize) -> &DenseBlock<S> {
        unsafe { self.arena.get(self.layout.e_index(level, k)) }
    }
}

/// Result of a leveled solve.
#[derive(Debug)]
pub struct SolveRun<S> {
    pub x: RhsBlocks<S>,
    /// Wave-folded units per level iteration: forward sweep levels
    /// ascending, then backward descending.
    pub level_units: Vec<u64>,
    pub total_units: u64,
    pub wall_units: u64,
}

/// Forward sweep of one level. Every active column solves its own segment
/// and produces one contribution per even neighbor; contributions are
/// applied after the wave in ascending column order, so the result is
/// bitwise reproducible for any worker count.
fn forward_level<S: Scalar, V: LeveledView<S>>(
    f: &V,
    nblocks: usize,
    y: &mut [DenseBlock<S>],
    level: usize,
    workers: Workers,
) -> Result<(u64, u64)> {
    let stride = stride_of_level(level);
    let cols: Vec<usize> = columns_at_level(nblocks, stride).collect();
    #[allow(clippy::type_complexity)]
    let slots: Vec<
        OnceLock<
            Result<(
                DenseBlock<S>,
                Option<DenseBlock<S>>,
                Option<DenseBlock<S>>,
                u64,
            )>,
        >,
    > = (0..cols.len()).map(|_| OnceLock::new()).collect();
    let y_ref: &[DenseBlock<S>] = y;
    let threads = workers.threads_for(cols.len());
    run_level(threads, cols.len(), |t| {
        let i = cols[t];
        let out = (|| {
            let local = FlopMeter::new();
            let yi = kernels::trsm_left(&y_ref[i - 1], f.dhat_col(i), &local)?;
            let down = (i + stride <= nblocks)
                .then(|| kernels::gemm_neg(f.ehat(level, i / stride), &yi, None, &local));
            let up = (i > stride)
                .then(|| kernels::gemm_tn_neg(f.ehat(level, i / stride - 1), &yi, None, &local));
            Ok((yi, down, up, local.thirds()))
        })();
        slots[t].set(out).expect("solve slot set twice");
    });
    let mut units = vec![0u64; cols.len()];
    let mut pending = Vec::with_capacity(cols.len());
    for (t, slot) in slots.into_iter().enumerate() {
        let (yi, down, up, u) = slot.into_inner().expect("solve task never ran")?;
        units[t] = u;
        pending.push((cols[t], yi, down, up));
    }
    // fixed application order: ascending column, later neighbor first
    for (i, yi, down, up) in pending {
        y[i - 1] = yi;
        if let Some(d) = down {
            let target = &mut y[i + stride - 1];
            for (t, v) in target.data_mut().iter_mut().zip(d.data()) {
                *t += *v;
            }
        }
        if let Some(u) = up {
            let target = &mut y[i - stride - 1];
            for (t, v) in target.data_mut().iter_mut().zip(u.data()) {
                *t += *v;
            }
        }
    }
    Ok((fold_waves(&units, workers), units.iter().sum()))
}

/// Backward sweep of one level: each active column folds in its even
/// neighbors (finalized at higher levels) and back-solves. Writes are
/// column-local, no contributions cross tasks.
fn backward_level<S: Scalar>(
    f: &LeveledFactor<S>,
    x: &mut [DenseBlock<S>],
    level: usize,
    workers: Workers,
) -> Result<(u64, u64)> {
    let nblocks = f.nblocks();
    let stride = stride_of_level(level);
    let cols: Vec<usize> = columns_at_level(nblocks, stride).collect();
    #[allow(clippy::type_complexity)]
    let slots: Vec<OnceLock<Result<(DenseBlock<S>, u64)>>> =
        (0..cols.len()).map(|_| OnceLock::new()).collect();
    let x_ref: &[DenseBlock<S>] = x;
    let threads = workers.threads_for(cols.len());
    run_level(threads, cols.len(), |t| {
        let i = cols[t];
        let out = (|| {
            let local = FlopMeter::new();
            let mut xi = x_ref[i - 1].clone();
            if i + stride <= nblocks {
                xi = kernels::gemm_tn_neg(
                    f.ehat(level, i / stride),
                    &x_ref[i + stride - 1],
                    Some(&xi),
                    &local,
                );
            }
            if i > stride {
                xi = kernels::gemm_neg(
                    f.ehat(level, i / stride - 1),
                    &x_ref[i - stride - 1],
                    Some(&xi),
                    &local,
                );
            }
            let xi = kernels::trsm_left_trans(&xi, f.dhat_col(i), &local)?;
            Ok((xi, local.thirds()))
        })();
        slots[t].set(out).expect("solve slot set twice");
    });
    let mut units = vec![0u64; cols.len()];
    for (t, slot) in slots.into_iter().enumerate() {
        let (xi, u) = slot.into_inner().expect("solve task never ran")?;
        x[cols[t] - 1] = xi;
        units[t] = u;
    }
    Ok((fold_waves(&units, workers), units.iter().sum()))
}

fn solve_shape_check<S: Scalar>(
    nblocks: usize,
    n: usize,
    b: &RhsBlocks<S>,
    op: &'static str,
) -> Result<()> {
    if b.nblocks() != nblocks || b.block_rows() != n {
        return Err(Error::ShapeMismatch {
            op,
            expected: (nblocks, n),
            got: (b.nblocks(), b.block_rows()),
        });
    }
    Ok(())
}

/// Solve with a completed multi-stage factor: forward over ascending
/// strides, backward over descending strides, `2 floor(log2 N) + 2` level
/// iterations in total.
pub fn solve_multi_stage<S: Scalar>(
    f: &LeveledFactor<S>,
    b: &RhsBlocks<S>,
    opts: &RunOptions,
    meter: &FlopMeter,
) -> Result<SolveRun<S>> {
    solve_shape_check(f.nblocks(), f.block_size(), b, "solve_multi_stage")?;
    let nlevels = level_count(f.nblocks());
    let mut y: Vec<DenseBlock<S>> = b.blocks().to_vec();
    let mut level_units = Vec::with_capacity(2 * nlevels);
    let mut total_units = 0u64;
    for level in 1..=nlevels {
        let (wall, total) = forward_level(f, f.nblocks(), &mut y, level, opts.workers)?;
        level_units.push(wall);
        total_units += total;
    }
    for level in (1..=nlevels).rev() {
        let (wall, total) = backward_level(f, &mut y, level, opts.workers)?;
        level_units.push(wall);
        total_units += total;
    }
    let wall_units: u64 = level_units.iter().sum();
    meter.add(wall_units);
    Ok(SolveRun {
        x: RhsBlocks::from_blocks(y),
        level_units,
        total_units,
        wall_units,
    })
}

/// Factor and solve with the forward substitution interlaced: each forward
/// level starts as soon as the factorization publishes that level, while
/// later factor levels are still running. The backward sweep starts at the
/// top stride, which completes last, so it runs after the factorization.
pub fn factor_and_solve_interlaced<S: Scalar>(
    m: &BlockTridiag<S>,
    b: &RhsBlocks<S>,
    mode: FactorMode,
    opts: &RunOptions,
    factor_meter: &FlopMeter,
    solve_meter: &FlopMeter,
) -> Result<(MultiStageRun<S>, SolveRun<S>)> {
    solve_shape_check(
        m.nblocks(),
        m.block_size(),
        b,
        "factor_and_solve_interlaced",
    )?;
    let nblocks = m.nblocks();
    let layout = LeveledLayout::new(nblocks);
    let nlevels = layout.nlevels();
    let mut blocks = ms_alloc_blocks(m, &layout);
    let log = opts.record_writes.then(WriteLog::new);
    let events = LevelEvents::new(nlevels);

    type FwdOut<S> = Result<(Vec<DenseBlock<S>>, Vec<u64>, u64)>;
    let mut factor_out: Option<Result<(Vec<u64>, u64)>> = None;
    let mut fwd_out: Option<FwdOut<S>> = None;
    {
        let arena = SharedBlocks::new(&mut blocks);
        let st = MsState {
            layout: &layout,
            arena: &arena,
            log: log.as_ref(),
        };
        let view = ArenaView {
            layout: &layout,
            arena: &arena,
        };
        let (f_slot, s_slot) = (&mut factor_out, &mut fwd_out);
        let (ev, st_ref, view_ref) = (&events, &st, &view);
        std::thread::scope(|scope| {
            scope.spawn(move || {
                *f_slot = Some(ms_run_levels(st_ref, nblocks, mode, opts, Some(ev)));
            });
            scope.spawn(move || {
                let result = (|| {
                    let mut y: Vec<DenseBlock<S>> = b.blocks().to_vec();
                    let mut walls = Vec::with_capacity(nlevels);
                    let mut total = 0u64;
                    for level in 1..=nlevels {
                        ev.wait_ready(level)?;
                        // the blocks this level reads were finalized before
                        // the event fired and are never written again
                        let (wall, t) =
                            forward_level(view_ref, nblocks, &mut y, level, opts.workers)?;
                        walls.push(wall);
                        total += t;
                    }
                    Ok((y, walls, total))
                })();
                *s_slot = Some(result);
            });
        });
    }

    let (level_units, total_units) = factor_out.expect("factor thread ran")?;
    let wall_units: u64 = level_units.iter().sum();
    factor_meter.add(wall_units);
    let run = MultiStageRun {
        factor: ms_repack(&layout, m.block_size(), blocks),
        level_units,
        total_units,
        wall_units,
        write_log: log.map(WriteLog::into_records),
    };

    let (y, mut solve_levels, mut solve_total) = fwd_out.expect("solve thread ran")?;
    let mut x = y;
    for level in (1..=nlevels).rev() {
        let (wall, total) = backward_level(&run.factor, &mut x, level, opts.workers)?;
        solve_levels.push(wall);
        solve_total += total;
    }
    let solve_wall: u64 = solve_levels.iter().sum();
    solve_meter.add(solve_wall);
    Ok((
        run,
        SolveRun {
            x: RhsBlocks::from_blocks(x),
            level_units: solve_levels,
            total_units: solve_total,
            wall_units: solve_wall,
        },
    ))
}

// ---------------------------------------------------------------------------
// single-stage factorization
// ---------------------------------------------------------------------------

/// Factor of the two-level odd/even ordering: diagonal factors in natural
/// index order, the mixed-orientation couplings, and the fill chain between
/// consecutive even columns.
///
/// `ehat[i-1]` (1-based coupling i) is right-solved for odd i and
/// left-solved for even i, matching which odd column eliminated it.
/// `hhat[j-1]` couples even columns 2j and 2j+2, right-solved in the
/// sequential tail.
#[derive(Debug, Clone)]
pub struct SingleStageFactor<S> {
    n: usize,
    nblocks: usize,
    pub dhat: Vec<DenseBlock<S>>,
    pub ehat: Vec<DenseBlock<S>>,
    pub hhat: Vec<DenseBlock<S>>,
}

impl<S: Scalar> SingleStageFactor<S> {
    pub fn block_size(&self) -> usize {
        self.n
    }

    pub fn nblocks(&self) -> usize {
        self.nblocks
    }
}

/// Result of a single-stage factorization run.
#[derive(Debug)]
pub struct SingleStageRun<S> {
    pub factor: SingleStageFactor<S>,
    /// Wave-folded units of (odd parallel phase, even downdate phase,
    /// sequential tail).
    pub phase_units: [u64; 3],
    pub total_units: u64,
    pub wall_units: u64,
}

/// Factor the two-level ordering: odd columns in parallel, even downdates in
/// parallel, then the even chain sequentially.
pub fn factor_single_stage<S: Scalar>(
    m: &BlockTridiag<S>,
    opts: &RunOptions,
    meter: &FlopMeter,
) -> Result<SingleStageRun<S>> {
    let nblocks = m.nblocks();
    let n = m.block_size();
    let hcount = nblocks.saturating_sub(2) / 2;
    let mut d: Vec<DenseBlock<S>> = m.diag_blocks().to_vec();
    let mut e: Vec<DenseBlock<S>> = m.offdiag_blocks().to_vec();
    let mut h: Vec<DenseBlock<S>> = (0..hcount).map(|_| DenseBlock::zeros(n, n)).collect();

    let mut total_units = 0u64;
    let mut phase_units = [0u64; 3];

    // phase 1: odd columns
    let odd: Vec<usize> = (1..=nblocks).step_by(2).collect();
    {
        let d_arena = SharedBlocks::new(&mut d);
        let e_arena = SharedBlocks::new(&mut e);
        let h_arena = SharedBlocks::new(&mut h);
        let ctx = LevelCtx::new(odd.len());
        let threads = opts.workers.threads_for(odd.len());
        run_level(threads, odd.len(), |t| {
            if ctx.failed() {
                return;
            }
            let i = odd[t];
            let local = FlopMeter::new();
            let out = (|| -> Result<()> {
                {
                    let di = unsafe { d_arena.get_mut(i - 1, t) };
                    *di = kernels::potrf(di, &local).map_err(|e| leveled_site(1, i, e))?;
                }
                let di = unsafe { d_arena.get(i - 1) };
                if i < nblocks {
                    let ei = unsafe { e_arena.get_mut(i - 1, t) };
                    *ei = kernels::trsm_right(ei, di, &local)?;
                    let dnext = unsafe { d_arena.get_mut(i, t) };
                    *dnext = kernels::syrk_down(dnext, ei, false, &local);
                }
                if i > 1 {
                    let eprev = unsafe { e_arena.get_mut(i - 2, t) };
                    *eprev = kernels::trsm_left(eprev, di, &local)?;
                }
                if i > 1 && i < nblocks {
                    let right = unsafe { e_arena.get(i - 1) };
                    let left = unsafe { e_arena.get(i - 2) };
                    let fill = unsafe { h_arena.get_mut((i - 1) / 2 - 1, t) };
                    *fill = kernels::gemm_neg(right, left, None, &local);
                }
                Ok(())
            })();
            match out {
                Ok(()) => ctx.record_units(t, local.thirds()),
                Err(e) => ctx.record_error(e),
            }
        });
        let units = ctx.finish()?;
        total_units += units.iter().sum::<u64>();
        phase_units[0] = fold_waves(&units, opts.workers);
    }

    // phase 2: even columns consume their right neighbor's downdate
    let evens: Vec<usize> = (2..nblocks).step_by(2).collect();
    {
        let d_arena = SharedBlocks::new(&mut d);
        d_arena.begin_level();
        let e_ref: &[DenseBlock<S>] = &e;
        let ctx = LevelCtx::new(evens.len());
        let threads = opts.workers.threads_for(evens.len());
        run_level(threads, evens.len(), |t| {
            let i = evens[t];
            let local = FlopMeter::new();
            let di = unsafe { d_arena.get_mut(i - 1, t) };
            *di = kernels::syrk_down(di, &e_ref[i - 1], true, &local);
            ctx.record_units(t, local.thirds());
        });
        let units = ctx.finish()?;
        total_units += units.iter().sum::<u64>();
        phase_units[1] = fold_waves(&units, opts.workers);
    }

    // sequential tail: eliminate the even chain through the fill couplings
    {
        let local = FlopMeter::new();
        if nblocks >= 2 {
            d[1] = kernels::potrf(&d[1], &local).map_err(|e| leveled_site(2, 2, e))?;
            let mut i = 4;
            while i <= nblocks {
                let hj = i / 2 - 2; // 0-based fill index between i-2 and i
                h[hj] = kernels::trsm_right(&h[hj], &d[i - 3], &local)?;
                d[i - 1] = kernels::syrk_down(&d[i - 1], &h[hj], false, &local);
                d[i - 1] = kernels::potrf(&d[i - 1], &local).map_err(|e| leveled_site(2, i, e))?;
                i += 2;
            }
        }
        total_units += local.thirds();
        phase_units[2] = local.thirds();
    }

    let wall_units = phase_units.iter().sum();
    meter.add(wall_units);
    Ok(SingleStageRun {
        factor: SingleStageFactor {
            n,
            nblocks,
            dhat: d,
            ehat: e,
            hhat: h,
        },
        phase_units,
        total_units,
        wall_units,
    })
}
