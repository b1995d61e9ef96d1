//! Partition strategy: split the chain into p independent chunks separated
//! by p-1 pivot blocks that move to the end of the ordering. Chunks factor
//! concurrently (producing fill rows against their pivot); a short
//! sequential phase then eliminates the pivots.
//!
//! The pivot updates are deliberately split between the phases: each chunk
//! subtracts its own fill-row contributions into its pivot during the
//! parallel phase, while the coupling produced by the *previous* chunk is
//! deferred to the sequential phase, so no pivot ever has two concurrent
//! writers. A hybrid left-/right-looking schedule, in other words.

use std::sync::OnceLock;

use crate::block::DenseBlock;
use crate::error::{Error, FailSite, Result};
use crate::kernels;
use crate::matrix::BlockTridiag;
use crate::meter::{fold_waves, FlopMeter, Workers};
use crate::ratio::Ratio;
use crate::scalar::Scalar;
use crate::schedule::run_level;

/// Sizing of the partition ordering.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPlan {
    nblocks: usize,
    sizes: Vec<usize>,
    /// Modeled cost with p threads at n = 1, in thirds: most expensive
    /// chunk plus the sequential pivot phase.
    predicted_cost_units: u64,
}

impl PartitionPlan {
    pub fn new(nblocks: usize, sizes: Vec<usize>) -> Self {
        let parts = sizes.len();
        assert!(parts >= 1);
        assert!(sizes.iter().all(|&s| s >= 1));
        assert_eq!(sizes.iter().sum::<usize>() + parts - 1, nblocks);
        let predicted_cost_units = plan_cost_units(&sizes);
        Self {
            nblocks,
            sizes,
            predicted_cost_units,
        }
    }

    pub fn nblocks(&self) -> usize {
        self.nblocks
    }

    pub fn parts(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn predicted_cost_units(&self) -> u64 {
        self.predicted_cost_units
    }

    /// 0-based global index of the first block of partition `j`.
    pub fn chunk_start(&self, j: usize) -> usize {
        self.sizes[..j].iter().map(|s| s + 1).sum()
    }

    /// 0-based global index of the pivot block following partition `j`
    /// (`j < parts-1`).
    pub fn pivot_index(&self, j: usize) -> usize {
        self.chunk_start(j) + self.sizes[j]
    }
}

/// Exact units (n = 1) one chunk spends in the parallel phase, following the
/// factorization literally. The generic interior chunk runs the full
/// pipeline; the first chunk carries no fill row, and the last produces no
/// coupling to a following pivot.
pub fn chunk_units(j: usize, size: usize, parts: usize) -> u64 {
    let size = size as u64;
    if parts == 1 {
        return 7 * size - 6;
    }
    if j == 0 {
        7 * size - 3
    } else if j + 1 < parts {
        19 * size - 3
    } else {
        19 * size - 12
    }
}

/// Exact units (n = 1) of the sequential pivot phase.
pub fn sequential_units(parts: usize) -> u64 {
    if parts >= 2 {
        10 * parts as u64 - 16
    } else {
        0
    }
}

fn plan_cost_units(sizes: &[usize]) -> u64 {
    let parts = sizes.len();
    let wall = sizes
        .iter()
        .enumerate()
        .map(|(j, &s)| chunk_units(j, s, parts))
        .max()
        .unwrap_or(0);
    wall + sequential_units(parts)
}

/// Continuous optimum chunk sizes `(first, interior)` from balancing the
/// two per-chunk cost rates; their ratio is 19/7 independent of p and n.
pub fn continuous_optimum(nblocks: usize, parts: usize) -> (f64, f64) {
    assert!(parts >= 1);
    let nodes = (nblocks - (parts - 1)) as f64;
    let den = (7 * parts + 12) as f64;
    (19.0 * nodes / den, 7.0 * nodes / den)
}

/// The exact size ratio the continuous optimum satisfies: 19/7.
pub fn optimal_size_ratio() -> Ratio {
    Ratio::new(19, 7)
}

/// Theoretical speedup limit of the partition strategy as N grows:
/// `7p/19 + 12/19`, exact.
pub fn max_speedup_partition(parts: usize) -> Ratio {
    Ratio::new(7 * parts as u64 + 12, 19)
}

/// Pick chunk sizes for `parts` threads: balance the first chunk (cheap per
/// block) against the interior chunks (fill-carrying, expensive per block),
/// rounding the interior size both ways and keeping the rounding whose
/// worst chunk is cheapest. Ties go to the larger interior size.
pub fn optimal_partition(nblocks: usize, parts: usize) -> Result<PartitionPlan> {
    assert!(parts >= 1);
    if parts == 1 {
        return Ok(PartitionPlan::new(nblocks, vec![nblocks]));
    }
    if nblocks < 2 * parts - 1 {
        return Err(Error::InfeasiblePartition {
            nblocks,
            parts,
            min: 2 * parts - 1,
        });
    }
    let nodes = nblocks - (parts - 1);
    let (_, nk_star) = continuous_optimum(nblocks, parts);
    let down = nk_star.floor() as usize;
    let up = nk_star.ceil() as usize;
    let mut best: Option<(u64, usize)> = None;
    for nk in [down, up] {
        if nk < 1 {
            continue;
        }
        let rest = (parts - 1) * nk;
        if rest + 1 > nodes {
            continue;
        }
        let n1 = nodes - rest;
        let cost = (7 * n1 as u64 - 3).max(19 * nk as u64 - 3);
        let better = match best {
            None => true,
            // strict improvement, or same cost with larger interior size
            Some((c, k)) => cost < c || (cost == c && nk > k),
        };
        if better {
            best = Some((cost, nk));
        }
    }
    let (_, nk) = best.expect("at least one rounding is feasible when N >= 2p-1");
    let n1 = nodes - (parts - 1) * nk;
    let mut sizes = vec![nk; parts];
    sizes[0] = n1;
    Ok(PartitionPlan::new(nblocks, sizes))
}

/// Factor of the partition-permuted matrix.
///
/// `bhat[j][i]` is stored untransposed: the factor's pivot row holds its
/// transpose under column i of partition j. `ahat`/`fhat` have one entry per
/// pivot, `hhat` one per interior pivot coupling.
#[derive(Debug, Clone)]
pub struct PartitionFactor<S> {
    n: usize,
    nblocks: usize,
    sizes: Vec<usize>,
    pub dhat: Vec<Vec<DenseBlock<S>>>,
    pub ehat: Vec<Vec<DenseBlock<S>>>,
    pub bhat: Vec<Vec<DenseBlock<S>>>,
    pub ahat: Vec<DenseBlock<S>>,
    pub fhat: Vec<DenseBlock<S>>,
    pub hhat: Vec<DenseBlock<S>>,
}

impl<S: Scalar> PartitionFactor<S> {
    pub fn block_size(&self) -> usize {
        self.n
    }

    pub fn nblocks(&self) -> usize {
        self.nblocks
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }
}

/// Meter breakdown of one partition factorization.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartitionPhaseUnits {
    /// Exact units each chunk spent (parallel phase), chunk order.
    pub per_partition: Vec<u64>,
    /// Wall model of the parallel phase: the most expensive chunk.
    pub parallel_wall: u64,
    /// Sum over chunks (total work of the parallel phase).
    pub parallel_total: u64,
    /// Sequential pivot phase units.
    pub sequential: u64,
}

impl PartitionPhaseUnits {
    /// Units the shared meter advanced by: wall + sequential.
    pub fn wall_total(&self) -> u64 {
        self.parallel_wall + self.sequential
    }
}

struct ChunkOut<S> {
    dhat: Vec<DenseBlock<S>>,
    ehat: Vec<DenseBlock<S>>,
    bhat: Vec<DenseBlock<S>>,
    ahat: Option<DenseBlock<S>>,
    fhat: Option<DenseBlock<S>>,
    hhat: Option<DenseBlock<S>>,
    units: u64,
}

fn factor_chunk<S: Scalar>(
    m: &BlockTridiag<S>,
    plan: &PartitionPlan,
    j: usize,
) -> Result<ChunkOut<S>> {
    let parts = plan.parts();
    let size = plan.sizes()[j];
    let start = plan.chunk_start(j);
    let meter = FlopMeter::new();
    let site = |local: usize| FailSite::Partition {
        partition: j + 1,
        local,
    };

    let mut dhat: Vec<DenseBlock<S>> = Vec::with_capacity(size);
    let mut ehat: Vec<DenseBlock<S>> = Vec::with_capacity(size.saturating_sub(1));
    let mut bhat: Vec<DenseBlock<S>> = Vec::with_capacity(if j > 0 { size } else { 0 });
    let mut ahat = None;
    if j > 0 {
        let pivot = plan.pivot_index(j - 1);
        ahat = Some(m.diag(pivot).clone());
        bhat.push(m.offdiag(pivot).clone());
    }

    let mut work = m.diag(start).clone();
    for i in 0..size {
        let d = kernels::potrf(&work, &meter).map_err(|e| match e {
            Error::NotPositiveDefinite { pivot, .. } => Error::NotPositiveDefinite {
                site: site(i + 1),
                pivot,
            },
            other => other,
        })?;
        if i + 1 < size {
            let e = kernels::trsm_right(m.offdiag(start + i), &d, &meter)?;
            work = kernels::syrk_down(m.diag(start + i + 1), &e, false, &meter);
            ehat.push(e);
        }
        if j > 0 {
            let b = kernels::trsm_left(&bhat[i], &d, &meter)?;
            let a = kernels::syrk_down(ahat.as_ref().unwrap(), &b, true, &meter);
            ahat = Some(a);
            if i + 1 < size {
                let next = kernels::gemm_neg(&ehat[i], &b, None, &meter);
                bhat.push(next);
            }
            bhat[i] = b;
        }
        dhat.push(d);
    }

    let mut fhat = None;
    let mut hhat = None;
    if j + 1 < parts {
        let f_in = m.offdiag(plan.pivot_index(j) - 1);
        let f = kernels::trsm_right(f_in, &dhat[size - 1], &meter)?;
        if j > 0 {
            hhat = Some(kernels::gemm_neg(&f, &bhat[size - 1], None, &meter));
        }
        fhat = Some(f);
    }

    Ok(ChunkOut {
        dhat,
        ehat,
        bhat,
        ahat,
        fhat,
        hhat,
        units: meter.thirds(),
    })
}

/// Two-phase factorization of the partition ordering: the p chunks in
/// parallel, a barrier, then the pivot chain sequentially. The shared meter
/// advances by the parallel wall (most expensive chunk) plus the sequential
/// phase; per-chunk exact units come back in the breakdown.
pub fn factor_partition<S: Scalar>(
    m: &BlockTridiag<S>,
    plan: &PartitionPlan,
    meter: &FlopMeter,
) -> Result<(PartitionFactor<S>, PartitionPhaseUnits)> {
    assert_eq!(plan.nblocks(), m.nblocks(), "plan does not match matrix");
    let parts = plan.parts();
    let slots: Vec<OnceLock<Result<ChunkOut<S>>>> = (0..parts).map(|_| OnceLock::new()).collect();
    let threads = Workers::finite(parts as u64).threads_for(parts);
    run_level(threads, parts, |j| {
        let out = factor_chunk(m, plan, j);
        slots[j].set(out).ok().expect("chunk slot set twice");
    });

    let mut per_partition = Vec::with_capacity(parts);
    let mut dhat = Vec::with_capacity(parts);
    let mut ehat = Vec::with_capacity(parts);
    let mut bhat = Vec::with_capacity(parts);
    let mut ahat = Vec::with_capacity(parts.saturating_sub(1));
    let mut fhat = Vec::with_capacity(parts.saturating_sub(1));
    let mut hhat = Vec::with_capacity(parts.saturating_sub(2));
    for slot in slots {
        let out = slot.into_inner().expect("chunk never ran")?;
        per_partition.push(out.units);
        dhat.push(out.dhat);
        ehat.push(out.ehat);
        bhat.push(out.bhat);
        if let Some(a) = out.ahat {
            ahat.push(a);
        }
        if let Some(f) = out.fhat {
            fhat.push(f);
        }
        if let Some(h) = out.hhat {
            hhat.push(h);
        }
    }

    let parallel_wall = per_partition.iter().copied().max().unwrap_or(0);
    let parallel_total = per_partition.iter().sum();
    debug_assert_eq!(
        parallel_wall,
        fold_waves(&per_partition, Workers::finite(parts as u64))
    );

    // sequential pivot phase: consume the deferred couplings left-looking
    let seq_meter = FlopMeter::new();
    for q in 0..ahat.len() {
        let a = kernels::syrk_down(&ahat[q], &fhat[q], false, &seq_meter);
        let a = kernels::potrf(&a, &seq_meter).map_err(|e| match e {
            Error::NotPositiveDefinite { pivot, .. } => Error::NotPositiveDefinite {
                site: FailSite::Pivot { pivot: q + 1 },
                pivot,
            },
            other => other,
        })?;
        if q + 1 < ahat.len() {
            let h = kernels::trsm_right(&hhat[q], &a, &seq_meter)?;
            ahat[q + 1] = kernels::syrk_down(&ahat[q + 1], &h, false, &seq_meter);
            hhat[q] = h;
        }
        ahat[q] = a;
    }
    let sequential = seq_meter.thirds();

    meter.add(parallel_wall + sequential);
    Ok((
        PartitionFactor {
            n: m.block_size(),
            nblocks: m.nblocks(),
            sizes: plan.sizes().to_vec(),
            dhat,
            ehat,
            bhat,
            ahat,
            fhat,
            hhat,
        },
        PartitionPhaseUnits {
            per_partition,
            parallel_wall,
            parallel_total,
            sequential,
        },
    ))
}
