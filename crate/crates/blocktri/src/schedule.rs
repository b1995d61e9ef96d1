//! Execution engine: level-synchronous fork-join over worker threads,
//! per-block accumulation safety, write instrumentation, and an
//! operation-level dependency graph with a deterministic simulator.

use std::collections::HashMap;
use std::marker::PhantomData;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};
use std::sync::Mutex;

use crate::block::DenseBlock;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

// ---------------------------------------------------------------------------
// fork-join level runner
// ---------------------------------------------------------------------------

/// Run `ntasks` tasks across `threads` OS threads and wait for all of them
/// (the level barrier). Tasks are claimed from a shared counter; with one
/// thread everything runs inline.
pub fn run_level<F>(threads: usize, ntasks: usize, task: F)
where
    F: Fn(usize) + Sync,
{
    if ntasks == 0 {
        return;
    }
    if threads <= 1 || ntasks == 1 {
        for t in 0..ntasks {
            task(t);
        }
        return;
    }
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..threads.min(ntasks) {
            scope.spawn(|| loop {
                let t = next.fetch_add(1, Ordering::Relaxed);
                if t >= ntasks {
                    break;
                }
                task(t);
            });
        }
    });
}

/// Per-task bookkeeping shared by the workers of one level: meter deltas by
/// task slot and the first error hit.
pub struct LevelCtx {
    units: Vec<AtomicU64>,
    error: Mutex<Option<Error>>,
}

impl LevelCtx {
    pub fn new(ntasks: usize) -> Self {
        Self {
            units: (0..ntasks).map(|_| AtomicU64::new(0)).collect(),
            error: Mutex::new(None),
        }
    }

    pub fn record_units(&self, task: usize, units: u64) {
        self.units[task].store(units, Ordering::Relaxed);
    }

    pub fn record_error(&self, err: Error) {
        let mut slot = self.error.lock().unwrap();
        if slot.is_none() {
            *slot = Some(err);
        }
    }

    pub fn failed(&self) -> bool {
        self.error.lock().unwrap().is_some()
    }

    pub fn finish(self) -> Result<Vec<u64>> {
        if let Some(e) = self.error.into_inner().unwrap() {
            return Err(e);
        }
        Ok(self.units.into_iter().map(|u| u.into_inner()).collect())
    }
}

// ---------------------------------------------------------------------------
// shared block arena
// ---------------------------------------------------------------------------

/// Mutable block arena shared across the workers of one factorization run.
///
/// The scheduler's ownership contract: within a level, each block index is
/// written by at most one task (exclusive writes), except blocks that go
/// through [`SharedBlocks::accumulate_sub`], which serializes per block.
/// Debug builds track every claim and panic on a violated contract.
pub struct SharedBlocks<'a, S> {
    ptr: *mut DenseBlock<S>,
    len: usize,
    locks: Vec<Mutex<()>>,
    tracker: Option<WriteTracker>,
    _life: PhantomData<&'a mut [DenseBlock<S>]>,
}

unsafe impl<S: Send> Send for SharedBlocks<'_, S> {}
unsafe impl<S: Send> Sync for SharedBlocks<'_, S> {}

/// Debug-build write-ownership tracker: block -> (task, accumulate count).
struct WriteTracker {
    claims: Mutex<HashMap<usize, (usize, bool)>>,
}

impl<'a, S: Scalar> SharedBlocks<'a, S> {
    pub fn new(blocks: &'a mut [DenseBlock<S>]) -> Self {
        let len = blocks.len();
        Self {
            ptr: blocks.as_mut_ptr(),
            len,
            locks: (0..len).map(|_| Mutex::new(())).collect(),
            tracker: cfg!(debug_assertions).then(|| WriteTracker {
                claims: Mutex::new(HashMap::new()),
            }),
            _life: PhantomData,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Reset the ownership tracker at a level barrier.
    pub fn begin_level(&self) {
        if let Some(t) = &self.tracker {
            t.claims.lock().unwrap().clear();
        }
    }

    /// Read a block. Sound while no task writes it concurrently, which the
    /// level ownership contract guarantees for anything written at an
    /// earlier level.
    ///
    /// # Safety
    /// Caller must respect the level ownership contract.
    #[allow(clippy::mut_from_ref)]
    pub unsafe fn get(&self, i: usize) -> &DenseBlock<S> {
        debug_assert!(i < self.len);
        &*self.ptr.add(i)
    }

    /// Exclusive write access for the claiming task.
    ///
    /// # Safety
    /// Caller must be the only writer of block `i` in the current level.
    #[allow(clippy::mut_from_ref)]
    pub unsafe fn get_mut(&self, i: usize, task: usize) -> &mut DenseBlock<S> {
        debug_assert!(i < self.len);
        if let Some(t) = &self.tracker {
            let mut claims = t.claims.lock().unwrap();
            match claims.get(&i) {
                Some(&(owner, accum)) => {
                    assert!(
                        owner == task && !accum,
                        "write-ownership violation: block {i} claimed by task {owner} \
                         (accum={accum}), exclusive write attempted by task {task}"
                    );
                }
                None => {
                    claims.insert(i, (task, false));
                }
            }
        }
        &mut *self.ptr.add(i)
    }

    /// Linearizable subtract-accumulate: `block[i] -= delta`, serialized per
    /// block so two concurrent contributors cannot tear each other.
    pub fn accumulate_sub(&self, i: usize, delta: &DenseBlock<S>, task: usize) {
        debug_assert!(i < self.len);
        if let Some(t) = &self.tracker {
            let mut claims = t.claims.lock().unwrap();
            match claims.get_mut(&i) {
                Some((owner, accum)) => {
                    assert!(
                        *accum,
                        "write-ownership violation: block {i} exclusively owned by task \
                         {owner}, accumulate attempted by task {task}"
                    );
                }
                None => {
                    claims.insert(i, (task, true));
                }
            }
        }
        let _guard = self.locks[i].lock().unwrap();
        let target = unsafe { &mut *self.ptr.add(i) };
        assert_eq!(
            (target.rows(), target.cols()),
            (delta.rows(), delta.cols()),
            "accumulate shape mismatch"
        );
        for (t, d) in target.data_mut().iter_mut().zip(delta.data()) {
            *t -= *d;
        }
    }
}

// ---------------------------------------------------------------------------
// write instrumentation
// ---------------------------------------------------------------------------

/// One recorded block write.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WriteRecord {
    pub block: usize,
    pub level: usize,
    pub task: usize,
    pub accumulate: bool,
}

/// Instrumentation log of every block write of a factorization run.
#[derive(Debug, Default)]
pub struct WriteLog {
    records: Mutex<Vec<WriteRecord>>,
}

impl WriteLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record(&self, block: usize, level: usize, task: usize, accumulate: bool) {
        self.records.lock().unwrap().push(WriteRecord {
            block,
            level,
            task,
            accumulate,
        });
    }

    pub fn into_records(self) -> Vec<WriteRecord> {
        self.records.into_inner().unwrap()
    }

    pub fn records(&self) -> Vec<WriteRecord> {
        self.records.lock().unwrap().clone()
    }
}

/// Number of (block, level) pairs written by more than one distinct task
/// through exclusive writes; zero for a sound deferred schedule.
pub fn exclusive_write_conflicts(records: &[WriteRecord]) -> usize {
    let mut owners: HashMap<(usize, usize), usize> = HashMap::new();
    let mut conflicts = 0;
    for r in records.iter().filter(|r| !r.accumulate) {
        match owners.get(&(r.block, r.level)) {
            Some(&t) if t != r.task => conflicts += 1,
            Some(_) => {}
            None => {
                owners.insert((r.block, r.level), r.task);
            }
        }
    }
    conflicts
}

/// Maximum number of distinct tasks accumulating into one block within one
/// level; the right-looking schedule bounds it by two.
pub fn max_accumulate_contention(records: &[WriteRecord]) -> usize {
    let mut writers: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for r in records.iter().filter(|r| r.accumulate) {
        let entry = writers.entry((r.block, r.level)).or_default();
        if !entry.contains(&r.task) {
            entry.push(r.task);
        }
    }
    writers.values().map(Vec::len).max().unwrap_or(0)
}

// ---------------------------------------------------------------------------
// operation-level task graph
// ---------------------------------------------------------------------------

/// Kernel kind of a task-graph node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Potrf,
    Trsm,
    Syrk,
    Gemm,
    SolveStep,
}

impl std::fmt::Display for OpKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            OpKind::Potrf => "potrf",
            OpKind::Trsm => "trsm",
            OpKind::Syrk => "syrk",
            OpKind::Gemm => "gemm",
            OpKind::SolveStep => "solve-step",
        };
        f.write_str(s)
    }
}

/// One kernel invocation in the dependency graph.
#[derive(Debug, Clone)]
pub struct TaskNode {
    pub kind: OpKind,
    /// 1-based stride level.
    pub level: usize,
    /// 1-based column the op belongs to.
    pub column: usize,
    /// Advisory lane (pipeline stream) 1..=3; presentation metadata only.
    pub lane: u8,
    /// Cost in thirds units at n = 1 (m = 1 for solve steps).
    pub weight: u64,
    /// Block written by this node, if any.
    pub writes: Option<usize>,
    /// Blocks read.
    pub reads: Vec<usize>,
    /// True when the write commutes with other accumulating writes.
    pub accumulates: bool,
}

/// Happens-before DAG of kernel invocations.
#[derive(Debug, Clone)]
pub struct TaskGraph {
    nodes: Vec<TaskNode>,
    succs: Vec<Vec<usize>>,
    preds: Vec<Vec<usize>>,
}

impl TaskGraph {
    pub fn new(nodes: Vec<TaskNode>, edges: Vec<(usize, usize)>) -> Self {
        let n = nodes.len();
        let mut succs = vec![Vec::new(); n];
        let mut preds = vec![Vec::new(); n];
        for (u, v) in edges {
            assert!(u < n && v < n && u != v);
            if !succs[u].contains(&v) {
                succs[u].push(v);
                preds[v].push(u);
            }
        }
        for s in &mut succs {
            s.sort_unstable();
        }
        for p in &mut preds {
            p.sort_unstable();
        }
        Self {
            nodes,
            succs,
            preds,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn node(&self, i: usize) -> &TaskNode {
        &self.nodes[i]
    }

    pub fn nodes(&self) -> &[TaskNode] {
        &self.nodes
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (u, ss) in self.succs.iter().enumerate() {
            for &v in ss {
                out.push((u, v));
            }
        }
        out
    }

    pub fn predecessors(&self, i: usize) -> &[usize] {
        &self.preds[i]
    }

    pub fn successors(&self, i: usize) -> &[usize] {
        &self.succs[i]
    }

    /// Longest path length in nodes, with unit node cost.
    pub fn critical_path_len(&self) -> usize {
        let order = self.topo_order().expect("graph must be acyclic");
        let mut depth = vec![1usize; self.len()];
        for &v in &order {
            for &u in &self.preds[v] {
                depth[v] = depth[v].max(depth[u] + 1);
            }
        }
        depth.into_iter().max().unwrap_or(0)
    }

    /// Longest chain among the nodes of one column (its local pipeline depth).
    pub fn column_chain_len(&self, level: usize, column: usize) -> usize {
        let mine: Vec<usize> = (0..self.len())
            .filter(|&i| self.nodes[i].level == level && self.nodes[i].column == column)
            .collect();
        let order = self.topo_order().expect("acyclic");
        let mut depth: HashMap<usize, usize> = mine.iter().map(|&i| (i, 1)).collect();
        for &v in &order {
            if !depth.contains_key(&v) {
                continue;
            }
            let mut best = 1;
            for &u in &self.preds[v] {
                if let Some(&du) = depth.get(&u) {
                    best = best.max(du + 1);
                }
            }
            *depth.get_mut(&v).unwrap() = best;
        }
        depth.into_values().max().unwrap_or(0)
    }

    pub fn topo_order(&self) -> Result<Vec<usize>> {
        let n = self.len();
        let mut indeg: Vec<usize> = (0..n).map(|i| self.preds[i].len()).collect();
        let mut ready: std::collections::BinaryHeap<std::cmp::Reverse<usize>> = (0..n)
            .filter(|&i| indeg[i] == 0)
            .map(std::cmp::Reverse)
            .collect();
        let mut order = Vec::with_capacity(n);
        while let Some(std::cmp::Reverse(v)) = ready.pop() {
            order.push(v);
            for &s in &self.succs[v] {
                indeg[s] -= 1;
                if indeg[s] == 0 {
                    ready.push(std::cmp::Reverse(s));
                }
            }
        }
        if order.len() != n {
            return Err(Error::DeadlockDetected {
                remaining: n - order.len(),
            });
        }
        Ok(order)
    }
}

/// Incremental dependency builder: feed ops in program order, edges come out.
#[derive(Default)]
pub struct GraphBuilder {
    nodes: Vec<TaskNode>,
    edges: Vec<(usize, usize)>,
    last_writer: HashMap<usize, usize>,
    pending_accums: HashMap<usize, Vec<usize>>,
    readers_since: HashMap<usize, Vec<usize>>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, node: TaskNode) -> usize {
        let id = self.nodes.len();
        for &r in &node.reads {
            if let Some(&w) = self.last_writer.get(&r) {
                self.edges.push((w, id));
            }
            if let Some(accs) = self.pending_accums.get(&r) {
                for &a in accs {
                    self.edges.push((a, id));
                }
            }
            self.readers_since.entry(r).or_default().push(id);
        }
        if let Some(w) = node.writes {
            if let Some(&prev) = self.last_writer.get(&w) {
                if prev != id {
                    self.edges.push((prev, id));
                }
            }
            if node.accumulates {
                // commutes with sibling accumulates; only ordered against the
                // prior exclusive writer and readers
                if let Some(readers) = self.readers_since.get(&w) {
                    for &rd in readers {
                        if rd != id {
                            self.edges.push((rd, id));
                        }
                    }
                }
                self.pending_accums.entry(w).or_default().push(id);
            } else {
                if let Some(accs) = self.pending_accums.remove(&w) {
                    for a in accs {
                        if a != id {
                            self.edges.push((a, id));
                        }
                    }
                }
                if let Some(readers) = self.readers_since.remove(&w) {
                    for rd in readers {
                        if rd != id {
                            self.edges.push((rd, id));
                        }
                    }
                }
                self.last_writer.insert(w, id);
            }
        }
        self.nodes.push(node);
        id
    }

    pub fn finish(self) -> TaskGraph {
        let edges = self
            .edges
            .into_iter()
            .filter(|(u, v)| u != v)
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        TaskGraph::new(self.nodes, edges)
    }
}

// ---------------------------------------------------------------------------
// simulator
// ---------------------------------------------------------------------------

/// Simulated execution of one node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeRun {
    pub node: usize,
    pub start: u64,
    pub end: u64,
    pub worker: usize,
}

/// Outcome of a simulated schedule.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub runs: Vec<NodeRun>,
    pub makespan: u64,
    /// Blocks in completion order of their writers.
    pub write_order: Vec<(usize, usize)>,
}

impl RunReport {
    pub fn run_of(&self, node: usize) -> &NodeRun {
        self.runs.iter().find(|r| r.node == node).unwrap()
    }

    /// CSV rows: node id, kind, level, column, lane, start, end.
    pub fn to_csv(&self, graph: &TaskGraph) -> String {
        let mut out = String::from("node,kind,level,column,lane,start,end\n");
        for r in &self.runs {
            let n = graph.node(r.node);
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.node, n.kind, n.level, n.column, n.lane, r.start, r.end
            ));
        }
        out
    }
}

/// Logical schedule of the graph on `workers` identical workers (`None` =
/// unbounded). Node durations are 1 tick, or the node weight when
/// `weighted`. Deterministic: ties break toward lower node ids.
pub fn execute(graph: &TaskGraph, workers: Option<usize>, weighted: bool) -> Result<RunReport> {
    let n = graph.len();
    let cap = workers.unwrap_or(usize::MAX).max(1);
    let mut indeg: Vec<usize> = (0..n).map(|i| graph.predecessors(i).len()).collect();
    let mut ready: std::collections::BinaryHeap<std::cmp::Reverse<usize>> = (0..n)
        .filter(|&i| indeg[i] == 0)
        .map(std::cmp::Reverse)
        .collect();
    // (end, node, worker) of active nodes
    let mut active: std::collections::BinaryHeap<std::cmp::Reverse<(u64, usize, usize)>> =
        std::collections::BinaryHeap::new();
    let mut free_workers: Vec<usize> = (0..cap.min(n)).rev().collect();
    let mut runs = Vec::with_capacity(n);
    let mut write_order = Vec::new();
    let mut now = 0u64;
    let mut done = 0usize;

    while done < n {
        while !free_workers.is_empty() && !ready.is_empty() {
            let std::cmp::Reverse(v) = ready.pop().unwrap();
            let worker = free_workers.pop().unwrap();
            let dur = if weighted {
                graph.node(v).weight.max(1)
            } else {
                1
            };
            active.push(std::cmp::Reverse((now + dur, v, worker)));
        }
        let Some(std::cmp::Reverse((end, v, worker))) = active.pop() else {
            return Err(Error::DeadlockDetected {
                remaining: n - done,
            });
        };
        let dur = if weighted {
            graph.node(v).weight.max(1)
        } else {
            1
        };
        runs.push(NodeRun {
            node: v,
            start: end - dur,
            end,
            worker,
        });
        if let Some(b) = graph.node(v).writes {
            write_order.push((b, v));
        }
        now = end;
        done += 1;
        free_workers.push(worker);
        for &s in graph.successors(v) {
            indeg[s] -= 1;
            if indeg[s] == 0 {
                ready.push(std::cmp::Reverse(s));
            }
        }
    }
    let makespan = runs.iter().map(|r| r.end).max().unwrap_or(0);
    Ok(RunReport {
        runs,
        makespan,
        write_order,
    })
}

/// Every edge must separate its endpoints in time: the writer (or earlier
/// reader) finishes before the dependent starts.
pub fn verify_happens_before(graph: &TaskGraph, report: &RunReport) -> bool {
    let mut end = vec![0u64; graph.len()];
    let mut start = vec![0u64; graph.len()];
    for r in &report.runs {
        end[r.node] = r.end;
        start[r.node] = r.start;
    }
    graph.edges().iter().all(|&(u, v)| end[u] <= start[v])
}

// ---------------------------------------------------------------------------
// factorization graph builder
// ---------------------------------------------------------------------------

/// Operation-level dependency graph of a multi-stage factorization.
///
/// Lanes model the three-pipeline assignment: the column's own diagonal work
/// and its later-neighbor ops in lane 1, the earlier-neighbor ops in lane 2,
/// the fill product in lane 3. Lanes are advisory; the simulator schedules
/// by readiness only.
pub fn build_task_graph(nblocks: usize, mode: crate::stagefactor::FactorMode) -> TaskGraph {
    build_task_graph_impl(nblocks, mode, false)
}

/// Same graph with the forward-substitution steps of a solve appended per
/// level, gated on that level's factor blocks: the interlaced pipeline.
pub fn build_task_graph_with_forward_solve(
    nblocks: usize,
    mode: crate::stagefactor::FactorMode,
) -> TaskGraph {
    build_task_graph_impl(nblocks, mode, true)
}

fn build_task_graph_impl(
    nblocks: usize,
    mode: crate::stagefactor::FactorMode,
    with_solve: bool,
) -> TaskGraph {
    use crate::matrix::{columns_at_level, level_count, stride_of_level};
    use crate::stagefactor::{FactorMode, LeveledLayout};

    let lay = LeveledLayout::new(nblocks);
    let y_base = lay.total_blocks(); // solve segments live after the factor blocks
    let mut g = GraphBuilder::new();
    for level in 1..=level_count(nblocks) {
        let s = stride_of_level(level);
        for i in columns_at_level(nblocks, s) {
            let di = lay.d_index(i);
            let node = |kind, lane, weight, writes, reads: Vec<usize>, accumulates| TaskNode {
                kind,
                level,
                column: i,
                lane,
                weight,
                writes,
                reads,
                accumulates,
            };
            match mode {
                FactorMode::Deferred => {
                    if s > 1 && i <= nblocks.saturating_sub(s / 2) {
                        let src = lay.e_index(level - 1, 2 * i / s);
                        g.push(node(OpKind::Syrk, 1, 3, Some(di), vec![src, di], false));
                    }
                    g.push(node(OpKind::Potrf, 1, 1, Some(di), vec![di], false));
                    if s > 1 && i + s <= nblocks.saturating_sub(s / 2) {
                        let src = lay.e_index(level - 1, 2 * i / s + 2);
                        let tgt = lay.d_index(i + s);
                        g.push(node(OpKind::Syrk, 2, 3, Some(tgt), vec![src, tgt], false));
                    }
                    if i + s <= nblocks {
                        let ei = lay.e_index(level, i / s);
                        g.push(node(OpKind::Trsm, 1, 3, Some(ei), vec![di, ei], false));
                        let tgt = lay.d_index(i + s);
                        g.push(node(OpKind::Syrk, 1, 3, Some(tgt), vec![ei, tgt], false));
                    }
                    if i > s {
                        let ei = lay.e_index(level, i / s - 1);
                        g.push(node(OpKind::Trsm, 2, 3, Some(ei), vec![di, ei], false));
                    }
                }
                FactorMode::RightLookingAtomic => {
                    g.push(node(OpKind::Potrf, 1, 1, Some(di), vec![di], false));
                    if i > s {
                        let ei = lay.e_index(level, i / s - 1);
                        g.push(node(OpKind::Trsm, 2, 3, Some(ei), vec![di, ei], false));
                        let tgt = lay.d_index(i - s);
                        g.push(node(OpKind::Syrk, 2, 3, Some(tgt), vec![ei], true));
                    }
                    if i + s <= nblocks {
                        let ei = lay.e_index(level, i / s);
                        g.push(node(OpKind::Trsm, 1, 3, Some(ei), vec![di, ei], false));
                        let tgt = lay.d_index(i + s);
                        g.push(node(OpKind::Syrk, 1, 3, Some(tgt), vec![ei], true));
                    }
                }
            }
            if i > s && i + s <= nblocks {
                let fill = lay.e_index(level + 1, (i - s) / (2 * s));
                let right = lay.e_index(level, i / s);
                let left = lay.e_index(level, i / s - 1);
                g.push(TaskNode {
                    kind: OpKind::Gemm,
                    level,
                    column: i,
                    lane: 3,
                    weight: 6,
                    writes: Some(fill),
                    reads: vec![right, left],
                    accumulates: false,
                });
            }
        }
        if with_solve {
            for i in columns_at_level(nblocks, s) {
                let yi = y_base + (i - 1);
                let solve = |weight, writes, reads: Vec<usize>, accumulates| TaskNode {
                    kind: OpKind::SolveStep,
                    level,
                    column: i,
                    lane: 3,
                    weight,
                    writes: Some(writes),
                    reads,
                    accumulates,
                };
                g.push(solve(3, yi, vec![lay.d_index(i), yi], false));
                if i + s <= nblocks {
                    let tgt = y_base + (i + s - 1);
                    g.push(solve(6, tgt, vec![lay.e_index(level, i / s), yi], true));
                }
                if i > s {
                    let tgt = y_base + (i - s - 1);
                    g.push(solve(6, tgt, vec![lay.e_index(level, i / s - 1), yi], true));
                }
            }
        }
    }
    g.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_graph(k: usize) -> TaskGraph {
        let nodes = (0..k)
            .map(|i| TaskNode {
                kind: OpKind::Potrf,
                level: 1,
                column: i + 1,
                lane: 1,
                weight: 1,
                writes: Some(i),
                reads: if i == 0 { vec![] } else { vec![i - 1] },
                accumulates: false,
            })
            .collect();
        let edges = (1..k).map(|i| (i - 1, i)).collect();
        TaskGraph::new(nodes, edges)
    }

    #[test]
    fn chain_serializes_regardless_of_workers() {
        let g = chain_graph(6);
        let report = execute(&g, Some(4), false).unwrap();
        assert_eq!(report.makespan, 6);
        assert!(verify_happens_before(&g, &report));
    }

    #[test]
    fn unbounded_makespan_is_critical_path() {
        let g = chain_graph(5);
        assert_eq!(g.critical_path_len(), 5);
        let report = execute(&g, None, false).unwrap();
        assert_eq!(report.makespan as usize, g.critical_path_len());
    }

    #[test]
    fn deadlock_is_reported() {
        let nodes = vec![
            TaskNode {
                kind: OpKind::Syrk,
                level: 1,
                column: 1,
                lane: 1,
                weight: 1,
                writes: None,
                reads: vec![],
                accumulates: false,
            };
            2
        ];
        // a 2-cycle can never become ready
        let g = TaskGraph::new(nodes, vec![(0, 1), (1, 0)]);
        assert!(matches!(
            execute(&g, Some(1), false),
            Err(Error::DeadlockDetected { remaining: 2 })
        ));
        assert!(g.topo_order().is_err());
    }

    #[test]
    fn run_level_covers_all_tasks() {
        let hits: Vec<AtomicU64> = (0..100).map(|_| AtomicU64::new(0)).collect();
        run_level(4, 100, |t| {
            hits[t].fetch_add(1, Ordering::Relaxed);
        });
        assert!(hits.iter().all(|h| h.load(Ordering::Relaxed) == 1));
    }

    #[test]
    fn shared_blocks_accumulate() {
        let mut blocks = vec![DenseBlock::<f64>::identity(2), DenseBlock::identity(2)];
        let shared = SharedBlocks::new(&mut blocks);
        let delta = DenseBlock::<f64>::identity(2);
        shared.begin_level();
        run_level(2, 2, |t| {
            shared.accumulate_sub(0, &delta, t);
        });
        drop(shared);
        assert_eq!(blocks[0].at(0, 0), -1.0);
        assert_eq!(blocks[1].at(0, 0), 1.0);
    }

    #[test]
    #[cfg(debug_assertions)]
    #[should_panic(expected = "write-ownership violation")]
    fn tracker_catches_double_writer() {
        let mut blocks = vec![DenseBlock::<f64>::identity(2)];
        let shared = SharedBlocks::new(&mut blocks);
        shared.begin_level();
        unsafe {
            let _ = shared.get_mut(0, 0);
            let _ = shared.get_mut(0, 1); // second task, same block, same level
        }
    }

    #[test]
    fn conflict_analysis() {
        let records = vec![
            WriteRecord {
                block: 0,
                level: 1,
                task: 0,
                accumulate: false,
            },
            WriteRecord {
                block: 0,
                level: 1,
                task: 0,
                accumulate: false,
            },
            WriteRecord {
                block: 1,
                level: 1,
                task: 0,
                accumulate: true,
            },
            WriteRecord {
                block: 1,
                level: 1,
                task: 1,
                accumulate: true,
            },
        ];
        assert_eq!(exclusive_write_conflicts(&records), 0);
        assert_eq!(max_accumulate_contention(&records), 2);
    }
}
