//! Operation-level scheduling properties of the generated task graphs.

use blocktri::schedule::{
    build_task_graph, build_task_graph_with_forward_solve, execute, verify_happens_before, OpKind,
};
use blocktri::stagefactor::FactorMode;

#[test]
fn single_block_graph_is_one_potrf() {
    let g = build_task_graph(1, FactorMode::Deferred);
    assert_eq!(g.len(), 1);
    assert_eq!(g.node(0).kind, OpKind::Potrf);
    assert!(g.edges().is_empty());
}

#[test]
fn atomic_chains_are_three_deep() {
    for nb in [2usize, 4, 8, 20] {
        let g = build_task_graph(nb, FactorMode::RightLookingAtomic);
        let mut max_chain = 0;
        for node in g.nodes() {
            max_chain = max_chain.max(g.column_chain_len(node.level, node.column));
        }
        assert!(max_chain <= 3, "N={nb}: {max_chain}");
        if nb >= 3 {
            assert_eq!(max_chain, 3, "N={nb}");
        }
    }
}

#[test]
fn deferred_chains_are_four_deep() {
    for nb in [4usize, 8, 20] {
        let g = build_task_graph(nb, FactorMode::Deferred);
        let mut max_chain = 0;
        for node in g.nodes() {
            max_chain = max_chain.max(g.column_chain_len(node.level, node.column));
        }
        assert_eq!(max_chain, 4, "N={nb}");
    }
}

#[test]
fn lanes_reproduce_the_stream_pattern() {
    // two trsm lanes feed the gemm lane
    let g = build_task_graph(20, FactorMode::RightLookingAtomic);
    let mut gemms = 0;
    for (id, node) in g.nodes().iter().enumerate() {
        if node.kind != OpKind::Gemm {
            continue;
        }
        gemms += 1;
        assert_eq!(node.lane, 3);
        let mut trsm_lanes: Vec<u8> = g
            .predecessors(id)
            .iter()
            .filter(|&&p| g.node(p).kind == OpKind::Trsm && g.node(p).column == node.column)
            .map(|&p| g.node(p).lane)
            .collect();
        trsm_lanes.sort_unstable();
        assert_eq!(trsm_lanes, vec![1, 2], "gemm of column {}", node.column);
    }
    assert!(gemms > 0);
}

#[test]
fn level_one_factorizations_overlap() {
    // the four level-1 columns of N=8 are independent: with enough workers
    // all their potrf nodes start together
    let g = build_task_graph(8, FactorMode::RightLookingAtomic);
    let report = execute(&g, Some(8), false).unwrap();
    let starts: Vec<u64> = (0..g.len())
        .filter(|&i| g.node(i).kind == OpKind::Potrf && g.node(i).level == 1)
        .map(|i| report.run_of(i).start)
        .collect();
    assert_eq!(starts.len(), 4);
    assert!(starts.iter().all(|&s| s == 0));
}

#[test]
fn unbounded_unit_makespan_is_critical_path() {
    for mode in [FactorMode::Deferred, FactorMode::RightLookingAtomic] {
        for nb in [2usize, 5, 8, 16, 20, 33] {
            let g = build_task_graph(nb, mode);
            let report = execute(&g, None, false).unwrap();
            assert_eq!(report.makespan as usize, g.critical_path_len(), "N={nb}");
            assert!(verify_happens_before(&g, &report));
        }
    }
}

#[test]
fn atomic_makespan_never_exceeds_deferred() {
    for nb in [2usize, 4, 7, 8, 16, 20, 33, 64] {
        let d = execute(&build_task_graph(nb, FactorMode::Deferred), None, false).unwrap();
        let a = execute(
            &build_task_graph(nb, FactorMode::RightLookingAtomic),
            None,
            false,
        )
        .unwrap();
        assert!(a.makespan <= d.makespan, "N={nb}");
    }
}

#[test]
fn repeated_runs_agree_on_the_write_order() {
    let g = build_task_graph(16, FactorMode::Deferred);
    let a = execute(&g, Some(4), false).unwrap();
    let b = execute(&g, Some(4), false).unwrap();
    assert_eq!(a.write_order, b.write_order);
}

#[test]
fn interlaced_solve_overlaps_factorization() {
    let g = build_task_graph_with_forward_solve(20, FactorMode::RightLookingAtomic);
    let report = execute(&g, None, true).unwrap();
    assert!(verify_happens_before(&g, &report));
    let last_factor_end = (0..g.len())
        .filter(|&i| g.node(i).kind != OpKind::SolveStep)
        .map(|i| report.run_of(i).end)
        .max()
        .unwrap();
    let first_solve_start = (0..g.len())
        .filter(|&i| g.node(i).kind == OpKind::SolveStep)
        .map(|i| report.run_of(i).start)
        .min()
        .unwrap();
    assert!(
        first_solve_start < last_factor_end,
        "forward substitution should start while the factorization is still running"
    );
}

#[test]
fn report_csv_schema() {
    let g = build_task_graph(4, FactorMode::Deferred);
    let report = execute(&g, Some(2), false).unwrap();
    let csv = report.to_csv(&g);
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("node,kind,level,column,lane,start,end"));
    assert_eq!(csv.lines().count(), g.len() + 1);
}
