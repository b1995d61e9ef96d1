//! Property tests of the kernel layer and the data model.

use blocktri::block::DenseBlock;
use blocktri::kernels::{matmul, matmul_nt, potrf, syrk_down, trsm_right};
use blocktri::matrix::multi_stage_permutation;
use blocktri::meter::{fold_waves, FlopMeter, Workers};
use blocktri::probgen::{generate_spd, SplitMix64};
use proptest::prelude::*;

/// Random SPD block: A A^T + (n+1) I with entries in [-1, 1).
fn random_spd(n: usize, seed: u64) -> DenseBlock<f64> {
    let mut rng = SplitMix64::new(seed);
    let mut a = DenseBlock::<f64>::zeros(n, n);
    for r in 0..n {
        for c in 0..n {
            a.set(r, c, rng.next_symmetric());
        }
    }
    let mut d = matmul_nt(&a, &a);
    for i in 0..n {
        let v = d.at(i, i) + (n + 1) as f64;
        d.set(i, i, v);
    }
    d
}

proptest! {
    #[test]
    fn potrf_roundtrip(n in 1usize..=16, seed in 0u64..1_000_000) {
        let d = random_spd(n, seed);
        let meter = FlopMeter::new();
        let l = potrf(&d, &meter).unwrap();
        prop_assert!(l.is_lower_triangular());
        let back = matmul_nt(&l, &l);
        let err = back.diff_frob_sq(&d).sqrt();
        prop_assert!(err <= 50.0 * f64::EPSILON * d.frob_norm(),
            "n={n} err={err:e} bound={:e}", 50.0 * f64::EPSILON * d.frob_norm());
        prop_assert_eq!(meter.thirds(), (n * n * n) as u64);
    }

    #[test]
    fn potrf_roundtrip_f32(n in 1usize..=16, seed in 0u64..100_000) {
        let d64 = random_spd(n, seed);
        let d = DenseBlock::<f32>::from_data(
            n, n, d64.data().iter().map(|&v| v as f32).collect());
        let meter = FlopMeter::new();
        let l = potrf(&d, &meter).unwrap();
        let back = matmul_nt(&l, &l);
        let err = back.diff_frob_sq(&d).sqrt();
        prop_assert!(err as f32 <= 50.0 * f32::EPSILON * d.frob_norm() as f32);
    }

    #[test]
    fn trsm_right_inverse_consistency(m in 1usize..=8, n in 1usize..=8, seed in 0u64..1_000_000) {
        let meter = FlopMeter::new();
        let l = potrf(&random_spd(n, seed), &meter).unwrap();
        let mut rng = SplitMix64::new(seed ^ 0xABCD);
        let mut e = DenseBlock::<f64>::zeros(m, n);
        for v in e.data_mut() {
            *v = rng.next_symmetric();
        }
        let mark = meter.mark();
        let x = trsm_right(&e, &l, &meter).unwrap();
        prop_assert_eq!(meter.delta(mark), 3 * (m * n * n) as u64);
        // x l^T must reproduce e
        let back = matmul(&x, &l.transposed());
        let err = back.diff_frob_sq(&e).sqrt();
        prop_assert!(err <= 50.0 * f64::EPSILON * (1.0 + e.frob_norm()) * (1.0 + l.frob_norm()));
    }

    #[test]
    fn syrk_meter_is_exact(n in 1usize..=10, k in 1usize..=10, seed in 0u64..100_000) {
        let meter = FlopMeter::new();
        let d = random_spd(n, seed);
        let mut rng = SplitMix64::new(seed);
        let mut e = DenseBlock::<f64>::zeros(n, k);
        for v in e.data_mut() {
            *v = rng.next_symmetric();
        }
        let out = syrk_down(&d, &e, false, &meter);
        prop_assert_eq!(meter.thirds(), 3 * (n * n * k) as u64);
        // symmetric as stored
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(out.at(i, j), out.at(j, i));
            }
        }
    }

    #[test]
    fn permutation_is_bijection(n in 1usize..=128) {
        let p = multi_stage_permutation(n);
        let mut seen = vec![false; n];
        for new in 0..n {
            let old = p.old_of(new);
            prop_assert!(!seen[old]);
            seen[old] = true;
            prop_assert_eq!(p.new_of(old), new);
        }
    }

    #[test]
    fn wave_fold_bounds(units in proptest::collection::vec(0u64..1000, 1..40), w in 1u64..=16) {
        let sum: u64 = units.iter().sum();
        let max: u64 = units.iter().copied().max().unwrap();
        let wall = fold_waves(&units, Workers::finite(w));
        prop_assert!(wall <= sum && wall >= max);
        prop_assert_eq!(fold_waves(&units, Workers::finite(1)), sum);
        prop_assert_eq!(fold_waves(&units, Workers::Unbounded), max);
    }

    #[test]
    fn btri_file_roundtrips_bitwise(nb in 1usize..=6, n in 1usize..=4, seed in 0u64..10_000) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.btri");
        let m = generate_spd::<f64>(nb, n, seed);
        blocktri::io::write_btri(&path, &m).unwrap();
        let back = blocktri::io::read_btri::<f64>(&path).unwrap();
        for i in 0..nb {
            prop_assert_eq!(m.diag(i), back.diag(i));
        }
        for i in 0..nb - 1 {
            prop_assert_eq!(m.offdiag(i), back.offdiag(i));
        }
    }
}

#[test]
fn generated_instances_never_fail_the_oracle() {
    // 100 seeds across the shape grid: every instance factors without a
    // pivot failure, through the structured sweep everywhere and through
    // the dense reference on a subsample (it is cubic in N*n)
    for nb in [1usize, 4, 16, 64] {
        for n in [1usize, 4, 16] {
            for seed in 0..100 {
                let m = generate_spd::<f64>(nb, n, seed);
                let meter = FlopMeter::new();
                assert!(
                    blocktri::seqfactor::factor_sequential(&m, &meter).is_ok(),
                    "N={nb} n={n} seed={seed}"
                );
                if seed < 3 || nb * n <= 64 {
                    assert!(
                        blocktri::oracle::dense_oracle_factor(&m).is_ok(),
                        "dense N={nb} n={n} seed={seed}"
                    );
                }
            }
        }
    }
}
