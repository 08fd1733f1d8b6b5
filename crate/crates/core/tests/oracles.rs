use alter_core::alga::{self, AdaptiveFactors, KernelOptions, RwKernel};
use alter_core::graph::{build_graph, TimeSeriesTable};
use alter_core::Matrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type M = Vec<Vec<f64>>;

fn naive_mul(a: &M, b: &M) -> M {
    let n = a.len();
    let mut out = vec![vec![0.0; b[0].len()]; n];
    for i in 0..n {
        for k in 0..b.len() {
            for j in 0..b[0].len() {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

/// `m^s` from scratch by repeated squaring.
fn dense_power(m: &M, mut s: usize) -> M {
    let n = m.len();
    let mut result: M = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect();
    let mut base = m.clone();
    while s > 0 {
        if s & 1 == 1 {
            result = naive_mul(&result, &base);
        }
        base = naive_mul(&base, &base);
        s >>= 1;
    }
    result
}

fn to_m(m: &Matrix) -> M {
    (0..m.rows()).map(|r| m.row(r).to_vec()).collect()
}

fn random_series(rng: &mut ChaCha8Rng, t: usize, n: usize) -> TimeSeriesTable {
    // a shared component makes the graphs dense enough to have walks
    let shared: Vec<f64> = (0..t).map(|_| rng.random_range(-1.0..1.0)).collect();
    let mix: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.5)).collect();
    let values = Matrix::from_fn(t, n, |r, c| mix[c] * shared[r] + rng.random_range(-1.0..1.0));
    TimeSeriesTable::new("s", values).unwrap()
}

/// Kernel written directly from the graph: F is the correlation on edges,
/// columns divided by the unweighted degree of the source node.
fn oracle_kernel(x: &M, a: &M) -> M {
    let n = a.len();
    let deg: Vec<f64> = (0..n).map(|j| (0..n).map(|i| a[i][j]).sum()).collect();
    (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    if a[i][j] != 0.0 && deg[j] > 0.0 {
                        x[i][j] / deg[j]
                    } else {
                        0.0
                    }
                })
                .collect()
        })
        .collect()
}

#[test]
fn embedding_matches_dense_power_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut checked = 0;
    for _ in 0..100 {
        let n = rng.random_range(2..=32);
        let k = rng.random_range(1..=16);
        let ts = random_series(&mut rng, 60, n);
        let g = build_graph(&ts, 0.3).unwrap();
        let e = alga::encode_graph(&g, k, KernelOptions::default()).unwrap().e;
        let r = oracle_kernel(&to_m(&g.x), &to_m(&g.a));
        for s in 0..k {
            let p = dense_power(&r, s);
            for i in 0..n {
                let diff = (e.get(i, s) - p[i][i]).abs();
                assert!(diff <= 1e-10, "n={n} k={k} s={s} i={i}: diff {diff}");
            }
        }
        checked += 1;
    }
    assert_eq!(checked, 100);
}

fn connected_graph(rng: &mut ChaCha8Rng, n: usize) -> Matrix {
    let mut a = Matrix::zeros(n, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    for w in 1..n {
        let u = order[rng.random_range(0..w)];
        let v = order[w];
        a.set(u, v, 1.0);
        a.set(v, u, 1.0);
    }
    for _ in 0..n {
        let (u, v) = (rng.random_range(0..n), rng.random_range(0..n));
        if u != v {
            a.set(u, v, 1.0);
            a.set(v, u, 1.0);
        }
    }
    a
}

#[test]
fn unit_factors_give_column_stochastic_kernel_and_conserved_mass() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..50 {
        let n = rng.random_range(2..=24);
        let a = connected_graph(&mut rng, n);
        let ones = AdaptiveFactors {
            f: Matrix::filled(n, n, 1.0),
        };
        let RwKernel { r, .. } = alga::rw_kernel(&ones, &a).unwrap();
        for j in 0..n {
            let s: f64 = r.col(j).iter().sum();
            assert!((s - 1.0).abs() <= 1e-12, "column {j} sums to {s}");
        }
        let p = alga::transition_matrix(&a).unwrap();
        assert!(p.p.max_abs_diff(&r) == 0.0);
        let mut t0 = vec![0.0; n];
        t0[rng.random_range(0..n)] = 1.0;
        for k in [0, 1, 2, 7, 33, 100] {
            let t = alga::state_evolution(&t0, &p, k).unwrap();
            let total: f64 = t.iter().sum();
            assert!((total - 1.0).abs() <= 1e-12, "k={k}: mass {total}");
            assert!(t.iter().all(|&v| v >= 0.0));
        }
    }
}

#[test]
fn state_evolution_matches_matrix_power() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let a = connected_graph(&mut rng, 9);
    let p = alga::transition_matrix(&a).unwrap();
    let t0: Vec<f64> = {
        let raw: Vec<f64> = (0..9).map(|_| rng.random_range(0.0..1.0)).collect();
        let s: f64 = raw.iter().sum();
        raw.iter().map(|v| v / s).collect()
    };
    let pk = dense_power(&to_m(&p.p), 6);
    let want: Vec<f64> = (0..9).map(|i| (0..9).map(|j| pk[i][j] * t0[j]).sum()).collect();
    let got = alga::state_evolution(&t0, &p, 6).unwrap();
    for (g, w) in got.iter().zip(&want) {
        assert!((g - w).abs() < 1e-14);
    }
}

#[test]
fn monte_carlo_returns_match_fourth_power_diagonal() {
    let a = Matrix::from_rows(&[
        [0., 1., 1., 0., 0., 0., 0., 1.],
        [1., 0., 1., 0., 0., 0., 0., 0.],
        [1., 1., 0., 1., 0., 0., 0., 0.],
        [0., 0., 1., 0., 1., 1., 0., 0.],
        [0., 0., 0., 1., 0., 1., 0., 0.],
        [0., 0., 0., 1., 1., 0., 1., 0.],
        [0., 0., 0., 0., 0., 1., 0., 1.],
        [1., 0., 0., 0., 0., 0., 1., 0.],
    ])
    .unwrap();
    let p = alga::transition_matrix(&a).unwrap();
    let p4 = dense_power(&to_m(&p.p), 4);
    let est = alga::mc_return_estimate(&a, 4, 100_000, 3).unwrap();
    for i in 0..8 {
        assert!(
            (est[i] - p4[i][i]).abs() <= 0.01,
            "node {i}: {} vs {}",
            est[i],
            p4[i][i]
        );
    }
}

#[test]
fn embedding_is_permutation_equivariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for _ in 0..50 {
        let n = rng.random_range(3..=20);
        let ts = random_series(&mut rng, 50, n);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        for renormalize in [false, true] {
            let opts = KernelOptions { renormalize };
            let e = alga::encode_graph(&build_graph(&ts, 0.3).unwrap(), 8, opts).unwrap().e;
            let permuted = ts.permute_rois(&perm).unwrap();
            let ep = alga::encode_graph(&build_graph(&permuted, 0.3).unwrap(), 8, opts)
                .unwrap()
                .e;
            let diff = ep.max_abs_diff(&e.permute_rows(&perm).unwrap());
            assert!(diff <= 1e-12, "diff {diff}");
        }
    }
}
