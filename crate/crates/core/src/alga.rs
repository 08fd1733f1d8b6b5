//! Adaptive long-range encoding.
//!
//! Connected ROI pairs bias a random walk by their Pearson correlation
//! (the adaptive factors `F`). The walk operator is `R = (F ⊙ A) D⁻¹` with
//! `D` the degree matrix of `A`, and node `i`'s embedding collects the
//! return weights `[I, R, R², …, R^{K-1}]_ii`.
//!
//! The plain Markov-chain pieces (`transition_matrix`, `state_evolution`,
//! `mc_return_estimate`) are kept alongside as references for the biased
//! kernel: with `F ≡ 1` the kernel reduces to the transition matrix.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{degrees, pearson_matrix, BrainGraph, TimeSeriesTable};
use crate::matrix::Matrix;

/// Hop count used when none is configured.
pub const DEFAULT_HOPS: usize = 16;

#[derive(Clone, Debug, PartialEq)]
pub struct AdaptiveFactors {
    pub f: Matrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RwKernel {
    pub r: Matrix,
    pub source_degree: Vec<f64>,
}

/// Per-node return profile, `N × K`.
#[derive(Clone, Debug, PartialEq)]
pub struct LongRangeEmbedding {
    pub e: Matrix,
}

impl LongRangeEmbedding {
    pub fn hops(&self) -> usize {
        self.e.cols()
    }
}

/// Column-stochastic walk matrix, `p[i][j] = a[i][j] / deg(j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix {
    pub p: Matrix,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelOptions {
    /// Rescale every non-empty column of `F ⊙ A` to sum to one instead of
    /// dividing by the degree of `A`.
    #[serde(default)]
    pub renormalize: bool,
}

fn check_square(op: &'static str, m: &Matrix, n: usize) -> Result<()> {
    if m.shape() != (n, n) {
        return Err(Error::shape(op, format!("expected {n}x{n}, got {:?}", m.shape())));
    }
    Ok(())
}

/// Pearson correlation on edges of `a`, one on the diagonal, zero elsewhere.
pub fn adaptive_factors(ts: &TimeSeriesTable, a: &Matrix) -> Result<AdaptiveFactors> {
    check_square("adaptive_factors", a, ts.num_rois())?;
    let corr = pearson_matrix(ts)?;
    mask_factors(&corr, a)
}

/// Same as [`adaptive_factors`], reusing the graph's correlation features.
pub fn adaptive_factors_from_graph(g: &BrainGraph) -> Result<AdaptiveFactors> {
    mask_factors(&g.x, &g.a)
}

fn mask_factors(corr: &Matrix, a: &Matrix) -> Result<AdaptiveFactors> {
    let n = corr.rows();
    check_square("adaptive_factors", corr, n)?;
    check_square("adaptive_factors", a, n)?;
    let f = Matrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0
        } else if a.get(i, j) != 0.0 {
            corr.get(i, j)
        } else {
            0.0
        }
    });
    Ok(AdaptiveFactors { f })
}

/// `R = (F ⊙ A) D⁻¹`. Isolated nodes keep an all-zero column.
pub fn rw_kernel(f: &AdaptiveFactors, a: &Matrix) -> Result<RwKernel> {
    rw_kernel_with(f, a, KernelOptions::default())
}

pub fn rw_kernel_with(f: &AdaptiveFactors, a: &Matrix, opts: KernelOptions) -> Result<RwKernel> {
    let n = a.rows();
    check_square("rw_kernel", a, n)?;
    check_square("rw_kernel", &f.f, n)?;
    let weighted = f.f.hadamard(a)?;
    let deg = degrees(a);
    let scale: Vec<f64> = if opts.renormalize {
        (0..n)
            .map(|j| {
                let s: f64 = weighted.col(j).iter().sum();
                if s != 0.0 {
                    1.0 / s
                } else {
                    1.0
                }
            })
            .collect()
    } else {
        deg.iter().map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 }).collect()
    };
    let r = Matrix::from_fn(n, n, |i, j| weighted.get(i, j) * scale[j]);
    Ok(RwKernel { r, source_degree: deg })
}

/// Diagonals of `R⁰ … R^{k-1}` by repeated multiplication with a running power.
pub fn long_range_embedding(kernel: &RwKernel, k: usize) -> Result<LongRangeEmbedding> {
    if k < 1 {
        return Err(Error::invalid("long-range embedding needs at least one hop"));
    }
    let r = &kernel.r;
    let n = r.rows();
    let mut e = Matrix::zeros(n, k);
    for i in 0..n {
        e.set(i, 0, 1.0);
    }
    if k > 1 {
        let mut power = r.clone();
        for s in 1..k {
            for i in 0..n {
                e.set(i, s, power.get(i, i));
            }
            if s + 1 < k {
                power = power.matmul(r)?;
            }
        }
    }
    e.ensure_finite("long_range_embedding")?;
    Ok(LongRangeEmbedding { e })
}

/// Adaptive factors, kernel and embedding for one graph.
pub fn encode_graph(g: &BrainGraph, k: usize, opts: KernelOptions) -> Result<LongRangeEmbedding> {
    let f = adaptive_factors_from_graph(g)?;
    let kernel = rw_kernel_with(&f, &g.a, opts)?;
    long_range_embedding(&kernel, k)
}

pub fn transition_matrix(a: &Matrix) -> Result<TransitionMatrix> {
    let n = a.rows();
    check_square("transition_matrix", a, n)?;
    let deg = degrees(a);
    let p = Matrix::from_fn(n, n, |i, j| if deg[j] > 0.0 { a.get(i, j) / deg[j] } else { 0.0 });
    Ok(TransitionMatrix { p })
}

/// State after `k` hops, `T(k+1)_i = Σ_j p_ij T(k)_j`.
pub fn state_evolution(t0: &[f64], p: &TransitionMatrix, k: usize) -> Result<Vec<f64>> {
    let n = p.p.rows();
    if t0.len() != n {
        return Err(Error::shape(
            "state_evolution",
            format!("state of length {} for {n} nodes", t0.len()),
        ));
    }
    let total: f64 = t0.iter().sum();
    if (total - 1.0).abs() > 1e-12 || t0.iter().any(|&v| v < 0.0 || !v.is_finite()) {
        return Err(Error::invalid(format!(
            "initial state must be a probability vector (sum {total})"
        )));
    }
    let mut state = t0.to_vec();
    let mut next = vec![0.0; n];
    for _ in 0..k {
        for (i, slot) in next.iter_mut().enumerate() {
            *slot = p.p.row(i).iter().zip(&state).map(|(pij, tj)| pij * tj).sum();
        }
        std::mem::swap(&mut state, &mut next);
    }
    Ok(state)
}

/// Monte-Carlo estimate of the `k`-step return probability of every node under
/// uniform next-hop sampling.
pub fn mc_return_estimate(a: &Matrix, k: usize, n_walks: usize, seed: u64) -> Result<Vec<f64>> {
    let n = a.rows();
    check_square("mc_return_estimate", a, n)?;
    if n_walks == 0 {
        return Err(Error::invalid("mc_return_estimate needs at least one walk"));
    }
    let neighbors: Vec<Vec<usize>> = (0..n)
        .map(|i| (0..n).filter(|&j| a.get(i, j) != 0.0).collect())
        .collect();
    if let Some(i) = neighbors.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("node {i} is isolated")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let estimates = (0..n)
        .map(|start| {
            let mut returns = 0usize;
            for _ in 0..n_walks {
                let mut at = start;
                for _ in 0..k {
                    let nb = &neighbors[at];
                    at = nb[rng.random_range(0..nb.len())];
                }
                if at == start {
                    returns += 1;
                }
            }
            returns as f64 / n_walks as f64
        })
        .collect();
    Ok(estimates)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> Matrix {
        Matrix::from_rows(&[[0.0, 1.0, 0.0], [1.0, 0.0, 1.0], [0.0, 1.0, 0.0]]).unwrap()
    }

    fn ones_factors(n: usize) -> AdaptiveFactors {
        AdaptiveFactors {
            f: Matrix::filled(n, n, 1.0),
        }
    }

    #[test]
    fn factors_follow_connectivity() {
        let cols: [[f64; 3]; 3] = [[1.0, 2.0, 3.0], [2.0, 4.0, 6.0], [3.0, 1.0, 2.0]];
        let ts = TimeSeriesTable::new("s", Matrix::from_fn(3, 3, |r, c| cols[c][r])).unwrap();
        let a = Matrix::from_rows(&[[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        let f = adaptive_factors(&ts, &a).unwrap();
        assert_eq!(f.f.diagonal(), vec![1.0; 3]);
        assert!((f.f.get(0, 1) - 1.0).abs() < 1e-15);
        assert_eq!(f.f.get(0, 2), 0.0);
        assert_eq!(f.f.get(2, 1), 0.0);
        assert!(adaptive_factors(&ts, &Matrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn kernel_two_nodes_half_weight() {
        let a = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let f = AdaptiveFactors {
            f: Matrix::from_rows(&[[1.0, 0.5], [0.5, 1.0]]).unwrap(),
        };
        let k = rw_kernel(&f, &a).unwrap();
        assert_eq!(k.r, Matrix::from_rows(&[[0.0, 0.5], [0.5, 0.0]]).unwrap());
        let e = long_range_embedding(&k, 3).unwrap();
        for i in 0..2 {
            assert_eq!(e.e.row(i), &[1.0, 0.0, 0.25]);
        }
    }

    #[test]
    fn kernel_with_unit_factors_is_column_stochastic() {
        let k = rw_kernel(&ones_factors(3), &path3()).unwrap();
        for j in 0..3 {
            assert!((k.r.col(j).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
        assert_eq!(k.source_degree, vec![1.0, 2.0, 1.0]);
    }

    #[test]
    fn isolated_column_is_zero() {
        let a = Matrix::from_rows(&[[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]]).unwrap();
        let k = rw_kernel(&ones_factors(3), &a).unwrap();
        assert_eq!(k.r.col(2), vec![0.0; 3]);
        assert!(k.r.is_finite());
    }

    #[test]
    fn renormalized_kernel_is_stochastic_for_general_factors() {
        let f = AdaptiveFactors {
            f: Matrix::from_rows(&[[1.0, 0.4, 0.0], [0.4, 1.0, 0.8], [0.0, 0.8, 1.0]]).unwrap(),
        };
        let plain = rw_kernel(&f, &path3()).unwrap();
        assert!((plain.r.col(1).iter().sum::<f64>() - 0.6).abs() < 1e-15);
        let k = rw_kernel_with(&f, &path3(), KernelOptions { renormalize: true }).unwrap();
        for j in 0..3 {
            assert!((k.r.col(j).iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_hop_embedding_is_ones() {
        let k = rw_kernel(&ones_factors(3), &path3()).unwrap();
        let e = long_range_embedding(&k, 1).unwrap();
        assert_eq!(e.e, Matrix::filled(3, 1, 1.0));
        assert!(long_range_embedding(&k, 0).is_err());
        let e = long_range_embedding(&k, 4).unwrap();
        assert_eq!(e.e.col(1), vec![0.0; 3]);
    }

    #[test]
    fn transition_examples() {
        let k3 = Matrix::from_fn(3, 3, |i, j| if i == j { 0.0 } else { 1.0 });
        let p = transition_matrix(&k3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_eq!(p.p.get(i, j), if i == j { 0.0 } else { 0.5 });
            }
        }
        // star: center 0 with leaves 1..=3
        let star = Matrix::from_fn(4, 4, |i, j| if (i == 0) != (j == 0) { 1.0 } else { 0.0 });
        let p = transition_matrix(&star).unwrap();
        for leaf in 1..4 {
            assert_eq!(p.p.get(0, leaf), 1.0);
            assert!((p.p.get(leaf, 0) - 1.0 / 3.0).abs() < 1e-15);
        }
        for j in 0..4 {
            assert!((p.p.col(j).iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn two_cycle_evolution() {
        let a = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        let p = transition_matrix(&a).unwrap();
        assert_eq!(state_evolution(&[1.0, 0.0], &p, 0).unwrap(), vec![1.0, 0.0]);
        assert_eq!(state_evolution(&[1.0, 0.0], &p, 1).unwrap(), vec![0.0, 1.0]);
        assert_eq!(state_evolution(&[1.0, 0.0], &p, 2).unwrap(), vec![1.0, 0.0]);
        assert!(state_evolution(&[0.7, 0.7], &p, 1).is_err());
        assert!(state_evolution(&[1.0], &p, 1).is_err());
    }

    #[test]
    fn two_cycle_monte_carlo() {
        let a = Matrix::from_rows(&[[0.0, 1.0], [1.0, 0.0]]).unwrap();
        assert_eq!(mc_return_estimate(&a, 1, 1000, 1).unwrap(), vec![0.0, 0.0]);
        assert_eq!(mc_return_estimate(&a, 2, 1000, 1).unwrap(), vec![1.0, 1.0]);
        assert!(mc_return_estimate(&path3(), 2, 0, 1).is_err());
        let isolated = Matrix::zeros(2, 2);
        assert!(mc_return_estimate(&isolated, 2, 10, 1).is_err());
    }

    #[test]
    fn monte_carlo_is_seeded() {
        let a = Matrix::from_fn(5, 5, |i, j| if i != j { 1.0 } else { 0.0 });
        assert_eq!(
            mc_return_estimate(&a, 3, 500, 9).unwrap(),
            mc_return_estimate(&a, 3, 500, 9).unwrap()
        );
    }
}
