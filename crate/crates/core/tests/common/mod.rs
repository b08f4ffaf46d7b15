//! Random generators and brute-force oracles shared by the integration
//! tests. The oracles follow the index definitions directly and share no
//! code with the library.

#![allow(dead_code)]

use qsp_core::{CubicMatrix, Distribution, StochKind};
use rand::Rng;

pub fn simplex_vec<R: Rng>(rng: &mut R, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / total).collect()
}

pub fn distribution<R: Rng>(rng: &mut R, m: usize) -> Distribution {
    let mut x = simplex_vec(rng, m);
    // absorb the rounding of the division into the largest entry
    let drift = 1.0 - x.iter().sum::<f64>();
    let i = (0..m).max_by(|&a, &b| x[a].total_cmp(&x[b])).unwrap();
    x[i] += drift;
    Distribution::new(x).expect("random point is on the simplex")
}

/// Random matrix with entries in `[0, 1)`, no normalization.
pub fn nonneg<R: Rng>(rng: &mut R, m: usize) -> CubicMatrix {
    CubicMatrix::from_fn(m, |_, _, _| rng.gen::<f64>()).unwrap()
}

pub fn signed<R: Rng>(rng: &mut R, m: usize) -> CubicMatrix {
    CubicMatrix::from_fn(m, |_, _, _| rng.gen_range(-1.0..1.0)).unwrap()
}

/// Random matrix of the given cubic kind.
pub fn stochastic<R: Rng>(rng: &mut R, m: usize, kind: StochKind) -> CubicMatrix {
    let mut data = vec![0.0; m * m * m];
    let idx = |i: usize, j: usize, k: usize| i * m * m + j * m + k;
    match kind {
        StochKind::Three => {
            for i in 0..m {
                for j in 0..m {
                    for (k, x) in simplex_vec(rng, m).into_iter().enumerate() {
                        data[idx(i, j, k)] = x;
                    }
                }
            }
        }
        StochKind::OneTwo => {
            for k in 0..m {
                for (n, x) in simplex_vec(rng, m * m).into_iter().enumerate() {
                    data[idx(n / m, n % m, k)] = x;
                }
            }
        }
        other => panic!("no generator for {other:?}"),
    }
    CubicMatrix::new(m, data).unwrap()
}

/// `c_ijr = Σ_k a_ijk b_kjr`.
pub fn oracle_maksimov0(a: &CubicMatrix, b: &CubicMatrix) -> Vec<f64> {
    let m = a.dim();
    let mut out = vec![0.0; m * m * m];
    for i in 0..m {
        for j in 0..m {
            for r in 0..m {
                let mut acc = 0.0;
                for k in 0..m {
                    acc += a.get(i, j, k) * b.get(k, j, r);
                }
                out[i * m * m + j * m + r] = acc;
            }
        }
    }
    out
}

/// `c_ijr = Σ_{l,n : l = j} Σ_k a_ilk b_knr`, the double sum for the left
/// projection, enumerated over every `(l, n)`.
pub fn oracle_maksimov_a0(a: &CubicMatrix, b: &CubicMatrix) -> Vec<f64> {
    let m = a.dim();
    let mut out = vec![0.0; m * m * m];
    for i in 0..m {
        for j in 0..m {
            for r in 0..m {
                let mut acc = 0.0;
                for l in 0..m {
                    for n in 0..m {
                        if l != j {
                            continue;
                        }
                        for k in 0..m {
                            acc += a.get(i, l, k) * b.get(k, n, r);
                        }
                    }
                }
                out[i * m * m + j * m + r] = acc;
            }
        }
    }
    out
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Column sums of the contraction `Σ_j P_ijk`, checked by hand.
pub fn contraction_left_stochastic(p: &CubicMatrix, tol: f64) -> bool {
    let m = p.dim();
    (0..m).all(|k| {
        let col: f64 = (0..m).map(|i| (0..m).map(|j| p.get(i, j, k)).sum::<f64>()).sum();
        (col - 1.0).abs() <= tol
    }) && p.min_entry() >= 0.0
}
