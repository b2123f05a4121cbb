//! Density matrices of post-selected n-photon states and their trace
//! distances.
//!
//! An n-photon state emitted into polarization `(theta, phi)` decomposes
//! over the two-mode number basis with amplitudes built from binomial
//! square roots of `cos(theta/2)`, `sin(theta/2)` powers. Averaging the
//! projector over a post-selection region with the weight `e^{-I} I^n / n!`
//! gives an `(n+1) x (n+1)` matrix; the azimuthal part integrates
//! analytically and leaves every entry real, so matrices are stored as real
//! symmetric throughout.

use crate::error::{Error, Result};
use crate::source::{self, IntegrandKind, Pole, RegionSpec, SourceConfig};

/// Real symmetric `(n+1) x (n+1)` density matrix of a post-selected
/// n-photon state, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct FockMatrix {
    pub n: usize,
    entries: Vec<f64>,
}

impl FockMatrix {
    pub fn dim(&self) -> usize {
        self.n + 1
    }

    pub fn get(&self, k: usize, kp: usize) -> f64 {
        self.entries[k * self.dim() + kp]
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim()).map(|k| self.get(k, k)).sum()
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> Vec<f64> {
        let mut v = jacobi_eigenvalues(&self.entries, self.dim());
        v.sort_by(f64::total_cmp);
        v
    }

    fn from_entries(n: usize, entries: Vec<f64>) -> Self {
        debug_assert_eq!(entries.len(), (n + 1) * (n + 1));
        Self { n, entries }
    }
}

/// Eigenvalues of a small dense symmetric matrix by cyclic Jacobi
/// rotations, to absolute accuracy around 1e-12. Dimensions here never
/// exceed `n_cut + 1`, so no pivoting sophistication is needed.
fn jacobi_eigenvalues(matrix: &[f64], dim: usize) -> Vec<f64> {
    let mut a = matrix.to_vec();
    let idx = |r: usize, c: usize| r * dim + c;
    for _sweep in 0..100 {
        let mut off = 0.0;
        for r in 0..dim {
            for c in (r + 1)..dim {
                off += a[idx(r, c)].abs();
            }
        }
        if off < 1e-14 {
            break;
        }
        for p in 0..dim {
            for q in (p + 1)..dim {
                let apq = a[idx(p, q)];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let tau = (a[idx(q, q)] - a[idx(p, p)]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                for k in 0..dim {
                    let akp = a[idx(k, p)];
                    let akq = a[idx(k, q)];
                    a[idx(k, p)] = c * akp - s * akq;
                    a[idx(k, q)] = s * akp + c * akq;
                }
                for k in 0..dim {
                    let apk = a[idx(p, k)];
                    let aqk = a[idx(q, k)];
                    a[idx(p, k)] = c * apk - s * aqk;
                    a[idx(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..dim).map(|k| a[idx(k, k)]).collect()
}

/// Density matrix of the n-photon component post-selected into `region`.
pub fn fock_matrix(region: &RegionSpec, n: usize, nu_t: f64, tol: f64) -> Result<FockMatrix> {
    let dim = n + 1;
    let mut raw = vec![0.0; dim * dim];
    for k in 0..dim {
        for kp in k..dim {
            let v = source::region_average(
                region,
                IntegrandKind::FockElement { n, k, kp },
                nu_t,
                tol,
            )?;
            raw[k * dim + kp] = v;
            raw[kp * dim + k] = v;
        }
    }
    let norm: f64 = (0..dim).map(|k| raw[k * dim + k]).sum();
    if !(norm > 1e-300) {
        return Err(Error::DegenerateFock { n, norm });
    }
    for v in &mut raw {
        *v /= norm;
    }
    Ok(FockMatrix::from_entries(n, raw))
}

/// Equal-weight mixture of the two pole matrices of one key setting.
pub fn mixed_basis_matrix(
    region_r: &RegionSpec,
    region_l: &RegionSpec,
    n: usize,
    nu_t: f64,
    tol: f64,
) -> Result<FockMatrix> {
    if region_r.pole != Pole::R || region_l.pole != Pole::L {
        return Err(Error::Domain(
            "mixed_basis_matrix requires the R and L poles of one setting".into(),
        ));
    }
    let a = fock_matrix(region_r, n, nu_t, tol)?;
    let b = fock_matrix(region_l, n, nu_t, tol)?;
    let entries = a
        .entries
        .iter()
        .zip(&b.entries)
        .map(|(x, y)| 0.5 * (x + y))
        .collect();
    Ok(FockMatrix::from_entries(n, entries))
}

/// Trace distance `D(A, B) = (1/2) sum_i |lambda_i(A - B)|`.
pub fn trace_distance(a: &FockMatrix, b: &FockMatrix) -> Result<f64> {
    if a.n != b.n {
        return Err(Error::DimensionMismatch(a.n, b.n));
    }
    let diff: Vec<f64> = a.entries.iter().zip(&b.entries).map(|(x, y)| x - y).collect();
    let eig = jacobi_eigenvalues(&diff, a.dim());
    Ok(0.5 * eig.iter().map(|v| v.abs()).sum::<f64>())
}

/// Pairwise trace distances between the post-selected n-photon states of
/// the different intensity settings, for every photon number the decoy
/// linear programs constrain.
#[derive(Clone, Debug)]
pub struct TdTables {
    pub n_cut: usize,
    /// `key[n - 2][j][k]` for `n = 2..=n_cut` over key settings.
    key: Vec<Vec<Vec<f64>>>,
    /// `test[n - 1][j][k]` for `n = 1..=n_cut` over test settings.
    test: Vec<Vec<Vec<f64>>>,
}

impl TdTables {
    pub fn key(&self, n: usize, j: usize, k: usize) -> f64 {
        self.key[n - 2][j][k]
    }

    pub fn test(&self, n: usize, j: usize, k: usize) -> f64 {
        self.test[n - 1][j][k]
    }
}

/// Build the full trace-distance tables for a source configuration.
///
/// Key-basis states mix both poles of a setting; test-basis states use the
/// H windows (azimuthal symmetry makes the V table identical, which the
/// tests verify rather than recompute).
pub fn td_tables(config: &SourceConfig, n_cut: usize, nu_t: f64, tol: f64) -> Result<TdTables> {
    if n_cut < 1 {
        return Err(Error::Domain(format!("n_cut must be >= 1, got {n_cut}")));
    }
    let d_key = config.key_intervals.len();
    let d_test = config.test_intervals.len();

    let mut key = Vec::new();
    for n in 2..=n_cut {
        let mats: Vec<FockMatrix> = (0..d_key)
            .map(|j| {
                mixed_basis_matrix(
                    &config.key_region(Pole::R, j)?,
                    &config.key_region(Pole::L, j)?,
                    n,
                    nu_t,
                    tol,
                )
            })
            .collect::<Result<_>>()?;
        key.push(pairwise(&mats)?);
    }

    let mut test = Vec::new();
    for n in 1..=n_cut {
        let mats: Vec<FockMatrix> = (0..d_test)
            .map(|j| fock_matrix(&config.test_region(Pole::H, j)?, n, nu_t, tol))
            .collect::<Result<_>>()?;
        test.push(pairwise(&mats)?);
    }

    Ok(TdTables { n_cut, key, test })
}

fn pairwise(mats: &[FockMatrix]) -> Result<Vec<Vec<f64>>> {
    let d = mats.len();
    let mut table = vec![vec![0.0; d]; d];
    for j in 0..d {
        for k in (j + 1)..d {
            let v = trace_distance(&mats[j], &mats[k])?;
            table[j][k] = v;
            table[k][j] = v;
        }
    }
    Ok(table)
}
