//! Dense two-phase tableau simplex for the small decoy LPs.
//!
//! The instances are tiny (tens of variables and rows) but numerically
//! nasty for off-the-shelf sparse solvers: Poisson coefficients span many
//! orders of magnitude and the difference bounds create near-duplicate
//! rows. A dense tableau with explicit anti-cycling is robust on this
//! scale and fully deterministic.

/// A constraint row over the structural variables: `sum coef * x <= rhs`
/// or `= rhs`.
pub(crate) struct Row {
    pub terms: Vec<(usize, f64)>,
    pub equality: bool,
    pub rhs: f64,
}

pub(crate) enum Outcome {
    /// Optimal structural variable values.
    Optimal(Vec<f64>),
    Infeasible,
    Unbounded,
}

/// Tolerance for reduced costs and pivot eligibility.
const EPS: f64 = 1e-9;
/// Phase-1 residual above which the instance is declared infeasible.
const FEAS_TOL: f64 = 1e-7;

/// Optimize `objective . x` subject to `rows` and finite boxes
/// `bounds[i] = (lo, hi)` on every variable.
pub(crate) fn solve(
    maximize: bool,
    objective: &[f64],
    bounds: &[(f64, f64)],
    rows: &[Row],
) -> Outcome {
    let n = bounds.len();
    debug_assert_eq!(objective.len(), n);

    // Shift to u = x - lo, 0 <= u <= width. Upper bounds become explicit
    // rows so the core works on nonnegative variables only.
    let lo: Vec<f64> = bounds.iter().map(|b| b.0).collect();
    let width: Vec<f64> = bounds.iter().map(|b| b.1 - b.0).collect();

    struct Norm {
        coefs: Vec<f64>,
        rhs: f64,
        equality: bool,
    }
    let mut norm: Vec<Norm> = Vec::with_capacity(rows.len() + n);
    for row in rows {
        let mut coefs = vec![0.0; n];
        let mut rhs = row.rhs;
        for &(v, c) in &row.terms {
            coefs[v] += c;
            rhs -= c * lo[v];
        }
        // Scale the row to unit maximum coefficient so the tolerances are
        // meaningful across rows.
        let scale = coefs.iter().fold(0.0f64, |a, c| a.max(c.abs()));
        if scale > 0.0 {
            for c in &mut coefs {
                *c /= scale;
            }
            rhs /= scale;
        } else if !row.equality && rhs >= -EPS {
            continue; // vacuous constant row; infeasible ones are kept
        }
        norm.push(Norm { coefs, rhs, equality: row.equality });
    }
    for i in 0..n {
        if width[i].is_finite() {
            let mut coefs = vec![0.0; n];
            coefs[i] = 1.0;
            norm.push(Norm { coefs, rhs: width[i], equality: false });
        }
    }

    // Column layout: structural | slack/surplus | artificial.
    let m = norm.len();
    let mut slack_cols = 0usize;
    let mut art_cols = 0usize;
    for r in &norm {
        if !r.equality {
            slack_cols += 1;
        }
        if r.equality || r.rhs < 0.0 {
            art_cols += 1;
        }
    }
    let total = n + slack_cols + art_cols;
    let mut t = vec![vec![0.0f64; total + 1]; m];
    let mut basis = vec![0usize; m];
    let art_start = n + slack_cols;
    let mut next_slack = n;
    let mut next_art = art_start;
    for (i, r) in norm.iter().enumerate() {
        // Normalize to rhs >= 0 (flips <= into >= handled via negative
        // slack coefficient).
        let flip = if r.rhs < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            t[i][j] = flip * r.coefs[j];
        }
        t[i][total] = flip * r.rhs;
        let mut basic = None;
        if !r.equality {
            t[i][next_slack] = flip;
            if flip > 0.0 {
                basic = Some(next_slack);
            }
            next_slack += 1;
        }
        if basic.is_none() {
            t[i][next_art] = 1.0;
            basic = Some(next_art);
            next_art += 1;
        }
        basis[i] = basic.unwrap();
    }

    // Phase 1: minimize the sum of artificials.
    if art_cols > 0 {
        let mut cost = vec![0.0f64; total];
        for j in art_start..total {
            cost[j] = 1.0;
        }
        if run(&mut t, &mut basis, &cost, total).is_err() {
            return Outcome::Unbounded; // cannot happen: phase 1 is bounded
        }
        let residual: f64 = basis
            .iter()
            .enumerate()
            .filter(|(_, &b)| b >= art_start)
            .map(|(i, _)| t[i][total])
            .sum();
        if residual > FEAS_TOL {
            return Outcome::Infeasible;
        }
        // Pivot lingering (degenerate) artificials out of the basis.
        for i in 0..m {
            if basis[i] >= art_start {
                if let Some(j) = (0..art_start).find(|&j| t[i][j].abs() > EPS) {
                    pivot(&mut t, &mut basis, i, j, total);
                }
                // A fully zero row is redundant; leaving the artificial
                // basic at value zero is harmless as long as it never
                // re-enters, which the phase-2 cost guarantees below.
            }
        }
        // Freeze artificial columns.
        for row in &mut t {
            for j in art_start..total {
                row[j] = 0.0;
            }
        }
    }

    // Phase 2.
    let sign = if maximize { -1.0 } else { 1.0 };
    let mut cost = vec![0.0f64; total];
    for j in 0..n {
        cost[j] = sign * objective[j];
    }
    if run(&mut t, &mut basis, &cost, total).is_err() {
        return Outcome::Unbounded;
    }

    let mut u = vec![0.0f64; n];
    for (i, &b) in basis.iter().enumerate() {
        if b < n {
            u[b] = t[i][total];
        }
    }
    let x: Vec<f64> = (0..n)
        .map(|i| (lo[i] + u[i]).clamp(lo[i], bounds[i].1))
        .collect();
    Outcome::Optimal(x)
}

/// Run the simplex iterations for one phase: minimize `cost . all_vars`
/// given the current basic feasible tableau. Uses the largest-reduced-cost
/// rule and switches to Bland's rule if the iteration count suggests
/// cycling.
fn run(
    t: &mut [Vec<f64>],
    basis: &mut [usize],
    cost: &[f64],
    total: usize,
) -> Result<(), ()> {
    let m = t.len();
    // Reduced-cost row z_j - c_j, kept in basis-reduced form.
    let mut z = vec![0.0f64; total + 1];
    for j in 0..=total {
        let mut v = if j < total { -cost[j] } else { 0.0 };
        for i in 0..m {
            v += cost[basis[i]] * t[i][j];
        }
        z[j] = v;
    }

    let bland_after = 50 * (m + total) + 1000;
    for iter in 0.. {
        // Entering column: positive reduced cost (we minimize, row stores
        // z_j - c_j).
        let entering = if iter < bland_after {
            let mut best = None;
            for j in 0..total {
                if z[j] > EPS && best.map_or(true, |(_, v)| z[j] > v) {
                    best = Some((j, z[j]));
                }
            }
            best.map(|(j, _)| j)
        } else {
            (0..total).find(|&j| z[j] > EPS)
        };
        let Some(col) = entering else {
            return Ok(());
        };
        // Ratio test; ties broken by smallest basis index (Bland-safe).
        let mut leave: Option<usize> = None;
        let mut best_ratio = f64::INFINITY;
        for i in 0..m {
            if t[i][col] > EPS {
                let ratio = t[i][total] / t[i][col];
                let better = match leave {
                    None => true,
                    Some(prev) => {
                        ratio < best_ratio - 1e-12
                            || (ratio <= best_ratio + 1e-12 && basis[i] < basis[prev])
                    }
                };
                if better {
                    leave = Some(i);
                    best_ratio = ratio.max(0.0);
                }
            }
        }
        let Some(row) = leave else {
            return Err(()); // unbounded direction
        };
        pivot_with_z(t, basis, &mut z, row, col, total);
    }
    unreachable!()
}

fn pivot(t: &mut [Vec<f64>], basis: &mut [usize], row: usize, col: usize, total: usize) {
    let piv = t[row][col];
    for j in 0..=total {
        t[row][j] /= piv;
    }
    for i in 0..t.len() {
        if i != row && t[i][col].abs() > 0.0 {
            let f = t[i][col];
            for j in 0..=total {
                t[i][j] -= f * t[row][j];
            }
            t[i][col] = 0.0;
        }
    }
    t[row][col] = 1.0;
    basis[row] = col;
}

fn pivot_with_z(
    t: &mut [Vec<f64>],
    basis: &mut [usize],
    z: &mut [f64],
    row: usize,
    col: usize,
    total: usize,
) {
    pivot(t, basis, row, col, total);
    let f = z[col];
    if f != 0.0 {
        for j in 0..=total {
            z[j] -= f * t[row][j];
        }
        z[col] = 0.0;
    }
}
