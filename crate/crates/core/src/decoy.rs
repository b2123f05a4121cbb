//! Decoy-state estimation: the two linear programs bounding the
//! single-photon yield (`y1_L`, `y1_U`) and the ideal-state error
//! probability (`e1_ideal_U`).
//!
//! The observed gains enter only through concentration intervals on the
//! per-setting gain variables; photon-number statistics supply the decoy
//! expansion, and pairwise trace distances bound how much the unknown
//! yields (or error yields) may differ between settings. Equal-by-theory
//! variables (the vacuum and single-photon yields, the vacuum error yield)
//! are merged into shared variables instead of carrying equality
//! constraints.

use std::fmt;

use crate::error::{Error, Result};
use crate::simplex;
use crate::fock::TdTables;
use crate::source::RegionMoments;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sense {
    Minimize,
    Maximize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintOp {
    Le,
    Eq,
}

/// One linear constraint `sum(coef * var) op rhs`.
#[derive(Clone, Debug)]
pub struct LinConstraint {
    pub terms: Vec<(usize, f64)>,
    pub op: ConstraintOp,
    pub rhs: f64,
}

/// A small LP over box-bounded variables; the objective is a single
/// variable, per the structure of both estimation programs.
#[derive(Clone, Debug)]
pub struct LPInstance {
    pub var_names: Vec<String>,
    pub var_bounds: Vec<(f64, f64)>,
    pub constraints: Vec<LinConstraint>,
    pub objective_var: usize,
    pub sense: Sense,
}

impl LPInstance {
    fn add_var(&mut self, name: String, lo: f64, hi: f64) -> usize {
        self.var_names.push(name);
        self.var_bounds.push((lo, hi));
        self.var_names.len() - 1
    }

    fn new() -> Self {
        Self {
            var_names: Vec::new(),
            var_bounds: Vec::new(),
            constraints: Vec::new(),
            objective_var: 0,
            sense: Sense::Minimize,
        }
    }
}

impl fmt::Display for LPInstance {
    /// Plain-text dump for external cross-checking.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{} {}",
            match self.sense {
                Sense::Minimize => "min",
                Sense::Maximize => "max",
            },
            self.var_names[self.objective_var]
        )?;
        for (name, (lo, hi)) in self.var_names.iter().zip(&self.var_bounds) {
            writeln!(f, "var {name} in [{lo}, {hi}]")?;
        }
        for c in &self.constraints {
            let lhs: Vec<String> = c
                .terms
                .iter()
                .map(|(v, coef)| format!("{coef}*{}", self.var_names[*v]))
                .collect();
            let op = match c.op {
                ConstraintOp::Le => "<=",
                ConstraintOp::Eq => "=",
            };
            writeln!(f, "{} {op} {}", lhs.join(" + "), c.rhs)?;
        }
        Ok(())
    }
}

/// Optimal objective value and variable assignment.
#[derive(Clone, Debug)]
pub struct LPSolution {
    pub objective: f64,
    pub values: Vec<f64>,
}

/// The three decoy-state bounds consumed by the key-rate chain.
#[derive(Clone, Copy, Debug)]
pub struct DecoyBounds {
    pub y1_l: f64,
    pub y1_u: f64,
    pub e1_ideal_u: f64,
}

/// Trace-distance bounds >= 1 are vacuous for variables boxed in [0, 1]
/// and are skipped; tiny negative values from quadrature roundoff are
/// clamped to zero.
fn clamp_td(dist: f64) -> Option<f64> {
    if !dist.is_finite() || dist >= 1.0 {
        None
    } else {
        Some(dist.max(0.0))
    }
}

/// Build the yield LP. `moments[j]` describes the full key region of
/// setting `j` (both polar caps); `gain_bounds[j]` is the already-scaled
/// concentration interval for the gain `Q_j`.
pub fn build_yield_lp(
    moments: &[RegionMoments],
    gain_bounds: &[(f64, f64)],
    td: &TdTables,
    n_cut: usize,
    sense: Sense,
) -> Result<LPInstance> {
    if n_cut < 1 {
        return Err(Error::Domain("yield LP requires n_cut >= 1".into()));
    }
    let d = moments.len();
    if d == 0 || gain_bounds.len() != d {
        return Err(Error::DimensionMismatch(d, gain_bounds.len()));
    }
    if td.n_cut < n_cut && n_cut >= 2 {
        return Err(Error::Domain(format!(
            "TD tables only cover n <= {}, need {n_cut}",
            td.n_cut
        )));
    }
    for m in moments {
        if m.pn.len() < n_cut + 1 {
            return Err(Error::DimensionMismatch(m.pn.len(), n_cut + 1));
        }
    }

    let mut lp = LPInstance::new();
    lp.sense = sense;
    // Vacuum and single-photon yields are setting-independent, so they are
    // single shared variables.
    let y0 = lp.add_var("y0".into(), 0.0, 1.0);
    let y1 = lp.add_var("y1".into(), 0.0, 1.0);
    lp.objective_var = y1;
    // y[j][n] for n = 2..=n_cut.
    let y: Vec<Vec<usize>> = (0..d)
        .map(|j| {
            (2..=n_cut)
                .map(|n| lp.add_var(format!("y_{j}_{n}"), 0.0, 1.0))
                .collect()
        })
        .collect();
    let q: Vec<usize> = (0..d)
        .map(|j| {
            let (lo, hi) = gain_bounds[j];
            lp.add_var(format!("Q_{j}"), lo.max(0.0), hi.min(1.0))
        })
        .collect();

    for j in 0..d {
        let pn = &moments[j].pn;
        let tail = 1.0 - pn[..=n_cut].iter().sum::<f64>();
        let expansion = |lp_terms: &mut Vec<(usize, f64)>, sign: f64| {
            lp_terms.push((y0, sign * pn[0]));
            lp_terms.push((y1, sign * pn[1]));
            for n in 2..=n_cut {
                lp_terms.push((y[j][n - 2], sign * pn[n]));
            }
        };
        // sum_n p_n y_n <= Q_j
        let mut terms = Vec::new();
        expansion(&mut terms, 1.0);
        terms.push((q[j], -1.0));
        lp.constraints.push(LinConstraint { terms, op: ConstraintOp::Le, rhs: 0.0 });
        // Q_j <= sum_n p_n y_n + (1 - sum_n p_n)
        let mut terms = vec![(q[j], 1.0)];
        expansion(&mut terms, -1.0);
        lp.constraints.push(LinConstraint { terms, op: ConstraintOp::Le, rhs: tail });
    }
    // Trace-distance constraints for the multiphoton yields.
    for n in 2..=n_cut {
        for j in 0..d {
            for k in (j + 1)..d {
                let dist = clamp_td(td.key(n, j, k));
                let Some(dist) = dist else { continue };
                for (s, t) in [(j, k), (k, j)] {
                    lp.constraints.push(LinConstraint {
                        terms: vec![(y[s][n - 2], 1.0), (y[t][n - 2], -1.0)],
                        op: ConstraintOp::Le,
                        rhs: dist,
                    });
                }
            }
        }
    }
    Ok(lp)
}

/// Build the error LP. `moments[j]` describes the full test region of
/// setting `j`; `error_bounds[j]` is the scaled concentration interval for
/// the error gain `E_j`; `y1_l` feeds the noise-suppressing constraints.
pub fn build_error_lp(
    moments: &[RegionMoments],
    error_bounds: &[(f64, f64)],
    td: &TdTables,
    y1_l: f64,
    n_cut: usize,
) -> Result<LPInstance> {
    if n_cut < 1 {
        return Err(Error::Domain("error LP requires n_cut >= 1".into()));
    }
    let d = moments.len();
    if d == 0 || error_bounds.len() != d {
        return Err(Error::DimensionMismatch(d, error_bounds.len()));
    }
    if td.n_cut < n_cut {
        return Err(Error::Domain(format!(
            "TD tables only cover n <= {}, need {n_cut}",
            td.n_cut
        )));
    }
    for m in moments {
        if m.pn.len() < n_cut + 1 {
            return Err(Error::DimensionMismatch(m.pn.len(), n_cut + 1));
        }
    }

    let mut lp = LPInstance::new();
    lp.sense = Sense::Maximize;
    let e1_ideal = lp.add_var("e1_ideal".into(), 0.0, 1.0);
    lp.objective_var = e1_ideal;
    // The vacuum error yield is setting-independent (shared); all higher
    // orders are per setting.
    let e0 = lp.add_var("e0".into(), 0.0, 1.0);
    let e: Vec<Vec<usize>> = (0..d)
        .map(|j| {
            (1..=n_cut)
                .map(|n| lp.add_var(format!("e_{j}_{n}"), 0.0, 1.0))
                .collect()
        })
        .collect();
    let big_e: Vec<usize> = (0..d)
        .map(|j| {
            let (lo, hi) = error_bounds[j];
            lp.add_var(format!("E_{j}"), lo.max(0.0), hi.min(1.0))
        })
        .collect();

    for j in 0..d {
        let pn = &moments[j].pn;
        let tail = 1.0 - pn[..=n_cut].iter().sum::<f64>();
        let expansion = |terms: &mut Vec<(usize, f64)>, sign: f64| {
            terms.push((e0, sign * pn[0]));
            for n in 1..=n_cut {
                terms.push((e[j][n - 1], sign * pn[n]));
            }
        };
        let mut terms = Vec::new();
        expansion(&mut terms, 1.0);
        terms.push((big_e[j], -1.0));
        lp.constraints.push(LinConstraint { terms, op: ConstraintOp::Le, rhs: 0.0 });
        let mut terms = vec![(big_e[j], 1.0)];
        expansion(&mut terms, -1.0);
        lp.constraints.push(LinConstraint { terms, op: ConstraintOp::Le, rhs: tail });
        // lambda_j e1_ideal <= e_{j,1} - (1 - lambda_j) y1_L / 2
        let lambda = moments[j].lambda;
        lp.constraints.push(LinConstraint {
            terms: vec![(e1_ideal, lambda), (e[j][0], -1.0)],
            op: ConstraintOp::Le,
            rhs: -(1.0 - lambda) * y1_l / 2.0,
        });
    }
    for n in 1..=n_cut {
        for j in 0..d {
            for k in (j + 1)..d {
                let dist = clamp_td(td.test(n, j, k));
                let Some(dist) = dist else { continue };
                for (s, t) in [(j, k), (k, j)] {
                    lp.constraints.push(LinConstraint {
                        terms: vec![(e[s][n - 1], 1.0), (e[t][n - 1], -1.0)],
                        op: ConstraintOp::Le,
                        rhs: dist,
                    });
                }
            }
        }
    }
    Ok(lp)
}

/// Solve an instance. Infeasibility is reported as an error carrying the
/// instance dump (in protocol terms: the observations are inconsistent and
/// the run aborts).
pub fn solve_lp(lp: &LPInstance) -> Result<LPSolution> {
    // Tolerance for constraints whose free part vanishes after fixed
    // variables are substituted out.
    const FEAS_TOL: f64 = 1e-9;
    for (name, (lo, hi)) in lp.var_names.iter().zip(&lp.var_bounds) {
        if lo > hi {
            return Err(Error::Infeasible(format!(
                "variable {name} has empty box [{lo}, {hi}]"
            )));
        }
    }
    // Variables with a degenerate box are substituted into the
    // constraints instead of being carried as zero-width columns.
    let fixed: Vec<Option<f64>> = lp
        .var_bounds
        .iter()
        .map(|&(lo, hi)| if lo == hi { Some(lo) } else { None })
        .collect();
    // Map free variables to compact indices.
    let free_index: Vec<Option<usize>> = {
        let mut next = 0usize;
        fixed
            .iter()
            .map(|f| {
                if f.is_some() {
                    None
                } else {
                    next += 1;
                    Some(next - 1)
                }
            })
            .collect()
    };
    let n_free = free_index.iter().flatten().count();

    let mut rows: Vec<simplex::Row> = Vec::with_capacity(lp.constraints.len());
    for c in &lp.constraints {
        let mut terms = Vec::with_capacity(c.terms.len());
        let mut rhs = c.rhs;
        for &(v, coef) in &c.terms {
            match fixed[v] {
                Some(value) => rhs -= coef * value,
                None => terms.push((free_index[v].unwrap(), coef)),
            }
        }
        if terms.is_empty() {
            let ok = match c.op {
                ConstraintOp::Le => rhs >= -FEAS_TOL,
                ConstraintOp::Eq => rhs.abs() <= FEAS_TOL,
            };
            if !ok {
                return Err(Error::Infeasible(format!(
                    "fixed-variable constraint violated by {rhs:e}:\n{lp}"
                )));
            }
            continue;
        }
        rows.push(simplex::Row { terms, equality: c.op == ConstraintOp::Eq, rhs });
    }

    if n_free == 0 {
        // Everything is pinned; feasibility was checked above.
        let values: Vec<f64> = fixed.iter().map(|f| f.expect("all fixed")).collect();
        return Ok(LPSolution { objective: values[lp.objective_var], values });
    }

    let mut objective = vec![0.0f64; n_free];
    if let Some(j) = free_index[lp.objective_var] {
        objective[j] = 1.0;
    }
    let bounds: Vec<(f64, f64)> = lp
        .var_bounds
        .iter()
        .zip(&fixed)
        .filter(|(_, f)| f.is_none())
        .map(|(&b, _)| b)
        .collect();
    match simplex::solve(lp.sense == Sense::Maximize, &objective, &bounds, &rows) {
        simplex::Outcome::Optimal(free_values) => {
            let values: Vec<f64> = fixed
                .iter()
                .zip(&free_index)
                .map(|(f, idx)| f.unwrap_or_else(|| free_values[idx.unwrap()]))
                .collect();
            Ok(LPSolution { objective: values[lp.objective_var], values })
        }
        simplex::Outcome::Infeasible => Err(Error::Infeasible(format!("LP infeasible:\n{lp}"))),
        simplex::Outcome::Unbounded => Err(Error::Numerical(format!("LP unbounded:\n{lp}"))),
    }
}

/// How observed counts become gain intervals.
#[derive(Clone, Copy, Debug)]
pub enum ConcentrationMode {
    /// Two-sided Kato intervals at per-use failure probability `eps`,
    /// with the observed count as the guess.
    Finite { eps: f64 },
    /// Intervals collapsed to the exact scaled counts (the infinite-key
    /// limit).
    Exact,
}

/// Counts and per-setting moments of one basis.
pub struct BasisData<'a> {
    /// Full-region moments per setting (`p_select` covers both poles).
    pub moments: &'a [RegionMoments],
    /// Observed counts per setting (measure counts for the key basis,
    /// error counts for the test basis).
    pub counts: &'a [f64],
    /// Basis measurement probability.
    pub q: f64,
}

fn gain_intervals(
    n: f64,
    data: &BasisData<'_>,
    mode: ConcentrationMode,
) -> Result<Vec<(f64, f64)>> {
    data.moments
        .iter()
        .zip(data.counts)
        .map(|(m, &count)| {
            let scale = n * data.q * m.p_select;
            if !(scale > 0.0) {
                return Err(Error::Domain("zero selection probability".into()));
            }
            match mode {
                ConcentrationMode::Exact => {
                    let v = count / scale;
                    Ok((v, v))
                }
                ConcentrationMode::Finite { eps } => {
                    let lo = crate::concentration::kato_direct_lower(n, count, count, eps)?;
                    let hi = crate::concentration::kato_direct_upper(n, count, count, eps)?;
                    Ok((lo / scale, hi / scale))
                }
            }
        })
        .collect()
}

/// Run the full estimation chain: concentration intervals, the yield LP in
/// both senses, then the error LP.
pub fn estimate_bounds(
    n: f64,
    key: &BasisData<'_>,
    test: &BasisData<'_>,
    td: &TdTables,
    n_cut: usize,
    mode: ConcentrationMode,
) -> Result<DecoyBounds> {
    let key_intervals = gain_intervals(n, key, mode)?;
    let test_intervals = gain_intervals(n, test, mode)?;

    let y1_l = solve_lp(&build_yield_lp(
        key.moments,
        &key_intervals,
        td,
        n_cut,
        Sense::Minimize,
    )?)?
    .objective
    .clamp(0.0, 1.0);
    let y1_u = solve_lp(&build_yield_lp(
        key.moments,
        &key_intervals,
        td,
        n_cut,
        Sense::Maximize,
    )?)?
    .objective
    .clamp(y1_l, 1.0);
    let e1_ideal_u = solve_lp(&build_error_lp(
        test.moments,
        &test_intervals,
        td,
        y1_l,
        n_cut,
    )?)?
    .objective
    .clamp(0.0, 1.0);

    Ok(DecoyBounds { y1_l, y1_u, e1_ideal_u })
}
