//! Adaptive numerical quadrature.
//!
//! One-dimensional integrals use a globally adaptive 15-point Gauss-Kronrod
//! rule: the panel with the largest error estimate is bisected until the
//! summed error estimate drops below the requested relative tolerance.
//! Integrands with a known inverse-square-root endpoint singularity are
//! handled upstream by a change of variables, so panels only ever see at
//! worst logarithmic behaviour near a panel edge.

use crate::error::{Error, Result};

/// Kronrod abscissae for the 15-point rule (positive half, descending).
const XGK: [f64; 8] = [
    0.991455371120813,
    0.949107912342759,
    0.864864423359769,
    0.741531185599394,
    0.586087235467691,
    0.405845151377397,
    0.207784955007898,
    0.0,
];

/// Kronrod weights matching `XGK`.
const WGK: [f64; 8] = [
    0.022935322010529,
    0.063092092629979,
    0.104790010322250,
    0.140653259715525,
    0.169004726639267,
    0.190350578064785,
    0.204432940075298,
    0.209482141084728,
];

/// Weights of the embedded 7-point Gauss rule; `WG[i]` pairs with
/// `XGK[2 i + 1]` and `WG[3]` with the midpoint.
const WG: [f64; 4] = [
    0.129484966168870,
    0.279705391489277,
    0.381830050505119,
    0.417959183673469,
];

/// 20-point Gauss-Legendre rule on [-1, 1] (positive half). Used for the
/// smooth azimuthal integrals of the channel model, which have no closed
/// form but are analytic on the small phi intervals in play.
pub(crate) const GL20_X: [f64; 10] = [
    0.076526521133497,
    0.227785851141645,
    0.373706088715420,
    0.510867001950827,
    0.636053680726515,
    0.746331906460151,
    0.839116971822219,
    0.912234428251326,
    0.963971927277914,
    0.993128599185095,
];

pub(crate) const GL20_W: [f64; 10] = [
    0.152753387130726,
    0.149172986472604,
    0.142096109318382,
    0.131688638449177,
    0.118194531961518,
    0.101930119817240,
    0.083276741576705,
    0.062672048334109,
    0.040601429800387,
    0.017614007139152,
];

#[derive(Clone, Copy, Debug)]
struct Panel {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
}

fn gauss_kronrod<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    let mut resk = fc * WGK[7];
    let mut resg = fc * WG[3];
    for i in 0..7 {
        let x = half * XGK[i];
        let fsum = f(center - x) + f(center + x);
        resk += fsum * WGK[i];
        if i % 2 == 1 {
            resg += fsum * WG[i / 2];
        }
    }
    let value = resk * half;
    let error = ((resk - resg) * half).abs();
    (value, error)
}

/// Integrate `f` over `[a, b]` to relative tolerance `rel_tol`.
///
/// `max_panels` caps adaptive refinement; exhaustion surfaces as
/// [`Error::ToleranceNotMet`].
pub fn integrate<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    rel_tol: f64,
    max_panels: usize,
) -> Result<f64> {
    if !(rel_tol > 0.0) {
        return Err(Error::Domain(format!("rel_tol must be positive, got {rel_tol}")));
    }
    if a == b {
        return Ok(0.0);
    }
    let (value, error) = gauss_kronrod(&f, a, b);
    let mut panels = vec![Panel { a, b, value, error }];
    loop {
        let total: f64 = panels.iter().map(|p| p.value).sum();
        let err: f64 = panels.iter().map(|p| p.error).sum();
        // Absolute floor keeps genuinely zero integrals from looping forever.
        let target = rel_tol * total.abs().max(1e-305);
        if err <= target {
            return Ok(total);
        }
        if panels.len() >= max_panels {
            return Err(Error::ToleranceNotMet {
                requested: rel_tol,
                achieved: err / total.abs().max(1e-305),
                panels: panels.len(),
            });
        }
        let worst = panels
            .iter()
            .enumerate()
            .max_by(|(_, p), (_, q)| p.error.total_cmp(&q.error))
            .map(|(i, _)| i)
            .expect("non-empty panel list");
        let Panel { a, b, .. } = panels[worst];
        let mid = 0.5 * (a + b);
        if mid <= a || mid >= b {
            // Panel width hit machine resolution; accept what we have.
            return Ok(panels.iter().map(|p| p.value).sum());
        }
        let (v1, e1) = gauss_kronrod(&f, a, mid);
        let (v2, e2) = gauss_kronrod(&f, mid, b);
        panels[worst] = Panel { a, b: mid, value: v1, error: e1 };
        panels.push(Panel { a: mid, b, value: v2, error: e2 });
    }
}

/// Integrate over `[a, b]` splitting first at the interior points
/// `breaks` (points outside the interval are ignored).
#[cfg_attr(not(test), allow(dead_code))]
pub fn integrate_with_breaks<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    breaks: &[f64],
    rel_tol: f64,
    max_panels: usize,
) -> Result<f64> {
    let mut edges: Vec<f64> = breaks
        .iter()
        .copied()
        .filter(|&x| x > a && x < b)
        .collect();
    edges.push(a);
    edges.push(b);
    edges.sort_by(f64::total_cmp);
    edges.dedup();
    let mut total = 0.0;
    for w in edges.windows(2) {
        total += integrate(&f, w[0], w[1], rel_tol, max_panels)?;
    }
    Ok(total)
}

/// Evaluate the 20-point Gauss-Legendre rule for `f` on `[a, b]`.
pub(crate) fn gauss_legendre_20<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut sum = 0.0;
    for i in 0..10 {
        let x = half * GL20_X[i];
        sum += GL20_W[i] * (f(center - x) + f(center + x));
    }
    sum * half
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polynomial_is_exact() {
        let v = integrate(|x| 3.0 * x * x, 0.0, 2.0, 1e-12, 100).unwrap();
        assert!((v - 8.0).abs() < 1e-12);
    }

    #[test]
    fn oscillatory_integrand() {
        let v = integrate(|x| (10.0 * x).sin(), 0.0, 1.0, 1e-11, 2000).unwrap();
        let exact = (1.0 - 10.0f64.cos()) / 10.0;
        assert!((v - exact).abs() < 1e-10, "{v} vs {exact}");
    }

    #[test]
    fn log_endpoint_singularity() {
        // int_0^1 ln(x) dx = -1
        let v = integrate(|x| x.max(1e-310).ln(), 0.0, 1.0, 1e-9, 4000).unwrap();
        assert!((v + 1.0).abs() < 1e-8, "{v}");
    }

    #[test]
    fn zero_integrand_terminates() {
        let v = integrate(|_| 0.0, 0.0, 1.0, 1e-9, 100).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn panel_budget_is_reported() {
        let err = integrate(|x| 1.0 / (x + 1e-14).sqrt(), 0.0, 1.0, 1e-13, 8).unwrap_err();
        match err {
            Error::ToleranceNotMet { panels, .. } => assert_eq!(panels, 8),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn breaks_help_kinked_integrands() {
        let f = |x: f64| (x - 0.3).abs();
        let v = integrate_with_breaks(f, 0.0, 1.0, &[0.3], 1e-12, 100).unwrap();
        let exact = 0.3f64.powi(2) / 2.0 + 0.7f64.powi(2) / 2.0;
        assert!((v - exact).abs() < 1e-12);
    }

    #[test]
    fn gl20_handles_analytic_phi_kernels() {
        let v = gauss_legendre_20(|x: f64| (2.0 * x.cos()).exp(), -0.4, 0.4);
        let reference = integrate(|x: f64| (2.0 * x.cos()).exp(), -0.4, 0.4, 1e-13, 200).unwrap();
        assert!((v - reference).abs() < 1e-12);
    }
}
