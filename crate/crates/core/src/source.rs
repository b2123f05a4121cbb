//! Post-selection regions and weighted averages over the passive source
//! output distribution.
//!
//! The source emits a polarization state drawn from the Bloch sphere with
//! density `f(theta, I)` in the polar angle and the intensity, uniform in
//! the azimuth. Key regions are polar caps with a full azimuthal circle;
//! test regions are equatorial stripes with a small azimuthal window. All
//! averages carry the weight `f(theta, I) / 2 pi`; the azimuthal integral
//! is always done analytically, the remaining `(theta, I)` integral by
//! adaptive quadrature after a square-root substitution that absorbs the
//! endpoint singularity of `f` at the maximal intensity.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

/// Default relative quadrature tolerance. Far below every physical
/// tolerance used downstream.
pub const DEFAULT_TOL: f64 = 1e-9;

/// Hard cap on adaptive panels per one-dimensional integral.
pub const MAX_PANELS: usize = 20_000;

/// One decoy interval, as fractions of the maximal intensity `4 nu t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntensityInterval {
    pub lo: f64,
    pub hi: f64,
}

impl IntensityInterval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo >= hi {
            return Err(Error::Domain(format!(
                "intensity interval must satisfy 0 <= lo < hi <= 1, got [{lo}, {hi})"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn overlaps(&self, other: &Self) -> bool {
        self.lo < other.hi && other.lo < self.hi
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Basis {
    Key,
    Test,
}

/// Pole of a post-selection region: polar caps `R`/`L` for the key basis,
/// equatorial windows `H`/`V` for the test basis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Pole {
    R,
    L,
    H,
    V,
}

impl Pole {
    pub fn basis(self) -> Basis {
        match self {
            Pole::R | Pole::L => Basis::Key,
            Pole::H | Pole::V => Basis::Test,
        }
    }
}

/// Source geometry: intensity scale plus the angular widths and decoy
/// intervals of every post-selection region.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SourceConfig {
    /// The product `nu t` (photon-number units).
    pub nu_t: f64,
    /// Polar half-width of the key caps.
    pub dtheta_key: f64,
    /// Polar half-width of the test stripes.
    pub dtheta_test: f64,
    /// Azimuthal half-width of the test windows.
    pub dphi_test: f64,
    /// Key-basis decoy intervals (pairwise disjoint).
    pub key_intervals: Vec<IntensityInterval>,
    /// Test-basis decoy intervals (may overlap).
    pub test_intervals: Vec<IntensityInterval>,
}

impl SourceConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu_t > 0.0) {
            return Err(Error::Domain(format!("nu_t must be positive, got {}", self.nu_t)));
        }
        for (name, v) in [
            ("dtheta_key", self.dtheta_key),
            ("dtheta_test", self.dtheta_test),
            ("dphi_test", self.dphi_test),
        ] {
            if !(v > 0.0 && v < PI / 2.0) {
                return Err(Error::Domain(format!(
                    "{name} must lie in (0, pi/2), got {v}"
                )));
            }
        }
        if self.key_intervals.is_empty() || self.test_intervals.is_empty() {
            return Err(Error::Domain("at least one interval per basis required".into()));
        }
        for (i, a) in self.key_intervals.iter().enumerate() {
            IntensityInterval::new(a.lo, a.hi)?;
            for b in self.key_intervals.iter().skip(i + 1) {
                if a.overlaps(b) {
                    return Err(Error::Domain(format!(
                        "key intervals must be pairwise disjoint: [{}, {}) overlaps [{}, {})",
                        a.lo, a.hi, b.lo, b.hi
                    )));
                }
            }
        }
        for a in &self.test_intervals {
            IntensityInterval::new(a.lo, a.hi)?;
        }
        Ok(())
    }

    pub fn key_region(&self, pole: Pole, setting: usize) -> Result<RegionSpec> {
        if pole.basis() != Basis::Key {
            return Err(Error::Domain("key_region requires pole R or L".into()));
        }
        let interval = *self
            .key_intervals
            .get(setting)
            .ok_or_else(|| Error::Domain(format!("no key setting {setting}")))?;
        Ok(RegionSpec::new(pole, interval, self))
    }

    pub fn test_region(&self, pole: Pole, setting: usize) -> Result<RegionSpec> {
        if pole.basis() != Basis::Test {
            return Err(Error::Domain("test_region requires pole H or V".into()));
        }
        let interval = *self
            .test_intervals
            .get(setting)
            .ok_or_else(|| Error::Domain(format!("no test setting {setting}")))?;
        Ok(RegionSpec::new(pole, interval, self))
    }
}

/// One post-selection region: a pole, a decoy interval, and the angular
/// widths inherited from the source configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegionSpec {
    pub pole: Pole,
    pub interval: IntensityInterval,
    pub dtheta_key: f64,
    pub dtheta_test: f64,
    pub dphi_test: f64,
}

impl RegionSpec {
    pub fn new(pole: Pole, interval: IntensityInterval, config: &SourceConfig) -> Self {
        Self {
            pole,
            interval,
            dtheta_key: config.dtheta_key,
            dtheta_test: config.dtheta_test,
            dphi_test: config.dphi_test,
        }
    }

    pub fn basis(&self) -> Basis {
        self.pole.basis()
    }

    /// Polar range of the region.
    pub fn theta_range(&self) -> (f64, f64) {
        match self.pole {
            Pole::R => (0.0, self.dtheta_key),
            Pole::L => (PI - self.dtheta_key, PI),
            Pole::H | Pole::V => (PI / 2.0 - self.dtheta_test, PI / 2.0 + self.dtheta_test),
        }
    }

    /// Azimuthal measure of the region (the phi ranges wrap modulo 2 pi for
    /// the V window, which does not affect any integral below).
    pub fn phi_measure(&self) -> f64 {
        match self.pole {
            Pole::R | Pole::L => 2.0 * PI,
            Pole::H | Pole::V => 2.0 * self.dphi_test,
        }
    }

    /// Analytic azimuthal integral of `e^{i m phi}` over the region, which
    /// is real for every region in play (the key circle kills `m != 0`, the
    /// test windows are symmetric about 0 or pi).
    pub fn phi_harmonic(&self, m: i64) -> f64 {
        match self.pole {
            Pole::R | Pole::L => {
                if m == 0 {
                    2.0 * PI
                } else {
                    0.0
                }
            }
            Pole::H | Pole::V => {
                let base = if m == 0 {
                    2.0 * self.dphi_test
                } else {
                    2.0 * (m as f64 * self.dphi_test).sin() / m as f64
                };
                match self.pole {
                    Pole::V if m % 2 != 0 => -base,
                    _ => base,
                }
            }
        }
    }

    /// Analytic azimuthal integral of `cos(phi)` over the region.
    pub fn phi_cosine(&self) -> f64 {
        match self.pole {
            Pole::R | Pole::L => 0.0,
            Pole::H => 2.0 * self.dphi_test.sin(),
            Pole::V => -2.0 * self.dphi_test.sin(),
        }
    }

    /// Center of the azimuthal window (key regions span the full circle).
    pub fn phi_center(&self) -> f64 {
        match self.pole {
            Pole::R | Pole::L | Pole::H => 0.0,
            Pole::V => PI,
        }
    }
}

/// Maximal intensity `I*_theta` the source can deliver at polar angle
/// `theta`.
pub fn max_intensity(theta: f64, nu_t: f64) -> Result<f64> {
    check_theta(theta)?;
    let c = (theta / 2.0).cos().powi(2);
    let s = (theta / 2.0).sin().powi(2);
    Ok(2.0 * nu_t / c.max(s))
}

/// Joint density `f(theta, I)` of polar angle and intensity in the source
/// output. Diverges (integrably) as `I` approaches `I*_theta`.
pub fn intensity_density(theta: f64, intensity: f64, nu_t: f64) -> Result<f64> {
    check_theta(theta)?;
    let istar = max_intensity(theta, nu_t)?;
    if !(0.0..istar).contains(&intensity) {
        return Err(Error::Domain(format!(
            "intensity {intensity} outside [0, I*_theta = {istar})"
        )));
    }
    let c = (theta / 2.0).cos().powi(2);
    let s = (theta / 2.0).sin().powi(2);
    let half = 2.0 * nu_t;
    Ok(1.0 / (half * PI * PI * (1.0 - intensity * c / half).sqrt() * (1.0 - intensity * s / half).sqrt()))
}

fn check_theta(theta: f64) -> Result<()> {
    if !(0.0..=PI).contains(&theta) {
        return Err(Error::Domain(format!("theta {theta} outside [0, pi]")));
    }
    Ok(())
}

/// Natural log of `n!`.
pub(crate) fn ln_factorial(n: usize) -> f64 {
    (2..=n).map(|k| (k as f64).ln()).sum()
}

/// `e^{-I} I^n / n!`.
pub(crate) fn poisson_weight(intensity: f64, n: usize) -> f64 {
    if intensity == 0.0 {
        return if n == 0 { 1.0 } else { 0.0 };
    }
    (-intensity + n as f64 * intensity.ln() - ln_factorial(n)).exp()
}

/// Raw double integral of `g(theta, I) * f(theta, I)` over the polar range
/// and the (per-theta clipped) intensity range of a region.
///
/// The intensity integral substitutes `I = I* (1 - u^2)`, which cancels the
/// inverse-square-root factor of `f` exactly; the polar integral is split
/// at `pi/2` and at the angles where `I*_theta` crosses an interval
/// endpoint, so each sub-integrand is smooth up to a possible logarithmic
/// edge.
pub(crate) fn integrate_theta_intensity<G: Fn(f64, f64) -> f64>(
    theta_lo: f64,
    theta_hi: f64,
    frac_lo: f64,
    frac_hi: f64,
    nu_t: f64,
    tol: f64,
    g: G,
) -> Result<f64> {
    let i_lo = frac_lo * 4.0 * nu_t;
    let i_hi = frac_hi * 4.0 * nu_t;
    let inner_tol = tol / 10.0;
    let inner = |theta: f64| -> Result<f64> {
        let c = (theta / 2.0).cos().powi(2) / (2.0 * nu_t);
        let s = (theta / 2.0).sin().powi(2) / (2.0 * nu_t);
        let binding = c.max(s);
        let other = c.min(s);
        let istar = 1.0 / binding;
        let hi = i_hi.min(istar);
        if i_lo >= hi {
            return Ok(0.0);
        }
        // u = sqrt(1 - I / I*): the Jacobian cancels the singular factor of
        // the density at I = I*, leaving 1 / sqrt((1 - r) + r u^2) with
        // r = other / binding.
        let u_a = (1.0 - hi / istar).max(0.0).sqrt();
        let u_b = (1.0 - i_lo / istar).max(0.0).sqrt();
        let ratio = other / binding;
        let prefactor = istar / (nu_t * PI * PI);
        if ratio < 1e-14 {
            // At the poles the remaining factor is 1.
            return quad::integrate(
                |u| prefactor * g(theta, istar * (1.0 - u * u)),
                u_a,
                u_b,
                inner_tol,
                MAX_PANELS,
            );
        }
        // u = kappa sinh(v) turns 1 / sqrt((1 - r) + r u^2) du into a
        // constant dv, so the near-equator quasi-singularity at u = 0
        // disappears entirely.
        let kappa = ((1.0 - ratio).max(1e-300) / ratio).sqrt();
        let v_a = (u_a / kappa).asinh();
        let v_b = (u_b / kappa).asinh();
        let scale = prefactor / ratio.sqrt();
        quad::integrate(
            |v| {
                let u = kappa * v.sinh();
                scale * g(theta, istar * (1.0 - u * u))
            },
            v_a,
            v_b,
            inner_tol,
            MAX_PANELS,
        )
    };

    // Split where the inner integral changes analytic form.
    let mut edges = vec![theta_lo, theta_hi];
    if PI / 2.0 > theta_lo && PI / 2.0 < theta_hi {
        edges.push(PI / 2.0);
    }
    for target in [i_lo, i_hi] {
        if target > 2.0 * nu_t && target < 4.0 * nu_t {
            let t = 2.0 * (2.0 * nu_t / target).sqrt().acos();
            for cand in [t, PI - t] {
                if cand > theta_lo && cand < theta_hi {
                    edges.push(cand);
                }
            }
        }
    }
    edges.sort_by(f64::total_cmp);
    edges.dedup();

    // When the interval reaches the maximal intensity, the polar integrand
    // has a logarithmic singularity at pi/2; map those segments
    // exponentially into the equator so the adaptive rule sees a smooth,
    // decaying integrand.
    let singular_equator = frac_hi >= 1.0 - 1e-12;

    let inner_err = std::cell::RefCell::new(None);
    let eval = |theta: f64| {
        // Once an inner integral has failed, stop burning outer panels.
        if inner_err.borrow().is_some() {
            return 0.0;
        }
        match inner(theta) {
            Ok(v) => v,
            Err(e) => {
                *inner_err.borrow_mut() = Some(e);
                0.0
            }
        }
    };
    let mut total = 0.0;
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        let seg = if singular_equator && (b - PI / 2.0).abs() < 1e-12 && a < b {
            // theta = pi/2 - len e^{-x}; the tail past x_max is below
            // machine noise.
            let len = b - a;
            quad::integrate(
                |x| eval(PI / 2.0 - len * (-x).exp()) * len * (-x).exp(),
                0.0,
                40.0,
                tol,
                MAX_PANELS,
            )?
        } else if singular_equator && (a - PI / 2.0).abs() < 1e-12 && a < b {
            let len = b - a;
            quad::integrate(
                |x| eval(PI / 2.0 + len * (-x).exp()) * len * (-x).exp(),
                0.0,
                40.0,
                tol,
                MAX_PANELS,
            )?
        } else {
            quad::integrate(&eval, a, b, tol, MAX_PANELS)?
        };
        total += seg;
    }
    if let Some(e) = inner_err.into_inner() {
        return Err(e);
    }
    Ok(total)
}

/// The integrand kinds understood by [`region_average`]. The azimuthal
/// dependence of each kind (1, `cos phi`, or `e^{i (k - k') phi}`) is
/// integrated analytically.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum IntegrandKind {
    Unit,
    Poisson(usize),
    IntensityWeight,
    PolarAlignment,
    EquatorialAlignment,
    FockElement { n: usize, k: usize, kp: usize },
}

fn binomial(n: usize, k: usize) -> f64 {
    (ln_factorial(n) - ln_factorial(k) - ln_factorial(n - k)).exp()
}

/// Weighted average `<g>_Omega` (with weight `f / 2 pi`, unnormalized) of
/// one of the supported integrands over a region.
pub fn region_average(
    region: &RegionSpec,
    kind: IntegrandKind,
    nu_t: f64,
    tol: f64,
) -> Result<f64> {
    let (theta_lo, theta_hi) = region.theta_range();
    ensure_nonempty(region, nu_t)?;
    let phi_over_2pi = match kind {
        IntegrandKind::Unit
        | IntegrandKind::Poisson(_)
        | IntegrandKind::IntensityWeight
        | IntegrandKind::PolarAlignment => region.phi_measure() / (2.0 * PI),
        IntegrandKind::EquatorialAlignment => region.phi_cosine() / (2.0 * PI),
        IntegrandKind::FockElement { k, kp, .. } => {
            region.phi_harmonic(k as i64 - kp as i64) / (2.0 * PI)
        }
    };
    if phi_over_2pi == 0.0 {
        return Ok(0.0);
    }
    let g = move |theta: f64, intensity: f64| -> f64 {
        match kind {
            IntegrandKind::Unit => 1.0,
            IntegrandKind::Poisson(n) => poisson_weight(intensity, n),
            IntegrandKind::IntensityWeight => intensity * (-intensity).exp(),
            IntegrandKind::PolarAlignment => intensity * (-intensity).exp() * theta.cos(),
            IntegrandKind::EquatorialAlignment => intensity * (-intensity).exp() * theta.sin(),
            IntegrandKind::FockElement { n, k, kp } => {
                let half = theta / 2.0;
                (binomial(n, k) * binomial(n, kp)).sqrt()
                    * half.cos().powi((2 * n - k - kp) as i32)
                    * half.sin().powi((k + kp) as i32)
                    * poisson_weight(intensity, n)
            }
        }
    };
    let raw = integrate_theta_intensity(
        theta_lo,
        theta_hi,
        region.interval.lo,
        region.interval.hi,
        nu_t,
        tol,
        g,
    )?;
    Ok(phi_over_2pi * raw)
}

/// Weighted average of an arbitrary `(theta, I)` integrand with a constant
/// azimuthal factor. Backs the channel model and test oracles.
pub(crate) fn weighted_integral<G: Fn(f64, f64) -> f64>(
    region: &RegionSpec,
    nu_t: f64,
    tol: f64,
    g: G,
) -> Result<f64> {
    let (theta_lo, theta_hi) = region.theta_range();
    ensure_nonempty(region, nu_t)?;
    let raw = integrate_theta_intensity(
        theta_lo,
        theta_hi,
        region.interval.lo,
        region.interval.hi,
        nu_t,
        tol,
        g,
    )?;
    Ok(region.phi_measure() / (2.0 * PI) * raw)
}

/// Weighted average of a full `(theta, phi, I)` integrand; the azimuthal
/// integral uses a fixed Gauss rule (the channel-model kernels are
/// analytic in phi on the narrow windows in play).
pub(crate) fn weighted_integral_phi<G: Fn(f64, f64, f64) -> f64 + Copy>(
    region: &RegionSpec,
    nu_t: f64,
    tol: f64,
    g: G,
) -> Result<f64> {
    let (theta_lo, theta_hi) = region.theta_range();
    ensure_nonempty(region, nu_t)?;
    let (phi_lo, phi_hi) = match region.pole {
        Pole::R | Pole::L => (-PI, PI),
        Pole::H | Pole::V => (
            region.phi_center() - region.dphi_test,
            region.phi_center() + region.dphi_test,
        ),
    };
    let raw = integrate_theta_intensity(
        theta_lo,
        theta_hi,
        region.interval.lo,
        region.interval.hi,
        nu_t,
        tol,
        move |theta, intensity| {
            quad::gauss_legendre_20(|phi| g(theta, phi, intensity), phi_lo, phi_hi)
        },
    )?;
    Ok(raw / (2.0 * PI))
}

fn ensure_nonempty(region: &RegionSpec, nu_t: f64) -> Result<()> {
    let (theta_lo, theta_hi) = region.theta_range();
    if theta_hi <= theta_lo {
        return Err(Error::EmptyRegion("empty polar range".into()));
    }
    // I* is largest at the angle closest to pi/2.
    let theta_best = if theta_lo > PI / 2.0 {
        theta_lo
    } else if theta_hi < PI / 2.0 {
        theta_hi
    } else {
        PI / 2.0
    };
    let istar = max_intensity(theta_best, nu_t)?;
    if region.interval.lo * 4.0 * nu_t >= istar {
        return Err(Error::EmptyRegion(format!(
            "interval [{}, {}) lies above I*_theta everywhere in the polar range",
            region.interval.lo, region.interval.hi
        )));
    }
    Ok(())
}

/// All weighted integrals of one region that the rest of the analysis
/// consumes.
#[derive(Clone, Debug)]
pub struct RegionMoments {
    /// Post-selection probability `<1>_Omega`.
    pub p_select: f64,
    /// Normalized photon-number statistics `p_{n|j}`, `n = 0..=n_max`.
    pub pn: Vec<f64>,
    /// Unnormalized single-photon weight `<e^{-I} I>_Omega`.
    pub w1: f64,
    /// Alignment parameter of the single-photon component with the region's
    /// target polarization.
    pub lambda: f64,
}

/// Compute [`RegionMoments`] for one region.
pub fn region_moments(
    region: &RegionSpec,
    n_max: usize,
    nu_t: f64,
    tol: f64,
) -> Result<RegionMoments> {
    let p_select = region_average(region, IntegrandKind::Unit, nu_t, tol)?;
    if !(p_select > 0.0) {
        return Err(Error::EmptyRegion("zero post-selection probability".into()));
    }
    let mut pn = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        pn.push(region_average(region, IntegrandKind::Poisson(n), nu_t, tol)? / p_select);
    }
    let w1 = region_average(region, IntegrandKind::IntensityWeight, nu_t, tol)?;
    let aligned = match region.pole {
        Pole::R => region_average(region, IntegrandKind::PolarAlignment, nu_t, tol)?,
        Pole::L => -region_average(region, IntegrandKind::PolarAlignment, nu_t, tol)?,
        // The V window's analytic phi factor is negative, so negating
        // aligns both test poles with their own target state.
        Pole::H => region_average(region, IntegrandKind::EquatorialAlignment, nu_t, tol)?,
        Pole::V => -region_average(region, IntegrandKind::EquatorialAlignment, nu_t, tol)?,
    };
    Ok(RegionMoments {
        p_select,
        pn,
        w1,
        lambda: aligned / w1,
    })
}

/// Moments over the set union of several regions sharing one pole.
/// Overlapping intervals are merged first so nothing is double-counted.
pub fn union_moments(
    regions: &[RegionSpec],
    n_max: usize,
    nu_t: f64,
    tol: f64,
) -> Result<RegionMoments> {
    let first = regions
        .first()
        .ok_or_else(|| Error::Domain("empty region list".into()))?;
    if regions.iter().any(|r| r.basis() != first.basis()) {
        return Err(Error::MixedBasis);
    }
    if regions
        .iter()
        .any(|r| r.pole != first.pole || r.dtheta_key != first.dtheta_key
            || r.dtheta_test != first.dtheta_test || r.dphi_test != first.dphi_test)
    {
        return Err(Error::Domain(
            "union requires identical pole and angular parameters".into(),
        ));
    }
    let merged = merge_intervals(regions.iter().map(|r| r.interval));
    let mut p_select = 0.0;
    let mut pn_raw = vec![0.0; n_max + 1];
    let mut w1 = 0.0;
    let mut aligned = 0.0;
    for interval in merged {
        let region = RegionSpec { interval, ..*first };
        let m = region_moments(&region, n_max, nu_t, tol)?;
        p_select += m.p_select;
        for (acc, p) in pn_raw.iter_mut().zip(&m.pn) {
            *acc += p * m.p_select;
        }
        w1 += m.w1;
        aligned += m.lambda * m.w1;
    }
    Ok(RegionMoments {
        p_select,
        pn: pn_raw.iter().map(|p| p / p_select).collect(),
        w1,
        lambda: aligned / w1,
    })
}

/// Merge possibly overlapping intervals into a disjoint cover of their
/// union (adjacent intervals are coalesced).
pub(crate) fn merge_intervals(
    intervals: impl IntoIterator<Item = IntensityInterval>,
) -> Vec<IntensityInterval> {
    let mut sorted: Vec<IntensityInterval> = intervals.into_iter().collect();
    sorted.sort_by(|a, b| a.lo.total_cmp(&b.lo));
    let mut merged: Vec<IntensityInterval> = Vec::new();
    for iv in sorted {
        match merged.last_mut() {
            Some(last) if iv.lo <= last.hi => last.hi = last.hi.max(iv.hi),
            _ => merged.push(iv),
        }
    }
    merged
}
