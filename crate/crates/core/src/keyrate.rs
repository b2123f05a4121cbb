//! The secret-key chain: decoy bounds to single-photon count bounds, the
//! phase-error-rate bound, the error budget, and the final key length and
//! rate.
//!
//! Three evaluation modes share one code path:
//! * `Finite` — the full finite-statistics chain (Kato intervals on all
//!   counts, a Serfling correction on the phase-error transfer, floor and
//!   security-parameter terms in the key length);
//! * `Asymptotic` — all concentration intervals collapsed to their exact
//!   expectation values and the finite-size terms dropped, leaving only
//!   the linear-program relaxation gap;
//! * `PerfectPe` — parameter estimation assumed perfect: the true
//!   single-photon yield and error yield are supplied directly instead of
//!   coming from the linear programs.

use crate::channel::{ec_leakage, ObservedData};
use crate::concentration::{kato_reverse_lower, kato_reverse_upper, serfling_upsilon};
use crate::decoy::{estimate_bounds, BasisData, ConcentrationMode, DecoyBounds};
use crate::error::{Error, Result};
use crate::fock::{td_tables, TdTables};
use crate::source::{union_moments, Pole, RegionMoments, SourceConfig};
use crate::binary_entropy;

/// Protocol-level parameters, fixed before a run.
#[derive(Clone, Debug)]
pub struct ProtocolParams {
    /// Number of transmitted pulses.
    pub n: f64,
    /// Key-basis measurement probability (test basis gets `1 - q_key`).
    pub q_key: f64,
    /// Per-use concentration failure probability.
    pub eps: f64,
    /// Correctness parameter.
    pub eps_cor: f64,
    /// Privacy-amplification parameter.
    pub eps_pa: f64,
    /// Smoothing parameter.
    pub delta: f64,
    /// Photon-number threshold of the decoy linear programs.
    pub n_cut: usize,
    /// Error-correction inefficiency; used when `lambda_ec` is `None`.
    pub f_ec: f64,
    /// Error-correction leakage in bits; derived from the observed key
    /// data when absent.
    pub lambda_ec: Option<f64>,
}

impl ProtocolParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.n >= 1.0) {
            return Err(Error::Domain(format!("n must be >= 1, got {}", self.n)));
        }
        if !(self.q_key > 0.0 && self.q_key < 1.0) {
            return Err(Error::Domain(format!("q_key must lie in (0, 1), got {}", self.q_key)));
        }
        for (name, v) in [
            ("eps", self.eps),
            ("eps_cor", self.eps_cor),
            ("eps_pa", self.eps_pa),
            ("delta", self.delta),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Domain(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.n_cut < 1 {
            return Err(Error::Domain("n_cut must be >= 1".into()));
        }
        if !(self.f_ec >= 1.0) {
            return Err(Error::Domain(format!("f_ec must be >= 1, got {}", self.f_ec)));
        }
        Ok(())
    }
}

/// Everything the chain needs to know about the source and its
/// post-selection geometry; computed once and reused across channel
/// settings and block sizes.
pub struct SourceCharacterization {
    pub config: SourceConfig,
    /// Per-setting moments of the full key regions (both polar caps).
    pub key_moments: Vec<RegionMoments>,
    /// Per-setting moments of the full test regions (both azimuthal
    /// windows).
    pub test_moments: Vec<RegionMoments>,
    pub td: TdTables,
    /// `<e^{-I} I>` over the union of all key regions.
    pub w1_key_union: f64,
    /// `<e^{-I} I>` over the union of all test regions.
    pub w1_test_union: f64,
    /// Alignment parameter of the test-region union.
    pub lambda_test: f64,
}

/// Fold the two mirror-image poles of a setting into one region: the
/// moments are computed on a single pole and the extensive quantities
/// doubled (the normalized ones coincide by symmetry).
fn both_poles(m: RegionMoments) -> RegionMoments {
    RegionMoments {
        p_select: 2.0 * m.p_select,
        w1: 2.0 * m.w1,
        ..m
    }
}

impl SourceCharacterization {
    pub fn new(config: &SourceConfig, n_cut: usize, tol: f64) -> Result<Self> {
        config.validate()?;
        if n_cut < 1 {
            return Err(Error::Domain("n_cut must be >= 1".into()));
        }
        let key_moments: Vec<RegionMoments> = (0..config.key_intervals.len())
            .map(|j| {
                crate::source::region_moments(
                    &config.key_region(Pole::R, j)?,
                    n_cut,
                    config.nu_t,
                    tol,
                )
                .map(both_poles)
            })
            .collect::<Result<_>>()?;
        let test_moments: Vec<RegionMoments> = (0..config.test_intervals.len())
            .map(|j| {
                crate::source::region_moments(
                    &config.test_region(Pole::H, j)?,
                    n_cut,
                    config.nu_t,
                    tol,
                )
                .map(both_poles)
            })
            .collect::<Result<_>>()?;
        let td = td_tables(config, n_cut, config.nu_t, tol)?;
        // Key settings are disjoint in intensity, so the union is a plain
        // sum; test settings overlap and go through interval merging.
        let w1_key_union = key_moments.iter().map(|m| m.w1).sum();
        let h_regions: Vec<_> = (0..config.test_intervals.len())
            .map(|j| config.test_region(Pole::H, j))
            .collect::<Result<_>>()?;
        let test_union = union_moments(&h_regions, 1, config.nu_t, tol)?;
        Ok(Self {
            config: config.clone(),
            key_moments,
            test_moments,
            td,
            w1_key_union,
            w1_test_union: 2.0 * test_union.w1,
            lambda_test: test_union.lambda,
        })
    }

    pub fn d_key(&self) -> usize {
        self.key_moments.len()
    }

    pub fn d_test(&self) -> usize {
        self.test_moments.len()
    }
}

/// Evaluation mode of the chain.
#[derive(Clone, Copy, Debug)]
pub enum Mode {
    Finite,
    Asymptotic,
    /// Skip estimation entirely; `y1` and `e1` are the true single-photon
    /// yield and error yield.
    PerfectPe { y1: f64, e1: f64 },
}

/// Why a run produced no key.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum AbortReason {
    /// The estimation linear programs were infeasible.
    Infeasible(String),
    /// Not enough ideal single-photon test counts to run the
    /// phase-error transfer.
    NoTestStatistics,
    /// The lower bound on single-photon key counts is zero.
    NoKeyStatistics,
    /// The observed key-basis record is empty.
    NoKeyData,
}

/// All intermediate quantities of one evaluation.
#[derive(Clone, Debug)]
pub struct KeyRateReport {
    pub decoy: Option<DecoyBounds>,
    pub m_key1_l: f64,
    pub m_key1_u: f64,
    pub m_test1_ideal_l: f64,
    pub m_test1_ideal_u: f64,
    pub m_ph_u: f64,
    pub e_ph_u: f64,
    pub eps_pe: f64,
    pub eps_sec: f64,
    pub lambda_ec: f64,
    /// Extractable key length in bits.
    pub l: f64,
    /// Key rate per pulse, `max(l, 0) / N`.
    pub rate: f64,
    pub abort: Option<AbortReason>,
}

impl KeyRateReport {
    fn aborted(reason: AbortReason, eps_pe: f64, eps_sec: f64, lambda_ec: f64) -> Self {
        Self {
            decoy: None,
            m_key1_l: 0.0,
            m_key1_u: 0.0,
            m_test1_ideal_l: 0.0,
            m_test1_ideal_u: 0.0,
            m_ph_u: 0.0,
            e_ph_u: 0.5,
            eps_pe,
            eps_sec,
            lambda_ec,
            l: 0.0,
            rate: 0.0,
            abort: Some(reason),
        }
    }
}

/// Reverse-bound the three single-photon counts from the decoy yields.
/// Exact mode returns the expectation values themselves.
pub fn single_photon_count_bounds(
    sc: &SourceCharacterization,
    pp: &ProtocolParams,
    decoy: &DecoyBounds,
    exact: bool,
) -> Result<(f64, f64, f64)> {
    let q_test = 1.0 - pp.q_key;
    let s_key_l = pp.n * pp.q_key * sc.w1_key_union * decoy.y1_l;
    let s_key_u = pp.n * pp.q_key * sc.w1_key_union * decoy.y1_u;
    let s_test_l = pp.n * q_test * sc.w1_test_union * sc.lambda_test * decoy.y1_l;
    if exact {
        return Ok((s_key_l, s_key_u, s_test_l));
    }
    let m_key1_l = kato_reverse_lower(pp.n, s_key_l, s_key_l, pp.eps)?.max(0.0);
    let m_key1_u = kato_reverse_upper(pp.n, s_key_u, s_key_u, pp.eps)?;
    let m_test1_ideal_l = kato_reverse_lower(pp.n, s_test_l, s_test_l, pp.eps)?.max(0.0);
    Ok((m_key1_l, m_key1_u, m_test1_ideal_l))
}

/// Transfer the ideal-state test error bound into a phase-error-rate
/// bound on the key counts.
pub fn phase_error_bound(
    sc: &SourceCharacterization,
    pp: &ProtocolParams,
    counts: (f64, f64, f64),
    e1_ideal_u: f64,
    exact: bool,
) -> Result<(f64, f64, f64)> {
    let (m_key1_l, m_key1_u, m_test1_ideal_l) = counts;
    let q_test = 1.0 - pp.q_key;
    let s_err_u = pp.n * q_test * sc.w1_test_union * sc.lambda_test * e1_ideal_u;
    let (m_test1_ideal_u, serfling) = if exact {
        (s_err_u, 0.0)
    } else {
        (
            kato_reverse_upper(pp.n, s_err_u, s_err_u, pp.eps)?,
            serfling_upsilon(m_key1_u, m_test1_ideal_l, pp.eps)?,
        )
    };
    let m_ph_u = m_test1_ideal_u * m_key1_u / m_test1_ideal_l + serfling;
    let e_ph_u = (m_ph_u / m_key1_l).min(0.5);
    Ok((m_test1_ideal_u, m_ph_u, e_ph_u))
}

/// Finite-key secret key length in bits (floored, clamped at zero).
pub fn key_length(
    m_key1_l: f64,
    e_ph_u: f64,
    lambda_ec: f64,
    eps_cor: f64,
    eps_pa: f64,
    delta: f64,
) -> f64 {
    let tags = (1.0 / (2.0 * eps_cor * eps_pa * eps_pa * delta)).log2();
    (m_key1_l * (1.0 - binary_entropy(e_ph_u.min(0.5))) - lambda_ec - tags)
        .floor()
        .max(0.0)
}

/// Total parameter-estimation failure probability and the resulting
/// secrecy parameter.
pub fn error_budget(
    d_key: usize,
    d_test: usize,
    eps: f64,
    eps_pa: f64,
    delta: f64,
) -> (f64, f64) {
    let eps_pe = eps * (2 * (d_key + d_test) + 5) as f64;
    (eps_pe, eps_pe.sqrt() + eps_pa + delta)
}

/// Run the whole chain in the requested mode.
pub fn evaluate(
    sc: &SourceCharacterization,
    pp: &ProtocolParams,
    observed: &ObservedData,
    mode: Mode,
) -> Result<KeyRateReport> {
    pp.validate()?;
    observed.validate(pp.n)?;
    if observed.m_key_settings.len() != sc.d_key()
        || observed.m_test_errors.len() != sc.d_test()
    {
        return Err(Error::DimensionMismatch(
            observed.m_key_settings.len(),
            sc.d_key(),
        ));
    }
    let (eps_pe, eps_sec) = error_budget(sc.d_key(), sc.d_test(), pp.eps, pp.eps_pa, pp.delta);
    let exact = !matches!(mode, Mode::Finite);

    if observed.m_key <= 0.0 {
        return Ok(KeyRateReport::aborted(AbortReason::NoKeyData, eps_pe, eps_sec, 0.0));
    }
    let lambda_ec = match pp.lambda_ec {
        Some(v) => v,
        None => ec_leakage(observed.m_key, observed.m_key_errors, pp.f_ec)?,
    };

    let decoy = match mode {
        Mode::PerfectPe { y1, e1 } => DecoyBounds { y1_l: y1, y1_u: y1, e1_ideal_u: e1 },
        Mode::Finite | Mode::Asymptotic => {
            let conc = if exact {
                ConcentrationMode::Exact
            } else {
                ConcentrationMode::Finite { eps: pp.eps }
            };
            let result = estimate_bounds(
                pp.n,
                &BasisData {
                    moments: &sc.key_moments,
                    counts: &observed.m_key_settings,
                    q: pp.q_key,
                },
                &BasisData {
                    moments: &sc.test_moments,
                    counts: &observed.m_test_errors,
                    q: 1.0 - pp.q_key,
                },
                &sc.td,
                pp.n_cut,
                conc,
            );
            match result {
                Ok(b) => b,
                Err(Error::Infeasible(msg)) => {
                    return Ok(KeyRateReport::aborted(
                        AbortReason::Infeasible(msg),
                        eps_pe,
                        eps_sec,
                        lambda_ec,
                    ));
                }
                Err(e) => return Err(e),
            }
        }
    };

    let counts = single_photon_count_bounds(sc, pp, &decoy, exact)?;
    let (m_key1_l, m_key1_u, m_test1_ideal_l) = counts;
    if m_key1_l <= 0.0 {
        return Ok(KeyRateReport {
            decoy: Some(decoy),
            ..KeyRateReport::aborted(AbortReason::NoKeyStatistics, eps_pe, eps_sec, lambda_ec)
        });
    }
    // The Serfling correction needs at least one ideal test count; exact
    // modes only need the ratio to be defined.
    let test_floor = if exact { f64::MIN_POSITIVE } else { 1.0 };
    if m_test1_ideal_l < test_floor {
        return Ok(KeyRateReport {
            decoy: Some(decoy),
            ..KeyRateReport::aborted(AbortReason::NoTestStatistics, eps_pe, eps_sec, lambda_ec)
        });
    }

    let (m_test1_ideal_u, m_ph_u, e_ph_u) =
        phase_error_bound(sc, pp, counts, decoy.e1_ideal_u, exact)?;

    let l = if exact {
        // Infinite-key limit: no floor, no security-parameter tags.
        (m_key1_l * (1.0 - binary_entropy(e_ph_u.min(0.5))) - lambda_ec).max(0.0)
    } else {
        key_length(m_key1_l, e_ph_u, lambda_ec, pp.eps_cor, pp.eps_pa, pp.delta)
    };

    Ok(KeyRateReport {
        decoy: Some(decoy),
        m_key1_l,
        m_key1_u,
        m_test1_ideal_l,
        m_test1_ideal_u,
        m_ph_u,
        e_ph_u,
        eps_pe,
        eps_sec,
        lambda_ec,
        l,
        rate: l / pp.n,
        abort: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::{self, ChannelParams};
    use crate::source::IntensityInterval;

    const TOL: f64 = 1e-9;

    fn test_source() -> SourceConfig {
        SourceConfig {
            nu_t: 0.2,
            dtheta_key: 0.35,
            dtheta_test: 0.25,
            dphi_test: 0.25,
            key_intervals: vec![
                IntensityInterval { lo: 0.0, hi: 0.05 },
                IntensityInterval { lo: 0.05, hi: 0.10 },
                IntensityInterval { lo: 0.10, hi: 0.15 },
                IntensityInterval { lo: 0.15, hi: 1.0 },
            ],
            test_intervals: vec![
                IntensityInterval { lo: 0.0, hi: 0.05 },
                IntensityInterval { lo: 0.0, hi: 0.10 },
                IntensityInterval { lo: 0.0, hi: 0.15 },
                IntensityInterval { lo: 0.0, hi: 1.0 },
            ],
        }
    }

    fn default_params(n: f64) -> ProtocolParams {
        ProtocolParams {
            n,
            q_key: 0.9,
            eps: 1e-20,
            eps_cor: 1e-20,
            eps_pa: 1e-20,
            delta: 1e-20,
            n_cut: 4,
            f_ec: 1.16,
            lambda_ec: None,
        }
    }

    #[test]
    fn key_length_reference_value() {
        // Frozen against direct evaluation: 1e6 * (1 - h(0.05)) is
        // 713603.036..., minus log2(1/(2e-80)) = 264.745... gives
        // 713338.29, floored.
        let l = key_length(1e6, 0.05, 0.0, 1e-20, 1e-20, 1e-20);
        assert_eq!(l, 713_338.0);
        // Coarse published approximation of the same quantity.
        assert!((l - 713_345.0).abs() < 10.0);
    }

    #[test]
    fn key_length_trivia() {
        assert_eq!(key_length(1e6, 0.5, 0.0, 1e-20, 1e-20, 1e-20), 0.0);
        assert_eq!(key_length(0.0, 0.05, 0.0, 1e-20, 1e-20, 1e-20), 0.0);
        // Leakage reduces the length one-for-one.
        let base = key_length(1e6, 0.05, 0.0, 1e-20, 1e-20, 1e-20);
        let leaked = key_length(1e6, 0.05, 1000.0, 1e-20, 1e-20, 1e-20);
        assert_eq!(base - leaked, 1000.0);
    }

    #[test]
    fn error_budget_reference_values() {
        let (eps_pe, eps_sec) = error_budget(4, 4, 1e-20f64, 1e-20, 1e-20);
        assert!((eps_pe - 21e-20).abs() < 1e-33);
        assert!((eps_sec / 4.58e-10 - 1.0).abs() < 2e-3, "{eps_sec}");
        let (eps_pe0, _) = error_budget(0, 0, 1e-20f64, 1e-20, 1e-20);
        assert!((eps_pe0 - 5e-20).abs() < 1e-33);
    }

    #[test]
    fn serfling_dominates_small_samples() {
        let v = serfling_upsilon(100.0, 100.0, 1e-20).unwrap();
        assert!((v - 68.20).abs() < 0.01, "{v}");
    }

    #[test]
    fn characterization_shapes() {
        let sc = SourceCharacterization::new(&test_source(), 4, TOL).unwrap();
        assert_eq!(sc.d_key(), 4);
        assert_eq!(sc.d_test(), 4);
        assert!(sc.w1_key_union > 0.0);
        assert!(sc.w1_test_union > 0.0);
        assert!(sc.lambda_test > 0.0 && sc.lambda_test <= 1.0);
        // The widest test setting contains all others, so the union moment
        // equals that setting's moment.
        assert!((sc.w1_test_union - sc.test_moments[3].w1).abs() < 1e-12);
    }

    fn run_mode(
        sc: &SourceCharacterization,
        params: &ChannelParams,
        n: f64,
        mode: Mode,
    ) -> KeyRateReport {
        let pp = default_params(n);
        let data = channel::expected_counts(&sc.config, params, n, pp.q_key, TOL).unwrap();
        evaluate(sc, &pp, &data, mode).unwrap()
    }

    #[test]
    fn mode_ordering_and_positivity() {
        let sc = SourceCharacterization::new(&test_source(), 4, TOL).unwrap();
        let params = ChannelParams {
            eta_bob: 0.65,
            alpha_att: 0.2,
            distance_km: 50.0,
            p_d: 1e-6,
            f_ec: 1.16,
        };
        let n = 1e12;
        let finite = run_mode(&sc, &params, n, Mode::Finite);
        let asym = run_mode(&sc, &params, n, Mode::Asymptotic);
        let eta = channel::channel_eta(&params);
        let (y1, e1) = channel::perfect_pe_targets(eta, params.p_d);
        let perfect = run_mode(&sc, &params, n, Mode::PerfectPe { y1, e1 });
        assert!(finite.abort.is_none(), "{:?}", finite.abort);
        assert!(finite.rate > 0.0, "no key at 50 km, N = {n}");
        assert!(
            finite.rate <= asym.rate + 1e-15,
            "finite {} vs asymptotic {}",
            finite.rate,
            asym.rate
        );
        assert!(
            asym.rate <= perfect.rate + 1e-15,
            "asymptotic {} vs perfect {}",
            asym.rate,
            perfect.rate
        );
    }

    #[test]
    fn finite_rate_monotone_in_n() {
        let sc = SourceCharacterization::new(&test_source(), 4, TOL).unwrap();
        let params = ChannelParams {
            eta_bob: 0.65,
            alpha_att: 0.2,
            distance_km: 30.0,
            p_d: 1e-6,
            f_ec: 1.16,
        };
        let mut prev = -1.0;
        for n in [1e10, 1e11, 1e12, 1e13] {
            let r = run_mode(&sc, &params, n, Mode::Finite);
            assert!(r.rate >= prev - 1e-15, "rate fell at N = {n}");
            prev = r.rate;
        }
    }

    #[test]
    fn finite_approaches_asymptotic() {
        let sc = SourceCharacterization::new(&test_source(), 4, TOL).unwrap();
        let params = ChannelParams {
            eta_bob: 0.65,
            alpha_att: 0.2,
            distance_km: 30.0,
            p_d: 1e-6,
            f_ec: 1.16,
        };
        let asym = run_mode(&sc, &params, 1e14, Mode::Asymptotic);
        let finite = run_mode(&sc, &params, 1e14, Mode::Finite);
        assert!(finite.rate > 0.9 * asym.rate, "{} vs {}", finite.rate, asym.rate);
    }

    #[test]
    fn zero_counts_abort() {
        let sc = SourceCharacterization::new(&test_source(), 4, TOL).unwrap();
        let pp = default_params(1e10);
        let data = ObservedData {
            m_key_settings: vec![0.0; 4],
            m_test_settings: vec![0.0; 4],
            m_test_errors: vec![0.0; 4],
            m_key: 0.0,
            m_key_errors: 0.0,
        };
        let r = evaluate(&sc, &pp, &data, Mode::Finite).unwrap();
        assert_eq!(r.abort, Some(AbortReason::NoKeyData));
        assert_eq!(r.rate, 0.0);
    }

    #[test]
    fn dark_count_dominated_distance_aborts_or_zeroes() {
        let sc = SourceCharacterization::new(&test_source(), 4, TOL).unwrap();
        let params = ChannelParams {
            eta_bob: 0.65,
            alpha_att: 0.2,
            distance_km: 500.0,
            p_d: 1e-6,
            f_ec: 1.16,
        };
        let r = run_mode(&sc, &params, 1e12, Mode::Finite);
        assert_eq!(r.rate, 0.0, "unexpected key at 500 km: {r:?}");
    }

    #[test]
    fn perfect_pe_zero_error_is_clean() {
        let sc = SourceCharacterization::new(&test_source(), 4, TOL).unwrap();
        let params = ChannelParams {
            eta_bob: 0.65,
            alpha_att: 0.2,
            distance_km: 30.0,
            p_d: 0.0,
            f_ec: 1.16,
        };
        let eta = channel::channel_eta(&params);
        let (y1, e1) = channel::perfect_pe_targets(eta, 0.0);
        assert_eq!(e1, 0.0);
        let r = run_mode(&sc, &params, 1e12, Mode::PerfectPe { y1, e1 });
        assert!(r.abort.is_none());
        assert_eq!(r.e_ph_u, 0.0);
        assert!(r.rate > 0.0);
    }

    #[test]
    fn explicit_lambda_ec_is_honored() {
        let sc = SourceCharacterization::new(&test_source(), 4, TOL).unwrap();
        let params = ChannelParams {
            eta_bob: 0.65,
            alpha_att: 0.2,
            distance_km: 30.0,
            p_d: 1e-6,
            f_ec: 1.16,
        };
        let mut pp = default_params(1e12);
        let data = channel::expected_counts(&sc.config, &params, pp.n, pp.q_key, TOL).unwrap();
        let auto = evaluate(&sc, &pp, &data, Mode::Asymptotic).unwrap();
        pp.lambda_ec = Some(auto.lambda_ec + 1e6);
        let manual = evaluate(&sc, &pp, &data, Mode::Asymptotic).unwrap();
        assert!((auto.l - manual.l - 1e6).abs() < 1e-3);
    }

    #[test]
    fn invalid_params_rejected() {
        let sc = SourceCharacterization::new(&test_source(), 4, TOL).unwrap();
        let mut pp = default_params(1e10);
        pp.q_key = 1.0;
        let data = ObservedData {
            m_key_settings: vec![1.0; 4],
            m_test_settings: vec![1.0; 4],
            m_test_errors: vec![0.0; 4],
            m_key: 4.0,
            m_key_errors: 0.0,
        };
        assert!(evaluate(&sc, &pp, &data, Mode::Finite).is_err());
    }
}
