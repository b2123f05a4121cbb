//! Loss + dark-count channel model producing expected (or sampled)
//! protocol observables and the error-correction leakage.
//!
//! The model assumes a lossy channel of overall transmittance `eta`
//! (detector efficiency times fiber attenuation), independent dark counts
//! of probability `p_d` per detector and round, random assignment of
//! double clicks, and no misalignment.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Binomial;
use serde::{Deserialize, Serialize};

use crate::binary_entropy;
use crate::error::{Error, Result};
use crate::source::{self, Pole, SourceConfig};

/// Physical channel and receiver parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Detection efficiency of the receiver.
    pub eta_bob: f64,
    /// Fiber attenuation in dB/km.
    pub alpha_att: f64,
    /// Transmission distance in km.
    pub distance_km: f64,
    /// Dark count probability per detector per round.
    pub p_d: f64,
    /// Error-correction inefficiency (>= 1).
    pub f_ec: f64,
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.eta_bob) {
            return Err(Error::Domain(format!("eta_bob {} outside [0, 1]", self.eta_bob)));
        }
        if !(0.0..=1.0).contains(&self.p_d) {
            return Err(Error::Domain(format!("p_d {} outside [0, 1]", self.p_d)));
        }
        if !(self.alpha_att >= 0.0) || !(self.distance_km >= 0.0) {
            return Err(Error::Domain("alpha_att and distance must be >= 0".into()));
        }
        if !(self.f_ec >= 1.0) {
            return Err(Error::Domain(format!("f_EC {} must be >= 1", self.f_ec)));
        }
        Ok(())
    }
}

/// Overall system efficiency `eta = eta_bob * 10^(-alpha L / 10)`.
pub fn channel_eta(params: &ChannelParams) -> f64 {
    params.eta_bob * 10f64.powf(-params.alpha_att * params.distance_km / 10.0)
}

/// Protocol observables, either real-valued expectations or sampled
/// integer counts.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ObservedData {
    /// Key-basis measure counts per intensity setting.
    pub m_key_settings: Vec<f64>,
    /// Test-basis measure counts per intensity setting.
    pub m_test_settings: Vec<f64>,
    /// Test-basis error counts per intensity setting.
    pub m_test_errors: Vec<f64>,
    /// Sifted key size.
    pub m_key: f64,
    /// Sifted-key bit errors.
    pub m_key_errors: f64,
}

impl ObservedData {
    pub fn validate(&self, n: f64) -> Result<()> {
        let within = |v: f64| (0.0..=n).contains(&v);
        if !self.m_key_settings.iter().all(|&v| within(v))
            || !self.m_test_settings.iter().all(|&v| within(v))
            || !within(self.m_key)
        {
            return Err(Error::Domain("counts outside [0, N]".into()));
        }
        if self
            .m_test_errors
            .iter()
            .zip(&self.m_test_settings)
            .any(|(&e, &m)| e < 0.0 || e > m)
            || self.m_key_errors < 0.0
            || self.m_key_errors > self.m_key
        {
            return Err(Error::Domain("error counts exceed their counts".into()));
        }
        Ok(())
    }
}

/// Expected observables under the channel model.
///
/// `q_key` is the key-basis measurement probability (`q_test = 1 - q_key`).
pub fn expected_counts(
    source: &SourceConfig,
    params: &ChannelParams,
    n: f64,
    q_key: f64,
    tol: f64,
) -> Result<ObservedData> {
    params.validate()?;
    source.validate()?;
    if !(q_key > 0.0 && q_key < 1.0) {
        return Err(Error::Domain(format!("q_key {q_key} outside (0, 1)")));
    }
    let eta = channel_eta(params);
    let p_d = params.p_d;
    let q_test = 1.0 - q_key;
    let nu_t = source.nu_t;
    let no_dark = (1.0 - p_d) * (1.0 - p_d);

    // 1 - (1 - p_d)^2 e^{-I eta}, written via expm1 so the small-eta limit
    // keeps full relative accuracy.
    let click =
        move |intensity: f64| p_d * (2.0 - p_d) - no_dark * (-intensity * eta).exp_m1();

    // The model's error probability 1/2 [1 - (1-p_d)^2 e^{-(a+b)}]
    // - 1/2 (1-p_d) [e^{-a} - e^{-b}] factors exactly as
    // 1/2 (1 - (1-p_d) e^{-a}) (1 + (1-p_d) e^{-b}); the factored form has
    // no cancellation (the raw difference loses all significant digits at
    // moderate eta, which stalls the quadrature).
    let error_prob = move |a: f64, b: f64| {
        0.5 * (p_d * (-a).exp() - (-a).exp_m1()) * (1.0 + (1.0 - p_d) * (-b).exp())
    };

    let mut m_key_settings = Vec::new();
    let mut m_key = 0.0;
    let mut m_key_errors = 0.0;
    for j in 0..source.key_intervals.len() {
        let r = source.key_region(Pole::R, j)?;
        // Both caps contribute equally to the counts, hence the factor 2.
        let count =
            2.0 * n * q_key * source::weighted_integral(&r, nu_t, tol, |_, i| click(i))?;
        m_key_settings.push(count);
        m_key += count;
        // Bit errors: dark counts plus photons landing on the wrong cap;
        // double clicks assigned at random. Polar-cap symmetry gives the
        // factor 2 (right cap only).
        m_key_errors += 2.0
            * n
            * q_key
            * source::weighted_integral(&r, nu_t, tol, |theta, i| {
                let half = theta / 2.0;
                error_prob(i * eta * half.sin().powi(2), i * eta * half.cos().powi(2))
            })?;
    }

    let mut m_test_settings = Vec::new();
    let mut m_test_errors = Vec::new();
    for j in 0..source.test_intervals.len() {
        let h = source.test_region(Pole::H, j)?;
        let count =
            2.0 * n * q_test * source::weighted_integral(&h, nu_t, tol, |_, i| click(i))?;
        m_test_settings.push(count);
        let errors = 2.0
            * n
            * q_test
            * source::weighted_integral_phi(&h, nu_t, tol, move |theta, phi, i| {
                let align = theta.sin() * phi.cos();
                error_prob(i * eta * (1.0 - align) / 2.0, i * eta * (1.0 + align) / 2.0)
            })?;
        m_test_errors.push(errors);
    }

    Ok(ObservedData {
        m_key_settings,
        m_test_settings,
        m_test_errors,
        m_key,
        m_key_errors,
    })
}

/// Draw integer counts with the given expectations: each count is binomial
/// with mean equal to its expectation, and error counts are binomial
/// thinnings of their counts (guaranteeing `m <= M`). Deterministic for a
/// fixed seed.
pub fn sample_counts(expectations: &ObservedData, n: f64, seed: u64) -> Result<ObservedData> {
    expectations.validate(n)?;
    let n_int = n as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut draw = |mean: f64, trials: u64| -> f64 {
        if trials == 0 || mean <= 0.0 {
            return 0.0;
        }
        let p = (mean / trials as f64).min(1.0);
        Binomial::new(trials, p).expect("valid p").sample(&mut rng) as f64
    };

    let m_key_settings: Vec<f64> = expectations
        .m_key_settings
        .iter()
        .map(|&e| draw(e, n_int))
        .collect();
    let m_key: f64 = m_key_settings.iter().sum();
    let key_ratio = if expectations.m_key > 0.0 {
        (expectations.m_key_errors / expectations.m_key).min(1.0)
    } else {
        0.0
    };
    let m_key_errors = draw(key_ratio * m_key, m_key as u64);

    let m_test_settings: Vec<f64> = expectations
        .m_test_settings
        .iter()
        .map(|&e| draw(e, n_int))
        .collect();
    let m_test_errors: Vec<f64> = m_test_settings
        .iter()
        .zip(expectations.m_test_settings.iter().zip(&expectations.m_test_errors))
        .map(|(&m, (&em, &ee))| {
            let ratio = if em > 0.0 { (ee / em).min(1.0) } else { 0.0 };
            draw(ratio * m, m as u64)
        })
        .collect();

    Ok(ObservedData {
        m_key_settings,
        m_test_settings,
        m_test_errors,
        m_key,
        m_key_errors,
    })
}

/// Error-correction leakage `f_EC * M * h(m / M)` in bits.
pub fn ec_leakage(m_key: f64, m_key_errors: f64, f_ec: f64) -> Result<f64> {
    if !(m_key >= 0.0) || m_key_errors < 0.0 || m_key_errors > m_key {
        return Err(Error::Domain(format!(
            "need 0 <= errors <= counts, got {m_key_errors} of {m_key}"
        )));
    }
    if m_key == 0.0 {
        return Ok(0.0);
    }
    Ok(f_ec * m_key * binary_entropy(m_key_errors / m_key))
}

/// The exact single-photon yield and ideal-state error probability of the
/// channel model — the values perfect parameter estimation would recover.
pub fn perfect_pe_targets(eta: f64, p_d: f64) -> (f64, f64) {
    let y1 = 1.0 - (1.0 - p_d) * (1.0 - p_d) * (1.0 - eta);
    let e1 = p_d * p_d / 2.0 + p_d * (1.0 - p_d) * (1.0 - eta) + p_d * (1.0 - p_d) * eta / 2.0;
    (y1, e1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::source::{IntegrandKind, IntensityInterval};

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

    fn params(distance_km: f64, p_d: f64) -> ChannelParams {
        ChannelParams {
            eta_bob: 0.65,
            alpha_att: 0.2,
            distance_km,
            p_d,
            f_ec: 1.16,
        }
    }

    const TOL: f64 = 1e-9;

    #[test]
    fn eta_examples() {
        assert!((channel_eta(&params(50.0, 0.0)) - 0.065).abs() < 1e-12);
        assert!((channel_eta(&params(0.0, 0.0)) - 0.65).abs() < 1e-12);
        let p = ChannelParams { eta_bob: 1.0, ..params(100.0, 0.0) };
        assert!((channel_eta(&p) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn zero_efficiency_zero_darks_gives_zero_counts() {
        let src = test_source();
        let p = ChannelParams { eta_bob: 0.0, ..params(0.0, 0.0) };
        let data = expected_counts(&src, &p, 1e10, 0.9, TOL).unwrap();
        assert!(data.m_key_settings.iter().all(|&v| v.abs() < 1e-6));
        assert!(data.m_test_settings.iter().all(|&v| v.abs() < 1e-6));
        assert!(data.m_test_errors.iter().all(|&v| v.abs() < 1e-6));
        assert!(data.m_key.abs() < 1e-6 && data.m_key_errors.abs() < 1e-6);
    }

    #[test]
    fn dark_counts_only_match_selection_probability() {
        let src = test_source();
        let p_d = 1e-3;
        let p = ChannelParams { eta_bob: 0.0, ..params(0.0, p_d) };
        let n = 1e10;
        let q_key = 0.9;
        let data = expected_counts(&src, &p, n, q_key, TOL).unwrap();
        let click = 1.0 - (1.0 - p_d) * (1.0 - p_d);
        for j in 0..4 {
            let r = src.key_region(Pole::R, j).unwrap();
            let p1 = source::region_average(&r, IntegrandKind::Unit, src.nu_t, TOL).unwrap();
            let expect = 2.0 * n * q_key * p1 * click;
            assert!(
                (data.m_key_settings[j] - expect).abs() < 1e-6 * expect,
                "setting {j}"
            );
        }
    }

    #[test]
    fn poisson_mixture_identity_for_key_counts() {
        let src = test_source();
        let p = params(25.0, 1e-6);
        let eta = channel_eta(&p);
        let n = 1e12;
        let q_key = 0.9;
        let data = expected_counts(&src, &p, n, q_key, TOL).unwrap();
        for j in 0..4 {
            let r = src.key_region(Pole::R, j).unwrap();
            let m = source::region_moments(&r, 40, src.nu_t, TOL).unwrap();
            // Gain from the yield oracle y_n = 1 - (1 - p_d)^2 (1 - eta)^n.
            let q: f64 = m
                .pn
                .iter()
                .enumerate()
                .map(|(k, &pn)| {
                    pn * (1.0 - (1.0 - p.p_d).powi(2) * (1.0 - eta).powi(k as i32))
                })
                .sum();
            let expect = 2.0 * n * q_key * m.p_select * q;
            let got = data.m_key_settings[j];
            assert!(
                (got - expect).abs() < 1e-6 * expect.max(1.0),
                "setting {j}: {got} vs {expect}"
            );
        }
    }

    #[test]
    fn errors_below_counts_everywhere() {
        let src = test_source();
        for distance in [0.0, 50.0, 150.0] {
            for p_d in [0.0, 1e-6, 1e-3] {
                let data =
                    expected_counts(&src, &params(distance, p_d), 1e12, 0.9, TOL).unwrap();
                for (e, m) in data.m_test_errors.iter().zip(&data.m_test_settings) {
                    assert!(*e >= -1e-9 && e <= m, "{e} vs {m}");
                }
                assert!(data.m_key_errors >= -1e-9 && data.m_key_errors <= data.m_key);
            }
        }
    }

    #[test]
    fn counts_decrease_with_distance_toward_dark_floor() {
        let src = test_source();
        let n = 1e12;
        let q_key = 0.9;
        let mut prev = f64::INFINITY;
        for distance in [0.0, 50.0, 100.0, 200.0] {
            let data = expected_counts(&src, &params(distance, 1e-6), n, q_key, TOL).unwrap();
            assert!(data.m_key < prev);
            prev = data.m_key;
        }
        // At extreme loss the counts approach the dark-count floor.
        let far = expected_counts(&src, &params(600.0, 1e-6), n, q_key, TOL).unwrap();
        let floor: f64 = (0..4)
            .map(|j| {
                let r = src.key_region(Pole::R, j).unwrap();
                let p1 = source::region_average(&r, IntegrandKind::Unit, src.nu_t, TOL).unwrap();
                2.0 * n * q_key * p1 * (1.0 - (1.0 - 1e-6f64).powi(2))
            })
            .sum();
        assert!((far.m_key - floor).abs() < 1e-2 * floor, "{} vs {floor}", far.m_key);
    }

    #[test]
    fn leakage_examples() {
        assert_eq!(ec_leakage(1000.0, 0.0, 1.16).unwrap(), 0.0);
        assert!((ec_leakage(1000.0, 500.0, 1.0).unwrap() - 1000.0).abs() < 1e-9);
        let v = ec_leakage(1e6, 2e4, 1.16).unwrap();
        assert!((v - 164071.03).abs() < 0.1, "{v}");
        assert_eq!(ec_leakage(0.0, 0.0, 1.16).unwrap(), 0.0);
        assert!(ec_leakage(10.0, 11.0, 1.16).is_err());
    }

    #[test]
    fn perfect_pe_examples() {
        let (y1, e1) = perfect_pe_targets(0.1, 0.0);
        assert!((y1 - 0.1).abs() < 1e-15 && e1 == 0.0);
        let (y1, e1) = perfect_pe_targets(0.065, 1e-6);
        assert!((y1 - 0.06500186999906499).abs() < 1e-12);
        assert!((e1 - 9.674995325e-7).abs() < 1e-15);
        let (y1, e1) = perfect_pe_targets(0.0, 1.0);
        assert!((y1 - 1.0).abs() < 1e-15 && (e1 - 0.5).abs() < 1e-15);
    }

    #[test]
    fn sampling_is_deterministic_and_bounded() {
        let src = test_source();
        let n = 1e9;
        let exp = expected_counts(&src, &params(50.0, 1e-6), n, 0.9, TOL).unwrap();
        let a = sample_counts(&exp, n, 42).unwrap();
        let b = sample_counts(&exp, n, 42).unwrap();
        assert_eq!(a.m_key_settings, b.m_key_settings);
        assert_eq!(a.m_test_errors, b.m_test_errors);
        a.validate(n).unwrap();
        let c = sample_counts(&exp, n, 43).unwrap();
        assert_ne!(a.m_key_settings, c.m_key_settings);
    }

    #[test]
    fn sampling_extremes() {
        let exp = ObservedData {
            m_key_settings: vec![0.0, 1000.0],
            m_test_settings: vec![0.0],
            m_test_errors: vec![0.0],
            m_key: 1000.0,
            m_key_errors: 1000.0,
        };
        let s = sample_counts(&exp, 1000.0, 7).unwrap();
        assert_eq!(s.m_key_settings[0], 0.0);
        // expectation N on N trials forces the full count.
        assert_eq!(s.m_key_settings[1], 1000.0);
        assert_eq!(s.m_key_errors, s.m_key);
    }

    #[test]
    fn sampling_mean_matches_expectation() {
        let src = test_source();
        let n = 1e8;
        let exp = expected_counts(&src, &params(50.0, 1e-6), n, 0.9, TOL).unwrap();
        let trials = 400;
        let mut sum = 0.0;
        for seed in 0..trials {
            sum += sample_counts(&exp, n, seed).unwrap().m_key_settings[3];
        }
        let mean = sum / trials as f64;
        let e = exp.m_key_settings[3];
        // Binomial sigma, three-sigma band on the mean of `trials` draws.
        let sigma = (e * (1.0 - e / n)).sqrt() / (trials as f64).sqrt();
        assert!((mean - e).abs() < 3.0 * sigma, "{mean} vs {e} (sigma {sigma})");
    }
}
