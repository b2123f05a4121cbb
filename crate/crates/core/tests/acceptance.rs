//! Acceptance criteria for the whole pipeline. Each test covers one
//! criterion and prints a `PASS:` line with its measured numbers (visible
//! with `--nocapture`); the harness result line doubles as the pass/fail
//! verdict per criterion.

use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};

use passive_bb84::channel::{self, ChannelParams};
use passive_bb84::concentration::{
    kato_direct_lower, kato_direct_upper, kato_reverse_lower, kato_reverse_upper,
};
use passive_bb84::decoy::{estimate_bounds, BasisData, ConcentrationMode};
use passive_bb84::fock::{fock_matrix, mixed_basis_matrix, td_tables};
use passive_bb84::keyrate::error_budget;
use passive_bb84::source::{
    region_average, region_moments, IntegrandKind, IntensityInterval, Pole, RegionMoments,
    RegionSpec, SourceConfig,
};
use passive_bb84::sweep::{render_csv, run_sweep, SweepConfig};

const TOL: f64 = 1e-9;

/// A representative geometry with the default four-setting interval
/// layout.
fn default_source() -> SourceConfig {
    let w = 0.05;
    SourceConfig {
        nu_t: 0.2,
        dtheta_key: 0.35,
        dtheta_test: 0.25,
        dphi_test: 0.25,
        key_intervals: vec![
            IntensityInterval { lo: 0.0, hi: w },
            IntensityInterval { lo: w, hi: 2.0 * w },
            IntensityInterval { lo: 2.0 * w, hi: 3.0 * w },
            IntensityInterval { lo: 3.0 * w, hi: 1.0 },
        ],
        test_intervals: vec![
            IntensityInterval { lo: 0.0, hi: w },
            IntensityInterval { lo: 0.0, hi: 2.0 * w },
            IntensityInterval { lo: 0.0, hi: 3.0 * w },
            IntensityInterval { lo: 0.0, hi: 1.0 },
        ],
    }
}

fn default_channel(distance_km: f64) -> ChannelParams {
    ChannelParams { eta_bob: 0.65, alpha_att: 0.2, distance_km, p_d: 1e-6, f_ec: 1.16 }
}

/// Moments of a full two-pole region from one pole's moments.
fn both_poles(m: RegionMoments) -> RegionMoments {
    RegionMoments { p_select: 2.0 * m.p_select, w1: 2.0 * m.w1, ..m }
}

#[test]
fn acceptance_01_normalization() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    for nu_t in [0.05, 0.2, 1.0] {
        let full_sphere = RegionSpec {
            pole: Pole::R,
            interval: IntensityInterval { lo: 0.0, hi: 1.0 },
            dtheta_key: std::f64::consts::PI - 1e-12,
            dtheta_test: 0.1,
            dphi_test: 0.1,
        };
        let total = region_average(&full_sphere, IntegrandKind::Unit, nu_t, 1e-10).unwrap();
        worst = worst.max((total - 1.0).abs());
        assert!(
            (total - 1.0).abs() < 1e-8,
            "normalization off at nu_t = {nu_t}: {total}"
        );
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 10.0, "took {elapsed:?}");
    println!("PASS: normalization — worst |<1> - 1| = {worst:.2e}, {elapsed:?}");
}

#[test]
fn acceptance_02_fock_consistency() {
    let src = default_source();
    let mut worst: f64 = 0.0;
    for j in 0..src.key_intervals.len() {
        let r = src.key_region(Pole::R, j).unwrap();
        let lambda = region_moments(&r, 1, src.nu_t, TOL).unwrap().lambda;
        let m = fock_matrix(&r, 1, src.nu_t, TOL).unwrap();
        // Single-photon key matrix: diag((1 + lambda)/2, (1 - lambda)/2).
        let expect = [[(1.0 + lambda) / 2.0, 0.0], [0.0, (1.0 - lambda) / 2.0]];
        for a in 0..2 {
            for b in 0..2 {
                worst = worst.max((m.get(a, b) - expect[a][b]).abs());
            }
        }
    }
    for j in 0..src.test_intervals.len() {
        let h = src.test_region(Pole::H, j).unwrap();
        let lambda = region_moments(&h, 1, src.nu_t, TOL).unwrap().lambda;
        let m = fock_matrix(&h, 1, src.nu_t, TOL).unwrap();
        // Single-photon test matrix: [[1/2, lambda/2], [lambda/2, 1/2]].
        let expect = [[0.5, lambda / 2.0], [lambda / 2.0, 0.5]];
        for a in 0..2 {
            for b in 0..2 {
                worst = worst.max((m.get(a, b) - expect[a][b]).abs());
            }
        }
    }
    assert!(worst < 1e-8, "worst Fock-matrix deviation {worst:.2e}");
    println!("PASS: fock consistency — worst entry deviation {worst:.2e}");
}

#[test]
fn acceptance_03_single_photon_key_state() {
    let src = default_source();
    let mut worst: f64 = 0.0;
    for j in 0..src.key_intervals.len() {
        let r = src.key_region(Pole::R, j).unwrap();
        let l = src.key_region(Pole::L, j).unwrap();
        let m = mixed_basis_matrix(&r, &l, 1, src.nu_t, TOL).unwrap();
        // D(sigma, I/2) = (1/2) sum |eig - 1/2|.
        let d: f64 = m
            .eigenvalues()
            .iter()
            .map(|e| (e - 0.5).abs())
            .sum::<f64>()
            / 2.0;
        worst = worst.max(d);
        assert!(d < 1e-8, "setting {j}: D = {d:.2e}");
    }
    println!("PASS: single-photon key state — worst D(sigma, I/2) = {worst:.2e}");
}

#[test]
fn acceptance_04_kato_coverage() {
    let start = Instant::now();
    let trials = 2000usize;
    let n = 1e4f64;
    let eps = 0.05f64;
    let threshold = eps + 3.0 * (eps / trials as f64).sqrt();
    let mut report = String::new();
    for p in [0.01, 0.1, 0.5] {
        let mut rng = ChaCha8Rng::seed_from_u64(0xACCE);
        let binom = Binomial::new(n as u64, p).unwrap();
        let mean = n * p;
        let mut violations = [0usize; 4];
        for _ in 0..trials {
            let count = binom.sample(&mut rng) as f64;
            // Direct bounds take the predictable sum (here N p) and bound
            // the realized count; reverse bounds take the count and bound
            // the predictable sum. Guesses are the true values.
            if count < kato_direct_lower(n, mean, mean, eps).unwrap() {
                violations[0] += 1;
            }
            if count > kato_direct_upper(n, mean, mean, eps).unwrap() {
                violations[1] += 1;
            }
            if kato_reverse_lower(n, count, count, eps).unwrap() > mean {
                violations[2] += 1;
            }
            if kato_reverse_upper(n, count, count, eps).unwrap() < mean {
                violations[3] += 1;
            }
        }
        for (k, v) in violations.iter().enumerate() {
            let freq = *v as f64 / trials as f64;
            assert!(
                freq <= threshold,
                "p = {p}, bound {k}: violation frequency {freq} > {threshold}"
            );
        }
        report.push_str(&format!(
            " p={p}: [{}]",
            violations.map(|v| v as f64 / trials as f64).map(|f| format!("{f:.4}")).join(",")
        ));
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 120.0, "took {elapsed:?}");
    println!("PASS: kato coverage — threshold {threshold:.4},{report}, {elapsed:?}");
}

#[test]
fn acceptance_05_lp_oracle_sandwich() {
    let start = Instant::now();
    let src = default_source();
    let n_cut = 4;
    let key: Vec<RegionMoments> = (0..4)
        .map(|j| {
            both_poles(region_moments(&src.key_region(Pole::R, j).unwrap(), 40, src.nu_t, TOL).unwrap())
        })
        .collect();
    let test: Vec<RegionMoments> = (0..4)
        .map(|j| {
            both_poles(region_moments(&src.test_region(Pole::H, j).unwrap(), 40, src.nu_t, TOL).unwrap())
        })
        .collect();
    let td = td_tables(&src, n_cut, src.nu_t, TOL).unwrap();
    let n = 1e12;
    let q_key = 0.9;
    let mut margin: f64 = f64::INFINITY;
    for distance in [0.0, 25.0, 50.0, 75.0, 100.0] {
        let params = default_channel(distance);
        let data = channel::expected_counts(&src, &params, n, q_key, TOL).unwrap();
        let b = estimate_bounds(
            n,
            &BasisData { moments: &key, counts: &data.m_key_settings, q: q_key },
            &BasisData { moments: &test, counts: &data.m_test_errors, q: 1.0 - q_key },
            &td,
            n_cut,
            ConcentrationMode::Exact,
        )
        .unwrap();
        let eta = channel::channel_eta(&params);
        let (y1_true, e1_true) = channel::perfect_pe_targets(eta, params.p_d);
        assert!(
            b.y1_l <= y1_true + 1e-9 && y1_true <= b.y1_u + 1e-9,
            "L = {distance}: yield sandwich broken: {} / {y1_true} / {}",
            b.y1_l,
            b.y1_u
        );
        assert!(
            e1_true <= b.e1_ideal_u + 1e-9,
            "L = {distance}: error bound broken: {e1_true} vs {}",
            b.e1_ideal_u
        );
        margin = margin.min(y1_true - b.y1_l).min(b.y1_u - y1_true).min(b.e1_ideal_u - e1_true);
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 300.0, "took {elapsed:?}");
    println!("PASS: lp oracle sandwich — min margin {margin:.3e}, {elapsed:?}");
}

#[test]
fn acceptance_06_error_budget() {
    let (eps_pe, eps_sec) = error_budget(4, 4, 1e-20f64, 1e-20, 1e-20);
    assert!((eps_pe / 21e-20 - 1.0).abs() < 1e-12, "eps_PE = {eps_pe}");
    // 4.58e-10 to three significant figures.
    assert!((eps_sec / 4.58e-10 - 1.0).abs() < 5e-3, "eps_sec = {eps_sec}");
    println!("PASS: error budget — eps_PE = 21 eps, eps_sec = {eps_sec:.3e}");
}

#[test]
fn acceptance_07_end_to_end_shape() {
    let start = Instant::now();
    let mut config = SweepConfig::from_toml("distances = [0.0, 40.0, 80.0, 120.0]").unwrap();
    config.search.budget = 200;
    config.modes.finite_n = vec![1e9, 1e10, 1e11, 1e12];
    let rows = run_sweep(&config).unwrap();

    let finite_ns = [1e9, 1e10, 1e11, 1e12];
    let rate = |dist: f64, mode: &str, n: f64| -> f64 {
        rows.iter()
            .find(|r| r.distance_km == dist && r.mode == mode && (mode != "finite" || r.n == n))
            .unwrap_or_else(|| panic!("missing row {dist}/{mode}/{n}"))
            .rate
    };
    // Positive rate at L = 0 for every block size.
    for &n in &finite_ns {
        assert!(rate(0.0, "finite", n) > 0.0, "K = 0 at L = 0, N = {n}");
    }
    for &dist in &[0.0, 40.0, 80.0, 120.0] {
        // K(N) non-decreasing (slack covers the floor in the key length).
        for pair in finite_ns.windows(2) {
            assert!(
                rate(dist, "finite", pair[1]) >= rate(dist, "finite", pair[0]) - 2.0 / pair[0],
                "K(N) fell between N = {} and {} at L = {dist}",
                pair[0],
                pair[1]
            );
        }
        // Mode ordering.
        let asym = rate(dist, "asymptotic", 0.0);
        let perfect = rate(dist, "perfect_pe", 0.0);
        for &n in &finite_ns {
            assert!(
                rate(dist, "finite", n) <= asym + 1e-12,
                "finite > asymptotic at L = {dist}, N = {n}"
            );
        }
        assert!(asym <= perfect + 1e-12, "asymptotic > perfect at L = {dist}");
    }
    // Maximum tolerable distance non-decreasing in N.
    let max_dist = |n: f64| -> f64 {
        [0.0, 40.0, 80.0, 120.0]
            .into_iter()
            .filter(|&d| rate(d, "finite", n) > 0.0)
            .fold(-1.0, f64::max)
    };
    let reaches: Vec<f64> = finite_ns.iter().map(|&n| max_dist(n)).collect();
    for pair in reaches.windows(2) {
        assert!(pair[1] >= pair[0], "tolerable distance fell: {reaches:?}");
    }
    let elapsed = start.elapsed();
    assert!(elapsed.as_secs_f64() < 3600.0, "took {elapsed:?}");
    println!(
        "PASS: end-to-end shape — K(0 km) = {:?}, reach {reaches:?} km, {elapsed:?}",
        finite_ns.map(|n| rate(0.0, "finite", n))
    );
}

#[test]
fn acceptance_08_poisson_mixture_identity() {
    let src = default_source();
    let params = default_channel(50.0);
    let eta = channel::channel_eta(&params);
    let q_key = 0.9;
    let data = channel::expected_counts(&src, &params, 1.0, q_key, TOL).unwrap();
    let mut worst: f64 = 0.0;
    for j in 0..4 {
        // Key basis.
        let m = region_moments(&src.key_region(Pole::R, j).unwrap(), 40, src.nu_t, TOL).unwrap();
        let mixture: f64 = m
            .pn
            .iter()
            .enumerate()
            .map(|(n, p)| p * (1.0 - (1.0 - params.p_d).powi(2) * (1.0 - eta).powi(n as i32)))
            .sum();
        let gain = data.m_key_settings[j] / (q_key * 2.0 * m.p_select);
        worst = worst.max((mixture - gain).abs());
        // Test basis.
        let m = region_moments(&src.test_region(Pole::H, j).unwrap(), 40, src.nu_t, TOL).unwrap();
        let mixture: f64 = m
            .pn
            .iter()
            .enumerate()
            .map(|(n, p)| p * (1.0 - (1.0 - params.p_d).powi(2) * (1.0 - eta).powi(n as i32)))
            .sum();
        let gain = data.m_test_settings[j] / ((1.0 - q_key) * 2.0 * m.p_select);
        worst = worst.max((mixture - gain).abs());
    }
    assert!(worst < 1e-6, "worst mixture-vs-integral gap {worst:.2e}");
    println!("PASS: poisson mixture identity — worst gap {worst:.2e}");
}

#[test]
fn acceptance_09_determinism() {
    let mut config = SweepConfig::from_toml("distances = [0.0, 50.0]").unwrap();
    config.search.budget = 6;
    config.modes.finite_n = vec![1e10];
    let a = render_csv(&run_sweep(&config).unwrap());
    let b = render_csv(&run_sweep(&config).unwrap());
    assert_eq!(a, b, "CSV output is not byte-identical across runs");
    println!("PASS: determinism — {} identical bytes", a.len());
}
