//! Batch rate-distance sweeps: configuration schema, the per-distance
//! parameter search, and deterministic tabular output.
//!
//! All evaluation modes at one distance share a single candidate list
//! (free-geometry samples, pinned samples for the asymptotic convention,
//! and warm starts carried over from the previous distance). Because every
//! mode is evaluated on every candidate, the per-candidate inequalities
//! `K_finite(N) <= K_asymptotic <= K_perfect_pe` and the monotonicity of
//! the finite rate in the block size carry over to the per-mode maxima
//! row by row.

use std::path::PathBuf;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{self, ChannelParams, ObservedData};
use crate::error::{Error, Result};
use crate::keyrate::{evaluate, AbortReason, Mode, ProtocolParams, SourceCharacterization};
use crate::optimizer::{CandidateParams, SearchSpace};

fn default_true() -> bool {
    true
}

fn default_finite_n() -> Vec<f64> {
    vec![1e9, 1e10, 1e11, 1e12]
}

fn default_reference_n() -> f64 {
    1e12
}

/// Which curves to compute.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModesConfig {
    /// Block sizes for the finite-key curves.
    #[serde(default = "default_finite_n")]
    pub finite_n: Vec<f64>,
    #[serde(default = "default_true")]
    pub asymptotic: bool,
    #[serde(default = "default_true")]
    pub perfect_pe: bool,
    /// Block size used to evaluate the (block-size-independent)
    /// asymptotic and perfect-estimation rows.
    #[serde(default = "default_reference_n")]
    pub reference_n: f64,
}

impl Default for ModesConfig {
    fn default() -> Self {
        Self {
            finite_n: default_finite_n(),
            asymptotic: true,
            perfect_pe: true,
            reference_n: default_reference_n(),
        }
    }
}

/// Detector and fiber parameters (distance comes from the sweep).
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSettings {
    pub eta_bob: f64,
    pub alpha_att: f64,
    pub p_d: f64,
    pub f_ec: f64,
}

impl Default for ChannelSettings {
    fn default() -> Self {
        Self { eta_bob: 0.65, alpha_att: 0.2, p_d: 1e-6, f_ec: 1.16 }
    }
}

/// Security parameters and the photon-number threshold.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProtocolSettings {
    pub eps: f64,
    pub eps_cor: f64,
    pub eps_pa: f64,
    pub delta: f64,
    pub n_cut: usize,
}

impl Default for ProtocolSettings {
    fn default() -> Self {
        Self { eps: 1e-20, eps_cor: 1e-20, eps_pa: 1e-20, delta: 1e-20, n_cut: 4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

fn default_tol() -> f64 {
    crate::source::DEFAULT_TOL
}

impl Default for SearchSpace {
    fn default() -> Self {
        Self {
            w: (1e-3, 0.25),
            q_test: (0.02, 0.5),
            nu_t: (0.02, 1.5),
            dtheta_key: (0.05, 1.4),
            dtheta_test: (0.05, 1.4),
            dphi_test: (0.05, 1.4),
            budget: 200,
            seed: 1,
        }
    }
}

/// Full sweep description; every section has working defaults so a config
/// file only needs the distance list.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub distances: Vec<f64>,
    #[serde(default)]
    pub modes: ModesConfig,
    #[serde(default)]
    pub channel: ChannelSettings,
    #[serde(default)]
    pub protocol: ProtocolSettings,
    #[serde(default)]
    pub search: SearchSpace,
    /// Relative tolerance of all region integrals.
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub format: OutputFormat,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl SweepConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Dry-run validation: ranges, mode selection, and a probe that the
    /// mid-range geometry actually yields non-empty regions.
    pub fn validate(&self) -> Result<()> {
        if self.distances.is_empty() {
            return Err(Error::Config("distances must be non-empty".into()));
        }
        if self.distances.iter().any(|d| !(*d >= 0.0) || !d.is_finite()) {
            return Err(Error::Config("distances must be finite and non-negative".into()));
        }
        ChannelParams {
            eta_bob: self.channel.eta_bob,
            alpha_att: self.channel.alpha_att,
            distance_km: self.distances[0],
            p_d: self.channel.p_d,
            f_ec: self.channel.f_ec,
        }
        .validate()
        .map_err(|e| Error::Config(format!("channel: {e}")))?;
        for (name, v) in [
            ("protocol.eps", self.protocol.eps),
            ("protocol.eps_cor", self.protocol.eps_cor),
            ("protocol.eps_pa", self.protocol.eps_pa),
            ("protocol.delta", self.protocol.delta),
        ] {
            if !(v > 0.0 && v < 1.0) {
                return Err(Error::Config(format!("{name} must lie in (0, 1), got {v}")));
            }
        }
        if self.protocol.n_cut < 1 {
            return Err(Error::Config("protocol.n_cut must be >= 1".into()));
        }
        self.search.validate()?;
        if self.modes.finite_n.is_empty() && !self.modes.asymptotic && !self.modes.perfect_pe {
            return Err(Error::Config("no modes selected".into()));
        }
        if self.modes.finite_n.iter().any(|n| !(*n >= 1.0)) {
            return Err(Error::Config("modes.finite_n entries must be >= 1".into()));
        }
        if !(self.modes.reference_n >= 1.0) {
            return Err(Error::Config("modes.reference_n must be >= 1".into()));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(Error::Config(format!("tol must lie in (0, 1), got {}", self.tol)));
        }
        // Probe the mid-range candidate geometry.
        let mid = |(lo, hi): (f64, f64)| 0.5 * (lo + hi);
        let probe = CandidateParams {
            w: mid(self.search.w),
            q_test: mid(self.search.q_test),
            nu_t: mid(self.search.nu_t),
            dtheta_key: mid(self.search.dtheta_key),
            dtheta_test: mid(self.search.dtheta_test),
            dphi_test: mid(self.search.dphi_test),
        };
        let src = probe.source_config().map_err(|e| Error::Config(format!("search: {e}")))?;
        crate::source::region_moments(
            &src.key_region(crate::source::Pole::R, 0)?,
            0,
            src.nu_t,
            1e-6,
        )
        .map_err(|e| Error::Config(format!("mid-range geometry has empty regions: {e}")))?;
        Ok(())
    }

    fn mode_keys(&self) -> Vec<ModeKey> {
        let mut keys: Vec<ModeKey> = Vec::new();
        let mut ns = self.modes.finite_n.clone();
        ns.sort_by(f64::total_cmp);
        ns.dedup();
        keys.extend(ns.into_iter().map(|n| ModeKey::Finite { n }));
        if self.modes.asymptotic {
            keys.push(ModeKey::Asymptotic);
        }
        if self.modes.perfect_pe {
            keys.push(ModeKey::PerfectPe);
        }
        keys
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum ModeKey {
    Finite { n: f64 },
    Asymptotic,
    PerfectPe,
}

impl ModeKey {
    fn label(&self) -> &'static str {
        match self {
            ModeKey::Finite { .. } => "finite",
            ModeKey::Asymptotic => "asymptotic",
            ModeKey::PerfectPe => "perfect_pe",
        }
    }
}

/// One output row: the best candidate found for one (distance, mode, N)
/// cell and its full diagnostic record.
#[derive(Clone, Debug, Serialize)]
pub struct SweepRow {
    #[serde(rename = "L_km")]
    pub distance_km: f64,
    pub mode: String,
    #[serde(rename = "N")]
    pub n: f64,
    #[serde(rename = "K")]
    pub rate: f64,
    #[serde(rename = "l")]
    pub key_length: f64,
    #[serde(rename = "y1_L")]
    pub y1_l: f64,
    #[serde(rename = "y1_U")]
    pub y1_u: f64,
    #[serde(rename = "e1_ideal_U")]
    pub e1_ideal_u: f64,
    #[serde(rename = "e_ph_U")]
    pub e_ph_u: f64,
    pub eps_sec: f64,
    #[serde(rename = "abort_reason")]
    pub abort: String,
    pub w: f64,
    pub q_test: f64,
    pub nu_t: f64,
    pub dtheta_key: f64,
    pub dtheta_test: f64,
    pub dphi_test: f64,
}

/// Outcome of one candidate in one mode cell.
#[derive(Clone, Debug)]
struct CellResult {
    rate: f64,
    key_length: f64,
    y1_l: f64,
    y1_u: f64,
    e1_ideal_u: f64,
    e_ph_u: f64,
    eps_sec: f64,
    abort: String,
}

fn abort_code(reason: &AbortReason) -> String {
    match reason {
        AbortReason::Infeasible(_) => "lp_infeasible".into(),
        AbortReason::NoTestStatistics => "no_test_statistics".into(),
        AbortReason::NoKeyStatistics => "no_key_statistics".into(),
        AbortReason::NoKeyData => "no_key_data".into(),
    }
}

fn numerical_cell(message: &str) -> CellResult {
    CellResult {
        rate: 0.0,
        key_length: 0.0,
        y1_l: 0.0,
        y1_u: 0.0,
        e1_ideal_u: 0.0,
        e_ph_u: 0.5,
        eps_sec: 0.0,
        abort: format!("numerical: {}", message.replace([',', '\n'], "; ")),
    }
}

fn scale_counts(data: &ObservedData, n: f64) -> ObservedData {
    ObservedData {
        m_key_settings: data.m_key_settings.iter().map(|v| v * n).collect(),
        m_test_settings: data.m_test_settings.iter().map(|v| v * n).collect(),
        m_test_errors: data.m_test_errors.iter().map(|v| v * n).collect(),
        m_key: data.m_key * n,
        m_key_errors: data.m_key_errors * n,
    }
}

/// Evaluate one candidate in all mode cells at one distance.
fn evaluate_candidate(
    candidate: &CandidateParams,
    ch: &ChannelParams,
    config: &SweepConfig,
    mode_keys: &[ModeKey],
    perfect_targets: (f64, f64),
) -> Vec<CellResult> {
    let prepared = (|| -> Result<(SourceCharacterization, ObservedData)> {
        let src = candidate.source_config()?;
        let sc = SourceCharacterization::new(&src, config.protocol.n_cut, config.tol)?;
        // Expected counts are linear in the number of pulses; compute the
        // per-pulse values once and rescale per block size.
        let unit = channel::expected_counts(&src, ch, 1.0, candidate.q_key(), config.tol)?;
        Ok((sc, unit))
    })();
    let (sc, unit) = match prepared {
        Ok(v) => v,
        Err(e) => return vec![numerical_cell(&e.to_string()); mode_keys.len()],
    };

    let cells: Vec<CellResult> = mode_keys
        .iter()
        .map(|key| {
            let (n, mode) = match key {
                ModeKey::Finite { n } => (*n, Mode::Finite),
                ModeKey::Asymptotic => (config.modes.reference_n, Mode::Asymptotic),
                ModeKey::PerfectPe => (
                    config.modes.reference_n,
                    Mode::PerfectPe { y1: perfect_targets.0, e1: perfect_targets.1 },
                ),
            };
            let pp = ProtocolParams {
                n,
                q_key: candidate.q_key(),
                eps: config.protocol.eps,
                eps_cor: config.protocol.eps_cor,
                eps_pa: config.protocol.eps_pa,
                delta: config.protocol.delta,
                n_cut: config.protocol.n_cut,
                f_ec: config.channel.f_ec,
                lambda_ec: None,
            };
            match evaluate(&sc, &pp, &scale_counts(&unit, n), mode) {
                Ok(report) => CellResult {
                    rate: report.rate,
                    key_length: report.l,
                    y1_l: report.decoy.map_or(0.0, |d| d.y1_l),
                    y1_u: report.decoy.map_or(0.0, |d| d.y1_u),
                    e1_ideal_u: report.decoy.map_or(0.0, |d| d.e1_ideal_u),
                    e_ph_u: report.e_ph_u,
                    eps_sec: report.eps_sec,
                    abort: report.abort.as_ref().map(abort_code).unwrap_or_default(),
                },
                Err(e) => numerical_cell(&e.to_string()),
            }
        })
        .collect();

    // A candidate whose estimation chain breaks down in any cell (solver
    // failure or an infeasible program) is discarded from every cell.
    // Keeping its surviving cells would let it win one mode's argmax while
    // scoring zero in another, breaking the per-candidate rate ordering
    // across modes and block sizes that the sweep guarantees.
    if let Some(bad) = cells
        .iter()
        .find(|c| c.abort == "lp_infeasible" || c.abort.starts_with("numerical"))
    {
        let abort = bad.abort.clone();
        return cells
            .iter()
            .map(|_| CellResult { abort: abort.clone(), ..numerical_cell("") })
            .collect();
    }
    cells
}

/// Run the sweep and return all rows, sorted by distance, mode, and block
/// size. Distances are processed in increasing order so each one warm
/// starts from the previous bests.
pub fn run_sweep(config: &SweepConfig) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let mode_keys = config.mode_keys();
    let mut distances = config.distances.clone();
    distances.sort_by(f64::total_cmp);
    distances.dedup();

    let mut warm: Vec<CandidateParams> = Vec::new();
    let mut rows: Vec<SweepRow> = Vec::new();
    for (di, &distance) in distances.iter().enumerate() {
        let ch = ChannelParams {
            eta_bob: config.channel.eta_bob,
            alpha_att: config.channel.alpha_att,
            distance_km: distance,
            p_d: config.channel.p_d,
            f_ec: config.channel.f_ec,
        };
        let perfect_targets =
            channel::perfect_pe_targets(channel::channel_eta(&ch), config.channel.p_d);

        // Shared candidate list: warm starts, free samples, and (when the
        // asymptotic curve is on) samples following its pinned-geometry
        // convention.
        let mut space = config.search;
        space.seed = config
            .search
            .seed
            .wrapping_add((di as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
        let mut candidates = warm.clone();
        candidates.extend(space.samples());
        if config.modes.asymptotic {
            let mut pinned = space;
            pinned.seed = space.seed.wrapping_add(1);
            pinned.w = (5e-3, 5e-3);
            pinned.dtheta_test = (0.1, 0.1);
            pinned.dphi_test = (0.1, 0.1);
            candidates.extend(pinned.samples());
        }

        let evals: Vec<Vec<CellResult>> = candidates
            .par_iter()
            .map(|c| evaluate_candidate(c, &ch, config, &mode_keys, perfect_targets))
            .collect();

        warm.clear();
        for (mi, key) in mode_keys.iter().enumerate() {
            // First maximizer in enumeration order; if everything aborted
            // the first candidate's reason is reported.
            let mut best = 0usize;
            for (ci, cell) in evals.iter().enumerate() {
                if cell[mi].rate > evals[best][mi].rate {
                    best = ci;
                }
            }
            let cell = &evals[best][mi];
            let c = &candidates[best];
            if !warm.contains(c) {
                warm.push(*c);
            }
            let n = match key {
                ModeKey::Finite { n } => *n,
                _ => config.modes.reference_n,
            };
            rows.push(SweepRow {
                distance_km: distance,
                mode: key.label().into(),
                n,
                rate: cell.rate,
                key_length: cell.key_length,
                y1_l: cell.y1_l,
                y1_u: cell.y1_u,
                e1_ideal_u: cell.e1_ideal_u,
                e_ph_u: cell.e_ph_u,
                eps_sec: cell.eps_sec,
                abort: cell.abort.clone(),
                w: c.w,
                q_test: c.q_test,
                nu_t: c.nu_t,
                dtheta_key: c.dtheta_key,
                dtheta_test: c.dtheta_test,
                dphi_test: c.dphi_test,
            });
        }
    }
    rows.sort_by(|a, b| {
        a.distance_km
            .total_cmp(&b.distance_km)
            .then_with(|| mode_rank(&a.mode).cmp(&mode_rank(&b.mode)))
            .then_with(|| a.n.total_cmp(&b.n))
    });
    Ok(rows)
}

fn mode_rank(label: &str) -> u8 {
    match label {
        "finite" => 0,
        "asymptotic" => 1,
        _ => 2,
    }
}

pub const CSV_HEADER: &str = "L_km,mode,N,K,l,y1_L,y1_U,e1_ideal_U,e_ph_U,eps_sec,abort_reason,w,q_test,nu_t,dtheta_key,dtheta_test,dphi_test";

pub fn render_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.distance_km,
            r.mode,
            r.n,
            r.rate,
            r.key_length,
            r.y1_l,
            r.y1_u,
            r.e1_ideal_u,
            r.e_ph_u,
            r.eps_sec,
            r.abort,
            r.w,
            r.q_test,
            r.nu_t,
            r.dtheta_key,
            r.dtheta_test,
            r.dphi_test
        ));
    }
    out
}

pub fn render_json(rows: &[SweepRow]) -> Result<String> {
    serde_json::to_string_pretty(rows).map_err(|e| Error::Numerical(e.to_string()))
}
