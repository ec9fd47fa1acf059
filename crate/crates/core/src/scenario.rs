//! Experiment scenarios: system dimensions, pilot configuration, user
//! placement and reproducible seeding.
//!
//! Randomness is split across ChaCha streams of one seed so that every
//! consumer is independent: stream 0 places the instantaneous-CSI users,
//! stream 1 draws the scatterer angles behind each covariance matrix, and
//! stream `2 + t` drives Monte Carlo trial `t`. Results are therefore
//! bit-identical for a fixed seed regardless of thread count.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{PilotConfig, UserGeometry};
use crate::channel::rank_bound;
use crate::error::{Error, Result};

/// Default antenna spacing `d / lambda`.
pub const DEFAULT_SPACING: f64 = 0.5;

const STREAM_PLACEMENT: u64 = 0;
const STREAM_COVARIANCE: u64 = 1;
const STREAM_TRIAL_BASE: u64 = 2;

/// RNG for user placement (stream 0 of the scenario seed).
pub fn placement_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_PLACEMENT);
    rng
}

/// RNG for covariance synthesis (stream 1).
pub fn covariance_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_COVARIANCE);
    rng
}

/// RNG for one Monte Carlo trial (stream `2 + trial`).
pub fn trial_rng(seed: u64, trial: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(STREAM_TRIAL_BASE + trial as u64);
    rng
}

/// `10^(db/10)`.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Flat scenario file contents. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub t_pilot: u32,
    pub p_u_db: f64,
    pub p_d_db: f64,
    pub rho_db: f64,
    pub seed: u64,
    pub trials: usize,
    pub l_paths: usize,
    pub angle_spread_deg: f64,
    pub varsigma_deg: f64,
}

impl ScenarioSpec {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Validation(e.to_string()))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("flat struct always serializes")
    }

    /// Converts powers to linear scale and places both user populations.
    pub fn build(&self) -> Result<Scenario> {
        let pilot = PilotConfig::new(self.t_pilot, db_to_linear(self.p_u_db))?;
        let spread = self.angle_spread_deg.to_radians();
        let mut rng = placement_rng(self.seed);
        let type_c_geometries =
            place_type_c_users(self.k, spread, self.l_paths, DEFAULT_SPACING, &mut rng);
        let type_s_geometries = place_type_s_users(
            self.n,
            self.varsigma_deg.to_radians(),
            spread,
            self.l_paths,
            DEFAULT_SPACING,
        );
        Ok(Scenario {
            m: self.m,
            k: self.k,
            n: self.n,
            pilot,
            p_d: db_to_linear(self.p_d_db),
            rho: db_to_linear(self.rho_db),
            type_c_geometries,
            type_s_geometries,
            seed: self.seed,
            mc_trials: self.trials,
        })
    }
}

/// A fully specified experiment. Immutable once built; shareable across
/// threads.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub m: usize,
    pub k: usize,
    pub n: usize,
    pub pilot: PilotConfig,
    pub p_d: f64,
    pub rho: f64,
    pub type_c_geometries: Vec<UserGeometry>,
    pub type_s_geometries: Vec<UserGeometry>,
    pub seed: u64,
    pub mc_trials: usize,
}

/// Statistical users sit on the deterministic schedule
/// `varsigma + 2 pi i / n (mod 2 pi)`, sharing spread and path count.
pub fn place_type_s_users(
    n: usize,
    varsigma: f64,
    angle_spread: f64,
    l_paths: usize,
    spacing: f64,
) -> Vec<UserGeometry> {
    (0..n)
        .map(|i| UserGeometry {
            mean_aoa: (varsigma + 2.0 * PI * i as f64 / n as f64).rem_euclid(2.0 * PI),
            angle_spread,
            num_paths: l_paths,
            antenna_spacing_ratio: spacing,
        })
        .collect()
}

/// Instantaneous-CSI users get mean AOAs drawn uniformly over `[0, pi]`.
pub fn place_type_c_users(
    k: usize,
    angle_spread: f64,
    l_paths: usize,
    spacing: f64,
    rng: &mut impl Rng,
) -> Vec<UserGeometry> {
    (0..k)
        .map(|_| UserGeometry {
            mean_aoa: rng.random_range(0.0..PI),
            angle_spread,
            num_paths: l_paths,
            antenna_spacing_ratio: spacing,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Severity {
    Warning,
    Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostic {
    pub severity: Severity,
    pub message: String,
}

impl Diagnostic {
    fn error(message: impl Into<String>) -> Self {
        Self { severity: Severity::Error, message: message.into() }
    }

    fn warning(message: impl Into<String>) -> Self {
        Self { severity: Severity::Warning, message: message.into() }
    }
}

/// Structured scenario checks; never panics. Errors make the scenario
/// unrunnable, warnings flag assumptions that are formally met but weak.
pub fn validate(s: &Scenario) -> Vec<Diagnostic> {
    let mut out = Vec::new();
    if s.m == 0 {
        out.push(Diagnostic::error("antenna count m must be at least 1"));
    }
    let users = s.k + s.n;
    if s.m < users {
        out.push(Diagnostic::error(format!(
            "m = {} cannot serve k + n = {users} users",
            s.m
        )));
    } else if users > 0 && s.m < 4 * users {
        out.push(Diagnostic::warning(format!(
            "m = {} is below 4x the user count {users}; channel-hardening assumptions are weak",
            s.m
        )));
    }
    if s.p_d <= 0.0 || s.rho <= 0.0 {
        out.push(Diagnostic::error("transmit powers must be positive"));
    }
    if s.pilot.t_pilot() >= 6 {
        out.push(Diagnostic::error(format!(
            "t_pilot = {} leaves no data symbols (efficiency factor (6 - t_pilot)/7 is non-positive)",
            s.pilot.t_pilot()
        )));
    }
    if s.k as u32 > s.pilot.tau() {
        out.push(Diagnostic::error(format!(
            "pilot length tau = {} cannot carry {} orthogonal pilots",
            s.pilot.tau(),
            s.k
        )));
    }
    if s.mc_trials == 0 {
        out.push(Diagnostic::error("trial count must be positive"));
    }
    for (idx, g) in s.type_c_geometries.iter().chain(s.type_s_geometries.iter()).enumerate() {
        if let Err(e) = g.validate() {
            out.push(Diagnostic::error(format!("user geometry {idx}: {e}")));
        }
    }
    // dimensional feasibility of null-space precoding: estimate the summed
    // statistical-covariance rank from the asymptotic AOA-interval bound
    let mut expected_r1 = 0usize;
    for g in &s.type_s_geometries {
        let lo = g.mean_aoa - g.angle_spread / 2.0;
        let hi = g.mean_aoa + g.angle_spread / 2.0;
        // cos is monotone only on [0, pi]; bound the rank by the larger of
        // the interval endpoints' spans after folding
        if let Ok(b) = rank_bound(lo.min(hi), lo.max(hi), g.antenna_spacing_ratio, s.m) {
            expected_r1 += (b.abs().ceil() as usize).min(s.m).max(1);
        }
    }
    if s.n > 0 && s.m.saturating_sub(expected_r1) < s.k {
        out.push(Diagnostic::warning(format!(
            "expected statistical-subspace rank ~{expected_r1} leaves fewer than k = {} free dimensions; null-space precoding may be infeasible",
            s.k
        )));
    }
    if s.n > 2 {
        out.push(Diagnostic::warning(
            "more than 2 statistical users on the circular schedule: a linear array cannot \
             distinguish theta from 2 pi - theta, so some users alias pairwise"
                .to_string(),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn spec() -> ScenarioSpec {
        ScenarioSpec {
            m: 64,
            k: 5,
            n: 1,
            t_pilot: 1,
            p_u_db: 10.0,
            p_d_db: 10.0,
            rho_db: 10.0,
            seed: 7,
            trials: 100,
            l_paths: 20,
            angle_spread_deg: 10.0,
            varsigma_deg: 95.0,
        }
    }

    #[test]
    fn toml_round_trip() {
        let s = spec();
        let text = s.to_toml_string();
        let back = ScenarioSpec::from_toml_str(&text).unwrap();
        assert_eq!(s, back);
        // and the emitted canonical form is stable
        assert_eq!(text, back.to_toml_string());
    }

    #[test]
    fn unknown_keys_rejected() {
        let mut text = spec().to_toml_string();
        text.push_str("\nbogus_key = 3\n");
        let err = ScenarioSpec::from_toml_str(&text).unwrap_err();
        assert!(err.to_string().contains("bogus_key"));
    }

    #[test]
    fn db_conversion() {
        assert_relative_eq!(db_to_linear(0.0), 1.0);
        assert_relative_eq!(db_to_linear(10.0), 10.0);
        assert_relative_eq!(db_to_linear(-10.0), 0.1);
        assert_relative_eq!(db_to_linear(3.0), 1.9952623149688795, epsilon = 1e-12);
    }

    #[test]
    fn type_s_schedule() {
        let g = place_type_s_users(5, 0.0, 0.1, 20, 0.5);
        for (i, u) in g.iter().enumerate() {
            assert_relative_eq!(u.mean_aoa, 2.0 * PI * i as f64 / 5.0, epsilon = 1e-12);
        }
        let single = place_type_s_users(1, 1.3, 0.1, 20, 0.5);
        assert_relative_eq!(single[0].mean_aoa, 1.3);
        // adjacent separation exactly 2 pi / n
        for w in g.windows(2) {
            assert_relative_eq!(w[1].mean_aoa - w[0].mean_aoa, 2.0 * PI / 5.0, epsilon = 1e-12);
        }
        // wraps mod 2 pi
        let wrapped = place_type_s_users(2, 5.0, 0.1, 20, 0.5);
        assert!(wrapped.iter().all(|u| (0.0..2.0 * PI).contains(&u.mean_aoa)));
    }

    #[test]
    fn type_c_placement_deterministic_and_uniform() {
        let a = place_type_c_users(4, 0.1, 20, 0.5, &mut placement_rng(3));
        let b = place_type_c_users(4, 0.1, 20, 0.5, &mut placement_rng(3));
        assert_eq!(a, b);
        assert!(place_type_c_users(0, 0.1, 20, 0.5, &mut placement_rng(3)).is_empty());

        // empirical CDF of 10^4 draws vs uniform on [0, pi]
        let n = 10_000;
        let mut draws: Vec<f64> = place_type_c_users(n, 0.1, 20, 0.5, &mut placement_rng(5))
            .into_iter()
            .map(|g| g.mean_aoa)
            .collect();
        draws.sort_by(f64::total_cmp);
        let mut max_dev = 0.0f64;
        for (i, x) in draws.iter().enumerate() {
            let emp = (i + 1) as f64 / n as f64;
            max_dev = max_dev.max((emp - x / PI).abs());
        }
        assert!(max_dev < 0.02, "KS deviation {max_dev}");
        assert!(draws.iter().all(|&x| (0.0..=PI).contains(&x)));
    }

    #[test]
    fn build_converts_db() {
        let s = spec().build().unwrap();
        assert_relative_eq!(s.p_d, 10.0);
        assert_relative_eq!(s.rho, 10.0);
        assert_relative_eq!(s.pilot.p_u(), 10.0);
        assert_eq!(s.pilot.tau(), 14);
        assert_eq!(s.type_c_geometries.len(), 5);
        assert_eq!(s.type_s_geometries.len(), 1);
    }

    #[test]
    fn validate_default_is_clean() {
        let s = spec().build().unwrap();
        let diags = validate(&s);
        assert!(diags.iter().all(|d| d.severity != Severity::Error), "{diags:?}");
    }

    #[test]
    fn validate_flags_problems() {
        let mut raw = spec();
        raw.t_pilot = 6;
        let s = raw.build().unwrap();
        assert!(validate(&s)
            .iter()
            .any(|d| d.severity == Severity::Error && d.message.contains("t_pilot")));

        let mut raw = spec();
        raw.m = 6; // equals k + n
        let s = raw.build().unwrap();
        let diags = validate(&s);
        assert!(diags.iter().all(|d| d.severity != Severity::Error));
        assert!(diags.iter().any(|d| d.severity == Severity::Warning));

        let mut raw = spec();
        raw.m = 3; // below k + n
        let s = raw.build().unwrap();
        assert!(validate(&s).iter().any(|d| d.severity == Severity::Error));

        let mut raw = spec();
        raw.n = 5;
        let s = raw.build().unwrap();
        assert!(validate(&s)
            .iter()
            .any(|d| d.severity == Severity::Warning && d.message.contains("alias")));
    }

    #[test]
    fn rng_streams_are_independent() {
        let a: u64 = placement_rng(9).random();
        let b: u64 = covariance_rng(9).random();
        let c: u64 = trial_rng(9, 0).random();
        let d: u64 = trial_rng(9, 1).random();
        assert_ne!(a, b);
        assert_ne!(c, d);
        assert_ne!(b, c);
        // and reproducible
        assert_eq!(a, placement_rng(9).random::<u64>());
        assert_eq!(c, trial_rng(9, 0).random::<u64>());
    }
}
