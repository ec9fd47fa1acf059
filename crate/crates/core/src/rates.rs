//! Per-user SINR and ergodic-rate evaluation.
//!
//! Rates come from three sources: Monte Carlo simulation over fresh channel
//! and pilot-noise draws, the closed-form SBM approximations, and their i.i.d.
//! Rayleigh specializations. Sum rate and spectral efficiency aggregate the
//! per-user values.

use rand_chacha::ChaCha8Rng;

use crate::channel::{ChannelSampler, MmseEstimator};
use crate::error::{Error, Result};
use crate::matrix_core::{
    psd_sqrt, quad_form_expectation, CMat, CVec, HermitianMatrix, QuadFormConvention, RANK_TOL,
};
use crate::precoding::{Method, PowerParams, PrecoderSet, PrecoderWorkspace};
use crate::scenario::{covariance_rng, trial_rng, Scenario};

/// Where a rate figure comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateSource {
    MonteCarlo,
    ClosedForm,
    IidClosedForm,
}

impl std::fmt::Display for RateSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RateSource::MonteCarlo => "mc",
            RateSource::ClosedForm => "closed_form",
            RateSource::IidClosedForm => "iid_closed_form",
        })
    }
}

/// Aggregated rate results of one method/source pair.
#[derive(Debug, Clone)]
pub struct RateReport {
    pub method: Method,
    pub source: RateSource,
    /// Per-user rates, bits/s/Hz.
    pub per_user_c: Vec<f64>,
    pub per_user_s: Vec<f64>,
    pub avg_c: f64,
    pub avg_s: f64,
    pub sum_rate: f64,
    pub spectral_efficiency: f64,
    /// Monte Carlo standard errors of the class means; absent for closed forms.
    pub std_err_c: Option<f64>,
    pub std_err_s: Option<f64>,
}

/// Instantaneous SINR of instantaneous-CSI user `k` for a fixed channel
/// realization, with unit noise power.
pub fn sinr_type_c(g: &CVec, pre: &PrecoderSet, k: usize) -> f64 {
    let mut signal = 0.0;
    let mut interference = 0.0;
    for (i, w) in pre.w_c.column_iter().enumerate() {
        let p = g.dotc(&w).norm_sqr();
        if i == k {
            signal = p;
        } else {
            interference += p;
        }
    }
    for w in pre.w_s.column_iter() {
        interference += g.dotc(&w).norm_sqr();
    }
    signal / (interference + 1.0)
}

/// Instantaneous SINR of statistical user `n`; mirror of [`sinr_type_c`].
pub fn sinr_type_s(g: &CVec, pre: &PrecoderSet, n: usize) -> f64 {
    let mut signal = 0.0;
    let mut interference = 0.0;
    for (i, w) in pre.w_s.column_iter().enumerate() {
        let p = g.dotc(&w).norm_sqr();
        if i == n {
            signal = p;
        } else {
            interference += p;
        }
    }
    for w in pre.w_c.column_iter() {
        interference += g.dotc(&w).norm_sqr();
    }
    signal / (interference + 1.0)
}

/// A scenario with all covariance-level quantities materialized: per-user
/// covariances, channel samplers, MMSE estimators and the precoder workspace.
#[derive(Debug)]
pub struct ScenarioModel {
    scenario: Scenario,
    phi_c: Vec<HermitianMatrix>,
    phi_s: Vec<HermitianMatrix>,
    samplers_c: Vec<ChannelSampler>,
    samplers_s: Vec<ChannelSampler>,
    estimators_c: Vec<MmseEstimator>,
    estimators_s: Vec<MmseEstimator>,
    workspace: PrecoderWorkspace,
}

impl ScenarioModel {
    /// Synthesizes covariances from the scenario geometry (covariance RNG
    /// stream, so the result is a pure function of the seed).
    pub fn new(scenario: &Scenario) -> Result<Self> {
        let mut rng = covariance_rng(scenario.seed);
        let mut phi_c = Vec::with_capacity(scenario.k);
        for g in &scenario.type_c_geometries {
            phi_c.push(crate::channel::synth_covariance(g, scenario.m, &mut rng)?);
        }
        let mut phi_s = Vec::with_capacity(scenario.n);
        for g in &scenario.type_s_geometries {
            phi_s.push(crate::channel::synth_covariance(g, scenario.m, &mut rng)?);
        }
        Self::with_covariances(scenario, phi_c, phi_s)
    }

    /// Builds the model from explicit covariances.
    pub fn with_covariances(
        scenario: &Scenario,
        phi_c: Vec<HermitianMatrix>,
        phi_s: Vec<HermitianMatrix>,
    ) -> Result<Self> {
        if phi_c.len() != scenario.k || phi_s.len() != scenario.n {
            return Err(Error::DimensionMismatch(format!(
                "expected {} + {} covariances, got {} + {}",
                scenario.k,
                scenario.n,
                phi_c.len(),
                phi_s.len()
            )));
        }
        let samplers_c = phi_c.iter().map(ChannelSampler::new).collect::<Result<Vec<_>>>()?;
        let samplers_s = phi_s.iter().map(ChannelSampler::new).collect::<Result<Vec<_>>>()?;
        let estimators_c = phi_c
            .iter()
            .map(|p| MmseEstimator::new(p, &scenario.pilot))
            .collect::<Result<Vec<_>>>()?;
        let estimators_s = phi_s
            .iter()
            .map(|p| MmseEstimator::new(p, &scenario.pilot))
            .collect::<Result<Vec<_>>>()?;
        let workspace = PrecoderWorkspace::new(&phi_s, scenario.m, RANK_TOL)?;
        Ok(Self {
            scenario: scenario.clone(),
            phi_c,
            phi_s,
            samplers_c,
            samplers_s,
            estimators_c,
            estimators_s,
            workspace,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn phi_c(&self) -> &[HermitianMatrix] {
        &self.phi_c
    }

    pub fn phi_s(&self) -> &[HermitianMatrix] {
        &self.phi_s
    }

    pub fn workspace(&self) -> &PrecoderWorkspace {
        &self.workspace
    }

    /// Estimate covariances `Phi_hat` of the instantaneous-CSI users.
    pub fn phi_hat_c(&self) -> Vec<HermitianMatrix> {
        self.estimators_c.iter().map(|e| e.phi_hat().clone()).collect()
    }

    /// Estimation-error covariances `Delta` of the instantaneous-CSI users.
    pub fn delta_c(&self) -> Vec<HermitianMatrix> {
        self.estimators_c.iter().map(|e| e.delta().clone()).collect()
    }

    /// One Monte Carlo trial: fresh channels and pilot noise, fresh precoders,
    /// per-user instantaneous rates.
    fn trial(&self, method: Method, power: PowerParams, t: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let mut rng: ChaCha8Rng = trial_rng(self.scenario.seed, t);
        let g_c: Vec<CVec> = self.samplers_c.iter().map(|s| s.draw(&mut rng)).collect();
        let g_s: Vec<CVec> = self.samplers_s.iter().map(|s| s.draw(&mut rng)).collect();
        let g_hat_c = estimate_all(&self.estimators_c, &g_c, self.scenario.m, &mut rng);
        let g_hat_s = if method.is_conventional() && self.scenario.n > 0 {
            Some(estimate_all(&self.estimators_s, &g_s, self.scenario.m, &mut rng))
        } else {
            None
        };
        let pre = self.workspace.precoders(method, &g_hat_c, g_hat_s.as_ref(), power)?;
        let rates_c = g_c
            .iter()
            .enumerate()
            .map(|(k, g)| (1.0 + sinr_type_c(g, &pre, k)).log2())
            .collect();
        let rates_s = g_s
            .iter()
            .enumerate()
            .map(|(n, g)| (1.0 + sinr_type_s(g, &pre, n)).log2())
            .collect();
        Ok((rates_c, rates_s))
    }
}

fn estimate_all(
    estimators: &[MmseEstimator],
    g_true: &[CVec],
    m: usize,
    rng: &mut ChaCha8Rng,
) -> CMat {
    let cols: Vec<CVec> = estimators
        .iter()
        .zip(g_true)
        .map(|(e, g)| e.estimate_vec(g, rng))
        .collect();
    if cols.is_empty() {
        CMat::zeros(m, 0)
    } else {
        CMat::from_columns(&cols)
    }
}

fn aggregate_trials(
    model: &ScenarioModel,
    method: Method,
    results: Vec<(Vec<f64>, Vec<f64>)>,
) -> Result<RateReport> {
    let trials = results.len();
    let k = model.scenario.k;
    let n = model.scenario.n;
    let mut per_user_c = vec![0.0; k];
    let mut per_user_s = vec![0.0; n];
    let mut mean_c_sum = 0.0;
    let mut mean_c_sq = 0.0;
    let mut mean_s_sum = 0.0;
    let mut mean_s_sq = 0.0;
    for (rc, rs) in &results {
        for (acc, r) in per_user_c.iter_mut().zip(rc) {
            *acc += r;
        }
        for (acc, r) in per_user_s.iter_mut().zip(rs) {
            *acc += r;
        }
        if k > 0 {
            let m = rc.iter().sum::<f64>() / k as f64;
            mean_c_sum += m;
            mean_c_sq += m * m;
        }
        if n > 0 {
            let m = rs.iter().sum::<f64>() / n as f64;
            mean_s_sum += m;
            mean_s_sq += m * m;
        }
    }
    let t = trials as f64;
    for r in per_user_c.iter_mut().chain(per_user_s.iter_mut()) {
        *r /= t;
    }
    let std_err = |sum: f64, sq: f64, present: bool| {
        if !present || trials < 2 {
            return None;
        }
        let mean = sum / t;
        let var = (sq / t - mean * mean).max(0.0) * t / (t - 1.0);
        Some((var / t).sqrt())
    };
    build_report(
        model,
        method,
        RateSource::MonteCarlo,
        per_user_c,
        per_user_s,
        std_err(mean_c_sum, mean_c_sq, k > 0),
        std_err(mean_s_sum, mean_s_sq, n > 0),
    )
}

fn build_report(
    model: &ScenarioModel,
    method: Method,
    source: RateSource,
    per_user_c: Vec<f64>,
    per_user_s: Vec<f64>,
    std_err_c: Option<f64>,
    std_err_s: Option<f64>,
) -> Result<RateReport> {
    let avg = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };
    let sum = sum_rate(&per_user_c, &per_user_s);
    let mode = if method.is_conventional() {
        EfficiencyMode::Conventional
    } else {
        EfficiencyMode::Proposed
    };
    let t_eff = effective_t_pilot(
        model.scenario.pilot.t_pilot(),
        model.scenario.k,
        model.scenario.n,
        mode,
    );
    let se = spectral_efficiency(sum, t_eff)?;
    Ok(RateReport {
        method,
        source,
        avg_c: avg(&per_user_c),
        avg_s: avg(&per_user_s),
        per_user_c,
        per_user_s,
        sum_rate: sum,
        spectral_efficiency: se,
        std_err_c,
        std_err_s,
    })
}

/// Monte Carlo ergodic rates, parallel across trials when the `parallel`
/// feature is enabled. Trials use per-index RNG streams, so the output is
/// independent of the degree of parallelism.
pub fn ergodic_rates_mc(model: &ScenarioModel, method: Method, trials: usize) -> Result<RateReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trial count must be positive".into()));
    }
    let power = PowerParams::new(model.scenario.p_d, model.scenario.rho)?;
    #[cfg(feature = "parallel")]
    let results: Vec<(Vec<f64>, Vec<f64>)> = {
        use rayon::prelude::*;
        (0..trials)
            .into_par_iter()
            .map(|t| model.trial(method, power, t))
            .collect::<Result<Vec<_>>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<(Vec<f64>, Vec<f64>)> = (0..trials)
        .map(|t| model.trial(method, power, t))
        .collect::<Result<Vec<_>>>()?;
    aggregate_trials(model, method, results)
}

/// Single-threaded Monte Carlo evaluation, available regardless of features;
/// produces the same output as [`ergodic_rates_mc`].
pub fn ergodic_rates_mc_sequential(
    model: &ScenarioModel,
    method: Method,
    trials: usize,
) -> Result<RateReport> {
    if trials == 0 {
        return Err(Error::InvalidArgument("trial count must be positive".into()));
    }
    let power = PowerParams::new(model.scenario.p_d, model.scenario.rho)?;
    let results = (0..trials)
        .map(|t| model.trial(method, power, t))
        .collect::<Result<Vec<_>>>()?;
    aggregate_trials(model, method, results)
}

fn tr_prod(a: &CMat, b: &CMat) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.nrows() {
        for j in 0..a.ncols() {
            acc += (a[(i, j)] * b[(j, i)]).re;
        }
    }
    acc
}

/// Closed-form approximate rate of instantaneous-CSI user `k` under SBM
/// precoding: estimated-channel beamforming towards user `k`, top-eigenvector
/// beams towards the statistical users.
pub fn closed_form_rate_type_c(
    k: usize,
    phi_c: &[HermitianMatrix],
    phi_hat: &[HermitianMatrix],
    delta: &[HermitianMatrix],
    phi_s: &[HermitianMatrix],
    p_d: f64,
    convention: QuadFormConvention,
) -> Result<f64> {
    if phi_c.len() != phi_hat.len() || phi_c.len() != delta.len() {
        return Err(Error::DimensionMismatch(
            "covariance, estimate and error lists must have equal length".into(),
        ));
    }
    if k >= phi_c.len() {
        return Err(Error::InvalidArgument(format!("user index {k} out of range")));
    }
    if p_d <= 0.0 {
        return Err(Error::InvalidArgument("p_d must be positive".into()));
    }
    let th_k = &phi_hat[k];
    let t_k = th_k.trace();
    if t_k <= 0.0 {
        return Err(Error::DegenerateUser { index: k, reason: "zero estimate covariance".into() });
    }
    let sq_k = psd_sqrt(th_k)?;

    // signal power: second-order expansion of E{|g^H ghat|^2 / ||ghat||^2}
    let thd = tr_prod(th_k.as_matrix(), delta[k].as_matrix());
    let inner = sq_k.as_matrix() * delta[k].as_matrix() * sq_k.as_matrix();
    let f_mixed = quad_form_expectation(&inner, th_k.as_matrix(), convention)?.re;
    let f_self = quad_form_expectation(th_k.as_matrix(), th_k.as_matrix(), convention)?.re;
    let signal = t_k + thd / t_k - f_mixed / (t_k * t_k) + f_self * thd / (t_k * t_k * t_k);

    // interference from the other instantaneous-CSI users
    let mut i_c1 = 0.0;
    for (i, th_i) in phi_hat.iter().enumerate() {
        if i == k {
            continue;
        }
        let t_i = th_i.trace();
        if t_i <= 0.0 {
            return Err(Error::DegenerateUser { index: i, reason: "zero estimate covariance".into() });
        }
        let sq_i = psd_sqrt(th_i)?;
        let cross = sq_k.as_matrix() * phi_c[k].as_matrix() * sq_i.as_matrix();
        let f_cross = quad_form_expectation(&cross, th_i.as_matrix(), convention)?.re;
        let f_i = quad_form_expectation(th_i.as_matrix(), th_i.as_matrix(), convention)?.re;
        let t_phik = tr_prod(th_i.as_matrix(), phi_c[k].as_matrix());
        i_c1 += t_phik / t_i - f_cross / (t_i * t_i) + f_i * t_phik / (t_i * t_i * t_i);
    }

    // interference from the statistical beams
    let mut i_c2 = 0.0;
    for phi in phi_s {
        let u = phi.eig().u_max();
        i_c2 += (u.adjoint() * phi_c[k].as_matrix() * &u)[(0, 0)].re;
    }

    Ok((1.0 + signal / (i_c1 + i_c2 + 1.0 / p_d)).log2())
}

/// Closed-form approximate rate of statistical user `n` under SBM precoding.
pub fn closed_form_rate_type_s(
    n: usize,
    phi_s: &[HermitianMatrix],
    phi_hat: &[HermitianMatrix],
    p_d: f64,
    convention: QuadFormConvention,
) -> Result<f64> {
    if n >= phi_s.len() {
        return Err(Error::InvalidArgument(format!("user index {n} out of range")));
    }
    if p_d <= 0.0 {
        return Err(Error::InvalidArgument("p_d must be positive".into()));
    }
    let phi_n = &phi_s[n];
    let signal = phi_n.eig().lambda_max();

    let mut i_s1 = 0.0;
    for (j, phi_j) in phi_s.iter().enumerate() {
        if j == n {
            continue;
        }
        let u = phi_j.eig().u_max();
        i_s1 += (u.adjoint() * phi_n.as_matrix() * &u)[(0, 0)].re;
    }

    let mut i_s2 = 0.0;
    for (k, th_k) in phi_hat.iter().enumerate() {
        let t_k = th_k.trace();
        if t_k <= 0.0 {
            return Err(Error::DegenerateUser { index: k, reason: "zero estimate covariance".into() });
        }
        let sq_k = psd_sqrt(th_k)?;
        let inner = sq_k.as_matrix() * phi_n.as_matrix() * sq_k.as_matrix();
        let f_mixed = quad_form_expectation(&inner, th_k.as_matrix(), convention)?.re;
        let f_self = quad_form_expectation(th_k.as_matrix(), th_k.as_matrix(), convention)?.re;
        let t_phin = tr_prod(th_k.as_matrix(), phi_n.as_matrix());
        i_s2 += t_phin / t_k - f_mixed / (t_k * t_k) + f_self * t_phin / (t_k * t_k * t_k);
    }

    Ok((1.0 + signal / (i_s1 + i_s2 + 1.0 / p_d)).log2())
}

/// Full closed-form SBM report for a materialized scenario.
pub fn closed_form_report(model: &ScenarioModel, convention: QuadFormConvention) -> Result<RateReport> {
    let phi_hat = model.phi_hat_c();
    let delta = model.delta_c();
    let per_user_c = (0..model.scenario.k)
        .map(|k| {
            closed_form_rate_type_c(
                k,
                model.phi_c(),
                &phi_hat,
                &delta,
                model.phi_s(),
                model.scenario.p_d,
                convention,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    let per_user_s = (0..model.scenario.n)
        .map(|n| closed_form_rate_type_s(n, model.phi_s(), &phi_hat, model.scenario.p_d, convention))
        .collect::<Result<Vec<_>>>()?;
    build_report(model, Method::Sbm, RateSource::ClosedForm, per_user_c, per_user_s, None, None)
}

/// i.i.d.-Rayleigh specialization of the instantaneous-CSI closed form.
pub fn iid_rate_type_c(m: usize, k: usize, n: usize, tau: u32, p_u: f64, p_d: f64) -> f64 {
    let tau_pu = f64::from(tau) * p_u;
    let num = tau_pu * m as f64 + 1.0;
    let den = (tau_pu + 1.0) * ((k as f64 - 1.0) + n as f64 + 1.0 / p_d);
    (1.0 + num / den).log2()
}

/// i.i.d.-Rayleigh specialization of the statistical-user closed form.
pub fn iid_rate_type_s(k: usize, n: usize, p_d: f64) -> f64 {
    (1.0 + 1.0 / ((n as f64 - 1.0) + k as f64 + 1.0 / p_d)).log2()
}

/// `sum(R_C) + sum(R_S)`.
pub fn sum_rate(rates_c: &[f64], rates_s: &[f64]) -> f64 {
    rates_c.iter().sum::<f64>() + rates_s.iter().sum::<f64>()
}

/// Which user population needs pilots: the proposed schemes train only the
/// instantaneous-CSI users, the conventional baselines train everyone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EfficiencyMode {
    Proposed,
    Conventional,
}

/// Minimal number of pilot OFDM symbols carrying `users` orthogonal pilots
/// (14 subcarrier-symbols each).
pub fn pilot_symbols_needed(users: usize) -> u32 {
    (users.div_ceil(14)).max(1) as u32
}

/// Pilot symbols actually spent by a scheme: the configured `t_pilot` for the
/// proposed methods, enlarged to cover all `k + n` users for the conventional
/// baselines.
pub fn effective_t_pilot(t_pilot: u32, k: usize, n: usize, mode: EfficiencyMode) -> u32 {
    match mode {
        EfficiencyMode::Proposed => t_pilot,
        EfficiencyMode::Conventional => t_pilot.max(pilot_symbols_needed(k + n)),
    }
}

/// `sum_rate * (6 - t_pilot) / 7`: the data fraction of a 7-symbol slot whose
/// first `t_pilot + 1` symbols carry pilots and control.
pub fn spectral_efficiency(sum_rate: f64, t_pilot: u32) -> Result<f64> {
    if t_pilot >= 6 {
        return Err(Error::InvalidArgument(format!(
            "t_pilot = {t_pilot} leaves a non-positive data fraction"
        )));
    }
    Ok(sum_rate * f64::from(6 - t_pilot) / 7.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::PilotConfig;
    use crate::matrix_core::C64;
    use crate::scenario::{ScenarioSpec, db_to_linear};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn base_spec() -> ScenarioSpec {
        ScenarioSpec {
            m: 64,
            k: 4,
            n: 2,
            t_pilot: 1,
            p_u_db: 10.0,
            p_d_db: 10.0,
            rho_db: 10.0,
            seed: 11,
            trials: 200,
            l_paths: 10,
            angle_spread_deg: 10.0,
            varsigma_deg: 95.0,
        }
    }

    fn random_set(m: usize, k: usize, n: usize, rng: &mut impl Rng) -> PrecoderSet {
        let rand_mat = |r: usize, c: usize, rng: &mut dyn rand::RngCore| {
            CMat::from_fn(r, c, |_, _| {
                C64::new(
                    rand::Rng::random_range(rng, -1.0..1.0),
                    rand::Rng::random_range(rng, -1.0..1.0),
                )
            })
        };
        PrecoderSet {
            w_c: rand_mat(m, k, rng),
            w_s: rand_mat(m, n, rng),
            method: Method::Sbm,
            power: PowerParams::from_p_d(1.0).unwrap(),
        }
    }

    #[test]
    fn sinr_trivial_cases() {
        let m = 4;
        let mut w_c = CMat::zeros(m, 1);
        w_c[(0, 0)] = C64::new(1.0, 0.0);
        let pre = PrecoderSet {
            w_c,
            w_s: CMat::zeros(m, 0),
            method: Method::Mrt,
            power: PowerParams::from_p_d(1.0).unwrap(),
        };
        let mut g = CVec::zeros(m);
        g[0] = C64::new(1.0, 0.0);
        // |g^H w|^2 = 1, one extra unit of "interference" would halve it
        assert_relative_eq!(sinr_type_c(&g, &pre, 0), 1.0, epsilon = 1e-12);
        let zero = PrecoderSet {
            w_c: CMat::zeros(m, 1),
            w_s: CMat::zeros(m, 0),
            method: Method::Mrt,
            power: PowerParams::from_p_d(1.0).unwrap(),
        };
        assert_eq!(sinr_type_c(&g, &zero, 0), 0.0);
    }

    #[test]
    fn sinr_matches_term_by_term_recomputation() {
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        let (m, k, n) = (8, 3, 2);
        let pre = random_set(m, k, n, &mut rng);
        let g = crate::channel::complex_gaussian(m, &mut rng);
        for idx in 0..k {
            let num = g.dotc(&pre.w_c.column(idx)).norm_sqr();
            let mut den = 1.0;
            for i in 0..k {
                if i != idx {
                    den += g.dotc(&pre.w_c.column(i)).norm_sqr();
                }
            }
            for j in 0..n {
                den += g.dotc(&pre.w_s.column(j)).norm_sqr();
            }
            assert_relative_eq!(sinr_type_c(&g, &pre, idx), num / den, epsilon = 1e-12);
        }
        for idx in 0..n {
            let num = g.dotc(&pre.w_s.column(idx)).norm_sqr();
            let mut den = 1.0;
            for j in 0..n {
                if j != idx {
                    den += g.dotc(&pre.w_s.column(j)).norm_sqr();
                }
            }
            for i in 0..k {
                den += g.dotc(&pre.w_c.column(i)).norm_sqr();
            }
            assert_relative_eq!(sinr_type_s(&g, &pre, idx), num / den, epsilon = 1e-12);
        }
    }

    #[test]
    fn sinr_energy_bookkeeping() {
        // numerator + interference terms must recompose ||g^H [W_C W_S]||^2
        let mut rng = ChaCha8Rng::seed_from_u64(61);
        let (m, k, n) = (8, 3, 2);
        let pre = random_set(m, k, n, &mut rng);
        let g = crate::channel::complex_gaussian(m, &mut rng);
        let total: f64 = pre
            .w_c
            .column_iter()
            .chain(pre.w_s.column_iter())
            .map(|w| g.dotc(&w).norm_sqr())
            .sum();
        for idx in 0..k {
            let s = sinr_type_c(&g, &pre, idx);
            let num = g.dotc(&pre.w_c.column(idx)).norm_sqr();
            let den = num / s - 1.0; // interference implied by the SINR
            assert_relative_eq!(num + den, total, epsilon = 1e-10, max_relative = 1e-10);
        }
    }

    #[test]
    fn sinr_unitary_invariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(62);
        let (m, k, n) = (8, 3, 2);
        let pre = random_set(m, k, n, &mut rng);
        let g = crate::channel::complex_gaussian(m, &mut rng);
        // random unitary from the orthonormalized columns of a random matrix
        let raw = CMat::from_fn(m, m, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let q = crate::matrix_core::orthonormalize_against(&CMat::zeros(m, 0), &raw, RANK_TOL);
        assert_eq!(q.ncols(), m);
        let rotated = PrecoderSet {
            w_c: &q * &pre.w_c,
            w_s: &q * &pre.w_s,
            method: pre.method,
            power: pre.power,
        };
        let g_rot = &q * &g;
        for idx in 0..k {
            assert_relative_eq!(
                sinr_type_c(&g, &pre, idx),
                sinr_type_c(&g_rot, &rotated, idx),
                epsilon = 1e-10,
                max_relative = 1e-10
            );
        }
        for idx in 0..n {
            assert_relative_eq!(
                sinr_type_s(&g, &pre, idx),
                sinr_type_s(&g_rot, &rotated, idx),
                epsilon = 1e-10,
                max_relative = 1e-10
            );
        }
    }

    #[test]
    fn mc_is_deterministic() {
        let scenario = base_spec().build().unwrap();
        let model = ScenarioModel::new(&scenario).unwrap();
        let a = ergodic_rates_mc(&model, Method::Sbm, 50).unwrap();
        let b = ergodic_rates_mc(&model, Method::Sbm, 50).unwrap();
        assert_eq!(a.per_user_c, b.per_user_c);
        assert_eq!(a.per_user_s, b.per_user_s);
        assert_eq!(a.sum_rate, b.sum_rate);
        // parallel and sequential paths agree bit for bit
        let c = ergodic_rates_mc_sequential(&model, Method::Sbm, 50).unwrap();
        assert_eq!(a.per_user_c, c.per_user_c);
        assert_eq!(a.per_user_s, c.per_user_s);
    }

    #[test]
    fn mc_rates_vanish_with_power() {
        let mut raw = base_spec();
        raw.k = 2;
        raw.n = 1;
        raw.m = 32;
        let mut last = f64::INFINITY;
        for p_d_db in [10.0, -10.0, -30.0, -50.0] {
            raw.p_d_db = p_d_db;
            raw.rho_db = p_d_db;
            let scenario = raw.build().unwrap();
            let model = ScenarioModel::new(&scenario).unwrap();
            let rep = ergodic_rates_mc(&model, Method::Sbm, 100).unwrap();
            assert!(rep.sum_rate < last, "rates must fall as p_d -> 0");
            last = rep.sum_rate;
        }
        assert!(last < 0.01);
    }

    #[test]
    fn mc_hardening_matches_iid_closed_form() {
        // K = 1, N = 0, MRT on an i.i.d. channel: the rate hardens to the
        // closed-form value
        let raw = base_spec();
        let m = 64;
        let scenario = crate::scenario::Scenario {
            m,
            k: 1,
            n: 0,
            pilot: PilotConfig::new(1, db_to_linear(10.0)).unwrap(),
            p_d: 10.0,
            rho: 10.0,
            type_c_geometries: vec![raw.build().unwrap().type_c_geometries[0].clone()],
            type_s_geometries: vec![],
            seed: 33,
            mc_trials: 2000,
        };
        let model = ScenarioModel::with_covariances(
            &scenario,
            vec![HermitianMatrix::identity(m)],
            vec![],
        )
        .unwrap();
        let rep = ergodic_rates_mc(&model, Method::Mrt, 2000).unwrap();
        let expect = iid_rate_type_c(m, 1, 0, 14, 10.0, 10.0);
        let tol = 3.0 * rep.std_err_c.unwrap() + 0.05;
        assert!(
            (rep.avg_c - expect).abs() < tol,
            "MC {} vs closed form {expect} (tol {tol})",
            rep.avg_c
        );
    }

    #[test]
    fn iid_rate_values() {
        // frozen reference values computed independently from the formulas
        assert_relative_eq!(iid_rate_type_c(100, 5, 1, 14, 10.0, 10.0), 4.355451252345555, epsilon = 1e-9);
        assert_relative_eq!(iid_rate_type_s(5, 5, 10.0), 0.15041684255309853, epsilon = 1e-9);
        assert_relative_eq!(iid_rate_type_s(5, 5, 1e-9), 0.0, epsilon = 1e-6);
        // monotone in p_d
        let mut last = 0.0;
        for p in [0.1, 1.0, 10.0, 100.0, 1000.0] {
            let r = iid_rate_type_c(64, 1, 0, 14, 10.0, p);
            assert!(r > last);
            last = r;
        }
    }

    #[test]
    fn closed_forms_collapse_to_iid() {
        let (m, k, n) = (24, 3, 2);
        let tau = 14u32;
        let p_u = 10.0;
        let p_d = 10.0;
        let tau_pu = f64::from(tau) * p_u;
        let c_hat = tau_pu / (tau_pu + 1.0);
        let phi: Vec<HermitianMatrix> = (0..k).map(|_| HermitianMatrix::identity(m)).collect();
        let phi_hat: Vec<HermitianMatrix> = (0..k)
            .map(|_| HermitianMatrix::from_diagonal(&vec![c_hat; m]))
            .collect();
        let delta: Vec<HermitianMatrix> = (0..k)
            .map(|_| HermitianMatrix::from_diagonal(&vec![1.0 / (tau_pu + 1.0); m]))
            .collect();
        let phi_s: Vec<HermitianMatrix> = (0..n).map(|_| HermitianMatrix::identity(m)).collect();
        let via_general = closed_form_rate_type_c(
            0,
            &phi,
            &phi_hat,
            &delta,
            &phi_s,
            p_d,
            QuadFormConvention::DiagonalCorrected,
        )
        .unwrap();
        assert_relative_eq!(via_general, iid_rate_type_c(m, k, n, tau, p_u, p_d), epsilon = 1e-9);

        let via_general_s =
            closed_form_rate_type_s(0, &phi_s, &phi_hat, p_d, QuadFormConvention::DiagonalCorrected)
                .unwrap();
        assert_relative_eq!(via_general_s, iid_rate_type_s(k, n, p_d), epsilon = 1e-9);
    }

    #[test]
    fn closed_form_report_runs() {
        let scenario = base_spec().build().unwrap();
        let model = ScenarioModel::new(&scenario).unwrap();
        let rep = closed_form_report(&model, QuadFormConvention::DiagonalCorrected).unwrap();
        assert_eq!(rep.per_user_c.len(), scenario.k);
        assert_eq!(rep.per_user_s.len(), scenario.n);
        assert!(rep.per_user_c.iter().chain(rep.per_user_s.iter()).all(|&r| r >= 0.0));
        assert_relative_eq!(rep.sum_rate, sum_rate(&rep.per_user_c, &rep.per_user_s), epsilon = 1e-12);
    }

    #[test]
    fn sum_rate_and_efficiency() {
        assert_eq!(sum_rate(&[], &[]), 0.0);
        assert_relative_eq!(sum_rate(&[1.0], &[1.0]), 2.0);
        let mut rng = ChaCha8Rng::seed_from_u64(63);
        let a: Vec<f64> = (0..5).map(|_| rng.random_range(0.0..3.0)).collect();
        let b: Vec<f64> = (0..3).map(|_| rng.random_range(0.0..3.0)).collect();
        let manual = a.iter().sum::<f64>() + b.iter().sum::<f64>();
        assert_relative_eq!(sum_rate(&a, &b), manual, epsilon = 1e-12);

        assert_relative_eq!(spectral_efficiency(7.0, 1).unwrap(), 5.0);
        assert_relative_eq!(spectral_efficiency(7.0, 0).unwrap(), 6.0);
        assert!(spectral_efficiency(7.0, 6).is_err());
        assert_eq!(pilot_symbols_needed(5), 1);
        assert_eq!(pilot_symbols_needed(15), 2);
        assert_eq!(effective_t_pilot(1, 5, 5, EfficiencyMode::Proposed), 1);
        assert_eq!(effective_t_pilot(1, 10, 5, EfficiencyMode::Conventional), 2);
    }

    #[test]
    fn conventional_methods_serve_all_users() {
        let mut raw = base_spec();
        raw.m = 48;
        let scenario = raw.build().unwrap();
        let model = ScenarioModel::new(&scenario).unwrap();
        let rep = ergodic_rates_mc(&model, Method::Zf, 50).unwrap();
        // with joint ZF the statistical users also get positive rates
        assert!(rep.per_user_s.iter().all(|&r| r > 0.0));
        assert_eq!(rep.per_user_s.len(), scenario.n);
    }
}
