//! Channel synthesis and estimation: per-user covariance matrices from a
//! finite-scatterer uniform-linear-array geometry, correlated Rayleigh draws,
//! and MMSE estimation from uplink pilots.
//!
//! Convention: `CN(0, 1)` entries carry variance 1/2 per real and imaginary
//! part. Angles are radians everywhere inside the library; degrees are a CLI
//! concern.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::matrix_core::{psd_sqrt, C64, CMat, CVec, HermitianMatrix};

/// Angular geometry of one user's scatterer cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct UserGeometry {
    /// Mean angle of arrival, radians.
    pub mean_aoa: f64,
    /// Total angle spread, radians; paths fall in `mean +- spread/2`.
    pub angle_spread: f64,
    /// Number of propagation paths (L).
    pub num_paths: usize,
    /// Antenna spacing over wavelength (d / lambda).
    pub antenna_spacing_ratio: f64,
}

impl UserGeometry {
    pub fn validate(&self) -> Result<()> {
        if self.angle_spread <= 0.0 {
            return Err(Error::InvalidArgument("angle spread must be positive".into()));
        }
        if self.num_paths == 0 {
            return Err(Error::InvalidArgument("at least one path is required".into()));
        }
        if self.antenna_spacing_ratio <= 0.0 {
            return Err(Error::InvalidArgument("antenna spacing ratio must be positive".into()));
        }
        Ok(())
    }
}

/// Uplink pilot configuration. The pilot length is tied to the OFDM frame:
/// `tau = 14 * t_pilot` symbols.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PilotConfig {
    t_pilot: u32,
    p_u: f64,
}

impl PilotConfig {
    pub fn new(t_pilot: u32, p_u: f64) -> Result<Self> {
        if t_pilot == 0 {
            return Err(Error::InvalidArgument("t_pilot must be at least 1".into()));
        }
        if p_u <= 0.0 {
            return Err(Error::InvalidArgument("pilot power must be positive".into()));
        }
        Ok(Self { t_pilot, p_u })
    }

    pub fn t_pilot(&self) -> u32 {
        self.t_pilot
    }

    /// Pilot sequence length `tau = 14 * t_pilot`.
    pub fn tau(&self) -> u32 {
        14 * self.t_pilot
    }

    /// Linear pilot power.
    pub fn p_u(&self) -> f64 {
        self.p_u
    }

    /// Effective pilot SNR `tau * p_u`.
    pub fn tau_pu(&self) -> f64 {
        f64::from(self.tau()) * self.p_u
    }
}

/// MMSE channel estimate of one instantaneous-CSI user.
#[derive(Debug, Clone)]
pub struct ChannelEstimate {
    /// Estimated channel vector.
    pub g_hat: CVec,
    /// Covariance of the estimate.
    pub phi_hat: HermitianMatrix,
    /// Covariance of the estimation error; `phi_hat + delta` recovers the
    /// true channel covariance.
    pub delta: HermitianMatrix,
}

/// Draws a CN(0, I) vector.
pub fn complex_gaussian(dim: usize, rng: &mut impl Rng) -> CVec {
    CVec::from_fn(dim, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re * FRAC_1_SQRT_2, im * FRAC_1_SQRT_2)
    })
}

/// Uniform-linear-array steering vector, scaled by `1/sqrt(L)` so that the
/// squared norm is exactly `M / L`.
pub fn steering_vector(theta: f64, m: usize, spacing_ratio: f64, l: usize) -> CVec {
    let scale = 1.0 / (l as f64).sqrt();
    let step = -2.0 * PI * spacing_ratio * theta.cos();
    CVec::from_fn(m, |i, _| C64::from_polar(scale, step * i as f64))
}

/// Synthesizes a covariance matrix `A A^H` from `L` steering vectors whose
/// angles are drawn uniformly over the user's spread interval.
///
/// The result is Hermitian PSD with trace `M` and rank at most `L`.
pub fn synth_covariance(geom: &UserGeometry, m: usize, rng: &mut impl Rng) -> Result<HermitianMatrix> {
    geom.validate()?;
    let lo = geom.mean_aoa - geom.angle_spread / 2.0;
    let hi = geom.mean_aoa + geom.angle_spread / 2.0;
    let mut a = CMat::zeros(m, geom.num_paths);
    for l in 0..geom.num_paths {
        let theta = rng.random_range(lo..hi);
        a.set_column(l, &steering_vector(theta, m, geom.antenna_spacing_ratio, geom.num_paths));
    }
    Ok(HermitianMatrix::from_factor(&a))
}

/// Draws one correlated channel realization `Phi^{1/2} h`, `h ~ CN(0, I)`.
///
/// Recomputes the matrix square root on every call; use [`ChannelSampler`]
/// inside simulation loops.
pub fn sample_channel(phi: &HermitianMatrix, rng: &mut impl Rng) -> Result<CVec> {
    Ok(ChannelSampler::new(phi)?.draw(rng))
}

/// Correlated channel sampler with a precomputed covariance square root.
#[derive(Debug, Clone)]
pub struct ChannelSampler {
    sqrt: CMat,
}

impl ChannelSampler {
    pub fn new(phi: &HermitianMatrix) -> Result<Self> {
        Ok(Self { sqrt: psd_sqrt(phi)?.into_matrix() })
    }

    pub fn dim(&self) -> usize {
        self.sqrt.nrows()
    }

    pub fn draw(&self, rng: &mut impl Rng) -> CVec {
        &self.sqrt * complex_gaussian(self.dim(), rng)
    }
}

/// MMSE estimator for one user with precomputed filter and covariances.
///
/// The filter is `Phi (I/(tau p_u) + Phi)^{-1}`; the estimate covariance and
/// error covariance follow from the same eigenbasis, which makes the
/// decomposition `Phi = Phi_hat + Delta` exact by construction.
#[derive(Debug, Clone)]
pub struct MmseEstimator {
    filter: CMat,
    phi_hat: HermitianMatrix,
    delta: HermitianMatrix,
    noise_scale: f64,
}

impl MmseEstimator {
    pub fn new(phi: &HermitianMatrix, pilot: &PilotConfig) -> Result<Self> {
        let tau_pu = pilot.tau_pu();
        if tau_pu <= 0.0 {
            return Err(Error::InvalidArgument("tau * p_u must be positive".into()));
        }
        let a = 1.0 / tau_pu;
        let eig = phi.eig();
        let dim = phi.dim();
        let mut filter_d = CVec::zeros(dim);
        let mut hat_d = CVec::zeros(dim);
        let mut delta_d = CVec::zeros(dim);
        for (i, &lam) in eig.values.iter().enumerate() {
            let lam = lam.max(0.0);
            filter_d[i] = C64::new(lam / (lam + a), 0.0);
            hat_d[i] = C64::new(lam * lam / (lam + a), 0.0);
            delta_d[i] = C64::new(lam * a / (lam + a), 0.0);
        }
        let u = &eig.vectors;
        let filter = u * CMat::from_diagonal(&filter_d) * u.adjoint();
        let phi_hat = HermitianMatrix::new(u * CMat::from_diagonal(&hat_d) * u.adjoint())?;
        let delta = HermitianMatrix::new(u * CMat::from_diagonal(&delta_d) * u.adjoint())?;
        Ok(Self { filter, phi_hat, delta, noise_scale: 1.0 / tau_pu.sqrt() })
    }

    pub fn phi_hat(&self) -> &HermitianMatrix {
        &self.phi_hat
    }

    pub fn delta(&self) -> &HermitianMatrix {
        &self.delta
    }

    /// Estimated channel from a true realization plus fresh pilot noise.
    pub fn estimate_vec(&self, g_true: &CVec, rng: &mut impl Rng) -> CVec {
        let noise = complex_gaussian(g_true.len(), rng);
        let observed = g_true + noise.scale(self.noise_scale);
        &self.filter * observed
    }
}

/// One-shot MMSE estimation returning the estimate together with its
/// covariance decomposition.
pub fn mmse_estimate(
    g_true: &CVec,
    phi: &HermitianMatrix,
    pilot: &PilotConfig,
    rng: &mut impl Rng,
) -> Result<ChannelEstimate> {
    let est = MmseEstimator::new(phi, pilot)?;
    let g_hat = est.estimate_vec(g_true, rng);
    Ok(ChannelEstimate { g_hat, phi_hat: est.phi_hat, delta: est.delta })
}

/// Asymptotic upper bound on the covariance rank from the AOA interval and
/// array geometry: `(cos(theta_min) - cos(theta_max)) * (d/lambda) * M`.
pub fn rank_bound(theta_min: f64, theta_max: f64, spacing_ratio: f64, m: usize) -> Result<f64> {
    if theta_min > theta_max {
        return Err(Error::InvalidArgument(format!(
            "inverted AOA interval: {theta_min} > {theta_max}"
        )));
    }
    Ok((theta_min.cos() - theta_max.cos()) * spacing_ratio * m as f64)
}
