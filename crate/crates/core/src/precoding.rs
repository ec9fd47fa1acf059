//! Downlink precoder construction.
//!
//! Five methods are supported: classic ZF and MRT baselines applied to
//! estimated channels, statistical beamforming (SBM) along each covariance's
//! top eigenvector, and the extended eZF / eMRT precoders that additionally
//! null the cross-type interference by working inside the orthogonal
//! complement of the statistical-user subspace.
//!
//! [`PrecoderWorkspace`] precomputes everything that depends only on the
//! covariances (eigenbases, interference-subspace bases, low-rank factors) so
//! per-trial precoder builds touch only small matrices.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix_core::{
    fix_phase, pseudo_inverse, orthonormalize_against, low_rank_approx, CMat, CVec, C64,
    HermitianMatrix, RANK_TOL,
};

/// Precoding method selector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "ZF")]
    Zf,
    #[serde(rename = "MRT")]
    Mrt,
    #[serde(rename = "SBM")]
    Sbm,
    #[serde(rename = "eZF")]
    Ezf,
    #[serde(rename = "eMRT")]
    Emrt,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Zf, Method::Mrt, Method::Sbm, Method::Ezf, Method::Emrt];

    /// Conventional baselines estimate every user's channel; the proposed
    /// methods only estimate the instantaneous-CSI users.
    pub fn is_conventional(&self) -> bool {
        matches!(self, Method::Zf | Method::Mrt)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Method::Zf => "ZF",
            Method::Mrt => "MRT",
            Method::Sbm => "SBM",
            Method::Ezf => "eZF",
            Method::Emrt => "eMRT",
        };
        f.write_str(s)
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "zf" => Ok(Method::Zf),
            "mrt" => Ok(Method::Mrt),
            "sbm" => Ok(Method::Sbm),
            "ezf" => Ok(Method::Ezf),
            "emrt" => Ok(Method::Emrt),
            other => Err(Error::InvalidArgument(format!(
                "unknown method '{other}' (expected ZF, MRT, SBM, eZF or eMRT)"
            ))),
        }
    }
}

/// Transmit-power parameters: `p_d` is the per-user transmit power of the
/// norm-constrained methods, `rho` the received-power target of eZF.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerParams {
    pub p_d: f64,
    pub rho: f64,
}

impl PowerParams {
    pub fn new(p_d: f64, rho: f64) -> Result<Self> {
        if p_d <= 0.0 || rho <= 0.0 {
            return Err(Error::InvalidArgument(format!(
                "powers must be positive, got p_d = {p_d}, rho = {rho}"
            )));
        }
        Ok(Self { p_d, rho })
    }

    /// `rho = p_d`, so eZF and eMRT run at comparable per-user power scales.
    pub fn from_p_d(p_d: f64) -> Result<Self> {
        Self::new(p_d, p_d)
    }
}

/// The full precoder of one method: instantaneous-CSI columns in `w_c`,
/// statistical-user columns in `w_s`.
#[derive(Debug, Clone)]
pub struct PrecoderSet {
    pub w_c: CMat,
    pub w_s: CMat,
    pub method: Method,
    pub power: PowerParams,
}

/// MRT columns `sqrt(p_d) * g_k / ||g_k||`.
pub fn mrt_baseline(g_hat: &CMat, p_d: f64) -> Result<CMat> {
    let mut w = CMat::zeros(g_hat.nrows(), g_hat.ncols());
    for k in 0..g_hat.ncols() {
        let col = g_hat.column(k);
        let norm = col.norm();
        if norm == 0.0 {
            return Err(Error::DegenerateUser { index: k, reason: "zero channel estimate".into() });
        }
        w.set_column(k, &col.scale(p_d.sqrt() / norm));
    }
    Ok(w)
}

/// ZF precoder `sqrt(rho) * G(G^H G)^{-1}`, so `G^H W = sqrt(rho) I`.
pub fn zf_baseline(g_hat: &CMat, rho: f64) -> Result<CMat> {
    Ok(pseudo_inverse(g_hat)?.scale(rho.sqrt()))
}

/// Statistical beamforming: top covariance eigenvector for each statistical
/// user, MRT for the instantaneous-CSI users.
pub fn sbm_precoders(g_hat: &CMat, phi_s: &[HermitianMatrix], power: PowerParams) -> Result<PrecoderSet> {
    let m = g_hat.nrows();
    let mut w_s = CMat::zeros(m, phi_s.len());
    for (n, phi) in phi_s.iter().enumerate() {
        if phi.trace() <= 0.0 {
            return Err(Error::DegenerateUser { index: n, reason: "zero covariance".into() });
        }
        w_s.set_column(n, &phi.eig().u_max().scale(power.p_d.sqrt()));
    }
    Ok(PrecoderSet { w_c: mrt_baseline(g_hat, power.p_d)?, w_s, method: Method::Sbm, power })
}

fn sum_covariances(phi_s: &[HermitianMatrix], m: usize, skip: Option<usize>) -> Result<HermitianMatrix> {
    let mut total = HermitianMatrix::zeros(m);
    for (i, phi) in phi_s.iter().enumerate() {
        if Some(i) == skip {
            continue;
        }
        total = total.add(phi)?;
    }
    Ok(total)
}

/// eZF columns for the instantaneous-CSI users: zero-forcing restricted to the
/// orthogonal complement of the statistical-user subspace. Satisfies
/// `G^H W = sqrt(rho) I` and `W^H Phi_{S,n} W = 0` simultaneously.
pub fn ezf_type_c(g_hat: &CMat, phi_s: &[HermitianMatrix], rho: f64, rank_tol: f64) -> Result<CMat> {
    if phi_s.is_empty() {
        return zf_baseline(g_hat, rho);
    }
    let m = g_hat.nrows();
    let k = g_hat.ncols();
    let eig = sum_covariances(phi_s, m, None)?.eig();
    let r1 = eig.rank(rank_tol);
    if r1 == m {
        return Err(Error::NullSpaceExhausted { rank: r1, dim: m });
    }
    if m - r1 < k {
        return Err(Error::InfeasibleDimensions { available: m - r1, required: k });
    }
    let u2 = eig.null_basis(rank_tol);
    let g_bar = u2.adjoint() * g_hat;
    Ok((u2 * pseudo_inverse(&g_bar)?).scale(rho.sqrt()))
}

/// eZF vector for one statistical user: the strongest covariance direction in
/// the joint null space of all estimated channels and the other statistical
/// users' covariances, scaled so the received statistical power is exactly
/// `rho`.
pub fn ezf_type_s(
    g_hat: &CMat,
    phi_s: &[HermitianMatrix],
    n: usize,
    rho: f64,
    rank_tol: f64,
) -> Result<CVec> {
    let m = g_hat.nrows();
    let phi_n = phi_s.get(n).ok_or_else(|| {
        Error::InvalidArgument(format!("user index {n} out of range for {} covariances", phi_s.len()))
    })?;
    let q = HermitianMatrix::from_factor(g_hat).add(&sum_covariances(phi_s, m, Some(n))?)?;
    let eig = q.eig();
    let r2 = eig.rank(rank_tol);
    if r2 == m {
        return Err(Error::NullSpaceExhausted { rank: r2, dim: m });
    }
    let u2 = eig.null_basis(rank_tol);
    let projected = HermitianMatrix::new(u2.adjoint() * phi_n.as_matrix() * &u2)?;
    let pe = projected.eig();
    let lam = pe.lambda_max();
    if lam <= RANK_TOL * phi_n.trace().max(1.0) {
        return Err(Error::DegenerateUser {
            index: n,
            reason: "covariance has no energy left in the interference-free subspace".into(),
        });
    }
    Ok((u2 * pe.u_max()).scale((rho / lam).sqrt()))
}

/// eMRT columns for the instantaneous-CSI users: MRT along the projection of
/// each estimated channel onto the complement of the statistical-user
/// subspace, with full transmit power `p_d` per column.
pub fn emrt_type_c(g_hat: &CMat, phi_s: &[HermitianMatrix], p_d: f64, rank_tol: f64) -> Result<CMat> {
    if phi_s.is_empty() {
        return mrt_baseline(g_hat, p_d);
    }
    let m = g_hat.nrows();
    let eig = sum_covariances(phi_s, m, None)?.eig();
    let r1 = eig.rank(rank_tol);
    if r1 == m {
        return Err(Error::NullSpaceExhausted { rank: r1, dim: m });
    }
    let u2 = eig.null_basis(rank_tol);
    let mut w = CMat::zeros(m, g_hat.ncols());
    for k in 0..g_hat.ncols() {
        let g_bar = u2.adjoint() * g_hat.column(k);
        let norm = g_bar.norm();
        if norm <= RANK_TOL * g_hat.column(k).norm().max(1.0) {
            return Err(Error::DegenerateUser {
                index: k,
                reason: "channel estimate lies entirely inside the statistical-user subspace".into(),
            });
        }
        w.set_column(k, &(&u2 * g_bar).scale(p_d.sqrt() / norm));
    }
    Ok(w)
}

/// eMRT vector for one statistical user: strongest covariance direction in the
/// null space of the estimated channel matrix, at transmit power `p_d`.
pub fn emrt_type_s(g_hat: &CMat, phi_s_n: &HermitianMatrix, p_d: f64) -> Result<CVec> {
    let m = phi_s_n.dim();
    let k = g_hat.ncols();
    if k == 0 {
        return Ok(phi_s_n.eig().u_max().scale(p_d.sqrt()));
    }
    if k >= m {
        return Err(Error::NullSpaceExhausted { rank: k, dim: m });
    }
    let p = HermitianMatrix::from_factor(g_hat);
    let eig = p.eig();
    if eig.rank(RANK_TOL) < k {
        let scale = eig.lambda_max().max(0.0);
        let ratio = if scale == 0.0 { 0.0 } else { (eig.values[k - 1].max(0.0) / scale).sqrt() };
        return Err(Error::RankDeficient { ratio, threshold: RANK_TOL });
    }
    let u3 = eig.vectors.columns(k, m - k).into_owned();
    let projected = HermitianMatrix::new(u3.adjoint() * phi_s_n.as_matrix() * &u3)?;
    Ok((u3 * projected.eig().u_max()).scale(p_d.sqrt()))
}

/// Target rank holding 99.9% of the trace, the default when a full-rank
/// covariance must be reduced before null-space precoding.
pub fn default_target_rank(phi: &HermitianMatrix) -> usize {
    let eig = phi.eig();
    let total: f64 = eig.values.iter().map(|v| v.max(0.0)).sum();
    if total == 0.0 {
        return 1;
    }
    let mut acc = 0.0;
    for (i, v) in eig.values.iter().enumerate() {
        acc += v.max(0.0);
        if acc >= 0.999 * total {
            return i + 1;
        }
    }
    eig.values.len()
}

/// Precomputed covariance-side quantities for fast per-trial precoder builds.
///
/// Construction reduces each covariance to its dominant eigenspace
/// ([`default_target_rank`]) if the summed covariance would otherwise leave no
/// null space. Per-trial work then consists of projections against small
/// orthonormal bases plus eigendecompositions of matrices no larger than the
/// covariance ranks.
#[derive(Debug, Clone)]
pub struct PrecoderWorkspace {
    m: usize,
    rank_tol: f64,
    phi_s: Vec<HermitianMatrix>,
    u_max_s: Vec<CVec>,
    /// Trailing eigenvectors of the summed covariance (the interference-free
    /// subspace for type-C eZF/eMRT); `M x M` identity-equivalent when N = 0.
    null_total: CMat,
    r1: usize,
    /// Per user: orthonormal basis of the range of the other users' summed
    /// covariances.
    others_basis: Vec<CMat>,
    /// Per user: low-rank factor `F` with `Phi = F F^H`.
    factors: Vec<CMat>,
    reduced: bool,
}

impl PrecoderWorkspace {
    pub fn new(phi_s_in: &[HermitianMatrix], m: usize, rank_tol: f64) -> Result<Self> {
        for (n, phi) in phi_s_in.iter().enumerate() {
            if phi.dim() != m {
                return Err(Error::DimensionMismatch(format!(
                    "covariance {n} is {}x{}, expected {m}x{m}",
                    phi.dim(),
                    phi.dim()
                )));
            }
            if phi.trace() <= 0.0 {
                return Err(Error::DegenerateUser { index: n, reason: "zero covariance".into() });
            }
        }
        let mut phi_s: Vec<HermitianMatrix> = phi_s_in.to_vec();
        let mut reduced = false;
        if !phi_s.is_empty() {
            let total = sum_covariances(&phi_s, m, None)?;
            if total.eig().rank(rank_tol) == m {
                // no interference-free subspace: keep only each user's
                // dominant eigenspace and accept the residual leakage; cap the
                // summed target ranks below M so a null space is guaranteed
                let mut targets: Vec<usize> = phi_s.iter().map(default_target_rank).collect();
                let budget = m - 1;
                if phi_s.len() > budget {
                    return Err(Error::NullSpaceExhausted { rank: m, dim: m });
                }
                while targets.iter().sum::<usize>() > budget {
                    let widest = targets
                        .iter()
                        .enumerate()
                        .max_by_key(|(_, &t)| t)
                        .map(|(i, _)| i)
                        .expect("non-empty targets");
                    targets[widest] -= 1;
                }
                phi_s = phi_s
                    .iter()
                    .zip(&targets)
                    .map(|(phi, &d)| low_rank_approx(phi, d))
                    .collect::<Result<_>>()?;
                reduced = true;
            }
        }
        let (null_total, r1) = if phi_s.is_empty() {
            (CMat::identity(m, m), 0)
        } else {
            let eig = sum_covariances(&phi_s, m, None)?.eig();
            let r1 = eig.rank(rank_tol);
            if r1 == m {
                return Err(Error::NullSpaceExhausted { rank: r1, dim: m });
            }
            (eig.null_basis(rank_tol), r1)
        };
        let mut u_max_s = Vec::with_capacity(phi_s.len());
        let mut factors = Vec::with_capacity(phi_s.len());
        for phi in &phi_s {
            let eig = phi.eig();
            u_max_s.push(eig.u_max());
            let basis = eig.range_basis(rank_tol);
            let mut factor = basis.clone();
            for (j, &lam) in eig.values.iter().take(basis.ncols()).enumerate() {
                let s = lam.max(0.0).sqrt();
                factor.column_mut(j).apply(|z| *z *= C64::new(s, 0.0));
            }
            factors.push(factor);
        }
        let mut others_basis = Vec::with_capacity(phi_s.len());
        for n in 0..phi_s.len() {
            let others = sum_covariances(&phi_s, m, Some(n))?;
            others_basis.push(others.eig().range_basis(rank_tol));
        }
        Ok(Self { m, rank_tol, phi_s, u_max_s, null_total, r1, others_basis, factors, reduced })
    }

    pub fn num_statistical_users(&self) -> usize {
        self.phi_s.len()
    }

    /// Covariances actually used by the precoders (rank-reduced when the
    /// originals summed to full rank).
    pub fn covariances(&self) -> &[HermitianMatrix] {
        &self.phi_s
    }

    /// True when construction had to replace the covariances by low-rank
    /// approximations; cross-type leakage is then small but nonzero.
    pub fn rank_reduced(&self) -> bool {
        self.reduced
    }

    /// Builds the precoder set of `method` from fresh channel estimates.
    /// `g_hat_s` carries the statistical users' estimated channels and is
    /// required only by the conventional ZF/MRT baselines.
    pub fn precoders(
        &self,
        method: Method,
        g_hat_c: &CMat,
        g_hat_s: Option<&CMat>,
        power: PowerParams,
    ) -> Result<PrecoderSet> {
        let n = self.phi_s.len();
        let k = g_hat_c.ncols();
        let (w_c, w_s) = match method {
            Method::Mrt | Method::Zf => {
                let stacked = self.stack_estimates(g_hat_c, g_hat_s)?;
                let w = match method {
                    Method::Mrt => mrt_baseline(&stacked, power.p_d)?,
                    _ => zf_baseline(&stacked, power.rho)?,
                };
                (w.columns(0, k).into_owned(), w.columns(k, n).into_owned())
            }
            Method::Sbm => {
                let mut w_s = CMat::zeros(self.m, n);
                for (i, u) in self.u_max_s.iter().enumerate() {
                    w_s.set_column(i, &u.scale(power.p_d.sqrt()));
                }
                (mrt_baseline(g_hat_c, power.p_d)?, w_s)
            }
            Method::Ezf => {
                let w_c = if n == 0 {
                    zf_baseline(g_hat_c, power.rho)?
                } else {
                    if self.m - self.r1 < k {
                        return Err(Error::InfeasibleDimensions {
                            available: self.m - self.r1,
                            required: k,
                        });
                    }
                    let g_bar = self.null_total.adjoint() * g_hat_c;
                    (&self.null_total * pseudo_inverse(&g_bar)?).scale(power.rho.sqrt())
                };
                let mut w_s = CMat::zeros(self.m, n);
                for i in 0..n {
                    w_s.set_column(i, &self.projected_top_direction(i, g_hat_c, true, power.rho)?);
                }
                (w_c, w_s)
            }
            Method::Emrt => {
                let w_c = if n == 0 {
                    mrt_baseline(g_hat_c, power.p_d)?
                } else {
                    let mut w = CMat::zeros(self.m, k);
                    for j in 0..k {
                        let g_bar = self.null_total.adjoint() * g_hat_c.column(j);
                        let norm = g_bar.norm();
                        if norm <= RANK_TOL * g_hat_c.column(j).norm().max(1.0) {
                            return Err(Error::DegenerateUser {
                                index: j,
                                reason: "channel estimate lies entirely inside the statistical-user subspace"
                                    .into(),
                            });
                        }
                        w.set_column(j, &(&self.null_total * g_bar).scale(power.p_d.sqrt() / norm));
                    }
                    w
                };
                let mut w_s = CMat::zeros(self.m, n);
                for i in 0..n {
                    w_s.set_column(i, &self.projected_top_direction(i, g_hat_c, false, power.p_d)?);
                }
                (w_c, w_s)
            }
        };
        Ok(PrecoderSet { w_c, w_s, method, power })
    }

    fn stack_estimates(&self, g_hat_c: &CMat, g_hat_s: Option<&CMat>) -> Result<CMat> {
        let n = self.phi_s.len();
        if n == 0 {
            return Ok(g_hat_c.clone());
        }
        let g_s = g_hat_s.ok_or_else(|| {
            Error::InvalidArgument(
                "conventional ZF/MRT needs channel estimates for the statistical users".into(),
            )
        })?;
        if g_s.ncols() != n || g_s.nrows() != self.m {
            return Err(Error::DimensionMismatch(format!(
                "expected {}x{n} statistical-user estimates, got {}x{}",
                self.m,
                g_s.nrows(),
                g_s.ncols()
            )));
        }
        let cols: Vec<CVec> = g_hat_c
            .column_iter()
            .chain(g_s.column_iter())
            .map(CVec::from)
            .collect();
        Ok(CMat::from_columns(&cols))
    }

    /// Top eigenpair of `Pi Phi_n Pi` where `Pi` projects away the estimated
    /// channels and (for eZF) the other statistical users' subspaces,
    /// evaluated through the low-rank factor so only an `l x l`
    /// eigendecomposition is needed. For eZF the output is scaled so
    /// `w^H Phi_n w = target` exactly; for eMRT `||w||^2 = target`.
    fn projected_top_direction(
        &self,
        n: usize,
        g_hat_c: &CMat,
        include_others: bool,
        target: f64,
    ) -> Result<CVec> {
        // eMRT nulls only the estimated channels; eZF also nulls the other
        // statistical users' subspaces
        let empty = CMat::zeros(self.m, 0);
        let fixed: &CMat = if include_others { &self.others_basis[n] } else { &empty };
        let extra = orthonormalize_against(fixed, g_hat_c, self.rank_tol);
        let factor = &self.factors[n];
        // project the factor: C = (I - B B^H) F applied basis by basis
        let mut c = factor.clone();
        if fixed.ncols() > 0 {
            c -= fixed * (fixed.adjoint() * factor);
        }
        if extra.ncols() > 0 {
            c -= &extra * (extra.adjoint() * &c);
        }
        let small = HermitianMatrix::from_factor(&c.adjoint().into_owned());
        let eig = small.eig();
        let lam = eig.lambda_max();
        if lam <= RANK_TOL * self.phi_s[n].trace().max(1.0) {
            return Err(Error::DegenerateUser {
                index: n,
                reason: "covariance has no energy left in the interference-free subspace".into(),
            });
        }
        let mut u = &c * eig.u_max();
        fix_phase(&mut u);
        // normalize against the realized quantity rather than the eigenvalue,
        // which carries the eigensolver's residual
        if include_others {
            let power = u.dotc(&(self.phi_s[n].as_matrix() * &u)).re;
            Ok(u.scale((target / power).sqrt()))
        } else {
            let norm = u.norm();
            Ok(u.scale(target.sqrt() / norm))
        }
    }
}
