//! Boundary resolvent data and its composition semigroup.
//!
//! For shells m..=n the boundary data is the four-block compression of the
//! resolvent `(H_{m,n} - z)^{-1}` onto the backward channels embedded at
//! shell m and the forward channels at shell n. Data of adjacent blocks
//! merge through the associative composition [`compose`]; a [`sweep`] folds
//! shell data left to right and falls back to the direct resolvent of the
//! merged block whenever a step is unsuitable or a shell parameter is
//! singular, recording every event.

use crate::error::{Error, Result};
use crate::graph::{ChannelData, ShellOperator};
use crate::numerics::{
    c64, cond_number, hermitian_resolvent, imag_part, lu_solve, min_eig_hermitian,
    pseudo_resolvent, C64, CMatrix, TolerancePolicy,
};

/// The (q, r)-split compression of a block resolvent: q backward modes, r
/// forward modes, computed at the spectral parameter `z`.
#[derive(Debug, Clone)]
pub struct BoundaryData {
    pub z: C64,
    pub alpha: CMatrix,
    pub beta: CMatrix,
    pub gamma: CMatrix,
    pub delta: CMatrix,
}

impl BoundaryData {
    pub fn new(z: C64, alpha: CMatrix, beta: CMatrix, gamma: CMatrix, delta: CMatrix) -> Result<Self> {
        let q = alpha.nrows();
        let r = delta.nrows();
        if alpha.ncols() != q
            || delta.ncols() != r
            || beta.nrows() != q
            || beta.ncols() != r
            || gamma.nrows() != r
            || gamma.ncols() != q
        {
            return Err(Error::DimensionMismatch("boundary data blocks are inconsistent".into()));
        }
        Ok(Self {
            z,
            alpha,
            beta,
            gamma,
            delta,
        })
    }

    /// Number of backward modes.
    pub fn q(&self) -> usize {
        self.alpha.nrows()
    }

    /// Number of forward modes.
    pub fn r(&self) -> usize {
        self.delta.nrows()
    }

    /// Split a (q+r) x (q+r) matrix into boundary data.
    pub fn from_block(z: C64, m: &CMatrix, q: usize) -> Result<Self> {
        if m.nrows() != m.ncols() || q > m.nrows() {
            return Err(Error::DimensionMismatch("block matrix split".into()));
        }
        let r = m.nrows() - q;
        Ok(Self {
            z,
            alpha: m.view((0, 0), (q, q)).into_owned(),
            beta: m.view((0, q), (q, r)).into_owned(),
            gamma: m.view((q, 0), (r, q)).into_owned(),
            delta: m.view((q, q), (r, r)).into_owned(),
        })
    }

    /// Assemble the full (q+r) x (q+r) block matrix.
    pub fn block_matrix(&self) -> CMatrix {
        let (q, r) = (self.q(), self.r());
        let mut m = CMatrix::zeros(q + r, q + r);
        m.view_mut((0, 0), (q, q)).copy_from(&self.alpha);
        m.view_mut((0, q), (q, r)).copy_from(&self.beta);
        m.view_mut((q, 0), (r, q)).copy_from(&self.gamma);
        m.view_mut((q, q), (r, r)).copy_from(&self.delta);
        m
    }

    /// Data at the conjugate parameter: alpha*, delta* on the diagonal and
    /// the off-diagonal blocks swapped through the adjoint.
    pub fn conjugated(&self) -> Self {
        Self {
            z: self.z.conj(),
            alpha: self.alpha.adjoint(),
            beta: self.gamma.adjoint(),
            gamma: self.beta.adjoint(),
            delta: self.delta.adjoint(),
        }
    }

    /// Projection onto the Hermitian structure carried by real parameters
    /// (alpha, delta Hermitian, gamma = beta*), killing accumulated
    /// round-off asymmetry after long compositions. Identity for data that
    /// is already Hermitian.
    pub fn hermitized_real(&self) -> Self {
        let gamma = (&self.gamma + self.beta.adjoint()).scale(0.5);
        Self {
            z: self.z,
            alpha: crate::numerics::hermitian_part(&self.alpha),
            beta: gamma.adjoint(),
            gamma,
            delta: crate::numerics::hermitian_part(&self.delta),
        }
    }

    /// How far the data is from the dissipative cone: the most negative of
    /// the smallest eigenvalues of Im(alpha), Im(delta) and Im(full block).
    /// Values <= 0 (up to round-off) certify cone membership.
    pub fn cone_defect(&self) -> f64 {
        let a = min_eig_hermitian(&imag_part(&self.alpha));
        let d = min_eig_hermitian(&imag_part(&self.delta));
        let f = min_eig_hermitian(&imag_part(&self.block_matrix()));
        (-a).max(-d).max(-f)
    }
}

/// Evaluation policy for parameters on or near the real axis.
#[derive(Debug, Clone, Copy)]
pub struct EvalPolicy {
    pub tol: TolerancePolicy,
    /// Relative size of the real-axis nudge when lambda collides with
    /// spectrum: lambda' = lambda +- nudge_rel * (1 + |lambda|).
    pub nudge_rel: f64,
    pub allow_nudge: bool,
}

impl Default for EvalPolicy {
    fn default() -> Self {
        Self {
            tol: TolerancePolicy::default(),
            nudge_rel: 1e-9,
            allow_nudge: true,
        }
    }
}

/// Backward channels of shell m and forward channels of shell n, embedded
/// into the coordinates of the block H_{m,n}.
pub fn embedded_channels(
    so: &ShellOperator,
    cd: &ChannelData,
    m: usize,
    n: usize,
) -> Result<(CMatrix, CMatrix)> {
    if n > cd.max_boundary_depth() || m > n {
        return Err(Error::InvalidInput(format!(
            "boundary data over shells {m}..={n} needs forward channels at {n} (max depth {})",
            cd.max_boundary_depth()
        )));
    }
    let total = so.size_of_range(m, n);
    let ups = &cd.upsilon[m];
    let ph = &cd.phi[n];
    let mut ups_hat = CMatrix::zeros(total, ups.ncols());
    ups_hat.view_mut((0, 0), (ups.nrows(), ups.ncols())).copy_from(ups);
    let mut phi_hat = CMatrix::zeros(total, ph.ncols());
    phi_hat
        .view_mut((total - ph.nrows(), 0), (ph.nrows(), ph.ncols()))
        .copy_from(ph);
    Ok((ups_hat, phi_hat))
}

/// Boundary data of the merged block m..=n from one dense resolvent. At a
/// real parameter inside the spectrum of the block the pseudo-resolvent is
/// taken when the channels avoid the affected eigenspaces.
pub fn boundary_data_direct(
    so: &ShellOperator,
    cd: &ChannelData,
    m: usize,
    n: usize,
    z: C64,
    policy: &EvalPolicy,
) -> Result<BoundaryData> {
    let (ups_hat, phi_hat) = embedded_channels(so, cd, m, n)?;
    let h = so.assemble_dense(m, n);
    let total = h.nrows();
    let mut channels = CMatrix::zeros(total, ups_hat.ncols() + phi_hat.ncols());
    channels
        .view_mut((0, 0), (total, ups_hat.ncols()))
        .copy_from(&ups_hat);
    channels
        .view_mut((0, ups_hat.ncols()), (total, phi_hat.ncols()))
        .copy_from(&phi_hat);

    let solved = if z.im != 0.0 {
        let mut shifted = h;
        for i in 0..total {
            shifted[(i, i)] -= z;
        }
        lu_solve(&shifted, &channels).ok_or(Error::SingularSpectralParameter { z })?
    } else {
        match hermitian_resolvent(&h, z, &policy.tol) {
            Ok(res) => res * &channels,
            Err(Error::SingularSpectralParameter { .. }) => {
                pseudo_resolvent(&h, z.re, &channels, &policy.tol)? * &channels
            }
            Err(e) => return Err(e),
        }
    };
    let block = channels.adjoint() * solved;
    BoundaryData::from_block(z, &block, ups_hat.ncols())
}

/// Single-shell boundary data R_n.
pub fn shell_data(
    so: &ShellOperator,
    cd: &ChannelData,
    n: usize,
    z: C64,
    policy: &EvalPolicy,
) -> Result<BoundaryData> {
    boundary_data_direct(so, cd, n, n, z, policy)
}

#[derive(Debug, Clone, Copy)]
pub struct SuitabilityReport {
    pub suitable: bool,
    pub cond: f64,
}

/// Invertibility of `1 - alpha~ delta` (alpha~ from the right factor, delta
/// from the left) measured by its condition number.
pub fn is_suitable(q: &BoundaryData, r: &BoundaryData, tol: &TolerancePolicy) -> Result<SuitabilityReport> {
    if q.r() != r.q() {
        return Err(Error::DimensionMismatch(format!(
            "cannot compose ({}, {}) with ({}, {})",
            q.q(),
            q.r(),
            r.q(),
            r.r()
        )));
    }
    if q.z != r.z {
        return Err(Error::ParameterMismatch { z1: q.z, z2: r.z });
    }
    let m = CMatrix::identity(q.r(), q.r()) - &r.alpha * &q.delta;
    let cond = cond_number(&m);
    Ok(SuitabilityReport {
        suitable: cond.is_finite() && cond <= tol.suitability_cond_max,
        cond,
    })
}

/// The composition of boundary data over adjacent blocks:
///
/// ```text
/// alpha^ = alpha + beta (1 - alpha~ delta)^{-1} alpha~ gamma
/// beta^  = beta (1 - alpha~ delta)^{-1} beta~
/// gamma^ = gamma~ (1 - delta alpha~)^{-1} gamma
/// delta^ = delta~ + gamma~ (1 - delta alpha~)^{-1} delta beta~
/// ```
pub fn compose(q: &BoundaryData, r: &BoundaryData, tol: &TolerancePolicy) -> Result<BoundaryData> {
    let report = is_suitable(q, r, tol)?;
    if !report.suitable {
        return Err(Error::NotSuitable { cond: report.cond });
    }
    let mid = q.r();
    let s = r.r();
    let qq = q.q();
    let eye = CMatrix::identity(mid, mid);

    // right-hand sides against (1 - alpha~ delta)
    let m1 = &eye - &r.alpha * &q.delta;
    let mut rhs1 = CMatrix::zeros(mid, qq + s);
    rhs1.view_mut((0, 0), (mid, qq)).copy_from(&(&r.alpha * &q.gamma));
    rhs1.view_mut((0, qq), (mid, s)).copy_from(&r.beta);
    let s1 = lu_solve(&m1, &rhs1).ok_or(Error::NotSuitable { cond: report.cond })?;
    let alpha_hat = &q.alpha + &q.beta * s1.view((0, 0), (mid, qq));
    let beta_hat = &q.beta * s1.view((0, qq), (mid, s));

    // right-hand sides against (1 - delta alpha~)
    let m2 = &eye - &q.delta * &r.alpha;
    let mut rhs2 = CMatrix::zeros(mid, qq + s);
    rhs2.view_mut((0, 0), (mid, qq)).copy_from(&q.gamma);
    rhs2.view_mut((0, qq), (mid, s)).copy_from(&(&q.delta * &r.beta));
    let s2 = lu_solve(&m2, &rhs2).ok_or(Error::NotSuitable { cond: report.cond })?;
    let gamma_hat = &r.gamma * s2.view((0, 0), (mid, qq));
    let delta_hat = &r.delta + &r.gamma * s2.view((0, qq), (mid, s));

    BoundaryData::new(q.z, alpha_hat, beta_hat, gamma_hat, delta_hat)
}

#[derive(Debug, Clone, Default)]
pub struct SweepDiagnostics {
    /// (shell, reason) for every step where the fold fell back to the
    /// direct resolvent of the merged block.
    pub fallbacks: Vec<(usize, String)>,
    /// Worst suitability condition number along the fold.
    pub worst_cond: f64,
    /// Set when the whole sweep was re-run at a nudged real parameter.
    pub nudged_z: Option<C64>,
}

fn sweep_attempt(
    so: &ShellOperator,
    cd: &ChannelData,
    z: C64,
    n: usize,
    policy: &EvalPolicy,
) -> Result<(Vec<BoundaryData>, SweepDiagnostics)> {
    let mut diag = SweepDiagnostics::default();
    let mut trace: Vec<BoundaryData> = Vec::with_capacity(n + 1);
    for k in 0..=n {
        if k == 0 {
            trace.push(shell_data(so, cd, 0, z, policy)?);
            continue;
        }
        let composed = shell_data(so, cd, k, z, policy).and_then(|rk| {
            let rep = is_suitable(trace.last().unwrap(), &rk, &policy.tol)?;
            diag.worst_cond = diag.worst_cond.max(rep.cond);
            if !rep.suitable {
                return Err(Error::NotSuitable { cond: rep.cond });
            }
            compose(trace.last().unwrap(), &rk, &policy.tol)
        });
        match composed {
            Ok(acc) => trace.push(acc),
            Err(err) => {
                // merge shells 0..=k and take the dense resolvent instead
                let direct = boundary_data_direct(so, cd, 0, k, z, policy).map_err(|e| {
                    Error::SweepFailed {
                        shell: k,
                        reason: format!("composition failed ({err}); direct fallback failed ({e})"),
                    }
                })?;
                diag.fallbacks.push((k, err.to_string()));
                trace.push(direct);
            }
        }
    }
    Ok((trace, diag))
}

/// Left fold `R_0 <| R_1 <| ... <| R_n`, returning all intermediate data
/// R_{0,k} for k = 0..=n together with diagnostics. If the fold cannot be
/// completed at a real parameter, the whole sweep is retried at a nudged
/// parameter (policy permitting) and the nudge is recorded.
pub fn sweep_trace(
    so: &ShellOperator,
    cd: &ChannelData,
    z: C64,
    n: usize,
    policy: &EvalPolicy,
) -> Result<(Vec<BoundaryData>, SweepDiagnostics)> {
    if n > cd.max_boundary_depth() {
        return Err(Error::InvalidInput(format!(
            "sweep to depth {n} exceeds max boundary depth {}",
            cd.max_boundary_depth()
        )));
    }
    match sweep_attempt(so, cd, z, n, policy) {
        Ok(out) => Ok(out),
        Err(first_err) => {
            if !(policy.allow_nudge && z.im == 0.0) {
                return Err(first_err);
            }
            let step = policy.nudge_rel * (1.0 + z.re.abs());
            for sign in [1.0, -1.0] {
                let z2 = c64(z.re + sign * step, 0.0);
                if let Ok((trace, mut diag)) = sweep_attempt(so, cd, z2, n, policy) {
                    diag.nudged_z = Some(z2);
                    return Ok((trace, diag));
                }
            }
            Err(first_err)
        }
    }
}

/// Boundary data R_{0,n} by shell-by-shell composition.
pub fn sweep(
    so: &ShellOperator,
    cd: &ChannelData,
    z: C64,
    n: usize,
    policy: &EvalPolicy,
) -> Result<(BoundaryData, SweepDiagnostics)> {
    let (trace, diag) = sweep_trace(so, cd, z, n, policy)?;
    Ok((trace.into_iter().last().expect("non-empty trace"), diag))
}

/// Rank-one-family perturbed blocks under a dissipative boundary matrix A:
/// `gamma^A = (1 - delta A)^{-1} gamma` and
/// `alpha^A = alpha + beta A (1 - delta A)^{-1} gamma`.
pub fn perturbed_blocks(
    r: &BoundaryData,
    a: &CMatrix,
    tol: &TolerancePolicy,
) -> Result<(CMatrix, CMatrix)> {
    let rr = r.r();
    if a.nrows() != rr || a.ncols() != rr {
        return Err(Error::DimensionMismatch(format!(
            "perturbation must be {rr}x{rr}, got {}x{}",
            a.nrows(),
            a.ncols()
        )));
    }
    let m = CMatrix::identity(rr, rr) - &r.delta * a;
    let cond = cond_number(&m);
    if !cond.is_finite() || cond > tol.suitability_cond_max {
        return Err(Error::NotInvertible { cond });
    }
    let gamma_a = lu_solve(&m, &r.gamma).ok_or(Error::NotInvertible { cond })?;
    let alpha_a = &r.alpha + &r.beta * a * &gamma_a;
    Ok((alpha_a, gamma_a))
}

/// Random element of the dissipative cone M(q, r, +): Hermitian real part
/// plus a strictly positive imaginary part, so Im(alpha), Im(delta) > 0 and
/// Im(block) > 0.
pub fn sample_m_plus<R: rand::Rng>(rng: &mut R, q: usize, r: usize, z: C64) -> BoundaryData {
    let n = q + r;
    let h = crate::sampling::random_hermitian(rng, n, 1.0);
    let p = crate::sampling::random_psd(rng, n, 0.05);
    let block = h + p.map(|x| x * c64(0.0, 1.0));
    BoundaryData::from_block(z, &block, q).expect("consistent block")
}
