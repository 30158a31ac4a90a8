//! Weyl discs: the set of candidate root resolvent entries under all
//! dissipative boundary conditions at finite depth.
//!
//! For root data (q = 1) at Im z > 0 the closure of
//! `alpha + beta A (1 - delta A)^{-1} gamma` over all A with Im(A) >= 0 is a
//! closed disc in the upper half plane with
//!
//! ```text
//! center = alpha + (i/2) beta I^{-1} gamma,      I = Im(delta) > 0,
//! radius = (1/2) |I^{-1/2} beta*| |I^{-1/2} gamma|.
//! ```
//!
//! The discs are nested in the depth and, for a self-adjoint operator,
//! shrink onto the true resolvent entry at the root vector.

use rand::Rng;

use crate::boundary::{boundary_data_direct, perturbed_blocks, sweep_trace, BoundaryData, EvalPolicy};
use crate::error::{Error, Result};
use crate::graph::{ChannelData, ShellOperator};
use crate::numerics::{
    c64, imag_part, lu_solve, min_eig_hermitian, sqrt_inv_pd, C64, CMatrix, TolerancePolicy,
};
use crate::sampling::{random_hermitian, random_psd, random_unitary, seeded_rng};

#[derive(Debug, Clone, Copy)]
pub struct WeylDisc {
    pub center: C64,
    pub radius: f64,
    pub depth: usize,
    pub z: C64,
}

impl WeylDisc {
    pub fn contains(&self, point: C64, slack: f64) -> bool {
        (point - self.center).norm() <= self.radius + slack
    }
}

/// Center and radius of the disc spanned by the dissipative boundary
/// perturbations of root data.
pub fn weyl_disc(data: &BoundaryData, depth: usize) -> Result<WeylDisc> {
    if data.q() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "Weyl disc needs root data (q = 1), got q = {}",
            data.q()
        )));
    }
    if data.z.im <= 0.0 {
        return Err(Error::InvalidInput("Weyl disc needs Im z > 0".into()));
    }
    let i_part = imag_part(&data.delta);
    let min_eig = min_eig_hermitian(&i_part);
    if !(min_eig > 0.0) {
        return Err(Error::NotPositiveDefinite { min_eig });
    }
    let x = lu_solve(&i_part, &data.gamma).ok_or(Error::NotPositiveDefinite { min_eig })?;
    let center = data.alpha[(0, 0)] + c64(0.0, 0.5) * (&data.beta * &x)[(0, 0)];
    let root = sqrt_inv_pd(&i_part)?;
    let left = (&root * data.beta.adjoint()).norm();
    let right = (&root * &data.gamma).norm();
    Ok(WeylDisc {
        center,
        radius: 0.5 * left * right,
        depth,
        z: data.z,
    })
}

/// Sampled points `alpha^{z,A}` for a mix of dissipative boundary matrices:
/// heavy-tailed Hermitian scalings, Hermitians with Cauchy spectra in random
/// bases, and strictly dissipative A = H + iP. All points lie in the disc;
/// for r >= 2 the Hermitian samples alone already fill it.
pub fn sample_disc(
    data: &BoundaryData,
    count: usize,
    seed: u64,
    tol: &TolerancePolicy,
) -> Result<Vec<C64>> {
    if data.q() != 1 {
        return Err(Error::DimensionMismatch("disc sampling needs root data".into()));
    }
    let r = data.r();
    let mut rng = seeded_rng(seed);
    let mut points = Vec::with_capacity(count);
    let mut attempts = 0usize;
    while points.len() < count && attempts < 20 * count + 100 {
        attempts += 1;
        let mode = attempts % 3;
        let a = match mode {
            0 => {
                // Hermitian with a half-Cauchy overall scale
                let u: f64 = rng.random_range(0.0..1.0);
                let t = (std::f64::consts::FRAC_PI_2 * u).tan();
                random_hermitian(&mut rng, r, t.max(1e-3))
            }
            1 => {
                // Cauchy spectrum in a random unitary basis
                let v = random_unitary(&mut rng, r);
                let mut d = CMatrix::zeros(r, r);
                for k in 0..r {
                    let u: f64 = rng.random_range(0.0..1.0);
                    d[(k, k)] = c64((std::f64::consts::PI * (u - 0.5)).tan(), 0.0);
                }
                &v * d * v.adjoint()
            }
            _ => {
                let h = random_hermitian(&mut rng, r, 1.0);
                let p = random_psd(&mut rng, r, 1e-3);
                h + p.map(|x| x * c64(0.0, 1.0))
            }
        };
        match perturbed_blocks(data, &a, tol) {
            Ok((alpha_a, _)) => points.push(alpha_a[(0, 0)]),
            Err(_) => continue,
        }
    }
    Ok(points)
}

#[derive(Debug, Clone, Copy)]
pub struct LimitPointRow {
    pub depth: usize,
    pub center: C64,
    pub radius: f64,
    pub truth: C64,
    pub center_err: f64,
}

/// Disc geometry across depths against the deepest truncated resolvent
/// entry: one sweep produces every intermediate boundary datum, the truth
/// column is the root entry of the dense resolvent at the largest depth.
pub fn limit_point_diagnostic(
    so: &ShellOperator,
    cd: &ChannelData,
    z: C64,
    depths: &[usize],
    policy: &EvalPolicy,
) -> Result<Vec<LimitPointRow>> {
    if z.im <= 0.0 {
        return Err(Error::InvalidInput("limit-point diagnostic needs Im z > 0".into()));
    }
    let mut depths = depths.to_vec();
    depths.sort_unstable();
    depths.dedup();
    let max = *depths
        .last()
        .ok_or_else(|| Error::InvalidInput("no depths requested".into()))?;
    let (trace, _) = sweep_trace(so, cd, z, max, policy)?;
    let deepest = boundary_data_direct(so, cd, 0, max, z, policy)?;
    let truth = deepest.alpha[(0, 0)];
    depths
        .iter()
        .map(|&k| {
            let disc = weyl_disc(&trace[k], k)?;
            Ok(LimitPointRow {
                depth: k,
                center: disc.center,
                radius: disc.radius,
                truth,
                center_err: (disc.center - truth).norm(),
            })
        })
        .collect()
}

/// Minimum truncated norm over formal solutions with unit root trace:
/// minimize |(H_{0,n} - z)^{-1} Phi_hat B|^2 subject to beta B = 1, solved
/// in closed form through the Gram matrix of the resolvent columns. This is
/// the solution side of the radius duality.
pub fn truncated_solution_min_norm(
    so: &ShellOperator,
    cd: &ChannelData,
    n: usize,
    z: C64,
    _policy: &EvalPolicy,
) -> Result<f64> {
    let (ups_hat, phi_hat) = crate::boundary::embedded_channels(so, cd, 0, n)?;
    let h = so.assemble_dense(0, n);
    let total = h.nrows();
    let mut shifted = h;
    for i in 0..total {
        shifted[(i, i)] -= z;
    }
    let g = lu_solve(&shifted, &phi_hat).ok_or(Error::SingularSpectralParameter { z })?;
    let beta = ups_hat.adjoint() * &g; // 1 x r
    let m = g.adjoint() * &g;
    let y = lu_solve(&m, &beta.adjoint()).ok_or(Error::ZeroGamma)?;
    let denom = (&beta * &y)[(0, 0)].re;
    if !(denom > 0.0) {
        return Err(Error::ZeroGamma);
    }
    Ok(1.0 / denom)
}
