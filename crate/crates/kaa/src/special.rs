//! Scalar special functions of the hyperbolic Kepler geometry and the
//! implicit solve recovering the radial variable `rho` (and its logarithm
//! `sigma`) from the scattering labels `(eta, kappa)`.
//!
//! All of these are functions of the rescaled radius `rho = r / r_min >= 1`.
//! Internally the solve is parametrised by `s >= 0` with
//! `rho = cosh(s)^2`, which makes every relation analytic across the fold
//! `rho = 1` and free of cancellation for large `rho`:
//!
//! * `sqrt(rho (rho-1)) = sinh(2s)/2`
//! * `G(rho) = sinh(2s)/2 + s`
//! * `P_±(rho) = exp(±2s)`
//! * `sigma = -iota * s`

use crate::error::{Error, Result};

/// Fold branch tag `iota`: which generating function a trajectory segment
/// uses. `Incoming` (`iota = -1`) is the pre-periapsis side, `Outgoing`
/// (`iota = +1`) the post-periapsis side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Incoming,
    Outgoing,
}

impl Branch {
    /// The sign `iota` as a float.
    pub fn sign(self) -> f64 {
        match self {
            Branch::Incoming => -1.0,
            Branch::Outgoing => 1.0,
        }
    }

    pub fn flip(self) -> Branch {
        match self {
            Branch::Incoming => Branch::Outgoing,
            Branch::Outgoing => Branch::Incoming,
        }
    }
}

/// `K(s) = sqrt(s(s-1)) - ln(sqrt(s) + sqrt(s-1))`, vanishing at `s = 1`.
///
/// Near `s = 1` the two terms cancel to third order in `w = sqrt(s-1)`;
/// a short series keeps full relative accuracy there.
pub fn kfun(s: f64) -> f64 {
    debug_assert!(s >= 1.0);
    let w2 = s - 1.0;
    if w2 < 1e-4 {
        let w = w2.sqrt();
        let w3 = w * w2;
        w3 * (2.0 / 3.0 - w2 / 5.0 + 3.0 * w2 * w2 / 28.0)
    } else {
        let w = w2.sqrt();
        (s * w2).sqrt() - w.asinh()
    }
}

/// `K'(s) = sqrt(1 - 1/s)`.
pub fn kfun_prime(s: f64) -> f64 {
    debug_assert!(s >= 1.0);
    (1.0 - 1.0 / s).max(0.0).sqrt()
}

/// `G(y) = sqrt(y(y-1)) + ln(sqrt(y) + sqrt(y-1))`, vanishing at `y = 1`.
pub fn gfun(y: f64) -> f64 {
    debug_assert!(y >= 1.0);
    let w2 = y - 1.0;
    (y * w2).sqrt() + w2.sqrt().asinh()
}

/// `P_+(y) = 2y - 1 + 2 sqrt(y(y-1))`.
pub fn pfun_plus(y: f64) -> f64 {
    debug_assert!(y >= 1.0);
    2.0 * y - 1.0 + 2.0 * (y * (y - 1.0)).sqrt()
}

/// `P_-(y) = 2y - 1 - 2 sqrt(y(y-1)) = 1 / P_+(y)`, computed through the
/// reciprocal to avoid cancellation for large `y`.
pub fn pfun_minus(y: f64) -> f64 {
    1.0 / pfun_plus(y)
}

/// `P_iota(y)` selected by branch sign.
pub fn pfun(branch: Branch, y: f64) -> f64 {
    match branch {
        Branch::Outgoing => pfun_plus(y),
        Branch::Incoming => pfun_minus(y),
    }
}

/// `D(kappa, y) = sqrt(y^2 + kappa^2 + 1/4) - y`, stable for large positive
/// `y`. Takes `kappa^2` so callers with a signed `kappa` need not care.
pub fn dfun(kappa_sq: f64, y: f64) -> f64 {
    let root = (y * y + kappa_sq + 0.25).sqrt();
    if y > 0.0 {
        (kappa_sq + 0.25) / (root + y)
    } else {
        root - y
    }
}

/// `N(kappa, y) = sqrt(y^2 + kappa^2 + 1/4) + 1/2 > 0`.
pub fn nfun(kappa_sq: f64, y: f64) -> f64 {
    (y * y + kappa_sq + 0.25).sqrt() + 0.5
}

/// Result of the implicit solve: `rho >= 1`, `sigma = -iota ln(sqrt(rho) +
/// sqrt(rho-1))`, and the fold parameter `s = |sigma| >= 0`.
#[derive(Debug, Clone, Copy)]
pub struct RhoSigma {
    pub rho: f64,
    pub sigma: f64,
    pub branch: Branch,
    /// `s = arcosh(sqrt(rho)) = |sigma|`.
    pub s: f64,
}

/// Relative tolerance of the accepted branch-domain overshoot.
fn branch_tol(eta: f64, kappa_sq: f64) -> f64 {
    1e-9 * (1.0 + eta.abs() + kappa_sq)
}

/// Target residual of the implicit solve, well inside the declared
/// `1e-10 (1 + |eta|)` budget.
fn solve_tol(eta: f64) -> f64 {
    1e-13 * (1.0 + eta.abs())
}

/// The defining relation in the `s` parametrisation:
/// `eta = iota (sinh(2s)/2 + s) - kappa^2 exp(-2 iota s)`.
fn eta_of_s(s: f64, kappa_sq: f64, iota: f64) -> f64 {
    iota * (0.5 * (2.0 * s).sinh() + s) - kappa_sq * (-2.0 * iota * s).exp()
}

fn eta_of_s_deriv(s: f64, kappa_sq: f64, iota: f64) -> f64 {
    iota * ((2.0 * s).cosh() + 1.0) + 2.0 * iota * kappa_sq * (-2.0 * iota * s).exp()
}

/// Solve `eta - iota G(rho) + kappa^2 P_{-iota}(rho) = 0` for `rho >= 1`.
///
/// The map `eta(s)` is strictly monotone on each branch (increasing for the
/// outgoing branch, decreasing for the incoming one), so a bracketed Newton
/// iteration cannot fail. Inputs on the wrong side of `eta = -kappa^2` by
/// more than a small tolerance are rejected.
pub fn rho_sigma_solve(eta: f64, kappa: f64, branch: Branch) -> Result<RhoSigma> {
    let kappa_sq = kappa * kappa;
    let iota = branch.sign();
    // Signed distance into the branch's half-line.
    let excess = iota * (eta + kappa_sq);
    if excess < 0.0 {
        if excess > -branch_tol(eta, kappa_sq) {
            return Ok(RhoSigma { rho: 1.0, sigma: 0.0, branch, s: 0.0 });
        }
        return Err(Error::Branch(format!(
            "eta = {eta} is on the wrong side of -kappa^2 = {} for branch {branch:?}",
            -kappa_sq
        )));
    }

    // Initial guess: linear near the fold, logarithmic in the tail where
    // eta(s) ~ +-exp(2s) * coefficient.
    let slope0 = 2.0 + 2.0 * kappa_sq;
    let tail_coeff = match branch {
        Branch::Outgoing => 0.25,
        Branch::Incoming => 0.25 + kappa_sq,
    };
    let mut s = if excess < 4.0 * slope0 {
        excess / slope0
    } else {
        0.5 * (excess / tail_coeff).ln().max(0.0)
    };

    // Establish an enclosing bracket [lo, hi] in s.
    let target = eta;
    let mut lo = 0.0_f64;
    let mut hi = (2.0 * s).max(1.0);
    for _ in 0..200 {
        if iota * (eta_of_s(hi, kappa_sq, iota) - target) >= 0.0 {
            break;
        }
        lo = hi;
        hi *= 2.0;
    }

    let tol = solve_tol(eta);
    s = s.clamp(lo, hi);
    let mut resid = eta_of_s(s, kappa_sq, iota) - target;
    for _ in 0..80 {
        if resid.abs() <= tol {
            break;
        }
        if iota * resid > 0.0 {
            hi = s;
        } else {
            lo = s;
        }
        let step = resid / eta_of_s_deriv(s, kappa_sq, iota);
        let next = s - step;
        s = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        resid = eta_of_s(s, kappa_sq, iota) - target;
    }
    if resid.abs() > 1e-10 * (1.0 + eta.abs()) {
        return Err(Error::Convergence(format!(
            "rho solve stalled at eta = {eta}, kappa = {kappa}, residual = {resid}"
        )));
    }

    let c = s.cosh();
    Ok(RhoSigma { rho: c * c, sigma: -iota * s, branch, s })
}

/// Residual of the defining relation at a given `rho`; used by tests and by
/// the verification suites as an independent check of the solve.
pub fn rho_residual(eta: f64, kappa: f64, branch: Branch, rho: f64) -> f64 {
    let iota = branch.sign();
    eta - iota * gfun(rho) + kappa * kappa * pfun(branch.flip(), rho)
}

/// `d sigma / d eta = -1 / (2 (rho + kappa^2 P_{-iota}(rho)))`.
pub fn sigma_deta(kappa: f64, branch: Branch, rho: f64) -> f64 {
    let kappa_sq = kappa * kappa;
    -1.0 / (2.0 * (rho + kappa_sq * pfun(branch.flip(), rho)))
}

/// `d rho / d eta = iota sqrt(rho(rho-1)) / (rho + kappa^2 P_{-iota}(rho))`.
pub fn rho_deta(kappa: f64, branch: Branch, rho: f64) -> f64 {
    let kappa_sq = kappa * kappa;
    branch.sign() * (rho * (rho - 1.0)).max(0.0).sqrt()
        / (rho + kappa_sq * pfun(branch.flip(), rho))
}
