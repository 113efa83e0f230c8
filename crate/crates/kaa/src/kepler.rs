//! Exact transforms for the repulsive Kepler problem
//! `x'' = (q/2) x / |x|^3`, `q > 0`.
//!
//! Every trajectory is a scattering orbit. The asymptotic action `a` of a
//! state is its forward-limit velocity; together with a conjugate angle
//! `theta` it forms canonical coordinates in which the flow is the straight
//! line `(theta, a) -> (theta + t a, a)`. The map position/velocity <->
//! angle/action is two-valued in the radial direction (a trajectory passes
//! any radius once inbound and once outbound), so states carry a fold branch
//! tag; the two branches glue smoothly along the fold surface
//! `x.v = -sqrt(H) L^2 / q`.
//!
//! A redundant chart `(xi, eta, lambda, u, L)` built from the angle-action
//! pair isolates the single evolving quantity: only `eta` moves under the
//! flow, at the constant rate `q^2 / xi^3`.

use crate::error::{Error, Result};
use crate::special::{
    self, dfun, gfun, kfun, kfun_prime, nfun, pfun, rho_sigma_solve, Branch,
};
use crate::Vec3;
use serde::{Deserialize, Serialize};

/// Physical coupling constants of the gas / point-charge system.
///
/// `q` is the Kepler coupling between a gas particle and the charge (the
/// only constant the coordinate transforms use), `gas_coupling` the gas
/// self-interaction strength, `charge_coupling` the back-reaction strength
/// on the charge, and `m_gas`, `m_charge` the inertial weights entering the
/// conserved momentum and energy.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Params {
    pub q: f64,
    #[serde(rename = "Q", default)]
    pub gas_coupling: f64,
    #[serde(rename = "Qc", default)]
    pub charge_coupling: f64,
    #[serde(rename = "mg", default = "one")]
    pub m_gas: f64,
    #[serde(rename = "Mc", default = "one")]
    pub m_charge: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for Params {
    fn default() -> Self {
        Params { q: 1.0, gas_coupling: 1.0, charge_coupling: 1.0, m_gas: 1.0, m_charge: 1.0 }
    }
}

impl Params {
    /// Kepler-only parameter set (no mean field).
    pub fn kepler_only(q: f64) -> Self {
        Params { q, gas_coupling: 0.0, charge_coupling: 0.0, ..Params::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.q > 0.0) {
            return Err(Error::Config("q must be > 0 (repulsive case)".into()));
        }
        if self.gas_coupling < 0.0 || self.charge_coupling < 0.0 {
            return Err(Error::Config("couplings must be >= 0".into()));
        }
        if !(self.m_gas > 0.0) || !(self.m_charge > 0.0) {
            return Err(Error::Config("masses must be > 0".into()));
        }
        Ok(())
    }
}

/// A point of physical phase space, `|x| > 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub x: Vec3,
    pub v: Vec3,
}

impl PhaseState {
    pub fn new(x: Vec3, v: Vec3) -> Self {
        PhaseState { x, v }
    }
}

/// The conserved quantities of a state: energy `H`, angular momentum `L`
/// and the Runge-Lenz vector `R`.
#[derive(Debug, Clone, Copy)]
pub struct ConservedSet {
    pub h: f64,
    pub lvec: Vec3,
    pub rvec: Vec3,
}

/// Angle-action coordinates with the fold branch tag.
#[derive(Debug, Clone, Copy)]
pub struct ActionAngle {
    pub theta: Vec3,
    pub a: Vec3,
    pub branch: Branch,
}

/// The redundant scattering chart `(xi, eta, lambda, u, L)`.
///
/// `xi = q/|a|`, `eta = (|a|/q) theta.a`, `u = a/|a|`, `lambda = |L|` and
/// `kappa = lambda/xi` are carried redundantly; `kappa` is signed so that
/// the past-coordinate reflection (`xi -> -xi`) keeps `kappa = lambda/xi`
/// consistent.
#[derive(Debug, Clone, Copy)]
pub struct SICCoords {
    pub xi: f64,
    pub eta: f64,
    pub lambda: f64,
    pub u: Vec3,
    pub lvec: Vec3,
    pub kappa: f64,
}

/// `rho >= 1` and its signed logarithm `sigma` for a state or label pair.
pub use crate::special::RhoSigma;

/// Which side of the fold a state is on, with an explicit marker for states
/// within `tol_fold` of the fold itself (where both branches agree).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FoldSide {
    Incoming,
    Outgoing,
    OnFold,
}

impl FoldSide {
    /// Collapse to a branch tag; on-fold states may use either branch, the
    /// outgoing one is chosen.
    pub fn branch(self) -> Branch {
        match self {
            FoldSide::Incoming => Branch::Incoming,
            _ => Branch::Outgoing,
        }
    }
}

/// Default relative width of the on-fold band.
pub const FOLD_TOL_FACTOR: f64 = 1e-10;

fn require_off_origin(s: &PhaseState) -> Result<f64> {
    let r = s.x.norm();
    if r > 0.0 {
        Ok(r)
    } else {
        Err(Error::Domain("state at the collision point |x| = 0".into()))
    }
}

/// Energy, angular momentum and Runge-Lenz vector of a state.
///
/// `H = |v|^2 + q/|x|`, `L = x x v`, `R = v x L + (q/2) x/|x|`; they satisfy
/// `(2|R|)^2 = 4 H |L|^2 + q^2` and `L.R = 0` identically.
pub fn conserved(s: &PhaseState, p: &Params) -> Result<ConservedSet> {
    let r = require_off_origin(s)?;
    let h = s.v.norm_squared() + p.q / r;
    let lvec = s.x.cross(&s.v);
    let rvec = s.v.cross(&lvec) + (0.5 * p.q / r) * s.x;
    Ok(ConservedSet { h, lvec, rvec })
}

/// Forward asymptotic velocity of the trajectory through `s`, from the
/// conserved quantities alone:
/// `A = (2 q sqrt(H) R + 4 H L x R) / (4 H L^2 + q^2)`.
pub fn action(s: &PhaseState, p: &Params) -> Result<Vec3> {
    let c = conserved(s, p)?;
    let denom = 4.0 * c.h * c.lvec.norm_squared() + p.q * p.q;
    Ok((2.0 * p.q * c.h.sqrt() / denom) * c.rvec + (4.0 * c.h / denom) * c.lvec.cross(&c.rvec))
}

/// Rescaled radius `rho(x, a) = (|a|/2q)(|x||a| + a.x) >= 0`.
///
/// For `a.x < 0` the sum is evaluated through `|a x x|^2 / (|x||a| - a.x)`
/// to avoid cancellation when `x` and `a` are nearly anti-parallel.
pub fn rho_of_xa(x: &Vec3, a: &Vec3, p: &Params) -> f64 {
    let an = a.norm();
    let xn = x.norm();
    let dot = a.dot(x);
    let sum = if dot >= 0.0 {
        xn * an + dot
    } else {
        a.cross(x).norm_squared() / (xn * an - dot)
    };
    an / (2.0 * p.q) * sum
}

/// Signed distance of a state to the fold surface, `x.v + sqrt(H) L^2 / q`,
/// together with the natural magnitude scale used for the on-fold test.
pub fn fold_margin(s: &PhaseState, p: &Params) -> Result<(f64, f64)> {
    let c = conserved(s, p)?;
    let sqrt_h = c.h.sqrt();
    let l2 = c.lvec.norm_squared();
    let margin = s.x.dot(&s.v) + sqrt_h * l2 / p.q;
    let scale = p.q / sqrt_h + s.x.norm() * s.v.norm() + sqrt_h * l2 / p.q;
    Ok((margin, scale))
}

/// Which side of the fold `s` lies on, with the default tolerance band.
pub fn fold_branch(s: &PhaseState, p: &Params) -> Result<FoldSide> {
    fold_branch_with_tol(s, p, FOLD_TOL_FACTOR)
}

/// As [`fold_branch`] with an explicit relative band width.
pub fn fold_branch_with_tol(s: &PhaseState, p: &Params, tol_factor: f64) -> Result<FoldSide> {
    let (margin, scale) = fold_margin(s, p)?;
    if margin.abs() < tol_factor * scale {
        Ok(FoldSide::OnFold)
    } else if margin > 0.0 {
        Ok(FoldSide::Outgoing)
    } else {
        Ok(FoldSide::Incoming)
    }
}

/// Generating function of the scattering problem with asymptotic velocity
/// `a` through the point `x`:
/// `S = iota (q/|a|) K(rho) - (|x||a| - x.a)/2`.
pub fn generating(x: &Vec3, a: &Vec3, branch: Branch, p: &Params) -> Result<f64> {
    let rho = rho_of_xa(x, a, p);
    if rho < 1.0 - 1e-9 {
        return Err(Error::Domain(format!(
            "rho = {rho} < 1: no real trajectory with this asymptotic velocity through x"
        )));
    }
    let an = a.norm();
    let xn = x.norm();
    Ok(branch.sign() * (p.q / an) * kfun(rho.max(1.0)) - 0.5 * (xn * an - x.dot(a)))
}

/// Angle-action coordinates of a state: `a` is the asymptotic velocity and
/// `theta` the `a`-gradient of the generating function on the state's fold
/// branch. Satisfies `theta x a = x x v` and
/// `x.v - theta.a = iota (q/|a|) (K(rho) - rho K'(rho))`.
pub fn angle(s: &PhaseState, p: &Params) -> Result<ActionAngle> {
    let a = action(s, p)?;
    let branch = fold_branch(s, p)?.branch();
    let rho = rho_of_xa(&s.x, &a, p);
    let theta = if rho < 1.001 {
        // Near the fold rho - 1 vanishes quadratically in the distance to
        // it, so sqrt(rho - 1) computed from rho loses half the digits.
        // Recover s (rho = cosh^2 s) instead from the fold margin
        // m = (a/q)(x.v + a L^2/q), which is linear in the distance:
        // sinh(s)cosh(s) + kappa^2 iota (1 - e^{-2 iota s}) = iota m.
        let an = a.norm();
        let lvec = s.x.cross(&s.v);
        let k2 = an * an * lvec.norm_squared() / (p.q * p.q);
        let m = an / p.q * (s.x.dot(&s.v) + an * lvec.norm_squared() / p.q);
        let sf = fold_s_solve(m, k2, branch);
        let (sh, ch) = (sf.sinh(), sf.cosh());
        theta_from_parts(&s.x, &a, sh * ch - sf, sh / ch, branch, p)
    } else {
        angle_from_xa(&s.x, &a, branch, p)
    };
    Ok(ActionAngle { theta, a, branch })
}

/// Solve `sinh(s)cosh(s) + kappa^2 iota (1 - e^{-2 iota s}) = iota m` for
/// `s >= 0` by Newton from the linearization; every term vanishes linearly
/// at the fold, so the solve is well conditioned arbitrarily close to it.
fn fold_s_solve(m: f64, kappa_sq: f64, branch: Branch) -> f64 {
    let target = (branch.sign() * m).max(0.0);
    let mut s = target / (1.0 + 2.0 * kappa_sq);
    for _ in 0..50 {
        let (g, e) = match branch {
            Branch::Outgoing => (-f64::exp_m1(-2.0 * s), (-2.0 * s).exp()),
            Branch::Incoming => (f64::exp_m1(2.0 * s), (2.0 * s).exp()),
        };
        let f = 0.5 * (2.0 * s).sinh() + kappa_sq * g - target;
        let df = (2.0 * s).cosh() + 2.0 * kappa_sq * e;
        let step = f / df;
        s = (s - step).max(0.0);
        if step.abs() < 1e-16 * (1.0 + s) {
            break;
        }
    }
    s
}

/// `theta = grad_a S(x, a)` in closed form; shared by [`angle`] and the
/// scattering solver tests.
pub fn angle_from_xa(x: &Vec3, a: &Vec3, branch: Branch, p: &Params) -> Vec3 {
    let rho = rho_of_xa(x, a, p).max(1.0);
    theta_from_parts(x, a, kfun(rho), kfun_prime(rho), branch, p)
}

/// `theta` from precomputed `K(rho)` and `K'(rho)`:
/// `theta = iota q [-(K/a^2) a/|a| + (K'/a) grad_a rho] - (|x| a/|a| - x)/2`
/// with `grad_a rho = ((x.a + 2 |x||a|) a/|a| + |a| x) / (2q)`.
fn theta_from_parts(x: &Vec3, a: &Vec3, kval: f64, kprime: f64, branch: Branch, p: &Params) -> Vec3 {
    let an = a.norm();
    let xn = x.norm();
    let ahat = a / an;
    let grad_rho = ((x.dot(a) + 2.0 * xn * an) * ahat + an * x) / (2.0 * p.q);
    let iota = branch.sign();
    iota * p.q * (-(kval / (an * an)) * ahat + (kprime / an) * grad_rho)
        - 0.5 * (xn * ahat - x)
}

/// Build the redundant chart from an angle-action pair.
pub fn to_sic(aa: &ActionAngle, p: &Params) -> SICCoords {
    let an = aa.a.norm();
    let xi = p.q / an;
    let u = aa.a / an;
    let lvec = aa.theta.cross(&aa.a);
    let lambda = lvec.norm();
    let eta = an / p.q * aa.theta.dot(&aa.a);
    SICCoords { xi, eta, lambda, u, lvec, kappa: lambda / xi }
}

/// Reconstruct the angle-action pair:
/// `a = (q/xi) u`, `theta = (xi^2/q) eta u - (xi/q) L x u`.
pub fn from_sic(c: &SICCoords, p: &Params) -> ActionAngle {
    let a = (p.q / c.xi) * c.u;
    let theta = (c.xi * c.xi / p.q) * c.eta * c.u - (c.xi / p.q) * c.lvec.cross(&c.u);
    let branch = sic_branch(c);
    ActionAngle { theta, a, branch }
}

/// Fold branch implied by the labels: outgoing iff `eta >= -kappa^2`.
pub fn sic_branch(c: &SICCoords) -> Branch {
    if c.eta + c.kappa * c.kappa >= 0.0 {
        Branch::Outgoing
    } else {
        Branch::Incoming
    }
}

/// Solve for `rho` on a given branch; thin wrapper over the scalar solver.
pub fn rho_solve(eta: f64, kappa: f64, branch: Branch) -> Result<f64> {
    Ok(rho_sigma_solve(eta, kappa, branch)?.rho)
}

/// Solve for `(rho, sigma)` on a given branch.
pub fn sigma(eta: f64, kappa: f64, branch: Branch) -> Result<RhoSigma> {
    rho_sigma_solve(eta, kappa, branch)
}

/// A past-orientation chart (`xi < 0`) labels the same trajectory point by
/// the chart of its time-reversed twin: positive `xi`, same `eta`, negated
/// angular momentum vector. Positions agree; the velocity formula then
/// yields the reversed state's velocity, i.e. minus the physical one.
fn mirror_if_past(c: &SICCoords) -> SICCoords {
    if c.xi >= 0.0 {
        *c
    } else {
        SICCoords {
            xi: -c.xi,
            eta: c.eta,
            lambda: c.lambda,
            u: c.u,
            lvec: -c.lvec,
            kappa: c.lambda / -c.xi,
        }
    }
}

/// Physical position of the chart point. With `y = eta + sigma`,
/// `f = 1 + 4 kappa^2`, `D = D(kappa, y)`:
/// `X = (xi^2/q)(y + 1/2 + D/f) u - (xi/q)(1 + 2D/f) L x u`.
pub fn position(c: &SICCoords, p: &Params) -> Result<Vec3> {
    let c = mirror_if_past(c);
    let c = &c;
    let (y, k2) = sic_y(c)?;
    let f = 1.0 + 4.0 * k2;
    let d = dfun(k2, y);
    Ok((c.xi * c.xi / p.q) * (y + 0.5 + d / f) * c.u
        - (c.xi / p.q) * (1.0 + 2.0 * d / f) * c.lvec.cross(&c.u))
}

/// Physical velocity of the chart point. With `N = N(kappa, y)`:
/// `V = (q/xi)(1 - 1/(2N) - D/(f N)) u + (q/xi^2)(2/f)(D/N) L x u`.
pub fn velocity(c: &SICCoords, p: &Params) -> Result<Vec3> {
    let c = mirror_if_past(c);
    let c = &c;
    let (y, k2) = sic_y(c)?;
    let f = 1.0 + 4.0 * k2;
    let d = dfun(k2, y);
    let n = nfun(k2, y);
    Ok((p.q / c.xi) * (1.0 - 0.5 / n - d / (f * n)) * c.u
        + (p.q / (c.xi * c.xi)) * (2.0 / f) * (d / n) * c.lvec.cross(&c.u))
}

fn sic_y(c: &SICCoords) -> Result<(f64, f64)> {
    let k2 = c.kappa * c.kappa;
    let branch = sic_branch(c);
    let rs = rho_sigma_solve(c.eta, c.kappa.abs(), branch)?;
    Ok((c.eta + rs.sigma, k2))
}

/// `|X|` from the labels alone:
/// `|X| = (xi^2/2q)(1 + sqrt(1 + 4 kappa^2 + 4 (eta + sigma)^2))`.
pub fn radius_from_labels(c: &SICCoords, p: &Params) -> Result<f64> {
    let c = mirror_if_past(c);
    let c = &c;
    let (y, k2) = sic_y(c)?;
    Ok(c.xi * c.xi / (2.0 * p.q) * (1.0 + (1.0 + 4.0 * k2 + 4.0 * y * y).sqrt()))
}

/// The linearized flow: `(theta, a) -> (theta + t a, a)`.
pub fn linear_flow(aa: &ActionAngle, t: f64) -> ActionAngle {
    ActionAngle { theta: aa.theta + t * aa.a, a: aa.a, branch: aa.branch }
}

/// Exact time-`t` solution of the equation of motion through `s`: transform
/// to angle-action coordinates, translate the angle, transform back.
pub fn kepler_propagate(s: &PhaseState, t: f64, p: &Params) -> Result<PhaseState> {
    let aa = angle(s, p)?;
    let flowed = linear_flow(&aa, t);
    let c = to_sic(&flowed, p);
    Ok(PhaseState { x: position(&c, p)?, v: velocity(&c, p)? })
}

/// Time of closest approach and the state there. In the chart, periapsis
/// sits at `eta = ln(1 + 4 kappa^2)/4`, and `eta` moves at the constant
/// rate `|a|^3/q`.
pub fn periapsis(s: &PhaseState, p: &Params) -> Result<(f64, PhaseState)> {
    let aa = angle(s, p)?;
    let c = to_sic(&aa, p);
    let an = aa.a.norm();
    let eta_p = 0.25 * (1.0 + 4.0 * c.kappa * c.kappa).ln();
    let t_p = (eta_p - c.eta) * p.q / (an * an * an);
    let s_p = kepler_propagate(s, t_p, p)?;
    Ok((t_p, s_p))
}

/// Reflected chart labelling the same trajectory by its *past* asymptotic
/// velocity. An involution; the reflected chart reproduces the same
/// position and the negated velocity.
pub fn past_coords(c: &SICCoords) -> SICCoords {
    let k2 = c.kappa * c.kappa;
    let f = 1.0 + 4.0 * k2;
    let u_past = ((1.0 - 4.0 * k2) * c.u - (4.0 / c.xi) * c.lvec.cross(&c.u)) / f;
    SICCoords {
        xi: -c.xi,
        eta: -c.eta + 0.5 * f.ln(),
        lambda: c.lambda,
        u: u_past,
        lvec: c.lvec,
        kappa: c.lambda / -c.xi,
    }
}

/// Velocities of trajectories with asymptotic velocity `a` passing through
/// `x0`: none if `rho < 1`, one grazing solution on the fold, two otherwise
/// (returned with the smaller-angular-momentum branch first).
pub fn scattering_solutions(x0: &Vec3, a: &Vec3, p: &Params) -> Vec<Vec3> {
    let rho = rho_of_xa(x0, a, p);
    let tol = 1e-9 * (1.0 + rho);
    if rho < 1.0 - tol {
        return Vec::new();
    }
    let an = a.norm();
    let xhat = x0 / x0.norm();
    let v_of = |branch: Branch| -> Vec3 {
        let kp = kfun_prime(rho.max(1.0));
        0.5 * (branch.sign() * kp * (an * xhat + a) - (an * xhat - a))
    };
    if rho < 1.0 + tol {
        return vec![v_of(Branch::Outgoing)];
    }
    let v_in = v_of(Branch::Incoming);
    let v_out = v_of(Branch::Outgoing);
    let l_in = x0.cross(&v_in).norm();
    let l_out = x0.cross(&v_out).norm();
    if l_in <= l_out {
        vec![v_in, v_out]
    } else {
        vec![v_out, v_in]
    }
}

/// Rescaling relation `x.v - theta.a = iota (q/|a|)(K(rho) - rho K'(rho))`;
/// exposed for the verification suites.
pub fn rescaling_defect(s: &PhaseState, aa: &ActionAngle, p: &Params) -> f64 {
    let rho = rho_of_xa(&s.x, &aa.a, p).max(1.0);
    let an = aa.a.norm();
    let rhs = aa.branch.sign() * (p.q / an) * (kfun(rho) - rho * kfun_prime(rho));
    (s.x.dot(&s.v) - aa.theta.dot(&aa.a)) - rhs
}

/// Defining relation residual for a chart point and a candidate `rho`; see
/// [`special::rho_residual`].
pub fn label_residual(c: &SICCoords, rho: f64) -> f64 {
    special::rho_residual(c.eta, c.kappa.abs(), sic_branch(c), rho)
}

/// Helper: `P_{-iota}` at `rho`, used by bracket-table checks.
pub fn p_opposite(branch: Branch, rho: f64) -> f64 {
    pfun(branch.flip(), rho)
}

/// `G`, re-exported for tests and suites.
pub fn g_of(rho: f64) -> f64 {
    gfun(rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn v3(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    fn qp(q: f64) -> Params {
        Params::kepler_only(q)
    }

    #[test]
    fn conserved_example() {
        let p = qp(2.0);
        let s = PhaseState::new(v3(1.0, 0.0, 0.0), v3(0.0, 1.0, 0.0));
        let c = conserved(&s, &p).unwrap();
        assert_relative_eq!(c.h, 3.0, max_relative = 1e-15);
        assert_relative_eq!(c.lvec, v3(0.0, 0.0, 1.0), max_relative = 1e-15);
        assert_relative_eq!(c.rvec, v3(2.0, 0.0, 0.0), max_relative = 1e-15);
        // (2|R|)^2 = 4 H L^2 + q^2 : 16 = 12 + 4
        let lhs = 4.0 * c.rvec.norm_squared();
        let rhs = 4.0 * c.h * c.lvec.norm_squared() + p.q * p.q;
        assert_relative_eq!(lhs, rhs, max_relative = 1e-14);
    }

    #[test]
    fn conserved_zero_velocity() {
        let p = qp(1.0);
        let s = PhaseState::new(v3(1.0, 0.0, 0.0), Vec3::zeros());
        let c = conserved(&s, &p).unwrap();
        assert_relative_eq!(c.h, 1.0, max_relative = 1e-15);
        assert_eq!(c.lvec, Vec3::zeros());
        assert_relative_eq!(c.rvec, v3(0.5, 0.0, 0.0), max_relative = 1e-15);
    }

    #[test]
    fn conserved_orthogonality() {
        let p = qp(1.3);
        let s = PhaseState::new(v3(0.4, -1.1, 2.0), v3(0.3, 0.7, -0.2));
        let c = conserved(&s, &p).unwrap();
        assert!(c.rvec.dot(&c.lvec).abs() < 1e-14);
    }

    #[test]
    fn conserved_rejects_origin() {
        let p = qp(1.0);
        let s = PhaseState::new(Vec3::zeros(), v3(1.0, 0.0, 0.0));
        assert!(conserved(&s, &p).is_err());
    }

    #[test]
    fn action_example() {
        let p = qp(2.0);
        let s = PhaseState::new(v3(1.0, 0.0, 0.0), v3(0.0, 1.0, 0.0));
        let a = action(&s, &p).unwrap();
        assert_relative_eq!(a, v3(3.0f64.sqrt() / 2.0, 1.5, 0.0), max_relative = 1e-14);
        assert_relative_eq!(a.norm_squared(), 3.0, max_relative = 1e-14);
    }

    #[test]
    fn action_radial() {
        let p = qp(1.0);
        let s = PhaseState::new(v3(2.0, 0.0, 0.0), v3(1.0, 0.0, 0.0));
        let a = action(&s, &p).unwrap();
        assert_relative_eq!(a, v3(1.5f64.sqrt(), 0.0, 0.0), max_relative = 1e-14);
    }

    #[test]
    fn action_properties() {
        let p = qp(0.7);
        let s = PhaseState::new(v3(1.0, 2.0, -0.5), v3(-0.3, 0.2, 0.9));
        let c = conserved(&s, &p).unwrap();
        let a = action(&s, &p).unwrap();
        assert_relative_eq!(a.norm_squared(), c.h, max_relative = 1e-13);
        assert!(a.dot(&c.lvec).abs() < 1e-13);
    }

    #[test]
    fn rho_examples() {
        let p = qp(1.0);
        assert_relative_eq!(
            rho_of_xa(&v3(4.0, 0.0, 0.0), &v3(1.0, 0.0, 0.0), &p),
            4.0,
            max_relative = 1e-15
        );
        // perpendicular: rho = |x| |a|^2 / (2q)
        assert_relative_eq!(
            rho_of_xa(&v3(3.0, 0.0, 0.0), &v3(0.0, 2.0, 0.0), &p),
            6.0,
            max_relative = 1e-14
        );
        // anti-parallel: exact zero via the stable form
        assert_eq!(rho_of_xa(&v3(5.0, 0.0, 0.0), &v3(-2.0, 0.0, 0.0), &p), 0.0);
    }

    #[test]
    fn fold_branch_cases() {
        let p = qp(1.0);
        // radial periapsis: x.v = 0, L = 0 -> on fold
        let s = PhaseState::new(v3(1.0, 0.0, 0.0), Vec3::zeros());
        assert_eq!(fold_branch(&s, &p).unwrap(), FoldSide::OnFold);
        // outgoing radial
        let s = PhaseState::new(v3(1.0, 0.0, 0.0), v3(1.0, 0.0, 0.0));
        assert_eq!(fold_branch(&s, &p).unwrap(), FoldSide::Outgoing);
        // incoming radial
        let s = PhaseState::new(v3(1.0, 0.0, 0.0), v3(-1.0, 0.0, 0.0));
        assert_eq!(fold_branch(&s, &p).unwrap(), FoldSide::Incoming);
    }

    #[test]
    fn generating_examples() {
        let p = qp(1.0);
        // radial r = 2, a = 1: S_+ = K(2)
        let s = generating(&v3(2.0, 0.0, 0.0), &v3(1.0, 0.0, 0.0), Branch::Outgoing, &p).unwrap();
        assert_relative_eq!(s, 0.5328399753535521, max_relative = 1e-12);
        // on the fold rho = 1 the two branches coincide (K(1) = 0)
        let x = v3(1.0, 0.0, 0.0);
        let a = v3(1.0, 1.0, 0.0);
        let rho = rho_of_xa(&x, &a, &p);
        // choose |x| so that rho == 1: rho = (|a|/2q)(|x||a| + a.x)
        // with x = r x^, a = (1,1,0): rho = (sqrt2/2)(r sqrt2 + r) -> pick r
        let r = 1.0 / (0.5 * 2.0f64.sqrt() * (2.0f64.sqrt() + 1.0));
        let x = v3(r, 0.0, 0.0);
        let _ = rho;
        let sp = generating(&x, &a, Branch::Outgoing, &p).unwrap();
        let sm = generating(&x, &a, Branch::Incoming, &p).unwrap();
        assert_relative_eq!(sp, sm, max_relative = 1e-9);
        // rho < 1 is a domain error
        assert!(generating(&v3(0.1, 0.0, 0.0), &v3(0.0, 1.0, 0.0), Branch::Outgoing, &p).is_err());
    }

    #[test]
    fn gradient_of_generating_is_scattering_velocity() {
        let p = qp(1.2);
        let x = v3(1.5, 0.6, -0.4);
        let a = v3(0.9, -0.3, 0.8);
        assert!(rho_of_xa(&x, &a, &p) > 1.0);
        let h = 1e-6;
        for branch in [Branch::Incoming, Branch::Outgoing] {
            let mut grad = Vec3::zeros();
            for k in 0..3 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += h;
                xm[k] -= h;
                grad[k] = (generating(&xp, &a, branch, &p).unwrap()
                    - generating(&xm, &a, branch, &p).unwrap())
                    / (2.0 * h);
            }
            let sols = scattering_solutions(&x, &a, &p);
            assert_eq!(sols.len(), 2);
            let best = sols
                .iter()
                .map(|v| (v - grad).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-8, "branch {branch:?}: gap {best}");
        }
    }

    #[test]
    fn angle_radial_closed_form() {
        let p = qp(1.0);
        // outgoing radial: theta = r_min (2 rho K' - K) x^
        let r = 3.0;
        let v = 0.8;
        let s = PhaseState::new(v3(r, 0.0, 0.0), v3(v, 0.0, 0.0));
        let aa = angle(&s, &p).unwrap();
        let h = v * v + 1.0 / r;
        let a = h.sqrt();
        let r_min = p.q / h;
        let rho = r / r_min;
        let expect = r_min * (2.0 * rho * kfun_prime(rho) - kfun(rho));
        assert_relative_eq!(aa.theta, v3(expect, 0.0, 0.0), max_relative = 1e-12);
        assert_relative_eq!(aa.a, v3(a, 0.0, 0.0), max_relative = 1e-13);
    }

    #[test]
    fn angle_invariants() {
        let p = qp(0.9);
        let states = [
            PhaseState::new(v3(1.0, 0.5, -0.2), v3(0.4, -1.0, 0.3)),
            PhaseState::new(v3(-2.0, 1.0, 0.7), v3(0.1, 0.2, -0.6)),
            PhaseState::new(v3(0.3, 0.0, 0.0), v3(-2.0, 0.1, 0.0)),
        ];
        for s in &states {
            let aa = angle(s, &p).unwrap();
            // theta x a = x x v
            let lhs = aa.theta.cross(&aa.a);
            let rhs = s.x.cross(&s.v);
            assert!((lhs - rhs).norm() < 1e-12 * (1.0 + rhs.norm()));
            // rescaling relation
            assert!(rescaling_defect(s, &aa, &p).abs() < 1e-12);
        }
    }

    #[test]
    fn angle_on_fold_matches_dot_product() {
        // On the fold, theta.a = x.v.
        let p = qp(1.0);
        // Construct a fold state: x.v = -sqrt(H) L^2 / q with L = 0, x.v = 0.
        let s = PhaseState::new(v3(2.0, 0.0, 0.0), v3(0.0, 0.0, 0.0));
        // sqrt(rho - 1) at the fold amplifies roundoff to ~sqrt(eps).
        let aa = angle(&s, &p).unwrap();
        assert!((aa.theta.dot(&aa.a) - s.x.dot(&s.v)).abs() < 1e-7);
    }

    #[test]
    fn roundtrip_samples() {
        let p = qp(1.1);
        let states = [
            PhaseState::new(v3(1.0, 0.5, -0.2), v3(0.4, -1.0, 0.3)),
            PhaseState::new(v3(-2.0, 1.0, 0.7), v3(0.1, 0.2, -0.6)),
            PhaseState::new(v3(10.0, -3.0, 4.0), v3(1.2, 0.8, -0.5)),
            PhaseState::new(v3(0.2, 0.05, 0.0), v3(-3.0, 0.4, 1.0)),
            PhaseState::new(v3(5.0, 0.0, 0.0), v3(-1.0, 1e-6, 0.0)),
        ];
        for s in &states {
            let aa = angle(s, &p).unwrap();
            let c = to_sic(&aa, &p);
            let x = position(&c, &p).unwrap();
            let v = velocity(&c, &p).unwrap();
            let scale = s.x.norm() + s.v.norm();
            assert!((x - s.x).norm() < 1e-10 * scale, "x gap {}", (x - s.x).norm());
            assert!((v - s.v).norm() < 1e-10 * scale, "v gap {}", (v - s.v).norm());
        }
    }

    #[test]
    fn sic_roundtrip_and_example() {
        let p = qp(1.0);
        let aa = ActionAngle { theta: v3(2.0, 0.0, 0.0), a: v3(1.0, 0.0, 0.0), branch: Branch::Outgoing };
        let c = to_sic(&aa, &p);
        assert_relative_eq!(c.xi, 1.0, max_relative = 1e-15);
        assert_relative_eq!(c.eta, 2.0, max_relative = 1e-15);
        assert_eq!(c.lambda, 0.0);
        assert_relative_eq!(c.u, v3(1.0, 0.0, 0.0), max_relative = 1e-15);

        let p2 = qp(0.8);
        let aa = ActionAngle { theta: v3(0.3, -1.2, 0.5), a: v3(1.1, 0.4, -0.2), branch: Branch::Outgoing };
        let c = to_sic(&aa, &p2);
        let back = from_sic(&c, &p2);
        assert!((back.theta - aa.theta).norm() < 1e-12);
        assert!((back.a - aa.a).norm() < 1e-12);
        // theta is orthogonal to L by construction
        assert!(c.lvec.dot(&aa.theta).abs() < 1e-12);
    }

    #[test]
    fn position_at_radial_periapsis() {
        let p = qp(1.0);
        let a = 1.3;
        let c = SICCoords {
            xi: p.q / a,
            eta: 0.0,
            lambda: 0.0,
            u: v3(1.0, 0.0, 0.0),
            lvec: Vec3::zeros(),
            kappa: 0.0,
        };
        let x = position(&c, &p).unwrap();
        assert_relative_eq!(x.norm(), p.q / (a * a), max_relative = 1e-12);
        assert_relative_eq!(radius_from_labels(&c, &p).unwrap(), p.q / (a * a), max_relative = 1e-12);
    }

    #[test]
    fn position_velocity_consistency() {
        let p = qp(1.4);
        let s = PhaseState::new(v3(1.0, -0.7, 0.3), v3(0.5, 0.9, -0.4));
        let aa = angle(&s, &p).unwrap();
        let c = to_sic(&aa, &p);
        let x = position(&c, &p).unwrap();
        let v = velocity(&c, &p).unwrap();
        let cons = conserved(&PhaseState::new(x, v), &p).unwrap();
        assert_relative_eq!(cons.h, p.q * p.q / (c.xi * c.xi), max_relative = 1e-11);
        assert_relative_eq!(cons.lvec.norm(), c.lambda, max_relative = 1e-11);
        assert_relative_eq!(radius_from_labels(&c, &p).unwrap(), x.norm(), max_relative = 1e-11);
    }

    #[test]
    fn linear_flow_group_law() {
        let aa = ActionAngle { theta: v3(1.0, 2.0, 3.0), a: v3(0.1, -0.2, 0.3), branch: Branch::Outgoing };
        let f1 = linear_flow(&linear_flow(&aa, 1.5), 2.5);
        let f2 = linear_flow(&aa, 4.0);
        assert_eq!(f1.theta, f2.theta);
        assert_eq!(f1.a, f2.a);
        let f0 = linear_flow(&aa, 0.0);
        assert_eq!(f0.theta, aa.theta);
    }

    #[test]
    fn propagate_identity_and_conservation() {
        let p = qp(2.0);
        let s = PhaseState::new(v3(1.0, 0.0, 0.0), v3(0.0, 1.0, 0.0));
        let s0 = kepler_propagate(&s, 0.0, &p).unwrap();
        assert!((s0.x - s.x).norm() < 1e-12);
        assert!((s0.v - s.v).norm() < 1e-12);
        let c0 = conserved(&s, &p).unwrap();
        for &t in &[-30.0, -1.0, 0.3, 5.0, 100.0] {
            let st = kepler_propagate(&s, t, &p).unwrap();
            let ct = conserved(&st, &p).unwrap();
            assert_relative_eq!(ct.h, c0.h, max_relative = 1e-11);
            assert!((ct.lvec - c0.lvec).norm() < 1e-11);
            assert!((ct.rvec - c0.rvec).norm() < 1e-10);
        }
    }

    #[test]
    fn propagate_group_law() {
        let p = qp(1.0);
        let s = PhaseState::new(v3(0.8, -0.5, 0.1), v3(0.3, 0.6, -0.7));
        let one_hop = kepler_propagate(&s, 7.0, &p).unwrap();
        let two_hops =
            kepler_propagate(&kepler_propagate(&s, 3.0, &p).unwrap(), 4.0, &p).unwrap();
        assert!((one_hop.x - two_hops.x).norm() < 1e-9);
        assert!((one_hop.v - two_hops.v).norm() < 1e-10);
    }

    #[test]
    fn velocity_tends_to_action() {
        let p = qp(1.0);
        let s = PhaseState::new(v3(1.0, 0.2, 0.0), v3(-0.8, 0.5, 0.3));
        let a = action(&s, &p).unwrap();
        let mut prev = f64::INFINITY;
        for &t in &[10.0, 100.0, 1000.0] {
            let st = kepler_propagate(&s, t, &p).unwrap();
            let gap = (st.v - a).norm();
            assert!(gap < prev);
            // |v(t) - a| decays like C/t
            assert!(gap * t < 2.0 * p.q, "t = {t}: gap*t = {}", gap * t);
            prev = gap;
        }
    }

    #[test]
    fn periapsis_properties() {
        let p = qp(1.0);
        let s = PhaseState::new(v3(2.0, 1.0, -0.5), v3(-0.7, 0.2, 0.4));
        let (t_p, s_p) = periapsis(&s, &p).unwrap();
        assert!(s_p.x.dot(&s_p.v).abs() < 1e-9);
        // local minimum of |x(t)|
        let before = kepler_propagate(&s, t_p - 1e-3, &p).unwrap();
        let after = kepler_propagate(&s, t_p + 1e-3, &p).unwrap();
        assert!(before.x.norm() > s_p.x.norm());
        assert!(after.x.norm() > s_p.x.norm());
    }

    #[test]
    fn periapsis_rho_anchor() {
        // kappa = 1 => rho_p = (r + 1/r)^2 / 4 with r = 5^{1/4}, i.e.
        // (2 + sqrt(5) + 1/sqrt(5)) / 4; cross-checked against the periapsis
        // radius (1 + sqrt(5))/2 times the angular factor.
        let kappa = 1.0f64;
        let eta_p = 0.25 * (1.0 + 4.0 * kappa * kappa).ln();
        let rs = rho_sigma_solve(eta_p, kappa, Branch::Outgoing).unwrap();
        let r = 5.0f64.powf(0.25);
        let rho_p = (r + 1.0 / r).powi(2) / 4.0;
        assert_relative_eq!(rho_p, 1.170_820_393_249_936_9, max_relative = 1e-14);
        assert_relative_eq!(rs.rho, rho_p, max_relative = 1e-12);
        assert_relative_eq!(rs.sigma, -eta_p, max_relative = 1e-12);
    }

    #[test]
    fn past_coords_involution_and_xv() {
        let p = qp(1.0);
        let s = PhaseState::new(v3(1.3, -0.4, 0.8), v3(0.2, 0.9, -0.3));
        let aa = angle(&s, &p).unwrap();
        let c = to_sic(&aa, &p);
        let cm = past_coords(&c);
        assert!((cm.u.norm() - 1.0).abs() < 1e-13);
        let back = past_coords(&cm);
        assert!((back.xi - c.xi).abs() < 1e-12);
        assert!((back.eta - c.eta).abs() < 1e-12);
        assert!((back.u - c.u).norm() < 1e-12);
        // Same position, negated velocity.
        let x = position(&c, &p).unwrap();
        let xm = position(&cm, &p).unwrap();
        let v = velocity(&c, &p).unwrap();
        let vm = velocity(&cm, &p).unwrap();
        assert!((x - xm).norm() < 1e-9 * (1.0 + x.norm()), "gap {}", (x - xm).norm());
        assert!((v + vm).norm() < 1e-9 * (1.0 + v.norm()), "gap {}", (v + vm).norm());
    }

    #[test]
    fn past_coords_radial() {
        let c = SICCoords {
            xi: 2.0,
            eta: 1.5,
            lambda: 0.0,
            u: v3(0.0, 1.0, 0.0),
            lvec: Vec3::zeros(),
            kappa: 0.0,
        };
        let cm = past_coords(&c);
        assert_relative_eq!(cm.eta, -1.5, max_relative = 1e-15);
        assert_relative_eq!(cm.u, c.u, max_relative = 1e-15);
    }

    #[test]
    fn scattering_cases() {
        let p = qp(1.0);
        // rho = 0.5 < 1: unreachable
        let a = v3(0.0, 1.0, 0.0);
        let x0 = v3(1.0, 0.0, 0.0); // rho = 0.5
        assert!(scattering_solutions(&x0, &a, &p).is_empty());
        // radial collinear outgoing: v = +-sqrt(a^2 - q/r) x^
        let r = 4.0;
        let a = v3(1.0, 0.0, 0.0);
        let x0 = v3(r, 0.0, 0.0);
        let sols = scattering_solutions(&x0, &a, &p);
        assert_eq!(sols.len(), 2);
        let vr = (1.0 - 1.0 / r).sqrt();
        let has = |target: Vec3| sols.iter().any(|v| (v - target).norm() < 1e-12);
        assert!(has(v3(vr, 0.0, 0.0)));
        assert!(has(v3(-vr, 0.0, 0.0)));
        // both branches have asymptotic velocity a
        for v in &sols {
            let s = PhaseState::new(x0, *v);
            let got = action(&s, &p).unwrap();
            assert!((got - a).norm() < 1e-10);
        }
    }

    #[test]
    fn scattering_generic_forward_asymptotics() {
        let p = qp(1.0);
        let a = v3(0.7, -0.4, 0.2);
        let x0 = v3(3.0, 1.0, -2.0);
        assert!(rho_of_xa(&x0, &a, &p) > 1.0);
        let sols = scattering_solutions(&x0, &a, &p);
        assert_eq!(sols.len(), 2);
        let l0 = x0.cross(&sols[0]).norm();
        let l1 = x0.cross(&sols[1]).norm();
        assert!(l0 <= l1);
        for v in &sols {
            let got = action(&PhaseState::new(x0, *v), &p).unwrap();
            assert!((got - a).norm() < 1e-10, "gap {}", (got - a).norm());
        }
    }

    #[test]
    fn scaling_symmetry() {
        // (x, v) -> (c x, v / c), q -> q / c leaves rho, eta, kappa unchanged.
        let p = qp(1.0);
        let s = PhaseState::new(v3(1.2, -0.3, 0.4), v3(0.5, 0.8, -0.1));
        let aa = angle(&s, &p).unwrap();
        let c0 = to_sic(&aa, &p);
        let cfac = 3.7;
        let ps = qp(p.q / cfac);
        let ss = PhaseState::new(cfac * s.x, s.v / cfac);
        let aas = angle(&ss, &ps).unwrap();
        let cs = to_sic(&aas, &ps);
        assert_relative_eq!(c0.eta, cs.eta, max_relative = 1e-11);
        assert_relative_eq!(c0.kappa, cs.kappa, max_relative = 1e-11);
        assert_relative_eq!(
            rho_of_xa(&s.x, &aa.a, &p),
            rho_of_xa(&ss.x, &aas.a, &ps),
            max_relative = 1e-11
        );
    }

    #[test]
    fn near_fold_roundtrip() {
        let p = qp(1.0);
        // Build states straddling the fold: radial velocity tuned so that
        // x.v + sqrt(H) L^2 / q is a small offset.
        for &offset in &[1e-3, 1e-6, 1e-9, 0.0, -1e-9, -1e-6, -1e-3] {
            let x = v3(2.0, 0.0, 0.0);
            let vperp = v3(0.0, 0.3, 0.0);
            // Solve for v_r: (v_r |x|) + sqrt(H) L^2/q = offset with
            // H = v_r^2 + |vperp|^2 + q/|x|, L = |x| |vperp|.
            let mut vr = -0.1;
            for _ in 0..100 {
                let h = vr * vr + vperp.norm_squared() + p.q / x.norm();
                let l2 = x.norm_squared() * vperp.norm_squared();
                let fval = vr * x.norm() + h.sqrt() * l2 / p.q - offset;
                let dh = 2.0 * vr;
                let df = x.norm() + 0.5 / h.sqrt() * dh * l2 / p.q;
                let step = fval / df;
                vr -= step;
                if step.abs() < 1e-16 {
                    break;
                }
            }
            let s = PhaseState::new(x, vperp + v3(vr, 0.0, 0.0));
            let (margin, _) = fold_margin(&s, &p).unwrap();
            assert!((margin - offset).abs() < 1e-12);
            let aa = angle(&s, &p).unwrap();
            let c = to_sic(&aa, &p);
            let xr = position(&c, &p).unwrap();
            let vrr = velocity(&c, &p).unwrap();
            let scale = s.x.norm() + s.v.norm();
            assert!((xr - s.x).norm() < 1e-9 * scale, "offset {offset}: {}", (xr - s.x).norm());
            assert!((vrr - s.v).norm() < 1e-9 * scale, "offset {offset}: {}", (vrr - s.v).norm());
        }
    }
}
