//! Mean-field particle simulation of the gas/point-charge system in the
//! charge-centered frame.
//!
//! Particles are stored as angle-action labels of their charge-relative
//! state, so the singular Kepler part of the motion is integrated exactly
//! (the drift is the straight line `theta += a dt`). The mean-field force
//! enters through a Strang step: half drift, one frozen-field kick on all
//! particles and the charge, half drift.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{self, kernel, AsymptoticProfile, ParticleEnsemble};
use crate::kepler::{self, Params, PhaseState};
use crate::{jbracket, Vec3};

/// Initial gas density shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SamplerKind {
    Gaussian,
    Shell,
}

/// Sampler for the initial measure: `amplitude^2` times a normalized shape
/// in `(x, v)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SamplerSpec {
    #[serde(rename = "type")]
    pub kind: SamplerKind,
    pub center_x: [f64; 3],
    pub center_v: [f64; 3],
    /// Gaussian: `[x_width, v_width]`. Shell: `[radius, radial_width,
    /// v_width]`.
    pub widths: Vec<f64>,
    pub amplitude: f64,
}

fn default_diag_every() -> usize {
    50
}

/// Run configuration; deserialized from the JSON config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimConfig {
    pub params: Params,
    pub n: usize,
    pub eps: f64,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub sampler: SamplerSpec,
    #[serde(default = "default_diag_every")]
    pub diag_every: usize,
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.n < 1 {
            return Err(Error::Config("n must be >= 1".into()));
        }
        if !(self.dt > 0.0) {
            return Err(Error::Config("dt must be > 0".into()));
        }
        if !(self.t_end >= 0.0) {
            return Err(Error::Config("t_end must be >= 0".into()));
        }
        if !(self.eps >= 0.0) {
            return Err(Error::Config("eps must be >= 0".into()));
        }
        let wlen = self.sampler.widths.len();
        let need = match self.sampler.kind {
            SamplerKind::Gaussian => 2,
            SamplerKind::Shell => 3,
        };
        if wlen != need {
            return Err(Error::Config(format!(
                "sampler.widths needs {need} entries, got {wlen}"
            )));
        }
        Ok(())
    }
}

/// The point charge in the lab frame.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ChargeState {
    pub x: Vec3,
    pub v: Vec3,
    /// Running estimate of the limit velocity (updated at diagnostics).
    pub vinf_est: Vec3,
    /// `v - vinf_est`.
    pub w: Vec3,
}

/// Full mutable simulation state.
#[derive(Debug, Clone)]
pub struct SimState {
    pub t: f64,
    pub ens: ParticleEnsemble,
    pub charge: ChargeState,
    /// Accumulated per-particle label change from kicks (angle, action).
    pub kick_theta: Vec<f64>,
    pub kick_a: Vec<f64>,
}

/// One diagnostics row; the series is append-only with increasing `t`.
#[derive(Debug, Clone, Serialize)]
pub struct DiagnosticsRecord {
    pub t: f64,
    /// `max over probes of (t^2 + |y|^2) |E(y)|`.
    pub sup_proxy: f64,
    /// `max over probes of |E(y)|`.
    pub sup_e: f64,
    /// Weighted sup of gamma against `<a>`, `<xi>`, `<lambda>`, `<eta>`
    /// (pulled-back labels).
    pub mom_a: f64,
    pub mom_xi: f64,
    pub mom_lam: f64,
    pub mom_eta: f64,
    /// L2 proxies with the same weights.
    pub mom_a_l2: f64,
    pub mom_eta_l2: f64,
    pub charge_x: [f64; 3],
    pub charge_v: [f64; 3],
    pub charge_w: [f64; 3],
    pub kick_theta_mean: f64,
    pub kick_theta_max: f64,
    pub energy: f64,
    pub momentum: [f64; 3],
}

/// Light label snapshot kept for the late-time estimators.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub t: f64,
    pub theta: Vec<Vec3>,
    pub a: Vec<Vec3>,
    pub w: Vec<f64>,
}

impl Snapshot {
    /// View usable by the effective-field routines.
    pub fn as_ensemble(&self) -> ParticleEnsemble {
        ParticleEnsemble {
            t: self.t,
            theta: self.theta.clone(),
            a: self.a.clone(),
            w: self.w.clone(),
            gamma: vec![1.0; self.w.len()],
            x: Vec::new(),
            v: Vec::new(),
        }
    }
}

/// Output of [`run`].
#[derive(Debug, Clone)]
pub struct RunResult {
    pub state: SimState,
    pub records: Vec<DiagnosticsRecord>,
    pub snapshots: Vec<Snapshot>,
}

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; two uniforms per call keeps the stream simple and
    // deterministic.
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen::<f64>();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

fn gauss3(rng: &mut ChaCha8Rng, center: &[f64; 3], width: f64) -> Vec3 {
    Vec3::new(
        center[0] + width * gauss(rng),
        center[1] + width * gauss(rng),
        center[2] + width * gauss(rng),
    )
}

/// Normalized sampler density at `(x, v)`.
fn sampler_density(sp: &SamplerSpec, x: &Vec3, v: &Vec3) -> f64 {
    let tau = 2.0 * std::f64::consts::PI;
    let gx = match sp.kind {
        SamplerKind::Gaussian => {
            let wx = sp.widths[0];
            let d2 = (x - Vec3::from(sp.center_x)).norm_squared();
            (tau * wx * wx).powf(-1.5) * (-0.5 * d2 / (wx * wx)).exp()
        }
        SamplerKind::Shell => {
            let (r0, dr) = (sp.widths[0], sp.widths[1]);
            let r = (x - Vec3::from(sp.center_x)).norm();
            let radial = (tau * dr * dr).powf(-0.5) * (-0.5 * (r - r0).powi(2) / (dr * dr)).exp();
            radial / (2.0 * tau * r * r)
        }
    };
    let wv = *sp.widths.last().unwrap();
    let d2 = (v - Vec3::from(sp.center_v)).norm_squared();
    gx * (tau * wv * wv).powf(-1.5) * (-0.5 * d2 / (wv * wv)).exp()
}

/// Minimum initial distance to the charge; draws inside are resampled.
pub const R_MIN_FLOOR: f64 = 1e-3;

/// Draws the initial ensemble and charge. Particles are sampled from the
/// normalized shape of the initial measure, so each carries the constant
/// weight `amplitude^2 / n`; `gamma` carries the square root of the local
/// density, which Liouville transport keeps constant along paths.
pub fn init(cfg: &SimConfig) -> Result<(ParticleEnsemble, ChargeState)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut ens = ParticleEnsemble { t: 0.0, ..Default::default() };
    let charge = ChargeState {
        x: Vec3::zeros(),
        v: Vec3::zeros(),
        vinf_est: Vec3::zeros(),
        w: Vec3::zeros(),
    };
    let sp = &cfg.sampler;
    for _ in 0..cfg.n {
        let mut tries = 0;
        let (x, v) = loop {
            let x = match sp.kind {
                SamplerKind::Gaussian => gauss3(&mut rng, &sp.center_x, sp.widths[0]),
                SamplerKind::Shell => {
                    let r = sp.widths[0] + sp.widths[1] * gauss(&mut rng);
                    let dir = loop {
                        let d = Vec3::new(gauss(&mut rng), gauss(&mut rng), gauss(&mut rng));
                        if d.norm() > 1e-6 {
                            break d / d.norm();
                        }
                    };
                    Vec3::from(sp.center_x) + r.abs() * dir
                }
            };
            let v = gauss3(&mut rng, &sp.center_v, *sp.widths.last().unwrap());
            if (x - charge.x).norm() >= R_MIN_FLOOR {
                break (x, v);
            }
            tries += 1;
            if tries > 10_000 {
                return Err(Error::Config(format!(
                    "sampler support overlaps the charge: cannot draw |x - X0| >= {R_MIN_FLOOR}"
                )));
            }
        };
        // Labels of the charge-relative state.
        let rel = PhaseState::new(x - charge.x, v - charge.v);
        let aa = kepler::angle(&rel, &cfg.params)?;
        ens.theta.push(aa.theta);
        ens.a.push(aa.a);
        ens.w.push(sp.amplitude * sp.amplitude / cfg.n as f64);
        ens.gamma.push(sp.amplitude * sampler_density(sp, &x, &v).sqrt());
        ens.x.push(rel.x);
        ens.v.push(rel.v);
    }
    Ok((ens, charge))
}

/// One Strang step: half exact drift, a frozen-field kick on particles and
/// charge, half exact drift. Second order in `dt`.
pub fn step(state: &mut SimState, cfg: &SimConfig, dt: f64) -> Result<()> {
    let p = &cfg.params;
    let half = 0.5 * dt;
    // Half drift: exact Kepler flow in labels, charge moves freely.
    for i in 0..state.ens.n() {
        let a = state.ens.a[i];
        state.ens.theta[i] += half * a;
    }
    state.charge.x += half * state.charge.v;
    state.t += half;
    state.ens.t = state.t;

    // Kick from one frozen field evaluation at the midpoint state.
    if p.gas_coupling != 0.0 || p.charge_coupling != 0.0 {
        state.ens.refresh_cache(p)?;
        let src = kernel::Sources::from_particles(&state.ens.x, &state.ens.w);
        let mut targets = state.ens.x.clone();
        targets.push(Vec3::zeros());
        let sums = kernel::field_sums(&src, &targets, cfg.eps);
        let inv4pi = 1.0 / (4.0 * std::f64::consts::PI);
        let e0 = inv4pi * sums[state.ens.n()];
        let frame_kick = p.charge_coupling * e0;
        for i in 0..state.ens.n() {
            let e_i = inv4pi * sums[i];
            let dv = dt * (p.gas_coupling * e_i - frame_kick);
            if dv != Vec3::zeros() {
                let rel = PhaseState::new(state.ens.x[i], state.ens.v[i] + dv);
                let aa = kepler::angle(&rel, p)?;
                state.kick_theta[i] += (aa.theta - state.ens.theta[i]).norm();
                state.kick_a[i] += (aa.a - state.ens.a[i]).norm();
                state.ens.theta[i] = aa.theta;
                state.ens.a[i] = aa.a;
                state.ens.v[i] = rel.v;
            }
        }
        state.charge.v += dt * frame_kick;
    }

    // Second half drift.
    for i in 0..state.ens.n() {
        let a = state.ens.a[i];
        state.ens.theta[i] += half * a;
    }
    state.charge.x += half * state.charge.v;
    state.t += half;
    state.ens.t = state.t;
    state.charge.w = state.charge.v - state.charge.vinf_est;
    Ok(())
}

/// Probe set for the field-decay diagnostic: the origin plus a log-spherical
/// grid of 64 points (4 shells x 16 directions) rescaled with `<t>`.
pub fn probe_points(t: f64) -> Vec<Vec3> {
    let mut pts = vec![Vec3::zeros()];
    let scale = jbracket(t);
    let golden = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    for shell in 0..4 {
        let r = scale * 0.25 * 2.0f64.powi(shell + 1);
        for k in 0..16 {
            let z = 1.0 - 2.0 * (k as f64 + 0.5) / 16.0;
            let rho = (1.0 - z * z).sqrt();
            let phi = golden * k as f64;
            pts.push(r * Vec3::new(rho * phi.cos(), rho * phi.sin(), z));
        }
    }
    pts
}

/// Total energy and momentum of the coupled system (exact Kepler pair
/// energy, softened gas-gas energy matching the kick kernel).
pub fn conserved_totals(state: &ParticleEnsemble, charge: &ChargeState, p: &Params, eps: f64) -> (f64, Vec3) {
    let mg = p.m_gas;
    let mc = p.m_charge;
    let mut kinetic = 0.0;
    let mut kepler_pot = 0.0;
    let mut momentum = mc * charge.v;
    for i in 0..state.n() {
        let v_abs = state.v[i] + charge.v;
        kinetic += state.w[i] * v_abs.norm_squared();
        kepler_pot += state.w[i] * p.q / state.x[i].norm();
        momentum += mg * state.w[i] * v_abs;
    }
    let mut gas_gas = 0.0;
    if p.gas_coupling != 0.0 {
        for i in 0..state.n() {
            for j in (i + 1)..state.n() {
                let r2 = (state.x[i] - state.x[j]).norm_squared() + eps * eps;
                gas_gas += 2.0 * state.w[i] * state.w[j] / r2.sqrt();
            }
        }
    }
    let energy = mg
        * (kinetic + kepler_pot + p.gas_coupling / (4.0 * std::f64::consts::PI) * gas_gas)
        + mc * charge.v.norm_squared();
    (energy, momentum)
}

fn diagnostics(state: &SimState, cfg: &SimConfig) -> Result<DiagnosticsRecord> {
    let p = &cfg.params;
    let ens = &state.ens;
    let src = kernel::Sources::from_particles(&ens.x, &ens.w);
    let probes = probe_points(state.t);
    let sums = kernel::field_sums(&src, &probes, cfg.eps);
    let inv4pi = 1.0 / (4.0 * std::f64::consts::PI);
    let mut sup_proxy = 0.0f64;
    let mut sup_e = 0.0f64;
    for (y, s) in probes.iter().zip(&sums) {
        let e = inv4pi * s.norm();
        sup_e = sup_e.max(e);
        sup_proxy = sup_proxy.max((state.t * state.t + y.norm_squared()) * e);
    }
    let (mut ma, mut mxi, mut mlam, mut meta) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let (mut ma_l2, mut meta_l2, mut wtot) = (0.0f64, 0.0f64, 0.0f64);
    for i in 0..ens.n() {
        let a = ens.a[i].norm();
        let xi = p.q / a;
        // pulled-back labels: undo the linear flow
        let theta0 = ens.theta[i] - state.t * ens.a[i];
        let lam = theta0.cross(&ens.a[i]).norm();
        let eta = a / p.q * theta0.dot(&ens.a[i]);
        let g = ens.gamma[i];
        ma = ma.max(g * jbracket(a));
        mxi = mxi.max(g * jbracket(xi));
        mlam = mlam.max(g * jbracket(lam));
        meta = meta.max(g * jbracket(eta));
        ma_l2 += ens.w[i] * (g * jbracket(a)).powi(2);
        meta_l2 += ens.w[i] * (g * jbracket(eta)).powi(2);
        wtot += ens.w[i];
    }
    let kick_theta_mean = state.kick_theta.iter().sum::<f64>() / ens.n().max(1) as f64;
    let kick_theta_max = state.kick_theta.iter().fold(0.0f64, |m, v| m.max(*v));
    let (energy, momentum) = conserved_totals(ens, &state.charge, p, cfg.eps);
    Ok(DiagnosticsRecord {
        t: state.t,
        sup_proxy,
        sup_e,
        mom_a: ma,
        mom_xi: mxi,
        mom_lam: mlam,
        mom_eta: meta,
        mom_a_l2: (ma_l2 / wtot.max(1e-300)).sqrt(),
        mom_eta_l2: (meta_l2 / wtot.max(1e-300)).sqrt(),
        charge_x: state.charge.x.into(),
        charge_v: state.charge.v.into(),
        charge_w: state.charge.w.into(),
        kick_theta_mean,
        kick_theta_max,
        energy,
        momentum: momentum.into(),
    })
}

/// Runs the configured simulation; deterministic under the seed.
pub fn run(cfg: &SimConfig) -> Result<RunResult> {
    let (ens, charge) = init(cfg)?;
    let n = ens.n();
    let mut state = SimState {
        t: 0.0,
        ens,
        charge,
        kick_theta: vec![0.0; n],
        kick_a: vec![0.0; n],
    };
    state.ens.refresh_cache(&cfg.params)?;
    let mut records = Vec::new();
    let mut snapshots = Vec::new();
    let record_now = |state: &mut SimState,
                          records: &mut Vec<DiagnosticsRecord>,
                          snapshots: &mut Vec<Snapshot>|
     -> Result<()> {
        state.ens.refresh_cache(&cfg.params)?;
        records.push(diagnostics(state, cfg)?);
        snapshots.push(Snapshot {
            t: state.t,
            theta: state.ens.theta.clone(),
            a: state.ens.a.clone(),
            w: state.ens.w.clone(),
        });
        Ok(())
    };
    record_now(&mut state, &mut records, &mut snapshots)?;
    let steps = (cfg.t_end / cfg.dt).round() as usize;
    for k in 1..=steps {
        step(&mut state, cfg, cfg.dt)?;
        if k % cfg.diag_every == 0 || k == steps {
            // Running limit-velocity estimate from the latest fit.
            if let Ok(fit) = charge_asymptotics(&records, state.t / 2.0) {
                state.charge.vinf_est = fit.vinf;
                state.charge.w = state.charge.v - fit.vinf;
            }
            record_now(&mut state, &mut records, &mut snapshots)?;
        }
    }
    Ok(RunResult { state, records, snapshots })
}

/// Builds the late-time field profile from label snapshots in `[T/2, T]`.
pub fn profile_from_snapshots(
    snapshots: &[Snapshot],
    agrid: &[Vec3],
    eps: f64,
) -> Result<AsymptoticProfile> {
    let t_end = snapshots.last().map(|s| s.t).unwrap_or(0.0);
    let ensembles: Vec<ParticleEnsemble> = snapshots
        .iter()
        .filter(|s| s.t >= t_end / 2.0 && s.t > 0.0)
        .map(Snapshot::as_ensemble)
        .collect();
    field::asymptotic_profile(&ensembles, agrid, eps)
}

/// Least-squares fit of the charge velocity against `(1, 1/t)` over
/// `t >= t_min`.
#[derive(Debug, Clone, Serialize)]
pub struct ChargeFit {
    pub vinf: Vec3,
    /// Coefficient of `1/t`; the late-time theory value is
    /// `-Qc * Einf(0)`.
    pub c1: Vec3,
    pub residual: f64,
    pub window: (f64, f64),
    pub samples: usize,
}

pub fn charge_asymptotics(records: &[DiagnosticsRecord], t_min: f64) -> Result<ChargeFit> {
    let pts: Vec<(f64, Vec3)> = records
        .iter()
        .filter(|r| r.t >= t_min && r.t > 0.0)
        .map(|r| (r.t, Vec3::from(r.charge_v)))
        .collect();
    if pts.len() < 3 {
        return Err(Error::WindowTooShort(format!(
            "charge fit needs >= 3 records past t = {t_min}, got {}",
            pts.len()
        )));
    }
    // Normal equations for the basis (1, 1/t), shared by all components.
    let (mut s00, mut s01, mut s11) = (0.0, 0.0, 0.0);
    let mut b0 = Vec3::zeros();
    let mut b1 = Vec3::zeros();
    for (t, v) in &pts {
        let u = 1.0 / t;
        s00 += 1.0;
        s01 += u;
        s11 += u * u;
        b0 += *v;
        b1 += u * *v;
    }
    let det = s00 * s11 - s01 * s01;
    if det.abs() < 1e-14 * s00 * s11.max(1.0) {
        return Err(Error::Convergence("charge fit window is ill-conditioned".into()));
    }
    let vinf = (s11 * b0 - s01 * b1) / det;
    let c1 = (s00 * b1 - s01 * b0) / det;
    let mut res = 0.0f64;
    let mut scale = 0.0f64;
    for (t, v) in &pts {
        res += (v - vinf - c1 / *t).norm_squared();
        scale += v.norm_squared();
    }
    Ok(ChargeFit {
        vinf,
        c1,
        residual: (res / scale.max(1e-300)).sqrt(),
        window: (pts[0].0, pts[pts.len() - 1].0),
        samples: pts.len(),
    })
}

/// Bulk membership of each particle of a snapshot: pulled-back labels with
/// `a + xi <= c_scale t^{1/4}` and `xi|eta| + lambda <= 1e-3 t a^2`. The
/// literal constant is `q/(10 <q>)`; a larger `c_scale` widens the region
/// for runs whose horizon is too short for the literal one to populate.
pub fn bulk_mask(snap: &Snapshot, p: &Params, c_scale: f64) -> Vec<bool> {
    let t = snap.t;
    (0..snap.w.len())
        .map(|i| {
            let a = snap.a[i].norm();
            let xi = p.q / a;
            let theta0 = snap.theta[i] - t * snap.a[i];
            let lam = theta0.cross(&snap.a[i]).norm();
            let eta = a / p.q * theta0.dot(&snap.a[i]);
            a + xi <= c_scale * t.powf(0.25) && xi * eta.abs() + lam <= 1e-3 * t * a * a
        })
        .collect()
}

/// The literal bulk-region time-scale constant.
pub fn bulk_scale_literal(p: &Params) -> f64 {
    p.q / (10.0 * jbracket(p.q))
}

/// Per-particle modified-scattering comparison over the window `[T/2, T]`.
#[derive(Debug, Clone, Serialize)]
pub struct DriftReport {
    pub n_bulk: usize,
    /// Fraction of bulk particles whose corrected variation is at most half
    /// the uncorrected one.
    pub frac_improved: f64,
    pub sup_corrected: f64,
    pub sup_uncorrected: f64,
}

/// Compares the variation of the pulled-back angle with and without the
/// logarithmic correction `ln(t) L_i`,
/// `L_i = Qc Einf(0) - Q Einf(a_i)`: along the kicked flow
/// `dtheta/dt ~ -t [Q E(t a) - Qc E(0)] ~ -(1/t)[Q Einf(a) - Qc Einf(0)]`.
/// `Einf(a_i)` is the window average of the self-excluded
/// `t^2 E_eff(t a_i)`.
pub fn scattering_drift(
    snapshots: &[Snapshot],
    einf0: Vec3,
    eps: f64,
    p: &Params,
    bulk_c_scale: f64,
) -> Result<DriftReport> {
    let t_end = snapshots.last().map(|s| s.t).unwrap_or(0.0);
    let window: Vec<&Snapshot> = snapshots
        .iter()
        .filter(|s| s.t >= t_end / 2.0 && s.t > 0.0)
        .collect();
    if window.len() < 2 {
        return Err(Error::WindowTooShort(
            "drift comparison needs >= 2 snapshots in [T/2, T]".into(),
        ));
    }
    let ensembles: Vec<ParticleEnsemble> = window.iter().map(|s| s.as_ensemble()).collect();
    let last = window[window.len() - 1];
    let mask = bulk_mask(last, p, bulk_c_scale);
    let n = last.w.len();
    let mut n_bulk = 0usize;
    let mut improved = 0usize;
    let (mut supc, mut supu) = (0.0f64, 0.0f64);
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        n_bulk += 1;
        let mut einfa = Vec3::zeros();
        for (s, ens) in window.iter().zip(&ensembles) {
            einfa += s.t
                * s.t
                * field::effective_field_excluding(&(s.t * s.a[i]), ens, eps, i);
        }
        einfa /= window.len() as f64;
        let shift = p.charge_coupling * einf0 - p.gas_coupling * einfa;
        let pulled = |s: &Snapshot| s.theta[i] - s.t * s.a[i];
        let ref_u = pulled(last);
        let ref_c = ref_u - t_end.ln() * shift;
        let (mut var_u, mut var_c) = (0.0f64, 0.0f64);
        for s in &window {
            let u = pulled(s);
            var_u = var_u.max((u - ref_u).norm());
            var_c = var_c.max((u - s.t.ln() * shift - ref_c).norm());
        }
        supu = supu.max(var_u);
        supc = supc.max(var_c);
        if var_c <= 0.5 * var_u || var_u == 0.0 {
            improved += 1;
        }
    }
    Ok(DriftReport {
        n_bulk,
        frac_improved: if n_bulk == 0 { 0.0 } else { improved as f64 / n_bulk as f64 },
        sup_corrected: supc,
        sup_uncorrected: supu,
    })
}

/// Writes `particles.csv` for the final state.
pub fn write_particles_csv(path: &Path, state: &SimState) -> Result<()> {
    let ens = &state.ens;
    let mut out = String::from(
        "t,id,x,y,z,vx,vy,vz,theta1,theta2,theta3,a1,a2,a3,gamma\n",
    );
    for i in 0..ens.n() {
        let x = ens.x[i];
        let v = ens.v[i];
        let th = ens.theta[i];
        let a = ens.a[i];
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            state.t, i, x.x, x.y, x.z, v.x, v.y, v.z, th.x, th.y, th.z, a.x, a.y, a.z,
            ens.gamma[i]
        )
        .expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Writes `diagnostics.csv`.
pub fn write_diagnostics_csv(path: &Path, records: &[DiagnosticsRecord]) -> Result<()> {
    let mut out = String::from(
        "t,sup_proxy,sup_e,mom_a,mom_xi,mom_lam,mom_eta,mom_a_l2,mom_eta_l2,\
         Xc1,Xc2,Xc3,Vc1,Vc2,Vc3,W1,W2,W3,kick_theta_mean,kick_theta_max,energy,P1,P2,P3\n",
    );
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            r.t,
            r.sup_proxy,
            r.sup_e,
            r.mom_a,
            r.mom_xi,
            r.mom_lam,
            r.mom_eta,
            r.mom_a_l2,
            r.mom_eta_l2,
            r.charge_x[0],
            r.charge_x[1],
            r.charge_x[2],
            r.charge_v[0],
            r.charge_v[1],
            r.charge_v[2],
            r.charge_w[0],
            r.charge_w[1],
            r.charge_w[2],
            r.kick_theta_mean,
            r.kick_theta_max,
            r.energy,
            r.momentum[0],
            r.momentum[1],
            r.momentum[2],
        )
        .expect("string write");
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Emits gnuplot scripts referencing the CSVs.
pub fn write_plot_scripts(dir: &Path) -> Result<()> {
    let decay = "\
set logscale xy
set xlabel 't'
set ylabel 'sup |E|'
set datafile separator ','
plot 'diagnostics.csv' using 1:3 with lines title 'sup-field', \\
     'diagnostics.csv' using 1:2 with lines title '(t^2+|y|^2)|E| proxy'
";
    let charge = "\
set xlabel 't'
set ylabel 'charge velocity'
set datafile separator ','
plot 'diagnostics.csv' using 1:13 with lines title 'Vc_x', \\
     'diagnostics.csv' using 1:14 with lines title 'Vc_y', \\
     'diagnostics.csv' using 1:15 with lines title 'Vc_z'
";
    std::fs::write(dir.join("plot_field_decay.gp"), decay)?;
    std::fs::write(dir.join("plot_charge.gp"), charge)?;
    Ok(())
}
