//! Finite-difference Poisson brackets.
//!
//! `{f, g} = grad_x f . grad_v g - grad_v f . grad_x g`, evaluated with
//! central differences so the canonical structure of the coordinate
//! transforms can be checked numerically against its closed forms.

use crate::error::{Error, Result};
use crate::kepler::{self, Params, PhaseState};
use crate::Vec3;

/// A scalar observable on phase space, with a label for reports.
pub struct ScalarField<'a> {
    pub label: String,
    pub eval: Box<dyn Fn(&PhaseState) -> f64 + Sync + 'a>,
}

impl<'a> ScalarField<'a> {
    pub fn new(label: impl Into<String>, f: impl Fn(&PhaseState) -> f64 + Sync + 'a) -> Self {
        ScalarField { label: label.into(), eval: Box::new(f) }
    }
}

/// Default finite-difference step factor.
pub const DEFAULT_STEP: f64 = 1e-5;

/// One residual line of a bracket report.
#[derive(Debug, Clone)]
pub struct BracketLine {
    pub relation: String,
    pub residual: f64,
}

/// Residuals of a family of bracket relations at one phase point.
#[derive(Debug, Clone)]
pub struct BracketReport {
    pub lines: Vec<BracketLine>,
    pub max_residual: f64,
    /// Relation realizing the max residual.
    pub worst: String,
    pub pass: bool,
}

impl BracketReport {
    fn from_lines(lines: Vec<BracketLine>, tol: f64) -> Self {
        let (mut max_residual, mut worst) = (0.0, String::new());
        for l in &lines {
            if l.residual > max_residual {
                max_residual = l.residual;
                worst = l.relation.clone();
            }
        }
        BracketReport { lines, max_residual, worst, pass: max_residual < tol }
    }
}

/// Five-point-stencil gradient of `f` with respect to `(x, v)`; the step in
/// each component is `h (1 + |coordinate|)`.
fn grad(f: &ScalarField, s: &PhaseState, h: f64) -> (Vec3, Vec3) {
    let stencil = |at: &dyn Fn(f64) -> f64, hj: f64| {
        (at(-2.0 * hj) - 8.0 * at(-hj) + 8.0 * at(hj) - at(2.0 * hj)) / (12.0 * hj)
    };
    let mut gx = Vec3::zeros();
    let mut gv = Vec3::zeros();
    for j in 0..3 {
        let hj = h * (1.0 + s.x[j].abs());
        gx[j] = stencil(
            &|d| {
                let mut sd = *s;
                sd.x[j] += d;
                (f.eval)(&sd)
            },
            hj,
        );
        let hj = h * (1.0 + s.v[j].abs());
        gv[j] = stencil(
            &|d| {
                let mut sd = *s;
                sd.v[j] += d;
                (f.eval)(&sd)
            },
            hj,
        );
    }
    (gx, gv)
}

/// Numerical Poisson bracket `{f, g}` at `s`, five-point differences with
/// step factor `h`; error `O(h^4)`.
pub fn pb_numeric(f: &ScalarField, g: &ScalarField, s: &PhaseState, h: f64) -> Result<f64> {
    if h < 1e-12 {
        return Err(Error::StepUnderflow(format!(
            "bracket step {h} below the resolvable scale"
        )));
    }
    let (fx, fv) = grad(f, s, h);
    let (gx, gv) = grad(g, s, h);
    Ok(fx.dot(&gv) - fv.dot(&gx))
}

/// Builds the redundant-chart observables at a phase point's branch; `past`
/// selects the past-anchored labels.
fn sic_fields<'a>(p: &'a Params, past: bool) -> Vec<(&'static str, ScalarField<'a>)> {
    let chart = move |s: &PhaseState| {
        let aa = kepler::angle(s, p).unwrap();
        let c = kepler::to_sic(&aa, p);
        if past {
            kepler::past_coords(&c)
        } else {
            c
        }
    };
    let mut out: Vec<(&'static str, ScalarField)> = vec![
        ("xi", ScalarField::new("xi", move |s: &PhaseState| chart(s).xi)),
        ("eta", ScalarField::new("eta", move |s: &PhaseState| chart(s).eta)),
        ("lam", ScalarField::new("lam", move |s: &PhaseState| chart(s).lambda)),
    ];
    for j in 0..3 {
        out.push((
            ["u1", "u2", "u3"][j],
            ScalarField::new(format!("u{}", j + 1), move |s: &PhaseState| chart(s).u[j]),
        ));
        out.push((
            ["L1", "L2", "L3"][j],
            ScalarField::new(format!("L{}", j + 1), move |s: &PhaseState| chart(s).lvec[j]),
        ));
    }
    out
}

const EPS3: [[[f64; 3]; 3]; 3] = {
    let mut e = [[[0.0; 3]; 3]; 3];
    e[0][1][2] = 1.0;
    e[1][2][0] = 1.0;
    e[2][0][1] = 1.0;
    e[0][2][1] = -1.0;
    e[2][1][0] = -1.0;
    e[1][0][2] = -1.0;
    e
};

/// Checks the bracket table of the redundant chart at `s`:
/// `{xi,eta}=1`, `{lam,u}=-l x u` (also on past labels),
/// `{L^j,u^k}=eps^{jka} u^a`, `{L^j,L^k}=eps^{jka} L^a`, and the listed
/// vanishing brackets. Relations involving `l` are skipped in the radial
/// (`L = 0`) degenerate case.
pub fn check_sic_table(s: &PhaseState, p: &Params, past: bool) -> Result<BracketReport> {
    let h = DEFAULT_STEP;
    let fields = sic_fields(p, past);
    let get = |name: &str| {
        fields
            .iter()
            .find(|(n, _)| *n == name)
            .map(|(_, f)| f)
            .expect("known field")
    };
    let aa = kepler::angle(s, p)?;
    let c0 = kepler::to_sic(&aa, p);
    let c = if past { kepler::past_coords(&c0) } else { c0 };
    let radial = c.lambda < 1e-8;
    let lhat = if radial { Vec3::zeros() } else { c.lvec / c.lambda };

    let mut lines = Vec::new();
    let mut push = |rel: String, val: f64, expect: f64| {
        lines.push(BracketLine { relation: rel, residual: (val - expect).abs() });
    };

    push(
        "{xi,eta}=1".into(),
        pb_numeric(get("xi"), get("eta"), s, h)?,
        1.0,
    );
    push("{xi,lam}=0".into(), pb_numeric(get("xi"), get("lam"), s, h)?, 0.0);
    push("{eta,lam}=0".into(), pb_numeric(get("eta"), get("lam"), s, h)?, 0.0);
    for j in 0..3 {
        let uj = ["u1", "u2", "u3"][j];
        let lj = ["L1", "L2", "L3"][j];
        push(format!("{{xi,{uj}}}=0"), pb_numeric(get("xi"), get(uj), s, h)?, 0.0);
        push(format!("{{xi,{lj}}}=0"), pb_numeric(get("xi"), get(lj), s, h)?, 0.0);
        push(format!("{{eta,{uj}}}=0"), pb_numeric(get("eta"), get(uj), s, h)?, 0.0);
        push(format!("{{eta,{lj}}}=0"), pb_numeric(get("eta"), get(lj), s, h)?, 0.0);
        push(format!("{{lam,{lj}}}=0"), pb_numeric(get("lam"), get(lj), s, h)?, 0.0);
        if !radial {
            let lxu = lhat.cross(&c.u);
            push(
                format!("{{lam,{uj}}}"),
                pb_numeric(get("lam"), get(uj), s, h)?,
                -lxu[j],
            );
        }
        for k in 0..3 {
            let uk = ["u1", "u2", "u3"][k];
            let lk = ["L1", "L2", "L3"][k];
            let mut eu = 0.0;
            let mut el = 0.0;
            for a in 0..3 {
                eu += EPS3[j][k][a] * c.u[a];
                el += EPS3[j][k][a] * c.lvec[a];
            }
            push(format!("{{{lj},{uk}}}"), pb_numeric(get(lj), get(uk), s, h)?, eu);
            push(format!("{{{lj},{lk}}}"), pb_numeric(get(lj), get(lk), s, h)?, el);
            if j < k {
                push(format!("{{{uj},{uk}}}=0"), pb_numeric(get(uj), get(uk), s, h)?, 0.0);
            }
        }
    }
    Ok(BracketReport::from_lines(lines, 1e-5))
}

/// Checks the closed-form brackets of the kinematic quantities at time `t`:
/// with `Xt, Vt` the position/velocity of the labels flowed to time `t`,
/// `{a,Xt}=-Vt/a`, `{xi,Xt}=(xi^2/q)(Vt/a)`, `{lam,Xt}=-l x Xt`,
/// `{a,Vt}=-(xi/2)Xt/|Xt|^3`, `{xi,Vt}=(xi^3/2q)Xt/|Xt|^3`,
/// `{lam,Vt}=-l x Vt`; residuals relative to the scale of each side.
pub fn check_xv_brackets(s: &PhaseState, t: f64, p: &Params) -> Result<BracketReport> {
    let h = DEFAULT_STEP;
    let flowed = move |st: &PhaseState| -> (Vec3, Vec3) {
        let aa = kepler::angle(st, p).unwrap();
        let aat = kepler::linear_flow(&aa, t);
        let c = kepler::to_sic(&aat, p);
        (
            kepler::position(&c, p).unwrap(),
            kepler::velocity(&c, p).unwrap(),
        )
    };
    let xfield = |j: usize| {
        ScalarField::new(format!("X{}", j + 1), move |st: &PhaseState| flowed(st).0[j])
    };
    let vfield = |j: usize| {
        ScalarField::new(format!("V{}", j + 1), move |st: &PhaseState| flowed(st).1[j])
    };
    let afield = ScalarField::new("a", |st: &PhaseState| {
        kepler::angle(st, p).unwrap().a.norm()
    });
    let xifield = ScalarField::new("xi", |st: &PhaseState| {
        p.q / kepler::angle(st, p).unwrap().a.norm()
    });
    let lamfield = ScalarField::new("lam", |st: &PhaseState| st.x.cross(&st.v).norm());

    let aa = kepler::angle(s, p)?;
    let c = kepler::to_sic(&kepler::linear_flow(&aa, t), p);
    let (xt, vt) = (kepler::position(&c, p)?, kepler::velocity(&c, p)?);
    let a = aa.a.norm();
    let xi = p.q / a;
    let radial = c.lambda < 1e-8;
    let lhat = if radial { Vec3::zeros() } else { c.lvec / c.lambda };

    let mut lines = Vec::new();
    let mut push = |rel: String, val: f64, expect: f64, scale: f64| {
        lines.push(BracketLine {
            relation: rel,
            residual: (val - expect).abs() / scale.max(1e-3),
        });
    };
    let xn3 = xt.norm().powi(3);
    for j in 0..3 {
        push(
            format!("{{a,X{j}}}"),
            pb_numeric(&afield, &xfield(j), s, h)?,
            -vt[j] / a,
            vt.norm() / a,
        );
        push(
            format!("{{xi,X{j}}}"),
            pb_numeric(&xifield, &xfield(j), s, h)?,
            xi * xi / p.q * vt[j] / a,
            xi * xi / p.q * vt.norm() / a,
        );
        push(
            format!("{{a,V{j}}}"),
            pb_numeric(&afield, &vfield(j), s, h)?,
            -0.5 * xi * xt[j] / xn3,
            0.5 * xi * xt.norm() / xn3,
        );
        push(
            format!("{{xi,V{j}}}"),
            pb_numeric(&xifield, &vfield(j), s, h)?,
            0.5 * xi.powi(3) / p.q * xt[j] / xn3,
            0.5 * xi.powi(3) / p.q * xt.norm() / xn3,
        );
        if !radial {
            let lxx = lhat.cross(&xt);
            let lxv = lhat.cross(&vt);
            push(
                format!("{{lam,X{j}}}"),
                pb_numeric(&lamfield, &xfield(j), s, h)?,
                -lxx[j],
                xt.norm(),
            );
            push(
                format!("{{lam,V{j}}}"),
                pb_numeric(&lamfield, &vfield(j), s, h)?,
                -lxv[j],
                vt.norm(),
            );
        }
    }
    Ok(BracketReport::from_lines(lines, 1e-5))
}

/// Cyclic sum `{f,{g,h}} + {g,{h,f}} + {h,{f,g}}` by nested differencing;
/// the outer brackets use a `sqrt(h)`-scaled step to balance truncation
/// against cancellation in the second differences.
pub fn jacobi_residual(
    f: &ScalarField,
    g: &ScalarField,
    k: &ScalarField,
    s: &PhaseState,
) -> Result<f64> {
    let h = DEFAULT_STEP;
    let outer = h.sqrt() * 1e-2;
    fn nest<'b>(a: &'b ScalarField<'b>, b: &'b ScalarField<'b>, h: f64) -> ScalarField<'b> {
        ScalarField::new(
            format!("{{{},{}}}", a.label, b.label),
            move |st: &PhaseState| pb_numeric(a, b, st, h).unwrap(),
        )
    }
    let s1 = pb_numeric(f, &nest(g, k, h), s, outer)?;
    let s2 = pb_numeric(g, &nest(k, f, h), s, outer)?;
    let s3 = pb_numeric(k, &nest(f, g, h), s, outer)?;
    Ok((s1 + s2 + s3).abs())
}
