use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::json;

use kaa::error::Error;
use kaa::kepler::{self, Params, PhaseState};
use kaa::{field, sim, verify, Vec3};

#[derive(Parser)]
#[command(name = "kaa", version, about = "Repulsive Kepler angle-action tools and mean-field simulation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Map a state (x, v) to angle-action labels and derived coordinates,
    /// or labels back to a state with --inverse.
    Transform {
        /// Comma-separated vector, e.g. 1.0,0.5,-2.0
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        #[arg(long, allow_hyphen_values = true)]
        v: String,
        #[arg(long, default_value_t = 1.0)]
        q: f64,
        /// Treat (--x, --v) as labels (theta, a) and print the state.
        #[arg(long)]
        inverse: bool,
    },
    /// Evolve a state by the exact two-body flow for time t.
    Flow {
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        #[arg(long, allow_hyphen_values = true)]
        v: String,
        #[arg(long, default_value_t = 1.0)]
        q: f64,
        #[arg(long, allow_hyphen_values = true)]
        t: f64,
    },
    /// Print incoming and outgoing scattering data for a state.
    Scatter {
        #[arg(long, allow_hyphen_values = true)]
        x: String,
        #[arg(long, allow_hyphen_values = true)]
        v: String,
        #[arg(long, default_value_t = 1.0)]
        q: f64,
    },
    /// Run a simulation from a JSON config and write outputs to a directory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a named verification suite.
    Verify {
        #[arg(long)]
        suite: String,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
    },
    /// Tabulate the softened field of a simulation's final state along a ray.
    FieldProfile {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn parse_vec3(s: &str) -> Result<Vec3, Error> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(Error::Config(format!("expected three comma-separated numbers, got '{s}'")));
    }
    let mut out = [0.0; 3];
    for (slot, p) in out.iter_mut().zip(&parts) {
        *slot = p
            .trim()
            .parse::<f64>()
            .map_err(|e| Error::Config(format!("bad number '{p}': {e}")))?;
    }
    Ok(Vec3::from(out))
}

/// Exit codes: 2 for unusable input, 3 for domain violations, 4 for
/// failures after a run has started.
fn exit_for(err: &Error, mid_run: bool) -> u8 {
    match err {
        Error::Config(_) | Error::Json(_) => 2,
        Error::Domain(_) | Error::Branch(_) => 3,
        _ if mid_run => 4,
        _ => 3,
    }
}

fn fail(err: Error, mid_run: bool) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(exit_for(&err, mid_run))
}

fn print_json(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn cmd_transform(x: &str, v: &str, q: f64, inverse: bool) -> ExitCode {
    let (xv, vv) = match (parse_vec3(x), parse_vec3(v)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return fail(e, false),
    };
    let p = Params::kepler_only(q);
    if inverse {
        let aa = kaa::kepler::ActionAngle {
            theta: xv,
            a: vv,
            branch: kaa::special::Branch::Outgoing,
        };
        let c = kepler::to_sic(&aa, &p);
        match kepler::position(&c, &p).and_then(|x| kepler::velocity(&c, &p).map(|v| (x, v))) {
            Ok((x, v)) => print_json(&json!({
                "x": [x.x, x.y, x.z],
                "v": [v.x, v.y, v.z],
            })),
            Err(e) => return fail(e, false),
        }
        return ExitCode::SUCCESS;
    }
    let s = PhaseState::new(xv, vv);
    let aa = match kepler::angle(&s, &p) {
        Ok(aa) => aa,
        Err(e) => return fail(e, false),
    };
    let c = kepler::to_sic(&aa, &p);
    let rho = kepler::rho_of_xa(&s.x, &aa.a, &p);
    let sigma = kepler::sigma(c.eta, c.kappa, kepler::sic_branch(&c))
        .map(|rs| rs.sigma)
        .unwrap_or(f64::NAN);
    let iota = match kepler::fold_branch(&s, &p) {
        Ok(kepler::FoldSide::Outgoing) => 1.0,
        Ok(kepler::FoldSide::Incoming) => -1.0,
        Ok(kepler::FoldSide::OnFold) => 0.0,
        Err(e) => return fail(e, false),
    };
    print_json(&json!({
        "theta": [aa.theta.x, aa.theta.y, aa.theta.z],
        "a": [aa.a.x, aa.a.y, aa.a.z],
        "xi": c.xi,
        "eta": c.eta,
        "lambda": c.lambda,
        "kappa": c.kappa,
        "rho": rho,
        "sigma": sigma,
        "iota": iota,
    }));
    ExitCode::SUCCESS
}

fn cmd_flow(x: &str, v: &str, q: f64, t: f64) -> ExitCode {
    let (xv, vv) = match (parse_vec3(x), parse_vec3(v)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return fail(e, false),
    };
    let p = Params::kepler_only(q);
    match kepler::kepler_propagate(&PhaseState::new(xv, vv), t, &p) {
        Ok(s) => {
            print_json(&json!({
                "t": t,
                "x": [s.x.x, s.x.y, s.x.z],
                "v": [s.v.x, s.v.y, s.v.z],
            }));
            ExitCode::SUCCESS
        }
        Err(e) => fail(e, false),
    }
}

fn cmd_scatter(x: &str, v: &str, q: f64) -> ExitCode {
    let (xv, vv) = match (parse_vec3(x), parse_vec3(v)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return fail(e, false),
    };
    let p = Params::kepler_only(q);
    let s = PhaseState::new(xv, vv);
    let out = (|| -> Result<serde_json::Value, Error> {
        let aa = kepler::angle(&s, &p)?;
        let c = kepler::to_sic(&aa, &p);
        let cm = kepler::past_coords(&c);
        let (t_p, s_p) = kepler::periapsis(&s, &p)?;
        Ok(json!({
            "a_out": [aa.a.x, aa.a.y, aa.a.z],
            "labels_in": {
                "xi": cm.xi, "eta": cm.eta, "lambda": cm.lambda,
                "u": [cm.u.x, cm.u.y, cm.u.z],
            },
            "labels_out": { "xi": c.xi, "eta": c.eta, "lambda": c.lambda },
            "periapsis": { "t": t_p, "radius": s_p.x.norm() },
        }))
    })();
    match out {
        Ok(v) => {
            print_json(&v);
            ExitCode::SUCCESS
        }
        Err(e) => fail(e, false),
    }
}

fn load_config(path: &PathBuf) -> Result<sim::SimConfig, Error> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let cfg: sim::SimConfig = serde_json::from_str(&text)?;
    cfg.validate()?;
    Ok(cfg)
}

fn cmd_simulate(config: &PathBuf, out: &PathBuf) -> ExitCode {
    let cfg = match load_config(config) {
        Ok(c) => c,
        Err(e) => return fail(e, false),
    };
    if let Err(e) = std::fs::create_dir_all(out) {
        return fail(Error::Io(e), false);
    }
    let started = std::time::Instant::now();
    let result = match sim::run(&cfg) {
        Ok(r) => r,
        Err(e) => return fail(e, true),
    };
    let fit = sim::charge_asymptotics(&result.records, cfg.t_end / 2.0).ok();
    let profile = {
        let agrid: Vec<Vec3> = result.state.ens.a.clone();
        sim::profile_from_snapshots(&result.snapshots, &agrid, cfg.eps).ok()
    };
    let drift = profile.as_ref().and_then(|pr| {
        sim::scattering_drift(&result.snapshots, pr.einf0, cfg.eps, &cfg.params, 1e9).ok()
    });
    let write = (|| -> Result<(), Error> {
        sim::write_particles_csv(&out.join("particles.csv"), &result.state)?;
        sim::write_diagnostics_csv(&out.join("diagnostics.csv"), &result.records)?;
        sim::write_plot_scripts(out)?;
        let summary = json!({
            "config": cfg,
            "t_final": result.state.t,
            "wall_seconds": started.elapsed().as_secs_f64(),
            "charge": {
                "x": <[f64; 3]>::from(result.state.charge.x),
                "v": <[f64; 3]>::from(result.state.charge.v),
            },
            "charge_fit": fit,
            "einf0": profile.as_ref().map(|p| <[f64; 3]>::from(p.einf0)),
            "scattering_drift": drift,
            "energy_initial": result.records.first().map(|r| r.energy),
            "energy_final": result.records.last().map(|r| r.energy),
        });
        std::fs::write(out.join("summary.json"), serde_json::to_string_pretty(&summary)?)?;
        Ok(())
    })();
    match write {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e, true),
    }
}

fn cmd_verify(suite: &str, seed: u64, samples: usize) -> ExitCode {
    match verify::run_suite(suite, seed, samples) {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("json"));
            if report.pass {
                ExitCode::SUCCESS
            } else {
                ExitCode::FAILURE
            }
        }
        Err(e @ Error::Config(_)) => fail(e, false),
        Err(e) => fail(e, true),
    }
}

fn cmd_field_profile(config: &PathBuf, out: &PathBuf) -> ExitCode {
    let cfg = match load_config(config) {
        Ok(c) => c,
        Err(e) => return fail(e, false),
    };
    if let Err(e) = std::fs::create_dir_all(out) {
        return fail(Error::Io(e), false);
    }
    let result = match sim::run(&cfg) {
        Ok(r) => r,
        Err(e) => return fail(e, true),
    };
    let mut table = String::from("r,psi,e_norm,sup_proxy\n");
    let t = result.state.t;
    for k in 0..64 {
        let r = 1e-2 * (1e4f64).powf(k as f64 / 63.0) * kaa::jbracket(t);
        let y = Vec3::new(r, 0.0, 0.0);
        let psi = field::potential(&y, &result.state.ens, cfg.eps);
        let e = field::efield(&y, &result.state.ens, cfg.eps);
        use std::fmt::Write as _;
        writeln!(table, "{r},{psi},{},{}", e.norm(), (t * t + r * r) * e.norm())
            .expect("string write");
    }
    match std::fs::write(out.join("field_profile.csv"), table) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(Error::Io(e), true),
    }
}

fn main() -> ExitCode {
    if let Ok(threads) = std::env::var("KAA_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
        }
    }
    let cli = Cli::parse();
    match cli.command {
        Command::Transform { x, v, q, inverse } => cmd_transform(&x, &v, q, inverse),
        Command::Flow { x, v, q, t } => cmd_flow(&x, &v, q, t),
        Command::Scatter { x, v, q } => cmd_scatter(&x, &v, q),
        Command::Simulate { config, out } => cmd_simulate(&config, &out),
        Command::Verify { suite, seed, samples } => cmd_verify(&suite, seed, samples),
        Command::FieldProfile { config, out } => cmd_field_profile(&config, &out),
    }
}
