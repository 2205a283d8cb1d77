//! Command-line driver: every numeric input comes from the TOML config.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

use hsvp::boundary::{bessel_k0, bessel_k1, bessel_k2, juttner};
use hsvp::characteristics::{backward_exit, forward_exit, integrate};
use hsvp::dynamics::{decay_fit, decay_grid, dynamic_gates, evolve, tail_rate, wall_vanishing_data, Background, EvolveConfig};
use hsvp::field::FieldSnapshot;
use hsvp::io::{read_slab_csv, sha256_hex, write_table, FieldChoice, Manifest, RunConfig, SpeciesChoice, TraceDirection};
use hsvp::physcore::{derived_constants, PhaseState};
use hsvp::poisson::{solve_slab, DecayCertificate};
use hsvp::report::Check;
use hsvp::steady::{fixed_point_solve, smallness_gates, theorem_bounds_report, SteadySolution};
use hsvp::verification::{self, AsymptoticConfig, CharacteristicsConfig, SuiteReport};
use hsvp::Error;

#[derive(Parser, Debug)]
#[command(name = "hsvp", version, about = "Half-space relativistic Vlasov-Poisson solver")]
struct Cli {
    /// Worker thread cap.
    #[arg(long, global = true, env = "HSVP_THREADS")]
    threads: Option<usize>,
    /// Run even when a smallness gate fails.
    #[arg(long, global = true)]
    force: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Steady fixed point: rho.csv, phi.csv, diagnostics.json.
    Steady(Io),
    /// Perturbation decay run: decay.csv, report.json.
    Evolve(Io),
    /// Property suite: report.json.
    Verify {
        suite: Suite,
        #[command(flatten)]
        io: Io,
    },
    /// Single characteristic: trajectory.csv.
    Trace(Io),
    /// Slab potential of a density table: phi.csv.
    Poisson(Io),
    /// Juttner and Bessel tables: juttner.csv, bessel.csv.
    Juttner(Io),
}

#[derive(clap::Args, Debug)]
struct Io {
    /// TOML run configuration.
    #[arg(long, short)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Suite {
    Characteristics,
    Oracle,
    Asymptotic,
    Specular,
}

struct Run {
    cfg: RunConfig,
    hash: String,
    out: PathBuf,
    config_dir: PathBuf,
    manifest: Manifest,
}

impl Run {
    fn load(io: &Io, subcommand: &str, force: bool) -> Result<Run, Error> {
        let bytes = fs::read(&io.config).map_err(|e| Error::Config(format!("{}: {e}", io.config.display())))?;
        let text = String::from_utf8(bytes.clone()).map_err(|_| Error::Config("config is not UTF-8".into()))?;
        let mut cfg = RunConfig::from_toml_str(&text)?;
        cfg.steady.force |= force;
        let hash = sha256_hex(&bytes);
        fs::create_dir_all(&io.out)?;
        let config_dir = io.config.parent().map(Path::to_path_buf).unwrap_or_default();
        let manifest = Manifest::new(&hash, cfg.seed, subcommand);
        Ok(Run { cfg, hash, out: io.out.clone(), config_dir, manifest })
    }

    fn table(&mut self, name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<(), Error> {
        let f = fs::File::create(self.out.join(name))?;
        write_table(std::io::BufWriter::new(f), &self.hash, header, rows)?;
        self.manifest.artifacts.push(name.into());
        Ok(())
    }

    fn json(&mut self, name: &str, mut value: Value) -> Result<(), Error> {
        if let Value::Object(m) = &mut value {
            m.insert("config_sha256".into(), json!(self.hash));
        }
        fs::write(self.out.join(name), serde_json::to_string_pretty(&value).expect("json") + "\n")?;
        self.manifest.artifacts.push(name.into());
        Ok(())
    }

    fn result(&mut self, key: &str, value: Value) {
        self.manifest.results.insert(key.into(), value);
    }

    fn finish(self) -> Result<(), Error> {
        fs::write(self.out.join("manifest.json"), self.manifest.to_json() + "\n")?;
        Ok(())
    }

    fn steady(&self) -> Result<SteadySolution, Error> {
        let cfg = self.cfg.steady_config()?;
        for c in smallness_gates(&cfg)? {
            log_check(&c);
        }
        fixed_point_solve(&cfg)
    }

    fn field(&self, choice: FieldChoice) -> Result<FieldSnapshot, Error> {
        let species = self.cfg.species_pair()?;
        match choice {
            FieldChoice::Zero => FieldSnapshot::zero().check_admissible(&self.cfg.world(), &species),
            FieldChoice::Steady => Ok(self.steady()?.field),
        }
    }
}

fn log_check(c: &Check) {
    eprintln!("[{:?}] {}: measured {:e}, tolerance {:e}", c.status, c.name, c.measured, c.tolerance);
}

fn suite_json(rep: &SuiteReport) -> Value {
    serde_json::to_value(rep).expect("report serializes")
}

fn cmd_steady(mut run: Run) -> Result<bool, Error> {
    let sol = run.steady()?;
    let probes = run.cfg.steady_config()?.probe_cloud()?;
    let bounds = theorem_bounds_report(&sol, &probes)?;
    bounds.iter().for_each(log_check);
    let x = sol.density.x.clone();
    run.table("rho.csv", &["x3", "rho"], x.iter().zip(&sol.density.rho).map(|(a, b)| vec![*a, *b]))?;
    let phi = sol.potential.clone();
    run.table("phi.csv", &["x3", "phi", "dphi"], phi.nodes().iter().map(|&a| {
        let (v, d) = phi.eval(a);
        vec![a, v, d]
    }))?;
    let ok = hsvp::report::all_pass(&bounds);
    run.json("diagnostics.json", json!({
        "converged": sol.converged,
        "iterations": sol.iterations(),
        "gates": sol.gates,
        "history": sol.history,
        "bounds": bounds,
        "weighted_sups": sol.weighted_sups,
    }))?;
    run.result("iterations", json!(sol.iterations()));
    run.result("potential_sup", json!(sol.potential.sup()));
    run.finish()?;
    Ok(ok)
}

fn cmd_evolve(mut run: Run) -> Result<bool, Error> {
    let sol = run.steady()?;
    let bg = Background::from_steady(&sol);
    let d = run.cfg.dynamics.clone();
    let t_end = run.cfg.t_end()?;
    let mut grid = decay_grid(&bg, t_end, d.nx, d.nr, d.np)?;
    if d.x_top.is_some() || d.r_max.is_some() || d.p_top.is_some() {
        let p_top = d.p_top.unwrap_or(grid.p_top());
        let breaks = hsvp::dynamics::PhaseGrid::graded_breaks(1.0 / bg.world.beta, p_top, d.np / 8);
        grid = hsvp::dynamics::PhaseGrid::new(d.x_top.unwrap_or(grid.x_top()), d.nx, d.r_max.unwrap_or(grid.r_top()), d.nr, &breaks, 4)?;
    }
    let dt = d.dt.unwrap_or(grid.x3[1] / bg.world.c);
    let mut ec = EvolveConfig::new(grid, dt, t_end);
    ec.tol = d.tol;
    ec.clip = d.clip;
    ec.cfl_limit = d.cfl_limit;
    let init = wall_vanishing_data(bg.world, d.amplitude, d.wall_scale);
    let gates = dynamic_gates(&bg, &ec.grid, &init)?;
    gates.iter().for_each(log_check);
    if !run.cfg.steady.force {
        if let Some(bad) = gates.iter().find(|c| c.status == hsvp::report::Status::Fail) {
            return Err(Error::Gate(format!("{}: {:e} > {:e}", bad.name, bad.measured, bad.tolerance)));
        }
    }
    let ev = evolve(&bg, &init, &ec)?;
    let ledger: Vec<(f64, f64)> = ev.ledger.iter().map(|e| (e.t, e.norm)).collect();
    let rows: Vec<Vec<f64>> = (0..ledger.len())
        .map(|i| vec![ledger[i].0, ledger[i].1, tail_rate(&ledger[..=i]).unwrap_or(f64::NAN), ev.ledger[i].psi_grad_sup])
        .collect();
    run.table("decay.csv", &["t", "weighted_norm", "running_rate", "perturbation_field_sup"], rows)?;
    let lambda = derived_constants(&bg.world, &bg.species).lambda;
    let mut checks = Vec::new();
    match decay_fit(&ledger, lambda) {
        Ok(fit) => {
            checks.push(Check::upper("decay envelope", fit.envelope_ratio, 3.0, "exponential decay of the perturbation"));
            checks.push(Check::upper("decay rate shortfall", lambda - fit.rate, 0.0, "exponential decay of the perturbation"));
        }
        Err(e) => eprintln!("decay fit unavailable: {e}"),
    }
    checks.push(Check::advisory("cfl number", ev.cfl, ec.cfl_limit, "time step vs vertical cell crossing"));
    checks.iter().for_each(log_check);
    let ok = hsvp::report::all_pass(&checks);
    run.json("report.json", json!({ "suite": "evolve", "seed": run.cfg.seed, "gates": gates, "checks": checks }))?;
    run.result("lambda", json!(lambda));
    run.result("t_end", json!(t_end));
    run.finish()?;
    Ok(ok)
}

fn cmd_verify(mut run: Run, suite: Suite) -> Result<bool, Error> {
    let v = run.cfg.verify.clone();
    let rep = match suite {
        Suite::Characteristics => {
            let sp = *run.cfg.species_pair()?.get(match v.species {
                SpeciesChoice::Plus => hsvp::physcore::Label::Plus,
                SpeciesChoice::Minus => hsvp::physcore::Label::Minus,
            });
            let field = run.field(v.field)?;
            let mut cc = CharacteristicsConfig::new(sp, run.cfg.world(), field, v.lo, v.hi);
            cc.tol = v.tol;
            cc.h_fd = v.h_fd;
            cc.derivative_samples = v.derivative_samples;
            verification::run_characteristics_suite(&cc, v.samples, run.cfg.seed)?
        }
        Suite::Oracle => verification::run_oracle_suite(&run.cfg.steady_config()?)?.report,
        Suite::Asymptotic => {
            let q = run.cfg.species.plus.charge.abs();
            let mut ac = AsymptoticConfig::standard(q, v.beta_prime, v.radii.clone())?;
            ac.steady.species = run.cfg.species_pair()?;
            ac.steady.boundary = run.cfg.boundary_specs();
            ac.steady.seed = run.cfg.seed;
            verification::run_asymptotic_probe(&ac)?
        }
        Suite::Specular => verification::run_specular_suite(&run.cfg.steady_config()?)?,
    };
    rep.checks.iter().for_each(log_check);
    eprintln!("suite {} finished in {:.1?}", rep.suite, rep.runtime);
    let ok = rep.passed();
    run.json("report.json", suite_json(&rep))?;
    run.result("passed", json!(ok));
    run.finish()?;
    Ok(ok)
}

fn cmd_trace(mut run: Run) -> Result<bool, Error> {
    let t = run.cfg.trace.clone().ok_or_else(|| Error::Config("trace: section missing".into()))?;
    let species = run.cfg.species_pair()?;
    let sp = match t.species {
        SpeciesChoice::Plus => species.plus,
        SpeciesChoice::Minus => species.minus,
    };
    let w = run.cfg.world();
    let field = run.field(t.field)?;
    let rec = match t.direction {
        TraceDirection::Backward => backward_exit(&field, &sp, &w, &t.x, &t.p, t.tol, None)?,
        TraceDirection::Forward => forward_exit(&field, &sp, &w, &t.x, &t.p, t.tol, None)?,
    };
    let sign = if t.direction == TraceDirection::Backward { -1.0 } else { 1.0 };
    let traj = integrate(&field, &sp, &w, &PhaseState::new(t.x, t.p)?, sign * rec.t_exit, t.tol)?;
    let mut buf = Vec::new();
    traj.write_csv(&mut buf)?;
    let mut text = format!("# config_sha256={}\n", run.hash);
    text.push_str(std::str::from_utf8(&buf).expect("utf8"));
    fs::write(run.out.join("trajectory.csv"), text)?;
    run.manifest.artifacts.push("trajectory.csv".into());
    run.result("t_exit", json!(rec.t_exit));
    run.result("x_exit", json!(rec.x_exit));
    run.result("p_exit", json!(rec.p_exit));
    run.result("energy_drift", json!(traj.energy_drift()));
    run.finish()?;
    Ok(true)
}

fn cmd_poisson(mut run: Run) -> Result<bool, Error> {
    let p = run.cfg.poisson.clone().ok_or_else(|| Error::Config("poisson: section missing".into()))?;
    let path = run.config_dir.join(&p.input);
    let file = fs::File::open(&path).map_err(|e| Error::Csv(format!("{}: {e}", path.display())))?;
    let cert = match (p.certificate_amplitude, p.certificate_rate) {
        (Some(amplitude), Some(rate)) => Some(DecayCertificate { amplitude, rate }),
        _ => None,
    };
    let rho = read_slab_csv(file, cert)?;
    let phi = solve_slab(&rho)?;
    run.table("phi.csv", &["x3", "phi", "dphi"], phi.nodes().iter().map(|&a| {
        let (v, d) = phi.eval(a);
        vec![a, v, d]
    }))?;
    run.result("grad_sup", json!(phi.grad_sup()));
    run.finish()?;
    Ok(true)
}

fn cmd_juttner(mut run: Run) -> Result<bool, Error> {
    let j = run.cfg.juttner.clone().unwrap_or_default();
    let species = run.cfg.species_pair()?;
    let w = run.cfg.world();
    let mut rows = Vec::new();
    for &temp in &j.temperatures {
        for (k, sp) in species.both().into_iter().enumerate() {
            for i in 0..j.n_p {
                let p = j.p_max * i as f64 / (j.n_p - 1) as f64;
                rows.push(vec![k as f64, temp, p, juttner(sp, &w, temp, &[0.0, 0.0, p])?]);
            }
        }
    }
    run.table("juttner.csv", &["species", "temperature", "p", "value"], rows)?;
    let bessel = j.z.iter().map(|&z| Ok(vec![z, bessel_k0(z)?, bessel_k1(z)?, bessel_k2(z)?])).collect::<Result<Vec<_>, Error>>()?;
    run.table("bessel.csv", &["z", "k0", "k1", "k2"], bessel)?;
    run.finish()?;
    Ok(true)
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Csv(_) => 2,
        Error::Gate(_) => 3,
        _ => 4,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("thread pool: {e}");
        }
    }
    let outcome = (|| -> Result<bool, Error> {
        match &cli.command {
            Command::Steady(io) => cmd_steady(Run::load(io, "steady", cli.force)?),
            Command::Evolve(io) => cmd_evolve(Run::load(io, "evolve", cli.force)?),
            Command::Verify { suite, io } => {
                let name = format!("verify {}", suite.to_possible_value().expect("named").get_name());
                cmd_verify(Run::load(io, &name, cli.force)?, *suite)
            }
            Command::Trace(io) => cmd_trace(Run::load(io, "trace", cli.force)?),
            Command::Poisson(io) => cmd_poisson(Run::load(io, "poisson", cli.force)?),
            Command::Juttner(io) => cmd_juttner(Run::load(io, "juttner", cli.force)?),
        }
    })();
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("one or more checks failed");
            ExitCode::from(1)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
