use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use attdyn_core::control::ControllerGains;
use attdyn_core::harness::{export, run, validate_all};
use attdyn_core::modal::integral_vector;
use attdyn_core::normal_form::{closed_loop_certificate, lyapunov_certificate, stability_condition, ZeroDynamicsLti};
use attdyn_core::scenario::{AppendageFile, SpacecraftSpec};
use attdyn_core::{Appendage, IntegralCatalog, ModalBasis, Scenario, SolverKind};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "attdyn",
    version,
    about = "Spacecraft attitude dynamics simulator and recovery-control toolkit"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario file or built-in preset and export its time history.
    Simulate(SimulateArgs),
    /// Run the validation cases and report pass/fail per case.
    Validate(ValidateArgs),
    /// Analysis reports.
    #[command(subcommand)]
    Analyze(Analyze),
    /// Modal basis tools.
    #[command(subcommand)]
    Modes(Modes),
    /// List the built-in presets.
    Presets,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario TOML file or preset name (see `attdyn presets`).
    scenario: String,
    /// Output directory.
    #[arg(long, env = "ATTDYN_OUT_DIR", default_value = ".")]
    out: PathBuf,
    /// Override the integrator.
    #[arg(long, value_enum)]
    solver: Option<Solver>,
    /// Override the simulated duration in seconds.
    #[arg(long)]
    duration: Option<f64>,
    /// Override the RK4 step in seconds.
    #[arg(long)]
    step: Option<f64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Solver {
    Rk4,
    Abm,
}

#[derive(Args)]
struct ValidateArgs {
    /// Comma-separated case numbers or ranges, e.g. `1,3,5-9`.
    #[arg(long)]
    cases: Option<String>,
    /// Also write `validation.csv` into this directory.
    #[arg(long, env = "ATTDYN_OUT_DIR")]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Analyze {
    /// Zero-dynamics coefficients, eigenvalues, Lyapunov certificates and stability margins.
    ZeroDynamics(ZeroDynamicsArgs),
}

#[derive(Args)]
struct ZeroDynamicsArgs {
    /// Spacecraft TOML file, scenario TOML file or preset name.
    spacecraft: String,
    #[arg(long, default_value_t = 0.08)]
    kp: f64,
    #[arg(long, default_value_t = 0.57)]
    kd: f64,
    #[arg(long, default_value_t = 0.01)]
    kp_chi: f64,
    #[arg(long, default_value_t = 0.001)]
    kd_chi: f64,
}

#[derive(Subcommand)]
enum Modes {
    /// Write the roots and integral tables of an appendage as CSV.
    Dump(DumpArgs),
}

#[derive(Args)]
struct DumpArgs {
    /// Appendage TOML file.
    appendage: PathBuf,
    /// Output file (stdout if omitted).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Validate(a) => validate(a),
        Command::Analyze(Analyze::ZeroDynamics(a)) => zero_dynamics(a),
        Command::Modes(Modes::Dump(a)) => dump_modes(a),
        Command::Presets => {
            for name in Scenario::preset_names() {
                let sc = Scenario::preset(name).expect("built-in preset");
                println!("{name:<15} {}", sc.description);
            }
            Ok(true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn load_scenario(arg: &str) -> Result<Scenario> {
    let path = Path::new(arg);
    if path.exists() {
        Scenario::load(path).with_context(|| format!("loading {arg}"))
    } else if let Ok(sc) = Scenario::preset(arg) {
        Ok(sc)
    } else {
        bail!("{arg} is neither a file nor a preset name");
    }
}

fn simulate(a: SimulateArgs) -> Result<bool> {
    let mut sc = load_scenario(&a.scenario)?;
    if let Some(s) = a.solver {
        sc.solver.kind = match s {
            Solver::Rk4 => SolverKind::Rk4,
            Solver::Abm => SolverKind::Abm,
        };
    }
    if let Some(h) = a.step {
        sc.solver.step = h;
    }
    if let Some(d) = a.duration {
        sc.duration = d;
    }
    sc.validate()?;
    let rec = run(&sc).with_context(|| format!("simulating {}", sc.name))?;
    let paths = export(&rec, &a.out)?;
    let s = &rec.summary;
    println!("scenario        {}", sc.name);
    println!("final time      {:.3} s ({:.2} s wall)", s.final_time, rec.wall_time);
    match (s.recovery_time, s.recovery_duration) {
        (Some(t), Some(d)) => println!("recovery        at {t:.2} s ({d:.2} s after control start)"),
        (Some(t), None) => println!("recovery        at {t:.2} s"),
        _ => println!("recovery        not reached"),
    }
    println!("energy injected {:.4} J", s.energy_injected);
    println!("control energy  {:.4} J", s.energy_control);
    println!("energy drift    {:.3e}", s.energy_drift);
    println!("momentum drift  {:.3e}", s.momentum_drift);
    println!("|norm(q) - 1|   {:.3e}", s.quat_norm_error);
    if let Some(d) = s.max_deflection {
        println!("max deflection  {d:.4} m");
    }
    if let Some(t) = s.settling_time {
        println!("settling time   {t:.1} s");
    }
    println!("wrote           {}", paths.csv.display());
    Ok(true)
}

fn parse_cases(list: &str) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    for part in list.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (lo, hi) = match part.split_once('-') {
            Some((l, h)) => (l.trim().parse::<u8>()?, h.trim().parse::<u8>()?),
            None => {
                let v = part.parse::<u8>()?;
                (v, v)
            }
        };
        if lo == 0 || hi > 16 || lo > hi {
            bail!("case range {part} outside 1..=16");
        }
        out.extend(lo..=hi);
    }
    Ok(out)
}

fn validate(a: ValidateArgs) -> Result<bool> {
    let cases = a.cases.as_deref().map(parse_cases).transpose()?;
    let report = validate_all(cases.as_deref())?;
    print!("{}", report.human_summary());
    if let Some(dir) = a.out {
        std::fs::create_dir_all(&dir)?;
        let path = dir.join("validation.csv");
        std::fs::write(&path, report.to_csv()?)?;
        println!("wrote {}", path.display());
    }
    let ok = report.passed();
    println!("{}", if ok { "all cases passed" } else { "some cases FAILED" });
    Ok(ok)
}

fn load_spacecraft(arg: &str) -> Result<SpacecraftSpec> {
    let path = Path::new(arg);
    if path.exists() {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {arg}"))?;
        if let Ok(spec) = toml::from_str::<SpacecraftSpec>(&text) {
            return Ok(spec);
        }
    }
    Ok(load_scenario(arg)?.spacecraft)
}

fn zero_dynamics(a: ZeroDynamicsArgs) -> Result<bool> {
    let spec = load_spacecraft(&a.spacecraft)?;
    let apps = spec.appendages();
    if apps.is_empty() {
        bail!("the spacecraft has no appendages");
    }
    let mut ok = true;
    for (i, f) in apps.iter().enumerate() {
        let app = Appendage::new(f.spec())?;
        let zd = ZeroDynamicsLti::from_appendage(&app)?;
        let k = zd.k();
        println!("appendage {i}: {} x {} modes", f.p, f.q);
        println!("  c1 = {:.6e}  c2 = {:.6e}", zd.c1, zd.c2);
        let wn2 = zd.natural_frequencies_sq();
        println!("  natural frequencies^2: {}", join(&wn2));
        let mut ev: Vec<(f64, f64)> = zd.a_matrix().complex_eigenvalues().iter().map(|z| (z.re, z.im)).collect();
        ev.sort_by(|x, y| x.1.total_cmp(&y.1));
        let ev: Vec<String> = ev.iter().map(|(re, im)| format!("{re:.4e}{im:+.4e}i")).collect();
        println!("  eigenvalues: {}", ev.join(", "));
        println!("  settling time 8/c1 = {:.1} s", zd.settling_time());
        println!("  leading minors of C: {}", join(&zd.leading_minors()));
        match lyapunov_certificate(&zd) {
            Ok(cert) => {
                println!(
                    "  Lyapunov residual |A'P + PA + I| = {:.3e}, P positive definite: {}",
                    cert.residual,
                    cert.is_positive_definite()
                );
                let cond = stability_condition(&zd)?;
                println!(
                    "  stability margin: lambda_max(a) = {:.6e} (scaled {:.6e}) vs {:.6e}: {}",
                    cond.lambda_max_a,
                    cond.lambda_max_n,
                    cond.rhs,
                    if cond.pass { "satisfied" } else { "violated" }
                );
                ok &= cond.pass;
            }
            Err(e) => {
                println!("  no certificate: {e}");
                ok = false;
            }
        }
        let gains = ControllerGains::flexible(a.kp, a.kd, a.kp_chi, a.kd_chi, k, f64::INFINITY);
        let (_, u) = closed_loop_certificate(&gains, &zd)?;
        println!(
            "  closed loop |U| = {u:.6e} (kp {}, kd {}, kp_chi {}, kd_chi {})",
            a.kp, a.kd, a.kp_chi, a.kd_chi
        );
    }
    Ok(ok)
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| format!("{x:.6e}")).collect::<Vec<_>>().join(", ")
}

fn dump_modes(a: DumpArgs) -> Result<bool> {
    let text = std::fs::read_to_string(&a.appendage).with_context(|| format!("reading {}", a.appendage.display()))?;
    let f: AppendageFile = toml::from_str(&text).with_context(|| format!("parsing {}", a.appendage.display()))?;
    let bs = ModalBasis::new(f.p, f.q, f.a, f.b)?;
    let sink: Box<dyn Write> = match &a.out {
        Some(p) => Box::new(std::fs::File::create(p)?),
        None => Box::new(std::io::stdout().lock()),
    };
    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(sink);
    w.write_record(["table", "row", "col", "value"])?;
    let fmt = |x: f64| format!("{x:.16e}");
    for r in 3..=f.p {
        w.write_record(["lambda_x", &r.to_string(), "0", &fmt(bs.lambda_x(r).expect("elastic x-mode"))])?;
        w.write_record(["sigma_x", &r.to_string(), "0", &fmt(bs.sigma_x(r).expect("elastic x-mode"))])?;
    }
    for s in 1..=f.q {
        w.write_record(["lambda_y", &s.to_string(), "0", &fmt(bs.lambda_y(s))])?;
        w.write_record(["sigma_y", &s.to_string(), "0", &fmt(bs.sigma_y(s))])?;
    }
    let cat = IntegralCatalog::new(&bs);
    for (k, m) in cat.m.iter().enumerate() {
        let name = format!("M{}", k + 1);
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                w.write_record([name.as_str(), &(i + 1).to_string(), &(j + 1).to_string(), &fmt(m[(i, j)])])?;
            }
        }
    }
    for k in 1..=3 {
        let v = integral_vector(k, &bs)?;
        let name = format!("m{k}");
        for (i, x) in v.iter().enumerate() {
            w.write_record([name.as_str(), &(i + 1).to_string(), "0", &fmt(*x)])?;
        }
    }
    w.flush()?;
    Ok(true)
}
