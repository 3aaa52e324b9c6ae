use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hetforce::config::{Config, HorseshoeSection, IntegratorSection, ModelSection, RunSection, SystemSection};
use hetforce::experiments::{emit_svg, route_report, run_sweep, Dataset, PlotKind, RunManifest};
use hetforce::horseshoe::{build_domain, conley_moser_report, entropy_lower_bound, ShadowContext, Word};
use hetforce::integrator::{integrate, write_trajectory_csv};
use hetforce::model::{classify_model_orbit, model_orbit, omega0, AnnulusPoint, MapConstants};
use hetforce::section::{
    classify_attractor, find_limit_cycle, find_periodic_orbit, lyapunov_spectrum, rotation_number, seeded_initial_state, strobe_orbit,
    ORBIT_CSV_HEADER,
};
use hetforce::system::{find_equilibria, node_data};
use hetforce::{Error, ErrorClass, Result, State4};

#[derive(Parser)]
#[command(name = "hetforce", version, about = "Periodically forced heteroclinic network laboratory")]
struct Cli {
    /// TOML configuration; command line values take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Equilibria of the unforced field with eigenvalues and saddle rates.
    Equilibria(SystemOnly),
    /// Integrate one trajectory to CSV.
    Integrate(FlowArgs),
    /// Iterate the stroboscopic map.
    Strobe(FlowArgs),
    /// Classify the attractor reached from a seeded or given initial state.
    Classify(FlowArgs),
    /// Lyapunov spectrum of the stroboscopic map.
    Lyapunov(FlowArgs),
    /// Rotation number of the stroboscopic map.
    Rotation(FlowArgs),
    /// Periodic orbit of the stroboscopic map, or a limit cycle when mu = 0 and q is unset.
    Periodic(FlowArgs),
    /// Iterate and classify an orbit of the annulus return map.
    ModelReturnMap(ModelRun),
    /// Threshold speed for the rotational horseshoe on the canonical window.
    Omega0(ModelOnly),
    /// Check the Conley-Moser conditions; exit code 3 unless all pass.
    HorseshoeVerify(HorseshoeArgs),
    /// Parameter sweep from the [sweep] table of the configuration.
    Sweep(SweepArgs),
    /// Torus breakdown route on the annulus model.
    RouteReport(RouteArgs),
    /// SVG plot of a CSV file.
    Plot(PlotArgs),
}

#[derive(Args, Default)]
struct SystemArgs {
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    omega: Option<f64>,
}

impl SystemArgs {
    fn section(&self) -> SystemSection {
        SystemSection { alpha: self.alpha, beta: self.beta, nu: self.nu, mu: self.mu, omega: self.omega, forcing: None }
    }
}

#[derive(Args)]
struct SystemOnly {
    #[command(flatten)]
    system: SystemArgs,
}

#[derive(Args)]
struct FlowArgs {
    #[command(flatten)]
    system: SystemArgs,
    #[arg(long)]
    rel_tol: Option<f64>,
    #[arg(long)]
    abs_tol: Option<f64>,
    #[arg(long)]
    max_step: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of consecutive seeds, starting at --seed.
    #[arg(long, default_value_t = 1)]
    seeds: u64,
    /// Initial spatial state `x1,x2,x3`; overrides the seed.
    #[arg(long, value_delimiter = ',', num_args = 3)]
    x0: Option<Vec<f64>>,
    #[arg(long)]
    theta: Option<f64>,
    #[arg(long)]
    t_end: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    transient: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Default)]
struct ModelArgs {
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    eps_v: Option<f64>,
    #[arg(long)]
    eps_w: Option<f64>,
    /// `printed` or `composed`.
    #[arg(long)]
    constants: Option<String>,
}

impl ModelArgs {
    fn section(&self) -> Result<ModelSection> {
        let constants = match self.constants.as_deref() {
            None => None,
            Some("printed") => Some(MapConstants::Printed),
            Some("composed") => Some(MapConstants::Composed),
            Some(other) => return Err(Error::Invalid(format!("unknown constants {other:?}; use printed or composed"))),
        };
        Ok(ModelSection {
            omega: self.omega,
            nu: self.nu,
            mu: self.mu,
            eps_v: self.eps_v,
            eps_w: self.eps_w,
            constants,
            ..Default::default()
        })
    }
}

#[derive(Args)]
struct ModelOnly {
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args)]
struct ModelRun {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long)]
    r: Option<f64>,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long)]
    transient: Option<usize>,
    /// Write the orbit as CSV here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct HorseshoeArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    strip_samples: Option<usize>,
    #[arg(long)]
    derivative_grid: Option<usize>,
    #[arg(long)]
    image_grid: Option<usize>,
    /// Strip boundaries as CSV.
    #[arg(long)]
    strips_out: Option<PathBuf>,
    /// Itinerary over {1,2} to shadow.
    #[arg(long)]
    word: Option<String>,
    /// Count shadowed words of every length up to this one.
    #[arg(long)]
    depth: Option<usize>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    out: PathBuf,
    /// Keep rows already present in --out and compute only the rest.
    #[arg(long)]
    resume: bool,
    /// Defaults to `<out>.manifest.toml`.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

#[derive(Args)]
struct RouteArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    nu: Option<f64>,
    #[arg(long)]
    mu: Option<f64>,
    #[arg(long)]
    omega_min: Option<f64>,
    #[arg(long)]
    omega_max: Option<f64>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    csv: PathBuf,
    /// `heatmap` or `scatter`.
    #[arg(long, default_value = "heatmap")]
    kind: String,
    #[arg(long)]
    x: String,
    #[arg(long)]
    y: String,
    /// Heatmap value or scatter color column.
    #[arg(long)]
    value: String,
    #[arg(long)]
    out: PathBuf,
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Validation => 1,
        ErrorClass::Numerical => 2,
        ErrorClass::Verification => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| Error::Io(format!("{}: {e}", p.display())))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn run(cli: Cli) -> Result<()> {
    let file = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    match cli.command {
        Command::Equilibria(a) => equilibria(&file, &a),
        Command::Integrate(a) => flow_command(&file, &a, FlowTask::Integrate),
        Command::Strobe(a) => flow_command(&file, &a, FlowTask::Strobe),
        Command::Classify(a) => flow_command(&file, &a, FlowTask::Classify),
        Command::Lyapunov(a) => flow_command(&file, &a, FlowTask::Lyapunov),
        Command::Rotation(a) => flow_command(&file, &a, FlowTask::Rotation),
        Command::Periodic(a) => flow_command(&file, &a, FlowTask::Periodic),
        Command::ModelReturnMap(a) => model_return_map(&file, &a),
        Command::Omega0(a) => omega0_command(&file, &a),
        Command::HorseshoeVerify(a) => horseshoe_verify(&file, &a),
        Command::Sweep(a) => sweep(&file, &a),
        Command::RouteReport(a) => route(&file, &a),
        Command::Plot(a) => plot(&a),
    }
}

fn equilibria(file: &Config, a: &SystemOnly) -> Result<()> {
    let cfg = file.overlay(&Config { system: a.system.section(), ..Default::default() });
    let p = cfg.system.resolve()?;
    let eqs = find_equilibria(&p)?;
    let mut out = output(None)?;
    writeln!(out, "kind,x1,x2,x3,eigenvalues,class")?;
    for e in eqs {
        let eig: Vec<String> = e.eigenvalues.iter().map(|z| format!("{:.10}{:+.10}i", z.re, z.im)).collect();
        let x = e.location.x;
        writeln!(out, "{},{:.12},{:.12},{:.12},{},{}", e.kind, x[0], x[1], x[2], eig.join(" "), e.stability_class)?;
    }
    if let Ok(n) = node_data(&p) {
        writeln!(out, "# c_v = {:.10}, e_v = {:.10}, c_w = {:.10}, e_w = {:.10}", n.c_v, n.e_v, n.c_w, n.e_w)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Copy, PartialEq)]
enum FlowTask {
    Integrate,
    Strobe,
    Classify,
    Lyapunov,
    Rotation,
    Periodic,
}

fn flow_command(file: &Config, a: &FlowArgs, task: FlowTask) -> Result<()> {
    let top = Config {
        system: a.system.section(),
        integrator: IntegratorSection { rel_tol: a.rel_tol, abs_tol: a.abs_tol, max_step: a.max_step, max_time: None },
        run: RunSection {
            seed: a.seed,
            x0: a.x0.as_ref().map(|v| [v[0], v[1], v[2]]),
            theta: a.theta,
            t_end: a.t_end,
            iterations: a.iterations,
            q: a.q,
        },
        ..Default::default()
    };
    let cfg = file.overlay(&top);
    let p = cfg.system.resolve()?;
    let integ = cfg.integrator.resolve()?;
    let mut classify = cfg.classify.clone();
    if a.iterations.is_some() {
        classify.n_iter = a.iterations;
    } else if classify.n_iter.is_none() {
        classify.n_iter = cfg.run.iterations;
    }
    if a.transient.is_some() {
        classify.n_transient = a.transient;
    }
    let opts = || classify.resolve(integ);
    let theta = cfg.run.theta.unwrap_or(0.0);
    let seed0 = cfg.run.seed.unwrap_or(0);
    if a.seeds == 0 {
        return Err(Error::Invalid("--seeds must be >= 1".into()));
    }
    let state = |seed: u64| match cfg.run.x0 {
        Some(x) => State4::from_spatial(x, theta),
        None => seeded_initial_state(seed, theta),
    };
    let mut out = output(a.out.as_deref())?;
    match task {
        FlowTask::Integrate => {
            let traj = integrate(&p, &state(seed0), &integ, cfg.run.t_end.unwrap_or(100.0))?;
            write_trajectory_csv(&traj, &mut out)?;
        }
        FlowTask::Strobe => {
            let n = cfg.run.iterations.unwrap_or(100);
            writeln!(out, "n,x1,x2,x3,theta")?;
            for (k, s) in strobe_orbit(&p, &state(seed0), n, &integ)?.iter().enumerate() {
                writeln!(out, "{k},{:.16e},{:.16e},{:.16e},{:.16e}", s.x[0], s.x[1], s.x[2], s.theta())?;
            }
        }
        FlowTask::Classify => {
            let opts = opts()?;
            writeln!(out, "{ORBIT_CSV_HEADER}")?;
            for seed in seed0..seed0 + a.seeds {
                let summary = classify_attractor(&p, &state(seed), &opts);
                writeln!(out, "{}", summary.csv_row(&p, seed))?;
            }
        }
        FlowTask::Lyapunov => {
            let opts = opts()?;
            writeln!(out, "seed,lambda1,lambda2,lambda3,se1,se2,se3")?;
            for seed in seed0..seed0 + a.seeds {
                let l = lyapunov_spectrum(&p, &state(seed), opts.n_iter, opts.n_transient, &integ)?;
                let (e, s) = (l.exponents, l.std_err);
                writeln!(out, "{seed},{:.12e},{:.12e},{:.12e},{:.3e},{:.3e},{:.3e}", e[0], e[1], e[2], s[0], s[1], s[2])?;
            }
        }
        FlowTask::Rotation => {
            let opts = opts()?;
            writeln!(out, "seed,rho")?;
            for seed in seed0..seed0 + a.seeds {
                let rho = rotation_number(&p, &state(seed), opts.n_iter, opts.n_transient, &integ)?;
                writeln!(out, "{seed},{rho:.12e}")?;
            }
        }
        FlowTask::Periodic => {
            let rec = match cfg.run.q {
                None if p.mu == 0.0 => find_limit_cycle(&p, &state(seed0).x, cfg.run.t_end.unwrap_or(200.0), &integ)?,
                q => find_periodic_orbit(&p, &state(seed0), q.unwrap_or(1), &integ)?,
            };
            let x = rec.point_on_section.x;
            writeln!(out, "point = [{:.14}, {:.14}, {:.14}], theta = {:.14}", x[0], x[1], x[2], rec.point_on_section.theta())?;
            writeln!(out, "period = {:.14}", rec.period)?;
            if let Some(q) = rec.period_multiple {
                writeln!(out, "strobe_periods = {q}")?;
            }
            let m: Vec<String> = rec.floquet_multipliers.iter().map(|z| format!("{:.10}{:+.10}i", z.re, z.im)).collect();
            writeln!(out, "multipliers = {}", m.join(" "))?;
            writeln!(out, "stability = {:?}", rec.stability)?;
            writeln!(out, "residual = {:.3e}", rec.residual)?;
        }
    }
    out.flush()?;
    Ok(())
}

fn model_config(file: &Config, m: &ModelArgs) -> Result<Config> {
    Ok(file.overlay(&Config { model: m.section()?, ..Default::default() }))
}

fn model_return_map(file: &Config, a: &ModelRun) -> Result<()> {
    let cfg = model_config(file, &a.model)?;
    let model = cfg.model.resolve()?;
    let r = a.r.unwrap_or_else(|| 1.0 + 0.5 * model.invariant_annulus_width().unwrap_or(0.5 * model.eps_v));
    let pt = AnnulusPoint::new(a.phi.unwrap_or(0.0), r);
    let n = a.iterations.or(cfg.run.iterations).unwrap_or(2000);
    let transient = a.transient.unwrap_or(1000);
    if let Some(path) = &a.out {
        let mut w = output(Some(path))?;
        writeln!(w, "n,phi,r")?;
        for (k, q) in model_orbit(&model, pt, n)?.iter().enumerate() {
            writeln!(w, "{k},{:.16e},{:.16e}", q.phi, q.r)?;
        }
        w.flush()?;
    }
    let s = classify_model_orbit(&model, pt, n.max(1000), transient);
    println!("lambda = [{:.6e}, {:.6e}] +- [{:.1e}, {:.1e}]", s.lyapunov[0], s.lyapunov[1], s.lyapunov_se[0], s.lyapunov_se[1]);
    match s.rotation_number {
        Some(rho) => println!("rho = {rho:.12}"),
        None => println!("rho = undefined"),
    }
    println!("class = {}", s.class);
    Ok(())
}

fn omega0_command(file: &Config, a: &ModelOnly) -> Result<()> {
    let cfg = model_config(file, &a.model)?;
    let model = cfg.model.resolve()?;
    let domain = build_domain(&model)?;
    let w0 = omega0(&model, domain.window())?;
    println!("window = [{}, {}]", domain.phi_l, domain.phi_r);
    println!("omega0 = {w0}");
    Ok(())
}

fn horseshoe_verify(file: &Config, a: &HorseshoeArgs) -> Result<()> {
    let top = Config {
        model: a.model.section()?,
        horseshoe: HorseshoeSection {
            strip_samples: a.strip_samples,
            derivative_grid: a.derivative_grid,
            image_grid: a.image_grid,
            word: a.word.clone(),
            depth: a.depth,
        },
        ..Default::default()
    };
    let cfg = file.overlay(&top);
    let model = cfg.model.resolve()?;
    let domain = build_domain(&model)?;
    let report = conley_moser_report(&model, &domain, model.omega, cfg.horseshoe.grid()?)?;
    print!("{}", report.to_text());
    println!("entropy_lower_bound = {}", entropy_lower_bound(&report));
    if let Some(path) = &a.strips_out {
        let mut w = output(Some(path))?;
        report.write_strips_csv(&mut w)?;
        w.flush()?;
    }
    if let Some(e) = report.failure() {
        return Err(e);
    }
    let word = cfg.horseshoe.word.as_deref().map(str::parse::<Word>).transpose()?;
    if word.is_some() || cfg.horseshoe.depth.is_some() {
        let ctx = ShadowContext::new(&model, &report)?;
        if let Some(w) = word {
            let res = ctx.shadow(&w)?;
            println!("shadow[{}] = ({}, {}) width = {:.3e}", res.word, res.phi0, res.r0, res.interval_width);
        }
        if let Some(d) = cfg.horseshoe.depth {
            let census = ctx.enumerate(d)?;
            let counts: Vec<String> = census.counts.iter().map(|c| c.to_string()).collect();
            println!("counts = [{}]", counts.join(", "));
            println!("growth_rate = {}", census.growth_rate());
        }
    }
    Ok(())
}

fn sweep(file: &Config, a: &SweepArgs) -> Result<()> {
    let spec = file.sweep.clone().ok_or_else(|| Error::Config("the configuration has no [sweep] table".into()))?;
    spec.validate()?;
    let mut manifest = RunManifest::new("sweep", spec.to_toml(), hetforce::experiments::manifest::unix_now());
    let outcome = run_sweep(&spec, &a.out, a.resume)?;
    manifest.add_output(&a.out);
    manifest.failures = outcome.failures.clone();
    let mpath = a.manifest.clone().unwrap_or_else(|| sibling(&a.out, "manifest.toml"));
    manifest.write(&mpath)?;
    eprintln!("{} rows ({} resumed, {} failed) -> {}", outcome.rows.len(), outcome.resumed, outcome.failures.len(), a.out.display());
    Ok(())
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

fn route(file: &Config, a: &RouteArgs) -> Result<()> {
    let mut spec = file.route.clone().unwrap_or_default();
    if let Some(v) = a.nu {
        spec.nu = v;
    }
    if let Some(v) = a.mu {
        spec.mu = v;
    }
    if let Some(v) = a.omega_min {
        spec.omega_min = v;
        spec.omegas.clear();
    }
    if let Some(v) = a.omega_max {
        spec.omega_max = v;
        spec.omegas.clear();
    }
    if let Some(v) = a.count {
        spec.count = v;
        spec.omegas.clear();
    }
    if let Some(v) = a.seed {
        spec.seed = v;
    }
    let text = toml::to_string(&spec).map_err(|e| Error::Config(e.to_string()))?;
    let mut manifest = RunManifest::new("route-report", text, hetforce::experiments::manifest::unix_now());
    let report = route_report(&spec, Some(&a.out_dir))?;
    for f in &report.files {
        manifest.add_output(f);
    }
    manifest.write(&a.out_dir.join("manifest.toml"))?;
    print!("{}", report.summary_csv());
    match report.bracket {
        Some((lo, hi)) => println!("# first folds in omega in [{lo}, {hi}]"),
        None => println!("# no fold transition in the speed range"),
    }
    Ok(())
}

fn plot(a: &PlotArgs) -> Result<()> {
    let text = fs::read_to_string(&a.csv).map_err(|e| Error::Io(format!("{}: {e}", a.csv.display())))?;
    let data = Dataset::from_csv(&text)?;
    let kind = match a.kind.as_str() {
        "heatmap" => PlotKind::Heatmap { x: a.x.clone(), y: a.y.clone(), value: a.value.clone() },
        "scatter" => PlotKind::Scatter { x: a.x.clone(), y: a.y.clone(), color: Some(a.value.clone()) },
        other => return Err(Error::Invalid(format!("unknown plot kind {other:?}"))),
    };
    fs::write(&a.out, emit_svg(&data, &kind)?)?;
    Ok(())
}
