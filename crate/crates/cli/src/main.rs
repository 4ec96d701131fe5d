mod io;

use std::f64::consts::PI;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use fluxgrad::fit::{fit_spectrum, FitParams, FIT_DIM_FULL};
use fluxgrad::workflow::{control_params, create_cr_pulses, optimize_controls, ControlOptions};
use fluxgrad::{
    assemble, bind_params, energy_tensor, extract_params, load_graph, parse_gate, pattern_workflow, standard_stages, static_zz,
    Basis, CompensationMode, CompensationOptions, CrPair, DeviceGraph, EvolveOptions, GateProblem, MinimizeOptions, PulseField,
    Simulator, SystemOptions, TrotterOrder,
};

const TWO_PI: f64 = 2.0 * PI;

#[derive(Parser)]
#[command(name = "fluxgrad", version, about = "Differentiable fluxonium processor simulation")]
struct Cli {
    /// Worker threads for internal parallelism (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dressed energies and static ZZ rates of a device graph.
    Spectrum(SpectrumArgs),
    /// Propagate the computational states and write the resulting matrix.
    Evolve(EvolveArgs),
    /// Gate infidelity and its gradient with respect to every parameter.
    Grad(GateArgs),
    /// Optimize pulse parameters, optionally with the device pattern step.
    Optimize(OptimizeArgs),
    /// Fit fluxonium parameters to a two-tone spectrum.
    Fit(FitArgs),
}

#[derive(Args)]
struct GraphArgs {
    /// Device graph JSON file.
    graph: PathBuf,
    #[arg(long, default_value_t = 2)]
    truncated_dim: usize,
    #[arg(long)]
    share_params: bool,
    #[arg(long)]
    unify_coupling: bool,
}

#[derive(Args)]
struct SpectrumArgs {
    #[command(flatten)]
    graph: GraphArgs,
    /// Pair of node names, e.g. `q1,q2`; may be repeated.
    #[arg(long, value_name = "A,B")]
    zz: Vec<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimArgs {
    /// Gate time in ns (default: end of the last pulse).
    #[arg(long)]
    tg: Option<f64>,
    #[arg(long, default_value_t = 1000, conflicts_with = "dt")]
    astep: usize,
    /// Time step in ns; rounded up to a whole number of steps.
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long, default_value = "2")]
    trotter_order: TrotterOrder,
    #[arg(long, default_value = "eigen")]
    basis: Basis,
}

#[derive(Args)]
struct EvolveArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    sim: SimArgs,
    /// CSV of `row,col,re,im` entries.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct GateArgs {
    #[command(flatten)]
    graph: GraphArgs,
    #[command(flatten)]
    sim: SimArgs,
    /// Target gate, e.g. `cnot(q1,q2)` or `x(q1)*x(q2)`.
    #[arg(long)]
    target: String,
    #[arg(long, default_value = "arbit_single")]
    compensation: CompensationMode,
    /// Build cross-resonance pulses, `control,target,length`; may be repeated.
    #[arg(long, value_name = "C,T,LEN")]
    cr: Vec<String>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    gate: GateArgs,
    /// Pulse fields to optimize.
    #[arg(long, value_delimiter = ',', default_value = "amp,omega_d,phase")]
    fields: Vec<String>,
    #[arg(long, default_value_t = 200)]
    max_iter: usize,
    /// Run controls, one device step, then controls from fresh pulses.
    #[arg(long, requires = "cr")]
    pattern: bool,
    /// Write the optimized graph here.
    #[arg(long)]
    graph_out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    /// CSV with columns `x,eps,p` covering a full grid.
    data: PathBuf,
    /// Starting parameters as JSON.
    #[arg(long)]
    init: PathBuf,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    /// Fitted parameters as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
    /// CSV of the fitted transition frequency per flux point.
    #[arg(long)]
    curve: Option<PathBuf>,
}

enum Failure {
    Input(String),
    Numerical(String),
}

impl From<fluxgrad::Error> for Failure {
    fn from(e: fluxgrad::Error) -> Self {
        if e.is_input_error() {
            Failure::Input(e.to_string())
        } else {
            Failure::Numerical(e.to_string())
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type CliResult<T> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let result = match cli.command {
        Command::Spectrum(a) => spectrum(a),
        Command::Evolve(a) => evolve(a),
        Command::Grad(a) => grad(a),
        Command::Optimize(a) => optimize(a),
        Command::Fit(a) => fit(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Numerical(msg)) => {
            eprintln!("numerical failure: {msg}");
            ExitCode::from(3)
        }
    }
}

fn read_graph(path: &Path) -> CliResult<DeviceGraph> {
    let bytes = std::fs::read(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
    Ok(load_graph(&bytes)?)
}

fn bound_graph(a: &GraphArgs) -> CliResult<DeviceGraph> {
    let g = read_graph(&a.graph)?;
    let theta = extract_params(&g, a.share_params, a.unify_coupling)?;
    Ok(bind_params(&g, &theta)?)
}

fn node(g: &DeviceGraph, name: &str) -> CliResult<usize> {
    g.node_index(name.trim())
        .ok_or_else(|| Failure::Input(format!("unknown node `{}`", name.trim())))
}

fn zz_pair(g: &DeviceGraph, spec: &str) -> CliResult<(usize, usize)> {
    match spec.split(',').collect::<Vec<_>>().as_slice() {
        [a, b] => {
            let (i, j) = (node(g, a)?, node(g, b)?);
            if i == j {
                return Err(Failure::Input(format!("--zz {spec}: nodes must differ")));
            }
            Ok((i, j))
        }
        _ => Err(Failure::Input(format!("--zz expects `A,B`, got `{spec}`"))),
    }
}

fn cr_pairs(g: &DeviceGraph, specs: &[String]) -> CliResult<Vec<CrPair>> {
    specs
        .iter()
        .map(|s| match s.split(',').collect::<Vec<_>>().as_slice() {
            [c, t, len] => Ok(CrPair {
                control: node(g, c)?,
                target: node(g, t)?,
                length: len
                    .trim()
                    .parse()
                    .map_err(|_| Failure::Input(format!("--cr {s}: bad length")))?,
            }),
            _ => Err(Failure::Input(format!("--cr expects `C,T,LEN`, got `{s}`"))),
        })
        .collect()
}

/// Prints `-0.000000` as `0.000000`.
fn fixed(v: f64, digits: usize) -> String {
    let s = format!("{v:.digits$}");
    match s.strip_prefix('-') {
        Some(rest) if rest.bytes().all(|b| b == b'0' || b == b'.') => rest.to_string(),
        _ => s,
    }
}

fn label(l: &[usize]) -> String {
    l.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("_")
}

fn spectrum(a: SpectrumArgs) -> CliResult<()> {
    let g = bound_graph(&a.graph)?;
    let pairs = a.zz.iter().map(|s| zz_pair(&g, s)).collect::<CliResult<Vec<_>>>()?;
    let sys = assemble(&g, &SystemOptions::with_dim(a.graph.truncated_dim))?;
    let e = energy_tensor(&sys)?;
    let names = g.node_names();
    let mut out = String::from("state,energy_ghz\n");
    for flat in 0..sys.total_dim() {
        let l = fluxgrad::composite::unflatten(flat, &sys.dims);
        out += &format!("{},{}\n", label(&l), fixed(e.get(&l) / TWO_PI, 6));
    }
    for &(i, j) in &pairs {
        let zeta = static_zz(&e, (i, j)) / TWO_PI * 1e3;
        out += &format!("zz_mhz,{},{},{}\n", names[i], names[j], fixed(zeta, 6));
    }
    io::emit(a.out.as_deref(), &out)
}

fn evolve_options(g: &DeviceGraph, sim: &SimArgs, d: usize) -> CliResult<EvolveOptions> {
    let tg = match sim.tg {
        Some(t) => t,
        None => g.pulse_end(),
    };
    if !(tg > 0.0) {
        return Err(Failure::Input("gate time must be positive; pass --tg when the graph has no pulses".into()));
    }
    let astep = match sim.dt {
        Some(dt) if dt > 0.0 => (tg / dt).ceil() as usize,
        Some(_) => return Err(Failure::Input("--dt must be positive".into())),
        None => sim.astep,
    };
    Ok(EvolveOptions::new(tg, astep.max(1))
        .truncated_dim(d)
        .order(sim.trotter_order)
        .basis(sim.basis))
}

fn evolve(a: EvolveArgs) -> CliResult<()> {
    let g = bound_graph(&a.graph)?;
    let opts = evolve_options(&g, &a.sim, a.graph.truncated_dim)?;
    let sim = Simulator::new(&g, &opts)?;
    let evo = sim.run()?;
    let mut out = String::from("row,col,re,im\n");
    for (c, &col) in sim.labels.iter().enumerate() {
        let cl = label(&fluxgrad::composite::unflatten(col, sim.dims()));
        for r in 0..evo.matrix.nrows() {
            let v = evo.matrix[(r, c)];
            let rl = label(&fluxgrad::composite::unflatten(r, sim.dims()));
            out += &format!("{rl},{cl},{:e},{:e}\n", v.re, v.im);
        }
    }
    io::emit(a.out.as_deref(), &out)
}

fn gate_problem(a: &GateArgs) -> CliResult<GateProblem> {
    let mut g = read_graph(&a.graph.graph)?;
    let cr = cr_pairs(&g, &a.cr)?;
    if !cr.is_empty() {
        g = create_cr_pulses(&g, &cr, a.graph.truncated_dim)?;
    }
    let evolve = evolve_options(&g, &a.sim, a.graph.truncated_dim)?;
    let target = parse_gate(&a.target, &g.node_names())?;
    Ok(GateProblem {
        graph: g,
        evolve,
        target,
        compensation: a.compensation,
        share_params: a.graph.share_params,
        unify_coupling: a.graph.unify_coupling,
        cr,
    })
}

fn compensation(seed: u64) -> CompensationOptions {
    CompensationOptions {
        seed,
        ..Default::default()
    }
}

fn grad(a: GateArgs) -> CliResult<()> {
    let p = gate_problem(&a)?;
    let theta = p.params()?;
    let ev = p.evaluate(&theta, Some(&theta), &compensation(a.seed))?;
    let mut out = format!("# infidelity {:e}\nkey,value,unit,gradient\n", ev.infidelity);
    for (e, g) in theta.entries.iter().zip(&ev.gradient) {
        out += &format!("{},{},{},{:.3e}\n", e.key, e.value, e.unit, g);
    }
    io::emit(a.out.as_deref(), &out)
}

fn optimize(a: OptimizeArgs) -> CliResult<()> {
    let p = gate_problem(&a.gate)?;
    let fields = a
        .fields
        .iter()
        .map(|f| PulseField::parse(f.trim()).ok_or_else(|| Failure::Input(format!("unknown pulse field `{f}`"))))
        .collect::<CliResult<Vec<_>>>()?;
    let opts = ControlOptions {
        fields,
        minimize: MinimizeOptions {
            max_iter: a.max_iter,
            ..Default::default()
        },
        compensation: compensation(a.gate.seed),
    };
    let (csv, theta, final_obj) = if a.pattern {
        let report = pattern_workflow(&p, &standard_stages(), &opts)?;
        let mut csv = format!("# baseline {:e}\nstage,epoch,objective\n", report.baseline);
        for (s, stage) in report.stages.iter().enumerate() {
            for (k, v) in stage.trace.iter().enumerate() {
                csv += &format!("{},{k},{v:e}\n", s + 1);
            }
        }
        let last = report.stages.last().map_or(report.baseline, |s| s.objective);
        (csv, report.theta, last)
    } else {
        let theta0 = p.params()?;
        if control_params(&theta0, &opts.fields).is_empty() {
            return Err(Failure::Input("graph has no pulses; add some or pass --cr".into()));
        }
        let r = optimize_controls(&p, &theta0, &opts)?;
        let mut csv = String::from("epoch,objective\n");
        for (k, v) in r.optimizer.trace.iter().enumerate() {
            csv += &format!("{k},{v:e}\n");
        }
        (csv, r.theta, r.infidelity)
    };
    eprintln!("final infidelity {final_obj:e}");
    io::emit(a.gate.out.as_deref(), &csv)?;
    if let Some(path) = &a.graph_out {
        let g = bind_params(&p.graph, &theta)?;
        io::write(path, &g.to_json())?;
    }
    Ok(())
}

fn fit(a: FitArgs) -> CliResult<()> {
    let data = io::read_spectrum(&a.data)?;
    let text = std::fs::read_to_string(&a.init).map_err(|e| Failure::Input(format!("{}: {e}", a.init.display())))?;
    let init: FitParams =
        serde_json::from_str(&text).map_err(|e| Failure::Input(format!("{}: {e}", a.init.display())))?;
    let opts = MinimizeOptions {
        max_iter: a.max_iter,
        ftol: 0.0,
        gtol: 1e-10,
        ..Default::default()
    };
    let r = fit_spectrum(&data, &init, &opts, FIT_DIM_FULL)?;
    eprintln!("kl {:e} after {} iterations", r.objective, r.optimizer.nit);
    let json = serde_json::to_string_pretty(&r.params).expect("parameters serialize");
    io::emit(a.out.as_deref(), &(json + "\n"))?;
    if let Some(path) = &a.curve {
        io::write(path, &io::f01_curve(&data.x, &r.params)?)?;
    }
    Ok(())
}
