use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nlpm_core::config::{parse_config, RunConfig};
use nlpm_core::experiments::{
    domain_truncation_study, plateau, run_convergence, stefan_2d_demo, validate, ConvergenceStudy, LevelLog, StudyKind,
};

/// Worker threads for the rayon pool; unset means one per core.
const THREADS_ENV: &str = "NLPM_THREADS";

#[derive(Parser)]
#[command(name = "nlpm", version, about = "Monotone schemes for nonlocal porous medium type equations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a config, build the coarsest level and check admissibility and CFL.
    Validate { file: PathBuf },
    /// Run the experiment described by a config and write tables.
    Run {
        file: PathBuf,
        /// Overrides `[output] dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the stencil builders with their parameters and truncation orders.
    ListSchemes,
}

struct Builder {
    name: &'static str,
    signature: &'static str,
    lte: &'static str,
}

const CATALOG: &[Builder] = &[
    Builder { name: "local", signature: "sigmas: [vec], eta, h", lte: "O(h^2/eta^2 + eta^2), O(h) at eta = sqrt(h)" },
    Builder { name: "discrete_laplacian", signature: "dim, h", lte: "O(h^2)" },
    Builder { name: "trivial_singular", signature: "dim, h", lte: "O(r^{2-alpha})" },
    Builder {
        name: "vanishing_viscosity",
        signature: "mu, r, eta, h",
        lte: "O(h^2/eta^2 + eta^2 r^{4-2alpha} + r^{4-alpha})",
    },
    Builder { name: "vanishing_viscosity_coordinate", signature: "mu, r, h", lte: "O(h^2 r^{2-alpha} + r^{4-alpha})" },
    Builder { name: "midpoint", signature: "mu, r, h, r_max, far_field", lte: "O(h + r^{2-alpha})" },
    Builder {
        name: "interp_quadrature",
        signature: "mu, k in {0, 1, 2}, r, h, r_max, far_field",
        lte: "O(h^{k+1} r^{-alpha}); k = 2 with vanishing viscosity: O(h^{3-alpha})",
    },
    Builder {
        name: "newton_cotes",
        signature: "mu, k <= 6, r, h, r_max, far_field",
        lte: "O(h^{2-alpha}) at r = h, from the first panel",
    },
    Builder { name: "pdl_1d", signature: "alpha, h, m, far_field", lte: "O(h^2)" },
    Builder { name: "pdl_axis", signature: "dim, axis, alpha, h, m, far_field", lte: "O(h^2)" },
];

fn list_schemes() -> String {
    let mut s = String::new();
    let w = CATALOG.iter().map(|b| b.name.len()).max().unwrap_or(0);
    for b in CATALOG {
        let _ = writeln!(s, "{:<w$}  ({})", b.name, b.signature);
        let _ = writeln!(s, "{:<w$}  LTE {}", "", b.lte);
    }
    s
}

enum Failure {
    Validation(String),
    Runtime(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Validation(_) => 2,
            Failure::Runtime(_) => 3,
        }
    }
}

fn load(path: &Path) -> Result<RunConfig, Failure> {
    let text =
        fs::read_to_string(path).map_err(|e| Failure::Validation(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

fn fmt_bound(b: Option<f64>) -> String {
    match b {
        Some(b) => format!("{b:e}"),
        None => "unbounded".to_string(),
    }
}

fn cmd_validate(path: &Path) -> Result<(), Failure> {
    let cfg = load(path)?;
    let r = validate(&cfg.experiment).map_err(|e| Failure::Validation(e.to_string()))?;
    println!("config: {}", path.display());
    println!("h0 = {:e}, dt = {:e}", r.h, r.dt);
    println!("cfl bound = {}", fmt_bound(r.cfl_bound));
    println!(
        "stencil mass = {:e} (absorbed tail {:e}, dropped tail {:e})",
        r.total_mass, r.absorbed_tail, r.dropped_tail
    );
    println!("pass");
    Ok(())
}

fn manifest_header(cfg: &RunConfig, path: &Path, out: &Path, status: &str) -> String {
    let e = &cfg.experiment;
    let mode = match e.study {
        StudyKind::Convergence => "convergence",
        StudyKind::Truncation { .. } => "truncation",
        StudyKind::Stefan2d { .. } => "stefan2d",
    };
    let mut s = String::new();
    let _ = writeln!(s, "config = {}", path.display());
    let _ = writeln!(s, "output_dir = {}", out.display());
    let _ = writeln!(s, "experiment = {}", e.name);
    let _ = writeln!(s, "mode = {mode}");
    let _ = writeln!(s, "scheme = {}", e.scheme.name());
    let _ = writeln!(s, "alpha = {}", e.alpha);
    let _ = writeln!(s, "phi = {}", e.phi);
    let _ = writeln!(s, "theta = {}", e.theta);
    let _ = writeln!(s, "levels = {}", e.levels);
    let _ = writeln!(s, "status = {status}");
    s
}

const LEVEL_COLUMNS: &str = "study,h,dt,steps,cfl_bound,stencil_len,absorbed_tail,dropped_tail,\
newton_iterations,max_newton_iterations,linear_iterations,boundary_flux,source_mass";

fn level_line(study: &str, l: &LevelLog) -> String {
    format!(
        "{study},{:e},{:e},{},{},{},{:e},{:e},{},{},{},{:e},{:e}",
        l.h,
        l.dt,
        l.steps,
        fmt_bound(l.cfl_bound),
        l.stencil_len,
        l.absorbed_tail,
        l.dropped_tail,
        l.newton_iterations,
        l.max_newton_iterations,
        l.linear_iterations,
        l.boundary_flux,
        l.source_mass
    )
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Runtime(format!("cannot write {}: {e}", path.display())))
}

fn cmd_run(path: &Path, out: Option<PathBuf>) -> Result<(), Failure> {
    let cfg = load(path)?;
    let report = validate(&cfg.experiment).map_err(|e| Failure::Validation(e.to_string()))?;
    let out = out.or_else(|| cfg.output_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out).map_err(|e| Failure::Runtime(format!("cannot create {}: {e}", out.display())))?;
    let manifest = out.join("manifest.txt");
    let mut text = manifest_header(&cfg, path, &out, "running");
    let _ = writeln!(text, "coarse_cfl_bound = {}", fmt_bound(report.cfl_bound));
    write(&manifest, &text)?;

    let e = &cfg.experiment;
    let name = &e.name;
    let runtime = |err: nlpm_core::Error| Failure::Runtime(err.to_string());
    let mut tables: Vec<(PathBuf, String)> = Vec::new();
    let mut studies: Vec<(String, ConvergenceStudy)> = Vec::new();
    match &e.study {
        StudyKind::Convergence => {
            let s = run_convergence(e).map_err(runtime)?;
            print!("{}", s.to_table());
            studies.push((name.clone(), s));
        }
        StudyKind::Truncation { half_widths } => {
            let all = domain_truncation_study(e, half_widths).map_err(runtime)?;
            let mut plat = String::from("half_width,plateau_linf,plateau_l1\n");
            for (l, s) in half_widths.iter().zip(all) {
                print!("{}", s.to_table());
                let (pi, p1) = plateau(&s);
                let _ = writeln!(plat, "{l:.17e},{pi:.17e},{p1:.17e}");
                studies.push((format!("{name}_L{l}"), s));
            }
            tables.push((out.join(format!("{name}_plateau.csv")), plat));
        }
        StudyKind::Stefan2d { .. } => {
            let r = stefan_2d_demo(e, Some(&out)).map_err(runtime)?;
            print!("{}", r.study.to_table());
            let mut mass = String::from("t,mass\n");
            for (t, m) in &r.mass {
                let _ = writeln!(mass, "{t:.17e},{m:.17e}");
            }
            tables.push((out.join(format!("{name}_mass.csv")), mass));
            for p in &r.snapshots {
                println!("snapshot {}", p.display());
            }
            studies.push((name.clone(), r.study));
        }
    }

    let mut text = manifest_header(&cfg, path, &out, "complete");
    let _ = writeln!(text, "coarse_cfl_bound = {}", fmt_bound(report.cfl_bound));
    let _ = writeln!(text, "{LEVEL_COLUMNS}");
    for (label, s) in &studies {
        for l in &s.logs {
            let _ = writeln!(text, "{}", level_line(label, l));
        }
    }
    write(&manifest, &text)?;
    for (label, s) in &studies {
        tables.push((out.join(format!("{label}.csv")), s.to_csv()));
    }
    for (p, t) in &tables {
        write(p, t)?;
        println!("wrote {}", p.display());
    }
    Ok(())
}

fn init_threads() -> Result<(), Failure> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Failure::Validation(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::Runtime(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = init_threads().and_then(|()| match cli.command {
        Command::Validate { file } => cmd_validate(&file),
        Command::Run { file, out } => cmd_run(&file, out),
        Command::ListSchemes => {
            print!("{}", list_schemes());
            Ok(())
        }
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            let (Failure::Validation(msg) | Failure::Runtime(msg)) = &f;
            eprintln!("error: {msg}");
            ExitCode::from(f.code())
        }
    }
}
