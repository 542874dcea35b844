use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use boltzwave_core::collision_tensor::{load, CacheError, CollisionTensor, TensorError};
use boltzwave_core::haar_basis::{
    verify_assumption1, verify_assumption2, verify_assumption3, verify_assumption4, FilteredBasis, VerifyOptions,
};
use boltzwave_core::scenario_io::{
    obtain_tensor, parse_config, resolve_cache_path, run_scenario, CacheStatus, CsvWriter, ScenarioConfig,
    ScenarioError, TensorSourceError,
};
use clap::{Args, Parser, Subcommand, ValueEnum};

const CACHE_ENV: &str = "BOLTZWAVE_CACHE_DIR";

#[derive(Parser)]
#[command(
    name = "boltzwave",
    version,
    about = "Spectral solver for the homogeneous Boltzmann equation"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args)]
struct Common {
    /// Scenario config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Worker threads for tensor build and contraction.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build the collision tensor, or reuse a matching cache.
    BuildTensor {
        #[command(flatten)]
        common: Common,
        /// Rebuild even if a cache exists.
        #[arg(long)]
        force: bool,
        /// Cache file to write instead of the configured one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the scenario and write the diagnostics CSV.
    Run {
        #[command(flatten)]
        common: Common,
        /// Rebuild the tensor even if a cache exists.
        #[arg(long)]
        force: bool,
        /// CSV path instead of the configured one.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check the basis assumptions.
    Verify {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "all")]
        assumption: Which,
    },
    /// Print the metadata of a tensor cache.
    InspectCache {
        #[command(flatten)]
        common: Common,
        /// Cache file instead of the one the config resolves to.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Which {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
    #[value(name = "4")]
    Four,
    All,
}

/// Failure with its exit code.
struct Fail {
    code: u8,
    msg: String,
}

impl Fail {
    fn config(msg: impl ToString) -> Self {
        Self {
            code: 2,
            msg: msg.to_string(),
        }
    }
    fn numeric(msg: impl ToString) -> Self {
        Self {
            code: 3,
            msg: msg.to_string(),
        }
    }
    fn io(msg: impl ToString) -> Self {
        Self {
            code: 4,
            msg: msg.to_string(),
        }
    }
}

impl From<CacheError> for Fail {
    fn from(e: CacheError) -> Self {
        match e {
            CacheError::Mismatch(_) => Fail::config(format!("{e}\n(use --force to rebuild)")),
            _ => Fail::io(e),
        }
    }
}

impl From<TensorSourceError> for Fail {
    fn from(e: TensorSourceError) -> Self {
        match e {
            TensorSourceError::Cache(c) => c.into(),
            TensorSourceError::Build(TensorError::Samples) => Fail::config(e),
            TensorSourceError::Build(_) => Fail::numeric(e),
            TensorSourceError::Kernel(_) | TensorSourceError::Basis(_) => Fail::config(e),
        }
    }
}

impl From<ScenarioError> for Fail {
    fn from(e: ScenarioError) -> Self {
        Fail::numeric(e)
    }
}

struct Loaded {
    cfg: ScenarioConfig,
    basis: FilteredBasis,
    dir: PathBuf,
}

fn load_config(common: &Common) -> Result<Loaded, Fail> {
    if let Some(k) = common.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k)
            .build_global()
            .map_err(|e| Fail::config(format!("--threads: {e}")))?;
    }
    let text = fs::read_to_string(&common.config)
        .map_err(|e| Fail::io(format!("cannot read {}: {e}", common.config.display())))?;
    let cfg = parse_config(&text).map_err(|e| Fail::config(format!("{}: {e}", common.config.display())))?;
    let basis = cfg.basis().map_err(Fail::config)?;
    let dir = common.config.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { cfg, basis, dir })
}

fn cache_path(l: &Loaded, out: Option<&Path>) -> Result<PathBuf, Fail> {
    if let Some(p) = out {
        return Ok(p.to_path_buf());
    }
    let env = std::env::var_os(CACHE_ENV).map(PathBuf::from);
    resolve_cache_path(&l.cfg, &l.dir, env.as_deref()).map_err(Fail::config)
}

fn tensor(l: &Loaded, path: &Path, force: bool) -> Result<CollisionTensor, Fail> {
    let (t, status) = obtain_tensor(&l.cfg, &l.basis, path, force)?;
    match status {
        CacheStatus::Hit => println!("cache hit: {}", path.display()),
        CacheStatus::Built => println!("built tensor, saved to {}", path.display()),
    }
    Ok(t)
}

fn describe(t: &CollisionTensor) {
    let m = &t.meta;
    println!("level {}  delta {}  cells {}", m.level, m.delta, t.n_cells());
    println!(
        "kernel gamma {}  theta_b {}  b0 {}  lambda {}",
        m.kernel.gamma(),
        m.kernel.theta_b(),
        m.kernel.b0(),
        m.kernel.lambda().map_or("none".to_string(), |x| x.to_string())
    );
    println!(
        "samples/pair {}  seed {}  weighted {}  jacobian {}",
        m.samples_per_pair, m.seed, m.ansatz.weighted, m.ansatz.jacobian
    );
    println!("gain entries {}  loss entries {}", t.gain.len(), t.loss.nonzero_count());
    println!("dropped mass fraction {:.6e}", m.dropped_mass);
}

fn build_tensor(common: &Common, force: bool, out: Option<&Path>) -> Result<(), Fail> {
    let l = load_config(common)?;
    let path = cache_path(&l, out)?;
    let t = tensor(&l, &path, force)?;
    describe(&t);
    Ok(())
}

fn run_cmd(common: &Common, force: bool, out: Option<&Path>) -> Result<(), Fail> {
    let l = load_config(common)?;
    let path = cache_path(&l, None)?;
    let t = tensor(&l, &path, force)?;
    let csv = match (out, &l.cfg.paths.csv_out) {
        (Some(p), _) => p.to_path_buf(),
        (None, Some(p)) => l.dir.join(p),
        (None, None) => {
            let stem = common.config.file_stem().unwrap_or_default().to_string_lossy();
            l.dir.join(format!("{stem}.csv"))
        }
    };
    if let Some(d) = csv.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(d).map_err(|e| Fail::io(format!("{}: {e}", d.display())))?;
    }
    let io_err = |e: std::io::Error| Fail::io(format!("{}: {e}", csv.display()));
    let file = fs::File::create(&csv).map_err(io_err)?;
    let mut w = CsvWriter::new(std::io::BufWriter::new(file), &l.cfg.moments).map_err(io_err)?;
    let mut write_err = None;
    let summary = run_scenario(&l.cfg, &l.basis, &t, |_, r| {
        if write_err.is_none() {
            write_err = w.write(r).err();
        }
    })?;
    if let Some(e) = write_err {
        return Err(io_err(e));
    }
    w.finish().map_err(io_err)?;

    let s = &summary;
    println!("wrote {}", csv.display());
    println!(
        "collision time {:.6}  t_end {:.6}  dt {:.6e}  steps {}",
        s.collision_time, s.t_end, s.dt, s.steps
    );
    println!("mass    initial {:.10}  final {:.10}", s.initial.mass, s.last.mass);
    println!("energy  initial {:.10}  final {:.10}", s.initial.energy, s.last.energy);
    println!("mass+energy drop {:.6e}", s.theta_moment_drop);
    println!(
        "min cell {:.3e}  halvings {}  negative events {}",
        s.last.min_cell, s.halvings, s.negative_events
    );
    match &s.rate_fit {
        Some(f) => println!(
            "relaxation rate c {:.6}  (R^2 {:.4} over {} samples)",
            f.c, f.quality, f.samples
        ),
        None => println!("relaxation rate c: not enough samples"),
    }
    Ok(())
}

fn verify(common: &Common, which: Which) -> Result<(), Fail> {
    let l = load_config(common)?;
    let (b, v) = (&l.basis, &l.cfg.verify);
    let opts = VerifyOptions::default();
    let mut ok = true;
    let mut mark = |p: bool| {
        ok &= p;
        if p {
            "pass"
        } else {
            "FAIL"
        }
    };
    println!("basis level {}  delta {}  cells {}", b.level(), b.delta(), b.len());
    if matches!(which, Which::One | Which::All) {
        let r = verify_assumption1(b, v.samples, v.seed);
        println!(
            "assumption 1: projection defect {:.3e}, max collision defect {:.3e} over {} samples ({} escaped)  [{}]",
            r.projection_defect,
            r.max_defect,
            r.samples,
            r.escaped,
            mark(r.passed)
        );
        if let (false, Some(q)) = (r.passed, &r.counterexample) {
            println!("  counterexample {q:?}");
        }
    }
    if matches!(which, Which::Two | Which::All) {
        for &s in &v.s {
            let r = verify_assumption2(b, s, &opts);
            println!(
                "assumption 2, s={s}: ratio in [{:.6}, {:.6}], bounds [{:.6}, {:.6}]  [{}]",
                r.min_ratio,
                r.max_ratio,
                r.lower_bound,
                r.upper_bound,
                mark(r.passed)
            );
            if !r.passed {
                println!("  extremes at {:?} and {:?}", r.min_point, r.max_point);
            }
        }
    }
    if matches!(which, Which::Three | Which::All) {
        for &n in &v.n {
            let r = verify_assumption3(b, n, &opts);
            println!(
                "assumption 3, n={n}: eps {:.6e} <= bound {:.6e} (interior {:.6e}, central {:.6e})  [{}]",
                r.measured_eps,
                r.bound,
                r.interior_bound,
                r.central_bound,
                mark(r.passed)
            );
            if !r.passed {
                println!("  worst point {:?}", r.worst_point);
            }
        }
    }
    if matches!(which, Which::Four | Which::All) {
        let r = verify_assumption4(b, v.a, v.q, &opts);
        println!(
            "assumption 4, a={} q={}: K {:.6}, structural ratio {:.4}  [{}]",
            r.a,
            r.q,
            r.kbar,
            r.structural_ratio,
            mark(r.passed)
        );
        if !r.passed {
            println!("  K attained at {:?}", r.kbar_point);
        }
    }
    if ok {
        Ok(())
    } else {
        Err(Fail::numeric("verification failed"))
    }
}

fn inspect(common: &Common, out: Option<&Path>) -> Result<(), Fail> {
    let path = match out {
        Some(p) => p.to_path_buf(),
        None => cache_path(&load_config(common)?, None)?,
    };
    let t = load(&path)?;
    println!("{}", path.display());
    describe(&t);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::BuildTensor { common, force, out } => build_tensor(common, *force, out.as_deref()),
        Cmd::Run { common, force, out } => run_cmd(common, *force, out.as_deref()),
        Cmd::Verify { common, assumption } => verify(common, *assumption),
        Cmd::InspectCache { common, out } => inspect(common, out.as_deref()),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
