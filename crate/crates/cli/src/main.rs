use std::path::{Path, PathBuf};
use std::process::{Child, Command, ExitCode};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use eigennet::ansatz::LevelSet;
use eigennet::config::{validate, ExperimentConfig, ProblemParams};
use eigennet::experiments::{self, RunSummary};
use eigennet::oracle::{fd_eigs, radial_eigs, RadialDomain};
use eigennet::quadrature::DomainSpec;

#[derive(Parser)]
#[command(name = "eigennet", version, about = "Neural Rayleigh-quotient eigensolver experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the experiment described by a config file.
    Run {
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Artifact directory (default: $EIGENNET_OUT/<experiment>).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker processes for experiments with independent sub-runs.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Check a config file and list every problem found.
    Validate { config: PathBuf },
    /// Finite-difference eigenvalues of a built-in domain:
    /// interval, square, semicircle, annulus(a), hypercube(d).
    Oracle {
        domain: String,
        #[arg(long, default_value_t = 1.0 / 64.0)]
        h: f64,
        #[arg(long, default_value_t = 10)]
        k: usize,
    },
}

fn parse_domain(name: &str) -> Result<DomainSpec> {
    let name = name.replace("hypercube(", "hypercube-skewed(");
    Ok(match name.parse::<LevelSet>()? {
        LevelSet::Interval => DomainSpec::Interval,
        LevelSet::Square => DomainSpec::UnitSquare,
        LevelSet::Semicircle => DomainSpec::Semicircle,
        LevelSet::Annulus { inner: Some(a) } => DomainSpec::Annulus { inner: a },
        LevelSet::Annulus { inner: None } => bail!("annulus needs an inner radius, e.g. annulus(0.5)"),
        LevelSet::HypercubeSkewed { dim } => DomainSpec::Hypercube { dim },
    })
}

fn oracle(domain: &str, h: f64, k: usize) -> Result<()> {
    let spec = parse_domain(domain)?;
    let lattice = fd_eigs(&spec, h, k)?;
    let radial = match spec {
        DomainSpec::Semicircle => Some(radial_eigs(RadialDomain::HalfDisk, k, 400)?),
        DomainSpec::Annulus { inner } => Some(radial_eigs(RadialDomain::Annulus { inner }, k, 400)?),
        _ => None,
    };
    match radial {
        Some(r) => {
            println!("index,lattice,separable");
            for (i, (l, m)) in lattice.eigenvalues.iter().zip(&r).enumerate() {
                println!("{},{l:.10},{:.10}", i + 1, m.eigenvalue);
            }
        }
        None => {
            println!("index,lattice");
            for (i, l) in lattice.eigenvalues.iter().enumerate() {
                println!("{},{l:.10}", i + 1);
            }
        }
    }
    Ok(())
}

fn run_parallel(cfg: &ExperimentConfig, out: &Path, jobs: usize) -> Result<RunSummary> {
    let parts = experiments::split_independent(cfg);
    let exe = std::env::current_exe()?;
    let mut pending: Vec<(String, PathBuf)> = Vec::new();
    for (label, sub) in &parts {
        let dir = out.join(label);
        std::fs::create_dir_all(&dir)?;
        let path = dir.join("input.toml");
        std::fs::write(&path, sub.to_toml())?;
        pending.push((label.clone(), dir));
    }
    let mut running: Vec<(String, Child)> = Vec::new();
    let mut queue = pending.iter();
    let mut summaries = Vec::new();
    loop {
        while running.len() < jobs {
            let Some((label, dir)) = queue.next() else { break };
            log::info!("starting worker {label}");
            let child = Command::new(&exe)
                .arg("run")
                .arg(dir.join("input.toml"))
                .arg("--out")
                .arg(dir)
                .spawn()
                .with_context(|| format!("spawning worker {label}"))?;
            running.push((label.clone(), child));
        }
        if running.is_empty() {
            break;
        }
        let (label, mut child) = running.remove(0);
        let status = child.wait()?;
        if !status.success() {
            bail!("worker {label} exited with {status}");
        }
    }
    for (_, dir) in &pending {
        summaries.push(experiments::read_summary(dir)?);
    }
    Ok(experiments::merge_highdim_first(cfg, &summaries, out)?)
}

fn run(config: &Path, seed: Option<u64>, out: Option<PathBuf>, jobs: usize) -> Result<ExitCode> {
    let mut cfg = ExperimentConfig::from_file(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = experiments::resolve_output_dir(&cfg, out.as_deref());
    let parallel = jobs > 1 && matches!(cfg.problem, ProblemParams::HighdimFirst(_)) && !experiments::split_independent(&cfg).is_empty();
    let summary = if parallel {
        std::fs::create_dir_all(&dir)?;
        run_parallel(&cfg, &dir, jobs)?
    } else {
        experiments::run(&cfg, &dir)?
    };
    println!("{}", dir.join("summary.json").display());
    for f in &summary.failures {
        eprintln!("warning: {f}");
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Run { config, seed, out, jobs } => run(&config, seed, out, jobs),
        Cmd::Validate { config } => match std::fs::read_to_string(&config) {
            Ok(text) => {
                let diags = validate(&text);
                for d in &diags {
                    println!("{}: {d}", config.display());
                }
                Ok(if diags.is_empty() { ExitCode::SUCCESS } else { ExitCode::from(1) })
            }
            Err(e) => Err(e.into()),
        },
        Cmd::Oracle { domain, h, k } => oracle(&domain, h, k).map(|_| ExitCode::SUCCESS),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
