use clap::{Parser, Subcommand};
use nlcf_core::cli::{self, CliError, Overrides, THREADS_ENV};
use nlcf_core::kernel::{make_kernel, KernelSpec};
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "nlcf", version, about = "Planar nonlocal curvature flows: scenarios, rendering and kernel diagnostics")]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the scenario described by a JSON config.
    Run {
        config: PathBuf,
        /// Grid spacing; replaces grid.n.
        #[arg(long = "h")]
        h: Option<f64>,
        /// Final time.
        #[arg(long = "T")]
        t_end: Option<f64>,
        /// Fractional order of the kernel.
        #[arg(long = "s")]
        s: Option<f64>,
    },
    /// Write one SVG per recorded frame of a run directory.
    Render { dir: PathBuf },
    /// Print integrability, regime and reference values of a kernel.
    KernelInfo { kernel: PathBuf },
}

fn threads() -> Result<(), CliError> {
    if let Ok(v) = std::env::var(THREADS_ENV) {
        let n: usize = v.parse().map_err(|_| CliError::Config(format!("{THREADS_ENV} must be a positive integer, got {v:?}")))?;
        if n == 0 {
            return Err(CliError::Config(format!("{THREADS_ENV} must be positive")));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| CliError::Config(e.to_string()))?;
    }
    Ok(())
}

fn read(path: &PathBuf) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.clone(), source })
}

fn main_inner() -> Result<bool, CliError> {
    let args = Args::parse();
    threads()?;
    match args.cmd {
        Cmd::Run { config, h, t_end, s } => {
            let cfg = cli::parse_config(&read(&config)?)?;
            let out = cli::run(&cfg, Overrides { h, t_end, s })?;
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&out.summary).expect("json"));
            log::info!("artifacts in {}", out.dir.display());
            Ok(out.pass)
        }
        Cmd::Render { dir } => {
            for p in cli::render(&dir)? {
                let _ = writeln!(std::io::stdout(), "{}", p.display());
            }
            Ok(true)
        }
        Cmd::KernelInfo { kernel } => {
            let spec: KernelSpec = serde_json::from_str(&read(&kernel)?).map_err(|e| CliError::Config(e.to_string()))?;
            let k = make_kernel(&spec)?;
            let info = cli::kernel_info(&k);
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&info).expect("json"));
            Ok(info["integrability"]["pass"].as_bool().unwrap_or(false))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match main_inner() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("nlcf: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
