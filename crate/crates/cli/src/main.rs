mod args;
mod estimate;
mod manifest;
mod simulate;

use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command, EstimateArgs, ReplayArgs, SimulateArgs};
use manifest::RunManifest;

/// Exit codes: 0 ok, 1 replay check mismatch, 2 usage or data, 3 numerical.
#[derive(Debug)]
pub struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }

    pub fn numerical(message: impl Into<String>) -> Self {
        Self {
            code: 3,
            message: message.into(),
        }
    }
}

/// Output of a command before anything touches the filesystem.
pub struct Rendered {
    pub files: Vec<(PathBuf, String)>,
    pub stdout: String,
    /// Path the timing sidecar name is derived from.
    pub sidecar_base: Option<PathBuf>,
}

enum Job {
    Estimate(EstimateArgs),
    Simulate(SimulateArgs),
}

impl Job {
    fn manifest(&self) -> Result<RunManifest, Failure> {
        match self {
            Job::Estimate(a) => estimate::manifest(a),
            Job::Simulate(a) => simulate::manifest(a),
        }
    }

    fn run(&self, m: &RunManifest) -> Result<Rendered, Failure> {
        match self {
            Job::Estimate(a) => estimate::run(a, m),
            Job::Simulate(a) => simulate::run(a, m),
        }
    }

    /// Files the job writes for output location `out`, in `Rendered` order.
    fn paths(&self, out: &Path) -> Vec<PathBuf> {
        match self {
            Job::Estimate(_) => vec![out.to_path_buf()],
            Job::Simulate(_) => simulate::paths(out),
        }
    }
}

fn emit(rendered: &Rendered, manifest: &RunManifest, started: u128) -> Result<(), Failure> {
    let mut written = Vec::new();
    for (path, contents) in &rendered.files {
        manifest::write_file(path, contents)?;
        written.push(path.clone());
    }
    if let Some(base) = &rendered.sidecar_base {
        manifest::write_sidecar(&manifest::sidecar_path(base), manifest, started, &written)?;
    }
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(rendered.stdout.as_bytes());
    Ok(())
}

fn execute(job: Job) -> Result<(), Failure> {
    let started = manifest::now_ms();
    let m = job.manifest()?;
    let rendered = job.run(&m)?;
    emit(&rendered, &m, started)
}

fn job_from_manifest(m: &RunManifest) -> Result<Job, Failure> {
    let bad = |e: serde_json::Error| Failure::usage(format!("manifest flags do not parse: {e}"));
    match m.command.as_str() {
        "estimate" => Ok(Job::Estimate(serde_json::from_value(m.flags.clone()).map_err(bad)?)),
        "simulate" => Ok(Job::Simulate(serde_json::from_value(m.flags.clone()).map_err(bad)?)),
        other => Err(Failure::usage(format!("cannot replay command `{other}`"))),
    }
}

fn replay(args: &ReplayArgs) -> Result<(), Failure> {
    let started = manifest::now_ms();
    let recorded = manifest::extract(&args.source)?;
    if recorded.version != longfuse::VERSION {
        log::warn!(
            "manifest was written by version {}, replaying with {}",
            recorded.version,
            longfuse::VERSION
        );
    }
    recorded.verify_inputs()?;
    let job = job_from_manifest(&recorded)?;
    // the embedded manifest keeps the recorded flags; only the destination moves
    let mut rendered = job.run(&recorded)?;
    if let Some(out) = &args.out {
        let paths = job.paths(out);
        rendered.files = paths
            .into_iter()
            .zip(rendered.files.drain(..))
            .map(|(path, (_, contents))| (path, contents))
            .collect();
        rendered.sidecar_base = Some(out.clone());
    }
    if args.check {
        let mut mismatched = Vec::new();
        for (path, contents) in &rendered.files {
            match manifest::read_to_string(path) {
                Ok(existing) if &existing == contents => {}
                _ => mismatched.push(path.display().to_string()),
            }
        }
        if rendered.files.is_empty() {
            return Err(Failure::usage("the recorded run wrote no files to compare"));
        }
        if !mismatched.is_empty() {
            return Err(Failure {
                code: 1,
                message: format!("replay differs from {}", mismatched.join(", ")),
            });
        }
        println!("replay matches {} file(s)", rendered.files.len());
        return Ok(());
    }
    emit(&rendered, &recorded, started)
}

fn init_logging(verbose: u8) {
    let level = match verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose);
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not size the thread pool: {e}");
        }
    }
    let result = match cli.command {
        Command::Estimate(a) => execute(Job::Estimate(a)),
        Command::Simulate(a) => execute(Job::Simulate(a)),
        Command::Replay(a) => replay(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
