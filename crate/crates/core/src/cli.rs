//! `rpe3d` command-line front-end.
//!
//! Exit codes: 0 success, 1 usage, 2 I/O, 3 verification failure.
//! CSV floats use six decimals and `\n` row terminators so output files are
//! byte-stable across runs.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::angles::{phi_schedule, theta_schedule, DEFAULT_BASE};
use crate::attention::{attention_forward, grad_check, head_forward, AttentionBatch};
use crate::chunking::{relative_position_matrix, ChunkLayout};
use crate::decay::{decay_curve_3d, decay_curve_rope, decay_surface_3d, DecayCurve, DecaySurface};
use crate::interpolation::{theorem1_grid_check, ResolutionReport};
use crate::verify::{run_all, Reference};

/// Relative `--out` paths are resolved against this directory when it is set.
pub const OUTPUT_DIR_ENV: &str = "RPE3D_OUTPUT_DIR";

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_VERIFY: i32 = 3;

/// Largest relative gradient error `attn-demo --grad-check` accepts.
pub const DEMO_GRAD_TOLERANCE: f64 = 1e-4;

#[derive(Debug, Parser)]
#[command(
    name = "rpe3d",
    version,
    about = "Chunked rotary position encoding analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Emit long-term decay bounds (RoPE curve, chunked curve or surface)
    Decay(DecayArgs),
    /// Emit the chunked relative-position matrix
    Relpos(RelposArgs),
    /// Compare interpolation resolution over a grid of target lengths and chunk sizes
    Resolution(ResolutionArgs),
    /// Run the randomized invariant suites
    Verify(VerifyArgs),
    /// Run a toy attention forward pass (and optionally a gradient check)
    AttnDemo(AttnDemoArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Format {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Args)]
pub struct OutputArgs {
    /// Output file; stdout when absent
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Args)]
pub struct DecayArgs {
    #[arg(long, default_value_t = 128)]
    pub d: usize,
    #[arg(long, default_value_t = DEFAULT_BASE)]
    pub base: f64,
    /// Largest relative distance of the RoPE curve
    #[arg(long, conflicts_with = "chunk")]
    pub max_rel: Option<usize>,
    /// Chunk size; selects the chunked curve over distances 0..chunk
    #[arg(long)]
    pub chunk: Option<usize>,
    /// Number of chunk deltas; with --chunk, emits the (rel, chunk_delta) surface
    #[arg(long, requires = "chunk")]
    pub chunk_deltas: Option<usize>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct RelposArgs {
    #[arg(long)]
    pub length: usize,
    #[arg(long)]
    pub chunk: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ResolutionArgs {
    /// Pre-trained context length
    #[arg(long)]
    pub pretrain: usize,
    /// Target lengths (comma separated)
    #[arg(long = "targets", alias = "target", value_delimiter = ',', num_args = 1.., required = true)]
    pub targets: Vec<usize>,
    /// Chunk sizes (comma separated)
    #[arg(long = "chunks", alias = "chunk", value_delimiter = ',', num_args = 1.., required = true)]
    pub chunks: Vec<usize>,
    #[arg(long, default_value_t = 128)]
    pub d: usize,
    #[arg(long, default_value_t = DEFAULT_BASE)]
    pub base: f64,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
}

#[derive(Debug, Args)]
pub struct AttnDemoArgs {
    #[arg(long, default_value_t = 8)]
    pub length: usize,
    #[arg(long, default_value_t = 3)]
    pub chunk: usize,
    /// Per-head dimension
    #[arg(long, default_value_t = 4)]
    pub d: usize,
    #[arg(long, default_value_t = 1)]
    pub heads: usize,
    #[arg(long, default_value_t = DEFAULT_BASE)]
    pub base: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub causal: bool,
    #[arg(long)]
    pub grad_check: bool,
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Io(String),
    Verify(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Usage(_) => EXIT_USAGE,
            Failure::Io(_) => EXIT_IO,
            Failure::Verify(_) => EXIT_VERIFY,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Usage(m) | Failure::Io(m) | Failure::Verify(m) => m,
        }
    }
}

impl From<crate::Error> for Failure {
    fn from(e: crate::Error) -> Self {
        Failure::Usage(e.to_string())
    }
}

fn io_failure(e: std::io::Error) -> Failure {
    Failure::Io(e.to_string())
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(stdout, "{e}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(stderr, "{e}");
                    EXIT_USAGE
                }
            };
        }
    };
    let result = match cli.command {
        Command::Decay(a) => cmd_decay(&a, stdout),
        Command::Relpos(a) => cmd_relpos(&a, stdout),
        Command::Resolution(a) => cmd_resolution(&a, stdout, stderr),
        Command::Verify(a) => cmd_verify(&a, stdout),
        Command::AttnDemo(a) => cmd_attn_demo(&a, stdout),
    };
    match result {
        Ok(()) => EXIT_OK,
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message());
            f.code()
        }
    }
}

fn resolve_out(path: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_DIR_ENV) {
        Some(dir) if path.is_relative() => Path::new(&dir).join(path),
        _ => path.to_path_buf(),
    }
}

fn emit(out: Option<&Path>, contents: &str, stdout: &mut dyn Write) -> Result<(), Failure> {
    match out {
        Some(path) => {
            let path = resolve_out(path);
            std::fs::write(&path, contents)
                .map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
        }
        None => stdout.write_all(contents.as_bytes()).map_err(io_failure),
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report types serialize");
    s.push('\n');
    s
}

/// `rel,bound` rows.
pub fn decay_csv(curve: &DecayCurve) -> String {
    let mut s = String::from("rel,bound\n");
    for (r, b) in curve.rel_distances.iter().zip(&curve.bounds) {
        let _ = writeln!(s, "{r},{b:.6}");
    }
    s
}

/// `rel,chunk_delta,bound` rows.
pub fn surface_csv(surface: &DecaySurface) -> String {
    let mut s = String::from("rel,chunk_delta,bound\n");
    for c in &surface.cells {
        let _ = writeln!(s, "{},{},{:.6}", c.rel, c.chunk_delta, c.bound);
    }
    s
}

/// One row per query position, cells `chunk_delta/token_delta`.
pub fn relpos_csv(layout: &ChunkLayout) -> String {
    let mut s = String::from("qpos");
    for k in 0..layout.seq_len() {
        let _ = write!(s, ",k{k}");
    }
    s.push('\n');
    for (p, row) in relative_position_matrix(layout).iter().enumerate() {
        let _ = write!(s, "{p}");
        for cell in row {
            let _ = write!(s, ",{cell}");
        }
        s.push('\n');
    }
    s
}

pub const RESOLUTION_COLUMNS: [&str; 10] = [
    "pretrain_len",
    "target_len",
    "chunk_size",
    "num_chunks",
    "new_chunk_size",
    "resolution_rope_pi",
    "resolution_3d",
    "boundary_resolution",
    "theorem_holds",
    "feasible",
];

fn opt6(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.6}")).unwrap_or_default()
}

/// Resolution records with [`RESOLUTION_COLUMNS`]; missing values are empty cells.
pub fn resolution_csv(reports: &[ResolutionReport]) -> String {
    let mut s = RESOLUTION_COLUMNS.join(",");
    s.push('\n');
    for r in reports {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{:.6},{},{},{},{}",
            r.pretrain_len,
            r.target_len,
            r.chunk_size,
            r.num_chunks,
            r.new_chunk_size,
            r.resolution_rope_pi,
            opt6(r.resolution_3d),
            opt6(r.boundary_resolution),
            r.theorem_holds,
            r.feasible
        );
    }
    s
}

fn cmd_decay(args: &DecayArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let schedule = theta_schedule(args.d, args.base)?;
    let contents = match (args.chunk, args.chunk_deltas) {
        (Some(c), Some(deltas)) => {
            let surface = decay_surface_3d(c, deltas, &schedule)?;
            match args.output.format {
                Format::Csv => surface_csv(&surface),
                Format::Json => to_json(&surface),
            }
        }
        (chunk, _) => {
            let curve = match chunk {
                Some(c) => decay_curve_3d(c, &schedule)?,
                None => decay_curve_rope(args.max_rel.unwrap_or(8192), &schedule),
            };
            match args.output.format {
                Format::Csv => decay_csv(&curve),
                Format::Json => to_json(&curve),
            }
        }
    };
    emit(args.output.out.as_deref(), &contents, stdout)
}

fn cmd_relpos(args: &RelposArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let layout = ChunkLayout::new(args.length, args.chunk)?;
    emit(args.out.as_deref(), &relpos_csv(&layout), stdout)
}

fn cmd_resolution(
    args: &ResolutionArgs,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<(), Failure> {
    let schedule = theta_schedule(args.d, args.base)?;
    let max_chunks = args
        .chunks
        .iter()
        .map(|&c| crate::chunking::chunk_count(args.pretrain, c))
        .collect::<crate::Result<Vec<_>>>()?
        .into_iter()
        .max()
        .unwrap_or(1);
    let phis = phi_schedule(max_chunks.max(2), args.base)?;
    let reports =
        theorem1_grid_check(args.pretrain, &args.targets, &args.chunks, &schedule, &phis)?;
    for r in &reports {
        let what = if !r.feasible {
            Some("infeasible: new chunk size exceeds the pre-trained length")
        } else if r.is_degenerate() {
            Some("degenerate: no extension, strict comparison cannot hold")
        } else if !r.meets_chunk_precondition() {
            Some("below threshold: new chunk size < 3, no guarantee")
        } else {
            None
        };
        if let Some(what) = what {
            writeln!(
                stderr,
                "note: L={} c={}: {what}",
                r.target_len, r.chunk_size
            )
            .map_err(io_failure)?;
        }
    }
    let contents = match args.output.format {
        Format::Csv => resolution_csv(&reports),
        Format::Json => to_json(&reports),
    };
    emit(args.output.out.as_deref(), &contents, stdout)?;
    if !reports.is_empty() && reports.iter().all(|r| !r.feasible) {
        return Err(Failure::Verify(
            "every (target, chunk) pair is infeasible".into(),
        ));
    }
    Ok(())
}

fn cmd_verify(args: &VerifyArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    if args.trials == 0 {
        return Err(Failure::Usage("--trials must be at least 1".into()));
    }
    let report = run_all(&Reference, args.seed, args.trials);
    for suite in &report.suites {
        writeln!(
            stdout,
            "{:<14} passed {:>6}  failed {:>6}",
            suite.name, suite.passed, suite.failed
        )
        .map_err(io_failure)?;
    }
    if report.all_passed() {
        writeln!(stdout, "all invariants hold").map_err(io_failure)?;
        return Ok(());
    }
    let mut msg = String::from("invariant failures:");
    for f in report.failures() {
        let _ = write!(
            msg,
            "\n  {} (reproduce: verify --seed {} --trials 1): {}",
            f.property, f.seed, f.message
        );
    }
    Err(Failure::Verify(msg))
}

fn fmt_row(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| format!("{v:.6}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn cmd_attn_demo(args: &AttnDemoArgs, stdout: &mut dyn Write) -> Result<(), Failure> {
    let layout = ChunkLayout::new(args.length, args.chunk)?;
    let schedule = theta_schedule(args.d, args.base)?;
    let phis = phi_schedule(layout.num_chunks(), args.base)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let batch =
        AttentionBatch::random(layout, args.heads, args.d, &mut rng)?.with_causal(args.causal);
    let output = attention_forward(&batch, &schedule, &phis)?;

    let mut s = String::new();
    let _ = writeln!(
        s,
        "length {} chunk {} chunks {} heads {} d {}",
        layout.seq_len(),
        layout.chunk_size(),
        layout.num_chunks(),
        args.heads,
        args.d
    );
    for head in 0..args.heads {
        let state = head_forward(&batch, head, &schedule, &phis)?;
        let _ = writeln!(s, "scores (head {head}):");
        for row in &state.scores {
            let _ = writeln!(s, "  {}", fmt_row(row));
        }
    }
    let _ = writeln!(s, "pos |output| |value| output");
    for (p, (o, v)) in output.iter().zip(batch.values()).enumerate() {
        let _ = writeln!(
            s,
            "{p} {:.6} {:.6} {}",
            o.norm(),
            v.norm(),
            fmt_row(o.values())
        );
    }
    stdout.write_all(s.as_bytes()).map_err(io_failure)?;

    if args.grad_check {
        let width = args.heads * args.d;
        let upstream: Vec<Vec<f64>> = (0..layout.seq_len())
            .map(|_| (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let report = grad_check(&batch, &schedule, &phis, &upstream, 1e-4)?;
        writeln!(
            stdout,
            "grad check: {} coordinates, max relative error {:.3e}",
            report.coordinates, report.max_relative_error
        )
        .map_err(io_failure)?;
        if report.max_relative_error > DEMO_GRAD_TOLERANCE {
            return Err(Failure::Verify(format!(
                "gradient check failed: {:.3e} > {DEMO_GRAD_TOLERANCE:e} at {:?}",
                report.max_relative_error, report.worst
            )));
        }
    }
    Ok(())
}
