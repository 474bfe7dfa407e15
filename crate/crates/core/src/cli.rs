//! The `hiercode` command-line tool.
//!
//! Exit codes: 0 on success, 1 for invalid input or a failed check, 2 when a
//! file cannot be read or written.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::codebook::{
    classes_for_ratio, read_codebook, trits_to_string, write_codebook, CodeTables, Codebook,
    CodebookBuilder, CodebookError, CompressionStats, FormatError, RadicalCodeSet, StructCodeTable,
};
use crate::embed::CodeParams;
use crate::gradcheck::run_ctc_check;
use crate::ids::{read_ids_file, validate, DecompTree, IdsFileError};
use crate::losses::best_path_decode;
use crate::similarity::{binarize, topk, BinarizeMode, Frames};
use crate::synth::{
    ablation_sweep, codebook_for, default_grid, eval_line_zero_shot, eval_zero_shot_char,
    synthetic_charset, SweepConfig, SweepPoint, SynthConfig, ZeroShotSplit, SWEEP_FLIP_RATE,
};

/// Compression ratio reported for the printed-character setting.
const PAPER_RATIO: f64 = 0.926;

const FORMATS: &str = "\
FILE FORMATS

IDS file (UTF-8): one record per line, `<character>\\t<IDS>`. Lines that are
empty or start with `#` are ignored. Multi-codepoint components are written
as `&name;`.

Prototype file (UTF-8): one radical per line, `<radical>\\t<code>`, the code a
string of L_R characters from {+, -}. `#` lines are ignored.

Frames file, binary: u32 t, u32 W, then t*W f32 values, all little-endian,
stored row-major over the t x W matrix (value i of frame j at index i*W + j).
Frames file, text: anything that is not a well-sized binary file; one frame
per line, t numbers separated by tabs or spaces, `#` lines ignored.

Codebook file: magic `HIERCODE`, u16 version, parameters, labels, rows packed
at 2 bits per trit (00 = 0, 01 = +1, 10 = -1) and a CRC-64/XZ trailer.

EXIT CODES
0 success, 1 invalid input or failed check, 2 file I/O error.";

#[derive(Debug, Parser)]
#[command(name = "hiercode", version, about = "Hierarchical multi-hot codes for CJK characters", after_help = FORMATS)]
pub struct Cli {
    /// Output format.
    #[arg(long, value_enum, default_value_t = OutputFormat::Json, global = true)]
    pub format: OutputFormat,
    /// Write the report to this file instead of standard output.
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    /// Seed for radical codes, blank rows and synthetic data.
    #[arg(long, env = "HIERCODE_SEED", default_value_t = 0, global = true)]
    pub seed: u64,
    /// Include wall-clock runtimes in reports (makes them nondeterministic).
    #[arg(long, global = true)]
    pub timings: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OutputFormat {
    Json,
    Tsv,
}

/// Frame preprocessing before scoring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Binarize {
    /// sign(x), with sign(0) = +1.
    Hard,
    /// tanh(x).
    Soft,
    /// Use the frames as given.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DecodeMode {
    /// Top-k characters for every frame.
    Char,
    /// Best-path CTC transcript over all frames.
    Line,
}

#[derive(Debug, Clone, Args)]
pub struct ParamArgs {
    /// Full-tree depth D.
    #[arg(long, default_value_t = 5)]
    pub depth: usize,
    /// Structure code length L_S.
    #[arg(long, default_value_t = 4)]
    pub struct_bits: usize,
    /// Radical code length L_R.
    #[arg(long, default_value_t = 36)]
    pub radical_bits: usize,
    /// Maximum radicals per character M.
    #[arg(long, default_value_t = 9)]
    pub max_radicals: usize,
    /// Minimum Hamming distance between generated radical codes.
    #[arg(long, default_value_t = 1)]
    pub min_hamming: usize,
}

impl ParamArgs {
    fn params(&self) -> Result<CodeParams, CliError> {
        CodeParams::new(
            self.depth,
            self.struct_bits,
            self.radical_bits,
            self.max_radicals,
        )
        .map_err(domain)
    }
}

#[derive(Debug, Clone, Args)]
pub struct CharsetArgs {
    /// Characters from an IDS file. Without it a synthetic charset is drawn.
    #[arg(long)]
    pub ids: Option<PathBuf>,
    /// Synthetic charset: number of radicals.
    #[arg(long, default_value_t = 40)]
    pub radicals: usize,
    /// Synthetic charset: number of characters.
    #[arg(long, default_value_t = 1000)]
    pub chars: usize,
    /// Synthetic charset: maximum tree depth.
    #[arg(long, default_value_t = 4)]
    pub char_depth: usize,
    /// Synthetic charset: maximum radicals per character.
    #[arg(long, default_value_t = 9)]
    pub char_leaves: usize,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a codebook file from an IDS file.
    BuildCodebook {
        #[arg(long)]
        ids: PathBuf,
        /// Read radical codes from a prototype file instead of drawing them.
        #[arg(long)]
        prototypes: Option<PathBuf>,
        /// Codebook file to write.
        #[arg(long)]
        out: PathBuf,
        /// Drop characters that do not fit the parameters instead of failing.
        #[arg(long)]
        skip_invalid: bool,
        /// Skip the quadratic pairwise margin computation.
        #[arg(long)]
        no_margins: bool,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Print codes, from a codebook file or computed from an IDS file.
    Encode {
        #[arg(long, conflicts_with = "ids", required_unless_present = "ids")]
        codebook: Option<PathBuf>,
        #[arg(long)]
        ids: Option<PathBuf>,
        #[arg(long, requires = "ids")]
        prototypes: Option<PathBuf>,
        /// Characters to print; all when omitted.
        chars: Vec<String>,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Decode a frames file against a codebook.
    Decode {
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        frames: PathBuf,
        #[arg(long, value_enum, default_value_t = DecodeMode::Char)]
        mode: DecodeMode,
        #[arg(long, default_value_t = 1)]
        topk: usize,
        #[arg(long, value_enum, default_value_t = Binarize::Hard)]
        binarize: Binarize,
        /// Softmax temperature for line decoding.
        #[arg(long, default_value_t = 1.0)]
        temperature: f64,
    },
    /// Zero-shot evaluation on synthetic noisy frames.
    EvalZeroshot {
        #[command(flatten)]
        charset: CharsetArgs,
        #[command(flatten)]
        params: ParamArgs,
        /// Seen class counts to report; defaults to 60% of the charset.
        #[arg(long = "m")]
        m: Vec<usize>,
        /// Unseen classes, taken from the end; defaults to 40% of the charset.
        #[arg(long)]
        unseen: Option<usize>,
        #[arg(long, default_value_t = 2000)]
        trials: usize,
        #[arg(long, default_value_t = 0.0)]
        flip_rate: f64,
        #[arg(long, default_value_t = 0.0)]
        noise_sigma: f64,
        #[arg(long, default_value_t = 1)]
        frames_per_char: usize,
        #[arg(long, default_value_t = 0.0)]
        blank_prob: f64,
        /// Also evaluate lines of this many characters.
        #[arg(long, default_value_t = 0)]
        line_length: usize,
        #[arg(long, default_value_t = 1000)]
        line_trials: usize,
        /// Seed for noise; defaults to the global seed plus one.
        #[arg(long)]
        noise_seed: Option<u64>,
    },
    /// Noise-robustness sweep over code parameters.
    Sweep {
        #[command(flatten)]
        charset: CharsetArgs,
        /// Grid point `D,L_S,L_R,M[,min_hamming]`; repeat for several. The
        /// default grid varies L_R, L_S and D around (5,4,36,9).
        #[arg(long = "point")]
        points: Vec<String>,
        #[arg(long = "flip-rate")]
        flip_rates: Vec<f64>,
        #[arg(long, default_value_t = 4000)]
        trials: usize,
        #[arg(long)]
        noise_seed: Option<u64>,
    },
    /// Classification-layer compression statistics.
    Stats {
        /// Codebook file; without it the code length comes from the parameters.
        #[arg(long)]
        codebook: Option<PathBuf>,
        #[arg(long, default_value_t = 512)]
        feature_dim: usize,
        #[arg(long, default_value_t = 3755)]
        one_hot_classes: usize,
        /// Count a bias term per output.
        #[arg(long)]
        bias: bool,
        #[command(flatten)]
        params: ParamArgs,
    },
    /// Check the CTC loss against brute force and its gradients against
    /// finite differences.
    CtcCheck {
        #[arg(long, default_value_t = 500)]
        oracle_instances: usize,
        #[arg(long, default_value_t = 100)]
        gradient_instances: usize,
    },
}

#[derive(Debug)]
pub enum CliError {
    Domain(String),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Io(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Domain(m) | CliError::Io(m) => m,
        }
    }
}

fn domain(e: impl std::fmt::Display) -> CliError {
    CliError::Domain(e.to_string())
}

fn io_error(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

fn ids_error(path: &Path, e: IdsFileError) -> CliError {
    match e {
        IdsFileError::Io { .. } => CliError::Io(e.to_string()),
        other => CliError::Domain(format!("{}: {other}", path.display())),
    }
}

fn codebook_error(path: Option<&Path>, e: CodebookError) -> CliError {
    match (&e, path) {
        (CodebookError::Io { .. }, _) => CliError::Io(e.to_string()),
        (_, Some(p)) => CliError::Domain(format!("{}: {e}", p.display())),
        (_, None) => CliError::Domain(e.to_string()),
    }
}

fn format_error(path: &Path, e: FormatError) -> CliError {
    match e {
        FormatError::Io { .. } => CliError::Io(e.to_string()),
        other => CliError::Domain(format!("{}: {other}", path.display())),
    }
}

/// A report in both output formats.
struct Report {
    json: Value,
    tsv: String,
    /// Nonzero for a completed run whose checks failed.
    status: i32,
}

impl Report {
    fn ok(json: Value, tsv: String) -> Self {
        Report {
            json,
            tsv,
            status: 0,
        }
    }
}

fn load_codebook(path: &Path) -> Result<Codebook, CliError> {
    read_codebook(path).map_err(|e| format_error(path, e))
}

fn load_tables(
    entries: &[(String, DecompTree)],
    params: &CodeParams,
    prototypes: Option<&Path>,
    seed: u64,
    min_hamming: usize,
) -> Result<CodeTables, CliError> {
    match prototypes {
        Some(path) => Ok(CodeTables {
            structures: StructCodeTable::canonical(params.struct_bits()).map_err(domain)?,
            radicals: RadicalCodeSet::load_prototypes(path, params.radical_bits())
                .map_err(|e| codebook_error(Some(path), e))?,
        }),
        None => CodeTables::generate(entries.iter().map(|e| &e.1), params, seed, min_hamming)
            .map_err(|e| codebook_error(None, e)),
    }
}

fn read_entries(path: &Path) -> Result<Vec<(usize, String, DecompTree)>, CliError> {
    Ok(read_ids_file(path)
        .map_err(|e| ids_error(path, e))?
        .into_iter()
        .map(|r| (r.line, r.character, r.tree))
        .collect())
}

fn charset(args: &CharsetArgs, seed: u64) -> Result<Vec<(String, DecompTree)>, CliError> {
    match &args.ids {
        Some(path) => Ok(read_entries(path)?
            .into_iter()
            .map(|(_, c, t)| (c, t))
            .collect()),
        None => synthetic_charset(
            args.radicals,
            args.chars,
            args.char_depth,
            args.char_leaves,
            seed,
        )
        .map_err(domain),
    }
}

fn cmd_build_codebook(
    cli: &Cli,
    ids: &Path,
    prototypes: Option<&Path>,
    out: &Path,
    skip_invalid: bool,
    no_margins: bool,
    args: &ParamArgs,
) -> Result<Report, CliError> {
    let params = args.params()?;
    let mut skipped = Vec::new();
    let mut entries = Vec::new();
    for (line, character, tree) in read_entries(ids)? {
        let violations = validate(&tree, &params);
        if violations.is_empty() {
            entries.push((line, character, tree));
        } else if skip_invalid {
            let reason = violations
                .iter()
                .map(|v| v.to_string())
                .collect::<Vec<_>>()
                .join("; ");
            skipped.push(json!({"line": line, "character": character, "reason": reason}));
        } else {
            return Err(CliError::Domain(format!(
                "{}: line {line}: character {character} cannot be encoded: {}",
                ids.display(),
                violations
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join("; ")
            )));
        }
    }
    let pairs: Vec<(String, DecompTree)> = entries
        .iter()
        .map(|(_, c, t)| (c.clone(), t.clone()))
        .collect();
    let tables = load_tables(&pairs, &params, prototypes, cli.seed, args.min_hamming)?;
    let mut builder = CodebookBuilder::new(&tables, &params).map_err(domain)?;
    for (line, character, tree) in &entries {
        builder
            .push(character, tree)
            .map_err(|e| CliError::Domain(format!("{}: line {line}: {e}", ids.display())))?;
    }
    let codebook = builder.finish(cli.seed).map_err(domain)?;
    write_codebook(&codebook, out).map_err(|e| format_error(out, e))?;
    let margins = (!no_margins).then(|| codebook.margins());
    let json = json!({
        "codebook": out,
        "characters": codebook.len(),
        "code_len": codebook.dim(),
        "params": params,
        "seed": cli.seed,
        "radicals": tables.radicals.len(),
        "radical_source": if prototypes.is_some() { "prototypes" } else { "generated" },
        "min_radical_hamming": tables.radicals.min_pairwise_hamming(),
        "margins": margins,
        "collisions": 0,
        "skipped": skipped,
    });
    let mut tsv = String::new();
    for (k, v) in [
        ("codebook", out.display().to_string()),
        ("characters", codebook.len().to_string()),
        ("code_len", codebook.dim().to_string()),
        ("radicals", tables.radicals.len().to_string()),
        (
            "min_positive_gap",
            margins
                .and_then(|m| m.min_positive_gap)
                .map_or("-".into(), |g| g.to_string()),
        ),
        (
            "dominated_pairs",
            margins.map_or("-".into(), |m| m.dominated_pairs.to_string()),
        ),
        ("collisions", "0".into()),
        ("skipped", skipped.len().to_string()),
    ] {
        let _ = writeln!(tsv, "{k}\t{v}");
    }
    Ok(Report::ok(json, tsv))
}

fn cmd_encode(
    cli: &Cli,
    codebook: Option<&Path>,
    ids: Option<&Path>,
    prototypes: Option<&Path>,
    chars: &[String],
    args: &ParamArgs,
) -> Result<Report, CliError> {
    let cb = match (codebook, ids) {
        (Some(path), _) => load_codebook(path)?,
        (None, Some(path)) => {
            let params = args.params()?;
            let entries: Vec<(String, DecompTree)> = read_entries(path)?
                .into_iter()
                .map(|(_, c, t)| (c, t))
                .collect();
            let tables = load_tables(&entries, &params, prototypes, cli.seed, args.min_hamming)?;
            let mut builder = CodebookBuilder::new(&tables, &params).map_err(domain)?;
            for (c, t) in &entries {
                builder
                    .push(c, t)
                    .map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))?;
            }
            builder.finish(cli.seed).map_err(domain)?
        }
        (None, None) => {
            return Err(CliError::Domain(
                "either --codebook or --ids is required".into(),
            ))
        }
    };
    let indices: Vec<usize> = if chars.is_empty() {
        (0..cb.len()).collect()
    } else {
        chars
            .iter()
            .map(|c| {
                cb.index_of(c).ok_or_else(|| {
                    CliError::Domain(format!("character {c} is not in the codebook"))
                })
            })
            .collect::<Result<_, _>>()?
    };
    let mut rows = Vec::new();
    let mut tsv = String::new();
    for i in indices {
        let code = trits_to_string(cb.row(i));
        let _ = writeln!(tsv, "{}\t{}", cb.label(i), code);
        rows.push(json!({"index": i, "label": cb.label(i), "nnz": cb.row_nnz(i), "code": code}));
    }
    Ok(Report::ok(
        json!({"code_len": cb.dim(), "codes": rows}),
        tsv,
    ))
}

/// Read a frames file; see the help text for both layouts.
pub fn read_frames(path: &Path) -> Result<Frames, CliError> {
    let bytes = std::fs::read(path).map_err(|e| io_error(path, e))?;
    if let Some(frames) = parse_binary_frames(&bytes) {
        return Ok(frames);
    }
    let text = std::str::from_utf8(&bytes).map_err(|_| {
        CliError::Domain(format!(
            "{}: neither a binary nor a text frames file",
            path.display()
        ))
    })?;
    parse_text_frames(text).map_err(|m| CliError::Domain(format!("{}: {m}", path.display())))
}

fn parse_binary_frames(bytes: &[u8]) -> Option<Frames> {
    let header =
        |k: usize| u32::from_le_bytes(bytes[k..k + 4].try_into().expect("four bytes")) as usize;
    if bytes.len() < 8 {
        return None;
    }
    let (t, w) = (header(0), header(4));
    if t == 0 || t.checked_mul(w)?.checked_mul(4)?.checked_add(8)? != bytes.len() {
        return None;
    }
    let mut data = vec![0.0; t * w];
    for i in 0..t {
        for j in 0..w {
            let k = 8 + 4 * (i * w + j);
            data[j * t + i] =
                f32::from_le_bytes(bytes[k..k + 4].try_into().expect("four bytes")) as f64;
        }
    }
    Frames::new(t, data).ok()
}

fn parse_text_frames(text: &str) -> Result<Frames, String> {
    let mut dim = None;
    let mut data = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let values: Vec<f64> = line
            .split_whitespace()
            .map(|v| {
                v.parse::<f64>()
                    .map_err(|_| format!("line {}: bad number {v:?}", idx + 1))
            })
            .collect::<Result<_, _>>()?;
        match dim {
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => {
                return Err(format!(
                    "line {}: {} values, earlier frames have {d}",
                    idx + 1,
                    values.len()
                ))
            }
            _ => {}
        }
        data.extend(values);
    }
    let dim = dim.ok_or("no frames")?;
    Frames::new(dim, data).map_err(|e| e.to_string())
}

/// Binary frames layout: `u32 t`, `u32 W`, then the `t x W` matrix row-major
/// as little-endian `f32`.
pub fn frames_to_binary(frames: &Frames) -> Vec<u8> {
    let (t, w) = (frames.dim(), frames.len());
    let mut out = Vec::with_capacity(8 + 4 * t * w);
    out.extend_from_slice(&(t as u32).to_le_bytes());
    out.extend_from_slice(&(w as u32).to_le_bytes());
    for i in 0..t {
        for j in 0..w {
            out.extend_from_slice(&(frames.frame(j)[i] as f32).to_le_bytes());
        }
    }
    out
}

fn cmd_decode(
    codebook: &Path,
    frames_path: &Path,
    mode: DecodeMode,
    k: usize,
    bin: Binarize,
    temperature: f64,
) -> Result<Report, CliError> {
    let cb = load_codebook(codebook)?;
    let frames = read_frames(frames_path)?;
    if frames.dim() != cb.dim() {
        return Err(CliError::Domain(format!(
            "{}: frames have length {}, codebook {} expects {}",
            frames_path.display(),
            frames.dim(),
            codebook.display(),
            cb.dim()
        )));
    }
    let frames = match bin {
        Binarize::Hard => Frames::new(
            cb.dim(),
            binarize(frames.data(), BinarizeMode::Hard).map_err(domain)?,
        ),
        Binarize::Soft => Frames::new(
            cb.dim(),
            binarize(frames.data(), BinarizeMode::Soft).map_err(domain)?,
        ),
        Binarize::None => Ok(frames),
    }
    .map_err(domain)?;
    let mut tsv = String::new();
    let json = match mode {
        DecodeMode::Char => {
            let mut out = Vec::new();
            for (j, frame) in frames.iter().enumerate() {
                let top = topk(&cb, frame, k).map_err(domain)?;
                for (rank, d) in top.iter().enumerate() {
                    let _ = writeln!(tsv, "{j}\t{}\t{}\t{}", rank + 1, d.label, d.score);
                }
                out.push(json!({"frame": j, "top": top}));
            }
            json!({"mode": "char", "frames": out})
        }
        DecodeMode::Line => {
            let path = best_path_decode(&cb, &frames, temperature).map_err(domain)?;
            let labels: Vec<&str> = path.iter().map(|&i| cb.label(i)).collect();
            let transcript = labels.concat();
            let _ = writeln!(tsv, "{transcript}");
            json!({"mode": "line", "transcript": transcript, "labels": labels, "indices": path})
        }
    };
    Ok(Report::ok(json, tsv))
}

#[derive(Serialize)]
struct EvalEntry {
    m: usize,
    char: crate::synth::CharEvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    line: Option<crate::synth::LineEvalReport>,
}

#[allow(clippy::too_many_arguments)]
fn cmd_eval_zeroshot(
    cli: &Cli,
    cs: &CharsetArgs,
    args: &ParamArgs,
    ms: &[usize],
    unseen: Option<usize>,
    trials: usize,
    synth: SynthConfig,
    line_length: usize,
    line_trials: usize,
) -> Result<Report, CliError> {
    let start = Instant::now();
    let params = args.params()?;
    synth.validate().map_err(domain)?;
    let entries = charset(cs, cli.seed)?;
    let cb = codebook_for(&entries, &params, cli.seed, args.min_hamming).map_err(domain)?;
    let n = cb.len();
    let default_m = (n as f64 * 0.6).round() as usize;
    let unseen = unseen.unwrap_or(n - default_m);
    let ms: Vec<usize> = if ms.is_empty() {
        vec![default_m]
    } else {
        ms.to_vec()
    };
    let mut results = Vec::new();
    let mut tsv = String::from(
        "m\tunseen\ttrials\tcorrect\taccuracy\tstd_error\tline_exact_match\tline_ar\tline_cr\n",
    );
    for &m in &ms {
        let split = ZeroShotSplit::new(n, m, unseen).map_err(domain)?;
        let char = eval_zero_shot_char(&cb, &split, &synth, trials).map_err(domain)?;
        let line = if line_length > 0 {
            Some(
                eval_line_zero_shot(&cb, &split, &synth, line_length, line_trials)
                    .map_err(domain)?,
            )
        } else {
            None
        };
        let (em, ar, cr) = line
            .as_ref()
            .map_or(("-".into(), "-".into(), "-".into()), |l| {
                (
                    l.exact_match_rate.to_string(),
                    l.ar.to_string(),
                    l.cr.to_string(),
                )
            });
        let _ = writeln!(
            tsv,
            "{m}\t{}\t{}\t{}\t{}\t{}\t{em}\t{ar}\t{cr}",
            char.unseen, char.trials, char.correct, char.accuracy, char.std_error
        );
        results.push(EvalEntry { m, char, line });
    }
    let mut json = json!({
        "config": {
            "synth": synth,
            "params": params,
            "seed": cli.seed,
            "charset": charset_json(cs, cli.seed),
            "trials": trials,
            "line_length": line_length,
            "line_trials": line_trials,
        },
        "characters": n,
        "code_len": cb.dim(),
        "margins": cb.margins(),
        "results": results,
    });
    if cli.timings {
        json["runtime_ms"] = json!(start.elapsed().as_millis() as u64);
    }
    Ok(Report::ok(json, tsv))
}

fn charset_json(cs: &CharsetArgs, seed: u64) -> Value {
    match &cs.ids {
        Some(path) => json!({"ids": path}),
        None => json!({
            "synthetic": {
                "radicals": cs.radicals,
                "chars": cs.chars,
                "max_depth": cs.char_depth,
                "max_leaves": cs.char_leaves,
                "seed": seed,
            }
        }),
    }
}

fn parse_point(spec: &str) -> Result<SweepPoint, CliError> {
    let fields: Vec<usize> = spec
        .split(',')
        .map(|f| f.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| {
            CliError::Domain(format!(
                "bad grid point {spec:?}: expected D,L_S,L_R,M[,min_hamming]"
            ))
        })?;
    if !(4..=5).contains(&fields.len()) {
        return Err(CliError::Domain(format!(
            "bad grid point {spec:?}: expected D,L_S,L_R,M[,min_hamming]"
        )));
    }
    Ok(SweepPoint {
        name: "custom",
        depth: fields[0],
        struct_bits: fields[1],
        radical_bits: fields[2],
        max_radicals: fields[3],
        min_hamming: fields.get(4).copied().unwrap_or(1),
    })
}

fn cmd_sweep(
    cli: &Cli,
    cs: &CharsetArgs,
    points: &[String],
    flip_rates: &[f64],
    trials: usize,
    noise_seed: u64,
) -> Result<Report, CliError> {
    let start = Instant::now();
    let grid = if points.is_empty() {
        default_grid()
    } else {
        points
            .iter()
            .map(|p| parse_point(p))
            .collect::<Result<_, _>>()?
    };
    for p in &grid {
        p.params().map_err(domain)?;
    }
    let flip_rates = if flip_rates.is_empty() {
        vec![SWEEP_FLIP_RATE]
    } else {
        flip_rates.to_vec()
    };
    for &f in &flip_rates {
        SynthConfig {
            flip_rate: f,
            ..SynthConfig::default()
        }
        .validate()
        .map_err(domain)?;
    }
    let entries = charset(cs, cli.seed)?;
    let config = SweepConfig {
        flip_rates,
        trials,
        code_seed: cli.seed,
        seed: noise_seed,
    };
    let rows = ablation_sweep(&entries, &grid, &config).map_err(domain)?;
    let mut tsv = String::from(
        "name\tD\tL_S\tL_R\tM\tmin_hamming\tt\tmin_positive_gap\tdominated_pairs\tflip_rate\ttrials\tcorrect\taccuracy\tstd_error\n",
    );
    for r in &rows {
        let p = &r.point;
        let _ = writeln!(
            tsv,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            p.name,
            p.depth,
            p.struct_bits,
            p.radical_bits,
            p.max_radicals,
            p.min_hamming,
            r.code_len,
            r.margins
                .min_positive_gap
                .map_or("-".into(), |g| g.to_string()),
            r.margins.dominated_pairs,
            r.flip_rate,
            r.trials,
            r.correct,
            r.accuracy,
            r.std_error
        );
    }
    let mut json = json!({
        "config": {"sweep": config, "charset": charset_json(cs, cli.seed), "characters": entries.len()},
        "rows": rows,
    });
    if cli.timings {
        json["runtime_ms"] = json!(start.elapsed().as_millis() as u64);
    }
    Ok(Report::ok(json, tsv))
}

fn cmd_stats(
    codebook: Option<&Path>,
    feature_dim: usize,
    classes: usize,
    bias: bool,
    args: &ParamArgs,
) -> Result<Report, CliError> {
    let (params, characters) = match codebook {
        Some(path) => {
            let cb = load_codebook(path)?;
            (*cb.params(), Some(cb.len()))
        }
        None => (args.params()?, None),
    };
    if feature_dim == 0 || classes == 0 {
        return Err(CliError::Domain(
            "feature dimension and class count must be positive".into(),
        ));
    }
    let stats = CompressionStats::compute(params.total_len(), feature_dim, classes, bias);
    let paper_classes = classes_for_ratio(params.total_len(), PAPER_RATIO);
    let json = json!({
        "params": params,
        "characters": characters,
        "stats": stats,
        "formula": "ratio = 1 - t / N_onehot",
        "reference_ratio": PAPER_RATIO,
        "classes_for_reference_ratio": paper_classes,
    });
    let mut tsv = String::new();
    for (k, v) in [
        ("code_len", stats.code_len.to_string()),
        ("feature_dim", feature_dim.to_string()),
        ("one_hot_classes", classes.to_string()),
        ("cls_params_onehot", stats.cls_params_onehot.to_string()),
        ("cls_params_multihot", stats.cls_params_multihot.to_string()),
        ("ratio", stats.ratio.to_string()),
        ("classes_for_reference_ratio", paper_classes.to_string()),
    ] {
        let _ = writeln!(tsv, "{k}\t{v}");
    }
    Ok(Report::ok(json, tsv))
}

fn cmd_ctc_check(seed: u64, oracle: usize, gradient: usize) -> Result<Report, CliError> {
    let report = run_ctc_check(oracle, gradient, seed).map_err(domain)?;
    let mut tsv = String::from("check\tinstances\tmax_error\ttolerance\tresult\n");
    for c in &report.checks {
        let _ = writeln!(
            tsv,
            "{}\t{}\t{:e}\t{:e}\t{}",
            c.name,
            c.instances,
            c.max_error,
            c.tolerance,
            if c.passed { "pass" } else { "FAIL" }
        );
    }
    let passed = report.passed();
    let mut json = serde_json::to_value(&report).map_err(domain)?;
    json["passed"] = json!(passed);
    Ok(Report {
        json,
        tsv,
        status: if passed { 0 } else { 1 },
    })
}

fn run(cli: &Cli) -> Result<Report, CliError> {
    match &cli.command {
        Command::BuildCodebook {
            ids,
            prototypes,
            out,
            skip_invalid,
            no_margins,
            params,
        } => cmd_build_codebook(
            cli,
            ids,
            prototypes.as_deref(),
            out,
            *skip_invalid,
            *no_margins,
            params,
        ),
        Command::Encode {
            codebook,
            ids,
            prototypes,
            chars,
            params,
        } => cmd_encode(
            cli,
            codebook.as_deref(),
            ids.as_deref(),
            prototypes.as_deref(),
            chars,
            params,
        ),
        Command::Decode {
            codebook,
            frames,
            mode,
            topk,
            binarize,
            temperature,
        } => cmd_decode(codebook, frames, *mode, *topk, *binarize, *temperature),
        Command::EvalZeroshot {
            charset,
            params,
            m,
            unseen,
            trials,
            flip_rate,
            noise_sigma,
            frames_per_char,
            blank_prob,
            line_length,
            line_trials,
            noise_seed,
        } => {
            let synth = SynthConfig {
                noise_sigma: *noise_sigma,
                flip_rate: *flip_rate,
                frames_per_char: *frames_per_char,
                blank_prob: *blank_prob,
                seed: noise_seed.unwrap_or(cli.seed.wrapping_add(1)),
            };
            cmd_eval_zeroshot(
                cli,
                charset,
                params,
                m,
                *unseen,
                *trials,
                synth,
                *line_length,
                *line_trials,
            )
        }
        Command::Sweep {
            charset,
            points,
            flip_rates,
            trials,
            noise_seed,
        } => cmd_sweep(
            cli,
            charset,
            points,
            flip_rates,
            *trials,
            noise_seed.unwrap_or(cli.seed.wrapping_add(1)),
        ),
        Command::Stats {
            codebook,
            feature_dim,
            one_hot_classes,
            bias,
            params,
        } => cmd_stats(
            codebook.as_deref(),
            *feature_dim,
            *one_hot_classes,
            *bias,
            params,
        ),
        Command::CtcCheck {
            oracle_instances,
            gradient_instances,
        } => cmd_ctc_check(cli.seed, *oracle_instances, *gradient_instances),
    }
}

fn emit(cli: &Cli, report: &Report) -> Result<(), CliError> {
    let mut text = match cli.format {
        OutputFormat::Json => serde_json::to_string_pretty(&report.json).map_err(domain)?,
        OutputFormat::Tsv => report.tsv.clone(),
    };
    if !text.ends_with('\n') {
        text.push('\n');
    }
    match &cli.output {
        Some(path) => std::fs::write(path, text).map_err(|e| io_error(path, e)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// Run with the given arguments (program name first) and return the exit
/// code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli).and_then(|r| emit(&cli, &r).map(|_| r.status)) {
        Ok(status) => status,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.exit_code()
        }
    }
}

pub fn main() -> i32 {
    main_with_args(std::env::args_os())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_frames() {
        let f = parse_text_frames("# two frames\n1 0 -1\n0.5\t0.5 0.5\n").unwrap();
        assert_eq!((f.dim(), f.len()), (3, 2));
        assert_eq!(f.frame(1), &[0.5, 0.5, 0.5]);
        assert!(parse_text_frames("1 2\n3\n")
            .unwrap_err()
            .contains("line 2"));
        assert!(parse_text_frames("").is_err());
    }

    #[test]
    fn binary_frames_round_trip() {
        let f = Frames::new(3, vec![1.0, 0.0, -1.0, 0.5, -0.25, 2.0]).unwrap();
        let back = parse_binary_frames(&frames_to_binary(&f)).unwrap();
        assert_eq!(back, f);
        let bytes = frames_to_binary(&f);
        // value 0 of frame 1 sits at matrix index 0 * W + 1
        assert_eq!(f32::from_le_bytes(bytes[12..16].try_into().unwrap()), 0.5);
        assert!(parse_binary_frames(&bytes[..bytes.len() - 1]).is_none());
    }

    #[test]
    fn grid_points() {
        let p = parse_point("6,4,36,9").unwrap();
        assert_eq!((p.depth, p.min_hamming), (6, 1));
        assert_eq!(parse_point("5,4,12,9,3").unwrap().min_hamming, 3);
        assert!(parse_point("5,4").is_err());
        assert!(parse_point("a,b,c,d").is_err());
    }

    #[test]
    fn help_exits_zero() {
        assert_eq!(main_with_args(["hiercode", "--help"]), 0);
        assert_eq!(main_with_args(["hiercode", "bogus"]), 1);
    }
}
