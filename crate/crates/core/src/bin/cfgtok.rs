use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use cfg_tokenizer::dpo::{self, finite_difference_residual, LogProbRecord, SceneDpoBatch, SceneDpoConfig};
use cfg_tokenizer::pipeline::{fourier_to_archive, FourierSource, Scene, TokenizeSettings};
use cfg_tokenizer::synth::{self, SynthConfig};
use cfg_tokenizer::templates::{top_k_coverage, TemplateRules, DEFAULT_TOP_K};
use cfg_tokenizer::{Error, FourierConfig, SceneManifest, TokenFile};

const GRAD_CHECK_STEP: f64 = 1e-5;
const GRAD_CHECK_TOLERANCE: f64 = 1e-6;

#[derive(Parser)]
#[command(name = "cfgtok", version, about = "Condensed feature grid scene tokenizer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tokenize the scene described by a manifest into a token file.
    Tokenize(TokenizeArgs),
    /// Evaluate the scene preference loss on a JSON-lines batch file.
    DpoLoss(DpoArgs),
    /// Answer-template frequencies and top-k coverage of a corpus.
    Templates(TemplateArgs),
    /// Generate a synthetic box-room scene with known occupancy.
    Synth(SynthArgs),
    /// Validate a token file and print its header.
    Inspect {
        tokens: PathBuf,
    },
    /// Export seeded Fourier weights as a tensor file.
    Weights {
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
}

#[derive(Args)]
struct TokenizeArgs {
    manifest: PathBuf,
    #[arg(long)]
    voxel_size: Option<f64>,
    #[arg(long)]
    max_tokens: Option<usize>,
    #[arg(long)]
    rope_base: Option<f64>,
    #[arg(long, conflicts_with = "fourier_weights")]
    fourier_seed: Option<u64>,
    #[arg(long)]
    fourier_weights: Option<PathBuf>,
    #[arg(long, short, default_value = "tokens.cfgk")]
    output: PathBuf,
}

#[derive(Args)]
struct DpoArgs {
    batch: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    w_a: f64,
    #[arg(long, default_value_t = 0.5)]
    w_s: f64,
    #[arg(long, default_value_t = 0.2)]
    beta_a: f64,
    #[arg(long, default_value_t = 0.03)]
    beta_s: f64,
    /// Use the ref_* fields instead of the reference-free form.
    #[arg(long)]
    with_reference: bool,
    /// Print per-record gradients.
    #[arg(long)]
    grads: bool,
    /// Compare analytic gradients against central finite differences.
    #[arg(long)]
    check_grad: bool,
}

#[derive(Args)]
struct TemplateArgs {
    corpus: PathBuf,
    /// TOML rules file; defaults to the built-in color and number rules.
    #[arg(long)]
    rules: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TOP_K)]
    k: usize,
    /// Write the (k, coverage, size) record as JSON.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 50)]
    frames: usize,
    #[arg(long, default_value_t = 64)]
    feature_size: usize,
    #[arg(long, default_value_t = 2)]
    depth_scale: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long)]
    voxel_size: Option<f64>,
    #[arg(long)]
    max_tokens: Option<usize>,
    #[arg(long)]
    no_anchor: bool,
    #[arg(long, short)]
    output: PathBuf,
}

enum Failure {
    Core(Error),
    GradCheck(f64),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::EmptyScene => 2,
        Error::Validation(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Tokenize(args) => run_tokenize(args),
        Command::DpoLoss(args) => run_dpo(args),
        Command::Templates(args) => run_templates(args),
        Command::Synth(args) => run_synth(args),
        Command::Inspect { tokens } => run_inspect(&tokens),
        Command::Weights { dim, seed, output } => run_weights(dim, seed, &output),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Core(e)) => {
            eprintln!("error [{}]: {e}", e.code());
            ExitCode::from(exit_code(&e))
        }
        Err(Failure::GradCheck(residual)) => {
            eprintln!(
                "error [numeric-validation]: gradient check residual {residual:e} exceeds {GRAD_CHECK_TOLERANCE:e}"
            );
            ExitCode::from(3)
        }
    }
}

fn run_tokenize(args: TokenizeArgs) -> Result<(), Failure> {
    let manifest = SceneManifest::load(&args.manifest)?;
    let mut settings = TokenizeSettings::from_manifest(&manifest);
    if let Some(v) = args.voxel_size {
        settings.voxel_size = v;
    }
    if let Some(v) = args.max_tokens {
        settings.max_tokens = v;
    }
    if let Some(v) = args.rope_base {
        settings.rope_base = v;
    }
    if let Some(seed) = args.fourier_seed {
        settings.fourier = FourierSource::Seed(seed);
    }
    if let Some(path) = args.fourier_weights {
        settings.fourier = FourierSource::Weights(path);
    }
    let scene = Scene::load(&manifest)?;
    let out = cfg_tokenizer::tokenize(&scene, &settings)?;
    let file = out.token_file()?;
    file.write(&args.output)?;

    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "frames             {}", scene.captures.len());
    let _ = writeln!(stdout, "voxels             {}", out.grid.occupied_voxels);
    let _ = writeln!(stdout, "columns            {}", out.columns);
    let _ = writeln!(stdout, "tokens             {}", out.stats.token_count);
    let _ = writeln!(stdout, "compression_rate   {:.6}", out.stats.compression_rate);
    let _ = writeln!(stdout, "preservation_rate  {:.6}", out.stats.preservation_rate);
    let _ = writeln!(stdout, "output             {}", args.output.display());
    Ok(())
}

fn read_batch(path: &Path) -> Result<Vec<LogProbRecord>, Error> {
    let file = std::fs::File::open(path).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut records = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let record: LogProbRecord = serde_json::from_str(&line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", n + 1),
        })?;
        records.push(record);
    }
    Ok(records)
}

fn run_dpo(args: DpoArgs) -> Result<(), Failure> {
    let cfg = SceneDpoConfig {
        w_a: args.w_a,
        w_s: args.w_s,
        beta_a: args.beta_a,
        beta_s: args.beta_s,
        reference_free: !args.with_reference,
    };
    let batch = SceneDpoBatch::new(read_batch(&args.batch)?)?;
    let report = dpo::loss(&batch, &cfg)?;
    let (answer_acc, scene_acc) = dpo::accuracy_metrics(&batch);

    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "records     {}", batch.len());
    let _ = writeln!(stdout, "total       {:.9}", report.total);
    let _ = writeln!(stdout, "L_a         {:.9}", report.answer_loss);
    let _ = writeln!(stdout, "L_s         {:.9}", report.scene_loss);
    let _ = writeln!(stdout, "L_nll       {:.9}", report.nll_loss);
    let _ = writeln!(stdout, "answer_acc  {:.6}", answer_acc);
    let _ = writeln!(stdout, "scene_acc   {:.6}", scene_acc);
    if args.grads {
        for (i, g) in dpo::grad(&batch, &cfg)?.iter().enumerate() {
            let _ = writeln!(
                stdout,
                "grad[{i}]     d_lp_pos={:.9} d_lp_negans={:.9} d_lp_negscene={:.9}",
                g.d_lp_pos, g.d_lp_negans, g.d_lp_negscene
            );
        }
    }
    if args.check_grad {
        let residual = finite_difference_residual(&batch, &cfg, GRAD_CHECK_STEP)?;
        let _ = writeln!(stdout, "grad_check  {residual:.3e}");
        if !(residual < GRAD_CHECK_TOLERANCE) {
            return Err(Failure::GradCheck(residual));
        }
    }
    Ok(())
}

fn run_templates(args: TemplateArgs) -> Result<(), Failure> {
    let rules = match &args.rules {
        Some(path) => TemplateRules::from_path(path)?,
        None => TemplateRules::default_rules(),
    };
    let text = std::fs::read_to_string(&args.corpus).map_err(|e| Error::Io {
        path: args.corpus.clone(),
        source: e,
    })?;
    let corpus: Vec<&str> = text.lines().collect();
    let report = top_k_coverage(&corpus, &rules, args.k)?;
    let record = report.record();
    let mut stdout = std::io::stdout().lock();
    let _ = write!(stdout, "{}", report.to_table());
    let _ = writeln!(
        stdout,
        "{}",
        serde_json::to_string(&record).expect("record serializes")
    );
    if let Some(path) = &args.output {
        let json = serde_json::to_string_pretty(&record).expect("record serializes");
        std::fs::write(path, json).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        })?;
    }
    Ok(())
}

fn run_synth(args: SynthArgs) -> Result<(), Failure> {
    let defaults = SynthConfig::default();
    let cfg = SynthConfig {
        seed: args.seed,
        frames: args.frames,
        feature_size: args.feature_size,
        depth_scale: args.depth_scale,
        dim: args.dim,
        voxel_size: args.voxel_size.unwrap_or(defaults.voxel_size),
        max_tokens: args.max_tokens.unwrap_or(defaults.max_tokens),
        anchor: !args.no_anchor,
    };
    let scene = synth::generate(&cfg)?;
    scene.write(&args.output)?;
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "manifest          {}", args.output.join("manifest.toml").display());
    let _ = writeln!(stdout, "occupied_voxels   {}", scene.truth.occupied_voxels);
    let _ = writeln!(stdout, "occupied_columns  {}", scene.truth.occupied_columns);
    Ok(())
}

fn run_inspect(path: &Path) -> Result<(), Failure> {
    let file = TokenFile::read(path)?;
    let anchored = file.tokens.iter().filter(|t| t.anchored).count();
    let mut stdout = std::io::stdout().lock();
    let _ = writeln!(stdout, "dim                {}", file.dim);
    let _ = writeln!(stdout, "tokens             {}", file.tokens.len());
    let _ = writeln!(stdout, "anchored_tokens    {anchored}");
    let _ = writeln!(stdout, "voxel_size         {}", file.voxel_size);
    let _ = writeln!(stdout, "origin             {:?}", file.origin);
    let _ = writeln!(stdout, "voxels             {}", file.voxel_total);
    let _ = writeln!(stdout, "retained_voxels    {}", file.retained_voxel_total);
    let _ = writeln!(stdout, "compression_rate   {:.6}", file.compression_rate);
    let _ = writeln!(stdout, "preservation_rate  {:.6}", file.preservation_rate);
    Ok(())
}

fn run_weights(dim: usize, seed: u64, output: &Path) -> Result<(), Failure> {
    let cfg = FourierConfig::seeded(2, dim, seed)?;
    fourier_to_archive(&cfg)?.write(output)?;
    Ok(())
}
