//! The `aid` command line. [`run`] parses arguments, executes one subcommand
//! and returns the process exit code.

pub mod outputs;

use std::ffi::OsString;
use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use aid_core::imaging::{ChromaticityRB, RawImage, DEFAULT_PREVIEW_GAMMA};
use aid_core::losses::{kmeans_centroids, CentroidSet, KMEANS_MAX_ITERS, KMEANS_TOL};
use aid_core::model::{AttnSource, ModelConfig};
use aid_core::synth::{gen_dataset, read_dataset, write_dataset, DatasetSpec, Split};
use aid_core::trainer::{evaluate, load_checkpoint, resume, save_checkpoint, Checkpoint, TrainConfig, TrainHooks};
use aid_core::AidError;
use clap::{Args, Parser, Subcommand};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_FORMAT: i32 = 3;
pub const EXIT_NUMERIC: i32 = 4;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(AidError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Core(AidError::Io { .. }) => EXIT_IO,
            CliError::Core(AidError::Format { .. }) => EXIT_FORMAT,
            CliError::Core(AidError::Numeric(_)) => EXIT_NUMERIC,
            CliError::Core(_) => EXIT_USAGE,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
        }
    }
}

impl From<AidError> for CliError {
    fn from(e: AidError) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "aid", version, about = "Multi-illuminant decomposition and white balance")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Synthesize a seed-fixed dataset of multi-illuminant scenes.
    Gen(GenArgs),
    /// K-means centroids of the training split's illuminant chromaticities.
    Centroids(CentroidsArgs),
    /// Train a model; writes `final.aidc` and `history.jsonl` to --out.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split of a dataset.
    Eval(EvalArgs),
    /// Decompose one image into per-slot chromaticities and weight maps.
    Decompose(DecomposeArgs),
    /// White-balance a decomposition under edited chromaticities.
    Relight(RelightArgs),
    /// Run the HTTP editing service.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    #[arg(long)]
    pub scenes: usize,
    #[arg(long, default_value_t = 64)]
    pub size: usize,
    #[arg(long, default_value_t = 3)]
    pub max_illum: usize,
    #[arg(long, default_value_t = 1)]
    pub min_illum: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scenes in the training split; defaults to all.
    #[arg(long)]
    pub train: Option<usize>,
    /// Scenes in the validation split; the remainder is the test split.
    #[arg(long, default_value_t = 0)]
    pub val: usize,
    /// Camera domains, assigned round-robin.
    #[arg(long, default_value_t = 1)]
    pub domains: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CentroidsArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output JSON file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub centroids: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 3)]
    pub t: usize,
    #[arg(long, default_value_t = 32)]
    pub dslot: usize,
    /// Key/query width; defaults to --dslot.
    #[arg(long)]
    pub dattn: Option<usize>,
    /// Encoder widths per level, comma separated.
    #[arg(long, default_value = "8,16", value_delimiter = ',')]
    pub channels: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    /// Per-epoch multiplicative learning-rate decay.
    #[arg(long, default_value_t = 1.0)]
    pub lr_decay: f64,
    #[arg(long, default_value_t = 1)]
    pub batch_size: usize,
    /// Weight of the centroid loss; 0 trains on the mixed loss alone.
    #[arg(long, default_value_t = 1.0)]
    pub lambda: f64,
    #[arg(long, default_value = "recomputed")]
    pub attn_source: AttnSource,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Write `epoch_NNNN.aidc` every this many epochs (0: never).
    #[arg(long, default_value_t = 0)]
    pub checkpoint_every: usize,
    /// Continue from this checkpoint up to --epochs.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "test")]
    pub split: Split,
    /// Centroid file; defaults to the one recorded in the checkpoint.
    #[arg(long)]
    pub centroids: Option<PathBuf>,
    /// Print the report as JSON instead of a table.
    #[arg(long)]
    pub json: bool,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// PNG input; display gamma is undone with --gamma.
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long, default_value_t = DEFAULT_PREVIEW_GAMMA)]
    pub gamma: f64,
    #[arg(long, default_value_t = 0)]
    pub domain: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RelightArgs {
    /// Directory written by `decompose`.
    #[arg(long)]
    pub decomp: PathBuf,
    /// Replace a slot's chromaticity, as `slot=r,b`; repeatable.
    #[arg(long = "set", value_name = "SLOT=R,B")]
    pub set: Vec<String>,
    /// Neutralize only these slots, as `slot,slot,…`; others keep their colour.
    #[arg(long)]
    pub wb_only: Option<String>,
    #[arg(long, default_value_t = DEFAULT_PREVIEW_GAMMA)]
    pub gamma: f64,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[arg(long)]
    pub ckpt: Option<PathBuf>,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: std::net::IpAddr,
    /// Editor assets served under `/`.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

/// Parses `argv` (program name first) and runs the subcommand.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("aid: {e}");
            e.exit_code()
        }
    }
}

pub fn dispatch(command: Command) -> CliResult<()> {
    match command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Centroids(a) => cmd_centroids(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Decompose(a) => cmd_decompose(&a),
        Command::Relight(a) => cmd_relight(&a),
        Command::Serve(a) => cmd_serve(&a),
    }
}

fn cmd_gen(a: &GenArgs) -> CliResult<()> {
    let mut spec = DatasetSpec::new(a.scenes, a.size, a.max_illum, a.seed);
    spec.min_illum = a.min_illum;
    spec.n_train = a.train.unwrap_or(a.scenes);
    spec.n_val = a.val;
    spec.n_domains = a.domains;
    if spec.n_train + spec.n_val > spec.scenes {
        return Err(CliError::Usage(format!(
            "--train {} plus --val {} exceeds --scenes {}",
            spec.n_train, spec.n_val, spec.scenes
        )));
    }
    let ds = gen_dataset(&spec)?;
    write_dataset(&ds, &a.out)?;
    log::info!("wrote {} scenes to {}", ds.len(), a.out.display());
    Ok(())
}

fn cmd_centroids(a: &CentroidsArgs) -> CliResult<()> {
    let ds = read_dataset(&a.data)?;
    let points: Vec<ChromaticityRB> = ds
        .split(Split::Train)
        .iter()
        .flat_map(|s| s.gt_chromas.iter().copied())
        .collect();
    let set = kmeans_centroids(&points, a.k, a.seed, KMEANS_MAX_ITERS, KMEANS_TOL)?;
    set.save(&a.out)?;
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> CliResult<()> {
    let ds = read_dataset(&a.data)?;
    let centroids = CentroidSet::load(&a.centroids)?;
    let train = ds.split(Split::Train);
    let val = ds.split(Split::Val);
    std::fs::create_dir_all(&a.out).map_err(|e| AidError::Io {
        path: a.out.clone(),
        source: e,
    })?;
    let ckpt = match &a.resume {
        Some(p) => {
            let mut c = load_checkpoint(p)?;
            c.config.epochs = a.epochs;
            c
        }
        None => Checkpoint::fresh(TrainConfig {
            epochs: a.epochs,
            batch_size: a.batch_size,
            lr: a.lr,
            lr_decay: a.lr_decay,
            seed: a.seed,
            model: ModelConfig {
                k: a.k,
                t: a.t,
                d_slot: a.dslot,
                d_attn: a.dattn.unwrap_or(a.dslot),
                encoder_channels: a.channels.clone(),
                n_domains: ds.scenes.iter().map(|s| s.domain_id + 1).max().unwrap_or(1),
                seed: a.seed,
                attn_source: a.attn_source,
            },
            centroid_weight: a.lambda,
            centroid_path: Some(a.centroids.clone()),
            dataset_path: Some(a.data.clone()),
            log_every: 0,
            checkpoint_every: a.checkpoint_every,
        })?,
    };
    let history = a.out.join("history.jsonl");
    let hooks = TrainHooks {
        val: (!val.is_empty()).then_some(&val[..]),
        checkpoint_dir: Some(&a.out),
        history_path: Some(&history),
    };
    let (ckpt, _) = resume(ckpt, &train, &centroids, &hooks)?;
    save_checkpoint(&a.out.join("final.aidc"), &ckpt)?;
    Ok(())
}

fn cmd_eval(a: &EvalArgs) -> CliResult<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let path = a
        .centroids
        .clone()
        .or_else(|| ckpt.config.centroid_path.clone())
        .ok_or_else(|| CliError::Usage("checkpoint records no centroid file; pass --centroids".into()))?;
    let centroids = CentroidSet::load(&path)?;
    let ds = read_dataset(&a.data)?;
    let report = evaluate(&ckpt.model, &ds.split(a.split), &centroids)?;
    if a.json {
        println!("{}", report.to_json());
    } else {
        print!("{}", report.to_table());
    }
    Ok(())
}

/// Loads a PNG and crops it to the model's size multiple.
pub fn load_image(path: &Path, gamma: f64, multiple: usize) -> CliResult<RawImage> {
    let bytes = std::fs::read(path).map_err(|e| AidError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    let img = RawImage::decode_png(&bytes, gamma).map_err(|e| AidError::Format {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let (h, w) = (img.height() / multiple * multiple, img.width() / multiple * multiple);
    if h == 0 || w == 0 {
        return Err(CliError::Usage(format!(
            "{} is smaller than the model's {multiple}-pixel grid",
            path.display()
        )));
    }
    if (h, w) != (img.height(), img.width()) {
        log::warn!("cropping {}x{} input to {h}x{w}", img.height(), img.width());
        return Ok(img.crop(h, w)?);
    }
    Ok(img)
}

fn cmd_decompose(a: &DecomposeArgs) -> CliResult<()> {
    let ckpt = load_checkpoint(&a.ckpt)?;
    let model = ckpt.model;
    let img = load_image(&a.image, a.gamma, model.config.size_multiple())?;
    let d = model.decompose(&img, a.domain)?;
    outputs::write_decomposition(&a.out, &img, &d)?;
    Ok(())
}

/// Parses `slot=r,b`.
pub fn parse_set(token: &str) -> CliResult<(usize, ChromaticityRB)> {
    let bad = || CliError::Usage(format!("cannot parse --set '{token}' (expected slot=r,b)"));
    let (slot, rb) = token.split_once('=').ok_or_else(bad)?;
    let (r, b) = rb.split_once(',').ok_or_else(bad)?;
    let slot = slot.trim().parse().map_err(|_| bad())?;
    let r: f64 = r.trim().parse().map_err(|_| bad())?;
    let b: f64 = b.trim().parse().map_err(|_| bad())?;
    let c = ChromaticityRB::new(r, b).map_err(|e| CliError::Usage(format!("--set '{token}': {e}")))?;
    Ok((slot, c))
}

/// Parses `slot,slot,…`.
pub fn parse_slots(list: &str) -> CliResult<Vec<usize>> {
    list.split(',')
        .filter(|s| !s.trim().is_empty())
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| CliError::Usage(format!("cannot parse slot '{s}' in --wb-only '{list}'")))
        })
        .collect()
}

fn cmd_relight(a: &RelightArgs) -> CliResult<()> {
    let sets = a.set.iter().map(|t| parse_set(t)).collect::<CliResult<Vec<_>>>()?;
    let wb_only = a.wb_only.as_deref().map(parse_slots).transpose()?;
    let saved = outputs::read_decomposition(&a.decomp)?;
    let png = outputs::relight_preview(&saved, &sets, wb_only.as_deref(), a.gamma)?;
    std::fs::write(&a.out, png).map_err(|e| AidError::Io {
        path: a.out.clone(),
        source: e,
    })?;
    Ok(())
}

fn cmd_serve(a: &ServeArgs) -> CliResult<()> {
    let model = match &a.ckpt {
        Some(p) => Some(load_checkpoint(p)?.model),
        None => {
            log::warn!("no checkpoint given; decompose requests will answer 503");
            None
        }
    };
    let state = aid_service::AppState::new(
        model,
        aid_service::ServiceConfig {
            static_dir: a.static_dir.clone(),
            ..Default::default()
        },
    );
    let addr = SocketAddr::new(a.host, a.port);
    let rt = tokio::runtime::Runtime::new().map_err(|e| AidError::Io {
        path: PathBuf::from("<tokio runtime>"),
        source: e,
    })?;
    rt.block_on(aid_service::serve(state, addr)).map_err(|e| {
        CliError::Core(AidError::Io {
            path: PathBuf::from(addr.to_string()),
            source: e,
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn set_tokens_parse() {
        let (slot, c) = parse_set("2=0.5,0.75").unwrap();
        assert_eq!(slot, 2);
        assert_eq!((c.r, c.b), (0.5, 0.75));
        for bad in ["2", "x=1,1", "1=1", "1=a,1", "1=-1,1"] {
            let err = parse_set(bad).unwrap_err();
            assert!(err.to_string().contains(bad), "{err}");
        }
        assert_eq!(parse_slots("0, 2,").unwrap(), vec![0, 2]);
        assert!(parse_slots("0,z").is_err());
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), EXIT_USAGE);
        assert_eq!(CliError::Core(AidError::Numeric("x".into())).exit_code(), EXIT_NUMERIC);
        let fmt = AidError::Format {
            path: "p".into(),
            msg: "m".into(),
        };
        assert_eq!(CliError::Core(fmt).exit_code(), EXIT_FORMAT);
    }
}
