//! `fsr`: batch driver for verification, cost reports, benchmarks, training
//! and receptive-field maps.
//!
//! Machine-readable lines start with `RESULT ` followed by CSV fields.
//! Exit status: 0 success, 1 failure (verification or runtime error),
//! 2 usage error.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fouriersr::complexity::{bench, cost, csv_row, ComplexitySpec, Kind, BENCH_CSV_HEADER};
use fouriersr::config::KeyValues;
use fouriersr::fourier_ops::{verify_equivalence_with, EquivalenceReport, Pipeline, VerifyConfig};
use fouriersr::sr_net::{build_model, read_pgm, support, train, write_pgm, RunConfig, SRModel};
use fouriersr::{Precision, Scalar, Tensor};

const PRECISION_ENV: &str = "FSR_PRECISION";

#[derive(Parser, Debug)]
#[command(name = "fsr", version, about = "Fourier token-mix super-resolution toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Compare the Fourier-domain block with its spatial convolution form.
    Verify(VerifyArgs),
    /// Print closed-form FLOPs and parameter counts for one layer.
    Complexity(LayerArgs),
    /// Time layer implementations on random input.
    Bench(BenchArgs),
    /// Train a model on synthetic data.
    Train(TrainArgs),
    /// Write an effective-receptive-field heatmap.
    Erf(ErfArgs),
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, default_value_t = 100)]
    seeds: usize,
    #[arg(long, default_value_t = 1e-10)]
    tol: f64,
    /// Run the control pipeline with both transforms replaced by identities.
    #[arg(long)]
    drop_fft: bool,
    /// key=value file with channels, rho, height, width, residual,
    /// real_filter_mode, seed.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the report rows as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Clone)]
struct LayerArgs {
    /// conv, wtrans, ffc, gfnet, afno, affnet or fouriersr.
    #[arg(long)]
    kind: String,
    #[arg(long = "C")]
    channels: usize,
    #[arg(long = "H")]
    height: usize,
    #[arg(long = "W")]
    width: usize,
    #[arg(long)]
    rho: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long = "M")]
    window: Option<usize>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[command(flatten)]
    layer: LayerArgs,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Append rows to this CSV file (header written when new).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Comma list of block indices, or random:N.
    #[arg(long)]
    plugin_positions: Option<String>,
    /// Overrides both the model seed and the training seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct ErfArgs {
    /// Checkpoint directory written by `train`.
    #[arg(long)]
    model: PathBuf,
    /// Output position as y,x.
    #[arg(long)]
    pos: String,
    #[arg(long)]
    out: PathBuf,
    /// LR probe size as N or H,W (ignored with --input).
    #[arg(long, default_value = "32")]
    size: String,
    /// Seed of the random probe image.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Probe with this PGM image instead of random input.
    #[arg(long)]
    input: Option<PathBuf>,
}

enum Outcome {
    Success,
    Failed,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let precision = match std::env::var(PRECISION_ENV) {
        Ok(v) => match v.parse::<Precision>() {
            Ok(p) => p,
            Err(_) => {
                eprintln!("error: {PRECISION_ENV} must be single or double, got `{v}`");
                return ExitCode::from(2);
            }
        },
        Err(_) => Precision::Double,
    };
    let result = match precision {
        Precision::Double => run::<f64>(cli.command),
        Precision::Single => run::<f32>(cli.command),
    };
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::Failed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn run<T: Scalar>(command: Command) -> anyhow::Result<Outcome> {
    match command {
        Command::Verify(a) => verify::<T>(a),
        Command::Complexity(a) => complexity(a),
        Command::Bench(a) => bench_cmd(a),
        Command::Train(a) => train_cmd::<T>(a),
        Command::Erf(a) => erf_cmd::<T>(a),
    }
}

fn read_kv(path: &Path) -> anyhow::Result<KeyValues> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(KeyValues::parse(&text)?)
}

fn verify_config(kv: &KeyValues) -> anyhow::Result<VerifyConfig> {
    kv.reject_unknown(&["channels", "rho", "height", "width", "residual", "real_filter_mode", "seed"])?;
    Ok(VerifyConfig {
        channels: kv.parse_opt("channels")?,
        rho: kv.parse_opt("rho")?,
        height: kv.parse_opt("height")?,
        width: kv.parse_opt("width")?,
        residual: kv.parse_or("residual", false)?,
        real_filter_mode: kv.parse_or("real_filter_mode", false)?,
        seed: kv.parse_or("seed", 0)?,
    })
}

fn print_report(r: &EquivalenceReport) {
    println!("{r}");
    println!("RESULT {}", r.csv_row());
}

fn verify<T: Scalar>(a: VerifyArgs) -> anyhow::Result<Outcome> {
    let mut cfg = match &a.config {
        Some(p) => verify_config(&read_kv(p)?)?,
        None => VerifyConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let main = if a.drop_fft { Pipeline::FftRemoved } else { Pipeline::Fourier };
    let report = verify_equivalence_with::<T>(&cfg, a.seeds, a.tol, main)?;
    print_report(&report);
    let mut rows = vec![report.csv_row()];
    let mut ok = report.passed;
    if !a.drop_fft {
        // the control must disagree, otherwise the check proves nothing
        let control = verify_equivalence_with::<T>(&cfg, a.seeds, a.tol, Pipeline::FftRemoved)?;
        print_report(&control);
        rows.push(control.csv_row());
        ok &= !control.passed;
    }
    if let Some(out) = &a.out {
        let text = format!("{}\n{}\n", EquivalenceReport::CSV_HEADER, rows.join("\n"));
        fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(if ok { Outcome::Success } else { Outcome::Failed })
}

fn layer_spec(a: &LayerArgs) -> anyhow::Result<ComplexitySpec> {
    let kind: Kind = a.kind.parse()?;
    Ok(ComplexitySpec {
        kind,
        k: a.k,
        channels: a.channels,
        height: a.height,
        width: a.width,
        window: a.window,
        rho: a.rho,
    })
}

fn complexity(a: LayerArgs) -> anyhow::Result<Outcome> {
    let r = cost(&layer_spec(&a)?)?;
    println!("kind={}", r.spec.kind);
    println!("flops_G={:.3}", r.flops_g());
    println!("params_K={:.3}", r.params_k());
    if let Some(p) = r.shape_params {
        println!("shape_params_K={:.3}", p / 1e3);
    }
    println!("formula={}", r.formula_text);
    println!("RESULT {}", csv_row(&r, None));
    Ok(Outcome::Success)
}

fn bench_cmd(a: BenchArgs) -> anyhow::Result<Outcome> {
    let mut rows = Vec::new();
    for kind in a.layer.kind.split(',') {
        let layer = LayerArgs {
            kind: kind.trim().to_string(),
            ..a.layer.clone()
        };
        let r = bench(&layer_spec(&layer)?, a.repeats, a.seed)?;
        println!("RESULT {}", r.csv_row());
        rows.push(r.csv_row());
    }
    if let Some(out) = &a.out {
        let mut text = if out.exists() {
            fs::read_to_string(out)?
        } else {
            format!("{BENCH_CSV_HEADER}\n")
        };
        for r in rows {
            text.push_str(&r);
            text.push('\n');
        }
        fs::write(out, text).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(Outcome::Success)
}

pub const HISTORY_FILE: &str = "history.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const RUN_CONFIG_FILE: &str = "run_config.txt";

fn train_cmd<T: Scalar>(a: TrainArgs) -> anyhow::Result<Outcome> {
    let mut kv = read_kv(&a.config)?;
    if let Some(seed) = a.seed {
        kv.set("seed", seed);
        kv.set("train_seed", seed);
    }
    if let Some(p) = &a.plugin_positions {
        kv.set("plugin_positions", p);
    }
    let rc = RunConfig::from_kv(&kv)?;
    let (train_set, val_set) = rc.data.generate::<T>(rc.model.scale)?;
    let mut model: SRModel<T> = build_model(&rc.model)?;
    let history = train(&mut model, &train_set, &val_set, &rc.train)?;

    fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    fs::write(a.out.join(RUN_CONFIG_FILE), rc.to_kv().to_text())?;
    fs::write(a.out.join(HISTORY_FILE), history.to_csv())?;
    model.save_checkpoint(a.out.join(CHECKPOINT_DIR))?;

    let last = history.records.last().expect("at least one step");
    println!(
        "RESULT train,{},{},{},{},{}",
        last.step,
        last.loss,
        history.final_val_psnr().unwrap_or(f64::NAN),
        model.param_count(),
        fouriersr::sr_net::positions_text(&model.config.plugin_positions).replace(',', ";"),
    );
    Ok(Outcome::Success)
}

fn parse_pair(text: &str, what: &str) -> anyhow::Result<(usize, usize)> {
    let parts: Vec<&str> = text.split(',').map(str::trim).collect();
    let nums: Vec<usize> = parts
        .iter()
        .map(|p| p.parse::<usize>())
        .collect::<Result<_, _>>()
        .with_context(|| format!("{what} must be N or A,B, got `{text}`"))?;
    match nums[..] {
        [n] => Ok((n, n)),
        [a, b] => Ok((a, b)),
        _ => bail!("{what} must be N or A,B, got `{text}`"),
    }
}

fn erf_cmd<T: Scalar>(a: ErfArgs) -> anyhow::Result<Outcome> {
    let model: SRModel<T> = SRModel::load_checkpoint(&a.model)?;
    let pos = parse_pair(&a.pos, "--pos")?;
    if a.pos.split(',').count() != 2 {
        bail!("--pos must be y,x");
    }
    let x: Tensor<T> = match &a.input {
        Some(path) => read_pgm(path)?,
        None => {
            let (h, w) = parse_pair(&a.size, "--size")?;
            let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
            Tensor::from_fn(&[1, h, w], |_| T::of(rng.random_range(0.0..1.0)))
        }
    };
    let map = model.erf(&x, pos)?;
    write_pgm(&a.out, &map)?;
    let covered = support(&map, 1e-12).len();
    println!(
        "RESULT erf,{},{},{},{},{}",
        pos.0,
        pos.1,
        covered,
        map.numel(),
        covered as f64 / map.numel() as f64
    );
    Ok(Outcome::Success)
}
