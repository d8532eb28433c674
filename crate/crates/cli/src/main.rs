use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cats_core::calibration::{
    calibrate_model, collect_site, histogram, CalibrationOptions, CalibrationReport, DEFAULT_MAX_INPUTS,
};
use cats_core::harness::text::{format_token_lines, histogram_tsv, parse_json, parse_prompt, parse_token_lines};
use cats_core::harness::{
    bench_generation, bench_mlp, bench_mlp_with, random_sequences, weight_file, BenchConfig, GenBenchConfig, Variant,
};
use cats_core::kernel::GatedMlpWeights;
use cats_core::model::{build_toy_model, generate, sparsity_report, CatsMode, ModelConfig, Site, SiteKind, ToyModel};
use cats_core::CatsError;
use clap::{Parser, Subcommand};
use serde::Serialize;

const EXIT_IO: u8 = 3;
const EXIT_VALIDATION: u8 = 4;

#[derive(Parser)]
#[command(
    name = "cats",
    version,
    about = "Calibrated activation thresholding for Gated-MLP inference"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a random Gated-MLP block as a CATSW1 weight file.
    GenWeights {
        #[arg(long)]
        d: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Standard deviation of the weights; defaults to 1/sqrt(d).
        #[arg(long)]
        scale: Option<f32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write seeded uniform-random token sequences, one per line.
    GenData {
        #[arg(long, default_value_t = 256)]
        vocab: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        len: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit per-site thresholds for a target sparsity.
    Calibrate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        k: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "mlp")]
        mode: CatsMode,
        #[arg(long, default_value_t = DEFAULT_MAX_INPUTS)]
        max_inputs: usize,
        #[arg(long, default_value_t = 64)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Export a histogram of activation magnitudes at one layer.
    Hist {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        layer: usize,
        #[arg(long, default_value_t = 64)]
        bins: usize,
        /// Upper edge of the last bin; defaults to the largest magnitude.
        #[arg(long)]
        range_max: Option<f32>,
        #[arg(long, default_value = "mlp")]
        site: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = DEFAULT_MAX_INPUTS)]
        max_inputs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Greedy generation from a prompt file.
    Run {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        prompt: PathBuf,
        #[arg(long, default_value = "off")]
        mode: CatsMode,
        #[arg(long)]
        thresholds: Option<PathBuf>,
        #[arg(long)]
        n_tokens: usize,
    },
    /// Achieved sparsity at every thresholding site over a dataset.
    SparsityReport {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        thresholds: PathBuf,
        /// Defaults to the mode the thresholds were calibrated for.
        #[arg(long)]
        mode: Option<CatsMode>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Latency of one Gated-MLP block per variant and sparsity.
    BenchMlp {
        #[arg(long)]
        d: Option<usize>,
        #[arg(long)]
        m: Option<usize>,
        /// Benchmark these weights instead of random ones.
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "0.5,0.7,0.9")]
        sparsity: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "dense,cats-masked")]
        variants: Vec<Variant>,
        #[arg(long, default_value_t = 20)]
        warmups: usize,
        #[arg(long, default_value_t = 80)]
        repeats: usize,
        #[arg(long, default_value_t = 1)]
        threads: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 64)]
        tile: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Decode throughput with and without thresholding.
    BenchGen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

type CliResult<T> = Result<T, CatsError>;

fn read_text(path: &Path) -> CliResult<String> {
    Ok(std::fs::read_to_string(path)?)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    Ok(std::fs::write(path, text)?)
}

fn to_json<T: Serialize>(v: &T) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("reports serialize");
    s.push('\n');
    s
}

fn load_model(path: &Path) -> CliResult<ToyModel> {
    let mut config: ModelConfig = parse_json(&read_text(path)?)?;
    config.cats_mode = CatsMode::Off;
    config.thresholds.clear();
    build_toy_model(config)
}

fn load_data(path: &Path) -> CliResult<Vec<Vec<u32>>> {
    let data = parse_token_lines(&read_text(path)?)?;
    if data.is_empty() {
        return Err(CatsError::EmptyDataset);
    }
    Ok(data)
}

fn load_report(path: &Path) -> CliResult<CalibrationReport> {
    parse_json(&read_text(path)?)
}

fn parse_site(s: &str) -> CliResult<SiteKind> {
    match s {
        "mlp" => Ok(SiteKind::Mlp),
        "attn_in" => Ok(SiteKind::AttnIn),
        "mlp_in" => Ok(SiteKind::MlpIn),
        other => Err(CatsError::InvalidConfig(format!("unknown site {other:?}"))),
    }
}

fn run(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::GenWeights { d, m, seed, scale, out } => {
            if d == 0 || m == 0 {
                return Err(CatsError::InvalidConfig("d and m must be positive".into()));
            }
            let scale = scale.unwrap_or(1.0 / (d as f32).sqrt());
            if !(scale.is_finite() && scale > 0.0) {
                return Err(CatsError::InvalidConfig("scale must be positive".into()));
            }
            weight_file::save(&GatedMlpWeights::random(d, m, seed, scale), &out)
        }
        Command::GenData {
            vocab,
            n,
            len,
            seed,
            out,
        } => {
            if vocab == 0 || n == 0 || len == 0 {
                return Err(CatsError::InvalidConfig("vocab, n and len must be positive".into()));
            }
            write_text(&out, &format_token_lines(&random_sequences(n, len, vocab, seed)))
        }
        Command::Calibrate {
            model,
            data,
            k,
            seed,
            mode,
            max_inputs,
            bins,
            out,
        } => {
            let model = load_model(&model)?;
            let data = load_data(&data)?;
            let opts = CalibrationOptions {
                max_inputs,
                bins,
                ..CalibrationOptions::default()
            };
            let report = calibrate_model(&model, &data, k, seed, mode, &opts)?;
            write_text(&out, &to_json(&report))
        }
        Command::Hist {
            model,
            data,
            layer,
            bins,
            range_max,
            site,
            seed,
            max_inputs,
            out,
        } => {
            let model = load_model(&model)?;
            let data = load_data(&data)?;
            let site = Site {
                layer,
                kind: parse_site(&site)?,
            };
            let sample = collect_site(&model, &data, site, max_inputs, seed)?;
            let range_max = match range_max {
                Some(r) => r,
                None => {
                    let max = sample.magnitudes.iter().copied().fold(0.0f32, f32::max);
                    if max > 0.0 {
                        max
                    } else {
                        1.0
                    }
                }
            };
            let h = histogram(&sample, bins, range_max)?;
            write_text(&out, &histogram_tsv(&h))
        }
        Command::Run {
            model,
            prompt,
            mode,
            thresholds,
            n_tokens,
        } => {
            let base = load_model(&model)?;
            let prompt = parse_prompt(&read_text(&prompt)?)?;
            let model = match (mode, thresholds) {
                (CatsMode::Off, _) => base,
                (_, None) => {
                    return Err(CatsError::MissingThresholds(
                        "--thresholds is required unless --mode off".into(),
                    ))
                }
                (mode, Some(path)) => load_report(&path)?.apply(&base, mode)?,
            };
            let tokens = generate(&model, &prompt, n_tokens)?;
            let line: Vec<String> = tokens.iter().map(|t| t.to_string()).collect();
            println!("{}", line.join(" "));
            Ok(())
        }
        Command::SparsityReport {
            model,
            data,
            thresholds,
            mode,
            out,
        } => {
            let base = load_model(&model)?;
            let data = load_data(&data)?;
            let report = load_report(&thresholds)?;
            let model = report.apply(&base, mode.unwrap_or(report.mode))?;
            let json = to_json(&sparsity_report(&model, &data)?);
            if let Some(out) = out {
                write_text(&out, &json)?;
            }
            print!("{json}");
            Ok(())
        }
        Command::BenchMlp {
            d,
            m,
            weights,
            sparsity,
            variants,
            warmups,
            repeats,
            threads,
            seed,
            tile,
            out,
        } => {
            let loaded = weights.as_deref().map(weight_file::load).transpose()?;
            let (d, m) = match (&loaded, d, m) {
                (Some(w), _, _) => (w.d(), w.m()),
                (None, Some(d), Some(m)) => (d, m),
                _ => return Err(CatsError::InvalidConfig("give --d and --m, or --weights".into())),
            };
            let cfg = BenchConfig {
                sparsities: sparsity,
                variants,
                warmup_rounds: warmups,
                repeat_count: repeats,
                threads,
                seed,
                tile,
                ..BenchConfig::new(d, m)
            };
            let report = match &loaded {
                Some(w) => bench_mlp_with(&cfg, w)?,
                None => bench_mlp(&cfg)?,
            };
            write_text(&out, &to_json(&report))
        }
        Command::BenchGen { config, samples, out } => {
            let mut cfg: GenBenchConfig = parse_json(&read_text(&config)?)?;
            if let Some(s) = samples {
                cfg.samples = s;
            }
            let report = bench_generation(&cfg)?;
            write_text(&out, &to_json(&report))
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("cats: {e}");
            match e {
                CatsError::Io(_) => ExitCode::from(EXIT_IO),
                _ => ExitCode::from(EXIT_VALIDATION),
            }
        }
    }
}
