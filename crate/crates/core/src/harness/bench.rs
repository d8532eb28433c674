//! Latency benchmarks for a single Gated-MLP block and for token generation.
//!
//! Each (variant, sparsity) cell runs its own warmup rounds, then
//! `repeat_count` timed rounds. A round draws a fresh input from the seed,
//! fits a cutoff to that input's own activation magnitudes (untimed), and
//! times one forward call. Reported latency is the geometric mean over the
//! timed rounds.

use std::hint::black_box;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::activation::{silu, Threshold};
use crate::calibration::{calibrate_model, quantile_cutoff, CalibrationOptions};
use crate::error::{CatsError, Result};
use crate::kernel::{
    cats_mlp_compacted_with, cats_mlp_masked_with, dense_mlp_forward_with, optimal_width, CostCount, GatedMlpWeights,
    KernelOptions,
};
use crate::linalg::{gemv, random_vector};
use crate::model::{argmax, build_toy_model, CatsMode, KvCache, ModelConfig, Token, ToyModel};
use crate::seed::derive_seed;

pub const BENCH_SCHEMA: &str = "cats.bench.v1";
pub const GEN_SCHEMA: &str = "cats.gen.v1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Dense,
    CatsMasked,
    CatsCompacted,
    Optimal,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Dense => "dense",
            Variant::CatsMasked => "cats-masked",
            Variant::CatsCompacted => "cats-compacted",
            Variant::Optimal => "optimal",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = CatsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dense" => Ok(Variant::Dense),
            "cats-masked" => Ok(Variant::CatsMasked),
            "cats-compacted" => Ok(Variant::CatsCompacted),
            "optimal" => Ok(Variant::Optimal),
            other => Err(CatsError::InvalidConfig(format!("unknown variant {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub d: usize,
    pub m: usize,
    pub sparsities: Vec<f64>,
    pub variants: Vec<Variant>,
    pub warmup_rounds: usize,
    pub repeat_count: usize,
    pub threads: usize,
    pub seed: u64,
    pub tile: usize,
}

impl BenchConfig {
    pub fn new(d: usize, m: usize) -> Self {
        Self {
            d,
            m,
            sparsities: vec![0.5, 0.7, 0.9],
            variants: vec![Variant::Dense, Variant::CatsMasked],
            warmup_rounds: 20,
            repeat_count: 80,
            threads: 1,
            seed: 0,
            tile: KernelOptions::default().tile,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.m == 0 {
            return Err(CatsError::InvalidConfig("d and m must be positive".into()));
        }
        if self.repeat_count == 0 {
            return Err(CatsError::InvalidConfig("repeat_count must be at least 1".into()));
        }
        if self.threads == 0 {
            return Err(CatsError::InvalidConfig("thread count must be at least 1".into()));
        }
        if self.sparsities.is_empty() {
            return Err(CatsError::InvalidConfig("no sparsity levels given".into()));
        }
        if let Some(&k) = self.sparsities.iter().find(|k| !(0.0..1.0).contains(*k)) {
            return Err(CatsError::InvalidSparsity(k));
        }
        if self.variants.is_empty() {
            return Err(CatsError::InvalidConfig("no variants given".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub threads: usize,
    pub debug_assertions: bool,
    pub target_arch: String,
    pub target_os: String,
    pub target_features: Vec<String>,
}

impl Environment {
    pub fn capture(threads: usize) -> Self {
        let mut target_features = Vec::new();
        macro_rules! feat {
            ($($f:literal),*) => {$(
                if cfg!(target_feature = $f) {
                    target_features.push($f.to_string());
                }
            )*};
        }
        feat!("sse2", "sse4.1", "avx", "avx2", "fma", "avx512f", "neon");
        Self {
            threads,
            debug_assertions: cfg!(debug_assertions),
            target_arch: std::env::consts::ARCH.to_string(),
            target_os: std::env::consts::OS.to_string(),
            target_features,
        }
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchCell {
    pub variant: Variant,
    pub sparsity: f64,
    pub geomean_ns: f64,
    pub speedup: f64,
    pub cost: CostCount,
    /// Mean fraction of hidden channels switched off over the timed rounds.
    pub achieved_sparsity: f64,
    pub hidden_width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema: String,
    pub d: usize,
    pub m: usize,
    pub warmup_rounds: usize,
    pub repeat_count: usize,
    pub seed: u64,
    pub env: Environment,
    pub timestamp_unix: u64,
    pub cells: Vec<BenchCell>,
}

impl BenchReport {
    pub fn cell(&self, variant: Variant, sparsity: f64) -> Option<&BenchCell> {
        self.cells
            .iter()
            .find(|c| c.variant == variant && c.sparsity == sparsity)
    }
}

pub fn geometric_mean(xs: &[f64]) -> f64 {
    assert!(!xs.is_empty(), "geometric mean of nothing");
    (xs.iter().map(|x| x.ln()).sum::<f64>() / xs.len() as f64).exp()
}

/// Bytes the system reports as available, if known.
pub fn available_memory() -> Option<u64> {
    let info = std::fs::read_to_string("/proc/meminfo").ok()?;
    info.lines()
        .find_map(|l| l.strip_prefix("MemAvailable:"))
        .and_then(|rest| rest.trim().trim_end_matches("kB").trim().parse::<u64>().ok())
        .map(|kb| kb * 1024)
}

/// Weight bytes a benchmark run holds at its peak.
pub fn required_bytes(cfg: &BenchConfig) -> u64 {
    let dense = 12 * (cfg.d as u64) * (cfg.m as u64);
    let optimal = if cfg.variants.contains(&Variant::Optimal) {
        cfg.sparsities
            .iter()
            .map(|&k| 12 * (cfg.d as u64) * optimal_width(cfg.m, k) as u64)
            .max()
            .unwrap_or(0)
    } else {
        0
    };
    dense + optimal
}

fn check_capacity(required: u64) -> Result<()> {
    if let Some(available) = available_memory() {
        if required > available {
            return Err(CatsError::Capacity { required, available });
        }
    }
    Ok(())
}

pub fn bench_mlp(cfg: &BenchConfig) -> Result<BenchReport> {
    cfg.validate()?;
    check_capacity(required_bytes(cfg))?;
    let scale = 1.0 / (cfg.d as f32).sqrt();
    let weights = GatedMlpWeights::random(cfg.d, cfg.m, derive_seed(cfg.seed, 0), scale);
    bench_mlp_with(cfg, &weights)
}

/// Runs the benchmark on existing weights; `cfg.d`/`cfg.m` must match them.
pub fn bench_mlp_with(cfg: &BenchConfig, weights: &GatedMlpWeights) -> Result<BenchReport> {
    cfg.validate()?;
    if (weights.d(), weights.m()) != (cfg.d, cfg.m) {
        return Err(CatsError::shape(
            "bench weights",
            format!("d={} m={}", cfg.d, cfg.m),
            format!("d={} m={}", weights.d(), weights.m()),
        ));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.threads)
        .build()
        .map_err(|e| CatsError::InvalidConfig(format!("thread pool: {e}")))?;
    pool.install(|| run_cells(cfg, weights))
}

struct Measured {
    geomean_ns: f64,
    cost: CostCount,
    achieved_sparsity: f64,
}

fn run_cells(cfg: &BenchConfig, w: &GatedMlpWeights) -> Result<BenchReport> {
    let mut variants = cfg.variants.clone();
    if !variants.contains(&Variant::Dense) {
        variants.insert(0, Variant::Dense);
    }
    variants.sort();
    variants.dedup();

    let opts = KernelOptions {
        tile: cfg.tile.max(1),
        ..KernelOptions::default()
    };
    let mut cells = Vec::new();
    for &k in &cfg.sparsities {
        let mut dense_ns = None;
        for &variant in &variants {
            let (width, measured) = match variant {
                Variant::Optimal => {
                    let width = optimal_width(cfg.m, k);
                    let truncated = w.truncated(width)?;
                    (width, measure(cfg, &truncated, variant, k, opts)?)
                }
                _ => (cfg.m, measure(cfg, w, variant, k, opts)?),
            };
            if variant == Variant::Dense {
                dense_ns = Some(measured.geomean_ns);
            }
            let base = dense_ns.expect("dense runs first");
            cells.push(BenchCell {
                variant,
                sparsity: k,
                geomean_ns: measured.geomean_ns,
                speedup: if variant == Variant::Dense {
                    1.0
                } else {
                    base / measured.geomean_ns
                },
                cost: measured.cost,
                achieved_sparsity: measured.achieved_sparsity,
                hidden_width: width,
            });
        }
    }
    Ok(BenchReport {
        schema: BENCH_SCHEMA.to_string(),
        d: cfg.d,
        m: cfg.m,
        warmup_rounds: cfg.warmup_rounds,
        repeat_count: cfg.repeat_count,
        seed: cfg.seed,
        env: Environment::capture(cfg.threads),
        timestamp_unix: unix_now(),
        cells,
    })
}

fn measure(cfg: &BenchConfig, w: &GatedMlpWeights, variant: Variant, k: f64, opts: KernelOptions) -> Result<Measured> {
    let mut lat = Vec::with_capacity(cfg.repeat_count);
    let mut cost = CostCount::default();
    let mut sparsity_sum = 0.0;
    for round in 0..cfg.warmup_rounds + cfg.repeat_count {
        let x = random_vector(cfg.d, derive_seed(cfg.seed, 1 + round as u64), 1.0);
        let t = match variant {
            Variant::CatsMasked | Variant::CatsCompacted => {
                let v = silu(&gemv(&x, w.w_gate())?);
                let mut mags: Vec<f32> = v.iter().map(|a| a.abs()).collect();
                Threshold::fixed(quantile_cutoff(&mut mags, k)?)
            }
            _ => Threshold::zero(),
        };
        let start = Instant::now();
        let (y, c, s) = match variant {
            Variant::Dense | Variant::Optimal => {
                let (y, c) = dense_mlp_forward_with(&x, w, opts.activation)?;
                (y, c, 0.0)
            }
            Variant::CatsMasked => {
                let o = cats_mlp_masked_with(&x, w, &t, opts)?;
                (o.y, o.cost, o.mask.sparsity())
            }
            Variant::CatsCompacted => {
                let o = cats_mlp_compacted_with(&x, w, &t, opts)?;
                (o.y, o.cost, o.mask.sparsity())
            }
        };
        let elapsed = start.elapsed();
        black_box(&y);
        if round >= cfg.warmup_rounds {
            lat.push((elapsed.as_nanos() as f64).max(1.0));
            cost = c;
            sparsity_sum += s;
        }
    }
    Ok(Measured {
        geomean_ns: geometric_mean(&lat),
        cost,
        achieved_sparsity: sparsity_sum / cfg.repeat_count as f64,
    })
}

fn default_samples() -> usize {
    50
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenBenchConfig {
    pub model: ModelConfig,
    pub sparsities: Vec<f64>,
    #[serde(default = "default_samples")]
    pub samples: usize,
    pub prompt_len: usize,
    pub gen_len: usize,
    pub calibration_inputs: usize,
    pub calibration_len: usize,
    #[serde(default)]
    pub warmup_samples: usize,
    pub seed: u64,
}

impl GenBenchConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.samples == 0 {
            return Err(CatsError::InvalidConfig("samples must be at least 1".into()));
        }
        if self.prompt_len == 0 || self.gen_len == 0 {
            return Err(CatsError::InvalidConfig(
                "prompt_len and gen_len must be positive".into(),
            ));
        }
        if self.prompt_len + self.gen_len - 1 > self.model.max_seq {
            return Err(CatsError::SequenceTooLong {
                len: self.prompt_len + self.gen_len - 1,
                max_seq: self.model.max_seq,
            });
        }
        if let Some(&k) = self.sparsities.iter().find(|k| !(0.0..1.0).contains(*k)) {
            return Err(CatsError::InvalidSparsity(k));
        }
        if self.calibration_inputs == 0 || self.calibration_len == 0 {
            return Err(CatsError::InvalidConfig("calibration set must be non-empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenResult {
    pub mode: CatsMode,
    pub sparsity: Option<f64>,
    pub geomean_latency_ns: f64,
    /// Generated tokens per second at the geometric-mean latency.
    pub throughput_tokens_per_s: f64,
    pub speedup: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenReport {
    pub schema: String,
    pub config: GenBenchConfig,
    pub env: Environment,
    pub timestamp_unix: u64,
    pub results: Vec<GenResult>,
}

pub fn random_sequences(n: usize, len: usize, vocab: usize, seed: u64) -> Vec<Vec<Token>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (0..len).map(|_| rng.random_range(0..vocab as Token)).collect())
        .collect()
}

/// Prefills all but the last prompt token untimed, then times the
/// `gen_len` decode steps that produce the generated tokens.
fn timed_generation(model: &ToyModel, prompt: &[Token], gen_len: usize) -> Result<(f64, Vec<Token>)> {
    let none = Default::default();
    let mut sink = Default::default();
    let mut cache = KvCache::new(model);
    let (last, head) = prompt.split_last().expect("non-empty prompt");
    for &t in head {
        model.step(t, &mut cache, &none, &mut sink)?;
    }
    let mut out = Vec::with_capacity(gen_len);
    let mut next = *last;
    let start = Instant::now();
    for _ in 0..gen_len {
        let logits = model.step(next, &mut cache, &none, &mut sink)?;
        next = argmax(&logits) as Token;
        out.push(next);
    }
    let ns = start.elapsed().as_nanos() as f64;
    Ok((ns.max(1.0), out))
}

/// Decode throughput with thresholding off and in MLP mode at each
/// requested sparsity. Samples are interleaved across modes.
pub fn bench_generation(cfg: &GenBenchConfig) -> Result<GenReport> {
    cfg.validate()?;
    let mut base_cfg = cfg.model.clone();
    base_cfg.cats_mode = CatsMode::Off;
    base_cfg.thresholds.clear();
    let base = build_toy_model(base_cfg)?;
    let vocab = cfg.model.vocab;

    let calib = random_sequences(
        cfg.calibration_inputs,
        cfg.calibration_len,
        vocab,
        derive_seed(cfg.seed, 1),
    );
    let opts = CalibrationOptions {
        max_inputs: cfg.calibration_inputs,
        ..CalibrationOptions::default()
    };
    let mut models = vec![(CatsMode::Off, None, base.clone())];
    for &k in &cfg.sparsities {
        let report = calibrate_model(&base, &calib, k, cfg.seed, CatsMode::Mlp, &opts)?;
        models.push((CatsMode::Mlp, Some(k), report.apply(&base, CatsMode::Mlp)?));
    }

    let prompts = random_sequences(
        cfg.warmup_samples + cfg.samples,
        cfg.prompt_len,
        vocab,
        derive_seed(cfg.seed, 2),
    );
    let mut lat: Vec<Vec<f64>> = vec![Vec::with_capacity(cfg.samples); models.len()];
    for (i, prompt) in prompts.iter().enumerate() {
        for (mi, (_, _, model)) in models.iter().enumerate() {
            let (ns, tokens) = timed_generation(model, prompt, cfg.gen_len)?;
            black_box(tokens);
            if i >= cfg.warmup_samples {
                lat[mi].push(ns);
            }
        }
    }
    let dense = geometric_mean(&lat[0]);
    let results = models
        .iter()
        .zip(&lat)
        .map(|((mode, k, _), l)| {
            let g = geometric_mean(l);
            GenResult {
                mode: *mode,
                sparsity: *k,
                geomean_latency_ns: g,
                throughput_tokens_per_s: cfg.gen_len as f64 / (g * 1e-9),
                speedup: dense / g,
            }
        })
        .collect();
    Ok(GenReport {
        schema: GEN_SCHEMA.to_string(),
        config: cfg.clone(),
        env: Environment::capture(1),
        timestamp_unix: unix_now(),
        results,
    })
}
