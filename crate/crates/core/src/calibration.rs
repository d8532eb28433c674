//! Fitting magnitude cutoffs from sampled activations.
//!
//! For each thresholding site the magnitudes of its activations are pooled
//! over every token position of a seeded subset of calibration sequences.
//! The cutoff for a target sparsity `k` is the smallest observed magnitude
//! (or 0) at which the empirical CDF reaches `k`; no interpolation.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::activation::Threshold;
use crate::error::{CatsError, Result};
use crate::model::{forward, CatsMode, LayerThresholds, Site, SiteKind, Token, ToyModel};
use crate::seed::derive_seed;

pub const CALIBRATION_SCHEMA: &str = "cats.calibration.v1";
pub const DEFAULT_MAX_INPUTS: usize = 500;
pub const DEFAULT_RESERVOIR_CAP: usize = 10_000_000;
pub const DEFAULT_BINS: usize = 64;

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationSample {
    pub layer_id: usize,
    pub magnitudes: Vec<f32>,
    pub source: String,
}

impl ActivationSample {
    /// Takes absolute values of `values`.
    pub fn from_values(layer_id: usize, values: &[f32], source: impl Into<String>) -> Self {
        Self {
            layer_id,
            magnitudes: values.iter().map(|v| v.abs()).collect(),
            source: source.into(),
        }
    }

    pub fn len(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes.is_empty()
    }
}

/// Uniform reservoir of at most `cap` values (Algorithm R), seeded.
#[derive(Debug, Clone)]
pub struct Reservoir {
    cap: usize,
    seen: u64,
    values: Vec<f32>,
    rng: ChaCha8Rng,
}

impl Reservoir {
    pub fn new(cap: usize, seed: u64) -> Self {
        assert!(cap > 0, "reservoir capacity must be positive");
        Self {
            cap,
            seen: 0,
            values: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn push(&mut self, v: f32) {
        if self.values.len() < self.cap {
            self.values.push(v);
        } else {
            let j = self.rng.random_range(0..=self.seen);
            if (j as usize) < self.cap {
                self.values[j as usize] = v;
            }
        }
        self.seen += 1;
    }

    pub fn seen(&self) -> u64 {
        self.seen
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }
}

/// Fraction of magnitudes `≤ t_prime`.
pub fn empirical_cdf(sample: &ActivationSample, t_prime: f32) -> Result<f64> {
    if sample.is_empty() {
        return Err(CatsError::EmptySample);
    }
    let below = sample.magnitudes.iter().filter(|&&v| v <= t_prime).count();
    Ok(below as f64 / sample.len() as f64)
}

fn check_k(k: f64) -> Result<()> {
    if !(0.0..1.0).contains(&k) {
        return Err(CatsError::InvalidSparsity(k));
    }
    Ok(())
}

/// `min{t' : F(t') ≥ k}` over `{0} ∪ values`, where `F` is the empirical CDF
/// of `values`. Partially reorders `values`.
pub fn quantile_cutoff(values: &mut [f32], k: f64) -> Result<f32> {
    check_k(k)?;
    let n = values.len();
    if n == 0 {
        return Err(CatsError::EmptySample);
    }
    if k == 0.0 {
        return Ok(0.0);
    }
    let reaches = |r: usize| (r as f64) / (n as f64) >= k;
    // Smallest rank r with r/n ≥ k, decided with the same comparison F uses.
    let mut r = ((k * n as f64).ceil() as usize).clamp(1, n);
    while r > 1 && reaches(r - 1) {
        r -= 1;
    }
    while !reaches(r) {
        r += 1;
    }
    let (_, nth, _) = values.select_nth_unstable_by(r - 1, f32::total_cmp);
    Ok(*nth)
}

pub fn fit_threshold(sample: &ActivationSample, k: f64) -> Result<Threshold> {
    check_k(k)?;
    if sample.is_empty() {
        return Err(CatsError::EmptySample);
    }
    let mut scratch = sample.magnitudes.clone();
    let t = quantile_cutoff(&mut scratch, k)?;
    Threshold::new(t, k, sample.layer_id, sample.len())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub range_max: f32,
    /// `bins + 1` uniformly spaced edges from 0 to `range_max`.
    pub edges: Vec<f32>,
    pub counts: Vec<u64>,
    /// Values above `range_max`.
    pub overflow: u64,
}

impl Histogram {
    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.overflow
    }
}

pub fn histogram(sample: &ActivationSample, bins: usize, range_max: f32) -> Result<Histogram> {
    if bins == 0 {
        return Err(CatsError::InvalidConfig("histogram needs at least one bin".into()));
    }
    if !(range_max.is_finite() && range_max > 0.0) {
        return Err(CatsError::InvalidConfig(format!(
            "histogram range must be positive and finite, got {range_max}"
        )));
    }
    let width = range_max as f64 / bins as f64;
    let edges = (0..=bins).map(|i| (i as f64 * width) as f32).collect();
    let mut counts = vec![0u64; bins];
    let mut overflow = 0;
    for &v in &sample.magnitudes {
        if v > range_max {
            overflow += 1;
        } else {
            let b = ((v as f64 / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
    }
    Ok(Histogram {
        range_max,
        edges,
        counts,
        overflow,
    })
}

/// Sorted indices of at most `max_inputs` sequences drawn without
/// replacement under `seed`.
pub fn select_inputs(n: usize, max_inputs: usize, seed: u64) -> Vec<usize> {
    if n <= max_inputs {
        return (0..n).collect();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx = sample_indices(&mut rng, n, max_inputs).into_vec();
    idx.sort_unstable();
    idx
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationOptions {
    pub max_inputs: usize,
    pub reservoir_cap: usize,
    pub bins: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            max_inputs: DEFAULT_MAX_INPUTS,
            reservoir_cap: DEFAULT_RESERVOIR_CAP,
            bins: DEFAULT_BINS,
        }
    }
}

/// Magnitudes at each of `sites`, gathered from the model with thresholding
/// switched off.
fn collect_sites(
    model: &ToyModel,
    dataset: &[Vec<Token>],
    sites: &BTreeSet<Site>,
    seed: u64,
    opts: &CalibrationOptions,
) -> Result<(BTreeMap<Site, ActivationSample>, usize)> {
    if opts.max_inputs == 0 {
        return Err(CatsError::InvalidConfig("max_inputs must be at least 1".into()));
    }
    if dataset.is_empty() {
        return Err(CatsError::EmptyDataset);
    }
    let layers = model.config().layers;
    if let Some(s) = sites.iter().find(|s| s.layer >= layers) {
        return Err(CatsError::UnknownLayer { layer: s.layer, layers });
    }
    let base = model.with_thresholds(CatsMode::Off, Vec::new())?;
    let chosen = select_inputs(dataset.len(), opts.max_inputs, derive_seed(seed, 0));
    let mut reservoirs: BTreeMap<Site, Reservoir> = sites
        .iter()
        .map(|&s| {
            let tag = 1 + (s.layer as u64) * 4 + s.kind as u64;
            (s, Reservoir::new(opts.reservoir_cap, derive_seed(seed, tag)))
        })
        .collect();
    for &i in &chosen {
        let (_, captured) = forward(&base, &dataset[i], sites)?;
        for (site, values) in captured {
            let r = reservoirs.get_mut(&site).expect("captured site was requested");
            for v in values {
                r.push(v.abs());
            }
        }
    }
    let source = format!("{} of {} sequences, seed {seed}", chosen.len(), dataset.len());
    let samples = reservoirs
        .into_iter()
        .map(|(site, r)| {
            let s = ActivationSample {
                layer_id: site.layer,
                magnitudes: r.into_values(),
                source: source.clone(),
            };
            (site, s)
        })
        .collect();
    Ok((samples, chosen.len()))
}

/// Post-activation MLP magnitudes of `layer_id` over a seeded subset of at
/// most `max_inputs` sequences.
pub fn collect_activations(
    model: &ToyModel,
    dataset: &[Vec<Token>],
    layer_id: usize,
    max_inputs: usize,
    seed: u64,
) -> Result<ActivationSample> {
    collect_site(model, dataset, Site::mlp(layer_id), max_inputs, seed)
}

pub fn collect_site(
    model: &ToyModel,
    dataset: &[Vec<Token>],
    site: Site,
    max_inputs: usize,
    seed: u64,
) -> Result<ActivationSample> {
    let opts = CalibrationOptions {
        max_inputs,
        ..CalibrationOptions::default()
    };
    let (mut samples, _) = collect_sites(model, dataset, &[site].into(), seed, &opts)?;
    let s = samples.remove(&site).unwrap_or(ActivationSample {
        layer_id: site.layer,
        magnitudes: Vec::new(),
        source: String::new(),
    });
    if s.is_empty() {
        return Err(CatsError::EmptyDataset);
    }
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteCalibration {
    pub layer: usize,
    pub site: SiteKind,
    pub threshold: Threshold,
    pub histogram: Histogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub schema: String,
    pub mode: CatsMode,
    pub target_sparsity: f64,
    pub seed: u64,
    pub max_inputs: usize,
    pub inputs_used: usize,
    pub sites: Vec<SiteCalibration>,
}

impl CalibrationReport {
    /// Threshold sets indexed by layer, ready for [`ToyModel::with_thresholds`].
    pub fn layer_thresholds(&self, layers: usize) -> Result<Vec<LayerThresholds>> {
        let mut out = vec![LayerThresholds::default(); layers];
        for s in &self.sites {
            let slot = out
                .get_mut(s.layer)
                .ok_or(CatsError::UnknownLayer { layer: s.layer, layers })?;
            slot.set(s.site, s.threshold);
        }
        Ok(out)
    }

    /// `model` with this report's thresholds in `mode`. Calibrating for
    /// mlp+attention also covers plain mlp mode.
    pub fn apply(&self, model: &ToyModel, mode: CatsMode) -> Result<ToyModel> {
        let layers = model.config().layers;
        let mut sets = self.layer_thresholds(layers)?;
        if mode == CatsMode::Mlp {
            for s in &mut sets {
                s.attn_in = None;
                s.mlp_in = None;
            }
        }
        model.with_thresholds(mode, sets)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Fits one cutoff per thresholding site of `mode` (every MLP block, plus the
/// attention and MLP inputs for mlp+attention). All sites are sampled from
/// the unthresholded model, independently of each other.
pub fn calibrate_model(
    model: &ToyModel,
    dataset: &[Vec<Token>],
    k: f64,
    seed: u64,
    mode: CatsMode,
    opts: &CalibrationOptions,
) -> Result<CalibrationReport> {
    check_k(k)?;
    if mode == CatsMode::Off {
        return Err(CatsError::InvalidConfig("cannot calibrate for mode off".into()));
    }
    let layers = model.config().layers;
    let sites: BTreeSet<Site> = (0..layers)
        .flat_map(|layer| mode.site_kinds().iter().map(move |&kind| Site { layer, kind }))
        .collect();
    let (samples, inputs_used) = collect_sites(model, dataset, &sites, seed, opts)?;
    let sites = samples
        .into_iter()
        .map(|(site, sample)| {
            if sample.is_empty() {
                return Err(CatsError::EmptyDataset);
            }
            let threshold = fit_threshold(&sample, k)?;
            let max = sample.magnitudes.iter().copied().fold(0.0f32, f32::max);
            let range_max = if max > 0.0 { max } else { 1.0 };
            let histogram = histogram(&sample, opts.bins, range_max)?;
            Ok(SiteCalibration {
                layer: site.layer,
                site: site.kind,
                threshold,
                histogram,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(CalibrationReport {
        schema: CALIBRATION_SCHEMA.to_string(),
        mode,
        target_sparsity: k,
        seed,
        max_inputs: opts.max_inputs,
        inputs_used,
        sites,
    })
}
