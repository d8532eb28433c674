use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::{forward, CatsMode, Site, SiteKind, Token, ToyModel};
use crate::error::{CatsError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SiteSparsity {
    pub layer: usize,
    pub site: SiteKind,
    pub threshold: f32,
    pub zeroed: u64,
    pub total: u64,
    pub sparsity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparsityReport {
    pub mode: CatsMode,
    pub sites: Vec<SiteSparsity>,
    /// Mean over every thresholding site.
    pub mean: f64,
    /// Mean over the MLP activation sites only.
    pub mlp_mean: f64,
}

/// Fraction of entries that come out of each thresholding site as zero,
/// pooled over every token position of `dataset`.
pub fn sparsity_report(model: &ToyModel, dataset: &[Vec<Token>]) -> Result<SparsityReport> {
    let mode = model.mode();
    if mode == CatsMode::Off {
        return Err(CatsError::InvalidConfig(
            "sparsity report needs a thresholding mode other than off".into(),
        ));
    }
    if dataset.iter().all(|s| s.is_empty()) {
        return Err(CatsError::EmptyDataset);
    }
    let layers = model.config().layers;
    let sites: BTreeSet<Site> = (0..layers)
        .flat_map(|layer| mode.site_kinds().iter().map(move |&kind| Site { layer, kind }))
        .collect();
    let mut zeroed = vec![0u64; sites.len()];
    let mut total = vec![0u64; sites.len()];
    for seq in dataset.iter().filter(|s| !s.is_empty()) {
        let (_, captured) = forward(model, seq, &sites)?;
        for (i, site) in sites.iter().enumerate() {
            let t = model
                .threshold(site.layer, site.kind)
                .expect("validated config has every site threshold");
            let values = &captured[site];
            zeroed[i] += values.iter().filter(|&&v| v == 0.0 || !t.keeps(v)).count() as u64;
            total[i] += values.len() as u64;
        }
    }
    let rows: Vec<SiteSparsity> = sites
        .iter()
        .enumerate()
        .map(|(i, site)| SiteSparsity {
            layer: site.layer,
            site: site.kind,
            threshold: model.threshold(site.layer, site.kind).map_or(0.0, |t| t.t),
            zeroed: zeroed[i],
            total: total[i],
            sparsity: zeroed[i] as f64 / total[i] as f64,
        })
        .collect();
    let mean_of = |f: &dyn Fn(&SiteSparsity) -> bool| {
        let sel: Vec<f64> = rows.iter().filter(|r| f(r)).map(|r| r.sparsity).collect();
        sel.iter().sum::<f64>() / sel.len().max(1) as f64
    };
    let mean = mean_of(&|_| true);
    let mlp_mean = mean_of(&|r| r.site == SiteKind::Mlp);
    Ok(SparsityReport {
        mode,
        sites: rows,
        mean,
        mlp_mean,
    })
}
