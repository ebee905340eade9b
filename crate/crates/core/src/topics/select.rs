use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::vb::{fit_online_vb, posterior};
use super::{InferenceConfig, OnlineVbConfig, Priors, TopicModel};
use crate::corpus::BagVector;
use crate::error::{Error, Result};
use crate::fmt_f64;
use crate::rng::{derive_seed, seeded};

/// Held-out perplexity `exp(-sum_i log p(l_i) / sum_i w_i)`.
///
/// `log p(l_i)` is the plug-in estimate `sum_j w_ij ln sum_z theta_z phi_zj`
/// with `theta` the posterior-mean topic proportions of the document. For
/// uniform topics every term equals `-w_i ln M`, so the result is exactly `M`.
pub fn perplexity(model: &TopicModel, heldout: &[BagVector], cfg: &InferenceConfig) -> Result<f64> {
    let total_weight: f64 = heldout.iter().map(BagVector::weight).sum();
    if !(total_weight > 0.0) {
        return Err(Error::invalid("held-out set has zero total weight"));
    }
    super::check_corpus(heldout, model.vocab_size())?;
    let k = model.num_topics();
    let mut log_lik = 0.0;
    for bag in heldout {
        if bag.is_empty() {
            continue;
        }
        let post = posterior(model, bag, cfg);
        let g: f64 = post.gamma.iter().sum();
        for &(j, c) in bag.dims() {
            let p: f64 = (0..k).map(|z| post.gamma[z] / g * model.topic(z)[j]).sum();
            log_lik += c * p.max(f64::MIN_POSITIVE).ln();
        }
    }
    let perp = (-log_lik / total_weight).exp();
    if !perp.is_finite() {
        return Err(Error::numerical("perplexity is not finite"));
    }
    Ok(perp)
}

/// Monte Carlo train/test resampling used to pick the number of topics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SelectConfig {
    pub resamples: usize,
    /// Training fraction of each split.
    pub split: f64,
    pub seed: u64,
    pub vb: OnlineVbConfig,
    /// Fixed priors for every K; `None` uses `Priors::for_topics(K)`.
    pub priors: Option<Priors>,
    /// A rate whose step `|rpc| * dK` is at most this fraction of the
    /// previous perplexity also counts as zero.
    pub rel_tol: f64,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            resamples: 50,
            split: 0.8,
            seed: 0,
            vb: OnlineVbConfig::default(),
            priors: None,
            rel_tol: 1e-3,
        }
    }
}

/// Perplexity and its rate of change over a K grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectionCurve {
    pub k_grid: Vec<usize>,
    pub delta_k: usize,
    /// Mean held-out perplexity per K.
    pub perp: Vec<f64>,
    /// `perp_samples[r][i]`: perplexity of resample `r` at `k_grid[i]`.
    pub perp_samples: Vec<Vec<f64>>,
    /// Mean of `(P(K) - P(K - dK)) / dK` over resamples; undefined at the first grid point.
    pub rpc: Vec<Option<f64>>,
    pub rpc_std: Vec<Option<f64>>,
    pub k_star: Option<usize>,
}

impl SelectionCurve {
    /// CSV with columns `K,perp_mean,rpc,rpc_std`; undefined cells are empty.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("K,perp_mean,rpc,rpc_std\n");
        let fmt = |x: Option<f64>| x.map(fmt_f64).unwrap_or_default();
        for i in 0..self.k_grid.len() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                self.k_grid[i],
                fmt_f64(self.perp[i]),
                fmt(self.rpc[i]),
                fmt(self.rpc_std[i])
            ));
        }
        std::fs::File::create(path)?.write_all(out.as_bytes())?;
        Ok(())
    }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Fits every K of `k_grid` on repeated random splits and selects `K*`.
///
/// For grid index `i >= 1` the rate of perplexity change is
/// `(P(K_i) - P(K_{i-1})) / dK` per resample. The selected value is the K at
/// which the curve has flattened: `K* = K_{i-1}` for the smallest `i` whose
/// mean rate lies within one standard deviation of zero (or is negligible
/// relative to the perplexity itself), i.e. the smallest K beyond which adding
/// topics no longer changes perplexity significantly.
pub fn select_k(corpus: &[BagVector], m: usize, k_grid: &[usize], delta_k: usize, cfg: &SelectConfig) -> Result<SelectionCurve> {
    if k_grid.len() < 2 {
        return Err(Error::invalid("K grid needs at least two values"));
    }
    if delta_k == 0 {
        return Err(Error::invalid("grid spacing must be positive"));
    }
    if k_grid[0] == 0 || k_grid.windows(2).any(|w| w[1] != w[0] + delta_k) {
        return Err(Error::invalid(format!(
            "K grid {k_grid:?} is not arithmetic with spacing {delta_k}"
        )));
    }
    if cfg.resamples == 0 {
        return Err(Error::invalid("at least one resample is required"));
    }
    if !(cfg.split > 0.0 && cfg.split < 1.0) {
        return Err(Error::invalid("split fraction must lie strictly between 0 and 1"));
    }
    let n_train = ((corpus.len() as f64) * cfg.split).round() as usize;
    if n_train == 0 || n_train >= corpus.len() {
        return Err(Error::invalid(format!(
            "corpus of {} documents is too small for a {} split",
            corpus.len(),
            cfg.split
        )));
    }

    let mut samples = Vec::with_capacity(cfg.resamples);
    for r in 0..cfg.resamples {
        let mut idx: Vec<usize> = (0..corpus.len()).collect();
        idx.shuffle(&mut seeded(derive_seed(cfg.seed, &[r as u64])));
        let train: Vec<BagVector> = idx[..n_train].iter().map(|&i| corpus[i].clone()).collect();
        let test: Vec<BagVector> = idx[n_train..].iter().map(|&i| corpus[i].clone()).collect();
        let mut row = Vec::with_capacity(k_grid.len());
        for &k in k_grid {
            let vb = OnlineVbConfig {
                seed: derive_seed(cfg.seed, &[r as u64, k as u64]),
                ..cfg.vb.clone()
            };
            let priors = cfg.priors.unwrap_or_else(|| Priors::for_topics(k));
            let (model, _) = fit_online_vb(&train, m, k, priors, &vb, "")?;
            row.push(perplexity(&model, &test, &vb.inference)?);
        }
        log::info!("resample {r}: perplexities {row:?}");
        samples.push(row);
    }

    let g = k_grid.len();
    let perp: Vec<f64> = (0..g)
        .map(|i| samples.iter().map(|s| s[i]).sum::<f64>() / samples.len() as f64)
        .collect();
    let mut rpc = vec![None; g];
    let mut rpc_std = vec![None; g];
    let mut k_star = None;
    for i in 1..g {
        let diffs: Vec<f64> = samples.iter().map(|s| (s[i] - s[i - 1]) / delta_k as f64).collect();
        let (mu, sd) = mean_std(&diffs);
        rpc[i] = Some(mu);
        rpc_std[i] = Some(sd);
        let flat = mu.abs() <= sd || mu.abs() * delta_k as f64 <= cfg.rel_tol * perp[i - 1];
        if k_star.is_none() && flat {
            k_star = Some(k_grid[i - 1]);
        }
    }
    Ok(SelectionCurve {
        k_grid: k_grid.to_vec(),
        delta_k,
        perp,
        perp_samples: samples,
        rpc,
        rpc_std,
        k_star,
    })
}
