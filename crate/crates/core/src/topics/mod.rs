//! LDA topic model over bag-of-label-words vectors.
//!
//! Fitting uses online variational Bayes with mini-batches; weights enter the
//! sufficient statistics as real-valued counts so tf-idf bags are handled
//! directly. Held-out perplexity and topic-count selection live in [`select`].

mod select;
mod vb;

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::BagVector;
use crate::error::{Error, Result};

pub use select::{perplexity, select_k, SelectConfig, SelectionCurve};
pub use vb::{elbo, fit_online_vb, infer_theta, FitTrace};

/// Symmetric Dirichlet hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Priors {
    /// Document-topic concentration.
    pub alpha: f64,
    /// Topic-label concentration.
    pub beta: f64,
}

impl Priors {
    /// `alpha = 50 / K`, `beta = 0.1`.
    pub fn for_topics(k: usize) -> Self {
        Priors {
            alpha: 50.0 / k as f64,
            beta: 0.1,
        }
    }
}

/// Online VB schedule and per-document inference settings.
///
/// The learning rate for update `t` is `(tau0 + t)^(-kappa)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OnlineVbConfig {
    pub batch_size: usize,
    pub passes: usize,
    pub kappa: f64,
    pub tau0: f64,
    pub inference: InferenceConfig,
    pub seed: u64,
    /// Evaluate the full-corpus ELBO after every pass (one extra E-step sweep).
    pub track_elbo: bool,
}

impl Default for OnlineVbConfig {
    fn default() -> Self {
        OnlineVbConfig {
            batch_size: 256,
            passes: 3,
            kappa: 0.7,
            tau0: 64.0,
            inference: InferenceConfig::default(),
            seed: 0,
            track_elbo: false,
        }
    }
}

/// Per-document variational iteration limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InferenceConfig {
    pub max_iterations: usize,
    /// Convergence threshold on the mean absolute change of theta.
    pub tol: f64,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            max_iterations: 100,
            tol: 1e-4,
        }
    }
}

/// Fitted topic-label distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    k: usize,
    m: usize,
    pub priors: Priors,
    pub vocab_hash: String,
    /// Row-major K x M, each row a probability vector.
    phi: Vec<f64>,
}

impl TopicModel {
    /// Builds a model from explicit rows; rows are normalized to sum to one.
    pub fn from_rows(rows: Vec<Vec<f64>>, priors: Priors, vocab_hash: impl Into<String>) -> Result<Self> {
        let k = rows.len();
        if k == 0 {
            return Err(Error::invalid("a topic model needs at least one topic"));
        }
        let m = rows[0].len();
        let mut phi = Vec::with_capacity(k * m);
        for (z, row) in rows.into_iter().enumerate() {
            if row.len() != m {
                return Err(Error::invalid(format!("topic {z} has {} entries, expected {m}", row.len())));
            }
            if row.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::invalid(format!("topic {z} has a negative or non-finite entry")));
            }
            let s: f64 = row.iter().sum();
            if s <= 0.0 {
                return Err(Error::invalid(format!("topic {z} has zero mass")));
            }
            phi.extend(row.iter().map(|x| x / s));
        }
        Ok(TopicModel {
            k,
            m,
            priors,
            vocab_hash: vocab_hash.into(),
            phi,
        })
    }

    /// Every topic uniform over the `m` labels.
    pub fn uniform(k: usize, m: usize, priors: Priors) -> Self {
        TopicModel::from_rows(vec![vec![1.0; m]; k], priors, "").expect("uniform rows are valid")
    }

    pub fn num_topics(&self) -> usize {
        self.k
    }

    pub fn vocab_size(&self) -> usize {
        self.m
    }

    pub fn topic(&self, z: usize) -> &[f64] {
        &self.phi[z * self.m..(z + 1) * self.m]
    }

    pub(crate) fn phi(&self) -> &[f64] {
        &self.phi
    }

    /// Labels of topic `z` by decreasing probability.
    pub fn top_labels(&self, z: usize, n: usize) -> Vec<(usize, f64)> {
        let mut v: Vec<(usize, f64)> = self.topic(z).iter().copied().enumerate().collect();
        v.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        v.truncate(n);
        v
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let file = ModelFile {
            k: self.k,
            alpha: self.priors.alpha,
            beta: self.priors.beta,
            vocab_hash: self.vocab_hash.clone(),
            phi: (0..self.k)
                .map(|z| self.topic(z).iter().map(|&x| round_sig9(x)).collect())
                .collect(),
        };
        let mut f = File::create(path)?;
        serde_json::to_writer(&mut f, &file)?;
        writeln!(f)?;
        Ok(())
    }

    pub fn read_json(path: &Path) -> Result<Self> {
        let file: ModelFile = serde_json::from_reader(BufReader::new(File::open(path)?))?;
        if file.phi.len() != file.k {
            return Err(Error::invalid(format!("model declares K={} but has {} rows", file.k, file.phi.len())));
        }
        TopicModel::from_rows(
            file.phi,
            Priors {
                alpha: file.alpha,
                beta: file.beta,
            },
            file.vocab_hash,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    #[serde(rename = "K")]
    k: usize,
    alpha: f64,
    beta: f64,
    vocab_hash: String,
    phi: Vec<Vec<f64>>,
}

/// Rounds to nine significant decimal digits.
fn round_sig9(x: f64) -> f64 {
    format!("{x:.8e}").parse().expect("formatted float parses")
}

/// Per-image topic proportions: the fraction of the image's label weight
/// attributed to each topic under the variational posterior.
#[derive(Debug, Clone, PartialEq)]
pub struct DocTopicAssignment {
    pub theta: Vec<f64>,
}

/// Total-variation distance between two distributions on the same support.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Greedy maximum-overlap matching of fitted topics to reference topics.
///
/// Returns, for each reference topic, the index of the fitted topic assigned
/// to it. Overlap is `1 - TV`. Requires at least as many fitted topics as
/// reference topics.
pub fn greedy_alignment(model: &TopicModel, reference: &[Vec<f64>]) -> Vec<usize> {
    let mut pairs = Vec::new();
    for (r, row) in reference.iter().enumerate() {
        for z in 0..model.num_topics() {
            pairs.push((1.0 - total_variation(model.topic(z), row), r, z));
        }
    }
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut assigned = vec![usize::MAX; reference.len()];
    let mut used = vec![false; model.num_topics()];
    for (_, r, z) in pairs {
        if assigned[r] == usize::MAX && !used[z] {
            assigned[r] = z;
            used[z] = true;
        }
    }
    assigned
}

pub(crate) fn check_corpus(corpus: &[BagVector], m: usize) -> Result<()> {
    for (i, bag) in corpus.iter().enumerate() {
        if let Some(d) = bag.max_dim() {
            if d >= m {
                return Err(Error::invalid(format!("document {i} uses dimension {d} beyond {m}")));
            }
        }
        if bag.dims().iter().any(|&(_, w)| w < 0.0 || !w.is_finite()) {
            return Err(Error::invalid(format!("document {i} has a negative or non-finite weight")));
        }
    }
    Ok(())
}
