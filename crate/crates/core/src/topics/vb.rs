use rand::seq::SliceRandom;
use rand_distr::{Distribution, Gamma};
use statrs::function::gamma::{digamma, ln_gamma};

use super::{check_corpus, DocTopicAssignment, InferenceConfig, OnlineVbConfig, Priors, TopicModel};
use crate::corpus::BagVector;
use crate::error::{Error, Result};
use crate::rng::seeded;

const TINY: f64 = 1e-100;

/// Per-pass diagnostics of a fit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FitTrace {
    /// Number of mini-batch updates applied.
    pub updates: usize,
    /// Full-corpus ELBO after each pass, when tracked.
    pub elbo: Vec<f64>,
}

pub(crate) struct DocPosterior {
    pub gamma: Vec<f64>,
    pub theta: Vec<f64>,
}

fn exp_dirichlet_expectation(gamma: &[f64], out: &mut [f64]) {
    let total = digamma(gamma.iter().sum());
    for (o, &g) in out.iter_mut().zip(gamma) {
        *o = (digamma(g) - total).exp();
    }
}

/// Mean-field E-step for one document against topic-label weights `b`
/// (row-major K x M): exp(E[log beta]) while training, phi when frozen.
pub(crate) fn e_step(bag: &BagVector, b: &[f64], k: usize, m: usize, alpha: f64, cfg: &InferenceConfig) -> DocPosterior {
    let w = bag.weight();
    let uniform = vec![1.0 / k as f64; k];
    if bag.is_empty() || w <= 0.0 {
        return DocPosterior {
            gamma: vec![alpha; k],
            theta: uniform,
        };
    }
    let mut gamma = vec![alpha + w / k as f64; k];
    let mut theta = uniform;
    let mut eet = vec![0.0; k];
    let mut next = vec![0.0; k];
    for _ in 0..cfg.max_iterations.max(1) {
        exp_dirichlet_expectation(&gamma, &mut eet);
        next.iter_mut().for_each(|x| *x = 0.0);
        for &(j, c) in bag.dims() {
            let norm: f64 = (0..k).map(|z| eet[z] * b[z * m + j]).sum::<f64>() + TINY;
            let scale = c / norm;
            for z in 0..k {
                next[z] += eet[z] * b[z * m + j] * scale;
            }
        }
        let mass: f64 = next.iter().sum();
        let mut delta = 0.0;
        for z in 0..k {
            let t = if mass > 0.0 { next[z] / mass } else { 1.0 / k as f64 };
            delta += (t - theta[z]).abs();
            theta[z] = t;
            gamma[z] = alpha + next[z];
        }
        if delta / (k as f64) < cfg.tol {
            break;
        }
    }
    DocPosterior { gamma, theta }
}

fn accumulate_stats(bag: &BagVector, gamma: &[f64], b: &[f64], k: usize, m: usize, stats: &mut [f64]) {
    let mut eet = vec![0.0; k];
    exp_dirichlet_expectation(gamma, &mut eet);
    for &(j, c) in bag.dims() {
        let norm: f64 = (0..k).map(|z| eet[z] * b[z * m + j]).sum::<f64>() + TINY;
        let scale = c / norm;
        for z in 0..k {
            stats[z * m + j] += eet[z] * b[z * m + j] * scale;
        }
    }
}

fn expected_log_topics(lambda: &[f64], k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; k * m];
    for z in 0..k {
        let row = &lambda[z * m..(z + 1) * m];
        let total = digamma(row.iter().sum());
        for j in 0..m {
            out[z * m + j] = digamma(row[j]) - total;
        }
    }
    out
}

/// Fits a K-topic LDA model by online variational Bayes.
///
/// Deterministic for a given corpus and `cfg.seed`: the topic initialization
/// and the per-pass document order come from the same seeded stream.
pub fn fit_online_vb(
    corpus: &[BagVector],
    m: usize,
    k: usize,
    priors: Priors,
    cfg: &OnlineVbConfig,
    vocab_hash: &str,
) -> Result<(TopicModel, FitTrace)> {
    if k == 0 {
        return Err(Error::invalid("K must be at least 1"));
    }
    if corpus.is_empty() {
        return Err(Error::invalid("cannot fit a topic model on an empty corpus"));
    }
    if m == 0 {
        return Err(Error::invalid("vocabulary is empty"));
    }
    if !(priors.alpha > 0.0 && priors.beta > 0.0) {
        return Err(Error::invalid("Dirichlet priors must be positive"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::invalid("batch size must be at least 1"));
    }
    check_corpus(corpus, m)?;
    if k > m {
        log::warn!("K={k} exceeds the vocabulary size {m}; topics will be degenerate");
    }

    let mut rng = seeded(cfg.seed);
    let init = Gamma::new(100.0, 0.01).expect("valid gamma parameters");
    let mut lambda: Vec<f64> = (0..k * m).map(|_| init.sample(&mut rng)).collect();
    let n_docs = corpus.len() as f64;
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    let mut trace = FitTrace::default();
    let mut stats = vec![0.0; k * m];

    for _pass in 0..cfg.passes {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let exp_elog: Vec<f64> = expected_log_topics(&lambda, k, m).into_iter().map(f64::exp).collect();
            stats.iter_mut().for_each(|x| *x = 0.0);
            for &d in batch {
                let bag = &corpus[d];
                if bag.is_empty() {
                    continue;
                }
                let post = e_step(bag, &exp_elog, k, m, priors.alpha, &cfg.inference);
                accumulate_stats(bag, &post.gamma, &exp_elog, k, m, &mut stats);
            }
            let rho = (cfg.tau0 + trace.updates as f64).powf(-cfg.kappa);
            let scale = n_docs / batch.len() as f64;
            for (l, s) in lambda.iter_mut().zip(&stats) {
                *l = (1.0 - rho) * *l + rho * (priors.beta + scale * s);
            }
            if lambda.iter().any(|l| !l.is_finite()) {
                return Err(Error::numerical(format!(
                    "non-finite topic parameters after update {}",
                    trace.updates
                )));
            }
            trace.updates += 1;
        }
        if cfg.track_elbo {
            trace.elbo.push(elbo(corpus, &lambda, k, m, priors, &cfg.inference));
        }
    }

    let rows = (0..k).map(|z| lambda[z * m..(z + 1) * m].to_vec()).collect();
    let model = TopicModel::from_rows(rows, priors, vocab_hash)?;
    Ok((model, trace))
}

/// Variational lower bound on the corpus log-likelihood for topic
/// parameters `lambda` (row-major K x M variational Dirichlet).
pub fn elbo(corpus: &[BagVector], lambda: &[f64], k: usize, m: usize, priors: Priors, cfg: &InferenceConfig) -> f64 {
    let elog_beta = expected_log_topics(lambda, k, m);
    let exp_elog: Vec<f64> = elog_beta.iter().map(|x| x.exp()).collect();
    let alpha = priors.alpha;
    let mut score = 0.0;
    let mut elog_theta = vec![0.0; k];
    for bag in corpus {
        let post = e_step(bag, &exp_elog, k, m, alpha, cfg);
        let total = digamma(post.gamma.iter().sum());
        for (e, &g) in elog_theta.iter_mut().zip(&post.gamma) {
            *e = digamma(g) - total;
        }
        for &(j, c) in bag.dims() {
            let terms = (0..k).map(|z| elog_theta[z] + elog_beta[z * m + j]);
            score += c * log_sum_exp(terms);
        }
        for (&g, &e) in post.gamma.iter().zip(&elog_theta) {
            score += (alpha - g) * e + ln_gamma(g) - ln_gamma(alpha);
        }
        score += ln_gamma(alpha * k as f64) - ln_gamma(post.gamma.iter().sum());
    }
    let beta = priors.beta;
    for z in 0..k {
        let row = &lambda[z * m..(z + 1) * m];
        for j in 0..m {
            score += (beta - row[j]) * elog_beta[z * m + j] + ln_gamma(row[j]) - ln_gamma(beta);
        }
        score += ln_gamma(beta * m as f64) - ln_gamma(row.iter().sum());
    }
    score
}

fn log_sum_exp(terms: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = terms.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + terms.map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Topic proportions of one bag with the model's topics held fixed.
pub fn infer_theta(model: &TopicModel, bag: &BagVector, cfg: &InferenceConfig) -> DocTopicAssignment {
    let post = e_step(
        bag,
        model.phi(),
        model.num_topics(),
        model.vocab_size(),
        model.priors.alpha,
        cfg,
    );
    DocTopicAssignment { theta: post.theta }
}

pub(crate) fn posterior(model: &TopicModel, bag: &BagVector, cfg: &InferenceConfig) -> DocPosterior {
    e_step(
        bag,
        model.phi(),
        model.num_topics(),
        model.vocab_size(),
        model.priors.alpha,
        cfg,
    )
}
