//! Relative density-ratio estimation by RuLSIF and the relative Pearson
//! divergence.
//!
//! For samples from `p` (numerator) and `p'` (denominator) the target is
//! `r(w) = p(w) / (gamma p(w) + (1 - gamma) p'(w))`, which is bounded by
//! `1 / gamma`. It is modelled as a Gaussian-kernel expansion over centers
//! drawn from the numerator sample and fitted by regularized least squares.

use nalgebra::{DMatrix, DVector};
use rand::seq::{index, SliceRandom};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded};

/// Upper end of the ratio range, `1 / gamma` (infinite when `gamma == 0`).
pub fn ratio_bound(gamma: f64) -> f64 {
    if gamma > 0.0 {
        1.0 / gamma
    } else {
        f64::INFINITY
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RulsifConfig {
    pub gamma: f64,
    /// Explicit bandwidths; when empty, `sigma_factors` times the median
    /// pairwise distance of the pooled samples.
    pub sigma_grid: Vec<f64>,
    pub sigma_factors: Vec<f64>,
    pub lambda_grid: Vec<f64>,
    pub folds: usize,
    pub max_centers: usize,
    pub seed: u64,
}

impl Default for RulsifConfig {
    fn default() -> Self {
        RulsifConfig {
            gamma: 0.1,
            sigma_grid: vec![],
            sigma_factors: vec![0.25, 0.5, 1.0, 2.0, 4.0],
            lambda_grid: vec![1e-3, 1e-2, 1e-1, 1.0],
            folds: 5,
            max_centers: 100,
            seed: 0,
        }
    }
}

impl RulsifConfig {
    pub fn with_gamma(gamma: f64) -> Self {
        RulsifConfig {
            gamma,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CvScore {
    pub sigma: f64,
    pub lambda: f64,
    /// Held-out `J = 0.5 a' H a - h' a`, averaged over folds.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DensityRatioModel {
    pub gamma: f64,
    pub centers: Vec<Vec<f64>>,
    pub sigma: f64,
    pub lambda_reg: f64,
    pub coeffs: Vec<f64>,
    /// Every grid cell of the cross-validation, in grid order.
    pub cv: Vec<CvScore>,
}

impl DensityRatioModel {
    /// Unclamped kernel expansion at `x`.
    pub fn raw(&self, x: &[f64]) -> f64 {
        let s = -0.5 / (self.sigma * self.sigma);
        self.centers
            .iter()
            .zip(&self.coeffs)
            .map(|(c, a)| a * (s * sq_dist(x, c)).exp())
            .sum()
    }

    /// Ratio estimate clamped to `[0, 1/gamma]`.
    pub fn ratio(&self, x: &[f64]) -> f64 {
        self.raw(x).clamp(0.0, ratio_bound(self.gamma))
    }

    pub fn dim(&self) -> usize {
        self.centers[0].len()
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn check_samples(num: &[Vec<f64>], den: &[Vec<f64>]) -> Result<usize> {
    if num.is_empty() || den.is_empty() {
        return Err(Error::invalid("density-ratio samples must be nonempty"));
    }
    let d = num[0].len();
    if d == 0 {
        return Err(Error::invalid("sample vectors must have positive dimension"));
    }
    if num.iter().chain(den).any(|v| v.len() != d) {
        return Err(Error::invalid("sample vectors differ in dimension"));
    }
    if num.iter().chain(den).flatten().any(|x| !x.is_finite()) {
        return Err(Error::invalid("sample contains non-finite values"));
    }
    Ok(d)
}

fn lex_cmp(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Sorted copy, so results do not depend on the order samples arrive in.
fn canonical(sample: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut v = sample.to_vec();
    v.sort_by(|a, b| lex_cmp(a, b));
    v
}

/// Median pairwise distance over (a subsample of) the pooled data, falling
/// back to the mean distance and then to 1 when the data are degenerate.
fn median_distance(pooled: &[Vec<f64>], seed: u64) -> f64 {
    const CAP: usize = 200;
    let pick: Vec<&Vec<f64>> = if pooled.len() > CAP {
        let mut idx = index::sample(&mut seeded(seed), pooled.len(), CAP).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| &pooled[i]).collect()
    } else {
        pooled.iter().collect()
    };
    let mut d = Vec::with_capacity(pick.len() * pick.len() / 2);
    for i in 0..pick.len() {
        for j in i + 1..pick.len() {
            d.push(sq_dist(pick[i], pick[j]).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let mid = d.len() / 2;
    let median = if d.len() % 2 == 0 { 0.5 * (d[mid - 1] + d[mid]) } else { d[mid] };
    if median > 0.0 {
        return median;
    }
    let mean = d.iter().sum::<f64>() / d.len() as f64;
    if mean > 0.0 {
        mean
    } else {
        1.0
    }
}

fn design(sample: &[Vec<f64>], centers: &[Vec<f64>], sigma: f64) -> DMatrix<f64> {
    let s = -0.5 / (sigma * sigma);
    DMatrix::from_fn(sample.len(), centers.len(), |i, b| (s * sq_dist(&sample[i], &centers[b])).exp())
}

/// Gram matrices and column sums of the design rows in each fold.
struct FoldStats {
    gram: Vec<DMatrix<f64>>,
    sums: Vec<DVector<f64>>,
    counts: Vec<usize>,
}

impl FoldStats {
    fn new(phi: &DMatrix<f64>, fold_of: &[usize], folds: usize) -> Self {
        let b = phi.ncols();
        let mut gram = Vec::with_capacity(folds);
        let mut sums = Vec::with_capacity(folds);
        let mut counts = Vec::with_capacity(folds);
        for f in 0..folds {
            let rows: Vec<usize> = (0..phi.nrows()).filter(|&i| fold_of[i] == f).collect();
            let sub = phi.select_rows(rows.iter());
            gram.push(if rows.is_empty() { DMatrix::zeros(b, b) } else { sub.tr_mul(&sub) });
            sums.push(DVector::from_iterator(b, (0..b).map(|c| sub.column(c).sum())));
            counts.push(rows.len());
        }
        FoldStats { gram, sums, counts }
    }

    fn total(&self) -> (DMatrix<f64>, DVector<f64>, usize) {
        let mut g = self.gram[0].clone();
        let mut s = self.sums[0].clone();
        for f in 1..self.gram.len() {
            g += &self.gram[f];
            s += &self.sums[f];
        }
        (g, s, self.counts.iter().sum())
    }
}

/// `H = gamma/n_p G_p + (1-gamma)/n_q G_q`, `h = s_p / n_p`.
fn system(gamma: f64, gp: &DMatrix<f64>, sp: &DVector<f64>, np: usize, gq: &DMatrix<f64>, nq: usize) -> (DMatrix<f64>, DVector<f64>) {
    let h_mat = gp * (gamma / np as f64) + gq * ((1.0 - gamma) / nq as f64);
    (h_mat, sp / np as f64)
}

fn ridge_solve(h: &DMatrix<f64>, rhs: &DVector<f64>, lambda: f64) -> Result<DVector<f64>> {
    let b = h.nrows();
    let scale = (h.trace() / b as f64).abs().max(1e-300);
    for jitter in [0.0, 1e-12, 1e-10, 1e-8] {
        let mut a = h.clone();
        for i in 0..b {
            a[(i, i)] += lambda + jitter * scale;
        }
        if let Some(chol) = a.cholesky() {
            let x = chol.solve(rhs);
            if x.iter().all(|v| v.is_finite()) {
                return Ok(x);
            }
        }
    }
    Err(Error::numerical(format!("ridge system with lambda={lambda} is not positive definite")))
}

fn assign_folds(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut seeded(seed));
    let mut fold_of = vec![0; n];
    for (pos, &i) in perm.iter().enumerate() {
        fold_of[i] = pos % folds;
    }
    fold_of
}

/// Fits the relative density ratio of `num` over `den`.
///
/// Both samples are sorted before use, so the fit is invariant to sample
/// order and deterministic given `cfg.seed`. Bandwidth and ridge are chosen by
/// k-fold cross-validation of the least-squares criterion; ties keep the
/// first grid cell (bandwidth-major order).
pub fn fit_rulsif(num: &[Vec<f64>], den: &[Vec<f64>], cfg: &RulsifConfig) -> Result<DensityRatioModel> {
    check_samples(num, den)?;
    if !(0.0..1.0).contains(&cfg.gamma) {
        return Err(Error::invalid(format!("gamma must lie in [0, 1), got {}", cfg.gamma)));
    }
    if cfg.lambda_grid.is_empty() || cfg.lambda_grid.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::invalid("lambda grid must be nonempty and positive"));
    }
    if cfg.max_centers == 0 {
        return Err(Error::invalid("at least one basis center is required"));
    }
    let num = canonical(num);
    let den = canonical(den);

    let nb = cfg.max_centers.min(num.len());
    let mut cidx = index::sample(&mut seeded(derive_seed(cfg.seed, &[0])), num.len(), nb).into_vec();
    cidx.sort_unstable();
    let centers: Vec<Vec<f64>> = cidx.iter().map(|&i| num[i].clone()).collect();

    let sigmas: Vec<f64> = if cfg.sigma_grid.is_empty() {
        let pooled: Vec<Vec<f64>> = num.iter().chain(&den).cloned().collect();
        let med = median_distance(&pooled, derive_seed(cfg.seed, &[1]));
        cfg.sigma_factors.iter().map(|f| f * med).collect()
    } else {
        cfg.sigma_grid.clone()
    };
    if sigmas.is_empty() || sigmas.iter().any(|s| !(*s > 0.0) || !s.is_finite()) {
        return Err(Error::invalid("bandwidth grid must be nonempty and positive"));
    }

    let folds = cfg.folds.max(1).min(num.len()).min(den.len());
    let fold_p = assign_folds(num.len(), folds, derive_seed(cfg.seed, &[2]));
    let fold_q = assign_folds(den.len(), folds, derive_seed(cfg.seed, &[3]));

    let mut cv = Vec::with_capacity(sigmas.len() * cfg.lambda_grid.len());
    let mut best: Option<(f64, f64, f64)> = None;
    for &sigma in &sigmas {
        let phi_p = design(&num, &centers, sigma);
        let phi_q = design(&den, &centers, sigma);
        let fp = FoldStats::new(&phi_p, &fold_p, folds);
        let fq = FoldStats::new(&phi_q, &fold_q, folds);
        let (gp_all, sp_all, np_all) = fp.total();
        let (gq_all, _, nq_all) = fq.total();
        for &lambda in &cfg.lambda_grid {
            let score = if folds < 2 {
                // no held-out data: score on the training system itself
                let (h, hv) = system(cfg.gamma, &gp_all, &sp_all, np_all, &gq_all, nq_all);
                let a = ridge_solve(&h, &hv, lambda)?;
                0.5 * a.dot(&(&h * &a)) - hv.dot(&a)
            } else {
                let mut total = 0.0;
                for f in 0..folds {
                    let (np_tr, nq_tr) = (np_all - fp.counts[f], nq_all - fq.counts[f]);
                    let (h_tr, h_vec) = system(
                        cfg.gamma,
                        &(&gp_all - &fp.gram[f]),
                        &(&sp_all - &fp.sums[f]),
                        np_tr,
                        &(&gq_all - &fq.gram[f]),
                        nq_tr,
                    );
                    let a = ridge_solve(&h_tr, &h_vec, lambda)?;
                    let (h_te, hv_te) = system(cfg.gamma, &fp.gram[f], &fp.sums[f], fp.counts[f], &fq.gram[f], fq.counts[f]);
                    total += 0.5 * a.dot(&(&h_te * &a)) - hv_te.dot(&a);
                }
                total / folds as f64
            };
            cv.push(CvScore { sigma, lambda, score });
            if best.is_none_or(|b| score < b.0) {
                best = Some((score, sigma, lambda));
            }
        }
    }
    let (_, sigma, lambda) = best.expect("grid is nonempty");
    let phi_p = design(&num, &centers, sigma);
    let phi_q = design(&den, &centers, sigma);
    let (h, hv) = system(
        cfg.gamma,
        &phi_p.tr_mul(&phi_p),
        &DVector::from_iterator(nb, (0..nb).map(|c| phi_p.column(c).sum())),
        num.len(),
        &phi_q.tr_mul(&phi_q),
        den.len(),
    );
    let coeffs = ridge_solve(&h, &hv, lambda)?;
    Ok(DensityRatioModel {
        gamma: cfg.gamma,
        centers,
        sigma,
        lambda_reg: lambda,
        coeffs: coeffs.iter().copied().collect(),
        cv,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DivergenceEstimate {
    pub value: f64,
    pub gamma: f64,
}

/// Plug-in relative Pearson divergence of `num` from `den`:
/// `-gamma/(2 n_p) sum_p r^2 - (1-gamma)/(2 n_q) sum_q r^2 + 1/n_p sum_p r - 1/2`,
/// with clamped ratios and the result clamped below at 0.
pub fn rp_divergence(model: &DensityRatioModel, num: &[Vec<f64>], den: &[Vec<f64>]) -> Result<DivergenceEstimate> {
    let d = check_samples(num, den)?;
    if d != model.dim() {
        return Err(Error::invalid(format!("model dimension {} does not match samples of dimension {d}", model.dim())));
    }
    let g = model.gamma;
    let bound = ratio_bound(g);
    let mut clamped = 0usize;
    let mut eval = |x: &Vec<f64>| {
        let r = model.raw(x);
        if r < 0.0 || r > bound {
            clamped += 1;
        }
        r.clamp(0.0, bound)
    };
    let rp: Vec<f64> = num.iter().map(&mut eval).collect();
    let rq: Vec<f64> = den.iter().map(&mut eval).collect();
    if clamped > 0 {
        log::debug!("{clamped} ratio values clamped to [0, {bound}]");
    }
    let (np, nq) = (rp.len() as f64, rq.len() as f64);
    let value = -g / (2.0 * np) * sorted_sum(rp.iter().map(|r| r * r))
        - (1.0 - g) / (2.0 * nq) * sorted_sum(rq.iter().map(|r| r * r))
        + sorted_sum(rp.iter().copied()) / np
        - 0.5;
    if !value.is_finite() {
        return Err(Error::numerical("divergence estimate is not finite"));
    }
    Ok(DivergenceEstimate { value: value.max(0.0), gamma: g })
}

/// Sum in a fixed (sorted) order so permuting the sample cannot change rounding.
fn sorted_sum(it: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = it.collect();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

/// `D(X || Y) + D(Y || X)`, clamped to `[0, 1/gamma]`. Both directions use
/// the same configuration and seed, so the result is symmetric exactly.
pub fn symmetrized_rp(x: &[Vec<f64>], y: &[Vec<f64>], cfg: &RulsifConfig) -> Result<f64> {
    let fwd = rp_divergence(&fit_rulsif(x, y, cfg)?, x, y)?.value;
    let bwd = rp_divergence(&fit_rulsif(y, x, cfg)?, y, x)?.value;
    Ok((fwd + bwd).min(ratio_bound(cfg.gamma)))
}
