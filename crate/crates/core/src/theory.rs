// SPDX-License-Identifier: MIT OR Apache-2.0

//! A toy logit model linking document attention to answer probability.
//!
//! Each document `d_j` has a unit embedding `e_d[j]`, its answer token `y_j` a
//! unit embedding `e_y[j]`, all mutually orthogonal. The value vector of
//! `d_j` is `kappa_j * e_d[j]` at every layer, so after `L` layers
//!
//! ```text
//! h_last   = h_init + sum_j L * abar_j * kappa_j * e_d[j] (+ dh_noise)
//! logit_j  = <h_last, e_d[j]> + <h_last, e_y[j]> + b_j
//! P        = softmax(logit)
//! ```
//!
//! where `abar_j` is the cross-layer mean attention on `d_j`. The exact
//! gradient of `P_t` with respect to `abar_j` is `P_t (1 - P_t) L kappa_t`
//! for `j = t` and `-P_t P_j L kappa_j` otherwise.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synth::{rng_for, SyntheticBasinParams};

/// Tolerance for the orthonormality invariant of the embeddings.
pub const ORTHONORMAL_TOL: f64 = 1e-10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TheoryModel {
    pub k: usize,
    pub n_layers: usize,
    pub dim: usize,
    doc_embeddings: Vec<Vec<f64>>,
    token_embeddings: Vec<Vec<f64>>,
    pub value_gains: Vec<f64>,
    pub h_init: Vec<f64>,
    pub biases: Vec<f64>,
    pub hidden_noise: Option<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn basis(dim: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

impl TheoryModel {
    /// Standard-basis embeddings in dimension `2k + 1`: documents on the
    /// first `k` axes, answer tokens on the next `k`, `h_init` on the last.
    /// Unit value gains, zero biases.
    pub fn new(k: usize, n_layers: usize) -> Self {
        let dim = 2 * k + 1;
        Self {
            k,
            n_layers,
            dim,
            doc_embeddings: (0..k).map(|i| basis(dim, i)).collect(),
            token_embeddings: (0..k).map(|i| basis(dim, k + i)).collect(),
            value_gains: vec![1.0; k],
            h_init: basis(dim, 2 * k),
            biases: vec![0.0; k],
            hidden_noise: None,
        }
    }

    pub fn with_value_gains(mut self, kappa: Vec<f64>) -> Result<Self> {
        if kappa.len() != self.k || kappa.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
            return Err(Error::invalid(
                "value gains",
                format!("need {} positive finite gains, got {kappa:?}", self.k),
            ));
        }
        self.value_gains = kappa;
        Ok(self)
    }

    pub fn with_biases(mut self, biases: Vec<f64>) -> Result<Self> {
        if biases.len() != self.k || biases.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(
                "biases",
                format!("need {} finite biases", self.k),
            ));
        }
        self.biases = biases;
        Ok(self)
    }

    pub fn with_h_init(mut self, h_init: Vec<f64>) -> Result<Self> {
        if h_init.len() != self.dim {
            return Err(Error::Shape(format!(
                "h_init has dimension {}, model has {}",
                h_init.len(),
                self.dim
            )));
        }
        self.h_init = h_init;
        Ok(self)
    }

    /// Adds a Gaussian perturbation of the final hidden state. Used only to
    /// probe robustness; the monotonicity checks assume none.
    pub fn with_hidden_noise(mut self, scale: f64, seed: u64) -> Self {
        let mut rng = rng_for(seed, 0);
        self.hidden_noise = Some(
            (0..self.dim)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect(),
        );
        self
    }

    /// Applies one random orthogonal transform to every embedding and to
    /// `h_init` (and the noise), which leaves all inner products unchanged.
    pub fn rotated(mut self, seed: u64) -> Self {
        let q = random_orthogonal(self.dim, seed);
        let apply = |v: &Vec<f64>| -> Vec<f64> { q.iter().map(|row| dot(row, v)).collect() };
        self.doc_embeddings = self.doc_embeddings.iter().map(apply).collect();
        self.token_embeddings = self.token_embeddings.iter().map(apply).collect();
        self.h_init = apply(&self.h_init);
        self.hidden_noise = self.hidden_noise.as_ref().map(apply);
        self
    }

    pub fn doc_embedding(&self, j: usize) -> &[f64] {
        &self.doc_embeddings[j]
    }

    pub fn token_embedding(&self, j: usize) -> &[f64] {
        &self.token_embeddings[j]
    }

    /// Largest deviation of the embedding Gram matrix from the identity.
    pub fn orthonormality_error(&self) -> f64 {
        let all: Vec<&Vec<f64>> = self
            .doc_embeddings
            .iter()
            .chain(&self.token_embeddings)
            .collect();
        let mut worst = 0.0f64;
        for (i, a) in all.iter().enumerate() {
            for (j, b) in all.iter().enumerate() {
                let target = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((dot(a, b) - target).abs());
            }
        }
        worst
    }

    fn check_alpha(&self, alpha_bar: &[f64]) -> Result<()> {
        if alpha_bar.len() != self.k {
            return Err(Error::Shape(format!(
                "{} attention weights for {} documents",
                alpha_bar.len(),
                self.k
            )));
        }
        if alpha_bar.iter().any(|a| !(*a >= 0.0) || !a.is_finite()) {
            return Err(Error::invalid(
                "attention",
                format!("weights must be finite and >= 0, got {alpha_bar:?}"),
            ));
        }
        Ok(())
    }

    pub fn hidden_state(&self, alpha_bar: &[f64]) -> Vec<f64> {
        let mut h = self.h_init.clone();
        let l = self.n_layers as f64;
        for ((a, kappa), e) in alpha_bar
            .iter()
            .zip(&self.value_gains)
            .zip(&self.doc_embeddings)
        {
            let w = l * a * kappa;
            for (hi, ei) in h.iter_mut().zip(e) {
                *hi += w * ei;
            }
        }
        if let Some(noise) = &self.hidden_noise {
            for (hi, ni) in h.iter_mut().zip(noise) {
                *hi += ni;
            }
        }
        h
    }

    pub fn logits(&self, alpha_bar: &[f64]) -> Vec<f64> {
        let h = self.hidden_state(alpha_bar);
        (0..self.k)
            .map(|j| {
                dot(&h, &self.doc_embeddings[j])
                    + dot(&h, &self.token_embeddings[j])
                    + self.biases[j]
            })
            .collect()
    }

    fn probabilities(&self, alpha_bar: &[f64]) -> Vec<f64> {
        softmax(&self.logits(alpha_bar))
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Gram-Schmidt on a Gaussian matrix; rows of the result are orthonormal.
fn random_orthogonal(dim: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = rng_for(seed, 1);
    let mut rows: Vec<Vec<f64>> = Vec::with_capacity(dim);
    while rows.len() < dim {
        let mut v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        // two passes keep the residual orthogonal to working precision
        for _ in 0..2 {
            for r in &rows {
                let c = dot(&v, r);
                v.iter_mut().zip(r).for_each(|(vi, ri)| *vi -= c * ri);
            }
        }
        let norm = dot(&v, &v).sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|vi| *vi /= norm);
            rows.push(v);
        }
    }
    rows
}

/// Answer probabilities for cross-layer mean document attention `alpha_bar`.
pub fn answer_distribution(model: &TheoryModel, alpha_bar: &[f64]) -> Result<Vec<f64>> {
    model.check_alpha(alpha_bar)?;
    Ok(model.probabilities(alpha_bar))
}

/// `dP(y_target) / d abar_j` for every `j`, in closed form.
pub fn attention_gradient(
    model: &TheoryModel,
    alpha_bar: &[f64],
    target: usize,
) -> Result<Vec<f64>> {
    if target >= model.k {
        return Err(Error::invalid(
            "target",
            format!("{target} outside [0, {})", model.k),
        ));
    }
    let p = answer_distribution(model, alpha_bar)?;
    let l = model.n_layers as f64;
    let pt = p[target];
    Ok((0..model.k)
        .map(|j| {
            let kappa = model.value_gains[j];
            if j == target {
                pt * (1.0 - pt) * l * kappa
            } else {
                -pt * p[j] * l * kappa
            }
        })
        .collect())
}

/// Central finite differences of `P(y_target)`. Evaluates the model off the
/// non-negative orthant when a weight sits at zero.
pub fn finite_difference_gradient(
    model: &TheoryModel,
    alpha_bar: &[f64],
    target: usize,
    step: f64,
) -> Vec<f64> {
    (0..model.k)
        .map(|j| {
            let mut plus = alpha_bar.to_vec();
            let mut minus = alpha_bar.to_vec();
            plus[j] += step;
            minus[j] -= step;
            (model.probabilities(&plus)[target] - model.probabilities(&minus)[target])
                / (2.0 * step)
        })
        .collect()
}

/// Distribution of randomized configurations for the monotonicity suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityFamily {
    pub k_min: usize,
    pub k_max: usize,
    pub max_layers: usize,
    /// All value gains equal to 1.
    pub equal_kappa: bool,
    pub kappa_range: (f64, f64),
    /// Standard deviation of the answer-token biases.
    pub bias_scale: f64,
    /// Fraction of trials built to violate `kappa_t >= max kappa_j`.
    pub out_of_hypothesis_rate: f64,
}

impl Default for MonotonicityFamily {
    fn default() -> Self {
        Self {
            k_min: 3,
            k_max: 8,
            max_layers: 8,
            equal_kappa: false,
            kappa_range: (0.5, 2.0),
            bias_scale: 1.0,
            out_of_hypothesis_rate: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MonotonicityReport {
    pub trials: usize,
    pub in_hypothesis: usize,
    /// Trials where the target's value gain is not maximal; excluded from (c).
    pub out_of_hypothesis: usize,
    /// (a) `dP_t/d abar_t > 0`.
    pub violations_a: usize,
    /// (b) `dP_t/d abar_j <= 0` for `j != t`.
    pub violations_b: usize,
    /// (c) `dP_t/d abar_t > |dP_t/d abar_j|`, in-hypothesis trials only.
    pub violations_c: usize,
    /// How often (c) failed on out-of-hypothesis trials. Informational.
    pub out_of_hypothesis_c_failures: usize,
}

impl MonotonicityReport {
    pub fn violations(&self) -> usize {
        self.violations_a + self.violations_b + self.violations_c
    }
}

/// One randomized configuration of the monotonicity suite.
#[derive(Clone, Debug, PartialEq)]
pub struct MonotonicityTrial {
    pub model: TheoryModel,
    pub alpha_bar: Vec<f64>,
    pub target: usize,
    pub in_hypothesis: bool,
}

pub fn monotonicity_trial(family: &MonotonicityFamily, seed: u64, index: u64) -> MonotonicityTrial {
    let mut rng = rng_for(seed, index);
    let k = rng.random_range(family.k_min.max(2)..=family.k_max.max(family.k_min.max(2)));
    let n_layers = rng.random_range(1..=family.max_layers.max(1));
    let target = rng.random_range(0..k);
    let out_of_hypothesis = rng.random::<f64>() < family.out_of_hypothesis_rate;

    let mut kappa: Vec<f64> = if family.equal_kappa {
        vec![1.0; k]
    } else {
        let (lo, hi) = family.kappa_range;
        (0..k).map(|_| rng.random_range(lo..=hi)).collect()
    };
    let max_j = (0..k)
        .max_by(|&a, &b| kappa[a].total_cmp(&kappa[b]))
        .unwrap_or(0);
    if out_of_hypothesis {
        let other = (target + 1 + rng.random_range(0..k - 1)) % k;
        let top = kappa[max_j];
        kappa[target] = top * 0.5;
        kappa[other] = top;
    } else {
        kappa.swap(target, max_j);
    }

    let mut alpha: Vec<f64> = (0..k)
        .map(|_| rng.random_range(0.0..2.0 / k as f64))
        .collect();
    let arg = (0..k)
        .max_by(|&a, &b| alpha[a].total_cmp(&alpha[b]))
        .unwrap_or(0);
    alpha.swap(target, arg);
    alpha[target] += 1e-3;

    let biases: Vec<f64> = (0..k)
        .map(|_| family.bias_scale * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let model = TheoryModel::new(k, n_layers)
        .with_value_gains(kappa.clone())
        .and_then(|m| m.with_biases(biases))
        .expect("generated parameters are valid")
        .rotated(seed ^ index.rotate_left(17));

    let kappa_t = kappa[target];
    let in_hypothesis = kappa.iter().all(|&kj| kappa_t >= kj)
        && (0..k).all(|j| j == target || alpha[target] > alpha[j]);
    MonotonicityTrial {
        model,
        alpha_bar: alpha,
        target,
        in_hypothesis,
    }
}

/// Checks the three monotonicity inequalities on `trials` seeded configs.
pub fn verify_monotonicity(
    family: &MonotonicityFamily,
    trials: usize,
    seed: u64,
) -> MonotonicityReport {
    let mut report = MonotonicityReport {
        trials,
        in_hypothesis: 0,
        out_of_hypothesis: 0,
        violations_a: 0,
        violations_b: 0,
        violations_c: 0,
        out_of_hypothesis_c_failures: 0,
    };
    for index in 0..trials as u64 {
        let trial = monotonicity_trial(family, seed, index);
        let t = trial.target;
        let grad = attention_gradient(&trial.model, &trial.alpha_bar, t)
            .expect("generated attention is valid");
        if !(grad[t] > 0.0) {
            report.violations_a += 1;
        }
        if grad.iter().enumerate().any(|(j, g)| j != t && !(*g <= 0.0)) {
            report.violations_b += 1;
        }
        let c_holds = grad
            .iter()
            .enumerate()
            .all(|(j, g)| j == t || grad[t] > g.abs());
        if trial.in_hypothesis {
            report.in_hypothesis += 1;
            if !c_holds {
                report.violations_c += 1;
            }
        } else {
            report.out_of_hypothesis += 1;
            if !c_holds {
                report.out_of_hypothesis_c_failures += 1;
            }
        }
    }
    report
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientCheckReport {
    pub trials: usize,
    pub step: f64,
    pub tolerance: f64,
    /// `max_j |g_j - fd_j| / max_j |g_j|`, worst over trials.
    pub max_relative_error: f64,
    pub failures: usize,
}

/// Closed-form gradient versus central differences on seeded configs.
pub fn gradient_check(trials: usize, seed: u64, step: f64, tolerance: f64) -> GradientCheckReport {
    let family = MonotonicityFamily {
        k_min: 2,
        out_of_hypothesis_rate: 0.5,
        ..Default::default()
    };
    let mut worst = 0.0f64;
    let mut failures = 0;
    for index in 0..trials as u64 {
        let trial = monotonicity_trial(&family, seed, index);
        let exact = attention_gradient(&trial.model, &trial.alpha_bar, trial.target)
            .expect("generated attention is valid");
        let fd = finite_difference_gradient(&trial.model, &trial.alpha_bar, trial.target, step);
        let err = relative_error(&exact, &fd);
        worst = worst.max(err);
        if !(err <= tolerance) {
            failures += 1;
        }
    }
    GradientCheckReport {
        trials,
        step,
        tolerance,
        max_relative_error: worst,
        failures,
    }
}

/// `max |a - b| / max |a|`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let scale = a.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let diff = a
        .iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}

/// Expected `P(y_target)` with the target document placed at each slot.
///
/// Every trial draws one set of slot attentions from the generator (shared by
/// all placements), averages them over layers, puts document `target` at the
/// slot under test and the remaining documents in the other slots in index
/// order, and evaluates the model.
pub fn placement_sweep(
    model: &TheoryModel,
    params: &SyntheticBasinParams,
    target: usize,
    trials: usize,
) -> Result<Vec<f64>> {
    params.validate()?;
    let k = params.k;
    if k < 3 {
        return Err(Error::invalid(
            "placement sweep",
            format!("need k >= 3, got {k}"),
        ));
    }
    if model.k != k {
        return Err(Error::Shape(format!(
            "model has {} documents, generator {k} slots",
            model.k
        )));
    }
    if target >= k {
        return Err(Error::invalid(
            "target",
            format!("{target} outside [0, {k})"),
        ));
    }
    if trials == 0 {
        return Err(Error::invalid("placement sweep", "trials must be >= 1"));
    }
    let mut curve = vec![0.0; k];
    for trial in 0..trials {
        let mut rng = rng_for(params.seed, trial as u64);
        let draw = params.draw_slot_attention(&mut rng);
        let slot_alpha = layer_mean(&draw);
        for (slot, acc) in curve.iter_mut().enumerate() {
            let mut doc_alpha = vec![0.0; k];
            doc_alpha[target] = slot_alpha[slot];
            let others = (0..k).filter(|&d| d != target);
            let free = (0..k).filter(|&s| s != slot);
            for (doc, s) in others.zip(free) {
                doc_alpha[doc] = slot_alpha[s];
            }
            *acc += answer_distribution(model, &doc_alpha)?[target];
        }
    }
    curve.iter_mut().for_each(|v| *v /= trials as f64);
    Ok(curve)
}

/// Mean over the outer (layer) axis.
pub fn layer_mean(values: &[Vec<f64>]) -> Vec<f64> {
    let k = values.first().map_or(0, Vec::len);
    let mut out = vec![0.0; k];
    for row in values {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|v| *v /= values.len() as f64);
    out
}
