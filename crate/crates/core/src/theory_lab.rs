//! Monte Carlo checks of the probabilistic improvement guarantees on random
//! component ensembles.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::error::{Error, Result};
use crate::linear_solver::{self, mse};
use crate::rng;
use crate::scaled_activation::{construct_wrapper, construct_wrapper_with, verify_margin, GammaRule};

/// Strict-improvement slack separating "less" from "equal".
pub const STRICT_SLACK: f64 = 1e-12;
/// Below this many samples the high-dimension arguments are only indicative.
pub const LARGE_N: usize = 100;
/// Resamples a single trial may spend on independence or perfect-component rejections.
const RESAMPLES_PER_TRIAL: usize = 100;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrialSpec {
    pub n: usize,
    pub k: usize,
    pub trials: usize,
    pub seed: u64,
    /// Standard deviation of the noise separating each component from `y`.
    pub component_noise: f64,
    /// Candidate values of the angle constant; geometric grid when empty.
    pub eta_probe: Vec<f64>,
}

impl Default for TrialSpec {
    fn default() -> Self {
        Self {
            n: 400,
            k: 3,
            trials: 1000,
            seed: 0,
            component_noise: 1.0,
            eta_probe: Vec::new(),
        }
    }
}

impl TrialSpec {
    pub fn validate(&self) -> Result<()> {
        if self.trials < 100 {
            return Err(Error::Config(format!("trials = {} is below the minimum of 100", self.trials)));
        }
        if self.n < 4 {
            return Err(Error::Config(format!("n = {} is below the minimum of 4", self.n)));
        }
        if !(self.component_noise.is_finite() && self.component_noise > 0.0) {
            return Err(Error::Config("component_noise must be positive".into()));
        }
        if self.eta_probe.iter().any(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::Config("eta_probe values must be positive".into()));
        }
        Ok(())
    }

    fn probe_grid(&self) -> Vec<f64> {
        if self.eta_probe.is_empty() {
            // 10^(-3) .. 10^2 in steps of 10^(1/20)
            (-60..=40).map(|i| 10f64.powf(i as f64 / 20.0)).collect()
        } else {
            let mut g = self.eta_probe.clone();
            g.sort_by(f64::total_cmp);
            g
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub claim: String,
    pub n: usize,
    pub k: usize,
    pub trials: usize,
    pub successes: usize,
    pub empirical_rate: f64,
    pub paper_bound: f64,
    /// Wald 95% interval of the empirical rate, clipped to [0, 1].
    pub ci95: [f64; 2],
    pub satisfied: bool,
    /// Draws rejected for violating linear independence or no-perfect-component.
    pub rejected: usize,
    pub large_n_required: bool,
    /// Angle constant estimated on the pilot run (orthogonality only).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub estimated_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
}

impl BoundReport {
    fn new(claim: &str, spec: &TrialSpec, successes: usize, rejected: usize, bound: f64) -> Self {
        let t = spec.trials as f64;
        let p = successes as f64 / t;
        let half = 1.96 * (p * (1.0 - p) / t).sqrt();
        Self {
            claim: claim.to_string(),
            n: spec.n,
            k: spec.k,
            trials: spec.trials,
            successes,
            empirical_rate: p,
            paper_bound: bound,
            ci95: [(p - half).max(0.0), (p + half).min(1.0)],
            satisfied: p >= bound - half,
            rejected,
            large_n_required: spec.n < LARGE_N,
            estimated_c: None,
            eta: None,
        }
    }

    pub fn half_width(&self) -> f64 {
        0.5 * (self.ci95[1] - self.ci95[0])
    }
}

fn gaussian(r: &mut rng::Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.sample(StandardNormal)).collect()
}

fn near(y: &[f64], noise: f64, r: &mut rng::Rng) -> Vec<f64> {
    y.iter().map(|v| v + noise * r.sample::<f64, _>(StandardNormal)).collect()
}

/// Draws `count` components around `y` together with `fixed`, redrawing until
/// the set passes the independence and no-perfect-component checks.
/// Returns the fresh components and the number of rejected draws.
fn draw_components(
    y: &[f64],
    fixed: &[Vec<f64>],
    count: usize,
    noise: f64,
    r: &mut rng::Rng,
) -> Result<(Vec<Vec<f64>>, usize)> {
    for attempt in 0..=RESAMPLES_PER_TRIAL {
        let fresh: Vec<Vec<f64>> = (0..count).map(|_| near(y, noise, r)).collect();
        let all: Vec<Vec<f64>> = fixed.iter().cloned().chain(fresh.iter().cloned()).collect();
        if linear_solver::check_assumptions(&all, y)?.a1_a2_hold() {
            return Ok((fresh, attempt));
        }
    }
    Err(Error::Degenerate(format!(
        "{RESAMPLES_PER_TRIAL} consecutive draws violated independence or no-perfect-component"
    )))
}

fn run_trials<T: Send>(spec: &TrialSpec, stream: u64, trial: impl Fn(&mut rng::Rng) -> Result<T> + Sync) -> Result<Vec<T>> {
    (0..spec.trials)
        .into_par_iter()
        .map(|t| {
            let mut r = rng::seeded(rng::derive(rng::derive(spec.seed, stream), t as u64));
            trial(&mut r)
        })
        .collect()
}

fn warn_budget(spec: &TrialSpec) {
    let bound = 2.0 * (spec.n as f64).sqrt() - 1.0;
    if spec.k as f64 >= bound {
        log::warn!("K = {} is not below 2 sqrt(N) - 1 = {bound:.3}; the bound is vacuous", spec.k);
    }
}

/// Whether the angle between `u` and `v` is within `eta` of a right angle.
pub fn within_eta(u: &[f64], v: &[f64], eta: f64) -> bool {
    let dot: f64 = u.iter().zip(v).map(|(a, b)| a * b).sum();
    let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
    let angle = (dot / (nu * nv)).clamp(-1.0, 1.0).acos();
    (angle - std::f64::consts::FRAC_PI_2).abs() <= eta
}

/// `acos(1 - c / sqrt(N))`, saturating at a right angle.
pub fn eta_for(c: f64, n: usize) -> f64 {
    (1.0 - c / (n as f64).sqrt()).clamp(-1.0, 1.0).acos()
}

/// Random unit directions against a fixed one: estimates the smallest grid
/// constant `c` for which the near-orthogonal rate reaches `1 - 1/sqrt(N)` on
/// a pilot run, then measures the rate on fresh draws.
pub fn verify_orthogonality(spec: &TrialSpec) -> Result<BoundReport> {
    spec.validate()?;
    let n = spec.n;
    let bound = 1.0 - 1.0 / (n as f64).sqrt();
    let u = gaussian(&mut rng::seeded(rng::derive(spec.seed, 0)), n);
    let angle_gap = |r: &mut rng::Rng| -> Result<f64> {
        let v = gaussian(r, n);
        let dot: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();
        let nu = u.iter().map(|a| a * a).sum::<f64>().sqrt();
        let nv = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        Ok(((dot / (nu * nv)).clamp(-1.0, 1.0).acos() - std::f64::consts::FRAC_PI_2).abs())
    };
    let pilot = run_trials(spec, 1, angle_gap)?;
    let grid = spec.probe_grid();
    let c = grid
        .iter()
        .copied()
        .find(|&c| {
            let eta = eta_for(c, n);
            pilot.iter().filter(|g| **g <= eta).count() as f64 >= bound * pilot.len() as f64
        })
        .unwrap_or(*grid.last().expect("grid is non-empty"));
    let eta = eta_for(c, n);
    let gaps = run_trials(spec, 2, angle_gap)?;
    let hits = gaps.iter().filter(|g| **g <= eta).count();
    let mut report = BoundReport::new("orthogonality", spec, hits, 0, bound);
    report.estimated_c = Some(c);
    report.eta = Some(eta);
    Ok(report)
}

/// Whether the closed-form combiner strictly beats every column of
/// `[1, f_1, .., f_K]`.
pub fn strict_improvement(outputs: &[Vec<f64>], labels: &[f64]) -> Result<bool> {
    let fit = linear_solver::fit(outputs, labels, 0.0)?;
    let best = fit.component_losses.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(fit.composite_loss < best - STRICT_SLACK)
}

/// Rate at which the optimal linear combination of K random components plus a
/// bias strictly beats the best of them, against `1 - (K+1)/sqrt(N)`.
pub fn verify_strict_improvement(spec: &TrialSpec) -> Result<BoundReport> {
    spec.validate()?;
    warn_budget(spec);
    let outcomes = run_trials(spec, 3, |r| {
        let y = gaussian(r, spec.n);
        let (fs, rejected) = draw_components(&y, &[], spec.k, spec.component_noise, r)?;
        Ok((strict_improvement(&fs, &y)?, rejected))
    })?;
    let bound = 1.0 - (spec.k as f64 + 1.0) / (spec.n as f64).sqrt();
    Ok(tally("theorem1", spec, &outcomes, bound))
}

fn tally(claim: &str, spec: &TrialSpec, outcomes: &[(bool, usize)], bound: f64) -> BoundReport {
    let hits = outcomes.iter().filter(|o| o.0).count();
    let rejected = outcomes.iter().map(|o| o.1).sum();
    BoundReport::new(claim, spec, hits, rejected, bound)
}

/// Best single loss of `f0, f1` and the loss of the optimal `a0 f0 + a1 f1`
/// (no bias), both as sums of squares.
pub fn pair_improvement(f0: &[f64], f1: &[f64], labels: &[f64]) -> Result<(f64, f64)> {
    let (g, r) = linear_solver::gram_of_columns(&[f0, f1], labels);
    let det = g[0] * g[3] - g[1] * g[2];
    if det.abs() <= f64::EPSILON * (g[0] * g[3]).abs() {
        return Err(Error::SingularGram {
            condition: f64::INFINITY,
        });
    }
    let a0 = (g[3] * r[0] - g[1] * r[1]) / det;
    let a1 = (g[0] * r[1] - g[2] * r[0]) / det;
    let sse = |pred: &mut dyn Iterator<Item = f64>| pred.zip(labels).map(|(p, y)| (p - y) * (p - y)).sum::<f64>();
    let single = sse(&mut f0.iter().copied()).min(sse(&mut f1.iter().copied()));
    let combined = sse(&mut f0.iter().zip(f1).map(|(a, b)| a0 * a + a1 * b));
    Ok((single, combined))
}

/// Two components without a bias: rate at which the optimal pair beats the
/// better single one, against `1 - 2/sqrt(N)`.
pub fn verify_add_width(spec: &TrialSpec) -> Result<BoundReport> {
    spec.validate()?;
    let outcomes = run_trials(spec, 4, |r| {
        let y = gaussian(r, spec.n);
        let (fs, rejected) = draw_components(&y, &[], 2, spec.component_noise, r)?;
        let (single, combined) = pair_improvement(&fs[0], &fs[1], &y)?;
        Ok((combined < single - STRICT_SLACK * spec.n as f64, rejected))
    })?;
    let bound = 1.0 - 2.0 / (spec.n as f64).sqrt();
    let mut spec2 = spec.clone();
    spec2.k = 2;
    Ok(tally("prop1", &spec2, &outcomes, bound))
}

/// Losses along one depth chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainOutcome {
    /// Loss of the wrapped combiner after each layer.
    pub layer_losses: Vec<f64>,
    /// Smallest loss among all components and the bias.
    pub best_component_loss: f64,
    /// Every layer improved on its inputs and the last beats every component.
    pub success: bool,
}

/// One layer: closed-form combiner over `inputs`, then the scaled sandwich
/// with the margin-derived ε. `None` when the combiner cannot beat its best
/// input.
fn wrapped_layer(inputs: &[Vec<f64>], labels: &[f64], activation: Activation) -> Result<Option<Vec<f64>>> {
    let fit = linear_solver::fit(inputs, labels, 0.0)?;
    let best = fit.component_losses.iter().copied().fold(f64::INFINITY, f64::min);
    if fit.composite_loss >= best - STRICT_SLACK {
        return Ok(None);
    }
    let g = linear_solver::combine_outputs(&fit.theta, inputs);
    let m2 = g.iter().zip(labels).fold(0.0f64, |a, (p, y)| a.max((p - y).abs()));
    let needed = (best - fit.composite_loss) / (4.0 * labels.len() as f64 * (2.0 * m2 + 1.0));
    let w = construct_wrapper(&g, activation, needed.min(1.0))?;
    let check = verify_margin(&w, fit.composite_loss, best, &g, labels);
    if !check.ok {
        return Ok(None);
    }
    Ok(Some(g.iter().map(|v| w.apply(*v)).collect()))
}

/// Grows a chain: layer 1 combines `first`; layer `l` combines the previous
/// output with `fresh[l - 2]`.
pub fn chain_trial(labels: &[f64], first: &[Vec<f64>], fresh: &[Vec<Vec<f64>>], activation: Activation) -> Result<ChainOutcome> {
    let loss_min = |fs: &[Vec<f64>]| linear_solver::component_losses(fs, labels).into_iter().fold(f64::INFINITY, f64::min);
    let mut best_component_loss = loss_min(first);
    let mut layer_losses = Vec::new();
    let mut prev_best = best_component_loss;
    let mut success = true;
    let mut current: Option<Vec<f64>> = None;
    for layer in 0..=fresh.len() {
        let inputs: Vec<Vec<f64>> = match &current {
            None => first.to_vec(),
            Some(g) => std::iter::once(g.clone()).chain(fresh[layer - 1].iter().cloned()).collect(),
        };
        if layer > 0 {
            best_component_loss = best_component_loss.min(loss_min(&fresh[layer - 1]));
        }
        match wrapped_layer(&inputs, labels, activation)? {
            Some(g) => {
                let loss = mse(&g, labels);
                success &= loss < prev_best;
                prev_best = loss;
                layer_losses.push(loss);
                current = Some(g);
            }
            None => {
                success = false;
                break;
            }
        }
    }
    success &= layer_losses.last().is_some_and(|l| *l < best_component_loss);
    Ok(ChainOutcome {
        layer_losses,
        best_component_loss,
        success,
    })
}

/// Depth-`h` chains with logistic sandwiches: layer 1 merges K random
/// components, each later layer merges the previous output with K-1 fresh
/// ones. Counts chains whose loss drops at every layer and ends below every
/// component, against `(1 - (K+1)/sqrt(N))^h`.
pub fn verify_depth_compounding(spec: &TrialSpec, h: usize) -> Result<BoundReport> {
    spec.validate()?;
    if h == 0 {
        return Err(Error::Config("layer count must be at least 1".into()));
    }
    if spec.k == 0 {
        return Err(Error::Config("depth chains need at least one component per layer".into()));
    }
    warn_budget(spec);
    let outcomes = run_trials(spec, 5, |r| {
        let y = gaussian(r, spec.n);
        let (first, mut rejected) = draw_components(&y, &[], spec.k, spec.component_noise, r)?;
        let fresh: Vec<Vec<Vec<f64>>> = (1..h)
            .map(|_| {
                let (f, rej) = draw_components(&y, &[], spec.k - 1, spec.component_noise, r)?;
                rejected += rej;
                Ok(f)
            })
            .collect::<Result<_>>()?;
        Ok((chain_trial(&y, &first, &fresh, Activation::Logistic)?.success, rejected))
    })?;
    let bound = (1.0 - (spec.k as f64 + 1.0) / (spec.n as f64).sqrt()).powi(h as i32);
    Ok(tally("theorem2", spec, &outcomes, bound))
}

/// Pointwise accuracy of the scaled sandwich around the closed-form combiner.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaledActivationReport {
    pub activation: Activation,
    pub epsilon: f64,
    pub trials: usize,
    /// Largest `|g_ε - g*|` over every training point of every trial.
    pub max_error: f64,
    /// Largest analytic error bound `m0 m1 γ²` over the trials.
    pub max_bound: f64,
    pub max_abs_combiner: f64,
    pub within_epsilon: bool,
    /// Trials where the margin check approved ε.
    pub margin_approved: usize,
    /// Approved trials where the wrapped combiner beat every component.
    pub margin_confirmed: usize,
    pub satisfied: bool,
}

/// Wraps the closed-form combiner of random components with labels of size
/// `label_scale` and measures `|g_ε - g*|` at every training point.
pub fn verify_scaled_activation(
    spec: &TrialSpec,
    activation: Activation,
    epsilon: f64,
    rule: GammaRule,
    label_scale: f64,
) -> Result<ScaledActivationReport> {
    spec.validate()?;
    if !(label_scale.is_finite() && label_scale > 0.0) {
        return Err(Error::Config("label scale must be positive".into()));
    }
    let outcomes = run_trials(spec, 6, |r| {
        let y: Vec<f64> = gaussian(r, spec.n).into_iter().map(|v| v * label_scale).collect();
        let (fs, _) = draw_components(&y, &[], spec.k, spec.component_noise * label_scale, r)?;
        let fit = linear_solver::fit(&fs, &y, 0.0)?;
        let g = linear_solver::combine_outputs(&fit.theta, &fs);
        let w = construct_wrapper_with(&g, activation, epsilon, rule)?;
        let wrapped: Vec<f64> = g.iter().map(|v| w.apply(*v)).collect();
        let err = g.iter().zip(&wrapped).fold(0.0f64, |a, (p, q)| a.max((p - q).abs()));
        let best = fit.component_losses.iter().copied().fold(f64::INFINITY, f64::min);
        let check = verify_margin(&w, fit.composite_loss, best, &g, &y);
        let confirmed = check.ok && mse(&wrapped, &y) < best;
        let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        Ok((err, w.error_bound(), gmax, check.ok, confirmed))
    })?;
    let max_error = outcomes.iter().map(|o| o.0).fold(0.0, f64::max);
    let margin_approved = outcomes.iter().filter(|o| o.3).count();
    let margin_confirmed = outcomes.iter().filter(|o| o.4).count();
    let within_epsilon = max_error < epsilon;
    Ok(ScaledActivationReport {
        activation,
        epsilon,
        trials: spec.trials,
        max_error,
        max_bound: outcomes.iter().map(|o| o.1).fold(0.0, f64::max),
        max_abs_combiner: outcomes.iter().map(|o| o.2).fold(0.0, f64::max),
        within_epsilon,
        margin_approved,
        margin_confirmed,
        satisfied: within_epsilon && margin_confirmed == margin_approved,
    })
}

/// One random instance: labels and `k` components drawn as in the trials.
pub fn sample_instance(spec: &TrialSpec, trial: u64) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut r = rng::seeded(rng::derive(rng::derive(spec.seed, 7), trial));
    let y = gaussian(&mut r, spec.n);
    let (fs, _) = draw_components(&y, &[], spec.k, spec.component_noise, &mut r)?;
    Ok((y, fs))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(n: usize, k: usize, trials: usize) -> TrialSpec {
        TrialSpec {
            n,
            k,
            trials,
            seed: 17,
            ..TrialSpec::default()
        }
    }

    #[test]
    fn satisfied_uses_one_sided_interval() {
        let s = spec(100, 1, 100);
        let r = BoundReport::new("x", &s, 78, 0, 0.8);
        let half = 1.96 * (0.78f64 * 0.22 / 100.0).sqrt();
        assert!((r.half_width() - half).abs() < 1e-15);
        assert!(r.satisfied);
        assert!(!BoundReport::new("x", &s, 70, 0, 0.8).satisfied);
    }

    #[test]
    fn identical_vectors_are_not_orthogonal() {
        let u = [1.0, 2.0, 3.0];
        assert!(!within_eta(&u, &u, 0.1));
        assert!(within_eta(&[1.0, 0.0], &[0.0, 1.0], 0.0));
    }

    #[test]
    fn orthogonality_rate_in_high_dimension() {
        let r = verify_orthogonality(&spec(10_000, 0, 2000)).unwrap();
        assert!(r.satisfied, "{r:?}");
        assert!((r.paper_bound - 0.99).abs() < 1e-12);
        assert!(!r.large_n_required);
        assert!(verify_orthogonality(&spec(4, 0, 200)).unwrap().large_n_required);
    }

    #[test]
    fn theorem1_small_run_and_determinism() {
        let s = spec(400, 3, 200);
        let a = verify_strict_improvement(&s).unwrap();
        assert!((a.paper_bound - 0.8).abs() < 1e-12);
        assert!(a.satisfied && a.empirical_rate > 0.95);
        assert_eq!(a, verify_strict_improvement(&s).unwrap());
        let close = TrialSpec {
            component_noise: 1e-3,
            ..s
        };
        assert!(verify_strict_improvement(&close).unwrap().empirical_rate > 0.95);
    }

    #[test]
    fn bias_only_matches_scalar_computation() {
        let mut r = rng::seeded(2);
        for _ in 0..50 {
            let y: Vec<f64> = gaussian(&mut r, 6).iter().map(|v| v + 1.0).collect();
            let mean = y.iter().sum::<f64>() / 6.0;
            let at = |c: f64| y.iter().map(|v| (v - c) * (v - c)).sum::<f64>() / 6.0;
            assert_eq!(strict_improvement(&[], &y).unwrap(), at(mean) < at(1.0) - STRICT_SLACK);
        }
        assert!(!strict_improvement(&[], &[1.0; 5]).unwrap());
    }

    #[test]
    fn perfect_component_rejected() {
        let mut r = rng::seeded(3);
        let y = gaussian(&mut r, 20);
        assert!(draw_components(&y, &[y.clone()], 1, 1.0, &mut r).is_err());
    }

    #[test]
    fn pair_boundary_cases() {
        let y = [1.0, 2.0, -1.0, 0.5];
        let f1 = [0.5, 1.0, 0.0, 1.0];
        let f0: Vec<f64> = y.iter().zip(&f1).map(|(a, b)| a - b).collect();
        let (_, combined) = pair_improvement(&f0, &f1, &y).unwrap();
        assert!(combined < 1e-24);

        // f1 already optimal on its own span, f0 orthogonal to f1 and to the residual
        let f1 = [1.0, 1.0, 0.0, 0.0];
        let y = [1.0, 1.0, 1.0, -1.0];
        let f0 = [1.0, -1.0, 0.0, 0.0];
        let (single, combined) = pair_improvement(&f0, &f1, &y).unwrap();
        assert!(!(combined < single - STRICT_SLACK));
    }

    #[test]
    fn prop1_rate() {
        let r = verify_add_width(&spec(100, 2, 300)).unwrap();
        assert!((r.paper_bound - 0.8).abs() < 1e-12);
        assert!(r.satisfied, "{r:?}");
    }

    #[test]
    fn chain_of_one_layer_is_theorem1() {
        let mut r = rng::seeded(9);
        for _ in 0..10 {
            let y = gaussian(&mut r, 100);
            let fs: Vec<Vec<f64>> = (0..3).map(|_| near(&y, 1.0, &mut r)).collect();
            let c = chain_trial(&y, &fs, &[], Activation::Logistic).unwrap();
            assert_eq!(c.success, strict_improvement(&fs, &y).unwrap());
            assert_eq!(c.layer_losses.len(), 1);
        }
    }

    #[test]
    fn perfect_first_layer_breaks_the_chain() {
        let mut r = rng::seeded(4);
        let y = gaussian(&mut r, 50);
        let first = vec![y.clone(), near(&y, 1.0, &mut r)];
        let fresh = vec![vec![near(&y, 1.0, &mut r)]];
        let c = chain_trial(&y, &first, &fresh, Activation::Logistic).unwrap();
        assert!(!c.success);
    }

    #[test]
    fn depth_three_small_run() {
        let r = verify_depth_compounding(&spec(400, 3, 100), 3).unwrap();
        assert!((r.paper_bound - 0.512).abs() < 1e-12);
        assert!(r.satisfied, "{r:?}");
    }

    #[test]
    fn scaled_activation_within_epsilon() {
        for eps in [1.0, 0.01] {
            let r = verify_scaled_activation(
                &spec(400, 3, 100),
                Activation::Logistic,
                eps,
                GammaRule::Fixed(1e-5 * eps),
                200.0,
            )
            .unwrap();
            assert!(r.max_abs_combiner < 1000.0);
            assert!(r.satisfied, "{r:?}");
        }
        let r = verify_scaled_activation(&spec(100, 2, 100), Activation::Tanh, 0.1, GammaRule::Procedure, 1.0).unwrap();
        assert!(r.satisfied, "{r:?}");
    }

    #[test]
    fn spec_validation() {
        assert!(spec(400, 3, 99).validate().is_err());
        assert!(spec(3, 1, 100).validate().is_err());
    }
}
