//! Coupled continuous-time random walk model of the annual maximum
//! temperature series.
//!
//! Each year-over-year change is the product of a normally distributed jump
//! size and a gamma distributed waiting time, T_i = T_{i-1} + delta_i * w_i.
//! The waiting times are latent; inference augments the posterior with one
//! positive latent per increment (with the 1/w change-of-variables factor),
//! while model comparison uses the marginal increment density obtained by
//! integrating the waiting time out numerically.

use rand_distr::{Distribution, Gamma, Normal};

use crate::error::{Error, Result};
use crate::mcmc::{run_chains, McmcConfig, PosteriorDraws, TargetDensity, Transform};
use crate::rng::substream_rng;
use crate::series::{increments, FittedSeries, IncrementSeries, NormalizedSeries};
use crate::stats::{self, ln_gamma_fn, ln_half_normal_pdf, log_sum_exp, NormalPrior, LN_2PI};

/// Global parameters of the jump-wait process.
#[derive(Clone, Copy, Debug)]
pub struct CtrwParams {
    /// Mean jump size (degC per unit wait).
    pub jump_mean: f64,
    /// Jump size standard deviation, > 0.
    pub jump_sd: f64,
    /// Waiting-time gamma shape, > 0.
    pub wait_shape: f64,
    /// Waiting-time gamma rate, > 0.
    pub wait_rate: f64,
}

impl CtrwParams {
    pub fn new(jump_mean: f64, jump_sd: f64, wait_shape: f64, wait_rate: f64) -> Result<Self> {
        let p = Self { jump_mean, jump_sd, wait_shape, wait_rate };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = self.jump_mean.is_finite()
            && self.jump_sd.is_finite()
            && self.wait_shape.is_finite()
            && self.wait_rate.is_finite();
        if !all_finite || self.jump_sd <= 0.0 || self.wait_shape <= 0.0 || self.wait_rate <= 0.0 {
            return Err(Error::Validation(format!(
                "jump sd, wait shape and wait rate must be positive and finite: {self:?}"
            )));
        }
        Ok(())
    }

    /// Expected increment E[delta * w] = jump_mean * shape / rate.
    pub fn mean_increment(&self) -> f64 {
        self.jump_mean * self.wait_shape / self.wait_rate
    }

    /// Variance of the increment, from independence of jump and wait:
    /// (mu^2 + tau^2) E[w^2] - mu^2 E[w]^2.
    pub fn increment_variance(&self) -> f64 {
        let ew2 = self.wait_shape * (self.wait_shape + 1.0) / self.wait_rate.powi(2);
        let ew = self.wait_shape / self.wait_rate;
        (self.jump_mean.powi(2) + self.jump_sd.powi(2)) * ew2 - (self.jump_mean * ew).powi(2)
    }
}

/// Priors for the four global parameters. The shape and rate priors act on
/// the log scale.
#[derive(Clone, Copy, Debug)]
pub struct CtrwPriors {
    pub jump_mean: NormalPrior,
    /// Half-normal scale for the jump sd.
    pub jump_sd_scale: f64,
    pub log_wait_shape: NormalPrior,
    pub log_wait_rate: NormalPrior,
}

impl Default for CtrwPriors {
    fn default() -> Self {
        Self {
            jump_mean: NormalPrior::new(0.0, 10.0),
            jump_sd_scale: 5.0,
            log_wait_shape: NormalPrior::new(0.0, 1.5),
            log_wait_rate: NormalPrior::new(0.0, 1.5),
        }
    }
}

impl CtrwPriors {
    fn ln_density(&self, p: &CtrwParams, fix_mean_wait: bool) -> f64 {
        // shape/rate priors are normal on the log; dividing by the value
        // converts them to densities over the constrained scale.
        let mut lp = self.jump_mean.ln_pdf(p.jump_mean)
            + ln_half_normal_pdf(p.jump_sd, self.jump_sd_scale)
            + self.log_wait_shape.ln_pdf(p.wait_shape.ln())
            - p.wait_shape.ln();
        if !fix_mean_wait {
            lp += self.log_wait_rate.ln_pdf(p.wait_rate.ln()) - p.wait_rate.ln();
        }
        lp
    }
}

/// Latent waiting times, one per increment, all strictly positive.
#[derive(Clone, Debug)]
pub struct CtrwLatents(pub Vec<f64>);

/// Augmented log likelihood: for each increment,
/// log N(delta_i / w_i; mu, tau^2) - log w_i + log Gamma(w_i; alpha, beta).
/// Returns -inf outside the support.
pub fn augmented_loglik(
    params: &CtrwParams,
    latents: &CtrwLatents,
    deltas: &IncrementSeries,
) -> Result<f64> {
    if latents.0.len() != deltas.len() {
        return Err(Error::Shape(format!(
            "{} latent waits for {} increments",
            latents.0.len(),
            deltas.len()
        )));
    }
    if params.validate().is_err() {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(augmented_loglik_unchecked(
        params.jump_mean,
        params.jump_sd,
        params.wait_shape,
        params.wait_rate,
        &latents.0,
        &deltas.deltas,
    ))
}

fn augmented_loglik_unchecked(
    mu: f64,
    tau: f64,
    alpha: f64,
    beta: f64,
    waits: &[f64],
    deltas: &[f64],
) -> f64 {
    let nconst = -tau.ln() - 0.5 * LN_2PI;
    let gconst = alpha * beta.ln() - ln_gamma_fn(alpha);
    let mut acc = 0.0;
    for (&w, &d) in waits.iter().zip(deltas) {
        if w <= 0.0 || !w.is_finite() {
            return f64::NEG_INFINITY;
        }
        let lw = w.ln();
        let z = (d / w - mu) / tau;
        acc += nconst - 0.5 * z * z - lw + gconst + (alpha - 1.0) * lw - beta * w;
    }
    acc
}

/// Augmented log likelihood plus log priors.
pub fn log_joint(
    params: &CtrwParams,
    latents: &CtrwLatents,
    deltas: &IncrementSeries,
    priors: &CtrwPriors,
) -> Result<f64> {
    let ll = augmented_loglik(params, latents, deltas)?;
    if !ll.is_finite() {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(ll + priors.ln_density(params, false))
}

/// Quadrature specification for the marginal increment density.
#[derive(Clone, Copy, Debug)]
pub struct QuadratureRule {
    /// Simpson node count over the waiting-time bracket. Forced odd.
    pub nodes: usize,
}

impl Default for QuadratureRule {
    fn default() -> Self {
        Self { nodes: 401 }
    }
}

impl QuadratureRule {
    fn node_count(&self) -> Result<usize> {
        if self.nodes < 3 {
            return Err(Error::Quadrature(format!(
                "need at least 3 quadrature nodes, got {}",
                self.nodes
            )));
        }
        Ok(if self.nodes % 2 == 0 { self.nodes + 1 } else { self.nodes })
    }
}

/// Log marginal density of one increment,
/// log integral_0^inf (1/w) N(delta/w; mu, tau^2) Gamma(w; alpha, beta) dw,
/// by composite Simpson over the gamma bracket [q(1e-10), q(1-1e-10)] with
/// log-sum-exp accumulation.
pub fn marginal_increment_logpdf(
    delta: f64,
    params: &CtrwParams,
    rule: &QuadratureRule,
) -> Result<f64> {
    params.validate()?;
    let n = rule.node_count()?;
    let lo = stats::gamma_quantile(1e-10, params.wait_shape, params.wait_rate)?;
    let hi = stats::gamma_quantile(1.0 - 1e-10, params.wait_shape, params.wait_rate)?;
    if !(lo >= 0.0 && hi > lo) {
        return Err(Error::Quadrature(format!(
            "bad waiting-time bracket [{lo}, {hi}] for shape={}, rate={}",
            params.wait_shape, params.wait_rate
        )));
    }
    let h = (hi - lo) / (n - 1) as f64;
    let nconst = -params.jump_sd.ln() - 0.5 * LN_2PI;
    let gconst = params.wait_shape * params.wait_rate.ln() - ln_gamma_fn(params.wait_shape);
    let ln4 = 4.0f64.ln();
    let ln2 = 2.0f64.ln();
    let mut terms = Vec::with_capacity(n);
    for i in 0..n {
        let w = lo + i as f64 * h;
        let g = if w > 0.0 {
            let lw = w.ln();
            let z = (delta / w - params.jump_mean) / params.jump_sd;
            nconst - 0.5 * z * z - lw + gconst + (params.wait_shape - 1.0) * lw
                - params.wait_rate * w
        } else {
            f64::NEG_INFINITY
        };
        let lc = if i == 0 || i == n - 1 {
            0.0
        } else if i % 2 == 1 {
            ln4
        } else {
            ln2
        };
        terms.push(lc + g);
    }
    Ok((h / 3.0).ln() + log_sum_exp(&terms))
}

/// Simulates a series of length `n` starting from `t0`, accumulating
/// increments delta_i * w_i. Deterministic per seed.
pub fn simulate(params: &CtrwParams, t0: f64, n: usize, seed: u64) -> Result<Vec<f64>> {
    params.validate()?;
    if n < 2 {
        return Err(Error::Validation(format!("simulation length {n} below 2")));
    }
    let jump = Normal::new(params.jump_mean, params.jump_sd)
        .map_err(|e| Error::Validation(format!("jump distribution: {e}")))?;
    let wait = Gamma::new(params.wait_shape, 1.0 / params.wait_rate)
        .map_err(|e| Error::Validation(format!("wait distribution: {e}")))?;
    let mut rng = substream_rng(seed, 0);
    let mut out = Vec::with_capacity(n);
    let mut level = t0;
    out.push(level);
    for _ in 1..n {
        let delta: f64 = jump.sample(&mut rng);
        let w: f64 = wait.sample(&mut rng);
        level += delta * w;
        out.push(level);
    }
    Ok(out)
}

/// Options for [`fit`].
#[derive(Clone, Copy, Debug, Default)]
pub struct CtrwFitOptions {
    /// Constrain the waiting-time rate to equal the shape, pinning the mean
    /// wait to one. The free model leaves all four parameters unconstrained,
    /// which shares one overall scale between jumps and waits; this variant
    /// makes the parameters identifiable.
    pub fix_mean_wait: bool,
    /// Keep the latent waiting times in the returned draws.
    pub keep_latents: bool,
}

const GLOBAL_NAMES: [&str; 4] = ["mu", "tau", "alpha", "beta"];

/// Fits the model by Metropolis-within-Gibbs: one block per global
/// parameter (log scale for tau, alpha, beta) and one block per latent
/// waiting time (log scale). Returns draws over (mu, tau, alpha, beta);
/// latents are kept only on request.
pub fn fit(
    series: &NormalizedSeries,
    priors: &CtrwPriors,
    config: &McmcConfig,
    options: &CtrwFitOptions,
) -> Result<PosteriorDraws> {
    if series.len() < 3 {
        return Err(Error::Validation(format!(
            "need at least 3 observations to fit, got {}",
            series.len()
        )));
    }
    let deltas = increments(series)?;
    let n_lat = deltas.len();
    let fix = options.fix_mean_wait;
    let n_glob = if fix { 3 } else { 4 };

    let mut names: Vec<String> = GLOBAL_NAMES[..n_glob].iter().map(|s| s.to_string()).collect();
    let mut transforms = vec![Transform::Identity, Transform::Log, Transform::Log];
    if !fix {
        transforms.push(Transform::Log);
    }
    for i in 1..=n_lat {
        names.push(format!("w_{i}"));
        transforms.push(Transform::Log);
    }
    let blocks: Vec<Vec<usize>> = (0..n_glob + n_lat).map(|i| vec![i]).collect();

    let delta_values = deltas.deltas.clone();
    let priors_copy = *priors;
    let log_density = move |x: &[f64]| -> f64 {
        let (mu, tau, alpha) = (x[0], x[1], x[2]);
        let beta = if fix { alpha } else { x[3] };
        let params = CtrwParams { jump_mean: mu, jump_sd: tau, wait_shape: alpha, wait_rate: beta };
        if params.validate().is_err() {
            return f64::NEG_INFINITY;
        }
        let ll = augmented_loglik_unchecked(mu, tau, alpha, beta, &x[n_glob..], &delta_values);
        if !ll.is_finite() {
            return f64::NEG_INFINITY;
        }
        ll + priors_copy.ln_density(&params, fix)
    };

    let target = TargetDensity::new(names, transforms, blocks, &log_density)?;

    let mut init = vec![
        stats::mean(&deltas.deltas),
        stats::sample_sd(&deltas.deltas).max(1e-3),
        1.0,
    ];
    if !fix {
        init.push(1.0);
    }
    init.extend(std::iter::repeat(1.0).take(n_lat));

    let draws = run_chains(&target, &init, config)?;

    if options.keep_latents && !fix {
        return Ok(draws);
    }
    let mut projected = draws.select(&(0..n_glob).collect::<Vec<_>>())?;
    if fix {
        // surface the tied rate as its own column so downstream consumers
        // always see all four parameters
        let alpha_col = 2;
        let d = projected.n_params();
        for chain in &mut projected.chains {
            let rows: Vec<Vec<f64>> = chain
                .chunks_exact(d)
                .map(|row| {
                    let mut r = row.to_vec();
                    r.push(row[alpha_col]);
                    r
                })
                .collect();
            *chain = rows.into_iter().flatten().collect();
        }
        projected.names.push("beta".into());
        projected.transforms.push(Transform::Log);
        if options.keep_latents {
            // re-attach latents after the fabricated beta column
            let full = draws;
            let lat_indices: Vec<usize> = (n_glob..full.n_params()).collect();
            let lat = full.select(&lat_indices)?;
            for (chain, lat_chain) in projected.chains.iter_mut().zip(&lat.chains) {
                let d_new = projected.names.len();
                let rows: Vec<Vec<f64>> = chain
                    .chunks_exact(d_new)
                    .zip(lat_chain.chunks_exact(lat.names.len()))
                    .map(|(row, lrow)| row.iter().chain(lrow).copied().collect())
                    .collect();
                *chain = rows.into_iter().flatten().collect();
            }
            projected.names.extend(lat.names.iter().cloned());
            projected.transforms.extend(lat.transforms.iter().copied());
        }
    }
    Ok(projected)
}

fn param_columns(draws: &PosteriorDraws) -> Result<[usize; 4]> {
    Ok([
        draws.param_index("mu")?,
        draws.param_index("tau")?,
        draws.param_index("alpha")?,
        draws.param_index("beta")?,
    ])
}

fn params_from_row(row: &[f64], cols: &[usize; 4]) -> CtrwParams {
    CtrwParams {
        jump_mean: row[cols[0]],
        jump_sd: row[cols[1]],
        wait_shape: row[cols[2]],
        wait_rate: row[cols[3]],
    }
}

/// Predictive samples drawn per retained posterior draw when forming bands.
pub const PREDICTIVE_SAMPLES_PER_DRAW: usize = 20;

/// One-step-ahead fit: for year i >= 2 the fitted mean is the previous
/// observation plus the posterior mean of E[delta*w], and the 95% band
/// comes from simulated predictive increments added to the previous
/// observation. The first year has no prediction and echoes the data.
pub fn predict_one_step(
    draws: &PosteriorDraws,
    series: &NormalizedSeries,
    seed: u64,
) -> Result<FittedSeries> {
    if draws.total_draws() == 0 {
        return Err(Error::InsufficientDraws("no retained draws to predict from".into()));
    }
    let cols = param_columns(draws)?;
    let n = series.len();

    let mut mean_inc = 0.0;
    for row in draws.rows() {
        mean_inc += params_from_row(row, &cols).mean_increment();
    }
    mean_inc /= draws.total_draws() as f64;

    let mut out = FittedSeries {
        years: (0..n).map(|i| series.year(i)).collect(),
        observed: series.y.clone(),
        fit_mean: Vec::with_capacity(n),
        lo95: Vec::with_capacity(n),
        hi95: Vec::with_capacity(n),
    };
    out.fit_mean.push(series.y[0]);
    out.lo95.push(series.y[0]);
    out.hi95.push(series.y[0]);

    let mut buf = Vec::with_capacity(draws.total_draws() * PREDICTIVE_SAMPLES_PER_DRAW);
    for i in 1..n {
        let prev = series.y[i - 1];
        let mut rng = substream_rng(seed, i as u64);
        buf.clear();
        for row in draws.rows() {
            let p = params_from_row(row, &cols);
            let jump = Normal::new(p.jump_mean, p.jump_sd)
                .map_err(|e| Error::Validation(format!("draw outside support: {e}")))?;
            let wait = Gamma::new(p.wait_shape, 1.0 / p.wait_rate)
                .map_err(|e| Error::Validation(format!("draw outside support: {e}")))?;
            for _ in 0..PREDICTIVE_SAMPLES_PER_DRAW {
                let d: f64 = jump.sample(&mut rng);
                let w: f64 = wait.sample(&mut rng);
                buf.push(prev + d * w);
            }
        }
        buf.sort_by(|a, b| a.partial_cmp(b).expect("non-finite predictive sample"));
        let mean_i = prev + mean_inc;
        out.fit_mean.push(mean_i);
        out.lo95.push(stats::quantile_type7_sorted(&buf, 0.025).min(mean_i));
        out.hi95.push(stats::quantile_type7_sorted(&buf, 0.975).max(mean_i));
    }
    Ok(out)
}

/// Per-observation log marginal likelihood at one parameter point.
pub fn loglik_at_point(
    params: &CtrwParams,
    deltas: &IncrementSeries,
    rule: &QuadratureRule,
) -> Result<Vec<f64>> {
    deltas
        .deltas
        .iter()
        .map(|&d| marginal_increment_logpdf(d, params, rule))
        .collect()
}

/// S x (N-1) matrix of marginal increment log densities, one row per
/// retained draw (chains stacked in order).
pub fn pointwise_loglik(
    draws: &PosteriorDraws,
    deltas: &IncrementSeries,
    rule: &QuadratureRule,
) -> Result<crate::compare::LogLikMatrix> {
    let cols = param_columns(draws)?;
    let s = draws.total_draws();
    let m = deltas.len();
    let mut values = Vec::with_capacity(s * m);
    for (row_idx, row) in draws.rows().enumerate() {
        let p = params_from_row(row, &cols);
        for (i, &d) in deltas.deltas.iter().enumerate() {
            let ll = marginal_increment_logpdf(d, &p, rule).map_err(|e| {
                Error::Quadrature(format!("draw {row_idx}, increment {}: {e}", i + 1))
            })?;
            values.push(ll);
        }
    }
    let labels = (1..=m).map(|i| format!("delta_{i}")).collect();
    crate::compare::LogLikMatrix::new("ctrw".into(), labels, values, s, m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcmc::McmcConfig;
    use crate::stats::ln_normal_pdf;
    use approx::assert_abs_diff_eq;
    use rand::Rng;

    fn test_params() -> CtrwParams {
        CtrwParams::new(0.05, 0.1, 2.0, 2.0).unwrap()
    }

    /// Hand-checkable point: one increment of 0 with unit wait and
    /// standard-normal jumps under Gamma(1,1) waits.
    #[test]
    fn augmented_loglik_hand_value() {
        let params = CtrwParams::new(0.0, 1.0, 1.0, 1.0).unwrap();
        let ll = augmented_loglik(
            &params,
            &CtrwLatents(vec![1.0]),
            &IncrementSeries { deltas: vec![0.0] },
        )
        .unwrap();
        // log phi(0) + log Gamma(1; 1, 1) = -0.9189385 - 1
        assert_abs_diff_eq!(ll, -0.918_938_533_204_672_7 - 1.0, epsilon = 1e-9);
    }

    #[test]
    fn augmented_loglik_scaling_identity() {
        // Scaling both deltas and waits by c leaves the normal terms
        // unchanged; only the Jacobian and gamma terms move.
        let params = test_params();
        let deltas = IncrementSeries { deltas: vec![0.1, -0.2, 0.05] };
        let waits = CtrwLatents(vec![0.7, 1.3, 2.1]);
        let c = 3.7;
        let scaled_deltas = IncrementSeries { deltas: deltas.deltas.iter().map(|d| c * d).collect() };
        let scaled_waits = CtrwLatents(waits.0.iter().map(|w| c * w).collect());

        let base = augmented_loglik(&params, &waits, &deltas).unwrap();
        let scaled = augmented_loglik(&params, &scaled_waits, &scaled_deltas).unwrap();
        let gamma_and_jacobian = |ws: &[f64]| -> f64 {
            ws.iter()
                .map(|&w| {
                    stats::ln_gamma_pdf(w, params.wait_shape, params.wait_rate) - w.ln()
                })
                .sum()
        };
        let expected_shift = gamma_and_jacobian(&scaled_waits.0) - gamma_and_jacobian(&waits.0);
        assert_abs_diff_eq!(scaled - base, expected_shift, epsilon = 1e-10);
    }

    #[test]
    fn augmented_loglik_rejects_nonpositive_waits() {
        let params = test_params();
        let ll = augmented_loglik(
            &params,
            &CtrwLatents(vec![1.0, 0.0]),
            &IncrementSeries { deltas: vec![0.1, 0.2] },
        )
        .unwrap();
        assert_eq!(ll, f64::NEG_INFINITY);
    }

    #[test]
    fn augmented_loglik_shape_error() {
        let params = test_params();
        let err = augmented_loglik(
            &params,
            &CtrwLatents(vec![1.0]),
            &IncrementSeries { deltas: vec![0.1, 0.2] },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Shape(_)));
    }

    #[test]
    fn marginal_symmetric_when_mean_zero() {
        let params = CtrwParams::new(0.0, 0.1, 2.0, 2.0).unwrap();
        let rule = QuadratureRule::default();
        for d in [0.1, 0.5, 2.0] {
            let plus = marginal_increment_logpdf(d, &params, &rule).unwrap();
            let minus = marginal_increment_logpdf(-d, &params, &rule).unwrap();
            assert_abs_diff_eq!(plus, minus, epsilon = 1e-10);
        }
    }

    #[test]
    fn marginal_total_mass_is_one() {
        let params = test_params();
        let rule = QuadratureRule::default();
        // outer Simpson over +-12 predictive sd around the mean
        let sd = params.increment_variance().sqrt();
        let center = params.mean_increment();
        let (lo, hi) = (center - 12.0 * sd, center + 12.0 * sd);
        let n = 2001;
        let h = (hi - lo) / (n - 1) as f64;
        let mut mass = 0.0;
        for i in 0..n {
            let d = lo + i as f64 * h;
            let c = if i == 0 || i == n - 1 { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            mass += c * marginal_increment_logpdf(d, &params, &rule).unwrap().exp();
        }
        mass *= h / 3.0;
        assert!((mass - 1.0).abs() < 5e-4, "total mass {mass}");
    }

    /// Stratified conditional Monte Carlo oracle for the marginal density:
    /// f(d) = E_w[(1/w) N(d/w; mu, tau^2)] with w drawn by inverse CDF from
    /// stratified uniforms. Kernel-free and unbiased.
    fn conditional_mc_density(d: f64, p: &CtrwParams, n: usize, seed: u64) -> f64 {
        let mut rng = substream_rng(seed, 0);
        let mut acc = 0.0;
        for k in 0..n {
            let u = (k as f64 + rng.random::<f64>()) / n as f64;
            let u = u.clamp(1e-14, 1.0 - 1e-14);
            let w = stats::gamma_quantile(u, p.wait_shape, p.wait_rate).unwrap();
            acc += (ln_normal_pdf(d / w, p.jump_mean, p.jump_sd) - w.ln()).exp();
        }
        acc / n as f64
    }

    #[test]
    fn marginal_matches_monte_carlo_oracle() {
        let params = test_params();
        let rule = QuadratureRule::default();
        for d in [-0.3, 0.3] {
            let quad = marginal_increment_logpdf(d, &params, &rule).unwrap().exp();
            let mc = conditional_mc_density(d, &params, 1_000_000, 2024);
            assert!(
                (quad - mc).abs() < 5e-3,
                "density at {d}: quadrature {quad}, Monte Carlo {mc}"
            );
        }
    }

    #[test]
    fn marginal_matches_closed_form_at_zero() {
        // At delta = 0 the density is phi(mu/tau)/tau * E[1/w]
        // = phi(mu/tau)/tau * beta/(alpha-1) for alpha > 1.
        let params = test_params();
        let rule = QuadratureRule::default();
        let quad = marginal_increment_logpdf(0.0, &params, &rule).unwrap().exp();
        let z = params.jump_mean / params.jump_sd;
        let exact = (-0.5 * z * z).exp() / ((2.0 * std::f64::consts::PI).sqrt() * params.jump_sd)
            * params.wait_rate
            / (params.wait_shape - 1.0);
        assert!(
            (quad - exact).abs() < 5e-3,
            "density at 0: quadrature {quad}, closed form {exact}"
        );
    }

    #[test]
    fn marginal_stable_under_node_doubling() {
        let params = test_params();
        let coarse = QuadratureRule::default();
        let fine = QuadratureRule { nodes: 801 };
        for d in [-0.3, 0.0, 0.1, 0.4] {
            let a = marginal_increment_logpdf(d, &params, &coarse).unwrap();
            let b = marginal_increment_logpdf(d, &params, &fine).unwrap();
            assert!((a - b).abs() < 1e-6, "delta {d}: {a} vs {b}");
        }
    }

    #[test]
    fn augmented_and_marginal_agree_by_monte_carlo() {
        // Averaging exp(per-observation augmented likelihood) over
        // w ~ Gamma(alpha, beta) recovers the marginal density.
        let params = test_params();
        let rule = QuadratureRule::default();
        let d = 0.12;
        let mc = conditional_mc_density(d, &params, 1_000_000, 7);
        let marginal = marginal_increment_logpdf(d, &params, &rule).unwrap().exp();
        assert!(
            ((mc - marginal) / marginal).abs() < 0.02,
            "mc {mc} vs marginal {marginal}"
        );
    }

    #[test]
    fn simulate_monotone_when_jumps_degenerate_positive() {
        let params = CtrwParams::new(1.0, 1e-12, 2.0, 1.0).unwrap();
        let series = simulate(&params, 30.0, 500, 3).unwrap();
        assert!(series.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn simulate_moments_match_independence_algebra() {
        let params = test_params();
        let n = 1_000_000;
        let series = simulate(&params, 0.0, n + 1, 11).unwrap();
        let deltas: Vec<f64> = series.windows(2).map(|w| w[1] - w[0]).collect();
        let mean = stats::mean(&deltas);
        let var = stats::sample_variance(&deltas);

        let expect_mean = params.mean_increment();
        let expect_var = params.increment_variance();
        let se = (expect_var / n as f64).sqrt();
        assert!(
            (mean - expect_mean).abs() < 3.0 * se,
            "mean {mean} vs {expect_mean} (se {se})"
        );
        assert!(
            (var - expect_var).abs() / expect_var < 0.02,
            "var {var} vs {expect_var}"
        );
        assert!(deltas.iter().all(|d| d.is_finite()));
    }

    #[test]
    fn simulate_location_equivariant() {
        let params = test_params();
        let a = simulate(&params, 0.0, 50, 5).unwrap();
        let b = simulate(&params, 10.0, 50, 5).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x + 10.0, *y, epsilon = 1e-12);
        }
    }

    #[test]
    fn fit_constant_series_centers_mu_near_zero() {
        let series = NormalizedSeries::from_values(2000, vec![30.0; 24]).unwrap();
        let mut cfg = McmcConfig::new(8);
        cfg.chains = 2;
        cfg.iterations = 3000;
        cfg.burn_in = 1000;
        cfg.thin = 2;
        let draws = fit(&series, &CtrwPriors::default(), &cfg, &CtrwFitOptions::default()).unwrap();
        assert_eq!(draws.names(), &["mu", "tau", "alpha", "beta"]);
        let mu = draws.stacked_column(0);
        let mean = stats::mean(&mu);
        let sd = stats::sample_sd(&mu);
        // an exactly constant series makes the posterior degenerate at
        // mu = 0, where both the mean and sd can collapse together
        assert!(
            mean.abs() <= sd.max(1e-12),
            "mu mean {mean} not within posterior sd {sd}"
        );
        assert!(mean.abs() < 1e-6, "mu mean {mean} away from zero");
    }

    #[test]
    fn fit_fix_mean_wait_ties_beta_to_alpha() {
        let params = test_params();
        let y = simulate(&params, 30.0, 40, 21).unwrap();
        let series = NormalizedSeries::from_values(1900, y).unwrap();
        let mut cfg = McmcConfig::new(4);
        cfg.chains = 2;
        cfg.iterations = 1500;
        cfg.burn_in = 500;
        cfg.thin = 5;
        let opts = CtrwFitOptions { fix_mean_wait: true, keep_latents: false };
        let draws = fit(&series, &CtrwPriors::default(), &cfg, &opts).unwrap();
        assert_eq!(draws.names(), &["mu", "tau", "alpha", "beta"]);
        let alpha = draws.stacked_column(2);
        let beta = draws.stacked_column(3);
        assert_eq!(alpha, beta);
    }

    fn constant_draws(params: &CtrwParams, s: usize) -> PosteriorDraws {
        let mut text = String::from("chain,iter,mu,tau,alpha,beta\n");
        for k in 0..s {
            text.push_str(&format!(
                "0,{k},{},{},{},{}\n",
                params.jump_mean, params.jump_sd, params.wait_shape, params.wait_rate
            ));
        }
        PosteriorDraws::read_csv(text.as_bytes()).unwrap()
    }

    #[test]
    fn predict_degenerate_draws_echo_lagged_series() {
        let params = CtrwParams::new(0.0, 0.1, 2.0, 2.0).unwrap();
        let draws = constant_draws(&params, 50);
        let y = vec![30.0, 30.4, 30.1, 30.6, 30.2];
        let series = NormalizedSeries::from_values(2000, y.clone()).unwrap();
        let fitted = predict_one_step(&draws, &series, 1).unwrap();
        assert_eq!(fitted.fit_mean[0], y[0]);
        for i in 1..y.len() {
            assert_abs_diff_eq!(fitted.fit_mean[i], y[i - 1], epsilon = 1e-12);
            assert!(fitted.lo95[i] <= fitted.fit_mean[i] && fitted.fit_mean[i] <= fitted.hi95[i]);
        }
    }

    #[test]
    fn predict_positive_drift_exceeds_lagged_series() {
        let params = test_params();
        let draws = constant_draws(&params, 50);
        let y = vec![30.0, 30.4, 30.1, 30.6, 30.2];
        let series = NormalizedSeries::from_values(2000, y.clone()).unwrap();
        let fitted = predict_one_step(&draws, &series, 1).unwrap();
        for i in 1..y.len() {
            assert!(fitted.fit_mean[i] > y[i - 1]);
        }
    }

    #[test]
    fn predictive_band_calibrated_on_true_params() {
        // With the posterior collapsed at the truth, the 95% band should
        // cover about 95% of realized one-step transitions.
        let params = test_params();
        let draws = constant_draws(&params, 200);
        let y = simulate(&params, 30.0, 500, 77).unwrap();
        let series = NormalizedSeries::from_values(1500, y.clone()).unwrap();
        let fitted = predict_one_step(&draws, &series, 9).unwrap();
        let covered = (1..y.len())
            .filter(|&i| fitted.lo95[i] <= y[i] && y[i] <= fitted.hi95[i])
            .count();
        let rate = covered as f64 / (y.len() - 1) as f64;
        assert!((0.90..=1.0).contains(&rate), "coverage {rate}");
    }

    #[test]
    fn pointwise_loglik_matches_direct_call() {
        let params = test_params();
        let draws = constant_draws(&params, 3);
        let deltas = IncrementSeries { deltas: vec![0.2] };
        let rule = QuadratureRule::default();
        let m = pointwise_loglik(&draws, &deltas, &rule).unwrap();
        let direct = marginal_increment_logpdf(0.2, &params, &rule).unwrap();
        for s in 0..3 {
            assert_eq!(m.value(s, 0), direct);
        }
    }

    #[test]
    fn pointwise_loglik_identical_draws_identical_rows() {
        let params = test_params();
        let draws = constant_draws(&params, 4);
        let deltas = IncrementSeries { deltas: vec![0.1, -0.05, 0.3] };
        let m = pointwise_loglik(&draws, &deltas, &QuadratureRule::default()).unwrap();
        for s in 1..4 {
            for i in 0..3 {
                assert_eq!(m.value(s, i), m.value(0, i));
            }
        }
    }

    #[test]
    fn true_params_dominate_shifted_params_in_likelihood() {
        let truth = test_params();
        let shifted = CtrwParams::new(truth.jump_mean + 1.0, truth.jump_sd, 2.0, 2.0).unwrap();
        let rule = QuadratureRule::default();
        let mut wins = 0;
        let reps = 100;
        for rep in 0..reps {
            let y = simulate(&truth, 0.0, 31, 1000 + rep).unwrap();
            let deltas: Vec<f64> = y.windows(2).map(|w| w[1] - w[0]).collect();
            let inc = IncrementSeries { deltas };
            let ll_true: f64 = loglik_at_point(&truth, &inc, &rule).unwrap().iter().sum();
            let ll_shift: f64 = loglik_at_point(&shifted, &inc, &rule).unwrap().iter().sum();
            if ll_true > ll_shift {
                wins += 1;
            }
        }
        assert!(wins >= 99, "true params won only {wins}/{reps} replications");
    }
}
