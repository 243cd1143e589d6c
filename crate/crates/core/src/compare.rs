//! Model-selection metrics: DIC, PSIS-LOO/LOOIC, RMSE and MAE, and the
//! side-by-side comparison report.

use std::io::Write;

use crate::error::{Error, Result};
use crate::stats::{self, log_sum_exp};

/// Pointwise log likelihood: S draws by M observations, all finite.
#[derive(Clone, Debug)]
pub struct LogLikMatrix {
    pub model: String,
    pub obs_labels: Vec<String>,
    values: Vec<f64>,
    n_draws: usize,
    n_obs: usize,
}

impl LogLikMatrix {
    pub fn new(
        model: String,
        obs_labels: Vec<String>,
        values: Vec<f64>,
        n_draws: usize,
        n_obs: usize,
    ) -> Result<Self> {
        if values.len() != n_draws * n_obs {
            return Err(Error::Shape(format!(
                "{} values for {n_draws} draws x {n_obs} observations",
                values.len()
            )));
        }
        if obs_labels.len() != n_obs {
            return Err(Error::Shape(format!(
                "{} labels for {n_obs} observations",
                obs_labels.len()
            )));
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!(
                "non-finite log likelihood at draw {}, observation {}",
                bad / n_obs,
                bad % n_obs
            )));
        }
        Ok(Self { model, obs_labels, values, n_draws, n_obs })
    }

    pub fn n_draws(&self) -> usize {
        self.n_draws
    }

    pub fn n_obs(&self) -> usize {
        self.n_obs
    }

    pub fn value(&self, draw: usize, obs: usize) -> f64 {
        self.values[draw * self.n_obs + obs]
    }

    pub fn row(&self, draw: usize) -> &[f64] {
        &self.values[draw * self.n_obs..(draw + 1) * self.n_obs]
    }

    fn column(&self, obs: usize) -> Vec<f64> {
        (0..self.n_draws).map(|s| self.value(s, obs)).collect()
    }

    /// Writes `draw,<labels>` rows.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "draw,{}", self.obs_labels.join(","))?;
        for s in 0..self.n_draws {
            let cells: Vec<String> = self.row(s).iter().map(|v| v.to_string()).collect();
            writeln!(w, "{s},{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(model: String, r: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let headers = reader.headers()?.clone();
        let obs_labels: Vec<String> = headers.iter().skip(1).map(String::from).collect();
        let mut values = Vec::new();
        let mut n_draws = 0;
        for record in reader.records() {
            let record = record?;
            for cell in record.iter().skip(1) {
                values.push(cell.parse::<f64>().map_err(|_| {
                    Error::Ingest(format!("non-numeric log likelihood '{cell}'"))
                })?);
            }
            n_draws += 1;
        }
        let n_obs = obs_labels.len();
        Self::new(model, obs_labels, values, n_draws, n_obs)
    }
}

/// Deviance information criterion and its effective-parameter count.
#[derive(Clone, Copy, Debug)]
pub struct Dic {
    pub dic: f64,
    pub p_d: f64,
}

/// DIC from the draw-wise deviances and the deviance at the posterior-mean
/// parameter point: D(theta) = -2 sum_m loglik_m, p_D = mean_s D(theta_s)
/// - D(theta_bar), DIC = D(theta_bar) + 2 p_D.
pub fn dic(loglik: &LogLikMatrix, loglik_at_mean: &[f64]) -> Result<Dic> {
    if loglik_at_mean.len() != loglik.n_obs() {
        return Err(Error::Shape(format!(
            "{} at-mean log likelihoods for {} observations",
            loglik_at_mean.len(),
            loglik.n_obs()
        )));
    }
    let d_bar = (0..loglik.n_draws())
        .map(|s| -2.0 * loglik.row(s).iter().sum::<f64>())
        .sum::<f64>()
        / loglik.n_draws() as f64;
    let d_hat = -2.0 * loglik_at_mean.iter().sum::<f64>();
    let p_d = d_bar - d_hat;
    Ok(Dic { dic: d_hat + 2.0 * p_d, p_d })
}

/// Leave-one-out estimate for a single observation.
#[derive(Clone, Copy, Debug)]
pub struct ObsLoo {
    pub elpd: f64,
    /// Fitted generalized Pareto shape of the importance-ratio tail.
    pub pareto_k: f64,
    /// Set when the ratio tail was too short or constant to fit.
    pub degenerate: bool,
}

/// PSIS-LOO result.
#[derive(Clone, Debug)]
pub struct PsisLoo {
    pub elpd: f64,
    pub se: f64,
    pub looic: f64,
    pub pointwise: Vec<ObsLoo>,
    /// True when the draw count is below the recommended minimum (100).
    pub few_draws_warning: bool,
}

impl PsisLoo {
    pub fn n_high_pareto_k(&self) -> usize {
        self.pointwise
            .iter()
            .filter(|o| !o.degenerate && o.pareto_k > 0.7)
            .count()
    }
}

/// Pareto-smoothed importance sampling LOO over all observations.
///
/// For each observation the raw importance ratios exp(-loglik) have their
/// upper tail (the M = min(0.2 S, 3 sqrt(S)) largest) replaced by expected
/// order statistics of a fitted generalized Pareto distribution, truncated
/// at the raw maximum.
pub fn psis_loo(loglik: &LogLikMatrix) -> Result<PsisLoo> {
    let s = loglik.n_draws();
    if s < 16 {
        return Err(Error::InsufficientDraws(format!(
            "PSIS needs at least 16 draws, got {s}"
        )));
    }
    let few_draws_warning = s < 100;
    let tail_len = (0.2 * s as f64).min(3.0 * (s as f64).sqrt()).ceil() as usize;
    let tail_len = tail_len.min(s - 1);

    let mut pointwise = Vec::with_capacity(loglik.n_obs());
    for m in 0..loglik.n_obs() {
        let col = loglik.column(m);
        pointwise.push(psis_obs(&col, tail_len));
    }
    let elpd_values: Vec<f64> = pointwise.iter().map(|o| o.elpd).collect();
    let elpd: f64 = elpd_values.iter().sum();
    let se = (stats::sample_variance(&elpd_values) * elpd_values.len() as f64).sqrt();
    Ok(PsisLoo { elpd, se, looic: -2.0 * elpd, pointwise, few_draws_warning })
}

fn psis_obs(loglik_col: &[f64], tail_len: usize) -> ObsLoo {
    let s = loglik_col.len();
    // log ratios, shifted so the largest ratio is 1
    let log_ratios: Vec<f64> = loglik_col.iter().map(|ll| -ll).collect();
    let max_lr = log_ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let ratios: Vec<f64> = log_ratios.iter().map(|lr| (lr - max_lr).exp()).collect();

    let mut order: Vec<usize> = (0..s).collect();
    order.sort_by(|&a, &b| ratios[a].partial_cmp(&ratios[b]).unwrap());

    let cutoff = ratios[order[s - tail_len - 1]];
    let raw_max = ratios[order[s - 1]];

    let mut log_weights: Vec<f64> = ratios.iter().map(|r| r.ln()).collect();
    let mut pareto_k = f64::NAN;
    let mut degenerate = true;

    if tail_len >= 5 && raw_max > cutoff {
        let exceedances: Vec<f64> = (0..tail_len)
            .map(|j| ratios[order[s - tail_len + j]] - cutoff)
            .collect();
        if let Some((k, sigma)) = gpd_fit_zhang_stephens(&exceedances) {
            pareto_k = k;
            degenerate = false;
            for (j, &idx) in order[s - tail_len..].iter().enumerate() {
                let p = (j as f64 + 0.5) / tail_len as f64;
                let q = gpd_quantile(p, k, sigma);
                let smoothed = (cutoff + q).min(raw_max);
                log_weights[idx] = smoothed.ln();
            }
        }
    }

    let num: Vec<f64> = log_weights
        .iter()
        .zip(loglik_col)
        .map(|(lw, ll)| lw + ll)
        .collect();
    let elpd = log_sum_exp(&num) - log_sum_exp(&log_weights);
    ObsLoo { elpd, pareto_k, degenerate }
}

/// Zhang & Stephens (2009) estimator with the weak prior regularization
/// used by standard PSIS implementations. `exceedances` must be positive
/// and sorted ascending is not required. Returns (k, sigma).
fn gpd_fit_zhang_stephens(exceedances: &[f64]) -> Option<(f64, f64)> {
    let n = exceedances.len();
    let mut x: Vec<f64> = exceedances.to_vec();
    x.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let x_max = *x.last()?;
    if !(x_max > 0.0) || x[0] < 0.0 {
        return None;
    }
    let x_quart = x[(n as f64 / 4.0 + 0.5).floor() as usize - 1].max(f64::MIN_POSITIVE);

    let grid = 30 + (n as f64).sqrt().floor() as usize;
    let mut thetas = Vec::with_capacity(grid);
    let mut logliks = Vec::with_capacity(grid);
    for j in 1..=grid {
        let theta =
            1.0 / x_max + (1.0 - (grid as f64 / (j as f64 - 0.5)).sqrt()) / (3.0 * x_quart);
        // profile log likelihood: l(theta) = n (log(-theta/xi)... ) written
        // via xi(theta) = mean log(1 - theta x) and sigma = -xi/theta
        let xi = x.iter().map(|&v| (1.0 - theta * v).ln()).sum::<f64>() / n as f64;
        if !xi.is_finite() || xi == 0.0 {
            continue;
        }
        let sigma = -xi / theta;
        if !(sigma > 0.0) {
            continue;
        }
        let ll = -(n as f64) * (sigma.ln() + xi + 1.0);
        if ll.is_finite() {
            thetas.push(theta);
            logliks.push(ll);
        }
    }
    if thetas.is_empty() {
        return None;
    }
    let lse = log_sum_exp(&logliks);
    let theta_hat: f64 = thetas
        .iter()
        .zip(&logliks)
        .map(|(t, l)| t * (l - lse).exp())
        .sum();
    let xi = x.iter().map(|&v| (1.0 - theta_hat * v).ln()).sum::<f64>() / n as f64;
    let sigma = -xi / theta_hat;
    if !(sigma > 0.0 && xi.is_finite()) {
        return None;
    }
    // shrink k toward 0.5 with a prior weight of 10 pseudo-observations
    let k = (n as f64 * xi + 0.5 * 10.0) / (n as f64 + 10.0);
    Some((k, sigma))
}

fn gpd_quantile(p: f64, k: f64, sigma: f64) -> f64 {
    if k.abs() < 1e-12 {
        -sigma * (1.0 - p).ln()
    } else {
        sigma * ((1.0 - p).powf(-k) - 1.0) / k
    }
}

/// Root mean squared error in the units of the observations.
pub fn rmse(observed: &[f64], fitted: &[f64]) -> Result<f64> {
    check_paired(observed, fitted)?;
    let mse = observed
        .iter()
        .zip(fitted)
        .map(|(o, f)| (o - f) * (o - f))
        .sum::<f64>()
        / observed.len() as f64;
    Ok(mse.sqrt())
}

/// Mean absolute error in the units of the observations.
pub fn mae(observed: &[f64], fitted: &[f64]) -> Result<f64> {
    check_paired(observed, fitted)?;
    Ok(observed
        .iter()
        .zip(fitted)
        .map(|(o, f)| (o - f).abs())
        .sum::<f64>()
        / observed.len() as f64)
}

fn check_paired(observed: &[f64], fitted: &[f64]) -> Result<()> {
    if observed.len() != fitted.len() {
        return Err(Error::Shape(format!(
            "observed length {} vs fitted length {}",
            observed.len(),
            fitted.len()
        )));
    }
    if observed.is_empty() {
        return Err(Error::Shape("empty series in error metric".into()));
    }
    Ok(())
}

/// One model's inputs to the comparison.
#[derive(Clone, Debug)]
pub struct CompareEntry {
    pub label: String,
    pub fit_description: String,
    pub loglik: LogLikMatrix,
    pub loglik_at_mean: Vec<f64>,
    pub observed: Vec<f64>,
    pub fitted: Vec<f64>,
}

/// One row of the comparison report.
#[derive(Clone, Debug)]
pub struct ModelMetrics {
    pub model: String,
    pub dic: f64,
    pub p_d: f64,
    pub looic: f64,
    pub elpd: f64,
    pub se_elpd: f64,
    pub rmse: f64,
    pub mae: f64,
    pub n_high_pareto_k: usize,
    pub fit_description: String,
}

/// Side-by-side model comparison.
#[derive(Clone, Debug)]
pub struct ComparisonReport {
    pub rows: Vec<ModelMetrics>,
    pub footnotes: Vec<String>,
}

/// Builds the report, one row per entry in input order.
pub fn compare(entries: &[CompareEntry]) -> Result<ComparisonReport> {
    if entries.is_empty() {
        return Err(Error::Validation("comparison needs at least one model".into()));
    }
    let mut rows = Vec::with_capacity(entries.len());
    let mut footnotes = vec![
        "error metrics are computed on the level scale; likelihood criteria use each \
         model's own observation unit, so observation counts can differ between rows"
            .to_string(),
    ];
    for e in entries {
        let d = dic(&e.loglik, &e.loglik_at_mean)?;
        let loo = psis_loo(&e.loglik)?;
        if loo.few_draws_warning {
            footnotes.push(format!(
                "{}: fewer than 100 draws; PSIS tail fit may be unstable",
                e.label
            ));
        }
        rows.push(ModelMetrics {
            model: e.label.clone(),
            dic: d.dic,
            p_d: d.p_d,
            looic: loo.looic,
            elpd: loo.elpd,
            se_elpd: loo.se,
            rmse: rmse(&e.observed, &e.fitted)?,
            mae: mae(&e.observed, &e.fitted)?,
            n_high_pareto_k: loo.n_high_pareto_k(),
            fit_description: e.fit_description.clone(),
        });
    }
    Ok(ComparisonReport { rows, footnotes })
}

impl ComparisonReport {
    /// Writes `compare.csv`; footnotes become trailing `#` comment lines.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "model,dic,p_d,looic,elpd,se_elpd,rmse,mae,n_pareto_k_gt_0.7,fit_description"
        )?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                r.model,
                r.dic,
                r.p_d,
                r.looic,
                r.elpd,
                r.se_elpd,
                r.rmse,
                r.mae,
                r.n_high_pareto_k,
                r.fit_description
            )?;
        }
        for note in &self.footnotes {
            writeln!(w, "# {note}")?;
        }
        Ok(())
    }
}

/// Writes `loo.csv`: `model,observation,elpd_i,pareto_k` rows.
pub fn write_loo_csv<W: Write>(mut w: W, entries: &[(String, &PsisLoo, &[String])]) -> Result<()> {
    writeln!(w, "model,observation,elpd_i,pareto_k")?;
    for (model, loo, labels) in entries {
        for (obs, o) in loo.pointwise.iter().enumerate() {
            writeln!(w, "{},{},{},{}", model, labels[obs], o.elpd, o.pareto_k)?;
        }
    }
    Ok(())
}
