//! Convergence diagnostics and posterior summaries.

use std::io::Write;

use crate::error::Result;
use crate::mcmc::PosteriorDraws;
use crate::stats;

/// A diagnostic value plus a flag for degenerate inputs (constant chains).
#[derive(Clone, Copy, Debug)]
pub struct DiagnosticValue {
    pub value: f64,
    pub degenerate: bool,
}

/// Split-chain potential scale reduction per parameter.
///
/// Each chain is split in half (dropping the middle draw when odd), and
/// R-hat = sqrt(((n-1)/n * W + B/n) / W) over the resulting half-chains,
/// where W is the mean within-half variance and B/n the variance of the
/// half means. Constant chains at a common value report 1 with the
/// degenerate flag set.
pub fn split_rhat(draws: &PosteriorDraws) -> Vec<DiagnosticValue> {
    (0..draws.n_params())
        .map(|p| {
            let halves = split_halves(draws, p);
            split_rhat_from_halves(&halves)
        })
        .collect()
}

fn split_halves(draws: &PosteriorDraws, param: usize) -> Vec<Vec<f64>> {
    let mut halves = Vec::with_capacity(2 * draws.n_chains());
    let n = draws.retained_per_chain();
    let half = n / 2;
    for c in 0..draws.n_chains() {
        let col = draws.chain_column(c, param);
        halves.push(col[..half].to_vec());
        halves.push(col[n - half..].to_vec());
    }
    halves
}

fn split_rhat_from_halves(halves: &[Vec<f64>]) -> DiagnosticValue {
    let n = halves[0].len();
    if n < 2 {
        return DiagnosticValue { value: 1.0, degenerate: true };
    }
    let means: Vec<f64> = halves.iter().map(|h| stats::mean(h)).collect();
    let vars: Vec<f64> = halves.iter().map(|h| stats::sample_variance(h)).collect();
    let w = stats::mean(&vars);
    let b_over_n = stats::sample_variance(&means);
    if w == 0.0 {
        if b_over_n == 0.0 {
            return DiagnosticValue { value: 1.0, degenerate: true };
        }
        return DiagnosticValue { value: f64::INFINITY, degenerate: true };
    }
    let nf = n as f64;
    let var_plus = (nf - 1.0) / nf * w + b_over_n;
    DiagnosticValue { value: (var_plus / w).sqrt(), degenerate: false }
}

/// Effective sample size per parameter, using Geyer's initial monotone
/// positive sequence to truncate the autocorrelation sum. Chains are
/// combined Stan-style through the multi-chain variance estimate.
/// A constant parameter reports ESS equal to the total draw count with
/// the degenerate flag set.
pub fn ess(draws: &PosteriorDraws) -> Vec<DiagnosticValue> {
    (0..draws.n_params())
        .map(|p| {
            let chains: Vec<Vec<f64>> =
                (0..draws.n_chains()).map(|c| draws.chain_column(c, p)).collect();
            ess_from_chains(&chains)
        })
        .collect()
}

fn autocovariance(chain: &[f64], lag: usize) -> f64 {
    let n = chain.len();
    let m = stats::mean(chain);
    let mut acc = 0.0;
    for i in 0..n - lag {
        acc += (chain[i] - m) * (chain[i + lag] - m);
    }
    acc / n as f64
}

fn ess_from_chains(chains: &[Vec<f64>]) -> DiagnosticValue {
    let m = chains.len();
    let n = chains[0].len();
    let total = (m * n) as f64;

    let vars: Vec<f64> = chains.iter().map(|c| stats::sample_variance(c)).collect();
    let w = stats::mean(&vars);
    let var_plus = if m > 1 {
        let means: Vec<f64> = chains.iter().map(|c| stats::mean(c)).collect();
        (n as f64 - 1.0) / n as f64 * w + stats::sample_variance(&means)
    } else {
        w
    };
    if var_plus <= 0.0 || w == 0.0 {
        return DiagnosticValue { value: total, degenerate: true };
    }

    // rho_t = 1 - (W - mean_c acov_t_c) / var_plus, summed over Geyer pairs
    // until the first non-positive pair, enforcing monotone decrease.
    let rho = |lag: usize| -> f64 {
        let acov = chains.iter().map(|c| autocovariance(c, lag)).sum::<f64>() / m as f64;
        1.0 - (w - acov) / var_plus
    };

    let max_lag = n - 1;
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 <= max_lag {
        let pair = rho(lag) + rho(lag + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        prev_pair = pair;
        tau += 2.0 * pair;
        lag += 2;
    }
    let tau = tau.max(1.0 / (m * n) as f64);
    // allow a small estimator overshoot past the draw count, but no more
    let value = (total / tau).min(1.05 * total);
    DiagnosticValue { value, degenerate: false }
}

/// Mean, sd, and central quantiles of one parameter.
#[derive(Clone, Debug)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    pub sd: f64,
    pub q2_5: f64,
    pub q50: f64,
    pub q97_5: f64,
}

/// Per-parameter summaries over all chains (quantiles are type-7).
pub fn summarize(draws: &PosteriorDraws) -> Vec<ParamSummary> {
    (0..draws.n_params())
        .map(|p| {
            let mut xs = draws.stacked_column(p);
            xs.sort_by(|a, b| a.partial_cmp(b).expect("non-finite draw"));
            ParamSummary {
                name: draws.names()[p].clone(),
                mean: stats::mean(&xs),
                sd: stats::sample_sd(&xs),
                q2_5: stats::quantile_type7_sorted(&xs, 0.025),
                q50: stats::quantile_type7_sorted(&xs, 0.5),
                q97_5: stats::quantile_type7_sorted(&xs, 0.975),
            }
        })
        .collect()
}

/// Writes `param,rhat,ess,mean,sd,q2.5,q50,q97.5` rows.
pub fn write_summary_csv<W: Write>(
    mut w: W,
    summaries: &[ParamSummary],
    rhat: &[DiagnosticValue],
    ess: &[DiagnosticValue],
) -> Result<()> {
    writeln!(w, "param,rhat,ess,mean,sd,q2.5,q50,q97.5")?;
    for (i, s) in summaries.iter().enumerate() {
        writeln!(
            w,
            "{},{},{},{},{},{},{},{}",
            s.name, rhat[i].value, ess[i].value, s.mean, s.sd, s.q2_5, s.q50, s.q97_5
        )?;
    }
    Ok(())
}
