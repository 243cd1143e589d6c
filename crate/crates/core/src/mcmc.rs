//! Multi-chain adaptive random-walk Metropolis-within-Gibbs sampler.
//!
//! The engine samples an arbitrary target density over blocks of
//! parameters. Positive parameters are declared with a log transform and
//! sampled on the unconstrained scale; the Jacobian correction happens
//! inside the engine, so the target always receives constrained values.
//!
//! Proposal scales adapt per block during burn-in (Robbins-Monro on the
//! log scale toward a target acceptance rate) and are frozen afterwards.
//! Each chain draws from its own RNG substream derived from the master
//! seed and the chain index, which makes runs reproducible bit-for-bit
//! and chain outputs independent of execution order.

use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng::substream_rng;

/// Support transform for one parameter.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Transform {
    /// Parameter lives on the whole real line.
    Identity,
    /// Parameter is strictly positive; sampled as its logarithm.
    Log,
}

impl Transform {
    fn to_unconstrained(self, x: f64) -> f64 {
        match self {
            Transform::Identity => x,
            Transform::Log => x.ln(),
        }
    }

    fn to_constrained(self, u: f64) -> f64 {
        match self {
            Transform::Identity => u,
            Transform::Log => u.exp(),
        }
    }
}

/// A target posterior: log density over the constrained parameter vector,
/// plus the block structure used for component-wise updates.
pub struct TargetDensity<'a> {
    names: Vec<String>,
    transforms: Vec<Transform>,
    blocks: Vec<Vec<usize>>,
    log_density: &'a (dyn Fn(&[f64]) -> f64 + Sync),
}

impl<'a> TargetDensity<'a> {
    /// Validates that `blocks` partitions `0..names.len()` exactly.
    pub fn new(
        names: Vec<String>,
        transforms: Vec<Transform>,
        blocks: Vec<Vec<usize>>,
        log_density: &'a (dyn Fn(&[f64]) -> f64 + Sync),
    ) -> Result<Self> {
        let dim = names.len();
        if transforms.len() != dim {
            return Err(Error::Config(format!(
                "{} transforms for {} parameters",
                transforms.len(),
                dim
            )));
        }
        let mut seen = vec![false; dim];
        for block in &blocks {
            for &i in block {
                if i >= dim {
                    return Err(Error::Config(format!("block index {i} out of range (dim {dim})")));
                }
                if seen[i] {
                    return Err(Error::Config(format!("parameter {i} appears in two blocks")));
                }
                seen[i] = true;
            }
        }
        if !seen.iter().all(|s| *s) {
            return Err(Error::Config("blocks do not cover every parameter".into()));
        }
        Ok(Self { names, transforms, blocks, log_density })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn block_label(&self, b: usize) -> String {
        let block = &self.blocks[b];
        match block.len() {
            1 => self.names[block[0]].clone(),
            2 => format!("{}+{}", self.names[block[0]], self.names[block[1]]),
            _ => format!(
                "{}..{}",
                self.names[block[0]],
                self.names[*block.last().unwrap()]
            ),
        }
    }
}

/// Chain protocol: counts, thinning, seed, and adaptation goal.
#[derive(Clone, Debug, PartialEq)]
pub struct McmcConfig {
    pub chains: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    /// Per-block acceptance goal. `None` selects 0.44 for one-dimensional
    /// blocks and 0.234 for larger ones.
    pub target_acceptance: Option<f64>,
    /// Initial proposal scale on the unconstrained scale.
    pub initial_scale: f64,
    /// Record per-iteration proposal scales (for adaptation-freeze checks).
    pub track_scale_history: bool,
}

impl McmcConfig {
    /// Four chains of 10,000 iterations, 2,000 burn-in, thinning every 10.
    pub fn new(seed: u64) -> Self {
        Self {
            chains: 4,
            iterations: 10_000,
            burn_in: 2_000,
            thin: 10,
            seed,
            target_acceptance: None,
            initial_scale: 0.1,
            track_scale_history: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.chains < 1 {
            return Err(Error::Config("need at least one chain".into()));
        }
        if self.burn_in >= self.iterations {
            return Err(Error::Config(format!(
                "burn-in {} must be smaller than iterations {}",
                self.burn_in, self.iterations
            )));
        }
        if self.thin < 1 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        if !(self.initial_scale.is_finite() && self.initial_scale > 0.0) {
            return Err(Error::Config("initial scale must be positive".into()));
        }
        if let Some(t) = self.target_acceptance {
            if !(0.0 < t && t < 1.0) {
                return Err(Error::Config(format!("target acceptance {t} outside (0,1)")));
            }
        }
        Ok(())
    }

    /// Retained draws per chain: floor((iterations - burn_in) / thin).
    pub fn retained_per_chain(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Retained draws from all chains, on the constrained scale, plus
/// acceptance statistics and the configuration echo.
#[derive(Clone, Debug)]
pub struct PosteriorDraws {
    pub(crate) names: Vec<String>,
    pub(crate) transforms: Vec<Transform>,
    /// Absolute iteration number of each retained draw (same for every chain).
    pub(crate) kept_iterations: Vec<usize>,
    /// Row-major retained x dim matrix per chain.
    pub(crate) chains: Vec<Vec<f64>>,
    /// Post-burn-in acceptance rate per chain per block.
    pub(crate) acceptance: Vec<Vec<f64>>,
    pub(crate) block_labels: Vec<String>,
    pub(crate) config: McmcConfig,
    /// Per chain, per block, proposal scale at every iteration
    /// (only when `track_scale_history` was set).
    pub(crate) scale_history: Option<Vec<Vec<Vec<f64>>>>,
}

impl PosteriorDraws {
    pub fn n_chains(&self) -> usize {
        self.chains.len()
    }

    pub fn n_params(&self) -> usize {
        self.names.len()
    }

    pub fn retained_per_chain(&self) -> usize {
        self.kept_iterations.len()
    }

    pub fn total_draws(&self) -> usize {
        self.n_chains() * self.retained_per_chain()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn transforms(&self) -> &[Transform] {
        &self.transforms
    }

    pub fn config(&self) -> &McmcConfig {
        &self.config
    }

    pub fn kept_iterations(&self) -> &[usize] {
        &self.kept_iterations
    }

    pub fn acceptance(&self) -> &[Vec<f64>] {
        &self.acceptance
    }

    pub fn block_labels(&self) -> &[String] {
        &self.block_labels
    }

    pub fn scale_history(&self) -> Option<&Vec<Vec<Vec<f64>>>> {
        self.scale_history.as_ref()
    }

    pub fn param_index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Shape(format!("no parameter named '{name}' in draws")))
    }

    /// One retained row (all parameters) of one chain.
    pub fn row(&self, chain: usize, draw: usize) -> &[f64] {
        let d = self.n_params();
        &self.chains[chain][draw * d..(draw + 1) * d]
    }

    /// Iterates rows chain-major: all rows of chain 0, then chain 1, ...
    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        let d = self.n_params();
        self.chains.iter().flat_map(move |c| c.chunks_exact(d))
    }

    /// All retained values of one parameter within one chain.
    pub fn chain_column(&self, chain: usize, param: usize) -> Vec<f64> {
        let d = self.n_params();
        self.chains[chain].iter().skip(param).step_by(d).copied().collect()
    }

    /// All retained values of one parameter, chains stacked in order.
    pub fn stacked_column(&self, param: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.total_draws());
        for c in 0..self.n_chains() {
            out.extend(self.chain_column(c, param));
        }
        out
    }

    /// Projection onto a subset of parameters (acceptance statistics are
    /// kept as-is; they describe the originating run).
    pub fn select(&self, params: &[usize]) -> Result<PosteriorDraws> {
        for &p in params {
            if p >= self.n_params() {
                return Err(Error::Shape(format!("parameter index {p} out of range")));
            }
        }
        let d = self.n_params();
        let chains = self
            .chains
            .iter()
            .map(|c| {
                c.chunks_exact(d)
                    .flat_map(|row| params.iter().map(move |&p| row[p]))
                    .collect()
            })
            .collect();
        Ok(PosteriorDraws {
            names: params.iter().map(|&p| self.names[p].clone()).collect(),
            transforms: params.iter().map(|&p| self.transforms[p]).collect(),
            kept_iterations: self.kept_iterations.clone(),
            chains,
            acceptance: self.acceptance.clone(),
            block_labels: self.block_labels.clone(),
            config: self.config.clone(),
            scale_history: None,
        })
    }

    /// Posterior mean taken on the unconstrained scale and mapped back.
    /// Used as the parameter point estimate for deviance-based criteria.
    pub fn unconstrained_mean(&self) -> Vec<f64> {
        let d = self.n_params();
        let mut acc = vec![0.0; d];
        let mut count = 0usize;
        for row in self.rows() {
            for (j, &x) in row.iter().enumerate() {
                acc[j] += self.transforms[j].to_unconstrained(x);
            }
            count += 1;
        }
        acc.iter()
            .zip(&self.transforms)
            .map(|(s, t)| t.to_constrained(s / count as f64))
            .collect()
    }

    /// Writes the draws as CSV: `chain,iter,<param names>`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "chain,iter,{}", self.names.join(","))?;
        for (c, chain) in self.chains.iter().enumerate() {
            for (k, row) in chain.chunks_exact(self.n_params()).enumerate() {
                let cells: Vec<String> = row.iter().map(|x| x.to_string()).collect();
                writeln!(w, "{},{},{}", c, self.kept_iterations[k], cells.join(","))?;
            }
        }
        Ok(())
    }

    /// Reads draws written by [`PosteriorDraws::write_csv`]. Transforms are
    /// not stored in the file, so all parameters are marked identity; the
    /// result supports diagnostics and summaries.
    pub fn read_csv<R: std::io::Read>(r: R) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
        let headers = reader.headers()?.clone();
        if headers.len() < 3 || &headers[0] != "chain" || &headers[1] != "iter" {
            return Err(Error::Ingest(
                "expected draws header 'chain,iter,<params>'".into(),
            ));
        }
        let names: Vec<String> = headers.iter().skip(2).map(String::from).collect();
        let d = names.len();
        let mut chains: Vec<Vec<f64>> = Vec::new();
        let mut kept: Vec<usize> = Vec::new();
        let mut first_chain = true;
        for record in reader.records() {
            let record = record?;
            let chain: usize = record[0]
                .parse()
                .map_err(|_| Error::Ingest("bad chain index in draws file".into()))?;
            let iter: usize = record[1]
                .parse()
                .map_err(|_| Error::Ingest("bad iteration in draws file".into()))?;
            if chain >= chains.len() {
                chains.resize(chain + 1, Vec::new());
                first_chain = chain == 0;
            }
            if first_chain && chain == 0 {
                kept.push(iter);
            }
            for cell in record.iter().skip(2) {
                chains[chain].push(
                    cell.parse()
                        .map_err(|_| Error::Ingest("non-numeric draw value".into()))?,
                );
            }
        }
        if chains.is_empty() {
            return Err(Error::Ingest("draws file has no rows".into()));
        }
        let rows = kept.len();
        for (c, data) in chains.iter().enumerate() {
            if data.len() != rows * d {
                return Err(Error::Shape(format!(
                    "chain {c} has {} values, expected {}",
                    data.len(),
                    rows * d
                )));
            }
        }
        let mut config = McmcConfig::new(0);
        config.chains = chains.len();
        config.iterations = kept.last().copied().unwrap_or(1);
        config.burn_in = 0;
        config.thin = 1;
        Ok(PosteriorDraws {
            names,
            transforms: vec![Transform::Identity; d],
            kept_iterations: kept,
            chains,
            acceptance: Vec::new(),
            block_labels: Vec::new(),
            config,
            scale_history: None,
        })
    }
}

const SCALE_UNDERFLOW: f64 = 1e-12;

struct ChainOutput {
    draws: Vec<f64>,
    acceptance: Vec<f64>,
    scale_history: Option<Vec<Vec<f64>>>,
}

/// Runs all chains of the protocol and collects retained draws.
///
/// `init` is on the constrained scale and is shared by every chain; the
/// chains decorrelate through their independent proposal streams. The
/// result is a pure function of `(target, init, config)`.
pub fn run_chains(
    target: &TargetDensity,
    init: &[f64],
    config: &McmcConfig,
) -> Result<PosteriorDraws> {
    config.validate()?;
    if init.len() != target.dim() {
        return Err(Error::Shape(format!(
            "init has {} values for {} parameters",
            init.len(),
            target.dim()
        )));
    }
    for (j, (&x, t)) in init.iter().zip(&target.transforms).enumerate() {
        if !x.is_finite() {
            return Err(Error::Init(format!("parameter '{}' is not finite", target.names[j])));
        }
        if *t == Transform::Log && x <= 0.0 {
            return Err(Error::Init(format!(
                "parameter '{}' must be positive, got {x}",
                target.names[j]
            )));
        }
    }
    let lp0 = (target.log_density)(init);
    if !lp0.is_finite() {
        return Err(Error::Init(format!("log density at the initial point is {lp0}")));
    }

    let mut outputs = Vec::with_capacity(config.chains);
    for chain in 0..config.chains {
        outputs.push(run_single_chain(target, init, config, chain)?);
    }

    Ok(PosteriorDraws {
        names: target.names.clone(),
        transforms: target.transforms.clone(),
        kept_iterations: (1..=config.retained_per_chain())
            .map(|k| config.burn_in + k * config.thin)
            .collect(),
        chains: outputs.iter().map(|o| o.draws.clone()).collect(),
        acceptance: outputs.iter().map(|o| o.acceptance.clone()).collect(),
        block_labels: (0..target.blocks.len()).map(|b| target.block_label(b)).collect(),
        config: config.clone(),
        scale_history: if config.track_scale_history {
            Some(outputs.into_iter().map(|o| o.scale_history.unwrap()).collect())
        } else {
            None
        },
    })
}

fn run_single_chain(
    target: &TargetDensity,
    init: &[f64],
    config: &McmcConfig,
    chain: usize,
) -> Result<ChainOutput> {
    let dim = target.dim();
    let n_blocks = target.blocks.len();
    let mut rng = substream_rng(config.seed, chain as u64);

    let mut u: Vec<f64> = init
        .iter()
        .zip(&target.transforms)
        .map(|(&x, t)| t.to_unconstrained(x))
        .collect();
    let mut x: Vec<f64> = init.to_vec();

    let jacobian = |u: &[f64]| -> f64 {
        u.iter()
            .zip(&target.transforms)
            .filter(|(_, t)| **t == Transform::Log)
            .map(|(v, _)| v)
            .sum()
    };
    let mut lp = (target.log_density)(&x) + jacobian(&u);

    let mut scales = vec![config.initial_scale; n_blocks];
    let targets: Vec<f64> = target
        .blocks
        .iter()
        .map(|b| {
            config
                .target_acceptance
                .unwrap_or(if b.len() == 1 { 0.44 } else { 0.234 })
        })
        .collect();

    let mut burn_accepts = vec![0u64; n_blocks];
    let mut post_accepts = vec![0u64; n_blocks];
    let retained = config.retained_per_chain();
    let mut draws = Vec::with_capacity(retained * dim);
    let mut scale_history: Option<Vec<Vec<f64>>> = config
        .track_scale_history
        .then(|| vec![Vec::with_capacity(config.iterations); n_blocks]);

    // scratch buffers for the proposed block coordinates
    let mut saved_u = Vec::with_capacity(8);
    let mut saved_x = Vec::with_capacity(8);

    for iter in 1..=config.iterations {
        let in_burn_in = iter <= config.burn_in;
        for (b, block) in target.blocks.iter().enumerate() {
            saved_u.clear();
            saved_x.clear();
            for &j in block {
                saved_u.push(u[j]);
                saved_x.push(x[j]);
                let step: f64 = StandardNormal.sample(&mut rng);
                u[j] += scales[b] * step;
                x[j] = target.transforms[j].to_constrained(u[j]);
            }
            let mut lp_new = (target.log_density)(&x) + jacobian(&u);
            if lp_new.is_nan() {
                lp_new = f64::NEG_INFINITY;
            }
            let accept_prob = (lp_new - lp).min(0.0).exp();
            let accepted = rng.random::<f64>() < accept_prob;
            if accepted {
                lp = lp_new;
                if in_burn_in {
                    burn_accepts[b] += 1;
                } else {
                    post_accepts[b] += 1;
                }
            } else {
                for (slot, &j) in block.iter().enumerate() {
                    u[j] = saved_u[slot];
                    x[j] = saved_x[slot];
                }
            }
            if in_burn_in {
                let gamma = (iter as f64).powf(-0.6);
                scales[b] = (scales[b].ln() + gamma * (accept_prob - targets[b])).exp();
            }
            if let Some(hist) = scale_history.as_mut() {
                hist[b].push(scales[b]);
            }
        }

        if iter == config.burn_in {
            for (b, &acc) in burn_accepts.iter().enumerate() {
                if acc == 0 && scales[b] < SCALE_UNDERFLOW {
                    return Err(Error::StuckChain {
                        chain,
                        block: target.block_label(b),
                    });
                }
            }
        }

        if iter > config.burn_in && (iter - config.burn_in) % config.thin == 0 {
            draws.extend_from_slice(&x);
        }
    }

    let post_iters = (config.iterations - config.burn_in) as f64;
    Ok(ChainOutput {
        draws,
        acceptance: post_accepts.iter().map(|&a| a as f64 / post_iters).collect(),
        scale_history,
    })
}
