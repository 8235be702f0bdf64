//! Subset Simulation with component-wise Metropolis-Hastings chains.

use std::str::FromStr;

use nalgebra::DVector;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::LimitStateModel;
use crate::rng::{seeded, standard_normal_vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Proposal {
    /// Uniform of width 2 centred on the current component.
    Uniform,
    Normal,
}

impl FromStr for Proposal {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "normal" => Ok(Self::Normal),
            other => Err(Error::Config(format!("unknown SuS proposal `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SusConfig {
    pub n_s: usize,
    pub p0: f64,
    pub proposal: Proposal,
    pub max_levels: usize,
}

impl Default for SusConfig {
    fn default() -> Self {
        Self { n_s: 1000, p0: 0.1, proposal: Proposal::Uniform, max_levels: 30 }
    }
}

impl SusConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.p0 > 0.0 && self.p0 < 1.0) {
            return Err(Error::Config(format!("p0 must lie in (0, 1), got {}", self.p0)));
        }
        if self.n_s < 2 || self.seeds() == 0 || self.seeds() >= self.n_s {
            return Err(Error::Config(format!(
                "n_s = {} with p0 = {} leaves no room for seeds and chains",
                self.n_s, self.p0
            )));
        }
        if self.max_levels == 0 {
            return Err(Error::Config("max_levels must be positive".into()));
        }
        Ok(())
    }

    /// Chains per level, `n_s·p0` rounded.
    pub fn seeds(&self) -> usize {
        (self.n_s as f64 * self.p0).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SusResult {
    pub p_hat: f64,
    pub levels: usize,
    /// Intermediate thresholds `b_1 > b_2 > …`; the final level uses 0.
    pub thresholds: Vec<f64>,
    pub model_calls: u64,
    pub accept_rate: f64,
    pub seed: u64,
}

/// The `p0`-quantile of `values` (order statistic `⌈p0·n⌉`), clipped at 0.
pub fn level_threshold(values: &[f64], p0: f64) -> f64 {
    assert!(!values.is_empty(), "threshold of an empty level");
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let b = sorted[quantile_index(values.len(), p0)];
    if b <= 0.0 {
        0.0
    } else {
        b
    }
}

fn quantile_index(n: usize, p0: f64) -> usize {
    let rank = (p0 * n as f64 - 1e-9).ceil() as usize;
    rank.clamp(1, n) - 1
}

fn propose_component<R: Rng>(x: f64, proposal: Proposal, rng: &mut R) -> f64 {
    let xi = match proposal {
        Proposal::Uniform => x + rng.random_range(-1.0..1.0),
        Proposal::Normal => x + rng.sample::<f64, _>(StandardNormal),
    };
    // Accept against the standard normal marginal ratio φ(ξ)/φ(x).
    let log_ratio = 0.5 * (x * x - xi * xi);
    if rng.random::<f64>().ln() < log_ratio {
        xi
    } else {
        x
    }
}

pub fn subset_simulation(model: &LimitStateModel, config: &SusConfig, seed: u64) -> Result<SusResult> {
    config.validate()?;
    let d = model.dim();
    let start_calls = model.calls();
    let mut rng = seeded(seed);

    let mut samples: Vec<DVector<f64>> = Vec::with_capacity(config.n_s);
    let mut g_values: Vec<f64> = Vec::with_capacity(config.n_s);
    for _ in 0..config.n_s {
        let theta = standard_normal_vector(&mut rng, d);
        g_values.push(model.evaluate(theta.as_slice())?.g);
        samples.push(theta);
    }

    let n_seeds = config.seeds();
    let mut thresholds = Vec::new();
    let mut moves = 0u64;
    let mut accepted = 0u64;
    loop {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.sort_by(|&a, &b| g_values[a].total_cmp(&g_values[b]));
        let b = g_values[order[quantile_index(samples.len(), config.p0)]];
        if b <= 0.0 {
            let level = thresholds.len();
            let fraction = g_values.iter().filter(|g| **g <= 0.0).count() as f64 / samples.len() as f64;
            return Ok(SusResult {
                p_hat: config.p0.powi(level as i32) * fraction,
                levels: level + 1,
                thresholds,
                model_calls: model.calls() - start_calls,
                accept_rate: if moves == 0 { 0.0 } else { accepted as f64 / moves as f64 },
                seed,
            });
        }
        thresholds.push(b);
        if thresholds.len() >= config.max_levels {
            return Err(Error::NoConvergence { max_levels: config.max_levels, thresholds });
        }

        let base = config.n_s / n_seeds;
        let extra = config.n_s % n_seeds;
        let mut next_samples = Vec::with_capacity(config.n_s);
        let mut next_g = Vec::with_capacity(config.n_s);
        for (c, &idx) in order.iter().take(n_seeds).enumerate() {
            let length = base + usize::from(c < extra);
            let mut theta = samples[idx].clone();
            let mut g = g_values[idx];
            next_samples.push(theta.clone());
            next_g.push(g);
            for _ in 1..length {
                let candidate = theta.map(|x| propose_component(x, config.proposal, &mut rng));
                let g_candidate = model.evaluate(candidate.as_slice())?.g;
                moves += 1;
                if g_candidate <= b {
                    theta = candidate;
                    g = g_candidate;
                    accepted += 1;
                }
                next_samples.push(theta.clone());
                next_g.push(g);
            }
        }
        samples = next_samples;
        g_values = next_g;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn linear(beta: f64) -> LimitStateModel {
        LimitStateModel::from_fn("linear", 1, move |t, g| {
            g[0] = -1.0;
            beta - t[0]
        })
    }

    #[test]
    fn threshold_order_statistic() {
        let values: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(level_threshold(&values, 0.1), 1.0);
        assert_eq!(level_threshold(&[-1.0, -2.0, -0.5], 0.1), 0.0);
        assert_eq!(level_threshold(&[2.0, 1.0, 1.0, 3.0], 0.5), 1.0);
        let many: Vec<f64> = (0..1000).map(f64::from).collect();
        assert_eq!(level_threshold(&many, 0.1), 99.0);
    }

    #[test]
    fn immediate_failure() {
        let model = LimitStateModel::from_fn("fail", 2, |_, g| {
            g.fill(0.0);
            -1.0
        });
        let r = subset_simulation(&model, &SusConfig::default(), 1).unwrap();
        assert_eq!(r.p_hat, 1.0);
        assert_eq!(r.levels, 1);
        assert_eq!(r.model_calls, 1000);
    }

    #[test]
    fn call_accounting_and_monotone_thresholds() {
        let model = linear(3.0);
        let config = SusConfig::default();
        let r = subset_simulation(&model, &config, 7).unwrap();
        let expected = 1000 + (r.levels as u64 - 1) * 900;
        assert_eq!(r.model_calls, expected);
        assert!(r.thresholds.windows(2).all(|w| w[1] < w[0]));
        assert!(r.p_hat > 0.0 && r.p_hat <= 1.0);
    }

    #[test]
    fn seeds_are_deterministic() {
        let model = linear(2.5);
        let a = subset_simulation(&model, &SusConfig::default(), 3).unwrap();
        let b = subset_simulation(&model, &SusConfig::default(), 3).unwrap();
        assert_eq!(a.p_hat, b.p_hat);
        assert_eq!(a.thresholds, b.thresholds);
    }

    #[test]
    fn level_cap() {
        let model = linear(3.0);
        let config = SusConfig { max_levels: 1, ..SusConfig::default() };
        match subset_simulation(&model, &config, 1) {
            Err(Error::NoConvergence { thresholds, .. }) => assert_eq!(thresholds.len(), 1),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn invalid_configs() {
        assert!(SusConfig { p0: 1.0, ..SusConfig::default() }.validate().is_err());
        assert!(SusConfig { n_s: 5, p0: 0.01, ..SusConfig::default() }.validate().is_err());
        assert!("gaussian".parse::<Proposal>().is_err());
    }

    #[test]
    fn uneven_chain_lengths_fill_the_level() {
        let model = linear(2.0);
        let config = SusConfig { n_s: 1005, p0: 0.1, ..SusConfig::default() };
        let r = subset_simulation(&model, &config, 2).unwrap();
        // 101 seeds; every non-seed state costs one call.
        assert_eq!(r.model_calls, 1005 + (r.levels as u64 - 1) * (1005 - 101));
    }
}
