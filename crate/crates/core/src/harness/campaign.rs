//! Monte Carlo campaigns over randomized attacks.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{LeaderProfile, LinkAttack, ScenarioConfig};
use super::metrics::RunMetrics;
use super::sim::{run_metrics, SimError};
use crate::attack::{attack_stream_seed, randomize_attack_params, AttackSpec, RandomAttack, RandomRanges};
use crate::dynamics::{ActuationLimits, PlatoonParams};

/// A batch of runs per attack family on a common base scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CampaignConfig {
    pub base: ScenarioConfig,
    #[serde(default = "default_runs")]
    pub runs: usize,
    #[serde(default = "all_families")]
    pub families: Vec<RandomAttack>,
    #[serde(default)]
    pub ranges: RandomRanges,
}

fn default_runs() -> usize {
    100
}

fn all_families() -> Vec<RandomAttack> {
    RandomAttack::ALL.to_vec()
}

impl Default for CampaignConfig {
    fn default() -> Self {
        Self {
            base: default_base(),
            runs: default_runs(),
            families: all_families(),
            ranges: RandomRanges::default(),
        }
    }
}

/// Eleven highway vehicles cruising for 100 s, then an emergency brake.
pub fn default_base() -> ScenarioConfig {
    let limits = ActuationLimits::highway();
    let platoon = PlatoonParams {
        d: 6.0,
        v_des: 25.0,
        n: 11,
    };
    let mut cfg = ScenarioConfig::new(platoon, limits, 100.0);
    cfg.leader = LeaderProfile {
        sinusoid: None,
        emergency_brake_at: Some(100.0),
    };
    cfg
}

/// The scenario of one run: every follower's predecessor is compromised
/// from the start with independently drawn parameters.
pub fn campaign_scenario(base: &ScenarioConfig, family: RandomAttack, run: usize, ranges: &RandomRanges) -> ScenarioConfig {
    let mut cfg = base.clone();
    cfg.attacks = (1..cfg.platoon.n as u32)
        .map(|sender| {
            let mut rng = ChaCha8Rng::seed_from_u64(attack_stream_seed(base.seed, family, run as u64, sender));
            let kind = randomize_attack_params(family, &cfg.limits, ranges, &mut rng);
            LinkAttack::new(sender, AttackSpec::always(kind))
        })
        .collect();
    cfg
}

/// Distribution summary of a sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quantiles {
    pub min: f64,
    pub mean: f64,
    pub p05: f64,
    pub p50: f64,
    pub p95: f64,
}

impl Quantiles {
    /// Linear interpolation between order statistics. NaN for an empty sample.
    pub fn of(values: &[f64]) -> Self {
        let mut v: Vec<f64> = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            if v.is_empty() {
                return f64::NAN;
            }
            let x = p * (v.len() - 1) as f64;
            let (lo, hi) = (x.floor() as usize, x.ceil() as usize);
            v[lo] + (v[hi] - v[lo]) * (x - lo as f64)
        };
        Self {
            min: v.first().copied().unwrap_or(f64::NAN),
            mean: if v.is_empty() { f64::NAN } else { v.iter().sum::<f64>() / v.len() as f64 },
            p05: q(0.05),
            p50: q(0.5),
            p95: q(0.95),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FamilySummary {
    pub family: RandomAttack,
    pub runs: usize,
    pub collisions: usize,
    pub attack_phase: Quantiles,
    pub brake_phase: Quantiles,
}

impl FamilySummary {
    pub fn collision_rate(&self) -> f64 {
        if self.runs == 0 {
            0.0
        } else {
            self.collisions as f64 / self.runs as f64
        }
    }

    fn from_runs(family: RandomAttack, runs: &[RunMetrics]) -> Self {
        let attack: Vec<f64> = runs.iter().map(|m| m.min_gap_attack_phase).collect();
        let brake: Vec<f64> = runs
            .iter()
            .map(|m| m.min_gap_brake_phase)
            .filter(|g| g.is_finite())
            .collect();
        Self {
            family,
            runs: runs.len(),
            collisions: runs.iter().filter(|m| m.collided()).count(),
            attack_phase: Quantiles::of(&attack),
            brake_phase: Quantiles::of(&brake),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CampaignResult {
    /// Per family, per run, in run order.
    pub runs: Vec<(RandomAttack, Vec<RunMetrics>)>,
    pub summary: Vec<FamilySummary>,
}

/// Run every family; `workers = 0` uses all cores. Results do not depend on
/// the worker count.
pub fn run_campaign(cfg: &CampaignConfig, workers: usize) -> Result<CampaignResult, SimError> {
    cfg.base.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool");
    let jobs: Vec<(RandomAttack, usize)> = cfg
        .families
        .iter()
        .flat_map(|&f| (0..cfg.runs).map(move |r| (f, r)))
        .collect();
    let results: Vec<RunMetrics> = pool.install(|| {
        jobs.par_iter()
            .map(|&(f, r)| run_metrics(&campaign_scenario(&cfg.base, f, r, &cfg.ranges)))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut runs = Vec::new();
    let mut summary = Vec::new();
    for (i, &f) in cfg.families.iter().enumerate() {
        let chunk = results[i * cfg.runs..(i + 1) * cfg.runs].to_vec();
        summary.push(FamilySummary::from_runs(f, &chunk));
        runs.push((f, chunk));
    }
    Ok(CampaignResult { runs, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::AttackKind;

    #[test]
    fn quantiles_interpolate() {
        let q = Quantiles::of(&[3.0, 1.0, 2.0, 4.0, 5.0]);
        assert_eq!((q.min, q.mean, q.p50), (1.0, 3.0, 3.0));
        assert!((q.p05 - 1.2).abs() < 1e-12);
        assert!((q.p95 - 4.8).abs() < 1e-12);
        assert!(Quantiles::of(&[]).mean.is_nan());
    }

    #[test]
    fn scenarios_are_reproducible_and_cover_every_link() {
        let base = default_base();
        let a = campaign_scenario(&base, RandomAttack::Sinusoid, 7, &RandomRanges::default());
        let b = campaign_scenario(&base, RandomAttack::Sinusoid, 7, &RandomRanges::default());
        let c = campaign_scenario(&base, RandomAttack::Sinusoid, 8, &RandomRanges::default());
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.attacks.len(), 10);
        assert!(a
            .attacks
            .iter()
            .all(|l| matches!(l.kind, AttackKind::ReplaceSinusoid { .. })));
    }
}
