//! ACC gain synthesis under actuator saturation.
//!
//! The linear spacing law `u = -k p̃ - k h (v - v_des) - c ṽ` gives the
//! vehicle-to-vehicle transfer function
//!
//! ```text
//!            c s + k
//! G(s) = -----------------------
//!        s² + (c + h k) s + k
//! ```
//!
//! The position gain `k` places the braking-saturation line below `(ṽ, p̃) = (0, d)`
//! for every velocity, and `c` keeps the worst-case emergency-brake excursion
//! `p̃_max` at or below `d`. Both depend only on `(d, h)`, so tuning reduces to
//! choosing a headway `h` that also satisfies the string-stability pole/zero
//! ordering and the no-overshoot (overdamped) condition.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::ActuationLimits;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TuningError {
    #[error("infeasible headway: d - h*v_des = {margin} must be positive (d={d}, h={h}, v_des={v_des})")]
    InfeasibleHeadway { d: f64, h: f64, v_des: f64, margin: f64 },
    #[error("no feasible headway in ({lo}, {hi}) at resolution {resolution} for d={d}, v_des={v_des}")]
    NoFeasibleHeadway {
        d: f64,
        v_des: f64,
        lo: f64,
        hi: f64,
        resolution: f64,
    },
    #[error("invalid gains: {0}")]
    InvalidGains(String),
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
}

/// Gains of the ACC law plus the feed-forward authority fraction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerGains {
    /// Position gain (1/s²).
    pub k: f64,
    /// Headway parameter (s).
    pub h: f64,
    /// Relative-velocity gain (1/s).
    pub c: f64,
    /// Fraction of `k d` the feed-forward term may contribute, in `[0, 1]`.
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

fn default_alpha() -> f64 {
    1.0
}

impl ControllerGains {
    pub fn validate(&self) -> Result<(), TuningError> {
        let all_finite = [self.k, self.h, self.c, self.alpha].iter().all(|x| x.is_finite());
        if !all_finite || self.k <= 0.0 || self.h <= 0.0 || self.c <= 0.0 {
            return Err(TuningError::InvalidGains(format!(
                "need finite k, h, c > 0; got k={} h={} c={}",
                self.k, self.h, self.c
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(TuningError::InvalidGains(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    /// Slope `c / k` of the braking-saturation line in the `ṽ-p̃` plane.
    #[inline]
    pub fn c_over_k(&self) -> f64 {
        self.c / self.k
    }
}

fn headway_margin(d: f64, h: f64, v_des: f64) -> Result<f64, TuningError> {
    let margin = d - h * v_des;
    if margin > 0.0 && margin.is_finite() {
        Ok(margin)
    } else {
        Err(TuningError::InfeasibleHeadway { d, h, v_des, margin })
    }
}

/// `k = -u_min / (d - h v_des)`.
pub fn compute_k(d: f64, h: f64, v_des: f64, limits: &ActuationLimits) -> Result<f64, TuningError> {
    Ok(limits.brake() / headway_margin(d, h, v_des)?)
}

/// `c = v_max / (d - h v_des)`.
pub fn compute_c(d: f64, h: f64, v_des: f64, limits: &ActuationLimits) -> Result<f64, TuningError> {
    Ok(limits.v_max / headway_margin(d, h, v_des)?)
}

/// Gains `(k, h, c)` implied by a headway choice, with `alpha = 1`.
pub fn gains_for_headway(
    d: f64,
    h: f64,
    v_des: f64,
    limits: &ActuationLimits,
) -> Result<ControllerGains, TuningError> {
    Ok(ControllerGains {
        k: compute_k(d, h, v_des, limits)?,
        h,
        c: compute_c(d, h, v_des, limits)?,
        alpha: 1.0,
    })
}

/// `|G(jω)|` of the vehicle-to-vehicle spacing transfer function.
pub fn transfer_magnitude(gains: &ControllerGains, omega: f64) -> f64 {
    let ControllerGains { k, h, c, .. } = *gains;
    let w2 = omega * omega;
    let damping = c + h * k;
    let num = c * c * w2 + k * k;
    let den = (k - w2).powi(2) + damping * damping * w2;
    (num / den).sqrt()
}

/// Which of the two string-stability inequalities hold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StabilityReport {
    /// `(c+hk)/2 - sqrt((c+hk)² - 4k)/2` (the slow pole magnitude).
    pub slow_pole: f64,
    /// Zero magnitude `k / c`.
    pub zero: f64,
    /// `(c+hk)² - 4k`.
    pub discriminant: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StabilityViolation {
    /// The slow pole is not strictly below the zero.
    PoleNotBelowZero { slow_pole: f64, zero: f64 },
    /// The closed loop is critically damped or underdamped.
    Underdamped { discriminant: f64 },
}

impl std::fmt::Display for StabilityViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Self::PoleNotBelowZero { slow_pole, zero } => {
                write!(f, "slow pole {slow_pole} is not below zero {zero}")
            }
            Self::Underdamped { discriminant } => {
                write!(f, "(c+hk)^2 - 4k = {discriminant} is not positive")
            }
        }
    }
}

impl StabilityReport {
    pub fn overdamped(&self) -> bool {
        self.discriminant > 0.0
    }

    pub fn pole_below_zero(&self) -> bool {
        // NaN when underdamped, which compares false.
        self.slow_pole < self.zero
    }

    pub fn is_stable(&self) -> bool {
        self.pole_below_zero() && self.overdamped()
    }

    pub fn violations(&self) -> Vec<StabilityViolation> {
        let mut out = Vec::new();
        if !self.pole_below_zero() {
            out.push(StabilityViolation::PoleNotBelowZero {
                slow_pole: self.slow_pole,
                zero: self.zero,
            });
        }
        if !self.overdamped() {
            out.push(StabilityViolation::Underdamped {
                discriminant: self.discriminant,
            });
        }
        out
    }
}

/// Evaluate the pole/zero ordering and damping conditions with zero tolerance.
pub fn string_stability(gains: &ControllerGains) -> StabilityReport {
    let ControllerGains { k, h, c, .. } = *gains;
    let damping = c + h * k;
    let discriminant = damping * damping - 4.0 * k;
    StabilityReport {
        slow_pole: 0.5 * damping - 0.5 * discriminant.sqrt(),
        zero: k / c,
        discriminant,
    }
}

/// Convenience wrapper returning only the verdict.
pub fn string_stability_ok(gains: &ControllerGains) -> bool {
    string_stability(gains).is_stable()
}

/// Real closed-loop poles of `s² + (c+hk) s + k`, fastest first, if the
/// discriminant is non-negative.
pub fn closed_loop_poles(gains: &ControllerGains) -> Option<(f64, f64)> {
    let damping = gains.c + gains.h * gains.k;
    let disc = damping * damping - 4.0 * gains.k;
    if disc < 0.0 {
        return None;
    }
    let root = disc.sqrt();
    Some((0.5 * (-damping - root), 0.5 * (-damping + root)))
}

/// Whether `(d, h)` yields positive gains that are also string stable.
pub fn is_feasible(d: f64, h: f64, v_des: f64, limits: &ActuationLimits) -> bool {
    if h.is_nan() || h <= 0.0 {
        return false;
    }
    match gains_for_headway(d, h, v_des, limits) {
        Ok(g) => string_stability_ok(&g),
        Err(_) => false,
    }
}

/// Boolean feasibility map over a `(d, h)` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityGrid {
    pub d: Vec<f64>,
    pub h: Vec<f64>,
    /// Row-major: `cells[i][j]` is `(d[i], h[j])`.
    pub cells: Vec<Vec<bool>>,
}

impl FeasibilityGrid {
    pub fn get(&self, i: usize, j: usize) -> bool {
        self.cells[i][j]
    }

    pub fn feasible_count(&self) -> usize {
        self.cells.iter().flatten().filter(|&&b| b).count()
    }

    /// Long-format CSV with header `d,h,feasible`.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["d", "h", "feasible"])?;
        for (i, d) in self.d.iter().enumerate() {
            for (j, h) in self.h.iter().enumerate() {
                let flag = if self.cells[i][j] { "1" } else { "0" };
                w.write_record([d.to_string(), h.to_string(), flag.to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn check_grid(name: &str, grid: &[f64]) -> Result<(), TuningError> {
    if grid.is_empty() {
        return Err(TuningError::InvalidGrid(format!("{name} grid is empty")));
    }
    if grid.iter().any(|x| !x.is_finite()) || grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(TuningError::InvalidGrid(format!(
            "{name} grid must be finite and strictly increasing"
        )));
    }
    Ok(())
}

/// Evaluate [`is_feasible`] on every `(d, h)` pair of the two grids.
pub fn feasible_region(
    d_grid: &[f64],
    h_grid: &[f64],
    v_des: f64,
    limits: &ActuationLimits,
) -> Result<FeasibilityGrid, TuningError> {
    check_grid("d", d_grid)?;
    check_grid("h", h_grid)?;
    let cells = d_grid
        .iter()
        .map(|&d| h_grid.iter().map(|&h| is_feasible(d, h, v_des, limits)).collect())
        .collect();
    Ok(FeasibilityGrid {
        d: d_grid.to_vec(),
        h: h_grid.to_vec(),
        cells,
    })
}

/// Headway selection policy: scan `h = resolution, 2·resolution, ...` below
/// `d / v_des` and keep the first admissible value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HeadwaySearch {
    #[serde(default = "HeadwaySearch::default_resolution")]
    pub resolution: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
}

impl HeadwaySearch {
    pub const DEFAULT_RESOLUTION: f64 = 0.01;

    fn default_resolution() -> f64 {
        Self::DEFAULT_RESOLUTION
    }

    pub fn with_resolution(resolution: f64) -> Self {
        Self {
            resolution,
            ..Self::default()
        }
    }
}

impl Default for HeadwaySearch {
    fn default() -> Self {
        Self {
            resolution: Self::DEFAULT_RESOLUTION,
            alpha: 1.0,
        }
    }
}

/// Smallest admissible headway on the search grid and the gains it implies.
pub fn tune_gains(
    d: f64,
    v_des: f64,
    limits: &ActuationLimits,
    search: &HeadwaySearch,
) -> Result<ControllerGains, TuningError> {
    let res = search.resolution;
    if !(res.is_finite() && res > 0.0) {
        return Err(TuningError::InvalidGrid(format!(
            "headway resolution must be positive, got {res}"
        )));
    }
    if !(0.0..=1.0).contains(&search.alpha) {
        return Err(TuningError::InvalidGains(format!(
            "alpha must lie in [0, 1], got {}",
            search.alpha
        )));
    }
    let h_sup = d / v_des;
    let mut i: u64 = 1;
    loop {
        // Multiplying instead of accumulating keeps grid points exact multiples.
        let h = i as f64 * res;
        if h * v_des >= d {
            break;
        }
        if is_feasible(d, h, v_des, limits) {
            let mut g = gains_for_headway(d, h, v_des, limits)?;
            g.alpha = search.alpha;
            return Ok(g);
        }
        i += 1;
    }
    Err(TuningError::NoFeasibleHeadway {
        d,
        v_des,
        lo: 0.0,
        hi: h_sup,
        resolution: res,
    })
}

/// Worst-case relative position reached during an emergency brake of the
/// predecessor, starting on the braking-saturation line with relative
/// velocity `v_tilde ≥ 0` and ego velocity `v`.
pub fn p_tilde_max(
    v_tilde: f64,
    v: f64,
    gains: &ControllerGains,
    limits: &ActuationLimits,
    d: f64,
) -> f64 {
    let brake = limits.brake();
    d - (gains.c_over_k() - v / brake) * v_tilde - 0.5 * v_tilde * v_tilde / brake
}

#[cfg(test)]
mod tests {
    use super::*;

    fn robot() -> ActuationLimits {
        ActuationLimits::scaled_robot()
    }

    fn highway_limits() -> ActuationLimits {
        ActuationLimits {
            u_min: -7.848,
            u_max: 4.905,
            v_max: 27.78,
        }
    }

    #[test]
    fn k_and_c_examples() {
        let k = compute_k(0.5, 0.21, 1.0, &robot()).unwrap();
        assert!((k - 3.448_275_862).abs() < 1e-6);
        let c = compute_c(0.5, 0.21, 1.0, &robot()).unwrap();
        assert!((c - 4.827_586_207).abs() < 1e-6);

        let hw = highway_limits();
        let k = compute_k(6.0, 0.112, 25.0, &hw).unwrap();
        assert!((k - 2.4525).abs() < 1e-12);
        assert!((k - 2.457).abs() / 2.457 < 5e-3);
        let c = compute_c(6.0, 0.112, 25.0, &hw).unwrap();
        assert!((c - 8.68125).abs() < 1e-12);

        let unit = ActuationLimits { u_min: -1.0, u_max: 1.0, v_max: 1.0 };
        assert!((compute_k(1.0, 1e-12, 3.0, &unit).unwrap() - 1.0).abs() < 1e-9);
        assert!((compute_c(1.0, 1e-12, 3.0, &unit).unwrap() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn non_positive_headway_margin_is_rejected() {
        let hw = highway_limits();
        assert!(matches!(
            compute_k(6.0, 0.24, 25.0, &hw),
            Err(TuningError::InfeasibleHeadway { .. })
        ));
        assert!(compute_c(6.0, 0.3, 25.0, &hw).is_err());
    }

    #[test]
    fn transfer_magnitude_limits() {
        let g = ControllerGains { k: 3.45, h: 0.21, c: 4.83, alpha: 1.0 };
        assert!((transfer_magnitude(&g, 1e-9) - 1.0).abs() < 1e-12);
        assert!(transfer_magnitude(&g, 1.0) < 1.0);
        assert!(transfer_magnitude(&g, 1e9) < 1e-8);
    }

    #[test]
    fn stability_examples() {
        let robot_set = ControllerGains { k: 3.45, h: 0.21, c: 4.83, alpha: 1.0 };
        assert!(string_stability_ok(&robot_set));

        let under = ControllerGains { k: 1.0, h: 0.0, c: 0.1, alpha: 1.0 };
        let report = string_stability(&under);
        assert!(!report.is_stable());
        assert!(report
            .violations()
            .iter()
            .any(|v| matches!(v, StabilityViolation::Underdamped { .. })));
    }

    #[test]
    fn printed_highway_gains_sit_just_outside_the_strict_region() {
        // k=2.4525, h=0.112, c=8.68: slow pole 0.28277 vs zero k/c = 0.28251.
        let g = ControllerGains { k: 2.4525, h: 0.112, c: 8.68125, alpha: 1.0 };
        let r = string_stability(&g);
        assert!(r.overdamped());
        assert!(!r.pole_below_zero());
        assert!((r.slow_pole - r.zero) > 0.0 && (r.slow_pole - r.zero) < 5e-4);
    }

    #[test]
    fn feasible_region_examples() {
        let hw = highway_limits();
        // boundary h = d / v_des and beyond is infeasible
        assert!(!is_feasible(6.0, 0.24, 25.0, &hw));
        assert!(!is_feasible(6.0, 0.25, 25.0, &hw));
        assert!(is_feasible(6.0, 0.114, 25.0, &hw));
        assert!(!is_feasible(6.0, 0.113, 25.0, &hw));

        let grid = feasible_region(&[2.0, 6.0, 10.0], &[0.05, 0.12, 0.2, 0.24], 25.0, &hw).unwrap();
        assert!(grid.get(1, 1));
        assert!(!grid.get(1, 3));
        assert!(!grid.get(0, 1)); // h*v_des = 3 > d = 2
        assert!(feasible_region(&[], &[0.1], 25.0, &hw).is_err());
        assert!(feasible_region(&[1.0, 1.0], &[0.1], 25.0, &hw).is_err());
    }

    #[test]
    fn region_csv_layout() {
        let hw = highway_limits();
        let grid = feasible_region(&[6.0], &[0.12, 0.3], 25.0, &hw).unwrap();
        let mut buf = Vec::new();
        grid.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "d,h,feasible\n6,0.12,1\n6,0.3,0\n");
    }

    #[test]
    fn tune_robot_platform() {
        let g = tune_gains(0.5, 1.0, &robot(), &HeadwaySearch::default()).unwrap();
        assert!((g.h - 0.21).abs() < 1e-12);
        assert!((g.k - 3.45).abs() < 0.01);
        assert!((g.c - 4.83).abs() < 0.01);
        assert_eq!(g.alpha, 1.0);

        // finer grid finds the strict boundary at 0.209
        let fine = tune_gains(0.5, 1.0, &robot(), &HeadwaySearch::with_resolution(1e-3)).unwrap();
        assert!((fine.h - 0.209).abs() < 1e-12);
    }

    #[test]
    fn tune_highway() {
        let hw = highway_limits();
        let fine = tune_gains(6.0, 25.0, &hw, &HeadwaySearch::with_resolution(1e-3)).unwrap();
        assert!((fine.h - 0.114).abs() < 1e-12);
        assert!((fine.k - 2.4525).abs() / 2.4525 < 0.02);
        let coarse = tune_gains(6.0, 25.0, &hw, &HeadwaySearch::default()).unwrap();
        assert!((coarse.h - 0.12).abs() < 1e-12);
    }

    #[test]
    fn tune_reports_infeasible_request() {
        let hw = highway_limits();
        let err = tune_gains(0.01, 25.0, &hw, &HeadwaySearch::with_resolution(1e-3)).unwrap_err();
        match err {
            TuningError::NoFeasibleHeadway { hi, .. } => assert!((hi - 4e-4).abs() < 1e-15),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn p_tilde_max_examples() {
        let g = tune_gains(0.5, 1.0, &robot(), &HeadwaySearch::default()).unwrap();
        assert_eq!(p_tilde_max(0.0, 0.7, &g, &robot(), 0.5), 0.5);
        let v = p_tilde_max(1.0, 1.4, &g, &robot(), 0.5);
        assert!(v.abs() < 1e-12, "{v}");
    }

    #[test]
    fn tuned_slope_identity() {
        for (d, v_des, lim) in [(0.5, 1.0, robot()), (6.0, 25.0, highway_limits())] {
            let g = tune_gains(d, v_des, &lim, &HeadwaySearch::default()).unwrap();
            let expect = lim.v_max / lim.brake();
            assert!((g.c_over_k() - expect).abs() <= 1e-12 * expect);
        }
    }

    #[test]
    fn poles_real_and_negative_when_overdamped() {
        let g = tune_gains(6.0, 25.0, &highway_limits(), &HeadwaySearch::default()).unwrap();
        let (fast, slow) = closed_loop_poles(&g).unwrap();
        assert!(fast < slow && slow < 0.0);
        assert!(closed_loop_poles(&ControllerGains { k: 1.0, h: 0.0, c: 0.1, alpha: 1.0 }).is_none());
    }
}
