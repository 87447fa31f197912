//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use rand::Rng;

use platoon::attack::{AttackKind, AttackSpec, RandomAttack, RandomRanges};
use platoon::controllers::{acc_law, u_ff_max};
use platoon::coordinator::{solve_topology, tie_break, ForbiddenLinks, TopologyError, VehicleId};
use platoon::detector::{residual_closed_form, Detector, DetectorConfig};
use platoon::dynamics::{ActuationLimits, PlatoonParams, RelativeState};
use platoon::gain_tuning::{feasible_region, gains_for_headway, transfer_magnitude, tune_gains, ControllerGains, HeadwaySearch};
use platoon::harness::campaign::{run_campaign, CampaignConfig, CampaignResult};
use platoon::harness::config::{GainsConfig, LeaderProfile, LinkAttack, ScenarioConfig, Sinusoid};
use platoon::harness::export::write_aggregate;
use platoon::harness::sim::{run_metrics, run_scenario};
use platoon::rearrange::Lane;

use common::*;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn robot_platoon(n: usize) -> PlatoonParams {
    PlatoonParams { d: 0.5, v_des: 1.0, n }
}

fn highway_platoon(n: usize) -> PlatoonParams {
    PlatoonParams { d: 6.0, v_des: 25.0, n }
}

fn robot_gains() -> ControllerGains {
    tune_gains(0.5, 1.0, &ActuationLimits::scaled_robot(), &HeadwaySearch::default()).unwrap()
}

fn highway_gains() -> ControllerGains {
    tune_gains(6.0, 25.0, &ActuationLimits::highway(), &HeadwaySearch::default()).unwrap()
}

fn c1_robot_gains() -> Outcome {
    let t0 = Instant::now();
    let g = robot_gains();
    let el = t0.elapsed();
    let ok = (g.k - 3.45).abs() <= 0.01 && (g.h - 0.21).abs() <= 0.01 && (g.c - 4.83).abs() <= 0.01;
    check(ok && within(el, 1.0), format!("k={:.4} h={:.4} c={:.4} in {:.1?}", g.k, g.h, g.c, el))
}

fn c2_highway_gains() -> Outcome {
    let g = gains_for_headway(6.0, 0.112, 25.0, &ActuationLimits::highway()).map_err(|e| e.to_string())?;
    let ek = (g.k - 2.457).abs() / 2.457;
    let ec = (g.c - 8.69).abs() / 8.69;
    check(
        ek <= 0.005 && ec <= 0.005,
        format!("k={:.4} ({:.2}% off) c={:.4} ({:.2}% off)", g.k, 100.0 * ek, g.c, 100.0 * ec),
    )
}

fn c3_string_stability() -> Outcome {
    let t0 = Instant::now();
    let mut worst: f64 = 0.0;
    let mut dc_err: f64 = 0.0;
    for g in [robot_gains(), highway_gains()] {
        for i in 0..10_000 {
            let w = 10f64.powf(-3.0 + 6.0 * i as f64 / 9_999.0);
            worst = worst.max(transfer_magnitude(&g, w));
        }
        dc_err = dc_err.max((transfer_magnitude(&g, 1e-9) - 1.0).abs());
    }
    let el = t0.elapsed();
    check(
        worst < 1.0 && dc_err <= 1e-6 && within(el, 1.0),
        format!("max |G| = 1 - {:.3e}, | |G(0)| - 1 | = {:.1e}, {:.1?}", 1.0 - worst, dc_err, el),
    )
}

fn c4_filter_identities() -> Outcome {
    let mut r = rng(4);
    let (mut err_a, mut worst_b) = (0.0f64, f64::NEG_INFINITY);
    for _ in 0..10_000 {
        let lim = if r.random_bool(0.5) { ActuationLimits::highway() } else { ActuationLimits::scaled_robot() };
        let (d, v_des) = if lim == ActuationLimits::highway() { (6.0, 25.0) } else { (0.5, 1.0) };
        let p = PlatoonParams { d, v_des, n: 2 };
        let mut g = if d == 6.0 { highway_gains() } else { robot_gains() };
        g.alpha = r.random_range(0.0..=1.0);
        let ck = g.c / g.k;
        // (a) on the boundary at standstill
        let vt = r.random_range(-2.0 * lim.v_max..2.0 * lim.v_max);
        let rel = RelativeState { p_tilde: d - ck * vt, v_tilde: vt };
        err_a = err_a.max((acc_law(rel, 0.0, &g, &p) - lim.u_min).abs());
        // (b) on or beyond the shrunk boundary
        let v = r.random_range(0.0..=lim.v_max);
        let vt = r.random_range(-lim.v_max..lim.v_max);
        let beyond = if r.random_bool(0.5) { 0.0 } else { r.random_range(0.0..3.0 * d) };
        let p_tilde = g.alpha * d - ck * vt + beyond;
        let rel = RelativeState { p_tilde, v_tilde: vt };
        worst_b = worst_b.max(acc_law(rel, v, &g, &p) + u_ff_max(v, &g, &p));
    }
    check(
        err_a <= 1e-9 && worst_b <= 1e-9,
        format!("max |u_lin - u_min| = {err_a:.1e}, max u_lin + u_ff_max = {worst_b:.1e}"),
    )
}

fn c5_emergency_brake() -> Outcome {
    let t0 = Instant::now();
    let lim = ActuationLimits::highway();
    let v_des = 25.0;
    let d_grid: Vec<f64> = (1..=60).map(|i| 0.5 * i as f64).collect();
    let h_grid: Vec<f64> = (1..=100).map(|i| 0.02 * i as f64).collect();
    let region = feasible_region(&d_grid, &h_grid, v_des, &lim).map_err(|e| e.to_string())?;
    let mut cells = Vec::new();
    for (i, &d) in d_grid.iter().enumerate() {
        for (j, &h) in h_grid.iter().enumerate() {
            if region.get(i, j) {
                cells.push((d, h));
            }
        }
    }
    if cells.len() < 50 {
        return Err(format!("only {} feasible cells", cells.len()));
    }
    let mut r = rng(5);
    let mut min_gap = f64::INFINITY;
    let mut worst = (0.0, 0.0);
    for _ in 0..50 {
        let (d, h) = cells.swap_remove(r.random_range(0..cells.len()));
        let mut cfg = ScenarioConfig::new(PlatoonParams { d, v_des, n: 2 }, lim, 1.0);
        cfg.cacc = false;
        cfg.gains = GainsConfig::Headway { h };
        cfg.leader.emergency_brake_at = Some(1.0);
        let m = run_metrics(&cfg).map_err(|e| e.to_string())?;
        if m.overall_min_gap() < min_gap {
            min_gap = m.overall_min_gap();
            worst = (d, h);
        }
    }
    let el = t0.elapsed();
    check(
        min_gap >= 0.0 && within(el, 30.0),
        format!("min gap {min_gap:.4} m at d={} h={}, {:.1?}", worst.0, worst.1, el),
    )
}

fn illustrative_scenario() -> ScenarioConfig {
    let lim = ActuationLimits::highway();
    let mut cfg = ScenarioConfig::new(highway_platoon(3), lim, 11.0);
    cfg.alpha = 1.0;
    cfg.leader.emergency_brake_at = Some(11.0);
    cfg.attacks = vec![
        LinkAttack::new(1, AttackSpec::window(AttackKind::Additive { bias: lim.u_min }, 1.0, f64::INFINITY)),
        LinkAttack::new(2, AttackSpec::window(AttackKind::Additive { bias: lim.u_max }, 1.0, f64::INFINITY)),
    ];
    cfg
}

fn c6_illustrative_attack() -> Outcome {
    let t0 = Instant::now();
    let m = run_metrics(&illustrative_scenario()).map_err(|e| e.to_string())?;
    let el = t0.elapsed();
    let g2 = m.min_gap[&VehicleId(2)];
    let g3 = m.min_gap[&VehicleId(3)];
    check(
        g2 > 0.0 && g3 > 0.0 && !m.collided() && within(el, 5.0),
        format!("min gaps {g2:.3} m and {g3:.3} m until t={:.1} s, {:.1?}", m.end_time, el),
    )
}

fn campaign_config() -> CampaignConfig {
    let mut cfg = CampaignConfig::default();
    cfg.base.seed = 2024;
    cfg.runs = 100;
    cfg.families = RandomAttack::ALL.to_vec();
    cfg.ranges = RandomRanges::default();
    cfg
}

fn c7_campaign(result: &mut Option<CampaignResult>) -> Outcome {
    let cfg = campaign_config();
    let t0 = Instant::now();
    let res = run_campaign(&cfg, 1).map_err(|e| e.to_string())?;
    let el = t0.elapsed();
    let b = &cfg.base;
    let setup_ok = b.platoon.n == 11 && b.dt == 0.05 && b.duration == 100.0 && b.leader.emergency_brake_at == Some(100.0);
    let total: usize = res.summary.iter().map(|f| f.runs).sum();
    let coll: usize = res.summary.iter().map(|f| f.collisions).sum();
    let worst = res
        .summary
        .iter()
        .map(|f| f.attack_phase.min.min(f.brake_phase.min))
        .fold(f64::INFINITY, f64::min);
    let out = check(
        setup_ok && total == 300 && coll == 0 && within(el, 300.0),
        format!("{coll} collisions in {total} runs, smallest gap {worst:.3} m, {:.1?}", el),
    );
    *result = Some(res);
    out
}

fn c8_detector() -> Outcome {
    let dt = 0.05;
    let mut rel_err: f64 = 0.0;
    for &(delta, k) in &[(1.0, 0.05), (-2.5, 0.05), (0.3, 0.2), (7.0, 0.6)] {
        let cfg = DetectorConfig { gain: k, threshold: 1e12, persistence: 0.5 };
        let mut det = Detector::new(cfg, 0.0).unwrap();
        for m in 1..=400u32 {
            let r = det.step(0.0, delta, 0.0, dt).unwrap();
            let exact = residual_closed_form(delta, dt, k, m);
            rel_err = rel_err.max((r - exact).abs() / exact);
        }
    }
    // nominal runs, 10^5 steps
    let mut cfg = ScenarioConfig::new(robot_platoon(4), ActuationLimits::scaled_robot(), 5000.0);
    cfg.detector.enabled = true;
    cfg.leader.sinusoid = Some(Sinusoid { amplitude: 0.3, period: 10.0 });
    let nominal = run_metrics(&cfg).map_err(|e| e.to_string())?;
    // u_max replacement on the leader's link
    let mut cfg = ScenarioConfig::new(robot_platoon(4), ActuationLimits::scaled_robot(), 40.0);
    cfg.detector.enabled = true;
    cfg.detector.gain = 0.05;
    cfg.detector.threshold = 0.75;
    cfg.detector.persistence = 0.5;
    cfg.attacks.push(LinkAttack::new(
        1,
        AttackSpec::window(AttackKind::ReplaceConstant { c: cfg.limits.u_max }, 10.0, f64::INFINITY),
    ));
    let attacked = run_metrics(&cfg).map_err(|e| e.to_string())?;
    let latency = attacked.detection_latency.get(&VehicleId(1)).copied().flatten();
    check(
        rel_err <= 1e-12
            && nominal.steps == 100_000
            && nominal.alarms.is_empty()
            && latency.is_some_and(|l| l <= 5.0),
        format!(
            "closed form rel err {rel_err:.1e}; {} nominal steps, {} alarms; latency {}",
            nominal.steps,
            nominal.alarms.len(),
            latency.map_or("none".to_string(), |l| format!("{l:.2} s"))
        ),
    )
}

fn c9_coordinator() -> Outcome {
    let t0 = Instant::now();
    let mut notes = Vec::new();
    let (d, star) = example_isolation();
    let mut f = ForbiddenLinks::new();
    f.insert(VehicleId(2), VehicleId(3));
    let a = solve_topology(&d, &f).map_err(|e| e.to_string())? == vec![star];
    notes.push(format!("isolation {}", if a { "ok" } else { "MISMATCH" }));
    let mut ok = a;
    for (name, (d, s1, s2)) in [("merge", example_merge()), ("split", example_split())] {
        let optima = solve_topology(&d, &ForbiddenLinks::new()).map_err(|e| e.to_string())?;
        let set = listing_set(&optima) == listing_set(&[s1.clone(), s2]);
        let tb = tie_break(&optima, Some(VehicleId(1))).as_ref() == Some(&s1);
        ok &= set && tb;
        notes.push(format!("{name} {}", if set && tb { "ok" } else { "MISMATCH" }));
    }
    let mut r = rng(9);
    let mut agree = 0;
    for _ in 0..200 {
        let (d, forbidden) = random_instance(&mut r, 7);
        let oracle = brute_force(&d, &forbidden);
        let same = match solve_topology(&d, &forbidden) {
            Ok(o) => listing_set(&o) == oracle,
            Err(TopologyError::Infeasible) => oracle.is_empty(),
            Err(_) => false,
        };
        agree += usize::from(same);
    }
    let el = t0.elapsed();
    ok &= agree == 200 && within(el, 30.0);
    check(ok, format!("{}; oracle agrees on {agree}/200, {:.1?}", notes.join(", "), el))
}

fn c10_reconfiguration() -> Outcome {
    let t0 = Instant::now();
    let mut cfg = ScenarioConfig::new(robot_platoon(4), ActuationLimits::scaled_robot(), 80.0);
    cfg.detector.enabled = true;
    cfg.coordinator.enabled = true;
    cfg.coordinator.keep_leader = false;
    cfg.attacks.push(LinkAttack::new(
        1,
        AttackSpec::window(AttackKind::ReplaceConstant { c: cfg.limits.u_max }, 10.0, f64::INFINITY),
    ));
    let out = run_scenario(&cfg).map_err(|e| e.to_string())?;
    let el = t0.elapsed();
    let m = &out.metrics;
    let tail_ok = m.final_order.last() == Some(&VehicleId(1));
    let t_end = out.trace.last().map(|r| r.t).unwrap_or(0.0);
    let last: Vec<_> = out.trace.iter().filter(|r| r.t == t_end).collect();
    let cpp = last.iter().all(|r| {
        let pos = m.final_order.iter().position(|&v| v == r.vehicle_id).unwrap();
        let assigned = pos.checked_sub(1).map(|j| m.final_order[j]);
        r.lane == Lane::Slow && r.vtf == assigned
    });
    let resid = m.max_residual_after_reconfiguration;
    let ok = tail_ok
        && cpp
        && !m.collided()
        && m.reconfiguration_completed.is_some()
        && resid.is_some_and(|r| r < cfg.detector.threshold)
        && within(el, 10.0);
    let order: Vec<String> = m.final_order.iter().map(|v| v.to_string()).collect();
    check(
        ok,
        format!(
            "order {}, all at CPP in SL: {cpp}, collision: {}, reconfigured by t={}, post residual {}, {:.1?}",
            order.join(" "),
            m.collided(),
            m.reconfiguration_completed.map_or("never".into(), |t| format!("{t:.2}")),
            resid.map_or("n/a".into(), |r| format!("{r:.2e}")),
            el
        ),
    )
}

fn c11_performance() -> Outcome {
    let mut stds = Vec::new();
    for cacc in [false, true] {
        let mut cfg = ScenarioConfig::new(robot_platoon(5), ActuationLimits::scaled_robot(), 60.0);
        cfg.cacc = cacc;
        cfg.leader = LeaderProfile {
            sinusoid: Some(Sinusoid { amplitude: 0.3, period: 10.0 }),
            emergency_brake_at: None,
        };
        cfg.metrics.window_start = 10.0;
        let m = run_metrics(&cfg).map_err(|e| e.to_string())?;
        stds.push((2..=5).map(|i| m.gap_stats[&VehicleId(i)].std).collect::<Vec<f64>>());
    }
    let (acc, cacc) = (&stds[0], &stds[1]);
    let decreasing = |s: &[f64]| s.windows(2).all(|w| w[1] < w[0]);
    let better = acc.iter().zip(cacc).all(|(a, c)| c < a);
    let fmt = |s: &[f64]| s.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(" ");
    check(
        decreasing(acc) && decreasing(cacc) && better,
        format!("gap std ACC [{}] CACC [{}]", fmt(acc), fmt(cacc)),
    )
}

fn aggregate_bytes(res: &CampaignResult) -> Vec<u8> {
    let mut buf = Vec::new();
    write_aggregate(&mut buf, &res.summary).unwrap();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["family", "run", "collided", "min_gap_attack", "min_gap_brake", "end_time"]).unwrap();
    for (f, runs) in &res.runs {
        for (i, m) in runs.iter().enumerate() {
            w.write_record([
                f.as_str().to_string(),
                i.to_string(),
                m.collided().to_string(),
                m.min_gap_attack_phase.to_string(),
                m.min_gap_brake_phase.to_string(),
                m.end_time.to_string(),
            ])
            .unwrap();
        }
    }
    buf.extend(w.into_inner().unwrap());
    buf
}

fn c12_determinism(first: Option<&CampaignResult>) -> Outcome {
    let cfg = campaign_config();
    let one = match first {
        Some(r) => aggregate_bytes(r),
        None => aggregate_bytes(&run_campaign(&cfg, 1).map_err(|e| e.to_string())?),
    };
    let four = aggregate_bytes(&run_campaign(&cfg, 4).map_err(|e| e.to_string())?);
    let again = aggregate_bytes(&run_campaign(&cfg, 2).map_err(|e| e.to_string())?);
    check(
        one == four && four == again,
        format!("{} bytes with 1, 4 and 2 workers, identical: {}", one.len(), one == four && four == again),
    )
}

fn main() {
    let mut campaign = None;
    let mut results: Vec<(u32, &str, Outcome)> = Vec::new();
    let mut run = |n: u32, name: &'static str, f: &mut dyn FnMut() -> Outcome| {
        let out = std::panic::catch_unwind(std::panic::AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let (tag, detail) = match &out {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("{tag} [{n:>2}] {name}: {detail}");
        results.push((n, name, out));
    };
    run(1, "robot gain synthesis", &mut c1_robot_gains);
    run(2, "highway gains at h = 0.112", &mut c2_highway_gains);
    run(3, "string stability sweep", &mut c3_string_stability);
    run(4, "safety filter identities", &mut c4_filter_identities);
    run(5, "emergency brake safety (ACC)", &mut c5_emergency_brake);
    run(6, "illustrative attack scenario", &mut c6_illustrative_attack);
    run(7, "attack campaign, 11 vehicles", &mut || c7_campaign(&mut campaign));
    run(8, "detector", &mut c8_detector);
    run(9, "coordinator exactness", &mut c9_coordinator);
    run(10, "reconfiguration end to end", &mut c10_reconfiguration);
    run(11, "CACC performance signature", &mut c11_performance);
    run(12, "campaign determinism", &mut || c12_determinism(campaign.as_ref()));
    let failed = results.iter().filter(|r| r.2.is_err()).count();
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
