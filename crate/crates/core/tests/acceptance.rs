//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line for each
//! and exits nonzero if any fails.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::Rng;

use rsmimo::analysis::{verify_closed_forms, VerifyOptions};
use rsmimo::channel::{compose_channel, sample_cn, RngSeed};
use rsmimo::combining::{combine, ReceiveGeometry};
use rsmimo::model::{build_layout, within_budget};
use rsmimo::precoding::build_precoders;
use rsmimo::rates::ergodic_sum_rate;
use rsmimo::sim::{self, find_scenario, run_scenario, SweepResult};
use rsmimo::{CombinerKind, CommonPowerGrid, CsitError, EsrSetup, PowerAllocation, PrecoderKind, SystemConfig};

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome { passed, detail: detail.into() }
}

#[derive(Default)]
struct Runs {
    cache: HashMap<String, (SweepResult, Duration)>,
}

impl Runs {
    fn get(&mut self, name: &str) -> &(SweepResult, Duration) {
        self.cache.entry(name.to_string()).or_insert_with(|| {
            let s = find_scenario(name).unwrap_or_else(|| panic!("catalog has {name}"));
            let start = Instant::now();
            let r = run_scenario(&s, None).unwrap_or_else(|e| panic!("{name}: {e}"));
            (r, start.elapsed())
        })
    }

    fn esr(&mut self, name: &str) -> Vec<f64> {
        self.get(name).0.points.iter().map(|p| p.esr).collect()
    }
}

fn pct(x: f64) -> String {
    format!("{:.2}%", 100.0 * x)
}

fn closed_forms() -> Outcome {
    let start = Instant::now();
    let report = match verify_closed_forms(&VerifyOptions::default()) {
        Ok(r) => r,
        Err(e) => return outcome(false, format!("suite error: {e}")),
    };
    let elapsed = start.elapsed();
    let worst = report.checks.iter().map(|c| c.max_residual).fold(0.0, f64::max);
    let failing: Vec<&str> = report.checks.iter().filter(|c| !c.passed()).map(|c| c.anchor).collect();
    outcome(
        failing.is_empty() && elapsed < Duration::from_secs(60),
        format!(
            "{} instances, {} identities, worst relative residual {worst:.2e}, {:.1} s{}",
            report.instances,
            report.checks.len(),
            elapsed.as_secs_f64(),
            if failing.is_empty() { String::new() } else { format!(", failing: {failing:?}") }
        ),
    )
}

fn combiner_ordering() -> Outcome {
    let mut worst_mrc = f64::INFINITY;
    let mut worst_minmax = f64::INFINITY;
    let mut comparisons = 0;
    for i in 0..1000u64 {
        let mut rng = RngSeed::new(2024, i).rng();
        let e_tr = 10f64.powf(rng.random_range(0.0..3.0));
        let csit = if i % 2 == 0 { CsitError::Perfect } else { CsitError::FixedVariance(rng.random_range(0.01..0.5)) };
        let cfg = SystemConfig::new(8, vec![2; 4], e_tr, 1.0, csit).unwrap();
        let layout = build_layout(&cfg).unwrap();
        let h = sample_cn(8, 8, 1.0, &mut rng);
        let err = sample_cn(8, 8, cfg.error_variance(), &mut rng);
        let ch = compose_channel(h, err, &layout).unwrap();
        let kind = if i % 3 == 0 { PrecoderKind::Mmse } else { PrecoderKind::Rbd };
        let p = build_precoders(kind, &ch, &cfg, &layout).unwrap();
        let base = PowerAllocation::uniform(rng.random_range(0.0..1.0) * e_tr, e_tr, &p.p_private);
        let alloc = PowerAllocation {
            a_common: base.a_common,
            a_private: base.a_private.iter().map(|a| a * rng.random_range(0.2..1.5)).collect(),
        };
        for k in 0..4 {
            let g = ReceiveGeometry::for_user(&ch, &p, &layout, k, &alloc, 1.0);
            let sinr = |kind| combine(kind, &g, &alloc).unwrap().1;
            let mmsec = sinr(CombinerKind::Mmsec);
            worst_mrc = worst_mrc.min(mmsec - sinr(CombinerKind::Mrc));
            worst_minmax = worst_minmax.min(mmsec - sinr(CombinerKind::MinMax));
            comparisons += 1;
        }
    }
    outcome(
        worst_mrc >= -1e-9 && worst_minmax >= -1e-9,
        format!(
            "{comparisons} user SINRs; min MMSEc-MRC {worst_mrc:.3e}, min MMSEc-MinMax {worst_minmax:.3e}"
        ),
    )
}

fn rs_off_reduction(runs: &mut Runs) -> Outcome {
    let mut mismatches = Vec::new();
    let mut points = 0;
    for (baseline, rs) in [("fig3-rbd", "fig3-rbd-rs-mmsec"), ("fig3-mmse", "fig3-mmse-rs")] {
        let base = runs.esr(baseline);
        let s = find_scenario(rs).unwrap();
        for (v, b) in s.sweep.points().iter().zip(&base) {
            let setup = EsrSetup { grid: CommonPowerGrid::off(), ..s.esr_setup(*v) };
            let forced = ergodic_sum_rate(&setup).unwrap();
            points += 1;
            if forced.esr.to_bits() != b.to_bits() || forced.common != 0.0 {
                mismatches.push(format!("{rs}@{v}: {} vs {b}", forced.esr));
            }
        }
    }
    outcome(
        mismatches.is_empty(),
        format!("{points} sweep points compared bitwise{}", if mismatches.is_empty() { String::new() } else { format!("; {mismatches:?}") }),
    )
}

fn fig3(runs: &mut Runs) -> Outcome {
    let base = runs.esr("fig3-rbd");
    let (rs, elapsed) = runs.get("fig3-rbd-rs-mmsec").clone();
    let base_time = runs.get("fig3-rbd").1;
    let above = rs.points.iter().zip(&base).all(|(p, b)| p.esr >= *b);
    let common: Vec<f64> = rs.points.iter().map(|p| p.common).collect();
    let increasing = common.windows(2).all(|w| w[1] > w[0]);
    let at20 = rs.points.iter().find(|p| p.value == 20.0).unwrap();
    let share = at20.common / at20.esr;
    let runtime = elapsed + base_time;
    outcome(
        above && increasing && (0.05..=0.35).contains(&share) && runtime < Duration::from_secs(300),
        format!(
            "RS >= RBD everywhere: {above}; common rate {common:.3?} increasing: {increasing}; share at 20 dB {}; {:.1} s",
            pct(share),
            runtime.as_secs_f64()
        ),
    )
}

fn fig4(runs: &mut Runs) -> Outcome {
    let base = runs.esr("fig4-rbd");
    let mmsec = runs.get("fig4-rbd-rs-mmsec").0.clone();
    let mrc = runs.get("fig4-rbd-rs-mrc").0.clone();
    let plain = runs.get("fig4-rbd-rs").0.clone();
    let gains: Vec<f64> = mmsec.points.iter().zip(&base).map(|(p, b)| p.esr / b - 1.0).collect();
    let positive = gains.iter().all(|g| *g > 0.0);
    let max_gain = gains.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let ordered = (0..mmsec.points.len()).all(|i| {
        let (a, b, c) = (&mmsec.points[i], &mrc.points[i], &plain.points[i]);
        a.esr >= b.esr - a.std_error.max(b.std_error) && b.esr >= c.esr - b.std_error.max(c.std_error)
    });
    outcome(
        positive && (0.15..=0.60).contains(&max_gain) && ordered,
        format!(
            "gains {:?}; max {}; MMSEc >= MRC >= RS within 1 s.e.: {ordered}",
            gains.iter().map(|g| pct(*g)).collect::<Vec<_>>(),
            pct(max_gain)
        ),
    )
}

fn fig5(runs: &mut Runs) -> Outcome {
    let base = runs.get("fig5-rbd").0.clone();
    let mut all_above = true;
    let mut peak = f64::NEG_INFINITY;
    let mut peaks = Vec::new();
    for name in ["fig5-rbd-rs-minmax", "fig5-rbd-rs-mrc", "fig5-rbd-rs-mmsec"] {
        let r = runs.get(name).0.clone();
        let mut curve_peak = f64::NEG_INFINITY;
        for (p, b) in r.points.iter().zip(&base.points) {
            if p.value >= 10.0 && p.esr <= b.esr {
                all_above = false;
            }
            curve_peak = curve_peak.max(p.esr / b.esr - 1.0);
        }
        peak = peak.max(curve_peak);
        peaks.push(format!("{} {}", name.trim_start_matches("fig5-rbd-rs-"), pct(curve_peak)));
    }
    outcome(
        all_above && peak >= 0.10,
        format!("combiner curves above RBD for SNR >= 10 dB: {all_above}; peak gains {}", peaks.join(", ")),
    )
}

fn power_budget(runs: &mut Runs) -> Outcome {
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    let mut ok = true;
    for (result, _) in runs.cache.values() {
        for p in &result.points {
            checked += 1;
            worst = worst.max(p.max_transmit_power / p.total_power);
            ok &= within_budget(p.max_transmit_power, p.total_power);
        }
    }
    outcome(
        ok && checked > 0,
        format!("{checked} sweep points across {} runs; worst E[|x|^2]/E_tr = {worst:.15}", runs.cache.len()),
    )
}

fn determinism() -> Outcome {
    let s = find_scenario("fig4-rbd-rs-mmsec").unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut files = Vec::new();
    for workers in [1, 8] {
        let path = dir.path().join(format!("w{workers}.csv"));
        let r = run_scenario(&s, Some(workers)).unwrap();
        sim::emit_csv(&r, &path, false).unwrap();
        files.push(std::fs::read(&path).unwrap());
    }
    outcome(files[0] == files[1], format!("fig4-rbd-rs-mmsec, {} bytes each", files[0].len()))
}

fn main() {
    let mut runs = Runs::default();
    let criteria: Vec<(&str, Box<dyn FnMut(&mut Runs) -> Outcome>)> = vec![
        ("1 closed-form identities", Box::new(|_| closed_forms())),
        ("2 combiner SINR ordering", Box::new(|_| combiner_ordering())),
        ("3 RS-off equals zero common power", Box::new(rs_off_reduction)),
        ("4 SNR sweep, fixed CSIT error", Box::new(fig3)),
        ("5 CSIT error-variance sweep", Box::new(fig4)),
        ("6 SNR sweep, SNR-scaled CSIT error", Box::new(fig5)),
        ("7 transmit power budget", Box::new(power_budget)),
        ("8 worker-count determinism", Box::new(|_| determinism())),
    ];
    let mut failed = 0;
    for (name, mut check) in criteria {
        let o = check(&mut runs);
        if !o.passed {
            failed += 1;
        }
        println!("{} criterion {name}: {}", if o.passed { "PASS" } else { "FAIL" }, o.detail);
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
