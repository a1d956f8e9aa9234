mod common;

use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use waypart::loop_model::{compute_srd, footprint_closed_form, footprint_enumerate, AccessRef};
use waypart::metrics::summarize;
use waypart::sensitivity::{compute_alpha, detect_max_ways, WayTimeCurve};
use waypart::sim::{load_mix, run_mix, MixSpec, Policy};
use waypart::timing::{fit_timing, timing_accuracy, TrainingSample};
use waypart::SystemConfig;

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn footprint_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF00D);
    let (mut exact, mut inexact) = (0, 0);
    for n in 0..250 {
        let nest = common::random_nest(&mut rng, 100, 100_000);
        let closed = footprint_closed_form(&nest, 64).map_err(|e| e.to_string())?;
        let walked = footprint_enumerate(&nest, 64, 10_000_000).map_err(|e| e.to_string())?;
        let traced = common::footprint_by_trace(&nest, 64);
        ensure((walked.bytes, walked.lines) == traced, || {
            format!("nest {n}: enumeration {walked:?} vs trace {traced:?}")
        })?;
        if closed.exact {
            exact += 1;
            ensure((closed.bytes, closed.lines) == traced, || format!("nest {n}: {closed:?} vs {traced:?}"))?;
        } else {
            inexact += 1;
            ensure(closed.bytes >= traced.0 && closed.lines >= traced.1, || {
                format!("nest {n}: {closed:?} under {traced:?}")
            })?;
        }
    }
    Ok(format!("250 nests, {exact} exact equal, {inexact} inexact bounded"))
}

fn srd_law() -> Outcome {
    let s1 = AccessRef { statement: 0, access: 0 };
    let s2 = AccessRef { statement: 1, access: 0 };
    for m in 3..=100 {
        for n in 1..=100 {
            let nest = common::shifted_pair_nest(m, n);
            let engine = compute_srd(&nest).pair(s2, s1).and_then(|p| p.distance.srd());
            let trace = common::srd_trace_oracle(&nest, s2, s1);
            ensure(engine == Some(2 * n) && trace == Some(2 * n), || {
                format!("M={m} N={n}: engine {engine:?}, trace {trace:?}, want {}", 2 * n)
            })?;
        }
    }
    Ok("9800 (M, N) points equal 2N on engine and trace".into())
}

fn timing_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x7133);
    let noise = Normal::new(1.0, 0.01).unwrap();
    let mut worst_rel = 0.0f64;
    let mut worst_acc = 100.0f64;
    for g in 0..20 {
        let c = common::random_generator(&mut rng);
        let d = c.len() - 1;
        let clean: Vec<TrainingSample> = (0..40)
            .map(|_| {
                let b = common::random_bounds(&mut rng, d);
                let t = common::generator_time(&c, &b);
                TrainingSample::new(b, t)
            })
            .collect();
        let model = fit_timing(&clean).map_err(|e| e.to_string())?;
        for (got, want) in model.coefficients.iter().zip(&c) {
            worst_rel = worst_rel.max((got - want).abs() / want.abs());
        }
        let mut noisy = |k: usize| -> Vec<TrainingSample> {
            (0..k)
                .map(|_| {
                    let b = common::random_bounds(&mut rng, d);
                    let t = common::generator_time(&c, &b) * noise.sample(&mut rng);
                    TrainingSample::new(b, t)
                })
                .collect()
        };
        let train = noisy(60);
        let held = noisy(40);
        let acc = timing_accuracy(&fit_timing(&train).map_err(|e| e.to_string())?, &held).map_err(|e| e.to_string())?;
        worst_acc = worst_acc.min(acc);
        ensure(worst_rel <= 1e-6, || format!("generator {g}: coefficient error {worst_rel:e}"))?;
        ensure(acc >= 95.0, || format!("generator {g}: held-out accuracy {acc:.2}%"))?;
    }
    Ok(format!("20 generators, worst coefficient error {worst_rel:.1e}, worst noisy accuracy {worst_acc:.2}%"))
}

fn alpha_and_max_ways() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA1FA);
    let epsilons = [0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.4];
    for k in 0..50 {
        let pts = common::random_monotone_curve(&mut rng, 11);
        let curve = WayTimeCurve::new(pts.clone()).map_err(|e| e.to_string())?;
        let m = detect_max_ways(&curve, 0.05);
        let alpha = compute_alpha(&curve, m).map_err(|e| e.to_string())?;
        let direct = common::alpha_by_definition(&pts, m);
        ensure((alpha - direct).abs() <= 1e-12 * direct.max(1.0), || format!("curve {k}: {alpha} vs {direct}"))?;
        let seq: Vec<u32> = epsilons.iter().map(|&e| detect_max_ways(&curve, e)).collect();
        ensure(seq.windows(2).all(|w| w[1] <= w[0]), || {
            format!("curve {k}: max ways not monotone in epsilon {seq:?}")
        })?;
    }
    for t in [0.1, 1.0, 42.0] {
        let flat = WayTimeCurve::new((2..=11).map(|w| (w, t))).map_err(|e| e.to_string())?;
        ensure(detect_max_ways(&flat, 0.05) == 2, || "flat curve max ways is not 2".into())?;
    }
    Ok("50 curves match the definition, max ways monotone in epsilon, flat curves give 2".into())
}

fn allocator_invariants() -> Outcome {
    let mut total = 0;
    for seed in 0..8u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x1A110C + seed);
        let mix = common::random_mix(&mut rng, 20, 24, seed % 2 == 0);
        let report = run_mix(&mix, Policy::ComCas, &mix.config).map_err(|e| e.to_string())?;
        ensure(report.trace.len() >= 1000, || format!("seed {seed}: only {} events", report.trace.len()))?;
        let mut inv = common::InvariantChecker::new();
        common::drive_allocator(&report.trace, &mix.config, |now, a| {
            inv.check(now, a)?;
            if now == 0.0 {
                let mut sums = std::collections::BTreeMap::new();
                for p in a.processes() {
                    *sums.entry(p.socket).or_insert(0.0) += p.fraction;
                }
                for (s, sum) in sums {
                    ensure((sum - 1.0f64).abs() <= 1e-9, || format!("socket {s} fraction sum {sum} at t=0"))?;
                }
            }
            Ok(())
        })
        .map_err(|e| format!("seed {seed}: {e}"))?;
        total += report.trace.len();
    }
    Ok(format!("8 simulations, {total} events checked"))
}

fn hand_traces() -> Outcome {
    let fixtures = common::load_fixtures();
    ensure(fixtures.len() >= 10, || format!("only {} fixtures", fixtures.len()))?;
    for (name, f) in &fixtures {
        if let Some(m) = common::fixture_mismatch(f) {
            return Err(format!("{name}: {m}"));
        }
    }
    Ok(format!("{} fixtures match record for record", fixtures.len()))
}

fn mixes_in(dir: &str) -> Result<Vec<MixSpec>, String> {
    let root = common::repo_root().join("mixes").join(dir);
    let mut paths: Vec<PathBuf> = std::fs::read_dir(&root)
        .map_err(|e| format!("{}: {e}", root.display()))?
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    paths.sort();
    paths.iter().map(|p| load_mix(p, &SystemConfig::default()).map_err(|e| e.to_string())).collect()
}

fn heavy_ordering() -> Outcome {
    let mixes = mixes_in("heavy")?;
    ensure(mixes.len() >= 5, || format!("only {} heavy mixes", mixes.len()))?;
    let mut lines = Vec::new();
    for mix in &mixes {
        let run = |p| run_mix(mix, p, &mix.config).map_err(|e| e.to_string());
        let base = run(Policy::Unpartitioned)?;
        let ws =
            |p| -> Result<f64, String> { Ok(summarize(&run(p)?, &base).map_err(|e| e.to_string())?.weighted_speedup) };
        let comcas = ws(Policy::ComCas)?;
        let maxways = ws(Policy::MaxWaysStatic)?;
        let reactive = ws(Policy::ReactiveCounter { interval_ns: Policy::DEFAULT_INTERVAL_NS })?;
        ensure(comcas >= 1.05 && comcas > maxways && comcas > reactive, || {
            format!("{}: comcas {comcas:.4}, maxways {maxways:.4}, reactive {reactive:.4}", mix.name)
        })?;
        lines.push(format!("{} {comcas:.3}", mix.name));
    }
    Ok(format!("comcas speedup: {}", lines.join(", ")))
}

fn detection_lag() -> Outcome {
    let mix = load_mix(&common::repo_root().join("mixes/medium/m03-short-phases.toml"), &SystemConfig::default())
        .map_err(|e| e.to_string())?;
    let comcas = run_mix(&mix, Policy::ComCas, &mix.config).map_err(|e| e.to_string())?.makespan_ns;
    let reactive = run_mix(&mix, Policy::ReactiveCounter { interval_ns: Policy::DEFAULT_INTERVAL_NS }, &mix.config)
        .map_err(|e| e.to_string())?
        .makespan_ns;
    let ratio = reactive / comcas;
    ensure(ratio >= 1.10, || format!("reactive/comcas makespan {ratio:.4}"))?;
    Ok(format!("reactive/comcas makespan {ratio:.4}"))
}

fn sla_and_fairness() -> Outcome {
    let mut n = 0;
    let mut worst_jain = 1.0f64;
    for dir in ["light", "medium", "heavy"] {
        for mix in mixes_in(dir)? {
            let base = run_mix(&mix, Policy::Unpartitioned, &mix.config).map_err(|e| e.to_string())?;
            let report = run_mix(&mix, Policy::ComCas, &mix.config).map_err(|e| e.to_string())?;
            let s = summarize(&report, &base).map_err(|e| e.to_string())?;
            ensure(s.sla_violations == 0, || format!("{}: {} SLA violations", mix.name, s.sla_violations))?;
            ensure(s.jain_fairness >= 0.95, || format!("{}: fairness {:.4}", mix.name, s.jain_fairness))?;
            worst_jain = worst_jain.min(s.jain_fairness);
            n += 1;
        }
    }
    Ok(format!("{n} mixes, no SLA violation, lowest fairness {worst_jain:.4}"))
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = common::repo_root();
    let mut reports = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        let status = Command::new(env!("CARGO_BIN_EXE_waypart"))
            .args(["simulate", "--out"])
            .arg(&out)
            .arg(Path::new("mixes/heavy/h06-large-then-late.toml"))
            .current_dir(&root)
            .output()
            .map_err(|e| e.to_string())?;
        ensure(status.status.success(), || String::from_utf8_lossy(&status.stderr).into_owned())?;
        let files: Vec<Vec<u8>> = ["report.csv", "allocations.csv", "trace.csv", "summary.toml"]
            .iter()
            .map(|f| std::fs::read(out.join(f)).unwrap_or_default())
            .collect();
        reports.push(files);
    }
    ensure(reports[0] == reports[1], || "outputs differ between runs".into())?;
    ensure(reports[0].iter().all(|f| !f.is_empty()), || "missing output".into())?;
    Ok("two runs wrote identical reports".into())
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("footprint oracle equivalence", footprint_oracle),
        ("SRD law on the two-level family", srd_law),
        ("timing-model recovery", timing_recovery),
        ("alpha and max-ways", alpha_and_max_ways),
        ("allocation-state invariants", allocator_invariants),
        ("algorithm hand-traces", hand_traces),
        ("directional policy ordering on heavy mixes", heavy_ordering),
        ("detection lag", detection_lag),
        ("SLA and fairness", sla_and_fairness),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} ({secs:.2}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name} ({secs:.2}s): {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
