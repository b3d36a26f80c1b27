//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Criteria 6 to 8 drive the `ssod` binary with the shipped configs in
//! `configs/`, so they take a few minutes.

use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use ssod_core::detector::{synth_generate, Detector, ParamVector, SubprocessDetector, ToyDetector};
use ssod_core::pipeline::record::Phase;
use ssod_core::pipeline::train::prepare;
use ssod_core::pipeline::{Config, RunRecord};
use ssod_testkit::suites;

const BIN: &str = env!("CARGO_BIN_EXE_ssod");
const CALIBRATION_CAP: usize = 1000;

fn config_path(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn load_config(name: &str) -> Result<Config, String> {
    let p = config_path(name);
    let text = std::fs::read_to_string(&p).map_err(|e| format!("{}: {e}", p.display()))?;
    Config::parse(&text).map_err(|e| e.to_string())
}

fn within(t: Instant, limit: Duration) -> Result<Duration, String> {
    let e = t.elapsed();
    if e < limit {
        Ok(e)
    } else {
        Err(format!("took {e:.1?}, limit {limit:?}"))
    }
}

fn c1() -> Result<String, String> {
    let t = Instant::now();
    let r = suites::wbf_equivalence(1000, 0)?;
    let e = within(t, Duration::from_secs(10))?;
    Ok(format!("{} instances, max error {:e}, {e:.1?}", r.cases, r.max_error))
}

fn c2() -> Result<String, String> {
    let t = Instant::now();
    let r = suites::map_equivalence(500, 0)?;
    let ap = suites::ap_hand_example()?;
    let e = within(t, Duration::from_secs(30))?;
    Ok(format!("{} instances, max error {:e}, AP[TP,FP,TP]/2 = {ap}, {e:.1?}", r.cases, r.max_error))
}

fn c3() -> Result<String, String> {
    let t = Instant::now();
    let r = suites::geometry_augment_properties(1)?;
    if r.cases < 10_000 {
        return Err(format!("only {} cases", r.cases));
    }
    let e = within(t, Duration::from_secs(60))?;
    Ok(format!("{} cases, max round-trip error {:e}, {e:.1?}", r.cases, r.max_error))
}

fn c4() -> Result<String, String> {
    let r = suites::ema_properties(1000, 0)?;
    Ok(format!("{} random vectors, max error {:e}, two-step example 0.81", r.cases, r.max_error))
}

fn c5() -> Result<String, String> {
    let r = suites::gradient_check(100, 0)?;
    Ok(format!("{} batches, max relative error {:e}", r.cases, r.max_error))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(BIN).args(args).output().map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!(
            "ssod {} exited with {}: {}",
            args.join(" "),
            out.status,
            String::from_utf8_lossy(&out.stderr).trim()
        ))
    }
}

fn simulate(config: &str, mode: &str, out: &Path, jobs: &str) -> Result<RunRecord, String> {
    let cfg = config_path(config);
    let out_s = out.to_string_lossy();
    run_cli(&[
        "--config",
        &cfg.to_string_lossy(),
        "simulate",
        "--mode",
        mode,
        "--out",
        &out_s,
        "--jobs",
        jobs,
    ])?;
    let text = std::fs::read_to_string(out.join("run_record.json")).map_err(|e| e.to_string())?;
    RunRecord::from_json(&text).map_err(|e| e.to_string())
}

fn gains(r: &RunRecord) -> Result<Vec<f64>, String> {
    r.replications
        .iter()
        .map(|rep| match (rep.arm("full"), rep.arm("semi")) {
            (Some(f), Some(s)) => Ok(100.0 * (s.test.map50 - f.test.map50)),
            _ => Err(format!("replication {} lacks an arm", rep.index)),
        })
        .collect()
}

fn c6(dir: &Path) -> Result<String, String> {
    let cfg = load_config("toy_in_domain.conf")?;
    let e = &cfg.experiment;
    if e.n_images != 1000 || e.labeled_fraction != 0.1 || e.split.seeds.len() != 3 || cfg.train.epochs != 36 {
        return Err("toy_in_domain.conf does not describe the required setting".into());
    }
    let t = Instant::now();
    let r = simulate("toy_in_domain.conf", "in-domain", &dir.join("in_domain_a"), "1")?;
    let elapsed = within(t, Duration::from_secs(15 * 60))?;
    let g = gains(&r)?;
    let wins = g.iter().filter(|&&x| x > 0.0).count();
    let mean = r.mean_gain_points().ok_or("no mean gain")?;
    let detail = format!(
        "Semi-Full mAP@50 per replication {:?} points, {wins}/3 wins, mean {mean:+.2} points, {elapsed:.0?}",
        g.iter().map(|x| (x * 100.0).round() / 100.0).collect::<Vec<_>>()
    );
    if wins >= 2 && mean >= 1.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn c7(dir: &Path) -> Result<String, String> {
    let cfg = load_config("toy_cross_domain.conf")?;
    let e = &cfg.experiment;
    if e.n_images != 1000 || e.n_shifted != 1000 || !e.shift_enabled {
        return Err("toy_cross_domain.conf does not describe the required setting".into());
    }
    let t = Instant::now();
    let r = simulate("toy_cross_domain.conf", "cross-domain", &dir.join("cross_domain"), "1")?;
    let elapsed = within(t, Duration::from_secs(15 * 60))?;
    let gap = r.mean_gain_points().ok_or("no mean gain")?;
    let detail = format!("mean Semi-Full mAP@50 gap {gap:+.2} points, {elapsed:.0?}");
    if gap.abs() <= 2.0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn bits(p: &[Vec<ssod_core::fusion::Detection<f64>>]) -> Vec<u64> {
    p.iter()
        .flatten()
        .flat_map(|d| {
            let b = d.bbox;
            [d.class_id as u64, d.confidence.to_bits(), b.x1.to_bits(), b.y1.to_bits(), b.x2.to_bits(), b.y2.to_bits()]
        })
        .collect()
}

fn params_bits(p: &ParamVector<f64>) -> Vec<u64> {
    p.to_bytes().chunks(8).map(|c| u64::from_le_bytes(c.try_into().unwrap())).collect()
}

fn loopback() -> Result<String, String> {
    let cfg = load_config("toy_in_domain.conf")?;
    let n = cfg.experiment.world.n_classes;
    let ds = synth_generate(&cfg.experiment.world, 12).map_err(|e| e.to_string())?;
    let samples = prepare(&ds.samples, cfg.train.target_size);
    let images: Vec<_> = samples.iter().map(|s| s.image.clone()).collect();
    let command: Vec<String> = [
        BIN,
        "--config",
        &config_path("toy_in_domain.conf").to_string_lossy(),
        "serve-toy",
        "--n-classes",
        &n.to_string(),
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let mut remote = SubprocessDetector::spawn(&command, Duration::from_secs(60)).map_err(|e| e.to_string())?;
    let mut local = ToyDetector::new(cfg.toy_config(n)).map_err(|e| e.to_string())?;
    let err = |e: ssod_core::detector::DetectorError| e.to_string();

    let mut calls = 0;
    for batch in samples.chunks(4) {
        let (a, b) = (local.train_step(batch).map_err(err)?, remote.train_step(batch).map_err(err)?);
        if a.to_bits() != b.to_bits() {
            return Err(format!("train_step loss {a} vs {b}"));
        }
        calls += 1;
    }
    if params_bits(&local.get_params().map_err(err)?) != params_bits(&remote.get_params().map_err(err)?) {
        return Err("get_params differs after training".into());
    }
    if bits(&local.predict(&images).map_err(err)?) != bits(&remote.predict(&images).map_err(err)?) {
        return Err("predict differs after training".into());
    }
    let len = local.get_params().map_err(err)?.len();
    let p = ParamVector::new((0..len).map(|i| (i as f64 * 0.731).sin() * 0.9 + 1e-13 * i as f64).collect());
    local.set_params(&p).map_err(err)?;
    remote.set_params(&p).map_err(err)?;
    if params_bits(&remote.get_params().map_err(err)?) != params_bits(&p) {
        return Err("set_params then get_params is not the identity".into());
    }
    let (a, b) = (local.predict(&images).map_err(err)?, remote.predict(&images).map_err(err)?);
    if bits(&a) != bits(&b) {
        return Err("predict differs after set_params".into());
    }
    calls += 6;
    Ok(format!("{calls} calls bit-exact, {} detections", a.iter().map(Vec::len).sum::<usize>()))
}

fn epoch_log_checks(r: &RunRecord) -> Result<usize, String> {
    let mut n = 0;
    for rep in &r.replications {
        for arm in &rep.arms {
            for e in &arm.log.epochs {
                let at = || format!("replication {} {} epoch {}", rep.index, arm.name, e.epoch);
                let isolated = e.pseudo_images == 0
                    && e.total_pseudo_labels() == 0
                    && e.pseudo_loss.is_none()
                    && e.calibration_images == 0
                    && e.thresholds.is_none();
                if e.phase != Phase::Semi && !isolated {
                    return Err(format!("{}: pseudo-label activity outside the semi phase", at()));
                }
                if e.calibration_images > CALIBRATION_CAP {
                    return Err(format!("{}: {} calibration images", at(), e.calibration_images));
                }
                n += 1;
            }
        }
    }
    Ok(n)
}

fn c8(dir: &Path) -> Result<String, String> {
    let lb = loopback()?;
    let a = dir.join("in_domain_a");
    let b = dir.join("in_domain_b");
    simulate("toy_in_domain.conf", "in-domain", &b, "2")?;
    let ra = std::fs::read(a.join("run_record.json")).map_err(|e| e.to_string())?;
    let rb = std::fs::read(b.join("run_record.json")).map_err(|e| e.to_string())?;
    if ra != rb {
        return Err("run_record.json differs between two runs".into());
    }
    let mut checked = 0;
    for d in [a, dir.join("cross_domain")] {
        let text = std::fs::read_to_string(d.join("run_record.json")).map_err(|e| e.to_string())?;
        checked += epoch_log_checks(&RunRecord::from_json(&text).map_err(|e| e.to_string())?)?;
    }
    Ok(format!(
        "loopback {lb}; run_record.json byte-identical ({} bytes); {checked} epoch logs isolated and capped",
        ra.len()
    ))
}

type Check<'a> = Box<dyn Fn() -> Result<String, String> + 'a>;

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temporary directory");
    let criteria: Vec<(&str, Check)> = vec![
        ("WBF oracle equivalence", Box::new(c1)),
        ("mAP oracle equivalence", Box::new(c2)),
        ("geometry and augmentation invariants", Box::new(c3)),
        ("EMA properties", Box::new(c4)),
        ("toy detector gradient check", Box::new(c5)),
        ("in-domain Semi gain", Box::new(|| c6(dir.path()))),
        ("cross-domain null gap", Box::new(|| c7(dir.path()))),
        ("protocol and determinism", Box::new(|| c8(dir.path()))),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(d) => println!("criterion {} PASS {name}: {d}", i + 1),
            Err(d) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {d}", i + 1);
            }
        }
    }
    println!("acceptance: {} of {} criteria pass", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
