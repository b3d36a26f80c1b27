//! Subcommand implementations.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{self, BufWriter};
use std::path::Path;

use ssod_core::augment::Sample;
use ssod_core::detector::{protocol, synth_generate, ToyDetector};
use ssod_core::fusion::weighted_boxes_fusion;
use ssod_core::metrics::{map_scores, ImageDetections};
use ssod_core::pipeline::checkpoint::Checkpoint;
use ssod_core::pipeline::config::ConfigError;
use ssod_core::pipeline::record::{ArmRecord, ReplicationRecord, TrainMode as CoreMode};
use ssod_core::pipeline::split::{label_budget_split, strip_labels, AuditStore};
use ssod_core::pipeline::train::{evaluate_params, ground_truth, prepare, TrainState};
use ssod_core::pipeline::{
    load_yolo_dataset, mc_split, run_experiment, synthetic_data, train_supervised,
    train_weedteacher, Backend, Config, Dataset, ExperimentData, ExperimentMode, RunRecord, TrainControl,
};
use ssod_core::rng::{derive_seed, tag};
use ssod_core::fusion::Detection;

use crate::failure::{config, data, detector, from_experiment, from_train, CmdResult, Classify};
use crate::manifest::{self, DatasetFingerprint, Manifest};
use crate::model::{self, ModelMeta};
use crate::{
    Cli, Command, EvalArgs, FuseArgs, ServeToyArgs, SimulateArgs, SimulateMode, SplitArgs, SynthArgs, SynthDomain,
    TrainArgs, TrainMode,
};

const CONFIG_FILE: &str = "config.conf";
const STATE_FILE: &str = "state.ckpt";
const MODEL_FILE: &str = "model.ckpt";

pub fn run(cli: &Cli) -> CmdResult {
    match &cli.command {
        Command::Synth(a) => synth(cli, a),
        Command::Split(a) => split(cli, a),
        Command::Train(a) => train(cli, a),
        Command::Eval(a) => eval(cli, a),
        Command::Fuse(a) => fuse(cli, a),
        Command::Simulate(a) => simulate(cli, a),
        Command::ServeToy(a) => serve_toy(cli, a),
    }
}

/// Defaults, then the config file, then `--set`, then command flags; every
/// problem is reported at once.
fn load_config(cli: &Cli, flags: &[String]) -> CmdResult<Config> {
    let mut cfg = Config::default();
    let mut issues = Vec::new();
    if let Some(p) = &cli.config {
        let text = fs::read_to_string(p).or_config(format!("cannot read config file {}", p.display()))?;
        if let Err(ConfigError(v)) = cfg.apply_text(&text) {
            issues.extend(v);
        }
    }
    if let Err(ConfigError(v)) = cfg.apply_overrides(&cli.set) {
        issues.extend(v);
    }
    if let Err(ConfigError(v)) = cfg.apply_overrides(flags) {
        issues.extend(v);
    }
    if let Err(ConfigError(v)) = cfg.validate() {
        issues.extend(v);
    }
    if issues.is_empty() {
        Ok(cfg)
    } else {
        Err(config(ConfigError(issues)))
    }
}

fn flag<T: ToString>(key: &str, v: Option<T>) -> Option<String> {
    v.map(|v| format!("{key}={}", v.to_string()))
}

/// Creates `dir`, refusing to mix runs: a directory that already holds a
/// manifest needs `--overwrite` (which removes the `owned` entries first)
/// or, for training, `--resume`.
fn prepare_out(dir: &Path, owned: &[&str], overwrite: bool, resume: bool) -> CmdResult {
    if dir.join(manifest::FILE).exists() && !overwrite && !resume {
        return Err(config(anyhow::anyhow!(
            "{} already holds outputs; pass --overwrite to replace them",
            dir.display()
        )));
    }
    if overwrite {
        for name in owned.iter().chain(&[CONFIG_FILE, manifest::FILE]) {
            let p = dir.join(name);
            let r = if p.is_dir() {
                fs::remove_dir_all(&p)
            } else if p.exists() {
                fs::remove_file(&p)
            } else {
                Ok(())
            };
            r.or_data(format!("cannot remove {}", p.display()))?;
        }
    }
    fs::create_dir_all(dir).or_data(format!("cannot create {}", dir.display()))
}

fn write_file(dir: &Path, name: &str, contents: impl AsRef<[u8]>) -> CmdResult {
    let p = dir.join(name);
    if let Some(parent) = p.parent() {
        fs::create_dir_all(parent).or_data(format!("cannot create {}", parent.display()))?;
    }
    fs::write(&p, contents).or_data(format!("cannot write {}", p.display()))
}

fn finish(
    cli: &Cli,
    cfg: &Config,
    dir: &Path,
    datasets: Vec<DatasetFingerprint>,
    mut outputs: Vec<String>,
) -> CmdResult {
    let text = cfg.to_text();
    write_file(dir, CONFIG_FILE, &text)?;
    outputs.push(CONFIG_FILE.into());
    outputs.sort();
    let m = Manifest {
        command: std::env::args().collect(),
        config_path: cli.config.clone(),
        config_hash: manifest::sha256_hex(text.as_bytes()),
        datasets,
        timestamp: manifest::now(),
        output_dir: dir.to_path_buf(),
        outputs,
    };
    m.write(dir).map_err(data)
}

fn load_dataset(root: &Path) -> CmdResult<Dataset> {
    if !root.is_dir() {
        return Err(data(anyhow::anyhow!("dataset directory {} does not exist", root.display())));
    }
    load_yolo_dataset(&root.join("images"), &root.join("labels"), &root.join("classes.txt"))
        .or_data(format!("cannot load dataset {}", root.display()))
}

fn fingerprint(role: &str, root: &Path) -> CmdResult<DatasetFingerprint> {
    manifest::fingerprint_dir(role, root).map_err(data)
}

fn read_ids(path: &Path) -> CmdResult<Vec<String>> {
    let text = fs::read_to_string(path).or_data(format!("cannot read id list {}", path.display()))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn id_list(samples: &[Sample]) -> String {
    samples.iter().map(|s| format!("{}\n", s.id)).collect()
}

fn synth(cli: &Cli, a: &SynthArgs) -> CmdResult {
    let cfg = load_config(cli, &[])?;
    let e = &cfg.experiment;
    let (world, n) = match a.domain {
        SynthDomain::Basic => (e.world.clone(), a.n.unwrap_or(e.n_images)),
        SynthDomain::Shifted => {
            if !e.shift_enabled {
                return Err(config(anyhow::anyhow!("--domain shifted needs shift.enabled = true")));
            }
            (e.world.shifted_with("new", &e.shift), a.n.unwrap_or(e.n_shifted))
        }
    };
    let ds = synth_generate(&world, n).map_err(config)?;
    prepare_out(&a.out, &["images", "labels", "classes.txt"], a.overwrite, false)?;
    ssod_core::pipeline::dataset::write_yolo_dataset(&ds, &a.out)
        .or_data(format!("cannot write dataset {}", a.out.display()))?;
    let fp = manifest::fingerprint_synthetic("generated", &cfg.to_text(), n);
    finish(cli, &cfg, &a.out, vec![fp], vec!["images/".into(), "labels/".into(), "classes.txt".into()])
}

fn split(cli: &Cli, a: &SplitArgs) -> CmdResult {
    let mut flags: Vec<String> = [
        flag("split_train", a.train),
        flag("split_val", a.val),
        flag("split_test", a.test),
    ]
    .into_iter()
    .flatten()
    .collect();
    if !a.seeds.is_empty() {
        let s: Vec<String> = a.seeds.iter().map(u64::to_string).collect();
        flags.push(format!("replication_seeds={}", s.join(",")));
    }
    let cfg = load_config(cli, &flags)?;
    let ds = load_dataset(&a.data)?.labeled_only();
    let splits = mc_split(ds.len(), &cfg.experiment.split).map_err(data)?;
    let owned: Vec<String> = (0..splits.len()).map(|k| format!("rep{k}")).collect();
    let owned_refs: Vec<&str> = owned.iter().map(String::as_str).collect();
    prepare_out(&a.out, &owned_refs, a.overwrite, false)?;
    let mut outputs = Vec::new();
    for (k, s) in splits.iter().enumerate() {
        for (name, idx) in [("train", &s.train), ("val", &s.val), ("test", &s.test)] {
            let file = format!("rep{k}/{name}.txt");
            write_file(&a.out, &file, id_list(&ds.select(idx).samples))?;
            outputs.push(file);
        }
        let file = format!("rep{k}/seed.txt");
        write_file(&a.out, &file, format!("{}\n", s.seed))?;
        outputs.push(file);
    }
    finish(cli, &cfg, &a.out, vec![fingerprint("data", &a.data)?], outputs)
}

/// Train/val/test samples and the replication seed.
struct TrainSplit {
    seed: u64,
    train: Vec<Sample>,
    val: Vec<Sample>,
    test: Vec<Sample>,
}

fn train_split(cfg: &Config, labeled: &Dataset, a: &TrainArgs) -> CmdResult<TrainSplit> {
    match &a.split_dir {
        Some(dir) => {
            let rep = dir.join(format!("rep{}", a.replication));
            if !rep.is_dir() {
                return Err(data(anyhow::anyhow!("{} has no replication {}", dir.display(), a.replication)));
            }
            let pick = |name: &str| -> CmdResult<Vec<Sample>> {
                let ids = read_ids(&rep.join(format!("{name}.txt")))?;
                labeled
                    .subset_by_ids(&ids)
                    .map(|d| d.samples)
                    .map_err(|m| data(anyhow::anyhow!("{}/{name}.txt: {m}", rep.display())))
            };
            let seed_file = rep.join("seed.txt");
            let seed = if seed_file.is_file() {
                let t = fs::read_to_string(&seed_file).or_data(format!("cannot read {}", seed_file.display()))?;
                t.trim()
                    .parse()
                    .map_err(|e| data(anyhow::anyhow!("{}: {e}", seed_file.display())))?
            } else {
                a.replication as u64
            };
            Ok(TrainSplit {
                seed,
                train: pick("train")?,
                val: pick("val")?,
                test: pick("test")?,
            })
        }
        None => {
            let splits = mc_split(labeled.len(), &cfg.experiment.split).map_err(data)?;
            let Some(s) = splits.get(a.replication) else {
                return Err(config(anyhow::anyhow!(
                    "--replication {} is out of range: {} replication seed(s) are configured",
                    a.replication,
                    splits.len()
                )));
            };
            Ok(TrainSplit {
                seed: s.seed,
                train: labeled.select(&s.train).samples,
                val: labeled.select(&s.val).samples,
                test: labeled.select(&s.test).samples,
            })
        }
    }
}

fn train(cli: &Cli, a: &TrainArgs) -> CmdResult {
    if a.resume && a.overwrite {
        return Err(config(anyhow::anyhow!("--resume and --overwrite cannot be combined")));
    }
    let flags: Vec<String> = [flag("labeled_fraction", a.labeled_fraction), flag("workers", a.workers)]
        .into_iter()
        .flatten()
        .collect();
    let cfg = load_config(cli, &flags)?;
    let ds = load_dataset(&a.data)?;
    let n_classes = ds.n_classes();
    let labeled_ds = ds.labeled_only();
    let sp = train_split(&cfg, &labeled_ds, a)?;

    let (labeled, mut unlabeled, mut audit) = match a.labeled_fraction {
        Some(f) => {
            let b = label_budget_split(&sp.train, f, derive_seed(sp.seed, &[tag("label-budget")])).map_err(config)?;
            (b.labeled, b.unlabeled, b.audit)
        }
        None => (sp.train.clone(), Vec::new(), AuditStore::default()),
    };
    let mut datasets = vec![fingerprint("data", &a.data)?];
    if a.mode == TrainMode::Semi {
        unlabeled.extend(ds.samples.iter().filter(|s| !s.labeled).map(strip_labels));
        if let Some(dir) = &a.unlabeled {
            let extra = load_dataset(dir)?;
            if extra.class_names != ds.class_names {
                return Err(data(anyhow::anyhow!(
                    "{} lists different classes than {}",
                    dir.display(),
                    a.data.display()
                )));
            }
            for s in &extra.samples {
                let mut u = strip_labels(s);
                u.id = format!("{}/{}", s.domain, s.id);
                if s.labeled {
                    audit.insert(u.id.clone(), s.boxes.clone());
                }
                unlabeled.push(u);
            }
            datasets.push(fingerprint("unlabeled", dir)?);
        }
    } else if a.unlabeled.is_some() {
        return Err(config(anyhow::anyhow!("--unlabeled only applies to --mode semi")));
    }
    let test_ids: HashSet<&str> = sp.test.iter().map(|s| s.id.as_str()).collect();
    if let Some(s) = labeled.iter().chain(&unlabeled).chain(&sp.val).find(|s| test_ids.contains(s.id.as_str())) {
        return Err(data(anyhow::anyhow!("test image `{}` also feeds training", s.id)));
    }
    if labeled.is_empty() {
        return Err(data(anyhow::anyhow!("no labelled training images")));
    }

    let resume = if a.resume {
        let existing = a.out.join(CONFIG_FILE);
        if let Ok(prev) = fs::read_to_string(&existing) {
            if prev != cfg.to_text() {
                return Err(config(anyhow::anyhow!(
                    "the resolved config differs from the one in {}",
                    existing.display()
                )));
            }
        }
        let p = a.out.join(STATE_FILE);
        let c = Checkpoint::read(&p).map_err(|e| crate::failure::from_checkpoint(e, &p))?;
        Some(TrainState::from_checkpoint(&c).map_err(|e| data(anyhow::Error::new(e).context(p.display().to_string())))?)
    } else {
        None
    };
    if let Some(s) = &resume {
        let want = match a.mode {
            TrainMode::Full => CoreMode::Full,
            TrainMode::Semi => CoreMode::Semi,
        };
        if s.mode != want {
            return Err(config(anyhow::anyhow!(
                "saved state is a {} run, not {}",
                s.mode.name(),
                want.name()
            )));
        }
    }

    let outputs_all = [
        STATE_FILE,
        MODEL_FILE,
        "run_record.json",
        "epochs.csv",
        "summary.csv",
        "calibration.csv",
        "test_ids.txt",
        "predictions.csv",
    ];
    prepare_out(&a.out, &outputs_all, a.overwrite, a.resume)?;
    // the config is on disk before the first epoch so that a resume can check it
    write_file(&a.out, CONFIG_FILE, cfg.to_text())?;

    let backend = Backend::from_config(&cfg, n_classes);
    let mut tcfg = cfg.train.clone();
    tcfg.seed = derive_seed(cfg.train.seed, &[tag("replication"), a.replication as u64]);
    let state_path = a.out.join(STATE_FILE);
    let mut save = |s: &TrainState| s.to_checkpoint().write(&state_path).map_err(|e| e.to_string());
    let ctl = TrainControl {
        resume,
        stop_after_epoch: a.stop_after_epoch,
        on_epoch: Some(&mut save),
    };
    let result = match a.mode {
        TrainMode::Full => train_supervised(&backend, &labeled, &sp.val, n_classes, &tcfg, ctl),
        TrainMode::Semi => {
            train_weedteacher(&backend, &labeled, &unlabeled, &sp.val, n_classes, &tcfg, Some(&audit), ctl)
        }
    };
    let out = match result {
        Ok(o) => o,
        Err(e) => {
            finish(cli, &cfg, &a.out, datasets, vec![STATE_FILE.into()])?;
            return Err(from_train(e));
        }
    };
    if !out.completed {
        eprintln!(
            "stopped after epoch {}; continue with --resume",
            out.state.epochs_done
        );
        return finish(cli, &cfg, &a.out, datasets, vec![STATE_FILE.into()]);
    }

    let test = prepare(&sp.test, cfg.train.target_size);
    let (report, preds) = evaluate_params(&backend, &out.params, &test, n_classes).map_err(from_train)?;
    let mode_name = out.log.mode.name();
    let report_map = (report.map50, report.map50_95);
    let record = RunRecord::new(
        &format!("train_{mode_name}"),
        vec![ReplicationRecord {
            index: a.replication,
            seed: sp.seed,
            n_labeled: labeled.len(),
            n_unlabeled: unlabeled.len(),
            n_val: sp.val.len(),
            n_test: sp.test.len(),
            arms: vec![ArmRecord {
                name: mode_name.into(),
                log: out.log.clone(),
                test: report,
            }],
        }],
    );
    let meta = ModelMeta {
        kind: model::KIND.into(),
        mode: mode_name.into(),
        class_names: ds.class_names.clone(),
        target_size: cfg.train.target_size,
        config: cfg.to_text(),
    };
    model::write(&a.out.join(MODEL_FILE), &meta, &out.params).map_err(data)?;
    write_file(&a.out, "run_record.json", record.to_json())?;
    write_file(&a.out, "epochs.csv", record.epochs_csv())?;
    write_file(&a.out, "summary.csv", record.summary_csv())?;
    write_file(&a.out, "calibration.csv", out.log.calibration_log())?;
    write_file(&a.out, "test_ids.txt", id_list(&sp.test))?;
    write_file(&a.out, "predictions.csv", crate::detfile::write_predictions(&preds))?;
    println!(
        "{mode_name}: best epoch {} (val mAP@50 {:.4}), test mAP@50 {:.4}, mAP@50:95 {:.4}",
        out.log.best_epoch, out.log.best_val_map50, report_map.0, report_map.1
    );
    finish(cli, &cfg, &a.out, datasets, outputs_all.iter().map(|s| s.to_string()).collect())
}

fn eval(cli: &Cli, a: &EvalArgs) -> CmdResult {
    let (meta, params) = model::read(&a.model)?;
    let mut cfg = Config::parse(&meta.config).map_err(|e| data(anyhow::Error::new(e).context("model config")))?;
    cfg.apply_overrides(&cli.set).map_err(config)?;
    cfg.validate().map_err(config)?;
    let ds = load_dataset(&a.data)?;
    if ds.class_names != meta.class_names {
        return Err(data(anyhow::anyhow!(
            "{} lists classes {:?}, the model was trained on {:?}",
            a.data.display(),
            ds.class_names,
            meta.class_names
        )));
    }
    let labeled = ds.labeled_only();
    let chosen = match &a.ids {
        Some(p) => labeled
            .subset_by_ids(&read_ids(p)?)
            .map_err(|m| data(anyhow::anyhow!("{}: {m}", p.display())))?,
        None => labeled,
    };
    if chosen.is_empty() {
        return Err(data(anyhow::anyhow!("no labelled images to evaluate")));
    }
    let n_classes = ds.n_classes();
    let samples = prepare(&chosen.samples, meta.target_size);
    let (report, preds) = if a.oracle {
        let preds: Vec<ImageDetections<f64>> = ground_truth(&samples)
            .into_iter()
            .map(|g| ImageDetections {
                image_id: g.image_id,
                detections: g.boxes.iter().map(|b| Detection::new(b.bbox, b.class_id, 1.0)).collect(),
            })
            .collect();
        let report = map_scores(&preds, &ground_truth(&samples), n_classes).map_err(data)?;
        (report, preds)
    } else {
        let backend = Backend::from_config(&cfg, n_classes);
        evaluate_params(&backend, &params, &samples, n_classes).map_err(from_train)?
    };
    let owned = ["eval.json", "eval.csv", "predictions.csv"];
    prepare_out(&a.out, &owned, a.overwrite, false)?;
    let json = serde_json::to_string_pretty(&report).map_err(data)? + "\n";
    write_file(&a.out, "eval.json", json)?;
    write_file(&a.out, "eval.csv", report.to_csv())?;
    write_file(&a.out, "predictions.csv", crate::detfile::write_predictions(&preds))?;
    println!("mAP@50 {:.4}  mAP@50:95 {:.4}  ({} images)", report.map50, report.map50_95, report.n_images);
    let datasets = vec![fingerprint("model", &a.model)?, fingerprint("data", &a.data)?];
    finish(cli, &cfg, &a.out, datasets, owned.iter().map(|s| s.to_string()).collect())
}

fn fuse(cli: &Cli, a: &FuseArgs) -> CmdResult {
    let flags: Vec<String> = [flag("wbf_iou", a.iou), flag("wbf_skip_conf", a.skip_conf)]
        .into_iter()
        .flatten()
        .collect();
    let cfg = load_config(cli, &flags)?;
    let tables = a
        .inputs
        .iter()
        .map(|p| crate::detfile::read(p).map_err(data))
        .collect::<CmdResult<Vec<_>>>()?;
    let ids: BTreeSet<&String> = tables.iter().flat_map(|t| t.keys()).collect();
    let mut fused = BTreeMap::new();
    for id in ids {
        let sources: Vec<Vec<Detection<f64>>> = tables.iter().map(|t| t.get(id).cloned().unwrap_or_default()).collect();
        fused.insert(id.clone(), weighted_boxes_fusion(&sources, cfg.train.wbf));
    }
    prepare_out(&a.out, &["fused.csv"], a.overwrite, false)?;
    write_file(&a.out, "fused.csv", crate::detfile::write_fused(&fused))?;
    let datasets = a
        .inputs
        .iter()
        .map(|p| fingerprint("detections", p))
        .collect::<CmdResult<Vec<_>>>()?;
    finish(cli, &cfg, &a.out, datasets, vec!["fused.csv".into()])
}

fn simulate(cli: &Cli, a: &SimulateArgs) -> CmdResult {
    let flags: Vec<String> = flag("workers", a.workers).into_iter().collect();
    let cfg = load_config(cli, &flags)?;
    let mode = match a.mode {
        SimulateMode::InDomain => ExperimentMode::InDomain,
        SimulateMode::CrossDomain => ExperimentMode::CrossDomain,
    };
    let e = &cfg.experiment;
    if mode == ExperimentMode::CrossDomain && a.new_domain.is_none() && !e.shift_enabled {
        return Err(config(anyhow::anyhow!(
            "cross-domain mode needs --new-domain DIR or a sensor shift (shift.enabled = true)"
        )));
    }
    if mode == ExperimentMode::InDomain && a.new_domain.is_some() {
        return Err(config(anyhow::anyhow!("--new-domain only applies to --mode cross-domain")));
    }
    let settings = cfg.to_text();
    let mut datasets = Vec::new();
    let basic = match &a.data {
        Some(dir) => {
            datasets.push(fingerprint("basic", dir)?);
            load_dataset(dir)?
        }
        None => {
            datasets.push(manifest::fingerprint_synthetic("basic", &settings, e.n_images));
            synth_generate(&e.world, e.n_images).map_err(config)?
        }
    };
    let new_domain = match (mode, &a.new_domain) {
        (ExperimentMode::InDomain, _) => None,
        (_, Some(dir)) => {
            datasets.push(fingerprint("new_domain", dir)?);
            let nd = load_dataset(dir)?;
            if nd.class_names != basic.class_names {
                return Err(data(anyhow::anyhow!("the two domains list different classes")));
            }
            Some(nd)
        }
        (_, None) => {
            datasets.push(manifest::fingerprint_synthetic("new_domain", &settings, e.n_shifted));
            synthetic_data(&cfg).map_err(config)?.new_domain
        }
    };
    let input = ExperimentData { basic, new_domain };
    let backend = Backend::from_config(&cfg, input.basic.n_classes());
    let jobs = a
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
        .max(1);
    let owned = [
        "run_record.json",
        "epochs.csv",
        "summary.csv",
        "comparison.txt",
        "pr_curves.csv",
        "calibration.csv",
        "predictions",
    ];
    prepare_out(&a.out, &owned, a.overwrite, false)?;
    let out = run_experiment(mode, &cfg, &input, &backend, jobs, &|m| eprintln!("{m}")).map_err(from_experiment)?;

    let record = &out.record;
    let table = record.comparison_table();
    let mut calibration = String::from("replication,arm,epoch,class,tau,sample_size\n");
    for r in &record.replications {
        for arm in &r.arms {
            for row in arm.log.calibration_log().lines().skip(1) {
                calibration.push_str(&format!("{},{},{row}\n", r.index, arm.name));
            }
        }
    }
    let mut outputs: Vec<String> = owned[..owned.len() - 1].iter().map(|s| s.to_string()).collect();
    write_file(&a.out, "run_record.json", record.to_json())?;
    write_file(&a.out, "epochs.csv", record.epochs_csv())?;
    write_file(&a.out, "summary.csv", record.summary_csv())?;
    write_file(&a.out, "comparison.txt", &table)?;
    write_file(&a.out, "pr_curves.csv", &out.pr_curves_csv)?;
    write_file(&a.out, "calibration.csv", calibration)?;
    for art in &out.artifacts {
        let file = format!("predictions/rep{}_{}.csv", art.replication, art.arm);
        write_file(&a.out, &file, crate::detfile::write_predictions(&art.predictions))?;
        outputs.push(file);
    }
    print!("{table}");
    finish(cli, &cfg, &a.out, datasets, outputs)
}

fn serve_toy(cli: &Cli, a: &ServeToyArgs) -> CmdResult {
    let cfg = load_config(cli, &[])?;
    let n = a.n_classes.unwrap_or(cfg.experiment.world.n_classes);
    let mut det = ToyDetector::new(cfg.toy_config(n)).map_err(detector)?;
    let stdin = io::stdin();
    let stdout = io::stdout();
    protocol::serve(&mut det, stdin.lock(), BufWriter::new(stdout.lock())).map_err(detector)
}
