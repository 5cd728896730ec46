use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use featacq::acquisition::format_trace;
use featacq::data::{
    load_csv, make_costs, split_manifest, split_thirds, CostKind, CostVector, Dataset, LabelColumn, SplitSpec,
    Standardizer,
};
use featacq::evaluation::{
    curve_csv, evaluate, evaluate_traces, interpolate_accuracy, read_curve_csv, sweep as run_sweep, CostAxis, Curve,
    ParetoPoint, SweepOptions,
};
use featacq::io::write_atomic;
use featacq::training::{history_csv, train as run_train, TrainConfig};
use featacq::{Error, ModelParams};
use serde_json::{Map, Value};

use crate::error::{CliError, CliResult};
use crate::manifest::{now, DatasetFingerprint, RunManifest, MANIFEST_FILE};
use crate::{svg, CurveArgs, EvalArgs, RunArgs, SweepArgs, TrainArgs};

const PARAMS: &str = "params.txt";
const HISTORY: &str = "history.csv";
const METRICS: &str = "metrics.csv";
const STANDARDIZATION: &str = "standardization.txt";
const SPLIT: &str = "split.csv";
const VALID_FRONT: &str = "valid_front.csv";
const TEST_CURVE: &str = "test_curve.csv";
const SWEEP_MANIFEST: &str = "sweep_manifest.csv";

/// Dataset, cost and evaluation settings shared by `train` and `sweep`.
struct Setup {
    data: PathBuf,
    label: String,
    costs: String,
    split_seed: u64,
    eval_seed: u64,
    eval_samples: usize,
    axis: Option<CostAxis>,
}

struct Prepared {
    fingerprint: DatasetFingerprint,
    cost_vector: CostVector,
    axis: CostAxis,
    standardizer: Standardizer,
    train: Dataset,
    valid: Dataset,
    test: Dataset,
}

fn write(path: &Path, text: &str) -> CliResult<()> {
    write_atomic(path, text.as_bytes())?;
    Ok(())
}

fn parse_label(s: &str) -> LabelColumn {
    match s.parse() {
        Ok(l) => l,
        Err(never) => match never {},
    }
}

fn parse_costs(s: &str) -> CliResult<CostKind> {
    s.parse().map_err(|e: Error| CliError::Usage(e.to_string()))
}

fn parse_axis(s: &str) -> CliResult<CostAxis> {
    s.parse().map_err(|e: Error| CliError::Usage(e.to_string()))
}

fn read_json(path: &Path, what: &str) -> CliResult<Value> {
    let text = featacq::io::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("malformed {what} {}: {e}", path.display())))
}

fn config_object(path: Option<&Path>) -> CliResult<Map<String, Value>> {
    match path {
        None => Ok(Map::new()),
        Some(p) => match read_json(p, "config")? {
            Value::Object(m) => Ok(m),
            _ => Err(CliError::Usage(format!("config {} must be a JSON object", p.display()))),
        },
    }
}

fn to_config(obj: Map<String, Value>, origin: &str) -> CliResult<TrainConfig> {
    let cfg: TrainConfig = serde_json::from_value(Value::Object(obj))
        .map_err(|e| CliError::Usage(format!("invalid config in {origin}: {e}")))?;
    cfg.validate()?;
    Ok(cfg)
}

fn required<'a, T>(value: &'a Option<T>, flag: &str) -> CliResult<&'a T> {
    value
        .as_ref()
        .ok_or_else(|| CliError::Usage(format!("{flag} is required unless --manifest is given")))
}

fn setup_from_flags(run: &RunArgs, config_seed: u64) -> CliResult<Setup> {
    let data = required(&run.data.data, "--data")?;
    let data = data.canonicalize().map_err(|e| Error::Io {
        path: data.clone(),
        source: e,
    })?;
    let seed = run.seed.unwrap_or(config_seed);
    Ok(Setup {
        data,
        label: required(&run.data.label, "--label")?.clone(),
        costs: run.data.costs.clone().unwrap_or_else(|| "uniform".into()),
        split_seed: seed,
        eval_seed: seed,
        eval_samples: run.eval_samples.unwrap_or(1),
        axis: run.axis.as_deref().map(parse_axis).transpose()?,
    })
}

fn setup_from_manifest(m: &RunManifest) -> Setup {
    Setup {
        data: m.dataset.path.clone(),
        label: m.dataset.label.clone(),
        costs: m.costs.clone(),
        split_seed: m.split_seed,
        eval_seed: m.eval_seed,
        eval_samples: m.eval_samples,
        axis: Some(m.axis),
    }
}

fn load_manifest(path: &Path, command: &str) -> CliResult<RunManifest> {
    let m = RunManifest::load(path)?;
    if m.command != command {
        return Err(CliError::Usage(format!(
            "{} records a `{}` run, not `{command}`",
            path.display(),
            m.command
        )));
    }
    m.dataset.verify()?;
    Ok(m)
}

fn prepare(setup: &Setup) -> CliResult<Prepared> {
    if setup.eval_samples == 0 {
        return Err(CliError::Usage("--eval-samples must be at least 1".into()));
    }
    let label = parse_label(&setup.label);
    let kind = parse_costs(&setup.costs)?;
    let sha256 = DatasetFingerprint::file_digest(&setup.data)?;
    let data = load_csv(&setup.data, &label)?;
    let cost_vector = make_costs(&kind, data.n_features())?;
    let (train, valid, test) = split_thirds(&data, &SplitSpec::thirds(setup.split_seed))?;
    let standardizer = Standardizer::fit(&train);
    Ok(Prepared {
        fingerprint: DatasetFingerprint {
            path: setup.data.clone(),
            label: setup.label.clone(),
            rows: data.len(),
            columns: data.n_features() + 1,
            sha256,
        },
        axis: setup.axis.unwrap_or_else(|| CostAxis::default_for(&cost_vector)),
        cost_vector,
        train: standardizer.apply(&train)?,
        valid: standardizer.apply(&valid)?,
        test: standardizer.apply(&test)?,
        standardizer,
    })
}

fn write_common(out: &Path, p: &Prepared, outputs: &mut BTreeMap<String, String>) -> CliResult<()> {
    p.standardizer.save(&out.join(STANDARDIZATION))?;
    write(&out.join(SPLIT), &split_manifest(&p.train, &p.valid, &p.test))?;
    outputs.insert("standardization".into(), STANDARDIZATION.into());
    outputs.insert("split".into(), SPLIT.into());
    Ok(())
}

fn manifest(
    command: &str,
    started_at: String,
    setup: &Setup,
    p: &Prepared,
    configs: Vec<TrainConfig>,
    outputs: BTreeMap<String, String>,
) -> RunManifest {
    RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        command: command.into(),
        started_at,
        finished_at: now(),
        dataset: p.fingerprint.clone(),
        costs: setup.costs.clone(),
        split_seed: setup.split_seed,
        eval_seed: setup.eval_seed,
        eval_samples: setup.eval_samples,
        axis: p.axis,
        configs,
        outputs,
    }
}

fn metrics_csv(rows: &[(&str, &ParetoPoint)]) -> String {
    let mut out = String::from("split,mean_cost,normalized_cost,accuracy\n");
    for (name, p) in rows {
        writeln!(out, "{name},{},{},{}", p.mean_cost, p.normalized_cost, p.accuracy).unwrap();
    }
    out
}

pub fn train(args: TrainArgs) -> CliResult<()> {
    let started_at = now();
    let (setup, cfg) = match &args.run.manifest {
        Some(path) => {
            let m = load_manifest(path, "train")?;
            let [cfg] = <[TrainConfig; 1]>::try_from(m.configs.clone())
                .map_err(|_| CliError::Usage("a train manifest holds exactly one config".into()))?;
            (setup_from_manifest(&m), cfg)
        }
        None => {
            let mut obj = config_object(args.run.config.as_deref())?;
            if let Some(seed) = args.run.seed {
                obj.insert("seed".into(), seed.into());
            }
            if let Some(lambda) = args.lambda {
                obj.insert("lambda".into(), lambda.into());
            }
            if let Some(epochs) = args.epochs {
                obj.insert("epochs".into(), epochs.into());
            }
            let cfg = to_config(obj, "--config")?;
            (setup_from_flags(&args.run, cfg.seed)?, cfg)
        }
    };
    let p = prepare(&setup)?;
    let out = &args.run.out;
    log::info!(
        "training on {} rows ({} features, {} classes), lambda {}",
        p.train.len(),
        p.train.n_features(),
        p.train.n_classes(),
        cfg.lambda
    );
    let outcome = match run_train(&p.train, &p.valid, &p.cost_vector, &cfg) {
        Ok(o) => o,
        Err(Error::TrainingDiverged(d)) => {
            let path = out.join("diverged_params.txt");
            d.checkpoint.save(&path)?;
            eprintln!("last finite parameters saved to {}", path.display());
            return Err(Error::TrainingDiverged(d).into());
        }
        Err(e) => return Err(e.into()),
    };
    let valid = evaluate(
        &outcome.params,
        &p.valid,
        &p.cost_vector,
        setup.eval_seed,
        setup.eval_samples,
    )?;
    let test = evaluate(
        &outcome.params,
        &p.test,
        &p.cost_vector,
        setup.eval_seed,
        setup.eval_samples,
    )?;

    let mut outputs = BTreeMap::new();
    outcome.params.save(&out.join(PARAMS))?;
    write(&out.join(HISTORY), &history_csv(&outcome.history))?;
    write(&out.join(METRICS), &metrics_csv(&[("valid", &valid), ("test", &test)]))?;
    write_common(out, &p, &mut outputs)?;
    for (k, v) in [("params", PARAMS), ("history", HISTORY), ("metrics", METRICS)] {
        outputs.insert(k.into(), v.into());
    }
    manifest("train", started_at, &setup, &p, vec![cfg], outputs).save(out)?;
    println!(
        "valid accuracy {:.4} mean_cost {:.4} normalized_cost {:.4}",
        valid.accuracy, valid.mean_cost, valid.normalized_cost
    );
    println!(
        "test accuracy {:.4} mean_cost {:.4} normalized_cost {:.4}",
        test.accuracy, test.mean_cost, test.normalized_cost
    );
    Ok(())
}

/// `grid` is either an inline JSON array or the path of a file holding one.
fn read_grid(grid: &Path, base: &Map<String, Value>) -> CliResult<Vec<TrainConfig>> {
    let inline = grid.to_str().map(str::trim_start).filter(|s| s.starts_with('['));
    let value = match inline {
        Some(text) => serde_json::from_str(text).map_err(|e| CliError::Usage(format!("inline grid: {e}")))?,
        None => read_json(grid, "grid")?,
    };
    let entries = match value {
        Value::Array(a) if !a.is_empty() => a,
        _ => {
            return Err(CliError::Usage(format!(
                "grid {} must be a non-empty JSON array",
                grid.display()
            )))
        }
    };
    entries
        .into_iter()
        .enumerate()
        .map(|(k, entry)| match entry {
            Value::Object(overrides) => {
                let mut obj = base.clone();
                obj.extend(overrides);
                to_config(obj, &format!("grid entry {k}"))
            }
            _ => Err(CliError::Usage(format!("grid entry {k} is not a JSON object"))),
        })
        .collect()
}

pub fn sweep(args: SweepArgs) -> CliResult<()> {
    let started_at = now();
    let (setup, grid) = match &args.run.manifest {
        Some(path) => {
            let m = load_manifest(path, "sweep")?;
            (setup_from_manifest(&m), m.configs)
        }
        None => {
            let mut base = config_object(args.run.config.as_deref())?;
            if let Some(seed) = args.run.seed {
                base.insert("seed".into(), seed.into());
            }
            let base_seed = to_config(base.clone(), "--config")?.seed;
            let grid = read_grid(required(&args.grid, "--grid")?, &base)?;
            (setup_from_flags(&args.run, base_seed)?, grid)
        }
    };
    let p = prepare(&setup)?;
    let out = &args.run.out;
    log::info!("sweeping {} configs", grid.len());
    let opts = SweepOptions {
        eval_seed: setup.eval_seed,
        eval_samples: setup.eval_samples,
        axis: p.axis,
        out_dir: Some(out.clone()),
    };
    let result = run_sweep(&p.train, &p.valid, &p.test, &p.cost_vector, &grid, &opts)?;
    for e in &result.entries {
        if let Err(msg) = &e.outcome {
            eprintln!("warning: {} excluded: {msg}", e.model_id);
        }
    }

    let mut outputs = BTreeMap::new();
    write(&out.join(VALID_FRONT), &curve_csv(&result.valid_front))?;
    write(&out.join(TEST_CURVE), &curve_csv(result.test_curve.points()))?;
    write_common(out, &p, &mut outputs)?;
    for (k, v) in [
        ("valid_front", VALID_FRONT),
        ("test_curve", TEST_CURVE),
        ("sweep_manifest", SWEEP_MANIFEST),
        ("models", "models"),
    ] {
        outputs.insert(k.into(), v.into());
    }
    manifest("sweep", started_at, &setup, &p, grid, outputs).save(out)?;
    for pt in result.test_curve.points() {
        println!(
            "{} test accuracy {:.4} mean_cost {:.4} normalized_cost {:.4}",
            pt.model_id, pt.accuracy, pt.mean_cost, pt.normalized_cost
        );
    }
    Ok(())
}

struct EvalTarget {
    params: ModelParams,
    data: Dataset,
    costs: CostVector,
    model_id: String,
    seed: u64,
    samples: usize,
    out: PathBuf,
}

fn target_from_run(dir: &Path, args: &EvalArgs) -> CliResult<EvalTarget> {
    let m = load_manifest_any(&dir.join(MANIFEST_FILE))?;
    let (params_path, model_id) = match (m.command.as_str(), &args.model) {
        ("train", None) => (m.output(dir, "params")?, "model".to_string()),
        ("train", Some(_)) => return Err(CliError::Usage("--model only applies to sweep runs".into())),
        (_, Some(id)) => (m.output(dir, "models")?.join(id).join(PARAMS), id.clone()),
        (_, None) => return Err(CliError::Usage("--model is required for sweep runs".into())),
    };
    let setup = setup_from_manifest(&m);
    let label = parse_label(&setup.label);
    let full = load_csv(&setup.data, &label)?;
    let (train, valid, test) = split_thirds(&full, &SplitSpec::thirds(setup.split_seed))?;
    let raw = match args.split.as_str() {
        "train" => train,
        "valid" => valid,
        "test" => test,
        s => {
            return Err(CliError::Usage(format!(
                "unknown split `{s}` (expected train, valid or test)"
            )))
        }
    };
    let standardizer = Standardizer::load(&m.output(dir, "standardization")?)?;
    let costs = make_costs(&parse_costs(&setup.costs)?, full.n_features())?;
    let out = args
        .out
        .clone()
        .unwrap_or_else(|| dir.join("eval").join(format!("{model_id}-{}.csv", args.split)));
    Ok(EvalTarget {
        params: ModelParams::load(&params_path)?,
        data: standardizer.apply(&raw)?,
        costs,
        model_id,
        seed: args.seed.unwrap_or(m.eval_seed),
        samples: args.eval_samples.unwrap_or(m.eval_samples),
        out,
    })
}

fn load_manifest_any(path: &Path) -> CliResult<RunManifest> {
    let m = RunManifest::load(path)?;
    m.dataset.verify()?;
    Ok(m)
}

fn target_from_files(args: &EvalArgs) -> CliResult<EvalTarget> {
    let data_path = args.data.data.as_ref().expect("clap requires --data");
    let label = parse_label(args.data.label.as_deref().expect("clap requires --label"));
    let mut data = load_csv(data_path, &label)?;
    if let Some(s) = &args.standardization {
        data = Standardizer::load(s)?.apply(&data)?;
    }
    let kind = parse_costs(args.data.costs.as_deref().unwrap_or("uniform"))?;
    Ok(EvalTarget {
        params: ModelParams::load(args.params.as_ref().expect("clap requires --params"))?,
        costs: make_costs(&kind, data.n_features())?,
        data,
        model_id: "model".into(),
        seed: args.seed.unwrap_or(0),
        samples: args.eval_samples.unwrap_or(1),
        out: args.out.clone().expect("clap requires --out"),
    })
}

pub fn eval(args: EvalArgs) -> CliResult<()> {
    let t = match &args.run {
        Some(dir) => target_from_run(dir, &args)?,
        None => target_from_files(&args)?,
    };
    let point = evaluate(&t.params, &t.data, &t.costs, t.seed, t.samples)?.with_id(t.model_id.clone());
    write(&t.out, &curve_csv(std::slice::from_ref(&point)))?;
    if let Some(path) = &args.trace {
        let traces = evaluate_traces(&t.params, &t.data, &t.costs, t.seed, t.samples)?;
        let mut text = String::new();
        for (i, row) in traces.iter().enumerate() {
            for (j, trace) in row.iter().enumerate() {
                writeln!(text, "# row {} episode {}", t.data.row_id(i), j).unwrap();
                writeln!(text, "{}", format_trace(trace, Some(t.data.label(i)))).unwrap();
            }
        }
        write(path, &text)?;
    }
    println!(
        "accuracy {:.6} mean_cost {:.6} normalized_cost {:.6}",
        point.accuracy, point.mean_cost, point.normalized_cost
    );
    Ok(())
}

pub fn curve(args: CurveArgs) -> CliResult<()> {
    let axis = parse_axis(&args.axis)?;
    let points = read_curve_csv(&args.curve)?;
    if points.is_empty() {
        return Err(CliError::Data(format!(
            "{} holds no curve points",
            args.curve.display()
        )));
    }
    let curve = Curve::new(points, axis);
    let mut csv = String::from("level,accuracy\n");
    for &level in &args.levels {
        if !level.is_finite() {
            return Err(CliError::Usage(format!("level {level} is not a finite number")));
        }
        let acc = interpolate_accuracy(&curve, level)?;
        println!("level {level} accuracy {acc:.6}");
        writeln!(csv, "{level},{acc}").unwrap();
    }
    if let Some(out) = &args.out {
        write(out, &csv)?;
    }
    if let Some(path) = &args.svg {
        write(path, &svg::render(&curve))?;
    }
    Ok(())
}
