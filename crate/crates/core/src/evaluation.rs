//! Accuracy/cost measurement, Pareto-front model selection, curve
//! interpolation and hyperparameter sweeps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::acquisition::{run_episode, AcquisitionTrace};
use crate::data::{CostVector, Dataset};
use crate::error::{Error, Result};
use crate::io::{read_to_string, write_atomic};
use crate::model::{predict_class, ModelParams};
use crate::rng::{self, Purpose};
use crate::training::{history_csv, train, EpochRecord, TrainConfig};

/// Mean evaluation cost and accuracy of one model on one dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParetoPoint {
    pub model_id: String,
    pub mean_cost: f64,
    /// `mean_cost` divided by the total cost of all features.
    pub normalized_cost: f64,
    pub accuracy: f64,
}

impl ParetoPoint {
    pub fn new(model_id: impl Into<String>, mean_cost: f64, total_cost: f64, accuracy: f64) -> Self {
        ParetoPoint {
            model_id: model_id.into(),
            mean_cost,
            normalized_cost: mean_cost / total_cost,
            accuracy,
        }
    }

    pub fn with_id(mut self, model_id: impl Into<String>) -> Self {
        self.model_id = model_id.into();
        self
    }

    pub fn cost(&self, axis: CostAxis) -> f64 {
        match axis {
            CostAxis::Raw => self.mean_cost,
            CostAxis::Normalized => self.normalized_cost,
        }
    }

    /// Weakly better on both coordinates and strictly better on one.
    pub fn dominates(&self, other: &ParetoPoint) -> bool {
        self.accuracy >= other.accuracy
            && self.mean_cost <= other.mean_cost
            && (self.accuracy > other.accuracy || self.mean_cost < other.mean_cost)
    }
}

/// Which cost coordinate a curve is read along.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CostAxis {
    /// Mean summed cost of acquired features.
    Raw,
    /// Fraction of the total feature cost; for uniform costs, the fraction of features used.
    Normalized,
}

impl CostAxis {
    /// Normalized for uniform costs, raw otherwise.
    pub fn default_for(costs: &CostVector) -> Self {
        if costs.is_uniform() {
            CostAxis::Normalized
        } else {
            CostAxis::Raw
        }
    }
}

impl std::str::FromStr for CostAxis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(CostAxis::Raw),
            "normalized" => Ok(CostAxis::Normalized),
            _ => Err(Error::InvalidConfig(format!("unknown cost axis `{s}`"))),
        }
    }
}

/// Points sorted by cost with one point per distinct cost.
#[derive(Clone, Debug, PartialEq)]
pub struct Curve {
    points: Vec<ParetoPoint>,
    axis: CostAxis,
}

impl Curve {
    /// Sort by the axis cost; among equal costs the lowest `model_id` is kept.
    pub fn new(mut points: Vec<ParetoPoint>, axis: CostAxis) -> Self {
        points.sort_by(|a, b| {
            a.cost(axis)
                .total_cmp(&b.cost(axis))
                .then_with(|| a.model_id.cmp(&b.model_id))
        });
        points.dedup_by(|later, earlier| later.cost(axis) == earlier.cost(axis));
        Curve { points, axis }
    }

    pub fn points(&self) -> &[ParetoPoint] {
        &self.points
    }

    pub fn axis(&self) -> CostAxis {
        self.axis
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }
}

/// Run `samples` seeded episodes per example and collect the traces.
///
/// Example `i` draws episode `j` from the `Eval` stream keyed by
/// `(row_id(i), j)`, so results do not depend on row order or thread count.
pub fn evaluate_traces(
    params: &ModelParams,
    data: &Dataset,
    costs: &CostVector,
    seed: u64,
    samples: usize,
) -> Result<Vec<Vec<AcquisitionTrace>>> {
    if samples == 0 {
        return Err(Error::InvalidConfig("eval_samples must be at least 1".into()));
    }
    let spec = params.spec();
    if data.n_features() != spec.n_features || costs.len() != spec.n_features {
        return Err(Error::InvalidDimensions(format!(
            "model expects {} features; dataset has {} and the cost vector {}",
            spec.n_features,
            data.n_features(),
            costs.len()
        )));
    }
    if data.n_classes() > spec.n_classes {
        return Err(Error::InvalidDimensions(format!(
            "model predicts {} classes; dataset has {}",
            spec.n_classes,
            data.n_classes()
        )));
    }
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            (0..samples)
                .map(|j| {
                    let mut rng = rng::stream(seed, Purpose::Eval, &[data.row_id(i) as u64, j as u64]);
                    run_episode(params, data.row(i), costs, &mut rng)
                })
                .collect()
        })
        .collect()
}

/// Accuracy and mean evaluation cost over `samples` episodes per example.
pub fn evaluate(
    params: &ModelParams,
    data: &Dataset,
    costs: &CostVector,
    seed: u64,
    samples: usize,
) -> Result<ParetoPoint> {
    let traces = evaluate_traces(params, data, costs, seed, samples)?;
    let mut per_row = Vec::with_capacity(data.len());
    for (i, row) in traces.iter().enumerate() {
        let mut correct = 0usize;
        let mut cost = 0.0;
        for t in row {
            correct += (predict_class(&t.scores)? == data.label(i)) as usize;
            cost += t.eval_cost;
        }
        per_row.push((data.row_id(i), correct, cost));
    }
    // Sum in row-id order.
    per_row.sort_by_key(|r| r.0);
    let episodes = (data.len() * samples) as f64;
    let correct: usize = per_row.iter().map(|r| r.1).sum();
    let cost: f64 = per_row.iter().map(|r| r.2).sum();
    Ok(ParetoPoint::new(
        "",
        cost / episodes,
        costs.total(),
        correct as f64 / episodes,
    ))
}

/// Points not dominated by any other, sorted by cost. Points with identical
/// coordinates keep only the lowest `model_id`.
pub fn pareto_front(points: &[ParetoPoint]) -> Vec<ParetoPoint> {
    let mut sorted: Vec<&ParetoPoint> = points.iter().collect();
    sorted.sort_by(|a, b| {
        a.mean_cost
            .total_cmp(&b.mean_cost)
            .then_with(|| b.accuracy.total_cmp(&a.accuracy))
            .then_with(|| a.model_id.cmp(&b.model_id))
    });
    let mut front: Vec<ParetoPoint> = Vec::new();
    for p in sorted {
        let better = front.last().is_none_or(|best| p.accuracy > best.accuracy);
        if better {
            front.push(p.clone());
        }
    }
    front
}

/// Piecewise-linear accuracy at `level` along the curve's axis, clamped to
/// the end points outside the covered cost range.
pub fn interpolate_accuracy(curve: &Curve, level: f64) -> Result<f64> {
    let pts = curve.points();
    let axis = curve.axis();
    let first = pts.first().ok_or_else(|| Error::InvalidConfig("empty curve".into()))?;
    let last = pts.last().unwrap();
    if level <= first.cost(axis) {
        return Ok(first.accuracy);
    }
    if level >= last.cost(axis) {
        return Ok(last.accuracy);
    }
    let k = pts.partition_point(|p| p.cost(axis) <= level);
    let (lo, hi) = (&pts[k - 1], &pts[k]);
    let (x0, x1) = (lo.cost(axis), hi.cost(axis));
    if level == x0 {
        return Ok(lo.accuracy);
    }
    let w = (level - x0) / (x1 - x0);
    Ok(lo.accuracy + w * (hi.accuracy - lo.accuracy))
}

pub fn curve_csv(points: &[ParetoPoint]) -> String {
    let mut out = String::from("model_id,mean_cost,normalized_cost,accuracy\n");
    for p in points {
        writeln!(
            out,
            "{},{},{},{}",
            p.model_id, p.mean_cost, p.normalized_cost, p.accuracy
        )
        .unwrap();
    }
    out
}

pub fn read_curve_csv(path: &Path) -> Result<Vec<ParetoPoint>> {
    let text = read_to_string(path)?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["model_id", "mean_cost", "normalized_cost", "accuracy"] {
        return Err(Error::format(
            path,
            "expected header model_id,mean_cost,normalized_cost,accuracy",
        ));
    }
    let mut points = Vec::new();
    for (r, rec) in reader.deserialize::<ParetoPoint>().enumerate() {
        let p = rec.map_err(|e| Error::format(path, format!("row {}: {e}", r + 1)))?;
        if !(0.0..=1.0).contains(&p.accuracy) || p.mean_cost.is_nan() || p.mean_cost < 0.0 {
            return Err(Error::format(
                path,
                format!("row {}: accuracy or cost out of range", r + 1),
            ));
        }
        points.push(p);
    }
    Ok(points)
}

/// Evaluation settings and output location for [`sweep`].
#[derive(Clone, Debug)]
pub struct SweepOptions {
    pub eval_seed: u64,
    pub eval_samples: usize,
    pub axis: CostAxis,
    /// When set, every trained model is written under `out_dir/models/<model_id>/`
    /// and a manifest to `out_dir/sweep_manifest.csv`.
    pub out_dir: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct TrainedModel {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub valid_point: ParetoPoint,
}

#[derive(Clone, Debug)]
pub struct SweepEntry {
    pub model_id: String,
    pub config: TrainConfig,
    /// `Err` holds the divergence message of an excluded config.
    pub outcome: std::result::Result<TrainedModel, String>,
}

#[derive(Clone, Debug)]
pub struct SweepOutcome {
    pub entries: Vec<SweepEntry>,
    pub valid_front: Vec<ParetoPoint>,
    pub test_curve: Curve,
}

impl SweepOutcome {
    pub fn model(&self, model_id: &str) -> Option<&TrainedModel> {
        self.entries
            .iter()
            .find(|e| e.model_id == model_id)
            .and_then(|e| e.outcome.as_ref().ok())
    }
}

pub fn model_id(index: usize) -> String {
    format!("m{index:03}")
}

/// Train every config, select the validation Pareto front and measure the
/// selected models on the test split.
///
/// A config whose training diverges is logged and excluded; the sweep fails
/// only if all of them do.
pub fn sweep(
    train_set: &Dataset,
    valid_set: &Dataset,
    test_set: &Dataset,
    costs: &CostVector,
    grid: &[TrainConfig],
    opts: &SweepOptions,
) -> Result<SweepOutcome> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig("empty sweep grid".into()));
    }
    for cfg in grid {
        cfg.validate()?;
    }
    let entries: Vec<SweepEntry> = grid
        .par_iter()
        .enumerate()
        .map(|(k, cfg)| -> Result<SweepEntry> {
            let id = model_id(k);
            let outcome = match train(train_set, valid_set, costs, cfg) {
                Ok(out) => {
                    let point = evaluate(&out.params, valid_set, costs, opts.eval_seed, opts.eval_samples)?;
                    Ok(TrainedModel {
                        params: out.params,
                        history: out.history,
                        valid_point: point.with_id(id.clone()),
                    })
                }
                Err(e) if e.is_numerical() => {
                    log::warn!("config {id} excluded: {e}");
                    Err(e.to_string())
                }
                Err(e) => return Err(e),
            };
            Ok(SweepEntry {
                model_id: id,
                config: cfg.clone(),
                outcome,
            })
        })
        .collect::<Result<_>>()?;

    let valid_points: Vec<ParetoPoint> = entries
        .iter()
        .filter_map(|e| e.outcome.as_ref().ok().map(|m| m.valid_point.clone()))
        .collect();
    if valid_points.is_empty() {
        return Err(Error::SweepFailed);
    }
    let valid_front = pareto_front(&valid_points);
    let test_points = valid_front
        .iter()
        .map(|p| {
            let model = entries
                .iter()
                .find(|e| e.model_id == p.model_id)
                .and_then(|e| e.outcome.as_ref().ok())
                .expect("front model exists");
            evaluate(&model.params, test_set, costs, opts.eval_seed, opts.eval_samples)
                .map(|t| t.with_id(p.model_id.clone()))
        })
        .collect::<Result<Vec<_>>>()?;
    let outcome = SweepOutcome {
        entries,
        valid_front,
        test_curve: Curve::new(test_points, opts.axis),
    };
    if let Some(dir) = &opts.out_dir {
        persist_sweep(&outcome, dir)?;
    }
    Ok(outcome)
}

fn persist_sweep(outcome: &SweepOutcome, dir: &Path) -> Result<()> {
    let mut manifest = String::from("model_id,status,lambda,params,history,config\n");
    for e in &outcome.entries {
        let model_dir = dir.join("models").join(&e.model_id);
        let config_json = serde_json::to_string_pretty(&e.config).expect("config serializes");
        write_atomic(&model_dir.join("config.json"), config_json.as_bytes())?;
        let rel = |f: &str| format!("models/{}/{f}", e.model_id);
        match &e.outcome {
            Ok(m) => {
                m.params.save(&model_dir.join("params.txt"))?;
                write_atomic(&model_dir.join("history.csv"), history_csv(&m.history).as_bytes())?;
                writeln!(
                    manifest,
                    "{},ok,{},{},{},{}",
                    e.model_id,
                    e.config.lambda,
                    rel("params.txt"),
                    rel("history.csv"),
                    rel("config.json")
                )
                .unwrap();
            }
            Err(_) => {
                writeln!(
                    manifest,
                    "{},diverged,{},,,{}",
                    e.model_id,
                    e.config.lambda,
                    rel("config.json")
                )
                .unwrap();
            }
        }
    }
    write_atomic(&dir.join("sweep_manifest.csv"), manifest.as_bytes())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{CellType, ModelSpec};

    fn pt(id: &str, cost: f64, acc: f64) -> ParetoPoint {
        ParetoPoint::new(id, cost, 1.0, acc)
    }

    #[test]
    fn front_examples() {
        let front = pareto_front(&[pt("a", 1.0, 0.9), pt("b", 2.0, 0.8)]);
        assert_eq!(front, vec![pt("a", 1.0, 0.9)]);
        let both = pareto_front(&[pt("b", 2.0, 0.9), pt("a", 1.0, 0.7)]);
        assert_eq!(both, vec![pt("a", 1.0, 0.7), pt("b", 2.0, 0.9)]);
        let tie = pareto_front(&[pt("m002", 1.0, 0.5), pt("m001", 1.0, 0.5)]);
        assert_eq!(tie, vec![pt("m001", 1.0, 0.5)]);
        // Same cost, lower accuracy is dominated.
        let same_cost = pareto_front(&[pt("a", 1.0, 0.5), pt("b", 1.0, 0.6)]);
        assert_eq!(same_cost, vec![pt("b", 1.0, 0.6)]);
    }

    #[test]
    fn interpolation_examples() {
        let curve = Curve::new(vec![pt("a", 0.2, 0.5), pt("b", 0.6, 0.9)], CostAxis::Raw);
        assert!((interpolate_accuracy(&curve, 0.4).unwrap() - 0.7).abs() < 1e-12);
        assert_eq!(interpolate_accuracy(&curve, 0.1).unwrap(), 0.5);
        assert_eq!(interpolate_accuracy(&curve, 0.9).unwrap(), 0.9);
        assert_eq!(interpolate_accuracy(&curve, 0.2).unwrap(), 0.5);
        assert_eq!(interpolate_accuracy(&curve, 0.6).unwrap(), 0.9);
        let three = Curve::new(
            vec![pt("a", 0.2, 0.5), pt("c", 1.0, 0.6), pt("b", 0.6, 0.9)],
            CostAxis::Raw,
        );
        assert_eq!(interpolate_accuracy(&three, 0.6).unwrap(), 0.9);
        assert!(interpolate_accuracy(&Curve::new(vec![], CostAxis::Raw), 0.5).is_err());
    }

    #[test]
    fn curve_dedups_equal_costs() {
        let curve = Curve::new(
            vec![pt("b", 0.5, 0.9), pt("a", 0.5, 0.7), pt("c", 0.1, 0.2)],
            CostAxis::Raw,
        );
        let ids: Vec<&str> = curve.points().iter().map(|p| p.model_id.as_str()).collect();
        assert_eq!(ids, ["c", "a"]);
    }

    #[test]
    fn curve_csv_round_trip() {
        let pts = vec![
            ParetoPoint::new("m000", 1.5, 16.0, 0.8125),
            ParetoPoint::new("m003", 0.1, 16.0, 0.25),
        ];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.csv");
        write_atomic(&path, curve_csv(&pts).as_bytes()).unwrap();
        assert_eq!(read_curve_csv(&path).unwrap(), pts);
    }

    fn majority_data() -> Dataset {
        // 10 rows, 60% class 0.
        let labels = vec![0, 1, 0, 0, 1, 0, 1, 0, 0, 1];
        Dataset::new((0..20).map(|v| v as f64 * 0.1).collect(), labels, 2, 2).unwrap()
    }

    #[test]
    fn constant_model_accuracy_is_class_share() {
        let spec = ModelSpec::new(2, 2, 3, 2, CellType::Gru);
        let mut params = ModelParams::zeros(spec).unwrap();
        params.block_mut("policy0.bias").unwrap().fill(-50.0);
        params.block_mut("policy1.bias").unwrap().fill(-50.0);
        params.block_mut("predictor.bias").unwrap().copy_from_slice(&[1.0, 0.0]);
        let costs = CostVector::new(vec![1.0, 1.0]).unwrap();
        let point = evaluate(&params, &majority_data(), &costs, 3, 1).unwrap();
        assert_eq!(point.accuracy, 0.6);
        assert_eq!(point.mean_cost, 0.0);
        assert_eq!(point, evaluate(&params, &majority_data(), &costs, 3, 1).unwrap());
    }

    #[test]
    fn saturated_policy_costs_everything() {
        let spec = ModelSpec::new(2, 2, 3, 2, CellType::Rnn);
        let mut params = ModelParams::zeros(spec).unwrap();
        params.block_mut("policy0.bias").unwrap().fill(50.0);
        params.block_mut("policy1.bias").unwrap().fill(50.0);
        let costs = CostVector::new(vec![1.0, 1.0]).unwrap();
        let point = evaluate(&params, &majority_data(), &costs, 3, 2).unwrap();
        assert_eq!(point.mean_cost, 2.0);
        assert_eq!(point.normalized_cost, 1.0);
    }

    #[test]
    fn zero_eval_samples_rejected() {
        let params = ModelParams::zeros(ModelSpec::new(2, 2, 3, 1, CellType::Rnn)).unwrap();
        let costs = CostVector::new(vec![1.0, 1.0]).unwrap();
        assert!(evaluate(&params, &majority_data(), &costs, 0, 0).is_err());
    }
}
