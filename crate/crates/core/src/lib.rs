//! Budgeted, cost-sensitive sequential feature acquisition.
//!
//! A model acquires features of an input over `T` steps. At each step a
//! policy head maps the current representation `z_t` to independent
//! Bernoulli probabilities over the `n` features, a mask is sampled, and a
//! recurrent cell (RNN or GRU) folds the newly observed values into
//! `z_{t+1}`. A linear predictor scores the classes from `z_{T+1}`.
//!
//! Training minimizes the expected squared prediction loss plus `lambda`
//! times the acquisition cost with a mixed score-function / pathwise
//! gradient estimator (see [`training`]). Evaluation counts the cost of a
//! feature once per episode, no matter how often it was acquired.
//!
//! ```no_run
//! use featacq::data::{load_csv, make_costs, split_thirds, standardize, CostKind, LabelColumn, SplitSpec};
//! use featacq::training::{train, TrainConfig};
//! use featacq::evaluation::evaluate;
//!
//! # fn main() -> featacq::Result<()> {
//! let data = load_csv("data/pendigits.csv".as_ref(), &LabelColumn::Name("class".into()))?;
//! let (train_set, valid, test) = split_thirds(&data, &SplitSpec::thirds(0))?;
//! let (train_set, rest, _stats) = standardize(&train_set, &[&valid, &test])?;
//! let costs = make_costs(&CostKind::Uniform, data.n_features())?;
//! let cfg = TrainConfig { lambda: 0.01, ..TrainConfig::default() };
//! let out = train(&train_set, &rest[0], &costs, &cfg)?;
//! let point = evaluate(&out.params, &rest[1], &costs, 0, 1)?;
//! println!("accuracy {} at {} features", point.accuracy, point.mean_cost);
//! # Ok(())
//! # }
//! ```

pub mod acquisition;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod io;
pub mod model;
pub mod rng;
pub mod training;

pub use acquisition::{predict, run_episode, sample_mask, AcquisitionTrace};
pub use data::{CostKind, CostVector, Dataset, LabelColumn, SplitSpec, Standardizer};
pub use error::{Error, Result};
pub use evaluation::{evaluate, interpolate_accuracy, pareto_front, CostAxis, Curve, ParetoPoint};
pub use model::{init_params, CellType, ModelParams, ModelSpec};
pub use training::{episode_gradient, sgd_step, train, GradientEstimate, TrainConfig};
