//! Nuisance-function learners: fit propensities, mediator models, outcome
//! regressions, and second-stage cross-world regressions on a training
//! split, then evaluate them on a disjoint prediction split.
//!
//! Three learners share one interface: `Dnn` (feed-forward ReLU networks
//! with hyperparameters chosen by k-fold cross-validation over a grid),
//! `Oracle` (closed-form truth from a synthetic scenario), and `Linear`
//! (ordinary least squares / logistic regression fit by full-batch gradient
//! descent). The mediator kind picks the fit plan:
//!
//! * **Continuous** — a(1|x), a(1|x,m) (the Bayes rewrite of the mediator
//!   density ratio), μ(x,d,m) per arm, and per-arm second-stage regressions
//!   of μ̂(X,d,M) against (X,D) whose value at (x,d') estimates
//!   ∫ μ(x,d,m) f(m|x,d') dm.
//! * **Binary** — a(1|x), f(1|x,d) per arm, μ(x,d,m) per arm; the
//!   cross-world term is the exact two-point sum Σ_m μ̂(x,d,m)·f̂(m|x,d').
//!
//! Out-of-sample discipline: the prediction split's D and Y are never read —
//! only its covariates (and observed mediator, where the regression takes M
//! as a feature) enter as prediction-time inputs.

use std::collections::BTreeMap;
use std::fmt;

use ndarray::{concatenate, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::domain::{mu_bounds, MediatorKind, NuisanceFit, ObservationTable};
use crate::error::{Error, Result};
use crate::neurnet::{self, Loss, NetworkModel, NetworkSpec, Optimizer, OutputLink};
use crate::synth::{oracle_nuisance_fit, OracleNuisance};

/// Which learner family produces the nuisance fits.
#[derive(Debug, Clone)]
pub enum LearnerKind {
    /// Neural networks; hyperparameters selected from this nonempty grid by
    /// cross-validation (per target), unless the plan carries pretuned specs.
    Dnn(Vec<NetworkSpec>),
    /// Closed-form truth for a synthetic scenario.
    Oracle(OracleNuisance),
    /// OLS / logistic regression baseline.
    Linear,
}

impl LearnerKind {
    pub fn name(&self) -> &'static str {
        match self {
            LearnerKind::Dnn(_) => "dnn",
            LearnerKind::Oracle(_) => "oracle",
            LearnerKind::Linear => "linear",
        }
    }
}

/// One regression in the fit plan.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum TargetId {
    /// a(1|x): treatment on covariates.
    PropensityX,
    /// a(1|x,m): treatment on covariates and mediator (continuous path).
    PropensityXM,
    /// f(1|x,d): mediator probability within treatment arm d (binary path).
    MediatorProb(u8),
    /// μ(x,d,m): outcome on covariates and mediator within arm d.
    OutcomeMu(u8),
    /// Second stage Ê[μ̂(X,d,M) | X, D]: cross-world regression for arm d
    /// (continuous path), evaluated at D = d'.
    CrossMu(u8),
}

impl TargetId {
    fn is_classifier(self) -> bool {
        matches!(
            self,
            TargetId::PropensityX | TargetId::PropensityXM | TargetId::MediatorProb(_)
        )
    }

    fn seed_slot(self) -> u64 {
        match self {
            TargetId::PropensityX => 0,
            TargetId::PropensityXM => 1,
            TargetId::MediatorProb(d) => 2 + u64::from(d),
            TargetId::OutcomeMu(d) => 4 + u64::from(d),
            TargetId::CrossMu(d) => 6 + u64::from(d),
        }
    }
}

impl fmt::Display for TargetId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TargetId::PropensityX => write!(f, "a_x"),
            TargetId::PropensityXM => write!(f, "a_xm"),
            TargetId::MediatorProb(d) => write!(f, "f_m_d{d}"),
            TargetId::OutcomeMu(d) => write!(f, "mu_d{d}"),
            TargetId::CrossMu(d) => write!(f, "cross_mu_d{d}"),
        }
    }
}

/// What to fit and how to seed/tune it.
#[derive(Debug, Clone)]
pub struct FitPlan {
    pub mediator_kind: MediatorKind,
    /// The regressions this plan requires, in fit order (second-stage
    /// cross-world regressions come strictly after the outcome models whose
    /// predictions they consume).
    pub targets: Vec<TargetId>,
    /// Folds for hyperparameter cross-validation (DNN learner only).
    pub cv_folds: usize,
    /// Seed driving CV fold assignment and per-target init seeds.
    pub seed: u64,
    /// Hyperparameters already selected on an external tuning sample; when a
    /// target is present here the per-split cross-validation is skipped.
    pub pretuned: Option<BTreeMap<TargetId, NetworkSpec>>,
}

impl FitPlan {
    pub fn new(mediator_kind: MediatorKind) -> FitPlan {
        let targets = match mediator_kind {
            MediatorKind::Continuous => vec![
                TargetId::PropensityX,
                TargetId::PropensityXM,
                TargetId::OutcomeMu(0),
                TargetId::OutcomeMu(1),
                TargetId::CrossMu(0),
                TargetId::CrossMu(1),
            ],
            MediatorKind::Binary => vec![
                TargetId::PropensityX,
                TargetId::MediatorProb(0),
                TargetId::MediatorProb(1),
                TargetId::OutcomeMu(0),
                TargetId::OutcomeMu(1),
            ],
        };
        FitPlan {
            mediator_kind,
            targets,
            cv_folds: 3,
            seed: 0,
            pretuned: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> FitPlan {
        self.seed = seed;
        self
    }

    pub fn with_cv_folds(mut self, cv_folds: usize) -> FitPlan {
        self.cv_folds = cv_folds;
        self
    }
}

/// Per-target fitting record surfaced in run reports.
#[derive(Debug, Clone, Serialize)]
pub struct TargetDiagnostic {
    pub target: String,
    pub train_rows: usize,
    /// Selected network (DNN learner only).
    pub selected: Option<NetworkSpec>,
    /// Pooled validation data-loss of the selected candidate, when
    /// cross-validation actually ran.
    pub cv_loss: Option<f64>,
    /// Final epoch's training loss (DNN learner only).
    pub final_train_loss: Option<f64>,
}

/// Deterministic fold assignment: shuffle row indices with a ChaCha stream
/// seeded by `seed`, then cut contiguous blocks of size ⌊n/folds⌋, handing
/// one leftover row to each leading fold. Every row lands in exactly one
/// fold and fold sizes differ by at most one.
pub fn assign_folds(n: usize, folds: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if folds < 2 {
        return Err(Error::FoldCountOutOfRange { v: folds });
    }
    if n < folds {
        return Err(Error::TooFewRows { n, v: folds });
    }
    let mut indices: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    indices.shuffle(&mut rng);
    let base = n / folds;
    let remainder = n % folds;
    let mut out = Vec::with_capacity(folds);
    let mut start = 0;
    for fold in 0..folds {
        let size = base + usize::from(fold < remainder);
        out.push(indices[start..start + size].to_vec());
        start += size;
    }
    Ok(out)
}

/// Selection order for grid candidates: smaller validation loss wins; an
/// exact tie goes to the candidate with fewer parameters; a tie in both
/// keeps the incumbent, i.e. the earlier grid position.
fn improves_on(best: &Option<(f64, usize, usize)>, loss: f64, params: usize) -> bool {
    match best {
        None => true,
        Some((best_loss, best_params, _)) => {
            loss < *best_loss || (loss == *best_loss && params < *best_params)
        }
    }
}

const TARGET_SEED_MIX: u64 = 0xD1B5_4A32_D192_ED03;

fn target_seed(plan_seed: u64, id: TargetId) -> u64 {
    plan_seed.wrapping_add((id.seed_slot() + 1).wrapping_mul(TARGET_SEED_MIX))
}

/// Append one column to a feature matrix.
fn with_column(x: &Array2<f64>, column: &[f64]) -> Array2<f64> {
    let col = Array2::from_shape_vec((column.len(), 1), column.to_vec()).expect("column shape");
    concatenate![Axis(1), x.view(), col.view()]
}

/// Append a constant column to a feature matrix.
fn with_constant(x: &Array2<f64>, value: f64) -> Array2<f64> {
    let col = Array2::from_elem((x.nrows(), 1), value);
    concatenate![Axis(1), x.view(), col.view()]
}

/// Linear predictor fit by full-batch gradient descent: OLS under MSE or
/// logistic regression under cross-entropy. The step size is 1/L for the
/// trace bound L on the gradient's Lipschitz constant; iteration stops when
/// the gradient norm falls below 1e−8 or after a fixed cap (logistic fits on
/// separable data never reach the tolerance — the cap is the documented
/// stopping rule there).
#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    /// Intercept followed by one coefficient per feature.
    pub coefficients: Array1<f64>,
    pub logistic: bool,
}

const LINEAR_GRAD_TOL: f64 = 1e-8;
const LINEAR_MAX_ITERS: usize = 20_000;

impl LinearModel {
    pub fn fit(features: &Array2<f64>, targets: &[f64], logistic: bool) -> Result<LinearModel> {
        let n = features.nrows();
        if n == 0 {
            return Err(Error::EmptyTable);
        }
        if targets.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: targets.len(),
            });
        }
        let design = with_constant_first(features);
        let y = Array1::from_vec(targets.to_vec());
        let trace: f64 = design.iter().map(|v| v * v).sum::<f64>() / n as f64;
        let lipschitz = if logistic { trace / 4.0 } else { 2.0 * trace };
        let step = 1.0 / lipschitz.max(f64::MIN_POSITIVE);
        let mut beta = Array1::<f64>::zeros(design.ncols());
        for _ in 0..LINEAR_MAX_ITERS {
            let linear = design.dot(&beta);
            let residual = if logistic {
                linear.mapv(crate::synth::logistic) - &y
            } else {
                (&linear - &y) * 2.0
            };
            let grad = design.t().dot(&residual) / n as f64;
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(Error::PredictionNonFinite {
                    target: "linear-model gradient".into(),
                });
            }
            if norm < LINEAR_GRAD_TOL {
                break;
            }
            beta.scaled_add(-step, &grad);
        }
        Ok(LinearModel {
            coefficients: beta,
            logistic,
        })
    }

    pub fn predict(&self, features: &Array2<f64>) -> Result<Vec<f64>> {
        if features.ncols() + 1 != self.coefficients.len() {
            return Err(Error::DimensionMismatch {
                expected: self.coefficients.len() - 1,
                got: features.ncols(),
            });
        }
        let linear = with_constant_first(features).dot(&self.coefficients);
        Ok(if self.logistic {
            linear.iter().map(|&z| crate::synth::logistic(z)).collect()
        } else {
            linear.to_vec()
        })
    }
}

fn with_constant_first(x: &Array2<f64>) -> Array2<f64> {
    let ones = Array2::from_elem((x.nrows(), 1), 1.0);
    concatenate![Axis(1), ones.view(), x.view()]
}

/// Validation data loss (MSE or stable cross-entropy per the model's spec),
/// excluding any L1 penalty.
fn validation_data_loss(model: &NetworkModel, x: &Array2<f64>, y: &[f64]) -> Result<f64> {
    let (loss, _) = model.loss_and_gradient(x, y)?;
    let penalty = model.spec().l1_input
        * model.weights()[0].iter().map(|v| v.abs()).sum::<f64>();
    Ok(loss - penalty)
}

/// Choose a network from `grid` by k-fold cross-validation on
/// `(features, targets)`: rows are partitioned by [`assign_folds`] under
/// `seed`, each candidate is trained on every fold complement (with a
/// fold-derived init seed) and scored by pooled validation data loss, and
/// the smallest loss wins. Exact ties break toward fewer parameters, then
/// grid order. A single-element grid is returned immediately; a candidate
/// whose training diverges is skipped.
pub fn cv_select(
    grid: &[NetworkSpec],
    features: &Array2<f64>,
    targets: &[f64],
    folds: usize,
    seed: u64,
) -> Result<NetworkSpec> {
    cv_select_scored(grid, features, targets, folds, seed).map(|(spec, _)| spec)
}

/// [`cv_select`] plus the winning candidate's pooled validation loss
/// (`None` when the single-element short-circuit skipped validation).
fn cv_select_scored(
    grid: &[NetworkSpec],
    features: &Array2<f64>,
    targets: &[f64],
    folds: usize,
    seed: u64,
) -> Result<(NetworkSpec, Option<f64>)> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if grid.len() == 1 {
        return Ok((grid[0].clone(), None));
    }
    let shared_loss = grid[0].loss;
    let shared_link = grid[0].output_link;
    if grid
        .iter()
        .any(|s| s.loss != shared_loss || s.output_link != shared_link)
    {
        return Err(Error::InvalidConfig(
            "all grid candidates must share one loss and output link".into(),
        ));
    }
    let n = features.nrows();
    let fold_rows = assign_folds(n, folds, seed)?;
    let mut best: Option<(f64, usize, usize)> = None; // (loss, params, index)
    let mut last_error: Option<Error> = None;
    for (index, candidate) in grid.iter().enumerate() {
        candidate.validate()?;
        let mut total_loss = 0.0;
        let mut total_rows = 0usize;
        let mut diverged = false;
        for (fold, held) in fold_rows.iter().enumerate() {
            let mut train_rows: Vec<usize> = Vec::with_capacity(n - held.len());
            for (other, rows) in fold_rows.iter().enumerate() {
                if other != fold {
                    train_rows.extend_from_slice(rows);
                }
            }
            let x_train = features.select(Axis(0), &train_rows);
            let y_train: Vec<f64> = train_rows.iter().map(|&i| targets[i]).collect();
            let x_val = features.select(Axis(0), held);
            let y_val: Vec<f64> = held.iter().map(|&i| targets[i]).collect();
            let mut spec = candidate.clone();
            spec.init_seed = spec.init_seed.wrapping_add(fold as u64 + 1);
            match neurnet::train(&x_train, &y_train, &spec) {
                Ok(model) => {
                    let loss = validation_data_loss(&model, &x_val, &y_val)?;
                    if !loss.is_finite() {
                        diverged = true;
                        break;
                    }
                    total_loss += loss * held.len() as f64;
                    total_rows += held.len();
                }
                Err(err @ Error::DivergedLoss { .. }) => {
                    last_error = Some(err);
                    diverged = true;
                    break;
                }
                Err(other) => return Err(other),
            }
        }
        if diverged {
            continue;
        }
        let mean_loss = total_loss / total_rows as f64;
        let params = candidate.param_count(features.ncols());
        if improves_on(&best, mean_loss, params) {
            best = Some((mean_loss, params, index));
        }
    }
    match best {
        Some((loss, _, index)) => Ok((grid[index].clone(), Some(loss))),
        None => Err(last_error.unwrap_or(Error::EmptyGrid)),
    }
}

/// The hyperparameter grid mirroring the benchmark defaults:
/// depth {1,2,3} × width {10,50,100,500} × λ {0,0.1,0.4} × epochs {100,500},
/// batch 100, Adam at the default learning rate.
pub fn default_grid() -> Vec<NetworkSpec> {
    let mut grid = Vec::new();
    for &depth in &[1usize, 2, 3] {
        for &width in &[10usize, 50, 100, 500] {
            for &l1 in &[0.0, 0.1, 0.4] {
                for &epochs in &[100usize, 500] {
                    grid.push(NetworkSpec {
                        l1_input: l1,
                        epochs,
                        ..NetworkSpec::regression(depth, width)
                    });
                }
            }
        }
    }
    grid
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct GridEntry {
    depth: Option<usize>,
    width: Option<usize>,
    l1: Option<f64>,
    epochs: Option<usize>,
    lr: Option<f64>,
    optimizer: Option<String>,
    batch: Option<usize>,
}

/// Parse a hyperparameter grid from JSON: an array of objects (or a single
/// object) with optional keys `depth`, `width`, `l1`, `epochs`, `lr`,
/// `optimizer` ("adam"/"sgd"), `batch`. Missing keys take the defaults
/// depth 1, width 100, λ 0, 100 epochs, lr 1e−3, Adam, batch 100. Loss and
/// output link are set per regression target by the fitter, so the grid
/// never specifies them.
pub fn parse_grid_json(text: &str) -> Result<Vec<NetworkSpec>> {
    let entries: Vec<GridEntry> = match serde_json::from_str::<Vec<GridEntry>>(text) {
        Ok(v) => v,
        Err(_) => vec![serde_json::from_str::<GridEntry>(text)?],
    };
    if entries.is_empty() {
        return Err(Error::EmptyGrid);
    }
    entries
        .into_iter()
        .map(|e| {
            let optimizer = match e.optimizer.as_deref() {
                None | Some("adam") => Optimizer::Adam,
                Some("sgd") => Optimizer::Sgd,
                Some(other) => {
                    return Err(Error::InvalidConfig(format!(
                        "unknown optimizer '{other}' (expected adam or sgd)"
                    )))
                }
            };
            let spec = NetworkSpec {
                depth: e.depth.unwrap_or(1),
                width: e.width.unwrap_or(100),
                l1_input: e.l1.unwrap_or(0.0),
                epochs: e.epochs.unwrap_or(100),
                batch_size: e.batch.unwrap_or(100),
                learning_rate: e.lr.unwrap_or(neurnet::DEFAULT_LEARNING_RATE),
                optimizer,
                ..NetworkSpec::regression(1, 1)
            };
            spec.validate()?;
            Ok(spec)
        })
        .collect()
}

/// A fitted predictor for one target.
enum Fitted {
    Net(NetworkModel),
    Lin(LinearModel),
}

impl Fitted {
    fn predict(&self, x: &Array2<f64>) -> Result<Vec<f64>> {
        match self {
            Fitted::Net(m) => m.predict(x),
            Fitted::Lin(m) => m.predict(x),
        }
    }
}

/// Fit one regression under the chosen learner, returning the predictor and
/// its diagnostic record.
fn fit_target(
    kind: &LearnerKind,
    plan: &FitPlan,
    id: TargetId,
    features: &Array2<f64>,
    targets: &[f64],
) -> Result<(Fitted, TargetDiagnostic)> {
    match kind {
        LearnerKind::Oracle(_) => Err(Error::InvalidConfig(
            "oracle nuisances are evaluated, not fit".into(),
        )),
        LearnerKind::Linear => {
            let model = LinearModel::fit(features, targets, id.is_classifier())?;
            let diag = TargetDiagnostic {
                target: id.to_string(),
                train_rows: features.nrows(),
                selected: None,
                cv_loss: None,
                final_train_loss: None,
            };
            Ok((Fitted::Lin(model), diag))
        }
        LearnerKind::Dnn(grid) => {
            if grid.is_empty() {
                return Err(Error::EmptyGrid);
            }
            // Give every candidate the loss/link this target requires before
            // any training or selection happens.
            let adapt = |mut s: NetworkSpec| {
                if id.is_classifier() {
                    s.loss = Loss::CrossEntropy;
                    s.output_link = OutputLink::Sigmoid;
                } else {
                    s.loss = Loss::Mse;
                    s.output_link = OutputLink::Identity;
                }
                s
            };
            let seed = target_seed(plan.seed, id);
            let (mut selected, cv_loss) = match plan
                .pretuned
                .as_ref()
                .and_then(|m| m.get(&id).cloned())
            {
                Some(pre) => (adapt(pre), None),
                None => {
                    let adapted: Vec<NetworkSpec> =
                        grid.iter().cloned().map(&adapt).collect();
                    cv_select_scored(&adapted, features, targets, plan.cv_folds, seed)?
                }
            };
            selected.init_seed = seed;
            let model = neurnet::train(features, targets, &selected)?;
            let diag = TargetDiagnostic {
                target: id.to_string(),
                train_rows: features.nrows(),
                selected: Some(selected.clone()),
                cv_loss,
                final_train_loss: model.train_loss_trace().last().copied(),
            };
            Ok((Fitted::Net(model), diag))
        }
    }
}

/// Run a plan's cross-validation once on an external tuning sample and
/// return a plan whose `pretuned` map pins the selected spec per target, so
/// later `fit_nuisances` calls skip in-split selection entirely.
pub fn pretune_plan(
    grid: &[NetworkSpec],
    tune: &ObservationTable,
    plan: &FitPlan,
) -> Result<FitPlan> {
    if grid.is_empty() {
        return Err(Error::EmptyGrid);
    }
    if tune.mediator_kind != plan.mediator_kind {
        return Err(Error::InvalidConfig(format!(
            "tuning sample has a {} mediator but the plan expects {}",
            tune.mediator_kind, plan.mediator_kind
        )));
    }
    let mut pretuned = BTreeMap::new();
    let problems = TargetProblems::build(tune)?;
    for &id in &plan.targets {
        let (features, targets) = problems.problem(id)?;
        let adapted: Vec<NetworkSpec> = grid
            .iter()
            .cloned()
            .map(|mut s| {
                if id.is_classifier() {
                    s.loss = Loss::CrossEntropy;
                    s.output_link = OutputLink::Sigmoid;
                } else {
                    s.loss = Loss::Mse;
                    s.output_link = OutputLink::Identity;
                }
                s
            })
            .collect();
        let choice = cv_select(
            &adapted,
            &features,
            &targets,
            plan.cv_folds,
            target_seed(plan.seed, id),
        )?;
        pretuned.insert(id, choice);
    }
    let mut out = plan.clone();
    out.pretuned = Some(pretuned);
    Ok(out)
}

/// Training problems (features, targets) per TargetId, built from one table.
/// Second-stage problems cannot be formed here — they need μ̂ predictions —
/// so pretuning approximates their selection with the observed-outcome
/// problem on (X, D), which shares feature space and target scale.
struct TargetProblems<'a> {
    table: &'a ObservationTable,
    arm_rows: [Vec<usize>; 2],
}

impl<'a> TargetProblems<'a> {
    fn build(table: &'a ObservationTable) -> Result<TargetProblems<'a>> {
        let mut arm_rows: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        for (i, &d) in table.d.iter().enumerate() {
            arm_rows[d as usize].push(i);
        }
        Ok(TargetProblems { table, arm_rows })
    }

    fn arm(&self, d: u8) -> Result<&[usize]> {
        let rows = &self.arm_rows[d as usize];
        if rows.is_empty() {
            return Err(Error::InsufficientData { arm: d });
        }
        Ok(rows)
    }

    fn problem(&self, id: TargetId) -> Result<(Array2<f64>, Vec<f64>)> {
        let t = self.table;
        let d_f64: Vec<f64> = t.d.iter().map(|&d| f64::from(d)).collect();
        Ok(match id {
            TargetId::PropensityX => (t.x.to_owned(), d_f64),
            TargetId::PropensityXM => (with_column(&t.x, &t.m), d_f64),
            TargetId::MediatorProb(d) => {
                let rows = self.arm(d)?;
                let x = t.x.select(Axis(0), rows);
                let m: Vec<f64> = rows.iter().map(|&i| t.m[i]).collect();
                (x, m)
            }
            TargetId::OutcomeMu(d) => {
                let rows = self.arm(d)?;
                let x = with_column(&t.x.select(Axis(0), rows), &gather(&t.m, rows));
                (x, gather(&t.y, rows))
            }
            TargetId::CrossMu(_) => (with_column(&t.x, &d_f64), t.y.clone()),
        })
    }
}

fn gather(values: &[f64], rows: &[usize]) -> Vec<f64> {
    rows.iter().map(|&i| values[i]).collect()
}

/// Fit every nuisance the plan requires on `train` and evaluate on
/// `predict_on`, with full diagnostics.
///
/// The splits must be disjoint (the caller's responsibility — cross-fitting
/// guarantees it). Only covariates and the observed mediator of
/// `predict_on` are ever read; its treatment and outcome columns are
/// untouched, which a canary test verifies by filling them with garbage.
pub fn fit_nuisances_traced(
    train: &ObservationTable,
    predict_on: &ObservationTable,
    kind: &LearnerKind,
    plan: &FitPlan,
) -> Result<(NuisanceFit, Vec<TargetDiagnostic>)> {
    if train.is_empty() {
        return Err(Error::EmptyTable);
    }
    if train.n_covariates() != predict_on.n_covariates() {
        return Err(Error::DimensionMismatch {
            expected: train.n_covariates(),
            got: predict_on.n_covariates(),
        });
    }
    if train.mediator_kind != plan.mediator_kind || predict_on.mediator_kind != plan.mediator_kind
    {
        return Err(Error::InvalidConfig(format!(
            "plan expects a {} mediator",
            plan.mediator_kind
        )));
    }

    if let LearnerKind::Oracle(oracle) = kind {
        if plan.mediator_kind != MediatorKind::Continuous {
            return Err(Error::InvalidConfig(
                "the synthetic oracle defines a continuous mediator".into(),
            ));
        }
        let fit = oracle_nuisance_fit(predict_on, oracle)?;
        let diags = plan
            .targets
            .iter()
            .map(|id| TargetDiagnostic {
                target: id.to_string(),
                train_rows: 0,
                selected: None,
                cv_loss: None,
                final_train_loss: None,
            })
            .collect();
        return Ok((fit, diags));
    }

    let observed_y = train.outcome_range()?;
    let problems = TargetProblems::build(train)?;
    let mut diagnostics = Vec::with_capacity(plan.targets.len());

    match plan.mediator_kind {
        MediatorKind::Continuous => {
            // a(1|x)
            let (fx, fy) = problems.problem(TargetId::PropensityX)?;
            let (a_x_model, d1) = fit_target(kind, plan, TargetId::PropensityX, &fx, &fy)?;
            diagnostics.push(d1);
            let a_x = a_x_model.predict(&predict_on.x)?;

            // a(1|x,m)
            let (fx, fy) = problems.problem(TargetId::PropensityXM)?;
            let (a_xm_model, d2) = fit_target(kind, plan, TargetId::PropensityXM, &fx, &fy)?;
            diagnostics.push(d2);
            let predict_xm = with_column(&predict_on.x, &predict_on.m);
            let a_xm = a_xm_model.predict(&predict_xm)?;

            // μ(x,d,m) per arm, evaluated on predict_on and on the full
            // training split (the latter feeds the second stage).
            let train_xm = with_column(&train.x, &train.m);
            let mut mu_pred: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
            let mut mu_on_train: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
            for d in 0..2u8 {
                let (fx, fy) = problems.problem(TargetId::OutcomeMu(d))?;
                let (model, diag) = fit_target(kind, plan, TargetId::OutcomeMu(d), &fx, &fy)?;
                diagnostics.push(diag);
                mu_pred[d as usize] = model.predict(&predict_xm)?;
                mu_on_train[d as usize] = model.predict(&train_xm)?;
            }

            // Second stage per arm: regress the clipped μ̂_d(train) values
            // against (X, D), then read the fit at (x, d').
            let (lo, hi) = mu_bounds(observed_y);
            let d_train: Vec<f64> = train.d.iter().map(|&d| f64::from(d)).collect();
            let stage_features = with_column(&train.x, &d_train);
            let mut cross_mu: [[Vec<f64>; 2]; 2] =
                std::array::from_fn(|_| std::array::from_fn(|_| Vec::new()));
            for d in 0..2u8 {
                let targets: Vec<f64> = mu_on_train[d as usize]
                    .iter()
                    .map(|v| v.clamp(lo, hi))
                    .collect();
                let (model, diag) =
                    fit_target(kind, plan, TargetId::CrossMu(d), &stage_features, &targets)?;
                diagnostics.push(diag);
                for d_prime in 0..2u8 {
                    let eval = with_constant(&predict_on.x, f64::from(d_prime));
                    cross_mu[d as usize][d_prime as usize] = model.predict(&eval)?;
                }
            }

            let [mu_d0, mu_d1] = mu_pred;
            let fit = NuisanceFit::assemble(
                MediatorKind::Continuous,
                a_x,
                Some(a_xm),
                None,
                None,
                mu_d0,
                mu_d1,
                cross_mu,
                observed_y,
            )?;
            Ok((fit, diagnostics))
        }
        MediatorKind::Binary => {
            let (fx, fy) = problems.problem(TargetId::PropensityX)?;
            let (a_x_model, d1) = fit_target(kind, plan, TargetId::PropensityX, &fx, &fy)?;
            diagnostics.push(d1);
            let a_x = a_x_model.predict(&predict_on.x)?;

            // f(1|x,d) per arm, as P̂r(M = 1 | X, D = d).
            let clip = NuisanceFit::PROPENSITY_CLIP;
            let mut prob_m1: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
            for d in 0..2u8 {
                let (fx, fy) = problems.problem(TargetId::MediatorProb(d))?;
                let (model, diag) =
                    fit_target(kind, plan, TargetId::MediatorProb(d), &fx, &fy)?;
                diagnostics.push(diag);
                prob_m1[d as usize] = model
                    .predict(&predict_on.x)?
                    .into_iter()
                    .map(|p| p.clamp(clip, 1.0 - clip))
                    .collect();
            }

            // μ(x,d,m) per arm: at the observed mediator for the score, and
            // at m ∈ {0,1} for the exact cross-world sum.
            let (lo, hi) = mu_bounds(observed_y);
            let predict_xm = with_column(&predict_on.x, &predict_on.m);
            let mut mu_pred: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
            let mut mu_at: [[Vec<f64>; 2]; 2] =
                std::array::from_fn(|_| std::array::from_fn(|_| Vec::new()));
            for d in 0..2u8 {
                let (fx, fy) = problems.problem(TargetId::OutcomeMu(d))?;
                let (model, diag) = fit_target(kind, plan, TargetId::OutcomeMu(d), &fx, &fy)?;
                diagnostics.push(diag);
                mu_pred[d as usize] = model.predict(&predict_xm)?;
                for m_val in 0..2usize {
                    let eval = with_constant(&predict_on.x, m_val as f64);
                    mu_at[d as usize][m_val] = model
                        .predict(&eval)?
                        .into_iter()
                        .map(|v| v.clamp(lo, hi))
                        .collect();
                }
            }

            // f̂(M_i | X_i, d) at the observed mediator, and the analytic
            // cross-world mean Σ_m μ̂(x,d,m)·f̂(m|x,d').
            let n = predict_on.len();
            let mut f_m: [Vec<f64>; 2] = [vec![0.0; n], vec![0.0; n]];
            for d in 0..2usize {
                for i in 0..n {
                    let p1 = prob_m1[d][i];
                    f_m[d][i] = if predict_on.m[i] == 1.0 { p1 } else { 1.0 - p1 };
                }
            }
            let mut cross_mu: [[Vec<f64>; 2]; 2] =
                std::array::from_fn(|_| std::array::from_fn(|_| vec![0.0; n]));
            for d in 0..2usize {
                for d_prime in 0..2usize {
                    for i in 0..n {
                        let p1 = prob_m1[d_prime][i];
                        cross_mu[d][d_prime][i] =
                            mu_at[d][1][i] * p1 + mu_at[d][0][i] * (1.0 - p1);
                    }
                }
            }

            let [mu_d0, mu_d1] = mu_pred;
            let [f_m_d0, f_m_d1] = f_m;
            let fit = NuisanceFit::assemble(
                MediatorKind::Binary,
                a_x,
                None,
                Some(f_m_d0),
                Some(f_m_d1),
                mu_d0,
                mu_d1,
                cross_mu,
                observed_y,
            )?;
            Ok((fit, diagnostics))
        }
    }
}

/// [`fit_nuisances_traced`] without the diagnostics.
pub fn fit_nuisances(
    train: &ObservationTable,
    predict_on: &ObservationTable,
    kind: &LearnerKind,
    plan: &FitPlan,
) -> Result<NuisanceFit> {
    fit_nuisances_traced(train, predict_on, kind, plan).map(|(fit, _)| fit)
}
