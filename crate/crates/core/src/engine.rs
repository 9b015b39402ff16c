//! The class-incremental loop: train, select support, snapshot the
//! consolidation state, expand the output layer, repeat.

use std::io::Write;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{Method, MethodConfig, Mixing, ModelConfig};
use crate::consolidation::{
    ewc_proximal_step, fisher_diagonal, total_loss, Coefficients, ConsolidationState, FeatureAnchors, LossBreakdown,
};
use crate::data::{split_by_schedule, ClassBatchSchedule, Dataset};
use crate::error::{Error, Result};
use crate::math::SeededRng;
use crate::metrics::{
    accuracy, accuracy_matrix, cohen_kappa, macro_prf, AccuracyMatrix, ConfusionMatrix, IncrementPredictions,
    MacroScores,
};
use crate::network::{expand_output_layer, predict, GradientSet, NetworkParams, Sgd};
use crate::selector::{
    allocate_budget, compute_representations, merge_training_set, select_random, select_support, SupportEntry,
    SupportSet,
};
use crate::svm::{train_ovr, SvmConfig, SvmProblem};

// RNG stream layout: one fork per increment, sub-forks per purpose.
const STREAM_DATA: u64 = 0;
const STREAM_ROUND: u64 = 100;
const SUB_INIT: u64 = 0;
const SUB_SHUFFLE: u64 = 1;
const SUB_SVM: u64 = 2;
const SUB_SELECT: u64 = 3;
const SUB_FISHER: u64 = 4;
const SUB_GUESS: u64 = 5;

/// Accuracy on the round's training data, on all training data of the
/// seen classes, and on the cumulative test set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Diagnostic {
    pub real_training: f64,
    pub all_training: f64,
    pub test: f64,
}

impl Diagnostic {
    pub fn gap(&self) -> f64 {
        self.real_training - self.all_training
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvmSummary {
    pub examples: usize,
    pub support_vectors: usize,
    pub max_violation: f64,
    pub max_epochs: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    /// SGD only.
    pub train_seconds: f64,
    /// Everything the method does in the round: SGD, SVM, selection, Fisher.
    pub increment_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncrementLog {
    pub increment: usize,
    /// Original class ids introduced in this round.
    pub new_classes: Vec<usize>,
    pub classes_seen: usize,
    pub train_size: usize,
    pub support_size: usize,
    pub test_size: usize,
    pub accuracy: f64,
    pub batch_accuracies: Vec<Option<f64>>,
    pub kappa: Option<f64>,
    pub macro_scores: MacroScores,
    pub confusion: ConfusionMatrix,
    pub diagnostic: Diagnostic,
    /// Mean over the batches of the final epoch.
    pub loss: LossBreakdown,
    pub svm: Option<SvmSummary>,
    /// Kept examples; `dataset_index` refers to the full training set.
    pub support_audit: Vec<SupportEntry>,
    pub timing: Timing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentLog {
    pub method: Method,
    pub seed: u64,
    /// Model output `i` stands for original class `class_order[i]`.
    pub class_order: Vec<usize>,
    pub increments: Vec<IncrementLog>,
    pub accuracy_matrix: AccuracyMatrix,
}

impl ExperimentLog {
    pub fn final_accuracy(&self) -> Option<f64> {
        self.increments.last().map(|r| r.accuracy)
    }

    /// Sum of `increment_seconds`.
    pub fn accumulated_seconds(&self) -> f64 {
        self.increments.iter().map(|r| r.timing.increment_seconds).sum()
    }

    /// Copy with all wall-clock fields zeroed; the rest is deterministic.
    pub fn without_timings(&self) -> Self {
        let mut log = self.clone();
        for r in &mut log.increments {
            r.timing = Timing::default();
        }
        log
    }

    pub fn write_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self).map_err(|e| Error::Log(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Log(e.to_string()))
    }

    /// One row per increment. Wall-clock times are left out so the file is
    /// reproducible byte for byte.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "method,seed,increment,classes_seen,train_size,support_size,test_size,accuracy,kappa,\
             macro_precision,macro_recall,macro_f1,real_training_accuracy,all_training_accuracy,\
             test_accuracy,loss,cross_entropy,feature_loss,ewc_loss,svm_max_violation,svm_converged"
        )?;
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        for r in &self.increments {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                self.method,
                self.seed,
                r.increment,
                r.classes_seen,
                r.train_size,
                r.support_size,
                r.test_size,
                r.accuracy,
                opt(r.kappa),
                r.macro_scores.precision,
                r.macro_scores.recall,
                r.macro_scores.f1,
                r.diagnostic.real_training,
                r.diagnostic.all_training,
                r.diagnostic.test,
                r.loss.total,
                r.loss.cross_entropy,
                r.loss.feature,
                r.loss.ewc,
                opt(r.svm.as_ref().map(|s| s.max_violation)),
                r.svm.as_ref().map_or(String::new(), |s| s.converged.to_string()),
            )?;
        }
        Ok(())
    }
}

/// `(real training, all training, test)` accuracies.
pub fn table2_diagnostic(
    params: &NetworkParams,
    real_training: &Dataset,
    all_training: &Dataset,
    test: &Dataset,
) -> Result<Diagnostic> {
    let acc = |d: &Dataset| accuracy(&predict(params, d.features())?, d.labels());
    Ok(Diagnostic {
        real_training: acc(real_training)?,
        all_training: acc(all_training)?,
        test: acc(test)?,
    })
}

/// What an incremental learner carries from one round to the next.
#[derive(Clone, Debug)]
pub struct Learner {
    pub params: NetworkParams,
    pub state: Option<ConsolidationState>,
    pub support: SupportSet,
}

/// Summary of one rehearsal round.
#[derive(Clone, Debug)]
pub struct RoundReport {
    pub training_set: Dataset,
    pub loss: LossBreakdown,
    pub svm: Option<SvmSummary>,
    pub train_seconds: f64,
}

/// Data for a schedule with labels renumbered to output positions.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub class_order: Vec<usize>,
    pub schedule: ClassBatchSchedule,
    pub train_batches: Vec<Dataset>,
    /// Full-training-set index of every row of `train_batches`.
    pub train_origin: Vec<Vec<usize>>,
    pub test_batches: Vec<Dataset>,
}

impl PreparedData {
    pub fn new(schedule: &ClassBatchSchedule, train: &Dataset, test: &Dataset) -> Result<Self> {
        let class_order: Vec<usize> = schedule.groups().concat();
        let max = class_order.iter().max().copied().unwrap_or(0);
        let mut position = vec![usize::MAX; max + 1];
        for (i, &c) in class_order.iter().enumerate() {
            position[c] = i;
        }
        let mut next = 0;
        let groups: Vec<Vec<usize>> = schedule
            .groups()
            .iter()
            .map(|g| {
                let out = (next..next + g.len()).collect();
                next += g.len();
                out
            })
            .collect();
        let renumbered = ClassBatchSchedule::new(groups)?;

        let relabel = |d: &Dataset| -> Result<Dataset> {
            let mut labels = Vec::with_capacity(d.len());
            for &l in d.labels() {
                match position.get(l) {
                    Some(&p) if p != usize::MAX => labels.push(p),
                    _ => return Err(Error::Schedule(format!("class {l} is not scheduled"))),
                }
            }
            Dataset::new(d.features().clone(), labels, d.split())
        };
        let train = relabel(train)?;
        let test = relabel(test)?;
        let train_batches = split_by_schedule(&train, &renumbered)?;
        let mut train_origin = vec![Vec::new(); renumbered.len()];
        for (i, &l) in train.labels().iter().enumerate() {
            train_origin[renumbered.group_of(l).unwrap_or(0)].push(i);
        }
        let test_batches = split_by_schedule(&test, &renumbered)?;
        for (t, (tr, te)) in train_batches.iter().zip(&test_batches).enumerate() {
            if tr.is_empty() || te.is_empty() {
                return Err(Error::Schedule(format!("increment {t} has no training or no test data")));
            }
        }
        Ok(Self {
            class_order,
            schedule: renumbered,
            train_batches,
            train_origin,
            test_batches,
        })
    }

    fn cumulative(batches: &[Dataset], t: usize) -> Result<Dataset> {
        let mut out = batches[0].clone();
        for b in &batches[1..=t] {
            out = out.concat(b)?;
        }
        Ok(out)
    }
}

fn lr_at(config: &MethodConfig, increment: usize) -> f64 {
    config.optimizer.learning_rate * config.optimizer.lr_decay.powi(increment as i32)
}

fn mean_breakdown(acc: &mut LossBreakdown, b: &LossBreakdown, n: f64) {
    acc.total += b.total / n;
    acc.cross_entropy += b.cross_entropy / n;
    acc.feature += b.feature / n;
    acc.ewc += b.ewc / n;
}

/// Mini-batch SGD on `data`. Rows below `anchored` carry frozen
/// representations (row `i` ↔ `state.support_reps_old` row `i`).
fn train_epochs(
    params: &mut NetworkParams,
    data: &Dataset,
    anchored: usize,
    state: Option<&ConsolidationState>,
    epochs: usize,
    config: &MethodConfig,
    learning_rate: f64,
    rng: &mut SeededRng,
) -> Result<LossBreakdown> {
    let mut sgd = Sgd::new(learning_rate, config.optimizer.momentum)?;
    // EWC enters through a proximal step after each update, so the loss
    // itself only carries cross-entropy and the feature term
    let ewc = state.filter(|s| s.coefficients.lambda_ewc > 0.0);
    let feature_state = state.map(|s| ConsolidationState {
        coefficients: Coefficients {
            lambda_f: s.coefficients.lambda_f,
            lambda_ewc: 0.0,
        },
        ..s.clone()
    });
    let state = feature_state.as_ref();
    let batch = config.optimizer.batch_size;
    let t = params.representation_dim();
    let mut last = LossBreakdown::default();
    let mut cycle = SupportCycle::new(anchored);
    for _ in 0..epochs {
        let plan = epoch_batches(data.len(), anchored, batch, config.mixing, &mut cycle, rng);
        let batches = plan.len();
        last = LossBreakdown::default();
        for idx in &plan {
            let inputs = data.features().select_rows(idx);
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels()[i]).collect();
            let anchors = match state {
                Some(s) if anchored > 0 => {
                    let (rows, src): (Vec<usize>, Vec<usize>) = idx
                        .iter()
                        .enumerate()
                        .filter(|(_, &i)| i < anchored)
                        .map(|(r, &i)| (r, i))
                        .unzip();
                    FeatureAnchors {
                        rows,
                        frozen: s.support_reps_old.select_rows(&src),
                        weight: 1.0 / idx.len() as f64,
                    }
                }
                _ => FeatureAnchors::none(t),
            };
            let (loss, grads) = total_loss(params, &inputs, &labels, &anchors, state)?;
            if !loss.total.is_finite() {
                return Err(Error::Numerical(format!("loss became {}", loss.total)));
            }
            sgd.step(params, &grads)?;
            let mut loss = loss;
            if let Some(s) = ewc {
                loss.ewc = ewc_proximal_step(params, s, learning_rate)?;
                loss.total += s.coefficients.lambda_ewc * loss.ewc;
            }
            mean_breakdown(&mut last, &loss, batches as f64);
        }
    }
    if !params.is_finite() {
        return Err(Error::Numerical("parameters became non-finite".into()));
    }
    Ok(last)
}

/// Reshuffled endless pass over the support rows `0..n`.
struct SupportCycle {
    n: usize,
    queue: Vec<usize>,
}

impl SupportCycle {
    fn new(n: usize) -> Self {
        Self { n, queue: Vec::new() }
    }

    fn take(&mut self, count: usize, rng: &mut SeededRng) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            if self.queue.is_empty() {
                self.queue = rng.permutation(self.n);
                self.queue.reverse();
            }
            out.push(self.queue.pop().expect("refilled"));
        }
        out
    }
}

/// Row indices of one epoch's minibatches. Rows below `anchored` are
/// support data.
fn epoch_batches(
    n: usize,
    anchored: usize,
    batch: usize,
    mixing: Mixing,
    cycle: &mut SupportCycle,
    rng: &mut SeededRng,
) -> Vec<Vec<usize>> {
    if mixing == Mixing::Shuffled || anchored == 0 || anchored >= n {
        return rng.permutation(n).chunks(batch).map(<[usize]>::to_vec).collect();
    }
    let fresh: Vec<usize> = rng.permutation(n - anchored).into_iter().map(|i| i + anchored).collect();
    fresh
        .chunks(batch)
        .map(|new_rows| {
            let mut rows = cycle.take(new_rows.len().min(anchored), rng);
            rows.extend_from_slice(new_rows);
            rows
        })
        .collect()
}

/// One SupportNet round: train on support ∪ new batch under the current
/// consolidation state, refit the SVM on the new representations,
/// reselect support over every seen class and snapshot the state.
///
/// `learner.params` must already have an output row for every class in
/// `new_batch`. `origin` maps `learner.support` rows followed by
/// `new_batch` rows to full-training-set indices for auditing.
pub fn run_increment_supportnet(
    learner: &mut Learner,
    new_batch: &Dataset,
    new_origin: &[usize],
    increment: usize,
    config: &MethodConfig,
    rng: &SeededRng,
) -> Result<RoundReport> {
    rehearsal_round(learner, new_batch, new_origin, increment, config, rng, true)
}

fn rehearsal_round(
    learner: &mut Learner,
    new_batch: &Dataset,
    new_origin: &[usize],
    increment: usize,
    config: &MethodConfig,
    rng: &SeededRng,
    svm_selection: bool,
) -> Result<RoundReport> {
    if new_batch.is_empty() {
        return Err(Error::Schedule(format!("increment {increment} has an empty batch")));
    }
    if new_batch.num_classes() > learner.params.num_classes() {
        return Err(Error::shape("output layer not expanded for the new classes"));
    }
    let merged = merge_training_set(&learner.support, new_batch)?;
    if merged.len() > config.budget + new_batch.len() {
        return Err(Error::State(format!(
            "training set of {} exceeds budget {} + batch {}",
            merged.len(),
            config.budget,
            new_batch.len()
        )));
    }
    let mut origin: Vec<usize> = learner.support.entries().iter().map(|e| e.dataset_index).collect();
    origin.extend_from_slice(new_origin);

    let started = Instant::now();
    let anchored = learner.support.len();
    let loss = train_epochs(
        &mut learner.params,
        &merged,
        anchored,
        learner.state.as_ref(),
        config.epochs,
        config,
        lr_at(config, increment),
        &mut rng.fork(SUB_SHUFFLE),
    )?;
    let train_seconds = started.elapsed().as_secs_f64();

    let seen = merged.classes();
    let (lambda_f, lambda_ewc) = config.effective_coefficients();
    let mut svm = None;
    let support = if config.budget == 0 {
        SupportSet::empty(merged.dim(), learner.params.representation_dim())
    } else {
        let budgets = allocate_budget(config.budget, &seen)?;
        let reps = compute_representations(&learner.params, &merged)?;
        let selected = if svm_selection {
            let problem = SvmProblem::new(reps.clone(), merged.labels().to_vec(), config.svm_c)?;
            let svm_config = SvmConfig {
                c: config.svm_c,
                tolerance: config.svm_tolerance,
                max_epochs: config.svm_max_epochs,
                seed: rng.fork(SUB_SVM).next_u64(),
                ..SvmConfig::default()
            };
            let model = train_ovr(&problem, &svm_config)?;
            let mut all_sv: Vec<usize> = model.support.concat();
            all_sv.sort_unstable();
            all_sv.dedup();
            svm = Some(SvmSummary {
                examples: merged.len(),
                support_vectors: all_sv.len(),
                max_violation: model.max_violation(),
                max_epochs: model.reports.iter().map(|r| r.epochs).max().unwrap_or(0),
                converged: model.reports.iter().all(|r| r.converged),
            });
            select_support(&model, &reps, &merged, &budgets, config.selection, &mut rng.fork(SUB_SELECT))?
        } else {
            select_random(&reps, &merged, &budgets, &mut rng.fork(SUB_SELECT))?
        };
        selected.reindexed(&origin)?
    };

    learner.state = if lambda_f > 0.0 || lambda_ewc > 0.0 {
        let fisher = if lambda_ewc > 0.0 {
            let inputs = if support.is_empty() {
                let mut pick = rng.fork(SUB_FISHER).permutation(merged.len());
                pick.truncate(config.fisher_fallback_size.max(1));
                pick.sort_unstable();
                merged.features().select_rows(&pick)
            } else {
                support.examples().features().clone()
            };
            fisher_diagonal(
                &learner.params,
                &inputs,
                config.fisher_samples,
                &mut rng.fork(SUB_FISHER),
            )?
        } else {
            GradientSet::zeros_like(&learner.params)
        };
        Some(ConsolidationState::new(
            learner.params.clone(),
            fisher,
            support.representations().clone(),
            Coefficients { lambda_f, lambda_ewc },
        )?)
    } else {
        None
    };
    learner.support = support;

    Ok(RoundReport {
        training_set: merged,
        loss,
        svm,
        train_seconds,
    })
}

/// Runs every increment of `schedule` for `config.method` and evaluates
/// after each one on the test data of all seen classes.
pub fn run_experiment(
    schedule: &ClassBatchSchedule,
    train: &Dataset,
    test: &Dataset,
    model: &ModelConfig,
    config: &MethodConfig,
) -> Result<ExperimentLog> {
    config.validate()?;
    let data = PreparedData::new(schedule, train, test)?;
    run_prepared(&data, model, config)
}

/// Random rehearsal: the SupportNet loop with uniformly drawn support and
/// both regularizers off.
pub fn run_baseline_random_rehearsal(
    schedule: &ClassBatchSchedule,
    train: &Dataset,
    test: &Dataset,
    model: &ModelConfig,
    config: &MethodConfig,
) -> Result<ExperimentLog> {
    run_experiment(schedule, train, test, model, &config.for_method(Method::RandomRehearsal))
}

fn fresh_params(model: &ModelConfig, input_dim: usize, classes: usize, rng: &SeededRng) -> Result<NetworkParams> {
    NetworkParams::init(
        input_dim,
        &model.hidden,
        model.activation,
        classes,
        model.output_init_stdev,
        &mut rng.fork(SUB_INIT),
    )
}

/// Same as [`run_experiment`] on already prepared data, so several methods
/// can share one preparation.
pub fn run_prepared(data: &PreparedData, model: &ModelConfig, config: &MethodConfig) -> Result<ExperimentLog> {
    run_observed(data, model, config, &mut |_, _| Ok(()))
}

/// [`run_prepared`] calling `observer(increment, learner)` after every
/// increment, e.g. to write checkpoints.
pub fn run_observed(
    data: &PreparedData,
    model: &ModelConfig,
    config: &MethodConfig,
    observer: &mut dyn FnMut(usize, &Learner) -> Result<()>,
) -> Result<ExperimentLog> {
    config.validate()?;
    let method = config.method;
    let master = SeededRng::new(config.seed);
    let input_dim = data.train_batches[0].dim();
    let first_rng = master.fork(STREAM_ROUND);
    let k0 = data.schedule.classes_through(0);
    let params = fresh_params(model, input_dim, k0, &first_rng)?;
    let mut learner = Learner {
        support: SupportSet::empty(input_dim, params.representation_dim()),
        params,
        state: None,
    };

    let mut records = Vec::with_capacity(data.schedule.len());
    let mut increments = Vec::with_capacity(data.schedule.len());
    for t in 0..data.schedule.len() {
        let rng = master.fork(STREAM_ROUND + t as u64);
        let k_t = data.schedule.classes_through(t);
        let new_batch = &data.train_batches[t];
        let all_training = PreparedData::cumulative(&data.train_batches, t)?;
        let test = PreparedData::cumulative(&data.test_batches, t)?;
        let started = Instant::now();

        if t > 0 && method != Method::AllData {
            learner.params = expand_output_layer(&learner.params, k_t, &mut rng.fork(SUB_INIT), model.output_init_stdev)?;
        }

        let (training_set, loss, svm, train_seconds, predictions) = match method {
            Method::RandomGuess => {
                let mut g = rng.fork(SUB_GUESS);
                let preds: Vec<usize> = (0..test.len()).map(|_| g.below(k_t)).collect();
                (new_batch.clone(), LossBreakdown::default(), None, 0.0, Some(preds))
            }
            Method::AllData => {
                learner.params = fresh_params(model, input_dim, k_t, &rng)?;
                let s = Instant::now();
                let loss = train_epochs(
                    &mut learner.params,
                    &all_training,
                    0,
                    None,
                    config.all_data_epochs,
                    config,
                    config.optimizer.learning_rate,
                    &mut rng.fork(SUB_SHUFFLE),
                )?;
                (all_training.clone(), loss, None, s.elapsed().as_secs_f64(), None)
            }
            Method::FineTune => {
                let s = Instant::now();
                let loss = train_epochs(
                    &mut learner.params,
                    new_batch,
                    0,
                    None,
                    config.epochs,
                    config,
                    lr_at(config, t),
                    &mut rng.fork(SUB_SHUFFLE),
                )?;
                (new_batch.clone(), loss, None, s.elapsed().as_secs_f64(), None)
            }
            Method::RandomRehearsal => {
                let r = rehearsal_round(&mut learner, new_batch, &data.train_origin[t], t, config, &rng, false)?;
                (r.training_set, r.loss, r.svm, r.train_seconds, None)
            }
            _ => {
                let r = run_increment_supportnet(&mut learner, new_batch, &data.train_origin[t], t, config, &rng)?;
                (r.training_set, r.loss, r.svm, r.train_seconds, None)
            }
        };
        let increment_seconds = started.elapsed().as_secs_f64();

        let (predictions, diagnostic) = match predictions {
            Some(p) => {
                let acc = accuracy(&p, test.labels())?;
                let mut g = rng.fork(SUB_GUESS + 1);
                let mut guess = |d: &Dataset| {
                    let q: Vec<usize> = (0..d.len()).map(|_| g.below(k_t)).collect();
                    accuracy(&q, d.labels())
                };
                let d = Diagnostic {
                    real_training: guess(&training_set)?,
                    all_training: guess(&all_training)?,
                    test: acc,
                };
                (p, d)
            }
            None => (
                predict(&learner.params, test.features())?,
                table2_diagnostic(&learner.params, &training_set, &all_training, &test)?,
            ),
        };

        let confusion = ConfusionMatrix::from_predictions(&predictions, test.labels(), k_t)?;
        let record = IncrementPredictions {
            increment: t,
            predictions,
            labels: test.labels().to_vec(),
        };
        let batch_accuracies = batch_row(&record, &data.schedule, t);
        increments.push(IncrementLog {
            increment: t,
            new_classes: data.schedule.groups()[t].iter().map(|&p| data.class_order[p]).collect(),
            classes_seen: k_t,
            train_size: training_set.len(),
            support_size: learner.support.len(),
            test_size: test.len(),
            accuracy: accuracy(&record.predictions, &record.labels)?,
            batch_accuracies,
            kappa: cohen_kappa(&confusion).ok(),
            macro_scores: macro_prf(&confusion),
            confusion,
            diagnostic,
            loss,
            svm,
            support_audit: learner.support.entries().to_vec(),
            timing: Timing {
                train_seconds,
                increment_seconds,
            },
        });
        records.push(record);
        observer(t, &learner)?;
    }

    Ok(ExperimentLog {
        method,
        seed: config.seed,
        class_order: data.class_order.clone(),
        increments,
        accuracy_matrix: accuracy_matrix(&records, &data.schedule)?,
    })
}

fn batch_row(record: &IncrementPredictions, schedule: &ClassBatchSchedule, t: usize) -> Vec<Option<f64>> {
    schedule
        .groups()
        .iter()
        .enumerate()
        .map(|(b, group)| {
            if b > t {
                return None;
            }
            let (mut hits, mut total) = (0usize, 0usize);
            for (p, l) in record.predictions.iter().zip(&record.labels) {
                if group.contains(l) {
                    total += 1;
                    hits += usize::from(p == l);
                }
            }
            (total > 0).then(|| hits as f64 / total as f64)
        })
        .collect()
}

/// Synthetic data and an RNG stream that do not depend on the method.
pub fn data_rng(seed: u64) -> SeededRng {
    SeededRng::new(seed).fork(STREAM_DATA)
}

/// Keeps at most `n` examples per class, in original order.
pub fn limit_per_class(dataset: &Dataset, n: usize) -> Dataset {
    let mut counts = vec![0usize; dataset.num_classes()];
    let keep: Vec<usize> = (0..dataset.len())
        .filter(|&i| {
            let c = &mut counts[dataset.labels()[i]];
            *c += 1;
            *c <= n
        })
        .collect();
    dataset.subset(&keep)
}
