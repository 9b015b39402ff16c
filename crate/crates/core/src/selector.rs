//! Support data selection: ranks each class's SVM support-vector candidates
//! by distance to the separator, keeps them within a per-class budget, and
//! assembles the next increment's training set.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::math::{Matrix, SeededRng};
use crate::network::{map_batch, NetworkParams};
use crate::svm::{margins, LinearSvmModel};

/// How the kept examples are drawn from a class's candidates.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionMode {
    /// Smallest |margin| first, ties by index.
    #[default]
    SmallestMargin,
    /// Uniform sample of the candidates (ablation).
    UniformCandidates,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportEntry {
    pub class: usize,
    /// Row in the dataset the selection was made from.
    pub dataset_index: usize,
    /// Own-class margin `ŵ_class · δ` at selection time, when an SVM was used.
    pub margin: Option<f64>,
    pub was_support_vector: bool,
}

/// Kept examples of old classes with their representations frozen at
/// selection time. Entries are grouped by ascending class.
#[derive(Clone, Debug)]
pub struct SupportSet {
    examples: Dataset,
    representations: Matrix,
    entries: Vec<SupportEntry>,
    budget: usize,
    per_class_budgets: Vec<(usize, usize)>,
}

impl SupportSet {
    pub fn empty(input_dim: usize, representation_dim: usize) -> Self {
        Self {
            examples: Dataset::empty(input_dim, crate::data::Split::Train),
            representations: Matrix::zeros(0, representation_dim),
            entries: Vec::new(),
            budget: 0,
            per_class_budgets: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn examples(&self) -> &Dataset {
        &self.examples
    }

    /// Frozen `δ_n(φ_old)`, row-aligned with [`Self::examples`].
    pub fn representations(&self) -> &Matrix {
        &self.representations
    }

    pub fn entries(&self) -> &[SupportEntry] {
        &self.entries
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn per_class_budgets(&self) -> &[(usize, usize)] {
        &self.per_class_budgets
    }

    pub fn classes(&self) -> Vec<usize> {
        self.per_class_budgets.iter().map(|&(c, _)| c).collect()
    }

    pub fn class_count(&self, class: usize) -> usize {
        self.entries.iter().filter(|e| e.class == class).count()
    }

    /// Replaces the frozen representations, e.g. after a reload.
    pub fn with_representations(mut self, reps: Matrix) -> Result<Self> {
        if reps.rows() != self.len() {
            return Err(Error::State("representations not aligned with support set".into()));
        }
        self.representations = reps;
        Ok(self)
    }

    /// Rewrites every `dataset_index` through `origin`, e.g. from a merged
    /// training set back to indices of the full training data.
    pub fn reindexed(mut self, origin: &[usize]) -> Result<Self> {
        for e in &mut self.entries {
            e.dataset_index = *origin
                .get(e.dataset_index)
                .ok_or_else(|| Error::shape("origin map shorter than dataset"))?;
        }
        Ok(self)
    }

    /// Audit CSV: `class,dataset_index,margin,was_support_vector`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        write_support_csv(&self.entries, w)
    }

    fn assemble(
        dataset: &Dataset,
        representations: &Matrix,
        entries: Vec<SupportEntry>,
        per_class_budgets: Vec<(usize, usize)>,
    ) -> Self {
        let rows: Vec<usize> = entries.iter().map(|e| e.dataset_index).collect();
        Self {
            examples: dataset.subset(&rows),
            representations: representations.select_rows(&rows),
            entries,
            budget: per_class_budgets.iter().map(|&(_, b)| b).sum(),
            per_class_budgets,
        }
    }
}

/// Writes audit rows; `margin` is blank for randomly drawn examples.
pub fn write_support_csv<W: Write>(entries: &[SupportEntry], mut w: W) -> Result<()> {
    writeln!(w, "class,dataset_index,margin,was_support_vector")?;
    for e in entries {
        let margin = e.margin.map_or(String::new(), |m| format!("{m:.17e}"));
        writeln!(w, "{},{},{},{}", e.class, e.dataset_index, margin, e.was_support_vector)?;
    }
    Ok(())
}

/// Representations `δ_n` of every example (mapping function only, no
/// softmax), evaluated in chunks.
pub fn compute_representations(params: &NetworkParams, dataset: &Dataset) -> Result<Matrix> {
    if dataset.dim() != params.input_dim() && !dataset.is_empty() {
        return Err(Error::shape(format!(
            "dataset dimension {} but network expects {}",
            dataset.dim(),
            params.input_dim()
        )));
    }
    const CHUNK: usize = 2048;
    let t = params.representation_dim();
    let mut out = Vec::with_capacity(dataset.len() * t);
    let idx: Vec<usize> = (0..dataset.len()).collect();
    for chunk in idx.chunks(CHUNK) {
        let x = dataset.features().select_rows(chunk);
        let (_, posts) = map_batch(params, &x);
        out.extend_from_slice(posts.last().unwrap_or(&x).data());
    }
    Ok(Matrix::new(dataset.len(), t, out)?)
}

/// Splits `total_budget` evenly over `classes`; the remainder goes one each
/// to the lowest class indices. Returned sorted by class.
pub fn allocate_budget(total_budget: usize, classes: &[usize]) -> Result<Vec<(usize, usize)>> {
    let mut sorted = classes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.is_empty() || total_budget < sorted.len() {
        return Err(Error::param(format!(
            "budget {total_budget} cannot cover {} classes",
            sorted.len()
        )));
    }
    let base = total_budget / sorted.len();
    let extra = total_budget % sorted.len();
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(i, c)| (c, base + usize::from(i < extra)))
        .collect())
}

fn by_abs_margin(items: &mut [(usize, f64)]) {
    items.sort_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(a.0.cmp(&b.0)));
}

/// Picks each class's support data from an SVM trained on `representations`
/// (rows aligned with `dataset`). Candidates are the class's own support
/// vectors; when they run short, the budget is filled with the class's
/// remaining examples in ascending |margin| order.
pub fn select_support(
    model: &LinearSvmModel,
    representations: &Matrix,
    dataset: &Dataset,
    per_class_budgets: &[(usize, usize)],
    mode: SelectionMode,
    rng: &mut SeededRng,
) -> Result<SupportSet> {
    if representations.rows() != dataset.len() {
        return Err(Error::shape("representations not aligned with dataset"));
    }
    let all_margins = margins(model, representations)?;
    let mut entries = Vec::new();
    for &(class, budget) in per_class_budgets {
        let members = dataset.indices_of_class(class);
        if members.is_empty() {
            return Err(Error::Selection(format!("class {class} absent from dataset")));
        }
        let col = model
            .class_row(class)
            .ok_or_else(|| Error::Selection(format!("class {class} absent from SVM model")))?;
        let svs = model.support_of(class);
        let (mut candidates, mut others): (Vec<(usize, f64)>, Vec<(usize, f64)>) = members
            .iter()
            .map(|&n| (n, all_margins.get(n, col)))
            .partition(|(n, _)| svs.binary_search(n).is_ok());
        match mode {
            SelectionMode::SmallestMargin => by_abs_margin(&mut candidates),
            SelectionMode::UniformCandidates => rng.shuffle(&mut candidates),
        }
        by_abs_margin(&mut others);
        let take_sv = candidates.len().min(budget);
        let take_fill = (budget - take_sv).min(others.len());
        let picked = candidates[..take_sv]
            .iter()
            .map(|&p| (p, true))
            .chain(others[..take_fill].iter().map(|&p| (p, false)));
        entries.extend(picked.map(|((n, m), sv)| SupportEntry {
            class,
            dataset_index: n,
            margin: Some(m),
            was_support_vector: sv,
        }));
    }
    Ok(SupportSet::assemble(
        dataset,
        representations,
        entries,
        per_class_budgets.to_vec(),
    ))
}

/// Uniform random per-class selection with the same budgets; the
/// memory-matched rehearsal control.
pub fn select_random(
    representations: &Matrix,
    dataset: &Dataset,
    per_class_budgets: &[(usize, usize)],
    rng: &mut SeededRng,
) -> Result<SupportSet> {
    if representations.rows() != dataset.len() {
        return Err(Error::shape("representations not aligned with dataset"));
    }
    let mut entries = Vec::new();
    for &(class, budget) in per_class_budgets {
        let mut members = dataset.indices_of_class(class);
        if members.is_empty() {
            return Err(Error::Selection(format!("class {class} absent from dataset")));
        }
        rng.shuffle(&mut members);
        members.truncate(budget);
        members.sort_unstable();
        entries.extend(members.into_iter().map(|n| SupportEntry {
            class,
            dataset_index: n,
            margin: None,
            was_support_vector: false,
        }));
    }
    Ok(SupportSet::assemble(
        dataset,
        representations,
        entries,
        per_class_budgets.to_vec(),
    ))
}

/// Support examples first, then the new batch. Old and new classes must not
/// overlap.
pub fn merge_training_set(support: &SupportSet, new_batch: &Dataset) -> Result<Dataset> {
    let old: BTreeMap<usize, ()> = support.examples.labels().iter().map(|&c| (c, ())).collect();
    if let Some(c) = new_batch.labels().iter().find(|c| old.contains_key(c)) {
        return Err(Error::Schedule(format!(
            "class {c} is in both the support set and the new batch"
        )));
    }
    if support.is_empty() {
        return Ok(new_batch.clone());
    }
    support.examples.concat(new_batch)
}
