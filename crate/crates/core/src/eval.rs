//! Metrics: accuracy over encountered classes, per-class macro F1,
//! forgetting, confusion matrices and multi-run aggregation.

use crate::error::{Error, Result};
use crate::model::ClassId;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Row = true class, column = predicted class, indexed by the registry
/// snapshot taken when the matrix was created.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub classes: Vec<ClassId>,
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(classes: Vec<ClassId>) -> Self {
        let c = classes.len();
        Self {
            classes,
            counts: vec![vec![0; c]; c],
        }
    }

    pub fn record(&mut self, true_class: ClassId, predicted: ClassId) -> Result<()> {
        let t = self.index_of(true_class)?;
        let p = self.index_of(predicted)?;
        self.counts[t][p] += 1;
        Ok(())
    }

    fn index_of(&self, class: ClassId) -> Result<usize> {
        self.classes
            .iter()
            .position(|&c| c == class)
            .ok_or_else(|| Error::ProtocolError(format!("class {class} not registered")))
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.classes.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn row_sum(&self, i: usize) -> usize {
        self.counts[i].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> usize {
        self.counts.iter().map(|row| row[j]).sum()
    }
}

/// trace / total.
pub fn accuracy(conf: &ConfusionMatrix) -> Result<f64> {
    let total = conf.total();
    if total == 0 {
        return Err(Error::MetricsError("empty confusion matrix".into()));
    }
    Ok(conf.trace() as f64 / total as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassScore {
    pub class: ClassId,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Per-class precision/recall/F1 (0/0 counts as 0) and their unweighted
/// mean.
pub fn macro_f1(conf: &ConfusionMatrix) -> Result<(Vec<ClassScore>, f64)> {
    if conf.total() == 0 {
        return Err(Error::MetricsError("empty confusion matrix".into()));
    }
    let zero_safe = |num: f64, den: f64| if den == 0.0 { 0.0 } else { num / den };
    let mut scores = Vec::with_capacity(conf.classes.len());
    for (i, &class) in conf.classes.iter().enumerate() {
        let tp = conf.counts[i][i] as f64;
        let precision = zero_safe(tp, conf.col_sum(i) as f64);
        let recall = zero_safe(tp, conf.row_sum(i) as f64);
        let f1 = zero_safe(2.0 * precision * recall, precision + recall);
        scores.push(ClassScore {
            class,
            precision,
            recall,
            f1,
        });
    }
    let mean = scores.iter().map(|s| s.f1).sum::<f64>() / scores.len() as f64;
    Ok((scores, mean))
}

/// One session's evaluation output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub session: usize,
    pub n_classes: usize,
    pub accuracy: f64,
    pub per_class: Vec<ClassScore>,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

impl MetricsRecord {
    pub fn from_confusion(session: usize, confusion: ConfusionMatrix) -> Result<Self> {
        let accuracy = accuracy(&confusion)?;
        let (per_class, macro_f1) = macro_f1(&confusion)?;
        Ok(Self {
            session,
            n_classes: confusion.classes.len(),
            accuracy,
            per_class,
            macro_f1,
            confusion,
        })
    }

    pub fn f1_of(&self, class: ClassId) -> Option<f64> {
        self.per_class.iter().find(|s| s.class == class).map(|s| s.f1)
    }
}

/// Per-class F1 drop between the session that introduced the class and the
/// final session. Signed: a class that improved gets a negative score.
/// Classes introduced in the final session have no later session and are
/// absent from the report.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ForgettingReport {
    pub per_class: BTreeMap<ClassId, f64>,
}

/// `class_order` lists classes in introduction order; the first two arrive
/// together in the base session, every later class in its own session.
pub fn forgetting(records: &[MetricsRecord], class_order: &[ClassId]) -> Result<ForgettingReport> {
    if records.is_empty() {
        return Err(Error::MetricsError("no session records".into()));
    }
    let expected_sessions = class_order.len().saturating_sub(1);
    if records.len() != expected_sessions {
        return Err(Error::MetricsError(format!(
            "expected {expected_sessions} session records for {} classes, found {}",
            class_order.len(),
            records.len()
        )));
    }
    let final_record = records.last().expect("nonempty");
    let mut per_class = BTreeMap::new();
    for (pos, &class) in class_order.iter().enumerate() {
        let intro_session = pos.saturating_sub(1);
        if intro_session + 1 >= records.len() {
            continue; // introduced in the final session: no later session
        }
        let at_intro = records[intro_session].f1_of(class).ok_or_else(|| {
            Error::MetricsError(format!("class {class} missing from session {intro_session}"))
        })?;
        let at_end = final_record
            .f1_of(class)
            .ok_or_else(|| Error::MetricsError(format!("class {class} missing from final session")))?;
        per_class.insert(class, at_intro - at_end);
    }
    Ok(ForgettingReport { per_class })
}

/// Mean and population standard deviation per session across runs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SessionAggregate {
    pub session: usize,
    pub n_classes: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    pub runs: usize,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

pub fn aggregate_runs(runs: &[Vec<MetricsRecord>]) -> Result<Vec<SessionAggregate>> {
    if runs.is_empty() {
        return Err(Error::MetricsError("no runs to aggregate".into()));
    }
    let sessions = runs[0].len();
    if runs.iter().any(|r| r.len() != sessions) {
        return Err(Error::MetricsError(
            "runs have differing session counts; protocols do not match".into(),
        ));
    }
    let mut out = Vec::with_capacity(sessions);
    for s in 0..sessions {
        let n_classes = runs[0][s].n_classes;
        if runs.iter().any(|r| r[s].n_classes != n_classes) {
            return Err(Error::MetricsError(format!(
                "session {s} class counts differ across runs"
            )));
        }
        let accs: Vec<f64> = runs.iter().map(|r| r[s].accuracy).collect();
        let f1s: Vec<f64> = runs.iter().map(|r| r[s].macro_f1).collect();
        let (am, asd) = mean_std(&accs);
        let (fm, fsd) = mean_std(&f1s);
        out.push(SessionAggregate {
            session: s,
            n_classes,
            accuracy_mean: am,
            accuracy_std: asd,
            macro_f1_mean: fm,
            macro_f1_std: fsd,
            runs: runs.len(),
        });
    }
    Ok(out)
}

/// One row of the results CSV:
/// `run,seed,order,session,n_classes,k,mode,alpha,accuracy,macro_f1,forgetting_json,confusion_json`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub run: usize,
    pub seed: u64,
    pub order: usize,
    pub session: usize,
    pub n_classes: usize,
    pub k: usize,
    pub mode: String,
    pub alpha: f64,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub forgetting_json: String,
    pub confusion_json: String,
}

pub fn write_results_csv<W: std::io::Write>(writer: W, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::MetricsError(format!("csv write: {e}")))?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_results_csv<R: std::io::Read>(reader: R) -> Result<Vec<ResultRow>> {
    let mut r = csv::Reader::from_reader(reader);
    r.deserialize()
        .map(|row| row.map_err(|e| Error::MetricsError(format!("csv read: {e}"))))
        .collect()
}
