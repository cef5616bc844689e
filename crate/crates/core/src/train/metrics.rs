use std::collections::BTreeMap;
use std::fmt::Write;

use crate::data::Corpus;
use crate::error::{Error, Result};
use crate::model::{Model, Prediction};

/// Counting quality over paired predictions and targets.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CountMetrics {
    pub correct_ratio: f64,
    pub rmse: f64,
    /// Squared errors divided by `target + 1` before averaging.
    pub rel_rmse: f64,
}

pub fn count_metrics(predicted: &[usize], target: &[usize]) -> Result<CountMetrics> {
    if predicted.len() != target.len() {
        return Err(Error::Config(format!(
            "{} predictions for {} targets",
            predicted.len(),
            target.len()
        )));
    }
    if target.is_empty() {
        return Err(Error::EmptyCorpus("no samples to score".into()));
    }
    let n = target.len() as f64;
    let (mut correct, mut sq, mut rel) = (0usize, 0.0, 0.0);
    for (&p, &c) in predicted.iter().zip(target) {
        let d = p as f64 - c as f64;
        correct += usize::from(p == c);
        sq += d * d;
        rel += d * d / (c as f64 + 1.0);
    }
    Ok(CountMetrics {
        correct_ratio: correct as f64 / n,
        rmse: (sq / n).sqrt(),
        rel_rmse: (rel / n).sqrt(),
    })
}

/// Scores for one group of samples. Recognition and counting fields are
/// absent for models without the corresponding branch.
#[derive(Debug, Clone, PartialEq)]
pub struct Scores {
    pub n: usize,
    pub word_accuracy: Option<f64>,
    pub count: Option<CountMetrics>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub overall: Scores,
    /// Keyed by transcription length.
    pub per_length: BTreeMap<usize, Scores>,
}

fn scores(predictions: &[&Prediction], truths: &[&str]) -> Result<Scores> {
    let word_accuracy = if predictions.iter().all(|p| p.text.is_some()) {
        let hits = predictions
            .iter()
            .zip(truths)
            .filter(|(p, t)| p.text.as_deref() == Some(**t))
            .count();
        Some(hits as f64 / truths.len() as f64)
    } else {
        None
    };
    let count = if predictions.iter().all(|p| p.count.is_some()) {
        let predicted: Vec<usize> = predictions.iter().map(|p| p.count.unwrap_or(0)).collect();
        let target: Vec<usize> = truths.iter().map(|t| t.chars().count()).collect();
        Some(count_metrics(&predicted, &target)?)
    } else {
        None
    };
    Ok(Scores {
        n: truths.len(),
        word_accuracy,
        count,
    })
}

impl EvalReport {
    pub fn from_predictions(predictions: &[Prediction], truths: &[String]) -> Result<Self> {
        if predictions.len() != truths.len() {
            return Err(Error::Config(format!(
                "{} predictions for {} samples",
                predictions.len(),
                truths.len()
            )));
        }
        if truths.is_empty() {
            return Err(Error::EmptyCorpus("evaluation corpus is empty".into()));
        }
        let all_p: Vec<&Prediction> = predictions.iter().collect();
        let all_t: Vec<&str> = truths.iter().map(String::as_str).collect();
        let mut groups: BTreeMap<usize, (Vec<&Prediction>, Vec<&str>)> = BTreeMap::new();
        for (p, t) in all_p.iter().zip(&all_t) {
            let g = groups.entry(t.chars().count()).or_default();
            g.0.push(p);
            g.1.push(t);
        }
        Ok(Self {
            overall: scores(&all_p, &all_t)?,
            per_length: groups
                .into_iter()
                .map(|(l, (p, t))| Ok((l, scores(&p, &t)?)))
                .collect::<Result<_>>()?,
        })
    }

    /// CSV with an `all` row followed by one row per length.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scope,n,word_accuracy,count_correct_ratio,rmse,rel_rmse\n");
        let rows = std::iter::once(("all".to_string(), &self.overall))
            .chain(self.per_length.iter().map(|(l, s)| (format!("len{l}"), s)));
        for (scope, s) in rows {
            let opt = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:.6}"));
            writeln!(
                out,
                "{scope},{},{},{},{},{}",
                s.n,
                opt(s.word_accuracy),
                opt(s.count.map(|c| c.correct_ratio)),
                opt(s.count.map(|c| c.rmse)),
                opt(s.count.map(|c| c.rel_rmse)),
            )
            .expect("writing to a String");
        }
        out
    }
}

/// Inference over the whole corpus in fixed-size batches.
pub fn evaluate(model: &Model, corpus: &Corpus, batch_size: usize) -> Result<EvalReport> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus("evaluation corpus is empty".into()));
    }
    let idx: Vec<usize> = (0..corpus.len()).collect();
    let mut predictions = Vec::with_capacity(corpus.len());
    let mut truths = Vec::with_capacity(corpus.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let (images, texts) = corpus.batch(chunk)?;
        predictions.extend(model.predict(&images)?);
        truths.extend(texts);
    }
    EvalReport::from_predictions(&predictions, &truths)
}
