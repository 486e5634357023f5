//! Threshold-free and operating-point detection metrics.
//!
//! Scores are bonafide likelihoods: higher means more likely genuine. All
//! rates are computed from integer counts so that results are reproducible
//! to the last bit.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::task::{Label, Task};

/// Scores with ground truth for one evaluation set.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreSet {
    pub scores: Vec<f64>,
    pub labels: Vec<Label>,
}

impl ScoreSet {
    pub fn new(scores: Vec<f64>, labels: Vec<Label>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::dim("score set", &[scores.len()], &[labels.len()]));
        }
        if scores.iter().any(|s| s.is_nan()) {
            return Err(Error::Parameter("score set contains NaN".into()));
        }
        Ok(Self { scores, labels })
    }

    /// Builds from `1 = bonafide, 0 = attack` flags.
    pub fn from_flags(scores: &[f64], bonafide: &[u8]) -> Result<Self> {
        let labels = bonafide
            .iter()
            .map(|&b| if b == 1 { Label::Bonafide } else { Label::Attack })
            .collect();
        Self::new(scores.to_vec(), labels)
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn counts(&self) -> (usize, usize) {
        let b = self.labels.iter().filter(|l| l.is_bonafide()).count();
        (b, self.labels.len() - b)
    }

    fn require_both(&self) -> Result<(usize, usize)> {
        let (b, a) = self.counts();
        if b == 0 {
            return Err(Error::MetricUndefined("no bonafide samples"));
        }
        if a == 0 {
            return Err(Error::MetricUndefined("no attack samples"));
        }
        Ok((b, a))
    }

    /// Distinct scores ascending, each with (bonafide, attack) counts.
    fn grouped(&self) -> Vec<(f64, usize, usize)> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&i, &j| self.scores[i].total_cmp(&self.scores[j]));
        let mut out: Vec<(f64, usize, usize)> = Vec::new();
        for i in idx {
            let s = self.scores[i];
            let bona = self.labels[i].is_bonafide();
            match out.last_mut() {
                Some(last) if last.0 == s => {
                    if bona {
                        last.1 += 1;
                    } else {
                        last.2 += 1;
                    }
                }
                _ => out.push((s, bona as usize, (!bona) as usize)),
            }
        }
        out
    }
}

/// Probability that a random bonafide outscores a random attack, ties
/// counting one half.
pub fn auc(s: &ScoreSet) -> Result<f64> {
    let (nb, na) = s.require_both()?;
    // twice the Mann–Whitney U, kept integral
    let mut u2: u128 = 0;
    let mut attacks_below: u128 = 0;
    for (_, b, a) in s.grouped() {
        u2 += b as u128 * (2 * attacks_below + a as u128);
        attacks_below += a as u128;
    }
    Ok(u2 as f64 / (2.0 * nb as f64 * na as f64))
}

/// Equal error rate: at the score threshold minimizing |FAR − FRR| (lowest
/// such threshold on ties), the mean of FAR and FRR. FAR counts attacks
/// scoring ≥ t, FRR counts bonafides scoring < t.
pub fn eer(s: &ScoreSet) -> Result<f64> {
    let (nb, na) = s.require_both()?;
    let groups = s.grouped();
    let mut attacks_at_or_above = na;
    let mut bona_below = 0usize;
    let mut best: Option<(u128, usize, usize)> = None;
    for (_, b, a) in groups {
        // |fa/na − fr/nb| compared as |fa·nb − fr·na|
        let gap = (attacks_at_or_above as i128 * nb as i128 - bona_below as i128 * na as i128).unsigned_abs();
        if best.is_none_or(|(g, _, _)| gap < g) {
            best = Some((gap, attacks_at_or_above, bona_below));
        }
        attacks_at_or_above -= a;
        bona_below += b;
    }
    let (_, fa, fr) = best.expect("non-empty score set");
    Ok(rate_mean(fa, na, fr, nb))
}

fn rate_mean(fa: usize, na: usize, fr: usize, nb: usize) -> f64 {
    (fa as f64 / na as f64 + fr as f64 / nb as f64) / 2.0
}

/// Highest TPR over thresholds (every distinct score plus +∞) whose FPR is
/// at most `fpr_target`, on the step ROC.
pub fn tpr_at_fpr(s: &ScoreSet, fpr_target: f64) -> Result<f64> {
    let (nb, na) = s.require_both()?;
    if !(0.0..=1.0).contains(&fpr_target) {
        return Err(Error::Parameter(format!("FPR target {fpr_target} outside [0, 1]")));
    }
    let mut best = 0.0f64;
    let (mut tp, mut fp) = (0usize, 0usize);
    // descending thresholds; the +∞ point is (0, 0)
    for (_, b, a) in s.grouped().into_iter().rev() {
        tp += b;
        fp += a;
        if fp as f64 / na as f64 <= fpr_target {
            best = best.max(tp as f64 / nb as f64);
        }
    }
    Ok(best)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Intra,
    Cross,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Intra => "intra",
            Split::Cross => "cross",
        }
    }
}

/// One scored sample with its provenance.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSample {
    pub task: Task,
    pub split: Split,
    pub dataset: String,
    pub label: Label,
    pub score: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SetMetrics {
    pub task: Task,
    pub split: Split,
    /// Dataset tag, or `merged` for the pooled block.
    pub dataset: String,
    pub n_bonafide: usize,
    pub n_attack: usize,
    pub auc: f64,
    pub eer: f64,
    pub tpr_at_fpr_10: f64,
    pub tpr_at_fpr_1: f64,
}

/// Per-dataset rows followed by one pooled row per (task, split).
#[derive(Clone, Debug, PartialEq)]
pub struct ProtocolResult {
    pub rows: Vec<SetMetrics>,
}

pub const MERGED: &str = "merged";

fn set_metrics(task: Task, split: Split, dataset: &str, s: &ScoreSet) -> Result<SetMetrics> {
    let (n_bonafide, n_attack) = s.counts();
    Ok(SetMetrics {
        task,
        split,
        dataset: dataset.to_string(),
        n_bonafide,
        n_attack,
        auc: auc(s)?,
        eer: eer(s)?,
        tpr_at_fpr_10: tpr_at_fpr(s, 0.10)?,
        tpr_at_fpr_1: tpr_at_fpr(s, 0.01)?,
    })
}

/// Groups scored samples into per-dataset and pooled per-(task, split)
/// metrics. Order: task, split, then dataset tag with the pooled row last.
pub fn summarize(samples: &[ScoredSample]) -> Result<ProtocolResult> {
    let mut keys: Vec<(Task, Split, &str)> = samples.iter().map(|s| (s.task, s.split, s.dataset.as_str())).collect();
    keys.sort();
    keys.dedup();
    let collect = |pred: &dyn Fn(&ScoredSample) -> bool| -> Result<ScoreSet> {
        let picked: Vec<&ScoredSample> = samples.iter().filter(|s| pred(s)).collect();
        ScoreSet::new(
            picked.iter().map(|s| s.score).collect(),
            picked.iter().map(|s| s.label).collect(),
        )
    };
    let mut rows = Vec::new();
    let mut i = 0;
    while i < keys.len() {
        let (task, split, _) = keys[i];
        while i < keys.len() && keys[i].0 == task && keys[i].1 == split {
            let ds = keys[i].2;
            let set = collect(&|s| s.task == task && s.split == split && s.dataset == ds)?;
            rows.push(set_metrics(task, split, ds, &set)?);
            i += 1;
        }
        let set = collect(&|s| s.task == task && s.split == split)?;
        rows.push(set_metrics(task, split, MERGED, &set)?);
    }
    Ok(ProtocolResult { rows })
}

impl ProtocolResult {
    pub fn merged(&self, task: Task, split: Split) -> Option<&SetMetrics> {
        self.rows
            .iter()
            .find(|r| r.task == task && r.split == split && r.dataset == MERGED)
    }

    /// `key: value` lines, one block per evaluation set.
    pub fn report(&self) -> String {
        let mut out = String::new();
        for r in &self.rows {
            let p = format!("{}.{}.{}", r.task, r.split.name(), r.dataset);
            let _ = writeln!(out, "{p}.n_bonafide: {}", r.n_bonafide);
            let _ = writeln!(out, "{p}.n_attack: {}", r.n_attack);
            let _ = writeln!(out, "{p}.auc: {:.6}", r.auc);
            let _ = writeln!(out, "{p}.eer: {:.6}", r.eer);
            if r.dataset == MERGED {
                let _ = writeln!(out, "{p}.tpr@fpr=0.10: {:.6}", r.tpr_at_fpr_10);
                let _ = writeln!(out, "{p}.tpr@fpr=0.01: {:.6}", r.tpr_at_fpr_1);
            }
        }
        out
    }

    /// Tab-separated table with a header row.
    pub fn table(&self) -> String {
        let mut out =
            String::from("task\tsplit\tdataset\tn_bonafide\tn_attack\tauc\teer\ttpr@fpr=0.10\ttpr@fpr=0.01\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                r.task,
                r.split.name(),
                r.dataset,
                r.n_bonafide,
                r.n_attack,
                r.auc,
                r.eer,
                r.tpr_at_fpr_10,
                r.tpr_at_fpr_1
            );
        }
        out
    }
}

impl ProtocolResult {
    /// Parses the output of [`Self::table`].
    pub fn from_table(text: &str, origin: &std::path::Path) -> Result<Self> {
        let err = |line: usize, msg: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            msg,
        };
        let mut rows = Vec::new();
        for (i, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split('\t').collect();
            if f.len() != 9 {
                return Err(err(i + 1, format!("expected 9 fields, found {}", f.len())));
            }
            let num =
                |k: usize| -> Result<f64> { f[k].parse().map_err(|_| err(i + 1, format!("bad number '{}'", f[k]))) };
            let count =
                |k: usize| -> Result<usize> { f[k].parse().map_err(|_| err(i + 1, format!("bad count '{}'", f[k]))) };
            let split = match f[1] {
                "intra" => Split::Intra,
                "cross" => Split::Cross,
                other => return Err(err(i + 1, format!("unknown split '{other}'"))),
            };
            rows.push(SetMetrics {
                task: f[0].parse().map_err(|e: Error| err(i + 1, e.to_string()))?,
                split,
                dataset: f[2].to_string(),
                n_bonafide: count(3)?,
                n_attack: count(4)?,
                auc: num(5)?,
                eer: num(6)?,
                tpr_at_fpr_10: num(7)?,
                tpr_at_fpr_1: num(8)?,
            });
        }
        Ok(ProtocolResult { rows })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(scores: &[f64], flags: &[u8]) -> ScoreSet {
        ScoreSet::from_flags(scores, flags).unwrap()
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&set(&[0.9, 0.8, 0.4, 0.3], &[1, 1, 0, 0])).unwrap(), 1.0);
        assert_eq!(auc(&set(&[0.5; 6], &[1, 0, 1, 0, 1, 0])).unwrap(), 0.5);
        assert_eq!(auc(&set(&[0.8, 0.7, 0.6, 0.2], &[1, 0, 1, 0])).unwrap(), 0.75);
    }

    #[test]
    fn single_class_is_undefined() {
        let s = set(&[0.1, 0.2], &[1, 1]);
        assert!(matches!(auc(&s), Err(Error::MetricUndefined(_))));
        assert!(eer(&s).is_err());
        assert!(tpr_at_fpr(&s, 0.1).is_err());
        assert!(ScoreSet::from_flags(&[0.1], &[1, 0]).is_err());
    }

    #[test]
    fn eer_examples() {
        assert_eq!(eer(&set(&[0.9, 0.8, 0.4, 0.3], &[1, 1, 0, 0])).unwrap(), 0.0);
        assert_eq!(eer(&set(&[0.9, 0.8, 0.4, 0.3], &[0, 0, 1, 1])).unwrap(), 1.0);
        // thresholds 0.2, 0.6, 0.7, 0.9 give (FAR, FRR) = (1, 0), (0.5, 0),
        // (0.5, 0.5), (0, 0.5); the gap is zero at 0.7
        assert_eq!(eer(&set(&[0.9, 0.6, 0.7, 0.2], &[1, 1, 0, 0])).unwrap(), 0.5);
    }

    #[test]
    fn tpr_examples() {
        let s = set(&[0.9, 0.8, 0.4, 0.3], &[1, 1, 0, 0]);
        assert_eq!(tpr_at_fpr(&s, 0.10).unwrap(), 1.0);
        assert_eq!(tpr_at_fpr(&s, 0.01).unwrap(), 1.0);
        // every attack outscores one bonafide; a zero-FP threshold admits
        // only the bonafide at 0.9
        let s = set(&[0.9, 0.7, 0.6, 0.1], &[1, 0, 0, 1]);
        assert_eq!(tpr_at_fpr(&s, 0.01).unwrap(), 0.5);
        let s = set(&[0.5; 4], &[1, 0, 1, 0]);
        assert_eq!(tpr_at_fpr(&s, 0.10).unwrap(), 0.0);
    }

    #[test]
    fn summary_layout_and_report() {
        let mk = |task, split, ds: &str, label, score| ScoredSample {
            task,
            split,
            dataset: ds.into(),
            label,
            score,
        };
        use Label::*;
        let samples = vec![
            mk(Task::Spoof, Split::Intra, "a", Bonafide, 0.9),
            mk(Task::Spoof, Split::Intra, "a", Attack, 0.1),
            mk(Task::Spoof, Split::Intra, "b", Bonafide, 0.8),
            mk(Task::Spoof, Split::Intra, "b", Attack, 0.2),
            mk(Task::Forgery, Split::Cross, "c", Bonafide, 0.3),
            mk(Task::Forgery, Split::Cross, "c", Attack, 0.7),
        ];
        let r = summarize(&samples).unwrap();
        let names: Vec<&str> = r.rows.iter().map(|r| r.dataset.as_str()).collect();
        assert_eq!(names, ["a", "b", MERGED, "c", MERGED]);
        assert_eq!(r.merged(Task::Spoof, Split::Intra).unwrap().auc, 1.0);
        assert_eq!(r.merged(Task::Forgery, Split::Cross).unwrap().auc, 0.0);
        let report = r.report();
        assert!(report.contains("spoof.intra.merged.tpr@fpr=0.10: 1.000000"));
        assert!(report.contains("forgery.cross.c.eer: 1.000000"));
        assert_eq!(r.table().lines().count(), 6);
    }
}
