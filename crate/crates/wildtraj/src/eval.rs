//! Evaluation: confusion matrices, balanced accuracy, positive-class F1,
//! and ROC AUC via the rank-sum (Mann-Whitney) formulation with average
//! ranks for ties, which is exactly the normalized count of correctly
//! ordered pairs (ties count half).

use std::collections::BTreeMap;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ConfusionMatrix {
    pub k: usize,
    /// counts[true][pred]
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionMatrix {
    pub fn new(k: usize) -> Self {
        ConfusionMatrix {
            k,
            counts: vec![vec![0; k]; k],
        }
    }

    pub fn from_counts(counts: Vec<Vec<usize>>) -> Self {
        let k = counts.len();
        assert!(counts.iter().all(|r| r.len() == k));
        ConfusionMatrix { k, counts }
    }

    pub fn record(&mut self, truth: usize, pred: usize) {
        self.counts[truth][pred] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn support(&self, class: usize) -> usize {
        self.counts[class].iter().sum()
    }

    /// Mean per-class recall over classes with nonzero support.
    pub fn balanced_accuracy(&self) -> Result<f64> {
        let mut sum = 0.0;
        let mut classes = 0usize;
        for c in 0..self.k {
            let support = self.support(c);
            if support == 0 {
                continue;
            }
            sum += self.counts[c][c] as f64 / support as f64;
            classes += 1;
        }
        if classes == 0 {
            return Err(Error::Eval("no class has any support".into()));
        }
        Ok(sum / classes as f64)
    }

    /// F1 of the designated positive class.
    pub fn f1(&self, positive: usize) -> f64 {
        let tp = self.counts[positive][positive];
        let fp: usize = (0..self.k)
            .filter(|&c| c != positive)
            .map(|c| self.counts[c][positive])
            .sum();
        let fn_: usize = (0..self.k)
            .filter(|&c| c != positive)
            .map(|c| self.counts[positive][c])
            .sum();
        let denom = 2 * tp + fp + fn_;
        if denom == 0 {
            0.0
        } else {
            2.0 * tp as f64 / denom as f64
        }
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("truth\\pred");
        for c in 0..self.k {
            s.push_str(&format!(",{c}"));
        }
        s.push('\n');
        for (t, row) in self.counts.iter().enumerate() {
            s.push_str(&t.to_string());
            for &v in row {
                s.push_str(&format!(",{v}"));
            }
            s.push('\n');
        }
        s
    }
}

/// ROC AUC of `scores` (probability of the positive class) against binary
/// labels, computed from the rank sum of positives with average ranks for
/// tied scores. Requires both classes present.
pub fn roc_auc(scores: &[f64], labels: &[usize]) -> Result<f64> {
    assert_eq!(scores.len(), labels.len());
    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Eval(
            "AUC undefined: need both positive and negative examples".into(),
        ));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Eval("non-finite score in AUC input".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // average ranks (1-based) over tie groups
    let mut ranks = vec![0.0f64; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + 1 + j + 1) as f64 / 2.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let rank_sum: f64 = ranks
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y == 1)
        .map(|(&r, _)| r)
        .sum();
    let u = rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0;
    Ok(u / (n_pos as f64 * n_neg as f64))
}

/// Per-example prediction with grouping keys for breakdowns.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub study_id: String,
    pub truth: usize,
    pub pred: usize,
    /// probability of class 1
    pub score: f64,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub balanced_accuracy: f64,
    pub f1_positive: f64,
    pub auc: Option<f64>,
    pub per_study: Vec<(String, usize, f64)>,
}

/// Aggregate predictions into overall metrics and a per-study accuracy
/// breakdown. AUC is `None` when the evaluation set is single-class.
pub fn evaluate(preds: &[Prediction], num_classes: usize) -> Result<Evaluation> {
    if preds.is_empty() {
        return Err(Error::Eval("no predictions to evaluate".into()));
    }
    let mut confusion = ConfusionMatrix::new(num_classes);
    for p in preds {
        if p.truth >= num_classes || p.pred >= num_classes {
            return Err(Error::Eval("class index out of range".into()));
        }
        confusion.record(p.truth, p.pred);
    }
    let balanced_accuracy = confusion.balanced_accuracy()?;
    let f1_positive = confusion.f1(1);
    // ROC AUC is a binary notion; skip it for multiclass tasks
    let auc = if num_classes == 2 {
        let scores: Vec<f64> = preds.iter().map(|p| p.score).collect();
        let labels: Vec<usize> = preds.iter().map(|p| p.truth).collect();
        roc_auc(&scores, &labels).ok()
    } else {
        None
    };

    let mut groups: BTreeMap<&str, (usize, usize)> = BTreeMap::new();
    for p in preds {
        let e = groups.entry(&p.study_id).or_insert((0, 0));
        e.0 += 1;
        if p.truth == p.pred {
            e.1 += 1;
        }
    }
    let per_study = groups
        .into_iter()
        .map(|(study, (n, correct))| (study.to_string(), n, correct as f64 / n as f64))
        .collect();

    Ok(Evaluation {
        confusion,
        balanced_accuracy,
        f1_positive,
        auc,
        per_study,
    })
}

impl Evaluation {
    /// key=value report, metrics at four decimals.
    pub fn report_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("n={}\n", self.confusion.total()));
        s.push_str(&format!("balanced_accuracy={:.4}\n", self.balanced_accuracy));
        s.push_str(&format!("f1_positive={:.4}\n", self.f1_positive));
        match self.auc {
            Some(a) => s.push_str(&format!("roc_auc={:.4}\n", a)),
            None => s.push_str("roc_auc=undefined\n"),
        }
        s
    }

    pub fn per_study_csv(&self) -> String {
        let mut s = String::from("study_id,n,accuracy\n");
        for (study, n, acc) in &self.per_study {
            s.push_str(&format!("{study},{n},{acc:.4}\n"));
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn balanced_accuracy_known_matrix() {
        // [[8,2],[3,7]]: recalls 0.8 and 0.7
        let cm = ConfusionMatrix::from_counts(vec![vec![8, 2], vec![3, 7]]);
        assert!((cm.balanced_accuracy().unwrap() - 0.75).abs() < 1e-15);
    }

    #[test]
    fn balanced_accuracy_skips_empty_class() {
        let cm = ConfusionMatrix::from_counts(vec![vec![9, 1], vec![0, 0]]);
        assert!((cm.balanced_accuracy().unwrap() - 0.9).abs() < 1e-15);
        let empty = ConfusionMatrix::new(2);
        assert!(empty.balanced_accuracy().is_err());
    }

    #[test]
    fn f1_known_counts() {
        // tp=98, fp=40, fn=30 => f1 = 196/266 = 98/133
        let cm = ConfusionMatrix::from_counts(vec![vec![50, 40], vec![30, 98]]);
        assert!((cm.f1(1) - 98.0 / 133.0).abs() < 1e-12);
        // degenerate: no predicted or actual positives
        let z = ConfusionMatrix::from_counts(vec![vec![5, 0], vec![0, 0]]);
        assert_eq!(z.f1(1), 0.0);
    }

    #[test]
    fn auc_textbook_case() {
        let auc = roc_auc(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]).unwrap();
        assert!((auc - 0.75).abs() < 1e-15);
    }

    /// Pair-counting oracle: fraction of (pos, neg) pairs ordered
    /// correctly, ties worth one half.
    fn auc_pairs(scores: &[f64], labels: &[usize]) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for (i, &yi) in labels.iter().enumerate() {
            if yi != 1 {
                continue;
            }
            for (j, &yj) in labels.iter().enumerate() {
                if yj != 0 {
                    continue;
                }
                den += 1.0;
                if scores[i] > scores[j] {
                    num += 1.0;
                } else if scores[i] == scores[j] {
                    num += 0.5;
                }
            }
        }
        num / den
    }

    #[test]
    fn auc_matches_pair_count_oracle_exactly() {
        // random score sets with deliberate ties; rank formulation must
        // equal the pair count bit for bit (half-integer numerators are
        // exactly representable)
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        for trial in 0..50 {
            let n = rng.gen_range(5..40);
            let scores: Vec<f64> = (0..n)
                .map(|_| (rng.gen_range(0..10) as f64) / 10.0)
                .collect();
            let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..2)).collect();
            if labels.iter().all(|&y| y == 1) || labels.iter().all(|&y| y == 0) {
                continue;
            }
            let got = roc_auc(&scores, &labels).unwrap();
            let want = auc_pairs(&scores, &labels);
            assert_eq!(got, want, "trial {trial}: {scores:?} {labels:?}");
        }
    }

    #[test]
    fn auc_rejects_single_class() {
        assert!(roc_auc(&[0.1, 0.2], &[1, 1]).is_err());
        assert!(roc_auc(&[0.1, 0.2], &[0, 0]).is_err());
    }

    #[test]
    fn evaluate_groups_by_study() {
        let preds = vec![
            Prediction {
                study_id: "a".into(),
                truth: 0,
                pred: 0,
                score: 0.1,
            },
            Prediction {
                study_id: "a".into(),
                truth: 1,
                pred: 0,
                score: 0.4,
            },
            Prediction {
                study_id: "b".into(),
                truth: 1,
                pred: 1,
                score: 0.9,
            },
        ];
        let ev = evaluate(&preds, 2).unwrap();
        assert_eq!(ev.per_study.len(), 2);
        assert_eq!(ev.per_study[0], ("a".into(), 2, 0.5));
        assert_eq!(ev.per_study[1], ("b".into(), 1, 1.0));
        assert!(ev.report_text().contains("balanced_accuracy=0.7500"));
    }

    #[test]
    fn report_formats_four_decimals() {
        let cm = ConfusionMatrix::from_counts(vec![vec![50, 40], vec![30, 98]]);
        let ev = Evaluation {
            balanced_accuracy: cm.balanced_accuracy().unwrap(),
            f1_positive: cm.f1(1),
            auc: Some(98.0 / 133.0),
            per_study: vec![],
            confusion: cm,
        };
        let text = ev.report_text();
        assert!(text.contains("f1_positive=0.7368"), "{text}");
        assert!(text.contains("roc_auc=0.7368"), "{text}");
    }
}
