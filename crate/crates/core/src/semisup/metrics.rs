use serde::{Deserialize, Serialize};

/// Macro precision/recall/F1 and accuracy, all in percent.
///
/// `confusion[g][p]` counts items with gold class `g` predicted as `p`.
/// A class with no predictions has precision 0; with no gold items, recall
/// 0; F1 is 0 whenever precision + recall is 0. Macro averages run over
/// every class of the matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub confusion: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: u64,
}

impl MetricsReport {
    pub fn from_confusion(confusion: Vec<Vec<u64>>) -> Self {
        let per = per_class(&confusion);
        let k = per.len().max(1) as f64;
        let total: u64 = confusion.iter().flatten().sum();
        let correct: u64 = (0..confusion.len()).map(|i| confusion[i][i]).sum();
        Self {
            precision: 100.0 * per.iter().map(|c| c.precision).sum::<f64>() / k,
            recall: 100.0 * per.iter().map(|c| c.recall).sum::<f64>() / k,
            macro_f1: 100.0 * per.iter().map(|c| c.f1).sum::<f64>() / k,
            accuracy: if total == 0 { 0.0 } else { 100.0 * correct as f64 / total as f64 },
            confusion,
        }
    }

    pub fn from_pairs(gold: &[usize], predicted: &[usize], classes: usize) -> Self {
        let mut m = vec![vec![0u64; classes]; classes];
        for (&g, &p) in gold.iter().zip(predicted) {
            m[g][p] += 1;
        }
        Self::from_confusion(m)
    }

    pub fn per_class(&self) -> Vec<ClassScores> {
        per_class(&self.confusion)
    }

    pub fn total(&self) -> u64 {
        self.confusion.iter().flatten().sum()
    }
}

fn per_class(m: &[Vec<u64>]) -> Vec<ClassScores> {
    (0..m.len())
        .map(|c| {
            let tp = m[c][c] as f64;
            let predicted: u64 = m.iter().map(|row| row[c]).sum();
            let support: u64 = m[c].iter().sum();
            let precision = if predicted == 0 { 0.0 } else { tp / predicted as f64 };
            let recall = if support == 0 { 0.0 } else { tp / support as f64 };
            let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
            ClassScores { precision, recall, f1, support }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_matrix() {
        let r = MetricsReport::from_confusion(vec![vec![2, 1, 0], vec![0, 3, 0], vec![1, 0, 2]]);
        let p = (2.0 / 3.0 + 3.0 / 4.0 + 1.0) / 3.0;
        let rc = (2.0 / 3.0 + 1.0 + 2.0 / 3.0) / 3.0;
        let f = (2.0 / 3.0 + 6.0 / 7.0 + 0.8) / 3.0;
        assert!((r.precision - 100.0 * p).abs() < 1e-9);
        assert!((r.recall - 100.0 * rc).abs() < 1e-9);
        assert!((r.macro_f1 - 100.0 * f).abs() < 1e-9);
        assert!((r.accuracy - 700.0 / 9.0).abs() < 1e-9);
    }

    #[test]
    fn perfect_and_constant() {
        let gold: Vec<usize> = (0..41).flat_map(|c| [c, c]).collect();
        let perfect = MetricsReport::from_pairs(&gold, &gold, 41);
        assert_eq!((perfect.precision, perfect.recall, perfect.macro_f1, perfect.accuracy), (100.0, 100.0, 100.0, 100.0));
        let constant = MetricsReport::from_pairs(&gold, &vec![0; gold.len()], 41);
        assert!((constant.accuracy - 100.0 / 41.0).abs() < 1e-9);
    }

    #[test]
    fn empty_classes_count_as_zero() {
        let r = MetricsReport::from_confusion(vec![vec![4, 0], vec![0, 0]]);
        assert_eq!(r.macro_f1, 50.0);
        assert_eq!(r.accuracy, 100.0);
        assert_eq!(MetricsReport::from_confusion(vec![vec![0]]).accuracy, 0.0);
    }
}
