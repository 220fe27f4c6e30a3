//! Binary classification metrics. `Good` is the positive class and a score
//! exactly at the threshold is predicted `Good`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::Label;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("empty input")]
    Empty,
    #[error("length mismatch: {scores} scores, {labels} labels")]
    LengthMismatch { scores: usize, labels: usize },
    #[error("AUC-ROC is undefined when only one class is present")]
    SingleClass,
}

fn check(scores: &[f64], n: usize) -> Result<(), MetricError> {
    if scores.len() != n {
        return Err(MetricError::LengthMismatch {
            scores: scores.len(),
            labels: n,
        });
    }
    if n == 0 {
        return Err(MetricError::Empty);
    }
    Ok(())
}

#[inline]
pub fn predict_label(score: f64, threshold: f64) -> Label {
    if score >= threshold {
        Label::Good
    } else {
        Label::NotGood
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub fn_: usize,
}

impl Confusion {
    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

pub fn confusion(scores: &[f64], labels: &[Label], threshold: f64) -> Result<Confusion, MetricError> {
    check(scores, labels.len())?;
    let mut c = Confusion::default();
    for (&s, &l) in scores.iter().zip(labels) {
        match (predict_label(s, threshold), l) {
            (Label::Good, Label::Good) => c.tp += 1,
            (Label::Good, Label::NotGood) => c.fp += 1,
            (Label::NotGood, Label::NotGood) => c.tn += 1,
            (Label::NotGood, Label::Good) => c.fn_ += 1,
        }
    }
    Ok(c)
}

pub fn accuracy(scores: &[f64], labels: &[Label], threshold: f64) -> Result<f64, MetricError> {
    let c = confusion(scores, labels, threshold)?;
    Ok((c.tp + c.tn) as f64 / c.total() as f64)
}

fn f1_from(c: &Confusion) -> f64 {
    let denom = 2 * c.tp + c.fp + c.fn_;
    if denom == 0 {
        0.0
    } else {
        (2 * c.tp) as f64 / denom as f64
    }
}

pub fn f1(scores: &[f64], labels: &[Label], threshold: f64) -> Result<f64, MetricError> {
    Ok(f1_from(&confusion(scores, labels, threshold)?))
}

/// Area under the ROC curve from rank sums, with average ranks for ties.
pub fn auc_roc(scores: &[f64], labels: &[Label]) -> Result<f64, MetricError> {
    check(scores, labels.len())?;
    let n_pos = labels.iter().filter(|l| l.is_good()).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(MetricError::SingleClass);
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // Twice the rank sum of positives stays an integer with average ranks.
    let mut twice_rank_sum: u128 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 averaged: (i + j + 2) / 2.
        let pos_in_group = idx[i..=j].iter().filter(|&&k| labels[k].is_good()).count() as u128;
        twice_rank_sum += pos_in_group * (i + j + 2) as u128;
        i = j + 1;
    }
    let (p, q) = (n_pos as u128, n_neg as u128);
    // U = R - p(p+1)/2, doubled: 2U = 2R - p(p+1).
    let twice_u = twice_rank_sum - p * (p + 1);
    Ok(twice_u as f64 / (2 * p * q) as f64)
}

/// Mean squared error between scores and 0/1 targets.
pub fn loss_mse(scores: &[f64], targets: &[f64]) -> Result<f64, MetricError> {
    check(scores, targets.len())?;
    Ok(scores.iter().zip(targets).map(|(s, t)| (s - t) * (s - t)).sum::<f64>() / scores.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub accuracy: f64,
    pub loss: f64,
    pub f1: f64,
    /// `None` when the evaluated set holds a single class.
    pub auc_roc: Option<f64>,
    pub confusion: Confusion,
}

pub fn evaluate(scores: &[f64], labels: &[Label]) -> Result<EvalResult, MetricError> {
    let c = confusion(scores, labels, DEFAULT_THRESHOLD)?;
    let targets: Vec<f64> = labels.iter().map(|l| l.target()).collect();
    let auc = match auc_roc(scores, labels) {
        Ok(a) => Some(a),
        Err(MetricError::SingleClass) => None,
        Err(e) => return Err(e),
    };
    Ok(EvalResult {
        accuracy: (c.tp + c.tn) as f64 / c.total() as f64,
        loss: loss_mse(scores, &targets)?,
        f1: f1_from(&c),
        auc_roc: auc,
        confusion: c,
    })
}

/// Mean and population standard deviation of one field across runs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

/// Welford accumulator.
#[derive(Debug, Clone, Copy, Default)]
pub struct Running {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Running {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn stat(&self) -> Stat {
        if self.n == 0 {
            return Stat { mean: f64::NAN, std: f64::NAN };
        }
        Stat {
            mean: self.mean,
            std: (self.m2 / self.n as f64).max(0.0).sqrt(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateResult {
    pub runs: usize,
    pub accuracy: Stat,
    pub loss: Stat,
    pub f1: Stat,
    /// Over runs where AUC was defined; `None` if it never was.
    pub auc_roc: Option<Stat>,
}

pub fn aggregate_runs(results: &[EvalResult]) -> Result<AggregateResult, MetricError> {
    if results.is_empty() {
        return Err(MetricError::Empty);
    }
    let (mut acc, mut loss, mut f1, mut auc) = (Running::default(), Running::default(), Running::default(), Running::default());
    for r in results {
        acc.push(r.accuracy);
        loss.push(r.loss);
        f1.push(r.f1);
        if let Some(a) = r.auc_roc {
            auc.push(a);
        }
    }
    Ok(AggregateResult {
        runs: results.len(),
        accuracy: acc.stat(),
        loss: loss.stat(),
        f1: f1.stat(),
        auc_roc: (auc.count() > 0).then(|| auc.stat()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::CounterRng;
    use proptest::prelude::*;
    use Label::{Good as G, NotGood as N};

    fn pairwise_auc(scores: &[f64], labels: &[Label]) -> f64 {
        let mut sum = 0.0;
        let mut pairs = 0.0;
        for (i, li) in labels.iter().enumerate() {
            for (j, lj) in labels.iter().enumerate() {
                if li.is_good() && !lj.is_good() {
                    pairs += 1.0;
                    sum += if scores[i] > scores[j] {
                        1.0
                    } else if scores[i] == scores[j] {
                        0.5
                    } else {
                        0.0
                    };
                }
            }
        }
        sum / pairs
    }

    fn random_instance(rng: &mut CounterRng, n: usize, levels: u64) -> (Vec<f64>, Vec<Label>) {
        loop {
            let scores: Vec<f64> = (0..n).map(|_| rng.below(levels) as f64 / levels as f64).collect();
            let labels: Vec<Label> = (0..n).map(|_| if rng.below(2) == 0 { G } else { N }).collect();
            if labels.contains(&G) && labels.contains(&N) {
                return (scores, labels);
            }
        }
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&[0.9, 0.1], &[G, N], 0.5).unwrap(), 1.0);
        assert_eq!(accuracy(&[0.9, 0.9], &[G, N], 0.5).unwrap(), 0.5);
        assert_eq!(accuracy(&[0.5], &[G], 0.5).unwrap(), 1.0);
        assert_eq!(accuracy(&[], &[], 0.5), Err(MetricError::Empty));
        assert!(matches!(accuracy(&[0.1], &[], 0.5), Err(MetricError::LengthMismatch { .. })));
    }

    #[test]
    fn accuracy_matches_elementwise_count() {
        let mut rng = CounterRng::new(5);
        let scores: Vec<f64> = (0..1000).map(|_| rng.next_f64()).collect();
        let labels: Vec<Label> = (0..1000).map(|_| if rng.next_f64() < 0.4 { G } else { N }).collect();
        let mut hits = 0;
        for i in 0..1000 {
            let pred_good = scores[i] >= 0.5;
            if pred_good == (labels[i] == G) {
                hits += 1;
            }
        }
        assert_eq!(accuracy(&scores, &labels, 0.5).unwrap(), hits as f64 / 1000.0);
    }

    #[test]
    fn f1_examples() {
        // predictions G,G,N,N against labels G,N,G,N
        let scores = [0.9, 0.9, 0.1, 0.1];
        let c = confusion(&scores, &[G, N, G, N], 0.5).unwrap();
        assert_eq!((c.tp, c.fp, c.tn, c.fn_), (1, 1, 1, 1));
        assert_eq!(f1(&scores, &[G, N, G, N], 0.5).unwrap(), 0.5);
        assert_eq!(f1(&[0.9, 0.1], &[G, N], 0.5).unwrap(), 1.0);
        assert_eq!(f1(&[0.1, 0.2], &[G, G], 0.5).unwrap(), 0.0);
        assert_eq!(f1(&[0.1, 0.2], &[N, N], 0.5).unwrap(), 0.0);
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc_roc(&[0.9, 0.8, 0.3, 0.2], &[G, G, N, N]).unwrap(), 1.0);
        assert_eq!(auc_roc(&[0.8, 0.8, 0.3, 0.3], &[G, N, G, N]).unwrap(), 0.5);
        assert_eq!(auc_roc(&[0.1, 0.2], &[G, G]), Err(MetricError::SingleClass));
    }

    #[test]
    fn auc_matches_pairwise_on_random_instances() {
        let mut rng = CounterRng::new(99);
        for k in 0..1000 {
            let n = 2 + rng.below(19) as usize;
            let (s, l) = random_instance(&mut rng, n, if k % 2 == 0 { 5 } else { 1 << 30 });
            let a = auc_roc(&s, &l).unwrap();
            let b = pairwise_auc(&s, &l);
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn loss_examples() {
        assert_eq!(loss_mse(&[1.0, 0.0], &[1.0, 0.0]).unwrap(), 0.0);
        assert_eq!(loss_mse(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 1.0);
        assert_eq!(loss_mse(&[0.5], &[1.0]).unwrap(), 0.25);
        assert_eq!(loss_mse(&[], &[]), Err(MetricError::Empty));
    }

    #[test]
    fn evaluate_confusion_consistent() {
        let r = evaluate(&[0.9, 0.6, 0.2, 0.4, 0.5], &[G, N, N, G, G]).unwrap();
        assert_eq!(r.confusion.total(), 5);
        assert_eq!(r.accuracy, (r.confusion.tp + r.confusion.tn) as f64 / 5.0);
        let single = evaluate(&[0.9], &[G]).unwrap();
        assert_eq!(single.auc_roc, None);
    }

    fn result(acc: f64) -> EvalResult {
        EvalResult {
            accuracy: acc,
            loss: 1.0 - acc,
            f1: acc,
            auc_roc: Some(acc),
            confusion: Confusion::default(),
        }
    }

    #[test]
    fn aggregate_examples() {
        let a = aggregate_runs(&[result(0.9), result(0.8)]).unwrap();
        assert!((a.accuracy.mean - 0.85).abs() < 1e-15);
        let one = aggregate_runs(&[result(0.7)]).unwrap();
        assert_eq!(one.accuracy, Stat { mean: 0.7, std: 0.0 });
        assert_eq!(aggregate_runs(&[]), Err(MetricError::Empty));
    }

    #[test]
    fn aggregate_matches_two_pass() {
        let mut rng = CounterRng::new(4);
        let rs: Vec<EvalResult> = (0..50).map(|_| result(rng.uniform(0.6, 1.0))).collect();
        let xs: Vec<f64> = rs.iter().map(|r| r.accuracy).collect();
        let mean = xs.iter().sum::<f64>() / 50.0;
        let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 50.0).sqrt();
        let a = aggregate_runs(&rs).unwrap();
        assert!((a.accuracy.mean - mean).abs() < 1e-12);
        assert!((a.accuracy.std - std).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn auc_invariant_under_cube(seed in any::<u64>(), n in 2usize..40) {
            let mut rng = CounterRng::new(seed);
            let (s, l) = random_instance(&mut rng, n, 7);
            let s: Vec<f64> = s.iter().map(|x| x - 0.5).collect();
            let cubed: Vec<f64> = s.iter().map(|x| x * x * x).collect();
            prop_assert_eq!(auc_roc(&s, &l).unwrap(), auc_roc(&cubed, &l).unwrap());
        }

        #[test]
        fn rank_sum_equals_pairwise(seed in any::<u64>(), n in 2usize..60) {
            let mut rng = CounterRng::new(seed);
            let (s, l) = random_instance(&mut rng, n, 9);
            prop_assert!((auc_roc(&s, &l).unwrap() - pairwise_auc(&s, &l)).abs() <= 1e-12);
        }

        #[test]
        fn label_swap_symmetry(seed in any::<u64>(), n in 2usize..40) {
            let mut rng = CounterRng::new(seed);
            // Scores avoid the threshold so 1 - s never lands on a tie.
            let (s, l) = random_instance(&mut rng, n, 1 << 20);
            let s: Vec<f64> = s.iter().map(|x| if *x == 0.5 { 0.25 } else { *x }).collect();
            let swapped: Vec<Label> = l.iter().map(|x| if *x == G { N } else { G }).collect();
            let flipped: Vec<f64> = s.iter().map(|x| 1.0 - x).collect();
            prop_assert_eq!(accuracy(&s, &l, 0.5).unwrap(), accuracy(&flipped, &swapped, 0.5).unwrap());
            prop_assert!((auc_roc(&s, &l).unwrap() - auc_roc(&flipped, &swapped).unwrap()).abs() <= 1e-12);
        }

        #[test]
        fn metrics_bounded(seed in any::<u64>(), n in 2usize..40) {
            let mut rng = CounterRng::new(seed);
            let (s, l) = random_instance(&mut rng, n, 11);
            let r = evaluate(&s, &l).unwrap();
            for v in [r.accuracy, r.f1, r.auc_roc.unwrap(), r.loss] {
                prop_assert!((0.0..=1.0).contains(&v));
            }
        }
    }
}
