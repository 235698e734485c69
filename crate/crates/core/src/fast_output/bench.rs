use std::fmt::Write as _;
use std::time::Instant;

use ndarray::ArrayView1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::loss::{log_taylor_from_stats, log_taylor_softmax_loss, LogitsVector, TargetIndex};

use super::{DenseOutputLayer, FactoredOutputLayer, StepPartials};

pub const BENCH_CSV_HEADER: &str = "impl,D,d,step_us_p50,step_us_p90,steps";

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub implementation: &'static str,
    pub num_classes: usize,
    pub input_dim: usize,
    pub step_us_p50: f64,
    pub step_us_p90: f64,
    pub steps: usize,
}

const WARMUP: usize = 5;
const LR: f64 = 0.01;

fn percentile(sorted: &[f64], p: f64) -> f64 {
    let idx = ((sorted.len() - 1) as f64 * p).round() as usize;
    sorted[idx]
}

fn summarize(implementation: &'static str, num_classes: usize, d: usize, mut us: Vec<f64>) -> BenchRow {
    us.sort_by(f64::total_cmp);
    BenchRow {
        implementation,
        num_classes,
        input_dim: d,
        step_us_p50: percentile(&us, 0.5),
        step_us_p90: percentile(&us, 0.9),
        steps: us.len(),
    }
}

/// Times one log-Taylor training step (statistics, loss, update) per example for
/// the factored and the dense layer at each class count.
pub fn bench(class_counts: &[usize], d: usize, steps: usize, seed: u64) -> Vec<BenchRow> {
    let mut rows = Vec::new();
    for &num_classes in class_counts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ num_classes as u64);
        let inputs: Vec<(Vec<f64>, usize)> = (0..steps + WARMUP)
            .map(|_| {
                let h = (0..d).map(|_| rng.random_range(-1.0..1.0) / (d as f64).sqrt()).collect();
                (h, rng.random_range(0..num_classes))
            })
            .collect();

        let mut fast = FactoredOutputLayer::zeros(num_classes, d, true);
        let mut times = Vec::with_capacity(steps);
        for (i, (h, c)) in inputs.iter().enumerate() {
            let start = Instant::now();
            let stats = fast.forward_stats(h, *c).expect("shapes agree");
            let (_, partials) = log_taylor_from_stats(&stats, num_classes);
            fast.sgd_step(&StepPartials { partials, class: *c, input: h }, LR)
                .expect("finite step");
            if i >= WARMUP {
                times.push(start.elapsed().as_secs_f64() * 1e6);
            }
        }
        drop(fast);
        rows.push(summarize("factored", num_classes, d, times));

        let mut dense = DenseOutputLayer::zeros(num_classes, d);
        let mut times = Vec::with_capacity(steps);
        for (i, (h, c)) in inputs.iter().enumerate() {
            let start = Instant::now();
            let o = dense.forward(h).expect("shapes agree");
            let o = LogitsVector::new(o.to_vec()).expect("finite logits");
            let lg = log_taylor_softmax_loss(&o, TargetIndex::new(*c, num_classes).expect("in range"));
            dense
                .sgd_step_dense(h, ArrayView1::from(&lg.grad_o), LR)
                .expect("shapes agree");
            if i >= WARMUP {
                times.push(start.elapsed().as_secs_f64() * 1e6);
            }
        }
        rows.push(summarize("dense", num_classes, d, times));
    }
    rows
}

pub fn bench_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(BENCH_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{:.3},{:.3},{}",
            r.implementation, r.num_classes, r.input_dim, r.step_us_p50, r.step_us_p90, r.steps
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_layout() {
        let rows = bench(&[50, 200], 4, 10, 1);
        assert_eq!(rows.len(), 4);
        let csv = bench_csv(&rows);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some(BENCH_CSV_HEADER));
        let first: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(first[0], "factored");
        assert_eq!(first[1], "50");
        assert_eq!(first[5], "10");
        assert!(rows.iter().all(|r| r.step_us_p50 <= r.step_us_p90));
    }
}
