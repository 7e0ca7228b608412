use ndgrad::RngState;
use palmnet::classifiers::ScoreMatrix;
use palmnet::eval::{cmc, eer, probe_ranks, ScorePair};
use proptest::prelude::*;

/// Rank by sorting the whole row: score descending, class id ascending.
fn sorted_rank(classes: &[u32], row: &[f64], truth: u32) -> usize {
    let mut order: Vec<usize> = (0..classes.len()).collect();
    order.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(classes[a].cmp(&classes[b])));
    order.iter().position(|&k| classes[k] == truth).unwrap() + 1
}

/// Counts FAR and FRR by scanning every score at every threshold.
fn sweep_eer(genuine: &[f64], impostor: &[f64]) -> f64 {
    let mut ts: Vec<f64> = genuine.iter().chain(impostor).copied().collect();
    ts.sort_by(f64::total_cmp);
    ts.dedup();
    ts.push(f64::INFINITY);
    let rate = |t: f64| {
        let far = impostor.iter().filter(|&&v| v >= t).count() as f64 / impostor.len() as f64;
        let frr = genuine.iter().filter(|&&v| v < t).count() as f64 / genuine.len() as f64;
        (far, frr)
    };
    let curve: Vec<(f64, f64)> = ts.iter().map(|&t| rate(t)).collect();
    let k = curve.iter().position(|(a, r)| a - r <= 0.0).unwrap();
    if k == 0 || curve[k].0 == curve[k].1 {
        return 100.0 * curve[k].0;
    }
    let ((a0, r0), (a1, r1)) = (curve[k - 1], curve[k]);
    let lam = (a0 - r0) / ((a0 - r0) - (a1 - r1));
    100.0 * (a0 + lam * (a1 - a0))
}

fn matrix(probes: usize, classes: usize, quantized: bool, rng: &mut RngState) -> (ScoreMatrix, Vec<u32>) {
    let ids: Vec<u32> = (0..classes as u32).map(|c| 3 * c + 1).collect();
    let scores = (0..probes)
        .map(|_| {
            (0..classes)
                .map(|_| if quantized { rng.below(4) as f64 } else { rng.normal() })
                .collect()
        })
        .collect();
    let truth = (0..probes).map(|_| ids[rng.below(classes)]).collect();
    let m = ScoreMatrix {
        tag: "t".into(),
        classes: ids,
        probe_ids: (0..probes).map(|i| i.to_string()).collect(),
        scores,
    };
    (m, truth)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn ranks_match_full_sort(seed in any::<u64>(), quantized in any::<bool>()) {
        let mut rng = RngState::from_seed(seed);
        let (m, truth) = matrix(12, 10, quantized, &mut rng);
        let ranks = probe_ranks(&m, &truth).unwrap();
        for ((row, &t), &r) in m.scores.iter().zip(&truth).zip(&ranks) {
            prop_assert_eq!(r, sorted_rank(&m.classes, row, t));
        }
        let curve = cmc(&m, &truth).unwrap();
        for r in 1..=10 {
            let want = ranks.iter().filter(|&&k| k <= r).count() as f64 / 12.0;
            prop_assert_eq!(curve.at(r), want);
        }
        prop_assert!(curve.accuracy.windows(2).all(|w| w[0] <= w[1]));
        prop_assert_eq!(*curve.accuracy.last().unwrap(), 1.0);
    }

    #[test]
    fn eer_matches_brute_sweep(seed in any::<u64>(), ng in 1usize..30, ni in 1usize..60, quantized in any::<bool>()) {
        let mut rng = RngState::from_seed(seed);
        let draw = |rng: &mut RngState, shift: f64| if quantized { rng.below(6) as f64 } else { rng.normal() + shift };
        let g: Vec<f64> = (0..ng).map(|_| draw(&mut rng, 1.0)).collect();
        let i: Vec<f64> = (0..ni).map(|_| draw(&mut rng, 0.0)).collect();
        let got = eer(&ScorePair { genuine: g.clone(), impostor: i.clone() }).unwrap();
        prop_assert!((got - sweep_eer(&g, &i)).abs() < 1e-9);
        prop_assert!((0.0..=100.0).contains(&got));
    }
}

#[test]
fn eer_corner_cases() {
    let pair = |g: &[f64], i: &[f64]| ScorePair { genuine: g.to_vec(), impostor: i.to_vec() };
    assert_eq!(eer(&pair(&[2.0, 3.0], &[0.0, 1.0])).unwrap(), 0.0);
    assert_eq!(eer(&pair(&[0.0, 1.0], &[2.0, 3.0])).unwrap(), 100.0);
    assert_eq!(eer(&pair(&[1.0], &[1.0])).unwrap(), 50.0);
    assert!(eer(&pair(&[], &[1.0])).is_err());
}

#[test]
fn ties_resolve_to_the_smaller_class_id() {
    let m = ScoreMatrix {
        tag: "t".into(),
        classes: vec![2, 5, 9],
        probe_ids: vec!["a".into(), "b".into()],
        scores: vec![vec![0.5, 0.5, 0.1], vec![0.5, 0.5, 0.1]],
    };
    assert_eq!(probe_ranks(&m, &[2, 5]).unwrap(), vec![1, 2]);
}
