use orthoseg::data::{read_pnm, CLASS_NAMES};
use orthoseg::eval::{agreement_mask, evaluate, write_report};
use orthoseg::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Pixel-by-pixel counting with no shared code path.
fn naive(pred: &[u8], truth: &[u8], classes: usize) -> (Vec<Vec<u64>>, Vec<f64>, f64) {
    let mut conf = vec![vec![0u64; classes]; classes];
    for i in 0..pred.len() {
        conf[truth[i] as usize][pred[i] as usize] += 1;
    }
    let f1 = (0..classes as u8)
        .map(|c| {
            let tp = pred
                .iter()
                .zip(truth)
                .filter(|(p, t)| **p == c && **t == c)
                .count() as f64;
            let fp = pred
                .iter()
                .zip(truth)
                .filter(|(p, t)| **p == c && **t != c)
                .count() as f64;
            let fn_ = pred
                .iter()
                .zip(truth)
                .filter(|(p, t)| **p != c && **t == c)
                .count() as f64;
            if tp + fp + fn_ == 0.0 {
                0.0
            } else {
                2.0 * tp / (2.0 * tp + fp + fn_)
            }
        })
        .collect();
    let oa = pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / pred.len() as f64;
    (conf, f1, oa)
}

#[test]
fn hand_computed_binary_case() {
    let m = evaluate(&[0, 1, 1, 1], &[0, 0, 1, 1], 2).unwrap();
    assert_eq!(m.confusion, vec![vec![1, 1], vec![0, 2]]);
    assert!((m.f1[0] - 2.0 / 3.0).abs() < 1e-12);
    assert!((m.f1[1] - 0.8).abs() < 1e-12);
    assert_eq!(m.overall_accuracy, 0.75);
}

#[test]
fn perfect_prediction() {
    let labels: Vec<u8> = (0..60).map(|i| (i % 6) as u8).collect();
    let m = evaluate(&labels, &labels, 6).unwrap();
    assert!(m.f1.iter().all(|&f| f == 1.0));
    assert_eq!(m.overall_accuracy, 1.0);
}

#[test]
fn absent_class_reads_zero_with_flag() {
    let m = evaluate(&[0, 1, 0], &[0, 1, 1], 3).unwrap();
    assert_eq!(m.f1[2], 0.0);
    assert_eq!(m.absent, vec![false, false, true]);
    assert!(m.to_text().lines().nth(2).unwrap().contains("(absent)"));
}

#[test]
fn matches_naive_oracle_on_random_maps() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..20 {
        let pred: Vec<u8> = (0..10_000).map(|_| rng.gen_range(0..6)).collect();
        let truth: Vec<u8> = (0..10_000).map(|_| rng.gen_range(0..6)).collect();
        let m = evaluate(&pred, &truth, 6).unwrap();
        let (conf, f1, oa) = naive(&pred, &truth, 6);
        assert_eq!(m.confusion, conf);
        assert_eq!(m.f1, f1);
        assert_eq!(m.overall_accuracy, oa);
    }
}

#[test]
fn bad_inputs_are_usage_errors() {
    assert!(matches!(evaluate(&[0, 1], &[0], 2), Err(Error::Usage(_))));
    assert!(matches!(
        evaluate(&[0, 2], &[0, 1], 2),
        Err(Error::Usage(_))
    ));
}

#[test]
fn csv_and_text_agree() {
    let m = evaluate(&[0, 1, 2, 3, 4, 5, 5, 0], &[0, 1, 2, 3, 4, 5, 4, 1], 6).unwrap();
    let header = m.csv_header();
    let cols: Vec<&str> = header.split(',').collect();
    let expected: Vec<String> = CLASS_NAMES.iter().map(|c| format!("f1_{c}")).collect();
    assert_eq!(&cols[..6], &expected[..]);
    assert_eq!(cols[6], "overall_accuracy_pct");
    let values: Vec<f64> = m.csv_row().split(',').map(|v| v.parse().unwrap()).collect();
    let text = m.to_text();
    for (c, line) in text.lines().take(6).enumerate() {
        let v: f64 = line
            .split("F1 ")
            .nth(1)
            .unwrap()
            .split_whitespace()
            .next()
            .unwrap()
            .parse()
            .unwrap();
        assert_eq!(v, values[c]);
    }
    let oa: f64 = text
        .lines()
        .nth(6)
        .unwrap()
        .split_whitespace()
        .nth(2)
        .unwrap()
        .parse()
        .unwrap();
    assert_eq!(oa, values[6]);
    assert_eq!(values[6], 75.0);
}

#[test]
fn identical_maps_give_all_correct_agreement() {
    let labels = vec![3u8; 12];
    assert!(agreement_mask(&labels, &labels)
        .unwrap()
        .iter()
        .all(|&v| v == 255));
    let dir = tempfile::tempdir().unwrap();
    let csv_path = dir.path().join("run.csv");
    let m = evaluate(&labels, &labels, 6).unwrap();
    write_report(&csv_path, &m, &labels, &labels, 3, 4).unwrap();
    let mask = read_pnm(&dir.path().join("run.agreement.pgm")).unwrap();
    assert_eq!((mask.height, mask.width), (3, 4));
    assert!(mask.planes[0].iter().all(|&v| v == 255));
    assert!(dir.path().join("run.pred.ppm").exists());
    let csv = std::fs::read_to_string(dir.path().join("run.csv")).unwrap();
    assert!(csv.lines().nth(1).unwrap().ends_with("100.000000"));
    assert!(dir.path().join("run.txt").exists());
}
