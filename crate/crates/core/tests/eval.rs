mod common;

use rand::Rng;
use sharp_core::encoders::{EncoderKind, Model};
use sharp_core::eval::{
    accuracy, embeddings_csv, f1_scores, hard_negative_rows, probe_objective, read_embeddings_csv, LogisticProbe,
    ProbeConfig,
};
use sharp_core::graph::PlantedPartition;
use sharp_core::pipeline::TrainConfig;
use sharp_core::{rng as streams, Matrix};

use common::{random_labels, random_matrix, rng};

#[test]
fn separable_blobs_are_classified_perfectly() {
    let mut g = rng(1);
    let n = 60;
    let labels: Vec<usize> = (0..n).map(|i| i % 3).collect();
    let data = labels
        .iter()
        .flat_map(|&c| {
            let centre = [(c as f64) * 10.0, -(c as f64) * 10.0];
            centre.map(|v| v + g.gen_range(-0.5..0.5))
        })
        .collect();
    let x = Matrix::from_vec(n, 2, data).unwrap();
    let probe = LogisticProbe::fit(&x, &labels, 3, ProbeConfig::default()).unwrap();
    assert_eq!(accuracy(&probe.predict(&x).unwrap(), &labels), 1.0);
    assert!(probe.history.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn identical_embeddings_predict_majority_class() {
    let x = Matrix::filled(7, 4, 0.25);
    let labels = [1, 1, 1, 1, 0, 2, 0];
    let probe = LogisticProbe::fit(&x, &labels, 3, ProbeConfig::default()).unwrap();
    assert!(probe.predict(&x).unwrap().iter().all(|&p| p == 1));
}

#[test]
fn probe_gradient_at_zero_matches_finite_differences() {
    let mut g = rng(2);
    let (n, d, c) = (15, 4, 3);
    let x = random_matrix(&mut g, n, d);
    let y = random_labels(&mut g, n, c);
    let l2 = 0.1;
    let w = Matrix::zeros(d, c);
    let b = vec![0.0; c];
    let (_, gw, gb) = probe_objective(&x, &y, &w, &b, l2).unwrap();
    let h = 1e-6;
    for k in 0..w.len() {
        let (mut up, mut dn) = (w.clone(), w.clone());
        up.as_mut_slice()[k] += h;
        dn.as_mut_slice()[k] -= h;
        let num = (probe_objective(&x, &y, &up, &b, l2).unwrap().0 - probe_objective(&x, &y, &dn, &b, l2).unwrap().0)
            / (2.0 * h);
        assert!((num - gw.as_slice()[k]).abs() < 1e-6, "w[{k}]: {num} vs {}", gw.as_slice()[k]);
    }
    for k in 0..c {
        let (mut up, mut dn) = (b.clone(), b.clone());
        up[k] += h;
        dn[k] -= h;
        let num = (probe_objective(&x, &y, &w, &up, l2).unwrap().0 - probe_objective(&x, &y, &w, &dn, l2).unwrap().0)
            / (2.0 * h);
        assert!((num - gb[k]).abs() < 1e-6);
    }
}

#[test]
fn f1_worked_example() {
    let s = f1_scores(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap();
    assert_eq!(s.micro, 0.75);
    assert!((s.per_class[1].f1 - 0.8).abs() < 1e-12);
    assert!((s.per_class[0].f1 - 2.0 / 3.0).abs() < 1e-12);
    assert!((s.per_class[0].f1 - 0.66667).abs() < 1e-5);
    assert!((s.macro_ - (0.8 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
}

#[test]
fn f1_agrees_with_confusion_matrix() {
    for seed in 0..50 {
        let mut g = rng(seed);
        let n = g.gen_range(1..40);
        let c = g.gen_range(1..5);
        let p = random_labels(&mut g, n, c);
        let t = random_labels(&mut g, n, c);
        let mut cm = vec![vec![0usize; c]; c];
        for (&a, &b) in p.iter().zip(&t) {
            cm[b][a] += 1;
        }
        let s = f1_scores(&p, &t).unwrap();
        let mut f1s = Vec::new();
        for k in 0..c {
            let tp = cm[k][k] as f64;
            let predicted: usize = (0..c).map(|r| cm[r][k]).sum();
            let actual: usize = cm[k].iter().sum();
            if predicted + actual == 0 {
                continue;
            }
            f1s.push(2.0 * tp / (predicted + actual) as f64);
        }
        let macro_ = f1s.iter().sum::<f64>() / f1s.len() as f64;
        assert!((s.macro_ - macro_).abs() < 1e-12, "seed {seed}");
        let diag: usize = (0..c).map(|k| cm[k][k]).sum();
        assert_eq!(s.micro, diag as f64 / n as f64);
    }
}

#[test]
fn embeddings_csv_round_trip() {
    let graph = PlantedPartition { nodes: 25, classes: 3, features: 6, p_in: 0.3, p_out: 0.05, signal: 1.0 }
        .generate(4)
        .unwrap();
    let h = random_matrix(&mut rng(4), 25, 5);
    let text = embeddings_csv(&graph, &h).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 26);
    assert!(lines.iter().all(|l| l.split(',').count() == 5 + 3));
    let table = read_embeddings_csv(&text).unwrap();
    assert_eq!(table.node_ids, (0..25).collect::<Vec<_>>());
    assert_eq!(table.degrees, graph.degrees().as_slice());
    assert_eq!(table.labels, graph.labels());
    assert_eq!(table.embeddings, h);
    assert!(read_embeddings_csv("id,x\n1,2\n").is_err());
}

fn small_model(graph_features: usize, seed: u64) -> Model {
    let cfg = TrainConfig { hidden_dim: 8, projector_dim: 8, encoder: EncoderKind::Gcn, ..TrainConfig::default() };
    Model::init(cfg.model_spec(graph_features, 2), &mut streams::stream(seed, &[1])).unwrap()
}

#[test]
fn hard_negative_export_shape() {
    let graph = PlantedPartition { nodes: 30, classes: 2, features: 5, p_in: 0.3, p_out: 0.05, signal: 1.0 }
        .generate(5)
        .unwrap();
    let labels = graph.complete_labels().unwrap();
    let model = small_model(5, 5);
    let k = 4;
    let rows = hard_negative_rows(&model, &graph, &labels, k, 0.4, 3, 11).unwrap();
    let expected: usize = labels
        .iter()
        .map(|&y| labels.iter().filter(|&&o| o != y).count().min(k))
        .sum();
    assert_eq!(rows.len(), expected);
    let max_degree = graph.degrees().max();
    for r in &rows {
        assert_ne!(labels[r.anchor], labels[r.negative]);
        assert!(r.negative_degree <= max_degree && r.baseline_degree <= max_degree);
        assert_eq!(r.negative_degree, graph.degrees().get(r.negative));
        assert_eq!(r.epoch, 3);
        assert!(r.rank >= 1 && r.rank <= k);
    }
    for pair in rows.windows(2) {
        if pair[0].anchor == pair[1].anchor {
            assert!(pair[0].similarity >= pair[1].similarity);
        }
    }

    let single = vec![0; labels.len()];
    assert!(hard_negative_rows(&model, &graph, &single, k, 0.4, 0, 11).unwrap().is_empty());
    assert!(hard_negative_rows(&model, &graph, &labels, 0, 0.4, 0, 11).is_err());
}
