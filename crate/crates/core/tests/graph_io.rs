use std::fs;

use sharp_core::graph::{
    load_graph, load_splits, save_graph, split_from_published, split_nodes, Graph, PlantedPartition, PublishedSplit,
};
use sharp_core::{ErrorKind, Matrix};

fn sample() -> Graph {
    PlantedPartition { nodes: 30, classes: 3, features: 4, p_in: 0.3, p_out: 0.05, signal: 1.0 }
        .generate(1)
        .unwrap()
}

#[test]
fn save_and_load_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let x = Matrix::from_rows(&[[0.5, -1.0], [2.0, 0.25], [0.0, 3.0]]);
    let graph = Graph::new(x, vec![(0, 1), (1, 2)], vec![Some(1), None, Some(0)], 2).unwrap();
    let split = PublishedSplit { train: vec![0], val: vec![1], test: vec![2] };
    save_graph(&graph, dir.path(), Some(&split)).unwrap();
    let back = load_graph(dir.path()).unwrap();
    assert_eq!(back.features(), graph.features());
    assert_eq!(back.edges(), graph.edges());
    assert_eq!(back.labels(), graph.labels());
    assert_eq!(back.num_classes(), 2);
    assert_eq!(load_splits(dir.path()).unwrap(), Some(split));
}

#[test]
fn missing_and_malformed_files_are_data_errors() {
    let graph = sample();
    for (file, edit) in [
        ("features.bin", None),
        ("edges.csv", None),
        ("labels.csv", None),
        ("meta.json", None),
        ("edges.csv", Some("0,999\n")),
        ("edges.csv", Some("2,1\n")),
        ("labels.csv", Some("0\n1\n")),
        ("features.bin", Some("abc")),
        ("meta.json", Some("{")),
    ] {
        let dir = tempfile::tempdir().unwrap();
        save_graph(&graph, dir.path(), None).unwrap();
        let p = dir.path().join(file);
        match edit {
            None => fs::remove_file(&p).unwrap(),
            Some(text) => fs::write(&p, text).unwrap(),
        }
        let e = load_graph(dir.path()).unwrap_err();
        assert_eq!(e.kind(), ErrorKind::Data, "{file} {edit:?}: {e}");
    }
    let empty = tempfile::tempdir().unwrap();
    assert_eq!(load_splits(empty.path()).unwrap(), None);
}

#[test]
fn random_split_partitions_nodes() {
    let graph = sample();
    let s = split_nodes(&graph, 0.6, 0.2, 0.3, 7).unwrap();
    s.validate(30).unwrap();
    let mut all: Vec<usize> =
        [&s.train_labelled, &s.train_unlabelled, &s.val, &s.test].into_iter().flatten().copied().collect();
    all.sort_unstable();
    assert_eq!(all, (0..30).collect::<Vec<_>>());
    assert_eq!(s.train_len(), 18);
    assert_eq!(s.val.len(), 6);
    assert_eq!(s, split_nodes(&graph, 0.6, 0.2, 0.3, 7).unwrap());
    assert_ne!(s.test, split_nodes(&graph, 0.6, 0.2, 0.3, 8).unwrap().test);

    let none = split_nodes(&graph, 0.6, 0.2, 0.0, 7).unwrap();
    assert!(none.train_unlabelled.is_empty());
    assert_eq!(none.test, s.test);
    for (t, v, r) in [(0.0, 0.2, 0.3), (0.9, 0.2, 0.3), (0.6, 0.2, 1.0), (0.6, 0.2, -0.1)] {
        assert_eq!(split_nodes(&graph, t, v, r, 0).unwrap_err().kind(), ErrorKind::Config);
    }
}

#[test]
fn published_split_is_respected() {
    let graph = sample();
    let published = PublishedSplit { train: (0..10).collect(), val: (10..20).collect(), test: (20..30).collect() };
    let s = split_from_published(&graph, &published, 0.5, 3).unwrap();
    assert_eq!(s.val, published.val);
    assert_eq!(s.test, published.test);
    let mut train = [s.train_labelled.clone(), s.train_unlabelled.clone()].concat();
    train.sort_unstable();
    assert_eq!(train, published.train);
    assert_eq!(s.train_unlabelled.len(), 5);

    let overlapping = PublishedSplit { train: vec![0, 1], val: vec![1], test: vec![2] };
    assert!(split_from_published(&graph, &overlapping, 0.0, 0).is_err());
}
