mod common;

use common::*;
use nalgebra::DMatrix;
use ntclust::metrics::{cluster_accuracy, coherence, conditioning, knn_classify, nmi};
use ntclust::Partition;
use proptest::prelude::*;

fn part(v: &[usize]) -> Partition {
    Partition::new(v.to_vec()).unwrap()
}

fn labels(n: usize) -> impl Strategy<Value = Vec<usize>> {
    prop::collection::vec(1usize..5, n)
}

proptest! {
    #[test]
    fn scores_match_oracles_and_are_symmetric((a, b) in (2usize..9).prop_flat_map(|n| (labels(n), labels(n)))) {
        let (pa, pb) = (part(&a), part(&b));
        let ca = cluster_accuracy(&pa, &pb).unwrap();
        prop_assert!((ca - accuracy_oracle(&a, &b)).abs() < 1e-12);
        let n_ab = nmi(&pa, &pb).unwrap();
        prop_assert!((n_ab - nmi_oracle(&a, &b)).abs() < 1e-12);
        prop_assert!((n_ab - nmi(&pb, &pa).unwrap()).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&ca) && (0.0..=1.0).contains(&n_ab));
    }

    #[test]
    fn scores_ignore_relabeling(a in labels(8), b in labels(8), shift in 1usize..7) {
        let renamed: Vec<usize> = a.iter().map(|&l| 10 * ((l + shift) % 5) + 3).collect();
        let (pa, pr, pb) = (part(&a), part(&renamed), part(&b));
        prop_assert!((cluster_accuracy(&pa, &pb).unwrap() - cluster_accuracy(&pr, &pb).unwrap()).abs() < 1e-12);
        prop_assert!((nmi(&pa, &pb).unwrap() - nmi(&pr, &pb).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn constant_prediction_scores_the_largest_cluster(b in labels(10)) {
        let ca = cluster_accuracy(&part(&[7; 10]), &part(&b)).unwrap();
        let largest = (1..5).map(|l| b.iter().filter(|&&x| x == l).count()).max().unwrap();
        prop_assert!(ca >= largest as f64 / 10.0 - 1e-12);
    }

    #[test]
    fn conditioning_ignores_scale(seed in 0u64..1000, c in prop_oneof![-5.0f64..-0.1, 0.1f64..5.0]) {
        let a = gauss_matrix(&mut rng(seed), 4, 3, 1.0);
        let k = conditioning(&a).unwrap();
        prop_assert!(((conditioning(&(&a * c)).unwrap() - k) / k).abs() < 1e-10);
    }

    #[test]
    fn coherence_ignores_row_scale(seed in 0u64..1000) {
        let mut r = rng(seed);
        let a = gauss_matrix(&mut r, 4, 3, 1.0);
        let scales = gauss_vec(&mut r, 4, 1.0);
        let mut b = a.clone();
        for i in 0..4 {
            b.row_mut(i).scale_mut(scales[i].abs() + 0.1);
        }
        let mu = coherence(&a).unwrap();
        prop_assert!((0.0..=1.0).contains(&mu));
        prop_assert!((coherence(&b).unwrap() - mu).abs() < 1e-12);
    }
}

#[test]
fn conditioning_matches_gram_eigenvalues() {
    let a = gauss_matrix(&mut rng(21), 5, 3, 1.0);
    let eig = (a.transpose() * &a).symmetric_eigen().eigenvalues;
    let (lo, hi) = (eig.min(), eig.max());
    let expected = (hi / lo).sqrt();
    assert!((conditioning(&a).unwrap() - expected).abs() < 1e-10 * expected);
}

#[test]
fn parallel_rows_are_fully_coherent() {
    let a = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 0.5, 1.0, -2.0, 0.5]);
    assert!((coherence(&a).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn hand_entropy_example() {
    let (truth, pred) = ([1, 1, 2, 2], [1, 1, 2, 3]);
    let h_t = 2f64.ln();
    let h_p = -(0.5 * 0.5f64.ln() + 2.0 * 0.25 * 0.25f64.ln());
    let expected = h_t / (h_t * h_p).sqrt();
    assert!((nmi(&part(&pred), &part(&truth)).unwrap() - expected).abs() < 1e-12);
}

#[test]
fn knn_matches_distance_table() {
    // Three classes around (0,0), (5,0) and (0,5).
    let train = DMatrix::from_column_slice(
        2,
        6,
        &[0.0, 0.0, 0.5, 0.5, 5.0, 0.0, 5.5, 0.5, 0.0, 5.0, 0.5, 5.5],
    );
    let train_labels = part(&[1, 1, 2, 2, 3, 3]);
    let test = DMatrix::from_column_slice(2, 4, &[0.2, 0.1, 4.0, 1.0, 1.0, 4.0, 2.6, 2.4]);
    let brute = |k: usize| -> Vec<usize> {
        (0..test.ncols())
            .map(|j| {
                let mut d: Vec<(f64, usize)> = (0..6)
                    .map(|i| ((train.column(i) - test.column(j)).norm_squared(), i))
                    .collect();
                d.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)));
                let mut votes = [0usize; 4];
                for &(_, i) in &d[..k] {
                    votes[train_labels.labels()[i]] += 1;
                }
                (1..4)
                    .max_by_key(|&l| (votes[l], std::cmp::Reverse(l)))
                    .unwrap()
            })
            .collect()
    };
    for k in [1, 3] {
        let pred = knn_classify(&train, &train_labels, &test, k).unwrap();
        assert_eq!(pred.labels(), &brute(k)[..], "k={k}");
    }
    let single = knn_classify(&train.columns(2, 1).into_owned(), &part(&[9]), &test, 1).unwrap();
    assert_eq!(single.labels(), &[9, 9, 9, 9]);
}
