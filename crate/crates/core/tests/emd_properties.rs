use das_core::emd::{emd_capped, emd_exact};
use ndarray::{Array2, Axis};
use proptest::prelude::*;

fn brute_force(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    fn permutations(k: usize) -> Vec<Vec<usize>> {
        if k == 0 {
            return vec![vec![]];
        }
        let mut out = Vec::new();
        for p in permutations(k - 1) {
            for pos in 0..=p.len() {
                let mut q = p.clone();
                q.insert(pos, k - 1);
                out.push(q);
            }
        }
        out
    }
    let n = a.nrows();
    let perms = permutations(n);
    assert_eq!(perms.len(), (1..=n).product::<usize>());
    perms
        .iter()
        .map(|p| {
            (0..n)
                .map(|i| a.row(i).iter().zip(b.row(p[i]).iter()).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
                .sum::<f64>()
                / n as f64
        })
        .fold(f64::INFINITY, f64::min)
}

fn cloud(n: usize, d: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-5.0f64..5.0, n * d).prop_map(move |v| Array2::from_shape_vec((n, d), v).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn four_point_sets_match_brute_force(a in cloud(4, 2), b in cloud(4, 2)) {
        let e = emd_exact(a.view(), b.view()).unwrap();
        prop_assert!((e - brute_force(&a, &b)).abs() < 1e-12);
    }

    #[test]
    fn metric_axioms_on_triples(a in cloud(6, 3), b in cloud(6, 3), c in cloud(6, 3)) {
        let ab = emd_exact(a.view(), b.view()).unwrap();
        let ba = emd_exact(b.view(), a.view()).unwrap();
        let bc = emd_exact(b.view(), c.view()).unwrap();
        let ac = emd_exact(a.view(), c.view()).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ac <= ab + bc + 1e-9);
        prop_assert_eq!(emd_exact(a.view(), a.view()).unwrap(), 0.0);
    }

    #[test]
    fn row_order_does_not_matter(a in cloud(7, 2), b in cloud(7, 2), shift in 1usize..7) {
        let idx: Vec<usize> = (0..7).map(|i| (i + shift) % 7).collect();
        let pa = a.select(Axis(0), &idx);
        let e1 = emd_exact(a.view(), b.view()).unwrap();
        let e2 = emd_exact(pa.view(), b.view()).unwrap();
        prop_assert!((e1 - e2).abs() < 1e-12);
    }

    #[test]
    fn distinct_multisets_are_apart(a in cloud(5, 2), dx in 0.01f64..1.0) {
        let mut b = a.clone();
        b[(0, 0)] += dx;
        prop_assert!(emd_exact(a.view(), b.view()).unwrap() > 0.0);
    }
}

#[test]
fn translation_moves_by_the_offset() {
    let a = Array2::from_shape_fn((30, 2), |(i, j)| ((i * 7 + j * 3) % 11) as f64);
    let b = a.mapv(|v| v) + &ndarray::array![3.0, 4.0];
    assert!((emd_exact(a.view(), b.view()).unwrap() - 5.0).abs() < 1e-12);
}

#[test]
fn capped_emd_subsamples_large_sets() {
    let a = Array2::from_shape_fn((1500, 2), |(i, j)| (i as f64 * 0.37 + j as f64).sin());
    let e = emd_capped(a.view(), a.view(), 4).unwrap();
    assert!(e.is_finite() && e >= 0.0);
    assert_eq!(e, emd_capped(a.view(), a.view(), 4).unwrap());
    assert!(emd_exact(a.view(), a.view()).is_err());
}
