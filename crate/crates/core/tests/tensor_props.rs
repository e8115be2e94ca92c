mod common;

use common::*;
use phm_core::graph::{Graph, Var};
use phm_core::{Param, Result, Tensor};
use proptest::prelude::*;

fn tensor_strategy(shape: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let numel: usize = shape.iter().product();
    prop::collection::vec(-1.0f64..1.0, numel).prop_map(move |d| Tensor::new(shape.clone(), d).unwrap())
}

fn matrix(max: usize) -> impl Strategy<Value = Tensor> {
    (1..=max, 1..=max).prop_flat_map(|(r, c)| tensor_strategy(vec![r, c]))
}

fn check(params: &[&Tensor], build: impl Fn(&mut Graph, &[Var]) -> Result<Var>) -> f64 {
    let ps: Vec<Param> = params.iter().map(|t| Param::new((*t).clone())).collect();
    max_grad_rel_err(&ps, &|g| {
        let vars: Vec<Var> = ps.iter().map(|p| g.param(p)).collect();
        let out = build(g, &vars)?;
        if g.shape(out).is_empty() {
            Ok(out)
        } else {
            weighted_sum(g, out, 99)
        }
    })
}

const TOL: f64 = 1e-4;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn grad_matmul_transpose((a, b) in (1usize..4, 1usize..4, 1usize..4)
        .prop_flat_map(|(m, k, n)| (tensor_strategy(vec![m, k]), tensor_strategy(vec![k, n])))) {
        prop_assert!(check(&[&a, &b], |g, v| g.matmul(v[0], v[1])) <= TOL);
        prop_assert!(check(&[&a], |g, v| g.transpose(v[0])) <= TOL);
    }

    #[test]
    fn grad_kron(a in matrix(3), b in matrix(3)) {
        prop_assert!(check(&[&a, &b], |g, v| g.kron(v[0], v[1])) <= TOL);
    }

    #[test]
    fn grad_elementwise((a, b) in (1usize..4, 1usize..4)
        .prop_flat_map(|(r, c)| (tensor_strategy(vec![r, c]), tensor_strategy(vec![r, c])))) {
        prop_assert!(check(&[&a, &b], |g, v| g.add(v[0], v[1])) <= TOL);
        prop_assert!(check(&[&a, &b], |g, v| g.sub(v[0], v[1])) <= TOL);
        prop_assert!(check(&[&a, &b], |g, v| g.mul(v[0], v[1])) <= TOL);
        prop_assert!(check(&[&a], |g, v| g.scale(v[0], -1.7)) <= TOL);
        prop_assert!(check(&[&a], |g, v| g.sigmoid(v[0])) <= TOL);
        prop_assert!(check(&[&a], |g, v| g.tanh(v[0])) <= TOL);
        prop_assert!(check(&[&a], |g, v| g.sum(v[0])) <= TOL);
        prop_assert!(check(&[&a], |g, v| g.mean(v[0])) <= TOL);
        prop_assert!(check(&[&a], |g, v| g.mse(v[0], &b)) <= TOL);
    }

    #[test]
    fn grad_relu_away_from_kink(a in matrix(4).prop_filter("no kink", |t| t.data().iter().all(|v| v.abs() > 1e-3))) {
        prop_assert!(check(&[&a], |g, v| g.relu(v[0])) <= TOL);
    }

    #[test]
    fn grad_bias_and_norms((x, b, gamma) in (1usize..4, 2usize..5)
        .prop_flat_map(|(r, c)| (tensor_strategy(vec![r, c]), tensor_strategy(vec![c]), tensor_strategy(vec![c])))) {
        prop_assert!(check(&[&x, &b], |g, v| g.add_bias(v[0], v[1])) <= TOL);
        prop_assert!(check(&[&x, &gamma, &b], |g, v| g.layer_norm(v[0], v[1], v[2], 1e-5)) <= TOL);
    }

    #[test]
    fn grad_softmax_and_ce((x, targets) in (1usize..4, 2usize..5)
        .prop_flat_map(|(r, c)| (tensor_strategy(vec![r, c]), prop::collection::vec(0..c, r)))) {
        prop_assert!(check(&[&x], |g, v| g.softmax(v[0])) <= TOL);
        prop_assert!(check(&[&x], |g, v| g.cross_entropy(v[0], &targets)) <= TOL);
    }

    #[test]
    fn grad_causal_softmax(x in (1usize..5).prop_flat_map(|t| tensor_strategy(vec![t, t]))) {
        prop_assert!(check(&[&x], |g, v| g.softmax_causal(v[0])) <= TOL);
    }

    #[test]
    fn grad_structural((x, ids) in (2usize..5, 2usize..5)
        .prop_flat_map(|(r, c)| (tensor_strategy(vec![r, 2 * c]), prop::collection::vec(0..r, 1..6)))) {
        let (rows, cols) = (x.shape()[0], x.shape()[1]);
        prop_assert!(check(&[&x], |g, v| g.slice_cols(v[0], 1, cols - 1)) <= TOL);
        prop_assert!(check(&[&x], |g, v| g.slice_rows(v[0], 1, rows - 1)) <= TOL);
        let swapped = check(&[&x], |g, v| {
            let parts = g.split_lastdim(v[0], 2)?;
            g.concat_cols(&[parts[1], parts[0]])
        });
        prop_assert!(swapped <= TOL);
        let stacked = check(&[&x], |g, v| {
            let top = g.slice_rows(v[0], 0, 1)?;
            g.concat_rows(&[v[0], top])
        });
        prop_assert!(stacked <= TOL);
        prop_assert!(check(&[&x], |g, v| g.select(v[0], rows - 1)) <= TOL);
        prop_assert!(check(&[&x], |g, v| g.reshape(v[0], &[cols, rows])) <= TOL);
        prop_assert!(check(&[&x], |g, v| g.gather(v[0], &ids)) <= TOL);
    }

    #[test]
    fn grad_phm_implicit((a, s, x) in (1usize..4, 1usize..3, 1usize..3, 1usize..3)
        .prop_flat_map(|(n, p, q, b)| (
            tensor_strategy(vec![n, n, n]),
            tensor_strategy(vec![n, p, q]),
            tensor_strategy(vec![b, n * q]),
        ))) {
        prop_assert!(check(&[&a, &s, &x], |g, v| g.phm_implicit(v[0], v[1], v[2])) <= TOL);
    }
}

proptest! {
    #[test]
    fn concat_of_split_is_identity(x in (1usize..5, 1usize..5, 1usize..4)
        .prop_flat_map(|(r, w, ways)| (tensor_strategy(vec![r, w * ways]), Just(ways)))) {
        let (t, ways) = x;
        let mut g = Graph::new();
        let v = g.constant(t.clone());
        let parts = g.split_lastdim(v, ways).unwrap();
        prop_assert_eq!(parts.len(), ways);
        let back = g.concat_cols(&parts).unwrap();
        prop_assert_eq!(g.value(back), &t);
    }

    #[test]
    fn softmax_rows_normalized_and_shift_invariant(x in matrix(5), shift in -50.0f64..50.0) {
        let mut g = Graph::new();
        let v = g.constant(x.clone());
        let s = g.softmax(v).unwrap();
        let shifted = g.constant(x.map(|e| e + shift));
        let s2 = g.softmax(shifted).unwrap();
        let cols = x.shape()[1];
        for row in g.value(s).data().chunks(cols) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
        }
        prop_assert!(g.value(s).max_abs_diff(g.value(s2)).unwrap() <= 1e-12);
    }

    #[test]
    fn kron_vec_identity((a, s, x) in (1usize..4, 1usize..4, 1usize..4, 1usize..4)
        .prop_flat_map(|(ar, ac, sr, sc)| (
            tensor_strategy(vec![ar, ac]),
            tensor_strategy(vec![sr, sc]),
            tensor_strategy(vec![sc, ac]),
        ))) {
        // vec stacks columns: vec(X)[j·rows + i] = X[i, j].
        let vec_cols = |t: &Tensor| {
            let (r, c) = (t.shape()[0], t.shape()[1]);
            (0..c).flat_map(|j| (0..r).map(move |i| (i, j))).map(|(i, j)| t.at(i, j)).collect::<Vec<_>>()
        };
        let ak = a.kron(&s).unwrap();
        let dense = kron(a.data(), (a.shape()[0], a.shape()[1]), s.data(), (s.shape()[0], s.shape()[1]));
        prop_assert_eq!(ak.data(), dense.as_slice());
        let vx = Tensor::new(vec![x.numel(), 1], vec_cols(&x)).unwrap();
        let lhs = ak.matmul(&vx).unwrap();
        let rhs = s.matmul(&x).unwrap().matmul(&a.transpose().unwrap()).unwrap();
        prop_assert!(max_abs_diff(lhs.data(), &vec_cols(&rhs)) <= 1e-12);
    }
}
