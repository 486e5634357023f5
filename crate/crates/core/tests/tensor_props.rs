use physio_forge::tensor::{grad_check, Graph, NormState, Tensor, NORM_EPS};
use proptest::prelude::*;

fn matrix(rows: usize, cols: usize, range: f64) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-range..range, rows * cols).prop_map(move |v| Tensor::new(vec![rows, cols], v).unwrap())
}

fn column(t: &Tensor, c: usize) -> Vec<f64> {
    let cols = t.shape()[1];
    t.data().iter().skip(c).step_by(cols).copied().collect()
}

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (mean, v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n)
}

/// Rows of `t` reordered so that row `i` of the result is row `perm[i]`.
fn permute_rows(t: &Tensor, perm: &[usize]) -> Tensor {
    let cols = t.shape()[1];
    let data = perm
        .iter()
        .flat_map(|&r| t.data()[r * cols..][..cols].to_vec())
        .collect();
    Tensor::new(t.shape().to_vec(), data).unwrap()
}

fn permute_cols(t: &Tensor, perm: &[usize]) -> Tensor {
    let cols = t.shape()[1];
    let data = t
        .data()
        .chunks(cols)
        .flat_map(|row| perm.iter().map(|&c| row[c]).collect::<Vec<_>>())
        .collect();
    Tensor::new(t.shape().to_vec(), data).unwrap()
}

fn bn_train(x: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let mut state = NormState::new(x.shape()[1]);
    let y = g.batch_norm(v, &mut state, None, true).unwrap();
    g.value(y).clone()
}

fn ln(x: &Tensor) -> Tensor {
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let y = g.layer_norm(v, NORM_EPS, None).unwrap();
    g.value(y).clone()
}

fn bce(logits: &[f64], targets: &[f64]) -> f64 {
    let mut g = Graph::new();
    let z = g.constant(Tensor::vector(logits));
    let l = g.bce_with_logits(z, targets).unwrap();
    g.value(l).item().unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn batch_norm_standardizes_each_channel(x in matrix(12, 4, 10.0)) {
        let y = bn_train(&x);
        for c in 0..4 {
            let (_, var_in) = moments(&column(&x, c));
            // var/(var+eps) is within 1e-5 of 1 once var ≥ 1.
            prop_assume!(var_in >= 1.0);
            let (mean, var) = moments(&column(&y, c));
            prop_assert!(mean.abs() < 1e-8, "channel {c} mean {mean}");
            prop_assert!((var - 1.0).abs() < 1e-5, "channel {c} var {var}");
        }
    }

    #[test]
    fn layer_norm_commutes_with_sample_order(
        x in matrix(6, 5, 5.0),
        perm in Just((0..6).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        prop_assert_eq!(ln(&permute_rows(&x, &perm)), permute_rows(&ln(&x), &perm));
    }

    #[test]
    fn batch_norm_commutes_with_channel_order(
        x in matrix(7, 5, 5.0),
        perm in Just((0..5).collect::<Vec<usize>>()).prop_shuffle(),
    ) {
        prop_assert_eq!(bn_train(&permute_cols(&x, &perm)), permute_cols(&bn_train(&x), &perm));
    }

    #[test]
    fn bce_label_flip_symmetry(
        pairs in prop::collection::vec((-60.0f64..60.0, prop::bool::ANY), 1..20),
    ) {
        let z: Vec<f64> = pairs.iter().map(|p| p.0).collect();
        let y: Vec<f64> = pairs.iter().map(|p| f64::from(u8::from(p.1))).collect();
        let neg: Vec<f64> = z.iter().map(|v| -v).collect();
        let flipped: Vec<f64> = y.iter().map(|v| 1.0 - v).collect();
        prop_assert_eq!(bce(&z, &y), bce(&neg, &flipped));
    }

    #[test]
    fn finite_inputs_give_finite_values_and_gradients(
        x in prop::collection::vec(-1e3f64..1e3, 2 * 2 * 4 * 4),
        w in prop::collection::vec(-1e2f64..1e2, 3 * 2 * 9),
        lw in prop::collection::vec(-1e2f64..1e2, 3 * 3),
        classes in prop::collection::vec(0usize..3, 2),
    ) {
        let mut g = Graph::new();
        let x = g.leaf(Tensor::new(vec![2, 2, 4, 4], x).unwrap().with_grad());
        let w = g.leaf(Tensor::new(vec![3, 2, 3, 3], w).unwrap().with_grad());
        let b = g.leaf(Tensor::zeros(&[3]).with_grad());
        let lw = g.leaf(Tensor::new(vec![3, 3], lw).unwrap().with_grad());
        let lb = g.leaf(Tensor::zeros(&[3]).with_grad());
        let mut s4 = NormState::new(3);
        let mut s2 = NormState::new(3);
        let y = g.conv2d(x, w, b).unwrap();
        let y = g.batch_norm(y, &mut s4, None, true).unwrap();
        let y = g.relu(y);
        let y = g.avg_pool2(y).unwrap();
        let y = g.global_avg_pool(y).unwrap();
        let y = g.linear(y, lw, lb).unwrap();
        let a = g.layer_norm(y, NORM_EPS, None).unwrap();
        let c = g.batch_norm(y, &mut s2, None, true).unwrap();
        let y = g.add(a, c).unwrap();
        let ce = g.cross_entropy(y, &classes).unwrap();
        let flat = g.reshape(y, &[6]).unwrap();
        let bce = g.bce_with_logits(flat, &[0.0, 1.0, 1.0, 0.0, 1.0, 0.0]).unwrap();
        let loss = g.weighted_sum(&[(1.0, ce), (0.5, bce)]).unwrap();
        g.backward(loss).unwrap();
        prop_assert!(g.value(loss).is_finite());
        for v in [x, w, b, lw, lb] {
            prop_assert!(g.grad(v).unwrap().iter().all(|d| d.is_finite()));
        }
        prop_assert!(s4.running_var.iter().chain(&s2.running_var).all(|v| v.is_finite()));
    }

    #[test]
    fn random_composites_pass_grad_check(
        x in matrix(5, 3, 2.0),
        w1 in matrix(3, 4, 1.0),
        w2 in matrix(4, 2, 1.0),
        classes in prop::collection::vec(0usize..2, 5),
    ) {
        let params = [x, w1, w2, Tensor::zeros(&[4]), Tensor::vector(&[0.1, -0.1])];
        let forward = |g: &mut Graph, v: &[physio_forge::tensor::Var]| {
            let mut state = NormState::new(4);
            let h = g.linear(v[0], v[1], v[3])?;
            let h = g.batch_norm(h, &mut state, None, true)?;
            let h = g.relu(h);
            let h = g.layer_norm(h, NORM_EPS, None)?;
            let z = g.linear(h, v[2], v[4])?;
            g.cross_entropy(z, &classes)
        };
        let mut probe = Graph::new();
        let vars: Vec<_> = params.iter().map(|p| probe.leaf(p.clone())).collect();
        forward(&mut probe, &vars).unwrap();
        prop_assume!(probe.relu_margin().is_some_and(|m| m > 1e-4));
        let report = grad_check(&params, 1e-5, forward).unwrap();
        prop_assert!(report.max_rel_error < 1e-4, "{report:?}");
    }
}
