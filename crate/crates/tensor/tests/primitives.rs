use ifthen_tensor::{lstm_cell_step, Graph, InitScheme, ParamStore, Tensor, TensorError};
use proptest::prelude::*;

fn t(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn softmax_of_equal_logits_is_uniform() {
    let g = Graph::<f64>::inference();
    let s = g.constant(t(&[2], &[0.0, 0.0])).softmax(0).unwrap();
    assert_eq!(s.value().data(), &[0.5, 0.5]);
}

#[test]
fn identity_matmul() {
    let g = Graph::<f64>::inference();
    let a = t(&[2, 2], &[1.5, -2.0, 0.25, 4.0]);
    let out = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0])).matmul(g.constant(a.clone())).unwrap();
    assert_eq!(*out.value(), a);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let g = Graph::<f64>::inference();
    let err = g
        .constant(Tensor::zeros(vec![2, 3]))
        .matmul(g.constant(Tensor::zeros(vec![2, 3])))
        .unwrap_err();
    match err {
        TensorError::Shape { lhs, rhs, .. } => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn lstm_zero_weights_and_inputs_give_zero_state() {
    let g = Graph::<f64>::inference();
    let z = |s: &[usize]| g.constant(Tensor::zeros(s.to_vec()));
    let (h, c) = lstm_cell_step(z(&[2, 3]), z(&[2, 4]), z(&[2, 4]), z(&[3, 16]), z(&[4, 16]), z(&[16])).unwrap();
    assert!(h.value().data().iter().all(|&v| v == 0.0));
    assert!(c.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn cross_entropy_peaked_logits_approach_zero() {
    let mut last = f64::INFINITY;
    for peak in [1.0, 5.0, 20.0, 50.0] {
        let g = Graph::<f64>::inference();
        let loss = g
            .constant(t(&[1, 3], &[0.0, peak, 0.0]))
            .cross_entropy(&[1], None)
            .unwrap();
        let v = loss.value().item().unwrap();
        assert!(v >= 0.0 && v < last);
        last = v;
    }
    assert!(last < 1e-20);
}

#[test]
fn cross_entropy_all_ignored_is_rejected() {
    let g = Graph::<f64>::inference();
    let r = g.constant(Tensor::zeros(vec![2, 3])).cross_entropy(&[0, 0], Some(0));
    assert!(matches!(r, Err(TensorError::Invalid(_))));
}

#[test]
fn dropout_identity_at_inference_and_scaled_in_training() {
    let x = Tensor::full(vec![1000], 1.0);
    let g = Graph::<f64>::inference();
    let out = g.constant(x.clone()).dropout(0.5).unwrap();
    assert_eq!(*out.value(), x);
    let g = Graph::<f64>::training(9);
    let out = g.constant(x).dropout(0.5).unwrap();
    let v = out.to_tensor();
    assert!(v.data().iter().all(|&e| e == 0.0 || e == 2.0));
    let kept = v.data().iter().filter(|&&e| e == 2.0).count();
    assert!((400..600).contains(&kept));
    assert!(g.constant(Tensor::zeros(vec![1])).dropout(1.0).is_err());
}

#[test]
fn backward_requires_scalar_loss() {
    let g = Graph::<f64>::inference();
    let v = g.variable(Tensor::zeros(vec![2]));
    assert!(g.backward(v).is_err());
}

#[test]
fn sum_loss_gives_unit_gradient() {
    let mut store = ParamStore::<f64>::new(4);
    let p = store.add("p", &[2, 3], InitScheme::Uniform { bound: 1.0 }).unwrap();
    let g = Graph::new(false, 0);
    let loss = g.param(&store, p).sum();
    g.backward_into(loss, &mut store).unwrap();
    assert!(store.grad(p).data().iter().all(|&v| v == 1.0));
}

proptest! {
    #[test]
    fn softmax_rows_are_distributions(rows in 1usize..5, cols in 1usize..7, seed in 0u64..1000) {
        let data: Vec<f64> = (0..rows * cols)
            .map(|i| (((i as u64 + 1) * (seed + 13)) % 97) as f64 / 7.0 - 6.0)
            .collect();
        let g = Graph::<f64>::inference();
        let s = g.constant(Tensor::new(vec![rows, cols], data).unwrap()).softmax(1).unwrap();
        let v = s.value();
        for r in 0..rows {
            let row = &v.data()[r * cols..(r + 1) * cols];
            prop_assert!(row.iter().all(|&p| p >= 0.0));
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn layer_norm_standardizes_rows(data in prop::collection::vec(-10.0f64..10.0, 24)) {
        // skip near-constant rows where the eps term dominates the variance
        prop_assume!(data.chunks(8).all(|r| {
            let m = r.iter().sum::<f64>() / 8.0;
            r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 8.0 > 1e-2
        }));
        let g = Graph::<f64>::inference();
        let x = g.constant(Tensor::new(vec![3, 8], data).unwrap());
        let y = x
            .layer_norm(g.constant(Tensor::full(vec![8], 1.0)), g.constant(Tensor::zeros(vec![8])), 1e-6)
            .unwrap();
        let v = y.value();
        for r in v.data().chunks(8) {
            let m = r.iter().sum::<f64>() / 8.0;
            let var = r.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 8.0;
            prop_assert!(m.abs() < 1e-6);
            prop_assert!((var - 1.0).abs() < 1e-4);
        }
    }

    #[test]
    fn uniform_logits_cost_log_vocab(classes in 1usize..50, rows in 1usize..4) {
        let g = Graph::<f64>::inference();
        let targets: Vec<usize> = (0..rows).map(|r| r % classes).collect();
        let loss = g
            .constant(Tensor::full(vec![rows, classes], 0.3))
            .cross_entropy(&targets, None)
            .unwrap();
        prop_assert!((loss.value().item().unwrap() - (classes as f64).ln()).abs() < 1e-9);
    }
}
