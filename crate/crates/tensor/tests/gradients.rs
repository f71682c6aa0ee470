use ifthen_tensor::gradcheck::{check_inputs, check_params, CheckReport};
use ifthen_tensor::{lstm_cell_step, Graph, InitScheme, ParamStore, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn assert_ok(name: &str, report: CheckReport) {
    assert!(
        report.max_rel_error < TOL,
        "{name}: max relative error {:e} at {}",
        report.max_rel_error,
        report.worst
    );
    assert!(report.checked > 0);
}

/// Weighted sum so every output element gets a distinct upstream gradient.
fn project<'g>(g: &'g Graph<f64>, v: Var<'g, f64>) -> Result<Var<'g, f64>> {
    let shape = v.shape();
    let n: usize = shape.iter().product();
    let w = Tensor::new(shape, (0..n).map(|i| ((i * 7 % 11) as f64 - 5.0) / 3.0).collect())?;
    Ok(v.mul(g.constant(w))?.sum())
}

fn run<F>(name: &str, inputs: Vec<Tensor<f64>>, f: F)
where
    F: for<'g> Fn(&'g Graph<f64>, &[Var<'g, f64>]) -> Result<Var<'g, f64>>,
{
    let report = check_inputs(&inputs, STEP, false, |g, v| {
        let out = f(g, v)?;
        project(g, out)
    })
    .unwrap();
    assert_ok(name, report);
}

#[test]
fn elementwise_with_broadcasting() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..3 {
        let (a, b) = (rng.gen_range(1..4), rng.gen_range(1..5));
        let x = random(&mut rng, &[a, b]);
        let row = random(&mut rng, &[b]);
        let col = random(&mut rng, &[a, 1]);
        run("add", vec![x.clone(), row.clone()], |_, v| v[0].add(v[1]));
        run("sub", vec![x.clone(), col.clone()], |_, v| v[0].sub(v[1]));
        run("mul", vec![x.clone(), x.clone()], |_, v| v[0].mul(v[1]));
        run("mul_col", vec![x.clone(), col.clone()], |_, v| v[0].mul(v[1]));
        let y = random(&mut rng, &[2, 1, b]);
        let z = random(&mut rng, &[1, a, 1]);
        run("add_general", vec![y, z], |_, v| v[0].add(v[1]));
        run("scale", vec![x.clone()], |_, v| Ok(v[0].scale(-2.5)));
    }
}

#[test]
fn matmul_variants() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..3 {
        let (m, k, n) = (rng.gen_range(1..4), rng.gen_range(1..5), rng.gen_range(1..4));
        run(
            "matmul",
            vec![random(&mut rng, &[m, k]), random(&mut rng, &[k, n])],
            |_, v| v[0].matmul(v[1]),
        );
        run(
            "matmul_shared_rhs",
            vec![random(&mut rng, &[2, m, k]), random(&mut rng, &[k, n])],
            |_, v| v[0].matmul(v[1]),
        );
        run(
            "matmul_batched",
            vec![random(&mut rng, &[2, 3, m, k]), random(&mut rng, &[2, 3, k, n])],
            |_, v| v[0].matmul(v[1]),
        );
    }
}

#[test]
fn structural_ops() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = random(&mut rng, &[2, 3, 4]);
    let b = random(&mut rng, &[2, 2, 4]);
    run("concat", vec![a.clone(), b.clone()], |_, v| v[0].concat(v[1], 1));
    run("concat_last", vec![a.clone(), a.clone()], |_, v| v[0].concat(v[1], 2));
    run("slice", vec![a.clone()], |_, v| v[0].slice(2, 1, 3));
    run("permute", vec![a.clone()], |_, v| v[0].permute(&[2, 0, 1]));
    run("transpose", vec![a.clone()], |_, v| v[0].transpose(1, 2));
    run("reshape", vec![a.clone()], |_, v| v[0].reshape(&[6, 4]));
    let table = random(&mut rng, &[5, 3]);
    run("embedding", vec![table], |_, v| v[0].embedding(&[4, 0, 4, 2], &[2, 2]));
}

#[test]
fn activations_and_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = random(&mut rng, &[3, 5]);
    run("tanh", vec![x.clone()], |_, v| Ok(v[0].tanh()));
    run("sigmoid", vec![x.clone()], |_, v| Ok(v[0].sigmoid()));
    // keep away from the kink at zero
    let shifted = Tensor::new(
        vec![3, 5],
        x.data().iter().map(|v| if v.abs() < 0.05 { v + 0.2 } else { *v }).collect(),
    )
    .unwrap();
    run("relu", vec![shifted], |_, v| Ok(v[0].relu()));
    run("softmax_last", vec![x.clone()], |_, v| v[0].softmax(1));
    run("softmax_first", vec![x.clone()], |_, v| v[0].softmax(0));
    let gamma = random(&mut rng, &[5]);
    let beta = random(&mut rng, &[5]);
    run("layer_norm", vec![x.clone(), gamma, beta], |_, v| {
        v[0].layer_norm(v[1], v[2], 1e-6)
    });
    run("sum", vec![x.clone()], |_, v| Ok(v[0].sum()));
    run("mean", vec![x.clone()], |_, v| Ok(v[0].mean()));
}

#[test]
fn dropout_in_training_mode() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let x = random(&mut rng, &[4, 6]);
    let report = check_inputs(&[x], STEP, true, |g, v| {
        let out = v[0].dropout(0.3)?;
        project(g, out)
    })
    .unwrap();
    assert_ok("dropout", report);
}

#[test]
fn lstm_cell() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (b, e, h) = (2, 3, 4);
    let inputs = vec![
        random(&mut rng, &[b, e]),
        random(&mut rng, &[b, h]),
        random(&mut rng, &[b, h]),
        random(&mut rng, &[e, 4 * h]),
        random(&mut rng, &[h, 4 * h]),
        random(&mut rng, &[4 * h]),
    ];
    run("lstm_cell_step", inputs, |_, v| {
        let (h, c) = lstm_cell_step(v[0], v[1], v[2], v[3], v[4], v[5])?;
        h.concat(c, 1)
    });
}

#[test]
fn cross_entropy_with_ignore() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let logits = random(&mut rng, &[2, 3, 5]);
    let report = check_inputs(&[logits], STEP, false, |_, v| {
        v[0].cross_entropy(&[1, 0, 4, 0, 2, 3], Some(0))
    })
    .unwrap();
    assert_ok("cross_entropy", report);
}

#[test]
fn randomized_five_layer_composite_through_params() {
    for seed in 0..3u64 {
        let mut store = ParamStore::<f64>::new(seed);
        let dims = [3usize, 5, 4, 6, 4, 3];
        let mut weights = Vec::new();
        for (i, w) in dims.windows(2).enumerate() {
            let wi = store
                .add(&format!("w{i}"), &[w[0], w[1]], InitScheme::FanIn { fan_in: w[0] })
                .unwrap();
            let bi = store
                .add(&format!("b{i}"), &[w[1]], InitScheme::Uniform { bound: 0.5 })
                .unwrap();
            weights.push((wi, bi));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let x = random(&mut rng, &[4, 3]);
        let report = check_params(&mut store, STEP, false, |g, s| {
            let mut h = g.constant(x.clone());
            for (layer, &(w, b)) in weights.iter().enumerate() {
                h = h.matmul(g.param(s, w))?.add(g.param(s, b))?;
                h = match layer % 3 {
                    0 => h.tanh(),
                    1 => h.sigmoid(),
                    _ => h.mul(h)?,
                };
            }
            h.cross_entropy(&[0, 2, 1, 2], None)
        })
        .unwrap();
        assert_ok("composite", report);
    }
}

#[test]
fn shared_parameter_gradients_accumulate() {
    let mut store = ParamStore::<f64>::new(0);
    let p = store.add("p", &[3], InitScheme::Uniform { bound: 1.0 }).unwrap();
    let g = Graph::new(false, 0);
    let a = g.param(&store, p);
    let b = g.param(&store, p);
    let loss = a.mul(b).unwrap().sum();
    g.backward_into(loss, &mut store).unwrap();
    let expected: Vec<f64> = store.value(p).data().iter().map(|v| 2.0 * v).collect();
    assert_eq!(store.grad(p).data(), expected.as_slice());
}
