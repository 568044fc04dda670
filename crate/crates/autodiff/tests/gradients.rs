use autodiff::{
    finite_difference_grad, relative_error, Tape, Tensor, Var, LAYER_NORM_EPS, LEAKY_SLOPE,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-4;
const TRIALS: usize = 100;

type Build<'a> = dyn for<'t> Fn(&[Var<'t>]) -> Var<'t> + 'a;

/// Reduce an arbitrary output to a scalar through fixed random weights so the
/// upstream gradient is not uniform.
fn weighted<'t>(out: Var<'t>, w: &Tensor) -> Var<'t> {
    let wv = out.tape().constant(w.reshaped(&out.shape()).unwrap());
    out.mul(wv).unwrap().sum()
}

fn check(name: &str, inputs: &[Tensor], build: &Build<'_>, rng: &mut ChaCha8Rng) -> f64 {
    let probe_tape = Tape::new();
    let probe: Vec<Var> = inputs.iter().map(|t| probe_tape.leaf(t.clone())).collect();
    let out_shape = build(&probe).shape();
    let numel: usize = out_shape.iter().product();
    let w = Tensor::new(
        out_shape,
        (0..numel).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap();

    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = weighted(build(&vars), &w);
    let grads = tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (i, x) in inputs.iter().enumerate() {
        let f = |xi: &Tensor| {
            let tape = Tape::new();
            let vars: Vec<Var> = inputs
                .iter()
                .enumerate()
                .map(|(j, t)| tape.leaf(if i == j { xi.clone() } else { t.clone() }))
                .collect();
            weighted(build(&vars), &w).item()
        };
        let fd = finite_difference_grad(f, x, H).unwrap();
        let ad = grads.get(vars[i]);
        let err = relative_error(&ad, &fd);
        assert!(
            err < TOL,
            "{name} input {i}: rel err {err:e}\nad {ad:?}\nfd {fd:?}"
        );
        worst = worst.max(err);
    }
    worst
}

fn rand_mat(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Random entries at least `gap` away from every kink in `kinks`.
fn away_from(rng: &mut ChaCha8Rng, r: usize, c: usize, kinks: &[f64], gap: f64) -> Tensor {
    let mut data = Vec::with_capacity(r * c);
    while data.len() < r * c {
        let v: f64 = rng.random_range(-2.0..2.0);
        if kinks.iter().all(|k| (v - k).abs() > gap) {
            data.push(v);
        }
    }
    Tensor::matrix(r, c, data).unwrap()
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..=8), rng.random_range(1..=8))
}

#[test]
fn every_primitive_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..TRIALS {
        let (r, c) = dims(&mut rng);
        let k = rng.random_range(1..=8);
        let n = rng.random_range(1..=8);
        let a = rand_mat(&mut rng, r, c, -2.0, 2.0);
        let b = rand_mat(&mut rng, r, c, -2.0, 2.0);
        let bk = rand_mat(&mut rng, c, k, -2.0, 2.0);
        let sq = rand_mat(&mut rng, n, n, -0.8, 0.8);
        let pos = rand_mat(&mut rng, r, c, 0.5, 3.0);
        let row = rand_mat(&mut rng, 1, c, -2.0, 2.0);
        let col = rand_mat(&mut rng, r, 1, -2.0, 2.0);
        let gain = rand_mat(&mut rng, 1, c.max(3), 0.5, 1.5);
        let lbias = rand_mat(&mut rng, 1, c.max(3), -1.0, 1.0);
        let ln_x = rand_mat(&mut rng, r, c.max(3), -2.0, 2.0);
        let tri = rand_mat(&mut rng, 1, n * (n - 1) / 2, -2.0, 2.0);
        let kinked = away_from(&mut rng, r, c, &[0.0, 0.3, -0.5, 0.5], 1e-3);

        check(
            "add",
            &[a.clone(), b.clone()],
            &|v| v[0].add(v[1]).unwrap(),
            &mut rng,
        );
        check(
            "sub",
            &[a.clone(), b.clone()],
            &|v| v[0].sub(v[1]).unwrap(),
            &mut rng,
        );
        check(
            "mul",
            &[a.clone(), b.clone()],
            &|v| v[0].mul(v[1]).unwrap(),
            &mut rng,
        );
        check(
            "scale",
            std::slice::from_ref(&a),
            &|v| v[0].scale(-1.7),
            &mut rng,
        );
        check(
            "add_scalar",
            std::slice::from_ref(&a),
            &|v| v[0].add_scalar(0.4),
            &mut rng,
        );
        check(
            "matmul",
            &[a.clone(), bk],
            &|v| v[0].matmul(v[1]).unwrap(),
            &mut rng,
        );
        check(
            "transpose",
            std::slice::from_ref(&a),
            &|v| v[0].t().unwrap(),
            &mut rng,
        );
        check("sum", std::slice::from_ref(&a), &|v| v[0].sum(), &mut rng);
        check(
            "sum_axis0",
            std::slice::from_ref(&a),
            &|v| v[0].sum_axis(0).unwrap(),
            &mut rng,
        );
        check(
            "sum_axis1",
            std::slice::from_ref(&a),
            &|v| v[0].sum_axis(1).unwrap(),
            &mut rng,
        );
        check("mean", std::slice::from_ref(&a), &|v| v[0].mean(), &mut rng);
        check(
            "max_const",
            std::slice::from_ref(&kinked),
            &|v| v[0].max_const(0.3),
            &mut rng,
        );
        check(
            "clamp",
            std::slice::from_ref(&kinked),
            &|v| v[0].clamp(-0.5, 0.5),
            &mut rng,
        );
        check(
            "abs",
            std::slice::from_ref(&kinked),
            &|v| v[0].abs(),
            &mut rng,
        );
        check(
            "leaky_relu",
            std::slice::from_ref(&kinked),
            &|v| v[0].leaky_relu(LEAKY_SLOPE),
            &mut rng,
        );
        check(
            "sigmoid",
            std::slice::from_ref(&a),
            &|v| v[0].sigmoid(),
            &mut rng,
        );
        check("exp", std::slice::from_ref(&a), &|v| v[0].exp(), &mut rng);
        check("ln", std::slice::from_ref(&pos), &|v| v[0].ln(), &mut rng);
        check(
            "square",
            std::slice::from_ref(&a),
            &|v| v[0].square(),
            &mut rng,
        );
        check(
            "reciprocal",
            std::slice::from_ref(&pos),
            &|v| v[0].reciprocal(),
            &mut rng,
        );
        check(
            "layer_norm",
            &[ln_x, gain, lbias],
            &|v| v[0].layer_norm(v[1], v[2], LAYER_NORM_EPS).unwrap(),
            &mut rng,
        );
        check(
            "broadcast_row",
            &[row],
            &|v| v[0].broadcast(r, c).unwrap(),
            &mut rng,
        );
        check(
            "broadcast_col",
            &[col],
            &|v| v[0].broadcast(r, c).unwrap(),
            &mut rng,
        );
        check(
            "diag",
            std::slice::from_ref(&sq),
            &|v| v[0].diag().unwrap(),
            &mut rng,
        );
        let p = rng.random_range(1..=5);
        check(
            "matrix_power",
            std::slice::from_ref(&sq),
            &|v| v[0].matrix_power(p).unwrap(),
            &mut rng,
        );
        check(
            "reshape",
            std::slice::from_ref(&a),
            &|v| v[0].reshape(&[c, r]).unwrap(),
            &mut rng,
        );
        let start = rng.random_range(0..r);
        let len = rng.random_range(1..=r - start);
        check(
            "slice_rows",
            std::slice::from_ref(&a),
            &|v| v[0].slice_rows(start, len).unwrap(),
            &mut rng,
        );
        check(
            "concat_rows",
            &[a.clone(), b.clone()],
            &|v| v[0].tape().concat_rows(&[v[0], v[1], v[0]]).unwrap(),
            &mut rng,
        );
        if n >= 2 {
            check(
                "scatter_sym",
                &[tri],
                &|v| v[0].scatter_sym(n).unwrap(),
                &mut rng,
            );
        }
        let bn = rng.random_range(1..=n);
        check("block", &[sq], &|v| v[0].block(bn).unwrap(), &mut rng);
    }
}

#[test]
fn trace_of_cube_gradient_is_three_x_squared_transposed() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let m = rand_mat(&mut rng, 4, 4, -1.0, 1.0);
    let x = m
        .zip_map(&m.transpose().unwrap(), "sym", |a, b| 0.5 * (a + b))
        .unwrap();

    let tape = Tape::new();
    let v = tape.leaf(x.clone());
    let loss = v.matrix_power(3).unwrap().diag().unwrap().sum();
    let g = tape.backward(loss).unwrap().get(v);

    let expect = x.matmul(&x).unwrap().transpose().unwrap().map(|e| 3.0 * e);
    assert!(relative_error(&g, &expect) < 1e-12);

    let fd = finite_difference_grad(
        |t| {
            let c = t.matmul(t).unwrap().matmul(t).unwrap();
            (0..4).map(|i| c.at(i, i)).sum()
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(relative_error(&g, &fd) < 1e-4);
}

#[test]
fn forward_is_bit_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a = rand_mat(&mut rng, 6, 7, -1.0, 1.0);
    let w = rand_mat(&mut rng, 7, 5, -1.0, 1.0);
    let run = || {
        let tape = Tape::new();
        let x = tape.leaf(a.clone());
        let y = x
            .matmul(tape.leaf(w.clone()))
            .unwrap()
            .sigmoid()
            .square()
            .sum();
        tape.forward_eval(y)
    };
    assert_eq!(run().item().to_bits(), run().item().to_bits());
}
