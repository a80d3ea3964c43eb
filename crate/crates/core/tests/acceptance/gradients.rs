//! Central finite-difference checks of every autodiff primitive and of the
//! full transformer loss.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use seqkd::nnet::kernels::AttentionShape;
use seqkd::nnet::{
    build_model, loss, loss_and_gradients, ArchConfig, Batch, Graph, LossOptions, SizeClass, Tensor, Var,
};

const STEP: f64 = 1e-4;
const TOLERANCE: f64 = 1e-3;
/// Gradients smaller than this are compared on an absolute scale; central
/// differences cannot resolve them relative to their own size.
const FLOOR: f64 = 1e-6;
const TRIALS: u64 = 20;

fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FLOOR)
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

type Build = dyn Fn(&mut Graph<'_>, &[Var]) -> Var;

/// Largest relative error over every input coordinate for a scalar-valued
/// function built by `f`.
fn check(inputs: &[Tensor], f: &Build) -> f64 {
    let eval = |ins: &[Tensor]| {
        let mut g = Graph::new();
        let vars: Vec<Var> = ins.iter().map(|t| g.variable(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out).item()
    };
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars);
    g.backward(out);
    let analytic: Vec<Vec<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, t)| g.grad(v).map_or_else(|| vec![0.0; t.len()], <[f64]>::to_vec))
        .collect();
    let mut worst = 0.0f64;
    for (i, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[i].data_mut()[j] += STEP;
            let mut minus = inputs.to_vec();
            minus[i].data_mut()[j] -= STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * STEP);
            worst = worst.max(rel_err(analytic[i][j], numeric));
        }
    }
    worst
}

/// Reduces a tensor output to a scalar with fixed random weights.
fn reduce(g: &mut Graph<'_>, x: Var, seed: u64) -> Var {
    let n = g.value(x).len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xABCD);
    let w = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    g.weighted_sum(x, w)
}

/// Keeps ReLU inputs away from the kink so differences are meaningful.
fn away_from_zero(mut t: Tensor) -> Tensor {
    t.data_mut().iter_mut().for_each(|v| {
        if v.abs() < 0.05 {
            *v += 0.1f64.copysign(*v);
        }
    });
    t
}

pub struct Outcome {
    pub worst: Vec<(String, f64)>,
}

pub fn primitives() -> Outcome {
    let mut worst: Vec<(String, f64)> = Vec::new();
    let mut record = |name: &str, e: f64| match worst.iter_mut().find(|(n, _)| n == name) {
        Some((_, w)) => *w = w.max(e),
        None => worst.push((name.to_owned(), e)),
    };
    for seed in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (m, k, n) = (rng.gen_range(1..5), rng.gen_range(1..5), rng.gen_range(1..5));

        let ins = [random(&mut rng, &[m, k]), random(&mut rng, &[k, n])];
        record("matmul", check(&ins, &move |g, v| {
            let y = g.matmul(v[0], v[1]);
            reduce(g, y, seed)
        }));

        let ins = [random(&mut rng, &[m, n]), random(&mut rng, &[n])];
        record("add_bias", check(&ins, &move |g, v| {
            let y = g.add_bias(v[0], v[1]);
            reduce(g, y, seed)
        }));

        let ins = [random(&mut rng, &[m, n]), random(&mut rng, &[m, n])];
        record("add_scale", check(&ins, &move |g, v| {
            let y = g.add(v[0], v[1]);
            let y = g.scale(y, -1.7);
            reduce(g, y, seed)
        }));

        let ins = [away_from_zero(random(&mut rng, &[m, n]))];
        record("relu", check(&ins, &move |g, v| {
            let y = g.relu(v[0]);
            reduce(g, y, seed)
        }));

        let ins = [random(&mut rng, &[m, n]).map(|x| 3.0 * x)];
        record("gelu", check(&ins, &move |g, v| {
            let y = g.gelu(v[0]);
            reduce(g, y, seed)
        }));

        let ins = [random(&mut rng, &[m, n])];
        record("dropout", check(&ins, &move |g, v| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let y = g.dropout(v[0], 0.3, &mut r);
            reduce(g, y, seed)
        }));

        let ins = [random(&mut rng, &[m, n + 1]).map(|x| 2.0 * x)];
        record("softmax", check(&ins, &move |g, v| {
            let y = g.softmax(v[0]);
            reduce(g, y, seed)
        }));

        let d = n + 1;
        let ins = [random(&mut rng, &[m, d]), random(&mut rng, &[d]), random(&mut rng, &[d])];
        record("layer_norm", check(&ins, &move |g, v| {
            let y = g.layer_norm(v[0], v[1], v[2]);
            reduce(g, y, seed)
        }));

        let vocab = k + 2;
        let ids: Vec<u32> = (0..m + 2).map(|_| rng.gen_range(0..vocab as u32)).collect();
        let ins = [random(&mut rng, &[vocab, n])];
        record("embedding", check(&ins, &move |g, v| {
            let y = g.embedding(v[0], &ids, 1.3);
            reduce(g, y, seed)
        }));

        let heads = rng.gen_range(1..3);
        let dim = heads * rng.gen_range(1..4);
        let batch = rng.gen_range(1..3);
        let (lq, lk) = (rng.gen_range(1..4), rng.gen_range(1..4));
        let causal = seed % 2 == 0;
        let lk = if causal { lq } else { lk };
        let shape = AttentionShape {
            batch,
            query_len: lq,
            key_len: lk,
            heads,
            dim,
            causal,
            key_lens: (0..batch).map(|_| rng.gen_range(1..=lk)).collect(),
        };
        let ins = [
            random(&mut rng, &[batch * lq, dim]),
            random(&mut rng, &[batch * lk, dim]),
            random(&mut rng, &[batch * lk, dim]),
        ];
        record("attention", check(&ins, &move |g, v| {
            let y = g.attention(v[0], v[1], v[2], shape.clone());
            reduce(g, y, seed)
        }));

        let rows = m + 1;
        let targets: Vec<Option<u32>> = (0..rows)
            .map(|r| (r == 0 || rng.gen_bool(0.7)).then(|| rng.gen_range(0..(n + 1) as u32)))
            .collect();
        let smoothing = if seed % 2 == 0 { 0.0 } else { 0.1 };
        let ins = [random(&mut rng, &[rows, n + 1]).map(|x| 2.0 * x)];
        record("cross_entropy", check(&ins, &move |g, v| g.cross_entropy(v[0], &targets, smoothing).loss));
    }
    Outcome { worst }
}

/// Full loss of a Tiny-class model against finite differences over a random
/// subset of coordinates of every parameter tensor.
pub fn full_model() -> Outcome {
    let arch = ArchConfig::preset(SizeClass::Tiny, 32).unwrap().with_dropout(0.0);
    let vocab = 12;
    let mut worst = 0.0f64;
    for seed in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let mut model = build_model(&arch, vocab, seed).unwrap();
        let mut seq = |n: usize| -> Vec<u32> { (0..n).map(|_| rng.gen_range(4..vocab as u32)).collect() };
        let batch = Batch {
            source: vec![seq(3), seq(5)],
            target: vec![seq(4), seq(2)],
        };
        let opts = LossOptions {
            label_smoothing: 0.1,
            dropout_seed: None,
        };
        let grads = loss_and_gradients(&model, &batch, &opts).unwrap().gradients;
        let mut pick = ChaCha8Rng::seed_from_u64(seed);
        for p in 0..model.params().len() {
            let len = model.params()[p].len();
            for _ in 0..3 {
                let j = pick.gen_range(0..len);
                let orig = model.params()[p].data()[j];
                model.params_mut()[p].data_mut()[j] = orig + STEP;
                let up = loss(&model, &batch, &opts).unwrap();
                model.params_mut()[p].data_mut()[j] = orig - STEP;
                let down = loss(&model, &batch, &opts).unwrap();
                model.params_mut()[p].data_mut()[j] = orig;
                let numeric = (up - down) / (2.0 * STEP);
                worst = worst.max(rel_err(grads[p].data()[j], numeric));
            }
        }
    }
    Outcome {
        worst: vec![("tiny transformer".into(), worst)],
    }
}

pub fn passes(o: &Outcome) -> bool {
    o.worst.iter().all(|(_, e)| *e <= TOLERANCE)
}
