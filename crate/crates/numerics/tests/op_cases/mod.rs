//! Every differentiable tape op against central finite differences. Each
//! case returns the worst relative error over all of its parameters.
#![allow(dead_code)]

use numerics::gradcheck::max_relative_error;
use numerics::{ParamGroup, ParamId, ParamStore, Real, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: Real = 1e-5;
pub const TOL: Real = 1e-4;
pub const FLOOR: Real = 1e-6;

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-1.0..1.0)).collect(),
    )
    .unwrap()
}

/// Builds a store from shapes, then checks every parameter of a scalar
/// function built by `build`.
fn check<F>(shapes: &[&[usize]], seed: u64, build: F) -> Real
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = ParamStore::new();
    let ids: Vec<ParamId> = shapes
        .iter()
        .enumerate()
        .map(|(i, s)| {
            store
                .add(&format!("p{i}"), random(&mut rng, s), ParamGroup::Slm)
                .unwrap()
        })
        .collect();
    let eval = |s: &ParamStore| {
        let mut tape = Tape::new(s);
        let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
        let out = build(&mut tape, &vars);
        tape.scalar(out).unwrap()
    };
    let mut tape = Tape::new(&store);
    let vars: Vec<Var> = ids.iter().map(|&id| tape.param(id)).collect();
    let out = build(&mut tape, &vars);
    let grads = tape.backward(out).unwrap();
    ids.iter()
        .map(|&id| {
            let g = grads.get(id).expect("every input receives a gradient");
            max_relative_error(&store, id, g, None, H, FLOOR, eval)
        })
        .fold(0.0, Real::max)
}

/// Weighted sum so that every output element gets a distinct upstream grad.
fn weighted_sum(tape: &mut Tape, v: Var, seed: u64) -> Var {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let shape = tape.shape(v).to_vec();
    let w = tape.leaf(random(&mut rng, &shape));
    let p = tape.mul(v, w).unwrap();
    tape.sum(p)
}

pub fn matmul() -> Real {
    check(&[&[3, 4], &[4, 2]], 1, |t, v| {
        let y = t.matmul(v[0], v[1]).unwrap();
        weighted_sum(t, y, 1)
    })
}

pub fn matmul_nt() -> Real {
    check(&[&[3, 4], &[5, 4]], 2, |t, v| {
        let y = t.matmul_nt(v[0], v[1], 0.37).unwrap();
        weighted_sum(t, y, 2)
    })
}

pub fn add_mul_scale() -> Real {
    check(&[&[2, 3], &[2, 3]], 3, |t, v| {
        let a = t.add(v[0], v[1]).unwrap();
        let m = t.mul(a, v[1]).unwrap();
        let s = t.scale(m, -1.7);
        weighted_sum(t, s, 3)
    })
}

pub fn add_bias() -> Real {
    check(&[&[4, 3], &[3]], 4, |t, v| {
        let y = t.add_bias(v[0], v[1]).unwrap();
        weighted_sum(t, y, 4)
    })
}

pub fn gelu() -> Real {
    check(&[&[3, 5]], 5, |t, v| {
        let y = t.gelu(v[0]);
        weighted_sum(t, y, 5)
    })
}

pub fn layer_norm() -> Real {
    check(&[&[3, 6], &[6], &[6]], 6, |t, v| {
        let y = t.layer_norm(v[0], v[1], v[2], 1e-5).unwrap();
        weighted_sum(t, y, 6)
    })
}

pub fn softmax() -> Real {
    let plain = check(&[&[3, 4]], 7, |t, v| {
        let y = t.softmax(v[0], None, None).unwrap();
        weighted_sum(t, y, 7)
    });
    let masked = check(&[&[3, 4]], 8, |t, v| {
        let y = t
            .softmax(v[0], Some(&[true, false, true, true]), None)
            .unwrap();
        weighted_sum(t, y, 8)
    });
    let causal = check(&[&[4, 4]], 9, |t, v| {
        let y = t.softmax(v[0], None, Some(0)).unwrap();
        weighted_sum(t, y, 9)
    });
    plain.max(masked).max(causal)
}

pub fn slice_and_concat() -> Real {
    check(&[&[3, 6], &[2, 6]], 10, |t, v| {
        let a = t.slice_cols(v[0], 1, 3).unwrap();
        let b = t.slice_cols(v[0], 4, 2).unwrap();
        let c = t.concat_cols(&[b, a]).unwrap();
        let d = t.concat_rows(&[v[0], v[1]]).unwrap();
        let s1 = weighted_sum(t, c, 10);
        let s2 = weighted_sum(t, d, 11);
        t.add(s1, s2).unwrap()
    })
}

pub fn gather_with_repeats() -> Real {
    check(&[&[5, 3]], 12, |t, v| {
        let y = t.gather(v[0], &[4, 0, 4, 2]).unwrap();
        weighted_sum(t, y, 12)
    })
}

pub fn cross_entropy() -> Real {
    check(&[&[4, 6]], 13, |t, v| t.cross_entropy(v[0], &[1, 0, 5, 3], 0).unwrap())
}

pub fn mean() -> Real {
    check(&[&[2, 5]], 14, |t, v| {
        let y = t.gelu(v[0]);
        t.mean(y)
    })
}

/// Single-head attention built from primitives, as the model does it.
pub fn attention_composite() -> Real {
    check(&[&[4, 6], &[6, 6], &[6, 6], &[6, 6]], 15, |t, v| {
        let q = t.matmul(v[0], v[1]).unwrap();
        let k = t.matmul(v[0], v[2]).unwrap();
        let val = t.matmul(v[0], v[3]).unwrap();
        let s = t.matmul_nt(q, k, 1.0 / (6.0 as Real).sqrt()).unwrap();
        let p = t.softmax(s, Some(&[true, true, false, true]), Some(1)).unwrap();
        let o = t.matmul(p, val).unwrap();
        weighted_sum(t, o, 15)
    })
}

pub fn all() -> Vec<(&'static str, Real)> {
    vec![
        ("matmul", matmul()),
        ("matmul_nt", matmul_nt()),
        ("add_mul_scale", add_mul_scale()),
        ("add_bias", add_bias()),
        ("gelu", gelu()),
        ("layer_norm", layer_norm()),
        ("softmax", softmax()),
        ("slice_and_concat", slice_and_concat()),
        ("gather", gather_with_repeats()),
        ("cross_entropy", cross_entropy()),
        ("mean", mean()),
        ("attention", attention_composite()),
    ]
}
