//! Central finite differences on the f64 reference forwards against the
//! tape's analytic gradients.

use kdasc::distill::{kd_loss, DistillConfig};
use kdasc::tensor::{BatchNormStats, Conv2dParams, Tape, Tensor, Var};

use super::reference::{self as r, ConvArgs};
use super::{rel_err, to_f32, to_f64, uniform};

pub const H: f64 = 1e-3;
pub const TOL: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GradCase {
    pub name: String,
    pub seed: u64,
    pub rel_err: f64,
    pub forward_err: f64,
}

pub struct Input {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    pub differentiable: bool,
}

pub fn input(shape: &[usize], data: Vec<f64>, differentiable: bool) -> Input {
    assert_eq!(shape.iter().product::<usize>(), data.len());
    Input {
        shape: shape.to_vec(),
        data,
        differentiable,
    }
}

fn away_from_zero(mut v: Vec<f64>, margin: f64) -> Vec<f64> {
    for x in &mut v {
        if x.abs() < margin {
            *x = if *x < 0.0 { -margin } else { margin } + *x;
        }
    }
    v
}

/// Checks `L = Σ w ⊙ op(inputs)` for random `w`.
pub fn check(
    name: &str,
    seed: u64,
    inputs: &[Input],
    build: impl Fn(&mut Tape, &[Var]) -> Var,
    reference: impl Fn(&[Vec<f64>]) -> Vec<f64>,
) -> Vec<GradCase> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs
        .iter()
        .map(|i| {
            let mut t = Tensor::new(i.shape.clone(), to_f32(&i.data)).unwrap();
            t.set_requires_grad(i.differentiable);
            tape.leaf(&t)
        })
        .collect();
    let out = build(&mut tape, &vars);
    let out_val = to_f64(tape.value(out).data());
    let out_shape = tape.value(out).shape().to_vec();
    let w = uniform(seed ^ 0x5eed, out_val.len());
    let wv = tape.constant(Tensor::new(out_shape, to_f32(&w)).unwrap());
    let prod = tape.mul(out, wv).unwrap();
    let loss = tape.sum(prod).unwrap();
    tape.backward(loss).unwrap();

    let base: Vec<Vec<f64>> = inputs.iter().map(|i| to_f32(&i.data).iter().map(|&v| v as f64).collect()).collect();
    let forward_err = rel_err(&out_val, &reference(&base));
    let objective = |xs: &[Vec<f64>]| reference(xs).iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();

    let mut cases = Vec::new();
    for (k, inp) in inputs.iter().enumerate() {
        if !inp.differentiable {
            continue;
        }
        let analytic = to_f64(tape.grad(vars[k]).unwrap());
        let mut xs = base.clone();
        let fd: Vec<f64> = (0..inp.data.len())
            .map(|j| {
                let orig = xs[k][j];
                xs[k][j] = orig + H;
                let up = objective(&xs);
                xs[k][j] = orig - H;
                let down = objective(&xs);
                xs[k][j] = orig;
                (up - down) / (2.0 * H)
            })
            .collect();
        cases.push(GradCase {
            name: format!("{name}/input{k}"),
            seed,
            rel_err: rel_err(&analytic, &fd),
            forward_err,
        });
    }
    cases
}

fn conv_case(name: &str, seed: u64, a: ConvArgs, bias: bool) -> Vec<GradCase> {
    let xs: usize = a.x_shape.iter().product();
    let ws: usize = a.w_shape.iter().product();
    let o = a.w_shape[0];
    let mut inputs = vec![
        input(&a.x_shape, uniform(seed, xs), true),
        input(&a.w_shape, uniform(seed + 100, ws), true),
    ];
    if bias {
        inputs.push(input(&[o], uniform(seed + 200, o), true));
    }
    let params = Conv2dParams {
        stride: a.stride,
        padding: a.pad,
        groups: a.groups,
    };
    check(
        name,
        seed,
        &inputs,
        |t, v| t.conv2d(v[0], v[1], v.get(2).copied(), params).unwrap(),
        |x| r::conv2d(&x[0], &x[1], x.get(2).map(|b| b.as_slice()), &a),
    )
}

/// Every differentiable tape op plus the distillation loss grid for one seed.
pub fn op_cases(seed: u64) -> Vec<GradCase> {
    let mut out = Vec::new();
    let conv = |x: [usize; 4], w: [usize; 4], stride, pad, groups| ConvArgs {
        x_shape: x,
        w_shape: w,
        stride,
        pad,
        groups,
    };
    out.extend(conv_case("conv2d", seed, conv([2, 3, 8, 8], [4, 3, 3, 3], 1, 1, 1), true));
    out.extend(conv_case("conv2d_grouped_strided", seed, conv([2, 4, 7, 9], [6, 2, 3, 3], 2, 1, 2), true));
    out.extend(conv_case("conv2d_depthwise", seed, conv([2, 4, 6, 6], [4, 1, 3, 3], 1, 1, 4), false));
    out.extend(conv_case("conv2d_depthwise_strided", seed, conv([1, 3, 7, 6], [3, 1, 3, 3], 2, 1, 3), false));
    out.extend(conv_case("conv2d_pointwise", seed, conv([2, 3, 5, 5], [4, 3, 1, 1], 1, 0, 1), false));
    out.extend(conv_case("conv2d_5x5_stride2", seed, conv([1, 1, 9, 10], [3, 1, 5, 5], 2, 2, 1), true));

    let bn_shape = [3, 4, 3, 5];
    let n: usize = bn_shape.iter().product();
    out.extend(check(
        "batch_norm_train",
        seed,
        &[
            input(&bn_shape, uniform(seed, n), true),
            input(&[4], uniform(seed + 1, 4).iter().map(|v| 1.0 + 0.5 * v).collect(), true),
            input(&[4], uniform(seed + 2, 4), true),
        ],
        |t, v| {
            let mut stats = BatchNormStats::new(4);
            t.batch_norm(v[0], v[1], v[2], &mut stats, true).unwrap()
        },
        |x| r::batch_norm_train(&x[0], &bn_shape, &x[1], &x[2], 1e-5),
    ));
    let rm = to_f64(&to_f32(&uniform(seed + 3, 4)));
    let rv = to_f64(&to_f32(&uniform(seed + 4, 4).iter().map(|v| 1.0 + 0.5 * v).collect::<Vec<_>>()));
    out.extend(check(
        "batch_norm_eval",
        seed,
        &[
            input(&bn_shape, uniform(seed, n), true),
            input(&[4], uniform(seed + 1, 4), true),
            input(&[4], uniform(seed + 2, 4), true),
        ],
        |t, v| {
            let mut stats = BatchNormStats::new(4);
            stats.mean = to_f32(&rm);
            stats.var = to_f32(&rv);
            t.batch_norm(v[0], v[1], v[2], &mut stats, false).unwrap()
        },
        |x| r::batch_norm_eval(&x[0], &bn_shape, &x[1], &x[2], &rm, &rv, 1e-5),
    ));

    out.extend(check(
        "relu",
        seed,
        &[input(&[2, 3, 4, 4], away_from_zero(uniform(seed, 96), 0.01), true)],
        |t, v| t.relu(v[0]).unwrap(),
        |x| x[0].iter().map(|v| v.max(0.0)).collect(),
    ));
    out.extend(check(
        "linear",
        seed,
        &[
            input(&[3, 4], uniform(seed, 12), true),
            input(&[4, 2], uniform(seed + 1, 8), true),
            input(&[2], uniform(seed + 2, 2), true),
        ],
        |t, v| t.linear(v[0], v[1], Some(v[2])).unwrap(),
        |x| r::linear(&x[0], 3, 4, &x[1], 2, Some(&x[2])),
    ));
    out.extend(check(
        "global_avg_pool",
        seed,
        &[input(&[2, 3, 4, 5], uniform(seed, 120), true)],
        |t, v| t.global_avg_pool(v[0]).unwrap(),
        |x| r::global_avg_pool(&x[0], 2, 3, 20),
    ));
    out.extend(check(
        "add",
        seed,
        &[input(&[2, 5], uniform(seed, 10), true), input(&[2, 5], uniform(seed + 1, 10), true)],
        |t, v| t.add(v[0], v[1]).unwrap(),
        |x| x[0].iter().zip(&x[1]).map(|(a, b)| a + b).collect(),
    ));
    out.extend(check(
        "mul",
        seed,
        &[input(&[2, 5], uniform(seed, 10), true), input(&[2, 5], uniform(seed + 1, 10), true)],
        |t, v| t.mul(v[0], v[1]).unwrap(),
        |x| x[0].iter().zip(&x[1]).map(|(a, b)| a * b).collect(),
    ));
    let scale = to_f32(&uniform(seed + 7, 6));
    let shift = to_f32(&uniform(seed + 8, 6));
    out.extend(check(
        "row_affine",
        seed,
        &[input(&[2, 1, 3, 5], uniform(seed, 30), true)],
        |t, v| t.row_affine(v[0], scale.clone(), shift.clone()).unwrap(),
        |x| {
            x[0].iter()
                .enumerate()
                .map(|(i, v)| v * scale[i / 5] as f64 + shift[i / 5] as f64)
                .collect()
        },
    ));
    for tau in [0.5, 2.0] {
        out.extend(check(
            &format!("softmax_t(tau={tau})"),
            seed,
            &[input(&[3, 5], uniform(seed, 15), true)],
            |t, v| t.softmax_t(v[0], tau as f32).unwrap(),
            |x| r::softmax(&x[0], 5, tau),
        ));
    }
    out.extend(check(
        "sum",
        seed,
        &[input(&[7], uniform(seed, 7), true)],
        |t, v| t.sum(v[0]).unwrap(),
        |x| vec![x[0].iter().sum()],
    ));
    out.extend(kd_cases(seed));
    out
}

pub const KD_LAMBDAS: [f64; 3] = [0.0, 0.02, 1.0];
pub const KD_TAUS: [f64; 3] = [1.0, 2.0, 5.0];

pub fn kd_cases(seed: u64) -> Vec<GradCase> {
    let (n, k) = (4, 10);
    let zs = uniform(seed, n * k).iter().map(|v| 3.0 * v).collect::<Vec<_>>();
    let zt = to_f64(&to_f32(&uniform(seed + 1, n * k).iter().map(|v| 3.0 * v).collect::<Vec<_>>()));
    let labels: Vec<usize> = (0..n).map(|i| (seed as usize + 3 * i) % k).collect();
    let mut out = Vec::new();
    for lambda in KD_LAMBDAS {
        for tau in KD_TAUS {
            let teacher = Tensor::new(vec![n, k], to_f32(&zt)).unwrap();
            let cfg = DistillConfig::new(lambda, tau).unwrap();
            out.extend(check(
                &format!("kd_loss(lambda={lambda},tau={tau})"),
                seed,
                &[input(&[n, k], zs.clone(), true)],
                |t, v| kd_loss(t, v[0], Some(&teacher), &labels, &cfg).unwrap(),
                |x| vec![r::kd_loss(&x[0], &zt, k, &labels, lambda, tau)],
            ));
        }
    }
    out
}

pub const SEEDS: [u64; 5] = [11, 23, 37, 41, 59];

pub fn suite() -> Vec<GradCase> {
    SEEDS.iter().flat_map(|&s| op_cases(s)).collect()
}
