//! Gradient and oracle sweeps reused by the per-module tests and the
//! acceptance gate.

use interflow::autograd::{BinaryKind, Tape, Var};
use interflow::interflow::{attention_fuse_hard, attention_fuse_soft_perclass, attention_fuse_soft_scalar};
use interflow::layers::{
    batchnorm_eval, batchnorm_train, conv2d, global_avg_pool, linear, relu, softmax_cross_entropy, BN_EPS,
};
use interflow::tensor::Tensor;
use interflow::training::{EpochMetrics, RunRecord};
use interflow::{finite_diff_check, Result};
use rand::Rng;

use super::{away_from_zero, conv_oracle, gap_oracle, linear_oracle, matmul_oracle, probe, rng, uniform};

pub const GRAD_STEP: f64 = 1e-5;
pub const GRAD_TOL: f64 = 1e-4;
pub const ORACLE_TOL: f64 = 1e-12;

/// One finite-difference result: which op, which input, and the error.
pub struct GradCase {
    pub op: &'static str,
    pub wrt: &'static str,
    pub error: f64,
}

fn case(op: &'static str, wrt: &'static str, error: Result<f64>) -> GradCase {
    GradCase {
        op,
        wrt,
        error: error.unwrap_or_else(|e| panic!("{op} wrt {wrt}: {e}")),
    }
}

/// Every differentiable op checked with respect to each of its inputs at
/// points drawn from `seed`.
pub fn gradient_cases(seed: u64) -> Vec<GradCase> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    let h = GRAD_STEP;

    // Elementwise, with a same-shape and a scalar second operand.
    let a = uniform(&[2, 3], -1.0, 1.0, &mut r);
    let b = uniform(&[2, 3], -1.0, 1.0, &mut r);
    let s = Tensor::scalar(r.random_range(-2.0..2.0));
    let rr = uniform(&[2, 3], -1.0, 1.0, &mut r);
    for (name, kind) in [("add", BinaryKind::Add), ("sub", BinaryKind::Sub), ("mul", BinaryKind::Mul)] {
        out.push(case(
            name,
            "a",
            finite_diff_check(
                |t, x| {
                    let bv = t.constant(b.clone());
                    let y = t.elementwise(x, bv, kind)?;
                    probe(t, y, &rr)
                },
                &a,
                h,
            ),
        ));
        out.push(case(
            name,
            "b",
            finite_diff_check(
                |t, x| {
                    let av = t.constant(a.clone());
                    let y = t.elementwise(av, x, kind)?;
                    probe(t, y, &rr)
                },
                &b,
                h,
            ),
        ));
        out.push(case(
            name,
            "scalar b",
            finite_diff_check(
                |t, x| {
                    let av = t.constant(a.clone());
                    let y = t.elementwise(av, x, kind)?;
                    probe(t, y, &rr)
                },
                &s,
                h,
            ),
        ));
    }
    out.push(case(
        "scale",
        "a",
        finite_diff_check(
            |t, x| {
                let y = t.scale(x, -1.7)?;
                probe(t, y, &rr)
            },
            &a,
            h,
        ),
    ));

    let ma = uniform(&[4, 5], -1.0, 1.0, &mut r);
    let mb = uniform(&[5, 3], -1.0, 1.0, &mut r);
    let mr = uniform(&[4, 3], -1.0, 1.0, &mut r);
    out.push(case(
        "matmul",
        "a",
        finite_diff_check(
            |t, x| {
                let bv = t.constant(mb.clone());
                let y = t.matmul(x, bv)?;
                probe(t, y, &mr)
            },
            &ma,
            h,
        ),
    ));
    out.push(case(
        "matmul",
        "b",
        finite_diff_check(
            |t, x| {
                let av = t.constant(ma.clone());
                let y = t.matmul(av, x)?;
                probe(t, y, &mr)
            },
            &mb,
            h,
        ),
    ));

    // conv2d: input, weight and bias, strided and padded.
    let cx = uniform(&[2, 3, 6, 6], -1.0, 1.0, &mut r);
    let cw = uniform(&[4, 3, 3, 3], -0.5, 0.5, &mut r);
    let cb = uniform(&[4], -0.5, 0.5, &mut r);
    let cr = uniform(&[2, 4, 3, 3], -1.0, 1.0, &mut r);
    let conv_probe = |t: &mut Tape, x: Var, w: Var, b: Var| -> Result<Var> {
        let y = conv2d(t, x, w, b, 2, 1)?;
        probe(t, y, &cr)
    };
    out.push(case(
        "conv2d",
        "x",
        finite_diff_check(
            |t, x| {
                let (w, b) = (t.constant(cw.clone()), t.constant(cb.clone()));
                conv_probe(t, x, w, b)
            },
            &cx,
            h,
        ),
    ));
    out.push(case(
        "conv2d",
        "weight",
        finite_diff_check(
            |t, w| {
                let (x, b) = (t.constant(cx.clone()), t.constant(cb.clone()));
                conv_probe(t, x, w, b)
            },
            &cw,
            h,
        ),
    ));
    out.push(case(
        "conv2d",
        "bias",
        finite_diff_check(
            |t, b| {
                let (x, w) = (t.constant(cx.clone()), t.constant(cw.clone()));
                conv_probe(t, x, w, b)
            },
            &cb,
            h,
        ),
    ));

    // Batch norm in both modes.
    let bx = uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut r);
    let bg = uniform(&[2], 0.5, 1.5, &mut r);
    let bb = uniform(&[2], -0.5, 0.5, &mut r);
    let br = uniform(&[3, 2, 3, 3], -1.0, 1.0, &mut r);
    let mean = [r.random_range(-0.3..0.3), r.random_range(-0.3..0.3)];
    let var = [r.random_range(0.5..1.5), r.random_range(0.5..1.5)];
    let bn_train = |t: &mut Tape, x: Var, g: Var, b: Var| -> Result<Var> {
        let (y, _) = batchnorm_train(t, x, g, b, BN_EPS)?;
        probe(t, y, &br)
    };
    out.push(case(
        "batchnorm(train)",
        "x",
        finite_diff_check(
            |t, x| {
                let (g, b) = (t.constant(bg.clone()), t.constant(bb.clone()));
                bn_train(t, x, g, b)
            },
            &bx,
            h,
        ),
    ));
    out.push(case(
        "batchnorm(train)",
        "gamma",
        finite_diff_check(
            |t, g| {
                let (x, b) = (t.constant(bx.clone()), t.constant(bb.clone()));
                bn_train(t, x, g, b)
            },
            &bg,
            h,
        ),
    ));
    out.push(case(
        "batchnorm(train)",
        "beta",
        finite_diff_check(
            |t, b| {
                let (x, g) = (t.constant(bx.clone()), t.constant(bg.clone()));
                bn_train(t, x, g, b)
            },
            &bb,
            h,
        ),
    ));
    let bn_eval = |t: &mut Tape, x: Var, g: Var, b: Var| -> Result<Var> {
        let y = batchnorm_eval(t, x, g, b, &mean, &var, BN_EPS)?;
        probe(t, y, &br)
    };
    out.push(case(
        "batchnorm(eval)",
        "x",
        finite_diff_check(
            |t, x| {
                let (g, b) = (t.constant(bg.clone()), t.constant(bb.clone()));
                bn_eval(t, x, g, b)
            },
            &bx,
            h,
        ),
    ));
    out.push(case(
        "batchnorm(eval)",
        "gamma",
        finite_diff_check(
            |t, g| {
                let (x, b) = (t.constant(bx.clone()), t.constant(bb.clone()));
                bn_eval(t, x, g, b)
            },
            &bg,
            h,
        ),
    ));
    out.push(case(
        "batchnorm(eval)",
        "beta",
        finite_diff_check(
            |t, b| {
                let (x, g) = (t.constant(bx.clone()), t.constant(bg.clone()));
                bn_eval(t, x, g, b)
            },
            &bb,
            h,
        ),
    ));

    let rx = away_from_zero(&[2, 3, 4], 0.01, 1.0, &mut r);
    let rrr = uniform(&[2, 3, 4], -1.0, 1.0, &mut r);
    out.push(case(
        "relu",
        "x",
        finite_diff_check(
            |t, x| {
                let y = relu(t, x)?;
                probe(t, y, &rrr)
            },
            &rx,
            h,
        ),
    ));

    let gx = uniform(&[2, 3, 4, 4], -1.0, 1.0, &mut r);
    let gr = uniform(&[2, 3], -1.0, 1.0, &mut r);
    out.push(case(
        "global_avg_pool",
        "x",
        finite_diff_check(
            |t, x| {
                let y = global_avg_pool(t, x)?;
                probe(t, y, &gr)
            },
            &gx,
            h,
        ),
    ));

    let lx = uniform(&[3, 5], -1.0, 1.0, &mut r);
    let lw = uniform(&[4, 5], -1.0, 1.0, &mut r);
    let lb = uniform(&[4], -1.0, 1.0, &mut r);
    let lr = uniform(&[3, 4], -1.0, 1.0, &mut r);
    let lin = |t: &mut Tape, x: Var, w: Var, b: Var| -> Result<Var> {
        let y = linear(t, x, w, b)?;
        probe(t, y, &lr)
    };
    out.push(case(
        "linear",
        "x",
        finite_diff_check(
            |t, x| {
                let (w, b) = (t.constant(lw.clone()), t.constant(lb.clone()));
                lin(t, x, w, b)
            },
            &lx,
            h,
        ),
    ));
    out.push(case(
        "linear",
        "weight",
        finite_diff_check(
            |t, w| {
                let (x, b) = (t.constant(lx.clone()), t.constant(lb.clone()));
                lin(t, x, w, b)
            },
            &lw,
            h,
        ),
    ));
    out.push(case(
        "linear",
        "bias",
        finite_diff_check(
            |t, b| {
                let (x, w) = (t.constant(lx.clone()), t.constant(lw.clone()));
                lin(t, x, w, b)
            },
            &lb,
            h,
        ),
    ));

    let logits = uniform(&[4, 10], -3.0, 3.0, &mut r);
    let labels: Vec<usize> = (0..4).map(|_| r.random_range(0..10)).collect();
    out.push(case(
        "softmax_cross_entropy",
        "logits",
        finite_diff_check(|t, x| softmax_cross_entropy(t, x, &labels), &logits, h),
    ));

    // Attention fusion over 4 branches of 3×5 logits.
    let (n, rows, c) = (4, 3, 5);
    let zs: Vec<Tensor> = (0..n).map(|_| uniform(&[rows, c], -2.0, 2.0, &mut r)).collect();
    let fr = uniform(&[rows, c], -1.0, 1.0, &mut r);
    let hard_w: Vec<f64> = (0..n).map(|_| r.random_range(-1.0..1.0)).collect();
    let scalar_w = uniform(&[n], -1.0, 1.0, &mut r);
    let perclass_w = uniform(&[n, c], -1.0, 1.0, &mut r);
    let branches_with = |t: &mut Tape, k: usize, x: Var| -> Vec<Var> {
        (0..n).map(|i| if i == k { x } else { t.constant(zs[i].clone()) }).collect()
    };
    let mut worst_hard = 0.0f64;
    let mut worst_scalar = 0.0f64;
    let mut worst_perclass = 0.0f64;
    for k in 0..n {
        let e = finite_diff_check(
            |t, x| {
                let z = branches_with(t, k, x);
                let y = attention_fuse_hard(t, &z, &hard_w)?;
                probe(t, y, &fr)
            },
            &zs[k],
            h,
        )
        .unwrap();
        worst_hard = worst_hard.max(e);
        let e = finite_diff_check(
            |t, x| {
                let z = branches_with(t, k, x);
                let w = t.constant(scalar_w.clone());
                let y = attention_fuse_soft_scalar(t, &z, w)?;
                probe(t, y, &fr)
            },
            &zs[k],
            h,
        )
        .unwrap();
        worst_scalar = worst_scalar.max(e);
        let e = finite_diff_check(
            |t, x| {
                let z = branches_with(t, k, x);
                let w = t.constant(perclass_w.clone());
                let y = attention_fuse_soft_perclass(t, &z, w)?;
                probe(t, y, &fr)
            },
            &zs[k],
            h,
        )
        .unwrap();
        worst_perclass = worst_perclass.max(e);
    }
    out.push(GradCase { op: "fuse_hard", wrt: "branch logits", error: worst_hard });
    out.push(GradCase { op: "fuse_soft_scalar", wrt: "branch logits", error: worst_scalar });
    out.push(GradCase { op: "fuse_soft_perclass", wrt: "branch logits", error: worst_perclass });
    out.push(case(
        "fuse_soft_scalar",
        "weights",
        finite_diff_check(
            |t, w| {
                let z: Vec<Var> = zs.iter().map(|z| t.constant(z.clone())).collect();
                let y = attention_fuse_soft_scalar(t, &z, w)?;
                probe(t, y, &fr)
            },
            &scalar_w,
            h,
        ),
    ));
    out.push(case(
        "fuse_soft_perclass",
        "weights",
        finite_diff_check(
            |t, w| {
                let z: Vec<Var> = zs.iter().map(|z| t.constant(z.clone())).collect();
                let y = attention_fuse_soft_perclass(t, &z, w)?;
                probe(t, y, &fr)
            },
            &perclass_w,
            h,
        ),
    ));
    out
}

/// Largest absolute deviation from the loop oracles for each op over
/// `trials` random shapes with every dimension ≤ 16 and entries in [−1, 1].
pub fn oracle_deviations(seed: u64, trials: usize) -> Vec<(&'static str, f64)> {
    let mut r = rng(seed);
    let (mut conv, mut mm, mut gap, mut lin) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for _ in 0..trials {
        let mut t = Tape::new();

        let (m, k, n) = (r.random_range(1..=16), r.random_range(1..=16), r.random_range(1..=16));
        let a = uniform(&[m, k], -1.0, 1.0, &mut r);
        let b = uniform(&[k, n], -1.0, 1.0, &mut r);
        let (av, bv) = (t.constant(a.clone()), t.constant(b.clone()));
        let y = t.matmul(av, bv).unwrap();
        mm = mm.max(t.value(y).max_abs_diff(&matmul_oracle(&a, &b)));

        let kernel = [1, 3, 5][r.random_range(0..3)];
        let pad = r.random_range(0..=kernel / 2);
        let stride = r.random_range(1..=2);
        let hh = r.random_range(kernel.max(2)..=16);
        let ww = r.random_range(kernel.max(2)..=16);
        let (bn, ci, co) = (r.random_range(1..=3), r.random_range(1..=4), r.random_range(1..=5));
        let x = uniform(&[bn, ci, hh, ww], -1.0, 1.0, &mut r);
        let w = uniform(&[co, ci, kernel, kernel], -1.0, 1.0, &mut r);
        let bias = uniform(&[co], -1.0, 1.0, &mut r);
        let (xv, wv, bv) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(bias.clone()));
        let y = conv2d(&mut t, xv, wv, bv, stride, pad).unwrap();
        conv = conv.max(t.value(y).max_abs_diff(&conv_oracle(&x, &w, &bias, stride, pad)));

        let y = global_avg_pool(&mut t, xv).unwrap();
        gap = gap.max(t.value(y).max_abs_diff(&gap_oracle(&x)));

        let (rows, fin, fout) = (r.random_range(1..=16), r.random_range(1..=16), r.random_range(1..=16));
        let x = uniform(&[rows, fin], -1.0, 1.0, &mut r);
        let w = uniform(&[fout, fin], -1.0, 1.0, &mut r);
        let bias = uniform(&[fout], -1.0, 1.0, &mut r);
        let (xv, wv, bv) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(bias.clone()));
        let y = linear(&mut t, xv, wv, bv).unwrap();
        lin = lin.max(t.value(y).max_abs_diff(&linear_oracle(&x, &w, &bias)));
    }
    vec![("conv2d", conv), ("matmul", mm), ("global_avg_pool", gap), ("linear", lin)]
}

/// The fixed conv example: random 2×3×8×8 input, 4 filters, stride 2, pad 1.
pub fn conv_reference_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let x = uniform(&[2, 3, 8, 8], -1.0, 1.0, &mut r);
    let w = uniform(&[4, 3, 3, 3], -1.0, 1.0, &mut r);
    let b = uniform(&[4], -1.0, 1.0, &mut r);
    let mut t = Tape::new();
    let (xv, wv, bv) = (t.constant(x.clone()), t.constant(w.clone()), t.constant(b.clone()));
    let y = conv2d(&mut t, xv, wv, bv, 2, 1).unwrap();
    assert_eq!(t.value(y).shape(), &[2, 4, 4, 4]);
    t.value(y).max_abs_diff(&conv_oracle(&x, &w, &b, 2, 1))
}

/// Outcomes of the fusion algebra checks for one seed.
pub struct FusionReport {
    /// Hard fuse with the 4-branch manual weights versus a hand loop.
    pub hard4_dev: f64,
    /// Hard fuse with the 7-branch manual weights versus a hand loop.
    pub hard7_dev: f64,
    /// One-hot soft weights return the selected branch bit for bit.
    pub one_hot_bitwise: bool,
    /// Per-class weights constant across classes equal the scalar fuse bit for bit.
    pub perclass_constant_bitwise: bool,
    /// Fused logits of a one-hot interflow model versus the plain model.
    pub normal_equivalence_dev: f64,
}

fn hand_combination(zs: &[Tensor], w: &[f64]) -> Tensor {
    let mut out = vec![0.0; zs[0].len()];
    for (z, &wi) in zs.iter().zip(w) {
        for (o, &v) in out.iter_mut().zip(z.data()) {
            *o += wi * v;
        }
    }
    Tensor::new(zs[0].shape().to_vec(), out).unwrap()
}

pub fn fusion_report(seed: u64) -> FusionReport {
    use interflow::interflow::initial_weights;

    let mut r = rng(seed);
    let (rows, c) = (3, 10);
    let mut t = Tape::new();
    let mut dev = |n: usize, r: &mut rand_chacha::ChaCha8Rng| {
        let zs: Vec<Tensor> = (0..n).map(|_| uniform(&[rows, c], -3.0, 3.0, r)).collect();
        let w = initial_weights(n);
        let vars: Vec<Var> = zs.iter().map(|z| t.constant(z.clone())).collect();
        let y = attention_fuse_hard(&mut t, &vars, &w).unwrap();
        t.value(y).max_abs_diff(&hand_combination(&zs, &w))
    };
    let hard4_dev = dev(4, &mut r);
    let hard7_dev = dev(7, &mut r);

    let n = 4;
    let zs: Vec<Tensor> = (0..n).map(|_| uniform(&[rows, c], -3.0, 3.0, &mut r)).collect();
    let vars: Vec<Var> = zs.iter().map(|z| t.constant(z.clone())).collect();
    let mut one_hot_bitwise = true;
    for k in 0..n {
        let mut w = vec![0.0; n];
        w[k] = 1.0;
        let wv = t.constant(Tensor::from_vec(w.clone()));
        let y = attention_fuse_soft_scalar(&mut t, &vars, wv).unwrap();
        one_hot_bitwise &= t.value(y).bit_eq(&zs[k]);
        let wp: Vec<f64> = (0..n * c).map(|j| if j / c == k { 1.0 } else { 0.0 }).collect();
        let wv = t.constant(Tensor::new(vec![n, c], wp).unwrap());
        let y = attention_fuse_soft_perclass(&mut t, &vars, wv).unwrap();
        one_hot_bitwise &= t.value(y).bit_eq(&zs[k]);
    }

    let w: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
    let ws = t.constant(Tensor::from_vec(w.clone()));
    let wp = t.constant(Tensor::new(vec![n, c], (0..n * c).map(|j| w[j / c]).collect()).unwrap());
    let ys = attention_fuse_soft_scalar(&mut t, &vars, ws).unwrap();
    let yp = attention_fuse_soft_perclass(&mut t, &vars, wp).unwrap();
    let perclass_constant_bitwise = t.value(ys).bit_eq(t.value(yp));

    FusionReport {
        hard4_dev,
        hard7_dev,
        one_hot_bitwise,
        perclass_constant_bitwise,
        normal_equivalence_dev: normal_equivalence(seed),
    }
}

/// A plain model and a 3-branch soft scalar model sharing every parameter,
/// with the fuse weights one-hot on the last branch. Returns the largest
/// logit difference over train-mode and eval-mode passes.
pub fn normal_equivalence(seed: u64) -> f64 {
    use interflow::interflow::{BackboneSpec, InterflowModel, Method, ModelSpec};
    use interflow::layers::Mode;
    use interflow::params::Binder;

    let backbone = BackboneSpec {
        input_channels: 2,
        channels: vec![4, 6, 6, 8],
        strides: vec![1, 2, 1, 2],
    };
    let mut normal = InterflowModel::new(ModelSpec::normal(backbone.clone(), 5).unwrap(), seed).unwrap();
    let spec = ModelSpec::for_method(Method::S(1), backbone, Some(vec![1, 3, 4]), 5).unwrap();
    let mut inter = InterflowModel::new(spec, seed ^ 0xFFFF).unwrap();
    for (_, p) in normal.params.iter() {
        let id = inter.params.find(&p.name).expect("same parameter names");
        inter.params.set_value(id, p.value.clone()).unwrap();
    }
    let att = inter.attention.as_ref().unwrap().weights;
    inter.params.set_value(att, Tensor::from_vec(vec![0.0, 0.0, 1.0])).unwrap();

    let x = uniform(&[3, 2, 8, 8], -1.0, 1.0, &mut rng(seed));
    let mut worst = 0.0f64;
    for mode in [Mode::Train, Mode::Eval, Mode::Train, Mode::Eval] {
        let mut outs = Vec::new();
        for m in [&mut normal, &mut inter] {
            let mut t = Tape::new();
            let mut b = Binder::new();
            let xv = t.constant(x.clone());
            let o = m.forward(&mut t, &mut b, xv, mode).unwrap();
            outs.push(t.value(o.logits).clone());
        }
        worst = worst.max(outs[0].max_abs_diff(&outs[1]));
    }
    worst
}

/// The method table, as `(name, interflow, branches, shared, initialization, learned)`.
pub const METHOD_TABLE: [(&str, bool, usize, bool, bool, bool); 11] = [
    ("Normal", false, 0, false, false, false),
    ("S0", true, 4, true, true, false),
    ("S1", true, 4, true, false, true),
    ("S2", true, 4, true, true, true),
    ("S3", true, 4, false, false, true),
    ("S4", true, 4, false, true, true),
    ("S5", true, 7, true, true, false),
    ("S6", true, 7, true, false, true),
    ("S7", true, 7, true, true, true),
    ("S8", true, 7, false, false, true),
    ("S9", true, 7, false, true, true),
];

/// Field-by-field mismatches between `resolve_method_config` and the table.
pub fn method_table_mismatches() -> Vec<String> {
    use interflow::interflow::{resolve_method_config, Method};
    let mut bad = Vec::new();
    for (name, interflow, branches, shared, init, learned) in METHOD_TABLE {
        let cfg = resolve_method_config(name.parse::<Method>().unwrap()).unwrap();
        let mut check = |field: &str, ok: bool| {
            if !ok {
                bad.push(format!("{name}.{field}"));
            }
        };
        check("name", cfg.name == name);
        check("interflow", cfg.interflow == interflow);
        if interflow {
            check("branches", cfg.branches == branches);
            check("shared", cfg.shared_per_class == shared);
            check("initialization", cfg.initialization == init);
            check("learned", cfg.learned == learned);
        }
    }
    bad
}

/// A dataset whose pixels are exact multiples of 1/255, so byte formats
/// reproduce it bit for bit.
pub fn byte_dataset(n: usize, c: usize, h: usize, w: usize, classes: usize, seed: u64) -> interflow::data::Dataset {
    use interflow::data::{Dataset, Split};
    let mut r = rng(seed);
    let px = (0..n * c * h * w).map(|_| f64::from(r.random_range(0..=255u8)) / 255.0).collect();
    let labels = (0..n).map(|_| r.random_range(0..classes)).collect();
    Dataset::new(Tensor::new(vec![n, c, h, w], px).unwrap(), labels, classes, Split::Train).unwrap()
}

/// Round-trip and corruption checks for both binary formats, each named
/// with whether it held. Corruptions must fail with a byte offset.
pub fn format_checks(dir: &std::path::Path) -> Vec<(&'static str, bool)> {
    use interflow::data::{load_cifar_binary, load_idx, write_cifar_binary, write_idx, CifarVariant, Split};
    use interflow::Error;
    use std::fs;

    let offset_of = |r: interflow::Result<interflow::data::Dataset>| match r {
        Err(Error::Format { offset, .. }) => Some(offset),
        _ => None,
    };
    let mut out = Vec::new();

    let ds = byte_dataset(7, 1, 5, 4, 10, 1);
    let (img, lab) = (dir.join("img.idx"), dir.join("lab.idx"));
    write_idx(&ds, &img, &lab).unwrap();
    let back = load_idx(&img, &lab, Split::Train).unwrap();
    out.push(("idx round trip", back.images.bit_eq(&ds.images) && back.labels == ds.labels));

    let img_bytes = fs::read(&img).unwrap();
    let lab_bytes = fs::read(&lab).unwrap();
    let write = |name: &str, bytes: &[u8]| {
        let p = dir.join(name);
        fs::write(&p, bytes).unwrap();
        p
    };
    let mut bad = img_bytes.clone();
    bad[3] = 0x01;
    let p = write("bad_magic.idx", &bad);
    out.push(("idx wrong magic", offset_of(load_idx(&p, &lab, Split::Train)) == Some(0)));
    let p = write("trunc.idx", &img_bytes[..img_bytes.len() - 5]);
    out.push(("idx truncated", offset_of(load_idx(&p, &lab, Split::Train)).is_some()));
    let mut fewer = lab_bytes[..lab_bytes.len() - 1].to_vec();
    fewer[7] -= 1;
    let p = write("fewer.idx", &fewer);
    out.push(("idx count mismatch", offset_of(load_idx(&img, &p, Split::Train)) == Some(4)));
    let mut big = lab_bytes.clone();
    big[8 + 2] = 10;
    let p = write("label10.idx", &big);
    out.push(("idx label out of range", offset_of(load_idx(&img, &p, Split::Train)) == Some(10)));

    for (variant, classes, name) in [(CifarVariant::Cifar10, 10, "cifar10"), (CifarVariant::Cifar100, 100, "cifar100")] {
        let ds = byte_dataset(3, 3, 32, 32, classes, 2);
        let p = dir.join(format!("{name}.bin"));
        write_cifar_binary(&ds, &p, variant).unwrap();
        let back = load_cifar_binary(&[&p], variant, Split::Train).unwrap();
        out.push((
            if classes == 10 { "cifar10 round trip" } else { "cifar100 round trip" },
            back.images.bit_eq(&ds.images) && back.labels == ds.labels,
        ));
    }
    let p = write("short.bin", &vec![1u8; 3072]);
    out.push(("cifar 3072-byte file", offset_of(load_cifar_binary(&[&p], CifarVariant::Cifar10, Split::Train)).is_some()));
    let ds = byte_dataset(4, 3, 32, 32, 10, 3);
    let p = dir.join("c10.bin");
    write_cifar_binary(&ds, &p, CifarVariant::Cifar10).unwrap();
    let mut bytes = fs::read(&p).unwrap();
    let p = write("c10_trunc.bin", &bytes[..bytes.len() - 1]);
    out.push(("cifar truncated", offset_of(load_cifar_binary(&[&p], CifarVariant::Cifar10, Split::Train)) == Some(3 * 3073)));
    bytes[2 * 3073] = 10;
    let p = write("c10_label.bin", &bytes);
    out.push(("cifar label >= 10", offset_of(load_cifar_binary(&[&p], CifarVariant::Cifar10, Split::Train)) == Some(2 * 3073)));
    out
}

/// Where real MNIST files are looked for: `INTERFLOW_MNIST_DIR`, else the
/// workspace `data/mnist`.
pub fn mnist_dir() -> Option<std::path::PathBuf> {
    let dir = std::env::var_os("INTERFLOW_MNIST_DIR")
        .map(std::path::PathBuf::from)
        .unwrap_or_else(|| std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist"));
    dir.join("train-images-idx3-ubyte").is_file().then_some(dir)
}

/// Iterates the momentum recurrence on f(x) = ½x² as a 2×2 linear map on
/// (x, v), independently of the optimizer code.
pub fn quadratic_trajectory(x0: f64, lr: f64, mu: f64, decay: f64, steps: usize) -> Vec<f64> {
    let k = 1.0 + decay;
    // v' = μv + kx ; x' = x − lr·v' = (1 − lr·k)x − lr·μ·v
    let a = [[1.0 - lr * k, -lr * mu], [k, mu]];
    let mut state = [x0, 0.0];
    let mut xs = Vec::new();
    for _ in 0..steps {
        state = [
            a[0][0] * state[0] + a[0][1] * state[1],
            a[1][0] * state[0] + a[1][1] * state[1],
        ];
        xs.push(state[0]);
    }
    xs
}

/// A one-epoch run record carrying only what the statistics read.
pub fn record(weights: Vec<f64>, acc: f64) -> RunRecord {
    RunRecord {
        per_epoch: vec![EpochMetrics {
            epoch: 1,
            train_loss: 0.0,
            train_acc: 0.0,
            test_acc: acc,
            lr: 0.1,
        }],
        attention_shape: vec![weights.len()],
        final_attention_weights: weights,
        seed: 0,
        method: "S1".into(),
    }
}
