//! Every gradient case as a list of named reports, shared by the gradient
//! tests and the acceptance run. Ten seeds per case.

use super::{grad_check, grad_check_weighted, random_tensor, spaced_tensor, GradReport};
use bss_vision::autograd::{Tape, Tensor, Var};
use bss_vision::nn::{
    conv2d, global_avg_pool, linear, maxpool2d_with_indices, maxunpool2d, BatchNorm2d, Mode, ResidualBlock,
};
use bss_vision::rng::seeded;
use bss_vision::train::{bce_loss, cross_entropy_loss};
use rand::seq::SliceRandom;

pub const SEEDS: u64 = 10;

pub type Reports = Vec<(String, GradReport)>;

fn leaves(tape: &mut Tape, vals: &[Tensor]) -> Vec<Var> {
    vals.iter().map(|t| tape.leaf(t.clone())).collect()
}

fn each_seed(
    out: &mut Reports,
    what: &str,
    make: impl Fn(u64) -> Vec<Tensor>,
    build: impl Fn(&mut Tape, &[Var]) -> Var,
) {
    for seed in 0..SEEDS {
        let inputs = make(seed);
        let report = grad_check(&inputs, seed, |tape, vals| {
            let vars = leaves(tape, vals);
            (build(tape, &vars), vars)
        });
        out.push((format!("{what} seed {seed}"), report));
    }
}

pub fn elementwise() -> Reports {
    let mut out = vec![];
    let make = |seed| {
        let mut rng = seeded(seed);
        vec![random_tensor(&mut rng, &[3, 4], -1.0, 1.0), random_tensor(&mut rng, &[3, 4], -1.0, 1.0)]
    };
    each_seed(&mut out, "add", make, |t, v| t.add(v[0], v[1]).unwrap());
    each_seed(&mut out, "sub", make, |t, v| t.sub(v[0], v[1]).unwrap());
    each_seed(&mut out, "mul", make, |t, v| t.mul(v[0], v[1]).unwrap());
    let make_scalar = |seed| {
        let mut rng = seeded(seed + 100);
        vec![random_tensor(&mut rng, &[2, 5], -1.0, 1.0), random_tensor(&mut rng, &[1], 0.5, 1.5)]
    };
    each_seed(&mut out, "mul scalar", make_scalar, |t, v| t.mul(v[0], v[1]).unwrap());
    each_seed(&mut out, "sub scalar", make_scalar, |t, v| t.sub(v[0], v[1]).unwrap());
    each_seed(&mut out, "scale", make_scalar, |t, v| t.scale(v[0], -1.5).unwrap());
    out
}

pub fn matmul() -> Reports {
    let mut out = vec![];
    let make = |seed| {
        let mut rng = seeded(seed);
        vec![random_tensor(&mut rng, &[3, 4], 0.1, 1.0), random_tensor(&mut rng, &[4, 2], 0.1, 1.0)]
    };
    each_seed(&mut out, "matmul", make, |t, v| t.matmul(v[0], v[1]).unwrap());
    // The plain sum(matmul(a, b)) objective.
    each_seed(&mut out, "sum matmul", make, |t, v| {
        let m = t.matmul(v[0], v[1]).unwrap();
        t.sum(m).unwrap()
    });
    out
}

pub fn activations() -> Reports {
    let mut out = vec![];
    let make = |seed| {
        let mut rng = seeded(seed);
        vec![random_tensor(&mut rng, &[2, 3, 4], -2.0, 2.0)]
    };
    each_seed(&mut out, "relu", make, |t, v| t.relu(v[0]).unwrap());
    each_seed(&mut out, "sigmoid", make, |t, v| t.sigmoid(v[0]).unwrap());
    each_seed(&mut out, "sum", make, |t, v| t.sum(v[0]).unwrap());
    each_seed(&mut out, "mean", make, |t, v| t.mean(v[0]).unwrap());
    each_seed(&mut out, "reshape", make, |t, v| t.reshape(v[0], &[6, 4]).unwrap());
    out
}

pub fn chain() -> Reports {
    let mut out = vec![];
    let make = |seed| {
        let mut rng = seeded(seed);
        vec![
            random_tensor(&mut rng, &[4, 3], 0.1, 1.0),
            random_tensor(&mut rng, &[3, 5], 0.1, 1.0),
            random_tensor(&mut rng, &[4, 5], -1.0, 1.0),
        ]
    };
    each_seed(&mut out, "chain", make, |t, v| {
        let m = t.matmul(v[0], v[1]).unwrap();
        let s = t.sigmoid(m).unwrap();
        let p = t.mul(s, v[2]).unwrap();
        let r = t.relu(p).unwrap();
        let q = t.add(r, s).unwrap();
        let sq = t.mul(q, q).unwrap();
        let scaled = t.scale(sq, 0.5).unwrap();
        t.reshape(scaled, &[20]).unwrap()
    });
    out
}

pub fn conv() -> Reports {
    let mut out = vec![];
    for (stride, pad, k) in [(1, 1, 3), (1, 0, 3), (2, 1, 3), (1, 0, 1), (2, 0, 1)] {
        let make = |seed| {
            let mut rng = seeded(seed);
            vec![
                random_tensor(&mut rng, &[1, 2, 5, 5], 0.0, 1.0),
                random_tensor(&mut rng, &[3, 2, k, k], 0.1, 1.0),
                random_tensor(&mut rng, &[3], -1.0, 1.0),
            ]
        };
        each_seed(&mut out, &format!("conv2d s{stride} p{pad} k{k}"), make, |t, v| {
            conv2d(t, v[0], v[1], Some(v[2]), stride, pad).unwrap()
        });
    }
    out
}

pub fn pooling() -> Reports {
    let mut out = vec![];
    let make = |seed| {
        let mut rng = seeded(seed);
        vec![spaced_tensor(&mut rng, &[2, 2, 4, 6], -1.0, 1.0)]
    };
    each_seed(&mut out, "maxpool", make, |t, v| maxpool2d_with_indices(t, v[0]).unwrap().0);

    // Indices from a fixed map, gradient taken through the unpooled values.
    for seed in 0..SEEDS {
        let mut rng = seeded(seed);
        let source = random_tensor(&mut rng, &[1, 2, 4, 4], -1.0, 1.0);
        let mut tape = Tape::new();
        let s = tape.constant(source);
        let (_, idx) = maxpool2d_with_indices(&mut tape, s).unwrap();
        let inputs = vec![random_tensor(&mut rng, &[1, 2, 2, 2], -1.0, 1.0)];
        let report = grad_check(&inputs, seed, |tape, vals| {
            let vars = leaves(tape, vals);
            (maxunpool2d(tape, vars[0], &idx).unwrap(), vars)
        });
        out.push((format!("unpool seed {seed}"), report));
    }

    each_seed(&mut out, "global_avg_pool", make, |t, v| global_avg_pool(t, v[0]).unwrap());
    out
}

pub fn linear_layer() -> Reports {
    let mut out = vec![];
    let make = |seed| {
        let mut rng = seeded(seed);
        vec![
            random_tensor(&mut rng, &[3, 4], 0.1, 1.0),
            random_tensor(&mut rng, &[2, 4], 0.1, 1.0),
            random_tensor(&mut rng, &[2], -1.0, 1.0),
        ]
    };
    each_seed(&mut out, "linear", make, |t, v| linear(t, v[0], v[1], v[2]).unwrap());
    out
}

/// Output weights `1 ± 0.9` in balanced random order per channel, redrawn
/// until their correlation with the normalized input is moderate. The
/// train-mode input gradient `γ/σ·(wⱼ − w̄ − x̂ⱼ·mean(w·x̂))` is then bounded
/// well away from zero at every coordinate, and so is the scale gradient.
fn bn_fixture(seed: u64) -> (Vec<Tensor>, Vec<f32>) {
    const SHAPE: [usize; 4] = [2, 2, 3, 3];
    let (batch, channels, plane) = (SHAPE[0], SHAPE[1], SHAPE[2] * SHAPE[3]);
    let mut rng = seeded(seed);
    let x = spaced_tensor(&mut rng, &SHAPE, -1.0, 1.0);
    let mut w = vec![0.0f32; x.numel()];
    for c in 0..channels {
        let idx: Vec<usize> = (0..batch)
            .flat_map(|n| (0..plane).map(move |i| (n * channels + c) * plane + i))
            .collect();
        let vals: Vec<f64> = idx.iter().map(|&i| x.data()[i] as f64).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
        let mut signs: Vec<f64> = (0..idx.len()).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        loop {
            signs.shuffle(&mut rng);
            let corr = signs.iter().zip(&vals).map(|(s, v)| s * (v - mean) / sd).sum::<f64>() / vals.len() as f64;
            if (0.1..0.3).contains(&corr.abs()) {
                break;
            }
        }
        for (&i, s) in idx.iter().zip(&signs) {
            w[i] = (1.0 + 0.9 * s) as f32;
        }
    }
    let inputs = vec![x, random_tensor(&mut rng, &[2], 0.8, 1.2), random_tensor(&mut rng, &[2], -0.2, 0.2)];
    (inputs, w)
}

pub fn batchnorm(mode: Mode) -> Reports {
    let mut out = vec![];
    for seed in 0..SEEDS {
        let (inputs, weights) = bn_fixture(seed);
        let mut rng = seeded(seed + 1000);
        let mut template = BatchNorm2d::new("bn", 2);
        template.running_mean.value = random_tensor(&mut rng, &[2], -0.5, 0.5);
        template.running_var.value = random_tensor(&mut rng, &[2], 0.5, 1.5);
        let report = grad_check_weighted(&inputs, &weights, |tape, vals| {
            let mut bn = template.clone();
            // Trainable in both passes so the layer never counts as frozen.
            bn.gamma.value = vals[1].clone().with_requires_grad(true);
            bn.beta.value = vals[2].clone().with_requires_grad(true);
            let x = tape.leaf(vals[0].clone());
            let y = bn.forward(tape, x, mode).unwrap();
            let g = tape.param_var("bn.gamma").unwrap();
            let b = tape.param_var("bn.beta").unwrap();
            (y, vec![x, g, b])
        });
        out.push((format!("batchnorm {mode:?} seed {seed}"), report));
    }
    out
}

/// Eval-mode block with every activation positive, so each gradient is a
/// sum of same-signed terms. In train mode the convolution biases feeding
/// a batch norm have an exactly zero gradient and a central difference
/// there measures rounding alone; the train-mode normalization itself is
/// covered by the batch-norm cases.
pub fn residual(in_ch: usize, out_ch: usize, stride: usize) -> Reports {
    let mut out = vec![];
    for seed in 0..SEEDS {
        let mut rng = seeded(seed);
        let mut template = ResidualBlock::new("blk", in_ch, out_ch, stride, &mut rng);
        for p in template.params_mut() {
            let shape = p.value.shape().to_vec();
            let (lo, hi) = match p.name.rsplit('.').next().unwrap() {
                "weight" => (0.1, 0.5),
                "bias" => (0.0, 0.05),
                "gamma" => (0.5, 1.5),
                "beta" => (0.0, 0.1),
                "running_mean" => (-0.1, 0.0),
                _ => (0.5, 1.5),
            };
            let trainable = p.trainable;
            p.value = random_tensor(&mut rng, &shape, lo, hi).with_requires_grad(trainable);
        }
        let names: Vec<String> = template.params().iter().filter(|p| p.trainable).map(|p| p.name.clone()).collect();
        let mut inputs = vec![random_tensor(&mut rng, &[4, in_ch, 4, 4], 0.0, 1.0)];
        inputs.extend(template.params().iter().filter(|p| p.trainable).map(|p| p.value.clone()));
        let report = grad_check(&inputs, seed, |tape, vals| {
            let mut block = template.clone();
            let mut it = vals[1..].iter();
            for p in block.params_mut().into_iter().filter(|p| p.trainable) {
                p.value = it.next().unwrap().clone().with_requires_grad(true);
            }
            let x = tape.leaf(vals[0].clone());
            let y = block.forward(tape, x, Mode::Eval).unwrap();
            let mut handles = vec![x];
            handles.extend(names.iter().map(|n| tape.param_var(n).unwrap()));
            (y, handles)
        });
        out.push((format!("residual {in_ch}->{out_ch} s{stride} seed {seed}"), report));
    }
    out
}

pub fn bce() -> Reports {
    let mut out = vec![];
    for seed in 0..SEEDS {
        let mut rng = seeded(seed + 500);
        let pred = spaced_tensor(&mut rng, &[2, 3], 0.1, 0.9);
        let target = Tensor::new(vec![2, 3], (0..6).map(|i| ((i + seed as usize) % 2) as f32).collect()).unwrap();
        let report = grad_check(&[pred], seed, |tape, vals| {
            let vars = leaves(tape, vals);
            (bce_loss(tape, vars[0], &target).unwrap(), vars)
        });
        out.push((format!("bce seed {seed}"), report));
    }
    out
}

pub fn cross_entropy() -> Reports {
    let mut out = vec![];
    for seed in 0..SEEDS {
        let mut rng = seeded(seed + 600);
        let labels = [seed as usize % 3, (seed as usize + 1) % 3];
        let mut logits = random_tensor(&mut rng, &[2, 3], -0.5, 0.5);
        for (row, &l) in labels.iter().enumerate() {
            logits.data_mut()[row * 3 + l] += 2.0;
        }
        let report = grad_check(&[logits], seed, |tape, vals| {
            let vars = leaves(tape, vals);
            (cross_entropy_loss(tape, vars[0], &labels).unwrap(), vars)
        });
        out.push((format!("cross entropy seed {seed}"), report));
    }
    out
}

pub fn all() -> Reports {
    [
        elementwise(),
        matmul(),
        activations(),
        chain(),
        conv(),
        pooling(),
        linear_layer(),
        batchnorm(Mode::Train),
        batchnorm(Mode::Eval),
        residual(2, 2, 1),
        residual(2, 3, 2),
        bce(),
        cross_entropy(),
    ]
    .concat()
}
