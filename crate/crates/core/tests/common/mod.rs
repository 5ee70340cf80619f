//! Independent reference implementations shared by the test targets.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use slc_core::model::{Census, MlpKind, Model, ModelConfig};
use slc_core::numerics::{
    cross_entropy, cross_entropy_backward, gelu, gelu_backward, layer_norm, layer_norm_backward, matmul,
    matmul_backward, Exec, Tensor,
};
use slc_core::transforms::{fwht, BlockDiagLayer, BlockHadamard, FastFoodLayer, RectAdapter};

pub type Mat = Vec<Vec<f64>>;

pub fn normals(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Sylvester construction `H₂ₙ = [[H, H], [H, −H]]`.
pub fn hadamard(n: usize) -> Mat {
    let mut h = vec![vec![1.0]];
    while h.len() < n {
        let m = h.len();
        let mut next = vec![vec![0.0; 2 * m]; 2 * m];
        for i in 0..m {
            for j in 0..m {
                next[i][j] = h[i][j];
                next[i][j + m] = h[i][j];
                next[i + m][j] = h[i][j];
                next[i + m][j + m] = -h[i][j];
            }
        }
        h = next;
    }
    h
}

pub fn identity(n: usize) -> Mat {
    (0..n)
        .map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect())
        .collect()
}

pub fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    (0..n)
        .map(|i| (0..m).map(|j| (0..k).map(|l| a[i][l] * b[l][j]).sum()).collect())
        .collect()
}

pub fn scale_rows(d: &[f64], a: &Mat) -> Mat {
    a.iter()
        .zip(d)
        .map(|(row, s)| row.iter().map(|v| v * s).collect())
        .collect()
}

pub fn scale(a: &Mat, s: f64) -> Mat {
    a.iter().map(|r| r.iter().map(|v| v * s).collect()).collect()
}

pub fn kron(a: &Mat, b: &Mat) -> Mat {
    let (ar, ac, br, bc) = (a.len(), a[0].len(), b.len(), b[0].len());
    let mut out = vec![vec![0.0; ac * bc]; ar * br];
    for i in 0..ar {
        for j in 0..ac {
            for k in 0..br {
                for l in 0..bc {
                    out[i * br + k][j * bc + l] = a[i][j] * b[k][l];
                }
            }
        }
    }
    out
}

/// `y = M x` for every row `x` of a row-major batch.
pub fn apply_rows(m: &Mat, x: &[f64]) -> Vec<f64> {
    let n = m[0].len();
    x.chunks(n)
        .flat_map(|row| {
            m.iter()
                .map(move |r| r.iter().zip(row).map(|(a, b)| a * b).sum::<f64>())
        })
        .collect()
}

/// Matrix of the FastFood map `D3 (H/√n) D2 (H/√n) D1`.
pub fn fastfood_matrix(d1: &[f64], d2: &[f64], d3: &[f64]) -> Mat {
    let n = d1.len();
    let h = scale(&hadamard(n), 1.0 / (n as f64).sqrt());
    let inner = mat_mul(&h, &scale_rows(d1, &identity(n)));
    let inner = mat_mul(&h, &scale_rows(d2, &inner));
    scale_rows(d3, &inner)
}

/// Matrix (acting on column vectors) of a block-diagonal layer whose
/// blocks `[b, n_in/b, n_out/b]` map row vectors `x_blk ↦ x_blk · B`.
pub fn block_diag_matrix(blocks: &[f64], b: usize, n_in: usize, n_out: usize) -> Mat {
    let (ki, ko) = (n_in / b, n_out / b);
    let mut m = vec![vec![0.0; n_in]; n_out];
    for blk in 0..b {
        for r in 0..ki {
            for c in 0..ko {
                m[blk * ko + c][blk * ki + r] = blocks[blk * ki * ko + r * ko + c];
            }
        }
    }
    m
}

/// `(H_b ⊗ I_k) / √b`.
pub fn block_hadamard_matrix(b: usize, k: usize) -> Mat {
    scale(&kron(&hadamard(b), &identity(k)), 1.0 / (b as f64).sqrt())
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Worst error of each transform against its materialized matrix over
/// widths up to 64, and worst error of `fwht(fwht(x)) = n·x` up to 1024.
pub fn transform_oracle_errors(seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let rows = 3;
    for log in 0..=6 {
        let n = 1usize << log;
        let x = normals(&mut rng, rows * n);
        let xt = Tensor::new(&[rows, n], x.clone()).unwrap();
        worst = worst.max(max_abs_diff(
            fwht(&xt, false).unwrap().data(),
            &apply_rows(&hadamard(n), &x),
        ));

        let (d1, d2, d3) = (normals(&mut rng, n), normals(&mut rng, n), normals(&mut rng, n));
        let t = |v: &[f64]| Tensor::new(&[n], v.to_vec()).unwrap();
        let ff = FastFoodLayer::new(t(&d1), t(&d2), t(&d3)).unwrap();
        worst = worst.max(max_abs_diff(
            ff.apply(&xt).unwrap().data(),
            &apply_rows(&fastfood_matrix(&d1, &d2, &d3), &x),
        ));

        for b in (0..=log).map(|l| 1usize << l) {
            for n_out in [n, 2 * n] {
                let blocks = normals(&mut rng, n * n_out / b);
                let layer = BlockDiagLayer::new(
                    n,
                    n_out,
                    b,
                    Tensor::new(&[b, n / b, n_out / b], blocks.clone()).unwrap(),
                )
                .unwrap();
                worst = worst.max(max_abs_diff(
                    layer.apply(&xt).unwrap().data(),
                    &apply_rows(&block_diag_matrix(&blocks, b, n, n_out), &x),
                ));
            }
            let bh = BlockHadamard::new(b, n / b).unwrap();
            worst = worst.max(max_abs_diff(
                bh.apply(&xt).unwrap().data(),
                &apply_rows(&block_hadamard_matrix(b, n / b), &x),
            ));
        }
    }
    let mut involution: f64 = 0.0;
    for log in 0..=10 {
        let n = 1usize << log;
        let x = normals(&mut rng, 2 * n);
        let xt = Tensor::new(&[2, n], x.clone()).unwrap();
        let twice = fwht(&fwht(&xt, false).unwrap(), false).unwrap();
        let nx: Vec<f64> = x.iter().map(|v| v * n as f64).collect();
        involution = involution.max(max_abs_diff(twice.data(), &nx));
    }
    (worst, involution)
}

/// Five-point central differences, written independently of the library.
pub fn fd_gradient(mut f: impl FnMut(&[f64]) -> f64, point: &[f64], h: f64) -> Vec<f64> {
    let mut p = point.to_vec();
    (0..p.len())
        .map(|i| {
            let orig = p[i];
            let s = h * orig.abs().max(1.0);
            let mut at = |k: f64| {
                p[i] = orig + k * s;
                let v = f(&p);
                p[i] = orig;
                v
            };
            (at(-2.0) - 8.0 * at(-1.0) + 8.0 * at(1.0) - at(2.0)) / (12.0 * s)
        })
        .collect()
}

pub fn rel_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len());
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-8))
        .fold(0.0, f64::max)
}

const H: f64 = 1e-3;

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn tensor(shape: &[usize], v: &[f64]) -> Tensor<f64> {
    Tensor::new(shape, v.to_vec()).unwrap()
}

/// Relative error of every hand-written backward pass against finite
/// differences of a random linear functional of its forward pass.
pub fn primitive_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let (m, k, n) = (3, 4, 5);
    let (a, b, w) = (
        normals(&mut rng, m * k),
        normals(&mut rng, k * n),
        normals(&mut rng, m * n),
    );
    let (ga, gb) = matmul_backward(&tensor(&[m, n], &w), &tensor(&[m, k], &a), &tensor(&[k, n], &b)).unwrap();
    let mut analytic = ga.data().to_vec();
    analytic.extend_from_slice(gb.data());
    let point = [a.clone(), b.clone()].concat();
    let num = fd_gradient(
        |p| {
            dot(
                &w,
                matmul(&tensor(&[m, k], &p[..m * k]), &tensor(&[k, n], &p[m * k..]))
                    .unwrap()
                    .data(),
            )
        },
        &point,
        H,
    );
    out.push(("matmul", rel_error(&analytic, &num)));

    let (r, d) = (3, 6);
    let x = normals(&mut rng, r * d);
    let gamma: Vec<f64> = normals(&mut rng, d).iter().map(|v| 1.0 + 0.3 * v).collect();
    let beta = normals(&mut rng, d);
    let w = normals(&mut rng, r * d);
    let (_, cache) = layer_norm(&tensor(&[r, d], &x), &tensor(&[d], &gamma), &tensor(&[d], &beta), 1e-5).unwrap();
    let (gx, gg, gbeta) = layer_norm_backward(&tensor(&[r, d], &w), &tensor(&[d], &gamma), &cache).unwrap();
    let analytic = [gx.data(), gg.data(), gbeta.data()].concat();
    let point = [x, gamma, beta].concat();
    let num = fd_gradient(
        |p| {
            let (y, _) = layer_norm(
                &tensor(&[r, d], &p[..r * d]),
                &tensor(&[d], &p[r * d..r * d + d]),
                &tensor(&[d], &p[r * d + d..]),
                1e-5,
            )
            .unwrap();
            dot(&w, y.data())
        },
        &point,
        H,
    );
    out.push(("layer_norm", rel_error(&analytic, &num)));

    let (t, v) = (4, 7);
    let logits = normals(&mut rng, t * v);
    let targets: Vec<usize> = (0..t).map(|i| (3 * i + 1) % v).collect();
    let g = cross_entropy_backward(&tensor(&[t, v], &logits), &targets).unwrap();
    let num = fd_gradient(|p| cross_entropy(&tensor(&[t, v], p), &targets).unwrap(), &logits, H);
    out.push(("cross_entropy", rel_error(g.data(), &num)));

    let xs: Vec<f64> = normals(&mut rng, 16).iter().map(|v| 2.5 * v).collect();
    let analytic: Vec<f64> = xs.iter().map(|&x| gelu_backward(x)).collect();
    let num = fd_gradient(|p| p.iter().map(|&x| gelu(x)).sum(), &xs, H);
    out.push(("gelu", rel_error(&analytic, &num)));
    out
}

/// Same, for the structured operators.
pub fn structured_gradient_errors(seed: u64) -> Vec<(&'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let rows = 3;

    let n = 8;
    let x = normals(&mut rng, rows * n);
    let ds: Vec<f64> = normals(&mut rng, 3 * n).iter().map(|v| 1.0 + 0.5 * v).collect();
    let w = normals(&mut rng, rows * n);
    let ff = |p: &[f64]| {
        FastFoodLayer::new(
            tensor(&[n], &p[..n]),
            tensor(&[n], &p[n..2 * n]),
            tensor(&[n], &p[2 * n..3 * n]),
        )
        .unwrap()
    };
    let g = ff(&ds)
        .backward(&tensor(&[rows, n], &x), &tensor(&[rows, n], &w))
        .unwrap();
    let analytic = [g.x.data(), g.d1.data(), g.d2.data(), g.d3.data()].concat();
    let point = [x.clone(), ds.clone()].concat();
    let num = fd_gradient(
        |p| {
            dot(
                &w,
                ff(&p[rows * n..])
                    .apply(&tensor(&[rows, n], &p[..rows * n]))
                    .unwrap()
                    .data(),
            )
        },
        &point,
        H,
    );
    out.push(("fastfood", rel_error(&analytic, &num)));

    let (n_in, n_out, b) = (8, 12, 4);
    let x = normals(&mut rng, rows * n_in);
    let blocks = normals(&mut rng, n_in * n_out / b);
    let w = normals(&mut rng, rows * n_out);
    let layer = |p: &[f64]| BlockDiagLayer::new(n_in, n_out, b, tensor(&[b, n_in / b, n_out / b], p)).unwrap();
    let g = layer(&blocks)
        .backward(&tensor(&[rows, n_in], &x), &tensor(&[rows, n_out], &w))
        .unwrap();
    let analytic = [g.x.data(), g.blocks.data()].concat();
    let point = [x, blocks].concat();
    let num = fd_gradient(
        |p| {
            dot(
                &w,
                layer(&p[rows * n_in..])
                    .apply(&tensor(&[rows, n_in], &p[..rows * n_in]))
                    .unwrap()
                    .data(),
            )
        },
        &point,
        H,
    );
    out.push(("block_diag", rel_error(&analytic, &num)));

    let bh = BlockHadamard::new(4, 3).unwrap();
    let x = normals(&mut rng, rows * 12);
    let w = normals(&mut rng, rows * 12);
    let g = bh.backward(&tensor(&[rows, 12], &w)).unwrap();
    let num = fd_gradient(|p| dot(&w, bh.apply(&tensor(&[rows, 12], p)).unwrap().data()), &x, H);
    out.push(("block_hadamard", rel_error(g.data(), &num)));

    let (m, n) = (11, 6);
    let w_in = RectAdapter::<f64>::inner_width(n);
    let stacks = RectAdapter::<f64>::stack_count(m, n);
    let x = normals(&mut rng, rows * n);
    let ds: Vec<f64> = normals(&mut rng, 3 * w_in * stacks)
        .iter()
        .map(|v| 1.0 + 0.5 * v)
        .collect();
    let w = normals(&mut rng, rows * m);
    let adapter = |p: &[f64]| {
        let mut chunks = p.chunks(w_in);
        RectAdapter::with(m, n, |_| {
            let mut t = || tensor(&[w_in], chunks.next().unwrap());
            FastFoodLayer::new(t(), t(), t())
        })
        .unwrap()
    };
    let g = adapter(&ds)
        .backward(&tensor(&[rows, n], &x), &tensor(&[rows, m], &w))
        .unwrap();
    let mut analytic = g.x.data().to_vec();
    for s in &g.stacks {
        analytic.extend_from_slice(s.d1.data());
        analytic.extend_from_slice(s.d2.data());
        analytic.extend_from_slice(s.d3.data());
    }
    let point = [x, ds].concat();
    let num = fd_gradient(
        |p| {
            dot(
                &w,
                adapter(&p[rows * n..])
                    .apply(&tensor(&[rows, n], &p[..rows * n]))
                    .unwrap()
                    .data(),
            )
        },
        &point,
        H,
    );
    out.push(("rect_adapter", rel_error(&analytic, &num)));
    out
}

pub fn tiny_model(mlp: MlpKind) -> ModelConfig {
    let mut c = ModelConfig::dense(1, 16, 2, 8);
    c.vocab_size = 24;
    c.mlp_kind = mlp;
    c.init_std = 0.3;
    c.seed = 11;
    c
}

/// Deterministic token and target streams within the vocabulary.
pub fn token_batch(cfg: &ModelConfig, b: usize, s: usize) -> (Vec<u32>, Vec<u32>) {
    let v = cfg.vocab_size as u32;
    let tok: Vec<u32> = (0..b * s).map(|i| (i as u32 * 7 + 3) % v).collect();
    let tgt: Vec<u32> = (0..b * s).map(|i| (i as u32 * 5 + 1) % v).collect();
    (tok, tgt)
}

fn model_loss(model: &Model<f64>, tok: &[u32], tgt: &[usize], b: usize, s: usize, rng: Option<&ChaCha8Rng>) -> f64 {
    let mut r = rng.cloned();
    let (logits, _) = model.forward(tok, b, s, r.as_mut()).unwrap();
    let v = model.config().vocab_size;
    cross_entropy(&Tensor::new(&[b * s, v], logits).unwrap(), tgt).unwrap()
}

/// Worst relative disagreement between backprop and finite differences
/// over every trainable coordinate of a whole model.
pub fn model_gradient_error(cfg: &ModelConfig, rng: Option<ChaCha8Rng>) -> f64 {
    let (b, s) = (2, 6);
    let (tok, tgt) = token_batch(cfg, b, s);
    let tgt_usize: Vec<usize> = tgt.iter().map(|&t| t as usize).collect();
    let mut model = Model::<f64>::new(cfg).unwrap().with_exec(Exec::Sequential);
    let mut r = rng.clone();
    model.loss_and_grad(&tok, &tgt, b, s, r.as_mut()).unwrap();
    let mut analytic = Vec::new();
    let mut point = Vec::new();
    for p in model.params() {
        if let Some(g) = &p.grad {
            analytic.extend_from_slice(g.data());
            point.extend_from_slice(p.data());
        }
    }
    let mut probe = model.clone();
    let numeric = fd_gradient(
        |x| {
            let mut off = 0;
            for p in probe.params_mut() {
                if p.trainable() {
                    let n = p.len();
                    p.value.data_mut().copy_from_slice(&x[off..off + n]);
                    off += n;
                }
            }
            model_loss(&probe, &tok, &tgt_usize, b, s, rng.as_ref())
        },
        &point,
        H,
    );
    rel_error(&analytic, &numeric)
}

/// Closed-form parameter counts for the standard layouts.
pub fn expected_census(cfg: &ModelConfig) -> Census {
    let d = cfg.d_model as u64;
    let h = cfg.hidden() as u64;
    let fh = cfg.frozen_hidden() as u64;
    let b = cfg.block_count as u64;
    let ln = 2 * d;
    let attn = 4 * (d * d + d);
    let dense_mlp = d * h + h + h * d + d;
    let mlp = match cfg.mlp_kind {
        MlpKind::Dense => dense_mlp,
        MlpKind::Block => d * h / b + h + h * d / b + d,
        MlpKind::Fastfood => {
            let (w1, w2) = (d.next_power_of_two(), h.next_power_of_two());
            3 * w1 * h.div_ceil(w1) + h + 3 * w2 * d.div_ceil(w2) + d
        }
    };
    let layout = cfg.layout();
    let t = layout.trainable_layers() as u64;
    let f = layout.frozen_layers() as u64;
    Census {
        trainable: t * (2 * ln + attn + mlp) + ln,
        frozen: f * (ln + d * fh + fh + fh * d + d),
        emulated: t * (2 * ln + attn + dense_mlp) + ln,
        embedding: cfg.vocab_size as u64 * d,
    }
}
