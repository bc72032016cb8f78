//! Shared fixtures for the integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stegnet_core::nnops::{conv2d_backward, conv2d_forward, Conv2dSpec};
use stegnet_core::Tensor;

pub struct Reference {
    pub y: Vec<f64>,
    pub dx: Vec<f64>,
    pub dw: Vec<f64>,
    pub db: Vec<f64>,
}

/// Forward and backward by summation over every index, written straight
/// from the definition of cross-correlation with zero padding.
#[allow(clippy::too_many_arguments)]
pub fn reference(x: &[f64], w: &[f64], b: &[f64], dy: &[f64], n: usize, h: usize, wd: usize, s: &Conv2dSpec) -> Reference {
    let (cin, cout, kh, kw, g) = (s.in_channels, s.out_channels, s.kernel_h, s.kernel_w, s.groups);
    let (cin_g, cout_g) = (cin / g, cout / g);
    let oh = (h + 2 * s.padding - kh) / s.stride + 1;
    let ow = (wd + 2 * s.padding - kw) / s.stride + 1;
    let mut y = vec![0.0; n * cout * oh * ow];
    let mut dx = vec![0.0; x.len()];
    let mut dw = vec![0.0; w.len()];
    let mut db = vec![0.0; cout];
    for bi in 0..n {
        for co in 0..cout {
            let grp = co / cout_g;
            for oy in 0..oh {
                for ox in 0..ow {
                    let yi = ((bi * cout + co) * oh + oy) * ow + ox;
                    let mut acc = b[co];
                    db[co] += dy[yi];
                    for ci in 0..cin_g {
                        let c = grp * cin_g + ci;
                        for u in 0..kh {
                            for v in 0..kw {
                                let iy = (oy * s.stride + u) as isize - s.padding as isize;
                                let ix = (ox * s.stride + v) as isize - s.padding as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xi = ((bi * cin + c) * h + iy as usize) * wd + ix as usize;
                                let wi = ((co * cin_g + ci) * kh + u) * kw + v;
                                acc += x[xi] * w[wi];
                                dx[xi] += w[wi] * dy[yi];
                                dw[wi] += x[xi] * dy[yi];
                            }
                        }
                    }
                    y[yi] = acc;
                }
            }
        }
    }
    Reference { y, dx, dw, db }
}

pub fn random_spec(rng: &mut ChaCha8Rng) -> (Conv2dSpec, usize, usize, usize) {
    loop {
        let groups = rng.random_range(1..=4);
        let spec = Conv2dSpec {
            in_channels: groups * rng.random_range(1..=3),
            out_channels: groups * rng.random_range(1..=3),
            kernel_h: rng.random_range(1..=5),
            kernel_w: rng.random_range(1..=5),
            stride: rng.random_range(1..=3),
            padding: rng.random_range(0..=2),
            groups,
        };
        let (n, h, w) = (rng.random_range(1..=3), rng.random_range(1..=9), rng.random_range(1..=9));
        if spec.output_size(h, w).is_ok() {
            return (spec, n, h, w);
        }
    }
}

pub fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub struct OracleSummary {
    pub cases: usize,
    pub depthwise: usize,
    pub worst: f64,
}

/// Runs `cases` random grouped convolutions through forward and backward
/// and returns the largest deviation from [`reference`] over all outputs.
pub fn conv_oracle(seed: u64, cases: usize) -> OracleSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut depthwise = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..cases {
        let (spec, n, h, w) = random_spec(&mut rng);
        let (oh, ow) = spec.output_size(h, w).unwrap();
        let mut rand_vec = |len: usize| (0..len).map(|_| rng.random_range(-1.0..1.0)).collect::<Vec<f64>>();
        let x = rand_vec(n * spec.in_channels * h * w);
        let wt = rand_vec(spec.weight_shape().iter().product());
        let b = rand_vec(spec.out_channels);
        let dy = rand_vec(n * spec.out_channels * oh * ow);
        let expect = reference(&x, &wt, &b, &dy, n, h, w, &spec);

        let xt = Tensor::from_data(&[n, spec.in_channels, h, w], x).unwrap();
        let wt = Tensor::from_data(&spec.weight_shape(), wt).unwrap();
        let bt = Tensor::from_data(&[spec.out_channels], b).unwrap();
        let (y, ctx) = conv2d_forward(&xt, &wt, Some(&bt), &spec).unwrap();
        let g = conv2d_backward(&Tensor::from_data(y.shape(), dy).unwrap(), Some(&ctx)).unwrap();
        for (got, want) in [
            (y.data(), &expect.y),
            (g.input.data(), &expect.dx),
            (g.weights.data(), &expect.dw),
            (g.bias.as_ref().unwrap().data(), &expect.db),
        ] {
            worst = worst.max(max_diff(got, want));
        }
        if spec.in_channels == spec.groups && spec.out_channels == spec.groups {
            depthwise += 1;
        }
    }
    OracleSummary { cases, depthwise, worst }
}
