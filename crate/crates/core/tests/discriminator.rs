use hng_core::discriminator::*;
use hng_core::rng;
use hng_tensor::{finite_diff_check, Tensor, TensorError};
use rand::Rng as _;

fn tiny() -> DiscriminatorParams {
    let cfg = DiscriminatorConfig {
        image_size: 8,
        channels: vec![2, 3],
    };
    DiscriminatorParams::init(&cfg, &mut rng::stream(1, 0, 0)).unwrap()
}

fn random_images(b: usize, s: usize, seed: u64) -> Vec<f64> {
    let mut r = rng::stream(seed, 0, 0);
    (0..b * 3 * s * s).map(|_| r.random::<f64>()).collect()
}

fn batch(data: Vec<f64>, b: usize, s: usize) -> Tensor {
    Tensor::new(&[b, 3, s, s], data).unwrap()
}

// direct loops: stride-2, pad-1 3×3 convolutions, leaky ReLU, linear output
fn reference_logit(img: &[f64], s: usize, d: &DiscriminatorParams) -> f64 {
    let mut x = img.to_vec();
    let (mut c_in, mut size) = (3, s);
    for conv in &d.convs {
        let k = conv.kernel.to_vec();
        let bias = conv.bias.to_vec();
        let c_out = bias.len();
        let out = size / 2;
        let mut y = vec![0.0; c_out * out * out];
        for o in 0..c_out {
            for i in 0..out {
                for j in 0..out {
                    let mut acc = bias[o];
                    for c in 0..c_in {
                        for di in 0..3 {
                            for dj in 0..3 {
                                let (r, q) = ((2 * i + di) as isize - 1, (2 * j + dj) as isize - 1);
                                if r < 0 || q < 0 || r >= size as isize || q >= size as isize {
                                    continue;
                                }
                                acc += k[((o * c_in + c) * 3 + di) * 3 + dj]
                                    * x[(c * size + r as usize) * size + q as usize];
                            }
                        }
                    }
                    y[(o * out + i) * out + j] = if acc > 0.0 { acc } else { 0.2 * acc };
                }
            }
        }
        x = y;
        c_in = c_out;
        size = out;
    }
    let w = d.out_weight.to_vec();
    d.out_bias.to_vec()[0] + w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>()
}

#[test]
fn matches_direct_convolution_loops() {
    let d = tiny();
    let data = random_images(3, 8, 2);
    let logits = discriminate(&batch(data.clone(), 3, 8), &d)
        .unwrap()
        .to_vec();
    for (i, img) in data.chunks(3 * 64).enumerate() {
        let r = reference_logit(img, 8, &d);
        assert!((logits[i] - r).abs() < 1e-12, "{} vs {r}", logits[i]);
    }
}

#[test]
fn identical_images_give_identical_logits() {
    let d = tiny();
    let one = random_images(1, 8, 3);
    let logits = discriminate(&batch([one.clone(), one].concat(), 2, 8), &d)
        .unwrap()
        .to_vec();
    assert_eq!(logits[0], logits[1]);
}

#[test]
fn permuting_batch_permutes_logits() {
    let d = tiny();
    let data = random_images(3, 8, 4);
    let imgs: Vec<&[f64]> = data.chunks(3 * 64).collect();
    let base = discriminate(&batch(data.clone(), 3, 8), &d)
        .unwrap()
        .to_vec();
    let perm = [2, 0, 1];
    let permuted: Vec<f64> = perm.iter().flat_map(|&i| imgs[i].to_vec()).collect();
    let out = discriminate(&batch(permuted, 3, 8), &d).unwrap().to_vec();
    for (slot, &i) in perm.iter().enumerate() {
        assert_eq!(out[slot], base[i]);
    }
}

#[test]
fn logits_are_independent_across_batch() {
    let d = tiny();
    let a = random_images(2, 8, 5);
    let mut b = a.clone();
    b[3 * 64..].copy_from_slice(&random_images(1, 8, 6));
    let la = discriminate(&batch(a, 2, 8), &d).unwrap().to_vec();
    let lb = discriminate(&batch(b, 2, 8), &d).unwrap().to_vec();
    assert_eq!(la[0], lb[0]);
    assert_ne!(la[1], lb[1]);
}

#[test]
fn kernel_gradient_matches_finite_differences() {
    let d = tiny();
    let x = batch(random_images(2, 8, 7), 2, 8);
    for layer in 0..d.convs.len() {
        let err = finite_diff_check(
            |k: &Tensor| {
                let mut probe = d.clone();
                probe.convs[layer].kernel = k.clone();
                Ok(discriminate(&x, &probe).expect("logits").mean(None)?)
            },
            &d.convs[layer].kernel,
            1e-6,
        )
        .unwrap();
        assert!(err < 1e-5, "layer {layer}: {err}");
    }
}

#[test]
fn image_gradient_matches_finite_differences() {
    let d = tiny();
    let x = batch(random_images(1, 8, 8), 1, 8);
    let err = finite_diff_check(
        |img: &Tensor| Ok(discriminate(img, &d).expect("logits").mean(None)?),
        &x,
        1e-6,
    )
    .unwrap();
    assert!(err < 1e-5, "{err}");
}

#[test]
fn default_critic_outputs_are_finite() {
    let cfg = DiscriminatorConfig::default();
    let d = DiscriminatorParams::init(&cfg, &mut rng::stream(0, 0, 0)).unwrap();
    let s = cfg.image_size;
    let mut data = random_images(2, s, 9);
    data.extend(vec![0.0; 3 * s * s]);
    data.extend(vec![1.0; 3 * s * s]);
    let logits = discriminate(&batch(data, 4, s), &d).unwrap().to_vec();
    assert!(logits.iter().all(|v| v.is_finite()));
}

#[test]
fn wrong_spatial_size_is_a_shape_error() {
    let d = tiny();
    let x = batch(random_images(1, 16, 1), 1, 16);
    match discriminate(&x, &d) {
        Err(hng_core::Error::Tensor(TensorError::Shape { .. })) => {}
        other => panic!("expected shape error, got {other:?}"),
    }
}

#[test]
fn invalid_configs_are_rejected() {
    for cfg in [
        DiscriminatorConfig {
            image_size: 8,
            channels: vec![2, 3, 4],
        },
        DiscriminatorConfig {
            image_size: 10,
            channels: vec![2, 3],
        },
        DiscriminatorConfig {
            image_size: 16,
            channels: vec![],
        },
    ] {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
}

#[test]
fn nchw_layout_moves_channels_first() {
    let hwc: Vec<f64> = (0..2 * 2 * 3).map(|v| v as f64).collect();
    let t = Tensor::new(&[2, 2, 3], hwc.clone()).unwrap();
    let out = to_nchw(&[t.clone(), t]).unwrap();
    assert_eq!(out.shape(), &[2, 3, 2, 2]);
    let v = out.to_vec();
    for c in 0..3 {
        for y in 0..2 {
            for x in 0..2 {
                assert_eq!(v[12 + (c * 2 + y) * 2 + x], hwc[(y * 2 + x) * 3 + c]);
            }
        }
    }
}
