//! Grouped convolution against a direct nested-loop reference at f64.

mod support;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use stegnet_core::nnops::Conv2dSpec;
use support::{conv_oracle, random_spec, reference};

#[test]
fn two_hundred_random_configurations_match_the_reference() {
    let s = conv_oracle(2024, 200);
    assert!(s.worst < 1e-12, "max |delta| {:e}", s.worst);
    assert!(s.depthwise > 10, "only {} depthwise cases drawn", s.depthwise);
}

#[test]
fn reference_matches_a_hand_computed_case() {
    // 1x1x2x2 input, one 2x2 kernel, no padding: a single dot product.
    let spec = Conv2dSpec {
        in_channels: 1,
        out_channels: 1,
        kernel_h: 2,
        kernel_w: 2,
        stride: 1,
        padding: 0,
        groups: 1,
    };
    let r = reference(&[1.0, 2.0, 3.0, 4.0], &[1.0, 0.0, -1.0, 2.0], &[0.5], &[1.0], 1, 2, 2, &spec);
    assert_eq!(r.y, vec![1.0 - 3.0 + 8.0 + 0.5]);
    assert_eq!(r.dw, vec![1.0, 2.0, 3.0, 4.0]);
    assert_eq!(r.dx, vec![1.0, 0.0, -1.0, 2.0]);
    assert_eq!(r.db, vec![1.0]);
}

#[test]
fn random_specs_are_admissible() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for _ in 0..500 {
        let (spec, _, h, w) = random_spec(&mut rng);
        assert!(spec.output_size(h, w).is_ok());
        assert_eq!(spec.in_channels % spec.groups, 0);
        assert_eq!(spec.out_channels % spec.groups, 0);
    }
}
