mod support;

use markguard_core::nn::{SMALL_ATTN, SMALL_CONV};
use support::gradcheck::{self, TOL};

#[test]
fn layer_gradients() {
    for (name, e) in gradcheck::layers() {
        assert!(e < TOL, "{name}: relative error {e:e}");
    }
}

#[test]
fn bce_gradient_matches_finite_difference() {
    let e = gradcheck::bce();
    assert!(e < TOL, "{e:e}");
}

#[test]
fn small_conv_network_gradient() {
    let e = gradcheck::network(SMALL_CONV, 400);
    assert!(e < TOL, "{e:e}");
}

#[test]
fn small_attn_network_gradient() {
    let e = gradcheck::network(SMALL_ATTN, 400);
    assert!(e < TOL, "{e:e}");
}

#[test]
fn pose_regressor_gradient_on_ten_random_points() {
    let e = gradcheck::pose_regressor();
    assert!(e < TOL, "{e:e}");
}
