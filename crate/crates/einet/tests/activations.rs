//! Activation identities and range properties.

mod common;

use common::*;
use proptest::prelude::*;

use einet::ops;
use einet::tensor::Tensor;

fn grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect()
}

#[test]
fn decomposition_identity_on_grid() {
    // silu(x) + neg_silu(x) == x within 1e-6 over [-20, 20]
    let xs = grid(-20.0, 20.0, 4001);
    let t = Tensor::<f64>::from_vec(&[xs.len()], xs.clone()).unwrap();
    let s = ops::silu(&t).unwrap();
    let n = ops::neg_silu(&t).unwrap();
    for ((&x, &a), &b) in t.data().iter().zip(s.data()).zip(n.data()) {
        assert!((a + b - x).abs() < 1e-6, "x={x}: silu+neg_silu-x = {}", a + b - x);
    }
}

#[test]
fn decomposition_identity_f32_within_its_precision() {
    // same identity on the f32 instantiation; the bound scales with the
    // f32 ulp of |x| itself
    let xs = grid(-20.0, 20.0, 4001);
    for &x in &xs {
        let t = Tensor::<f32>::scalar(x as f32);
        let s = ops::silu(&t).unwrap().data()[0] as f64;
        let n = ops::neg_silu(&t).unwrap().data()[0] as f64;
        let ax = x.abs().max(1.0) as f32;
        let ulp = (f32::from_bits(ax.to_bits() + 1) - ax) as f64;
        assert!((s + n - t.data()[0] as f64).abs() < 1e-6 + 2.0 * ulp, "x={x}");
    }
}

#[test]
fn antisymmetry_link_on_grid() {
    // neg_silu(x) == -silu(-x)
    let xs = grid(-20.0, 20.0, 4001);
    let t = Tensor::<f64>::from_vec(&[xs.len()], xs.clone()).unwrap();
    let neg = ops::neg_silu(&t).unwrap();
    let mirrored = ops::silu(&t.scale(-1.0)).unwrap();
    for (&a, &b) in neg.data().iter().zip(mirrored.data()) {
        assert!((a + b).abs() < 1e-6);
    }
}

#[test]
fn asymptotics() {
    let t = Tensor::<f64>::from_vec(&[2], vec![20.0, -20.0]).unwrap();
    let n = ops::neg_silu(&t).unwrap();
    assert!(n.data()[0] < 1e-6);
    assert!((n.data()[1] - (-20.0)).abs() < 1e-6);
}

#[test]
fn sigmoid_strictly_inside_unit_interval() {
    let xs = grid(-30.0, 30.0, 6001);
    let t = Tensor::<f64>::from_vec(&[xs.len()], xs.clone()).unwrap();
    let s = ops::sigmoid(&t).unwrap();
    for (&x, &v) in xs.iter().zip(s.data()) {
        assert!(v > 0.0 && v < 1.0, "sigmoid({x}) = {v} left (0,1)");
    }
}

#[test]
fn sigmoid_symmetry_on_grid() {
    let xs = grid(-15.0, 15.0, 301);
    for &x in &xs {
        let a = ops::sigmoid(&Tensor::<f64>::scalar(x)).unwrap().data()[0];
        let b = ops::sigmoid(&Tensor::<f64>::scalar(-x)).unwrap().data()[0];
        assert!((a + b - 1.0).abs() < 1e-12);
    }
}

proptest! {
    #[test]
    fn decomposition_identity_holds_everywhere(x in -20.0f64..20.0) {
        let t = Tensor::<f64>::scalar(x);
        let s = ops::silu(&t).unwrap().data()[0];
        let n = ops::neg_silu(&t).unwrap().data()[0];
        prop_assert!((s + n - x).abs() < 1e-9);
    }

    #[test]
    fn neg_silu_suppresses_positive_passes_negative(x in 3.0f64..30.0) {
        let pos = ops::neg_silu(&Tensor::<f64>::scalar(x)).unwrap().data()[0];
        let neg = ops::neg_silu(&Tensor::<f64>::scalar(-x)).unwrap().data()[0];
        prop_assert!(pos.abs() < x * sigmoid_f64(-3.0));
        prop_assert!((neg - (-x)).abs() < x * sigmoid_f64(-3.0));
    }
}
