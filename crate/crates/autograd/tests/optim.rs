use msgnet_autograd::optim::{Adam, Optimizer, Sgd};
use msgnet_autograd::{tensor, Param};

fn quadratic_descent(opt: &mut dyn Optimizer, steps: usize) -> f64 {
    let p = Param::new(tensor(&[2], vec![3.0, -2.0]));
    for _ in 0..steps {
        let v = p.var();
        let loss = v.square().sum();
        let g = loss.backward();
        opt.step(&[p.clone()], &g);
    }
    p.value().iter().map(|v| v * v).sum()
}

#[test]
fn sgd_plain_step_is_exact() {
    let p = Param::new(tensor(&[1], vec![2.0]));
    let g = p.var().square().sum().backward();
    Sgd::new(0.1, 0.0, 0.0).step(&[p.clone()], &g);
    // x - lr * 2x
    assert!((p.value()[0] - 1.6).abs() < 1e-15);
}

#[test]
fn optimizers_minimise_a_quadratic() {
    assert!(quadratic_descent(&mut Sgd::new(0.1, 0.9, 0.0), 200) < 1e-8);
    assert!(quadratic_descent(&mut Adam::new(0.1), 500) < 1e-4);
}

#[test]
fn buffers_are_never_updated() {
    let b = Param::buffer(tensor(&[1], vec![1.0]));
    let p = Param::new(tensor(&[1], vec![1.0]));
    let g = p.var().mul(&b.var()).sum().backward();
    assert!(g.param(&b).is_none());
    Sgd::new(1.0, 0.0, 0.0).step(&[b.clone(), p.clone()], &g);
    assert_eq!(b.value()[0], 1.0);
    assert_eq!(p.value()[0], 0.0);
}
