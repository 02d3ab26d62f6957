//! Fits `sin(3x)` with a small tanh MLP and checks its gradient.

use nalgebra::DMatrix;
use piper::autodiff::{grad_check, Activation, Adam, Mlp};
use piper::rng::PiperRng;

fn loss(net: &Mlp, x: &DMatrix<f64>, y: &DMatrix<f64>) -> (f64, Vec<f64>) {
    let (out, tape) = net.forward(x).unwrap();
    let diff = out - y;
    let b = x.nrows() as f64;
    let (grads, _) = net.backward(&tape, &(&diff * (2.0 / b))).unwrap();
    (diff.norm_squared() / b, grads.to_flat())
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = PiperRng::new(0);
    let mut net = Mlp::new(&[1, 32, 32, 1], Activation::Tanh, &mut rng)?;
    let x = DMatrix::from_fn(128, 1, |i, _| -1.0 + 2.0 * i as f64 / 127.0);
    let y = x.map(|v| (3.0 * v).sin());

    let p0 = net.params();
    let mut probe = net.clone();
    let report = grad_check(
        &p0,
        |p| {
            probe.set_params(p).unwrap();
            loss(&probe, &x, &y)
        },
        1e-5,
        10,
        &mut rng,
    );
    println!("gradient check: max relative error {:.2e}", report.max_relative_error);

    let mut adam = Adam::for_network(1e-2, &net);
    for epoch in 0..=2000 {
        let (out, tape) = net.forward(&x)?;
        let diff = out - &y;
        let (grads, _) = net.backward(&tape, &(&diff * (2.0 / 128.0)))?;
        adam.step_network(&mut net, &grads);
        if epoch % 500 == 0 {
            println!("epoch {epoch:>4}  mse {:.3e}", diff.norm_squared() / 128.0);
        }
    }
    Ok(())
}
