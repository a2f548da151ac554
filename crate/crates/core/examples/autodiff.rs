//! The autodiff engine on its own: a two-layer network, a softmax
//! cross-entropy, reverse-mode gradients and a finite-difference check.
//!
//! ```text
//! cargo run --release --example autodiff
//! ```

use pctl::numcore::{gradcheck, Graph, SgdMomentum, Tensor};

fn main() -> pctl::Result<()> {
    let inputs = Tensor::from_rows(&[vec![0.5, -1.0, 2.0], vec![1.5, 0.3, -0.7], vec![-0.2, 0.8, 0.1]])?;
    let labels = [0, 1, 1];
    let mut w1 = Tensor::matrix(3, 4, (0..12).map(|i| ((i * 7 % 11) as f64 - 5.0) / 10.0).collect())?;
    let mut w2 = Tensor::matrix(4, 2, (0..8).map(|i| ((i * 5 % 7) as f64 - 3.0) / 10.0).collect())?;
    let mut opt = SgdMomentum::new(0.9, vec![0.1])?;

    for step in 0..20 {
        let mut g = Graph::new();
        let x = g.constant(inputs.clone());
        let a = g.param(w1.clone());
        let b = g.param(w2.clone());
        let h = g.matmul(x, a)?;
        let h = g.tanh(h)?;
        let logits = g.matmul(h, b)?;
        let lp = g.log_softmax_rows(logits)?;
        let per_row = g.nll(lp, &labels)?;
        let loss = g.mean(per_row)?;
        g.backward(loss)?;
        if step % 5 == 0 {
            println!("step {step:2}  loss {:.5}", g.value(loss).item());
        }
        let grads = vec![g.grad(a).expect("param").to_vec(), g.grad(b).expect("param").to_vec()];
        opt.step(&mut [&mut w1, &mut w2], &[0, 0], &grads)?;
    }

    // f(x) = log Σ exp(normalize(x) · c)
    let c = Tensor::matrix(3, 1, vec![1.0, -2.0, 0.5])?;
    let err = gradcheck(
        |g, x| {
            let row = g.reshape(x, vec![1, 3])?;
            let n = g.l2_normalize_rows(row)?;
            let c = g.constant(c.clone());
            let s = g.matmul(n, c)?;
            let e = g.exp(s)?;
            let total = g.sum(e)?;
            g.log(total)
        },
        &Tensor::vector(vec![0.3, 1.1, -0.4]),
        1e-6,
    )?;
    println!("gradcheck max relative error {err:.2e}");
    Ok(())
}
