//! Builds a small convolution graph, runs reverse mode and checks one
//! gradient entry against a central difference.

use fibroscore::tensor::{Activation, Graph, Tensor};

fn forward(x: &Tensor, k: &Tensor, b: &Tensor) -> fibroscore::Result<(Graph, [fibroscore::tensor::Var; 4])> {
    let mut g = Graph::new();
    let xv = g.leaf(x.clone().with_requires_grad(true))?;
    let kv = g.leaf(k.clone().with_requires_grad(true))?;
    let bv = g.leaf(b.clone().with_requires_grad(true))?;
    let y = g.conv2d(xv, kv, bv, 2, 1)?;
    let y = g.activation(y, Activation::Tanh)?;
    let loss = g.sum(y)?;
    Ok((g, [xv, kv, bv, loss]))
}

fn main() -> fibroscore::Result<()> {
    let x = Tensor::from_fn(&[2, 6, 6], |i| ((i * 37 % 11) as f64 - 5.0) / 5.0);
    let k = Tensor::from_fn(&[3, 2, 3, 3], |i| ((i * 13 % 7) as f64 - 3.0) / 10.0);
    let b = Tensor::from_fn(&[3], |i| i as f64 * 0.1);

    let (mut g, [_, kv, _, loss]) = forward(&x, &k, &b)?;
    let value = g.value(loss).item()?;
    g.backward(loss)?;
    let analytic = g.grad(kv).expect("kernel gradient")[5];

    let h = 1e-5;
    let shifted = |delta: f64| -> fibroscore::Result<f64> {
        let mut k2 = k.clone();
        k2.data_mut()[5] += delta;
        let (g, [.., loss]) = forward(&x, &k2, &b)?;
        g.value(loss).item()
    };
    let numeric = (shifted(h)? - shifted(-h)?) / (2.0 * h);

    println!("loss            {value:.6}");
    println!("d loss / d k[5] {analytic:.8} (reverse mode)");
    println!("d loss / d k[5] {numeric:.8} (central difference)");
    println!("relative error  {:.2e}", (analytic - numeric).abs() / analytic.abs().max(1e-12));
    Ok(())
}
