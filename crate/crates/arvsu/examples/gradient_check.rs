//! Check analytic gradients against central finite differences.
//!
//! Builds a small two-layer network ending in a softmax cross-entropy
//! loss, runs one backward pass, and compares the gradient of every
//! parameter (and of the input) with a numerical estimate.
//!
//! ```bash
//! cargo run --example gradient_check
//! ```

use arvsu::autodiff::{finite_diff, Graph};
use arvsu::layers::glorot_uniform;
use arvsu::rng::Rng;
use arvsu::tensor::Tensor;

fn main() -> arvsu::Result<()> {
    let mut rng = Rng::new(7);
    let x = Tensor::vector((0..4).map(|_| rng.uniform(-1.0, 1.0)).collect());
    let w1 = glorot_uniform(5, 4, &mut rng);
    let b1 = Tensor::zeros(vec![5]);
    let w2 = glorot_uniform(3, 5, &mut rng);
    let b2 = Tensor::zeros(vec![3]);
    let label = 1;

    // loss = -ln softmax(W2 relu(W1 x + b1) + b2)[label]
    let loss_given = |x: &Tensor,
                      w1: &Tensor,
                      b1: &Tensor,
                      w2: &Tensor,
                      b2: &Tensor|
     -> arvsu::Result<f64> {
        let g = &mut Graph::new();
        let (x, w1, b1, w2, b2) =
            (g.leaf(x), g.leaf(w1), g.leaf(b1), g.leaf(w2), g.leaf(b2));
        let h = g.matvec(w1, x)?;
        let h = g.add(h, b1)?;
        let h = g.relu(h);
        let z = g.matvec(w2, h)?;
        let z = g.add(z, b2)?;
        let p = g.softmax(z)?;
        let p_true = g.pick(p, label)?;
        let lp = g.log(p_true);
        Ok(g.value(lp).data()[0] * -1.0)
    };

    // One analytic backward pass over the same computation.
    let g = &mut Graph::new();
    let leaves =
        [g.leaf(&x), g.leaf(&w1), g.leaf(&b1), g.leaf(&w2), g.leaf(&b2)];
    let [vx, vw1, vb1, vw2, vb2] = leaves;
    let h = g.matvec(vw1, vx)?;
    let h = g.add(h, vb1)?;
    let h = g.relu(h);
    let z = g.matvec(vw2, h)?;
    let z = g.add(z, vb2)?;
    let p = g.softmax(z)?;
    let p_true = g.pick(p, label)?;
    let lp = g.log(p_true);
    let loss = g.mul_scalar(lp, -1.0);
    g.backward(loss)?;
    println!("loss = {:.6}", g.value(loss).data()[0]);
    println!();

    println!("{:<6} {:>12} {:>12}", "tensor", "max |Δ|", "max rel err");
    let names = ["x", "w1", "b1", "w2", "b2"];
    let values = [&x, &w1, &b1, &w2, &b2];
    for (i, (name, value)) in names.iter().zip(values).enumerate() {
        // Numerical estimate: perturb one tensor, hold the rest fixed.
        let numeric = finite_diff(
            |t: &Tensor| {
                let slot: Vec<&Tensor> =
                    values.iter().enumerate().map(|(j, v)| if j == i { t } else { *v }).collect();
                loss_given(slot[0], slot[1], slot[2], slot[3], slot[4]).unwrap()
            },
            value,
            1e-5,
        );
        let analytic = g.grad(leaves[i]).expect("leaf gradient");
        let mut max_abs = 0.0f64;
        let mut max_rel = 0.0f64;
        for (a, n) in analytic.iter().zip(numeric.data()) {
            let abs = (a - n).abs();
            max_abs = max_abs.max(abs);
            max_rel = max_rel.max(abs / a.abs().max(n.abs()).max(1e-6));
        }
        println!("{name:<6} {max_abs:>12.3e} {max_rel:>12.3e}");
        assert!(max_rel < 1e-4, "{name}: gradient disagrees with finite differences");
    }

    println!();
    println!("all gradients agree with finite differences to within 1e-4");
    Ok(())
}
