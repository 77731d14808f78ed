//! Reverse-mode gradients of a two-layer network checked against central
//! differences.

use cannav::autodiff::Tape;
use cannav::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn loss(w1: &Tensor, w2: &Tensor, x: &Tensor, want_grad: bool) -> cannav::Result<(f64, Option<Tensor>)> {
    let mut tape = Tape::new();
    let w1v = tape.leaf(w1.clone(), true)?;
    let w2v = tape.leaf(w2.clone(), false)?;
    let xv = tape.constant(x.clone())?;
    let h = tape.linear(xv, w1v, None)?;
    let h = tape.tanh(h)?;
    let logits = tape.linear(h, w2v, None)?;
    let lp = tape.log_softmax(logits)?;
    let picked = tape.pick_per_row(lp, &[0, 1, 2])?;
    let l = tape.mean(picked)?;
    let value = tape.value(l).item();
    let grad = if want_grad {
        Some(tape.backward(l)?.wrt(w1v))
    } else {
        None
    };
    Ok((value, grad))
}

fn main() -> cannav::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut rand = |shape: Vec<usize>| {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    };
    let (mut w1, w2, x) = (rand(vec![5, 8])?, rand(vec![8, 3])?, rand(vec![3, 5])?);
    let (_, grad) = loss(&w1, &w2, &x, true)?;
    let grad = grad.expect("requested");
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for j in 0..w1.numel() {
        let orig = w1.data()[j];
        w1.data_mut()[j] = orig + eps;
        let up = loss(&w1, &w2, &x, false)?.0;
        w1.data_mut()[j] = orig - eps;
        let down = loss(&w1, &w2, &x, false)?.0;
        w1.data_mut()[j] = orig;
        let numeric = (up - down) / (2.0 * eps);
        worst = worst.max((grad.data()[j] - numeric).abs() / numeric.abs().max(1e-3));
    }
    println!("{} entries, worst relative error {worst:.2e}", w1.numel());
    Ok(())
}
