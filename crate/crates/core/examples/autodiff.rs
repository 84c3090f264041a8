//! Reverse-mode differentiation on the tape: a softmax cross-entropy of a
//! linear layer, checked against central differences, then the same
//! gradients obtained by seeding the log-probability node directly.

use sambr::autodiff::{Axis, Tape, Tensor};

fn loss(w: &[f64], x: &[f64], target: usize) -> sambr::Result<f64> {
    let mut tape = Tape::new();
    let w = Tensor::from_vec(3, 4, w.to_vec())?;
    let x = Tensor::from_vec(1, 3, x.to_vec())?;
    let logits = tape.matmul(&x, &w)?;
    let lp = tape.log_softmax(&logits, Axis::Cols)?;
    Ok(-lp.get(0, target))
}

fn main() -> sambr::Result<()> {
    let w0: Vec<f64> = (0..12).map(|i| ((i * 7 % 5) as f64 - 2.0) * 0.3).collect();
    let x0 = [0.5, -1.0, 2.0];
    let target = 2;

    let mut tape = Tape::new();
    let w = tape.track(&Tensor::from_vec(3, 4, w0.clone())?);
    let x = Tensor::from_vec(1, 3, x0.to_vec())?;
    let logits = tape.matmul(&x, &w)?;
    let lp = tape.log_softmax(&logits, Axis::Cols)?;
    let picked = tape.pick(&lp, 0, target)?;
    let nll = tape.scale(&picked, -1.0)?;
    let grads = tape.backward(&nll)?;
    let dw = grads.get(&w).expect("w is tracked");
    println!("loss {:.6}, tape nodes {}", nll.item(), tape.len());

    let h = 1e-6;
    let mut worst = 0.0f64;
    for (i, &g) in dw.iter().enumerate() {
        let (mut up, mut down) = (w0.clone(), w0.clone());
        up[i] += h;
        down[i] -= h;
        let fd = (loss(&up, &x0, target)? - loss(&down, &x0, target)?) / (2.0 * h);
        worst = worst.max((g - fd).abs());
    }
    println!("max |backprop - finite difference| = {worst:.2e}");

    // d(-log p_target)/d(log p) is -1 at the target entry and 0 elsewhere.
    let mut seed = vec![0.0; 4];
    seed[target] = -1.0;
    let injected = tape.inject_gradient(&lp, &Tensor::row(&seed))?;
    let same = injected.get(&w).expect("w is tracked") == dw;
    println!("seeded gradients identical to backprop: {same}");
    Ok(())
}
