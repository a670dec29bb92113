//! Reverse-mode gradients of a tiny two-layer network, checked against
//! central differences.

use ecg_ssl::numcore::{gradcheck, Tape, Tensor};

fn main() -> ecg_ssl::Result<()> {
    let x = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 0.1, 0.3, -0.7])?;
    let w1 = Tensor::new(vec![3, 4], (0..12).map(|i| (i as f64 * 0.37).sin()).collect())?;
    let w2 = Tensor::new(vec![4, 1], vec![0.3, -0.2, 0.5, 0.1])?;

    let net = |t: &mut Tape, v: &[ecg_ssl::numcore::Var]| {
        let h = t.matmul(v[0], v[1])?;
        let h = t.sigmoid(h);
        let y = t.matmul(h, v[2])?;
        let sq = t.mul(y, y)?;
        Ok(t.mean(sq))
    };

    let mut tape = Tape::new();
    let vars: Vec<_> = [&x, &w1, &w2].iter().map(|p| tape.param(p)).collect();
    let loss = net(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;
    println!("loss = {:.6}", tape.value(loss).item());
    println!("dL/dw2 = {:?}", grads.get(vars[2]).map(|g| g.data().to_vec()));

    let check = gradcheck::check(&[x, w1, w2], 1e-6, net)?;
    println!(
        "finite differences over {} entries: relative error {:.2e}",
        check.n_checked, check.rel_error
    );
    Ok(())
}
