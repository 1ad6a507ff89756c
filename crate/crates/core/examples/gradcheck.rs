//! Compares tape gradients of a small conv net against central differences.

use qtart::nn::ConvNetSpec;
use qtart::Tensor;
use rand::{Rng, SeedableRng};

fn main() -> qtart::Result<()> {
    let model = ConvNetSpec { hidden: Some(6), ..ConvNetSpec::new([2, 6, 6], 3, &[3]) }.build_as::<f64>(7)?;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let x = Tensor::<f64>::new(&[4, 2, 6, 6], (0..288).map(|_| rng.random_range(0.0..1.0)).collect())?;
    let y = [0, 2, 1, 2];
    let g = model.loss_gradients(&x, &y, 0.1, None, true)?;
    let loss = |m: &qtart::nn::Model<f64>| m.loss_gradients(&x, &y, 0.1, None, false).map(|g| g.loss);

    let h = 1e-6;
    for (p, grad) in g.params.iter().enumerate() {
        let mut worst = 0.0f64;
        for j in 0..grad.len() {
            let (mut a, mut b) = (model.clone(), model.clone());
            a.params_mut()[p].data_mut()[j] += h;
            b.params_mut()[p].data_mut()[j] -= h;
            let fd = (loss(&a)? - loss(&b)?) / (2.0 * h);
            let an = grad.data()[j];
            worst = worst.max((an - fd).abs() / an.abs().max(fd.abs()).max(1e-8));
        }
        println!("param {p} {:?}: worst relative error {worst:.2e}", grad.shape());
    }
    Ok(())
}
