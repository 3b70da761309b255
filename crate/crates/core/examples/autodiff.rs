//! The reverse-mode tape: a small LSTM layer checked against finite differences.

use jnf::net::lstm::lstm;
use jnf::numerics::gradcheck::check_gradients;
use jnf::numerics::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut t = |shape: Vec<usize>| {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.gen_range(-0.5..0.5)).collect())
    };
    let (b, l, d, h) = (2, 5, 3, 4);
    let inputs = [t(vec![b, l, d]), t(vec![4 * h, d]), t(vec![4 * h, h]), t(vec![4 * h])];
    let check = check_gradients(&inputs, 1e-6, |tape, v| {
        let y = lstm(tape, v[0], v[1], v[2], v[3], false);
        let sq = tape.mul(y, y);
        tape.sum(sq)
    });
    println!("max relative gradient error {:.2e}", check.max_rel_error);
}
