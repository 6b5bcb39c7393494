//! Runs the blocked selective scan on random inputs and compares it with a
//! plain step-by-step recurrence.

use eegtse::scan::scan_values;
use eegtse::testing::randn;
use rand::SeedableRng;

fn main() -> eegtse::Result<()> {
    let (l, w, n) = (512, 4, 16);
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
    let x = randn(&mut rng, &[1, l, w], 1.0);
    let delta = randn(&mut rng, &[1, l, w], 1.0).mapv(|v| 0.1 * v.exp().ln_1p());
    let b = randn(&mut rng, &[1, l, n], 1.0);
    let c = randn(&mut rng, &[1, l, n], 1.0);
    let a = randn(&mut rng, &[w, n], 1.0).mapv(|v| -v.exp());
    let d = randn(&mut rng, &[w], 1.0);
    let y = scan_values(&x, &delta, &b, &c, &a, &d)?;

    let mut worst = 0.0f64;
    for di in 0..w {
        let mut h = vec![0.0; n];
        for t in 0..l {
            let mut acc = 0.0;
            for (k, hk) in h.iter_mut().enumerate() {
                *hk = (delta[[0, t, di]] * a[[di, k]]).exp() * *hk + delta[[0, t, di]] * b[[0, t, k]] * x[[0, t, di]];
                acc += c[[0, t, k]] * *hk;
            }
            worst = worst.max((y[[0, t, di]] - acc - d[di] * x[[0, t, di]]).abs());
        }
    }
    println!("L = {l}, width {w}, state {n}: max deviation from recurrence {worst:.2e}");
    Ok(())
}
