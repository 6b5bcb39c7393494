//! Contrastive alignment loss on matched and shuffled embedding pairs.

use eegtse::alignment::infonce_loss;
use eegtse::autograd::Graph;
use eegtse::testing::randn;
use ndarray::Axis;
use rand::SeedableRng;

fn main() -> eegtse::Result<()> {
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
    let speech = randn(&mut rng, &[8, 64], 1.0);
    let eeg = &speech + &randn(&mut rng, &[8, 64], 0.5);
    let g = Graph::inference();
    let tau = 0.1;
    let matched = infonce_loss(g.constant(speech.clone()), g.constant(eeg.clone()), tau)?.item();
    let shuffled = eeg.select(Axis(0), &[1, 2, 3, 4, 5, 6, 7, 0]);
    let mismatched = infonce_loss(g.constant(speech), g.constant(shuffled), tau)?.item();
    println!("chance level  ln 8 = {:.4}", 8f64.ln());
    println!("matched pairs      {matched:.4}");
    println!("shuffled pairs     {mismatched:.4}");
    Ok(())
}
