//! The per-pair preference loss at a few margins.

use deepnote::dnalign::{dpo_loss_term, DpoInputs};

fn main() -> deepnote::Result<()> {
    println!("{:>6} {:>6} {:>10}", "beta", "margin", "loss");
    for beta in [0.05, 0.1, 0.5] {
        for margin in [-4.0, -2.0, 0.0, 2.0, 4.0] {
            // Policy moves the chosen log-prob up by margin/2 and the rejected one down.
            let inputs = DpoInputs::new(margin / 2.0, 0.0, -margin / 2.0, 0.0).with_beta(beta);
            println!("{beta:>6} {margin:>6} {:>10.6}", dpo_loss_term(&inputs)?);
        }
    }
    Ok(())
}
