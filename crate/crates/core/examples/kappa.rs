//! Cohen's kappa between two raters labeling the same specimens.
//!
//! cargo run --example kappa

use bss_vision::metrics::cohens_kappa;
use bss_vision::rng::seeded;
use rand::Rng;

fn main() -> anyhow::Result<()> {
    let a = [0, 0, 1, 1];
    let b = [0, 1, 1, 1];
    let k = cohens_kappa(&a, &b, 2)?;
    println!("hand example: p_o {} p_e {} kappa {}", k.p_o, k.p_e, k.kappa);

    // Two raters guessing among seven levels agree only by chance.
    let mut rng = seeded(1);
    let a: Vec<usize> = (0..5000).map(|_| rng.random_range(0..7)).collect();
    let b: Vec<usize> = (0..5000).map(|_| rng.random_range(0..7)).collect();
    println!("random raters: kappa {:.4}", cohens_kappa(&a, &b, 7)?.kappa);

    // A rater who is off by one level a third of the time.
    let c: Vec<usize> = a.iter().enumerate().map(|(i, &v)| if i % 3 == 0 { (v + 1) % 7 } else { v }).collect();
    println!("noisy copy: kappa {:.4}", cohens_kappa(&a, &c, 7)?.kappa);
    Ok(())
}
