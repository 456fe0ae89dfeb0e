//! The last-k z statistic for a user: how many generated words match and
//! how unlikely that is by chance.

use ghostmark::stats::{z_score, z_test, Significance, Z_ALPHA_01, Z_ALPHA_05};

fn main() -> ghostmark::Result<()> {
    let v = 7776;
    println!("thresholds: alpha 0.05 -> z > {Z_ALPHA_05}, alpha 0.01 -> z > {Z_ALPHA_01}\n");

    // one identifier of 10 words, last k = 1 word tested in each of q documents
    println!("{:>4} {:>4} {:>10} {:>7}", "q", "n_g", "z", "reject");
    for (n_g, q) in [(0, 10), (1, 10), (2, 10), (1, 1), (5, 5)] {
        let t = z_test(n_g, q, v, Significance::alpha(0.01)?);
        println!("{q:>4} {n_g:>4} {:>10.3} {:>7}", t.z, t.reject);
    }

    // a single matched word is already significant once V is large
    println!("\nminimum V for one match in ten trials to reject at 0.01:");
    let v_min = (2..).find(|&v| z_score(1, 10, v) > Z_ALPHA_01).expect("exists");
    println!("  V >= {v_min}");

    // the candidate vocabulary V* can be narrowed or widened
    println!("\nz for 3 of 10 words matched:");
    for v_star in [100, 1000, 7776, 50_000] {
        println!("  V* = {v_star:>6}: z = {:.2}", z_score(3, 10, v_star));
    }

    let strict = z_test(1, 10, v, Significance::Threshold(10.0));
    println!("\nexplicit threshold 10: z = {:.2}, reject = {}", strict.z, strict.reject);
    Ok(())
}
