mod common;

use common::{gradient_identity, mi_channel_run, Channel};

#[test]
fn weighted_td_gradient_matches_the_closed_form() {
    for seed in [1, 2, 3] {
        let c = gradient_identity(seed);
        assert!(c.params > 1000);
        assert!((c.alphas[0] - c.alphas[1]).abs() > 1e-6, "{:?}", c.alphas);
        // equal team sizes K = 2: the weights sum to K
        assert!((c.alphas.iter().sum::<f64>() - 2.0).abs() < 1e-12, "{:?}", c.alphas);
        assert!(c.max_abs_err < 1e-6, "seed {seed}: {}", c.max_abs_err);
    }
}

#[test]
fn channel_mi_matches_closed_form() {
    // symmetric channel: I = ln n + a ln a + (n − 1) b ln b
    let ch = Channel {
        symbols: 16,
        noise: vec![0.3],
    };
    let b: f64 = 0.3 / 16.0;
    let a = 0.7 + b;
    let expect = 16f64.ln() + a * a.ln() + 15.0 * b * b.ln();
    assert!((ch.exact_mi() - expect).abs() < 1e-12);
    let noiseless = Channel {
        symbols: 16,
        noise: vec![0.0],
    };
    assert!((noiseless.exact_mi() - 16f64.ln()).abs() < 1e-12);
}

#[test]
fn variational_estimate_is_a_lower_bound_that_tightens() {
    let run = mi_channel_run(&Channel::sixteen(), 600, 4);
    assert!(run.max_excess() <= 1e-3, "{}", run.max_excess());
    assert!(run.final_gap() < 0.05, "truth {} final {}", run.truth, run.trace.last().unwrap());
    assert!(run.trace[0] < run.truth - 0.5);
}
