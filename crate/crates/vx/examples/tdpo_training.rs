//! Preference-train the toy policy: starting from policy == reference (loss
//! exactly ln 2, margin 0), gradient descent widens the chosen/rejected
//! log-ratio gap. Gradients are verified against finite differences first.
//!
//! Run with: cargo run -p vx --example tdpo_training

use vx::learn::{
    grad_check, seq, tdpo_batch_grad, tdpo_batch_loss, toy_train, SeqPair, TdpoConfig, ToyPolicy,
};

fn pairs() -> Vec<SeqPair> {
    (0..20)
        .map(|i| SeqPair {
            id: format!("pair{i:02}"),
            chosen: seq(&[
                ("search", true),
                ("spans", false),
                ("perceive", true),
                ("seen", false),
                ("ans_a", true),
            ]),
            rejected: seq(&[("perceive", true), ("novis", false), ("ans_b", true)]),
        })
        .collect()
}

fn main() -> anyhow::Result<()> {
    let pairs = pairs();
    let policy = ToyPolicy::from_pairs(&pairs, 2);
    let reference = policy.clone();

    let loss0 = tdpo_batch_loss(&policy, &reference, &pairs, 0.1)?;
    println!("loss at the symmetric start: {loss0:.9} (ln 2 = {:.9})", std::f64::consts::LN_2);

    let analytic = tdpo_batch_grad(&policy, &reference, &pairs, 0.1)?;
    let err = grad_check(&policy, |p| tdpo_batch_loss(p, &reference, &pairs, 0.1), &analytic, 100, 7)?;
    println!("gradient vs central differences, 100 probes: max relative error {err:.2e}");

    let cfg = TdpoConfig { beta: 0.1, learning_rate: 0.1, steps: 200 };
    let report = toy_train(&pairs, &cfg)?;
    println!("\n step    loss      margin    ref-drift");
    for row in report.rows.iter().step_by(25).chain(report.rows.last()) {
        println!(
            "{:>5}  {:.6}  {:+.6}  {:+.6}",
            row.step, row.loss, row.mean_margin, row.mean_ref_drift
        );
    }
    let last = report.rows.last().unwrap();
    println!(
        "\nafter {} steps: loss {:.6} < ln 2, mean margin {:+.6} > 0",
        cfg.steps, last.loss, last.mean_margin
    );
    Ok(())
}
