//! Replays the committed request/response pairs. Set `UPDATE_GOLDEN=1` to
//! rewrite the expected responses after an intentional change.

mod common;

#[tokio::test]
async fn golden_pairs_replay() {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let (steps, mismatches) = common::replay_goldens(update).await;
    assert!(steps >= 5, "too few golden steps: {steps}");
    for (file, step, expected, actual) in &mismatches {
        eprintln!("{file} step {step}\nexpected: {expected}\nactual:   {actual}");
    }
    assert!(mismatches.is_empty(), "{} golden mismatches", mismatches.len());
}
