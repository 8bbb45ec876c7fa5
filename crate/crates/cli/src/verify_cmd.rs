//! `bonsai verify`: run one of the oracle suites and report each property.

use bonsai::verify::{verify_gp, verify_kernel, verify_prune, verify_schedule, PropertyResult};

use crate::{Outcome, Suite};

const VERIFY_SEED: u64 = 0xb0a5a1;

pub fn cmd_verify(suite: Suite) -> Outcome {
    let results: Vec<PropertyResult> = match suite {
        Suite::Gp => verify_gp(VERIFY_SEED),
        Suite::Prune => verify_prune(200, VERIFY_SEED, 0.6),
        Suite::Kernel => verify_kernel(10_000, VERIFY_SEED),
        Suite::Schedule => verify_schedule(),
    };
    let mut all_passed = true;
    for r in &results {
        let tag = if r.passed { "PASS" } else { "FAIL" };
        println!("{tag} {} — {}", r.name, r.detail);
        all_passed &= r.passed;
    }
    if all_passed {
        Outcome::Success
    } else {
        Outcome::RuntimeFailure("one or more properties failed".into())
    }
}
