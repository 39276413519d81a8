use super::run::{run_scenario, RunOutcome};
use super::scenario::{AttackKind, Scenario, ScenarioError};

/// A small deployment that still exercises every RSI.
pub fn attack_base() -> Scenario {
    Scenario {
        name: "attack".into(),
        blockchain_size: 30,
        tx_per_vehicle: 10,
        ..Scenario::default()
    }
}

/// Runs `base` with `kind`'s adversary switched on. The outcome carries
/// the attack's own checks next to the protocol invariants.
pub fn run_attack(kind: AttackKind, base: &Scenario) -> Result<RunOutcome, ScenarioError> {
    let s = Scenario {
        name: format!("{}-{}", base.name, kind.as_str()),
        adversary: Some(kind.adversary()),
        ..base.clone()
    };
    run_scenario(&s)
}
