//! Built-in case-study models, loaded from the JSON fixtures under `scenarios/`.

use crate::error::{Error, Result};
use crate::model::{AbandonmentClass, ModelInstance};

pub const NONINDEXABLE_3STATE: &str = include_str!("../scenarios/nonindexable-3state.json");
pub const NONINDEXABLE_3STATE_HARD: &str =
    include_str!("../scenarios/nonindexable-3state-hard.json");
pub const MMSM_2CLASS: &str = include_str!("../scenarios/mmsm-2class.json");

/// Names accepted by [`builtin`].
pub const BUILTIN_IDS: [&str; 3] = [
    "nonindexable-3state",
    "nonindexable-3state-hard",
    "mmsm-2class",
];

pub fn builtin(id: &str) -> Result<ModelInstance> {
    let text = match id {
        "nonindexable-3state" => NONINDEXABLE_3STATE,
        "nonindexable-3state-hard" => NONINDEXABLE_3STATE_HARD,
        "mmsm-2class" => MMSM_2CLASS,
        other => {
            return Err(Error::InvalidInput(format!(
                "unknown scenario {other:?}; expected one of {BUILTIN_IDS:?}"
            )))
        }
    };
    ModelInstance::from_json_str(text)
}

/// Three-state nonindexable fixed-population bandit with one unit of mass in state 1.
pub fn nonindexable_3state() -> ModelInstance {
    builtin("nonindexable-3state").expect("fixture parses")
}

/// Variant with an expensive, sluggish active action in state 3.
pub fn nonindexable_3state_hard() -> ModelInstance {
    builtin("nonindexable-3state-hard").expect("fixture parses")
}

/// Two-class `M/M/1+M` queue in overload.
pub fn mmsm_2class() -> ModelInstance {
    builtin("mmsm-2class").expect("fixture parses")
}

/// The raw queueing parameters behind [`mmsm_2class`].
pub fn mmsm_2class_params() -> ([AbandonmentClass; 2], f64) {
    let base = AbandonmentClass {
        arrival_rate: 0.0,
        service_rate: 0.0,
        queue_abandonment: 0.0,
        service_abandonment: 0.0,
        queue_cost: 0.0,
        service_cost: 0.0,
        queue_abandonment_penalty: 0.0,
        service_abandonment_penalty: 0.0,
    };
    (
        [
            AbandonmentClass {
                arrival_rate: 0.6,
                service_rate: 1.0,
                queue_abandonment: 0.5,
                queue_cost: 2.0,
                ..base
            },
            AbandonmentClass {
                arrival_rate: 1.0,
                service_rate: 1.5,
                queue_abandonment: 1.0,
                queue_cost: 1.0,
                ..base
            },
        ],
        1.0,
    )
}
