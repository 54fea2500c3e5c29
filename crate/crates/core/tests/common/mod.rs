//! Reference laws shared by the integration tests.
#![allow(dead_code)]

use mgw::{parse_law_json, MarkedGWLaw};

pub fn law(json: &str) -> MarkedGWLaw {
    parse_law_json(json, false).expect("reference law is valid")
}

/// Subcritical, μ = 4/5, marks exactly on binary nodes.
pub fn law_a() -> MarkedGWLaw {
    law(r#"{"p": {"0": "3/5", "2": "2/5"}, "q": {"0": "0", "2": "1"}}"#)
}

/// Critical binary law, every node marked.
pub fn law_b() -> MarkedGWLaw {
    law(r#"{"p": {"0": "1/2", "2": "1/2"}, "q_default": "1"}"#)
}

/// Supercritical, μ = 8/5.
pub fn law_c() -> MarkedGWLaw {
    law(r#"{"p": {"0": "1/5", "2": "4/5"}, "q_default": "1"}"#)
}

/// Critical, marks exactly on binary nodes.
pub fn law_d() -> MarkedGWLaw {
    law(r#"{"p": {"0": "1/2", "2": "1/2"}, "q": {"0": "0", "2": "1"}}"#)
}

/// No leaves: minimal out-degree 2.
pub fn law_f() -> MarkedGWLaw {
    law(r#"{"p": {"2": "3/5", "3": "2/5"}, "q_default": "1/2"}"#)
}

/// Leaves and single children are never marked; binary nodes half the time.
pub fn law_g() -> MarkedGWLaw {
    law(r#"{"p": {"0": "3/10", "1": "1/5", "2": "1/2"}, "q": {"0": "0", "1": "0", "2": "1/2"}}"#)
}

/// Four out-degrees with leaves, so every derivative of the iterates is positive.
pub fn law_h() -> MarkedGWLaw {
    law(r#"{"p": {"0": "1/5", "1": "1/5", "2": "3/10", "3": "3/10"}, "q_default": "1/2"}"#)
}
