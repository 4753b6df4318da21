//! Safety-case toolkit.
//!
//! Mechanizes a quantitative safety argument end to end: GSN goal
//! structures with a textual format and structural validation, risk-norm
//! budget arithmetic and component allocations, an exact fixed-point model
//! of a pedestrian-approach feedback loop, exhaustive verification of the
//! no-collision requirement, and independently re-checkable proof
//! certificates that serve as the evidence artifacts of the case.

pub mod capability;
pub mod casefile;
pub mod certificate;
pub mod gsn;
pub mod qrn;
pub mod scenario;
pub mod units;
pub mod verifier;

pub use units::Rat;
