//! Reference computations that check `depa-core` from the outside, and the
//! synthetic experiment setup shared by the acceptance suite.
//!
//! Nothing here calls into the code it checks except for tokenization and
//! the public data types; the arithmetic is redone from first principles.

pub mod oracle;
pub mod setup;
pub mod trigger_check;
