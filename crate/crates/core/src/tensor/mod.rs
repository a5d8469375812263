//! Forward-mode derivative propagation through dense networks, reverse-mode
//! parameter gradients, and the optimizer.

pub mod adam;
pub mod jet;
pub mod mlp;
pub mod tape;

pub use adam::AdamState;
pub use jet::{slot, Jet, JetPlan, Slots};
pub use mlp::{Activation, GradBuffer, Mlp};
pub use tape::{InputMap, JetTape};
