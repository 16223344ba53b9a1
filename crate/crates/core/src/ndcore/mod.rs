//! Reverse-mode differentiable tensor core: the operators both networks are
//! written in, AdamW, parameter registry and checkpoint files.

pub mod checkpoint;
pub mod element;
pub mod ops;
pub mod optim;
pub mod param;
mod tensor;

pub use element::Element;
pub use optim::{AdamW, AdamWConfig};
pub use param::{Init, ParamManifest, ParamStore, Role};
pub use tensor::{grad_enabled, NoGradGuard, Tensor};
