//! Successive null-space (SNS) precoding for downlink multi-user MIMO with
//! rate splitting, plus the surrounding machinery: channel generation,
//! baseline precoders (ZF/RZF/BD), weighted-sum-rate maximization via
//! successive convex approximation, CSI-error sensitivity bounds, and a
//! Monte-Carlo experiment harness.

pub mod channel;
pub mod error;
pub mod numerics;
pub mod precoders;
pub mod rsma;
pub mod sensitivity;
pub mod sca;

pub use error::{Error, Result};
pub use numerics::{CMat, CVec, PsdMatrix};
