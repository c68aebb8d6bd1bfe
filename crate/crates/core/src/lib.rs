//! Segmental accent analysis toolkit.
//!
//! Aligned speech is turned into phonological-feature probability profiles
//! and per-layer segment representations; layer-wise L1 probes measure accent
//! discriminability, SVCCA attributes probe-selected dimensions to
//! phonological features, and a multinomial regression relates accent
//! ratings to distances from native and non-native baselines.

pub mod corpus;
pub mod distregress;
pub mod error;
pub mod mfcc;
pub mod phonfeat;
pub mod probe;
pub mod repstore;
pub mod svcca;
pub mod synth;
pub mod table;

pub use error::{Error, Result};
