//! Attentive CNN-convLSTM video saliency prediction at desk scale.
//!
//! * [`tensor`] – dense tensors, reverse-mode gradients, `STNS` files
//! * [`net`] – encoder, supervised attention branch, convLSTM and readout
//! * [`losses`] – KL / CC / NSS training objective
//! * [`metrics`] – AUC-Judd, shuffled AUC, NSS, CC, SIM and dataset reports
//! * [`data`] – fixation ingestion, rasterization, densification, samplers
//! * [`trainer`] – Adam and the alternating video/image training loop

#![allow(clippy::neg_cmp_op_on_partial_ord)]
pub mod data;
pub mod error;
pub mod losses;
pub mod metrics;
pub mod net;
pub mod oracle;
pub mod selfcheck;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
pub use tensor::{Tape, Tensor, Var};
