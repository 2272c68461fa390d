pub mod circuit;
pub mod closed_form;
pub mod error;
pub mod linalg;
pub mod oracle;
pub mod pim;
pub mod pipeline;
pub mod qcqp;
pub mod sdp;
pub mod sdr;
pub mod validate;
pub mod quadrature;
pub mod report;

pub use error::{Error, Result};
