//! Dense f64 tensors, a reverse-mode autodiff tape, the Adam optimizer,
//! Xavier initialization, a finite-difference gradient checker, and the
//! parameter checkpoint container.

pub mod adam;
pub mod checkpoint;
pub mod fdcheck;
pub mod init;
pub mod params;
pub mod tape;
pub mod tensor;

pub use adam::Adam;
pub use init::xavier_uniform;
pub use params::ParamStore;
pub use tape::{Activation, ElementwiseOp, Tape, TensorId};
pub use tensor::Tensor;
