//! A self-contained convolutional network engine: tensors, layer
//! forward/backward passes, loss, symbolic shape inference, model
//! construction and serialization.

pub mod arch;
pub mod gemm;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod model;
pub mod tensor;

pub use arch::{infer_shapes, ArchitectureSpec, LayerKind, LayerSpec, LayerShape, ShapeTable};
pub use layers::Mode;
pub use model::{build_model, Gradients, LayerGrads, LayerParams, Model};
pub use tensor::{Scalar, Tensor};
