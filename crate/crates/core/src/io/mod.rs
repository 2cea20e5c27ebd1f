//! Self-describing binary formats: versioned encoder weights, embedding
//! files, and a generic named-tensor container. All payloads are
//! little-endian IEEE-754 float32.

mod tensor;

pub mod embedding_file;
pub mod weights_file;

pub use embedding_file::{read_embedding, write_embedding};
pub use tensor::{read_tensor_file, write_tensor_file, NamedTensor, TENSOR_MAGIC};
pub use weights_file::{load_weights, save_weights, WEIGHTS_MAGIC};
