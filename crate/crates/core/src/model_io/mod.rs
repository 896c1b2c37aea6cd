//! On-disk formats: STNT weights, network config JSON, binary Netpbm images.

mod config;
mod pnm;
mod weights;

pub use config::{load_config, load_network, parse_config, LayerConfig, NetworkConfig};
pub use pnm::{
    decode_image, encode_pnm, parse_pnm, read_image, read_pnm, volume_to_pnm, write_image,
    write_pnm, PnmImage,
};
pub use weights::{
    decode_weights, encode_weights, load_weights, save_weights, Tensor, TensorTable,
};
