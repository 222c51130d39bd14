//! Synthetic stick-figure data: pose sampling, rendering, labels,
//! augmentation, appearance mixtures and on-disk datasets.

mod augment;
pub mod io;
mod label;
mod mixture;
mod render;
mod skeleton;

pub use augment::{augment, hflip, rotate, Augment};
pub use io::{read_dataset, write_dataset, Dataset};
pub use label::{image_tensor, label_tensor, to_map_coords, to_train_samples};
pub use mixture::{cluster_mixtures, head_scale, kmeans, relative_position, MixtureModel, KMEANS_MAX_ITERS};
pub use render::{generate, render_sample, PoseSample};
pub use skeleton::{quantize, sample_seed, EdgeSpec, SkeletonSpec, COORD_QUANTUM};
