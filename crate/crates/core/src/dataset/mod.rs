//! Annotations, images, train/test splits and the binary batch and weight
//! containers.

pub mod annotations;
pub mod archive;
pub(crate) mod binio;
pub mod batch;
pub mod calibration;
pub mod image;
pub mod split;

pub use annotations::{
    annotations_to_csv, load_annotations, parse_annotations, AnnotatedFrame, BBox, LANDMARK_NAMES,
    NATIVE_HEIGHT, NATIVE_WIDTH,
};
pub use archive::{load_weight_archive, save_weight_archive};
pub use calibration::{calibration_to_text, load_calibration, parse_calibration};
pub use batch::{
    read_batch_file, read_batch_len, read_batches, write_batch_file, write_batches, BatchFile, BatchStream,
};
pub use image::{dataset_channel_means, preprocess, ChannelMeans, PixelSource, RawImage};
pub use split::{split, split_indices, SplitStrategy};
