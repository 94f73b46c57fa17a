//! Model-ready dataset assembly: geographic block splits, random-crop
//! tiling, partial-label subsampling under a labeling budget, block-mean
//! downsampling, train-time augmentation, and multi-temporal input
//! construction.

mod augment;
mod dataset;
mod partial;
mod resample;
mod split;
mod temporal;

pub use augment::{apply_d4_to_labels, apply_d4_to_plane, apply_d4_to_stack, augment_sample, D4};
pub use dataset::{SampleRecord, TileRecord, TrainDataset};
pub use partial::{sample_partial_labels, LabelBudget, SamplerKind};
pub use resample::{downsample_imagery, CropReport};
pub use split::{assign_splits, Split, SplitAssignment};
pub use temporal::{make_multitemporal_input, TemporalMode};
