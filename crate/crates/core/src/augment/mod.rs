//! The augmentation module: pre-normalization, mixup against a memory bank,
//! random resize crop and batch post-normalization, plus the Gaussian-noise
//! block used in ablations.

mod mixup;
mod normalize;
mod rrc;
mod views;

pub use mixup::{
    bank_push_then_sample, gaussian_block, log_mixup_exp, mixup_block, GaussianConfig, MemoryBank,
    MixupConfig,
};
pub use normalize::{post_normalize, pre_normalize};
pub use rrc::{bicubic_resize, random_resize_crop, resize_crop_at, CropRect, RrcConfig};
pub use views::{make_views, post_normalize_pairs, AugmentConfig, AugmentContext, ViewPair};
