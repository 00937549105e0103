//! Loading, splitting, windowing, standardizing and masking time series.

mod dataset;
mod mask;
mod normalize;
mod window;

pub use dataset::{
    chrono_split, make_synthetic, synthetic_components, Dataset, Sinusoid, SplitFractions, Splits,
    SyntheticSpec,
};
pub use mask::{apply_mask, mask_windows, HiddenBlock, MaskPattern, MaskSpec};
pub use normalize::Normalizer;
pub use window::{make_windows, TimeSeriesWindow};
