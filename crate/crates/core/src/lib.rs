//! Multi-channel target-speaker enhancement and overlapped-speech
//! recognition: room simulation, spatial features, mask estimation, a small
//! tape autodiff with TCN and CLDNN models, losses, metrics and training
//! regimes.

pub mod config;
pub mod dataset;
pub mod dsp;
pub mod error;
pub mod features;
pub mod mask;
pub mod metrics;
pub mod nn;
pub mod plot;
pub mod room;
pub mod speech;
pub mod train;
pub mod wav;

pub use dataset::{DatasetConfig, Sample, SceneRecord, Split};
pub use dsp::{ComplexSpectrogram, FrameSpec, MultiChannelWave};
pub use error::{Error, Result};
pub use features::{FeaturePack, LfbLayer};
pub use mask::{Mask, MaskKind};
pub use nn::{Checkpoint, CldnnConfig, CldnnLite, TcnConfig, TcnMaskNet};
pub use room::{ArrayGeometry, RoomSpec, SceneSpec};
pub use train::{Regime, RegimeConfig};
