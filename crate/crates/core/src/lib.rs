//! Synthetic acoustoelectric (AE) imaging.
//!
//! Simulates AE channel data for single-element (synthetic aperture) and focused
//! transmissions over a 2D source field, conditions it the way a differential,
//! matched-filtered acquisition would, and reconstructs images by SA delay-and-sum
//! or FUS line mapping. Coherence weighting, beam-amplitude correction and
//! resolution/SNR metrics operate on the reconstructions.

pub mod acquisition;
pub mod coherence;
pub mod domain;
pub mod error;
pub mod export;
pub mod forward;
pub mod io;
pub mod metrics;
pub mod reconstruct;

pub use acquisition::AcquisitionSpec;
pub use coherence::{BeamMap, CoherenceKind, CoherenceMap};
pub use domain::{ArrayGeometry, Medium, PixelGrid, Point, PulseKind, PulseSpec, SFieldGrid};
pub use error::{AeError, Result};
pub use forward::{
    ChannelDataSet, Decay, Directivity, PressureModel, SimulationSetup, TransmitEvent,
};
pub use metrics::{MetricsReport, Roi, TargetSpec};
pub use reconstruct::{ApertureSamples, BeamformedImage, Method, PulseWindow, WindowAlignment};
