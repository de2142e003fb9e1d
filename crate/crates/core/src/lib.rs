//! Multichannel speech enhancement: a weighted delay-and-sum beamformer
//! followed by a Wiener postfilter driven by coherent-to-diffuse power ratio
//! (CDR) estimates, plus a synthetic scene generator for evaluation.
//!
//! ```
//! use cdrpost_core::{enhance, ArrayGeometry, Doa, EnhancementConfig};
//! use cdrpost_core::scene::{speech_shaped_source, synthesize_scene, SceneConfig};
//!
//! let geometry = ArrayGeometry::chime_front5();
//! let source = speech_shaped_source(16_000, 16_000.0, 1).unwrap();
//! let doa = Doa::from_degrees(30.0, 90.0);
//! let scene = synthesize_scene(&geometry, doa, &source, 0.0, &SceneConfig::default()).unwrap();
//! let out = enhance(&scene.mixture, &geometry, &EnhancementConfig::with_doa(doa)).unwrap();
//! assert_eq!(out.output.len(), source.len());
//! ```

pub mod aggregation;
pub mod beamformer;
pub mod cdr;
pub mod coherence;
pub mod error;
pub mod evaluation;
pub mod filterbank;
pub mod pipeline;
pub mod postfilter;
pub mod scene;
pub mod spatial;

pub use rustfft::num_complex::Complex64;

pub use aggregation::PairSet;
pub use beamformer::{BeamformerWeights, GccConfig, ScreeningConfig, Segmentation, TdoaTrack};
pub use cdr::{CdrEstimatorKind, CdrValue};
pub use error::{Error, Result};
pub use filterbank::{Filterbank, FilterbankConfig, TfTensor, WindowShape};
pub use pipeline::{
    enhance, enhance_chunked, BeamformerPlan, Diagnostics, DoaSource, Enhancement,
    EnhancementConfig, Enhancer, Grid, PairPolicy, WeightingMode,
};
pub use postfilter::PostfilterConfig;
pub use spatial::{ArrayGeometry, Doa};
