//! Drivable-area and road-anomaly detection toolkit.
//!
//! * [`dt`] turns a disparity image into a transformed disparity image in
//!   which the road is a flat plateau, by fitting the road profile and
//!   stereo rig roll.
//! * [`features`] derives depth, surface normals, elevation and HHA maps.
//! * [`dfm`] implements dynamic fusion layers whose kernels are generated
//!   per pixel from a second modality, in naive and factorized form.
//! * [`net`] is a small two-branch encoder-decoder that uses those layers.
//! * [`metrics`] scores segmentations (F-score, IoU, AP) and computes the
//!   efficiency ratio and coefficient of variation.
//! * [`synth`] renders road scenes with known ground truth.
//!
//! Runnable walkthroughs live in `examples/`.

pub mod cli;
pub mod dfm;
pub mod dt;
pub mod features;
pub mod io;
pub mod metrics;
pub mod net;
pub mod synth;
pub mod tensor;
