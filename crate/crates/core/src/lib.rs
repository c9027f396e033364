//! Self-supervised local descriptors for 3D point clouds.
//!
//! A PointNet-style network turns ball-query clusters into descriptors. It
//! is trained by registering a cloud against a randomly Z-rotated copy of
//! itself through a differentiable closed-form weighted Kabsch solve, and
//! scored by the rotation error. At test time descriptors are matched by
//! nearest neighbor and registered with RANSAC.
//!
//! Everything numeric is generic over [`scalar::Real`]; the aliases below
//! fix it to `f64`.

pub mod autodiff;
pub mod cf;
pub mod checkpoint;
pub mod error;
pub mod eval;
pub mod geometry;
pub mod gradsuite;
pub mod io;
pub mod keypoints;
pub mod linalg;
pub mod network;
pub mod ransac;
pub mod rng;
pub mod sampling;
pub mod scalar;
pub mod synth;
pub mod train;

/// Double-precision instantiations used by the pipeline and the CLI.
pub type PointCloud = geometry::PointCloud<f64>;
pub type RigidTransform = geometry::RigidTransform<f64>;
pub type ClusterSet = sampling::ClusterSet<f64>;
pub type DescriptorSet = network::DescriptorSet<f64>;
pub type DescriptorParams = network::DescriptorParams<f64>;
pub type Tensor = autodiff::Tensor<f64>;
pub type Graph = autodiff::Graph<f64>;
pub type Mat3 = linalg::Mat3<f64>;
pub type Vec3 = linalg::Vec3<f64>;
