//! Learning-based lidar odometry: panoramic depth encoding of scans, a dual
//! sub-network 6-DOF pose regressor, its training loop, trajectory
//! integration and odometry metrics.

pub mod encoding;
pub mod eval;
pub mod kitti;
pub mod network;
pub mod pose;
pub mod synthetic;
pub mod trainer;
