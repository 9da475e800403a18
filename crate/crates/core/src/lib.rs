//! LiDAR-aided precise point positioning: scan registration with covariance,
//! PPP with RAIM screening, and factor-graph fusion of both.

pub mod cli;
pub mod cov_truth;
pub mod fusion;
pub mod geodesy;
pub mod gnss;
pub mod icp;
pub mod io;
pub mod metrics;
pub mod pointcloud;
pub mod raim;
pub mod sim;
pub mod so3;
