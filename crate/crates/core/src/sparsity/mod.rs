//! Sparsity baselines: anisotropic total variation, its proximal map, the
//! TV-penalised least-squares solver and the multilevel Haar transform.

mod fista;
mod haar;
mod prox;
mod tv;

pub use fista::{fista_pls_tv, FistaConfig, FistaResult};
pub use haar::{haar_forward, haar_inverse, haar_truncate, HaarPyramid};
pub use prox::{tv_prox, tv_prox_objective, ProxResult};
pub use tv::{tv, tv_grad, tv_smooth, TvConfig};
