pub mod build_ssm;
pub mod eval;
pub mod fit;
pub mod loo;
pub mod recon;
pub mod synth;
