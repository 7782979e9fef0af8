pub mod autodiff;
pub mod backbones;
pub mod cli;
pub mod data2vec;
pub mod error;
pub mod eval;
pub mod finetune;
pub mod fsutil;
pub mod harmonize;
pub mod mae;
pub mod params;
pub mod pretrain;
pub mod seed;
pub mod simclr;
pub mod splits;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
