pub mod checkpoint;
pub mod config;
pub mod cswp;
pub mod edfpm;
pub mod encoder;
pub mod error;
pub mod fsc;
pub mod grid;
pub mod heads;
pub mod metrics;
pub mod modality;
pub mod model;
pub mod mprgd;
pub mod nn;
pub mod objectives;
pub mod parallel;
pub mod phantom;
pub mod radiomics;
pub mod sweep;
pub mod trainer;
pub mod uald;
