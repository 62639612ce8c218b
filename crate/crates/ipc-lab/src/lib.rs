pub mod chain;
pub mod conventions;
pub mod error;
pub mod oracle;
pub mod percolation;
pub mod offspring;
pub mod rng;
pub mod special;
pub mod stats;
pub mod structural;
