pub mod bootstrap;
pub mod calibrate;
pub mod eval;
pub mod fit;
pub mod report;
pub mod synth;
pub mod train;
