pub mod audio;
pub mod config;
pub mod encoding;
pub mod eval;
pub mod flow;
pub mod gesture;
pub(crate) mod image;
pub mod selftest;
pub mod session;
pub mod stream;
pub mod svm;
pub mod synth;
pub mod testutil;
pub mod trajectory;
