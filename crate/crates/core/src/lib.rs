pub mod hybrid;
pub mod linalg;
pub mod lyapunov;
pub mod poincare;
pub mod sampling;
pub mod models;
pub mod certify;
pub mod cli;
