pub mod align;
pub mod dst;
pub mod edl;
pub mod error;
pub mod evalx;
pub mod gradcheck;
pub mod numerics;
pub mod opinion;
pub mod pipeline;
pub mod quadrant;
pub mod scalar;
pub mod scenario;
pub mod seed;

pub use error::{Error, Result};
pub use quadrant::{Quadrant, K};

/// Four-quadrant evidence in double precision.
pub type Evidence = opinion::Evidence<f64, K>;
/// Four-quadrant Dirichlet opinion in double precision.
pub type Opinion = opinion::DirichletOpinion<f64, K>;
/// Four-quadrant predictive distribution in double precision.
pub type Predictive = opinion::PredictiveDistribution<f64, K>;
/// Binary supported/unsupported/Ω mass in double precision.
pub type Mass = dst::BinaryMass<f64>;
/// Conflict score and gate weight in double precision.
pub type Conflict = dst::ConflictReport<f64>;
