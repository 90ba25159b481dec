//! Gaussian process regression with squared-exponential kernels, trained by
//! quantum-inspired Hamiltonian Monte Carlo under probabilistic inequality and
//! monotonicity constraints placed adaptively.
//!
//! ```
//! use qhmc_gp::{gp, Dataset, Hyperparams, Points};
//!
//! let x = Points::from_rows(&[[0.0], [0.5], [1.0]]).unwrap();
//! let data = Dataset::new(x, vec![0.0, 0.4, 0.8]).unwrap();
//! let hyper = Hyperparams::from_linear(1.0, 0.5, 0.01).unwrap();
//! let post = gp::posterior(&hyper, &data, &Points::from_rows(&[[0.5]]).unwrap()).unwrap();
//! assert!((post.mean[0] - 0.4).abs() < 0.01);
//! ```

pub mod adaptive;
pub mod bench;
pub mod constraints;
pub mod error;
pub mod gp;
pub mod kernels;
pub mod normal;
pub mod points;
pub mod rng;
pub mod sampler;

pub use adaptive::{adaptive_train, AdaptiveConfig, AdaptiveTrace, Strategy, TestSet, TraceRecord};
pub use bench::{run_experiment, BenchFunction, BenchmarkSpec, ExperimentConfig, ExperimentReport};
pub use constraints::{ConstraintKind, ConstraintSet, Enforcement, MarginReport};
pub use error::{Error, Result};
pub use gp::{Dataset, GpModel, PosteriorSummary};
pub use kernels::Hyperparams;
pub use points::Points;
pub use sampler::{run_chain, run_hmc, HmcConfig, QhmcConfig, SampleChain, Target};
