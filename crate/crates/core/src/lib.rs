//! Dynamic ranking model built on the Plackett-Luce distribution.
//!
//! Team strengths evolve over tournament editions through a fixed effect,
//! a regression on team-level predictors and a mean-reverting component
//! that is updated by the score of the previous ranking. The crate covers
//! the distribution itself ([`pl`]), the strength recursion ([`filter`]),
//! maximum-likelihood and ridge-penalized estimation ([`estimation`]),
//! rolling one-step-ahead forecasting ([`forecast`]), CSV ingestion
//! ([`data_io`]), rank-correlation diagnostics ([`diagnostics`]) and the
//! command-line front end ([`cli`]).

pub mod cli;
pub mod data_io;
pub mod diagnostics;
pub mod error;
pub mod estimation;
pub mod filter;
pub mod forecast;
pub mod json;
pub mod linalg;
pub mod optim;
pub mod pl;
pub mod sim;

pub use error::{Error, Result};
pub use filter::{Coefficients, Edition, FilterOutput, PanelDataset};
pub use pl::{Ranking, StrengthVector, TeamId};
