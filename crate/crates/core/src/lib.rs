//! Covariate adjustment set discovery for treatment effect estimation.
//!
//! The library models causal systems as semi-Markovian graphs (directed plus
//! bi-directed edges), simulates linear structural causal models over them,
//! and searches for valid back-door adjustment sets by attaching a synthetic
//! environment variable to a known parent (or spouse) of the treatment and
//! testing conditional invariance of the outcome across environments.
//!
//! Modules:
//! - [`graph`]: semi-Markovian graphs, d-separation, back-door criterion.
//! - [`scm`]: linear SCMs, simulation, datasets, ground-truth effects.
//! - [`envgen`]: softmax environment assignment from a treatment parent.
//! - [`citest`]: conditional independence tests (random Fourier features and
//!   partial-correlation z-test).
//! - [`adjust`]: ridge-based adjustment estimator of the average treatment
//!   effect for a fixed covariate set.
//! - [`search`]: subset search over candidate adjustment sets and full
//!   back-door enumeration from the treatment's parents.
//! - [`irm`]: invariant risk minimization on one treatment arm plus feature
//!   selection by clustering coefficient magnitudes.
//! - [`oracle`]: brute-force verifiers and random graph generators used to
//!   validate the equivalence between invariance and the back-door criterion.
//! - [`bench`]: scripted experiment grids producing deterministic CSV tables.

pub mod adjust;
pub mod bench;
pub mod citest;
pub mod envgen;
pub mod graph;
pub mod irm;
pub mod oracle;
pub mod rng;
pub mod scm;
pub mod search;
