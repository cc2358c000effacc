//! Conformance kit: machine-readable profiles, a black-box runner that
//! works in-process or over HTTP, a seeded fuzz corpus, and a release gate.

pub mod fuzz;
pub mod gate;
pub mod profile;
pub mod runner;
pub mod transport;

pub use fuzz::{generate_corpus, run_fuzz, FuzzReport};
pub use gate::{gate, GateOptions, GateReport};
pub use profile::{ConformanceProfile, ProfileError};
pub use runner::{render, run_profile, Check, ConformanceReport};
pub use transport::{HttpRequest, HttpResponse, LocalReference, Target};
