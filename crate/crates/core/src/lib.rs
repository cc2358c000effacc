//! OpenPort reference runtime core: envelopes, canonical hashing,
//! credentials, policy, tool registry, admission, write pipeline, audit,
//! and the demo accounting adapter.

pub mod adapter;
pub mod admission;
pub mod audit;
pub mod canonical;
pub mod clock;
pub mod credentials;
pub mod envelope;
pub mod ids;
pub mod pipeline;
pub mod policy;
pub mod registry;
