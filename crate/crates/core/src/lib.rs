pub mod corpus;
pub mod domain;
pub mod features;
pub mod learner;
pub mod metrics;
pub mod providers;
pub mod scheduler;
pub mod store;
