//! Building blocks for navigating speech-recording collections as mind maps.

pub mod clusterer;
pub mod config;
pub mod corpus;
pub mod fixtures;
pub mod fsutil;
pub mod illustrator;
pub mod par;
pub mod pipeline;
pub mod provider;
pub mod search;
pub mod store;
pub mod textprep;
pub mod topics;
pub mod vectorizer;
