pub mod error;
pub mod evalcli;
pub mod federation;
pub mod kgraph;
pub mod ledger;
pub mod model;
pub mod numcore;
pub mod privacy;
pub mod synthdata;

pub use error::{Error, Result};
