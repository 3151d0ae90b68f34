pub mod analyze;
pub mod diff;
pub mod fixture;
pub mod report;
pub mod revert;
pub mod run;
pub mod scheme;
pub mod soup;
pub mod sparsify;
pub mod swap;
pub mod ties;
