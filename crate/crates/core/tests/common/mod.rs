//! Helpers shared by the integration tests. Each test binary uses a subset.
#![allow(dead_code)]

pub mod grad_suite;
pub mod loss_oracle;
pub mod metric_oracle;
pub mod toy;
