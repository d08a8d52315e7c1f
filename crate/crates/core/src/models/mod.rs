//! Worked models: Newcomb's speed-of-light data under a normal model, and
//! Cormack-Jolly-Seber capture-recapture with a Freeman-Tukey discrepancy.

pub mod chi2;
pub mod cjs;
pub mod newcomb;

pub use cjs::{CaptureHistoryMatrix, CjsData, CjsModel, CjsParams, CjsVariant, MArray};
pub use newcomb::{NewcombData, NewcombModel};
