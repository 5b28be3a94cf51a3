//! The five workflows, registered in a fixed order.

pub mod backport_tracker;
pub mod ci_bridge;
pub mod merge_service;
pub mod minimizer;
pub mod pr_hygiene;

use std::sync::{Arc, Mutex};

use crate::engine::Workflow;

/// Workflow set for one repository, in dispatch order.
pub fn standard() -> Vec<Box<dyn Workflow>> {
    let candidates = Arc::new(Mutex::new(ci_bridge::CandidateStore::default()));
    vec![
        Box::new(ci_bridge::CiBridge::new(Arc::clone(&candidates))),
        Box::new(pr_hygiene::PrHygiene::new()),
        Box::new(merge_service::MergeService::new()),
        Box::new(backport_tracker::BackportTracker::new()),
        Box::new(minimizer::Minimizer::new(candidates)),
    ]
}
