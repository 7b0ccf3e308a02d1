//! Checkpoint archives and teacher → student weight selection.
//!
//! Selection runs in three steps: [`select_layers`] keeps the first N blocks
//! of each stage, [`map_components`] pairs tensors by canonical name, and
//! [`select_elements`] picks index lists along every reduced width. The
//! result is a [`SelectionPlan`] that [`apply_plan`] turns into weights.

pub mod archive;
mod plan;
mod select;

pub use archive::{read_archive, write_archive};
pub use plan::{apply_plan, gather, AxisPlan, PlanEntry, SelectionPlan};
pub use select::{
    dual_plans, map_components, select_elements, select_layers, single_plan, LayerMap, SelectionStrategy, StrategyKind,
};
