//! Distance transform, seeds, watershed, labeling and the nucleus/cell
//! pipelines.

mod components;
mod edt;
mod erode;
mod pipeline;
mod seeds;
mod watershed;

pub use components::{connected_components, ComponentsKernel, Connectivity};
pub use edt::{distance_transform, DistanceKernel};
pub use erode::{erode_labels, ErodeLabelsKernel};
pub use pipeline::{
    segment_cells, segment_cells_with, segment_nuclei, segment_nuclei_with, CellParams, NucleiParams, PipelineRun,
    StageTiming,
};
pub use seeds::{find_seeds, SeedsKernel};
pub use watershed::{watershed, WatershedKernel};

pub(crate) use components::label_mask;

use crate::registry::ExecutionRegistry;

pub(crate) fn register(reg: &mut ExecutionRegistry) {
    components::register(reg);
    edt::register(reg);
    erode::register(reg);
    seeds::register(reg);
    watershed::register(reg);
}
