//! Histogram thresholds, binary morphology and mask cleanup.

mod cleanup;
mod morphology;
mod threshold;

pub use cleanup::{fill_holes, remove_small_objects, FillHolesKernel, RemoveSmallKernel};
pub use morphology::{binary_morphology, MorphOp, MorphologyKernel};
pub use threshold::{multi_otsu, otsu_threshold, Histogram, MultiOtsuKernel, OtsuKernel};


use crate::registry::ExecutionRegistry;

pub(crate) fn register(reg: &mut ExecutionRegistry) {
    threshold::register(reg);
    morphology::register(reg);
    cleanup::register(reg);
}
