//! Image quality and segmentation agreement measures.

mod ap;
mod frc;
mod pixel;
mod report;

pub use ap::{average_precision, iou_pairs, AveragePrecisionKernel, AP_IOU};
pub use frc::{
    checkerboard_split, frc, frc_resolution, single_image_frc, single_image_frc_curve, frc_with, FrcCurve,
    FrcKernel, FrcOptions, FRC_THRESHOLD, SUPPORT_RINGS,
};
pub use pixel::{
    affine_fit, masked_quality, psnr, si_psnr, ssim, ssim_windows, PsnrKernel, SiPsnrKernel, SsimKernel, SsimWindows,
    SI_PSNR_EXACT_EPS, SSIM_SIGMA, SSIM_TRUNCATE,
};
pub use report::{MetricReport, METRIC_SCHEMA};
pub(crate) use pixel::value_range;

use crate::registry::ExecutionRegistry;

pub(crate) fn register(reg: &mut ExecutionRegistry) {
    ap::register(reg);
    frc::register(reg);
    pixel::register(reg);
}
