use std::collections::HashMap;

use rayon::prelude::*;

use crate::error::Result;
use crate::image::{Backend, NdImage};
use crate::registry::{dispatch, kernel_pair, ExecutionRegistry};

pub type AveragePrecisionKernel = fn(&NdImage, &NdImage, f64) -> Result<f64>;

pub(crate) fn register(reg: &mut ExecutionRegistry) {
    reg.register("average_precision", Backend::Reference, ap_ref as AveragePrecisionKernel);
    reg.register("average_precision", Backend::Accelerated, ap_acc as AveragePrecisionKernel);
}

kernel_pair!(ap_ref, ap_acc, ap_impl, (pred: &NdImage, truth: &NdImage, iou_threshold: f64) -> Result<f64>);

/// Default IoU needed for a prediction to count as a true positive.
pub const AP_IOU: f64 = 0.5;

/// Instance matching score `TP / (TP + FP + FN)`.
///
/// Prediction and truth instances (label 0 is background) are paired one to
/// one, greedily by descending IoU; a pair with IoU at or above
/// `iou_threshold` is a true positive. Two empty label images score 1.
pub fn average_precision(pred: &NdImage, truth: &NdImage, iou_threshold: f64) -> Result<f64> {
    dispatch("average_precision", &[pred, truth], |k: AveragePrecisionKernel| k(pred, truth, iou_threshold))
}

#[derive(Default)]
struct Overlaps {
    pairs: HashMap<(u32, u32), u64>,
    pred: HashMap<u32, u64>,
    truth: HashMap<u32, u64>,
}

impl Overlaps {
    fn add(&mut self, p: u32, t: u32) {
        if p != 0 {
            *self.pred.entry(p).or_default() += 1;
        }
        if t != 0 {
            *self.truth.entry(t).or_default() += 1;
        }
        if p != 0 && t != 0 {
            *self.pairs.entry((p, t)).or_default() += 1;
        }
    }

    fn merge(mut self, other: Overlaps) -> Overlaps {
        for (k, v) in other.pairs {
            *self.pairs.entry(k).or_default() += v;
        }
        for (k, v) in other.pred {
            *self.pred.entry(k).or_default() += v;
        }
        for (k, v) in other.truth {
            *self.truth.entry(k).or_default() += v;
        }
        self
    }
}

/// IoU of every overlapping (prediction, truth) pair, sorted by descending
/// IoU with ties broken by ascending ids.
pub fn iou_pairs(pred: &[u32], truth: &[u32]) -> (Vec<(f64, u32, u32)>, usize, usize) {
    let ov = overlaps(pred, truth, false);
    ranked(&ov)
}

fn overlaps(p: &[u32], t: &[u32], parallel: bool) -> Overlaps {
    const CHUNK: usize = 1 << 16;
    let count = |(a, b): (&[u32], &[u32])| {
        let mut o = Overlaps::default();
        a.iter().zip(b).for_each(|(&x, &y)| o.add(x, y));
        o
    };
    if parallel {
        p.par_chunks(CHUNK).zip(t.par_chunks(CHUNK)).map(count).reduce(Overlaps::default, Overlaps::merge)
    } else {
        count((p, t))
    }
}

fn ranked(ov: &Overlaps) -> (Vec<(f64, u32, u32)>, usize, usize) {
    let mut pairs: Vec<(f64, u32, u32)> = ov
        .pairs
        .iter()
        .map(|(&(p, t), &inter)| {
            let union = ov.pred[&p] + ov.truth[&t] - inter;
            (inter as f64 / union as f64, p, t)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    (pairs, ov.pred.len(), ov.truth.len())
}

fn ap_impl(pred: &NdImage, truth: &NdImage, iou_threshold: f64, parallel: bool) -> Result<f64> {
    truth.require_shape(pred.shape())?;
    let ov = overlaps(pred.as_labels()?, truth.as_labels()?, parallel);
    let (pairs, n_pred, n_truth) = ranked(&ov);
    let mut used_p = std::collections::HashSet::new();
    let mut used_t = std::collections::HashSet::new();
    let mut tp = 0usize;
    for (iou, p, t) in pairs {
        if iou < iou_threshold {
            break;
        }
        if !used_p.contains(&p) && !used_t.contains(&t) {
            used_p.insert(p);
            used_t.insert(t);
            tp += 1;
        }
    }
    let (fp, fneg) = (n_pred - tp, n_truth - tp);
    if tp + fp + fneg == 0 {
        return Ok(1.0);
    }
    Ok(tp as f64 / (tp + fp + fneg) as f64)
}
