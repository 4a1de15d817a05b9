use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{median, StructuringElement};
use crate::image::{strides, unravel, NdImage};
use crate::morphthresh::{binary_morphology, fill_holes, multi_otsu, otsu_threshold, remove_small_objects, MorphOp};
use crate::ops::{normalize_minmax, threshold};
use crate::segmentation::{distance_transform, erode_labels, find_seeds, label_mask, watershed, Connectivity};
use crate::transform::{rescale, resize_nearest_to};

/// Wall time of one pipeline stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageTiming {
    pub stage: String,
    pub seconds: f64,
}

/// Result of a pipeline run: labels, per-stage timings in execution order and
/// the parameters that were in effect.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub labels: NdImage,
    pub stages: Vec<StageTiming>,
    pub params: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NucleiParams {
    pub downscale: f64,
    pub median_radius: f64,
    pub max_hole_size: usize,
    pub seed_radius: f64,
    pub min_size: usize,
}

impl Default for NucleiParams {
    fn default() -> Self {
        NucleiParams { downscale: 0.5, median_radius: 5.0, max_hole_size: 20, seed_radius: 10.0, min_size: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellParams {
    pub classes: usize,
    /// `None` fills every enclosed hole in the membrane mask.
    pub max_hole_size: Option<usize>,
    pub monolayer_scale: f64,
    pub closing_radius: f64,
    pub seed_erosion: f64,
    /// Footprint radius of the watershed stage. Seeds come from the nuclei, so
    /// a marker-driven flood has no use for it; it is kept for the record.
    pub watershed_radius: f64,
    pub min_size: usize,
}

impl Default for CellParams {
    fn default() -> Self {
        CellParams {
            classes: 3,
            max_hole_size: None,
            monolayer_scale: 0.25,
            closing_radius: 17.0,
            seed_erosion: 5.0,
            watershed_radius: 8.0,
            min_size: 100,
        }
    }
}

struct Stages {
    timings: Vec<StageTiming>,
}

impl Stages {
    fn run<T>(&mut self, name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f()?;
        self.timings.push(StageTiming { stage: name.to_string(), seconds: t.elapsed().as_secs_f64() });
        Ok(out)
    }
}

/// Otsu mask, or an empty mask when the image has a single value.
fn otsu_mask(img: &NdImage) -> Result<NdImage> {
    match otsu_threshold(img, 256) {
        Ok(t) => threshold(img, t),
        Err(Error::DegenerateImage(_)) => Ok(img.like_mask(vec![false; img.len()])),
        Err(e) => Err(e),
    }
}

fn require_3d(img: &NdImage) -> Result<()> {
    if img.ndim() != 3 {
        return Err(Error::BadShape(format!("expected a 3-D volume, got shape {:?}", img.shape())));
    }
    Ok(())
}

/// Nuclei from a DNA volume: normalize, downscale, median, Otsu, hole
/// filling, distance-seeded watershed, upscale and size filtering.
pub fn segment_nuclei(dna: &NdImage) -> Result<PipelineRun> {
    segment_nuclei_with(dna, &NucleiParams::default())
}

pub fn segment_nuclei_with(dna: &NdImage, p: &NucleiParams) -> Result<PipelineRun> {
    require_3d(dna)?;
    let mut st = Stages { timings: Vec::new() };
    let norm = st.run("normalize", || normalize_minmax(dna))?;
    let small = st.run("downscale", || rescale(&norm, &[p.downscale], 1, true))?;
    let smooth = st.run("median", || median(&small, &StructuringElement::ball(3, p.median_radius)))?;
    let mask = st.run("threshold", || otsu_mask(&smooth))?;
    let mask = st.run("fill_holes", || fill_holes(&mask, Some(p.max_hole_size)))?;
    let dist = st.run("distance", || distance_transform(&mask))?;
    let seeds = st.run("seeds", || find_seeds(&dist, &StructuringElement::ball(3, p.seed_radius)))?;
    let labels = st.run("watershed", || {
        let landscape = dist.like_f32(dist.as_f32()?.iter().map(|&d| -d).collect());
        let flooded = watershed(&landscape, &seeds, Some(&mask))?;
        label_orphans(&flooded, &mask)
    })?;
    let full = st.run("upscale", || resize_nearest_to(&labels, dna.shape()))?;
    let out = st.run("size_filter", || remove_small_objects(&full, p.min_size))?;

    let mut params = BTreeMap::new();
    params.insert("downscale".into(), p.downscale.to_string());
    params.insert("downscale_order".into(), "1".into());
    params.insert("median_radius".into(), p.median_radius.to_string());
    params.insert("max_hole_size".into(), p.max_hole_size.to_string());
    params.insert("seed_radius".into(), p.seed_radius.to_string());
    params.insert("min_size".into(), p.min_size.to_string());
    params.insert("landscape".into(), "negative distance transform".into());
    Ok(PipelineRun { labels: out.with_spacing_opt(dna.spacing().map(<[f64]>::to_vec)), stages: st.timings, params })
}

/// Gives every masked component that no seed reached its own id, numbered
/// after the largest existing label.
fn label_orphans(labels: &NdImage, mask: &NdImage) -> Result<NdImage> {
    let l = labels.as_labels()?;
    let m = mask.as_mask()?;
    let orphan: Vec<bool> = l.iter().zip(m).map(|(&id, &inside)| inside && id == 0).collect();
    if !orphan.contains(&true) {
        return Ok(labels.clone());
    }
    let (extra, _) = label_mask(&orphan, labels.shape(), Connectivity::Face, false);
    let base = l.iter().copied().max().unwrap_or(0);
    let out = l.iter().zip(&extra).map(|(&id, &e)| if e != 0 { base + e } else { id }).collect();
    Ok(labels.like_labels(out))
}

/// Cells grown from nuclei through the membrane signal inside a monolayer
/// mask.
pub fn segment_cells(membrane: &NdImage, mito: &NdImage, dna: &NdImage, nuclei: &NdImage) -> Result<PipelineRun> {
    segment_cells_with(membrane, mito, dna, nuclei, &CellParams::default())
}

pub fn segment_cells_with(
    membrane: &NdImage,
    mito: &NdImage,
    dna: &NdImage,
    nuclei: &NdImage,
    p: &CellParams,
) -> Result<PipelineRun> {
    require_3d(membrane)?;
    for other in [mito, dna, nuclei] {
        other.require_shape(membrane.shape())?;
    }
    let mut st = Stages { timings: Vec::new() };
    let norm = st.run("normalize", || normalize_minmax(membrane))?;
    let membrane_mask = st.run("membrane_threshold", || match multi_otsu(&norm, p.classes, 256) {
        Ok(t) => threshold(&norm, t[0]),
        Err(Error::DegenerateImage(_)) => Ok(norm.like_mask(vec![false; norm.len()])),
        Err(e) => Err(e),
    })?;
    let membrane_mask = st.run("fill_holes", || fill_holes(&membrane_mask, p.max_hole_size))?;
    let monolayer = st.run("monolayer_mask", || {
        let mut union: Option<Vec<bool>> = None;
        for ch in [membrane, mito, dna] {
            let small = rescale(&normalize_minmax(ch)?, &[p.monolayer_scale], 1, true)?;
            let m = otsu_mask(&small)?;
            let m = m.as_mask()?;
            union = Some(match union {
                None => m.to_vec(),
                Some(u) => u.iter().zip(m).map(|(&a, &b)| a || b).collect(),
            });
        }
        let small_shape = crate::transform::output_shape(membrane.shape(), &[p.monolayer_scale; 3]);
        let union = NdImage::from_mask(small_shape, union.unwrap_or_default())?.tagged(membrane.backend());
        let closed = close_padded(&union, &StructuringElement::planar_disk(3, p.closing_radius))?;
        resize_nearest_to(&closed, membrane.shape())
    })?;
    let mask = NdImage::from_mask(
        membrane.shape().to_vec(),
        monolayer.as_mask()?.iter().zip(membrane_mask.as_mask()?).map(|(&a, &b)| a || b).collect(),
    )?
    .tagged(membrane.backend());
    let seeds = st.run("seeds", || {
        let eroded = erode_labels(nuclei, &StructuringElement::ball(3, p.seed_erosion))?;
        let e = eroded.as_labels()?;
        // a nucleus too small to survive erosion seeds with its full extent
        let survivors: HashSet<u32> = e.iter().copied().filter(|&l| l != 0).collect();
        let kept = e
            .iter()
            .zip(nuclei.as_labels()?)
            .zip(mask.as_mask()?)
            .map(|((&er, &full), &m)| match (m, er) {
                (false, _) => 0,
                (true, 0) if full != 0 && !survivors.contains(&full) => full,
                (true, l) => l,
            })
            .collect();
        Ok(eroded.like_labels(kept))
    })?;
    let cells = st.run("watershed", || watershed(&norm, &seeds, Some(&mask)))?;
    let cells = st.run("nucleus_assign", || {
        // cells carry their nucleus id, so each nucleus goes whole to its own cell
        let grown: HashSet<u32> = cells.as_labels()?.iter().copied().filter(|&l| l != 0).collect();
        let out = cells
            .as_labels()?
            .iter()
            .zip(nuclei.as_labels()?)
            .map(|(&c, &n)| if n != 0 && grown.contains(&n) { n } else { c })
            .collect();
        Ok(cells.like_labels(out))
    })?;
    let out = st.run("size_filter", || remove_small_objects(&cells, p.min_size))?;

    let mut params = BTreeMap::new();
    params.insert("classes".into(), p.classes.to_string());
    params.insert("max_hole_size".into(), p.max_hole_size.map_or("unlimited".into(), |v| v.to_string()));
    params.insert("monolayer_scale".into(), p.monolayer_scale.to_string());
    params.insert("closing_radius".into(), p.closing_radius.to_string());
    params.insert("seed_erosion".into(), format!("{} (per label)", p.seed_erosion));
    params.insert("watershed_radius".into(), format!("{} (unused by marker flood)", p.watershed_radius));
    params.insert("min_size".into(), p.min_size.to_string());
    params.insert("landscape".into(), "normalized membrane intensity".into());
    params.insert("nucleus_assign".into(), "nucleus voxels join the cell grown from that nucleus".into());
    Ok(PipelineRun { labels: out.with_spacing_opt(membrane.spacing().map(<[f64]>::to_vec)), stages: st.timings, params })
}

/// Closing on an edge-replicated copy padded by the footprint reach, so the
/// erosion step does not eat into the volume border.
fn close_padded(mask: &NdImage, se: &StructuringElement) -> Result<NdImage> {
    let shape = mask.shape();
    let nd = shape.len();
    let pad: Vec<usize> = (0..nd).map(|a| se.reach(a)).collect();
    let big: Vec<usize> = shape.iter().zip(&pad).map(|(&n, &p)| n + 2 * p).collect();
    let m = mask.as_mask()?;
    let st = strides(shape);
    let mut c = vec![0usize; nd];
    let padded: Vec<bool> = (0..big.iter().product())
        .map(|i| {
            unravel(i, &big, &mut c);
            let src: usize = (0..nd).map(|a| (c[a].saturating_sub(pad[a])).min(shape[a] - 1) * st[a]).sum();
            m[src]
        })
        .collect();
    let padded = NdImage::from_mask(big.clone(), padded)?.tagged(mask.backend());
    let closed = binary_morphology(&padded, se, MorphOp::Close)?;
    let cm = closed.as_mask()?;
    let bst = strides(&big);
    let out = (0..m.len())
        .map(|i| {
            unravel(i, shape, &mut c);
            cm[(0..nd).map(|a| (c[a] + pad[a]) * bst[a]).sum::<usize>()]
        })
        .collect();
    Ok(mask.like_mask(out))
}
