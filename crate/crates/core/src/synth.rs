//! Synthetic volumes with exact ground truth, and Gaussian PSFs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::{fft_convolve, gaussian};
use crate::image::{LabelImage, NdImage};

/// Placement attempts per object before giving up.
const MAX_ATTEMPTS: usize = 20_000;
/// Minimum surface gap between objects, in voxels.
const GAP: f64 = 2.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    /// ZYX extents.
    pub shape: Vec<usize>,
    pub n_objects: usize,
    /// Inclusive range of in-plane radii, in voxels.
    pub radius_range: [f64; 2],
    pub seed: u64,
    /// Standard deviation of the additive noise as a fraction of the unit
    /// dynamic range.
    pub noise_sigma: f32,
    /// The z semi-axis is `radius * anisotropy`.
    pub anisotropy: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            shape: vec![32, 128, 128],
            n_objects: 20,
            radius_range: [5.0, 8.0],
            seed: 0,
            noise_sigma: 0.05,
            anisotropy: 1.0,
        }
    }
}

impl SynthSpec {
    fn validate(&self) -> Result<()> {
        if self.shape.len() != 3 || self.shape.contains(&0) {
            return Err(Error::BadShape(format!("expected a non-empty ZYX shape, got {:?}", self.shape)));
        }
        let [lo, hi] = self.radius_range;
        if !(lo > 0.0 && hi >= lo && hi.is_finite()) {
            return Err(Error::InvalidParameter(format!("radius range {:?}", self.radius_range)));
        }
        if !(self.anisotropy > 0.0 && self.anisotropy.is_finite()) {
            return Err(Error::InvalidParameter(format!("anisotropy {}", self.anisotropy)));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::InvalidParameter(format!("noise sigma {}", self.noise_sigma)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Blob {
    center: [f64; 3],
    radius: f64,
    brightness: f32,
}

impl Blob {
    /// Distance from the center in units where the blob is a sphere of radius
    /// `self.radius`.
    fn dist(&self, p: [f64; 3], anisotropy: f64) -> f64 {
        let dz = (p[0] - self.center[0]) / anisotropy;
        let dy = p[1] - self.center[1];
        let dx = p[2] - self.center[2];
        (dz * dz + dy * dy + dx * dx).sqrt()
    }
}

/// Flat top with a raised-cosine edge spanning 2 voxels around the radius.
fn taper(d: f64, r: f64) -> f64 {
    if d <= r - 1.0 {
        1.0
    } else if d < r + 1.0 {
        0.5 * (1.0 + (std::f64::consts::PI * (d - r + 1.0) / 2.0).cos())
    } else {
        0.0
    }
}

fn place(
    shape: &[usize],
    n: usize,
    radius_range: [f64; 2],
    anisotropy: f64,
    z_band: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Blob>> {
    let mut blobs: Vec<Blob> = Vec::with_capacity(n);
    for _ in 0..n {
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS {
            let radius = rng.random_range(radius_range[0]..=radius_range[1]);
            // keep the whole taper inside the volume
            let reach = [radius * anisotropy + 1.0, radius + 1.0, radius + 1.0];
            let mut center = [0.0; 3];
            let mut fits = true;
            for a in 0..3 {
                let (lo, hi) = (reach[a], shape[a] as f64 - 1.0 - reach[a]);
                if lo > hi {
                    fits = false;
                    break;
                }
                center[a] = match (a, z_band) {
                    (0, Some(band)) => {
                        let mid = (shape[0] as f64 - 1.0) / 2.0;
                        rng.random_range((mid - band).max(lo)..=(mid + band).min(hi).max(lo))
                    }
                    _ => rng.random_range(lo..=hi),
                };
            }
            if !fits {
                continue;
            }
            let candidate = Blob { center, radius, brightness: rng.random_range(0.7f32..=1.0) };
            if blobs.iter().all(|b| b.dist(center, anisotropy) > b.radius + radius + GAP) {
                blobs.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::PlacementFailure { placed: blobs.len(), requested: n });
        }
    }
    Ok(blobs)
}

/// Voxel index ranges covering a blob's taper.
fn bbox(b: &Blob, shape: &[usize], anisotropy: f64) -> [std::ops::Range<usize>; 3] {
    let reach = [b.radius * anisotropy + 1.0, b.radius + 1.0, b.radius + 1.0];
    std::array::from_fn(|a| {
        let lo = (b.center[a] - reach[a]).floor().max(0.0) as usize;
        let hi = ((b.center[a] + reach[a]).ceil() as usize + 1).min(shape[a]);
        lo..hi
    })
}

fn render(blobs: &[Blob], shape: &[usize], anisotropy: f64) -> (Vec<f32>, Vec<u32>) {
    let (ny, nx) = (shape[1], shape[2]);
    let n: usize = shape.iter().product();
    let mut values = vec![0.0f32; n];
    let mut labels = vec![0u32; n];
    for (id, b) in blobs.iter().enumerate() {
        let [rz, ry, rx] = bbox(b, shape, anisotropy);
        for z in rz {
            for y in ry.clone() {
                for x in rx.clone() {
                    let d = b.dist([z as f64, y as f64, x as f64], anisotropy);
                    let i = (z * ny + y) * nx + x;
                    let t = taper(d, b.radius) as f32 * b.brightness;
                    values[i] = values[i].max(t);
                    if d <= b.radius {
                        labels[i] = id as u32 + 1;
                    }
                }
            }
        }
    }
    (values, labels)
}

fn add_noise(values: &mut [f32], sigma: f32, rng: &mut ChaCha8Rng) {
    if sigma > 0.0 {
        let normal = Normal::new(0.0f32, sigma).expect("finite sigma");
        values.iter_mut().for_each(|v| *v += normal.sample(rng));
    }
}

/// Soft-edged ellipsoids plus Gaussian noise, with exact instance labels
/// `1..=n_objects` assigned in placement order.
pub fn generate_blobs(spec: &SynthSpec) -> Result<(NdImage, LabelImage)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let blobs = place(&spec.shape, spec.n_objects, spec.radius_range, spec.anisotropy, None, &mut rng)?;
    let (mut values, labels) = render(&blobs, &spec.shape, spec.anisotropy);
    add_noise(&mut values, spec.noise_sigma, &mut rng);
    Ok((NdImage::from_f32(spec.shape.clone(), values)?, NdImage::from_labels(spec.shape.clone(), labels)?))
}

/// Parameters of the three-channel cell monolayer phantom.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonolayerSpec {
    pub shape: Vec<usize>,
    pub n_cells: usize,
    pub nucleus_radius: [f64; 2],
    /// Cells extend up to this multiple of their nucleus radius.
    pub cell_ratio: f64,
    pub seed: u64,
    pub noise_sigma: f32,
}

impl Default for MonolayerSpec {
    fn default() -> Self {
        MonolayerSpec {
            shape: vec![48, 256, 256],
            n_cells: 20,
            nucleus_radius: [14.0, 18.0],
            cell_ratio: 1.7,
            seed: 0,
            noise_sigma: 0.04,
        }
    }
}

/// Channels and ground truth of a synthetic monolayer.
#[derive(Debug, Clone)]
pub struct Phantom {
    /// Bright cell outlines over a dim cytoplasm.
    pub membrane: NdImage,
    /// Puncta scattered through the cytoplasm.
    pub mito: NdImage,
    pub dna: NdImage,
    pub nuclei: LabelImage,
    pub cells: LabelImage,
}

impl Phantom {
    /// Membrane, mitochondria and DNA stacked as CZYX.
    pub fn channels(&self) -> Result<NdImage> {
        NdImage::stack_channels(&[&self.membrane, &self.mito, &self.dna])
    }
}

/// A single layer of cells: nuclei near the mid plane, cells assigned to the
/// nearest nucleus (distance normalized by nucleus radius) up to
/// `cell_ratio` radii, and a flat top and bottom two voxels from the border.
pub fn generate_monolayer(spec: &MonolayerSpec) -> Result<Phantom> {
    let blob_spec = SynthSpec {
        shape: spec.shape.clone(),
        n_objects: spec.n_cells,
        radius_range: spec.nucleus_radius,
        seed: spec.seed,
        noise_sigma: spec.noise_sigma,
        anisotropy: 1.0,
    };
    blob_spec.validate()?;
    if !(spec.cell_ratio > 1.0) {
        return Err(Error::InvalidParameter(format!("cell ratio {} must exceed 1", spec.cell_ratio)));
    }
    let shape = &spec.shape;
    let (nz, ny, nx) = (shape[0], shape[1], shape[2]);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let blobs = place(shape, spec.n_cells, spec.nucleus_radius, 1.0, Some(1.0), &mut rng)?;
    let (mut dna, nuclei) = render(&blobs, shape, 1.0);

    let n = dna.len();
    let mut cells = vec![0u32; n];
    for z in 2..nz.saturating_sub(2) {
        for y in 0..ny {
            for x in 0..nx {
                let p = [z as f64, y as f64, x as f64];
                let best = blobs
                    .iter()
                    .enumerate()
                    .map(|(i, b)| (i, b.dist(p, 1.0) / b.radius))
                    .min_by(|a, b| a.1.total_cmp(&b.1));
                if let Some((i, d)) = best {
                    let b = &blobs[i];
                    if d <= spec.cell_ratio && (p[0] - b.center[0]).abs() <= b.radius + 4.0 {
                        cells[(z * ny + y) * nx + x] = i as u32 + 1;
                    }
                }
            }
        }
    }
    // nuclei always sit inside their own cell
    for (c, &l) in cells.iter_mut().zip(&nuclei) {
        if l != 0 {
            *c = l;
        }
    }

    let plane = ny * nx;
    let mut outline = vec![0.0f32; n];
    for i in 0..n {
        let c = cells[i];
        if c == 0 {
            continue;
        }
        let (z, y, x) = (i / plane, (i / nx) % ny, i % nx);
        let mut neighbors = Vec::with_capacity(6);
        if z > 0 {
            neighbors.push(i - plane);
        }
        if z + 1 < nz {
            neighbors.push(i + plane);
        }
        if y > 0 {
            neighbors.push(i - nx);
        }
        if y + 1 < ny {
            neighbors.push(i + nx);
        }
        if x > 0 {
            neighbors.push(i - 1);
        }
        if x + 1 < nx {
            neighbors.push(i + 1);
        }
        if neighbors.iter().any(|&j| cells[j] != c) {
            outline[i] = 1.0;
        }
    }
    let outline = gaussian(&NdImage::from_f32(shape.clone(), outline)?, &[1.0], 4.0)?;
    let outline = outline.as_f32()?;
    let peak = outline.iter().cloned().fold(0.0f32, f32::max).max(1e-6);
    let mut membrane: Vec<f32> = outline
        .iter()
        .zip(&cells)
        .map(|(&o, &c)| (o / peak).min(1.0) * 0.9 + if c != 0 { 0.15 } else { 0.0 })
        .collect();

    let mut puncta = vec![0.0f32; n];
    for i in 0..n {
        if cells[i] != 0 && nuclei[i] == 0 && rng.random::<f32>() < 0.01 {
            puncta[i] = 1.0;
        }
    }
    let puncta = gaussian(&NdImage::from_f32(shape.clone(), puncta)?, &[1.0], 4.0)?;
    let puncta = puncta.as_f32()?;
    let peak = puncta.iter().cloned().fold(0.0f32, f32::max).max(1e-6);
    let mut mito: Vec<f32> = puncta
        .iter()
        .zip(cells.iter().zip(&nuclei))
        .map(|(&p, (&c, &l))| (p / peak).min(1.0) + if c != 0 && l == 0 { 0.1 } else { 0.0 })
        .collect();

    add_noise(&mut membrane, spec.noise_sigma, &mut rng);
    add_noise(&mut mito, spec.noise_sigma, &mut rng);
    add_noise(&mut dna, spec.noise_sigma, &mut rng);
    let img = |v: Vec<f32>| NdImage::from_f32(shape.clone(), v);
    Ok(Phantom {
        membrane: img(membrane)?,
        mito: img(mito)?,
        dna: img(dna)?,
        nuclei: NdImage::from_labels(shape.clone(), nuclei)?,
        cells: NdImage::from_labels(shape.clone(), cells)?,
    })
}

/// Separable Gaussian point spread function centered in an odd-sized grid and
/// normalized to unit sum. A zero sigma gives a one-voxel profile on that axis.
pub fn gaussian_psf(shape: &[usize], sigmas: &[f64]) -> Result<NdImage> {
    if shape.is_empty() || sigmas.len() != shape.len() {
        return Err(Error::InvalidParameter(format!("{} sigmas for shape {shape:?}", sigmas.len())));
    }
    if shape.iter().any(|&e| e % 2 == 0) {
        return Err(Error::EvenExtent(shape.to_vec()));
    }
    if sigmas.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
        return Err(Error::InvalidParameter(format!("sigmas {sigmas:?}")));
    }
    let profiles: Vec<Vec<f64>> = shape
        .iter()
        .zip(sigmas)
        .map(|(&n, &s)| {
            let c = (n / 2) as f64;
            let p: Vec<f64> = (0..n)
                .map(|i| {
                    let d = i as f64 - c;
                    if s == 0.0 {
                        (d == 0.0) as u8 as f64
                    } else {
                        (-d * d / (2.0 * s * s)).exp()
                    }
                })
                .collect();
            let total: f64 = p.iter().sum();
            p.into_iter().map(|v| v / total).collect()
        })
        .collect();
    let mut values = vec![1.0f64];
    for p in &profiles {
        values = values.iter().flat_map(|&a| p.iter().map(move |&b| a * b)).collect();
    }
    NdImage::from_f32(shape.to_vec(), values.into_iter().map(|v| v as f32).collect())
}

/// Shot noise at `photons` counts per unit intensity: each voxel becomes
/// `Poisson(v * photons) / photons`. Negative inputs count as 0.
pub fn poisson_noise(img: &NdImage, photons: f64, seed: u64) -> Result<NdImage> {
    if !(photons > 0.0 && photons.is_finite()) {
        return Err(Error::InvalidParameter(format!("photons must be positive, got {photons}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let out = img
        .values_f32()
        .iter()
        .map(|&v| {
            let mean = v.max(0.0) as f64 * photons;
            if mean == 0.0 {
                return 0.0;
            }
            let k: f64 = Poisson::new(mean).expect("positive mean").sample(&mut rng);
            (k / photons) as f32
        })
        .collect();
    Ok(img.like_f32(out))
}

/// Ground truth, PSF and blurred noisy observation for deconvolution runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeconvSpec {
    pub blobs: SynthSpec,
    /// Constant added to the truth so every voxel emits.
    pub background: f32,
    pub psf_sigma: [f64; 3],
    pub photons: f64,
}

impl Default for DeconvSpec {
    fn default() -> Self {
        DeconvSpec {
            blobs: SynthSpec { shape: vec![32, 96, 96], n_objects: 30, radius_range: [2.0, 4.0], noise_sigma: 0.0, ..SynthSpec::default() },
            background: 0.1,
            psf_sigma: [1.0, 2.0, 2.0],
            photons: 1000.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DeconvPhantom {
    pub truth: NdImage,
    pub psf: NdImage,
    pub observed: NdImage,
}

/// Blobs plus background, blurred by a Gaussian PSF truncated at 3 sigma and
/// degraded with shot noise.
pub fn generate_deconv_phantom(spec: &DeconvSpec) -> Result<DeconvPhantom> {
    let (blobs, _) = generate_blobs(&spec.blobs)?;
    let truth = blobs.like_f32(blobs.values_f32().iter().map(|&v| v.max(0.0) + spec.background).collect());
    let shape: Vec<usize> = spec.psf_sigma.iter().map(|&s| 2 * (3.0 * s).ceil() as usize + 1).collect();
    let psf = gaussian_psf(&shape, &spec.psf_sigma)?;
    let blurred = fft_convolve(&truth, &psf, false)?;
    let observed = poisson_noise(&blurred, spec.photons, spec.blobs.seed.wrapping_add(1))?;
    Ok(DeconvPhantom { truth, psf, observed })
}
