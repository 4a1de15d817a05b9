use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use voxelkit::deconv::{richardson_lucy_with, Init, IterationTrace, RlOptions, StopMetric, StoppingRule};
use voxelkit::io::{export_slice, read_volume_with_axes, write_volume, write_volume_with_axes};
use voxelkit::metrics::{average_precision, masked_quality, si_psnr, MetricReport, AP_IOU};
use voxelkit::segmentation::{segment_cells, segment_nuclei, PipelineRun};
use voxelkit::synth::{
    gaussian_psf, generate_blobs, generate_deconv_phantom, generate_monolayer, DeconvSpec, MonolayerSpec, SynthSpec,
};
use voxelkit::transform::rescale;
use voxelkit::{Backend, Error, NdImage};
use voxelkit_cli::report::{params_string, shape_string};
use voxelkit_cli::{measure, median, TimingReport, TimingRow};

/// Largest cross-backend difference tolerated by bench-rescale.
const RESCALE_TOLERANCE: f64 = 1e-4;
/// Largest relative per-iteration metric difference tolerated by deconvolve.
const TRACE_TOLERANCE: f64 = 1e-3;

#[derive(Parser)]
#[command(name = "voxelkit", version, about = "Benchmarks and pipelines on backend-tagged volumes")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    #[arg(long, global = true, value_enum, default_value_t = BackendChoice::Both)]
    backend: BackendChoice,
    /// Timed repeats per measurement.
    #[arg(long, global = true, default_value_t = 3, value_parser = clap::value_parser!(u64).range(3..))]
    repeats: u64,
    /// Untimed runs before the timed ones.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    warmup: u64,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Format of the timing report.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BackendChoice {
    Reference,
    Accelerated,
    Both,
}

impl BackendChoice {
    fn backends(self) -> Vec<Backend> {
        match self {
            BackendChoice::Reference => vec![Backend::Reference],
            BackendChoice::Accelerated => vec![Backend::Accelerated],
            BackendChoice::Both => vec![Backend::Reference, Backend::Accelerated],
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Time the upscale/downscale round trip for each spline order.
    BenchRescale(BenchRescaleArgs),
    /// Segment nuclei and cells from a membrane, mitochondria, DNA volume.
    Segment(SegmentArgs),
    /// Richardson-Lucy deconvolution with a stopping rule.
    Deconvolve(DeconvolveArgs),
    /// Write a synthetic volume and its ground truth.
    Synth(SynthArgs),
    /// Export one plane of a volume as an 8-bit PGM.
    ExportSlice(ExportSliceArgs),
}

#[derive(Args)]
struct BenchRescaleArgs {
    /// NDIV volume; a synthetic blob volume is used when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "60,256,256")]
    shape: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5")]
    orders: Vec<u8>,
    /// Upscale factor, then downscale factor.
    #[arg(long, value_delimiter = ',', default_value = "2.0,0.5")]
    factors: Vec<f64>,
    /// Blobs in the synthetic volume.
    #[arg(long, default_value_t = 20)]
    objects: usize,
    /// Gaussian smoothing before the downscale.
    #[arg(long)]
    anti_aliasing: bool,
    /// Build the synthetic volume at half size and upsample it 2x with
    /// order 1, so the benchmark input is itself bilinearly upsampled.
    /// Extents must be even.
    #[arg(long)]
    bilinear_input: bool,
}

#[derive(Args)]
struct SegmentArgs {
    /// CZYX NDIV volume with membrane, mitochondria and DNA channels.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "48,256,256")]
    shape: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    cells: usize,
}

#[derive(Args)]
struct DeconvolveArgs {
    /// Observed NDIV volume; a blurred noisy phantom is used when absent.
    #[arg(long)]
    input: Option<PathBuf>,
    /// NDIV PSF with odd extents summing to 1.
    #[arg(long, conflicts_with = "gaussian")]
    psf: Option<PathBuf>,
    /// Gaussian PSF sigmas (z,y,x), truncated at 3 sigma.
    #[arg(long, value_delimiter = ',')]
    gaussian: Option<Vec<f64>>,
    #[arg(long, value_delimiter = ',', default_value = "32,96,96")]
    shape: Vec<usize>,
    #[arg(long, default_value = "frc_resolution")]
    metric: String,
    #[arg(long, default_value_t = 1e-3)]
    rel_tol: f64,
    #[arg(long, default_value_t = 3)]
    patience: usize,
    #[arg(long, default_value_t = 100)]
    max_iters: usize,
    #[arg(long, value_enum, default_value_t = InitChoice::Observed)]
    init: InitChoice,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum InitChoice {
    Observed,
    Flat,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SynthKind {
    Blobs,
    Monolayer,
    Deconv,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value_t = SynthKind::Blobs)]
    kind: SynthKind,
    #[arg(long, value_delimiter = ',', default_value = "32,128,128")]
    shape: Vec<usize>,
    #[arg(long, default_value_t = 20)]
    objects: usize,
    /// Object radius range; defaults to the generator's own.
    #[arg(long, value_delimiter = ',')]
    radius: Option<Vec<f64>>,
    #[arg(long)]
    noise: Option<f32>,
}

#[derive(Args)]
struct ExportSliceArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value_t = 0)]
    axis: usize,
    /// Plane index; the middle plane when absent.
    #[arg(long)]
    index: Option<usize>,
    /// Channel of a CZYX volume.
    #[arg(long, default_value_t = 0)]
    channel: usize,
    /// Destination file; `<out>/slice.pgm` when absent.
    #[arg(long)]
    output: Option<PathBuf>,
}

/// Failure classes and their exit codes.
#[derive(Debug)]
enum Failure {
    Io(String),
    BackendMismatch(String),
    Structure(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Io(_) => 2,
            Failure::BackendMismatch(_) => 3,
            Failure::Structure(_) => 4,
            Failure::Numeric(_) => 5,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Io(m) | Failure::BackendMismatch(m) | Failure::Structure(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let m = e.to_string();
        match e {
            Error::Io(_) | Error::BadMagic | Error::HeaderMismatch(_) | Error::TruncatedPayload { .. } => Failure::Io(m),
            Error::MixedBackends { .. }
            | Error::UnknownOperation(_)
            | Error::NoImplementation { .. }
            | Error::KernelSignature(_) => Failure::BackendMismatch(m),
            Error::ShapeMismatch { .. }
            | Error::ElemMismatch { .. }
            | Error::BadShape(_)
            | Error::InvalidSpacing
            | Error::EvenExtent(_)
            | Error::KernelTooLarge { .. }
            | Error::TooSmall { .. }
            | Error::OddExtent(_) => Failure::Structure(m),
            _ => Failure::Numeric(m),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = fs::create_dir_all(&cli.common.out).map_err(Failure::from).and_then(|_| match &cli.command {
        Command::BenchRescale(a) => bench_rescale(&cli.common, a),
        Command::Segment(a) => segment(&cli.common, a),
        Command::Deconvolve(a) => deconvolve(&cli.common, a),
        Command::Synth(a) => synth(&cli.common, a),
        Command::ExportSlice(a) => export(&cli.common, a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}

fn write_report(c: &Common, mut report: TimingReport, stem: &str) -> Outcome {
    report.compute_speedups();
    let (name, text) = match c.format {
        Format::Csv => (format!("{stem}.csv"), report.to_csv()?),
        Format::Json => (format!("{stem}.json"), report.to_json()),
    };
    fs::write(c.out.join(name), text)?;
    Ok(())
}

fn write_json(path: &Path, value: &serde_json::Value) -> Outcome {
    fs::write(path, serde_json::to_string_pretty(value).expect("json value serializes") + "\n")?;
    Ok(())
}

fn read_f32(path: &Path) -> std::result::Result<NdImage, Failure> {
    let (img, _) = read_volume_with_axes(path)?;
    let f = NdImage::from_f32(img.shape().to_vec(), img.values_f32().into_owned())?;
    Ok(match img.spacing() {
        Some(s) => f.with_spacing(s.to_vec())?,
        None => f,
    })
}

fn expect_len(flag: &str, values: &[f64], n: usize) -> Outcome {
    if values.len() != n {
        return Err(Failure::Numeric(format!("{flag} takes {n} comma-separated values, got {}", values.len())));
    }
    Ok(())
}

fn max_abs_diff(a: &NdImage, b: &NdImage) -> f64 {
    a.values_f32().iter().zip(b.values_f32().iter()).map(|(&x, &y)| (x as f64 - y as f64).abs()).fold(0.0, f64::max)
}

fn bench_rescale(c: &Common, a: &BenchRescaleArgs) -> Outcome {
    let input = match &a.input {
        Some(p) => read_f32(p)?,
        None if a.bilinear_input => {
            if a.shape.iter().any(|&n| n % 2 != 0) {
                return Err(Failure::Numeric(format!("--bilinear-input needs even extents, got {:?}", a.shape)));
            }
            let half = a.shape.iter().map(|&n| n / 2).collect();
            let spec = SynthSpec { shape: half, n_objects: a.objects, seed: c.seed, ..SynthSpec::default() };
            rescale(&generate_blobs(&spec)?.0, &[2.0], 1, false)?
        }
        None => {
            let spec = SynthSpec { shape: a.shape.clone(), n_objects: a.objects, seed: c.seed, ..SynthSpec::default() };
            generate_blobs(&spec)?.0
        }
    };
    expect_len("--factors", &a.factors, 2)?;
    let (up, down) = (a.factors[0], a.factors[1]);
    let mut report = TimingReport::default();
    let mut agreement = csv::Writer::from_path(c.out.join("agreement.csv"))?;
    agreement.write_record(["order", "max_abs_diff", "round_trip_exact", "within_tolerance"])?;
    let mut worst = 0.0f64;
    for &order in &a.orders {
        let mut params = BTreeMap::new();
        params.insert("order".to_string(), order.to_string());
        params.insert("factors".to_string(), format!("{up},{down}"));
        params.insert("anti_aliasing".to_string(), a.anti_aliasing.to_string());
        params.insert("seed".to_string(), c.seed.to_string());
        let mut outputs = Vec::new();
        for b in c.backend.backends() {
            let img = input.to_backend(b);
            let m = measure(c.repeats as usize, c.warmup as usize, || {
                rescale(&rescale(&img, &[up], order, false)?, &[down], order, a.anti_aliasing)
            })?;
            report.push(TimingRow {
                workload: "rescale".into(),
                stage: "round_trip".into(),
                backend: b.as_str().into(),
                shape: shape_string(input.shape()),
                params: params_string(&params),
                repeats: c.repeats as usize,
                warmup: c.warmup as usize,
                median_s: m.median_s,
                speedup_vs_reference: None,
            });
            outputs.push(m.output);
        }
        let diff = if outputs.len() == 2 { max_abs_diff(&outputs[0], &outputs[1]) } else { 0.0 };
        let exact = outputs[0].shape() == input.shape() && outputs[0].buffer() == input.buffer();
        worst = worst.max(diff);
        agreement.write_record([
            order.to_string(),
            diff.to_string(),
            exact.to_string(),
            (diff <= RESCALE_TOLERANCE).to_string(),
        ])?;
        println!("order {order}: max_abs_diff {diff:e}, round trip exact {exact}");
    }
    agreement.flush()?;
    write_report(c, report, "timing")?;
    if worst > RESCALE_TOLERANCE {
        return Err(Failure::BackendMismatch(format!("backends differ by {worst:e} (tolerance {RESCALE_TOLERANCE:e})")));
    }
    Ok(())
}

fn stage_rows(workload: &str, b: Backend, shape: &[usize], runs: &[PipelineRun], c: &Common) -> Vec<TimingRow> {
    let first = &runs[0];
    first
        .stages
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let samples: Vec<f64> = runs.iter().map(|r| r.stages[i].seconds).collect();
            let mut params = first.params.clone();
            params.insert("seed".into(), c.seed.to_string());
            TimingRow {
                workload: workload.into(),
                stage: s.stage.clone(),
                backend: b.as_str().into(),
                shape: shape_string(shape),
                params: params_string(&params),
                repeats: c.repeats as usize,
                warmup: c.warmup as usize,
                median_s: median(&samples),
                speedup_vs_reference: None,
            }
        })
        .collect()
}

/// Runs `f` `warmup + repeats` times and keeps the timed runs.
fn repeated(c: &Common, mut f: impl FnMut() -> voxelkit::Result<PipelineRun>) -> voxelkit::Result<Vec<PipelineRun>> {
    for _ in 0..c.warmup {
        f()?;
    }
    (0..c.repeats).map(|_| f()).collect()
}

fn segment(c: &Common, a: &SegmentArgs) -> Outcome {
    let (membrane, mito, dna, truth) = match &a.input {
        Some(p) => {
            let (img, axes) = read_volume_with_axes(p)?;
            if img.ndim() != 4 || img.shape()[0] != 3 {
                return Err(Failure::Structure(format!(
                    "expected 3 channels (membrane, mitochondria, DNA) as CZYX, got shape {:?} with axes {axes}",
                    img.shape()
                )));
            }
            let f = NdImage::from_f32(img.shape().to_vec(), img.values_f32().into_owned())?;
            (f.channel(0)?, f.channel(1)?, f.channel(2)?, None)
        }
        None => {
            let spec = MonolayerSpec { shape: a.shape.clone(), n_cells: a.cells, seed: c.seed, ..MonolayerSpec::default() };
            let ph = generate_monolayer(&spec)?;
            (ph.membrane, ph.mito, ph.dna, Some((ph.nuclei, ph.cells)))
        }
    };
    let mut report = TimingReport::default();
    let mut results: Vec<(Backend, NdImage, NdImage)> = Vec::new();
    for b in c.backend.backends() {
        let (m, mi, d) = (membrane.to_backend(b), mito.to_backend(b), dna.to_backend(b));
        let nuclei_runs = repeated(c, || segment_nuclei(&d))?;
        let nuclei = nuclei_runs[0].labels.clone();
        let cell_runs = repeated(c, || segment_cells(&m, &mi, &d, &nuclei))?;
        let stable = |runs: &[PipelineRun]| runs.iter().all(|r| r.labels.buffer() == runs[0].labels.buffer());
        if !stable(&nuclei_runs) || !stable(&cell_runs) {
            return Err(Failure::BackendMismatch(format!("{} reruns disagree", b.as_str())));
        }
        report.rows.extend(stage_rows("segment_nuclei", b, dna.shape(), &nuclei_runs, c));
        report.rows.extend(stage_rows("segment_cells", b, dna.shape(), &cell_runs, c));
        results.push((b, nuclei, cell_runs[0].labels.clone()));
    }
    if let [(_, n0, c0), (_, n1, c1)] = &results[..] {
        if n0.as_labels()? != n1.as_labels()? || c0.as_labels()? != c1.as_labels()? {
            return Err(Failure::BackendMismatch("reference and accelerated labels differ".into()));
        }
    }
    let (_, nuclei, cells) = &results[0];
    write_volume(c.out.join("nuclei.ndiv"), &nuclei.to_backend(Backend::Reference))?;
    write_volume(c.out.join("cells.ndiv"), &cells.to_backend(Backend::Reference))?;
    write_report(c, report, "timing")?;

    let mut metrics = vec![
        MetricReport::new("nuclei_count", nuclei.label_count()? as f64),
        MetricReport::new("cell_count", cells.label_count()? as f64),
    ];
    if let Some((true_nuclei, true_cells)) = &truth {
        let (dna_ref, nuclei_ref) = (dna.to_backend(Backend::Reference), nuclei.to_backend(Backend::Reference));
        let ap_n = average_precision(&nuclei_ref, true_nuclei, AP_IOU)?;
        let ap_c = average_precision(&cells.to_backend(Backend::Reference), true_cells, AP_IOU)?;
        let (psnr, ssim) = masked_quality(&dna_ref, &dna_ref, &nuclei_ref, true_nuclei)?;
        metrics.push(MetricReport::new("ap_nuclei", ap_n).param("iou", AP_IOU));
        metrics.push(MetricReport::new("ap_cells", ap_c).param("iou", AP_IOU));
        metrics.push(MetricReport::new("masked_psnr_dna", psnr).param("mask", "nuclei"));
        metrics.push(MetricReport::new("masked_ssim_dna", ssim).param("mask", "nuclei"));
        println!("nuclei AP@{AP_IOU}: {ap_n:.3}, cells AP@{AP_IOU}: {ap_c:.3}");
    }
    let metrics: Vec<serde_json::Value> =
        metrics.iter().map(|m| serde_json::from_str(&m.to_json()).expect("metric report is json")).collect();
    write_json(&c.out.join("metrics.json"), &serde_json::Value::Array(metrics))
}

fn deconvolve(c: &Common, a: &DeconvolveArgs) -> Outcome {
    if let Some(s) = &a.gaussian {
        expect_len("--gaussian", s, 3)?;
    }
    let metric: StopMetric = a.metric.parse()?;
    let rule = StoppingRule { metric, rel_tol: a.rel_tol, patience: a.patience, max_iters: a.max_iters };
    let init = match a.init {
        InitChoice::Observed => Init::Observed,
        InitChoice::Flat => Init::Flat,
    };
    let opts = RlOptions { rule, init };
    let gaussian = |sigmas: &[f64]| -> voxelkit::Result<NdImage> {
        let shape: Vec<usize> = sigmas.iter().map(|&s| 2 * (3.0 * s).ceil() as usize + 1).collect();
        gaussian_psf(&shape, sigmas)
    };
    let (observed, psf, truth) = match &a.input {
        Some(p) => {
            let observed = read_f32(p)?;
            let psf = match (&a.psf, &a.gaussian) {
                (Some(p), _) => read_f32(p)?,
                (None, Some(s)) => gaussian(s)?,
                (None, None) => return Err(Failure::Structure("an input volume needs --psf or --gaussian".into())),
            };
            (observed, psf, None)
        }
        None => {
            let mut spec = DeconvSpec::default();
            spec.blobs.shape = a.shape.clone();
            spec.blobs.seed = c.seed;
            let ph = generate_deconv_phantom(&spec)?;
            let psf = match (&a.psf, &a.gaussian) {
                (Some(p), _) => read_f32(p)?,
                (None, Some(s)) => gaussian(s)?,
                (None, None) => ph.psf,
            };
            (ph.observed, psf, Some(ph.truth))
        }
    };
    let mut params = BTreeMap::new();
    params.insert("metric".to_string(), metric.to_string());
    params.insert("rel_tol".to_string(), a.rel_tol.to_string());
    params.insert("patience".to_string(), a.patience.to_string());
    params.insert("max_iters".to_string(), a.max_iters.to_string());
    params.insert("init".to_string(), format!("{init:?}").to_lowercase());
    params.insert("psf_shape".to_string(), shape_string(psf.shape()));
    params.insert("seed".to_string(), c.seed.to_string());

    let mut report = TimingReport::default();
    let mut runs: Vec<(Backend, NdImage, IterationTrace)> = Vec::new();
    for b in c.backend.backends() {
        let (y, h) = (observed.to_backend(b), psf.to_backend(b));
        let m = measure(c.repeats as usize, c.warmup as usize, || richardson_lucy_with(&y, &h, &opts))?;
        let (estimate, trace) = m.output;
        let per_iter: Vec<f64> = trace.records.iter().map(|r| r.wall_time_s).collect();
        for (stage, t) in [("run", m.median_s), ("iteration", median(&per_iter))] {
            report.push(TimingRow {
                workload: "richardson_lucy".into(),
                stage: stage.into(),
                backend: b.as_str().into(),
                shape: shape_string(observed.shape()),
                params: params_string(&params),
                repeats: c.repeats as usize,
                warmup: c.warmup as usize,
                median_s: t,
                speedup_vs_reference: None,
            });
        }
        runs.push((b, estimate, trace));
    }
    if let [(_, _, t0), (_, _, t1)] = &runs[..] {
        let (v0, v1) = (t0.values(), t1.values());
        let agree = v0.len() == v1.len()
            && v0.iter().zip(&v1).all(|(&x, &y)| {
                x == y || (x.is_finite() && y.is_finite() && (x - y).abs() <= TRACE_TOLERANCE * x.abs().max(y.abs()))
            });
        if !agree {
            return Err(Failure::BackendMismatch("reference and accelerated traces differ".into()));
        }
    }
    let (_, estimate, trace) = &runs[0];
    write_volume_with_axes(
        c.out.join("estimate.ndiv"),
        &estimate.to_backend(Backend::Reference),
        &voxelkit::io::default_axes(estimate.ndim()),
    )?;
    fs::write(c.out.join("trace.csv"), trace.to_csv())?;
    write_report(c, report, "timing")?;
    let mut summary = json!({
        "schema": 1,
        "iters_run": trace.iterations(),
        "final_metric": trace.values().last().copied().map(finite_or_string),
        "stop_reason": trace.metadata.get("stop_reason"),
        "metric": metric.as_str(),
        "params": params,
    });
    if let Some(truth) = &truth {
        let before = si_psnr(&observed, truth)?;
        let after = si_psnr(&estimate.to_backend(Backend::Reference), truth)?;
        summary["si_psnr_observed"] = finite_or_string(before);
        summary["si_psnr_estimate"] = finite_or_string(after);
        println!("si_psnr vs truth: observed {before:.2} dB, estimate {after:.2} dB");
    }
    println!("{} iterations, stop reason {}", trace.iterations(), trace.metadata.get("stop_reason").map_or("?", |s| s));
    write_json(&c.out.join("summary.json"), &summary)
}

/// JSON number, or `"inf"`/`"-inf"`/`"nan"` for non-finite values.
fn finite_or_string(v: f64) -> serde_json::Value {
    if v.is_finite() {
        json!(v)
    } else if v.is_nan() {
        json!("nan")
    } else if v > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

fn synth(c: &Common, a: &SynthArgs) -> Outcome {
    if let Some(r) = &a.radius {
        expect_len("--radius", r, 2)?;
    }
    let summary = match a.kind {
        SynthKind::Blobs => {
            let d = SynthSpec::default();
            let spec = SynthSpec {
                shape: a.shape.clone(),
                n_objects: a.objects,
                radius_range: a.radius.as_ref().map_or(d.radius_range, |r| [r[0], r[1]]),
                seed: c.seed,
                noise_sigma: a.noise.unwrap_or(d.noise_sigma),
                ..d
            };
            let (img, labels) = generate_blobs(&spec)?;
            write_volume(c.out.join("image.ndiv"), &img)?;
            write_volume(c.out.join("labels.ndiv"), &labels)?;
            json!({
                "kind": "blobs",
                "spec": spec,
                "label_count": labels.label_count()?,
                "ap_self": average_precision(&labels, &labels, AP_IOU)?,
            })
        }
        SynthKind::Monolayer => {
            let d = MonolayerSpec::default();
            let spec = MonolayerSpec {
                shape: a.shape.clone(),
                n_cells: a.objects,
                nucleus_radius: a.radius.as_ref().map_or(d.nucleus_radius, |r| [r[0], r[1]]),
                seed: c.seed,
                noise_sigma: a.noise.unwrap_or(d.noise_sigma),
                ..d
            };
            let ph = generate_monolayer(&spec)?;
            write_volume(c.out.join("channels.ndiv"), &ph.channels()?)?;
            write_volume(c.out.join("nuclei.ndiv"), &ph.nuclei)?;
            write_volume(c.out.join("cells.ndiv"), &ph.cells)?;
            json!({
                "kind": "monolayer",
                "spec": spec,
                "nuclei_count": ph.nuclei.label_count()?,
                "cell_count": ph.cells.label_count()?,
            })
        }
        SynthKind::Deconv => {
            let mut spec = DeconvSpec::default();
            spec.blobs.shape = a.shape.clone();
            spec.blobs.n_objects = a.objects;
            spec.blobs.seed = c.seed;
            if let Some(r) = &a.radius {
                spec.blobs.radius_range = [r[0], r[1]];
            }
            let ph = generate_deconv_phantom(&spec)?;
            write_volume(c.out.join("truth.ndiv"), &ph.truth)?;
            write_volume(c.out.join("psf.ndiv"), &ph.psf)?;
            write_volume(c.out.join("observed.ndiv"), &ph.observed)?;
            json!({ "kind": "deconv", "spec": spec })
        }
    };
    write_json(&c.out.join("synth.json"), &summary)
}

fn export(c: &Common, a: &ExportSliceArgs) -> Outcome {
    let (img, axes) = read_volume_with_axes(&a.input)?;
    let img = if img.ndim() == 4 {
        if a.channel >= img.shape()[0] {
            return Err(Failure::Structure(format!("channel {} of a {}-channel volume", a.channel, img.shape()[0])));
        }
        img.channel(a.channel)?
    } else {
        img
    };
    if img.ndim() == 3 && a.axis >= 3 {
        return Err(Failure::Structure(format!("axis {} of a volume with axes {axes}", a.axis)));
    }
    let index = a.index.unwrap_or_else(|| if img.ndim() == 3 { img.shape()[a.axis] / 2 } else { 0 });
    let path = a.output.clone().unwrap_or_else(|| c.out.join("slice.pgm"));
    export_slice(&img, a.axis, index, &path)?;
    println!("wrote {}", path.display());
    Ok(())
}
