use std::time::Instant;

/// Median wall time of the timed repeats plus the output of the last one.
#[derive(Debug, Clone)]
pub struct Measured<T> {
    pub median_s: f64,
    pub samples: Vec<f64>,
    pub output: T,
}

/// Median of `values`, averaging the middle pair for even lengths.
pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Runs `f` `warmup` times untimed, then `repeats` times on a monotonic
/// clock. Warmup runs never enter the median.
pub fn measure<T, E>(repeats: usize, warmup: usize, mut f: impl FnMut() -> Result<T, E>) -> Result<Measured<T>, E> {
    assert!(repeats > 0, "at least one timed repeat is needed");
    for _ in 0..warmup {
        f()?;
    }
    let mut samples = Vec::with_capacity(repeats);
    let mut output = None;
    for _ in 0..repeats {
        let t = Instant::now();
        let out = f()?;
        samples.push(t.elapsed().as_secs_f64());
        output = Some(out);
    }
    Ok(Measured { median_s: median(&samples), samples, output: output.expect("repeats > 0") })
}
