use std::time::{Duration, Instant};

use anyhow::{ensure, Context, Result};
use vir_core::accounting::MemoryProbe;
use vir_core::encoder::{encoder_forward, multi_head_retention, EncoderConfig, MhrWeights, WeightStore};
use vir_core::tensor::fill_uniform;
use vir_core::{DType, Element, Rng, Tensor};

use crate::spec::{BenchRecord, BenchSpec, Mode, Point, Status};

pub const THREADS_ENV: &str = "VIR_BENCH_THREADS";

/// Runs every point of `spec` in order. Points whose predicted working set
/// exceeds available memory, or whose allocation fails, yield `status = oom`.
pub fn run_benchmark(spec: &BenchSpec) -> Result<Vec<BenchRecord>> {
    spec.validate()?;
    spec.points()
        .into_iter()
        .map(|p| match spec.dtype {
            DType::F64 => run_point::<f64>(spec, p),
            DType::F32 => run_point::<f32>(spec, p),
        })
        .collect()
}

/// Worker threads for `requested` sequences, capped by `VIR_BENCH_THREADS`.
pub fn worker_count(requested: usize) -> usize {
    let cap = std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&c| c > 0)
        .unwrap_or(usize::MAX);
    requested.clamp(1, cap.max(1))
}

fn record(spec: &BenchSpec, point: Point, status: Status) -> BenchRecord {
    BenchRecord {
        mode: spec.mode,
        mask: spec.mask,
        resolution: point.resolution,
        patch: spec.patch,
        n: point.n,
        dim: spec.dim,
        heads: spec.heads,
        chunk: (spec.mode == Mode::Chunkwise).then_some(spec.chunk),
        dtype: spec.dtype,
        median_seconds: 0.0,
        tokens_per_sec: 0.0,
        peak_live_f64: 0,
        status,
        timings: Vec::new(),
    }
}

pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.is_empty() {
        f64::NAN
    } else if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

/// Predicted peak element count of one forward, used for the OOM pre-check.
pub fn predicted_elements(spec: &BenchSpec, n: usize) -> usize {
    let rows = if spec.full_model { n + 1 } else { n };
    let d = spec.dim;
    let io = 2 * rows * d
        + if spec.full_model {
            3 * rows * spec.patch * spec.patch
        } else {
            0
        };
    let work = match spec.mode {
        Mode::Parallel => 2 * rows * rows + 5 * rows * d,
        Mode::Chunkwise => 2 * spec.chunk * spec.chunk + 5 * spec.chunk * d,
        Mode::Recurrent => 4 * d,
    };
    let mlp = if spec.full_model { 8 * rows * d } else { 0 };
    (io + work + mlp) * worker_count(spec.batch_parallel)
}

fn available_bytes() -> Option<u64> {
    let info = std::fs::read_to_string("/proc/meminfo").ok()?;
    let line = info.lines().find(|l| l.starts_with("MemAvailable:"))?;
    let kib: u64 = line.split_whitespace().nth(1)?.parse().ok()?;
    Some(kib * 1024)
}

fn fits_in_memory(spec: &BenchSpec, n: usize) -> bool {
    let need = predicted_elements(spec, n) as u64 * spec.dtype.size_of() as u64;
    available_bytes().is_none_or(|avail| need <= avail / 10 * 9)
}

fn run_point<T: Element>(spec: &BenchSpec, point: Point) -> Result<BenchRecord> {
    let cfg = spec.encoder_config(point);
    cfg.validate()?;
    if !fits_in_memory(spec, point.n) {
        return Ok(record(spec, point, Status::Oom));
    }
    let weights = WeightStore::<T>::init(&cfg, spec.seed).context("initialising weights")?;

    for _ in 0..spec.warmup {
        match run_batch(spec, point, &cfg, &weights) {
            Err(vir_core::Error::OutOfMemory { .. }) => return Ok(record(spec, point, Status::Oom)),
            other => {
                other?;
            }
        }
    }
    let mut timings = Vec::with_capacity(spec.repeats);
    let mut peak = None;
    for _ in 0..spec.repeats {
        let (elapsed, p) = match run_batch(spec, point, &cfg, &weights) {
            Err(vir_core::Error::OutOfMemory { .. }) => return Ok(record(spec, point, Status::Oom)),
            other => other?,
        };
        timings.push(elapsed.as_secs_f64());
        ensure!(
            *peak.get_or_insert(p) == p,
            "accounted peak changed between repeats at N={}",
            point.n
        );
    }
    let med = median(&timings);
    let tokens = (point.n * spec.batch_parallel) as f64;
    Ok(BenchRecord {
        median_seconds: med,
        tokens_per_sec: if med > 0.0 { tokens / med } else { f64::INFINITY },
        peak_live_f64: peak.unwrap_or(0),
        timings,
        ..record(spec, point, Status::Ok)
    })
}

/// Runs `batch_parallel` independent sequences and returns the wall time and
/// the largest per-sequence accounted peak.
fn run_batch<T: Element>(
    spec: &BenchSpec,
    point: Point,
    cfg: &EncoderConfig,
    weights: &WeightStore<T>,
) -> vir_core::Result<(Duration, usize)> {
    let b = spec.batch_parallel;
    let workers = worker_count(b);
    if workers == 1 {
        let mut peak = 0;
        let mut busy = Duration::ZERO;
        for i in 0..b {
            let (t, p) = run_once(spec, point, cfg, weights, i as u64)?;
            busy += t;
            peak = peak.max(p);
        }
        return Ok((busy, peak));
    }
    let start = Instant::now();
    let results: Vec<vir_core::Result<usize>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers)
            .map(|w| {
                scope.spawn(move || {
                    let mut peak = 0;
                    for i in (w..b).step_by(workers) {
                        peak = peak.max(run_once(spec, point, cfg, weights, i as u64)?.1);
                    }
                    Ok(peak)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("benchmark worker panicked"))
            .collect()
    });
    let elapsed = start.elapsed();
    let mut peak = 0;
    for r in results {
        peak = peak.max(r?);
    }
    Ok((elapsed, peak))
}

/// One forward on fresh deterministic input. Only the forward is timed.
fn run_once<T: Element>(
    spec: &BenchSpec,
    point: Point,
    cfg: &EncoderConfig,
    weights: &WeightStore<T>,
    sequence: u64,
) -> vir_core::Result<(Duration, usize)> {
    let mut rng = Rng::new(spec.seed ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(sequence + 1));
    let input_shape = if spec.full_model {
        vec![cfg.image_size, cfg.image_size, cfg.channels]
    } else {
        vec![point.n, cfg.model_dim]
    };
    let mut input: Option<Tensor<T>> = None;
    if spec.exclude_io {
        input = Some(fill_uniform(&mut rng, input_shape.clone(), -1.0, 1.0)?);
    }
    let probe = MemoryProbe::start();
    let input = match input {
        Some(x) => x,
        None => fill_uniform(&mut rng, input_shape, -1.0, 1.0)?,
    };
    let start = Instant::now();
    let output_elements = if spec.full_model {
        let out = encoder_forward(&input, weights, cfg)?;
        out.tokens.len() + out.logits.len()
    } else {
        let w = MhrWeights::from_store(weights, 0, cfg)?;
        multi_head_retention(&input, &w, cfg)?.len()
    };
    let elapsed = start.elapsed();
    let mut peak = probe.peak_above_baseline();
    if spec.exclude_io {
        peak = peak.saturating_sub(output_elements);
    }
    Ok((elapsed, peak))
}
