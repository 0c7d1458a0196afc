//! The end-to-end separation loop: cost evaluation, alternation schedule,
//! cost tracing, and scale restoration.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use ndarray::{s, Array3};
use num_complex::Complex64;

use crate::demix::{
    demix_data, demix_sweep_with, AuxiliaryWeights, CovarianceCache, DemixingSet,
};
use crate::error::{Error, Result};
use crate::linalg::build_partition;
use crate::model::{Dof, ModelConfig, SourceModel};
use crate::signal::{istft, SpectrogramTensor, WaveformBatch};

/// Negative log-likelihood of the separated signal under the model, with the
/// parameter-independent constant dropped:
///
/// ```text
/// sum_{j,n} [ log det R[j,n] + ((nu + 2 I)/2) ln(1 + (2/nu) y^H R^-1 y) ]
///   - J sum_i log |det W_i|^2
/// ```
///
/// The Gaussian limit replaces the log term by the quadratic form itself. All
/// covariance terms are evaluated on the same ridged matrices the updates
/// use, so the traced quantity is exactly what the optimizer descends.
/// A singular demixing matrix yields +inf rather than an error.
pub fn cost(
    w: &DemixingSet,
    model: &SourceModel,
    y: &SpectrogramTensor,
    dof: Dof,
    ridge: f64,
) -> Result<f64> {
    cost_data(w, model, y.data(), dof, ridge)
}

pub fn cost_data(
    w: &DemixingSet,
    model: &SourceModel,
    y: &Array3<Complex64>,
    dof: Dof,
    ridge: f64,
) -> Result<f64> {
    let cache = CovarianceCache::build(model, ridge)?;
    Ok(cost_with(w, &cache, y, dof))
}

pub fn cost_with(
    w: &DemixingSet,
    cache: &CovarianceCache,
    y: &Array3<Complex64>,
    dof: Dof,
) -> f64 {
    let (bins, frames, sources) = y.dim();
    let mut acc = 0.0;
    let mut col = vec![Complex64::new(0.0, 0.0); bins];
    for j in 0..frames {
        for n in 0..sources {
            crate::demix::gather_column(y, j, n, &mut col);
            let quad = cache.rinv(j, n).quad_form_slice(&col).max(0.0);
            acc += cache.logdet(j, n) + dof.log_term(quad, bins);
        }
    }
    let mut det_acc = 0.0;
    for i in 0..bins {
        let ld = crate::linalg::dense::lu_factor(w.matrix(i)).log_abs_det_sq();
        if ld == f64::NEG_INFINITY {
            return f64::INFINITY;
        }
        det_acc += ld;
    }
    acc - frames as f64 * det_acc
}

/// The majorizing surrogate evaluated at arbitrary positive weights pi,
/// including the weight-dependent terms of the tangent-line bound, so that it
/// upper-bounds [`cost`] everywhere and touches it exactly at the weights
/// produced by `compute_pi`. In the Gaussian limit the bound is not needed
/// and the surrogate equals the cost identically.
pub fn auxiliary_cost(
    w: &DemixingSet,
    model: &SourceModel,
    y: &Array3<Complex64>,
    pi: &AuxiliaryWeights,
    dof: Dof,
    ridge: f64,
) -> Result<f64> {
    let cache = CovarianceCache::build(model, ridge)?;
    let (bins, frames, sources) = y.dim();
    let mut acc = 0.0;
    for j in 0..frames {
        for n in 0..sources {
            let quad = cache.rinv(j, n).quad_form(y.slice(s![.., j, n])).max(0.0);
            let weight = pi.get(j, n);
            acc += cache.logdet(j, n);
            if dof.is_gaussian() {
                acc += quad;
            } else {
                let nu = dof.get();
                let half = 0.5 * (nu + 2.0 * bins as f64);
                // tangent bound of the log term at alpha = (nu + 2I)/(nu pi)
                let alpha = (nu + 2.0 * bins as f64) / (nu * weight);
                acc += weight * quad + 0.5 * nu * weight - half + half * alpha.ln();
            }
        }
    }
    let mut det_acc = 0.0;
    for i in 0..bins {
        let ld = crate::linalg::dense::lu_factor(w.matrix(i)).log_abs_det_sq();
        if ld == f64::NEG_INFINITY {
            return Ok(f64::INFINITY);
        }
        det_acc += ld;
    }
    Ok(acc - frames as f64 * det_acc)
}

/// Per-iteration cost record; one row per half-step in the exported CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub demix_cost: f64,
    pub demix_seconds: f64,
    pub source_cost: f64,
    pub source_seconds: f64,
}

/// Cost values after every demixing half-step and every source-model
/// half-step, plus wall-clock timing.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CostTrace {
    pub records: Vec<IterationRecord>,
    /// Set when a non-finite cost aborted the run at this iteration.
    pub aborted_at: Option<usize>,
}

impl CostTrace {
    /// The interleaved half-step cost sequence (demix, source, demix, ...).
    pub fn half_steps(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(2 * self.records.len());
        for r in &self.records {
            out.push(r.demix_cost);
            out.push(r.source_cost);
        }
        out
    }

    /// Write the CSV export: header `iteration,phase,cost,seconds` with
    /// phases `demix` and `source`.
    ///
    /// Timing is wall clock and would break byte-for-byte reproducibility of
    /// otherwise identical runs, so the seconds column is written as zero
    /// unless `include_timing` is set.
    pub fn write_csv(&self, mut out: impl Write, include_timing: bool) -> std::io::Result<()> {
        writeln!(out, "iteration,phase,cost,seconds")?;
        for r in &self.records {
            let (ds, ss) = if include_timing {
                (r.demix_seconds, r.source_seconds)
            } else {
                (0.0, 0.0)
            };
            writeln!(out, "{},demix,{},{:.6}", r.iteration, r.demix_cost, ds)?;
            writeln!(out, "{},source,{},{:.6}", r.iteration, r.source_cost, ss)?;
        }
        Ok(())
    }

    pub fn to_csv_string(&self, include_timing: bool) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf, include_timing)
            .expect("writing to a Vec cannot fail");
        String::from_utf8(buf).expect("CSV is ASCII")
    }
}

/// Everything a finished run produces.
#[derive(Debug)]
pub struct SeparationResult {
    /// Separated tensor after projection back onto the reference channel.
    pub spectrogram: SpectrogramTensor,
    /// Synthesized separated signals, one channel per source.
    pub waveforms: WaveformBatch,
    pub demixing: DemixingSet,
    pub model: SourceModel,
    pub trace: CostTrace,
}

/// Rebalance the joint scale of the demixing rows and the source model.
///
/// The cost is exactly invariant under `w[., n] -> w[., n] / sqrt(g)` with
/// `v[., ., n] -> v[., ., n] / g` (the demixed power and the model covariance
/// shrink together, and the log-det terms cancel), so optimization wanders
/// along this flat direction; left alone the drift compounds exponentially
/// until activations overflow or demixing rows underflow. Pinning the mean
/// model trace to one per source removes the drift without changing the cost
/// beyond round-off.
pub fn rebalance_scales(w: &mut DemixingSet, model: &mut SourceModel) -> Vec<f64> {
    let (bases, frames, sources) = model.activations().dim();
    let bins = model.num_bins() as f64;
    let mut scales = vec![1.0; sources];
    for n in 0..sources {
        let mut scale = 0.0;
        for j in 0..frames {
            // basis traces are 1 after normalization, so tr(R) is the
            // activation sum; use the real traces to stay exact regardless
            for k in 0..bases {
                scale += model.activations()[(k, j, n)] * model.basis(k, n).trace();
            }
        }
        scale /= frames as f64 * bins;
        if !(scale > 0.0) || !scale.is_finite() {
            continue;
        }
        for k in 0..bases {
            for j in 0..frames {
                model.activations_mut()[(k, j, n)] /= scale;
            }
        }
        w.scale_source_rows(n, 1.0 / scale.sqrt());
        scales[n] = scale;
    }
    scales
}

/// Resolve the per-source scale ambiguity by re-imaging every separated
/// source onto the reference channel: y[i, j, n] is scaled by
/// `[W_i^-1]_{ref, n}`. The rescaled sources sum to the reference-channel
/// mixture exactly (up to round-off).
pub fn projection_back(
    y: &SpectrogramTensor,
    w: &DemixingSet,
    reference_channel: usize,
) -> Result<SpectrogramTensor> {
    let (bins, frames, sources) = y.data().dim();
    if w.bins() != bins || reference_channel >= w.sources() {
        return Err(Error::DimensionMismatch {
            context: format!(
                "projection back of {} bins x {} sources onto channel {} of a {} bins x {} set",
                bins,
                sources,
                reference_channel,
                w.bins(),
                w.sources()
            ),
        });
    }
    let mut data = y.data().clone();
    for i in 0..bins {
        let inv = crate::linalg::dense::inverse(w.matrix(i)).ok_or(Error::SingularMatrix {
            context: format!("demixing matrix at bin {i}"),
        })?;
        for n in 0..sources {
            let coef = inv[(reference_channel, n)];
            for j in 0..frames {
                data[(i, j, n)] *= coef;
            }
        }
    }
    Ok(y.with_data(data))
}

/// Run the full alternating optimization on a mixture spectrogram.
///
/// Per outer iteration: `vcd_sweeps` demixing sweeps (each refreshing the
/// auxiliary weights), then one source-model sweep, recording the cost after
/// each half-step. A non-finite cost aborts the loop and leaves the trace
/// collected so far with `aborted_at` set. After the loop the separated
/// tensor is projected back onto the reference channel and synthesized.
pub fn separate(x: &SpectrogramTensor, config: &ModelConfig) -> Result<SeparationResult> {
    config.validate()?;
    let sources = x.channels();
    if sources < 1 {
        return Err(Error::InvalidConfig("mixture has no channels".into()));
    }
    if config.reference_channel >= sources {
        return Err(Error::InvalidConfig(format!(
            "reference channel {} out of range for {} channels",
            config.reference_channel, sources
        )));
    }
    let partition = Arc::new(build_partition(x.bins(), &config.block_scheme)?);
    let mut model = SourceModel::init(config, partition, x.frames(), sources)?;
    let mut w = DemixingSet::identity(x.bins(), sources);
    let mut trace = CostTrace::default();
    let dof = config.dof;
    let ridge = config.ridge;

    // The covariance ridge is anchored once, at the initial model, and from
    // then on only transformed jointly with the parameters: rebalancing
    // divides the model scale and the ridge by the same factor, which leaves
    // the ridged cost exactly invariant. Re-anchoring mid-run would move the
    // effective objective under the optimizer wherever the ridge dominates a
    // collapsed covariance entry, and the trace would no longer be comparable
    // across iterations.
    let mut cache = CovarianceCache::build(&model, ridge)?;
    for iteration in 1..=config.outer_iterations {
        let t0 = Instant::now();
        for _ in 0..config.vcd_sweeps {
            demix_sweep_with(&mut w, x.data(), &cache, dof)?;
        }
        let mut y = demix_data(&w, x.data())?;
        let demix_cost = cost_with(&w, &cache, &y, dof);
        let demix_seconds = t0.elapsed().as_secs_f64();
        if !demix_cost.is_finite() {
            trace.aborted_at = Some(iteration);
            break;
        }

        let t1 = Instant::now();
        crate::psdtf::source_sweep_with(&mut model, &y, dof, ridge, &cache)?;
        // pin the flat joint scale; the tensor and the ridge anchor follow
        let scales = rebalance_scales(&mut w, &mut model);
        let mut eps = cache.eps().to_vec();
        for (n, &sc) in scales.iter().enumerate() {
            if sc != 1.0 {
                let factor = 1.0 / sc.sqrt();
                for v in y.slice_mut(s![.., .., n]).iter_mut() {
                    *v *= factor;
                }
                eps[n] /= sc;
            }
        }
        cache = CovarianceCache::build_anchored(&model, &eps)?;
        let source_cost = cost_with(&w, &cache, &y, dof);
        let source_seconds = t1.elapsed().as_secs_f64();
        if !source_cost.is_finite() {
            trace.aborted_at = Some(iteration);
            break;
        }
        trace.records.push(IterationRecord {
            iteration,
            demix_cost,
            demix_seconds,
            source_cost,
            source_seconds,
        });
    }

    let y = crate::demix::demix(&w, x)?;
    let projected = projection_back(&y, &w, config.reference_channel)?;
    let waveforms = istft(&projected)?;
    Ok(SeparationResult {
        spectrogram: projected,
        waveforms,
        demixing: w,
        model,
        trace,
    })
}
