use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tipsdta::eval::{mix, sdr_improvement, synth_sources, MixingKind, MixingSpec};
use tipsdta::model::{save_checkpoint, Dof, ModelConfig};
use tipsdta::signal::{istft, read_wav, stft, wav::BitDepth, write_wav, WaveformBatch};

use crate::config_file::ConfigFile;
use crate::{CliError, EvalArgs, SeparateArgs, SimulateArgs, TraceArgs};

fn require_file(path: &Path) -> Result<(), CliError> {
    if !path.is_file() {
        return Err(CliError::usage(format!("no such file: '{}'", path.display())));
    }
    Ok(())
}

pub fn separate(args: SeparateArgs) -> Result<(), CliError> {
    require_file(&args.mixture)?;

    let file = match &args.config {
        Some(path) => {
            let cfg = ConfigFile::load(path)?;
            cfg.known_keys_check(&[
                "nu", "bases", "iterations", "vcd_sweeps", "blocks", "window_ms", "hop_ms",
                "seed", "ridge", "ref_channel",
            ])?;
            cfg
        }
        None => ConfigFile::default(),
    };
    let defaults = ModelConfig::default();
    let nu: Dof = match args.nu.as_deref() {
        Some(raw) => raw.parse()?,
        None => file.get::<Dof>("nu")?.unwrap_or(defaults.dof),
    };
    let bases = args
        .bases
        .or(file.get("bases")?)
        .unwrap_or(defaults.num_bases);
    let iterations = args
        .iterations
        .or(file.get("iterations")?)
        .unwrap_or(defaults.outer_iterations);
    let vcd_sweeps = args
        .vcd_sweeps
        .or(file.get("vcd_sweeps")?)
        .unwrap_or(defaults.vcd_sweeps);
    let blocks = match args.blocks.as_deref() {
        Some(raw) => raw.parse()?,
        None => file
            .get::<tipsdta::BlockScheme>("blocks")?
            .unwrap_or(defaults.block_scheme),
    };
    let window_ms = args.window_ms.or(file.get("window_ms")?).unwrap_or(256.0);
    let hop_ms = args.hop_ms.or(file.get("hop_ms")?).unwrap_or(128.0);
    let seed = args.seed.or(file.get("seed")?).unwrap_or(defaults.seed);
    let ridge = args.ridge.or(file.get("ridge")?).unwrap_or(defaults.ridge);
    let ref_channel = args
        .ref_channel
        .or(file.get("ref_channel")?)
        .unwrap_or(1);
    if ref_channel == 0 {
        return Err(CliError::usage("--ref-channel is 1-based"));
    }

    let mixture = read_wav(&args.mixture)
        .map_err(|e| CliError::from(e).prefixed(&format!("'{}'", args.mixture.display())))?;
    if mixture.channels() < 2 {
        return Err(CliError::usage(format!(
            "mixture has {} channel(s); separation needs at least 2",
            mixture.channels()
        )));
    }
    if ref_channel > mixture.channels() {
        return Err(CliError::usage(format!(
            "--ref-channel {} out of range for {} channels",
            ref_channel,
            mixture.channels()
        )));
    }

    let config = ModelConfig {
        dof: nu,
        num_bases: bases,
        block_scheme: blocks,
        outer_iterations: iterations,
        vcd_sweeps,
        ridge,
        seed,
        reference_channel: ref_channel - 1,
    };

    let tensor = stft(&mixture, window_ms, hop_ms)?;
    let result = tipsdta::separate(&tensor, &config)?;
    if let Some(iteration) = result.trace.aborted_at {
        return Err(CliError::runtime(format!(
            "cost became non-finite at iteration {iteration}; partial trace written"
        )));
    }

    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| CliError::usage(format!("cannot create '{}': {e}", args.out_dir.display())))?;
    for n in 0..result.waveforms.channels() {
        let path = args.out_dir.join(format!("source_{}.wav", n + 1));
        let mono = WaveformBatch::from_mono(
            result.waveforms.channel_vec(n),
            result.waveforms.sample_rate(),
        )?;
        write_wav(&path, &mono, BitDepth::Float32)?;
    }
    let trace_path = args.out_dir.join("trace.csv");
    let mut trace_file = File::create(&trace_path)
        .map_err(|e| CliError::usage(format!("cannot create '{}': {e}", trace_path.display())))?;
    result
        .trace
        .write_csv(&mut trace_file, args.timing)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let model_path = args.out_dir.join("model.json");
    let model_file = File::create(&model_path)
        .map_err(|e| CliError::usage(format!("cannot create '{}': {e}", model_path.display())))?;
    save_checkpoint(model_file, &result.model, &config)?;

    println!(
        "wrote {} sources, trace.csv, model.json to {}",
        result.waveforms.channels(),
        args.out_dir.display()
    );
    Ok(())
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    mode: String,
    seed: u64,
    sample_rate: u32,
    condition_bound: f64,
    sources: Vec<String>,
    /// Instantaneous mixing matrix, row-major; absent for per-bin mixing
    /// (regenerate from the seed).
    mixing_matrix: Option<Vec<Vec<f64>>>,
}

pub fn simulate(args: SimulateArgs) -> Result<(), CliError> {
    let (sources, source_names): (WaveformBatch, Vec<String>) = if let Some(count) = args.synth
    {
        if count < 2 {
            return Err(CliError::usage("--synth needs at least 2 sources"));
        }
        let batch = synth_sources(count, args.duration, args.sample_rate, args.seed)?;
        let names = (0..count).map(|n| format!("synth_{}", n + 1)).collect();
        (batch, names)
    } else {
        if args.sources.len() < 2 {
            return Err(CliError::usage(
                "need --sources with at least 2 files, or --synth N",
            ));
        }
        let mut mono = Vec::new();
        let mut names = Vec::new();
        for path in &args.sources {
            require_file(path)?;
            let batch = read_wav(path)?;
            if batch.channels() != 1 {
                return Err(CliError::usage(format!(
                    "source '{}' has {} channels, expected mono",
                    path.display(),
                    batch.channels()
                )));
            }
            names.push(path.display().to_string());
            mono.push(batch);
        }
        (WaveformBatch::stack(&mono)?, names)
    };

    if let Some(dir) = &args.write_sources {
        std::fs::create_dir_all(dir)
            .map_err(|e| CliError::usage(format!("cannot create '{}': {e}", dir.display())))?;
        for n in 0..sources.channels() {
            let path = dir.join(format!("source_{}.wav", n + 1));
            let mono = WaveformBatch::from_mono(sources.channel_vec(n), sources.sample_rate())?;
            write_wav(&path, &mono, BitDepth::Float32)?;
        }
    }

    let n = sources.channels();
    let (mixture, matrix_entries) = match args.mode.as_str() {
        "instantaneous" => {
            let spec = MixingSpec::random_instantaneous(n, args.seed, args.cond_bound)?;
            let a = match spec.kind() {
                MixingKind::Instantaneous(a) => a.clone(),
                _ => unreachable!(),
            };
            // real instantaneous mixing is the same operator in the time domain
            let mut data = ndarray::Array2::zeros((n, sources.len()));
            for t in 0..sources.len() {
                for m in 0..n {
                    let mut acc = 0.0;
                    for s in 0..n {
                        acc += a[(m, s)] * sources.samples()[(s, t)];
                    }
                    data[(m, t)] = acc;
                }
            }
            let mixture = WaveformBatch::new(data, sources.sample_rate())?;
            let entries = (0..n)
                .map(|r| (0..n).map(|c| a[(r, c)]).collect())
                .collect();
            (mixture, Some(entries))
        }
        "convolutive" => {
            let tensor = stft(&sources, args.window_ms, args.hop_ms)?;
            let spec =
                MixingSpec::random_per_bin(tensor.bins(), n, args.seed, args.cond_bound)?;
            let mixed = mix(&tensor, &spec)?;
            (istft(&mixed)?, None)
        }
        other => {
            return Err(CliError::usage(format!(
                "unknown mode '{other}' (instantaneous or convolutive)"
            )))
        }
    };

    write_wav(&args.out, &mixture, BitDepth::Float32)?;
    if let Some(path) = &args.manifest {
        let manifest = Manifest {
            mode: args.mode.clone(),
            seed: args.seed,
            sample_rate: sources.sample_rate(),
            condition_bound: args.cond_bound,
            sources: source_names,
            mixing_matrix: matrix_entries,
        };
        let file = File::create(path)
            .map_err(|e| CliError::usage(format!("cannot create '{}': {e}", path.display())))?;
        serde_json::to_writer_pretty(file, &manifest)
            .map_err(|e| CliError::runtime(e.to_string()))?;
    }
    println!(
        "wrote {} ({} channels, {} samples)",
        args.out.display(),
        mixture.channels(),
        mixture.len()
    );
    Ok(())
}

pub fn eval(args: EvalArgs) -> Result<(), CliError> {
    if args.references.len() != args.estimates.len() {
        return Err(CliError::usage(format!(
            "{} references vs {} estimates",
            args.references.len(),
            args.estimates.len()
        )));
    }
    require_file(&args.mixture)?;
    let mixture = read_wav(&args.mixture)?;
    if args.mixture_channel == 0 || args.mixture_channel > mixture.channels() {
        return Err(CliError::usage(format!(
            "--mixture-channel {} out of range for {} channels",
            args.mixture_channel,
            mixture.channels()
        )));
    }
    let load = |paths: &[PathBuf]| -> Result<Vec<Vec<f64>>, CliError> {
        let mut out = Vec::new();
        for path in paths {
            require_file(path)?;
            let batch = read_wav(path)?;
            if batch.channels() != 1 {
                return Err(CliError::usage(format!(
                    "'{}' has {} channels, expected mono",
                    path.display(),
                    batch.channels()
                )));
            }
            out.push(batch.channel_vec(0));
        }
        Ok(out)
    };
    let references = load(&args.references)?;
    let estimates = load(&args.estimates)?;
    let len = references
        .iter()
        .chain(estimates.iter())
        .map(Vec::len)
        .min()
        .unwrap_or(0)
        .min(mixture.len());
    let references: Vec<Vec<f64>> = references.into_iter().map(|r| r[..len].to_vec()).collect();
    let estimates: Vec<Vec<f64>> = estimates.into_iter().map(|e| e[..len].to_vec()).collect();
    let mix_ref = mixture.channel_vec(args.mixture_channel - 1)[..len].to_vec();

    let report = sdr_improvement(&references, &mix_ref, &estimates)?;
    let csv = tipsdta::eval::report_to_csv(&report, args.trial);
    match &args.out {
        Some(path) => {
            let mut file = File::create(path)
                .map_err(|e| CliError::usage(format!("cannot create '{}': {e}", path.display())))?;
            file.write_all(csv.as_bytes())
                .map_err(|e| CliError::runtime(e.to_string()))?;
        }
        None => print!("{csv}"),
    }
    eprintln!("mean improvement: {:.2} dB", report.mean_improvement);
    Ok(())
}

pub fn trace(args: TraceArgs) -> Result<(), CliError> {
    require_file(&args.trace)?;
    let text = std::fs::read_to_string(&args.trace)
        .map_err(|e| CliError::usage(format!("cannot read '{}': {e}", args.trace.display())))?;
    let mut lines = text.lines();
    match lines.next() {
        Some("iteration,phase,cost,seconds") => {}
        other => {
            return Err(CliError::usage(format!(
                "not a trace CSV (header {:?})",
                other.unwrap_or("")
            )))
        }
    }
    let mut costs = Vec::new();
    let mut total_seconds = 0.0;
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(CliError::usage(format!(
                "{}:{}: expected 4 fields",
                args.trace.display(),
                lineno + 2
            )));
        }
        let cost: f64 = fields[2]
            .parse()
            .map_err(|_| CliError::usage(format!("bad cost '{}'", fields[2])))?;
        let seconds: f64 = fields[3]
            .parse()
            .map_err(|_| CliError::usage(format!("bad seconds '{}'", fields[3])))?;
        costs.push(cost);
        total_seconds += seconds;
    }
    if costs.is_empty() {
        println!("empty trace");
        return Ok(());
    }
    let mut worst: f64 = 0.0;
    for k in 1..costs.len() {
        let rel = (costs[k] - costs[k - 1]) / costs[k - 1].abs().max(1e-300);
        worst = worst.max(rel);
    }
    println!(
        "{} half-steps, first cost {}, final cost {}, recorded time {:.3} s",
        costs.len(),
        costs[0],
        costs[costs.len() - 1],
        total_seconds
    );
    if worst <= 1e-9 {
        println!("monotone within 1e-9 relative (worst increase {worst:.3e})");
        Ok(())
    } else {
        Err(CliError::runtime(format!(
            "trace is not monotone: worst relative increase {worst:.3e}"
        )))
    }
}
