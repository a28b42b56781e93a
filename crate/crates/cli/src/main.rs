use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;

use framequant::container::{write_atomic, Tensor, TensorContainer};
use framequant::demo::{demo_inputs, demo_mlp, parse_spec, OutlierSpec};
use framequant::eval::{evaluate, EvalEcho};
use framequant::packfmt::{self, format_inspection, inspect, storage_report, StorageReport};
use framequant::quantizer::{quantize_model_with, Mlp, QuantConfig};
use framequant::robustness::{
    consistent_bench_rows, consistent_experiment, noise_mse_experiment, rows_to_csv,
    ConsistentExperimentConfig, NoiseExperimentConfig, NoiseModel,
};
use framequant::runtime::LoadedModel;
use framequant::{build_fusion_frame, frame_operator_deviation, Error};

#[derive(Parser)]
#[command(name = "framequant", version, about = "Low-bit weight quantization in tight fusion frame coordinates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a frame and write its descriptor.
    Frame {
        #[arg(long)]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        redundancy: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// JSON descriptor output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Quantize an MLP into an FQNT file.
    Quantize(QuantizeArgs),
    /// Compare a quantized model against its full-precision weights.
    Eval {
        #[arg(long)]
        quantized: PathBuf,
        #[arg(long)]
        reference_weights: PathBuf,
        /// Container whose first tensor holds inputs as [n, d0].
        #[arg(long)]
        data: PathBuf,
        /// JSON report output.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Quantize frame-space activations to 4, 6 or 8 bits.
        #[arg(long)]
        activation_bits: Option<u8>,
    },
    /// MSE of noisy frame coefficients against redundancy, as CSV.
    BenchNoise {
        #[arg(long, default_value_t = 4)]
        dim: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,1.5,2,3")]
        redundancies: Vec<f64>,
        #[arg(long, default_value_t = 10.0, allow_negative_numbers = true)]
        snr_db: f64,
        #[arg(long, default_value_t = 5000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = NoiseKind::AdditiveGaussian)]
        quantizer: NoiseKind,
    },
    /// MSE of consistent reconstruction against redundancy, as CSV.
    BenchConsistent {
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
        redundancies: Vec<f64>,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long, default_value_t = 500)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Also print the least-squares reconstruction MSE per row.
        #[arg(long)]
        with_linear: bool,
    },
    /// Per-layer dump of an FQNT file with checksum status.
    Inspect {
        #[arg(long)]
        model: PathBuf,
    },
    /// Write synthetic weights, calibration and evaluation containers.
    Demo {
        /// Layer widths, e.g. mlp:64,128,32.
        #[arg(long)]
        spec: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        weights_out: PathBuf,
        #[arg(long)]
        calib_out: Option<PathBuf>,
        #[arg(long)]
        data_out: Option<PathBuf>,
        #[arg(long, default_value_t = 256)]
        samples: usize,
        #[arg(long, default_value_t = 0.01)]
        outlier_fraction: f64,
        /// Outlier magnitude in standard deviations.
        #[arg(long, default_value_t = 10.0)]
        outlier_scale: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseKind {
    AdditiveGaussian,
    UniformMemoryless,
}

#[derive(clap::Args)]
struct QuantizeArgs {
    /// Weight container; every 2-D tensor is one layer, shaped [d_out, d_in].
    #[arg(long, required_unless_present = "demo", conflicts_with = "demo")]
    weights: Option<PathBuf>,
    /// Quantize a generated model instead, e.g. mlp:64,128,32.
    #[arg(long)]
    demo: Option<String>,
    /// Container whose first tensor holds calibration inputs as [n, d0]. Generated when
    /// omitted with --demo.
    #[arg(long, required_unless_present = "demo")]
    calib: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    bits: u8,
    #[arg(long, default_value_t = 1.0)]
    redundancy: f64,
    #[arg(long, default_value_t = 2.0)]
    clip_sigma: f64,
    #[arg(long)]
    no_clip: bool,
    #[arg(long, default_value_t = 128)]
    block: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.01)]
    damping: f64,
    #[arg(long)]
    act_order: bool,
    /// Calibration samples generated for --demo.
    #[arg(long, default_value_t = 256)]
    samples: usize,
    #[arg(long)]
    out: PathBuf,
}

/// Names the file in I/O errors, which otherwise only carry the OS message.
fn at(path: &Path) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Io(io) => Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    }
}

fn read_container(path: &Path) -> Result<TensorContainer, Error> {
    TensorContainer::read(path).map_err(at(path))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::InvalidFrame { .. } => 1,
        Error::Shape(_) | Error::Format(_) | Error::Io(_) | Error::Json(_) => 2,
        Error::Numerical(_) => 3,
    }
}

/// First tensor of a container, `[n, d]` on disk, as `d x n`.
fn read_samples(path: &Path) -> Result<DMatrix<f64>, Error> {
    let c = read_container(path)?;
    let t = c
        .tensors
        .first()
        .ok_or_else(|| Error::Shape(format!("{} holds no tensors", path.display())))?;
    if t.shape.len() != 2 {
        return Err(Error::Shape(format!(
            "{}: tensor {:?} has shape {:?}, expected [n, d]",
            path.display(),
            t.name,
            t.shape
        )));
    }
    Ok(t.to_matrix()?.transpose())
}

fn write_samples(path: &Path, name: &str, x: &DMatrix<f64>) -> Result<(), Error> {
    TensorContainer {
        tensors: vec![Tensor::from_matrix(name, &x.transpose())],
    }
    .write(path)
}

fn print_storage(report: &StorageReport) {
    for l in &report.layers {
        println!(
            "storage {}: {}x{} -> {}x{} codes={} B grids={} B meta={} B total={} B ratio={:.2}x \
             nominal_bits={:.3} exact_bits={:.3} effective_bits={:.3}",
            l.name,
            l.d_out,
            l.d_in,
            l.rows,
            l.cols,
            l.code_bytes,
            l.grid_bytes,
            l.metadata_bytes,
            l.total_bytes,
            l.compression_ratio,
            l.nominal_bits,
            l.exact_bits,
            l.effective_bits
        );
    }
    println!(
        "storage total: codes={} B grids={} B meta={} B file={} B fp32={} B ratio={:.2}x",
        report.code_bytes,
        report.grid_bytes,
        report.metadata_bytes,
        report.total_bytes,
        report.fp32_equivalent_bytes,
        report.compression_ratio
    );
}

fn cmd_quantize(args: QuantizeArgs) -> Result<(), Error> {
    let config = QuantConfig {
        bits: args.bits,
        clip_sigmas: (!args.no_clip).then_some(args.clip_sigma),
        block_size: args.block,
        redundancy: args.redundancy,
        seed: args.seed,
        damping_fraction: args.damping,
        act_order: args.act_order,
    };
    config.validate()?;
    let model = match (&args.weights, &args.demo) {
        (Some(path), _) => Mlp::from_container(&read_container(path)?)?,
        (None, Some(spec)) => demo_mlp(&parse_spec(spec)?, args.seed, &OutlierSpec::default())?,
        (None, None) => unreachable!("clap requires one of --weights and --demo"),
    };
    let calib = match &args.calib {
        Some(path) => read_samples(path)?,
        None => demo_inputs(model.dims()[0], args.samples, args.seed),
    };
    if calib.nrows() != model.dims()[0] {
        return Err(Error::Shape(format!(
            "calibration inputs have {} features, first layer takes {}",
            calib.nrows(),
            model.dims()[0]
        )));
    }
    let q = quantize_model_with(&model, &calib, &config, |l, out| {
        println!(
            "layer {l} {}: frames out={} in={} proxy_loss={:.6e} gptq_loss={:.6e}",
            out.layer.name, out.layer.frame_out, out.layer.frame_in, out.proxy_loss, out.gptq_loss
        );
    })?;
    println!("total proxy_loss={:.6e}", q.proxy_losses.iter().sum::<f64>());
    packfmt::write_model(&args.out, &q.layers).map_err(at(&args.out))?;
    print_storage(&storage_report(&q.layers));
    println!("wrote {}", args.out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Frame {
            dim,
            redundancy,
            seed,
            out,
        } => {
            let f = build_fusion_frame(dim, redundancy, seed)?;
            let dev = frame_operator_deviation(&f);
            let kind = if f.k() == 1 { " (orthonormal basis)" } else { "" };
            println!(
                "k={} rho={} d={} r={} ({:.4}, requested {redundancy}){kind}",
                f.k(),
                f.rho(),
                f.dim(),
                f.redundancy(),
                f.redundancy().as_f64()
            );
            println!("frame operator deviation {dev:.3e}");
            if let Some(out) = out {
                let json = serde_json::to_string_pretty(&f.descriptor())?;
                write_atomic(&out, json.as_bytes())?;
                println!("wrote {}", out.display());
            }
            Ok(())
        }
        Command::Quantize(args) => cmd_quantize(args),
        Command::Eval {
            quantized,
            reference_weights,
            data,
            report,
            activation_bits,
        } => {
            let model = LoadedModel::read(&quantized).map_err(at(&quantized))?;
            let reference = Mlp::from_container(&read_container(&reference_weights)?)?;
            let x = read_samples(&data)?;
            let echo = EvalEcho {
                quantized: quantized.display().to_string(),
                reference_weights: reference_weights.display().to_string(),
                data: data.display().to_string(),
                activation_bits,
            };
            let r = evaluate(&model, &reference, &x, echo)?;
            for l in &r.layers {
                println!(
                    "layer {}: {}x{} bits={} proxy_loss={:.6e} weight_rel_error={:.4e}",
                    l.name, l.d_out, l.d_in, l.bits, l.proxy_loss, l.weight_relative_error
                );
            }
            println!(
                "output_mse={:.6e} reference_power={:.6e} samples={}",
                r.output_mse, r.reference_output_power, r.samples
            );
            if let Some(path) = report {
                write_atomic(&path, r.to_json()?.as_bytes())?;
                println!("wrote {}", path.display());
            }
            Ok(())
        }
        Command::BenchNoise {
            dim,
            redundancies,
            snr_db,
            trials,
            seed,
            quantizer,
        } => {
            let cfg = NoiseExperimentConfig {
                d: dim,
                redundancies,
                snr_db,
                trials,
                seed,
                noise: match quantizer {
                    NoiseKind::AdditiveGaussian => NoiseModel::AdditiveGaussian,
                    NoiseKind::UniformMemoryless => NoiseModel::UniformMemoryless,
                },
            };
            print!("{}", rows_to_csv(&noise_mse_experiment(&cfg)?));
            Ok(())
        }
        Command::BenchConsistent {
            dim,
            redundancies,
            delta,
            trials,
            seed,
            tol,
            with_linear,
        } => {
            let cfg = ConsistentExperimentConfig {
                d: dim,
                redundancies,
                delta,
                trials,
                seed,
                tol,
            };
            let rows = consistent_experiment(&cfg)?;
            print!("{}", rows_to_csv(&consistent_bench_rows(&rows)));
            if with_linear {
                for r in &rows {
                    eprintln!(
                        "r={} linear_mse={:e} consistent_mse={:e} max_violation={:e}",
                        r.r, r.linear_mse, r.consistent_mse, r.max_violation
                    );
                }
            }
            Ok(())
        }
        Command::Inspect { model } => {
            let bytes = std::fs::read(&model).map_err(|e| at(&model)(e.into()))?;
            let ins = inspect(&bytes)?;
            print!("{}", format_inspection(&ins));
            if ins.all_ok() {
                Ok(())
            } else {
                Err(Error::Format(framequant::FormatError::Invalid {
                    offset: ins
                        .records
                        .iter()
                        .find(|r| !r.crc_ok || r.parse_error.is_some())
                        .map_or(0, |r| r.offset),
                    what: format!("{} is damaged", model.display()),
                }))
            }
        }
        Command::Demo {
            spec,
            seed,
            weights_out,
            calib_out,
            data_out,
            samples,
            outlier_fraction,
            outlier_scale,
        } => {
            if !(0.0..=1.0).contains(&outlier_fraction) {
                return Err(Error::InvalidArgument(format!(
                    "outlier fraction must lie in [0, 1], got {outlier_fraction}"
                )));
            }
            let dims = parse_spec(&spec)?;
            let outliers = OutlierSpec {
                fraction: outlier_fraction,
                scale: outlier_scale,
            };
            demo_mlp(&dims, seed, &outliers)?.to_container().write(&weights_out)?;
            println!("wrote {}", weights_out.display());
            if let Some(p) = calib_out {
                write_samples(&p, "calib", &demo_inputs(dims[0], samples, seed))?;
                println!("wrote {}", p.display());
            }
            if let Some(p) = data_out {
                // held-out: a different stream from the calibration inputs
                write_samples(&p, "data", &demo_inputs(dims[0], samples, seed ^ 0x5EED_DA7A))?;
                println!("wrote {}", p.display());
            }
            Ok(())
        }
    }
}

fn init_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("FQ_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("FQ_THREADS must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match init_threads().and_then(|_| run(cli)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
