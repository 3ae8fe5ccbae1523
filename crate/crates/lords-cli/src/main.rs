use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use lords::qat::{qat_demo_instance, toy_qat_train, TrainConfig, TrainMode};
use lords::{
    aligned_rank, blockwise_quantize, build_codebook, comparison_report, dequantize,
    equivalent_rank, mixed_precision_plan, peft_delta, read_packed, read_tensor, refine, svd,
    write_packed, write_tensor, write_text, CodebookId, DenseMatrix, Error, FactorPair, MethodEval,
    MixedBits, QuantizedTensor, RefineConfig, ReportInput, Result, ScaleBudget, ScaleRepr,
};

#[derive(Parser)]
#[command(
    name = "lords",
    version,
    about = "Block-wise weight quantization with low-rank decomposed scales"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Block-wise absmax quantization of a tensor file.
    Quantize {
        /// Input tensor (.lrt).
        #[arg(long = "in")]
        input: PathBuf,
        /// Codebook: nf4, nf2, or int4s.
        #[arg(long)]
        codebook: String,
        /// Elements per scale block; must divide the column count.
        #[arg(long = "block-size")]
        block_size: usize,
        /// Output packed artifact (.lrq).
        #[arg(long)]
        out: PathBuf,
    },
    /// Alternating refinement of codes and factored scales.
    Refine {
        /// Input tensor (.lrt).
        #[arg(long = "in")]
        input: PathBuf,
        /// Codebook: nf4, nf2, or int4s.
        #[arg(long)]
        codebook: String,
        /// Factor rank, or `auto` for the budget matched to --block-size.
        #[arg(long, default_value = "auto")]
        rank: String,
        /// Block size the `auto` rank is budget-matched against.
        #[arg(long = "block-size", default_value_t = 128)]
        block_size: usize,
        /// Refinement iterations.
        #[arg(long, default_value_t = 500)]
        steps: usize,
        /// AdamW learning rate.
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        /// Output packed artifact (.lrq).
        #[arg(long)]
        out: PathBuf,
        /// Optional error-trace CSV.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Reconstruct real weights from a packed artifact.
    Dequantize {
        /// Input packed artifact (.lrq).
        #[arg(long = "in")]
        input: PathBuf,
        /// Output tensor (.lrt).
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare artifacts against reference weights; table goes to stdout.
    ErrorReport {
        /// Reference tensor (.lrt).
        #[arg(long)]
        weights: PathBuf,
        /// Packed artifacts to evaluate; the first NF4 block-scale artifact
        /// is the ratio baseline.
        #[arg(long, num_args = 1.., required = true)]
        artifacts: Vec<PathBuf>,
        /// Output format: csv or md.
        #[arg(long, default_value = "csv")]
        format: String,
    },
    /// Print the factor rank whose parameter count matches a block size.
    RankPlan {
        #[arg(long)]
        rows: usize,
        #[arg(long)]
        cols: usize,
        #[arg(long = "block-size")]
        block_size: usize,
        /// Extra adapter rank on top of the budget-matched rank.
        #[arg(long = "adapter-rank")]
        adapter_rank: Option<usize>,
    },
    /// Print the per-layer codebook assignment for an average bit target.
    MixedPlan {
        #[arg(long)]
        layers: usize,
        /// Average bits per weight: 3, 2.5, 2.25, or 2.
        #[arg(long)]
        bits: String,
    },
    /// Run the joint vs weights-only fake-quantized training comparison.
    QatDemo {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 400)]
        steps: usize,
        #[arg(long, default_value_t = 3e-3)]
        lr: f64,
        /// Paired loss-trace CSV (step, joint, weights_only).
        #[arg(long)]
        out: PathBuf,
    },
    /// Swap tuned scale factors into a packed artifact.
    PeftMerge {
        /// Base packed artifact (.lrq).
        #[arg(long)]
        base: PathBuf,
        /// Tuned left factor tensor (.lrt).
        #[arg(long = "tuned-b")]
        tuned_b: PathBuf,
        /// Tuned right factor tensor (.lrt).
        #[arg(long = "tuned-a")]
        tuned_a: PathBuf,
        /// Output packed artifact (.lrq).
        #[arg(long)]
        out: PathBuf,
    },
    /// Singular-value spectrum of the multiplicative adaptation delta.
    DeltaRank {
        /// Base packed artifact (.lrq); must store factored scales.
        #[arg(long)]
        base: PathBuf,
        /// Tuned left factor tensor (.lrt).
        #[arg(long = "tuned-b")]
        tuned_b: PathBuf,
        /// Tuned right factor tensor (.lrt).
        #[arg(long = "tuned-a")]
        tuned_a: PathBuf,
        /// Spectrum CSV (index, sigma).
        #[arg(long)]
        out: PathBuf,
    },
}

/// Relative singular-value cutoff behind the effective rank printed by
/// `delta-rank`.
const DELTA_RANK_REL_TOL: f64 = 1e-6;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("lords: {e}");
            ExitCode::from(error_code(&e))
        }
    }
}

/// One distinct exit code per failure class; clap itself exits 2 on usage
/// errors.
fn error_code(e: &Error) -> u8 {
    match e {
        Error::Shape(_) | Error::InvalidArgument(_) => 3,
        Error::Io(_) => 4,
        Error::BadMagic { .. } => 5,
        Error::Truncated { .. } => 6,
        Error::Unsupported(_) => 7,
        Error::Encoding(_) => 8,
        Error::Numeric(_) => 9,
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Quantize {
            input,
            codebook,
            block_size,
            out,
        } => {
            let w = read_tensor(&input)?;
            let cb = build_codebook(CodebookId::parse(&codebook)?);
            let q = blockwise_quantize(&w, block_size, &cb)?;
            write_packed(&q, &out)
        }
        Command::Refine {
            input,
            codebook,
            rank,
            block_size,
            steps,
            lr,
            out,
            report,
        } => {
            let w = read_tensor(&input)?;
            let id = CodebookId::parse(&codebook)?;
            let rank = parse_rank(&rank, &w, block_size)?;
            let cfg = RefineConfig {
                rank,
                steps,
                lr,
                codebook: id,
            };
            let (factors, codes, summary) = refine(&w, &cfg)?;
            let q = QuantizedTensor::new(w.rows(), w.cols(), id, codes, ScaleRepr::Factors(factors))?;
            write_packed(&q, &out)?;
            if let Some(path) = report {
                write_text(&summary.to_csv(), &path)?;
            }
            Ok(())
        }
        Command::Dequantize { input, out } => {
            let q = read_packed(&input)?;
            write_tensor(&dequantize(&q)?, &out)
        }
        Command::ErrorReport {
            weights,
            artifacts,
            format,
        } => {
            let table = error_report(&weights, &artifacts)?;
            match format.as_str() {
                "csv" => print!("{}", table.to_csv()),
                "md" => print!("{}", table.to_markdown()),
                other => {
                    return Err(Error::InvalidArgument(format!(
                        "unknown format '{other}' (expected csv or md)"
                    )))
                }
            }
            Ok(())
        }
        Command::RankPlan {
            rows,
            cols,
            block_size,
            adapter_rank,
        } => {
            let r = match adapter_rank {
                Some(extra) => aligned_rank(rows, cols, block_size, extra)?,
                None => equivalent_rank(rows, cols, block_size)?,
            };
            println!("{r}");
            Ok(())
        }
        Command::MixedPlan { layers, bits } => {
            let plan = mixed_precision_plan(layers, MixedBits::parse(&bits)?)?;
            println!("layer,codebook");
            for (i, id) in plan.iter().enumerate() {
                println!("{i},{}", id.name());
            }
            Ok(())
        }
        Command::QatDemo {
            seed,
            steps,
            lr,
            out,
        } => {
            let demo = qat_demo_instance(seed)?;
            let train = |mode| {
                let cfg = TrainConfig {
                    lr,
                    steps,
                    mode,
                    clip_norm: Some(1.0),
                };
                toy_qat_train(&demo.data, &demo.w0, &demo.factors, &demo.codebook, &cfg)
            };
            let joint = train(TrainMode::Joint)?;
            let wonly = train(TrainMode::WeightsOnly)?;
            let mut csv = String::from("step,joint,weights_only\n");
            for (i, (j, w)) in joint.iter().zip(&wonly).enumerate() {
                csv.push_str(&format!("{i},{j},{w}\n"));
            }
            write_text(&csv, &out)?;
            println!("{},{}", joint.last().unwrap(), wonly.last().unwrap());
            Ok(())
        }
        Command::PeftMerge {
            base,
            tuned_b,
            tuned_a,
            out,
        } => {
            let q = read_packed(&base)?;
            let tuned = FactorPair::new(read_tensor(&tuned_b)?, read_tensor(&tuned_a)?)?;
            let merged = QuantizedTensor::new(
                q.rows(),
                q.cols(),
                q.codebook(),
                q.codes().to_vec(),
                ScaleRepr::Factors(tuned),
            )?;
            write_packed(&merged, &out)
        }
        Command::DeltaRank {
            base,
            tuned_b,
            tuned_a,
            out,
        } => {
            let q = read_packed(&base)?;
            let base_factors = match q.repr() {
                ScaleRepr::Factors(f) => f.clone(),
                ScaleRepr::Blocks(_) => {
                    return Err(Error::InvalidArgument(
                        "base artifact stores block scales; the adaptation delta needs the factored form"
                            .to_string(),
                    ))
                }
            };
            let tuned = FactorPair::new(read_tensor(&tuned_b)?, read_tensor(&tuned_a)?)?;
            let cb = build_codebook(q.codebook());
            let delta = peft_delta(q.codes(), &cb, &base_factors, &tuned)?;
            let sigma = svd(&delta)?.sigma;
            let mut csv = String::from("index,sigma\n");
            for (i, s) in sigma.iter().enumerate() {
                csv.push_str(&format!("{i},{s}\n"));
            }
            write_text(&csv, &out)?;
            let top = sigma.first().copied().unwrap_or(0.0);
            let effective = if top == 0.0 {
                0
            } else {
                sigma.iter().filter(|&&s| s > DELTA_RANK_REL_TOL * top).count()
            };
            println!("{effective}");
            Ok(())
        }
    }
}

fn parse_rank(text: &str, w: &DenseMatrix, block_size: usize) -> Result<usize> {
    if text == "auto" {
        return equivalent_rank(w.rows(), w.cols(), block_size);
    }
    text.parse::<usize>()
        .map_err(|_| Error::InvalidArgument(format!("rank must be `auto` or a positive integer, got '{text}'")))
}

/// Builds the comparison table. The ratio baseline is the first artifact
/// that stores NF4 block scales; lacking one, the ratio column would be
/// undefined, so the command refuses to run.
fn error_report(weights: &Path, artifacts: &[PathBuf]) -> Result<lords::ReportTable> {
    let w = read_tensor(weights)?;
    let mut evals = Vec::with_capacity(artifacts.len());
    let mut baseline = None;
    for (i, path) in artifacts.iter().enumerate() {
        let q = read_packed(path)?;
        let budget = match q.repr() {
            ScaleRepr::Blocks(bs) => {
                if baseline.is_none() && q.codebook() == CodebookId::Nf4 {
                    baseline = Some(i);
                }
                ScaleBudget::BlockSize(bs.block_size())
            }
            ScaleRepr::Factors(f) => ScaleBudget::Rank(f.rank()),
        };
        evals.push(MethodEval {
            name: label(path),
            budget,
            w_hat: dequantize(&q)?,
            is_baseline: false,
        });
    }
    let Some(at) = baseline else {
        return Err(Error::InvalidArgument(
            "no NF4 block-scale artifact among the inputs to serve as the ratio baseline".to_string(),
        ));
    };
    evals[at].is_baseline = true;
    comparison_report(&[ReportInput {
        label: label(weights),
        weights: w,
        methods: evals,
    }])
}

fn label(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}
