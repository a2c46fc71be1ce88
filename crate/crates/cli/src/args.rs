use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Debug, Parser)]
#[command(
    name = "curvop",
    version,
    about = "Curvature matrices of small networks as linear operators"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Curvature {
    Hessian,
    Ggn,
    #[value(name = "mc-fisher")]
    McFisher,
    #[value(name = "emp-fisher")]
    EmpFisher,
    #[value(name = "type2-fisher")]
    Type2Fisher,
    Kfac,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum KfacFlavorArg {
    Type2,
    Mc,
    Empirical,
}

/// Model, parameters, data and the curvature to build on them.
#[derive(Clone, Debug, Args)]
pub struct Problem {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub params: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Defaults to `hessian` for influence, prune and overlap, `ggn` elsewhere.
    #[arg(long, value_enum)]
    pub curvature: Option<Curvature>,
    /// Kronecker factors to use with `--curvature kfac` [default: type2].
    #[arg(long, value_enum)]
    pub kfac_flavor: Option<KfacFlavorArg>,
    /// Sampled labels per datum for Monte-Carlo curvatures [default: 1].
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Accumulate over batches of at most this many points.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Reshuffle the batches on every pass (needs --batch-size).
    #[arg(long, requires = "batch_size")]
    pub shuffle: bool,
    #[command(flatten)]
    pub output: Output,
}

#[derive(Clone, Debug, Args)]
pub struct Output {
    /// Result file; results go to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Add wall time to the report. Output is then no longer reproducible.
    #[arg(long)]
    pub timing: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TraceEstimator {
    Exact,
    Hutchinson,
    Hutchpp,
    Xtrace,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum DiagEstimator {
    Exact,
    Hutchinson,
    Xdiag,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum FrobeniusArg {
    TwoPass,
    OnePass,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SchemeArg {
    Exact,
    Heuristic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MergeArg {
    Full,
    Diagonal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum PruneArg {
    Diagonal,
    Full,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum InverseArg {
    PerIndex,
    Xdiag,
}

#[derive(Clone, Debug, Args)]
pub struct CgArgs {
    /// Relative residual tolerance of conjugate gradients.
    #[arg(long, default_value_t = 1e-10)]
    pub rtol: f64,
    #[arg(long)]
    pub maxiter: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Apply the curvature to one vector.
    Matvec {
        #[command(flatten)]
        problem: Problem,
        /// JSON array or {"vector": [...]}; a seeded Gaussian vector when omitted.
        #[arg(long)]
        vector: Option<PathBuf>,
    },
    /// Dense curvature matrix, one matvec per column.
    Materialize {
        #[command(flatten)]
        problem: Problem,
    },
    Trace {
        #[command(flatten)]
        problem: Problem,
        #[arg(long, value_enum, default_value = "xtrace")]
        estimator: TraceEstimator,
        /// Matrix-vector products to spend.
        #[arg(long, default_value_t = 60)]
        budget: usize,
    },
    Diag {
        #[command(flatten)]
        problem: Problem,
        #[arg(long, value_enum, default_value = "xdiag")]
        estimator: DiagEstimator,
        #[arg(long, default_value_t = 60)]
        budget: usize,
    },
    /// Squared Frobenius norm by Hutchinson probes.
    Frobenius {
        #[command(flatten)]
        problem: Problem,
        /// Number of probes.
        #[arg(long, default_value_t = 30)]
        budget: usize,
        #[arg(long, value_enum, default_value = "two-pass")]
        variant: FrobeniusArg,
    },
    /// Smoothed spectral density as CSV, plus an SVG plot.
    Spectrum {
        #[command(flatten)]
        problem: Problem,
        /// Independent Lanczos runs.
        #[arg(long, default_value_t = 10)]
        runs: usize,
        /// Lanczos steps per run.
        #[arg(long, default_value_t = 30)]
        steps: usize,
        #[arg(long)]
        sigma: Option<f64>,
        #[arg(long, default_value_t = 1024)]
        grid_points: usize,
        /// Density of log(|λ| + eps) instead of λ.
        #[arg(long)]
        log: bool,
        #[arg(long, default_value_t = 1e-5, requires = "log")]
        eps: f64,
        /// SVG path; defaults to --out with an .svg extension.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
    /// Largest eigenvalues.
    Eigs {
        #[command(flatten)]
        problem: Problem,
        #[arg(long, default_value_t = 5)]
        k: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
        /// Include the eigenvectors in the report.
        #[arg(long)]
        vectors: bool,
    },
    /// Damped Newton direction (C + λI)⁻¹ ∇L.
    Newton {
        #[command(flatten)]
        problem: Problem,
        #[arg(long)]
        damping: f64,
        /// Damping of the Kronecker factors with --curvature kfac.
        #[arg(long, value_enum, default_value = "exact")]
        damping_scheme: SchemeArg,
        #[command(flatten)]
        cg: CgArgs,
    },
    /// Parameter change from up-weighting one datum.
    Influence {
        #[command(flatten)]
        problem: Problem,
        #[arg(long)]
        datum: usize,
        #[arg(long)]
        damping: f64,
        #[command(flatten)]
        cg: CgArgs,
    },
    /// Fisher-weighted average of several parameter sets of one model.
    Merge {
        #[arg(long)]
        model: PathBuf,
        /// One parameter file per task.
        #[arg(long, required = true, num_args = 1..)]
        params: Vec<PathBuf>,
        /// One data set per task, or a single one shared by all.
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        #[arg(long, value_enum, default_value = "type2-fisher")]
        curvature: Curvature,
        #[arg(long, value_enum)]
        kfac_flavor: Option<KfacFlavorArg>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        damping: f64,
        #[arg(long, value_enum, default_value = "full")]
        mode: MergeArg,
        #[command(flatten)]
        cg: CgArgs,
        #[command(flatten)]
        output: Output,
    },
    /// Pruning saliencies per parameter.
    Prune {
        #[command(flatten)]
        problem: Problem,
        #[arg(long, value_enum, default_value = "diagonal")]
        mode: PruneArg,
        /// Needed in full mode.
        #[arg(long)]
        damping: Option<f64>,
        /// Comma-separated flat indices to score in full mode; all when omitted.
        #[arg(long, value_delimiter = ',')]
        indices: Option<Vec<usize>>,
        /// Diagonal source in diagonal mode.
        #[arg(long, value_enum, default_value = "exact")]
        estimator: DiagEstimator,
        /// Inverse diagonal method in full mode.
        #[arg(long, value_enum, default_value = "per-index")]
        inverse: InverseArg,
        #[arg(long, default_value_t = 60)]
        budget: usize,
        #[command(flatten)]
        cg: CgArgs,
    },
    /// Fraction of the gradient in the top-k eigenspace.
    Overlap {
        #[command(flatten)]
        problem: Problem,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 1e-10)]
        tol: f64,
    },
    /// Evaluate risk, gradient and a matvec twice and compare.
    CheckDeterministic {
        #[command(flatten)]
        problem: Problem,
        /// Largest accepted absolute difference; 0 demands bit equality.
        #[arg(long, default_value_t = 0.0)]
        tolerance: f64,
    },
    /// Median matvec time per curvature in multiples of the gradient time.
    Bench {
        #[command(flatten)]
        problem: Problem,
        #[arg(
            long,
            value_enum,
            value_delimiter = ',',
            default_value = "hessian,ggn,kfac"
        )]
        curvatures: Vec<Curvature>,
        #[arg(long, default_value_t = 7)]
        repeats: usize,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Matvec { .. } => "matvec",
            Command::Materialize { .. } => "materialize",
            Command::Trace { .. } => "trace",
            Command::Diag { .. } => "diag",
            Command::Frobenius { .. } => "frobenius",
            Command::Spectrum { .. } => "spectrum",
            Command::Eigs { .. } => "eigs",
            Command::Newton { .. } => "newton",
            Command::Influence { .. } => "influence",
            Command::Merge { .. } => "merge",
            Command::Prune { .. } => "prune",
            Command::Overlap { .. } => "overlap",
            Command::CheckDeterministic { .. } => "check-deterministic",
            Command::Bench { .. } => "bench",
        }
    }
}
