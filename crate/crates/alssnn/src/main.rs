use std::path::{Path, PathBuf};
use std::process::ExitCode;

use alssnn::analysis::{self, CertifyOptions, Family, IdentifyOptions, Split};
use alssnn::csvio::{fmt_f64, load_csv};
use alssnn::error::{AppError, AppResult};
use alssnn::generate::{write_generated, GeneratorSpec};
use alssnn::modelio::{ModelFile, ScalingFile};
use alssnn::pipeline::{self, RunFile};
use alssnn::report::{self, ClosedLoopReport, EvalReport, IdentifyReport, SweepRow};
use alssnn::jsonio;
use alssnn_core::training::{IterationRecord, TrainConfig};
use alssnn_core::{Mat, Model, StateSpaceModel, Vector};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "alssnn", version, about = "Identify, analyze and certify AL-SSNN state-space models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a benchmark dataset (CSV plus `.meta.json` sidecar).
    GenData(GenDataArgs),
    /// Identify a model from a CSV record.
    Identify(IdentifyArgs),
    /// Free-run a model on a record and report errors and residual ratios.
    Evaluate(EvaluateArgs),
    /// Run the linearized closed loop of an AL-SSNN model.
    Closedloop(ClosedLoopArgs),
    /// Compute and check the ISS certificate of an AL-SSNN model.
    Certify(CertifyArgs),
    /// Execute a JSON run file.
    Run(RunArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Generator {
    PreyPredator,
    WhSynthetic,
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long, value_enum)]
    generator: Option<Generator>,
    /// Full generator description in JSON, as in a run file.
    #[arg(long, conflicts_with = "generator")]
    spec: Option<PathBuf>,
    #[arg(short, long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct DataArgs {
    /// CSV with header `t,u1..um,y1..yp`.
    #[arg(short, long)]
    data: PathBuf,
}

#[derive(Args)]
struct IdentifyArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, value_enum)]
    family: Family,
    #[arg(long)]
    order: usize,
    /// Comma-separated penalty weights; more than one runs a sweep.
    #[arg(long, value_delimiter = ',')]
    gamma: Vec<f64>,
    #[arg(long, default_value_t = 0.5)]
    train_fraction: f64,
    /// Standardize signals with training-split statistics.
    #[arg(long)]
    normalize: bool,
    /// Training configuration in JSON; flags below override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    n_h: Option<usize>,
    #[arg(long)]
    n_g: Option<usize>,
    /// Hidden width of `f_n` for gr-ssnn.
    #[arg(long, default_value_t = 10)]
    n_f: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<usize>,
    /// Reject optimizer steps that push the spectral radius of A above this value.
    #[arg(long)]
    max_rho: Option<f64>,
    /// Train C together with the other parameters.
    #[arg(long)]
    train_c: bool,
    /// Output directory.
    #[arg(short, long)]
    out: PathBuf,
    /// File stem; defaults to the family name.
    #[arg(long)]
    name: Option<String>,
    /// Print every optimizer iteration to stderr.
    #[arg(short, long)]
    verbose: bool,
}

#[derive(Args)]
struct ModelDataArgs {
    #[arg(short, long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    io: ModelDataArgs,
    /// Initial state, comma-separated; zero by default.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    x0: Option<Vec<f64>>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
    /// Write `t,u..,y..,yhat..` in data units.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ClosedLoopArgs {
    #[command(flatten)]
    io: ModelDataArgs,
    /// Write `k,x..,omega..,linear_norm,omega_norm`.
    #[arg(long)]
    trajectory: Option<PathBuf>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CertifyArgs {
    #[command(flatten)]
    io: ModelDataArgs,
    /// Use this disturbance bound instead of the data estimate.
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long, default_value_t = 5000)]
    steps: usize,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    run: PathBuf,
    /// Overrides `out_dir` of the run file.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match init_threads().and_then(|()| dispatch(cli.command)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn init_threads() -> AppResult<()> {
    let Ok(v) = std::env::var("ALSSNN_THREADS") else { return Ok(()) };
    let n: usize = v
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| AppError::Usage(format!("ALSSNN_THREADS must be a positive integer, got `{v}`")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| AppError::Usage(format!("thread pool: {e}")))
}

fn dispatch(cmd: Command) -> AppResult<()> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Identify(a) => identify(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Closedloop(a) => closedloop(a),
        Command::Certify(a) => certify(a),
        Command::Run(a) => run(a),
    }
}

fn gen_data(a: GenDataArgs) -> AppResult<()> {
    let spec = match (a.generator, &a.spec) {
        (_, Some(p)) => jsonio::read::<GeneratorSpec>(p)?,
        (Some(Generator::PreyPredator), None) => GeneratorSpec::prey_predator(),
        (Some(Generator::WhSynthetic), None) => GeneratorSpec::wh_synthetic(),
        (None, None) => return Err(AppError::Usage("give --generator or --spec".into())),
    };
    let ds = write_generated(&spec, a.n, a.seed, &a.out)?;
    println!("wrote {} samples to {}", ds.len(), a.out.display());
    Ok(())
}

fn train_config(a: &IdentifyArgs) -> AppResult<TrainConfig> {
    let mut c = match &a.config {
        Some(p) => jsonio::read::<TrainConfig>(p)?,
        None => TrainConfig::default(),
    };
    if let Some(v) = a.max_iters {
        c.max_iters = v;
    }
    if let Some(v) = a.n_h {
        c.n_h = v;
    }
    if let Some(v) = a.n_g {
        c.n_g = v;
    }
    if let Some(v) = a.seed {
        c.seed = v;
    }
    if a.horizon.is_some() {
        c.horizon = a.horizon;
    }
    if a.max_rho.is_some() {
        c.max_spectral_radius = a.max_rho;
    }
    if a.train_c {
        c.freeze_c = false;
    }
    Ok(c)
}

fn print_iteration(r: &IterationRecord) {
    eprintln!(
        "iter {:4}  loss {:.6e}  lambda {:.1e}  {}",
        r.iter,
        r.loss,
        r.lambda,
        if r.accepted { "accepted" } else { "rejected" }
    );
}

fn identify(a: IdentifyArgs) -> AppResult<()> {
    let ds = load_csv(&a.data.data)?;
    let split = Split::new(&ds, a.train_fraction, a.normalize)?;
    let base = train_config(&a)?;
    let gammas = if a.gamma.is_empty() { vec![base.gamma] } else { a.gamma.clone() };
    let name = a.name.clone().unwrap_or_else(|| a.family.tag().to_string());
    let sweep = gammas.len() > 1;
    let data_label = a.data.data.display().to_string();
    let mut rows = Vec::new();
    for g in gammas {
        let stem = if sweep { format!("{name}_g{g}") } else { name.clone() };
        let opts =
            IdentifyOptions { family: a.family, order: a.order, n_f: a.n_f, config: TrainConfig { gamma: g, ..base.clone() } };
        let id = if a.verbose {
            analysis::identify(&split, &opts, &mut print_iteration)?
        } else {
            analysis::identify(&split, &opts, &mut ())?
        };
        let metrics = analysis::evaluate(&id.model, &split, None)?;
        ModelFile::new(&id.model, split.scaling.as_ref(), a.train_fraction).save(a.out.join(format!("{stem}.model.json")))?;
        rows.push(SweepRow::new(&stem, id.training.as_ref(), &metrics));
        let rep = IdentifyReport {
            format: report::IDENTIFY_FORMAT.into(),
            name: stem.clone(),
            data: data_label.clone(),
            train_fraction: a.train_fraction,
            normalize: a.normalize,
            scaling: split.scaling.as_ref().map(ScalingFile::from_core),
            samples_train: split.train.len(),
            samples_test: split.test.len(),
            options: opts,
            lti: id.lti,
            training: id.training,
            metrics,
        };
        let text = rep.text();
        report::write_pair(&a.out, &format!("{stem}.identify"), &rep, &text)?;
        if !sweep {
            print!("{text}");
        }
    }
    if sweep {
        let text = report::sweep_text(&rows);
        report::write_pair(&a.out, &format!("{name}.sweep"), &rows, &text)?;
        print!("{text}");
    }
    Ok(())
}

fn load_model_split(io: &ModelDataArgs) -> AppResult<(Model, Split, ModelFile)> {
    let file = ModelFile::load(&io.model)?;
    let model = file.model()?;
    let ds = load_csv(&io.data.data)?;
    let split = Split::with_scaling(&ds, file.train_fraction, file.scaling())?;
    Ok((model, split, file))
}

fn stem_of(path: &Path) -> String {
    let s = path.file_stem().map_or_else(|| "model".into(), |s| s.to_string_lossy().into_owned());
    s.strip_suffix(".model").map_or(s.clone(), str::to_string)
}

fn evaluate(a: EvaluateArgs) -> AppResult<()> {
    let (model, split, file) = load_model_split(&a.io)?;
    let x0 = a.x0.map(Vector::from_vec);
    let metrics = analysis::evaluate(&model, &split, x0.as_ref())?;
    let name = stem_of(&a.io.model);
    let rep = EvalReport {
        format: report::EVAL_FORMAT.into(),
        name: name.clone(),
        family: model.family().to_string(),
        data: a.io.data.data.display().to_string(),
        samples_train: split.train.len(),
        samples_test: split.test.len(),
        metrics,
    };
    if let Some(dir) = &a.out {
        report::write_pair(dir, &format!("{name}.eval"), &rep, &rep.text())?;
    }
    match a.format {
        Format::Text => print!("{}", rep.text()),
        Format::Json => println!("{}", serde_json::to_string_pretty(&rep).expect("report serializes")),
        Format::Csv => print!("{}", rep.csv()),
    }
    if let Some(path) = &a.trajectory {
        let full = split.full()?;
        let zero = Vector::zeros(model.state_dim());
        let run = alssnn_core::simulate(&model, full.inputs(), x0.as_ref().unwrap_or(&zero))?;
        let raw = load_csv(&a.io.data.data)?;
        let yhat = match file.scaling() {
            Some(s) => s.restore_outputs(&run.y)?,
            None => run.y,
        };
        write_columns(path, &trajectory_header(raw.input_dim(), raw.output_dim()), raw.len(), |k| {
            let mut row = vec![k as f64 * raw.dt()];
            row.extend(raw.inputs().column(k).iter());
            row.extend(raw.outputs().column(k).iter());
            row.extend(yhat.column(k).iter());
            row
        })?;
    }
    Ok(())
}

fn trajectory_header(m: usize, p: usize) -> Vec<String> {
    let mut h = vec!["t".to_string()];
    h.extend((1..=m).map(|i| format!("u{i}")));
    h.extend((1..=p).map(|i| format!("y{i}")));
    h.extend((1..=p).map(|i| format!("yhat{i}")));
    h
}

fn write_columns(path: &Path, header: &[String], rows: usize, row: impl Fn(usize) -> Vec<f64>) -> AppResult<()> {
    let mut text = header.join(",");
    text.push('\n');
    for k in 0..rows {
        let cells: Vec<String> = row(k).into_iter().map(fmt_f64).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    jsonio::write_text(path, &text)
}

fn closedloop(a: ClosedLoopArgs) -> AppResult<()> {
    let (model, split, _) = load_model_split(&a.io)?;
    let al = analysis::require_al(&model)?;
    let (rec, summary) = analysis::closed_loop(al, &split)?;
    let name = stem_of(&a.io.model);
    let rep = ClosedLoopReport {
        format: report::CLOSED_LOOP_FORMAT.into(),
        name: name.clone(),
        data: a.io.data.data.display().to_string(),
        summary,
    };
    if let Some(dir) = &a.out {
        report::write_pair(dir, &format!("{name}.closedloop"), &rep, &rep.text())?;
    }
    print!("{}", rep.text());
    if let Some(path) = &a.trajectory {
        let n = al.n();
        let mut header = vec!["k".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=n).map(|i| format!("omega{i}")));
        header.extend(["linear_norm".to_string(), "omega_norm".to_string()]);
        let x: &Mat = &rec.trajectory.x;
        write_columns(path, &header, rec.len(), |k| {
            let mut row = vec![k as f64];
            row.extend(x.column(k).iter());
            row.extend(rec.omega.column(k).iter());
            row.extend([rec.linear_norm[k], rec.omega_norm[k]]);
            row
        })?;
    }
    Ok(())
}

fn certify(a: CertifyArgs) -> AppResult<()> {
    let (model, split, _) = load_model_split(&a.io)?;
    let al = analysis::require_al(&model)?;
    let opts = CertifyOptions { epsilon: a.epsilon, steps: a.steps, ..CertifyOptions::default() };
    let out = analysis::certify(al, &split, &opts)?;
    let name = stem_of(&a.io.model);
    let rep = pipeline::certify_report(&name, &a.io.data.data.display().to_string(), al, &out);
    if let Some(dir) = &a.out {
        report::write_pair(dir, &format!("{name}.certify"), &rep, &rep.text())?;
    }
    print!("{}", rep.text());
    Ok(())
}

fn run(a: RunArgs) -> AppResult<()> {
    let file = RunFile::load(&a.run)?;
    let base = a.run.parent().map_or_else(PathBuf::new, Path::to_path_buf);
    let out = match (&a.out, &file.out_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => base.join(o),
        (None, None) => return Err(AppError::Usage("no output directory: set out_dir or pass --out".into())),
    };
    let summary = pipeline::execute(&file, &base, &out)?;
    print!("{}", summary.text());
    Ok(())
}
