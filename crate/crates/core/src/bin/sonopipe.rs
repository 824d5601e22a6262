use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::Ordering;

use clap::{Args, Parser, Subcommand};

use sonopipe::pipeline::{
    run_eval, run_synth_gen, run_train, ConfigError, Pipeline, PipelineConfig, PipelineError, SourceConfig,
};
use sonopipe::templates::GestureLabel;

#[derive(Parser)]
#[command(
    name = "sonopipe",
    version,
    about = "Ultrasound gesture pipeline: train, evaluate, run and generate data"
)]
struct Cli {
    /// JSON config file; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build templates and fit the classifier.
    Train(Overrides),
    /// Cross-validate on a dataset, with and without rest.
    Eval(Overrides),
    /// Classify frames live and stream poses.
    Run(Overrides),
    /// Write a synthetic dataset.
    SynthGen {
        #[command(flatten)]
        overrides: Overrides,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Default)]
struct Overrides {
    /// synthetic, synthetic:rest=50,power_grip=50, dir:<path> or tcp:<addr>
    #[arg(long)]
    source: Option<String>,
    /// Frames per second for synthetic and directory sources; 0 is unpaced.
    #[arg(long)]
    rate: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    folds: Option<usize>,
    /// Seed for fold assignment and the synthetic generator.
    #[arg(long)]
    seed: Option<u64>,
    /// Debounce window; 1 publishes raw predictions.
    #[arg(long)]
    debounce: Option<usize>,
    #[arg(long)]
    tcp_port: Option<u16>,
    #[arg(long)]
    ws_port: Option<u16>,
    #[arg(long)]
    command_port: Option<u16>,
    /// Accept set_gesture commands on the command port.
    #[arg(long)]
    allow_commands: bool,
    #[arg(long)]
    metrics_out: Option<PathBuf>,
    /// Dataset manifest or directory for train and eval.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long)]
    template_dir: Option<PathBuf>,
    #[arg(long)]
    model: Option<PathBuf>,
    /// Directory for evaluation reports.
    #[arg(long)]
    eval_out: Option<PathBuf>,
    /// Pipeline frame size (square).
    #[arg(long)]
    size: Option<usize>,
    /// Synthetic frame size (square).
    #[arg(long)]
    synth_size: Option<usize>,
    /// Synthetic additive noise level.
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    max_frames: Option<u64>,
}

impl Overrides {
    fn apply(self, c: &mut PipelineConfig) -> Result<(), ConfigError> {
        if let Some(s) = self.source {
            c.source = s.parse()?;
        }
        if let Some(r) = self.rate {
            match &mut c.source {
                SourceConfig::Synthetic { rate_hz, .. } | SourceConfig::Directory { rate_hz, .. } => *rate_hz = r,
                SourceConfig::Tcp { .. } => {
                    return Err(ConfigError::Invalid("--rate does not apply to tcp sources".into()))
                }
            }
        }
        if let Some(v) = self.k {
            c.k = v;
        }
        if let Some(v) = self.folds {
            c.folds = v;
        }
        if let Some(v) = self.seed {
            c.seed = v;
            c.synth.seed = v;
        }
        if let Some(v) = self.debounce {
            c.debounce = v;
        }
        if let Some(v) = self.tcp_port {
            c.tcp_port = Some(v);
        }
        if let Some(v) = self.ws_port {
            c.ws_port = Some(v);
        }
        if let Some(v) = self.command_port {
            c.command_port = v;
        }
        c.allow_commands |= self.allow_commands;
        if self.metrics_out.is_some() {
            c.metrics_out = self.metrics_out;
        }
        if self.dataset.is_some() {
            c.dataset = self.dataset;
        }
        if let Some(v) = self.template_dir {
            c.template_dir = v;
        }
        if let Some(v) = self.model {
            c.model_path = v;
        }
        if self.eval_out.is_some() {
            c.eval_out = self.eval_out;
        }
        if let Some(v) = self.size {
            c.width = v;
            c.height = v;
        }
        if let Some(v) = self.synth_size {
            c.synth.width = v;
            c.synth.height = v;
        }
        if let Some(v) = self.sigma {
            c.synth.noise_sigma = v;
        }
        if let Some(v) = self.per_class {
            c.per_class = v;
        }
        if self.max_frames.is_some() {
            c.max_frames = self.max_frames;
        }
        c.validate()
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut config = match &cli.config {
        Some(path) => match PipelineConfig::load(path) {
            Ok(c) => c,
            Err(e) => return fail(&PipelineError::Config(e)),
        },
        None => PipelineConfig::default(),
    };
    let (command, overrides, out) = match cli.command {
        Command::Train(o) => ("train", o, None),
        Command::Eval(o) => ("eval", o, None),
        Command::Run(o) => ("run", o, None),
        Command::SynthGen { overrides, out } => ("synth-gen", overrides, Some(out)),
    };
    if let Err(e) = overrides.apply(&mut config) {
        return fail(&PipelineError::Config(e));
    }
    let result = match command {
        "train" => train(&config),
        "eval" => eval(&config),
        "run" => run(config),
        _ => synth_gen(&config, out.expect("synth-gen has --out")),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(e: &PipelineError) -> ExitCode {
    eprintln!("sonopipe: {e}");
    ExitCode::from(e.exit_code() as u8)
}

fn train(config: &PipelineConfig) -> Result<(), PipelineError> {
    let outcome = run_train(config)?;
    for label in GestureLabel::ALL {
        println!("{:<16} {} samples", label.name(), outcome.class_counts[label.ordinal()]);
    }
    println!("templates -> {}", config.template_dir.display());
    println!("model     -> {} (k={})", config.model_path.display(), outcome.model.k());
    Ok(())
}

fn eval(config: &PipelineConfig) -> Result<(), PipelineError> {
    let outcome = run_eval(config)?;
    let r = &outcome.report;
    if !outcome.stored_templates {
        println!(
            "no template store at {}; built templates from the evaluation data",
            config.template_dir.display()
        );
    }
    println!(
        "accuracy (all gestures):   {:.4}  [{} folds, k={}, seed {}]",
        r.full.accuracy, r.full.folds, r.full.k, r.full.seed
    );
    println!("accuracy (rest excluded):  {:.4}", r.rest_excluded.accuracy);
    print!("{}", r.full.confusion.to_csv());
    if let Some(dir) = &outcome.out_dir {
        println!("reports   -> {}", dir.display());
    }
    Ok(())
}

fn run(config: PipelineConfig) -> Result<(), PipelineError> {
    let metrics_out = config.metrics_out.clone();
    let pipeline = Pipeline::new(config)?;
    let stop = pipeline.stop_flag();
    if let Err(e) = ctrlc::set_handler(move || stop.store(true, Ordering::Release)) {
        eprintln!("sonopipe: cannot install interrupt handler: {e}");
    }
    let server = pipeline.server();
    if let Some(a) = server.tcp_addr() {
        eprintln!("ndjson     tcp://{a}");
    }
    if let Some(a) = server.ws_addr() {
        eprintln!("websocket  ws://{a}");
    }
    if let Some(a) = pipeline.command_addr() {
        eprintln!("commands   ws://{a}");
    }
    if let Some(a) = pipeline.source_addr() {
        eprintln!("frames in  tcp://{a}");
    }
    eprintln!("source     {}", pipeline.config().source);
    let metrics = pipeline.run()?;
    eprint!("{}", metrics.summary());
    if let Some(p) = metrics_out {
        eprintln!("metrics   -> {}", p.display());
    }
    Ok(())
}

fn synth_gen(config: &PipelineConfig, out: PathBuf) -> Result<(), PipelineError> {
    let manifest = run_synth_gen(config, &out)?;
    println!("{} frames -> {}", manifest.entries.len(), out.display());
    Ok(())
}
