use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use handpilot::command_fsm::{CommandFsm, CommandTable};
use handpilot::drone_sim::{write_record, RunMetrics, Track};
use handpilot::gesture_net::{
    evaluate, generate_dataset_with, load_dataset, save_dataset, save_model, train, FeatureVector, GeneratorConfig,
    GestureDataset, GestureLabel, Split, TrainConfig,
};
use handpilot::handpose::{estimate_pose, DepthCalibration};
use handpilot::session::{
    fly_with_hand, load_classifier, load_command_table, load_track, read_replay, record_header, record_stream,
    replay_session_with, EndReason, OperatorConfig, Pipeline, PipelineConfig, SessionReport,
};
use serde::{Deserialize, Serialize};

use crate::config::{apply_overrides, load_config};
use crate::serve::serve;

pub const DEFAULT_MODEL: &str = "handpilot-model.bin";
pub const LOG_ENV: &str = "HANDPILOT_LOG";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    pub fn runtime(e: impl std::fmt::Display) -> Self {
        CliError::Runtime(e.to_string())
    }
}

type CliResult = Result<(), CliError>;

#[derive(Debug, Parser)]
#[command(name = "handpilot", version, about = "Fly a simulated racing drone with hand gestures")]
pub struct Cli {
    /// TOML file; keys in its [<subcommand>] table override command-line
    /// flags.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run live sessions over a websocket at /ws.
    Serve(ServeArgs),
    /// Run a recorded landmark log through the pipeline and score it.
    Replay(ReplayArgs),
    /// Train the gesture network.
    Train(TrainArgs),
    /// Accuracy and confusion matrix of a trained model.
    Eval(EvalArgs),
    /// Write the procedural gesture corpus.
    GenData(GenDataArgs),
    /// Hand pose of a single landmark frame.
    Pose(PoseArgs),
    /// Fly a track with a synthetic hand and record the landmark log.
    Fly(FlyArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Serve(_) => "serve",
            Command::Replay(_) => "replay",
            Command::Train(_) => "train",
            Command::Eval(_) => "eval",
            Command::GenData(_) => "gen-data",
            Command::Pose(_) => "pose",
            Command::Fly(_) => "fly",
        }
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PipelineArgs {
    /// Gesture model file.
    #[arg(long, default_value = DEFAULT_MODEL)]
    pub model: PathBuf,
    /// Track file; the built-in track when omitted.
    #[arg(long)]
    pub track: Option<PathBuf>,
    /// Gesture-to-command table; the built-in table when omitted.
    #[arg(long)]
    pub commands: Option<PathBuf>,
    /// Hand depth (m) that reads as full throttle.
    #[arg(long, default_value_t = 0.3)]
    pub d_near: f64,
    /// Hand depth (m) that reads as zero throttle.
    #[arg(long, default_value_t = 0.8)]
    pub d_far: f64,
}

impl PipelineArgs {
    fn calibration(&self) -> Result<DepthCalibration, CliError> {
        let c = DepthCalibration {
            d_near: self.d_near,
            d_far: self.d_far,
        };
        c.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(c)
    }
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ServeArgs {
    #[arg(long, default_value = "127.0.0.1:8765")]
    pub addr: String,
    #[command(flatten)]
    #[serde(flatten)]
    pub pipeline: PipelineArgs,
    /// Write each session's run record here.
    #[arg(long)]
    pub record: Option<PathBuf>,
    /// Append each session's incoming frames to this replay log.
    #[arg(long)]
    pub record_frames: Option<PathBuf>,
    /// Exit after the first session ends.
    #[arg(long)]
    pub once: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct ReplayArgs {
    /// Landmark log, one message per line.
    #[arg(long)]
    pub log: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub pipeline: PipelineArgs,
    /// Write the run record here.
    #[arg(long)]
    pub record: Option<PathBuf>,
    /// Write every telemetry message here.
    #[arg(long)]
    pub telemetry: Option<PathBuf>,
    /// Pace ticks to the wall clock.
    #[arg(long)]
    pub realtime: bool,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct TrainArgs {
    /// Dataset file; the procedural corpus when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value = DEFAULT_MODEL)]
    pub out: PathBuf,
    /// Weight initialization and shuffling seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Seed of the procedural corpus when --data is omitted.
    #[arg(long, default_value_t = 42)]
    pub corpus_seed: u64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    /// Hidden layer widths, comma separated.
    #[arg(long, default_value = "168,546")]
    pub hidden: String,
    #[arg(long, default_value_t = 1e-3)]
    pub learning_rate: f64,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0.9)]
    pub momentum: f64,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct EvalArgs {
    #[arg(long, default_value = DEFAULT_MODEL)]
    pub model: PathBuf,
    /// Dataset file; the procedural corpus when omitted.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    pub corpus_seed: u64,
    /// train, test or all
    #[arg(long, default_value = "test")]
    pub split: String,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct GenDataArgs {
    #[arg(long, default_value = "gestures.csv")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 42)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub per_class: usize,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct PoseArgs {
    /// File holding landmark messages, or - for stdin.
    #[arg(long)]
    pub frame: PathBuf,
    /// Which message of the file to use, counting from 1.
    #[arg(long, default_value_t = 1)]
    pub index: usize,
    #[arg(long, default_value_t = 0.3)]
    pub d_near: f64,
    #[arg(long, default_value_t = 0.8)]
    pub d_far: f64,
    /// Report the raw camera-frame orientation instead of the vehicle
    /// attitude it commands.
    #[arg(long)]
    pub absolute: bool,
    /// Also classify the gesture with this model.
    #[arg(long)]
    pub model: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize, Deserialize)]
pub struct FlyArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub pipeline: PipelineArgs,
    /// Landmark log to write.
    #[arg(long, default_value = "flight.jsonl")]
    pub out: PathBuf,
    /// Stop the stream after this many seconds.
    #[arg(long, default_value_t = 300.0)]
    pub max_time: f64,
}

/// Parses `argv`, runs the command and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    init_logging();
    match dispatch(cli) {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\nFor more information, try '--help'.");
            1
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            2
        }
    }
}

fn init_logging() {
    let filter = tracing_subscriber::EnvFilter::try_from_env(LOG_ENV)
        .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn"));
    let _ = tracing_subscriber::fmt()
        .with_env_filter(filter)
        .with_writer(std::io::stderr)
        .try_init();
}

fn dispatch(cli: Cli) -> CliResult {
    let overrides = match &cli.config {
        Some(path) => load_config(path)?.remove(cli.command.name()),
        None => None,
    };
    let o = overrides.as_ref();
    match cli.command {
        Command::Serve(a) => serve(apply_overrides(a, o)?),
        Command::Replay(a) => replay(apply_overrides(a, o)?),
        Command::Train(a) => train_cmd(apply_overrides(a, o)?),
        Command::Eval(a) => eval(apply_overrides(a, o)?),
        Command::GenData(a) => gen_data(apply_overrides(a, o)?),
        Command::Pose(a) => pose(apply_overrides(a, o)?),
        Command::Fly(a) => fly(apply_overrides(a, o)?),
    }
}

pub struct Loaded {
    pub classifier: handpilot::gesture_net::GestureClassifier,
    pub track: Track,
    pub table: CommandTable,
    pub cfg: PipelineConfig,
}

pub fn load_pipeline(a: &PipelineArgs) -> Result<Loaded, CliError> {
    let calibration = a.calibration()?;
    Ok(Loaded {
        classifier: load_classifier(&a.model).map_err(CliError::runtime)?,
        track: load_track(a.track.as_deref()).map_err(CliError::runtime)?,
        table: load_command_table(a.commands.as_deref()).map_err(CliError::runtime)?,
        cfg: PipelineConfig {
            calibration,
            ..PipelineConfig::default()
        },
    })
}

pub fn write_run_record(path: &Path, report: &SessionReport, l: &Loaded) -> CliResult {
    let header = record_header(&l.track, &l.classifier, &l.table, &l.cfg);
    let f = BufWriter::new(File::create(path).map_err(CliError::runtime)?);
    write_record(&report.record, &header, f).map_err(CliError::runtime)
}

fn end_name(e: EndReason) -> &'static str {
    match e {
        EndReason::TrackComplete => "track_complete",
        EndReason::Landed => "landed",
        EndReason::IngestClosed => "ingest_closed",
    }
}

pub fn print_metrics(m: &RunMetrics, total_gates: usize, report: &SessionReport) {
    println!("finished      {}", m.finished);
    println!("gates         {}/{}", m.gates_passed, total_gates);
    println!("time_s        {}", m.completion_time);
    println!("length_m      {}", m.path_length);
    println!("velocity_mps  {}", m.average_velocity);
    println!("end           {}", end_name(report.end));
    println!("mode          {}", report.final_mode);
    println!("ticks         {}", report.ticks);
    println!("frames        {} used, {} dropped", report.frames_used, report.frames_dropped);
}

fn replay(a: ReplayArgs) -> CliResult {
    let l = load_pipeline(&a.pipeline)?;
    let file = File::open(&a.log).map_err(|e| CliError::Runtime(format!("{}: {e}", a.log.display())))?;
    let frames = read_replay(BufReader::new(file)).map_err(CliError::runtime)?;
    let mut telemetry = match &a.telemetry {
        Some(p) => Some(BufWriter::new(File::create(p).map_err(CliError::runtime)?)),
        None => None,
    };
    let mut io_err = None;
    let pipeline = Pipeline::new(l.classifier.clone(), CommandFsm::new(l.table.clone()), &l.track, l.cfg);
    let report = replay_session_with(&frames, pipeline, a.realtime, |t| {
        if let Some(w) = telemetry.as_mut() {
            if let Err(e) = writeln!(w, "{}", t.to_line()) {
                io_err.get_or_insert(e);
            }
        }
    })
    .map_err(CliError::runtime)?;
    if let Some(mut w) = telemetry {
        w.flush().map_err(CliError::runtime)?;
    }
    if let Some(e) = io_err {
        return Err(CliError::runtime(e));
    }
    if let Some(p) = &a.record {
        write_run_record(p, &report, &l)?;
    }
    print_metrics(&report.record.metrics, l.track.gates.len(), &report);
    Ok(())
}

fn parse_hidden(s: &str) -> Result<Vec<usize>, CliError> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',')
        .map(|w| w.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|e| CliError::Usage(format!("--hidden {s:?}: {e}")))
}

fn dataset(data: Option<&Path>, corpus_seed: u64) -> Result<GestureDataset, CliError> {
    match data {
        Some(p) => load_dataset(p).map_err(|e| CliError::Runtime(format!("{}: {e}", p.display()))),
        None => Ok(generate_dataset_with(corpus_seed, &GeneratorConfig::default())),
    }
}

fn train_cmd(a: TrainArgs) -> CliResult {
    let cfg = TrainConfig {
        hidden: parse_hidden(&a.hidden)?,
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.learning_rate,
        momentum: a.momentum,
        seed: a.seed,
        normalize: true,
    };
    let ds = dataset(a.data.as_deref(), a.corpus_seed)?;
    let start = Instant::now();
    let report = train(&ds, &cfg).map_err(|e| match e {
        handpilot::gesture_net::GestureError::BadConfig(m) => CliError::Usage(m),
        other => CliError::runtime(other),
    })?;
    for e in &report.epochs {
        tracing::info!(
            epoch = e.epoch,
            loss = e.train_loss,
            train_acc = e.train_accuracy,
            test_acc = e.test_accuracy,
            "epoch"
        );
    }
    save_model(&report.classifier.model, &a.out).map_err(|e| CliError::Runtime(format!("{}: {e}", a.out.display())))?;
    let last = report.epochs.last().expect("at least one epoch");
    println!("layers        {:?}", cfg.layer_sizes());
    println!("epochs        {}", cfg.epochs);
    println!("train_acc     {:.4}", last.train_accuracy);
    if let Some(acc) = last.test_accuracy {
        println!("test_acc      {acc:.4}");
    }
    println!("seconds       {:.1}", start.elapsed().as_secs_f64());
    println!("model         {}", a.out.display());
    Ok(())
}

fn eval(a: EvalArgs) -> CliResult {
    let split = match a.split.as_str() {
        "train" => Some(Split::Train),
        "test" => Some(Split::Test),
        "all" => None,
        other => return Err(CliError::Usage(format!("--split must be train, test or all, not {other:?}"))),
    };
    let classifier = load_classifier(&a.model).map_err(CliError::runtime)?;
    let ds = dataset(a.data.as_deref(), a.corpus_seed)?;
    let samples: Vec<_> = match split {
        Some(s) => ds.split(s).collect(),
        None => ds.samples.iter().collect(),
    };
    let ev = evaluate(&classifier, samples).map_err(CliError::runtime)?;
    println!("samples       {}", ev.count);
    println!("accuracy      {:.4}", ev.accuracy);
    println!("mean_loss     {:.6}", ev.mean_loss);
    println!("diagonal      {}", if ev.diagonal_dominant() { "dominant" } else { "not dominant" });
    print!("{:>10}", "");
    for g in GestureLabel::ALL {
        print!("{:>10}", g.name());
    }
    println!();
    for (i, row) in ev.confusion.iter().enumerate() {
        print!("{:>10}", GestureLabel::ALL[i].name());
        for v in row {
            print!("{v:>10}");
        }
        println!();
    }
    Ok(())
}

fn gen_data(a: GenDataArgs) -> CliResult {
    if a.per_class < 5 {
        return Err(CliError::Usage("--per-class must be at least 5".into()));
    }
    let cfg = GeneratorConfig {
        per_class: a.per_class,
        ..GeneratorConfig::default()
    };
    let ds = generate_dataset_with(a.seed, &cfg);
    save_dataset(&ds, &a.out).map_err(|e| CliError::Runtime(format!("{}: {e}", a.out.display())))?;
    println!("wrote {} samples to {}", ds.samples.len(), a.out.display());
    Ok(())
}

fn pose(a: PoseArgs) -> CliResult {
    let calib = DepthCalibration {
        d_near: a.d_near,
        d_far: a.d_far,
    };
    calib.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    if a.index == 0 {
        return Err(CliError::Usage("--index counts from 1".into()));
    }
    let mut text = String::new();
    if a.frame.as_os_str() == "-" {
        std::io::stdin().read_to_string(&mut text).map_err(CliError::runtime)?;
    } else {
        text = std::fs::read_to_string(&a.frame).map_err(|e| CliError::Runtime(format!("{}: {e}", a.frame.display())))?;
    }
    let frames = read_replay(text.as_bytes()).map_err(CliError::runtime)?;
    let msg = frames
        .get(a.index - 1)
        .ok_or_else(|| CliError::Runtime(format!("only {} frames in input", frames.len())))?;
    let frame = msg.to_frame().map_err(CliError::runtime)?;
    let mut pose = estimate_pose(&frame, &calib).map_err(CliError::runtime)?;
    if !a.absolute {
        pose = pose
            .in_control_frame(&PipelineConfig::default().control_frame)
            .map_err(CliError::runtime)?;
    }
    let q = pose.quaternion;
    let e = pose.euler;
    let mut out = serde_json::json!({
        "t": msg.t,
        "frame": if a.absolute { "camera" } else { "vehicle" },
        "quaternion": [q.w, q.x, q.y, q.z],
        "roll": e.roll,
        "pitch": e.pitch,
        "yaw": e.yaw,
        "throttle": pose.throttle,
    });
    if let Some(m) = &a.model {
        let c = load_classifier(m).map_err(CliError::runtime)?;
        let (g, conf) = c
            .classify(&FeatureVector::from_frame(&frame.canonical()))
            .map_err(CliError::runtime)?;
        out["gesture"] = serde_json::json!(g.name());
        out["confidence"] = serde_json::json!(conf);
    }
    println!("{}", serde_json::to_string_pretty(&out).expect("json"));
    Ok(())
}

fn fly(a: FlyArgs) -> CliResult {
    let l = load_pipeline(&a.pipeline)?;
    if !(a.max_time > 0.0) {
        return Err(CliError::Usage("--max-time must be positive".into()));
    }
    let flight = fly_with_hand(l.classifier.clone(), &l.track, l.cfg, OperatorConfig::default(), a.max_time)
        .map_err(CliError::runtime)?;
    let n = record_stream(flight.frames.iter().cloned(), &a.out)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", a.out.display())))?;
    println!("wrote {n} frames to {}", a.out.display());
    print_metrics(&flight.report.record.metrics, l.track.gates.len(), &flight.report);
    Ok(())
}

