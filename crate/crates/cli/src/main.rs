//! `mocap`: synthetic corpora, pipeline runs, stage-isolated runs and evaluation.

use std::fs::{self, File};
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use mocap_core::eval::{combine, evaluate};
use mocap_core::formats::{
    read_jsonl, read_keypoints, read_poses, write_jsonl, FormatError, KeypointRecord, PoseRecord, RunStreams,
};
use mocap_core::synth::{corpus, generate_motion, render_views, GestureLabel, DEFAULT_BASE_SEED, DEFAULT_PER_KIND};
use mocap_core::{
    animate_poses, recognize_poses, AudioEmotionEvent, ConfigError, FrameOutput, GestureEvent, KeypointFrame2D,
    PipelineError, RenderConfig, ScenarioKind, Session, SessionConfig, SessionSetup, SkeletonPose,
};

#[derive(Debug, Parser)]
#[command(name = "mocap", version, about = "Stereo motion capture to avatar response pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Session config (JSON); omitted fields and paths use the bundled defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Base seed; overrides the config seed. Only `synth` draws random numbers.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct StereoInput {
    /// Left camera keypoint stream (JSONL).
    #[arg(long)]
    left: PathBuf,
    /// Right camera keypoint stream (JSONL).
    #[arg(long)]
    right: PathBuf,
    /// Frames handed to the session per call; 0 processes the whole stream at once.
    #[arg(long, default_value_t = 0)]
    chunk_size: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled synthetic corpus.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_PER_KIND)]
        per_kind: usize,
        /// Scenario kinds to generate (comma separated); default is all.
        #[arg(long, value_delimiter = ',', value_parser = parse_kind)]
        kinds: Vec<ScenarioKind>,
        /// Pixel noise standard deviation.
        #[arg(long, default_value_t = 0.0)]
        noise: f64,
        /// Per-observation drop probability.
        #[arg(long, default_value_t = 0.0)]
        dropout: f64,
        #[command(flatten)]
        common: Common,
    },
    /// Run the full pipeline on a stereo keypoint pair.
    Run {
        #[command(flatten)]
        input: StereoInput,
        /// Audio emotion events (JSONL).
        #[arg(long)]
        audio: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Triangulate, fit and track; writes poses only.
    Track {
        #[command(flatten)]
        input: StereoInput,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Recognize gestures in a tracked pose stream.
    Recognize {
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Drive the avatar from a pose stream and optional events and audio.
    Retarget {
        #[arg(long)]
        poses: PathBuf,
        #[arg(long)]
        events: Option<PathBuf>,
        #[arg(long)]
        audio: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Score predictions against labels, or run and score a whole corpus.
    Eval {
        /// Corpus directory written by `synth`; runs the pipeline on every sequence and reports throughput.
        #[arg(long, conflicts_with_all = ["events", "labels"])]
        corpus: Option<PathBuf>,
        #[arg(long, requires = "labels")]
        events: Option<PathBuf>,
        #[arg(long, requires = "events")]
        labels: Option<PathBuf>,
        #[arg(long, requires = "truth")]
        poses: Option<PathBuf>,
        #[arg(long, requires = "poses")]
        truth: Option<PathBuf>,
        /// Directory for report.json; the report is always printed.
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Data(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Self::Config(_) => 2,
            Self::Data(_) => 3,
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Self::Config(e.to_string())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        match e {
            PipelineError::Config(_) | PipelineError::Response(_) => Self::Config(e.to_string()),
            _ => Self::Data(e.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn parse_kind(s: &str) -> std::result::Result<ScenarioKind, String> {
    ScenarioKind::ALL.into_iter().find(|k| k.name() == s).ok_or_else(|| {
        let names: Vec<_> = ScenarioKind::ALL.iter().map(|k| k.name()).collect();
        format!("unknown scenario kind {s:?}; expected one of {}", names.join(", "))
    })
}

fn load_config(common: &Common) -> Result<(SessionConfig, PathBuf, bool)> {
    match &common.config {
        Some(path) => {
            let (config, base) = SessionConfig::load(path)?;
            Ok((config, base, true))
        }
        None => Ok((SessionConfig::default(), PathBuf::from("."), false)),
    }
}

fn setup(common: &Common) -> Result<SessionSetup> {
    let (config, base, _) = load_config(common)?;
    Ok(config.resolve(&base)?)
}

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path).map(BufReader::new).map_err(|e| Failure::Data(format!("cannot read {}: {e}", path.display())))
}

fn data_err(path: &Path) -> impl Fn(FormatError) -> Failure + '_ {
    move |e| Failure::Data(format!("{}: {e}", path.display()))
}

fn load_keypoints(path: &Path) -> Result<Vec<KeypointFrame2D>> {
    read_keypoints(open(path)?).map_err(data_err(path))
}

fn load_poses(path: &Path) -> Result<Vec<SkeletonPose>> {
    read_poses(open(path)?).map_err(data_err(path))
}

fn load_records<T: DeserializeOwned>(path: Option<&Path>) -> Result<Vec<T>> {
    match path {
        Some(p) => read_jsonl(open(p)?).map_err(data_err(p)),
        None => Ok(Vec::new()),
    }
}

fn write_file(dir: &Path, name: &str, contents: &[u8]) -> Result<()> {
    let path = dir.join(name);
    fs::create_dir_all(dir)
        .and_then(|_| fs::write(&path, contents))
        .map_err(|e| Failure::Data(format!("cannot write {}: {e}", path.display())))
}

fn write_records<T: Serialize>(dir: &Path, name: &str, records: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    write_jsonl(&mut buf, records).map_err(|e| Failure::Data(e.to_string()))?;
    write_file(dir, name, &buf)
}

/// Streams both cameras through one session, merged by timestamp.
fn run_session(
    setup: SessionSetup,
    left: &[KeypointFrame2D],
    right: &[KeypointFrame2D],
    audio: &[AudioEmotionEvent],
    chunk_size: usize,
) -> Result<Vec<FrameOutput>> {
    let mut frames: Vec<KeypointFrame2D> = Vec::with_capacity(left.len() + right.len());
    let (mut i, mut j) = (0, 0);
    while i < left.len() || j < right.len() {
        if j == right.len() || (i < left.len() && left[i].t <= right[j].t) {
            frames.push(left[i].clone());
            i += 1;
        } else {
            frames.push(right[j].clone());
            j += 1;
        }
    }
    let mut session = Session::new(setup)?;
    session.push_audio(audio);
    let chunk = if chunk_size == 0 { frames.len().max(1) } else { chunk_size };
    let mut out = Vec::with_capacity(left.len());
    for part in frames.chunks(chunk) {
        out.extend(session.push(part)?);
    }
    out.extend(session.finish()?);
    Ok(out)
}

fn synth(out: &Path, per_kind: usize, kinds: &[ScenarioKind], noise: f64, dropout: f64, common: &Common) -> Result<()> {
    let (config, base, from_file) = load_config(common)?;
    let setup = config.resolve(&base)?;
    let seed = common.seed.unwrap_or(if from_file { config.seed } else { DEFAULT_BASE_SEED });
    let kinds = if kinds.is_empty() { &ScenarioKind::ALL[..] } else { kinds };
    let mut sequences = Vec::new();
    for spec in corpus(kinds, per_kind, seed) {
        let truth = generate_motion(&setup.topology, &spec).map_err(|e| Failure::Config(e.to_string()))?;
        let render = RenderConfig { noise_px: noise, dropout, seed: spec.seed };
        let (left, right) = render_views(&setup.rig, &truth, &render).map_err(|e| Failure::Config(e.to_string()))?;
        let index = sequences.len();
        let name = format!("{:04}_{}", index, spec.kind.name());
        let dir = out.join(&name);
        let keypoints = |frames: &[KeypointFrame2D]| -> Vec<_> { frames.iter().map(Into::into).collect() };
        write_records::<KeypointRecord>(&dir, "left.jsonl", &keypoints(&left))?;
        write_records::<KeypointRecord>(&dir, "right.jsonl", &keypoints(&right))?;
        let truth_records: Vec<PoseRecord> = truth.poses.iter().map(PoseRecord::from).collect();
        write_records(&dir, "truth.jsonl", &truth_records)?;
        write_records(&dir, "labels.jsonl", &truth.labels)?;
        sequences.push(json!({ "name": name, "spec": spec, "render": render }));
    }
    let manifest = json!({ "seed": seed, "per_kind": per_kind, "sequences": sequences });
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_file(out, "manifest.json", text.as_bytes())
}

fn eval_corpus(dir: &Path, common: &Common) -> Result<serde_json::Value> {
    let (config, base, _) = load_config(common)?;
    let template = config.resolve(&base)?;
    let mut names: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Failure::Data(format!("cannot read {}: {e}", dir.display())))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.join("left.jsonl").is_file())
        .collect();
    names.sort();
    let (mut reports, mut frames, mut seconds) = (Vec::new(), 0usize, 0.0);
    for seq in &names {
        let left = load_keypoints(&seq.join("left.jsonl"))?;
        let right = load_keypoints(&seq.join("right.jsonl"))?;
        let labels: Vec<GestureLabel> = load_records(Some(&seq.join("labels.jsonl")))?;
        let truth = load_poses(&seq.join("truth.jsonl"))?;
        let start = Instant::now();
        let outputs = run_session(template.clone(), &left, &right, &[], 0)?;
        seconds += start.elapsed().as_secs_f64();
        frames += outputs.len();
        let events: Vec<GestureEvent> = outputs.iter().flat_map(|o| o.events.iter().copied()).collect();
        let poses: Vec<SkeletonPose> = outputs.into_iter().map(|o| o.tracked).collect();
        let report =
            evaluate(&events, &labels, &poses, &truth).map_err(|e| Failure::Data(format!("{}: {e}", seq.display())))?;
        reports.push(report);
    }
    let mut report = combine(&reports);
    report.throughput_fps = (seconds > 0.0).then(|| frames as f64 / seconds);
    Ok(json!({
        "sequences": names.len(),
        "frames": frames,
        "realtime_factor": report.throughput_fps.map(|fps| fps / 30.0),
        "report": report,
    }))
}

fn eval_files(events: &Path, labels: &Path, poses: Option<&Path>, truth: Option<&Path>) -> Result<serde_json::Value> {
    let events: Vec<GestureEvent> = load_records(Some(events))?;
    let labels: Vec<GestureLabel> = load_records(Some(labels))?;
    let poses = poses.map(load_poses).transpose()?.unwrap_or_default();
    let truth = truth.map(load_poses).transpose()?.unwrap_or_default();
    let report = evaluate(&events, &labels, &poses, &truth).map_err(|e| Failure::Data(e.to_string()))?;
    Ok(json!({ "report": report }))
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Synth { out, per_kind, kinds, noise, dropout, common } => {
            synth(&out, per_kind, &kinds, noise, dropout, &common)
        }
        Command::Run { input, audio, out, common } => {
            let setup = setup(&common)?;
            let audio: Vec<AudioEmotionEvent> = load_records(audio.as_deref())?;
            let left = load_keypoints(&input.left)?;
            let right = load_keypoints(&input.right)?;
            let outputs = run_session(setup, &left, &right, &audio, input.chunk_size)?;
            let streams = RunStreams::from_outputs(&outputs);
            for (name, contents) in streams.files() {
                write_file(&out, name, contents.as_bytes())?;
            }
            Ok(())
        }
        Command::Track { input, out, common } => {
            let setup = setup(&common)?;
            let left = load_keypoints(&input.left)?;
            let right = load_keypoints(&input.right)?;
            let outputs = run_session(setup, &left, &right, &[], input.chunk_size)?;
            write_file(&out, "poses.jsonl", RunStreams::from_outputs(&outputs).poses.as_bytes())
        }
        Command::Recognize { poses, out, common } => {
            let (config, _, _) = load_config(&common)?;
            config.pipeline.validate().map_err(Failure::from)?;
            let poses = load_poses(&poses)?;
            write_records(&out, "events.jsonl", &recognize_poses(&poses, &config.pipeline.recognizer))
        }
        Command::Retarget { poses, events, audio, out, common } => {
            let setup = setup(&common)?;
            let poses = load_poses(&poses)?;
            let events: Vec<GestureEvent> = load_records(events.as_deref())?;
            let audio: Vec<AudioEmotionEvent> = load_records(audio.as_deref())?;
            let outputs = animate_poses(setup, &poses, &events, &audio)?;
            write_file(&out, "animation.jsonl", RunStreams::from_outputs(&outputs).animation.as_bytes())
        }
        Command::Eval { corpus, events, labels, poses, truth, out, common } => {
            let value = match (corpus, events, labels) {
                (Some(dir), _, _) => eval_corpus(&dir, &common)?,
                (None, Some(e), Some(l)) => eval_files(&e, &l, poses.as_deref(), truth.as_deref())?,
                _ => return Err(Failure::Config("eval needs --corpus or both --events and --labels".into())),
            };
            let text = serde_json::to_string_pretty(&value).expect("report serializes") + "\n";
            print!("{text}");
            match out {
                Some(dir) => write_file(&dir, "report.json", text.as_bytes()),
                None => Ok(()),
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            let (kind, message) = match &failure {
                Failure::Config(m) => ("config error", m),
                Failure::Data(m) => ("data error", m),
            };
            eprintln!("mocap: {kind}: {message}");
            ExitCode::from(failure.code())
        }
    }
}
