//! `semcam`: runs the semantic camera pipeline one file-based stage at a time.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use semcam::pipeline::{self, files, ClipRecord, PipelineConfig, Split, SurveyMode};
use semcam::shot::{find_preset, ShotParameters};

#[derive(Parser, Debug)]
#[command(name = "semcam", version, about = "Semantic aerial camera control pipeline")]
struct Cli {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory holding every stage's artifacts.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample clips around the presets in multiples of the perceptual units.
    GenDataset {
        /// Survey the clips are meant for; ws1 builds the unit-finding sweep.
        #[arg(long, default_value = "ws3")]
        mode: String,
        /// Number of clips (the sweep budget for ws1). Defaults to the configured size.
        #[arg(long)]
        count: Option<usize>,
        /// Units file. Pilot units for ws1, otherwise `<out>/units.json`.
        #[arg(long)]
        units: Option<PathBuf>,
    },
    /// Simulate crowd judgments for a clips file.
    Survey {
        mode: String,
        /// Defaults to `<out>/<mode>_clips.jsonl`.
        #[arg(long)]
        clips: Option<PathBuf>,
    },
    /// Turn judgments into perceptual units (ws1) or descriptor scores (ws2, ws3).
    Rate { mode: String },
    /// Cluster descriptors by score correlation.
    Cluster {
        /// Defaults to `<out>/ws2_scores.csv`.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Embed descriptors (and their mirrors) with MDS.
    Embed {
        /// Defaults to `<out>/ws3_scores.csv`.
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Fit the D2P and P2D models with cross-validated penalty.
    Train,
    /// Score both models on the held-out clips.
    Eval,
    /// Shot and trajectory for descriptor targets such as `calm=1.5`.
    Generate {
        targets: Vec<String>,
        /// Write expression sweeps over every axis instead.
        #[arg(long)]
        sweeps: bool,
        /// Defaults to `<out>/d2p.json`.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Simulate a shot against the actor path.
    Simulate {
        /// Preset name from the catalog.
        #[arg(long, conflicts_with = "shot")]
        preset: Option<String>,
        /// JSON file with shot parameters, or a document with a `shot` field.
        #[arg(long)]
        shot: Option<PathBuf>,
        #[arg(long)]
        duration: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut config = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

fn mode_of(s: &str) -> Result<SurveyMode> {
    Ok(s.parse()?)
}

fn mode_name(mode: SurveyMode) -> &'static str {
    match mode {
        SurveyMode::Ws1 => "ws1",
        SurveyMode::Ws2 => "ws2",
        SurveyMode::Ws3 => "ws3",
    }
}

fn clips_file(mode: SurveyMode) -> &'static str {
    match mode {
        SurveyMode::Ws1 => files::WS1_CLIPS,
        SurveyMode::Ws2 => files::WS2_CLIPS,
        SurveyMode::Ws3 => files::WS3_CLIPS,
    }
}

fn comparisons_file(mode: SurveyMode) -> &'static str {
    match mode {
        SurveyMode::Ws1 => files::WS1_RESPONSES,
        SurveyMode::Ws2 => files::WS2_COMPARISONS,
        SurveyMode::Ws3 => files::WS3_COMPARISONS,
    }
}

fn written(path: &Path) {
    println!("wrote {}", path.display());
}

fn run(cli: Cli) -> Result<()> {
    let config = load_config(&cli)?;
    let out = cli.out.as_path();
    let at = |name: &str| out.join(name);
    match cli.command {
        Command::GenDataset { mode, count, units } => {
            let mode = mode_of(&mode)?;
            let clips = match mode {
                SurveyMode::Ws1 => {
                    let units = units.context("ws1 needs pilot units: pass --units")?;
                    let pilot = pipeline::read_units(&units)?;
                    pipeline::ws1_design(&pilot, count.unwrap_or(config.ws1_clips), config.seed)?
                }
                SurveyMode::Ws2 | SurveyMode::Ws3 => {
                    let path = units.unwrap_or_else(|| at(files::UNITS));
                    let units = pipeline::read_units(&path)?;
                    let default = if mode == SurveyMode::Ws2 { config.ws2_clips } else { config.ws3_clips };
                    pipeline::generate_clips(&units, count.unwrap_or(default), config.seed)?
                }
            };
            let path = at(clips_file(mode));
            pipeline::write_jsonl(&path, &clips)?;
            println!("{} clips", clips.len());
            written(&path);
        }
        Command::Survey { mode, clips } => {
            let mode = mode_of(&mode)?;
            let path = clips.unwrap_or_else(|| at(clips_file(mode)));
            let clips: Vec<ClipRecord> = pipeline::read_jsonl(&path)?;
            if clips.is_empty() {
                bail!("{}: no clips to survey", path.display());
            }
            let rater = pipeline::load_rater(&config, mode)?;
            let dest = at(comparisons_file(mode));
            let n = match mode {
                SurveyMode::Ws1 => {
                    let r = pipeline::survey_ws1(&clips, &rater, config.comparisons_per_pair, config.seed)?;
                    pipeline::write_jsonl(&dest, &r)?;
                    r.len()
                }
                SurveyMode::Ws2 | SurveyMode::Ws3 => {
                    let r = pipeline::survey_pairs(&clips, &rater, config.comparisons_per_pair, config.seed)?;
                    pipeline::write_jsonl(&dest, &r)?;
                    r.len()
                }
            };
            println!("{n} {} judgments", mode_name(mode));
            written(&dest);
        }
        Command::Rate { mode } => match mode_of(&mode)? {
            SurveyMode::Ws1 => {
                let records = pipeline::read_jsonl(&at(files::WS1_RESPONSES))?;
                let (units, rows) = pipeline::rate_responses(&records, config.alpha)?;
                for u in units.units() {
                    println!(
                        "{:<9} {:<9} {} / {}",
                        u.preset,
                        u.parameter.name(),
                        fmt_unit(u.delta_plus),
                        fmt_unit(u.delta_minus)
                    );
                }
                pipeline::write_json(&at(files::UNITS), &units)?;
                pipeline::write_sweep_csv(&at(files::SWEEP_CSV), &rows)?;
                written(&at(files::UNITS));
                written(&at(files::SWEEP_CSV));
            }
            mode => {
                let cmps = pipeline::read_comparisons(&at(comparisons_file(mode)))?;
                let (table, scores) = pipeline::rate_comparisons(&cmps, &config.rating)?;
                let (ratings, scores_file) = if mode == SurveyMode::Ws2 {
                    (files::WS2_RATINGS, files::WS2_SCORES)
                } else {
                    (files::WS3_RATINGS, files::WS3_SCORES)
                };
                pipeline::write_json(&at(ratings), &table)?;
                pipeline::write_scores(&at(scores_file), &scores)?;
                println!("{} clips x {} descriptors", scores.clips.len(), scores.descriptors.len());
                written(&at(ratings));
                written(&at(scores_file));
            }
        },
        Command::Cluster { scores } => {
            let scores = pipeline::read_scores(&scores.unwrap_or_else(|| at(files::WS2_SCORES)))?;
            let (report, corr) = pipeline::cluster_descriptors(&scores, config.cluster_target)?;
            for c in &report.clusters {
                println!("{:<14} {}", c.exemplar, c.members.join(", "));
            }
            pipeline::write_json(&at(files::CLUSTERS), &report)?;
            pipeline::write_matrix_csv(&at(files::CORRELATION_CSV), &corr.labels, &corr.values)?;
            written(&at(files::CLUSTERS));
            written(&at(files::CORRELATION_CSV));
        }
        Command::Embed { scores } => {
            let scores = pipeline::read_scores(&scores.unwrap_or_else(|| at(files::WS3_SCORES)))?;
            let (embedding, basis) = pipeline::embed_scores(&scores, config.distance, config.embed_dim, config.seed)?;
            println!("normalized stress {:.4}", embedding.normalized_stress);
            pipeline::write_json(&at(files::EMBEDDING), &embedding)?;
            pipeline::write_embedding_csv(&at(files::EMBEDDING_CSV), &embedding)?;
            written(&at(files::EMBEDDING));
            written(&at(files::EMBEDDING_CSV));
            if let Some(b) = basis {
                pipeline::write_json(&at(files::BASIS), &b)?;
                written(&at(files::BASIS));
            }
        }
        Command::Train => {
            let clips: Vec<ClipRecord> = pipeline::read_jsonl(&at(files::WS3_CLIPS))?;
            let scores = pipeline::read_scores(&at(files::WS3_SCORES))?;
            let trained = pipeline::train_models(&clips, &scores, &config)?;
            println!("d2p lambda {:e}, p2d lambda {:e}", trained.d2p.lambda, trained.p2d.lambda);
            pipeline::write_json(&at(files::D2P), &trained.d2p)?;
            pipeline::write_json(&at(files::P2D), &trained.p2d)?;
            pipeline::write_json(&at(files::SPLIT), &trained.split)?;
            pipeline::write_coefficients_csv(&at(files::COEFFICIENTS_CSV), &trained.d2p, &trained.p2d)?;
            for f in [files::D2P, files::P2D, files::SPLIT, files::COEFFICIENTS_CSV] {
                written(&at(f));
            }
        }
        Command::Eval => {
            let d2p = pipeline::read_model(&at(files::D2P))?;
            let p2d = pipeline::read_model(&at(files::P2D))?;
            let clips: Vec<ClipRecord> = pipeline::read_jsonl(&at(files::WS3_CLIPS))?;
            let scores = pipeline::read_scores(&at(files::WS3_SCORES))?;
            let split: Split = pipeline::read_json(&at(files::SPLIT))?;
            let report = pipeline::evaluate(&d2p, &p2d, &clips, &scores, &split)?;
            print!("{}", report.to_text());
            pipeline::write_json(&at(files::EVAL), &report)?;
            report.write_csv(&at(files::EVAL_CSV))?;
            written(&at(files::EVAL));
            written(&at(files::EVAL_CSV));
        }
        Command::Generate { targets, sweeps, model } => {
            let model = pipeline::read_model(&model.unwrap_or_else(|| at(files::D2P)))?;
            if sweeps {
                if !targets.is_empty() {
                    bail!("--sweeps takes no targets");
                }
                let points = pipeline::expression_sweeps(&model, config.sweep_points)?;
                pipeline::write_json(&at(files::SWEEPS), &points)?;
                pipeline::write_sweeps_csv(&at(files::SWEEPS_CSV), &points)?;
                println!("{} sweep points", points.len());
                written(&at(files::SWEEPS));
                written(&at(files::SWEEPS_CSV));
            } else {
                let parsed = pipeline::parse_targets(&model.metadata.descriptors, &targets)?;
                let actor = pipeline::load_actor(&config)?;
                let report = pipeline::generate_shot(&model, &parsed, &actor, config.sim_duration, config.sim_dt)?;
                println!("{}", serde_json::to_string(&report.shot)?);
                println!("shot type {}", report.shot_type.name());
                if let Some(e) = &report.trajectory_error {
                    eprintln!("warning: no trajectory: {e}");
                }
                pipeline::write_json(&at(files::GENERATED), &report)?;
                written(&at(files::GENERATED));
            }
        }
        Command::Simulate { preset, shot, duration, dt } => {
            let shot = match (preset, shot) {
                (Some(name), None) => find_preset(&name)?.params,
                (None, Some(path)) => read_shot(&path)?,
                _ => bail!("pass either --preset or --shot"),
            };
            let actor = pipeline::load_actor(&config)?;
            let doc = pipeline::simulate_document(
                &shot,
                &actor,
                duration.unwrap_or(config.sim_duration),
                dt.unwrap_or(config.sim_dt),
            )?;
            let path = at(files::TRAJECTORY);
            pipeline::write_text(&path, &serde_json::to_string(&doc)?)?;
            written(&path);
        }
    }
    Ok(())
}

fn fmt_unit(v: Option<f64>) -> String {
    v.map_or_else(|| "none".to_string(), |d| format!("{d:+}"))
}

/// Accepts bare shot parameters or any document carrying them under `shot`.
fn read_shot(path: &Path) -> Result<ShotParameters> {
    let value: serde_json::Value = pipeline::read_json(path)?;
    let inner = value.get("shot").cloned().unwrap_or(value);
    let shot: ShotParameters =
        serde_json::from_value(inner).with_context(|| format!("{}: not a shot", path.display()))?;
    shot.validate()?;
    Ok(shot)
}
