//! The `glee` command line tool.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on data or validation
//! errors and 3 on numerical failures.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::au::write_predictions;
use crate::embed::write_embeddings;
use crate::error::{Error, Result};
use crate::eval::{ave_var, ave_var_records, ave_var_table, evaluate, report_records, report_table, write_report};
use crate::geometry::{align_face, crop_parts, transform_landmarks, LandmarkSet68, RgbImage};
use crate::morphable::{CoefficientTable, FitStatus, MorphableModel};
use crate::train::fixtures::{fitting_scenes, ClusterFixture, PlantedAuFixture};
use crate::train::{
    compute_stats, finetune, fit_landmark_sets, make_folds, precompute_coefficients, pretrain, AuData, AuManifest,
    Checkpoint, FaceSample, Stage, TrainConfig, TripletData, TripletManifest,
};

#[derive(Debug, Parser)]
#[command(name = "glee", version, about = "Facial action unit detection toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML training configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Align one frame and write the aligned face, its landmarks and the 16 crops.
    Align {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        landmarks: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit expression coefficients to landmark files.
    Fit3d {
        #[command(flatten)]
        common: Common,
        /// Morphable model archive.
        #[arg(long)]
        model: PathBuf,
        /// Directory of landmark files; frame ids are the file stems.
        #[arg(long, conflicts_with = "manifest", required_unless_present = "manifest")]
        landmarks: Option<PathBuf>,
        /// Image side length the landmark files refer to.
        #[arg(long, default_value_t = 256)]
        image_size: usize,
        /// AU manifest whose frames should be fitted instead.
        #[arg(long)]
        manifest: Option<PathBuf>,
        /// Coefficient table to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Triplet pretraining of the embedding branches.
    Pretrain {
        #[command(flatten)]
        common: Common,
        /// Triplet manifest.
        #[arg(long)]
        manifest: PathBuf,
        /// Checkpoint directory to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// AU finetuning.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Precomputed coefficient table.
        #[arg(long)]
        coeffs: PathBuf,
        /// Pretrained or finetuned checkpoint to start from.
        #[arg(long)]
        init: Option<PathBuf>,
        /// Start from random weights instead of `--init`.
        #[arg(long)]
        fresh_start: bool,
        /// Keep the global and local branches fixed.
        #[arg(long)]
        fixed_branches: bool,
        #[command(flatten)]
        fold: FoldArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint and write F1 reports.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        coeffs: PathBuf,
        #[command(flatten)]
        fold: FoldArgs,
        /// Also write per-frame predictions here.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Report path stem; `.txt` and `.jsonl` are written.
        #[arg(long)]
        out: PathBuf,
    },
    /// Export expression embeddings, optionally with an Ave-Var report.
    Embed {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Ave-Var report stem.
        #[arg(long)]
        ave_var: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-AU occurrence ratios of a manifest.
    Stats {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        /// Report path stem.
        #[arg(long)]
        out: PathBuf,
    },
    /// Subject-exclusive train/test manifests.
    Folds {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value_t = 3)]
        k: usize,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a synthetic fixture.
    Synth {
        #[command(flatten)]
        common: Common,
        #[arg(value_enum)]
        kind: FixtureKind,
        /// Number of triplets, frames or scenes.
        #[arg(long)]
        count: Option<usize>,
        /// AU count of the planted fixture.
        #[arg(long, default_value_t = 12)]
        aus: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct FoldArgs {
    /// Restrict to the training (finetune) or test (eval) side of this fold.
    #[arg(long, requires = "folds")]
    fold: Option<usize>,
    /// Number of subject-exclusive folds.
    #[arg(long)]
    folds: Option<usize>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FixtureKind {
    /// Two expression clusters as pretraining triplets.
    Clusters,
    /// Frames with AU labels planted in the expression coefficients.
    Planted,
    /// Landmark files of random scenes and the model that produced them.
    Scenes,
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(common: &Common, stage: Stage) -> Result<TrainConfig> {
    let mut config = match &common.config {
        Some(path) => TrainConfig::load(path, stage)?,
        None => TrainConfig::for_stage(stage),
    };
    if let Some(seed) = common.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn select_fold(
    manifest: AuManifest,
    fold: &FoldArgs,
    seed: u64,
    train_side: bool,
) -> Result<(AuManifest, Option<usize>)> {
    let (Some(index), Some(k)) = (fold.fold, fold.folds) else {
        return Ok((manifest, None));
    };
    let folds = make_folds(&manifest, k, seed)?;
    let chosen = folds
        .into_iter()
        .nth(index)
        .ok_or_else(|| Error::InvalidInput(format!("fold {index} is out of range for {k} folds")))?;
    Ok((if train_side { chosen.train } else { chosen.test }, Some(index)))
}

fn dispatch(command: Command) -> Result<()> {
    match command {
        Command::Align {
            common,
            image,
            landmarks,
            out,
        } => {
            let config = load_config(&common, Stage::Finetune)?;
            let frame = RgbImage::load(&image)?;
            let lms = LandmarkSet68::read(&landmarks, frame.height(), frame.width())?;
            let aligned = align_face(&frame, &lms, &config.alignment)?;
            create_dir(&out)?;
            aligned.image.save(&out.join("face.png"))?;
            transform_landmarks(&lms, &aligned.transform, aligned.size())?.write(&out.join("face.pts"))?;
            let crops = crop_parts(&aligned)?;
            for (name, crop) in crops.iter() {
                crop.save(&out.join(format!("{name}.png")))?;
            }
            let m = aligned.transform.matrix();
            write_file(
                &out.join("transform.txt"),
                &format!(
                    "{}\t{}\t{}\n{}\t{}\t{}\n",
                    m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2]
                ),
            )?;
            eprintln!(
                "aligned {} to {}px, scale {:.4}",
                image.display(),
                aligned.size(),
                aligned.transform.scale()
            );
        }
        Command::Fit3d {
            common,
            model,
            landmarks,
            image_size,
            manifest,
            out,
        } => {
            let config = load_config(&common, Stage::Finetune)?;
            let model = MorphableModel::load(&model)?;
            let table = match (landmarks, manifest) {
                (Some(dir), _) => {
                    let mut frames = Vec::new();
                    let entries = std::fs::read_dir(&dir).map_err(|e| Error::io(&dir, e))?;
                    let mut paths: Vec<PathBuf> = entries
                        .filter_map(|e| e.ok().map(|e| e.path()))
                        .filter(|p| p.is_file())
                        .collect();
                    paths.sort();
                    for path in paths {
                        let id = path
                            .file_stem()
                            .map(|s| s.to_string_lossy().into_owned())
                            .unwrap_or_default();
                        frames.push((id, LandmarkSet68::read(&path, image_size, image_size)?));
                    }
                    if frames.is_empty() {
                        return Err(Error::InvalidInput(format!("no landmark files in {}", dir.display())));
                    }
                    fit_landmark_sets(&frames, &model, &config.fit)?
                }
                (None, Some(path)) => precompute_coefficients(&AuManifest::read(&path)?, &model, &config.fit)?,
                (None, None) => unreachable!("clap requires one of --landmarks and --manifest"),
            };
            table.write(&out)?;
            eprintln!(
                "fitted {} frames: {} converged, {} unconverged, {} failed",
                table.len(),
                table.count(FitStatus::Converged),
                table.count(FitStatus::Unconverged),
                table.count(FitStatus::Failed)
            );
        }
        Command::Pretrain { common, manifest, out } => {
            let config = load_config(&common, Stage::Pretrain)?;
            let data = TripletData::load(&TripletManifest::read(&manifest)?, &config.alignment)?;
            let ckpt = pretrain(&data, &config)?;
            ckpt.save(&out)?;
            eprintln!("loss history {:?}", ckpt.meta.loss_history);
        }
        Command::Finetune {
            common,
            manifest,
            coeffs,
            init,
            fresh_start,
            fixed_branches,
            fold,
            out,
        } => {
            let mut config = load_config(&common, Stage::Finetune)?;
            config.fresh_start |= fresh_start;
            config.fixed_branches |= fixed_branches;
            let (manifest, _) = select_fold(AuManifest::read(&manifest)?, &fold, config.seed, true)?;
            let stats = compute_stats(&manifest)?;
            let table = CoefficientTable::read(&coeffs)?;
            let data = AuData::load(&manifest, &table, &config.alignment)?;
            let init = match (&init, config.fresh_start) {
                (Some(path), false) => Some(Checkpoint::load(path)?),
                _ => None,
            };
            let ckpt = finetune(&data, init.as_ref(), &stats, &config)?;
            ckpt.save(&out)?;
            eprintln!("loss history {:?}", ckpt.meta.loss_history);
        }
        Command::Eval {
            common,
            ckpt,
            manifest,
            coeffs,
            fold,
            predictions,
            out,
        } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let mut config = ckpt.meta.config.clone();
            if common.config.is_some() {
                config.alignment = load_config(&common, Stage::Finetune)?.alignment;
            }
            let seed = common.seed.unwrap_or(config.seed);
            let (manifest, fold_index) = select_fold(AuManifest::read(&manifest)?, &fold, seed, false)?;
            let table = CoefficientTable::read(&coeffs)?;
            let data = AuData::load(&manifest, &table, &config.alignment)?;
            let mut output = evaluate(&ckpt.model, &data)?;
            output.report.fold = fold_index;
            write_report(
                &out,
                &report_table(&output.report, &data.au_names),
                &report_records(&output.report, &data.au_names),
            )?;
            if let Some(path) = predictions {
                write_predictions(
                    &path,
                    data.frames.iter().map(|f| f.frame_id.as_str()).zip(&output.predictions),
                )?;
            }
            eprintln!(
                "average F1 {:.4} over {} frames",
                output.report.average_f1, output.report.frames
            );
        }
        Command::Embed {
            common,
            ckpt,
            manifest,
            ave_var: ave_var_stem,
            out,
        } => {
            let ckpt = Checkpoint::load(&ckpt)?;
            let mut alignment = ckpt.meta.config.alignment.clone();
            if common.config.is_some() {
                alignment = load_config(&common, Stage::Finetune)?.alignment;
            }
            let manifest = AuManifest::read(&manifest)?;
            let mut embeddings = Vec::with_capacity(manifest.len());
            for chunk in manifest.records.chunks(32) {
                let samples = chunk
                    .iter()
                    .map(|r| FaceSample::load(&r.face, &alignment))
                    .collect::<Result<Vec<_>>>()?;
                let refs: Vec<&FaceSample> = samples.iter().collect();
                embeddings.extend(ckpt.model.embed(&refs)?.into_iter().map(|e| e.embedding));
            }
            write_embeddings(
                &out,
                manifest
                    .records
                    .iter()
                    .map(|r| r.frame_id.as_str())
                    .zip(embeddings.iter().map(Vec::as_slice)),
            )?;
            if let Some(stem) = ave_var_stem {
                let report = ave_var(&embeddings, &manifest.labels())?;
                write_report(&stem, &ave_var_table(&report), &ave_var_records(&report))?;
                eprintln!("Ave-Var {:.6} over {} groups", report.ave_var, report.groups.len());
            }
        }
        Command::Stats {
            common: _,
            manifest,
            out,
        } => {
            let manifest = AuManifest::read(&manifest)?;
            let stats = compute_stats(&manifest)?;
            let mut table = String::from("au\tratio\n");
            let mut records = String::new();
            for (name, r) in manifest.au_names.iter().zip(stats.ratios()) {
                table.push_str(&format!("{name}\t{r:.6}\n"));
                records.push_str(&serde_json::json!({"kind": "au", "au": name, "ratio": r}).to_string());
                records.push('\n');
            }
            let summary = serde_json::json!({"kind": "summary", "frames": manifest.len(), "aus": manifest.num_aus()});
            records.push_str(&summary.to_string());
            records.push('\n');
            write_report(&out, &table, &records)?;
        }
        Command::Folds {
            common,
            manifest,
            k,
            out,
        } => {
            let seed = common.seed.unwrap_or(0);
            let manifest_path = std::path::absolute(&manifest).map_err(|e| Error::io(&manifest, e))?;
            let manifest = AuManifest::read(&manifest_path)?;
            create_dir(&out)?;
            let mut summary = String::from("fold\ttrain\ttest\ttest_subjects\n");
            for fold in make_folds(&manifest, k, seed)? {
                fold.train.write(&out.join(format!("fold{}_train.tsv", fold.index)))?;
                fold.test.write(&out.join(format!("fold{}_test.tsv", fold.index)))?;
                let subjects: Vec<&str> = fold.test_subjects.iter().map(String::as_str).collect();
                summary.push_str(&format!(
                    "{}\t{}\t{}\t{}\n",
                    fold.index,
                    fold.train.len(),
                    fold.test.len(),
                    subjects.join(",")
                ));
            }
            write_file(&out.join("folds.txt"), &summary)?;
        }
        Command::Synth {
            common,
            kind,
            count,
            aus,
            out,
        } => {
            let seed = common.seed.unwrap_or(0);
            let out = std::path::absolute(&out).map_err(|e| Error::io(&out, e))?;
            match kind {
                FixtureKind::Clusters => {
                    let n = count.unwrap_or(200);
                    ClusterFixture::generate(seed, n, n / 2, 20)?.write(&out)?;
                }
                FixtureKind::Planted => {
                    PlantedAuFixture::generate(seed, count.unwrap_or(60), aus, 6)?.write(&out)?;
                }
                FixtureKind::Scenes => {
                    let (model, scenes) = fitting_scenes(seed, count.unwrap_or(50))?;
                    let lm_dir = out.join("landmarks");
                    create_dir(&lm_dir)?;
                    model.save(&out.join("model.bin"))?;
                    let mut truth = String::new();
                    for (i, scene) in scenes.iter().enumerate() {
                        let id = format!("scene{i:04}");
                        scene.landmarks.write(&lm_dir.join(format!("{id}.pts")))?;
                        let values: Vec<String> = scene.f_exp.iter().map(|v| v.to_string()).collect();
                        truth.push_str(&format!("{id}\t{}\n", values.join("\t")));
                    }
                    write_file(&out.join("f_exp_truth.tsv"), &truth)?;
                }
            }
            eprintln!("wrote fixture to {}", out.display());
        }
    }
    Ok(())
}
