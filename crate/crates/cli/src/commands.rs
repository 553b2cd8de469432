use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use log::{info, warn};
use rayon::prelude::*;

use posekit::augment::{
    stack_samples, write_sidecar_row, AugmentPlan, AugmentScheme, CropGeometry, CROP_SIDECAR_HEADER,
};
use posekit::dataset::annotations::ANNOTATION_HEADER;
use posekit::dataset::batch::{batch_file_name, write_batch_list, BATCH_LIST, DEFAULT_SAMPLES_PER_FILE};
use posekit::dataset::{
    annotations_to_csv, dataset_channel_means, load_annotations, load_weight_archive, read_batches,
    save_weight_archive, split_indices, write_batch_file, write_batches, AnnotatedFrame, BatchFile,
    BatchStream, ChannelMeans, RawImage,
};
use posekit::eval::{
    emit_report, mae_per_landmark, parse_mae_csv, parse_predictions_csv, predict_batch_native,
    predictions_csv, test_samples, OcclusionMode, ReferenceLine, PREDICTION_HEADER,
};
use posekit::multiview::pose::{parse_pose_csv, pose_csv, ratio_metrics, reconstruct_pose};
use posekit::multiview::{CameraModel, Triangulation};
use posekit::nn::{
    init_params, train_from_source, Batch, BatchSource, Init, LossHistory, NetworkSpec, TrainConfig,
    VggTemplate, WeightArchive,
};
use posekit::synth::{write_dataset, SynthConfig};

use crate::config::{manifest_value, parse_arch, write_manifest, RunConfig};
use crate::MetricFailure;

/// Working precision for every stage.
type Real = f64;

pub const WEIGHTS_FILE: &str = "weights.pkw";
pub const MODEL_FILE: &str = "model.txt";
pub const MEANS_FILE: &str = "means.txt";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const POSES_FILE: &str = "poses.csv";
pub const RATIOS_FILE: &str = "ratios.csv";

#[derive(Debug, Clone, Args)]
pub struct SynthArgs {
    /// frames per view
    #[arg(long, default_value_t = 200)]
    pub frames: usize,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// write a weight snapshot every this many iterations
    #[arg(long = "snapshot-every")]
    pub snapshot_every: Option<usize>,
}

#[derive(Debug, Clone, Args)]
pub struct AnnotateArgs {
    /// output directory of a train run
    #[arg(long = "model-dir")]
    pub model_dir: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// predictions CSV written by annotate
    #[arg(long)]
    pub predictions: PathBuf,
    /// include-all or exclude-occluded
    #[arg(long, default_value = "include-all")]
    pub occlusion: String,
    /// loss history of the run, for its final test loss
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// fail (exit 1) when any landmark MAE exceeds this many pixels
    #[arg(long = "max-mae")]
    pub max_mae: Option<f64>,
}

#[derive(Debug, Clone, Args)]
pub struct TriangulateArgs {
    /// view-1 landmarks: predictions or annotation CSV
    #[arg(long)]
    pub view1: PathBuf,
    #[arg(long)]
    pub view2: PathBuf,
    /// view-1 projection matrix file
    #[arg(long)]
    pub cam1: PathBuf,
    #[arg(long)]
    pub cam2: PathBuf,
    /// ground-truth pose CSV for distance ratios
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// refine each point by minimizing reprojection error
    #[arg(long)]
    pub refine: bool,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    /// MAE table written by evaluate
    #[arg(long)]
    pub mae: Option<PathBuf>,
    /// loss history written by train
    #[arg(long)]
    pub history: Option<PathBuf>,
    /// reference line on the MAE chart, as label=value
    #[arg(long = "reference")]
    pub references: Vec<String>,
}

fn annotation_file(path: &Path) -> PathBuf {
    if path.is_dir() {
        path.join("annotations.csv")
    } else {
        path.to_path_buf()
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))
}

fn load_frames(data: &Path) -> Result<Vec<AnnotatedFrame>> {
    let path = annotation_file(data);
    let mut frames = load_annotations(&path).with_context(|| format!("loading annotations {}", path.display()))?;
    for f in &mut frames {
        f.image_ref = fs::canonicalize(&f.image_ref)
            .with_context(|| format!("frame {}: image {}", f.frame_id, f.image_ref.display()))?;
    }
    Ok(frames)
}

fn load_images(frames: &[AnnotatedFrame]) -> Result<Vec<RawImage>> {
    frames
        .par_iter()
        .map(|f| RawImage::load(&f.image_ref).with_context(|| format!("loading {}", f.image_ref.display())))
        .collect()
}

fn means_text(m: &ChannelMeans) -> String {
    format!("{} {} {}", m[0], m[1], m[2])
}

fn parse_means(text: &str) -> Result<ChannelMeans> {
    let v: Vec<f64> = text
        .split_whitespace()
        .map(|s| s.parse().with_context(|| format!("bad channel mean {s:?}")))
        .collect::<Result<_>>()?;
    v.try_into()
        .map_err(|v: Vec<f64>| anyhow::anyhow!("expected 3 channel means, found {}", v.len()))
}

fn geometry(cfg: &RunConfig) -> CropGeometry {
    CropGeometry::default().with_output(cfg.input_size, cfg.input_size)
}

pub fn synth(cfg: &RunConfig, args: &SynthArgs) -> Result<()> {
    let sc = SynthConfig {
        frames: args.frames,
        seed: cfg.seed,
        ..SynthConfig::default()
    };
    create_dir(&cfg.out_dir)?;
    let views = write_dataset(&cfg.out_dir, &sc)?;
    info!("wrote {} frames per view to {}", args.frames, cfg.out_dir.display());
    write_manifest(
        &cfg.out_dir,
        "synth",
        cfg,
        &[
            ("frames", args.frames.to_string()),
            ("view1", views[0].annotations.display().to_string()),
            ("view2", views[1].annotations.display().to_string()),
        ],
    )
}

/// Moves the images at `indices` out of `images`.
fn take_images(images: &mut [Option<RawImage>], indices: &[usize]) -> Vec<RawImage> {
    indices
        .iter()
        .map(|&i| images[i].take().expect("each index taken once"))
        .collect()
}

pub fn augment(cfg: &RunConfig) -> Result<()> {
    let frames = load_frames(&cfg.data_dir)?;
    if frames.is_empty() {
        bail!("no annotated frames in {}", annotation_file(&cfg.data_dir).display());
    }
    let (train_idx, test_idx) = split_indices(&frames, cfg.split_strategy())?;
    let mut images: Vec<Option<RawImage>> = load_images(&frames)?.into_iter().map(Some).collect();
    let pick = |idx: &[usize]| -> Vec<AnnotatedFrame> { idx.iter().map(|&i| frames[i].clone()).collect() };
    let (train_frames, test_frames) = (pick(&train_idx), pick(&test_idx));
    let train_images = take_images(&mut images, &train_idx);
    let test_images = take_images(&mut images, &test_idx);
    let means = dataset_channel_means(train_images.iter())?;
    let geom = geometry(cfg);
    let plan = AugmentPlan::new(
        &train_frames,
        &train_images,
        AugmentScheme::new(cfg.da, cfg.nts, cfg.seed),
        geom,
        means,
    )?;
    info!(
        "{} usable training frames, {} samples ({} generated)",
        plan.originals(),
        plan.len(),
        plan.generated()
    );

    let train_dir = cfg.out_dir.join("train");
    create_dir(&train_dir)?;
    let mut sidecar = format!("{CROP_SIDECAR_HEADER}\n");
    let mut paths = Vec::new();
    for (k, start) in (0..plan.len()).step_by(DEFAULT_SAMPLES_PER_FILE).enumerate() {
        let samples = plan.samples::<Real>(start..(start + DEFAULT_SAMPLES_PER_FILE).min(plan.len()))?;
        let (data, label) = stack_samples(&samples)?;
        let path = train_dir.join(batch_file_name(k));
        write_batch_file(&path, &BatchFile::new(data, label)?)?;
        for s in &samples {
            write_sidecar_row(&mut sidecar, s.index, s.frame_id, s.generated, &s.crop);
        }
        paths.push(path);
    }
    write_batch_list(&train_dir, &paths)?;
    fs::write(train_dir.join("crops.csv"), sidecar)?;
    fs::write(train_dir.join("annotations.csv"), annotations_to_csv(&train_frames, None))?;

    let test_dir = cfg.out_dir.join("test");
    create_dir(&test_dir)?;
    fs::write(test_dir.join("annotations.csv"), annotations_to_csv(&test_frames, None))?;
    if test_frames.is_empty() {
        warn!("split leaves no test frames");
    } else {
        let (test, crops) = test_samples::<_, Real>(&test_frames, &test_images, &geom, &means)?;
        write_batches(&test.inputs, &test.targets, &test_dir, DEFAULT_SAMPLES_PER_FILE)?;
        let mut sidecar = format!("{CROP_SIDECAR_HEADER}\n");
        for (i, (f, c)) in test_frames.iter().zip(&crops).enumerate() {
            write_sidecar_row(&mut sidecar, i, f.frame_id, false, c);
        }
        fs::write(test_dir.join("crops.csv"), sidecar)?;
    }
    fs::write(cfg.out_dir.join(MEANS_FILE), means_text(&means))?;
    write_manifest(
        &cfg.out_dir,
        "augment",
        cfg,
        &[
            ("frames", frames.len().to_string()),
            ("train_frames", train_frames.len().to_string()),
            ("test_frames", test_frames.len().to_string()),
            ("usable_train_frames", plan.originals().to_string()),
            ("samples", plan.len().to_string()),
            ("generated", plan.generated().to_string()),
            ("train_files", paths.len().to_string()),
            ("means", means_text(&means)),
        ],
    )
}

/// Network for `arch` at a square `input_size`, with the run's
/// initialization and learning-rate multipliers.
pub fn build_network(arch: usize, input_size: usize, channel_div: usize, cfg: Option<&RunConfig>) -> Result<NetworkSpec> {
    let mut t = VggTemplate::reduced(input_size, channel_div);
    if let Some(cfg) = cfg {
        if cfg.pretrained.is_none() {
            t.trunk_init = Init::Xavier;
        }
        t.trunk_lr_multiplier = cfg.effective_vgg_lrm();
        t.head_lr_multiplier = cfg.fc_lrm;
    }
    Ok(t.build(arch, 8)?)
}

pub fn train(cfg: &RunConfig, args: &TrainArgs) -> Result<()> {
    let data = &cfg.data_dir;
    let mut stream = BatchStream::<Real>::open(&data.join("train"), cfg.batch)
        .with_context(|| format!("opening training batches under {}", data.display()))?;
    let dims = stream.batch(0)?.inputs.shape();
    if dims.h != dims.w || dims.c != 3 {
        bail!("training inputs are {}x{}x{}; expected square 3-channel images", dims.c, dims.h, dims.w);
    }
    let test_list = data.join("test").join(BATCH_LIST);
    let test = if test_list.exists() {
        let b = read_batches::<Real>(&test_list)?;
        Some(Batch::new(b.data, b.label)?)
    } else {
        None
    };
    let means = parse_means(&read_text(&data.join(MEANS_FILE))?)?;

    let net = build_network(cfg.arch, dims.h, cfg.channel_div, Some(cfg))?;
    let archive = match &cfg.pretrained {
        Some(p) => Some(load_weight_archive::<Real>(p).with_context(|| format!("loading {}", p.display()))?),
        None => {
            if !cfg.finetune {
                warn!("no pretrained archive: VGG layers stay at their random initialization");
            }
            None
        }
    };
    let params = init_params::<Real>(&net, cfg.seed, archive.as_ref())?;
    let tc = TrainConfig {
        base_learning_rate: cfg.blr,
        batch_size: cfg.batch,
        iterations: cfg.iters,
        rng_seed: cfg.seed,
        snapshot_every: args.snapshot_every,
        ..TrainConfig::default()
    };
    create_dir(&cfg.out_dir)?;
    let snapshots = cfg.out_dir.join("snapshots");
    if args.snapshot_every.is_some() {
        create_dir(&snapshots)?;
    }
    info!(
        "training vgg-{}-fc8 ({} parameters) on {} samples",
        cfg.arch,
        net.parameter_count(),
        stream.sample_count()
    );
    let outcome = train_from_source(&net, params, &mut stream, &tc, test.as_ref(), |it, p| {
        save_weight_archive(&snapshots.join(format!("snapshot_{it:06}.pkw")), &WeightArchive::from_params(p))
    })?;
    save_weight_archive(&cfg.out_dir.join(WEIGHTS_FILE), &WeightArchive::from_params(&outcome.params))?;
    fs::write(cfg.out_dir.join("loss_history.csv"), outcome.history.to_csv())?;
    let model = format!(
        "arch=vgg-{}-fc8\ninput-size={}\nchannel-div={}\nmeans={}\n",
        cfg.arch,
        dims.h,
        cfg.channel_div,
        means_text(&means)
    );
    fs::write(cfg.out_dir.join(MODEL_FILE), model)?;
    let last_train = outcome.history.train_losses().last().map(|(_, l)| l.to_string());
    let last_test = outcome.history.test_losses().last().map(|(_, l)| l.to_string());
    write_manifest(
        &cfg.out_dir,
        "train",
        cfg,
        &[
            ("effective_vgg_lrm", cfg.effective_vgg_lrm().to_string()),
            ("train_samples", stream.sample_count().to_string()),
            ("final_train_loss", last_train.unwrap_or_default()),
            ("final_test_loss", last_test.unwrap_or_default()),
        ],
    )
}

pub fn annotate(cfg: &RunConfig, args: &AnnotateArgs) -> Result<()> {
    let model = read_text(&args.model_dir.join(MODEL_FILE))?;
    let field = |k: &str| manifest_value(&model, k).with_context(|| format!("{MODEL_FILE} lacks {k}"));
    let arch = parse_arch(&field("arch")?)?;
    let size: usize = field("input-size")?.parse().context("input-size")?;
    let div: usize = field("channel-div")?.parse().context("channel-div")?;
    let means = parse_means(&field("means")?)?;
    let net = build_network(arch, size, div, None)?;
    let weights = args.model_dir.join(WEIGHTS_FILE);
    let params = load_weight_archive::<Real>(&weights)
        .with_context(|| format!("loading {}", weights.display()))?
        .to_params(&net)?;

    let frames = load_frames(&cfg.data_dir)?;
    let geom = CropGeometry::default().with_output(size, size);
    let mut rows = Vec::with_capacity(frames.len());
    for chunk in frames.chunks(64) {
        let images = load_images(chunk)?;
        let (batch, crops) = test_samples::<_, Real>(chunk, &images, &geom, &means)?;
        let preds = predict_batch_native(&net, &params, &batch.inputs, &crops)?;
        rows.extend(chunk.iter().map(|f| f.frame_id).zip(preds));
    }
    create_dir(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join(PREDICTIONS_FILE), predictions_csv(&rows))?;
    write_manifest(
        &cfg.out_dir,
        "annotate",
        cfg,
        &[
            ("model_dir", args.model_dir.display().to_string()),
            ("frames", rows.len().to_string()),
        ],
    )
}

/// Landmark rows keyed by frame id from a predictions or annotation CSV.
fn load_points(path: &Path) -> Result<BTreeMap<u32, [f64; 8]>> {
    let text = read_text(path)?;
    let header = text.lines().next().unwrap_or("").trim();
    let rows: Vec<(u32, [f64; 8])> = if header == PREDICTION_HEADER {
        parse_predictions_csv(&text, path)?
    } else if header == ANNOTATION_HEADER {
        load_annotations(path)?
            .iter()
            .map(|f| (f.frame_id, f.label_vector()))
            .collect()
    } else {
        bail!("{}: neither a predictions nor an annotation CSV", path.display());
    };
    let n = rows.len();
    let map: BTreeMap<_, _> = rows.into_iter().collect();
    if map.len() != n {
        bail!("{}: duplicate frame ids", path.display());
    }
    Ok(map)
}

pub fn evaluate(cfg: &RunConfig, args: &EvaluateArgs) -> Result<()> {
    let path = annotation_file(&cfg.data_dir);
    let gts = load_annotations(&path).with_context(|| format!("loading annotations {}", path.display()))?;
    let preds = load_points(&args.predictions)?;
    let matched = gts
        .iter()
        .map(|g| {
            preds
                .get(&g.frame_id)
                .copied()
                .with_context(|| format!("no prediction for frame {}", g.frame_id))
        })
        .collect::<Result<Vec<_>>>()?;
    let mode: OcclusionMode = args.occlusion.parse()?;
    let mut result = mae_per_landmark(&matched, &gts, mode)?;
    let history = match &args.history {
        Some(p) => Some(LossHistory::from_csv(&read_text(p)?)?),
        None => None,
    };
    if let Some(l) = history.as_ref().and_then(|h| h.test_losses().last()) {
        result = result.with_test_loss(l.1);
    }
    emit_report(&cfg.out_dir, Some(&result), None, &[])?;
    let mut extra = vec![
        ("frames_evaluated", result.frames_evaluated.to_string()),
        ("occlusion_excluded", result.occlusion_excluded.to_string()),
        ("total_mae", result.total_mae.to_string()),
    ];
    if let Some(l) = result.test_loss {
        extra.push(("test_loss", l.to_string()));
    }
    write_manifest(&cfg.out_dir, "evaluate", cfg, &extra)?;
    info!("MAE per landmark {:?}, total {}", result.mae, result.total_mae);
    if let Some(max) = args.max_mae {
        if let Some(worst) = result.mae.iter().copied().reduce(f64::max).filter(|&w| w > max) {
            return Err(MetricFailure(format!("landmark MAE {worst} px exceeds the limit of {max} px")).into());
        }
    }
    Ok(())
}

pub fn triangulate(cfg: &RunConfig, args: &TriangulateArgs) -> Result<()> {
    let cam1 = CameraModel::load(&args.cam1).with_context(|| format!("loading {}", args.cam1.display()))?;
    let cam2 = CameraModel::load(&args.cam2).with_context(|| format!("loading {}", args.cam2.display()))?;
    let v1 = load_points(&args.view1)?;
    let v2 = load_points(&args.view2)?;
    let method = if args.refine {
        Triangulation::Refined
    } else {
        Triangulation::Linear
    };
    let mut poses = Vec::new();
    for (id, p1) in &v1 {
        match v2.get(id) {
            Some(p2) => poses.push(reconstruct_pose(p1, p2, &cam1, &cam2, *id, method)),
            None => warn!("frame {id} missing from view 2"),
        }
    }
    let unmatched = v2.keys().filter(|id| !v1.contains_key(id)).count();
    if unmatched > 0 {
        warn!("{unmatched} view-2 frames missing from view 1");
    }
    if poses.is_empty() {
        bail!("the two views share no frame ids");
    }
    create_dir(&cfg.out_dir)?;
    fs::write(cfg.out_dir.join(POSES_FILE), pose_csv(&poses))?;
    let partial = poses.iter().filter(|p| p.is_partial()).count();
    let max_residual = poses
        .iter()
        .flat_map(|p| p.landmarks.iter().flatten().map(|l| l.residual_px))
        .fold(0.0, f64::max);
    let mut extra = vec![
        ("poses", poses.len().to_string()),
        ("partial_poses", partial.to_string()),
        ("max_residual_px", max_residual.to_string()),
    ];
    if let Some(gt_path) = &args.gt {
        let gt: BTreeMap<u32, _> = parse_pose_csv(&read_text(gt_path)?, gt_path)?
            .into_iter()
            .map(|p| (p.time_index, p))
            .collect();
        let (pred, truth): (Vec<_>, Vec<_>) = poses
            .iter()
            .filter_map(|p| gt.get(&p.time_index).map(|g| (p.clone(), g.clone())))
            .unzip();
        let r = ratio_metrics(&pred, &truth)?;
        fs::write(
            cfg.out_dir.join(RATIOS_FILE),
            format!(
                "metric,ratio,n_frames\nhead_abdomen,{},{}\nwingspan,{},{}\n",
                r.head_abdomen, r.head_abdomen_frames, r.wingspan, r.wingspan_frames
            ),
        )?;
        extra.push(("head_abdomen_ratio", r.head_abdomen.to_string()));
        extra.push(("wingspan_ratio", r.wingspan.to_string()));
    }
    write_manifest(&cfg.out_dir, "triangulate", cfg, &extra)
}

pub fn report(cfg: &RunConfig, args: &ReportArgs) -> Result<()> {
    let result = match &args.mae {
        Some(p) => Some(parse_mae_csv(&read_text(p)?).with_context(|| format!("in {}", p.display()))?),
        None => None,
    };
    let history = match &args.history {
        Some(p) => Some(LossHistory::from_csv(&read_text(p)?).with_context(|| format!("in {}", p.display()))?),
        None => None,
    };
    let references = args
        .references
        .iter()
        .map(|r| {
            let (label, value) = r.split_once('=').with_context(|| format!("reference {r:?} is not label=value"))?;
            Ok(ReferenceLine {
                label: label.to_string(),
                value: value.parse().with_context(|| format!("reference {r:?}: bad value"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let files = emit_report(&cfg.out_dir, result.as_ref(), history.as_ref(), &references)?;
    let list: Vec<String> = files.paths().map(|p| p.display().to_string()).collect();
    write_manifest(&cfg.out_dir, "report", cfg, &[("files", list.join(";"))])
}
