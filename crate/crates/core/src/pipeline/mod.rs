//! Batch drivers over directories of volumes: prepare, generate, sample,
//! revert, eval and raters. Each returns a [`RunManifest`] (or report) and
//! writes its outputs into the given output directory.
//!
//! File naming: label volumes end in `_dseg`, images in `_T2w`, both as
//! `.nii` or `.nii.gz`. The subject id is the file stem without that
//! suffix. Outputs are always written gzipped.

mod manifest;

pub use manifest::{derive_seed, EntryStatus, ManifestEntry, RunManifest};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::Config;
use crate::diffusion::{ddpm_sample, one_hot_condition, Denoiser, Handshake, NoiseSchedule, OracleDenoiser, PluginProcess, ZeroDenoiser};
use crate::error::{Error, Result};
use crate::eval::{per_label_dice, rater_statistics, summarize, DiceReport, LabelName, RaterStats, RaterTable};
use crate::labels::{clean_small_components, remap_classes};
use crate::pathology::{apply_plan, PathologyPlan, PlanOverride};
use crate::volume::{
    crop_pair, crop_to_foreground, denormalize_intensity, normalize_intensity, resize_intensity, resize_labels,
    revert_intensity, revert_labels, sidecar_path, volume_stem, CropRecord, IntensityVolume, LabelVolume, ResizeMode,
    Vocabulary,
};

pub const LABEL_SUFFIX: &str = "_dseg";
pub const IMAGE_SUFFIX: &str = "_T2w";
pub const RECORD_SUFFIX: &str = "_crop.json";
pub const MANIFEST_NAME: &str = "manifest.json";

/// Label and optional image file of one subject.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Subject {
    pub id: String,
    pub labels: PathBuf,
    pub image: Option<PathBuf>,
}

fn is_nifti(path: &Path) -> bool {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    name.ends_with(".nii") || name.ends_with(".nii.gz")
}

fn list_nifti(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && is_nifti(&path) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Label volumes in `dir`: the `_dseg` files when there are any, otherwise
/// every NIfTI file.
fn list_label_volumes(dir: &Path) -> Result<Vec<PathBuf>> {
    let all = list_nifti(dir)?;
    let dseg: Vec<PathBuf> = all.iter().filter(|p| volume_stem(p).ends_with(LABEL_SUFFIX)).cloned().collect();
    Ok(if dseg.is_empty() { all } else { dseg })
}

/// Subjects in `dir`, sorted by id. Errors when no label volume is found.
pub fn discover_subjects(dir: &Path) -> Result<Vec<Subject>> {
    let files = list_nifti(dir)?;
    let mut images: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut subjects = Vec::new();
    for path in files {
        let stem = volume_stem(&path);
        if let Some(id) = stem.strip_suffix(LABEL_SUFFIX) {
            subjects.push(Subject {
                id: id.to_string(),
                labels: path,
                image: None,
            });
        } else if let Some(id) = stem.strip_suffix(IMAGE_SUFFIX) {
            images.insert(id.to_string(), path);
        }
    }
    if subjects.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no label volumes (*{LABEL_SUFFIX}.nii[.gz]) in {}",
            dir.display()
        )));
    }
    for s in &mut subjects {
        s.image = images.remove(&s.id);
    }
    Ok(subjects)
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn label_name(id: &str) -> String {
    format!("{id}{LABEL_SUFFIX}.nii.gz")
}

fn image_name(id: &str) -> String {
    format!("{id}{IMAGE_SUFFIX}.nii.gz")
}

fn record_name(id: &str) -> String {
    format!("{id}{RECORD_SUFFIX}")
}

/// Writes the volume and its vocabulary sidecar.
fn write_labels(labels: &LabelVolume, path: &Path) -> Result<()> {
    labels.write(path)?;
    labels.vocabulary().write_json(&sidecar_path(path))
}

/// Runs `f` over `items` on `jobs` worker threads, keeping input order.
fn run_parallel<T, U, F>(items: &[T], jobs: usize, f: F) -> Result<Vec<U>>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> U + Sync + Send,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start {jobs} workers: {e}")))?;
    Ok(pool.install(|| items.par_iter().map(&f).collect()))
}

fn entry_from<F>(subject: &str, seed: Option<u64>, input: &Path, work: F) -> ManifestEntry
where
    F: FnOnce() -> Result<(Vec<String>, Option<String>)>,
{
    let input = input.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    match work() {
        Ok((outputs, report)) => ManifestEntry {
            subject: subject.to_string(),
            seed,
            input,
            outputs,
            report,
            status: EntryStatus::Ok,
        },
        Err(e) => {
            log::error!("{subject}: {e}");
            ManifestEntry {
                subject: subject.to_string(),
                seed,
                input,
                outputs: Vec::new(),
                report: None,
                status: EntryStatus::Failed { error: e.to_string() },
            }
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct PrepareOptions {
    /// Overrides sidecars and the FeTA default for every input.
    pub vocabulary: Option<Vocabulary>,
    pub jobs: usize,
}

/// Cleanup → class remap → crop → normalize → resize, per subject.
///
/// Volumes already at the target dims whose codes are all diffusion
/// classes (0..=3) are treated as prepared and pass through unchanged, so
/// preparing prepared data only rewrites records.
pub fn prepare(in_dir: &Path, out_dir: &Path, cfg: &Config, opts: &PrepareOptions) -> Result<RunManifest> {
    cfg.validate()?;
    let subjects = discover_subjects(in_dir)?;
    create_dir(out_dir)?;
    let entries = run_parallel(&subjects, opts.jobs, |s| {
        entry_from(&s.id, None, &s.labels, || prepare_subject(s, out_dir, cfg, opts.vocabulary.as_ref()))
    })?;
    finish_manifest("prepare", None, cfg, entries, out_dir)
}

fn prepare_subject(
    s: &Subject,
    out_dir: &Path,
    cfg: &Config,
    vocabulary: Option<&Vocabulary>,
) -> Result<(Vec<String>, Option<String>)> {
    let labels = LabelVolume::read(&s.labels, vocabulary)?;
    let image = s.image.as_ref().map(IntensityVolume::read).transpose()?;
    let pre = &cfg.preprocess;
    let target = pre.target_dims;
    let already_prepared = labels.dims() == target && labels.voxels().iter().all(|&c| c < 4);
    let classes = if already_prepared {
        labels.clone().with_vocabulary(Vocabulary::four_class())?
    } else {
        let cleaned = clean_small_components(&labels, cfg.cleanup.min_component_size, cfg.cleanup.connectivity);
        remap_classes(&cleaned, &pre.class_map)?
    };

    let (classes, image, mut record) = if already_prepared {
        let record = CropRecord {
            original_dims: target,
            offset: [0; 3],
            cropped_dims: target,
            target_dims: target,
            intensity_range: None,
        };
        (classes, image, record)
    } else {
        match &image {
            Some(img) => {
                let (l, i, r) = crop_pair(&classes, img, pre.crop_margin)?;
                (l, Some(i), r)
            }
            None => {
                let (l, r) = crop_to_foreground(&classes, pre.crop_margin)?;
                (l, None, r)
            }
        }
    };
    let classes = resize_labels(&classes, target, ResizeMode::Nearest)?;
    record.target_dims = target;

    let mut outputs = vec![label_name(&s.id)];
    write_labels(&classes, &out_dir.join(&outputs[0]))?;
    if let Some(img) = image {
        let (normalized, range) = normalize_intensity(&img);
        record.intensity_range = Some(range);
        let resized = resize_intensity(&normalized, target, ResizeMode::Trilinear)?;
        let name = image_name(&s.id);
        resized.write(out_dir.join(&name))?;
        outputs.push(name);
    }
    let name = record_name(&s.id);
    record.write_json(&out_dir.join(&name))?;
    outputs.push(name);
    log::info!("prepared {} ({:?} → {:?})", s.id, labels.dims(), target);
    Ok((outputs, None))
}

#[derive(Clone, Debug, Default)]
pub struct GenerateOptions {
    pub count: usize,
    pub seed: u64,
    pub overrides: PlanOverride,
    pub vocabulary: Option<Vocabulary>,
    pub jobs: usize,
}

/// File name of the `j`-th synthetic variant of `id`.
pub fn synthetic_name(id: &str, j: usize) -> String {
    format!("{id}_syn-{j}")
}

/// Samples `count` pathology plans per subject from seeds derived from the
/// master seed and applies them. Inputs need the anatomical roles
/// (ventricles, white matter, cerebellum, brainstem), so this runs on
/// segmentations before class remapping.
pub fn generate(in_dir: &Path, out_dir: &Path, cfg: &Config, opts: &GenerateOptions) -> Result<RunManifest> {
    cfg.validate()?;
    let subjects = discover_subjects(in_dir)?;
    create_dir(out_dir)?;
    let entries = run_parallel(&subjects, opts.jobs, |s| {
        let seed = derive_seed(opts.seed, &s.id);
        entry_from(&s.id, Some(seed), &s.labels, || generate_subject(s, seed, out_dir, cfg, opts))
    })?;
    finish_manifest("generate", Some(opts.seed), cfg, entries, out_dir)
}

fn generate_subject(
    s: &Subject,
    seed: u64,
    out_dir: &Path,
    cfg: &Config,
    opts: &GenerateOptions,
) -> Result<(Vec<String>, Option<String>)> {
    let labels = LabelVolume::read(&s.labels, opts.vocabulary.as_ref())?;
    let mut outputs = Vec::new();
    for j in 0..opts.count {
        let plan_seed = derive_seed(seed, &j.to_string());
        let mut plan = PathologyPlan::sample(plan_seed);
        if !opts.overrides.is_empty() {
            plan = plan.overridden(&opts.overrides)?;
        }
        let (out, report) = apply_plan(&labels, &plan, &cfg.pathology)?;
        let stem = synthetic_name(&s.id, j);
        let volume = format!("{stem}{LABEL_SUFFIX}.nii.gz");
        write_labels(&out, &out_dir.join(&volume))?;
        let report_name = format!("{stem}_report.json");
        let path = out_dir.join(&report_name);
        std::fs::write(&path, serde_json::to_string_pretty(&report)?).map_err(|e| Error::io(&path, e))?;
        log::info!("{stem}: {:?}", plan.pathologies());
        outputs.push(volume);
        outputs.push(report_name);
    }
    Ok((outputs, None))
}

/// Which noise predictor drives the sampler.
#[derive(Clone, Debug, PartialEq)]
pub enum DenoiserSpec {
    Zero,
    /// Exact noise for the prepared `_T2w` image of each subject.
    Oracle,
    Plugin { program: PathBuf, args: Vec<String> },
}

#[derive(Clone, Debug)]
pub struct SampleOptions {
    pub denoiser: DenoiserSpec,
    pub seed: u64,
    /// Where `_crop.json` records are looked up; defaults to the input
    /// directory.
    pub records: Option<PathBuf>,
    pub jobs: usize,
}

/// Runs the reverse diffusion once per prepared label volume. Writes the
/// sample in network space (`<id>_synth_T2w`) and, when a crop record is
/// available, denormalized at the original geometry
/// (`<id>_synth-reverted_T2w`).
pub fn sample(in_dir: &Path, out_dir: &Path, cfg: &Config, opts: &SampleOptions) -> Result<RunManifest> {
    cfg.validate()?;
    if let DenoiserSpec::Plugin { program, .. } = &opts.denoiser {
        if !program.exists() {
            return Err(Error::Denoiser(format!("plugin {} does not exist", program.display())));
        }
    }
    let schedule = NoiseSchedule::from_config(&cfg.diffusion)?;
    let subjects = discover_subjects(in_dir)?;
    create_dir(out_dir)?;
    let records = opts.records.clone().unwrap_or_else(|| in_dir.to_path_buf());
    let entries = run_parallel(&subjects, opts.jobs, |s| {
        let seed = derive_seed(opts.seed, &s.id);
        entry_from(&s.id, Some(seed), &s.labels, || {
            sample_subject(s, seed, &schedule, &records, out_dir, cfg, opts)
        })
    })?;
    finish_manifest("sample", Some(opts.seed), cfg, entries, out_dir)
}

fn sample_subject(
    s: &Subject,
    seed: u64,
    schedule: &NoiseSchedule,
    records: &Path,
    out_dir: &Path,
    cfg: &Config,
    opts: &SampleOptions,
) -> Result<(Vec<String>, Option<String>)> {
    let labels = LabelVolume::read(&s.labels, Some(&Vocabulary::four_class()))?;
    let condition = one_hot_condition(&labels)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mode = cfg.diffusion.variance;
    let values = match &opts.denoiser {
        DenoiserSpec::Zero => ddpm_sample(&mut ZeroDenoiser, &condition, schedule, &mut rng, mode)?,
        DenoiserSpec::Oracle => {
            let path = s.image.as_ref().ok_or_else(|| {
                Error::Denoiser(format!("oracle denoiser needs {} next to the labels", image_name(&s.id)))
            })?;
            let target = IntensityVolume::read(path)?;
            if target.dims() != labels.dims() {
                return Err(Error::DimsMismatch {
                    expected: labels.dims(),
                    actual: target.dims(),
                });
            }
            let mut oracle = OracleDenoiser::new(target.into_voxels(), schedule.clone());
            ddpm_sample(&mut oracle, &condition, schedule, &mut rng, mode)?
        }
        DenoiserSpec::Plugin { program, args } => {
            let handshake = Handshake::new(labels.dims(), schedule.timesteps());
            let mut plugin = PluginProcess::spawn(program, args, handshake)?;
            let out = ddpm_sample(&mut plugin as &mut dyn Denoiser, &condition, schedule, &mut rng, mode)?;
            plugin.finish()?;
            out
        }
    };
    let image = IntensityVolume::new(labels.geometry().clone(), values)?;
    let name = format!("{}_synth{IMAGE_SUFFIX}.nii.gz", s.id);
    image.write(out_dir.join(&name))?;
    let mut outputs = vec![name];
    let record_path = records.join(record_name(&s.id));
    if record_path.exists() {
        let record = CropRecord::read_json(&record_path)?;
        let reverted = revert_image(&image, &record)?;
        let name = format!("{}_synth-reverted{IMAGE_SUFFIX}.nii.gz", s.id);
        reverted.write(out_dir.join(&name))?;
        outputs.push(name);
    }
    Ok((outputs, None))
}

/// Denormalize (when the record has a range), then undo resize and crop.
pub fn revert_image(image: &IntensityVolume, record: &CropRecord) -> Result<IntensityVolume> {
    let image = match record.intensity_range {
        Some(range) => denormalize_intensity(image, range),
        None => image.clone(),
    };
    revert_intensity(&image, record)
}

/// Record id for a volume stem: the longest `<id>` with a
/// `<id>_crop.json` such that the stem is `<id>` or starts with `<id>_`.
fn record_for(stem: &str, ids: &[String]) -> Option<String> {
    ids.iter()
        .filter(|id| stem == id.as_str() || stem.starts_with(&format!("{id}_")))
        .max_by_key(|id| id.len())
        .cloned()
}

/// Maps every volume in `in_dir` back to its original geometry using the
/// crop records in `records_dir`. Files ending in `_dseg` are reverted as
/// labels, everything else as images.
pub fn revert(in_dir: &Path, records_dir: &Path, out_dir: &Path, jobs: usize) -> Result<RunManifest> {
    let files = list_nifti(in_dir)?;
    if files.is_empty() {
        return Err(Error::InvalidArgument(format!("no volumes in {}", in_dir.display())));
    }
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(records_dir).map_err(|e| Error::io(records_dir, e))? {
        let name = entry.map_err(|e| Error::io(records_dir, e))?.file_name().to_string_lossy().into_owned();
        if let Some(id) = name.strip_suffix(RECORD_SUFFIX) {
            ids.push(id.to_string());
        }
    }
    create_dir(out_dir)?;
    let entries = run_parallel(&files, jobs, |path| {
        let stem = volume_stem(path);
        entry_from(&stem, None, path, || {
            let id = record_for(&stem, &ids)
                .ok_or_else(|| Error::InvalidArgument(format!("no crop record for {stem}")))?;
            let record = CropRecord::read_json(&records_dir.join(record_name(&id)))?;
            let name = format!("{stem}.nii.gz");
            if stem.ends_with(LABEL_SUFFIX) {
                let labels = LabelVolume::read(path, None)?;
                write_labels(&revert_labels(&labels, &record)?, &out_dir.join(&name))?;
            } else {
                let image = IntensityVolume::read(path)?;
                revert_image(&image, &record)?.write(out_dir.join(&name))?;
            }
            Ok((vec![name], None))
        })
    })?;
    finish_manifest("revert", None, &Config::default(), entries, out_dir)
}

/// Per-label Dice between same-named label volumes in two directories.
/// `codes` defaults to every non-background code of the first truth
/// volume's vocabulary. Writes `dice.json`, `dice.csv` and `dice.txt`.
pub fn evaluate(pred_dir: &Path, truth_dir: &Path, codes: Option<&[u16]>, out_dir: &Path) -> Result<DiceReport> {
    let name_of = |p: &PathBuf| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let preds: BTreeMap<String, PathBuf> = list_label_volumes(pred_dir)?.into_iter().map(|p| (name_of(&p), p)).collect();
    let truths: BTreeMap<String, PathBuf> = list_label_volumes(truth_dir)?.into_iter().map(|p| (name_of(&p), p)).collect();
    if truths.is_empty() {
        return Err(Error::InvalidArgument(format!("no volumes in {}", truth_dir.display())));
    }
    let unmatched: Vec<&String> = preds
        .keys()
        .filter(|k| !truths.contains_key(*k))
        .chain(truths.keys().filter(|k| !preds.contains_key(*k)))
        .collect();
    if !unmatched.is_empty() {
        return Err(Error::InvalidArgument(format!("unmatched subjects: {unmatched:?}")));
    }
    let mut labels: Option<Vec<LabelName>> = None;
    let mut subjects = Vec::new();
    let mut scores = Vec::new();
    for (name, truth_path) in &truths {
        let truth = LabelVolume::read(truth_path, None)?;
        let pred = LabelVolume::read(&preds[name], None)?;
        let names = labels.get_or_insert_with(|| {
            let vocab = truth.vocabulary();
            let chosen: Vec<u16> = match codes {
                Some(c) => c.to_vec(),
                None => vocab.iter().map(|(c, _)| c).filter(|&c| c != vocab.background()).collect(),
            };
            chosen
                .into_iter()
                .map(|code| LabelName {
                    code,
                    name: vocab.role(code).map_or_else(|| code.to_string(), |r| r.as_str().to_string()),
                })
                .collect()
        });
        let list: Vec<u16> = names.iter().map(|l| l.code).collect();
        scores.push(per_label_dice(&pred, &truth, &list)?);
        subjects.push(volume_stem(truth_path));
    }
    let report = summarize(labels.unwrap_or_default(), subjects, scores)?;
    create_dir(out_dir)?;
    report.write_json(&out_dir.join("dice.json"))?;
    let csv_path = out_dir.join("dice.csv");
    std::fs::write(&csv_path, report.to_csv()?).map_err(|e| Error::io(&csv_path, e))?;
    let txt = out_dir.join("dice.txt");
    std::fs::write(&txt, report.to_text_table()).map_err(|e| Error::io(&txt, e))?;
    Ok(report)
}

/// Rater statistics from a CSV table; writes `raters.json` and
/// `raters.txt`.
pub fn raters(table: &Path, out_dir: &Path) -> Result<RaterStats> {
    let stats = rater_statistics(&RaterTable::read_csv(table)?)?;
    create_dir(out_dir)?;
    stats.write_json(&out_dir.join("raters.json"))?;
    let txt = out_dir.join("raters.txt");
    std::fs::write(&txt, stats.to_text_table()).map_err(|e| Error::io(&txt, e))?;
    Ok(stats)
}

fn finish_manifest(
    command: &str,
    seed: Option<u64>,
    cfg: &Config,
    entries: Vec<ManifestEntry>,
    out_dir: &Path,
) -> Result<RunManifest> {
    let manifest = RunManifest::new(command, seed, cfg.clone(), entries);
    manifest.write_json(&out_dir.join(MANIFEST_NAME))?;
    Ok(manifest)
}
