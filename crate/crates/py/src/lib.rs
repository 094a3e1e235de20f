//! Python bindings. Volumes cross the boundary as flat x-fastest lists
//! plus a `(nx, ny, nz)` dims tuple; structured values as JSON strings.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;

use pathosynth::config::Config;
use pathosynth::diffusion::NoiseSchedule;
use pathosynth::pathology::PathologyPlan;
use pathosynth::pipeline::{self, GenerateOptions};
use pathosynth::{BinaryMask, LabelVolume, VolumeGeometry, Vocabulary};

type Dims = (usize, usize, usize);

fn err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn dims_of((x, y, z): Dims) -> [usize; 3] {
    [x, y, z]
}

fn feta_labels(voxels: Vec<u16>, dims: Dims) -> PyResult<LabelVolume> {
    let geometry = VolumeGeometry::unit(dims_of(dims)).map_err(err)?;
    LabelVolume::new(geometry, voxels, Vocabulary::feta()).map_err(err)
}

fn mask(bits: Vec<bool>, dims: Dims) -> PyResult<BinaryMask> {
    BinaryMask::from_bits(dims_of(dims), bits).map_err(err)
}

/// Procedural FeTA-labelled brain phantom.
#[pyfunction]
fn brain_phantom(dims: Dims, seed: u64) -> Vec<u16> {
    pathosynth::phantom::brain_phantom(dims_of(dims), seed).into_voxels()
}

/// Pathology plan drawn from `seed`, as JSON.
#[pyfunction]
fn sample_plan(seed: u64) -> PyResult<String> {
    serde_json::to_string(&PathologyPlan::sample(seed)).map_err(err)
}

/// Apply a JSON plan to FeTA labels. Returns the new voxels and the
/// synthesis report as JSON.
#[pyfunction]
#[pyo3(signature = (voxels, dims, plan, config = None))]
fn apply_plan(voxels: Vec<u16>, dims: Dims, plan: &str, config: Option<&str>) -> PyResult<(Vec<u16>, String)> {
    let labels = feta_labels(voxels, dims)?;
    let plan: PathologyPlan = serde_json::from_str(plan).map_err(err)?;
    let cfg: Config = match config {
        Some(text) => serde_json::from_str(text).map_err(err)?,
        None => Config::default(),
    };
    let (out, report) = pathosynth::pathology::apply_plan(&labels, &plan, &cfg.pathology).map_err(err)?;
    Ok((out.into_voxels(), serde_json::to_string(&report).map_err(err)?))
}

#[pyfunction]
fn dice(a: Vec<bool>, b: Vec<bool>, dims: Dims) -> PyResult<f64> {
    pathosynth::eval::dice(&mask(a, dims)?, &mask(b, dims)?).map_err(err)
}

/// Dice per code between two FeTA-labelled volumes.
#[pyfunction]
fn per_label_dice(pred: Vec<u16>, truth: Vec<u16>, dims: Dims, codes: Vec<u16>) -> PyResult<Vec<f64>> {
    let pred = feta_labels(pred, dims)?;
    let truth = feta_labels(truth, dims)?;
    pathosynth::eval::per_label_dice(&pred, &truth, &codes).map_err(err)
}

/// `(t, df, p)` of Welch's two-sided t-test.
#[pyfunction]
fn welch_ttest(a: Vec<f64>, b: Vec<f64>) -> PyResult<(f64, f64, f64)> {
    let r = pathosynth::eval::welch_ttest(&a, &b).map_err(err)?;
    Ok((r.t, r.df, r.p))
}

#[pyfunction]
fn rater_mean(counts: [f64; 4]) -> PyResult<f64> {
    pathosynth::eval::rater_mean(&counts).map_err(err)
}

/// Cumulative products ᾱ_1..ᾱ_T of a linear β schedule.
#[pyfunction]
#[pyo3(signature = (timesteps, beta_start = 1e-4, beta_end = 0.02))]
fn alpha_bars(timesteps: usize, beta_start: f64, beta_end: f64) -> PyResult<Vec<f64>> {
    Ok(NoiseSchedule::linear(timesteps, beta_start, beta_end).map_err(err)?.alpha_bars().to_vec())
}

#[pyfunction]
fn derive_seed(master: u64, key: &str) -> u64 {
    pipeline::derive_seed(master, key)
}

/// Run the batch generator over a directory; returns the manifest JSON.
#[pyfunction]
#[pyo3(signature = (input, output, count = 6, seed = 0, jobs = 1))]
fn generate(input: PathBuf, output: PathBuf, count: usize, seed: u64, jobs: usize) -> PyResult<String> {
    let opts = GenerateOptions {
        count,
        seed,
        jobs,
        ..Default::default()
    };
    let m = pipeline::generate(&input, &output, &Config::default(), &opts).map_err(err)?;
    serde_json::to_string(&m).map_err(err)
}

#[pymodule]
fn pathosynth_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(brain_phantom, m)?)?;
    m.add_function(wrap_pyfunction!(sample_plan, m)?)?;
    m.add_function(wrap_pyfunction!(apply_plan, m)?)?;
    m.add_function(wrap_pyfunction!(dice, m)?)?;
    m.add_function(wrap_pyfunction!(per_label_dice, m)?)?;
    m.add_function(wrap_pyfunction!(welch_ttest, m)?)?;
    m.add_function(wrap_pyfunction!(rater_mean, m)?)?;
    m.add_function(wrap_pyfunction!(alpha_bars, m)?)?;
    m.add_function(wrap_pyfunction!(derive_seed, m)?)?;
    m.add_function(wrap_pyfunction!(generate, m)?)?;
    Ok(())
}
