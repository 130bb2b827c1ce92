//! Python bindings for the condensed feature grid tokenizer.

use std::path::PathBuf;

use numpy::{IntoPyArray, PyArray1, PyArrayMethods, PyArray2, PyReadonlyArray1, PyReadonlyArray2, PyReadonlyArray3};
use pyo3::create_exception;
use pyo3::exceptions::PyException;
use pyo3::prelude::*;
use pyo3::types::PyDict;

use cfg_tokenizer as core;
use core::dpo::{self, LogProbRecord, SceneDpoBatch, SceneDpoConfig};
use core::pipeline::{FourierSource, Scene, TokenizeSettings};
use core::{
    CameraIntrinsics, CameraPose, DepthMap, FeatureMap, FramedCapture, RopeConfig, SceneManifest,
    TemplateRules, TokenFile,
};

create_exception!(cfg_tokenizer_py, CfgError, PyException, "Tokenizer error; args are (code, message).");

fn to_py(e: core::Error) -> PyErr {
    CfgError::new_err((e.code(), e.to_string()))
}

/// Condensed scene tokens, row-major by `(i, j)` column.
#[pyclass(module = "cfg_tokenizer_py", frozen)]
struct TokenGrid {
    file: TokenFile,
}

#[pymethods]
impl TokenGrid {
    #[staticmethod]
    fn read(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            file: TokenFile::read(&path).map_err(to_py)?,
        })
    }

    fn write(&self, path: PathBuf) -> PyResult<()> {
        self.file.write(&path).map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.file.tokens.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "TokenGrid(tokens={}, dim={}, compression_rate={:.6}, preservation_rate={:.6})",
            self.file.tokens.len(),
            self.file.dim,
            self.file.compression_rate,
            self.file.preservation_rate
        )
    }

    #[getter]
    fn dim(&self) -> usize {
        self.file.dim
    }

    #[getter]
    fn voxel_size(&self) -> f64 {
        self.file.voxel_size
    }

    #[getter]
    fn origin(&self) -> [f64; 3] {
        self.file.origin
    }

    #[getter]
    fn voxel_total(&self) -> u64 {
        self.file.voxel_total
    }

    #[getter]
    fn retained_voxel_total(&self) -> u64 {
        self.file.retained_voxel_total
    }

    #[getter]
    fn compression_rate(&self) -> f64 {
        self.file.compression_rate
    }

    #[getter]
    fn preservation_rate(&self) -> f64 {
        self.file.preservation_rate
    }

    /// `(n, dim)` float32 token features.
    #[getter]
    fn features<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyArray2<f32>>> {
        let n = self.file.tokens.len();
        let flat = self.file.feature_matrix().into_pyarray(py);
        flat.reshape([n, self.file.dim])
    }

    /// `(n, 2)` integer column indices.
    #[getter]
    fn columns<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyArray2<i64>>> {
        let n = self.file.tokens.len();
        let flat: Vec<i64> = self.file.tokens.iter().flat_map(|t| t.column).collect();
        flat.into_pyarray(py).reshape([n, 2])
    }

    /// `(n, 2)` column centers in meters.
    #[getter]
    fn centers<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyArray2<f64>>> {
        let n = self.file.tokens.len();
        let flat: Vec<f64> = self.file.tokens.iter().flat_map(|t| t.xy).collect();
        flat.into_pyarray(py).reshape([n, 2])
    }

    #[getter]
    fn source_voxel_counts<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray1<u64>> {
        let v: Vec<u64> = self.file.tokens.iter().map(|t| t.source_voxel_count).collect();
        v.into_pyarray(py)
    }

    #[getter]
    fn anchored<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray1<bool>> {
        let v: Vec<bool> = self.file.tokens.iter().map(|t| t.anchored).collect();
        v.into_pyarray(py)
    }
}

fn settings(
    base: TokenizeSettings,
    voxel_size: Option<f64>,
    max_tokens: Option<usize>,
    rope_base: Option<f64>,
    fourier_seed: Option<u64>,
    fourier_weights: Option<PathBuf>,
) -> PyResult<TokenizeSettings> {
    let mut s = base;
    if fourier_seed.is_some() && fourier_weights.is_some() {
        return Err(to_py(core::Error::InvalidConfig(
            "pass at most one of fourier_seed and fourier_weights".into(),
        )));
    }
    if let Some(v) = voxel_size {
        s.voxel_size = v;
    }
    if let Some(v) = max_tokens {
        s.max_tokens = v;
    }
    if let Some(v) = rope_base {
        s.rope_base = v;
    }
    if let Some(seed) = fourier_seed {
        s.fourier = FourierSource::Seed(seed);
    }
    if let Some(path) = fourier_weights {
        s.fourier = FourierSource::Weights(path);
    }
    Ok(s)
}

fn run(py: Python<'_>, scene: &Scene, s: &TokenizeSettings) -> PyResult<TokenGrid> {
    let file = py
        .detach(|| core::tokenize(scene, s).and_then(|out| out.token_file()))
        .map_err(to_py)?;
    Ok(TokenGrid { file })
}

/// Tokenize the scene described by a manifest file.
#[pyfunction]
#[pyo3(signature = (manifest, *, voxel_size=None, max_tokens=None, rope_base=None, fourier_seed=None, fourier_weights=None))]
fn tokenize_manifest(
    py: Python<'_>,
    manifest: PathBuf,
    voxel_size: Option<f64>,
    max_tokens: Option<usize>,
    rope_base: Option<f64>,
    fourier_seed: Option<u64>,
    fourier_weights: Option<PathBuf>,
) -> PyResult<TokenGrid> {
    let m = SceneManifest::load(&manifest).map_err(to_py)?;
    let scene = py.detach(|| Scene::load(&m)).map_err(to_py)?;
    let s = settings(
        TokenizeSettings::from_manifest(&m),
        voxel_size,
        max_tokens,
        rope_base,
        fourier_seed,
        fourier_weights,
    )?;
    run(py, &scene, &s)
}

/// Tokenize in-memory frames.
///
/// `depths`, `features`, `intrinsics` and `poses` are equal-length lists of
/// `(H, W)` depth, `(h, w, d)` features, `[fx, fy, cx, cy]` and `(4, 4)`
/// camera-to-world arrays.
#[pyfunction]
#[pyo3(signature = (depths, features, intrinsics, poses, *, voxel_size=None, max_tokens=None, rope_base=None, fourier_seed=None))]
#[allow(clippy::too_many_arguments)]
fn tokenize_frames(
    py: Python<'_>,
    depths: Vec<PyReadonlyArray2<'_, f64>>,
    features: Vec<PyReadonlyArray3<'_, f64>>,
    intrinsics: Vec<[f64; 4]>,
    poses: Vec<PyReadonlyArray2<'_, f64>>,
    voxel_size: Option<f64>,
    max_tokens: Option<usize>,
    rope_base: Option<f64>,
    fourier_seed: Option<u64>,
) -> PyResult<TokenGrid> {
    let n = depths.len();
    if features.len() != n || intrinsics.len() != n || poses.len() != n {
        return Err(to_py(core::Error::InvalidConfig(
            "depths, features, intrinsics and poses must have equal length".into(),
        )));
    }
    let mut captures = Vec::with_capacity(n);
    for i in 0..n {
        let d = depths[i].as_array();
        let f = features[i].as_array();
        let p = poses[i].as_array();
        if p.shape() != [4, 4] {
            return Err(to_py(core::Error::InvalidConfig(format!(
                "pose {i} must be 4x4, got {:?}",
                p.shape()
            ))));
        }
        let [fx, fy, cx, cy] = intrinsics[i];
        let capture = FramedCapture::new(
            CameraIntrinsics::new(fx, fy, cx, cy).map_err(to_py)?,
            CameraPose::from_row_major(&p.iter().copied().collect::<Vec<_>>()).map_err(to_py)?,
            DepthMap::new(d.shape()[0], d.shape()[1], d.iter().copied().collect()).map_err(to_py)?,
            FeatureMap::new(f.shape()[0], f.shape()[1], f.shape()[2], f.iter().copied().collect())
                .map_err(to_py)?,
            format!("{i:03}").as_str(),
        )
        .map_err(to_py)?;
        captures.push(capture);
    }
    let scene = Scene {
        captures,
        anchor: None,
    };
    let s = settings(
        TokenizeSettings::default(),
        voxel_size,
        max_tokens,
        rope_base,
        fourier_seed,
        None,
    )?;
    run(py, &scene, &s)
}

/// World point for pixel `(u, v)` at the given depth.
#[pyfunction]
fn back_project_pixel(
    u: f64,
    v: f64,
    depth: f64,
    intrinsics: [f64; 4],
    pose: PyReadonlyArray2<'_, f64>,
) -> PyResult<[f64; 3]> {
    let [fx, fy, cx, cy] = intrinsics;
    let k = CameraIntrinsics::new(fx, fy, cx, cy).map_err(to_py)?;
    let t = CameraPose::from_row_major(&pose.as_array().iter().copied().collect::<Vec<_>>())
        .map_err(to_py)?;
    core::back_project_pixel([u, v], depth, &k, &t).map_err(to_py)
}

/// Rotary height encoding of `x` at position `p`.
#[pyfunction]
#[pyo3(signature = (x, p, base=core::DEFAULT_ROPE_BASE))]
fn rope_rotate<'py>(
    py: Python<'py>,
    x: PyReadonlyArray1<'py, f64>,
    p: f64,
    base: f64,
) -> PyResult<Bound<'py, PyArray1<f64>>> {
    let x = x.as_slice()?;
    let cfg = RopeConfig::new(x.len(), base).map_err(to_py)?;
    Ok(core::rope_rotate(x, p, &cfg).map_err(to_py)?.into_pyarray(py))
}

#[allow(clippy::too_many_arguments)]
fn batch_and_config(
    lp_pos: &[f64],
    lp_negans: &[f64],
    lp_negscene: &[f64],
    reference: Option<(&[f64], &[f64], &[f64])>,
    w_a: f64,
    w_s: f64,
    beta_a: f64,
    beta_s: f64,
) -> PyResult<(SceneDpoBatch, SceneDpoConfig)> {
    let n = lp_pos.len();
    let same = |len: usize| len == n;
    if !same(lp_negans.len()) || !same(lp_negscene.len()) {
        return Err(to_py(core::Error::InvalidConfig(
            "log-probability arrays must have equal length".into(),
        )));
    }
    if let Some((a, b, c)) = reference {
        if !same(a.len()) || !same(b.len()) || !same(c.len()) {
            return Err(to_py(core::Error::InvalidConfig(
                "reference arrays must match the policy arrays".into(),
            )));
        }
    }
    let records = (0..n)
        .map(|i| {
            let r = LogProbRecord::new(lp_pos[i], lp_negans[i], lp_negscene[i]);
            match reference {
                Some((a, b, c)) => r.with_reference(a[i], b[i], c[i]),
                None => r,
            }
        })
        .collect();
    let cfg = SceneDpoConfig {
        w_a,
        w_s,
        beta_a,
        beta_s,
        reference_free: reference.is_none(),
    };
    Ok((SceneDpoBatch::new(records).map_err(to_py)?, cfg))
}

type Reference<'py> = Option<(
    PyReadonlyArray1<'py, f64>,
    PyReadonlyArray1<'py, f64>,
    PyReadonlyArray1<'py, f64>,
)>;

/// Preference loss over a batch. Returns a dict with `total`, `L_a`, `L_s`,
/// `L_nll`, `answer_acc`, `scene_acc` and `grad`, an `(n, 3)` array of
/// derivatives with respect to `(lp_pos, lp_negans, lp_negscene)`.
#[pyfunction]
#[pyo3(signature = (lp_pos, lp_negans, lp_negscene, *, reference=None, w_a=0.5, w_s=0.5, beta_a=0.2, beta_s=0.03))]
#[allow(clippy::too_many_arguments)]
fn dpo_loss<'py>(
    py: Python<'py>,
    lp_pos: PyReadonlyArray1<'py, f64>,
    lp_negans: PyReadonlyArray1<'py, f64>,
    lp_negscene: PyReadonlyArray1<'py, f64>,
    reference: Reference<'py>,
    w_a: f64,
    w_s: f64,
    beta_a: f64,
    beta_s: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let refs = match &reference {
        Some((a, b, c)) => Some((a.as_slice()?, b.as_slice()?, c.as_slice()?)),
        None => None,
    };
    let (batch, cfg) = batch_and_config(
        lp_pos.as_slice()?,
        lp_negans.as_slice()?,
        lp_negscene.as_slice()?,
        refs,
        w_a,
        w_s,
        beta_a,
        beta_s,
    )?;
    let report = dpo::loss(&batch, &cfg).map_err(to_py)?;
    let grads = dpo::grad(&batch, &cfg).map_err(to_py)?;
    let (answer_acc, scene_acc) = dpo::accuracy_metrics(&batch);
    let flat: Vec<f64> = grads
        .iter()
        .flat_map(|g| [g.d_lp_pos, g.d_lp_negans, g.d_lp_negscene])
        .collect();

    let out = PyDict::new(py);
    out.set_item("total", report.total)?;
    out.set_item("L_a", report.answer_loss)?;
    out.set_item("L_s", report.scene_loss)?;
    out.set_item("L_nll", report.nll_loss)?;
    out.set_item("answer_acc", answer_acc)?;
    out.set_item("scene_acc", scene_acc)?;
    out.set_item("grad", flat.into_pyarray(py).reshape([grads.len(), 3])?)?;
    Ok(out)
}

fn rules_from(path: Option<PathBuf>) -> PyResult<TemplateRules> {
    match path {
        Some(p) => TemplateRules::from_path(&p).map_err(to_py),
        None => Ok(TemplateRules::default_rules()),
    }
}

#[pyfunction]
#[pyo3(signature = (answer, rules=None))]
fn normalize_answer(answer: &str, rules: Option<PathBuf>) -> PyResult<String> {
    Ok(core::normalize_answer(answer, &rules_from(rules)?))
}

/// Template frequencies and top-k coverage. Returns a dict with `k`,
/// `coverage`, `size` and `top`, a list of `(template, count)` pairs.
#[pyfunction]
#[pyo3(signature = (answers, k=core::DEFAULT_TOP_K, rules=None))]
fn template_coverage<'py>(
    py: Python<'py>,
    answers: Vec<String>,
    k: usize,
    rules: Option<PathBuf>,
) -> PyResult<Bound<'py, PyDict>> {
    let report = core::top_k_coverage(&answers, &rules_from(rules)?, k).map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("k", report.top_k)?;
    out.set_item("coverage", report.coverage)?;
    out.set_item("size", report.corpus_size)?;
    let top: Vec<(String, usize)> = report
        .top()
        .iter()
        .map(|t| (t.template.clone(), t.count))
        .collect();
    out.set_item("top", top)?;
    Ok(out)
}

/// Write a synthetic box-room scene to `output`; returns its ground truth.
#[pyfunction]
#[pyo3(signature = (output, *, seed=0, frames=50, feature_size=64, depth_scale=2, dim=64, anchor=true))]
#[allow(clippy::too_many_arguments)]
fn synth<'py>(
    py: Python<'py>,
    output: PathBuf,
    seed: u64,
    frames: usize,
    feature_size: usize,
    depth_scale: usize,
    dim: usize,
    anchor: bool,
) -> PyResult<Bound<'py, PyDict>> {
    let cfg = core::synth::SynthConfig {
        seed,
        frames,
        feature_size,
        depth_scale,
        dim,
        anchor,
        ..Default::default()
    };
    let scene = py
        .detach(|| {
            let scene = core::synth::generate(&cfg)?;
            scene.write(&output)?;
            Ok::<_, core::Error>(scene)
        })
        .map_err(to_py)?;
    let out = PyDict::new(py);
    out.set_item("manifest", output.join("manifest.toml"))?;
    out.set_item("occupied_voxels", scene.truth.occupied_voxels)?;
    out.set_item("occupied_columns", scene.truth.occupied_columns)?;
    Ok(out)
}

#[pymodule]
fn cfg_tokenizer_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("CfgError", m.py().get_type::<CfgError>())?;
    m.add_class::<TokenGrid>()?;
    m.add_function(wrap_pyfunction!(tokenize_manifest, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize_frames, m)?)?;
    m.add_function(wrap_pyfunction!(back_project_pixel, m)?)?;
    m.add_function(wrap_pyfunction!(rope_rotate, m)?)?;
    m.add_function(wrap_pyfunction!(dpo_loss, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_answer, m)?)?;
    m.add_function(wrap_pyfunction!(template_coverage, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    Ok(())
}
