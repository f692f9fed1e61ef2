//! Python bindings: point clouds, transforms, distance fields, the
//! registration solvers and the experiment runner.

use nalgebra::{Matrix3, Vector3};
use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use bonereg::baselines::{icp, IcpConfig, IcpVariant};
use bonereg::distance_field::{
    evaluate_udf, train_udf, DistanceField, GridConfig, GridVolume, NeuralUdf, UdfConfig,
};
use bonereg::geometry::{io, preprocess, Point, PointCloud, RigidTransform, ScaleSource};
use bonereg::harness::{run_experiment as run_protocol, ExperimentConfig};
use bonereg::metrics::transform_errors;
use bonereg::neural_reg::{register as neural_register, RegConfig};
use bonereg::synth::{generate, perturb, Shape, SynthSpec};
use bonereg::Error;

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        Error::Parse { .. } => PyIOError::new_err(e.to_string()),
        Error::InvalidConfig(_) | Error::UnknownMethod(_) | Error::InvalidRotation(_) | Error::Json(_) => {
            PyValueError::new_err(e.to_string())
        }
        other => PyRuntimeError::new_err(other.to_string()),
    }
}

fn points_of(rows: Vec<[f64; 3]>) -> Vec<Point> {
    rows.into_iter().map(|p| Point::new(p[0], p[1], p[2])).collect()
}

#[pyclass(name = "PointCloud", module = "bonereg", from_py_object)]
#[derive(Clone)]
struct PyPointCloud {
    inner: PointCloud,
}

#[pymethods]
impl PyPointCloud {
    #[new]
    fn new(points: Vec<[f64; 3]>) -> PyResult<Self> {
        Ok(Self { inner: PointCloud::new(points_of(points)).map_err(to_py)? })
    }

    /// Reads a PLY or XYZ file.
    #[staticmethod]
    fn read(path: &str) -> PyResult<Self> {
        Ok(Self { inner: io::read_cloud(path).map_err(to_py)? })
    }

    fn write_ply(&self, path: &str) -> PyResult<()> {
        io::write_ply(path, &self.inner).map_err(to_py)
    }

    fn points(&self) -> Vec<[f64; 3]> {
        self.inner.points().iter().map(|p| [p.x, p.y, p.z]).collect()
    }

    fn centroid(&self) -> PyResult<[f64; 3]> {
        let c = self.inner.centroid().map_err(to_py)?;
        Ok([c.x, c.y, c.z])
    }

    /// Normalized copy and its `(scale, centroid)`.
    #[pyo3(signature = (voxel_size=0.002))]
    fn normalized(&self, voxel_size: f64) -> PyResult<(Self, f64, [f64; 3])> {
        let (c, rec) = preprocess(&self.inner, ScaleSource::Own, voxel_size).map_err(to_py)?;
        Ok((Self { inner: c }, rec.scale, rec.centroid))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __repr__(&self) -> String {
        format!("PointCloud({} points)", self.inner.len())
    }
}

#[pyclass(name = "RigidTransform", module = "bonereg", from_py_object)]
#[derive(Clone)]
struct PyRigidTransform {
    inner: RigidTransform,
}

#[pymethods]
impl PyRigidTransform {
    #[new]
    #[pyo3(signature = (rotation=None, translation=None))]
    fn new(rotation: Option<[[f64; 3]; 3]>, translation: Option<[f64; 3]>) -> PyResult<Self> {
        let r = rotation.unwrap_or([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let m = Matrix3::from_fn(|i, j| r[i][j]);
        let t = translation.unwrap_or([0.0; 3]);
        Ok(Self { inner: RigidTransform::from_matrix(&m, Vector3::from(t)).map_err(to_py)? })
    }

    /// From a scalar-first quaternion (normalized here) and a translation.
    #[staticmethod]
    fn from_quaternion(q: [f64; 4], translation: [f64; 3]) -> PyResult<Self> {
        let q = bonereg::geometry::Quaternion::from(q);
        Ok(Self { inner: RigidTransform::from_quaternion(&q, Vector3::from(translation)).map_err(to_py)? })
    }

    #[getter]
    fn rotation(&self) -> [[f64; 3]; 3] {
        let r = self.inner.rotation();
        [[r[(0, 0)], r[(0, 1)], r[(0, 2)]], [r[(1, 0)], r[(1, 1)], r[(1, 2)]], [r[(2, 0)], r[(2, 1)], r[(2, 2)]]]
    }

    #[getter]
    fn translation(&self) -> [f64; 3] {
        let t = self.inner.translation();
        [t.x, t.y, t.z]
    }

    #[getter]
    fn quaternion(&self) -> [f64; 4] {
        let q = self.inner.quaternion();
        [q[0], q[1], q[2], q[3]]
    }

    /// `self ∘ other`.
    fn compose(&self, other: &Self) -> Self {
        Self { inner: self.inner.compose(&other.inner) }
    }

    fn inverse(&self) -> Self {
        Self { inner: self.inner.inverse() }
    }

    fn apply(&self, cloud: &PyPointCloud) -> PyPointCloud {
        PyPointCloud { inner: self.inner.apply(&cloud.inner) }
    }

    fn __repr__(&self) -> String {
        format!("RigidTransform(rotation={:?}, translation={:?})", self.rotation(), self.translation())
    }
}

#[pyclass(name = "NeuralUdf", module = "bonereg")]
struct PyNeuralUdf {
    inner: NeuralUdf,
}

#[pymethods]
impl PyNeuralUdf {
    /// Trains a field on a normalized cloud. `config` is a JSON object with
    /// any subset of the training options; `compact` starts from the small
    /// 4x32 network instead of the 8x256 default.
    #[staticmethod]
    #[pyo3(signature = (cloud, config=None, compact=true, seed=0))]
    fn train(py: Python<'_>, cloud: &PyPointCloud, config: Option<&str>, compact: bool, seed: u64) -> PyResult<Self> {
        let mut cfg = match config {
            Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None if compact => UdfConfig::compact(),
            None => UdfConfig::default(),
        };
        cfg.seed = seed;
        let c = cloud.inner.clone();
        let inner = py.detach(move || train_udf(&c, &cfg)).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: NeuralUdf::load(path).map_err(to_py)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    fn query(&self, points: Vec<[f64; 3]>) -> Vec<f64> {
        self.inner.query_batch(&points_of(points))
    }

    /// `(uniform_mae, near_surface_mae)` against exact distances to `cloud`.
    #[pyo3(signature = (cloud, queries=10_000, band=0.05, seed=0))]
    fn accuracy(&self, cloud: &PyPointCloud, queries: usize, band: f64, seed: u64) -> PyResult<(f64, f64)> {
        let a = evaluate_udf(&self.inner, &cloud.inner, queries, band, seed).map_err(to_py)?;
        Ok((a.uniform_mae, a.near_surface_mae))
    }
}

#[pyclass(name = "GridVolume", module = "bonereg")]
struct PyGridVolume {
    inner: GridVolume,
}

#[pymethods]
impl PyGridVolume {
    #[staticmethod]
    #[pyo3(signature = (cloud, resolution=128))]
    fn build(py: Python<'_>, cloud: &PyPointCloud, resolution: usize) -> PyResult<Self> {
        let cfg = GridConfig { resolution, ..Default::default() };
        let c = cloud.inner.clone();
        let inner = py.detach(move || GridVolume::build(&c, &cfg)).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self { inner: GridVolume::load(path).map_err(to_py)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        self.inner.save(path).map_err(to_py)
    }

    fn query(&self, points: Vec<[f64; 3]>) -> Vec<f64> {
        self.inner.query_batch(&points_of(points))
    }

    #[getter]
    fn resolution(&self) -> usize {
        self.inner.resolution()
    }
}

/// Runs `f` against whichever field type `field` holds.
fn with_field<T>(field: &Bound<'_, PyAny>, f: impl FnOnce(&dyn DistanceField) -> T) -> PyResult<T> {
    if let Ok(u) = field.cast::<PyNeuralUdf>() {
        return Ok(f(&u.borrow().inner));
    }
    if let Ok(g) = field.cast::<PyGridVolume>() {
        return Ok(f(&g.borrow().inner));
    }
    Err(PyValueError::new_err("field must be a NeuralUdf or GridVolume"))
}

/// Multi-head registration of `partial` against `field`. Returns the best
/// transform and its mean field value.
#[pyfunction]
#[pyo3(signature = (partial, field, heads=256, iterations=1000, batch_size=32, depth=4, seed=0))]
fn register(
    partial: &PyPointCloud,
    field: &Bound<'_, PyAny>,
    heads: usize,
    iterations: usize,
    batch_size: usize,
    depth: usize,
    seed: u64,
) -> PyResult<(PyRigidTransform, f64)> {
    let cfg = RegConfig { heads, iterations, batch_size, depth, seed, ..Default::default() };
    let reg = with_field(field, |f| neural_register(&partial.inner, f, &cfg))?.map_err(to_py)?;
    Ok((PyRigidTransform { inner: reg.best.transform }, reg.best.score))
}

/// ICP from `init`; `variant` is "point-to-point" or "point-to-plane".
#[pyfunction(name = "icp")]
#[pyo3(signature = (source, target, init=None, variant="point-to-point"))]
fn run_icp(
    source: &PyPointCloud,
    target: &PyPointCloud,
    init: Option<&PyRigidTransform>,
    variant: &str,
) -> PyResult<(PyRigidTransform, f64)> {
    let variant = match variant {
        "point-to-point" => IcpVariant::PointToPoint,
        "point-to-plane" => IcpVariant::PointToPlane,
        other => return Err(PyValueError::new_err(format!("unknown ICP variant `{other}`"))),
    };
    let init = init.map(|t| t.inner).unwrap_or_else(RigidTransform::identity);
    let cfg = IcpConfig { variant, ..Default::default() };
    let out = icp(&source.inner, &target.inner, &init, &cfg).map_err(to_py)?;
    Ok((PyRigidTransform { inner: out.transform }, out.rms))
}

/// `(rre_deg, rte)` between an estimate and the truth.
#[pyfunction]
fn errors(estimate: &PyRigidTransform, truth: &PyRigidTransform) -> PyResult<(f64, f64)> {
    transform_errors(&estimate.inner, &truth.inner).map_err(to_py)
}

/// Synthetic raw pair `(complete, partial, t_gt)`. `shape` is one of
/// "bone", "cylinder", "sphere", "half-pipe".
#[pyfunction]
#[pyo3(signature = (shape="bone", c_count=20_000, u_count=8_000, fraction=1.0, noise=0.0, outliers=0.0, seed=0))]
fn synth(
    shape: &str,
    c_count: usize,
    u_count: usize,
    fraction: f64,
    noise: f64,
    outliers: f64,
    seed: u64,
) -> PyResult<(PyPointCloud, PyPointCloud, PyRigidTransform)> {
    let shape = match shape {
        "bone" => Shape::AsymmetricBone { length_ratio: 1.0 },
        "cylinder" => Shape::SymmetricCylinder { marker: 0.15 },
        "sphere" => Shape::Sphere,
        "half-pipe" => Shape::HalfPipe,
        other => return Err(PyValueError::new_err(format!("unknown shape `{other}`"))),
    };
    let spec = SynthSpec { shape, c_count, u_count, fraction, noise, outliers, seed, ..Default::default() };
    let p = generate(&spec).map_err(to_py)?;
    Ok((PyPointCloud { inner: p.c_raw }, PyPointCloud { inner: p.u_raw }, PyRigidTransform { inner: p.t_gt }))
}

/// Seeded random perturbation `(moved, applied)`.
#[pyfunction(name = "perturb")]
fn py_perturb(cloud: &PyPointCloud, seed: u64) -> (PyPointCloud, PyRigidTransform) {
    let (c, t) = perturb(&cloud.inner, seed);
    (PyPointCloud { inner: c }, PyRigidTransform { inner: t })
}

/// Runs an experiment from a JSON configuration and returns the number of
/// trial records written to its output directory.
#[pyfunction]
fn run_experiment(py: Python<'_>, config: &str) -> PyResult<usize> {
    let cfg: ExperimentConfig = serde_json::from_str(config).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let recs = py.detach(move || run_protocol(&cfg)).map_err(to_py)?;
    Ok(recs.len())
}

#[pymodule]
fn _bonereg(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyPointCloud>()?;
    m.add_class::<PyRigidTransform>()?;
    m.add_class::<PyNeuralUdf>()?;
    m.add_class::<PyGridVolume>()?;
    m.add_function(wrap_pyfunction!(register, m)?)?;
    m.add_function(wrap_pyfunction!(run_icp, m)?)?;
    m.add_function(wrap_pyfunction!(errors, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(py_perturb, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
