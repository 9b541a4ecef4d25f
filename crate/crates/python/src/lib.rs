//! Python bindings: `import pygpdf`.

use std::path::PathBuf;

use gpdf::inducing;
use gpdf::mesher::{extract_contour_2d, extract_isosurface_3d};
use gpdf::odometry::{self, RegistrationOptions};
use gpdf::persist;
use gpdf::planner::{self, PlanConfig};
use gpdf::{
    oracle, DistanceField, Field as CoreField, FieldConfig, FieldSample, FieldVariant, GridSpec, KernelFamily,
    KernelSpec, PointCloud, Pose, SubmapGrid as CoreGrid, SubmapParams,
};
use pyo3::exceptions::{PyRuntimeError, PyTypeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: gpdf::Error) -> PyErr {
    if e.is_numerical() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn cloud(points: &[Vec<f64>]) -> PyResult<PointCloud> {
    let dim = points
        .first()
        .map(Vec::len)
        .ok_or_else(|| PyValueError::new_err("no points given"))?;
    PointCloud::from_points(dim, points).map_err(py_err)
}

fn variant(name: &str) -> PyResult<FieldVariant> {
    match name.to_ascii_lowercase().as_str() {
        "loggpis" | "log-gpis" => Ok(FieldVariant::LogGpis),
        "reverting" => Ok(FieldVariant::Reverting),
        other => Err(PyValueError::new_err(format!("unknown variant {other:?}"))),
    }
}

fn config(
    cloud: &PointCloud,
    variant_name: &str,
    kernel: Option<&str>,
    length_scale: Option<f64>,
    rate: Option<f64>,
    noise: Option<f64>,
) -> PyResult<FieldConfig> {
    let v = variant(variant_name)?;
    let family: Option<KernelFamily> = kernel.map(str::parse).transpose().map_err(py_err)?;
    let mut cfg = match (v, length_scale, rate) {
        (_, Some(_), Some(_)) => return Err(PyValueError::new_err("give length_scale or rate, not both")),
        (FieldVariant::Reverting, _, Some(_)) => {
            return Err(PyValueError::new_err("rate applies to the loggpis variant only"))
        }
        (FieldVariant::Reverting, Some(l), None) => FieldConfig::reverting(
            KernelSpec::new(family.unwrap_or(KernelFamily::SquaredExponential), l, 1.0).map_err(py_err)?,
        ),
        (FieldVariant::LogGpis, None, Some(r)) => {
            FieldConfig::log_gpis(family.unwrap_or(KernelFamily::Matern12), r).map_err(py_err)?
        }
        (FieldVariant::LogGpis, Some(l), None) => {
            let mut cfg = FieldConfig::log_gpis(KernelFamily::Matern12, 1.0).map_err(py_err)?;
            cfg.kernel = KernelSpec::new(family.unwrap_or(KernelFamily::Matern12), l, 1.0).map_err(py_err)?;
            cfg
        }
        (_, None, None) => {
            let mut cfg = FieldConfig::from_cloud(cloud, v).map_err(py_err)?;
            if let Some(f) = family {
                cfg.kernel = match v {
                    FieldVariant::Reverting => KernelSpec::new(f, cfg.kernel.length_scale, 1.0),
                    FieldVariant::LogGpis => KernelSpec::from_rate(f, cfg.kernel.logpis_rate),
                }
                .map_err(py_err)?;
            }
            cfg
        }
    };
    if let Some(n) = noise {
        cfg = cfg.with_noise(n);
    }
    cfg.validate().map_err(py_err)?;
    Ok(cfg)
}

fn sample_dict<'py>(py: Python<'py>, s: FieldSample) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("distance", s.distance)?;
    d.set_item("gradient", s.gradient)?;
    d.set_item("normal", s.normal)?;
    d.set_item("occupancy", s.occupancy)?;
    d.set_item("uncertainty", s.uncertainty)?;
    d.set_item("valid_gradient", s.valid_gradient)?;
    Ok(d)
}

/// A distance field fitted to one point cloud.
#[pyclass(frozen, module = "pygpdf")]
struct Field {
    inner: CoreField,
}

#[pymethods]
impl Field {
    #[new]
    #[pyo3(signature = (points, variant = "reverting", kernel = None, length_scale = None, rate = None, noise = None))]
    fn new(
        points: Vec<Vec<f64>>,
        variant: &str,
        kernel: Option<&str>,
        length_scale: Option<f64>,
        rate: Option<f64>,
        noise: Option<f64>,
    ) -> PyResult<Self> {
        let c = cloud(&points)?;
        let cfg = config(&c, variant, kernel, length_scale, rate, noise)?;
        Ok(Self {
            inner: CoreField::build(&c, cfg).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: persist::load_field(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        persist::save_field(&path, &self.inner).map_err(py_err)
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn length_scale(&self) -> f64 {
        self.inner.config().kernel.length_scale
    }

    fn query<'py>(&self, py: Python<'py>, q: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        sample_dict(py, self.inner.query(&q).map_err(py_err)?)
    }

    /// Distances at many points.
    fn distance(&self, qs: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        self.inner.distance_batch(&qs).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        let c = self.inner.config();
        format!(
            "Field(dim={}, points={}, variant={:?}, kernel={:?}, length_scale={})",
            self.inner.dim(),
            self.inner.points().len(),
            c.variant,
            c.kernel.family,
            c.kernel.length_scale
        )
    }
}

/// Incrementally built grid of local fields.
#[pyclass(module = "pygpdf")]
struct SubmapGrid {
    inner: CoreGrid,
}

#[pymethods]
impl SubmapGrid {
    #[new]
    #[pyo3(signature = (dim, variant = "reverting", length_scale = 0.1, block_size = None, halo = None, noise = None))]
    fn new(
        dim: usize,
        variant: &str,
        length_scale: f64,
        block_size: Option<f64>,
        halo: Option<f64>,
        noise: Option<f64>,
    ) -> PyResult<Self> {
        let mut cfg = match self::variant(variant)? {
            FieldVariant::Reverting => FieldConfig::reverting(
                KernelSpec::new(KernelFamily::SquaredExponential, length_scale, 1.0).map_err(py_err)?,
            ),
            FieldVariant::LogGpis => {
                FieldConfig::log_gpis(KernelFamily::Matern12, 1.0 / length_scale).map_err(py_err)?
            }
        };
        if let Some(n) = noise {
            cfg = cfg.with_noise(n);
        }
        let mut params = SubmapParams::for_length_scale(length_scale);
        if let Some(b) = block_size {
            params.block_size = b;
        }
        if let Some(h) = halo {
            params.halo_margin = h;
        }
        Ok(Self {
            inner: CoreGrid::new(dim, cfg, params).map_err(py_err)?,
        })
    }

    /// Inserts points given in the sensor frame; `pose` is (tx, ty, theta) in 2D.
    #[pyo3(signature = (points, pose = None))]
    fn insert<'py>(
        &mut self,
        py: Python<'py>,
        points: Vec<Vec<f64>>,
        pose: Option<Vec<f64>>,
    ) -> PyResult<Bound<'py, PyDict>> {
        let dim = self.inner.dim();
        let pose = parse_pose(pose, dim)?;
        let r = self.inner.insert_points(&cloud(&points)?, &pose).map_err(py_err)?;
        let d = PyDict::new(py);
        d.set_item("inserted", r.inserted)?;
        d.set_item("duplicates", r.duplicates)?;
        d.set_item("overflow", r.overflow)?;
        d.set_item("skipped_non_finite", r.skipped_non_finite)?;
        d.set_item("dirty_blocks", r.dirty_blocks)?;
        Ok(d)
    }

    fn query<'py>(&self, py: Python<'py>, q: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
        sample_dict(py, self.inner.query_fused(&q).map_err(py_err)?)
    }

    #[getter]
    fn block_count(&self) -> usize {
        self.inner.block_count()
    }

    #[getter]
    fn point_count(&self) -> usize {
        self.inner.point_count()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        persist::save_grid(&path, &self.inner).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: persist::load_grid(&path).map_err(py_err)?,
        })
    }
}

fn parse_pose(pose: Option<Vec<f64>>, dim: usize) -> PyResult<Pose> {
    match (pose.as_deref(), dim) {
        (None, _) => Ok(Pose::identity(dim)),
        (Some(&[tx, ty, th]), 2) => Ok(Pose::from_2d(tx, ty, th)),
        (Some(&[tx, ty, tz, rx, ry, rz]), 3) => Ok(Pose::from_translation_rotvec([tx, ty, tz], [rx, ry, rz])),
        _ => Err(PyValueError::new_err(
            "pose is (tx, ty, theta) in 2D or (tx, ty, tz, rx, ry, rz) in 3D",
        )),
    }
}

fn pose_tuple(pose: &Pose) -> Vec<f64> {
    let t = pose.translation();
    if pose.dim() == 2 {
        vec![t[0], t[1], pose.angle()]
    } else {
        let mut v = vec![t[0], t[1], t[2]];
        v.extend(pose.quaternion());
        v
    }
}

/// Runs `f` on whichever field type `obj` wraps.
fn with_field<R>(obj: &Bound<'_, PyAny>, f: impl FnOnce(&dyn DistanceField) -> PyResult<R>) -> PyResult<R> {
    if let Ok(field) = obj.extract::<PyRef<'_, Field>>() {
        return f(&field.inner);
    }
    if let Ok(grid) = obj.extract::<PyRef<'_, SubmapGrid>>() {
        return f(&grid.inner);
    }
    Err(PyTypeError::new_err("expected a Field or SubmapGrid"))
}

/// Exact distance from `q` to the nearest point.
#[pyfunction]
fn brute_force_edf(points: Vec<Vec<f64>>, q: Vec<f64>) -> PyResult<f64> {
    oracle::brute_force_edf(&cloud(&points)?, &q).map_err(py_err)
}

/// Aligns `scan` to the field. Returns a dict with the pose as (tx, ty, theta)
/// in 2D or (tx, ty, tz, qx, qy, qz, qw) in 3D.
#[pyfunction]
#[pyo3(signature = (field, scan, init = None, max_iters = 50))]
fn register_scan<'py>(
    py: Python<'py>,
    field: &Bound<'py, PyAny>,
    scan: Vec<Vec<f64>>,
    init: Option<Vec<f64>>,
    max_iters: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let scan = cloud(&scan)?;
    let init = parse_pose(init, scan.dim())?;
    let opts = RegistrationOptions {
        max_iters,
        ..RegistrationOptions::default()
    };
    let r = with_field(field, |f| {
        odometry::register_scan(f, &scan, &init, &opts).map_err(py_err)
    })?;
    let d = PyDict::new(py);
    d.set_item("pose", pose_tuple(&r.pose))?;
    d.set_item("iterations", r.iterations)?;
    d.set_item("converged", r.converged)?;
    d.set_item("initial_rmse", r.initial_rmse)?;
    d.set_item("final_rmse", r.final_rmse)?;
    d.set_item("cost_history", r.cost_history)?;
    Ok(d)
}

/// Optimised waypoints from `start` to `goal`.
#[pyfunction]
#[pyo3(signature = (field, start, goal, margin = 0.2, waypoints = 50))]
fn plan_path(
    field: &Bound<'_, PyAny>,
    start: Vec<f64>,
    goal: Vec<f64>,
    margin: f64,
    waypoints: usize,
) -> PyResult<(Vec<Vec<f64>>, Vec<f64>)> {
    let cfg = PlanConfig {
        safety_margin: margin,
        num_waypoints: waypoints,
        ..PlanConfig::default()
    };
    let r = with_field(field, |f| planner::plan_path(f, &start, &goal, &cfg).map_err(py_err))?;
    Ok((r.trajectory.waypoints, r.cost_history))
}

/// Level set `d = iso` over a box. 3D returns `(vertices, triangles)`;
/// 2D returns a list of polylines.
#[pyfunction]
#[pyo3(signature = (field, lower, upper, cell, iso = None))]
fn meshing(
    py: Python<'_>,
    field: &Bound<'_, PyAny>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    cell: f64,
    iso: Option<f64>,
) -> PyResult<Py<PyAny>> {
    let mut grid = GridSpec::new(lower, upper, cell);
    if let Some(t) = iso {
        grid = grid.with_iso(t);
    }
    with_field(field, |f| {
        if f.dim() == 3 {
            let mesh = extract_isosurface_3d(f, &grid).map_err(py_err)?;
            Ok((mesh.vertices, mesh.triangles).into_pyobject(py)?.into_any().unbind())
        } else {
            let lines = extract_contour_2d(f, &grid).map_err(py_err)?;
            Ok(lines.into_pyobject(py)?.into_any().unbind())
        }
    })
}

/// Candidates projected onto the surface and thinned to `spacing`.
#[pyfunction]
#[pyo3(signature = (field, candidates, spacing, budget = usize::MAX))]
fn select_pseudo_points(
    field: &Bound<'_, PyAny>,
    candidates: Vec<Vec<f64>>,
    spacing: f64,
    budget: usize,
) -> PyResult<Vec<Vec<f64>>> {
    with_field(field, |f| {
        let set = inducing::select_pseudo_points(f, &candidates, spacing, budget).map_err(py_err)?;
        Ok(set.points.to_vecs())
    })
}

#[pymodule]
fn pygpdf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Field>()?;
    m.add_class::<SubmapGrid>()?;
    m.add_function(wrap_pyfunction!(brute_force_edf, m)?)?;
    m.add_function(wrap_pyfunction!(register_scan, m)?)?;
    m.add_function(wrap_pyfunction!(plan_path, m)?)?;
    m.add_function(wrap_pyfunction!(meshing, m)?)?;
    m.add_function(wrap_pyfunction!(select_pseudo_points, m)?)?;
    Ok(())
}
