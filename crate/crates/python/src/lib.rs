//! Python bindings: lattice boxes, spectral fields, the bilinear maps, the
//! integrator, the Picard expansion, ensembles and the theory coefficients.

use kpnf_core::dynamics::{evolve as core_evolve, integrate, IntegratorConfig};
use kpnf_core::ensemble::{
    all_pairs, all_triples, estimate_moments, g_moments, normalize_profile, sample_u0 as core_sample_u0,
    EnsembleConfig, RandomLaw, SpectrumProfile,
};
use kpnf_core::experiments::{default_profile, verify_identities, VerifyOptions};
use kpnf_core::theory::{box_limit_parts, PairConvention, TheoryContext, TripleConvention};
use kpnf_core::{KpError, LatticeBox, OperatorContext, PicardBundle, SpectralField, WaveVector};
use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn err(e: KpError) -> PyErr {
    match e {
        KpError::NonFinite { .. } | KpError::NonContraction { .. } | KpError::MaxIterExceeded { .. } => {
            PyRuntimeError::new_err(e.to_string())
        }
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn wv(n: (i32, i32)) -> PyResult<WaveVector> {
    WaveVector::new(n.0, n.1).map_err(err)
}

fn json_to_py<'py>(py: Python<'py>, text: &str) -> PyResult<Bound<'py, PyAny>> {
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "LatticeBox", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyLattice(LatticeBox);

#[pymethods]
impl PyLattice {
    #[new]
    fn new(n1_max: i32, n2_max: i32) -> PyResult<Self> {
        LatticeBox::new(n1_max, n2_max).map(Self).map_err(err)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!("LatticeBox({}, {})", self.0.n1_max, self.0.n2_max)
    }

    /// Modes in storage order as `(n1, n2)` tuples.
    fn modes(&self) -> Vec<(i32, i32)> {
        self.0.modes().map(|n| (n.n1, n.n2)).collect()
    }

    fn index_of(&self, n: (i32, i32)) -> PyResult<Option<usize>> {
        Ok(self.0.index_of(wv(n)?))
    }

    fn max_abs_omega(&self) -> f64 {
        self.0.max_abs_omega()
    }
}

#[pyclass(name = "Law", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyLaw(RandomLaw);

#[pymethods]
impl PyLaw {
    #[staticmethod]
    fn steinhaus() -> Self {
        Self(RandomLaw::steinhaus())
    }

    #[staticmethod]
    fn constant(r: f64) -> PyResult<Self> {
        Self::checked(RandomLaw::Constant { r })
    }

    #[staticmethod]
    fn two_point(r1: f64, r2: f64, p: f64) -> PyResult<Self> {
        Self::checked(RandomLaw::TwoPoint { r1, r2, p })
    }

    #[staticmethod]
    fn clipped_gaussian(sigma: f64, r_max: f64) -> PyResult<Self> {
        Self::checked(RandomLaw::ClippedGaussian { sigma, r_max })
    }

    /// `(E|g|^2, E|g|^4)`.
    fn moments(&self) -> (f64, f64) {
        g_moments(&self.0)
    }

    fn __repr__(&self) -> String {
        format!("{:?}", self.0)
    }
}

impl PyLaw {
    fn checked(law: RandomLaw) -> PyResult<Self> {
        law.validate().map_err(err)?;
        Ok(Self(law))
    }
}

#[pyclass(name = "Profile", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyProfile(SpectrumProfile);

#[pymethods]
impl PyProfile {
    /// `|n|^{-3}` normalized so that every sample lies in the unit `H^{1.5}` ball.
    #[staticmethod]
    fn default(lattice: &PyLattice, law: &PyLaw) -> PyResult<Self> {
        default_profile(lattice.0, &law.0).map(Self).map_err(err)
    }

    #[staticmethod]
    fn power_decay(lattice: &PyLattice, amplitude: f64, r: f64) -> PyResult<Self> {
        SpectrumProfile::power_decay(lattice.0, amplitude, r).map(Self).map_err(err)
    }

    fn normalized(&self, law: &PyLaw, s: f64) -> PyResult<Self> {
        normalize_profile(&self.0, &law.0, s).map(Self).map_err(err)
    }

    fn values(&self) -> Vec<f64> {
        self.0.values().to_vec()
    }
}

#[pyclass(name = "Field", skip_from_py_object)]
#[derive(Clone)]
struct PyField(SpectralField);

#[pymethods]
impl PyField {
    #[new]
    fn new(lattice: &PyLattice, coeffs: Vec<Complex64>) -> PyResult<Self> {
        SpectralField::from_vec(lattice.0, coeffs).map(Self).map_err(err)
    }

    #[staticmethod]
    fn zeros(lattice: &PyLattice) -> Self {
        Self(SpectralField::zeros(lattice.0))
    }

    fn lattice(&self) -> PyLattice {
        PyLattice(self.0.lattice())
    }

    fn coeffs(&self) -> Vec<Complex64> {
        self.0.coeffs().to_vec()
    }

    fn __getitem__(&self, n: (i32, i32)) -> PyResult<Complex64> {
        self.0
            .get(wv(n)?)
            .ok_or_else(|| PyValueError::new_err(format!("{n:?} is outside the box")))
    }

    fn hs_norm(&self, s: f64) -> f64 {
        self.0.hs_norm(s)
    }

    fn l2_norm_sqr(&self) -> f64 {
        self.0.l2_norm_sqr()
    }

    fn reality_defect(&self) -> f64 {
        self.0.reality_defect()
    }

    fn apply_l(&self) -> Self {
        Self(self.0.apply_l())
    }

    fn __add__(&self, other: &PyField) -> PyResult<Self> {
        self.0.check_same_box(&other.0).map_err(err)?;
        Ok(Self(self.0.add(&other.0)))
    }

    fn __sub__(&self, other: &PyField) -> PyResult<Self> {
        self.0.check_same_box(&other.0).map_err(err)?;
        Ok(Self(self.0.sub(&other.0)))
    }

    fn __mul__(&self, factor: Complex64) -> Self {
        Self(self.0.scale(factor))
    }

    fn max_abs_diff(&self, other: &PyField) -> PyResult<f64> {
        self.0.check_same_box(&other.0).map_err(err)?;
        Ok(self.0.max_abs_diff(&other.0))
    }
}

#[pyfunction]
fn omega(n: (i32, i32)) -> PyResult<f64> {
    Ok(kpnf_core::omega(wv(n)?))
}

#[pyfunction]
fn delta(n: (i32, i32), k: (i32, i32), l: (i32, i32)) -> PyResult<f64> {
    kpnf_core::delta(wv(n)?, wv(k)?, wv(l)?).map_err(err)
}

#[pyfunction]
fn phi1(theta: f64, t: f64) -> Complex64 {
    kpnf_core::phi1(theta, t)
}

#[pyfunction]
#[pyo3(signature = (profile, law, seed, index=0))]
fn sample_u0(profile: &PyProfile, law: &PyLaw, seed: u64, index: u64) -> PyField {
    PyField(core_sample_u0(&profile.0, &law.0, seed, index))
}

#[pyclass(name = "Operators", frozen)]
struct PyOperators(OperatorContext);

#[pymethods]
impl PyOperators {
    #[new]
    fn new(lattice: &PyLattice) -> Self {
        Self(OperatorContext::new(lattice.0))
    }

    fn s_map(&self, u: &PyField, v: &PyField) -> PyResult<PyField> {
        self.0.s_map(&u.0, &v.0).map(PyField).map_err(err)
    }

    fn dx_product(&self, u: &PyField, v: &PyField) -> PyResult<PyField> {
        self.0.dx_product(&u.0, &v.0).map(PyField).map_err(err)
    }

    fn f_map(&self, a: &PyField, b: &PyField, c: &PyField) -> PyResult<PyField> {
        self.0.f_map(&a.0, &b.0, &c.0).map(PyField).map_err(err)
    }

    /// Field at time `t`; `dt` defaults to the stability-based step.
    #[pyo3(signature = (u0, eps, t, dt=None))]
    fn evolve(&self, py: Python<'_>, u0: &PyField, eps: f64, t: f64, dt: Option<f64>) -> PyResult<PyField> {
        let dt = dt.unwrap_or_else(|| IntegratorConfig::default_dt(&self.0));
        py.detach(|| core_evolve(&self.0, &u0.0, eps, t, dt)).map(PyField).map_err(err)
    }

    /// `(times, fields)` sampled every `stride` steps.
    #[pyo3(signature = (u0, eps, t, dt=None, stride=1))]
    fn trajectory(
        &self,
        py: Python<'_>,
        u0: &PyField,
        eps: f64,
        t: f64,
        dt: Option<f64>,
        stride: usize,
    ) -> PyResult<(Vec<f64>, Vec<PyField>)> {
        let dt = dt.unwrap_or_else(|| IntegratorConfig::default_dt(&self.0));
        let cfg = IntegratorConfig::new(dt, stride).map_err(err)?;
        let traj = py.detach(|| integrate(&self.0, &u0.0, eps, t, &cfg)).map_err(err)?;
        Ok((traj.times, traj.states.into_iter().map(PyField).collect()))
    }

    /// One-step expansion `u0 -> (a, b, c)` at time `t`.
    fn picard(&self, u0: &PyField, t: f64, eps: f64) -> PyResult<PyPicard> {
        PicardBundle::new(&self.0, &u0.0, t, eps).map(PyPicard).map_err(err)
    }
}

#[pyclass(name = "Picard", frozen)]
struct PyPicard(PicardBundle);

#[pymethods]
impl PyPicard {
    #[getter]
    fn a(&self) -> PyField {
        PyField(self.0.a.clone())
    }

    #[getter]
    fn b(&self) -> PyField {
        PyField(self.0.b.clone())
    }

    #[getter]
    fn c(&self) -> PyField {
        PyField(self.0.c.clone())
    }

    /// `a + eps b + eps^2 c`.
    fn truncated(&self) -> PyField {
        PyField(self.0.truncated_expansion())
    }

    /// Remainder `d` with `u(t) = a + eps b + eps^2 c + eps^3 d`.
    fn extract_d(&self, u_t: &PyField) -> PyResult<PyField> {
        self.0.extract_d(&u_t.0).map(PyField).map_err(err)
    }
}

/// Monte Carlo pair and triple moments over every index of the box,
/// returned as a dict.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (profile, law, eps, t, samples, seed=1, dt=None))]
fn ensemble_moments<'py>(
    py: Python<'py>,
    profile: &PyProfile,
    law: &PyLaw,
    eps: f64,
    t: f64,
    samples: u64,
    seed: u64,
    dt: Option<f64>,
) -> PyResult<Bound<'py, PyAny>> {
    let lat = profile.0.lattice();
    let ctx = OperatorContext::new(lat);
    let mut cfg = EnsembleConfig::new(profile.0.clone(), law.0, eps, t, samples, seed);
    cfg.pairs = all_pairs(lat);
    cfg.triples = all_triples(lat, false);
    cfg.dt = dt;
    let report = py.detach(|| estimate_moments(&ctx, &cfg)).map_err(err)?;
    json_to_py(py, &report.to_json().to_string())
}

/// Second- and first-order moment coefficients for a profile and law.
#[pyclass(name = "Theory", frozen)]
struct PyTheory(TheoryContext);

#[pymethods]
impl PyTheory {
    #[new]
    fn new(profile: &PyProfile, law: &PyLaw) -> PyResult<Self> {
        TheoryContext::new(profile.0.clone(), &law.0).map(Self).map_err(err)
    }

    /// `F_nn(t)`.
    fn f2(&self, n: (i32, i32), t: f64) -> PyResult<f64> {
        Ok(self.0.f2_diag(wv(n)?, t, PairConvention::Integral))
    }

    /// `F_nmp(t)`.
    fn f3(&self, n: (i32, i32), m: (i32, i32), p: (i32, i32), t: f64) -> PyResult<Complex64> {
        Ok(self.0.f3(wv(n)?, wv(m)?, wv(p)?, t, TripleConvention::Derived))
    }

    /// `(pair, triple, pair_majorant, triple_majorant)` of the weighted sums.
    fn weighted_sums(&self, s: f64, t: f64) -> (f64, f64, f64, f64) {
        let w = self.0.weighted_sums(s, TripleConvention::Derived);
        (w.pair(t), w.triple(t), w.pair_majorant, w.triple_majorant)
    }
}

/// `F_n^N(t)` for the profile `lambda` on the square of size `big_n`,
/// Gaussian moments.
#[pyfunction]
fn box_limit(n: (i32, i32), big_n: i32, lambda_n: f64, t: f64) -> PyResult<f64> {
    box_limit_parts(wv(n)?, big_n, lambda_n, t, 1.0, 2.0)
        .map(|p| p.total())
        .map_err(err)
}

/// `{name: (value, tolerance, passed)}` for the exact identities.
#[pyfunction]
#[pyo3(signature = (lattice, fields=10, seed=1))]
fn verify(py: Python<'_>, lattice: &PyLattice, fields: usize, seed: u64) -> PyResult<Vec<(String, f64, f64, bool)>> {
    let mut opts = VerifyOptions::new(lattice.0);
    opts.fields = fields;
    opts.seed = seed;
    let checks = py.detach(|| verify_identities(&opts)).map_err(err)?;
    Ok(checks.into_iter().map(|c| (c.name, c.value, c.tolerance, c.passed)).collect())
}

#[pymodule]
fn kpnf(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyLattice>()?;
    m.add_class::<PyLaw>()?;
    m.add_class::<PyProfile>()?;
    m.add_class::<PyField>()?;
    m.add_class::<PyOperators>()?;
    m.add_class::<PyPicard>()?;
    m.add_class::<PyTheory>()?;
    m.add_function(wrap_pyfunction!(omega, m)?)?;
    m.add_function(wrap_pyfunction!(delta, m)?)?;
    m.add_function(wrap_pyfunction!(phi1, m)?)?;
    m.add_function(wrap_pyfunction!(sample_u0, m)?)?;
    m.add_function(wrap_pyfunction!(ensemble_moments, m)?)?;
    m.add_function(wrap_pyfunction!(box_limit, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}
