//! Hyperbolic systems with viscosity: fluxes, spectra, and structure checks.
//!
//! A [`HyperbolicSystem`] bundles the flux `F`, an optional analytic
//! Jacobian (central differences otherwise), the viscosity matrix `B`, an
//! optional entropy pair `(η, q)` and an axis-aligned state region on which
//! the structural hypotheses are probed:
//!
//! 1. strict hyperbolicity — `DF(U)` has `n` real eigenvalues separated by
//!    at least `gap_min`;
//! 2. an entropy `η` with `Dη·DF = Dq` and `D²η > 0`;
//! 3. dissipativity — `D²η(U) v · B(U) v ≥ α |v|²` for some `α > 0`.
//!
//! Under these, the numbers of stable/unstable eigenvalues of `DF(U)` and
//! of `B(U)⁻¹ DF(U)` agree; [`HyperbolicSystem::eigen_signature_compare`]
//! checks that count equality point-wise and is exercised in bulk by the
//! verification battery.
//!
//! Eigenvectors returned by [`HyperbolicSystem::eigen_decompose`] are unit
//! length and deterministically oriented (largest-magnitude component
//! nonnegative, ties to the lowest index), so that downstream continuation
//! in the wave modules never sees spurious sign flips.

use crate::linalg::{self, LinalgError};
use crate::params::Numerics;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::fmt;
use std::sync::Arc;
use thiserror::Error;

pub type VectorFn = Arc<dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync>;
pub type MatrixFn = Arc<dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&DVector<f64>) -> f64 + Send + Sync>;

/// Largest supported number of equations.
pub const MAX_DIM: usize = 4;

#[derive(Debug, Error)]
pub enum SystemError {
    #[error("system dimension {n} is outside 1..={MAX_DIM}")]
    BadDimension { n: usize },
    #[error("state has {got} components, system has {expect}")]
    DimensionMismatch { expect: usize, got: usize },
    #[error("not strictly hyperbolic at {at:?}: {detail}")]
    NonHyperbolic { at: Vec<f64>, detail: String },
    #[error("state {at:?} lies outside the admissible region")]
    OutOfRegion { at: Vec<f64> },
    #[error("viscosity matrix is singular at {at:?}")]
    SingularViscosity { at: Vec<f64> },
    #[error("eigenvalue with |Re λ| = {magnitude:.3e} below tolerance makes sign counts ill-defined")]
    NearSingular { magnitude: f64 },
    #[error("boundary regime is ambiguous: {detail}")]
    Ambiguous { detail: String },
    #[error("unknown system name {0:?}")]
    UnknownSystem(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Entropy pair `(η, q)` with first and second derivatives of `η`.
#[derive(Clone)]
pub struct EntropyPair {
    pub eta: ScalarFn,
    pub grad_eta: VectorFn,
    pub hess_eta: MatrixFn,
    pub q: ScalarFn,
    pub grad_q: VectorFn,
}

/// Axis-aligned box of admissible states.
#[derive(Debug, Clone, PartialEq)]
pub struct Region {
    lo: DVector<f64>,
    hi: DVector<f64>,
}

impl Region {
    pub fn new(lo: DVector<f64>, hi: DVector<f64>) -> Self {
        assert_eq!(lo.len(), hi.len());
        assert!(lo.iter().zip(hi.iter()).all(|(a, b)| a < b), "degenerate region");
        Self { lo, hi }
    }

    pub fn cube(n: usize, half_width: f64) -> Self {
        Self::new(
            DVector::from_element(n, -half_width),
            DVector::from_element(n, half_width),
        )
    }

    pub fn contains(&self, u: &DVector<f64>) -> bool {
        u.len() == self.lo.len()
            && u.iter().enumerate().all(|(i, &x)| x >= self.lo[i] && x <= self.hi[i])
    }

    pub fn lo(&self) -> &DVector<f64> {
        &self.lo
    }

    pub fn hi(&self) -> &DVector<f64> {
        &self.hi
    }

    /// Tensor grid with `per_axis` nodes per component plus `extra` seeded
    /// uniform draws.
    pub fn sample(&self, per_axis: usize, extra: usize, seed: u64) -> Vec<DVector<f64>> {
        let n = self.lo.len();
        let mut out = Vec::new();
        let total = per_axis.pow(n as u32);
        for flat in 0..total {
            let mut u = DVector::zeros(n);
            let mut rest = flat;
            for c in 0..n {
                let idx = rest % per_axis;
                rest /= per_axis;
                let w = if per_axis == 1 { 0.5 } else { idx as f64 / (per_axis - 1) as f64 };
                u[c] = self.lo[c] + w * (self.hi[c] - self.lo[c]);
            }
            out.push(u);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..extra {
            let u = DVector::from_fn(n, |c, _| {
                self.lo[c] + rng.gen::<f64>() * (self.hi[c] - self.lo[c])
            });
            out.push(u);
        }
        out
    }
}

/// Spectral decomposition of the flux Jacobian at a state.
///
/// Eigenvalues are strictly increasing with pairwise gaps `≥ gap_min`;
/// right eigenvectors are unit length and deterministically oriented; left
/// rows are the inverse of the right basis, so `l_i · r_j = δ_ij` holds to
/// solver precision.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralData {
    pub eigenvalues: Vec<f64>,
    pub right: Vec<DVector<f64>>,
    pub left: Vec<DVector<f64>>,
}

impl SpectralData {
    /// `l_i · v` coordinates of a vector in the eigenbasis.
    pub fn coordinates(&self, v: &DVector<f64>) -> Vec<f64> {
        self.left.iter().map(|l| l.dot(v)).collect()
    }
}

/// Counts of eigenvalues by sign of the real part.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SignatureCounts {
    pub negative: usize,
    pub positive: usize,
}

/// Sign counts for `DF(U)` and `B(U)⁻¹ DF(U)` side by side.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SignatureComparison {
    pub flux: SignatureCounts,
    pub viscous: SignatureCounts,
}

impl SignatureComparison {
    pub fn matches(&self) -> bool {
        self.flux == self.viscous
    }
}

/// Boundary regime of the quarter-plane problem on the sampled region.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum BoundaryRegime {
    /// Every characteristic speed is bounded away from zero; `p` fields are
    /// positive (incoming) and `c` is the observed speed gap.
    NonCharacteristic { p: usize, c: f64 },
    /// Field `k` (0-based) crosses or hugs zero with `|λ_k| ≤ delta`, all
    /// other fields bounded away by `c`.
    Characteristic { k: usize, c: f64, delta: f64 },
}

/// Outcome of one structural check at the worst sample point.
#[derive(Debug, Clone, Serialize)]
pub struct CheckOutcome {
    pub pass: bool,
    /// Check-specific extremum: minimal eigenvalue gap (hypothesis 1),
    /// maximal compatibility residual (2), minimal entropy-Hessian or
    /// dissipation eigenvalue (2 and 3).
    pub worst: f64,
    /// Sample state realising `worst`.
    pub at: Option<Vec<f64>>,
}

/// Report of the three structural hypotheses over the sampled region.
#[derive(Debug, Clone, Serialize)]
pub struct HypothesisReport {
    pub samples: usize,
    /// Strict hyperbolicity; `worst` is the smallest eigenvalue gap.
    pub hyperbolicity: CheckOutcome,
    /// Entropy compatibility residual `‖Dη·DF − Dq‖∞`; `None` without a pair.
    pub entropy_compatibility: Option<CheckOutcome>,
    /// Positivity of `D²η`; `worst` is its smallest eigenvalue.
    pub entropy_convexity: Option<CheckOutcome>,
    /// Dissipativity constant `α = min eig sym(D²η B)`; `None` without a pair.
    pub dissipativity: Option<CheckOutcome>,
    /// Invertibility of `B` at every sample.
    pub viscosity_invertible: CheckOutcome,
}

impl HypothesisReport {
    /// The dissipativity constant `α`, when an entropy pair is available.
    pub fn alpha(&self) -> Option<f64> {
        self.dissipativity.as_ref().map(|c| c.worst)
    }

    pub fn all_pass(&self) -> bool {
        self.hyperbolicity.pass
            && self.viscosity_invertible.pass
            && self.entropy_compatibility.as_ref().map_or(true, |c| c.pass)
            && self.entropy_convexity.as_ref().map_or(true, |c| c.pass)
            && self.dissipativity.as_ref().map_or(true, |c| c.pass)
    }
}

/// A system of conservation laws with viscosity.
///
/// Immutable after construction; all evaluation methods are pure, so a
/// system can be shared freely across threads.
#[derive(Clone)]
pub struct HyperbolicSystem {
    name: String,
    n: usize,
    flux: VectorFn,
    jacobian: Option<MatrixFn>,
    viscosity: MatrixFn,
    entropy: Option<EntropyPair>,
    region: Region,
    h_fd: f64,
}

impl fmt::Debug for HyperbolicSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HyperbolicSystem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("analytic_jacobian", &self.jacobian.is_some())
            .field("entropy", &self.entropy.is_some())
            .field("region", &self.region)
            .finish()
    }
}

/// Builder for custom systems; the bundled models use it internally.
pub struct SystemBuilder {
    inner: HyperbolicSystem,
}

impl SystemBuilder {
    pub fn jacobian(
        mut self,
        j: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.inner.jacobian = Some(Arc::new(j));
        self
    }

    pub fn viscosity(
        mut self,
        b: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.inner.viscosity = Arc::new(b);
        self
    }

    /// Constant viscosity matrix.
    pub fn viscosity_matrix(self, b: DMatrix<f64>) -> Self {
        self.viscosity(move |_| b.clone())
    }

    pub fn entropy(mut self, pair: EntropyPair) -> Self {
        self.inner.entropy = Some(pair);
        self
    }

    pub fn region(mut self, region: Region) -> Self {
        self.inner.region = region;
        self
    }

    pub fn h_fd(mut self, h: f64) -> Self {
        self.inner.h_fd = h;
        self
    }

    pub fn build(self) -> Result<HyperbolicSystem, SystemError> {
        let sys = self.inner;
        if sys.n == 0 || sys.n > MAX_DIM {
            return Err(SystemError::BadDimension { n: sys.n });
        }
        // Viscosity must be invertible at least at the region centre; the
        // hypothesis check probes the full region.
        let centre = (sys.region.lo() + sys.region.hi()) * 0.5;
        if linalg::inverse(&(sys.viscosity)(&centre)).is_err() {
            return Err(SystemError::SingularViscosity { at: centre.iter().copied().collect() });
        }
        Ok(sys)
    }
}

impl HyperbolicSystem {
    /// Starts a builder for an `n`-dimensional system with the given flux.
    ///
    /// Defaults: identity viscosity, finite-difference Jacobian, no entropy
    /// pair, region `[-1, 1]ⁿ`.
    pub fn builder(
        n: usize,
        name: &str,
        flux: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
    ) -> SystemBuilder {
        SystemBuilder {
            inner: HyperbolicSystem {
                name: name.to_string(),
                n,
                flux: Arc::new(flux),
                jacobian: None,
                viscosity: Arc::new(move |_| DMatrix::identity(n, n)),
                entropy: None,
                region: Region::cube(n, 1.0),
                h_fd: Numerics::default().h_fd,
            },
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn region(&self) -> &Region {
        &self.region
    }

    pub fn entropy(&self) -> Option<&EntropyPair> {
        self.entropy.as_ref()
    }

    /// Returns a copy with a different viscosity matrix (used by the
    /// viscosity-dependence experiments).
    pub fn with_viscosity(
        &self,
        name: &str,
        b: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        let mut out = self.clone();
        out.name = name.to_string();
        out.viscosity = Arc::new(b);
        out
    }

    pub fn flux(&self, u: &DVector<f64>) -> DVector<f64> {
        (self.flux)(u)
    }

    /// Flux Jacobian: analytic when provided, central differences with step
    /// `h_fd` otherwise.
    pub fn jacobian(&self, u: &DVector<f64>) -> DMatrix<f64> {
        match &self.jacobian {
            Some(j) => j(u),
            None => {
                let f = self.flux.clone();
                linalg::fd_jacobian(&move |x: &DVector<f64>| f(x), u, self.h_fd)
            }
        }
    }

    pub fn viscosity_at(&self, u: &DVector<f64>) -> DMatrix<f64> {
        (self.viscosity)(u)
    }

    fn check_dim(&self, u: &DVector<f64>) -> Result<(), SystemError> {
        if u.len() != self.n {
            return Err(SystemError::DimensionMismatch { expect: self.n, got: u.len() });
        }
        Ok(())
    }

    /// Full spectral decomposition of `DF(U)`.
    ///
    /// Fails with [`SystemError::NonHyperbolic`] when eigenvalues are
    /// complex or closer than `numerics.gap_min`.
    pub fn eigen_decompose(
        &self,
        u: &DVector<f64>,
        numerics: &Numerics,
    ) -> Result<SpectralData, SystemError> {
        self.check_dim(u)?;
        let a = self.jacobian(u);
        let eigenvalues = linalg::real_eigenvalues(&a, 1e-9).map_err(|e| match e {
            LinalgError::ComplexEigenvalues { max_imag } => SystemError::NonHyperbolic {
                at: u.iter().copied().collect(),
                detail: format!("complex pair with |Im| = {max_imag:.3e}"),
            },
            other => SystemError::Linalg(other),
        })?;
        for w in eigenvalues.windows(2) {
            if w[1] - w[0] < numerics.gap_min {
                return Err(SystemError::NonHyperbolic {
                    at: u.iter().copied().collect(),
                    detail: format!("eigenvalue gap {:.3e} below gap_min", w[1] - w[0]),
                });
            }
        }
        let mut right = Vec::with_capacity(self.n);
        for &l in &eigenvalues {
            right.push(linalg::right_eigenvector(&a, l, 1e-9)?);
        }
        let mut rmat = DMatrix::zeros(self.n, self.n);
        for (j, r) in right.iter().enumerate() {
            rmat.set_column(j, r);
        }
        let linv = linalg::inverse(&rmat).map_err(|_| SystemError::NonHyperbolic {
            at: u.iter().copied().collect(),
            detail: "eigenvector basis is numerically singular".into(),
        })?;
        let left = (0..self.n).map(|i| linv.row(i).transpose()).collect();
        Ok(SpectralData { eigenvalues, right, left })
    }

    /// The `i`-th characteristic speed (0-based field index).
    pub fn lambda(
        &self,
        u: &DVector<f64>,
        field: usize,
        numerics: &Numerics,
    ) -> Result<f64, SystemError> {
        Ok(self.eigen_decompose(u, numerics)?.eigenvalues[field])
    }

    /// Samples the structural hypotheses over the region.
    pub fn check_hypotheses(&self, numerics: &Numerics) -> HypothesisReport {
        let per_axis = match self.n {
            1 => 17,
            2 => 7,
            _ => 4,
        };
        let points = self.region.sample(per_axis, 100, numerics.seed);

        let mut hyp1 = CheckOutcome { pass: true, worst: f64::INFINITY, at: None };
        let mut binv = CheckOutcome { pass: true, worst: f64::INFINITY, at: None };
        let mut compat = self
            .entropy
            .as_ref()
            .map(|_| CheckOutcome { pass: true, worst: 0.0, at: None });
        let mut convex = self
            .entropy
            .as_ref()
            .map(|_| CheckOutcome { pass: true, worst: f64::INFINITY, at: None });
        let mut dissip = self
            .entropy
            .as_ref()
            .map(|_| CheckOutcome { pass: true, worst: f64::INFINITY, at: None });

        for u in &points {
            let at = || Some(u.iter().copied().collect::<Vec<_>>());
            let a = self.jacobian(u);
            match linalg::real_eigenvalues(&a, 1e-9) {
                Ok(vals) => {
                    let gap = if vals.len() == 1 {
                        f64::INFINITY
                    } else {
                        vals.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
                    };
                    if gap < hyp1.worst {
                        hyp1.worst = gap;
                        hyp1.at = at();
                    }
                    if gap < numerics.gap_min {
                        hyp1.pass = false;
                    }
                }
                Err(_) => {
                    hyp1.pass = false;
                    hyp1.worst = f64::NEG_INFINITY;
                    hyp1.at = at();
                }
            }

            let b = self.viscosity_at(u);
            let det = b.determinant().abs();
            if det < binv.worst {
                binv.worst = det;
                binv.at = at();
            }
            if det < 1e-12 {
                binv.pass = false;
            }

            if let Some(pair) = &self.entropy {
                let grad_eta = (pair.grad_eta)(u);
                let residual = ((grad_eta.transpose() * &a).transpose() - (pair.grad_q)(u))
                    .amax();
                let c = compat.as_mut().unwrap();
                if residual > c.worst {
                    c.worst = residual;
                    c.at = at();
                }
                if residual > numerics.tol_entropy {
                    c.pass = false;
                }

                let hess = (pair.hess_eta)(u);
                let min_hess = linalg::min_symmetric_eigenvalue(&hess);
                let cv = convex.as_mut().unwrap();
                if min_hess < cv.worst {
                    cv.worst = min_hess;
                    cv.at = at();
                }
                if min_hess <= 0.0 {
                    cv.pass = false;
                }

                let alpha = linalg::min_symmetric_eigenvalue(&(&hess * &b));
                let d = dissip.as_mut().unwrap();
                if alpha < d.worst {
                    d.worst = alpha;
                    d.at = at();
                }
                if alpha <= 0.0 {
                    d.pass = false;
                }
            }
        }

        HypothesisReport {
            samples: points.len(),
            hyperbolicity: hyp1,
            entropy_compatibility: compat,
            entropy_convexity: convex,
            dissipativity: dissip,
            viscosity_invertible: binv,
        }
    }

    /// Compares stable/unstable eigenvalue counts of `DF(U)` and
    /// `B(U)⁻¹ DF(U)`.
    pub fn eigen_signature_compare(
        &self,
        u: &DVector<f64>,
        numerics: &Numerics,
    ) -> Result<SignatureComparison, SystemError> {
        self.check_dim(u)?;
        let a = self.jacobian(u);
        let b = self.viscosity_at(u);
        let binv = linalg::inverse(&b)
            .map_err(|_| SystemError::SingularViscosity { at: u.iter().copied().collect() })?;
        let count = |m: &DMatrix<f64>| -> Result<SignatureCounts, SystemError> {
            let vals = linalg::complex_eigenvalues(m)?;
            let mut counts = SignatureCounts { negative: 0, positive: 0 };
            for z in vals {
                if z.re.abs() < numerics.tol_eig {
                    return Err(SystemError::NearSingular { magnitude: z.re.abs() });
                }
                if z.re < 0.0 {
                    counts.negative += 1;
                } else {
                    counts.positive += 1;
                }
            }
            Ok(counts)
        };
        Ok(SignatureComparison { flux: count(&a)?, viscous: count(&(binv * &a))? })
    }

    /// Classifies the boundary regime from characteristic speeds sampled
    /// over the region.
    pub fn classify_boundary(&self, numerics: &Numerics) -> Result<BoundaryRegime, SystemError> {
        let per_axis = match self.n {
            1 => 33,
            2 => 9,
            _ => 5,
        };
        let points = self.region.sample(per_axis, 50, numerics.seed);
        let mut min_abs = vec![f64::INFINITY; self.n];
        let mut max_abs = vec![0.0f64; self.n];
        let mut min_val = vec![f64::INFINITY; self.n];
        let mut max_val = vec![f64::NEG_INFINITY; self.n];
        for u in &points {
            let spec = self.eigen_decompose(u, numerics)?;
            for (i, &l) in spec.eigenvalues.iter().enumerate() {
                min_abs[i] = min_abs[i].min(l.abs());
                max_abs[i] = max_abs[i].max(l.abs());
                min_val[i] = min_val[i].min(l);
                max_val[i] = max_val[i].max(l);
            }
        }
        let near_zero: Vec<usize> = (0..self.n)
            .filter(|&i| min_abs[i] < numerics.c_min || min_val[i] < 0.0 && max_val[i] > 0.0)
            .collect();
        match near_zero.len() {
            0 => {
                let p = (0..self.n).filter(|&i| min_val[i] > 0.0).count();
                let c = min_abs.iter().copied().fold(f64::INFINITY, f64::min);
                Ok(BoundaryRegime::NonCharacteristic { p, c })
            }
            1 => {
                let k = near_zero[0];
                let c = (0..self.n)
                    .filter(|&i| i != k)
                    .map(|i| min_abs[i])
                    .fold(f64::INFINITY, f64::min);
                if c < numerics.c_min {
                    return Err(SystemError::Ambiguous {
                        detail: format!(
                            "field {k} is characteristic but another field has |λ| = {c:.3e} < c_min"
                        ),
                    });
                }
                Ok(BoundaryRegime::Characteristic { k, c, delta: max_abs[k] })
            }
            _ => Err(SystemError::Ambiguous {
                detail: format!("fields {near_zero:?} all approach zero speed on the region"),
            }),
        }
    }
}

/// Quadratic entropy `η = |U|²/2` with flux potential `q = Uᵀ A U / 2` for
/// a constant symmetric `A`.
fn quadratic_entropy(a: DMatrix<f64>) -> EntropyPair {
    let n = a.nrows();
    let a1 = a.clone();
    let a2 = a;
    EntropyPair {
        eta: Arc::new(|u: &DVector<f64>| 0.5 * u.norm_squared()),
        grad_eta: Arc::new(|u: &DVector<f64>| u.clone()),
        hess_eta: Arc::new(move |_| DMatrix::identity(n, n)),
        q: Arc::new(move |u: &DVector<f64>| 0.5 * (u.transpose() * &a1 * u)[(0, 0)]),
        grad_q: Arc::new(move |u: &DVector<f64>| &a2 * u),
    }
}

/// The bundled model registry.
pub mod registry {
    use super::*;

    /// Inviscid Burgers flux `F(u) = u²/2` with entropy `u²/2`.
    pub fn burgers() -> HyperbolicSystem {
        HyperbolicSystem::builder(1, "burgers", |u| DVector::from_vec(vec![0.5 * u[0] * u[0]]))
            .jacobian(|u| DMatrix::from_vec(1, 1, vec![u[0]]))
            .entropy(EntropyPair {
                eta: Arc::new(|u: &DVector<f64>| 0.5 * u[0] * u[0]),
                grad_eta: Arc::new(|u: &DVector<f64>| DVector::from_vec(vec![u[0]])),
                hess_eta: Arc::new(|_| DMatrix::from_vec(1, 1, vec![1.0])),
                q: Arc::new(|u: &DVector<f64>| u[0].powi(3) / 3.0),
                grad_q: Arc::new(|u: &DVector<f64>| DVector::from_vec(vec![u[0] * u[0]])),
            })
            .region(Region::cube(1, 3.0))
            .build()
            .expect("burgers is well-formed")
    }

    /// Scalar cubic flux `F(u) = u³`, whose inflection at `u = 0` produces
    /// composite waves.
    pub fn cubic() -> HyperbolicSystem {
        HyperbolicSystem::builder(1, "cubic", |u| DVector::from_vec(vec![u[0].powi(3)]))
            .jacobian(|u| DMatrix::from_vec(1, 1, vec![3.0 * u[0] * u[0]]))
            .entropy(EntropyPair {
                eta: Arc::new(|u: &DVector<f64>| 0.5 * u[0] * u[0]),
                grad_eta: Arc::new(|u: &DVector<f64>| DVector::from_vec(vec![u[0]])),
                hess_eta: Arc::new(|_| DMatrix::from_vec(1, 1, vec![1.0])),
                q: Arc::new(|u: &DVector<f64>| 0.75 * u[0].powi(4)),
                grad_q: Arc::new(|u: &DVector<f64>| DVector::from_vec(vec![3.0 * u[0].powi(3)])),
            })
            .region(Region::cube(1, 2.0))
            .build()
            .expect("cubic is well-formed")
    }

    /// Linear system `F(U) = A U` with a constant matrix.
    ///
    /// A quadratic entropy is attached when `A` is symmetric.
    pub fn linear2(a: DMatrix<f64>) -> Result<HyperbolicSystem, SystemError> {
        if a.nrows() != 2 || a.ncols() != 2 {
            return Err(SystemError::BadDimension { n: a.nrows().max(a.ncols()) });
        }
        let a_flux = a.clone();
        let a_jac = a.clone();
        let symmetric = (a.clone() - a.transpose()).amax() == 0.0;
        let mut b = HyperbolicSystem::builder(2, "linear2", move |u| &a_flux * u)
            .jacobian(move |_| a_jac.clone())
            .region(Region::cube(2, 10.0));
        if symmetric {
            b = b.entropy(quadratic_entropy(a));
        }
        b.build()
    }

    /// The p-system `(v, u)` with pressure `p(v) = k_p v^{-γ}`, optionally
    /// observed in a frame moving with speed `-shift` (which adds `shift·U`
    /// to the flux and `shift` to every characteristic speed).
    pub fn p_system(k_p: f64, gamma: f64, shift: f64) -> Result<HyperbolicSystem, SystemError> {
        if !(k_p > 0.0) || !(gamma > 0.0) {
            return Err(SystemError::UnknownSystem(format!(
                "p-system requires k_p > 0 and gamma > 0, got k_p = {k_p}, gamma = {gamma}"
            )));
        }
        let p = move |v: f64| k_p * v.powf(-gamma);
        let dp = move |v: f64| -k_p * gamma * v.powf(-gamma - 1.0);
        // P(v) with P' = -p, so that η = u²/2 + P(v) is an entropy.
        let big_p = move |v: f64| {
            if (gamma - 1.0).abs() < 1e-12 {
                -k_p * v.ln()
            } else {
                k_p * v.powf(1.0 - gamma) / (gamma - 1.0)
            }
        };
        HyperbolicSystem::builder(2, "p-system", move |w| {
            DVector::from_vec(vec![-w[1] + shift * w[0], p(w[0]) + shift * w[1]])
        })
        .jacobian(move |w| DMatrix::from_row_slice(2, 2, &[shift, -1.0, dp(w[0]), shift]))
        .entropy(EntropyPair {
            eta: Arc::new(move |w: &DVector<f64>| 0.5 * w[1] * w[1] + big_p(w[0])),
            grad_eta: Arc::new(move |w: &DVector<f64>| DVector::from_vec(vec![-p(w[0]), w[1]])),
            hess_eta: Arc::new(move |w: &DVector<f64>| {
                DMatrix::from_row_slice(2, 2, &[-dp(w[0]), 0.0, 0.0, 1.0])
            }),
            q: Arc::new(move |w: &DVector<f64>| {
                w[1] * p(w[0]) + shift * (0.5 * w[1] * w[1] + big_p(w[0]))
            }),
            grad_q: Arc::new(move |w: &DVector<f64>| {
                DVector::from_vec(vec![
                    w[1] * dp(w[0]) - shift * p(w[0]),
                    p(w[0]) + shift * w[1],
                ])
            }),
        })
        .region(Region::new(
            DVector::from_vec(vec![0.25, -4.0]),
            DVector::from_vec(vec![4.0, 4.0]),
        ))
        .build()
    }
}

#[cfg(test)]
mod tests {
    use super::registry::*;
    use super::*;

    fn numerics() -> Numerics {
        Numerics::default()
    }

    #[test]
    fn burgers_spectrum_is_the_state() {
        let sys = burgers();
        let u = DVector::from_vec(vec![0.7]);
        let spec = sys.eigen_decompose(&u, &numerics()).unwrap();
        assert_eq!(spec.eigenvalues, vec![0.7]);
        assert_eq!(spec.right[0][0], 1.0);
        assert_eq!(spec.left[0][0], 1.0);
    }

    #[test]
    fn linear_diagonal_spectrum_and_orientation() {
        let sys = linear2(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0])).unwrap();
        let u = DVector::zeros(2);
        let spec = sys.eigen_decompose(&u, &numerics()).unwrap();
        assert_eq!(spec.eigenvalues, vec![-1.0, 1.0]);
        assert!((spec.right[0][0] - 1.0).abs() < 1e-12 && spec.right[0][1].abs() < 1e-12);
        assert!((spec.right[1][1] - 1.0).abs() < 1e-12 && spec.right[1][0].abs() < 1e-12);
        // Biorthogonality.
        for i in 0..2 {
            for j in 0..2 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((spec.left[i].dot(&spec.right[j]) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn p_system_speeds_at_reference_volume() {
        // p(v) = v^{-2}: p'(1) = -2, so λ = ∓√2 at (1, 0).
        let sys = p_system(1.0, 2.0, 0.0).unwrap();
        let w = DVector::from_vec(vec![1.0, 0.0]);
        let spec = sys.eigen_decompose(&w, &numerics()).unwrap();
        let s2 = 2.0f64.sqrt();
        assert!((spec.eigenvalues[0] + s2).abs() < 1e-12);
        assert!((spec.eigenvalues[1] - s2).abs() < 1e-12);
        // Eigenvectors solve DF r = λ r and are oriented: largest component
        // positive.  For λ = ±√2 the eigenvectors are ∝ (1, ∓√2).
        for (i, r) in spec.right.iter().enumerate() {
            let a = sys.jacobian(&w);
            assert!((&a * r - r * spec.eigenvalues[i]).norm() < 1e-10);
            let lead = if r[0].abs() > r[1].abs() { r[0] } else { r[1] };
            assert!(lead > 0.0);
        }
        assert!((spec.right[0][1] - s2 / 3.0f64.sqrt()).abs() < 1e-10);
    }

    #[test]
    fn eigen_decompose_is_bitwise_deterministic() {
        let sys = p_system(1.0, 2.0, 0.0).unwrap();
        let w = DVector::from_vec(vec![1.3, -0.2]);
        let a = sys.eigen_decompose(&w, &numerics()).unwrap();
        let b = sys.eigen_decompose(&w, &numerics()).unwrap();
        for i in 0..2 {
            assert_eq!(a.eigenvalues[i].to_bits(), b.eigenvalues[i].to_bits());
            for c in 0..2 {
                assert_eq!(a.right[i][c].to_bits(), b.right[i][c].to_bits());
            }
        }
    }

    #[test]
    fn non_hyperbolic_matrix_is_rejected() {
        let sys = HyperbolicSystem::builder(2, "rotation", |u| {
            DVector::from_vec(vec![-u[1], u[0]])
        })
        .build()
        .unwrap();
        let err = sys.eigen_decompose(&DVector::zeros(2), &numerics()).unwrap_err();
        assert!(matches!(err, SystemError::NonHyperbolic { .. }));
    }

    #[test]
    fn hypotheses_pass_for_bundled_systems() {
        for sys in [burgers(), cubic(), p_system(1.0, 2.0, 0.0).unwrap()] {
            let report = sys.check_hypotheses(&numerics());
            assert!(report.all_pass(), "{}: {report:?}", sys.name());
        }
        let b = burgers();
        let report = b.check_hypotheses(&numerics());
        assert!((report.alpha().unwrap() - 1.0).abs() < 1e-12, "identity viscosity: α = 1");
    }

    #[test]
    fn negative_viscosity_fails_dissipativity() {
        let sys = burgers().with_viscosity("burgers-negb", |_| DMatrix::from_vec(1, 1, vec![-1.0]));
        let report = sys.check_hypotheses(&numerics());
        assert!(!report.all_pass());
        assert!(report.alpha().unwrap() <= -1.0);
    }

    #[test]
    fn signature_comparison_on_mixing_viscosity() {
        let sys = linear2(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0]))
            .unwrap()
            .with_viscosity("mix", |_| DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]));
        let cmp = sys.eigen_signature_compare(&DVector::zeros(2), &numerics()).unwrap();
        assert_eq!(cmp.flux, SignatureCounts { negative: 1, positive: 1 });
        assert_eq!(cmp.viscous, SignatureCounts { negative: 1, positive: 1 });
        assert!(cmp.matches());
    }

    #[test]
    fn near_singular_signature_is_an_error() {
        let sys = burgers();
        let err = sys
            .eigen_signature_compare(&DVector::from_vec(vec![0.0]), &numerics())
            .unwrap_err();
        assert!(matches!(err, SystemError::NearSingular { .. }));
    }

    #[test]
    fn boundary_classification() {
        let lin = linear2(DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, 1.0])).unwrap();
        match lin.classify_boundary(&numerics()).unwrap() {
            BoundaryRegime::NonCharacteristic { p, c } => {
                assert_eq!(p, 1);
                assert!((c - 1.0).abs() < 1e-12);
            }
            other => panic!("expected non-characteristic, got {other:?}"),
        }

        let mut shrunk = burgers();
        shrunk = HyperbolicSystem::builder(1, "burgers-near-zero", {
            let f = move |u: &DVector<f64>| shrunk.flux(u);
            f
        })
        .jacobian(|u| DMatrix::from_vec(1, 1, vec![u[0]]))
        .region(Region::cube(1, 0.05))
        .build()
        .unwrap();
        match shrunk.classify_boundary(&numerics()).unwrap() {
            BoundaryRegime::Characteristic { k, delta, .. } => {
                assert_eq!(k, 0);
                assert!(delta <= 0.05 + 1e-12);
            }
            other => panic!("expected characteristic, got {other:?}"),
        }

        let psys = p_system(1.0, 2.0, 0.0).unwrap();
        match psys.classify_boundary(&numerics()).unwrap() {
            BoundaryRegime::NonCharacteristic { p, .. } => assert_eq!(p, 1),
            other => panic!("expected non-characteristic, got {other:?}"),
        }
    }

    #[test]
    fn shifted_p_system_is_characteristic_in_second_field() {
        // shift = -√2 puts λ₂ near zero at v ≈ 1 while λ₁ ≈ -2√2 stays
        // far from zero; narrow the region around the sonic state.
        let shift = -(2.0f64.sqrt());
        let base = p_system(1.0, 2.0, shift).unwrap();
        let sys = HyperbolicSystem::builder(2, "p-system-sonic", {
            let b = base.clone();
            move |u| b.flux(u)
        })
        .jacobian({
            let b = base.clone();
            move |u| b.jacobian(u)
        })
        .region(Region::new(
            DVector::from_vec(vec![0.95, -0.1]),
            DVector::from_vec(vec![1.05, 0.1]),
        ))
        .build()
        .unwrap();
        match sys.classify_boundary(&numerics()).unwrap() {
            BoundaryRegime::Characteristic { k, c, .. } => {
                assert_eq!(k, 1);
                assert!(c > 2.0);
            }
            other => panic!("expected characteristic, got {other:?}"),
        }
    }

    #[test]
    fn fd_jacobian_matches_analytic() {
        let sys = p_system(1.0, 2.0, 0.0).unwrap();
        let no_jac = HyperbolicSystem::builder(2, "p-fd", {
            let s = sys.clone();
            move |u| s.flux(u)
        })
        .region(sys.region().clone())
        .build()
        .unwrap();
        let w = DVector::from_vec(vec![1.2, 0.3]);
        let rel = (no_jac.jacobian(&w) - sys.jacobian(&w)).norm() / sys.jacobian(&w).norm();
        assert!(rel < 1e-6, "relative error {rel}");
    }

    #[test]
    fn signature_counts_match_in_bulk_under_dissipativity() {
        // 100-draw miniature of the full battery: random states and random
        // viscosities whose symmetrised product with D²η is positive.
        use rand::{Rng, SeedableRng};
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let sys = p_system(1.0, 2.0, 0.0).unwrap();
        let mut checked = 0;
        for _ in 0..100 {
            let w = DVector::from_vec(vec![
                0.5 + 1.5 * rng.gen::<f64>(),
                -1.0 + 2.0 * rng.gen::<f64>(),
            ]);
            let pair = sys.entropy().unwrap();
            let hess = (pair.hess_eta)(&w);
            // B = H⁻¹ (S + μI + antisymmetric): then sym(H B) = S + μI > 0.
            let raw = DMatrix::from_fn(2, 2, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let spd = linalg::symmetric_part(&(&raw * raw.transpose()))
                + DMatrix::identity(2, 2) * 0.3;
            let anti = {
                let r = DMatrix::from_fn(2, 2, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
                (&r - r.transpose()) * 0.5
            };
            let b = linalg::inverse(&hess).unwrap() * (spd + anti);
            let test = sys.with_viscosity("random-b", move |_| b.clone());
            match test.eigen_signature_compare(&w, &numerics()) {
                Ok(cmp) => {
                    assert!(cmp.matches(), "counts diverged at {w:?}");
                    checked += 1;
                }
                Err(SystemError::NearSingular { .. }) => {}
                Err(e) => panic!("unexpected error: {e}"),
            }
        }
        assert!(checked > 80, "too many near-singular draws: {checked}");
    }
}
