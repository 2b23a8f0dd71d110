//! The constraint set S = {x : g(x) = 0}: tangent/normal structure and metric
//! projections.
//!
//! Exact projectors are provided for the sphere and the Stiefel manifold; a
//! damped Gauss-Newton nearest-point iteration covers generic level sets.
//! Stiefel matrices run through the same vector-space pipeline by flattening
//! column-major into R^{n*k} with the k(k+1)/2 independent upper-triangular
//! entries of X^T X - I as constraints.

use crate::error::{Result, SolveError};
use crate::linalg::GramFactor;
use crate::tolerances;
use nalgebra::{DMatrix, DVector};

type GFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type JacFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;
type HessFn = dyn Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync;
type ProjFn = dyn Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync;
type DistFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;

/// Numeric knobs for projection and rank checks; defaults come from
/// [`crate::tolerances`].
#[derive(Debug, Clone, Copy)]
pub struct ManifoldTolerances {
    pub feas_tol: f64,
    pub proj_tol: f64,
    pub ortho_tol: f64,
    pub cond_tol: f64,
    pub max_proj_iters: usize,
    pub tube_margin: f64,
}

impl Default for ManifoldTolerances {
    fn default() -> Self {
        Self {
            feas_tol: tolerances::FEAS_TOL,
            proj_tol: tolerances::PROJ_TOL,
            ortho_tol: tolerances::ORTHO_TOL,
            cond_tol: tolerances::COND_TOL,
            max_proj_iters: tolerances::MAX_PROJ_ITERS,
            tube_margin: tolerances::TUBE_MARGIN,
        }
    }
}

/// The constraint map g : R^n -> R^m together with its derivatives, the
/// proximal smoothness constant R, and optional exact projection/distance.
///
/// All evaluators must be reentrant; the map itself is immutable after
/// construction and safe to share across threads.
pub struct ConstraintMap {
    n: usize,
    m: usize,
    g: Box<GFn>,
    jacobian: Box<JacFn>,
    hessians: Box<HessFn>,
    prox_radius: f64,
    exact_projector: Option<Box<ProjFn>>,
    exact_distance: Option<Box<DistFn>>,
    label: String,
    tol: ManifoldTolerances,
}

impl std::fmt::Debug for ConstraintMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ConstraintMap")
            .field("label", &self.label)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("prox_radius", &self.prox_radius)
            .field("exact_projector", &self.exact_projector.is_some())
            .finish()
    }
}

impl ConstraintMap {
    /// Generic level set with user evaluators. `m < n` and `R > 0` required.
    pub fn level_set(
        n: usize,
        m: usize,
        g: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        jacobian: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        hessians: impl Fn(&DVector<f64>) -> Vec<DMatrix<f64>> + Send + Sync + 'static,
        prox_radius: f64,
    ) -> Result<Self> {
        if m == 0 || m >= n {
            return Err(SolveError::InvalidConfig(format!(
                "need 1 <= m < n, got m = {m}, n = {n}"
            )));
        }
        if !(prox_radius > 0.0) {
            return Err(SolveError::InvalidConfig(format!(
                "proximal smoothness constant must be positive, got {prox_radius}"
            )));
        }
        Ok(Self {
            n,
            m,
            g: Box::new(g),
            jacobian: Box::new(jacobian),
            hessians: Box::new(hessians),
            prox_radius,
            exact_projector: None,
            exact_distance: None,
            label: "levelset".to_string(),
            tol: ManifoldTolerances::default(),
        })
    }

    /// Sphere of the given radius in R^n: g(x) = ||x||^2 - radius^2.
    /// Proximally smooth with constant R = radius.
    pub fn sphere(n: usize, radius: f64) -> Result<Self> {
        if n < 2 {
            return Err(SolveError::InvalidConfig(
                "sphere constraint needs n >= 2".into(),
            ));
        }
        if !(radius > 0.0) {
            return Err(SolveError::InvalidConfig(format!(
                "sphere radius must be positive, got {radius}"
            )));
        }
        let r2 = radius * radius;
        let proj_tol = ManifoldTolerances::default().proj_tol;
        let mut c = Self::level_set(
            n,
            1,
            move |x| DVector::from_element(1, x.norm_squared() - r2),
            |x| DMatrix::from_fn(1, x.len(), |_, j| 2.0 * x[j]),
            |x| vec![DMatrix::identity(x.len(), x.len()) * 2.0],
            radius,
        )?;
        c.exact_projector = Some(Box::new(move |x| project_sphere_tol(x, radius, proj_tol)));
        c.exact_distance = Some(Box::new(move |x| (x.norm() - radius).abs()));
        c.label = format!("sphere({radius})");
        Ok(c)
    }

    /// Stiefel manifold S_{nr,k} of nr x k frames, flattened column-major.
    /// Constraints are the upper-triangular entries of X^T X - I_k; proximally
    /// smooth with constant R = 1.
    pub fn stiefel(nr: usize, k: usize) -> Result<Self> {
        if k == 0 || k > nr {
            return Err(SolveError::InvalidConfig(format!(
                "stiefel needs 1 <= k <= n, got n = {nr}, k = {k}"
            )));
        }
        let n = nr * k;
        let m = k * (k + 1) / 2;
        if m >= n {
            // only k = n = 1 escapes m < n; that case is the 0-sphere, reject
            return Err(SolveError::InvalidConfig(format!(
                "stiefel({nr},{k}) has m = {m} >= ambient {n}"
            )));
        }
        let pairs = stiefel_pairs(k);
        let g_pairs = pairs.clone();
        let j_pairs = pairs.clone();
        let h_pairs = pairs;
        let proj_tol = ManifoldTolerances::default().proj_tol;
        let mut c = Self::level_set(
            n,
            m,
            move |x| {
                let xm = unflatten(x, nr, k);
                DVector::from_iterator(
                    g_pairs.len(),
                    g_pairs.iter().map(|&(i, j)| {
                        let v = xm.column(i).dot(&xm.column(j));
                        if i == j {
                            v - 1.0
                        } else {
                            v
                        }
                    }),
                )
            },
            move |x| {
                let xm = unflatten(x, nr, k);
                let mut jac = DMatrix::zeros(j_pairs.len(), nr * k);
                for (row, &(i, j)) in j_pairs.iter().enumerate() {
                    // d/dX_{a,b} (x_i . x_j) = [b=i] X_{a,j} + [b=j] X_{a,i}
                    for a in 0..nr {
                        jac[(row, i * nr + a)] += xm[(a, j)];
                        jac[(row, j * nr + a)] += xm[(a, i)];
                    }
                }
                jac
            },
            move |x| {
                let nk = x.len();
                h_pairs
                    .iter()
                    .map(|&(i, j)| {
                        let mut h = DMatrix::zeros(nk, nk);
                        for a in 0..nr {
                            h[(i * nr + a, j * nr + a)] += 1.0;
                            h[(j * nr + a, i * nr + a)] += 1.0;
                        }
                        h
                    })
                    .collect()
            },
            1.0,
        )?;
        c.exact_projector = Some(Box::new(move |x| {
            let xm = unflatten(x, nr, k);
            project_stiefel_tol(&xm, proj_tol).map(|p| flatten(&p))
        }));
        c.exact_distance = Some(Box::new(move |x| {
            let xm = unflatten(x, nr, k);
            stiefel_distance(&xm)
        }));
        c.label = format!("stiefel({nr},{k})");
        Ok(c)
    }

    pub fn with_tolerances(mut self, tol: ManifoldTolerances) -> Self {
        self.tol = tol;
        self
    }

    pub fn with_exact_projector(
        mut self,
        p: impl Fn(&DVector<f64>) -> Result<DVector<f64>> + Send + Sync + 'static,
    ) -> Self {
        self.exact_projector = Some(Box::new(p));
        self
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn prox_radius(&self) -> f64 {
        self.prox_radius
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn tolerances(&self) -> &ManifoldTolerances {
        &self.tol
    }

    pub fn has_exact_projector(&self) -> bool {
        self.exact_projector.is_some()
    }

    pub fn g(&self, x: &DVector<f64>) -> DVector<f64> {
        let v = (self.g)(x);
        debug_assert_eq!(v.len(), self.m);
        v
    }

    pub fn jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let j = (self.jacobian)(x);
        debug_assert_eq!((j.nrows(), j.ncols()), (self.m, self.n));
        j
    }

    pub fn hessians(&self, x: &DVector<f64>) -> Vec<DMatrix<f64>> {
        let h = (self.hessians)(x);
        debug_assert_eq!(h.len(), self.m);
        h
    }

    /// ||g(x)||.
    pub fn feasibility(&self, x: &DVector<f64>) -> f64 {
        self.g(x).norm()
    }

    pub fn is_feasible(&self, x: &DVector<f64>) -> bool {
        self.feasibility(x) <= self.tol.feas_tol
    }

    /// Gram factorization of the Jacobian at x (shared by the tangent
    /// projector and the multiplier solve).
    pub fn gram_factor(&self, x: &DVector<f64>) -> Result<GramFactor> {
        GramFactor::new(self.jacobian(x), self.tol.cond_tol)
    }
}

fn stiefel_pairs(k: usize) -> Vec<(usize, usize)> {
    let mut pairs = Vec::with_capacity(k * (k + 1) / 2);
    for i in 0..k {
        for j in i..k {
            pairs.push((i, j));
        }
    }
    pairs
}

/// Column-major reshape of a flat vector into an nr x k matrix.
pub fn unflatten(x: &DVector<f64>, nr: usize, k: usize) -> DMatrix<f64> {
    DMatrix::from_column_slice(nr, k, x.as_slice())
}

/// Column-major flattening of a matrix.
pub fn flatten(x: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(x.as_slice())
}

/// Frobenius distance from X to the Stiefel manifold, via singular values.
pub fn stiefel_distance(x: &DMatrix<f64>) -> f64 {
    let sv = x.clone().svd(false, false).singular_values;
    sv.iter().map(|s| (s - 1.0) * (s - 1.0)).sum::<f64>().sqrt()
}

/// The n x n tangent-space projector P_{T_x} = I - g'^T (g' g'^T)^{-1} g'.
#[derive(Debug, Clone)]
pub struct TangentProjector {
    pub at_point: DVector<f64>,
    pub matrix: DMatrix<f64>,
}

impl TangentProjector {
    pub fn apply(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.matrix * v
    }
}

/// Build the explicit tangent projector matrix at a feasible point.
pub fn tangent_projector(c: &ConstraintMap, x: &DVector<f64>) -> Result<TangentProjector> {
    let gf = c.gram_factor(x)?;
    let jac = gf.jacobian();
    // P = I - J^T (J J^T)^{-1} J, built column by column through the solve
    let gram_inv_j = {
        let mut cols = DMatrix::zeros(c.m(), c.n());
        for j in 0..c.n() {
            let col = gf.solve_gram(&jac.column(j).into_owned());
            cols.set_column(j, &col);
        }
        cols
    };
    let matrix = DMatrix::identity(c.n(), c.n()) - jac.transpose() * gram_inv_j;
    Ok(TangentProjector {
        at_point: x.clone(),
        matrix,
    })
}

/// Project v onto the tangent subspace T_x (null space of g'(x)).
pub fn tangent_project(c: &ConstraintMap, x: &DVector<f64>, v: &DVector<f64>) -> Result<DVector<f64>> {
    Ok(c.gram_factor(x)?.project_tangent(v))
}

/// Radial projection onto the sphere of the given radius.
pub fn project_sphere(x: &DVector<f64>, radius: f64) -> Result<DVector<f64>> {
    project_sphere_tol(x, radius, tolerances::PROJ_TOL)
}

fn project_sphere_tol(x: &DVector<f64>, radius: f64, proj_tol: f64) -> Result<DVector<f64>> {
    let norm = x.norm();
    if norm <= proj_tol {
        return Err(SolveError::AmbiguousProjection {
            detail: format!("point norm {norm:.3e} too close to the sphere center"),
        });
    }
    Ok(x * (radius / norm))
}

/// Metric projection onto the Stiefel manifold: U I_{k,n} V^T from the SVD.
/// Unique exactly when the smallest singular value is positive.
pub fn project_stiefel(x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    project_stiefel_tol(x, tolerances::PROJ_TOL)
}

fn project_stiefel_tol(x: &DMatrix<f64>, proj_tol: f64) -> Result<DMatrix<f64>> {
    let svd = x.clone().svd(true, true);
    let min_sv = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if min_sv <= proj_tol {
        return Err(SolveError::AmbiguousProjection {
            detail: format!(
                "smallest singular value {min_sv:.3e} is on the boundary of the R = 1 tube"
            ),
        });
    }
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    Ok(u * v_t)
}

/// Nearest point on S = {g = 0} by damped Gauss-Newton on the first-order
/// optimality system of min ||y - x||^2 s.t. g(y) = 0, seeded at x.
///
/// Inside the tube U_S(R) this converges to the metric projection; the caller
/// is responsible for the tube precondition (a cheap estimate is
/// ||g(x)|| / sigma_min(g'(x))).
pub fn project_levelset(c: &ConstraintMap, x: &DVector<f64>) -> Result<DVector<f64>> {
    let n = c.n();
    let m = c.m();
    let mut y = x.clone();
    let mut mu = DVector::zeros(m);

    let residual = |y: &DVector<f64>, mu: &DVector<f64>| -> DVector<f64> {
        let jac = c.jacobian(y);
        let top = y - x + jac.transpose() * mu;
        let bottom = c.g(y);
        let mut phi = DVector::zeros(n + m);
        phi.rows_mut(0, n).copy_from(&top);
        phi.rows_mut(n, m).copy_from(&bottom);
        phi
    };

    for _ in 0..c.tol.max_proj_iters {
        // converged when feasible and the correction is normal to S at y
        let feas = c.feasibility(&y);
        if feas <= c.tol.feas_tol {
            let gf = c.gram_factor(&y)?;
            let correction = x - &y;
            let tangential = gf.project_tangent(&correction).norm();
            if tangential <= c.tol.ortho_tol * correction.norm().max(1.0) {
                return Ok(y);
            }
        }

        let jac = c.jacobian(&y);
        let mut a = DMatrix::zeros(n + m, n + m);
        a.view_mut((0, 0), (n, n))
            .copy_from(&DMatrix::identity(n, n));
        a.view_mut((0, n), (n, m)).copy_from(&jac.transpose());
        a.view_mut((n, 0), (m, n)).copy_from(&jac);
        let phi = residual(&y, &mu);
        let phi_norm = phi.norm();
        let step = a.lu().solve(&(-&phi)).ok_or(SolveError::RankDeficient {
            cond: f64::INFINITY,
        })?;

        // backtracking on ||Phi||
        let mut t = 1.0;
        let mut accepted = false;
        while t >= 1.0 / 1024.0 {
            let y_try = &y + step.rows(0, n) * t;
            let mu_try = &mu + step.rows(n, m) * t;
            if residual(&y_try, &mu_try).norm() <= (1.0 - 1e-4 * t) * phi_norm {
                y = y_try;
                mu = mu_try;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            return Err(SolveError::NoConvergence {
                iters: c.tol.max_proj_iters,
                feas: c.feasibility(&y),
            });
        }
    }
    // one final acceptance check after the last step
    let feas = c.feasibility(&y);
    if feas <= c.tol.feas_tol {
        let gf = c.gram_factor(&y)?;
        let correction = x - &y;
        if gf.project_tangent(&correction).norm() <= c.tol.ortho_tol * correction.norm().max(1.0) {
            return Ok(y);
        }
    }
    Err(SolveError::NoConvergence {
        iters: c.tol.max_proj_iters,
        feas,
    })
}

/// Metric projection onto S: the exact projector when one exists, otherwise
/// the Gauss-Newton level-set iteration.
pub fn project(c: &ConstraintMap, x: &DVector<f64>) -> Result<DVector<f64>> {
    match &c.exact_projector {
        Some(p) => p(x),
        None => project_levelset(c, x),
    }
}

/// Classification of a point against the tube U_S(R).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TubeClass {
    Inside,
    Boundary,
    Outside,
}

#[derive(Debug, Clone)]
pub struct TubeReport {
    pub class: TubeClass,
    pub rho: f64,
    /// True when the distance came from the iterative projection rather than
    /// a closed form.
    pub estimated: bool,
}

/// Classify x against the tube of proximal smoothness. Best-effort: generic
/// constraints report an estimated distance.
pub fn tube_membership(c: &ConstraintMap, x: &DVector<f64>) -> TubeReport {
    let (rho, estimated) = match &c.exact_distance {
        Some(d) => (d(x), false),
        None => match project_levelset(c, x) {
            Ok(y) => ((x - y).norm(), true),
            Err(_) => (f64::INFINITY, true),
        },
    };
    let r = c.prox_radius();
    let class = if rho < r - c.tol.tube_margin {
        TubeClass::Inside
    } else if rho <= r + c.tol.tube_margin {
        TubeClass::Boundary
    } else {
        TubeClass::Outside
    };
    TubeReport {
        class,
        rho,
        estimated,
    }
}
