//! The Lagrangian first-order system F(z), its derivative F'(z), the
//! least-squares multiplier, and the stationarity residual ||P_{T_x} f'(x)||.

use crate::error::{Result, SolveError};
use crate::ledger::Constant;
use crate::manifold::ConstraintMap;
use nalgebra::{DMatrix, DVector};

type ScalarFn = dyn Fn(&DVector<f64>) -> f64 + Send + Sync;
type VecFn = dyn Fn(&DVector<f64>) -> DVector<f64> + Send + Sync;
type MatFn = dyn Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync;

/// The objective f with its first two derivatives and Lipschitz constants
/// L0 (of f) and L1 (of f'). The constants record whether they were supplied
/// by the user, sampled, or derived in closed form.
pub struct ObjectiveMap {
    n: usize,
    f: Box<ScalarFn>,
    grad: Box<VecFn>,
    hess: Box<MatFn>,
    l0: Constant,
    l1: Constant,
}

impl std::fmt::Debug for ObjectiveMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ObjectiveMap")
            .field("n", &self.n)
            .field("l0", &self.l0)
            .field("l1", &self.l1)
            .finish()
    }
}

impl ObjectiveMap {
    pub fn new(
        n: usize,
        f: impl Fn(&DVector<f64>) -> f64 + Send + Sync + 'static,
        grad: impl Fn(&DVector<f64>) -> DVector<f64> + Send + Sync + 'static,
        hess: impl Fn(&DVector<f64>) -> DMatrix<f64> + Send + Sync + 'static,
        l0: Constant,
        l1: Constant,
    ) -> Result<Self> {
        if !(l0.value > 0.0) || !(l1.value > 0.0) {
            return Err(SolveError::InvalidConfig(format!(
                "Lipschitz constants must be positive, got L0 = {}, L1 = {}",
                l0.value, l1.value
            )));
        }
        Ok(Self {
            n,
            f: Box::new(f),
            grad: Box::new(grad),
            hess: Box::new(hess),
            l0,
            l1,
        })
    }

    /// The quadratic form f(x) = (A x, x) with exact constants on the unit
    /// sphere: L0 = L1 = 2 ||A||_2 (L0 is the sup of ||f'|| over the sphere).
    pub fn quadratic_on_unit_sphere(a: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(SolveError::DimensionMismatch {
                what: "quadratic form matrix",
                expected: n,
                got: a.ncols(),
            });
        }
        let norm = crate::linalg::op_norm(&a);
        let a_grad = a.clone();
        let a_hess = a.clone();
        Self::new(
            n,
            move |x| (&a * x).dot(x),
            move |x| &a_grad * x * 2.0,
            move |_| &a_hess * 2.0,
            Constant::closed_form(2.0 * norm),
            Constant::closed_form(2.0 * norm),
        )
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn f(&self, x: &DVector<f64>) -> f64 {
        (self.f)(x)
    }

    pub fn grad(&self, x: &DVector<f64>) -> DVector<f64> {
        let g = (self.grad)(x);
        debug_assert_eq!(g.len(), self.n);
        g
    }

    pub fn hess(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let h = (self.hess)(x);
        debug_assert_eq!((h.nrows(), h.ncols()), (self.n, self.n));
        h
    }

    pub fn l0(&self) -> Constant {
        self.l0
    }

    pub fn l1(&self) -> Constant {
        self.l1
    }

    pub fn set_l0(&mut self, l0: Constant) {
        self.l0 = l0;
    }

    pub fn set_l1(&mut self, l1: Constant) {
        self.l1 = l1;
    }
}

/// The extended variable z = [x, lambda].
#[derive(Debug, Clone, PartialEq)]
pub struct KktPoint {
    pub x: DVector<f64>,
    pub lambda: DVector<f64>,
}

impl KktPoint {
    pub fn new(x: DVector<f64>, lambda: DVector<f64>) -> Self {
        Self { x, lambda }
    }

    pub fn from_stacked(z: &DVector<f64>, n: usize) -> Self {
        Self {
            x: z.rows(0, n).into_owned(),
            lambda: z.rows(n, z.len() - n).into_owned(),
        }
    }

    pub fn stacked(&self) -> DVector<f64> {
        let n = self.x.len();
        let m = self.lambda.len();
        let mut z = DVector::zeros(n + m);
        z.rows_mut(0, n).copy_from(&self.x);
        z.rows_mut(n, m).copy_from(&self.lambda);
        z
    }

    pub fn dim(&self) -> usize {
        self.x.len() + self.lambda.len()
    }
}

/// Least-squares multiplier lambda_x = -(g' g'^T)^{-1} g' f'(x); the residual
/// f' + g'^T lambda_x equals the tangential gradient P_{T_x} f'(x).
pub fn least_squares_multiplier(
    obj: &ObjectiveMap,
    c: &ConstraintMap,
    x: &DVector<f64>,
) -> Result<DVector<f64>> {
    Ok(c.gram_factor(x)?.multipliers(&obj.grad(x)))
}

/// The stacked Lagrangian first-order system
/// F(z) = [f'(x) + g'(x)^T lambda; g(x)].
pub fn kkt_residual(obj: &ObjectiveMap, c: &ConstraintMap, z: &KktPoint) -> DVector<f64> {
    let n = c.n();
    let m = c.m();
    let top = obj.grad(&z.x) + c.jacobian(&z.x).transpose() * &z.lambda;
    let bottom = c.g(&z.x);
    let mut out = DVector::zeros(n + m);
    out.rows_mut(0, n).copy_from(&top);
    out.rows_mut(n, m).copy_from(&bottom);
    out
}

/// The Lagrangian Hessian block matrix
/// F'(z) = [[f''(x) + sum_i lambda_i g_i''(x), g'(x)^T], [g'(x), 0]].
pub fn kkt_matrix(obj: &ObjectiveMap, c: &ConstraintMap, z: &KktPoint) -> DMatrix<f64> {
    let n = c.n();
    let m = c.m();
    let mut top_left = obj.hess(&z.x);
    for (i, h) in c.hessians(&z.x).into_iter().enumerate() {
        top_left += h * z.lambda[i];
    }
    let jac = c.jacobian(&z.x);
    let mut out = DMatrix::zeros(n + m, n + m);
    out.view_mut((0, 0), (n, n)).copy_from(&top_left);
    out.view_mut((0, n), (n, m)).copy_from(&jac.transpose());
    out.view_mut((n, 0), (m, n)).copy_from(&jac);
    out
}

/// Stationarity residual ||P_{T_x} f'(x)||. Vanishes exactly at stationary
/// points; coincides with ||F(x, lambda_x)|| on S.
pub fn stationarity_residual(obj: &ObjectiveMap, c: &ConstraintMap, x: &DVector<f64>) -> Result<f64> {
    Ok(c.gram_factor(x)?.project_tangent(&obj.grad(x)).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::{DMatrix, DVector};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn diag_obj(entries: &[f64]) -> ObjectiveMap {
        let a = DMatrix::from_diagonal(&DVector::from_vec(entries.to_vec()));
        ObjectiveMap::quadratic_on_unit_sphere(a).unwrap()
    }

    fn e(n: usize, i: usize) -> DVector<f64> {
        let mut v = DVector::zeros(n);
        v[i] = 1.0;
        v
    }

    #[test]
    fn lambda_at_eigenvector_is_minus_eigenvalue() {
        // f = (Ax, x), A = diag(1,2), x = e1: lambda_x = -1
        let obj = diag_obj(&[1.0, 2.0]);
        let c = ConstraintMap::sphere(2, 1.0).unwrap();
        let lam = least_squares_multiplier(&obj, &c, &e(2, 0)).unwrap();
        assert_eq!(lam.len(), 1);
        assert_relative_eq!(lam[0], -1.0, max_relative = 1e-12);

        // 2x1 least squares by hand: minimize ||f' + g'^T t|| with
        // f' = (2, 0), g'^T = (2, 0): t = -(g' f') / (g' g'^T) = -4/4
        let by_hand = -(2.0 * 2.0) / (2.0 * 2.0);
        assert_relative_eq!(lam[0], by_hand, max_relative = 1e-15);
    }

    #[test]
    fn lambda_zero_for_tangent_gradient() {
        // linear objective c^T x with c tangent at x: multiplier vanishes
        let c = ConstraintMap::sphere(3, 1.0).unwrap();
        let x = e(3, 0);
        let dir = e(3, 1); // tangent at e1
        let obj = ObjectiveMap::new(
            3,
            {
                let d = dir.clone();
                move |x| d.dot(x)
            },
            {
                let d = dir.clone();
                move |_| d.clone()
            },
            |_| DMatrix::zeros(3, 3),
            Constant::user(1.0),
            Constant::user(1.0),
        )
        .unwrap();
        let lam = least_squares_multiplier(&obj, &c, &x).unwrap();
        assert!(lam[0].abs() < 1e-14);
    }

    #[test]
    fn lambda_is_least_squares_optimal() {
        let obj = diag_obj(&[1.0, 2.0, 4.0]);
        let c = ConstraintMap::sphere(3, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let x = crate::linalg::random_unit_vector(3, 1.0, &mut rng);
        let lam = least_squares_multiplier(&obj, &c, &x).unwrap();
        let best = kkt_residual(&obj, &c, &KktPoint::new(x.clone(), lam.clone())).norm();
        for _ in 0..1000 {
            let t: f64 = rng.gen_range(-10.0..10.0);
            let trial = kkt_residual(
                &obj,
                &c,
                &KktPoint::new(x.clone(), DVector::from_element(1, t)),
            )
            .norm();
            assert!(best <= trial + 1e-12);
        }
        // directional derivative of t -> ||F(x, t)||^2 vanishes at lambda_x
        let h = 1e-6;
        let sq = |t: f64| {
            kkt_residual(
                &obj,
                &c,
                &KktPoint::new(x.clone(), DVector::from_element(1, t)),
            )
            .norm_squared()
        };
        let deriv = (sq(lam[0] + h) - sq(lam[0] - h)) / (2.0 * h);
        assert!(deriv.abs() < 1e-6);
    }

    #[test]
    fn kkt_residual_hand_example() {
        // x = e1 on the unit sphere, A = diag(1,2), lambda = 0 -> [2, 0, 0]
        let obj = diag_obj(&[1.0, 2.0]);
        let c = ConstraintMap::sphere(2, 1.0).unwrap();
        let z = KktPoint::new(e(2, 0), DVector::zeros(1));
        let f = kkt_residual(&obj, &c, &z);
        assert_relative_eq!(f[0], 2.0, max_relative = 1e-15);
        assert!(f[1].abs() < 1e-15);
        assert!(f[2].abs() < 1e-15);
    }

    #[test]
    fn kkt_residual_vanishes_at_stationary_pair() {
        let obj = diag_obj(&[1.0, 2.0]);
        let c = ConstraintMap::sphere(2, 1.0).unwrap();
        let x = e(2, 1);
        let lam = least_squares_multiplier(&obj, &c, &x).unwrap();
        let f = kkt_residual(&obj, &c, &KktPoint::new(x, lam));
        assert!(f.norm() < 1e-10);
    }

    #[test]
    fn feasibility_block_vanishes_on_s() {
        let obj = diag_obj(&[1.0, 3.0, 5.0]);
        let c = ConstraintMap::sphere(3, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let x = crate::linalg::random_unit_vector(3, 1.0, &mut rng);
            let lam = DVector::from_element(1, rng.gen_range(-5.0..5.0));
            let f = kkt_residual(&obj, &c, &KktPoint::new(x, lam));
            assert!(f.rows(3, 1).norm() <= 1e-10);
        }
    }

    #[test]
    fn kkt_matrix_hand_assembly_n2() {
        // f = (Ax, x), g = |x|^2 - 1, scalar lambda:
        // top-left 2A + 2 lambda I, off-diagonal 2x
        let obj = diag_obj(&[1.0, 2.0]);
        let c = ConstraintMap::sphere(2, 1.0).unwrap();
        let x = DVector::from_vec(vec![0.6, 0.8]);
        let lam = 0.7;
        let fp = kkt_matrix(&obj, &c, &KktPoint::new(x.clone(), DVector::from_element(1, lam)));
        let mut expected = DMatrix::zeros(3, 3);
        expected[(0, 0)] = 2.0 * 1.0 + 2.0 * lam;
        expected[(1, 1)] = 2.0 * 2.0 + 2.0 * lam;
        expected[(0, 2)] = 2.0 * x[0];
        expected[(1, 2)] = 2.0 * x[1];
        expected[(2, 0)] = 2.0 * x[0];
        expected[(2, 1)] = 2.0 * x[1];
        assert!((fp - expected).norm() < 1e-14);
    }

    #[test]
    fn kkt_matrix_is_symmetric_and_fd_consistent() {
        let obj = diag_obj(&[1.0, 2.0, 4.0]);
        let c = ConstraintMap::sphere(3, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = crate::linalg::random_unit_vector(3, 1.0, &mut rng);
        let lam = DVector::from_element(1, 0.3);
        let z = KktPoint::new(x, lam);
        let fp = kkt_matrix(&obj, &c, &z);
        assert!(crate::linalg::symmetry_defect(&fp) < 1e-12);

        // independent central-difference oracle on the stacked variable
        let n = 3;
        let zs = z.stacked();
        let h = 1e-6;
        let mut fd = DMatrix::zeros(4, 4);
        for j in 0..4 {
            let mut zp = zs.clone();
            let mut zm = zs.clone();
            zp[j] += h;
            zm[j] -= h;
            let fp_col = kkt_residual(&obj, &c, &KktPoint::from_stacked(&zp, n));
            let fm_col = kkt_residual(&obj, &c, &KktPoint::from_stacked(&zm, n));
            fd.set_column(j, &((fp_col - fm_col) / (2.0 * h)));
        }
        let rel = (fd - &fp).norm() / fp.norm();
        assert!(rel < 1e-5, "FD mismatch: {rel:.3e}");
    }

    #[test]
    fn kkt_matrix_invertible_at_nondegenerate_stationary_point() {
        let obj = diag_obj(&[1.0, 2.0]);
        let c = ConstraintMap::sphere(2, 1.0).unwrap();
        let x = e(2, 0);
        let lam = least_squares_multiplier(&obj, &c, &x).unwrap();
        let fp = kkt_matrix(&obj, &c, &KktPoint::new(x, lam));
        assert!(crate::linalg::min_singular_value(&fp) > 0.1);
    }

    #[test]
    fn residual_examples_and_scaling() {
        let obj = diag_obj(&[1.0, 2.0]);
        let c = ConstraintMap::sphere(2, 1.0).unwrap();

        // eigenvector: stationarity
        assert!(stationarity_residual(&obj, &c, &e(2, 0)).unwrap() < 1e-14);

        // x = (1,1)/sqrt(2): P_T f' = (-1, 1)/sqrt(2), norm exactly 1
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let x = DVector::from_vec(vec![s, s]);
        let r = stationarity_residual(&obj, &c, &x).unwrap();
        assert_relative_eq!(r, 1.0, max_relative = 1e-12);

        // scaling f by t scales the residual by t
        let a3 = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 6.0]));
        let obj3 = ObjectiveMap::quadratic_on_unit_sphere(a3).unwrap();
        let r3 = stationarity_residual(&obj3, &c, &x).unwrap();
        assert_relative_eq!(r3, 3.0 * r, max_relative = 1e-12);
    }

    #[test]
    fn residual_identity_with_kkt_norm_on_random_points() {
        // ||F(x, lambda_x)|| = ||P_{T_x} f'(x)|| on feasible points
        let obj = diag_obj(&[1.0, 2.0, 4.0, 7.0]);
        let c = ConstraintMap::sphere(4, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(123);
        for _ in 0..10_000 {
            let x = crate::linalg::random_unit_vector(4, 1.0, &mut rng);
            let lam = least_squares_multiplier(&obj, &c, &x).unwrap();
            let f_norm = kkt_residual(&obj, &c, &KktPoint::new(x.clone(), lam)).norm();
            let resid = stationarity_residual(&obj, &c, &x).unwrap();
            assert!(
                (f_norm - resid).abs() <= 1e-10 * (1.0 + resid),
                "identity broke: {f_norm} vs {resid}"
            );
        }
    }

    #[test]
    fn stacking_round_trip() {
        let z = KktPoint::new(DVector::from_vec(vec![1.0, 2.0]), DVector::from_vec(vec![3.0]));
        let back = KktPoint::from_stacked(&z.stacked(), 2);
        assert_eq!(z, back);
    }
}
