//! Quadratic equality constraints forcing a block of the unknown vector to
//! be a rotation matrix, and their lifted inner-product matrices.
//!
//! The lifted variable is `X = x xᵀ` with `x = [Ψ; -1]`, so a polynomial
//! constraint `c(Ψ) = 0` of degree two becomes `⟨Q, X⟩ = 0` where
//! quadratic coefficients sit in the leading block, linear coefficients are
//! split over the last row and column (with the sign of the `-1`), and the
//! constant sits in the corner.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ConstraintFamily {
    /// Entries of `R Rᵀ = I`.
    RowOrtho,
    /// Entries of `Rᵀ R = I`.
    ColOrtho,
    /// Column 1 of `R - adj(R)ᵀ = 0`.
    AdjugateCol1,
    AdjugateCol2,
    AdjugateCol3,
    /// Rotation composition across three frames.
    Composition,
    /// Translation compatibility across three frames.
    TranslationCompat,
}

/// Degree-two polynomial in the unknowns.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Polynomial {
    pub constant: f64,
    pub linear: Vec<(usize, f64)>,
    pub quadratic: Vec<(usize, usize, f64)>,
}

impl Polynomial {
    pub fn eval(&self, psi: &[f64]) -> f64 {
        self.constant
            + self.linear.iter().map(|(i, c)| c * psi[*i]).sum::<f64>()
            + self
                .quadratic
                .iter()
                .map(|(i, j, c)| c * psi[*i] * psi[*j])
                .sum::<f64>()
    }

    pub fn add_linear(&mut self, i: usize, c: f64) {
        self.linear.push((i, c));
    }

    pub fn add_product(&mut self, i: usize, j: usize, c: f64) {
        self.quadratic.push((i, j, c));
    }

    /// Symmetric matrix `Q` of size `n + 1` with `⟨Q, [Ψ;-1][Ψ;-1]ᵀ⟩ = p(Ψ)`.
    pub fn lift(&self, n: usize) -> DMatrix<f64> {
        let mut q = DMatrix::zeros(n + 1, n + 1);
        for &(i, j, c) in &self.quadratic {
            q[(i, j)] += 0.5 * c;
            q[(j, i)] += 0.5 * c;
        }
        for &(i, c) in &self.linear {
            q[(i, n)] -= 0.5 * c;
            q[(n, i)] -= 0.5 * c;
        }
        q[(n, n)] += self.constant;
        q
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticConstraint {
    pub q: DMatrix<f64>,
    pub label: String,
    pub family: ConstraintFamily,
    pub poly: Polynomial,
}

impl QuadraticConstraint {
    pub fn new(
        poly: Polynomial,
        n: usize,
        label: impl Into<String>,
        family: ConstraintFamily,
    ) -> Self {
        Self {
            q: poly.lift(n),
            label: label.into(),
            family,
            poly,
        }
    }

    /// Direct polynomial evaluation.
    pub fn eval(&self, psi: &[f64]) -> f64 {
        self.poly.eval(psi)
    }

    /// `⟨Q, X⟩`.
    pub fn inner(&self, x: &DMatrix<f64>) -> f64 {
        self.q.dot(x)
    }
}

/// Which rotation constraint families to include.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConstraintSet {
    /// All 21 constraints, including the dependent families.
    #[default]
    Full,
    /// Row orthogonality only (C1–C6).
    IndependentOnly,
}

impl ConstraintSet {
    pub fn includes(&self, family: ConstraintFamily) -> bool {
        match self {
            ConstraintSet::Full => true,
            ConstraintSet::IndependentOnly => family == ConstraintFamily::RowOrtho,
        }
    }
}

/// Symbolic 3×3 matrix of unknown indices, optionally transposed.
#[derive(Debug, Clone, Copy)]
pub(crate) struct SymMat {
    offset: usize,
    transposed: bool,
}

impl SymMat {
    pub(crate) fn at(offset: usize) -> Self {
        Self {
            offset,
            transposed: false,
        }
    }

    pub(crate) fn t(self) -> Self {
        Self {
            transposed: !self.transposed,
            ..self
        }
    }

    pub(crate) fn idx(&self, i: usize, j: usize) -> usize {
        if self.transposed {
            self.offset + 3 * j + i
        } else {
            self.offset + 3 * i + j
        }
    }
}

/// Adds `coeff * (A B)_{ij}` to `poly`.
pub(crate) fn add_matmul_entry(
    poly: &mut Polynomial,
    a: SymMat,
    b: SymMat,
    i: usize,
    j: usize,
    coeff: f64,
) {
    for k in 0..3 {
        poly.add_product(a.idx(i, k), b.idx(k, j), coeff);
    }
}

/// Cofactor `(-1)^{i+j} M_ij` of the symbolic matrix as a polynomial term.
fn add_cofactor(poly: &mut Polynomial, m: SymMat, i: usize, j: usize, coeff: f64) {
    let rows: Vec<usize> = (0..3).filter(|r| *r != i).collect();
    let cols: Vec<usize> = (0..3).filter(|c| *c != j).collect();
    let sign = if (i + j).is_multiple_of(2) { 1.0 } else { -1.0 };
    let c = sign * coeff;
    poly.add_product(m.idx(rows[0], cols[0]), m.idx(rows[1], cols[1]), c);
    poly.add_product(m.idx(rows[0], cols[1]), m.idx(rows[1], cols[0]), -c);
}

/// The 21 rotation constraints on the 3×3 block starting at `offset`
/// (row-major) inside an `n`-vector, labelled `C1`..`C21` with `prefix`.
pub fn rotation_constraints_at(offset: usize, n: usize, prefix: &str) -> Vec<QuadraticConstraint> {
    let r = SymMat::at(offset);
    let mut out = Vec::with_capacity(21);
    let pairs = [(0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2)];

    // R Rᵀ = I, then Rᵀ R = I.
    for (family, m) in [
        (ConstraintFamily::RowOrtho, r),
        (ConstraintFamily::ColOrtho, r.t()),
    ] {
        for &(a, b) in &pairs {
            let mut p = Polynomial::default();
            add_matmul_entry(&mut p, m, m.t(), a, b, 1.0);
            if a == b {
                p.constant = -1.0;
            }
            let label = format!("{prefix}C{}", out.len() + 1);
            out.push(QuadraticConstraint::new(p, n, label, family));
        }
    }

    // R - adj(R)ᵀ = 0 column by column; adj(R)ᵀ is the cofactor matrix.
    let families = [
        ConstraintFamily::AdjugateCol1,
        ConstraintFamily::AdjugateCol2,
        ConstraintFamily::AdjugateCol3,
    ];
    for (j, family) in families.into_iter().enumerate() {
        for i in 0..3 {
            let mut p = Polynomial::default();
            p.add_linear(r.idx(i, j), 1.0);
            add_cofactor(&mut p, r, i, j, -1.0);
            let label = format!("{prefix}C{}", out.len() + 1);
            out.push(QuadraticConstraint::new(p, n, label, family));
        }
    }
    out
}

/// The 21 rotation constraints for the two-agent unknown vector.
pub fn rotation_constraints() -> Vec<QuadraticConstraint> {
    rotation_constraints_at(0, crate::linear_system::POSE_UNKNOWNS, "")
}

pub fn select(
    constraints: Vec<QuadraticConstraint>,
    set: ConstraintSet,
) -> Vec<QuadraticConstraint> {
    constraints
        .into_iter()
        .filter(|c| set.includes(c.family))
        .collect()
}

/// Stacks `vec(Q_i)` as rows and returns the numerical rank.
pub fn lifted_rank(constraints: &[QuadraticConstraint]) -> usize {
    if constraints.is_empty() {
        return 0;
    }
    let dim = constraints[0].q.len();
    let mut m = DMatrix::zeros(constraints.len(), dim);
    for (i, c) in constraints.iter().enumerate() {
        for (j, v) in c.q.iter().enumerate() {
            m[(i, j)] = *v;
        }
    }
    crate::linear_system::numerical_rank(&m.svd(false, false).singular_values, 1e-10)
}

/// `[Ψ; -1][Ψ; -1]ᵀ`.
pub fn lifted_outer(psi: &[f64]) -> DMatrix<f64> {
    let n = psi.len();
    let mut x = nalgebra::DVector::zeros(n + 1);
    x.rows_mut(0, n).copy_from_slice(psi);
    x[n] = -1.0;
    &x * x.transpose()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::published_rotation;
    use crate::geometry::{EulerAngles, Rotation};
    use crate::linear_system::PsiVector;
    use nalgebra::{Matrix3, Vector3};
    use proptest::prelude::*;

    fn psi_of(m: &Matrix3<f64>, t: [f64; 3]) -> Vec<f64> {
        PsiVector::from_parts(m, &Vector3::from(t)).0.to_vec()
    }

    #[test]
    fn counts_and_families() {
        let cs = rotation_constraints();
        assert_eq!(cs.len(), 21);
        let count = |f| cs.iter().filter(|c| c.family == f).count();
        assert_eq!(count(ConstraintFamily::RowOrtho), 6);
        assert_eq!(count(ConstraintFamily::ColOrtho), 6);
        assert_eq!(count(ConstraintFamily::AdjugateCol1), 3);
        assert_eq!(count(ConstraintFamily::AdjugateCol2), 3);
        assert_eq!(count(ConstraintFamily::AdjugateCol3), 3);
        assert_eq!(cs[0].label, "C1");
        assert_eq!(cs[20].label, "C21");
        for c in &cs {
            assert_eq!(c.q, c.q.transpose());
        }
        assert_eq!(select(cs, ConstraintSet::IndependentOnly).len(), 6);
    }

    #[test]
    fn adjugate_column_one_matches_explicit_form() {
        let cs = rotation_constraints();
        let psi: Vec<f64> = (0..12).map(|i| 0.3 * i as f64 - 1.1).collect();
        let p = |i: usize| psi[i - 1];
        assert!((cs[12].eval(&psi) - (p(1) - (p(5) * p(9) - p(6) * p(8)))).abs() < 1e-12);
        assert!((cs[13].eval(&psi) - (p(4) - (p(3) * p(8) - p(2) * p(9)))).abs() < 1e-12);
        assert!((cs[14].eval(&psi) - (p(7) - (p(2) * p(6) - p(3) * p(5)))).abs() < 1e-12);
    }

    #[test]
    fn identity_satisfies_all() {
        let psi = psi_of(&Matrix3::identity(), [10.0, -3.0, 4.0]);
        for c in rotation_constraints() {
            assert!(c.eval(&psi).abs() < 1e-12, "{}", c.label);
        }
    }

    #[test]
    fn published_rotation_nearly_satisfies_all() {
        let psi = psi_of(&published_rotation(), [854.87, 6.18, 1.93]);
        for c in rotation_constraints() {
            assert!(c.eval(&psi).abs() < 5e-3, "{} = {}", c.label, c.eval(&psi));
        }
    }

    #[test]
    fn reflection_violates_determinant_constraints_only() {
        let m = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, -1.0));
        let psi = psi_of(&m, [0.0; 3]);
        let cs = rotation_constraints();
        for c in &cs[..12] {
            assert!(c.eval(&psi).abs() < 1e-12);
        }
        let worst = cs[12..]
            .iter()
            .map(|c| c.eval(&psi).abs())
            .fold(0.0, f64::max);
        assert!(worst >= 1.0);
    }

    #[test]
    fn lifted_matrices_span_twenty_dimensions() {
        let cs = rotation_constraints();
        // tr(R Rᵀ) = tr(Rᵀ R): the diagonal row and column constraints sum
        // to the same polynomial, so exactly one dependency exists.
        let diff = (&cs[0].q + &cs[1].q + &cs[2].q) - (&cs[6].q + &cs[7].q + &cs[8].q);
        assert!(diff.amax() < 1e-15);
        assert_eq!(lifted_rank(&cs), 20);
        assert_eq!(lifted_rank(&cs[..6]), 6);
        assert_eq!(lifted_rank(&cs[..12]), 11);
        let mut no_c9 = cs.clone();
        no_c9.remove(8);
        assert_eq!(lifted_rank(&no_c9), 20);
    }

    proptest! {
        #[test]
        fn inner_product_matches_polynomial(psi in proptest::collection::vec(-3.0..3.0f64, 12)) {
            let x = lifted_outer(&psi);
            for c in rotation_constraints() {
                prop_assert!((c.inner(&x) - c.eval(&psi)).abs() < 1e-12);
            }
        }

        #[test]
        fn vanish_on_so3(a in -3.1..3.1f64, b in -1.5..1.5f64, g in -3.1..3.1f64) {
            let m = Rotation::from_euler(EulerAngles::new(a, b, g)).into_inner();
            let psi = psi_of(&m, [1.0, 2.0, 3.0]);
            for c in rotation_constraints() {
                prop_assert!(c.eval(&psi).abs() < 1e-12);
            }
        }

        #[test]
        fn violated_off_so3(entries in proptest::array::uniform9(-2.0..2.0f64)) {
            let m = Matrix3::from_row_slice(&entries);
            prop_assume!(Rotation::with_tolerance(m, 1e-3).is_err());
            let psi = psi_of(&m, [0.0; 3]);
            let worst = rotation_constraints().iter().map(|c| c.eval(&psi).abs()).fold(0.0, f64::max);
            prop_assert!(worst > 1e-6);
        }
    }
}
