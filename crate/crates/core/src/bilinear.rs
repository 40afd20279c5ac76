//! Closed-form comparative statics for bilinear technologies `y(x̃, x) = x̃ᵀΣx`.
//!
//! The reallocation generator `Ṙ` solves `ΣṘ + ṘΣ = Σ̇ − Σ̇ᵀ` and the earnings
//! slope changes by `Ẇ = Σ̇ − ΣṘ`, so that `ṙ(x) = Ṙx` and `∇ẇ(x) = Ẇx`.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Complementarity matrix and its rate of change.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearTech {
    sigma: DMatrix<f64>,
    dsigma: DMatrix<f64>,
}

impl BilinearTech {
    /// Validates that `sigma` is symmetric positive definite and both are `d × d`.
    pub fn new(sigma: DMatrix<f64>, dsigma: DMatrix<f64>) -> Result<Self> {
        let d = sigma.nrows();
        if d == 0 || !sigma.is_square() || dsigma.shape() != (d, d) {
            return Err(Error::InvalidTechnology("sigma and dsigma must be d x d".into()));
        }
        if sigma.iter().chain(dsigma.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidTechnology("non-finite entry".into()));
        }
        check_spd(&sigma)?;
        Ok(Self { sigma, dsigma })
    }

    pub fn from_rows(sigma: &[Vec<f64>], dsigma: &[Vec<f64>]) -> Result<Self> {
        Self::new(from_rows(sigma)?, from_rows(dsigma)?)
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn dsigma(&self) -> &DMatrix<f64> {
        &self.dsigma
    }
}

/// Builds a dense matrix from nested rows.
pub fn from_rows(rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(Error::InvalidTechnology("ragged matrix".into()));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|i| m.row(i).iter().copied().collect()).collect()
}

pub(crate) fn check_spd(sigma: &DMatrix<f64>) -> Result<()> {
    let scale = sigma.amax().max(f64::MIN_POSITIVE);
    if (sigma - sigma.transpose()).amax() > 1e-10 * scale.max(1.0) {
        return Err(Error::InvalidTechnology("sigma is not symmetric".into()));
    }
    let eig = sigma.clone().symmetric_eigenvalues();
    let max = eig.max();
    let min = eig.min();
    if !(max > 0.0) || min <= 1e-12 * max {
        return Err(Error::InvalidTechnology(format!(
            "sigma is not positive definite (eigenvalues in [{min:e}, {max:e}])"
        )));
    }
    Ok(())
}

/// Unique antisymmetric solution of `ΣṘ + ṘΣ = Σ̇ − Σ̇ᵀ`.
pub fn solve_sylvester(tech: &BilinearTech) -> DMatrix<f64> {
    let eig = tech.sigma.clone().symmetric_eigen();
    let u = &eig.eigenvectors;
    let lam = &eig.eigenvalues;
    let rhs = &tech.dsigma - tech.dsigma.transpose();
    let mut r = u.transpose() * rhs * u;
    for i in 0..r.nrows() {
        for j in 0..r.ncols() {
            r[(i, j)] /= lam[i] + lam[j];
        }
    }
    let r = u * r * u.transpose();
    // Remove round-off so the result is antisymmetric to machine precision.
    (&r - r.transpose()) * 0.5
}

/// `Ẇ = Σ̇ − ΣṘ`, symmetrized against round-off.
pub fn earnings_slope(tech: &BilinearTech, realloc: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = tech.dim();
    if realloc.shape() != (d, d) {
        return Err(Error::Dimension { expected: d, found: realloc.nrows() });
    }
    let w = &tech.dsigma - &tech.sigma * realloc;
    Ok((&w + w.transpose()) * 0.5)
}

/// Both halves of the bilinear decomposition.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearDecomposition {
    pub realloc: DMatrix<f64>,
    pub earnings_slope: DMatrix<f64>,
    /// Rotation angle, only in two dimensions.
    pub theta: Option<f64>,
}

pub fn decompose(tech: &BilinearTech) -> BilinearDecomposition {
    let realloc = solve_sylvester(tech);
    let earnings_slope = earnings_slope(tech, &realloc).expect("shapes agree");
    let theta = (tech.dim() == 2).then(|| realloc[(1, 0)]);
    BilinearDecomposition { realloc, earnings_slope, theta }
}

/// Entries of a 2 × 2 technology `Σ = [[α, β], [γ, δ]]` and its rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
pub struct TwoByTwo {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl TwoByTwo {
    pub fn matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[self.alpha, self.beta, self.gamma, self.delta])
    }

    fn of(m: &DMatrix<f64>) -> Self {
        Self { alpha: m[(0, 0)], beta: m[(0, 1)], gamma: m[(1, 0)], delta: m[(1, 1)] }
    }
}

fn check_two_by_two(sigma: &TwoByTwo) -> Result<()> {
    if (sigma.beta - sigma.gamma).abs() > 1e-10 * sigma.beta.abs().max(sigma.gamma.abs()).max(1.0) {
        return Err(Error::InvalidTechnology("beta must equal gamma".into()));
    }
    if !(sigma.alpha + sigma.delta > 0.0) {
        return Err(Error::InvalidTechnology("alpha + delta must be positive".into()));
    }
    Ok(())
}

/// `θ = (γ̇ − β̇)/(α + δ)`, the angle with `Ṙ = θ·[[0, −1], [1, 0]]`.
pub fn rotation_angle_2d(sigma: &TwoByTwo, rate: &TwoByTwo) -> Result<f64> {
    check_two_by_two(sigma)?;
    Ok((rate.gamma - rate.beta) / (sigma.alpha + sigma.delta))
}

/// Closed-form entries of `Ẇ` for a 2 × 2 technology.
///
/// With `θ` from [`rotation_angle_2d`]:
/// `Ẇ11 = α̇ − βθ`, `Ẇ12 = Ẇ21 = (αγ̇ + δβ̇)/(α + δ)`, `Ẇ22 = δ̇ + γθ`.
pub fn tabulate_earnings_slope_2d(sigma: &TwoByTwo, rate: &TwoByTwo) -> Result<TwoByTwo> {
    let theta = rotation_angle_2d(sigma, rate)?;
    let off = (sigma.alpha * rate.gamma + sigma.delta * rate.beta) / (sigma.alpha + sigma.delta);
    Ok(TwoByTwo {
        alpha: rate.alpha - sigma.beta * theta,
        beta: off,
        gamma: off,
        delta: rate.delta + sigma.gamma * theta,
    })
}

/// Convenience wrapper returning the 2 × 2 entries of `Ẇ` from the general solver.
pub fn earnings_slope_2d(sigma: &TwoByTwo, rate: &TwoByTwo) -> Result<TwoByTwo> {
    let tech = BilinearTech::new(sigma.matrix(), rate.matrix())?;
    Ok(TwoByTwo::of(&decompose(&tech).earnings_slope))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn m2(a: f64, b: f64, c: f64, d: f64) -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[a, b, c, d])
    }

    /// Independent oracle: solve the Sylvester equation as a Kronecker system.
    fn kron_oracle(sigma: &DMatrix<f64>, rhs: &DMatrix<f64>) -> DMatrix<f64> {
        let d = sigma.nrows();
        let eye = DMatrix::<f64>::identity(d, d);
        let k = eye.kronecker(sigma) + sigma.transpose().kronecker(&eye);
        let v = DMatrix::from_column_slice(d * d, 1, rhs.as_slice());
        let x = k.lu().solve(&v).unwrap();
        DMatrix::from_column_slice(d, d, x.as_slice())
    }

    fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
        let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
        &a * a.transpose() + DMatrix::identity(d, d) * 0.1
    }

    #[test]
    fn identity_case() {
        let tech = BilinearTech::new(DMatrix::identity(2, 2), m2(0.0, 1.0, 0.0, 0.0)).unwrap();
        let dec = decompose(&tech);
        assert_abs_diff_eq!(dec.realloc, m2(0.0, 0.5, -0.5, 0.0), epsilon = 1e-15);
        assert_abs_diff_eq!(dec.earnings_slope, m2(0.0, 0.5, 0.5, 0.0), epsilon = 1e-15);
        assert_abs_diff_eq!(dec.theta.unwrap(), -0.5, epsilon = 1e-15);
    }

    #[test]
    fn diagonal_sigma_case() {
        let tech = BilinearTech::new(m2(2.0, 0.0, 0.0, 1.0), m2(0.0, 1.0, 0.0, 0.0)).unwrap();
        let dec = decompose(&tech);
        assert_abs_diff_eq!(dec.realloc, m2(0.0, 1.0 / 3.0, -1.0 / 3.0, 0.0), epsilon = 1e-15);
        assert_abs_diff_eq!(dec.earnings_slope, m2(0.0, 1.0 / 3.0, 1.0 / 3.0, 0.0), epsilon = 1e-15);
    }

    #[test]
    fn symmetric_change_passes_through() {
        let tech = BilinearTech::new(m2(2.0, 0.3, 0.3, 1.0), m2(0.4, -1.0, -1.0, 2.0)).unwrap();
        let dec = decompose(&tech);
        assert!(dec.realloc.amax() == 0.0);
        assert_abs_diff_eq!(dec.earnings_slope, tech.dsigma().clone(), epsilon = 1e-15);
    }

    #[test]
    fn rejects_bad_sigma() {
        let z = m2(0.0, 0.0, 0.0, 0.0);
        assert!(BilinearTech::new(m2(1.0, 0.2, 0.1, 1.0), z.clone()).is_err());
        assert!(BilinearTech::new(m2(1.0, 2.0, 2.0, 1.0), z.clone()).is_err());
        assert!(BilinearTech::new(m2(1.0, 0.0, 0.0, 0.0), z).is_err());
    }

    #[test]
    fn matches_kronecker_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for d in 2..=4 {
            let sigma = random_spd(&mut rng, d);
            let dsigma = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
            let tech = BilinearTech::new(sigma.clone(), dsigma.clone()).unwrap();
            let oracle = kron_oracle(&sigma, &(&dsigma - dsigma.transpose()));
            assert!((solve_sylvester(&tech) - oracle).amax() < 1e-12);
        }
    }

    fn table3() -> TwoByTwo {
        TwoByTwo { alpha: 0.239, beta: 0.020, gamma: 0.020, delta: 0.036 }
    }

    #[test]
    fn rotation_angle_examples() {
        let rate = TwoByTwo { gamma: 0.1, ..Default::default() };
        assert_abs_diff_eq!(rotation_angle_2d(&table3(), &rate).unwrap(), 0.1 / 0.275, epsilon = 1e-15);
        let sym = TwoByTwo { beta: 0.3, gamma: 0.3, ..Default::default() };
        assert_eq!(rotation_angle_2d(&table3(), &sym).unwrap(), 0.0);
        let half = TwoByTwo { alpha: 0.5, delta: 0.5, ..Default::default() };
        let rate = TwoByTwo { beta: -0.5, gamma: 0.5, ..Default::default() };
        assert_abs_diff_eq!(rotation_angle_2d(&half, &rate).unwrap(), 1.0, epsilon = 1e-15);
        let bad = TwoByTwo { alpha: -1.0, delta: 0.5, ..Default::default() };
        assert!(rotation_angle_2d(&bad, &rate).is_err());
    }

    #[test]
    fn tabulated_slope_examples() {
        let unit = TwoByTwo { alpha: 1.0, ..Default::default() };
        let w = tabulate_earnings_slope_2d(&table3(), &unit).unwrap();
        assert_eq!((w.alpha, w.beta, w.gamma, w.delta), (1.0, 0.0, 0.0, 0.0));

        let sym = TwoByTwo { beta: 0.7, gamma: 0.7, ..Default::default() };
        let w = tabulate_earnings_slope_2d(&table3(), &sym).unwrap();
        assert_abs_diff_eq!(w.beta, 0.7, epsilon = 1e-15);
        assert_eq!((w.alpha, w.delta), (0.0, 0.0));

        let rate = TwoByTwo { gamma: 0.1, delta: 0.1, ..Default::default() };
        let w = tabulate_earnings_slope_2d(&table3(), &rate).unwrap();
        assert_abs_diff_eq!(w.alpha, -0.002 / 0.275, epsilon = 1e-15);
        assert_abs_diff_eq!(w.beta, 0.0239 / 0.275, epsilon = 1e-15);
        // Σ̇ = Ẇ + ΣṘ forces a plus sign on the γθ correction.
        assert_abs_diff_eq!(w.delta, 0.1 + 0.002 / 0.275, epsilon = 1e-15);
        let general = earnings_slope_2d(&table3(), &rate).unwrap();
        for (a, b) in [(w.alpha, general.alpha), (w.beta, general.beta), (w.gamma, general.gamma), (w.delta, general.delta)] {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }
    }

    fn matrix_strategy(d: usize) -> impl Strategy<Value = (DMatrix<f64>, DMatrix<f64>, DMatrix<f64>)> {
        let n = d * d;
        (
            proptest::collection::vec(-1.0f64..1.0, n),
            proptest::collection::vec(-1.0f64..1.0, n),
            proptest::collection::vec(-1.0f64..1.0, n),
        )
            .prop_map(move |(a, b, c)| {
                let a = DMatrix::from_vec(d, d, a);
                let sigma = &a * a.transpose() + DMatrix::identity(d, d) * 0.05;
                (sigma, DMatrix::from_vec(d, d, b), DMatrix::from_vec(d, d, c))
            })
    }

    proptest! {
        #[test]
        fn decomposition_identities((sigma, ds1, ds2) in (2usize..=4).prop_flat_map(matrix_strategy), a in -2.0f64..2.0, b in -2.0f64..2.0) {
            let tech = BilinearTech::new(sigma.clone(), ds1.clone()).unwrap();
            let dec = decompose(&tech);
            let r = &dec.realloc;
            let resid = &sigma * r + r * &sigma - (&ds1 - ds1.transpose());
            prop_assert!(resid.norm() <= 1e-10 * ds1.norm().max(1e-300));
            prop_assert!((r + r.transpose()).amax() <= 1e-10);
            prop_assert!((&dec.earnings_slope - dec.earnings_slope.transpose()).amax() <= 1e-10);
            prop_assert!((&dec.earnings_slope + &sigma * r - &ds1).amax() <= 1e-10);

            // Diagonal of Σ̇ does not move Ṙ.
            let mut shifted = ds1.clone();
            for i in 0..shifted.nrows() { shifted[(i, i)] += 3.0; }
            let r2 = solve_sylvester(&BilinearTech::new(sigma.clone(), shifted).unwrap());
            prop_assert!((r - &r2).amax() <= 1e-10);

            // Linearity in Σ̇.
            let combo = &ds1 * a + &ds2 * b;
            let lhs = solve_sylvester(&BilinearTech::new(sigma.clone(), combo).unwrap());
            let rhs = r * a + solve_sylvester(&BilinearTech::new(sigma.clone(), ds2).unwrap()) * b;
            prop_assert!((lhs - rhs).amax() <= 1e-10);
        }

        #[test]
        fn angle_matches_general_solver(alpha in 0.05f64..3.0, delta in 0.05f64..3.0, t in -0.95f64..0.95, rates in proptest::collection::vec(-1.0f64..1.0, 4)) {
            let beta = t * (alpha * delta).sqrt();
            let sigma = TwoByTwo { alpha, beta, gamma: beta, delta };
            let rate = TwoByTwo { alpha: rates[0], beta: rates[1], gamma: rates[2], delta: rates[3] };
            let theta = rotation_angle_2d(&sigma, &rate).unwrap();
            let r = solve_sylvester(&BilinearTech::new(sigma.matrix(), rate.matrix()).unwrap());
            prop_assert!((r - m2(0.0, -theta, theta, 0.0)).amax() <= 1e-12);
        }
    }
}
