//! Rindler and Unruh ladder operators as linear combinations of mode operators.

use std::f64::consts::{FRAC_PI_4, PI};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::fock::{Field, FockVector, HalfInt, ModeIndex, Statistics, Wedge};

/// Tolerance on `|q_R|^2 + |q_L|^2 = 1`.
pub const NORMALIZATION_TOL: f64 = 1e-12;

/// Bogoliubov angle and right/left weights of one Unruh mode.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UnruhParams {
    pub r: f64,
    pub q_r: Complex64,
    pub q_l: Complex64,
    pub statistics: Statistics,
}

impl UnruhParams {
    /// Real `q_R` in `[0, 1]`; `q_L = sqrt(1 - q_R^2)` with zero phase.
    pub fn new(statistics: Statistics, r: f64, q_r: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&q_r) {
            return Err(Error::InvalidParameter(format!("q_R = {q_r} must lie in [0, 1]")));
        }
        let q_l = (1.0 - q_r * q_r).max(0.0).sqrt();
        UnruhParams::with_weights(statistics, r, Complex64::new(q_r, 0.0), Complex64::new(q_l, 0.0))
    }

    pub fn with_weights(statistics: Statistics, r: f64, q_r: Complex64, q_l: Complex64) -> Result<Self> {
        check_r(statistics, r)?;
        let norm = q_r.norm_sqr() + q_l.norm_sqr();
        if !norm.is_finite() || (norm - 1.0).abs() > NORMALIZATION_TOL {
            return Err(Error::Normalization(norm));
        }
        Ok(UnruhParams { r, q_r, q_l, statistics })
    }

    pub fn with_r(&self, r: f64) -> Result<Self> {
        UnruhParams::with_weights(self.statistics, r, self.q_r, self.q_l)
    }

    /// `(cos r, sin r)` for fermions, `(cosh r, sinh r)` for bosons.
    pub fn mixing(&self) -> (f64, f64) {
        match self.statistics {
            Statistics::Fermi => (self.r.cos(), self.r.sin()),
            Statistics::Bose => (self.r.cosh(), self.r.sinh()),
        }
    }
}

/// Fermionic `r` lives in `[0, π/4]` (the endpoint is the infinite-acceleration limit).
pub fn check_r(statistics: Statistics, r: f64) -> Result<()> {
    let max = match statistics {
        Statistics::Fermi => FRAC_PI_4 + 1e-15,
        Statistics::Bose => f64::INFINITY,
    };
    if !r.is_finite() || r < 0.0 || r > max {
        return Err(Error::InvalidParameter(format!("r = {r} outside the {statistics} range")));
    }
    Ok(())
}

/// `r` from the dimensionless exponent `x = π ω c / a` (or `π |k| / a` for massive fields):
/// `tan r = e^{-x}` for fermions, `tanh r = e^{-x}` for bosons.
pub fn r_from_exponent(x: f64, statistics: Statistics) -> Result<f64> {
    if !(x.is_finite() && x > 0.0) {
        return Err(Error::InvalidParameter(format!("exponent {x} must be positive and finite")));
    }
    let t = (-x).exp();
    Ok(match statistics {
        Statistics::Fermi => t.atan(),
        Statistics::Bose => t.atanh(),
    })
}

/// `r` for frequency `omega` (or `|k|`) and proper acceleration `a`, in units with `c = 1`.
pub fn r_from_acceleration(omega: f64, a: f64, statistics: Statistics) -> Result<f64> {
    if !(omega.is_finite() && omega > 0.0 && a.is_finite() && a > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "frequency {omega} and acceleration {a} must be positive and finite"
        )));
    }
    r_from_exponent(PI * omega / a, statistics)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LadderKind {
    Create,
    Annihilate,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LadderTerm {
    pub coeff: Complex64,
    pub kind: LadderKind,
    pub mode: ModeIndex,
}

/// Linear combination of single creation/annihilation operators.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct LadderExpr {
    pub terms: Vec<LadderTerm>,
}

impl LadderExpr {
    pub fn create(coeff: impl Into<Complex64>, mode: ModeIndex) -> Self {
        LadderExpr { terms: vec![LadderTerm { coeff: coeff.into(), kind: LadderKind::Create, mode }] }
    }

    pub fn annihilate(coeff: impl Into<Complex64>, mode: ModeIndex) -> Self {
        LadderExpr { terms: vec![LadderTerm { coeff: coeff.into(), kind: LadderKind::Annihilate, mode }] }
    }

    pub fn plus(mut self, other: LadderExpr) -> Self {
        self.terms.extend(other.terms);
        self
    }

    pub fn scaled(mut self, factor: Complex64) -> Self {
        for t in &mut self.terms {
            t.coeff *= factor;
        }
        self
    }

    /// Hermitian adjoint.
    pub fn adjoint(&self) -> Self {
        LadderExpr {
            terms: self
                .terms
                .iter()
                .map(|t| LadderTerm {
                    coeff: t.coeff.conj(),
                    kind: match t.kind {
                        LadderKind::Create => LadderKind::Annihilate,
                        LadderKind::Annihilate => LadderKind::Create,
                    },
                    mode: t.mode,
                })
                .collect(),
        }
    }

    pub fn modes(&self) -> impl Iterator<Item = &ModeIndex> {
        self.terms.iter().map(|t| &t.mode)
    }
}

fn particle(field: Field, sigma: HalfInt, wedge: Wedge) -> ModeIndex {
    match field.statistics {
        Statistics::Fermi => ModeIndex::c(sigma, wedge),
        Statistics::Bose => ModeIndex::a(sigma, wedge),
    }
}

fn partner(field: Field, sigma: HalfInt, wedge: Wedge) -> ModeIndex {
    match field.statistics {
        Statistics::Fermi => ModeIndex::d(sigma, wedge),
        Statistics::Bose => ModeIndex::a(sigma, wedge),
    }
}

fn check_field(field: Field, params: &UnruhParams, sigma: HalfInt) -> Result<()> {
    if field.statistics != params.statistics {
        return Err(Error::SpinStatistics {
            spin: field.spin.to_string(),
            statistics: params.statistics.to_string(),
        });
    }
    field.check_sigma(sigma)
}

/// Right Unruh creator: `cos r c†_{σ,I} − sin r d_{−σ,II}` (bosons: `cosh`, `sinh`, `a`).
pub fn rindler_unruh_right(field: Field, sigma: HalfInt, params: &UnruhParams) -> Result<LadderExpr> {
    check_field(field, params, sigma)?;
    let (c, s) = params.mixing();
    Ok(LadderExpr::create(c, particle(field, sigma, Wedge::I))
        .plus(LadderExpr::annihilate(-s, partner(field, -sigma, Wedge::II))))
}

/// Left Unruh creator: `cos r c†_{σ,II} − sin r d_{−σ,I}` (bosons: `cosh`, `sinh`, `a`).
pub fn rindler_unruh_left(field: Field, sigma: HalfInt, params: &UnruhParams) -> Result<LadderExpr> {
    check_field(field, params, sigma)?;
    let (c, s) = params.mixing();
    Ok(LadderExpr::create(c, particle(field, sigma, Wedge::II))
        .plus(LadderExpr::annihilate(-s, partner(field, -sigma, Wedge::I))))
}

/// General Unruh creator `q_R R†(σ) + q_L L†(−σ)`; both parts live in the spin-σ block.
pub fn unruh_creation(field: Field, sigma: HalfInt, params: &UnruhParams) -> Result<LadderExpr> {
    let norm = params.q_r.norm_sqr() + params.q_l.norm_sqr();
    if (norm - 1.0).abs() > NORMALIZATION_TOL {
        return Err(Error::Normalization(norm));
    }
    Ok(rindler_unruh_right(field, sigma, params)?
        .scaled(params.q_r)
        .plus(rindler_unruh_left(field, -sigma, params)?.scaled(params.q_l)))
}

pub fn unruh_annihilation(field: Field, sigma: HalfInt, params: &UnruhParams) -> Result<LadderExpr> {
    Ok(unruh_creation(field, sigma, params)?.adjoint())
}

/// Annihilators that fix the vacuum of the spin-`sigma` block uniquely.
///
/// Fermions: the right and left Unruh annihilators plus their antiparticle
/// partners `cos r d_{-σ,II} + sin r c†_{σ,I}` and `cos r d_{σ,I} + sin r c†_{-σ,II}`.
/// Bosons: the right and left annihilators of the two-mode block.
pub fn block_vacuum_annihilators(field: Field, sigma: HalfInt, r: f64) -> Result<Vec<LadderExpr>> {
    let params = UnruhParams::new(field.statistics, r, 1.0)?;
    let mut out = vec![
        rindler_unruh_right(field, sigma, &params)?.adjoint(),
        rindler_unruh_left(field, -sigma, &params)?.adjoint(),
    ];
    if field.statistics == Statistics::Fermi {
        let (c, s) = params.mixing();
        out.push(
            LadderExpr::annihilate(c, ModeIndex::d(-sigma, Wedge::II))
                .plus(LadderExpr::create(s, ModeIndex::c(sigma, Wedge::I))),
        );
        out.push(
            LadderExpr::annihilate(c, ModeIndex::d(sigma, Wedge::I))
                .plus(LadderExpr::create(s, ModeIndex::c(-sigma, Wedge::II))),
        );
    }
    Ok(out)
}

/// Applies `e` to `v`; the result is not renormalized.
pub fn apply_expr(e: &LadderExpr, v: &FockVector) -> Result<FockVector> {
    let mut acc = FockVector::zero(v.table().clone(), v.cutoff())?;
    for term in &e.terms {
        let moved = match term.kind {
            LadderKind::Create => v.apply_creation(&term.mode)?,
            LadderKind::Annihilate => v.apply_annihilation(&term.mode)?,
        };
        acc = moved.axpy(term.coeff, &acc)?;
    }
    Ok(acc)
}

/// Applies the operators right-to-left: `ops[0] ops[1] … ops[n-1] v`.
pub fn apply_product(ops: &[LadderExpr], v: &FockVector) -> Result<FockVector> {
    ops.iter().rev().try_fold(v.clone(), |acc, op| apply_expr(op, &acc))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::{build_mode_table, BasisLabel, ModeTable};
    use std::sync::Arc;

    fn half() -> HalfInt {
        HalfInt::from_twice(1)
    }

    #[test]
    fn r_parameter_values() {
        let f = r_from_exponent(1.0, Statistics::Fermi).unwrap();
        assert!((f - (-1f64).exp().atan()).abs() < 1e-15);
        assert!((f - 0.3525134).abs() < 1e-6);
        let b = r_from_exponent(1.0, Statistics::Bose).unwrap();
        assert!((b - 0.3859684).abs() < 1e-6);
        let limit = r_from_exponent(1e-12, Statistics::Fermi).unwrap();
        assert!((limit - FRAC_PI_4).abs() < 1e-11);
        assert!(r_from_exponent(0.0, Statistics::Bose).is_err());
        assert!(r_from_acceleration(-1.0, 1.0, Statistics::Fermi).is_err());
        assert!(r_from_acceleration(1.0, 0.0, Statistics::Fermi).is_err());
    }

    #[test]
    fn r_parameter_is_monotone() {
        for stat in [Statistics::Fermi, Statistics::Bose] {
            let mut prev = f64::INFINITY;
            for k in 1..50 {
                let r = r_from_acceleration(k as f64 * 0.1, 1.0, stat).unwrap();
                assert!(r < prev);
                prev = r;
            }
            let mut prev = 0.0;
            for k in 1..50 {
                let r = r_from_acceleration(1.0, k as f64 * 0.5, stat).unwrap();
                assert!(r > prev);
                prev = r;
            }
            assert!(r_from_acceleration(40.0, 1.0, stat).unwrap() < 1e-50);
        }
        let big = r_from_acceleration(1.0, 1e9, Statistics::Bose).unwrap();
        assert!(big > 9.0);
    }

    #[test]
    fn right_mode_coefficients() {
        let f = Field::fermi(half()).unwrap();
        let p = UnruhParams::new(Statistics::Fermi, 0.0, 1.0).unwrap();
        let e = rindler_unruh_right(f, half(), &p).unwrap();
        assert_eq!(e.terms[0].coeff, Complex64::new(1.0, 0.0));
        assert_eq!(e.terms[1].coeff.norm(), 0.0);

        let p = UnruhParams::new(Statistics::Fermi, FRAC_PI_4, 1.0).unwrap();
        let e = rindler_unruh_right(f, half(), &p).unwrap();
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((e.terms[0].coeff.re - h).abs() < 1e-15);
        assert!((e.terms[1].coeff.re + h).abs() < 1e-15);
        assert_eq!(e.terms[1].mode, ModeIndex::d(-half(), Wedge::II));
        assert_eq!(e.terms[1].kind, LadderKind::Annihilate);

        let fb = Field::bose(HalfInt::from_twice(2)).unwrap();
        let p = UnruhParams::new(Statistics::Bose, 0.5, 1.0).unwrap();
        let sigma = HalfInt::from_twice(2);
        let e = rindler_unruh_right(fb, sigma, &p).unwrap();
        assert_eq!(e.terms[0].mode, ModeIndex::a(sigma, Wedge::I));
        assert_eq!(e.terms[1].mode, ModeIndex::a(-sigma, Wedge::II));
        assert!((e.terms[0].coeff.re - 0.5f64.cosh()).abs() < 1e-15);
        assert!((e.terms[1].coeff.re + 0.5f64.sinh()).abs() < 1e-15);
    }

    #[test]
    fn unruh_creator_mixes_flipped_left_mode() {
        let f = Field::fermi(half()).unwrap();
        let p = UnruhParams::new(Statistics::Fermi, 0.3, 1.0).unwrap();
        let e = unruh_creation(f, half(), &p).unwrap();
        let right = rindler_unruh_right(f, half(), &p).unwrap();
        assert_eq!(e.terms[..2], right.terms[..]);
        assert!(e.terms[2..].iter().all(|t| t.coeff.norm() == 0.0));

        let h = std::f64::consts::FRAC_1_SQRT_2;
        let p = UnruhParams::new(Statistics::Fermi, 0.3, h).unwrap();
        let e = unruh_creation(f, half(), &p).unwrap();
        assert_eq!(e.terms[2].mode, ModeIndex::c(-half(), Wedge::II));
        assert_eq!(e.terms[3].mode, ModeIndex::d(half(), Wedge::I));
        assert!((e.terms[0].coeff.norm() - e.terms[2].coeff.norm()).abs() < 1e-15);

        let p = UnruhParams::new(Statistics::Fermi, 0.3, 0.0).unwrap();
        let e = unruh_creation(f, half(), &p).unwrap();
        assert!(e.terms[..2].iter().all(|t| t.coeff.norm() == 0.0));
        assert_eq!(e.terms[2].mode, ModeIndex::c(-half(), Wedge::II));

        assert!(matches!(
            UnruhParams::with_weights(Statistics::Fermi, 0.1, Complex64::new(0.9, 0.0), Complex64::new(0.9, 0.0)),
            Err(Error::Normalization(_))
        ));
        assert!(rindler_unruh_right(f, HalfInt::from_twice(3), &p).is_err());
    }

    #[test]
    fn apply_expr_basics() {
        let f = Field::fermi(half()).unwrap();
        let t = Arc::new(build_mode_table(f).unwrap());
        let vac = FockVector::rindler_vacuum(t.clone(), None).unwrap();
        let m = t.modes()[0];
        let single = apply_expr(&LadderExpr::create(1.0, m), &vac).unwrap();
        assert_eq!(single.max_abs_diff(&vac.apply_creation(&m).unwrap()).unwrap(), 0.0);
        let zero = apply_expr(&LadderExpr::create(0.0, m).plus(LadderExpr::annihilate(0.0, m)), &vac).unwrap();
        assert!(zero.is_zero());
    }

    fn all_basis(table: &Arc<ModeTable>) -> Vec<FockVector> {
        let n = table.len();
        (0..1u32 << n)
            .map(|k| {
                let label = BasisLabel((0..n).map(|i| ((k >> i) & 1) as u16).collect());
                FockVector::basis(table.clone(), label, None).unwrap()
            })
            .collect()
    }

    #[test]
    fn unruh_anticommutators_on_spin_half() {
        let f = Field::fermi(half()).unwrap();
        let t = Arc::new(build_mode_table(f).unwrap());
        let basis = all_basis(&t);
        let h = std::f64::consts::FRAC_1_SQRT_2;
        for r in [0.0, 0.2, 0.5, FRAC_PI_4 - 0.01] {
            for q in [0.0, h, 0.9, 1.0] {
                let p = UnruhParams::new(Statistics::Fermi, r, q).unwrap();
                for s1 in f.sigmas() {
                    for s2 in f.sigmas() {
                        let a = unruh_annihilation(f, s1, &p).unwrap();
                        let c = unruh_creation(f, s2, &p).unwrap();
                        for b in &basis {
                            let x = apply_expr(&a, &apply_expr(&c, b).unwrap()).unwrap();
                            let y = apply_expr(&c, &apply_expr(&a, b).unwrap()).unwrap();
                            let sum = x.add(&y).unwrap();
                            let expected = if s1 == s2 { b.clone() } else { b.scaled(Complex64::default()) };
                            assert!(sum.max_abs_diff(&expected).unwrap() < 1e-14, "r={r} q={q}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn bosonic_unruh_commutator_below_cutoff() {
        let f = Field::bose(HalfInt::ZERO).unwrap();
        let t = Arc::new(build_mode_table(f).unwrap());
        let cutoff = 6usize;
        let p = UnruhParams::new(Statistics::Bose, 0.7, 0.8).unwrap();
        let a = unruh_annihilation(f, HalfInt::ZERO, &p).unwrap();
        let c = unruh_creation(f, HalfInt::ZERO, &p).unwrap();
        for n0 in 0..=(cutoff - 2) as u16 {
            for n1 in 0..=(cutoff - 2) as u16 {
                let b = FockVector::basis(t.clone(), BasisLabel::from_slice(&[n0, n1]), Some(cutoff)).unwrap();
                let x = apply_expr(&a, &apply_expr(&c, &b).unwrap()).unwrap();
                let y = apply_expr(&c, &apply_expr(&a, &b).unwrap()).unwrap();
                let comm = y.axpy(Complex64::new(-1.0, 0.0), &x).unwrap();
                assert!(comm.max_abs_diff(&b).unwrap() < 1e-12);
            }
        }
    }
}
