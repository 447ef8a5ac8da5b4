//! Pointwise bound families and their side conditions.
//!
//! All bounds are compositions of the phi family with the Duhamel field
//! `S` of a weighted potential:
//!
//! * **h-relative** — against the caloric majorant `h`:
//!   `h * phi(-S/h)`, a lower bound for the solution when `q > 0` and an
//!   upper bound when `q < 0`. The side condition is exactly that the
//!   argument `-S/h` stays inside the admissible interval of phi (for
//!   `0 < q < 1` the positive-part extension makes it total, with the
//!   indicator-weighted `S`).
//! * **potential-only** — no majorant: `exp(-S)` for `q = 1`, otherwise
//!   the singular branch `[(1-q)(-S)]^(1/(1-q))`; the side condition is
//!   the sign of `S` (positive for `q > 1`, negative for `q < 0`).
//! * **existence envelope** — for `q > 1, V <= 0` or `q < 0, V >= 0`: if
//!   the window `|S| <= W(q) h` with `W(q) = (1 - 1/q)^q / |1 - q|`
//!   holds, a solution exists between `h * phi(-S/h)` and `lam h`,
//!   `lam = q/(q-1)` (above for `q > 1`, below for `q < 0`).
//!
//! A failed side condition masks the point rather than erroring: the
//! conditions are conclusions of the estimates, so observing one fail on
//! a numerical solution is itself a reportable outcome. Points where
//! `h = 0` (boundary, or quadrature underflow far from the data) take the
//! limit value 0 and are flagged.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::field::Field;
use crate::phi::PhiFamily;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundKind {
    HRelative,
    PotentialOnly,
    ExistenceEnvelope,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSide {
    Lower,
    Upper,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PointFlag {
    Ok,
    /// Side condition failed; the bound is undefined and masked there.
    SideCondition,
    /// The majorant vanishes; the bound takes its limit value 0.
    BoundaryLimit,
}

/// One bound surface with its comparison direction.
#[derive(Debug, Clone)]
pub struct BoundComponent {
    pub side: BoundSide,
    pub label: &'static str,
    pub values: Field,
}

/// Scalar outcome of a side condition over the whole grid.
#[derive(Debug, Clone)]
pub struct ConditionSummary {
    pub name: &'static str,
    pub holds: bool,
    pub checked: usize,
    pub failed: usize,
    /// Signed margin, positive where the condition fails; the worst
    /// (largest) value over checked points.
    pub worst_margin: f64,
}

impl ConditionSummary {
    fn trivial(name: &'static str) -> ConditionSummary {
        ConditionSummary { name, holds: true, checked: 0, failed: 0, worst_margin: f64::NEG_INFINITY }
    }
}

/// A bound family evaluated on a grid: one or two surfaces, per-point
/// flags (time-major layout matching [`Field`]), and the side-condition
/// summary. Level 0 is always masked: the estimates live on t > 0.
#[derive(Debug, Clone)]
pub struct BoundSet {
    pub q: f64,
    pub kind: BoundKind,
    pub components: Vec<BoundComponent>,
    pub flags: Vec<PointFlag>,
    pub condition: ConditionSummary,
}

impl BoundSet {
    pub fn flag_at(&self, level: usize, node: usize) -> PointFlag {
        let n = self.components[0].values.grid().node_count();
        self.flags[level * n + node]
    }
}

/// Indicator of the positivity set: 1 where `u > threshold`, else 0.
pub fn chi_field(u: &Field, threshold: f64) -> Result<Field> {
    if threshold < 0.0 {
        return Err(Error::Config(format!("indicator threshold must be >= 0, got {threshold}")));
    }
    Ok(u.map(|v| if v > threshold { 1.0 } else { 0.0 }))
}

fn pick_weighted<'a>(
    fam: &PhiFamily,
    s: &'a Field,
    s_chi: Option<&'a Field>,
) -> Result<&'a Field> {
    let q = fam.q();
    if q > 0.0 && q < 1.0 {
        s_chi.ok_or_else(|| {
            Error::Config("exponents in (0,1) need the indicator-weighted Duhamel field".into())
        })
    } else {
        Ok(s)
    }
}

fn mask_level_zero(field: &mut Field) {
    field.mask_where(|k, _| k == 0);
}

/// Bound relative to the caloric majorant: `h * phi(-S/h)`.
///
/// `s` is the Duhamel field of `h^q V`; for `0 < q < 1` supply the
/// indicator-weighted variant in `s_chi`. Lower bound for `q > 0`, upper
/// for `q < 0`.
pub fn h_relative_bound(
    fam: &PhiFamily,
    h: &Field,
    s: &Field,
    s_chi: Option<&Field>,
) -> Result<BoundSet> {
    h.check_same_grid(s)?;
    let q = fam.q();
    let s_used = pick_weighted(fam, s, s_chi)?;
    h.check_same_grid(s_used)?;

    let (lo, hi) = fam.interval();
    let extension_total = q > 0.0 && q < 1.0;
    let len = h.values().len();
    let mut flags = vec![PointFlag::Ok; len];
    let mut bound = Field::zeros(Arc::clone(h.grid()));
    let mut cond = ConditionSummary::trivial("phi-domain");
    let has_condition = q > 1.0 || q < 0.0;

    for j in 0..len {
        let h_v = h.values()[j];
        let s_v = s_used.values()[j];
        let v = if h_v <= 0.0 {
            flags[j] = PointFlag::BoundaryLimit;
            0.0
        } else {
            let arg = -s_v / h_v;
            if has_condition {
                cond.checked += 1;
                let margin = if q > 1.0 { arg - hi } else { lo - arg };
                cond.worst_margin = cond.worst_margin.max(margin);
                if margin >= 0.0 {
                    cond.failed += 1;
                    flags[j] = PointFlag::SideCondition;
                    bound.values_mut()[j] = f64::NAN;
                    continue;
                }
            }
            if extension_total || fam.admits(arg) {
                h_v * fam.phi(arg)?
            } else {
                // Unreachable once the margin check passed; keep the
                // honest path for q = 1 rounding extremes.
                flags[j] = PointFlag::SideCondition;
                cond.failed += 1;
                f64::NAN
            }
        };
        bound.values_mut()[j] = v;
    }
    cond.holds = cond.failed == 0;
    mask_level_zero(&mut bound);
    mask_flagged(&mut bound, &flags);

    let side = if q > 0.0 { BoundSide::Lower } else { BoundSide::Upper };
    Ok(BoundSet {
        q,
        kind: BoundKind::HRelative,
        components: vec![BoundComponent { side, label: "h-relative", values: bound }],
        flags,
        condition: cond,
    })
}

/// Majorant-free bound: `exp(-S)` for `q = 1`, the singular phi branch
/// otherwise. `s` is the Duhamel field of `V` itself (indicator-weighted
/// for `0 < q < 1`).
pub fn potential_only_bound(
    fam: &PhiFamily,
    s: &Field,
    s_chi: Option<&Field>,
) -> Result<BoundSet> {
    let q = fam.q();
    let s_used = pick_weighted(fam, s, s_chi)?;
    let len = s_used.values().len();
    let mut flags = vec![PointFlag::Ok; len];
    let mut bound = Field::zeros(Arc::clone(s_used.grid()));
    let name = if q > 1.0 {
        "s-positive"
    } else if q < 0.0 {
        "s-negative"
    } else {
        "none"
    };
    let mut cond = ConditionSummary::trivial(name);
    let has_condition = q > 1.0 || q < 0.0;

    let n = s_used.grid().node_count();
    for j in 0..len {
        let s_v = s_used.values()[j];
        let v = if q == 1.0 {
            (-s_v).exp()
        } else {
            if has_condition && j >= n {
                // Skip level 0 in the condition statistics: S(., 0) = 0.
                cond.checked += 1;
                let margin = if q > 1.0 { -s_v } else { s_v };
                cond.worst_margin = cond.worst_margin.max(margin);
            }
            match fam.phi_homogeneous(-s_v) {
                Some(v) => v,
                None => {
                    if j >= n {
                        cond.failed += 1;
                    }
                    flags[j] = PointFlag::SideCondition;
                    f64::NAN
                }
            }
        };
        bound.values_mut()[j] = v;
    }
    cond.holds = cond.failed == 0;
    mask_level_zero(&mut bound);
    mask_flagged(&mut bound, &flags);

    let side = if q > 0.0 { BoundSide::Lower } else { BoundSide::Upper };
    Ok(BoundSet {
        q,
        kind: BoundKind::PotentialOnly,
        components: vec![BoundComponent { side, label: "potential-only", values: bound }],
        flags,
        condition: cond,
    })
}

/// Threshold coefficient of the existence window, `(1 - 1/q)^q / |1-q|`.
pub fn window_coefficient(q: f64) -> f64 {
    (1.0 - 1.0 / q).powf(q) / (1.0 - q).abs()
}

/// The envelope mate `lam = q/(q-1)`: upper envelope `lam h` for
/// `q > 1`, lower envelope `lam h` for `q < 0`.
pub fn envelope_lambda(q: f64) -> f64 {
    q / (q - 1.0)
}

/// Existence window and two-sided envelope. Admits `q > 1` (potential
/// nonpositive) and `q < 0` (potential nonnegative); the caller validates
/// the potential sign. `s` is the Duhamel field of `h^q V`.
pub fn existence_window(fam: &PhiFamily, h: &Field, s: &Field) -> Result<BoundSet> {
    h.check_same_grid(s)?;
    let q = fam.q();
    if !(q > 1.0 || q < 0.0) {
        return Err(Error::Config(format!(
            "existence window requires q > 1 or q < 0, got {q}"
        )));
    }
    let w_coeff = window_coefficient(q);
    let lam = envelope_lambda(q);
    let len = h.values().len();
    let n = h.grid().node_count();
    let mut flags = vec![PointFlag::Ok; len];
    let mut sharp = Field::zeros(Arc::clone(h.grid()));
    let mut mate = Field::zeros(Arc::clone(h.grid()));
    let mut cond = ConditionSummary::trivial("window");

    for j in 0..len {
        let h_v = h.values()[j];
        let s_v = s.values()[j];
        if h_v <= 0.0 {
            flags[j] = PointFlag::BoundaryLimit;
            continue; // both envelope sides take the limit 0
        }
        let signed = if q > 1.0 { -s_v } else { s_v };
        if j >= n {
            cond.checked += 1;
            let margin = signed - w_coeff * h_v;
            cond.worst_margin = cond.worst_margin.max(margin);
            if margin > 0.0 {
                cond.failed += 1;
                flags[j] = PointFlag::SideCondition;
                sharp.values_mut()[j] = f64::NAN;
                mate.values_mut()[j] = f64::NAN;
                continue;
            }
        }
        sharp.values_mut()[j] = h_v * fam.phi(-s_v / h_v)?;
        mate.values_mut()[j] = lam * h_v;
    }
    cond.holds = cond.failed == 0;
    mask_level_zero(&mut sharp);
    mask_level_zero(&mut mate);
    mask_flagged(&mut sharp, &flags);
    mask_flagged(&mut mate, &flags);

    let components = if q > 1.0 {
        vec![
            BoundComponent { side: BoundSide::Lower, label: "envelope-lower", values: sharp },
            BoundComponent { side: BoundSide::Upper, label: "envelope-upper", values: mate },
        ]
    } else {
        vec![
            BoundComponent { side: BoundSide::Lower, label: "envelope-lower", values: mate },
            BoundComponent { side: BoundSide::Upper, label: "envelope-upper", values: sharp },
        ]
    };
    Ok(BoundSet {
        q,
        kind: BoundKind::ExistenceEnvelope,
        components,
        flags,
        condition: cond,
    })
}

fn mask_flagged(field: &mut Field, flags: &[PointFlag]) {
    let n = field.grid().node_count();
    field.mask_where(|k, i| flags[k * n + i] == PointFlag::SideCondition);
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Domain, Grid};
    use std::sync::Arc;

    fn grid() -> Arc<Grid> {
        Arc::new(Grid::build(Domain::Interval { a: 0.0, b: 1.0 }, 11, 1.0, 5, None).unwrap())
    }

    fn line_grid() -> Arc<Grid> {
        Arc::new(Grid::build(Domain::RealLine, 11, 1.0, 10, Some(4.0)).unwrap())
    }

    #[test]
    fn zero_potential_gives_back_the_majorant() {
        let g = grid();
        let h = Field::sample(Arc::clone(&g), |x, t| 1.0 + x[0] + t);
        let s = Field::zeros(Arc::clone(&g));
        for q in [-2.0, -1.0, 0.5, 1.0, 2.0] {
            let fam = PhiFamily::new(q).unwrap();
            let chi = Field::zeros(Arc::clone(&g));
            let b = h_relative_bound(&fam, &h, &s, Some(&chi)).unwrap();
            assert!(b.condition.holds);
            for j in 0..h.values().len() {
                let bv = b.components[0].values.values()[j];
                assert!((bv - h.values()[j]).abs() < 1e-14, "q = {q}");
            }
        }
    }

    #[test]
    fn exponential_case_closed_form_on_the_line() {
        // h = 1 + t with V = 1 gives S[hV] = t + t^2/2 and the lower
        // bound (1+t) exp(-(t + t^2/2)/(1+t)).
        let g = line_grid();
        let h = Field::sample(Arc::clone(&g), |_, t| 1.0 + t);
        let s = Field::sample(Arc::clone(&g), |_, t| t + 0.5 * t * t);
        let fam = PhiFamily::new(1.0).unwrap();
        let b = h_relative_bound(&fam, &h, &s, None).unwrap();
        for (k, &t) in g.times().iter().enumerate() {
            let expect = (1.0 + t) * (-(t + 0.5 * t * t) / (1.0 + t)).exp();
            let got = b.components[0].values.at(k, 5);
            assert!((got - expect).abs() < 1e-14, "t = {t}: {got} vs {expect}");
        }
    }

    #[test]
    fn side_condition_masks_points() {
        let g = grid();
        let h = Field::sample(Arc::clone(&g), |_, _| 1.0);
        // S = -1.5 violates the domain condition for q = 2
        // (the phi argument 1.5 exceeds 1/(q-1) = 1).
        let s_bad = Field::sample(Arc::clone(&g), |_, _| -1.5);
        let fam = PhiFamily::new(2.0).unwrap();
        let b = h_relative_bound(&fam, &h, &s_bad, None).unwrap();
        assert!(!b.condition.holds);
        assert!(b.components[0].values.is_masked(2, 5));
        assert_eq!(b.flag_at(2, 5), PointFlag::SideCondition);

        // S = +1.5 satisfies it (argument -1.5 < 1).
        let s_ok = Field::sample(Arc::clone(&g), |_, _| 1.5);
        let b = h_relative_bound(&fam, &h, &s_ok, None).unwrap();
        assert!(b.condition.holds);
        let v = b.components[0].values.at(2, 5);
        // phi(-1.5) = (1 + 1.5)^{-1} = 0.4
        assert!((v - 0.4).abs() < 1e-15, "{v}");
    }

    #[test]
    fn potential_only_ode_sharp_cases() {
        let g = line_grid();
        // q = 2, V = 1: S = t, bound 1/t.
        let s = Field::sample(Arc::clone(&g), |_, t| t);
        let fam = PhiFamily::new(2.0).unwrap();
        let b = potential_only_bound(&fam, &s, None).unwrap();
        assert!(b.condition.holds);
        for (k, &t) in g.times().iter().enumerate().skip(1) {
            let got = b.components[0].values.at(k, 5);
            assert!((got - 1.0 / t).abs() < 1e-13, "t = {t}: {got}");
        }
        assert!(matches!(b.components[0].side, BoundSide::Lower));

        // q = -1, V = -1: S = -t, bound sqrt(2t), an upper bound.
        let s = Field::sample(Arc::clone(&g), |_, t| -t);
        let fam = PhiFamily::new(-1.0).unwrap();
        let b = potential_only_bound(&fam, &s, None).unwrap();
        assert!(b.condition.holds);
        for (k, &t) in g.times().iter().enumerate().skip(1) {
            let got = b.components[0].values.at(k, 5);
            assert!((got - (2.0 * t).sqrt()).abs() < 1e-13, "t = {t}: {got}");
        }
        assert!(matches!(b.components[0].side, BoundSide::Upper));

        // q = 1, V = 0: bound identically 1.
        let s = Field::zeros(Arc::clone(&g));
        let fam = PhiFamily::new(1.0).unwrap();
        let b = potential_only_bound(&fam, &s, None).unwrap();
        assert!(b.components[0].values.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn potential_only_sign_conditions() {
        let g = grid();
        let fam = PhiFamily::new(2.0).unwrap();
        let s_neg = Field::sample(Arc::clone(&g), |_, _| -0.3);
        let b = potential_only_bound(&fam, &s_neg, None).unwrap();
        assert!(!b.condition.holds);
        assert_eq!(b.condition.name, "s-positive");

        let fam = PhiFamily::new(-1.0).unwrap();
        let s_pos = Field::sample(Arc::clone(&g), |_, _| 0.3);
        let b = potential_only_bound(&fam, &s_pos, None).unwrap();
        assert!(!b.condition.holds);
        assert_eq!(b.condition.name, "s-negative");
    }

    #[test]
    fn window_thresholds_match_hand_values() {
        // q = 2: (1 - 1/2)^2 / 1 = 1/4; q = -1: (1+1)^{-1} / 2 = 1/4.
        assert!((window_coefficient(2.0) - 0.25).abs() < 1e-15);
        assert!((window_coefficient(-1.0) - 0.25).abs() < 1e-15);
        assert!((envelope_lambda(2.0) - 2.0).abs() < 1e-15);
        assert!((envelope_lambda(-1.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn envelope_collapses_for_zero_potential() {
        let g = grid();
        let h = Field::sample(Arc::clone(&g), |x, t| x[0] * (1.0 - x[0]) + 0.1 + 0.0 * t);
        let s = Field::zeros(Arc::clone(&g));
        for q in [2.0, -1.0] {
            let fam = PhiFamily::new(q).unwrap();
            let b = existence_window(&fam, &h, &s).unwrap();
            assert!(b.condition.holds, "q = {q}");
            let lower = &b.components[0];
            let upper = &b.components[1];
            assert!(matches!(lower.side, BoundSide::Lower));
            for j in g.node_count()..h.values().len() {
                let lo = lower.values.values()[j];
                let hi = upper.values.values()[j];
                let hv = h.values()[j];
                assert!(lo <= hv + 1e-14 && hv <= hi + 1e-14 || (lo - hv).abs() < 1e-14);
                assert!(lo <= hi + 1e-14);
            }
        }
        let fam = PhiFamily::new(0.5);
        assert!(existence_window(&fam.unwrap(), &h, &s).is_err());
    }

    #[test]
    fn window_failure_is_flagged_not_fatal() {
        let g = grid();
        let h = Field::sample(Arc::clone(&g), |_, _| 1.0);
        let s = Field::sample(Arc::clone(&g), |_, t| if t > 0.5 { 0.3 } else { 0.0 });
        let fam = PhiFamily::new(-1.0).unwrap();
        let b = existence_window(&fam, &h, &s).unwrap();
        // 0.3 > W h = 0.25 on the late levels.
        assert!(!b.condition.holds);
        assert!(b.condition.failed > 0);
        assert!((b.condition.worst_margin - 0.05).abs() < 1e-12);
    }

    #[test]
    fn lower_bounds_monotone_in_s() {
        let g = grid();
        let h = Field::sample(Arc::clone(&g), |_, _| 2.0);
        for q in [1.0, 1.5, 2.0] {
            let fam = PhiFamily::new(q).unwrap();
            let s1 = Field::sample(Arc::clone(&g), |x, _| 0.2 * x[0]);
            let s2 = Field::sample(Arc::clone(&g), |x, _| 0.2 * x[0] + 0.3);
            let b1 = h_relative_bound(&fam, &h, &s1, None).unwrap();
            let b2 = h_relative_bound(&fam, &h, &s2, None).unwrap();
            for j in 0..h.values().len() {
                assert!(
                    b2.components[0].values.values()[j]
                        <= b1.components[0].values.values()[j] + 1e-14
                );
            }
        }
        // Upper bound for q < 0 also shrinks as S grows.
        let fam = PhiFamily::new(-1.0).unwrap();
        let s1 = Field::sample(Arc::clone(&g), |_, _| 0.1);
        let s2 = Field::sample(Arc::clone(&g), |_, _| 0.4);
        let b1 = h_relative_bound(&fam, &h, &s1, None).unwrap();
        let b2 = h_relative_bound(&fam, &h, &s2, None).unwrap();
        for j in 0..h.values().len() {
            assert!(
                b2.components[0].values.values()[j] <= b1.components[0].values.values()[j] + 1e-14
            );
        }
    }

    #[test]
    fn flags_trip_before_overflow() {
        let g = grid();
        let h = Field::sample(Arc::clone(&g), |_, _| 1.0);
        let fam = PhiFamily::new(2.0).unwrap();
        // Approach the domain boundary from inside: huge but finite, ok.
        let s_in = Field::sample(Arc::clone(&g), |_, _| -(1.0 - 1e-9));
        let b = h_relative_bound(&fam, &h, &s_in, None).unwrap();
        assert!(b.condition.holds);
        assert!(b.components[0].values.at(1, 5).is_finite());
        // At or beyond the boundary: flagged, masked, no overflow reported.
        let s_out = Field::sample(Arc::clone(&g), |_, _| -1.0);
        let b = h_relative_bound(&fam, &h, &s_out, None).unwrap();
        assert!(!b.condition.holds);
    }

    #[test]
    fn q1_scale_covariance() {
        // Shifting V by a constant c multiplies the exponential bound by
        // exp(-c t) wherever S gains exactly c t (mass one).
        let g = line_grid();
        let fam = PhiFamily::new(1.0).unwrap();
        let s = Field::sample(Arc::clone(&g), |x, t| (x[0]).sin() * t * 0.1);
        let c = 0.7;
        let s_shift = Field::sample(Arc::clone(&g), |x, t| (x[0]).sin() * t * 0.1 + c * t);
        let b = potential_only_bound(&fam, &s, None).unwrap();
        let bs = potential_only_bound(&fam, &s_shift, None).unwrap();
        for (k, &t) in g.times().iter().enumerate() {
            for i in 0..g.node_count() {
                let expect = b.components[0].values.at(k, i) * (-c * t).exp();
                let got = bs.components[0].values.at(k, i);
                assert!((got - expect).abs() < 1e-13 * expect.max(1.0));
            }
        }
    }

    #[test]
    fn unit_majorant_reduction() {
        // With h = 1 the exponential cases agree exactly. For q != 1 the
        // families differ by the unit shift inside phi, in the direction
        // the hypotheses dictate: the potential-only lower bound (q > 1,
        // infinite parabolic data) is sharper than the h-relative one
        // with h = 1, and the potential-only upper bound (q < 0, zero
        // parabolic data) is tighter than the h-relative one.
        let g = grid();
        let one = Field::sample(Arc::clone(&g), |_, _| 1.0);
        let s = Field::sample(Arc::clone(&g), |x, t| 0.4 * t * (1.0 + x[0]));
        let fam1 = PhiFamily::new(1.0).unwrap();
        let a = h_relative_bound(&fam1, &one, &s, None).unwrap();
        let b = potential_only_bound(&fam1, &s, None).unwrap();
        for j in 0..s.values().len() {
            assert!(
                (a.components[0].values.values()[j] - b.components[0].values.values()[j]).abs()
                    < 1e-15
            );
        }
        let fam2 = PhiFamily::new(2.0).unwrap();
        let a = h_relative_bound(&fam2, &one, &s, None).unwrap();
        let b = potential_only_bound(&fam2, &s, None).unwrap();
        let n = g.node_count();
        for j in n..s.values().len() {
            let (av, bv) = (
                a.components[0].values.values()[j],
                b.components[0].values.values()[j],
            );
            assert!(bv >= av - 1e-14, "{av} vs {bv}");
        }
        let famn = PhiFamily::new(-1.0).unwrap();
        let s_neg = s.map(|v| -v);
        let a = h_relative_bound(&famn, &one, &s_neg, None).unwrap();
        let b = potential_only_bound(&famn, &s_neg, None).unwrap();
        for j in n..s.values().len() {
            let (av, bv) = (
                a.components[0].values.values()[j],
                b.components[0].values.values()[j],
            );
            assert!(av >= bv - 1e-14, "{av} vs {bv}");
        }
    }

    #[test]
    fn chi_indicator_cases() {
        let g = grid();
        let pos = Field::sample(Arc::clone(&g), |_, _| 2.0);
        assert!(chi_field(&pos, 0.0).unwrap().values().iter().all(|&v| v == 1.0));
        let zero = Field::zeros(Arc::clone(&g));
        assert!(chi_field(&zero, 0.0).unwrap().values().iter().all(|&v| v == 0.0));
        let mixed = Field::sample(Arc::clone(&g), |x, _| x[0] - 0.5);
        let chi = chi_field(&mixed, 0.0).unwrap();
        for j in 0..mixed.values().len() {
            let expect = if mixed.values()[j] > 0.0 { 1.0 } else { 0.0 };
            assert_eq!(chi.values()[j], expect);
        }
        assert!(chi_field(&pos, -1.0).is_err());
    }

    #[test]
    fn missing_indicator_field_rejected_for_sublinear_q() {
        let g = grid();
        let h = Field::sample(Arc::clone(&g), |_, _| 1.0);
        let s = Field::zeros(Arc::clone(&g));
        let fam = PhiFamily::new(0.5).unwrap();
        assert!(h_relative_bound(&fam, &h, &s, None).is_err());
        assert!(potential_only_bound(&fam, &s, None).is_err());
    }
}
