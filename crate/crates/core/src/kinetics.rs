//! Pointwise MICP chemistry.
//!
//! Porosity reduction by biofilm and calcite, the power-law permeability
//! reduction with a floor at `K_min`, Monod saturation factors, and the five
//! reaction terms coupling suspended microbes, oxygen, urea, biofilm and
//! calcite. Rates are per unit bulk volume. Concentrations are per unit pore
//! volume, so the stored solute mass per bulk volume is `c * phi`.
//!
//! The functions suffixed `_t` are generic over [`Real`] so the implicit
//! solver can differentiate them; the plain functions are the checked `f64`
//! entry points.

use serde::{Deserialize, Serialize};

use crate::ad::Real;
use crate::error::{MicpError, Result};

/// Exponent applied to the driving-force norm in the detachment term.
pub const DETACHMENT_EXPONENT: f64 = 0.58;

/// Fluid and reaction parameters. Defaults are the reference values used
/// for all built-in experiments.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KineticParams {
    /// Biofilm density, kg/m³.
    pub rho_b: f64,
    /// Calcite density, kg/m³.
    pub rho_c: f64,
    /// Water density, kg/m³.
    pub rho_w: f64,
    /// Water viscosity, Pa·s.
    pub mu_w: f64,
    /// Detachment rate, m/(Pa·s).
    pub k_str: f64,
    /// Oxygen half-velocity coefficient, kg/m³.
    pub k_o: f64,
    /// Urea half-velocity coefficient, kg/m³.
    pub k_u: f64,
    /// Maximum specific growth rate, 1/s.
    pub mu: f64,
    /// Maximum rate of urea utilization, 1/s.
    pub mu_u: f64,
    /// Microbial attachment rate, 1/s.
    pub k_a: f64,
    /// Microbial death rate, 1/s.
    pub k_d: f64,
    /// Oxygen consumed per substrate used for growth.
    #[serde(rename = "F")]
    pub f: f64,
    /// Growth yield.
    #[serde(rename = "Y")]
    pub y: f64,
    /// Calcite produced per urea utilized.
    #[serde(rename = "Y_uc")]
    pub y_uc: f64,
}

impl Default for KineticParams {
    fn default() -> Self {
        Self {
            rho_b: 35.0,
            rho_c: 2710.0,
            rho_w: 1045.0,
            mu_w: 2.54e-4,
            k_str: 2.6e-10,
            k_o: 2e-5,
            k_u: 21.3,
            mu: 4.17e-5,
            mu_u: 1.61e-2,
            k_a: 8.51e-7,
            k_d: 3.18e-7,
            f: 0.5,
            y: 0.5,
            y_uc: 1.67,
        }
    }
}

impl KineticParams {
    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        let positive = [
            ("rho_b", self.rho_b),
            ("rho_c", self.rho_c),
            ("rho_w", self.rho_w),
            ("mu_w", self.mu_w),
            ("k_o", self.k_o),
            ("k_u", self.k_u),
            ("F", self.f),
            ("Y_uc", self.y_uc),
        ];
        for (name, x) in positive {
            if !(x > 0.0 && x.is_finite()) {
                v.push(format!("kinetics.{name} must be > 0 (got {x})"));
            }
        }
        let rates = [
            ("k_str", self.k_str),
            ("mu", self.mu),
            ("mu_u", self.mu_u),
            ("k_a", self.k_a),
            ("k_d", self.k_d),
        ];
        for (name, x) in rates {
            if !(x >= 0.0 && x.is_finite()) {
                v.push(format!("kinetics.{name} must be >= 0 (got {x})"));
            }
        }
        if !(self.y > 0.0 && self.y <= 1.0) {
            v.push(format!("kinetics.Y must lie in (0, 1] (got {})", self.y));
        }
        v
    }
}

/// Porosity/permeability relation of a rock type.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RockLaw {
    /// Initial porosity.
    pub phi_0: f64,
    /// Porosity at which permeability bottoms out.
    pub phi_crit: f64,
    /// Fitting exponent.
    pub eta: f64,
    /// Initial (clean-rock) permeability, m².
    #[serde(rename = "K_0")]
    pub k_0: f64,
    /// Minimum permeability, m².
    #[serde(rename = "K_min")]
    pub k_min: f64,
}

impl Default for RockLaw {
    fn default() -> Self {
        Self {
            phi_0: 0.15,
            phi_crit: 0.1,
            eta: 3.0,
            k_0: 1e-14,
            k_min: 1e-20,
        }
    }
}

impl RockLaw {
    pub fn with_k0(self, k_0: f64) -> Self {
        Self { k_0, ..self }
    }

    pub fn validate(&self) -> Vec<String> {
        let mut v = Vec::new();
        if !(0.0 < self.phi_crit && self.phi_crit < self.phi_0 && self.phi_0 < 1.0) {
            v.push(format!(
                "rock requires 0 < phi_crit < phi_0 < 1 (got phi_crit={}, phi_0={})",
                self.phi_crit, self.phi_0
            ));
        }
        if !(self.eta > 0.0) {
            v.push(format!("rock.eta must be > 0 (got {})", self.eta));
        }
        if !(0.0 < self.k_min && self.k_min < self.k_0) {
            v.push(format!(
                "rock requires 0 < K_min < K_0 (got K_min={}, K_0={})",
                self.k_min, self.k_0
            ));
        }
        v
    }

    /// Permeability of fully clogged rock, `K_min K_0 / (K_0 + K_min)`.
    pub fn floor_permeability(&self) -> f64 {
        self.k_min * self.k_0 / (self.k_0 + self.k_min)
    }
}

/// Per-cell chemical state.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CellChemState {
    pub c_m: f64,
    pub c_o: f64,
    pub c_u: f64,
    pub phi_b: f64,
    pub phi_c: f64,
}

impl CellChemState {
    pub fn check(&self, rock: &RockLaw) -> Result<()> {
        let conc = [("c_m", self.c_m), ("c_o", self.c_o), ("c_u", self.c_u)];
        for (name, c) in conc {
            if !(c >= 0.0) {
                return Err(MicpError::InvariantViolation(format!("{name} = {c} < 0")));
            }
        }
        if !(self.phi_b >= 0.0 && self.phi_c >= 0.0) {
            return Err(MicpError::InvariantViolation(format!(
                "negative volume fraction (phi_b = {}, phi_c = {})",
                self.phi_b, self.phi_c
            )));
        }
        if self.phi_b + self.phi_c > rock.phi_0 {
            return Err(MicpError::InvariantViolation(format!(
                "phi_b + phi_c = {} exceeds phi_0 = {}",
                self.phi_b + self.phi_c,
                rock.phi_0
            )));
        }
        Ok(())
    }
}

/// Reaction source terms, kg/(m³·s) per bulk volume.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ReactionRates {
    pub r_m: f64,
    pub r_o: f64,
    pub r_u: f64,
    pub r_b: f64,
    pub r_c: f64,
}

/// Mass removed by clamping, kg per m³ of bulk volume.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ClampDiagnostic {
    pub biofilm: f64,
    pub calcite: f64,
}

impl ClampDiagnostic {
    pub fn total(&self) -> f64 {
        self.biofilm + self.calcite
    }
}

pub fn effective_porosity(rock: &RockLaw, phi_b: f64, phi_c: f64) -> Result<f64> {
    if phi_b < 0.0 || phi_c < 0.0 {
        return Err(MicpError::InvariantViolation(format!(
            "negative volume fraction (phi_b = {phi_b}, phi_c = {phi_c})"
        )));
    }
    if phi_b + phi_c > rock.phi_0 {
        return Err(MicpError::InvariantViolation(format!(
            "phi_b + phi_c = {} exceeds phi_0 = {}",
            phi_b + phi_c,
            rock.phi_0
        )));
    }
    Ok((rock.phi_0 - phi_b - phi_c).max(0.0))
}

pub fn permeability(rock: &RockLaw, phi: f64) -> Result<f64> {
    if !(0.0..=rock.phi_0).contains(&phi) {
        return Err(MicpError::Domain(format!(
            "porosity {phi} outside [0, {}]",
            rock.phi_0
        )));
    }
    Ok(permeability_t(rock, phi))
}

/// Unchecked permeability law; porosity below `phi_crit` maps to the floor.
pub(crate) fn permeability_t<T: Real>(rock: &RockLaw, phi: T) -> T {
    if phi.value() <= rock.phi_crit {
        return T::cst(rock.floor_permeability());
    }
    let ratio = (phi - rock.phi_crit) / (rock.phi_0 - rock.phi_crit);
    (ratio.powf(rock.eta) * rock.k_0 + rock.k_min) * rock.k_0 / (rock.k_0 + rock.k_min)
}

pub fn monod(c: f64, k_half: f64) -> Result<f64> {
    if c < 0.0 {
        return Err(MicpError::Domain(format!("negative concentration {c}")));
    }
    if !(k_half > 0.0) {
        return Err(MicpError::Domain(format!(
            "half-velocity coefficient {k_half} must be > 0"
        )));
    }
    Ok(monod_t(c, k_half))
}

/// Monod factor, continued linearly below zero so an iterate sitting at
/// `c = 0` still sees the consumption slope `1 / K`.
#[inline]
pub(crate) fn monod_t<T: Real>(c: T, k_half: f64) -> T {
    if c.value() <= 0.0 {
        c * (1.0 / k_half)
    } else {
        c / (c + k_half)
    }
}

/// Reaction rates `[R_m, R_o, R_u, R_b, R_c]` for state
/// `[c_m, c_o, c_u, phi_b, phi_c]`. `shear` is ‖∇p_w − ρ_w g‖ in Pa/m.
pub(crate) fn rates_t<T: Real>(
    x: [T; 5],
    params: &KineticParams,
    rock: &RockLaw,
    shear: f64,
) -> [T; 5] {
    let [c_m, c_o, c_u, phi_b, phi_c] = x;
    let phi = -phi_b - phi_c + rock.phi_0;
    let m_o = monod_t(c_o, params.k_o);
    let m_u = monod_t(c_u, params.k_u);
    let shear_factor = if shear > 0.0 {
        params.k_str * shear.powf(DETACHMENT_EXPONENT)
    } else {
        0.0
    };
    let biomass = phi_b * params.rho_b;
    let growth = m_o * (params.y * params.mu);

    let detach = biomass * phi * shear_factor;
    let attach = c_m * phi * params.k_a;
    let r_m = c_m * phi * (growth - params.k_d) - attach + detach;
    let r_o = -(c_m * phi + biomass) * m_o * (params.f * params.mu);
    let r_u = -(biomass * m_u * params.mu_u);
    let r_c = biomass * m_u * (params.y_uc * params.mu_u);
    let calcite_loss = r_c / ((-phi_c + rock.phi_0) * params.rho_c);
    let r_b = biomass * (growth - params.k_d - calcite_loss) - detach + attach;
    [r_m, r_o, r_u, r_b, r_c]
}

pub fn reaction_rates(
    state: &CellChemState,
    params: &KineticParams,
    rock: &RockLaw,
    shear_norm: f64,
) -> Result<ReactionRates> {
    state.check(rock)?;
    if state.phi_c >= rock.phi_0 {
        return Err(MicpError::Domain(format!(
            "calcite fraction {} leaves no pore space",
            state.phi_c
        )));
    }
    if !(shear_norm >= 0.0) {
        return Err(MicpError::Domain(format!("negative shear norm {shear_norm}")));
    }
    let [r_m, r_o, r_u, r_b, r_c] = rates_t(
        [state.c_m, state.c_o, state.c_u, state.phi_b, state.phi_c],
        params,
        rock,
        shear_norm,
    );
    Ok(ReactionRates {
        r_m,
        r_o,
        r_u,
        r_b,
        r_c,
    })
}

/// Explicit storage update of the immobile phases.
///
/// Biofilm is floored at zero first, then calcite is capped so that
/// `phi_b + phi_c <= phi_0`. Removed mass is returned per bulk volume.
pub fn update_immobile(
    state: &CellChemState,
    rates: &ReactionRates,
    dt: f64,
    params: &KineticParams,
    rock: &RockLaw,
) -> (CellChemState, ClampDiagnostic) {
    let mut next = *state;
    let mut clamp = ClampDiagnostic::default();
    next.phi_b = state.phi_b + dt * rates.r_b / params.rho_b;
    next.phi_c = state.phi_c + dt * rates.r_c / params.rho_c;
    if next.phi_b < 0.0 {
        clamp.biofilm = -next.phi_b * params.rho_b;
        next.phi_b = 0.0;
    }
    if next.phi_c < 0.0 {
        clamp.calcite = -next.phi_c * params.rho_c;
        next.phi_c = 0.0;
    }
    let excess = next.phi_b + next.phi_c - rock.phi_0;
    if excess > 0.0 {
        let cut = excess.min(next.phi_c);
        clamp.calcite += cut * params.rho_c;
        next.phi_c -= cut;
        let rest = excess - cut;
        if rest > 0.0 {
            clamp.biofilm += rest * params.rho_b;
            next.phi_b -= rest;
        }
    }
    (next, clamp)
}

/// Closed-cell reference integration with explicit Euler steps of at most
/// `dt_fine`. Solute masses `c * phi` evolve with `R_m, R_o, R_u` and the
/// immobile fractions with `R_b / rho_b`, `R_c / rho_c`; no shear acts.
pub fn batch_oracle(
    initial: &CellChemState,
    params: &KineticParams,
    rock: &RockLaw,
    t_end: f64,
    dt_fine: f64,
) -> Result<CellChemState> {
    initial.check(rock)?;
    if !(dt_fine > 0.0) {
        return Err(MicpError::Domain(format!("dt_fine {dt_fine} must be > 0")));
    }
    let phi0 = rock.phi_0 - initial.phi_b - initial.phi_c;
    let mut mass = [initial.c_m * phi0, initial.c_o * phi0, initial.c_u * phi0];
    let mut phi_b = initial.phi_b;
    let mut phi_c = initial.phi_c;
    let mut t = 0.0;
    while t < t_end {
        let dt = dt_fine.min(t_end - t);
        let phi = rock.phi_0 - phi_b - phi_c;
        let c = mass.map(|m| if phi > 0.0 { m / phi } else { 0.0 });
        let r = rates_t([c[0], c[1], c[2], phi_b, phi_c], params, rock, 0.0);
        for k in 0..3 {
            mass[k] += dt * r[k];
        }
        phi_b += dt * r[3] / params.rho_b;
        phi_c += dt * r[4] / params.rho_c;
        t += dt;
        let finite = mass.iter().all(|m| m.is_finite()) && phi_b.is_finite() && phi_c.is_finite();
        if !finite || phi_b.abs() > 1.0 || phi_c.abs() > 1.0 || phi_c >= rock.phi_0 {
            return Err(MicpError::OracleFailure(t));
        }
    }
    let phi = rock.phi_0 - phi_b - phi_c;
    Ok(CellChemState {
        c_m: mass[0] / phi,
        c_o: mass[1] / phi,
        c_u: mass[2] / phi,
        phi_b,
        phi_c,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn porosity_examples() {
        let rock = RockLaw::default();
        assert_eq!(effective_porosity(&rock, 0.0, 0.0).unwrap(), 0.15);
        assert!((effective_porosity(&rock, 0.02, 0.03).unwrap() - 0.10).abs() < 1e-15);
        assert_eq!(effective_porosity(&rock, 0.0, 0.15).unwrap(), 0.0);
        assert!(matches!(
            effective_porosity(&rock, 0.1, 0.06),
            Err(MicpError::InvariantViolation(_))
        ));
    }

    #[test]
    fn permeability_examples() {
        let rock = RockLaw::default();
        assert_eq!(permeability(&rock, 0.15).unwrap(), 1e-14);
        let floor = permeability(&rock, 0.1).unwrap();
        assert_eq!(floor, 1e-20 * 1e-14 / (1e-14 + 1e-20));
        assert!(rel(floor, 1e-20) < 1.1e-6);
        // ((0.125 - 0.1) / 0.05)^3 = 0.125
        let mid = permeability(&rock, 0.125).unwrap();
        assert!(rel(mid, (0.125 * 1e-14 + 1e-20) * 1e-14 / (1e-14 + 1e-20)) < 1e-12);
        assert!(rel(mid, 1.25e-15) < 1e-5);
        assert!(permeability(&rock, 0.2).is_err());
        assert!(permeability(&rock, -0.01).is_err());
    }

    #[test]
    fn monod_examples() {
        let k = 2e-5;
        assert_eq!(monod(k, k).unwrap(), 0.5);
        assert_eq!(monod(0.0, k).unwrap(), 0.0);
        assert!((monod(3.0 * k, k).unwrap() - 0.75).abs() < 1e-15);
        assert!(monod(-1.0, k).is_err());
    }

    #[test]
    fn rates_for_microbial_slug() {
        let p = KineticParams::default();
        let rock = RockLaw::default();
        let s = CellChemState {
            c_m: 0.01,
            c_o: 0.04,
            ..Default::default()
        };
        let r = reaction_rates(&s, &p, &rock, 0.0).unwrap();
        // Hand substitution: phi = 0.15, M_o = 0.04 / 0.04002.
        let m_o = 0.04 / 0.04002;
        let expect_m = 0.01 * 0.15 * (0.5 * 4.17e-5 * m_o - 3.18e-7 - 8.51e-7);
        let expect_o = -(0.01 * 0.15) * 0.5 * 4.17e-5 * m_o;
        assert!(rel(r.r_m, expect_m) < 1e-12);
        assert!(rel(r.r_m, 2.95e-8) < 2e-3);
        assert!(rel(r.r_o, -3.13e-8) < 2e-3);
        assert!(rel(r.r_o, expect_o) < 1e-12);
        assert!(rel(r.r_b, 0.01 * 0.15 * 8.51e-7) < 1e-12);
        assert_eq!(r.r_u, 0.0);
        assert_eq!(r.r_c, 0.0);
    }

    #[test]
    fn rates_for_cementation() {
        let p = KineticParams::default();
        let rock = RockLaw::default();
        let s = CellChemState {
            c_u: 300.0,
            phi_b: 0.01,
            ..Default::default()
        };
        let r = reaction_rates(&s, &p, &rock, 0.0).unwrap();
        let m_u = 300.0 / 321.3;
        assert!(rel(r.r_u, -35.0 * 0.01 * 1.61e-2 * m_u) < 1e-12);
        assert!(rel(r.r_u, -5.26e-3) < 1e-3);
        assert!(rel(r.r_c, 8.79e-3) < 1e-3);
        assert_eq!(r.r_c, -p.y_uc * r.r_u);
    }

    #[test]
    fn zero_state_has_zero_rates() {
        let r = reaction_rates(
            &CellChemState::default(),
            &KineticParams::default(),
            &RockLaw::default(),
            1e5,
        )
        .unwrap();
        assert_eq!(r, ReactionRates::default());
    }

    #[test]
    fn calcite_term_guarded_at_full_clog() {
        let rock = RockLaw::default();
        let s = CellChemState {
            phi_c: 0.15,
            ..Default::default()
        };
        assert!(reaction_rates(&s, &KineticParams::default(), &rock, 0.0).is_err());
    }

    #[test]
    fn immobile_update_examples() {
        let p = KineticParams::default();
        let rock = RockLaw::default();
        let s = CellChemState {
            c_u: 300.0,
            phi_b: 0.01,
            ..Default::default()
        };
        let (same, clamp) = update_immobile(&s, &ReactionRates::default(), 10.0, &p, &rock);
        assert_eq!(same, s);
        assert_eq!(clamp.total(), 0.0);

        let dt = 100.0;
        let over = ReactionRates {
            r_b: -p.rho_b * s.phi_b / dt * 2.0,
            ..Default::default()
        };
        let (floored, clamp) = update_immobile(&s, &over, dt, &p, &rock);
        assert_eq!(floored.phi_b, 0.0);
        assert!(rel(clamp.biofilm, p.rho_b * s.phi_b) < 1e-12);

        let r = reaction_rates(&s, &p, &rock, 0.0).unwrap();
        let (next, _) = update_immobile(&s, &r, 3600.0, &p, &rock);
        assert!(rel(next.phi_c, 3600.0 * 8.79e-3 / 2710.0) < 1e-3);
        assert!(rel(next.phi_c, 1.17e-2) < 5e-3);
    }

    #[test]
    fn oracle_trivial_cases() {
        let p = KineticParams::default();
        let rock = RockLaw::default();
        let s = CellChemState {
            c_m: 0.01,
            c_o: 0.04,
            c_u: 300.0,
            phi_b: 0.01,
            phi_c: 0.0,
        };
        let same = batch_oracle(&s, &p, &rock, 0.0, 1.0).unwrap();
        assert_eq!(same, s);

        let frozen = KineticParams {
            mu: 0.0,
            mu_u: 0.0,
            k_a: 0.0,
            k_d: 0.0,
            k_str: 0.0,
            ..p
        };
        let out = batch_oracle(&s, &frozen, &rock, 3600.0 * 50.0, 10.0).unwrap();
        assert!(rel(out.c_u, s.c_u) < 1e-12);
        assert!(rel(out.c_m, s.c_m) < 1e-12);
        assert_eq!(out.phi_b, s.phi_b);
        assert_eq!(out.phi_c, s.phi_c);
    }

    #[test]
    fn oracle_stoichiometry_over_ten_hours() {
        let p = KineticParams::default();
        let rock = RockLaw::default();
        let s = CellChemState {
            c_u: 300.0,
            phi_b: 0.01,
            ..Default::default()
        };
        let out = batch_oracle(&s, &p, &rock, 36_000.0, 1.0).unwrap();
        assert!(out.c_u < s.c_u);
        assert!(out.phi_c > s.phi_c);
        let phi_start = rock.phi_0 - s.phi_b;
        let phi_end = rock.phi_0 - out.phi_b - out.phi_c;
        let urea_consumed = s.c_u * phi_start - out.c_u * phi_end;
        let calcite = p.rho_c * (out.phi_c - s.phi_c);
        assert!(rel(calcite, p.y_uc * urea_consumed) < 1e-3);
    }
}
