use micp::kinetics::{
    batch_oracle, effective_porosity, monod, permeability, reaction_rates, update_immobile,
    CellChemState, KineticParams, ReactionRates, RockLaw,
};
use proptest::prelude::*;

fn state() -> impl Strategy<Value = CellChemState> {
    (0.0f64..0.9, 0.0f64..0.9, 0.0f64..0.02, 0.0f64..0.08, 0.0f64..600.0).prop_map(
        |(fc, fb, c_m, c_o, c_u)| {
            let phi_c = fc * 0.15;
            let phi_b = fb * (0.15 - phi_c);
            CellChemState { c_m, c_o, c_u, phi_b, phi_c }
        },
    )
}

#[test]
fn permeability_endpoints_and_continuity() {
    let rock = RockLaw::default();
    assert_eq!(permeability(&rock, rock.phi_0).unwrap(), rock.k_0);
    let floor = rock.k_min * rock.k_0 / (rock.k_0 + rock.k_min);
    assert_eq!(permeability(&rock, rock.phi_crit).unwrap(), floor);
    assert_eq!(permeability(&rock, 0.0).unwrap(), floor);
    let above = permeability(&rock, rock.phi_crit * (1.0 + 1e-14)).unwrap();
    assert!((above - floor).abs() / floor < 1e-12);
}

#[test]
fn monod_examples() {
    assert_eq!(monod(0.0, 2e-5).unwrap(), 0.0);
    assert_eq!(monod(2e-5, 2e-5).unwrap(), 0.5);
    assert!(monod(-1.0, 1.0).is_err());
    assert!(monod(1.0, 0.0).is_err());
}

#[test]
fn no_biomass_no_urea_consumption() {
    let s = CellChemState { c_m: 0.0, c_o: 0.04, c_u: 300.0, phi_b: 0.0, phi_c: 0.0 };
    let r = reaction_rates(&s, &KineticParams::default(), &RockLaw::default(), 0.0).unwrap();
    assert_eq!(r.r_u, 0.0);
    assert_eq!(r.r_c, 0.0);
}

#[test]
fn immobile_update_clamps_and_reports() {
    let params = KineticParams::default();
    let rock = RockLaw::default();
    let s = CellChemState { c_m: 0.0, c_o: 0.0, c_u: 0.0, phi_b: 1e-4, phi_c: 0.0 };
    let r = ReactionRates { r_b: -1.0, ..Default::default() };
    let (next, clamp) = update_immobile(&s, &r, 1.0, &params, &rock);
    assert_eq!(next.phi_b, 0.0);
    assert!((clamp.biofilm - (1.0 - 1e-4 * params.rho_b)).abs() < 1e-12);
}

#[test]
fn oracle_without_urea_keeps_calcite() {
    let params = KineticParams::default();
    let rock = RockLaw::default();
    let s = CellChemState { c_m: 0.01, c_o: 0.04, c_u: 0.0, phi_b: 0.01, phi_c: 0.0 };
    let out = batch_oracle(&s, &params, &rock, 3600.0, 1.0).unwrap();
    assert_eq!(out.phi_c, 0.0);
    assert!(effective_porosity(&rock, out.phi_b, out.phi_c).is_ok());
}

#[test]
fn oracle_converges_with_step_size() {
    let params = KineticParams::default();
    let rock = RockLaw::default();
    let s = CellChemState { c_m: 0.0, c_o: 0.0, c_u: 300.0, phi_b: 0.01, phi_c: 0.0 };
    let t = 10.0 * 3600.0;
    let coarse = batch_oracle(&s, &params, &rock, t, 10.0).unwrap();
    let fine = batch_oracle(&s, &params, &rock, t, 1.0).unwrap();
    assert!((coarse.phi_c - fine.phi_c).abs() / fine.phi_c < 1e-3);
}

proptest! {
    #[test]
    fn calcite_matches_urea_stoichiometry(s in state(), shear in 0.0f64..1e6) {
        let params = KineticParams::default();
        let r = reaction_rates(&s, &params, &RockLaw::default(), shear).unwrap();
        let scale = r.r_c.abs().max(f64::MIN_POSITIVE);
        prop_assert!((r.r_c + params.y_uc * r.r_u).abs() / scale <= 4.0 * f64::EPSILON);
    }

    #[test]
    fn exchange_conserves_microbial_mass(s in state(), shear in 0.0f64..1e6) {
        let params = KineticParams { mu: 0.0, k_d: 0.0, ..KineticParams::default() };
        let s = CellChemState { c_u: 0.0, ..s };
        let r = reaction_rates(&s, &params, &RockLaw::default(), shear).unwrap();
        let scale = r.r_m.abs().max(r.r_b.abs()).max(f64::MIN_POSITIVE);
        prop_assert!((r.r_m + r.r_b).abs() / scale <= 1e-14);
    }

    #[test]
    fn permeability_is_monotone(a in 0.0f64..0.15, b in 0.0f64..0.15) {
        let rock = RockLaw::default();
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(permeability(&rock, lo).unwrap() <= permeability(&rock, hi).unwrap());
    }

    #[test]
    fn oxygen_and_urea_never_produced(s in state(), shear in 0.0f64..1e6) {
        let r = reaction_rates(&s, &KineticParams::default(), &RockLaw::default(), shear).unwrap();
        prop_assert!(r.r_o <= 0.0);
        prop_assert!(r.r_u <= 0.0);
        prop_assert!(r.r_c >= 0.0);
    }
}
