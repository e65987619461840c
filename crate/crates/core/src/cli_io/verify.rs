//! Quick invariant and oracle checks behind `micp verify`.

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::exec::Execution;
use crate::grid::{face_transmissibility, Grid};
use crate::kinetics::{
    batch_oracle, permeability, reaction_rates, CellChemState, KineticParams, RockLaw,
};
use crate::micp_solver::{MicpProblem, MicpState, SolverSettings, C_U, PHI_B};
use crate::schedule::{Experiment, WellControl};

use super::config::preset;

struct Check {
    name: &'static str,
    ok: bool,
    detail: String,
}

fn permeability_law() -> Check {
    let rock = RockLaw::default();
    let k0 = permeability(&rock, rock.phi_0).unwrap_or(f64::NAN);
    let kc = permeability(&rock, rock.phi_crit).unwrap_or(f64::NAN);
    let mut ok = k0 == rock.k_0 && kc == rock.floor_permeability();
    let mut prev = 0.0;
    for i in 0..100 {
        let phi = rock.phi_0 * i as f64 / 99.0;
        let k = permeability(&rock, phi).unwrap_or(f64::NAN);
        ok &= k >= prev;
        prev = k;
    }
    let above = permeability(&rock, rock.phi_crit * (1.0 + 1e-15)).unwrap_or(f64::NAN);
    ok &= ((above - kc) / kc).abs() < 1e-12;
    Check {
        name: "permeability law",
        ok,
        detail: format!("K(phi_0) = {k0:e}, K(phi_crit) = {kc:e}"),
    }
}

fn random_state(rng: &mut StdRng, rock: &RockLaw) -> CellChemState {
    let phi_c = rng.gen_range(0.0..0.9 * rock.phi_0);
    let phi_b = rng.gen_range(0.0..(rock.phi_0 - phi_c) * 0.9);
    CellChemState {
        c_m: rng.gen_range(0.0..0.02),
        c_o: rng.gen_range(0.0..0.08),
        c_u: rng.gen_range(0.0..600.0),
        phi_b,
        phi_c,
    }
}

fn stoichiometry(rng: &mut StdRng) -> Check {
    let params = KineticParams::default();
    let rock = RockLaw::default();
    let mut worst: f64 = 0.0;
    for _ in 0..10_000 {
        let s = random_state(rng, &rock);
        let shear = rng.gen_range(0.0..1e6);
        let Ok(r) = reaction_rates(&s, &params, &rock, shear) else {
            return Check {
                name: "calcite/urea stoichiometry",
                ok: false,
                detail: format!("rates failed for {s:?}"),
            };
        };
        let scale = r.r_c.abs().max(f64::MIN_POSITIVE);
        worst = worst.max((r.r_c + params.y_uc * r.r_u).abs() / scale);
    }
    Check {
        name: "calcite/urea stoichiometry",
        ok: worst <= 4.0 * f64::EPSILON,
        detail: format!("max relative defect {worst:.2e} over 10^4 states"),
    }
}

fn transmissibility_symmetry(rng: &mut StdRng) -> Check {
    let grid = preset(Experiment::Ex1).build_grid();
    let Ok(grid) = grid else {
        return Check {
            name: "transmissibility symmetry",
            ok: false,
            detail: "preset grid failed to build".into(),
        };
    };
    let mut ok = true;
    for f in &grid.faces {
        let mut perm: Vec<f64> = (0..grid.n_active()).map(|_| 10f64.powf(rng.gen_range(-20.0..-12.0))).collect();
        let t = face_transmissibility(&grid, &perm, f).unwrap_or(f64::NAN);
        let (a, b) = f.cells;
        perm.swap(a, b);
        let mirrored = crate::grid::Face {
            cells: (a, b),
            half: (f.half.1, f.half.0),
            ..f.clone()
        };
        let t2 = face_transmissibility(&grid, &perm, &mirrored).unwrap_or(f64::NAN);
        ok &= t == t2 && t > 0.0;
    }
    Check {
        name: "transmissibility symmetry",
        ok,
        detail: format!("{} faces", grid.faces.len()),
    }
}

fn closed_cell_oracle() -> Check {
    let grid = Grid::closed_cell(1.0, 1e-14, 0.15);
    let params = KineticParams::default();
    let rock = RockLaw::default();
    let fail = |detail: String| Check {
        name: "closed cell vs batch oracle",
        ok: false,
        detail,
    };
    let problem = match MicpProblem::new(&grid, &params, &rock, [0.01, 0.04, 300.0], Execution::Sequential) {
        Ok(p) => p,
        Err(e) => return fail(e.to_string()),
    };
    let mut state = MicpState::initial(&grid, &params);
    state.cells[0][C_U] = 300.0;
    state.cells[0][PHI_B] = 0.01;
    let init = state.chem(0);
    for _ in 0..100 {
        match problem.solve_timestep(&state, 3600.0, &WellControl::shut_in(), &SolverSettings::default()) {
            Ok(s) => state = s.state,
            Err(e) => return fail(e.to_string()),
        }
    }
    let oracle = match batch_oracle(&init, &params, &rock, 100.0 * 3600.0, 1.0) {
        Ok(o) => o,
        Err(e) => return fail(e.to_string()),
    };
    let got = state.chem(0);
    let rel = |a: f64, b: f64, s: f64| (a - b).abs() / b.abs().max(s);
    let worst = rel(got.phi_c, oracle.phi_c, 0.0)
        .max(rel(got.phi_b, oracle.phi_b, 0.0))
        .max(rel(got.c_u, oracle.c_u, init.c_u));
    Check {
        name: "closed cell vs batch oracle",
        ok: worst < 0.02,
        detail: format!("max relative difference {worst:.2e}"),
    }
}

fn ex1_first_step() -> Check {
    let config = preset(Experiment::Ex1);
    let result = (|| {
        let grid = config.build_grid()?;
        let schedule = config.schedule.resolve()?;
        let init = MicpState::initial(&grid, &config.kinetics);
        let problem = MicpProblem::new(
            &grid,
            &config.kinetics,
            &config.rock,
            MicpProblem::scales_for(&schedule, &init),
            Execution::Sequential,
        )?;
        let control = schedule.periods()[0].control();
        problem.solve_timestep(&init, config.solver.dt_init, &control, &config.solver)
    })();
    match result {
        Ok(step) => Check {
            name: "first injection step converges",
            ok: step.iterations <= 15,
            detail: format!("{} Newton iterations", step.iterations),
        },
        Err(e) => Check {
            name: "first injection step converges",
            ok: false,
            detail: e.to_string(),
        },
    }
}

/// Runs every check, prints one line each and returns overall success.
pub fn run_verify(seed: u64) -> bool {
    let mut rng = StdRng::seed_from_u64(seed);
    let checks = [
        permeability_law(),
        stoichiometry(&mut rng),
        transmissibility_symmetry(&mut rng),
        closed_cell_oracle(),
        ex1_first_step(),
    ];
    let mut all = true;
    for c in &checks {
        println!("{} {}: {}", if c.ok { "PASS" } else { "FAIL" }, c.name, c.detail);
        all &= c.ok;
    }
    println!("verify seed {seed}: {}", if all { "all checks passed" } else { "FAILED" });
    all
}
