//! The numerics are generic over the scalar type; exercise the `f32`
//! instantiation end to end at smoke-test precision.

use acsim_core::background::Background;
use acsim_core::grid::{gradient, BoundaryRule, ScalarField, SpacetimeGrid};
use acsim_core::sgsolver::SgSolver;
use acsim_core::states::{even_coherent, expectation, Observable};
use acsim_core::Cplx;

#[test]
fn single_precision_stencils_and_states() {
    let grid = SpacetimeGrid::<f32>::new(
        &[32],
        &[0.25_f32],
        &[-4.0_f32],
        &[BoundaryRule::FixedValue],
    )
    .unwrap();
    let f = ScalarField::from_fn(grid, |x: &[f32]| 1.5 * x[0]);
    let g = gradient(&f).unwrap().component(0);
    for &v in g.values() {
        assert!((v - 1.5).abs() < 1e-5);
    }

    let cat = even_coherent(Cplx::new(1.0_f32, 0.0), 24).unwrap();
    let n0 = expectation(&cat, Observable::N0).unwrap().re;
    assert!((n0 - 1.0_f32.tanh()).abs() < 1e-5);
}

#[test]
fn single_precision_field_evolution() {
    let grid =
        SpacetimeGrid::<f32>::new(&[64], &[0.2_f32], &[0.0_f32], &[BoundaryRule::Periodic])
            .unwrap();
    let bg = Background::uniform(grid.clone(), 0.5_f32, 1.0, 1.0, 1.0, 1.0, 0).unwrap();
    let solver = SgSolver::from_background(&bg, 0.4_f32).unwrap();
    let dt = 0.5 * solver.max_dt();
    let theta: Vec<f32> = (0..64)
        .map(|i| 0.01 * (grid.position(i)[0] * 0.4908739).sin())
        .collect();
    let mut state = solver.initial_state(theta, vec![0.0; 64], dt).unwrap();
    let e0 = solver.energy(&state, dt);
    for _ in 0..500 {
        solver.step(&mut state, dt).unwrap();
    }
    let e1 = solver.energy(&state, dt);
    assert!(((e1 - e0) / e0).abs() < 1e-2, "f32 energy drift {}", (e1 - e0) / e0);
}
