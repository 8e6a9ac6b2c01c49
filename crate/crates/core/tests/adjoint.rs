mod common;

use common::*;
use wri_core::grid::Grid2D;
use wri_core::grid::SlownessSqModel;
use wri_core::helmholtz::{
    assemble, factorize, forward, forward_adjoint, restrict, restrict_adjoint, BoundaryLayer, ShotData, Wavefield,
};
use wri_core::scalar::{dot, norm};

#[test]
fn operator_solve_and_restriction_adjoints() {
    let s = small_problem(3, 11, 1.0);
    let p = &s.problem;
    let n = p.grid.len();
    let op = assemble(&s.m_eval, p.omega, p.boundary).unwrap();
    let f = factorize(&op).unwrap();
    let mut r = rng(7);
    for _ in 0..20 {
        let (x, y) = (rvec(n, &mut r), rvec(n, &mut r));
        let scale = norm(&x) * norm(&y);
        // A
        let lhs = dot(&op.apply(&x), &y);
        let rhs = dot(&x, &op.apply_adjoint(&y));
        assert!((lhs - rhs).norm() <= 1e-10 * scale);
        // A⁻¹
        let (mut ax, mut ay) = (x.clone(), y.clone());
        f.solve_vec(&mut ax).unwrap();
        f.solve_adjoint_vec(&mut ay).unwrap();
        assert!((dot(&ax, &y) - dot(&x, &ay)).norm() <= 1e-10 * scale);
        // R
        let u = Wavefield::from_vec(p.grid, 1, x.clone()).unwrap();
        let d = ShotData::from_vec(11, 1, rvec(11, &mut r)).unwrap();
        let lhs = dot(restrict(&u, &p.acq).as_slice(), d.as_slice());
        let rhs = dot(&x, restrict_adjoint(&d, &p.acq, p.grid).unwrap().as_slice());
        assert!((lhs - rhs).norm() <= 1e-10 * norm(&x) * norm(d.as_slice()));
        // F
        let fz = restrict(&f.solve(&u).unwrap(), &p.acq);
        let fty = forward_adjoint(&f, &d, &p.acq).unwrap();
        let lhs = dot(fz.as_slice(), d.as_slice());
        let rhs = dot(&x, fty.as_slice());
        assert!((lhs - rhs).norm() <= 1e-10 * norm(&x) * norm(d.as_slice()));
    }
}

#[test]
fn forward_is_linear_in_source() {
    let s = small_problem(2, 7, 1.0);
    let p = &s.problem;
    let mut r = rng(8);
    let q1 = Wavefield::from_vec(p.grid, 2, rvec(2 * p.grid.len(), &mut r)).unwrap();
    let q2 = Wavefield::from_vec(p.grid, 2, rvec(2 * p.grid.len(), &mut r)).unwrap();
    let sum = Wavefield::from_vec(p.grid, 2, q1.as_slice().iter().zip(q2.as_slice()).map(|(a, b)| a + b).collect()).unwrap();
    let d1 = forward(&s.m_eval, p.omega, &q1, &p.acq, p.boundary).unwrap();
    let d2 = forward(&s.m_eval, p.omega, &q2, &p.acq, p.boundary).unwrap();
    let d12 = forward(&s.m_eval, p.omega, &sum, &p.acq, p.boundary).unwrap();
    let diff = d12.sub(&d1.add(&d2).unwrap()).unwrap();
    assert!(norm(diff.as_slice()) <= 1e-12 * norm(d12.as_slice()));
    let zero = forward(&s.m_eval, p.omega, &Wavefield::zeros(p.grid, 2), &p.acq, p.boundary).unwrap();
    assert!(zero.as_slice().iter().all(|z| z.norm() == 0.0));
}

#[test]
fn point_source_field_decays_with_distance() {
    let grid = Grid2D::new(201, 201, 10.0, 10.0).unwrap();
    let m = SlownessSqModel::uniform(grid, 1.0 / (1000.0f64 * 1000.0)).unwrap();
    let f = factorize(&assemble(&m, omega(), BoundaryLayer { width: 30, strength: 2.0 }).unwrap()).unwrap();
    let mut u = vec![wri_core::C::new(0.0, 0.0); grid.len()];
    u[grid.index(100, 100)] = wri_core::C::new(1.0, 0.0);
    f.solve_vec(&mut u).unwrap();
    // wavelength 166.7 m = 16.7 nodes; radial profile along +x from 2
    // wavelengths out to the sponge edge
    let profile: Vec<f64> = (134..=170).step_by(2).map(|ix| u[grid.index(ix, 100)].norm()).collect();
    for w in profile.windows(2) {
        assert!(w[1] < w[0], "{profile:?}");
    }
}
