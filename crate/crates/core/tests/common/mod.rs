#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, Vector2};
use piper::dynamics::ChainModel;

/// Link COM positions from plain trigonometry.
pub fn com_positions(model: &ChainModel, q: &[f64]) -> Vec<Vector2<f64>> {
    let mut origin = Vector2::zeros();
    let mut angle = 0.0;
    let mut out = Vec::new();
    for (i, link) in model.links().iter().enumerate() {
        angle += q[i];
        let axis = Vector2::new(angle.cos(), angle.sin());
        out.push(origin + link.com_offset * axis);
        origin += link.length * axis;
    }
    out
}

/// `M = Σ m_i J_iᵀ J_i + I_i j_iᵀ j_i` with the COM Jacobians taken by
/// central differences of [`com_positions`].
pub fn mass_matrix(model: &ChainModel, q: &[f64]) -> DMatrix<f64> {
    let n = q.len();
    let h = 1e-6;
    let mut jac: Vec<DMatrix<f64>> = vec![DMatrix::zeros(2, n); n];
    for j in 0..n {
        let mut plus = q.to_vec();
        let mut minus = q.to_vec();
        plus[j] += h;
        minus[j] -= h;
        let (p, m) = (com_positions(model, &plus), com_positions(model, &minus));
        for i in 0..n {
            let d = (p[i] - m[i]) / (2.0 * h);
            jac[i][(0, j)] = d.x;
            jac[i][(1, j)] = d.y;
        }
    }
    let mut m = DMatrix::zeros(n, n);
    for (i, link) in model.links().iter().enumerate() {
        m += link.mass * jac[i].transpose() * &jac[i];
        // Link i turns with q_0 + … + q_i.
        let w = DMatrix::from_fn(1, n, |_, j| if j <= i { 1.0 } else { 0.0 });
        m += link.inertia_com * w.transpose() * w;
    }
    m
}

pub fn potential(model: &ChainModel, q: &[f64]) -> f64 {
    let g = model.gravity();
    com_positions(model, q)
        .iter()
        .zip(model.links())
        .map(|(c, l)| -l.mass * g.dot(c))
        .sum()
}

/// Euler-Lagrange bias `Ṁq̇ − ½ ∂(q̇ᵀMq̇)/∂q + ∂P/∂q` by central differences.
pub fn lagrange_bias(model: &ChainModel, q: &[f64], qd: &[f64]) -> DVector<f64> {
    let n = q.len();
    let h = 1e-5;
    let qdv = DVector::from_column_slice(qd);
    let kin = |q: &[f64]| 0.5 * qdv.dot(&(mass_matrix(model, q) * &qdv));
    let mut mdot = DMatrix::zeros(n, n);
    let mut out = DVector::zeros(n);
    for k in 0..n {
        let mut plus = q.to_vec();
        let mut minus = q.to_vec();
        plus[k] += h;
        minus[k] -= h;
        mdot += (mass_matrix(model, &plus) - mass_matrix(model, &minus)) / (2.0 * h) * qd[k];
        out[k] = -(kin(&plus) - kin(&minus)) / (2.0 * h) + (potential(model, &plus) - potential(model, &minus)) / (2.0 * h);
    }
    out + mdot * qdv
}

/// Textbook two-link arm, angles from +x, gravity `(0, −g)`.
pub fn two_link_textbook(model: &ChainModel, q: &[f64], qd: &[f64]) -> (DMatrix<f64>, DVector<f64>) {
    let l = model.links();
    let g = -model.gravity().y;
    assert_eq!(model.gravity().x, 0.0);
    let (m1, m2, l1, r1, r2, i1, i2) = (l[0].mass, l[1].mass, l[0].length, l[0].com_offset, l[1].com_offset, l[0].inertia_com, l[1].inertia_com);
    let alpha = i1 + i2 + m1 * r1 * r1 + m2 * (l1 * l1 + r2 * r2);
    let beta = m2 * l1 * r2;
    let delta = i2 + m2 * r2 * r2;
    let c2 = q[1].cos();
    let s2 = q[1].sin();
    let m = DMatrix::from_row_slice(2, 2, &[alpha + 2.0 * beta * c2, delta + beta * c2, delta + beta * c2, delta]);
    let cqd = DVector::from_vec(vec![
        -beta * s2 * qd[1] * qd[0] - beta * s2 * (qd[0] + qd[1]) * qd[1],
        beta * s2 * qd[0] * qd[0],
    ]);
    let grav = DVector::from_vec(vec![
        (m1 * r1 + m2 * l1) * g * q[0].cos() + m2 * r2 * g * (q[0] + q[1]).cos(),
        m2 * r2 * g * (q[0] + q[1]).cos(),
    ]);
    (m, cqd + grav)
}
