//! Self-checks behind the `dyncheck` and `gradcheck` subcommands.

use std::f64::consts::FRAC_PI_2;
use std::fmt;

use nalgebra::{DMatrix, DVector, Vector2};

use super::HarnessError;
use crate::autodiff::{grad_check, Activation};
use crate::dynamics::{
    bias_force, coriolis_matrix, gravity_vector, mass_matrix, mass_matrix_time_derivative, rnea, total_energy,
    ChainModel, ExternalForce, JointState, Link,
};
use crate::physics_losses::{
    energy_residual, energy_residual_grad, grasp_loss, grasp_loss_grad, push_loss, push_loss_grad, reach_loss,
    reach_loss_grad, slide_loss, slide_loss_grad, ConstraintWeights, EnergyInputs, GraspInputs, WorkWindow,
};
use crate::pinn::{pinn_loss, PinnLossWeights, PinnModel};
use crate::rl::{piper_penalty, GaussianPolicy, PenaltyAction, PenaltyTerms, PhysicsCoach, TransitionRecord};
use crate::rng::PiperRng;
use crate::sim::{self, Env, EnvSpec, WorldState};

pub const SYMMETRY_TOL: f64 = 1e-10;
pub const CRBA_RNEA_TOL: f64 = 1e-8;
pub const CLOSED_FORM_TOL: f64 = 1e-6;
pub const SKEW_TOL: f64 = 1e-6;
pub const BIAS_TOL: f64 = 1e-6;
pub const ENERGY_DRIFT_TOL: f64 = 0.01;
pub const DRIFT_RATIO_RANGE: (f64, f64) = (1.6, 2.4);
pub const GRAD_TOL: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;
const DIRECTIONS: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub bound: String,
    pub passed: bool,
}

impl Check {
    fn at_most(name: &str, value: f64, tol: f64) -> Self {
        Self {
            name: name.into(),
            value,
            bound: format!("<= {tol:e}"),
            passed: value <= tol,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct CheckReport {
    pub checks: Vec<Check>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        !self.checks.is_empty() && self.checks.iter().all(|c| c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

impl fmt::Display for CheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(f, "{tag} {:<32} {:>12.4e} {}", c.name, c.value, c.bound)?;
        }
        Ok(())
    }
}

/// Chain with link parameters drawn from physically valid ranges.
pub fn random_chain(n: usize, rng: &mut PiperRng) -> ChainModel {
    let links = (0..n)
        .map(|_| {
            let length = rng.uniform(0.2, 1.0);
            let mass = rng.uniform(0.2, 2.0);
            Link {
                length,
                mass,
                com_offset: rng.uniform(0.0, length),
                inertia_com: rng.uniform(0.0, mass * length * length / 6.0),
            }
        })
        .collect();
    let gravity = Vector2::new(rng.uniform(-2.0, 2.0), -9.81);
    ChainModel::new(links, gravity, vec![10.0; n]).expect("sampled links are valid")
}

fn random_state(n: usize, rng: &mut PiperRng) -> (DVector<f64>, DVector<f64>) {
    (
        DVector::from_fn(n, |_, _| rng.uniform(-std::f64::consts::PI, std::f64::consts::PI)),
        DVector::from_fn(n, |_, _| rng.uniform(-3.0, 3.0)),
    )
}

/// Two-link mass matrix and bias written out by hand, `q` measured from the
/// +x axis.
pub fn two_link_closed_form(
    model: &ChainModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
) -> (DMatrix<f64>, DVector<f64>) {
    let [a, b] = [model.links()[0], model.links()[1]];
    let g = model.gravity();
    let (l1, c1, c2) = (a.length, a.com_offset, b.com_offset);
    let (m1, m2) = (a.mass, b.mass);
    let (s2, k2) = q[1].sin_cos();
    let m11 = a.inertia_com + b.inertia_com + m1 * c1 * c1 + m2 * (l1 * l1 + c2 * c2 + 2.0 * l1 * c2 * k2);
    let m12 = b.inertia_com + m2 * (c2 * c2 + l1 * c2 * k2);
    let m22 = b.inertia_com + m2 * c2 * c2;
    let h = m2 * l1 * c2 * s2;
    // −g · ∂c/∂θ for a point at unit distance along angle θ.
    let lever = |theta: f64| g.x * theta.sin() - g.y * theta.cos();
    let g2 = m2 * c2 * lever(q[0] + q[1]);
    let g1 = (m1 * c1 + m2 * l1) * lever(q[0]) + g2;
    let bias = DVector::from_vec(vec![
        -h * (2.0 * qd[0] * qd[1] + qd[1] * qd[1]) + g1,
        h * qd[0] * qd[0] + g2,
    ]);
    (DMatrix::from_row_slice(2, 2, &[m11, m12, m12, m22]), bias)
}

/// Rigid-body identities over `states` random states on 1, 2, 3 and 5 link
/// chains, plus pendulum energy conservation.
pub fn dyncheck(seed: u64, states: usize) -> Result<CheckReport, HarnessError> {
    let mut rng = PiperRng::new(seed);
    let mut sym: f64 = 0.0;
    let mut not_spd = 0usize;
    let mut crba: f64 = 0.0;
    let mut skew: f64 = 0.0;
    let mut bias_err: f64 = 0.0;
    let mut closed: f64 = 0.0;
    for n in [1usize, 2, 3, 5] {
        for _ in 0..states {
            let model = random_chain(n, &mut rng);
            let (q, qd) = random_state(n, &mut rng);
            let m = mass_matrix(&model, &q)?;
            sym = sym.max((&m - m.transpose()).amax());
            if m.clone().cholesky().is_none() {
                not_spd += 1;
            }
            let zero = DVector::zeros(n);
            let base = rnea(&model, &q, &zero, &zero, model.gravity(), &ExternalForce::None)?;
            for j in 0..n {
                let mut e = DVector::zeros(n);
                e[j] = 1.0;
                let col = rnea(&model, &q, &zero, &e, model.gravity(), &ExternalForce::None)? - &base;
                crba = crba.max((col - m.column(j)).amax());
            }
            let m_dot = mass_matrix_time_derivative(&model, &q, &qd)?;
            let c = coriolis_matrix(&model, &q, &qd)?;
            let z = DVector::from_fn(n, |_, _| rng.normal());
            let form = z.dot(&((&m_dot - 2.0 * &c) * &z)).abs();
            skew = skew.max(form / (m_dot.norm().max(1.0) * z.norm_squared()));
            let b = bias_force(&model, &q, &qd, &ExternalForce::None)?;
            let cg = &c * &qd + gravity_vector(&model, &q)?;
            bias_err = bias_err.max((&b - cg).amax() / b.amax().max(1.0));
            if n == 2 {
                let (m_ref, b_ref) = two_link_closed_form(&model, &q, &qd);
                closed = closed.max((&m - m_ref).amax()).max((&b - b_ref).amax());
            }
        }
    }
    let (coarse, fine) = pendulum_drift_pair(5.0)?;
    let ratio = coarse / fine;
    let mut report = CheckReport::default();
    report.checks.push(Check::at_most("mass_matrix_symmetry", sym, SYMMETRY_TOL));
    report.checks.push(Check::at_most("mass_matrix_not_spd_count", not_spd as f64, 0.0));
    report.checks.push(Check::at_most("crba_vs_rnea", crba, CRBA_RNEA_TOL));
    report.checks.push(Check::at_most("two_link_closed_form", closed, CLOSED_FORM_TOL));
    report.checks.push(Check::at_most("skew_symmetry_mdot_2c", skew, SKEW_TOL));
    report.checks.push(Check::at_most("bias_vs_c_qd_plus_g", bias_err, BIAS_TOL));
    report.checks.push(Check::at_most("pendulum_energy_drift_5s", coarse, ENERGY_DRIFT_TOL));
    report.checks.push(Check {
        name: "pendulum_drift_halving_ratio".into(),
        value: ratio,
        bound: format!("in [{}, {}]", DRIFT_RATIO_RANGE.0, DRIFT_RATIO_RANGE.1),
        passed: (DRIFT_RATIO_RANGE.0..=DRIFT_RATIO_RANGE.1).contains(&ratio),
    });
    Ok(report)
}

/// Largest relative energy deviation of an unactuated 1 m, 1 kg rod
/// released 1 rad from hanging, at the default `dt` and at half of it.
pub fn pendulum_drift_pair(seconds: f64) -> Result<(f64, f64), HarnessError> {
    let mut spec = EnvSpec::reach2d();
    spec.chain = ChainModel::new(vec![Link::uniform_rod(1.0, 1.0)], Vector2::new(0.0, -9.81), vec![10.0])?;
    spec.initial_q = vec![0.0];
    let coarse = pendulum_drift(&spec, seconds)?;
    spec.dt /= 2.0;
    Ok((coarse, pendulum_drift(&spec, seconds)?))
}

fn pendulum_drift(spec: &EnvSpec, seconds: f64) -> Result<f64, HarnessError> {
    let mut world = WorldState {
        arm: JointState::at_rest(DVector::from_vec(vec![-FRAC_PI_2 + 1.0])),
        object_pos: None,
        object_vel: None,
        time: 0.0,
        last_contact: None,
    };
    let tau = DVector::zeros(1);
    let e0 = total_energy(&spec.chain, &world.arm.q, &world.arm.qd)?;
    let mut worst: f64 = 0.0;
    for _ in 0..(seconds / spec.dt).round() as usize {
        world = sim::step(spec, &world, &tau).map_err(crate::rl::RlError::from)?.0;
        let e = total_energy(&spec.chain, &world.arm.q, &world.arm.qd)?;
        worst = worst.max((e - e0).abs() / e0.abs());
    }
    Ok(worst)
}

/// Random-action transitions with oracle labels.
pub fn random_transitions(spec: &EnvSpec, count: usize, seed: u64) -> Result<Vec<TransitionRecord>, HarnessError> {
    let mut env = Env::new(spec.clone()).map_err(crate::rl::RlError::from)?;
    let mut rng = PiperRng::new(seed);
    let limits = spec.chain.torque_limit_vector();
    let mut obs = env.reset(rng.next_u64());
    let mut out = Vec::with_capacity(count);
    while out.len() < count {
        let a = DVector::from_fn(limits.len(), |j, _| rng.uniform(-limits[j], limits[j]));
        let step = env.step(&a).map_err(crate::rl::RlError::from)?;
        out.push(TransitionRecord::from_env_step(spec, &obs, &step, 0.5)?);
        obs = if step.done() { env.reset(rng.next_u64()) } else { step.obs };
    }
    Ok(out)
}

fn fd_check(name: &str, x0: &[f64], f: impl FnMut(&[f64]) -> (f64, Vec<f64>), rng: &mut PiperRng) -> Check {
    let r = grad_check(x0, f, FD_STEP, DIRECTIONS, rng);
    Check::at_most(name, r.max_relative_error, GRAD_TOL)
}

fn v(x: &[f64]) -> DVector<f64> {
    DVector::from_column_slice(x)
}

/// Central-difference checks of every analytic gradient the training loop
/// relies on.
pub fn gradcheck(seed: u64) -> Result<CheckReport, HarnessError> {
    let mut rng = PiperRng::new(seed);
    let mut report = CheckReport::default();

    let spec = EnvSpec::push2d();
    let n = spec.n_joints();
    let records = random_transitions(&spec, 32, seed)?;
    let batch: Vec<&TransitionRecord> = records.iter().collect();
    let mut pinn = PinnModel::new(spec.obs_dim(), n, &[16, 16], Activation::Tanh, &mut rng.split("pinn"))?;
    pinn.freeze_normalization(records.iter());
    let mut weights = PinnLossWeights::new(0.1, 1e-3);
    weights.outlier_weight = 0.5;
    let p0 = pinn.network().params();
    let mut probe = pinn.clone();
    report.checks.push(fd_check(
        "pinn_loss_params",
        &p0,
        |p| {
            probe.network_mut().set_params(p).expect("length");
            let (parts, g) = pinn_loss(&probe, &batch, &weights).expect("pinn loss");
            (parts.total, g.to_flat())
        },
        &mut rng,
    ));

    let limits = spec.chain.torque_limit_vector();
    let mut policy = GaussianPolicy::new(spec.obs_dim(), limits, &[16], -0.5, &mut rng.split("policy"))?;
    let mut scaled = policy.network().params();
    scaled.iter_mut().for_each(|p| *p *= 20.0);
    policy.network_mut().set_params(&scaled)?;
    let obs = DMatrix::from_fn(batch.len(), spec.obs_dim(), |i, j| batch[i].obs[j]);
    let mass: Vec<&DMatrix<f64>> = batch.iter().map(|r| &r.oracle.mass).collect();
    let bias: Vec<&DVector<f64>> = batch.iter().map(|r| &r.oracle.bias).collect();
    let terms = PenaltyTerms { mass: &mass, bias: &bias };
    let theta0 = policy.network().params();
    let mut probe = policy.clone();
    report.checks.push(fd_check(
        "l_phys_policy_params",
        &theta0,
        |p| {
            probe.network_mut().set_params(p).expect("length");
            let (value, g) = piper_penalty(&probe, &pinn, &obs, &terms).expect("penalty");
            (value, g.to_flat())
        },
        &mut rng,
    ));
    let coach = PhysicsCoach { pinn: &pinn, lambda: 1.0 };
    for (name, mode) in [("penalty_heads_mean", PenaltyAction::Mean), ("penalty_heads_sampled", PenaltyAction::Sampled)] {
        let mut probe = policy.clone();
        report.checks.push(fd_check(
            name,
            &theta0,
            |p| {
                probe.network_mut().set_params(p).expect("length");
                let heads = probe.heads(&obs).expect("heads");
                let (value, d_m, d_s) = crate::rl::penalty_head_cotangents(
                    &probe,
                    &heads,
                    &obs,
                    coach,
                    &terms,
                    mode,
                    &mut PiperRng::new(seed ^ 0x5eed),
                )
                .expect("penalty");
                (value, probe.backward(&heads, &d_m, &d_s).expect("backward").to_flat())
            },
            &mut rng,
        ));
    }

    // Energy residual with respect to (q̈̂, τ) away from the kink.
    let o = &records.iter().find(|r| r.oracle.qd.norm() > 0.1).unwrap_or(&records[0]).oracle;
    let qdd0 = o.qdd_obs.map(|x| x + 0.3);
    let x0: Vec<f64> = qdd0.iter().chain(o.tau_eff.iter()).copied().collect();
    report.checks.push(fd_check(
        "energy_residual",
        &x0,
        |x| {
            let (qdd, tau) = (v(&x[..n]), v(&x[n..]));
            let e = EnergyInputs {
                qd: &o.qd,
                mass: &o.mass,
                mass_rate: &o.mass_rate,
                gravity: &o.gravity,
                qdd_hat: &qdd,
                tau: &tau,
            };
            let (gq, gt) = energy_residual_grad(&e);
            (energy_residual(&e), gq.iter().chain(gt.iter()).copied().collect())
        },
        &mut rng,
    ));

    let w = ConstraintWeights::default();
    let goal = Vector2::new(0.4, -0.2);
    report.checks.push(fd_check(
        "reach_loss",
        &[0.3, -1.2, 0.7, 0.1, 0.5],
        |x| {
            let (r, ee) = (v(&x[..3]), Vector2::new(x[3], x[4]));
            let (gr, ge) = reach_loss_grad(&r, &ee, &goal, &w);
            (reach_loss(&r, &ee, &goal, &w), gr.iter().chain(ge.iter()).copied().collect())
        },
        &mut rng,
    ));
    report.checks.push(fd_check(
        "push_loss",
        &[0.8, 0.3, 0.6],
        |x| {
            let window = WorkWindow {
                friction_work: x[0],
                kinetic_start: 0.0,
                kinetic_end: x[1],
                input_work: x[2],
            };
            (push_loss(0.0, &window, 0.1), push_loss_grad(&window, 0.1).to_vec())
        },
        &mut rng,
    ));
    report.checks.push(fd_check(
        "slide_loss",
        &[0.4, -0.1, 0.2, 0.05],
        |x| {
            let (dv, j) = (Vector2::new(x[0], x[1]), Vector2::new(x[2], x[3]));
            let (gd, gj) = slide_loss_grad(0.3, &dv, &j, 0.1);
            (slide_loss(0.0, 0.3, &dv, &j, 0.1), vec![gd.x, gd.y, gj.x, gj.y])
        },
        &mut rng,
    ));
    report.checks.push(fd_check(
        "grasp_loss",
        &[0.5, 1.0, 4.0],
        |x| {
            let g = GraspInputs::new(x[0], x[1], 0.8, x[2], 0.1);
            (grasp_loss(&g), grasp_loss_grad(&g).to_vec())
        },
        &mut rng,
    ));
    Ok(report)
}
