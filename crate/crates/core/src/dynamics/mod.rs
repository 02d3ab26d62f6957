//! Lagrangian rigid-body dynamics for planar revolute chains.
//!
//! Joint angles are relative: link `i` points along the cumulative angle
//! `q_0 + ... + q_i` measured from the world +x axis. The mass matrix comes
//! from a planar composite-rigid-body pass, the bias force from a planar
//! recursive Newton-Euler pass with zero joint acceleration, and the Coriolis
//! matrix from Christoffel symbols over a finite-difference `∂M/∂q`.
//!
//! Potential energy is measured from the world origin, so a gravity-free
//! chain has zero potential everywhere.

mod model;

pub use model::{ChainModel, Link, STANDARD_GRAVITY};

use nalgebra::{DMatrix, DVector, Matrix2xX, Vector2};
use thiserror::Error;

/// Central-difference step for `∂M/∂q` (rad).
pub const MASS_MATRIX_FD_STEP: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid chain model: {field}: {reason}")]
    InvalidModel { field: String, reason: String },
    #[error("model file line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("mass matrix is not positive definite (broken model invariant)")]
    NotPositiveDefinite,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
}

/// Generalized coordinates and velocities of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: DVector<f64>,
    pub qd: DVector<f64>,
}

impl JointState {
    pub fn new(q: DVector<f64>, qd: DVector<f64>) -> Result<Self, DynamicsError> {
        check_dim("qd", q.len(), qd.len())?;
        if q.iter().chain(qd.iter()).any(|v| !v.is_finite()) {
            return Err(DynamicsError::InvalidArgument(
                "joint state must be finite".into(),
            ));
        }
        Ok(Self { q, qd })
    }

    pub fn at_rest(q: DVector<f64>) -> Self {
        let n = q.len();
        Self {
            q,
            qd: DVector::zeros(n),
        }
    }

    pub fn zeros(n: usize) -> Self {
        Self::at_rest(DVector::zeros(n))
    }

    pub fn is_finite(&self) -> bool {
        self.q.iter().chain(self.qd.iter()).all(|v| v.is_finite())
    }
}

/// External load acting on the chain during a Newton-Euler pass.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum ExternalForce {
    #[default]
    None,
    /// Generalized joint torques `τ_ext`.
    Generalized(DVector<f64>),
    /// Cartesian force applied at the end-effector point.
    EndEffector(Vector2<f64>),
}

impl ExternalForce {
    /// Equivalent generalized torque `τ_ext` at configuration `q`.
    pub fn generalized(&self, model: &ChainModel, q: &DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
        let n = model.n_links();
        match self {
            ExternalForce::None => Ok(DVector::zeros(n)),
            ExternalForce::Generalized(t) => {
                check_dim("tau_ext", n, t.len())?;
                Ok(t.clone())
            }
            ExternalForce::EndEffector(f) => Ok(ee_jacobian(model, q)?.transpose() * f),
        }
    }
}

/// Everything the dynamics oracle reports for one state.
#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsTerms {
    pub mass: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub gravity: DVector<f64>,
    pub coriolis: DMatrix<f64>,
    pub tau_ext: DVector<f64>,
}

impl DynamicsTerms {
    pub fn compute(
        model: &ChainModel,
        state: &JointState,
        f_ext: &ExternalForce,
    ) -> Result<Self, DynamicsError> {
        Ok(Self {
            mass: mass_matrix(model, &state.q)?,
            bias: bias_force(model, &state.q, &state.qd, f_ext)?,
            gravity: gravity_vector(model, &state.q)?,
            coriolis: coriolis_matrix(model, &state.q, &state.qd)?,
            tau_ext: f_ext.generalized(model, &state.q)?,
        })
    }
}

fn check_dim(what: &'static str, expected: usize, found: usize) -> Result<(), DynamicsError> {
    if expected == found {
        Ok(())
    } else {
        Err(DynamicsError::DimensionMismatch {
            what,
            expected,
            found,
        })
    }
}

#[inline]
fn cross(a: Vector2<f64>, b: Vector2<f64>) -> f64 {
    a.x * b.y - a.y * b.x
}

/// World-frame geometry of every link at one configuration.
struct Frames {
    /// Link axis unit vectors.
    axis: Vec<Vector2<f64>>,
    /// Proximal joint positions.
    joint: Vec<Vector2<f64>>,
    /// Center-of-mass positions.
    com: Vec<Vector2<f64>>,
    tip: Vector2<f64>,
}

fn frames(model: &ChainModel, q: &DVector<f64>) -> Frames {
    let n = model.n_links();
    let mut axis = Vec::with_capacity(n);
    let mut joint = Vec::with_capacity(n);
    let mut com = Vec::with_capacity(n);
    let mut theta = 0.0;
    let mut origin = Vector2::zeros();
    for (link, qi) in model.links().iter().zip(q.iter()) {
        theta += qi;
        let u = Vector2::new(theta.cos(), theta.sin());
        axis.push(u);
        joint.push(origin);
        com.push(origin + link.com_offset * u);
        origin += link.length * u;
    }
    Frames {
        axis,
        joint,
        com,
        tip: origin,
    }
}

/// Joint-space inertia matrix by the planar composite-rigid-body algorithm.
///
/// Walking from the tip to the base, each joint `j` accumulates the mass,
/// first mass moment, and inertia of the subtree it carries. The diagonal
/// entry is that composite inertia about joint `j`; off-diagonal entries
/// project the subtree's momentum about the ancestor joint `i`.
pub fn mass_matrix(model: &ChainModel, q: &DVector<f64>) -> Result<DMatrix<f64>, DynamicsError> {
    let n = model.n_links();
    check_dim("q", n, q.len())?;
    let f = frames(model, q);
    let mut m = DMatrix::zeros(n, n);
    let mut sub_mass = 0.0;
    let mut sub_moment = Vector2::zeros();
    // Inertia of the subtree about the world origin.
    let mut sub_inertia_origin = 0.0;
    for j in (0..n).rev() {
        let link = &model.links()[j];
        let c = f.com[j];
        sub_mass += link.mass;
        sub_moment += link.mass * c;
        sub_inertia_origin += link.inertia_com + link.mass * c.norm_squared();

        let p = f.joint[j];
        let about_joint =
            sub_inertia_origin - 2.0 * p.dot(&sub_moment) + sub_mass * p.norm_squared();
        m[(j, j)] = about_joint;
        let offset_moment = sub_moment - sub_mass * p;
        for i in 0..j {
            let v = about_joint + (p - f.joint[i]).dot(&offset_moment);
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    Ok(m)
}

/// Planar recursive Newton-Euler inverse dynamics.
///
/// Gravity enters as a fictitious base acceleration `-g`.
pub fn rnea(
    model: &ChainModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    qdd: &DVector<f64>,
    gravity: Vector2<f64>,
    f_ext: &ExternalForce,
) -> Result<DVector<f64>, DynamicsError> {
    let n = model.n_links();
    check_dim("q", n, q.len())?;
    check_dim("qd", n, qd.len())?;
    check_dim("qdd", n, qdd.len())?;
    let f = frames(model, q);

    let mut omega = 0.0;
    let mut alpha = 0.0;
    let mut origin_acc = -gravity;
    let mut com_acc = Vec::with_capacity(n);
    let mut ang_acc = Vec::with_capacity(n);
    for (i, link) in model.links().iter().enumerate() {
        omega += qd[i];
        alpha += qdd[i];
        let u = f.axis[i];
        let normal = Vector2::new(-u.y, u.x);
        let rel = alpha * normal - omega * omega * u;
        com_acc.push(origin_acc + link.com_offset * rel);
        ang_acc.push(alpha);
        origin_acc += link.length * rel;
    }

    let mut tau = DVector::zeros(n);
    let mut child_force = Vector2::zeros();
    let mut child_moment = 0.0;
    for i in (0..n).rev() {
        let link = &model.links()[i];
        let u = f.axis[i];
        let tip = link.length * u;
        let applied = match f_ext {
            ExternalForce::EndEffector(force) if i == n - 1 => *force,
            _ => Vector2::zeros(),
        };
        let inertial = link.mass * com_acc[i];
        let force = inertial + child_force - applied;
        let moment = link.inertia_com * ang_acc[i]
            + cross(link.com_offset * u, inertial)
            + child_moment
            + cross(tip, child_force)
            - cross(tip, applied);
        tau[i] = moment;
        child_force = force;
        child_moment = moment;
    }

    if let ExternalForce::Generalized(t) = f_ext {
        check_dim("tau_ext", n, t.len())?;
        tau -= t;
    }
    Ok(tau)
}

/// Generalized bias force `b = C q̇ + G − τ_ext` (RNEA with `q̈ = 0`).
pub fn bias_force(
    model: &ChainModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    f_ext: &ExternalForce,
) -> Result<DVector<f64>, DynamicsError> {
    let zero = DVector::zeros(model.n_links());
    rnea(model, q, qd, &zero, model.gravity(), f_ext)
}

pub fn gravity_vector(model: &ChainModel, q: &DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
    let zero = DVector::zeros(model.n_links());
    bias_force(model, q, &zero, &ExternalForce::None)
}

/// `τ = M(q) q̈ + b(q, q̇)`.
pub fn inverse_dynamics(
    model: &ChainModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    qdd: &DVector<f64>,
    f_ext: &ExternalForce,
) -> Result<DVector<f64>, DynamicsError> {
    rnea(model, q, qd, qdd, model.gravity(), f_ext)
}

/// Solves `M q̈ = τ − b` with a Cholesky factorization of `M`.
pub fn forward_dynamics(
    model: &ChainModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
    tau: &DVector<f64>,
    f_ext: &ExternalForce,
) -> Result<DVector<f64>, DynamicsError> {
    check_dim("tau", model.n_links(), tau.len())?;
    let m = mass_matrix(model, q)?;
    let b = bias_force(model, q, qd, f_ext)?;
    solve_spd(m, &(tau - b))
}

/// Solves `M x = rhs` for symmetric positive-definite `M`.
pub fn solve_spd(m: DMatrix<f64>, rhs: &DVector<f64>) -> Result<DVector<f64>, DynamicsError> {
    let chol = m.cholesky().ok_or(DynamicsError::NotPositiveDefinite)?;
    Ok(chol.solve(rhs))
}

/// `∂M/∂q_i` for every joint `i`, by central differences.
pub fn mass_matrix_partials(
    model: &ChainModel,
    q: &DVector<f64>,
) -> Result<Vec<DMatrix<f64>>, DynamicsError> {
    let n = model.n_links();
    check_dim("q", n, q.len())?;
    let h = MASS_MATRIX_FD_STEP;
    (0..n)
        .map(|i| {
            let mut plus = q.clone();
            let mut minus = q.clone();
            plus[i] += h;
            minus[i] -= h;
            Ok((mass_matrix(model, &plus)? - mass_matrix(model, &minus)?) / (2.0 * h))
        })
        .collect()
}

/// Coriolis matrix from Christoffel symbols of the first kind:
/// `C_kj = Σ_i c_ijk q̇_i`, `c_ijk = ½(∂M_kj/∂q_i + ∂M_ki/∂q_j − ∂M_ij/∂q_k)`.
pub fn coriolis_matrix(
    model: &ChainModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
) -> Result<DMatrix<f64>, DynamicsError> {
    let n = model.n_links();
    check_dim("qd", n, qd.len())?;
    let dm = mass_matrix_partials(model, q)?;
    let mut c = DMatrix::zeros(n, n);
    for k in 0..n {
        for j in 0..n {
            let mut sum = 0.0;
            for i in 0..n {
                let symbol = 0.5 * (dm[i][(k, j)] + dm[j][(k, i)] - dm[k][(i, j)]);
                sum += symbol * qd[i];
            }
            c[(k, j)] = sum;
        }
    }
    Ok(c)
}

/// `Ṁ = Σ_i (∂M/∂q_i) q̇_i` along the current velocity.
pub fn mass_matrix_time_derivative(
    model: &ChainModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
) -> Result<DMatrix<f64>, DynamicsError> {
    let n = model.n_links();
    check_dim("qd", n, qd.len())?;
    let dm = mass_matrix_partials(model, q)?;
    Ok(dm
        .iter()
        .zip(qd.iter())
        .fold(DMatrix::zeros(n, n), |acc, (d, v)| acc + d * *v))
}

/// Forward difference `(M_next − M_t) / dt` across one timestep.
pub fn mass_matrix_rate(
    m_t: &DMatrix<f64>,
    m_next: &DMatrix<f64>,
    dt: f64,
) -> Result<DMatrix<f64>, DynamicsError> {
    if !(dt > 0.0) {
        return Err(DynamicsError::InvalidArgument(format!("dt must be > 0, got {dt}")));
    }
    if m_t.shape() != m_next.shape() {
        return Err(DynamicsError::DimensionMismatch {
            what: "M_next",
            expected: m_t.nrows(),
            found: m_next.nrows(),
        });
    }
    Ok((m_next - m_t) / dt)
}

/// End-effector (chain tip) position.
pub fn forward_kinematics(model: &ChainModel, q: &DVector<f64>) -> Result<Vector2<f64>, DynamicsError> {
    check_dim("q", model.n_links(), q.len())?;
    Ok(frames(model, q).tip)
}

/// Center-of-mass position of every link.
pub fn com_positions(model: &ChainModel, q: &DVector<f64>) -> Result<Vec<Vector2<f64>>, DynamicsError> {
    check_dim("q", model.n_links(), q.len())?;
    Ok(frames(model, q).com)
}

/// Analytic 2×N end-effector Jacobian; rows are `∂x/∂q` and `∂y/∂q`.
pub fn ee_jacobian(model: &ChainModel, q: &DVector<f64>) -> Result<Matrix2xX<f64>, DynamicsError> {
    let n = model.n_links();
    check_dim("q", n, q.len())?;
    let f = frames(model, q);
    let mut jac = Matrix2xX::zeros(n);
    let mut tail = Vector2::zeros();
    for j in (0..n).rev() {
        tail += model.links()[j].length * f.axis[j];
        jac[(0, j)] = -tail.y;
        jac[(1, j)] = tail.x;
    }
    Ok(jac)
}

/// End-effector velocity `J(q) q̇`.
pub fn ee_velocity(
    model: &ChainModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
) -> Result<Vector2<f64>, DynamicsError> {
    check_dim("qd", model.n_links(), qd.len())?;
    Ok(ee_jacobian(model, q)? * qd)
}

pub fn kinetic_energy(
    model: &ChainModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
) -> Result<f64, DynamicsError> {
    check_dim("qd", model.n_links(), qd.len())?;
    let m = mass_matrix(model, q)?;
    Ok(0.5 * qd.dot(&(m * qd)))
}

/// `P(q) = Σ m_i (−g)·c_i`, zero at the world origin.
pub fn potential_energy(model: &ChainModel, q: &DVector<f64>) -> Result<f64, DynamicsError> {
    let g = model.gravity();
    Ok(com_positions(model, q)?
        .iter()
        .zip(model.links())
        .map(|(c, link)| -link.mass * g.dot(c))
        .sum())
}

/// Total mechanical energy `½ q̇ᵀ M q̇ + P(q)`.
pub fn total_energy(
    model: &ChainModel,
    q: &DVector<f64>,
    qd: &DVector<f64>,
) -> Result<f64, DynamicsError> {
    Ok(kinetic_energy(model, q, qd)? + potential_energy(model, q)?)
}
