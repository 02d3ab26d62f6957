//! Kinematic and inertial description of a planar revolute chain.

use nalgebra::{DVector, Vector2};
use serde::{Deserialize, Serialize};

use super::DynamicsError;

/// Standard gravity used by vertical-plane presets.
pub const STANDARD_GRAVITY: f64 = 9.81;

/// One rigid link of a planar serial chain.
///
/// The link rotates about its proximal joint; its center of mass sits
/// `com_offset` metres along the link axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Link {
    pub length: f64,
    pub mass: f64,
    pub com_offset: f64,
    /// Rotational inertia about the center of mass (kg·m²).
    pub inertia_com: f64,
}

impl Link {
    /// Uniform slender rod: COM at mid-length, inertia `m l² / 12`.
    pub fn uniform_rod(length: f64, mass: f64) -> Self {
        Self {
            length,
            mass,
            com_offset: 0.5 * length,
            inertia_com: mass * length * length / 12.0,
        }
    }
}

/// Immutable N-link planar chain with revolute joints.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainModel {
    links: Vec<Link>,
    gravity: Vector2<f64>,
    torque_limit: Vec<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct LinkFile {
    length: f64,
    mass: f64,
    com_offset: Option<f64>,
    inertia_com: Option<f64>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ChainFile {
    links: Vec<LinkFile>,
    gravity: [f64; 2],
    torque_limit: Vec<f64>,
}

impl ChainModel {
    pub fn new(
        links: Vec<Link>,
        gravity: Vector2<f64>,
        torque_limit: Vec<f64>,
    ) -> Result<Self, DynamicsError> {
        if links.is_empty() {
            return Err(DynamicsError::InvalidModel {
                field: "links".into(),
                reason: "at least one link is required".into(),
            });
        }
        for (i, link) in links.iter().enumerate() {
            let bad = |field: &str, reason: &str| DynamicsError::InvalidModel {
                field: format!("links[{i}].{field}"),
                reason: reason.into(),
            };
            if !(link.length.is_finite() && link.length > 0.0) {
                return Err(bad("length", "must be finite and > 0"));
            }
            if !(link.mass.is_finite() && link.mass > 0.0) {
                return Err(bad("mass", "must be finite and > 0"));
            }
            if !(link.com_offset.is_finite()
                && link.com_offset >= 0.0
                && link.com_offset <= link.length)
            {
                return Err(bad("com_offset", "must lie in [0, length]"));
            }
            if !(link.inertia_com.is_finite() && link.inertia_com >= 0.0) {
                return Err(bad("inertia_com", "must be finite and >= 0"));
            }
        }
        if !(gravity.x.is_finite() && gravity.y.is_finite()) {
            return Err(DynamicsError::InvalidModel {
                field: "gravity".into(),
                reason: "must be finite".into(),
            });
        }
        if torque_limit.len() != links.len() {
            return Err(DynamicsError::InvalidModel {
                field: "torque_limit".into(),
                reason: format!(
                    "expected {} entries (one per link), found {}",
                    links.len(),
                    torque_limit.len()
                ),
            });
        }
        for (i, t) in torque_limit.iter().enumerate() {
            if !(t.is_finite() && *t > 0.0) {
                return Err(DynamicsError::InvalidModel {
                    field: format!("torque_limit[{i}]"),
                    reason: "must be finite and > 0".into(),
                });
            }
        }
        Ok(Self {
            links,
            gravity,
            torque_limit,
        })
    }

    /// Chain of identical uniform rods.
    pub fn uniform(
        n_links: usize,
        length: f64,
        mass: f64,
        gravity: Vector2<f64>,
        torque_limit: f64,
    ) -> Result<Self, DynamicsError> {
        Self::new(
            vec![Link::uniform_rod(length, mass); n_links],
            gravity,
            vec![torque_limit; n_links],
        )
    }

    /// Parses a model description document.
    ///
    /// `com_offset` defaults to mid-length and `inertia_com` to the uniform
    /// rod value `m l² / 12` when omitted.
    pub fn from_json(text: &str) -> Result<Self, DynamicsError> {
        let file: ChainFile = serde_json::from_str(text).map_err(|e| DynamicsError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        let links = file
            .links
            .into_iter()
            .map(|l| Link {
                length: l.length,
                mass: l.mass,
                com_offset: l.com_offset.unwrap_or(0.5 * l.length),
                inertia_com: l.inertia_com.unwrap_or(l.mass * l.length * l.length / 12.0),
            })
            .collect();
        Self::new(
            links,
            Vector2::new(file.gravity[0], file.gravity[1]),
            file.torque_limit,
        )
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("chain model serializes")
    }

    pub fn n_links(&self) -> usize {
        self.links.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn gravity(&self) -> Vector2<f64> {
        self.gravity
    }

    pub fn torque_limit(&self) -> &[f64] {
        &self.torque_limit
    }

    pub fn torque_limit_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.torque_limit)
    }

    /// Sum of link lengths: radius of the reachable disk.
    pub fn reach(&self) -> f64 {
        self.links.iter().map(|l| l.length).sum()
    }

    pub fn total_mass(&self) -> f64 {
        self.links.iter().map(|l| l.mass).sum()
    }

    /// Same chain with gravity switched off.
    pub fn without_gravity(&self) -> Self {
        Self {
            gravity: Vector2::zeros(),
            ..self.clone()
        }
    }

    /// Clamps each joint torque into `[-limit, limit]`.
    pub fn clip_torque(&self, tau: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            tau.len(),
            tau.iter()
                .zip(&self.torque_limit)
                .map(|(t, lim)| t.clamp(-lim, *lim)),
        )
    }
}

impl<'de> Deserialize<'de> for ChainModel {
    fn deserialize<D>(deserializer: D) -> Result<Self, D::Error>
    where
        D: serde::Deserializer<'de>,
    {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            links: Vec<Link>,
            gravity: Vector2<f64>,
            torque_limit: Vec<f64>,
        }
        let raw = Raw::deserialize(deserializer)?;
        ChainModel::new(raw.links, raw.gravity, raw.torque_limit).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_model_file_with_defaults() {
        let text = r#"{
            "links": [
                {"length": 1.0, "mass": 2.0},
                {"length": 0.5, "mass": 1.0, "com_offset": 0.1, "inertia_com": 0.01}
            ],
            "gravity": [0.0, -9.81],
            "torque_limit": [10.0, 5.0]
        }"#;
        let model = ChainModel::from_json(text).unwrap();
        assert_eq!(model.n_links(), 2);
        assert_eq!(model.links()[0].com_offset, 0.5);
        assert!((model.links()[0].inertia_com - 2.0 / 12.0).abs() < 1e-15);
        assert_eq!(model.links()[1].com_offset, 0.1);
        assert_eq!(model.reach(), 1.5);
    }

    #[test]
    fn rejects_invariant_violations_with_field_path() {
        let text = r#"{
            "links": [{"length": 1.0, "mass": 1.0}, {"length": 1.0, "mass": -1.0}],
            "gravity": [0.0, 0.0],
            "torque_limit": [1.0, 1.0]
        }"#;
        let err = ChainModel::from_json(text).unwrap_err().to_string();
        assert!(err.contains("links[1].mass"), "{err}");

        let text = r#"{
            "links": [{"length": 1.0, "mass": 1.0, "com_offset": 2.0}],
            "gravity": [0.0, 0.0],
            "torque_limit": [1.0]
        }"#;
        let err = ChainModel::from_json(text).unwrap_err().to_string();
        assert!(err.contains("links[0].com_offset"), "{err}");

        let text = r#"{"links": [], "gravity": [0.0, 0.0], "torque_limit": []}"#;
        assert!(ChainModel::from_json(text).is_err());
    }

    #[test]
    fn syntax_errors_report_line() {
        let text = "{\n  \"links\": [\n    {\"length\": 1.0, \"mass\": }\n  ]\n}";
        match ChainModel::from_json(text).unwrap_err() {
            DynamicsError::Parse { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn unknown_fields_rejected() {
        let text = r#"{"links": [{"length": 1.0, "mass": 1.0, "colour": 3}],
                       "gravity": [0.0, 0.0], "torque_limit": [1.0]}"#;
        let err = ChainModel::from_json(text).unwrap_err().to_string();
        assert!(err.contains("colour"), "{err}");
    }

    #[test]
    fn serde_round_trip_revalidates() {
        let model = ChainModel::uniform(3, 0.4, 0.7, Vector2::new(0.0, -9.81), 4.0).unwrap();
        let back: ChainModel = serde_json::from_str(&model.to_json()).unwrap();
        assert_eq!(back, model);
        let bad = r#"{"links":[{"length":1.0,"mass":0.0,"com_offset":0.5,"inertia_com":0.0}],
                      "gravity":[0.0,0.0],"torque_limit":[1.0]}"#;
        assert!(serde_json::from_str::<ChainModel>(bad).is_err());
    }
}
