//! URDF-style robot description: export from a morphology, parse back, and
//! re-emit byte-identically.
//!
//! Each leg is a serial ab/ad, hip, knee chain with actuators at the link
//! pivots. A four-link limb adds a tarsus joint that mimics the knee with
//! multiplier −1, holding the tarsus parallel to the femur. The foot is a
//! collision sphere on the distal link; contact treats its centre as a point.

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};

use crate::actuation::ActuatorParams;
use crate::error::{Error, Result};
use crate::morphology::{BodyMorphology, Leg};
use crate::multibody::JointKind;
use crate::world::RobotModel;

/// Sphere radius written for the foot collision element (m).
pub const FOOT_RADIUS: f64 = 0.01;

#[derive(Clone, Debug, PartialEq)]
pub struct Inertial {
    pub origin: [f64; 3],
    pub mass: f64,
    /// `ixx, ixy, ixz, iyy, iyz, izz` about the COM.
    pub inertia: [f64; 6],
}

#[derive(Clone, Debug, PartialEq)]
pub struct Collision {
    pub name: String,
    pub origin: [f64; 3],
    pub radius: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkDescription {
    pub name: String,
    pub inertial: Option<Inertial>,
    pub collision: Option<Collision>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointLimit {
    pub lower: f64,
    pub upper: f64,
    pub effort: f64,
    pub velocity: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mimic {
    pub joint: String,
    pub multiplier: f64,
    pub offset: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointDescription {
    pub name: String,
    /// `revolute` or `fixed`.
    pub kind: String,
    pub parent: String,
    pub child: String,
    pub origin: [f64; 3],
    pub axis: [f64; 3],
    pub limit: Option<JointLimit>,
    pub mimic: Option<Mimic>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobotDescription {
    pub name: String,
    pub links: Vec<LinkDescription>,
    pub joints: Vec<JointDescription>,
}

fn arr(v: &Vector3<f64>) -> [f64; 3] {
    [v.x, v.y, v.z]
}

fn inertia6(m: &Matrix3<f64>) -> [f64; 6] {
    [m[(0, 0)], m[(0, 1)], m[(0, 2)], m[(1, 1)], m[(1, 2)], m[(2, 2)]]
}

/// Shortest round-trip decimal, without a negative zero.
fn num(x: f64) -> String {
    if x == 0.0 {
        "0".into()
    } else {
        format!("{x}")
    }
}

fn triple(v: &[f64; 3]) -> String {
    format!("{} {} {}", num(v[0]), num(v[1]), num(v[2]))
}

const LINK_NAMES: [&str; 4] = ["trunnion", "femur", "tibia", "tarsus"];
const JOINT_NAMES: [&str; 4] = ["abad", "hip", "knee", "tarsus"];

impl RobotDescription {
    /// Description of the same rigid-body tree the simulator integrates.
    pub fn from_morphology(morph: &BodyMorphology, actuator: &ActuatorParams) -> Result<Self> {
        let model = RobotModel::new(morph, actuator)?;
        let bodies = model.multibody().bodies();
        let mut names = vec![String::new(); bodies.len()];
        names[0] = "trunk".into();
        let mut joint_names = vec![String::new(); bodies.len()];
        for leg in Leg::ALL {
            let b = model.limb_bodies(leg);
            let chain = [Some(b.trunnion), Some(b.femur), Some(b.tibia), b.tarsus];
            for (k, idx) in chain.iter().enumerate() {
                if let Some(i) = idx {
                    names[*i] = format!("{}_{}", leg.short_name(), LINK_NAMES[k]);
                    joint_names[*i] = format!("{}_{}", leg.short_name(), JOINT_NAMES[k]);
                }
            }
        }
        let foot_of = |i: usize| {
            Leg::ALL
                .iter()
                .find(|leg| model.limb_bodies(**leg).foot_body == i)
                .map(|leg| (*leg, model.limb_bodies(*leg).foot_point))
        };

        let mut links = Vec::with_capacity(bodies.len());
        let mut joints = Vec::new();
        for (i, body) in bodies.iter().enumerate() {
            let si = &body.inertia;
            links.push(LinkDescription {
                name: names[i].clone(),
                inertial: Some(Inertial {
                    origin: arr(&si.com),
                    mass: si.mass,
                    inertia: inertia6(&si.inertia_com),
                }),
                collision: foot_of(i).map(|(leg, p)| Collision {
                    name: format!("{}_foot", leg.short_name()),
                    origin: arr(&p),
                    radius: FOOT_RADIUS,
                }),
            });
            let (JointKind::Revolute { axis }, Some(parent)) = (&body.joint, body.parent) else {
                continue;
            };
            let mimic = (body.multiplier != 1.0).then(|| {
                let source = bodies
                    .iter()
                    .position(|b| {
                        b.dof == body.dof && b.multiplier == 1.0 && matches!(b.joint, JointKind::Revolute { .. })
                    })
                    .expect("mimic joints follow an actuated joint");
                Mimic {
                    joint: joint_names[source].clone(),
                    multiplier: body.multiplier,
                    offset: 0.0,
                }
            });
            joints.push(JointDescription {
                name: joint_names[i].clone(),
                kind: "revolute".into(),
                parent: names[parent].clone(),
                child: names[i].clone(),
                origin: arr(&body.tree.trans),
                axis: arr(axis),
                limit: Some(JointLimit {
                    lower: -std::f64::consts::PI,
                    upper: std::f64::consts::PI,
                    effort: actuator.max_output_torque(),
                    velocity: actuator.max_output_speed(),
                }),
                mimic,
            });
        }
        Ok(RobotDescription {
            name: "legsim_quadruped".into(),
            links,
            joints,
        })
    }

    pub fn movable_joints(&self) -> usize {
        self.joints
            .iter()
            .filter(|j| j.kind == "revolute" && j.mimic.is_none())
            .count()
    }

    pub fn link(&self, name: &str) -> Option<&LinkDescription> {
        self.links.iter().find(|l| l.name == name)
    }

    /// Position of the named collision centre with every joint at zero,
    /// in the root link frame.
    pub fn zero_pose_point(&self, collision: &str) -> Option<Vector3<f64>> {
        let link = self
            .links
            .iter()
            .find(|l| l.collision.as_ref().is_some_and(|c| c.name == collision))?;
        let mut p = Vector3::from(link.collision.as_ref()?.origin);
        let mut current = link.name.as_str();
        while let Some(j) = self.joints.iter().find(|j| j.child == current) {
            p += Vector3::from(j.origin);
            current = &j.parent;
        }
        Some(p)
    }

    pub fn to_xml(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "<?xml version=\"1.0\"?>");
        let _ = writeln!(s, "<robot name=\"{}\">", self.name);
        for l in &self.links {
            let _ = writeln!(s, "  <link name=\"{}\">", l.name);
            if let Some(i) = &l.inertial {
                let _ = writeln!(s, "    <inertial>");
                let _ = writeln!(s, "      <origin xyz=\"{}\" rpy=\"0 0 0\"/>", triple(&i.origin));
                let _ = writeln!(s, "      <mass value=\"{}\"/>", num(i.mass));
                let t = i.inertia.map(num);
                let _ = writeln!(
                    s,
                    "      <inertia ixx=\"{}\" ixy=\"{}\" ixz=\"{}\" iyy=\"{}\" iyz=\"{}\" izz=\"{}\"/>",
                    t[0], t[1], t[2], t[3], t[4], t[5]
                );
                let _ = writeln!(s, "    </inertial>");
            }
            if let Some(c) = &l.collision {
                let _ = writeln!(s, "    <collision name=\"{}\">", c.name);
                let _ = writeln!(s, "      <origin xyz=\"{}\" rpy=\"0 0 0\"/>", triple(&c.origin));
                let _ = writeln!(s, "      <geometry>");
                let _ = writeln!(s, "        <sphere radius=\"{}\"/>", num(c.radius));
                let _ = writeln!(s, "      </geometry>");
                let _ = writeln!(s, "    </collision>");
            }
            let _ = writeln!(s, "  </link>");
        }
        for j in &self.joints {
            let _ = writeln!(s, "  <joint name=\"{}\" type=\"{}\">", j.name, j.kind);
            let _ = writeln!(s, "    <parent link=\"{}\"/>", j.parent);
            let _ = writeln!(s, "    <child link=\"{}\"/>", j.child);
            let _ = writeln!(s, "    <origin xyz=\"{}\" rpy=\"0 0 0\"/>", triple(&j.origin));
            let _ = writeln!(s, "    <axis xyz=\"{}\"/>", triple(&j.axis));
            if let Some(l) = &j.limit {
                let _ = writeln!(
                    s,
                    "    <limit lower=\"{}\" upper=\"{}\" effort=\"{}\" velocity=\"{}\"/>",
                    num(l.lower),
                    num(l.upper),
                    num(l.effort),
                    num(l.velocity)
                );
            }
            if let Some(m) = &j.mimic {
                let _ = writeln!(
                    s,
                    "    <mimic joint=\"{}\" multiplier=\"{}\" offset=\"{}\"/>",
                    m.joint,
                    num(m.multiplier),
                    num(m.offset)
                );
            }
            let _ = writeln!(s, "  </joint>");
        }
        s.push_str("</robot>\n");
        s
    }
}

pub fn export_robot_description(morph: &BodyMorphology, actuator: &ActuatorParams) -> Result<String> {
    Ok(RobotDescription::from_morphology(morph, actuator)?.to_xml())
}

fn parse_err(msg: impl Into<String>) -> Error {
    Error::Description(msg.into())
}

fn attr<'a>(node: roxmltree::Node<'a, '_>, name: &str) -> Result<&'a str> {
    node.attribute(name)
        .ok_or_else(|| parse_err(format!("<{}> is missing attribute '{name}'", node.tag_name().name())))
}

fn float(node: roxmltree::Node<'_, '_>, name: &str) -> Result<f64> {
    let raw = attr(node, name)?;
    raw.trim().parse::<f64>().ok().filter(|v| v.is_finite()).ok_or_else(|| {
        parse_err(format!(
            "<{}> {name}=\"{raw}\" is not a finite number",
            node.tag_name().name()
        ))
    })
}

fn floats3(node: roxmltree::Node<'_, '_>, name: &str) -> Result<[f64; 3]> {
    let raw = attr(node, name)?;
    let parts: Vec<f64> = raw
        .split_whitespace()
        .map(|p| p.parse::<f64>().ok().filter(|v| v.is_finite()))
        .collect::<Option<_>>()
        .ok_or_else(|| parse_err(format!("{name}=\"{raw}\" is not three finite numbers")))?;
    <[f64; 3]>::try_from(parts).map_err(|_| parse_err(format!("{name}=\"{raw}\" is not three numbers")))
}

fn child<'a, 'i>(node: roxmltree::Node<'a, 'i>, tag: &str) -> Option<roxmltree::Node<'a, 'i>> {
    node.children().find(|c| c.has_tag_name(tag))
}

fn require<'a, 'i>(node: roxmltree::Node<'a, 'i>, tag: &str) -> Result<roxmltree::Node<'a, 'i>> {
    child(node, tag).ok_or_else(|| parse_err(format!("<{}> has no <{tag}>", node.tag_name().name())))
}

fn origin(node: roxmltree::Node<'_, '_>) -> Result<[f64; 3]> {
    match child(node, "origin") {
        None => Ok([0.0; 3]),
        Some(o) => {
            if let Some(rpy) = o.attribute("rpy") {
                if rpy
                    .split_whitespace()
                    .any(|p| !p.parse::<f64>().is_ok_and(|v| v == 0.0))
                {
                    return Err(parse_err(format!("rotated origins (rpy=\"{rpy}\") are not supported")));
                }
            }
            if o.attribute("xyz").is_some() {
                floats3(o, "xyz")
            } else {
                Ok([0.0; 3])
            }
        }
    }
}

/// Parse a description; checks that joints form a tree over the declared
/// links and that mimic targets exist.
pub fn parse_robot_description(xml: &str) -> Result<RobotDescription> {
    let doc = roxmltree::Document::parse(xml).map_err(|e| parse_err(e.to_string()))?;
    let robot = doc.root_element();
    if !robot.has_tag_name("robot") {
        return Err(parse_err(format!(
            "root element is <{}>, expected <robot>",
            robot.tag_name().name()
        )));
    }
    let name = attr(robot, "name")?.to_string();
    let mut links = Vec::new();
    let mut joints = Vec::new();
    for node in robot.children().filter(|n| n.is_element()) {
        match node.tag_name().name() {
            "link" => {
                let inertial = match child(node, "inertial") {
                    None => None,
                    Some(i) => {
                        let t = require(i, "inertia")?;
                        Some(Inertial {
                            origin: origin(i)?,
                            mass: float(require(i, "mass")?, "value")?,
                            inertia: [
                                float(t, "ixx")?,
                                float(t, "ixy")?,
                                float(t, "ixz")?,
                                float(t, "iyy")?,
                                float(t, "iyz")?,
                                float(t, "izz")?,
                            ],
                        })
                    }
                };
                let collision = match child(node, "collision") {
                    None => None,
                    Some(c) => Some(Collision {
                        name: attr(c, "name")?.to_string(),
                        origin: origin(c)?,
                        radius: float(require(require(c, "geometry")?, "sphere")?, "radius")?,
                    }),
                };
                links.push(LinkDescription {
                    name: attr(node, "name")?.to_string(),
                    inertial,
                    collision,
                });
            }
            "joint" => {
                let kind = attr(node, "type")?.to_string();
                if kind != "revolute" && kind != "fixed" {
                    return Err(parse_err(format!("joint type '{kind}' is not supported")));
                }
                let limit = match child(node, "limit") {
                    None => None,
                    Some(l) => Some(JointLimit {
                        lower: float(l, "lower")?,
                        upper: float(l, "upper")?,
                        effort: float(l, "effort")?,
                        velocity: float(l, "velocity")?,
                    }),
                };
                let mimic = match child(node, "mimic") {
                    None => None,
                    Some(m) => Some(Mimic {
                        joint: attr(m, "joint")?.to_string(),
                        multiplier: m.attribute("multiplier").map_or(Ok(1.0), |_| float(m, "multiplier"))?,
                        offset: m.attribute("offset").map_or(Ok(0.0), |_| float(m, "offset"))?,
                    }),
                };
                joints.push(JointDescription {
                    name: attr(node, "name")?.to_string(),
                    kind,
                    parent: attr(require(node, "parent")?, "link")?.to_string(),
                    child: attr(require(node, "child")?, "link")?.to_string(),
                    origin: origin(node)?,
                    axis: child(node, "axis").map_or(Ok([1.0, 0.0, 0.0]), |a| floats3(a, "xyz"))?,
                    limit,
                    mimic,
                });
            }
            other => return Err(parse_err(format!("unexpected element <{other}>"))),
        }
    }
    let desc = RobotDescription { name, links, joints };
    desc.check_tree()?;
    Ok(desc)
}

impl RobotDescription {
    fn check_tree(&self) -> Result<()> {
        let has_link = |n: &str| self.links.iter().any(|l| l.name == n);
        for (i, l) in self.links.iter().enumerate() {
            if self.links[..i].iter().any(|o| o.name == l.name) {
                return Err(parse_err(format!("duplicate link '{}'", l.name)));
            }
        }
        for (i, j) in self.joints.iter().enumerate() {
            if self.joints[..i].iter().any(|o| o.name == j.name) {
                return Err(parse_err(format!("duplicate joint '{}'", j.name)));
            }
            for end in [&j.parent, &j.child] {
                if !has_link(end) {
                    return Err(parse_err(format!("joint '{}' references unknown link '{end}'", j.name)));
                }
            }
            if self.joints[..i].iter().any(|o| o.child == j.child) {
                return Err(parse_err(format!("link '{}' has more than one parent", j.child)));
            }
            if let Some(m) = &j.mimic {
                if !self.joints.iter().any(|o| o.name == m.joint) {
                    return Err(parse_err(format!(
                        "joint '{}' mimics unknown joint '{}'",
                        j.name, m.joint
                    )));
                }
            }
        }
        let roots: Vec<&str> = self
            .links
            .iter()
            .filter(|l| !self.joints.iter().any(|j| j.child == l.name))
            .map(|l| l.name.as_str())
            .collect();
        if roots.len() != 1 {
            return Err(parse_err(format!("expected one root link, found {roots:?}")));
        }
        // Every link reaches the root without revisiting a link.
        for l in &self.links {
            let mut current = l.name.as_str();
            for _ in 0..=self.links.len() {
                match self.joints.iter().find(|j| j.child == current) {
                    Some(j) => current = &j.parent,
                    None => break,
                }
            }
            if current != roots[0] {
                return Err(parse_err(format!("link '{}' is part of a cycle", l.name)));
            }
        }
        Ok(())
    }
}
