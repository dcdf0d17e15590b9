//! Procedural synthetic avian template.
//!
//! Builds a closed-ish multi-part bird mesh (body, head, beak, tail, wings,
//! legs, feet) with a 13-joint skeleton, smooth skinning blends, 18 named
//! keypoints, exact sagittal symmetry pairs and beak/tail part groups, so
//! the whole pipeline can run without any licensed mesh asset. The bird
//! faces +z, up is +y, x is lateral; the sagittal plane is x = 0 and all
//! mirrored vertices are constructed by exact negation of x.

use super::{Keypoint, PartGroup, TemplateModel, V3};
use crate::error::Result;

pub const JOINT_NAMES: [&str; 13] = [
    "root", "spine", "neck", "head", "beak", "tail1", "tail2", "leg_l", "foot_l", "leg_r",
    "foot_r", "wing_l", "wing_r",
];

pub const J_ROOT: usize = 0;
pub const J_SPINE: usize = 1;
pub const J_NECK: usize = 2;
pub const J_HEAD: usize = 3;
pub const J_BEAK: usize = 4;
pub const J_TAIL1: usize = 5;
pub const J_TAIL2: usize = 6;
pub const J_LEG_L: usize = 7;
pub const J_FOOT_L: usize = 8;
pub const J_LEG_R: usize = 9;
pub const J_FOOT_R: usize = 10;
pub const J_WING_L: usize = 11;
pub const J_WING_R: usize = 12;

/// The 18 keypoint names, midline first, then lateral pairs.
pub const KEYPOINT_NAMES: [&str; 18] = [
    "beak_tip",
    "beak_base",
    "crown",
    "forehead",
    "nape",
    "throat",
    "breast",
    "belly",
    "back",
    "tail_tip",
    "left_eye",
    "right_eye",
    "left_wing",
    "right_wing",
    "left_leg",
    "right_leg",
    "left_foot",
    "right_foot",
];

#[derive(Debug, Clone)]
pub struct SyntheticConfig {
    /// Mesh density knob; 1 gives ~175 vertices, 2 ~310, 7 ~2000.
    pub resolution: usize,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig { resolution: 2 }
    }
}

struct Builder {
    verts: Vec<V3>,
    faces: Vec<[usize; 3]>,
    mirror: Vec<usize>,
    skin: Vec<Vec<(usize, f64)>>,
    rigidity: Vec<f64>,
}

impl Builder {
    fn new() -> Self {
        Builder {
            verts: Vec::new(),
            faces: Vec::new(),
            mirror: Vec::new(),
            skin: Vec::new(),
            rigidity: Vec::new(),
        }
    }

    fn push(&mut self, p: V3, skin: Vec<(usize, f64)>, rigid: f64) -> usize {
        let id = self.verts.len();
        self.verts.push(p);
        self.mirror.push(id); // self-paired until linked
        self.skin.push(skin);
        self.rigidity.push(rigid);
        id
    }

    fn link_mirror(&mut self, a: usize, b: usize) {
        self.mirror[a] = b;
        self.mirror[b] = a;
    }

    /// Tube around the sagittal plane. `rings` are (center, rx, ry) with
    /// center.x == 0; ring plane is spanned by x and `up`. Segment s pairs
    /// with S-s across x = 0.
    #[allow(clippy::too_many_arguments)]
    fn midline_tube(
        &mut self,
        rings: &[(V3, f64, f64)],
        segments: usize,
        axis_dir: V3,
        up: V3,
        cap_start: Option<V3>,
        cap_end: Option<V3>,
        skin_rule: &dyn Fn(V3) -> Vec<(usize, f64)>,
        rigid: f64,
    ) -> Vec<usize> {
        assert!(segments >= 4 && segments % 2 == 0);
        let _ = axis_dir;
        let half = segments / 2;
        let mut ring_ids: Vec<Vec<usize>> = Vec::with_capacity(rings.len());
        for &(c, rx, ry) in rings {
            let mut ids = vec![0usize; segments];
            for s in 0..=half {
                let psi = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
                let x = if s == 0 || s == half { 0.0 } else { rx * psi.sin() };
                let p = c + V3::new(x, 0.0, 0.0) + ry * psi.cos() * up;
                ids[s] = self.push(p, skin_rule(p), rigid);
            }
            for s in half + 1..segments {
                let twin = ids[segments - s];
                let p = self.verts[twin];
                let q = V3::new(-p.x, p.y, p.z);
                let id = self.push(q, skin_rule(q), rigid);
                ids[s] = id;
                self.link_mirror(id, twin);
            }
            ring_ids.push(ids);
        }
        self.stitch_rings(&ring_ids);
        let mut all: Vec<usize> = ring_ids.iter().flatten().copied().collect();
        if let Some(p) = cap_start {
            let id = self.push(p, skin_rule(p), rigid);
            self.cap(id, &ring_ids[0], true);
            all.push(id);
        }
        if let Some(p) = cap_end {
            let id = self.push(p, skin_rule(p), rigid);
            self.cap(id, ring_ids.last().unwrap(), false);
            all.push(id);
        }
        all
    }

    /// One lateral tube (x != 0 everywhere), later mirrored wholesale.
    #[allow(clippy::too_many_arguments)]
    fn lateral_tube(
        &mut self,
        rings: &[(V3, f64, f64)],
        segments: usize,
        up: V3,
        lateral: V3,
        cap_start: Option<V3>,
        cap_end: Option<V3>,
        skin_rule: &dyn Fn(V3) -> Vec<(usize, f64)>,
        rigid: f64,
    ) -> Vec<usize> {
        assert!(segments >= 3);
        let mut ring_ids: Vec<Vec<usize>> = Vec::with_capacity(rings.len());
        for &(c, rx, ry) in rings {
            let mut ids = Vec::with_capacity(segments);
            for s in 0..segments {
                let psi = 2.0 * std::f64::consts::PI * s as f64 / segments as f64;
                let p = c + rx * psi.sin() * lateral + ry * psi.cos() * up;
                ids.push(self.push(p, skin_rule(p), rigid));
            }
            ring_ids.push(ids);
        }
        self.stitch_rings(&ring_ids);
        let mut all: Vec<usize> = ring_ids.iter().flatten().copied().collect();
        if let Some(p) = cap_start {
            let id = self.push(p, skin_rule(p), rigid);
            self.cap(id, &ring_ids[0], true);
            all.push(id);
        }
        if let Some(p) = cap_end {
            let id = self.push(p, skin_rule(p), rigid);
            self.cap(id, ring_ids.last().unwrap(), false);
            all.push(id);
        }
        all
    }

    /// Mirror a finished lateral part across x = 0; `joint_map` swaps
    /// left joints for right ones in the skinning rows.
    fn mirror_part(&mut self, part: &[usize], joint_map: &[(usize, usize)]) -> Vec<usize> {
        let mut map = std::collections::HashMap::new();
        let mut out = Vec::with_capacity(part.len());
        for &i in part {
            let p = self.verts[i];
            let skin = self.skin[i]
                .iter()
                .map(|&(j, w)| {
                    let j2 = joint_map
                        .iter()
                        .find_map(|&(a, b)| {
                            if a == j {
                                Some(b)
                            } else if b == j {
                                Some(a)
                            } else {
                                None
                            }
                        })
                        .unwrap_or(j);
                    (j2, w)
                })
                .collect();
            let id = self.push(V3::new(-p.x, p.y, p.z), skin, self.rigidity[i]);
            self.link_mirror(id, i);
            map.insert(i, id);
            out.push(id);
        }
        let part_set: std::collections::HashSet<usize> = part.iter().copied().collect();
        let mirrored_faces: Vec<[usize; 3]> = self
            .faces
            .iter()
            .filter(|f| f.iter().all(|v| part_set.contains(v)))
            .map(|f| [map[&f[0]], map[&f[1]], map[&f[2]]])
            .collect();
        self.faces.extend(mirrored_faces);
        out
    }

    fn stitch_rings(&mut self, ring_ids: &[Vec<usize>]) {
        for w in ring_ids.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            let s = a.len();
            for i in 0..s {
                let j = (i + 1) % s;
                self.faces.push([a[i], a[j], b[j]]);
                self.faces.push([a[i], b[j], b[i]]);
            }
        }
    }

    fn cap(&mut self, pole: usize, ring: &[usize], flip: bool) {
        let s = ring.len();
        for i in 0..s {
            let j = (i + 1) % s;
            if flip {
                self.faces.push([pole, ring[j], ring[i]]);
            } else {
                self.faces.push([pole, ring[i], ring[j]]);
            }
        }
    }

    fn nearest(&self, ids: &[usize], target: V3) -> usize {
        *ids.iter()
            .min_by(|&&a, &&b| {
                (self.verts[a] - target)
                    .norm()
                    .partial_cmp(&(self.verts[b] - target).norm())
                    .unwrap()
            })
            .unwrap()
    }
}

fn clamp01(t: f64) -> f64 {
    t.clamp(0.0, 1.0)
}

/// Generate the synthetic template.
pub fn synthetic_bird(cfg: &SyntheticConfig) -> Result<TemplateModel> {
    let res = cfg.resolution.max(1);
    let joints = vec![
        V3::new(0.0, 0.0, -0.25),    // root
        V3::new(0.0, 0.05, 0.45),    // spine
        V3::new(0.0, 0.28, 0.86),    // neck
        V3::new(0.0, 0.35, 1.10),    // head
        V3::new(0.0, 0.33, 1.28),    // beak
        V3::new(0.0, 0.06, -0.80),   // tail1
        V3::new(0.0, 0.10, -1.15),   // tail2
        V3::new(-0.15, -0.40, -0.06), // leg_l
        V3::new(-0.155, -0.80, 0.0), // foot_l
        V3::new(0.15, -0.40, -0.06), // leg_r
        V3::new(0.155, -0.80, 0.0),  // foot_r
        V3::new(-0.42, 0.14, 0.05),  // wing_l
        V3::new(0.42, 0.14, 0.05),   // wing_r
    ];
    let parent = vec![
        None,
        Some(J_ROOT),
        Some(J_SPINE),
        Some(J_NECK),
        Some(J_HEAD),
        Some(J_ROOT),
        Some(J_TAIL1),
        Some(J_ROOT),
        Some(J_LEG_L),
        Some(J_ROOT),
        Some(J_LEG_R),
        Some(J_SPINE),
        Some(J_SPINE),
    ];

    let mut b = Builder::new();
    let y_up = V3::new(0.0, 1.0, 0.0);
    let z_fwd = V3::new(0.0, 0.0, 1.0);
    let x_lat = V3::new(1.0, 0.0, 0.0);

    // Body: bulged tube along z.
    let body_rings = 3 + 2 * res;
    let body_segs = 6 + 2 * res;
    let rings: Vec<(V3, f64, f64)> = (0..body_rings)
        .map(|r| {
            let t = r as f64 / (body_rings - 1) as f64;
            let z = -0.85 + 1.70 * t;
            let profile = 0.45 + 0.55 * (std::f64::consts::PI * t).sin();
            (V3::new(0.0, 0.02, z), 0.38 * profile, 0.45 * profile)
        })
        .collect();
    let body_skin = |p: V3| {
        let t = clamp01((p.z + 0.45) / 0.95);
        vec![(J_ROOT, 1.0 - t), (J_SPINE, t)]
    };
    let body = b.midline_tube(
        &rings,
        body_segs,
        z_fwd,
        y_up,
        Some(V3::new(0.0, 0.02, -0.97)),
        Some(V3::new(0.0, 0.02, 0.97)),
        &body_skin,
        1.0,
    );

    // Head: sphere-ish tube along z.
    let head_rings = 2 + res;
    let head_segs = 4 + 2 * res;
    let rings: Vec<(V3, f64, f64)> = (0..head_rings)
        .map(|r| {
            let t = r as f64 / (head_rings - 1) as f64;
            let u = 2.0 * t - 1.0;
            let radius = 0.27 * (1.0 - 0.72 * u * u).sqrt();
            (V3::new(0.0, 0.35, 0.85 + 0.40 * t), radius, radius)
        })
        .collect();
    let head_skin = |p: V3| {
        let t = clamp01((p.z - 0.88) / 0.30);
        vec![(J_NECK, 1.0 - t), (J_HEAD, t)]
    };
    let head = b.midline_tube(
        &rings,
        head_segs,
        z_fwd,
        y_up,
        Some(V3::new(0.0, 0.35, 0.80)),
        Some(V3::new(0.0, 0.35, 1.30)),
        &head_skin,
        1.0,
    );

    // Beak: cone along z.
    let beak_rings = 1 + res;
    let beak_segs = 4 + 2 * (res - 1).min(3);
    let rings: Vec<(V3, f64, f64)> = (0..beak_rings)
        .map(|r| {
            let t = r as f64 / beak_rings as f64;
            let radius = 0.085 * (1.0 - 0.8 * t);
            (
                V3::new(0.0, 0.33 - 0.02 * t, 1.28 + 0.30 * t),
                radius,
                radius,
            )
        })
        .collect();
    let beak_skin = |p: V3| {
        let t = clamp01((p.z - 1.25) / 0.12);
        vec![(J_HEAD, 1.0 - t), (J_BEAK, t)]
    };
    let beak = b.midline_tube(
        &rings,
        beak_segs,
        z_fwd,
        y_up,
        None,
        Some(V3::new(0.0, 0.30, 1.62)),
        &beak_skin,
        1.0,
    );

    // Tail: flat tapered tube along -z.
    let tail_rings = 2 + res;
    let tail_segs = 6;
    let rings: Vec<(V3, f64, f64)> = (0..tail_rings)
        .map(|r| {
            let t = r as f64 / (tail_rings - 1) as f64;
            (
                V3::new(0.0, 0.06 + 0.08 * t, -0.80 - 0.62 * t),
                0.15 - 0.05 * t,
                0.045 - 0.01 * t,
            )
        })
        .collect();
    let tail_skin = |p: V3| {
        let t = clamp01((-p.z - 0.80) / 0.55);
        vec![(J_TAIL1, 1.0 - t), (J_TAIL2, t)]
    };
    let tail = b.midline_tube(
        &rings,
        tail_segs,
        z_fwd,
        y_up,
        Some(V3::new(0.0, 0.05, -0.76)),
        Some(V3::new(0.0, 0.15, -1.50)),
        &tail_skin,
        1.0,
    );

    // Left wing: flattened ellipsoid along z at the flank.
    let wing_rings = 2 + res;
    let wing_segs = 6;
    let rings: Vec<(V3, f64, f64)> = (0..wing_rings)
        .map(|r| {
            let t = r as f64 / (wing_rings - 1) as f64;
            let u = 2.0 * t - 1.0;
            let profile = (1.0 - 0.75 * u * u).sqrt();
            (
                V3::new(-0.42, 0.14 + 0.02 * t, 0.38 - 0.93 * t),
                0.055 * profile,
                0.16 * profile,
            )
        })
        .collect();
    let wing_skin = |_p: V3| vec![(J_WING_L, 1.0)];
    let wing_l = b.lateral_tube(
        &rings,
        wing_segs,
        y_up,
        x_lat,
        Some(V3::new(-0.42, 0.15, 0.45)),
        Some(V3::new(-0.42, 0.17, -0.62)),
        &wing_skin,
        1.0,
    );

    // Left leg: thin tube along -y, rigid.
    let leg_rings = 1 + res;
    let leg_segs = 4 + (res - 1).min(2) * 2;
    let rings: Vec<(V3, f64, f64)> = (0..leg_rings)
        .map(|r| {
            let t = r as f64 / leg_rings.max(2).saturating_sub(1).max(1) as f64;
            (
                V3::new(-0.15 - 0.005 * t, -0.40 - 0.38 * t, -0.06 + 0.03 * t),
                0.035,
                0.035,
            )
        })
        .collect();
    let leg_skin = |p: V3| {
        let t = clamp01((-p.y - 0.42) / 0.35);
        vec![(J_LEG_L, 1.0 - t), (J_FOOT_L, t)]
    };
    let leg_l = b.lateral_tube(
        &rings,
        leg_segs,
        z_fwd,
        x_lat,
        None,
        Some(V3::new(-0.155, -0.82, -0.02)),
        &leg_skin,
        10.0,
    );

    // Left foot: small flat tube along +z, rigid.
    let foot_rings = 1 + res;
    let foot_segs = leg_segs;
    let rings: Vec<(V3, f64, f64)> = (0..foot_rings)
        .map(|r| {
            let t = r as f64 / foot_rings as f64;
            (
                V3::new(-0.155, -0.84, 0.02 + 0.16 * t),
                0.05 * (1.0 - 0.4 * t),
                0.02,
            )
        })
        .collect();
    let foot_skin = |_p: V3| vec![(J_FOOT_L, 1.0)];
    let foot_l = b.lateral_tube(
        &rings,
        foot_segs,
        y_up,
        x_lat,
        Some(V3::new(-0.155, -0.845, -0.03)),
        Some(V3::new(-0.155, -0.835, 0.26)),
        &foot_skin,
        10.0,
    );

    // Mirror lateral parts.
    let lateral_joint_map = [
        (J_LEG_L, J_LEG_R),
        (J_FOOT_L, J_FOOT_R),
        (J_WING_L, J_WING_R),
    ];
    let wing_r = b.mirror_part(&wing_l, &lateral_joint_map);
    let leg_r = b.mirror_part(&leg_l, &lateral_joint_map);
    let foot_r = b.mirror_part(&foot_l, &lateral_joint_map);

    // Keypoints.
    let beak_tip = *beak.last().unwrap(); // end cap pole
    let tail_tip = *tail.last().unwrap();
    let left_foot_kp = *foot_l.last().unwrap();
    let kp = |id: usize| vec![id];
    let keypoint_map = vec![
        Keypoint { name: "beak_tip".into(), vertices: kp(beak_tip) },
        Keypoint {
            name: "beak_base".into(),
            vertices: kp(b.nearest(&beak, V3::new(0.0, 0.42, 1.28))),
        },
        Keypoint {
            name: "crown".into(),
            vertices: kp(b.nearest(&head, V3::new(0.0, 0.65, 1.05))),
        },
        Keypoint {
            name: "forehead".into(),
            vertices: kp(b.nearest(&head, V3::new(0.0, 0.58, 1.22))),
        },
        Keypoint {
            name: "nape".into(),
            vertices: kp(b.nearest(&head, V3::new(0.0, 0.55, 0.88))),
        },
        Keypoint {
            name: "throat".into(),
            vertices: kp(b.nearest(&head, V3::new(0.0, 0.10, 1.10))),
        },
        Keypoint {
            name: "breast".into(),
            vertices: kp(b.nearest(&body, V3::new(0.0, -0.42, 0.55))),
        },
        Keypoint {
            name: "belly".into(),
            vertices: kp(b.nearest(&body, V3::new(0.0, -0.48, 0.0))),
        },
        Keypoint {
            name: "back".into(),
            vertices: kp(b.nearest(&body, V3::new(0.0, 0.50, 0.0))),
        },
        Keypoint { name: "tail_tip".into(), vertices: kp(tail_tip) },
        Keypoint {
            name: "left_eye".into(),
            vertices: kp(b.nearest(&head, V3::new(-0.28, 0.45, 1.12))),
        },
        Keypoint {
            name: "right_eye".into(),
            vertices: kp({
                let l = b.nearest(&head, V3::new(-0.28, 0.45, 1.12));
                b.mirror[l]
            }),
        },
        Keypoint {
            name: "left_wing".into(),
            vertices: kp(b.nearest(&wing_l, V3::new(-0.48, 0.22, -0.45))),
        },
        Keypoint {
            name: "right_wing".into(),
            vertices: kp({
                let l = b.nearest(&wing_l, V3::new(-0.48, 0.22, -0.45));
                b.mirror[l]
            }),
        },
        Keypoint {
            name: "left_leg".into(),
            vertices: kp(b.nearest(&leg_l, V3::new(-0.19, -0.60, -0.05))),
        },
        Keypoint {
            name: "right_leg".into(),
            vertices: kp({
                let l = b.nearest(&leg_l, V3::new(-0.19, -0.60, -0.05));
                b.mirror[l]
            }),
        },
        Keypoint { name: "left_foot".into(), vertices: kp(left_foot_kp) },
        Keypoint {
            name: "right_foot".into(),
            vertices: kp(b.mirror[left_foot_kp]),
        },
    ];
    debug_assert_eq!(keypoint_map.len(), KEYPOINT_NAMES.len());

    let part_groups = vec![
        PartGroup {
            name: "beak".into(),
            vertices: beak.clone(),
            anchor_joint: J_BEAK,
        },
        PartGroup {
            name: "tail".into(),
            vertices: tail.clone(),
            anchor_joint: J_TAIL1,
        },
    ];

    let symmetry_pairs: Vec<(usize, usize)> = (0..b.verts.len())
        .filter(|&i| i <= b.mirror[i])
        .map(|i| (i, b.mirror[i]))
        .collect();

    let _ = (&wing_r, &leg_r, &foot_r);
    TemplateModel::new(
        b.verts,
        b.faces,
        joints,
        parent,
        b.skin,
        keypoint_map,
        part_groups,
        symmetry_pairs,
        b.rigidity,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builds_and_validates() {
        for res in [1, 2, 4] {
            let t = synthetic_bird(&SyntheticConfig { resolution: res }).unwrap();
            assert!(t.n_vertices() > 100, "res {res}: {}", t.n_vertices());
            assert_eq!(t.n_joints(), 13);
            assert_eq!(t.keypoint_map.len(), 18);
            assert!(t.group("beak").is_some());
            assert!(t.group("tail").is_some());
        }
    }

    #[test]
    fn default_resolution_lands_near_300_vertices() {
        let t = synthetic_bird(&SyntheticConfig::default()).unwrap();
        assert!(
            (250..450).contains(&t.n_vertices()),
            "got {}",
            t.n_vertices()
        );
    }

    #[test]
    fn symmetry_pairs_are_exact_mirrors() {
        let t = synthetic_bird(&SyntheticConfig::default()).unwrap();
        for &(p, q) in &t.symmetry_pairs {
            let a = t.vertices[p];
            let m = TemplateModel::mirror_point(&t.vertices[q]);
            assert_eq!(a, m, "pair ({p},{q}) not an exact mirror");
            if p == q {
                assert_eq!(a.x, 0.0, "self-paired vertex {p} off the midline");
            }
        }
        // Every vertex appears in some pair.
        let mut seen = vec![false; t.n_vertices()];
        for &(p, q) in &t.symmetry_pairs {
            seen[p] = true;
            seen[q] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn legs_are_rigid() {
        let t = synthetic_bird(&SyntheticConfig::default()).unwrap();
        assert!(t.rigidity_weights.iter().any(|&r| r == 10.0));
        assert!(t.rigidity_weights.iter().all(|&r| r == 1.0 || r == 10.0));
    }

    #[test]
    fn body_length_is_finite_and_sane() {
        let t = synthetic_bird(&SyntheticConfig::default()).unwrap();
        let len = t.body_length(&t.vertices).unwrap();
        assert!(len > 2.0 && len < 4.0, "body length {len}");
    }

    #[test]
    fn every_joint_has_skin_support() {
        let t = synthetic_bird(&SyntheticConfig::default()).unwrap();
        for j in 0..t.n_joints() {
            assert!(t.joint_mass[j] > 0.05, "joint {j} mass {}", t.joint_mass[j]);
        }
    }

    #[test]
    fn deterministic_generation() {
        let a = synthetic_bird(&SyntheticConfig::default()).unwrap();
        let b = synthetic_bird(&SyntheticConfig::default()).unwrap();
        assert_eq!(a.vertices, b.vertices);
        assert_eq!(a.faces, b.faces);
        assert_eq!(a.symmetry_pairs, b.symmetry_pairs);
    }
}
