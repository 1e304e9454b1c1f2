use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec3 = [f64; 3];

/// Parameters of the synthetic tube-body generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TemplateSpec {
    pub limbs: usize,
    pub segments_per_limb: usize,
    pub ring_resolution: usize,
    /// Rings over the whole body; `None` means two per bone.
    pub total_rings: Option<usize>,
    /// Coarse vertex count after padding/merging; `None` keeps one per ring.
    pub coarse_vertices: Option<usize>,
    pub seed: u64,
}

impl TemplateSpec {
    pub fn new(limbs: usize, segments_per_limb: usize, ring_resolution: usize, seed: u64) -> Self {
        Self {
            limbs,
            segments_per_limb,
            ring_resolution,
            total_rings: None,
            coarse_vertices: None,
            seed,
        }
    }

    /// 8 joints, 48 rings of 4 vertices.
    pub fn desk() -> Self {
        Self {
            limbs: 7,
            segments_per_limb: 1,
            ring_resolution: 4,
            total_rings: Some(48),
            coarse_vertices: Some(48),
            seed: 7,
        }
    }

    /// 14 joints, 6656 fine vertices, 431 coarse vertices.
    pub fn paper_faithful() -> Self {
        Self {
            limbs: 13,
            segments_per_limb: 1,
            ring_resolution: 16,
            total_rings: Some(416),
            coarse_vertices: Some(431),
            seed: 7,
        }
    }

    pub fn num_joints(&self) -> usize {
        1 + self.limbs * self.segments_per_limb
    }

    pub fn num_rings(&self) -> usize {
        self.total_rings.unwrap_or(2 * (self.num_joints() - 1))
    }

    pub fn num_fine(&self) -> usize {
        self.num_rings() * self.ring_resolution
    }

    pub fn num_coarse(&self) -> usize {
        self.coarse_vertices.unwrap_or_else(|| self.num_rings())
    }

    pub fn validate(&self) -> Result<()> {
        if self.limbs == 0 || self.segments_per_limb == 0 || self.ring_resolution == 0 {
            return Err(Error::Config("template limbs, segments and ring resolution must be >= 1".into()));
        }
        let bones = self.num_joints() - 1;
        let rings = self.num_rings();
        if rings < bones {
            return Err(Error::Config(format!("template needs at least one ring per bone ({rings} < {bones})")));
        }
        let coarse = self.num_coarse();
        if coarse == 0 || coarse > self.num_fine() {
            return Err(Error::Config(format!(
                "coarse vertex count {coarse} must lie in 1..={}",
                self.num_fine()
            )));
        }
        Ok(())
    }
}

/// Rest-pose articulated mesh with rigid skinning.
///
/// Vertices are stored in the frame of their skinning joint; `rest_vertices`
/// is derived as `rest_joint + local`, using the same arithmetic as forward
/// kinematics so the zero pose reproduces it bit for bit.
#[derive(Debug, Clone, PartialEq)]
pub struct TemplateMesh {
    pub parents: Vec<Option<usize>>,
    /// Root: absolute rest position. Others: offset from the parent joint.
    pub joint_offsets: Vec<Vec3>,
    pub skinning: Vec<usize>,
    pub vertex_local: Vec<Vec3>,
    pub rest_vertices: Vec<Vec3>,
    pub rest_joints: Vec<Vec3>,
    /// Undirected, `u < v`, sorted, no duplicates.
    pub edges: Vec<(usize, usize)>,
    pub coarse_map: Vec<usize>,
    pub num_coarse: usize,
}

impl TemplateMesh {
    pub fn num_joints(&self) -> usize {
        self.parents.len()
    }

    pub fn num_fine(&self) -> usize {
        self.rest_vertices.len()
    }

    pub fn num_coarse(&self) -> usize {
        self.num_coarse
    }

    /// Longest root-to-leaf path, in bones.
    pub fn depth(&self) -> usize {
        (0..self.num_joints()).map(|j| self.joint_depth(j)).max().unwrap_or(0)
    }

    fn joint_depth(&self, mut j: usize) -> usize {
        let mut d = 0;
        while let Some(p) = self.parents[j] {
            j = p;
            d += 1;
        }
        d
    }

    /// Bones of the kinematic tree as (parent, child).
    pub fn skeleton_edges(&self) -> Vec<(usize, usize)> {
        self.parents
            .iter()
            .enumerate()
            .filter_map(|(j, p)| p.map(|p| (p, j)))
            .collect()
    }

    /// Edges between coarse groups induced by the fine mesh edges.
    pub fn coarse_edges(&self) -> Vec<(usize, usize)> {
        let set: BTreeSet<(usize, usize)> = self
            .edges
            .iter()
            .filter_map(|&(u, v)| {
                let (a, b) = (self.coarse_map[u], self.coarse_map[v]);
                (a != b).then(|| (a.min(b), a.max(b)))
            })
            .collect();
        set.into_iter().collect()
    }

    /// Members of each coarse group, ascending.
    pub fn coarse_groups(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.num_coarse];
        for (v, &g) in self.coarse_map.iter().enumerate() {
            groups[g].push(v);
        }
        groups
    }

    pub fn validate(&self) -> Result<()> {
        let j = self.num_joints();
        let v = self.num_fine();
        if self.joint_offsets.len() != j || self.rest_joints.len() != j {
            return Err(Error::Input("skeleton arrays disagree in length".into()));
        }
        if self.skinning.len() != v || self.vertex_local.len() != v || self.coarse_map.len() != v {
            return Err(Error::Input("per-vertex arrays disagree in length".into()));
        }
        let roots = self.parents.iter().filter(|p| p.is_none()).count();
        if roots != 1 {
            return Err(Error::Input(format!("skeleton has {roots} roots")));
        }
        for (i, p) in self.parents.iter().enumerate() {
            if let Some(p) = *p {
                if p >= j {
                    return Err(Error::Input(format!("joint {i} has out-of-range parent {p}")));
                }
            }
        }
        // A tree with one root where every walk terminates has no cycles.
        for start in 0..j {
            let mut cur = start;
            let mut steps = 0;
            while let Some(p) = self.parents[cur] {
                cur = p;
                steps += 1;
                if steps > j {
                    return Err(Error::Input(format!("cycle through joint {start}")));
                }
            }
        }
        for &(a, b) in &self.edges {
            if a >= v || b >= v || a == b {
                return Err(Error::Input(format!("bad edge ({a}, {b})")));
            }
        }
        if self.skinning.iter().any(|&s| s >= j) {
            return Err(Error::Input("skinning references a missing joint".into()));
        }
        let mut sizes = vec![0usize; self.num_coarse];
        for &g in &self.coarse_map {
            if g >= self.num_coarse {
                return Err(Error::Input(format!("coarse group {g} out of range")));
            }
            sizes[g] += 1;
        }
        if let Some(g) = sizes.iter().position(|&s| s == 0) {
            return Err(Error::Input(format!("coarse group {g} is empty")));
        }
        Ok(())
    }

    /// Wavefront OBJ with edges written as degenerate triangles `f a b b`.
    pub fn to_obj(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!(
            "# template: {} vertices, {} edges, {} joints, {} coarse groups\n",
            self.num_fine(),
            self.edges.len(),
            self.num_joints(),
            self.num_coarse
        ));
        for p in &self.rest_vertices {
            s.push_str(&format!("v {} {} {}\n", p[0], p[1], p[2]));
        }
        for &(a, b) in &self.edges {
            s.push_str(&format!("f {} {} {}\n", a + 1, b + 1, b + 1));
        }
        s
    }
}

/// Writes vertices only (no connectivity), e.g. for predicted meshes.
pub fn points_to_obj(points: &[Vec3]) -> String {
    let mut s = String::new();
    for p in points {
        s.push_str(&format!("v {} {} {}\n", p[0], p[1], p[2]));
    }
    s
}

const LIMB_LENGTH: f64 = 0.5;
const TUBE_RADIUS: f64 = 0.05;

/// Deterministic tube-body: a star of limbs around a root joint, each limb a
/// chain of segments, each non-root joint owning a cylinder of rings that
/// starts at the joint and runs along its bone direction.
pub fn generate_synthetic_template(spec: &TemplateSpec) -> Result<TemplateMesh> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let j_count = spec.num_joints();
    let seg_len = LIMB_LENGTH / spec.segments_per_limb as f64;

    let mut parents = vec![None];
    let mut joint_offsets: Vec<Vec3> = vec![[0.0; 3]];
    let mut bone_dir: Vec<Vec3> = vec![[0.0; 3]];
    for limb in 0..spec.limbs {
        let base = fibonacci_direction(limb, spec.limbs);
        let mut dir = jitter(base, 0.15, &mut rng);
        for seg in 0..spec.segments_per_limb {
            if seg > 0 {
                dir = jitter(dir, 0.25, &mut rng);
            }
            let parent = if seg == 0 { 0 } else { parents.len() - 1 };
            parents.push(Some(parent));
            joint_offsets.push(clean(scale(dir, seg_len)));
            bone_dir.push(dir);
        }
    }
    debug_assert_eq!(parents.len(), j_count);
    let rest_joints = rest_joint_positions(&parents, &joint_offsets);

    // Rings per bone: even split, remainder to the first bones.
    let bones = j_count - 1;
    let rings = spec.num_rings();
    let ring_counts: Vec<usize> = (0..bones)
        .map(|b| rings / bones + usize::from(b < rings % bones))
        .collect();

    let res = spec.ring_resolution;
    let mut skinning = Vec::with_capacity(rings * res);
    let mut vertex_local = Vec::with_capacity(rings * res);
    let mut ring_start = Vec::with_capacity(rings);
    let mut bone_rings: Vec<(usize, usize)> = vec![(0, 0)];
    for joint in 1..j_count {
        let dir = bone_dir[joint];
        let (u, w) = orthonormal_pair(dir);
        let n = ring_counts[joint - 1];
        bone_rings.push((ring_start.len(), n));
        let radius = TUBE_RADIUS * (0.8 + 0.4 * rng.random::<f64>());
        for k in 0..n {
            ring_start.push(vertex_local.len());
            let along = seg_len * (k as f64 + 0.5) / n as f64;
            for m in 0..res {
                let theta = 2.0 * PI * m as f64 / res as f64;
                let (s, c) = theta.sin_cos();
                let p = [
                    along * dir[0] + radius * (c * u[0] + s * w[0]),
                    along * dir[1] + radius * (c * u[1] + s * w[1]),
                    along * dir[2] + radius * (c * u[2] + s * w[2]),
                ];
                vertex_local.push(clean(p));
                skinning.push(joint);
            }
        }
    }
    let rest_vertices: Vec<Vec3> = vertex_local
        .iter()
        .zip(&skinning)
        .map(|(l, &j)| add(rest_joints[j], *l))
        .collect();

    let mut edges = BTreeSet::new();
    let mut link = |a: usize, b: usize| {
        if a != b {
            edges.insert((a.min(b), a.max(b)));
        }
    };
    for &start in &ring_start {
        for m in 0..res {
            link(start + m, start + (m + 1) % res);
        }
    }
    for joint in 1..j_count {
        let (first, n) = bone_rings[joint];
        for k in 1..n {
            for m in 0..res {
                link(ring_start[first + k - 1] + m, ring_start[first + k] + m);
            }
        }
        let parent = parents[joint].expect("non-root");
        if parent != 0 {
            let (pf, pn) = bone_rings[parent];
            for m in 0..res {
                link(ring_start[pf + pn - 1] + m, ring_start[first] + m);
            }
        }
    }
    // Base rings of consecutive limbs are joined so the body is connected.
    let limb_roots: Vec<usize> = (1..j_count).filter(|&j| parents[j] == Some(0)).collect();
    if limb_roots.len() > 1 {
        for i in 0..limb_roots.len() {
            let a = ring_start[bone_rings[limb_roots[i]].0];
            let b = ring_start[bone_rings[limb_roots[(i + 1) % limb_roots.len()]].0];
            for m in 0..res {
                link(a + m, b + m);
            }
        }
    }

    let mut groups: Vec<Vec<usize>> = ring_start.iter().map(|&s| (s..s + res).collect()).collect();
    resize_groups(&mut groups, spec.num_coarse());
    let mut coarse_map = vec![0; vertex_local.len()];
    for (g, members) in groups.iter().enumerate() {
        for &v in members {
            coarse_map[v] = g;
        }
    }

    let mesh = TemplateMesh {
        parents,
        joint_offsets,
        skinning,
        vertex_local,
        rest_vertices,
        rest_joints,
        edges: edges.into_iter().collect(),
        coarse_map,
        num_coarse: groups.len(),
    };
    mesh.validate()?;
    Ok(mesh)
}

/// Splits the largest group (earliest on ties) until `target` is reached, or
/// merges the adjacent pair with the smallest combined size.
fn resize_groups(groups: &mut Vec<Vec<usize>>, target: usize) {
    while groups.len() < target {
        let (idx, _) = groups
            .iter()
            .enumerate()
            .fold((0, 0), |best, (i, g)| if g.len() > best.1 { (i, g.len()) } else { best });
        let at = groups[idx].len().div_ceil(2);
        let tail = groups[idx].split_off(at);
        groups.insert(idx + 1, tail);
    }
    while groups.len() > target {
        let idx = (0..groups.len() - 1)
            .min_by_key(|&i| (groups[i].len() + groups[i + 1].len(), i))
            .expect("at least two groups");
        let next = groups.remove(idx + 1);
        groups[idx].extend(next);
    }
}

pub(crate) fn rest_joint_positions(parents: &[Option<usize>], offsets: &[Vec3]) -> Vec<Vec3> {
    let mut out = vec![[0.0; 3]; parents.len()];
    for j in 0..parents.len() {
        out[j] = match parents[j] {
            None => offsets[j],
            Some(p) => add(out[p], offsets[j]),
        };
    }
    out
}

fn fibonacci_direction(i: usize, n: usize) -> Vec3 {
    let golden = PI * (3.0 - 5f64.sqrt());
    let y = 1.0 - 2.0 * (i as f64 + 0.5) / n as f64;
    let r = (1.0 - y * y).sqrt();
    let phi = golden * i as f64;
    [r * phi.cos(), y, r * phi.sin()]
}

fn jitter(d: Vec3, amount: f64, rng: &mut impl Rng) -> Vec3 {
    let mut v = d;
    for x in &mut v {
        *x += amount * (rng.random::<f64>() * 2.0 - 1.0);
    }
    normalize(v)
}

fn orthonormal_pair(d: Vec3) -> (Vec3, Vec3) {
    let helper = if d[0].abs() < 0.9 { [1.0, 0.0, 0.0] } else { [0.0, 1.0, 0.0] };
    let u = normalize(cross(d, helper));
    let w = cross(d, u);
    (u, w)
}

pub(crate) fn add(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

fn scale(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

fn cross(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn normalize(a: Vec3) -> Vec3 {
    let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
    scale(a, 1.0 / n)
}

// -0.0 + 0.0 == +0.0, so identity transforms reproduce stored coordinates bitwise.
fn clean(a: Vec3) -> Vec3 {
    [a[0] + 0.0, a[1] + 0.0, a[2] + 0.0]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_limb_counts() {
        let mesh = generate_synthetic_template(&TemplateSpec::new(1, 1, 4, 0)).unwrap();
        assert_eq!(mesh.num_joints(), 2);
        assert_eq!(mesh.num_fine(), 8);
        assert_eq!(mesh.depth(), 1);
        assert_eq!(mesh.num_coarse(), 2);
        // two rings of 4 plus 4 rungs
        assert_eq!(mesh.edges.len(), 12);
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = TemplateSpec::new(3, 2, 5, 11);
        let a = generate_synthetic_template(&spec).unwrap();
        let b = generate_synthetic_template(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_template(&TemplateSpec { seed: 12, ..spec }).unwrap();
        assert_ne!(a.rest_vertices, c.rest_vertices);
    }

    #[test]
    fn presets_hit_their_counts() {
        let desk = generate_synthetic_template(&TemplateSpec::desk()).unwrap();
        assert_eq!((desk.num_joints(), desk.num_coarse(), desk.num_fine()), (8, 48, 192));
        let paper = generate_synthetic_template(&TemplateSpec::paper_faithful()).unwrap();
        assert_eq!(paper.num_joints(), 14);
        assert_eq!(paper.num_coarse(), 431);
        assert_eq!(paper.num_fine(), 6656);
    }

    #[test]
    fn merging_reduces_group_count() {
        let spec = TemplateSpec {
            coarse_vertices: Some(5),
            ..TemplateSpec::new(2, 2, 3, 1)
        };
        let mesh = generate_synthetic_template(&spec).unwrap();
        assert_eq!(mesh.num_coarse(), 5);
        assert_eq!(mesh.coarse_groups().iter().map(Vec::len).sum::<usize>(), mesh.num_fine());
    }

    #[test]
    fn segments_chain_within_limb() {
        let mesh = generate_synthetic_template(&TemplateSpec::new(2, 3, 4, 0)).unwrap();
        assert_eq!(mesh.parents, vec![None, Some(0), Some(1), Some(2), Some(0), Some(4), Some(5)]);
        assert_eq!(mesh.depth(), 3);
    }

    #[test]
    fn mesh_is_connected() {
        let mesh = generate_synthetic_template(&TemplateSpec::desk()).unwrap();
        let n = mesh.num_fine();
        let mut adj = vec![Vec::new(); n];
        for &(a, b) in &mesh.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![0];
        seen[0] = true;
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn rejects_degenerate_parameters() {
        assert!(generate_synthetic_template(&TemplateSpec::new(0, 1, 4, 0)).is_err());
        let too_fine = TemplateSpec {
            coarse_vertices: Some(100),
            ..TemplateSpec::new(1, 1, 4, 0)
        };
        assert!(generate_synthetic_template(&too_fine).is_err());
    }

    #[test]
    fn validate_catches_cycles() {
        let mut mesh = generate_synthetic_template(&TemplateSpec::new(1, 2, 3, 0)).unwrap();
        mesh.parents = vec![Some(2), Some(0), Some(1)];
        assert!(mesh.validate().is_err());
    }

    #[test]
    fn obj_lists_every_vertex_and_edge() {
        let mesh = generate_synthetic_template(&TemplateSpec::new(1, 1, 4, 0)).unwrap();
        let obj = mesh.to_obj();
        assert_eq!(obj.lines().filter(|l| l.starts_with("v ")).count(), 8);
        assert_eq!(obj.lines().filter(|l| l.starts_with("f ")).count(), 12);
    }
}
