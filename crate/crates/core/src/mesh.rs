//! Triangulated unit disk with boundary point electrodes.
//!
//! The generator builds `k` concentric rings around a center node. Ring `j`
//! (radius `j/k`) carries `4j` equally spaced nodes starting at angle 0, so
//! the band between rings `j-1` and `j` holds `8j - 4` triangles and the whole
//! disk `4k²` triangles. Within each quadrant the band is triangulated by
//! merging the two rings by angle, which keeps the mesh symmetric under the
//! dihedral group of the square (quarter turns and axis reflections).

use std::collections::HashMap;
use std::f64::consts::PI;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const RADIUS_EPS: f64 = 1e-9;
const MIN_AREA: f64 = 1e-12;
const AREA_TOLERANCE: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub id: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Element {
    pub nodes: [usize; 3],
    pub region: i32,
}

/// A point electrode attached to a single boundary node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Electrode {
    pub id: usize,
    pub node: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub nodes: Vec<Node>,
    pub elements: Vec<Element>,
    /// Boundary node indices in counter-clockwise order.
    pub boundary_ring: Vec<usize>,
    pub electrodes: Vec<Electrode>,
}

/// Area and constant shape-function gradients of a linear triangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ElementGeometry {
    pub area: f64,
    pub grads: [[f64; 2]; 3],
}

impl ElementGeometry {
    /// Local P1 stiffness matrix for unit conductivity: `A ∇φᵢ·∇φⱼ`.
    pub fn unit_stiffness(&self) -> [[f64; 3]; 3] {
        let mut k = [[0.0; 3]; 3];
        for (i, gi) in self.grads.iter().enumerate() {
            for (j, gj) in self.grads.iter().enumerate() {
                k[i][j] = self.area * (gi[0] * gj[0] + gi[1] * gj[1]);
            }
        }
        k
    }
}

/// Geometry of the triangle with vertices `p` (counter-clockwise).
pub fn triangle_geometry(p: [[f64; 2]; 3]) -> Result<ElementGeometry> {
    let twice_area = signed_twice_area(p[0], p[1], p[2]);
    if !(twice_area > 2.0 * MIN_AREA) {
        return Err(Error::Geometry(format!(
            "degenerate or clockwise triangle (signed area {})",
            twice_area / 2.0
        )));
    }
    let mut grads = [[0.0; 2]; 3];
    for i in 0..3 {
        let j = (i + 1) % 3;
        let k = (i + 2) % 3;
        grads[i] = [
            (p[j][1] - p[k][1]) / twice_area,
            (p[k][0] - p[j][0]) / twice_area,
        ];
    }
    Ok(ElementGeometry {
        area: twice_area / 2.0,
        grads,
    })
}

fn signed_twice_area(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])
}

/// Builds the concentric-ring disk mesh with `n_electrodes` equally spaced
/// point electrodes, electrode 0 at angle 0.
pub fn build_disk_mesh(n_rings: usize, n_electrodes: usize) -> Result<Mesh> {
    if n_rings < 2 {
        return Err(Error::Domain(format!(
            "n_rings must be at least 2, got {n_rings}"
        )));
    }
    let n_boundary = 4 * n_rings;
    if n_electrodes == 0 || n_boundary % n_electrodes != 0 {
        return Err(Error::Config(format!(
            "{n_electrodes} electrodes do not divide the {n_boundary} boundary nodes of a {n_rings}-ring mesh"
        )));
    }

    let ring_start = |j: usize| if j == 0 { 0 } else { 1 + 2 * j * (j - 1) };
    let ring_node = |j: usize, i: usize| {
        if j == 0 {
            0
        } else {
            ring_start(j) + i % (4 * j)
        }
    };

    let mut nodes = vec![Node {
        id: 0,
        x: 0.0,
        y: 0.0,
    }];
    for j in 1..=n_rings {
        let r = j as f64 / n_rings as f64;
        let count = 4 * j;
        for i in 0..count {
            let theta = 2.0 * PI * i as f64 / count as f64;
            nodes.push(Node {
                id: nodes.len(),
                x: r * theta.cos(),
                y: r * theta.sin(),
            });
        }
    }

    let mut elements = Vec::with_capacity(4 * n_rings * n_rings);
    for i in 0..4 {
        elements.push([0, ring_node(1, i), ring_node(1, i + 1)]);
    }
    for j in 2..=n_rings {
        let inner = j - 1;
        for q in 0..4 {
            let (mut m, mut n) = (0usize, 0usize);
            while m < inner || n < j {
                let a = ring_node(inner, q * inner + m);
                let b = ring_node(j, q * j + n);
                // compare next angular fractions (n+1)/j and (m+1)/inner exactly
                let advance_outer = m == inner || (n < j && (n + 1) * inner < (m + 1) * j);
                if advance_outer {
                    elements.push([a, b, ring_node(j, q * j + n + 1)]);
                    n += 1;
                } else {
                    elements.push([a, b, ring_node(inner, q * inner + m + 1)]);
                    m += 1;
                }
            }
        }
    }

    let elements = elements
        .into_iter()
        .map(|tri| {
            let p = tri.map(|v| [nodes[v].x, nodes[v].y]);
            debug_assert!(signed_twice_area(p[0], p[1], p[2]) > 0.0);
            Element {
                nodes: tri,
                region: 0,
            }
        })
        .collect::<Vec<_>>();

    let boundary_ring: Vec<usize> = (0..n_boundary).map(|i| ring_node(n_rings, i)).collect();
    let stride = n_boundary / n_electrodes;
    let electrodes = (0..n_electrodes)
        .map(|e| Electrode {
            id: e,
            node: boundary_ring[e * stride],
        })
        .collect();

    Ok(Mesh {
        nodes,
        elements,
        boundary_ring,
        electrodes,
    })
}

impl Mesh {
    /// Assembles a mesh from raw parts, deriving the boundary ring from edges
    /// used by exactly one element.
    pub fn from_parts(
        nodes: Vec<Node>,
        elements: Vec<Element>,
        electrode_nodes: &[usize],
    ) -> Result<Self> {
        for (k, el) in elements.iter().enumerate() {
            if el.nodes.iter().any(|&v| v >= nodes.len()) {
                return Err(Error::Geometry(format!(
                    "element {k} references a missing node"
                )));
            }
        }
        let boundary_ring = boundary_cycle(nodes.len(), &elements)?;
        let electrodes = electrode_nodes
            .iter()
            .enumerate()
            .map(|(id, &node)| Electrode { id, node })
            .collect();
        Ok(Self {
            nodes,
            elements,
            boundary_ring,
            electrodes,
        })
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn n_elements(&self) -> usize {
        self.elements.len()
    }

    pub fn n_electrodes(&self) -> usize {
        self.electrodes.len()
    }

    pub fn vertices(&self, elem: usize) -> [[f64; 2]; 3] {
        self.elements[elem].nodes.map(|v| [self.nodes[v].x, self.nodes[v].y])
    }

    pub fn centroid(&self, elem: usize) -> [f64; 2] {
        let p = self.vertices(elem);
        [
            (p[0][0] + p[1][0] + p[2][0]) / 3.0,
            (p[0][1] + p[1][1] + p[2][1]) / 3.0,
        ]
    }

    pub fn electrode_angle(&self, e: usize) -> f64 {
        let n = self.nodes[self.electrodes[e].node];
        n.y.atan2(n.x)
    }

    /// Edge → incident elements, edges keyed with the smaller node first.
    pub fn edge_map(&self) -> HashMap<(usize, usize), Vec<usize>> {
        edge_map(&self.elements)
    }

    /// Pairs of elements sharing an edge, sorted.
    pub fn element_adjacency(&self) -> Vec<(usize, usize)> {
        let mut pairs: Vec<(usize, usize)> = self
            .edge_map()
            .into_values()
            .filter(|els| els.len() == 2)
            .map(|els| (els[0].min(els[1]), els[0].max(els[1])))
            .collect();
        pairs.sort_unstable();
        pairs
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_elements())
            .map(|e| {
                let p = self.vertices(e);
                signed_twice_area(p[0], p[1], p[2]).abs() / 2.0
            })
            .sum()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(
            w,
            "nodes {} elements {} electrodes {}",
            self.n_nodes(),
            self.n_elements(),
            self.n_electrodes()
        )?;
        for n in &self.nodes {
            writeln!(w, "{} {:.16e} {:.16e}", n.id, n.x, n.y)?;
        }
        for (k, el) in self.elements.iter().enumerate() {
            writeln!(w, "{} {} {} {}", k, el.nodes[0], el.nodes[1], el.nodes[2])?;
        }
        for e in &self.electrodes {
            writeln!(w, "{} {}", e.id, e.node)?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let mut lines = r
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l))
            .filter(|(_, l)| l.as_ref().map_or(true, |s| !s.trim().is_empty()));

        let mut next = |what: &str| -> Result<(usize, Vec<String>)> {
            match lines.next() {
                Some((no, line)) => Ok((
                    no,
                    line?.split_whitespace().map(str::to_owned).collect(),
                )),
                None => Err(Error::parse(0, format!("unexpected end of file, expected {what}"))),
            }
        };

        let (no, header) = next("header")?;
        let [n_nodes, n_elements, n_electrodes] = match header.as_slice() {
            [a, n, b, m, c, l] if a == "nodes" && b == "elements" && c == "electrodes" => [
                parse_num::<usize>(n, no)?,
                parse_num::<usize>(m, no)?,
                parse_num::<usize>(l, no)?,
            ],
            _ => return Err(Error::parse(no, "expected `nodes N elements M electrodes L`")),
        };

        let mut nodes = Vec::with_capacity(n_nodes);
        for i in 0..n_nodes {
            let (no, f) = next("node line")?;
            let (id, x, y) = match f.as_slice() {
                [id, x, y] => (
                    parse_num::<usize>(id, no)?,
                    parse_num::<f64>(x, no)?,
                    parse_num::<f64>(y, no)?,
                ),
                _ => return Err(Error::parse(no, "expected `id x y`")),
            };
            if id != i {
                return Err(Error::parse(no, format!("node id {id} out of order")));
            }
            nodes.push(Node { id, x, y });
        }
        let mut elements = Vec::with_capacity(n_elements);
        for i in 0..n_elements {
            let (no, f) = next("element line")?;
            let ids = match f.as_slice() {
                [id, a, b, c] => [
                    parse_num::<usize>(id, no)?,
                    parse_num::<usize>(a, no)?,
                    parse_num::<usize>(b, no)?,
                    parse_num::<usize>(c, no)?,
                ],
                _ => return Err(Error::parse(no, "expected `id n1 n2 n3`")),
            };
            if ids[0] != i {
                return Err(Error::parse(no, format!("element id {} out of order", ids[0])));
            }
            elements.push(Element {
                nodes: [ids[1], ids[2], ids[3]],
                region: 0,
            });
        }
        let mut electrode_nodes = Vec::with_capacity(n_electrodes);
        for i in 0..n_electrodes {
            let (no, f) = next("electrode line")?;
            match f.as_slice() {
                [id, node] => {
                    if parse_num::<usize>(id, no)? != i {
                        return Err(Error::parse(no, "electrode id out of order"));
                    }
                    electrode_nodes.push(parse_num::<usize>(node, no)?);
                }
                _ => return Err(Error::parse(no, "expected `id boundary_node`")),
            }
        }
        Mesh::from_parts(nodes, elements, &electrode_nodes)
    }
}

fn parse_num<T: std::str::FromStr>(s: &str, line: usize) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse::<T>()
        .map_err(|e| Error::parse(line, format!("`{s}`: {e}")))
}

fn edge_map(elements: &[Element]) -> HashMap<(usize, usize), Vec<usize>> {
    let mut map: HashMap<(usize, usize), Vec<usize>> = HashMap::new();
    for (k, el) in elements.iter().enumerate() {
        for i in 0..3 {
            let a = el.nodes[i];
            let b = el.nodes[(i + 1) % 3];
            map.entry((a.min(b), a.max(b))).or_default().push(k);
        }
    }
    map
}

fn boundary_cycle(n_nodes: usize, elements: &[Element]) -> Result<Vec<usize>> {
    let edges = edge_map(elements);
    let mut next = vec![usize::MAX; n_nodes];
    let mut count = 0;
    for (k, el) in elements.iter().enumerate() {
        for i in 0..3 {
            let a = el.nodes[i];
            let b = el.nodes[(i + 1) % 3];
            if edges[&(a.min(b), a.max(b))].len() == 1 {
                if next[a] != usize::MAX {
                    return Err(Error::Geometry(format!(
                        "boundary is not a simple cycle at node {a} (element {k})"
                    )));
                }
                next[a] = b;
                count += 1;
            }
        }
    }
    let Some(start) = next.iter().position(|&n| n != usize::MAX) else {
        return Ok(Vec::new());
    };
    let mut ring = vec![start];
    let mut cur = next[start];
    while cur != start {
        if cur == usize::MAX || ring.len() > count {
            return Err(Error::Geometry("boundary edges do not close into a cycle".into()));
        }
        ring.push(cur);
        cur = next[cur];
    }
    if ring.len() != count {
        return Err(Error::Geometry("boundary consists of several cycles".into()));
    }
    Ok(ring)
}

/// Small square mesh with corners `(±0.7, ±0.7)` and an electrode at each
/// corner (counter-clockwise from `(0.7, -0.7)`). With `interior` the square
/// is split into four triangles around node 0 at `(0.2, 0.1)`, otherwise into
/// two along a diagonal.
///
/// The interior node is off centre on purpose: around the centre every
/// corner-corner edge faces a right angle, has zero stiffness coupling, and
/// all adjacent readings vanish.
pub fn square_mesh(interior: bool) -> Mesh {
    let s = 0.7;
    let corners = [[s, -s], [s, s], [-s, s], [-s, -s]];
    let mut nodes = Vec::new();
    if interior {
        nodes.push(Node { id: 0, x: 0.2, y: 0.1 });
    }
    for c in corners {
        nodes.push(Node {
            id: nodes.len(),
            x: c[0],
            y: c[1],
        });
    }
    let tri = |a, b, c| Element {
        nodes: [a, b, c],
        region: 0,
    };
    let (elements, electrodes) = if interior {
        (
            vec![tri(0, 1, 2), tri(0, 2, 3), tri(0, 3, 4), tri(0, 4, 1)],
            vec![1, 2, 3, 4],
        )
    } else {
        (vec![tri(0, 1, 2), tri(0, 2, 3)], vec![0, 1, 2, 3])
    };
    Mesh::from_parts(nodes, elements, &electrodes).expect("square mesh is well formed")
}

/// Geometry of element `elem`; fails on a degenerate or clockwise triangle.
pub fn element_geometry(mesh: &Mesh, elem: usize) -> Result<ElementGeometry> {
    if elem >= mesh.n_elements() {
        return Err(Error::Domain(format!(
            "element index {elem} out of range ({} elements)",
            mesh.n_elements()
        )));
    }
    triangle_geometry(mesh.vertices(elem))
        .map_err(|e| Error::Geometry(format!("element {elem}: {e}")))
}

/// Checks every structural invariant of a disk mesh. An empty list means the
/// mesh is valid.
pub fn validate(mesh: &Mesh) -> Vec<String> {
    let mut out = Vec::new();

    for (i, n) in mesh.nodes.iter().enumerate() {
        if n.id != i {
            out.push(format!("node at position {i} has id {}", n.id));
        }
        if !(n.x.is_finite() && n.y.is_finite()) {
            out.push(format!("node {i} has non-finite coordinates"));
        } else if n.x * n.x + n.y * n.y > 1.0 + RADIUS_EPS {
            out.push(format!("node {i} lies outside the unit disk"));
        }
    }

    let mut sorted: Vec<usize> = (0..mesh.n_nodes()).collect();
    sorted.sort_by(|&a, &b| {
        let (p, q) = (mesh.nodes[a], mesh.nodes[b]);
        p.x.total_cmp(&q.x).then(p.y.total_cmp(&q.y))
    });
    for w in sorted.windows(2) {
        let (p, q) = (mesh.nodes[w[0]], mesh.nodes[w[1]]);
        if (p.x - q.x).abs() < 1e-12 && (p.y - q.y).abs() < 1e-12 {
            out.push(format!("nodes {} and {} share coordinates", w[0], w[1]));
        }
    }

    let mut elements_ok = true;
    for (k, el) in mesh.elements.iter().enumerate() {
        let [a, b, c] = el.nodes;
        if a >= mesh.n_nodes() || b >= mesh.n_nodes() || c >= mesh.n_nodes() {
            out.push(format!("element {k} references a missing node"));
            elements_ok = false;
            continue;
        }
        if a == b || b == c || a == c {
            out.push(format!("element {k} repeats a vertex"));
            elements_ok = false;
            continue;
        }
        let p = mesh.vertices(k);
        let area = signed_twice_area(p[0], p[1], p[2]) / 2.0;
        if area < 0.0 {
            out.push(format!("element {k} not CCW"));
        } else if area <= MIN_AREA {
            out.push(format!("element {k} is degenerate (area {area:e})"));
        }
    }
    if !elements_ok {
        return out;
    }

    let edges = mesh.edge_map();
    for (&(a, b), els) in &edges {
        if els.len() > 2 {
            out.push(format!("edge ({a}, {b}) is shared by {} elements", els.len()));
        }
    }
    let euler = mesh.n_nodes() as i64 - edges.len() as i64 + mesh.n_elements() as i64;
    if euler != 1 {
        out.push(format!("Euler characteristic is {euler}, expected 1"));
    }

    match boundary_cycle(mesh.n_nodes(), &mesh.elements) {
        Ok(ring) => {
            if !same_cycle(&ring, &mesh.boundary_ring) {
                out.push("boundary ring does not match the boundary edges".into());
            }
        }
        Err(e) => out.push(e.to_string()),
    }

    let area = mesh.total_area();
    if (area - PI).abs() > AREA_TOLERANCE * PI {
        out.push(format!("total area {area} differs from the disk area by more than 2%"));
    }

    let on_ring: HashMap<usize, usize> = mesh
        .boundary_ring
        .iter()
        .enumerate()
        .map(|(pos, &n)| (n, pos))
        .collect();
    let mut positions = Vec::with_capacity(mesh.n_electrodes());
    for (i, e) in mesh.electrodes.iter().enumerate() {
        if e.id != i {
            out.push(format!("electrode at position {i} has id {}", e.id));
        }
        match on_ring.get(&e.node) {
            Some(&pos) => positions.push(pos),
            None => out.push(format!("electrode {i} is not on the boundary ring")),
        }
    }
    if positions.len() == mesh.n_electrodes() && !positions.is_empty() {
        let n = mesh.boundary_ring.len();
        let offsets: Vec<usize> = positions.iter().map(|&p| (p + n - positions[0]) % n).collect();
        if offsets.windows(2).any(|w| w[1] <= w[0]) {
            out.push("electrodes are not distinct and ordered counter-clockwise".into());
        }
    }
    out
}

fn same_cycle(a: &[usize], b: &[usize]) -> bool {
    if a.len() != b.len() {
        return false;
    }
    if a.is_empty() {
        return true;
    }
    match b.iter().position(|&x| x == a[0]) {
        Some(shift) => (0..a.len()).all(|i| a[i] == b[(i + shift) % b.len()]),
        None => false,
    }
}
