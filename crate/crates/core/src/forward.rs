//! Finite-element forward model `h(ρ)`.
//!
//! Linear triangles with piecewise-constant resistivity. Current enters and
//! leaves through point electrodes and node 0 is grounded. One Cholesky
//! factorization per resistivity field serves every right-hand side of the
//! protocol; sensitivities come from adjoint fields, which for a pair-drive
//! protocol coincide with the drive fields of the measurement pairs.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::ops::Deref;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{element_geometry, Mesh};
use crate::skyline::{SkylineCholesky, SkylineMatrix};

/// Node held at zero potential.
pub const GROUND_NODE: usize = 0;

/// Per-element resistivity, every entry finite and positive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResistivityField(Vec<f64>);

impl ResistivityField {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        check_rho(&values)?;
        Ok(Self(values))
    }

    pub fn homogeneous(n: usize, value: f64) -> Result<Self> {
        Self::new(vec![value; n])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "field n {}", self.0.len())?;
        for v in &self.0 {
            writeln!(w, "{v:.16e}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let (header, values) = read_value_file(r)?;
        match header.as_slice() {
            [f, n, count] if f == "field" && n == "n" => check_count(count, values.len())?,
            _ => return Err(Error::parse(1, "expected `field n <count>`")),
        }
        Self::new(values)
    }
}

impl Deref for ResistivityField {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.0
    }
}

fn check_rho(rho: &[f64]) -> Result<()> {
    for (e, &r) in rho.iter().enumerate() {
        if !(r.is_finite() && r > 0.0) {
            return Err(Error::Domain(format!(
                "resistivity of element {e} must be finite and positive, got {r}"
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StimulationPattern {
    pub source: usize,
    pub sink: usize,
    pub current: f64,
}

/// Drive patterns plus, per pattern, the differential voltage pairs
/// `(e+, e-)` read as `φ(e+) - φ(e-)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Protocol {
    pub name: String,
    pub patterns: Vec<StimulationPattern>,
    pub measurements: Vec<Vec<(usize, usize)>>,
}

impl Protocol {
    /// Adjacent drive, adjacent differential measurement. Pattern `p` drives
    /// `(p, p+1)`; it reads pairs `(q, q+1)` for ascending `q`, skipping any
    /// pair that touches `p` or `p+1`.
    pub fn adjacent(n_electrodes: usize, current: f64) -> Result<Self> {
        if n_electrodes < 4 {
            return Err(Error::Config(format!(
                "adjacent protocol needs at least 4 electrodes, got {n_electrodes}"
            )));
        }
        let l = n_electrodes;
        let mut patterns = Vec::with_capacity(l);
        let mut measurements = Vec::with_capacity(l);
        for p in 0..l {
            let (src, snk) = (p, (p + 1) % l);
            patterns.push(StimulationPattern {
                source: src,
                sink: snk,
                current,
            });
            measurements.push(
                (0..l)
                    .map(|q| (q, (q + 1) % l))
                    .filter(|&(a, b)| a != src && a != snk && b != src && b != snk)
                    .collect(),
            );
        }
        Ok(Self {
            name: "adjacent".into(),
            patterns,
            measurements,
        })
    }

    pub fn n_measurements(&self) -> usize {
        self.measurements.iter().map(Vec::len).sum()
    }

    pub fn check(&self, n_electrodes: usize) -> Result<()> {
        if self.patterns.len() != self.measurements.len() {
            return Err(Error::Config("one measurement list per pattern required".into()));
        }
        for (k, (p, pairs)) in self.patterns.iter().zip(&self.measurements).enumerate() {
            if p.source == p.sink {
                return Err(Error::Config(format!("pattern {k} drives a single electrode")));
            }
            if p.source >= n_electrodes || p.sink >= n_electrodes {
                return Err(Error::Config(format!("pattern {k} references a missing electrode")));
            }
            if !p.current.is_finite() {
                return Err(Error::Config(format!("pattern {k} has a non-finite current")));
            }
            for &(a, b) in pairs {
                if a >= n_electrodes || b >= n_electrodes || a == b {
                    return Err(Error::Config(format!("pattern {k} has an invalid pair ({a}, {b})")));
                }
                if [a, b].iter().any(|&e| e == p.source || e == p.sink) {
                    return Err(Error::Config(format!(
                        "pattern {k} measures on its own driving electrodes"
                    )));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PotentialField {
    pub phi: Vec<f64>,
}

/// Flat voltage vector in canonical protocol order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasurementSet {
    pub protocol: String,
    pub values: Vec<f64>,
}

impl MeasurementSet {
    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "protocol {} n {}", self.protocol, self.values.len())?;
        for v in &self.values {
            writeln!(w, "{v:.16e}")?;
        }
        Ok(())
    }

    pub fn read_from<R: BufRead>(r: R) -> Result<Self> {
        let (header, values) = read_value_file(r)?;
        let protocol = match header.as_slice() {
            [p, name, n, count] if p == "protocol" && n == "n" => {
                check_count(count, values.len())?;
                name.clone()
            }
            _ => return Err(Error::parse(1, "expected `protocol <name> n <count>`")),
        };
        Ok(Self { protocol, values })
    }
}

fn check_count(count: &str, got: usize) -> Result<()> {
    let n: usize = count
        .parse()
        .map_err(|_| Error::parse(1, format!("bad count `{count}`")))?;
    if n != got {
        return Err(Error::parse(1, format!("header announces {n} values, found {got}")));
    }
    Ok(())
}

fn read_value_file<R: BufRead>(r: R) -> Result<(Vec<String>, Vec<f64>)> {
    let mut header = None;
    let mut values = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() {
            continue;
        }
        if header.is_none() {
            header = Some(t.split_whitespace().map(str::to_owned).collect());
            continue;
        }
        values.push(
            t.parse::<f64>()
                .map_err(|e| Error::parse(i + 1, format!("`{t}`: {e}")))?,
        );
    }
    Ok((header.ok_or_else(|| Error::parse(0, "empty file"))?, values))
}

/// Mesh and protocol bound together with the per-element data reused by every
/// solve. Shareable across threads; forward-solve and Jacobian calls are
/// counted atomically.
#[derive(Debug)]
pub struct ForwardModel {
    mesh: Mesh,
    protocol: Protocol,
    electrode_nodes: Vec<usize>,
    unit_local: Vec<[[f64; 3]; 3]>,
    scatter: Vec<[[usize; 3]; 3]>,
    pattern: SkylineMatrix,
    forward_solves: AtomicUsize,
    jacobians: AtomicUsize,
}

impl Clone for ForwardModel {
    fn clone(&self) -> Self {
        Self {
            mesh: self.mesh.clone(),
            protocol: self.protocol.clone(),
            electrode_nodes: self.electrode_nodes.clone(),
            unit_local: self.unit_local.clone(),
            scatter: self.scatter.clone(),
            pattern: self.pattern.clone(),
            forward_solves: AtomicUsize::new(self.forward_solves()),
            jacobians: AtomicUsize::new(self.jacobians()),
        }
    }
}

impl ForwardModel {
    pub fn new(mesh: &Mesh, protocol: &Protocol) -> Result<Self> {
        protocol.check(mesh.n_electrodes())?;
        let n = mesh.n_nodes();
        if n < 2 {
            return Err(Error::Config("mesh needs at least two nodes".into()));
        }
        let unit_local = (0..mesh.n_elements())
            .map(|e| element_geometry(mesh, e).map(|g| g.unit_stiffness()))
            .collect::<Result<Vec<_>>>()?;

        let mut first: Vec<usize> = (0..n).collect();
        for el in &mesh.elements {
            let lo = *el.nodes.iter().min().unwrap();
            for &v in &el.nodes {
                first[v] = first[v].min(lo);
            }
        }
        let pattern = SkylineMatrix::zeros(first);
        let scatter = mesh
            .elements
            .iter()
            .map(|el| {
                let mut s = [[0; 3]; 3];
                for i in 0..3 {
                    for j in 0..3 {
                        s[i][j] = pattern.offset(el.nodes[i], el.nodes[j]).unwrap();
                    }
                }
                s
            })
            .collect();

        Ok(Self {
            mesh: mesh.clone(),
            protocol: protocol.clone(),
            electrode_nodes: mesh.electrodes.iter().map(|e| e.node).collect(),
            unit_local,
            scatter,
            pattern,
            forward_solves: AtomicUsize::new(0),
            jacobians: AtomicUsize::new(0),
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn protocol(&self) -> &Protocol {
        &self.protocol
    }

    pub fn n_elements(&self) -> usize {
        self.mesh.n_elements()
    }

    pub fn n_measurements(&self) -> usize {
        self.protocol.n_measurements()
    }

    pub fn forward_solves(&self) -> usize {
        self.forward_solves.load(Ordering::Relaxed)
    }

    pub fn jacobians(&self) -> usize {
        self.jacobians.load(Ordering::Relaxed)
    }

    pub fn reset_counters(&self) {
        self.forward_solves.store(0, Ordering::Relaxed);
        self.jacobians.store(0, Ordering::Relaxed);
    }

    fn check_len(&self, rho: &[f64]) -> Result<()> {
        if rho.len() != self.n_elements() {
            return Err(Error::Domain(format!(
                "resistivity has {} entries, mesh has {} elements",
                rho.len(),
                self.n_elements()
            )));
        }
        check_rho(rho)
    }

    /// Global stiffness matrix before grounding; element `e` contributes its
    /// unit local matrix scaled by `1/ρₑ`.
    pub fn stiffness(&self, rho: &[f64]) -> Result<SkylineMatrix> {
        self.check_len(rho)?;
        let mut k = self.pattern.clone();
        let values = k.values_mut();
        for ((local, scatter), &r) in self.unit_local.iter().zip(&self.scatter).zip(rho) {
            let sigma = 1.0 / r;
            for i in 0..3 {
                for j in 0..=i {
                    values[scatter[i][j]] += sigma * local[i][j];
                }
            }
        }
        Ok(k)
    }

    fn factor(&self, rho: &[f64]) -> Result<SkylineCholesky> {
        self.stiffness(rho)?
            .trailing(GROUND_NODE + 1)
            .cholesky()
            .map_err(|e| Error::Numerical(format!("grounded stiffness matrix: {e}")))
    }

    /// Nodal potential for unit current entering at electrode `a` and leaving at `b`.
    fn unit_field(&self, chol: &SkylineCholesky, a: usize, b: usize) -> Vec<f64> {
        let mut rhs = vec![0.0; self.mesh.n_nodes()];
        rhs[self.electrode_nodes[a]] += 1.0;
        rhs[self.electrode_nodes[b]] -= 1.0;
        let mut reduced = rhs.split_off(GROUND_NODE + 1);
        chol.solve_in_place(&mut reduced);
        let mut phi = vec![0.0; GROUND_NODE + 1];
        phi.extend(reduced);
        phi
    }

    pub fn solve_pattern(&self, rho: &[f64], pattern: &StimulationPattern) -> Result<PotentialField> {
        let n_el = self.mesh.n_electrodes();
        if pattern.source >= n_el || pattern.sink >= n_el || pattern.source == pattern.sink {
            return Err(Error::Domain(format!(
                "invalid stimulation pattern {} -> {}",
                pattern.source, pattern.sink
            )));
        }
        let chol = self.factor(rho)?;
        let mut phi = self.unit_field(&chol, pattern.source, pattern.sink);
        for v in &mut phi {
            *v *= pattern.current;
        }
        Ok(PotentialField { phi })
    }

    /// Potential for an arbitrary nodal load vector with the ground node held
    /// at zero; the ground absorbs any net current.
    pub fn solve_load(&self, rho: &[f64], load: &[f64]) -> Result<PotentialField> {
        if load.len() != self.mesh.n_nodes() {
            return Err(Error::Domain(format!(
                "load has {} entries, mesh has {} nodes",
                load.len(),
                self.mesh.n_nodes()
            )));
        }
        let chol = self.factor(rho)?;
        let mut reduced = load[GROUND_NODE + 1..].to_vec();
        chol.solve_in_place(&mut reduced);
        let mut phi = vec![0.0; GROUND_NODE + 1];
        phi.extend(reduced);
        Ok(PotentialField { phi })
    }

    fn measure(&self, phi_unit: &[f64], current: f64, a: usize, b: usize) -> f64 {
        current * (phi_unit[self.electrode_nodes[a]] - phi_unit[self.electrode_nodes[b]])
    }

    /// `h(ρ)` in canonical protocol order.
    pub fn forward(&self, rho: &[f64]) -> Result<MeasurementSet> {
        let chol = self.factor(rho)?;
        self.forward_solves.fetch_add(1, Ordering::Relaxed);
        let mut values = Vec::with_capacity(self.n_measurements());
        for (p, pairs) in self.protocol.patterns.iter().zip(&self.protocol.measurements) {
            let u = self.unit_field(&chol, p.source, p.sink);
            values.extend(pairs.iter().map(|&(a, b)| self.measure(&u, p.current, a, b)));
        }
        Ok(MeasurementSet {
            protocol: self.protocol.name.clone(),
            values,
        })
    }

    /// Measurements and `∂h/∂ρ` (rows: measurements, columns: elements).
    ///
    /// With `σ = 1/ρ`, `∂V/∂σₑ = -wᵀ Kₑ u` where `u` is the drive field and
    /// `w` the field of unit current through the measurement pair; the chain
    /// rule gives `∂V/∂ρₑ = wᵀ Kₑ u / ρₑ²` for the unit-conductivity `Kₑ`.
    pub fn jacobian(&self, rho: &[f64]) -> Result<(MeasurementSet, DMatrix<f64>)> {
        let chol = self.factor(rho)?;
        self.jacobians.fetch_add(1, Ordering::Relaxed);

        let mut fields: HashMap<(usize, usize), Vec<f64>> = HashMap::new();
        let mut field = |a: usize, b: usize| -> (usize, usize, f64) {
            let key = (a.min(b), a.max(b));
            fields
                .entry(key)
                .or_insert_with(|| self.unit_field(&chol, key.0, key.1));
            (key.0, key.1, if a < b { 1.0 } else { -1.0 })
        };
        let mut rows = Vec::with_capacity(self.n_measurements());
        for (p, pairs) in self.protocol.patterns.iter().zip(&self.protocol.measurements) {
            let drive = field(p.source, p.sink);
            for &(a, b) in pairs {
                rows.push((drive, field(a, b), p.current, a, b));
            }
        }

        let n_el = self.n_elements();
        let mut jac = DMatrix::zeros(rows.len(), n_el);
        let mut values = Vec::with_capacity(rows.len());
        for (m, &(drive, meas, current, a, b)) in rows.iter().enumerate() {
            let u = &fields[&(drive.0, drive.1)];
            let w = &fields[&(meas.0, meas.1)];
            let scale = current * drive.2 * meas.2;
            values.push(drive.2 * self.measure(u, current, a, b));
            for e in 0..n_el {
                let nodes = self.mesh.elements[e].nodes;
                let k = &self.unit_local[e];
                let mut s = 0.0;
                for i in 0..3 {
                    let ku: f64 = (0..3).map(|j| k[i][j] * u[nodes[j]]).sum();
                    s += w[nodes[i]] * ku;
                }
                jac[(m, e)] = scale * s / (rho[e] * rho[e]);
            }
        }
        Ok((
            MeasurementSet {
                protocol: self.protocol.name.clone(),
                values,
            },
            jac,
        ))
    }
}

pub fn assemble_stiffness(mesh: &Mesh, rho: &[f64]) -> Result<SkylineMatrix> {
    let protocol = Protocol {
        name: String::new(),
        patterns: Vec::new(),
        measurements: Vec::new(),
    };
    ForwardModel::new(mesh, &protocol)?.stiffness(rho)
}

pub fn solve_pattern(mesh: &Mesh, rho: &[f64], pattern: &StimulationPattern) -> Result<PotentialField> {
    let protocol = Protocol {
        name: String::new(),
        patterns: Vec::new(),
        measurements: Vec::new(),
    };
    ForwardModel::new(mesh, &protocol)?.solve_pattern(rho, pattern)
}

pub fn forward_solve(mesh: &Mesh, rho: &[f64], protocol: &Protocol) -> Result<MeasurementSet> {
    ForwardModel::new(mesh, protocol)?.forward(rho)
}

pub fn jacobian(mesh: &Mesh, rho: &[f64], protocol: &Protocol) -> Result<DMatrix<f64>> {
    Ok(ForwardModel::new(mesh, protocol)?.jacobian(rho)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_disk_mesh, Element, Node};

    fn single_triangle() -> Mesh {
        let nodes = vec![
            Node { id: 0, x: 0.0, y: 0.0 },
            Node { id: 1, x: 1.0, y: 0.0 },
            Node { id: 2, x: 0.0, y: 1.0 },
        ];
        let el = Element {
            nodes: [0, 1, 2],
            region: 0,
        };
        Mesh::from_parts(nodes, vec![el], &[0, 1, 2]).unwrap()
    }

    #[test]
    fn unit_right_triangle_stiffness() {
        let k = assemble_stiffness(&single_triangle(), &[1.0]).unwrap();
        let expected = [[1.0, -0.5, -0.5], [-0.5, 0.5, 0.0], [-0.5, 0.0, 0.5]];
        for i in 0..3 {
            for j in 0..3 {
                assert!((k.get(i, j) - expected[i][j]).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn stiffness_annihilates_constants() {
        let mesh = build_disk_mesh(6, 8).unwrap();
        let rho: Vec<f64> = (0..mesh.n_elements()).map(|e| 0.5 + (e % 7) as f64 * 0.3).collect();
        let k = assemble_stiffness(&mesh, &rho).unwrap();
        let max = k.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let r = k.mul_vec(&vec![1.0; mesh.n_nodes()]);
        assert!(r.iter().all(|v| v.abs() <= 1e-12 * max));
    }

    #[test]
    fn stiffness_scales_inversely_with_rho() {
        let mesh = build_disk_mesh(3, 4).unwrap();
        let rho: Vec<f64> = (0..mesh.n_elements()).map(|e| 1.0 + e as f64 * 0.01).collect();
        let k1 = assemble_stiffness(&mesh, &rho).unwrap();
        let scaled: Vec<f64> = rho.iter().map(|r| r * 4.0).collect();
        let k4 = assemble_stiffness(&mesh, &scaled).unwrap();
        for (a, b) in k1.values().iter().zip(k4.values()) {
            assert!((a / 4.0 - b).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }

    #[test]
    fn non_positive_rho_names_the_element() {
        let mesh = build_disk_mesh(2, 4).unwrap();
        let mut rho = vec![1.0; mesh.n_elements()];
        rho[7] = 0.0;
        match assemble_stiffness(&mesh, &rho) {
            Err(Error::Domain(msg)) => assert!(msg.contains("element 7"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_current_gives_zero_potential() {
        let mesh = build_disk_mesh(4, 16).unwrap();
        let rho = vec![1.0; mesh.n_elements()];
        let p = StimulationPattern {
            source: 0,
            sink: 8,
            current: 0.0,
        };
        let phi = solve_pattern(&mesh, &rho, &p).unwrap();
        assert!(phi.phi.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adjacent_protocol_counts() {
        let p = Protocol::adjacent(16, 1.0).unwrap();
        assert_eq!(p.patterns.len(), 16);
        assert!(p.measurements.iter().all(|m| m.len() == 13));
        assert_eq!(p.n_measurements(), 208);
        assert_eq!(p.measurements[0][0], (2, 3));
        assert_eq!(p.measurements[0][12], (14, 15));
        assert_eq!(p.measurements[5][0], (0, 1));
        p.check(16).unwrap();
        assert_eq!(Protocol::adjacent(4, 1.0).unwrap().n_measurements(), 4);
    }

    #[test]
    fn protocol_rejects_measuring_on_drive_electrodes() {
        let mut p = Protocol::adjacent(8, 1.0).unwrap();
        p.measurements[0].push((0, 4));
        assert!(matches!(p.check(8), Err(Error::Config(_))));
    }

    #[test]
    fn measurement_file_round_trips() {
        let y = MeasurementSet {
            protocol: "adjacent".into(),
            values: vec![0.1, -2.5e-7, std::f64::consts::PI],
        };
        let mut buf = Vec::new();
        y.write_to(&mut buf).unwrap();
        assert!(buf.starts_with(b"protocol adjacent n 3\n"));
        assert_eq!(MeasurementSet::read_from(buf.as_slice()).unwrap(), y);
    }

    #[test]
    fn measurement_file_count_mismatch_is_rejected() {
        let r = MeasurementSet::read_from("protocol adjacent n 3\n1.0\n".as_bytes());
        assert!(r.is_err());
    }
}
