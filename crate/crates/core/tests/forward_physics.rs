//! Physics checks of the forward model against independent oracles.

use std::f64::consts::PI;

use eitga_core::forward::{ForwardModel, Protocol, StimulationPattern};
use eitga_core::mesh::{build_disk_mesh, element_geometry, Mesh};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Boundary potential of the unit disk (conductivity 1) for current `I`
/// entering at angle `ta` and leaving at `tb`:
/// `φ(z) = (I/π) ln(|z - ζb| / |z - ζa|) + C`.
fn disk_potential(theta: f64, ta: f64, tb: f64, current: f64) -> f64 {
    let chord = |t: f64| 2.0 * ((theta - t) / 2.0).sin().abs();
    current / PI * (chord(tb) / chord(ta)).ln()
}

fn analytic_adjacent(n_electrodes: usize) -> Vec<f64> {
    let protocol = Protocol::adjacent(n_electrodes, 1.0).unwrap();
    let angle = |e: usize| 2.0 * PI * e as f64 / n_electrodes as f64;
    let mut out = Vec::new();
    for (p, pairs) in protocol.patterns.iter().zip(&protocol.measurements) {
        for &(a, b) in pairs {
            let (ta, tb) = (angle(p.source), angle(p.sink));
            out.push(
                disk_potential(angle(a), ta, tb, p.current)
                    - disk_potential(angle(b), ta, tb, p.current),
            );
        }
    }
    out
}

fn rms_relative_error(rings: usize) -> f64 {
    let mesh = build_disk_mesh(rings, 16).unwrap();
    let model = ForwardModel::new(&mesh, &Protocol::adjacent(16, 1.0).unwrap()).unwrap();
    let fem = model.forward(&vec![1.0; mesh.n_elements()]).unwrap().values;
    let exact = analytic_adjacent(16);
    let num: f64 = fem.iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum();
    let den: f64 = exact.iter().map(|b| b * b).sum();
    (num / den).sqrt()
}

#[test]
fn homogeneous_disk_matches_log_kernel_solution() {
    let errors: Vec<f64> = [12, 16, 20].iter().map(|&k| rms_relative_error(k)).collect();
    eprintln!("rms relative errors at 12/16/20 rings: {errors:?}");
    assert!(errors[0] <= 0.03, "{errors:?}");
    assert!(errors[1] < errors[0] && errors[2] < errors[1], "{errors:?}");
}

fn random_rho(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(0.3..4.0)).collect()
}

fn model(rings: usize, electrodes: usize) -> (Mesh, ForwardModel) {
    let mesh = build_disk_mesh(rings, electrodes).unwrap();
    let protocol = Protocol::adjacent(electrodes, 1.0).unwrap();
    let model = ForwardModel::new(&mesh, &protocol).unwrap();
    (mesh, model)
}

#[test]
fn potential_solves_the_grounded_system() {
    let (mesh, model) = model(12, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let rho = random_rho(&mut rng, mesh.n_elements());
    let pattern = StimulationPattern {
        source: 3,
        sink: 11,
        current: 2.5,
    };
    let phi = model.solve_pattern(&rho, &pattern).unwrap().phi;
    assert_eq!(phi[0], 0.0);
    let k = model.stiffness(&rho).unwrap();
    let mut b = vec![0.0; mesh.n_nodes()];
    b[mesh.electrodes[3].node] = 2.5;
    b[mesh.electrodes[11].node] = -2.5;
    let r = k.mul_vec(&phi);
    let res: f64 = r.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let bn: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!(res <= 1e-10 * bn, "residual {res}");
}

#[test]
fn potential_scales_with_resistivity() {
    let (mesh, model) = model(8, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rho = random_rho(&mut rng, mesh.n_elements());
    let scaled: Vec<f64> = rho.iter().map(|r| r * 3.0).collect();
    let p = StimulationPattern {
        source: 0,
        sink: 5,
        current: 1.0,
    };
    let a = model.solve_pattern(&rho, &p).unwrap().phi;
    let b = model.solve_pattern(&scaled, &p).unwrap().phi;
    for (u, v) in a.iter().zip(&b) {
        assert!((3.0 * u - v).abs() <= 1e-10 * v.abs().max(1e-3));
    }
}

#[test]
fn opposite_drive_is_antisymmetric_across_the_perpendicular_axis() {
    // drive 0 (angle 0) -> 8 (angle π): reflecting x -> -x swaps source and
    // sink, so φ(-x, y) = -φ(x, y); reflecting y -> -y leaves φ unchanged.
    let (mesh, model) = model(12, 16);
    let rho = vec![1.0; mesh.n_elements()];
    let p = StimulationPattern {
        source: 0,
        sink: 8,
        current: 1.0,
    };
    let phi = model.solve_pattern(&rho, &p).unwrap().phi;
    let ring = &mesh.boundary_ring;
    let n = ring.len();
    for (i, &node) in ring.iter().enumerate() {
        let mirror_x = ring[(n / 2 + n - i) % n];
        let mirror_y = ring[(n - i) % n];
        assert!((phi[node] + phi[mirror_x]).abs() < 1e-9, "node {node}");
        assert!((phi[node] - phi[mirror_y]).abs() < 1e-9, "node {node}");
    }
}

#[test]
fn quarter_turn_shifts_the_measurement_vector() {
    // the mesh is invariant under quarter turns: 4 electrodes at 16, 1 at 4
    for (rings, electrodes) in [(12, 16), (4, 4)] {
        let (mesh, model) = model(rings, electrodes);
        let h = model.forward(&vec![1.0; mesh.n_elements()]).unwrap().values;
        let index = reading_index(model.protocol());
        let shift = electrodes / 4;
        let rot = |(a, b): (usize, usize)| ((a + shift) % electrodes, (b + shift) % electrodes);
        for (&(drive, pair), &i) in &index {
            let j = index[&(rot(drive), rot(pair))];
            assert!((h[i] - h[j]).abs() < 1e-9, "{rings} rings: {drive:?} {pair:?}");
        }
    }
}

type Reading = ((usize, usize), (usize, usize));

fn reading_index(protocol: &Protocol) -> std::collections::HashMap<Reading, usize> {
    let mut index = std::collections::HashMap::new();
    for (p, pairs) in protocol.patterns.iter().zip(&protocol.measurements) {
        for &pair in pairs {
            let k = index.len();
            index.insert(((p.source, p.sink), pair), k);
        }
    }
    index
}

#[test]
fn reciprocity_holds_for_random_fields() {
    let (mesh, model) = model(12, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let rho = random_rho(&mut rng, mesh.n_elements());
    let h = model.forward(&rho).unwrap().values;
    let index = reading_index(model.protocol());
    let mut checked = 0;
    for (&(drive, meas), &i) in &index {
        let j = index[&(meas, drive)];
        let scale = h[i].abs().max(h[j].abs());
        assert!((h[i] - h[j]).abs() <= 1e-9 * scale);
        checked += 1;
    }
    assert_eq!(checked, 208);
}

/// Central difference quotient `(h(ρ + δeₖ) - h(ρ - δeₖ)) / 2δ` for every
/// element, with the numerator evaluated as `-K₊⁻¹ ΔK u₋` so that no two
/// nearly equal voltages are subtracted.
fn central_differences(mesh: &Mesh, model: &ForwardModel, rho: &[f64], rel_step: f64) -> Vec<Vec<f64>> {
    let protocol = model.protocol().clone();
    let mut cols = Vec::with_capacity(mesh.n_elements());
    for e in 0..mesh.n_elements() {
        let step = rel_step * rho[e];
        let mut plus = rho.to_vec();
        plus[e] += step;
        let mut minus = rho.to_vec();
        minus[e] -= step;
        // 1/ρ₊ - 1/ρ₋ without cancellation
        let dsigma = -2.0 * step / (plus[e] * minus[e]);
        let local = element_geometry(mesh, e).unwrap().unit_stiffness();
        let nodes = mesh.elements[e].nodes;
        let mut col = Vec::new();
        for (p, pairs) in protocol.patterns.iter().zip(&protocol.measurements) {
            let u = model.solve_pattern(&minus, p).unwrap().phi;
            let mut load = vec![0.0; mesh.n_nodes()];
            for i in 0..3 {
                for j in 0..3 {
                    load[nodes[i]] -= dsigma * local[i][j] * u[nodes[j]];
                }
            }
            let du = model.solve_load(&plus, &load).unwrap().phi;
            for &(a, b) in pairs {
                let (na, nb) = (mesh.electrodes[a].node, mesh.electrodes[b].node);
                col.push((du[na] - du[nb]) / (2.0 * step));
            }
        }
        cols.push(col);
    }
    cols
}

#[test]
fn jacobian_matches_central_differences() {
    let (mesh, model) = model(6, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let rho = random_rho(&mut rng, mesh.n_elements());
    let (h, jac) = model.jacobian(&rho).unwrap();
    assert_eq!(h.values, model.forward(&rho).unwrap().values);
    let fd = central_differences(&mesh, &model, &rho, 1e-6);
    let mut worst: f64 = 0.0;
    for (e, col) in fd.iter().enumerate() {
        for (m, &d) in col.iter().enumerate() {
            let a = jac[(m, e)];
            if a.abs() > 1e-12 {
                worst = worst.max((a - d).abs() / a.abs());
            }
        }
    }
    assert!(worst <= 1e-4, "max relative error {worst}");
}

#[test]
fn jacobian_matches_naive_differences_on_large_entries() {
    // plain subtraction loses ~1e-10 absolute to rounding, so only entries
    // well above that floor are compared here
    let (mesh, model) = model(4, 8);
    let mut rng = ChaCha8Rng::seed_from_u64(19);
    let rho = random_rho(&mut rng, mesh.n_elements());
    let (_, jac) = model.jacobian(&rho).unwrap();
    for e in 0..mesh.n_elements() {
        let step = 1e-6 * rho[e];
        let mut plus = rho.clone();
        plus[e] += step;
        let mut minus = rho.clone();
        minus[e] -= step;
        let hp = model.forward(&plus).unwrap().values;
        let hm = model.forward(&minus).unwrap().values;
        for m in 0..hp.len() {
            let fd = (hp[m] - hm[m]) / (2.0 * step);
            if jac[(m, e)].abs() > 1e-5 {
                assert!((jac[(m, e)] - fd).abs() <= 1e-4 * jac[(m, e)].abs());
            }
        }
    }
}

#[test]
fn jacobian_satisfies_euler_identity() {
    let (mesh, model) = model(12, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let rho = random_rho(&mut rng, mesh.n_elements());
    let (h, jac) = model.jacobian(&rho).unwrap();
    for m in 0..h.values.len() {
        let s: f64 = (0..mesh.n_elements()).map(|e| jac[(m, e)] * rho[e]).sum();
        if h.values[m].abs() > 1e-12 {
            assert!((s - h.values[m]).abs() <= 1e-6 * h.values[m].abs());
        }
    }
    assert_eq!(model.jacobians(), 1);
}

#[test]
fn mirrored_elements_have_equal_sensitivity() {
    // under y -> -y electrode k maps to 16 - k: drive (4, 12) and reading
    // (2, 14) both flip sign, so the reading is invariant and columns of
    // mirrored elements coincide.
    let mesh = build_disk_mesh(8, 16).unwrap();
    let protocol = Protocol {
        name: "custom".into(),
        patterns: vec![StimulationPattern {
            source: 4,
            sink: 12,
            current: 1.0,
        }],
        measurements: vec![vec![(2, 14)]],
    };
    let model = ForwardModel::new(&mesh, &protocol).unwrap();
    let (_, jac) = model.jacobian(&vec![1.0; mesh.n_elements()]).unwrap();
    let centroids: Vec<[f64; 2]> = (0..mesh.n_elements()).map(|e| mesh.centroid(e)).collect();
    let mut pairs = 0;
    for a in 0..mesh.n_elements() {
        let [x, y] = centroids[a];
        if y <= 1e-9 {
            continue;
        }
        let b = centroids
            .iter()
            .position(|c| (c[0] - x).abs() < 1e-9 && (c[1] + y).abs() < 1e-9)
            .expect("mesh is mirror symmetric");
        assert!((jac[(0, a)] - jac[(0, b)]).abs() < 1e-9);
        pairs += 1;
    }
    assert_eq!(pairs, mesh.n_elements() / 2);
}
