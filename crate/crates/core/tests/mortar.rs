//! Mortar projection errors on unit-square pairs.

use std::sync::Arc;

use ncbem::mesh::{DiagonalPattern, Mesh};
use ncbem::mortar::{assemble_mortar, projection_error, ProjectionError};
use ncbem::space::P1Space;
use ncbem::Vec3;

fn errors(fixed: &Mesh, partner: &Mesh) -> ProjectionError {
    let int = P1Space::new(Arc::new(fixed.clone()));
    let ext = P1Space::new(Arc::new(partner.clone()));
    let p = assemble_mortar(&int, &ext).unwrap();
    let sum: f64 = p.matrix.sum();
    assert!((sum - 1.0).abs() < 1e-12, "mortar sum {sum}");
    projection_error(&int.mass_matrix(), &ext.mass_matrix(), &p.matrix).unwrap()
}

#[test]
fn projection_error_decays_with_perturbation() {
    let n = 8;
    let fixed = Mesh::structured_square(n, DiagonalPattern::Alternating).unwrap();
    let h = 1.0 / n as f64;
    let sweep: Vec<[f64; 4]> = (1..=6)
        .map(|exp| {
            let sigma = 10f64.powi(-exp) * h;
            let e = errors(&fixed, &fixed.perturb_nodes(sigma, 11).unwrap());
            [e.int_fro, e.int_max, e.ext_fro, e.ext_max]
        })
        .collect();
    for w in sweep.windows(2) {
        for (a, b) in w[0].iter().zip(&w[1]) {
            // roughly linear in sigma until rounding takes over
            assert!(*b < 0.3 * a || *b < 1e-10, "{a} -> {b}");
        }
    }
    assert!(sweep[5].iter().all(|v| *v < 1e-4));
}

#[test]
fn refining_the_partner_trades_interior_for_exterior_error() {
    let fixed = Mesh::structured_grid(Vec3::zeros(), Vec3::x(), Vec3::y(), 3, 2, DiagonalPattern::Alternating).unwrap();
    assert_eq!(fixed.n_vertices(), 12);
    let ladder: Vec<ProjectionError> = [5, 11, 23, 47]
        .iter()
        .map(|&n| errors(&fixed, &Mesh::structured_square(n, DiagonalPattern::Uniform).unwrap()))
        .collect();
    for e in &ladder {
        println!("{e:?}");
    }
    for w in ladder.windows(2) {
        assert!(w[1].int_fro < w[0].int_fro);
        assert!(w[1].int_max < w[0].int_max);
        assert!(w[1].ext_fro > w[0].ext_fro);
    }
}
