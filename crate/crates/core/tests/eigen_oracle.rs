//! Power iteration against a dense symmetric eigensolver.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thermshape::eigen::{principal_eigenvector, SquareMatrix};

#[test]
fn random_symmetric_6x6_matches_dense_solver() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let mut compared = 0;
    for _ in 0..200 {
        let a = DMatrix::<f64>::from_fn(6, 6, |_, _| rng.random_range(-1.0..1.0));
        let sym = (&a + a.transpose()) * 0.5;
        let eig = SymmetricEigen::new(sym.clone());
        let mut order: Vec<usize> = (0..6).collect();
        order.sort_by(|&i, &j| eig.eigenvalues[j].abs().partial_cmp(&eig.eigenvalues[i].abs()).unwrap());
        let (top, second) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[1]]);
        // The dominant pair is only defined when |λ1| > |λ2|.
        if top.abs() - second.abs() < 1e-3 {
            continue;
        }
        compared += 1;
        let rows: Vec<Vec<f64>> = (0..6).map(|i| (0..6).map(|j| sym[(i, j)]).collect()).collect();
        let pair = principal_eigenvector(&SquareMatrix::from_rows(&rows).unwrap()).unwrap();
        assert!((pair.value - top).abs() < 1e-6, "{} vs {top}", pair.value);
        let v = eig.eigenvectors.column(order[0]);
        let plus = (0..6).map(|i| (pair.vector[i] - v[i]).abs()).fold(0.0, f64::max);
        let minus = (0..6).map(|i| (pair.vector[i] + v[i]).abs()).fold(0.0, f64::max);
        assert!(plus.min(minus) < 1e-6, "vector error {}", plus.min(minus));
    }
    assert!(compared > 150);
}
