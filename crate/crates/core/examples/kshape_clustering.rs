//! K-shape on two shape families with random scale, offset and delay, plus
//! automatic choice of the cluster count.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thermshape::kshape::{fit, select_cluster_count, KShapeConfig};
use thermshape::series::{znormalize, RawSeries};

fn main() -> thermshape::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let m = 40;
    let mut series = Vec::new();
    for i in 0..12 {
        let gain = rng.random_range(0.5..3.0);
        let offset = rng.random_range(-10.0..10.0);
        let shift = rng.random_range(0..4) as f64;
        let values: Vec<f64> = (0..m)
            .map(|t| {
                let t = t as f64 - shift;
                let shape = if i % 2 == 0 { (t * 0.3).sin() } else { (t / m as f64).powi(2) };
                offset + gain * shape + rng.random_range(-0.02..0.02)
            })
            .collect();
        series.push(znormalize(&RawSeries::new(values, i))?);
    }

    let model = fit(&series, &KShapeConfig::new(2).with_seed(1), None)?;
    println!("memberships       {:?}", model.memberships);
    println!("per-cluster error {:.5?}", model.per_cluster_distance);
    println!("total error       {:.5}", model.total_distance);
    println!("iterations        {} (converged: {})", model.iterations_used, model.converged);
    println!("objective trace   {:.5?}", model.objective_trace);

    let (c, _) = select_cluster_count(&series, 6, 1)?;
    println!("silhouette picks  {c} clusters");
    Ok(())
}
