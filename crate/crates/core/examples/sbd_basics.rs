//! Shape-based distance between a few hand-made series.

use thermshape::series::{align, sbd, znormalize, RawSeries};

fn main() -> thermshape::Result<()> {
    let wave: Vec<f64> = (0..32).map(|t| (t as f64 * 0.4).sin()).collect();
    let delayed: Vec<f64> = (0..32).map(|t| ((t as f64 - 3.0) * 0.4).sin()).collect();
    let scaled: Vec<f64> = wave.iter().map(|v| 40.0 + 5.0 * v).collect();
    let ramp: Vec<f64> = (0..32).map(|t| t as f64).collect();

    let x = znormalize(&RawSeries::new(wave, 0))?;
    for (name, values) in [("delayed", delayed), ("scaled+offset", scaled), ("ramp", ramp)] {
        let y = znormalize(&RawSeries::new(values, 1))?;
        let r = sbd(&x, &y)?;
        println!("{name:>14}: distance {:.4}  best lag {:+}", r.distance, r.best_lag);
        if name == "delayed" {
            let back = align(&y, r.best_lag)?;
            let again = sbd(&x, &back)?;
            println!("{:>14}  after alignment: distance {:.4}  lag {:+}", "", again.distance, again.best_lag);
        }
    }
    Ok(())
}
