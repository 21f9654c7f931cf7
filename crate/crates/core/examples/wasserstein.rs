//! Wasserstein distances between empirical measures: the 1-D quantile
//! coupling, the assignment solver and the Gaussian closed form.

use mfc_lab::measure::{wasserstein2_assignment, wasserstein2_sq_to_gaussian_1d, wasserstein_p_1d, EmpiricalMeasure};
use mfc_lab::Result;

pub fn run_example() -> Result<()> {
    let mu = EmpiricalMeasure::uniform(1, vec![-1.0, 0.0, 0.5, 2.0])?;
    let nu = EmpiricalMeasure::uniform(1, vec![0.3, -0.7, 1.9, 0.1])?;
    let quantile = wasserstein_p_1d(&mu, &nu, 2.0)?;
    let assignment = wasserstein2_assignment(&mu, &nu)?;
    println!("W2 by quantiles {quantile:.6}, by assignment {assignment:.6}");
    assert!((quantile - assignment).abs() < 1e-12);

    let shifted = mu.shifted(&[0.25]);
    println!("W2 to a translate: {:.6}", wasserstein_p_1d(&mu, &shifted, 2.0)?);

    let points: Vec<f64> = (1..=999).map(|i| normal_quantile(i as f64 / 1000.0)).collect();
    let cloud = EmpiricalMeasure::uniform(1, points)?;
    println!("W2^2 of a quantile grid to N(0,1): {:.2e}", wasserstein2_sq_to_gaussian_1d(&cloud, 0.0, 1.0)?);
    Ok(())
}

fn normal_quantile(p: f64) -> f64 {
    use statrs::distribution::{ContinuousCDF, Normal};
    Normal::new(0.0, 1.0).unwrap().inverse_cdf(p)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
