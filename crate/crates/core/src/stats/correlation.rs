use super::{average_ranks, reject_nan, StatsError};

/// Pearson product-moment correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.is_empty() {
        return Err(StatsError::Empty("correlation input"));
    }
    reject_nan(x)?;
    reject_nan(y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(StatsError::ConstantInput);
    }
    Ok((sxy / libm::sqrt(sxx * syy)).clamp(-1.0, 1.0))
}

/// Spearman rank correlation: Pearson correlation of average ranks.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 3 {
        return Err(StatsError::TooFew {
            need: 3,
            got: x.len(),
        });
    }
    reject_nan(x)?;
    reject_nan(y)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_correlations() {
        let x = [3.0, 1.0, 4.0, 1.5, 9.0];
        let neg: [f64; 5] = x.map(|v| -v);
        assert_eq!(spearman(&x, &x).unwrap(), 1.0);
        assert_eq!(spearman(&x, &neg).unwrap(), -1.0);
        // Monotone but nonlinear.
        let cubed: [f64; 5] = x.map(|v| v * v * v);
        assert_eq!(spearman(&x, &cubed).unwrap(), 1.0);
    }

    #[test]
    fn constant_is_undefined() {
        assert_eq!(
            spearman(&[1.0, 2.0, 3.0], &[5.0, 5.0, 5.0]),
            Err(StatsError::ConstantInput)
        );
    }

    #[test]
    fn size_checks() {
        assert_eq!(
            spearman(&[1.0, 2.0], &[1.0, 2.0]),
            Err(StatsError::TooFew { need: 3, got: 2 })
        );
        assert_eq!(
            spearman(&[1.0, 2.0, 3.0], &[1.0, 2.0]),
            Err(StatsError::LengthMismatch(3, 2))
        );
    }
}
