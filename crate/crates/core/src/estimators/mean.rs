use crate::error::{Error, Result};
use crate::model::{LabeledDataset, LinearModel};

/// w = (1/N) Σ y_i x_i.
pub fn mean_estimator(data: &LabeledDataset) -> Result<LinearModel> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    LinearModel::new(data.signed().column_sum() / data.n() as f64)
}

/// Signed mean over the rows of one environment.
pub fn per_env_mean(data: &LabeledDataset, env: u8) -> Result<LinearModel> {
    let rows = data.env_rows(env);
    if rows.is_empty() {
        return Err(Error::MissingEnvironment(env));
    }
    mean_estimator(&data.subset(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ProblemInstance, Vector};

    #[test]
    fn noiseless_means() {
        let inst = ProblemInstance::sample(15, (1.0, 2.0), (1.0, 0.0), (10, 10), 1e-30, 3).unwrap();
        let data = inst.sample_default().unwrap();
        let w = mean_estimator(&data).unwrap().w();
        assert!((w - (&inst.mu_c + &inst.mu_s * 0.5)).amax() < 1e-14);
        let w1 = per_env_mean(&data, 1).unwrap().w();
        assert!((w1 - (&inst.mu_c + &inst.mu_s)).amax() < 1e-14);
        let w2 = per_env_mean(&data, 2).unwrap().w();
        assert!((w2 - &inst.mu_c).amax() < 1e-14);
    }

    #[test]
    fn single_row() {
        let x = Vector::from_vec(vec![0.5, -3.0]);
        let data = LabeledDataset::from_rows(&[x.clone()], vec![-1], vec![2]).unwrap();
        assert_eq!(mean_estimator(&data).unwrap().w(), -&x);
        assert_eq!(per_env_mean(&data, 2).unwrap().w(), -x);
        assert!(matches!(per_env_mean(&data, 1), Err(Error::MissingEnvironment(1))));
        assert!(matches!(mean_estimator(&data.subset(&[])), Err(Error::EmptyDataset)));
    }

    #[test]
    fn per_env_mean_is_unbiased() {
        let d = 4;
        let sigma = 1.0;
        let draws = 10_000;
        let n_e = 3;
        let inst = ProblemInstance::sample(d, (1.0, 2.0), (0.5, 0.0), (n_e, 1), sigma, 0).unwrap();
        let mut acc = Vector::zeros(d);
        for seed in 0..draws {
            let inst = ProblemInstance { seed, ..inst.clone() };
            acc += per_env_mean(&inst.sample_default().unwrap(), 1).unwrap().w();
        }
        acc /= draws as f64;
        let target = &inst.mu_c + &inst.mu_s * 0.5;
        let se = sigma / ((n_e * draws as usize) as f64).sqrt();
        assert!((acc - target).amax() < 4.0 * se);
    }
}
