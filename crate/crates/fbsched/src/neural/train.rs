//! Levenberg-Marquardt training with an analytic Jacobian.
//!
//! The residuals are network errors in the normalized domain, stacked
//! output-by-output over the training rows. Each epoch solves the damped
//! normal equations (J'J + mu I) d = J'r and applies theta <- theta - d,
//! shrinking mu after an accepted step and growing it after a rejected
//! one until the step improves or the damping cap ends the run.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, Normalizer};
use super::mlp::{MlpParams, PeriodNet};
use super::NeuralError;

#[derive(Debug, Clone, PartialEq)]
pub struct LmConfig {
    pub m_hidden: usize,
    /// Initial damping factor.
    pub mu0: f64,
    /// Factor applied to mu after a rejected step.
    pub mu_inc: f64,
    /// Factor dividing mu after an accepted step.
    pub mu_dec: f64,
    /// Damping above this aborts the run: the surface is locally hopeless.
    pub mu_max: f64,
    pub max_epochs: usize,
    /// Stop once the training MSE (normalized domain) drops this low.
    pub target_mse: f64,
    /// Fraction of rows withheld from training for generalization metrics.
    pub holdout_frac: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            m_hidden: 8,
            mu0: 1e-3,
            mu_inc: 10.0,
            mu_dec: 10.0,
            mu_max: 1e10,
            max_epochs: 500,
            target_mse: 1e-6,
            holdout_frac: 0.2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopReason {
    /// Training MSE reached the target.
    TargetMse,
    /// Epoch budget exhausted.
    MaxEpochs,
    /// Damping hit the cap without finding a downhill step.
    MuCap,
}

/// Errors after one accepted Levenberg–Marquardt step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub holdout_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: usize,
    pub train_rows: usize,
    pub holdout_rows: usize,
    /// Mean squared error over training rows, normalized domain.
    pub train_mse: f64,
    /// Mean squared error over holdout rows, normalized domain.
    pub holdout_mse: f64,
    /// Mean of |predicted - optimal| / optimal over holdout periods.
    pub holdout_mean_rel_err: f64,
    /// Worst single holdout period error, relative.
    pub holdout_max_rel_err: f64,
    pub final_mu: f64,
    pub stop: StopReason,
    /// One entry per accepted step, in order.
    pub history: Vec<EpochRecord>,
}

fn pack(p: &MlpParams) -> DVector<f64> {
    let mut v = Vec::with_capacity(
        p.w1.len() + p.b1.len() + p.w2.len() + p.b2.len(),
    );
    for j in 0..p.w1.nrows() {
        for i in 0..p.w1.ncols() {
            v.push(p.w1[(j, i)]);
        }
    }
    v.extend(p.b1.iter());
    for j in 0..p.w2.nrows() {
        for i in 0..p.w2.ncols() {
            v.push(p.w2[(j, i)]);
        }
    }
    v.extend(p.b2.iter());
    DVector::from_vec(v)
}

fn unpack(v: &DVector<f64>, n_in: usize, m: usize, n_out: usize) -> MlpParams {
    let mut at = 0;
    let mut take = |count: usize| {
        let slice = v.as_slice()[at..at + count].to_vec();
        at += count;
        slice
    };
    MlpParams {
        w1: DMatrix::from_row_slice(m, n_in, &take(m * n_in)),
        b1: DVector::from_vec(take(m)),
        w2: DMatrix::from_row_slice(n_out, m, &take(n_out * m)),
        b2: DVector::from_vec(take(n_out)),
    }
}

/// Residuals (prediction minus target) and their Jacobian with respect to
/// the packed parameters, over the given rows.
fn residuals_and_jacobian(
    params: &MlpParams,
    xs: &[DVector<f64>],
    ys: &[DVector<f64>],
    jacobian: &mut DMatrix<f64>,
    residuals: &mut DVector<f64>,
) {
    let n_in = params.n_in();
    let m = params.m_hidden();
    let n_out = params.n_out();
    let w1_at = 0;
    let b1_at = m * n_in;
    let w2_at = b1_at + m;
    let b2_at = w2_at + n_out * m;

    jacobian.fill(0.0);
    for (row, (x, y)) in xs.iter().zip(ys).enumerate() {
        let (pred, z) = params.forward_with_hidden(x);
        for c in 0..n_out {
            let r = row * n_out + c;
            residuals[r] = pred[c] - y[c];
            for j in 0..m {
                let zp = z[j] * (1.0 - z[j]);
                let back = params.w2[(c, j)] * zp;
                for i in 0..n_in {
                    jacobian[(r, w1_at + j * n_in + i)] = back * x[i];
                }
                jacobian[(r, b1_at + j)] = back;
                jacobian[(r, w2_at + c * m + j)] = z[j];
            }
            jacobian[(r, b2_at + c)] = 1.0;
        }
    }
}

/// Residuals and Jacobian for `params` over the given rows, with columns
/// ordered as the trainer packs them: `w1` row-major, then `b1`, then
/// `w2` row-major, then `b2`. This is the linearization every damped
/// step solves against; it is public so the analytic derivatives can be
/// audited against finite differences.
pub fn lm_linearization(
    params: &MlpParams,
    xs: &[DVector<f64>],
    ys: &[DVector<f64>],
) -> (DVector<f64>, DMatrix<f64>) {
    let n_params = pack(params).len();
    let n_res = xs.len() * params.n_out();
    let mut jacobian = DMatrix::zeros(n_res, n_params);
    let mut residuals = DVector::zeros(n_res);
    residuals_and_jacobian(params, xs, ys, &mut jacobian, &mut residuals);
    (residuals, jacobian)
}

fn mse_of(params: &MlpParams, xs: &[DVector<f64>], ys: &[DVector<f64>]) -> f64 {
    let mut sse = 0.0;
    let mut count = 0usize;
    for (x, y) in xs.iter().zip(ys) {
        let pred = params.forward(x);
        for c in 0..y.len() {
            let e = pred[c] - y[c];
            sse += e * e;
            count += 1;
        }
    }
    sse / count as f64
}

/// Train a period predictor on `dataset`.
///
/// The single seed drives both the train/holdout shuffle and the weight
/// initialization (in that order), so a (dataset, config, seed) triple
/// reproduces the same model bit for bit.
pub fn train_lm(
    dataset: &Dataset,
    config: &LmConfig,
    seed: u64,
) -> Result<(PeriodNet, TrainReport), NeuralError> {
    if dataset.rows() == 0 {
        return Err(NeuralError::EmptyDataset);
    }
    if !(0.0..1.0).contains(&config.holdout_frac) {
        return Err(NeuralError::BadHoldoutFraction(config.holdout_frac));
    }

    let rows = dataset.rows();
    let n_in = dataset.n_in();
    let n_out = dataset.n_out();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..rows).collect();
    order.shuffle(&mut rng);
    let holdout_rows = (rows as f64 * config.holdout_frac).round() as usize;
    let (holdout_idx, train_idx) = order.split_at(holdout_rows);

    let norm = Normalizer::fit(dataset)?;
    let normalized = |indices: &[usize]| -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
        let mut xs = Vec::with_capacity(indices.len());
        let mut ys = Vec::with_capacity(indices.len());
        for &r in indices {
            let fx: Vec<f64> = (0..n_in).map(|c| dataset.features[(r, c)]).collect();
            let ty: Vec<f64> = (0..n_out).map(|c| dataset.targets[(r, c)]).collect();
            xs.push(norm.normalize_input(&fx));
            ys.push(norm.normalize_target(&ty));
        }
        (xs, ys)
    };
    let (train_x, train_y) = normalized(train_idx);
    let (hold_x, hold_y) = normalized(holdout_idx);

    let mut params = MlpParams::init(n_in, config.m_hidden, n_out, &mut rng)?;
    let mut theta = pack(&params);
    let mut mu = config.mu0;
    let n_params = theta.len();
    let n_res = train_x.len() * n_out;
    let mut jacobian = DMatrix::zeros(n_res, n_params);
    let mut residuals = DVector::zeros(n_res);

    let mut train_mse = mse_of(&params, &train_x, &train_y);
    let mut epochs = 0;
    let mut stop = StopReason::MaxEpochs;
    let mut history = Vec::new();

    'training: for _ in 0..config.max_epochs {
        if train_mse <= config.target_mse {
            stop = StopReason::TargetMse;
            break;
        }
        residuals_and_jacobian(&params, &train_x, &train_y, &mut jacobian, &mut residuals);
        let jtj = jacobian.tr_mul(&jacobian);
        let jtr = jacobian.tr_mul(&residuals);

        loop {
            let mut damped = jtj.clone();
            for d in 0..n_params {
                damped[(d, d)] += mu;
            }
            let step = nalgebra::Cholesky::new(damped).map(|ch| ch.solve(&jtr));
            let improved = step.and_then(|delta| {
                let trial_theta = &theta - &delta;
                let trial = unpack(&trial_theta, n_in, config.m_hidden, n_out);
                let trial_mse = mse_of(&trial, &train_x, &train_y);
                (trial_mse < train_mse).then_some((trial_theta, trial, trial_mse))
            });
            match improved {
                Some((new_theta, new_params, new_mse)) => {
                    theta = new_theta;
                    params = new_params;
                    train_mse = new_mse;
                    mu /= config.mu_dec;
                    epochs += 1;
                    history.push(EpochRecord {
                        epoch: epochs,
                        train_mse,
                        holdout_mse: if hold_x.is_empty() {
                            train_mse
                        } else {
                            mse_of(&params, &hold_x, &hold_y)
                        },
                    });
                    break;
                }
                None => {
                    mu *= config.mu_inc;
                    if mu > config.mu_max {
                        stop = StopReason::MuCap;
                        break 'training;
                    }
                }
            }
        }
    }
    if stop == StopReason::MaxEpochs && train_mse <= config.target_mse {
        stop = StopReason::TargetMse;
    }

    // Generalization metrics; with no holdout rows they fall back to the
    // training rows so the report never divides by zero.
    let (mx, my, midx): (&[DVector<f64>], &[DVector<f64>], &[usize]) = if holdout_idx.is_empty() {
        (&train_x, &train_y, train_idx)
    } else {
        (&hold_x, &hold_y, holdout_idx)
    };
    let holdout_mse = mse_of(&params, mx, my);
    let mut rel_sum = 0.0;
    let mut rel_max = 0.0f64;
    let mut rel_count = 0usize;
    for (x, &r) in mx.iter().zip(midx) {
        let pred = norm.denormalize_output(&params.forward(x));
        for c in 0..n_out {
            let truth = dataset.targets[(r, c)];
            let rel = ((pred[c] - truth) / truth).abs();
            rel_sum += rel;
            rel_max = rel_max.max(rel);
            rel_count += 1;
        }
    }

    let report = TrainReport {
        epochs,
        train_rows: train_idx.len(),
        holdout_rows: holdout_idx.len(),
        train_mse,
        holdout_mse,
        holdout_mean_rel_err: rel_sum / rel_count as f64,
        holdout_max_rel_err: rel_max,
        final_mu: mu,
        stop,
        history,
    };
    Ok((PeriodNet { params, norm }, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn line_dataset(rows: usize) -> Dataset {
        // y = 0.25 + 0.5 x on [0, 1]
        let features = DMatrix::from_fn(rows, 1, |r, _| r as f64 / (rows - 1) as f64);
        let targets = DMatrix::from_fn(rows, 1, |r, _| {
            0.25 + 0.5 * (r as f64 / (rows - 1) as f64)
        });
        Dataset { features, targets }
    }

    #[test]
    fn fits_a_line_to_high_precision() {
        let data = line_dataset(60);
        let config = LmConfig {
            m_hidden: 4,
            target_mse: 1e-10,
            ..LmConfig::default()
        };
        let (net, report) = train_lm(&data, &config, 1).unwrap();
        assert!(
            report.train_mse <= 1e-8,
            "line fit stuck at mse {}",
            report.train_mse
        );
        let pred = net.params.forward(&net.norm.normalize_input(&[0.5]));
        let denorm = net.norm.denormalize_output(&pred);
        assert_relative_eq!(denorm[0], 0.5, epsilon = 1e-3);
    }

    #[test]
    fn fits_a_constant_almost_immediately() {
        let features = DMatrix::from_fn(40, 2, |r, c| (r + c) as f64 / 41.0);
        let targets = DMatrix::from_element(40, 1, 0.6);
        let data = Dataset { features, targets };
        let (_, report) = train_lm(&data, &LmConfig::default(), 3).unwrap();
        assert!(report.train_mse <= 1e-5);
        assert!(report.epochs <= 50, "took {} epochs", report.epochs);
    }

    #[test]
    fn training_is_deterministic_in_the_seed() {
        let data = line_dataset(30);
        let config = LmConfig {
            m_hidden: 3,
            max_epochs: 40,
            ..LmConfig::default()
        };
        let (a, ra) = train_lm(&data, &config, 9).unwrap();
        let (b, rb) = train_lm(&data, &config, 9).unwrap();
        assert_eq!(a.params, b.params);
        assert_eq!(ra, rb);
        let (c, _) = train_lm(&data, &config, 10).unwrap();
        assert_ne!(a.params, c.params);
    }

    #[test]
    fn holdout_split_sizes_follow_the_fraction() {
        let data = line_dataset(100);
        let config = LmConfig {
            m_hidden: 2,
            max_epochs: 5,
            ..LmConfig::default()
        };
        let (_, report) = train_lm(&data, &config, 0).unwrap();
        assert_eq!(report.holdout_rows, 20);
        assert_eq!(report.train_rows, 80);

        let no_holdout = LmConfig {
            holdout_frac: 0.0,
            ..config
        };
        let (_, report) = train_lm(&data, &no_holdout, 0).unwrap();
        assert_eq!(report.holdout_rows, 0);
        assert!(report.holdout_mse.is_finite());
    }

    #[test]
    fn zero_epoch_budget_reports_the_initial_state() {
        let data = line_dataset(20);
        let config = LmConfig {
            max_epochs: 0,
            ..LmConfig::default()
        };
        let (_, report) = train_lm(&data, &config, 4).unwrap();
        assert_eq!(report.epochs, 0);
        assert_eq!(report.stop, StopReason::MaxEpochs);
    }

    #[test]
    fn generous_target_stops_early() {
        let data = line_dataset(50);
        let config = LmConfig {
            target_mse: 0.5, // initial weights already satisfy this
            ..LmConfig::default()
        };
        let (_, report) = train_lm(&data, &config, 2).unwrap();
        assert_eq!(report.stop, StopReason::TargetMse);
        assert_eq!(report.epochs, 0);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let data = Dataset {
            features: DMatrix::zeros(0, 2),
            targets: DMatrix::zeros(0, 1),
        };
        assert!(matches!(
            train_lm(&data, &LmConfig::default(), 0),
            Err(NeuralError::EmptyDataset)
        ));
        let data = line_dataset(10);
        let bad = LmConfig {
            holdout_frac: 1.0,
            ..LmConfig::default()
        };
        assert!(matches!(
            train_lm(&data, &bad, 0),
            Err(NeuralError::BadHoldoutFraction(_))
        ));
    }

    #[test]
    fn jacobian_matches_central_differences() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(21);
        let params = MlpParams::init(3, 4, 2, &mut rng).unwrap();
        let x = vec![DVector::from_vec(vec![0.3, 0.7, 0.1])];
        let y = vec![DVector::from_vec(vec![0.4, 0.9])];
        let n_params = pack(&params).len();
        let mut jac = DMatrix::zeros(2, n_params);
        let mut res = DVector::zeros(2);
        residuals_and_jacobian(&params, &x, &y, &mut jac, &mut res);

        let theta = pack(&params);
        let h = 1e-6;
        for p in 0..n_params {
            for r in 0..2 {
                let mut plus = theta.clone();
                plus[p] += h;
                let mut minus = theta.clone();
                minus[p] -= h;
                let f = |t: &DVector<f64>| {
                    let net = unpack(t, 3, 4, 2);
                    net.forward(&x[0])[r] - y[0][r]
                };
                let fd = (f(&plus) - f(&minus)) / (2.0 * h);
                let scale = fd.abs().max(jac[(r, p)].abs()).max(1e-3);
                assert!(
                    (fd - jac[(r, p)]).abs() / scale <= 1e-4,
                    "theta[{p}], residual {r}: fd {fd} vs analytic {}",
                    jac[(r, p)]
                );
            }
        }
    }

    #[test]
    fn default_grid_training_generalizes() {
        let data = Dataset::default_grid().unwrap();
        let (_, report) = train_lm(&data, &LmConfig::default(), 42).unwrap();
        println!(
            "epochs {} stop {:?} train_mse {:.3e} holdout_mse {:.3e} mean_rel {:.4} max_rel {:.4}",
            report.epochs,
            report.stop,
            report.train_mse,
            report.holdout_mse,
            report.holdout_mean_rel_err,
            report.holdout_max_rel_err
        );
        assert!(
            report.holdout_mean_rel_err <= 0.03,
            "mean holdout error {} too high",
            report.holdout_mean_rel_err
        );
        assert!(
            report.holdout_max_rel_err <= 0.10,
            "max holdout error {} too high",
            report.holdout_max_rel_err
        );
    }

    #[test]
    fn pack_unpack_round_trips() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(33);
        let p = MlpParams::init(4, 8, 3, &mut rng).unwrap();
        let q = unpack(&pack(&p), 4, 8, 3);
        assert_eq!(p, q);
    }
}
