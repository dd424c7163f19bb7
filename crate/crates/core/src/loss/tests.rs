use super::*;
use crate::data::{split_dataset, Outcome};
use crate::rng::RngHandle;

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + b.abs())
}

#[test]
fn plm_hand_example() {
    let loss = plm_loss_from_residuals(&[1.0, 2.0], &[1.0, 1.0]).unwrap();
    let q = &loss.quadratic;
    assert_eq!((q.a[(0, 0)], q.b[0], q.c), (2.0, 3.0, 5.0));
    assert_eq!(q.minimizer().unwrap(), vec![1.5]);
    assert_eq!(loss.value(&[0.0]), 5.0);
    assert_eq!(loss.gradient(&[0.0]), vec![-6.0]);
    assert_eq!(loss.hessian(&[0.0])[(0, 0)], 4.0);
    // Central differences agree with the closed forms.
    let h = 1e-5;
    let fd = (loss.value(&[h]) - loss.value(&[-h])) / (2.0 * h);
    assert!(close(fd, -6.0, 1e-8));
}

#[test]
fn plm_without_treatment_variation_is_degenerate() {
    assert_eq!(
        plm_loss_from_residuals(&[1.0, 2.0, 3.0], &[0.0; 3]).unwrap_err(),
        Error::DegenerateDesign
    );
}

#[test]
fn plm_interpolation() {
    let t = [0.3, -1.2, 2.0, 0.7];
    let y: Vec<f64> = t.iter().map(|v| -0.75 * v).collect();
    let loss = plm_loss_from_residuals(&y, &t).unwrap();
    let theta = loss.quadratic.minimizer().unwrap();
    assert!((theta[0] + 0.75).abs() < 1e-14);
    assert!(loss.value(&theta).abs() < 1e-12);
}

#[test]
fn aipw_plug_in_values() {
    let p = aipw_pseudo_outcomes(&[1.0, 0.0], &[1.0, 1.0], &[0.5, 0.5], &[0.0, 0.0], &[0.0, 0.0]).unwrap();
    assert_eq!(p.0, vec![2.0, -2.0]);
    let loss = ate_loss_from_pseudo(p).unwrap();
    assert_eq!(loss.quadratic.minimizer().unwrap(), vec![0.0]);
    assert_eq!(loss.hessian(&[0.0])[(0, 0)], 4.0);
}

#[test]
fn aipw_identity_with_null_outcome_models() {
    let d = [1.0, 0.0, 1.0, 1.0, 0.0];
    let y = [0.3, -1.1, 2.5, 0.0, 4.0];
    let p = aipw_pseudo_outcomes(&d, &y, &[0.5; 5], &[0.0; 5], &[0.0; 5]).unwrap();
    for i in 0..5 {
        assert_eq!(p.0[i], 2.0 * (2.0 * d[i] - 1.0) * y[i]);
    }
}

#[test]
fn aipw_rejects_boundary_propensity() {
    assert_eq!(
        aipw_pseudo_outcomes(&[1.0], &[1.0], &[1.0], &[0.0], &[0.0]).unwrap_err(),
        Error::UnclippedPropensity(1.0)
    );
}

#[test]
fn did_hand_example() {
    // Two units, D = (1, 0), π̂ = 0.5, ΔY = (3, 1), m̂ ≡ 0, both folds equal.
    let fold = DidFold {
        d: &[1.0, 0.0],
        pi: &[0.5, 0.5],
    };
    let loss = did_loss_from_parts(fold, fold, &[3.0, 1.0], &[0.0, 0.0]).unwrap();
    assert_eq!(loss.pseudo_outcome.as_ref().unwrap().0, vec![6.0, -2.0]);
    let q = &loss.quadratic;
    assert_eq!(q.a[(0, 0)], 1.0);
    assert_eq!(q.minimizer().unwrap(), vec![2.0]);
    for theta in [-1.0, 0.0, 2.0, 3.5] {
        assert!((loss.value(&[theta]) - (theta - 2.0f64).powi(2)).abs() < 1e-12);
    }
}

#[test]
fn did_error_paths() {
    let treated = DidFold {
        d: &[1.0, 1.0],
        pi: &[0.5, 0.5],
    };
    let controls = DidFold {
        d: &[0.0, 0.0],
        pi: &[0.5, 0.5],
    };
    assert_eq!(
        did_loss_from_parts(treated, treated, &[1.0, 1.0], &[0.0, 0.0]).unwrap_err(),
        Error::ZeroControlMass
    );
    assert_eq!(
        did_loss_from_parts(controls, treated, &[1.0, 1.0], &[0.0, 0.0]).unwrap_err(),
        Error::NoTreatedInWeightFold
    );
}

#[test]
fn did_perfect_outcome_model() {
    let fold = DidFold {
        d: &[1.0, 0.0, 1.0],
        pi: &[0.4, 0.5, 0.6],
    };
    let dy = [3.0, 1.0, -2.0];
    let loss = did_loss_from_parts(fold, fold, &dy, &dy).unwrap();
    assert_eq!(loss.quadratic.minimizer().unwrap(), vec![0.0]);
    let a = loss.quadratic.a[(0, 0)];
    assert!((loss.value(&[1.5]) - a * 2.25).abs() < 1e-12);
}

#[test]
fn observation_scores_sum_to_the_gradient() {
    let plm = plm_loss_from_residuals(&[0.5, -1.0, 2.0], &[1.0, 0.2, -0.7]).unwrap();
    let fold = DidFold {
        d: &[1.0, 0.0, 1.0, 0.0],
        pi: &[0.3, 0.6, 0.5, 0.2],
    };
    let did = did_loss_from_parts(fold, fold, &[1.0, 0.5, -0.3, 2.0], &[0.1, 0.2, 0.3, 0.4]).unwrap();
    for loss in [&plm, &did] {
        for theta in [-0.7, 0.0, 1.3] {
            let total: f64 = (0..loss.observations.len())
                .map(|i| loss.observations.score(i, &[theta])[0])
                .sum();
            assert!(close(loss.obs_scale * total, loss.gradient(&[theta])[0], 1e-12));
        }
    }
}

#[test]
fn crossfit_averages_coefficients() {
    let q1 = QuadraticLoss::new(DenseMatrix::identity(1), vec![0.0], 0.0, 3).unwrap();
    let q2 = QuadraticLoss::new(DenseMatrix::identity(1), vec![2.0], 4.0, 4).unwrap();
    let cf = crossfit_loss(vec![Arc::new(q1.clone()), Arc::new(q2.clone())]).unwrap();
    let q = cf.as_quadratic().unwrap();
    assert_eq!((q.a[(0, 0)], q.b[0], q.c), (1.0, 1.0, 2.0));
    assert_eq!(q.minimizer().unwrap(), vec![1.0]);
    assert_eq!(cf.n_eff(), 7);
    for theta in [-2.0, 0.3, 5.0] {
        let avg = 0.5 * (q1.gradient(&[theta])[0] + q2.gradient(&[theta])[0]);
        assert!(close(cf.gradient(&[theta])[0], avg, 1e-15));
    }

    let same = crossfit_loss(vec![Arc::new(q2.clone()), Arc::new(q2.clone())]).unwrap();
    let s = same.as_quadratic().unwrap();
    assert_eq!((s.a[(0, 0)], s.b[0], s.c), (1.0, 2.0, 4.0));
}

#[test]
fn crossfit_rejects_mismatch() {
    let q1 = QuadraticLoss::new(DenseMatrix::identity(1), vec![0.0], 0.0, 3).unwrap();
    let q2 = QuadraticLoss::new(DenseMatrix::identity(2), vec![0.0, 0.0], 0.0, 3).unwrap();
    assert!(matches!(
        crossfit_loss(vec![Arc::new(q1.clone()), Arc::new(q2)]),
        Err(Error::DimensionMismatch(_))
    ));
    assert!(crossfit_loss(vec![Arc::new(q1)]).is_err());
}

#[test]
fn builders_use_the_requested_fold() {
    let n = 60;
    let z = RngHandle::new(1, 1).standard_normal(3 * n);
    let x = DenseMatrix::from_vec(n, 1, z[..n].to_vec()).unwrap();
    let t = z[n..2 * n].to_vec();
    let y = z[2 * n..].to_vec();
    let data = TaskDataset::new(0, Outcome::Single(y.clone()), t.clone(), x).unwrap();
    let data = split_dataset(&data, 2, &RngHandle::new(2, 0)).unwrap();
    let zero = |_: &[f64]| 0.0;
    let fold1 = data.rows(RowSelection::Fold(1)).unwrap();
    let loss = plm_loss_with(&data, &zero, &zero, &fold1).unwrap();
    let a: f64 = fold1.iter().map(|&i| t[i] * t[i]).sum();
    let b: f64 = fold1.iter().map(|&i| t[i] * y[i]).sum();
    assert!(close(loss.quadratic.a[(0, 0)], a, 1e-14));
    assert!(close(loss.quadratic.b[0], b, 1e-14));
    assert_eq!(loss.n_eff(), fold1.len());
}
