use metabayes::blr::{posterior_update, predict, rank1_update, BlrPrior};
use metabayes::data::{
    generate_cauchy, generate_sinusoid, load_tasks_csv, write_tasks_csv, CauchyConfig, CsvSchema, SinusoidConfig,
};
use metabayes::evalmetrics::{calibration_from_residuals, DEFAULT_LEVELS};
use metabayes::gpr::posterior_predict_linear;
use metabayes::model::{Method, Model, ModelOptions, Predictor};
use metabayes::numerics::{chol, matnorm_logpdf, max_rel_err, mvn_logpdf};
use metabayes::Matrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(r: usize, c: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(-2.0..2.0))
}

fn random_prior(n_phi: usize, n_y: usize, rng: &mut impl Rng) -> BlrPrior {
    let l = Matrix::from_fn(n_phi, n_phi, |i, j| {
        if i > j {
            rng.random_range(-0.5..0.5)
        } else if i == j {
            rng.random_range(0.5..1.5)
        } else {
            0.0
        }
    });
    let noise: Vec<f64> = (0..n_y).map(|_| rng.random_range(0.2..2.0)).collect();
    BlrPrior::new(random(n_phi, n_y, rng), l, Matrix::from_diag(&noise)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn cholesky_reconstructs(n in 1usize..8, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = random(n, n, &mut rng);
        let m = a.matmul_t(&a).add_diag(1.0);
        let f = chol(&m).unwrap();
        prop_assert!(max_rel_err(&f.reconstruct(), &m) < 1e-13);
    }

    #[test]
    fn sequential_updates_equal_batch(n_phi in 1usize..6, n_y in 1usize..3, n in 1usize..10, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prior = random_prior(n_phi, n_y, &mut rng);
        let phi = random(n, n_phi, &mut rng);
        let y = random(n, n_y, &mut rng);
        let batch = posterior_update(&prior, &phi, &y).unwrap();
        let mut post = prior.empty_posterior();
        for i in 0..n {
            post = rank1_update(&post, phi.row(i), y.row(i)).unwrap();
        }
        prop_assert!(max_rel_err(&post.k_tau, &batch.k_tau) < 1e-9);
        prop_assert!(max_rel_err(&post.lambda_tau(), &batch.lambda_tau()) < 1e-9);
        prop_assert_eq!(post.n_context, n);
    }

    #[test]
    fn blr_predictive_is_the_linear_gp(n_phi in 1usize..6, n_y in 1usize..4, n_c in 0usize..12, n_t in 1usize..5, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let prior = random_prior(n_phi, n_y, &mut rng);
        let (phi_c, y_c, phi_t) = (random(n_c, n_phi, &mut rng), random(n_c, n_y, &mut rng), random(n_t, n_phi, &mut rng));
        let a = predict(&posterior_update(&prior, &phi_c, &y_c).unwrap(), &phi_t).unwrap();
        let b = posterior_predict_linear(&prior, &phi_c, &y_c, &phi_t).unwrap();
        prop_assert!(max_rel_err(&b.mean, &a.mean) < 1e-8);
        prop_assert!(max_rel_err(&b.row_cov, &a.row_cov) < 1e-8);
        prop_assert_eq!(b.col_cov, a.col_cov);
    }

    #[test]
    fn matrix_normal_density_is_the_dense_density(n in 1usize..5, p in 1usize..4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (a, b) = (random(n, n, &mut rng), random(p, p, &mut rng));
        let (r, c) = (a.matmul_t(&a).add_diag(0.5), b.matmul_t(&b).add_diag(0.5));
        let (y, m) = (random(n, p, &mut rng), random(n, p, &mut rng));
        let lhs = matnorm_logpdf(&y, &m, &r, &c).unwrap();
        let rhs = mvn_logpdf(y.as_slice(), m.as_slice(), &r.kron(&c)).unwrap();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
    }

    #[test]
    fn calibration_error_is_bounded(errs in prop::collection::vec(0.0f64..5.0, 1..50), sd in 0.0f64..3.0) {
        let (e, curve) = calibration_from_residuals(&errs, &vec![sd; errs.len()], &DEFAULT_LEVELS).unwrap();
        prop_assert!((0.0..=1.0).contains(&e));
        // Wider intervals never cover less.
        prop_assert!(curve.windows(2).all(|w| w[0].1 <= w[1].1));
    }
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let opts = ModelOptions {
        hidden: vec![6],
        latent_dim: 3,
        ..Default::default()
    };
    let dir = tempfile::tempdir().unwrap();
    for method in Method::ALL {
        let model = method.build(2, 2, &opts, &mut rng).unwrap();
        let path = dir.path().join(format!("{}.json", method.as_str().replace('/', "_")));
        model.to_checkpoint(7).unwrap().save(&path).unwrap();
        let back = Model::from_checkpoint(&metabayes::autodiff::Checkpoint::load(&path).unwrap()).unwrap();
        assert_eq!(back, model);
        let (xc, yc, xt) = (random(4, 2, &mut rng), random(4, 2, &mut rng), random(3, 2, &mut rng));
        assert_eq!(
            back.predict(&xc, &yc, &xt).unwrap(),
            model.predict(&xc, &yc, &xt).unwrap()
        );
    }
}

#[test]
fn csv_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tasks.csv");
    let set = generate_cauchy(&CauchyConfig::default(), 3, 7, 5).unwrap();
    write_tasks_csv(&path, &set).unwrap();
    let schema = CsvSchema::infer(&path).unwrap();
    assert_eq!(schema, CsvSchema::standard(1, 1));
    let back = load_tasks_csv(&path, &schema).unwrap();
    assert_eq!(back.len(), 3);
    for (a, b) in back.tasks.iter().zip(&set.tasks) {
        assert_eq!(a.x, b.x);
        assert_eq!(a.y, b.y);
    }
}

#[test]
fn generated_sets_are_seed_stable() {
    let cfg = SinusoidConfig::easy();
    assert_eq!(
        generate_sinusoid(&cfg, 5, 3, 11).unwrap(),
        generate_sinusoid(&cfg, 5, 3, 11).unwrap()
    );
    assert_ne!(
        generate_sinusoid(&cfg, 5, 3, 11).unwrap(),
        generate_sinusoid(&cfg, 5, 3, 12).unwrap()
    );
}
