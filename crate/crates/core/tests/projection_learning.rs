use covstream::nalgebra::DMatrix;
use covstream::projection::{
    learn_projection, optimize, orthonormality_error, project, GradientMode, ProjectionConfig,
    ProjectionMatrix, ProjectionProblem,
};
use covstream::spd::{stein_divergence, SpdMatrix};
use covstream::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Diagonally dominant matrix with `heavy` on the chosen axes.
fn class_matrix(heavy_axes: &[usize], rng: &mut ChaCha8Rng) -> SpdMatrix {
    let n = 4;
    let mut d = DMatrix::identity(n, n);
    for &i in heavy_axes {
        d[(i, i)] = 6.0;
    }
    let e = DMatrix::from_fn(n, n, |_, _| rng.random_range(-0.3..0.3));
    let x = d + &e * e.transpose();
    SpdMatrix::new((&x + x.transpose()) * 0.5).unwrap()
}

fn two_classes(count: usize, rng: &mut ChaCha8Rng) -> Vec<(SpdMatrix, u32)> {
    let mut out = Vec::new();
    for _ in 0..count {
        out.push((class_matrix(&[0, 1], rng), 1));
        out.push((class_matrix(&[2, 3], rng), 2));
    }
    out
}

fn mean_between(p: &ProjectionMatrix, data: &[(SpdMatrix, u32)]) -> f64 {
    let proj: Vec<_> = data
        .iter()
        .map(|(x, l)| (project(p, x).unwrap(), *l))
        .collect();
    let mut total = 0.0;
    let mut n = 0;
    for (i, (a, la)) in proj.iter().enumerate() {
        for (b, lb) in &proj[i + 1..] {
            if la != lb {
                total += stein_divergence(a, b).unwrap();
                n += 1;
            }
        }
    }
    total / n as f64
}

#[test]
fn learned_projection_beats_random_on_held_out_pairs() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let train = two_classes(4, &mut rng);
    let held_out = two_classes(4, &mut rng);
    let fit = learn_projection(&train, 2, &ProjectionConfig::default()).unwrap();
    assert!(fit.objective <= fit.initial_objective);
    let learned = mean_between(&fit.projection, &held_out);
    let random: Vec<f64> = (0..100)
        .map(|s| {
            mean_between(
                &ProjectionMatrix::random(4, 2, 1000 + s).unwrap(),
                &held_out,
            )
        })
        .collect();
    let beaten = random.iter().filter(|&&r| learned >= r).count();
    assert_eq!(
        beaten,
        100,
        "learned {learned}, random max {:?}",
        random.iter().cloned().fold(0.0, f64::max)
    );
}

#[test]
fn full_dimension_identity_start_never_increases() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let train = two_classes(3, &mut rng);
    let problem = ProjectionProblem::new(&train, 3, 3).unwrap();
    let identity = ProjectionMatrix::truncated_identity(4, 4).unwrap();
    let mut raw = 0.0;
    for (i, j, a) in problem.affinity().nonzero() {
        raw += a * stein_divergence(&train[i].0, &train[j].0).unwrap();
    }
    let at_identity = problem.objective(identity.matrix()).unwrap();
    assert!((at_identity - raw).abs() <= 1e-9 * raw.abs().max(1.0));
    let fit = optimize(&problem, 4, &ProjectionConfig::default()).unwrap();
    assert!(fit.objective <= at_identity);
    assert!(orthonormality_error(fit.projection.matrix()) <= 1e-6);
}

#[test]
fn finite_difference_mode_also_descends() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let train = two_classes(3, &mut rng);
    let config = ProjectionConfig {
        gradient: GradientMode::FiniteDifference,
        max_iterations: 20,
        ..ProjectionConfig::default()
    };
    let fit = learn_projection(&train, 2, &config).unwrap();
    assert!(fit.objective < fit.initial_objective);
    assert!(fit.objective_history.windows(2).all(|w| w[1] <= w[0]));
}

#[test]
fn invalid_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let train = two_classes(2, &mut rng);
    assert!(matches!(
        learn_projection(&train, 5, &ProjectionConfig::default()),
        Err(Error::InvalidConfig(_))
    ));
    assert!(matches!(
        learn_projection(&train, 0, &ProjectionConfig::default()),
        Err(Error::InvalidConfig(_))
    ));
    let mixed = vec![train[0].clone(), (SpdMatrix::identity(3), 2)];
    assert!(matches!(
        learn_projection(&mixed, 2, &ProjectionConfig::default()),
        Err(Error::DimensionMismatch { .. })
    ));
}
