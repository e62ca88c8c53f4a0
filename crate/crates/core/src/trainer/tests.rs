use nalgebra::DVector;

use super::*;
use crate::geometry::{random_isometry, Shift};
use crate::graphstore::Quadruple;

fn fixture() -> TemporalKG {
    let quads = vec![
        Quadruple::new(0, 0, 1, 0),
        Quadruple::new(1, 0, 2, 0),
        Quadruple::new(0, 1, 2, 1),
        Quadruple::new(0, 0, 1, 1),
        Quadruple::new(2, 1, 0, 2),
        Quadruple::new(1, 0, 2, 2),
        Quadruple::new(0, 0, 2, 3),
        Quadruple::new(2, 1, 1, 3),
    ];
    TemporalKG::new(3, 2, vec![1.0, 0.5, 1.0, 2.0], quads).unwrap()
}

fn fixture_config() -> TrainConfig {
    TrainConfig {
        epochs: 3,
        k_neg: 4,
        k_candidates: 3,
        lambda_corr: 0.1,
        lambda_rad: 0.01,
        lambda_gate: 0.01,
        learn_translations: true,
        ..TrainConfig::default()
    }
}

fn prepared(cfg: &TrainConfig) -> (ModelParams, TrainingData) {
    let kg = fixture();
    let mut params = ModelParams::init(3, 2, 4, cfg).unwrap();
    let data = TrainingData::build(&kg, cfg).unwrap();
    params.coeffs.beta = vec![0.3, -0.2];
    params.coeffs.tau = vec![0.7, 0.4];
    params.mixture.set_row(0, &[0.5, 0.3, 0.2]).unwrap();
    params.mixture.set_row(1, &[0.2, 0.2, 0.6]).unwrap();
    (params, data)
}

fn close(fd: f64, an: f64) -> bool {
    (fd - an).abs() <= 1e-4 * an.abs().max(1.0)
}

#[test]
fn gradient_matches_finite_differences() {
    let cfg = fixture_config();
    let (params, data) = prepared(&cfg);
    let lambda = 0.7;
    let grad = surrogate_j_gradient(&params, &data, &cfg, lambda).unwrap();
    let j = |p: &ModelParams| surrogate_j(p, &data, &cfg, lambda).total;
    let h = 1e-6;

    for m in 0..params.n_metrics() {
        let geom = params.kinds[m].geometry;
        for i in 0..3 {
            let x = params.embeddings[0][m].points[i].clone();
            let n = x.len();
            for k in 0..n {
                let mut dir = DVector::zeros(n);
                dir[k] = 1.0;
                if geom == Geometry::Spherical {
                    dir -= &x * x.dot(&dir);
                    if dir.norm() < 1e-3 {
                        continue;
                    }
                }
                let eval = |s: f64| {
                    let mut p = params.clone();
                    let mut y = &x + s * &dir;
                    if geom == Geometry::Spherical {
                        y /= y.norm();
                    }
                    p.embeddings[0][m].points[i] = y;
                    j(&p)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                let an = grad.embeddings[0][m][i].dot(&dir);
                assert!(close(fd, an), "metric {m} entity {i} coord {k}: fd {fd} vs {an}");
            }
        }
        for r in 0..2 {
            let g = &grad.shifts[m][r];
            for k in 0..g.len() {
                let eval = |s: f64| {
                    let mut p = params.clone();
                    match &mut p.transports[m][r].shift {
                        Shift::Translation(v) | Shift::Gyration(v) => v[k] += s,
                        Shift::GreatCircle { angle, .. } => *angle += s,
                    }
                    j(&p)
                };
                let fd = (eval(h) - eval(-h)) / (2.0 * h);
                assert!(close(fd, g[k]), "metric {m} relation {r} shift {k}: fd {fd} vs {}", g[k]);
            }
        }
    }
}

#[test]
fn zero_step_is_identity() {
    let cfg = fixture_config();
    let (params, data) = prepared(&cfg);
    let next = embedding_step(&params, &data, &cfg, 1.0, 0.0).unwrap();
    assert_eq!(next, params);
}

#[test]
fn projected_step_stays_in_domain() {
    let cfg = fixture_config();
    let (params, data) = prepared(&cfg);
    let next = embedding_step(&params, &data, &cfg, 1.0, 50.0).unwrap();
    next.validate().unwrap();
}

#[test]
fn training_is_deterministic() {
    let kg = fixture();
    let cfg = fixture_config();
    let (p1, t1) = train(&kg, &cfg).unwrap();
    let (p2, t2) = train(&kg, &cfg).unwrap();
    assert_eq!(p1, p2);
    assert_eq!(t1, t2);
    assert_eq!(t1.records.len(), 3);
    assert!(t1.reached_max_epochs);
}

#[test]
fn infinite_tolerance_stops_after_one_iteration() {
    let kg = fixture();
    let cfg = TrainConfig { tol: f64::INFINITY, epochs: 10, ..fixture_config() };
    let (_, trace) = train(&kg, &cfg).unwrap();
    assert_eq!(trace.records.len(), 1);
    assert!(trace.converged);
    assert!(!trace.reached_max_epochs);
}

#[test]
fn guarded_iterations_never_increase_j() {
    let kg = fixture();
    let cfg = TrainConfig { epochs: 8, anneal: false, tol: 0.0, ..fixture_config() };
    let (params, trace) = train(&kg, &cfg).unwrap();
    assert_eq!(trace.monotone_violations(), 0);
    for rec in &trace.records {
        assert!(rec.j_end <= rec.j_start + MONOTONE_TOL, "{} > {}", rec.j_end, rec.j_start);
    }
    params.validate().unwrap();
}

#[test]
fn gauge_change_preserves_objective_and_rankings() {
    let cfg = TrainConfig { lambda_rad: 0.0, ..fixture_config() };
    let (params, data) = prepared(&cfg);
    let mut gauged = params.clone();
    for (m, kind) in params.kinds.iter().enumerate() {
        let bounds = DomainBounds { r_h: 0.3, r_e: 1.0, ..params.bounds };
        let g = random_isometry(*kind, &bounds, 40 + m as u64);
        for x in gauged.embeddings[0][m].points.iter_mut() {
            *x = g.map(x);
        }
        for tr in gauged.transports[m].iter_mut() {
            *tr = tr.conjugate(&g);
        }
    }
    let j0 = surrogate_j(&params, &data, &cfg, 0.5).total;
    let j1 = surrogate_j(&gauged, &data, &cfg, 0.5).total;
    assert!((j0 - j1).abs() < 1e-7 * j0.abs().max(1.0), "{j0} vs {j1}");
    let s_row = [0.0, 0.4, 1.1];
    for r in 0..2 {
        for h in 0..3 {
            let a: Vec<usize> = score_rank(&params, r, h, 1, &s_row, &[0, 1, 2]).iter().map(|x| x.0).collect();
            let b: Vec<usize> = score_rank(&gauged, r, h, 1, &s_row, &[0, 1, 2]).iter().map(|x| x.0).collect();
            assert_eq!(a, b);
        }
    }
}

#[test]
fn regularizer_examples() {
    let cfg = TrainConfig { dim: 2, geometries: vec![Geometry::Euclidean, Geometry::Hyperbolic], ..TrainConfig::default() };
    let mut params = ModelParams::init(1, 1, 1, &cfg).unwrap();
    params.embeddings[0][0].points[0] = DVector::from_vec(vec![3.0, 4.0]);
    params.embeddings[0][1].points[0] = DVector::from_vec(vec![0.6, 0.0]);
    params.mixture.set_row(0, &[1.0, 0.0]).unwrap();
    let (gate, rad) = regularizers(&params, 1e-8);
    assert!((rad - (25.0 + 1.5625)).abs() < 1e-12);
    let expected_gate = (1.0f64 + 1e-8).sqrt() + 1e-4;
    assert!((gate - expected_gate).abs() < 1e-12, "{gate}");
}

#[test]
fn checkpoint_round_trip() {
    let kg = fixture();
    let cfg = fixture_config();
    let (params, _) = train(&kg, &cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_checkpoint(&params, &cfg, &path).unwrap();
    let (loaded, loaded_cfg) = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, params);
    assert_eq!(loaded_cfg, cfg);

    let blob = path.with_extension("bin");
    let bytes = std::fs::read(&blob).unwrap();
    std::fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
    assert!(matches!(load_checkpoint(&path), Err(Error::Checkpoint(_))));
}

#[test]
fn split_and_rank_metrics() {
    let kg = fixture();
    let (train_kg, test_kg, cut) = temporal_split(&kg, 0.2).unwrap();
    assert_eq!(cut, 3);
    assert!(train_kg.quadruples().iter().all(|q| q.bin < 3));
    assert!(test_kg.quadruples().iter().all(|q| q.bin >= 3));
    assert_eq!(train_kg.len() + test_kg.len(), kg.len());

    let cfg = fixture_config();
    let (params, _) = train(&train_kg, &cfg).unwrap();
    let m = evaluate_ranking(&params, &kg, test_kg.quadruples(), cfg.features).unwrap();
    assert_eq!(m.n_queries, 2);
    assert!(m.mrr > 0.0 && m.mrr <= 1.0);
    assert!(m.hits1 <= m.hits3 && m.hits3 <= m.hits10);
    assert_eq!(m.hits10, 1.0);
}

#[test]
fn random_chance_mrr_values() {
    assert_eq!(random_chance_mrr(1), 1.0);
    assert!((random_chance_mrr(2) - 0.75).abs() < 1e-15);
    assert!((random_chance_mrr(4) - 25.0 / 48.0).abs() < 1e-15);
}

#[test]
fn ties_break_by_entity_index() {
    let cfg = TrainConfig { geometries: vec![Geometry::Euclidean], ..TrainConfig::default() };
    let mut params = ModelParams::init(3, 1, 1, &cfg).unwrap();
    params.coeffs.tau = vec![0.0];
    let ranked = score_rank(&params, 0, 0, 0, &[0.0; 3], &[2, 0, 1]);
    assert_eq!(ranked.iter().map(|x| x.0).collect::<Vec<_>>(), vec![0, 1, 2]);
}

#[test]
fn features_never_see_the_current_bin() {
    let kg = fixture();
    let cfg = fixture_config();
    let data = TrainingData::build(&kg, &cfg).unwrap();
    for e in data.positives.iter().filter(|e| e.bin == 0) {
        assert_eq!(e.s_hat, 0.0);
    }
    assert_eq!(data.positives.len(), kg.len());
    assert_eq!(data.negatives.len(), kg.len() * cfg.k_neg);
}

#[test]
fn config_rejects_bad_values() {
    assert!(TrainConfig { learning_rate: 0.0, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { k_candidates: 1, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { init_radius_h: 0.99, ..TrainConfig::default() }.validate().is_err());
    assert!(TrainConfig { geometries: vec![], ..TrainConfig::default() }.validate().is_err());
    TrainConfig::default().validate().unwrap();
}
