//! Property tests for the module invariants.

mod common;

use std::collections::HashSet;

use cellalign::cpd::{cpd_rigid, CpdConfig};
use cellalign::evaluation::{
    evaluate, nearest_pairing, pearson, regional_composition, regional_concordance, Transform,
};
use cellalign::fit::{fit_affine, fit_rigid, CorrespondenceSet};
use cellalign::geometry::normalize_angle;
use cellalign::graph::{build_graph, kde_density, sample_windows, WindowParams};
use cellalign::io::{
    ingest_cell_table_from_reader, write_cell_table_to, CellRecord, CellTable, LandmarkPair,
    LandmarkSet, Modality, SchemaConfig,
};
use cellalign::matching::{
    build_affinity, hungarian, lpm_filter, match_graphs, positions_by_id, rrwm, sinkhorn,
    AffinityParams, LpmParams, MatcherParams, RrwmParams,
};
use cellalign::synth::{generate, SynthScenario};
use cellalign::{Match, MatchSet, Point2D, RigidTransform};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::Rng;

use common::{rng, uniform};

fn point() -> impl Strategy<Value = Point2D> {
    (-1e4..1e4f64, -1e4..1e4f64).prop_map(|(x, y)| Point2D::new(x, y))
}

fn rigid() -> impl Strategy<Value = RigidTransform> {
    (-10.0..10.0f64, -500.0..500.0f64, -500.0..500.0f64)
        .prop_map(|(t, x, y)| RigidTransform::euclidean(t, x, y).unwrap())
}

fn light() -> ProptestConfig {
    ProptestConfig::with_cases(24)
}

// ---- geometry ----

proptest! {
    #[test]
    fn identity_fixes_points(p in point()) {
        let q = RigidTransform::identity().apply(p);
        prop_assert!((q.x - p.x).abs() <= 1e-12 && (q.y - p.y).abs() <= 1e-12);
    }

    #[test]
    fn rigid_preserves_distances(t in rigid(), p in point(), q in point()) {
        prop_assert!((t.apply(p).distance(&t.apply(q)) - p.distance(&q)).abs() <= 1e-9);
    }

    #[test]
    fn affine_lift_agrees(t in rigid(), p in point()) {
        prop_assert!(t.to_affine().apply(p).distance(&t.apply(p)) <= 1e-9);
    }

    #[test]
    fn full_turn_is_invisible(theta in -4.0..4.0f64, dx in -50.0..50.0f64, p in point()) {
        let a = RigidTransform::euclidean(theta, dx, 0.0).unwrap();
        let b = RigidTransform::euclidean(theta + std::f64::consts::TAU, dx, 0.0).unwrap();
        prop_assert!(a.apply(p).distance(&b.apply(p)) <= 1e-9);
    }
}

// ---- io ----

fn cell_table() -> impl Strategy<Value = CellTable> {
    prop::collection::vec((point(), 1e-6..1e6f64, any::<bool>()), 1..40).prop_map(|rows| {
        let cells = rows
            .into_iter()
            .enumerate()
            .map(|(i, (p, v, labelled))| {
                let mut c = CellRecord::new(format!("cell-{i}"), p)
                    .with_feature("area", v)
                    .with_feature("solidity", 1.0 / (1.0 + v));
                if labelled {
                    c.class_label = Some(if i % 2 == 0 { "tumor" } else { "stroma" }.into());
                }
                c
            })
            .collect();
        CellTable::new(Modality::Unspecified, cells).unwrap()
    })
}

proptest! {
    #[test]
    fn csv_round_trip(table in cell_table()) {
        let bytes = write_cell_table_to(&table, Vec::new()).unwrap();
        let back = ingest_cell_table_from_reader(bytes.as_slice(), &SchemaConfig::default()).unwrap();
        prop_assert_eq!(back.table.cells(), table.cells());
    }

    #[test]
    fn lenient_ingest_accounts_for_every_row(table in cell_table(), bad in prop::collection::vec(0usize..40, 0..6)) {
        let bytes = write_cell_table_to(&table, Vec::new()).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let bad: HashSet<usize> = bad.into_iter().filter(|&b| b < table.len()).collect();
        for &b in &bad {
            let mut fields: Vec<String> = lines[b + 1].split(',').map(String::from).collect();
            fields[1] = "not-a-number".into();
            lines[b + 1] = fields.join(",");
        }
        let schema = SchemaConfig { strict: false, ..SchemaConfig::default() };
        let joined = lines.join("\n");
        match ingest_cell_table_from_reader(joined.as_bytes(), &schema) {
            Ok(ingest) => {
                prop_assert_eq!(ingest.rows_read, table.len());
                prop_assert_eq!(ingest.table.len() + ingest.rejected.len(), table.len());
                prop_assert_eq!(ingest.rejected.len(), bad.len());
            }
            // Every row rejected leaves no table to return.
            Err(_) => prop_assert_eq!(bad.len(), table.len()),
        }
    }
}

// ---- synth ----

proptest! {
    #![proptest_config(light())]

    #[test]
    fn clean_synth_is_exact(t in rigid(), seed in any::<u64>(), n in 20usize..400) {
        let out = generate(&SynthScenario { n_points: n, transform: t, seed, ..SynthScenario::default() }).unwrap();
        let src = common::positions(&out.source);
        let tgt = common::positions(&out.target);
        prop_assert_eq!(out.truth.len(), n);
        for (s, d) in &out.truth {
            prop_assert_eq!(t.apply(src[s]).distance(&tgt[d]), 0.0);
        }
    }

    #[test]
    fn spurious_cells_are_untracked(seed in any::<u64>(), dropout in 0.0..0.5f64, spurious in 0.0..0.5f64) {
        let s = SynthScenario { n_points: 300, dropout_rate: dropout, spurious_rate: spurious, seed, ..SynthScenario::default() };
        let out = generate(&s).unwrap();
        let truth_src: HashSet<&str> = out.truth.iter().map(|(a, _)| a.as_str()).collect();
        let truth_tgt: HashSet<&str> = out.truth.iter().map(|(_, b)| b.as_str()).collect();
        prop_assert_eq!(truth_src.len(), out.truth.len());
        prop_assert_eq!(out.source.len(), 300);
        prop_assert!(truth_src.iter().all(|id| out.source.ids().any(|s| s == *id)));
        let extra = out.target.len() - out.truth.len();
        prop_assert_eq!(out.target.ids().filter(|id| !truth_tgt.contains(id)).count(), extra);
    }
}

// ---- cpd ----

fn cpd_case() -> impl Strategy<Value = (u64, f64, f64, f64)> {
    (any::<u64>(), -0.3..0.3f64, -40.0..40.0f64, -40.0..40.0f64)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn cpd_sigma2_is_monotone((seed, th, dx, dy) in cpd_case()) {
        let truth = RigidTransform::euclidean(th, dx, dy).unwrap();
        let out = generate(&SynthScenario { n_points: 300, extent: 400.0, transform: truth, jitter_sigma: 1.0, dropout_rate: 0.1, seed, ..SynthScenario::default() }).unwrap();
        let r = cpd_rigid(&out.source.positions(), &out.target.positions(), &CpdConfig::default()).unwrap();
        for w in r.sigma2_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-9, "{:?}", r.sigma2_history);
        }
    }

    #[test]
    fn cpd_rotation_equivariance((seed, th, dx, dy) in cpd_case(), extra in -0.3..0.3f64) {
        let truth = RigidTransform::euclidean(th, dx, dy).unwrap();
        let out = generate(&SynthScenario { n_points: 250, extent: 400.0, transform: truth, seed, ..SynthScenario::default() }).unwrap();
        let src = out.source.positions();
        let tgt = out.target.positions();
        let spin = RigidTransform::euclidean(extra, 0.0, 0.0).unwrap();
        let spun: Vec<Point2D> = tgt.iter().map(|&p| spin.apply(p)).collect();
        let a = cpd_rigid(&src, &tgt, &CpdConfig::default()).unwrap().transform;
        let b = cpd_rigid(&src, &spun, &CpdConfig::default()).unwrap().transform;
        let d = normalize_angle(b.theta() - a.theta() - extra).abs();
        prop_assert!(d.to_degrees() <= 0.1, "{}", d.to_degrees());
    }

    #[test]
    fn cpd_ignores_point_order((seed, th, dx, dy) in cpd_case()) {
        let truth = RigidTransform::euclidean(th, dx, dy).unwrap();
        let out = generate(&SynthScenario { n_points: 250, extent: 400.0, transform: truth, jitter_sigma: 0.5, seed, ..SynthScenario::default() }).unwrap();
        let src = out.source.positions();
        let tgt = out.target.positions();
        let mut r = rng(seed);
        let mut s2 = src.clone();
        let mut t2 = tgt.clone();
        s2.shuffle(&mut r);
        t2.shuffle(&mut r);
        let a = cpd_rigid(&src, &tgt, &CpdConfig::default()).unwrap().transform;
        let b = cpd_rigid(&s2, &t2, &CpdConfig::default()).unwrap().transform;
        prop_assert!((a.theta() - b.theta()).abs() <= 1e-9);
        prop_assert!((a.dx() - b.dx()).abs() <= 1e-9 && (a.dy() - b.dy()).abs() <= 1e-9);
    }

    #[test]
    fn cpd_without_outliers_is_exact((seed, th, dx, dy) in cpd_case()) {
        let truth = RigidTransform::euclidean(th, dx, dy).unwrap();
        let src = uniform(200, 400.0, seed);
        let tgt: Vec<Point2D> = src.iter().map(|&p| truth.apply(p)).collect();
        let cfg = CpdConfig { outlier_weight: 0.0, tolerance: 1e-12, max_iterations: 1000, ..CpdConfig::default() };
        let r = cpd_rigid(&src, &tgt, &cfg).unwrap();
        let rms = (src.iter().map(|&p| r.transform.apply(p).distance_sq(&truth.apply(p))).sum::<f64>() / 200.0).sqrt();
        prop_assert!(rms <= 1e-6, "rms {}", rms);
    }
}

// ---- graph_build ----

fn records(points: &[Point2D]) -> Vec<CellRecord> {
    points
        .iter()
        .enumerate()
        .map(|(i, p)| {
            CellRecord::new(format!("c{i}"), *p).with_feature("perimeter", 30.0 + (i % 7) as f64)
        })
        .collect()
}

proptest! {
    #![proptest_config(light())]

    #[test]
    fn edges_are_symmetric_and_complete(seed in any::<u64>(), n in 2usize..60, threshold in 1.0..40.0f64) {
        let pts = uniform(n, 100.0, seed);
        let cells = records(&pts);
        let g = build_graph(&cells.iter().collect::<Vec<_>>(), threshold, &["perimeter".to_string()]).unwrap();
        let brute = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).filter(|&(i, j)| pts[i].distance(&pts[j]) < threshold).count();
        prop_assert_eq!(g.edge_count(), brute);
        let set: HashSet<(usize, usize)> = g.edges.iter().map(|e| (e.i, e.j)).collect();
        prop_assert_eq!(set.len(), g.edge_count());
        prop_assert!(g.edges.iter().all(|e| e.i < e.j));
    }

    #[test]
    fn density_is_rigid_invariant(seed in any::<u64>(), t in rigid()) {
        let pts = uniform(150, 300.0, seed);
        let moved: Vec<Point2D> = pts.iter().map(|&p| t.apply(p)).collect();
        let a = kde_density(&pts, 25.0).unwrap();
        let b = kde_density(&moved, 25.0).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn windows_are_reproducible(seed in any::<u64>(), wseed in any::<u64>()) {
        let out = generate(&SynthScenario { n_points: 500, seed, ..SynthScenario::default() }).unwrap();
        let pts = out.source.positions();
        let d = kde_density(&pts, 25.0).unwrap();
        let t = RigidTransform::identity();
        let a = sample_windows(&pts, &d, &t, &WindowParams::default(), wseed).unwrap();
        let b = sample_windows(&pts, &d, &t, &WindowParams::default(), wseed).unwrap();
        prop_assert_eq!(a, b);
    }
}

// ---- matching ----

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hungarian_beats_random_permutations(seed in any::<u64>(), n in 1usize..25) {
        let mut r = rng(seed);
        let m = DMatrix::from_fn(n, n, |_, _| r.gen_range(0.0..1.0));
        let best = hungarian(&m).unwrap().total;
        for _ in 0..20 {
            let mut p: Vec<usize> = (0..n).collect();
            p.shuffle(&mut r);
            let s: f64 = (0..n).map(|i| m[(i, p[i])]).sum();
            prop_assert!(best >= s - 1e-12);
        }
    }

    #[test]
    fn sinkhorn_is_idempotent(seed in any::<u64>(), n in 1usize..12) {
        let mut r = rng(seed);
        let m = DMatrix::from_fn(n, n, |_, _| r.gen_range(0.01..1.0));
        let tol = 1e-9;
        let once = sinkhorn(&m, 10_000, tol).unwrap().matrix;
        let twice = sinkhorn(&once, 10_000, tol).unwrap().matrix;
        prop_assert!((once - twice).amax() <= 1e-6);
    }
}

fn window_graph(seed: u64, n: usize) -> Vec<CellRecord> {
    let out = generate(&SynthScenario {
        n_points: n,
        extent: 60.0,
        cluster_count: 0,
        seed,
        ..SynthScenario::default()
    })
    .unwrap();
    out.source.into_cells()
}

proptest! {
    #![proptest_config(light())]

    #[test]
    fn rrwm_is_nonnegative_and_converges(seed in any::<u64>(), n1 in 3usize..30, n2 in 3usize..30) {
        let names = vec!["perimeter".to_string(), "solidity".to_string()];
        let a = window_graph(seed, n1);
        let b = window_graph(seed.wrapping_add(1), n2);
        let ga = build_graph(&a.iter().collect::<Vec<_>>(), 15.0, &names).unwrap();
        let gb = build_graph(&b.iter().collect::<Vec<_>>(), 15.0, &names).unwrap();
        let k = build_affinity(&ga, &gb, &AffinityParams::default()).unwrap();
        let soft = rrwm(&k, &RrwmParams::default()).unwrap();
        prop_assert!(soft.converged);
        prop_assert!(soft.scores.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn identical_graphs_match_to_identity(seed in any::<u64>(), n in 3usize..30) {
        let names = vec!["perimeter".to_string(), "solidity".to_string(), "area".to_string()];
        let a = window_graph(seed, n);
        let g = build_graph(&a.iter().collect::<Vec<_>>(), 15.0, &names).unwrap();
        let m = match_graphs(&g, &g, &MatcherParams::default()).unwrap();
        prop_assert_eq!(m.matches.len(), n);
        prop_assert!(m.matches.iter().all(|x| x.src_id == x.tgt_id));
    }

    #[test]
    fn lpm_keeps_rigid_sets(seed in any::<u64>(), t in rigid(), n in 10usize..150) {
        let pts = uniform(n, 300.0, seed);
        let src = CellTable::from_points(&pts).unwrap();
        let tgt = src.map_positions(|p| t.apply(p));
        let matches = MatchSet::new(src.ids().map(|id| Match::new(id, id, 1.0)).collect()).unwrap();
        let out = lpm_filter(&matches, &positions_by_id(&src), &positions_by_id(&tgt), &LpmParams::default()).unwrap();
        prop_assert_eq!(out.matches.len(), n);
    }
}

// ---- transform_fit ----

proptest! {
    #[test]
    fn fit_rigid_is_equivariant(seed in any::<u64>(), t in rigid(), spin in -3.0..3.0f64) {
        let src = uniform(12, 200.0, seed);
        let pairs = CorrespondenceSet::new(src.iter().map(|&p| (p, t.apply(p))).collect()).unwrap();
        let r = RigidTransform::euclidean(spin, 0.0, 0.0).unwrap();
        let spun = CorrespondenceSet::new(src.iter().map(|&p| (p, r.apply(t.apply(p)))).collect()).unwrap();
        let a = fit_rigid(&pairs, false).unwrap();
        let b = fit_rigid(&spun, false).unwrap();
        prop_assert!(normalize_angle(b.theta() - a.theta() - spin).abs() <= 1e-9);
    }

    #[test]
    fn fit_rigid_is_locally_optimal(seed in any::<u64>(), t in rigid()) {
        let mut r = rng(seed);
        let src = uniform(20, 200.0, seed);
        let pairs: Vec<(Point2D, Point2D)> = src
            .iter()
            .map(|&p| {
                let q = t.apply(p);
                (p, Point2D::new(q.x + r.gen_range(-2.0..2.0), q.y + r.gen_range(-2.0..2.0)))
            })
            .collect();
        let set = CorrespondenceSet::new(pairs).unwrap();
        let f = fit_rigid(&set, false).unwrap();
        let best = set.rms(|p| f.apply(p));
        for _ in 0..100 {
            let g = RigidTransform::euclidean(
                f.theta() + r.gen_range(-0.01..0.01),
                f.dx() + r.gen_range(-1.0..1.0),
                f.dy() + r.gen_range(-1.0..1.0),
            )
            .unwrap();
            prop_assert!(set.rms(|p| g.apply(p)) >= best - 1e-12);
        }
    }

    #[test]
    fn fit_affine_ignores_consistent_extra_pair(seed in any::<u64>(), t in rigid(), extra in point()) {
        let src = uniform(6, 200.0, seed);
        let a = t.to_affine();
        let base = CorrespondenceSet::new(src.iter().map(|&p| (p, a.apply(p))).collect()).unwrap();
        let f = fit_affine(&base).unwrap();
        prop_assert!(f.rms <= 1e-9);
        let mut more: Vec<(Point2D, Point2D)> = base.pairs().to_vec();
        more.push((extra, f.transform.apply(extra)));
        let g = fit_affine(&CorrespondenceSet::new(more).unwrap()).unwrap().transform;
        let (u, v) = (f.transform, g);
        for (x, y) in [(u.a11, v.a11), (u.a12, v.a12), (u.a21, v.a21), (u.a22, v.a22)] {
            prop_assert!((x - y).abs() <= 1e-9);
        }
        prop_assert!((u.tx - v.tx).abs() <= 1e-7 && (u.ty - v.ty).abs() <= 1e-7);
    }
}

// ---- evaluation ----

fn landmarks(seed: u64) -> LandmarkSet {
    let pts = uniform(5, 500.0, seed);
    LandmarkSet::new(
        pts.iter()
            .map(|&p| LandmarkPair {
                source: p,
                target: p,
            })
            .collect(),
    )
    .unwrap()
}

proptest! {
    #[test]
    fn evaluation_bounds_and_symmetry(seed in any::<u64>(), a in rigid(), b in rigid()) {
        let lm = landmarks(seed);
        let (ta, tb): (Transform, Transform) = (a.into(), b.into());
        let ab = evaluate(&lm, &ta, &tb).unwrap();
        let ba = evaluate(&lm, &tb, &ta).unwrap();
        prop_assert!(ab.delta_d >= 0.0 && ab.delta_t >= 0.0);
        prop_assert!((0.0..=std::f64::consts::PI).contains(&ab.delta_theta));
        prop_assert_eq!(ab.delta_d, ba.delta_d);
    }

    #[test]
    fn pearson_of_linear_maps(x in prop::collection::vec(-1e3..1e3f64, 3..50), a in 0.1..10.0f64, b in -100.0..100.0f64) {
        let spread = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - x.iter().cloned().fold(f64::INFINITY, f64::min);
        prop_assume!(spread > 1e-3);
        let up: Vec<f64> = x.iter().map(|v| a * v + b).collect();
        let down: Vec<f64> = x.iter().map(|v| -a * v + b).collect();
        prop_assert!((pearson(&x, &up).unwrap().r - 1.0).abs() <= 1e-12);
        prop_assert!((pearson(&x, &down).unwrap().r + 1.0).abs() <= 1e-12);
    }

    #[test]
    fn census_conserves_cells(seed in any::<u64>(), dropout in 0.0..0.5f64, spurious in 0.0..0.5f64, jitter in 0.0..5.0f64, radius in 0.5..20.0f64) {
        let out = generate(&SynthScenario { n_points: 300, dropout_rate: dropout, spurious_rate: spurious, jitter_sigma: jitter, seed, ..SynthScenario::default() }).unwrap();
        let p = nearest_pairing(&out.source, &out.target, radius).unwrap();
        prop_assert_eq!(p.census.total(), out.source.len());
    }

    #[test]
    fn regional_concordance_is_bounded(seed in any::<u64>(), grid in 20.0..200.0f64) {
        let mut r = rng(seed);
        let label = |r: &mut rand_chacha::ChaCha8Rng, t: CellTable| {
            let cells = t.into_cells().into_iter().map(|mut c| {
                c.class_label = Some(if r.gen_bool(0.4) { "pos" } else { "neg" }.into());
                c
            }).collect();
            CellTable::new(Modality::Unspecified, cells).unwrap()
        };
        let a = label(&mut r, CellTable::from_points(&uniform(200, 600.0, seed)).unwrap());
        let b = label(&mut r, CellTable::from_points(&uniform(200, 600.0, seed ^ 1)).unwrap());
        let ma = regional_composition(&a, grid, "pos").unwrap().map;
        let mb = regional_composition(&b, grid, "pos").unwrap().map;
        let c = regional_concordance(&ma, &mb).unwrap();
        prop_assert!(c.occupied().all(|(_, _, v)| (0.0..=1.0).contains(&v)));
        let same = regional_concordance(&ma, &ma).unwrap();
        prop_assert!(same.occupied().all(|(_, _, v)| v == 1.0));
        prop_assert_eq!(same.occupied().count(), ma.occupied().count());
    }
}
