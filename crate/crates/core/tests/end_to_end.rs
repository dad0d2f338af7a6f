use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use neujive::io::{read_landmarks, to_direction, write_landmarks};
use neujive::pipeline::{group_difference_map, joint_pullback, neujive, NeujiveConfig, NeujiveResult};
use neujive::pns::{pns_fit, pns_inverse_columns, pns_scores};
use neujive::preshape::{to_preshape, LandmarkConfig};
use neujive::simulate::{planted_landmark_groups, simulate_circle_blocks, CircleSimConfig};
use neujive::sphere::{geodesic_distance, UnitVector};
use neujive::Error;

fn two_blocks(seed: u64) -> Vec<Vec<LandmarkConfig>> {
    let (a, _) = planted_landmark_groups(10, 6, 1, &[0.2, 0.0], 0.05, seed).unwrap();
    let (b, _) = planted_landmark_groups(10, 5, 3, &[0.0, 0.2], 0.05, seed + 100).unwrap();
    let b = b
        .into_iter()
        .zip(&a)
        .map(|(c, ca)| LandmarkConfig::new(c.points, ca.case_id.clone(), "second").unwrap())
        .collect();
    vec![a, b]
}

#[test]
fn landmark_files_survive_a_round_trip_through_the_pipeline() {
    let blocks = two_blocks(4);
    let mut buf = Vec::new();
    write_landmarks(&mut buf, &blocks[0]).unwrap();
    let back = read_landmarks(buf.as_slice()).unwrap();
    assert_eq!(back.len(), blocks[0].len());
    for (x, y) in back.iter().zip(&blocks[0]) {
        assert_eq!(x.case_id, y.case_id);
        assert_eq!(x.points, y.points);
    }

    let cfg = NeujiveConfig {
        seed: 9,
        ..NeujiveConfig::default()
    };
    let res = neujive(&blocks, &cfg).unwrap();
    let text = serde_json::to_string(&res).unwrap();
    let parsed: NeujiveResult = serde_json::from_str(&text).unwrap();
    assert_eq!(parsed, res);
    assert_eq!(neujive(&blocks, &cfg).unwrap(), res);
}

#[test]
fn scores_split_additively_and_pull_back_to_the_sphere() {
    let res = neujive(&two_blocks(1), &NeujiveConfig::default()).unwrap();
    for (k, b) in res.blocks.iter().enumerate() {
        let d = &b.decomposition;
        let gap = (&b.scores - &d.joint - &d.individual - &d.residual).amax();
        assert!(gap < 1e-10, "block {k}: {gap}");
        let pts = joint_pullback(&res, k).unwrap();
        assert_eq!(pts.len(), res.n_cases());
        assert!(pts.iter().all(|p| (p.coords().norm() - 1.0).abs() < 1e-12));
    }
    let maps = group_difference_map(&res, &[0; 10].iter().chain(&[1; 10]).copied().collect::<Vec<_>>(), false).unwrap();
    assert_eq!(maps.len(), 2);
    assert_eq!(maps[0].len(), 6);
    assert_eq!(maps[1].len(), 5);
}

#[test]
fn blocks_with_different_cases_are_rejected() {
    let mut blocks = two_blocks(2);
    blocks[1].pop();
    assert!(matches!(
        neujive(&blocks, &NeujiveConfig::default()),
        Err(Error::CaseMismatch(_))
    ));
}

#[test]
fn circle_blocks_share_one_joint_direction() {
    let sim = simulate_circle_blocks(&CircleSimConfig::default()).unwrap();
    let res = neujive::pipeline::neujive_spherical(&sim.blocks, &NeujiveConfig::default()).unwrap();
    assert!(res.joint_rank() >= 1);
    let theta = DMatrix::from_fn(2, sim.theta.len(), |i, j| {
        if i == 0 {
            sim.theta[j].cos()
        } else {
            sim.theta[j].sin()
        }
    });
    for b in &res.blocks {
        let cc = neujive::linalg::first_canonical_correlation(&b.decomposition.joint, &theta);
        assert!(cc > 0.9, "{cc}");
    }
}

fn sphere_points(dim: usize, raw: &[f64]) -> Vec<UnitVector> {
    raw.chunks(dim)
        .filter_map(|c| UnitVector::normalize(DVector::from_column_slice(c)).ok())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pns_inverts_its_scores(raw in prop::collection::vec(-1.0f64..1.0, 4 * 30)) {
        let pts = sphere_points(4, &raw);
        prop_assume!(pts.len() >= 10);
        let model = pns_fit(&pts).unwrap();
        let back = pns_inverse_columns(&model, &pns_scores(&model, &pts).unwrap()).unwrap();
        for (p, q) in pts.iter().zip(&back) {
            prop_assert!(geodesic_distance(p, q) < 1e-8);
        }
    }

    #[test]
    fn preshapes_are_centered_unit_vectors(raw in prop::collection::vec(-5.0f64..5.0, 12)) {
        let points = DMatrix::from_row_slice(6, 2, &raw);
        let cfg = LandmarkConfig::new(points, "c", "o").unwrap();
        match to_preshape(&cfg) {
            Ok(ps) => {
                let m = ps.landmarks();
                prop_assert!((m.norm() - 1.0).abs() < 1e-12);
                for c in m.column_iter() {
                    prop_assert!(c.sum().abs() < 1e-12);
                }
            }
            Err(e) => prop_assert!(matches!(e, Error::DegenerateShape(_))),
        }
    }

    #[test]
    fn flattened_directions_are_unit(raw in prop::collection::vec(0.1f64..3.0, 10)) {
        let cfg = LandmarkConfig::new(DMatrix::from_row_slice(5, 2, &raw), "c", "o").unwrap();
        let u = to_direction(&cfg).unwrap();
        prop_assert!((u.coords().norm() - 1.0).abs() < 1e-12);
        prop_assert_eq!(u.dim(), 10);
    }
}
