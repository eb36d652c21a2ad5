use std::collections::BTreeMap;

use ndarray::Array2;
use proptest::prelude::*;
use rdlab_core::attractors::{
    attractor_ode, attractor_pde, distance_to_cloud, graph_iteration, hausdorff_distance, manifold_deflection,
    AttractorCloud, CloudMetadata, CloudPoints, GraphGrid, GraphParams, OdeAttractorParams, PdeAttractorParams, PointOrigin,
    Provenance,
};
use rdlab_core::dynamics::{compute_m_and_mu, Problem};
use rdlab_core::{CosineBasis, DiffusionSpec, DomainSpec, EnergyNorm, Nonlinearity, SpectralField};

const K: usize = 6;

fn basis() -> CosineBasis {
    CosineBasis::new(&DomainSpec::new(1).unwrap(), K).unwrap()
}

fn cloud(points: CloudPoints) -> AttractorCloud {
    let len = match &points {
        CloudPoints::Vectors(v) => v.len(),
        CloudPoints::Fields(f) => f.len(),
    };
    let modes = if matches!(points, CloudPoints::Fields(_)) { K } else { 0 };
    AttractorCloud {
        points,
        origins: vec![PointOrigin::LongTime; len],
        metadata: CloudMetadata {
            components: 1,
            modes,
            eps: vec![1.0],
            nonlinearity: Nonlinearity::pitchfork(2.0),
            provenance: Provenance::LongTimeSampling,
            resolution: 0.0,
            parameters: BTreeMap::new(),
        },
    }
}

fn fields(raw: &[Vec<f64>]) -> Vec<SpectralField> {
    raw.iter()
        .map(|r| SpectralField::from_coeffs(Array2::from_shape_vec((1, K + 1), r.clone()).unwrap()).unwrap())
        .collect()
}

fn field_cloud_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    prop::collection::vec(prop::collection::vec(-2.0f64..2.0, K + 1), 1..40)
}

/// All-pairs oracle using the norm's own distance.
fn brute_one_sided(a: &[SpectralField], b: &[SpectralField], norm: &EnergyNorm) -> f64 {
    a.iter()
        .map(|p| b.iter().map(|q| norm.distance(p, q)).fold(f64::INFINITY, f64::min))
        .fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hausdorff_is_a_pseudometric(a in field_cloud_strategy(), b in field_cloud_strategy(), c in field_cloud_strategy(), d in 0.1f64..10.0) {
        let bs = basis();
        let norm = EnergyNorm::new(&DiffusionSpec::uniform(1, d).unwrap(), &bs);
        let (fa, fb, fc) = (fields(&a), fields(&b), fields(&c));
        let (ca, cb, cc) = (cloud(CloudPoints::Fields(fa.clone())), cloud(CloudPoints::Fields(fb.clone())), cloud(CloudPoints::Fields(fc)));
        let ab = hausdorff_distance(&ca, &cb, Some(&norm)).unwrap();
        let ba = hausdorff_distance(&cb, &ca, Some(&norm)).unwrap();
        prop_assert_eq!(ab.sym, ba.sym);
        prop_assert_eq!(ab.a_to_b, ba.b_to_a);
        prop_assert_eq!(hausdorff_distance(&ca, &ca, Some(&norm)).unwrap().sym, 0.0);
        let ac = hausdorff_distance(&ca, &cc, Some(&norm)).unwrap().sym;
        let bc = hausdorff_distance(&cb, &cc, Some(&norm)).unwrap().sym;
        prop_assert!(ac <= ab.sym + bc + 1e-12);

        let oracle = brute_one_sided(&fa, &fb, &norm);
        prop_assert!((ab.a_to_b - oracle).abs() <= 1e-12 * oracle.max(1.0), "{} vs {oracle}", ab.a_to_b);
        let oracle = brute_one_sided(&fb, &fa, &norm);
        prop_assert!((ab.b_to_a - oracle).abs() <= 1e-12 * oracle.max(1.0));
    }

    #[test]
    fn resolution_and_point_distance_match_brute_force(a in field_cloud_strategy(), probe in prop::collection::vec(-2.0f64..2.0, K + 1)) {
        let bs = basis();
        let norm = EnergyNorm::new(&DiffusionSpec::uniform(1, 2.0).unwrap(), &bs);
        let fa = fields(&a);
        let ca = cloud(CloudPoints::Fields(fa.clone()));
        let expected = if fa.len() == 1 {
            0.0
        } else {
            (0..fa.len())
                .map(|i| (0..fa.len()).filter(|&j| j != i).map(|j| norm.distance(&fa[i], &fa[j])).fold(f64::INFINITY, f64::min))
                .fold(0.0, f64::max)
        };
        let got = ca.resolution(Some(&norm)).unwrap();
        prop_assert!((got - expected).abs() <= 1e-12 * expected.max(1.0), "{got} vs {expected}");

        let p = &fields(&[probe])[0];
        let expected = fa.iter().map(|q| norm.distance(p, q)).fold(f64::INFINITY, f64::min);
        let got = distance_to_cloud(p, &ca, &norm).unwrap();
        prop_assert!((got - expected).abs() <= 1e-12 * expected.max(1.0));
    }

    #[test]
    fn vector_clouds_embed_as_constants(a in prop::collection::vec(-3.0f64..3.0, 1..30), b in field_cloud_strategy()) {
        let bs = basis();
        let norm = EnergyNorm::new(&DiffusionSpec::uniform(1, 1.0).unwrap(), &bs);
        let va = cloud(CloudPoints::Vectors(a.iter().map(|&x| vec![x]).collect()));
        let as_fields: Vec<SpectralField> = a.iter().map(|&x| SpectralField::constant(&[x], &bs)).collect();
        let fa = cloud(CloudPoints::Fields(as_fields));
        let fb = cloud(CloudPoints::Fields(fields(&b)));
        let mixed = hausdorff_distance(&va, &fb, Some(&norm)).unwrap();
        let lifted = hausdorff_distance(&fa, &fb, Some(&norm)).unwrap();
        prop_assert!((mixed.sym - lifted.sym).abs() <= 1e-12 * lifted.sym.max(1.0));
        // without a norm, vector clouds use the Euclidean distance of the averages
        prop_assert!(hausdorff_distance(&va, &fb, None).is_err());
        prop_assert_eq!(hausdorff_distance(&va, &va, None).unwrap().sym, 0.0);
    }
}

#[test]
fn attractor_lies_on_the_invariant_graph() {
    let f = Nonlinearity::pitchfork(2.0);
    let ode = attractor_ode(&f, &OdeAttractorParams::default()).unwrap();
    let bs = CosineBasis::new(&DomainSpec::new(1).unwrap(), 32).unwrap();
    let diff = DiffusionSpec::uniform(1, 4.0).unwrap();
    let problem = Problem::new(&bs, &diff, &f).unwrap();
    let pde = attractor_pde(problem, &ode, &PdeAttractorParams::default()).unwrap();
    let deflection = manifold_deflection(&pde.cloud, &problem.energy_norm()).unwrap();

    let mu = compute_m_and_mu(&diff, &bs, 10.0).unwrap().mu;
    let (lo, hi) = ode.cloud.bounding_box().unwrap();
    let grid = GraphGrid::uniform(&lo, &hi, 33, 0.2).unwrap();
    let est = graph_iteration(problem, &grid, &GraphParams::new(mu)).unwrap();
    assert!(est.converged && est.max_factor() < 1.0);
    let interpolation_tol = 1e-10;
    assert!(
        deflection <= est.sup_norm + interpolation_tol,
        "deflection {deflection} vs graph {}",
        est.sup_norm
    );
}
