use std::collections::{BTreeSet, HashMap, VecDeque};

use immercity_core::city::{CityError, Rect};
use immercity_core::{generate_city, validate_scene, CityScene, ContentKind, LayoutParams};
use proptest::prelude::*;

fn interiors_intersect(a: &Rect, b: &Rect) -> bool {
    a.min_x < b.max_x && b.min_x < a.max_x && a.min_z < b.max_z && b.min_z < a.max_z
}

fn bfs(scene: &CityScene, start: u32) -> BTreeSet<u32> {
    let mut adj: HashMap<u32, Vec<u32>> = HashMap::new();
    for e in &scene.streets.edges {
        adj.entry(e.a).or_default().push(e.b);
        adj.entry(e.b).or_default().push(e.a);
    }
    let mut seen = BTreeSet::from([start]);
    let mut queue = VecDeque::from([start]);
    while let Some(n) = queue.pop_front() {
        for &m in adj.get(&n).into_iter().flatten() {
            if seen.insert(m) {
                queue.push_back(m);
            }
        }
    }
    seen
}

fn key_diameter(scene: &CityScene) -> f64 {
    let c: Vec<[f64; 2]> = scene.key_buildings().map(|b| b.centroid()).collect();
    let mut d: f64 = 0.0;
    for i in 0..c.len() {
        for j in i + 1..c.len() {
            d = d.max(((c[i][0] - c[j][0]).powi(2) + (c[i][1] - c[j][1]).powi(2)).sqrt());
        }
    }
    d
}

fn check(scene: &CityScene, params: &LayoutParams) {
    assert!(validate_scene(scene).is_empty(), "{:?}", validate_scene(scene));
    for (i, a) in scene.buildings.iter().enumerate() {
        assert!(params.bounds.contains_rect(&a.footprint));
        for b in &scene.buildings[i + 1..] {
            assert!(!interiors_intersect(&a.footprint, &b.footprint), "{} overlaps {}", a.id, b.id);
        }
    }
    let reach = bfs(scene, scene.spawn.node);
    for kind in ContentKind::ALL {
        let id = &scene.key_index[&kind];
        let b = scene.building(id).unwrap();
        assert_eq!(b.kind, Some(kind));
        assert!(reach.contains(&b.entrance), "{id} unreachable");
    }
    assert!(key_diameter(scene) <= 2.0 * params.key_cluster_radius);
    assert_eq!(scene.key_buildings().count(), 6);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn default_layout_holds_for_any_seed(seed in any::<u64>()) {
        let params = LayoutParams::default();
        let scene = generate_city(seed, &params).unwrap();
        check(&scene, &params);
        let again = generate_city(seed, &params).unwrap();
        prop_assert_eq!(scene.digest(), again.digest());
        prop_assert_eq!(CityScene::from_json(&scene.to_json()).unwrap(), scene);
    }

    #[test]
    fn varied_parameters(seed in any::<u64>(), fillers in 0usize..150, block in 10.0f64..26.0, radius in 30.0f64..90.0) {
        let params = LayoutParams { filler_count: fillers, block_size: block, key_cluster_radius: radius, ..LayoutParams::default() };
        match generate_city(seed, &params) {
            Ok(scene) => {
                check(&scene, &params);
                prop_assert!(scene.buildings.len() <= 6 + fillers);
            }
            Err(CityError::LayoutInfeasible(_)) => {}
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }
}

#[test]
fn seeds_differ() {
    let params = LayoutParams::default();
    let digests: BTreeSet<String> = (0..20).map(|s| generate_city(s, &params).unwrap().digest()).collect();
    assert!(digests.len() > 1);
}

#[test]
fn frozen_layout_digest() {
    // Guards against accidental changes to the generator or PRNG.
    let scene = generate_city(2018, &LayoutParams::default()).unwrap();
    assert_eq!(scene.digest(), "35f9ba2ebb768b926aaed15b06d382ddfd929cf30c0b3046f79109f2e7c2c821");
    assert_eq!(scene.buildings.len(), 66);
}
