use std::fs;

use ctxpriv::climetrics::{
    disclosure_curve, disclosure_csv, disclosure_probability, hunt_csv, montecarlo_hunt, run_scenarios,
    ClusterSizeDist, DisclosureModel, HuntCampaign, MetricsError, Scheme,
};
use ctxpriv::netsim::{build_grid, NodeId};
use ctxpriv::phantom::{Strategy as Routing, WalkConfig};
use ctxpriv::pipeline::{pair_sources, run_pipeline, PipelineConfig, PrivacyLevel, Reading};
use proptest::prelude::*;

fn dist_strategy() -> impl Strategy<Value = ClusterSizeDist> {
    (3u32..8, prop::collection::vec(0.01f64..1.0, 1..6)).prop_map(|(p_c, w)| {
        let total: f64 = w.iter().sum();
        let probs: Vec<f64> = w.iter().map(|x| x / total).collect();
        ClusterSizeDist::new(p_c, p_c + probs.len() as u32 - 1, probs).unwrap()
    })
}

proptest! {
    #[test]
    fn disclosure_is_monotone_and_bounded(dist in dist_strategy(), a in 0.0f64..=1.0, b in 0.0f64..=1.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        for model in [DisclosureModel::AllLinks, DisclosureModel::AnyLink] {
            let (p_lo, p_hi) = (disclosure_probability(lo, &dist, model).unwrap(), disclosure_probability(hi, &dist, model).unwrap());
            prop_assert!((0.0..=1.0).contains(&p_lo) && (0.0..=1.0).contains(&p_hi));
            prop_assert!(p_lo <= p_hi + 1e-12);
        }
    }
}

#[test]
fn hand_mixtures_for_uniform_three_to_five() {
    let u = ClusterSizeDist::uniform(3, 5).unwrap();
    let all = |b: f64| (b.powi(2) + b.powi(3) + b.powi(4)) / 3.0;
    let any = |b: f64| ((1.0 - (1.0 - b).powi(2)) + (1.0 - (1.0 - b).powi(3)) + (1.0 - (1.0 - b).powi(4))) / 3.0;
    assert!((all(0.5) - 0.145_833_333_333_333_3).abs() < 1e-15);
    for b in [0.1, 0.5] {
        assert!((disclosure_probability(b, &u, DisclosureModel::AllLinks).unwrap() - all(b)).abs() < 1e-12);
        assert!((disclosure_probability(b, &u, DisclosureModel::AnyLink).unwrap() - any(b)).abs() < 1e-12);
    }
}

#[test]
fn curve_csv_is_deterministic() {
    let schemes = [Scheme::Sppda, Scheme::Cpda { dist: ClusterSizeDist::uniform(3, 6).unwrap(), model: DisclosureModel::AnyLink }];
    let grid: Vec<f64> = (0..=20).map(|i| i as f64 / 20.0).collect();
    let a = disclosure_csv(&disclosure_curve(&grid, &schemes).unwrap()).unwrap();
    let b = disclosure_csv(&disclosure_curve(&grid, &schemes).unwrap()).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.lines().count(), 1 + 21 * 2);
}

#[test]
fn campaign_csv_is_deterministic() {
    let c = HuntCampaign {
        grids: vec![(8, 8)],
        strategies: vec![Routing::FloodOnly, Routing::Phantom(WalkConfig::pure(5)), Routing::two_way(5)],
        trials: 100,
        message_budget: 300,
        master_seed: 3,
    };
    let a = hunt_csv(&montecarlo_hunt(&c).unwrap().rows).unwrap();
    let b = hunt_csv(&montecarlo_hunt(&c).unwrap().rows).unwrap();
    assert_eq!(a, b);
    assert!(a.starts_with("trial,strategy,walk_hops,grid_w,grid_h,safety_period,captured,transmissions,mean_latency_hops\n"));
}

#[test]
fn eight_sources_on_5x5_pair_into_four_clusters() {
    let g = build_grid(5, 5, 1.0).unwrap();
    let sources: Vec<NodeId> = [0, 4, 6, 8, 16, 18, 20, 24].map(NodeId).to_vec();
    let p = pair_sources(&sources, &g).unwrap();
    assert_eq!(p.clusters.len(), 4);
    assert!(p.unpaired.is_empty());
    let hops_from = |a: NodeId| g.hop_distances(a).unwrap();
    let mut members: Vec<NodeId> = p.clusters.iter().flat_map(|c| [c.s1, c.s2]).collect();
    members.sort();
    assert_eq!(members, sources);
    for c in &p.clusters {
        assert!(c.af != c.s1 && c.af != c.s2);
        // AF sits no farther from either member than the members are apart
        let d = hops_from(c.s1)[c.s2.index()];
        assert!(hops_from(c.af)[c.s1.index()] <= d && hops_from(c.af)[c.s2.index()] <= d, "{c:?}");
    }
}

#[test]
fn auto_paired_full_pipeline_delivers_pair_sums() {
    let mut c = PipelineConfig::grid(6, 6, PrivacyLevel::Full, 21);
    c.readings = [(7, 10), (9, 20), (26, 30), (28, 40), (35, 99)]
        .map(|(n, v)| Reading { node: NodeId(n), value: v })
        .to_vec();
    c.auto_pair = true;
    let r = run_pipeline(&c).unwrap();
    assert_eq!(r.unpaired.len(), 1);
    let mut sums: Vec<u64> = r.hg_records.iter().map(|h| h.value).collect();
    sums.sort();
    let mut expect: Vec<u64> = r
        .clusters
        .iter()
        .map(|cl| [cl.s1, cl.s2].iter().map(|s| c.readings.iter().find(|x| x.node == *s).unwrap().value).sum())
        .collect();
    expect.sort();
    assert_eq!(sums, expect);
    let secrets: Vec<u64> = c.readings.iter().map(|r| r.value).collect();
    assert!(r.leaks(&secrets).is_empty());
}

#[test]
fn scenario_files() {
    let dir = std::env::temp_dir().join(format!("ctxpriv-scen-{}", std::process::id()));
    let _ = fs::remove_dir_all(&dir);
    fs::create_dir_all(&dir).unwrap();

    let empty = dir.join("empty.toml");
    fs::write(&empty, "").unwrap();
    let out = dir.join("out-empty");
    let s = run_scenarios(&empty, &out).unwrap();
    assert!(s.outcomes.is_empty() && s.all_passed());
    assert!(!out.exists());

    let bad = dir.join("bad.toml");
    fs::write(&bad, "[[scenario]]\nname = \"z\"\nkind = \"plan_zone\"\np_r = 0.0\nhops = 3\n").unwrap();
    match run_scenarios(&bad, &dir.join("out-bad")) {
        Err(MetricsError::Invalid { field, .. }) => assert_eq!(field, "p_r"),
        other => panic!("expected a p_r validation error, got {other:?}"),
    }

    let reference = concat!(env!("CARGO_MANIFEST_DIR"), "/../../scenarios/reference.toml");
    let s = run_scenarios(reference.as_ref(), &dir.join("out-ref")).unwrap();
    assert!(s.all_passed(), "{s:?}");
    let worked: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.join("out-ref/worked-example.json")).unwrap()).unwrap();
    assert_eq!(worked["result"]["pair_sum"]["value"], 12);
    assert_eq!(worked["fixed_round"]["f_values"], serde_json::json!([225, 675, 1365]));
    fs::remove_dir_all(&dir).unwrap();
}
