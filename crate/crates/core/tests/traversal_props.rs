mod common;

use std::collections::BTreeSet;

use chaingraph_core::graph::NodeId;
use chaingraph_core::query::Direction;
use chaingraph_core::traversal::{
    beam_search_with_sims, dedup_chains, score_update, ChainStep, ReasoningChain, TraversalConfig,
};
use common::{batch_score, dfs_paths, fan_out_tree, graph, random_dag};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cfg(beam_width: usize, max_depth: usize, direction: Direction) -> TraversalConfig {
    TraversalConfig {
        beam_width,
        max_depth,
        direction,
        top_k_chains: 3,
    }
}

fn ids(v: &[usize]) -> Vec<NodeId> {
    v.iter().map(|&i| NodeId(i as u32)).collect()
}

fn chain(nodes: &[usize], score: f64) -> ReasoningChain {
    ReasoningChain {
        nodes: ids(nodes),
        steps: Vec::new(),
        score,
    }
}

proptest! {
    #[test]
    fn incremental_score_is_batch_mean(sims in prop::collection::vec(-1.0f64..1.0, 1..12)) {
        let mut s = 0.0;
        for (i, &x) in sims.iter().enumerate() {
            s = score_update(s, i + 2, x);
        }
        let mean = sims.iter().sum::<f64>() / sims.len() as f64;
        prop_assert!((s - mean).abs() < 1e-9);
    }

    #[test]
    fn chains_are_sound(seed in any::<u64>(), beam in 1usize..5, depth in 1usize..6, dir_i in 0usize..3) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(2..15);
        // Arbitrary digraph, cycles included.
        let edges: Vec<(usize, usize)> = (0..rng.random_range(1..30))
            .map(|_| (rng.random_range(0..n), rng.random_range(0..n)))
            .filter(|(a, b)| a != b)
            .collect();
        let g = graph(n, &edges);
        let sims: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let dir = Direction::ALL[dir_i];
        let starts = ids(&[0, n - 1]);
        let (chains, report) = beam_search_with_sims(&g, &starts, &sims, &cfg(beam, depth, dir), None).unwrap();
        let max_out = (0..n)
            .map(|v| common::neighbours(&g, NodeId(v as u32), dir).len())
            .max()
            .unwrap_or(0);
        prop_assert!(report.nodes_expanded <= 2 + beam * depth * max_out.max(1));
        for c in &chains {
            prop_assert!(c.len() >= 2 && c.len() <= depth + 1);
            prop_assert!(starts.contains(&c.nodes[0]));
            prop_assert_eq!(c.visited().len(), c.len());
            prop_assert_eq!(c.steps.len(), c.len() - 1);
            prop_assert!((c.score - batch_score(&c.nodes, &sims)).abs() < 1e-9);
            for (i, ChainStep { edge, along }) in c.steps.iter().enumerate() {
                let e = g.edge(*edge).unwrap();
                let (a, b) = (c.nodes[i], c.nodes[i + 1]);
                if *along {
                    prop_assert!(e.from == a && e.to == b);
                    prop_assert!(dir != Direction::Backward);
                } else {
                    prop_assert!(e.from == b && e.to == a);
                    prop_assert!(dir != Direction::Forward);
                }
            }
        }
        let deduped = dedup_chains(chains.clone());
        prop_assert!(deduped.len() <= chains.len());
        if let Some(top) = deduped.first() {
            let best = chains.iter().map(|c| c.score).fold(f64::NEG_INFINITY, f64::max);
            prop_assert_eq!(top.score, best);
        }
    }

    #[test]
    fn dedup_rule(raw in prop::collection::vec((prop::collection::vec(0usize..5, 2..5), 0u8..4), 0..12)) {
        let input: Vec<ReasoningChain> = raw
            .iter()
            .map(|(nodes, s)| chain(nodes, *s as f64 / 4.0))
            .collect();
        let kept = dedup_chains(input.clone());
        let seqs: BTreeSet<_> = kept.iter().map(|c| c.nodes.clone()).collect();
        prop_assert_eq!(seqs.len(), kept.len());
        let sub = |a: &[NodeId], b: &[NodeId]| a.len() < b.len() && b.windows(a.len()).any(|w| w == a);
        for a in &kept {
            for b in &kept {
                prop_assert!(!(b.score >= a.score && sub(&a.nodes, &b.nodes)));
            }
        }
        // Every input sequence is either kept or dominated by an input chain.
        for c in &input {
            let dominated = input.iter().any(|o| o.score >= c.score && sub(&c.nodes, &o.nodes));
            prop_assert!(seqs.contains(&c.nodes) || dominated);
        }
        for w in kept.windows(2) {
            prop_assert!(w[0].score >= w[1].score);
        }
        prop_assert_eq!(dedup_chains(kept.clone()), kept);
    }
}

#[test]
fn beam_matches_dfs_on_random_dags() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut checked = 0;
    while checked < 50 {
        let n = rng.random_range(2..=25);
        let edges = random_dag(&mut rng, n, 4);
        let g = graph(n, &edges);
        let sims: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let starts = ids(&[0]);
        let oracle = dfs_paths(&g, &starts, Direction::Forward, n);
        if oracle.paths.is_empty() || oracle.paths.len() > 2000 {
            continue;
        }
        checked += 1;
        let wide = cfg(oracle.paths.len(), n, Direction::Forward);
        let (chains, _) = beam_search_with_sims(&g, &starts, &sims, &wide, None).unwrap();
        let got: BTreeSet<_> = chains.iter().map(|c| c.nodes.clone()).collect();
        assert_eq!(got.len(), chains.len());
        assert_eq!(got, oracle.paths);
        let best = oracle
            .paths
            .iter()
            .map(|p| batch_score(p, &sims))
            .fold(f64::NEG_INFINITY, f64::max);
        let wide_top = dedup_chains(chains)[0].score;
        assert!((wide_top - best).abs() < 1e-12);

        let (narrow, _) =
            beam_search_with_sims(&g, &starts, &sims, &cfg(2, n, Direction::Forward), None)
                .unwrap();
        for c in &narrow {
            assert!(oracle.paths.contains(&c.nodes));
        }
        assert!(dedup_chains(narrow)[0].score <= best + 1e-12);
    }
}

#[test]
fn beam_matches_dfs_bidirectional() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..30 {
        let n = rng.random_range(2..=9);
        let edges = random_dag(&mut rng, n, 2);
        let g = graph(n, &edges);
        let sims: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let starts = ids(&[n / 2]);
        let oracle = dfs_paths(&g, &starts, Direction::Bidirectional, 3);
        let wide = cfg(oracle.paths.len().max(1) * n, 3, Direction::Bidirectional);
        let (chains, _) = beam_search_with_sims(&g, &starts, &sims, &wide, None).unwrap();
        let got: BTreeSet<_> = chains.iter().map(|c| c.nodes.clone()).collect();
        assert_eq!(got, oracle.paths);
    }
}

#[test]
fn expansion_is_linear_in_depth() {
    let (n, edges) = fan_out_tree(4, 8);
    let g = graph(n, &edges);
    let sims = vec![0.5; n];
    let expanded = |beam, d| {
        beam_search_with_sims(
            &g,
            &ids(&[0]),
            &sims,
            &cfg(beam, d, Direction::Forward),
            None,
        )
        .unwrap()
        .1
        .nodes_expanded
    };
    let (tn, tedges) = fan_out_tree(4, 6);
    let exhaustive = dfs_paths(&graph(tn, &tedges), &ids(&[0]), Direction::Forward, 6).expanded;
    assert_eq!(exhaustive, (4usize.pow(7) - 1) / 3);
    assert!(expanded(3, 6) * 10 <= exhaustive);
    for d in [2, 4, 6, 8] {
        assert_eq!(expanded(3, d), 1 + 3 * (d - 1));
    }
}
