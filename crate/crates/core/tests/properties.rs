//! Property tests for the corpus, graph, encoder, agreement, hesitancy and
//! boosting invariants.

mod common;

use std::collections::{BTreeSet, HashMap};

use proptest::prelude::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::ref_encode;
use stance_core::corpus::{clean_text, filter_vaccine_related, select_annotation_set, Corpus, Post, StanceLabel};
use stance_core::encoder::{social_encode, AggregatorKind, EncoderParams, Shells};
use stance_core::eval::{average_observed_agreement, fleiss_kappa, krippendorff_alpha, RatingMatrix};
use stance_core::gbdt::{fit, GbdtConfig};
use stance_core::graph::{
    build_interaction_graph, prune_edges, InteractionKind, InteractionRecord, SocialGraph, WeightedGraph,
};
use stance_core::hesitancy::{
    classify_change, hesitancy_score, score_from_counts, select_popular, ChangeClass, PropagationIndex, Theme, Window,
};

/// Originals and retweets by `users` authors at distinct timestamps, with
/// random retweet counts.
fn random_corpus(rng: &mut ChaCha8Rng, users: usize, posts: usize) -> Corpus {
    let words = [
        "vaccine",
        "covid",
        "jab",
        "news",
        "today",
        "Pfizer",
        "@someone",
        "https://x.co/1",
        "RT",
    ];
    let mut stamps: Vec<i64> = (0..posts as i64).map(|i| i * 1_000 / posts as i64).collect();
    stamps.shuffle(rng);
    let mut all: Vec<Post> = Vec::new();
    for (i, ts) in stamps.into_iter().enumerate() {
        let author = format!("u{}", rng.random_range(0..users));
        let originals: Vec<usize> = (0..all.len()).filter(|&j| all[j].source_post_id.is_none()).collect();
        let post = if !originals.is_empty() && rng.random_bool(0.4) {
            let src = all[*originals.choose(rng).unwrap()].clone();
            Post::retweet_of(&format!("p{i}"), &author, ts, &src)
        } else {
            let text: Vec<&str> = (0..rng.random_range(1..6))
                .map(|_| *words.choose(rng).unwrap())
                .collect();
            Post::original(&format!("p{i}"), &author, ts, &text.join(" ")).with_retweet_count(rng.random_range(0..5))
        };
        let label = StanceLabel::from_index(rng.random_range(0..4)).unwrap();
        all.push(post.with_label(label));
    }
    Corpus::new(all).unwrap()
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize, p: f64) -> (Vec<String>, Vec<(String, String)>) {
    let names: Vec<String> = (0..n).map(|i| format!("u{i}")).collect();
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(p) {
                edges.push((names[a].clone(), names[b].clone()));
            }
        }
    }
    (names, edges)
}

fn component_sizes(g: &WeightedGraph) -> Vec<usize> {
    let nodes: Vec<&str> = g.nodes().iter().map(String::as_str).collect();
    let edges: Vec<(&str, &str)> = g.edges().map(|(u, v, _)| (u, v)).collect();
    let mut sizes: Vec<usize> = SocialGraph::from_edges(&nodes, &edges)
        .unwrap()
        .components()
        .iter()
        .map(Vec::len)
        .collect();
    sizes.sort_unstable();
    sizes
}

fn max_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn keyword_filter_is_idempotent(seed in any::<u64>()) {
        let corpus = random_corpus(&mut ChaCha8Rng::seed_from_u64(seed), 5, 30);
        let once = filter_vaccine_related(&corpus, &["VACCINE", "jab"]);
        let twice = filter_vaccine_related(&once, &["VACCINE", "jab"]);
        prop_assert_eq!(once.posts(), twice.posts());
    }

    #[test]
    fn clean_text_is_idempotent_and_never_longer(text in "(RT |@[a-z]{1,4} |https?://[a-z.]{1,6} |[a-zA-Z#]{1,6} | ){0,12}") {
        let once = clean_text(&text);
        prop_assert_eq!(clean_text(&once), once.clone());
        prop_assert!(once.chars().count() <= text.chars().count());
    }

    #[test]
    fn annotation_set_covers_every_author(seed in any::<u64>()) {
        let corpus = random_corpus(&mut ChaCha8Rng::seed_from_u64(seed), 6, 25);
        let selected = select_annotation_set(&corpus);
        let chosen: BTreeSet<&str> = selected.iter().map(|p| p.id.as_str()).collect();
        let mut covered: BTreeSet<&str> = BTreeSet::new();
        for p in corpus.posts() {
            let root = p.source_post_id.as_deref().unwrap_or(&p.id);
            if chosen.contains(root) {
                covered.insert(&p.author_id);
            }
        }
        for author in corpus.authors() {
            prop_assert!(covered.contains(author), "{} uncovered", author);
        }
    }

    #[test]
    fn recent_posts_are_strictly_earlier_and_decreasing(seed in any::<u64>(), t in 0i64..1_000, lambda in 0usize..6) {
        let corpus = random_corpus(&mut ChaCha8Rng::seed_from_u64(seed), 3, 40);
        for author in corpus.authors() {
            let recent = corpus.recent_posts(author, t, lambda);
            prop_assert!(recent.len() <= lambda);
            prop_assert!(recent.iter().all(|p| p.timestamp < t));
            prop_assert!(recent.windows(2).all(|w| w[0].timestamp > w[1].timestamp));
        }
    }

    #[test]
    fn pruning_never_grows_components(seed in any::<u64>(), min_weight in 1u32..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records: Vec<InteractionRecord> = (0..40)
            .map(|i| {
                let a = format!("u{}", rng.random_range(0..12));
                let b = format!("u{}", rng.random_range(0..12));
                InteractionRecord::new(&a, &b, InteractionKind::Retweet, i)
            })
            .collect();
        let g = build_interaction_graph(&records);
        let before = component_sizes(&g);
        let after = component_sizes(&prune_edges(&g, min_weight));
        prop_assert!(after.iter().max() <= before.iter().max());
        prop_assert!(after.len() >= before.len());
    }

    #[test]
    fn interaction_graph_ignores_record_order(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut records: Vec<InteractionRecord> = (0..30)
            .map(|i| {
                let a = format!("u{}", rng.random_range(0..8));
                let b = format!("u{}", rng.random_range(0..8));
                InteractionRecord::new(&a, &b, InteractionKind::Mention, i)
            })
            .collect();
        let g = build_interaction_graph(&records);
        records.shuffle(&mut rng);
        let h = build_interaction_graph(&records);
        let edges = |g: &WeightedGraph| g.edges().map(|(u, v, w)| (u.to_string(), v.to_string(), w)).collect::<Vec<_>>();
        prop_assert_eq!(g.nodes(), h.nodes());
        prop_assert_eq!(edges(&g), edges(&h));
    }

    #[test]
    fn ball_beyond_diameter_is_everything(seed in any::<u64>(), n in 1usize..20) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (names, mut edges) = random_graph(&mut rng, n, 0.2);
        // a path keeps it connected
        for i in 1..n {
            edges.push((names[i - 1].clone(), names[i].clone()));
        }
        let g = SocialGraph::from_edges(&names, &edges).unwrap();
        for v in 0..n {
            prop_assert_eq!(g.khop_neighborhood(v, n).unwrap().len(), n);
        }
    }

    #[test]
    fn social_encoding_commutes_with_relabeling(seed in any::<u64>(), n in 1usize..=8, k in 1usize..=3, gat in any::<bool>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let kind = if gat { AggregatorKind::Gat } else { AggregatorKind::Gcn };
        let (names, edges) = random_graph(&mut rng, n, 0.4);
        let g = SocialGraph::from_edges(&names, &edges).unwrap();
        let params = EncoderParams::init(3, 4, k, &mut rng);
        let z: Vec<Vec<f64>> = (0..n).map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let out = social_encode(&g, &z, &params, kind).unwrap();

        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut rng);
        let renamed = |s: &str| format!("v{}", perm[g.node(s).unwrap()]);
        let names2: Vec<String> = names.iter().map(|s| renamed(s)).collect();
        let edges2: Vec<(String, String)> = edges.iter().map(|(a, b)| (renamed(a), renamed(b))).collect();
        let g2 = SocialGraph::from_edges(&names2, &edges2).unwrap();
        let mut z2 = vec![Vec::new(); n];
        for i in 0..n {
            z2[g2.node(&format!("v{}", perm[i])).unwrap()] = z[i].clone();
        }
        let out2 = social_encode(&g2, &z2, &params, kind).unwrap();
        for i in 0..n {
            let j = g2.node(&format!("v{}", perm[i])).unwrap();
            prop_assert!(max_gap(&out[i], &out2[j]) < 1e-12);
        }

        // and agrees with the loop-based reference
        let shells = Shells::from_graph(&g, k);
        let shell_of = |i: usize, o: usize| shells.shell(i, o).to_vec();
        let reference = ref_encode(n, &shell_of, &z, &params, kind, &mut Vec::new());
        for i in 0..n {
            prop_assert!(max_gap(&out[i], &reference[i]) < 1e-12);
            prop_assert_eq!(out[i].len(), 4 * (1 + k * k));
        }
    }

    #[test]
    fn agreement_bounds_and_permutations(seed in any::<u64>(), items in 2usize..12, raters in 2usize..6, cats in 2usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let labels: Vec<Vec<usize>> = (0..items)
            .map(|_| (0..raters).map(|_| rng.random_range(0..cats)).collect())
            .collect();
        let counts = |labels: &[Vec<usize>]| -> RatingMatrix {
            RatingMatrix::new(
                labels
                    .iter()
                    .map(|item| (0..cats).map(|c| item.iter().filter(|&&x| x == c).count() as u32).collect())
                    .collect(),
            )
            .unwrap()
        };
        let units = |labels: &[Vec<usize>]| -> Vec<Vec<Option<usize>>> {
            labels.iter().map(|item| item.iter().copied().map(Some).collect()).collect()
        };
        let m = counts(&labels);
        let aoa = average_observed_agreement(&m).unwrap();
        prop_assert!((0.0..=1.0).contains(&aoa));
        let kappa = fleiss_kappa(&m).ok();
        let alpha = krippendorff_alpha(&units(&labels)).ok();
        if let Some(k) = kappa { prop_assert!(k <= 1.0 + 1e-12); }
        if let Some(a) = alpha { prop_assert!(a <= 1.0 + 1e-12); }

        let mut shuffled = labels.clone();
        shuffled.shuffle(&mut rng);
        for item in &mut shuffled {
            item.shuffle(&mut rng);
        }
        let m2 = counts(&shuffled);
        prop_assert!((average_observed_agreement(&m2).unwrap() - aoa).abs() < 1e-12);
        match (kappa, fleiss_kappa(&m2).ok()) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
            (a, b) => prop_assert_eq!(a.is_some(), b.is_some()),
        }
        match (alpha, krippendorff_alpha(&units(&shuffled)).ok()) {
            (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-12),
            (a, b) => prop_assert_eq!(a.is_some(), b.is_some()),
        }
    }

    #[test]
    fn hesitancy_score_bounds_and_symmetry(pos in 0usize..500, neg in 0usize..500) {
        prop_assume!(pos + neg > 0);
        let s = score_from_counts(pos, neg).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert_eq!(score_from_counts(neg, pos).unwrap(), -s);
    }

    #[test]
    fn window_score_is_bounded(seed in any::<u64>()) {
        let corpus = random_corpus(&mut ChaCha8Rng::seed_from_u64(seed), 2, 30);
        let window = Window::new(0, 1_000).unwrap();
        if let Ok(r) = hesitancy_score("u0", window, corpus.posts()) {
            prop_assert!((-1.0..=1.0).contains(&r.score));
        }
    }

    #[test]
    fn no_change_is_unchanged(x in -1.0f64..=1.0, tau in 0.0f64..0.5) {
        prop_assert_eq!(classify_change(x, x, tau.max(1e-9)), ChangeClass::Unchanged);
    }

    #[test]
    fn popular_posts_are_a_sorted_prefix(seed in any::<u64>(), q in 0.01f64..=1.0) {
        let corpus = random_corpus(&mut ChaCha8Rng::seed_from_u64(seed), 4, 30);
        let originals: Vec<&Post> = corpus.posts().iter().filter(|p| p.source_post_id.is_none()).collect();
        let all = select_popular(corpus.posts(), 1.0).unwrap();
        let top = select_popular(corpus.posts(), q).unwrap();
        prop_assert_eq!(top.len(), (q * originals.len() as f64).ceil() as usize);
        prop_assert_eq!(&all[..top.len()], &top[..]);
        prop_assert!(all.windows(2).all(|w| (w[0].retweet_count, &w[1].id) >= (w[1].retweet_count, &w[0].id)));
    }

    #[test]
    fn theme_vectors_grow_with_the_period(seed in any::<u64>(), a in 0i64..500, b in 500i64..1_000, pad in 0i64..300) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let corpus = random_corpus(&mut rng, 6, 40);
        let mut names: Vec<String> = corpus.authors().map(str::to_string).collect();
        names.sort();
        let (_, edges) = random_graph(&mut rng, names.len(), 0.5);
        let edges: Vec<(String, String)> = edges
            .iter()
            .map(|(x, y)| {
                let idx = |s: &str| s[1..].parse::<usize>().unwrap();
                (names[idx(x)].clone(), names[idx(y)].clone())
            })
            .collect();
        let graph = SocialGraph::from_edges(&names, &edges).unwrap();
        let popular = select_popular(corpus.posts(), 0.5).unwrap();
        let themes: HashMap<String, Theme> = popular
            .iter()
            .map(|p| (p.id.clone(), Theme::ALL[rng.random_range(0..Theme::ALL.len())]))
            .collect();
        let index = PropagationIndex::new(&corpus, &popular, &themes);
        let narrow = Window::new(a, b).unwrap();
        let wide = Window::new(a - pad, b + pad).unwrap();
        for user in &names {
            let small = index.perceived_theme_vector(user, &graph, narrow).unwrap();
            let large = index.perceived_theme_vector(user, &graph, wide).unwrap();
            prop_assert_eq!(small.len(), 11);
            prop_assert!(small.iter().zip(&large).all(|(s, l)| s <= l));
        }
    }

    #[test]
    fn boosting_invariants(seed in any::<u64>(), n in 6usize..40, features in 1usize..4, depth in 1usize..4) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..features).map(|_| rng.random_range(-1.0..1.0)).collect()).collect();
        let mut y: Vec<usize> = (0..n).map(|_| rng.random_range(0..3)).collect();
        y[0] = 0;
        y[1] = 1;
        let config = GbdtConfig { rounds: 8, max_depth: depth, shrinkage: 0.1 };
        let model = fit(&x, &y, 3, &config).unwrap();

        prop_assert!(model.log_loss(&x, &y).unwrap() < model.truncated(0).log_loss(&x, &y).unwrap());
        for r in 0..model.rounds() {
            for c in 0..3 {
                let tree = model.tree(r, c);
                prop_assert!(tree.depth() <= depth);
                for (f, t) in tree.splits() {
                    prop_assert!(f < features);
                    prop_assert!(x.iter().all(|row| row[f] != t));
                    prop_assert!(x.iter().any(|row| row[f] < t) && x.iter().any(|row| row[f] > t));
                }
            }
        }
        prop_assert_eq!(fit(&x, &y, 3, &config).unwrap().to_text(), model.to_text());

        let mut order: Vec<usize> = (0..features).collect();
        order.shuffle(&mut rng);
        let permuted: Vec<Vec<f64>> = x.iter().map(|row| order.iter().map(|&f| row[f]).collect()).collect();
        let other = fit(&permuted, &y, 3, &config).unwrap();
        // Two features can split a node's samples identically; the lowest-index
        // tie-break then picks different columns, which agree on every observed
        // row but not necessarily between observed values.
        for (row, moved) in x.iter().zip(&permuted) {
            prop_assert_eq!(model.predict_proba(row).unwrap(), other.predict_proba(moved).unwrap());
        }
        for _ in 0..20 {
            let probe: Vec<f64> = (0..features).map(|_| rng.random_range(-1.2..1.2)).collect();
            let p = model.predict_proba(&probe).unwrap();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let best = model.predict(&probe).unwrap();
            prop_assert!(p.iter().all(|&v| v <= p[best]));
        }
    }
}
