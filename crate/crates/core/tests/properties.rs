use std::collections::{BTreeMap, BTreeSet};

use ndarray::Array2;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use richtx::attnmap::{
    aggregate_self_attention, build_token_maps, import_external_masks, resample_maps, spectral_segment,
    AttentionRecord, CaptureTag, SegmentSet, SelfAttentionMap, SimilarityMatrix,
};
use richtx::regionfuse::{blend_plain, color_gradient, reweight_attention, texture_gradient, ConvExtractor};
use richtx::richdoc::{
    extract_spans, nearest_color_name, parse_document, AttributeSet, ColorPalette, Rgb, RichTextDocument, TextElement,
    WordTokenizer,
};
use richtx::sampler::NoiseSchedule;
use richtx::tensor::{Map2, Tensor};

fn word() -> impl Strategy<Value = String> {
    "[a-z]{1,8}"
}

fn attributes() -> impl Strategy<Value = AttributeSet> {
    (
        proptest::option::of("[A-Za-z][A-Za-z -]{0,12}"),
        proptest::option::of(any::<[u8; 3]>()),
        prop_oneof![Just(1.0), 0.1f64..5.0],
        proptest::option::of("[a-z][a-z ]{0,20}"),
    )
        .prop_map(|(style, color, size_weight, footnote)| AttributeSet {
            style,
            color: color.map(Rgb),
            size_weight,
            footnote,
            ..AttributeSet::default()
        })
}

/// Elements of whole words, each after the first starting with a space so
/// that no token straddles two elements.
fn document() -> impl Strategy<Value = RichTextDocument> {
    proptest::collection::vec((proptest::collection::vec(word(), 1..4), attributes()), 1..6).prop_map(|els| {
        let elements = els
            .into_iter()
            .enumerate()
            .map(|(i, (words, attrs))| {
                let text = words.join(" ");
                let text = if i == 0 { text } else { format!(" {text}") };
                TextElement::with(text, attrs)
            })
            .collect();
        RichTextDocument::new(elements)
    })
}

fn random_map(rng: &mut ChaCha8Rng, grid: (usize, usize)) -> Map2 {
    Map2::from_shape_fn(grid, |_| rng.gen())
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: (usize, usize, usize)) -> Tensor {
    Tensor::from_shape_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

fn stochastic(rng: &mut ChaCha8Rng, n: usize) -> Array2<f32> {
    let mut m = Array2::<f32>::from_shape_fn((n, n), |_| rng.gen::<f32>() + 1e-3);
    for mut row in m.outer_iter_mut() {
        let s: f32 = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    m
}

fn tag(t_norm: f64) -> CaptureTag {
    CaptureTag {
        layer: 0,
        head: 0,
        timestep: 0,
        t_norm,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn canonical_json_round_trips(doc in document()) {
        let text = doc.to_canonical_json();
        let back = parse_document(text.as_bytes()).unwrap();
        prop_assert_eq!(&back, &doc);
        prop_assert_eq!(back.to_canonical_json(), text);
    }

    #[test]
    fn spans_partition_the_tokens(doc in document()) {
        let ex = extract_spans(&doc, &WordTokenizer).unwrap();
        let mut seen = vec![0usize; ex.tokens.len()];
        for s in &ex.spans {
            for t in s.token_indices() {
                seen[t] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
        prop_assert_eq!(ex.formatted().len(), doc.formatted_count());
        for s in ex.formatted() {
            prop_assert_eq!(s.token_ranges.len(), 1);
        }
    }

    #[test]
    fn nearest_color_is_a_minimum(rgb in any::<[u8; 3]>()) {
        let palette = ColorPalette::common();
        let rgb = Rgb(rgb);
        let name = nearest_color_name(rgb, &palette).unwrap();
        let best = palette.get(name).unwrap().distance_sq(rgb);
        for (other, c) in &palette.entries {
            let d = c.distance_sq(rgb);
            prop_assert!(best < d || (best == d && name <= other.as_str()));
        }
    }

    #[test]
    fn reweighting_is_monotone_in_own_weight(
        scores in proptest::collection::vec(-6.0f64..6.0, 2..10),
        seed in any::<u64>(),
        j in any::<prop::sample::Index>(),
        bump in 1.01f64..4.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights: Vec<f64> = scores.iter().map(|_| rng.gen_range(0.1..3.0)).collect();
        let j = j.index(scores.len());
        let p = reweight_attention(&scores, &weights).unwrap();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        let mut more = weights.clone();
        more[j] *= bump;
        let q = reweight_attention(&scores, &more).unwrap();
        prop_assert!(q[j] > p[j]);
        for k in (0..scores.len()).filter(|&k| k != j) {
            prop_assert!(q[k] < p[k]);
        }
    }

    #[test]
    fn blend_stays_between_inputs(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = random_tensor(&mut rng, (3, 5, 4));
        let plain = random_tensor(&mut rng, (3, 5, 4));
        let m = random_map(&mut rng, (5, 4));
        let out = blend_plain(&x, &plain, &m).unwrap();
        for ((c, y, xx), v) in out.indexed_iter() {
            let (a, b) = (x[[c, y, xx]], plain[[c, y, xx]]);
            prop_assert!(*v >= a.min(b) - 1e-12 && *v <= a.max(b) + 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn token_maps_sum_to_one(seed in any::<u64>(), h in 2usize..10, w in 2usize..10) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let grid = (h, w);
        let k = rng.gen_range(1..=6usize.min(h * w));
        let labels: Vec<usize> = (0..h * w).map(|p| if p < k { p } else { rng.gen_range(0..k) }).collect();
        let segments = SegmentSet::from_labels(grid, &labels).unwrap();
        let spans = rng.gen_range(1..5usize);
        let mut assignment: BTreeMap<usize, BTreeSet<usize>> = BTreeMap::new();
        for seg in 0..segments.k {
            // every segment has an owner; some are shared
            assignment.entry(rng.gen_range(0..spans)).or_default().insert(seg);
            if rng.gen_bool(0.3) {
                assignment.entry(rng.gen_range(0..spans)).or_default().insert(seg);
            }
        }
        let maps = build_token_maps(&assignment, &segments, 0..spans).unwrap();
        prop_assert!(maps.partition_error() <= 1e-6);
        let up = resample_maps(&maps, (h * 3 + 1, w * 2)).unwrap();
        prop_assert!(up.partition_error() <= 1e-6);

        let masks: BTreeMap<usize, Map2> = (1..spans + 1).map(|id| (id, random_map(&mut rng, grid))).collect();
        let imported = import_external_masks(&masks, grid).unwrap();
        prop_assert!(imported.partition_error() <= 1e-6);
    }

    #[test]
    fn aggregation_is_symmetric_and_order_free(seed in any::<u64>(), n in 2usize..7, count in 1usize..6) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = n * n;
        let maps: Vec<SelfAttentionMap> = (0..count)
            .map(|i| SelfAttentionMap { tag: tag(if i == 0 { 0.5 } else { rng.gen() }), probs: stochastic(&mut rng, side) })
            .collect();
        let mut rec = AttentionRecord::new((n, n));
        rec.self_maps = maps.clone();
        let a = aggregate_self_attention(&rec).unwrap();
        let m = a.matrix();
        for i in 0..side {
            for j in 0..side {
                prop_assert_eq!(m[[i, j]], m[[j, i]]);
            }
        }
        rec.self_maps.reverse();
        let b = aggregate_self_attention(&rec).unwrap();
        let worst = (a.matrix() - b.matrix()).iter().fold(0.0f64, |acc, d| acc.max(d.abs()));
        prop_assert!(worst < 1e-12);
    }

    #[test]
    fn spectral_segmentation_is_deterministic(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = 6;
        let n = side * side;
        let raw = Array2::<f64>::from_shape_fn((n, n), |_| rng.gen());
        let sim = SimilarityMatrix::new((&raw + &raw.t()) / 2.0).unwrap();
        let a = spectral_segment(&sim, (side, side), 4, seed).unwrap();
        let b = spectral_segment(&sim, (side, side), 4, seed).unwrap();
        prop_assert_eq!(&a.labels, &b.labels);
        prop_assert_eq!(a.sizes().iter().sum::<usize>(), n);
    }
}

fn schedule(alpha_bar: f64) -> NoiseSchedule {
    NoiseSchedule::from_alphas_bar(vec![1.0, alpha_bar], 0.0).unwrap()
}

/// Central differences of `f` at `x`, one coordinate at a time.
fn numeric_gradient(x: &Tensor, f: impl Fn(&Tensor) -> f64) -> Tensor {
    let h = 1e-6;
    let mut g = Tensor::zeros(x.dim());
    for (idx, _) in x.indexed_iter() {
        let mut xp = x.clone();
        xp[idx] += h;
        let mut xm = x.clone();
        xm[idx] -= h;
        g[idx] = (f(&xp) - f(&xm)) / (2.0 * h);
    }
    g
}

fn relative_error(a: &Tensor, b: &Tensor) -> f64 {
    let diff = (a - b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    diff / scale.max(1e-8)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn color_gradient_matches_finite_differences(seed in any::<u64>(), ab in 0.05f64..0.99) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sched = schedule(ab);
        let x = random_tensor(&mut rng, (3, 4, 4));
        let eps = random_tensor(&mut rng, (3, 4, 4));
        let map = random_map(&mut rng, (4, 4));
        let target = [rng.gen(), rng.gen(), rng.gen()];
        let (_, g) = color_gradient(&x, &eps, &map, target, &sched, 1).unwrap();
        let fd = numeric_gradient(&x, |x| color_gradient(x, &eps, &map, target, &sched, 1).unwrap().0);
        prop_assert!(relative_error(&g, &fd) <= 1e-4, "{}", relative_error(&g, &fd));
    }

    #[test]
    fn texture_gradient_matches_finite_differences(seed in any::<u64>(), ab in 0.05f64..0.99) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sched = schedule(ab);
        let ext = ConvExtractor::reference();
        let x = random_tensor(&mut rng, (3, 4, 4));
        let eps = random_tensor(&mut rng, (3, 4, 4));
        let tex = random_tensor(&mut rng, (3, 4, 4));
        let map = random_map(&mut rng, (4, 4));
        let (_, g) = texture_gradient(&x, &eps, &map, &tex, &ext, &sched, 1).unwrap();
        let fd = numeric_gradient(&x, |x| texture_gradient(x, &eps, &map, &tex, &ext, &sched, 1).unwrap().0);
        prop_assert!(relative_error(&g, &fd) <= 1e-4, "{}", relative_error(&g, &fd));
    }

    #[test]
    fn small_color_step_lowers_the_loss(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sched = schedule(0.5);
        let x = random_tensor(&mut rng, (3, 4, 4));
        let eps = random_tensor(&mut rng, (3, 4, 4));
        let map = random_map(&mut rng, (4, 4));
        let target = [rng.gen(), rng.gen(), rng.gen()];
        let (before, g) = color_gradient(&x, &eps, &map, target, &sched, 1).unwrap();
        prop_assume!(before > 1e-6);
        let stepped = &x - &(&g * 1e-2);
        let (after, _) = color_gradient(&stepped, &eps, &map, target, &sched, 1).unwrap();
        prop_assert!(after < before);
    }
}

#[test]
fn discarded_captures_do_not_count() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut rec = AttentionRecord::new((2, 2));
    let kept = stochastic(&mut rng, 4);
    rec.self_maps.push(SelfAttentionMap {
        tag: tag(0.2),
        probs: kept.clone(),
    });
    let alone = aggregate_self_attention(&rec).unwrap();
    rec.self_maps.push(SelfAttentionMap {
        tag: tag(0.9),
        probs: stochastic(&mut rng, 4),
    });
    assert_eq!(aggregate_self_attention(&rec).unwrap(), alone);
}
