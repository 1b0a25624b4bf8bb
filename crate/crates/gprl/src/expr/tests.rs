use super::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn t(src: &str) -> ExpressionTree {
    parse_tree(src).unwrap()
}

#[test]
fn eval_velocity_policy() {
    // pi(rho, rho_dot) = rho_dot with the map rho -> x0, rho_dot -> x1
    let tree = t("x1");
    assert_eq!(tree.eval(&[-0.5, 0.03]).unwrap(), 0.03);
}

#[test]
fn eval_identity_addition() {
    let tree = t("x0 + 0");
    assert_eq!(tree.eval(&[7.25]).unwrap(), 7.25);
}

#[test]
fn protected_division_returns_one() {
    let tree = t("x0 / x1");
    assert_eq!(tree.eval(&[2.0, 0.0]).unwrap(), 1.0);
    assert_eq!(tree.eval(&[2.0, 0.5e-8]).unwrap(), 1.0);
    assert_eq!(tree.eval(&[2.0, 4.0]).unwrap(), 0.5);
}

#[test]
fn eval_rejects_missing_variable() {
    let tree = t("x3");
    assert!(matches!(tree.eval(&[1.0, 2.0]), Err(Error::Shape(_))));
}

#[test]
fn complexity_examples() {
    let w = ComplexityWeights::default();
    assert_eq!(t("x1").complexity(&w), 1);
    assert_eq!(t("tanh(x0)").complexity(&w), 5);
    // if(5) + gt(1) + x0(1) + x1(1) + 2.0(1) + x2(1)
    assert_eq!(t("if(x0 > x1, 2.0, x2)").complexity(&w), 10);
    assert_eq!(t("if(x0 > 0.5, 1.0, -1.0)").complexity(&w), 10);
}

#[test]
fn policy_complexity_sums_over_trees() {
    let w = ComplexityWeights::default();
    let p = Policy::new(vec![t("x1"), t("tanh(x0)")], vec![-1.0; 2], vec![1.0; 2]);
    assert_eq!(p.complexity(&w), 6);
}

#[test]
fn auto_cancel_folds_constant_sum() {
    let folded = t("2 + 3").auto_cancel();
    assert_eq!(folded.len(), 1);
    assert_eq!(folded.gene_at(folded.root()), Gene::Const(5.0));
}

#[test]
fn auto_cancel_noop_on_variable() {
    let tree = t("x0");
    assert_eq!(tree.auto_cancel(), tree);
}

#[test]
fn auto_cancel_folds_tanh_of_constant() {
    let folded = t("tanh(1.0) * x0").auto_cancel();
    let direct = t("tanh(1.0) * x0");
    assert_eq!(folded.len(), 3);
    for s in [-2.0, 0.0, 3.5] {
        assert_eq!(folded.eval(&[s]).unwrap(), direct.eval(&[s]).unwrap());
    }
    assert_eq!(folded.eval(&[1.0]).unwrap(), 1.0f64.tanh());
}

#[test]
fn auto_cancel_selects_constant_if_branch() {
    let folded = t("if(1.0 > 2.0, x0, x1)").auto_cancel();
    assert_eq!(folded, t("x1"));
}

#[test]
fn grow_depth_zero_is_terminal() {
    let mut cfg = GrowConfig::new(2);
    cfg.d_min = 0;
    cfg.d_max = 0;
    let w = ComplexityWeights::default();
    for seed in 0..50 {
        let tree = grow(&mut rng(seed), &cfg, &w);
        assert_eq!(tree.len(), 1);
        assert!(matches!(
            tree.gene_at(tree.root()),
            Gene::Var(_) | Gene::Const(_)
        ));
    }
}

#[test]
fn grow_attains_drawn_depth() {
    let mut cfg = GrowConfig::new(2);
    cfg.d_min = 3;
    cfg.d_max = 3;
    let w = ComplexityWeights::default();
    for seed in 0..100 {
        let tree = grow(&mut rng(seed), &cfg, &w);
        assert_eq!(tree.depth(), 3, "seed {seed}: {}", format_tree(&tree));
    }
}

#[test]
fn grow_deep_slot_is_uniform_over_children() {
    // Over many grown trees of fixed depth 2, the root child carrying the
    // maximal subtree depth should be uniform over the root's child slots.
    // Chi-square test against uniform for binary roots.
    let mut cfg = GrowConfig::new(2);
    cfg.d_min = 2;
    cfg.d_max = 2;
    let w = ComplexityWeights::default();
    let mut counts = [0usize; 2];
    let mut r = rng(7);
    let mut n = 0;
    while n < 10_000 {
        let tree = grow(&mut r, &cfg, &w);
        let kids = tree.children_of(tree.root());
        if kids.len() != 2 {
            continue;
        }
        let d0 = tree.depth_of(kids[0]);
        let d1 = tree.depth_of(kids[1]);
        // Exactly one child was forced to depth d-1 = 1; when both reach it
        // by chance the position is ambiguous, so only count clear cases.
        if d0 == 1 && d1 < 1 {
            counts[0] += 1;
        } else if d1 == 1 && d0 < 1 {
            counts[1] += 1;
        } else {
            continue;
        }
        n += 1;
    }
    let total = (counts[0] + counts[1]) as f64;
    let expected = total / 2.0;
    let chi2: f64 = counts
        .iter()
        .map(|&c| (c as f64 - expected).powi(2) / expected)
        .sum();
    // 1 dof, alpha = 0.001 -> 10.83
    assert!(chi2 < 10.83, "chi2 = {chi2}, counts = {counts:?}");
}

#[test]
fn grow_respects_caps() {
    let cfg = GrowConfig::new(4);
    let w = ComplexityWeights::default();
    let mut r = rng(11);
    for _ in 0..2000 {
        let tree = grow(&mut r, &cfg, &w);
        assert!(tree.depth() <= MAX_DEPTH);
        assert!(tree.len() <= MAX_GENES);
        assert!(tree.complexity(&w) <= MAX_COMPLEXITY);
    }
}

#[test]
fn format_parse_round_trip_simple() {
    let tree = t("x1");
    assert_eq!(format_tree(&tree), "x1");
    assert_eq!(parse_tree(&format_tree(&tree)).unwrap(), tree);
}

#[test]
fn parse_rejects_bool_arithmetic() {
    assert!(matches!(
        parse_tree("x0 and 1.0"),
        Err(Error::Type { .. })
    ));
    assert!(matches!(parse_tree("x0 + (x1 > 0)"), Err(Error::Type { .. })));
    assert!(matches!(parse_tree("x0 > true"), Err(Error::Type { .. })));
}

#[test]
fn parse_rejects_bool_root() {
    assert!(matches!(parse_tree("x0 > 1.0"), Err(Error::Type { .. })));
}

#[test]
fn parse_reports_syntax_error_position() {
    match parse_tree("x0 + ") {
        Err(Error::Parse { pos, .. }) => assert_eq!(pos, 5),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn constants_round_trip_in_full_precision() {
    let v = 0.123456789012345678;
    let printed = text::format_const(v);
    assert_eq!(printed.parse::<f64>().unwrap(), v);
    // at least 9 significant digits
    let digits = printed
        .chars()
        .take_while(|c| *c != 'e')
        .filter(|c| c.is_ascii_digit())
        .count();
    assert!(digits >= 9, "{printed}");
}

#[test]
fn policy_text_round_trip() {
    let p = Policy::new(
        vec![t("if(x0 > 0.5, 1.0, -1.0)"), t("tanh(x1) * 3.25")],
        vec![-1.0, -10.0],
        vec![1.0, 10.0],
    );
    let txt = format_policy(&p, &["rho", "rho_dot"]);
    let back = parse_policy_text(&txt, p.action_low.clone(), p.action_high.clone()).unwrap();
    assert_eq!(back.trees, p.trees);
}

#[test]
fn act_clamps_outputs_and_nan() {
    let p = Policy::new(vec![t("x0 * 100.0")], vec![-1.0], vec![1.0]);
    let mut out = [0.0];
    p.act(&[5.0], &mut out);
    assert_eq!(out[0], 1.0);
    p.act(&[-5.0], &mut out);
    assert_eq!(out[0], -1.0);
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    fn arb_tree(n_vars: usize) -> impl Strategy<Value = ExpressionTree> {
        (0u64..1_000_000).prop_map(move |seed| {
            let cfg = GrowConfig::new(n_vars);
            grow(&mut rng(seed), &cfg, &ComplexityWeights::default())
        })
    }

    proptest! {
        #[test]
        fn eval_is_total_and_finite(tree in arb_tree(3), s in prop::array::uniform3(-10.0f64..10.0)) {
            let v = tree.eval(&s).unwrap();
            prop_assert!(v.is_finite(), "{} -> {v}", format_tree(&tree));
        }

        #[test]
        fn round_trip_evaluates_identically(tree in arb_tree(3), s in prop::array::uniform3(-10.0f64..10.0)) {
            let back = parse_tree(&format_tree(&tree)).unwrap();
            prop_assert_eq!(back.eval(&s).unwrap(), tree.eval(&s).unwrap());
        }

        #[test]
        fn cancel_preserves_semantics_and_complexity(tree in arb_tree(3), s in prop::array::uniform3(-10.0f64..10.0)) {
            let w = ComplexityWeights::default();
            let canceled = tree.auto_cancel();
            prop_assert!((canceled.eval(&s).unwrap() - tree.eval(&s).unwrap()).abs() <= 1e-9);
            prop_assert!(canceled.complexity(&w) <= tree.complexity(&w));
        }

        #[test]
        fn cancel_is_idempotent(tree in arb_tree(3)) {
            let once = tree.auto_cancel();
            prop_assert_eq!(once.auto_cancel(), once);
        }

        #[test]
        fn complexity_is_additive_and_positive(tree in arb_tree(3)) {
            let w = ComplexityWeights::default();
            let total = tree.complexity(&w);
            prop_assert!(total >= 1);
            let root = tree.root();
            let children_sum: u32 = tree
                .children_of(root)
                .iter()
                .map(|&c| tree.subtree(c).complexity(&w))
                .sum();
            prop_assert_eq!(total, w.weight_of(tree.gene_at(root)) + children_sum);
        }
    }
}

#[test]
fn type_soundness_over_many_grown_trees() {
    // Every node's children must match its signature exactly.
    let cfg = GrowConfig::new(3);
    let w = ComplexityWeights::default();
    let mut r = rng(42);
    for _ in 0..100_000 {
        let tree = grow(&mut r, &cfg, &w);
        for id in tree.node_ids() {
            let gene = tree.gene_at(id);
            let kids = tree.children_of(id);
            assert_eq!(kids.len(), gene.arity());
            for (i, &c) in kids.iter().enumerate() {
                assert_eq!(tree.gene_at(c).ty(), gene.child_ty(i));
            }
        }
    }
}
